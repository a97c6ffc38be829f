//! Deterministic discrete-event loop.
//!
//! The engine owns the cluster reservation state, one [`VmRuntime`] per VM,
//! the pending queue and the central log. Events are processed in
//! `(time, seq)` order. Completion events carry the VM generation they were
//! computed for; a completion whose generation no longer matches is stale
//! and ignored.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{self, AllocError, AllocationOutcome, AllocationPlan, Cluster, PendingEntry, PendingQueue};
use crate::capacity;
use crate::log::{CentralLog, LogEntry, LogError, LogKind, Placement, ReplayState};
use crate::model::{
    self, ApId, Application, Cloudlet, CloudletId, CloudletState, InjectedEvent, NodeId, Scenario, SimClock,
    ValidationError, VmId,
};
use crate::report::ReportRow;
use crate::scheduler::{SchedulerError, VmRuntime};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ValidationError>),
    #[error("scenario error: {0}")]
    Allocation(#[from] AllocError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("node {0} is already down")]
    NodeAlreadyDown(NodeId),
    #[error("node {0} is already up")]
    NodeAlreadyUp(NodeId),
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("unknown access point {0}")]
    UnknownAccessPoint(String),
    #[error("clock went backwards: {now} < {last}")]
    ClockWentBackwards { now: f64, last: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Overrides the scenario's seed in the recorded result.
    pub seed: Option<u64>,
    /// On node failure, resume affected cloudlets from their last logged
    /// checkpoint instead of their exact progress.
    pub lose_progress_since_log: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    /// A device sends an application towards its current access point.
    AppSend {
        app: usize,
    },
    /// The application reaches the cloud; routed to `node`.
    AppSubmit {
        app: usize,
        node: NodeId,
    },
    /// A delayed cloudlet arrives at its VM.
    CloudletSubmit {
        cloudlet: usize,
    },
    CloudletFinish {
        vm: usize,
        cloudlet: CloudletId,
        generation: u64,
    },
    NodeFail {
        node: usize,
    },
    NodeRecover {
        node: usize,
    },
    ApHandoff {
        device: usize,
        ap: ApId,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    // Reversed so that `BinaryHeap` pops the smallest `(time, seq)` first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: f64, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
        seq
    }

    fn reinsert(&mut self, event: Event) {
        self.heap.push(event);
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Some work could not finish because capacity was lost.
    Degraded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudletOutcome {
    pub id: CloudletId,
    pub app_id: String,
    pub vm_id: VmId,
    pub length_mi: f64,
    pub remaining_mi: f64,
    pub finish_time_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppOutcome {
    pub id: String,
    pub requirement_mips: f64,
    pub allocated_at_s: Option<f64>,
    pub finish_time_s: Option<f64>,
    pub spilled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: String,
    pub seed: u64,
    pub status: RunStatus,
    pub makespan_ms: f64,
    pub metrics: ReportRow,
    /// MI executed, integrated from rates over time.
    pub executed_mi: f64,
    pub total_length_mi: f64,
    pub completions: usize,
    pub stale_events_skipped: usize,
    pub events_processed: usize,
    pub apps: Vec<AppOutcome>,
    pub cloudlets: Vec<CloudletOutcome>,
    pub log: CentralLog,
}

impl RunResult {
    pub fn unfinished(&self) -> impl Iterator<Item = &CloudletOutcome> {
        self.cloudlets.iter().filter(|c| c.finish_time_s.is_none())
    }
}

#[derive(Clone, Debug)]
struct CloudletRecord {
    app: usize,
    vm: usize,
    cloudlet: Cloudlet,
    delay_s: f64,
    finish_time: Option<f64>,
}

#[derive(Clone, Debug, Default)]
struct AppRecord {
    preferred: Option<NodeId>,
    submitted_at: Option<f64>,
    allocated_at: Option<f64>,
    finish_time: Option<f64>,
    spilled: bool,
    unfinished: usize,
    released: bool,
}

/// One simulation of one scenario.
pub struct Engine {
    scenario: Scenario,
    options: RunOptions,
    cluster: Cluster,
    vms: Vec<VmRuntime>,
    vm_app: Vec<usize>,
    vm_index: HashMap<VmId, usize>,
    cloudlets: Vec<CloudletRecord>,
    cloudlet_index: HashMap<CloudletId, usize>,
    apps: Vec<AppRecord>,
    device_ap: Vec<ApId>,
    /// Cloudlets that arrived while their VM was unbound.
    waiting: Vec<Vec<usize>>,
    events: EventQueue,
    pending: PendingQueue,
    log: CentralLog,
    clock: SimClock,
    to_release: Vec<usize>,
    hosts_used: BTreeSet<(usize, usize)>,
    peak_demand: Vec<Vec<u32>>,
    completions: usize,
    stale: usize,
    processed: usize,
}

impl Engine {
    pub fn new(scenario: Scenario, options: RunOptions) -> Result<Self, EngineError> {
        let errors = model::validate_scenario(&scenario);
        if !errors.is_empty() {
            return Err(EngineError::Invalid(errors));
        }
        let cluster = Cluster::new(&scenario.nodes);
        let mut vms = Vec::new();
        let mut vm_app = Vec::new();
        let mut vm_index = HashMap::new();
        let mut cloudlets = Vec::new();
        let mut cloudlet_index = HashMap::new();
        let mut apps = Vec::new();
        for (ai, app) in scenario.applications.iter().enumerate() {
            for vm in &app.vms {
                vm_index.insert(vm.id.clone(), vms.len());
                vms.push(VmRuntime::new(vm.clone()));
                vm_app.push(ai);
            }
            for spec in &app.cloudlets {
                let order = cloudlets.len();
                cloudlet_index.insert(spec.id.clone(), order);
                cloudlets.push(CloudletRecord {
                    app: ai,
                    vm: vm_index[&spec.vm],
                    cloudlet: Cloudlet::from_spec(spec, order),
                    delay_s: spec.delay_s,
                    finish_time: None,
                });
            }
            apps.push(AppRecord {
                unfinished: app.cloudlets.len(),
                ..AppRecord::default()
            });
        }

        let mut events = EventQueue::default();
        for ev in &scenario.events {
            let kind = match ev {
                InjectedEvent::NodeFail { node, .. } => EventKind::NodeFail {
                    node: cluster
                        .index_of(node)
                        .ok_or_else(|| AllocError::UnknownNode(node.clone()))?,
                },
                InjectedEvent::NodeRecover { node, .. } => EventKind::NodeRecover {
                    node: cluster
                        .index_of(node)
                        .ok_or_else(|| AllocError::UnknownNode(node.clone()))?,
                },
                InjectedEvent::ApHandoff { device_id, ap_id, .. } => EventKind::ApHandoff {
                    device: scenario
                        .devices
                        .iter()
                        .position(|d| d.id == *device_id)
                        .ok_or_else(|| EngineError::UnknownDevice(device_id.clone()))?,
                    ap: ap_id.clone(),
                },
            };
            events.push(ev.time_s(), kind);
        }
        for (ai, app) in scenario.applications.iter().enumerate() {
            events.push(app.submit_time_s, EventKind::AppSend { app: ai });
        }

        let peak_demand = cluster.nodes.iter().map(|n| vec![0; n.hosts.len()]).collect();
        let waiting = vec![Vec::new(); vms.len()];
        let device_ap = scenario.devices.iter().map(|d| d.ap_id.clone()).collect();
        Ok(Self {
            scenario,
            options,
            cluster,
            vms,
            vm_app,
            vm_index,
            cloudlets,
            cloudlet_index,
            apps,
            device_ap,
            waiting,
            events,
            pending: PendingQueue::new(),
            log: CentralLog::new(),
            clock: SimClock::default(),
            to_release: Vec::new(),
            hosts_used: BTreeSet::new(),
            peak_demand,
            completions: 0,
            stale: 0,
            processed: 0,
        })
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn log(&self) -> &CentralLog {
        &self.log
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn pending(&self) -> &PendingQueue {
        &self.pending
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.events.peek_time()
    }

    /// Current placement map and checkpointed remaining lengths, in the same
    /// shape as a log replay.
    pub fn snapshot(&self) -> ReplayState {
        let mut state = ReplayState::default();
        for (vi, rt) in self.vms.iter().enumerate() {
            if let Some(b) = &rt.binding {
                state.placements.insert(
                    rt.vm.id.clone(),
                    Placement {
                        app_id: self.scenario.applications[self.vm_app[vi]].id.clone(),
                        node_id: b.node_id.clone(),
                        host_id: b.host_id.clone(),
                        pes: b.pes.clone(),
                    },
                );
            }
        }
        for rec in &self.cloudlets {
            if rec.cloudlet.state != CloudletState::Pending {
                state
                    .remaining
                    .insert(rec.cloudlet.id.clone(), rec.cloudlet.remaining_mi);
            }
        }
        for node in &self.cluster.nodes {
            if !node.alive {
                state.dead_nodes.insert(node.id.clone());
            }
        }
        state
    }

    /// Processes every event with `time ≤ t`.
    pub fn run_until(&mut self, t: f64) -> Result<(), EngineError> {
        while self.peek_time().is_some_and(|next| next <= t) {
            self.step()?;
        }
        Ok(())
    }

    /// Processes the next event (or batch of simultaneous arrivals). Returns
    /// `false` once the queue is empty.
    pub fn step(&mut self) -> Result<bool, EngineError> {
        let Some(event) = self.events.pop() else {
            return Ok(false);
        };
        if !self.clock.advance_to(event.time) {
            return Err(EngineError::ClockWentBackwards {
                now: event.time,
                last: self.clock.now(),
            });
        }
        let ct = event.time;
        self.processed += 1;
        match event.kind {
            EventKind::AppSend { app } => self.on_app_send(app, ct)?,
            EventKind::AppSubmit { app, node } => {
                let batch = self.collect_arrivals(ct, (app, node));
                self.on_app_arrivals(batch, ct)?;
            }
            EventKind::CloudletSubmit { cloudlet } => self.on_cloudlet_arrival(cloudlet, ct)?,
            EventKind::CloudletFinish { vm, generation, .. } => {
                if generation == self.vms[vm].generation() {
                    self.touch_vm(vm, ct)?;
                } else {
                    self.stale += 1;
                }
            }
            EventKind::NodeFail { node } => self.handle_node_fail(node, ct)?,
            EventKind::NodeRecover { node } => self.handle_node_recover(node, ct)?,
            EventKind::ApHandoff { device, ap } => self.handle_handoff(device, &ap)?,
        }
        self.settle(ct)?;
        self.record_demand();
        Ok(true)
    }

    pub fn run(mut self) -> Result<RunResult, EngineError> {
        while self.step()? {}
        Ok(self.finish())
    }

    /// Pops the other arrivals scheduled at exactly `ct` so they are
    /// allocated as one batch.
    fn collect_arrivals(&mut self, ct: f64, first: (usize, NodeId)) -> Vec<(usize, NodeId)> {
        let mut batch = vec![first];
        let mut others = Vec::new();
        while self.events.peek_time() == Some(ct) {
            let Some(ev) = self.events.pop() else { break };
            match ev.kind {
                EventKind::AppSubmit { app, node } => {
                    self.processed += 1;
                    batch.push((app, node));
                }
                _ => others.push(ev),
            }
        }
        for ev in others {
            self.events.reinsert(ev);
        }
        batch
    }

    fn on_app_send(&mut self, app: usize, ct: f64) -> Result<(), EngineError> {
        let spec = &self.scenario.applications[app];
        let device = self
            .scenario
            .devices
            .iter()
            .position(|d| d.id == spec.device_id)
            .ok_or_else(|| EngineError::UnknownDevice(spec.device_id.clone()))?;
        let ap_id = &self.device_ap[device];
        let ap = self
            .scenario
            .access_points
            .iter()
            .find(|a| a.id == *ap_id)
            .ok_or_else(|| EngineError::UnknownAccessPoint(ap_id.clone()))?;
        self.apps[app].submitted_at = Some(ct);
        self.events.push(
            ct + ap.latency_ms / 1000.0,
            EventKind::AppSubmit {
                app,
                node: ap.preferred_node.clone(),
            },
        );
        Ok(())
    }

    fn on_app_arrivals(&mut self, mut batch: Vec<(usize, NodeId)>, ct: f64) -> Result<(), EngineError> {
        batch.sort_by_key(|(app, _)| *app);
        for (app, node) in &batch {
            self.apps[*app].preferred = Some(node.clone());
        }
        let refs: Vec<&Application> = batch.iter().map(|(a, _)| &self.scenario.applications[*a]).collect();
        let order: Vec<usize> = allocator::sort_applications(&refs)
            .into_iter()
            .map(|a| self.app_index(&a.id))
            .collect();
        for app in order {
            if !self.try_allocate(app, ct)? {
                self.enqueue(app);
            }
        }
        Ok(())
    }

    fn app_index(&self, id: &str) -> usize {
        self.scenario
            .applications
            .iter()
            .position(|a| a.id == id)
            .unwrap_or(usize::MAX)
    }

    fn enqueue(&mut self, app: usize) {
        let spec = &self.scenario.applications[app];
        self.pending.push(PendingEntry {
            app_id: spec.id.clone(),
            requirement: model::resource_requirement(spec),
            submit_time: spec.submit_time_s,
            order: app,
        });
    }

    /// Attempts to place the application's unbound VMs. Returns whether it
    /// succeeded.
    fn try_allocate(&mut self, app: usize, ct: f64) -> Result<bool, EngineError> {
        let spec = &self.scenario.applications[app];
        let unbound: Vec<&model::Vm> = spec
            .vms
            .iter()
            .filter(|vm| !self.vms[self.vm_index[&vm.id]].is_bound())
            .collect();
        let first_time = self.apps[app].allocated_at.is_none();
        let dynamic = self.scenario.dynamic || !first_time;
        let preferred = self.apps[app].preferred.clone().unwrap_or_default();
        match allocator::allocate_vms(spec, &unbound, &mut self.cluster, &preferred, dynamic)? {
            AllocationOutcome::Queued => Ok(false),
            AllocationOutcome::Placed(plan) => {
                self.start_plan(app, plan, first_time, ct)?;
                Ok(true)
            }
        }
    }

    fn start_plan(&mut self, app: usize, plan: AllocationPlan, first_time: bool, ct: f64) -> Result<(), EngineError> {
        let app_id = self.scenario.applications[app].id.clone();
        let kind = if first_time {
            LogKind::Allocated
        } else {
            LogKind::Reallocated
        };
        self.apps[app].spilled |= plan.spilled;
        let mut touched = Vec::new();
        for (vm_id, binding) in plan.placements {
            let vi = self.vm_index[&vm_id];
            self.log
                .append(LogEntry::placement(ct, kind, &app_id, &vm_id, &binding))?;
            let node = self.cluster.index_of(&binding.node_id).unwrap_or_default();
            if let Some(h) = self.cluster.nodes[node]
                .hosts
                .iter()
                .position(|h| h.id == binding.host_id)
            {
                self.hosts_used.insert((node, h));
            }
            self.vms[vi].bind(binding, ct);
            touched.push(vi);
        }

        if first_time {
            self.apps[app].allocated_at = Some(ct);
            let members: Vec<usize> = (0..self.cloudlets.len())
                .filter(|&c| self.cloudlets[c].app == app)
                .collect();
            if members.is_empty() {
                self.to_release.push(app);
            }
            for c in members {
                let delay = self.cloudlets[c].delay_s;
                if delay > 0.0 {
                    self.events.push(ct + delay, EventKind::CloudletSubmit { cloudlet: c });
                } else {
                    self.waiting[self.cloudlets[c].vm].push(c);
                }
            }
        }

        for vi in touched {
            let waiting = std::mem::take(&mut self.waiting[vi]);
            let mut finished = Vec::new();
            for c in waiting {
                finished.extend(self.submit(c, ct)?);
            }
            self.after_vm_change(vi, finished, ct)?;
        }
        Ok(())
    }

    fn submit(&mut self, c: usize, ct: f64) -> Result<Vec<Cloudlet>, EngineError> {
        let rec = &mut self.cloudlets[c];
        let vi = rec.vm;
        let finished = self.vms[vi].submit_cloudlet(rec.cloudlet.clone(), ct)?;
        rec.cloudlet.state = CloudletState::Running;
        let app_id = &self.scenario.applications[rec.app].id;
        self.log.append(LogEntry::progress(
            ct,
            app_id,
            &rec.cloudlet.vm_id,
            &rec.cloudlet.id,
            rec.cloudlet.remaining_mi,
        ))?;
        Ok(finished)
    }

    fn on_cloudlet_arrival(&mut self, c: usize, ct: f64) -> Result<(), EngineError> {
        let vi = self.cloudlets[c].vm;
        if self.vms[vi].is_bound() {
            let finished = self.submit(c, ct)?;
            self.after_vm_change(vi, finished, ct)?;
        } else {
            self.waiting[vi].push(c);
        }
        Ok(())
    }

    fn touch_vm(&mut self, vi: usize, ct: f64) -> Result<(), EngineError> {
        let finished = self.vms[vi].on_event_reschedule(ct)?;
        self.after_vm_change(vi, finished, ct)
    }

    /// Records finished cloudlets, checkpoints progress of the survivors,
    /// and schedules the VM's next completion.
    fn after_vm_change(&mut self, vi: usize, finished: Vec<Cloudlet>, ct: f64) -> Result<(), EngineError> {
        let app = self.vm_app[vi];
        let app_id = self.scenario.applications[app].id.clone();
        for done in finished {
            let c = self.cloudlet_index[&done.id];
            let rec = &mut self.cloudlets[c];
            if rec.cloudlet.state == CloudletState::Finished {
                continue;
            }
            rec.cloudlet.state = CloudletState::Finished;
            rec.cloudlet.remaining_mi = 0.0;
            rec.finish_time = Some(ct);
            self.completions += 1;
            self.log
                .append(LogEntry::finished(ct, &app_id, &done.vm_id, &done.id))?;
            let record = &mut self.apps[app];
            record.unfinished -= 1;
            if record.unfinished == 0 {
                self.to_release.push(app);
            }
        }
        let rt = &self.vms[vi];
        for running in rt.running() {
            let rec = &mut self.cloudlets[self.cloudlet_index[&running.id]];
            if rec.cloudlet.remaining_mi != running.remaining_mi {
                rec.cloudlet.remaining_mi = running.remaining_mi;
                self.log.append(LogEntry::progress(
                    ct,
                    &app_id,
                    &running.vm_id,
                    &running.id,
                    running.remaining_mi,
                ))?;
            }
        }
        if let Some((cloudlet, eft)) = rt.next_completion() {
            let kind = EventKind::CloudletFinish {
                vm: vi,
                cloudlet: cloudlet.to_string(),
                generation: rt.generation(),
            };
            self.events.push(eft, kind);
        }
        Ok(())
    }

    /// Releases completed applications and admits queued ones until nothing
    /// changes.
    fn settle(&mut self, ct: f64) -> Result<(), EngineError> {
        while !self.to_release.is_empty() {
            let apps = std::mem::take(&mut self.to_release);
            for app in apps {
                self.release_app(app, ct)?;
            }
            self.drain_pending(ct)?;
        }
        Ok(())
    }

    fn release_app(&mut self, app: usize, ct: f64) -> Result<(), EngineError> {
        if self.apps[app].released {
            return Ok(());
        }
        let spec = &self.scenario.applications[app];
        let members: Vec<usize> = spec.vms.iter().map(|vm| self.vm_index[&vm.id]).collect();
        let runtimes = self
            .vms
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| members.contains(i))
            .map(|(_, rt)| rt);
        let freed = allocator::release_application(spec, runtimes, &mut self.cluster)?;
        for (vm_id, binding) in freed {
            self.log
                .append(LogEntry::released(ct, &spec.id, &vm_id, &binding.node_id))?;
        }
        let record = &mut self.apps[app];
        record.released = true;
        record.finish_time = Some(ct);
        Ok(())
    }

    fn drain_pending(&mut self, ct: f64) -> Result<(), EngineError> {
        let mut pending = std::mem::take(&mut self.pending);
        let result = pending.drain_admissible(|entry| {
            let app = entry.order;
            self.try_allocate(app, ct)
        });
        // Nothing pushes to the live queue while it is detached.
        debug_assert!(self.pending.is_empty());
        self.pending = pending;
        result.map(|_| ())
    }

    /// Marks the node dead, brings affected cloudlets to `ct`, evicts their
    /// VMs and re-places them on surviving nodes.
    pub fn handle_node_fail(&mut self, node: usize, ct: f64) -> Result<(), EngineError> {
        let node_id = self.cluster.nodes[node].id.clone();
        if !self.cluster.nodes[node].alive {
            return Err(EngineError::NodeAlreadyDown(node_id));
        }
        // No new placements land here from this point on.
        self.cluster.nodes[node].alive = false;
        self.log.append(LogEntry::node_failed(ct, &node_id))?;

        let on_node = |rt: &VmRuntime| rt.binding.as_ref().is_some_and(|b| b.node_id == node_id);
        let affected: Vec<usize> = (0..self.vms.len()).filter(|&i| on_node(&self.vms[i])).collect();
        for &vi in &affected {
            if self.options.lose_progress_since_log {
                self.vms[vi].skip_to(ct)?;
            } else {
                self.touch_vm(vi, ct)?;
            }
        }
        // Applications that just completed give their VMs back normally.
        self.settle(ct)?;

        let mut evicted_apps = Vec::new();
        for vi in affected {
            if !on_node(&self.vms[vi]) {
                continue;
            }
            let app = self.vm_app[vi];
            let app_id = self.scenario.applications[app].id.clone();
            self.vms[vi].unbind();
            self.log
                .append(LogEntry::vm_failed(ct, &app_id, &self.vms[vi].vm.id, &node_id))?;
            if !evicted_apps.contains(&app) {
                evicted_apps.push(app);
            }
        }
        self.cluster.nodes[node].fail();

        let refs: Vec<&Application> = evicted_apps.iter().map(|&a| &self.scenario.applications[a]).collect();
        let order: Vec<usize> = allocator::sort_applications(&refs)
            .into_iter()
            .map(|a| self.app_index(&a.id))
            .collect();
        for app in order {
            if !self.try_allocate(app, ct)? {
                self.enqueue(app);
            }
        }
        Ok(())
    }

    pub fn handle_node_recover(&mut self, node: usize, ct: f64) -> Result<(), EngineError> {
        let state = &mut self.cluster.nodes[node];
        if state.alive {
            return Err(EngineError::NodeAlreadyUp(state.id.clone()));
        }
        state.recover();
        let id = state.id.clone();
        self.log.append(LogEntry::node_recovered(ct, &id))?;
        self.drain_pending(ct)
    }

    /// Points the device at a new access point. Only later submissions see
    /// the change.
    pub fn handle_handoff(&mut self, device: usize, ap: &str) -> Result<(), EngineError> {
        if device >= self.device_ap.len() {
            return Err(EngineError::UnknownDevice(device.to_string()));
        }
        if !self.scenario.access_points.iter().any(|a| a.id == ap) {
            return Err(EngineError::UnknownAccessPoint(ap.to_string()));
        }
        self.device_ap[device] = ap.to_string();
        Ok(())
    }

    fn record_demand(&mut self) {
        let mut demand: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for rt in &self.vms {
            let Some(b) = &rt.binding else { continue };
            let Some(n) = self.cluster.index_of(&b.node_id) else {
                continue;
            };
            let Some(h) = self.cluster.nodes[n].hosts.iter().position(|h| h.id == b.host_id) else {
                continue;
            };
            *demand.entry((n, h)).or_default() += rt.core_demand();
        }
        for ((n, h), d) in demand {
            let peak = &mut self.peak_demand[n][h];
            *peak = (*peak).max(d);
        }
    }

    fn metrics(&self, makespan_ms: f64) -> ReportRow {
        let mut space_sum = 0.0;
        let mut busiest: Option<(u32, f64)> = None;
        for &(n, h) in &self.hosts_used {
            let pes = &self.scenario.nodes[n].hosts[h].pes;
            space_sum += capacity::space_shared_capacity(pes).unwrap_or(0.0);
            let peak = self.peak_demand[n][h];
            if busiest.is_none_or(|(best, _)| peak > best) {
                busiest = Some((peak, capacity::time_shared_capacity(pes, peak).unwrap_or(0.0)));
            }
        }
        let used = self.hosts_used.len();
        ReportRow {
            label: self.scenario.label(),
            space_shared_capacity: if used == 0 { 0.0 } else { space_sum / used as f64 },
            finish_time_ms: makespan_ms,
            time_shared_capacity: busiest.map_or(0.0, |(_, c)| c),
        }
    }

    pub fn finish(self) -> RunResult {
        let first_submit = self
            .scenario
            .applications
            .iter()
            .map(|a| a.submit_time_s)
            .fold(f64::INFINITY, f64::min);
        let last_finish = self
            .cloudlets
            .iter()
            .filter_map(|c| c.finish_time)
            .fold(f64::NEG_INFINITY, f64::max);
        let makespan_ms = if last_finish.is_finite() && first_submit.is_finite() {
            ((last_finish - first_submit) * 1000.0).max(0.0)
        } else {
            0.0
        };
        let status = if self.cloudlets.iter().all(|c| c.finish_time.is_some()) {
            RunStatus::Completed
        } else {
            RunStatus::Degraded
        };
        let metrics = self.metrics(makespan_ms);
        let apps = self
            .scenario
            .applications
            .iter()
            .zip(&self.apps)
            .map(|(spec, rec)| AppOutcome {
                id: spec.id.clone(),
                requirement_mips: model::resource_requirement(spec),
                allocated_at_s: rec.allocated_at,
                finish_time_s: rec.finish_time,
                spilled: rec.spilled,
            })
            .collect();
        let cloudlets = self
            .cloudlets
            .iter()
            .map(|rec| CloudletOutcome {
                id: rec.cloudlet.id.clone(),
                app_id: self.scenario.applications[rec.app].id.clone(),
                vm_id: rec.cloudlet.vm_id.clone(),
                length_mi: rec.cloudlet.length_mi,
                remaining_mi: rec.cloudlet.remaining_mi,
                finish_time_s: rec.finish_time,
            })
            .collect();
        RunResult {
            scenario: self.scenario.name.clone(),
            seed: self.options.seed.unwrap_or(self.scenario.seed),
            status,
            makespan_ms,
            metrics,
            executed_mi: self.vms.iter().map(VmRuntime::executed_mi).sum(),
            total_length_mi: self.cloudlets.iter().map(|c| c.cloudlet.length_mi).sum(),
            completions: self.completions,
            stale_events_skipped: self.stale,
            events_processed: self.processed,
            apps,
            cloudlets,
            log: self.log,
        }
    }
}

/// Validates and simulates `scenario` to completion.
pub fn run(scenario: Scenario, options: RunOptions) -> Result<RunResult, EngineError> {
    Engine::new(scenario, options)?.run()
}
