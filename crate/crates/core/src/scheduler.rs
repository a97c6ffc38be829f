//! Space-shared VM placement onto hosts and fluid time-shared execution of
//! cloudlets inside a VM.
//!
//! A VM reserves whole PEs on a single host for its lifetime. Inside the VM
//! every running cloudlet progresses at `capacity × cores(p)` MI/s, where
//! `capacity` is the time-shared per-core capacity of the VM's cores given
//! the current total core demand. Rates are recomputed at every event that
//! changes the running set; between events progress is linear.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{self, CapacityError, COMPLETION_EPSILON_MI};
use crate::model::{CloudNode, Cloudlet, CloudletId, CloudletState, Host, HostId, NodeId, ProcessingElement, Vm, VmId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("node down: {0}")]
    NodeDown(NodeId),
    #[error("vm {0} is not bound to a host")]
    Unbound(VmId),
    #[error("vm busy: {0} still has running cloudlets")]
    VmBusy(VmId),
    #[error("cloudlet wider than VM: {cloudlet} needs {needed} cores, vm has {available}")]
    CloudletTooWide {
        cloudlet: CloudletId,
        needed: u32,
        available: u32,
    },
    #[error("cloudlet {cloudlet} targets vm {expected}, not {actual}")]
    WrongVm {
        cloudlet: CloudletId,
        expected: VmId,
        actual: VmId,
    },
    #[error("cloudlet {0} is not pending")]
    NotPending(CloudletId),
    #[error("clock went backwards: {now} < {last}")]
    ClockWentBackwards { now: f64, last: f64 },
    #[error("binding for vm {0} does not match host state")]
    BindingMismatch(VmId),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
}

/// Where a VM lives: node, host, and the PE indices it reserved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmBinding {
    pub node_id: NodeId,
    pub host_id: HostId,
    pub pes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HostState {
    pub id: HostId,
    pub pes: Vec<ProcessingElement>,
    reserved: Vec<Option<VmId>>,
}

impl HostState {
    pub fn new(host: &Host) -> Self {
        Self {
            id: host.id.clone(),
            pes: host.pes.clone(),
            reserved: vec![None; host.pes.len()],
        }
    }

    pub fn np(&self) -> usize {
        self.pes.len()
    }

    pub fn reserved_by(&self, pe: usize) -> Option<&VmId> {
        self.reserved.get(pe).and_then(Option::as_ref)
    }

    pub fn free_pes(&self) -> impl Iterator<Item = usize> + '_ {
        self.reserved
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(i, _)| i)
    }

    pub fn free_mips(&self) -> f64 {
        self.free_pes().map(|i| self.pes[i].mips).sum()
    }

    pub fn reserved_count(&self) -> usize {
        self.reserved.iter().filter(|r| r.is_some()).count()
    }

    fn clear(&mut self) {
        self.reserved.iter_mut().for_each(|r| *r = None);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub alive: bool,
    pub hosts: Vec<HostState>,
}

impl NodeState {
    pub fn new(node: &CloudNode) -> Self {
        Self {
            id: node.id.clone(),
            alive: true,
            hosts: node.hosts.iter().map(HostState::new).collect(),
        }
    }

    /// MIPS of all unreserved PEs; zero for a dead node.
    pub fn free_capacity(&self) -> f64 {
        if !self.alive {
            return 0.0;
        }
        self.hosts.iter().map(HostState::free_mips).sum()
    }

    pub fn total_capacity(&self) -> f64 {
        self.hosts.iter().flat_map(|h| h.pes.iter()).map(|pe| pe.mips).sum()
    }

    pub fn host(&self, id: &str) -> Option<&HostState> {
        self.hosts.iter().find(|h| h.id == id)
    }

    /// Marks the node dead and drops every reservation on it.
    pub fn fail(&mut self) {
        self.alive = false;
        self.hosts.iter_mut().for_each(HostState::clear);
    }

    pub fn recover(&mut self) {
        self.alive = true;
    }
}

/// First-fit space-shared placement: the first host, in declaration order,
/// with at least `vm.cores` free PEs of strength ≥ `vm.mips_per_core`
/// receives the VM on its lowest-indexed qualifying PEs. `Ok(None)` means no
/// host qualifies.
pub fn place_vm(vm: &Vm, node: &mut NodeState) -> Result<Option<VmBinding>, SchedulerError> {
    if !node.alive {
        return Err(SchedulerError::NodeDown(node.id.clone()));
    }
    let needed = vm.cores as usize;
    for host in &mut node.hosts {
        let chosen: Vec<usize> = host
            .free_pes()
            .filter(|&i| host.pes[i].mips >= vm.mips_per_core)
            .take(needed)
            .collect();
        if chosen.len() == needed {
            for &i in &chosen {
                host.reserved[i] = Some(vm.id.clone());
            }
            return Ok(Some(VmBinding {
                node_id: node.id.clone(),
                host_id: host.id.clone(),
                pes: chosen,
            }));
        }
    }
    Ok(None)
}

/// Returns the PEs named by `binding` to the free pool.
pub fn unreserve(vm_id: &str, binding: &VmBinding, node: &mut NodeState) -> Result<(), SchedulerError> {
    let mismatch = || SchedulerError::BindingMismatch(vm_id.to_string());
    if node.id != binding.node_id {
        return Err(mismatch());
    }
    let host = node
        .hosts
        .iter_mut()
        .find(|h| h.id == binding.host_id)
        .ok_or_else(mismatch)?;
    if binding
        .pes
        .iter()
        .any(|&i| host.reserved.get(i).and_then(Option::as_deref) != Some(vm_id))
    {
        return Err(mismatch());
    }
    for &i in &binding.pes {
        host.reserved[i] = None;
    }
    Ok(())
}

/// Unbinds an idle VM and frees its PEs. Returns the freed binding.
pub fn release_vm(runtime: &mut VmRuntime, node: &mut NodeState) -> Result<VmBinding, SchedulerError> {
    let binding = runtime
        .binding
        .clone()
        .ok_or_else(|| SchedulerError::Unbound(runtime.vm.id.clone()))?;
    if !runtime.running.is_empty() {
        return Err(SchedulerError::VmBusy(runtime.vm.id.clone()));
    }
    unreserve(&runtime.vm.id, &binding, node)?;
    runtime.unbind();
    Ok(binding)
}

#[derive(Clone, Debug, PartialEq)]
struct Slot {
    cloudlet: Cloudlet,
    eft: f64,
}

/// Execution state of one VM.
#[derive(Clone, Debug, PartialEq)]
pub struct VmRuntime {
    pub vm: Vm,
    pub binding: Option<VmBinding>,
    running: Vec<Slot>,
    capacity: f64,
    next_completion: Option<(CloudletId, f64)>,
    last_update: f64,
    /// Bumped whenever the eft set changes; completion events carrying an
    /// older generation are stale.
    generation: u64,
    /// Σ capacity × cores × dt over all advances, i.e. MI executed.
    executed_mi: f64,
}

impl VmRuntime {
    pub fn new(vm: Vm) -> Self {
        Self {
            vm,
            binding: None,
            running: Vec::new(),
            capacity: 0.0,
            next_completion: None,
            last_update: 0.0,
            generation: 0,
            executed_mi: 0.0,
        }
    }

    pub fn bind(&mut self, binding: VmBinding, ct: f64) {
        self.binding = Some(binding);
        self.last_update = self.last_update.max(ct);
        self.recompute();
    }

    /// Drops the binding. Running cloudlets stay attached but make no
    /// progress until the VM is bound again.
    pub fn unbind(&mut self) {
        self.binding = None;
        self.recompute();
    }

    pub fn is_bound(&self) -> bool {
        self.binding.is_some()
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn next_completion(&self) -> Option<(&str, f64)> {
        self.next_completion.as_ref().map(|(id, t)| (id.as_str(), *t))
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn last_update(&self) -> f64 {
        self.last_update
    }

    pub fn executed_mi(&self) -> f64 {
        self.executed_mi
    }

    pub fn running(&self) -> impl Iterator<Item = &Cloudlet> {
        self.running.iter().map(|s| &s.cloudlet)
    }

    pub fn running_len(&self) -> usize {
        self.running.len()
    }

    pub fn core_demand(&self) -> u32 {
        self.running.iter().map(|s| s.cloudlet.cores).sum()
    }

    pub fn eft_of(&self, cloudlet: &str) -> Option<f64> {
        self.running.iter().find(|s| s.cloudlet.id == cloudlet).map(|s| s.eft)
    }

    /// The VM's cores as seen by the time-shared policy: `cores` PEs of
    /// `mips_per_core` each.
    fn core_pes(&self) -> Vec<ProcessingElement> {
        vec![ProcessingElement::new(self.vm.mips_per_core); self.vm.cores as usize]
    }

    /// Moves the running cloudlets to `ct` and finishes those that are done.
    fn advance(&mut self, ct: f64) -> Result<Vec<Cloudlet>, SchedulerError> {
        if ct < self.last_update {
            return Err(SchedulerError::ClockWentBackwards {
                now: ct,
                last: self.last_update,
            });
        }
        let dt = ct - self.last_update;
        if self.is_bound() && dt > 0.0 {
            for slot in &mut self.running {
                self.executed_mi += self.capacity * f64::from(slot.cloudlet.cores) * dt;
                slot.cloudlet.remaining_mi = capacity::advance_progress(&slot.cloudlet, self.capacity, dt)?;
            }
        }
        self.last_update = ct;

        let mut finished = Vec::new();
        if self.is_bound() {
            let mut i = 0;
            while i < self.running.len() {
                let slot = &self.running[i];
                if slot.cloudlet.remaining_mi <= COMPLETION_EPSILON_MI || slot.eft <= ct {
                    let mut done = self.running.remove(i).cloudlet;
                    done.remaining_mi = 0.0;
                    done.state = CloudletState::Finished;
                    finished.push(done);
                } else {
                    i += 1;
                }
            }
        }
        Ok(finished)
    }

    /// Recomputes the per-core capacity, every eft, and the next completion.
    fn recompute(&mut self) {
        self.generation += 1;
        if !self.is_bound() || self.running.is_empty() {
            self.capacity = if self.is_bound() { self.vm.mips_per_core } else { 0.0 };
            for slot in &mut self.running {
                slot.eft = f64::INFINITY;
            }
            self.next_completion = None;
            return;
        }
        let demand = self.core_demand();
        // Non-empty PE set, so this cannot fail.
        self.capacity = capacity::time_shared_capacity(&self.core_pes(), demand).unwrap_or(0.0);
        let ct = self.last_update;
        let mut best: Option<(usize, f64)> = None;
        for (i, slot) in self.running.iter_mut().enumerate() {
            slot.eft =
                capacity::estimated_finish_time(ct, slot.cloudlet.remaining_mi, self.capacity, slot.cloudlet.cores)
                    .unwrap_or(f64::INFINITY);
            // Slots are kept in declaration order, so strict `<` keeps the
            // earliest-declared cloudlet on ties.
            if best.is_none_or(|(_, t)| slot.eft < t) {
                best = Some((i, slot.eft));
            }
        }
        self.next_completion = best.map(|(i, t)| (self.running[i].cloudlet.id.clone(), t));
    }

    /// Starts `cloudlet` on this VM at `ct`. Progress of the already running
    /// cloudlets is brought up to `ct` first; any of them that finish at
    /// exactly `ct` are returned.
    pub fn submit_cloudlet(&mut self, mut cloudlet: Cloudlet, ct: f64) -> Result<Vec<Cloudlet>, SchedulerError> {
        if cloudlet.vm_id != self.vm.id {
            return Err(SchedulerError::WrongVm {
                cloudlet: cloudlet.id,
                expected: cloudlet.vm_id,
                actual: self.vm.id.clone(),
            });
        }
        if cloudlet.cores > self.vm.cores {
            return Err(SchedulerError::CloudletTooWide {
                cloudlet: cloudlet.id,
                needed: cloudlet.cores,
                available: self.vm.cores,
            });
        }
        if cloudlet.state != CloudletState::Pending {
            return Err(SchedulerError::NotPending(cloudlet.id));
        }
        if !self.is_bound() {
            return Err(SchedulerError::Unbound(self.vm.id.clone()));
        }
        let finished = self.advance(ct)?;
        cloudlet.state = CloudletState::Running;
        let pos = self.running.partition_point(|s| s.cloudlet.order <= cloudlet.order);
        self.running.insert(
            pos,
            Slot {
                cloudlet,
                eft: f64::INFINITY,
            },
        );
        self.recompute();
        Ok(finished)
    }

    /// Brings progress up to `ct`, retires finished cloudlets, and
    /// re-estimates the survivors.
    pub fn on_event_reschedule(&mut self, ct: f64) -> Result<Vec<Cloudlet>, SchedulerError> {
        let finished = self.advance(ct)?;
        self.recompute();
        Ok(finished)
    }

    /// Moves the clock to `ct` without executing anything, used when
    /// progress since the last checkpoint is discarded.
    pub fn skip_to(&mut self, ct: f64) -> Result<(), SchedulerError> {
        if ct < self.last_update {
            return Err(SchedulerError::ClockWentBackwards {
                now: ct,
                last: self.last_update,
            });
        }
        self.last_update = ct;
        self.recompute();
        Ok(())
    }

    /// Overwrites the remaining length of a running cloudlet.
    pub fn set_remaining(&mut self, cloudlet: &str, remaining_mi: f64) {
        if let Some(slot) = self.running.iter_mut().find(|s| s.cloudlet.id == cloudlet) {
            slot.cloudlet.remaining_mi = remaining_mi;
        }
        self.recompute();
    }
}
