//! Application-level allocation across distributed cloud nodes.
//!
//! Applications are attempted largest resource requirement first. An
//! application lands entirely on its preferred node when its requirement is
//! strictly below that node's free capacity; otherwise, in dynamic mode, its
//! VMs are spread whole across eligible nodes starting from the preferred
//! one. Anything that cannot be fully placed is rolled back and queued until
//! a release or recovery frees resources.

use std::cmp::Ordering;

use thiserror::Error;

use crate::model::{
    self, AccessPoint, AppId, Application, ApplicationClass, CloudNode, MobileDevice, NodeId, Vm, VmId,
};
use crate::scheduler::{self, NodeState, SchedulerError, VmBinding, VmRuntime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("unplaceable by class: private application {0} owns no nodes")]
    UnplaceableByClass(AppId),
    #[error("unknown access point {0}")]
    UnknownAccessPoint(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("application {0} still has running cloudlets")]
    AppBusy(AppId),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

/// Reservation state of every node.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub nodes: Vec<NodeState>,
}

impl Cluster {
    pub fn new(nodes: &[CloudNode]) -> Self {
        Self {
            nodes: nodes.iter().map(NodeState::new).collect(),
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node(&self, id: &str) -> Option<&NodeState> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut NodeState> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    fn unreserve(&mut self, vm_id: &str, binding: &VmBinding) -> Result<(), AllocError> {
        let node = self
            .node_mut(&binding.node_id)
            .ok_or_else(|| AllocError::UnknownNode(binding.node_id.clone()))?;
        scheduler::unreserve(vm_id, binding, node)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationPlan {
    pub app_id: AppId,
    pub placements: Vec<(VmId, VmBinding)>,
    /// Some VM was placed off the preferred node.
    pub spilled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AllocationOutcome {
    Placed(AllocationPlan),
    Queued,
}

/// Stable sort by resource requirement, largest first.
pub fn sort_applications<'a>(apps: &[&'a Application]) -> Vec<&'a Application> {
    let mut sorted = apps.to_vec();
    sorted.sort_by(|a, b| model::resource_requirement(b).total_cmp(&model::resource_requirement(a)));
    sorted
}

/// Node that the device's current access point routes to.
pub fn preferred_node(device: &MobileDevice, aps: &[AccessPoint]) -> Result<NodeId, AllocError> {
    aps.iter()
        .find(|ap| ap.id == device.ap_id)
        .map(|ap| ap.preferred_node.clone())
        .ok_or_else(|| AllocError::UnknownAccessPoint(device.ap_id.clone()))
}

/// Alive nodes the application may use, with the effective preferred node
/// first and the rest in tier then declaration order.
pub fn candidate_nodes(app: &Application, cluster: &Cluster, preferred: &str) -> Result<Vec<usize>, AllocError> {
    let owned = |n: &NodeState| app.owned_nodes.contains(&n.id);
    let alive = |i: &usize| cluster.nodes[*i].alive;
    let all = 0..cluster.nodes.len();

    let (first_tier, second_tier): (Vec<usize>, Vec<usize>) = match app.class {
        ApplicationClass::Private => {
            if app.owned_nodes.is_empty() {
                return Err(AllocError::UnplaceableByClass(app.id.clone()));
            }
            (all.filter(|&i| owned(&cluster.nodes[i])).collect(), Vec::new())
        }
        ApplicationClass::Public => (all.collect(), Vec::new()),
        ApplicationClass::Hybrid => all.partition(|&i| owned(&cluster.nodes[i])),
    };
    let first_tier: Vec<usize> = first_tier.into_iter().filter(alive).collect();
    let second_tier: Vec<usize> = second_tier.into_iter().filter(alive).collect();

    let preferred_idx = cluster.index_of(preferred).filter(|i| cluster.nodes[*i].alive);
    let lead = match preferred_idx {
        Some(i) if first_tier.contains(&i) => Some(i),
        _ => first_tier.first().copied().or_else(|| {
            preferred_idx
                .filter(|i| second_tier.contains(i))
                .or_else(|| second_tier.first().copied())
        }),
    };
    let Some(lead) = lead else {
        return Ok(Vec::new());
    };
    let mut order = vec![lead];
    order.extend(first_tier.into_iter().chain(second_tier).filter(|&i| i != lead));
    Ok(order)
}

fn rollback(cluster: &mut Cluster, placed: &[(VmId, VmBinding)]) -> Result<(), AllocError> {
    for (vm, binding) in placed.iter().rev() {
        cluster.unreserve(vm, binding)?;
    }
    Ok(())
}

/// Places every VM of `app`.
pub fn allocate_application(
    app: &Application,
    cluster: &mut Cluster,
    preferred: &str,
    dynamic: bool,
) -> Result<AllocationOutcome, AllocError> {
    let vms: Vec<&Vm> = app.vms.iter().collect();
    allocate_vms(app, &vms, cluster, preferred, dynamic)
}

/// Places the given subset of `app`'s VMs, all or nothing.
pub fn allocate_vms(
    app: &Application,
    vms: &[&Vm],
    cluster: &mut Cluster,
    preferred: &str,
    dynamic: bool,
) -> Result<AllocationOutcome, AllocError> {
    let order = candidate_nodes(app, cluster, preferred)?;
    let Some(&lead) = order.first() else {
        return Ok(AllocationOutcome::Queued);
    };
    let requirement: f64 = vms.iter().map(|vm| vm.demand()).sum();

    if requirement < cluster.nodes[lead].free_capacity() {
        let mut placed = Vec::with_capacity(vms.len());
        for vm in vms {
            match scheduler::place_vm(vm, &mut cluster.nodes[lead])? {
                Some(binding) => placed.push((vm.id.clone(), binding)),
                None => break,
            }
        }
        if placed.len() == vms.len() {
            return Ok(AllocationOutcome::Placed(AllocationPlan {
                app_id: app.id.clone(),
                placements: placed,
                spilled: false,
            }));
        }
        // Enough MIPS but too fragmented: fall through to spillover.
        rollback(cluster, &placed)?;
    }

    if !dynamic {
        return Ok(AllocationOutcome::Queued);
    }

    let mut placed = Vec::with_capacity(vms.len());
    for vm in vms {
        let mut bound = None;
        for &n in &order {
            if let Some(binding) = scheduler::place_vm(vm, &mut cluster.nodes[n])? {
                bound = Some(binding);
                break;
            }
        }
        match bound {
            Some(binding) => placed.push((vm.id.clone(), binding)),
            None => {
                rollback(cluster, &placed)?;
                return Ok(AllocationOutcome::Queued);
            }
        }
    }
    let lead_id = &cluster.nodes[lead].id;
    let spilled = placed.iter().any(|(_, b)| b.node_id != *lead_id);
    Ok(AllocationOutcome::Placed(AllocationPlan {
        app_id: app.id.clone(),
        placements: placed,
        spilled,
    }))
}

/// Releases every bound VM of an application whose work is done. Either all
/// are released or none.
pub fn release_application<'a>(
    app: &Application,
    runtimes: impl IntoIterator<Item = &'a mut VmRuntime>,
    cluster: &mut Cluster,
) -> Result<Vec<(VmId, VmBinding)>, AllocError> {
    let mut runtimes: Vec<&mut VmRuntime> = runtimes.into_iter().collect();
    if runtimes.iter().any(|rt| rt.running_len() > 0) {
        return Err(AllocError::AppBusy(app.id.clone()));
    }
    let mut freed = Vec::new();
    for rt in runtimes.iter_mut().filter(|rt| rt.is_bound()) {
        let node_id = rt.binding.as_ref().map(|b| b.node_id.clone()).unwrap_or_default();
        let node = cluster.node_mut(&node_id).ok_or(AllocError::UnknownNode(node_id))?;
        let binding = scheduler::release_vm(rt, node)?;
        freed.push((rt.vm.id.clone(), binding));
    }
    Ok(freed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PendingEntry {
    pub app_id: AppId,
    pub requirement: f64,
    pub submit_time: f64,
    /// Declaration index of the application.
    pub order: usize,
}

impl PendingEntry {
    fn queue_cmp(&self, other: &Self) -> Ordering {
        other
            .requirement
            .total_cmp(&self.requirement)
            .then(self.submit_time.total_cmp(&other.submit_time))
            .then(self.order.cmp(&other.order))
    }
}

/// Applications waiting for resources, largest requirement first, then
/// earliest submission, then declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PendingQueue {
    entries: Vec<PendingEntry>,
}

impl PendingQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: PendingEntry) {
        if self.contains(&entry.app_id) {
            return;
        }
        let pos = self
            .entries
            .partition_point(|e| e.queue_cmp(&entry) != Ordering::Greater);
        self.entries.insert(pos, entry);
    }

    pub fn contains(&self, app_id: &str) -> bool {
        self.entries.iter().any(|e| e.app_id == app_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PendingEntry> {
        self.entries.iter()
    }

    /// Walks the queue in order and removes every entry for which `admit`
    /// returns `true`. Returns the admitted ids in admission order.
    pub fn drain_admissible<E>(
        &mut self,
        mut admit: impl FnMut(&PendingEntry) -> Result<bool, E>,
    ) -> Result<Vec<AppId>, E> {
        let mut admitted = Vec::new();
        let mut kept = Vec::with_capacity(self.entries.len());
        let mut entries = std::mem::take(&mut self.entries).into_iter();
        while let Some(entry) = entries.next() {
            match admit(&entry) {
                Ok(true) => admitted.push(entry.app_id),
                Ok(false) => kept.push(entry),
                Err(e) => {
                    kept.push(entry);
                    kept.extend(entries);
                    self.entries = kept;
                    return Err(e);
                }
            }
        }
        self.entries = kept;
        Ok(admitted)
    }
}
