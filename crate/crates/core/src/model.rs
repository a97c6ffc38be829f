//! Domain types for the device → access point → cloud node → host → PE
//! hierarchy, and scenario validation.
//!
//! Everything in this module is plain value data. Identifiers are opaque
//! strings; declaration order in the scenario document is the canonical
//! tie-break order used by every other module.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub type NodeId = String;
pub type HostId = String;
pub type VmId = String;
pub type CloudletId = String;
pub type AppId = String;
pub type DeviceId = String;
pub type ApId = String;

/// One core of a host. Serialized as a bare MIPS number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessingElement {
    pub mips: f64,
}

impl ProcessingElement {
    pub fn new(mips: f64) -> Self {
        Self { mips }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Host {
    pub id: HostId,
    pub pes: Vec<ProcessingElement>,
}

impl Host {
    pub fn new(id: impl Into<HostId>, mips: &[f64]) -> Self {
        Self {
            id: id.into(),
            pes: mips.iter().copied().map(ProcessingElement::new).collect(),
        }
    }

    /// Number of processing elements (`np`).
    pub fn np(&self) -> usize {
        self.pes.len()
    }

    pub fn total_mips(&self) -> f64 {
        self.pes.iter().map(|pe| pe.mips).sum()
    }
}

/// A distributed cloud site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudNode {
    pub id: NodeId,
    pub hosts: Vec<Host>,
}

impl CloudNode {
    pub fn total_mips(&self) -> f64 {
        self.hosts.iter().map(Host::total_mips).sum()
    }
}

/// A reserved slice of PEs on one host.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vm {
    pub id: VmId,
    pub cores: u32,
    pub mips_per_core: f64,
}

impl Vm {
    pub fn new(id: impl Into<VmId>, cores: u32, mips_per_core: f64) -> Self {
        Self {
            id: id.into(),
            cores,
            mips_per_core,
        }
    }

    /// MIPS-equivalent demand of this VM.
    pub fn demand(&self) -> f64 {
        f64::from(self.cores) * self.mips_per_core
    }
}

/// Cloudlet as declared in a scenario document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudletSpec {
    pub id: CloudletId,
    pub vm: VmId,
    pub length_mi: f64,
    pub cores: u32,
    /// Offset from the owning application's allocation to the cloudlet's
    /// arrival at its VM.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub delay_s: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudletState {
    Pending,
    Running,
    Finished,
}

/// Runtime view of a cloudlet: the declared task plus its progress.
#[derive(Clone, Debug, PartialEq)]
pub struct Cloudlet {
    pub id: CloudletId,
    pub vm_id: VmId,
    pub length_mi: f64,
    pub cores: u32,
    pub remaining_mi: f64,
    pub state: CloudletState,
    /// Declaration index across the whole scenario.
    pub order: usize,
}

impl Cloudlet {
    pub fn new(id: impl Into<CloudletId>, vm_id: impl Into<VmId>, length_mi: f64, cores: u32) -> Self {
        Self {
            id: id.into(),
            vm_id: vm_id.into(),
            length_mi,
            cores,
            remaining_mi: length_mi,
            state: CloudletState::Pending,
            order: 0,
        }
    }

    pub fn from_spec(spec: &CloudletSpec, order: usize) -> Self {
        Self {
            order,
            ..Self::new(spec.id.clone(), spec.vm.clone(), spec.length_mi, spec.cores)
        }
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }
}

/// Application classes of mobile cloud deployments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplicationClass {
    /// Runs only on hardware the owner holds (`owned_nodes`).
    Private,
    /// May run on any node.
    Public,
    /// Prefers owned nodes, spills onto the rest.
    Hybrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Application {
    pub id: AppId,
    pub device_id: DeviceId,
    pub class: ApplicationClass,
    #[serde(default)]
    pub owned_nodes: Vec<NodeId>,
    pub submit_time_s: f64,
    pub vms: Vec<Vm>,
    pub cloudlets: Vec<CloudletSpec>,
}

/// The application's aggregate resource requirement: Σ cores × mips_per_core
/// over its VMs, in MIPS.
pub fn resource_requirement(app: &Application) -> f64 {
    app.vms.iter().map(Vm::demand).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessPoint {
    pub id: ApId,
    pub preferred_node: NodeId,
    #[serde(default)]
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobileDevice {
    pub id: DeviceId,
    pub ap_id: ApId,
}

/// Externally injected events.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InjectedEvent {
    NodeFail {
        time_s: f64,
        node: NodeId,
    },
    NodeRecover {
        time_s: f64,
        node: NodeId,
    },
    ApHandoff {
        time_s: f64,
        device_id: DeviceId,
        ap_id: ApId,
    },
}

impl InjectedEvent {
    pub fn time_s(&self) -> f64 {
        match self {
            InjectedEvent::NodeFail { time_s, .. }
            | InjectedEvent::NodeRecover { time_s, .. }
            | InjectedEvent::ApHandoff { time_s, .. } => *time_s,
        }
    }
}

fn default_dynamic() -> bool {
    true
}

/// The declarative input document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dynamic")]
    pub dynamic: bool,
    pub nodes: Vec<CloudNode>,
    pub access_points: Vec<AccessPoint>,
    pub devices: Vec<MobileDevice>,
    pub applications: Vec<Application>,
    #[serde(default)]
    pub events: Vec<InjectedEvent>,
}

impl Scenario {
    pub fn cloudlet_count(&self) -> usize {
        self.applications.iter().map(|a| a.cloudlets.len()).sum()
    }

    pub fn vm_count(&self) -> usize {
        self.applications.iter().map(|a| a.vms.len()).sum()
    }

    /// Row label in the `"N tasks in M VMs"` form.
    pub fn label(&self) -> String {
        format!("{} tasks in {} VMs", self.cloudlet_count(), self.vm_count())
    }
}

/// Simulation clock in seconds. Never moves backwards.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimClock {
    now: f64,
}

impl SimClock {
    pub fn now(&self) -> f64 {
        self.now
    }

    /// Moves the clock to `t`. Returns `false` (and leaves the clock alone)
    /// if `t` lies in the past.
    pub fn advance_to(&mut self, t: f64) -> bool {
        if t < self.now {
            return false;
        }
        self.now = t;
        true
    }
}

/// One problem found in a scenario, with a path to the offending field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl ValidationError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

struct UniqueIds<'a> {
    kind: &'static str,
    seen: HashSet<&'a str>,
}

impl<'a> UniqueIds<'a> {
    fn new(kind: &'static str) -> Self {
        Self {
            kind,
            seen: HashSet::new(),
        }
    }

    fn check(&mut self, id: &'a str, path: String, errors: &mut Vec<ValidationError>) {
        if !self.seen.insert(id) {
            errors.push(ValidationError::new(
                path,
                format!("duplicate {} id \"{}\"", self.kind, id),
            ));
        }
    }

    fn contains(&self, id: &str) -> bool {
        self.seen.contains(id)
    }
}

fn check_positive(value: f64, path: String, what: &str, errors: &mut Vec<ValidationError>) {
    if !(value.is_finite() && value > 0.0) {
        errors.push(ValidationError::new(path, format!("{what} must be positive")));
    }
}

fn check_non_negative(value: f64, path: String, what: &str, errors: &mut Vec<ValidationError>) {
    if !(value.is_finite() && value >= 0.0) {
        errors.push(ValidationError::new(path, format!("{what} must be non-negative")));
    }
}

/// Checks cross-references, numeric invariants, id uniqueness and event
/// ordering. Returns one error per violation, in document order.
pub fn validate_scenario(scenario: &Scenario) -> Vec<ValidationError> {
    let mut errors = Vec::new();

    let mut node_ids = UniqueIds::new("node");
    let mut host_ids = UniqueIds::new("host");
    if scenario.nodes.is_empty() {
        errors.push(ValidationError::new("nodes", "at least one node is required"));
    }
    for (ni, node) in scenario.nodes.iter().enumerate() {
        node_ids.check(&node.id, format!("nodes[{ni}].id"), &mut errors);
        if node.hosts.is_empty() {
            errors.push(ValidationError::new(format!("nodes[{ni}].hosts"), "node has no hosts"));
        }
        for (hi, host) in node.hosts.iter().enumerate() {
            host_ids.check(&host.id, format!("nodes[{ni}].hosts[{hi}].id"), &mut errors);
            if host.pes.is_empty() {
                errors.push(ValidationError::new(
                    format!("nodes[{ni}].hosts[{hi}].pes"),
                    "host has no processing elements",
                ));
            }
            for (pi, pe) in host.pes.iter().enumerate() {
                check_positive(
                    pe.mips,
                    format!("nodes[{ni}].hosts[{hi}].pes[{pi}]"),
                    "mips",
                    &mut errors,
                );
            }
        }
    }

    let mut ap_ids = UniqueIds::new("access point");
    for (i, ap) in scenario.access_points.iter().enumerate() {
        ap_ids.check(&ap.id, format!("access_points[{i}].id"), &mut errors);
        if !node_ids.contains(&ap.preferred_node) {
            errors.push(ValidationError::new(
                format!("access_points[{i}].preferred_node"),
                format!("unknown node \"{}\"", ap.preferred_node),
            ));
        }
        check_non_negative(
            ap.latency_ms,
            format!("access_points[{i}].latency_ms"),
            "latency_ms",
            &mut errors,
        );
    }

    let mut device_ids = UniqueIds::new("device");
    for (i, dev) in scenario.devices.iter().enumerate() {
        device_ids.check(&dev.id, format!("devices[{i}].id"), &mut errors);
        if !ap_ids.contains(&dev.ap_id) {
            errors.push(ValidationError::new(
                format!("devices[{i}].ap_id"),
                format!("unknown access point \"{}\"", dev.ap_id),
            ));
        }
    }

    let mut app_ids = UniqueIds::new("application");
    let mut vm_ids = UniqueIds::new("vm");
    let mut cloudlet_ids = UniqueIds::new("cloudlet");
    for (ai, app) in scenario.applications.iter().enumerate() {
        let base = format!("applications[{ai}]");
        app_ids.check(&app.id, format!("{base}.id"), &mut errors);
        if !device_ids.contains(&app.device_id) {
            errors.push(ValidationError::new(
                format!("{base}.device_id"),
                format!("unknown device \"{}\"", app.device_id),
            ));
        }
        for (oi, owned) in app.owned_nodes.iter().enumerate() {
            if !node_ids.contains(owned) {
                errors.push(ValidationError::new(
                    format!("{base}.owned_nodes[{oi}]"),
                    format!("unknown node \"{owned}\""),
                ));
            }
        }
        check_non_negative(
            app.submit_time_s,
            format!("{base}.submit_time_s"),
            "submit_time_s",
            &mut errors,
        );

        let mut local_vms: HashMap<&str, &Vm> = HashMap::new();
        for (vi, vm) in app.vms.iter().enumerate() {
            vm_ids.check(&vm.id, format!("{base}.vms[{vi}].id"), &mut errors);
            local_vms.insert(&vm.id, vm);
            if vm.cores == 0 {
                errors.push(ValidationError::new(
                    format!("{base}.vms[{vi}].cores"),
                    "cores must be positive",
                ));
            }
            check_positive(
                vm.mips_per_core,
                format!("{base}.vms[{vi}].mips_per_core"),
                "mips_per_core",
                &mut errors,
            );
        }
        for (ci, cl) in app.cloudlets.iter().enumerate() {
            let path = format!("{base}.cloudlets[{ci}]");
            cloudlet_ids.check(&cl.id, format!("{path}.id"), &mut errors);
            check_positive(cl.length_mi, format!("{path}.length_mi"), "length_mi", &mut errors);
            check_non_negative(cl.delay_s, format!("{path}.delay_s"), "delay_s", &mut errors);
            if cl.cores == 0 {
                errors.push(ValidationError::new(format!("{path}.cores"), "cores must be positive"));
            }
            match local_vms.get(cl.vm.as_str()) {
                None => errors.push(ValidationError::new(
                    format!("{path}.vm"),
                    format!("cloudlet \"{}\" references unknown vm \"{}\"", cl.id, cl.vm),
                )),
                Some(vm) if cl.cores > vm.cores => errors.push(ValidationError::new(
                    format!("{path}.cores"),
                    format!(
                        "cloudlet \"{}\" needs {} cores but vm \"{}\" has {}",
                        cl.id, cl.cores, vm.id, vm.cores
                    ),
                )),
                Some(_) => {}
            }
        }
    }

    // Per node, fail/recover events must alternate in time order starting
    // with a failure.
    let mut node_timeline: BTreeMap<&str, Vec<(f64, usize, bool)>> = BTreeMap::new();
    for (ei, ev) in scenario.events.iter().enumerate() {
        let path = format!("events[{ei}]");
        check_non_negative(ev.time_s(), format!("{path}.time_s"), "time_s", &mut errors);
        match ev {
            InjectedEvent::NodeFail { node, time_s } | InjectedEvent::NodeRecover { node, time_s } => {
                if node_ids.contains(node) {
                    let fails = matches!(ev, InjectedEvent::NodeFail { .. });
                    node_timeline.entry(node).or_default().push((*time_s, ei, fails));
                } else {
                    errors.push(ValidationError::new(
                        format!("{path}.node"),
                        format!("unknown node \"{node}\""),
                    ));
                }
            }
            InjectedEvent::ApHandoff { device_id, ap_id, .. } => {
                if !device_ids.contains(device_id) {
                    errors.push(ValidationError::new(
                        format!("{path}.device_id"),
                        format!("unknown device \"{device_id}\""),
                    ));
                }
                if !ap_ids.contains(ap_id) {
                    errors.push(ValidationError::new(
                        format!("{path}.ap_id"),
                        format!("unknown access point \"{ap_id}\""),
                    ));
                }
            }
        }
    }
    for (node, mut timeline) in node_timeline {
        timeline.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut alive = true;
        for (_, ei, fails) in timeline {
            if fails != alive {
                let what = if fails {
                    "fails a node that is already down"
                } else {
                    "recovers a node that is up"
                };
                errors.push(ValidationError::new(
                    format!("events[{ei}]"),
                    format!("event {what} (\"{node}\")"),
                ));
            }
            alive = !fails;
        }
    }

    errors
}
