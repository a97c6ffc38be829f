#![allow(dead_code)]

use std::path::PathBuf;

use mccsim::model::{AccessPoint, Application, ApplicationClass, CloudNode, CloudletSpec, Host, MobileDevice, Vm};
use mccsim::Scenario;

pub const BUNDLED: [&str; 5] = [
    "failover",
    "mobility_recovery",
    "table2_row1",
    "table2_row2",
    "table2_row3",
];

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn bundled(name: &str) -> Scenario {
    let path = scenario_dir().join(format!("{name}.scenario"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    mccsim::report::parse_scenario(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn all_bundled() -> Vec<Scenario> {
    BUNDLED.iter().map(|n| bundled(n)).collect()
}

/// A task for the fluid oracle: arrival time, length, core width.
#[derive(Clone, Debug)]
pub struct FluidTask {
    pub arrival: f64,
    pub length: f64,
    pub cores: u32,
}

/// Piecewise-exact processor-sharing schedule of `tasks` on one VM of
/// `vm_cores` cores at `mips` each: while the running tasks demand `D`
/// cores in total, task `p` runs at `cores(p) · vm_cores · mips / max(D, vm_cores)`.
/// Returns each task's finish time.
pub fn fluid_finish_times(vm_cores: u32, mips: f64, tasks: &[FluidTask]) -> Vec<f64> {
    let total = f64::from(vm_cores) * mips;
    let n = tasks.len();
    let mut remaining: Vec<f64> = tasks.iter().map(|t| t.length).collect();
    let mut finish = vec![f64::NAN; n];
    let mut arrived = vec![false; n];
    let mut t = 0.0_f64;
    loop {
        for i in 0..n {
            if !arrived[i] && tasks[i].arrival <= t {
                arrived[i] = true;
            }
        }
        let active: Vec<usize> = (0..n).filter(|&i| arrived[i] && finish[i].is_nan()).collect();
        let next_arrival = (0..n)
            .filter(|&i| !arrived[i])
            .map(|i| tasks[i].arrival)
            .fold(f64::INFINITY, f64::min);
        if active.is_empty() {
            if next_arrival.is_infinite() {
                break;
            }
            t = next_arrival;
            continue;
        }
        let demand: u32 = active.iter().map(|&i| tasks[i].cores).sum();
        let per_core = total / f64::from(demand.max(vm_cores));
        let rate = |i: usize| per_core * f64::from(tasks[i].cores);
        let to_finish = active
            .iter()
            .map(|&i| remaining[i] / rate(i))
            .fold(f64::INFINITY, f64::min);
        let step = to_finish.min(next_arrival - t);
        for &i in &active {
            remaining[i] -= rate(i) * step;
        }
        t += step;
        for &i in &active {
            if remaining[i] <= 1e-9 * tasks[i].length.max(1.0) {
                finish[i] = t;
            }
        }
    }
    finish
}

/// One application with one VM and the given tasks, arrivals realized as
/// cloudlet delays. Zero AP latency, submission at t = 0.
pub fn single_vm_scenario(vm_cores: u32, mips: f64, tasks: &[FluidTask]) -> Scenario {
    Scenario {
        name: "single-vm".into(),
        seed: 0,
        dynamic: true,
        nodes: vec![CloudNode {
            id: "n1".into(),
            hosts: vec![Host::new("h1", &vec![mips; vm_cores as usize])],
        }],
        access_points: vec![AccessPoint {
            id: "ap".into(),
            preferred_node: "n1".into(),
            latency_ms: 0.0,
        }],
        devices: vec![MobileDevice {
            id: "d".into(),
            ap_id: "ap".into(),
        }],
        applications: vec![Application {
            id: "a".into(),
            device_id: "d".into(),
            class: ApplicationClass::Public,
            owned_nodes: vec![],
            submit_time_s: 0.0,
            vms: vec![Vm::new("v", vm_cores, mips)],
            cloudlets: tasks
                .iter()
                .enumerate()
                .map(|(i, t)| CloudletSpec {
                    id: format!("c{i}"),
                    vm: "v".into(),
                    length_mi: t.length,
                    cores: t.cores,
                    delay_s: t.arrival,
                })
                .collect(),
        }],
        events: vec![],
    }
}
