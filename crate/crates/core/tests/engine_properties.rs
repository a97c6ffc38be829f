mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::{all_bundled, fluid_finish_times, single_vm_scenario, FluidTask};
use mccsim::allocator::sort_applications;
use mccsim::engine::{Engine, RunOptions, RunStatus};
use mccsim::log::LogKind;
use mccsim::model::{
    resource_requirement, validate_scenario, AccessPoint, Application, ApplicationClass, CloudNode, CloudletSpec, Host,
    InjectedEvent, MobileDevice, Vm,
};
use mccsim::report::{parse_scenario, serialize_scenario};
use mccsim::Scenario;

fn fluid_tasks(max_cores: u32) -> impl Strategy<Value = Vec<FluidTask>> {
    prop::collection::vec(
        (prop_oneof![Just(0.0), 0.0..6.0f64], 50.0..4000.0f64, 1..=max_cores)
            .prop_map(|(arrival, length, cores)| FluidTask { arrival, length, cores }),
        1..=6,
    )
}

#[derive(Clone, Debug)]
struct AppShape {
    class: ApplicationClass,
    owner: usize,
    submit: f64,
    vms: Vec<u32>,
    cloudlets: Vec<(usize, f64)>,
}

fn app_shape(nodes: usize) -> impl Strategy<Value = AppShape> {
    (
        prop_oneof![
            Just(ApplicationClass::Private),
            Just(ApplicationClass::Hybrid),
            Just(ApplicationClass::Public)
        ],
        0..nodes,
        0.0..4.0f64,
        prop::collection::vec(1..=2u32, 1..=2),
        prop::collection::vec((0..2usize, 100.0..3000.0f64), 1..=3),
    )
        .prop_map(|(class, owner, submit, vms, cloudlets)| AppShape {
            class,
            owner,
            submit,
            vms,
            cloudlets,
        })
}

/// A small federation: every node has hosts of two 500-MIPS PEs, so every
/// generated VM fits somewhere as long as one node is alive.
fn federation() -> impl Strategy<Value = Scenario> {
    (2..=3usize)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(1..=2usize, n),
                prop::collection::vec(0.0..20.0f64, n),
                prop::collection::vec(app_shape(n), 1..=5),
                prop::option::of((0..n, 0.5..6.0f64, prop::option::of(1.0..5.0f64))),
                any::<bool>(),
            )
        })
        .prop_map(|(n, hosts, latency, shapes, failure, dynamic)| {
            let node_id = |i: usize| format!("n{i}");
            let nodes = (0..n)
                .map(|i| CloudNode {
                    id: node_id(i),
                    hosts: (0..hosts[i])
                        .map(|h| Host::new(format!("n{i}-h{h}"), &[500.0, 500.0]))
                        .collect(),
                })
                .collect();
            let access_points = (0..n)
                .map(|i| AccessPoint {
                    id: format!("ap{i}"),
                    preferred_node: node_id(i),
                    latency_ms: latency[i],
                })
                .collect();
            let devices = (0..n)
                .map(|i| MobileDevice {
                    id: format!("d{i}"),
                    ap_id: format!("ap{i}"),
                })
                .collect();
            let applications = shapes
                .iter()
                .enumerate()
                .map(|(a, shape)| {
                    let vms: Vec<Vm> = shape
                        .vms
                        .iter()
                        .enumerate()
                        .map(|(v, &cores)| Vm::new(format!("a{a}-v{v}"), cores, 250.0))
                        .collect();
                    let cloudlets = shape
                        .cloudlets
                        .iter()
                        .enumerate()
                        .map(|(c, &(vm, length))| CloudletSpec {
                            id: format!("a{a}-c{c}"),
                            vm: vms[vm % vms.len()].id.clone(),
                            length_mi: length,
                            cores: 1,
                            delay_s: 0.0,
                        })
                        .collect();
                    Application {
                        id: format!("a{a}"),
                        device_id: format!("d{}", a % n),
                        class: shape.class,
                        owned_nodes: match shape.class {
                            ApplicationClass::Public => vec![],
                            _ => vec![node_id(shape.owner)],
                        },
                        submit_time_s: shape.submit,
                        vms,
                        cloudlets,
                    }
                })
                .collect();
            let mut events = Vec::new();
            if let Some((node, at, recover_after)) = failure {
                events.push(InjectedEvent::NodeFail {
                    time_s: at,
                    node: node_id(node),
                });
                if let Some(dt) = recover_after {
                    events.push(InjectedEvent::NodeRecover {
                        time_s: at + dt,
                        node: node_id(node),
                    });
                }
            }
            Scenario {
                name: "generated".into(),
                seed: 0,
                dynamic,
                nodes,
                access_points,
                devices,
                applications,
                events,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn engine_matches_fluid_schedule(vm_cores in 1..=3u32, mips in 100.0..1000.0f64, seed_tasks in fluid_tasks(3)) {
        let tasks: Vec<FluidTask> = seed_tasks
            .into_iter()
            .map(|t| FluidTask { cores: t.cores.min(vm_cores), ..t })
            .collect();
        let expected = fluid_finish_times(vm_cores, mips, &tasks);
        let result = mccsim::run(single_vm_scenario(vm_cores, mips, &tasks), RunOptions::default()).unwrap();
        for (outcome, want) in result.cloudlets.iter().zip(&expected) {
            let got = outcome.finish_time_s.unwrap();
            prop_assert!((got - want).abs() <= 1e-6, "{}: {} vs {}", outcome.id, got, want);
        }
    }

    #[test]
    fn identical_tasks_finish_together(vm_cores in 1..=4u32, n in 1..=8usize, length in 100.0..5000.0f64) {
        let tasks = vec![FluidTask { arrival: 0.0, length, cores: 1 }; n];
        let result = mccsim::run(single_vm_scenario(vm_cores, 250.0, &tasks), RunOptions::default()).unwrap();
        let finish: Vec<f64> = result.cloudlets.iter().map(|c| c.finish_time_s.unwrap()).collect();
        let expected = length * n.max(vm_cores as usize) as f64 / (250.0 * f64::from(vm_cores));
        for f in finish {
            prop_assert!((f - expected).abs() <= 1e-9 * expected.max(1.0));
        }
    }

    #[test]
    fn generated_runs_keep_invariants(scenario in federation()) {
        prop_assert!(validate_scenario(&scenario).is_empty());
        let mut engine = Engine::new(scenario.clone(), RunOptions::default()).unwrap();
        engine.run_until(f64::INFINITY).unwrap();
        let live = engine.snapshot();
        let result = engine.finish();

        // Log is time-ordered and replays to the live state.
        let entries = result.log.entries();
        prop_assert!(entries.windows(2).all(|w| w[0].time <= w[1].time));
        prop_assert_eq!(result.log.replay().unwrap(), live);

        // Each cloudlet completes at most once, and every completion is real.
        let finished = result.cloudlets.iter().filter(|c| c.finish_time_s.is_some()).count();
        prop_assert_eq!(result.completions, finished);
        let finish_entries = entries.iter().filter(|e| e.kind == LogKind::Finished).count();
        prop_assert_eq!(finish_entries, finished);
        if result.status == RunStatus::Completed {
            prop_assert_eq!(finished, scenario.cloudlet_count());
        }

        // Work conservation, including partially executed cloudlets.
        let done: f64 = result.cloudlets.iter().map(|c| c.length_mi - c.remaining_mi).sum();
        prop_assert!((result.executed_mi - done).abs() <= 1e-6 * done.max(1.0));
        for c in &result.cloudlets {
            prop_assert!(c.remaining_mi >= 0.0 && c.remaining_mi <= c.length_mi);
        }

        // Private VMs only ever land on owned nodes.
        let owned: BTreeMap<&str, &Application> = scenario.applications.iter().map(|a| (a.id.as_str(), a)).collect();
        for e in entries.iter().filter(|e| matches!(e.kind, LogKind::Allocated | LogKind::Reallocated)) {
            let app = owned[e.app_id.as_deref().unwrap()];
            if app.class == ApplicationClass::Private {
                prop_assert!(app.owned_nodes.contains(e.node_id.as_ref().unwrap()));
            }
        }
    }

    #[test]
    fn failure_never_shortens_a_lone_task(length in 100.0..5000.0f64, at in 0.0..30.0f64) {
        let mut scenario = common::bundled("failover");
        scenario.applications[0].cloudlets[0].length_mi = length;
        let mut baseline = scenario.clone();
        baseline.events.clear();
        scenario.events = vec![InjectedEvent::NodeFail { time_s: at, node: "node-1".into() }];
        let failed = mccsim::run(scenario, RunOptions::default()).unwrap();
        let base = mccsim::run(baseline, RunOptions::default()).unwrap();
        prop_assert_eq!(failed.status, RunStatus::Completed);
        prop_assert!(failed.makespan_ms >= base.makespan_ms - 1e-6);
    }

    #[test]
    fn sorting_is_a_stable_permutation(reqs in prop::collection::vec(1..=4u32, 0..12)) {
        let apps: Vec<Application> = reqs
            .iter()
            .enumerate()
            .map(|(i, &cores)| Application {
                id: format!("a{i}"),
                device_id: "d".into(),
                class: ApplicationClass::Public,
                owned_nodes: vec![],
                submit_time_s: 0.0,
                vms: vec![Vm::new(format!("v{i}"), cores, 100.0)],
                cloudlets: vec![],
            })
            .collect();
        let refs: Vec<&Application> = apps.iter().collect();
        let sorted = sort_applications(&refs);
        let mut ids: Vec<&str> = sorted.iter().map(|a| a.id.as_str()).collect();
        let index = |a: &Application| a.id[1..].parse::<usize>().unwrap();
        for pair in sorted.windows(2) {
            let (a, b) = (resource_requirement(pair[0]), resource_requirement(pair[1]));
            prop_assert!(a > b || (a == b && index(pair[0]) < index(pair[1])));
        }
        ids.sort_unstable();
        let mut original: Vec<&str> = apps.iter().map(|a| a.id.as_str()).collect();
        original.sort_unstable();
        prop_assert_eq!(ids, original);
    }
}

#[test]
fn bundled_scenarios_are_valid() {
    for s in all_bundled() {
        assert_eq!(validate_scenario(&s), vec![], "{}", s.name);
    }
}

#[test]
fn bundled_scenarios_round_trip() {
    for s in all_bundled() {
        let text = serialize_scenario(&s);
        assert_eq!(parse_scenario(&text).unwrap(), s, "{}", s.name);
    }
}

#[test]
fn bundled_runs_never_double_complete() {
    for s in all_bundled() {
        let result = mccsim::run(s.clone(), RunOptions::default()).unwrap();
        assert_eq!(result.status, RunStatus::Completed, "{}", s.name);
        assert_eq!(result.completions, s.cloudlet_count(), "{}", s.name);
    }
}
