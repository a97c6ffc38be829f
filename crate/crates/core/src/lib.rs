//! Discrete-event simulator of a distributed mobile-cloud architecture.
//!
//! Mobile devices submit applications through access points to a federation
//! of distributed cloud nodes. Applications are allocated largest-first with
//! cross-node spillover, VMs are placed space-shared onto host PEs, and the
//! cloudlets inside each VM share its cores time-shared. Node failures are
//! survived by re-placing evicted VMs from the central allocation log.
//!
//! ```
//! use mccsim::{engine, report};
//!
//! let doc = r#"{
//!   "name": "demo",
//!   "nodes": [{"id": "n1", "hosts": [{"id": "h1", "pes": [250]}]}],
//!   "access_points": [{"id": "ap1", "preferred_node": "n1"}],
//!   "devices": [{"id": "d1", "ap_id": "ap1"}],
//!   "applications": [{
//!     "id": "a1", "device_id": "d1", "class": "public", "submit_time_s": 0,
//!     "vms": [{"id": "v1", "cores": 1, "mips_per_core": 250}],
//!     "cloudlets": [
//!       {"id": "c1", "vm": "v1", "length_mi": 500, "cores": 1},
//!       {"id": "c2", "vm": "v1", "length_mi": 500, "cores": 1}
//!     ]
//!   }]
//! }"#;
//! let scenario = report::parse_scenario(doc).unwrap();
//! let result = engine::run(scenario, Default::default()).unwrap();
//! assert_eq!(result.makespan_ms, 4000.0);
//! ```

pub mod allocator;
pub mod capacity;
pub mod engine;
pub mod log;
pub mod model;
pub mod report;
pub mod scheduler;

pub use engine::{run, Engine, EngineError, RunOptions, RunResult, RunStatus};
pub use model::Scenario;
pub use report::{ReportFormat, ReportRow};
