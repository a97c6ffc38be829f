//! Append-only central allocation/progress log and its replay.
//!
//! Every placement change and every checkpoint of a cloudlet's remaining
//! length is recorded here. Replaying a prefix of the log yields the
//! placement map and remaining lengths as of the prefix's last entry.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AppId, CloudletId, HostId, NodeId, VmId};
use crate::scheduler::VmBinding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Allocated,
    Progress,
    Finished,
    Released,
    Failed,
    Reallocated,
    Recovered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time: f64,
    pub kind: LogKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_id: Option<AppId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vm_id: Option<VmId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloudlet_id: Option<CloudletId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_mi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_id: Option<HostId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pes: Option<Vec<usize>>,
}

impl LogEntry {
    fn bare(time: f64, kind: LogKind) -> Self {
        Self {
            time,
            kind,
            app_id: None,
            vm_id: None,
            cloudlet_id: None,
            remaining_mi: None,
            node_id: None,
            host_id: None,
            pes: None,
        }
    }

    /// `Allocated` or `Reallocated` entry for a VM bound at `binding`.
    pub fn placement(time: f64, kind: LogKind, app: &str, vm: &str, binding: &VmBinding) -> Self {
        Self {
            app_id: Some(app.into()),
            vm_id: Some(vm.into()),
            node_id: Some(binding.node_id.clone()),
            host_id: Some(binding.host_id.clone()),
            pes: Some(binding.pes.clone()),
            ..Self::bare(time, kind)
        }
    }

    pub fn released(time: f64, app: &str, vm: &str, node: &str) -> Self {
        Self {
            app_id: Some(app.into()),
            vm_id: Some(vm.into()),
            node_id: Some(node.into()),
            ..Self::bare(time, LogKind::Released)
        }
    }

    pub fn progress(time: f64, app: &str, vm: &str, cloudlet: &str, remaining_mi: f64) -> Self {
        Self {
            app_id: Some(app.into()),
            vm_id: Some(vm.into()),
            cloudlet_id: Some(cloudlet.into()),
            remaining_mi: Some(remaining_mi),
            ..Self::bare(time, LogKind::Progress)
        }
    }

    pub fn finished(time: f64, app: &str, vm: &str, cloudlet: &str) -> Self {
        Self {
            remaining_mi: Some(0.0),
            kind: LogKind::Finished,
            ..Self::progress(time, app, vm, cloudlet, 0.0)
        }
    }

    pub fn node_failed(time: f64, node: &str) -> Self {
        Self {
            node_id: Some(node.into()),
            ..Self::bare(time, LogKind::Failed)
        }
    }

    pub fn node_recovered(time: f64, node: &str) -> Self {
        Self {
            node_id: Some(node.into()),
            ..Self::bare(time, LogKind::Recovered)
        }
    }

    /// A VM evicted by a node failure.
    pub fn vm_failed(time: f64, app: &str, vm: &str, node: &str) -> Self {
        Self {
            app_id: Some(app.into()),
            vm_id: Some(vm.into()),
            ..Self::node_failed(time, node)
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogError {
    #[error("log time went backwards: {time} < {last}")]
    TimeRegression { time: f64, last: f64 },
    #[error("malformed {kind:?} entry at t={time}: missing {field}")]
    Malformed {
        kind: LogKind,
        time: f64,
        field: &'static str,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CentralLog {
    entries: Vec<LogEntry>,
}

impl CentralLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, entry: LogEntry) -> Result<(), LogError> {
        if let Some(last) = self.entries.last() {
            if entry.time < last.time {
                return Err(LogError::TimeRegression {
                    time: entry.time,
                    last: last.time,
                });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries with `time ≤ t`.
    pub fn prefix_until(&self, t: f64) -> &[LogEntry] {
        let end = self.entries.partition_point(|e| e.time <= t);
        &self.entries[..end]
    }

    pub fn replay(&self) -> Result<ReplayState, LogError> {
        ReplayState::replay(&self.entries)
    }
}

/// Where a VM is placed, as reconstructed from the log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub app_id: AppId,
    pub node_id: NodeId,
    pub host_id: HostId,
    pub pes: Vec<usize>,
}

/// State reconstructed from a log prefix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayState {
    pub placements: BTreeMap<VmId, Placement>,
    pub remaining: BTreeMap<CloudletId, f64>,
    pub dead_nodes: BTreeSet<NodeId>,
}

fn field<T: Clone>(value: &Option<T>, entry: &LogEntry, name: &'static str) -> Result<T, LogError> {
    value.clone().ok_or(LogError::Malformed {
        kind: entry.kind,
        time: entry.time,
        field: name,
    })
}

impl ReplayState {
    pub fn replay(entries: &[LogEntry]) -> Result<Self, LogError> {
        let mut state = Self::default();
        for entry in entries {
            state.apply(entry)?;
        }
        Ok(state)
    }

    pub fn apply(&mut self, entry: &LogEntry) -> Result<(), LogError> {
        match entry.kind {
            LogKind::Allocated | LogKind::Reallocated => {
                let vm = field(&entry.vm_id, entry, "vm_id")?;
                let placement = Placement {
                    app_id: field(&entry.app_id, entry, "app_id")?,
                    node_id: field(&entry.node_id, entry, "node_id")?,
                    host_id: field(&entry.host_id, entry, "host_id")?,
                    pes: field(&entry.pes, entry, "pes")?,
                };
                self.placements.insert(vm, placement);
            }
            LogKind::Released => {
                self.placements.remove(&field(&entry.vm_id, entry, "vm_id")?);
            }
            LogKind::Failed => match &entry.vm_id {
                Some(vm) => {
                    self.placements.remove(vm);
                }
                None => {
                    self.dead_nodes.insert(field(&entry.node_id, entry, "node_id")?);
                }
            },
            LogKind::Recovered => {
                self.dead_nodes.remove(&field(&entry.node_id, entry, "node_id")?);
            }
            LogKind::Progress => {
                let cloudlet = field(&entry.cloudlet_id, entry, "cloudlet_id")?;
                self.remaining
                    .insert(cloudlet, field(&entry.remaining_mi, entry, "remaining_mi")?);
            }
            LogKind::Finished => {
                self.remaining
                    .insert(field(&entry.cloudlet_id, entry, "cloudlet_id")?, 0.0);
            }
        }
        Ok(())
    }

    /// Number of PEs reserved per (node, host).
    pub fn reserved_pes(&self) -> BTreeMap<(NodeId, HostId), Vec<usize>> {
        let mut out: BTreeMap<(NodeId, HostId), Vec<usize>> = BTreeMap::new();
        for p in self.placements.values() {
            out.entry((p.node_id.clone(), p.host_id.clone()))
                .or_default()
                .extend(&p.pes);
        }
        out
    }
}
