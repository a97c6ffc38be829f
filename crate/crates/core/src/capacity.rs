//! Processing-capacity formulas for space-shared hosts and time-shared VMs,
//! the estimated finish time of a cloudlet, and linear progress between
//! scheduling events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Cloudlet, ProcessingElement};

/// Remaining length at or below which a cloudlet counts as finished.
pub const COMPLETION_EPSILON_MI: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CapacityError {
    #[error("host has no processing elements")]
    NoProcessingElements,
    #[error("no processing capacity")]
    NoCapacity,
    #[error("elapsed time must be non-negative, got {0}")]
    NegativeElapsed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapacityBasis {
    SpaceShared,
    TimeShared,
}

/// Per-core capacity together with the policy that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityView {
    pub per_core_capacity: f64,
    pub basis: CapacityBasis,
}

impl CapacityView {
    pub fn space_shared(pes: &[ProcessingElement]) -> Result<Self, CapacityError> {
        Ok(Self {
            per_core_capacity: space_shared_capacity(pes)?,
            basis: CapacityBasis::SpaceShared,
        })
    }

    pub fn time_shared(pes: &[ProcessingElement], active_core_demand: u32) -> Result<Self, CapacityError> {
        Ok(Self {
            per_core_capacity: time_shared_capacity(pes, active_core_demand)?,
            basis: CapacityBasis::TimeShared,
        })
    }
}

/// Capacity of a host under exclusive PE reservation: the mean PE strength,
/// Σ cap(i) / np.
pub fn space_shared_capacity(pes: &[ProcessingElement]) -> Result<f64, CapacityError> {
    if pes.is_empty() {
        return Err(CapacityError::NoProcessingElements);
    }
    let total: f64 = pes.iter().map(|pe| pe.mips).sum();
    Ok(total / pes.len() as f64)
}

/// Per-core capacity when cloudlets demanding `active_core_demand` cores in
/// total share the PE set: Σ cap(i) / max(Σ cores(j), np).
pub fn time_shared_capacity(pes: &[ProcessingElement], active_core_demand: u32) -> Result<f64, CapacityError> {
    if pes.is_empty() {
        return Err(CapacityError::NoProcessingElements);
    }
    let total: f64 = pes.iter().map(|pe| pe.mips).sum();
    let np = pes.len() as f64;
    Ok(total / f64::from(active_core_demand).max(np))
}

/// Time at which `remaining_mi` will have been executed at `capacity` MIPS
/// per core on `cores` cores, starting from `ct`.
pub fn estimated_finish_time(ct: f64, remaining_mi: f64, capacity: f64, cores: u32) -> Result<f64, CapacityError> {
    if capacity.is_nan() || capacity <= 0.0 {
        return Err(CapacityError::NoCapacity);
    }
    if remaining_mi == 0.0 {
        return Ok(ct);
    }
    Ok(ct + remaining_mi / (capacity * f64::from(cores)))
}

/// Remaining length of `cloudlet` after running `dt` seconds at
/// `capacity` MIPS per core.
pub fn advance_progress(cloudlet: &Cloudlet, capacity: f64, dt: f64) -> Result<f64, CapacityError> {
    if dt < 0.0 || dt.is_nan() {
        return Err(CapacityError::NegativeElapsed(dt));
    }
    if dt == 0.0 {
        return Ok(cloudlet.remaining_mi);
    }
    let executed = capacity * f64::from(cloudlet.cores) * dt;
    Ok((cloudlet.remaining_mi - executed).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pes(mips: &[f64]) -> Vec<ProcessingElement> {
        mips.iter().copied().map(ProcessingElement::new).collect()
    }

    fn running(remaining: f64, cores: u32) -> Cloudlet {
        let mut c = Cloudlet::new("c", "v", remaining.max(1.0), cores);
        c.remaining_mi = remaining;
        c
    }

    #[test]
    fn space_shared_examples() {
        assert_eq!(space_shared_capacity(&pes(&[250.0; 4])).unwrap(), 250.0);
        assert_eq!(space_shared_capacity(&pes(&[500.0])).unwrap(), 500.0);
        assert_eq!(space_shared_capacity(&pes(&[100.0, 200.0, 300.0])).unwrap(), 200.0);
        assert_eq!(space_shared_capacity(&[]), Err(CapacityError::NoProcessingElements));
        assert_eq!(
            CapacityError::NoProcessingElements.to_string(),
            "host has no processing elements"
        );
    }

    #[test]
    fn time_shared_examples() {
        let four = pes(&[250.0; 4]);
        assert_eq!(time_shared_capacity(&four, 2).unwrap(), 250.0);
        assert_eq!(time_shared_capacity(&four, 8).unwrap(), 125.0);
        assert_eq!(time_shared_capacity(&four, 0).unwrap(), 250.0);
        assert!(time_shared_capacity(&[], 1).is_err());
    }

    #[test]
    fn finish_time_examples() {
        assert_eq!(estimated_finish_time(100.0, 0.0, 7.0, 3).unwrap(), 100.0);
        assert_eq!(estimated_finish_time(0.0, 1000.0, 250.0, 1).unwrap(), 4.0);
        assert_eq!(estimated_finish_time(10.0, 500.0, 125.0, 2).unwrap(), 12.0);
        assert_eq!(estimated_finish_time(0.0, 1.0, 0.0, 1), Err(CapacityError::NoCapacity));
        assert_eq!(CapacityError::NoCapacity.to_string(), "no processing capacity");
    }

    #[test]
    fn progress_examples() {
        assert_eq!(advance_progress(&running(1000.0, 1), 250.0, 2.0).unwrap(), 500.0);
        assert_eq!(advance_progress(&running(733.0, 3), 250.0, 0.0).unwrap(), 733.0);
        assert_eq!(advance_progress(&running(500.0, 2), 125.0, 2.0).unwrap(), 0.0);
        assert!(advance_progress(&running(1.0, 1), 1.0, -0.5).is_err());
    }

    #[test]
    fn views_tag_basis() {
        let four = pes(&[250.0; 4]);
        let ts = CapacityView::time_shared(&four, 8).unwrap();
        let ss = CapacityView::space_shared(&four).unwrap();
        assert_eq!(ts.basis, CapacityBasis::TimeShared);
        assert!(ts.per_core_capacity <= ss.per_core_capacity);
    }

    fn pe_set() -> impl Strategy<Value = Vec<ProcessingElement>> {
        prop::collection::vec(1.0f64..10_000.0, 1..=16).prop_map(|v| pes(&v))
    }

    proptest! {
        #[test]
        fn dominance(pes in pe_set(), demand in 0u32..=64) {
            let ss = space_shared_capacity(&pes).unwrap();
            let ts = time_shared_capacity(&pes, demand).unwrap();
            prop_assert!(ts <= ss);
            prop_assert_eq!(ts == ss, demand as usize <= pes.len());
        }

        #[test]
        fn space_shared_within_bounds(pes in pe_set()) {
            let c = space_shared_capacity(&pes).unwrap();
            let lo = pes.iter().map(|p| p.mips).fold(f64::INFINITY, f64::min);
            let hi = pes.iter().map(|p| p.mips).fold(0.0, f64::max);
            prop_assert!(c >= lo * (1.0 - 1e-12) && c <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn progress_to_eft_completes(
            ct in 0.0f64..10.0,
            remaining in 0.0f64..1e6,
            capacity in 1.0f64..10_000.0,
            cores in 1u32..=8,
        ) {
            let eft = estimated_finish_time(ct, remaining, capacity, cores).unwrap();
            let left = advance_progress(&running(remaining, cores), capacity, eft - ct).unwrap();
            prop_assert!(left <= COMPLETION_EPSILON_MI, "left {left}");
        }

        #[test]
        fn aggregate_rate_never_exceeds_hardware(
            pes in pe_set(),
            widths in prop::collection::vec(1u32..=8, 0..12),
        ) {
            let demand: u32 = widths.iter().sum();
            let cap = time_shared_capacity(&pes, demand).unwrap();
            let rate: f64 = widths.iter().map(|w| cap * f64::from(*w)).sum();
            let hardware: f64 = pes.iter().map(|p| p.mips).sum();
            prop_assert!(rate <= hardware * (1.0 + 1e-12));
        }
    }
}
