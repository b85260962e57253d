use rayon::prelude::*;
use serde::Serialize;

use super::config::{ConfigError, Design, RegisterFileConfig};
use super::sim::{simulate, SimError, SimulationReport};
use super::trace::WarpTrace;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub multiplier: f64,
    pub cycles: u64,
    pub instructions: u64,
    pub ipc: f64,
    /// IPC relative to the same design at multiplier 1.
    pub relative_ipc: f64,
    pub tolerated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TolerableLatency {
    pub design: Design,
    /// Largest multiplier of the tolerated prefix of the sweep.
    pub multiplier: f64,
    pub index: Option<usize>,
    pub baseline_ipc: f64,
    pub points: Vec<SweepPoint>,
}

/// Simulates every multiplier, in parallel; results keep sweep order.
pub fn sweep<S: Scalar>(
    traces: &[WarpTrace],
    base: &RegisterFileConfig<S>,
    multipliers: &[S],
) -> Result<Vec<SimulationReport>, SimError> {
    multipliers.par_iter().map(|&m| simulate(traces, &base.with_multiplier(m))).collect()
}

/// IPC(m) >= 0.95 * IPC(1), compared exactly.
fn within_five_percent(r: &SimulationReport, base: &SimulationReport) -> bool {
    if base.cycles == 0 || base.instructions == 0 {
        return true;
    }
    let lhs = r.instructions as u128 * base.cycles as u128 * 100;
    let rhs = base.instructions as u128 * r.cycles as u128 * 95;
    lhs >= rhs
}

/// Largest sweep multiplier such that it and every smaller sweep point keep
/// IPC within 5% of the IPC at multiplier 1. Returns 1 when even the first
/// point loses more than that. `sweep` must be strictly ascending.
pub fn max_tolerable_latency<S: Scalar>(
    traces: &[WarpTrace],
    base: &RegisterFileConfig<S>,
    sweep_points: &[S],
) -> Result<TolerableLatency, SimError> {
    if sweep_points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConfigError("sweep multipliers must be strictly ascending".into()).into());
    }
    let one = S::one();
    let mut all: Vec<S> = sweep_points.to_vec();
    let has_one = all.contains(&one);
    if !has_one {
        all.push(one);
    }
    let mut reports = sweep(traces, base, &all)?;
    let baseline = if has_one {
        reports[all.iter().position(|&m| m == one).expect("present")].clone()
    } else {
        reports.pop().expect("baseline appended")
    };
    let mut index = None;
    let mut prefix = true;
    let points = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let ok = within_five_percent(r, &baseline);
            prefix &= ok;
            if prefix {
                index = Some(i);
            }
            SweepPoint {
                multiplier: r.bank_latency_multiplier,
                cycles: r.cycles,
                instructions: r.instructions,
                ipc: r.ipc,
                relative_ipc: if baseline.ipc > 0.0 { r.ipc / baseline.ipc } else { 1.0 },
                tolerated: ok,
            }
        })
        .collect();
    Ok(TolerableLatency {
        design: base.design,
        multiplier: index.map_or(1.0, |i| sweep_points[i].to_f64_lossy()),
        index,
        baseline_ipc: baseline.ipc,
        points,
    })
}
