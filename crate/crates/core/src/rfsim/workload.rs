use serde::Serialize;

use super::config::{Design, RegisterFileConfig};
use super::sim::{simulate, SimError, SimulationReport};
use super::trace::{generate_traces, TraceError, TraceKnobs, WarpTrace};
use crate::cfg::{build_cfg, build_live_ranges, compute_liveness};
use crate::intervals::{
    emit_prefetch_vectors, form_intervals, AnnotatedProgram, BoundaryMode, IntervalCfg, IntervalConfig, IntervalError,
    PrefetchEncoding,
};
use crate::ir::Program;
use crate::renumber::{renumber_program, IcgMembership, RenumberError, RenumberReport};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error(transparent)]
    Renumber(#[from] RenumberError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// A program compiled for every design: the interval partition, the
/// annotated original, its bank-renumbered counterpart (for LTRF_CONF) and
/// traces of both that follow identical paths.
#[derive(Debug, Clone, Serialize)]
pub struct Workload {
    pub intervals: IntervalCfg,
    pub annotated: AnnotatedProgram,
    pub renumbered: AnnotatedProgram,
    pub renumber_report: RenumberReport,
    #[serde(skip)]
    pub traces: Vec<WarpTrace>,
    #[serde(skip)]
    pub renumbered_traces: Vec<WarpTrace>,
}

impl Workload {
    pub fn traces_for(&self, design: Design) -> &[WarpTrace] {
        if design == Design::LtrfConf {
            &self.renumbered_traces
        } else {
            &self.traces
        }
    }
}

/// Forms intervals sized to the cache (`cache_banks` registers), renumbers
/// against the main register file banks and generates `warps` traces.
pub fn prepare_workload<S: Scalar>(
    program: &Program,
    cfg: &RegisterFileConfig<S>,
    boundary_mode: BoundaryMode,
    warps: usize,
    seed: u64,
    knobs: &TraceKnobs,
) -> Result<Workload, WorkloadError> {
    let c = build_cfg(program);
    let l = compute_liveness(&c);
    let interval_cfg = IntervalConfig { max_registers: cfg.cache_banks, boundary_mode };
    let icfg = form_intervals(&c, &l, &interval_cfg)?;
    let annotated = emit_prefetch_vectors(&icfg, PrefetchEncoding::EmbeddedBit);
    let map = build_live_ranges(&c, &l);
    let outcome = renumber_program(&icfg, &map, &cfg.main_layout(), IcgMembership::Accessed)?;
    let renamed_icfg = icfg.with_program(outcome.renumbering.program.clone());
    let renumbered = emit_prefetch_vectors(&renamed_icfg, PrefetchEncoding::EmbeddedBit);
    let traces = generate_traces(&annotated, warps, seed, knobs)?;
    let renumbered_traces = generate_traces(&renumbered, warps, seed, knobs)?;
    Ok(Workload {
        intervals: icfg,
        annotated,
        renumbered,
        renumber_report: outcome.report(),
        traces,
        renumbered_traces,
    })
}

/// Simulates the design on the traces it is meant to run.
pub fn simulate_workload<S: Scalar>(w: &Workload, cfg: &RegisterFileConfig<S>) -> Result<SimulationReport, SimError> {
    simulate(w.traces_for(cfg.design), cfg)
}
