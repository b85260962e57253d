//! Register-interval formation, prefetch annotation and interval-length
//! statistics.
//!
//! A register-interval is a single-entry region of the CFG whose register
//! working set fits in one warp's slice of the register cache. Entering an
//! interval prefetches its whole working set, after which every register
//! access inside the interval hits in the cache.

mod form;
mod prefetch;
mod stats;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cfg::{BasicBlock, BlockId};
use crate::ir::Program;
use crate::regset::{RegSet, MAX_REGISTERS};

pub use form::{form_intervals, form_intervals_pass1, reduce_intervals_pass2, reduce_once};
pub use prefetch::{emit_prefetch_vectors, parse_annotated, AnnotatedProgram, CodeSizeDelta, PrefetchEncoding, PrefetchMarker};
pub use stats::{interval_length_stats, optimal_interval_length, DynInstr, LengthStats};

pub type IntervalId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    #[default]
    #[serde(alias = "interval")]
    RegisterInterval,
    /// Additionally end regions at local-memory operations and backward
    /// branches.
    Strand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalConfig {
    /// Largest working set an interval may have.
    pub max_registers: usize,
    pub boundary_mode: BoundaryMode,
}

impl Default for IntervalConfig {
    fn default() -> Self {
        IntervalConfig { max_registers: 16, boundary_mode: BoundaryMode::RegisterInterval }
    }
}

impl IntervalConfig {
    pub fn new(max_registers: usize) -> Self {
        IntervalConfig { max_registers, ..Default::default() }
    }

    pub fn strand(mut self) -> Self {
        self.boundary_mode = BoundaryMode::Strand;
        self
    }

    pub fn validate(&self) -> Result<(), IntervalError> {
        if self.max_registers == 0 || self.max_registers > MAX_REGISTERS {
            return Err(IntervalError::InvalidConfig(format!(
                "max registers per interval must be in 1..={MAX_REGISTERS}, got {}",
                self.max_registers
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IntervalError {
    #[error("irreducible control flow; offending edges {offending_edges:?}")]
    IrreducibleCfg { offending_edges: Vec<(BlockId, BlockId)> },
    #[error("instruction {pc} touches {registers} registers, more than the interval limit {limit}")]
    InstructionTooWide { pc: usize, registers: usize, limit: usize },
    #[error("trace references instruction {pc}, which lies in no interval")]
    TraceMismatch { pc: usize },
    #[error("{0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegisterInterval {
    pub id: IntervalId,
    pub header: BlockId,
    /// Member blocks, ascending; the header is among them.
    pub blocks: Vec<BlockId>,
    pub working_set: RegSet,
    pub succs: Vec<IntervalId>,
    pub preds: Vec<IntervalId>,
}

impl RegisterInterval {
    /// The 256-bit prefetch vector: bit `i` set iff `Ri` is in the working set.
    pub fn prefetch_vector(&self) -> RegSet {
        self.working_set
    }
}

/// Register-interval partition of a CFG whose blocks may have been split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntervalCfg {
    #[serde(skip)]
    pub program: Program,
    pub blocks: Vec<BasicBlock>,
    pub intervals: Vec<RegisterInterval>,
    pub entry: IntervalId,
    pub interval_of_block: Vec<IntervalId>,
    #[serde(skip)]
    pub block_of_pc: Vec<Option<BlockId>>,
    pub config: IntervalConfig,
}

impl IntervalCfg {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn interval_of_pc(&self, pc: usize) -> Option<IntervalId> {
        self.block_of_pc.get(pc).copied().flatten().map(|b| self.interval_of_block[b])
    }

    pub fn header_pc(&self, i: IntervalId) -> usize {
        self.blocks[self.intervals[i].header].start
    }

    /// Instruction ranges of an interval's blocks.
    pub fn ranges(&self, i: IntervalId) -> Vec<Range<usize>> {
        self.intervals[i].blocks.iter().map(|&b| self.blocks[b].range()).collect()
    }

    /// The same partition over a program with identical control flow, such
    /// as a renumbered one; working sets are recomputed.
    pub fn with_program(&self, program: Program) -> IntervalCfg {
        assert_eq!(program.len(), self.program.len(), "partition needs the same instruction count");
        let mut out = self.clone();
        out.program = program;
        for i in 0..out.intervals.len() {
            out.intervals[i].working_set = compute_working_set(&out.program, &out.ranges(i));
        }
        out
    }

    /// Structural problems, empty for a well-formed partition.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.config.max_registers;
        let mut owner = vec![None; self.blocks.len()];
        for iv in &self.intervals {
            if iv.working_set.len() > n {
                out.push(format!("interval {} has {} registers > {n}", iv.id, iv.working_set.len()));
            }
            let expected = compute_working_set(&self.program, &self.ranges(iv.id));
            if iv.working_set != expected {
                out.push(format!("interval {} working set differs from its blocks", iv.id));
            }
            if !iv.blocks.contains(&iv.header) {
                out.push(format!("interval {} header not a member", iv.id));
            }
            for &b in &iv.blocks {
                if let Some(prev) = owner[b].replace(iv.id) {
                    out.push(format!("block {b} in intervals {prev} and {}", iv.id));
                }
                if self.interval_of_block[b] != iv.id {
                    out.push(format!("block {b} map disagrees with interval {}", iv.id));
                }
                if b != iv.header {
                    for &p in &self.blocks[b].preds {
                        if self.interval_of_block[p] != iv.id {
                            out.push(format!("interval {} entered at non-header block {b} from {p}", iv.id));
                        }
                    }
                }
            }
        }
        if let Some(b) = owner.iter().position(Option::is_none) {
            out.push(format!("block {b} belongs to no interval"));
        }
        let mut covered: Vec<Range<usize>> = self.blocks.iter().map(BasicBlock::range).collect();
        covered.sort_by_key(|r| r.start);
        let mut reachable: Vec<usize> = (0..self.program.len()).filter(|&pc| self.block_of_pc[pc].is_some()).collect();
        let flat: Vec<usize> = covered.into_iter().flatten().collect();
        reachable.sort_unstable();
        if flat != reachable {
            out.push("blocks do not tile the reachable instructions".into());
        }
        if !self.blocks.is_empty() && self.header_pc(self.entry) != self.blocks.iter().map(|b| b.start).min().unwrap_or(0) {
            out.push("entry interval does not start at the program entry".into());
        }
        out
    }

    /// Deterministic JSON view.
    pub fn to_json(&self) -> serde_json::Value {
        let intervals: Vec<serde_json::Value> = self
            .intervals
            .iter()
            .map(|iv| {
                serde_json::json!({
                    "id": iv.id,
                    "header_block": iv.header,
                    "header_pc": self.header_pc(iv.id),
                    "blocks": iv.blocks.iter().map(|&b| [self.blocks[b].start, self.blocks[b].end]).collect::<Vec<_>>(),
                    "working_set": iv.working_set,
                    "prefetch_vector": format!("0x{}", iv.prefetch_vector().to_hex()),
                    "succs": iv.succs,
                    "preds": iv.preds,
                })
            })
            .collect();
        serde_json::json!({
            "max_registers": self.config.max_registers,
            "boundary_mode": self.config.boundary_mode,
            "entry": self.entry,
            "intervals": intervals,
        })
    }
}

/// Every general register read or written in `ranges`.
pub fn compute_working_set(program: &Program, ranges: &[Range<usize>]) -> RegSet {
    let mut ws = RegSet::new();
    for r in ranges {
        for inst in &program.instructions[r.clone()] {
            ws.union_with(&inst.general_registers());
        }
    }
    ws
}
