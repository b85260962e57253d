use serde::{Deserialize, Serialize};

use super::{IntervalCfg, IntervalError};
use crate::regset::RegSet;

/// One dynamically executed instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynInstr {
    pub pc: usize,
    /// General registers read or written.
    pub registers: RegSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LengthStats {
    pub avg: f64,
    pub min: usize,
    pub max: usize,
    /// Number of segments the averages are taken over.
    pub segments: usize,
    pub instructions: usize,
}

impl LengthStats {
    fn from_lengths(lengths: &[usize]) -> Self {
        if lengths.is_empty() {
            return LengthStats::default();
        }
        let total: usize = lengths.iter().sum();
        LengthStats {
            avg: total as f64 / lengths.len() as f64,
            min: *lengths.iter().min().unwrap_or(&0),
            max: *lengths.iter().max().unwrap_or(&0),
            segments: lengths.len(),
            instructions: total,
        }
    }
}

/// Dynamic instruction counts per interval visit. A visit is a maximal run
/// of consecutive trace entries inside one interval.
pub fn interval_length_stats(icfg: &IntervalCfg, trace: &[DynInstr]) -> Result<LengthStats, IntervalError> {
    let mut lengths = Vec::new();
    let mut current = None;
    for d in trace {
        let iv = icfg.interval_of_pc(d.pc).ok_or(IntervalError::TraceMismatch { pc: d.pc })?;
        if current == Some(iv) {
            *lengths.last_mut().expect("a visit is open") += 1;
        } else {
            current = Some(iv);
            lengths.push(1);
        }
    }
    Ok(LengthStats::from_lengths(&lengths))
}

/// Greedy segmentation of the trace into maximal runs touching at most `n`
/// distinct registers. Greedy cutting yields the fewest segments, so its
/// average is an upper bound on any valid partition's average.
pub fn optimal_interval_length(trace: &[DynInstr], n: usize) -> LengthStats {
    let mut lengths = Vec::new();
    let mut regs = RegSet::new();
    let mut len = 0;
    for d in trace {
        let merged = regs.union(&d.registers);
        if len > 0 && merged.len() > n {
            lengths.push(len);
            regs = d.registers;
            len = 1;
        } else {
            regs = merged;
            len += 1;
        }
    }
    if len > 0 {
        lengths.push(len);
    }
    LengthStats::from_lengths(&lengths)
}
