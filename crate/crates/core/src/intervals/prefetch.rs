use std::fmt;

use serde::{Deserialize, Serialize};

use super::{IntervalCfg, IntervalId};
use crate::ir::{parse_with_lines, Program, SyntaxError};
use crate::regset::{RegSet, MAX_REGISTERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrefetchEncoding {
    /// Every instruction carries one extra bit announcing a following
    /// bit-vector.
    #[default]
    EmbeddedBit,
    /// A dedicated prefetch instruction precedes each bit-vector.
    ExplicitInstruction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetchMarker {
    /// Index of the interval header instruction the marker precedes.
    pub pc: usize,
    pub interval: IntervalId,
    pub registers: RegSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSizeDelta {
    pub extra_instructions: usize,
    pub extra_bits: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedProgram {
    pub program: Program,
    /// Sorted by `pc`, at most one per instruction.
    pub markers: Vec<PrefetchMarker>,
    pub encoding: PrefetchEncoding,
}

impl AnnotatedProgram {
    pub fn marker_at(&self, pc: usize) -> Option<&PrefetchMarker> {
        self.markers.binary_search_by_key(&pc, |m| m.pc).ok().map(|i| &self.markers[i])
    }

    /// Growth of the static code relative to the unannotated program.
    pub fn code_size_delta(&self) -> CodeSizeDelta {
        let vectors = self.markers.len() * MAX_REGISTERS;
        match self.encoding {
            PrefetchEncoding::EmbeddedBit => {
                CodeSizeDelta { extra_instructions: 0, extra_bits: self.program.len() + vectors }
            }
            PrefetchEncoding::ExplicitInstruction => {
                CodeSizeDelta { extra_instructions: self.markers.len(), extra_bits: vectors }
            }
        }
    }

    /// Static instruction count including explicit prefetch instructions.
    pub fn instruction_count(&self) -> usize {
        self.program.len() + self.code_size_delta().extra_instructions
    }
}

/// Places one marker carrying the interval's working set before each
/// interval header.
pub fn emit_prefetch_vectors(icfg: &IntervalCfg, encoding: PrefetchEncoding) -> AnnotatedProgram {
    let mut markers: Vec<PrefetchMarker> = icfg
        .intervals
        .iter()
        .map(|iv| PrefetchMarker { pc: icfg.header_pc(iv.id), interval: iv.id, registers: iv.prefetch_vector() })
        .collect();
    markers.sort_by_key(|m| m.pc);
    AnnotatedProgram { program: icfg.program.clone(), markers, encoding }
}

impl fmt::Display for AnnotatedProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels = self.program.labels_at();
        for (pc, inst) in self.program.instructions.iter().enumerate() {
            for name in labels.get(&pc).into_iter().flatten() {
                writeln!(f, "{name}:")?;
            }
            if let Some(m) = self.marker_at(pc) {
                writeln!(f, "    .prefetch 0x{}", m.registers.to_hex())?;
            }
            writeln!(f, "    {inst}")?;
        }
        Ok(())
    }
}

/// Reads the textual annotated form; markers are numbered in order of
/// appearance.
pub fn parse_annotated(text: &str, encoding: PrefetchEncoding) -> Result<AnnotatedProgram, SyntaxError> {
    let mut plain = String::with_capacity(text.len());
    let mut pending: Vec<(usize, RegSet)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if let Some(rest) = body.strip_prefix(".prefetch") {
            let hex = rest.trim().trim_end_matches(';').trim();
            let regs = RegSet::from_hex(hex).map_err(|e| SyntaxError::new(lineno + 1, e.to_string()))?;
            pending.push((lineno + 1, regs));
            plain.push('\n');
        } else {
            plain.push_str(line);
            plain.push('\n');
        }
    }
    let (program, inst_lines) = parse_with_lines(&plain)?;
    let mut markers = Vec::with_capacity(pending.len());
    for (ordinal, (line, registers)) in pending.into_iter().enumerate() {
        let pc = inst_lines
            .iter()
            .position(|&l| l > line)
            .ok_or_else(|| SyntaxError::new(line, "prefetch marker precedes no instruction"))?;
        if markers.last().is_some_and(|m: &PrefetchMarker| m.pc == pc) {
            return Err(SyntaxError::new(line, "two prefetch markers before one instruction"));
        }
        markers.push(PrefetchMarker { pc, interval: ordinal, registers });
    }
    Ok(AnnotatedProgram { program, markers, encoding })
}
