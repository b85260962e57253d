use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cfg::{build_cfg, compute_liveness};
use crate::intervals::{AnnotatedProgram, DynInstr, IntervalId};
use crate::ir::Opcode;
use crate::regset::RegSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Exec {
        pc: usize,
        reads: Vec<u16>,
        writes: Vec<u16>,
        /// Bit `i` set when `reads[i]` is dead after the instruction.
        dead: u64,
    },
    IntervalEnter {
        interval: IntervalId,
        prefetch: RegSet,
        /// General registers live on entry to the header.
        live: RegSet,
    },
    LongLatency {
        class: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpTrace {
    pub warp: usize,
    pub events: Vec<TraceEvent>,
}

impl WarpTrace {
    pub fn instructions(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, TraceEvent::Exec { .. })).count()
    }

    pub fn interval_enters(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, TraceEvent::IntervalEnter { .. })).count()
    }

    /// The executed instructions with the registers each one touches.
    pub fn dyn_instrs(&self) -> Vec<DynInstr> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Exec { pc, reads, writes, .. } => {
                    Some(DynInstr { pc: *pc, registers: reads.iter().chain(writes).copied().collect() })
                }
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceKnobs {
    /// Bounds on how many times a loop body runs per loop entry.
    pub min_trip: u32,
    pub max_trip: u32,
    /// Probability that a guarded forward branch or guarded exit is taken.
    pub branch_taken_probability: f64,
    /// Probability that a local load misses and stalls the warp.
    pub load_frequency: f64,
    /// Per-warp cap on executed instructions.
    pub max_steps: usize,
}

impl Default for TraceKnobs {
    fn default() -> Self {
        TraceKnobs {
            min_trip: 2,
            max_trip: 8,
            branch_taken_probability: 0.5,
            load_frequency: 0.1,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("warp {warp} did not terminate within {steps} instructions (last pc {pc})")]
    NonTerminatingPath { warp: usize, pc: usize, steps: usize },
    #[error("invalid trace knobs: {0}")]
    InvalidKnobs(String),
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl TraceKnobs {
    pub fn validate(&self) -> Result<(), TraceError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.min_trip == 0 || self.min_trip > self.max_trip {
            return Err(TraceError::InvalidKnobs(format!("trip bounds {}..={}", self.min_trip, self.max_trip)));
        }
        if !prob(self.branch_taken_probability) || !prob(self.load_frequency) {
            return Err(TraceError::InvalidKnobs("probabilities must lie in [0, 1]".into()));
        }
        if self.max_steps == 0 {
            return Err(TraceError::InvalidKnobs("max_steps must be positive".into()));
        }
        Ok(())
    }
}

fn warp_rng(seed: u64, warp: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (warp as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Synthesises one control-flow path per warp. Guarded backward branches
/// close loops whose trip counts come from the knobs; other guarded
/// branches and exits are taken at random. Each arrival at an interval
/// header emits its prefetch event.
pub fn generate_traces(
    annotated: &AnnotatedProgram,
    warps: usize,
    seed: u64,
    knobs: &TraceKnobs,
) -> Result<Vec<WarpTrace>, TraceError> {
    knobs.validate()?;
    let program = &annotated.program;
    let liveness = compute_liveness(&build_cfg(program));
    let n = program.len();

    let mut out = Vec::with_capacity(warps);
    for warp in 0..warps {
        let mut rng = warp_rng(seed, warp);
        let mut events = Vec::new();
        let mut remaining: BTreeMap<usize, u32> = BTreeMap::new();
        let mut pc = 0;
        let mut steps = 0;
        while pc < n {
            if steps == knobs.max_steps {
                return Err(TraceError::NonTerminatingPath { warp, pc, steps });
            }
            steps += 1;
            if let Some(m) = annotated.marker_at(pc) {
                events.push(TraceEvent::IntervalEnter {
                    interval: m.interval,
                    prefetch: m.registers,
                    live: liveness.inst_live_in[pc],
                });
            }
            let inst = &program.instructions[pc];
            let mut reads: Vec<u16> = Vec::new();
            for (_, r) in inst.general_uses() {
                if !reads.contains(&r.index) {
                    reads.push(r.index);
                }
            }
            let writes: Vec<u16> = inst.general_def().map(|r| r.index).into_iter().collect();
            let live_out = &liveness.inst_live_out[pc];
            let dead = reads.iter().enumerate().filter(|(_, r)| !live_out.contains(**r)).fold(0u64, |m, (i, _)| m | 1 << i);
            events.push(TraceEvent::Exec { pc, reads, writes, dead });
            if inst.opcode == Opcode::LdLocal && rng.random_bool(knobs.load_frequency) {
                events.push(TraceEvent::LongLatency { class: "mem".into() });
            }

            let guarded = inst.guard.is_some();
            pc = match inst.opcode {
                Opcode::Exit if !guarded || rng.random_bool(knobs.branch_taken_probability) => n,
                Opcode::Bra => {
                    let target = program.branch_target(pc).expect("validated branch");
                    let taken = if !guarded {
                        true
                    } else if target <= pc {
                        let left = remaining
                            .entry(pc)
                            .or_insert_with(|| rng.random_range(knobs.min_trip..=knobs.max_trip) - 1);
                        if *left > 0 {
                            *left -= 1;
                            true
                        } else {
                            remaining.remove(&pc);
                            false
                        }
                    } else {
                        rng.random_bool(knobs.branch_taken_probability)
                    };
                    if taken {
                        target
                    } else {
                        pc + 1
                    }
                }
                _ => pc + 1,
            };
        }
        out.push(WarpTrace { warp, events });
    }
    Ok(out)
}

fn join(regs: &[u16]) -> String {
    regs.iter().map(u16::to_string).collect::<Vec<_>>().join(",")
}

/// One event per line:
/// `W<id> E <pc> R:<r,...> W:<r,...> D:<mask>`, `W<id> I <interval> V:<hex> L:<hex>`,
/// `W<id> M <class>`.
pub fn traces_to_text(traces: &[WarpTrace]) -> String {
    let mut s = String::new();
    for t in traces {
        for e in &t.events {
            let _ = match e {
                TraceEvent::Exec { pc, reads, writes, dead } => {
                    writeln!(s, "W{} E {pc} R:{} W:{} D:{dead}", t.warp, join(reads), join(writes))
                }
                TraceEvent::IntervalEnter { interval, prefetch, live } => {
                    writeln!(s, "W{} I {interval} V:{} L:{}", t.warp, prefetch.to_hex(), live.to_hex())
                }
                TraceEvent::LongLatency { class } => writeln!(s, "W{} M {class}", t.warp),
            };
        }
    }
    s
}

fn field<'a>(tok: Option<&'a str>, tag: &str, line: usize) -> Result<&'a str, TraceError> {
    tok.and_then(|t| t.strip_prefix(tag))
        .ok_or_else(|| TraceError::Parse { line, reason: format!("expected {tag}") })
}

fn number<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, TraceError> {
    s.parse().map_err(|_| TraceError::Parse { line, reason: format!("bad number {s:?}") })
}

fn reg_list(s: &str, line: usize) -> Result<Vec<u16>, TraceError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|r| number(r, line)).collect()
}

/// Inverse of [`traces_to_text`]; blank lines and `#` comments are skipped.
pub fn parse_traces(text: &str) -> Result<Vec<WarpTrace>, TraceError> {
    let mut warps: BTreeMap<usize, Vec<TraceEvent>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let warp: usize = number(field(toks.next(), "W", line)?, line)?;
        let kind = toks.next().ok_or(TraceError::Parse { line, reason: "missing event kind".into() })?;
        let event = match kind {
            "E" => {
                let pc = number(toks.next().unwrap_or(""), line)?;
                let reads = reg_list(field(toks.next(), "R:", line)?, line)?;
                let writes = reg_list(field(toks.next(), "W:", line)?, line)?;
                let dead = number(field(toks.next(), "D:", line)?, line)?;
                TraceEvent::Exec { pc, reads, writes, dead }
            }
            "I" => {
                let interval = number(toks.next().unwrap_or(""), line)?;
                let hex = |s: &str| RegSet::from_hex(s).map_err(|e| TraceError::Parse { line, reason: e.to_string() });
                let prefetch = hex(field(toks.next(), "V:", line)?)?;
                let live = hex(field(toks.next(), "L:", line)?)?;
                TraceEvent::IntervalEnter { interval, prefetch, live }
            }
            "M" => TraceEvent::LongLatency { class: toks.next().unwrap_or("mem").to_string() },
            other => return Err(TraceError::Parse { line, reason: format!("unknown event kind {other:?}") }),
        };
        if toks.next().is_some() {
            return Err(TraceError::Parse { line, reason: "trailing tokens".into() });
        }
        warps.entry(warp).or_default().push(event);
    }
    Ok(warps.into_iter().map(|(warp, events)| WarpTrace { warp, events }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{build_cfg, compute_liveness};
    use crate::intervals::{emit_prefetch_vectors, form_intervals, IntervalConfig, PrefetchEncoding};
    use crate::ir::parse_program;

    fn annotate(src: &str, n: usize) -> AnnotatedProgram {
        let p = parse_program(src).unwrap();
        let c = build_cfg(&p);
        let l = compute_liveness(&c);
        let icfg = form_intervals(&c, &l, &IntervalConfig::new(n)).unwrap();
        emit_prefetch_vectors(&icfg, PrefetchEncoding::EmbeddedBit)
    }

    #[test]
    fn straight_line_has_one_enter() {
        let a = annotate("mov R0, 1\nadd R1, R0, 2\nst.local [R1], R0\nexit", 16);
        let t = generate_traces(&a, 1, 0, &TraceKnobs::default()).unwrap();
        assert_eq!(t[0].interval_enters(), 1);
        assert!(matches!(t[0].events[0], TraceEvent::IntervalEnter { .. }));
        assert_eq!(t[0].instructions(), 4);
    }

    #[test]
    fn dead_bits_follow_liveness() {
        let a = annotate("mov R0, 1\nadd R1, R0, R0\nst.local [R1], R1\nexit", 16);
        let t = generate_traces(&a, 1, 0, &TraceKnobs::default()).unwrap();
        let execs: Vec<_> = t[0].events.iter().filter(|e| matches!(e, TraceEvent::Exec { .. })).collect();
        assert_eq!(execs[1], &TraceEvent::Exec { pc: 1, reads: vec![0], writes: vec![1], dead: 1 });
        assert_eq!(execs[2], &TraceEvent::Exec { pc: 2, reads: vec![1], writes: vec![], dead: 1 });
    }

    #[test]
    fn text_round_trip() {
        let a = annotate(include_str!("../../fixtures/listing1.ptx"), 4);
        let t = generate_traces(&a, 3, 9, &TraceKnobs::default()).unwrap();
        let text = traces_to_text(&t);
        assert_eq!(parse_traces(&text).unwrap(), t);
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = parse_traces("W0 E 1 R:1 W: D:0\nW0 X\n").unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 2, .. }));
    }

    #[test]
    fn unbounded_loop_is_reported() {
        let a = annotate(include_str!("../../fixtures/nested_loop.ptx"), 16);
        let knobs = TraceKnobs { max_steps: 500, ..TraceKnobs::default() };
        assert!(matches!(generate_traces(&a, 1, 0, &knobs), Err(TraceError::NonTerminatingPath { .. })));
    }
}
