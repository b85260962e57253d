//! Random structured (hence reducible) programs for property testing and
//! corpus sweeps.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cfg::build_cfg;
use crate::ir::{parse_program, MachineState, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// General registers available to program bodies.
    pub registers: u16,
    pub max_depth: usize,
    /// Statements per nesting level.
    pub max_statements: usize,
    pub max_blocks: usize,
    /// Loop trip counts are drawn from `1..=max_trip`.
    pub max_trip: u32,
    pub allow_calls: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { registers: 12, max_depth: 3, max_statements: 4, max_blocks: 30, max_trip: 4, allow_calls: true }
    }
}

/// Local-memory base register; never redefined by generated code.
const BASE: u16 = 0;

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    cfg: CorpusConfig,
    out: String,
    labels: usize,
    /// Loop counters of enclosing loops; bodies must not write them.
    reserved: Vec<u16>,
    next_counter: u16,
}

impl Gen<'_> {
    fn label(&mut self) -> String {
        self.labels += 1;
        format!("L{}", self.labels)
    }

    fn body_reg(&mut self) -> u16 {
        loop {
            let r = self.rng.random_range(1..=self.cfg.registers);
            if !self.reserved.contains(&r) {
                return r;
            }
        }
    }

    fn any_reg(&mut self) -> u16 {
        self.rng.random_range(1..=self.cfg.registers)
    }

    fn pred(&mut self) -> u16 {
        self.rng.random_range(0..3)
    }

    fn value(&mut self) -> String {
        if self.rng.random_bool(0.3) {
            format!("{}", self.rng.random_range(0..64))
        } else {
            format!("R{}", self.any_reg())
        }
    }

    fn simple(&mut self) {
        let guard = if self.rng.random_bool(0.1) {
            format!("@{}P{} ", if self.rng.random_bool(0.5) { "!" } else { "" }, self.pred())
        } else {
            String::new()
        };
        let line = match self.rng.random_range(0..10) {
            0..=2 => format!("add.u32 R{}, R{}, {}", self.body_reg(), self.any_reg(), self.value()),
            3 => format!("mov.u32 R{}, {}", self.body_reg(), self.value()),
            4..=5 => {
                let off = self.rng.random_range(0..256) * 4;
                format!("ld.local.u32 R{}, [R{BASE}+{off}]", self.body_reg())
            }
            6 => {
                let off = self.rng.random_range(0..256) * 4;
                format!("st.local.u32 [R{BASE}+{off}], {}", self.value())
            }
            _ => {
                let cmp = ["eq", "ne", "lt", "le", "gt", "ge"][self.rng.random_range(0..6)];
                format!("set.{cmp}.u32.u32 P{}, R{}, {}", self.pred(), self.any_reg(), self.value())
            }
        };
        let _ = writeln!(self.out, "    {guard}{line}");
    }

    fn block(&mut self) {
        for _ in 0..self.rng.random_range(1..=4) {
            self.simple();
        }
    }

    fn statements(&mut self, depth: usize) {
        for _ in 0..self.rng.random_range(1..=self.cfg.max_statements) {
            let roll = self.rng.random_range(0..10);
            if depth < self.cfg.max_depth && roll < 2 {
                self.if_else(depth);
            } else if depth < self.cfg.max_depth && roll < 4 && self.next_counter < 255 {
                self.do_while(depth);
            } else if self.cfg.allow_calls && roll == 4 {
                let _ = writeln!(self.out, "    call helper");
            } else if roll == 5 && depth > 0 {
                let p = self.pred();
                let _ = writeln!(self.out, "    @P{p} exit");
            } else {
                self.block();
            }
        }
    }

    fn if_else(&mut self, depth: usize) {
        let (else_l, end_l) = (self.label(), self.label());
        self.simple();
        let p = self.pred();
        let _ = writeln!(self.out, "    @!P{p} bra {else_l}");
        self.statements(depth + 1);
        let has_else = self.rng.random_bool(0.5);
        if has_else {
            let _ = writeln!(self.out, "    bra {end_l}");
        }
        let _ = writeln!(self.out, "{else_l}:");
        if has_else {
            self.statements(depth + 1);
        }
        let _ = writeln!(self.out, "{end_l}:");
    }

    fn do_while(&mut self, depth: usize) {
        let counter = self.next_counter;
        self.next_counter += 1;
        let head = self.label();
        let trip = self.rng.random_range(1..=self.cfg.max_trip);
        let _ = writeln!(self.out, "    mov.u32 R{counter}, 0");
        let _ = writeln!(self.out, "{head}:");
        self.reserved.push(counter);
        self.statements(depth + 1);
        self.reserved.pop();
        let _ = writeln!(self.out, "    add.u32 R{counter}, R{counter}, 1");
        let _ = writeln!(self.out, "    set.lt.u32.u32 P3, R{counter}, {trip}");
        let _ = writeln!(self.out, "    @P3 bra {head}");
    }
}

/// One random structured program as source text. Registers `R1..=registers`
/// are scratch, `R0` is a memory base, and loop counters use registers
/// above the scratch range.
pub fn generate_source(rng: &mut ChaCha8Rng, cfg: &CorpusConfig) -> String {
    let mut g = Gen {
        rng,
        cfg: *cfg,
        out: String::new(),
        labels: 0,
        reserved: Vec::new(),
        next_counter: cfg.registers + 1,
    };
    let _ = writeln!(g.out, "    mov.u32 R{BASE}, 0");
    g.statements(0);
    let _ = writeln!(g.out, "END:\n    exit");
    g.out
}

/// Draws programs until one fits `cfg.max_blocks` basic blocks.
pub fn generate_program(rng: &mut ChaCha8Rng, cfg: &CorpusConfig) -> Program {
    loop {
        let src = generate_source(rng, cfg);
        let p = parse_program(&src).expect("generated source is valid");
        if build_cfg(&p).blocks.len() <= cfg.max_blocks {
            return p;
        }
    }
}

/// `count` programs from a fixed seed.
pub fn generate_corpus(seed: u64, count: usize, cfg: &CorpusConfig) -> Vec<Program> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| generate_program(&mut rng, cfg)).collect()
}

/// Random registers, predicates and memory.
pub fn random_state(rng: &mut impl Rng) -> MachineState {
    let mut st = MachineState::default();
    for r in st.regs.iter_mut() {
        *r = rng.random_range(0..1000);
    }
    for p in st.preds.iter_mut() {
        *p = rng.random_bool(0.5);
    }
    for w in st.memory.iter_mut() {
        *w = rng.random_range(0..1000);
    }
    st
}
