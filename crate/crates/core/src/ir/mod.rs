//! A small PTX-flavoured register IR.
//!
//! Programs are already register allocated: operands name architectural
//! registers (`R0`..`R255`) and predicate registers (`P0`.., or the PTX-style
//! single letters `p`..`z`). Only the handful of opcodes needed to express
//! loop kernels with local memory traffic are supported.

mod interp;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::regset::{RegSet, MAX_REGISTERS};

pub use interp::{interpret_program, interpret_traced, ExecStatus, InterpError, MachineState, StepRecord};
pub use parse::{parse_program, SyntaxError};
pub(crate) use parse::parse_with_lines;

/// Default size of the interpreter's local memory, in 32-bit words.
pub const LOCAL_MEMORY_WORDS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegClass {
    General,
    Predicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Register {
    pub class: RegClass,
    pub index: u16,
}

impl Register {
    pub const fn general(index: u16) -> Self {
        Register { class: RegClass::General, index }
    }

    pub const fn predicate(index: u16) -> Self {
        Register { class: RegClass::Predicate, index }
    }

    pub fn is_general(&self) -> bool {
        self.class == RegClass::General
    }

    pub fn is_predicate(&self) -> bool {
        self.class == RegClass::Predicate
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.class {
            RegClass::General => write!(f, "R{}", self.index),
            RegClass::Predicate => write!(f, "P{}", self.index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Gt => "gt",
            CmpOp::Ge => "ge",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Some(match s {
            "eq" => CmpOp::Eq,
            "ne" => CmpOp::Ne,
            "lt" => CmpOp::Lt,
            "le" => CmpOp::Le,
            "gt" => CmpOp::Gt,
            "ge" => CmpOp::Ge,
            _ => return None,
        })
    }

    pub fn eval(self, a: u32, b: u32) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Opcode {
    Mov,
    LdLocal,
    StLocal,
    Add,
    SetCmp(CmpOp),
    Bra,
    Call,
    Exit,
}

impl Opcode {
    /// Canonical PTX-style spelling.
    pub fn spelling(self) -> String {
        match self {
            Opcode::Mov => "mov.u32".into(),
            Opcode::LdLocal => "ld.local.u32".into(),
            Opcode::StLocal => "st.local.u32".into(),
            Opcode::Add => "add.u32".into(),
            Opcode::SetCmp(op) => format!("set.{}.u32.u32", op.mnemonic()),
            Opcode::Bra => "bra".into(),
            Opcode::Call => "call".into(),
            Opcode::Exit => "exit".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operand {
    Reg(Register),
    Imm(i64),
    /// Kernel parameter bound at interpretation time (e.g. an array base).
    Param(String),
    /// `[base+offset]`, byte addressed.
    Addr { base: Register, offset: i32 },
}

impl Operand {
    /// The register this operand reads, if any.
    pub fn register(&self) -> Option<Register> {
        match self {
            Operand::Reg(r) => Some(*r),
            Operand::Addr { base, .. } => Some(*base),
            _ => None,
        }
    }

    pub fn register_mut(&mut self) -> Option<&mut Register> {
        match self {
            Operand::Reg(r) => Some(r),
            Operand::Addr { base, .. } => Some(base),
            _ => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => write!(f, "{v}"),
            Operand::Param(name) => f.write_str(name),
            Operand::Addr { base, offset: 0 } => write!(f, "[{base}]"),
            Operand::Addr { base, offset } if *offset < 0 => write!(f, "[{base}{offset}]"),
            Operand::Addr { base, offset } => write!(f, "[{base}+{offset}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Guard {
    pub pred: Register,
    pub negated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub opcode: Opcode,
    pub dest: Option<Register>,
    pub sources: Vec<Operand>,
    /// Branch label or call target.
    pub target: Option<String>,
    pub guard: Option<Guard>,
    /// One flag per source operand: the operand's register is dead after
    /// this instruction executes.
    pub dead_operand_bits: Vec<bool>,
}

impl Instruction {
    pub fn new(opcode: Opcode, dest: Option<Register>, sources: Vec<Operand>) -> Self {
        let n = sources.len();
        Instruction { opcode, dest, sources, target: None, guard: None, dead_operand_bits: vec![false; n] }
    }

    pub fn branch(target: impl Into<String>) -> Self {
        Instruction { target: Some(target.into()), ..Instruction::new(Opcode::Bra, None, vec![]) }
    }

    pub fn exit() -> Self {
        Instruction::new(Opcode::Exit, None, vec![])
    }

    pub fn with_guard(mut self, pred: Register, negated: bool) -> Self {
        self.guard = Some(Guard { pred, negated });
        self
    }

    pub fn is_branch(&self) -> bool {
        self.opcode == Opcode::Bra
    }

    /// Ends a basic block.
    pub fn is_terminator(&self) -> bool {
        matches!(self.opcode, Opcode::Bra | Opcode::Exit)
    }

    pub fn is_call(&self) -> bool {
        self.opcode == Opcode::Call
    }

    /// Local memory traffic; treated as potentially long latency.
    pub fn is_memory(&self) -> bool {
        matches!(self.opcode, Opcode::LdLocal | Opcode::StLocal)
    }

    pub fn general_def(&self) -> Option<Register> {
        self.dest.filter(Register::is_general)
    }

    /// `(source position, register)` for every general-register read.
    pub fn general_uses(&self) -> impl Iterator<Item = (usize, Register)> + '_ {
        self.sources
            .iter()
            .enumerate()
            .filter_map(|(i, op)| op.register().filter(Register::is_general).map(|r| (i, r)))
    }

    /// Predicate registers read, including the guard.
    pub fn predicate_uses(&self) -> impl Iterator<Item = Register> + '_ {
        self.guard
            .map(|g| g.pred)
            .into_iter()
            .chain(self.sources.iter().filter_map(|op| op.register().filter(Register::is_predicate)))
    }

    /// All general registers read or written.
    pub fn general_registers(&self) -> RegSet {
        let mut set: RegSet = self.general_uses().map(|(_, r)| r.index).collect();
        if let Some(d) = self.general_def() {
            set.insert(d.index);
        }
        set
    }

    /// The dead-operand bit packed into an integer, bit `i` for source `i`.
    pub fn dead_mask(&self) -> u64 {
        self.dead_operand_bits
            .iter()
            .enumerate()
            .fold(0, |m, (i, &d)| if d { m | (1 << i) } else { m })
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.dead_operand_bits.len() != self.sources.len() {
            return Err("dead operand bits do not match source count".into());
        }
        for r in self.dest.iter().chain(self.sources.iter().filter_map(Operand::register).collect::<Vec<_>>().iter()) {
            if r.index as usize >= MAX_REGISTERS {
                return Err(format!("register index {} exceeds {}", r.index, MAX_REGISTERS - 1));
            }
        }
        let reg_kind = |op: &Operand| matches!(op, Operand::Reg(r) if r.is_general());
        let value = |op: &Operand| reg_kind(op) || matches!(op, Operand::Imm(_) | Operand::Param(_));
        let general_dest = matches!(self.dest, Some(r) if r.is_general());
        let ok = match self.opcode {
            Opcode::Mov => general_dest && self.sources.len() == 1 && value(&self.sources[0]),
            Opcode::Add => general_dest && self.sources.len() == 2 && self.sources.iter().all(value),
            Opcode::LdLocal => {
                general_dest
                    && self.sources.len() == 1
                    && matches!(self.sources[0], Operand::Addr { base, .. } if base.is_general())
            }
            Opcode::StLocal => {
                self.dest.is_none()
                    && self.sources.len() == 2
                    && matches!(self.sources[0], Operand::Addr { base, .. } if base.is_general())
                    && value(&self.sources[1])
            }
            Opcode::SetCmp(_) => {
                matches!(self.dest, Some(r) if r.is_predicate())
                    && self.sources.len() == 2
                    && self.sources.iter().all(value)
            }
            Opcode::Bra | Opcode::Call => self.dest.is_none() && self.sources.is_empty() && self.target.is_some(),
            Opcode::Exit => self.dest.is_none() && self.sources.is_empty(),
        };
        if !ok {
            return Err(format!("malformed operands for `{}`", self.opcode.spelling()));
        }
        if let Some(g) = self.guard {
            if !g.pred.is_predicate() {
                return Err("guard must be a predicate register".into());
            }
        }
        Ok(())
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(g) = self.guard {
            write!(f, "@{}{} ", if g.negated { "!" } else { "" }, g.pred)?;
        }
        f.write_str(&self.opcode.spelling())?;
        let mut parts: Vec<String> = Vec::new();
        if let Some(d) = self.dest {
            parts.push(d.to_string());
        }
        for (op, dead) in self.sources.iter().zip(&self.dead_operand_bits) {
            let mut s = op.to_string();
            if *dead && op.register().is_some() {
                s.push('^');
            }
            parts.push(s);
        }
        if let Some(t) = &self.target {
            parts.push(t.clone());
        }
        if !parts.is_empty() {
            write!(f, " {}", parts.join(", "))?;
        }
        f.write_str(";")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    /// Label name to the index of the instruction it precedes.
    pub labels: BTreeMap<String, usize>,
}

impl Program {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Instruction index a branch at `pc` jumps to.
    pub fn branch_target(&self, pc: usize) -> Option<usize> {
        let inst = self.instructions.get(pc)?;
        if !inst.is_branch() {
            return None;
        }
        inst.target.as_ref().and_then(|t| self.labels.get(t)).copied()
    }

    /// All general registers mentioned anywhere in the program.
    pub fn general_registers(&self) -> RegSet {
        self.instructions.iter().fold(RegSet::new(), |acc, i| acc.union(&i.general_registers()))
    }

    /// Labels grouped by instruction index, names sorted.
    pub fn labels_at(&self) -> BTreeMap<usize, Vec<&str>> {
        let mut out: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for (name, &idx) in &self.labels {
            out.entry(idx).or_default().push(name.as_str());
        }
        out
    }

    /// Checks structural invariants: operand shapes and resolvable labels.
    pub fn validate(&self) -> Result<(), SyntaxError> {
        for (&idx, names) in &self.labels_at() {
            if idx >= self.instructions.len() {
                return Err(SyntaxError::new(0, format!("label `{}` does not precede an instruction", names[0])));
            }
        }
        for (pc, inst) in self.instructions.iter().enumerate() {
            inst.validate().map_err(|reason| SyntaxError::new(pc + 1, reason))?;
            if inst.is_branch() {
                let t = inst.target.as_deref().unwrap_or_default();
                if !self.labels.contains_key(t) {
                    return Err(SyntaxError::new(pc + 1, format!("unresolved label `{t}`")));
                }
            }
        }
        Ok(())
    }

    /// Clears every dead-operand bit.
    pub fn clear_dead_bits(&mut self) {
        for inst in &mut self.instructions {
            inst.dead_operand_bits.iter_mut().for_each(|b| *b = false);
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels = self.labels_at();
        for (pc, inst) in self.instructions.iter().enumerate() {
            match labels.get(&pc).map(Vec::as_slice) {
                Some([rest @ .., last]) => {
                    for extra in rest {
                        writeln!(f, "{extra}:")?;
                    }
                    writeln!(f, "{last}: {inst}")?;
                }
                _ => writeln!(f, "    {inst}")?,
            }
        }
        Ok(())
    }
}
