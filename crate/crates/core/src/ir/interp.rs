use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Opcode, Operand, Program, Register, LOCAL_MEMORY_WORDS};
use crate::regset::MAX_REGISTERS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Running,
    Exited,
    /// The step budget ran out before the program terminated.
    StepBudgetExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineState {
    pub regs: Vec<u32>,
    pub preds: Vec<bool>,
    /// Local memory, one 32-bit word per entry; byte addressed.
    pub memory: Vec<u32>,
    /// Values bound to kernel parameters such as array base addresses.
    pub params: BTreeMap<String, u32>,
    pub pc: usize,
    pub steps: u64,
    pub status: ExecStatus,
}

impl Default for MachineState {
    fn default() -> Self {
        MachineState {
            regs: vec![0; MAX_REGISTERS],
            preds: vec![false; MAX_REGISTERS],
            memory: vec![0; LOCAL_MEMORY_WORDS],
            params: BTreeMap::new(),
            pc: 0,
            steps: 0,
            status: ExecStatus::Running,
        }
    }
}

impl MachineState {
    pub fn with_param(mut self, name: impl Into<String>, value: u32) -> Self {
        self.params.insert(name.into(), value);
        self
    }

    pub fn reg(&self, r: Register) -> u32 {
        self.regs[r.index as usize]
    }

    pub fn is_terminated(&self) -> bool {
        self.status != ExecStatus::Running
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InterpError {
    #[error("pc {pc}: address {address} outside local memory")]
    OutOfBounds { pc: usize, address: i64 },
    #[error("pc {pc}: address {address} is not word aligned")]
    Misaligned { pc: usize, address: i64 },
    #[error("pc {pc}: parameter `{name}` is unbound")]
    UnboundParam { pc: usize, name: String },
}

/// Observable effect of one executed instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub pc: usize,
    pub guard_passed: bool,
    /// Value written to the destination (predicates as 0/1).
    pub written: Option<u32>,
    /// `(byte address, value)` for stores.
    pub store: Option<(u32, u32)>,
}

/// Runs `p` from `init` for at most `max_steps` instructions.
pub fn interpret_program(p: &Program, init: MachineState, max_steps: u64) -> Result<MachineState, InterpError> {
    run(p, init, max_steps, None)
}

/// Like [`interpret_program`] but also returns the per-step effects, which
/// lets two register-renamed variants of a program be compared in lockstep.
pub fn interpret_traced(
    p: &Program,
    init: MachineState,
    max_steps: u64,
) -> Result<(MachineState, Vec<StepRecord>), InterpError> {
    let mut trace = Vec::new();
    let state = run(p, init, max_steps, Some(&mut trace))?;
    Ok((state, trace))
}

fn run(
    p: &Program,
    mut st: MachineState,
    max_steps: u64,
    mut trace: Option<&mut Vec<StepRecord>>,
) -> Result<MachineState, InterpError> {
    if st.status != ExecStatus::Running {
        return Ok(st);
    }
    loop {
        if st.pc >= p.len() {
            st.status = ExecStatus::Exited;
            return Ok(st);
        }
        if st.steps >= max_steps {
            st.status = ExecStatus::StepBudgetExceeded;
            return Ok(st);
        }
        let pc = st.pc;
        let inst = &p.instructions[pc];
        st.steps += 1;
        let passed = inst.guard.is_none_or(|g| st.preds[g.pred.index as usize] != g.negated);
        let mut rec = StepRecord { pc, guard_passed: passed, written: None, store: None };
        let mut next = pc + 1;
        if passed {
            match inst.opcode {
                Opcode::Mov => {
                    let v = value(&st, pc, &inst.sources[0])?;
                    rec.written = Some(write(&mut st, inst.dest, v));
                }
                Opcode::Add => {
                    let a = value(&st, pc, &inst.sources[0])?;
                    let b = value(&st, pc, &inst.sources[1])?;
                    rec.written = Some(write(&mut st, inst.dest, a.wrapping_add(b)));
                }
                Opcode::SetCmp(op) => {
                    let a = value(&st, pc, &inst.sources[0])?;
                    let b = value(&st, pc, &inst.sources[1])?;
                    rec.written = Some(write(&mut st, inst.dest, op.eval(a, b) as u32));
                }
                Opcode::LdLocal => {
                    let (_, word) = address(&st, pc, &inst.sources[0])?;
                    let v = st.memory[word];
                    rec.written = Some(write(&mut st, inst.dest, v));
                }
                Opcode::StLocal => {
                    let (addr, word) = address(&st, pc, &inst.sources[0])?;
                    let v = value(&st, pc, &inst.sources[1])?;
                    st.memory[word] = v;
                    rec.store = Some((addr, v));
                }
                Opcode::Bra => {
                    next = p.branch_target(pc).expect("validated program has resolved labels");
                }
                Opcode::Call => {}
                Opcode::Exit => {
                    st.status = ExecStatus::Exited;
                }
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(rec);
        }
        if st.status == ExecStatus::Exited {
            return Ok(st);
        }
        st.pc = next;
    }
}

fn write(st: &mut MachineState, dest: Option<Register>, v: u32) -> u32 {
    let d = dest.expect("validated instruction has a destination");
    if d.is_predicate() {
        st.preds[d.index as usize] = v != 0;
    } else {
        st.regs[d.index as usize] = v;
    }
    v
}

fn value(st: &MachineState, pc: usize, op: &Operand) -> Result<u32, InterpError> {
    Ok(match op {
        Operand::Reg(r) if r.is_predicate() => st.preds[r.index as usize] as u32,
        Operand::Reg(r) => st.regs[r.index as usize],
        Operand::Imm(v) => *v as u32,
        Operand::Param(name) => {
            *st.params.get(name).ok_or_else(|| InterpError::UnboundParam { pc, name: name.clone() })?
        }
        Operand::Addr { .. } => unreachable!("address operand used as a value"),
    })
}

fn address(st: &MachineState, pc: usize, op: &Operand) -> Result<(u32, usize), InterpError> {
    let Operand::Addr { base, offset } = op else { unreachable!("memory operand expected") };
    let addr = st.regs[base.index as usize] as i64 + *offset as i64;
    if addr < 0 || addr / 4 >= st.memory.len() as i64 {
        return Err(InterpError::OutOfBounds { pc, address: addr });
    }
    if addr % 4 != 0 {
        return Err(InterpError::Misaligned { pc, address: addr });
    }
    Ok((addr as u32, (addr / 4) as usize))
}
