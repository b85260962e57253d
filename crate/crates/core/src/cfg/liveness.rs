use serde::Serialize;

use super::Cfg;
use crate::ir::{Instruction, Program};
use crate::regset::RegSet;

/// Backward liveness of general and predicate registers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LivenessInfo {
    pub live_in: Vec<RegSet>,
    pub live_out: Vec<RegSet>,
    pub pred_live_in: Vec<RegSet>,
    pub pred_live_out: Vec<RegSet>,
    /// General registers live immediately before each instruction.
    pub inst_live_in: Vec<RegSet>,
    /// General registers live immediately after each instruction.
    pub inst_live_out: Vec<RegSet>,
}

/// `(uses, kills)` of general registers. A guarded destination is both
/// read and not killed, since a false guard preserves the old value.
pub(crate) fn general_effect(inst: &Instruction) -> (RegSet, RegSet) {
    let mut uses: RegSet = inst.general_uses().map(|(_, r)| r.index).collect();
    let mut kills = RegSet::new();
    if let Some(d) = inst.general_def() {
        if inst.guard.is_some() {
            uses.insert(d.index);
        } else {
            kills.insert(d.index);
        }
    }
    (uses, kills)
}

fn predicate_effect(inst: &Instruction) -> (RegSet, RegSet) {
    let mut uses: RegSet = inst.predicate_uses().map(|r| r.index).collect();
    let mut kills = RegSet::new();
    if let Some(d) = inst.dest.filter(|d| d.is_predicate()) {
        if inst.guard.is_some() {
            uses.insert(d.index);
        } else {
            kills.insert(d.index);
        }
    }
    (uses, kills)
}

fn step(after: &RegSet, (uses, kills): &(RegSet, RegSet)) -> RegSet {
    after.difference(kills).union(uses)
}

fn block_fixpoint(c: &Cfg, effect: impl Fn(&Instruction) -> (RegSet, RegSet)) -> (Vec<RegSet>, Vec<RegSet>) {
    let n = c.blocks.len();
    // Per-block summary: live_in = gen ∪ (live_out \ kill).
    let summaries: Vec<(RegSet, RegSet)> = c
        .blocks
        .iter()
        .map(|b| {
            let mut gen = RegSet::new();
            let mut kill = RegSet::new();
            for inst in c.program.instructions[b.range()].iter().rev() {
                let (u, k) = effect(inst);
                gen = gen.difference(&k).union(&u);
                kill = kill.difference(&u).union(&k);
            }
            (gen, kill)
        })
        .collect();
    let mut live_in = vec![RegSet::new(); n];
    let mut live_out = vec![RegSet::new(); n];
    let mut order = c.reverse_postorder();
    order.reverse();
    let mut changed = true;
    while changed {
        changed = false;
        for &b in &order {
            let out = c.blocks[b].succs.iter().fold(RegSet::new(), |acc, &s| acc.union(&live_in[s]));
            let (gen, kill) = &summaries[b];
            let inn = gen.union(&out.difference(kill));
            if inn != live_in[b] || out != live_out[b] {
                live_in[b] = inn;
                live_out[b] = out;
                changed = true;
            }
        }
    }
    (live_in, live_out)
}

pub fn compute_liveness(c: &Cfg) -> LivenessInfo {
    let (live_in, live_out) = block_fixpoint(c, general_effect);
    let (pred_live_in, pred_live_out) = block_fixpoint(c, predicate_effect);
    let n = c.program.len();
    let mut inst_live_in = vec![RegSet::new(); n];
    let mut inst_live_out = vec![RegSet::new(); n];
    for b in &c.blocks {
        let mut live = live_out[b.id];
        for pc in b.range().rev() {
            inst_live_out[pc] = live;
            live = step(&live, &general_effect(&c.program.instructions[pc]));
            inst_live_in[pc] = live;
        }
        debug_assert_eq!(live, live_in[b.id]);
    }
    LivenessInfo { live_in, live_out, pred_live_in, pred_live_out, inst_live_in, inst_live_out }
}

impl LivenessInfo {
    /// Whether general source `operand` of instruction `pc` is dead once
    /// `pc` executes: its register is not live on any outgoing path.
    pub fn is_dead_operand(&self, program: &Program, pc: usize, operand: usize) -> bool {
        match program.instructions[pc].sources[operand].register() {
            Some(r) if r.is_general() => !self.inst_live_out[pc].contains(r.index),
            _ => false,
        }
    }

    /// Sets every instruction's dead-operand bits from this analysis.
    /// Predicate operands never receive a dead bit.
    pub fn mark_dead_operands(&self, program: &mut Program) {
        for pc in 0..program.len() {
            let bits: Vec<bool> =
                (0..program.instructions[pc].sources.len()).map(|i| self.is_dead_operand(program, pc, i)).collect();
            program.instructions[pc].dead_operand_bits = bits;
        }
    }
}
