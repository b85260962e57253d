//! Control-flow graphs, reducibility, liveness and live ranges.

mod liveness;
mod ranges;

use std::collections::BTreeSet;
use std::ops::Range;

use serde::Serialize;

use crate::ir::Program;

pub use liveness::{compute_liveness, LivenessInfo};
pub use ranges::{build_live_ranges, LiveRangeMap, RangeId, RegisterLiveRange, Site};

pub type BlockId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BasicBlock {
    pub id: BlockId,
    pub start: usize,
    pub end: usize,
    pub succs: Vec<BlockId>,
    pub preds: Vec<BlockId>,
}

impl BasicBlock {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cfg {
    #[serde(skip)]
    pub program: Program,
    pub blocks: Vec<BasicBlock>,
    pub entry: BlockId,
    /// Block containing each instruction; `None` for pruned code.
    #[serde(skip)]
    pub block_of: Vec<Option<BlockId>>,
    /// Instruction ranges dropped because no path from entry reaches them.
    pub pruned: Vec<Range<usize>>,
}

impl Cfg {
    pub fn block(&self, id: BlockId) -> &BasicBlock {
        &self.blocks[id]
    }

    pub fn edges(&self) -> impl Iterator<Item = (BlockId, BlockId)> + '_ {
        self.blocks.iter().flat_map(|b| b.succs.iter().map(move |&s| (b.id, s)))
    }

    /// Blocks in reverse postorder from the entry.
    pub fn reverse_postorder(&self) -> Vec<BlockId> {
        let mut order = Vec::with_capacity(self.blocks.len());
        let mut seen = vec![false; self.blocks.len()];
        let mut stack = vec![(self.entry, 0usize)];
        if self.blocks.is_empty() {
            return order;
        }
        seen[self.entry] = true;
        while let Some((b, i)) = stack.pop() {
            if let Some(&s) = self.blocks[b].succs.get(i) {
                stack.push((b, i + 1));
                if !seen[s] {
                    seen[s] = true;
                    stack.push((s, 0));
                }
            } else {
                order.push(b);
            }
        }
        order.reverse();
        order
    }
}

/// Splits `p` into basic blocks at leaders: the first instruction, every
/// branch target, and every instruction after a `bra` or `exit`.
pub fn build_cfg(p: &Program) -> Cfg {
    let n = p.len();
    let mut leaders = BTreeSet::new();
    if n > 0 {
        leaders.insert(0);
    }
    for (pc, inst) in p.instructions.iter().enumerate() {
        if let Some(t) = p.branch_target(pc) {
            leaders.insert(t);
        }
        if inst.is_terminator() && pc + 1 < n {
            leaders.insert(pc + 1);
        }
    }
    let starts: Vec<usize> = leaders.into_iter().collect();
    let ranges: Vec<Range<usize>> =
        starts.iter().enumerate().map(|(i, &s)| s..starts.get(i + 1).copied().unwrap_or(n)).collect();
    let block_at = |pc: usize| starts.binary_search(&pc).expect("branch targets are leaders");

    let mut succs: Vec<Vec<usize>> = ranges
        .iter()
        .map(|r| {
            let last = r.end - 1;
            let inst = &p.instructions[last];
            let mut out = Vec::new();
            if let Some(t) = p.branch_target(last) {
                out.push(block_at(t));
            }
            let falls = match inst.opcode {
                crate::ir::Opcode::Bra | crate::ir::Opcode::Exit => inst.guard.is_some(),
                _ => true,
            };
            if falls && r.end < n && !out.contains(&block_at(r.end)) {
                out.push(block_at(r.end));
            }
            out
        })
        .collect();

    let mut reachable = vec![false; ranges.len()];
    let mut stack = Vec::new();
    if !ranges.is_empty() {
        reachable[0] = true;
        stack.push(0);
    }
    while let Some(b) = stack.pop() {
        for &s in &succs[b] {
            if !reachable[s] {
                reachable[s] = true;
                stack.push(s);
            }
        }
    }

    let mut remap = vec![None; ranges.len()];
    let mut pruned = Vec::new();
    let mut next = 0;
    for (i, r) in ranges.iter().enumerate() {
        if reachable[i] {
            remap[i] = Some(next);
            next += 1;
        } else {
            log::warn!("pruning unreachable instructions {}..{}", r.start, r.end);
            pruned.push(r.clone());
        }
    }

    let mut blocks: Vec<BasicBlock> = Vec::with_capacity(next);
    for (i, r) in ranges.iter().enumerate() {
        let Some(id) = remap[i] else { continue };
        let s = std::mem::take(&mut succs[i]).into_iter().filter_map(|s| remap[s]).collect();
        blocks.push(BasicBlock { id, start: r.start, end: r.end, succs: s, preds: Vec::new() });
    }
    for b in 0..blocks.len() {
        for s in blocks[b].succs.clone() {
            blocks[s].preds.push(b);
        }
    }
    let mut block_of = vec![None; n];
    for b in &blocks {
        for slot in &mut block_of[b.range()] {
            *slot = Some(b.id);
        }
    }
    Cfg { program: p.clone(), blocks, entry: 0, block_of, pruned }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reducibility {
    Reducible,
    /// Retreating edges whose target does not dominate their source.
    Irreducible { offending_edges: Vec<(BlockId, BlockId)> },
}

impl Reducibility {
    pub fn is_reducible(&self) -> bool {
        matches!(self, Reducibility::Reducible)
    }
}

/// Immediate dominators (entry maps to itself), by the iterative
/// Cooper-Harvey-Kennedy scheme.
pub fn dominators(c: &Cfg) -> Vec<BlockId> {
    let rpo = c.reverse_postorder();
    let mut order = vec![usize::MAX; c.blocks.len()];
    for (i, &b) in rpo.iter().enumerate() {
        order[b] = i;
    }
    let mut idom = vec![usize::MAX; c.blocks.len()];
    if c.blocks.is_empty() {
        return idom;
    }
    idom[c.entry] = c.entry;
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new = usize::MAX;
            for &p in &c.blocks[b].preds {
                if idom[p] == usize::MAX {
                    continue;
                }
                new = if new == usize::MAX {
                    p
                } else {
                    let (mut x, mut y) = (p, new);
                    while x != y {
                        while order[x] > order[y] {
                            x = idom[x];
                        }
                        while order[y] > order[x] {
                            y = idom[y];
                        }
                    }
                    x
                };
            }
            if idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }
    idom
}

pub fn dominates(idom: &[BlockId], a: BlockId, mut b: BlockId) -> bool {
    loop {
        if a == b {
            return true;
        }
        let up = idom[b];
        if up == b || up == usize::MAX {
            return false;
        }
        b = up;
    }
}

/// Classifies the CFG: reducible iff every retreating edge of a depth-first
/// traversal targets a block that dominates its source.
pub fn check_reducible(c: &Cfg) -> Reducibility {
    if c.blocks.is_empty() {
        return Reducibility::Reducible;
    }
    let idom = dominators(c);
    let mut on_stack = vec![false; c.blocks.len()];
    let mut seen = vec![false; c.blocks.len()];
    let mut offending = Vec::new();
    let mut stack = vec![(c.entry, 0usize)];
    seen[c.entry] = true;
    on_stack[c.entry] = true;
    while let Some((b, i)) = stack.pop() {
        if let Some(&s) = c.blocks[b].succs.get(i) {
            stack.push((b, i + 1));
            if on_stack[s] {
                if !dominates(&idom, s, b) {
                    offending.push((b, s));
                }
            } else if !seen[s] {
                seen[s] = true;
                on_stack[s] = true;
                stack.push((s, 0));
            }
        } else {
            on_stack[b] = false;
        }
    }
    if offending.is_empty() {
        Reducibility::Reducible
    } else {
        offending.sort_unstable();
        Reducibility::Irreducible { offending_edges: offending }
    }
}

/// Back edges: edges whose target dominates their source.
pub fn back_edges(c: &Cfg) -> Vec<(BlockId, BlockId)> {
    let idom = dominators(c);
    c.edges().filter(|&(u, v)| dominates(&idom, v, u)).collect()
}

/// Deterministic JSON view of a CFG and its liveness.
pub fn debug_json(c: &Cfg, l: &LivenessInfo) -> serde_json::Value {
    let blocks: Vec<serde_json::Value> = c
        .blocks
        .iter()
        .map(|b| {
            serde_json::json!({
                "id": b.id,
                "start": b.start,
                "end": b.end,
                "succs": b.succs,
                "preds": b.preds,
                "live_in": l.live_in[b.id],
                "live_out": l.live_out[b.id],
            })
        })
        .collect();
    serde_json::json!({ "entry": c.entry, "blocks": blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn straight_line_is_one_block() {
        let c = build_cfg(&parse_program("mov.u32 R0, 1\nadd.u32 R0, R0, 1\nexit").unwrap());
        assert_eq!(c.blocks.len(), 1);
        assert!(c.blocks[0].succs.is_empty());
    }

    #[test]
    fn guarded_branch_has_two_successors() {
        let c = build_cfg(&parse_program("L: add.u32 R0, R0, 1\n@p bra L\nexit").unwrap());
        assert_eq!(c.blocks.len(), 2);
        assert_eq!(c.blocks[0].succs, vec![0, 1]);
        assert_eq!(c.blocks[0].preds, vec![0]);
    }

    #[test]
    fn guarded_branch_to_next_is_deduplicated() {
        let c = build_cfg(&parse_program("@p bra L\nL: exit").unwrap());
        assert_eq!(c.blocks[0].succs, vec![1]);
    }

    #[test]
    fn unreachable_code_is_pruned() {
        let c = build_cfg(&parse_program("bra L\nmov.u32 R0, 1\nL: exit").unwrap());
        assert_eq!(c.blocks.len(), 2);
        assert_eq!(c.pruned, vec![1..2]);
        assert_eq!(c.block_of, vec![Some(0), None, Some(1)]);
        assert_eq!(c.blocks[1].start, 2);
    }

    #[test]
    fn calls_do_not_end_blocks() {
        let c = build_cfg(&parse_program("mov.u32 R0, 1\ncall f\nexit").unwrap());
        assert_eq!(c.blocks.len(), 1);
    }

    #[test]
    fn reducibility() {
        let diamond = build_cfg(&parse_program("@p bra T\nmov.u32 R0, 1\nbra J\nT: mov.u32 R0, 2\nJ: exit").unwrap());
        assert!(check_reducible(&diamond).is_reducible());
        let irreducible = build_cfg(&parse_program("@p bra B\nA: add.u32 R0, R0, 1\nB: add.u32 R1, R1, 1\n@q bra A\nexit").unwrap());
        match check_reducible(&irreducible) {
            Reducibility::Irreducible { offending_edges } => {
                assert_eq!(offending_edges.len(), 1);
                let (u, v) = offending_edges[0];
                assert!([(1, 2), (2, 1)].contains(&(u, v)));
            }
            r => panic!("expected irreducible, got {r:?}"),
        }
    }
}
