use std::collections::VecDeque;

use super::{BoundaryMode, IntervalCfg, IntervalConfig, IntervalError, IntervalId, RegisterInterval};
use crate::cfg::{check_reducible, BasicBlock, BlockId, Cfg, LivenessInfo, Reducibility};
use crate::ir::Program;
use crate::regset::RegSet;

/// Blocks under construction; ids are allocation order until `finish`.
struct Blocks<'p> {
    program: &'p Program,
    blocks: Vec<BasicBlock>,
}

impl Blocks<'_> {
    /// Cuts block `b` before instruction `at`; returns the new tail block.
    fn split(&mut self, b: BlockId, at: usize) -> BlockId {
        debug_assert!(self.blocks[b].start < at && at < self.blocks[b].end);
        let new = self.blocks.len();
        let succs = std::mem::replace(&mut self.blocks[b].succs, vec![new]);
        let end = std::mem::replace(&mut self.blocks[b].end, at);
        for &s in &succs {
            for p in &mut self.blocks[s].preds {
                if *p == b {
                    *p = new;
                }
            }
        }
        self.blocks.push(BasicBlock { id: new, start: at, end, succs, preds: vec![b] });
        new
    }

    fn registers(&self, b: BlockId) -> RegSet {
        self.program.instructions[self.blocks[b].range()]
            .iter()
            .fold(RegSet::new(), |acc, i| acc.union(&i.general_registers()))
    }

    fn is_call(&self, b: BlockId) -> bool {
        self.program.instructions[self.blocks[b].range()].iter().any(|i| i.is_call())
    }

    fn ends_in_memory_op(&self, b: BlockId) -> bool {
        self.program.instructions[self.blocks[b].end - 1].is_memory()
    }
}

/// Splits so that every call sits in a block of its own, and in strand mode
/// so that every local-memory operation ends its block.
fn presplit(bs: &mut Blocks<'_>, mode: BoundaryMode) {
    let mut b = 0;
    while b < bs.blocks.len() {
        let range = bs.blocks[b].range();
        let cut = range.clone().find_map(|pc| {
            let inst = &bs.program.instructions[pc];
            if inst.is_call() {
                if pc > range.start {
                    Some(pc)
                } else if pc + 1 < range.end {
                    Some(pc + 1)
                } else {
                    None
                }
            } else if mode == BoundaryMode::Strand && inst.is_memory() && pc + 1 < range.end {
                Some(pc + 1)
            } else {
                None
            }
        });
        match cut {
            Some(at) => {
                bs.split(b, at);
            }
            None => b += 1,
        }
    }
}

/// Shared admission test used by both passes: `succs_inside` reports
/// whether the candidate has an edge back into the region and
/// `after_memory_op` whether it is entered right after a long-latency
/// operation.
fn strand_blocks_join(mode: BoundaryMode, succs_inside: bool, after_memory_op: bool) -> bool {
    mode == BoundaryMode::Strand && (succs_inside || after_memory_op)
}

/// First pass: grows intervals from a FIFO worklist of headers. A block
/// joins the current interval when all its predecessors already belong to
/// it and the merged working set stays within the limit; headers whose own
/// registers overflow are cut and the remainder becomes a new header.
pub fn form_intervals_pass1(c: &Cfg, _l: &LivenessInfo, cfg: &IntervalConfig) -> Result<IntervalCfg, IntervalError> {
    cfg.validate()?;
    if let Reducibility::Irreducible { offending_edges } = check_reducible(c) {
        return Err(IntervalError::IrreducibleCfg { offending_edges });
    }
    let n = cfg.max_registers;
    let mut bs = Blocks { program: &c.program, blocks: c.blocks.clone() };
    presplit(&mut bs, cfg.boundary_mode);

    let mut assigned: Vec<Option<IntervalId>> = vec![None; bs.blocks.len()];
    let mut queued: Vec<bool> = vec![false; bs.blocks.len()];
    let mut groups: Vec<Vec<BlockId>> = Vec::new();
    let mut worklist = VecDeque::new();
    if !bs.blocks.is_empty() {
        worklist.push_back(c.entry);
        queued[c.entry] = true;
    }

    while let Some(h) = worklist.pop_front() {
        let id = groups.len();
        let mut ws = RegSet::new();
        for pc in bs.blocks[h].range() {
            let regs = c.program.instructions[pc].general_registers();
            if regs.len() > n {
                return Err(IntervalError::InstructionTooWide { pc, registers: regs.len(), limit: n });
            }
            let merged = ws.union(&regs);
            if merged.len() > n {
                let tail = bs.split(h, pc);
                assigned.push(None);
                queued.push(true);
                worklist.push_back(tail);
                break;
            }
            ws = merged;
        }
        assigned[h] = Some(id);
        let mut members = vec![h];

        if !bs.is_call(h) {
            loop {
                let mut candidates: Vec<BlockId> = (0..bs.blocks.len())
                    .filter(|&b| assigned[b].is_none() && !queued[b] && b != c.entry && !bs.is_call(b))
                    .filter(|&b| bs.blocks[b].preds.iter().all(|&p| assigned[p] == Some(id)))
                    .collect();
                candidates.sort_by_key(|&b| bs.blocks[b].start);
                let pick = candidates.into_iter().find(|&b| {
                    let succs_inside = bs.blocks[b].succs.iter().any(|&s| assigned[s] == Some(id));
                    let after_mem = bs.blocks[b].preds.iter().any(|&p| bs.ends_in_memory_op(p));
                    ws.union(&bs.registers(b)).len() <= n
                        && !strand_blocks_join(cfg.boundary_mode, succs_inside, after_mem)
                });
                let Some(b) = pick else { break };
                ws.union_with(&bs.registers(b));
                assigned[b] = Some(id);
                members.push(b);
            }
        }

        let mut next: Vec<BlockId> = members
            .iter()
            .flat_map(|&m| bs.blocks[m].succs.iter().copied())
            .filter(|&s| assigned[s].is_none() && !queued[s])
            .collect();
        next.sort_by_key(|&b| bs.blocks[b].start);
        next.dedup();
        for s in next {
            queued[s] = true;
            worklist.push_back(s);
        }
        groups.push(members);
    }

    Ok(finish(&c.program, c, bs.blocks, groups, *cfg))
}

/// Second pass, repeated to a fixed point: merges whole intervals using the
/// same admission rule on the interval graph. Never splits.
pub fn reduce_intervals_pass2(icfg: &IntervalCfg, cfg: &IntervalConfig) -> IntervalCfg {
    let mut cur = icfg.clone();
    while let Some(next) = reduce_once(&cur, cfg) {
        debug_assert!(next.len() < cur.len());
        cur = next;
    }
    cur
}

/// One reduction sweep; `None` when nothing merges.
pub fn reduce_once(icfg: &IntervalCfg, cfg: &IntervalConfig) -> Option<IntervalCfg> {
    let n = cfg.max_registers;
    let k = icfg.intervals.len();
    let is_call = |i: IntervalId| {
        let h = &icfg.blocks[icfg.intervals[i].header];
        icfg.program.instructions[h.range()].iter().any(|x| x.is_call())
    };
    let header_after_mem = |i: IntervalId| {
        icfg.blocks[icfg.intervals[i].header]
            .preds
            .iter()
            .any(|&p| icfg.program.instructions[icfg.blocks[p].end - 1].is_memory())
    };

    let mut group_of: Vec<Option<usize>> = vec![None; k];
    let mut queued = vec![false; k];
    let mut groups: Vec<Vec<IntervalId>> = Vec::new();
    let mut worklist = VecDeque::new();
    if k > 0 {
        worklist.push_back(icfg.entry);
        queued[icfg.entry] = true;
    }
    while let Some(h) = worklist.pop_front() {
        let g = groups.len();
        group_of[h] = Some(g);
        let mut members = vec![h];
        let mut ws = icfg.intervals[h].working_set;
        if !is_call(h) {
            loop {
                let pick = (0..k).find(|&x| {
                    let iv = &icfg.intervals[x];
                    group_of[x].is_none()
                        && !queued[x]
                        && x != icfg.entry
                        && !is_call(x)
                        && iv.preds.iter().all(|&p| group_of[p] == Some(g))
                        && ws.union(&iv.working_set).len() <= n
                        && !strand_blocks_join(
                            cfg.boundary_mode,
                            iv.succs.iter().any(|&s| group_of[s] == Some(g)),
                            header_after_mem(x),
                        )
                });
                let Some(x) = pick else { break };
                ws.union_with(&icfg.intervals[x].working_set);
                group_of[x] = Some(g);
                members.push(x);
            }
        }
        let mut next: Vec<IntervalId> = members
            .iter()
            .flat_map(|&m| icfg.intervals[m].succs.iter().copied())
            .filter(|&s| group_of[s].is_none() && !queued[s])
            .collect();
        next.sort_unstable();
        next.dedup();
        for s in next {
            queued[s] = true;
            worklist.push_back(s);
        }
        groups.push(members);
    }
    if groups.len() == k {
        return None;
    }
    let block_groups: Vec<Vec<BlockId>> = groups
        .iter()
        .map(|g| {
            // The group's first member supplies the header.
            let mut blocks = icfg.intervals[g[0]].blocks.clone();
            let header = icfg.intervals[g[0]].header;
            blocks.retain(|&b| b != header);
            blocks.insert(0, header);
            blocks.extend(g[1..].iter().flat_map(|&m| icfg.intervals[m].blocks.iter().copied()));
            blocks
        })
        .collect();
    Some(rebuild(icfg, block_groups, *cfg))
}

/// Both passes: pass 1 followed by pass 2 to its fixed point.
pub fn form_intervals(c: &Cfg, l: &LivenessInfo, cfg: &IntervalConfig) -> Result<IntervalCfg, IntervalError> {
    let first = form_intervals_pass1(c, l, cfg)?;
    Ok(reduce_intervals_pass2(&first, cfg))
}

fn rebuild(icfg: &IntervalCfg, groups: Vec<Vec<BlockId>>, cfg: IntervalConfig) -> IntervalCfg {
    let mut out = assemble(&icfg.program, icfg.blocks.clone(), groups, icfg.block_of_pc.len(), cfg);
    out.block_of_pc = icfg.block_of_pc.clone();
    out
}

fn finish(program: &Program, c: &Cfg, blocks: Vec<BasicBlock>, groups: Vec<Vec<BlockId>>, cfg: IntervalConfig) -> IntervalCfg {
    // Canonical block ids: ascending start instruction.
    let mut order: Vec<BlockId> = (0..blocks.len()).collect();
    order.sort_by_key(|&b| blocks[b].start);
    let mut remap = vec![0; blocks.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let canon: Vec<BasicBlock> = order
        .iter()
        .enumerate()
        .map(|(new, &old)| {
            let b = &blocks[old];
            let mut succs: Vec<BlockId> = b.succs.iter().map(|&s| remap[s]).collect();
            let mut preds: Vec<BlockId> = b.preds.iter().map(|&p| remap[p]).collect();
            succs.sort_unstable();
            preds.sort_unstable();
            BasicBlock { id: new, start: b.start, end: b.end, succs, preds }
        })
        .collect();
    let groups = groups.into_iter().map(|g| g.into_iter().map(|b| remap[b]).collect()).collect();
    let mut out = assemble(program, canon, groups, program.len(), cfg);
    for b in &out.blocks {
        for slot in &mut out.block_of_pc[b.range()] {
            *slot = Some(b.id);
        }
    }
    debug_assert!(c.block_of.iter().zip(&out.block_of_pc).all(|(a, b)| a.is_some() == b.is_some()));
    out
}

/// Builds intervals from block groups whose first element is the header;
/// interval ids follow header start order.
fn assemble(program: &Program, blocks: Vec<BasicBlock>, mut groups: Vec<Vec<BlockId>>, n_pcs: usize, cfg: IntervalConfig) -> IntervalCfg {
    groups.sort_by_key(|g| blocks[g[0]].start);
    let mut interval_of_block = vec![usize::MAX; blocks.len()];
    for (i, g) in groups.iter().enumerate() {
        for &b in g {
            interval_of_block[b] = i;
        }
    }
    let intervals: Vec<RegisterInterval> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let header = g[0];
            let mut members = g.clone();
            members.sort_unstable();
            let working_set = members.iter().fold(RegSet::new(), |acc, &b| {
                program.instructions[blocks[b].range()].iter().fold(acc, |a, inst| a.union(&inst.general_registers()))
            });
            let mut succs: Vec<IntervalId> = members
                .iter()
                .flat_map(|&b| blocks[b].succs.iter().map(|&s| interval_of_block[s]))
                .filter(|&s| s != i)
                .collect();
            succs.sort_unstable();
            succs.dedup();
            let mut preds: Vec<IntervalId> = members
                .iter()
                .flat_map(|&b| blocks[b].preds.iter().map(|&p| interval_of_block[p]))
                .filter(|&p| p != i)
                .collect();
            preds.sort_unstable();
            preds.dedup();
            RegisterInterval { id: i, header, blocks: members, working_set, succs, preds }
        })
        .collect();
    IntervalCfg {
        program: program.clone(),
        blocks,
        intervals,
        entry: 0,
        interval_of_block,
        block_of_pc: vec![None; n_pcs],
        config: cfg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{build_cfg, compute_liveness};
    use crate::ir::parse_program;

    fn pass1(src: &str, n: usize) -> IntervalCfg {
        let c = build_cfg(&parse_program(src).unwrap());
        let l = compute_liveness(&c);
        form_intervals_pass1(&c, &l, &IntervalConfig::new(n)).unwrap()
    }

    #[test]
    fn single_block_single_interval() {
        let ic = pass1("add.u32 R0, R0, 1\nexit", 1);
        assert_eq!(ic.len(), 1);
        assert!(ic.violations().is_empty());
    }

    #[test]
    fn overflowing_block_is_cut() {
        let ic = pass1("mov.u32 R0, 1\nmov.u32 R1, 1\nmov.u32 R2, 1\nexit", 2);
        assert_eq!(ic.len(), 2);
        assert_eq!(ic.ranges(0), vec![0..2]);
        assert_eq!(ic.ranges(1), vec![2..4]);
        assert!(ic.violations().is_empty());
    }

    #[test]
    fn too_wide_instruction_is_rejected() {
        let c = build_cfg(&parse_program("add.u32 R0, R1, R2\nexit").unwrap());
        let l = compute_liveness(&c);
        let err = form_intervals_pass1(&c, &l, &IntervalConfig::new(2)).unwrap_err();
        assert!(matches!(err, IntervalError::InstructionTooWide { pc: 0, registers: 3, limit: 2 }));
    }

    #[test]
    fn calls_get_their_own_interval() {
        let ic = pass1("mov.u32 R0, 1\ncall f\nmov.u32 R1, 1\nexit", 16);
        assert_eq!(ic.len(), 3);
        let merged = reduce_intervals_pass2(&ic, &IntervalConfig::new(16));
        assert_eq!(merged.len(), 3);
    }

    #[test]
    fn loop_header_starts_interval() {
        let ic = pass1("mov.u32 R0, 0\nL: add.u32 R0, R0, 1\n@p bra L\nexit", 16);
        assert_eq!(ic.len(), 2);
        assert_eq!(ic.header_pc(1), 1);
    }

    #[test]
    fn strand_mode_cuts_after_memory_ops() {
        let src = "ld.local.u32 R1, [R0]\nadd.u32 R1, R1, 1\nexit";
        let c = build_cfg(&parse_program(src).unwrap());
        let l = compute_liveness(&c);
        let ic = form_intervals(&c, &l, &IntervalConfig::new(16).strand()).unwrap();
        assert_eq!(ic.len(), 2);
        assert!(ic.violations().is_empty());
        assert_eq!(form_intervals(&c, &l, &IntervalConfig::new(16)).unwrap().len(), 1);
    }

    #[test]
    fn irreducible_is_rejected() {
        let c = build_cfg(&parse_program("@p bra B\nA: add.u32 R0, R0, 1\nB: add.u32 R1, R1, 1\n@q bra A\nexit").unwrap());
        let l = compute_liveness(&c);
        assert!(matches!(form_intervals(&c, &l, &IntervalConfig::default()), Err(IntervalError::IrreducibleCfg { .. })));
    }
}
