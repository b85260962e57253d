use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{Cfg, LivenessInfo};

pub type RangeId = usize;

/// One def or use of a general register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Site {
    pub pc: usize,
    /// Source operand index, or `None` for the destination.
    pub operand: Option<usize>,
}

/// A web of defs and uses of one register connected by reaching
/// definitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegisterLiveRange {
    pub id: RangeId,
    pub register: u16,
    pub defs: Vec<usize>,
    /// `(pc, source operand index)`.
    pub uses: Vec<(usize, usize)>,
    /// The value is live on entry to the program (an input).
    pub live_at_entry: bool,
}

impl RegisterLiveRange {
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.defs
            .iter()
            .map(|&pc| Site { pc, operand: None })
            .chain(self.uses.iter().map(|&(pc, op)| Site { pc, operand: Some(op) }))
    }

    /// Instructions that read or write this range.
    pub fn instructions(&self) -> BTreeSet<usize> {
        self.defs.iter().copied().chain(self.uses.iter().map(|&(pc, _)| pc)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LiveRangeMap {
    pub ranges: Vec<RegisterLiveRange>,
    /// Range written by each instruction's general destination.
    pub def_range: Vec<Option<RangeId>>,
    /// Range read by each general source operand.
    pub use_range: Vec<Vec<Option<RangeId>>>,
    /// Ranges of registers live on program entry.
    pub entry_range: BTreeMap<u16, RangeId>,
    /// Ranges live immediately before each instruction, ascending.
    pub live_before: Vec<Vec<RangeId>>,
    /// Ranges live immediately after each instruction, ascending.
    pub live_after: Vec<Vec<RangeId>>,
}

impl LiveRangeMap {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Reaching definitions, keyed by register. A definition id is the defining
/// pc, or `n + reg` for the implicit definition of a live-in register.
type Reaching = BTreeMap<u16, BTreeSet<usize>>;

fn transfer(reaching: &mut Reaching, c: &Cfg, pc: usize) {
    let inst = &c.program.instructions[pc];
    if let Some(d) = inst.general_def() {
        let set = reaching.entry(d.index).or_default();
        if inst.guard.is_none() {
            set.clear();
        }
        set.insert(pc);
    }
}

/// Builds def-use webs by union-find. A use joins every definition that
/// reaches it; all sites of one register within an instruction join; and
/// definitions of a register that meet at a control-flow join are merged.
pub fn build_live_ranges(c: &Cfg, l: &LivenessInfo) -> LiveRangeMap {
    let n = c.program.len();
    let entry_live: Vec<u16> = if c.blocks.is_empty() { Vec::new() } else { l.live_in[c.entry].iter().collect() };

    // Block-level reaching definitions.
    let mut reach_in: Vec<Reaching> = vec![Reaching::new(); c.blocks.len()];
    let mut reach_out: Vec<Reaching> = vec![Reaching::new(); c.blocks.len()];
    let entry_defs: Reaching = entry_live.iter().map(|&r| (r, BTreeSet::from([n + r as usize]))).collect();
    let rpo = c.reverse_postorder();
    let mut changed = true;
    while changed {
        changed = false;
        for &b in &rpo {
            let mut inn = if b == c.entry { entry_defs.clone() } else { Reaching::new() };
            for &p in &c.blocks[b].preds {
                for (r, defs) in &reach_out[p] {
                    inn.entry(*r).or_default().extend(defs);
                }
            }
            let mut out = inn.clone();
            for pc in c.blocks[b].range() {
                transfer(&mut out, c, pc);
            }
            if inn != reach_in[b] || out != reach_out[b] {
                reach_in[b] = inn;
                reach_out[b] = out;
                changed = true;
            }
        }
    }

    // Node layout: [0, n) defs by pc, [n, n + 256) entry defs, then uses.
    let mut use_node: Vec<Vec<Option<usize>>> = Vec::with_capacity(n);
    let mut next = n + crate::regset::MAX_REGISTERS;
    for inst in &c.program.instructions {
        let mut row = vec![None; inst.sources.len()];
        for (op, _) in inst.general_uses() {
            row[op] = Some(next);
            next += 1;
        }
        use_node.push(row);
    }
    let mut uf = UnionFind::new(next);
    let mut live_before_defs: Vec<Reaching> = vec![Reaching::new(); n];
    let mut live_after_defs: Vec<Reaching> = vec![Reaching::new(); n];

    for b in &c.blocks {
        if b.preds.len() > 1 {
            for defs in reach_in[b.id].values() {
                let mut it = defs.iter();
                if let Some(&first) = it.next() {
                    for &d in it {
                        uf.union(first, d);
                    }
                }
            }
        }
        let mut cur = reach_in[b.id].clone();
        for pc in b.range() {
            let inst = &c.program.instructions[pc];
            let mut same_reg: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
            for (op, r) in inst.general_uses() {
                let node = use_node[pc][op].expect("allocated above");
                for &d in cur.get(&r.index).into_iter().flatten() {
                    uf.union(node, d);
                }
                same_reg.entry(r.index).or_default().push(node);
            }
            if let Some(d) = inst.general_def() {
                if inst.guard.is_some() {
                    for &prev in cur.get(&d.index).into_iter().flatten() {
                        uf.union(pc, prev);
                    }
                }
                same_reg.entry(d.index).or_default().push(pc);
            }
            for nodes in same_reg.values() {
                for w in nodes.windows(2) {
                    uf.union(w[0], w[1]);
                }
            }
            live_before_defs[pc] = cur.clone();
            transfer(&mut cur, c, pc);
            live_after_defs[pc] = cur.clone();
        }
    }

    // Group sites by root; order groups by first site.
    struct Group {
        register: u16,
        defs: Vec<usize>,
        uses: Vec<(usize, usize)>,
        live_at_entry: bool,
    }
    let mut groups: BTreeMap<usize, Group> = BTreeMap::new();
    fn group<'a>(groups: &'a mut BTreeMap<usize, Group>, uf: &mut UnionFind, node: usize, reg: u16) -> &'a mut Group {
        let g = groups.entry(uf.find(node)).or_insert(Group {
            register: reg,
            defs: vec![],
            uses: vec![],
            live_at_entry: false,
        });
        debug_assert_eq!(g.register, reg);
        g
    }
    for &r in &entry_live {
        group(&mut groups, &mut uf, n + r as usize, r).live_at_entry = true;
    }
    for (pc, inst) in c.program.instructions.iter().enumerate() {
        if c.block_of[pc].is_none() {
            continue;
        }
        for (op, r) in inst.general_uses() {
            let node = use_node[pc][op].expect("allocated above");
            group(&mut groups, &mut uf, node, r.index).uses.push((pc, op));
        }
        if let Some(d) = inst.general_def() {
            group(&mut groups, &mut uf, pc, d.index).defs.push(pc);
        }
    }

    let mut ordered: Vec<(usize, Group)> = groups.into_iter().collect();
    let first_key = |g: &Group| {
        let first = g.defs.iter().copied().chain(g.uses.iter().map(|u| u.0)).min().unwrap_or(usize::MAX);
        (if g.live_at_entry { 0 } else { 1 }, first, g.register)
    };
    ordered.sort_by_key(|(_, g)| first_key(g));

    let mut root_to_id: BTreeMap<usize, RangeId> = BTreeMap::new();
    let mut ranges = Vec::with_capacity(ordered.len());
    for (id, (root, mut g)) in ordered.into_iter().enumerate() {
        g.defs.sort_unstable();
        g.uses.sort_unstable();
        root_to_id.insert(root, id);
        ranges.push(RegisterLiveRange {
            id,
            register: g.register,
            defs: g.defs,
            uses: g.uses,
            live_at_entry: g.live_at_entry,
        });
    }
    let mut range_of = |node: usize| root_to_id[&uf.find(node)];

    let mut def_range = vec![None; n];
    let mut use_range: Vec<Vec<Option<RangeId>>> =
        c.program.instructions.iter().map(|i| vec![None; i.sources.len()]).collect();
    for r in &ranges {
        for &pc in &r.defs {
            def_range[pc] = Some(r.id);
        }
        for &(pc, op) in &r.uses {
            use_range[pc][op] = Some(r.id);
        }
    }
    let entry_range = entry_live.iter().map(|&r| (r, range_of(n + r as usize))).collect();

    let mut resolve = |live: &crate::regset::RegSet, defs: &Reaching| -> Vec<RangeId> {
        let mut out: Vec<RangeId> = live
            .iter()
            .filter_map(|r| defs.get(&r).and_then(|s| s.first()).map(|&d| range_of(d)))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    };
    let mut live_before = vec![Vec::new(); n];
    let mut live_after = vec![Vec::new(); n];
    for pc in 0..n {
        if c.block_of[pc].is_some() {
            live_before[pc] = resolve(&l.inst_live_in[pc], &live_before_defs[pc]);
            live_after[pc] = resolve(&l.inst_live_out[pc], &live_after_defs[pc]);
        }
    }

    LiveRangeMap { ranges, def_range, use_range, entry_range, live_before, live_after }
}
