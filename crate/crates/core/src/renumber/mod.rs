//! Bank-aware register renumbering.
//!
//! Live ranges that share a register-interval are connected in the
//! Interval Conflict Graph (ICG). Colouring the ICG with one colour per main
//! register bank and renaming each range into a register of its colour's
//! bank removes the bank conflicts that would serialise a prefetch.

mod color;
mod rewrite;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cfg::{LiveRangeMap, RangeId};
use crate::intervals::{compute_working_set, IntervalCfg, IntervalId};
use crate::ir::Program;
use crate::regset::{RegSet, MAX_REGISTERS};

pub use color::{color_icg, color_usage, Coloring};
pub use rewrite::{
    check_equivalence, icg_to_dot, renumber_program, renumber_registers, RangeAssignment, RenumberError,
    RenumberOutcome, RenumberReport, Renumbering,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BankMapping {
    /// `bank = index mod banks` (interleaved).
    #[default]
    Mod,
    /// `bank = index div registers_per_bank` (contiguous).
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankLayout {
    pub banks: usize,
    pub registers_per_bank: usize,
    pub mapping: BankMapping,
}

impl Default for BankLayout {
    fn default() -> Self {
        BankLayout::new(16, BankMapping::Mod)
    }
}

impl BankLayout {
    /// Splits the 256-register space evenly across `banks`.
    pub fn new(banks: usize, mapping: BankMapping) -> Self {
        BankLayout { banks, registers_per_bank: MAX_REGISTERS / banks.max(1), mapping }
    }

    pub fn with_registers_per_bank(mut self, registers_per_bank: usize) -> Self {
        self.registers_per_bank = registers_per_bank;
        self
    }

    pub fn capacity(&self) -> usize {
        (self.banks * self.registers_per_bank).min(MAX_REGISTERS)
    }

    pub fn bank_of(&self, reg: u16) -> usize {
        match self.mapping {
            BankMapping::Mod => reg as usize % self.banks,
            BankMapping::Div => reg as usize / self.registers_per_bank,
        }
    }

    /// Registers of `bank`, ascending.
    pub fn bank_registers(&self, bank: usize) -> Vec<u16> {
        let cap = self.capacity();
        match self.mapping {
            BankMapping::Mod => (bank..cap).step_by(self.banks).map(|r| r as u16).collect(),
            BankMapping::Div => {
                let lo = bank * self.registers_per_bank;
                (lo..(lo + self.registers_per_bank).min(cap)).map(|r| r as u16).collect()
            }
        }
    }

    /// Checks the layout against the highest register a program uses.
    pub fn validate(&self, used: &RegSet) -> Result<(), String> {
        if self.banks == 0 || self.registers_per_bank == 0 {
            return Err("bank count and registers per bank must be positive".into());
        }
        if let Some(max) = used.iter().last() {
            if max as usize >= self.capacity() {
                return Err(format!(
                    "register R{max} does not fit {} banks x {} registers",
                    self.banks, self.registers_per_bank
                ));
            }
        }
        Ok(())
    }
}

/// Largest number of `ws` registers sharing one bank, minus one.
pub fn count_bank_conflicts(ws: &RegSet, layout: &BankLayout) -> usize {
    let mut per_bank = vec![0usize; layout.banks];
    for r in ws.iter() {
        per_bank[layout.bank_of(r) % layout.banks] += 1;
    }
    per_bank.into_iter().max().unwrap_or(0).saturating_sub(1)
}

/// Per-interval conflict counts bucketed as 0, 1, 2 and 3-or-more.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ConflictHistogram {
    pub per_interval: Vec<usize>,
    pub buckets: [usize; 4],
}

impl ConflictHistogram {
    pub fn from_counts(per_interval: Vec<usize>) -> Self {
        let mut buckets = [0; 4];
        for &c in &per_interval {
            buckets[c.min(3)] += 1;
        }
        ConflictHistogram { per_interval, buckets }
    }

    /// Fraction of intervals without conflicts; 1.0 when there are none.
    pub fn conflict_free_fraction(&self) -> f64 {
        if self.per_interval.is_empty() {
            1.0
        } else {
            self.buckets[0] as f64 / self.per_interval.len() as f64
        }
    }
}

pub fn conflict_distribution(icfg: &IntervalCfg, layout: &BankLayout) -> ConflictHistogram {
    conflict_distribution_of(&icfg.program, icfg, layout)
}

/// Conflict histogram of `program` (typically a renumbered variant)
/// over the instruction ranges of `icfg`'s intervals.
pub fn conflict_distribution_of(program: &Program, icfg: &IntervalCfg, layout: &BankLayout) -> ConflictHistogram {
    let counts = (0..icfg.len())
        .map(|i| count_bank_conflicts(&compute_working_set(program, &icfg.ranges(i)), layout))
        .collect();
    ConflictHistogram::from_counts(counts)
}

/// A renaming unit: one or more live ranges of the same register that are
/// accessed in a common interval and therefore must keep a common name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotatedRange {
    pub id: usize,
    pub register: u16,
    pub parts: Vec<RangeId>,
    /// Intervals in which some def or use of the range occurs.
    pub intervals: BTreeSet<IntervalId>,
    /// Intervals the range is live through without being accessed there.
    pub live_through: BTreeSet<IntervalId>,
}

impl AnnotatedRange {
    pub fn memberships(&self) -> BTreeSet<IntervalId> {
        self.intervals.union(&self.live_through).copied().collect()
    }
}

/// Records which intervals each live range is accessed in or live through.
/// Ranges of one register accessed in a common interval are fused, so that
/// renaming can never grow an interval's working set.
pub fn annotate_live_ranges(map: &LiveRangeMap, icfg: &IntervalCfg) -> Vec<AnnotatedRange> {
    let n = map.ranges.len();
    let access: Vec<BTreeSet<IntervalId>> = map
        .ranges
        .iter()
        .map(|r| r.instructions().into_iter().filter_map(|pc| icfg.interval_of_pc(pc)).collect())
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for a in 0..n {
        for b in a + 1..n {
            if map.ranges[a].register == map.ranges[b].register && !access[a].is_disjoint(&access[b]) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }

    let mut live_through: Vec<BTreeSet<IntervalId>> = vec![BTreeSet::new(); n];
    for iv in &icfg.intervals {
        let header_pc = icfg.header_pc(iv.id);
        for &r in &map.live_before[header_pc] {
            let escapes = iv.blocks.iter().any(|&b| map.live_after[icfg.blocks[b].end - 1].contains(&r));
            if escapes && !access[r].contains(&iv.id) {
                live_through[r].insert(iv.id);
            }
        }
    }

    let mut out: Vec<AnnotatedRange> = Vec::new();
    let mut unit_of_root = vec![usize::MAX; n];
    for r in 0..n {
        let root = find(&mut parent, r);
        if unit_of_root[root] == usize::MAX {
            unit_of_root[root] = out.len();
            out.push(AnnotatedRange {
                id: out.len(),
                register: map.ranges[r].register,
                parts: Vec::new(),
                intervals: BTreeSet::new(),
                live_through: BTreeSet::new(),
            });
        }
        let u = &mut out[unit_of_root[root]];
        u.parts.push(r);
        u.intervals.extend(&access[r]);
        u.live_through.extend(&live_through[r]);
    }
    for u in &mut out {
        let accessed = u.intervals.clone();
        u.live_through.retain(|i| !accessed.contains(i));
    }
    out
}

/// Which interval memberships produce ICG edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IcgMembership {
    /// Ranges conflict when both are accessed in some interval, i.e. both
    /// are in its prefetch set.
    #[default]
    Accessed,
    /// Also counts intervals a range is merely live through.
    AccessedOrLiveThrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntervalConflictGraph {
    pub nodes: usize,
    /// Sorted adjacency lists.
    pub adjacency: Vec<Vec<usize>>,
}

impl IntervalConflictGraph {
    pub fn from_edges(nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes];
        for (u, v) in edges {
            if u != v {
                adj[u].insert(v);
                adj[v].insert(u);
            }
        }
        IntervalConflictGraph { nodes, adjacency: adj.into_iter().map(|s| s.into_iter().collect()).collect() }
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, vs)| vs.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }
}

/// Connects every pair of ranges sharing an interval.
pub fn build_icg(ranges: &[AnnotatedRange], membership: IcgMembership) -> IntervalConflictGraph {
    let sets: Vec<BTreeSet<IntervalId>> = ranges
        .iter()
        .map(|r| match membership {
            IcgMembership::Accessed => r.intervals.clone(),
            IcgMembership::AccessedOrLiveThrough => r.memberships(),
        })
        .collect();
    let mut edges = Vec::new();
    for a in 0..ranges.len() {
        for b in a + 1..ranges.len() {
            if !sets[a].is_disjoint(&sets[b]) {
                edges.push((a, b));
            }
        }
    }
    IntervalConflictGraph::from_edges(ranges.len(), edges)
}
