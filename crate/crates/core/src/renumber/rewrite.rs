use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use super::{
    annotate_live_ranges, build_icg, color_icg, conflict_distribution, conflict_distribution_of, AnnotatedRange,
    BankLayout, Coloring, ConflictHistogram, IcgMembership, IntervalConflictGraph,
};
use crate::cfg::LiveRangeMap;
use crate::intervals::IntervalCfg;
use crate::ir::{interpret_traced, MachineState, Program};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenumberError {
    #[error("no register left for live range {unit} (originally R{register})")]
    RegisterSpaceExhausted { unit: usize, register: u16 },
    #[error("invalid bank layout: {0}")]
    InvalidLayout(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RangeAssignment {
    pub unit: usize,
    pub old: u16,
    pub new: u16,
    pub bank: usize,
    pub colored: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Renumbering {
    pub program: Program,
    pub assignments: Vec<RangeAssignment>,
    /// Where each register live on entry now lives.
    pub entry_map: BTreeMap<u16, u16>,
}

/// Pairs of units that may not share a register: a unit defined at an
/// instruction interferes with every other unit live right after it, and
/// all entry values interfere with each other.
fn interference(map: &LiveRangeMap, unit_of: &[usize], units: usize) -> Vec<BTreeSet<usize>> {
    let mut adj = vec![BTreeSet::new(); units];
    let mut add = |a: usize, b: usize| {
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    };
    for (pc, def) in map.def_range.iter().enumerate() {
        if let Some(d) = def {
            for &r in &map.live_after[pc] {
                add(unit_of[*d], unit_of[r]);
            }
        }
    }
    let entry: Vec<usize> = map.entry_range.values().map(|&r| unit_of[r]).collect();
    for (i, &a) in entry.iter().enumerate() {
        for &b in &entry[i + 1..] {
            add(a, b);
        }
    }
    adj
}

/// Gives every unit a register. Coloured units take the lowest free
/// register of their colour's bank; uncoloured units, and coloured ones
/// whose bank is full, go where they add the fewest same-interval conflicts.
pub fn renumber_registers(
    program: &Program,
    map: &LiveRangeMap,
    units: &[AnnotatedRange],
    coloring: &Coloring,
    layout: &BankLayout,
) -> Result<Renumbering, RenumberError> {
    layout.validate(&program.general_registers()).map_err(RenumberError::InvalidLayout)?;
    let mut unit_of = vec![usize::MAX; map.ranges.len()];
    for u in units {
        for &r in &u.parts {
            unit_of[r] = u.id;
        }
    }
    let interferes = interference(map, &unit_of, units.len());
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); layout.capacity()];
    let mut new_reg: Vec<Option<u16>> = vec![None; units.len()];

    let mut order: Vec<usize> = (0..units.len()).filter(|&u| coloring.color[u].is_some()).collect();
    order.extend((0..units.len()).filter(|&u| coloring.color[u].is_none()));

    for u in order {
        let free = |holders: &Vec<Vec<usize>>, r: u16| holders[r as usize].iter().all(|h| !interferes[u].contains(h));
        let lowest_in = |holders: &Vec<Vec<usize>>, bank: usize| {
            layout.bank_registers(bank).into_iter().find(|&r| free(holders, r))
        };
        let mut choice = match coloring.color[u] {
            Some(bank) => lowest_in(&holders, bank),
            None => None,
        };
        if choice.is_none() {
            choice = fallback_register(u, units, &new_reg, layout, |r| free(&holders, r));
        }
        let r = choice.ok_or(RenumberError::RegisterSpaceExhausted { unit: u, register: units[u].register })?;
        holders[r as usize].push(u);
        new_reg[u] = Some(r);
    }

    let reg_of_range = |range: usize| new_reg[unit_of[range]].expect("every unit assigned");
    let mut out = program.clone();
    for (pc, inst) in out.instructions.iter_mut().enumerate() {
        if let (Some(d), Some(dest)) = (map.def_range[pc], inst.dest.as_mut()) {
            dest.index = reg_of_range(d);
        }
        for (op, src) in inst.sources.iter_mut().enumerate() {
            if let (Some(r), Some(reg)) = (map.use_range[pc][op], src.register_mut()) {
                reg.index = reg_of_range(r);
            }
        }
    }
    let assignments = units
        .iter()
        .map(|u| {
            let new = new_reg[u.id].expect("every unit assigned");
            RangeAssignment {
                unit: u.id,
                old: u.register,
                new,
                bank: layout.bank_of(new),
                colored: coloring.color[u.id].is_some(),
            }
        })
        .collect();
    let entry_map = map.entry_range.iter().map(|(&old, &range)| (old, reg_of_range(range))).collect();
    Ok(Renumbering { program: out, assignments, entry_map })
}

/// Lowest free register in the bank where `u` adds the fewest conflicts
/// within the intervals it is accessed in; ties prefer the original bank.
fn fallback_register(
    u: usize,
    units: &[AnnotatedRange],
    new_reg: &[Option<u16>],
    layout: &BankLayout,
    free: impl Fn(u16) -> bool,
) -> Option<u16> {
    let orig_bank = layout.bank_of(units[u].register);
    let mut banks: Vec<(usize, bool, usize)> = (0..layout.banks)
        .map(|b| {
            let cost = units
                .iter()
                .filter(|v| v.id != u && new_reg[v.id].is_some_and(|r| layout.bank_of(r) == b))
                .map(|v| v.intervals.intersection(&units[u].intervals).count())
                .sum();
            (cost, b != orig_bank, b)
        })
        .collect();
    banks.sort_unstable();
    let orig = units[u].register;
    banks.into_iter().find_map(|(_, _, b)| {
        if b == orig_bank && (orig as usize) < layout.capacity() && free(orig) {
            return Some(orig);
        }
        layout.bank_registers(b).into_iter().find(|&r| free(r))
    })
}

/// Runs both programs in lockstep from `init` (entry registers moved per
/// `entry_map` for the renamed one) and compares every step's effect.
pub fn check_equivalence(
    original: &Program,
    renamed: &Program,
    entry_map: &BTreeMap<u16, u16>,
    init: &MachineState,
    max_steps: u64,
) -> Result<(), String> {
    let mut init2 = init.clone();
    for (&old, &new) in entry_map {
        init2.regs[new as usize] = init.regs[old as usize];
    }
    let a = interpret_traced(original, init.clone(), max_steps);
    let b = interpret_traced(renamed, init2, max_steps);
    match (a, b) {
        (Ok((sa, ta)), Ok((sb, tb))) => {
            if let Some(i) = ta.iter().zip(&tb).position(|(x, y)| x != y) {
                return Err(format!("step {i} differs: {:?} vs {:?}", ta[i], tb[i]));
            }
            if ta.len() != tb.len() || sa.status != sb.status || sa.memory != sb.memory {
                return Err("final states differ".into());
            }
            Ok(())
        }
        (Err(ea), Err(eb)) if ea == eb => Ok(()),
        (a, b) => Err(format!("outcomes differ: {:?} vs {:?}", a.err(), b.err())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenumberOutcome {
    pub units: Vec<AnnotatedRange>,
    pub icg: IntervalConflictGraph,
    pub coloring: Coloring,
    pub renumbering: Renumbering,
    pub before: ConflictHistogram,
    pub after: ConflictHistogram,
    /// The coloured assignment made some interval worse and was dropped.
    pub reverted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenumberReport {
    pub ranges: Vec<RangeAssignment>,
    pub conflicts_before: Vec<usize>,
    pub conflicts_after: Vec<usize>,
    pub histogram_before: [usize; 4],
    pub histogram_after: [usize; 4],
    pub uncolored: usize,
    pub reverted: bool,
}

impl RenumberOutcome {
    pub fn report(&self) -> RenumberReport {
        RenumberReport {
            ranges: self.renumbering.assignments.clone(),
            conflicts_before: self.before.per_interval.clone(),
            conflicts_after: self.after.per_interval.clone(),
            histogram_before: self.before.buckets,
            histogram_after: self.after.buckets,
            uncolored: self.coloring.uncolored().len(),
            reverted: self.reverted,
        }
    }

    pub fn to_dot(&self) -> String {
        icg_to_dot(&self.icg, &self.coloring, &self.units)
    }
}

/// The whole renumbering pass over an interval partition.
pub fn renumber_program(
    icfg: &IntervalCfg,
    map: &LiveRangeMap,
    layout: &BankLayout,
    membership: IcgMembership,
) -> Result<RenumberOutcome, RenumberError> {
    let units = annotate_live_ranges(map, icfg);
    let icg = build_icg(&units, membership);
    let coloring = color_icg(&icg, layout.banks);
    debug_assert!(coloring.is_proper(&icg));
    let renumbering = renumber_registers(&icfg.program, map, &units, &coloring, layout)?;
    let before = conflict_distribution(icfg, layout);
    let after = conflict_distribution_of(&renumbering.program, icfg, layout);
    let worse = before.per_interval.iter().zip(&after.per_interval).any(|(b, a)| a > b);
    if worse {
        log::info!("renumbering would add conflicts to some interval; keeping original registers");
        let renumbering = identity_renumbering(&icfg.program, map, &units, &coloring, layout);
        let after = before.clone();
        return Ok(RenumberOutcome { units, icg, coloring, renumbering, before, after, reverted: true });
    }
    Ok(RenumberOutcome { units, icg, coloring, renumbering, before, after, reverted: false })
}

fn identity_renumbering(
    program: &Program,
    map: &LiveRangeMap,
    units: &[AnnotatedRange],
    coloring: &Coloring,
    layout: &BankLayout,
) -> Renumbering {
    let assignments = units
        .iter()
        .map(|u| RangeAssignment {
            unit: u.id,
            old: u.register,
            new: u.register,
            bank: layout.bank_of(u.register),
            colored: coloring.color[u.id].is_some(),
        })
        .collect();
    let entry_map = map.entry_range.keys().map(|&r| (r, r)).collect();
    Renumbering { program: program.clone(), assignments, entry_map }
}

const PALETTE: [&str; 8] = ["palegreen", "lightblue", "khaki", "salmon", "plum", "orange", "cyan", "pink"];

/// Graphviz rendering of the ICG; nodes are filled with their bank colour.
pub fn icg_to_dot(g: &IntervalConflictGraph, coloring: &Coloring, units: &[AnnotatedRange]) -> String {
    let mut s = String::from("graph icg {\n");
    for u in units {
        let (fill, bank) = match coloring.color[u.id] {
            Some(c) => (PALETTE[c % PALETTE.len()], format!("bank {c}")),
            None => ("white", "uncolored".to_string()),
        };
        let _ = writeln!(s, "  n{} [label=\"R{} #{}\\n{}\", style=filled, fillcolor={}];", u.id, u.register, u.id, bank, fill);
    }
    for (a, b) in g.edges() {
        let _ = writeln!(s, "  n{a} -- n{b};");
    }
    s.push_str("}\n");
    s
}
