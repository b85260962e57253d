use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use super::config::{ConfigError, Design, DesignPoint, RegisterFileConfig};
use super::hw::{AddressAllocationUnit, RegisterCache, WarpControlBlock};
use super::trace::{TraceEvent, WarpTrace};
use crate::regset::RegSet;
use crate::renumber::count_bank_conflicts;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("warp {warp} needs {requested} cache banks but only {free} are free")]
    CacheFull { warp: usize, requested: usize, free: usize },
    #[error("{warps} traces exceed total_warps = {total}")]
    TooManyWarps { warps: usize, total: usize },
    #[error("deadlock at cycle {cycle}: {diagnostic}")]
    Deadlock { cycle: u64, diagnostic: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct IntervalPrefetchStats {
    pub prefetches: u64,
    /// Extra serial bank rounds caused by conflicts, summed.
    pub conflict_rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub design: Design,
    pub bank_latency_multiplier: f64,
    pub warps: usize,
    pub cycles: u64,
    pub instructions: u64,
    pub ipc: f64,
    /// Demand register reads from the main register file.
    pub main_rf_reads: u64,
    /// Demand register writes to the main register file.
    pub main_rf_writes: u64,
    pub prefetched_registers: u64,
    pub written_back_registers: u64,
    pub cache_accesses: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    /// Register accesses made while a warp was inside a prefetched interval.
    pub in_interval_accesses: u64,
    pub in_interval_hits: u64,
    pub in_interval_hit_rate: Option<f64>,
    pub prefetches: u64,
    pub interval_enters: u64,
    pub reactivation_fetches: u64,
    pub prefetch_latency_histogram: BTreeMap<u64, u64>,
    pub interval_prefetch: BTreeMap<usize, IntervalPrefetchStats>,
    pub activations: u64,
    pub deactivations: u64,
    pub aau_violations: u64,
    pub bank_sharing_violations: u64,
    pub metadata: Option<DesignPoint>,
}

impl SimulationReport {
    fn empty<S: Scalar>(cfg: &RegisterFileConfig<S>, warps: usize) -> Self {
        SimulationReport {
            design: cfg.design,
            bank_latency_multiplier: cfg.bank_latency_multiplier.to_f64_lossy(),
            warps,
            cycles: 0,
            instructions: 0,
            ipc: 0.0,
            main_rf_reads: 0,
            main_rf_writes: 0,
            prefetched_registers: 0,
            written_back_registers: 0,
            cache_accesses: 0,
            cache_hits: 0,
            cache_misses: 0,
            in_interval_accesses: 0,
            in_interval_hits: 0,
            in_interval_hit_rate: None,
            prefetches: 0,
            interval_enters: 0,
            reactivation_fetches: 0,
            prefetch_latency_histogram: BTreeMap::new(),
            interval_prefetch: BTreeMap::new(),
            activations: 0,
            deactivations: 0,
            aau_violations: 0,
            bank_sharing_violations: 0,
            metadata: cfg.metadata().copied(),
        }
    }

    /// Registers moved between the main register file and the cache by
    /// prefetch and write-back.
    pub fn swap_traffic(&self) -> u64 {
        self.prefetched_registers + self.written_back_registers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    /// Inactive and ready to take a warp row.
    Pending,
    /// Inactive until a long-latency operation completes.
    Waiting(u64),
    Active,
    Done,
}

struct Warp<'a> {
    id: usize,
    events: &'a [TraceEvent],
    next: usize,
    phase: Phase,
    ready_at: u64,
    wcb: WarpControlBlock,
}

impl Warp<'_> {
    fn peek(&self) -> Option<&TraceEvent> {
        self.events.get(self.next)
    }
}

struct Sim<'a, S: Scalar> {
    cfg: &'a RegisterFileConfig<S>,
    warps: Vec<Warp<'a>>,
    rows: AddressAllocationUnit,
    row_owner: Vec<Option<usize>>,
    releases: Vec<(u64, usize)>,
    pending: VecDeque<usize>,
    rfc: RegisterCache,
    report: SimulationReport,
    last_row: usize,
}

impl<S: Scalar> Sim<'_, S> {
    fn check_aau(&mut self, w: usize) {
        let wcb = &self.warps[w].wcb;
        if !wcb.banks.is_conserved() {
            self.report.aau_violations += 1;
        }
        if !wcb.one_register_per_bank() {
            self.report.bank_sharing_violations += 1;
        }
    }

    fn record_prefetch(&mut self, fetched: &RegSet, interval: Option<usize>) -> u64 {
        let latency = self.cfg.prefetch_latency(fetched);
        self.report.prefetches += 1;
        self.report.prefetched_registers += fetched.len() as u64;
        *self.report.prefetch_latency_histogram.entry(latency).or_default() += 1;
        if let Some(i) = interval {
            let conflicts = if fetched.is_empty() { 0 } else { count_bank_conflicts(fetched, &self.cfg.main_layout()) };
            let e = self.report.interval_prefetch.entry(i).or_default();
            e.prefetches += 1;
            e.conflict_rounds += conflicts as u64;
        }
        latency
    }

    fn allocate_all(&mut self, w: usize, regs: &RegSet) -> Result<(), SimError> {
        let id = self.warps[w].id;
        let wcb = &mut self.warps[w].wcb;
        let missing = regs.difference(&wcb.valid);
        if missing.len() > wcb.banks.free_count() {
            return Err(SimError::CacheFull { warp: id, requested: missing.len(), free: wcb.banks.free_count() });
        }
        for r in missing.iter() {
            wcb.allocate(r);
        }
        self.check_aau(w);
        Ok(())
    }

    fn activate(&mut self, w: usize, t: u64) -> Result<(), SimError> {
        let row = self.rows.allocate().expect("caller checked for a free row");
        self.row_owner[row] = Some(w);
        let design = self.cfg.design;
        let warp = &mut self.warps[w];
        warp.phase = Phase::Active;
        warp.wcb.warp_offset = Some(row);
        warp.ready_at = warp.ready_at.max(t);
        self.report.activations += 1;
        let at_boundary = matches!(warp.peek(), Some(TraceEvent::IntervalEnter { .. }) | None);
        if !design.prefetches() || at_boundary || warp.wcb.working_set.is_empty() {
            return Ok(());
        }
        let ws = warp.wcb.working_set;
        let fetched = if design.liveness_aware() { ws.intersection(&warp.wcb.liveness) } else { ws };
        self.allocate_all(w, &ws)?;
        let latency = self.record_prefetch(&fetched, None);
        self.report.reactivation_fetches += 1;
        self.warps[w].ready_at = t + latency;
        Ok(())
    }

    fn release_row(&mut self, w: usize, at: u64) {
        let row = self.warps[w].wcb.warp_offset.take().expect("active warp owns a row");
        self.row_owner[row] = None;
        self.releases.push((at, row));
        self.warps[w].wcb.evict_all();
        self.check_aau(w);
    }

    fn deactivate(&mut self, w: usize, t: u64) {
        let design = self.cfg.design;
        let wcb = &self.warps[w].wcb;
        let written = if design.liveness_aware() { wcb.valid.intersection(&wcb.liveness) } else { wcb.valid };
        let write_latency = if design.prefetches() { self.cfg.main_access_latency(&written) } else { 0 };
        if design.prefetches() {
            self.report.written_back_registers += written.len() as u64;
        }
        self.release_row(w, t + write_latency);
        self.warps[w].phase = Phase::Waiting(t + self.cfg.memory_stall_cycles);
        self.report.deactivations += 1;
    }

    fn enter_interval(&mut self, w: usize, t: u64, interval: usize, v: RegSet, live: RegSet) -> Result<(), SimError> {
        let aware = self.cfg.design.liveness_aware();
        self.report.interval_enters += 1;
        let wcb = &mut self.warps[w].wcb;
        let leaving = wcb.valid.difference(&v);
        let written = if aware { leaving.intersection(&live) } else { leaving };
        self.report.written_back_registers += written.len() as u64;
        for r in leaving.iter() {
            wcb.evict(r);
        }
        let new = v.difference(&wcb.valid);
        let fetched = if aware { new.intersection(&live) } else { new };
        wcb.working_set = v;
        if aware {
            wcb.liveness = live;
        }
        self.allocate_all(w, &v)?;
        let latency = self.record_prefetch(&fetched, Some(interval));
        self.warps[w].ready_at = t + latency;
        Ok(())
    }

    /// Handles prefetch markers, long-latency stalls and trace ends of
    /// active warps that are ready at `t`. Returns whether anything changed.
    fn settle(&mut self, t: u64) -> Result<bool, SimError> {
        let mut changed = false;
        for w in 0..self.warps.len() {
            loop {
                let warp = &self.warps[w];
                if warp.phase != Phase::Active || warp.ready_at > t {
                    break;
                }
                match warp.peek().cloned() {
                    None => {
                        self.release_row(w, t);
                        self.warps[w].phase = Phase::Done;
                        changed = true;
                        break;
                    }
                    Some(TraceEvent::IntervalEnter { interval, prefetch, live }) => {
                        self.warps[w].next += 1;
                        if self.cfg.design.prefetches() {
                            self.enter_interval(w, t, interval, prefetch, live)?;
                        }
                    }
                    Some(TraceEvent::LongLatency { .. }) => {
                        self.warps[w].next += 1;
                        self.deactivate(w, t);
                        changed = true;
                        break;
                    }
                    Some(TraceEvent::Exec { .. }) => break,
                }
            }
        }
        Ok(changed)
    }

    fn exec(&mut self, w: usize, t: u64) {
        let cfg = self.cfg;
        let Some(TraceEvent::Exec { reads, writes, dead, .. }) = self.warps[w].peek().cloned() else {
            unreachable!("issue picks warps at an exec event")
        };
        self.warps[w].next += 1;
        self.report.instructions += 1;
        let r = &mut self.report;
        let operand = match cfg.design {
            Design::Baseline => {
                r.main_rf_reads += reads.len() as u64;
                r.main_rf_writes += writes.len() as u64;
                cfg.main_access_latency(&reads.iter().copied().collect())
            }
            Design::Rfc => {
                let id = self.warps[w].id;
                let mut missed = RegSet::new();
                for (&reg, write) in reads.iter().map(|x| (x, false)).chain(writes.iter().map(|x| (x, true))) {
                    let a = self.rfc.access(id, reg, write);
                    r.cache_accesses += 1;
                    if a.hit {
                        r.cache_hits += 1;
                    } else {
                        r.cache_misses += 1;
                        if !write {
                            missed.insert(reg);
                        }
                    }
                    if a.writeback {
                        r.main_rf_writes += 1;
                    }
                }
                r.main_rf_reads += missed.len() as u64;
                cfg.cache_access_cycles + cfg.main_access_latency(&missed)
            }
            _ => {
                let wcb = &mut self.warps[w].wcb;
                let mut missed = RegSet::new();
                for &reg in reads.iter().chain(&writes) {
                    r.cache_accesses += 1;
                    r.in_interval_accesses += 1;
                    if wcb.valid.contains(reg) {
                        r.cache_hits += 1;
                        r.in_interval_hits += 1;
                    } else {
                        r.cache_misses += 1;
                        missed.insert(reg);
                    }
                }
                let demand_reads: RegSet = reads.iter().copied().filter(|&x| missed.contains(x)).collect();
                r.main_rf_reads += demand_reads.len() as u64;
                if cfg.design.liveness_aware() {
                    for (i, &reg) in reads.iter().enumerate() {
                        if dead >> i & 1 == 1 {
                            wcb.liveness.remove(reg);
                        }
                    }
                    for &reg in &writes {
                        wcb.liveness.insert(reg);
                    }
                }
                cfg.cache_access_cycles + cfg.main_access_latency(&demand_reads)
            }
        };
        self.warps[w].ready_at = t + operand + cfg.dependent_issue_cycles;
    }

    /// Round-robin over warp rows, starting after the last issuer.
    fn issue(&mut self, t: u64) -> bool {
        let n = self.row_owner.len();
        for k in 1..=n {
            let row = (self.last_row + k) % n;
            if let Some(w) = self.row_owner[row] {
                let warp = &self.warps[w];
                if warp.ready_at <= t && matches!(warp.peek(), Some(TraceEvent::Exec { .. })) {
                    self.exec(w, t);
                    self.last_row = row;
                    return true;
                }
            }
        }
        false
    }

    fn run(&mut self) -> Result<u64, SimError> {
        let mut t = 0u64;
        loop {
            let mut woke: Vec<(u64, usize)> = self
                .warps
                .iter()
                .enumerate()
                .filter_map(|(i, w)| match w.phase {
                    Phase::Waiting(until) if until <= t => Some((until, i)),
                    _ => None,
                })
                .collect();
            woke.sort_unstable();
            for (until, w) in woke {
                self.warps[w].phase = Phase::Pending;
                self.warps[w].ready_at = until;
                self.pending.push_back(w);
            }
            loop {
                let due: Vec<usize> = self.releases.iter().filter(|(at, _)| *at <= t).map(|&(_, r)| r).collect();
                self.releases.retain(|(at, _)| *at > t);
                for row in due {
                    self.rows.release(row);
                }
                while self.rows.free_count() > 0 {
                    let Some(w) = self.pending.pop_front() else { break };
                    self.activate(w, t)?;
                }
                if !self.rows.is_conserved() {
                    self.report.aau_violations += 1;
                }
                if !self.settle(t)? {
                    break;
                }
            }
            if self.warps.iter().all(|w| w.phase == Phase::Done) {
                return Ok(t);
            }
            if self.issue(t) {
                t += 1;
                continue;
            }
            let next = self
                .warps
                .iter()
                .filter_map(|w| match w.phase {
                    Phase::Active if w.ready_at > t => Some(w.ready_at),
                    Phase::Waiting(until) => Some(until),
                    _ => None,
                })
                .chain(self.releases.iter().map(|&(at, _)| at))
                .min();
            match next {
                Some(n) => t = n.max(t + 1),
                None => {
                    let waiting = self.pending.len();
                    return Err(SimError::Deadlock {
                        cycle: t,
                        diagnostic: format!(
                            "{waiting} warps wait for one of {} warp rows and no active warp can make progress",
                            self.rows.capacity()
                        ),
                    });
                }
            }
        }
    }
}

/// Runs `traces` through one SM with the given register file design.
pub fn simulate<S: Scalar>(traces: &[WarpTrace], cfg: &RegisterFileConfig<S>) -> Result<SimulationReport, SimError> {
    cfg.validate()?;
    if traces.len() > cfg.total_warps {
        return Err(SimError::TooManyWarps { warps: traces.len(), total: cfg.total_warps });
    }
    let warps = traces
        .iter()
        .map(|tr| Warp {
            id: tr.warp,
            events: &tr.events,
            next: 0,
            phase: Phase::Pending,
            ready_at: 0,
            wcb: WarpControlBlock::new(cfg.cache_banks),
        })
        .collect();
    let mut sim = Sim {
        cfg,
        warps,
        rows: AddressAllocationUnit::new(cfg.active_warps),
        row_owner: vec![None; cfg.active_warps],
        releases: Vec::new(),
        pending: (0..traces.len()).collect(),
        rfc: RegisterCache::new(cfg.rfc_entries, cfg.rfc_ways),
        report: SimulationReport::empty(cfg, traces.len()),
        last_row: cfg.active_warps.saturating_sub(1),
    };
    let cycles = sim.run()?;
    let mut report = sim.report;
    report.cycles = cycles;
    report.ipc = if cycles == 0 { 0.0 } else { report.instructions as f64 / cycles as f64 };
    if report.in_interval_accesses > 0 {
        report.in_interval_hit_rate = Some(report.in_interval_hits as f64 / report.in_interval_accesses as f64);
    }
    log::debug!("{} x{}: {} cycles, {} instructions", cfg.design, report.bank_latency_multiplier, cycles, report.instructions);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Multiplier;

    fn set(regs: impl IntoIterator<Item = u16>) -> RegSet {
        regs.into_iter().collect()
    }

    fn enter(v: RegSet, live: RegSet) -> TraceEvent {
        TraceEvent::IntervalEnter { interval: 0, prefetch: v, live }
    }

    fn exec(reads: &[u16], writes: &[u16]) -> TraceEvent {
        TraceEvent::Exec { pc: 0, reads: reads.to_vec(), writes: writes.to_vec(), dead: 0 }
    }

    fn mem() -> TraceEvent {
        TraceEvent::LongLatency { class: "mem".into() }
    }

    fn cfg(design: Design) -> RegisterFileConfig<Multiplier> {
        RegisterFileConfig { dependent_issue_cycles: 0, ..RegisterFileConfig::new(design) }
    }

    #[test]
    fn empty_trace_set() {
        for d in Design::ALL {
            let r = simulate(&[], &cfg(d)).unwrap();
            assert_eq!(r.cycles, 0);
            assert_eq!(r.instructions, 0);
            assert_eq!(r.prefetches, 0);
            assert_eq!(r.swap_traffic(), 0);
        }
    }

    #[test]
    fn other_warp_issues_while_one_prefetches() {
        let a = WarpTrace { warp: 0, events: vec![enter(set([0, 16, 1, 2]), set([0, 16, 1, 2])), exec(&[0], &[1])] };
        let b = WarpTrace { warp: 1, events: (0..6).map(|_| exec(&[], &[])).collect() };
        let c = cfg(Design::Ltrf);
        assert_eq!(c.prefetch_latency(&set([0, 16, 1, 2])), 4);
        let r = simulate(&[a, b], &c).unwrap();
        assert_eq!(r.instructions, 7);
        // b issues at cycles 0..=3 while a prefetches, a issues at 4, b at 5 and 6.
        assert_eq!(r.cycles, 7);
        assert_eq!(r.prefetch_latency_histogram, BTreeMap::from([(4, 1)]));
    }

    #[test]
    fn deactivation_writes_back_working_set_or_live_part() {
        let ws = set(0..16);
        let live = set(0..5);
        let t = vec![WarpTrace { warp: 0, events: vec![enter(ws, live), exec(&[0], &[]), mem()] }];
        let ltrf = simulate(&t, &cfg(Design::Ltrf)).unwrap();
        assert_eq!(ltrf.written_back_registers, 16);
        let plus = simulate(&t, &cfg(Design::LtrfPlus)).unwrap();
        assert_eq!(plus.written_back_registers, 5);
        assert_eq!(plus.deactivations, 1);
    }

    #[test]
    fn reactivation_refetches_live_part_of_working_set() {
        let ws = set(0..12);
        let live = set(0..8);
        let t = vec![WarpTrace { warp: 0, events: vec![enter(ws, live), exec(&[], &[]), mem(), exec(&[3], &[])] }];
        let plus = simulate(&t, &cfg(Design::LtrfPlus)).unwrap();
        assert_eq!(plus.reactivation_fetches, 1);
        assert_eq!(plus.prefetched_registers, 8 + 8);
        assert_eq!(plus.prefetches, plus.interval_enters + plus.reactivation_fetches);
        assert_eq!(plus.in_interval_hit_rate, Some(1.0));
        let ltrf = simulate(&t, &cfg(Design::Ltrf)).unwrap();
        assert_eq!(ltrf.prefetched_registers, 12 + 12);
    }

    #[test]
    fn boundary_activation_does_not_double_fetch() {
        let v = set([1, 2]);
        let t = vec![WarpTrace { warp: 0, events: vec![enter(v, v), exec(&[1], &[]), mem(), enter(v, v), exec(&[2], &[])] }];
        let r = simulate(&t, &cfg(Design::Ltrf)).unwrap();
        assert_eq!(r.reactivation_fetches, 0);
        assert_eq!(r.prefetches, 2);
        assert_eq!(r.prefetched_registers, 4);
    }

    #[test]
    fn first_activation_of_liveness_aware_design_allocates_only() {
        let t = vec![WarpTrace { warp: 0, events: vec![enter(set([4, 5]), RegSet::new()), exec(&[], &[4])] }];
        let r = simulate(&t, &cfg(Design::LtrfPlus)).unwrap();
        assert_eq!(r.prefetched_registers, 0);
        assert_eq!(r.prefetch_latency_histogram, BTreeMap::from([(1, 1)]));
    }

    #[test]
    fn stalled_warps_skip_to_wakeup() {
        let c = RegisterFileConfig { memory_stall_cycles: 100, ..cfg(Design::Baseline) };
        let t: Vec<_> = (0..2).map(|w| WarpTrace { warp: w, events: vec![mem(), exec(&[], &[])] }).collect();
        let r = simulate(&t, &c).unwrap();
        assert_eq!(r.instructions, 2);
        assert_eq!(r.cycles, 102);
    }

    #[test]
    fn no_warp_rows_is_a_deadlock() {
        let c = RegisterFileConfig { active_warps: 0, ..cfg(Design::Ltrf) };
        let t = vec![WarpTrace { warp: 0, events: vec![exec(&[], &[])] }];
        assert!(matches!(simulate(&t, &c), Err(SimError::Deadlock { .. })));
    }

    #[test]
    fn oversized_working_set_is_cache_full() {
        let c = RegisterFileConfig { cache_banks: 4, ..cfg(Design::Ltrf) };
        let t = vec![WarpTrace { warp: 0, events: vec![enter(set(0..5), set(0..5))] }];
        assert!(matches!(simulate(&t, &c), Err(SimError::CacheFull { requested: 5, free: 4, .. })));
    }

    #[test]
    fn too_many_traces() {
        let c = RegisterFileConfig { total_warps: 1, active_warps: 1, ..cfg(Design::Baseline) };
        let t: Vec<_> = (0..2).map(|w| WarpTrace { warp: w, events: vec![] }).collect();
        assert!(matches!(simulate(&t, &c), Err(SimError::TooManyWarps { .. })));
    }

    #[test]
    fn baseline_pays_main_latency_per_instruction() {
        let c = cfg(Design::Baseline).with_multiplier(Multiplier::from_integer(3));
        let t = vec![WarpTrace { warp: 0, events: vec![exec(&[0, 16], &[1]), exec(&[1], &[])] }];
        let r = simulate(&t, &c).unwrap();
        // two reads in one bank: 2 rounds of 3 cycles + 1 crossbar cycle, then 3 + 1.
        assert_eq!(r.cycles, 7 + 4);
        assert_eq!(r.main_rf_reads, 3);
        assert_eq!(r.main_rf_writes, 1);
    }

    #[test]
    fn register_cache_counts_are_consistent() {
        let t = vec![WarpTrace { warp: 0, events: vec![exec(&[1, 2], &[3]), exec(&[1, 3], &[2])] }];
        let r = simulate(&t, &cfg(Design::Rfc)).unwrap();
        assert_eq!(r.cache_accesses, r.cache_hits + r.cache_misses);
        assert_eq!(r.cache_hits, 3);
        assert_eq!(r.main_rf_reads, 2);
    }
}
