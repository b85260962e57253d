//! Acceptance criteria, one pass/fail line each.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{fig8_layout, fixture, intervals_of, TERMINATING};
use ltrf::cfg::{build_cfg, check_reducible, compute_liveness};
use ltrf::corpus::{generate_corpus, random_state, CorpusConfig};
use ltrf::intervals::{
    form_intervals, form_intervals_pass1, interval_length_stats, optimal_interval_length, reduce_intervals_pass2,
    reduce_once, BoundaryMode, IntervalConfig,
};
use ltrf::ir::Program;
use ltrf::renumber::{
    check_equivalence, color_icg, conflict_distribution, count_bank_conflicts, renumber_program, BankLayout,
    BankMapping, IcgMembership, IntervalConflictGraph,
};
use ltrf::rfsim::{
    max_tolerable_latency, prepare_workload, simulate, table2_multipliers, Design, TraceKnobs, Workload,
};
use ltrf::{ExactRegisterFileConfig, Multiplier, RegSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn set(regs: &[u16]) -> RegSet {
    regs.iter().copied().collect()
}

fn walkthrough() -> Check {
    let p = fixture("listing1.ptx");
    let (icfg, map) = intervals_of(&p, &IntervalConfig::new(4));
    let layout = fig8_layout();
    let before = conflict_distribution(&icfg, &layout);
    let find = |ws: &[u16]| {
        icfg.intervals.iter().position(|i| i.working_set == set(ws)).ok_or_else(|| format!("no interval with {ws:?}"))
    };
    let loads = find(&[0, 1, 4, 5])?;
    let bumps = find(&[0, 1, 2, 3])?;
    ensure(before.per_interval[loads] == 1 && before.per_interval[bumps] == 1, || {
        format!("conflicts before {:?}", before.per_interval)
    })?;
    let out = renumber_program(&icfg, &map, &layout, IcgMembership::Accessed).map_err(|e| e.to_string())?;
    ensure(out.after.per_interval.iter().all(|&c| c == 0), || format!("conflicts after {:?}", out.after.per_interval))?;
    let r1: Vec<_> = out.renumbering.assignments.iter().filter(|a| a.old == 1).collect();
    ensure(!r1.is_empty() && r1.iter().all(|a| layout.bank_of(a.new) == 1), || format!("R1 placed as {r1:?}"))?;
    let names: Vec<String> = r1.iter().map(|a| format!("R{}", a.new)).collect();
    Ok(format!("{} intervals, conflicts {:?} -> {:?}, R1 -> {}", icfg.len(), before.per_interval, out.after.per_interval, names.join("/")))
}

fn nested_loop() -> Check {
    let p = fixture("nested_loop.ptx");
    let c = build_cfg(&p);
    let l = compute_liveness(&c);
    let cfg = IntervalConfig::new(16);
    let first = form_intervals_pass1(&c, &l, &cfg).map_err(|e| e.to_string())?;
    let second = reduce_intervals_pass2(&first, &cfg);
    ensure(c.blocks.len() == 3, || format!("{} blocks", c.blocks.len()))?;
    ensure(first.len() == 2 && second.len() == 1, || format!("pass 1 {} intervals, pass 2 {}", first.len(), second.len()))?;
    Ok("3 blocks: pass 1 gives 2 intervals, pass 2 gives 1".into())
}

fn corpus(seed: u64, n: usize) -> Vec<Program> {
    let cfg = CorpusConfig { max_blocks: 30, ..CorpusConfig::default() };
    generate_corpus(seed, n, &cfg)
}

fn interval_invariants() -> Check {
    let programs = corpus(1001, 1000);
    let mut checked = 0;
    let mut max_blocks = 0;
    for (i, p) in programs.iter().enumerate() {
        let c = build_cfg(p);
        max_blocks = max_blocks.max(c.blocks.len());
        ensure(c.blocks.len() <= 30, || format!("program {i} has {} blocks", c.blocks.len()))?;
        ensure(check_reducible(&c).is_reducible(), || format!("program {i} irreducible"))?;
        let l = compute_liveness(&c);
        for n in [3, 4, 8, 16] {
            for mode in [BoundaryMode::RegisterInterval, BoundaryMode::Strand] {
                let cfg = IntervalConfig { max_registers: n, boundary_mode: mode };
                let icfg = form_intervals(&c, &l, &cfg).map_err(|e| format!("program {i}: {e}"))?;
                let v = icfg.violations();
                ensure(v.is_empty(), || format!("program {i} n {n} {mode:?}: {v:?}"))?;
                ensure(icfg.intervals.iter().all(|iv| iv.working_set.len() <= n), || format!("program {i} oversized"))?;
                ensure(reduce_once(&icfg, &cfg).is_none(), || format!("program {i} n {n}: pass 2 not at a fixed point"))?;
                ensure(reduce_intervals_pass2(&icfg, &cfg) == icfg, || format!("program {i} n {n}: pass 2 not idempotent"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{} CFGs (up to {max_blocks} blocks), {checked} partitions, 0 violations", programs.len()))
}

/// Exhaustive k-colourability by backtracking over nodes in index order.
fn colorable(g: &IntervalConflictGraph, k: usize) -> bool {
    fn go(g: &IntervalConflictGraph, k: usize, u: usize, color: &mut Vec<usize>) -> bool {
        if u == g.nodes {
            return true;
        }
        for c in 0..k {
            if g.adjacency[u].iter().all(|&v| v >= u || color[v] != c) {
                color[u] = c;
                if go(g, k, u + 1, color) {
                    return true;
                }
            }
        }
        false
    }
    go(g, k, 0, &mut vec![usize::MAX; g.nodes])
}

fn random_graph(rng: &mut ChaCha8Rng) -> IntervalConflictGraph {
    let n = rng.random_range(2..=16);
    let p = rng.random_range(0.1..0.6);
    let edges: Vec<(usize, usize)> =
        (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|_| rng.random_bool(p)).collect();
    IntervalConflictGraph::from_edges(n, edges)
}

/// Agreement of Chaitin success with exhaustive search over colourable
/// (graph, k) cases: (agreed, colourable).
fn agreement(graphs: &[IntervalConflictGraph]) -> Result<(usize, usize), String> {
    let (mut colorable_cases, mut agreed) = (0, 0);
    for g in graphs {
        for k in [2, 3, 4] {
            let c = color_icg(g, k);
            ensure(c.is_proper(g), || "improper colouring".into())?;
            ensure(c.color.iter().flatten().all(|&x| x < k), || "colour out of range".into())?;
            let exact = colorable(g, k);
            let chaitin = c.uncolored().is_empty();
            ensure(exact || !chaitin, || "coloured an uncolourable graph".into())?;
            if exact {
                colorable_cases += 1;
                agreed += chaitin as usize;
            }
        }
    }
    Ok((agreed, colorable_cases))
}

fn coloring_and_renumbering() -> Check {
    let programs = corpus(2002, 300);
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut icgs = Vec::new();
    let mut equivalence_runs = 0;
    for (i, p) in programs.iter().enumerate() {
        for n in [3, 4, 8] {
            let (icfg, map) = intervals_of(p, &IntervalConfig::new(n));
            let layout = BankLayout::new(4, BankMapping::Mod);
            let out = renumber_program(&icfg, &map, &layout, IcgMembership::Accessed).map_err(|e| e.to_string())?;
            ensure(out.coloring.is_proper(&out.icg), || format!("program {i}: improper colouring"))?;
            if out.icg.nodes <= 16 {
                icgs.push(out.icg.clone());
            }
            if i < 100 && n == 8 {
                for _ in 0..100 {
                    let init = random_state(&mut rng);
                    check_equivalence(p, &out.renumbering.program, &out.renumbering.entry_map, &init, 1_000_000)
                        .map_err(|e| format!("program {i}: {e}"))?;
                    equivalence_runs += 1;
                }
            }
        }
    }
    let (agreed, cases) = agreement(&icgs)?;
    let rate = agreed as f64 / cases as f64;
    ensure(rate >= 0.95, || format!("agreement {agreed}/{cases} = {rate:.4} < 0.95"))?;
    let random: Vec<IntervalConflictGraph> = (0..2000).map(|_| random_graph(&mut rng)).collect();
    let (r_agreed, r_cases) = agreement(&random)?;
    Ok(format!(
        "{} ICGs, agreement {agreed}/{cases} = {:.2}% (random G(n,p) graphs, not asserted: {r_agreed}/{r_cases} = {:.2}%), {equivalence_runs} equivalence runs, 0 mismatches",
        icgs.len(),
        100.0 * rate,
        100.0 * r_agreed as f64 / r_cases as f64
    ))
}

fn conflict_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5005);
    for case in 0..10_000 {
        let banks = [1usize, 2, 4, 8, 16, 32][rng.random_range(0..6)];
        let layout = if rng.random_bool(0.5) {
            BankLayout::new(banks, BankMapping::Mod)
        } else {
            let rpb = rng.random_range(1..=256 / banks);
            BankLayout::new(banks, BankMapping::Div).with_registers_per_bank(rpb)
        };
        let size = rng.random_range(0..=48);
        let ws: RegSet = (0..size).map(|_| rng.random_range(0..layout.capacity()) as u16).collect();
        let mut histogram = vec![0usize; banks];
        for r in 0..256usize {
            if ws.contains(r as u16) {
                let bank = match layout.mapping {
                    BankMapping::Mod => r % banks,
                    BankMapping::Div => r / layout.registers_per_bank,
                };
                histogram[bank] += 1;
            }
        }
        let expected = histogram.iter().max().copied().unwrap_or(0).saturating_sub(1);
        let got = count_bank_conflicts(&ws, &layout);
        ensure(got == expected, || format!("case {case}: {got} != {expected} for {ws:?} under {layout:?}"))?;
    }
    Ok("10000 random working sets match".into())
}

fn knobs() -> TraceKnobs {
    TraceKnobs { min_trip: 32, max_trip: 64, branch_taken_probability: 0.1, load_frequency: 0.05, ..TraceKnobs::default() }
}

fn workload(p: &Program, warps: usize, seed: u64, knobs: &TraceKnobs) -> Result<Workload, String> {
    prepare_workload(p, &ExactRegisterFileConfig::default(), BoundaryMode::RegisterInterval, warps, seed, knobs)
        .map_err(|e| e.to_string())
}

fn random_workloads() -> Result<Vec<Workload>, String> {
    let k = TraceKnobs { min_trip: 2, max_trip: 6, branch_taken_probability: 0.4, load_frequency: 0.1, ..TraceKnobs::default() };
    corpus(6006, 100).iter().enumerate().map(|(i, p)| workload(p, 16, i as u64, &k)).collect()
}

fn hit_guarantee() -> Check {
    let mut workloads: Vec<Workload> =
        TERMINATING.iter().map(|f| workload(&fixture(f), 64, 1, &knobs())).collect::<Result<_, _>>()?;
    workloads.extend(random_workloads()?);
    let mut accesses = 0;
    for (i, w) in workloads.iter().enumerate() {
        for d in [Design::Ltrf, Design::LtrfPlus, Design::LtrfConf] {
            let r = simulate(w.traces_for(d), &ExactRegisterFileConfig::new(d)).map_err(|e| e.to_string())?;
            ensure(r.main_rf_reads == 0, || format!("workload {i} {d}: {} demand reads", r.main_rf_reads))?;
            ensure(r.in_interval_hits == r.in_interval_accesses, || format!("workload {i} {d}: hit rate {:?}", r.in_interval_hit_rate))?;
            accesses += r.in_interval_accesses;
        }
    }
    Ok(format!("{} workloads, {accesses} in-interval accesses, hit rate 1.0, 0 demand reads", workloads.len()))
}

fn latency_tolerance() -> Check {
    let ms = table2_multipliers::<Multiplier>();
    let mut lines = Vec::new();
    let mut wide_gap = false;
    for f in ["register_bound.ptx", "listing1.ptx"] {
        let w = workload(&fixture(f), 64, 1, &knobs())?;
        let mut tol = std::collections::BTreeMap::new();
        for d in Design::ALL {
            let base = ExactRegisterFileConfig::new(d);
            let t = max_tolerable_latency(w.traces_for(d), &base, &ms).map_err(|e| e.to_string())?;
            tol.insert(d, t.multiplier);
        }
        let [bl, rfc, ltrf, conf] = [Design::Baseline, Design::Rfc, Design::Ltrf, Design::LtrfConf].map(|d| tol[&d]);
        ensure(conf >= ltrf && ltrf >= rfc && rfc >= bl, || format!("{f}: ordering broken {tol:?}"))?;
        wide_gap |= ltrf >= 2.0 && bl < 2.0;
        lines.push(format!("{f}: BL {bl} RFC {rfc} LTRF {ltrf} LTRF_PLUS {} LTRF_CONF {conf}", tol[&Design::LtrfPlus]));
    }
    ensure(wide_gap, || format!("no fixture with LTRF >= 2 and BL < 2: {lines:?}"))?;
    Ok(lines.join("; "))
}

fn dominance_and_conservation() -> Check {
    let workloads = random_workloads()?;
    let mut pairs = 0;
    for (i, w) in workloads.iter().enumerate() {
        let base = ExactRegisterFileConfig::default();
        let ltrf = simulate(&w.traces, &base.with_design(Design::Ltrf)).map_err(|e| e.to_string())?;
        let plus = simulate(&w.traces, &base.with_design(Design::LtrfPlus)).map_err(|e| e.to_string())?;
        ensure(plus.swap_traffic() <= ltrf.swap_traffic(), || {
            format!("workload {i}: LTRF+ {} > LTRF {}", plus.swap_traffic(), ltrf.swap_traffic())
        })?;
        pairs += 1;
        for d in Design::ALL {
            let r = simulate(w.traces_for(d), &base.with_design(d)).map_err(|e| e.to_string())?;
            ensure(r.aau_violations == 0 && r.bank_sharing_violations == 0, || {
                format!("workload {i} {d}: {} AAU and {} bank violations", r.aau_violations, r.bank_sharing_violations)
            })?;
        }
    }
    Ok(format!("{pairs} paired runs, LTRF+ traffic <= LTRF, 0 AAU violations"))
}

fn interval_lengths() -> Check {
    let mut traces = 0;
    let mut programs: Vec<Program> = TERMINATING.iter().map(|f| fixture(f)).collect();
    programs.extend(corpus(9009, 100));
    for (i, p) in programs.iter().enumerate() {
        let k = TraceKnobs { min_trip: 2, max_trip: 8, ..TraceKnobs::default() };
        let w = workload(p, 4, i as u64, &k)?;
        let n = w.intervals.config.max_registers;
        for t in &w.traces {
            let dyns = t.dyn_instrs();
            let real = interval_length_stats(&w.intervals, &dyns).map_err(|e| e.to_string())?;
            let opt = optimal_interval_length(&dyns, n);
            ensure(real.avg <= opt.avg, || format!("program {i} warp {}: real {} > opt {}", t.warp, real.avg, opt.avg))?;
            traces += 1;
        }
    }
    let mut lines = Vec::new();
    for f in TERMINATING {
        let p = fixture(f);
        let w = workload(&p, 8, 1, &knobs())?;
        let (strand, _) = intervals_of(&p, &IntervalConfig::new(16).strand());
        for t in &w.traces {
            let dyns = t.dyn_instrs();
            let real = interval_length_stats(&w.intervals, &dyns).map_err(|e| e.to_string())?.avg;
            let short = interval_length_stats(&strand, &dyns).map_err(|e| e.to_string())?.avg;
            ensure(short <= real, || format!("{f} warp {}: strand {short} > interval {real}", t.warp))?;
            if t.warp == 0 {
                lines.push(format!("{f} warp 0: interval {real:.1}, strand {short:.1}"));
            }
        }
    }
    Ok(format!("{traces} traces with real <= opt; {}", lines.join("; ")))
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria = [
        Criterion { name: "walk-through golden", limit: secs(1), run: walkthrough },
        Criterion { name: "nested-loop reduction", limit: secs(1), run: nested_loop },
        Criterion { name: "interval invariants", limit: secs(60), run: interval_invariants },
        Criterion { name: "colouring and renumbering", limit: secs(120), run: coloring_and_renumbering },
        Criterion { name: "conflict-count oracle", limit: secs(5), run: conflict_oracle },
        Criterion { name: "simulator hit guarantee", limit: None, run: hit_guarantee },
        Criterion { name: "latency-tolerance direction", limit: secs(300), run: latency_tolerance },
        Criterion { name: "LTRF+ dominance and AAU conservation", limit: None, run: dominance_and_conservation },
        Criterion { name: "interval-length bound", limit: None, run: interval_lengths },
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let late = c.limit.is_some_and(|l| elapsed > l);
        let limit = c.limit.map_or(String::new(), |l| format!(" / {l:?}"));
        let (verdict, detail) = match (&result, late) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("too slow; {d}")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        failed += (verdict == "FAIL") as usize;
        println!("criterion {} {:<38} {verdict} [{elapsed:.2?}{limit}] {detail}", i + 1, c.name);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
