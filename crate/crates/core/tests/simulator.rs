mod common;

use common::{fixture, TERMINATING};
use ltrf::corpus::{generate_corpus, CorpusConfig};
use ltrf::intervals::{emit_prefetch_vectors, BoundaryMode, IntervalConfig, PrefetchEncoding};
use ltrf::ir::Program;
use ltrf::rfsim::{
    generate_traces, max_tolerable_latency, prepare_workload, simulate, sweep, table2_multipliers, Design,
    RegisterFileConfig, TraceEvent, TraceKnobs, WarpTrace, Workload,
};
use ltrf::{ExactRegisterFileConfig, Multiplier, RegSet};

fn knobs() -> TraceKnobs {
    TraceKnobs { min_trip: 4, max_trip: 12, branch_taken_probability: 0.3, load_frequency: 0.1, ..TraceKnobs::default() }
}

fn workload(p: &Program, warps: usize, seed: u64) -> Workload {
    prepare_workload(p, &ExactRegisterFileConfig::default(), BoundaryMode::RegisterInterval, warps, seed, &knobs()).unwrap()
}

fn programs() -> Vec<Program> {
    let mut v: Vec<Program> = TERMINATING.iter().map(|f| fixture(f)).collect();
    v.extend(generate_corpus(21, 30, &CorpusConfig::default()));
    v
}

#[test]
fn listing1_loop_intervals_enter_once_per_iteration() {
    let p = fixture("listing1.ptx");
    let (icfg, _) = common::intervals_of(&p, &IntervalConfig::new(4));
    let annotated = emit_prefetch_vectors(&icfg, PrefetchEncoding::EmbeddedBit);
    let k = TraceKnobs { min_trip: 100, max_trip: 100, branch_taken_probability: 0.0, load_frequency: 0.0, ..TraceKnobs::default() };
    let t = generate_traces(&annotated, 1, 5, &k).unwrap();
    let mut per_interval = vec![0; icfg.len()];
    for e in &t[0].events {
        if let TraceEvent::IntervalEnter { interval, .. } = e {
            per_interval[*interval] += 1;
        }
    }
    let header = |pc: usize| icfg.interval_of_pc(pc).unwrap();
    assert_eq!(per_interval[header(4)], 100, "{per_interval:?}");
    assert_eq!(per_interval[header(8)], 100);
    assert_eq!(per_interval[header(0)], 1);
    assert_eq!(per_interval[header(13)], 1);
    assert_eq!(per_interval[header(15)], 0);
    assert_eq!(per_interval[header(16)], 1);
    assert_eq!(t[0].interval_enters(), 203);
    assert_eq!(t[0].instructions(), 4 + 100 * 9 + 2 + 1);
    let other = generate_traces(&annotated, 1, 6, &k).unwrap();
    assert_eq!(t, other, "no random choices remain");
}

#[test]
fn prefetching_designs_never_miss_inside_an_interval() {
    for p in programs() {
        let w = workload(&p, 16, 3);
        for d in [Design::Ltrf, Design::LtrfPlus, Design::LtrfConf] {
            let r = simulate(w.traces_for(d), &ExactRegisterFileConfig::new(d)).unwrap();
            assert_eq!(r.main_rf_reads, 0, "{d}");
            assert_eq!(r.in_interval_hits, r.in_interval_accesses, "{d}");
            assert!(r.in_interval_hit_rate.is_none_or(|h| h == 1.0));
        }
    }
}

#[test]
fn liveness_awareness_never_adds_traffic() {
    for (i, p) in programs().iter().enumerate() {
        let w = workload(p, 32, i as u64);
        let base = ExactRegisterFileConfig::default();
        let ltrf = simulate(&w.traces, &base.with_design(Design::Ltrf)).unwrap();
        let plus = simulate(&w.traces, &base.with_design(Design::LtrfPlus)).unwrap();
        assert!(plus.prefetched_registers <= ltrf.prefetched_registers, "program {i}");
        assert!(plus.written_back_registers <= ltrf.written_back_registers, "program {i}");
    }
}

#[test]
fn counters_are_consistent_and_hardware_invariants_hold() {
    for (i, p) in programs().iter().enumerate() {
        let w = workload(p, 24, 40 + i as u64);
        for d in Design::ALL {
            let r = simulate(w.traces_for(d), &ExactRegisterFileConfig::new(d)).unwrap();
            assert_eq!(r.aau_violations, 0);
            assert_eq!(r.bank_sharing_violations, 0);
            assert_eq!(r.cache_accesses, r.cache_hits + r.cache_misses);
            assert_eq!(r.prefetches, r.interval_enters + r.reactivation_fetches);
            assert_eq!(r.instructions, w.traces_for(d).iter().map(|t| t.instructions() as u64).sum::<u64>());
            assert_eq!(r.prefetch_latency_histogram.values().sum::<u64>(), r.prefetches);
            if !d.prefetches() {
                assert_eq!(r.prefetches, 0);
            }
        }
    }
}

#[test]
fn reports_are_deterministic() {
    let p = fixture("register_bound.ptx");
    let a = workload(&p, 32, 9);
    let b = workload(&p, 32, 9);
    assert_eq!(a.traces, b.traces);
    for d in Design::ALL {
        let cfg = RegisterFileConfig::<Multiplier>::new(d);
        let x = serde_json::to_string(&simulate(a.traces_for(d), &cfg).unwrap()).unwrap();
        let y = serde_json::to_string(&simulate(b.traces_for(d), &cfg).unwrap()).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn renumbered_traces_follow_the_same_path() {
    let w = workload(&fixture("register_bound.ptx"), 8, 2);
    for (a, b) in w.traces.iter().zip(&w.renumbered_traces) {
        let pcs = |t: &WarpTrace| t.dyn_instrs().into_iter().map(|d| d.pc).collect::<Vec<_>>();
        assert_eq!(pcs(a), pcs(b));
    }
}

#[test]
fn one_bank_prefetch_takes_one_round_per_register() {
    let cfg = ExactRegisterFileConfig { main_banks: 16, crossbar_regs_per_cycle: 256, ltrf_crossbar_narrowing: 1, ..Default::default() };
    for k in 1..=8u16 {
        let regs: RegSet = (0..k).map(|i| i * 16).collect();
        assert_eq!(cfg.prefetch_latency(&regs), k as u64 + 1 + 1);
        let slow = cfg.with_multiplier(Multiplier::new(5, 2));
        assert_eq!(slow.main_access_latency(&regs), (Multiplier::new(5, 2) * k as i64).ceil().to_integer() as u64 + 1);
    }
}

#[test]
fn ltrf_absorbs_latency_better_than_baseline() {
    let w = workload(&fixture("register_bound.ptx"), 64, 1);
    let slow = Multiplier::new(63, 10);
    let growth = |d: Design| {
        let cfg = RegisterFileConfig::<Multiplier>::new(d);
        let fast = simulate(w.traces_for(d), &cfg).unwrap().cycles;
        simulate(w.traces_for(d), &cfg.with_multiplier(slow)).unwrap().cycles - fast
    };
    assert!(growth(Design::Ltrf) < growth(Design::Baseline));
}

#[test]
fn latency_free_trace_tolerates_every_point() {
    let t = vec![WarpTrace { warp: 0, events: (0..50).map(|pc| TraceEvent::Exec { pc, reads: vec![], writes: vec![], dead: 0 }).collect() }];
    let ms = table2_multipliers::<Multiplier>();
    let tol = max_tolerable_latency(&t, &RegisterFileConfig::new(Design::Baseline), &ms).unwrap();
    assert_eq!(tol.multiplier, 6.3);
    assert_eq!(tol.index, Some(6));
}

#[test]
fn baseline_tolerates_less_than_ltrf_on_register_bound_code() {
    let w = workload(&fixture("register_bound.ptx"), 64, 1);
    let ms = table2_multipliers::<Multiplier>();
    let tol = |d| max_tolerable_latency(w.traces_for(d), &RegisterFileConfig::new(d), &ms).unwrap().multiplier;
    assert!(tol(Design::Baseline) < tol(Design::Ltrf));
}

#[test]
fn single_warp_cycles_grow_with_latency() {
    let ms = table2_multipliers::<Multiplier>();
    for (i, p) in programs().iter().enumerate() {
        let w = workload(p, 1, i as u64);
        for d in Design::ALL {
            let cfg = RegisterFileConfig::<Multiplier> { active_warps: 1, ..RegisterFileConfig::new(d) };
            let rs = sweep(w.traces_for(d), &cfg, &ms).unwrap();
            let cycles: Vec<u64> = rs.iter().map(|r| r.cycles).collect();
            assert!(cycles.windows(2).all(|x| x[0] <= x[1]), "program {i} {d}: {cycles:?}");
        }
    }
}

#[test]
fn cycles_grow_with_latency() {
    let ms = table2_multipliers::<Multiplier>();
    let mut decreases = Vec::new();
    for (i, p) in programs().iter().enumerate() {
        let w = workload(p, 64, i as u64);
        for d in Design::ALL {
            let rs = sweep(w.traces_for(d), &RegisterFileConfig::new(d), &ms).unwrap();
            for k in 1..rs.len() {
                if rs[k].cycles < rs[k - 1].cycles {
                    decreases.push(format!("program {i} {d} x{}: {} -> {}", rs[k].bank_latency_multiplier, rs[k - 1].cycles, rs[k].cycles));
                }
            }
        }
    }
    assert!(decreases.is_empty(), "{decreases:#?}");
}
