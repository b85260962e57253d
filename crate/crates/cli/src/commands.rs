use std::fs;
use std::path::{Path, PathBuf};

use ltrf::cfg::{build_cfg, build_live_ranges, check_reducible, compute_liveness, debug_json, LiveRangeMap};
use ltrf::corpus::{generate_corpus, CorpusConfig};
use ltrf::intervals::{
    emit_prefetch_vectors, form_intervals, IntervalCfg, IntervalConfig, PrefetchEncoding,
};
use ltrf::ir::{parse_program, Program};
use ltrf::renumber::{conflict_distribution, renumber_program, ConflictHistogram, IcgMembership, RenumberOutcome};
use ltrf::rfsim::{
    max_tolerable_latency, parse_traces, prepare_workload, simulate as run_simulation, traces_to_text, TraceKnobs,
    WarpTrace,
};
use ltrf::{ExactRegisterFileConfig, Multiplier};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{parse_multiplier, Common, CorpusSpec, InputArgs, RenumberArgs, ReportArgs, SimulateArgs};
use crate::fail::{CmdResult, Failure};

/// Everything needed to reproduce an output; echoed into each artifact.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'static str,
    input: Option<&'a Path>,
    interval_config: IntervalConfig,
    bank_layout: ltrf::renumber::BankLayout,
    register_file_config: &'a ExactRegisterFileConfig,
    seed: u64,
    out: Option<&'a Path>,
}

impl<'a> RunManifest<'a> {
    fn new(command: &'static str, common: &'a Common, input: Option<&'a Path>, cfg: &'a ExactRegisterFileConfig) -> Self {
        RunManifest {
            command,
            input,
            interval_config: interval_config(common, cfg),
            bank_layout: cfg.main_layout(),
            register_file_config: cfg,
            seed: common.seed,
            out: common.out.as_deref(),
        }
    }

    fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("manifest serialises")
    }
}

fn interval_config(common: &Common, cfg: &ExactRegisterFileConfig) -> IntervalConfig {
    IntervalConfig { max_registers: cfg.cache_banks, boundary_mode: common.boundary() }
}

fn read_text(path: &Path) -> CmdResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn read_program(path: &Path) -> CmdResult<Program> {
    let text = read_text(path)?;
    parse_program(&text).map_err(|e| Failure::syntax(path, e))
}

fn out_dir(common: &Common) -> CmdResult<Option<&Path>> {
    match common.out.as_deref() {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
            Ok(Some(dir))
        }
        None => Ok(None),
    }
}

fn write_artifact(common: &Common, name: &str, contents: &str) -> CmdResult {
    if let Some(dir) = out_dir(common)? {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Failure::io(&path, e))?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

/// Pretty JSON to stdout and, with `--out`, to `name`.
fn emit_json(common: &Common, name: &str, value: &Value) -> CmdResult {
    let text = serde_json::to_string_pretty(value).expect("json serialises") + "\n";
    write_artifact(common, name, &text)?;
    print!("{text}");
    Ok(())
}

fn form(common: &Common, cfg: &ExactRegisterFileConfig, program: &Program) -> CmdResult<(IntervalCfg, LiveRangeMap)> {
    let icfg_cfg = interval_config(common, cfg);
    icfg_cfg.validate()?;
    let c = build_cfg(program);
    let l = compute_liveness(&c);
    let icfg = form_intervals(&c, &l, &icfg_cfg)?;
    let map = build_live_ranges(&c, &l);
    Ok((icfg, map))
}

pub fn parse(common: &Common, a: &InputArgs) -> CmdResult {
    let cfg = common.register_file_config()?;
    let program = read_program(&a.input)?;
    let c = build_cfg(&program);
    let l = compute_liveness(&c);
    let value = json!({
        "manifest": RunManifest::new("parse", common, Some(&a.input), &cfg).to_value(),
        "instructions": program.len(),
        "registers": program.general_registers(),
        "reducibility": check_reducible(&c),
        "cfg": debug_json(&c, &l),
    });
    emit_json(common, "parse.json", &value)
}

pub fn intervals(common: &Common, a: &InputArgs) -> CmdResult {
    let cfg = common.register_file_config()?;
    let program = read_program(&a.input)?;
    let (icfg, _) = form(common, &cfg, &program)?;
    let annotated = emit_prefetch_vectors(&icfg, PrefetchEncoding::EmbeddedBit);
    let conflicts = conflict_distribution(&icfg, &cfg.main_layout());
    let text = annotated.to_string();
    let value = json!({
        "manifest": RunManifest::new("intervals", common, Some(&a.input), &cfg).to_value(),
        "partition": icfg.to_json(),
        "conflicts": conflicts.per_interval,
        "code_size": annotated.code_size_delta(),
        "annotated_program": text,
    });
    write_artifact(common, "annotated.ptx", &text)?;
    emit_json(common, "intervals.json", &value)
}

fn histogram_line(label: &str, h: &ConflictHistogram) -> String {
    let b = h.buckets;
    format!("{label}: 0:{} 1:{} 2:{} 3+:{} ({:.1}% conflict-free)", b[0], b[1], b[2], b[3], 100.0 * h.conflict_free_fraction())
}

fn renumber_one(common: &Common, cfg: &ExactRegisterFileConfig, program: &Program) -> CmdResult<RenumberOutcome> {
    let (icfg, map) = form(common, cfg, program)?;
    renumber_program(&icfg, &map, &cfg.main_layout(), IcgMembership::Accessed)
        .map_err(|e| Failure::usage(e.to_string()))
}

pub fn renumber(common: &Common, a: &RenumberArgs) -> CmdResult {
    let cfg = common.register_file_config()?;
    if let Some(spec) = &a.corpus {
        return renumber_corpus(common, &cfg, CorpusSpec::parse(spec, common.seed)?);
    }
    let input = a.input.as_deref().expect("clap requires an input without --corpus");
    let program = read_program(input)?;
    let outcome = renumber_one(common, &cfg, &program)?;
    eprintln!("{}", histogram_line("before", &outcome.before));
    eprintln!("{}", histogram_line("after", &outcome.after));
    let text = outcome.renumbering.program.to_string();
    let value = json!({
        "manifest": RunManifest::new("renumber", common, Some(input), &cfg).to_value(),
        "intervals": outcome.before.per_interval.len(),
        "report": outcome.report(),
        "renumbered_program": text,
    });
    write_artifact(common, "renumbered.ptx", &text)?;
    if a.dot {
        write_artifact(common, "icg.dot", &outcome.to_dot())?;
    }
    emit_json(common, "renumber.json", &value)
}

fn renumber_corpus(common: &Common, cfg: &ExactRegisterFileConfig, spec: CorpusSpec) -> CmdResult {
    let programs = generate_corpus(spec.seed, spec.n, &CorpusConfig::default());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["program".to_string(), "seed".into(), "instructions".into(), "intervals".into()];
    for side in ["before", "after"] {
        header.extend(["0", "1", "2", "3plus"].map(|b| format!("{side}_{b}")));
    }
    header.push("reverted".into());
    w.write_record(&header).map_err(csv_failure)?;
    let mut total = [[0usize; 4]; 2];
    let mut total_intervals = 0;
    let mut total_instructions = 0;
    for (i, program) in programs.iter().enumerate() {
        let o = renumber_one(common, cfg, program)?;
        let mut row = vec![i.to_string(), spec.seed.to_string(), program.len().to_string(), o.before.per_interval.len().to_string()];
        for (side, h) in [&o.before, &o.after].into_iter().enumerate() {
            for (b, &n) in h.buckets.iter().enumerate() {
                total[side][b] += n;
                row.push(n.to_string());
            }
        }
        row.push(o.reverted.to_string());
        total_intervals += o.before.per_interval.len();
        total_instructions += program.len();
        w.write_record(&row).map_err(csv_failure)?;
    }
    let mut row = vec!["all".to_string(), spec.seed.to_string(), total_instructions.to_string(), total_intervals.to_string()];
    row.extend(total.iter().flatten().map(usize::to_string));
    row.push(String::new());
    w.write_record(&row).map_err(csv_failure)?;
    let text = String::from_utf8(w.into_inner().map_err(|e| Failure::usage(e.to_string()))?).expect("csv is utf-8");
    let b = |side: usize| ConflictHistogram { per_interval: vec![0; total_intervals], buckets: total[side] };
    eprintln!("{}", histogram_line("before", &b(0)));
    eprintln!("{}", histogram_line("after", &b(1)));
    let manifest = json!({ "manifest": RunManifest::new("renumber", common, None, cfg).to_value(), "corpus": spec });
    write_artifact(common, "manifest.json", &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"))?;
    write_artifact(common, "renumber_corpus.csv", &text)?;
    print!("{text}");
    Ok(())
}

fn csv_failure(e: csv::Error) -> Failure {
    Failure::usage(e.to_string())
}

#[derive(Debug, Serialize)]
struct SimulationSetup<'a> {
    designs: &'a [ltrf::rfsim::Design],
    latency_multiplier: f64,
    sweep: Option<Vec<f64>>,
    traced_warps: usize,
    knobs: TraceKnobs,
    traces: Option<&'a Path>,
}

pub fn simulate(common: &Common, a: &SimulateArgs) -> CmdResult {
    let base = common.register_file_config()?;
    let designs = a.designs(base.design)?;
    let sweep = a.multipliers()?;
    let multiplier = match &a.latency_multiplier {
        Some(t) => parse_multiplier(t)?,
        None => base.bank_latency_multiplier,
    };
    let knobs = a.knobs()?;
    let warps = a.warps.unwrap_or(base.total_warps);
    let program = read_program(&a.input)?;

    let replay: Option<Vec<WarpTrace>> = match &a.traces {
        Some(path) => Some(parse_traces(&read_text(path)?).map_err(|e| Failure::trace_file(path, e))?),
        None => None,
    };
    let workload = match replay {
        Some(_) => None,
        None => Some(prepare_workload(&program, &base, common.boundary(), warps, common.seed, &knobs)?),
    };
    let traces_for = |d| match (&replay, &workload) {
        (Some(t), _) => t.as_slice(),
        (None, Some(w)) => w.traces_for(d),
        (None, None) => unreachable!("either replayed or generated"),
    };
    if let Some(w) = &workload {
        write_artifact(common, "traces.txt", &traces_to_text(&w.traces))?;
    }

    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &d in &designs {
        let cfg = base.with_design(d).with_multiplier(multiplier);
        match &sweep {
            Some(points) => {
                let tol = max_tolerable_latency(traces_for(d), &cfg, points)?;
                eprintln!("{d}: max tolerable latency {}x", tol.multiplier);
                for p in &tol.points {
                    rows.push((d, p.clone()));
                }
                runs.push(json!({ "design": d, "tolerable": tol }));
            }
            None => {
                let report = run_simulation(traces_for(d), &cfg)?;
                eprintln!("{d}: {} cycles, IPC {:.4}", report.cycles, report.ipc);
                runs.push(json!({ "design": d, "report": report }));
            }
        }
    }

    let setup = SimulationSetup {
        designs: &designs,
        latency_multiplier: multiplier_f64(multiplier),
        sweep: sweep.as_ref().map(|s| s.iter().copied().map(multiplier_f64).collect()),
        traced_warps: warps,
        knobs,
        traces: a.traces.as_deref(),
    };
    let value = json!({
        "manifest": RunManifest::new("simulate", common, Some(&a.input), &base).to_value(),
        "setup": setup,
        "runs": runs,
    });
    if sweep.is_none() {
        return emit_json(common, "simulate.json", &value);
    }
    write_artifact(common, "simulate.json", &(serde_json::to_string_pretty(&value).expect("json") + "\n"))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["design", "multiplier", "cycles", "instructions", "ipc", "relative_ipc", "tolerated", "seed"])
        .map_err(csv_failure)?;
    for (d, p) in rows {
        w.write_record([
            d.to_string(),
            p.multiplier.to_string(),
            p.cycles.to_string(),
            p.instructions.to_string(),
            format!("{:.6}", p.ipc),
            format!("{:.6}", p.relative_ipc),
            p.tolerated.to_string(),
            common.seed.to_string(),
        ])
        .map_err(csv_failure)?;
    }
    let text = String::from_utf8(w.into_inner().map_err(|e| Failure::usage(e.to_string()))?).expect("csv is utf-8");
    write_artifact(common, "sweep.csv", &text)?;
    print!("{text}");
    Ok(())
}

fn multiplier_f64(m: Multiplier) -> f64 {
    *m.numer() as f64 / *m.denom() as f64
}

fn collect_inputs(inputs: &[PathBuf]) -> CmdResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let found: Vec<PathBuf> =
                ["renumber.json", "simulate.json"].iter().map(|n| p.join(n)).filter(|f| f.is_file()).collect();
            if found.is_empty() {
                return Err(Failure::usage(format!("{}: no renumber.json or simulate.json", p.display())));
            }
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(Failure::usage(format!("{}: no such file or directory", p.display())));
        }
    }
    Ok(files)
}

fn field<'v>(v: &'v Value, path: &[&str]) -> &'v Value {
    path.iter().fold(v, |v, k| &v[*k])
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn report(common: &Common, a: &ReportArgs) -> CmdResult {
    let files = collect_inputs(&a.inputs)?;
    let mut conflicts = csv::Writer::from_writer(Vec::new());
    conflicts
        .write_record([
            "source", "input", "seed", "max_regs", "intervals", "before_0", "before_1", "before_2", "before_3plus",
            "after_0", "after_1", "after_2", "after_3plus", "conflict_free_before", "conflict_free_after",
        ])
        .map_err(csv_failure)?;
    let mut latency = csv::Writer::from_writer(Vec::new());
    latency
        .write_record(["source", "input", "seed", "design", "multiplier", "cycles", "ipc", "tolerable_multiplier"])
        .map_err(csv_failure)?;
    let (mut n_conf, mut n_lat) = (0, 0);
    for f in &files {
        let v: Value = serde_json::from_str(&read_text(f)?).map_err(|e| Failure::usage(format!("{}: {e}", f.display())))?;
        let source = f.display().to_string();
        let m = &v["manifest"];
        let (input, seed) = (cell(&m["input"]), cell(&m["seed"]));
        if let Some(r) = v.get("report").filter(|r| r.get("histogram_before").is_some()) {
            let mut row = vec![source, input, seed, cell(field(m, &["interval_config", "max_registers"])), cell(&v["intervals"])];
            let hist = |k: &str| -> Vec<u64> { r[k].as_array().into_iter().flatten().filter_map(Value::as_u64).collect() };
            let (before, after) = (hist("histogram_before"), hist("histogram_after"));
            row.extend(before.iter().chain(&after).map(u64::to_string));
            let free = |h: &[u64]| {
                let total: u64 = h.iter().sum();
                if total == 0 { 1.0 } else { h[0] as f64 / total as f64 }
            };
            row.push(format!("{:.4}", free(&before)));
            row.push(format!("{:.4}", free(&after)));
            conflicts.write_record(&row).map_err(csv_failure)?;
            n_conf += 1;
        } else if let Some(runs) = v.get("runs").and_then(Value::as_array) {
            for run in runs {
                let design = cell(&run["design"]);
                if let Some(tol) = run.get("tolerable") {
                    for p in tol["points"].as_array().into_iter().flatten() {
                        latency
                            .write_record([
                                &source, &input, &seed, &design, &cell(&p["multiplier"]), &cell(&p["cycles"]),
                                &cell(&p["ipc"]), &cell(&tol["multiplier"]),
                            ])
                            .map_err(csv_failure)?;
                    }
                } else {
                    let r = &run["report"];
                    latency
                        .write_record([
                            &source, &input, &seed, &design, &cell(&r["bank_latency_multiplier"]), &cell(&r["cycles"]),
                            &cell(&r["ipc"]), "",
                        ])
                        .map_err(csv_failure)?;
                }
                n_lat += 1;
            }
        } else {
            return Err(Failure::usage(format!("{}: not a renumber or simulate output", f.display())));
        }
    }
    let finish = |w: csv::Writer<Vec<u8>>| -> CmdResult<String> {
        Ok(String::from_utf8(w.into_inner().map_err(|e| Failure::usage(e.to_string()))?).expect("csv is utf-8"))
    };
    let (conflicts, latency) = (finish(conflicts)?, finish(latency)?);
    let mut sections = Vec::new();
    if n_conf > 0 {
        write_artifact(common, "conflicts.csv", &conflicts)?;
        sections.push(conflicts);
    }
    if n_lat > 0 {
        write_artifact(common, "latency.csv", &latency)?;
        sections.push(latency);
    }
    print!("{}", sections.join("\n"));
    Ok(())
}
