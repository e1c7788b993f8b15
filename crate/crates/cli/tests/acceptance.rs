//! End-to-end acceptance checks. Runs as a plain binary (no libtest harness)
//! and prints one PASS/FAIL line per criterion; exits non-zero on any FAIL.

use cameo_cli::run_cli;
use cameo_core::data::{demo_sites, generate_synthetic_history, load_battery_catalog, load_sites, PowerCurve, SiteHistory};
use cameo_core::demo::{write_demo_inputs, PIPELINE_A, PIPELINE_B};
use cameo_core::executor::{peak_concurrency, CacheEntry, TrackingAlloc};
use cameo_core::optimizer::audit::audit_model_a;
use cameo_core::optimizer::fixtures::{collapse_pair, hand_case, random_tiny_case};
use cameo_core::optimizer::oracle::brute_force_design;
use cameo_core::optimizer::{build_model_a, solve_design, solve_lp, DesignResult, StochasticInput, DEFAULT_TOL};
use cameo_core::reporting::{read_plot_data, PlotData};
use cameo_core::scenario::{build_scenario_tree, KMeansConfig};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

#[global_allocator]
static ALLOC: TrackingAlloc = TrackingAlloc;

const TOTAL_A: usize = 800 + 5 + 5 + 1;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
    elapsed: Duration,
}

fn cameo(args: &[&str]) -> Out {
    let mut argv = vec!["cameo".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let t0 = Instant::now();
    let code = run_cli(&argv, &mut o, &mut e, None);
    Out { code, stdout: String::from_utf8_lossy(&o).into(), stderr: String::from_utf8_lossy(&e).into(), elapsed: t0.elapsed() }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read(p: &Path) -> Result<String, String> {
    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

// --- 1 --------------------------------------------------------------------------

fn sweep_cardinality(tmp: &Path) -> Check {
    let dir = tmp.join("plan");
    write_demo_inputs(&dir, 42).map_err(|e| e.to_string())?;
    let sites = load_sites(&dir.join("sites.csv")).map_err(|e| e.to_string())?;
    let catalog = load_battery_catalog(&dir.join("batteries.json")).map_err(|e| e.to_string())?;
    ensure(sites.len() == 5 && catalog.len() == 16, || format!("{} sites, {} configs", sites.len(), catalog.len()))?;
    let mut slowest = Duration::ZERO;
    for (name, doc, expect) in [
        ("a", PIPELINE_A, "wind: 5\nscen_set: 5\ndesign_ss: 800\nsummarize: 1\n"),
        ("b", PIPELINE_B, "wind: 5\nscen_tree: 5\ndesign_st: 80\nsummarize: 1\n"),
    ] {
        let wf = dir.join(format!("{name}.workflow.json"));
        std::fs::write(&wf, doc).map_err(|e| e.to_string())?;
        let out = cameo(&["plan", s(&wf)]);
        ensure(out.code == 0, || format!("plan {name} exit {}: {}", out.code, out.stderr))?;
        ensure(out.stdout == expect, || format!("plan {name} printed {:?}", out.stdout))?;
        ensure(out.elapsed < Duration::from_secs(1), || format!("plan {name} took {:?}", out.elapsed))?;
        slowest = slowest.max(out.elapsed);
    }
    Ok(format!("A 5/5/800/1, B 5/5/80/1, slowest plan {} ms", slowest.as_millis()))
}

// --- 2 --------------------------------------------------------------------------

fn hand_threshold() -> Check {
    let free = solve_design(&hand_case(0.0)).map_err(|e| e.to_string())?;
    let rel = (free.net_usd - 547_500.0).abs() / 547_500.0;
    ensure(rel <= 1e-6, || format!("net {} at cost 0", free.net_usd))?;
    ensure((free.p_star_mw - 1.0).abs() <= 1e-6, || format!("P* {} at cost 0", free.p_star_mw))?;
    let costly = solve_design(&hand_case(600.0)).map_err(|e| e.to_string())?;
    ensure(costly.p_star_mw.abs() <= 1e-9, || format!("P* {} at cost 600", costly.p_star_mw))?;
    Ok(format!("net {} (rel err {rel:.1e}), P* {} at cost 0; P* {} at 600 $/kW", free.net_usd, free.p_star_mw, costly.p_star_mw))
}

// --- 3 --------------------------------------------------------------------------

fn oracle_equivalence() -> Check {
    let n = 24;
    let mut worst_gap = f64::INFINITY;
    for seed in 0..n {
        let case = random_tiny_case(seed);
        let StochasticInput::Set(set) = &case.input else { unreachable!() };
        ensure(set.days.len() == 1 && set.days[0].wind.len() <= 3, || format!("seed {seed}: instance too large"))?;
        let lp = solve_design(&case).map_err(|e| format!("seed {seed}: {e}"))?;
        let grid = brute_force_design(&case, 6).map_err(|e| format!("seed {seed}: {e}"))?;
        let gap = lp.net_usd - grid.net_usd;
        ensure(gap >= -1e-9, || format!("seed {seed}: lp {} < grid {}", lp.net_usd, grid.net_usd))?;
        worst_gap = worst_gap.min(gap);
        let model = build_model_a(set, &case.battery, &case.economics);
        let sol = solve_lp(&model.lp, DEFAULT_TOL).map_err(|e| format!("seed {seed}: {e}"))?;
        let v = audit_model_a(&model, &sol.x, &case.battery, &case.site, 1e-6);
        ensure(v.is_empty(), || format!("seed {seed}: auditor found {v:?}"))?;
    }
    Ok(format!("{n} instances, min(lp - grid) = {worst_gap:.3e}, auditor clean"))
}

// --- 4 --------------------------------------------------------------------------

fn model_b_collapse() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let (a, b) = collapse_pair(seed);
        let ra = solve_design(&a).map_err(|e| format!("seed {seed}: {e}"))?;
        let rb = solve_design(&b).map_err(|e| format!("seed {seed}: {e}"))?;
        let bound = 1e-6 * (1.0 + ra.net_usd.abs());
        let diff = (rb.net_usd - ra.net_usd).abs();
        ensure(diff <= bound, || format!("seed {seed}: A {} B {}", ra.net_usd, rb.net_usd))?;
        worst = worst.max(diff / bound);
    }
    Ok(format!("10 cases, worst |B-A| at {:.2e} of tolerance", worst))
}

// --- 5 --------------------------------------------------------------------------

fn probability_conservation() -> Check {
    let sites = demo_sites();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let site = sites[seed as usize % sites.len()].clone();
        let record = generate_synthetic_history(&site, seed, 30 + (seed as usize % 40));
        let history = SiteHistory { site, record };
        let tree = build_scenario_tree(&history, &PowerCurve::default(), (4, 3), seed, &KMeansConfig::default())
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let mut children: BTreeMap<usize, f64> = BTreeMap::new();
        for n in &tree.nodes {
            if let Some(p) = n.parent {
                *children.entry(p).or_default() += n.probability;
            }
        }
        ensure(children.len() == 5, || format!("seed {seed}: {} internal nodes", children.len()))?;
        for (node, sum) in &children {
            worst = worst.max((sum - 1.0).abs());
            ensure((sum - 1.0).abs() <= 1e-9, || format!("seed {seed}: children of {node} sum to {sum}"))?;
        }
        let leaves: Vec<usize> = tree.leaves().map(|l| l.node_id).collect();
        ensure(leaves.len() == 12, || format!("seed {seed}: {} leaves", leaves.len()))?;
        let total: f64 = leaves.iter().map(|&l| tree.absolute_probability(l)).sum();
        worst = worst.max((total - 1.0).abs());
        ensure((total - 1.0).abs() <= 1e-9, || format!("seed {seed}: leaf probabilities sum to {total}"))?;
    }
    Ok(format!("100 trees, worst deviation {worst:.1e}"))
}

// --- 6 --------------------------------------------------------------------------

fn trace_lines(path: &Path) -> Result<Vec<Vec<String>>, String> {
    Ok(read(path)?.lines().skip(1).map(|l| l.split('\t').map(String::from).collect()).collect())
}

fn count_status(rows: &[Vec<String>], status: &str) -> usize {
    rows.iter().filter(|r| r.get(3).map(String::as_str) == Some(status)).count()
}

fn resume_semantics(tmp: &Path, reference: &Path) -> Check {
    let dir = tmp.join("resume");
    let first = cameo(&["demo", "a", "--seed", "42", "--out", s(&dir), "--abort-after", "100"]);
    ensure(first.code == 1, || format!("interrupted run exited {}: {}", first.code, first.stderr))?;
    let t1 = trace_lines(&dir.join("runs/run-0001/trace.tsv"))?;
    let done = count_status(&t1, "Succeeded");
    ensure(done >= 100, || format!("only {done} successes before interrupt"))?;
    ensure(done < TOTAL_A, || "interrupt came after the whole sweep".into())?;

    let second = cameo(&["demo", "a", "--seed", "42", "--out", s(&dir), "--resume"]);
    ensure(second.code == 0, || format!("resumed run exited {}: {}", second.code, second.stderr))?;
    let t2 = trace_lines(&dir.join("runs/run-0002/trace.tsv"))?;
    let executed = count_status(&t2, "Succeeded");
    let cached = count_status(&t2, "Cached");
    ensure(executed == TOTAL_A - done, || format!("resume executed {executed}, expected {}", TOTAL_A - done))?;
    ensure(cached == done, || format!("resume served {cached} from cache, expected {done}"))?;

    let got = std::fs::read(dir.join("results/summary.csv")).map_err(|e| e.to_string())?;
    let want = std::fs::read(reference.join("results/summary.csv")).map_err(|e| e.to_string())?;
    ensure(got == want, || "consolidated CSV differs from the uninterrupted run".into())?;
    Ok(format!("{done} done before interrupt, resume executed {executed} and reused {cached}; CSV byte-identical ({} bytes)", got.len()))
}

// --- 7 --------------------------------------------------------------------------

fn bounded_parallelism(tmp: &Path) -> Check {
    let dir = tmp.join("sweep");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let values: Vec<String> = (0..200).map(|i| (40 + i).to_string()).collect();
    let doc = format!(
        r#"{{"schema_version": 1, "name": "sweep",
            "channels": [{{"name": "ms", "source": {{"type": "literal", "values": [{}]}}}}],
            "processes": [{{"name": "nap", "kind": {{"builtin": "sleep@1"}}, "inputs": {{"ms": "ms"}}, "outputs": {{"done": "Scalar"}}}}]}}"#,
        values.join(",")
    );
    let wf = dir.join("sweep.workflow.json");
    std::fs::write(&wf, doc).map_err(|e| e.to_string())?;
    let out = cameo(&["run", s(&wf), "--max-parallel", "8", "--workdir", s(&dir.join("root"))]);
    ensure(out.code == 0, || format!("exit {}: {}", out.code, out.stderr))?;
    let log = read(&dir.join("root/runs/run-0001/scheduler.log"))?;
    // recount from the start/end events as well as the logged column
    let (mut running, mut peak, mut starts) = (0i64, 0i64, 0);
    for line in log.lines() {
        match line.split('\t').nth(1) {
            Some("start") => {
                running += 1;
                starts += 1;
            }
            Some("end") => running -= 1,
            _ => return Err(format!("bad log line {line:?}")),
        }
        peak = peak.max(running);
    }
    let logged = peak_concurrency(&log);
    ensure(starts == 200, || format!("{starts} starts"))?;
    ensure(logged == 8 && peak == 8, || format!("peak concurrency {logged} (recounted {peak})"))?;
    Ok(format!("200 tasks, peak concurrency 8 ({} ms)", out.elapsed.as_millis()))
}

// --- 8 --------------------------------------------------------------------------

fn parse_num(s: &str) -> Option<f64> {
    if s == "-" {
        None
    } else {
        s.parse().ok()
    }
}

fn provenance_consistency(run: &Path, report: &Path) -> Check {
    let rows = trace_lines(&run.join("trace.tsv"))?;
    // process -> metric -> values, executed tasks only, in trace order
    let mut samples: BTreeMap<String, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in &rows {
        if r[3] == "Cached" {
            continue;
        }
        let m = samples.entry(r[1].clone()).or_default();
        for (col, name) in [(8, "duration_ms"), (9, "cpu_fraction"), (10, "peak_rss_bytes")] {
            if let Some(v) = parse_num(&r[col]) {
                m.entry(name).or_default().push(v);
            }
        }
    }
    let csv = read(&report.join("stats.csv"))?;
    let html = read(&report.join("report.html"))?;
    let mut checked = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        ensure(f.len() == 10, || format!("bad stats row {line:?}"))?;
        let (process, metric) = (f[0], f[2]);
        let xs = samples.get(process).and_then(|m| m.get(metric)).ok_or_else(|| format!("{process}/{metric} not in trace"))?;
        let count: usize = f[1].parse().map_err(|_| format!("count {:?}", f[1]))?;
        ensure(count == xs.len(), || format!("{process}/{metric}: count {count}, trace has {}", xs.len()))?;
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (name, got, want) in [("mean", f[8], mean), ("min", f[3], min), ("max", f[7], max)] {
            let got: f64 = got.parse().map_err(|_| format!("{process}/{metric} {name} {got:?}"))?;
            ensure((got - want).abs() <= 1e-9, || format!("{process}/{metric} {name}: csv {got}, trace {want}"))?;
        }
        // the report row for the same process and metric shows the same text
        let section = html
            .split("<section class=\"process\" data-process=\"")
            .find(|sec| sec.starts_with(&format!("{process}\"")))
            .ok_or_else(|| format!("no report section for {process}"))?;
        let row = section
            .split(&format!("<tr data-metric=\"{metric}\">"))
            .nth(1)
            .and_then(|r| r.split("</tr>").next())
            .ok_or_else(|| format!("no report row for {process}/{metric}"))?;
        let cols = [("count", 1), ("min", 3), ("q1", 4), ("median", 5), ("q3", 6), ("max", 7), ("mean", 8), ("std", 9)];
        for (col, i) in cols {
            let cell = row
                .split(&format!("<td data-col=\"{col}\">"))
                .nth(1)
                .and_then(|c| c.split("</td>").next())
                .ok_or_else(|| format!("{process}/{metric}: no {col} cell"))?;
            ensure(cell == f[i], || format!("{process}/{metric} {col}: html {cell:?}, csv {:?}", f[i]))?;
        }
        checked += 1;
    }
    ensure(checked >= 4, || format!("only {checked} stats rows"))?;
    Ok(format!("{checked} stats rows match trace.tsv and report.html"))
}

// --- 9 --------------------------------------------------------------------------

fn cache_entries(root: &Path, process: &str) -> Result<BTreeMap<String, CacheEntry>, String> {
    let mut out = BTreeMap::new();
    for shard in std::fs::read_dir(root.join("cache")).map_err(|e| e.to_string())? {
        let shard = shard.map_err(|e| e.to_string())?.path();
        for f in std::fs::read_dir(&shard).map_err(|e| e.to_string())? {
            let f = f.map_err(|e| e.to_string())?.path();
            let entry: CacheEntry = serde_json::from_str(&read(&f)?).map_err(|e| format!("{}: {e}", f.display()))?;
            if entry.process == process {
                out.insert(entry.key.clone(), entry);
            }
        }
    }
    Ok(out)
}

fn design_rows(root: &Path) -> Result<Vec<String>, String> {
    let mut rows = Vec::new();
    for e in cache_entries(root, "design_ss")?.values() {
        let r: DesignResult = serde_json::from_value(e.outputs["result"].clone()).map_err(|e| e.to_string())?;
        rows.push(r.csv_row(false));
    }
    rows.sort();
    Ok(rows)
}

fn plot_data(root: &Path) -> Result<Vec<(PathBuf, PlotData)>, String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(root.join("results"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "svg"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let d = read_plot_data(&read(&p)?).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok((PathBuf::from(p.file_name().unwrap_or_default()), d))
        })
        .collect()
}

fn determinism(a: &Path, b: &Path) -> Check {
    let sets_a: Vec<_> = cache_entries(a, "scen_set")?.into_iter().map(|(k, e)| (k, e.outputs)).collect();
    let sets_b: Vec<_> = cache_entries(b, "scen_set")?.into_iter().map(|(k, e)| (k, e.outputs)).collect();
    ensure(sets_a.len() == 5, || format!("{} scen_set entries", sets_a.len()))?;
    ensure(sets_a == sets_b, || "scenario sets differ".into())?;
    let (ra, rb) = (design_rows(a)?, design_rows(b)?);
    ensure(ra.len() == 800, || format!("{} design results", ra.len()))?;
    ensure(ra == rb, || "design results differ".into())?;
    let (pa, pb) = (plot_data(a)?, plot_data(b)?);
    ensure(pa.len() == 5, || format!("{} plots", pa.len()))?;
    ensure(pa == pb, || "plot data blocks differ".into())?;
    Ok("5 scenario-set outputs, 800 design rows, 5 plot data blocks identical".into())
}

// --- 10 -------------------------------------------------------------------------

fn budget(demo_a: Duration, tmp: &Path) -> Check {
    let dir = tmp.join("demo-b");
    let out = cameo(&["demo", "b", "--seed", "42", "--out", s(&dir)]);
    ensure(out.code == 0, || format!("demo b exit {}: {}", out.code, out.stderr))?;
    ensure(out.stdout.contains("91 succeeded, 0 cached"), || out.stdout.clone())?;
    ensure(demo_a <= Duration::from_secs(30 * 60), || format!("demo a took {:?}", demo_a))?;
    ensure(out.elapsed <= Duration::from_secs(15 * 60), || format!("demo b took {:?}", out.elapsed))?;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    Ok(format!("demo a {:.1} s, demo b {:.1} s on {cores} core(s)", demo_a.as_secs_f64(), out.elapsed.as_secs_f64()))
}

fn full_demo(dir: &Path) -> Result<Duration, String> {
    let out = cameo(&["demo", "a", "--seed", "42", "--out", s(dir)]);
    if out.code != 0 {
        return Err(format!("demo a exit {}: {}", out.code, out.stderr));
    }
    if !out.stdout.contains(&format!("{TOTAL_A} succeeded, 0 cached")) {
        return Err(format!("unexpected summary: {}", out.stdout));
    }
    Ok(out.elapsed)
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let t = tmp.path();
    let mut results: Vec<(&str, Check)> = Vec::new();
    let step = |name: &str| eprintln!("acceptance: {name}...");

    step("sweep cardinality");
    results.push(("sweep cardinality", sweep_cardinality(t)));
    step("hand-solved threshold");
    results.push(("hand-solved threshold", hand_threshold()));
    step("oracle equivalence");
    results.push(("oracle equivalence", oracle_equivalence()));
    step("formulation B collapse");
    results.push(("formulation B collapse", model_b_collapse()));
    step("probability conservation");
    results.push(("probability conservation", probability_conservation()));

    step("full demo a (1 of 2)");
    let (d1, d2) = (t.join("demo-a-1"), t.join("demo-a-2"));
    let run1 = full_demo(&d1);
    step("resume semantics");
    results.push((
        "resume semantics",
        match &run1 {
            Ok(_) => resume_semantics(t, &d1),
            Err(e) => Err(format!("reference run failed: {e}")),
        },
    ));
    step("bounded parallelism");
    results.push(("bounded parallelism", bounded_parallelism(t)));
    results.push((
        "provenance consistency",
        match &run1 {
            Ok(_) => provenance_consistency(&d1.join("runs/run-0001"), &d1.join("report")),
            Err(e) => Err(format!("reference run failed: {e}")),
        },
    ));
    step("full demo a (2 of 2)");
    let run2 = full_demo(&d2);
    results.push((
        "determinism",
        match (&run1, &run2) {
            (Ok(_), Ok(_)) => determinism(&d1, &d2),
            (Err(e), _) | (_, Err(e)) => Err(format!("demo run failed: {e}")),
        },
    ));
    step("desk-scale budget");
    results.push((
        "desk-scale budget",
        match &run1 {
            Ok(elapsed) => budget(*elapsed, t),
            Err(e) => Err(format!("demo a failed: {e}")),
        },
    ));

    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
