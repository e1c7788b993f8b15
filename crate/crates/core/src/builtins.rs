//! In-process operations available to workflows as `builtin` processes.

use serde::de::DeserializeOwned;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::canonical::{derive_seed_str, to_payload};
use crate::data::{parse_battery_catalog, parse_history, BatteryConfig, PowerCurve, SiteHistory, WindFarmSite};
use crate::optimizer::{solve_design, DesignResult, Economics, LpStatus, SizingCase};
use crate::reporting::{consolidate_results, plot_file_name, render_design_plot};
use crate::scenario::{build_scenario_tree, sample_scenario_sets, KMeansConfig, ScenarioSet, ScenarioTree};
use crate::workflow::{ComponentContract, Contracts, FileRef};

pub type Ports = BTreeMap<String, Value>;

pub struct BuiltinContext<'a> {
    pub params: &'a BTreeMap<String, Value>,
    /// Directory that relative file references resolve against.
    pub base_dir: &'a Path,
    /// Private scratch directory of the running task.
    pub task_dir: &'a Path,
}

pub type BuiltinFn = fn(&BuiltinContext, &Ports) -> Result<Ports, String>;

#[derive(Clone)]
pub struct Builtin {
    pub contract: ComponentContract,
    pub run: BuiltinFn,
}

#[derive(Clone, Default)]
pub struct Registry {
    ops: BTreeMap<String, Builtin>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn register(&mut self, contract: ComponentContract, run: BuiltinFn) {
        self.ops.insert(contract.reference(), Builtin { contract, run });
    }

    pub fn get(&self, reference: &str) -> Option<&Builtin> {
        self.ops.get(reference)
    }

    pub fn contracts(&self) -> Contracts {
        self.ops.iter().map(|(k, b)| (k.clone(), b.contract.clone())).collect()
    }

    /// The shipped operation set.
    pub fn standard() -> Self {
        let curve_params = |c: ComponentContract| c.param("cut_in_ms", false).param("rated_ms", false).param("cut_out_ms", false);
        let mut r = Registry::empty();
        r.register(
            ComponentContract::new("wind", "1").input("site", "WindFarmSite").input("history", "FileRef").output("history", "HistoricalRecord"),
            wind,
        );
        r.register(ComponentContract::new("battery", "1").input("catalog", "FileRef").output("configs", "[BatteryConfig]"), battery);
        r.register(
            curve_params(
                ComponentContract::new("scen_set", "1")
                    .input("history", "HistoricalRecord")
                    .output("sets", "[ScenarioSet]")
                    .param("n_sets", true)
                    .param("n_days", true)
                    .param("seed", true),
            ),
            scen_set,
        );
        r.register(
            curve_params(
                ComponentContract::new("scen_tree", "1")
                    .input("history", "HistoricalRecord")
                    .output("tree", "ScenarioTree")
                    .param("branching", false)
                    .param("seed", true),
            ),
            scen_tree,
        );
        r.register(
            ComponentContract::new("design_ss", "1")
                .input("case", "(ScenarioSet, BatteryConfig)")
                .output("result", "DesignResult")
                .param("years", false)
                .param("discount_rate", false),
            design_ss,
        );
        r.register(
            ComponentContract::new("design_st", "1")
                .input("case", "(ScenarioTree, BatteryConfig)")
                .output("result", "DesignResult")
                .param("years", false)
                .param("discount_rate", false),
            design_st,
        );
        r.register(
            ComponentContract::new("summarize", "1").input("results", "[DesignResult]").output("summary", "FileRef").output("plots", "[FileRef]"),
            summarize,
        );
        r.register(ComponentContract::new("sleep", "1").input("ms", "Scalar").output("done", "Scalar"), sleep);
        r.register(ComponentContract::new("spin", "1").input("ms", "Scalar").output("done", "Scalar"), spin);
        r
    }
}

fn input<T: DeserializeOwned>(ports: &Ports, name: &str) -> Result<T, String> {
    let v = ports.get(name).ok_or_else(|| format!("missing input {name}"))?;
    T::deserialize(v).map_err(|e| format!("input {name}: {e}"))
}

fn output<T: serde::Serialize>(name: &str, value: &T) -> Result<Ports, String> {
    let v = to_payload(value).map_err(|e| format!("output {name}: {e}"))?;
    Ok([(name.to_string(), v)].into_iter().collect())
}

fn param_u64(ctx: &BuiltinContext, name: &str) -> Result<u64, String> {
    ctx.params.get(name).and_then(Value::as_u64).ok_or_else(|| format!("param {name} must be a non-negative integer"))
}

fn param_f64_or(ctx: &BuiltinContext, name: &str, default: f64) -> Result<f64, String> {
    match ctx.params.get(name) {
        None => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| format!("param {name} must be a number")),
    }
}

fn curve(ctx: &BuiltinContext) -> Result<PowerCurve, String> {
    let d = PowerCurve::default();
    PowerCurve::new(
        param_f64_or(ctx, "cut_in_ms", d.cut_in_ms)?,
        param_f64_or(ctx, "rated_ms", d.rated_ms)?,
        param_f64_or(ctx, "cut_out_ms", d.cut_out_ms)?,
    )
}

fn economics(ctx: &BuiltinContext) -> Result<Economics, String> {
    let d = Economics::default();
    let years = param_f64_or(ctx, "years", d.years as f64)?;
    if years < 0.0 || years.fract() != 0.0 {
        return Err("param years must be a non-negative integer".into());
    }
    let discount_rate = param_f64_or(ctx, "discount_rate", d.discount_rate)?;
    if discount_rate < 0.0 {
        return Err("param discount_rate must be >= 0".into());
    }
    Ok(Economics { years: years as u32, discount_rate })
}

/// Reads a referenced file and checks it still has the digest recorded
/// when the reference was made.
pub fn read_file_ref(base_dir: &Path, r: &FileRef) -> Result<Vec<u8>, String> {
    let path = r.resolve(base_dir);
    let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if crate::canonical::sha256_hex(&bytes) != r.sha256 {
        return Err(format!("{} changed since it was referenced", r.path));
    }
    Ok(bytes)
}

fn wind(ctx: &BuiltinContext, ports: &Ports) -> Result<Ports, String> {
    let site: WindFarmSite = input(ports, "site")?;
    let file: FileRef = input(ports, "history")?;
    let bytes = read_file_ref(ctx.base_dir, &file)?;
    let text = String::from_utf8(bytes).map_err(|e| format!("{}: {e}", file.path))?;
    let record = parse_history(&file.path, &text, &site.site_id).map_err(|e| e.to_string())?;
    output("history", &SiteHistory { site, record })
}

fn battery(ctx: &BuiltinContext, ports: &Ports) -> Result<Ports, String> {
    let file: FileRef = input(ports, "catalog")?;
    let bytes = read_file_ref(ctx.base_dir, &file)?;
    let text = String::from_utf8(bytes).map_err(|e| format!("{}: {e}", file.path))?;
    let configs = parse_battery_catalog(&file.path, &text).map_err(|e| e.to_string())?;
    output("configs", &configs)
}

fn scen_set(ctx: &BuiltinContext, ports: &Ports) -> Result<Ports, String> {
    let history: SiteHistory = input(ports, "history")?;
    let seed = derive_seed_str(param_u64(ctx, "seed")?, &history.site.site_id);
    let sets = sample_scenario_sets(
        &history,
        &curve(ctx)?,
        param_u64(ctx, "n_sets")? as usize,
        param_u64(ctx, "n_days")? as usize,
        seed,
    )
    .map_err(|e| e.to_string())?;
    output("sets", &sets)
}

fn scen_tree(ctx: &BuiltinContext, ports: &Ports) -> Result<Ports, String> {
    let history: SiteHistory = input(ports, "history")?;
    let branching = match ctx.params.get("branching") {
        None => (4, 3),
        Some(v) => {
            let b: Vec<usize> = serde_json::from_value(v.clone()).map_err(|_| "param branching must be [b1, b2]")?;
            match b[..] {
                [b1, b2] => (b1, b2),
                _ => return Err("param branching must be [b1, b2]".into()),
            }
        }
    };
    let seed = derive_seed_str(param_u64(ctx, "seed")?, &history.site.site_id);
    let tree = build_scenario_tree(&history, &curve(ctx)?, branching, seed, &KMeansConfig::default()).map_err(|e| e.to_string())?;
    output("tree", &tree)
}

fn finish_design(result: DesignResult) -> Result<Ports, String> {
    if result.status != LpStatus::Optimal {
        return Err(format!("sizing problem is {:?}", result.status));
    }
    output("result", &result)
}

fn design_ss(ctx: &BuiltinContext, ports: &Ports) -> Result<Ports, String> {
    let (set, battery): (ScenarioSet, BatteryConfig) = input(ports, "case")?;
    let case = SizingCase::from_set(set, battery, economics(ctx)?);
    finish_design(solve_design(&case).map_err(|e| e.to_string())?)
}

fn design_st(ctx: &BuiltinContext, ports: &Ports) -> Result<Ports, String> {
    let (tree, battery): (ScenarioTree, BatteryConfig) = input(ports, "case")?;
    let case = SizingCase::from_tree(tree, battery, economics(ctx)?);
    finish_design(solve_design(&case).map_err(|e| e.to_string())?)
}

fn write_file(ctx: &BuiltinContext, name: &str, contents: &str) -> Result<FileRef, String> {
    let path = ctx.task_dir.join(name);
    std::fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))?;
    FileRef::new(ctx.base_dir, &path).map_err(|e| e.to_string())
}

fn summarize(ctx: &BuiltinContext, ports: &Ports) -> Result<Ports, String> {
    let results: Vec<DesignResult> = input(ports, "results")?;
    let table = consolidate_results(&results).map_err(|e| e.to_string())?;
    let summary = write_file(ctx, "summary.csv", &table.to_csv())?;
    let mut plots = Vec::new();
    for site in table.sites() {
        let svg = render_design_plot(&table, &site).map_err(|e| e.to_string())?;
        plots.push(write_file(ctx, &plot_file_name(&site), &svg)?);
    }
    let mut out = output("summary", &summary)?;
    out.extend(output("plots", &plots)?);
    Ok(out)
}

fn millis(ports: &Ports) -> Result<(u64, Value), String> {
    let v = ports.get("ms").cloned().ok_or("missing input ms")?;
    let ms = v.as_f64().filter(|m| *m >= 0.0).ok_or("input ms must be a non-negative number")?;
    Ok((ms as u64, v))
}

fn sleep(_: &BuiltinContext, ports: &Ports) -> Result<Ports, String> {
    let (ms, v) = millis(ports)?;
    std::thread::sleep(Duration::from_millis(ms));
    Ok([("done".to_string(), v)].into_iter().collect())
}

fn spin(_: &BuiltinContext, ports: &Ports) -> Result<Ports, String> {
    let (ms, v) = millis(ports)?;
    let until = Instant::now() + Duration::from_millis(ms);
    let mut x = 0u64;
    while Instant::now() < until {
        x = std::hint::black_box(x.wrapping_mul(6364136223846793005).wrapping_add(1));
    }
    Ok([("done".to_string(), v)].into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{demo_sites, generate_synthetic_history, write_history};

    fn ctx<'a>(params: &'a BTreeMap<String, Value>, dir: &'a Path) -> BuiltinContext<'a> {
        BuiltinContext { params, base_dir: dir, task_dir: dir }
    }

    #[test]
    fn wind_then_scen_set() {
        let dir = tempfile::tempdir().unwrap();
        let site = demo_sites()[1].clone();
        let rec = generate_synthetic_history(&site, 1, 12);
        std::fs::write(dir.path().join("h.csv"), write_history(&[rec])).unwrap();
        let r = FileRef::new(dir.path(), Path::new("h.csv")).unwrap();
        let params: BTreeMap<String, Value> =
            serde_json::from_str(r#"{"n_sets": 3, "n_days": 4, "seed": 9}"#).unwrap();
        let c = ctx(&params, dir.path());
        let reg = Registry::standard();
        let mut ports = Ports::new();
        ports.insert("site".into(), to_payload(&site).unwrap());
        ports.insert("history".into(), serde_json::to_value(&r).unwrap());
        let out = (reg.get("wind@1").unwrap().run)(&c, &ports).unwrap();
        let hist: SiteHistory = serde_json::from_value(out["history"].clone()).unwrap();
        assert_eq!(hist.record.days(), 12);

        let ports: Ports = [("history".to_string(), out["history"].clone())].into_iter().collect();
        let sets = (reg.get("scen_set@1").unwrap().run)(&c, &ports).unwrap();
        assert_eq!(sets["sets"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn changed_file_detected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f"), "a").unwrap();
        let r = FileRef::new(dir.path(), Path::new("f")).unwrap();
        std::fs::write(dir.path().join("f"), "b").unwrap();
        assert!(read_file_ref(dir.path(), &r).unwrap_err().contains("changed"));
    }

    #[test]
    fn contracts_are_closed_and_versioned() {
        let c = Registry::standard().contracts();
        for op in ["wind@1", "battery@1", "scen_set@1", "scen_tree@1", "design_ss@1", "design_st@1", "summarize@1"] {
            assert!(c.contains_key(op), "{op}");
        }
        assert_eq!(c["design_ss@1"].inputs.len(), 1);
    }
}
