//! The shipped pipelines and the synthetic inputs they run on.

use std::path::{Path, PathBuf};

use crate::data::{demo_sites, factored_catalog_json, generate_synthetic_history, write_history, write_sites};

pub const PIPELINE_A: &str = include_str!("../pipelines/formulation_a.workflow.json");
pub const PIPELINE_B: &str = include_str!("../pipelines/formulation_b.workflow.json");

/// Days of synthetic history per site.
pub const DEMO_DAYS: usize = 365;

/// Illustrative chemistries: (label, round-trip efficiency, $/kW by duration).
/// Labels and numbers are placeholders, not measured values.
pub const DEMO_CHEMISTRIES: [(&str, f64, [(f64, f64); 4]); 2] = [
    ("chem-a", 0.85, [(2.0, 700.0), (4.0, 1300.0), (6.0, 1900.0), (8.0, 2500.0)]),
    ("chem-b", 0.75, [(2.0, 1100.0), (4.0, 1700.0), (6.0, 2600.0), (8.0, 3500.0)]),
];
pub const DEMO_DURATIONS_H: [f64; 4] = [2.0, 4.0, 6.0, 8.0];
pub const DEMO_RATINGS_MW: [f64; 2] = [100.0, 1000.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    A,
    B,
}

impl Formulation {
    pub fn pipeline(self) -> &'static str {
        match self {
            Formulation::A => PIPELINE_A,
            Formulation::B => PIPELINE_B,
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Formulation::A => "formulation_a.workflow.json",
            Formulation::B => "formulation_b.workflow.json",
        }
    }
}

pub fn demo_catalog_json() -> String {
    let chems: Vec<(&str, f64, &[(f64, f64)])> = DEMO_CHEMISTRIES.iter().map(|(n, rte, c)| (*n, *rte, &c[..])).collect();
    factored_catalog_json(&chems, &DEMO_DURATIONS_H, &DEMO_RATINGS_MW, "illustrative placeholder chemistries and costs")
}

/// Writes `sites.csv`, `history.csv` and `batteries.json` into `dir`.
pub fn write_demo_inputs(dir: &Path, seed: u64) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let sites = demo_sites();
    let records: Vec<_> = sites.iter().map(|s| generate_synthetic_history(s, seed, DEMO_DAYS)).collect();
    std::fs::write(dir.join("sites.csv"), write_sites(&sites))?;
    std::fs::write(dir.join("history.csv"), write_history(&records))?;
    std::fs::write(dir.join("batteries.json"), demo_catalog_json())?;
    Ok(())
}

/// Writes the inputs and the pipeline document; returns the document path.
pub fn write_demo(dir: &Path, formulation: Formulation, seed: u64) -> std::io::Result<PathBuf> {
    write_demo_inputs(dir, seed)?;
    let path = dir.join(formulation.file_name());
    std::fs::write(&path, formulation.pipeline())?;
    Ok(path)
}
