//! Parameter sweeps: one simulate, segment, classify run per point.
//!
//! Point `i` runs with seed `splitmix64(master_seed + (i + 1) * GOLDEN)`,
//! the `i`-th output of a SplitMix64 stream started at the master seed, so
//! results do not depend on execution order or thread count.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{set_field, SweepPlan};
use crate::error::{Error, Result};
use crate::io::{
    ensure_dir, write_csv, write_json, write_label_track, write_spectrum, write_trajectory,
    Provenance,
};
use crate::model::{integrate, State, SystemParams};
use crate::regime::{regime_classify, AnalysisConfig, RegimeLabel};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sweep point `index`.
pub fn point_seed(master: u64, index: usize) -> u64 {
    splitmix64(master.wrapping_add((index as u64 + 1).wrapping_mul(GOLDEN)))
}

/// Digest of everything that determines the sweep's numbers; the output
/// directory and parallelism width are excluded.
pub fn plan_hash(plan: &SweepPlan) -> Result<String> {
    #[derive(Serialize)]
    struct Canonical<'a> {
        base: &'a SystemParams,
        analysis: &'a AnalysisConfig,
        field: &'a str,
        values: &'a [f64],
        master_seed: u64,
        trajectory_max_samples: Option<usize>,
    }
    let canonical = Canonical {
        base: plan.base.system()?,
        analysis: &plan.base.analysis,
        field: &plan.field,
        values: &plan.values,
        master_seed: plan.master_seed,
        trajectory_max_samples: plan.trajectory_max_samples,
    };
    let json = serde_json::to_string(&canonical).map_err(|e| Error::parse(Path::new("plan"), e))?;
    Ok(hex::encode(&Sha256::digest(json.as_bytes())[..16]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Failed,
}

/// Files written for one point, relative to the sweep directory.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Artifacts {
    pub trajectory: Option<String>,
    pub labels: Option<String>,
    pub spectrum: Option<String>,
    pub report: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Position in the plan.
    pub index: usize,
    pub value: f64,
    pub seed: u64,
    pub status: PointStatus,
    pub error: Option<String>,
    /// Exit code class of the failure.
    pub error_code: Option<i32>,
    pub chaotic_fraction: Option<f64>,
    pub regime: Option<RegimeLabel>,
    pub chaotic_epochs: Option<usize>,
    /// Largest Lyapunov exponent (1/s).
    pub lyapunov: Option<f64>,
    pub floor_db: Option<f64>,
    pub floor_elevation_db: Option<f64>,
    pub artifacts: Artifacts,
}

impl SweepRow {
    fn failed(index: usize, value: f64, seed: u64, error: String, code: i32) -> Self {
        Self {
            index,
            value,
            seed,
            status: PointStatus::Failed,
            error: Some(error),
            error_code: Some(code),
            chaotic_fraction: None,
            regime: None,
            chaotic_epochs: None,
            lyapunov: None,
            floor_db: None,
            floor_elevation_db: None,
            artifacts: Artifacts::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub tool_version: String,
    pub plan_hash: String,
    pub field: String,
    pub master_seed: u64,
    /// One row per plan point, ordered by swept value.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn failed_points(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.status == PointStatus::Failed)
            .count()
    }
}

/// Name of the per-point directory.
pub fn point_dir_name(index: usize) -> String {
    format!("point_{index:04}")
}

/// Per-point report stored next to the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct PointReport<'a> {
    field: &'a str,
    value: f64,
    params: &'a SystemParams,
    regime: &'a crate::regime::Regime,
    segments: &'a crate::segmentation::SegmentReport,
    floor_db: f64,
    provenance: &'a Provenance,
}

fn run_point(plan: &SweepPlan, hash: &str, index: usize, out: Option<&Path>) -> Result<SweepRow> {
    let value = plan.values[index];
    let seed = point_seed(plan.master_seed, index);
    let mut p = plan.base.system()?.clone();
    set_field(&mut p, &plan.field, value)?;
    p.seed = seed;
    let traj = integrate(&p, State::default(), None)?;
    let analysis = regime_classify(&traj, &plan.base.analysis, Some(&p))?;
    let mut artifacts = Artifacts::default();
    if let Some(out) = out {
        let name = point_dir_name(index);
        let dir = out.join(&name);
        ensure_dir(&dir)?;
        let prov = Provenance::new(Some(seed), Some(p.hash())).with_plan(hash);
        write_trajectory(
            &dir.join("trajectory.csv"),
            &traj,
            Some(&p),
            plan.trajectory_max_samples,
            prov.clone(),
        )?;
        write_label_track(
            &dir.join("labels.csv"),
            &analysis.segmentation.features,
            &analysis.segmentation.labels,
            analysis.report().window,
            prov.clone(),
        )?;
        write_spectrum(&dir.join("spectrum.csv"), &analysis.spectrum, prov.clone())?;
        write_json(
            &dir.join("report.json"),
            &PointReport {
                field: &plan.field,
                value,
                params: &p,
                regime: &analysis.regime,
                segments: analysis.report(),
                floor_db: analysis.floor_db,
                provenance: &prov,
            },
        )?;
        artifacts = Artifacts {
            trajectory: Some(format!("{name}/trajectory.csv")),
            labels: Some(format!("{name}/labels.csv")),
            spectrum: Some(format!("{name}/spectrum.csv")),
            report: Some(format!("{name}/report.json")),
        };
    }
    let evidence = &analysis.regime.evidence;
    Ok(SweepRow {
        index,
        value,
        seed,
        status: PointStatus::Ok,
        error: None,
        error_code: None,
        chaotic_fraction: Some(evidence.chaotic_fraction),
        regime: Some(analysis.regime.label),
        chaotic_epochs: Some(analysis.report().chaotic_epochs()),
        lyapunov: evidence.lyapunov,
        floor_db: Some(analysis.floor_db),
        floor_elevation_db: Some(evidence.floor_elevation_db),
        artifacts,
    })
}

fn isolated_point(plan: &SweepPlan, hash: &str, index: usize, out: Option<&Path>) -> SweepRow {
    let value = plan.values[index];
    let seed = point_seed(plan.master_seed, index);
    match catch_unwind(AssertUnwindSafe(|| run_point(plan, hash, index, out))) {
        Ok(Ok(row)) => row,
        Ok(Err(e)) => SweepRow::failed(index, value, seed, e.to_string(), e.exit_code()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            SweepRow::failed(index, value, seed, format!("panic: {msg}"), 1)
        }
    }
}

/// Runs every point on `jobs` threads. With `out`, each point writes its
/// artifacts to `out/point_NNNN/` and the result goes to `out/sweep.json`
/// and `out/sweep.csv`.
pub fn run_sweep(plan: &SweepPlan, out: Option<&Path>, jobs: usize) -> Result<SweepResult> {
    plan.validate()?;
    let hash = plan_hash(plan)?;
    if let Some(out) = out {
        ensure_dir(out)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::precondition("jobs", e.to_string()))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        (0..plan.values.len())
            .into_par_iter()
            .map(|i| isolated_point(plan, &hash, i, out))
            .collect()
    });
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.index.cmp(&b.index)));
    let result = SweepResult {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        plan_hash: hash,
        field: plan.field.clone(),
        master_seed: plan.master_seed,
        rows,
    };
    if let Some(out) = out {
        write_json(&out.join("sweep.json"), &result)?;
        write_sweep_table(&out.join("sweep.csv"), &result)?;
    }
    Ok(result)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:e}"))
}

/// Flat view of the result, one row per point.
pub fn write_sweep_table(path: &Path, result: &SweepResult) -> Result<()> {
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            vec![
                r.index.to_string(),
                format!("{:e}", r.value),
                r.seed.to_string(),
                match r.status {
                    PointStatus::Ok => "ok".into(),
                    PointStatus::Failed => "failed".into(),
                },
                opt(r.chaotic_fraction),
                r.regime.map_or_else(String::new, |l| l.name().to_string()),
                opt(r.lyapunov),
                opt(r.floor_db),
                r.artifacts.trajectory.clone().unwrap_or_default(),
                result.plan_hash.clone(),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "index",
            &result.field,
            "seed",
            "status",
            "chaotic_fraction",
            "regime",
            "lyapunov",
            "floor_db",
            "trajectory",
            "plan_hash",
        ],
        &rows,
    )
}

/// Directory a sweep writes to: the explicit argument, else the plan's
/// `out_dir` resolved next to the plan, else `None`.
pub fn resolve_out_dir(explicit: Option<&Path>, plan: &SweepPlan) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| plan.out_dir.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference generator seeded with 1234567.
        let mut state: u64 = 1_234_567;
        let mut next = || {
            state = state.wrapping_add(GOLDEN);
            splitmix64(state)
        };
        assert_eq!(next(), 6_457_827_717_110_365_317);
        assert_eq!(next(), 3_203_168_211_198_807_973);
        assert_eq!(point_seed(1_234_567, 0), 6_457_827_717_110_365_317);
        assert_eq!(point_seed(1_234_567, 1), 3_203_168_211_198_807_973);
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| point_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
