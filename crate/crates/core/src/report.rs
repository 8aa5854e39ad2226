//! Human-readable summary and plot-ready tables of a finished sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{density_grid_with_bounds, Bounds, PointCloud};
use crate::error::{Error, Result};
use crate::io::{ensure_dir, read_table, write_csv, write_density, Provenance};
use crate::regime::RegimeLabel;
use crate::sensing::{ranking, ComparisonEntry};
use crate::sweep::{PointStatus, SweepResult, SweepRow};

const LABELS: [RegimeLabel; 3] = [
    RegimeLabel::Periodic,
    RegimeLabel::IntermittentChaos,
    RegimeLabel::Chaotic,
];

fn centre(label: RegimeLabel) -> f64 {
    match label {
        RegimeLabel::Periodic => 0.0,
        RegimeLabel::IntermittentChaos => 0.5,
        RegimeLabel::Chaotic => 1.0,
    }
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either input is constant or shorter than two.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}

/// What the report contains, for callers that check it programmatically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub points: usize,
    pub failed: usize,
    /// Spearman correlation of chaotic fraction against the swept value.
    pub spearman: Option<f64>,
    /// Sweep index chosen to represent each regime present.
    pub representatives: Vec<(RegimeLabel, usize)>,
    /// Missing or unreadable artifacts.
    pub notes: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn representative(rows: &[SweepRow], label: RegimeLabel) -> Option<&SweepRow> {
    rows.iter()
        .filter(|r| r.regime == Some(label))
        .min_by(|a, b| {
            let da = (a.chaotic_fraction.unwrap_or(0.0) - centre(label)).abs();
            let db = (b.chaotic_fraction.unwrap_or(0.0) - centre(label)).abs();
            da.total_cmp(&db).then(a.index.cmp(&b.index))
        })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.digits$}"))
}

/// Writes `report.md`, `fraction_vs_<field>.csv`, one spectrum and one
/// density grid per regime present, and, when given, the sensing ranking.
/// Missing point artifacts are noted in the markdown, never fatal.
pub fn render_report(
    result: &SweepResult,
    sweep_dir: &Path,
    out: &Path,
    sensing: Option<&[ComparisonEntry]>,
    density_bins: usize,
) -> Result<ReportSummary> {
    ensure_dir(out)?;
    let mut notes = Vec::new();
    let mut files = Vec::new();
    let prov = Provenance {
        plan_hash: Some(result.plan_hash.clone()),
        ..Provenance::new(None, None)
    };

    let ok: Vec<&SweepRow> = result
        .rows
        .iter()
        .filter(|r| r.status == PointStatus::Ok)
        .collect();
    let values: Vec<f64> = ok.iter().map(|r| r.value).collect();
    let fractions: Vec<f64> = ok.iter().filter_map(|r| r.chaotic_fraction).collect();
    let rho = spearman(&values, &fractions);

    let fraction_path = out.join(format!("fraction_vs_{}.csv", result.field));
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            vec![
                format!("{:e}", r.value),
                r.chaotic_fraction
                    .map_or_else(String::new, |f| format!("{f:e}")),
                r.regime.map_or_else(String::new, |l| l.name().into()),
                match r.status {
                    PointStatus::Ok => "ok".into(),
                    PointStatus::Failed => "failed".into(),
                },
                r.seed.to_string(),
            ]
        })
        .collect();
    write_csv(
        &fraction_path,
        &[
            &result.field,
            "chaotic_fraction",
            "regime",
            "status",
            "seed",
        ],
        &rows,
    )?;
    files.push(fraction_path);

    let reps: Vec<(RegimeLabel, &SweepRow)> = LABELS
        .iter()
        .filter_map(|&l| representative(&result.rows, l).map(|r| (l, r)))
        .collect();

    for (label, row) in &reps {
        let Some(rel) = &row.artifacts.spectrum else {
            notes.push(format!("point {}: no spectrum recorded", row.index));
            continue;
        };
        match read_table(&sweep_dir.join(rel)) {
            Ok(t) => {
                let path = out.join(format!("spectrum_{}.csv", label.name()));
                let rows: Vec<Vec<String>> = (0..t.rows())
                    .map(|i| t.columns.iter().map(|c| format!("{:e}", c[i])).collect())
                    .collect();
                let header: Vec<&str> = t.header.iter().map(String::as_str).collect();
                write_csv(&path, &header, &rows)?;
                files.push(path);
            }
            Err(e) => notes.push(format!("point {}: spectrum unreadable ({e})", row.index)),
        }
    }

    // Grids share one set of bounds so their supports can be compared.
    let mut clouds = Vec::new();
    for (label, row) in &reps {
        let Some(rel) = &row.artifacts.trajectory else {
            notes.push(format!("point {}: no trajectory recorded", row.index));
            continue;
        };
        let cloud =
            read_table(&sweep_dir.join(rel)).and_then(|t| match (t.column("x"), t.column("v")) {
                (Some(x), Some(v)) => PointCloud::from_pairs(x, v),
                _ => Err(Error::parse(&sweep_dir.join(rel), "missing x or v column")),
            });
        match cloud {
            Ok(c) => clouds.push((*label, c)),
            Err(e) => notes.push(format!("point {}: trajectory unreadable ({e})", row.index)),
        }
    }
    let bounds = clouds
        .iter()
        .map(|(_, c)| Bounds::fit(c))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .reduce(|a, b| a.union(&b));
    let mut occupancy = Vec::new();
    if let Some(bounds) = bounds {
        for (label, cloud) in &clouds {
            let grid = density_grid_with_bounds(cloud, density_bins, bounds)?;
            let path = out.join(format!("density_{}.csv", label.name()));
            write_density(&path, &grid, ("x", "v"), prov.clone())?;
            occupancy.push((*label, grid.occupied_cells()));
            files.push(path);
        }
    }

    let mut ranking_lines = Vec::new();
    if let Some(entries) = sensing {
        let path = out.join("sensing_ranking.csv");
        let ranked = ranking(entries);
        let rows: Vec<Vec<String>> = ranked
            .iter()
            .enumerate()
            .map(|(i, r)| {
                vec![
                    (i + 1).to_string(),
                    r.name.clone(),
                    r.regime.name().into(),
                    format!("{:e}", r.snr_db),
                    format!("{:e}", r.floor_db),
                    r.nep.map_or_else(String::new, |n| format!("{n:e}")),
                ]
            })
            .collect();
        write_csv(
            &path,
            &["rank", "name", "regime", "snr_db", "floor_db", "nep"],
            &rows,
        )?;
        files.push(path);
        ranking_lines = ranked
            .iter()
            .map(|r| format!("{} ({}): {:.2} dB", r.name, r.regime, r.snr_db))
            .collect();
        for e in entries {
            if let ComparisonEntry::Failed { name, error } = e {
                notes.push(format!("sensing {name}: {error}"));
            }
        }
    }

    let md = markdown(result, rho, &reps, &occupancy, &ranking_lines, &notes)?;
    let md_path = out.join("report.md");
    std::fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;
    files.push(md_path);

    Ok(ReportSummary {
        points: result.rows.len(),
        failed: result.failed_points(),
        spearman: rho,
        representatives: reps.iter().map(|(l, r)| (*l, r.index)).collect(),
        notes,
        files,
    })
}

fn markdown(
    result: &SweepResult,
    rho: Option<f64>,
    reps: &[(RegimeLabel, &SweepRow)],
    occupancy: &[(RegimeLabel, usize)],
    ranking_lines: &[String],
    notes: &[String],
) -> Result<String> {
    let mut s = String::new();
    let w = |e: std::fmt::Error| Error::precondition("report", e.to_string());
    writeln!(s, "# Sweep over `{}`\n", result.field).map_err(w)?;
    writeln!(
        s,
        "Plan hash `{}`, master seed {}, toolkit {}.\n",
        result.plan_hash, result.master_seed, result.tool_version
    )
    .map_err(w)?;
    writeln!(
        s,
        "{} points, {} failed. Spearman correlation of chaotic fraction with `{}`: {}.\n",
        result.rows.len(),
        result.failed_points(),
        result.field,
        fmt_opt(rho, 3)
    )
    .map_err(w)?;
    writeln!(
        s,
        "| {} | chaotic fraction | regime | Lyapunov (1/s) | floor (dB) | status |",
        result.field
    )
    .map_err(w)?;
    writeln!(s, "|---|---|---|---|---|---|").map_err(w)?;
    for r in &result.rows {
        let status = match (&r.status, &r.error) {
            (PointStatus::Ok, _) => "ok".to_string(),
            (PointStatus::Failed, Some(e)) => format!("failed: {e}"),
            (PointStatus::Failed, None) => "failed".to_string(),
        };
        writeln!(
            s,
            "| {:.6e} | {} | {} | {} | {} | {} |",
            r.value,
            fmt_opt(r.chaotic_fraction, 3),
            r.regime.map_or("-", |l| l.name()),
            r.lyapunov
                .map_or_else(|| "-".into(), |l| format!("{l:.4e}")),
            fmt_opt(r.floor_db, 1),
            status
        )
        .map_err(w)?;
    }
    if !reps.is_empty() {
        writeln!(s, "\n## Regime representatives\n").map_err(w)?;
        for (label, row) in reps {
            let cells = occupancy
                .iter()
                .find(|(l, _)| l == label)
                .map_or_else(|| "-".into(), |(_, c)| c.to_string());
            writeln!(
                s,
                "- {label}: point {} at {:.6e}, fraction {}, occupied density cells {cells}",
                row.index,
                row.value,
                fmt_opt(row.chaotic_fraction, 3)
            )
            .map_err(w)?;
        }
    }
    if !ranking_lines.is_empty() {
        writeln!(s, "\n## Sensing ranking by SNR\n").map_err(w)?;
        for (i, line) in ranking_lines.iter().enumerate() {
            writeln!(s, "{}. {line}", i + 1).map_err(w)?;
        }
    }
    if !notes.is_empty() {
        writeln!(s, "\n## Notes\n").map_err(w)?;
        for n in notes {
            writeln!(s, "- {n}").map_err(w)?;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
        // Ties take the average rank.
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }
}
