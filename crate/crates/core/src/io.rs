//! CSV artifacts with JSON sidecars.
//!
//! Every CSV written here has a sidecar next to it with the same stem and
//! a `.json` extension carrying sampling metadata and provenance.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::embedding::{Bounds, DensityGrid};
use crate::error::{Error, Result};
use crate::model::{Sample, SystemParams, Trajectory};
use crate::segmentation::{Label, WindowFeatures};
use crate::series::TimeSeries;
use crate::spectral::{to_db, Spectrum};
use crate::synthesis::SynthesizedSignal;

/// Where an artifact came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: Option<u64>,
    pub params_hash: Option<String>,
    pub plan_hash: Option<String>,
}

impl Provenance {
    pub fn new(seed: Option<u64>, params_hash: Option<String>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            params_hash,
            plan_hash: None,
        }
    }

    pub fn with_plan(mut self, plan_hash: &str) -> Self {
        self.plan_hash = Some(plan_hash.to_string());
        self
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::parse(path, e))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, format!("{other:?}")),
        }
    } else {
        Error::parse(path, e)
    }
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt(v: f64) -> String {
    // Shortest representation that parses back to the same value.
    format!("{v:e}")
}

/// Sidecar of a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub t0: f64,
    /// Rate of the rows in the CSV (Hz).
    pub fs: f64,
    /// Samples in the full record.
    pub samples: usize,
    /// Rows written; below `samples` when the record was thinned.
    pub rows: usize,
    /// Every `stride`-th sample was written.
    pub stride: usize,
    pub params: Option<SystemParams>,
    pub provenance: Provenance,
}

/// Writes `t,intensity,x,v`, thinning to at most `max_rows` rows.
pub fn write_trajectory(
    path: &Path,
    traj: &Trajectory,
    params: Option<&SystemParams>,
    max_rows: Option<usize>,
    provenance: Provenance,
) -> Result<TrajectoryMeta> {
    let stride = match max_rows {
        Some(0) => return Err(Error::precondition("max_rows", "must be >= 1")),
        Some(m) => traj.len().div_ceil(m).max(1),
        None => 1,
    };
    let rows = traj
        .samples
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(i, s)| [fmt(traj.time(i)), fmt(s.intensity), fmt(s.x), fmt(s.v)]);
    write_rows(path, &["t", "intensity", "x", "v"], rows)?;
    let meta = TrajectoryMeta {
        t0: traj.t0,
        fs: traj.fs / stride as f64,
        samples: traj.len(),
        rows: traj.len().div_ceil(stride),
        stride,
        params: params.cloned(),
        provenance,
    };
    write_json(&sidecar_path(path), &meta)?;
    Ok(meta)
}

/// Named numeric columns of a CSV with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// Reads a numeric CSV. Columns holding non-numeric text (labels) are
/// read as NaN.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut columns = vec![Vec::new(); header.len()];
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        for (col, field) in columns.iter_mut().zip(record.iter()) {
            col.push(field.trim().parse().unwrap_or(f64::NAN));
        }
    }
    Ok(Table { header, columns })
}

/// Sampling rate implied by a uniform time column.
fn rate_from_times(path: &Path, t: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{}: need two rows to infer the sampling rate",
            path.display()
        )));
    }
    let span = t[t.len() - 1] - t[0];
    let fs = (t.len() - 1) as f64 / span;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::parse(path, "time column is not increasing"));
    }
    Ok(fs)
}

/// One column of a CSV with a `t` column as a uniform series. The rate
/// comes from the sidecar when present, otherwise from the time column.
pub fn read_series(path: &Path, column: &str) -> Result<TimeSeries> {
    let table = read_table(path)?;
    let t = table
        .column("t")
        .ok_or_else(|| Error::parse(path, "missing column \"t\""))?;
    let values = table
        .column(column)
        .ok_or_else(|| Error::parse(path, format!("missing column {column:?}")))?
        .to_vec();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            field: column.to_string(),
        });
    }
    let sidecar = sidecar_path(path);
    let fs = match read_json::<serde_json::Value>(&sidecar) {
        Ok(v) => match v.get("fs").and_then(|f| f.as_f64()) {
            Some(fs) => fs,
            None => rate_from_times(path, t)?,
        },
        Err(_) => rate_from_times(path, t)?,
    };
    TimeSeries::new(t.first().copied().unwrap_or(0.0), fs, values)
}

/// Reads back a trajectory CSV.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let x = read_series(path, "x")?;
    let table = read_table(path)?;
    let column = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::parse(path, format!("missing column {name:?}")))
    };
    let (intensity, v) = (column("intensity")?, column("v")?);
    let meta: Option<TrajectoryMeta> = read_json(&sidecar_path(path)).ok();
    let samples = x
        .values
        .iter()
        .zip(intensity)
        .zip(v)
        .map(|((&x, &intensity), &v)| Sample { intensity, x, v })
        .collect();
    Ok(Trajectory {
        t0: x.t0,
        fs: x.fs,
        samples,
        params_hash: meta
            .as_ref()
            .and_then(|m| m.provenance.params_hash.clone())
            .unwrap_or_default(),
        seed: meta.and_then(|m| m.provenance.seed).unwrap_or(0),
    })
}

/// Writes `freq_hz,psd,psd_db`.
pub fn write_spectrum(path: &Path, spec: &Spectrum, provenance: Provenance) -> Result<()> {
    let rows = spec
        .freqs
        .iter()
        .zip(&spec.psd)
        .map(|(&f, &p)| [fmt(f), fmt(p), fmt(to_db(p))]);
    write_rows(path, &["freq_hz", "psd", "psd_db"], rows)?;
    #[derive(Serialize)]
    struct Meta<'a> {
        fs: f64,
        nfft: usize,
        overlap: f64,
        taper: &'a str,
        segments: usize,
        resolution_bandwidth: f64,
        provenance: Provenance,
    }
    write_json(
        &sidecar_path(path),
        &Meta {
            fs: spec.fs,
            nfft: spec.nfft,
            overlap: spec.overlap,
            taper: spec.taper.name(),
            segments: spec.segments,
            resolution_bandwidth: spec.resolution_bandwidth,
            provenance,
        },
    )
}

/// Writes one row per analysis window:
/// `t_start,t_end,spectral_flatness,zero_one_k,period_return_error,label`.
pub fn write_label_track(
    path: &Path,
    features: &[WindowFeatures],
    labels: &[Label],
    window: f64,
    provenance: Provenance,
) -> Result<()> {
    if features.len() != labels.len() {
        return Err(Error::precondition(
            "labels",
            "one label per window required",
        ));
    }
    let rows = features.iter().zip(labels).map(|(f, l)| {
        [
            fmt(f.start),
            fmt(f.start + window),
            fmt(f.spectral_flatness),
            fmt(f.zero_one_k),
            fmt(f.period_return_error),
            label_name(*l).to_string(),
        ]
    });
    write_rows(
        path,
        &[
            "t_start",
            "t_end",
            "spectral_flatness",
            "zero_one_k",
            "period_return_error",
            "label",
        ],
        rows,
    )?;
    #[derive(Serialize)]
    struct Meta {
        windows: usize,
        window: f64,
        provenance: Provenance,
    }
    write_json(
        &sidecar_path(path),
        &Meta {
            windows: features.len(),
            window,
            provenance,
        },
    )
}

fn label_name(l: Label) -> &'static str {
    match l {
        Label::Periodic => "periodic",
        Label::Chaotic => "chaotic",
    }
}

/// Writes `t,value,label`; the label is the ground-truth gate, 1 when the
/// chaotic source is selected.
pub fn write_synthesized(
    path: &Path,
    sig: &SynthesizedSignal,
    provenance: Provenance,
) -> Result<()> {
    let rows = sig
        .series
        .values
        .iter()
        .zip(&sig.labels)
        .enumerate()
        .map(|(i, (&v, &c))| [fmt(sig.series.time(i)), fmt(v), u8::from(c).to_string()]);
    write_rows(path, &["t", "value", "label"], rows)?;
    #[derive(Serialize)]
    struct Meta {
        t0: f64,
        fs: f64,
        samples: usize,
        gate_period: f64,
        duty: f64,
        gate_phase: f64,
        chaotic_fraction: f64,
        provenance: Provenance,
    }
    write_json(
        &sidecar_path(path),
        &Meta {
            t0: sig.series.t0,
            fs: sig.series.fs,
            samples: sig.series.len(),
            gate_period: sig.spec.period,
            duty: sig.spec.duty,
            gate_phase: sig.spec.phase,
            chaotic_fraction: sig.chaotic_fraction(),
            provenance,
        },
    )
}

/// Sidecar of a density grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMeta {
    pub bounds: Bounds,
    pub bins: usize,
    /// Names of the horizontal (columns) and vertical (rows) axes.
    pub x_axis: String,
    pub y_axis: String,
    pub provenance: Provenance,
}

/// Writes `bins` rows of `bins` masses, first row at `y_min`, no header.
pub fn write_density(
    path: &Path,
    grid: &DensityGrid,
    axes: (&str, &str),
    provenance: Provenance,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for row in grid.mass.chunks_exact(grid.bins) {
        w.write_record(row.iter().map(|&m| fmt(m)))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(
        &sidecar_path(path),
        &DensityMeta {
            bounds: grid.bounds,
            bins: grid.bins,
            x_axis: axes.0.to_string(),
            y_axis: axes.1.to_string(),
            provenance,
        },
    )
}

pub fn read_density(path: &Path) -> Result<DensityGrid> {
    let meta: DensityMeta = read_json(&sidecar_path(path))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut mass = Vec::with_capacity(meta.bins * meta.bins);
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        for field in record.iter() {
            mass.push(field.parse().map_err(|e| Error::parse(path, e))?);
        }
    }
    if mass.len() != meta.bins * meta.bins {
        return Err(Error::parse(path, "cell count does not match the sidecar"));
    }
    Ok(DensityGrid {
        bounds: meta.bounds,
        bins: meta.bins,
        mass,
    })
}

/// Writes a header plus rows of already formatted fields.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_rows(path, header, rows)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{density_grid, PointCloud};

    fn trajectory() -> Trajectory {
        Trajectory {
            t0: 0.5,
            fs: 10.0,
            samples: (0..25)
                .map(|i| Sample {
                    intensity: i as f64 * 0.1,
                    x: (i as f64).sin(),
                    v: 1.0 / 3.0 + i as f64,
                })
                .collect(),
            params_hash: "abc".into(),
            seed: 9,
        }
    }

    #[test]
    fn trajectory_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let traj = trajectory();
        let prov = Provenance::new(Some(9), Some("abc".into()));
        write_trajectory(&path, &traj, None, None, prov).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.samples, traj.samples);
        assert_eq!(back.seed, 9);
        assert_eq!(back.params_hash, "abc");
        assert!((back.fs - 10.0).abs() < 1e-12);
        assert!((back.t0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn thinned_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let meta =
            write_trajectory(&path, &trajectory(), None, Some(10), Provenance::default()).unwrap();
        assert_eq!(meta.stride, 3);
        assert_eq!(meta.rows, 9);
        let back = read_series(&path, "v").unwrap();
        assert_eq!(back.len(), 9);
        assert!((back.fs - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn series_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "t,value\n0,1\n0.25,2\n0.5,3\n").unwrap();
        let ts = read_series(&path, "value").unwrap();
        assert_eq!(ts.values, vec![1.0, 2.0, 3.0]);
        assert!((ts.fs - 4.0).abs() < 1e-12);
        assert!(read_series(&path, "nope").is_err());
    }

    #[test]
    fn density_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let cloud = PointCloud::from_pairs(&[0.0, 1.0, 0.5], &[0.0, 2.0, 1.0]).unwrap();
        let grid = density_grid(&cloud, 4).unwrap();
        write_density(&path, &grid, ("x", "v"), Provenance::default()).unwrap();
        assert_eq!(read_density(&path).unwrap(), grid);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_series(Path::new("/nonexistent/x.csv"), "x").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
