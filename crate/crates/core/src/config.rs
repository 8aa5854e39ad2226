//! Configuration files: TOML with SI units, one key per parameter.
//!
//! Rates may be given directly (`omega_m`, `gamma_m`, `kappa`, `kappa_ex`)
//! or derived from measured constants:
//!
//! * `mechanical_frequency_hz` gives `omega_m = 2 pi f`;
//! * `mechanical_q` gives `gamma_m = omega_m / Q`;
//! * `optical_q` with `carrier_wavelength_m` gives
//!   `kappa = 2 pi c / (lambda Q)`;
//! * `coupling_ratio` gives `kappa_ex = ratio * kappa`.
//!
//! A direct value wins over a derived one.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Column, SystemParams};
use crate::regime::{AnalysisConfig, LyapunovConfig};
use crate::segmentation::{ClassifierConfig, FeatureConfig, SegmentationConfig};
use crate::sensing::{SnrConfig, UltrasoundStimulus};
use crate::spectral::Taper;
use crate::synthesis::FixtureConfig;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    delta: Option<f64>,
    kappa: Option<f64>,
    kappa_ex: Option<f64>,
    omega_m: Option<f64>,
    gamma_m: Option<f64>,
    g0: Option<f64>,
    drive_amplitude: Option<f64>,
    noise_sigma: Option<f64>,
    dt: Option<f64>,
    t_transient: Option<f64>,
    t_record: Option<f64>,
    decimation: Option<usize>,
    seed: Option<u64>,
    mechanical_frequency_hz: Option<f64>,
    mechanical_q: Option<f64>,
    optical_q: Option<f64>,
    carrier_wavelength_m: Option<f64>,
    coupling_ratio: Option<f64>,
}

fn required(value: Option<f64>, field: &str) -> Result<f64> {
    value.ok_or_else(|| Error::precondition(field, "missing from [system]"))
}

impl RawSystem {
    fn resolve(&self) -> Result<SystemParams> {
        let omega_m = match (self.omega_m, self.mechanical_frequency_hz) {
            (Some(w), _) => w,
            (None, Some(f)) => 2.0 * PI * f,
            (None, None) => {
                return Err(Error::precondition(
                    "omega_m",
                    "give omega_m or mechanical_frequency_hz",
                ))
            }
        };
        let gamma_m = match (self.gamma_m, self.mechanical_q) {
            (Some(g), _) => g,
            (None, Some(q)) => omega_m / q,
            (None, None) => {
                return Err(Error::precondition(
                    "gamma_m",
                    "give gamma_m or mechanical_q",
                ))
            }
        };
        let kappa = match (self.kappa, self.optical_q, self.carrier_wavelength_m) {
            (Some(k), _, _) => k,
            (None, Some(q), Some(lambda)) => 2.0 * PI * SPEED_OF_LIGHT / lambda / q,
            _ => {
                return Err(Error::precondition(
                    "kappa",
                    "give kappa or both optical_q and carrier_wavelength_m",
                ))
            }
        };
        let kappa_ex = match (self.kappa_ex, self.coupling_ratio) {
            (Some(k), _) => k,
            (None, Some(r)) => r * kappa,
            (None, None) => {
                return Err(Error::precondition(
                    "kappa_ex",
                    "give kappa_ex or coupling_ratio",
                ))
            }
        };
        let p = SystemParams {
            delta: required(self.delta, "delta")?,
            kappa,
            kappa_ex,
            omega_m,
            gamma_m,
            g0: required(self.g0, "g0")?,
            drive_amplitude: required(self.drive_amplitude, "drive_amplitude")?,
            noise_sigma: self.noise_sigma.unwrap_or(0.0),
            dt: required(self.dt, "dt")?,
            t_transient: required(self.t_transient, "t_transient")?,
            t_record: required(self.t_record, "t_record")?,
            decimation: self.decimation.unwrap_or(1),
            seed: self.seed.unwrap_or(0),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    column: Option<Column>,
    /// Window length in mechanical periods.
    window_periods: Option<f64>,
    /// Window length in seconds.
    window: Option<f64>,
    /// Hop as a fraction of the window.
    hop_fraction: Option<f64>,
    /// Minimum epoch in windows.
    min_epoch_windows: Option<f64>,
    nfft: Option<usize>,
    overlap: Option<f64>,
    taper: Option<Taper>,
    density_bins: Option<usize>,
    #[serde(default)]
    classifier: ClassifierConfig,
    #[serde(default)]
    features: FeatureConfig,
    lyapunov: Option<RawLyapunov>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLyapunov {
    /// Measured duration in mechanical periods.
    t_total_periods: f64,
    /// Renormalization interval in mechanical periods.
    renorm_periods: f64,
}

impl RawAnalysis {
    fn resolve(&self, omega_m: f64) -> Result<AnalysisConfig> {
        let period = 2.0 * PI / omega_m;
        let window = match (self.window, self.window_periods) {
            (Some(w), _) => w,
            (None, Some(n)) => n * period,
            (None, None) => 128.0 * period,
        };
        let hop = window * self.hop_fraction.unwrap_or(0.5);
        let segmentation = SegmentationConfig {
            window,
            hop,
            min_epoch: Some(window * self.min_epoch_windows.unwrap_or(3.0)),
            classifier: self.classifier.clone(),
            features: self.features.clone(),
        };
        let mut cfg = AnalysisConfig::new(segmentation);
        if let Some(c) = self.column {
            cfg.column = c;
        }
        if let Some(n) = self.nfft {
            cfg.nfft = n;
        }
        if let Some(o) = self.overlap {
            cfg.overlap = o;
        }
        if let Some(t) = self.taper {
            cfg.taper = t;
        }
        if let Some(b) = self.density_bins {
            cfg.density_bins = b;
        }
        cfg.lyapunov = self.lyapunov.map(|l| LyapunovConfig {
            t_total: l.t_total_periods * period,
            renorm: l.renorm_periods * period,
        });
        cfg.segmentation.classifier.validate()?;
        Ok(cfg)
    }
}

/// Analysis defaults for a system with mechanical frequency `omega_m`.
pub fn default_analysis(omega_m: f64) -> Result<AnalysisConfig> {
    RawAnalysis::default().resolve(omega_m)
}

/// Drive range scanned by the threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdScan {
    pub drive_min: f64,
    pub drive_max: f64,
    pub steps: usize,
}

/// Gate of the synthesized fixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    pub period: f64,
    pub duty: f64,
    pub duration: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            period: 4.0,
            duty: 0.5,
            duration: 20.0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    system: Option<RawSystem>,
    #[serde(default)]
    analysis: RawAnalysis,
    stimulus: Option<UltrasoundStimulus>,
    #[serde(default)]
    snr: SnrConfig,
    threshold: Option<ThresholdScan>,
    fixture: Option<FixtureConfig>,
    gate: Option<GateConfig>,
}

/// A parsed run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: Option<SystemParams>,
    pub analysis: AnalysisConfig,
    pub stimulus: Option<UltrasoundStimulus>,
    pub snr: SnrConfig,
    pub threshold: Option<ThresholdScan>,
    pub fixture: FixtureConfig,
    pub gate: GateConfig,
}

impl RunConfig {
    pub fn system(&self) -> Result<&SystemParams> {
        self.system
            .as_ref()
            .ok_or_else(|| Error::precondition("system", "configuration has no [system] table"))
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_run(text: &str, path: &Path) -> Result<RunConfig> {
    let raw: RawRun = toml::from_str(text).map_err(|e| Error::parse(path, e))?;
    let system = raw.system.as_ref().map(RawSystem::resolve).transpose()?;
    // Fixture-only files carry no mechanical period; the window then
    // defaults to twenty fundamental periods of the fixture.
    let fixture = raw.fixture.unwrap_or_default();
    let analysis = match &system {
        Some(p) => raw.analysis.resolve(p.omega_m)?,
        None => {
            let mut a = raw.analysis.clone();
            if a.window.is_none() && a.window_periods.is_none() {
                a.window_periods = Some(20.0);
            }
            a.resolve(2.0 * PI * fixture.f0)?
        }
    };
    Ok(RunConfig {
        system,
        analysis,
        stimulus: raw.stimulus,
        snr: raw.snr,
        threshold: raw.threshold,
        fixture,
        gate: raw.gate.unwrap_or_default(),
    })
}

pub fn load_run(path: &Path) -> Result<RunConfig> {
    parse_run(&read_text(path)?, path)
}

/// Parameter swept by a plan.
pub fn set_field(p: &mut SystemParams, field: &str, value: f64) -> Result<()> {
    let slot = match field {
        "delta" => &mut p.delta,
        "kappa" => &mut p.kappa,
        "kappa_ex" => &mut p.kappa_ex,
        "omega_m" => &mut p.omega_m,
        "gamma_m" => &mut p.gamma_m,
        "g0" => &mut p.g0,
        "drive_amplitude" => &mut p.drive_amplitude,
        "noise_sigma" => &mut p.noise_sigma,
        other => {
            return Err(Error::precondition(
                "field",
                format!("{other:?} is not a sweepable parameter"),
            ))
        }
    };
    *slot = value;
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    base: PathBuf,
    #[serde(default = "default_field")]
    field: String,
    values: Option<Vec<f64>>,
    start: Option<f64>,
    stop: Option<f64>,
    n: Option<usize>,
    #[serde(default)]
    master_seed: u64,
    trajectory_max_samples: Option<usize>,
    out_dir: Option<PathBuf>,
    jobs: Option<usize>,
}

fn default_field() -> String {
    "delta".into()
}

#[derive(Debug, Clone, Deserialize)]
struct RawSweepFile {
    sweep: RawSweep,
}

/// A parameter sweep over one field of a base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub base: RunConfig,
    pub base_path: PathBuf,
    pub field: String,
    pub values: Vec<f64>,
    pub master_seed: u64,
    /// Cap on rows written to each point's trajectory CSV.
    pub trajectory_max_samples: Option<usize>,
    /// Output directory, relative paths resolved against the plan file.
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::precondition("values", "sweep has no points"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "values".into(),
            });
        }
        let mut probe = self.base.system()?.clone();
        set_field(&mut probe, &self.field, self.values[0])?;
        Ok(())
    }
}

pub fn load_sweep(path: &Path) -> Result<SweepPlan> {
    let text = read_text(path)?;
    let raw: RawSweepFile = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
    let raw = raw.sweep;
    let values = match (raw.values, raw.start, raw.stop, raw.n) {
        (Some(v), _, _, _) => v,
        (None, Some(a), Some(b), Some(n)) => linspace(a, b, n),
        _ => {
            return Err(Error::precondition(
                "values",
                "give values or start, stop and n",
            ))
        }
    };
    let dir = path.parent().unwrap_or(Path::new(""));
    let base_path = dir.join(&raw.base);
    let base = load_run(&base_path)?;
    let plan = SweepPlan {
        base,
        base_path,
        field: raw.field,
        values,
        master_seed: raw.master_seed,
        trajectory_max_samples: raw.trajectory_max_samples,
        out_dir: raw.out_dir.map(|d| dir.join(d)),
        jobs: raw.jobs,
    };
    plan.validate()?;
    Ok(plan)
}

/// `n` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MEASURED: &str = r#"
[system]
mechanical_frequency_hz = 21.5e6
mechanical_q = 2300.0
optical_q = 1.07e7
carrier_wavelength_m = 1550e-9
coupling_ratio = 0.5
g0 = 1.35e8
delta = -1.9e8
drive_amplitude = 6.75e8
dt = 3.7e-10
t_transient = 1e-6
t_record = 1e-6
decimation = 5
"#;

    #[test]
    fn measured_constants_are_converted() {
        let cfg = parse_run(MEASURED, Path::new("t.cfg")).unwrap();
        let p = cfg.system().unwrap();
        assert!((p.omega_m - 2.0 * PI * 21.5e6).abs() < 1e-3);
        assert!((p.gamma_m * 2300.0 / p.omega_m - 1.0).abs() < 1e-12);
        let expected_kappa = 2.0 * PI * SPEED_OF_LIGHT / 1550e-9 / 1.07e7;
        assert!((p.kappa / expected_kappa - 1.0).abs() < 1e-12);
        assert_eq!(p.kappa_ex, 0.5 * p.kappa);
        assert_eq!(p.seed, 0);
        let window_periods = cfg.analysis.segmentation.window * p.omega_m / (2.0 * PI);
        assert!((window_periods - 128.0).abs() < 1e-9);
    }

    #[test]
    fn direct_values_win() {
        let text = MEASURED.replace("[system]", "[system]\nkappa = 1e8\nomega_m = 1e8");
        let p = parse_run(&text, Path::new("t.cfg"))
            .unwrap()
            .system()
            .unwrap()
            .clone();
        assert_eq!(p.kappa, 1e8);
        assert_eq!(p.omega_m, 1e8);
    }

    #[test]
    fn missing_and_unknown_keys() {
        let text = MEASURED.replace("g0 = 1.35e8\n", "");
        assert!(matches!(
            parse_run(&text, Path::new("t.cfg")),
            Err(Error::Precondition { field, .. }) if field == "g0"
        ));
        let text = MEASURED.replace("[system]", "[system]\nbogus = 1");
        assert!(matches!(
            parse_run(&text, Path::new("t.cfg")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn sweep_fields() {
        let mut p = parse_run(MEASURED, Path::new("t.cfg"))
            .unwrap()
            .system()
            .unwrap()
            .clone();
        set_field(&mut p, "delta", 1.0).unwrap();
        assert_eq!(p.delta, 1.0);
        assert!(set_field(&mut p, "dt", 1.0).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace(2.0, 5.0, 1), vec![2.0]);
    }

    #[test]
    fn fixture_only_config() {
        let cfg = parse_run(
            "[gate]\nperiod = 2.0\nduty = 0.3\nduration = 8.0\n",
            Path::new("f.cfg"),
        )
        .unwrap();
        assert!(cfg.system.is_none());
        assert!((cfg.analysis.segmentation.window - 0.02).abs() < 1e-12);
        assert_eq!(cfg.gate.duty, 0.3);
    }
}
