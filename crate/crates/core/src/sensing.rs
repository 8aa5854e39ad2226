//! Simulated ultrasonic sensing: tone injection, response SNR and NEP.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::model::{integrate, Column, ForceFunction, State, SystemParams, Trajectory};
use crate::regime::{regime_classify, AnalysisConfig, RegimeLabel};
use crate::series::median;
use crate::spectral::{to_db, Spectrum};

/// How the tone enters the equations of motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Additive force on the mechanical velocity equation.
    #[default]
    Force,
    /// Drive amplitude multiplied by `1 + amplitude * sin(2 pi f t)`.
    DriveModulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UltrasoundStimulus {
    /// Tone frequency (Hz).
    pub frequency: f64,
    /// Force amplitude (1/s) or fractional drive modulation depth.
    pub amplitude: f64,
    /// Calibrated acoustic power entering the NEP (W).
    pub power: f64,
    #[serde(default)]
    pub coupling: Coupling,
}

impl Default for UltrasoundStimulus {
    fn default() -> Self {
        Self {
            frequency: 570e3,
            amplitude: 0.0,
            power: 1e-6,
            coupling: Coupling::Force,
        }
    }
}

impl UltrasoundStimulus {
    pub fn validate(&self, fs: f64) -> Result<()> {
        ensure_finite("frequency", self.frequency)?;
        ensure_finite("amplitude", self.amplitude)?;
        ensure_finite("power", self.power)?;
        if !(self.frequency > 0.0 && self.frequency < 0.5 * fs) {
            return Err(Error::precondition(
                "frequency",
                format!("must lie in (0, fs/2 = {:.4e}) Hz", 0.5 * fs),
            ));
        }
        if self.amplitude < 0.0 {
            return Err(Error::precondition("amplitude", "must be >= 0"));
        }
        if self.power <= 0.0 {
            return Err(Error::precondition("power", "must be > 0"));
        }
        Ok(())
    }
}

impl ForceFunction for UltrasoundStimulus {
    fn force(&self, t: f64) -> f64 {
        match self.coupling {
            Coupling::Force => self.amplitude * (2.0 * PI * self.frequency * t).sin(),
            Coupling::DriveModulation => 0.0,
        }
    }

    fn drive_scale(&self, t: f64) -> f64 {
        match self.coupling {
            Coupling::Force => 1.0,
            Coupling::DriveModulation => {
                1.0 + self.amplitude * (2.0 * PI * self.frequency * t).sin()
            }
        }
    }
}

/// Integrates with the tone applied. A zero amplitude runs the plain
/// integrator, so the result equals the unstimulated trajectory bit for bit.
pub fn simulate_with_stimulus(p: &SystemParams, stim: &UltrasoundStimulus) -> Result<Trajectory> {
    p.validate()?;
    stim.validate(p.sample_rate())?;
    if stim.amplitude == 0.0 {
        integrate(p, State::default(), None)
    } else {
        integrate(p, State::default(), Some(stim))
    }
}

/// Steady displacement amplitude of the uncoupled mechanical mode under a
/// force of amplitude `force` at `frequency`.
pub fn mechanical_response(p: &SystemParams, force: f64, frequency: f64) -> f64 {
    let w = 2.0 * PI * frequency;
    let wm = p.omega_m;
    force * wm / ((wm * wm - w * w).powi(2) + (p.gamma_m * w).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrMeasurement {
    /// Linear SNR; noise-only input gives about 1.
    pub snr: f64,
    /// Integrated power in the signal bins.
    pub signal_power: f64,
    /// Median PSD of the noise bins.
    pub noise_psd: f64,
    /// Width of the signal bins (Hz).
    pub signal_bandwidth: f64,
    /// Largest PSD inside the signal bins (dB).
    pub peak_db: f64,
    /// Median noise PSD (dB).
    pub floor_db: f64,
}

/// Power within `halfwidth` of `f_u` over the median noise density times
/// the same bandwidth. Bins within `halfwidth` of `f_u` or of any entry in
/// `excluded_lines` are left out of the noise estimate.
pub fn response_snr(
    spec: &Spectrum,
    f_u: f64,
    halfwidth: f64,
    noise_band: (f64, f64),
    excluded_lines: &[f64],
) -> Result<SnrMeasurement> {
    let f_max = spec.freqs.last().copied().unwrap_or(0.0);
    if !(f_u > 0.0 && f_u <= f_max) {
        return Err(Error::precondition("f_u", "outside the spectrum range"));
    }
    if !(halfwidth >= 0.0) {
        return Err(Error::precondition("halfwidth", "must be >= 0"));
    }
    let df = spec.df();
    let signal: Vec<usize> = (0..spec.len())
        .filter(|&k| (spec.freqs[k] - f_u).abs() <= halfwidth + 1e-9 * df)
        .collect();
    let signal = if signal.is_empty() {
        vec![spec.bin_of(f_u)]
    } else {
        signal
    };
    let near = |f: f64, centre: f64| (f - centre).abs() <= halfwidth + 1e-9 * df;
    let noise: Vec<f64> = (0..spec.len())
        .filter(|&k| {
            let f = spec.freqs[k];
            f >= noise_band.0
                && f <= noise_band.1
                && !near(f, f_u)
                && !excluded_lines.iter().any(|&l| near(f, l))
        })
        .map(|k| spec.psd[k])
        .collect();
    if noise.is_empty() {
        return Err(Error::InsufficientData(
            "noise band is empty after exclusions".into(),
        ));
    }
    let signal_power: f64 = signal.iter().map(|&k| spec.psd[k] * df).sum();
    let signal_bandwidth = signal.len() as f64 * df;
    let noise_psd = median(&noise);
    let snr = if noise_psd > 0.0 {
        signal_power / (noise_psd * signal_bandwidth)
    } else if signal_power > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let peak = signal.iter().map(|&k| spec.psd[k]).fold(0.0, f64::max);
    Ok(SnrMeasurement {
        snr,
        signal_power,
        noise_psd,
        signal_bandwidth,
        peak_db: to_db(peak),
        floor_db: to_db(noise_psd),
    })
}

/// Noise-equivalent power `P_u / (SNR sqrt(B))` in W/sqrt(Hz).
pub fn nep(power: f64, snr: f64, bandwidth: f64) -> Result<f64> {
    ensure_finite("power", power)?;
    ensure_finite("snr", snr)?;
    ensure_finite("bandwidth", bandwidth)?;
    if snr == 0.0 {
        return Err(Error::precondition("snr", "signal not detected (SNR = 0)"));
    }
    if !(snr > 0.0 && bandwidth > 0.0 && power > 0.0) {
        return Err(Error::precondition(
            "snr",
            "power, SNR and bandwidth must be > 0",
        ));
    }
    Ok(power / snr / bandwidth.sqrt())
}

/// Spectral geometry of the response measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrConfig {
    /// Observable whose spectrum is inspected.
    #[serde(default = "default_column")]
    pub column: Column,
    /// Signal half-width in spectral bins.
    #[serde(default = "default_signal_bins")]
    pub signal_bins: usize,
    /// Noise band half-width in spectral bins around `f_u`.
    #[serde(default = "default_noise_bins")]
    pub noise_bins: usize,
    /// SNR of the reference sensor being compared against (linear).
    #[serde(default = "default_reference")]
    pub reference_snr: f64,
}

fn default_column() -> Column {
    Column::Intensity
}

fn default_signal_bins() -> usize {
    3
}

fn default_noise_bins() -> usize {
    40
}

fn default_reference() -> f64 {
    10.0
}

impl Default for SnrConfig {
    fn default() -> Self {
        Self {
            column: default_column(),
            signal_bins: default_signal_bins(),
            noise_bins: default_noise_bins(),
            reference_snr: default_reference(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingReport {
    pub name: String,
    pub regime: RegimeLabel,
    pub chaotic_fraction: f64,
    pub frequency: f64,
    pub peak_db: f64,
    pub floor_db: f64,
    pub snr: f64,
    pub snr_db: f64,
    /// SNR relative to the reference sensor (dB).
    pub enhancement_db: f64,
    /// W/sqrt(Hz); absent when no signal was detected.
    pub nep: Option<f64>,
    /// Resolution bandwidth (Hz).
    pub bandwidth: f64,
}

/// Outcome for one configuration of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ComparisonEntry {
    Ok(SensingReport),
    Failed { name: String, error: String },
}

/// Stimulated run of one configuration, tagged by the regime of its
/// unstimulated baseline.
pub fn sense(
    name: &str,
    p: &SystemParams,
    stim: &UltrasoundStimulus,
    analysis: &AnalysisConfig,
    snr_cfg: &SnrConfig,
) -> Result<SensingReport> {
    let baseline = integrate(p, State::default(), None)?;
    let regime = regime_classify(&baseline, analysis, None)?.regime;
    let traj = simulate_with_stimulus(p, stim)?;
    let spec = analysis.spectrum(&traj.column(snr_cfg.column))?;
    let df = spec.df();
    let halfwidth = snr_cfg.signal_bins as f64 * df;
    let band = (
        (stim.frequency - snr_cfg.noise_bins as f64 * df).max(df),
        stim.frequency + snr_cfg.noise_bins as f64 * df,
    );
    let m = response_snr(&spec, stim.frequency, halfwidth, band, &[])?;
    let snr_db = 10.0 * m.snr.log10();
    Ok(SensingReport {
        name: name.to_string(),
        regime: regime.label,
        chaotic_fraction: regime.evidence.chaotic_fraction,
        frequency: stim.frequency,
        peak_db: m.peak_db,
        floor_db: m.floor_db,
        snr: m.snr,
        snr_db,
        enhancement_db: snr_db - 10.0 * snr_cfg.reference_snr.log10(),
        nep: nep(stim.power, m.snr, spec.resolution_bandwidth).ok(),
        bandwidth: spec.resolution_bandwidth,
    })
}

/// Runs [`sense`] on each named configuration in parallel; results keep
/// the input order and failures are recorded per entry.
pub fn regime_comparison(
    configs: &[(String, SystemParams)],
    stim: &UltrasoundStimulus,
    analysis: &AnalysisConfig,
    snr_cfg: &SnrConfig,
) -> Result<Vec<ComparisonEntry>> {
    if configs.len() < 2 {
        return Err(Error::precondition(
            "configs",
            "at least two configurations are needed for a comparison",
        ));
    }
    Ok(configs
        .par_iter()
        .map(|(name, p)| match sense(name, p, stim, analysis, snr_cfg) {
            Ok(r) => ComparisonEntry::Ok(r),
            Err(e) => ComparisonEntry::Failed {
                name: name.clone(),
                error: e.to_string(),
            },
        })
        .collect())
}

/// Successful reports ordered by decreasing SNR.
pub fn ranking(entries: &[ComparisonEntry]) -> Vec<&SensingReport> {
    let mut ok: Vec<&SensingReport> = entries
        .iter()
        .filter_map(|e| match e {
            ComparisonEntry::Ok(r) => Some(r),
            ComparisonEntry::Failed { .. } => None,
        })
        .collect();
    ok.sort_by(|a, b| b.snr.total_cmp(&a.snr));
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::TimeSeries;
    use crate::spectral::{welch_psd, Taper};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn nep_reference_value() {
        assert_eq!(nep(1e-6, 100.0, 100.0).unwrap(), 1e-9);
        assert_eq!(nep(3e-3, 1.0, 1.0).unwrap(), 3e-3);
        assert_eq!(
            nep(1e-6, 5.0, 400.0).unwrap() * 2.0,
            nep(1e-6, 5.0, 100.0).unwrap()
        );
        assert!(nep(1e-6, 0.0, 1.0).is_err());
        assert!(nep(1e-6, 1.0, 0.0).is_err());
    }

    fn tone_in_noise(amplitude: f64, seed: u64) -> Spectrum {
        let fs = 10_000.0;
        let f0 = 1_250.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        let values = (0..400_000)
            .map(|i| amplitude * (2.0 * PI * f0 * i as f64 / fs).sin() + d.sample(&mut rng))
            .collect();
        welch_psd(
            &TimeSeries::new(0.0, fs, values).unwrap(),
            1024,
            0.5,
            Taper::Hann,
        )
        .unwrap()
    }

    #[test]
    fn snr_matches_closed_form() {
        let a = 0.5;
        let spec = tone_in_noise(a, 3);
        let hw = 3.0 * spec.df();
        let m = response_snr(&spec, 1_250.0, hw, (800.0, 1_700.0), &[]).unwrap();
        // Unit-variance white noise has one-sided density 2 / fs.
        let noise = 2.0 / spec.fs * m.signal_bandwidth;
        let expected = (0.5 * a * a + noise) / noise;
        let err_db = 10.0 * (m.snr / expected).log10();
        assert!(err_db.abs() < 1.0, "{err_db}");
    }

    #[test]
    fn snr_quadratic_in_amplitude() {
        let s1 = tone_in_noise(0.5, 4);
        let s2 = tone_in_noise(1.0, 4);
        let hw = 3.0 * s1.df();
        let m1 = response_snr(&s1, 1_250.0, hw, (800.0, 1_700.0), &[]).unwrap();
        let m2 = response_snr(&s2, 1_250.0, hw, (800.0, 1_700.0), &[]).unwrap();
        let gain = 10.0 * (m2.snr / m1.snr).log10();
        assert!((gain - 6.0).abs() < 0.5, "{gain}");
    }

    #[test]
    fn noise_only_snr_is_near_one() {
        let spec = tone_in_noise(0.0, 5);
        let hw = 3.0 * spec.df();
        let m = response_snr(&spec, 1_250.0, hw, (800.0, 1_700.0), &[]).unwrap();
        assert!((m.snr - 1.0).abs() < 0.3, "{}", m.snr);
    }

    #[test]
    fn empty_noise_band_rejected() {
        let spec = tone_in_noise(0.0, 6);
        let hw = 3.0 * spec.df();
        assert!(response_snr(&spec, 1_250.0, hw, (1_249.0, 1_251.0), &[]).is_err());
        assert!(response_snr(&spec, 1_250.0, hw, (800.0, 1_700.0), &[1_000.0]).is_ok());
        assert!(response_snr(&spec, 9_000.0, hw, (800.0, 1_700.0), &[]).is_err());
    }

    fn oscillator() -> SystemParams {
        SystemParams {
            delta: 0.0,
            kappa: 0.8,
            kappa_ex: 0.4,
            omega_m: 1.0,
            gamma_m: 0.02,
            g0: 0.0,
            drive_amplitude: 0.0,
            noise_sigma: 0.0,
            dt: 0.05,
            t_transient: 2000.0,
            t_record: 400.0,
            decimation: 1,
            seed: 0,
        }
    }

    #[test]
    fn linear_response_of_mechanical_mode() {
        let p = oscillator();
        let f = 0.3 / (2.0 * PI);
        let stim = UltrasoundStimulus {
            frequency: f,
            amplitude: 1e-3,
            ..UltrasoundStimulus::default()
        };
        let traj = simulate_with_stimulus(&p, &stim).unwrap();
        let x = traj.column(Column::X).values;
        let amp = 0.5
            * (x.iter().cloned().fold(f64::MIN, f64::max)
                - x.iter().cloned().fold(f64::MAX, f64::min));
        let expected = mechanical_response(&p, 1e-3, f);
        assert!((amp / expected - 1.0).abs() < 0.02, "{amp} vs {expected}");
    }

    #[test]
    fn null_stimulus_is_bit_identical() {
        let p = SystemParams {
            noise_sigma: 0.1,
            seed: 9,
            t_transient: 10.0,
            t_record: 50.0,
            ..oscillator()
        };
        let stim = UltrasoundStimulus {
            frequency: 0.1,
            ..UltrasoundStimulus::default()
        };
        let a = simulate_with_stimulus(&p, &stim).unwrap();
        let b = integrate(&p, State::default(), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stimulus_validation() {
        let bad = UltrasoundStimulus {
            frequency: 100.0,
            ..UltrasoundStimulus::default()
        };
        assert!(bad.validate(100.0).is_err());
        let bad = UltrasoundStimulus {
            amplitude: -1.0,
            ..UltrasoundStimulus::default()
        };
        assert!(bad.validate(1e7).is_err());
    }

    #[test]
    fn drive_modulation_scales_drive() {
        let stim = UltrasoundStimulus {
            frequency: 1.0,
            amplitude: 0.5,
            coupling: Coupling::DriveModulation,
            ..UltrasoundStimulus::default()
        };
        assert_eq!(stim.force(0.25), 0.0);
        assert!((stim.drive_scale(0.25) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn comparison_needs_two_configs() {
        let analysis =
            AnalysisConfig::new(crate::segmentation::SegmentationConfig::for_window(1.0));
        let r = regime_comparison(
            &[("one".into(), oscillator())],
            &UltrasoundStimulus::default(),
            &analysis,
            &SnrConfig::default(),
        );
        assert!(r.is_err());
    }
}
