//! Ground-truth intermittent signals built by square-wave gating of a
//! periodic and a chaotic source.
//!
//! The gate `s(t)` is 1 on a window of length `T0 = D * Ts` centred on each
//! multiple of `Ts` and 0 elsewhere. A gate value of 1 selects the chaotic
//! source, so the duty cycle `D` is the fraction of time spent chaotic:
//! `x_I = x_C * s + x_P * (1 - s)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::series::{mean, TimeSeries};

/// Square-wave gate parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatingSpec {
    /// Cycle period `Ts` (s).
    pub period: f64,
    /// Duty cycle `D = T0 / Ts`.
    pub duty: f64,
    /// Time offset of the gate centre (s).
    #[serde(default)]
    pub phase: f64,
}

impl GatingSpec {
    pub fn new(period: f64, duty: f64) -> Result<Self> {
        let spec = Self {
            period,
            duty,
            phase: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    /// Gated (chaotic) duration per cycle, `T0 = D * Ts`.
    pub fn gated_duration(&self) -> f64 {
        self.duty * self.period
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("period", self.period)?;
        ensure_finite("duty", self.duty)?;
        ensure_finite("phase", self.phase)?;
        if self.period <= 0.0 {
            return Err(Error::precondition("period", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.duty) {
            return Err(Error::precondition("duty", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Gate value at time `t`: `true` inside the chaotic window.
///
/// The window is half-open, `-T0/2 <= tau < T0/2` with `tau` the time since
/// the nearest gate centre, so sampled gates integrate to exactly `D`.
pub fn square_wave(t: f64, spec: &GatingSpec) -> bool {
    if spec.duty <= 0.0 {
        return false;
    }
    if spec.duty >= 1.0 {
        return true;
    }
    let tau = (t - spec.phase).rem_euclid(spec.period);
    let half = 0.5 * spec.gated_duration();
    tau < half || tau >= spec.period - half
}

/// Periodic and chaotic sources on a common sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePair {
    pub periodic: TimeSeries,
    pub chaotic: TimeSeries,
}

impl SourcePair {
    pub fn new(periodic: TimeSeries, chaotic: TimeSeries) -> Result<Self> {
        if periodic.fs != chaotic.fs {
            return Err(Error::precondition(
                "sources",
                format!("sampling rates differ: {} vs {}", periodic.fs, chaotic.fs),
            ));
        }
        for (name, s) in [("periodic", &periodic), ("chaotic", &chaotic)] {
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    field: name.to_string(),
                });
            }
        }
        Ok(Self { periodic, chaotic })
    }

    /// Both sources standardised to zero mean and unit RMS before pairing.
    pub fn rms_matched(periodic: TimeSeries, chaotic: TimeSeries) -> Result<Self> {
        Self::new(standardize(periodic), standardize(chaotic))
    }
}

fn standardize(mut s: TimeSeries) -> TimeSeries {
    let m = mean(&s.values);
    let rms =
        (s.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / s.len().max(1) as f64).sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    for v in &mut s.values {
        *v = (*v - m) * scale;
    }
    s
}

/// Gated mixture plus its per-sample ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedSignal {
    pub series: TimeSeries,
    /// `true` where the chaotic source is selected.
    pub labels: Vec<bool>,
    pub spec: GatingSpec,
}

impl SynthesizedSignal {
    pub fn chaotic_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&l| l).count() as f64 / self.labels.len().max(1) as f64
    }
}

/// Builds `x_I = x_C * s + x_P * (1 - s)` over `duration` seconds.
pub fn synthesize_intermittent(
    sources: &SourcePair,
    spec: &GatingSpec,
    duration: f64,
    fs: f64,
) -> Result<SynthesizedSignal> {
    spec.validate()?;
    if sources.periodic.fs != fs || sources.chaotic.fs != fs {
        return Err(Error::precondition(
            "fs",
            format!(
                "sources are sampled at {} Hz, requested {fs}",
                sources.periodic.fs
            ),
        ));
    }
    if duration < 3.0 * spec.period {
        return Err(Error::precondition(
            "duration",
            "must cover at least 3 gate periods",
        ));
    }
    if fs * spec.period < 100.0 {
        return Err(Error::precondition(
            "fs",
            "need at least 100 samples per gate period",
        ));
    }
    let n = (duration * fs).round() as usize;
    if sources.periodic.len() < n || sources.chaotic.len() < n {
        return Err(Error::InsufficientData(format!(
            "sources hold {} / {} samples, {n} required",
            sources.periodic.len(),
            sources.chaotic.len()
        )));
    }
    let t0 = sources.periodic.t0;
    let mut values = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let gate = square_wave(t0 + i as f64 / fs, spec);
        labels.push(gate);
        values.push(if gate {
            sources.chaotic.values[i]
        } else {
            sources.periodic.values[i]
        });
    }
    Ok(SynthesizedSignal {
        series: TimeSeries { t0, fs, values },
        labels,
        spec: *spec,
    })
}

/// Length of each logistic run in the fixture's chaotic source. Long
/// floating-point orbits of the map eventually fall onto short cycles, so
/// the source restarts from a fresh seed-derived point after each run.
pub const LOGISTIC_BLOCK: usize = 1 << 16;

/// Reference fixture pair: a noisy harmonic waveform and a logistic
/// (`r = 4`) sequence, both standardised to unit RMS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub fs: f64,
    /// Fundamental of the periodic source (Hz).
    pub f0: f64,
    pub weights: Vec<f64>,
    /// RMS of white noise added to the periodic source before scaling.
    pub noise_rms: f64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            fs: 50_000.0,
            f0: 1_000.0,
            weights: vec![1.0, 0.3, 0.1],
            noise_rms: 1e-3,
            seed: 1,
        }
    }
}

impl FixtureConfig {
    pub fn sources(&self, duration: f64) -> Result<SourcePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut periodic = harmonic_series(
            self.f0,
            self.weights.len(),
            &self.weights,
            self.fs,
            duration,
        )?;
        let noise = Normal::new(0.0, self.noise_rms)
            .map_err(|e| Error::precondition("noise_rms", e.to_string()))?;
        for v in &mut periodic.values {
            *v += noise.sample(&mut rng);
        }
        let n = periodic.len().max(1);
        let mut values = Vec::with_capacity(n);
        while values.len() < n {
            let x0 = rng.random_range(0.05..0.95);
            let block = LOGISTIC_BLOCK.min(n - values.len());
            values.extend(logistic_series(4.0, x0, block)?);
        }
        let chaotic = TimeSeries::new(0.0, self.fs, values)?;
        SourcePair::rms_matched(periodic, chaotic)
    }

    /// Gate with a seed-derived phase in `[0, period)`.
    pub fn gate(&self, period: f64, duty: f64) -> Result<GatingSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9a7e);
        let phase = rng.random_range(0.0..1.0) * period;
        Ok(GatingSpec::new(period, duty)?.with_phase(phase))
    }

    pub fn intermittent(&self, period: f64, duty: f64, duration: f64) -> Result<SynthesizedSignal> {
        let sources = self.sources(duration)?;
        synthesize_intermittent(&sources, &self.gate(period, duty)?, duration, self.fs)
    }
}

/// Iterates the logistic map `x -> r x (1 - x)` starting from `x0`.
pub fn logistic_series(r: f64, x0: f64, n: usize) -> Result<Vec<f64>> {
    if !(r > 0.0 && r <= 4.0) {
        return Err(Error::precondition(
            "r",
            format!("must lie in (0, 4], got {r}"),
        ));
    }
    if !(x0 > 0.0 && x0 < 1.0) {
        return Err(Error::precondition(
            "x0",
            format!("must lie in (0, 1), got {x0}"),
        ));
    }
    if n == 0 {
        return Err(Error::precondition("n", "must be >= 1"));
    }
    let mut out = Vec::with_capacity(n);
    let mut x = x0;
    for _ in 0..n {
        out.push(x);
        x = r * x * (1.0 - x);
    }
    Ok(out)
}

/// Sum of sine harmonics `sum_k w_k sin(2 pi k f0 t)`, k = 1..=n_harmonics.
///
/// When `fs / f0` is an integer the phase is reduced with integer
/// arithmetic, so the output repeats bit-exactly every period.
pub fn harmonic_series(
    f0: f64,
    n_harmonics: usize,
    weights: &[f64],
    fs: f64,
    duration: f64,
) -> Result<TimeSeries> {
    if weights.len() != n_harmonics || n_harmonics == 0 {
        return Err(Error::precondition(
            "weights",
            format!("expected {n_harmonics} weights, got {}", weights.len()),
        ));
    }
    if !(f0 > 0.0 && fs > 0.0 && duration >= 0.0) {
        return Err(Error::precondition(
            "f0",
            "f0, fs must be > 0 and duration >= 0",
        ));
    }
    if f0 * n_harmonics as f64 >= 0.5 * fs {
        return Err(Error::precondition(
            "n_harmonics",
            "highest harmonic must lie below fs/2",
        ));
    }
    let n = (duration * fs).round() as usize;
    let ratio = fs / f0;
    let period = (ratio.round() - ratio).abs() < 1e-9 * ratio;
    let samples_per_period = ratio.round() as usize;
    let values = (0..n)
        .map(|i| {
            let cycles = if period {
                (i % samples_per_period) as f64 / samples_per_period as f64
            } else {
                f0 * i as f64 / fs
            };
            weights
                .iter()
                .enumerate()
                .map(|(k, w)| w * (2.0 * PI * (k + 1) as f64 * cycles).sin())
                .sum()
        })
        .collect();
    TimeSeries::new(0.0, fs, values)
}
