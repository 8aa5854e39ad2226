//! Windowed periodic/chaotic classification and epoch segmentation.
//!
//! Each analysis window yields three scale-free features:
//!
//! * spectral flatness of a short Welch estimate inside the window;
//! * the 0–1 test statistic `K` of the window's Poincaré section;
//! * the period return error of the section: the smallest RMS difference
//!   `p[k + l] - p[k]` over lags `l = 1..=8`, in units of the window's
//!   standard deviation. Periodic orbits with up to eight section points
//!   per cycle return to themselves and score near zero.
//!
//! The Poincaré section is the sequence of local maxima of the window,
//! refined by parabolic interpolation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{mean, median, quantile, variance, TimeSeries};
use crate::spectral::{flatness, welch_slice, Taper};

/// Largest section lag tried by the return-error feature.
pub const MAX_RETURN_LAG: usize = 8;

/// Result of the Gottwald–Melbourne 0–1 test.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroOneResult {
    /// Median of the per-frequency statistics, clamped to [0, 1].
    pub k: f64,
    /// Raw correlation coefficient for each sampled frequency `c`.
    pub per_phase: Vec<f64>,
}

/// Frequencies `c` drawn uniformly from `(pi/5, 4pi/5)`.
pub fn zero_one_phases(n_phases: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_phases)
        .map(|_| rng.random_range(PI / 5.0..4.0 * PI / 5.0))
        .collect()
}

/// 0–1 test for chaos on a scalar observable.
///
/// The observable is mean-subtracted, translation variables
/// `p(n) = sum phi(j) cos(jc)`, `q(n) = sum phi(j) sin(jc)` are formed and
/// `K_c` is the correlation between `n` and the mean-square displacement
/// `M_c(n)` for `n = 1..=N/10`. Removing the mean cancels the bounded
/// oscillatory term of `M_c`, so no further correction is applied.
pub fn zero_one_test(series: &[f64], phases: &[f64]) -> ZeroOneResult {
    let n = series.len();
    let ncut = n / 10;
    let m = mean(series);
    let spread = variance(series).sqrt();
    if ncut < 3 || phases.is_empty() || !(spread > 1e-12 * (m.abs() + f64::MIN_POSITIVE)) {
        return ZeroOneResult {
            k: 0.0,
            per_phase: vec![0.0; phases.len()],
        };
    }
    let phi: Vec<f64> = series.iter().map(|v| v - m).collect();
    let lags: Vec<f64> = (1..=ncut).map(|l| l as f64).collect();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut msd = vec![0.0; ncut];
    let per_phase: Vec<f64> = phases
        .iter()
        .map(|&c| {
            let (mut sp, mut sq) = (0.0, 0.0);
            for (j, &f) in phi.iter().enumerate() {
                let arg = (j + 1) as f64 * c;
                sp += f * arg.cos();
                sq += f * arg.sin();
                p[j] = sp;
                q[j] = sq;
            }
            for (idx, slot) in msd.iter_mut().enumerate() {
                let lag = idx + 1;
                let mut acc = 0.0;
                for j in 0..n - lag {
                    let dp = p[j + lag] - p[j];
                    let dq = q[j + lag] - q[j];
                    acc += dp * dp + dq * dq;
                }
                *slot = acc / (n - lag) as f64;
            }
            correlation(&lags, &msd)
        })
        .collect();
    ZeroOneResult {
        k: median(&per_phase).clamp(0.0, 1.0),
        per_phase,
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Local maxima of `values`, refined by a three-point parabola.
pub fn poincare_section(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..values.len().saturating_sub(1) {
        let (l, c, r) = (values[i - 1], values[i], values[i + 1]);
        if c > l && c >= r {
            let curvature = l - 2.0 * c + r;
            let refined = if curvature < 0.0 {
                c - (r - l) * (r - l) / (8.0 * curvature)
            } else {
                c
            };
            out.push(refined);
        }
    }
    out
}

/// Smallest RMS section return difference over lags `1..=MAX_RETURN_LAG`,
/// divided by `scale`.
pub fn period_return_error(section: &[f64], scale: f64) -> f64 {
    if section.len() < 2 || !(scale > 0.0) {
        return 0.0;
    }
    (1..=MAX_RETURN_LAG.min(section.len() - 1))
        .map(|lag| {
            let n = section.len() - lag;
            let ss: f64 = (0..n)
                .map(|k| {
                    let d = section[k + lag] - section[k];
                    d * d
                })
                .sum();
            (ss / n as f64).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
        / scale
}

/// Features of one analysis window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowFeatures {
    /// Window start time (s).
    pub start: f64,
    pub spectral_flatness: f64,
    pub zero_one_k: f64,
    pub period_return_error: f64,
}

/// Knobs of the feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Number of random frequencies for the 0–1 test.
    pub n_phases: usize,
    pub phase_seed: u64,
    /// Welch sub-segments per window for the flatness estimate.
    pub flatness_segments: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_phases: 64,
            phase_seed: 0x01_7e57,
            flatness_segments: 4,
        }
    }
}

/// Frequency of the strongest non-DC line, if it stands 10 dB above the
/// median spectral level.
pub fn dominant_frequency(ts: &TimeSeries) -> Option<f64> {
    let nfft = ts.len().min(8192);
    if nfft < 16 {
        return None;
    }
    let m = mean(&ts.values);
    let centred: Vec<f64> = ts.values.iter().map(|v| v - m).collect();
    let spec = welch_slice(&centred, ts.fs, nfft, 0.5, Taper::Hann).ok()?;
    // Bin 1 still carries taper leakage from any slow trend.
    let k = spec.peak_bin(2);
    let level = median(&spec.psd[2..]);
    (spec.psd[k] > 10.0 * level).then(|| spec.freqs[k])
}

fn window_samples(ts: &TimeSeries, window: f64, hop: f64) -> Result<(usize, usize)> {
    if !(window > 0.0 && hop > 0.0) {
        return Err(Error::precondition("window", "window and hop must be > 0"));
    }
    if hop > 0.5 * window * (1.0 + 1e-9) {
        return Err(Error::precondition("hop", "must not exceed window / 2"));
    }
    let w = (window * ts.fs).round() as usize;
    let h = ((hop * ts.fs).round() as usize).max(1);
    if w > ts.len() {
        return Err(Error::InsufficientData(format!(
            "window of {w} samples exceeds series length {}",
            ts.len()
        )));
    }
    if w < 16 {
        return Err(Error::precondition(
            "window",
            "must span at least 16 samples",
        ));
    }
    Ok((w, h))
}

/// Computes features for windows of `window` seconds every `hop` seconds.
pub fn window_features(
    ts: &TimeSeries,
    window: f64,
    hop: f64,
    cfg: &FeatureConfig,
) -> Result<Vec<WindowFeatures>> {
    let (w, h) = window_samples(ts, window, hop)?;
    if let Some(f) = dominant_frequency(ts) {
        if window * f < 20.0 * (1.0 - 1e-6) {
            return Err(Error::precondition(
                "window",
                format!(
                    "{:.1} periods of the dominant {f:.4e} Hz line; at least 20 required",
                    window * f
                ),
            ));
        }
    }
    let phases = zero_one_phases(cfg.n_phases, cfg.phase_seed);
    let nfft = (w / cfg.flatness_segments.max(1)).max(8);
    let count = 1 + (ts.len() - w) / h;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let start = i * h;
            let values = &ts.values[start..start + w];
            let spec = welch_slice(values, ts.fs, nfft, 0.5, Taper::Hann)?;
            let section = poincare_section(values);
            let scale = variance(values).sqrt();
            Ok(WindowFeatures {
                start: ts.time(start),
                spectral_flatness: flatness(&spec.psd[1..]),
                zero_one_k: zero_one_test(&section, &phases).k,
                period_return_error: period_return_error(&section, scale),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Periodic,
    Chaotic,
}

/// Thresholds and weights of the three-feature vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub flatness_threshold: f64,
    pub k_threshold: f64,
    /// Return-error threshold, three times the baseline measured on the
    /// shipped periodic configuration.
    pub return_threshold: f64,
    /// Weights of the (flatness, K, return error) votes.
    pub weights: [f64; 3],
    /// Consecutive agreeing windows needed to switch label.
    pub hysteresis: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            flatness_threshold: 0.2,
            k_threshold: 0.5,
            return_threshold: 0.0024,
            weights: [1.0, 1.0, 1.0],
            hysteresis: 2,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flatness_threshold) {
            return Err(Error::precondition(
                "flatness_threshold",
                "must lie in [0, 1]",
            ));
        }
        if !(0.0..=1.0).contains(&self.k_threshold) {
            return Err(Error::precondition("k_threshold", "must lie in [0, 1]"));
        }
        if !(self.return_threshold >= 0.0) {
            return Err(Error::precondition("return_threshold", "must be >= 0"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::precondition(
                "weights",
                "must be non-negative, not all zero",
            ));
        }
        if self.hysteresis == 0 {
            return Err(Error::precondition("hysteresis", "must be >= 1"));
        }
        Ok(())
    }

    /// Sets the return threshold to three times the median return error of
    /// windows taken from a known periodic record.
    pub fn calibrate_return_threshold(&mut self, periodic_baseline: &[WindowFeatures]) {
        let errors: Vec<f64> = periodic_baseline
            .iter()
            .map(|f| f.period_return_error)
            .collect();
        if !errors.is_empty() {
            self.return_threshold = 3.0 * median(&errors);
        }
    }

    fn vote(&self, f: &WindowFeatures) -> Label {
        let ballots = [
            f.spectral_flatness > self.flatness_threshold,
            f.zero_one_k > self.k_threshold,
            f.period_return_error > self.return_threshold,
        ];
        let total: f64 = self.weights.iter().sum();
        let yes: f64 = ballots
            .iter()
            .zip(&self.weights)
            .filter(|(b, _)| **b)
            .map(|(_, w)| w)
            .sum();
        if yes > 0.5 * total {
            Label::Chaotic
        } else {
            Label::Periodic
        }
    }
}

/// Per-window labels from the weighted vote, with hysteresis: a switch
/// happens only where the next `hysteresis` raw votes all agree.
pub fn classify(features: &[WindowFeatures], cfg: &ClassifierConfig) -> Result<Vec<Label>> {
    cfg.validate()?;
    let raw: Vec<Label> = features.iter().map(|f| cfg.vote(f)).collect();
    let mut out = Vec::with_capacity(raw.len());
    let Some(&first) = raw.first() else {
        return Ok(out);
    };
    let m = cfg.hysteresis;
    let mut current = first;
    for i in 0..raw.len() {
        if raw[i] != current {
            let end = i + m;
            if end <= raw.len() && raw[i..end].iter().all(|&l| l == raw[i]) {
                current = raw[i];
            }
        }
        out.push(current);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub label: Label,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Labelled epochs tiling a record plus the chaotic time fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segments: Vec<Segment>,
    pub chaotic_fraction: f64,
    pub window: f64,
    pub hop: f64,
    pub min_epoch: f64,
    pub thresholds: ClassifierConfig,
}

impl SegmentReport {
    pub fn chaotic_epochs(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| s.label == Label::Chaotic)
            .count()
    }

    pub fn start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.start)
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    /// Label at time `t`, if inside the record.
    pub fn label_at(&self, t: f64) -> Option<Label> {
        self.segments
            .iter()
            .find(|s| t >= s.start && t < s.end)
            .map(|s| s.label)
    }
}

/// Merges per-window labels into epochs.
///
/// Window `i` covers `[t0 + i hop, t0 + i hop + window)` and is credited
/// with the hop-wide slot at its centre; the first and last slots extend to
/// the record edges. Epochs shorter than `min_epoch` are flipped into their
/// neighbours, shortest first.
pub fn segments_from_labels(
    labels: &[Label],
    t0: f64,
    t_end: f64,
    window: f64,
    hop: f64,
    min_epoch: f64,
) -> Result<Vec<Segment>> {
    if labels.is_empty() {
        return Err(Error::InsufficientData("empty label sequence".into()));
    }
    if min_epoch < hop * (1.0 - 1e-9) {
        return Err(Error::precondition("min_epoch", "must be >= hop"));
    }
    let n = labels.len();
    let boundary = |i: usize| -> f64 {
        if i == 0 {
            t0
        } else if i == n {
            t_end
        } else {
            t0 + i as f64 * hop + 0.5 * (window - hop)
        }
    };

    // (label, first slot, one past last slot)
    let mut runs: Vec<(Label, usize, usize)> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match runs.last_mut() {
            Some(run) if run.0 == l => run.2 = i + 1,
            _ => runs.push((l, i, i + 1)),
        }
    }
    let duration = |r: &(Label, usize, usize)| boundary(r.2) - boundary(r.1);
    while runs.len() > 1 {
        let (idx, shortest) = runs
            .iter()
            .enumerate()
            .map(|(i, r)| (i, duration(r)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if shortest >= min_epoch {
            break;
        }
        let flipped = match runs[idx].0 {
            Label::Periodic => Label::Chaotic,
            Label::Chaotic => Label::Periodic,
        };
        runs[idx].0 = flipped;
        let mut merged: Vec<(Label, usize, usize)> = Vec::with_capacity(runs.len());
        for r in runs {
            match merged.last_mut() {
                Some(last) if last.0 == r.0 => last.2 = r.2,
                _ => merged.push(r),
            }
        }
        runs = merged;
    }
    Ok(runs
        .iter()
        .map(|&(label, a, b)| Segment {
            start: boundary(a),
            end: boundary(b),
            label,
        })
        .collect())
}

fn fraction_of(segments: &[Segment]) -> f64 {
    let total = segments
        .iter()
        .map(Segment::duration)
        .fold(0.0, |a, b| a + b);
    let chaotic = segments
        .iter()
        .filter(|s| s.label == Label::Chaotic)
        .map(Segment::duration)
        .fold(0.0, |a, b| a + b);
    if total > 0.0 {
        chaotic / total
    } else {
        0.0
    }
}

/// Window geometry and classifier settings of the full pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Analysis window (s).
    pub window: f64,
    /// Window hop (s).
    pub hop: f64,
    /// Shortest kept epoch (s); defaults to three windows.
    #[serde(default)]
    pub min_epoch: Option<f64>,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub features: FeatureConfig,
}

impl SegmentationConfig {
    /// Half-window hop and a three-window minimum epoch.
    pub fn for_window(window: f64) -> Self {
        Self {
            window,
            hop: 0.5 * window,
            min_epoch: None,
            classifier: ClassifierConfig::default(),
            features: FeatureConfig::default(),
        }
    }

    pub fn min_epoch(&self) -> f64 {
        self.min_epoch.unwrap_or(3.0 * self.window)
    }
}

/// Features, labels and epochs of a whole series.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub features: Vec<WindowFeatures>,
    pub labels: Vec<Label>,
    pub report: SegmentReport,
}

pub fn segment_series(ts: &TimeSeries, cfg: &SegmentationConfig) -> Result<Segmentation> {
    let features = window_features(ts, cfg.window, cfg.hop, &cfg.features)?;
    let labels = classify(&features, &cfg.classifier)?;
    let t_end = ts.t0 + ts.duration();
    let segments =
        segments_from_labels(&labels, ts.t0, t_end, cfg.window, cfg.hop, cfg.min_epoch())?;
    let report = SegmentReport {
        chaotic_fraction: fraction_of(&segments),
        segments,
        window: cfg.window,
        hop: cfg.hop,
        min_epoch: cfg.min_epoch(),
        thresholds: cfg.classifier.clone(),
    };
    Ok(Segmentation {
        features,
        labels,
        report,
    })
}

/// Builds a report directly from labels (for externally labelled data).
pub fn report_from_labels(
    labels: &[Label],
    t0: f64,
    t_end: f64,
    cfg: &SegmentationConfig,
) -> Result<SegmentReport> {
    let segments = segments_from_labels(labels, t0, t_end, cfg.window, cfg.hop, cfg.min_epoch())?;
    Ok(SegmentReport {
        chaotic_fraction: fraction_of(&segments),
        segments,
        window: cfg.window,
        hop: cfg.hop,
        min_epoch: cfg.min_epoch(),
        thresholds: cfg.classifier.clone(),
    })
}

/// Gate parameters recovered from a segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutyCycleEstimate {
    pub duty: f64,
    /// Half-width of the 95% bootstrap interval of `duty`.
    pub duty_halfwidth: f64,
    /// Median spacing of chaotic onsets; `None` when undefined.
    pub period: Option<f64>,
    pub period_halfwidth: Option<f64>,
    pub chaotic_epochs: usize,
    /// Set when the whole record is chaotic and no period exists.
    pub fully_chaotic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DutyCycleFit {
    Estimate(DutyCycleEstimate),
    InsufficientEpochs { chaotic_epochs: usize },
}

const BOOTSTRAP_RESAMPLES: usize = 1000;
const BOOTSTRAP_SEED: u64 = 0xb007;

/// Estimates `D` as the chaotic fraction and `Ts` as the median spacing of
/// chaotic onsets, with bootstrap half-widths over gate cycles.
pub fn fit_duty_cycle(report: &SegmentReport) -> DutyCycleFit {
    let epochs = report.chaotic_epochs();
    if report.chaotic_fraction >= 1.0 {
        return DutyCycleFit::Estimate(DutyCycleEstimate {
            duty: 1.0,
            duty_halfwidth: 0.0,
            period: None,
            period_halfwidth: None,
            chaotic_epochs: epochs,
            fully_chaotic: true,
        });
    }
    if epochs < 3 {
        return DutyCycleFit::InsufficientEpochs {
            chaotic_epochs: epochs,
        };
    }
    let t0 = report.start();
    let onsets: Vec<f64> = report
        .segments
        .iter()
        .filter(|s| s.label == Label::Chaotic && s.start > t0)
        .map(|s| s.start)
        .collect();
    let spacings: Vec<f64> = onsets.windows(2).map(|w| w[1] - w[0]).collect();
    // Chaotic time inside each complete onset-to-onset cycle.
    let cycles: Vec<(f64, f64)> = onsets
        .windows(2)
        .map(|w| {
            let chaotic: f64 = report
                .segments
                .iter()
                .filter(|s| s.label == Label::Chaotic)
                .map(|s| (s.end.min(w[1]) - s.start.max(w[0])).max(0.0))
                .sum();
            (chaotic, w[1] - w[0])
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut duty_draws = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut period_draws = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    if !cycles.is_empty() {
        for _ in 0..BOOTSTRAP_RESAMPLES {
            let mut chaotic = 0.0;
            let mut total = 0.0;
            let mut resampled = Vec::with_capacity(spacings.len());
            for _ in 0..cycles.len() {
                let k = rng.random_range(0..cycles.len());
                chaotic += cycles[k].0;
                total += cycles[k].1;
                resampled.push(spacings[k]);
            }
            duty_draws.push(chaotic / total);
            period_draws.push(median(&resampled));
        }
    }
    let halfwidth = |draws: &[f64]| {
        if draws.is_empty() {
            0.0
        } else {
            0.5 * (quantile(draws, 0.975) - quantile(draws, 0.025))
        }
    };
    let period = (!spacings.is_empty()).then(|| median(&spacings));
    DutyCycleFit::Estimate(DutyCycleEstimate {
        duty: report.chaotic_fraction,
        duty_halfwidth: halfwidth(&duty_draws),
        period,
        period_halfwidth: period.map(|_| halfwidth(&period_draws)),
        chaotic_epochs: epochs,
        fully_chaotic: false,
    })
}
