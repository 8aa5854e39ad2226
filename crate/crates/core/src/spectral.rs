//! Welch power spectral density and spectral-floor statistics.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{median, TimeSeries};

/// Segment taper applied before each FFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    /// Periodic Hann window.
    #[default]
    Hann,
    Rectangular,
}

impl Taper {
    pub fn name(self) -> &'static str {
        match self {
            Taper::Hann => "hann",
            Taper::Rectangular => "rectangular",
        }
    }

    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Taper::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Taper::Rectangular => vec![1.0; n],
        }
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Bin centres from 0 to fs/2 (Hz).
    pub freqs: Vec<f64>,
    /// Power per Hz, linear.
    pub psd: Vec<f64>,
    pub nfft: usize,
    pub overlap: f64,
    pub taper: Taper,
    pub fs: f64,
    pub segments: usize,
    /// Equivalent noise bandwidth of one bin (Hz).
    pub resolution_bandwidth: f64,
}

impl Spectrum {
    /// Bin spacing `fs / nfft`.
    pub fn df(&self) -> f64 {
        self.fs / self.nfft as f64
    }

    pub fn len(&self) -> usize {
        self.psd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psd.is_empty()
    }

    pub fn psd_db(&self) -> Vec<f64> {
        self.psd.iter().map(|&p| to_db(p)).collect()
    }

    /// Integrated power `sum psd * df`.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df()
    }

    /// Index of the bin nearest to `f`.
    pub fn bin_of(&self, f: f64) -> usize {
        ((f / self.df()).round().max(0.0) as usize).min(self.psd.len() - 1)
    }

    /// Index of the strongest bin at or above `min_bin`.
    pub fn peak_bin(&self, min_bin: usize) -> usize {
        (min_bin..self.psd.len())
            .max_by(|&a, &b| self.psd[a].total_cmp(&self.psd[b]))
            .unwrap_or(0)
    }

    /// Geometric over arithmetic mean of the non-DC bins.
    pub fn flatness(&self) -> f64 {
        flatness(&self.psd[1.min(self.psd.len())..])
    }
}

pub(crate) fn to_db(p: f64) -> f64 {
    10.0 * p.max(1e-300).log10()
}

pub(crate) fn flatness(bins: &[f64]) -> f64 {
    if bins.is_empty() {
        return 0.0;
    }
    let n = bins.len() as f64;
    let arith = bins.iter().sum::<f64>() / n;
    if !(arith > 0.0) {
        return 0.0;
    }
    let log_mean = bins
        .iter()
        .map(|&p| p.max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / n;
    (log_mean.exp() / arith).clamp(0.0, 1.0)
}

/// Averaged modified periodogram over segments of `nfft` samples.
///
/// Segments are tapered but not detrended, so a constant offset appears in
/// bin 0. The scaling is one-sided density: `sum(psd) * df` equals the mean
/// taper-weighted square of the series (its variance when zero-mean).
pub fn welch_psd(ts: &TimeSeries, nfft: usize, overlap: f64, taper: Taper) -> Result<Spectrum> {
    welch_slice(&ts.values, ts.fs, nfft, overlap, taper)
}

pub(crate) fn welch_slice(
    values: &[f64],
    fs: f64,
    nfft: usize,
    overlap: f64,
    taper: Taper,
) -> Result<Spectrum> {
    if nfft < 2 {
        return Err(Error::precondition("nfft", "must be >= 2"));
    }
    if values.len() < nfft {
        return Err(Error::InsufficientData(format!(
            "series of {} samples is shorter than nfft = {nfft}",
            values.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::precondition("overlap", "must lie in [0, 1)"));
    }
    let step = ((nfft as f64 * (1.0 - overlap)).round() as usize).max(1);
    let window = taper.coefficients(nfft);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let window_sum: f64 = window.iter().sum();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut buffer = vec![Complex::new(0.0, 0.0); nfft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let bins = nfft / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut segments = 0usize;
    let mut start = 0;
    while start + nfft <= values.len() {
        for (b, (&x, &w)) in buffer
            .iter_mut()
            .zip(values[start..start + nfft].iter().zip(&window))
        {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buffer, &mut scratch);
        for (a, c) in acc.iter_mut().zip(&buffer[..bins]) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += step;
    }

    let scale = 1.0 / (fs * window_power * segments as f64);
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let one_sided = if k == 0 || (nfft.is_multiple_of(2) && k == nfft / 2) {
                1.0
            } else {
                2.0
            };
            a * scale * one_sided
        })
        .collect();
    let df = fs / nfft as f64;
    Ok(Spectrum {
        freqs: (0..bins).map(|k| k as f64 * df).collect(),
        psd,
        nfft,
        overlap,
        taper,
        fs,
        segments,
        resolution_bandwidth: fs * window_power / (window_sum * window_sum),
    })
}

/// Bins excluded from floor statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakMask {
    pub excluded: Vec<bool>,
}

impl PeakMask {
    pub fn none(len: usize) -> Self {
        Self {
            excluded: vec![false; len],
        }
    }

    /// Marks bins in `band` more than `threshold_db` above the band median,
    /// dilated by `guard` bins on each side.
    pub fn detect(spec: &Spectrum, band: (f64, f64), threshold_db: f64, guard: usize) -> Self {
        let db = spec.psd_db();
        let idx = band_indices(spec, band);
        let level = median(&idx.iter().map(|&k| db[k]).collect::<Vec<_>>());
        let mut excluded = vec![false; spec.len()];
        for &k in &idx {
            if db[k] > level + threshold_db {
                let lo = k.saturating_sub(guard);
                let hi = (k + guard).min(spec.len() - 1);
                excluded[lo..=hi].iter_mut().for_each(|e| *e = true);
            }
        }
        Self { excluded }
    }

    /// Additionally excludes `guard` bins around each listed frequency.
    pub fn exclude_lines(mut self, spec: &Spectrum, lines: &[f64], guard: usize) -> Self {
        for &f in lines {
            if f < 0.0 || f > spec.fs / 2.0 {
                continue;
            }
            let k = spec.bin_of(f);
            let lo = k.saturating_sub(guard);
            let hi = (k + guard).min(spec.len() - 1);
            self.excluded[lo..=hi].iter_mut().for_each(|e| *e = true);
        }
        self
    }
}

pub(crate) fn band_indices(spec: &Spectrum, band: (f64, f64)) -> Vec<usize> {
    (0..spec.len())
        .filter(|&k| spec.freqs[k] >= band.0 && spec.freqs[k] <= band.1)
        .collect()
}

/// Median dB level of the unmasked bins inside `band`.
pub fn spectral_floor(spec: &Spectrum, mask: &PeakMask, band: (f64, f64)) -> Result<f64> {
    if mask.excluded.len() != spec.len() {
        return Err(Error::precondition("mask", "length differs from spectrum"));
    }
    let idx = band_indices(spec, band);
    if idx.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no spectral bins in band [{}, {}] Hz",
            band.0, band.1
        )));
    }
    let kept: Vec<f64> = idx
        .iter()
        .filter(|&&k| !mask.excluded[k])
        .map(|&k| to_db(spec.psd[k]))
        .collect();
    if kept.len() * 2 <= idx.len() {
        return Err(Error::precondition(
            "mask",
            format!(
                "excludes {} of {} bins in band",
                idx.len() - kept.len(),
                idx.len()
            ),
        ));
    }
    Ok(median(&kept))
}

/// Floor statistics with automatic peak masking over the open band
/// `(df, fs/2)`.
///
/// On coarse grids a harmonic-rich spectrum can be mostly guard bins, so the
/// guard narrows until the mask leaves a majority of the band.
pub fn auto_floor(spec: &Spectrum) -> Result<f64> {
    let band = (spec.df() * 1.5, spec.fs / 2.0);
    let mut last = None;
    for guard in (0..=3).rev() {
        let mask = PeakMask::detect(spec, band, 10.0, guard);
        match spectral_floor(spec, &mask, band) {
            Err(e @ Error::Precondition { .. }) => last = Some(e),
            other => return other,
        }
    }
    Err(last.expect("loop ran"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::harmonic_series;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn white(n: usize, sigma: f64, fs: f64, seed: u64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        TimeSeries::new(0.0, fs, (0..n).map(|_| d.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn sine_power_lands_in_one_bin() {
        let fs = 64_000.0;
        let s = harmonic_series(1000.0, 1, &[1.0], fs, 1.0).unwrap();
        let spec = welch_psd(&s, 1024, 0.5, Taper::Rectangular).unwrap();
        let k = spec.bin_of(1000.0);
        assert_eq!(spec.peak_bin(0), k);
        assert!(spec.psd[k] * spec.df() >= 0.99 * spec.total_power());
        // With the Hann taper the line occupies its three-bin main lobe.
        let hann = welch_psd(&s, 1024, 0.5, Taper::Hann).unwrap();
        let lobe: f64 = hann.psd[k - 1..=k + 1].iter().sum::<f64>() * hann.df();
        assert!(lobe >= 0.99 * hann.total_power());
    }

    #[test]
    fn white_noise_level() {
        let fs = 1000.0;
        let sigma = 2.0;
        let s = white(200_000, sigma, fs, 11);
        let spec = welch_psd(&s, 256, 0.5, Taper::Hann).unwrap();
        let expected = sigma * sigma / (fs / 2.0);
        let interior = &spec.psd[1..spec.len() - 1];
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        assert!((mean / expected - 1.0).abs() < 0.1);
        assert!((spec.total_power() / (sigma * sigma) - 1.0).abs() < 0.01);
    }

    #[test]
    fn dc_goes_to_bin_zero() {
        let s = TimeSeries::new(0.0, 100.0, vec![3.0; 4096]).unwrap();
        let spec = welch_psd(&s, 512, 0.5, Taper::Rectangular).unwrap();
        let total = spec.total_power();
        assert!((total - 9.0).abs() < 1e-9);
        assert!(spec.psd[1..].iter().all(|&p| p * spec.df() < 1e-12 * total));
        assert!(spec.psd[0] * spec.df() > 0.999 * total);
    }

    #[test]
    fn short_series_rejected() {
        let s = TimeSeries::new(0.0, 1.0, vec![0.0; 10]).unwrap();
        assert!(matches!(
            welch_psd(&s, 16, 0.5, Taper::Hann),
            Err(Error::InsufficientData(_))
        ));
        let s = TimeSeries::new(0.0, 1.0, vec![0.0; 100]).unwrap();
        assert!(welch_psd(&s, 16, 1.0, Taper::Hann).is_err());
    }

    #[test]
    fn floor_of_white_noise_matches_level() {
        let fs = 1000.0;
        let s = white(400_000, 1.0, fs, 5);
        let spec = welch_psd(&s, 512, 0.5, Taper::Hann).unwrap();
        let floor = auto_floor(&spec).unwrap();
        assert!((floor - to_db(1.0 / (fs / 2.0))).abs() < 1.0);
    }

    #[test]
    fn floor_of_sine_sits_at_noise() {
        let fs = 10_000.0;
        let sine = harmonic_series(500.0, 1, &[1.0], fs, 40.0).unwrap();
        let noise = white(sine.len(), 1e-3, fs, 3);
        let values = sine
            .values
            .iter()
            .zip(&noise.values)
            .map(|(a, b)| a + b)
            .collect();
        let spec = welch_psd(
            &TimeSeries::new(0.0, fs, values).unwrap(),
            1000,
            0.5,
            Taper::Hann,
        )
        .unwrap();
        let floor = auto_floor(&spec).unwrap();
        let peak = to_db(spec.psd[spec.peak_bin(1)]);
        assert!((floor - to_db(1e-6 / (fs / 2.0))).abs() < 1.0);
        assert!(peak - floor > 40.0);
    }

    #[test]
    fn floor_of_dense_comb_narrows_guard() {
        // Harmonics every 8 bins: a 3-bin guard would hide most of the band.
        let fs = 1000.0;
        let comb = harmonic_series(62.5, 7, &[1.0; 7], fs, 400.0).unwrap();
        let noise = white(comb.len(), 1e-3, fs, 4);
        let values = comb
            .values
            .iter()
            .zip(&noise.values)
            .map(|(a, b)| a + b)
            .collect();
        let spec = welch_psd(
            &TimeSeries::new(0.0, fs, values).unwrap(),
            128,
            0.5,
            Taper::Hann,
        )
        .unwrap();
        let band = (spec.df() * 1.5, fs / 2.0);
        assert!(spectral_floor(&spec, &PeakMask::detect(&spec, band, 10.0, 3), band).is_err());
        let floor = auto_floor(&spec).unwrap();
        assert!((floor - to_db(1e-6 / (fs / 2.0))).abs() < 1.0, "{floor}");
    }

    #[test]
    fn floor_rejects_empty_band_and_heavy_mask() {
        let s = white(4096, 1.0, 100.0, 1);
        let spec = welch_psd(&s, 256, 0.5, Taper::Hann).unwrap();
        assert!(spectral_floor(&spec, &PeakMask::none(spec.len()), (200.0, 300.0)).is_err());
        let mut mask = PeakMask::none(spec.len());
        mask.excluded.iter_mut().take(100).for_each(|e| *e = true);
        assert!(spectral_floor(&spec, &mask, (0.0, 50.0)).is_err());
    }
}
