//! Three-way regime labelling with its supporting evidence.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lyapunov::lyapunov_benettin;
use crate::model::{Column, State, SystemParams, Trajectory};
use crate::segmentation::{segment_series, SegmentReport, Segmentation, SegmentationConfig};
use crate::series::TimeSeries;
use crate::spectral::{auto_floor, to_db, welch_psd, Spectrum, Taper};

/// Chaotic fractions below this are periodic.
pub const PERIODIC_LIMIT: f64 = 0.05;
/// Chaotic fractions above this are fully chaotic.
pub const CHAOTIC_LIMIT: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    Periodic,
    IntermittentChaos,
    Chaotic,
}

impl RegimeLabel {
    pub fn from_fraction(fraction: f64) -> Self {
        if fraction < PERIODIC_LIMIT {
            RegimeLabel::Periodic
        } else if fraction > CHAOTIC_LIMIT {
            RegimeLabel::Chaotic
        } else {
            RegimeLabel::IntermittentChaos
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegimeLabel::Periodic => "periodic",
            RegimeLabel::IntermittentChaos => "intermittent_chaos",
            RegimeLabel::Chaotic => "chaotic",
        }
    }
}

impl std::fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub chaotic_fraction: f64,
    /// Spectral floor relative to the strongest line (dB, negative).
    pub floor_elevation_db: f64,
    /// Largest Lyapunov exponent (1/s), when computed.
    pub lyapunov: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub label: RegimeLabel,
    pub evidence: Evidence,
}

/// Settings for the optional Lyapunov certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConfig {
    /// Measured duration after the transient (s).
    pub t_total: f64,
    /// Renormalization interval (s).
    pub renorm: f64,
}

/// Everything needed to turn a series into a regime label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Observable used for segmentation and the evidence spectrum.
    #[serde(default)]
    pub column: Column,
    pub segmentation: SegmentationConfig,
    #[serde(default = "default_nfft")]
    pub nfft: usize,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default)]
    pub taper: Taper,
    #[serde(default)]
    pub lyapunov: Option<LyapunovConfig>,
    #[serde(default = "default_bins")]
    pub density_bins: usize,
}

fn default_nfft() -> usize {
    4096
}

fn default_overlap() -> f64 {
    0.5
}

fn default_bins() -> usize {
    64
}

impl AnalysisConfig {
    pub fn new(segmentation: SegmentationConfig) -> Self {
        Self {
            column: Column::default(),
            segmentation,
            nfft: default_nfft(),
            overlap: default_overlap(),
            taper: Taper::default(),
            lyapunov: None,
            density_bins: default_bins(),
        }
    }

    /// Welch estimate with the configured settings, `nfft` capped at the
    /// series length.
    pub fn spectrum(&self, ts: &TimeSeries) -> Result<Spectrum> {
        welch_psd(ts, self.nfft.min(ts.len()), self.overlap, self.taper)
    }
}

/// Full classification result of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesAnalysis {
    pub regime: Regime,
    pub segmentation: Segmentation,
    pub spectrum: Spectrum,
    pub floor_db: f64,
}

impl SeriesAnalysis {
    pub fn report(&self) -> &SegmentReport {
        &self.segmentation.report
    }
}

pub fn analyze_series(ts: &TimeSeries, cfg: &AnalysisConfig) -> Result<SeriesAnalysis> {
    let segmentation = segment_series(ts, &cfg.segmentation)?;
    let spectrum = cfg.spectrum(ts)?;
    let floor_db = auto_floor(&spectrum)?;
    let peak_db = to_db(spectrum.psd[spectrum.peak_bin(1)]);
    let fraction = segmentation.report.chaotic_fraction;
    Ok(SeriesAnalysis {
        regime: Regime {
            label: RegimeLabel::from_fraction(fraction),
            evidence: Evidence {
                chaotic_fraction: fraction,
                floor_elevation_db: floor_db - peak_db,
                lyapunov: None,
            },
        },
        segmentation,
        spectrum,
        floor_db,
    })
}

/// Regime of a simulated trajectory. The Lyapunov exponent is attached
/// when `params` is given and the configuration asks for it.
pub fn regime_classify(
    traj: &Trajectory,
    cfg: &AnalysisConfig,
    params: Option<&SystemParams>,
) -> Result<SeriesAnalysis> {
    let mut analysis = analyze_series(&traj.column(cfg.column), cfg)?;
    if let (Some(p), Some(l)) = (params, cfg.lyapunov) {
        let est = lyapunov_benettin(p, State::default(), l.t_total, l.renorm)?;
        analysis.regime.evidence.lyapunov = Some(est.exponent);
    }
    Ok(analysis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_thresholds() {
        assert_eq!(RegimeLabel::from_fraction(0.0), RegimeLabel::Periodic);
        assert_eq!(RegimeLabel::from_fraction(0.049), RegimeLabel::Periodic);
        assert_eq!(
            RegimeLabel::from_fraction(0.05),
            RegimeLabel::IntermittentChaos
        );
        assert_eq!(
            RegimeLabel::from_fraction(0.95),
            RegimeLabel::IntermittentChaos
        );
        assert_eq!(RegimeLabel::from_fraction(1.0), RegimeLabel::Chaotic);
    }

    #[test]
    fn label_names_round_trip() {
        for l in [
            RegimeLabel::Periodic,
            RegimeLabel::IntermittentChaos,
            RegimeLabel::Chaotic,
        ] {
            let json = serde_json::to_string(&l).unwrap();
            assert_eq!(json, format!("\"{}\"", l.name()));
        }
    }
}
