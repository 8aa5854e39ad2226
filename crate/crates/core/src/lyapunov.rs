//! Largest Lyapunov exponents of the flow and of one-dimensional maps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::model::{axpy, rhs, State, Stepper, SystemParams, DIVERGENCE_LIMIT};

/// Running estimate after each renormalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Time since the start of the measurement (s).
    pub time: f64,
    /// Exponent estimate accumulated so far (1/s).
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Largest exponent (1/s).
    pub exponent: f64,
    pub trace: Vec<TracePoint>,
}

impl LyapunovEstimate {
    /// Largest deviation of the running estimate from the final value over
    /// the trailing `fraction` of the trace.
    pub fn tail_spread(&self, fraction: f64) -> f64 {
        let start = ((1.0 - fraction.clamp(0.0, 1.0)) * self.trace.len() as f64) as usize;
        self.trace[start.min(self.trace.len())..]
            .iter()
            .map(|p| (p.exponent - self.exponent).abs())
            .fold(0.0, f64::max)
    }
}

#[inline(always)]
fn extended_rhs(z: &[f64; 8], p: &SystemParams, drive: f64) -> [f64; 8] {
    let y = [z[0], z[1], z[2], z[3]];
    let [ar, ai, x, _] = y;
    let [ur, ui, ux, uv] = [z[4], z[5], z[6], z[7]];
    let f = rhs(&y, p, drive, 0.0);
    let detuning = p.delta + p.g0 * x;
    let half_kappa = 0.5 * p.kappa;
    [
        f[0],
        f[1],
        f[2],
        f[3],
        -half_kappa * ur - detuning * ui - p.g0 * ai * ux,
        detuning * ur - half_kappa * ui + p.g0 * ar * ux,
        p.omega_m * uv,
        2.0 * p.g0 * (ar * ur + ai * ui) / p.omega_m - p.omega_m * ux - p.gamma_m * uv,
    ]
}

fn tangent_norm(z: &[f64; 8]) -> f64 {
    z[4..].iter().map(|u| u * u).sum::<f64>().sqrt()
}

/// Benettin estimate of the largest exponent of the unforced flow.
///
/// The state is first advanced through `p.t_transient`; the tangent vector
/// then relaxes for 10% of `t_total` before growth is accumulated over the
/// remaining time, renormalizing every `renorm` seconds.
pub fn lyapunov_benettin(
    p: &SystemParams,
    s0: State,
    t_total: f64,
    renorm: f64,
) -> Result<LyapunovEstimate> {
    p.validate()?;
    ensure_finite("t_total", t_total)?;
    ensure_finite("renorm", renorm)?;
    if !(renorm >= p.dt && t_total >= 10.0 * renorm) {
        return Err(Error::precondition(
            "renorm",
            "need dt <= renorm and renorm <= t_total / 10",
        ));
    }
    let mut stepper = Stepper::new(p, s0, None);
    for _ in 0..p.transient_steps() {
        stepper.step()?;
    }
    let y = stepper.y;
    let mut z = [y[0], y[1], y[2], y[3], 0.5, 0.5, 0.5, 0.5];
    let mut noise = (p.noise_sigma > 0.0).then(|| {
        (
            ChaCha8Rng::seed_from_u64(p.seed ^ 0x7a4e_6e7d),
            p.noise_sigma * p.dt.sqrt(),
        )
    });
    let drive = p.kappa_ex.sqrt() * p.drive_amplitude;
    let h = p.dt;
    let steps_per_renorm = (renorm / h).round().max(1.0) as usize;
    let total_blocks = (t_total / (steps_per_renorm as f64 * h)).floor() as usize;
    let burn_in = total_blocks / 10;
    let block_time = steps_per_renorm as f64 * h;

    let mut log_sum = 0.0;
    let mut trace = Vec::with_capacity(total_blocks - burn_in);
    let mut elapsed_steps = p.transient_steps() as f64;
    for block in 0..total_blocks {
        for _ in 0..steps_per_renorm {
            let k1 = extended_rhs(&z, p, drive);
            let k2 = extended_rhs(&axpy(&z, 0.5 * h, &k1), p, drive);
            let k3 = extended_rhs(&axpy(&z, 0.5 * h, &k2), p, drive);
            let k4 = extended_rhs(&axpy(&z, h, &k3), p, drive);
            for i in 0..8 {
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if let Some((rng, scale)) = noise.as_mut() {
                let xi: f64 = StandardNormal.sample(rng);
                z[3] += *scale * xi;
            }
            elapsed_steps += 1.0;
            if z[..4].iter().any(|c| !(c.abs() <= DIVERGENCE_LIMIT)) {
                return Err(Error::Divergence {
                    time: elapsed_steps * h,
                });
            }
        }
        let norm = tangent_norm(&z);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::NonFinite {
                field: "tangent".into(),
            });
        }
        for u in &mut z[4..] {
            *u /= norm;
        }
        if block >= burn_in {
            log_sum += norm.ln();
            let measured = (block + 1 - burn_in) as f64 * block_time;
            trace.push(TracePoint {
                time: measured,
                exponent: log_sum / measured,
            });
        }
    }
    let exponent = trace.last().map_or(0.0, |t| t.exponent);
    Ok(LyapunovEstimate { exponent, trace })
}

/// A differentiable map of the real line.
pub trait OneDimMap {
    fn apply(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logistic {
    pub r: f64,
}

impl OneDimMap for Logistic {
    fn apply(&self, x: f64) -> f64 {
        self.r * x * (1.0 - x)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.r * (1.0 - 2.0 * x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Identity;

impl OneDimMap for Identity {
    fn apply(&self, x: f64) -> f64 {
        x
    }

    fn derivative(&self, _x: f64) -> f64 {
        1.0
    }
}

/// Floor applied to `|f'(x)|` before taking the logarithm.
pub const DERIVATIVE_EPSILON: f64 = 1e-12;

/// Iterations discarded before averaging.
pub const MAP_BURN_IN: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapLyapunov {
    /// Mean of `ln |f'(x_k)|` (nats per iteration).
    pub exponent: f64,
    /// Number of terms where `|f'|` fell below [`DERIVATIVE_EPSILON`].
    pub clamped: usize,
}

pub fn map_lyapunov<M: OneDimMap + ?Sized>(map: &M, x0: f64, n: usize) -> Result<MapLyapunov> {
    ensure_finite("x0", x0)?;
    if n < 10_000 {
        return Err(Error::precondition(
            "n",
            "at least 10^4 iterations required",
        ));
    }
    let mut x = x0;
    for _ in 0..MAP_BURN_IN {
        x = map.apply(x);
    }
    let mut sum = 0.0;
    let mut clamped = 0;
    for _ in 0..n {
        let d = map.derivative(x).abs();
        if d < DERIVATIVE_EPSILON {
            clamped += 1;
        }
        sum += d.max(DERIVATIVE_EPSILON).ln();
        x = map.apply(x);
        if !x.is_finite() {
            return Err(Error::NonFinite { field: "x".into() });
        }
    }
    Ok(MapLyapunov {
        exponent: sum / n as f64,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn logistic_r4_is_ln2() {
        let l = map_lyapunov(&Logistic { r: 4.0 }, 0.3, 1_000_000).unwrap();
        assert!((l.exponent / LN_2 - 1.0).abs() < 0.01, "{}", l.exponent);
    }

    #[test]
    fn logistic_period_two_is_stable() {
        let l = map_lyapunov(&Logistic { r: 3.2 }, 0.3, 10_000).unwrap();
        assert!(l.exponent < 0.0);
        assert_eq!(l.clamped, 0);
    }

    #[test]
    fn identity_is_exactly_zero() {
        let l = map_lyapunov(&Identity, 0.5, 10_000).unwrap();
        assert_eq!(l.exponent, 0.0);
    }

    #[test]
    fn superstable_point_is_clamped() {
        let l = map_lyapunov(&Logistic { r: 2.0 }, 0.5, 10_000).unwrap();
        assert_eq!(l.clamped, 10_000);
        assert!((l.exponent - DERIVATIVE_EPSILON.ln()).abs() < 1e-9);
    }

    #[test]
    fn short_runs_rejected() {
        assert!(map_lyapunov(&Identity, 0.5, 100).is_err());
    }

    fn linear_params() -> SystemParams {
        SystemParams {
            delta: 0.0,
            kappa: 0.8,
            kappa_ex: 0.4,
            omega_m: 1.0,
            gamma_m: 0.01,
            g0: 0.0,
            drive_amplitude: 0.0,
            noise_sigma: 0.0,
            dt: 0.05,
            t_transient: 0.0,
            t_record: 0.0,
            decimation: 1,
            seed: 0,
        }
    }

    #[test]
    fn damped_linear_system_decays_at_slowest_rate() {
        let p = linear_params();
        let est = lyapunov_benettin(&p, State::default(), 4000.0, 1.0).unwrap();
        let expected = -0.5 * p.gamma_m;
        assert!(
            (est.exponent / expected - 1.0).abs() < 0.05,
            "{}",
            est.exponent
        );
        assert!(!est.trace.is_empty());
    }

    #[test]
    fn renorm_preconditions() {
        let p = linear_params();
        assert!(lyapunov_benettin(&p, State::default(), 10.0, 5.0).is_err());
        assert!(lyapunov_benettin(&p, State::default(), 10.0, 0.001).is_err());
    }
}
