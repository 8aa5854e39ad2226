//! Classical single-mode optomechanical model and its fixed-step integrator.
//!
//! The intracavity field `a` obeys
//!
//! ```text
//! da/dt = [i(delta + g0 x) - kappa/2] a + sqrt(kappa_ex) E(t)
//! dx/dt = omega_m v
//! dv/dt = -omega_m x - gamma_m v + g0 |a|^2 / omega_m + f(t) + noise
//! ```
//!
//! with `x`, `v` the dimensionless mechanical quadratures. Positive `delta`
//! is blue detuning (laser above the cavity resonance); radiation pressure
//! pushes `x` positive, which raises the effective detuning `delta + g0 x`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure_finite, Error, Result};
use crate::series::TimeSeries;

/// Any state component beyond this magnitude is treated as a blow-up.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Upper bound on `dt * max(kappa, omega_m)`.
pub const STABILITY_LIMIT: f64 = 0.2;

/// Physical and numerical constants of the optomechanical model, SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Laser minus cavity detuning (rad/s).
    pub delta: f64,
    /// Total optical energy decay rate (rad/s); the field decays at `kappa/2`.
    pub kappa: f64,
    /// External coupling rate (rad/s), `0 < kappa_ex <= kappa`.
    pub kappa_ex: f64,
    /// Mechanical resonance (rad/s).
    pub omega_m: f64,
    /// Mechanical damping (rad/s).
    pub gamma_m: f64,
    /// Frequency pull per unit displacement (rad/s).
    pub g0: f64,
    /// Input drive amplitude `|a_in|`.
    pub drive_amplitude: f64,
    /// Strength of the additive stochastic force on `v`; 0 disables it.
    pub noise_sigma: f64,
    /// Integrator step (s).
    pub dt: f64,
    /// Discarded transient (s).
    pub t_transient: f64,
    /// Recorded duration (s).
    pub t_record: f64,
    /// Integrator steps per recorded sample.
    pub decimation: usize,
    /// Seed of the noise generator.
    pub seed: u64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("delta", self.delta),
            ("kappa", self.kappa),
            ("kappa_ex", self.kappa_ex),
            ("omega_m", self.omega_m),
            ("gamma_m", self.gamma_m),
            ("g0", self.g0),
            ("drive_amplitude", self.drive_amplitude),
            ("noise_sigma", self.noise_sigma),
            ("dt", self.dt),
            ("t_transient", self.t_transient),
            ("t_record", self.t_record),
        ] {
            ensure_finite(name, value)?;
        }
        let positive = [
            ("kappa", self.kappa),
            ("omega_m", self.omega_m),
            ("gamma_m", self.gamma_m),
            ("dt", self.dt),
        ];
        for (name, value) in positive {
            if value <= 0.0 {
                return Err(Error::precondition(
                    name,
                    format!("must be > 0, got {value}"),
                ));
            }
        }
        if !(self.kappa_ex > 0.0 && self.kappa_ex <= self.kappa) {
            return Err(Error::precondition(
                "kappa_ex",
                format!("must satisfy 0 < kappa_ex <= kappa, got {}", self.kappa_ex),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::precondition("noise_sigma", "must be >= 0"));
        }
        if self.t_transient < 0.0 || self.t_record < 0.0 {
            return Err(Error::precondition("t_record", "durations must be >= 0"));
        }
        if self.decimation == 0 {
            return Err(Error::precondition("decimation", "must be >= 1"));
        }
        let guard = self.dt * self.kappa.max(self.omega_m);
        if guard >= STABILITY_LIMIT {
            return Err(Error::precondition(
                "dt",
                format!("dt * max(kappa, omega_m) = {guard:.3} exceeds {STABILITY_LIMIT}"),
            ));
        }
        Ok(())
    }

    /// Recorded sampling rate, `1 / (dt * decimation)`.
    pub fn sample_rate(&self) -> f64 {
        1.0 / (self.dt * self.decimation as f64)
    }

    pub fn sample_count(&self) -> usize {
        (self.t_record * self.sample_rate()).round() as usize
    }

    pub fn transient_steps(&self) -> usize {
        (self.t_transient / self.dt).round() as usize
    }

    /// Short hex digest of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("params serialize");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Steady intracavity field of the uncoupled (`g0 = 0`) cavity.
    pub fn linear_steady_state(&self) -> State {
        // a = sqrt(kappa_ex) E / (kappa/2 - i delta)
        let c = self.kappa_ex.sqrt() * self.drive_amplitude;
        let re = 0.5 * self.kappa;
        let im = -self.delta;
        let norm = re * re + im * im;
        State {
            a_re: c * re / norm,
            a_im: -c * im / norm,
            x: 0.0,
            v: 0.0,
        }
    }
}

/// Instantaneous dynamical state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub a_re: f64,
    pub a_im: f64,
    pub x: f64,
    pub v: f64,
}

pub type StateDerivative = State;

impl State {
    pub fn intensity(&self) -> f64 {
        self.a_re * self.a_re + self.a_im * self.a_im
    }

    fn validate(&self) -> Result<()> {
        ensure_finite("a_re", self.a_re)?;
        ensure_finite("a_im", self.a_im)?;
        ensure_finite("x", self.x)?;
        ensure_finite("v", self.v)
    }

    fn to_array(self) -> [f64; 4] {
        [self.a_re, self.a_im, self.x, self.v]
    }

    fn from_array(y: [f64; 4]) -> Self {
        Self {
            a_re: y[0],
            a_im: y[1],
            x: y[2],
            v: y[3],
        }
    }
}

/// External forcing applied during integration.
pub trait ForceFunction: Sync {
    /// Additive force on the mechanical velocity equation.
    fn force(&self, _t: f64) -> f64 {
        0.0
    }

    /// Multiplier applied to the drive amplitude.
    fn drive_scale(&self, _t: f64) -> f64 {
        1.0
    }
}

#[inline(always)]
pub(crate) fn rhs(y: &[f64; 4], p: &SystemParams, drive: f64, force: f64) -> [f64; 4] {
    let [ar, ai, x, v] = *y;
    let detuning = p.delta + p.g0 * x;
    let half_kappa = 0.5 * p.kappa;
    [
        -detuning * ai - half_kappa * ar + drive,
        detuning * ar - half_kappa * ai,
        p.omega_m * v,
        -p.omega_m * x - p.gamma_m * v + p.g0 * (ar * ar + ai * ai) / p.omega_m + force,
    ]
}

/// Right-hand side of the equations of motion at `(s, t)`.
///
/// The stochastic force is not part of the deterministic right-hand side; it
/// is injected per step by [`integrate`].
pub fn derivatives(
    s: &State,
    p: &SystemParams,
    t: f64,
    stimulus: Option<&dyn ForceFunction>,
) -> Result<StateDerivative> {
    s.validate()?;
    p.validate()?;
    ensure_finite("t", t)?;
    let (scale, force) = match stimulus {
        Some(f) => (f.drive_scale(t), f.force(t)),
        None => (1.0, 0.0),
    };
    let drive = p.kappa_ex.sqrt() * p.drive_amplitude * scale;
    Ok(State::from_array(rhs(&s.to_array(), p, drive, force)))
}

/// Fixed-step RK4 stepper carrying time and the noise generator.
pub(crate) struct Stepper<'a> {
    pub p: &'a SystemParams,
    pub y: [f64; 4],
    pub steps: u64,
    stimulus: Option<&'a dyn ForceFunction>,
    sqrt_kex: f64,
    noise: Option<(ChaCha8Rng, f64)>,
}

impl<'a> Stepper<'a> {
    pub fn new(p: &'a SystemParams, s0: State, stimulus: Option<&'a dyn ForceFunction>) -> Self {
        let noise = (p.noise_sigma > 0.0).then(|| {
            (
                ChaCha8Rng::seed_from_u64(p.seed),
                p.noise_sigma * p.dt.sqrt(),
            )
        });
        Self {
            p,
            y: s0.to_array(),
            steps: 0,
            stimulus,
            sqrt_kex: p.kappa_ex.sqrt(),
            noise,
        }
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.p.dt
    }

    #[inline(always)]
    fn eval(&self, y: &[f64; 4], t: f64) -> [f64; 4] {
        let p = self.p;
        match self.stimulus {
            None => rhs(y, p, self.sqrt_kex * p.drive_amplitude, 0.0),
            Some(f) => rhs(
                y,
                p,
                self.sqrt_kex * p.drive_amplitude * f.drive_scale(t),
                f.force(t),
            ),
        }
    }

    pub fn step(&mut self) -> Result<()> {
        let h = self.p.dt;
        let t = self.time();
        let y = self.y;
        let k1 = self.eval(&y, t);
        let k2 = self.eval(&axpy(&y, 0.5 * h, &k1), t + 0.5 * h);
        let k3 = self.eval(&axpy(&y, 0.5 * h, &k2), t + 0.5 * h);
        let k4 = self.eval(&axpy(&y, h, &k3), t + h);
        for i in 0..4 {
            self.y[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some((rng, scale)) = self.noise.as_mut() {
            let xi: f64 = StandardNormal.sample(rng);
            self.y[3] += *scale * xi;
        }
        self.steps += 1;
        if self.y.iter().any(|c| !(c.abs() <= DIVERGENCE_LIMIT)) {
            return Err(Error::Divergence { time: self.time() });
        }
        Ok(())
    }
}

#[inline(always)]
pub(crate) fn axpy<const N: usize>(y: &[f64; N], h: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += h * k[i];
    }
    out
}

/// One recorded sample: intracavity intensity and mechanical quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub intensity: f64,
    pub x: f64,
    pub v: f64,
}

/// Which recorded quantity to analyse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Column {
    Intensity,
    #[default]
    X,
    V,
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::Intensity => "intensity",
            Column::X => "x",
            Column::V => "v",
        }
    }
}

impl std::str::FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intensity" => Ok(Column::Intensity),
            "x" => Ok(Column::X),
            "v" => Ok(Column::V),
            other => Err(Error::precondition(
                "column",
                format!("unknown column {other:?}"),
            )),
        }
    }
}

/// Uniformly sampled record of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub fs: f64,
    pub samples: Vec<Sample>,
    pub params_hash: String,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.t0 + index as f64 / self.fs
    }

    pub fn column(&self, column: Column) -> TimeSeries {
        let values = self
            .samples
            .iter()
            .map(|s| match column {
                Column::Intensity => s.intensity,
                Column::X => s.x,
                Column::V => s.v,
            })
            .collect();
        TimeSeries {
            t0: self.t0,
            fs: self.fs,
            values,
        }
    }

    /// Copy with every recorded quantity multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.intensity *= factor;
            s.x *= factor;
            s.v *= factor;
        }
        out
    }
}

/// Integrates the model with RK4, discards `t_transient` and records
/// `t_record` at the decimated rate.
pub fn integrate(
    p: &SystemParams,
    s0: State,
    stimulus: Option<&dyn ForceFunction>,
) -> Result<Trajectory> {
    p.validate()?;
    s0.validate()?;
    let count = p.sample_count();
    let mut stepper = Stepper::new(p, s0, stimulus);
    for _ in 0..p.transient_steps() {
        stepper.step()?;
    }
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        if i > 0 {
            for _ in 0..p.decimation {
                stepper.step()?;
            }
        }
        let s = State::from_array(stepper.y);
        samples.push(Sample {
            intensity: s.intensity(),
            x: s.x,
            v: s.v,
        });
    }
    Ok(Trajectory {
        t0: p.transient_steps() as f64 * p.dt,
        fs: p.sample_rate(),
        samples,
        params_hash: p.hash(),
        seed: p.seed,
    })
}

/// Outcome of a drive-threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Threshold {
    Found {
        drive_amplitude: f64,
        /// Width of the final bracket.
        resolution: f64,
        baseline_amplitude: f64,
    },
    NoThresholdInRange,
}

/// Bisection steps applied inside the first bracketing scan interval.
const THRESHOLD_BISECTIONS: usize = 12;

/// RMS of the recorded mechanical oscillation about its mean.
pub fn oscillation_amplitude(p: &SystemParams) -> Result<f64> {
    let traj = integrate(p, State::default(), None)?;
    let x = traj.column(Column::X);
    Ok(crate::series::variance(&x.values).sqrt())
}

/// Smallest drive in `drive_range` whose steady mechanical oscillation
/// exceeds ten times the amplitude at the bottom of the range.
pub fn find_threshold(
    p: &SystemParams,
    drive_range: (f64, f64),
    n_steps: usize,
) -> Result<Threshold> {
    let (lo, hi) = drive_range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::precondition(
            "drive_range",
            format!("need 0 < lo < hi, got ({lo}, {hi})"),
        ));
    }
    if n_steps < 8 {
        return Err(Error::precondition("n_steps", "must be >= 8"));
    }
    p.validate()?;
    let amplitude_at = |drive: f64| {
        let mut q = p.clone();
        q.drive_amplitude = drive;
        oscillation_amplitude(&q)
    };
    let baseline = amplitude_at(lo)?;
    let onset = |amp: f64| amp > 10.0 * baseline && amp > 1e-12;

    let step = (hi - lo) / n_steps as f64;
    let mut below = lo;
    let mut above = None;
    for i in 1..=n_steps {
        let drive = lo + step * i as f64;
        if onset(amplitude_at(drive)?) {
            above = Some(drive);
            break;
        }
        below = drive;
    }
    let Some(mut above) = above else {
        return Ok(Threshold::NoThresholdInRange);
    };
    for _ in 0..THRESHOLD_BISECTIONS {
        let mid = 0.5 * (below + above);
        if onset(amplitude_at(mid)?) {
            above = mid;
        } else {
            below = mid;
        }
    }
    Ok(Threshold::Found {
        drive_amplitude: above,
        resolution: above - below,
        baseline_amplitude: baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn linear_params() -> SystemParams {
        SystemParams {
            delta: 0.0,
            kappa: 1.0e8,
            kappa_ex: 0.5e8,
            omega_m: 1.35e8,
            gamma_m: 5.9e4,
            g0: 0.0,
            drive_amplitude: 1.0e4,
            noise_sigma: 0.0,
            dt: 1.0e-10,
            t_transient: 0.0,
            t_record: 1.0e-7,
            decimation: 10,
            seed: 7,
        }
    }

    #[test]
    fn undriven_origin_is_fixed_point() {
        let mut p = linear_params();
        p.drive_amplitude = 0.0;
        p.g0 = 1.0e8;
        let d = derivatives(&State::default(), &p, 0.0, None).unwrap();
        assert_eq!(d, State::default());
    }

    #[test]
    fn linear_steady_state_is_stationary() {
        let mut p = linear_params();
        p.delta = 3.0e7;
        let s = p.linear_steady_state();
        let d = derivatives(&s, &p, 0.0, None).unwrap();
        let scale = p.kappa * s.a_re.hypot(s.a_im);
        assert!(d.a_re.abs() < 1e-12 * scale && d.a_im.abs() < 1e-12 * scale);
    }

    #[test]
    fn decoupled_restoring_force() {
        let p = linear_params();
        let s = State {
            x: 1.0,
            ..State::default()
        };
        let d = derivatives(&s, &p, 0.0, None).unwrap();
        assert_eq!(d.v, -p.omega_m);
    }

    #[test]
    fn non_finite_state_names_field() {
        let p = linear_params();
        let s = State {
            x: f64::NAN,
            ..State::default()
        };
        match derivatives(&s, &p, 0.0, None) {
            Err(Error::NonFinite { field }) => assert_eq!(field, "x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stability_guard_rejects_large_step() {
        let mut p = linear_params();
        p.dt = 0.25 / p.omega_m;
        assert!(matches!(p.validate(), Err(Error::Precondition { .. })));
        p.dt = 0.1 / p.omega_m;
        p.kappa_ex = 2.0 * p.kappa;
        assert!(p.validate().is_err());
    }

    #[test]
    fn sample_grid_matches_contract() {
        let p = linear_params();
        let traj = integrate(&p, State::default(), None).unwrap();
        assert_eq!(traj.len(), p.sample_count());
        assert_eq!(traj.len(), (p.t_record * traj.fs).round() as usize);
        assert!((traj.fs - 1.0 / (p.dt * 10.0)).abs() < 1e-6);
        assert!(traj.samples.iter().all(|s| s.intensity >= 0.0));
    }

    #[test]
    fn divergence_reports_time() {
        let mut p = linear_params();
        p.g0 = 1.0e8;
        p.gamma_m = 1.0e-3;
        let s0 = State {
            v: 2.0e12,
            ..State::default()
        };
        match integrate(&p, s0, None) {
            Err(Error::Divergence { time }) => assert!(time > 0.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn noise_is_reproducible_by_seed() {
        let mut p = linear_params();
        p.noise_sigma = 1.0e3;
        let a = integrate(&p, State::default(), None).unwrap();
        let b = integrate(&p, State::default(), None).unwrap();
        assert_eq!(a, b);
        p.seed += 1;
        let c = integrate(&p, State::default(), None).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn threshold_precondition_checks() {
        let p = linear_params();
        assert!(find_threshold(&p, (0.0, 1.0), 8).is_err());
        assert!(find_threshold(&p, (1.0, 2.0), 4).is_err());
    }

    #[test]
    fn uncoupled_system_has_no_threshold() {
        let p = linear_params();
        let r = find_threshold(&p, (1.0e3, 1.0e6), 8).unwrap();
        assert_eq!(r, Threshold::NoThresholdInRange);
    }
}
