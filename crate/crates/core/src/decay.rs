//! Decaying two-particle systems: the correlated pair wave and its
//! straight-line trajectories, variance and peak-alignment analysis, thin-lens
//! imaging of the partner particle, and the energy-shell density profile.

use crate::currents::SpinSpec;
use crate::error::{Error, Result};
use crate::guide::{
    integrate_trajectory, rk4_flat, BeableConfig, ClosedForm, Controls, Status, TrajectoryRecord,
    VelocityEval, WaveVelocity,
};
use crate::stats;
use crate::wavefunction::{Family, WaveFunction, C64};
use nalgebra::{Matrix2, Vector2};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPairSpec {
    pub alpha: f64,
    pub m1: f64,
    pub m2: f64,
    pub hbar: f64,
}

impl DecayPairSpec {
    pub fn new(alpha: f64, m1: f64, m2: f64, hbar: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(m1 > 0.0) || !(m2 > 0.0) || !(hbar > 0.0) {
            return Err(Error::Config(
                "alpha, masses and hbar must be positive".into(),
            ));
        }
        Ok(Self {
            alpha,
            m1,
            m2,
            hbar,
        })
    }

    pub fn mu(&self) -> f64 {
        self.m1 * self.m2 / (self.m1 + self.m2)
    }

    pub fn wavefunction(&self) -> Result<WaveFunction> {
        WaveFunction::parametric(
            Family::DecayPair {
                alpha: self.alpha,
                norm: 1.0,
            },
            &[3, 3],
            &[self.m1, self.m2],
            self.hbar,
        )
    }

    /// sqrt(alpha^2 + t^2 / 4 mu^2).
    pub fn spread(&self, t: f64) -> f64 {
        (self.alpha * self.alpha + t * t / (4.0 * self.mu() * self.mu())).sqrt()
    }

    /// Exact positions at `t` of the beables that were at `start` at time `t0`.
    pub fn closed_form(&self, start: &[[f64; 3]; 2], t0: f64, t: f64) -> [[f64; 3]; 2] {
        let (m1, m2, mu) = (self.m1, self.m2, self.mu());
        let s = self.spread(t) / self.spread(t0);
        let c: [f64; 3] =
            std::array::from_fn(|k| (m1 * start[0][k] + m2 * start[1][k]) / (m1 + m2));
        let r: [f64; 3] = std::array::from_fn(|k| (start[0][k] - start[1][k]) * s);
        [
            std::array::from_fn(|k| c[k] + mu / m1 * r[k]),
            std::array::from_fn(|k| c[k] - mu / m2 * r[k]),
        ]
    }
}

/// Pair amplitude at (x1, x2, t).
pub fn pair_wavefunction(spec: &DecayPairSpec, x1: [f64; 3], x2: [f64; 3], t: f64) -> Result<C64> {
    let psi = spec.wavefunction()?;
    let x: Vec<f64> = x1.iter().chain(&x2).copied().collect();
    Ok(psi.eval_at(&x, t)?.value[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTrajectories {
    pub numeric: TrajectoryRecord,
    pub closed_form: TrajectoryRecord,
    /// max |x_num - x_exact| / max(|x_exact|, sqrt(hbar alpha)) over particles and records.
    pub max_relative_error: f64,
    /// max |m1 x1 + m2 x2 - initial value|.
    pub momentum_drift: f64,
    /// max over steps of |m1 v1 + m2 v2|.
    pub max_opposite_defect: f64,
    /// Largest change of the unit separation vector from its initial direction.
    pub direction_drift: f64,
}

fn gauss(rng: &mut impl rand::Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn pair_source(spec: &DecayPairSpec) -> Result<WaveVelocity> {
    Ok(WaveVelocity::new(
        spec.wavefunction()?,
        SpinSpec::new(0, spec.hbar)?,
    ))
}

/// Integrate one pair with the guidance velocity and compare with the closed form.
pub fn pair_trajectories(
    spec: &DecayPairSpec,
    start: &BeableConfig,
    t_final: f64,
    controls: &Controls,
) -> Result<PairTrajectories> {
    if start.positions.len() != 2 {
        return Err(Error::Shape(
            "a pair configuration has two particles".into(),
        ));
    }
    let src = pair_source(spec)?;
    pair_trajectories_with(spec, &src, start, t_final, controls)
}

pub fn pair_trajectories_with(
    spec: &DecayPairSpec,
    src: &WaveVelocity,
    start: &BeableConfig,
    t_final: f64,
    controls: &Controls,
) -> Result<PairTrajectories> {
    use crate::guide::VelocitySource;
    let numeric = integrate_trajectory(start, src, t_final, controls);
    let s0 = [start.positions[0], start.positions[1]];
    let scale = (spec.hbar * spec.alpha).sqrt();
    let (m1, m2) = (spec.m1, spec.m2);
    let p0: [f64; 3] = std::array::from_fn(|k| m1 * s0[0][k] + m2 * s0[1][k]);
    let r0: [f64; 3] = std::array::from_fn(|k| s0[0][k] - s0[1][k]);
    let r0n = norm3(&r0);
    let mut err = 0.0f64;
    let mut drift = 0.0f64;
    let mut opp = 0.0f64;
    let mut dir = 0.0f64;
    let mut exact = Vec::with_capacity(numeric.configs.len());
    for c in &numeric.configs {
        let e = spec.closed_form(&s0, start.t, c.t);
        for r in 0..2 {
            let d: [f64; 3] = std::array::from_fn(|k| c.positions[r][k] - e[r][k]);
            err = err.max(norm3(&d) / norm3(&e[r]).max(scale));
        }
        let p: [f64; 3] =
            std::array::from_fn(|k| m1 * c.positions[0][k] + m2 * c.positions[1][k] - p0[k]);
        drift = drift.max(norm3(&p));
        if let VelocityEval::Ok(v) = src.velocity(&c.to_flat(&[3, 3]), c.t) {
            let q: [f64; 3] = std::array::from_fn(|k| m1 * v[k] + m2 * v[3 + k]);
            opp = opp.max(norm3(&q));
        }
        if r0n > 0.0 {
            let r: [f64; 3] = std::array::from_fn(|k| c.positions[0][k] - c.positions[1][k]);
            let rn = norm3(&r);
            if rn > 0.0 {
                let d: [f64; 3] = std::array::from_fn(|k| r[k] / rn - r0[k] / r0n);
                dir = dir.max(norm3(&d));
            }
        }
        exact.push(BeableConfig {
            positions: e.to_vec(),
            t: c.t,
        });
    }
    Ok(PairTrajectories {
        closed_form: TrajectoryRecord {
            times: numeric.times.clone(),
            configs: exact,
            status: Status::Ok,
        },
        numeric,
        max_relative_error: err,
        momentum_drift: drift,
        max_opposite_defect: opp,
        direction_drift: dir,
    })
}

/// Starting configurations drawn from |psi(0)|^2 with the centre of mass spread
/// uniformly over a cube of half-width `centre_box`.
pub fn sample_pair_starts(
    spec: &DecayPairSpec,
    n: usize,
    centre_box: f64,
    seed: u64,
) -> Vec<BeableConfig> {
    use rand::Rng;
    let (m1, m2, mu) = (spec.m1, spec.m2, spec.mu());
    let sd = (spec.hbar * spec.alpha).sqrt();
    (0..n)
        .map(|i| {
            let mut rng = stats::rng_stream(seed, i as u64);
            let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(-centre_box..=centre_box));
            let r: [f64; 3] = std::array::from_fn(|_| sd * gauss(&mut rng));
            BeableConfig {
                positions: vec![
                    std::array::from_fn(|k| c[k] + mu / m1 * r[k]),
                    std::array::from_fn(|k| c[k] - mu / m2 * r[k]),
                ],
                t: 0.0,
            }
        })
        .collect()
}

/// Real, inversion-symmetric momentum amplitude F(p1, p2) for one Cartesian component.
#[derive(Clone)]
pub enum MomentumProfile {
    /// exp(-(p1 + p2)^2 / sigma - (p1 - p2)^2 / tau).
    Gaussian {
        sigma: f64,
        tau: f64,
    },
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for MomentumProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Gaussian { sigma, tau } => write!(f, "Gaussian {{ sigma: {sigma}, tau: {tau} }}"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl MomentumProfile {
    pub fn eval(&self, p1: f64, p2: f64) -> f64 {
        match self {
            Self::Gaussian { sigma, tau } => {
                (-(p1 + p2).powi(2) / sigma - (p1 - p2).powi(2) / tau).exp()
            }
            Self::Custom(f) => f(p1, p2),
        }
    }

    fn check_symmetric(&self, half: f64) -> Result<()> {
        if let Self::Gaussian { sigma, tau } = self {
            if !(*sigma > 0.0) || !(*tau > 0.0) {
                return Err(Error::Config("sigma and tau must be positive".into()));
            }
            return Ok(());
        }
        let mut rng = stats::rng_stream(0x5eed, 0);
        for _ in 0..64 {
            use rand::Rng;
            let a = rng.random_range(-half..half);
            let b = rng.random_range(-half..half);
            let (f, g) = (self.eval(a, b), self.eval(-a, -b));
            if (f - g).abs() > 1e-12 * (f.abs() + g.abs()).max(1e-300) {
                return Err(Error::Unsupported(
                    "momentum profile is not inversion symmetric; cross terms would survive".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VarianceSpec {
    pub profile: MomentumProfile,
    pub m1: f64,
    pub m2: f64,
    pub hbar: f64,
    /// Quadrature half-width in momentum.
    pub half_width: f64,
    pub points: usize,
}

impl VarianceSpec {
    pub fn gaussian(sigma: f64, tau: f64, m1: f64, m2: f64, hbar: f64) -> Self {
        Self {
            profile: MomentumProfile::Gaussian { sigma, tau },
            m1,
            m2,
            hbar,
            half_width: 6.0 * sigma.max(tau).sqrt(),
            points: 801,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Var(m1 x1 + m2 x2) at t = 0, per component.
    pub var_x0: f64,
    /// Var(p1 + p2), per component.
    pub var_p: f64,
    pub times: Vec<f64>,
    pub var_x: Vec<f64>,
    pub uncertainty_product: f64,
    /// (hbar / 2)^2 (m1 + m2)^2.
    pub bound: f64,
}

/// Var(m1 x1 + m2 x2)(t) = Var(0) + Var(p1 + p2) t^2 with both variances from F by quadrature.
pub fn variance_evolution(spec: &VarianceSpec, times: &[f64]) -> Result<VarianceReport> {
    spec.profile.check_symmetric(spec.half_width)?;
    let n = spec.points.max(3);
    let h = 2.0 * spec.half_width / (n - 1) as f64;
    let fd = 1e-5 * spec.half_width;
    let (m1, m2) = (spec.m1, spec.m2);
    let (z, pp, dd) = (0..n * n)
        .into_par_iter()
        .map(|f| {
            let (i, j) = (f / n, f % n);
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 }
                * if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            let p1 = -spec.half_width + i as f64 * h;
            let p2 = -spec.half_width + j as f64 * h;
            let fv = spec.profile.eval(p1, p2);
            let d1 = (spec.profile.eval(p1 + fd, p2) - spec.profile.eval(p1 - fd, p2)) / (2.0 * fd);
            let d2 = (spec.profile.eval(p1, p2 + fd) - spec.profile.eval(p1, p2 - fd)) / (2.0 * fd);
            let g = m1 * d1 + m2 * d2;
            (w * fv * fv, w * (p1 + p2).powi(2) * fv * fv, w * g * g)
        })
        .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    if !(z > 0.0) {
        return Err(Error::Normalization(
            "momentum profile vanishes on the quadrature box".into(),
        ));
    }
    let var_p = pp / z;
    let var_x0 = spec.hbar * spec.hbar * dd / z;
    Ok(VarianceReport {
        var_x0,
        var_p,
        times: times.to_vec(),
        var_x: times.iter().map(|t| var_x0 + var_p * t * t).collect(),
        uncertainty_product: var_x0 * var_p,
        bound: 0.25 * spec.hbar * spec.hbar * (m1 + m2).powi(2),
    })
}

/// Position-space Gaussian for one component of the Gaussian profile:
/// psi ~ exp(-x^T B^{-1} x / 4 hbar^2), B = C + i t M^{-1} / 2 hbar.
#[derive(Debug, Clone, Copy)]
pub struct GaussianPair {
    c: Matrix2<f64>,
    m: [f64; 2],
    hbar: f64,
}

impl GaussianPair {
    pub fn new(sigma: f64, tau: f64, m1: f64, m2: f64, hbar: f64) -> Self {
        let (a, b) = (1.0 / sigma + 1.0 / tau, 1.0 / sigma - 1.0 / tau);
        Self {
            c: Matrix2::new(a, b, b, a),
            m: [m1, m2],
            hbar,
        }
    }

    fn binv(&self, t: f64) -> Matrix2<C64> {
        let b = self.c.map(|v| C64::new(v, 0.0))
            + Matrix2::new(
                C64::new(0.0, t / (2.0 * self.hbar * self.m[0])),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, t / (2.0 * self.hbar * self.m[1])),
            );
        b.try_inverse().expect("positive definite real part")
    }

    /// ln |psi|^2 up to a constant.
    pub fn log_density(&self, x: [f64; 2], t: f64) -> f64 {
        let bi = self.binv(t);
        let v = Vector2::new(C64::new(x[0], 0.0), C64::new(x[1], 0.0));
        -2.0 * (v.transpose() * bi * v)[0].re / (4.0 * self.hbar * self.hbar)
    }

    pub fn velocity(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let bi = self.binv(t);
        let g = bi * Vector2::new(C64::new(x[0], 0.0), C64::new(x[1], 0.0));
        let h2 = self.hbar * self.hbar;
        [
            self.hbar / self.m[0] * (-g[0] / (2.0 * h2)).im,
            self.hbar / self.m[1] * (-g[1] / (2.0 * h2)).im,
        ]
    }

    /// Covariance of |psi(0)|^2, which is hbar^2 C.
    pub fn initial_covariance(&self) -> Matrix2<f64> {
        self.c * (self.hbar * self.hbar)
    }
}

/// Sample variance of m1 x1 + m2 x2 at each time from an ensemble transported
/// by the guidance velocity of the Gaussian profile.
pub fn variance_monte_carlo(
    pair: &GaussianPair,
    times: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let g = *pair;
    let [m1, m2] = g.m;
    let l = g
        .initial_covariance()
        .cholesky()
        .ok_or_else(|| Error::Config("profile covariance is not positive definite".into()))?
        .l();
    let src = ClosedForm::new(vec![1, 1], move |x: &[f64], t| {
        VelocityEval::Ok(g.velocity([x[0], x[1]], t).to_vec())
    });
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let dt = (t_max / 200.0).max(1e-6);
    let ends: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stats::rng_stream(seed, i as u64);
            let z = Vector2::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            let x0 = l * z;
            let mut x = vec![x0[0], x0[1]];
            let mut t = 0.0;
            let mut out = Vec::with_capacity(times.len());
            for &tc in times {
                if tc > t {
                    let (xs, _, _) = rk4_flat(&x, t, &src, tc, &Controls::new(dt));
                    x = xs.last().cloned().unwrap_or(x);
                    t = tc;
                }
                out.push(m1 * x[0] + m2 * x[1]);
            }
            out
        })
        .collect();
    Ok((0..times.len())
        .map(|k| stats::variance(&ends.iter().map(|e| e[k]).collect::<Vec<_>>()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KcChoice {
    /// k_c = 2 pi / lambda for a supplied beam wavelength.
    Wavelength { lambda: f64 },
    /// k_c = m c / hbar.
    Compton { mass: f64, hbar: f64, c: f64 },
}

impl KcChoice {
    pub fn k_c(&self) -> f64 {
        match *self {
            KcChoice::Wavelength { lambda } => 2.0 * PI / lambda,
            KcChoice::Compton { mass, hbar, c } => mass * c / hbar,
        }
    }
}

impl Default for KcChoice {
    fn default() -> Self {
        KcChoice::Wavelength { lambda: 351.1e-9 }
    }
}

/// R = L(0)^2 k_c.
pub fn transition_distance(l0: f64, kc: &KcChoice) -> f64 {
    l0 * l0 * kc.k_c()
}

/// Angular deviation estimates for a pair of initial size `l0` and momentum `p`,
/// with the effective mass hbar k_c / c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularEstimates {
    pub l0: f64,
    pub p: f64,
    pub k_c: f64,
    pub hbar: f64,
    pub c: f64,
}

impl AngularEstimates {
    pub fn mass(&self) -> f64 {
        self.hbar * self.k_c / self.c
    }

    /// tan theta ~ L(0) m / (p t).
    pub fn tan_small(&self, t: f64) -> f64 {
        self.l0 * self.mass() / (self.p * t)
    }

    /// tan theta ~ Delta(p1 + p2) / p with Delta(p1 + p2) = hbar / L(0).
    pub fn tan_large(&self) -> f64 {
        self.hbar / (self.l0 * self.p)
    }

    /// T = L(0)^2 k_c / c.
    pub fn crossover(&self) -> f64 {
        self.l0 * self.l0 * self.k_c / self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeCheck {
    pub t: f64,
    pub cell: f64,
    /// Largest distance of a column maximum from m1 x1 + m2 x2 = 0, in cells.
    pub max_offset_cells: f64,
    pub columns: usize,
}

/// Column-wise maxima of |psi|^2 on an (x1, x2) slice compared with the line m1 x1 + m2 x2 = 0.
pub fn ridge_check(pair: &GaussianPair, t: f64, half_width: f64, points: usize) -> RidgeCheck {
    let h = 2.0 * half_width / (points - 1) as f64;
    let coord = |i: usize| -half_width + i as f64 * h;
    let ratio = pair.m[0] / pair.m[1];
    let (worst, cols) = (0..points)
        .into_par_iter()
        .filter_map(|i| {
            let x1 = coord(i);
            let pred = -ratio * x1;
            if pred.abs() > half_width - h {
                return None;
            }
            let best = (0..points)
                .max_by(|&a, &b| {
                    pair.log_density([x1, coord(a)], t)
                        .total_cmp(&pair.log_density([x1, coord(b)], t))
                })
                .expect("non-empty column");
            Some(((coord(best) - pred).abs() / h, 1usize))
        })
        .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
    RidgeCheck {
        t,
        cell: h,
        max_offset_cells: worst,
        columns: cols,
    }
}

/// Thin lens; any two of focal length, object and image distance fix the third.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LensSpec {
    pub focal: f64,
    pub object: f64,
    pub image: f64,
}

impl LensSpec {
    pub fn new(focal: Option<f64>, object: Option<f64>, image: Option<f64>) -> Result<Self> {
        let bad = |v: f64| !(v > 0.0) || !v.is_finite();
        let (f, s, si) = match (focal, object, image) {
            (Some(f), Some(s), Some(si)) => {
                if (1.0 / s + 1.0 / si - 1.0 / f).abs() > 1e-12 * (1.0 / f) {
                    return Err(Error::Config("1/S + 1/S' must equal 1/f".into()));
                }
                (f, s, si)
            }
            (Some(f), Some(s), None) => (f, s, 1.0 / (1.0 / f - 1.0 / s)),
            (Some(f), None, Some(si)) => (f, 1.0 / (1.0 / f - 1.0 / si), si),
            (None, Some(s), Some(si)) => (1.0 / (1.0 / s + 1.0 / si), s, si),
            _ => return Err(Error::Config("lens needs at least two of f, S, S'".into())),
        };
        if bad(f) || bad(s) || bad(si) {
            return Err(Error::Config(
                "lens distances must be positive (real image)".into(),
            ));
        }
        Ok(Self {
            focal: f,
            object: s,
            image: si,
        })
    }

    pub fn magnification(&self) -> f64 {
        -self.image / self.object
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagingSpec {
    pub pair: DecayPairSpec,
    pub lens: LensSpec,
    /// Transverse detection point on the detector-1 plane.
    pub detection: [f64; 2],
    /// Standard deviation of the transverse decay point.
    pub source_spread: f64,
    pub aperture: f64,
    /// Waist of the converging Gaussian behind the lens.
    pub waist: f64,
    pub dt: f64,
}

impl ImagingSpec {
    pub fn validate(&self) -> Result<()> {
        if (self.pair.m1 - self.pair.m2).abs() > 1e-12 * self.pair.m1 {
            return Err(Error::Unsupported(
                "imaging geometry assumes equal masses".into(),
            ));
        }
        if !(self.waist > 0.0)
            || !(self.aperture > 0.0)
            || !(self.dt > 0.0)
            || !(self.source_spread >= 0.0)
        {
            return Err(Error::Config(
                "waist, aperture and dt must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Image point -(S'/S) a.
    pub fn target(&self) -> [f64; 2] {
        let m = self.lens.magnification();
        [m * self.detection[0], m * self.detection[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagingRun {
    pub decay_point: [f64; 3],
    /// Both particles from the decay until particle 2 reaches the lens.
    pub pre_lens: TrajectoryRecord,
    /// Particle 2 from the lens to the image plane.
    pub post_lens: Option<TrajectoryRecord>,
    pub lens_hit: [f64; 2],
    pub endpoint: Option<[f64; 2]>,
    pub status: Status,
    /// Largest distance from the start-to-lens chord over its length.
    pub chord_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagingReport {
    pub runs: Vec<ImagingRun>,
    pub mean_endpoint: [f64; 2],
    pub target: [f64; 2],
    pub offset: f64,
    pub max_chord_deviation: f64,
    pub exited: usize,
}

fn chord_deviation(points: &[[f64; 3]]) -> f64 {
    let (a, b) = (points[0], points[points.len() - 1]);
    let d: [f64; 3] = std::array::from_fn(|k| b[k] - a[k]);
    let len = norm3(&d);
    if len == 0.0 {
        return 0.0;
    }
    points
        .iter()
        .map(|p| {
            let q: [f64; 3] = std::array::from_fn(|k| p[k] - a[k]);
            let s = (q[0] * d[0] + q[1] * d[1] + q[2] * d[2]) / (len * len);
            let r: [f64; 3] = std::array::from_fn(|k| q[k] - s * d[k]);
            norm3(&r)
        })
        .fold(0.0, f64::max)
        / len
}

/// Free transverse Gaussian converging on `target` with waist `w` at lens time `tau_f`.
#[derive(Debug, Clone, Copy)]
struct Converging {
    target: [f64; 2],
    tau_f: f64,
    tau_r: f64,
}

impl Converging {
    fn velocity(&self, x: &[f64], tau: f64) -> [f64; 2] {
        let s = tau - self.tau_f;
        let k = s / (self.tau_r * self.tau_r + s * s);
        std::array::from_fn(|i| {
            let u = self.target[i] / self.tau_f;
            u + (x[i] - u * tau) * k
        })
    }
}

/// One decay followed through the lens. Deterministic for a given `(seed, run)`.
pub fn imaging_run(
    spec: &ImagingSpec,
    src: &WaveVelocity,
    seed: u64,
    run: u64,
) -> Result<ImagingRun> {
    let p = &spec.pair;
    let s = spec.lens.object;
    let mut rng = stats::rng_stream(seed, run);
    let c = [
        spec.source_spread * gauss(&mut rng),
        spec.source_spread * gauss(&mut rng),
        0.5 * s,
    ];
    let a = [spec.detection[0], spec.detection[1], s];
    let dir: [f64; 3] = {
        let d: [f64; 3] = std::array::from_fn(|k| a[k] - c[k]);
        let n = norm3(&d);
        d.map(|v| v / n)
    };
    let g: [f64; 3] = std::array::from_fn(|_| gauss(&mut rng));
    let r0 = (p.hbar * p.alpha).sqrt() * norm3(&g);
    let mu = p.mu();
    let start = BeableConfig {
        positions: vec![
            std::array::from_fn(|k| c[k] + mu / p.m1 * r0 * dir[k]),
            std::array::from_fn(|k| c[k] - mu / p.m2 * r0 * dir[k]),
        ],
        t: 0.0,
    };
    // z2(t) = c_z - (mu / m2) r0 dir_z spread(t) / alpha reaches 0
    let need = c[2] * p.alpha * p.m2 / (mu * r0 * dir[2]);
    if !(need > p.alpha) {
        return Err(Error::Physics(
            "particle 2 starts beyond the lens plane".into(),
        ));
    }
    let t_hit = 2.0 * mu * (need * need - p.alpha * p.alpha).sqrt();
    let mut pre = integrate_trajectory(&start, src, t_hit, &Controls::new(spec.dt));
    if pre.status != Status::Ok {
        return Ok(ImagingRun {
            decay_point: c,
            chord_deviation: 0.0,
            lens_hit: [pre.last().positions[1][0], pre.last().positions[1][1]],
            pre_lens: pre.clone(),
            post_lens: None,
            endpoint: None,
            status: pre.status,
        });
    }
    // land particle 2 on z = 0
    use crate::guide::VelocitySource;
    for _ in 0..3 {
        let last = pre.last().clone();
        let z2 = last.positions[1][2];
        if z2.abs() < 1e-13 * s {
            break;
        }
        if let VelocityEval::Ok(v) = src.velocity(&last.to_flat(&[3, 3]), last.t) {
            let dt = -z2 / v[5];
            let step = integrate_trajectory(
                &last,
                src,
                last.t + dt,
                &Controls::new(dt.abs().max(1e-300)),
            );
            let fin = step.last().clone();
            if let Some(l) = pre.configs.last_mut() {
                if dt.abs() < 1e-9 * spec.dt {
                    *l = fin.clone();
                    pre.times.pop();
                    pre.times.push(fin.t);
                    continue;
                }
            }
            pre.times.push(fin.t);
            pre.configs.push(fin);
        }
    }
    let p2: Vec<[f64; 3]> = pre.configs.iter().map(|c| c.positions[1]).collect();
    let p1: Vec<[f64; 3]> = pre.configs.iter().map(|c| c.positions[0]).collect();
    let chord = chord_deviation(&p2).max(chord_deviation(&p1));
    let at_lens = pre.last().clone();
    let hit = [at_lens.positions[1][0], at_lens.positions[1][1]];
    if (hit[0] * hit[0] + hit[1] * hit[1]).sqrt() > spec.aperture {
        return Ok(ImagingRun {
            decay_point: c,
            pre_lens: pre,
            post_lens: None,
            lens_hit: hit,
            endpoint: None,
            status: Status::Exited,
            chord_deviation: chord,
        });
    }
    // guidance by the collapsed wave centred on the detection point
    let collapsed = WaveFunction::parametric(
        Family::CollapsedPair {
            alpha: p.alpha,
            a: a.to_vec(),
        },
        &[3],
        &[p.m2],
        p.hbar,
    )?;
    let cv = WaveVelocity::new(collapsed, SpinSpec::new(0, p.hbar)?);
    let vz = match cv.velocity(&at_lens.positions[1], at_lens.t) {
        VelocityEval::Ok(v) => -v[2],
        _ => return Err(Error::Node(0.0)),
    };
    if !(vz > 0.0) {
        return Err(Error::Physics(
            "partner is not moving towards the lens".into(),
        ));
    }
    let tau_f = spec.lens.image / vz;
    let conv = Converging {
        target: spec.target(),
        tau_f,
        tau_r: 2.0 * p.m2 * spec.waist * spec.waist / p.hbar,
    };
    let field = ClosedForm::new(vec![2], move |x: &[f64], tau| {
        VelocityEval::Ok(conv.velocity(x, tau).to_vec())
    });
    let steps = (tau_f / spec.dt).ceil().max(1.0);
    let (xs, taus, st) = rk4_flat(&hit, 0.0, &field, tau_f, &Controls::new(tau_f / steps));
    let configs: Vec<BeableConfig> = xs
        .iter()
        .zip(&taus)
        .map(|(x, &tau)| BeableConfig {
            positions: vec![[x[0], x[1], -vz * tau]],
            t: at_lens.t + tau,
        })
        .collect();
    let end = xs.last().map(|x| [x[0], x[1]]);
    Ok(ImagingRun {
        decay_point: c,
        pre_lens: pre,
        post_lens: Some(TrajectoryRecord {
            times: configs.iter().map(|c| c.t).collect(),
            configs,
            status: st,
        }),
        lens_hit: hit,
        endpoint: end,
        status: st,
        chord_deviation: chord,
    })
}

/// Ensemble of decays imaged through the lens.
pub fn imaging_trajectories(spec: &ImagingSpec, n: usize, seed: u64) -> Result<ImagingReport> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    let src = pair_source(&spec.pair)?;
    let runs: Vec<ImagingRun> = (0..n as u64)
        .into_par_iter()
        .map(|r| imaging_run(spec, &src, seed, r))
        .collect::<Result<_>>()?;
    let ends: Vec<[f64; 2]> = runs.iter().filter_map(|r| r.endpoint).collect();
    let k = ends.len().max(1) as f64;
    let mean = [
        ends.iter().map(|e| e[0]).sum::<f64>() / k,
        ends.iter().map(|e| e[1]).sum::<f64>() / k,
    ];
    let target = spec.target();
    Ok(ImagingReport {
        offset: ((mean[0] - target[0]).powi(2) + (mean[1] - target[1]).powi(2)).sqrt(),
        max_chord_deviation: runs.iter().map(|r| r.chord_deviation).fold(0.0, f64::max),
        exited: runs.iter().filter(|r| r.status == Status::Exited).count(),
        mean_endpoint: mean,
        target,
        runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyShellSpec {
    pub e_plus: f64,
    pub e_minus: f64,
    pub m1: f64,
    pub m2: f64,
    pub hbar: f64,
}

impl EnergyShellSpec {
    pub fn new(e_plus: f64, e_minus: f64, m1: f64, m2: f64, hbar: f64) -> Result<Self> {
        if !(e_minus > 0.0) || !(e_plus > e_minus) {
            return Err(Error::Config("need 0 < E- < E+".into()));
        }
        if !(m1 > 0.0) || !(m2 > 0.0) || !(hbar > 0.0) {
            return Err(Error::Config("masses and hbar must be positive".into()));
        }
        Ok(Self {
            e_plus,
            e_minus,
            m1,
            m2,
            hbar,
        })
    }

    /// Equal masses m with E+ = fraction m c^2 and E- = ratio E+.
    pub fn rest_energy_fraction(
        fraction: f64,
        ratio: f64,
        m: f64,
        hbar: f64,
        c: f64,
    ) -> Result<Self> {
        let ep = fraction * m * c * c;
        Self::new(ep, ratio * ep, m, m, hbar)
    }

    pub fn mu(&self) -> f64 {
        self.m1 * self.m2 / (self.m1 + self.m2)
    }

    /// (a+, a-) = 2 pi sqrt(2 mu E+-) / hbar.
    pub fn a(&self) -> (f64, f64) {
        let f = |e: f64| 2.0 * PI * (2.0 * self.mu() * e).sqrt() / self.hbar;
        (f(self.e_plus), f(self.e_minus))
    }

    pub fn g0(&self) -> f64 {
        let (ap, am) = self.a();
        0.5 * (ap * ap - am * am)
    }
}

/// g(x) = [a+ J1(a+ x) - a- J1(a- x)] / x with its limit near the origin.
pub fn energy_shell_density(spec: &EnergyShellSpec, x: f64) -> (f64, f64) {
    let (ap, am) = spec.a();
    let g = if x.abs() < 1e-8 / ap {
        spec.g0()
    } else {
        (ap * libm::j1(ap * x) - am * libm::j1(am * x)) / x
    };
    (g, g * g)
}

/// Trapezoid integral of g(x)^2 x^2 over [0, upper].
pub fn shell_moment(spec: &EnergyShellSpec, upper: f64, points: usize) -> f64 {
    let xs: Vec<f64> = (0..points)
        .map(|i| upper * i as f64 / (points - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| energy_shell_density(spec, x).1 * x * x)
        .collect();
    stats::trapezoid(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> DecayPairSpec {
        DecayPairSpec::new(1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn total_momentum_annihilates_pair() {
        let s = spec();
        let h = 1e-5;
        let x1 = [0.3, -0.2, 0.1];
        let x2 = [-0.4, 0.5, 0.2];
        for k in 0..3 {
            let mut a1 = x1;
            let mut a2 = x2;
            let mut b1 = x1;
            let mut b2 = x2;
            a1[k] += h;
            a2[k] += h;
            b1[k] -= h;
            b2[k] -= h;
            let d = (pair_wavefunction(&s, a1, a2, 0.7).unwrap()
                - pair_wavefunction(&s, b1, b2, 0.7).unwrap())
                / (2.0 * h);
            assert!(d.norm() < 1e-8);
        }
    }

    #[test]
    fn coincident_start_is_static() {
        let start = BeableConfig {
            positions: vec![[0.2, 0.0, 0.0], [0.2, 0.0, 0.0]],
            t: 0.0,
        };
        let r = pair_trajectories(&spec(), &start, 10.0, &Controls::new(0.1)).unwrap();
        assert!(r.numeric.last().positions[0] == [0.2, 0.0, 0.0]);
    }

    #[test]
    fn symmetric_start_moves_apart() {
        let start = BeableConfig {
            positions: vec![[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]],
            t: 0.0,
        };
        let r = pair_trajectories(&spec(), &start, 10.0, &Controls::new(0.05)).unwrap();
        assert!(r.max_relative_error < 1e-6);
        assert!(r.momentum_drift < 1e-12);
        let e = r.numeric.last();
        assert!(e.positions[0][0] > 0.5 && (e.positions[0][0] + e.positions[1][0]).abs() < 1e-12);
    }

    #[test]
    fn gaussian_variance_matches_closed_form() {
        let (sg, tu, m1, m2) = (0.3, 2.0, 1.0, 1.7);
        let r =
            variance_evolution(&VarianceSpec::gaussian(sg, tu, m1, m2, 1.0), &[0.0, 2.0]).unwrap();
        assert!((r.var_p - sg / 4.0).abs() < 1e-6);
        let vx = (m1 + m2).powi(2) / sg + (m1 - m2).powi(2) / tu;
        assert!((r.var_x0 - vx).abs() < 1e-5 * vx);
        assert_eq!(r.var_x[0], r.var_x0);
        assert!(r.uncertainty_product >= r.bound * (1.0 - 1e-9));
    }

    #[test]
    fn asymmetric_profile_rejected() {
        let s = VarianceSpec {
            profile: MomentumProfile::Custom(Arc::new(|a: f64, b: f64| {
                (-(a - 0.5).powi(2) - b * b).exp()
            })),
            m1: 1.0,
            m2: 1.0,
            hbar: 1.0,
            half_width: 5.0,
            points: 101,
        };
        assert!(matches!(
            variance_evolution(&s, &[1.0]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn lens_third_distance() {
        let l = LensSpec::new(Some(1.0), Some(2.0), None).unwrap();
        assert!((l.image - 2.0).abs() < 1e-12);
        assert!(LensSpec::new(Some(1.0), Some(2.0), Some(3.0)).is_err());
    }

    #[test]
    fn shell_limit_is_continuous() {
        let s = EnergyShellSpec::new(1.0, 0.9, 1.0, 1.0, 1.0).unwrap();
        let (ap, _) = s.a();
        let near = energy_shell_density(&s, 1e-5 / ap).0;
        assert!((near - s.g0()).abs() < 1e-8 * s.g0().abs());
    }

    #[test]
    fn shell_profile_peaks_at_origin() {
        let s = EnergyShellSpec::rest_energy_fraction(0.02, 0.999, 1.0, 1.0, 1.0).unwrap();
        let lc = 2.0 * PI;
        let g0 = energy_shell_density(&s, 0.0).1;
        assert!((1..5000).all(|i| energy_shell_density(&s, 50.0 * lc * i as f64 / 5000.0).1 <= g0));
    }

    proptest! {
        #[test]
        fn opposite_velocities(x1 in proptest::array::uniform3(-3.0..3.0f64), x2 in proptest::array::uniform3(-3.0..3.0f64),
                               m1 in 0.2..3.0f64, m2 in 0.2..3.0f64, t in 0.0..10.0f64) {
            use crate::guide::VelocitySource;
            let s = DecayPairSpec::new(0.8, m1, m2, 1.0).unwrap();
            let src = pair_source(&s).unwrap();
            let x: Vec<f64> = x1.iter().chain(&x2).copied().collect();
            if let VelocityEval::Ok(v) = src.velocity(&x, t) {
                for k in 0..3 {
                    prop_assert!((m1 * v[k] + m2 * v[3 + k]).abs() < 1e-10 * (1.0 + v[k].abs() * m1));
                }
            }
        }

        #[test]
        fn heisenberg_bound(sg in 0.05..5.0f64, tu in 0.05..5.0f64, m1 in 0.3..3.0f64, m2 in 0.3..3.0f64) {
            let mut s = VarianceSpec::gaussian(sg, tu, m1, m2, 1.0);
            s.points = 301;
            let r = variance_evolution(&s, &[]).unwrap();
            prop_assert!(r.uncertainty_product >= r.bound * (1.0 - 1e-3));
        }
    }
}
