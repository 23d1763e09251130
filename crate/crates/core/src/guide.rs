//! Equilibrium sampling, trajectory integration and ensemble diagnostics.
//!
//! The mean arrival time implemented here weights times by `|j|` at the
//! detector. Other arrival-time definitions exist and give different answers;
//! this is one model-dependent choice.

use crate::currents::{current, node_currents, EmPotential, SpinSpec};
use crate::error::{Error, Result};
use crate::evolve::{propagate_to, Propagator};
use crate::grid::Grid;
use crate::stats::{self, TabulatedCdf};
use crate::wavefunction::{Representation, WaveFunction, C64};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeableConfig {
    pub positions: Vec<[f64; 3]>,
    pub t: f64,
}

impl BeableConfig {
    pub fn from_flat(x: &[f64], dims: &[usize], t: f64) -> Self {
        let mut off = 0;
        let positions = dims
            .iter()
            .map(|&d| {
                let p = std::array::from_fn(|k| if k < d { x[off + k] } else { 0.0 });
                off += d;
                p
            })
            .collect();
        Self { positions, t }
    }

    pub fn to_flat(&self, dims: &[usize]) -> Vec<f64> {
        self.positions
            .iter()
            .zip(dims)
            .flat_map(|(p, &d)| p[..d].to_vec())
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<BeableConfig>,
    pub seed: u64,
    pub rng: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NodeEncounter,
    Exited,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::NodeEncounter => "node_encounter",
            Status::Exited => "exited",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub configs: Vec<BeableConfig>,
    pub status: Status,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &BeableConfig {
        self.configs.last().expect("record holds the start point")
    }
}

/// Velocity at a configuration point, laid out like the point itself.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityEval {
    Ok(Vec<f64>),
    Node,
    Exited,
}

pub trait VelocitySource: Sync {
    fn dims(&self) -> &[usize];
    fn velocity(&self, x: &[f64], t: f64) -> VelocityEval;
}

/// Closed-form velocity field supplied as a function.
pub struct ClosedForm<F> {
    dims: Vec<usize>,
    f: F,
}

impl<F> ClosedForm<F>
where
    F: Fn(&[f64], f64) -> VelocityEval + Sync,
{
    pub fn new(dims: Vec<usize>, f: F) -> Self {
        Self { dims, f }
    }
}

impl<F> VelocitySource for ClosedForm<F>
where
    F: Fn(&[f64], f64) -> VelocityEval + Sync,
{
    fn dims(&self) -> &[usize] {
        &self.dims
    }
    fn velocity(&self, x: &[f64], t: f64) -> VelocityEval {
        (self.f)(x, t)
    }
}

fn flatten_velocity(j: &[[f64; 3]], rho: f64, dims: &[usize], scale: f64) -> Vec<f64> {
    j.iter()
        .zip(dims)
        .flat_map(|(v, &d)| v[..d].iter().map(move |c| scale * c / rho))
        .collect()
}

/// `j / rho` of a parametric wavefunction evaluated at any time.
#[derive(Debug, Clone)]
pub struct WaveVelocity {
    pub psi: WaveFunction,
    pub spin: SpinSpec,
    pub em: Option<EmPotential>,
    /// Multiplies every velocity; 1 except in negative controls.
    pub scale: f64,
    pub rho_floor: f64,
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl WaveVelocity {
    pub fn new(psi: WaveFunction, spin: SpinSpec) -> Self {
        Self {
            psi,
            spin,
            em: None,
            scale: 1.0,
            rho_floor: 0.0,
            bounds: None,
        }
    }
}

fn outside(bounds: &Option<Vec<(f64, f64)>>, x: &[f64]) -> bool {
    bounds
        .as_ref()
        .is_some_and(|b| x.iter().zip(b).any(|(&v, &(lo, hi))| v < lo || v > hi))
}

impl VelocitySource for WaveVelocity {
    fn dims(&self) -> &[usize] {
        self.psi.dims()
    }
    fn velocity(&self, x: &[f64], t: f64) -> VelocityEval {
        if outside(&self.bounds, x) {
            return VelocityEval::Exited;
        }
        match current(&self.psi, &self.spin, self.em.as_ref(), x, t) {
            Ok(c) if c.rho > self.rho_floor && c.rho.is_finite() => {
                let v = flatten_velocity(&c.j, c.rho, self.psi.dims(), self.scale);
                if v.iter().all(|c| c.is_finite()) {
                    VelocityEval::Ok(v)
                } else {
                    VelocityEval::Node
                }
            }
            Ok(_) => VelocityEval::Node,
            Err(Error::Domain { .. }) => VelocityEval::Exited,
            Err(_) => VelocityEval::Node,
        }
    }
}

/// Velocity from precomputed grid snapshots: density and current are
/// interpolated multilinearly in space and linearly in time, then divided.
#[derive(Debug, Clone)]
pub struct SnapshotVelocity {
    grid: Arc<Grid>,
    times: Vec<f64>,
    rho: Vec<Vec<f64>>,
    /// `j[snapshot][axis][node]` in configuration-axis layout.
    j: Vec<Vec<Vec<f64>>>,
    rho_max: Vec<f64>,
    pub scale: f64,
    /// Relative density floor; nodes are declared below `floor * max rho`.
    pub floor: f64,
}

impl SnapshotVelocity {
    pub fn new(
        snapshots: &[WaveFunction],
        spin: &SpinSpec,
        em: Option<&EmPotential>,
    ) -> Result<Self> {
        let first = snapshots
            .first()
            .ok_or_else(|| Error::Config("no snapshots".into()))?;
        let grid = first
            .field()
            .ok_or_else(|| Error::Unsupported("snapshot velocity needs grid states".into()))?
            .grid
            .clone();
        if snapshots.windows(2).any(|w| w[1].time() <= w[0].time()) {
            return Err(Error::Config("snapshot times must increase".into()));
        }
        let dims = grid.dims().to_vec();
        let mut rho = Vec::new();
        let mut j = Vec::new();
        for s in snapshots {
            if s.grid() != Some(grid.as_ref()) {
                return Err(Error::Shape("snapshots on different grids".into()));
            }
            let nc = node_currents(s, spin, em)?;
            let mut axes = Vec::new();
            for (r, &d) in dims.iter().enumerate() {
                for k in 0..d {
                    axes.push(nc.j[r].iter().map(|v| v[k]).collect());
                }
            }
            rho.push(nc.rho);
            j.push(axes);
        }
        let rho_max = rho
            .iter()
            .map(|r| r.iter().cloned().fold(0.0, f64::max))
            .collect();
        Ok(Self {
            grid,
            times: snapshots.iter().map(|s| s.time()).collect(),
            rho,
            j,
            rho_max,
            scale: 1.0,
            floor: 1e-12,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

impl VelocitySource for SnapshotVelocity {
    fn dims(&self) -> &[usize] {
        self.grid.dims()
    }
    fn velocity(&self, x: &[f64], t: f64) -> VelocityEval {
        let st = match self.grid.stencil(x) {
            Ok(s) => s,
            Err(_) => return VelocityEval::Exited,
        };
        let n = self.times.len();
        let (i0, w1) = if n == 1 || t <= self.times[0] {
            (0, 0.0)
        } else if t >= self.times[n - 1] {
            (n - 1, 0.0)
        } else {
            let i = self.times.partition_point(|&s| s <= t) - 1;
            (i, (t - self.times[i]) / (self.times[i + 1] - self.times[i]))
        };
        let interp = |f: &[f64]| st.iter().map(|&(p, w)| f[p] * w).sum::<f64>();
        let mut rho = (1.0 - w1) * interp(&self.rho[i0]);
        let mut rmax = (1.0 - w1) * self.rho_max[i0];
        let na = self.grid.n_axes();
        let mut j: Vec<f64> = self.j[i0].iter().map(|a| (1.0 - w1) * interp(a)).collect();
        if w1 > 0.0 {
            rho += w1 * interp(&self.rho[i0 + 1]);
            rmax += w1 * self.rho_max[i0 + 1];
            for (k, jk) in j.iter_mut().enumerate().take(na) {
                *jk += w1 * interp(&self.j[i0 + 1][k]);
            }
        }
        if !(rho > self.floor * rmax) {
            return VelocityEval::Node;
        }
        let v: Vec<f64> = j.iter().map(|c| self.scale * c / rho).collect();
        if v.iter().all(|c| c.is_finite()) {
            VelocityEval::Ok(v)
        } else {
            VelocityEval::Node
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    /// Fixed RK4 step.
    pub dt: f64,
    /// Keep every k-th step in the record (the final point is always kept).
    pub record_every: usize,
}

impl Controls {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            record_every: 1,
        }
    }

    /// min(dt_snapshot / 4, dx / (4 v_max)).
    pub fn for_snapshots(dt_snapshot: f64, dx: f64, v_max: f64) -> Self {
        let h = if v_max > 0.0 {
            (dt_snapshot / 4.0).min(dx / (4.0 * v_max))
        } else {
            dt_snapshot / 4.0
        };
        Self::new(h)
    }
}

/// Fixed-step RK4 along the velocity field, landing exactly on `t_final`.
pub fn integrate_trajectory(
    start: &BeableConfig,
    src: &dyn VelocitySource,
    t_final: f64,
    controls: &Controls,
) -> TrajectoryRecord {
    let dims = src.dims().to_vec();
    let x0 = start.to_flat(&dims);
    let (xs, times, status) = rk4_flat(&x0, start.t, src, t_final, controls);
    let configs = xs
        .iter()
        .zip(&times)
        .map(|(x, &t)| BeableConfig::from_flat(x, &dims, t))
        .collect();
    TrajectoryRecord {
        times,
        configs,
        status,
    }
}

fn axpy(x: &[f64], h: f64, v: &[f64]) -> Vec<f64> {
    x.iter().zip(v).map(|(a, b)| a + h * b).collect()
}

/// Raw RK4 returning recorded points, their times and the final status.
pub fn rk4_flat(
    x0: &[f64],
    t0: f64,
    src: &dyn VelocitySource,
    t_final: f64,
    controls: &Controls,
) -> (Vec<Vec<f64>>, Vec<f64>, Status) {
    let mut xs = vec![x0.to_vec()];
    let mut ts = vec![t0];
    let eval = |x: &[f64], t: f64| -> std::result::Result<Vec<f64>, Status> {
        match src.velocity(x, t) {
            VelocityEval::Ok(v) => Ok(v),
            VelocityEval::Node => Err(Status::NodeEncounter),
            VelocityEval::Exited => Err(Status::Exited),
        }
    };
    let mut x = x0.to_vec();
    let mut t = t0;
    let h0 = controls.dt;
    let every = controls.record_every.max(1);
    let mut k = 0usize;
    let eps = 1e-12 * (1.0 + t_final.abs());
    if let Err(s) = eval(&x, t) {
        return (xs, ts, s);
    }
    while t_final - t > eps {
        let h = (t_final - t).min(h0);
        let step = (|| {
            let k1 = eval(&x, t)?;
            let k2 = eval(&axpy(&x, 0.5 * h, &k1), t + 0.5 * h)?;
            let k3 = eval(&axpy(&x, 0.5 * h, &k2), t + 0.5 * h)?;
            let k4 = eval(&axpy(&x, h, &k3), t + h)?;
            Ok::<_, Status>(
                (0..x.len())
                    .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect::<Vec<f64>>(),
            )
        })();
        match step {
            Ok(nx) => {
                x = nx;
                t = if t_final - (t + h) <= eps {
                    t_final
                } else {
                    t + h
                };
                k += 1;
                if k % every == 0 || t == t_final {
                    xs.push(x.clone());
                    ts.push(t);
                }
            }
            Err(s) => {
                if ts.last() != Some(&t) {
                    xs.push(x.clone());
                    ts.push(t);
                }
                return (xs, ts, s);
            }
        }
    }
    (xs, ts, Status::Ok)
}

/// Integrate every member in parallel; results keep member order.
pub fn integrate_ensemble(
    starts: &[BeableConfig],
    src: &dyn VelocitySource,
    t_final: f64,
    controls: &Controls,
) -> Vec<TrajectoryRecord> {
    starts
        .par_iter()
        .map(|s| integrate_trajectory(s, src, t_final, controls))
        .collect()
}

/// True when 1-D trajectories keep their initial ordering at every recorded index.
pub fn order_preserved(records: &[TrajectoryRecord]) -> bool {
    let len = records.iter().map(|r| r.configs.len()).min().unwrap_or(0);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a].configs[0].positions[0][0].total_cmp(&records[b].configs[0].positions[0][0])
    });
    (0..len).all(|i| {
        order.windows(2).all(|w| {
            records[w[0]].configs[i].positions[0][0] <= records[w[1]].configs[i].positions[0][0]
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Envelope {
    Auto,
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub envelope: Envelope,
    pub pilot: usize,
    pub chunk: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            envelope: Envelope::Auto,
            pilot: 8192,
            chunk: 512,
        }
    }
}

enum Env {
    Uniform,
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
}

impl Env {
    fn weight(&self, x: &[f64]) -> f64 {
        match self {
            Env::Uniform => 1.0,
            Env::Gaussian { mean, sd } => (-0.5
                * x.iter()
                    .zip(mean.iter().zip(sd))
                    .map(|(v, (m, s))| ((v - m) / s).powi(2))
                    .sum::<f64>())
            .exp(),
        }
    }

    fn propose(&self, bounds: &[(f64, f64)], rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Env::Uniform => bounds
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..hi))
                .collect(),
            Env::Gaussian { mean, sd } => loop {
                let x: Vec<f64> = mean
                    .iter()
                    .zip(sd)
                    .map(|(&m, &s)| Normal::new(m, s).expect("positive sd").sample(rng))
                    .collect();
                if x.iter()
                    .zip(bounds)
                    .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
                {
                    return x;
                }
            },
        }
    }
}

const PILOT_STREAM: u64 = u64::MAX;

/// Accepted draws and proposal count, or the offending ratio (negative: acceptance rate).
type ChunkOutcome = std::result::Result<(Vec<Vec<f64>>, u64), f64>;

type CdfAt = Box<dyn Fn(f64) -> Result<Vec<TabulatedCdf>>>;

/// Rejection sampling from an unnormalised density on a box. Deterministic for a
/// given seed regardless of thread count.
pub fn sample_density(
    density: &(dyn Fn(&[f64]) -> f64 + Sync),
    bounds: &[(f64, f64)],
    n: usize,
    seed: u64,
    opts: &SamplerOptions,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    if bounds.iter().any(|&(lo, hi)| !(hi > lo)) {
        return Err(Error::Config(
            "sampling box needs max > min on every axis".into(),
        ));
    }
    let d = bounds.len();
    let mut rng = stats::rng_stream(seed, PILOT_STREAM);
    let pilot: Vec<(Vec<f64>, f64)> = (0..opts.pilot.max(16))
        .map(|_| {
            let x: Vec<f64> = bounds
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..hi))
                .collect();
            let r = density(&x);
            (x, r)
        })
        .collect();
    let wsum: f64 = pilot.iter().map(|p| p.1).sum();
    if !(wsum > 0.0) {
        return Err(Error::SamplerFailure { rate: 0.0 });
    }
    let mean: Vec<f64> = (0..d)
        .map(|k| pilot.iter().map(|(x, r)| x[k] * r).sum::<f64>() / wsum)
        .collect();
    let sd: Vec<f64> = (0..d)
        .map(|k| {
            let v = pilot
                .iter()
                .map(|(x, r)| (x[k] - mean[k]).powi(2) * r)
                .sum::<f64>()
                / wsum;
            let w = bounds[k].1 - bounds[k].0;
            (1.5 * v.sqrt()).max(w * 1e-3)
        })
        .collect();
    let use_gauss = match opts.envelope {
        Envelope::Gaussian => true,
        Envelope::Uniform => false,
        Envelope::Auto => sd
            .iter()
            .zip(bounds)
            .any(|(s, &(lo, hi))| *s < 0.25 * (hi - lo)),
    };
    let env = if use_gauss {
        Env::Gaussian { mean, sd }
    } else {
        Env::Uniform
    };
    let mut m = 1.2
        * pilot
            .iter()
            .map(|(x, r)| r / env.weight(x))
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
    let chunk = opts.chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    for _restart in 0..30 {
        let results: Vec<ChunkOutcome> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let want = chunk.min(n - c * chunk);
                let mut rng = stats::rng_stream(seed, c as u64);
                let mut out = Vec::with_capacity(want);
                let mut proposals = 0u64;
                let mut worst = 0.0f64;
                while out.len() < want {
                    let x = env.propose(bounds, &mut rng);
                    proposals += 1;
                    let ratio = density(&x) / env.weight(&x);
                    if ratio > m {
                        worst = worst.max(ratio);
                    }
                    if rng.random::<f64>() * m < ratio {
                        out.push(x);
                    }
                    if proposals > 100_000 && (out.len() as f64) < 1e-4 * proposals as f64 {
                        return Err(-(out.len() as f64 / proposals as f64));
                    }
                }
                if worst > 0.0 {
                    Err(worst)
                } else {
                    Ok((out, proposals))
                }
            })
            .collect();
        let mut worst = 0.0f64;
        for r in &results {
            match r {
                Err(w) if *w <= 0.0 => return Err(Error::SamplerFailure { rate: -w }),
                Err(w) => worst = worst.max(*w),
                Ok(_) => {}
            }
        }
        if worst > 0.0 {
            log::debug!("envelope bound {m:.3e} exceeded ({worst:.3e}); restarting");
            m = 1.2 * worst;
            continue;
        }
        let mut all = Vec::with_capacity(n);
        for (chunk, _) in results.into_iter().flatten() {
            all.extend(chunk);
        }
        return Ok(all);
    }
    Err(Error::SamplerFailure { rate: 0.0 })
}

/// Draw `n` configurations from |psi|^2. Grid states use their own extents;
/// parametric states need `bounds`.
pub fn sample_equilibrium(
    psi: &WaveFunction,
    bounds: Option<&[(f64, f64)]>,
    n: usize,
    seed: u64,
) -> Result<Ensemble> {
    let b: Vec<(f64, f64)> = match (bounds, psi.grid()) {
        (Some(b), _) => b.to_vec(),
        (None, Some(g)) => g.axes().iter().map(|a| (a.min, a.max)).collect(),
        (None, None) => {
            return Err(Error::Config(
                "parametric states need a sampling box".into(),
            ))
        }
    };
    if b.len() != psi.n_axes() {
        return Err(Error::Shape(
            "sampling box does not match configuration space".into(),
        ));
    }
    let dens = |x: &[f64]| psi.density(x).unwrap_or(0.0);
    let xs = sample_density(&dens, &b, n, seed, &SamplerOptions::default())?;
    Ok(Ensemble {
        members: xs
            .iter()
            .map(|x| BeableConfig::from_flat(x, psi.dims(), psi.time()))
            .collect(),
        seed,
        rng: stats::RNG_NAME.into(),
    })
}

/// Per-axis marginal CDFs of a density on a box by tensor trapezoid quadrature.
pub fn marginal_cdfs(
    density: &(dyn Fn(&[f64]) -> f64 + Sync),
    bounds: &[(f64, f64)],
    points: usize,
) -> Vec<TabulatedCdf> {
    let d = bounds.len();
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            (0..points)
                .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
                .collect()
        })
        .collect();
    let total = points.pow(d as u32);
    let w = |i: usize| if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
    let partial: Vec<Vec<Vec<f64>>> = (0..total)
        .into_par_iter()
        .fold(
            || vec![vec![0.0; points]; d],
            |mut acc, flat| {
                let mut idx = vec![0; d];
                let mut f = flat;
                for k in (0..d).rev() {
                    idx[k] = f % points;
                    f /= points;
                }
                let x: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| axes[k][i]).collect();
                let r = density(&x);
                for k in 0..d {
                    let others: f64 = (0..d).filter(|&o| o != k).map(|o| w(idx[o])).product();
                    acc[k][idx[k]] += r * others;
                }
                acc
            },
        )
        .collect();
    let mut m = vec![vec![0.0; points]; d];
    for p in partial {
        for k in 0..d {
            for i in 0..points {
                m[k][i] += p[k][i];
            }
        }
    }
    (0..d)
        .map(|k| TabulatedCdf::from_density(axes[k].clone(), &m[k]))
        .collect()
}

/// Per-axis marginal CDFs of |psi|^2 for a grid state, summed over the grid nodes.
pub fn grid_marginal_cdfs(psi: &WaveFunction) -> Result<Vec<TabulatedCdf>> {
    let field = psi
        .field()
        .ok_or_else(|| Error::Unsupported("grid marginals need a grid state".into()))?;
    let g = &field.grid;
    let n = g.len();
    let na = g.n_axes();
    let mut m: Vec<Vec<f64>> = g.axes().iter().map(|a| vec![0.0; a.points]).collect();
    let mut idx = vec![0; na];
    for p in 0..n {
        g.unravel(p, &mut idx);
        let r: f64 = (0..psi.spin_dim())
            .map(|c| field.component(c)[p].norm_sqr())
            .sum();
        for k in 0..na {
            m[k][idx[k]] += r;
        }
    }
    Ok((0..na)
        .map(|k| {
            let xs = (0..g.axes()[k].points)
                .map(|i| g.axes()[k].coord(i))
                .collect();
            TabulatedCdf::from_density(xs, &m[k])
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub t_check: f64,
    pub n: usize,
    pub ks: Vec<f64>,
    pub critical: f64,
    pub lost: usize,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct EquivarianceOptions {
    pub seed: u64,
    /// Sampling and quadrature box for parametric states.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub quad_points: usize,
    /// RK4 step; defaults to a fraction of the propagator step.
    pub traj_dt: Option<f64>,
    /// Multiplies the velocity field; anything but 1 is a negative control.
    pub velocity_scale: f64,
}

impl Default for EquivarianceOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            bounds: None,
            quad_points: 241,
            traj_dt: None,
            velocity_scale: 1.0,
        }
    }
}

/// Compare KS statistics of transported samples against reference marginals.
pub fn ks_report(
    positions: &[Vec<f64>],
    lost: usize,
    n: usize,
    cdfs: &[TabulatedCdf],
    t: f64,
) -> EquivarianceReport {
    let ks: Vec<f64> = cdfs
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let col: Vec<f64> = positions.iter().map(|x| x[k]).collect();
            stats::ks_statistic(&col, |v| c.eval(v))
        })
        .collect();
    let critical = stats::ks_critical_1pct(positions.len().max(1));
    let pass = ks.iter().all(|&k| k < critical) && (lost as f64) <= 1e-3 * n as f64;
    EquivarianceReport {
        t_check: t,
        n,
        ks,
        critical,
        lost,
        pass,
    }
}

/// Sample at the initial time, transport the ensemble with the guidance
/// velocity and compare each axis with the marginal of |psi(t)|^2.
pub fn equivariance_check(
    psi0: &WaveFunction,
    prop: &Propagator,
    n: usize,
    t_checks: &[f64],
    opts: &EquivarianceOptions,
) -> Result<Vec<EquivarianceReport>> {
    if n < 1000 {
        return Err(Error::Config("equivariance needs n >= 1000".into()));
    }
    let t0 = psi0.time();
    let t_max = t_checks.iter().cloned().fold(t0, f64::max);
    let dims = psi0.dims().to_vec();
    let ensemble = sample_equilibrium(psi0, opts.bounds.as_deref(), n, opts.seed)?;
    let (src, cdf_at): (Box<dyn VelocitySource>, CdfAt) = match psi0.representation() {
        Representation::Parametric(_) => {
            let bounds = opts
                .bounds
                .clone()
                .ok_or_else(|| Error::Config("parametric states need a box".into()))?;
            if bounds.len() > 3 {
                return Err(Error::Unsupported(
                    "tensor quadrature is limited to three axes".into(),
                ));
            }
            let mut wv = WaveVelocity::new(psi0.clone(), prop.spin.clone());
            wv.scale = opts.velocity_scale;
            let psi = psi0.clone();
            let q = opts.quad_points;
            (
                Box::new(wv),
                Box::new(move |t| {
                    let p = psi.at_time(t)?;
                    Ok(marginal_cdfs(&|x| p.density(x).unwrap_or(0.0), &bounds, q))
                }),
            )
        }
        Representation::Grid(_) => {
            let steps = ((t_max - t0) / prop.dt).round().max(1.0) as usize;
            let times: Vec<f64> = (0..=steps)
                .map(|i| t0 + (t_max - t0) * i as f64 / steps as f64)
                .collect();
            let snaps = propagate_to(psi0, prop, t_max, &times)?;
            let mut sv = SnapshotVelocity::new(&snaps, &prop.spin, prop.em.as_ref())?;
            sv.scale = opts.velocity_scale;
            (
                Box::new(sv),
                Box::new(move |t| {
                    let i = times
                        .iter()
                        .position(|&s| (s - t).abs() < 1e-9 * (1.0 + t.abs()))
                        .ok_or_else(|| {
                            Error::Config(format!("t_check {t} not on the step grid"))
                        })?;
                    grid_marginal_cdfs(&snaps[i])
                }),
            )
        }
    };
    let h = opts.traj_dt.unwrap_or(prop.dt / 4.0);
    let controls = Controls::new(h);
    let mut current: Vec<(Vec<f64>, f64, Status)> = ensemble
        .members
        .iter()
        .map(|m| (m.to_flat(&dims), t0, Status::Ok))
        .collect();
    let mut sorted = t_checks.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut out = Vec::new();
    for t in sorted {
        current = current
            .into_par_iter()
            .map(|(x, ts, st)| {
                if st != Status::Ok || t <= ts {
                    return (x, ts, st);
                }
                let (xs, _, s) = rk4_flat(&x, ts, src.as_ref(), t, &controls);
                (xs.last().cloned().unwrap_or(x), t, s)
            })
            .collect();
        let alive: Vec<Vec<f64>> = current
            .iter()
            .filter(|c| c.2 == Status::Ok)
            .map(|c| c.0.clone())
            .collect();
        let lost = n - alive.len();
        out.push(ks_report(&alive, lost, n, &cdf_at(t)?, t));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalStats {
    pub times: Vec<f64>,
    pub flux: Vec<f64>,
    pub mean: f64,
    /// |mean - mean from every other snapshot|.
    pub error_estimate: f64,
}

/// Mean arrival time weighted by |j| at `detector`, trapezoid rule over snapshots.
pub fn arrival_time_stats(
    snapshots: &[WaveFunction],
    detector: &[f64],
    spin: &SpinSpec,
    particle: usize,
) -> Result<ArrivalStats> {
    if snapshots.len() < 3 {
        return Err(Error::Config(
            "arrival statistics need at least 3 snapshots".into(),
        ));
    }
    let times: Vec<f64> = snapshots.iter().map(|s| s.time()).collect();
    let flux: Vec<f64> = snapshots
        .par_iter()
        .map(|s| {
            let c = current(s, spin, None, detector, s.time())?;
            let j = c.j[particle];
            Ok((j[0] * j[0] + j[1] * j[1] + j[2] * j[2]).sqrt())
        })
        .collect::<Result<_>>()?;
    let mean_of = |ts: &[f64], fs: &[f64]| -> Result<f64> {
        let norm = stats::trapezoid(ts, fs);
        if !(norm >= 1e-12) {
            return Err(Error::NoFlux(norm));
        }
        let tf: Vec<f64> = ts.iter().zip(fs).map(|(t, f)| t * f).collect();
        Ok(stats::trapezoid(ts, &tf) / norm)
    };
    let mean = mean_of(&times, &flux)?;
    let keep: Vec<usize> = (0..times.len())
        .filter(|i| i % 2 == 0 || *i == times.len() - 1)
        .collect();
    let coarse_t: Vec<f64> = keep.iter().map(|&i| times[i]).collect();
    let coarse_f: Vec<f64> = keep.iter().map(|&i| flux[i]).collect();
    let coarse = mean_of(&coarse_t, &coarse_f)?;
    Ok(ArrivalStats {
        times,
        flux,
        mean,
        error_estimate: (mean - coarse).abs(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchingSetup {
    /// Amplitudes of the measured system in oscillator eigenstates 0..K.
    pub coefficients: Vec<C64>,
    /// Momentum kick per unit eigenvalue given to the pointer.
    pub coupling: f64,
    pub omega: f64,
    pub system_mass: f64,
    pub pointer_mass: f64,
    pub pointer_sigma: f64,
    pub readout_time: f64,
    pub x_extent: f64,
    pub y_extent: f64,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    /// Keep every k-th propagation step as a velocity snapshot.
    pub snapshot_every: usize,
    pub hbar: f64,
}

impl Default for BranchingSetup {
    fn default() -> Self {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            coefficients: vec![C64::new(c, 0.0), C64::new(c, 0.0)],
            coupling: 3.0,
            omega: 1.0,
            system_mass: 1.0,
            pointer_mass: 1.0,
            pointer_sigma: 1.0,
            readout_time: 5.0,
            x_extent: 7.0,
            y_extent: 40.0,
            nx: 48,
            ny: 512,
            dt: 0.01,
            snapshot_every: 5,
            hbar: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingReport {
    pub fractions: Vec<f64>,
    pub born: Vec<f64>,
    pub grid_weights: Vec<f64>,
    pub overlap: f64,
    pub n: usize,
    pub lost: usize,
}

impl BranchingSetup {
    pub fn eigenvalues(&self) -> Vec<f64> {
        let k = self.coefficients.len();
        (0..k).map(|i| 2.0 * i as f64 - (k as f64 - 1.0)).collect()
    }

    /// Pointer centres at read-out.
    pub fn centres(&self) -> Vec<f64> {
        self.eigenvalues()
            .iter()
            .map(|a| self.hbar * self.coupling * a * self.readout_time / self.pointer_mass)
            .collect()
    }

    fn pointer_at(&self, a: f64, y: f64, t: f64) -> C64 {
        let s2 = self.pointer_sigma * self.pointer_sigma;
        let m = self.pointer_mass;
        let k0 = self.coupling * a;
        let st = C64::new(1.0, self.hbar * t / (2.0 * m * s2));
        let u = y - self.hbar * k0 * t / m;
        (-0.25 * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * st.ln() - u * u / (4.0 * s2 * st)
            + C64::new(0.0, k0 * y - self.hbar * k0 * k0 * t / (2.0 * m)))
        .exp()
    }

    /// Largest pairwise integral of |chi_i||chi_j| over the pointer axis at read-out.
    pub fn pointer_overlap(&self) -> f64 {
        let ev = self.eigenvalues();
        let n = 20_001;
        let (lo, hi) = (-3.0 * self.y_extent, 3.0 * self.y_extent);
        let h = (hi - lo) / (n - 1) as f64;
        let mut worst = 0.0f64;
        for i in 0..ev.len() {
            for j in i + 1..ev.len() {
                let s: f64 = (0..n)
                    .map(|k| {
                        let y = lo + k as f64 * h;
                        self.pointer_at(ev[i], y, self.readout_time).norm()
                            * self.pointer_at(ev[j], y, self.readout_time).norm()
                    })
                    .sum::<f64>()
                    * h;
                worst = worst.max(s);
            }
        }
        worst
    }

    fn channel_of(&self, y: f64) -> usize {
        let c = self.centres();
        let mut k = 0;
        for i in 1..c.len() {
            if y > 0.5 * (c[i - 1] + c[i]) {
                k = i;
            }
        }
        k
    }
}

/// Impulsive von Neumann measurement on a (system x pointer) grid followed by
/// free pointer evolution; beables are counted by the pointer region they end in.
pub fn measurement_branching(
    setup: &BranchingSetup,
    n: usize,
    seed: u64,
) -> Result<BranchingReport> {
    let norm2: f64 = setup.coefficients.iter().map(|c| c.norm_sqr()).sum();
    if setup.coefficients.is_empty() || !(norm2 > 0.0) {
        return Err(Error::Config(
            "need at least one non-zero coefficient".into(),
        ));
    }
    let coeffs: Vec<C64> = setup
        .coefficients
        .iter()
        .map(|c| c / norm2.sqrt())
        .collect();
    let born: Vec<f64> = coeffs.iter().map(|c| c.norm_sqr()).collect();
    let overlap = if coeffs.len() > 1 {
        setup.pointer_overlap()
    } else {
        0.0
    };
    if overlap >= 1e-6 {
        return Err(Error::NotSeparated(overlap));
    }
    let sigma_t = setup.pointer_sigma
        * (1.0
            + (setup.hbar * setup.readout_time
                / (2.0 * setup.pointer_mass * setup.pointer_sigma.powi(2)))
            .powi(2))
        .sqrt();
    if setup
        .centres()
        .iter()
        .any(|c| c.abs() + 8.0 * sigma_t > setup.y_extent)
    {
        return Err(Error::Config(
            "pointer packets leave the grid before read-out".into(),
        ));
    }
    let grid = Arc::new(Grid::new(
        vec![1, 1],
        vec![
            crate::grid::Axis::new(-setup.x_extent, setup.x_extent, setup.nx),
            crate::grid::Axis::new(-setup.y_extent, setup.y_extent, setup.ny),
        ],
    )?);
    let ev = setup.eigenvalues();
    let mw = setup.system_mass * setup.omega / setup.hbar;
    let np = grid.len();
    let data: Vec<C64> = (0..np)
        .map(|p| {
            let x = grid.point(p);
            let xi = mw.sqrt() * x[0];
            let h = stats::hermite_functions(coeffs.len(), xi);
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * mw.powf(0.25) * h[k] * setup.pointer_at(ev[k], x[1], 0.0))
                .sum()
        })
        .collect();
    let psi0 = WaveFunction::from_grid(
        grid.clone(),
        data,
        1,
        &[setup.system_mass, setup.pointer_mass],
        setup.hbar,
        0.0,
    )?
    .normalize()?;
    let m = setup.system_mass;
    let w = setup.omega;
    let prop = Propagator::split_step(setup.dt, SpinSpec::new(0, setup.hbar)?)
        .with_potential(Arc::new(move |x, _| 0.5 * m * w * w * x[0] * x[0]));
    let steps = (setup.readout_time / setup.dt).round() as usize;
    let every = setup.snapshot_every.max(1);
    let snap_times: Vec<f64> = (0..=steps)
        .filter(|i| i % every == 0 || *i == steps)
        .map(|i| setup.readout_time * i as f64 / steps as f64)
        .collect();
    let snaps = propagate_to(&psi0, &prop, setup.readout_time, &snap_times)?;
    let src = SnapshotVelocity::new(&snaps, &prop.spin, None)?;
    let ens = sample_equilibrium(&psi0, None, n, seed)?;
    let dy = grid.spacing(1).min(grid.spacing(0));
    let vmax = setup.hbar * setup.coupling * ev.iter().fold(0.0f64, |a, b| a.max(b.abs()))
        / setup.pointer_mass
        + 2.0 * setup.x_extent * setup.omega;
    let controls = Controls::for_snapshots(setup.dt * every as f64, dy, vmax);
    let ends: Vec<(Vec<f64>, Status)> = ens
        .members
        .par_iter()
        .map(|b| {
            let (xs, _, s) = rk4_flat(
                &b.to_flat(&[1, 1]),
                0.0,
                &src,
                setup.readout_time,
                &controls,
            );
            (xs.last().cloned().unwrap_or_default(), s)
        })
        .collect();
    let mut counts = vec![0usize; coeffs.len()];
    let mut lost = 0;
    for (x, s) in &ends {
        if *s == Status::Ok {
            counts[setup.channel_of(x[1])] += 1;
        } else {
            lost += 1;
        }
    }
    let kept = (n - lost).max(1) as f64;
    let last = snaps.last().expect("final snapshot");
    let field = last.field().expect("grid state");
    let mut gw = vec![0.0; coeffs.len()];
    for p in 0..np {
        let y = grid.point(p)[1];
        gw[setup.channel_of(y)] += field.data[p].norm_sqr() * grid.cell_volume();
    }
    Ok(BranchingReport {
        fractions: counts.iter().map(|&c| c as f64 / kept).collect(),
        born,
        grid_weights: gw,
        overlap,
        n,
        lost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefunction::Family;

    #[test]
    fn plane_wave_straight_line() {
        let psi = WaveFunction::parametric(Family::PlaneWave { k: vec![1.3] }, &[1], &[1.0], 1.0)
            .unwrap();
        let src = WaveVelocity::new(psi, SpinSpec::new(0, 1.0).unwrap());
        let start = BeableConfig::from_flat(&[0.0], &[1], 0.0);
        let rec = integrate_trajectory(&start, &src, 2.0, &Controls::new(0.07));
        assert_eq!(rec.status, Status::Ok);
        assert_eq!(*rec.times.last().unwrap(), 2.0);
        assert!((rec.last().positions[0][0] - 2.6).abs() < 1e-10);
        assert!(rec.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn ground_state_is_static() {
        let psi = WaveFunction::parametric(
            Family::Coherent {
                omega: 1.0,
                x0: vec![0.0],
                p0: vec![0.0],
            },
            &[1],
            &[1.0],
            1.0,
        )
        .unwrap();
        let src = WaveVelocity::new(psi, SpinSpec::new(0, 1.0).unwrap());
        let rec = integrate_trajectory(
            &BeableConfig::from_flat(&[0.7], &[1], 0.0),
            &src,
            3.0,
            &Controls::new(0.1),
        );
        assert!((rec.last().positions[0][0] - 0.7).abs() < 1e-14);
    }

    #[test]
    fn uniform_box_ks() {
        let xs = sample_density(
            &|_| 1.0,
            &[(0.0, 2.0)],
            10_000,
            3,
            &SamplerOptions::default(),
        )
        .unwrap();
        let col: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        assert!(
            stats::ks_statistic(&col, |v| (v / 2.0).clamp(0.0, 1.0))
                < stats::ks_critical_1pct(10_000)
        );
    }

    #[test]
    fn single_sample_in_domain() {
        let xs = sample_density(
            &|x| (-x[0] * x[0]).exp(),
            &[(-5.0, 5.0)],
            1,
            9,
            &SamplerOptions::default(),
        )
        .unwrap();
        assert_eq!(xs.len(), 1);
        assert!(xs[0][0].abs() <= 5.0);
    }

    #[test]
    fn hopeless_envelope_fails() {
        let spike = |x: &[f64]| (-x[0] * x[0] / 2e-10).exp();
        let r = sample_density(
            &spike,
            &[(-1.0, 1.0)],
            10,
            1,
            &SamplerOptions {
                envelope: Envelope::Uniform,
                ..Default::default()
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn node_stops_trajectory() {
        let src = ClosedForm::new(vec![1], |x: &[f64], _t| {
            if x[0] > 1.0 {
                VelocityEval::Node
            } else {
                VelocityEval::Ok(vec![1.0])
            }
        });
        let rec = integrate_trajectory(
            &BeableConfig::from_flat(&[0.0], &[1], 0.0),
            &src,
            5.0,
            &Controls::new(0.1),
        );
        assert_eq!(rec.status, Status::NodeEncounter);
        assert!(rec.last().positions[0][0] <= 1.0 + 1e-12);
    }
}
