use crate::currents::{particle_position, EmPotential, SpinSpec};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::matrices::CMat;
use crate::wavefunction::{GridField, Representation, WaveFunction, C64};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Scalar potential on the full configuration space.
pub type Potential = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Analytic,
    SplitStep,
}

#[derive(Clone)]
pub struct Propagator {
    pub method: Method,
    pub dt: f64,
    pub potential: Option<Potential>,
    pub em: Option<EmPotential>,
    pub spin: SpinSpec,
    /// Split-step ignores the orbital coupling to the vector potential and keeps
    /// only the spin term. Without this flag a vector potential is rejected.
    pub zeeman_only: bool,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("method", &self.method)
            .field("dt", &self.dt)
            .field("potential", &self.potential.is_some())
            .field("em", &self.em)
            .field("spin", &self.spin.spin())
            .finish()
    }
}

impl Propagator {
    pub fn analytic(dt: f64, spin: SpinSpec) -> Self {
        Self {
            method: Method::Analytic,
            dt,
            potential: None,
            em: None,
            spin,
            zeeman_only: false,
        }
    }

    pub fn split_step(dt: f64, spin: SpinSpec) -> Self {
        Self {
            method: Method::SplitStep,
            ..Self::analytic(dt, spin)
        }
    }

    pub fn with_potential(mut self, v: Potential) -> Self {
        self.potential = Some(v);
        self
    }

    pub fn with_em(mut self, em: EmPotential, zeeman_only: bool) -> Self {
        self.em = Some(em);
        self.zeeman_only = zeeman_only;
        self
    }
}

/// Advance by `prop.dt`.
pub fn step(psi: &WaveFunction, prop: &Propagator) -> Result<WaveFunction> {
    step_by(psi, prop, prop.dt)
}

/// Advance by an explicit `dt`, used for partial landing steps.
pub fn step_by(psi: &WaveFunction, prop: &Propagator, dt: f64) -> Result<WaveFunction> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let want = prop.spin.multiplicity().pow(psi.dims().len() as u32);
    if psi.spin_dim() != want {
        return Err(Error::Shape(format!(
            "propagator spin needs {want} components, state has {}",
            psi.spin_dim()
        )));
    }
    match (prop.method, psi.representation()) {
        (Method::Analytic, Representation::Parametric(f)) => {
            if !f.evolves() {
                return Err(Error::Unsupported(
                    "family has no analytic propagation rule".into(),
                ));
            }
            if prop.potential.is_some() || prop.em.is_some() {
                return Err(Error::Unsupported(
                    "analytic propagation ignores potentials; the family must already encode them"
                        .into(),
                ));
            }
            Ok(psi.clone().with_time(psi.time() + dt))
        }
        (Method::Analytic, Representation::Grid(_)) => Err(Error::Unsupported(
            "grid states have no analytic propagation rule".into(),
        )),
        (Method::SplitStep, Representation::Parametric(_)) => Err(Error::Unsupported(
            "split-step needs a grid state; sample the family onto a grid first".into(),
        )),
        (Method::SplitStep, Representation::Grid(field)) => split_step(psi, field, prop, dt),
    }
}

fn node_potential(prop: &Propagator, grid: &Grid, t: f64) -> Vec<f64> {
    let dims = grid.dims().to_vec();
    (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let x = grid.point(p);
            let mut v = prop.potential.as_ref().map_or(0.0, |f| f(&x, t));
            if let Some(em) = &prop.em {
                for r in 0..dims.len() {
                    v += em.charge * em.v0(&particle_position(&x, &dims, r), t);
                }
            }
            v
        })
        .collect()
}

/// Exact unitary for the spin coupling, exp(i e g dt / (2 m c hbar) S.B).
fn spin_unitary(
    spin: &SpinSpec,
    em: &EmPotential,
    m: f64,
    b: [f64; 3],
    dt: f64,
    hbar: f64,
) -> CMat {
    let s = spin.generators();
    let k = em.charge * spin.g * dt / (2.0 * m * em.c * hbar);
    let h =
        (&s[0] * C64::new(b[0], 0.0) + &s[1] * C64::new(b[1], 0.0) + &s[2] * C64::new(b[2], 0.0))
            * C64::new(0.0, k);
    h.exp()
}

fn fft_axis(
    grid: &Grid,
    data: &mut [C64],
    axis: usize,
    factor: &[C64],
    fwd: &Arc<dyn Fft<f64>>,
    inv: &Arc<dyn Fft<f64>>,
) {
    let n = grid.axes()[axis].points;
    let stride = grid.strides()[axis];
    let total = grid.len();
    let lines: Vec<usize> = (0..total).filter(|&p| (p / stride) % n == 0).collect();
    let scale = 1.0 / n as f64;
    let ptr = SyncPtr(data.as_mut_ptr());
    lines.par_iter().for_each_init(
        || vec![C64::new(0.0, 0.0); n],
        |buf, &start| {
            let ptr = &ptr;
            // SAFETY: each line touches a disjoint set of indices
            // start + i * stride, so concurrent lines never alias.
            unsafe {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = *ptr.0.add(start + i * stride);
                }
                fwd.process(buf);
                for (b, f) in buf.iter_mut().zip(factor) {
                    *b *= f;
                }
                inv.process(buf);
                for (i, b) in buf.iter().enumerate() {
                    *ptr.0.add(start + i * stride) = *b * scale;
                }
            }
        },
    );
}

struct SyncPtr(*mut C64);
unsafe impl Sync for SyncPtr {}
unsafe impl Send for SyncPtr {}

fn kinetic_half(grid: &Grid, data: &mut [C64], nc: usize, masses: &[f64], hbar: f64, dt: f64) {
    let mut planner = FftPlanner::new();
    let owner = grid.axis_particle();
    let n = grid.len();
    for axis in 0..grid.n_axes() {
        let pts = grid.axes()[axis].points;
        let m = masses[owner[axis]];
        let factor: Vec<C64> = grid
            .wavenumbers(axis)
            .iter()
            .map(|k| C64::from_polar(1.0, -hbar * k * k * dt / (4.0 * m)))
            .collect();
        let fwd = planner.plan_fft_forward(pts);
        let inv = planner.plan_fft_inverse(pts);
        for c in 0..nc {
            fft_axis(
                grid,
                &mut data[c * n..(c + 1) * n],
                axis,
                &factor,
                &fwd,
                &inv,
            );
        }
    }
}

fn split_step(
    psi: &WaveFunction,
    field: &GridField,
    prop: &Propagator,
    dt: f64,
) -> Result<WaveFunction> {
    let grid = field.grid.clone();
    let hbar = psi.hbar();
    let t_mid = psi.time() + 0.5 * dt;
    if let Some(em) = &prop.em {
        if em.vector.is_some() && !prop.zeeman_only {
            return Err(Error::Unsupported(
                "split-step does not include orbital vector-potential coupling".into(),
            ));
        }
    }
    for (k, a) in grid.axes().iter().enumerate() {
        if !a.points.is_power_of_two() {
            log::warn!(
                "axis {k} has {} points; FFT is fastest for powers of two",
                a.points
            );
        }
    }
    let v = node_potential(prop, &grid, t_mid);
    let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let guard = dt * vmax / hbar;
    if guard >= 0.5 {
        return Err(Error::Stability(guard));
    }
    let nc = psi.spin_dim();
    let n = grid.len();
    let mut data = field.data.clone();
    kinetic_half(&grid, &mut data, nc, psi.masses(), hbar, dt);

    let dims = grid.dims().to_vec();
    let masses = psi.masses().to_vec();
    let spin_on = prop
        .em
        .as_ref()
        .is_some_and(|em| em.vector.is_some() && prop.spin.g != 0.0 && nc > 1);
    let np = dims.len();
    let d = prop.spin.multiplicity();
    let updated: Vec<Vec<C64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let phase = C64::from_polar(1.0, -v[p] * dt / hbar);
            let mut col: Vec<C64> = (0..nc).map(|c| data[c * n + p] * phase).collect();
            if spin_on {
                let em = prop.em.as_ref().expect("checked");
                let x = grid.point(p);
                for r in 0..np {
                    let b = em.b(&particle_position(&x, &dims, r), t_mid);
                    let u = spin_unitary(&prop.spin, em, masses[r], b, dt, hbar);
                    col = crate::currents::apply_on_particle(&u, r, np, d, &col);
                }
            }
            col
        })
        .collect();
    for (p, col) in updated.into_iter().enumerate() {
        for (c, v) in col.into_iter().enumerate() {
            data[c * n + p] = v;
        }
    }
    kinetic_half(&grid, &mut data, nc, psi.masses(), hbar, dt);
    WaveFunction::from_grid(grid, data, nc, psi.masses(), hbar, psi.time() + dt)
}

/// Step repeatedly to `t_final`, landing exactly on each requested snapshot time.
/// Returns one state per requested time, followed by the final state when it is
/// not itself requested.
pub fn propagate_to(
    psi: &WaveFunction,
    prop: &Propagator,
    t_final: f64,
    snapshot_times: &[f64],
) -> Result<Vec<WaveFunction>> {
    let t0 = psi.time();
    let eps = 1e-12 * (1.0 + t_final.abs());
    if t_final < t0 - eps {
        return Err(Error::Config(format!(
            "t_final {t_final} before state time {t0}"
        )));
    }
    if snapshot_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("snapshot times must be sorted".into()));
    }
    if snapshot_times
        .iter()
        .any(|&s| s < t0 - eps || s > t_final + eps)
    {
        return Err(Error::Config(format!(
            "snapshot times must lie in [{t0}, {t_final}]"
        )));
    }
    let mut targets: Vec<f64> = snapshot_times.to_vec();
    let final_requested = targets.last().is_some_and(|&s| (s - t_final).abs() <= eps);
    if !final_requested {
        targets.push(t_final);
    }
    let mut out = Vec::with_capacity(targets.len());
    let mut cur = psi.clone();
    for target in targets {
        while target - cur.time() > eps {
            let remaining = target - cur.time();
            let h = if remaining < prop.dt * (1.0 + 1e-9) {
                remaining
            } else {
                prop.dt
            };
            let mut next = step_by(&cur, prop, h)?;
            if (target - next.time()).abs() <= eps {
                next = next.with_time(target);
            }
            cur = next;
        }
        out.push(cur.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefunction::Family;

    fn spin0() -> SpinSpec {
        SpinSpec::new(0, 1.0).unwrap()
    }

    #[test]
    fn plane_wave_phase_advance() {
        let g = Arc::new(Grid::line(0.0, 2.0 * std::f64::consts::PI * 63.0 / 64.0, 64).unwrap());
        let k = 3.0;
        let psi = WaveFunction::parametric(Family::PlaneWave { k: vec![k] }, &[1], &[1.0], 1.0)
            .unwrap()
            .sample_onto(g.clone())
            .unwrap();
        let dt = 0.01;
        let out = step(&psi, &Propagator::split_step(dt, spin0())).unwrap();
        let phase = C64::from_polar(1.0, -k * k / 2.0 * dt);
        for p in 0..g.len() {
            let want = psi.field().unwrap().data[p] * phase;
            assert!((out.field().unwrap().data[p] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn stability_guard() {
        let g = Arc::new(Grid::line(-5.0, 5.0, 64).unwrap());
        let psi = WaveFunction::parametric(
            Family::Gaussian {
                center: vec![0.0],
                k0: vec![0.0],
                sigma: vec![1.0],
            },
            &[1],
            &[1.0],
            1.0,
        )
        .unwrap()
        .sample_onto(g)
        .unwrap();
        let prop = Propagator::split_step(0.1, spin0()).with_potential(Arc::new(|_, _| 10.0));
        assert!(matches!(step(&psi, &prop), Err(Error::Stability(_))));
    }

    #[test]
    fn analytic_rejects_grid_and_frozen_custom() {
        let g = Arc::new(Grid::line(-5.0, 5.0, 16).unwrap());
        let psi = WaveFunction::parametric(Family::PlaneWave { k: vec![1.0] }, &[1], &[1.0], 1.0)
            .unwrap();
        let grid_psi = psi.sample_onto(g).unwrap();
        let prop = Propagator::analytic(0.1, spin0());
        assert!(matches!(step(&grid_psi, &prop), Err(Error::Unsupported(_))));
        assert!((step(&psi, &prop).unwrap().time() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn snapshots_land_exactly() {
        let psi = WaveFunction::parametric(Family::PlaneWave { k: vec![1.0] }, &[1], &[1.0], 1.0)
            .unwrap();
        let prop = Propagator::analytic(0.3, spin0());
        let snaps = propagate_to(&psi, &prop, 1.0, &[0.0, 0.5]).unwrap();
        assert_eq!(snaps.len(), 3);
        assert_eq!(snaps[0].time(), 0.0);
        assert_eq!(snaps[1].time(), 0.5);
        assert_eq!(snaps[2].time(), 1.0);
        assert_eq!(propagate_to(&psi, &prop, 1.0, &[]).unwrap().len(), 1);
        assert!(propagate_to(&psi, &prop, 1.0, &[0.5, 0.2]).is_err());
    }
}
