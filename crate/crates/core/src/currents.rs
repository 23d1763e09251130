//! Probability density and current for spin-s wavefunctions.
//!
//! The current is `j = j_c + j_s` with the convective part
//! `j_c = (hbar/m) Im(psi^dagger D psi)` and the spin part
//! `j_s = (g/2m) curl(psi^dagger S psi)`. Any divergence-free field could be
//! added to `j` without changing the continuity equation; only the `g` knob is
//! exposed here.

use crate::error::{Error, Result};
use crate::matrices::CMat;
use crate::wavefunction::{Eval, GridField, WaveFunction, C64};
use rayon::prelude::*;
use std::fmt;
use std::sync::Arc;

/// Step used for the curl of the vector potential.
pub const STENCIL_H: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct SpinSpec {
    twice_s: u8,
    pub g: f64,
    pub hbar: f64,
    generators: [CMat; 3],
}

impl SpinSpec {
    /// Spin `twice_s / 2` with the elementary gyromagnetic factor (0 for spin 0, 1/s otherwise).
    pub fn new(twice_s: u8, hbar: f64) -> Result<Self> {
        let z = C64::new(0.0, 0.0);
        let generators = match twice_s {
            0 => [CMat::zeros(1, 1), CMat::zeros(1, 1), CMat::zeros(1, 1)],
            1 => {
                let h = 0.5 * hbar;
                [
                    CMat::from_row_slice(2, 2, &[z, C64::new(h, 0.0), C64::new(h, 0.0), z]),
                    CMat::from_row_slice(2, 2, &[z, C64::new(0.0, -h), C64::new(0.0, h), z]),
                    CMat::from_row_slice(2, 2, &[C64::new(h, 0.0), z, z, C64::new(-h, 0.0)]),
                ]
            }
            2 => std::array::from_fn(|j| {
                CMat::from_fn(3, 3, |a, b| C64::new(0.0, -hbar * levi(j, a, b)))
            }),
            _ => {
                return Err(Error::Config(format!(
                    "spin {}/2 not supported (0, 1/2 and 1 are)",
                    twice_s
                )))
            }
        };
        let g = if twice_s == 0 {
            0.0
        } else {
            2.0 / twice_s as f64
        };
        Ok(Self {
            twice_s,
            g,
            hbar,
            generators,
        })
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn spin(&self) -> f64 {
        self.twice_s as f64 / 2.0
    }

    pub fn twice_s(&self) -> u8 {
        self.twice_s
    }

    pub fn multiplicity(&self) -> usize {
        self.twice_s as usize + 1
    }

    pub fn generators(&self) -> &[CMat; 3] {
        &self.generators
    }

    /// Largest entry of [S_i, S_j] - i hbar eps_ijk S_k.
    pub fn commutator_defect(&self) -> f64 {
        let s = &self.generators;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let lhs = &s[i] * &s[j] - &s[j] * &s[i];
                let mut rhs = CMat::zeros(lhs.nrows(), lhs.ncols());
                for (k, sk) in s.iter().enumerate() {
                    rhs += sk * C64::new(0.0, self.hbar * levi(i, j, k));
                }
                worst = worst.max((lhs - rhs).iter().map(|v| v.norm()).fold(0.0, f64::max));
            }
        }
        worst
    }

    /// chi^dagger S chi.
    pub fn expectation(&self, chi: &[C64]) -> [f64; 3] {
        std::array::from_fn(|k| crate::matrices::sandwich(chi, &self.generators[k]).re)
    }
}

pub fn levi(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

pub type ScalarField = Arc<dyn Fn(&[f64; 3], f64) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&[f64; 3], f64) -> [f64; 3] + Send + Sync>;

/// External potentials acting identically on every particle.
#[derive(Clone)]
pub struct EmPotential {
    pub scalar: Option<ScalarField>,
    pub vector: Option<VectorField>,
    pub charge: f64,
    pub c: f64,
}

impl fmt::Debug for EmPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmPotential")
            .field("scalar", &self.scalar.is_some())
            .field("vector", &self.vector.is_some())
            .field("charge", &self.charge)
            .field("c", &self.c)
            .finish()
    }
}

impl EmPotential {
    pub fn new(charge: f64, c: f64) -> Self {
        Self {
            scalar: None,
            vector: None,
            charge,
            c,
        }
    }

    pub fn with_scalar(mut self, v0: ScalarField) -> Self {
        self.scalar = Some(v0);
        self
    }

    pub fn with_vector(mut self, a: VectorField) -> Self {
        self.vector = Some(a);
        self
    }

    /// Vector potential of a uniform field, A = B x r / 2.
    pub fn uniform_b(charge: f64, c: f64, b: [f64; 3]) -> Self {
        Self::new(charge, c).with_vector(Arc::new(move |x, _| cross(b, *x).map(|v| 0.5 * v)))
    }

    pub fn v0(&self, x: &[f64; 3], t: f64) -> f64 {
        self.scalar.as_ref().map_or(0.0, |f| f(x, t))
    }

    pub fn a(&self, x: &[f64; 3], t: f64) -> [f64; 3] {
        self.vector.as_ref().map_or([0.0; 3], |f| f(x, t))
    }

    /// curl A by central differences with step [`STENCIL_H`].
    pub fn b(&self, x: &[f64; 3], t: f64) -> [f64; 3] {
        let Some(f) = &self.vector else {
            return [0.0; 3];
        };
        let mut d = [[0.0; 3]; 3];
        for (a, row) in d.iter_mut().enumerate() {
            let mut xp = *x;
            let mut xm = *x;
            xp[a] += STENCIL_H;
            xm[a] -= STENCIL_H;
            let (fp, fm) = (f(&xp, t), f(&xm, t));
            for b in 0..3 {
                row[b] = (fp[b] - fm[b]) / (2.0 * STENCIL_H);
            }
        }
        [d[1][2] - d[2][1], d[2][0] - d[0][2], d[0][1] - d[1][0]]
    }
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Density and per-particle currents at one configuration point.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentSample {
    pub rho: f64,
    pub j: Vec<[f64; 3]>,
    pub j_c: Vec<[f64; 3]>,
    pub j_s: Vec<[f64; 3]>,
}

impl CurrentSample {
    /// `j / rho` per particle, or `None` below the density floor.
    pub fn velocity(&self, rho_floor: f64) -> Option<Vec<[f64; 3]>> {
        if !(self.rho > rho_floor) || !self.rho.is_finite() {
            return None;
        }
        let v: Vec<[f64; 3]> = self.j.iter().map(|j| j.map(|c| c / self.rho)).collect();
        v.iter().flatten().all(|c| c.is_finite()).then_some(v)
    }
}

/// 3-vector position of particle `r` with absent axes set to zero.
pub fn particle_position(x: &[f64], dims: &[usize], r: usize) -> [f64; 3] {
    let off: usize = dims[..r].iter().sum();
    std::array::from_fn(|k| if k < dims[r] { x[off + k] } else { 0.0 })
}

/// Apply a single-particle operator to spin index `r` of an N-particle amplitude.
pub fn apply_on_particle(op: &CMat, r: usize, n: usize, d: usize, psi: &[C64]) -> Vec<C64> {
    let inner = d.pow((n - r - 1) as u32);
    let mut out = vec![C64::new(0.0, 0.0); psi.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let s = (idx / inner) % d;
        let base = idx - s * inner;
        for sp in 0..d {
            let m = op[(s, sp)];
            if m.re != 0.0 || m.im != 0.0 {
                *o += m * psi[base + sp * inner];
            }
        }
    }
    out
}

fn assemble(
    e: &Eval,
    x: &[f64],
    t: f64,
    psi: &WaveFunction,
    spin: &SpinSpec,
    em: Option<&EmPotential>,
) -> CurrentSample {
    let dims = psi.dims();
    let masses = psi.masses();
    let hbar = psi.hbar();
    let n = dims.len();
    let d = spin.multiplicity();
    let rho: f64 = e.value.iter().map(|v| v.norm_sqr()).sum();
    let mut j_c = vec![[0.0; 3]; n];
    let mut j_s = vec![[0.0; 3]; n];
    let mut off = 0;
    for r in 0..n {
        let m = masses[r];
        let a_vec = em.map(|em| {
            let a = em.a(&particle_position(x, dims, r), t);
            a.map(|v| em.charge * v / (m * em.c))
        });
        for k in 0..dims[r] {
            let g = &e.grad[off + k];
            let im: f64 = e
                .value
                .iter()
                .zip(g)
                .map(|(p, dp)| (p.conj() * dp).im)
                .sum();
            j_c[r][k] = hbar / m * im;
        }
        if let Some(a) = a_vec {
            for k in 0..3 {
                j_c[r][k] -= a[k] * rho;
            }
        }
        if spin.g != 0.0 && d > 1 {
            // d_a M_b = 2 Re(psi^dagger S_b d_a psi)
            let mut dm = [[0.0; 3]; 3];
            for (b, s) in spin.generators().iter().enumerate() {
                for k in 0..dims[r] {
                    let sg = apply_on_particle(s, r, n, d, &e.grad[off + k]);
                    dm[k][b] = 2.0
                        * e.value
                            .iter()
                            .zip(&sg)
                            .map(|(p, q)| (p.conj() * q).re)
                            .sum::<f64>();
                }
            }
            let pre = spin.g / (2.0 * m);
            j_s[r] = [
                pre * (dm[1][2] - dm[2][1]),
                pre * (dm[2][0] - dm[0][2]),
                pre * (dm[0][1] - dm[1][0]),
            ];
        }
        off += dims[r];
    }
    let j = j_c
        .iter()
        .zip(&j_s)
        .map(|(a, b)| std::array::from_fn(|k| a[k] + b[k]))
        .collect();
    CurrentSample { rho, j, j_c, j_s }
}

fn check_spin(psi: &WaveFunction, spin: &SpinSpec) -> Result<()> {
    let want = spin.multiplicity().pow(psi.dims().len() as u32);
    if psi.spin_dim() != want {
        return Err(Error::Shape(format!(
            "wavefunction has {} components, spin {} for {} particle(s) needs {}",
            psi.spin_dim(),
            spin.spin(),
            psi.dims().len(),
            want
        )));
    }
    Ok(())
}

/// Density, total current and its convective / spin parts at `at`, time `t`.
pub fn current(
    psi: &WaveFunction,
    spin: &SpinSpec,
    em: Option<&EmPotential>,
    at: &[f64],
    t: f64,
) -> Result<CurrentSample> {
    check_spin(psi, spin)?;
    let e = psi.eval_at(at, t)?;
    Ok(assemble(&e, at, t, psi, spin, em))
}

/// Current of the factored state phi(x) chi with a constant unit spinor.
pub fn spin_eigenstate_current(
    phi: &WaveFunction,
    chi: &[C64],
    spin: &SpinSpec,
    at: &[f64],
    t: f64,
) -> Result<(f64, [f64; 3])> {
    if phi.spin_dim() != 1 || phi.dims().len() != 1 {
        return Err(Error::Shape(
            "spin eigenstate needs a one-particle scalar wave".into(),
        ));
    }
    if chi.len() != spin.multiplicity() {
        return Err(Error::Shape(format!(
            "spinor of length {} for spin {}",
            chi.len(),
            spin.spin()
        )));
    }
    let n2: f64 = chi.iter().map(|c| c.norm_sqr()).sum();
    if (n2 - 1.0).abs() > 1e-12 {
        return Err(Error::Normalization(format!("|chi|^2 = {n2}")));
    }
    let e = phi.eval_at(at, t)?;
    let p = e.value[0];
    let m = phi.masses()[0];
    let s = spin.expectation(chi);
    let d = phi.dims()[0];
    let mut grad_rho = [0.0; 3];
    let mut jc = [0.0; 3];
    for k in 0..d {
        let dp = e.grad[k][0];
        jc[k] = phi.hbar() / m * (p.conj() * dp).im;
        grad_rho[k] = 2.0 * (p.conj() * dp).re;
    }
    let curl = cross(grad_rho, s);
    let pre = spin.g / (2.0 * m);
    Ok((p.norm_sqr(), std::array::from_fn(|k| jc[k] + pre * curl[k])))
}

/// Density and currents at every node of a grid state.
#[derive(Debug, Clone)]
pub struct NodeCurrents {
    pub rho: Vec<f64>,
    /// `j[particle][node]`.
    pub j: Vec<Vec<[f64; 3]>>,
}

pub fn node_currents(
    psi: &WaveFunction,
    spin: &SpinSpec,
    em: Option<&EmPotential>,
) -> Result<NodeCurrents> {
    check_spin(psi, spin)?;
    let field: &GridField = psi
        .field()
        .ok_or_else(|| Error::Unsupported("node currents need a grid state".into()))?;
    let grid = &field.grid;
    let nc = psi.spin_dim();
    let na = grid.n_axes();
    let t = psi.time();
    let samples: Vec<CurrentSample> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let x = grid.point(p);
            let e = Eval {
                value: (0..nc).map(|c| field.component(c)[p]).collect(),
                grad: (0..na)
                    .map(|a| (0..nc).map(|c| field.node_gradient(c, p, a)).collect())
                    .collect(),
            };
            assemble(&e, &x, t, psi, spin, em)
        })
        .collect();
    let np = psi.dims().len();
    Ok(NodeCurrents {
        rho: samples.iter().map(|s| s.rho).collect(),
        j: (0..np)
            .map(|r| samples.iter().map(|s| s.j[r]).collect())
            .collect(),
    })
}

/// Pointwise continuity residual on the grid interior.
#[derive(Debug, Clone)]
pub struct Residual {
    /// Flat node indices of the evaluated interior nodes.
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
    pub max_norm: f64,
    pub l2_norm: f64,
}

/// `(rho(t+dt) - rho(t))/dt + div j` with the divergence averaged over both
/// snapshots, which centres the estimate at t + dt/2. Nodes within two layers
/// of the boundary are skipped.
pub fn continuity_residual(
    before: &WaveFunction,
    after: &WaveFunction,
    spin: &SpinSpec,
    em: Option<&EmPotential>,
) -> Result<Residual> {
    let (g0, g1) = match (before.grid(), after.grid()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Shape(
                "continuity residual needs two grid states".into(),
            ))
        }
    };
    if g0 != g1 || before.spin_dim() != after.spin_dim() {
        return Err(Error::Shape("snapshots differ in grid or spin".into()));
    }
    let dt = after.time() - before.time();
    if !(dt > 0.0) {
        return Err(Error::Config("snapshots must be ordered in time".into()));
    }
    let c0 = node_currents(before, spin, em)?;
    let c1 = node_currents(after, spin, em)?;
    let grid = g0;
    let dims = grid.dims();
    let na = grid.n_axes();
    let particle_of = grid.axis_particle();
    let mut axis_in_particle = vec![0; na];
    let mut off = 0;
    for &d in dims {
        for k in 0..d {
            axis_in_particle[off + k] = k;
        }
        off += d;
    }
    let mut idx = vec![0; na];
    let mut nodes = Vec::new();
    for p in 0..grid.len() {
        grid.unravel(p, &mut idx);
        if idx
            .iter()
            .zip(grid.axes())
            .all(|(&i, a)| i >= 2 && i + 2 < a.points)
        {
            nodes.push(p);
        }
    }
    let div = |c: &NodeCurrents, p: usize| -> f64 {
        (0..na)
            .map(|a| {
                let s = grid.strides()[a];
                let h = grid.spacing(a);
                let (r, k) = (particle_of[a], axis_in_particle[a]);
                (c.j[r][p + s][k] - c.j[r][p - s][k]) / (2.0 * h)
            })
            .sum()
    };
    let values: Vec<f64> = nodes
        .iter()
        .map(|&p| (c1.rho[p] - c0.rho[p]) / dt + 0.5 * (div(&c0, p) + div(&c1, p)))
        .collect();
    let max_norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let l2_norm = (values.iter().map(|v| v * v).sum::<f64>() * grid.cell_volume()).sqrt();
    Ok(Residual {
        nodes,
        values,
        max_norm,
        l2_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefunction::Family;

    #[test]
    fn generators_close_under_commutation() {
        for s in 0..3 {
            assert!(SpinSpec::new(s, 1.0).unwrap().commutator_defect() < 1e-14);
            assert!(SpinSpec::new(s, 0.7).unwrap().commutator_defect() < 1e-14);
        }
        assert!(SpinSpec::new(3, 1.0).is_err());
    }

    #[test]
    fn default_g() {
        assert_eq!(SpinSpec::new(0, 1.0).unwrap().g, 0.0);
        assert_eq!(SpinSpec::new(1, 1.0).unwrap().g, 2.0);
        assert_eq!(SpinSpec::new(2, 1.0).unwrap().g, 1.0);
    }

    #[test]
    fn plane_wave_current() {
        let psi = WaveFunction::parametric(Family::PlaneWave { k: vec![1.7] }, &[1], &[1.0], 1.0)
            .unwrap();
        let c = current(&psi, &SpinSpec::new(0, 1.0).unwrap(), None, &[0.3], 0.0).unwrap();
        assert!((c.rho - 1.0).abs() < 1e-14);
        assert!((c.j[0][0] - 1.7).abs() < 1e-14);
        assert_eq!(c.j_s[0], [0.0; 3]);
    }

    #[test]
    fn sigma_z_expectation() {
        let s = SpinSpec::new(1, 1.0).unwrap();
        let e = s.expectation(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        assert_eq!(e, [0.0, 0.0, 0.5]);
    }

    #[test]
    fn dimension_mismatch() {
        let psi = WaveFunction::parametric(Family::PlaneWave { k: vec![1.0] }, &[1], &[1.0], 1.0)
            .unwrap();
        let r = current(&psi, &SpinSpec::new(1, 1.0).unwrap(), None, &[0.0], 0.0);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn non_unit_spinor_rejected() {
        let psi = WaveFunction::parametric(Family::PlaneWave { k: vec![1.0] }, &[1], &[1.0], 1.0)
            .unwrap();
        let r = spin_eigenstate_current(
            &psi,
            &[C64::new(1.0, 0.0), C64::new(1.0, 0.0)],
            &SpinSpec::new(1, 1.0).unwrap(),
            &[0.0],
            0.0,
        );
        assert!(matches!(r, Err(Error::Normalization(_))));
    }

    #[test]
    fn uniform_field_curl() {
        let em = EmPotential::uniform_b(1.0, 1.0, [0.0, 0.0, 2.0]);
        let b = em.b(&[0.3, -0.1, 0.2], 0.0);
        assert!((b[2] - 2.0).abs() < 1e-8 && b[0].abs() < 1e-8);
    }
}
