use crate::error::{Error, Result};
use crate::grid::Grid;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

pub type C64 = Complex64;

/// Per-axis physical context handed to parametric families.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub dims: Vec<usize>,
    pub masses: Vec<f64>,
    pub axis_mass: Vec<f64>,
    pub hbar: f64,
}

impl Ctx {
    pub fn new(dims: &[usize], masses: &[f64], hbar: f64) -> Self {
        let axis_mass = dims
            .iter()
            .zip(masses)
            .flat_map(|(&d, &m)| std::iter::repeat_n(m, d))
            .collect();
        Self {
            dims: dims.to_vec(),
            masses: masses.to_vec(),
            axis_mass,
            hbar,
        }
    }

    pub fn n_axes(&self) -> usize {
        self.axis_mass.len()
    }
}

/// Value and configuration-space gradient, `grad[axis][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eval {
    pub value: Vec<C64>,
    pub grad: Vec<Vec<C64>>,
}

impl Eval {
    fn scalar(v: C64, g: Vec<C64>) -> Self {
        Self {
            value: vec![v],
            grad: g.into_iter().map(|x| vec![x]).collect(),
        }
    }
}

/// User-supplied closed-form wave. `evolves` reports whether `eval` is valid
/// at times other than the construction time.
pub trait AnalyticWave: Send + Sync + Debug {
    fn components(&self) -> usize;
    fn eval(&self, ctx: &Ctx, x: &[f64], t: f64) -> Eval;
    fn evolves(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub enum Family {
    /// exp(i(k.x - w t)) with w = sum hbar k^2 / 2m.
    PlaneWave {
        k: Vec<f64>,
    },
    /// Free product Gaussian; `sigma` is the position standard deviation at t = 0.
    Gaussian {
        center: Vec<f64>,
        k0: Vec<f64>,
        sigma: Vec<f64>,
    },
    /// Coherent state of the isotropic oscillator V = m w^2 x^2 / 2 on every axis.
    Coherent {
        omega: f64,
        x0: Vec<f64>,
        p0: Vec<f64>,
    },
    /// Two-particle wave depending only on x1 - x2 with complex width alpha + i t / 2 mu.
    DecayPair {
        alpha: f64,
        norm: f64,
    },
    /// One-particle spherical wave centred on `a` with width alpha + i t / 2 m.
    CollapsedPair {
        alpha: f64,
        a: Vec<f64>,
    },
    Superposition(Vec<(C64, Family)>),
    /// Scalar family times a constant spinor.
    SpinProduct {
        scalar: Box<Family>,
        chi: Vec<C64>,
    },
    Custom(Arc<dyn AnalyticWave>),
}

fn cpow(z: C64, p: f64) -> C64 {
    (z.ln() * p).exp()
}

impl Family {
    pub fn components(&self) -> usize {
        match self {
            Family::Superposition(terms) => terms.first().map_or(1, |(_, f)| f.components()),
            Family::SpinProduct { chi, .. } => chi.len(),
            Family::Custom(w) => w.components(),
            _ => 1,
        }
    }

    pub fn evolves(&self) -> bool {
        match self {
            Family::Superposition(terms) => terms.iter().all(|(_, f)| f.evolves()),
            Family::SpinProduct { scalar, .. } => scalar.evolves(),
            Family::Custom(w) => w.evolves(),
            _ => true,
        }
    }

    fn validate(&self, ctx: &Ctx) -> Result<()> {
        let n = ctx.n_axes();
        let need = |name: &str, v: &Vec<f64>| {
            if v.len() != n {
                Err(Error::Shape(format!(
                    "{name} has {} entries for {n} axes",
                    v.len()
                )))
            } else {
                Ok(())
            }
        };
        match self {
            Family::PlaneWave { k } => need("k", k),
            Family::Gaussian { center, k0, sigma } => {
                need("center", center)?;
                need("k0", k0)?;
                need("sigma", sigma)?;
                if sigma.iter().any(|&s| !(s > 0.0)) {
                    return Err(Error::Config("Gaussian sigma must be positive".into()));
                }
                Ok(())
            }
            Family::Coherent { omega, x0, p0 } => {
                need("x0", x0)?;
                need("p0", p0)?;
                if !(*omega > 0.0) {
                    return Err(Error::Config(
                        "oscillator frequency must be positive".into(),
                    ));
                }
                Ok(())
            }
            Family::DecayPair { alpha, .. } => {
                if ctx.dims.len() != 2 || ctx.dims[0] != ctx.dims[1] {
                    return Err(Error::Shape(
                        "decaying pair needs two particles of equal dimension".into(),
                    ));
                }
                if !(*alpha > 0.0) {
                    return Err(Error::Config("alpha must be positive".into()));
                }
                Ok(())
            }
            Family::CollapsedPair { alpha, a } => {
                need("a", a)?;
                if ctx.dims.len() != 1 {
                    return Err(Error::Shape("collapsed wave describes one particle".into()));
                }
                if !(*alpha > 0.0) {
                    return Err(Error::Config("alpha must be positive".into()));
                }
                Ok(())
            }
            Family::Superposition(terms) => {
                if terms.is_empty() {
                    return Err(Error::Config("empty superposition".into()));
                }
                let c = terms[0].1.components();
                for (_, f) in terms {
                    if f.components() != c {
                        return Err(Error::Shape(
                            "superposed terms differ in component count".into(),
                        ));
                    }
                    f.validate(ctx)?;
                }
                Ok(())
            }
            Family::SpinProduct { scalar, chi } => {
                if scalar.components() != 1 {
                    return Err(Error::Shape("spin product needs a scalar factor".into()));
                }
                if chi.is_empty() {
                    return Err(Error::Shape("empty spinor".into()));
                }
                scalar.validate(ctx)
            }
            Family::Custom(_) => Ok(()),
        }
    }

    pub fn eval(&self, ctx: &Ctx, x: &[f64], t: f64) -> Eval {
        let hbar = ctx.hbar;
        match self {
            Family::PlaneWave { k } => {
                let mut phase = 0.0;
                for (a, &ka) in k.iter().enumerate() {
                    phase += ka * x[a] - hbar * ka * ka * t / (2.0 * ctx.axis_mass[a]);
                }
                let v = C64::from_polar(1.0, phase);
                Eval::scalar(v, k.iter().map(|&ka| v * C64::new(0.0, ka)).collect())
            }
            Family::Gaussian { center, k0, sigma } => {
                let mut log = C64::new(0.0, 0.0);
                let mut dlog = Vec::with_capacity(k0.len());
                for a in 0..k0.len() {
                    let m = ctx.axis_mass[a];
                    let s2 = sigma[a] * sigma[a];
                    let st = C64::new(1.0, hbar * t / (2.0 * m * s2));
                    let u = x[a] - center[a] - hbar * k0[a] * t / m;
                    log += -0.25 * (2.0 * PI * s2).ln() - 0.5 * st.ln() - u * u / (4.0 * s2 * st)
                        + C64::new(
                            0.0,
                            k0[a] * (x[a] - center[a]) - hbar * k0[a] * k0[a] * t / (2.0 * m),
                        );
                    dlog.push(-u / (2.0 * s2 * st) + C64::new(0.0, k0[a]));
                }
                let v = log.exp();
                Eval::scalar(v, dlog.into_iter().map(|d| d * v).collect())
            }
            Family::Coherent { omega, x0, p0 } => {
                let mut log = C64::new(0.0, 0.0);
                let mut dlog = Vec::with_capacity(x0.len());
                let (s, c) = (omega * t).sin_cos();
                for a in 0..x0.len() {
                    let m = ctx.axis_mass[a];
                    let mw = m * omega;
                    let xc = x0[a] * c + p0[a] / mw * s;
                    let pc = p0[a] * c - mw * x0[a] * s;
                    let u = x[a] - xc;
                    let theta = (pc * xc - p0[a] * x0[a]) / (2.0 * hbar) - omega * t / 2.0;
                    log += C64::new(
                        0.25 * (mw / (PI * hbar)).ln() - mw * u * u / (2.0 * hbar),
                        pc * u / hbar + theta,
                    );
                    dlog.push(C64::new(-mw * u / hbar, pc / hbar));
                }
                let v = log.exp();
                Eval::scalar(v, dlog.into_iter().map(|d| d * v).collect())
            }
            Family::DecayPair { alpha, norm } => {
                let d = ctx.dims[0];
                let mu = ctx.masses[0] * ctx.masses[1] / (ctx.masses[0] + ctx.masses[1]);
                let w = C64::new(*alpha, t / (2.0 * mu));
                let r2: f64 = (0..d).map(|i| (x[i] - x[d + i]).powi(2)).sum();
                let v =
                    *norm * cpow(PI * hbar / w, d as f64 / 2.0) * (-r2 / (4.0 * hbar * w)).exp();
                let mut g = Vec::with_capacity(2 * d);
                for i in 0..d {
                    g.push(-(x[i] - x[d + i]) / (2.0 * hbar * w) * v);
                }
                for i in 0..d {
                    g.push((x[i] - x[d + i]) / (2.0 * hbar * w) * v);
                }
                Eval::scalar(v, g)
            }
            Family::CollapsedPair { alpha, a } => {
                let d = a.len();
                let w = C64::new(*alpha, t / (2.0 * ctx.masses[0]));
                let r2: f64 = (0..d).map(|i| (a[i] - x[i]).powi(2)).sum();
                let v = cpow(PI * hbar / w, d as f64 / 2.0) * (-r2 / (4.0 * hbar * w)).exp();
                Eval::scalar(
                    v,
                    (0..d)
                        .map(|i| (a[i] - x[i]) / (2.0 * hbar * w) * v)
                        .collect(),
                )
            }
            Family::Superposition(terms) => {
                let mut acc: Option<Eval> = None;
                for (c, f) in terms {
                    let e = f.eval(ctx, x, t);
                    match acc.as_mut() {
                        None => {
                            acc = Some(Eval {
                                value: e.value.iter().map(|v| c * v).collect(),
                                grad: e
                                    .grad
                                    .iter()
                                    .map(|g| g.iter().map(|v| c * v).collect())
                                    .collect(),
                            })
                        }
                        Some(a) => {
                            for (s, v) in a.value.iter_mut().zip(&e.value) {
                                *s += c * v;
                            }
                            for (ga, ge) in a.grad.iter_mut().zip(&e.grad) {
                                for (s, v) in ga.iter_mut().zip(ge) {
                                    *s += c * v;
                                }
                            }
                        }
                    }
                }
                acc.expect("validated non-empty")
            }
            Family::SpinProduct { scalar, chi } => {
                let e = scalar.eval(ctx, x, t);
                let v = e.value[0];
                Eval {
                    value: chi.iter().map(|c| c * v).collect(),
                    grad: e
                        .grad
                        .iter()
                        .map(|g| chi.iter().map(|c| c * g[0]).collect())
                        .collect(),
                }
            }
            Family::Custom(w) => w.eval(ctx, x, t),
        }
    }
}

/// Complex samples on a grid, component-major: `data[c * grid.len() + point]`.
#[derive(Debug, Clone)]
pub struct GridField {
    pub grid: Arc<Grid>,
    pub data: Vec<C64>,
}

impl GridField {
    pub fn component(&self, c: usize) -> &[C64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn node_gradient(&self, c: usize, flat: usize, axis: usize) -> C64 {
        self.grid.node_derivative(self.component(c), flat, axis)
    }
}

#[derive(Debug, Clone)]
pub enum Representation {
    Parametric(Family),
    Grid(GridField),
}

/// Multi-component amplitude over an N-particle configuration space.
#[derive(Debug, Clone)]
pub struct WaveFunction {
    repr: Representation,
    components: usize,
    ctx: Ctx,
    time: f64,
}

impl WaveFunction {
    pub fn parametric(family: Family, dims: &[usize], masses: &[f64], hbar: f64) -> Result<Self> {
        check_masses(dims, masses, hbar)?;
        let ctx = Ctx::new(dims, masses, hbar);
        family.validate(&ctx)?;
        Ok(Self {
            components: family.components(),
            repr: Representation::Parametric(family),
            ctx,
            time: 0.0,
        })
    }

    pub fn from_grid(
        grid: Arc<Grid>,
        data: Vec<C64>,
        components: usize,
        masses: &[f64],
        hbar: f64,
        time: f64,
    ) -> Result<Self> {
        check_masses(grid.dims(), masses, hbar)?;
        if data.len() != components * grid.len() {
            return Err(Error::Shape(format!(
                "{} samples for {} components on {} points",
                data.len(),
                components,
                grid.len()
            )));
        }
        Ok(Self {
            ctx: Ctx::new(grid.dims(), masses, hbar),
            repr: Representation::Grid(GridField { grid, data }),
            components,
            time,
        })
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    pub fn representation(&self) -> &Representation {
        &self.repr
    }

    pub fn family(&self) -> Option<&Family> {
        match &self.repr {
            Representation::Parametric(f) => Some(f),
            Representation::Grid(_) => None,
        }
    }

    pub fn field(&self) -> Option<&GridField> {
        match &self.repr {
            Representation::Grid(g) => Some(g),
            Representation::Parametric(_) => None,
        }
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.field().map(|f| f.grid.as_ref())
    }

    pub fn spin_dim(&self) -> usize {
        self.components
    }

    pub fn ctx(&self) -> &Ctx {
        &self.ctx
    }

    pub fn dims(&self) -> &[usize] {
        &self.ctx.dims
    }

    pub fn masses(&self) -> &[f64] {
        &self.ctx.masses
    }

    pub fn hbar(&self) -> f64 {
        self.ctx.hbar
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn n_axes(&self) -> usize {
        self.ctx.n_axes()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_axes() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, configuration space has {}",
                x.len(),
                self.n_axes()
            )));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain {
                axis: k,
                value: x[k],
                min: f64::NEG_INFINITY,
                max: f64::INFINITY,
            });
        }
        Ok(())
    }

    /// Value and gradient at the wavefunction's own time.
    pub fn eval(&self, x: &[f64]) -> Result<Eval> {
        self.eval_at(x, self.time)
    }

    /// Value and gradient at time `t`; grid states only answer at their own time.
    pub fn eval_at(&self, x: &[f64], t: f64) -> Result<Eval> {
        self.check_point(x)?;
        match &self.repr {
            Representation::Parametric(f) => {
                if t != self.time && !f.evolves() {
                    return Err(Error::Unsupported(
                        "family has no closed-form time dependence".into(),
                    ));
                }
                Ok(f.eval(&self.ctx, x, t))
            }
            Representation::Grid(field) => {
                if t != self.time {
                    return Err(Error::Unsupported(
                        "grid state can only be evaluated at its own time".into(),
                    ));
                }
                let st = field.grid.stencil(x)?;
                let n = field.grid.len();
                let value = (0..self.components)
                    .map(|c| st.iter().map(|&(p, w)| field.data[c * n + p] * w).sum())
                    .collect();
                let grad = (0..self.n_axes())
                    .map(|a| {
                        (0..self.components)
                            .map(|c| {
                                st.iter()
                                    .map(|&(p, w)| field.node_gradient(c, p, a) * w)
                                    .sum()
                            })
                            .collect()
                    })
                    .collect();
                Ok(Eval { value, grad })
            }
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<C64>> {
        Ok(self.eval(x)?.value)
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.evaluate(x)?.iter().map(|v| v.norm_sqr()).sum())
    }

    /// Same family at another time.
    pub fn at_time(&self, t: f64) -> Result<Self> {
        match &self.repr {
            Representation::Parametric(f) if f.evolves() || t == self.time => {
                Ok(self.clone().with_time(t))
            }
            Representation::Parametric(_) => Err(Error::Unsupported(
                "family has no closed-form time dependence".into(),
            )),
            Representation::Grid(_) => Err(Error::Unsupported(
                "grid states move in time only through a propagator".into(),
            )),
        }
    }

    /// Grid samples of this wavefunction at its current time.
    pub fn sample_onto(&self, grid: Arc<Grid>) -> Result<Self> {
        if grid.dims() != self.dims() {
            return Err(Error::Shape("grid particle dimensions differ".into()));
        }
        let n = grid.len();
        let nc = self.components;
        let rows: Vec<Vec<C64>> = (0..n)
            .into_par_iter()
            .map(|p| self.evaluate(&grid.point(p)))
            .collect::<Result<_>>()?;
        let mut data = vec![C64::new(0.0, 0.0); nc * n];
        for (p, row) in rows.into_iter().enumerate() {
            for (c, v) in row.into_iter().enumerate() {
                data[c * n + p] = v;
            }
        }
        Self::from_grid(grid, data, nc, self.masses(), self.hbar(), self.time)
    }

    /// Integral of psi^dagger psi; grid states only.
    pub fn norm_squared(&self) -> Result<f64> {
        match &self.repr {
            Representation::Grid(f) => {
                Ok(f.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * f.grid.cell_volume())
            }
            Representation::Parametric(_) => Err(Error::Unsupported(
                "norm of a parametric family; sample it onto a grid first".into(),
            )),
        }
    }

    pub fn normalize(&self) -> Result<Self> {
        let n2 = self.norm_squared()?;
        if !(n2 > 0.0 && n2.is_finite()) {
            return Err(Error::Normalization(format!("norm squared is {n2}")));
        }
        let s = 1.0 / n2.sqrt();
        let mut out = self.clone();
        if let Representation::Grid(f) = &mut out.repr {
            f.data.iter_mut().for_each(|v| *v *= s);
        }
        Ok(out)
    }

    /// Multiply by a constant; used for global-phase checks.
    pub fn scaled(&self, c: C64) -> Self {
        let mut out = self.clone();
        match &mut out.repr {
            Representation::Grid(f) => f.data.iter_mut().for_each(|v| *v *= c),
            Representation::Parametric(f) => {
                *f = Family::Superposition(vec![(c, f.clone())]);
            }
        }
        out
    }
}

fn check_masses(dims: &[usize], masses: &[f64], hbar: f64) -> Result<()> {
    if dims.len() != masses.len() {
        return Err(Error::Shape(format!(
            "{} particles but {} masses",
            dims.len(),
            masses.len()
        )));
    }
    if masses.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::Config("masses must be positive".into()));
    }
    if !(hbar > 0.0) {
        return Err(Error::Config("hbar must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    fn fd_check(psi: &WaveFunction, x: &[f64]) {
        let e = psi.eval(x).unwrap();
        let h = 1e-6;
        for a in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[a] += h;
            xm[a] -= h;
            let vp = psi.evaluate(&xp).unwrap();
            let vm = psi.evaluate(&xm).unwrap();
            for c in 0..vp.len() {
                let fd = (vp[c] - vm[c]) / (2.0 * h);
                assert!(
                    (fd - e.grad[a][c]).norm() < 1e-6 * (1.0 + fd.norm()),
                    "axis {a}"
                );
            }
        }
    }

    #[test]
    fn plane_wave_origin() {
        let psi = WaveFunction::parametric(Family::PlaneWave { k: vec![2.0] }, &[1], &[1.0], 1.0)
            .unwrap();
        assert_eq!(psi.evaluate(&[0.0]).unwrap()[0], C64::new(1.0, 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fams = vec![
            (
                Family::Gaussian {
                    center: vec![0.3, -0.2],
                    k0: vec![1.5, 0.4],
                    sigma: vec![0.8, 1.1],
                },
                vec![2],
                vec![1.3],
            ),
            (
                Family::Coherent {
                    omega: 1.2,
                    x0: vec![0.5],
                    p0: vec![-0.7],
                },
                vec![1],
                vec![0.9],
            ),
            (
                Family::DecayPair {
                    alpha: 0.7,
                    norm: 1.0,
                },
                vec![3, 3],
                vec![1.0, 2.0],
            ),
            (
                Family::CollapsedPair {
                    alpha: 0.4,
                    a: vec![0.1, 0.2, 0.3],
                },
                vec![3],
                vec![1.5],
            ),
        ];
        for (f, dims, masses) in fams {
            let n: usize = dims.iter().sum();
            let psi = WaveFunction::parametric(f, &dims, &masses, 1.0)
                .unwrap()
                .with_time(0.37);
            let x: Vec<f64> = (0..n).map(|i| 0.2 * i as f64 - 0.3).collect();
            fd_check(&psi, &x);
        }
    }

    #[test]
    fn decay_pair_prefactor() {
        let psi = WaveFunction::parametric(
            Family::DecayPair {
                alpha: 1.0,
                norm: 2.0,
            },
            &[3, 3],
            &[1.0, 1.0],
            1.0,
        )
        .unwrap();
        let v = psi.evaluate(&[0.4, 0.1, -0.2, 0.4, 0.1, -0.2]).unwrap()[0];
        assert!((v - C64::new(2.0 * PI.powf(1.5), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn grid_gaussian_node_value() {
        let g = Arc::new(Grid::line(-10.0, 10.0, 2001).unwrap());
        let psi = WaveFunction::parametric(
            Family::Gaussian {
                center: vec![0.0],
                k0: vec![0.0],
                sigma: vec![std::f64::consts::FRAC_1_SQRT_2],
            },
            &[1],
            &[1.0],
            1.0,
        )
        .unwrap()
        .sample_onto(g)
        .unwrap();
        let v = psi.evaluate(&[0.0]).unwrap()[0];
        assert!((v.re - PI.powf(-0.25)).abs() < 1e-8);
        assert!((psi.normalize().unwrap().norm_squared().unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grid_outside_domain() {
        let g = Arc::new(Grid::new(vec![1], vec![Axis::new(-1.0, 1.0, 11)]).unwrap());
        let psi =
            WaveFunction::from_grid(g, vec![C64::new(1.0, 0.0); 11], 1, &[1.0], 1.0, 0.0).unwrap();
        assert!(matches!(psi.evaluate(&[2.0]), Err(Error::Domain { .. })));
    }
}
