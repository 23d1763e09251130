use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::{Complex, Complex64};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

pub type CMat = DMatrix<Complex64>;
type Gi = Complex<i64>;

const ZERO: Gi = Gi::new(0, 0);
const ONE: Gi = Gi::new(1, 0);
const I: Gi = Gi::new(0, 1);
const MI: Gi = Gi::new(0, -1);

/// Minkowski metric diag(1,-1,-1,-1).
pub const METRIC: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

/// Dense square matrix over the Gaussian integers, used for exact algebra checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IMat {
    n: usize,
    a: Vec<Gi>,
}

impl IMat {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            a: vec![ZERO; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = ONE;
        }
        m
    }

    fn from_entries(n: usize, entries: &[(usize, usize, Gi)]) -> Self {
        let mut m = Self::zeros(n);
        for &(r, c, v) in entries {
            m.a[r * n + c] = v;
        }
        m
    }

    fn diag(d: &[i64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.a[i * d.len() + i] = Gi::new(v, 0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, r: usize, c: usize) -> Gi {
        self.a[r * self.n + c]
    }

    pub fn scale(&self, s: i64) -> Self {
        Self {
            n: self.n,
            a: self.a.iter().map(|v| v * s).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|v| *v == ZERO)
    }

    pub fn nonzero(&self) -> Vec<(usize, usize, Gi)> {
        (0..self.n * self.n)
            .filter(|&k| self.a[k] != ZERO)
            .map(|k| (k / self.n, k % self.n, self.a[k]))
            .collect()
    }

    pub fn to_complex(&self) -> CMat {
        CMat::from_fn(self.n, self.n, |r, c| {
            let v = self.get(r, c);
            Complex64::new(v.re as f64, v.im as f64)
        })
    }
}

impl Add for &IMat {
    type Output = IMat;
    fn add(self, o: &IMat) -> IMat {
        IMat {
            n: self.n,
            a: self.a.iter().zip(&o.a).map(|(x, y)| x + y).collect(),
        }
    }
}

impl Sub for &IMat {
    type Output = IMat;
    fn sub(self, o: &IMat) -> IMat {
        IMat {
            n: self.n,
            a: self.a.iter().zip(&o.a).map(|(x, y)| x - y).collect(),
        }
    }
}

impl Mul for &IMat {
    type Output = IMat;
    fn mul(self, o: &IMat) -> IMat {
        let n = self.n;
        let mut out = IMat::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let x = self.a[r * n + k];
                if x == ZERO {
                    continue;
                }
                for c in 0..n {
                    out.a[r * n + c] += x * o.a[k * n + c];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Dirac4,
    Dkp5,
    Dkp10,
}

impl std::str::FromStr for MatrixKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirac4" => Ok(Self::Dirac4),
            "dkp5" => Ok(Self::Dkp5),
            "dkp10" => Ok(Self::Dkp10),
            other => Err(Error::Config(format!(
                "unknown matrix kind {other:?}; expected dirac4, dkp5 or dkp10"
            ))),
        }
    }
}

/// Generators of one of the supported algebras with derived matrices precomputed.
///
/// For `Dirac4` the generators are the Dirac-Pauli gamma matrices, `alpha[i]`
/// is gamma^0 gamma^i and `eta0` is gamma^0. For the DKP kinds the generators
/// are beta^mu, `beta_tilde[i]` is beta^0 beta^i - beta^i beta^0, `eta0` is
/// 2 (beta^0)^2 - 1 and `projector` is the massless projector.
#[derive(Debug, Clone)]
pub struct MatrixSet {
    pub kind: MatrixKind,
    pub exact: [IMat; 4],
    pub exact_projector: Option<IMat>,
    pub gen: [CMat; 4],
    pub beta_tilde: [CMat; 3],
    pub alpha: [CMat; 3],
    pub eta0: CMat,
    pub beta0_sq: CMat,
    pub projector: Option<CMat>,
    pub identity: CMat,
}

impl MatrixSet {
    pub fn dim(&self) -> usize {
        self.gen[0].nrows()
    }

    /// Exact check of the defining relations over every index combination.
    pub fn check_algebra(&self) -> Result<()> {
        let n = self.exact[0].dim();
        let id = IMat::identity(n);
        let g = |m: usize, k: usize| if m == k { METRIC[m] as i64 } else { 0 };
        match self.kind {
            MatrixKind::Dirac4 => {
                for m in 0..4 {
                    for k in 0..4 {
                        let lhs =
                            &(&self.exact[m] * &self.exact[k]) + &(&self.exact[k] * &self.exact[m]);
                        if lhs != id.scale(2 * g(m, k)) {
                            return Err(Error::Construction(format!(
                                "anticommutator fails for ({m},{k})"
                            )));
                        }
                    }
                }
            }
            MatrixKind::Dkp5 | MatrixKind::Dkp10 => {
                let b = &self.exact;
                for m in 0..4 {
                    for v in 0..4 {
                        for l in 0..4 {
                            let lhs = &(&(&b[m] * &b[v]) * &b[l]) + &(&(&b[l] * &b[v]) * &b[m]);
                            let rhs = &b[m].scale(g(v, l)) + &b[l].scale(g(v, m));
                            if lhs != rhs {
                                return Err(Error::Construction(format!(
                                    "trilinear relation fails for ({m},{v},{l})"
                                )));
                            }
                        }
                    }
                }
                let p = self
                    .exact_projector
                    .as_ref()
                    .ok_or_else(|| Error::Construction("missing projector".into()))?;
                if &(p * p) != p {
                    return Err(Error::Construction("projector is not idempotent".into()));
                }
                for (m, bm) in b.iter().enumerate() {
                    if &(&(p * bm) + &(bm * p)) != bm {
                        return Err(Error::Construction(format!(
                            "projector relation fails for beta^{m}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn dirac_exact() -> [IMat; 4] {
    let sigma = [
        [[ZERO, ONE], [ONE, ZERO]],
        [[ZERO, MI], [I, ZERO]],
        [[ONE, ZERO], [ZERO, Gi::new(-1, 0)]],
    ];
    let g0 = IMat::diag(&[1, 1, -1, -1]);
    let mut out = [g0.clone(), g0.clone(), g0.clone(), g0];
    for (k, s) in sigma.iter().enumerate() {
        let mut m = IMat::zeros(4);
        for r in 0..2 {
            for c in 0..2 {
                m.a[r * 4 + c + 2] = s[r][c];
                m.a[(r + 2) * 4 + c] = -s[r][c];
            }
        }
        out[k + 1] = m;
    }
    out
}

fn dkp5_exact() -> ([IMat; 4], IMat) {
    let b0 = IMat::from_entries(5, &[(0, 4, MI), (4, 0, I)]);
    let bi = |k: usize| IMat::from_entries(5, &[(k, 4, MI), (4, k, MI)]);
    ([b0, bi(1), bi(2), bi(3)], IMat::diag(&[1, 1, 1, 1, 0]))
}

fn dkp10_exact() -> ([IMat; 4], IMat) {
    let b0 = IMat::from_entries(
        10,
        &[
            (0, 6, MI),
            (1, 7, MI),
            (2, 8, MI),
            (6, 0, I),
            (7, 1, I),
            (8, 2, I),
        ],
    );
    let b1 = IMat::from_entries(
        10,
        &[
            (0, 9, I),
            (4, 8, I),
            (5, 7, MI),
            (7, 5, MI),
            (8, 4, I),
            (9, 0, I),
        ],
    );
    let b2 = IMat::from_entries(
        10,
        &[
            (1, 9, I),
            (3, 8, MI),
            (5, 6, I),
            (6, 5, I),
            (8, 3, MI),
            (9, 1, I),
        ],
    );
    let b3 = IMat::from_entries(
        10,
        &[
            (2, 9, I),
            (3, 7, I),
            (4, 6, MI),
            (6, 4, MI),
            (7, 3, I),
            (9, 2, I),
        ],
    );
    (
        [b0, b1, b2, b3],
        IMat::diag(&[1, 1, 1, 1, 1, 1, 0, 0, 0, 0]),
    )
}

pub fn build_matrix_set(kind: MatrixKind) -> MatrixSet {
    let (exact, projector) = match kind {
        MatrixKind::Dirac4 => (dirac_exact(), None),
        MatrixKind::Dkp5 => {
            let (b, p) = dkp5_exact();
            (b, Some(p))
        }
        MatrixKind::Dkp10 => {
            let (b, p) = dkp10_exact();
            (b, Some(p))
        }
    };
    let gen = exact.clone().map(|m| m.to_complex());
    let n = gen[0].nrows();
    let identity = CMat::identity(n, n);
    let beta0_sq = &gen[0] * &gen[0];
    let (eta0, alpha, beta_tilde) = match kind {
        MatrixKind::Dirac4 => {
            let alpha = [1, 2, 3].map(|i| &gen[0] * &gen[i]);
            (gen[0].clone(), alpha.clone(), alpha)
        }
        _ => {
            let bt = [1, 2, 3].map(|i| &gen[0] * &gen[i] - &gen[i] * &gen[0]);
            (
                &beta0_sq * Complex64::new(2.0, 0.0) - &identity,
                bt.clone(),
                bt,
            )
        }
    };
    MatrixSet {
        kind,
        exact,
        projector: projector.as_ref().map(IMat::to_complex),
        exact_projector: projector,
        gen,
        beta_tilde,
        alpha,
        eta0,
        beta0_sq,
        identity,
    }
}

/// Kronecker product.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    CMat::from_fn(ra * rb, ca * cb, |r, c| {
        a[(r / rb, c / cb)] * b[(r % rb, c % cb)]
    })
}

/// psi^dagger M psi.
pub fn sandwich(psi: &[Complex64], m: &CMat) -> Complex64 {
    let n = psi.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..n {
        let mut row = Complex64::new(0.0, 0.0);
        for c in 0..n {
            let v = m[(r, c)];
            if v.re != 0.0 || v.im != 0.0 {
                row += v * psi[c];
            }
        }
        acc += psi[r].conj() * row;
    }
    acc
}

pub fn apply(m: &CMat, psi: &[Complex64]) -> Vec<Complex64> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)] * psi[c]).sum())
        .collect()
}
