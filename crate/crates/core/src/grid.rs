use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Bytes allowed for a single complex field unless the caller says otherwise.
pub const DEFAULT_MEMORY_BUDGET: usize = 4 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, points: usize) -> Self {
        Self { min, max, points }
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.points as f64 - 1.0)
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }
}

/// Uniform tensor-product grid over an N-particle configuration space.
/// Axes are ordered particle by particle; the last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: Vec<usize>,
    axes: Vec<Axis>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(dims: Vec<usize>, axes: Vec<Axis>) -> Result<Self> {
        Self::with_budget(dims, axes, 1, DEFAULT_MEMORY_BUDGET)
    }

    pub fn with_budget(
        dims: Vec<usize>,
        axes: Vec<Axis>,
        components: usize,
        budget: usize,
    ) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| !(1..=3).contains(&d)) {
            return Err(Error::Config(format!(
                "each particle needs 1, 2 or 3 dimensions, got {dims:?}"
            )));
        }
        let n_axes: usize = dims.iter().sum();
        if axes.len() != n_axes {
            return Err(Error::Shape(format!(
                "{} axes given for {} configuration dimensions",
                axes.len(),
                n_axes
            )));
        }
        for (k, a) in axes.iter().enumerate() {
            if a.points < 2 || !(a.spacing() > 0.0) || !a.spacing().is_finite() {
                return Err(Error::Config(format!(
                    "axis {k}: need points >= 2 and max > min, got {a:?}"
                )));
            }
        }
        let total = axes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.points));
        let requested = total
            .and_then(|t| t.checked_mul(components.max(1)))
            .and_then(|t| t.checked_mul(16))
            .unwrap_or(usize::MAX);
        if requested > budget {
            return Err(Error::Memory { requested, budget });
        }
        let mut strides = vec![1; axes.len()];
        for k in (0..axes.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].points;
        }
        Ok(Self {
            dims,
            axes,
            strides,
        })
    }

    /// Single particle on a 1-D line.
    pub fn line(min: f64, max: f64, points: usize) -> Result<Self> {
        Self::new(vec![1], vec![Axis::new(min, max, points)])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn n_axes(&self) -> usize {
        self.axes.len()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.axes[axis].spacing()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing()).product()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for (k, s) in self.strides.iter().enumerate() {
            out[k] = flat / s;
            flat %= s;
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.n_axes()];
        self.unravel(flat, &mut idx);
        idx.iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.coord(i))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.n_axes()
            && x.iter().zip(&self.axes).all(|(&v, a)| {
                let tol = 1e-12 * (a.max - a.min);
                v >= a.min - tol && v <= a.max + tol
            })
    }

    /// Lower cell corner and fractional offset per axis.
    pub fn locate(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        if x.len() != self.n_axes() {
            return Err(Error::Shape(format!(
                "point has {} coordinates, grid has {} axes",
                x.len(),
                self.n_axes()
            )));
        }
        x.iter()
            .zip(&self.axes)
            .enumerate()
            .map(|(k, (&v, a))| {
                let tol = 1e-12 * (a.max - a.min);
                if !(v >= a.min - tol && v <= a.max + tol) {
                    return Err(Error::Domain {
                        axis: k,
                        value: v,
                        min: a.min,
                        max: a.max,
                    });
                }
                let s = ((v - a.min) / a.spacing()).clamp(0.0, (a.points - 1) as f64);
                let i = (s.floor() as usize).min(a.points - 2);
                Ok((i, s - i as f64))
            })
            .collect()
    }

    /// Multilinear interpolation weights over the 2^d surrounding nodes.
    pub fn stencil(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        let cell = self.locate(x)?;
        let d = cell.len();
        let mut out = Vec::with_capacity(1 << d);
        for corner in 0..(1usize << d) {
            let mut flat = 0;
            let mut w = 1.0;
            for (k, &(i, f)) in cell.iter().enumerate() {
                if corner >> k & 1 == 1 {
                    flat += (i + 1) * self.strides[k];
                    w *= f;
                } else {
                    flat += i * self.strides[k];
                    w *= 1.0 - f;
                }
            }
            if w != 0.0 {
                out.push((flat, w));
            }
        }
        Ok(out)
    }

    /// Derivative along `axis` at a node: fourth-order central in the interior,
    /// second-order one-sided on the two outermost layers.
    pub fn node_derivative<T>(&self, f: &[T], flat: usize, axis: usize) -> T
    where
        T: Copy
            + std::ops::Sub<Output = T>
            + std::ops::Add<Output = T>
            + std::ops::Mul<f64, Output = T>,
    {
        let n = self.axes[axis].points;
        let s = self.strides[axis];
        let h = self.axes[axis].spacing();
        let i = (flat / s) % n;
        let at = |o: isize| f[(flat as isize + o * s as isize) as usize];
        if n >= 5 && i >= 2 && i + 2 < n {
            (at(-2) - at(2) + (at(1) - at(-1)) * 8.0) * (1.0 / (12.0 * h))
        } else if n >= 3 && i + 2 < n {
            (at(1) * 4.0 - at(0) * 3.0 - at(2)) * (1.0 / (2.0 * h))
        } else if n >= 3 {
            (at(0) * 3.0 - at(-1) * 4.0 + at(-2)) * (1.0 / (2.0 * h))
        } else {
            (at(1 - 2 * i as isize) - at(0)) * (if i == 0 { 1.0 / h } else { -1.0 / h })
        }
    }

    /// Angular wavenumbers in FFT order along `axis`.
    pub fn wavenumbers(&self, axis: usize) -> Vec<f64> {
        let a = &self.axes[axis];
        let n = a.points;
        let period = n as f64 * a.spacing();
        (0..n)
            .map(|i| {
                let m = if i <= n / 2 {
                    i as f64
                } else {
                    i as f64 - n as f64
                };
                2.0 * std::f64::consts::PI * m / period
            })
            .collect()
    }

    /// Owning particle of each axis.
    pub fn axis_particle(&self) -> Vec<usize> {
        self.dims
            .iter()
            .enumerate()
            .flat_map(|(p, &d)| std::iter::repeat_n(p, d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_points() {
        let g = Grid::line(-1.0, 1.0, 5).unwrap();
        assert_eq!(g.spacing(0), 0.5);
        assert_eq!(g.point(3), vec![0.5]);
    }

    #[test]
    fn budget_rejects() {
        let r = Grid::with_budget(vec![3], vec![Axis::new(0.0, 1.0, 1000); 3], 1, 1 << 20);
        assert!(matches!(r, Err(Error::Memory { .. })));
    }

    #[test]
    fn outside_is_domain_error() {
        let g = Grid::line(0.0, 1.0, 11).unwrap();
        match g.locate(&[1.5]) {
            Err(Error::Domain { axis, value, .. }) => {
                assert_eq!(axis, 0);
                assert_eq!(value, 1.5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn derivative_of_cubic_is_exact_inside() {
        let g = Grid::line(-1.0, 1.0, 21).unwrap();
        let f: Vec<f64> = (0..21).map(|i| g.point(i)[0].powi(3)).collect();
        for i in 2..19 {
            let x = g.point(i)[0];
            assert!((g.node_derivative(&f, i, 0) - 3.0 * x * x).abs() < 1e-12);
        }
    }

    #[test]
    fn unravel_roundtrip() {
        let g = Grid::new(
            vec![2],
            vec![Axis::new(0.0, 1.0, 3), Axis::new(0.0, 1.0, 4)],
        )
        .unwrap();
        let mut idx = [0; 2];
        for f in 0..g.len() {
            g.unravel(f, &mut idx);
            assert_eq!(g.flat_index(&idx), f);
        }
    }
}
