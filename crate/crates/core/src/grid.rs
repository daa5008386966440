//! Rectangular computational boxes and the fields sampled on them.
//!
//! Node values are stored node-major: the `d` components of node `k` live at
//! `values[k * d..(k + 1) * d]`. Nodes are numbered with axis 0 varying
//! fastest.
//!
//! Evaluation off the nodes is multilinear inside the box. Outside the box the
//! polynomial of the nearest boundary cell is continued, which along each axis
//! is linear extrapolation from the two outermost nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lo, hi]` split into `n[j]` cells along axis `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
}

impl GridBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>) -> Result<Self> {
        let d = lo.len();
        if d == 0 {
            return Err(Error::Config("box must have at least one axis".into()));
        }
        if hi.len() != d {
            return Err(Error::Dimension {
                what: "box upper corner",
                expected: d,
                got: hi.len(),
            });
        }
        if n.len() != d {
            return Err(Error::Dimension {
                what: "box cell counts",
                expected: d,
                got: n.len(),
            });
        }
        for j in 0..d {
            if !(lo[j].is_finite() && hi[j].is_finite() && lo[j] < hi[j]) {
                return Err(Error::Config(format!(
                    "box axis {j}: need finite lo < hi, got [{}, {}]",
                    lo[j], hi[j]
                )));
            }
            if n[j] < 2 {
                return Err(Error::Config(format!(
                    "box axis {j}: need at least 2 cells, got {}",
                    n[j]
                )));
            }
        }
        Ok(Self { lo, hi, n })
    }

    /// Same interval and resolution on every axis.
    pub fn cube(d: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![lo; d], vec![hi; d], vec![n; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn cells(&self) -> &[usize] {
        &self.n
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.n[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim())
            .map(|j| self.spacing(j))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn nodes_along(&self, axis: usize) -> usize {
        self.n[axis] + 1
    }

    pub fn node_count(&self) -> usize {
        self.n.iter().map(|n| n + 1).product()
    }

    /// Offset between consecutive nodes along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n[..axis].iter().map(|n| n + 1).product()
    }

    /// Index of node `node` along `axis`.
    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.stride(axis)) % (self.n[axis] + 1)
    }

    pub fn node_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .enumerate()
            .map(|(j, &i)| i * self.stride(j))
            .sum()
    }

    pub fn node_coords_into(&self, node: usize, out: &mut [f64]) {
        let mut rest = node;
        for (j, o) in out.iter_mut().enumerate() {
            let m = self.n[j] + 1;
            let i = rest % m;
            rest /= m;
            *o = self.lo[j] + i as f64 * self.spacing(j);
        }
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_coords_into(node, &mut x);
        x
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.node_count()).map(move |k| self.node_coords(k))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Distance, in cells, from `x` to the nearest face of the box
    /// (negative outside).
    pub fn margin_in_cells(&self, x: &[f64]) -> f64 {
        (0..self.dim())
            .map(|j| {
                let h = self.spacing(j);
                ((x[j] - self.lo[j]) / h).min((self.hi[j] - x[j]) / h)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Cell index and local coordinate of `x` along each axis. Local
    /// coordinates fall outside `[0, 1]` beyond the box.
    pub fn locate(&self, x: &[f64]) -> Vec<(usize, f64)> {
        (0..self.dim())
            .map(|j| {
                let s = (x[j] - self.lo[j]) / self.spacing(j);
                let k = if s.is_nan() {
                    0
                } else {
                    (s.floor().max(0.0) as usize).min(self.n[j] - 1)
                };
                (k, s - k as f64)
            })
            .collect()
    }

    /// Interpolation weights for `x`: the `2^d` corner nodes of its cell and
    /// their multilinear weights.
    pub fn stencil(&self, x: &[f64]) -> Stencil {
        let d = self.dim();
        let loc = self.locate(x);
        let mut corners = Vec::with_capacity(1 << d);
        for mask in 0..(1usize << d) {
            let mut node = 0;
            let mut w = 1.0;
            for (j, &(k, r)) in loc.iter().enumerate() {
                let up = mask >> j & 1 == 1;
                node += (k + up as usize) * self.stride(j);
                w *= if up { r } else { 1.0 - r };
            }
            corners.push((node, w));
        }
        Stencil { corners }
    }
}

/// Precomputed multilinear interpolation weights for one point.
#[derive(Clone, Debug)]
pub struct Stencil {
    pub corners: Vec<(usize, f64)>,
}

impl Stencil {
    pub fn apply(&self, values: &[f64], dim: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(node, w) in &self.corners {
            let v = &values[node * dim..(node + 1) * dim];
            for (o, vi) in out.iter_mut().zip(v) {
                *o += w * vi;
            }
        }
    }
}

/// A map ℝ^d → ℝ^d at a fixed time.
pub trait VectorField {
    fn dim(&self) -> usize;

    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }
}

/// A time-indexed family of vector fields, `(t, x) ↦ U(t, x)`.
pub trait TimeField {
    fn dim(&self) -> usize;

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, x, &mut out);
        out
    }

    /// Region on which the field is known, when it is finite.
    fn domain(&self) -> Option<&GridBox> {
        None
    }
}

/// Closure-backed [`VectorField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&(self.f)(x));
    }
}

/// Closure-backed [`TimeField`].
pub struct FnTimeField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64]) -> Vec<f64>> FnTimeField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64]) -> Vec<f64>> TimeField for FnTimeField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&(self.f)(t, x));
    }
}

/// Borrowed node values of one field on a box.
#[derive(Clone, Copy, Debug)]
pub struct SliceView<'a> {
    pub grid: &'a GridBox,
    pub values: &'a [f64],
}

impl<'a> SliceView<'a> {
    pub fn new(grid: &'a GridBox, values: &'a [f64]) -> Self {
        debug_assert_eq!(values.len(), grid.node_count() * grid.dim());
        Self { grid, values }
    }

    pub fn node_value(&self, node: usize) -> &'a [f64] {
        let d = self.grid.dim();
        &self.values[node * d..(node + 1) * d]
    }

    pub fn to_owned(&self) -> GridField {
        GridField {
            grid: self.grid.clone(),
            values: self.values.to_vec(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl VectorField for SliceView<'_> {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.grid.stencil(x).apply(self.values, self.grid.dim(), out);
    }
}

/// Owned node values of one field on a box.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: GridBox,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn from_fn(grid: &GridBox, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let d = grid.dim();
        let mut values = Vec::with_capacity(grid.node_count() * d);
        for x in grid.nodes() {
            let v = f(&x);
            debug_assert_eq!(v.len(), d);
            values.extend_from_slice(&v);
        }
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn sample(grid: &GridBox, field: &dyn VectorField) -> Self {
        Self::from_fn(grid, |x| field.eval(x))
    }

    pub fn view(&self) -> SliceView<'_> {
        SliceView::new(&self.grid, &self.values)
    }

    pub fn node_value(&self, node: usize) -> &[f64] {
        self.view().node_value(node)
    }

    /// Largest componentwise difference from `other` over the nodes.
    pub fn sup_distance(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl VectorField for GridField {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.view().eval_into(x, out)
    }
}
