//! Yosida regularization of monotone fields.
//!
//! For a monotone `U` and `δ > 0` the resolvent `J_δ = (Id + δU)⁻¹` is
//! single-valued and nonexpansive, and `V_δ = U ∘ J_δ` is monotone and
//! `1/δ`-Lipschitz. Two independent constructions are provided:
//!
//! * [`yosida_apply`] solves `y + δU(y) = x` by damped Newton on the
//!   interpolant;
//! * [`yosida_by_transport`] follows the characteristics of the vector
//!   Burgers system `∂ₛW + (W·∇)W = 0`, `W(0) = U`, pushing every mesh cell
//!   forward by `z ↦ z + s·W(z)` and inverting the cell that covers each
//!   query node. `V_δ = W(δ)`.
//!
//! [`eqv_residual`] measures how well a family of slices `V(t, ·)`
//! satisfies the evolution equation of the Yosida approximation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{GridBox, GridField, VectorField};
use crate::linalg::{self, norm};
use crate::model::Dynamics;
use crate::newton::{self, NewtonOptions};
use crate::solver::{jacobian_at, lipschitz_norm_of, GridSolution};

/// Default Newton tolerance for resolvent solves.
pub const RESOLVENT_TOL: f64 = 1e-12;

/// `y` with `y + δU(y) = x`.
pub fn resolvent(u: &dyn VectorField, delta: f64, x: &[f64], tol: f64) -> Result<Vec<f64>> {
    check_delta(delta)?;
    if delta == 0.0 {
        return Ok(x.to_vec());
    }
    let opts = NewtonOptions {
        tol,
        max_iter: 100,
        ..NewtonOptions::default()
    };
    let r = |y: &[f64]| -> Result<Vec<f64>> {
        let uy = u.eval(y);
        Ok(y.iter()
            .zip(&uy)
            .zip(x)
            .map(|((y, u), x)| y + delta * u - x)
            .collect())
    };
    newton::solve(r, x, &opts).map(|o| o.root)
}

/// `V_δ(x) = U((Id + δU)⁻¹ x)`.
pub fn yosida_apply(u: &dyn VectorField, delta: f64, x: &[f64]) -> Result<Vec<f64>> {
    Ok(u.eval(&resolvent(u, delta, x, RESOLVENT_TOL)?))
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be >= 0, got {delta}")));
    }
    Ok(())
}

/// Yosida approximation sampled on the nodes of a box.
#[derive(Clone, Debug, PartialEq)]
pub struct YosidaField {
    pub delta: f64,
    pub field: GridField,
}

impl YosidaField {
    /// `max ‖DₓV‖` over the nodes, bounded by `1/δ` up to grid error.
    pub fn lipschitz_norm(&self) -> f64 {
        lipschitz_norm_of(&self.field.view())
    }
}

impl VectorField for YosidaField {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.field.eval_into(x, out)
    }
}

/// [`yosida_apply`] at every node of `grid`.
pub fn yosida_field(u: &dyn VectorField, grid: &GridBox, delta: f64) -> Result<YosidaField> {
    let d = grid.dim();
    let mut values = Vec::with_capacity(grid.node_count() * d);
    for x in grid.nodes() {
        values.extend(yosida_apply(u, delta, &x)?);
    }
    Ok(YosidaField {
        delta,
        field: GridField {
            grid: grid.clone(),
            values,
        },
    })
}

/// Mesh with one extra layer of cells around the box, each as wide as the
/// box, carrying the linear continuation of the node values.
struct PaddedMesh {
    dims: Vec<usize>,
    coords: Vec<Vec<f64>>,
    values: Vec<f64>,
    d: usize,
}

impl PaddedMesh {
    fn new(field: &GridField) -> Self {
        let grid = &field.grid;
        let d = grid.dim();
        let coords: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let (lo, hi, n) = (grid.lo()[j], grid.hi()[j], grid.cells()[j]);
                let h = grid.spacing(j);
                let width = hi - lo;
                std::iter::once(lo - width)
                    .chain((0..=n).map(|i| lo + i as f64 * h))
                    .chain(std::iter::once(hi + width))
                    .collect()
            })
            .collect();
        let dims: Vec<usize> = coords.iter().map(Vec::len).collect();
        let count: usize = dims.iter().product();
        let mut values = Vec::with_capacity(count * d);
        let mut x = vec![0.0; d];
        for k in 0..count {
            let mut rest = k;
            for j in 0..d {
                x[j] = coords[j][rest % dims[j]];
                rest /= dims[j];
            }
            values.extend(field.eval(&x));
        }
        Self {
            dims,
            coords,
            values,
            d,
        }
    }

    fn node(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (j, &i) in multi.iter().enumerate() {
            idx += i * stride;
            stride *= self.dims[j];
        }
        idx
    }

    fn cell_count(&self) -> usize {
        self.dims.iter().map(|n| n - 1).product()
    }

    fn cell_corners(&self, cell: usize) -> Vec<usize> {
        let mut base = vec![0; self.d];
        let mut rest = cell;
        for (b, n) in base.iter_mut().zip(&self.dims) {
            *b = rest % (n - 1);
            rest /= n - 1;
        }
        (0..1usize << self.d)
            .map(|mask| {
                let multi: Vec<usize> = (0..self.d).map(|j| base[j] + (mask >> j & 1)).collect();
                self.node(&multi)
            })
            .collect()
    }

    fn point(&self, node: usize) -> Vec<f64> {
        let mut rest = node;
        (0..self.d)
            .map(|j| {
                let v = self.coords[j][rest % self.dims[j]];
                rest /= self.dims[j];
                v
            })
            .collect()
    }
}

fn corner_weights(r: &[f64]) -> Vec<f64> {
    (0..1usize << r.len())
        .map(|mask| {
            r.iter()
                .enumerate()
                .map(|(j, &rj)| if mask >> j & 1 == 1 { rj } else { 1.0 - rj })
                .product()
        })
        .collect()
}

/// Local coordinates `r` with `Σ w(r)·images = x`, exact in one dimension and
/// by Newton with the analytic Jacobian otherwise.
fn invert_cell(images: &[Vec<f64>], x: &[f64]) -> Option<Vec<f64>> {
    let d = x.len();
    if d == 1 {
        let den = images[1][0] - images[0][0];
        return (den != 0.0).then(|| vec![(x[0] - images[0][0]) / den]);
    }
    let mut r = vec![0.5; d];
    for _ in 0..60 {
        let w = corner_weights(&r);
        let mut res: Vec<f64> = x.iter().map(|v| -v).collect();
        for (c, wc) in w.iter().enumerate() {
            for i in 0..d {
                res[i] += wc * images[c][i];
            }
        }
        if norm(&res) < 1e-14 * (1.0 + norm(x)) {
            return Some(r);
        }
        let mut jac = DMatrix::zeros(d, d);
        for (c, img) in images.iter().enumerate() {
            for j in 0..d {
                // ∂w_c/∂r_j
                let mut dw = 1.0;
                for (k, &rk) in r.iter().enumerate() {
                    let up = c >> k & 1 == 1;
                    dw *= if k == j {
                        if up {
                            1.0
                        } else {
                            -1.0
                        }
                    } else if up {
                        rk
                    } else {
                        1.0 - rk
                    };
                }
                for i in 0..d {
                    jac[(i, j)] += dw * img[i];
                }
            }
        }
        let neg: Vec<f64> = res.iter().map(|v| -v).collect();
        let step = linalg::solve(jac, &neg)?;
        for (ri, si) in r.iter_mut().zip(&step) {
            *ri += si;
        }
        if r.iter().any(|v| !v.is_finite() || v.abs() > 1e3) {
            return None;
        }
    }
    None
}

/// One exact characteristic step of length `s` of the Burgers system.
fn transport_step(field: &GridField, s: f64) -> Result<GridField> {
    let grid = &field.grid;
    let d = grid.dim();
    let mesh = PaddedMesh::new(field);
    let images: Vec<Vec<f64>> = (0..mesh.values.len() / d)
        .map(|k| {
            let z = mesh.point(k);
            let w = &mesh.values[k * d..(k + 1) * d];
            z.iter().zip(w).map(|(z, w)| z + s * w).collect()
        })
        .collect();

    const SLACK: f64 = 1e-10;
    let mut out: Vec<Option<Vec<f64>>> = vec![None; grid.node_count()];
    for cell in 0..mesh.cell_count() {
        let corners = mesh.cell_corners(cell);
        let cell_images: Vec<Vec<f64>> = corners.iter().map(|&c| images[c].clone()).collect();
        // query nodes inside the bounding box of the image
        let mut ranges = Vec::with_capacity(d);
        for j in 0..d {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for img in &cell_images {
                lo = lo.min(img[j]);
                hi = hi.max(img[j]);
            }
            let h = grid.spacing(j);
            let pad = SLACK * (1.0 + lo.abs().max(hi.abs()));
            let a = ((lo - pad - grid.lo()[j]) / h).ceil().max(0.0);
            let b = ((hi + pad - grid.lo()[j]) / h).floor().min(grid.cells()[j] as f64);
            if a > b {
                ranges.clear();
                break;
            }
            ranges.push((a as usize, b as usize));
        }
        if ranges.len() != d {
            continue;
        }
        let mut multi: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        'nodes: loop {
            let node = grid.node_index(&multi);
            if out[node].is_none() {
                let x = grid.node_coords(node);
                if let Some(r) = invert_cell(&cell_images, &x) {
                    if r.iter().all(|&v| (-SLACK..=1.0 + SLACK).contains(&v)) {
                        let w = corner_weights(&r);
                        let mut v = vec![0.0; d];
                        for (c, &corner) in corners.iter().enumerate() {
                            for (vi, m) in v.iter_mut().zip(&mesh.values[corner * d..(corner + 1) * d]) {
                                *vi += w[c] * m;
                            }
                        }
                        out[node] = Some(v);
                    }
                }
            }
            for j in 0..d {
                if multi[j] < ranges[j].1 {
                    multi[j] += 1;
                    continue 'nodes;
                }
                multi[j] = ranges[j].0;
            }
            break;
        }
    }
    let mut values = Vec::with_capacity(grid.node_count() * d);
    for (node, v) in out.into_iter().enumerate() {
        match v {
            Some(v) => values.extend(v),
            None => {
                return Err(Error::Domain(format!(
                    "node {:?} has no preimage under the transport map",
                    grid.node_coords(node)
                )))
            }
        }
    }
    Ok(GridField {
        grid: grid.clone(),
        values,
    })
}

/// `W(δ)` for `∂ₛW + (W·∇)W = 0`, `W(0) = u`, in `burgers_steps` exact
/// characteristic steps. Intermediate steps resample on the nodes, so more
/// than one step is exact only for slices that are affine.
pub fn yosida_by_transport(u: &GridField, delta: f64, burgers_steps: usize) -> Result<GridField> {
    check_delta(delta)?;
    if delta == 0.0 {
        return Ok(u.clone());
    }
    let steps = burgers_steps.max(1);
    let ds = delta / steps as f64;
    let mut w = u.clone();
    for _ in 0..steps {
        w = transport_step(&w, ds)?;
    }
    Ok(w)
}

/// `z` with `z − δV(z) = w`, started from `w + δV(w)`.
pub fn invert_id_minus(v: &dyn VectorField, delta: f64, w: &[f64]) -> Result<Vec<f64>> {
    let vw = v.eval(w);
    let start: Vec<f64> = w.iter().zip(&vw).map(|(a, b)| a + delta * b).collect();
    let r = |z: &[f64]| -> Result<Vec<f64>> {
        let vz = v.eval(z);
        Ok(z.iter()
            .zip(&vz)
            .zip(w)
            .map(|((z, v), w)| z - delta * v - w)
            .collect())
    };
    let opts = NewtonOptions {
        tol: 1e-11 * (1.0 + norm(w)),
        max_iter: 100,
        ..NewtonOptions::default()
    };
    newton::solve(r, &start, &opts).map(|o| o.root)
}

/// Per-node defect of the Yosida evolution equation
///
/// ```text
/// ∂ₜV + (∇V) F(y, V) − (I − δ∇V)(G(y, V) − λ[V − Sᵀ V((Id−δV)⁻¹(T y))]),
/// y = x − δV(t, x)
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct EqvResidual {
    /// Defect norm per node; `NaN` at flagged nodes.
    pub values: Vec<f64>,
    /// Nodes where `(Id − δV)⁻¹` could not be evaluated.
    pub flagged: Vec<usize>,
}

impl EqvResidual {
    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .filter(|v| !v.is_nan())
            .fold(0.0, |m, v| m.max(*v))
    }
}

pub fn eqv_residual<D: Dynamics + ?Sized>(
    m: &D,
    v: &GridSolution,
    delta: f64,
    t: f64,
) -> Result<EqvResidual> {
    check_delta(delta)?;
    let k = v.nearest_index(t);
    if k == 0 || k + 1 >= v.len() {
        return Err(Error::InvalidArgument(format!(
            "t = {t} needs recorded slices on both sides"
        )));
    }
    let grid = v.grid();
    let d = grid.dim();
    let cur = v.slice(k);
    let (prev, next) = (v.slice(k - 1), v.slice(k + 1));
    let dt = v.times()[k + 1] - v.times()[k - 1];
    let lambda = m.intensity();
    let noisy = lambda > 0.0 && !m.noise().is_identity();
    let mut values = Vec::with_capacity(grid.node_count());
    let mut flagged = Vec::new();
    for node in 0..grid.node_count() {
        let x = grid.node_coords(node);
        let vx = cur.node_value(node);
        let jac = jacobian_at(&cur, node);
        let y: Vec<f64> = x.iter().zip(vx).map(|(x, v)| x - delta * v).collect();
        let f = m.drift(&y, vx);
        let mut src = m.cost(&y, vx);
        if noisy {
            match invert_id_minus(&cur, delta, &m.noise().apply(&y)) {
                Ok(z) => {
                    let back = m.noise().adjoint_apply(&cur.eval(&z));
                    for i in 0..d {
                        src[i] -= lambda * (vx[i] - back[i]);
                    }
                }
                Err(_) => {
                    flagged.push(node);
                    values.push(f64::NAN);
                    continue;
                }
            }
        }
        let mut r2 = 0.0;
        for i in 0..d {
            let dtv = (next.node_value(node)[i] - prev.node_value(node)[i]) / dt;
            let adv: f64 = (0..d).map(|j| jac[(i, j)] * f[j]).sum();
            let rhs: f64 = (0..d)
                .map(|j| (if i == j { 1.0 } else { 0.0 } - delta * jac[(i, j)]) * src[j])
                .sum();
            let r = dtv + adv - rhs;
            r2 += r * r;
        }
        values.push(r2.sqrt());
    }
    Ok(EqvResidual { values, flagged })
}
