//! Pointwise oracle for the noiseless equation by the method of
//! characteristics.
//!
//! With `λ = 0` the master equation is transported along
//!
//! ```text
//! ẋ = F(x, u),  u̇ = G(x, u),  (x, u)(0) = (z, U₀(z))
//! ```
//!
//! and `U(t, x(t)) = u(t)`. [`solve_by_shooting`] inverts `z ↦ x(t)` with
//! Newton to read `U` at exactly the queried point.

use crate::error::{Error, Result};
use crate::grid::VectorField;
use crate::model::Dynamics;
use crate::newton::{self, NewtonOptions};

/// Point of a characteristic: population state, value, elapsed time.
#[derive(Clone, Debug, PartialEq)]
pub struct CharState {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub s: f64,
}

fn require_noiseless<D: Dynamics + ?Sized>(m: &D) -> Result<()> {
    if m.intensity() > 0.0 {
        return Err(Error::InvalidArgument(
            "characteristics are only available for λ = 0".into(),
        ));
    }
    Ok(())
}

fn rhs<D: Dynamics + ?Sized>(m: &D, y: &[f64], out: &mut [f64]) {
    let d = m.dim();
    let (x, u) = y.split_at(d);
    let (fx, gx) = out.split_at_mut(d);
    m.drift_into(x, u, fx);
    m.cost_into(x, u, gx);
}

/// Classical RK4 on `(ẋ, u̇) = (F, G)` over `[0, t]` in `rk_steps` steps.
pub fn flow_forward<D: Dynamics + ?Sized>(
    m: &D,
    z: &[f64],
    u0: &[f64],
    t: f64,
    rk_steps: usize,
) -> Result<CharState> {
    require_noiseless(m)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("flow time must be >= 0, got {t}")));
    }
    let d = m.dim();
    let n = rk_steps.max(1);
    let h = t / n as f64;
    let mut y: Vec<f64> = z.iter().chain(u0).copied().collect();
    let mut k = [vec![0.0; 2 * d], vec![0.0; 2 * d], vec![0.0; 2 * d], vec![0.0; 2 * d]];
    let mut tmp = vec![0.0; 2 * d];
    for step in 0..n {
        rhs(m, &y, &mut k[0]);
        for c in [0.5, 0.5, 1.0].into_iter().enumerate() {
            let (i, w) = c;
            for j in 0..2 * d {
                tmp[j] = y[j] + w * h * k[i][j];
            }
            rhs(m, &tmp, &mut k[i + 1]);
        }
        for j in 0..2 * d {
            y[j] += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { at: step as f64 * h });
        }
    }
    let (x, u) = y.split_at(d);
    Ok(CharState {
        x: x.to_vec(),
        u: u.to_vec(),
        s: t,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShootingOptions {
    pub rk_steps: usize,
    pub newton: NewtonOptions,
    /// Below this time the datum plus one explicit step is returned.
    pub small_t: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            rk_steps: 200,
            newton: NewtonOptions::default(),
            small_t: 1e-3,
        }
    }
}

/// Foot `z` of the characteristic through `(t, x)` and the value carried to
/// it.
#[derive(Clone, Debug, PartialEq)]
pub struct ShootingSolution {
    pub foot: Vec<f64>,
    pub value: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Shoots from `start` (defaults to `x`) for the foot of the characteristic
/// reaching `x` at time `t`.
pub fn shoot<D: Dynamics + ?Sized>(
    m: &D,
    u0: &dyn VectorField,
    t: f64,
    x: &[f64],
    start: Option<&[f64]>,
    opts: &ShootingOptions,
) -> Result<ShootingSolution> {
    require_noiseless(m)?;
    let endpoint = |z: &[f64]| -> Result<Vec<f64>> {
        let s = flow_forward(m, z, &u0.eval(z), t, opts.rk_steps)?;
        Ok(s.x.iter().zip(x).map(|(a, b)| a - b).collect())
    };
    let out = newton::solve(endpoint, start.unwrap_or(x), &opts.newton)?;
    let value = flow_forward(m, &out.root, &u0.eval(&out.root), t, opts.rk_steps)?.u;
    Ok(ShootingSolution {
        foot: out.root,
        value,
        residual: out.residual,
        iterations: out.iterations,
    })
}

/// `U(t, x)` for the noiseless problem with datum `u0`.
pub fn solve_by_shooting<D: Dynamics + ?Sized>(
    m: &D,
    u0: &dyn VectorField,
    t: f64,
    x: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let opts = ShootingOptions {
        newton: NewtonOptions::default().with_tol(tol),
        ..ShootingOptions::default()
    };
    solve_by_shooting_with(m, u0, t, x, &opts)
}

pub fn solve_by_shooting_with<D: Dynamics + ?Sized>(
    m: &D,
    u0: &dyn VectorField,
    t: f64,
    x: &[f64],
    opts: &ShootingOptions,
) -> Result<Vec<f64>> {
    require_noiseless(m)?;
    if t == 0.0 {
        return Ok(u0.eval(x));
    }
    if t < opts.small_t {
        let v = u0.eval(x);
        let g = m.cost(x, &v);
        return Ok(v.iter().zip(&g).map(|(v, g)| v + t * g).collect());
    }
    shoot(m, u0, t, x, None, opts).map(|s| s.value)
}
