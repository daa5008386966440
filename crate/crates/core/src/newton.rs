//! Damped Newton iteration with a finite-difference Jacobian.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, norm};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    /// Target for `|r(z)|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step; the absolute step is `fd_rel·(1 + |z|)`.
    pub fd_rel: f64,
    /// Maximum number of step halvings per iteration.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            fd_rel: 1e-6,
            max_halvings: 40,
        }
    }
}

impl NewtonOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonOutcome {
    pub root: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `r(z) = 0` from `start`. Each step is halved until the residual
/// norm decreases.
pub fn solve(
    r: impl Fn(&[f64]) -> Result<Vec<f64>>,
    start: &[f64],
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    let d = start.len();
    let mut z = start.to_vec();
    let mut rz = r(&z)?;
    let mut res = norm(&rz);
    for it in 0..=opts.max_iter {
        if res <= opts.tol {
            return Ok(NewtonOutcome {
                root: z,
                residual: res,
                iterations: it,
            });
        }
        if it == opts.max_iter {
            break;
        }
        let h = opts.fd_rel * (1.0 + norm(&z));
        let mut jac = DMatrix::zeros(d, d);
        let mut zp = z.clone();
        for j in 0..d {
            zp[j] = z[j] + h;
            let rp = r(&zp)?;
            zp[j] = z[j];
            for i in 0..d {
                jac[(i, j)] = (rp[i] - rz[i]) / h;
            }
        }
        let neg: Vec<f64> = rz.iter().map(|v| -v).collect();
        let Some(dz) = linalg::solve(jac, &neg) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + scale * b).collect();
            if let Ok(rt) = r(&trial) {
                let rn = norm(&rt);
                if rn < res {
                    z = trial;
                    rz = rt;
                    res = rn;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_smooth_system() {
        // x² + y² = 4, x = y
        let out = solve(
            |z| Ok(vec![z[0] * z[0] + z[1] * z[1] - 4.0, z[0] - z[1]]),
            &[1.0, 0.5],
            &NewtonOptions::default().with_tol(1e-10),
        )
        .unwrap();
        let s = 2f64.sqrt();
        assert!((out.root[0] - s).abs() < 1e-8 && (out.root[1] - s).abs() < 1e-8);
    }

    #[test]
    fn damping_rescues_arctan() {
        // plain Newton diverges on atan from |z0| > 1.39
        let out = solve(|z| Ok(vec![z[0].atan()]), &[3.0], &NewtonOptions::default()).unwrap();
        assert!(out.root[0].abs() < 1e-10);
    }

    #[test]
    fn reports_failure_with_residual() {
        let err = solve(|z| Ok(vec![z[0] * z[0] + 1.0]), &[0.3], &NewtonOptions::default());
        assert!(matches!(err, Err(Error::NoConvergence { residual, .. }) if residual >= 1.0));
    }
}
