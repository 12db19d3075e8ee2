//! Matrix-free conjugate gradients on interior-indexed vectors.

/// Outcome of a CG run. `indefinite` means a search direction produced
/// nonpositive curvature, so the operator is not positive definite on the
/// explored subspace; the iterate is rolled back to the best residual seen.
#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub converged: bool,
    pub indefinite: bool,
    pub iterations: usize,
    pub residual_max: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_max(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solve A x = b for symmetric positive definite `apply`, starting from the
/// incoming `x` (warm start). Stops when the residual max-norm drops to
/// `tol` or `max_iter` applications are spent.
pub fn cg_solve(
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgReport {
    let n = b.len();
    assert_eq!(x.len(), n);
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut res = norm_max(&r);
    if res <= tol {
        return CgReport {
            converged: true,
            indefinite: false,
            iterations: 0,
            residual_max: res,
        };
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut best = x.to_vec();
    let mut best_res = res;
    for k in 1..=max_iter {
        apply(&p, &mut ax);
        let pap = dot(&p, &ax);
        if pap <= 0.0 || !pap.is_finite() {
            x.copy_from_slice(&best);
            return CgReport {
                converged: false,
                indefinite: true,
                iterations: k,
                residual_max: best_res,
            };
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ax[i];
        }
        res = norm_max(&r);
        if res < best_res {
            best_res = res;
            best.copy_from_slice(x);
        }
        if res <= tol {
            return CgReport {
                converged: true,
                indefinite: false,
                iterations: k,
                residual_max: res,
            };
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    x.copy_from_slice(&best);
    CgReport {
        converged: false,
        indefinite: false,
        iterations: max_iter,
        residual_max: best_res,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};

    /// Dense Gaussian elimination with partial pivoting, for small oracles.
    pub(crate) fn dense_solve(a: &mut [Vec<f64>], b: &mut [f64]) {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            let d = a[col][col];
            assert!(d.abs() > 1e-300, "singular matrix");
            for row in col + 1..n {
                let f = a[row][col] / d;
                if f == 0.0 {
                    continue;
                }
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        for col in (0..n).rev() {
            b[col] /= a[col][col];
            for row in 0..col {
                b[row] -= a[row][col] * b[col];
            }
        }
    }

    #[test]
    fn cg_matches_dense_solve_on_coarse_disk() {
        let g = build_grid(&DomainSpec::Ellipse { alpha: 1.0, beta: 1.0 }, 8).unwrap();
        let n = g.interior_count();
        let mut apply = |x: &[f64], out: &mut [f64]| g.apply_neg_laplacian_dirichlet(x, out);

        let b: Vec<f64> = (0..n)
            .map(|p| {
                let (x, y) = g.center(p);
                1.0 + x - 0.5 * y
            })
            .collect();

        let mut x = vec![0.0; n];
        let rep = cg_solve(&mut apply, &b, &mut x, 1e-12, 10_000);
        assert!(rep.converged, "residual {}", rep.residual_max);

        let mut dense = vec![vec![0.0; n]; n];
        for p in 0..n {
            let mut e = vec![0.0; n];
            e[p] = 1.0;
            let mut col = vec![0.0; n];
            g.apply_neg_laplacian_dirichlet(&e, &mut col);
            for q in 0..n {
                dense[q][p] = col[q];
            }
        }
        let mut rhs = b.clone();
        dense_solve(&mut dense, &mut rhs);
        let worst = x
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "max deviation from dense solve {worst:.2e}");
    }

    #[test]
    fn warm_start_costs_fewer_iterations() {
        let g = build_grid(&DomainSpec::Ellipse { alpha: 0.5, beta: 1.0 }, 24).unwrap();
        let n = g.interior_count();
        let mut apply = |x: &[f64], out: &mut [f64]| g.apply_neg_laplacian_dirichlet(x, out);
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        let cold = cg_solve(&mut apply, &b, &mut x, 1e-10, 10_000);
        assert!(cold.converged);
        // Restarting at the solution is free.
        let mut x_re = x.clone();
        let re = cg_solve(&mut apply, &b, &mut x_re, 1e-10, 10_000);
        assert!(re.converged);
        assert_eq!(re.iterations, 0);
        // A slightly perturbed rhs restarted from the old solution converges
        // in well under a cold start's budget.
        let b2: Vec<f64> = b.iter().map(|v| v * (1.0 + 1e-8)).collect();
        let mut x2 = x.clone();
        let warm = cg_solve(&mut apply, &b2, &mut x2, 1e-10, 10_000);
        assert!(warm.converged);
        assert!(
            (warm.iterations as f64) < 0.75 * cold.iterations as f64,
            "warm {} vs cold {}",
            warm.iterations,
            cold.iterations
        );
    }

    #[test]
    fn indefinite_operator_is_flagged() {
        let mut apply = |x: &[f64], out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = -*v;
            }
        };
        let b = vec![1.0, 2.0, 3.0];
        let mut x = vec![0.0; 3];
        let rep = cg_solve(&mut apply, &b, &mut x, 1e-12, 100);
        assert!(rep.indefinite);
        assert!(!rep.converged);
    }

    #[test]
    fn zero_rhs_returns_immediately_from_zero_guess() {
        let mut apply = |x: &[f64], out: &mut [f64]| out.copy_from_slice(x);
        let b = vec![0.0; 5];
        let mut x = vec![0.0; 5];
        let rep = cg_solve(&mut apply, &b, &mut x, 1e-14, 10);
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
    }
}
