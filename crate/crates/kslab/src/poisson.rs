//! Dirichlet problem -Delta u = rho with zero boundary values on a masked
//! grid, plus the Green-operator quantities built on it.

use crate::error::{Error, Result};
use crate::grid::{BoundaryRole, MaskedGrid, ScalarField};
use crate::linalg::cg_solve;
use std::sync::Arc;

/// Default residual max-norm tolerance for potential solves.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub u: ScalarField,
    pub residual_norm: f64,
    pub solver_iterations: usize,
}

/// Luxemburg norm of one discrete Green row, anchored at source cell `z`.
#[derive(Debug, Clone, Copy)]
pub struct GreenRowNorm {
    pub z: usize,
    pub psi_norm: f64,
}

fn check_finite(rho: &ScalarField) -> Result<()> {
    for &v in &rho.values {
        if !v.is_finite() {
            return Err(Error::InvalidInput("source field has non-finite values".into()));
        }
    }
    Ok(())
}

/// Solve -Delta u = rho, u = 0 on ghost cells, to residual max-norm <= tol,
/// starting CG from `guess` (pass zeros for a cold start).
pub fn solve_dirichlet_with_guess(
    rho: &ScalarField,
    guess: &[f64],
    tol: f64,
) -> Result<PoissonSolution> {
    check_finite(rho)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let grid = Arc::clone(rho.grid());
    let n = grid.interior_count();
    if guess.len() != n {
        return Err(Error::InvalidInput(format!(
            "guess length {} does not match interior count {n}",
            guess.len()
        )));
    }
    let mut x = guess.to_vec();
    let max_iter = 5 * (grid.nx + grid.ny).max(400);
    let mut apply = |v: &[f64], out: &mut [f64]| grid.apply_neg_laplacian_dirichlet(v, out);
    let rep = cg_solve(&mut apply, &rho.values, &mut x, tol, max_iter);
    if !rep.converged {
        return Err(Error::SolverDiverged {
            context: "dirichlet potential",
            residual: rep.residual_max,
            iterations: rep.iterations,
        });
    }
    Ok(PoissonSolution {
        u: ScalarField::from_values(&grid, BoundaryRole::DirichletZero, x)?,
        residual_norm: rep.residual_max,
        solver_iterations: rep.iterations,
    })
}

pub fn solve_dirichlet(rho: &ScalarField, tol: f64) -> Result<PoissonSolution> {
    let zeros = vec![0.0; rho.grid().interior_count()];
    solve_dirichlet_with_guess(rho, &zeros, tol)
}

/// Green operator: the potential of `rho` at the default tolerance.
pub fn green_apply(rho: &ScalarField) -> Result<ScalarField> {
    Ok(solve_dirichlet(rho, DEFAULT_TOL)?.u)
}

/// Interaction pairing with a potential already in hand.
pub fn interaction_energy_with(rho: &ScalarField, u: &ScalarField) -> f64 {
    let h2 = rho.grid().h * rho.grid().h;
    rho.values
        .iter()
        .zip(&u.values)
        .map(|(r, u)| r * u)
        .sum::<f64>()
        * h2
}

/// Quadratic interaction form: sum of rho * G[rho] * h^2.
pub fn interaction_energy(rho: &ScalarField) -> Result<f64> {
    let u = green_apply(rho)?;
    Ok(interaction_energy_with(rho, &u))
}

/// For each source cell, solve with a single-cell delta (value 1/h^2) and
/// take the Luxemburg norm of the resulting Green row. The max over a sample
/// is the empirical constant bounding all rows on this grid.
pub fn green_row_psi_norms(grid: &Arc<MaskedGrid>, sample: &[usize]) -> Result<Vec<GreenRowNorm>> {
    let mut out = Vec::with_capacity(sample.len());
    let inv_h2 = 1.0 / (grid.h * grid.h);
    for &z in sample {
        if z >= grid.interior_count() {
            return Err(Error::InvalidInput(format!(
                "source cell {z} outside interior (count {})",
                grid.interior_count()
            )));
        }
        let mut src = ScalarField::zeros(grid, BoundaryRole::NoFlux);
        src.values[z] = inv_h2;
        // Delta rows are steep; scale the tolerance with the source.
        let sol = solve_dirichlet(&src, DEFAULT_TOL * inv_h2.max(1.0))?;
        out.push(GreenRowNorm {
            z,
            psi_norm: crate::orlicz::luxemburg_norm(&sol.u)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, dirichlet_energy, DomainSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk(res: u32) -> Arc<MaskedGrid> {
        build_grid(&DomainSpec::Ellipse { alpha: 1.0, beta: 1.0 }, res).unwrap()
    }

    fn cell_at(grid: &Arc<MaskedGrid>, x: f64, y: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for p in 0..grid.interior_count() {
            let (cx, cy) = grid.center(p);
            let d = (cx - x).powi(2) + (cy - y).powi(2);
            if d < dist {
                dist = d;
                best = p;
            }
        }
        best
    }

    #[test]
    fn zero_source_gives_zero_potential() {
        let g = disk(16);
        let rho = ScalarField::zeros(&g, BoundaryRole::NoFlux);
        let sol = solve_dirichlet(&rho, 1e-12).unwrap();
        assert_eq!(sol.solver_iterations, 0);
        assert!(sol.u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_source_on_disk_matches_radial_closed_form() {
        // -Delta u = 1 on the unit disk has u = (1 - r^2)/4.
        let mut errs = Vec::new();
        let mut int_errs = Vec::new();
        for res in [40u32, 80] {
            let g = disk(res);
            let rho = ScalarField::from_fn(&g, BoundaryRole::NoFlux, |_, _| 1.0);
            let sol = solve_dirichlet(&rho, 1e-11).unwrap();
            let center = cell_at(&g, 0.0, 0.0);
            errs.push((sol.u.values[center] - 0.25).abs());
            // Integral of u over the disk is pi/8 for this source; with
            // rho = lambda/pi it rescales to lambda/8.
            let exact = std::f64::consts::PI / 8.0;
            int_errs.push((sol.u.integral() - exact).abs() / exact);
        }
        assert!(errs[1] < 0.8 * errs[0] + 1e-6, "center errors {errs:?}");
        assert!(errs[1] < 0.005, "center errors {errs:?}");
        // The staircase boundary costs O(h) in the integral.
        assert!(int_errs[1] < 0.8 * int_errs[0] + 1e-6, "integral errors {int_errs:?}");
        assert!(int_errs[1] < 0.025, "integral errors {int_errs:?}");
    }

    #[test]
    fn interaction_energy_of_uniform_density() {
        // rho = lambda/pi on the unit disk: integral of rho*G[rho] tends to
        // lambda^2/(8 pi).
        let lambda = 1.0;
        let mut errs = Vec::new();
        for res in [40u32, 80] {
            let g = disk(res);
            let rho = ScalarField::from_fn(&g, BoundaryRole::NoFlux, |_, _| {
                lambda / std::f64::consts::PI
            });
            let e = interaction_energy(&rho).unwrap();
            let exact = lambda * lambda / (8.0 * std::f64::consts::PI);
            errs.push((e - exact).abs() / exact);
        }
        assert!(errs[1] < 0.8 * errs[0] + 1e-6, "errors {errs:?}");
        assert!(errs[1] < 0.05, "errors {errs:?}");
    }

    #[test]
    fn green_apply_is_linear() {
        let g = disk(20);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r1 = ScalarField::from_values(
            &g,
            BoundaryRole::NoFlux,
            (0..g.interior_count()).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let r2 = ScalarField::from_values(
            &g,
            BoundaryRole::NoFlux,
            (0..g.interior_count()).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let (a, b) = (1.3, -0.7);
        let mut combo = r1.clone();
        for (v, w) in combo.values.iter_mut().zip(&r2.values) {
            *v = a * *v + b * w;
        }
        let u_combo = green_apply(&combo).unwrap();
        let u1 = green_apply(&r1).unwrap();
        let u2 = green_apply(&r2).unwrap();
        let worst = (0..g.interior_count())
            .map(|p| (u_combo.values[p] - a * u1.values[p] - b * u2.values[p]).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 10.0 * DEFAULT_TOL, "linearity deviation {worst:.3e}");
    }

    #[test]
    fn delta_source_recovers_log_profile() {
        // The disk Green function at the center is log(1/r)/(2 pi) exactly.
        let g = disk(100);
        let center = cell_at(&g, 0.0, 0.0);
        let rows = green_row_psi_norms(&g, &[center]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].psi_norm.is_finite());

        let inv_h2 = 1.0 / (g.h * g.h);
        let mut src = ScalarField::zeros(&g, BoundaryRole::NoFlux);
        src.values[center] = inv_h2;
        let sol = solve_dirichlet(&src, DEFAULT_TOL * inv_h2).unwrap();
        for k in [5usize, 10, 20, 35, 49] {
            let r = k as f64 * g.h;
            let p = cell_at(&g, r, 0.0);
            let exact = (1.0 / r).ln() / (2.0 * std::f64::consts::PI);
            let got = sol.u.values[p];
            assert!(
                (got - exact).abs() <= 0.10 * exact.abs(),
                "r={r}: {got} vs {exact}"
            );
        }
    }

    #[test]
    fn maximum_principle_and_form_positivity() {
        let g = disk(12);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let rho = ScalarField::from_values(
                &g,
                BoundaryRole::NoFlux,
                (0..g.interior_count()).map(|_| rng.random_range(0.0..2.0)).collect(),
            )
            .unwrap();
            let sol = solve_dirichlet(&rho, DEFAULT_TOL).unwrap();
            let min_u = sol.u.min();
            assert!(min_u >= -10.0 * DEFAULT_TOL, "max principle broken: {min_u:.3e}");
            let e = interaction_energy_with(&rho, &sol.u);
            assert!(e >= -1e-12, "quadratic form negative: {e:.3e}");
        }
    }

    #[test]
    fn green_pairing_is_symmetric() {
        let g = disk(14);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let r1 = ScalarField::from_values(
                &g,
                BoundaryRole::NoFlux,
                (0..g.interior_count()).map(|_| rng.random_range(0.0..1.0)).collect(),
            )
            .unwrap();
            let r2 = ScalarField::from_values(
                &g,
                BoundaryRole::NoFlux,
                (0..g.interior_count()).map(|_| rng.random_range(0.0..1.0)).collect(),
            )
            .unwrap();
            let u1 = green_apply(&r1).unwrap();
            let u2 = green_apply(&r2).unwrap();
            let p12 = interaction_energy_with(&r1, &u2);
            let p21 = interaction_energy_with(&r2, &u1);
            assert!(
                (p12 - p21).abs() <= 10.0 * DEFAULT_TOL * p12.abs().max(1.0),
                "{p12} vs {p21}"
            );
        }
    }

    #[test]
    fn face_energy_equals_source_pairing() {
        // Summation by parts is exact on the staircase grid, so the face
        // energy of the solved potential equals the source pairing up to
        // solver residual.
        for res in [16u32, 32] {
            let g = build_grid(&DomainSpec::Ellipse { alpha: 0.5, beta: 1.0 }, res).unwrap();
            let rho = ScalarField::from_fn(&g, BoundaryRole::NoFlux, |x, y| {
                1.0 + (2.0 * x).sin() * y
            });
            let sol = solve_dirichlet(&rho, 1e-11).unwrap();
            let lhs = dirichlet_energy(&sol.u);
            let rhs = interaction_energy_with(&rho, &sol.u);
            assert!(
                (lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0),
                "res {res}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn green_row_norms_sample_behavior() {
        let empty = green_row_psi_norms(&disk(10), &[]).unwrap();
        assert!(empty.is_empty());

        // Near-boundary rows are dominated by the center row, and the
        // empirical max is stable under refinement.
        let mut maxima = Vec::new();
        for res in [50u32, 100] {
            let g = disk(res);
            let mut sample = Vec::new();
            for i in -2i32..=2 {
                for j in -2i32..=2 {
                    sample.push(cell_at(&g, 0.35 * i as f64, 0.35 * j as f64));
                }
            }
            let rows = green_row_psi_norms(&g, &sample).unwrap();
            assert_eq!(rows.len(), 25);
            let max = rows.iter().map(|r| r.psi_norm).fold(0.0, f64::max);
            assert!(max.is_finite() && max > 0.0);
            maxima.push(max);

            let center = green_row_psi_norms(&g, &[cell_at(&g, 0.0, 0.0)]).unwrap()[0].psi_norm;
            let near = green_row_psi_norms(&g, &[cell_at(&g, 0.9, 0.0)]).unwrap()[0].psi_norm;
            assert!(near <= center * (1.0 + 1e-9), "near {near} vs center {center}");
        }
        let drift = (maxima[1] - maxima[0]).abs() / maxima[0];
        assert!(drift <= 0.2, "empirical row-norm max drifts {drift:.3}");
    }
}
