//! Explicit barrier family on narrow ellipses, closed-form parameter curves,
//! mass thresholds, and the monotone iteration to steady mean-field profiles.

use crate::energetics::WeightField;
use crate::error::{Error, Result};
use crate::grid::{build_grid, BoundaryRole, DomainSpec, MaskedGrid, ScalarField};
use crate::linalg::cg_solve;
use std::sync::Arc;

/// Narrow-ellipse parameter block: aspect alpha, core fraction c for the
/// subsolution support, and the weight corridor a <= V <= b.
#[derive(Debug, Clone, Copy)]
pub struct EllipseRegime {
    pub alpha: f64,
    pub c: f64,
    pub a: f64,
    pub b: f64,
}

impl EllipseRegime {
    pub fn new(alpha: f64, c: f64, a: f64, b: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidInput(format!("aspect must lie in (0, 1], got {alpha}")));
        }
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::InvalidInput(format!("core fraction must lie in (0, 1], got {c}")));
        }
        if !(a > 0.0 && a <= b) {
            return Err(Error::InvalidInput(format!(
                "weight corridor needs 0 < a <= b, got a={a}, b={b}"
            )));
        }
        Ok(EllipseRegime { alpha, c, a, b })
    }

    /// Pinching ratio D = a/b.
    pub fn ratio(&self) -> f64 {
        self.a / self.b
    }

    /// Combined constant c_D = c * a/b.
    pub fn c_d(&self) -> f64 {
        self.c * self.a / self.b
    }

    /// Largest admissible multiplier for the supersolution branch.
    pub fn mu_bar(&self) -> f64 {
        let aa = 1.0 + self.alpha * self.alpha;
        aa * aa / (2.0 * self.b)
    }

    pub fn grid(&self, resolution: u32) -> Result<Arc<MaskedGrid>> {
        domain_grid(self.alpha, resolution)
    }
}

/// Grid on the ellipse alpha^2 x^2 + y^2 < 1.
pub fn domain_grid(alpha: f64, resolution: u32) -> Result<Arc<MaskedGrid>> {
    build_grid(&DomainSpec::Ellipse { alpha, beta: 1.0 }, resolution)
}

fn require_ellipse(grid: &MaskedGrid, alpha: f64) -> Result<()> {
    match grid.domain {
        DomainSpec::Ellipse { alpha: ga, beta } if beta == 1.0 && (ga - alpha).abs() <= 1e-12 => {
            Ok(())
        }
        _ => Err(Error::InvalidDomain(format!(
            "grid is not the unit-height ellipse with aspect {alpha}"
        ))),
    }
}

/// Lower envelope of the manufactured supersolution weight over the ellipse.
pub fn g_plus(gamma: f64, alpha: f64) -> f64 {
    let g2 = gamma * gamma;
    let a2 = alpha * alpha;
    4.0 * g2 / ((1.0 + g2) * (1.0 + g2)) * (1.0 + a2 + g2 * (a2 - 1.0))
}

/// Upper envelope of the subsolution weight over the core ellipse.
pub fn g_minus(gamma: f64, alpha: f64, c: f64) -> f64 {
    let g2 = gamma * gamma;
    let a2 = alpha * alpha;
    4.0 * g2 / (c * (1.0 + g2) * (1.0 + g2)) * (1.0 + a2 + g2 * (1.0 - a2))
}

/// Argmax of gamma -> g_plus(gamma, alpha), squared.
pub fn gamma_bar_sq(alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    (1.0 + a2) / (3.0 - a2)
}

/// Squared supersolution parameter solving g_plus(gamma, alpha) = mu*b on the
/// increasing branch. The quadratic root is rationalized so no cancellation
/// occurs as mu*b approaches its cap (1+alpha^2)^2/2.
pub fn gamma_plus_sq(mu: f64, alpha: f64, b: f64) -> Result<f64> {
    let aa = 1.0 + alpha * alpha;
    let s = mu * b;
    if !(mu > 0.0) || s > 0.5 * aa * aa * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "multiplier {mu} outside (0, {}] for aspect {alpha}, bound {b}",
            0.5 * aa * aa / b
        )));
    }
    // The root has a vertical tangent at the cap, so a discriminant within
    // rounding distance of zero is taken as zero; otherwise one ulp in mu*b
    // would smear the extremal parameter by 1e-8.
    let disc0 = aa * aa - 2.0 * s;
    let disc = if disc0 <= aa * aa * 1e-12 { 0.0 } else { disc0 };
    Ok(s / (2.0 * aa - s + 2.0 * disc.sqrt()))
}

pub fn gamma_plus(mu: f64, alpha: f64, b: f64) -> Result<f64> {
    Ok(gamma_plus_sq(mu, alpha, b)?.sqrt())
}

/// Squared subsolution parameter solving g_minus(gamma, alpha, c) = mu*a,
/// rationalized the same way; valid for every aspect in (0, 1].
pub fn gamma_minus_sq(mu: f64, alpha: f64, c: f64, a: f64) -> Result<f64> {
    let aa = 1.0 + alpha * alpha;
    if !(mu > 0.0) || mu > 0.5 * aa * aa / a * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "multiplier {mu} outside (0, {}] for aspect {alpha}, bound {a}",
            0.5 * aa * aa / a
        )));
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidInput(format!("core fraction must lie in (0, 1], got {c}")));
    }
    let x = mu * a * c;
    let disc0 = aa * aa - 2.0 * alpha * alpha * x;
    let disc = if disc0 <= aa * aa * 1e-12 { 0.0 } else { disc0 };
    Ok(x / (2.0 * aa - x + 2.0 * disc.sqrt()))
}

pub fn gamma_minus(mu: f64, alpha: f64, c: f64, a: f64) -> Result<f64> {
    Ok(gamma_minus_sq(mu, alpha, c, a)?.sqrt())
}

/// Supersolution profile 2 log((1+gamma^2)/(1+gamma^2(alpha^2 x^2 + y^2))).
pub fn supersolution(grid: &Arc<MaskedGrid>, alpha: f64, gamma: f64) -> Result<ScalarField> {
    require_ellipse(grid, alpha)?;
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("profile parameter must be positive, got {gamma}")));
    }
    let g2 = gamma * gamma;
    let a2 = alpha * alpha;
    Ok(ScalarField::from_fn(grid, BoundaryRole::DirichletZero, |x, y| {
        2.0 * ((1.0 + g2) / (1.0 + g2 * (a2 * x * x + y * y))).ln()
    }))
}

/// Weight for which the supersolution solves -lap v = V e^v exactly.
pub fn manufactured_weight(grid: &Arc<MaskedGrid>, alpha: f64, gamma: f64) -> Result<ScalarField> {
    require_ellipse(grid, alpha)?;
    let g2 = gamma * gamma;
    let a2 = alpha * alpha;
    let lead = 4.0 * g2 / ((1.0 + g2) * (1.0 + g2));
    Ok(ScalarField::from_fn(grid, BoundaryRole::NoFlux, |x, y| {
        lead * (1.0 + a2 + g2 * (1.0 - a2) * (a2 * x * x - y * y))
    }))
}

/// Subsolution: the supersolution-like bump compressed into the core ellipse
/// alpha^2 x^2 + y^2 < c, zero outside; continuous across the seam.
pub fn subsolution(grid: &Arc<MaskedGrid>, alpha: f64, gamma: f64, c: f64) -> Result<ScalarField> {
    require_ellipse(grid, alpha)?;
    if !(gamma > 0.0) || !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "need positive parameter and core fraction in (0, 1], got gamma={gamma}, c={c}"
        )));
    }
    let g2 = gamma * gamma;
    let a2 = alpha * alpha;
    Ok(ScalarField::from_fn(grid, BoundaryRole::DirichletZero, |x, y| {
        let r2 = a2 * x * x + y * y;
        if r2 < c {
            2.0 * ((1.0 + g2) / (1.0 + g2 / c * r2)).ln()
        } else {
            0.0
        }
    }))
}

/// Ordered barrier couple for a given multiplier.
#[derive(Debug, Clone)]
pub struct BarrierPair {
    pub sub: ScalarField,
    pub sup: ScalarField,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
}

pub fn barrier_pair(grid: &Arc<MaskedGrid>, regime: &EllipseRegime, mu: f64) -> Result<BarrierPair> {
    let gp = gamma_plus(mu, regime.alpha, regime.b)?;
    let gm = gamma_minus(mu, regime.alpha, regime.c, regime.a)?;
    let sup = supersolution(grid, regime.alpha, gp)?;
    let sub = subsolution(grid, regime.alpha, gm, regime.c)?;
    for (p, (&lo, &hi)) in sub.values.iter().zip(&sup.values).enumerate() {
        if lo > hi + 1e-14 {
            let (x, y) = grid.center(p);
            return Err(Error::BarrierInconsistency(format!(
                "barriers cross at cell {p} (x={x}, y={y}): sub={lo} > sup={hi}"
            )));
        }
    }
    Ok(BarrierPair { sub, sup, gamma_minus: gm, gamma_plus: gp })
}

/// Converged steady mean-field profile.
#[derive(Debug, Clone)]
pub struct SteadyProfile {
    pub u: ScalarField,
    pub mu: f64,
    pub lambda: f64,
    /// Max residual of -lap u - mu V e^u over all interior cells.
    pub residual: f64,
    /// Same residual away from the boundary staircase (cells at least three
    /// layers in), where the barrier clamp never binds.
    pub residual_bulk: f64,
    pub iterations: usize,
    /// First linearized eigenvalue, filled by the spectral certificate.
    pub tau1: Option<f64>,
}

/// Total mass mu * sum V e^u h^2 carried by a profile potential.
pub fn mass_of(u: &ScalarField, mu: f64, weight: &WeightField) -> Result<f64> {
    Ok(mu * crate::energetics::weighted_exp_integral(u, weight)?)
}

/// Closed-form mass bracket for the steady profile at multiplier mu, with the
/// declared quadrature slack for comparing against lattice sums.
#[derive(Debug, Clone, Copy)]
pub struct MassBracket {
    pub lower: f64,
    pub upper: f64,
    pub slack: f64,
}

pub fn mass_bracket(regime: &EllipseRegime, mu: f64, grid: &MaskedGrid) -> Result<MassBracket> {
    let gp2 = gamma_plus_sq(mu, regime.alpha, regime.b)?;
    let gm2 = gamma_minus_sq(mu, regime.alpha, regime.c, regime.a)?;
    let pa = std::f64::consts::PI / regime.alpha;
    let lower = mu * regime.a * regime.c * pa * (1.0 + gm2);
    let upper = mu * regime.b * pa * (1.0 + gp2);
    // Lattice sums differ from the closed-form integrals by a staircase strip
    // of width h along the boundary plus a second-order bulk term.
    let vmax = 2.0 * (1.0 + gp2).ln();
    let spec = DomainSpec::Ellipse { alpha: regime.alpha, beta: 1.0 };
    let slack = mu * regime.b * vmax.exp()
        * (2.0 * grid.h * spec.perimeter() + 10.0 * grid.h * grid.h * spec.area());
    Ok(MassBracket { lower, upper, slack })
}

/// Monotone iteration from the supersolution: each step solves
/// (-lap + M) u_next = mu V e^u + M u with M = mu*b*e^{max sup}, then projects
/// back into [sub, min(u, sup)] so ordering and decrease hold exactly. A
/// pre-projection dip below the subsolution deep in the bulk means the
/// barriers do not actually enclose a solution and is reported as such.
pub fn monotone_iterate_with_barriers(
    mu: f64,
    barriers: &BarrierPair,
    weight: &WeightField,
    tol: f64,
) -> Result<SteadyProfile> {
    let grid = barriers.sup.grid().clone();
    if !barriers.sup.same_grid(&weight.v) || !barriers.sub.same_grid(&weight.v) {
        return Err(Error::InvalidInput("barriers and weight live on different grids".into()));
    }
    if !(tol > 0.0) || !(mu > 0.0) {
        return Err(Error::InvalidInput(format!("need positive mu and tol, got {mu}, {tol}")));
    }
    let n = grid.interior_count();
    let shift = mu * weight.b * barriers.sup.max().exp();
    let dip_allowance = (0.05 * barriers.sup.max().max(1.0) * grid.h).max(1e-9);
    let inner_tol = (0.01 * tol * shift).clamp(1e-14, 1e-10);
    let max_cg = (5 * (grid.nx as usize + grid.ny as usize)).max(2000);

    let mut u = barriers.sup.values.clone();
    let mut next = u.clone();
    let mut rhs = vec![0.0; n];
    let mut iterations = 0usize;
    loop {
        for i in 0..n {
            rhs[i] = mu * weight.v.values[i] * u[i].exp() + shift * u[i];
        }
        let report = cg_solve(
            &mut |x, y| {
                grid.apply_neg_laplacian_dirichlet(x, y);
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi += shift * xi;
                }
            },
            &rhs,
            &mut next,
            inner_tol,
            max_cg,
        );
        if !report.converged {
            return Err(Error::SolverDiverged {
                context: "shifted steady-state solve",
                residual: report.residual_max,
                iterations: report.iterations,
            });
        }
        iterations += 1;
        let mut delta_max = 0.0_f64;
        for i in 0..n {
            let raw = next[i];
            let lo = barriers.sub.values[i];
            if raw < lo - dip_allowance && grid.bdry_level(i) >= 3 {
                let (x, y) = grid.center(i);
                return Err(Error::BarrierInconsistency(format!(
                    "iterate fell {} below the subsolution at cell {i} (x={x}, y={y}) after {iterations} sweeps",
                    lo - raw
                )));
            }
            let clamped = raw.min(u[i]).max(lo);
            delta_max = delta_max.max((u[i] - clamped).abs());
            u[i] = clamped;
            next[i] = clamped;
        }
        if delta_max <= tol {
            break;
        }
        if iterations >= 500 {
            return Err(Error::SolverDiverged {
                context: "monotone steady iteration",
                residual: delta_max,
                iterations,
            });
        }
    }

    let field = ScalarField::from_values(&grid, BoundaryRole::DirichletZero, u)?;
    let mut lap = vec![0.0; n];
    grid.apply_neg_laplacian_dirichlet(&field.values, &mut lap);
    let mut residual = 0.0_f64;
    let mut residual_bulk = 0.0_f64;
    for i in 0..n {
        let r = (lap[i] - mu * weight.v.values[i] * field.values[i].exp()).abs();
        residual = residual.max(r);
        if grid.bdry_level(i) >= 3 {
            residual_bulk = residual_bulk.max(r);
        }
    }
    let lambda = mass_of(&field, mu, weight)?;
    Ok(SteadyProfile {
        u: field,
        mu,
        lambda,
        residual,
        residual_bulk,
        iterations,
        tau1: None,
    })
}

pub fn monotone_iterate(
    mu: f64,
    regime: &EllipseRegime,
    grid: &Arc<MaskedGrid>,
    weight: &WeightField,
    tol: f64,
) -> Result<SteadyProfile> {
    if weight.a < regime.a - 1e-12 || weight.b > regime.b + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "weight corridor [{}, {}] escapes the declared regime [{}, {}]",
            weight.a, weight.b, regime.a, regime.b
        )));
    }
    let barriers = barrier_pair(grid, regime, mu)?;
    monotone_iterate_with_barriers(mu, &barriers, weight, tol)
}

/// Bisect the multiplier until the profile mass lands within rel_tol of the
/// requested value, relying on the empirical continuity of mu -> mass.
pub fn solve_for_lambda(
    lambda_target: f64,
    regime: &EllipseRegime,
    grid: &Arc<MaskedGrid>,
    weight: &WeightField,
    tol: f64,
    rel_tol: f64,
) -> Result<SteadyProfile> {
    if !(lambda_target > 0.0) {
        return Err(Error::InvalidInput(format!("target mass must be positive, got {lambda_target}")));
    }
    let mu_hi = regime.mu_bar();
    let top = monotone_iterate(mu_hi, regime, grid, weight, tol)?;
    if lambda_target > top.lambda * (1.0 + rel_tol) {
        return Err(Error::InvalidInput(format!(
            "target mass {lambda_target} exceeds the reachable {:.4} at this aspect",
            top.lambda
        )));
    }
    if (top.lambda - lambda_target).abs() <= rel_tol * lambda_target {
        return Ok(top);
    }
    let mut lo = 0.0_f64;
    let mut hi = mu_hi;
    let mut best = top;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let prof = monotone_iterate(mid, regime, grid, weight, tol)?;
        let err = prof.lambda - lambda_target;
        if err.abs() <= rel_tol * lambda_target {
            return Ok(prof);
        }
        if err > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if (best.lambda - lambda_target).abs() > err.abs() {
            best = prof;
        }
    }
    Err(Error::SolverDiverged {
        context: "mass bisection",
        residual: (best.lambda - lambda_target).abs() / lambda_target,
        iterations: 60,
    })
}

/// Mass thresholds at the extremal multiplier.
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    pub lambda_under: f64,
    pub lambda_over: f64,
    pub mu_bar: f64,
    pub gamma_under_sq: f64,
    pub gamma_bar_sq: f64,
}

pub fn lambda_over_of(alpha: f64) -> f64 {
    let aa = 1.0 + alpha * alpha;
    0.5 * aa * aa * std::f64::consts::PI / alpha * (1.0 + gamma_bar_sq(alpha))
}

pub fn lambda_under_of(alpha: f64, c_d: f64) -> f64 {
    let aa = 1.0 + alpha * alpha;
    let mu_ac = 0.5 * aa * aa * c_d;
    let disc = (aa * aa - 2.0 * alpha * alpha * mu_ac).max(0.0);
    let gm2 = mu_ac / (2.0 * aa - mu_ac + 2.0 * disc.sqrt());
    0.5 * aa * aa * c_d * std::f64::consts::PI / alpha * (1.0 + gm2)
}

pub fn thresholds(regime: &EllipseRegime) -> Result<Thresholds> {
    let mu_bar = regime.mu_bar();
    let gamma_under_sq = gamma_minus_sq(mu_bar, regime.alpha, regime.c, regime.a)?;
    Ok(Thresholds {
        lambda_under: lambda_under_of(regime.alpha, regime.c_d()),
        lambda_over: lambda_over_of(regime.alpha),
        mu_bar,
        gamma_under_sq,
        gamma_bar_sq: gamma_bar_sq(regime.alpha),
    })
}

fn bisect_root(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // Expects f(lo) > 0 > f(hi).
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Aspect below which the upper mass threshold stays supercritical.
pub fn alpha_star_upper() -> f64 {
    let crit = 8.0 * std::f64::consts::PI;
    bisect_root(1e-3, 0.5, |alpha| lambda_over_of(alpha) - crit)
}

/// Aspect below which even the lower mass threshold stays supercritical.
pub fn alpha_star_under(c_d: f64) -> f64 {
    let crit = 8.0 * std::f64::consts::PI;
    bisect_root(1e-3, 0.5, |alpha| lambda_under_of(alpha, c_d) - crit)
}
