//! Free energy of a density, the Dirichlet-class variational functional, the
//! steady-density map, and the gap identity connecting them.

use crate::error::{Error, Result};
use crate::grid::{dirichlet_energy, BoundaryRole, ScalarField};
use crate::poisson;

/// Spatial weight with certified bounds: 0 < a <= V <= b everywhere, and the
/// largest face difference quotient within the declared Lipschitz constant.
#[derive(Debug, Clone)]
pub struct WeightField {
    pub v: ScalarField,
    pub a: f64,
    pub b: f64,
    pub lipschitz: f64,
}

impl WeightField {
    pub fn new(v: ScalarField, a: f64, b: f64, lipschitz: f64) -> Result<Self> {
        if !(a > 0.0) || !(b >= a) {
            return Err(Error::InvalidInput(format!(
                "weight bounds must satisfy 0 < a <= b, got a={a}, b={b}"
            )));
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &w in &v.values {
            if !w.is_finite() {
                return Err(Error::InvalidInput("weight field has non-finite values".into()));
            }
            lo = lo.min(w);
            hi = hi.max(w);
        }
        if lo < a || hi > b {
            return Err(Error::InvalidInput(format!(
                "weight range [{lo}, {hi}] escapes declared bounds [{a}, {b}]"
            )));
        }
        let g = v.grid();
        let inv_h = 1.0 / g.h;
        let mut steepest = 0.0_f64;
        for p in 0..g.interior_count() {
            for &q in g.neighbors(p) {
                if q >= 0 {
                    steepest = steepest.max((v.values[p] - v.values[q as usize]).abs() * inv_h);
                }
            }
        }
        if steepest > lipschitz * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "weight difference quotient {steepest:.6} exceeds declared Lipschitz constant {lipschitz}"
            )));
        }
        Ok(WeightField { v, a, b, lipschitz })
    }

    pub fn constant(grid: &std::sync::Arc<crate::grid::MaskedGrid>, value: f64) -> Result<Self> {
        let v = ScalarField::from_fn(grid, BoundaryRole::NoFlux, |_, _| value);
        WeightField::new(v, value, value, 0.0)
    }

    /// Pinching ratio D = a/b in (0, 1].
    pub fn ratio(&self) -> f64 {
        self.a / self.b
    }
}

/// Nonnegative density with cached mass and entropy (0*log 0 = 0).
#[derive(Debug, Clone)]
pub struct DensityState {
    pub rho: ScalarField,
    pub mass: f64,
    pub entropy: f64,
}

impl DensityState {
    pub fn new(rho: ScalarField) -> Result<Self> {
        let g = rho.grid();
        let h2 = g.h * g.h;
        let mut mass = 0.0;
        let mut entropy = 0.0;
        for (p, &r) in rho.values.iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                let (x, y) = g.center(p);
                return Err(Error::InvalidInput(format!(
                    "density is {r} at cell {p} (x={x}, y={y}); needs a finite nonnegative value"
                )));
            }
            mass += r;
            if r > 0.0 {
                entropy += r * r.ln();
            }
        }
        mass *= h2;
        entropy *= h2;
        if !(mass > 0.0) {
            return Err(Error::InvalidInput("density carries no mass".into()));
        }
        Ok(DensityState { rho, mass, entropy })
    }
}

/// Free-energy decomposition: free_energy = entropy_term - interaction_term,
/// entropy_term the weight-relative entropy sum rho*(log(rho/V) - 1), and
/// interaction_term = half the Green pairing of rho with itself.
#[derive(Debug, Clone, Copy)]
pub struct EnergyReport {
    pub free_energy: f64,
    pub entropy_term: f64,
    pub interaction_term: f64,
}

fn entropy_relative(rho: &DensityState, w: &WeightField) -> f64 {
    let h2 = rho.rho.grid().h * rho.rho.grid().h;
    let mut s = 0.0;
    for (&r, &v) in rho.rho.values.iter().zip(&w.v.values) {
        if r > 0.0 {
            s += r * ((r / v).ln() - 1.0);
        }
    }
    s * h2
}

/// Free energy with the potential of rho already in hand.
pub fn free_energy_with(rho: &DensityState, w: &WeightField, u_rho: &ScalarField) -> EnergyReport {
    let entropy_term = entropy_relative(rho, w);
    let interaction_term = 0.5 * poisson::interaction_energy_with(&rho.rho, u_rho);
    EnergyReport {
        free_energy: entropy_term - interaction_term,
        entropy_term,
        interaction_term,
    }
}

pub fn free_energy(rho: &DensityState, w: &WeightField) -> Result<EnergyReport> {
    if !rho.rho.same_grid(&w.v) {
        return Err(Error::InvalidInput("density and weight live on different grids".into()));
    }
    let u = poisson::green_apply(&rho.rho)?;
    Ok(free_energy_with(rho, w, &u))
}

/// Weighted exponential integral sum V e^v h^2, guarded against overflow.
pub fn weighted_exp_integral(v: &ScalarField, w: &WeightField) -> Result<f64> {
    let vmax = v.max();
    if vmax > 700.0 {
        return Err(Error::InvalidInput(format!(
            "potential reaches {vmax:.1}; exponential integrals stop at 700"
        )));
    }
    let h2 = v.grid().h * v.grid().h;
    Ok(v
        .values
        .iter()
        .zip(&w.v.values)
        .map(|(&vv, &wv)| wv * vv.exp())
        .sum::<f64>()
        * h2)
}

/// J(v) = half the face-gradient energy minus lambda*log of the weighted
/// exponential integral. Defined on the zero-boundary class only.
pub fn functional_j(v: &ScalarField, lambda: f64, w: &WeightField) -> Result<f64> {
    if v.role != BoundaryRole::DirichletZero {
        return Err(Error::InvalidInput(
            "the variational functional needs a zero-boundary potential".into(),
        ));
    }
    let mass_integral = weighted_exp_integral(v, w)?;
    Ok(0.5 * dirichlet_energy(v) - lambda * mass_integral.ln())
}

/// Steady density lambda * V e^u / (sum V e^u h^2); mass is exactly lambda by
/// construction.
pub fn steady_density(u: &ScalarField, lambda: f64, w: &WeightField) -> Result<DensityState> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("mass must be positive, got {lambda}")));
    }
    let total = weighted_exp_integral(u, w)?;
    let values: Vec<f64> = u
        .values
        .iter()
        .zip(&w.v.values)
        .map(|(&uv, &wv)| lambda * wv * uv.exp() / total)
        .collect();
    DensityState::new(ScalarField::from_values(u.grid(), BoundaryRole::NoFlux, values)?)
}

/// Normalized weight V e^u / (sum V e^u h^2); integrates to 1.
pub fn delta_weight(u: &ScalarField, w: &WeightField) -> Result<ScalarField> {
    let total = weighted_exp_integral(u, w)?;
    let values: Vec<f64> = u
        .values
        .iter()
        .zip(&w.v.values)
        .map(|(&uv, &wv)| wv * uv.exp() / total)
        .collect();
    ScalarField::from_values(u.grid(), BoundaryRole::NoFlux, values)
}

/// Both sides of the free-energy gap identity, plus the Jensen remainder that
/// separates them: lhs - rhs = jensen up to solver residuals, jensen >= 0.
#[derive(Debug, Clone, Copy)]
pub struct GapReport {
    pub lhs: f64,
    pub rhs: f64,
    pub jensen: f64,
}

pub fn energy_gap_identity(
    rho: &DensityState,
    lambda: f64,
    w: &WeightField,
    u_lambda: &ScalarField,
) -> Result<GapReport> {
    if (rho.mass - lambda).abs() > 1e-8 * lambda.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "density mass {} does not match the prescribed mass {lambda}",
            rho.mass
        )));
    }
    let u_rho = poisson::green_apply(&rho.rho)?;
    let rho0 = steady_density(u_lambda, lambda, w)?;
    let f_rho = free_energy_with(rho, w, &u_rho).free_energy;
    let f_rho0 = free_energy(&rho0, w)?.free_energy;
    let j_rho = functional_j(&u_rho, lambda, w)?;
    let j_lambda = functional_j(u_lambda, lambda, w)?;

    // Relative entropy of rho against lambda * delta(u_rho).
    let delta = delta_weight(&u_rho, w)?;
    let h2 = rho.rho.grid().h * rho.rho.grid().h;
    let mut jensen = 0.0;
    for (&r, &d) in rho.rho.values.iter().zip(&delta.values) {
        if r > 0.0 {
            jensen += r * (r / (lambda * d)).ln();
        }
    }
    jensen *= h2;

    Ok(GapReport {
        lhs: f_rho - f_rho0,
        rhs: j_rho - j_lambda,
        jensen,
    })
}
