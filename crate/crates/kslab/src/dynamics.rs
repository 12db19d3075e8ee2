//! Time integration of the drift-diffusion system with mass-exact fluxes,
//! Lyapunov monitoring, blow-up detection, and perturbed initial data.

use crate::energetics::{free_energy_with, steady_density, DensityState, WeightField};
use crate::error::{Error, Result};
use crate::grid::{dirichlet_energy, BoundaryRole, ScalarField, NBR_XM, NBR_XP, NBR_YM, NBR_YP};
use crate::linalg::{cg_solve, norm_max};
use crate::orlicz;
use crate::poisson::solve_dirichlet_with_guess;
use crate::steady::SteadyProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CFL: f64 = 0.45;
const DT_FLOOR: f64 = 1e-9;
/// Blow-up proxy factor: the verdict fires once sup rho exceeds this multiple
/// of the initial sup. On a fixed grid a collapsing peak saturates near
/// 5/h^2 (the core cell of the concentrating state holds about 5 mass units
/// at any resolution), so the factor must sit between the O(1) excursions of
/// bounded runs and that saturation ceiling at working resolutions.
const SUP_FACTOR: f64 = 50.0;
const ENERGY_TOL_COEFF: f64 = 1e-3;

/// Fixed knobs of a trajectory run. The CFL factor, blow-up triggers, and
/// energy slack coefficient are scheme constants, not parameters.
#[derive(Debug, Clone)]
pub struct IntegratorParams {
    pub t_end: f64,
    pub sample_dt: f64,
    pub dt_max: f64,
    /// Test hook: drop the drift term entirely, leaving the heat equation.
    pub heat_mode: bool,
    pub poisson_tol: f64,
    pub max_steps: usize,
}

impl IntegratorParams {
    pub fn new(t_end: f64, sample_dt: f64, dt_max: f64) -> Result<Self> {
        if !(t_end > 0.0) || !(sample_dt > 0.0) || !(dt_max > 0.0) {
            return Err(Error::InvalidInput(format!(
                "time horizon, sample spacing, and step cap must be positive, got {t_end}, {sample_dt}, {dt_max}"
            )));
        }
        Ok(IntegratorParams {
            t_end,
            sample_dt,
            dt_max,
            heat_mode: false,
            poisson_tol: 1e-10,
            max_steps: 5_000_000,
        })
    }
}

/// Trajectory state: density, its potential (already refreshed), the step
/// size used to reach time t, and the step counter.
#[derive(Debug, Clone)]
pub struct IntegratorState {
    pub t: f64,
    pub rho: DensityState,
    pub u: ScalarField,
    pub dt: f64,
    pub step_count: usize,
}

/// Solves the potential of the initial density and wraps it as a state.
pub fn initial_state(
    rho: DensityState,
    weight: &WeightField,
    params: &IntegratorParams,
) -> Result<IntegratorState> {
    if !rho.rho.same_grid(&weight.v) {
        return Err(Error::InvalidInput("density and weight must share a grid".into()));
    }
    let n = rho.rho.grid().interior_count();
    let tol = params.poisson_tol * rho.rho.max().max(1.0);
    let sol = solve_dirichlet_with_guess(&rho.rho, &vec![0.0; n], tol)?;
    Ok(IntegratorState { t: 0.0, rho, u: sol.u, dt: 0.0, step_count: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    SupThreshold,
    DtFloor,
    NonFinite,
}

/// Blow-up proxy verdict; fired implies exactly one trigger is recorded.
#[derive(Debug, Clone, Copy)]
pub struct BlowupVerdict {
    pub fired: bool,
    pub t_fire: Option<f64>,
    pub trigger: Option<Trigger>,
}

impl BlowupVerdict {
    pub fn quiet() -> Self {
        BlowupVerdict { fired: false, t_fire: None, trigger: None }
    }

    pub fn fire(t: f64, trigger: Trigger) -> Self {
        BlowupVerdict { fired: true, t_fire: Some(t), trigger: Some(trigger) }
    }
}

/// One sampled monitor row. entropy is the sum rho*(log rho - 1) h^2 and
/// grad_u_sq the discrete Dirichlet energy of the potential.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRow {
    pub t: f64,
    pub mass: f64,
    pub sup_rho: f64,
    pub free_energy: f64,
    pub orlicz_distance: f64,
    pub dissipation: f64,
    pub entropy: f64,
    pub grad_u_sq: f64,
}

/// Sampled monitors plus per-step extrema tracked between samples.
/// max_energy_violation is the worst per-step free-energy increase beyond
/// the scheme slack (nonpositive when the Lyapunov structure held);
/// max_clip_fraction the worst per-step clipped mass relative to total.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub rows: Vec<TrajectoryRow>,
    /// Worst excess of F(row k+1) - F(row k) over the sampled slack
    /// 1e-3 |F(0)| (t_{k+1} - t_k); nonpositive means the run dissipated.
    pub max_energy_violation: f64,
    /// Largest raw single-step increase of F, with no slack subtracted.
    pub max_step_energy_increase: f64,
    pub max_clip_fraction: f64,
    pub steps: usize,
}

fn minmod(a: f64, b: f64) -> f64 {
    if a > 0.0 && b > 0.0 {
        a.min(b)
    } else if a < 0.0 && b < 0.0 {
        a.max(b)
    } else {
        0.0
    }
}

struct StepStats {
    dt_raw: f64,
    clip_fraction: f64,
}

enum Advanced {
    Next(Box<IntegratorState>, StepStats),
    NonFinite { t: f64 },
}

/// One IMEX update: explicit limited-upwind advection on face velocities of
/// w = u + log V, implicit backward-Euler diffusion in exact flux form,
/// clipping of negative undershoots with an exact mass rescale, and a
/// warm-started potential refresh.
fn advance(
    state: &IntegratorState,
    weight: &WeightField,
    params: &IntegratorParams,
    dt_cap: f64,
) -> Result<Advanced> {
    let grid = state.rho.rho.grid().clone();
    let h = grid.h;
    let n = grid.interior_count();
    let rho = &state.rho.rho.values;

    // Face drift speeds; per-cell speed sums give the stability bound that
    // keeps the explicit donor-cell update nonnegative.
    let mut w = vec![0.0; n];
    if !params.heat_mode {
        for i in 0..n {
            w[i] = state.u.values[i] + weight.v.values[i].ln();
        }
    }
    let mut speed_sum = vec![0.0_f64; n];
    if !params.heat_mode {
        for p in 0..n {
            for dir in [NBR_XP, NBR_YP] {
                let q = grid.neighbors(p)[dir];
                if q >= 0 {
                    let q = q as usize;
                    let v = (w[q] - w[p]) / h;
                    speed_sum[p] += v.abs();
                    speed_sum[q] += v.abs();
                }
            }
        }
    }
    let s_max = speed_sum.iter().fold(0.0_f64, |acc, &s| acc.max(s));
    let dt_raw = if s_max > 0.0 {
        CFL * (h / s_max).min(params.dt_max)
    } else {
        CFL * params.dt_max
    };
    let dt = dt_raw.min(dt_cap);

    // Explicit advection in conservative flux form: each interior face moves
    // mass between exactly two cells, so the total telescopes. The face
    // density is the upwind value plus a minmod-limited half slope, which
    // falls back to plain donor cell at extrema and where the stencil leaves
    // the domain. The limited value stays within [0, 1.5 rho_upwind], so the
    // update keeps densities nonnegative under the speed-sum bound above.
    let mut star = rho.clone();
    if !params.heat_mode {
        let r = dt / h;
        for p in 0..n {
            for (dir, opp) in [(NBR_XP, NBR_XM), (NBR_YP, NBR_YM)] {
                let q = grid.neighbors(p)[dir];
                if q >= 0 {
                    let q = q as usize;
                    let v = (w[q] - w[p]) / h;
                    let face = if v > 0.0 {
                        let pm = grid.neighbors(p)[opp];
                        let slope = if pm >= 0 {
                            minmod(rho[q] - rho[p], rho[p] - rho[pm as usize])
                        } else {
                            0.0
                        };
                        rho[p] + 0.5 * slope
                    } else {
                        let qp = grid.neighbors(q)[dir];
                        let slope = if qp >= 0 {
                            minmod(rho[q] - rho[p], rho[qp as usize] - rho[q])
                        } else {
                            0.0
                        };
                        rho[q] - 0.5 * slope
                    };
                    let flux = v * face;
                    star[p] -= r * flux;
                    star[q] += r * flux;
                }
            }
        }
    }

    // Implicit diffusion with zero-flux faces.
    let mut next = star.clone();
    let cg_tol = (1e-12 * norm_max(&star).max(1.0)).max(1e-305);
    let max_cg = (5 * (grid.nx as usize + grid.ny as usize)).max(2000);
    let report = cg_solve(
        &mut |v, out| {
            grid.apply_neg_laplacian_neumann(v, out);
            for (oi, vi) in out.iter_mut().zip(v) {
                *oi = vi + dt * *oi;
            }
        },
        &star,
        &mut next,
        cg_tol,
        max_cg,
    );
    if !report.converged {
        return Err(Error::SolverDiverged {
            context: "implicit diffusion step",
            residual: report.residual_max,
            iterations: report.iterations,
        });
    }

    if next.iter().any(|v| !v.is_finite()) {
        return Ok(Advanced::NonFinite { t: state.t + dt });
    }

    // Positivity and exact mass: clip undershoots, rescale to the incoming
    // mass, and track how much the clip moved.
    let mut clipped = 0.0;
    for v in &mut next {
        if *v < 0.0 {
            clipped -= *v;
            *v = 0.0;
        }
    }
    let h2 = h * h;
    let clip_fraction = clipped * h2 / state.rho.mass;
    let total: f64 = next.iter().sum::<f64>() * h2;
    if !(total > 0.0) {
        return Ok(Advanced::NonFinite { t: state.t + dt });
    }
    let factor = state.rho.mass / total;
    for v in &mut next {
        *v *= factor;
    }

    let rho_next =
        DensityState::new(ScalarField::from_values(&grid, BoundaryRole::NoFlux, next)?)?;
    let tol_u = params.poisson_tol * rho_next.rho.max().max(1.0);
    let sol = solve_dirichlet_with_guess(&rho_next.rho, &state.u.values, tol_u)?;
    Ok(Advanced::Next(
        Box::new(IntegratorState {
            t: state.t + dt,
            rho: rho_next,
            u: sol.u,
            dt,
            step_count: state.step_count + 1,
        }),
        StepStats { dt_raw, clip_fraction },
    ))
}

/// Public single-step update with the step size chosen by the stability
/// bound alone.
pub fn step(
    state: &IntegratorState,
    weight: &WeightField,
    params: &IntegratorParams,
) -> Result<IntegratorState> {
    match advance(state, weight, params, f64::INFINITY)? {
        Advanced::Next(next, _) => Ok(*next),
        Advanced::NonFinite { .. } => Err(Error::SolverDiverged {
            context: "time step produced non-finite density",
            residual: f64::NAN,
            iterations: state.step_count,
        }),
    }
}

/// Dissipation integral sum rho |grad(log(rho/V) - u)|^2 h^2 with arithmetic
/// face means; faces touching an empty cell contribute nothing.
fn dissipation_integral(state: &IntegratorState, weight: &WeightField) -> f64 {
    let grid = state.rho.rho.grid();
    let h = grid.h;
    let rho = &state.rho.rho.values;
    let mut total = 0.0;
    for p in 0..grid.interior_count() {
        for dir in [NBR_XP, NBR_YP] {
            let q = grid.neighbors(p)[dir];
            if q >= 0 {
                let q = q as usize;
                if rho[p] <= 1e-30 || rho[q] <= 1e-30 {
                    continue;
                }
                let gp = (rho[p] / weight.v.values[p]).ln() - state.u.values[p];
                let gq = (rho[q] / weight.v.values[q]).ln() - state.u.values[q];
                let slope = (gq - gp) / h;
                total += 0.5 * (rho[p] + rho[q]) * slope * slope;
            }
        }
    }
    total * h * h
}

fn make_row(
    state: &IntegratorState,
    weight: &WeightField,
    reference: &DensityState,
    free_energy: f64,
) -> Result<TrajectoryRow> {
    let dist = orlicz::distance(&state.rho.rho, &reference.rho)?;
    Ok(TrajectoryRow {
        t: state.t,
        mass: state.rho.mass,
        sup_rho: state.rho.rho.max(),
        free_energy,
        orlicz_distance: dist.phi_norm,
        dissipation: dissipation_integral(state, weight),
        entropy: state.rho.entropy - state.rho.mass,
        grad_u_sq: dirichlet_energy(&state.u),
    })
}

/// Everything a finished trajectory hands back: the sampled monitor rows,
/// the blow-up verdict, and the last computed state (density and potential).
pub struct EvolveOutcome {
    pub record: TrajectoryRecord,
    pub verdict: BlowupVerdict,
    pub final_state: IntegratorState,
}

/// Runs the trajectory to t_end or to the first blow-up trigger, sampling
/// monitor rows every sample_dt. The orlicz column measures the distance to
/// the given reference density.
pub fn evolve(
    initial: DensityState,
    weight: &WeightField,
    reference: &DensityState,
    params: &IntegratorParams,
) -> Result<EvolveOutcome> {
    if !initial.rho.same_grid(&reference.rho) {
        return Err(Error::InvalidInput(
            "initial and reference densities must share a grid".into(),
        ));
    }
    let sup_threshold = SUP_FACTOR * initial.rho.max();
    let mut state = initial_state(initial, weight, params)?;
    let mut f_prev = free_energy_with(&state.rho, weight, &state.u).free_energy;
    let f_scale = f_prev.abs();

    let mut record = TrajectoryRecord {
        rows: vec![make_row(&state, weight, reference, f_prev)?],
        max_energy_violation: f64::NEG_INFINITY,
        max_step_energy_increase: f64::NEG_INFINITY,
        max_clip_fraction: 0.0,
        steps: 0,
    };
    let mut next_sample = params.sample_dt;
    let mut last_row_t = 0.0;
    let mut last_row_f = f_prev;

    loop {
        if state.t >= params.t_end - 1e-12 {
            return Ok(EvolveOutcome {
                record,
                verdict: BlowupVerdict::quiet(),
                final_state: state,
            });
        }
        if record.steps >= params.max_steps {
            return Err(Error::SolverDiverged {
                context: "trajectory step budget",
                residual: state.dt,
                iterations: record.steps,
            });
        }
        let outcome = advance(&state, weight, params, params.t_end - state.t)?;
        let (next, stats) = match outcome {
            Advanced::Next(next, stats) => (next, stats),
            Advanced::NonFinite { t } => {
                return Ok(EvolveOutcome {
                    record,
                    verdict: BlowupVerdict::fire(t, Trigger::NonFinite),
                    final_state: state,
                });
            }
        };
        state = *next;
        record.steps += 1;
        record.max_clip_fraction = record.max_clip_fraction.max(stats.clip_fraction);

        let f_now = free_energy_with(&state.rho, weight, &state.u).free_energy;
        if !f_now.is_finite() {
            return Ok(EvolveOutcome {
                record,
                verdict: BlowupVerdict::fire(state.t, Trigger::NonFinite),
                final_state: state,
            });
        }
        record.max_step_energy_increase = record.max_step_energy_increase.max(f_now - f_prev);
        f_prev = f_now;

        let fired_sup = state.rho.rho.max() > sup_threshold;
        let at_sample = state.t + 1e-12 >= next_sample || state.t >= params.t_end - 1e-12;
        if at_sample || fired_sup {
            let gap = state.t - last_row_t;
            let violation = f_now - last_row_f - ENERGY_TOL_COEFF * f_scale * gap;
            record.max_energy_violation = record.max_energy_violation.max(violation);
            record.rows.push(make_row(&state, weight, reference, f_now)?);
            last_row_t = state.t;
            last_row_f = f_now;
            while next_sample <= state.t + 1e-12 {
                next_sample += params.sample_dt;
            }
        }

        if fired_sup {
            return Ok(EvolveOutcome {
                record,
                verdict: BlowupVerdict::fire(state.t, Trigger::SupThreshold),
                final_state: state,
            });
        }
        if stats.dt_raw < DT_FLOOR {
            return Ok(EvolveOutcome {
                record,
                verdict: BlowupVerdict::fire(state.t, Trigger::DtFloor),
                final_state: state,
            });
        }
    }
}

/// Steady density plus a seeded smooth zero-mean perturbation: six low-order
/// trigonometric modes on box-normalized coordinates, projected to zero mean,
/// scaled to amplitude half the steady minimum, then mass-normalized exactly.
pub fn build_initial_data(
    profile: &SteadyProfile,
    sigma: f64,
    seed: u64,
    weight: &WeightField,
) -> Result<DensityState> {
    if !(0.0..0.5).contains(&sigma) {
        return Err(Error::InvalidInput(format!(
            "perturbation strength must lie in [0, 1/2), got {sigma}"
        )));
    }
    let base = steady_density(&profile.u, profile.lambda, weight)?;
    if sigma == 0.0 {
        return Ok(base);
    }
    let grid = base.rho.grid().clone();
    let n = grid.interior_count();
    let amplitude = 0.5 * base.rho.min();

    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for p in 0..n {
        let (x, y) = grid.center(p);
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let wx = (xmax - xmin).max(grid.h);
    let wy = (ymax - ymin).max(grid.h);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = std::f64::consts::PI;
    let mut modes = Vec::with_capacity(6);
    for _ in 0..6 {
        let a: f64 = rng.random_range(-1.0..1.0);
        let jx = rng.random_range(1..=3) as f64;
        let jy = rng.random_range(1..=3) as f64;
        let px: f64 = rng.random_range(0.0..2.0 * pi);
        let py: f64 = rng.random_range(0.0..2.0 * pi);
        modes.push((a, jx, jy, px, py));
    }
    let mut f = vec![0.0_f64; n];
    for p in 0..n {
        let (x, y) = grid.center(p);
        let xn = (x - xmin) / wx;
        let yn = (y - ymin) / wy;
        let mut s = 0.0;
        for &(a, jx, jy, px, py) in &modes {
            s += a * (jx * pi * xn + px).sin() * (jy * pi * yn + py).sin();
        }
        f[p] = s;
    }
    let mean = f.iter().sum::<f64>() / n as f64;
    for v in &mut f {
        *v -= mean;
    }
    let peak = f.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if peak > 0.0 {
        let scale = amplitude / peak;
        for v in &mut f {
            *v *= scale;
        }
    }

    let h2 = grid.h * grid.h;
    let mut values: Vec<f64> = base
        .rho
        .values
        .iter()
        .zip(&f)
        .map(|(&r, &p)| r + sigma * p)
        .collect();
    let total: f64 = values.iter().sum::<f64>() * h2;
    let factor = profile.lambda / total;
    for v in &mut values {
        *v *= factor;
    }
    DensityState::new(ScalarField::from_values(&grid, BoundaryRole::NoFlux, values)?)
}

/// Gaussian bump of given spread centered at a point, mass-normalized.
pub fn gaussian_density(
    grid: &std::sync::Arc<crate::grid::MaskedGrid>,
    lambda: f64,
    spread: f64,
    center: (f64, f64),
) -> Result<DensityState> {
    if !(lambda > 0.0) || !(spread > 0.0) {
        return Err(Error::InvalidInput(format!(
            "mass and spread must be positive, got {lambda}, {spread}"
        )));
    }
    let n = grid.interior_count();
    let mut values = vec![0.0; n];
    for p in 0..n {
        let (x, y) = grid.center(p);
        let r2 = (x - center.0).powi(2) + (y - center.1).powi(2);
        values[p] = (-r2 / (2.0 * spread * spread)).exp();
    }
    let total: f64 = values.iter().sum::<f64>() * grid.h * grid.h;
    let factor = lambda / total;
    for v in &mut values {
        *v *= factor;
    }
    DensityState::new(ScalarField::from_values(grid, BoundaryRole::NoFlux, values)?)
}

/// Trajectory-against-trap report: free energy pinned between the steady
/// value and its start, entropy and potential-energy monitors under the
/// supplied empirical bound. Reports, never fails.
#[derive(Debug, Clone)]
pub struct TrapReport {
    pub ok: bool,
    pub first_violation: Option<(f64, String)>,
    pub max_entropy: f64,
    pub max_grad_u_sq: f64,
    pub f_initial: f64,
    pub f_final: f64,
}

pub fn trap_monitor(
    record: &TrajectoryRecord,
    steady_free_energy: f64,
    d1_est: f64,
    f_tol: f64,
) -> TrapReport {
    let mut report = TrapReport {
        ok: true,
        first_violation: None,
        max_entropy: f64::NEG_INFINITY,
        max_grad_u_sq: f64::NEG_INFINITY,
        f_initial: record.rows.first().map(|r| r.free_energy).unwrap_or(f64::NAN),
        f_final: record.rows.last().map(|r| r.free_energy).unwrap_or(f64::NAN),
    };
    let f_start = report.f_initial;
    for row in &record.rows {
        report.max_entropy = report.max_entropy.max(row.entropy);
        report.max_grad_u_sq = report.max_grad_u_sq.max(row.grad_u_sq);
        let mut complaint = None;
        if row.free_energy < steady_free_energy - f_tol {
            complaint = Some(format!(
                "free energy {} fell below the steady value {}",
                row.free_energy, steady_free_energy
            ));
        } else if row.free_energy > f_start + f_tol {
            complaint = Some(format!(
                "free energy {} exceeded its start {}",
                row.free_energy, f_start
            ));
        } else if row.entropy > d1_est {
            complaint = Some(format!("entropy {} exceeded the bound {d1_est}", row.entropy));
        } else if row.grad_u_sq > d1_est {
            complaint = Some(format!(
                "potential energy {} exceeded the bound {d1_est}",
                row.grad_u_sq
            ));
        }
        if let Some(msg) = complaint {
            if report.ok {
                report.ok = false;
                report.first_violation = Some((row.t, msg));
            }
        }
    }
    report
}
