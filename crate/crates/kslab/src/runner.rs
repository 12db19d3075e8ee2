//! Executes a parsed experiment description: builds the grid and weight,
//! runs the requested mode pipeline, and writes results.csv, field
//! snapshots, and a meta record under the output directory.
//!
//! Output layout, identical across modes:
//!   out/results.csv   scalar results, one header plus data rows
//!   out/fields/*.csv  sampled fields as x,y,value triples
//!   out/fields/*.pgm  the same fields as 16-bit grayscale previews
//!   out/meta.txt      run record plus the resolved configuration
//!
//! Timestamps appear only in meta.txt, so results.csv and the field files
//! are byte-identical when the same configuration is run twice.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::{self, ExperimentConfig, InitialSpec, Mode, SweepParameter, WeightSpec};
use crate::dynamics::{
    build_initial_data, evolve, gaussian_density, IntegratorParams, Trigger,
};
use crate::energetics::{free_energy, steady_density, DensityState, WeightField};
use crate::error::{Error, Result};
use crate::grid::{
    build_grid, write_field_csv, write_field_pgm, BoundaryRole, DomainSpec, MaskedGrid,
    ScalarField,
};
use crate::orlicz;
use crate::poisson;
use crate::spectral::{first_eigenvalue, first_eigenvalue_unprojected};
use crate::steady::{monotone_iterate, solve_for_lambda, thresholds, EllipseRegime, SteadyProfile};

/// Runs the experiment described by the config. `jobs` bounds the worker
/// threads a sweep may use; every other mode runs on the calling thread.
pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<()> {
    config::validate_mode(config)?;
    if config.mode == Mode::Sweep {
        run_sweep(config, jobs)
    } else {
        run_single(config)
    }
}

struct OutDirs {
    root: PathBuf,
    fields: PathBuf,
}

impl OutDirs {
    fn prepare(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)
            .map_err(|e| Error::Io(format!("{}: {e}", root.display())))?;
        Ok(OutDirs {
            root: root.to_path_buf(),
            fields: root.join("fields"),
        })
    }

    fn write_field(&self, name: &str, f: &ScalarField) -> Result<()> {
        fs::create_dir_all(&self.fields)
            .map_err(|e| Error::Io(format!("{}: {e}", self.fields.display())))?;
        write_field_csv(f, &self.fields.join(format!("{name}.csv")))?;
        write_field_pgm(f, &self.fields.join(format!("{name}.pgm")))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_rows(dirs: &OutDirs, header: &str, rows: &[String]) -> Result<()> {
    let mut s = String::with_capacity(header.len() + rows.len() * 64 + 16);
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    write_text(&dirs.root.join("results.csv"), &s)
}

fn csv_quote(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_meta(
    config: &ExperimentConfig,
    grid: Option<&MaskedGrid>,
    extra: &[String],
    dirs: &OutDirs,
) -> Result<()> {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut s = String::new();
    s.push_str("# run record\n");
    s.push_str(&format!("tool = kslab {}\n", env!("CARGO_PKG_VERSION")));
    s.push_str("format = 1\n");
    s.push_str(&format!("created_unix = {created}\n"));
    s.push_str(&format!("mode = {}\n", config.mode.name()));
    if let Some(g) = grid {
        s.push_str(&format!("grid_cells = {}\n", g.interior_count()));
        s.push_str(&format!("grid_h = {}\n", g.h));
        s.push_str(&format!("grid_fingerprint = {:016x}\n", g.fingerprint()));
    }
    for line in extra {
        s.push_str(line);
        s.push('\n');
    }
    s.push_str("\n# resolved configuration (reparseable)\n");
    s.push_str(&config.canonical());
    write_text(&dirs.root.join("meta.txt"), &s)
}

/// Weight corridor [a, b] as declared by the config, before any sampling.
fn weight_bounds(spec: &WeightSpec) -> (f64, f64) {
    match spec {
        WeightSpec::Constant(v) => (*v, *v),
        WeightSpec::Expression { a, b, .. } => (*a, *b),
    }
}

fn build_weight(grid: &Arc<MaskedGrid>, spec: &WeightSpec) -> Result<WeightField> {
    match spec {
        WeightSpec::Constant(v) => WeightField::constant(grid, *v),
        WeightSpec::Expression {
            expr,
            a,
            b,
            lipschitz,
        } => {
            let v = ScalarField::from_fn(grid, BoundaryRole::NoFlux, |x, y| expr.eval(x, y));
            let lip = match lipschitz {
                Some(l) => *l,
                // No declared constant: certify the steepest sampled
                // difference quotient instead.
                None => {
                    let g = v.grid();
                    let inv_h = 1.0 / g.h;
                    let mut steepest = 0.0_f64;
                    for p in 0..g.interior_count() {
                        for &q in g.neighbors(p) {
                            if q >= 0 {
                                let d = (v.values[p] - v.values[q as usize]).abs();
                                steepest = steepest.max(d * inv_h);
                            }
                        }
                    }
                    steepest
                }
            };
            WeightField::new(v, *a, *b, lip)
        }
    }
}

fn ellipse_regime(config: &ExperimentConfig) -> Result<EllipseRegime> {
    let alpha = match config.domain {
        DomainSpec::Ellipse { alpha, .. } => alpha,
        _ => {
            return Err(Error::InvalidInput(
                "steady machinery needs an ellipse domain".into(),
            ))
        }
    };
    let (a, b) = weight_bounds(&config.weight);
    EllipseRegime::new(alpha, config.c, a, b)
}

/// Steady profile for the configured mass: prescribed multiplier when mu is
/// given, otherwise bisection to the target lambda.
fn steady_profile(
    config: &ExperimentConfig,
    grid: &Arc<MaskedGrid>,
    weight: &WeightField,
) -> Result<SteadyProfile> {
    let regime = ellipse_regime(config)?;
    let profile = match (config.mu, config.lambda) {
        (Some(mu), _) => monotone_iterate(mu, &regime, grid, weight, config.steady_tol)?,
        (None, Some(lambda)) => solve_for_lambda(
            lambda,
            &regime,
            grid,
            weight,
            config.steady_tol,
            config.mass_rel_tol,
        )?,
        (None, None) => {
            return Err(Error::InvalidInput(
                "steady profile needs lambda or mu".into(),
            ))
        }
    };
    println!(
        "steady profile: lambda = {:.6}, mu = {:.6e}, bulk residual = {:.3e} ({} sweeps)",
        profile.lambda, profile.mu, profile.residual_bulk, profile.iterations
    );
    Ok(profile)
}

fn run_single(config: &ExperimentConfig) -> Result<()> {
    let dirs = OutDirs::prepare(&config.out)?;
    if config.mode == Mode::Thresholds {
        let extra = thresholds_pipeline(config, &dirs)?;
        return write_meta(config, None, &extra, &dirs);
    }

    let grid = build_grid(&config.domain, config.resolution)?;
    println!(
        "grid: {} interior cells at h = {}",
        grid.interior_count(),
        grid.h
    );
    let weight = build_weight(&grid, &config.weight)?;

    let extra = match config.mode {
        Mode::Steady => steady_pipeline(config, &grid, &weight, &dirs)?,
        Mode::Spectrum => spectrum_pipeline(config, &grid, &weight, &dirs)?,
        Mode::Evolve => evolve_pipeline(config, &grid, &weight, &dirs)?,
        Mode::Norms => norms_pipeline(config, &grid, &weight, &dirs)?,
        Mode::Thresholds | Mode::Sweep => unreachable!("dispatched before grid construction"),
    };
    write_meta(config, Some(&grid), &extra, &dirs)
}

const STEADY_HEADER: &str =
    "lambda,mu,residual,residual_bulk,iterations,mass,free_energy,sup_u,sup_rho";

fn steady_row(profile: &SteadyProfile, rho: &DensityState, f: f64) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        profile.lambda,
        profile.mu,
        profile.residual,
        profile.residual_bulk,
        profile.iterations,
        rho.mass,
        f,
        profile.u.max(),
        rho.rho.max()
    )
}

fn steady_pipeline(
    config: &ExperimentConfig,
    grid: &Arc<MaskedGrid>,
    weight: &WeightField,
    dirs: &OutDirs,
) -> Result<Vec<String>> {
    let profile = steady_profile(config, grid, weight)?;
    let rho = steady_density(&profile.u, profile.lambda, weight)?;
    let f = free_energy(&rho, weight)?.free_energy;
    write_rows(dirs, STEADY_HEADER, &[steady_row(&profile, &rho, f)])?;
    dirs.write_field("u", &profile.u)?;
    dirs.write_field("rho", &rho.rho)?;
    println!("free energy {:.6}, sup rho {:.4}", f, rho.rho.max());
    Ok(vec![])
}

fn spectrum_pipeline(
    config: &ExperimentConfig,
    grid: &Arc<MaskedGrid>,
    weight: &WeightField,
    dirs: &OutDirs,
) -> Result<Vec<String>> {
    let profile = steady_profile(config, grid, weight)?;
    let rho = steady_density(&profile.u, profile.lambda, weight)?;
    let f = free_energy(&rho, weight)?.free_energy;
    let cert = first_eigenvalue(&profile.u, profile.lambda, weight)?;
    let unproj = first_eigenvalue_unprojected(&profile.u, profile.lambda, weight)?;
    println!(
        "first eigenvalue tau1 = {:.6} (rayleigh residual {:.2e}), unprojected {:.6}",
        cert.tau1, cert.rayleigh_residual, unproj.tau1
    );
    if cert.tau1 > 0.0 {
        println!("certificate: tau1 > 0, the profile is linearly stable");
    } else {
        println!("certificate failed: tau1 <= 0");
    }
    let header = format!("{STEADY_HEADER},tau1,tau1_unprojected,rayleigh_residual");
    let row = format!(
        "{},{},{},{}",
        steady_row(&profile, &rho, f),
        cert.tau1,
        unproj.tau1,
        cert.rayleigh_residual
    );
    write_rows(dirs, &header, &[row])?;
    dirs.write_field("u", &profile.u)?;
    dirs.write_field("rho", &rho.rho)?;
    dirs.write_field("eigenmode", &cert.eigenfield)?;
    Ok(vec![format!("tau1 = {}", cert.tau1)])
}

fn trigger_name(t: Trigger) -> &'static str {
    match t {
        Trigger::SupThreshold => "sup_threshold",
        Trigger::DtFloor => "dt_floor",
        Trigger::NonFinite => "non_finite",
    }
}

fn evolve_pipeline(
    config: &ExperimentConfig,
    grid: &Arc<MaskedGrid>,
    weight: &WeightField,
    dirs: &OutDirs,
) -> Result<Vec<String>> {
    let (initial, reference) = match config.initial {
        InitialSpec::SteadyPerturbed => {
            let profile = steady_profile(config, grid, weight)?;
            let base = steady_density(&profile.u, profile.lambda, weight)?;
            let init = build_initial_data(&profile, config.sigma, config.seed, weight)?;
            (init, base)
        }
        InitialSpec::Gaussian { spread, center } => {
            let lambda = config.lambda.ok_or_else(|| {
                Error::InvalidInput("a gaussian run needs lambda for its mass".into())
            })?;
            let init = gaussian_density(grid, lambda, spread, center)?;
            (init.clone(), init)
        }
    };
    dirs.write_field("rho_initial", &initial.rho)?;

    let mut params = IntegratorParams::new(config.t_end, config.sample_dt, config.dt_max)?;
    params.poisson_tol = config.poisson_tol;
    println!(
        "evolving to t = {} (mass {:.6}, sup {:.4})",
        config.t_end, initial.mass, initial.rho.max()
    );
    let out = evolve(initial, weight, &reference, &params)?;

    let header = "t,mass,sup_rho,free_energy,orlicz_distance,dissipation,entropy,grad_u_sq";
    let rows: Vec<String> = out
        .record
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.t,
                r.mass,
                r.sup_rho,
                r.free_energy,
                r.orlicz_distance,
                r.dissipation,
                r.entropy,
                r.grad_u_sq
            )
        })
        .collect();
    write_rows(dirs, header, &rows)?;
    dirs.write_field("rho_final", &out.final_state.rho.rho)?;
    dirs.write_field("u_final", &out.final_state.u)?;

    let mut extra = vec![
        format!("steps = {}", out.record.steps),
        format!("t_final = {}", out.final_state.t),
        format!("max_energy_violation = {}", out.record.max_energy_violation),
        format!(
            "max_step_energy_increase = {}",
            out.record.max_step_energy_increase
        ),
        format!("max_clip_fraction = {}", out.record.max_clip_fraction),
    ];
    if out.verdict.fired {
        let t = out.verdict.t_fire.unwrap_or(f64::NAN);
        let name = out.verdict.trigger.map(trigger_name).unwrap_or("unknown");
        println!(
            "blow-up proxy fired at t = {:.4} ({}) after {} steps",
            t, name, out.record.steps
        );
        extra.push("verdict = fired".into());
        extra.push(format!("trigger = {name}"));
        extra.push(format!("t_fire = {t}"));
    } else {
        println!(
            "reached t = {:.4} in {} steps, no blow-up trigger fired",
            out.final_state.t, out.record.steps
        );
        extra.push("verdict = quiet".into());
    }
    Ok(extra)
}

fn thresholds_pipeline(config: &ExperimentConfig, dirs: &OutDirs) -> Result<Vec<String>> {
    let regime = ellipse_regime(config)?;
    let th = thresholds(&regime)?;
    let eight_pi = 8.0 * std::f64::consts::PI;
    let nonempty = th.lambda_under > eight_pi && th.lambda_over > th.lambda_under;
    println!(
        "mass thresholds at alpha = {} (D = {:.4}, c_D = {:.4}):",
        regime.alpha,
        regime.ratio(),
        regime.c_d()
    );
    println!("  lambda_under = {:.6}", th.lambda_under);
    println!("  lambda_over  = {:.6}", th.lambda_over);
    println!("  8 pi         = {:.6}", eight_pi);
    println!(
        "  supercritical window {}",
        if nonempty { "nonempty" } else { "empty" }
    );
    let header = "alpha,c,c_d,mu_bar,gamma_under_sq,gamma_bar_sq,lambda_under,lambda_over,eight_pi,window_nonempty";
    let row = format!(
        "{},{},{},{},{},{},{},{},{},{}",
        regime.alpha,
        regime.c,
        regime.c_d(),
        th.mu_bar,
        th.gamma_under_sq,
        th.gamma_bar_sq,
        th.lambda_under,
        th.lambda_over,
        eight_pi,
        nonempty
    );
    write_rows(dirs, header, &[row])?;
    Ok(vec![format!("window_nonempty = {nonempty}")])
}

fn norms_pipeline(
    config: &ExperimentConfig,
    grid: &Arc<MaskedGrid>,
    weight: &WeightField,
    dirs: &OutDirs,
) -> Result<Vec<String>> {
    let profile = steady_profile(config, grid, weight)?;
    let base = steady_density(&profile.u, profile.lambda, weight)?;
    let rho0 = build_initial_data(&profile, config.sigma, config.seed, weight)?;
    let diff: Vec<f64> = rho0
        .rho
        .values
        .iter()
        .zip(&base.rho.values)
        .map(|(a, b)| a - b)
        .collect();
    let pert = ScalarField::from_values(grid, BoundaryRole::NoFlux, diff)?;

    let pert_sup = pert.values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let pert_modular = orlicz::modular_phi(&pert);
    let pert_norm = orlicz::orlicz_norm(&pert)?;
    let u_pert = poisson::solve_dirichlet(&pert, config.poisson_tol)?.u;
    let u_pert_lux = orlicz::luxemburg_norm(&u_pert)?;
    let u_lux = orlicz::luxemburg_norm(&profile.u)?;
    println!(
        "perturbation: sup {:.4e}, modular {:.4e}, orlicz norm {:.4e}",
        pert_sup, pert_modular, pert_norm
    );

    let header = "quantity,value";
    let rows = vec![
        format!("lambda,{}", profile.lambda),
        format!("mu,{}", profile.mu),
        format!("sigma,{}", config.sigma),
        format!("seed,{}", config.seed),
        format!("steady_mass,{}", base.mass),
        format!("perturbed_mass,{}", rho0.mass),
        format!("perturbation_sup,{pert_sup}"),
        format!("perturbation_modular,{pert_modular}"),
        format!("perturbation_orlicz_norm,{pert_norm}"),
        format!("perturbation_potential_luxemburg,{u_pert_lux}"),
        format!("steady_potential_luxemburg,{u_lux}"),
    ];
    write_rows(dirs, header, &rows)?;
    dirs.write_field("rho_perturbed", &rho0.rho)?;
    dirs.write_field("perturbation", &pert)?;
    Ok(vec![])
}

fn run_sweep(config: &ExperimentConfig, jobs: usize) -> Result<()> {
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| Error::InvalidInput("sweep mode needs a [sweep] section".into()))?;
    let dirs = OutDirs::prepare(&config.out)?;

    let mut subruns = Vec::with_capacity(sweep.values.len());
    for &v in &sweep.values {
        let mut sub = config.clone();
        sub.mode = sweep.inner;
        sub.sweep = None;
        let label = match sweep.parameter {
            SweepParameter::Lambda => {
                sub.lambda = Some(v);
                sub.mu = None;
                format!("lambda_{v}")
            }
            SweepParameter::Sigma => {
                sub.sigma = v;
                format!("sigma_{v}")
            }
            SweepParameter::Seed => {
                sub.seed = v as u64;
                format!("seed_{}", v as u64)
            }
        };
        sub.out = config.out.join(&label);
        config::validate_mode(&sub)?;
        subruns.push((label, sub));
    }

    let n = subruns.len();
    let workers = jobs.max(1).min(n.max(1));
    println!(
        "sweep over {}: {} runs of mode {} with {} worker(s)",
        sweep.parameter.name(),
        n,
        sweep.inner.name(),
        workers
    );

    let next = AtomicUsize::new(0);
    let outcomes: Vec<Mutex<Option<Result<()>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let (label, sub) = &subruns[i];
                println!("[{}/{}] {} -> {}", i + 1, n, label, sub.out.display());
                let res = run_single(sub);
                *outcomes[i].lock().unwrap() = Some(res);
            });
        }
    });

    let header = "index,parameter,value,directory,status";
    let mut rows = Vec::with_capacity(n);
    let mut first_err = None;
    for (i, (label, _)) in subruns.iter().enumerate() {
        let outcome = outcomes[i].lock().unwrap().take();
        let status = match outcome {
            Some(Ok(())) => "ok".to_string(),
            Some(Err(e)) => {
                if first_err.is_none() {
                    first_err = Some(e.clone());
                }
                csv_quote(&format!("error: {e}"))
            }
            None => "skipped".to_string(),
        };
        rows.push(format!(
            "{},{},{},{},{}",
            i,
            sweep.parameter.name(),
            sweep.values[i],
            label,
            status
        ));
    }
    write_rows(&dirs, header, &rows)?;
    write_meta(config, None, &[format!("runs = {n}")], &dirs)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
