//! Experiment configs: a flat key = value format with [section] headers,
//! # comments, strict key checking, and per-mode validation.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::DomainSpec;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Steady,
    Spectrum,
    Evolve,
    Thresholds,
    Sweep,
    Norms,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Steady => "steady",
            Mode::Spectrum => "spectrum",
            Mode::Evolve => "evolve",
            Mode::Thresholds => "thresholds",
            Mode::Sweep => "sweep",
            Mode::Norms => "norms",
        }
    }
}

#[derive(Debug, Clone)]
pub enum WeightSpec {
    Constant(f64),
    /// Expression over x and y with the declared corridor 0 < a <= V <= b.
    /// The Lipschitz declaration is optional; when absent the builder uses
    /// the steepest sampled difference quotient.
    Expression {
        expr: Expr,
        a: f64,
        b: f64,
        lipschitz: Option<f64>,
    },
}

#[derive(Debug, Clone)]
pub enum InitialSpec {
    /// Steady profile plus the seeded bounded perturbation of strength sigma.
    SteadyPerturbed,
    /// Mass-normalized truncated Gaussian bump.
    Gaussian { spread: f64, center: (f64, f64) },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Lambda,
    Sigma,
    Seed,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Lambda => "lambda",
            SweepParameter::Sigma => "sigma",
            SweepParameter::Seed => "seed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub inner: Mode,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    pub resolution: u32,
    pub weight: WeightSpec,
    pub mode: Mode,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    /// Constant multiplying the subsolution weight envelope.
    pub c: f64,
    pub sigma: f64,
    pub seed: u64,
    pub initial: InitialSpec,
    pub t_end: f64,
    pub sample_dt: f64,
    pub dt_max: f64,
    pub steady_tol: f64,
    pub poisson_tol: f64,
    /// Relative mass tolerance when bisecting the multiplier to hit lambda.
    pub mass_rel_tol: f64,
    pub out: PathBuf,
    pub sweep: Option<SweepSpec>,
}

/// Command line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub resolution: Option<u32>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(mode) = overrides.mode {
            self.mode = mode;
        }
        if let Some(out) = &overrides.out {
            self.out = out.clone();
        }
        if let Some(resolution) = overrides.resolution {
            self.resolution = resolution;
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
    }

    /// Serialization in the same format parse_config reads; reparsing the
    /// result reproduces the config. Written verbatim into run metadata.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        s.push_str("[domain]\n");
        match &self.domain {
            DomainSpec::Ellipse { alpha, beta } => {
                s.push_str("shape = ellipse\n");
                s.push_str(&format!("alpha = {alpha}\n"));
                s.push_str(&format!("beta = {beta}\n"));
            }
            DomainSpec::Rectangle { half_width, half_height } => {
                s.push_str("shape = rectangle\n");
                s.push_str(&format!("half_width = {half_width}\n"));
                s.push_str(&format!("half_height = {half_height}\n"));
            }
            DomainSpec::ConvexPolygon { vertices } => {
                s.push_str("shape = polygon\n");
                let parts: Vec<String> =
                    vertices.iter().map(|(x, y)| format!("{x},{y}")).collect();
                s.push_str(&format!("vertices = {}\n", parts.join("; ")));
            }
        }
        s.push_str(&format!("resolution = {}\n", self.resolution));
        s.push_str("\n[weight]\n");
        match &self.weight {
            WeightSpec::Constant(v) => {
                s.push_str("kind = constant\n");
                s.push_str(&format!("value = {v}\n"));
            }
            WeightSpec::Expression { expr, a, b, lipschitz } => {
                s.push_str("kind = expression\n");
                s.push_str(&format!("expr = {}\n", expr.source()));
                s.push_str(&format!("a = {a}\n"));
                s.push_str(&format!("b = {b}\n"));
                if let Some(l) = lipschitz {
                    s.push_str(&format!("lipschitz = {l}\n"));
                }
            }
        }
        s.push_str("\n[model]\n");
        if let Some(l) = self.lambda {
            s.push_str(&format!("lambda = {l}\n"));
        }
        if let Some(m) = self.mu {
            s.push_str(&format!("mu = {m}\n"));
        }
        s.push_str(&format!("c = {}\n", self.c));
        s.push_str(&format!("sigma = {}\n", self.sigma));
        s.push_str(&format!("seed = {}\n", self.seed));
        match &self.initial {
            InitialSpec::SteadyPerturbed => s.push_str("initial = steady_perturbed\n"),
            InitialSpec::Gaussian { spread, center } => {
                s.push_str("initial = gaussian\n");
                s.push_str(&format!("spread = {spread}\n"));
                s.push_str(&format!("center_x = {}\n", center.0));
                s.push_str(&format!("center_y = {}\n", center.1));
            }
        }
        s.push_str("\n[run]\n");
        s.push_str(&format!("mode = {}\n", self.mode.name()));
        s.push_str(&format!("t_end = {}\n", self.t_end));
        s.push_str(&format!("sample_dt = {}\n", self.sample_dt));
        s.push_str(&format!("dt_max = {}\n", self.dt_max));
        s.push_str(&format!("out = {}\n", self.out.display()));
        s.push_str("\n[tolerances]\n");
        s.push_str(&format!("steady = {}\n", self.steady_tol));
        s.push_str(&format!("poisson = {}\n", self.poisson_tol));
        s.push_str(&format!("mass_rel = {}\n", self.mass_rel_tol));
        if let Some(sweep) = &self.sweep {
            s.push_str("\n[sweep]\n");
            s.push_str(&format!("parameter = {}\n", sweep.parameter.name()));
            let parts: Vec<String> = sweep.values.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("values = {}\n", parts.join(", ")));
            s.push_str(&format!("inner = {}\n", sweep.inner.name()));
        }
        s
    }
}

/// Raw accumulator before validation; every field remembers the line where
/// its key appeared so later checks can point back at the file.
#[derive(Default)]
struct Builder {
    shape: Option<(String, usize)>,
    alpha: Option<f64>,
    beta: Option<f64>,
    half_width: Option<f64>,
    half_height: Option<f64>,
    vertices: Option<Vec<(f64, f64)>>,
    resolution: Option<u32>,
    weight_kind: Option<(String, usize)>,
    weight_value: Option<f64>,
    weight_expr: Option<(String, usize)>,
    weight_a: Option<f64>,
    weight_b: Option<f64>,
    weight_lipschitz: Option<f64>,
    lambda: Option<f64>,
    mu: Option<(f64, usize)>,
    c: Option<f64>,
    sigma: Option<f64>,
    seed: Option<u64>,
    initial: Option<(String, usize)>,
    spread: Option<f64>,
    center_x: Option<f64>,
    center_y: Option<f64>,
    mode: Option<(String, usize)>,
    t_end: Option<f64>,
    sample_dt: Option<f64>,
    dt_max: Option<f64>,
    out: Option<String>,
    tol_steady: Option<f64>,
    tol_poisson: Option<f64>,
    tol_mass_rel: Option<f64>,
    sweep_parameter: Option<(String, usize)>,
    sweep_values: Option<Vec<f64>>,
    sweep_inner: Option<(String, usize)>,
}

fn bad(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::Config { line: Some(line), key: key.to_string(), message: message.into() }
}

fn missing(key: &str, message: impl Into<String>) -> Error {
    Error::Config { line: None, key: key.to_string(), message: message.into() }
}

fn parse_f64(value: &str, line: usize, key: &str) -> Result<f64> {
    value.parse().map_err(|_| bad(line, key, format!("expected a number, got '{value}'")))
}

fn parse_u64(value: &str, line: usize, key: &str) -> Result<u64> {
    value.parse().map_err(|_| bad(line, key, format!("expected an integer, got '{value}'")))
}

fn parse_vertices(value: &str, line: usize) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for part in value.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let mut it = part.split(',');
        let x = it.next().unwrap_or("").trim();
        let y = it.next().unwrap_or("").trim();
        if x.is_empty() || y.is_empty() || it.next().is_some() {
            return Err(bad(line, "vertices", format!("expected 'x,y' pairs, got '{part}'")));
        }
        out.push((parse_f64(x, line, "vertices")?, parse_f64(y, line, "vertices")?));
    }
    if out.len() < 3 {
        return Err(bad(line, "vertices", "a polygon needs at least three vertices"));
    }
    Ok(out)
}

fn parse_values(value: &str, line: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(parse_f64(part, line, "values")?);
    }
    if out.is_empty() {
        return Err(bad(line, "values", "the sweep needs at least one value"));
    }
    Ok(out)
}

fn parse_mode(name: &str, line: usize, key: &str) -> Result<Mode> {
    match name {
        "steady" => Ok(Mode::Steady),
        "spectrum" => Ok(Mode::Spectrum),
        "evolve" => Ok(Mode::Evolve),
        "thresholds" => Ok(Mode::Thresholds),
        "sweep" => Ok(Mode::Sweep),
        "norms" => Ok(Mode::Norms),
        other => Err(bad(
            line,
            key,
            format!("unknown mode '{other}' (steady, spectrum, evolve, thresholds, sweep, norms)"),
        )),
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut b = Builder::default();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = match raw.find('#') {
            Some(pos) => raw[..pos].trim(),
            None => raw.trim(),
        };
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('[') {
            if !trimmed.ends_with(']') {
                return Err(bad(line, trimmed, "unterminated section header"));
            }
            section = trimmed[1..trimmed.len() - 1].trim().to_string();
            match section.as_str() {
                "domain" | "weight" | "model" | "run" | "tolerances" | "sweep" => {}
                other => return Err(bad(line, other, "unknown section")),
            }
            continue;
        }
        let (key, value) = match trimmed.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => return Err(bad(line, trimmed, "expected 'key = value'")),
        };
        if value.is_empty() {
            return Err(bad(line, key, "empty value"));
        }
        match (section.as_str(), key) {
            ("domain", "shape") => b.shape = Some((value.to_string(), line)),
            ("domain", "alpha") => b.alpha = Some(parse_f64(value, line, key)?),
            ("domain", "beta") => b.beta = Some(parse_f64(value, line, key)?),
            ("domain", "half_width") => b.half_width = Some(parse_f64(value, line, key)?),
            ("domain", "half_height") => b.half_height = Some(parse_f64(value, line, key)?),
            ("domain", "vertices") => b.vertices = Some(parse_vertices(value, line)?),
            ("domain", "resolution") => {
                b.resolution = Some(parse_u64(value, line, key)? as u32)
            }
            ("weight", "kind") => b.weight_kind = Some((value.to_string(), line)),
            ("weight", "value") => b.weight_value = Some(parse_f64(value, line, key)?),
            ("weight", "expr") => b.weight_expr = Some((value.to_string(), line)),
            ("weight", "a") => b.weight_a = Some(parse_f64(value, line, key)?),
            ("weight", "b") => b.weight_b = Some(parse_f64(value, line, key)?),
            ("weight", "lipschitz") => b.weight_lipschitz = Some(parse_f64(value, line, key)?),
            ("model", "lambda") => b.lambda = Some(parse_f64(value, line, key)?),
            ("model", "mu") => b.mu = Some((parse_f64(value, line, key)?, line)),
            ("model", "c") => b.c = Some(parse_f64(value, line, key)?),
            ("model", "sigma") => b.sigma = Some(parse_f64(value, line, key)?),
            ("model", "seed") => b.seed = Some(parse_u64(value, line, key)?),
            ("model", "initial") => b.initial = Some((value.to_string(), line)),
            ("model", "spread") => b.spread = Some(parse_f64(value, line, key)?),
            ("model", "center_x") => b.center_x = Some(parse_f64(value, line, key)?),
            ("model", "center_y") => b.center_y = Some(parse_f64(value, line, key)?),
            ("run", "mode") => b.mode = Some((value.to_string(), line)),
            ("run", "t_end") => b.t_end = Some(parse_f64(value, line, key)?),
            ("run", "sample_dt") => b.sample_dt = Some(parse_f64(value, line, key)?),
            ("run", "dt_max") => b.dt_max = Some(parse_f64(value, line, key)?),
            ("run", "out") => b.out = Some(value.to_string()),
            ("tolerances", "steady") => b.tol_steady = Some(parse_f64(value, line, key)?),
            ("tolerances", "poisson") => b.tol_poisson = Some(parse_f64(value, line, key)?),
            ("tolerances", "mass_rel") => b.tol_mass_rel = Some(parse_f64(value, line, key)?),
            ("sweep", "parameter") => b.sweep_parameter = Some((value.to_string(), line)),
            ("sweep", "values") => b.sweep_values = Some(parse_values(value, line)?),
            ("sweep", "inner") => b.sweep_inner = Some((value.to_string(), line)),
            _ => {
                return Err(bad(
                    line,
                    key,
                    format!("unknown key in section [{section}]"),
                ))
            }
        }
    }
    finish(b)
}

fn finish(b: Builder) -> Result<ExperimentConfig> {
    let (shape, shape_line) =
        b.shape.ok_or_else(|| missing("shape", "the [domain] section must name a shape"))?;
    let domain = match shape.as_str() {
        "ellipse" => {
            let alpha = b
                .alpha
                .ok_or_else(|| missing("alpha", "an ellipse domain needs alpha"))?;
            DomainSpec::Ellipse { alpha, beta: b.beta.unwrap_or(1.0) }
        }
        "rectangle" => DomainSpec::Rectangle {
            half_width: b
                .half_width
                .ok_or_else(|| missing("half_width", "a rectangle domain needs half_width"))?,
            half_height: b
                .half_height
                .ok_or_else(|| missing("half_height", "a rectangle domain needs half_height"))?,
        },
        "polygon" => DomainSpec::ConvexPolygon {
            vertices: b
                .vertices
                .ok_or_else(|| missing("vertices", "a polygon domain needs vertices"))?,
        },
        other => {
            return Err(bad(
                shape_line,
                "shape",
                format!("unknown shape '{other}' (ellipse, rectangle, polygon)"),
            ))
        }
    };
    domain.validate().map_err(|e| missing("shape", e.to_string()))?;

    let resolution = b
        .resolution
        .ok_or_else(|| missing("resolution", "the [domain] section must set resolution"))?;

    let weight = match b.weight_kind {
        None => WeightSpec::Constant(b.weight_value.unwrap_or(1.0)),
        Some((kind, line)) => match kind.as_str() {
            "constant" => {
                let value = b.weight_value.unwrap_or(1.0);
                if !(value > 0.0) {
                    return Err(missing("value", "a constant weight must be positive"));
                }
                WeightSpec::Constant(value)
            }
            "expression" => {
                let (src, expr_line) = b
                    .weight_expr
                    .ok_or_else(|| missing("expr", "an expression weight needs expr"))?;
                let expr = Expr::parse(&src)
                    .map_err(|e| bad(expr_line, "expr", e.to_string()))?;
                let a =
                    b.weight_a.ok_or_else(|| missing("a", "an expression weight declares a"))?;
                let bb =
                    b.weight_b.ok_or_else(|| missing("b", "an expression weight declares b"))?;
                if !(a > 0.0) || !(bb >= a) {
                    return Err(missing("a", format!("bounds must satisfy 0 < a <= b, got a={a}, b={bb}")));
                }
                WeightSpec::Expression { expr, a, b: bb, lipschitz: b.weight_lipschitz }
            }
            other => {
                return Err(bad(
                    line,
                    "kind",
                    format!("unknown weight kind '{other}' (constant, expression)"),
                ))
            }
        },
    };

    let (mode_name, mode_line) =
        b.mode.ok_or_else(|| missing("mode", "the [run] section must set mode"))?;
    let mode = parse_mode(&mode_name, mode_line, "mode")?;

    let lambda = b.lambda;
    let mu = b.mu.map(|(v, _)| v);
    if let (Some(_), Some((_, mu_line))) = (lambda, b.mu) {
        return Err(bad(mu_line, "mu", "give lambda or mu, not both"));
    }

    let sigma = b.sigma.unwrap_or(0.0);
    if !(0.0..0.5).contains(&sigma) {
        return Err(missing("sigma", format!("sigma must lie in [0, 1/2), got {sigma}")));
    }

    let initial = match b.initial {
        None => InitialSpec::SteadyPerturbed,
        Some((name, line)) => match name.as_str() {
            "steady_perturbed" => InitialSpec::SteadyPerturbed,
            "gaussian" => InitialSpec::Gaussian {
                spread: b
                    .spread
                    .ok_or_else(|| missing("spread", "a gaussian initial state needs spread"))?,
                center: (b.center_x.unwrap_or(0.0), b.center_y.unwrap_or(0.0)),
            },
            other => {
                return Err(bad(
                    line,
                    "initial",
                    format!("unknown initial state '{other}' (steady_perturbed, gaussian)"),
                ))
            }
        },
    };

    let sweep = match (b.sweep_parameter, b.sweep_values, b.sweep_inner) {
        (None, None, None) => None,
        (parameter, values, inner) => {
            let (pname, pline) = parameter
                .ok_or_else(|| missing("parameter", "the [sweep] section needs parameter"))?;
            let parameter = match pname.as_str() {
                "lambda" => SweepParameter::Lambda,
                "sigma" => SweepParameter::Sigma,
                "seed" => SweepParameter::Seed,
                other => {
                    return Err(bad(
                        pline,
                        "parameter",
                        format!("unknown sweep parameter '{other}' (lambda, sigma, seed)"),
                    ))
                }
            };
            let values =
                values.ok_or_else(|| missing("values", "the [sweep] section needs values"))?;
            let (iname, iline) =
                inner.ok_or_else(|| missing("inner", "the [sweep] section needs inner"))?;
            let inner = parse_mode(&iname, iline, "inner")?;
            if matches!(inner, Mode::Sweep | Mode::Thresholds) {
                return Err(bad(iline, "inner", "sweep can repeat steady, spectrum, evolve, or norms"));
            }
            Some(SweepSpec { parameter, values, inner })
        }
    };

    let config = ExperimentConfig {
        domain,
        resolution,
        weight,
        mode,
        lambda,
        mu,
        c: b.c.unwrap_or(1.0),
        sigma,
        seed: b.seed.unwrap_or(0),
        initial,
        t_end: b.t_end.unwrap_or(1.0),
        sample_dt: b.sample_dt.unwrap_or(0.1),
        dt_max: b.dt_max.unwrap_or(0.01),
        steady_tol: b.tol_steady.unwrap_or(1e-9),
        poisson_tol: b.tol_poisson.unwrap_or(1e-10),
        mass_rel_tol: b.tol_mass_rel.unwrap_or(5e-3),
        out: PathBuf::from(b.out.unwrap_or_else(|| "out".to_string())),
        sweep,
    };
    validate_mode(&config)?;
    Ok(config)
}

/// Checks that the fields the mode pipeline will read are actually present.
pub fn validate_mode(config: &ExperimentConfig) -> Result<()> {
    let needs_ellipse = |what: &str| match config.domain {
        DomainSpec::Ellipse { beta, .. } if (beta - 1.0).abs() <= 1e-12 => Ok(()),
        DomainSpec::Ellipse { .. } => Err(missing(
            "beta",
            format!("{what} runs on the unit-height ellipse (beta = 1)"),
        )),
        _ => Err(missing("shape", format!("{what} runs on an ellipse domain"))),
    };
    let needs_mass = || {
        if config.lambda.is_none() && config.mu.is_none() {
            Err(missing("lambda", format!("mode {} needs lambda or mu", config.mode.name())))
        } else {
            Ok(())
        }
    };
    match config.mode {
        Mode::Thresholds => needs_ellipse("thresholds mode")?,
        Mode::Steady | Mode::Spectrum | Mode::Norms => {
            needs_ellipse("the steady profile")?;
            needs_mass()?;
        }
        Mode::Evolve => match config.initial {
            InitialSpec::SteadyPerturbed => {
                needs_ellipse("the steady profile")?;
                needs_mass()?;
            }
            InitialSpec::Gaussian { .. } => {
                if config.lambda.is_none() {
                    return Err(missing("lambda", "a gaussian run needs lambda for its mass"));
                }
            }
        },
        Mode::Sweep => {
            let sweep = config
                .sweep
                .as_ref()
                .ok_or_else(|| missing("parameter", "mode sweep needs a [sweep] section"))?;
            let mut probe = config.clone();
            probe.mode = sweep.inner;
            probe.sweep = None;
            // Each swept value fills its parameter before the run starts.
            match sweep.parameter {
                SweepParameter::Lambda => probe.lambda = Some(probe.lambda.unwrap_or(1.0)),
                SweepParameter::Sigma => {}
                SweepParameter::Seed => {}
            }
            validate_mode(&probe)?;
            if sweep.parameter == SweepParameter::Sigma {
                for &v in &sweep.values {
                    if !(0.0..0.5).contains(&v) {
                        return Err(missing(
                            "values",
                            format!("swept sigma must lie in [0, 1/2), got {v}"),
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        line: None,
        key: path.display().to_string(),
        message: format!("cannot read config: {e}"),
    })?;
    parse_config(&text)
}
