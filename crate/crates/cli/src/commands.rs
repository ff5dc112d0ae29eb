//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use darnwalk::diffusion::{
    estimate_exit_kernel, estimate_p_v, restriction_equivalence_test, telescoping_check,
    write_trajectory_csv, BoundarySet, DarnedState, Domain, PathMode, SimulationOptions, Simulator,
};
use darnwalk::geometry::{
    classify_stability, level_radius, radial_g, CompactDescription, Configuration,
};
use darnwalk::harmonic::{
    harmonicity_test_at_x0, solve_dirichlet, BoundaryValues, ConstantField, DirichletField,
    ScalarField, ShellLevelField,
};
use darnwalk::measures::{
    check_compatibility, make_parametric_family, weak_limit_family, Atom, LevelMeasures,
    MeasureFamily, SphereMeasure,
};
use darnwalk::StreamKey;
use serde::Serialize;
use serde_json::json;

use crate::config::Loaded;
use crate::failure::Failure;
use crate::output::{num, Outcome, Table};
use crate::parse;

pub struct Context<'a> {
    pub loaded: Option<&'a Loaded>,
    pub seed: u64,
    pub samples: usize,
}

impl Context<'_> {
    fn config(&self) -> Result<&Configuration, Failure> {
        self.loaded
            .map(|l| &l.config)
            .ok_or_else(|| Failure::parse("--config is required"))
    }

    fn key(&self, op: &str) -> StreamKey {
        StreamKey::new(self.seed).derive(op)
    }

    fn family(&self, path: &Option<PathBuf>) -> Result<Box<dyn LevelMeasures>, Failure> {
        match path {
            Some(p) => {
                let bytes = std::fs::read(p)
                    .map_err(|e| Failure::parse(format!("cannot read {}: {e}", p.display())))?;
                let family: MeasureFamily = serde_json::from_slice(&bytes)
                    .map_err(|e| Failure::parse(format!("{}: {e}", p.display())))?;
                Ok(Box::new(family))
            }
            None => {
                let cfg = self.config()?;
                Ok(Box::new(make_parametric_family(cfg, cfg.weights())?))
            }
        }
    }

    fn options(&self, r0: Option<f64>) -> Result<SimulationOptions, Failure> {
        let mut o = SimulationOptions::from_config(self.config()?);
        if let Some(r0) = r0 {
            o.r0 = r0;
        }
        Ok(o)
    }

    fn sample_counts(&self, op: &str, n: usize) -> std::collections::BTreeMap<String, usize> {
        [(op.to_string(), n)].into_iter().collect()
    }
}

fn state_label(s: &DarnedState) -> String {
    match s {
        DarnedState::AtDarned => "x0".into(),
        DarnedState::AtPoint {
            component,
            position,
        } => format!(
            "{component}:{}",
            position
                .iter()
                .map(|x| num(*x))
                .collect::<Vec<_>>()
                .join(",")
        ),
    }
}

/// Human-readable validation summary.
pub fn validate(l: &Loaded) -> Result<String, Failure> {
    let cfg = &l.config;
    let stability = classify_stability(&cfg.compact_description())?;
    let mut s = String::new();
    let _ = writeln!(s, "shells:");
    let _ = writeln!(
        s,
        "  {:>3} {:>9} {:>3} {:>8} {:>8} {:>9} {:>8}  center",
        "j", "component", "dim", "a", "b", "side", "weight"
    );
    for (j, sh) in cfg.shells().iter().enumerate() {
        let _ = writeln!(
            s,
            "  {:>3} {:>9} {:>3} {:>8} {:>8} {:>9} {:>8}  {:?}",
            j,
            sh.component,
            sh.dim,
            sh.inner_radius,
            sh.outer_radius,
            format!("{:?}", sh.orientation).to_lowercase(),
            cfg.weights()[j],
            sh.center
        );
    }
    let _ = writeln!(s, "weight_sum: {}", cfg.weights().iter().sum::<f64>());
    let _ = writeln!(s, "epsilon: {}", cfg.epsilon());
    let _ = writeln!(s, "r0: {}", cfg.r0());
    let _ = writeln!(s, "hole_count: {}", stability.hole_count);
    let _ = writeln!(s, "strongly_stable: {}", stability.strongly_stable);
    Ok(s)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GfunArgs {
    /// Radii per shell, endpoints included.
    #[arg(long, default_value_t = 101)]
    pub points: usize,
}

pub fn gfun(ctx: &Context<'_>, a: &GfunArgs) -> Result<Outcome, Failure> {
    let cfg = ctx.config()?;
    if a.points < 2 {
        return Err(Failure::parse("--points must be at least 2"));
    }
    let mut table = Table::new("gfun", &["shell", "radius", "g"]);
    let mut shells = Vec::new();
    for (j, s) in cfg.shells().iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..a.points {
            let f = k as f64 / (a.points - 1) as f64;
            let rho = s.inner_radius + f * (s.outer_radius - s.inner_radius);
            let g = radial_g(s, rho)?;
            if g > 0.0 && g < 1.0 {
                worst = worst.max((level_radius(s, g)? - rho).abs() / rho);
            }
            table.push(vec![j.to_string(), num(rho), num(g)]);
        }
        shells.push(json!({"shell": j, "dim": s.dim, "max_roundtrip_error": worst}));
    }
    Ok(Outcome {
        result: json!({"points": a.points, "shells": shells}),
        tables: vec![table],
        ..Outcome::default()
    })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct KernelArgs {
    /// Domain: ut:T, at:T, ball:C:x,y:R, annulus:C:x,y:R1:R2 or JSON.
    #[arg(long, default_value = "ut:0.5")]
    pub domain: String,
    /// Start: x0 or C:x,y,..
    #[arg(long, default_value = "x0")]
    pub from: String,
    #[arg(long)]
    pub r0: Option<f64>,
    /// Measure family JSON (default: the mixture with the config weights).
    #[arg(long)]
    pub family: Option<PathBuf>,
}

fn kernel_table(est: &darnwalk::kernels::KernelEstimate) -> Table {
    let mut table = Table::new("kernel", &["set", "mass", "std_error"]);
    for ((s, m), e) in est.sets.iter().zip(&est.masses).zip(&est.std_errors) {
        table.push(vec![s.clone(), num(*m), num(*e)]);
    }
    table
}

pub fn kernel(ctx: &Context<'_>, a: &KernelArgs) -> Result<Outcome, Failure> {
    let cfg = ctx.config()?;
    let domain = parse::domain(&a.domain)?;
    let start = parse::state(&a.from)?;
    let options = ctx.options(a.r0)?;
    let sigma = ctx.family(&a.family)?.measure_at(options.r0)?;
    let sim = Simulator::new(cfg, &sigma, &domain, options)?;
    let partition = parse::partition(&domain, cfg.shells().len());
    let est = estimate_exit_kernel(&sim, &start, &partition, ctx.samples, ctx.key("kernel"))?;
    Ok(Outcome {
        result: json!({
            "domain": domain,
            "start": start,
            "r0": options.r0,
            "epsilon": options.epsilon,
            "estimate": est,
        }),
        tables: vec![kernel_table(&est)],
        samples: ctx.sample_counts("kernel", ctx.samples),
        ..Outcome::default()
    })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CompatArgs {
    /// Level pairs r:t.
    #[arg(long, default_value = "0.1:0.2,0.25:0.5,0.5:0.9")]
    pub pairs: String,
    /// Largest accepted |z| for shell masses.
    #[arg(long, default_value_t = 3.0)]
    pub z_tol: f64,
    #[arg(long)]
    pub family: Option<PathBuf>,
}

pub fn compat(ctx: &Context<'_>, a: &CompatArgs) -> Result<Outcome, Failure> {
    let cfg = ctx.config()?;
    let pairs = parse::pairs(&a.pairs)?;
    let family = ctx.family(&a.family)?;
    let report = check_compatibility(
        cfg,
        family.as_ref(),
        &pairs,
        ctx.samples,
        a.z_tol,
        ctx.key("compat"),
    )?;
    let mut table = Table::new(
        "compat",
        &[
            "r",
            "t",
            "shell",
            "pushed",
            "expected",
            "std_error",
            "z",
            "angular_p",
        ],
    );
    for p in &report.pairs {
        for s in &p.shells {
            let angular = p
                .angular
                .iter()
                .find(|x| x.shell == s.shell)
                .map(|x| num(x.energy.p_value))
                .unwrap_or_default();
            table.push(vec![
                num(p.r),
                num(p.t),
                s.shell.to_string(),
                num(s.pushed),
                num(s.expected),
                num(s.std_error),
                num(s.z),
                angular,
            ]);
        }
    }
    Ok(Outcome {
        result: serde_json::to_value(&report)?,
        tables: vec![table],
        samples: ctx.sample_counts("push_forward", ctx.samples * pairs.len()),
        ..Outcome::default()
    })
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMeasure {
    Dirac,
    Uniform,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct WeakLimitArgs {
    /// Decreasing levels eta (default 2^-3 .. 2^-8).
    #[arg(long)]
    pub etas: Option<String>,
    #[arg(long, value_enum, default_value_t = StartMeasure::Dirac)]
    pub start: StartMeasure,
    /// Shell carrying the Dirac starts.
    #[arg(long, default_value_t = 0)]
    pub shell: usize,
    /// Target levels r.
    #[arg(long, default_value = "0.5")]
    pub targets: String,
}

pub fn weak_limit(ctx: &Context<'_>, a: &WeakLimitArgs) -> Result<Outcome, Failure> {
    let cfg = ctx.config()?;
    let etas = match &a.etas {
        Some(s) => parse::numbers(s)?,
        None => (3..=8).map(|n| 0.5f64.powi(n)).collect(),
    };
    let targets = parse::numbers(&a.targets)?;
    let shell = cfg
        .shells()
        .get(a.shell)
        .ok_or_else(|| Failure::parse(format!("no shell {}", a.shell)))?;
    let nus = etas
        .iter()
        .map(|&eta| {
            Ok(match a.start {
                StartMeasure::Uniform => SphereMeasure::Parametric {
                    level: eta,
                    weights: cfg.weights().to_vec(),
                },
                StartMeasure::Dirac => {
                    let mut point = shell.center.clone();
                    point[0] += level_radius(shell, eta)?;
                    SphereMeasure::Empirical {
                        level: eta,
                        atoms: vec![Atom {
                            shell: a.shell,
                            point,
                            weight: 1.0,
                        }],
                    }
                }
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let limit = weak_limit_family(
        cfg,
        &etas,
        &nus,
        &targets,
        ctx.samples,
        ctx.key("weaklimit"),
    )?;
    let mut table = Table::new(
        "weaklimit",
        &[
            "level",
            "eta",
            "mass",
            "mass_std_error",
            "atoms",
            "distance_to_next",
        ],
    );
    for d in &limit.diagnostics {
        for (k, it) in d.iterates.iter().enumerate() {
            table.push(vec![
                num(d.level),
                num(it.eta),
                num(it.mass),
                num(it.mass_std_error),
                it.atoms.to_string(),
                d.successive_distances
                    .get(k)
                    .map(|x| num(*x))
                    .unwrap_or_default(),
            ]);
        }
    }
    let mut family = serde_json::to_vec(&limit.family)?;
    family.push(b'\n');
    Ok(Outcome {
        result: json!({"etas": etas, "targets": targets, "diagnostics": limit.diagnostics}),
        tables: vec![table],
        files: vec![("family.json".into(), family)],
        samples: ctx.sample_counts("push_forward", ctx.samples * etas.len() * targets.len()),
    })
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exit,
    Time,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value = "ut:0.5")]
    pub domain: String,
    #[arg(long, default_value = "x0")]
    pub from: String,
    #[arg(long, value_enum, default_value_t = Mode::Exit)]
    pub mode: Mode,
    /// Largest jump in time mode.
    #[arg(long, default_value_t = 0.05)]
    pub max_jump: f64,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Trajectory file name; run k is written to NAME_k.csv.
    #[arg(long)]
    pub traj: Option<String>,
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long)]
    pub family: Option<PathBuf>,
}

pub fn simulate(ctx: &Context<'_>, a: &SimulateArgs) -> Result<Outcome, Failure> {
    let cfg = ctx.config()?;
    let domain = parse::domain(&a.domain)?;
    let start = parse::state(&a.from)?;
    let mut options = ctx.options(a.r0)?;
    if let Mode::Time = a.mode {
        options.mode = PathMode::TimeResolved {
            max_jump: a.max_jump,
        };
    }
    let sigma = ctx.family(&a.family)?.measure_at(options.r0)?;
    let sim = Simulator::new(cfg, &sigma, &domain, options)?;
    let key = ctx.key("simulate");
    let max_dim = cfg.max_dim();
    let mut header = vec!["run", "steps", "resurrections", "time", "component_id"];
    let coords: Vec<String> = (0..max_dim).map(|k| format!("coord_{k}")).collect();
    header.extend(coords.iter().map(String::as_str));
    let mut table = Table::new("exits", &header);
    let mut files = Vec::new();
    let mut exits = Vec::new();
    let stem = a
        .traj
        .as_deref()
        .map(|t| t.strip_suffix(".csv").unwrap_or(t).to_string());
    for k in 0..a.runs {
        let mut rng = key.stream(k as u64);
        let (exit, path) = sim.run_recorded(&start, &mut rng, ctx.seed)?;
        if let Some(stem) = &stem {
            let mut buf = Vec::new();
            write_trajectory_csv(&path, max_dim, &mut buf)?;
            files.push((format!("{stem}_{k}.csv"), buf));
        }
        let mut row = vec![
            k.to_string(),
            exit.steps.to_string(),
            exit.resurrections.to_string(),
            exit.time.map(num).unwrap_or_default(),
        ];
        match &exit.exit {
            DarnedState::AtDarned => {
                row.push("-1".into());
                row.extend(std::iter::repeat_n(String::new(), max_dim));
            }
            DarnedState::AtPoint {
                component,
                position,
            } => {
                row.push(component.to_string());
                row.extend(position.iter().map(|x| num(*x)));
                row.extend(std::iter::repeat_n(String::new(), max_dim - position.len()));
            }
        }
        table.push(row);
        exits.push(exit);
    }
    Ok(Outcome {
        result: json!({"domain": domain, "start": start, "options": options, "exits": exits}),
        tables: vec![table],
        files,
        samples: ctx.sample_counts("paths", a.runs),
    })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PtimeArgs {
    /// The domain V.
    #[arg(long)]
    pub domain: String,
    /// Start states separated by ';'.
    #[arg(long)]
    pub from: String,
    /// A subdomain U of V: adds the check p_V - H_U p_V = p_U.
    #[arg(long)]
    pub inner: Option<String>,
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long)]
    pub family: Option<PathBuf>,
}

pub fn ptime(ctx: &Context<'_>, a: &PtimeArgs) -> Result<Outcome, Failure> {
    let cfg = ctx.config()?;
    let domain = parse::domain(&a.domain)?;
    let starts = parse::states(&a.from)?;
    let options = ctx.options(a.r0)?;
    let sigma = ctx.family(&a.family)?.measure_at(options.r0)?;
    let sim_v = Simulator::new(cfg, &sigma, &domain, options)?;
    let table = estimate_p_v(&sim_v, &starts, ctx.samples, ctx.key("ptime"))?;
    let mut csv = Table::new("ptime", &["start", "mean", "std_error", "n_samples"]);
    for r in &table.rows {
        csv.push(vec![
            state_label(&r.start),
            num(r.mean),
            num(r.std_error),
            r.n_samples.to_string(),
        ]);
    }
    let mut tables = vec![csv];
    let mut telescoping = Vec::new();
    if let Some(inner) = &a.inner {
        let inner = parse::domain(inner)?;
        let sim_u = Simulator::new(cfg, &sigma, &inner, options)?;
        let mut t = Table::new("telescoping", &["start", "p_v", "hu_p_v", "p_u", "z"]);
        for (k, s) in starts.iter().enumerate() {
            let row = telescoping_check(
                &sim_v,
                &sim_u,
                s,
                ctx.samples,
                ctx.key("telescoping").derive_index(k as u64),
            )?;
            t.push(vec![
                state_label(s),
                num(row.p_v),
                num(row.hu_p_v),
                num(row.p_u),
                num(row.z),
            ]);
            telescoping.push(row);
        }
        tables.push(t);
    }
    Ok(Outcome {
        result: json!({"domain": domain, "table": table, "telescoping": telescoping}),
        tables,
        samples: ctx.sample_counts(
            "paths",
            ctx.samples * starts.len() * if a.inner.is_some() { 4 } else { 1 },
        ),
        ..Outcome::default()
    })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RestrictArgs {
    #[arg(long)]
    pub component: i64,
    /// Ball center x,y,..
    #[arg(long)]
    pub center: String,
    #[arg(long)]
    pub radius: f64,
    /// Level r whose closed sublevel set the ball must avoid.
    #[arg(long, default_value_t = 0.5)]
    pub level: f64,
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long)]
    pub family: Option<PathBuf>,
}

pub fn restrict(ctx: &Context<'_>, a: &RestrictArgs) -> Result<Outcome, Failure> {
    let cfg = ctx.config()?;
    let center = parse::numbers(&a.center)?;
    let options = ctx.options(a.r0)?;
    let sigma = ctx.family(&a.family)?.measure_at(options.r0)?;
    let report = restriction_equivalence_test(
        cfg,
        &sigma,
        a.component,
        &center,
        a.radius,
        a.level,
        ctx.samples,
        ctx.key("restrict"),
    )?;
    Ok(Outcome {
        result: serde_json::to_value(&report)?,
        samples: ctx.sample_counts("paths", 2 * ctx.samples),
        ..Outcome::default()
    })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct HarmonicArgs {
    #[arg(long, default_value = "0.1,0.2,0.4")]
    pub radii: String,
    /// constant:C, dirichlet:SHELL:T (H_{U_T} of the indicator of S_{SHELL,T}),
    /// or level:OFFSETS:SLOPES:H0 (offset_j + slope_j g on shell j, H0 at x0).
    #[arg(long, default_value = "constant:1")]
    pub field: String,
    #[arg(long, default_value_t = darnwalk::harmonic::DEFAULT_QUADRATURE)]
    pub quadrature: usize,
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long)]
    pub family: Option<PathBuf>,
}

pub fn harmonic(ctx: &Context<'_>, a: &HarmonicArgs) -> Result<Outcome, Failure> {
    let cfg = ctx.config()?;
    let radii = parse::numbers(&a.radii)?;
    let family = ctx.family(&a.family)?;
    let options = ctx.options(a.r0)?;
    let sigma = family.measure_at(options.r0)?;
    let parts: Vec<&str> = a.field.split(':').collect();
    let key = ctx.key("harmonic");
    let report = match parts.as_slice() {
        ["constant", c] => {
            let c = parse::numbers(c)?.first().copied().unwrap_or(0.0);
            harmonicity_test_at_x0(
                cfg,
                family.as_ref(),
                &ConstantField(c),
                &radii,
                ctx.samples,
                a.quadrature,
                key,
            )?
        }
        ["dirichlet", j, t] => {
            let j: usize = j.parse().map_err(|_| Failure::parse("shell index"))?;
            let t = parse::numbers(t)?.first().copied().unwrap_or(0.5);
            let domain = Domain::Darned { t };
            let sim = Simulator::new(cfg, &sigma, &domain, options)?;
            let boundary = BoundaryValues::indicator(BoundarySet::LevelSphere { shell: j, t });
            let field = DirichletField {
                sim: &sim,
                boundary: &boundary,
            };
            harmonicity_test_at_x0(
                cfg,
                family.as_ref(),
                &field,
                &radii,
                ctx.samples,
                a.quadrature,
                key,
            )?
        }
        ["level", offsets, slopes, h0] => {
            let field = ShellLevelField {
                config: cfg,
                offsets: parse::numbers(offsets)?,
                slopes: parse::numbers(slopes)?,
                at_x0: parse::numbers(h0)?.first().copied().unwrap_or(0.0),
            };
            let m = cfg.shells().len();
            if field.offsets.len() != m || field.slopes.len() != m {
                return Err(Failure::parse(format!(
                    "level field needs {m} offsets and slopes"
                )));
            }
            harmonicity_test_at_x0(
                cfg,
                family.as_ref(),
                &field as &dyn ScalarField,
                &radii,
                ctx.samples,
                a.quadrature,
                key,
            )?
        }
        _ => return Err(Failure::parse(format!("unrecognized field {:?}", a.field))),
    };
    let mut table = Table::new(
        "harmonic",
        &[
            "r",
            "integral",
            "integral_se",
            "at_x0",
            "at_x0_se",
            "z",
            "p_value",
            "pass",
        ],
    );
    for c in &report.radii {
        table.push(vec![
            num(c.r),
            num(c.integral),
            num(c.integral_se),
            num(c.at_x0),
            num(c.at_x0_se),
            num(c.z),
            num(c.report.p_value),
            c.report.pass.to_string(),
        ]);
    }
    Ok(Outcome {
        result: serde_json::to_value(&report)?,
        tables: vec![table],
        samples: ctx.sample_counts("field_draws", 2 * ctx.samples * radii.len()),
        ..Outcome::default()
    })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DirichletArgs {
    #[arg(long, default_value = "ut:0.5")]
    pub domain: String,
    /// constant:C, indicator:SHELL:T, x0, or JSON.
    #[arg(long)]
    pub boundary: String,
    /// Evaluation states separated by ';'.
    #[arg(long, default_value = "x0")]
    pub at: String,
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long)]
    pub family: Option<PathBuf>,
}

pub fn dirichlet(ctx: &Context<'_>, a: &DirichletArgs) -> Result<Outcome, Failure> {
    let cfg = ctx.config()?;
    let domain = parse::domain(&a.domain)?;
    let boundary = parse::boundary(&a.boundary)?;
    let points = parse::states(&a.at)?;
    let options = ctx.options(a.r0)?;
    let sigma = ctx.family(&a.family)?.measure_at(options.r0)?;
    let sim = Simulator::new(cfg, &sigma, &domain, options)?;
    let values = solve_dirichlet(&sim, &boundary, &points, ctx.samples, ctx.key("dirichlet"))?;
    let mut table = Table::new("dirichlet", &["state", "value", "std_error", "n_samples"]);
    for v in &values {
        table.push(vec![
            state_label(&v.state),
            num(v.value),
            num(v.std_error),
            v.n_samples.to_string(),
        ]);
    }
    Ok(Outcome {
        result: json!({"domain": domain, "boundary": boundary, "values": values}),
        tables: vec![table],
        samples: ctx.sample_counts("paths", ctx.samples * points.len()),
        ..Outcome::default()
    })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct StabilityArgs {
    /// Compact description JSON; defaults to the configuration's K.
    #[arg(long)]
    pub compact: Option<PathBuf>,
}

pub fn stability(ctx: &Context<'_>, a: &StabilityArgs) -> Result<Outcome, Failure> {
    let compact = match &a.compact {
        Some(p) => {
            let bytes = std::fs::read(p)
                .map_err(|e| Failure::parse(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_slice::<CompactDescription>(&bytes)
                .map_err(|e| Failure::parse(format!("{}: {e}", p.display())))?
        }
        None => ctx.config()?.compact_description(),
    };
    let report = classify_stability(&compact)?;
    Ok(Outcome {
        result: json!({"compact": compact, "report": report}),
        ..Outcome::default()
    })
}
