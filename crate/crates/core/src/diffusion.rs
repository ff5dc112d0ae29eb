//! The darned diffusion: Brownian motion in each component, absorbed into the
//! darned point `x0` on `∂K` and resurrected on `S_{r0}` with law `σ_{r0}`.
//!
//! Paths are simulated by walk-on-spheres. With time accumulation on, each
//! jump of radius `R` in dimension `d` adds the exact mean exit time `R²/d`
//! of the ball, and each resurrection adds a fixed holding constant that
//! stands in for the time spent in `U_{r0}`.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, level_radius, Configuration};
use crate::kernels::{sample_ball_exit, sample_direction_into, KernelEstimate};
use crate::measures::{MeasureSampler, SphereMeasure};
use crate::rng::{Stream, StreamKey};
use crate::stats::{binomial_se, energy_test, mean_se, EnergyTest, TestReport};

/// A point of `X0 = {x0} ∪ (X \ K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum DarnedState {
    AtDarned,
    AtPoint { component: i64, position: Vec<f64> },
}

impl DarnedState {
    pub fn point(component: i64, position: Vec<f64>) -> Self {
        DarnedState::AtPoint {
            component,
            position,
        }
    }
}

/// Open subsets of the darned space built from balls, annuli and the level
/// sets of `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Ball {
        component: i64,
        center: Vec<f64>,
        radius: f64,
    },
    Annulus {
        component: i64,
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
    /// `A_t = {0 < g < t}`; its boundary in `X0` is `S_t ∪ {x0}`.
    Level {
        t: f64,
    },
    /// `U_t = {x0} ∪ A_t`.
    Darned {
        t: f64,
    },
    Union {
        parts: Vec<Domain>,
    },
    Intersection {
        parts: Vec<Domain>,
    },
    Complement {
        part: Box<Domain>,
    },
}

#[derive(Debug, Clone)]
struct Band {
    component: i64,
    center: Vec<f64>,
    lo: f64,
    hi: f64,
    /// Radius of the `S_t` side of the band.
    level_side: f64,
}

/// A domain with level radii resolved, ready for distance queries.
#[derive(Debug, Clone)]
enum Region {
    Ball {
        component: i64,
        center: Vec<f64>,
        radius: f64,
    },
    Annulus {
        component: i64,
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
    Bands {
        bands: Vec<Band>,
        darned: bool,
    },
    Union(Vec<Region>),
    Intersection(Vec<Region>),
    Complement(Box<Region>),
}

impl Domain {
    fn compile(&self, config: &Configuration) -> Result<Region> {
        Ok(match self {
            Domain::Ball {
                component,
                center,
                radius,
            } => {
                if !(*radius > 0.0) {
                    return Err(Error::Precondition(format!(
                        "ball radius {radius} must be positive"
                    )));
                }
                check_dim(config, *component, center.len())?;
                Region::Ball {
                    component: *component,
                    center: center.clone(),
                    radius: *radius,
                }
            }
            Domain::Annulus {
                component,
                center,
                inner,
                outer,
            } => {
                if !(*inner >= 0.0 && inner < outer) {
                    return Err(Error::Precondition(format!(
                        "annulus radii ({inner}, {outer}) must satisfy 0 <= inner < outer"
                    )));
                }
                check_dim(config, *component, center.len())?;
                Region::Annulus {
                    component: *component,
                    center: center.clone(),
                    inner: *inner,
                    outer: *outer,
                }
            }
            Domain::Level { t } | Domain::Darned { t } => {
                let bands = config
                    .shells()
                    .iter()
                    .map(|s| {
                        let st = level_radius(s, *t)?;
                        Ok(Band {
                            component: s.component,
                            center: s.center.clone(),
                            lo: s.inner_radius.min(st),
                            hi: s.inner_radius.max(st),
                            level_side: st,
                        })
                    })
                    .collect::<Result<_>>()?;
                Region::Bands {
                    bands,
                    darned: matches!(self, Domain::Darned { .. }),
                }
            }
            Domain::Union { parts } => Region::Union(
                parts
                    .iter()
                    .map(|p| p.compile(config))
                    .collect::<Result<_>>()?,
            ),
            Domain::Intersection { parts } => Region::Intersection(
                parts
                    .iter()
                    .map(|p| p.compile(config))
                    .collect::<Result<_>>()?,
            ),
            Domain::Complement { part } => Region::Complement(Box::new(part.compile(config)?)),
        })
    }

    /// Whether `x0` belongs to the domain.
    pub fn contains_x0(&self) -> bool {
        match self {
            Domain::Ball { .. } | Domain::Annulus { .. } | Domain::Level { .. } => false,
            Domain::Darned { .. } => true,
            Domain::Union { parts } => parts.iter().any(Domain::contains_x0),
            Domain::Intersection { parts } => parts.iter().all(Domain::contains_x0),
            Domain::Complement { part } => !part.contains_x0(),
        }
    }

    /// Signed distance of a point to the domain boundary: positive inside,
    /// and never larger in magnitude than the true distance.
    pub fn signed_distance(
        &self,
        config: &Configuration,
        component: i64,
        x: &[f64],
    ) -> Result<f64> {
        Ok(self.compile(config)?.signed_distance(component, x))
    }
}

fn check_dim(config: &Configuration, component: i64, dim: usize) -> Result<()> {
    match config.component_dim(component) {
        Some(d) if d != dim => Err(Error::Precondition(format!(
            "component {component} has dim {d}, domain center has {dim} coordinates"
        ))),
        _ => Ok(()),
    }
}

impl Region {
    fn signed_distance(&self, component: i64, x: &[f64]) -> f64 {
        match self {
            Region::Ball {
                component: c,
                center,
                radius,
            } => {
                if *c != component {
                    return f64::NEG_INFINITY;
                }
                radius - distance(x, center)
            }
            Region::Annulus {
                component: c,
                center,
                inner,
                outer,
            } => {
                if *c != component {
                    return f64::NEG_INFINITY;
                }
                let rho = distance(x, center);
                (rho - inner).min(outer - rho)
            }
            Region::Bands { bands, darned } => bands
                .iter()
                .filter(|b| b.component == component)
                .map(|b| {
                    let rho = distance(x, &b.center);
                    if rho < b.lo {
                        rho - b.lo
                    } else if rho > b.hi {
                        b.hi - rho
                    } else if *darned {
                        // the K side belongs to x0, only S_t bounds U_t
                        (b.level_side - rho).abs()
                    } else {
                        (rho - b.lo).min(b.hi - rho)
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max),
            Region::Union(parts) => parts
                .iter()
                .map(|p| p.signed_distance(component, x))
                .fold(f64::NEG_INFINITY, f64::max),
            Region::Intersection(parts) => parts
                .iter()
                .map(|p| p.signed_distance(component, x))
                .fold(f64::INFINITY, f64::min),
            Region::Complement(part) => -part.signed_distance(component, x),
        }
    }
}

/// How much of a path to keep and how far one jump may go.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PathMode {
    /// Maximal walk-on-spheres jumps.
    ExitLaw,
    /// Jumps capped at `max_jump`, so recorded states are at most that far
    /// apart.
    TimeResolved { max_jump: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub r0: f64,
    pub epsilon: f64,
    pub max_steps: u64,
    pub accumulate_time: bool,
    pub mode: PathMode,
}

impl SimulationOptions {
    /// Configuration defaults in exit-law mode with time accumulation.
    pub fn from_config(config: &Configuration) -> Self {
        Self {
            r0: config.r0(),
            epsilon: config.epsilon(),
            max_steps: config.max_steps(),
            accumulate_time: true,
            mode: PathMode::ExitLaw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub step: u64,
    pub clock: Option<f64>,
    pub state: DarnedState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarnedPath {
    pub points: Vec<PathPoint>,
    pub r0: f64,
    pub mode: PathMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitResult {
    pub exit: DarnedState,
    /// Accumulated expected time, when requested.
    pub time: Option<f64>,
    pub steps: u64,
    pub resurrections: u64,
}

/// Expected time spent in `U_{r0}` per resurrection, in closed form:
/// `Σ_j m_j (s_j(r0) - a_j)² / d_j` with `m_j` the shell masses of `σ_{r0}`.
pub fn holding_constant(config: &Configuration, sigma_r0: &SphereMeasure) -> Result<f64> {
    let r0 = sigma_r0.level();
    let masses = sigma_r0.normalized()?.shell_masses(config.shells().len());
    let mut c = 0.0;
    for (s, m) in config.shells().iter().zip(masses) {
        let delta = level_radius(s, r0)? - s.inner_radius;
        c += m * delta * delta / s.dim as f64;
    }
    Ok(c)
}

/// Simulator of the darned diffusion stopped on leaving a domain.
#[derive(Debug)]
pub struct Simulator<'a> {
    config: &'a Configuration,
    region: Region,
    contains_x0: bool,
    sampler: MeasureSampler<'a>,
    options: SimulationOptions,
    holding: f64,
}

impl<'a> Simulator<'a> {
    /// `sigma_r0` is the resurrection law; it must live on level
    /// `options.r0`. When `x0` is in the domain, the closure of `U_{r0}`
    /// must be too.
    pub fn new(
        config: &'a Configuration,
        sigma_r0: &'a SphereMeasure,
        domain: &Domain,
        options: SimulationOptions,
    ) -> Result<Self> {
        let r0 = options.r0;
        if !(r0 > 0.0 && r0 < 1.0) {
            return Err(Error::Precondition(format!("r0 = {r0} outside (0, 1)")));
        }
        if (sigma_r0.level() - r0).abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "resurrection law lives on level {}, r0 = {r0}",
                sigma_r0.level()
            )));
        }
        if (sigma_r0.total_mass() - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "resurrection law has mass {}",
                sigma_r0.total_mass()
            )));
        }
        if !(options.epsilon > 0.0) {
            return Err(Error::Precondition("epsilon must be positive".into()));
        }
        if let PathMode::TimeResolved { max_jump } = options.mode {
            if !(max_jump > 0.0) {
                return Err(Error::Precondition("max_jump must be positive".into()));
            }
        }
        let region = domain.compile(config)?;
        let contains_x0 = domain.contains_x0();
        for s in config.shells() {
            let delta = (level_radius(s, r0)? - s.inner_radius).abs();
            if delta <= 2.0 * options.epsilon {
                return Err(Error::Precondition(format!(
                    "S_r0 lies within 2 epsilon of K (gap {delta}); lower epsilon or raise r0"
                )));
            }
        }
        if contains_x0 {
            check_resurrection_room(config, &region, r0)?;
        }
        Ok(Self {
            config,
            region,
            contains_x0,
            sampler: sigma_r0.sampler(config)?,
            options,
            holding: holding_constant(config, sigma_r0)?,
        })
    }

    pub fn holding_constant(&self) -> f64 {
        self.holding
    }

    pub fn options(&self) -> &SimulationOptions {
        &self.options
    }

    pub fn config(&self) -> &Configuration {
        self.config
    }

    fn signed_distance(&self, component: i64, x: &[f64]) -> f64 {
        self.region.signed_distance(component, x)
    }

    /// Checks that the closure of `U_r` lies inside the domain.
    pub fn check_contains_closure(&self, r: f64) -> Result<()> {
        if !self.contains_x0 {
            return Err(Error::Precondition("domain does not contain x0".into()));
        }
        check_resurrection_room(self.config, &self.region, r)
    }

    /// Runs one path from `start` until it leaves the domain.
    pub fn run(&self, start: &DarnedState, rng: &mut Stream) -> Result<ExitResult> {
        self.run_inner(start, rng, None)
    }

    /// As [`Simulator::run`], also returning every visited state.
    pub fn run_recorded(
        &self,
        start: &DarnedState,
        rng: &mut Stream,
        seed: u64,
    ) -> Result<(ExitResult, DarnedPath)> {
        let mut points = Vec::new();
        let result = self.run_inner(start, rng, Some(&mut points))?;
        Ok((
            result,
            DarnedPath {
                points,
                r0: self.options.r0,
                mode: self.options.mode,
                seed,
            },
        ))
    }

    fn run_inner(
        &self,
        start: &DarnedState,
        rng: &mut Stream,
        mut record: Option<&mut Vec<PathPoint>>,
    ) -> Result<ExitResult> {
        let eps = self.options.epsilon;
        let timed = self.options.accumulate_time;
        let mut state = start.clone();
        let mut clock = 0.0;
        let mut steps = 0u64;
        let mut resurrections = 0u64;
        let mut dir_buf = vec![0.0; self.config.max_dim()];
        let mut push = |state: &DarnedState, step: u64, clock: f64| {
            if let Some(points) = record.as_deref_mut() {
                points.push(PathPoint {
                    step,
                    clock: timed.then_some(clock),
                    state: state.clone(),
                });
            }
        };
        if let DarnedState::AtPoint {
            component,
            position,
        } = &state
        {
            let d = self.signed_distance(*component, position);
            if d < -eps && self.config.distance_to_k(*component, position).0 > eps {
                return Err(Error::Precondition(format!(
                    "start point is outside the domain (signed distance {d})"
                )));
            }
        }
        push(&state, 0, clock);
        loop {
            match state {
                DarnedState::AtDarned => {
                    if !self.contains_x0 {
                        break;
                    }
                    if steps >= self.options.max_steps {
                        return Err(Error::NonConvergence { steps });
                    }
                    let (shell, point) = self.sampler.draw(rng);
                    clock += self.holding;
                    resurrections += 1;
                    steps += 1;
                    state = DarnedState::AtPoint {
                        component: self.config.shells()[shell].component,
                        position: point,
                    };
                    push(&state, steps, clock);
                }
                DarnedState::AtPoint {
                    component,
                    ref mut position,
                } => {
                    let dk = self.config.distance_to_k(component, position).0;
                    if dk <= eps {
                        // Exact side choice on the band between ∂K and
                        // S_r0: the path reaches S_r0 first with
                        // probability g/r0 and is radially projected there.
                        if self.contains_x0 {
                            if let Some((j, g)) = self.config.level_at(component, position) {
                                if rng.gen::<f64>() * self.options.r0 < g {
                                    let s = &self.config.shells()[j];
                                    let target = level_radius(s, self.options.r0)?;
                                    let rho = distance(position, &s.center);
                                    for (x, c) in position.iter_mut().zip(&s.center) {
                                        *x = c + (*x - c) * target / rho;
                                    }
                                    steps += 1;
                                    push(&state, steps, clock);
                                    continue;
                                }
                            }
                        }
                        state = DarnedState::AtDarned;
                        push(&state, steps, clock);
                        continue;
                    }
                    let du = self.signed_distance(component, position);
                    if du <= eps {
                        break;
                    }
                    if steps >= self.options.max_steps {
                        return Err(Error::NonConvergence { steps });
                    }
                    let mut radius = du.min(dk);
                    if let PathMode::TimeResolved { max_jump } = self.options.mode {
                        radius = radius.min(max_jump);
                    }
                    if !radius.is_finite() {
                        return Err(Error::Precondition(
                            "domain is unbounded in a component without K".into(),
                        ));
                    }
                    let dim = position.len();
                    let dir = &mut dir_buf[..dim];
                    sample_direction_into(rng, dir);
                    for (x, d) in position.iter_mut().zip(dir.iter()) {
                        *x += radius * d;
                    }
                    clock += radius * radius / dim as f64;
                    steps += 1;
                    push(&state, steps, clock);
                }
            }
        }
        Ok(ExitResult {
            exit: state,
            time: timed.then_some(clock),
            steps,
            resurrections,
        })
    }

    /// `n` independent paths from `start`, sample `i` on stream `i` of `key`.
    pub fn run_many(
        &self,
        start: &DarnedState,
        n: usize,
        key: StreamKey,
    ) -> Result<Vec<ExitResult>> {
        (0..n as u64)
            .into_par_iter()
            .map(|i| self.run(start, &mut key.stream(i)))
            .collect()
    }
}

/// Checks that the closure of `U_{r0}` lies inside a domain containing
/// `x0`, probing each shell along its coordinate axes at several levels up
/// to `r0`.
fn check_resurrection_room(config: &Configuration, region: &Region, r0: f64) -> Result<()> {
    for s in config.shells() {
        for frac in [0.01, 0.25, 0.5, 1.0] {
            let rho = level_radius(s, r0 * frac)?;
            for axis in 0..s.dim {
                for sign in [-1.0, 1.0] {
                    let mut x = s.center.clone();
                    x[axis] += sign * rho;
                    if region.signed_distance(s.component, &x) <= 0.0 {
                        return Err(Error::Precondition(format!(
                            "r0 = {r0} is too large: the closure of U_r0 is not inside the domain"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// One exit from `domain`, see [`Simulator`].
pub fn simulate_exit(
    config: &Configuration,
    sigma_r0: &SphereMeasure,
    start: &DarnedState,
    domain: &Domain,
    options: SimulationOptions,
    rng: &mut Stream,
) -> Result<ExitResult> {
    Simulator::new(config, sigma_r0, domain, options)?.run(start, rng)
}

/// Target sets on the boundary of a domain, for exit-kernel estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "snake_case")]
pub enum BoundarySet {
    /// Absorption into `x0`.
    Darned,
    /// `S_{j,t}`: the level sphere of one shell.
    LevelSphere { shell: usize, t: f64 },
    Sphere {
        component: i64,
        center: Vec<f64>,
        radius: f64,
    },
}

impl BoundarySet {
    pub fn label(&self) -> String {
        match self {
            BoundarySet::Darned => "x0".to_string(),
            BoundarySet::LevelSphere { shell, t } => format!("S[{shell}]@{t}"),
            BoundarySet::Sphere {
                component, radius, ..
            } => format!("sphere[c{component}]r{radius}"),
        }
    }

    /// Whether an exit state lies on this set, up to `tol` in radius.
    pub fn contains(&self, config: &Configuration, state: &DarnedState, tol: f64) -> bool {
        match (self, state) {
            (BoundarySet::Darned, DarnedState::AtDarned) => true,
            (
                BoundarySet::LevelSphere { shell, t },
                DarnedState::AtPoint {
                    component,
                    position,
                },
            ) => config.shells().get(*shell).is_some_and(|s| {
                s.component == *component
                    && level_radius(s, *t)
                        .is_ok_and(|st| (distance(position, &s.center) - st).abs() <= tol)
            }),
            (
                BoundarySet::Sphere {
                    component: c,
                    center,
                    radius,
                },
                DarnedState::AtPoint {
                    component,
                    position,
                },
            ) => c == component && (distance(position, center) - radius).abs() <= tol,
            _ => false,
        }
    }
}

/// Label of the mass that fell in no set of a partition.
pub const UNCLASSIFIED: &str = "unclassified";

/// Empirical `H_U(x, ·)` over a partition of `∂U`.
pub fn estimate_exit_kernel(
    sim: &Simulator<'_>,
    start: &DarnedState,
    partition: &[BoundarySet],
    n_samples: usize,
    key: StreamKey,
) -> Result<KernelEstimate> {
    if n_samples == 0 {
        return Err(Error::Precondition("n_samples must be positive".into()));
    }
    let exits = sim.run_many(start, n_samples, key)?;
    let tol = 2.0 * sim.options.epsilon;
    let mut counts = vec![0usize; partition.len()];
    let mut other = 0usize;
    for e in &exits {
        match partition
            .iter()
            .position(|b| b.contains(sim.config, &e.exit, tol))
        {
            Some(k) => counts[k] += 1,
            None => other += 1,
        }
    }
    let mut sets: Vec<String> = partition.iter().map(BoundarySet::label).collect();
    if other > 0 {
        sets.push(UNCLASSIFIED.to_string());
        counts.push(other);
    }
    let masses: Vec<f64> = counts
        .iter()
        .map(|c| *c as f64 / n_samples as f64)
        .collect();
    let std_errors = masses.iter().map(|p| binomial_se(*p, n_samples)).collect();
    Ok(KernelEstimate {
        sets,
        masses,
        std_errors,
        n_samples,
    })
}

/// Mean exit time from one start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeEstimate {
    pub start: DarnedState,
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeTable {
    pub rows: Vec<ExitTimeEstimate>,
    pub r0: f64,
    /// Time charged per resurrection; its total over a path is the bias
    /// budget of the time estimates.
    pub holding_constant: f64,
}

fn exit_times(
    sim: &Simulator<'_>,
    start: &DarnedState,
    n: usize,
    key: StreamKey,
) -> Result<Vec<f64>> {
    if !sim.options.accumulate_time {
        return Err(Error::Precondition("time accumulation is off".into()));
    }
    Ok(sim
        .run_many(start, n, key)?
        .into_iter()
        .map(|e| e.time.unwrap_or(0.0))
        .collect())
}

fn time_se(times: &[f64]) -> (f64, f64) {
    let (mean, se) = mean_se(times);
    (mean, if se.is_finite() { se } else { 0.0 })
}

/// `p_V(x) = E^x τ_V` for each start.
pub fn estimate_p_v(
    sim: &Simulator<'_>,
    starts: &[DarnedState],
    n_samples: usize,
    key: StreamKey,
) -> Result<ExitTimeTable> {
    let rows = starts
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let times = exit_times(sim, s, n_samples, key.derive_index(k as u64))?;
            let (mean, std_error) = time_se(&times);
            Ok(ExitTimeEstimate {
                start: s.clone(),
                mean,
                std_error,
                n_samples,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExitTimeTable {
        rows,
        r0: sim.options.r0,
        holding_constant: sim.holding,
    })
}

/// Estimates of both sides of `p_V - H_U p_V = p_U` at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telescoping {
    pub start: DarnedState,
    pub p_v: f64,
    pub p_v_se: f64,
    pub hu_p_v: f64,
    pub hu_p_v_se: f64,
    pub p_u: f64,
    pub p_u_se: f64,
    /// `(p_V - H_U p_V - p_U)` over the combined standard error.
    pub z: f64,
}

/// Checks `p_V - H_U p_V = p_U` for `U ⊂ V`. `H_U p_V` is estimated by
/// exiting `U` and then timing one exit from `V` from each exit point.
pub fn telescoping_check(
    sim_v: &Simulator<'_>,
    sim_u: &Simulator<'_>,
    start: &DarnedState,
    n_samples: usize,
    key: StreamKey,
) -> Result<Telescoping> {
    let (p_v, p_v_se) = time_se(&exit_times(sim_v, start, n_samples, key.derive("p_v"))?);
    let (p_u, p_u_se) = time_se(&exit_times(sim_u, start, n_samples, key.derive("p_u"))?);
    let first = key.derive("hu");
    let second = key.derive("hu-v");
    let chained: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let exit = sim_u.run(start, &mut first.stream(i))?;
            Ok(sim_v
                .run(&exit.exit, &mut second.stream(i))?
                .time
                .unwrap_or(0.0))
        })
        .collect::<Result<_>>()?;
    let (hu_p_v, hu_p_v_se) = time_se(&chained);
    let se = (p_v_se * p_v_se + hu_p_v_se * hu_p_v_se + p_u_se * p_u_se).sqrt();
    Ok(Telescoping {
        start: start.clone(),
        p_v,
        p_v_se,
        hu_p_v,
        hu_p_v_se,
        p_u,
        p_u_se,
        z: crate::stats::z_score(p_v - hu_p_v, p_u, se),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictionReport {
    pub energy: EnergyTest,
    pub n_samples: usize,
    pub report: TestReport,
}

#[derive(Serialize)]
struct RestrictionInputs<'a> {
    component: i64,
    center: &'a [f64],
    radius: f64,
    level: f64,
    n_samples: usize,
    seed: u64,
}

/// Compares exit laws from the center of a ball `B` under the darned
/// diffusion and under plain Brownian motion. `B` must keep a positive
/// distance from `K` and from the closure of `A_r`.
#[allow(clippy::too_many_arguments)]
pub fn restriction_equivalence_test(
    config: &Configuration,
    sigma_r0: &SphereMeasure,
    component: i64,
    center: &[f64],
    radius: f64,
    level: f64,
    n_samples: usize,
    key: StreamKey,
) -> Result<RestrictionReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level {level} outside (0, 1)")));
    }
    if config.distance_to_k(component, center).0 - radius <= 0.0 {
        return Err(Error::Precondition("test ball meets K".into()));
    }
    for s in config.shells().iter().filter(|s| s.component == component) {
        let st = level_radius(s, level)?;
        let (lo, hi) = (s.inner_radius.min(st), s.inner_radius.max(st));
        let d = distance(center, &s.center);
        let gap = if d < lo {
            lo - d
        } else if d > hi {
            d - hi
        } else {
            0.0
        };
        if gap - radius <= 0.0 {
            return Err(Error::Precondition(format!(
                "test ball meets the closure of A_{level}"
            )));
        }
    }
    let domain = Domain::Ball {
        component,
        center: center.to_vec(),
        radius,
    };
    let mut options = SimulationOptions::from_config(config);
    options.r0 = sigma_r0.level();
    options.accumulate_time = false;
    let sim = Simulator::new(config, sigma_r0, &domain, options)?;
    let start = DarnedState::point(component, center.to_vec());
    let darned: Vec<Vec<f64>> = sim
        .run_many(&start, n_samples, key.derive("darned"))?
        .into_iter()
        .map(|e| match e.exit {
            DarnedState::AtPoint { position, .. } => position,
            DarnedState::AtDarned => Vec::new(),
        })
        .collect();
    if darned.iter().any(Vec::is_empty) {
        return Err(Error::invariant(
            "restriction",
            "a path from the test ball reached x0",
        ));
    }
    let plain_key = key.derive("plain");
    let plain: Vec<Vec<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| sample_ball_exit(center, radius, &mut plain_key.stream(i)))
        .collect();
    let energy = energy_test(&darned, &plain, key.derive("perm"));
    let inputs = RestrictionInputs {
        component,
        center,
        radius,
        level,
        n_samples,
        seed: key.seed(),
    };
    Ok(RestrictionReport {
        energy,
        n_samples,
        report: TestReport::new(
            "restriction_equivalence",
            &inputs,
            energy.statistic,
            energy.p_value,
            energy.statistic,
        ),
    })
}

/// Euler–Maruyama estimate of the mean exit time of Brownian motion from a
/// ball, with a Brownian-bridge crossing test between steps.
pub fn euler_maruyama_exit_time(
    center: &[f64],
    radius: f64,
    start: &[f64],
    dt: f64,
    n_samples: usize,
    key: StreamKey,
) -> Result<ExitTimeEstimate> {
    if !(dt > 0.0 && radius > 0.0) || center.len() != start.len() {
        return Err(Error::Precondition("invalid Euler-Maruyama setup".into()));
    }
    let sd = dt.sqrt();
    let times: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.stream(i);
            let mut x = start.to_vec();
            let mut gap = radius - distance(&x, center);
            let mut t = 0.0;
            while gap > 0.0 {
                for xi in x.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *xi += sd * z;
                }
                t += dt;
                let next = radius - distance(&x, center);
                if next <= 0.0 {
                    break;
                }
                // crossing probability of the bridge against the tangent plane
                let p = (-2.0 * gap * next / dt).exp();
                if rng.gen::<f64>() < p {
                    break;
                }
                gap = next;
            }
            t
        })
        .collect();
    let (mean, std_error) = time_se(&times);
    Ok(ExitTimeEstimate {
        start: DarnedState::point(0, start.to_vec()),
        mean,
        std_error,
        n_samples,
    })
}

/// Writes a path as CSV: `step,clock,component_id,coord_0..`, with
/// component `-1` and empty coordinates at `x0`.
pub fn write_trajectory_csv<W: Write>(path: &DarnedPath, max_dim: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Precondition(format!("trajectory write failed: {e}"));
    let mut header = vec!["step".to_string(), "clock".into(), "component_id".into()];
    header.extend((0..max_dim).map(|k| format!("coord_{k}")));
    w.write_record(&header).map_err(io)?;
    for p in &path.points {
        let mut row = vec![
            p.step.to_string(),
            p.clock.map(|c| c.to_string()).unwrap_or_default(),
        ];
        match &p.state {
            DarnedState::AtDarned => {
                row.push("-1".into());
                row.extend(std::iter::repeat_n(String::new(), max_dim));
            }
            DarnedState::AtPoint {
                component,
                position,
            } => {
                row.push(component.to_string());
                row.extend(position.iter().map(|x| x.to_string()));
                row.extend(std::iter::repeat_n(
                    String::new(),
                    max_dim.saturating_sub(position.len()),
                ));
            }
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Precondition(format!("trajectory write failed: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Defaults, Orientation, Shell};
    use crate::measures::{make_parametric_family, LevelMeasures};

    fn reference() -> Configuration {
        let a = Shell::new(1, vec![0.0; 2], 1.0, 2.0, Orientation::Outward).unwrap();
        let b = Shell::new(2, vec![0.0; 3], 1.0, 2.0, Orientation::Outward).unwrap();
        Configuration::new(vec![a, b], vec![0.4, 0.6], Defaults::default()).unwrap()
    }

    fn sigma(cfg: &Configuration, r0: f64) -> SphereMeasure {
        make_parametric_family(cfg, cfg.weights())
            .unwrap()
            .measure_at(r0)
            .unwrap()
    }

    #[test]
    fn signed_distances() {
        let cfg = reference();
        let ut = Domain::Darned { t: 0.5 };
        let at = Domain::Level { t: 0.5 };
        let s = level_radius(&cfg.shells()[1], 0.5).unwrap();
        let x = [1.1, 0.0, 0.0];
        assert!((ut.signed_distance(&cfg, 2, &x).unwrap() - (s - 1.1)).abs() < 1e-12);
        assert!((at.signed_distance(&cfg, 2, &x).unwrap() - 0.1).abs() < 1e-12);
        assert!(ut.signed_distance(&cfg, 2, &[1.9, 0.0, 0.0]).unwrap() < 0.0);
        let ball = Domain::Ball {
            component: 2,
            center: vec![5.0, 0.0, 0.0],
            radius: 1.0,
        };
        let outside = Domain::Complement {
            part: Box::new(ball.clone()),
        };
        let x = [5.5, 0.0, 0.0];
        assert_eq!(ball.signed_distance(&cfg, 2, &x).unwrap(), 0.5);
        assert_eq!(outside.signed_distance(&cfg, 2, &x).unwrap(), -0.5);
        assert_eq!(
            ball.signed_distance(&cfg, 1, &[5.5, 0.0]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(Domain::Union {
            parts: vec![ball, ut]
        }
        .contains_x0());
        assert!(outside.contains_x0());
    }

    #[test]
    fn start_on_boundary_exits_immediately() {
        let cfg = reference();
        let s = sigma(&cfg, cfg.r0());
        let domain = Domain::Ball {
            component: 2,
            center: vec![5.0, 0.0, 0.0],
            radius: 1.0,
        };
        let sim = Simulator::new(&cfg, &s, &domain, SimulationOptions::from_config(&cfg)).unwrap();
        let start = DarnedState::point(2, vec![6.0, 0.0, 0.0]);
        let e = sim.run(&start, &mut StreamKey::new(1).stream(0)).unwrap();
        assert_eq!(e.exit, start);
        assert_eq!(e.time, Some(0.0));
        assert_eq!(e.steps, 0);
    }

    #[test]
    fn ball_center_time_is_exact() {
        let cfg = reference();
        let s = sigma(&cfg, cfg.r0());
        let domain = Domain::Ball {
            component: 2,
            center: vec![5.0, 0.0, 0.0],
            radius: 1.0,
        };
        let sim = Simulator::new(&cfg, &s, &domain, SimulationOptions::from_config(&cfg)).unwrap();
        let e = sim
            .run(
                &DarnedState::point(2, vec![5.0, 0.0, 0.0]),
                &mut StreamKey::new(1).stream(0),
            )
            .unwrap();
        assert!((e.time.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn oversized_r0_is_rejected() {
        let cfg = reference();
        let s = sigma(&cfg, 0.6);
        let mut opts = SimulationOptions::from_config(&cfg);
        opts.r0 = 0.6;
        let err = Simulator::new(&cfg, &s, &Domain::Darned { t: 0.5 }, opts).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn x0_outside_domain_is_an_exit() {
        let cfg = reference();
        let s = sigma(&cfg, cfg.r0());
        let sim = Simulator::new(
            &cfg,
            &s,
            &Domain::Level { t: 0.5 },
            SimulationOptions::from_config(&cfg),
        )
        .unwrap();
        let e = sim
            .run(&DarnedState::AtDarned, &mut StreamKey::new(1).stream(0))
            .unwrap();
        assert_eq!(e.exit, DarnedState::AtDarned);
    }

    #[test]
    fn step_cap_is_an_error() {
        let cfg = reference();
        let s = sigma(&cfg, cfg.r0());
        let mut opts = SimulationOptions::from_config(&cfg);
        opts.max_steps = 3;
        let sim = Simulator::new(&cfg, &s, &Domain::Darned { t: 0.9 }, opts).unwrap();
        let err = sim
            .run(&DarnedState::AtDarned, &mut StreamKey::new(1).stream(0))
            .unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn recorded_path_resurrects_on_s_r0() {
        let cfg = reference();
        let s = sigma(&cfg, cfg.r0());
        let sim = Simulator::new(
            &cfg,
            &s,
            &Domain::Darned { t: 0.3 },
            SimulationOptions::from_config(&cfg),
        )
        .unwrap();
        let (_, path) = sim
            .run_recorded(&DarnedState::AtDarned, &mut StreamKey::new(3).stream(0), 3)
            .unwrap();
        for w in path.points.windows(2) {
            if w[0].state == DarnedState::AtDarned {
                let DarnedState::AtPoint {
                    component,
                    position,
                } = &w[1].state
                else {
                    panic!("x0 followed by x0");
                };
                let shell = cfg
                    .shells()
                    .iter()
                    .find(|s| s.component == *component)
                    .unwrap();
                let want = level_radius(shell, cfg.r0()).unwrap();
                assert!((distance(position, &shell.center) - want).abs() < 1e-12);
            }
        }
        let mut buf = Vec::new();
        write_trajectory_csv(&path, 3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,clock,component_id,coord_0,coord_1,coord_2\n"));
        assert!(text.lines().skip(1).any(|l| l.contains(",-1,,,")));
    }

    #[test]
    fn time_resolved_jumps_are_bounded() {
        let cfg = reference();
        let s = sigma(&cfg, cfg.r0());
        let mut opts = SimulationOptions::from_config(&cfg);
        opts.mode = PathMode::TimeResolved { max_jump: 0.05 };
        let domain = Domain::Ball {
            component: 2,
            center: vec![5.0, 0.0, 0.0],
            radius: 1.0,
        };
        let sim = Simulator::new(&cfg, &s, &domain, opts).unwrap();
        let (_, path) = sim
            .run_recorded(
                &DarnedState::point(2, vec![5.0, 0.0, 0.0]),
                &mut StreamKey::new(4).stream(0),
                4,
            )
            .unwrap();
        for w in path.points.windows(2) {
            if let (
                DarnedState::AtPoint { position: a, .. },
                DarnedState::AtPoint { position: b, .. },
            ) = (&w[0].state, &w[1].state)
            {
                assert!(distance(a, b) <= 0.05 + 1e-12);
            }
            assert!(w[1].clock.unwrap() >= w[0].clock.unwrap());
        }
    }

    #[test]
    fn restriction_guard() {
        let cfg = reference();
        let s = sigma(&cfg, cfg.r0());
        let err = restriction_equivalence_test(
            &cfg,
            &s,
            2,
            &[1.5, 0.0, 0.0],
            0.2,
            0.5,
            10,
            StreamKey::new(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
