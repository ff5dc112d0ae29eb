//! Probability measures on the level sets `S_r` and compatible families of
//! them.
//!
//! A family `(σ_r)` is compatible when pushing `σ_r` through the annulus
//! kernel of `A_t` yields `(r/t) σ_t` on `S_t`. Mixtures of normalized surface
//! measures with fixed shell weights are compatible by symmetry; other
//! families can be built as weak limits of pushed-forward measures started
//! ever closer to `K`.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, level_radius, ComponentTree, Configuration};
use crate::kernels::{push_forward, sample_annulus_exit, sample_direction_into};
use crate::rng::{Stream, StreamKey};
use crate::stats::{
    binomial_se, energy_test, sliced_energy_distance, two_sided_p, z_score, EnergyTest, TestReport,
    ENERGY_TEST_CAP, SIGNIFICANCE,
};

/// Relative tolerance for an atom to count as lying on its level sphere.
pub const SUPPORT_TOLERANCE: f64 = 1e-9;

/// One weighted point of an empirical measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub shell: usize,
    pub point: Vec<f64>,
    pub weight: f64,
}

/// A finite measure on a level set `S_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SphereMeasure {
    /// `Σ_j w_j σ_{j,r}` with `σ_{j,r}` the normalized surface measure of the
    /// sphere of shell `j`.
    Parametric {
        level: f64,
        weights: Vec<f64>,
    },
    Empirical {
        level: f64,
        atoms: Vec<Atom>,
    },
}

/// Subsets of a level set used as kernel targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "lowercase")]
pub enum SphereSet {
    /// The whole level set.
    All,
    Shell {
        shell: usize,
    },
    /// The half of a shell's sphere where coordinate `axis` (relative to the
    /// center) is positive, or negative.
    Half {
        shell: usize,
        axis: usize,
        positive: bool,
    },
}

impl SphereSet {
    pub fn label(&self) -> String {
        match self {
            SphereSet::All => "all".to_string(),
            SphereSet::Shell { shell } => format!("shell{shell}"),
            SphereSet::Half {
                shell,
                axis,
                positive,
            } => format!("shell{shell}:x{axis}{}", if *positive { '+' } else { '-' }),
        }
    }

    pub fn contains(&self, shell: usize, point: &[f64], config: &Configuration) -> bool {
        match *self {
            SphereSet::All => true,
            SphereSet::Shell { shell: s } => s == shell,
            SphereSet::Half {
                shell: s,
                axis,
                positive,
            } => {
                s == shell
                    && axis < point.len()
                    && config.shells().get(shell).is_some_and(|sh| {
                        let rel = point[axis] - sh.center[axis];
                        if positive {
                            rel > 0.0
                        } else {
                            rel < 0.0
                        }
                    })
            }
        }
    }
}

impl SphereMeasure {
    pub fn level(&self) -> f64 {
        match self {
            SphereMeasure::Parametric { level, .. } | SphereMeasure::Empirical { level, .. } => {
                *level
            }
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            SphereMeasure::Parametric { weights, .. } => weights.iter().sum(),
            SphereMeasure::Empirical { atoms, .. } => atoms.iter().map(|a| a.weight).sum(),
        }
    }

    /// Mass carried by each shell's sphere.
    pub fn shell_masses(&self, n_shells: usize) -> Vec<f64> {
        match self {
            SphereMeasure::Parametric { weights, .. } => {
                let mut m = weights.clone();
                m.resize(n_shells, 0.0);
                m
            }
            SphereMeasure::Empirical { atoms, .. } => {
                let mut m = vec![0.0; n_shells];
                for a in atoms {
                    if a.shell < n_shells {
                        m[a.shell] += a.weight;
                    }
                }
                m
            }
        }
    }

    pub fn mass_of(&self, config: &Configuration, set: &SphereSet) -> f64 {
        match self {
            SphereMeasure::Parametric { weights, .. } => match *set {
                SphereSet::All => weights.iter().sum(),
                SphereSet::Shell { shell } => weights.get(shell).copied().unwrap_or(0.0),
                SphereSet::Half { shell, axis, .. } => match config.shells().get(shell) {
                    Some(s) if axis < s.dim => weights.get(shell).copied().unwrap_or(0.0) / 2.0,
                    _ => 0.0,
                },
            },
            SphereMeasure::Empirical { atoms, .. } => atoms
                .iter()
                .filter(|a| set.contains(a.shell, &a.point, config))
                .map(|a| a.weight)
                .sum(),
        }
    }

    /// Rescales to total mass one.
    pub fn normalized(&self) -> Result<SphereMeasure> {
        let total = self.total_mass();
        if !(total > 0.0) {
            return Err(Error::Precondition(
                "cannot normalize a zero measure".into(),
            ));
        }
        Ok(match self {
            SphereMeasure::Parametric { level, weights } => SphereMeasure::Parametric {
                level: *level,
                weights: weights.iter().map(|w| w / total).collect(),
            },
            SphereMeasure::Empirical { level, atoms } => SphereMeasure::Empirical {
                level: *level,
                atoms: atoms
                    .iter()
                    .map(|a| Atom {
                        weight: a.weight / total,
                        ..a.clone()
                    })
                    .collect(),
            },
        })
    }

    /// Multiplies every weight by `factor`.
    pub fn scaled(&self, factor: f64) -> SphereMeasure {
        match self {
            SphereMeasure::Parametric { level, weights } => SphereMeasure::Parametric {
                level: *level,
                weights: weights.iter().map(|w| w * factor).collect(),
            },
            SphereMeasure::Empirical { level, atoms } => SphereMeasure::Empirical {
                level: *level,
                atoms: atoms
                    .iter()
                    .map(|a| Atom {
                        weight: a.weight * factor,
                        ..a.clone()
                    })
                    .collect(),
            },
        }
    }

    /// Checks the level, the weights and that every atom lies on `S_r`.
    pub fn validate(&self, config: &Configuration) -> Result<()> {
        let level = self.level();
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Precondition(format!(
                "measure level {level} outside (0, 1)"
            )));
        }
        match self {
            SphereMeasure::Parametric { weights, .. } => {
                if weights.len() != config.shells().len() {
                    return Err(Error::Precondition(format!(
                        "{} weights for {} shells",
                        weights.len(),
                        config.shells().len()
                    )));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::Precondition(
                        "weights must be finite and >= 0".into(),
                    ));
                }
            }
            SphereMeasure::Empirical { atoms, .. } => {
                for (i, a) in atoms.iter().enumerate() {
                    let shell = config.shells().get(a.shell).ok_or_else(|| {
                        Error::Precondition(format!("atom {i} refers to unknown shell {}", a.shell))
                    })?;
                    if a.point.len() != shell.dim || !(a.weight.is_finite() && a.weight >= 0.0) {
                        return Err(Error::Precondition(format!("atom {i} is malformed")));
                    }
                    let want = level_radius(shell, level)?;
                    let rho = distance(&a.point, &shell.center);
                    if (rho - want).abs() > SUPPORT_TOLERANCE * (1.0 + want) {
                        return Err(Error::Precondition(format!(
                            "atom {i} at radius {rho} is not on S_r (radius {want})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sampler(&self, config: &Configuration) -> Result<MeasureSampler<'_>> {
        self.validate(config)?;
        let level = self.level();
        let total = self.total_mass();
        if !(total > 0.0) {
            return Err(Error::Precondition(
                "cannot sample from a zero measure".into(),
            ));
        }
        match self {
            SphereMeasure::Parametric { weights, .. } => {
                let cumulative = cumulative(weights.iter().copied());
                let spheres = config
                    .shells()
                    .iter()
                    .map(|s| Ok((s.center.clone(), level_radius(s, level)?)))
                    .collect::<Result<_>>()?;
                Ok(MeasureSampler::Parametric {
                    cumulative,
                    spheres,
                })
            }
            SphereMeasure::Empirical { atoms, .. } => Ok(MeasureSampler::Empirical {
                cumulative: cumulative(atoms.iter().map(|a| a.weight)),
                atoms,
            }),
        }
    }
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn pick(cumulative: &[f64], rng: &mut Stream) -> usize {
    let total = *cumulative.last().expect("nonempty");
    let u = rng.gen::<f64>() * total;
    let i = cumulative.partition_point(|&c| c <= u);
    // skip trailing zero-weight entries
    i.min(cumulative.len() - 1)
}

/// Draws `(shell, point)` pairs from a normalized [`SphereMeasure`].
#[derive(Debug)]
pub enum MeasureSampler<'a> {
    Parametric {
        cumulative: Vec<f64>,
        spheres: Vec<(Vec<f64>, f64)>,
    },
    Empirical {
        cumulative: Vec<f64>,
        atoms: &'a [Atom],
    },
}

impl MeasureSampler<'_> {
    pub fn draw(&self, rng: &mut Stream) -> (usize, Vec<f64>) {
        match self {
            MeasureSampler::Parametric {
                cumulative,
                spheres,
            } => {
                let j = pick(cumulative, rng);
                let (center, radius) = &spheres[j];
                let mut p = vec![0.0; center.len()];
                sample_direction_into(rng, &mut p);
                for (x, c) in p.iter_mut().zip(center) {
                    *x = c + radius * *x;
                }
                (j, p)
            }
            MeasureSampler::Empirical { cumulative, atoms } => {
                let a = &atoms[pick(cumulative, rng)];
                (a.shell, a.point.clone())
            }
        }
    }
}

/// Anything that supplies `σ_r` for a given level.
pub trait LevelMeasures: Sync {
    fn measure_at(&self, level: f64) -> Result<SphereMeasure>;
}

/// The mixture family `σ_r = Σ_j α_j σ_{j,r}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricFamily {
    pub weights: Vec<f64>,
}

impl LevelMeasures for ParametricFamily {
    fn measure_at(&self, level: f64) -> Result<SphereMeasure> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Domain(format!("level {level} outside (0, 1)")));
        }
        Ok(SphereMeasure::Parametric {
            level,
            weights: self.weights.clone(),
        })
    }
}

/// A finite family of measures indexed by their levels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasureFamily {
    pub members: Vec<SphereMeasure>,
}

impl MeasureFamily {
    pub fn levels(&self) -> Vec<f64> {
        self.members.iter().map(SphereMeasure::level).collect()
    }
}

impl LevelMeasures for MeasureFamily {
    fn measure_at(&self, level: f64) -> Result<SphereMeasure> {
        self.members
            .iter()
            .find(|m| (m.level() - level).abs() <= 1e-12)
            .cloned()
            .ok_or_else(|| Error::Precondition(format!("family has no member at level {level}")))
    }
}

/// The mixture family with shell weights `alpha`.
pub fn make_parametric_family(config: &Configuration, alpha: &[f64]) -> Result<ParametricFamily> {
    if alpha.len() != config.shells().len() {
        return Err(Error::Precondition(format!(
            "{} weights for {} shells",
            alpha.len(),
            config.shells().len()
        )));
    }
    if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::Precondition("weights must lie in [0, 1]".into()));
    }
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!(
            "weights sum to {total}, not 1"
        )));
    }
    Ok(ParametricFamily {
        weights: alpha.to_vec(),
    })
}

/// How to distribute weight over a component tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AllocationSpec {
    /// Equal split at every node.
    Uniform,
    /// Targets for some nodes, keyed by `(level, node)`; the others split
    /// what their parent has left equally.
    Targets(BTreeMap<(usize, usize), f64>),
}

/// Weights on the nodes of a component tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightAllocation {
    pub weights: Vec<Vec<f64>>,
    /// All weights strictly positive (needed for ellipticity).
    pub strictly_positive: bool,
}

impl WeightAllocation {
    pub fn level_sum(&self, n: usize) -> f64 {
        self.weights[n].iter().sum()
    }
}

const ALLOCATION_TOLERANCE: f64 = 1e-12;

/// Splits `parent` among `children` honoring targets.
fn split(
    parent_label: &str,
    parent: f64,
    children: &[usize],
    target: impl Fn(usize) -> Option<f64>,
    labels: impl Fn(usize) -> String,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; children.len()];
    let mut fixed = 0.0;
    let mut free = Vec::new();
    for (k, &c) in children.iter().enumerate() {
        match target(c) {
            Some(w) if !(0.0..=1.0).contains(&w) => {
                return Err(Error::ConstraintViolation {
                    node: labels(c),
                    message: format!("target {w} outside [0, 1]"),
                })
            }
            Some(w) => {
                out[k] = w;
                fixed += w;
            }
            None => free.push(k),
        }
    }
    if fixed > parent + ALLOCATION_TOLERANCE {
        return Err(Error::ConstraintViolation {
            node: parent_label.to_string(),
            message: format!("children targets sum to {fixed}, exceeding {parent}"),
        });
    }
    if free.is_empty() {
        if (fixed - parent).abs() > ALLOCATION_TOLERANCE {
            return Err(Error::ConstraintViolation {
                node: parent_label.to_string(),
                message: format!("children targets sum to {fixed}, expected {parent}"),
            });
        }
        return Ok(out);
    }
    let rest = (parent - fixed).max(0.0);
    let share = rest / free.len() as f64;
    let (last, init) = free.split_last().expect("nonempty");
    for &k in init {
        out[k] = share;
    }
    out[*last] = (rest - share * init.len() as f64).max(0.0);
    Ok(out)
}

/// Assigns weights level by level so that each node's children sum to the
/// node's weight and the root level sums to one.
pub fn allocate_weights(tree: &ComponentTree, spec: &AllocationSpec) -> Result<WeightAllocation> {
    let target = |n: usize, i: usize| match spec {
        AllocationSpec::Uniform => None,
        AllocationSpec::Targets(t) => t.get(&(n, i)).copied(),
    };
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(tree.depth());
    let roots: Vec<usize> = (0..tree.level_nodes(0).len()).collect();
    if roots.is_empty() {
        return Err(Error::Precondition("tree has no root nodes".into()));
    }
    weights.push(split(
        "root",
        1.0,
        &roots,
        |i| target(0, i),
        |i| tree.level_nodes(0)[i].label.clone(),
    )?);
    for n in 1..tree.depth() {
        let mut row = vec![0.0; tree.level_nodes(n).len()];
        for (p, node) in tree.level_nodes(n - 1).iter().enumerate() {
            let children = tree.children(n - 1, p);
            if children.is_empty() {
                return Err(Error::ConstraintViolation {
                    node: node.label.clone(),
                    message: "node has no children at the next level".into(),
                });
            }
            let split_weights = split(
                &node.label,
                weights[n - 1][p],
                &children,
                |c| target(n, c),
                |c| tree.level_nodes(n)[c].label.clone(),
            )?;
            for (c, w) in children.iter().zip(split_weights) {
                row[*c] = w;
            }
        }
        weights.push(row);
    }
    let strictly_positive = weights.iter().flatten().all(|w| *w > 0.0);
    Ok(WeightAllocation {
        weights,
        strictly_positive,
    })
}

/// Per-shell mass comparison after normalizing a push-forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellMassCheck {
    pub shell: usize,
    pub pushed: f64,
    pub expected: f64,
    pub std_error: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularCheck {
    pub shell: usize,
    pub energy: EnergyTest,
}

/// Compatibility verdict for one pair of levels `r <= t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCompatibility {
    pub r: f64,
    pub t: f64,
    pub outer_mass: f64,
    pub expected_outer_mass: f64,
    pub outer_std_error: f64,
    pub shells: Vec<ShellMassCheck>,
    pub angular: Vec<AngularCheck>,
    pub mass_pass: bool,
    pub angular_pass: bool,
    pub report: TestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub pairs: Vec<PairCompatibility>,
    pub pass: bool,
}

/// Unit vectors `(p - c)/|p - c|` of the atoms of `shell`.
fn directions(config: &Configuration, atoms: &[Atom], shell: usize) -> Vec<Vec<f64>> {
    let c = &config.shells()[shell].center;
    atoms
        .iter()
        .filter(|a| a.shell == shell)
        .map(|a| {
            let rho = distance(&a.point, c);
            a.point
                .iter()
                .zip(c)
                .map(|(x, ci)| (x - ci) / rho)
                .collect()
        })
        .collect()
}

/// Reference directions drawn from `sigma` conditioned on `shell`.
fn reference_directions(
    config: &Configuration,
    sigma: &SphereMeasure,
    shell: usize,
    count: usize,
    key: StreamKey,
) -> Result<Vec<Vec<f64>>> {
    let dim = config.shells()[shell].dim;
    match sigma {
        SphereMeasure::Parametric { .. } => Ok((0..count as u64)
            .map(|i| {
                let mut d = vec![0.0; dim];
                sample_direction_into(&mut key.stream(i), &mut d);
                d
            })
            .collect()),
        SphereMeasure::Empirical { level, atoms } => {
            let own: Vec<Atom> = atoms.iter().filter(|a| a.shell == shell).cloned().collect();
            let restricted = SphereMeasure::Empirical {
                level: *level,
                atoms: own,
            };
            let sampler = restricted.sampler(config)?;
            let drawn: Vec<Atom> = (0..count as u64)
                .map(|i| {
                    let (s, point) = sampler.draw(&mut key.stream(i));
                    Atom {
                        shell: s,
                        point,
                        weight: 1.0,
                    }
                })
                .collect();
            Ok(directions(config, &drawn, shell))
        }
    }
}

#[derive(Serialize)]
struct CompatInputs<'a> {
    r: f64,
    t: f64,
    n_samples: usize,
    z_tolerance: f64,
    seed: u64,
    sigma_r_digest: &'a str,
    sigma_t_digest: &'a str,
}

/// Statistical check of `σ_r H_{A_t} = (r/t) σ_t` for each pair.
///
/// Per-shell masses of the normalized push-forward must match `σ_t` within
/// `z_tolerance` standard errors, and the angular law on each shell must pass
/// an energy-distance two-sample test at the shared significance level.
pub fn check_compatibility(
    config: &Configuration,
    family: &dyn LevelMeasures,
    pairs: &[(f64, f64)],
    n_samples: usize,
    z_tolerance: f64,
    key: StreamKey,
) -> Result<CompatibilityReport> {
    let m = config.shells().len();
    let mut out = Vec::with_capacity(pairs.len());
    for (idx, &(r, t)) in pairs.iter().enumerate() {
        if !(r > 0.0 && r <= t && t < 1.0) {
            return Err(Error::Precondition(format!(
                "pair ({r}, {t}) needs 0 < r <= t < 1"
            )));
        }
        let sigma_r = family.measure_at(r)?;
        let sigma_t = family.measure_at(t)?;
        let inputs = CompatInputs {
            r,
            t,
            n_samples,
            z_tolerance,
            seed: key.seed(),
            sigma_r_digest: &crate::stats::digest_json(&sigma_r),
            sigma_t_digest: &crate::stats::digest_json(&sigma_t),
        };
        if r == t {
            out.push(PairCompatibility {
                r,
                t,
                outer_mass: 1.0,
                expected_outer_mass: 1.0,
                outer_std_error: 0.0,
                shells: Vec::new(),
                angular: Vec::new(),
                mass_pass: true,
                angular_pass: true,
                report: TestReport::new("compatibility", &inputs, 0.0, 1.0, 0.0),
            });
            continue;
        }
        let pair_key = key.derive("compat").derive_index(idx as u64);
        let pf = push_forward(config, &sigma_r, t, n_samples, pair_key.derive("push"))?;
        let ratio = t / r;
        let pushed = pf.outer.shell_masses(m);
        let expected = sigma_t.normalized()?.shell_masses(m);
        let mut shells = Vec::with_capacity(m);
        for j in 0..m {
            let got = ratio * pushed[j];
            let q_null = expected[j] / ratio;
            let mut se = ratio * binomial_se(q_null, n_samples);
            if se == 0.0 {
                se = ratio * binomial_se(pushed[j], n_samples);
            }
            shells.push(ShellMassCheck {
                shell: j,
                pushed: got,
                expected: expected[j],
                std_error: se,
                z: z_score(got, expected[j], se),
            });
        }
        let expected_outer = r / t;
        let outer_se = binomial_se(expected_outer, n_samples);
        let outer_z = z_score(pf.outer_mass, expected_outer, outer_se);
        let max_z = shells
            .iter()
            .map(|s| s.z.abs())
            .fold(outer_z.abs(), f64::max);
        let mass_pass = max_z <= z_tolerance;

        let atoms = match &pf.outer {
            SphereMeasure::Empirical { atoms, .. } => atoms.as_slice(),
            SphereMeasure::Parametric { .. } => &[],
        };
        let mut angular = Vec::new();
        for j in 0..m {
            if expected[j] <= 0.0 {
                continue;
            }
            let x = directions(config, atoms, j);
            if x.len() < 2 {
                continue;
            }
            let count = x.len().min(ENERGY_TEST_CAP);
            let y = reference_directions(
                config,
                &sigma_t,
                j,
                count,
                pair_key.derive("reference").derive_index(j as u64),
            )?;
            let energy = energy_test(&x, &y, pair_key.derive("perm").derive_index(j as u64));
            angular.push(AngularCheck { shell: j, energy });
        }
        let min_angular_p = angular.iter().map(|a| a.energy.p_value).fold(1.0, f64::min);
        let angular_pass = min_angular_p > SIGNIFICANCE;
        let p_value = two_sided_p(max_z).min(min_angular_p);
        out.push(PairCompatibility {
            r,
            t,
            outer_mass: pf.outer_mass,
            expected_outer_mass: expected_outer,
            outer_std_error: outer_se,
            shells,
            angular,
            mass_pass,
            angular_pass,
            report: TestReport::new("compatibility", &inputs, max_z, p_value, max_z)
                .with_pass(mass_pass && angular_pass),
        });
    }
    let pass = out.iter().all(|p| p.mass_pass && p.angular_pass);
    Ok(CompatibilityReport { pairs: out, pass })
}

/// One iterate `σ_{r,k}` of the weak-limit construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateSummary {
    pub eta: f64,
    /// Total mass after the `r/η` normalization (1 up to sampling error).
    pub mass: f64,
    pub mass_std_error: f64,
    pub shell_masses: Vec<f64>,
    pub atoms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: f64,
    pub iterates: Vec<IterateSummary>,
    /// Energy distance between iterates `k` and `k + 1`.
    pub successive_distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLimit {
    pub family: MeasureFamily,
    pub diagnostics: Vec<LevelDiagnostics>,
}

/// Number of projection directions for the sliced energy distance.
pub const SLICE_DIRECTIONS: usize = 32;

/// Embeds a point of shell `shell` into one Euclidean space shared by all
/// shells: a coordinate block per shell plus a far-apart indicator axis.
pub fn embed(config: &Configuration, shell: usize, point: &[f64]) -> Vec<f64> {
    let shells = config.shells();
    let total: usize = shells.iter().map(|s| s.dim).sum::<usize>() + shells.len();
    let separation = 4.0
        * shells
            .iter()
            .map(|s| s.inner_radius.max(s.outer_radius))
            .fold(0.0, f64::max);
    let mut v = vec![0.0; total];
    let offset: usize = shells[..shell].iter().map(|s| s.dim).sum();
    for (k, (x, c)) in point.iter().zip(&shells[shell].center).enumerate() {
        v[offset + k] = x - c;
    }
    let block_end: usize = shells.iter().map(|s| s.dim).sum();
    v[block_end + shell] = separation;
    v
}

fn embedded_cloud(config: &Configuration, m: &SphereMeasure) -> Vec<(Vec<f64>, f64)> {
    match m {
        SphereMeasure::Empirical { atoms, .. } => atoms
            .iter()
            .map(|a| (embed(config, a.shell, &a.point), a.weight))
            .collect(),
        SphereMeasure::Parametric { .. } => Vec::new(),
    }
}

/// Minimal rotation taking the unit vector `u` to the unit vector `v`,
/// applied to `w`.
fn rotate(u: &[f64], v: &[f64], w: &[f64]) -> Vec<f64> {
    let c: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let uw: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
    if c > -1.0 + 1e-12 {
        let sw: f64 = u.iter().zip(v).zip(w).map(|((a, b), x)| (a + b) * x).sum();
        let k = sw / (1.0 + c);
        return w
            .iter()
            .zip(u.iter().zip(v))
            .map(|(x, (a, b))| x - k * (a + b) + 2.0 * uw * b)
            .collect();
    }
    if u.len() == 1 {
        return vec![-w[0]];
    }
    // Antipodal: a half turn in the plane of u and a vector orthogonal to it.
    let axis = (0..u.len())
        .min_by(|&i, &j| u[i].abs().total_cmp(&u[j].abs()))
        .expect("nonempty");
    let mut e: Vec<f64> = u.iter().map(|a| -a * u[axis]).collect();
    e[axis] += 1.0;
    let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    e.iter_mut().for_each(|x| *x /= norm);
    let ew: f64 = e.iter().zip(w).map(|(a, b)| a * b).sum();
    w.iter()
        .zip(u.iter().zip(&e))
        .map(|(x, (a, b))| x - 2.0 * uw * a - 2.0 * ew * b)
        .collect()
}

fn unit(x: &[f64], center: &[f64]) -> Vec<f64> {
    let rho = distance(x, center);
    x.iter().zip(center).map(|(a, c)| (a - c) / rho).collect()
}

/// One rung of the ladder on one shell: exit directions on `S_to` from the
/// point `center + s(from) e_0`, each conditioned on reaching `S_to` before
/// `∂K`, and the total number of attempts.
struct Rung {
    directions: Vec<Vec<f64>>,
    attempts: u64,
}

fn climb(
    config: &Configuration,
    shell: usize,
    from: f64,
    to: f64,
    n: usize,
    key: StreamKey,
) -> Result<Rung> {
    let s = config.shell(shell)?;
    let mut start = s.center.clone();
    start[0] += level_radius(s, from)?;
    let eps = config.epsilon();
    let max_steps = config.max_steps();
    let draws: Vec<(Vec<f64>, u64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.stream(i);
            for attempt in 1..=max_steps {
                let e = sample_annulus_exit(config, shell, &start, to, eps, max_steps, &mut rng)?;
                if let Some(p) = e.point {
                    return Ok((unit(&p, &s.center), attempt));
                }
            }
            Err(Error::NonConvergence { steps: max_steps })
        })
        .collect::<Result<_>>()?;
    Ok(Rung {
        attempts: draws.iter().map(|d| d.1).sum(),
        directions: draws.into_iter().map(|d| d.0).collect(),
    })
}

/// Builds `σ_r` for each target level as the last of the iterates
/// `σ_{r,k} = (r/η_k) (ν_k H_{A_r})|_{S_r}` and reports how successive
/// iterates approach each other.
///
/// Iterate `k` climbs the ladder `η_k, η_{k-1}, .., η_0, r` one annulus at
/// a time, which gives the same law as a direct push by the strong Markov
/// property. From any point of `S_{η_j}` the next rung is reached with the
/// same probability, so each rung is sampled once per shell, conditioned on
/// success, from a fixed point and carried to every particle by a rotation
/// about the shell center. All iterates therefore share their paths, and
/// successive distances measure the change of starting measure rather than
/// sampling noise. Masses come from the rejection counts.
pub fn weak_limit_family(
    config: &Configuration,
    etas: &[f64],
    nus: &[SphereMeasure],
    targets: &[f64],
    n_samples: usize,
    key: StreamKey,
) -> Result<WeakLimit> {
    if etas.is_empty() || etas.len() != nus.len() {
        return Err(Error::Precondition(format!(
            "{} levels but {} starting measures",
            etas.len(),
            nus.len()
        )));
    }
    for w in etas.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::Precondition(
                "levels eta must decrease strictly".into(),
            ));
        }
    }
    if !(etas[0] < 1.0 && *etas.last().expect("nonempty") > 0.0) {
        return Err(Error::Precondition("levels eta must lie in (0, 1)".into()));
    }
    for (eta, nu) in etas.iter().zip(nus) {
        nu.validate(config)?;
        if (nu.level() - eta).abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "starting measure at level {} does not match eta = {eta}",
                nu.level()
            )));
        }
        if (nu.total_mass() - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "starting measure at level {eta} has mass {}",
                nu.total_mass()
            )));
        }
    }
    for &r in targets {
        if !(r > etas[0] && r < 1.0) {
            return Err(Error::Precondition(format!(
                "target level {r} must lie in ({}, 1)",
                etas[0]
            )));
        }
    }
    if n_samples == 0 {
        return Err(Error::Precondition("n_samples must be positive".into()));
    }
    let dim = embed(config, 0, &config.shells()[0].center).len();
    let m = config.shells().len();
    let mut family = MeasureFamily::default();
    let mut diagnostics = Vec::with_capacity(targets.len());
    for (ri, &r) in targets.iter().enumerate() {
        let level_key = key.derive("weak-limit").derive_index(ri as u64);
        let start_key = level_key.derive("start");
        // Rung j leaves S_{η_j} for S_{η_{j-1}} (for S_r when j = 0).
        let mut rungs: BTreeMap<(usize, usize), Rung> = BTreeMap::new();
        let mut iterates = Vec::with_capacity(etas.len());
        let mut summaries = Vec::with_capacity(etas.len());
        for (k, (eta, nu)) in etas.iter().zip(nus).enumerate() {
            let sampler = nu.sampler(config)?;
            let starts: Vec<(usize, Vec<f64>)> = (0..n_samples as u64)
                .map(|i| sampler.draw(&mut start_key.stream(i)))
                .collect();
            for shell in 0..m {
                if !starts.iter().any(|p| p.0 == shell) {
                    continue;
                }
                for j in 0..=k {
                    if rungs.contains_key(&(j, shell)) {
                        continue;
                    }
                    let to = if j == 0 { r } else { etas[j - 1] };
                    let rung_key = level_key.derive_index(j as u64).derive_index(shell as u64);
                    rungs.insert(
                        (j, shell),
                        climb(config, shell, etas[j], to, n_samples, rung_key)?,
                    );
                }
            }
            // Per-shell probability of climbing from S_{η_k} to S_r.
            let mut reach = vec![0.0; m];
            let mut rel_var = vec![0.0; m];
            for (shell, (p, v)) in reach.iter_mut().zip(rel_var.iter_mut()).enumerate() {
                if !rungs.contains_key(&(0, shell)) {
                    continue;
                }
                *p = 1.0;
                for j in 0..=k {
                    let q = n_samples as f64 / rungs[&(j, shell)].attempts as f64;
                    *p *= q;
                    *v += (1.0 - q) / (q * n_samples as f64);
                }
            }
            let scale = r / eta;
            let w = scale / n_samples as f64;
            let atoms: Vec<Atom> = starts
                .iter()
                .enumerate()
                .map(|(i, (shell, x))| {
                    let s = &config.shells()[*shell];
                    let mut e0 = vec![0.0; s.dim];
                    e0[0] = 1.0;
                    let mut dir = unit(x, &s.center);
                    for j in (0..=k).rev() {
                        dir = rotate(&e0, &dir, &rungs[&(j, *shell)].directions[i]);
                    }
                    let rho = level_radius(s, r)?;
                    Ok(Atom {
                        shell: *shell,
                        point: s
                            .center
                            .iter()
                            .zip(&dir)
                            .map(|(c, d)| c + rho * d)
                            .collect(),
                        weight: w * reach[*shell],
                    })
                })
                .collect::<Result<_>>()?;
            let sigma = SphereMeasure::Empirical { level: r, atoms };
            let shell_masses = sigma.shell_masses(m);
            summaries.push(IterateSummary {
                eta: *eta,
                mass: sigma.total_mass(),
                mass_std_error: shell_masses
                    .iter()
                    .zip(&rel_var)
                    .map(|(mass, v)| mass * v.sqrt())
                    .sum(),
                shell_masses,
                atoms: n_samples,
            });
            iterates.push(sigma);
        }
        let clouds: Vec<_> = iterates.iter().map(|s| embedded_cloud(config, s)).collect();
        let successive_distances = clouds
            .windows(2)
            .map(|w| sliced_energy_distance(&w[0], &w[1], dim, SLICE_DIRECTIONS))
            .collect();
        let last = iterates.pop().expect("at least one iterate");
        family.members.push(last.normalized()?);
        diagnostics.push(LevelDiagnostics {
            level: r,
            iterates: summaries,
            successive_distances,
        });
    }
    Ok(WeakLimit {
        family,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{component_tree, Defaults, Orientation, Shell};

    fn two_shell() -> Configuration {
        let a = Shell::new(1, vec![0.0; 2], 1.0, 2.0, Orientation::Outward).unwrap();
        let b = Shell::new(2, vec![0.0; 3], 1.0, 2.0, Orientation::Outward).unwrap();
        Configuration::new(vec![a, b], vec![0.4, 0.6], Defaults::default()).unwrap()
    }

    #[test]
    fn parametric_family_masses() {
        let cfg = two_shell();
        let fam = make_parametric_family(&cfg, &[0.4, 0.6]).unwrap();
        for r in [0.1, 0.5, 0.9] {
            let s = fam.measure_at(r).unwrap();
            assert_eq!(s.mass_of(&cfg, &SphereSet::Shell { shell: 1 }), 0.6);
            assert!((s.total_mass() - 1.0).abs() < 1e-12);
        }
        let one = make_parametric_family(&cfg, &[1.0, 0.0]).unwrap();
        assert_eq!(one.measure_at(0.3).unwrap().shell_masses(2), vec![1.0, 0.0]);
        assert!(make_parametric_family(&cfg, &[1.0]).is_err());
        assert!(make_parametric_family(&cfg, &[0.5, 0.6]).is_err());
    }

    #[test]
    fn sampler_respects_support() {
        let cfg = two_shell();
        let s = SphereMeasure::Parametric {
            level: 0.5,
            weights: vec![0.4, 0.6],
        };
        let sampler = s.sampler(&cfg).unwrap();
        let key = StreamKey::new(5);
        let mut counts = [0usize; 2];
        for i in 0..10_000 {
            let (j, p) = sampler.draw(&mut key.stream(i));
            counts[j] += 1;
            let want = level_radius(&cfg.shells()[j], 0.5).unwrap();
            assert!((distance(&p, &cfg.shells()[j].center) - want).abs() < 1e-12);
        }
        let f = counts[1] as f64 / 10_000.0;
        assert!((f - 0.6).abs() < 3.0 * binomial_se(0.6, 10_000));
    }

    #[test]
    fn off_sphere_atoms_rejected() {
        let cfg = two_shell();
        let bad = SphereMeasure::Empirical {
            level: 0.5,
            atoms: vec![Atom {
                shell: 0,
                point: vec![1.0, 0.0],
                weight: 1.0,
            }],
        };
        assert!(bad.validate(&cfg).is_err());
    }

    #[test]
    fn measure_json_round_trip_is_bit_exact() {
        let cfg = two_shell();
        let r = level_radius(&cfg.shells()[1], 0.3).unwrap();
        let theta = 0.123_456_789_012_345_67_f64;
        let m = SphereMeasure::Empirical {
            level: 0.3,
            atoms: vec![Atom {
                shell: 1,
                point: vec![r * theta.cos(), r * theta.sin(), 0.0],
                weight: 1.0 / 3.0,
            }],
        };
        let text = serde_json::to_string(&m).unwrap();
        let back: SphereMeasure = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
        let fam = MeasureFamily {
            members: vec![
                m.clone(),
                SphereMeasure::Parametric {
                    level: 0.2,
                    weights: vec![0.4, 0.6],
                },
            ],
        };
        let text = serde_json::to_string(&fam).unwrap();
        assert!(text.starts_with('['));
        assert_eq!(serde_json::from_str::<MeasureFamily>(&text).unwrap(), fam);
    }

    #[test]
    fn uniform_allocation_on_flat_tree() {
        let shells: Vec<Shell> = (0..3)
            .map(|k| Shell::new(k, vec![0.0; 2], 1.0, 2.0, Orientation::Outward).unwrap())
            .collect();
        let cfg = Configuration::new(shells, vec![0.2, 0.3, 0.5], Defaults::default()).unwrap();
        let tree = component_tree(&cfg, &[1.0, 0.5]).unwrap();
        let alloc = allocate_weights(&tree, &AllocationSpec::Uniform).unwrap();
        for w in &alloc.weights[0] {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(alloc.strictly_positive);
        assert!((alloc.level_sum(1) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unconstrained_children_split_parent() {
        let tree = ComponentTree::from_parents(
            vec![1.0, 0.5],
            vec![vec![None, None], vec![Some(0), Some(0), Some(1)]],
        )
        .unwrap();
        let mut targets = BTreeMap::new();
        targets.insert((0, 0), 0.5);
        targets.insert((0, 1), 0.5);
        let alloc = allocate_weights(&tree, &AllocationSpec::Targets(targets)).unwrap();
        assert_eq!(alloc.weights[1], vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn inconsistent_targets_name_the_node() {
        let tree = ComponentTree::from_parents(
            vec![1.0, 0.5],
            vec![vec![None, None], vec![Some(0), Some(0), Some(1)]],
        )
        .unwrap();
        let mut targets = BTreeMap::new();
        targets.insert((0, 0), 0.5);
        targets.insert((1, 0), 0.4);
        targets.insert((1, 1), 0.3);
        let err = allocate_weights(&tree, &AllocationSpec::Targets(targets)).unwrap_err();
        assert!(matches!(err, Error::ConstraintViolation { ref node, .. } if node == "L0.0"));

        let mut root = BTreeMap::new();
        root.insert((0, 0), 0.7);
        root.insert((0, 1), 0.7);
        let err = allocate_weights(&tree, &AllocationSpec::Targets(root)).unwrap_err();
        assert!(matches!(err, Error::ConstraintViolation { ref node, .. } if node == "root"));
    }

    #[test]
    fn zero_weight_clears_positivity_flag() {
        let tree = ComponentTree::from_parents(vec![1.0], vec![vec![None, None]]).unwrap();
        let mut targets = BTreeMap::new();
        targets.insert((0, 0), 1.0);
        let alloc = allocate_weights(&tree, &AllocationSpec::Targets(targets)).unwrap();
        assert_eq!(alloc.weights[0], vec![1.0, 0.0]);
        assert!(!alloc.strictly_positive);
    }

    #[test]
    fn embedding_separates_shells() {
        let cfg = two_shell();
        let a = embed(&cfg, 0, &[1.5, 0.0]);
        let b = embed(&cfg, 1, &[1.5, 0.0, 0.0]);
        assert_eq!(a.len(), 2 + 3 + 2);
        assert!(distance(&a, &b) > 8.0);
    }
}
