//! Exit kernels of balls, of the annuli `A_t` and of the darned
//! neighborhoods `U_t = {x0} ∪ A_t`.
//!
//! Annulus exits are simulated with walk-on-spheres. When a walk comes within
//! `ε` of either boundary sphere the exit side is drawn from the exact
//! probability `g(x)/t` at the current radius, which removes the leading
//! `O(ε)` bias in side frequencies. Outer exits are then projected radially
//! onto `S_t`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::DarnedState;
use crate::error::{Error, Result};
use crate::geometry::{level_radius, Configuration, Shell};
use crate::measures::{Atom, SphereMeasure, SphereSet};
use crate::rng::{Stream, StreamKey};
use crate::stats::binomial_se;

/// Largest atom count of an empirical measure.
pub const MAX_ATOMS: usize = 1_000_000;

/// Overwrites `out` with a uniform unit vector.
pub fn sample_direction_into<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        let mut norm2 = 0.0;
        for c in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *c = z;
            norm2 += z * z;
        }
        if norm2 > 1e-300 {
            let inv = norm2.sqrt().recip();
            out.iter_mut().for_each(|c| *c *= inv);
            return;
        }
    }
}

/// Exit point of Brownian motion from a ball started at its center:
/// uniform on the sphere.
pub fn sample_ball_exit<R: Rng + ?Sized>(center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; center.len()];
    sample_direction_into(rng, &mut out);
    for (o, c) in out.iter_mut().zip(center) {
        *o = c + radius * *o;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitSide {
    /// On `S_t`.
    Outer,
    /// On `∂K`, i.e. absorbed into the darned point.
    Inner,
}

/// One draw from `H_{A_t}(y, ·)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitSample {
    pub side: ExitSide,
    pub point: Option<Vec<f64>>,
    pub steps: u64,
}

/// Empirical or analytic masses of an exit kernel on a list of target sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub sets: Vec<String>,
    pub masses: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub n_samples: usize,
}

impl KernelEstimate {
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn mass(&self, label: &str) -> Option<f64> {
        self.sets
            .iter()
            .position(|s| s == label)
            .map(|i| self.masses[i])
    }
}

fn check_level(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!("level {t} outside (0, 1)")));
    }
    Ok(())
}

/// `g(y)` for a point of `shell` that must lie in the closed band between
/// `∂K` and `S_t`.
fn level_in_annulus(shell: &Shell, y: &[f64], t: f64) -> Result<f64> {
    if y.len() != shell.dim {
        return Err(Error::Domain(format!(
            "point has {} coordinates, shell has dim {}",
            y.len(),
            shell.dim
        )));
    }
    let s_t = level_radius(shell, t)?;
    let rho = shell.radius_of(y);
    let (lo, hi) = (shell.inner_radius.min(s_t), shell.inner_radius.max(s_t));
    let slack = 1e-12 * hi;
    if rho < lo - slack || rho > hi + slack {
        return Err(Error::Domain(format!(
            "point at radius {rho} is outside A_t = [{lo}, {hi}] of this shell"
        )));
    }
    Ok(shell.profile().eval(rho).clamp(0.0, t))
}

/// Probability that Brownian motion from `y` leaves `A_t` through `S_t`:
/// exactly `g(y)/t`.
pub fn exit_outer_prob(config: &Configuration, shell: usize, y: &[f64], t: f64) -> Result<f64> {
    check_level(t)?;
    let s = config.shell(shell)?;
    Ok(level_in_annulus(s, y, t)? / t)
}

/// Walk-on-spheres inside the annulus of `shell` between `∂K` and `S_t`.
pub fn sample_annulus_exit(
    config: &Configuration,
    shell: usize,
    y: &[f64],
    t: f64,
    epsilon: f64,
    max_steps: u64,
    rng: &mut Stream,
) -> Result<ExitSample> {
    check_level(t)?;
    if !(epsilon > 0.0) {
        return Err(Error::Precondition(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let s = config.shell(shell)?;
    level_in_annulus(s, y, t)?;
    let s_t = level_radius(s, t)?;
    let (lo, hi) = (s.inner_radius.min(s_t), s.inner_radius.max(s_t));
    let profile = s.profile();
    let mut x = y.to_vec();
    let mut dir = vec![0.0; s.dim];
    let mut steps = 0u64;
    loop {
        let rho = s.radius_of(&x);
        let reach = (rho - lo).min(hi - rho);
        if reach < epsilon {
            let p_outer = (profile.eval(rho) / t).clamp(0.0, 1.0);
            if rng.gen::<f64>() < p_outer {
                project_to_radius(&mut x, &s.center, s_t);
                return Ok(ExitSample {
                    side: ExitSide::Outer,
                    point: Some(x),
                    steps,
                });
            }
            return Ok(ExitSample {
                side: ExitSide::Inner,
                point: None,
                steps,
            });
        }
        if steps >= max_steps {
            return Err(Error::NonConvergence { steps });
        }
        sample_direction_into(rng, &mut dir);
        for (xi, d) in x.iter_mut().zip(&dir) {
            *xi += reach * d;
        }
        steps += 1;
    }
}

/// Moves `x` along its ray from `center` onto the sphere of `radius`.
pub(crate) fn project_to_radius(x: &mut [f64], center: &[f64], radius: f64) {
    let rho = crate::geometry::distance(x, center);
    if rho == 0.0 {
        x[0] = center[0] + radius;
        return;
    }
    let scale = radius / rho;
    for (xi, c) in x.iter_mut().zip(center) {
        *xi = c + (*xi - c) * scale;
    }
}

/// `H_{U_t}(x, B)` for target sets `B ⊂ S_t`.
///
/// At the darned point the kernel is `σ_t` itself. At `y ∈ A_t` it is the
/// annulus exit law on `S_t` (sampled) plus `(1 - g(y)/t) σ_t`.
pub fn exit_kernel_ut(
    config: &Configuration,
    sigma_t: &SphereMeasure,
    x: &DarnedState,
    t: f64,
    sets: &[SphereSet],
    n_samples: usize,
    key: StreamKey,
) -> Result<KernelEstimate> {
    check_level(t)?;
    sigma_t.validate(config)?;
    if (sigma_t.total_mass() - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "sigma_t must be a probability measure (mass {})",
            sigma_t.total_mass()
        )));
    }
    if (sigma_t.level() - t).abs() > 1e-12 {
        return Err(Error::Precondition(format!(
            "sigma_t lives on level {} but t = {t}",
            sigma_t.level()
        )));
    }
    let labels: Vec<String> = sets.iter().map(SphereSet::label).collect();
    let sigma_masses: Vec<f64> = sets.iter().map(|b| sigma_t.mass_of(config, b)).collect();
    let (component, y) = match x {
        DarnedState::AtDarned => {
            return Ok(KernelEstimate {
                sets: labels,
                std_errors: vec![0.0; sets.len()],
                masses: sigma_masses,
                n_samples: 0,
            })
        }
        DarnedState::AtPoint {
            component,
            position,
        } => (*component, position),
    };
    let (shell, _) = config
        .locate_shell(component, y)
        .ok_or_else(|| Error::Domain("start point is not in A_t".into()))?;
    let outer_prob = exit_outer_prob(config, shell, y, t)?;
    let eps = config.epsilon();
    let max_steps = config.max_steps();
    let exits: Vec<ExitSample> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.stream(i);
            sample_annulus_exit(config, shell, y, t, eps, max_steps, &mut rng)
        })
        .collect::<Result<_>>()?;
    let n = n_samples.max(1);
    let mut masses = Vec::with_capacity(sets.len());
    let mut std_errors = Vec::with_capacity(sets.len());
    for (b, sigma_b) in sets.iter().zip(&sigma_masses) {
        let hits = exits
            .iter()
            .filter(|e| match &e.point {
                Some(p) => b.contains(shell, p, config),
                None => false,
            })
            .count();
        let p = hits as f64 / n as f64;
        masses.push(p + (1.0 - outer_prob) * sigma_b);
        std_errors.push(binomial_se(p, n));
    }
    Ok(KernelEstimate {
        sets: labels,
        masses,
        std_errors,
        n_samples,
    })
}

/// Result of pushing a measure on `S_r` through the annulus kernel `H_{A_t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushForward {
    /// Outer exits as an empirical sub-measure on `S_t` (each walk weighs
    /// `1/n`, so the total is the outer fraction).
    pub outer: SphereMeasure,
    pub outer_mass: f64,
    pub inner_mass: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub mean_steps: f64,
}

/// Pushes `sigma` (on `S_r`) forward to `S_t`, `r <= t`.
pub fn push_forward(
    config: &Configuration,
    sigma: &SphereMeasure,
    t: f64,
    n_samples: usize,
    key: StreamKey,
) -> Result<PushForward> {
    check_level(t)?;
    let r = sigma.level();
    if !(r > 0.0 && r <= t) {
        return Err(Error::Precondition(format!(
            "push-forward needs 0 < r <= t, got r = {r}, t = {t}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::Precondition("n_samples must be positive".into()));
    }
    let sampler = sigma.sampler(config)?;
    let eps = config.epsilon();
    let max_steps = config.max_steps();
    let exits: Vec<(usize, ExitSample)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.stream(i);
            let (shell, start) = sampler.draw(&mut rng);
            let exit = sample_annulus_exit(config, shell, &start, t, eps, max_steps, &mut rng)?;
            Ok((shell, exit))
        })
        .collect::<Result<_>>()?;
    let w = 1.0 / n_samples as f64;
    let mut total_steps = 0u64;
    let mut atoms = Vec::new();
    for (shell, e) in exits {
        total_steps += e.steps;
        if let Some(point) = e.point {
            atoms.push(Atom {
                shell,
                point,
                weight: w,
            });
        }
    }
    let outer_count = atoms.len();
    if atoms.len() > MAX_ATOMS {
        atoms = resample_systematic(&atoms, MAX_ATOMS, key.derive("resample").stream(0).gen());
    }
    let outer_mass = outer_count as f64 / n_samples as f64;
    Ok(PushForward {
        outer: SphereMeasure::Empirical { level: t, atoms },
        outer_mass,
        inner_mass: 1.0 - outer_mass,
        std_error: binomial_se(outer_mass, n_samples),
        n_samples,
        mean_steps: total_steps as f64 / n_samples as f64,
    })
}

/// Systematic resampling to `count` equally weighted atoms preserving the
/// total mass. `offset` in `[0, 1)` positions the comb.
pub fn resample_systematic(atoms: &[Atom], count: usize, offset: f64) -> Vec<Atom> {
    let total: f64 = atoms.iter().map(|a| a.weight).sum();
    if atoms.is_empty() || count == 0 || total <= 0.0 {
        return Vec::new();
    }
    let step = total / count as f64;
    let w = step;
    let mut out = Vec::with_capacity(count);
    let mut cum = 0.0;
    let mut i = 0;
    for k in 0..count {
        let u = (offset.clamp(0.0, 1.0 - f64::EPSILON) + k as f64) * step;
        while i + 1 < atoms.len() && cum + atoms[i].weight <= u {
            cum += atoms[i].weight;
            i += 1;
        }
        out.push(Atom {
            shell: atoms[i].shell,
            point: atoms[i].point.clone(),
            weight: w,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Defaults, Orientation};
    use crate::stats::ks_test;

    fn two_shell() -> Configuration {
        let a = Shell::new(1, vec![0.0; 2], 1.0, 2.0, Orientation::Outward).unwrap();
        let b = Shell::new(2, vec![0.0; 3], 1.0, 2.0, Orientation::Outward).unwrap();
        Configuration::new(vec![a, b], vec![0.4, 0.6], Defaults::default()).unwrap()
    }

    fn point_at_level(cfg: &Configuration, shell: usize, level: f64) -> Vec<f64> {
        let s = cfg.shell(shell).unwrap();
        let mut p = vec![0.0; s.dim];
        p[0] = level_radius(s, level).unwrap();
        p
    }

    #[test]
    fn ball_exit_lies_on_sphere() {
        let mut rng = StreamKey::new(1).stream(0);
        for dim in 1..6 {
            let c: Vec<f64> = (0..dim).map(|k| k as f64 * 0.3).collect();
            let p = sample_ball_exit(&c, 1.7, &mut rng);
            let r = crate::geometry::distance(&p, &c);
            assert!((r - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_exit_dim1_is_fair_coin() {
        let key = StreamKey::new(2);
        let n = 20_000;
        let plus = (0..n)
            .filter(|&i| sample_ball_exit(&[0.0], 1.0, &mut key.stream(i))[0] > 0.0)
            .count();
        let p = plus as f64 / n as f64;
        assert!((p - 0.5).abs() < 3.0 * binomial_se(0.5, n as usize));
    }

    #[test]
    fn ball_exit_dim3_moments_and_marginal() {
        let key = StreamKey::new(3);
        let n = 100_000u64;
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|i| sample_ball_exit(&[0.0; 3], 2.0, &mut key.stream(i)))
            .collect();
        let sigma = 2.0 / (3.0 * n as f64).sqrt();
        for k in 0..3 {
            let mean = pts.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 * sigma, "coordinate {k} mean {mean}");
        }
        // in 3-d each coordinate of a uniform point on the sphere is uniform
        let xs: Vec<f64> = pts.iter().take(5000).map(|p| p[2] / 2.0).collect();
        let (_, p) = ks_test(&xs, |x| ((x + 1.0) / 2.0).clamp(0.0, 1.0));
        assert!(p > 0.01);
    }

    #[test]
    fn outer_prob_is_level_ratio() {
        let cfg = two_shell();
        let y = point_at_level(&cfg, 1, 0.2);
        assert!((exit_outer_prob(&cfg, 1, &y, 0.4).unwrap() - 0.5).abs() < 1e-12);
        let on_st = point_at_level(&cfg, 1, 0.4);
        assert!((exit_outer_prob(&cfg, 1, &on_st, 0.4).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            exit_outer_prob(&cfg, 1, &[1.0, 0.0, 0.0], 0.4).unwrap(),
            0.0
        );
        let beyond = point_at_level(&cfg, 1, 0.6);
        assert!(matches!(
            exit_outer_prob(&cfg, 1, &beyond, 0.4),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn annulus_exit_frequency_matches_level_ratio() {
        let cfg = two_shell();
        let t = 0.5;
        for shell in 0..2 {
            let y = point_at_level(&cfg, shell, t / 2.0);
            let key = StreamKey::new(11).derive_index(shell as u64);
            let n = 20_000u64;
            let mut outer = 0;
            for i in 0..n {
                let e =
                    sample_annulus_exit(&cfg, shell, &y, t, 1e-4, 1_000_000, &mut key.stream(i))
                        .unwrap();
                if e.side == ExitSide::Outer {
                    outer += 1;
                    let p = e.point.unwrap();
                    let s_t = level_radius(cfg.shell(shell).unwrap(), t).unwrap();
                    assert!(
                        (crate::geometry::distance(&p, &cfg.shells()[shell].center) - s_t).abs()
                            < 1e-12
                    );
                }
            }
            let f = outer as f64 / n as f64;
            assert!(
                (f - 0.5).abs() < 3.0 * binomial_se(0.5, n as usize),
                "shell {shell}: {f}"
            );
        }
    }

    #[test]
    fn annulus_exit_from_k_side_is_absorbed() {
        let cfg = two_shell();
        let key = StreamKey::new(12);
        for i in 0..200 {
            let e = sample_annulus_exit(
                &cfg,
                1,
                &[1.0, 0.0, 0.0],
                0.5,
                1e-4,
                1000,
                &mut key.stream(i),
            )
            .unwrap();
            assert_eq!(e.side, ExitSide::Inner);
            assert_eq!(e.steps, 0);
        }
    }

    #[test]
    fn one_dimensional_annulus_is_gamblers_ruin() {
        let s = Shell::new(0, vec![0.0], 1.0, 3.0, Orientation::Outward).unwrap();
        let cfg = Configuration::new(vec![s], vec![1.0], Defaults::default()).unwrap();
        // g linear: g(rho) = (rho - 1)/2. S_t at t = 0.8 sits at rho = 2.6;
        // from rho = 1.4 the exit probability is (1.4 - 1)/(2.6 - 1) = 0.25.
        let key = StreamKey::new(13);
        let n = 20_000u64;
        let outer = (0..n)
            .filter(|&i| {
                sample_annulus_exit(&cfg, 0, &[-1.4], 0.8, 1e-4, 1_000_000, &mut key.stream(i))
                    .unwrap()
                    .side
                    == ExitSide::Outer
            })
            .count();
        let f = outer as f64 / n as f64;
        assert!(
            (f - 0.25).abs() < 3.0 * binomial_se(0.25, n as usize),
            "{f}"
        );
    }

    #[test]
    fn step_cap_is_an_error() {
        let cfg = two_shell();
        let y = point_at_level(&cfg, 1, 0.25);
        let err = sample_annulus_exit(&cfg, 1, &y, 0.5, 1e-12, 1, &mut StreamKey::new(1).stream(0));
        assert!(matches!(err, Err(Error::NonConvergence { steps: 1 })));
    }

    #[test]
    fn systematic_resampling_preserves_mass_and_proportions() {
        let atoms: Vec<Atom> = (0..10)
            .map(|k| Atom {
                shell: k % 2,
                point: vec![k as f64],
                weight: if k % 2 == 0 { 0.03 } else { 0.07 },
            })
            .collect();
        let out = resample_systematic(&atoms, 100, 0.5);
        assert_eq!(out.len(), 100);
        let total: f64 = out.iter().map(|a| a.weight).sum();
        assert!((total - 0.5).abs() < 1e-12);
        let odd = out.iter().filter(|a| a.shell == 1).count();
        assert_eq!(odd, 70);
    }
}
