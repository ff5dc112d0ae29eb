//! Harmonicity across the darned point, Monte Carlo Dirichlet solutions and
//! mean-value diagnostics.
//!
//! A function continuous on `U` and harmonic off `x0` is harmonic at `x0`
//! exactly when `∫ h dσ_r = h(x0)` for the compatible family `σ_r`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{BoundarySet, DarnedState, Simulator};
use crate::error::{Error, Result};
use crate::geometry::{level_radius, Configuration};
use crate::measures::{LevelMeasures, SphereMeasure};
use crate::rng::{Stream, StreamKey};
use crate::stats::{mean_se, two_sided_p, z_score, TestReport};

/// Default number of quadrature points per sphere.
pub const DEFAULT_QUADRATURE: usize = 1 << 14;

/// An estimate of a field value with the variance of the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub value: f64,
    pub variance: f64,
}

/// A real function on the darned space.
pub trait ScalarField: Sync {
    /// One unbiased draw of `h(state)`; exact for deterministic fields.
    fn draw(&self, state: &DarnedState, rng: &mut Stream) -> Result<f64>;

    fn deterministic(&self) -> bool {
        true
    }

    /// Whether `draw` may run on several threads at once.
    fn concurrent(&self) -> bool {
        true
    }

    /// Checks that the closure of `U_r` lies in the field's domain.
    fn check_level(&self, _r: f64) -> Result<()> {
        Ok(())
    }
}

/// `h(state)` from `n` draws (one draw when deterministic).
pub fn evaluate(
    field: &dyn ScalarField,
    state: &DarnedState,
    n: usize,
    key: StreamKey,
) -> Result<FieldSample> {
    if field.deterministic() {
        return Ok(FieldSample {
            value: field.draw(state, &mut key.stream(0))?,
            variance: 0.0,
        });
    }
    if n < 2 {
        return Err(Error::Precondition(
            "a stochastic field needs at least 2 draws".into(),
        ));
    }
    let draw = |i: u64| field.draw(state, &mut key.stream(i));
    let values: Vec<f64> = if field.concurrent() {
        (0..n as u64)
            .into_par_iter()
            .map(draw)
            .collect::<Result<_>>()?
    } else {
        (0..n as u64).map(draw).collect::<Result<_>>()?
    };
    let (value, se) = mean_se(&values);
    Ok(FieldSample {
        value,
        variance: se * se,
    })
}

/// `h ≡ c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantField(pub f64);

impl ScalarField for ConstantField {
    fn draw(&self, _state: &DarnedState, _rng: &mut Stream) -> Result<f64> {
        Ok(self.0)
    }
}

/// `h = offset_j + slope_j g` on shell `j`, and `h(x0) = at_x0`.
///
/// Harmonic off `x0` on the shells. It is harmonic at `x0` for the mixture
/// family with weights `α` iff `Σ α_j slope_j = 0` and
/// `Σ α_j offset_j = at_x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellLevelField<'a> {
    pub config: &'a Configuration,
    pub offsets: Vec<f64>,
    pub slopes: Vec<f64>,
    pub at_x0: f64,
}

impl ScalarField for ShellLevelField<'_> {
    fn draw(&self, state: &DarnedState, _rng: &mut Stream) -> Result<f64> {
        match state {
            DarnedState::AtDarned => Ok(self.at_x0),
            DarnedState::AtPoint {
                component,
                position,
            } => {
                let (j, g) = self
                    .config
                    .level_at(*component, position)
                    .ok_or_else(|| Error::Domain("point is not in any shell".into()))?;
                Ok(self.offsets[j] + self.slopes[j] * g)
            }
        }
    }
}

/// A deterministic field given by a closure.
pub struct FnField<F>(pub F);

impl<F> ScalarField for FnField<F>
where
    F: Fn(&DarnedState) -> Result<f64> + Sync,
{
    fn draw(&self, state: &DarnedState, _rng: &mut Stream) -> Result<f64> {
        (self.0)(state)
    }
}

/// Boundary data for Dirichlet problems.
pub trait BoundaryData: Sync {
    /// `f` at an exit state; `tol` is the radial slack of exit points.
    fn value(&self, config: &Configuration, exit: &DarnedState, tol: f64) -> f64;
}

/// Step functions on the boundary: `Σ c_k 1_{B_k}` plus a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryValues {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<(BoundarySet, f64)>,
}

impl BoundaryValues {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn indicator(set: BoundarySet) -> Self {
        Self {
            constant: 0.0,
            terms: vec![(set, 1.0)],
        }
    }
}

impl BoundaryData for BoundaryValues {
    fn value(&self, config: &Configuration, exit: &DarnedState, tol: f64) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .filter(|(b, _)| b.contains(config, exit, tol))
                .map(|(_, c)| c)
                .sum::<f64>()
    }
}

/// Boundary data given by a closure of the exit state.
pub struct FnBoundary<F>(pub F);

impl<F> BoundaryData for FnBoundary<F>
where
    F: Fn(&DarnedState) -> f64 + Sync,
{
    fn value(&self, _config: &Configuration, exit: &DarnedState, _tol: f64) -> f64 {
        (self.0)(exit)
    }
}

/// `u = H_U f`, evaluated by simulating one exit per draw.
pub struct DirichletField<'a> {
    pub sim: &'a Simulator<'a>,
    pub boundary: &'a dyn BoundaryData,
}

impl ScalarField for DirichletField<'_> {
    fn draw(&self, state: &DarnedState, rng: &mut Stream) -> Result<f64> {
        let exit = self.sim.run(state, rng)?;
        let tol = 2.0 * self.sim.options().epsilon;
        Ok(self.boundary.value(self.sim.config(), &exit.exit, tol))
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn check_level(&self, r: f64) -> Result<()> {
        self.sim.check_contains_closure(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletValue {
    pub state: DarnedState,
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// Monte Carlo `H_U f` at each point.
pub fn solve_dirichlet(
    sim: &Simulator<'_>,
    boundary: &dyn BoundaryData,
    points: &[DarnedState],
    n_samples: usize,
    key: StreamKey,
) -> Result<Vec<DirichletValue>> {
    let field = DirichletField { sim, boundary };
    points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let s = evaluate(&field, p, n_samples, key.derive_index(k as u64))?;
            Ok(DirichletValue {
                state: p.clone(),
                value: s.value,
                std_error: s.variance.sqrt(),
                n_samples,
            })
        })
        .collect()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for k in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for n in 2..=m {
                let p2 = ((2 * n - 1) as f64 * x * p1 - (n - 1) as f64 * p0) / n as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if m == 0 { 1.0 } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = x;
        nodes[m - 1 - k] = -x;
        weights[k] = w;
        weights[m - 1 - k] = w;
    }
    (nodes, weights)
}

/// A product quadrature rule on the unit sphere of `R^dim`, weights summing
/// to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// `m` polar nodes per angle (Gauss–Legendre in `cos θ` for odd
    /// dimensions, midpoints in `θ` for even ones) and `2m` azimuths.
    pub fn with_resolution(dim: usize, m: usize) -> Self {
        let m = m.max(1);
        let (points, weights) = match dim {
            0 => (vec![], vec![]),
            1 => (vec![vec![1.0], vec![-1.0]], vec![0.5, 0.5]),
            2 => {
                let n = 2 * m;
                let pts = (0..n)
                    .map(|k| {
                        let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
                        vec![a.cos(), a.sin()]
                    })
                    .collect();
                (pts, vec![1.0 / n as f64; n])
            }
            _ => {
                let inner = SphereRule::with_resolution(dim - 1, m);
                // polar coordinate x = cos θ carries the density (1 - x²)^{(dim-3)/2}
                let polar: Vec<(f64, f64)> = if dim % 2 == 1 {
                    let (xs, ws) = gauss_legendre(m);
                    xs.into_iter()
                        .zip(ws)
                        .map(|(x, w)| (x, w * (1.0 - x * x).powi((dim as i32 - 3) / 2)))
                        .collect()
                } else {
                    // midpoint rule in θ: exact for trigonometric polynomials
                    // of degree below 2m
                    (0..m)
                        .map(|k| {
                            let theta = std::f64::consts::PI * (k as f64 + 0.5) / m as f64;
                            (theta.cos(), theta.sin().powi(dim as i32 - 2))
                        })
                        .collect()
                };
                let mut pts = Vec::with_capacity(m * inner.points.len());
                let mut wts = Vec::with_capacity(pts.capacity());
                for (c, factor) in polar {
                    let s = (1.0 - c * c).max(0.0).sqrt();
                    for (p, v) in inner.points.iter().zip(&inner.weights) {
                        let mut q = Vec::with_capacity(dim);
                        q.push(c);
                        q.extend(p.iter().map(|y| s * y));
                        pts.push(q);
                        wts.push(factor * v);
                    }
                }
                let total: f64 = wts.iter().sum();
                wts.iter_mut().for_each(|w| *w /= total);
                (pts, wts)
            }
        };
        Self { points, weights }
    }

    /// Resolution whose point count is close to `n` in dimension `dim`.
    pub fn resolution_for(dim: usize, n: usize) -> usize {
        if dim <= 1 {
            return 1;
        }
        ((n.max(2) as f64 / 2.0).powf(1.0 / (dim - 1) as f64).round() as usize).max(1)
    }
}

/// Spherical mean of `f` over the sphere of `radius` around `center`, with
/// an error estimate from the half-resolution rule.
pub fn sphere_mean(
    center: &[f64],
    radius: f64,
    n_points: usize,
    f: impl Fn(&[f64]) -> Result<f64> + Sync,
) -> Result<(f64, f64)> {
    let dim = center.len();
    let m = SphereRule::resolution_for(dim, n_points);
    let apply = |rule: &SphereRule| -> Result<f64> {
        let values: Vec<f64> = rule
            .points
            .par_iter()
            .map(|u| {
                let x: Vec<f64> = center
                    .iter()
                    .zip(u)
                    .map(|(c, ui)| c + radius * ui)
                    .collect();
                f(&x)
            })
            .collect::<Result<_>>()?;
        Ok(values.iter().zip(&rule.weights).map(|(v, w)| v * w).sum())
    };
    let fine = apply(&SphereRule::with_resolution(dim, m))?;
    if dim <= 1 {
        return Ok((fine, 0.0));
    }
    let coarse = apply(&SphereRule::with_resolution(dim, m.div_ceil(2)))?;
    Ok((fine, (fine - coarse).abs()))
}

/// Floor for quadrature errors so exact agreement is not over-resolved.
fn quadrature_floor(value: f64) -> f64 {
    1e-10 * (1.0 + value.abs())
}

/// `∫ h dσ_r` with its standard error.
fn integrate(
    config: &Configuration,
    sigma: &SphereMeasure,
    h: &dyn ScalarField,
    n_samples: usize,
    n_quadrature: usize,
    key: StreamKey,
) -> Result<(f64, f64)> {
    let r = sigma.level();
    let total = sigma.total_mass();
    if !h.deterministic() {
        let sampler = sigma.sampler(config)?;
        let draw = |i: u64| {
            let mut rng = key.stream(i);
            let (j, p) = sampler.draw(&mut rng);
            h.draw(
                &DarnedState::point(config.shells()[j].component, p),
                &mut rng,
            )
        };
        let values: Vec<f64> = if h.concurrent() {
            (0..n_samples as u64)
                .into_par_iter()
                .map(draw)
                .collect::<Result<_>>()?
        } else {
            (0..n_samples as u64).map(draw).collect::<Result<_>>()?
        };
        let (mean, se) = mean_se(&values);
        return Ok((mean, se));
    }
    let mut rng = key.stream(0);
    match sigma {
        SphereMeasure::Parametric { weights, .. } => {
            let mut acc = 0.0;
            let mut err = 0.0;
            for (s, w) in config.shells().iter().zip(weights) {
                if *w == 0.0 {
                    continue;
                }
                let radius = level_radius(s, r)?;
                let (mean, e) = sphere_mean(&s.center, radius, n_quadrature, |x| {
                    h.draw(
                        &DarnedState::point(s.component, x.to_vec()),
                        &mut key.stream(0),
                    )
                })?;
                acc += w * mean;
                err += w * e;
            }
            Ok((acc / total, err / total))
        }
        SphereMeasure::Empirical { atoms, .. } => {
            let mut acc = 0.0;
            for a in atoms {
                let state = DarnedState::point(config.shells()[a.shell].component, a.point.clone());
                acc += a.weight * h.draw(&state, &mut rng)?;
            }
            Ok((acc / total, 0.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusCheck {
    pub r: f64,
    pub integral: f64,
    pub integral_se: f64,
    pub at_x0: f64,
    pub at_x0_se: f64,
    pub z: f64,
    pub report: TestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicityReport {
    pub radii: Vec<RadiusCheck>,
    pub pass: bool,
    /// Some radii pass and others fail: evidence that `h` is not harmonic
    /// off `x0`.
    pub mixed: bool,
}

#[derive(Serialize)]
struct HarmonicityInputs {
    r: f64,
    n_samples: usize,
    n_quadrature: usize,
    seed: u64,
    sigma_digest: String,
}

/// Tests `∫ h dσ_r = h(x0)` at each radius.
pub fn harmonicity_test_at_x0(
    config: &Configuration,
    family: &dyn LevelMeasures,
    h: &dyn ScalarField,
    radii: &[f64],
    n_samples: usize,
    n_quadrature: usize,
    key: StreamKey,
) -> Result<HarmonicityReport> {
    let mut checks = Vec::with_capacity(radii.len());
    for (k, &r) in radii.iter().enumerate() {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Precondition(format!(
                "radius level {r} outside (0, 1)"
            )));
        }
        h.check_level(r)?;
        let sigma = family.measure_at(r)?;
        let level_key = key.derive("harmonicity").derive_index(k as u64);
        let x0 = evaluate(h, &DarnedState::AtDarned, n_samples, level_key.derive("x0"))?;
        let (integral, integral_se) = integrate(
            config,
            &sigma,
            h,
            n_samples,
            n_quadrature,
            level_key.derive("sigma"),
        )?;
        let mut se = (integral_se * integral_se + x0.variance).sqrt();
        if h.deterministic() {
            se = se.max(quadrature_floor(x0.value));
        }
        let z = z_score(integral, x0.value, se);
        let inputs = HarmonicityInputs {
            r,
            n_samples,
            n_quadrature,
            seed: key.seed(),
            sigma_digest: crate::stats::digest_json(&sigma),
        };
        checks.push(RadiusCheck {
            r,
            integral,
            integral_se,
            at_x0: x0.value,
            at_x0_se: x0.variance.sqrt(),
            z,
            report: TestReport::new(
                "harmonicity_at_x0",
                &inputs,
                z,
                two_sided_p(z),
                integral - x0.value,
            ),
        });
    }
    let passes = checks.iter().filter(|c| c.report.pass).count();
    Ok(HarmonicityReport {
        pass: passes == checks.len(),
        mixed: passes > 0 && passes < checks.len(),
        radii: checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanValueRow {
    pub component: i64,
    pub center: Vec<f64>,
    pub radius: f64,
    pub mean: f64,
    pub center_value: f64,
    pub deficit: f64,
    pub quadrature_error: f64,
    pub report: TestReport,
}

#[derive(Serialize)]
struct MeanValueInputs<'a> {
    component: i64,
    center: &'a [f64],
    radius: f64,
    n_quadrature: usize,
}

/// Spherical means of a deterministic field against its center values, on
/// balls that avoid `K`.
pub fn mean_value_check(
    config: &Configuration,
    h: &dyn ScalarField,
    centers: &[(i64, Vec<f64>)],
    radii: &[f64],
    n_quadrature: usize,
) -> Result<Vec<MeanValueRow>> {
    if !h.deterministic() {
        return Err(Error::Precondition(
            "mean-value check needs a deterministic field".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut rng = StreamKey::new(0).stream(0);
    for (component, center) in centers {
        for &radius in radii {
            if !(radius > 0.0) || config.distance_to_k(*component, center).0 <= radius {
                return Err(Error::Precondition(format!(
                    "ball of radius {radius} is degenerate or meets K"
                )));
            }
            let (mean, err) = sphere_mean(center, radius, n_quadrature, |x| {
                h.draw(
                    &DarnedState::point(*component, x.to_vec()),
                    &mut StreamKey::new(0).stream(0),
                )
            })?;
            let center_value = h.draw(&DarnedState::point(*component, center.clone()), &mut rng)?;
            let se = err.max(quadrature_floor(center_value));
            let z = z_score(mean, center_value, se);
            let inputs = MeanValueInputs {
                component: *component,
                center,
                radius,
                n_quadrature,
            };
            rows.push(MeanValueRow {
                component: *component,
                center: center.clone(),
                radius,
                mean,
                center_value,
                deficit: mean - center_value,
                quadrature_error: err,
                report: TestReport::new(
                    "mean_value",
                    &inputs,
                    z,
                    two_sided_p(z),
                    mean - center_value,
                ),
            });
        }
    }
    Ok(rows)
}
