//! Statistical tests used by the verification harnesses.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::rng::StreamKey;

/// Significance level shared by every test in the crate.
pub const SIGNIFICANCE: f64 = 0.01;

/// Number of permutations for energy-distance p-values.
pub const PERMUTATIONS: usize = 200;

/// Largest sample per side fed to the pairwise energy statistic. Larger
/// samples are truncated to their leading draws, which are i.i.d.
pub const ENERGY_TEST_CAP: usize = 1000;

/// Outcome of one statistical test, in the serialized report format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub inputs_digest: String,
    pub statistic: f64,
    pub p_value: f64,
    pub effect_size: f64,
    pub pass: bool,
}

impl TestReport {
    pub fn new(
        test: &str,
        inputs: &impl Serialize,
        statistic: f64,
        p_value: f64,
        effect_size: f64,
    ) -> Self {
        Self {
            test: test.to_string(),
            inputs_digest: digest_json(inputs),
            statistic,
            p_value,
            effect_size,
            pass: p_value > SIGNIFICANCE,
        }
    }

    /// Overrides the verdict for tests whose acceptance rule is not a bare
    /// p-value threshold.
    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = pass;
        self
    }
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn digest_json(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    hex(&Sha256::digest(bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Two-sided normal p-value for a z-score.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return 0.0;
    }
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * (1.0 - n.cdf(z.abs()))).clamp(0.0, 1.0)
}

/// `(estimate - expected) / sigma` with a floor on `sigma` so that exact
/// agreement yields zero rather than NaN.
pub fn z_score(estimate: f64, expected: f64, sigma: f64) -> f64 {
    let diff = estimate - expected;
    let floor = 1e-12 * (1.0 + expected.abs());
    diff / sigma.max(floor)
}

/// Standard error of a binomial proportion.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    (p.clamp(0.0, 1.0) * (1.0 - p.clamp(0.0, 1.0)) / n as f64).sqrt()
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::INFINITY);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n_x: usize,
    pub n_y: usize,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Energy-distance two-sample test with a permutation p-value.
///
/// Each sample is truncated to [`ENERGY_TEST_CAP`] points; the statistic is
/// `2 E|X-Y| - E|X-X'| - E|Y-Y'|` with within-sample means over distinct
/// pairs.
pub fn energy_test(x: &[Vec<f64>], y: &[Vec<f64>], key: StreamKey) -> EnergyTest {
    let x = &x[..x.len().min(ENERGY_TEST_CAP)];
    let y = &y[..y.len().min(ENERGY_TEST_CAP)];
    let (nx, ny) = (x.len(), y.len());
    if nx < 2 || ny < 2 {
        return EnergyTest {
            statistic: 0.0,
            p_value: 1.0,
            n_x: nx,
            n_y: ny,
        };
    }
    let pooled: Vec<&[f64]> = x.iter().chain(y).map(Vec::as_slice).collect();
    let n = pooled.len();
    let mut dist = vec![0.0f64; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = euclid(pooled[i], pooled[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
            total += d;
        }
    }
    let stat_for = |labels: &[bool]| -> f64 {
        // labels[i] == true marks the first sample
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for i in 0..n {
            let row = &dist[i * n..(i + 1) * n];
            let li = labels[i];
            for j in i + 1..n {
                if labels[j] == li {
                    if li {
                        sxx += row[j];
                    } else {
                        syy += row[j];
                    }
                }
            }
        }
        let sxy = total - sxx - syy;
        let (fx, fy) = (nx as f64, ny as f64);
        2.0 * sxy / (fx * fy) - 2.0 * sxx / (fx * (fx - 1.0)) - 2.0 * syy / (fy * (fy - 1.0))
    };
    let mut labels: Vec<bool> = (0..n).map(|i| i < nx).collect();
    let observed = stat_for(&labels);
    let mut rng = key.stream(0);
    let mut exceed = 0usize;
    for _ in 0..PERMUTATIONS {
        labels.shuffle(&mut rng);
        if stat_for(&labels) >= observed {
            exceed += 1;
        }
    }
    EnergyTest {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + PERMUTATIONS) as f64,
        n_x: nx,
        n_y: ny,
    }
}

/// Energy distance between two 1-d weighted samples: `2 ∫ (F - G)^2`.
pub fn energy_distance_1d(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let wa: f64 = a.iter().map(|p| p.1).sum();
    let wb: f64 = b.iter().map(|p| p.1).sum();
    if wa <= 0.0 || wb <= 0.0 {
        return 0.0;
    }
    // Merge the sorted atoms; F - G is piecewise constant between them.
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .map(|&(x, w)| (x, w / wa))
        .chain(b.iter().map(|&(x, w)| (x, -w / wb)))
        .collect();
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut acc = 0.0;
    let mut diff = 0.0;
    for pair in events.windows(2) {
        diff += pair[0].1;
        acc += diff * diff * (pair[1].0 - pair[0].0);
    }
    2.0 * acc
}

/// Deterministic, roughly uniform directions on the unit sphere in `dim`
/// dimensions: the normalized Gaussian image of a Halton set.
pub fn projection_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..count)
        .map(|i| {
            let mut v: Vec<f64> = (0..dim)
                .map(|k| {
                    let u = radical_inverse(i as u64 + 1, PRIMES[k % PRIMES.len()]);
                    normal.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
                })
                .collect();
            let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|c| *c /= norm);
            } else {
                v[0] = 1.0;
            }
            v
        })
        .collect()
}

pub(crate) fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Energy distance between weighted point clouds in `R^dim`, computed as
/// the direction-average of exact 1-d energy distances. Uses the identity
/// `|v| = c_d E_θ |θ·v|` for `θ` uniform on the sphere.
pub fn sliced_energy_distance(
    a: &[(Vec<f64>, f64)],
    b: &[(Vec<f64>, f64)],
    dim: usize,
    directions: usize,
) -> f64 {
    let dirs = projection_directions(dim, directions);
    let c_d = sphere_projection_constant(dim);
    let mut acc = 0.0;
    for theta in &dirs {
        let proj = |cloud: &[(Vec<f64>, f64)]| -> Vec<(f64, f64)> {
            cloud
                .iter()
                .map(|(p, w)| (p.iter().zip(theta).map(|(x, t)| x * t).sum(), *w))
                .collect()
        };
        acc += energy_distance_1d(&proj(a), &proj(b));
    }
    c_d * acc / dirs.len() as f64
}

/// `1 / E|θ_1|` for `θ` uniform on the unit sphere of `R^dim`.
fn sphere_projection_constant(dim: usize) -> f64 {
    use statrs::function::gamma::ln_gamma;
    if dim == 1 {
        return 1.0;
    }
    let d = dim as f64;
    // E|θ_1| = Γ(d/2) / (√π Γ((d+1)/2))
    let ln = 0.5 * std::f64::consts::PI.ln() + ln_gamma((d + 1.0) / 2.0) - ln_gamma(d / 2.0);
    ln.exp()
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let n = sample.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let nf = n as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    (d, kolmogorov_p(d, n))
}

/// Asymptotic Kolmogorov tail with the Stephens small-sample correction.
fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn energy_test_separates_shifted_samples() {
        let key = StreamKey::new(1);
        let mut rng = key.stream(0);
        let x: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.gen::<f64>()]).collect();
        let y: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.gen::<f64>()]).collect();
        let z: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.gen::<f64>() + 0.5]).collect();
        assert!(energy_test(&x, &y, key.derive("p")).p_value > SIGNIFICANCE);
        let far = energy_test(&x, &z, key.derive("p"));
        assert!(far.p_value <= SIGNIFICANCE);
        assert!(far.statistic > 0.0);
    }

    #[test]
    fn energy_1d_matches_pairwise_formula() {
        let a = [(0.0, 1.0), (1.0, 1.0)];
        let b = [(0.5, 1.0), (3.0, 1.0)];
        // 2E|X-Y| - E|X-X'| - E|Y-Y'| with V-statistic means
        let exy = (0.5 + 3.0 + 0.5 + 2.0) / 4.0;
        let exx = (0.0 + 1.0 + 1.0 + 0.0) / 4.0;
        let eyy = (0.0 + 2.5 + 2.5 + 0.0) / 4.0;
        let want = 2.0 * exy - exx - eyy;
        assert!((energy_distance_1d(&a, &b) - want).abs() < 1e-12);
    }

    #[test]
    fn sliced_energy_matches_pairwise_in_plane() {
        let a: Vec<(Vec<f64>, f64)> = vec![(vec![0.0, 0.0], 1.0), (vec![1.0, 0.0], 1.0)];
        let b: Vec<(Vec<f64>, f64)> = vec![(vec![0.0, 1.0], 1.0), (vec![2.0, 2.0], 1.0)];
        let d = |p: &[f64], q: &[f64]| euclid(p, q);
        let mut exy = 0.0;
        for (p, _) in &a {
            for (q, _) in &b {
                exy += d(p, q);
            }
        }
        let exx = 2.0 * d(&a[0].0, &a[1].0);
        let eyy = 2.0 * d(&b[0].0, &b[1].0);
        let want = (2.0 * exy - exx - eyy) / 4.0;
        let got = sliced_energy_distance(&a, &b, 2, 4096);
        assert!((got - want).abs() < 2e-3 * want.max(1.0), "{got} vs {want}");
    }

    #[test]
    fn ks_accepts_uniform() {
        let mut rng = StreamKey::new(3).stream(0);
        let s: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>()).collect();
        let (_, p) = ks_test(&s, |x| x.clamp(0.0, 1.0));
        assert!(p > SIGNIFICANCE);
        let (_, p) = ks_test(&s, |x| (x * x).clamp(0.0, 1.0));
        assert!(p < SIGNIFICANCE);
    }

    #[test]
    fn z_score_handles_exact_agreement() {
        assert_eq!(z_score(0.5, 0.5, 0.0), 0.0);
        assert!(two_sided_p(0.0) > 0.99);
        assert!(two_sided_p(5.0) < 1e-5);
    }
}
