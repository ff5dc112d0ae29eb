use approx::assert_relative_eq;
use darnwalk::geometry::{
    classify_stability, component_tree, level_radius, radial_g, CompactDescription, CompactPiece,
    Configuration, Defaults, Orientation, Shell,
};
use darnwalk::harmonic::sphere_mean;
use darnwalk::Error;
use proptest::prelude::*;

fn reference() -> Configuration {
    let a = Shell::new(1, vec![0.0; 2], 1.0, 2.0, Orientation::Outward).unwrap();
    let b = Shell::new(2, vec![0.0; 3], 1.0, 2.0, Orientation::Outward).unwrap();
    Configuration::new(vec![a, b], vec![0.4, 0.6], Defaults::default()).unwrap()
}

/// `g` from its textbook closed forms, written independently of the crate.
fn g_oracle(dim: usize, a: f64, b: f64, rho: f64) -> f64 {
    match dim {
        1 => (rho - a) / (b - a),
        2 => (rho / a).ln() / (b / a).ln(),
        d => {
            let e = 2.0 - d as f64;
            (rho.powf(e) - a.powf(e)) / (b.powf(e) - a.powf(e))
        }
    }
}

fn shell_strategy() -> impl Strategy<Value = Shell> {
    (1usize..=5, 0.2f64..3.0, 1.1f64..4.0, any::<bool>()).prop_map(|(dim, a, ratio, outward)| {
        let (b, o) = if outward {
            (a * ratio, Orientation::Outward)
        } else {
            (a / ratio, Orientation::Inward)
        };
        Shell::new(0, vec![0.5; dim], a, b, o).unwrap()
    })
}

#[test]
fn reference_g_values() {
    let cfg = reference();
    let (s2, s3) = (&cfg.shells()[0], &cfg.shells()[1]);
    assert_eq!(radial_g(s2, 1.0).unwrap(), 0.0);
    assert_eq!(radial_g(s3, 2.0).unwrap(), 1.0);
    assert_relative_eq!(radial_g(s2, 2f64.sqrt()).unwrap(), 0.5, epsilon = 1e-15);
    // 2(1 - 1/rho) in three dimensions with a = 1, b = 2
    assert_relative_eq!(radial_g(s3, 4.0 / 3.0).unwrap(), 0.5, epsilon = 1e-15);
    assert_relative_eq!(level_radius(s3, 0.25).unwrap(), 8.0 / 7.0, epsilon = 1e-15);
    assert!(matches!(radial_g(s2, 2.5), Err(Error::Domain(_))));
    assert!(matches!(level_radius(s2, 1.0), Err(Error::Domain(_))));
}

#[test]
fn invalid_configurations() {
    let s = Shell::new(1, vec![0.0; 2], 1.0, 2.0, Orientation::Outward).unwrap();
    match Configuration::new(vec![s.clone()], vec![0.9], Defaults::default()) {
        Err(Error::Invariant { constraint, .. }) => assert_eq!(constraint, "weight-sum"),
        other => panic!("expected weight-sum invariant, got {other:?}"),
    }
    assert!(matches!(
        Shell::new(1, vec![0.0; 2], 1.0, 1.0, Orientation::Outward),
        Err(Error::Invariant { .. })
    ));
    assert!(Shell::new(1, vec![0.0; 2], 2.0, 1.0, Orientation::Outward).is_err());
}

#[test]
fn component_tree_has_constant_width() {
    let cfg = reference();
    let tree = component_tree(&cfg, &[0.9, 0.5, 0.1, 0.01]).unwrap();
    assert_eq!(tree.width(), Some(2));
    assert_eq!(tree.depth(), 4);
    for n in 0..3 {
        for i in 0..2 {
            assert_eq!(tree.children(n, i), vec![i]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn g_matches_closed_form(shell in shell_strategy(), f in 0.0f64..=1.0) {
        let (lo, hi) = shell.radial_band();
        let rho = lo + f * (hi - lo);
        let want = g_oracle(shell.dim, shell.inner_radius, shell.outer_radius, rho);
        prop_assert!((radial_g(&shell, rho).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn level_radius_inverts_g(shell in shell_strategy(), t in 1e-6f64..0.999_999) {
        let rho = level_radius(&shell, t).unwrap();
        let back = radial_g(&shell, rho).unwrap();
        prop_assert!((back - t).abs() <= 1e-12 * t.max(1e-3));
        let again = level_radius(&shell, back).unwrap();
        prop_assert!((again - rho).abs() <= 1e-12 * rho);
    }

    #[test]
    fn g_increases_from_k_to_w0(shell in shell_strategy()) {
        let ts: Vec<f64> = (0..=50)
            .map(|k| {
                let f = k as f64 / 50.0;
                shell.inner_radius + f * (shell.outer_radius - shell.inner_radius)
            })
            .map(|rho| radial_g(&shell, rho).unwrap())
            .collect();
        prop_assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    /// Mean-value property of `g` on spheres inside the shell.
    #[test]
    fn g_is_harmonic(shell in shell_strategy(), f in 0.2f64..0.8, frac in 0.05f64..0.5, seed in any::<u64>()) {
        let (lo, hi) = shell.radial_band();
        let rho = lo + f * (hi - lo);
        let h = frac * (rho - lo).min(hi - rho);
        // a point at radius rho in a pseudo-random direction
        let mut dir: Vec<f64> = (0..shell.dim)
            .map(|k| ((seed.wrapping_mul(k as u64 + 7) % 1000) as f64 / 500.0) - 1.0 + 1e-3)
            .collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        let center: Vec<f64> = shell.center.iter().zip(&dir).map(|(c, d)| c + rho * d).collect();
        let s = shell.clone();
        // product rules need more nodes per angle as the dimension grows
        let points = if shell.dim <= 3 { 1000 } else { 40_000 };
        let (mean, _) = sphere_mean(&center, h, points, |x| radial_g(&s, s.radius_of(x))).unwrap();
        let at_center = radial_g(&shell, rho).unwrap();
        prop_assert!((mean - at_center).abs() <= 1e-10, "mean {mean} vs {at_center}");
    }
}

/// Bounded components of the complement of a planar compact on a grid.
fn flood_fill_holes(compact: &CompactDescription, half_width: f64, n: usize) -> usize {
    let h = 2.0 * half_width / n as f64;
    let mut free: Vec<bool> = (0..n * n)
        .map(|c| {
            let x = [
                -half_width + ((c / n) as f64 + 0.5) * h,
                -half_width + ((c % n) as f64 + 0.5) * h,
            ];
            !compact.pieces.iter().any(|p| p.contains(&x))
        })
        .collect();
    let mut holes = 0;
    for start in 0..n * n {
        if !free[start] {
            continue;
        }
        free[start] = false;
        let mut stack = vec![start];
        let mut bounded = true;
        while let Some(c) = stack.pop() {
            let (i, j) = (c / n, c % n);
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                bounded = false;
            }
            let mut next = Vec::with_capacity(4);
            if i > 0 {
                next.push(c - n);
            }
            if i + 1 < n {
                next.push(c + n);
            }
            if j > 0 {
                next.push(c - 1);
            }
            if j + 1 < n {
                next.push(c + 1);
            }
            for k in next {
                if free[k] {
                    free[k] = false;
                    stack.push(k);
                }
            }
        }
        if bounded {
            holes += 1;
        }
    }
    holes
}

/// Concentric pieces around one center with radial gaps of 0.35.
fn cluster(center: [f64; 2], with_ball: bool, shells: usize, widths: &[f64]) -> Vec<CompactPiece> {
    let mut pieces = Vec::new();
    let mut r = 0.5;
    if with_ball {
        pieces.push(CompactPiece::ball(0, center.to_vec(), r));
    }
    for w in widths.iter().take(shells) {
        let inner = r + 0.35;
        let outer = inner + w;
        pieces.push(CompactPiece::shell(0, center.to_vec(), inner, outer));
        r = outer;
    }
    pieces
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn hole_count_matches_flood_fill(
        ball_a in any::<bool>(),
        shells_a in 0usize..=3,
        ball_b in any::<bool>(),
        shells_b in 0usize..=2,
        widths in proptest::collection::vec(0.2f64..0.5, 3),
    ) {
        let mut pieces = cluster([-4.0, 0.0], ball_a, shells_a, &widths);
        pieces.extend(cluster([4.5, 0.5], ball_b, shells_b, &widths));
        prop_assume!(!pieces.is_empty());
        let compact = CompactDescription { pieces };
        let report = classify_stability(&compact).unwrap();
        prop_assert_eq!(report.hole_count, flood_fill_holes(&compact, 10.0, 400));
        prop_assert!(report.strongly_stable);
    }
}
