use std::collections::BTreeMap;

use approx::assert_abs_diff_eq;
use darnwalk::geometry::{ComponentTree, Configuration, Defaults, Orientation, Shell};
use darnwalk::kernels::push_forward;
use darnwalk::measures::{
    allocate_weights, make_parametric_family, weak_limit_family, AllocationSpec, Atom,
    MeasureFamily, SphereMeasure,
};
use darnwalk::{Error, StreamKey};
use proptest::prelude::*;

fn reference() -> Configuration {
    let a = Shell::new(1, vec![0.0; 2], 1.0, 2.0, Orientation::Outward).unwrap();
    let b = Shell::new(2, vec![0.0; 3], 1.0, 2.0, Orientation::Outward).unwrap();
    Configuration::new(vec![a, b], vec![0.4, 0.6], Defaults::default()).unwrap()
}

/// Random trees: every node of a level has between one and three children.
fn tree_strategy() -> impl Strategy<Value = ComponentTree> {
    (
        1usize..=3,
        proptest::collection::vec(proptest::collection::vec(1usize..=3, 1..=9), 1..=4),
    )
        .prop_map(|(roots, fanouts)| {
            let mut parents = vec![vec![None; roots]];
            for row in fanouts {
                let width = parents.last().unwrap().len();
                let mut next = Vec::new();
                for p in 0..width {
                    for _ in 0..row[p % row.len()] {
                        next.push(Some(p));
                    }
                }
                parents.push(next);
            }
            let levels = (0..parents.len())
                .map(|n| 0.5f64.powi(n as i32 + 1))
                .collect();
            ComponentTree::from_parents(levels, parents).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn uniform_allocation_telescopes(tree in tree_strategy()) {
        let alloc = allocate_weights(&tree, &AllocationSpec::Uniform).unwrap();
        prop_assert!(alloc.strictly_positive);
        for n in 0..tree.depth() {
            prop_assert!((alloc.level_sum(n) - 1.0).abs() <= 1e-14);
        }
        for n in 0..tree.depth() - 1 {
            for p in 0..tree.level_nodes(n).len() {
                let kids: f64 = tree.children(n, p).iter().map(|&c| alloc.weights[n + 1][c]).sum();
                prop_assert!((kids - alloc.weights[n][p]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn targeted_allocation_honors_targets(tree in tree_strategy(), frac in 0.0f64..1.0) {
        // pin the first child of each level-0 node with siblings to a fraction of its parent
        let uniform = allocate_weights(&tree, &AllocationSpec::Uniform).unwrap();
        let mut targets = BTreeMap::new();
        if tree.depth() > 1 {
            for p in 0..tree.level_nodes(0).len() {
                let kids = tree.children(0, p);
                if kids.len() > 1 {
                    targets.insert((1, kids[0]), frac * uniform.weights[0][p]);
                }
            }
        }
        let alloc = allocate_weights(&tree, &AllocationSpec::Targets(targets.clone())).unwrap();
        for ((n, c), w) in &targets {
            prop_assert_eq!(alloc.weights[*n][*c], *w);
        }
        for n in 0..tree.depth() {
            prop_assert!((alloc.level_sum(n) - 1.0).abs() <= 1e-14);
        }
    }
}

#[test]
fn overfull_targets_are_rejected() {
    let tree =
        ComponentTree::from_parents(vec![0.5, 0.25], vec![vec![None], vec![Some(0), Some(0)]])
            .unwrap();
    let targets = BTreeMap::from([((1, 0), 0.7), ((1, 1), 0.6)]);
    match allocate_weights(&tree, &AllocationSpec::Targets(targets)) {
        Err(Error::ConstraintViolation { node, .. }) => assert_eq!(node, "L0.0"),
        other => panic!("expected a constraint violation, got {other:?}"),
    }
}

#[test]
fn parametric_family_preconditions() {
    let cfg = reference();
    assert!(make_parametric_family(&cfg, &[0.4, 0.6]).is_ok());
    assert!(make_parametric_family(&cfg, &[0.5, 0.6]).is_err());
    assert!(make_parametric_family(&cfg, &[1.0]).is_err());
}

#[test]
fn push_forward_conserves_mass() {
    let cfg = reference();
    let sigma = SphereMeasure::Parametric {
        level: 0.25,
        weights: vec![0.4, 0.6],
    };
    let pf = push_forward(&cfg, &sigma, 0.5, 20_000, StreamKey::new(4)).unwrap();
    // everything leaves the annulus, through one side or the other
    assert_abs_diff_eq!(pf.outer_mass + pf.inner_mass, 1.0, epsilon = 1e-12);
    // starting at level s, the outer exit probability is s / t
    assert!(
        (pf.outer_mass - 0.5).abs() <= 3.0 * pf.std_error,
        "{}",
        pf.outer_mass
    );
    let masses = pf.outer.shell_masses(2);
    assert_abs_diff_eq!(
        masses.iter().sum::<f64>(),
        pf.outer.total_mass(),
        epsilon = 1e-12
    );
}

#[test]
fn weak_limit_from_uniform_start_recovers_weights() {
    let cfg = reference();
    let etas = [0.1, 0.05, 0.025];
    let nus: Vec<SphereMeasure> = etas
        .iter()
        .map(|&level| SphereMeasure::Parametric {
            level,
            weights: vec![0.4, 0.6],
        })
        .collect();
    let limit = weak_limit_family(&cfg, &etas, &nus, &[0.5], 20_000, StreamKey::new(8)).unwrap();
    let diag = &limit.diagnostics[0];
    assert_eq!(diag.iterates.len(), etas.len());
    assert_eq!(diag.successive_distances.len(), etas.len() - 1);
    for it in &diag.iterates {
        assert!((it.mass - 1.0).abs() <= 3.0 * it.mass_std_error, "{it:?}");
        // shell masses carry the same relative error as the total
        for (m, a) in it.shell_masses.iter().zip([0.4, 0.6]) {
            assert!((m - a).abs() <= 3.0 * it.mass_std_error + 0.02, "{it:?}");
        }
    }
    assert_eq!(limit.family.levels(), vec![0.5]);
}

#[test]
fn weak_limit_preconditions() {
    let cfg = reference();
    let nu = |level| SphereMeasure::Parametric {
        level,
        weights: vec![0.4, 0.6],
    };
    let key = StreamKey::new(1);
    assert!(weak_limit_family(&cfg, &[0.1, 0.2], &[nu(0.1), nu(0.2)], &[0.5], 10, key).is_err());
    assert!(weak_limit_family(&cfg, &[0.1], &[], &[0.5], 10, key).is_err());
    assert!(weak_limit_family(&cfg, &[0.1], &[nu(0.1)], &[0.5], 0, key).is_err());
}

#[test]
fn family_json_round_trip_is_exact() {
    let family = MeasureFamily {
        members: vec![
            SphereMeasure::Parametric {
                level: 0.1,
                weights: vec![0.4, 0.6],
            },
            SphereMeasure::Empirical {
                level: 1.0 / 3.0,
                atoms: vec![
                    Atom {
                        shell: 1,
                        point: vec![0.1 + 0.2, -1e-300, std::f64::consts::PI],
                        weight: 1.0 / 7.0,
                    },
                    Atom {
                        shell: 0,
                        point: vec![1.234_567_890_123_456_7, 5e-324],
                        weight: 6.0 / 7.0,
                    },
                ],
            },
        ],
    };
    let text = serde_json::to_string(&family).unwrap();
    let back: MeasureFamily = serde_json::from_str(&text).unwrap();
    assert_eq!(back, family);
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
}
