use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stochctl::model::{path_rollout, BoxSet};
use stochctl::particle::InitialControls;
use stochctl::sampling::{Role, ScenarioSet};
use stochctl::scentree::{build_tree, node_scatter, solve_tree, BranchingSchedule, ScenarioTree, TreeSolveConfig};
use stochctl::toy::{LinearQuadratic, SmoothScalar};

fn random_paths(n: usize, horizon: usize, seed: u64) -> ScenarioSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = (0..n)
        .map(|_| (0..=horizon).map(|_| vec![rng.gen_range(-0.5..0.5)]).collect())
        .collect();
    ScenarioSet::from_paths(paths, Role::Train).unwrap()
}

/// Root-to-leaf chains of node ids.
fn leaf_chains(tree: &ScenarioTree) -> Vec<Vec<usize>> {
    let horizon = tree.horizon();
    tree.stages[horizon]
        .clone()
        .map(|leaf| {
            let mut chain = vec![leaf];
            while let Some(p) = tree.nodes[*chain.last().unwrap()].parent {
                chain.push(p);
            }
            chain.reverse();
            chain
        })
        .collect()
}

#[test]
fn doubling_counts() {
    let counts = BranchingSchedule::doubling(24).node_counts(24, 200);
    assert_eq!(&counts[..8], &[2, 4, 8, 16, 32, 64, 128, 200]);
    assert!(counts[8..].iter().all(|&c| c == 200));
}

#[test]
fn built_tree_matches_the_schedule() {
    let sc = random_paths(200, 10, 1);
    let schedule = BranchingSchedule::doubling(10);
    let tree = build_tree(&sc, &schedule, 1).unwrap();
    let counts: Vec<usize> = (0..=10).map(|t| tree.stage_nodes(t).len()).collect();
    assert_eq!(counts, schedule.node_counts(10, 200));
}

#[test]
fn saturation_splits_into_single_scenarios() {
    let sc = random_paths(5, 3, 1);
    let schedule = BranchingSchedule::new(vec![4, 4, 1, 1]).unwrap();
    let tree = build_tree(&sc, &schedule, 0).unwrap();
    assert_eq!(tree.stage_nodes(0).len(), 4);
    for t in 1..=3 {
        assert_eq!(tree.stage_nodes(t).len(), 5);
        assert!(tree.stage_nodes(t).iter().all(|n| n.scenarios.len() == 1));
    }
}

#[test]
fn expected_cost_equals_path_enumeration() {
    let model = SmoothScalar::random(3, 2).unwrap();
    let sc = random_paths(24, 3, 2);
    let tree = build_tree(&sc, &BranchingSchedule::new(vec![2, 3, 2, 1]).unwrap(), 7).unwrap();
    let cfg = TreeSolveConfig {
        max_iters: 10,
        ..TreeSolveConfig::default()
    };
    let sol = solve_tree(&model, &tree, &cfg).unwrap();
    let mut total = 0.0;
    for chain in leaf_chains(&sol.tree) {
        let noise: Vec<&[f64]> = chain.iter().map(|&id| sol.tree.nodes[id].noise.as_slice()).collect();
        let controls: Vec<Vec<f64>> = chain[..3].iter().map(|&id| sol.tree.nodes[id].control.clone()).collect();
        let prob = sol.tree.nodes[*chain.last().unwrap()].prob;
        total += prob * path_rollout(&model, &noise, &controls).unwrap().1;
    }
    assert!((total - sol.cost).abs() <= 1e-12 * (1.0 + total.abs()), "{total} vs {}", sol.cost);
}

#[test]
fn two_leaf_lq_has_the_analytic_root_control() {
    // one root at x0, children at +-a with probability 1/2:
    // minimize u^2/2 + E (x0 + u + w)^2 / 2, so u = -x0 / 2
    let x0 = 0.8;
    let paths = vec![vec![vec![x0], vec![0.3]], vec![vec![x0], vec![-0.3]]];
    let sc = ScenarioSet::from_paths(paths, Role::Train).unwrap();
    let tree = build_tree(&sc, &BranchingSchedule::new(vec![1, 2]).unwrap(), 0).unwrap();
    let model = LinearQuadratic::new(1, BoxSet::uniform(1, -2.0, 2.0).unwrap());
    let sol = solve_tree(&model, &tree, &TreeSolveConfig::default()).unwrap();
    assert!(sol.converged);
    assert!((sol.tree.nodes[0].control[0] + 0.5 * x0).abs() < 1e-6);
    let leaf_probs: Vec<f64> = sol.tree.stage_nodes(1).iter().map(|n| n.prob).collect();
    assert_eq!(leaf_probs, vec![0.5, 0.5]);
}

#[test]
fn single_path_tree_is_a_chain() {
    let sc = random_paths(1, 4, 5);
    let tree = build_tree(&sc, &BranchingSchedule::doubling(4), 0).unwrap();
    for t in 0..=4 {
        assert_eq!(tree.stage_nodes(t).len(), 1);
        assert_eq!(tree.stage_nodes(t)[0].noise, sc.get(0, t));
    }
}

#[test]
fn lower_start_and_scatter_weights() {
    let model = SmoothScalar::random(2, 9).unwrap();
    let sc = random_paths(8, 2, 9);
    let tree = build_tree(&sc, &BranchingSchedule::doubling(2), 3).unwrap();
    let cfg = TreeSolveConfig {
        initial: InitialControls::Lower,
        max_iters: 0,
        ..TreeSolveConfig::default()
    };
    let sol = solve_tree(&model, &tree, &cfg).unwrap();
    for t in 0..2 {
        assert!(sol.tree.stage_nodes(t).iter().all(|n| n.control == vec![-2.0]));
        let s = node_scatter(&sol.tree, t).unwrap();
        assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cells_partition_scenarios_and_probabilities_add_up(
        seed in 0u64..1000,
        n in 1usize..60,
        factors in prop::collection::vec(1usize..4, 4),
    ) {
        let sc = random_paths(n, 3, seed);
        let schedule = BranchingSchedule::new(factors).unwrap();
        let Ok(tree) = build_tree(&sc, &schedule, seed) else { return Ok(()); };
        for t in 0..=3 {
            let nodes = tree.stage_nodes(t);
            let total: f64 = nodes.iter().map(|n| n.prob).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let mut seen: Vec<usize> = nodes.iter().flat_map(|n| n.scenarios.clone()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for node in nodes {
                prop_assert!(!node.scenarios.is_empty());
                if !node.children.is_empty() {
                    let child_prob: f64 = node.children.iter().map(|&c| tree.nodes[c].prob).sum();
                    prop_assert!((child_prob - node.prob).abs() < 1e-12);
                }
            }
        }
    }
}
