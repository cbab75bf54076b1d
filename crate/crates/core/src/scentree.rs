//! Scenario-tree baseline: quantize sampled paths into a tree and solve the
//! tree-structured deterministic program by projected gradient.
//!
//! Node noise values are cell centroids from per-node Lloyd iterations.
//! Once the cumulative branching product reaches the scenario count, each
//! node carries a single scenario and its subtree is that scenario's tail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::csvio::{fmt_f64, CsvDoc};
use crate::error::{check_dim, Error, Result};
use crate::interp::column_names;
use crate::model::{ProblemModel, StageJet};
use crate::particle::InitialControls;
use crate::sampling::ScenarioSet;
use crate::sim::Scatter;

/// Branching factors `b_0..b_T`; `b_0` is the number of roots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchingSchedule {
    factors: Vec<usize>,
}

impl BranchingSchedule {
    pub fn new(factors: Vec<usize>) -> Result<Self> {
        if factors.is_empty() || factors.iter().any(|b| *b == 0) {
            return Err(Error::invalid("branching factors must be at least 1"));
        }
        Ok(BranchingSchedule { factors })
    }

    /// `b_t = 2` for every stage `0..=T`.
    pub fn doubling(horizon: usize) -> Self {
        BranchingSchedule {
            factors: vec![2; horizon + 1],
        }
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    fn factor(&self, t: usize) -> usize {
        self.factors.get(t).copied().unwrap_or(1)
    }

    /// Nodes per stage for `n` scenarios: the running product, replaced by
    /// `n` from the first stage where it reaches `n`.
    pub fn node_counts(&self, horizon: usize, n: usize) -> Vec<usize> {
        let mut counts = Vec::with_capacity(horizon + 1);
        let mut prod = 1usize;
        let mut saturated = false;
        for t in 0..=horizon {
            prod = prod.saturating_mul(self.factor(t));
            if prod >= n {
                saturated = true;
            }
            counts.push(if saturated { n } else { prod });
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub stage: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub noise: Vec<f64>,
    pub prob: f64,
    /// Indices of the scenarios quantized into this node.
    pub scenarios: Vec<usize>,
    pub state: Vec<f64>,
    /// Empty at the final stage.
    pub control: Vec<f64>,
}

/// Nodes stored stage by stage; `stages[t]` is the id range of stage `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    pub nodes: Vec<TreeNode>,
    pub stages: Vec<std::ops::Range<usize>>,
}

impl ScenarioTree {
    pub fn horizon(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn stage_nodes(&self, t: usize) -> &[TreeNode] {
        &self.nodes[self.stages[t].clone()]
    }

    pub fn to_csv(&self, state_dim: usize, control_dim: usize) -> CsvDoc {
        let noise_dim = self.nodes.iter().map(|n| n.noise.len()).max().unwrap_or(0);
        let mut header: Vec<String> = ["node_id", "stage", "parent_id", "prob"].iter().map(|s| s.to_string()).collect();
        header.extend(column_names("noise", noise_dim));
        header.extend(column_names("state", state_dim));
        header.extend(column_names("control", control_dim));
        let mut doc = CsvDoc::with_header("tree/v1", header);
        for (id, n) in self.nodes.iter().enumerate() {
            let mut row = vec![
                id.to_string(),
                n.stage.to_string(),
                n.parent.map(|p| p.to_string()).unwrap_or_default(),
                fmt_f64(n.prob),
            ];
            row.extend((0..noise_dim).map(|i| n.noise.get(i).map(|v| fmt_f64(*v)).unwrap_or_default()));
            row.extend((0..state_dim).map(|i| n.state.get(i).map(|v| fmt_f64(*v)).unwrap_or_default()));
            row.extend((0..control_dim).map(|i| n.control.get(i).map(|v| fmt_f64(*v)).unwrap_or_default()));
            doc.row(&row);
        }
        doc
    }
}

const LLOYD_ITERS: usize = 50;
const LLOYD_TOL: f64 = 1e-9;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Splits `members` into `k` contiguous blocks of near-equal size after
/// sorting along the coordinate of largest variance (ties by index).
fn balanced_split(points: &[&[f64]], members: &[usize], k: usize) -> Vec<Vec<usize>> {
    let dim = points.first().map_or(0, |p| p.len());
    let m = members.len() as f64;
    let mut best = 0;
    let mut best_var = -1.0;
    for c in 0..dim {
        let mean = members.iter().map(|&i| points[i][c]).sum::<f64>() / m;
        let var = members.iter().map(|&i| (points[i][c] - mean).powi(2)).sum::<f64>();
        if var > best_var {
            best_var = var;
            best = c;
        }
    }
    let mut order = members.to_vec();
    order.sort_by(|&a, &b| points[a][best].total_cmp(&points[b][best]).then(a.cmp(&b)));
    let base = order.len() / k;
    let extra = order.len() % k;
    let mut cells = Vec::with_capacity(k);
    let mut pos = 0;
    for c in 0..k {
        let size = base + usize::from(c < extra);
        cells.push(order[pos..pos + size].to_vec());
        pos += size;
    }
    cells
}

/// Lloyd iterations on `points[members]` into `k` cells, each holding at
/// least `min_size` members. Seeding picks distinct points at random; empty
/// cells are refilled by halving the largest cell; a result violating
/// `min_size` is replaced by a balanced split.
fn quantize(points: &[&[f64]], members: &[usize], k: usize, min_size: usize, seed: u64) -> Vec<Vec<usize>> {
    if k <= 1 {
        return vec![members.to_vec()];
    }
    let dim = points[members[0]].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut pool = members.to_vec();
    while centroids.len() < k && !pool.is_empty() {
        let i = pool.swap_remove(rng.gen_range(0..pool.len()));
        if centroids.iter().all(|c| c.as_slice() != points[i]) {
            centroids.push(points[i].to_vec());
        }
    }
    if centroids.len() < k {
        // fewer distinct values than cells
        return balanced_split(points, members, k);
    }
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); k];
    for _ in 0..LLOYD_ITERS {
        for c in cells.iter_mut() {
            c.clear();
        }
        for &i in members {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cen) in centroids.iter().enumerate() {
                let d = sq_dist(points[i], cen);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            cells[best].push(i);
        }
        while let Some(empty) = cells.iter().position(Vec::is_empty) {
            let largest = (0..k).max_by_key(|&c| (cells[c].len(), std::cmp::Reverse(c))).unwrap_or(0);
            if cells[largest].len() < 2 {
                break;
            }
            let halves = balanced_split(points, &cells[largest], 2);
            cells[largest] = halves[0].clone();
            cells[empty] = halves[1].clone();
        }
        let mut moved: f64 = 0.0;
        for (c, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; dim];
            for &i in cell {
                for (m, v) in mean.iter_mut().zip(points[i]) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= cell.len() as f64;
            }
            moved = moved.max(sq_dist(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }
        if moved < LLOYD_TOL {
            break;
        }
    }
    if cells.iter().any(|c| c.len() < min_size.max(1)) {
        return balanced_split(points, members, k);
    }
    cells
}

fn centroid(points: &[&[f64]], cell: &[usize]) -> Vec<f64> {
    let dim = points[cell[0]].len();
    let mut mean = vec![0.0; dim];
    for &i in cell {
        for (m, v) in mean.iter_mut().zip(points[i]) {
            *m += v;
        }
    }
    mean.iter().map(|m| m / cell.len() as f64).collect()
}

/// Builds the tree stage by stage. Within a stage nodes are independent;
/// each node's quantizer is seeded from `seed` and its id.
pub fn build_tree(scenarios: &ScenarioSet, schedule: &BranchingSchedule, seed: u64) -> Result<ScenarioTree> {
    let n = scenarios.len();
    let horizon = scenarios.horizon();
    let counts = schedule.node_counts(horizon, n);
    // minimum cell size at stage t so that later splits stay feasible
    let last_split = counts.iter().rposition(|&c| c < n);
    let min_size: Vec<usize> = (0..=horizon)
        .map(|t| match last_split {
            Some(s) if t < s => (t + 1..=s).map(|u| schedule.factor(u)).product(),
            _ => 1,
        })
        .collect();
    if let Some(s) = last_split {
        if counts[s] > n {
            return Err(Error::invalid(format!("schedule needs {} scenarios at stage {s}, have {n}", counts[s])));
        }
    }

    let points_at = |t: usize| -> Vec<&[f64]> { (0..n).map(|k| scenarios.get(k, t)).collect() };
    let split = |t: usize, members: &[usize], node_id: usize, points: &[&[f64]]| -> Vec<Vec<usize>> {
        if counts[t] >= n {
            members.iter().map(|&k| vec![k]).collect()
        } else {
            let k = schedule.factor(t);
            quantize(points, members, k, min_size[t], seed ^ (node_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ t as u64)
        }
    };

    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut stages = Vec::with_capacity(horizon + 1);
    let all: Vec<usize> = (0..n).collect();
    let points = points_at(0);
    for cell in split(0, &all, usize::MAX, &points) {
        nodes.push(TreeNode {
            stage: 0,
            parent: None,
            children: Vec::new(),
            noise: centroid(&points, &cell),
            prob: cell.len() as f64 / n as f64,
            scenarios: cell,
            state: Vec::new(),
            control: Vec::new(),
        });
    }
    stages.push(0..nodes.len());
    for t in 1..=horizon {
        let points = points_at(t);
        let parents = stages[t - 1].clone();
        let splits: Vec<Vec<Vec<usize>>> = parents
            .clone()
            .into_par_iter()
            .map(|p| split(t, &nodes[p].scenarios, p, &points))
            .collect();
        let start = nodes.len();
        for (p, cells) in parents.zip(splits) {
            let parent_prob = nodes[p].prob;
            let parent_count = nodes[p].scenarios.len() as f64;
            for cell in cells {
                let id = nodes.len();
                nodes[p].children.push(id);
                nodes.push(TreeNode {
                    stage: t,
                    parent: Some(p),
                    children: Vec::new(),
                    noise: centroid(&points, &cell),
                    prob: parent_prob * cell.len() as f64 / parent_count,
                    scenarios: cell,
                    state: Vec::new(),
                    control: Vec::new(),
                });
            }
        }
        stages.push(start..nodes.len());
    }
    Ok(ScenarioTree { nodes, stages })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeSolveConfig {
    pub initial: InitialControls,
    /// First spectral step; later steps are Barzilai-Borwein.
    pub step: f64,
    pub max_iters: usize,
    /// Stop when the gradient-map residual is at most this.
    pub tolerance: f64,
    pub max_backtracks: usize,
}

impl Default for TreeSolveConfig {
    fn default() -> Self {
        TreeSolveConfig {
            initial: InitialControls::Midpoint,
            step: 0.05,
            max_iters: 2000,
            tolerance: 1e-6,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeSolution {
    pub tree: ScenarioTree,
    pub cost: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Forward pass: fills states, returns the expected cost.
fn tree_forward<M: ProblemModel + ?Sized>(model: &M, tree: &mut ScenarioTree) -> f64 {
    let horizon = tree.horizon();
    let nx = model.dims().state;
    for id in tree.stages[0].clone() {
        tree.nodes[id].state = tree.nodes[id].noise.clone();
    }
    let mut cost = 0.0;
    let mut next = vec![0.0; nx];
    for t in 0..horizon {
        for id in tree.stages[t].clone() {
            let children = tree.nodes[id].children.clone();
            for c in children {
                let (x, u) = (&tree.nodes[id].state, &tree.nodes[id].control);
                let w = &tree.nodes[c].noise;
                model.dynamics(t, x, u, w, &mut next);
                cost += tree.nodes[c].prob * model.stage_cost(t, x, u, w);
                tree.nodes[c].state = next.clone();
            }
        }
    }
    for id in tree.stages[horizon].clone() {
        cost += tree.nodes[id].prob * model.final_cost(&tree.nodes[id].state);
    }
    cost
}

/// Probability-normalized gradient `dJ/du_nu / p_nu` of every non-leaf node
/// (flat, node order), via `lambda_nu = sum_c (p_c / p_nu)(L_x + f_x^T lambda_c)`.
fn tree_gradient<M: ProblemModel + ?Sized>(model: &M, tree: &ScenarioTree) -> Vec<f64> {
    let dims = model.dims();
    let horizon = tree.horizon();
    let (nx, nu) = (dims.state, dims.control);
    let mut lambda = vec![0.0; tree.nodes.len() * nx];
    for id in tree.stages[horizon].clone() {
        model.final_cost_dx(&tree.nodes[id].state, &mut lambda[id * nx..(id + 1) * nx]);
    }
    let decisions = tree.stages[horizon].start;
    let mut grad = vec![0.0; decisions * nu];
    for t in (0..horizon).rev() {
        let range = tree.stages[t].clone();
        let per: Vec<(Vec<f64>, Vec<f64>)> = range
            .clone()
            .into_par_iter()
            .map_init(
                || StageJet::new(dims),
                |jet, id| {
                    let node = &tree.nodes[id];
                    let mut lx = vec![0.0; nx];
                    let mut gu = vec![0.0; nu];
                    let mut ax = vec![0.0; nx];
                    let mut au = vec![0.0; nu];
                    for &c in &node.children {
                        let child = &tree.nodes[c];
                        model.stage_jet(t, &node.state, &node.control, &child.noise, jet);
                        let lc = &lambda[c * nx..(c + 1) * nx];
                        ax.copy_from_slice(&jet.l_x);
                        jet.add_fx_transpose(lc, &mut ax);
                        au.copy_from_slice(&jet.l_u);
                        jet.add_fu_transpose(lc, &mut au);
                        let r = child.prob / node.prob;
                        for (s, a) in lx.iter_mut().zip(&ax) {
                            *s += r * a;
                        }
                        for (s, a) in gu.iter_mut().zip(&au) {
                            *s += r * a;
                        }
                    }
                    (lx, gu)
                },
            )
            .collect();
        for (id, (lx, gu)) in range.zip(per) {
            lambda[id * nx..(id + 1) * nx].copy_from_slice(&lx);
            grad[id * nu..(id + 1) * nu].copy_from_slice(&gu);
        }
    }
    grad
}

fn set_controls(tree: &mut ScenarioTree, controls: &[f64], nu: usize) {
    for (id, row) in controls.chunks(nu).enumerate() {
        tree.nodes[id].control = row.to_vec();
    }
}

fn project_controls<M: ProblemModel + ?Sized>(model: &M, tree: &ScenarioTree, v: &mut [f64], nu: usize) {
    for (id, row) in v.chunks_mut(nu).enumerate() {
        model.control_box(tree.nodes[id].stage).project_rows(row);
    }
}

/// Spectral projected gradient in the probability-weighted metric: the
/// search direction is `proj(u - alpha g) - u` with `g` the p-scaled
/// gradient and `alpha` the Barzilai-Borwein step, accepted by a
/// nonmonotone Armijo backtracking over the last few costs.
pub fn solve_tree<M: ProblemModel + ?Sized>(model: &M, tree: &ScenarioTree, config: &TreeSolveConfig) -> Result<TreeSolution> {
    const MEMORY: usize = 10;
    const ARMIJO: f64 = 1e-4;
    const ALPHA_MIN: f64 = 1e-10;
    const ALPHA_MAX: f64 = 1e10;

    let dims = model.dims();
    let horizon = model.horizon();
    check_dim(horizon, tree.horizon())?;
    if !(config.step > 0.0) {
        return Err(Error::invalid("tree step size must be positive"));
    }
    let nu = dims.control;
    let mut tree = tree.clone();
    let decisions = tree.stages[horizon].start;
    for node in tree.nodes.iter() {
        check_dim(if node.stage == 0 { dims.state } else { dims.noise }, node.noise.len())?;
    }
    let weights: Vec<f64> = (0..decisions).map(|id| tree.nodes[id].prob).collect();
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        a.chunks(nu)
            .zip(b.chunks(nu))
            .zip(&weights)
            .map(|((x, y), p)| p * x.iter().zip(y).map(|(s, t)| s * t).sum::<f64>())
            .sum()
    };
    let mut u: Vec<f64> = (0..decisions)
        .flat_map(|id| config.initial.point(model.control_box(tree.nodes[id].stage)))
        .collect();
    set_controls(&mut tree, &u, nu);
    let mut cost = tree_forward(model, &mut tree);
    if !cost.is_finite() {
        return Err(Error::Numerical("tree solve: non-finite initial cost".into()));
    }
    let mut grad = tree_gradient(model, &tree);
    let mut history = vec![cost];
    let mut alpha = config.step;
    let mut residual;
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let mut probe: Vec<f64> = u.iter().zip(&grad).map(|(a, g)| a - g).collect();
        project_controls(model, &tree, &mut probe, nu);
        let diff: Vec<f64> = probe.iter().zip(&u).map(|(a, b)| a - b).collect();
        residual = dot(&diff, &diff).sqrt();
        if !residual.is_finite() {
            return Err(Error::Numerical(format!("tree solve: non-finite gradient at iteration {iterations}")));
        }
        if residual <= config.tolerance {
            converged = true;
            break;
        }
        if iterations >= config.max_iters {
            break;
        }
        iterations += 1;

        let mut target: Vec<f64> = u.iter().zip(&grad).map(|(a, g)| a - alpha * g).collect();
        project_controls(model, &tree, &mut target, nu);
        let d: Vec<f64> = target.iter().zip(&u).map(|(a, b)| a - b).collect();
        let slope = dot(&grad, &d);
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            let cand: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + lambda * b).collect();
            let mut trial = tree.clone();
            set_controls(&mut trial, &cand, nu);
            let c = tree_forward(model, &mut trial);
            if c.is_finite() && c <= reference + ARMIJO * lambda * slope {
                accepted = Some((cand, trial, c));
                break;
            }
            lambda *= 0.5;
        }
        let Some((cand, trial, c)) = accepted else {
            log::debug!("tree solve: line search failed at iteration {iterations}, residual {residual:.3e}");
            break;
        };
        let new_grad = tree_gradient(model, &trial);
        let s: Vec<f64> = cand.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        alpha = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(ALPHA_MIN, ALPHA_MAX)
        } else {
            ALPHA_MAX.min(alpha * 4.0)
        };
        u = cand;
        tree = trial;
        cost = c;
        grad = new_grad;
        history.push(cost);
        if history.len() > MEMORY {
            history.remove(0);
        }
    }
    Ok(TreeSolution {
        tree,
        cost,
        iterations,
        residual,
        converged,
    })
}

/// Stage-`t` node values `(x, u, p)` as a weighted scatter.
pub fn node_scatter(tree: &ScenarioTree, stage: usize) -> Result<Scatter> {
    let nodes = tree.stage_nodes(stage);
    let state_dim = nodes.first().map_or(0, |n| n.state.len());
    let control_dim = nodes.first().map_or(0, |n| n.control.len());
    if nodes.iter().any(|n| n.control.is_empty()) {
        return Err(Error::invalid(format!("stage {stage} has no solved controls")));
    }
    Scatter::new(
        state_dim,
        control_dim,
        nodes.iter().flat_map(|n| n.state.iter().copied()).collect(),
        nodes.iter().flat_map(|n| n.control.iter().copied()).collect(),
        nodes.iter().map(|n| n.prob).collect(),
    )
}
