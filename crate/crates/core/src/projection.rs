//! Conditional expectations and measurable projections on finite sample
//! spaces.
//!
//! An information structure on a finite space is a partition of its atoms;
//! a random variable is measurable with respect to it when it is constant
//! on every cell. Conditional expectation is the orthogonal projection onto
//! such variables in the probability-weighted inner product, and projecting
//! onto cell-constant variables that also satisfy cell-constant box
//! constraints reduces to clamping the conditional expectation.

use crate::error::{check_dim, Error, Result};
use crate::model::{BoxSet, ProblemModel, StageJet};

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteProbabilitySpace {
    probs: Vec<f64>,
}

impl FiniteProbabilitySpace {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("probability space needs at least one atom"));
        }
        if probs.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::invalid("atom probabilities must be positive"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(FiniteProbabilitySpace { probs })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("probability space needs at least one atom"));
        }
        Ok(FiniteProbabilitySpace {
            probs: vec![1.0 / m as f64; m],
        })
    }

    pub fn atoms(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `E[<a, b>]`.
    pub fn inner(&self, a: &SimpleRandomVariable, b: &SimpleRandomVariable) -> f64 {
        (0..self.atoms())
            .map(|i| {
                let dot: f64 = a.at(i).iter().zip(b.at(i)).map(|(x, y)| x * y).sum();
                self.probs[i] * dot
            })
            .sum()
    }

    pub fn norm(&self, a: &SimpleRandomVariable) -> f64 {
        self.inner(a, a).sqrt()
    }
}

/// Assignment of every atom to one cell; cells are numbered `0..cells`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    cell_of: Vec<usize>,
    cells: usize,
}

impl Partition {
    pub fn new(cell_of: Vec<usize>) -> Result<Self> {
        let cells = cell_of.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; cells];
        for &c in &cell_of {
            seen[c] = true;
        }
        if cell_of.is_empty() || seen.iter().any(|s| !s) {
            return Err(Error::invalid("partition cells must be nonempty and numbered contiguously"));
        }
        Ok(Partition { cell_of, cells })
    }

    /// Groups atoms by equal keys; cells are numbered by first appearance.
    pub fn from_keys<K: PartialEq>(keys: &[K]) -> Result<Self> {
        let mut reps: Vec<&K> = Vec::new();
        let mut cell_of = Vec::with_capacity(keys.len());
        for k in keys {
            let c = match reps.iter().position(|r| *r == k) {
                Some(c) => c,
                None => {
                    reps.push(k);
                    reps.len() - 1
                }
            };
            cell_of.push(c);
        }
        Partition::new(cell_of)
    }

    pub fn singletons(m: usize) -> Result<Self> {
        Partition::new((0..m).collect())
    }

    pub fn trivial(m: usize) -> Result<Self> {
        Partition::new(vec![0; m])
    }

    pub fn atoms(&self) -> usize {
        self.cell_of.len()
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn cell_of(&self, atom: usize) -> usize {
        self.cell_of[atom]
    }

    /// True when every cell of `self` lies inside a cell of `coarse`.
    pub fn refines(&self, coarse: &Partition) -> bool {
        if self.atoms() != coarse.atoms() {
            return false;
        }
        let mut image = vec![None; self.cells];
        for (a, &c) in self.cell_of.iter().enumerate() {
            match image[c] {
                None => image[c] = Some(coarse.cell_of[a]),
                Some(d) if d != coarse.cell_of[a] => return false,
                _ => {}
            }
        }
        true
    }
}

/// Vector-valued random variable on a finite space, stored atom-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleRandomVariable {
    dim: usize,
    values: Vec<f64>,
}

impl SimpleRandomVariable {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::invalid("values must be a whole number of vectors"));
        }
        Ok(SimpleRandomVariable { dim, values })
    }

    pub fn scalar(values: Vec<f64>) -> Self {
        SimpleRandomVariable { dim: 1, values }
    }

    pub fn atoms(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, atom: usize) -> &[f64] {
        &self.values[atom * self.dim..(atom + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_measurable(&self, part: &Partition) -> bool {
        let mut rep: Vec<Option<usize>> = vec![None; part.cells()];
        (0..self.atoms()).all(|a| {
            let c = part.cell_of(a);
            match rep[c] {
                None => {
                    rep[c] = Some(a);
                    true
                }
                Some(r) => self.at(r) == self.at(a),
            }
        })
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        SimpleRandomVariable {
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        SimpleRandomVariable {
            dim: self.dim,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }
}

fn check_compat(space: &FiniteProbabilitySpace, v: &SimpleRandomVariable, part: &Partition) -> Result<()> {
    check_dim(space.atoms(), v.atoms())?;
    check_dim(space.atoms(), part.atoms())
}

/// Per-cell probability-weighted means, one vector per cell.
fn cell_means(space: &FiniteProbabilitySpace, v: &SimpleRandomVariable, part: &Partition) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; v.dim()]; part.cells()];
    let mut mass = vec![0.0; part.cells()];
    for a in 0..v.atoms() {
        let c = part.cell_of(a);
        let p = space.probs[a];
        mass[c] += p;
        for (s, x) in sums[c].iter_mut().zip(v.at(a)) {
            *s += p * x;
        }
    }
    for (s, m) in sums.iter_mut().zip(&mass) {
        s.iter_mut().for_each(|x| *x /= m);
    }
    sums
}

fn broadcast(part: &Partition, per_cell: &[Vec<f64>], dim: usize) -> SimpleRandomVariable {
    let mut values = Vec::with_capacity(part.atoms() * dim);
    for a in 0..part.atoms() {
        values.extend_from_slice(&per_cell[part.cell_of(a)]);
    }
    SimpleRandomVariable { dim, values }
}

/// `E[v | part]`: on each cell, the probability-weighted mean of `v`.
pub fn cond_expectation(
    space: &FiniteProbabilitySpace,
    v: &SimpleRandomVariable,
    part: &Partition,
) -> Result<SimpleRandomVariable> {
    check_compat(space, v, part)?;
    Ok(broadcast(part, &cell_means(space, v, part), v.dim()))
}

/// Projection of `v` onto cell-constant variables lying in the per-cell
/// boxes, computed as the box clamp of the conditional expectation.
pub fn project_measurable_box(
    space: &FiniteProbabilitySpace,
    v: &SimpleRandomVariable,
    part: &Partition,
    box_per_cell: &[BoxSet],
) -> Result<SimpleRandomVariable> {
    check_compat(space, v, part)?;
    check_dim(part.cells(), box_per_cell.len())?;
    let mut means = cell_means(space, v, part);
    for (m, bx) in means.iter_mut().zip(box_per_cell) {
        bx.project_in_place(m)?;
    }
    Ok(broadcast(part, &means, v.dim()))
}

/// Stationarity residual `|| v - P(v - E[grad | part]) ||` in the weighted
/// norm, where `P` is [`project_measurable_box`]. Zero exactly when `v` is
/// measurable, feasible, and satisfies the first-order condition.
pub fn kkt_residual(
    space: &FiniteProbabilitySpace,
    v: &SimpleRandomVariable,
    grad: &SimpleRandomVariable,
    part: &Partition,
    boxes: &[BoxSet],
) -> Result<f64> {
    check_dim(v.values.len(), grad.values.len())?;
    let g = cond_expectation(space, grad, part)?;
    let p = project_measurable_box(space, &v.sub(&g), part, boxes)?;
    Ok(space.norm(&v.sub(&p)))
}

/// Scenario tree on a finite space: atom `a` follows the noise path
/// `paths[a]`, and `F_t` groups atoms sharing `w_0..=w_t`.
pub fn natural_filtration(paths: &[Vec<Vec<f64>>]) -> Result<Vec<Partition>> {
    if paths.is_empty() {
        return Err(Error::invalid("need at least one path"));
    }
    let stages = paths[0].len();
    (0..stages)
        .map(|t| {
            let keys: Vec<Vec<u64>> = paths
                .iter()
                .map(|p| p[..=t].iter().flatten().map(|x| x.to_bits()).collect())
                .collect();
            Partition::from_keys(&keys)
        })
        .collect()
}

/// Per-atom states along every path for the given per-atom controls;
/// `controls[t]` holds the stage-`t` control of every atom.
fn rollout_all<M: ProblemModel + ?Sized>(
    model: &M,
    paths: &[Vec<Vec<f64>>],
    controls: &[SimpleRandomVariable],
) -> Vec<Vec<Vec<f64>>> {
    let horizon = model.horizon();
    let n = model.dims().state;
    paths
        .iter()
        .enumerate()
        .map(|(a, p)| {
            let mut xs = vec![p[0].clone()];
            for t in 0..horizon {
                let mut next = vec![0.0; n];
                model.dynamics(t, &xs[t], controls[t].at(a), &p[t + 1], &mut next);
                xs.push(next);
            }
            xs
        })
        .collect()
}

fn check_paths<M: ProblemModel + ?Sized>(
    model: &M,
    space: &FiniteProbabilitySpace,
    paths: &[Vec<Vec<f64>>],
    controls: &[SimpleRandomVariable],
) -> Result<()> {
    check_dim(space.atoms(), paths.len())?;
    check_dim(model.horizon(), controls.len())?;
    for p in paths {
        check_dim(model.horizon() + 1, p.len())?;
    }
    for c in controls {
        check_dim(space.atoms(), c.atoms())?;
        check_dim(model.dims().control, c.dim())?;
    }
    Ok(())
}

/// Path-wise (non-adapted) co-states: `lambda_T = K'(x_T)` and
/// `lambda_t = L_x + f_x^T lambda_{t+1}` on every atom independently.
/// Returns `lambda_0..=lambda_T`.
pub fn pathwise_costates<M: ProblemModel + ?Sized>(
    model: &M,
    space: &FiniteProbabilitySpace,
    paths: &[Vec<Vec<f64>>],
    controls: &[SimpleRandomVariable],
) -> Result<Vec<SimpleRandomVariable>> {
    check_paths(model, space, paths, controls)?;
    let horizon = model.horizon();
    let dims = model.dims();
    let states = rollout_all(model, paths, controls);
    let m = space.atoms();
    let mut out = vec![vec![0.0; m * dims.state]; horizon + 1];
    let mut jet = StageJet::new(dims);
    for a in 0..m {
        let mut lam = vec![0.0; dims.state];
        model.final_cost_dx(&states[a][horizon], &mut lam);
        out[horizon][a * dims.state..(a + 1) * dims.state].copy_from_slice(&lam);
        for t in (0..horizon).rev() {
            model.stage_jet(t, &states[a][t], controls[t].at(a), &paths[a][t + 1], &mut jet);
            let mut next = jet.l_x.clone();
            jet.add_fx_transpose(&lam, &mut next);
            lam = next;
            out[t][a * dims.state..(a + 1) * dims.state].copy_from_slice(&lam);
        }
    }
    Ok(out
        .into_iter()
        .map(|values| SimpleRandomVariable { dim: dims.state, values })
        .collect())
}

/// Adapted co-states: `Lambda_T = K'(x_T)` and
/// `Lambda_t = E[L_x + f_x^T Lambda_{t+1} | F_t]`, with `filtration[t] = F_t`.
pub fn adapted_costates<M: ProblemModel + ?Sized>(
    model: &M,
    space: &FiniteProbabilitySpace,
    paths: &[Vec<Vec<f64>>],
    filtration: &[Partition],
    controls: &[SimpleRandomVariable],
) -> Result<Vec<SimpleRandomVariable>> {
    check_paths(model, space, paths, controls)?;
    let horizon = model.horizon();
    check_dim(horizon + 1, filtration.len())?;
    let dims = model.dims();
    let states = rollout_all(model, paths, controls);
    let m = space.atoms();
    let mut out: Vec<SimpleRandomVariable> = Vec::with_capacity(horizon + 1);
    let mut terminal = vec![0.0; m * dims.state];
    for a in 0..m {
        model.final_cost_dx(&states[a][horizon], &mut terminal[a * dims.state..(a + 1) * dims.state]);
    }
    let mut next = cond_expectation(
        space,
        &SimpleRandomVariable { dim: dims.state, values: terminal },
        &filtration[horizon],
    )?;
    out.push(next.clone());
    let mut jet = StageJet::new(dims);
    for t in (0..horizon).rev() {
        let mut raw = vec![0.0; m * dims.state];
        for a in 0..m {
            model.stage_jet(t, &states[a][t], controls[t].at(a), &paths[a][t + 1], &mut jet);
            let slot = &mut raw[a * dims.state..(a + 1) * dims.state];
            slot.copy_from_slice(&jet.l_x);
            jet.add_fx_transpose(next.at(a), slot);
        }
        next = cond_expectation(
            space,
            &SimpleRandomVariable { dim: dims.state, values: raw },
            &filtration[t],
        )?;
        out.push(next.clone());
    }
    out.reverse();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn approx(a: &SimpleRandomVariable, b: &[f64], tol: f64) -> bool {
        a.values().iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn cond_expectation_examples() {
        let space = FiniteProbabilitySpace::uniform(3).unwrap();
        let v = SimpleRandomVariable::scalar(vec![1.0, 3.0, 5.0]);
        let part = Partition::new(vec![0, 0, 1]).unwrap();
        assert!(approx(&cond_expectation(&space, &v, &part).unwrap(), &[2.0, 2.0, 5.0], 1e-15));
        let single = Partition::singletons(3).unwrap();
        assert_eq!(cond_expectation(&space, &v, &single).unwrap(), v);
    }

    #[test]
    fn cond_expectation_matches_per_cell_quadratic_minimizer() {
        // brute force: minimize sum_{i in C} p_i (c - v_i)^2 over a scalar c
        // by bisection on the sign of its derivative, independently of the
        // closed form
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = rng.gen_range(1..=16);
            let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let space = FiniteProbabilitySpace::new(raw.iter().map(|p| p / total).collect()).unwrap();
            let cells = rng.gen_range(1..=m);
            let mut assign: Vec<usize> = (0..m).map(|i| if i < cells { i } else { rng.gen_range(0..cells) }).collect();
            assign.rotate_left(rng.gen_range(0..m));
            let part = Partition::from_keys(&assign).unwrap();
            let v = SimpleRandomVariable::scalar((0..m).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let ce = cond_expectation(&space, &v, &part).unwrap();
            for c in 0..part.cells() {
                let members: Vec<usize> = (0..m).filter(|a| part.cell_of(*a) == c).collect();
                let slope = |x: f64| members.iter().map(|&a| space.probs()[a] * (x - v.at(a)[0])).sum::<f64>();
                let (mut lo, mut hi) = (-3.0f64, 3.0f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if slope(mid) > 0.0 { hi = mid } else { lo = mid }
                }
                assert!((ce.at(members[0])[0] - 0.5 * (lo + hi)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cond_expectation_operator_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = rng.gen_range(2..=32);
            let space = FiniteProbabilitySpace::uniform(m).unwrap();
            let fine_keys: Vec<usize> = (0..m).map(|_| rng.gen_range(0..6)).collect();
            let fine = Partition::from_keys(&fine_keys).unwrap();
            let coarse = Partition::from_keys(&fine_keys.iter().map(|k| k / 3).collect::<Vec<_>>()).unwrap();
            assert!(fine.refines(&coarse));
            let a = SimpleRandomVariable::scalar((0..m).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let b = SimpleRandomVariable::scalar((0..m).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let ea = cond_expectation(&space, &a, &fine).unwrap();
            let eb = cond_expectation(&space, &b, &fine).unwrap();
            // idempotent
            assert!(approx(&cond_expectation(&space, &ea, &fine).unwrap(), ea.values(), 1e-14));
            // self-adjoint
            assert!((space.inner(&ea, &b) - space.inner(&a, &eb)).abs() < 1e-14);
            // non-expansive
            assert!(space.norm(&ea) <= space.norm(&a) + 1e-14);
            // tower
            let tower = cond_expectation(&space, &ea, &coarse).unwrap();
            let direct = cond_expectation(&space, &a, &coarse).unwrap();
            assert!(approx(&tower, direct.values(), 1e-14));
        }
    }

    #[test]
    fn measurable_box_projection_examples() {
        let space = FiniteProbabilitySpace::uniform(2).unwrap();
        let part = Partition::trivial(2).unwrap();
        let bx = vec![BoxSet::uniform(1, 0.0, 1.0).unwrap()];
        let p = project_measurable_box(&space, &SimpleRandomVariable::scalar(vec![2.0, -1.0]), &part, &bx).unwrap();
        assert_eq!(p.values(), &[0.5, 0.5]);
        let p = project_measurable_box(&space, &SimpleRandomVariable::scalar(vec![3.0, 5.0]), &part, &bx).unwrap();
        assert_eq!(p.values(), &[1.0, 1.0]);
        assert!(project_measurable_box(&space, &SimpleRandomVariable::scalar(vec![3.0, 5.0]), &part, &[]).is_err());
    }

    #[test]
    fn kkt_residual_cases() {
        let space = FiniteProbabilitySpace::uniform(4).unwrap();
        let part = Partition::new(vec![0, 0, 1, 1]).unwrap();
        let free = vec![BoxSet::unbounded(1), BoxSet::unbounded(1)];
        let a = SimpleRandomVariable::scalar(vec![1.0, 2.0, -1.0, 4.0]);
        // grad of 1/2 |v - a|^2 is v - a
        let v = cond_expectation(&space, &a, &part).unwrap();
        let r = kkt_residual(&space, &v, &v.sub(&a), &part, &free).unwrap();
        assert!(r < 1e-15);
        let off = v.add(&SimpleRandomVariable::scalar(vec![0.1; 4]));
        assert!(kkt_residual(&space, &off, &off.sub(&a), &part, &free).unwrap() > 0.0);
    }

    #[test]
    fn filtration_from_binary_paths() {
        let mut paths = Vec::new();
        for a in 0..8usize {
            paths.push(vec![
                vec![0.0],
                vec![(a >> 2 & 1) as f64],
                vec![(a >> 1 & 1) as f64],
                vec![(a & 1) as f64],
            ]);
        }
        let f = natural_filtration(&paths).unwrap();
        assert_eq!(f.iter().map(Partition::cells).collect::<Vec<_>>(), vec![1, 2, 4, 8]);
        for t in 1..4 {
            assert!(f[t].refines(&f[t - 1]));
        }
    }
}
