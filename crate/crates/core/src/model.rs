//! Controlled system definition shared by every solver.
//!
//! A problem is a discrete-time system over stages `0..T`
//!
//! ```text
//! x_0 = w_0,    x_{t+1} = f_t(x_t, u_t, w_{t+1}),    u_t in [lo_t, hi_t]
//! ```
//!
//! with the cost `sum_t L_t(x_t, u_t, w_{t+1}) + K(x_T)`. The stage-`t`
//! control is chosen before `w_{t+1}` is revealed (decision-hazard).
//! Derivatives are supplied analytically by the implementor; [`fd`] holds a
//! finite-difference harness to check them.

use crate::error::{check_dim, Error, Result};

/// Axis-aligned box of admissible controls.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::invalid("box must have at least one component"));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if l.is_nan() || h.is_nan() || l > h {
                return Err(Error::invalid(format!(
                    "box component {i}: lower bound {l} exceeds upper bound {h}"
                )));
            }
        }
        Ok(BoxSet { lo, hi })
    }

    /// Same interval `[lo, hi]` on every one of `dim` components.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        BoxSet::new(vec![lo; dim], vec![hi; dim])
    }

    /// A box with infinite bounds, for unconstrained controls.
    pub fn unbounded(dim: usize) -> Self {
        BoxSet {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.dim()
            && v.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    /// Midpoint of the box; components with an infinite bound map to the
    /// finite bound, or to zero when both are infinite.
    pub fn midpoint(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| match (l.is_finite(), h.is_finite()) {
                (true, true) => 0.5 * (l + h),
                (true, false) => l,
                (false, true) => h,
                (false, false) => 0.0,
            })
            .collect()
    }

    /// Clamps `v` componentwise into the box.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = v.to_vec();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    pub fn project_in_place(&self, v: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), v.len())?;
        for ((x, l), h) in v.iter_mut().zip(&self.lo).zip(&self.hi) {
            *x = x.clamp(*l, *h);
        }
        Ok(())
    }

    /// Clamps a flat array of `v.len() / dim` stacked points.
    pub fn project_rows(&self, v: &mut [f64]) {
        let d = self.dim();
        debug_assert_eq!(v.len() % d, 0);
        for (i, x) in v.iter_mut().enumerate() {
            *x = x.clamp(self.lo[i % d], self.hi[i % d]);
        }
    }
}

/// Free-function form of [`BoxSet::project`].
pub fn project_box(v: &[f64], bx: &BoxSet) -> Result<Vec<f64>> {
    bx.project(v)
}

/// Validated smoothing parameter for the quadratic smoothing of `min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothing(f64);

impl Smoothing {
    pub const DEFAULT: Smoothing = Smoothing(0.01);

    pub fn new(c: f64) -> Result<Self> {
        if c > 0.0 && c.is_finite() {
            Ok(Smoothing(c))
        } else {
            Err(Error::invalid(format!(
                "smoothing parameter must be positive, got {c}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Continuously differentiable approximation of `min(x, y)`, within
    /// `c/4` of it everywhere.
    #[inline]
    pub fn min(self, x: f64, y: f64) -> f64 {
        let c = self.0;
        if y <= x - c {
            y
        } else if y >= x + c {
            x
        } else {
            let d = x - y;
            0.5 * (x + y) - d * d / (4.0 * c) - 0.25 * c
        }
    }

    /// Partial derivatives `(d/dx, d/dy)` of [`Smoothing::min`].
    #[inline]
    pub fn grad(self, x: f64, y: f64) -> (f64, f64) {
        let c = self.0;
        if y <= x - c {
            (0.0, 1.0)
        } else if y >= x + c {
            (1.0, 0.0)
        } else {
            let s = (x - y) / (2.0 * c);
            (0.5 - s, 0.5 + s)
        }
    }
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::DEFAULT
    }
}

pub fn smooth_min(x: f64, y: f64, c: f64) -> Result<f64> {
    Ok(Smoothing::new(c)?.min(x, y))
}

pub fn smooth_min_grad(x: f64, y: f64, c: f64) -> Result<(f64, f64)> {
    Ok(Smoothing::new(c)?.grad(x, y))
}

/// Vector dimensions of a problem. `noise` is the dimension of `w_t` for
/// `t >= 1`; the stage-0 noise is the initial state and has dimension `state`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub state: usize,
    pub control: usize,
    pub noise: usize,
}

/// Values and first derivatives of one stage transition, in reusable buffers.
///
/// Jacobians are row-major: `f_x[i * state + j] = d f_i / d x_j` and
/// `f_u[i * control + j] = d f_i / d u_j`.
#[derive(Debug, Clone)]
pub struct StageJet {
    pub next: Vec<f64>,
    pub f_x: Vec<f64>,
    pub f_u: Vec<f64>,
    pub cost: f64,
    pub l_x: Vec<f64>,
    pub l_u: Vec<f64>,
}

impl StageJet {
    pub fn new(dims: Dims) -> Self {
        StageJet {
            next: vec![0.0; dims.state],
            f_x: vec![0.0; dims.state * dims.state],
            f_u: vec![0.0; dims.state * dims.control],
            cost: 0.0,
            l_x: vec![0.0; dims.state],
            l_u: vec![0.0; dims.control],
        }
    }

    /// `out += f_x^T v`.
    pub fn add_fx_transpose(&self, v: &[f64], out: &mut [f64]) {
        let n = self.next.len();
        for (i, vi) in v.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.f_x[i * n + j] * vi;
            }
        }
    }

    /// `out += f_u^T v`.
    pub fn add_fu_transpose(&self, v: &[f64], out: &mut [f64]) {
        let m = out.len();
        for (i, vi) in v.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.f_u[i * m + j] * vi;
            }
        }
    }
}

/// A discrete-time stochastic optimal control problem.
///
/// Callbacks must be pure: the same arguments always give the same output.
/// Output slices have the lengths implied by [`ProblemModel::dims`].
pub trait ProblemModel: Send + Sync {
    /// Number of decision stages `T`; states are indexed `0..=T`.
    fn horizon(&self) -> usize;

    fn dims(&self) -> Dims;

    fn control_box(&self, t: usize) -> &BoxSet;

    fn dynamics(&self, t: usize, x: &[f64], u: &[f64], w: &[f64], next: &mut [f64]);

    fn dynamics_dx(&self, t: usize, x: &[f64], u: &[f64], w: &[f64], jac: &mut [f64]);

    fn dynamics_du(&self, t: usize, x: &[f64], u: &[f64], w: &[f64], jac: &mut [f64]);

    fn stage_cost(&self, t: usize, x: &[f64], u: &[f64], w: &[f64]) -> f64;

    fn stage_cost_dx(&self, t: usize, x: &[f64], u: &[f64], w: &[f64], grad: &mut [f64]);

    fn stage_cost_du(&self, t: usize, x: &[f64], u: &[f64], w: &[f64], grad: &mut [f64]);

    fn final_cost(&self, x: &[f64]) -> f64;

    fn final_cost_dx(&self, x: &[f64], grad: &mut [f64]);

    /// Evaluates everything at once. Models with shared subexpressions
    /// should override this.
    fn stage_jet(&self, t: usize, x: &[f64], u: &[f64], w: &[f64], jet: &mut StageJet) {
        self.dynamics(t, x, u, w, &mut jet.next);
        self.dynamics_dx(t, x, u, w, &mut jet.f_x);
        self.dynamics_du(t, x, u, w, &mut jet.f_u);
        jet.cost = self.stage_cost(t, x, u, w);
        self.stage_cost_dx(t, x, u, w, &mut jet.l_x);
        self.stage_cost_du(t, x, u, w, &mut jet.l_u);
    }
}

/// Forward pass along one noise path: returns the states `x_0..=x_T` and
/// the total cost. `path[t]` is `w_t` for `t = 0..=T`.
pub fn path_rollout<M: ProblemModel + ?Sized>(
    model: &M,
    path: &[&[f64]],
    controls: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, f64)> {
    let horizon = model.horizon();
    check_dim(horizon + 1, path.len())?;
    check_dim(horizon, controls.len())?;
    let dims = model.dims();
    check_dim(dims.state, path[0].len())?;
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(path[0].to_vec());
    let mut cost = 0.0;
    for t in 0..horizon {
        check_dim(dims.control, controls[t].len())?;
        let x = &states[t];
        let mut next = vec![0.0; dims.state];
        model.dynamics(t, x, &controls[t], path[t + 1], &mut next);
        cost += model.stage_cost(t, x, &controls[t], path[t + 1]);
        states.push(next);
    }
    cost += model.final_cost(&states[horizon]);
    Ok((states, cost))
}

/// Deterministic adjoint-state gradient of the path cost with respect to
/// every stage control.
///
/// Backward recursion `lambda_T = K'(x_T)`,
/// `lambda_t = L_x + f_x^T lambda_{t+1}`, and
/// `dJ/du_t = L_u + f_u^T lambda_{t+1}`.
/// Returns `(cost, gradient per stage, costates lambda_0..=lambda_T)`.
pub fn path_adjoint_gradient<M: ProblemModel + ?Sized>(
    model: &M,
    path: &[&[f64]],
    controls: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (states, cost) = path_rollout(model, path, controls)?;
    let horizon = model.horizon();
    let dims = model.dims();
    let mut jet = StageJet::new(dims);
    let mut costates = vec![vec![0.0; dims.state]; horizon + 1];
    let mut grads = vec![vec![0.0; dims.control]; horizon];
    model.final_cost_dx(&states[horizon], &mut costates[horizon]);
    for t in (0..horizon).rev() {
        model.stage_jet(t, &states[t], &controls[t], path[t + 1], &mut jet);
        let (head, tail) = costates.split_at_mut(t + 1);
        let next = &tail[0];
        let lam = &mut head[t];
        lam.copy_from_slice(&jet.l_x);
        jet.add_fx_transpose(next, lam);
        grads[t].copy_from_slice(&jet.l_u);
        jet.add_fu_transpose(next, &mut grads[t]);
    }
    Ok((cost, grads, costates))
}

/// Finite-difference checks of analytic derivatives (test support only).
pub mod fd {
    use super::ProblemModel;

    /// Relative error used throughout: `|a - b| / max(1, |a|, |b|)`.
    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
    }

    /// Central difference of a scalar function of a vector along coordinate `i`.
    pub fn central(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, step: f64) -> f64 {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[i] += step;
        m[i] -= step;
        (f(&p) - f(&m)) / (2.0 * step)
    }

    /// Largest relative error between the analytic derivatives of `model` and
    /// central differences with the given step, at the point `(t, x, u, w)`
    /// and at `x` for the final cost.
    pub fn max_derivative_error<M: ProblemModel + ?Sized>(
        model: &M,
        t: usize,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        step: f64,
    ) -> f64 {
        let dims = model.dims();
        let (n, m) = (dims.state, dims.control);
        let mut worst: f64 = 0.0;

        let mut fx = vec![0.0; n * n];
        let mut fu = vec![0.0; n * m];
        model.dynamics_dx(t, x, u, w, &mut fx);
        model.dynamics_du(t, x, u, w, &mut fu);
        for i in 0..n {
            let fi_x = |xx: &[f64]| {
                let mut out = vec![0.0; n];
                model.dynamics(t, xx, u, w, &mut out);
                out[i]
            };
            for j in 0..n {
                worst = worst.max(rel_err(fx[i * n + j], central(fi_x, x, j, step)));
            }
            let fi_u = |uu: &[f64]| {
                let mut out = vec![0.0; n];
                model.dynamics(t, x, uu, w, &mut out);
                out[i]
            };
            for j in 0..m {
                worst = worst.max(rel_err(fu[i * m + j], central(fi_u, u, j, step)));
            }
        }

        let mut lx = vec![0.0; n];
        let mut lu = vec![0.0; m];
        model.stage_cost_dx(t, x, u, w, &mut lx);
        model.stage_cost_du(t, x, u, w, &mut lu);
        for j in 0..n {
            let fd = central(|xx| model.stage_cost(t, xx, u, w), x, j, step);
            worst = worst.max(rel_err(lx[j], fd));
        }
        for j in 0..m {
            let fd = central(|uu| model.stage_cost(t, x, uu, w), u, j, step);
            worst = worst.max(rel_err(lu[j], fd));
        }

        let mut kx = vec![0.0; n];
        model.final_cost_dx(x, &mut kx);
        for j in 0..n {
            let fd = central(|xx| model.final_cost(xx), x, j, step);
            worst = worst.max(rel_err(kx[j], fd));
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smooth_min_branches() {
        assert_eq!(smooth_min(1.0, 0.5, 0.1).unwrap(), 0.5);
        assert!((smooth_min(1.0, 1.0, 0.1).unwrap() - 0.975).abs() < 1e-15);
        assert_eq!(smooth_min(0.5, 1.0, 0.1).unwrap(), 0.5);
    }

    #[test]
    fn smooth_min_grad_branches() {
        assert_eq!(smooth_min_grad(1.0, 0.5, 0.1).unwrap(), (0.0, 1.0));
        assert_eq!(smooth_min_grad(1.0, 1.0, 0.1).unwrap(), (0.5, 0.5));
        // both formulas agree at the seams
        let s = Smoothing::new(0.1).unwrap();
        let (x, c) = (1.0f64, 0.1f64);
        let mid_low = {
            let r = (x - (x - c)) / (2.0 * c);
            (0.5 - r, 0.5 + r)
        };
        assert!((mid_low.0 - 0.0).abs() < 1e-15 && (mid_low.1 - 1.0).abs() < 1e-15);
        assert_eq!(s.grad(x, x - c), (0.0, 1.0));
        let mid_high = {
            let r = (x - (x + c)) / (2.0 * c);
            (0.5 - r, 0.5 + r)
        };
        assert!((mid_high.0 - 1.0).abs() < 1e-15 && mid_high.1.abs() < 1e-15);
    }

    #[test]
    fn non_positive_smoothing_rejected() {
        assert!(smooth_min(1.0, 2.0, 0.0).is_err());
        assert!(smooth_min_grad(1.0, 2.0, -1.0).is_err());
        assert!(Smoothing::new(f64::NAN).is_err());
    }

    #[test]
    fn smooth_min_gap_is_quarter_c_at_diagonal() {
        for &c in &[1.0, 0.1, 1e-3, 1e-6] {
            let s = Smoothing::new(c).unwrap();
            assert!((s.min(0.3, 0.3) - (0.3 - c / 4.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn project_box_examples() {
        let bx = BoxSet::uniform(3, 0.0, 1.0).unwrap();
        assert_eq!(project_box(&[-0.5, 0.3, 1.7], &bx).unwrap(), vec![0.0, 0.3, 1.0]);
        assert_eq!(project_box(&[0.2, 0.3, 0.9], &bx).unwrap(), vec![0.2, 0.3, 0.9]);
        assert!(matches!(
            project_box(&[0.0, 1.0], &bx),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn box_rejects_inverted_bounds() {
        assert!(BoxSet::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxSet::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn projection_is_non_expansive_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let bx = BoxSet::new(vec![-1.0, 0.0, 2.0], vec![1.0, 0.5, 3.0]).unwrap();
        for _ in 0..100 {
            let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let pa = bx.project(&a).unwrap();
            let pb = bx.project(&b).unwrap();
            let dist = |p: &[f64], q: &[f64]| {
                p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            };
            assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-15);
        }
    }

    proptest! {
        #[test]
        fn smooth_min_within_quarter_c(x in -10.0..10.0f64, y in -10.0..10.0f64, c in 1e-4..2.0f64) {
            let s = Smoothing::new(c).unwrap();
            prop_assert!((s.min(x, y) - x.min(y)).abs() <= c / 4.0 + 1e-12);
        }

        #[test]
        fn smooth_min_grad_matches_fd(x in -3.0..3.0f64, y in -3.0..3.0f64, c in 0.05..1.0f64) {
            let s = Smoothing::new(c).unwrap();
            let h = 1e-6;
            // keep the difference stencil away from the seams
            prop_assume!(((x - y).abs() - c).abs() > 1e-4);
            let dx = (s.min(x + h, y) - s.min(x - h, y)) / (2.0 * h);
            let dy = (s.min(x, y + h) - s.min(x, y - h)) / (2.0 * h);
            let (gx, gy) = s.grad(x, y);
            prop_assert!((gx - dx).abs() < 1e-6);
            prop_assert!((gy - dy).abs() < 1e-6);
        }

        #[test]
        fn projection_idempotent(v in proptest::collection::vec(-5.0..5.0f64, 4)) {
            let bx = BoxSet::new(vec![-1.0, 0.0, 0.5, -2.0], vec![1.0, 0.0, 3.0, -1.0]).unwrap();
            let once = bx.project(&v).unwrap();
            prop_assert!(bx.contains(&once));
            prop_assert_eq!(bx.project(&once).unwrap(), once);
        }
    }
}
