//! Small analytic problems used by the test-suites and for sanity runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{BoxSet, Dims, ProblemModel};

/// Scalar linear-quadratic system
/// `x' = x + u + w`, `L = (x^2 + u^2) / 2`, `K = x^2 / 2`.
#[derive(Debug, Clone)]
pub struct LinearQuadratic {
    horizon: usize,
    control_box: BoxSet,
}

impl LinearQuadratic {
    pub fn new(horizon: usize, control_box: BoxSet) -> Self {
        LinearQuadratic {
            horizon,
            control_box,
        }
    }

    pub fn unconstrained(horizon: usize) -> Self {
        Self::new(horizon, BoxSet::unbounded(1))
    }

    /// Riccati coefficients `P_0..=P_T` with `V_t(x) = P_t x^2 / 2` (plus a
    /// noise-dependent constant) and feedback gains `K_t`, `u_t = -K_t x_t`.
    pub fn riccati(&self) -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; self.horizon + 1];
        let mut k = vec![0.0; self.horizon];
        p[self.horizon] = 1.0;
        for t in (0..self.horizon).rev() {
            let next = p[t + 1];
            k[t] = next / (1.0 + next);
            p[t] = 1.0 + next - next * next / (1.0 + next);
        }
        (p, k)
    }
}

impl ProblemModel for LinearQuadratic {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn dims(&self) -> Dims {
        Dims {
            state: 1,
            control: 1,
            noise: 1,
        }
    }

    fn control_box(&self, _t: usize) -> &BoxSet {
        &self.control_box
    }

    fn dynamics(&self, _t: usize, x: &[f64], u: &[f64], w: &[f64], next: &mut [f64]) {
        next[0] = x[0] + u[0] + w[0];
    }

    fn dynamics_dx(&self, _t: usize, _x: &[f64], _u: &[f64], _w: &[f64], jac: &mut [f64]) {
        jac[0] = 1.0;
    }

    fn dynamics_du(&self, _t: usize, _x: &[f64], _u: &[f64], _w: &[f64], jac: &mut [f64]) {
        jac[0] = 1.0;
    }

    fn stage_cost(&self, _t: usize, x: &[f64], u: &[f64], _w: &[f64]) -> f64 {
        0.5 * (x[0] * x[0] + u[0] * u[0])
    }

    fn stage_cost_dx(&self, _t: usize, x: &[f64], _u: &[f64], _w: &[f64], grad: &mut [f64]) {
        grad[0] = x[0];
    }

    fn stage_cost_du(&self, _t: usize, _x: &[f64], u: &[f64], _w: &[f64], grad: &mut [f64]) {
        grad[0] = u[0];
    }

    fn final_cost(&self, x: &[f64]) -> f64 {
        0.5 * x[0] * x[0]
    }

    fn final_cost_dx(&self, x: &[f64], grad: &mut [f64]) {
        grad[0] = x[0];
    }
}

/// Randomly parameterised smooth scalar system:
///
/// ```text
/// x' = a x + b u + s sin(x) + q u^2 / 2 + w (1 + r x)
/// L  = l1 x^2 / 2 + l2 u^2 / 2 + l3 x u + l4 cos(x + w)
/// K  = k1 x^2 / 2 + k2 x^4 / 4
/// ```
#[derive(Debug, Clone)]
pub struct SmoothScalar {
    horizon: usize,
    coef: Vec<[f64; 10]>,
    final_coef: [f64; 2],
    control_box: BoxSet,
}

impl SmoothScalar {
    pub fn random(horizon: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coef = (0..horizon)
            .map(|_| {
                [
                    rng.gen_range(0.5..1.1),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(0.1..1.0),
                    rng.gen_range(0.1..1.0),
                    rng.gen_range(-0.2..0.2),
                    rng.gen_range(-0.5..0.5),
                    0.0,
                ]
            })
            .collect();
        Ok(SmoothScalar {
            horizon,
            coef,
            final_coef: [rng.gen_range(0.5..2.0), rng.gen_range(0.0..0.3)],
            control_box: BoxSet::uniform(1, -2.0, 2.0)?,
        })
    }
}

impl ProblemModel for SmoothScalar {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn dims(&self) -> Dims {
        Dims {
            state: 1,
            control: 1,
            noise: 1,
        }
    }

    fn control_box(&self, _t: usize) -> &BoxSet {
        &self.control_box
    }

    fn dynamics(&self, t: usize, x: &[f64], u: &[f64], w: &[f64], next: &mut [f64]) {
        let [a, b, s, q, r, ..] = self.coef[t];
        let (x, u, w) = (x[0], u[0], w[0]);
        next[0] = a * x + b * u + s * x.sin() + 0.5 * q * u * u + w * (1.0 + r * x);
    }

    fn dynamics_dx(&self, t: usize, x: &[f64], _u: &[f64], w: &[f64], jac: &mut [f64]) {
        let [a, _, s, _, r, ..] = self.coef[t];
        jac[0] = a + s * x[0].cos() + w[0] * r;
    }

    fn dynamics_du(&self, t: usize, _x: &[f64], u: &[f64], _w: &[f64], jac: &mut [f64]) {
        let [_, b, _, q, ..] = self.coef[t];
        jac[0] = b + q * u[0];
    }

    fn stage_cost(&self, t: usize, x: &[f64], u: &[f64], w: &[f64]) -> f64 {
        let [.., l1, l2, l3, l4, _] = self.coef[t];
        let (x, u, w) = (x[0], u[0], w[0]);
        0.5 * l1 * x * x + 0.5 * l2 * u * u + l3 * x * u + l4 * (x + w).cos()
    }

    fn stage_cost_dx(&self, t: usize, x: &[f64], u: &[f64], w: &[f64], grad: &mut [f64]) {
        let [.., l1, _, l3, l4, _] = self.coef[t];
        grad[0] = l1 * x[0] + l3 * u[0] - l4 * (x[0] + w[0]).sin();
    }

    fn stage_cost_du(&self, t: usize, x: &[f64], u: &[f64], _w: &[f64], grad: &mut [f64]) {
        let [.., l2, l3, _, _] = self.coef[t];
        grad[0] = l2 * u[0] + l3 * x[0];
    }

    fn final_cost(&self, x: &[f64]) -> f64 {
        let [k1, k2] = self.final_coef;
        0.5 * k1 * x[0].powi(2) + 0.25 * k2 * x[0].powi(4)
    }

    fn final_cost_dx(&self, x: &[f64], grad: &mut [f64]) {
        let [k1, k2] = self.final_coef;
        grad[0] = k1 * x[0] + k2 * x[0].powi(3);
    }
}
