//! Discretized stochastic dynamic programming on a fixed scalar state grid.
//!
//! Backward recursion from `V_T = K`: at every grid point the stage control
//! minimizes the sample mean over the training scenarios of
//! `L_t(x, u, w) + V_{t+1}(f_t(x, u, w))`, where `V_{t+1}` is interpolated
//! from the next stage's grid values. The minimizing controls form the
//! reference feedback policy.

use std::path::Path;

use rayon::prelude::*;

use crate::csvio::{fmt_f64, CsvDoc};
use crate::error::{check_dim, Error, Result};
use crate::interp::{GridFunction, InterpConfig};
use crate::model::{BoxSet, ProblemModel};
use crate::sampling::{Marginal, ScenarioSet};

/// Evenly spaced scalar grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl StateGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::invalid("state grids need at least 2 points"));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("bad grid range [{lo}, {hi}]")));
        }
        Ok(StateGrid { lo, hi, points })
    }

    pub fn nodes(&self) -> Vec<f64> {
        let n = self.points - 1;
        (0..self.points)
            .map(|i| {
                if i == n {
                    self.hi
                } else {
                    self.lo + (self.hi - self.lo) * i as f64 / n as f64
                }
            })
            .collect()
    }
}

/// Inner scalar minimization: uniform scan, then golden-section refinement
/// around the best scan point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSolver {
    pub scan_points: usize,
    pub tolerance: f64,
}

impl Default for InnerSolver {
    fn default() -> Self {
        InnerSolver {
            scan_points: 33,
            tolerance: 1e-6,
        }
    }
}

impl InnerSolver {
    /// Minimizes `f` over `[lo, hi]`; returns `(argmin, min)`.
    pub fn minimize(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
        if hi <= lo {
            return (lo, f(lo));
        }
        let m = self.scan_points.max(2);
        let step = (hi - lo) / (m - 1) as f64;
        let at = |j: usize| if j == m - 1 { hi } else { lo + step * j as f64 };
        let mut best_j = 0;
        let mut best_v = f64::INFINITY;
        for j in 0..m {
            let v = f(at(j));
            if v < best_v || (best_v.is_nan() && !v.is_nan()) {
                best_v = v;
                best_j = j;
            }
        }
        let mut a = at(best_j.saturating_sub(1));
        let mut b = at((best_j + 1).min(m - 1));
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while b - a > self.tolerance {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = f(d);
            }
        }
        let u = 0.5 * (a + b);
        let v = f(u);
        if v <= best_v {
            (u, v)
        } else {
            (at(best_j), best_v)
        }
    }
}

/// Grid values of one stage; `controls` is empty at the final stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BellmanStage {
    pub states: Vec<f64>,
    pub values: Vec<f64>,
    pub controls: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BellmanTable {
    pub stages: Vec<BellmanStage>,
}

impl BellmanTable {
    pub fn horizon(&self) -> usize {
        self.stages.len() - 1
    }

    /// Interpolated value function of stage `t`.
    pub fn value_function(&self, t: usize) -> Result<GridFunction> {
        let s = &self.stages[t];
        GridFunction::fit(&s.states, 1, &s.values, 1, InterpConfig::LINEAR)
    }

    pub fn to_csv(&self) -> CsvDoc {
        let mut doc = CsvDoc::new("bellman/v1", &["stage", "state", "value", "control"]);
        for (t, s) in self.stages.iter().enumerate() {
            for i in 0..s.states.len() {
                let control = s.controls.get(i).map(|u| fmt_f64(*u)).unwrap_or_default();
                doc.row(&[t.to_string(), fmt_f64(s.states[i]), fmt_f64(s.values[i]), control]);
            }
        }
        doc
    }
}

/// Per-stage feedback `u_t = clamp(phi_t(x_t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    pub grid: GridFunction,
    pub control_box: BoxSet,
}

impl FeedbackLaw {
    pub fn control_into(&self, x: &[f64], out: &mut [f64]) {
        self.grid.eval_into(x, out);
        self.control_box.project_rows(out);
    }
}

/// One feedback law per decision stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub laws: Vec<FeedbackLaw>,
}

impl Policy {
    /// Fits per-stage feedback laws to `(state, control)` samples;
    /// `states[t]` and `controls[t]` are flat row-major particle arrays.
    pub fn fit<M: ProblemModel + ?Sized>(
        model: &M,
        states: &[Vec<f64>],
        controls: &[Vec<f64>],
        config: InterpConfig,
    ) -> Result<Self> {
        let dims = model.dims();
        check_dim(model.horizon(), controls.len())?;
        let laws = (0..model.horizon())
            .map(|t| {
                Ok(FeedbackLaw {
                    grid: GridFunction::fit(&states[t], dims.state, &controls[t], dims.control, config)?,
                    control_box: model.control_box(t).clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Policy { laws })
    }

    pub fn horizon(&self) -> usize {
        self.laws.len()
    }

    pub fn control(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let law = &self.laws[t];
        let mut out = vec![0.0; law.grid.value_dim()];
        law.control_into(x, &mut out);
        out
    }

    /// Writes one grid CSV per stage, `stage_000.csv`, ... into `dir`;
    /// returns the written paths.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        for (t, law) in self.laws.iter().enumerate() {
            let p = dir.join(format!("stage_{t:03}.csv"));
            law.grid.to_csv().write(&p)?;
            paths.push(p);
        }
        Ok(paths)
    }

    pub fn read_dir<M: ProblemModel + ?Sized>(model: &M, dir: &Path) -> Result<Self> {
        let laws = (0..model.horizon())
            .map(|t| {
                Ok(FeedbackLaw {
                    grid: GridFunction::read_csv(&dir.join(format!("stage_{t:03}.csv")))?,
                    control_box: model.control_box(t).clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Policy { laws })
    }
}

/// Runs the backward recursion. `grids[t]` is the stage-`t` grid for
/// `t = 0..=T`; `interp` reconstructs both value functions and feedback.
pub fn solve_sdp<M: ProblemModel + ?Sized>(
    model: &M,
    scenarios: &ScenarioSet,
    grids: &[StateGrid],
    interp: InterpConfig,
    inner: InnerSolver,
) -> Result<(BellmanTable, Policy)> {
    let dims = model.dims();
    if dims.state != 1 || dims.control != 1 {
        return Err(Error::invalid(
            "dynamic programming is implemented for scalar state and control only",
        ));
    }
    let horizon = model.horizon();
    scenarios.check_shape(horizon, dims.state, dims.noise)?;
    check_dim(horizon + 1, grids.len())?;
    let n = scenarios.len();

    let mut stages: Vec<BellmanStage> = Vec::with_capacity(horizon + 1);
    let terminal = grids[horizon].nodes();
    let values = terminal.iter().map(|x| model.final_cost(&[*x])).collect();
    stages.push(BellmanStage {
        states: terminal,
        values,
        controls: Vec::new(),
    });

    for t in (0..horizon).rev() {
        let next = stages.last().expect("stage pushed above");
        let vf = GridFunction::fit(&next.states, 1, &next.values, 1, interp)?;
        let bx = model.control_box(t);
        let (lo, hi) = (bx.lo()[0], bx.hi()[0]);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("stage {t}: control bounds must be finite")));
        }
        let nodes = grids[t].nodes();
        let solved: Vec<(f64, f64)> = nodes
            .par_iter()
            .map(|&x| {
                let objective = |u: f64| {
                    let mut acc = 0.0;
                    let mut nx = [0.0];
                    let mut v = [0.0];
                    for k in 0..n {
                        let w = scenarios.get(k, t + 1);
                        model.dynamics(t, &[x], &[u], w, &mut nx);
                        vf.eval_into(&nx, &mut v);
                        acc += model.stage_cost(t, &[x], &[u], w) + v[0];
                    }
                    acc / n as f64
                };
                inner.minimize(lo, hi, objective)
            })
            .collect();
        if let Some(i) = solved.iter().position(|(_, v)| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "stage {t}: non-finite Bellman value at state {}",
                nodes[i]
            )));
        }
        let (controls, values) = solved.into_iter().unzip();
        stages.push(BellmanStage {
            states: nodes,
            values,
            controls,
        });
    }
    stages.reverse();
    let table = BellmanTable { stages };
    let laws = (0..horizon)
        .map(|t| {
            let s = &table.stages[t];
            Ok(FeedbackLaw {
                grid: GridFunction::fit(&s.states, 1, &s.controls, 1, interp)?,
                control_box: model.control_box(t).clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((table, Policy { laws }))
}

/// Same grid on every stage.
pub fn uniform_grids(horizon: usize, grid: StateGrid) -> Vec<StateGrid> {
    vec![grid; horizon + 1]
}

/// `E[V_0(x_0)]` for the interpolated stage-0 value function. Uniform laws
/// are integrated by the trapezoid rule over the grid nodes inside the
/// support (support ends evaluated by interpolation).
pub fn expected_initial_cost(table: &BellmanTable, law: &Marginal) -> Result<f64> {
    let s = table
        .stages
        .first()
        .filter(|s| !s.states.is_empty())
        .ok_or_else(|| Error::invalid("empty stage-0 grid"))?;
    let vf = GridFunction::fit(&s.states, 1, &s.values, 1, InterpConfig::LINEAR)?;
    let v = |x: f64| {
        let mut out = [0.0];
        vf.eval_into(&[x], &mut out);
        out[0]
    };
    match law.atoms() {
        Some(atoms) => Ok(atoms.iter().map(|(x, p)| p * v(*x)).sum()),
        None => {
            let (lo, hi) = law.support();
            if hi <= lo {
                return Ok(v(lo));
            }
            let mut xs = vec![lo];
            xs.extend(s.states.iter().copied().filter(|x| *x > lo && *x < hi));
            xs.push(hi);
            let integral: f64 = xs.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (v(w[0]) + v(w[1]))).sum();
            Ok(integral / (hi - lo))
        }
    }
}
