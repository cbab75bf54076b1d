//! Closed-loop policy simulation and feedback-deviation metrics.

use std::path::Path;

use rayon::prelude::*;

use crate::csvio::{fmt_f64, CsvDoc, CsvTable};
use crate::error::{check_dim, Error, Result};
use crate::interp::column_names;
use crate::model::ProblemModel;
use crate::sampling::ScenarioSet;
use crate::sdp::Policy;

/// Weighted `(state, control)` points of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    pub state_dim: usize,
    pub control_dim: usize,
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Scatter {
    pub fn new(state_dim: usize, control_dim: usize, states: Vec<f64>, controls: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_dim(weights.len() * state_dim, states.len())?;
        check_dim(weights.len() * control_dim, controls.len())?;
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("scatter weights must be finite and non-negative"));
        }
        Ok(Scatter {
            state_dim,
            control_dim,
            states,
            controls,
            weights,
        })
    }

    /// Equal weights `1 / n`.
    pub fn uniform(state_dim: usize, control_dim: usize, states: Vec<f64>, controls: Vec<f64>) -> Result<Self> {
        let n = controls.len() / control_dim.max(1);
        Scatter::new(state_dim, control_dim, states, controls, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn control(&self, i: usize) -> &[f64] {
        &self.controls[i * self.control_dim..(i + 1) * self.control_dim]
    }

    pub fn to_csv(&self) -> CsvDoc {
        let mut header = column_names("state", self.state_dim);
        header.extend(column_names("control", self.control_dim));
        header.push("weight".into());
        let mut doc = CsvDoc::with_header("scatter/v1", header);
        for i in 0..self.len() {
            let mut row: Vec<String> = self.state(i).iter().map(|v| fmt_f64(*v)).collect();
            row.extend(self.control(i).iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(self.weights[i]));
            doc.row(&row);
        }
        doc
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = CsvTable::read(path)?;
        let state_cols: Vec<usize> = table
            .header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("state"))
            .map(|(i, _)| i)
            .collect();
        let control_cols: Vec<usize> = table
            .header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("control"))
            .map(|(i, _)| i)
            .collect();
        let wcol = table.column("weight")?;
        if state_cols.is_empty() || control_cols.is_empty() {
            return Err(table.error(1, "scatter needs state and control columns"));
        }
        let parse = |line: usize, s: &str| {
            s.parse::<f64>()
                .map_err(|_| table.error(line, format!("bad number {s:?}")))
        };
        let mut states = Vec::new();
        let mut controls = Vec::new();
        let mut weights = Vec::new();
        for (line, row) in &table.rows {
            for &c in &state_cols {
                states.push(parse(*line, &row[c])?);
            }
            for &c in &control_cols {
                controls.push(parse(*line, &row[c])?);
            }
            weights.push(parse(*line, &row[wcol])?);
        }
        Scatter::new(state_cols.len(), control_cols.len(), states, controls, weights)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub costs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(N)`; 0 for a single scenario.
    pub std_err: f64,
    /// `T + 1` arrays of `N * state`.
    pub states: Vec<Vec<f64>>,
    /// `T` arrays of `N * control`.
    pub controls: Vec<Vec<f64>>,
}

impl SimulationReport {
    pub fn from_costs(costs: Vec<f64>, states: Vec<Vec<f64>>, controls: Vec<Vec<f64>>) -> Self {
        let n = costs.len() as f64;
        let mean = costs.iter().sum::<f64>() / n;
        let std_err = if costs.len() > 1 {
            let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        SimulationReport {
            costs,
            mean,
            std_err,
            states,
            controls,
        }
    }

    pub fn to_csv(&self) -> CsvDoc {
        let mut doc = CsvDoc::new("simulation/v1", &["scenario", "cost"]);
        for (k, c) in self.costs.iter().enumerate() {
            doc.row(&[k.to_string(), fmt_f64(*c)]);
        }
        doc.comment(&format!(
            "summary: n={} mean={} std_err={}",
            self.costs.len(),
            fmt_f64(self.mean),
            fmt_f64(self.std_err)
        ));
        doc
    }
}

/// Runs `policy` in closed loop along every scenario:
/// `x_0 = w_0`, `u_t = clamp(phi_t(x_t))`, `x_{t+1} = f_t(x_t, u_t, w_{t+1})`.
pub fn simulate_policy<M: ProblemModel + ?Sized>(model: &M, policy: &Policy, scenarios: &ScenarioSet) -> Result<SimulationReport> {
    let dims = model.dims();
    let horizon = model.horizon();
    check_dim(horizon, policy.horizon())?;
    scenarios.check_shape(horizon, dims.state, dims.noise)?;
    let (nx, nu) = (dims.state, dims.control);
    let paths: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..scenarios.len())
        .into_par_iter()
        .map(|k| {
            let mut xs = Vec::with_capacity((horizon + 1) * nx);
            let mut us = Vec::with_capacity(horizon * nu);
            xs.extend_from_slice(scenarios.get(k, 0));
            let mut u = vec![0.0; nu];
            let mut next = vec![0.0; nx];
            let mut cost = 0.0;
            for t in 0..horizon {
                let x = &xs[t * nx..(t + 1) * nx];
                policy.laws[t].control_into(x, &mut u);
                let w = scenarios.get(k, t + 1);
                model.dynamics(t, x, &u, w, &mut next);
                cost += model.stage_cost(t, x, &u, w);
                us.extend_from_slice(&u);
                xs.extend_from_slice(&next);
            }
            cost += model.final_cost(&xs[horizon * nx..]);
            (xs, us, cost)
        })
        .collect();
    let mut states = vec![Vec::with_capacity(scenarios.len() * nx); horizon + 1];
    let mut controls = vec![Vec::with_capacity(scenarios.len() * nu); horizon];
    let mut costs = Vec::with_capacity(scenarios.len());
    for (k, (xs, us, cost)) in paths.into_iter().enumerate() {
        if !cost.is_finite() || xs.iter().any(|v| !v.is_finite()) {
            let stage = xs.chunks(nx).position(|x| x.iter().any(|v| !v.is_finite())).unwrap_or(horizon);
            return Err(Error::NonFinite { scenario: k, stage });
        }
        for t in 0..=horizon {
            states[t].extend_from_slice(&xs[t * nx..(t + 1) * nx]);
        }
        for t in 0..horizon {
            controls[t].extend_from_slice(&us[t * nu..(t + 1) * nu]);
        }
        costs.push(cost);
    }
    Ok(SimulationReport::from_costs(costs, states, controls))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageComparison {
    pub stage: usize,
    pub count: usize,
    /// `None` flags an empty stage.
    pub rms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub stages: Vec<StageComparison>,
}

impl ComparisonReport {
    /// Largest RMS over stages `from..`; `None` if every such stage is empty.
    pub fn max_rms_from(&self, from: usize) -> Option<f64> {
        self.stages
            .iter()
            .filter(|s| s.stage >= from)
            .filter_map(|s| s.rms)
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }

    /// Root of the mean squared RMS over stages `from..`.
    pub fn pooled_rms_from(&self, from: usize) -> Option<f64> {
        let v: Vec<f64> = self.stages.iter().filter(|s| s.stage >= from).filter_map(|s| s.rms).collect();
        if v.is_empty() {
            None
        } else {
            Some((v.iter().map(|r| r * r).sum::<f64>() / v.len() as f64).sqrt())
        }
    }

    pub fn to_csv(&self) -> CsvDoc {
        let mut doc = CsvDoc::new("comparison/v1", &["stage", "count", "rms"]);
        for s in &self.stages {
            doc.row(&[s.stage.to_string(), s.count.to_string(), s.rms.map(fmt_f64).unwrap_or_default()]);
        }
        doc
    }
}

/// Per-stage `sqrt(sum p |u - phi(x)|^2 / sum p)` of each stage's scatter
/// against the reference feedback.
pub fn compare(scatter: &[Scatter], reference: &Policy) -> Result<ComparisonReport> {
    check_dim(reference.horizon(), scatter.len())?;
    let stages = scatter
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let total: f64 = s.weights.iter().sum();
            if s.is_empty() || total <= 0.0 {
                log::warn!("stage {t}: empty scatter");
                return Ok(StageComparison {
                    stage: t,
                    count: s.len(),
                    rms: None,
                });
            }
            let law = &reference.laws[t];
            check_dim(law.grid.site_dim(), s.state_dim)?;
            check_dim(law.grid.value_dim(), s.control_dim)?;
            let mut phi = vec![0.0; s.control_dim];
            let mut acc = 0.0;
            for i in 0..s.len() {
                law.control_into(s.state(i), &mut phi);
                let d2: f64 = s.control(i).iter().zip(&phi).map(|(a, b)| (a - b) * (a - b)).sum();
                acc += s.weights[i] * d2;
            }
            Ok(StageComparison {
                stage: t,
                count: s.len(),
                rms: Some((acc / total).sqrt()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport { stages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{GridFunction, InterpConfig};
    use crate::model::BoxSet;
    use crate::sampling::Role;
    use crate::sdp::FeedbackLaw;
    use crate::toy::LinearQuadratic;

    fn linear_policy(horizon: usize, slope: f64) -> Policy {
        let sites = vec![-2.0, 2.0];
        Policy {
            laws: (0..horizon)
                .map(|_| FeedbackLaw {
                    grid: GridFunction::fit(&sites, 1, &[-2.0 * slope, 2.0 * slope], 1, InterpConfig::LINEAR).unwrap(),
                    control_box: BoxSet::uniform(1, -1.0, 1.0).unwrap(),
                })
                .collect(),
        }
    }

    #[test]
    fn constant_policy_matches_open_loop() {
        let lq = LinearQuadratic::new(3, BoxSet::uniform(1, -1.0, 1.0).unwrap());
        let policy = linear_policy(3, 0.0);
        let sc = ScenarioSet::from_paths(vec![vec![vec![0.5], vec![0.0], vec![0.0], vec![0.0]]], Role::Test).unwrap();
        let rep = simulate_policy(&lq, &policy, &sc).unwrap();
        let path = sc.path(0);
        let (_, cost) = crate::model::path_rollout(&lq, &path, &[vec![0.0], vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(rep.costs[0], cost);
        assert_eq!(rep.std_err, 0.0);
    }

    #[test]
    fn mean_and_std_err() {
        let r = SimulationReport::from_costs(vec![1.0, 2.0, 3.0, 4.0], vec![], vec![]);
        assert_eq!(r.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((r.std_err - sd / 2.0).abs() < 1e-15);
    }

    #[test]
    fn reference_scatter_has_zero_rms_and_offset_gives_offset() {
        let policy = linear_policy(2, -0.3);
        let xs: Vec<f64> = (0..11).map(|i| -1.0 + 0.2 * i as f64).collect();
        let us: Vec<f64> = xs.iter().map(|x| -0.3 * x).collect();
        let exact = Scatter::uniform(1, 1, xs.clone(), us.clone()).unwrap();
        let rep = compare(&[exact.clone(), exact], &policy).unwrap();
        assert!(rep.stages.iter().all(|s| s.rms.unwrap() < 1e-15 && s.count == 11));
        let shifted = Scatter::uniform(1, 1, xs, us.iter().map(|u| u + 0.1).collect()).unwrap();
        let rep = compare(&[shifted.clone(), shifted], &policy).unwrap();
        for s in &rep.stages {
            assert!((s.rms.unwrap() - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_stage_is_flagged() {
        let policy = linear_policy(2, 0.0);
        let empty = Scatter::uniform(1, 1, vec![], vec![]).unwrap();
        let one = Scatter::uniform(1, 1, vec![0.0], vec![0.5]).unwrap();
        let rep = compare(&[empty, one], &policy).unwrap();
        assert_eq!(rep.stages[0].rms, None);
        assert_eq!(rep.stages[1].rms, Some(0.5));
        assert!(rep.to_csv().as_str().contains("\n0,0,\n"));
    }

    #[test]
    fn scatter_csv_round_trip() {
        let s = Scatter::new(1, 1, vec![0.1, 0.2], vec![0.3, 1.0 / 3.0], vec![0.25, 0.75]).unwrap();
        let dir = tempdir();
        let p = dir.join("s.csv");
        s.to_csv().write(&p).unwrap();
        assert_eq!(Scatter::read_csv(&p).unwrap(), s);
        std::fs::remove_dir_all(dir).unwrap();
    }

    fn tempdir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("stochctl-sim-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }
}
