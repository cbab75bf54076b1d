//! Particle projected-gradient method on an adaptive state mesh.
//!
//! Every scenario carries one state particle and one control particle per
//! stage. One iteration propagates the states forward, regresses the
//! co-state backward (each particle averaging over all sampled noises of
//! the next stage), forms gradient particles and takes a projected step.
//! The converged `(state, control)` cloud is regressed into a feedback law.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rayon::prelude::*;

use crate::csvio::{fmt_f64, CsvDoc};
use crate::error::{check_dim, Error, Result};
use crate::interp::{GridFunction, InterpConfig};
use crate::model::{BoxSet, ProblemModel, StageJet};
use crate::sampling::ScenarioSet;
use crate::sdp::Policy;
use crate::sim::Scatter;

/// Where the iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialControls {
    /// Box midpoints.
    Midpoint,
    /// Box lower bounds.
    Lower,
}

impl InitialControls {
    pub fn name(self) -> &'static str {
        match self {
            InitialControls::Midpoint => "midpoint",
            InitialControls::Lower => "lower",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(InitialControls::Midpoint),
            "lower" => Ok(InitialControls::Lower),
            _ => Err(Error::invalid(format!("unknown initial controls {s:?} (expected midpoint or lower)"))),
        }
    }

    /// Per-control starting value in `bx`; unbounded sides fall back to the
    /// midpoint rule.
    pub fn point(self, bx: &BoxSet) -> Vec<f64> {
        match self {
            InitialControls::Midpoint => bx.midpoint(),
            InitialControls::Lower => {
                let mid = bx.midpoint();
                bx.lo().iter().zip(mid).map(|(l, m)| if l.is_finite() { *l } else { m }).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgoConfig {
    pub initial: InitialControls,
    /// Step size `rho`.
    pub step: f64,
    /// Halve `rho` and retry whenever the sampled cost increases.
    pub halve_on_increase: bool,
    pub max_halvings: usize,
    pub max_iters: usize,
    /// Stop when the relative l2 change of the stacked controls is at most
    /// this.
    pub tolerance: f64,
    pub costate_interp: InterpConfig,
    pub feedback_interp: InterpConfig,
    /// Consecutive cost increases tolerated before aborting.
    pub divergence_window: usize,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            initial: InitialControls::Midpoint,
            step: 0.01,
            halve_on_increase: false,
            max_halvings: 20,
            max_iters: 500,
            tolerance: 1e-4,
            costate_interp: InterpConfig::KERNEL,
            feedback_interp: InterpConfig::LINEAR,
            divergence_window: 10,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.step)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.divergence_window == 0 {
            return Err(Error::invalid("divergence window must be at least 1"));
        }
        Ok(())
    }
}

/// Regressed co-state of one stage. The final stage uses `K_x` directly.
#[derive(Debug, Clone, PartialEq)]
pub enum CostateMap {
    Terminal,
    Fitted(GridFunction),
}

impl CostateMap {
    fn eval_into<M: ProblemModel + ?Sized>(&self, model: &M, x: &[f64], out: &mut [f64]) {
        match self {
            CostateMap::Terminal => model.final_cost_dx(x, out),
            CostateMap::Fitted(g) => g.eval_into(x, out),
        }
    }
}

/// Particle arrays, stage-indexed, each flat row-major over particles.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    /// `T + 1` arrays of `N * state`.
    pub states: Vec<Vec<f64>>,
    /// `T` arrays of `N * control`.
    pub controls: Vec<Vec<f64>>,
    /// `T + 1` arrays of `N * state`.
    pub costates: Vec<Vec<f64>>,
    /// `T + 1` maps; the last is [`CostateMap::Terminal`].
    pub costate_maps: Vec<CostateMap>,
}

impl TrajectoryBundle {
    /// Equal-weight `(state, control)` scatter of each decision stage.
    pub fn scatter(&self, state_dim: usize, control_dim: usize) -> Result<Vec<Scatter>> {
        self.controls
            .iter()
            .enumerate()
            .map(|(t, u)| Scatter::uniform(state_dim, control_dim, self.states[t].clone(), u.clone()))
            .collect()
    }

    /// Control particles per stage.
    pub fn control_counts(&self, control_dim: usize) -> Vec<usize> {
        self.controls.iter().map(|c| c.len() / control_dim).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationReport {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub control_change: f64,
    pub step: f64,
    pub seconds: f64,
}

/// Iteration log; `seconds` is written as 0 unless `timings` is set so that
/// reruns stay byte-identical.
pub fn iterations_csv(reports: &[IterationReport], timings: bool) -> CsvDoc {
    let mut doc = CsvDoc::new("iterations/v1", &["iter", "cost", "grad_norm", "control_change", "seconds"]);
    for r in reports {
        let secs = if timings { r.seconds } else { 0.0 };
        doc.row(&[
            r.iter.to_string(),
            fmt_f64(r.cost),
            fmt_f64(r.grad_norm),
            fmt_f64(r.control_change),
            fmt_f64(secs),
        ]);
    }
    doc
}

/// Distinct noise vectors of one stage with their sample frequencies, in
/// order of first occurrence. Averaging over these equals the plain sample
/// average over all `N` draws.
struct NoiseAtoms {
    values: Vec<f64>,
    weights: Vec<f64>,
    dim: usize,
}

impl NoiseAtoms {
    fn of_stage(scenarios: &ScenarioSet, t: usize) -> Self {
        let n = scenarios.len();
        let dim = scenarios.stage_dim(t);
        let mut values: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut index: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
        for k in 0..n {
            let w = scenarios.get(k, t);
            let key: Vec<u64> = w.iter().map(|v| v.to_bits()).collect();
            match index.get(&key) {
                Some(&i) => counts[i] += 1,
                None => {
                    index.insert(key, counts.len());
                    counts.push(1);
                    values.extend_from_slice(w);
                }
            }
        }
        let weights = counts.iter().map(|c| *c as f64 / n as f64).collect();
        NoiseAtoms { values, weights, dim }
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

fn check_controls<M: ProblemModel + ?Sized>(model: &M, n: usize, controls: &[Vec<f64>]) -> Result<()> {
    let dims = model.dims();
    check_dim(model.horizon(), controls.len())?;
    for c in controls {
        check_dim(n * dims.control, c.len())?;
    }
    Ok(())
}

/// `x_0^k = w_0^k`, `x_{t+1}^k = f_t(x_t^k, u_t^k, w_{t+1}^k)`.
pub fn forward_states<M: ProblemModel + ?Sized>(
    model: &M,
    scenarios: &ScenarioSet,
    controls: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    forward_with_cost(model, scenarios, controls).map(|(s, _)| s)
}

/// Forward pass plus the sample-mean path cost.
fn forward_with_cost<M: ProblemModel + ?Sized>(
    model: &M,
    scenarios: &ScenarioSet,
    controls: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, f64)> {
    let dims = model.dims();
    let horizon = model.horizon();
    scenarios.check_shape(horizon, dims.state, dims.noise)?;
    let n = scenarios.len();
    check_controls(model, n, controls)?;
    let (nx, nu) = (dims.state, dims.control);
    let paths: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut xs = Vec::with_capacity((horizon + 1) * nx);
            xs.extend_from_slice(scenarios.get(k, 0));
            let mut cost = 0.0;
            let mut next = vec![0.0; nx];
            for t in 0..horizon {
                let x = &xs[t * nx..(t + 1) * nx];
                let u = &controls[t][k * nu..(k + 1) * nu];
                let w = scenarios.get(k, t + 1);
                model.dynamics(t, x, u, w, &mut next);
                cost += model.stage_cost(t, x, u, w);
                xs.extend_from_slice(&next);
            }
            cost += model.final_cost(&xs[horizon * nx..]);
            (xs, cost)
        })
        .collect();
    let mut states = vec![Vec::with_capacity(n * nx); horizon + 1];
    let mut total = 0.0;
    for (k, (xs, cost)) in paths.iter().enumerate() {
        for (t, st) in states.iter_mut().enumerate() {
            let x = &xs[t * nx..(t + 1) * nx];
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { scenario: k, stage: t });
            }
            st.extend_from_slice(x);
        }
        if !cost.is_finite() {
            return Err(Error::NonFinite {
                scenario: k,
                stage: horizon,
            });
        }
        total += cost;
    }
    Ok((states, total / n as f64))
}

static DEGENERATE_WARNED: AtomicBool = AtomicBool::new(false);

fn fit_costate(sites: &[f64], state_dim: usize, values: &[f64], interp: InterpConfig, t: usize) -> Result<CostateMap> {
    let g = GridFunction::fit(sites, state_dim, values, state_dim, interp)?;
    if g.is_degenerate() && !DEGENERATE_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("stage {t}: all state particles coincide, co-state regression uses the mean value");
    }
    Ok(CostateMap::Fitted(g))
}

/// For stage `t`, per particle `k`: the noise averages of
/// `L_x + f_x^T Lhat_{t+1}(f)` and `L_u + f_u^T Lhat_{t+1}(f)`.
fn stage_sums<M: ProblemModel + ?Sized>(
    model: &M,
    t: usize,
    atoms: &NoiseAtoms,
    states: &[f64],
    controls: &[f64],
    next_map: &CostateMap,
) -> (Vec<f64>, Vec<f64>) {
    let dims = model.dims();
    let (nx, nu) = (dims.state, dims.control);
    let n = controls.len() / nu;
    let per: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map_init(
            || (StageJet::new(dims), vec![0.0; nx], vec![0.0; nx], vec![0.0; nu]),
            |(jet, lam, ax, au), k| {
                let x = &states[k * nx..(k + 1) * nx];
                let u = &controls[k * nu..(k + 1) * nu];
                let mut sx = vec![0.0; nx];
                let mut su = vec![0.0; nu];
                for j in 0..atoms.len() {
                    model.stage_jet(t, x, u, atoms.get(j), jet);
                    next_map.eval_into(model, &jet.next, lam);
                    ax.copy_from_slice(&jet.l_x);
                    jet.add_fx_transpose(lam, ax);
                    au.copy_from_slice(&jet.l_u);
                    jet.add_fu_transpose(lam, au);
                    let p = atoms.weights[j];
                    for (s, a) in sx.iter_mut().zip(ax.iter()) {
                        *s += p * a;
                    }
                    for (s, a) in su.iter_mut().zip(au.iter()) {
                        *s += p * a;
                    }
                }
                (sx, su)
            },
        )
        .collect();
    let mut lx = Vec::with_capacity(n * nx);
    let mut gu = Vec::with_capacity(n * nu);
    for (a, b) in per {
        lx.extend(a);
        gu.extend(b);
    }
    (lx, gu)
}

struct Sweep {
    costates: Vec<Vec<f64>>,
    maps: Vec<CostateMap>,
    grads: Vec<Vec<f64>>,
}

fn backward_sweep<M: ProblemModel + ?Sized>(
    model: &M,
    scenarios: &ScenarioSet,
    states: &[Vec<f64>],
    controls: &[Vec<f64>],
    interp: InterpConfig,
) -> Result<Sweep> {
    let dims = model.dims();
    let horizon = model.horizon();
    let nx = dims.state;
    let n = scenarios.len();
    check_dim(horizon + 1, states.len())?;
    check_controls(model, n, controls)?;
    let mut costates = vec![Vec::new(); horizon + 1];
    let mut maps = vec![CostateMap::Terminal; horizon + 1];
    let mut grads = vec![Vec::new(); horizon];
    let mut terminal = vec![0.0; n * nx];
    for k in 0..n {
        model.final_cost_dx(&states[horizon][k * nx..(k + 1) * nx], &mut terminal[k * nx..(k + 1) * nx]);
    }
    costates[horizon] = terminal;
    for t in (0..horizon).rev() {
        let atoms = NoiseAtoms::of_stage(scenarios, t + 1);
        let (lam, g) = stage_sums(model, t, &atoms, &states[t], &controls[t], &maps[t + 1]);
        if let Some(i) = lam.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                scenario: i / nx,
                stage: t,
            });
        }
        maps[t] = fit_costate(&states[t], nx, &lam, interp, t)?;
        costates[t] = lam;
        grads[t] = g;
    }
    Ok(Sweep { costates, maps, grads })
}

/// Backward co-state recursion; returns the particles `Lambda_t^k` and the
/// regressed maps `Lhat_t` for `t = 0..=T`.
pub fn backward_costates<M: ProblemModel + ?Sized>(
    model: &M,
    scenarios: &ScenarioSet,
    states: &[Vec<f64>],
    controls: &[Vec<f64>],
    interp: InterpConfig,
) -> Result<(Vec<Vec<f64>>, Vec<CostateMap>)> {
    let s = backward_sweep(model, scenarios, states, controls, interp)?;
    Ok((s.costates, s.maps))
}

/// Gradient particles `g_t^k` from given co-state maps.
pub fn gradient_particles<M: ProblemModel + ?Sized>(
    model: &M,
    scenarios: &ScenarioSet,
    states: &[Vec<f64>],
    controls: &[Vec<f64>],
    costate_maps: &[CostateMap],
) -> Result<Vec<Vec<f64>>> {
    let horizon = model.horizon();
    check_dim(horizon + 1, costate_maps.len())?;
    check_dim(horizon + 1, states.len())?;
    check_controls(model, scenarios.len(), controls)?;
    Ok((0..horizon)
        .map(|t| {
            let atoms = NoiseAtoms::of_stage(scenarios, t + 1);
            stage_sums(model, t, &atoms, &states[t], &controls[t], &costate_maps[t + 1]).1
        })
        .collect())
}

/// Starting controls replicated over `n` particles.
pub fn initial_controls<M: ProblemModel + ?Sized>(model: &M, n: usize, rule: InitialControls) -> Vec<Vec<f64>> {
    (0..model.horizon())
        .map(|t| {
            let mid = rule.point(model.control_box(t));
            mid.iter().copied().cycle().take(n * mid.len()).collect()
        })
        .collect()
}

fn projected_step<M: ProblemModel + ?Sized>(model: &M, controls: &[Vec<f64>], grads: &[Vec<f64>], rho: f64) -> Vec<Vec<f64>> {
    controls
        .iter()
        .zip(grads)
        .enumerate()
        .map(|(t, (u, g))| {
            let mut v: Vec<f64> = u.iter().zip(g).map(|(a, b)| a - rho * b).collect();
            model.control_box(t).project_rows(&mut v);
            v
        })
        .collect()
}

fn l2(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

fn l2_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn mean_grad_norm(grads: &[Vec<f64>], control_dim: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for g in grads {
        for row in g.chunks(control_dim) {
            sum += row.iter().map(|v| v * v).sum::<f64>().sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct ParticleRun {
    pub bundle: TrajectoryBundle,
    pub policy: Policy,
    pub reports: Vec<IterationReport>,
    /// Sample-mean training cost of the final controls.
    pub cost: f64,
    pub converged: bool,
}

/// Runs the projected-gradient iteration from `initial` (default:
/// `config.initial`) and synthesizes the feedback policy.
pub fn run<M: ProblemModel + ?Sized>(
    model: &M,
    scenarios: &ScenarioSet,
    config: &AlgoConfig,
    initial: Option<Vec<Vec<f64>>>,
) -> Result<ParticleRun> {
    config.validate()?;
    let dims = model.dims();
    let n = scenarios.len();
    let mut controls = initial.unwrap_or_else(|| initial_controls(model, n, config.initial));
    check_controls(model, n, &controls)?;
    for (t, u) in controls.iter().enumerate() {
        let bx = model.control_box(t);
        if u.chunks(dims.control).any(|row| !bx.contains(row)) {
            return Err(Error::invalid(format!("initial controls at stage {t} leave the control box")));
        }
    }

    let start = Instant::now();
    let mut rho = config.step;
    let (mut states, mut cost) = forward_with_cost(model, scenarios, &controls)?;
    let mut reports = Vec::new();
    let mut increases = 0usize;
    let mut converged = false;

    for iter in 1..=config.max_iters {
        let sweep = backward_sweep(model, scenarios, &states, &controls, config.costate_interp)?;
        let grad_norm = mean_grad_norm(&sweep.grads, dims.control);
        let mut candidate = projected_step(model, &controls, &sweep.grads, rho);
        let (mut cand_states, mut cand_cost) = forward_with_cost(model, scenarios, &candidate)?;
        if config.halve_on_increase {
            let mut halvings = 0;
            while cand_cost > cost && halvings < config.max_halvings {
                rho *= 0.5;
                halvings += 1;
                candidate = projected_step(model, &controls, &sweep.grads, rho);
                (cand_states, cand_cost) = forward_with_cost(model, scenarios, &candidate)?;
            }
        }
        let scale = l2(&controls).max(l2(&candidate));
        let change = if scale > 0.0 { l2_diff(&candidate, &controls) / scale } else { 0.0 };
        if cand_cost > cost {
            increases += 1;
        } else {
            increases = 0;
        }
        controls = candidate;
        states = cand_states;
        cost = cand_cost;
        reports.push(IterationReport {
            iter,
            cost,
            grad_norm,
            control_change: change,
            step: rho,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("iter {iter}: cost {cost:.6e} change {change:.3e} rho {rho:.3e}");
        if increases >= config.divergence_window {
            return Err(Error::Numerical(format!(
                "sampled cost increased for {increases} consecutive iterations (iteration {iter}, cost {cost:.6e}, step {rho:.3e}); reduce the step size"
            )));
        }
        if change <= config.tolerance {
            converged = true;
            break;
        }
    }

    let sweep = backward_sweep(model, scenarios, &states, &controls, config.costate_interp)?;
    let policy = Policy::fit(model, &states, &controls, config.feedback_interp)?;
    Ok(ParticleRun {
        bundle: TrajectoryBundle {
            states,
            controls,
            costates: sweep.costates,
            costate_maps: sweep.maps,
        },
        policy,
        reports,
        cost,
        converged,
    })
}

/// Writes `iterations.csv` and `scatter/stage_XXX.csv` into `dir`; returns
/// the written paths.
pub fn write_outputs<M: ProblemModel + ?Sized>(
    model: &M,
    result: &ParticleRun,
    dir: &Path,
    timings: bool,
) -> Result<Vec<std::path::PathBuf>> {
    let dims = model.dims();
    let scatter_dir = dir.join("scatter");
    std::fs::create_dir_all(&scatter_dir).map_err(|e| Error::io(&scatter_dir, e))?;
    let mut paths = Vec::new();
    let p = dir.join("iterations.csv");
    iterations_csv(&result.reports, timings).write(&p)?;
    paths.push(p);
    for (t, u) in result.bundle.controls.iter().enumerate() {
        let p = scatter_dir.join(format!("stage_{t:03}.csv"));
        Scatter::uniform(dims.state, dims.control, result.bundle.states[t].clone(), u.clone())?
            .to_csv()
            .write(&p)?;
        paths.push(p);
    }
    Ok(paths)
}
