//! Hydro-electric dam benchmark.
//!
//! Storage `x` in `[x_min, x_max]`, desired release `u` in `[u_min, u_max]`,
//! and noise `w_{t+1} = (a, d)` (inflow, demand) observed after the release
//! decision. The effective release and the overflow are both `min`s,
//! smoothed by [`Smoothing`]:
//!
//! ```text
//! e      = min(u, x + a - x_min)
//! x_next = min(x - e + a, x_max)
//! L_t    = tau_t * (exp(d - g(x, e)) - 1),  g(x, e) = e (x + x_max - 2 x_min) / (2 (x_max - x_min))
//! K(x)   = final_weight * (x - x_max)^2
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::model::{BoxSet, Dims, ProblemModel, Smoothing, StageJet};
use crate::particle::{AlgoConfig, InitialControls};
use crate::scentree::TreeSolveConfig;
use crate::sampling::{Marginal, NoiseModel};

/// Imbalance arguments above this saturate the exponential cost.
pub const IMBALANCE_CAP: f64 = 50.0;

/// Mean hourly inflow of the default data.
pub const DEFAULT_INFLOW: f64 = 0.15;

static OVERFLOW_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, PartialEq)]
pub struct DamConfig {
    pub horizon: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// `tau_t` for stages `0..T`.
    pub price: Vec<f64>,
    /// Mean inflow `a_t` for `t = 1..=T` (entry `i` is stage `i + 1`).
    pub mean_inflow: Vec<f64>,
    /// Mean demand `d_t` for `t = 1..=T`.
    pub mean_demand: Vec<f64>,
    pub delta_inflow: f64,
    pub delta_demand: f64,
    /// Number of equally likely disturbance levels on `[-delta, delta]`.
    pub disturbance_levels: usize,
    pub smoothing_c: f64,
    pub final_weight: f64,
    /// Point-mass initial storage; uniform on `[x_min, x_max]` when `None`.
    pub initial_state: Option<f64>,
}

/// Daily demand shape: overnight trough, morning peak near hour 8 and a
/// larger evening peak near hour 19.
pub fn default_demand(horizon: usize) -> Vec<f64> {
    (1..=horizon)
        .map(|t| {
            let h = t as f64 * 24.0 / horizon as f64;
            0.15 + 0.2 * (-(h - 8.0).powi(2) / 8.0).exp() + 0.25 * (-(h - 19.0).powi(2) / 12.0).exp()
        })
        .collect()
}

/// Price following the demand shape, rescaled to `[1, 3]`; `tau_t` tracks
/// the demand `d_{t+1}` it settles.
pub fn default_price(demand: &[f64]) -> Vec<f64> {
    let lo = demand.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = demand.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    demand
        .iter()
        .map(|d| if hi > lo { 1.0 + 2.0 * (d - lo) / (hi - lo) } else { 2.0 })
        .collect()
}

impl DamConfig {
    pub fn with_horizon(horizon: usize) -> Self {
        let mean_demand = default_demand(horizon);
        DamConfig {
            horizon,
            x_min: 0.0,
            x_max: 2.0,
            u_min: 0.0,
            u_max: 1.0,
            price: default_price(&mean_demand),
            mean_inflow: vec![DEFAULT_INFLOW; horizon],
            mean_demand,
            delta_inflow: 0.02,
            delta_demand: 0.1,
            disturbance_levels: 3,
            smoothing_c: Smoothing::DEFAULT.value(),
            final_weight: 12.0,
            initial_state: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.x_min < self.x_max) {
            return bad(format!("x_min {} must be below x_max {}", self.x_min, self.x_max));
        }
        if !(self.u_min < self.u_max) {
            return bad(format!("u_min {} must be below u_max {}", self.u_min, self.u_max));
        }
        for (name, v) in [
            ("price", &self.price),
            ("mean_inflow", &self.mean_inflow),
            ("mean_demand", &self.mean_demand),
        ] {
            if v.len() != self.horizon {
                return bad(format!("{name} has {} entries, horizon is {}", v.len(), self.horizon));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} has non-finite entries"));
            }
        }
        if self.price.iter().any(|p| *p <= 0.0) {
            return bad("prices must be positive".into());
        }
        if !(self.delta_inflow >= 0.0 && self.delta_demand >= 0.0) {
            return bad("disturbance magnitudes must be nonnegative".into());
        }
        if self.disturbance_levels == 0 {
            return bad("disturbance_levels must be at least 1".into());
        }
        if self.mean_inflow.iter().any(|a| a - self.delta_inflow < 0.0) {
            return bad("inflow support must stay nonnegative".into());
        }
        if self.mean_demand.iter().any(|d| d - self.delta_demand < 0.0) {
            return bad("demand support must stay nonnegative".into());
        }
        if let Some(x0) = self.initial_state {
            if !(self.x_min <= x0 && x0 <= self.x_max) {
                return bad(format!("initial_state {x0} outside storage bounds"));
            }
        }
        if !(self.final_weight >= 0.0) {
            return bad("final_weight must be nonnegative".into());
        }
        Smoothing::new(self.smoothing_c)?;
        Ok(())
    }

    /// Initial-state law: point mass or uniform on the storage range.
    pub fn initial_law(&self) -> Marginal {
        match self.initial_state {
            Some(x0) => Marginal::Point(x0),
            None => Marginal::Uniform {
                lo: self.x_min,
                hi: self.x_max,
            },
        }
    }

    /// White-noise law of `(x_0, (a_t, d_t)_{t=1..T})`.
    pub fn noise_model(&self) -> Result<NoiseModel> {
        self.validate()?;
        let levels = self.disturbance_levels;
        let stages = (0..self.horizon)
            .map(|i| {
                vec![
                    Marginal::Discrete {
                        mean: self.mean_inflow[i],
                        delta: self.delta_inflow,
                        levels,
                    },
                    Marginal::Discrete {
                        mean: self.mean_demand[i],
                        delta: self.delta_demand,
                        levels,
                    },
                ]
            })
            .collect();
        NoiseModel::new(vec![self.initial_law()], stages)
    }

    /// Applies `key = value` entries; consumed keys are removed from `kv`.
    pub fn apply(&mut self, kv: &mut ConfigFile) -> Result<()> {
        if let Some(h) = kv.take_usize("horizon")? {
            if h != self.horizon {
                *self = DamConfig::with_horizon(h);
            }
        }
        macro_rules! scalar {
            ($key:literal, $field:ident) => {
                if let Some(v) = kv.take_f64($key)? {
                    self.$field = v;
                }
            };
        }
        scalar!("x_min", x_min);
        scalar!("x_max", x_max);
        scalar!("u_min", u_min);
        scalar!("u_max", u_max);
        scalar!("delta_inflow", delta_inflow);
        scalar!("delta_demand", delta_demand);
        scalar!("smoothing_c", smoothing_c);
        scalar!("final_weight", final_weight);
        if let Some(v) = kv.take_usize("disturbance_levels")? {
            self.disturbance_levels = v;
        }
        if let Some(v) = kv.take_f64("initial_state")? {
            self.initial_state = Some(v);
        }
        let demand_given = kv.take_list("mean_demand")?;
        let price_given = kv.take_list("price")?;
        if let Some(v) = kv.take_list("mean_inflow")? {
            self.mean_inflow = v;
        }
        if let Some(v) = demand_given {
            self.mean_demand = v;
            if price_given.is_none() {
                self.price = default_price(&self.mean_demand);
            }
        }
        if let Some(v) = price_given {
            self.price = v;
        }
        self.validate()
    }

    pub fn from_file(path: &Path) -> Result<(Self, ConfigFile)> {
        let mut kv = ConfigFile::read(path)?;
        let mut cfg = DamConfig::default();
        cfg.apply(&mut kv)?;
        Ok((cfg, kv))
    }

    /// Serialises to the `key = value` format read by [`DamConfig::apply`].
    pub fn to_config_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        s.push_str(&format!("horizon = {}\n", self.horizon));
        s.push_str(&format!("x_min = {:?}\nx_max = {:?}\n", self.x_min, self.x_max));
        s.push_str(&format!("u_min = {:?}\nu_max = {:?}\n", self.u_min, self.u_max));
        s.push_str(&format!("price = {}\n", list(&self.price)));
        s.push_str(&format!("mean_inflow = {}\n", list(&self.mean_inflow)));
        s.push_str(&format!("mean_demand = {}\n", list(&self.mean_demand)));
        s.push_str(&format!("delta_inflow = {:?}\ndelta_demand = {:?}\n", self.delta_inflow, self.delta_demand));
        s.push_str(&format!("disturbance_levels = {}\n", self.disturbance_levels));
        s.push_str(&format!("smoothing_c = {:?}\nfinal_weight = {:?}\n", self.smoothing_c, self.final_weight));
        if let Some(x0) = self.initial_state {
            s.push_str(&format!("initial_state = {x0:?}\n"));
        }
        s
    }
}

impl Default for DamConfig {
    fn default() -> Self {
        DamConfig::with_horizon(24)
    }
}

/// Plain-text `key = value` file; `#` starts a comment, lists are
/// comma-separated and array keys may be written `name[]`.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "<config>".into(),
                line: i + 1,
                message: format!("expected `key = value`, found {line:?}"),
            })?;
            let key = k.trim().trim_end_matches("[]").trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    path: "<config>".into(),
                    line: i + 1,
                    message: format!("duplicate key {key}"),
                });
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    fn err(key: &str, line: usize, value: &str) -> Error {
        Error::Parse {
            path: "<config>".into(),
            line,
            message: format!("bad value for {key}: {value:?}"),
        }
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    pub fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Self::err(key, line, &v)),
        }
    }

    pub fn take_usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Self::err(key, line, &v)),
        }
    }

    pub fn take_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| Self::err(key, line, &v)))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// Keys not consumed so far.
    pub fn remaining(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}

/// Electricity production `g(x, e)`.
pub fn production(x: f64, e: f64, cfg: &DamConfig) -> f64 {
    e * efficiency(x, cfg)
}

fn efficiency(x: f64, cfg: &DamConfig) -> f64 {
    (x + cfg.x_max - 2.0 * cfg.x_min) / (2.0 * (cfg.x_max - cfg.x_min))
}

/// Imbalance cost `c_t(y) = tau_t (e^y - 1)` and its derivative, saturated
/// above [`IMBALANCE_CAP`].
pub fn imbalance_cost_and_slope(t: usize, y: f64, cfg: &DamConfig) -> (f64, f64) {
    let tau = cfg.price[t];
    if y > IMBALANCE_CAP {
        if !OVERFLOW_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("imbalance {y} above {IMBALANCE_CAP}; cost saturated");
        }
        (tau * (IMBALANCE_CAP.exp() - 1.0), 0.0)
    } else {
        let e = y.exp();
        (tau * (e - 1.0), tau * e)
    }
}

pub fn imbalance_cost(t: usize, y: f64, cfg: &DamConfig) -> f64 {
    imbalance_cost_and_slope(t, y, cfg).0
}

pub fn final_cost(x: f64, cfg: &DamConfig) -> f64 {
    cfg.final_weight * (x - cfg.x_max).powi(2)
}

/// The dam as a [`ProblemModel`]: scalar state and control, noise `(a, d)`.
#[derive(Debug, Clone)]
pub struct DamModel {
    cfg: DamConfig,
    smoothing: Smoothing,
    control_box: BoxSet,
}

pub fn build_dam_model(cfg: DamConfig) -> Result<DamModel> {
    cfg.validate()?;
    Ok(DamModel {
        smoothing: Smoothing::new(cfg.smoothing_c)?,
        control_box: BoxSet::uniform(1, cfg.u_min, cfg.u_max)?,
        cfg,
    })
}

/// Intermediate quantities of one transition, shared by values and
/// derivatives.
struct Transition {
    release: f64,
    release_du: f64,
    release_dx: f64,
    next: f64,
    next_dx: f64,
    next_du: f64,
}

impl DamModel {
    pub fn config(&self) -> &DamConfig {
        &self.cfg
    }

    fn transition(&self, x: f64, u: f64, a: f64) -> Transition {
        let s = self.smoothing;
        let avail = x + a - self.cfg.x_min;
        let release = s.min(u, avail);
        let (release_du, release_dx) = s.grad(u, avail);
        let spill_in = x - release + a;
        let next = s.min(self.cfg.x_max, spill_in);
        let (_, dz) = s.grad(self.cfg.x_max, spill_in);
        Transition {
            release,
            release_du,
            release_dx,
            next,
            next_dx: dz * (1.0 - release_dx),
            next_du: -dz * release_du,
        }
    }

    /// Exact (unsmoothed) dynamics, for comparison.
    pub fn exact_dynamics(&self, x: f64, u: f64, a: f64) -> f64 {
        let e = u.min(x + a - self.cfg.x_min);
        (x - e + a).min(self.cfg.x_max)
    }

    /// Returns `(L, dL/dx, dL/du)` for a transition.
    fn cost_parts(&self, t: usize, x: f64, d: f64, tr: &Transition) -> (f64, f64, f64) {
        let eff = efficiency(x, &self.cfg);
        let g = tr.release * eff;
        let g_x = tr.release / (2.0 * (self.cfg.x_max - self.cfg.x_min)) + eff * tr.release_dx;
        let g_u = eff * tr.release_du;
        let (c, slope) = imbalance_cost_and_slope(t, d - g, &self.cfg);
        (c, -slope * g_x, -slope * g_u)
    }
}

impl ProblemModel for DamModel {
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn dims(&self) -> Dims {
        Dims {
            state: 1,
            control: 1,
            noise: 2,
        }
    }

    fn control_box(&self, _t: usize) -> &BoxSet {
        &self.control_box
    }

    fn dynamics(&self, _t: usize, x: &[f64], u: &[f64], w: &[f64], next: &mut [f64]) {
        next[0] = self.transition(x[0], u[0], w[0]).next;
    }

    fn dynamics_dx(&self, _t: usize, x: &[f64], u: &[f64], w: &[f64], jac: &mut [f64]) {
        jac[0] = self.transition(x[0], u[0], w[0]).next_dx;
    }

    fn dynamics_du(&self, _t: usize, x: &[f64], u: &[f64], w: &[f64], jac: &mut [f64]) {
        jac[0] = self.transition(x[0], u[0], w[0]).next_du;
    }

    fn stage_cost(&self, t: usize, x: &[f64], u: &[f64], w: &[f64]) -> f64 {
        let tr = self.transition(x[0], u[0], w[0]);
        self.cost_parts(t, x[0], w[1], &tr).0
    }

    fn stage_cost_dx(&self, t: usize, x: &[f64], u: &[f64], w: &[f64], grad: &mut [f64]) {
        let tr = self.transition(x[0], u[0], w[0]);
        grad[0] = self.cost_parts(t, x[0], w[1], &tr).1;
    }

    fn stage_cost_du(&self, t: usize, x: &[f64], u: &[f64], w: &[f64], grad: &mut [f64]) {
        let tr = self.transition(x[0], u[0], w[0]);
        grad[0] = self.cost_parts(t, x[0], w[1], &tr).2;
    }

    fn final_cost(&self, x: &[f64]) -> f64 {
        final_cost(x[0], &self.cfg)
    }

    fn final_cost_dx(&self, x: &[f64], grad: &mut [f64]) {
        grad[0] = 2.0 * self.cfg.final_weight * (x[0] - self.cfg.x_max);
    }

    fn stage_jet(&self, t: usize, x: &[f64], u: &[f64], w: &[f64], jet: &mut StageJet) {
        let tr = self.transition(x[0], u[0], w[0]);
        let (c, cx, cu) = self.cost_parts(t, x[0], w[1], &tr);
        jet.next[0] = tr.next;
        jet.f_x[0] = tr.next_dx;
        jet.f_u[0] = tr.next_du;
        jet.cost = c;
        jet.l_x[0] = cx;
        jet.l_u[0] = cu;
    }
}

/// Particle settings for the dam benchmark. Iterations start from zero
/// release: the box midpoint drains the reservoir within a few hours, after
/// which the release no longer depends on the control and every gradient
/// vanishes. The step is sized for the curvature of the final cost.
pub fn particle_settings() -> AlgoConfig {
    AlgoConfig {
        initial: InitialControls::Lower,
        step: 0.002,
        ..AlgoConfig::default()
    }
}

/// Tree-solver settings for the dam benchmark (same starting point as
/// [`particle_settings`]).
pub fn tree_settings() -> TreeSolveConfig {
    TreeSolveConfig {
        initial: InitialControls::Lower,
        ..TreeSolveConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn production_examples() {
        let cfg = DamConfig::default();
        assert_eq!(production(2.0, 0.5, &cfg), 0.5);
        assert_eq!(production(0.0, 0.5, &cfg), 0.25);
        assert_eq!(production(1.0, 1.0, &cfg), 0.75);
    }

    #[test]
    fn imbalance_cost_examples() {
        let mut cfg = DamConfig::default();
        assert_eq!(imbalance_cost(3, 0.0, &cfg), 0.0);
        cfg.price[0] = 1.0;
        assert!((imbalance_cost(0, 2f64.ln(), &cfg) - 1.0).abs() < 1e-15);
        assert!(imbalance_cost(0, -0.5, &cfg) < 0.0);
        let (c, s) = imbalance_cost_and_slope(0, 60.0, &cfg);
        assert!(c.is_finite() && s == 0.0);
    }

    #[test]
    fn imbalance_cost_is_convex_and_increasing() {
        let cfg = DamConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let t = rng.gen_range(0..24);
            let a: f64 = rng.gen_range(-5.0..5.0);
            let b: f64 = rng.gen_range(-5.0..5.0);
            let mid = imbalance_cost(t, 0.5 * (a + b), &cfg);
            assert!(mid <= 0.5 * (imbalance_cost(t, a, &cfg) + imbalance_cost(t, b, &cfg)) + 1e-12);
            assert!(imbalance_cost_and_slope(t, a, &cfg).1 > 0.0);
        }
    }

    #[test]
    fn final_cost_examples() {
        let cfg = DamConfig::default();
        assert_eq!(final_cost(2.0, &cfg), 0.0);
        assert_eq!(final_cost(0.0, &cfg), 48.0);
        let m = build_dam_model(cfg.clone()).unwrap();
        for x in [0.0, 0.7, 1.3, 2.0] {
            let mut g = [0.0];
            m.final_cost_dx(&[x], &mut g);
            let num = fd::central(|v| final_cost(v[0], &cfg), &[x], 0, 1e-5);
            assert!(fd::rel_err(g[0], num) < 1e-8);
            assert!((g[0] - 24.0 * (x - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_dynamics_close_to_exact_min() {
        let mut cfg = DamConfig::default();
        cfg.smoothing_c = 1e-4;
        let m = build_dam_model(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x = rng.gen_range(0.0..2.0);
            let u = rng.gen_range(0.0..1.0);
            let a = rng.gen_range(0.0..0.2);
            let mut next = [0.0];
            m.dynamics(0, &[x], &[u], &[a, 0.3], &mut next);
            assert!((next[0] - m.exact_dynamics(x, u, a)).abs() <= 0.5e-4 + 1e-15);
        }
    }

    #[test]
    fn idle_dam_keeps_its_level() {
        let m = build_dam_model(DamConfig::default()).unwrap();
        for x in [0.5, 1.0, 1.5, 1.9] {
            let mut next = [0.0];
            // u = 0 and a = 0: e = smooth_min(0, x) = 0 once x >= c
            m.dynamics(0, &[x], &[0.0], &[0.0, 0.3], &mut next);
            assert_eq!(next[0], x);
        }
    }

    #[test]
    fn states_stay_within_bounds_up_to_smoothing_slack() {
        let cfg = DamConfig::default();
        let c = cfg.smoothing_c;
        let m = build_dam_model(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let x = rng.gen_range(-c / 4.0..2.0 + c / 4.0);
            let u = rng.gen_range(0.0..1.0);
            let a = rng.gen_range(0.0..0.1);
            let mut next = [0.0];
            m.dynamics(0, &[x], &[u], &[a, 0.3], &mut next);
            assert!(next[0] >= -c / 4.0 - 1e-12 && next[0] <= 2.0 + 1e-12, "{x} {u} {a} -> {}", next[0]);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cfg = DamConfig::default();
        let m = build_dam_model(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 100 {
            let t = rng.gen_range(0..24);
            let x = rng.gen_range(0.0..2.0);
            let u = rng.gen_range(0.0..1.0);
            let a = rng.gen_range(0.03..0.07);
            let d = rng.gen_range(0.05..0.6);
            // skip points within a stencil of a smoothing seam, where the
            // second derivative jumps
            let c = m.smoothing.value();
            let avail = x + a;
            let z = x - m.smoothing.min(u, avail) + a;
            let near = |p: f64, q: f64| ((p - q).abs() - c).abs() < 1e-4;
            if near(u, avail) || near(2.0, z) {
                continue;
            }
            let err = fd::max_derivative_error(&m, t, &[x], &[u], &[a, d], 1e-5);
            assert!(err <= 1e-4, "err {err} at t={t} x={x} u={u} a={a} d={d}");
            checked += 1;
        }
    }

    #[test]
    fn config_file_round_trip_and_errors() {
        let cfg = DamConfig::default();
        let mut kv = ConfigFile::parse(&cfg.to_config_text()).unwrap();
        let mut back = DamConfig::with_horizon(3);
        back.apply(&mut kv).unwrap();
        assert_eq!(back, cfg);
        assert!(kv.remaining().is_empty());

        let mut kv = ConfigFile::parse("horizon = 4\nprice[] = 1, 2, 3\n").unwrap();
        assert!(DamConfig::default().apply(&mut kv).is_err());
        let mut kv = ConfigFile::parse("x_min = 2\nx_max = 1\n").unwrap();
        assert!(DamConfig::default().apply(&mut kv).is_err());
        assert!(ConfigFile::parse("nonsense").is_err());
        assert!(ConfigFile::parse("a = 1\na = 2").is_err());
        let mut kv = ConfigFile::parse("smoothing_c = 0\n").unwrap();
        assert!(DamConfig::default().apply(&mut kv).is_err());
    }

    #[test]
    fn default_profiles() {
        let cfg = DamConfig::default();
        let d = &cfg.mean_demand;
        let argmax = |r: std::ops::Range<usize>| r.max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap() + 1;
        assert_eq!(argmax(0..13), 8);
        assert_eq!(argmax(13..24), 19);
        let lo = cfg.price.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = cfg.price.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
        assert!(cfg.noise_model().is_ok());
    }
}
