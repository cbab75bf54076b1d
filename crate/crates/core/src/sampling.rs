//! Monte-Carlo noise scenarios.
//!
//! A scenario is one draw of the whole noise path `w_0, ..., w_T`, with
//! `w_0` the initial state. Values are generated by a ChaCha stream keyed on
//! `(seed, role)`, with the scenario index as stream id and the stage as
//! block offset, so any subset of scenarios can be generated independently
//! and in any order.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::csvio::{fmt_f64, CsvDoc, CsvTable};
use crate::error::{check_dim, Error, Result};

/// One-dimensional marginal law of a noise component.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    Point(f64),
    Uniform { lo: f64, hi: f64 },
    /// `levels` equally likely points evenly spaced on
    /// `[mean - delta, mean + delta]` (just `mean` when `levels == 1`).
    Discrete { mean: f64, delta: f64, levels: usize },
}

impl Marginal {
    /// Uniform over `{mean - delta, mean, mean + delta}`.
    pub fn three_point(mean: f64, delta: f64) -> Self {
        Marginal::Discrete {
            mean,
            delta,
            levels: 3,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Marginal::Point(v) => v.is_finite(),
            Marginal::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Marginal::Discrete {
                mean,
                delta,
                levels,
            } => mean.is_finite() && delta.is_finite() && delta >= 0.0 && levels >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("malformed distribution {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Point(v) => v,
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
            Marginal::Discrete { mean, .. } => mean,
        }
    }

    pub fn std_dev(&self) -> f64 {
        match *self {
            Marginal::Point(_) => 0.0,
            Marginal::Uniform { lo, hi } => (hi - lo) / 12f64.sqrt(),
            Marginal::Discrete { delta, levels, .. } => {
                if levels == 1 {
                    return 0.0;
                }
                let var = (0..levels)
                    .map(|i| {
                        let z = Self::level(delta, levels, i);
                        z * z
                    })
                    .sum::<f64>()
                    / levels as f64;
                var.sqrt()
            }
        }
    }

    /// Smallest and largest attainable values.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Marginal::Point(v) => (v, v),
            Marginal::Uniform { lo, hi } => (lo, hi),
            Marginal::Discrete {
                mean,
                delta,
                levels,
            } => {
                if levels == 1 {
                    (mean, mean)
                } else {
                    (mean - delta, mean + delta)
                }
            }
        }
    }

    /// Finite atoms and their probabilities, if the law is discrete.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            Marginal::Point(v) => Some(vec![(v, 1.0)]),
            Marginal::Uniform { .. } => None,
            Marginal::Discrete {
                mean,
                delta,
                levels,
            } => Some(
                (0..levels)
                    .map(|i| (mean + Self::level(delta, levels, i), 1.0 / levels as f64))
                    .collect(),
            ),
        }
    }

    fn level(delta: f64, levels: usize, i: usize) -> f64 {
        if levels == 1 {
            0.0
        } else {
            -delta + 2.0 * delta * i as f64 / (levels - 1) as f64
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Marginal::Point(v) => v,
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            Marginal::Discrete {
                mean,
                delta,
                levels,
            } => mean + Self::level(delta, levels, rng.gen_range(0..levels)),
        }
    }
}

/// Stage-wise independent noise law: the initial-state law and one vector of
/// independent marginals per stage `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    initial: Vec<Marginal>,
    stages: Vec<Vec<Marginal>>,
}

impl NoiseModel {
    pub fn new(initial: Vec<Marginal>, stages: Vec<Vec<Marginal>>) -> Result<Self> {
        if initial.is_empty() {
            return Err(Error::invalid("initial law needs at least one component"));
        }
        if stages.is_empty() {
            return Err(Error::invalid("noise model needs at least one stage"));
        }
        let dim = stages[0].len();
        if dim == 0 {
            return Err(Error::invalid("stage noise needs at least one component"));
        }
        for s in &stages {
            check_dim(dim, s.len())?;
        }
        for m in initial.iter().chain(stages.iter().flatten()) {
            m.validate()?;
        }
        Ok(NoiseModel { initial, stages })
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn initial(&self) -> &[Marginal] {
        &self.initial
    }

    /// Marginals of `w_t` for `t = 1..=T`.
    pub fn stage(&self, t: usize) -> &[Marginal] {
        if t == 0 {
            &self.initial
        } else {
            &self.stages[t - 1]
        }
    }

    pub fn stage_dim(&self, t: usize) -> usize {
        self.stage(t).len()
    }

    pub fn stage_mean(&self, t: usize) -> Vec<f64> {
        self.stage(t).iter().map(Marginal::mean).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }

    fn key(self) -> u64 {
        match self {
            Role::Train => 0x5452_4149_4e00_0001,
            Role::Test => 0x5445_5354_0000_0002,
        }
    }
}

/// `N` noise paths over stages `0..=T`, stored scenario-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    count: usize,
    stage_dims: Vec<usize>,
    offsets: Vec<usize>,
    width: usize,
    values: Vec<f64>,
    seed: u64,
    role: Role,
    noise: Option<NoiseModel>,
}

fn layout(stage_dims: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(stage_dims.len());
    let mut acc = 0;
    for d in stage_dims {
        offsets.push(acc);
        acc += d;
    }
    (offsets, acc)
}

const WORDS_PER_STAGE: u128 = 1 << 12;

fn stage_rng(key: u64, scenario: usize, stage: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(scenario as u64);
    rng.set_word_pos(stage as u128 * WORDS_PER_STAGE);
    rng
}

/// Draws `n` independent scenarios from `noise`. Deterministic in
/// `(noise, n, seed)` regardless of thread scheduling.
pub fn draw_scenarios(noise: &NoiseModel, n: usize, seed: u64) -> Result<ScenarioSet> {
    draw_with_role(noise, n, seed, Role::Train)
}

pub fn draw_with_role(noise: &NoiseModel, n: usize, seed: u64, role: Role) -> Result<ScenarioSet> {
    if n == 0 {
        return Err(Error::invalid("scenario count must be at least 1"));
    }
    let horizon = noise.horizon();
    let stage_dims: Vec<usize> = (0..=horizon).map(|t| noise.stage_dim(t)).collect();
    let (offsets, width) = layout(&stage_dims);
    let key = seed ^ role.key();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut row = Vec::with_capacity(width);
            for t in 0..=horizon {
                let mut rng = stage_rng(key, k, t);
                row.extend(noise.stage(t).iter().map(|m| m.sample(&mut rng)));
            }
            row
        })
        .collect();
    Ok(ScenarioSet {
        count: n,
        stage_dims,
        offsets,
        width,
        values: rows.concat(),
        seed,
        role,
        noise: Some(noise.clone()),
    })
}

/// Returns the training set unchanged together with a fresh test set of the
/// same size drawn from the same law under `seed` (not a partition).
pub fn split(scenarios: &ScenarioSet, seed: u64) -> Result<(ScenarioSet, ScenarioSet)> {
    let noise = scenarios
        .noise
        .as_ref()
        .ok_or_else(|| Error::invalid("scenario set carries no noise model to draw a test set from"))?;
    let test = draw_with_role(noise, scenarios.count, seed, Role::Test)?;
    let mut train = scenarios.clone();
    train.role = Role::Train;
    Ok((train, test))
}

impl ScenarioSet {
    /// Builds a set from explicit paths: `paths[k][t]` is `w_t` of scenario `k`.
    pub fn from_paths(paths: Vec<Vec<Vec<f64>>>, role: Role) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::invalid("scenario count must be at least 1"));
        }
        let stage_dims: Vec<usize> = paths[0].iter().map(Vec::len).collect();
        if stage_dims.len() < 2 {
            return Err(Error::invalid("scenarios need at least stages 0 and 1"));
        }
        let (offsets, width) = layout(&stage_dims);
        let mut values = Vec::with_capacity(paths.len() * width);
        for p in &paths {
            check_dim(stage_dims.len(), p.len())?;
            for (t, w) in p.iter().enumerate() {
                check_dim(stage_dims[t], w.len())?;
                values.extend_from_slice(w);
            }
        }
        Ok(ScenarioSet {
            count: paths.len(),
            stage_dims,
            offsets,
            width,
            values,
            seed: 0,
            role,
            noise: None,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn horizon(&self) -> usize {
        self.stage_dims.len() - 1
    }

    pub fn stage_dim(&self, t: usize) -> usize {
        self.stage_dims[t]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn noise_model(&self) -> Option<&NoiseModel> {
        self.noise.as_ref()
    }

    /// `w_t` of scenario `k`.
    #[inline]
    pub fn get(&self, k: usize, t: usize) -> &[f64] {
        let start = k * self.width + self.offsets[t];
        &self.values[start..start + self.stage_dims[t]]
    }

    /// Stage slices `w_0..=w_T` of scenario `k`.
    pub fn path(&self, k: usize) -> Vec<&[f64]> {
        (0..=self.horizon()).map(|t| self.get(k, t)).collect()
    }

    /// Checks that the set fits a problem with the given horizon and dims.
    pub fn check_shape(&self, horizon: usize, state_dim: usize, noise_dim: usize) -> Result<()> {
        check_dim(horizon, self.horizon())?;
        check_dim(state_dim, self.stage_dims[0])?;
        for t in 1..=horizon {
            check_dim(noise_dim, self.stage_dims[t])?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> CsvDoc {
        let mut doc = CsvDoc::new(
            &format!("scenarios/v1 role={} seed={}", self.role.as_str(), self.seed),
            &["scenario", "stage", "component", "value"],
        );
        for k in 0..self.count {
            for t in 0..=self.horizon() {
                for (c, v) in self.get(k, t).iter().enumerate() {
                    doc.row(&[k.to_string(), t.to_string(), c.to_string(), fmt_f64(*v)]);
                }
            }
        }
        doc
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.to_csv().write(path)
    }

    /// Reads a file written by [`ScenarioSet::write_csv`]. The noise model is
    /// not stored, so the result cannot be passed to [`split`].
    pub fn read_csv(path: &Path, role: Role) -> Result<Self> {
        let table = CsvTable::read(path)?;
        table.expect_header(&["scenario", "stage", "component", "value"])?;
        let mut paths: Vec<Vec<Vec<f64>>> = Vec::new();
        for (line, f) in &table.rows {
            let k = table.usize_at(*line, &f[0])?;
            let t = table.usize_at(*line, &f[1])?;
            let c = table.usize_at(*line, &f[2])?;
            let v = table.f64_at(*line, &f[3])?;
            if k > paths.len() {
                return Err(table.error(*line, "scenario indices must be contiguous"));
            }
            if k == paths.len() {
                paths.push(Vec::new());
            }
            let p = &mut paths[k];
            if t > p.len() {
                return Err(table.error(*line, "stage indices must be contiguous"));
            }
            if t == p.len() {
                p.push(Vec::new());
            }
            let w = &mut p[t];
            if c != w.len() {
                return Err(table.error(*line, "component indices must be contiguous"));
            }
            w.push(v);
        }
        let mut set = ScenarioSet::from_paths(paths, role)?;
        if let Some(seed) = schema_seed(&table) {
            set.seed = seed;
        }
        Ok(set)
    }
}

fn schema_seed(table: &CsvTable) -> Option<u64> {
    let first = table.comments.first()?;
    let pos = first.find("seed=")?;
    first[pos + 5..].split_whitespace().next()?.parse().ok()
}
