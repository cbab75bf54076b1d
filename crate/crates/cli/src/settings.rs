//! Problem and solver settings read from the `key = value` config file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use stochctl::dam::{self, ConfigFile, DamConfig};
use stochctl::particle::{AlgoConfig, InitialControls};
use stochctl::scentree::{BranchingSchedule, TreeSolveConfig};
use stochctl::{InterpConfig, InterpMethod};

use crate::Usage;

/// Everything a run needs besides the scenarios.
#[derive(Debug, Clone)]
pub struct Settings {
    pub dam: DamConfig,
    pub grid_points: usize,
    pub sdp_interp: InterpConfig,
    pub particle: AlgoConfig,
    pub tree: TreeSolveConfig,
    pub branching: BranchingSchedule,
    /// Interpolation used to turn tree node controls into a simulable policy.
    pub tree_feedback: InterpConfig,
}

fn interp(kv: &mut ConfigFile, key: &str, bandwidth: Option<f64>, default: InterpConfig) -> Result<InterpConfig> {
    let mut cfg = match kv.take_str(key) {
        Some(s) => InterpConfig {
            method: InterpMethod::parse(&s).map_err(|e| Usage(format!("{key}: {e}")))?,
            bandwidth: None,
        },
        None => default,
    };
    if cfg.method == InterpMethod::Kernel {
        cfg.bandwidth = bandwidth.or(cfg.bandwidth);
    }
    Ok(cfg)
}

fn flag(kv: &mut ConfigFile, key: &str) -> Result<Option<bool>> {
    match kv.take_str(key).as_deref() {
        None => Ok(None),
        Some("1" | "true" | "yes") => Ok(Some(true)),
        Some("0" | "false" | "no") => Ok(Some(false)),
        Some(other) => Err(Usage(format!("{key}: expected true or false, found {other:?}")).into()),
    }
}

impl Settings {
    /// Unreadable files are IO failures; anything wrong with the contents
    /// is a usage error.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let kv = match path {
            Some(p) => match ConfigFile::read(p) {
                Ok(kv) => kv,
                Err(e @ stochctl::Error::Io { .. }) => return Err(e).context("reading config"),
                Err(e) => bail!(Usage(e.to_string())),
            },
            None => ConfigFile::default(),
        };
        Self::from_entries(kv).map_err(|e| match e.downcast::<Usage>() {
            Ok(u) => u.into(),
            Err(e) => Usage(format!("{e:#}")).into(),
        })
    }

    fn from_entries(mut kv: ConfigFile) -> Result<Self> {
        let mut dam_cfg = DamConfig::default();
        dam_cfg.apply(&mut kv)?;
        let mut particle = dam::particle_settings();
        let mut tree = dam::tree_settings();

        if let Some(s) = kv.take_str("initial_control") {
            let rule = InitialControls::parse(&s)?;
            particle.initial = rule;
            tree.initial = rule;
        }
        let grid_points = kv.take_usize("grid_points")?.unwrap_or(200);
        let sdp_interp = interp(&mut kv, "sdp_interp", None, InterpConfig::LINEAR)?;
        if let Some(v) = kv.take_f64("particle_step")? {
            particle.step = v;
        }
        if let Some(v) = kv.take_f64("particle_tolerance")? {
            particle.tolerance = v;
        }
        if let Some(v) = kv.take_usize("particle_max_iters")? {
            particle.max_iters = v;
        }
        if let Some(v) = flag(&mut kv, "halve_on_increase")? {
            particle.halve_on_increase = v;
        }
        let bandwidth = kv.take_f64("costate_bandwidth")?;
        particle.costate_interp = interp(&mut kv, "costate_interp", bandwidth, particle.costate_interp)?;
        particle.feedback_interp = interp(&mut kv, "feedback_interp", None, particle.feedback_interp)?;
        if let Some(v) = kv.take_f64("tree_step")? {
            tree.step = v;
        }
        if let Some(v) = kv.take_f64("tree_tolerance")? {
            tree.tolerance = v;
        }
        if let Some(v) = kv.take_usize("tree_max_iters")? {
            tree.max_iters = v;
        }
        let branching = match kv.take_list("branching")? {
            Some(list) => {
                if list.iter().any(|b| b.fract() != 0.0 || *b < 1.0) {
                    bail!(Usage("branching: factors must be positive integers".into()));
                }
                BranchingSchedule::new(list.iter().map(|b| *b as usize).collect())?
            }
            None => BranchingSchedule::doubling(dam_cfg.horizon),
        };

        let rest = kv.remaining();
        if !rest.is_empty() {
            bail!(Usage(format!("unknown config keys: {}", rest.join(", "))));
        }
        if grid_points < 2 {
            bail!(Usage("grid_points must be at least 2".into()));
        }
        particle.validate()?;
        Ok(Settings {
            dam: dam_cfg,
            grid_points,
            sdp_interp,
            particle,
            tree,
            branching,
            tree_feedback: InterpConfig::LINEAR,
        })
    }

    /// Resolved settings in config-file syntax; reading this file back
    /// reproduces the run.
    pub fn to_text(&self) -> String {
        let interp_name = |c: &InterpConfig| c.method.name().to_string();
        let mut s = self.dam.to_config_text();
        s.push_str(&format!("initial_control = {}\n", self.particle.initial.name()));
        s.push_str(&format!("grid_points = {}\n", self.grid_points));
        s.push_str(&format!("sdp_interp = {}\n", interp_name(&self.sdp_interp)));
        s.push_str(&format!("particle_step = {:?}\n", self.particle.step));
        s.push_str(&format!("particle_tolerance = {:?}\n", self.particle.tolerance));
        s.push_str(&format!("particle_max_iters = {}\n", self.particle.max_iters));
        s.push_str(&format!("halve_on_increase = {}\n", self.particle.halve_on_increase));
        s.push_str(&format!("costate_interp = {}\n", interp_name(&self.particle.costate_interp)));
        if let Some(b) = self.particle.costate_interp.bandwidth {
            s.push_str(&format!("costate_bandwidth = {b:?}\n"));
        }
        s.push_str(&format!("feedback_interp = {}\n", interp_name(&self.particle.feedback_interp)));
        s.push_str(&format!("tree_step = {:?}\n", self.tree.step));
        s.push_str(&format!("tree_tolerance = {:?}\n", self.tree.tolerance));
        s.push_str(&format!("tree_max_iters = {}\n", self.tree.max_iters));
        let factors: Vec<String> = self.branching.factors().iter().map(|b| b.to_string()).collect();
        s.push_str(&format!("branching = {}\n", factors.join(", ")));
        s
    }
}
