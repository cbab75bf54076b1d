use std::hash::{Hash, Hasher};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use stochctl::csvio::{fmt_f64, CsvDoc, CsvTable};
use stochctl::dam::{build_dam_model, DamModel};
use stochctl::model::ProblemModel;
use stochctl::particle;
use stochctl::sampling::{draw_scenarios, split, Role, ScenarioSet};
use stochctl::scentree::{build_tree, node_scatter, solve_tree};
use stochctl::sdp::{expected_initial_cost, solve_sdp, uniform_grids, InnerSolver, Policy, StateGrid};
use stochctl::sim::{compare, simulate_policy, Scatter, SimulationReport};

use crate::rundir::{manifest_value, read_manifest, RunDir};
use crate::settings::Settings;
use crate::{Cli, Command, Common, Method, Usage};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(common) => gen(common, cli.quiet),
        Command::Solve {
            common,
            method,
            scenarios,
            max_iters,
            timings,
        } => solve(common, *method, scenarios.as_deref(), *max_iters, *timings, cli.quiet),
        Command::Compare { runs, out, late_from } => compare_runs(runs, out, *late_from, cli.quiet),
    }
}

fn config_label(common: &Common) -> String {
    common
        .config
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "(defaults)".into())
}

fn header(common: &Common, command: &str) -> Vec<(String, String)> {
    vec![
        ("command".into(), command.into()),
        ("config".into(), config_label(common)),
        ("seed".into(), common.seed.to_string()),
        ("n_scenarios".into(), common.n_scenarios.to_string()),
        ("out".into(), common.out.display().to_string()),
    ]
}

/// Runs `body` inside `run`; outputs are removed again if it fails.
fn guarded(mut run: RunDir, body: impl FnOnce(&mut RunDir) -> Result<()>) -> Result<()> {
    match body(&mut run) {
        Ok(()) => run.finish(),
        Err(e) => {
            run.abort();
            Err(e)
        }
    }
}

fn digest(text: &str) -> String {
    // fixed-key SipHash; only compared between runs of the same build
    let mut h = std::collections::hash_map::DefaultHasher::new();
    text.hash(&mut h);
    format!("{:016x}", h.finish())
}

fn draw(settings: &Settings, n: usize, seed: u64) -> Result<(ScenarioSet, ScenarioSet)> {
    if n == 0 {
        bail!(Usage("--n-scenarios must be at least 1".into()));
    }
    let train = draw_scenarios(&settings.dam.noise_model()?, n, seed)?;
    Ok(split(&train, seed)?)
}

fn gen(common: &Common, quiet: bool) -> Result<()> {
    let settings = Settings::load(common.config.as_deref())?;
    let run = RunDir::start(&common.out, header(common, "gen"))?;
    guarded(run, |run| {
        run.write_text("config.txt", &settings.to_text())?;
        let (train, test) = draw(&settings, common.n_scenarios, common.seed)?;
        for (name, set) in [("train.csv", &train), ("test.csv", &test)] {
            let p = run.path(name)?;
            set.write_csv(&p)?;
            run.record(p);
        }
        if !quiet {
            println!(
                "gen: {} training and {} test scenarios over {} stages in {}",
                train.len(),
                test.len(),
                train.horizon(),
                run.root().display()
            );
        }
        Ok(())
    })
}

fn load_scenarios(settings: &Settings, common: &Common, dir: Option<&Path>, model: &DamModel) -> Result<(ScenarioSet, ScenarioSet)> {
    let (train, test) = match dir {
        Some(d) => (
            ScenarioSet::read_csv(&d.join("train.csv"), Role::Train)?,
            ScenarioSet::read_csv(&d.join("test.csv"), Role::Test)?,
        ),
        None => draw(settings, common.n_scenarios, common.seed)?,
    };
    let dims = model.dims();
    for set in [&train, &test] {
        set.check_shape(model.horizon(), dims.state, dims.noise)
            .map_err(|e| Usage(format!("scenarios do not fit the configured model: {e}")))?;
    }
    Ok((train, test))
}

fn write_scatters(run: &mut RunDir, scatters: &[Scatter]) -> Result<()> {
    for (t, s) in scatters.iter().enumerate() {
        let p = run.path(&format!("scatter/stage_{t:03}.csv"))?;
        s.to_csv().write(&p)?;
        run.record(p);
    }
    Ok(())
}

fn write_policy(run: &mut RunDir, policy: &Policy) -> Result<()> {
    let dir = run.path("policy/stage_000.csv")?;
    for p in policy.write_dir(dir.parent().unwrap_or(run.root()))? {
        run.record(p);
    }
    Ok(())
}

fn write_simulation(run: &mut RunDir, model: &DamModel, policy: &Policy, test: &ScenarioSet) -> Result<SimulationReport> {
    let sim = simulate_policy(model, policy, test)?;
    let p = run.path("simulation.csv")?;
    sim.to_csv().write(&p)?;
    run.record(p);
    Ok(sim)
}

fn solve(common: &Common, method: Method, scenarios: Option<&Path>, max_iters: Option<usize>, timings: bool, quiet: bool) -> Result<()> {
    let mut settings = Settings::load(common.config.as_deref())?;
    if let Some(m) = max_iters {
        settings.particle.max_iters = m;
        settings.tree.max_iters = m;
    }
    let mut head = header(common, "solve");
    head.insert(1, ("method".into(), method.name().into()));
    head.push((
        "scenarios".into(),
        scenarios.map(|d| d.display().to_string()).unwrap_or_else(|| "(drawn from config and seed)".into()),
    ));
    let run = RunDir::start(&common.out, head)?;
    guarded(run, |run| {
        run.write_text("config.txt", &settings.to_text())?;
        let model = build_dam_model(settings.dam.clone())?;
        let (train, test) = load_scenarios(&settings, common, scenarios, &model)?;
        run.write_text("test_digest.txt", &format!("{}\n", digest(test.to_csv().as_str())))?;
        let dims = model.dims();
        let horizon = model.horizon();
        let start = Instant::now();
        info!("solving with {} on {} training scenarios", method.name(), train.len());
        let summary = match method {
            Method::Sdp => {
                let grid = StateGrid::new(settings.dam.x_min, settings.dam.x_max, settings.grid_points)?;
                let grids = uniform_grids(horizon, grid);
                let (table, policy) = solve_sdp(&model, &train, &grids, settings.sdp_interp, InnerSolver::default())?;
                let expected = expected_initial_cost(&table, &settings.dam.initial_law())?;
                let p = run.path("bellman.csv")?;
                table.to_csv().write(&p)?;
                run.record(p);
                write_policy(run, &policy)?;
                let sim = write_simulation(run, &model, &policy, &test)?;
                let scatters = (0..horizon)
                    .map(|t| Scatter::uniform(dims.state, dims.control, sim.states[t].clone(), sim.controls[t].clone()))
                    .collect::<stochctl::Result<Vec<_>>>()?;
                write_scatters(run, &scatters)?;
                format!(
                    "sdp: expected cost {:.6}, simulated cost {:.6} +- {:.6} on {} test scenarios",
                    expected,
                    sim.mean,
                    sim.std_err,
                    test.len()
                )
            }
            Method::Particle => {
                let result = particle::run(&model, &train, &settings.particle, None)?;
                for p in particle::write_outputs(&model, &result, run.root(), timings)? {
                    run.record(p);
                }
                write_policy(run, &result.policy)?;
                let sim = write_simulation(run, &model, &result.policy, &test)?;
                format!(
                    "particle: training cost {:.6} after {} iterations ({}), simulated cost {:.6} +- {:.6} on {} test scenarios",
                    result.cost,
                    result.reports.len(),
                    if result.converged { "converged" } else { "iteration limit" },
                    sim.mean,
                    sim.std_err,
                    test.len()
                )
            }
            Method::Tree => {
                let tree = build_tree(&train, &settings.branching, common.seed)?;
                let sol = solve_tree(&model, &tree, &settings.tree)?;
                let p = run.path("tree.csv")?;
                sol.tree.to_csv(dims.state, dims.control).write(&p)?;
                run.record(p);
                let scatters = (0..horizon).map(|t| node_scatter(&sol.tree, t)).collect::<stochctl::Result<Vec<_>>>()?;
                write_scatters(run, &scatters)?;
                let states: Vec<Vec<f64>> = scatters.iter().map(|s| s.states.clone()).collect();
                let controls: Vec<Vec<f64>> = scatters.iter().map(|s| s.controls.clone()).collect();
                let policy = Policy::fit(&model, &states, &controls, settings.tree_feedback)?;
                write_policy(run, &policy)?;
                let sim = write_simulation(run, &model, &policy, &test)?;
                format!(
                    "tree: expected cost {:.6} on {} nodes after {} iterations (residual {:.2e}, {}), simulated cost {:.6} +- {:.6} on {} test scenarios",
                    sol.cost,
                    sol.tree.nodes.len(),
                    sol.iterations,
                    sol.residual,
                    if sol.converged { "converged" } else { "iteration limit" },
                    sim.mean,
                    sim.std_err,
                    test.len()
                )
            }
        };
        if !quiet {
            println!("{summary}, wall time {:.2}s", start.elapsed().as_secs_f64());
        }
        Ok(())
    })
}

struct SolvedRun {
    dir: std::path::PathBuf,
    method: String,
    digest: String,
}

fn solved_run(dir: &Path) -> Result<SolvedRun> {
    let entries = read_manifest(dir)?;
    if manifest_value(&entries, "command") != Some("solve") || manifest_value(&entries, "status") != Some("complete") {
        bail!(Usage(format!("{} does not hold a completed solve run", dir.display())));
    }
    let method = manifest_value(&entries, "method").unwrap_or_default().to_string();
    let path = dir.join("test_digest.txt");
    let digest = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?
        .trim()
        .to_string();
    Ok(SolvedRun {
        dir: dir.to_path_buf(),
        method,
        digest,
    })
}

fn read_costs(path: &Path) -> Result<Vec<f64>> {
    let table = CsvTable::read(path)?;
    let col = table.column("cost")?;
    Ok(table
        .rows
        .iter()
        .map(|(line, row)| table.f64_at(*line, &row[col]))
        .collect::<stochctl::Result<Vec<_>>>()?)
}

fn compare_runs(dirs: &[std::path::PathBuf], out: &Path, late_from: usize, quiet: bool) -> Result<()> {
    let head = vec![
        ("command".into(), "compare".into()),
        (
            "runs".into(),
            dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(", "),
        ),
        ("late_from".into(), late_from.to_string()),
        ("out".into(), out.display().to_string()),
    ];
    let run = RunDir::start(out, head)?;
    guarded(run, |run| {
        let runs = dirs.iter().map(|d| solved_run(d)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&SolvedRun> = runs.iter().filter(|r| r.method == "sdp").collect();
        let reference = match refs.as_slice() {
            [one] => *one,
            [] => bail!(Usage("compare needs an sdp run as reference".into())),
            _ => bail!(Usage("compare takes exactly one sdp run".into())),
        };
        if let Some(other) = runs.iter().find(|r| r.digest != reference.digest) {
            bail!(Usage(format!(
                "{} was simulated on a different test set than {}",
                other.dir.display(),
                reference.dir.display()
            )));
        }
        let settings = Settings::load(Some(&reference.dir.join("config.txt")))?;
        let model = build_dam_model(settings.dam.clone())?;
        let policy = Policy::read_dir(&model, &reference.dir.join("policy"))?;
        let ref_costs = read_costs(&reference.dir.join("simulation.csv"))?;
        let ref_sim = SimulationReport::from_costs(ref_costs, Vec::new(), Vec::new());

        let mut summary = CsvDoc::new(
            "comparison-summary/v1",
            &["method", "run", "mean_cost", "std_err", "gap", "late_rms"],
        );
        let mut lines = Vec::new();
        let mut used_names: Vec<String> = Vec::new();
        for r in &runs {
            let scatters = (0..model.horizon())
                .map(|t| Scatter::read_csv(&r.dir.join(format!("scatter/stage_{t:03}.csv"))))
                .collect::<stochctl::Result<Vec<_>>>()?;
            let report = compare(&scatters, &policy)?;
            let mut name = format!("compare_{}.csv", r.method);
            let mut k = 2;
            while used_names.contains(&name) {
                name = format!("compare_{}_{k}.csv", r.method);
                k += 1;
            }
            used_names.push(name.clone());
            let p = run.path(&name)?;
            report.to_csv().write(&p)?;
            run.record(p);

            let sim = SimulationReport::from_costs(read_costs(&r.dir.join("simulation.csv"))?, Vec::new(), Vec::new());
            let gap = (sim.mean - ref_sim.mean) / ref_sim.mean.abs();
            let late = report.pooled_rms_from(late_from);
            summary.row(&[
                r.method.clone(),
                r.dir.display().to_string(),
                fmt_f64(sim.mean),
                fmt_f64(sim.std_err),
                fmt_f64(gap),
                late.map(fmt_f64).unwrap_or_default(),
            ]);
            lines.push(format!(
                "{:<9} cost {:>10.6} +- {:.6}  gap {:>+8.3}%  RMS vs sdp feedback for t >= {late_from}: {}",
                r.method,
                sim.mean,
                sim.std_err,
                100.0 * gap,
                late.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into())
            ));
        }
        let p = run.path("summary.csv")?;
        summary.write(&p)?;
        run.record(p);
        if !quiet {
            for l in lines {
                println!("{l}");
            }
        }
        Ok(())
    })
}
