use std::path::Path;

use anyhow::anyhow;
use neuromesh::coexplore::{co_explore, CoExploreConfig, CoExploreError, Manifest, SnnCandidate};
use neuromesh::hw::{simulate as run_sim, ArchSpec, HwError, RunMode, SimOptions, TechParams};
use neuromesh::rl::{search as run_search, Environment, RewardSpec, SearchConfig, SearchError};
use neuromesh::space::{validate, SearchBounds};
use neuromesh::time::SimTime;
use neuromesh::workload::{random_input, SnnModel, SpikeTrace};
use neuromesh::{CoExploreResultF64, SearchResultF64};

use crate::manifest::{OutDir, RunManifest};
use crate::{CliError, CliResult, Common, CoexploreArgs, InputArgs, InputCtx, SearchArgs, SimulateArgs};

fn load_tech(common: &Common, m: &mut RunManifest) -> CliResult<TechParams> {
    match &common.tech {
        Some(p) => {
            m.input("tech", p);
            TechParams::load(p).input(|| format!("technology file {}", p.display()))
        }
        None => Ok(TechParams::default_180nm()),
    }
}

fn load_model(p: &Path, m: &mut RunManifest) -> CliResult<SnnModel> {
    m.input("model", p);
    SnnModel::load(p).input(|| format!("model file {}", p.display()))
}

fn load_input(a: &InputArgs, model: &SnnModel, seed: u64, m: &mut RunManifest) -> CliResult<SpikeTrace> {
    match &a.trace {
        Some(p) => {
            m.input("trace", p);
            let t = SpikeTrace::load(p).input(|| format!("trace file {}", p.display()))?;
            t.check_model(model).input(|| format!("trace file {}", p.display()))?;
            Ok(t)
        }
        None => {
            if !(0.0..=1.0).contains(&a.input_rate) {
                return Err(CliError::Input(anyhow!("--input-rate {} outside [0, 1]", a.input_rate)));
            }
            Ok(random_input(model, seed, a.input_rate))
        }
    }
}

fn load_bounds(p: &Path, m: &mut RunManifest) -> CliResult<SearchBounds> {
    m.input("bounds", p);
    SearchBounds::load(p).input(|| format!("bounds file {}", p.display()))
}

fn load_spec(p: &Path, m: &mut RunManifest) -> CliResult<RewardSpec<f64>> {
    m.input("reward_spec", p);
    RewardSpec::load(p).input(|| format!("reward spec {}", p.display()))
}

/// Architecture, trace and technology problems are the caller's inputs; the
/// rest are simulator failures.
fn classify(e: HwError) -> CliError {
    match e {
        HwError::InvalidArch(_) | HwError::ModelMismatch(_) | HwError::Tech(_) | HwError::Trace(_) => {
            CliError::Input(e.into())
        }
        _ => CliError::Runtime(anyhow::Error::from(e).context("simulation failed")),
    }
}

fn sim_options(common: &Common, time_limit_ns: Option<u64>) -> CliResult<SimOptions> {
    if common.workers == 0 {
        return Err(CliError::Input(anyhow!("--workers must be at least 1")));
    }
    Ok(SimOptions {
        workers: common.workers,
        time_limit: time_limit_ns.map(SimTime::from_ns),
        ..SimOptions::default()
    })
}

/// Splits a report into its CSV sections.
fn section(report: &str, name: &str) -> String {
    let mut out = String::new();
    let mut inside = false;
    for line in report.lines() {
        if line.starts_with('[') {
            inside = line == format!("[{name}]");
            continue;
        }
        if inside && !line.trim().is_empty() {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

pub fn simulate(a: &SimulateArgs, argv: &[String]) -> CliResult<()> {
    let c = &a.common;
    let mut m = RunManifest::new("simulate", argv, c.seed, c.workers, &c.out);
    let tech = load_tech(c, &mut m)?;
    let model = load_model(&a.model, &mut m)?;
    m.input("arch", &a.arch);
    let arch = ArchSpec::load(&a.arch)
        .and_then(|s| s.resolve(&model))
        .input(|| format!("architecture file {}", a.arch.display()))?;
    let trace = load_input(&a.input, &model, c.seed, &mut m)?;
    let opts = sim_options(c, a.time_limit_ns)?;
    let mode = if a.replay { RunMode::Replay(&trace) } else { RunMode::ClosedLoop };
    let input = trace.input_only();
    let out = OutDir::prepare(&c.out, c.force)?;
    let res = run_sim(&arch, &tech, &model, &input, mode, &opts).map_err(classify)?;
    let text = res.report.to_text();
    out.write("input_trace.txt", &input.to_text())?;
    out.write("output_trace.txt", &res.output.to_text())?;
    out.write("report.txt", &text)?;
    out.write("units.csv", &section(&text, "units"))?;
    out.write("layers.csv", &section(&text, "layers"))?;
    out.write("arch.txt", &arch.to_text())?;
    m.report = Some("report.txt".into());
    out.finish(&m)?;
    println!("{}", res.report.summary_line());
    Ok(())
}

fn search_summary(r: &SearchResultF64) -> String {
    let feasible = r.best_feasible().map(|h| h.episode.to_string()).unwrap_or_else(|| "none".into());
    format!(
        "format_version = 1\nepisodes = {}\nsimulations = {}\nbest_episode = {}\nbest_reward = {}\n\
         best_feasible_episode = {feasible}\nbest_arch = {}\n",
        r.history.len(),
        r.simulations,
        r.best_episode,
        r.best_reward,
        r.best_arch.short()
    )
}

pub fn search(a: &SearchArgs, argv: &[String]) -> CliResult<()> {
    let c = &a.common;
    let mut m = RunManifest::new("search", argv, c.seed, c.workers, &c.out);
    if !(0.0..=1.0).contains(&a.accuracy) {
        return Err(CliError::Input(anyhow!("--accuracy {} outside [0, 1]", a.accuracy)));
    }
    if a.episodes == 0 {
        return Err(CliError::Input(anyhow!("--episodes must be at least 1")));
    }
    let tech = load_tech(c, &mut m)?;
    let bounds = load_bounds(&a.bounds, &mut m)?;
    let spec = load_spec(&a.reward_spec, &mut m)?;
    let model = load_model(&a.model, &mut m)?;
    let input = load_input(&a.input, &model, c.seed, &mut m)?.input_only();
    let initial = match &a.initial_arch {
        Some(p) => {
            m.input("initial_arch", p);
            let arch = ArchSpec::load(p)
                .and_then(|s| s.resolve(&model))
                .input(|| format!("architecture file {}", p.display()))?;
            let v = validate(&arch, &bounds, &model);
            if !v.is_empty() {
                return Err(CliError::Input(anyhow!("{}: {}", p.display(), v.join("; "))));
            }
            arch
        }
        None => bounds.initial(&model).ok_or_else(|| {
            CliError::Input(anyhow!("{}: no architecture within the bounds holds the model", a.bounds.display()))
        })?,
    };
    let env = Environment { model: &model, input: &input, tech: &tech, bounds: &bounds, sim: sim_options(c, None)? };
    let out = OutDir::prepare(&c.out, c.force)?;
    let res = run_search(&initial, &env, a.accuracy, &spec, &SearchConfig::new(a.episodes, c.seed)).map_err(|e| match e {
        SearchError::InvalidInitial(_) | SearchError::Reward(_) | SearchError::NoAction(_) => CliError::Input(e.into()),
        other => CliError::Runtime(other.into()),
    })?;
    out.write("history.csv", &res.history_csv())?;
    out.write("best_arch.txt", &res.best_arch.to_text())?;
    out.write("search.txt", &search_summary(&res))?;
    if let Some(rep) = &res.history[res.best_episode].report {
        out.write("best_report.txt", &rep.to_text())?;
        m.report = Some("best_report.txt".into());
    }
    out.finish(&m)?;
    println!("best reward {} at episode {}: {}", res.best_reward, res.best_episode, res.best_arch.short());
    Ok(())
}

fn coexplore_summary(r: &CoExploreResultF64) -> String {
    let name = |i: Option<usize>| i.map(|i| r.outcomes[i].id.clone()).unwrap_or_else(|| "none".into());
    format!(
        "format_version = 1\nwinner = {}\nnearest_miss = {}\nepisodes_used = {}\n",
        name(r.best),
        name(r.nearest_miss),
        r.episodes_used
    )
}

pub fn coexplore(a: &CoexploreArgs, argv: &[String]) -> CliResult<()> {
    let c = &a.common;
    let mut m = RunManifest::new("coexplore", argv, c.seed, c.workers, &c.out);
    if a.budget == 0 {
        return Err(CliError::Input(anyhow!("--budget must be at least 1")));
    }
    let tech = load_tech(c, &mut m)?;
    let bounds = load_bounds(&a.bounds, &mut m)?;
    let spec = load_spec(&a.reward_spec, &mut m)?;
    m.input("manifest", &a.manifest);
    let manifest = Manifest::load(&a.manifest).input(|| format!("candidate manifest {}", a.manifest.display()))?;
    let mut candidates = Vec::with_capacity(manifest.candidates.len());
    for e in &manifest.candidates {
        let model = SnnModel::load(&e.model).input(|| format!("candidate `{}`: model file {}", e.id, e.model.display()))?;
        let input = match &e.trace {
            Some(p) => {
                let t = SpikeTrace::load(p).input(|| format!("candidate `{}`: trace file {}", e.id, p.display()))?;
                t.check_model(&model).input(|| format!("candidate `{}`: trace file {}", e.id, p.display()))?;
                t.input_only()
            }
            None => random_input(&model, e.input_seed, e.input_rate),
        };
        candidates.push(SnnCandidate { id: e.id.clone(), model, input });
    }
    let cfg = CoExploreConfig { reallocate: a.reallocate, sim: sim_options(c, None)?, ..CoExploreConfig::new(a.budget, c.seed) };
    let out = OutDir::prepare(&c.out, c.force)?;
    let res = co_explore(&candidates, &bounds, &tech, &spec, &manifest.provider(), &cfg).map_err(|e| match e {
        CoExploreError::Search { source: SearchError::InitialSimulation(_), .. } => CliError::Runtime(e.into()),
        other => CliError::Input(other.into()),
    })?;
    out.write("dispositions.csv", &res.disposition_csv())?;
    out.write("coexplore.txt", &coexplore_summary(&res))?;
    match res.winner() {
        Some(w) => {
            if let (Some(arch), Some(rep)) = (&w.arch, &w.report) {
                out.write("winner_arch.txt", &arch.to_text())?;
                out.write("winner_report.txt", &rep.to_text())?;
                m.report = Some("winner_report.txt".into());
            }
            println!("winner {}: {}", w.id, w.arch.as_ref().map(|a| a.short()).unwrap_or_default());
        }
        None => {
            let near = res.nearest_miss.map(|i| res.outcomes[i].id.as_str()).unwrap_or("none");
            println!("no candidate met the targets; nearest miss {near}");
        }
    }
    out.finish(&m)?;
    Ok(())
}
