//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::ddqn::{self, train::write_curve_csv, Agent, SchedulingTask};
use crate::error::{Error, Result};
use crate::observations::{
    write_observation_csv, ObservationCounter, ObservationRow, OBS_COLLABORATOR_COUNTS, OBS_XIS,
};
use crate::rng::derive_seed;
use crate::scenario::{generate_scenario, ScenarioConfig};
use crate::schedulers::{
    bandwidth_sweep, baseline_by_name, case_study, evaluate, format_reports, write_reports_csv,
    Learned, MetricsReport, Policy, RandomPolicy,
};

#[derive(Debug, Parser)]
#[command(name = "v2x-sched", version, about = "Channel- and semantics-aware V2X scheduling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML experiment config; omitted means all defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for evaluation episodes.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the Q-network scheduler.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate policies at the configured bandwidth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated subset of nearest, rr, max_rate, random, schedcp.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate policies over the configured bandwidth list.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Trace one forced-occlusion scenario slot by slot.
    CaseStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Baseline used when no checkpoint is given.
        #[arg(long, default_value = "max_rate")]
        policy: String,
        #[arg(long, default_value_t = 0)]
        scenario_seed: u64,
    },
    /// Tabulate true-to-false and violation probabilities.
    ValidateObs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

fn resolve(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = common.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if cfg.out_dir.as_os_str().is_empty() {
        cfg.out_dir = PathBuf::from("out");
    }
    if common.jobs == 0 {
        return Err(Error::config("--jobs must be >= 1"));
    }
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok((cfg, out))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

fn snapshot(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    write_file(&out.join("resolved_config.toml"), cfg.to_toml().as_bytes())
}

fn load_agent(path: &Path, cfg: &ExperimentConfig) -> Result<Agent> {
    let n = cfg.scenario.n_collaborators;
    let dims = cfg
        .train
        .layer_dims(4 * n, n + usize::from(cfg.env.allow_idle));
    Agent::load(path, Some(&dims), &cfg.train)
}

fn build_policies(
    names: &[String],
    checkpoint: Option<&Path>,
    cfg: &ExperimentConfig,
) -> Result<Vec<Box<dyn Policy>>> {
    let mut out: Vec<Box<dyn Policy>> = Vec::new();
    for name in names {
        if name == "schedcp" {
            let ck = checkpoint.ok_or_else(|| Error::config("policy 'schedcp' needs --checkpoint"))?;
            out.push(Box::new(Learned::new(load_agent(ck, cfg)?)));
        } else {
            out.push(baseline_by_name(name, cfg.eval.nearest_includes_rsu)?);
        }
    }
    Ok(out)
}

fn policy_names(explicit: &Option<Vec<String>>, checkpoint: Option<&Path>, cfg: &ExperimentConfig) -> Vec<String> {
    match explicit {
        Some(p) => p.clone(),
        None => {
            let mut p = cfg.eval.policies.clone();
            if checkpoint.is_some() && !p.iter().any(|n| n == "schedcp") {
                p.push("schedcp".into());
            }
            p
        }
    }
}

pub fn cmd_train(common: &Common, episodes: Option<usize>) -> Result<PathBuf> {
    let (mut cfg, out) = resolve(common)?;
    if let Some(e) = episodes {
        cfg.train.episodes = e;
    }
    snapshot(&cfg, &out)?;
    let mut task = SchedulingTask::new(
        cfg.channel.clone(),
        cfg.env.clone(),
        cfg.scenario.clone(),
        cfg.seed,
        cfg.train.validation_scenarios,
    )?;
    let res = ddqn::train(&mut task, &cfg.train)?;
    let ck = out.join("checkpoint.bin");
    res.agent.save(&ck)?;
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, &res.curve).map_err(|e| Error::io(&out, e))?;
    write_file(&out.join("curve.csv"), &buf)?;
    Ok(ck)
}

fn run_eval(
    common: &Common,
    checkpoint: Option<&Path>,
    policies: &Option<Vec<String>>,
    episodes: Option<usize>,
    sweep: bool,
) -> Result<Vec<MetricsReport>> {
    let (mut cfg, out) = resolve(common)?;
    if let Some(e) = episodes {
        cfg.eval.episodes = e;
    }
    snapshot(&cfg, &out)?;
    let names = policy_names(policies, checkpoint, &cfg);
    let pols = build_policies(&names, checkpoint, &cfg)?;
    let setup = cfg.eval_setup();
    let reports = if sweep {
        let refs: Vec<&dyn Policy> = pols.iter().map(|p| p.as_ref()).collect();
        bandwidth_sweep(&refs, &cfg.eval.bandwidths_hz, &setup, common.jobs)?
    } else {
        pols.iter()
            .map(|p| evaluate(p.as_ref(), &setup, common.jobs))
            .collect::<Result<Vec<_>>>()?
    };
    let mut buf = Vec::new();
    write_reports_csv(&mut buf, &reports).map_err(|e| Error::io(&out, e))?;
    let name = if sweep { "sweep.csv" } else { "metrics.csv" };
    write_file(&out.join(name), &buf)?;
    print!("{}", format_reports(&reports));
    Ok(reports)
}

pub fn cmd_case_study(
    common: &Common,
    checkpoint: Option<&Path>,
    policy: &str,
    scenario_seed: u64,
) -> Result<PathBuf> {
    let (cfg, out) = resolve(common)?;
    snapshot(&cfg, &out)?;
    let pol: Box<dyn Policy> = match checkpoint {
        Some(ck) => Box::new(Learned::new(load_agent(ck, &cfg)?)),
        None => build_policies(&[policy.to_string()], None, &cfg)?.remove(0),
    };
    let scfg = ScenarioConfig {
        force_occlusion: true,
        ..cfg.scenario.clone()
    };
    let world = generate_scenario(&scfg, scenario_seed)?;
    let env_seed = derive_seed(cfg.seed, "case-study", scenario_seed);
    let trace = case_study(world, env_seed, pol.as_ref(), &cfg.channel, &cfg.env, &scfg)?;
    let path = out.join("case_trace.json");
    write_file(&path, trace.to_json().as_bytes())?;
    let maps = out.join("maps");
    fs::create_dir_all(&maps).map_err(|e| Error::io(&maps, e))?;
    for (t, m) in trace.ego_maps.iter().enumerate() {
        write_file(&maps.join(format!("ego_t{t:02}.csv")), m.to_csv().as_bytes())?;
    }
    Ok(path)
}

/// Runs random-policy episodes and accumulates fusion events.
pub fn observation_counter(cfg: &ExperimentConfig, scenario: &ScenarioConfig, episodes: usize, stream: u64) -> Result<ObservationCounter> {
    let mut c = ObservationCounter::new(cfg.env.loss.zeta, &OBS_XIS);
    for k in 0..episodes {
        let ws = derive_seed(cfg.seed, "obs-world", stream * 1_000_003 + k as u64);
        let world = generate_scenario(scenario, ws)?;
        let (mut env, mut state) = crate::env::Env::reset(world, ws, &cfg.channel, &cfg.env, &scenario.confidence)?;
        let mut prng = crate::rng::stream(ws, crate::rng::STREAM_EVAL, 0);
        let distances = env.distances();
        let rsu: Vec<bool> = env.world().units[1..].iter().map(|u| u.is_rsu).collect();
        loop {
            let rates = env.slot_start_rates();
            let ctx = crate::schedulers::PolicyContext {
                state: &state,
                distances: &distances,
                slot_start_rates: &rates,
                is_rsu: &rsu,
                slot: env.slot(),
            };
            let a = RandomPolicy.act(&ctx, &mut prng);
            let prev = env.ego_map().clone();
            let o = env.step(a)?;
            c.record(&prev, env.ego_map(), env.gt())?;
            state = o.state;
            if o.done {
                break;
            }
        }
    }
    Ok(c)
}

pub fn observation_rows(cfg: &ExperimentConfig, episodes: usize) -> Result<Vec<ObservationRow>> {
    let mut rows = Vec::new();
    let mut default_counter = None;
    for &n in &OBS_COLLABORATOR_COUNTS {
        let scenario = ScenarioConfig {
            n_collaborators: n,
            ..cfg.scenario.clone()
        };
        let c = observation_counter(cfg, &scenario, episodes, n as u64)?;
        let s = c.stats();
        rows.push(ObservationRow {
            quantity: "true_to_false_prob".into(),
            parameter: format!("N={n}"),
            all_cells: s.true_to_false_prob,
            gt_positive_cells: s.true_to_false_prob_positive,
        });
        if n == cfg.scenario.n_collaborators {
            default_counter = Some(c);
        }
    }
    let c = match default_counter {
        Some(c) => c,
        None => observation_counter(cfg, &cfg.scenario, episodes, 0)?,
    };
    let s = c.stats();
    for (k, &(xi, p)) in s.violation_prob.iter().enumerate() {
        rows.push(ObservationRow {
            quantity: "violation_prob".into(),
            parameter: format!("xi={xi}"),
            all_cells: p,
            gt_positive_cells: s.violation_prob_positive[k].1,
        });
    }
    Ok(rows)
}

pub fn cmd_validate_obs(common: &Common, episodes: Option<usize>) -> Result<PathBuf> {
    let (cfg, out) = resolve(common)?;
    snapshot(&cfg, &out)?;
    let rows = observation_rows(&cfg, episodes.unwrap_or(cfg.eval.obs_episodes))?;
    let mut buf = Vec::new();
    write_observation_csv(&mut buf, &rows).map_err(|e| Error::io(&out, e))?;
    let path = out.join("observations.csv");
    write_file(&path, &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(path)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, episodes } => {
            let ck = cmd_train(&common, episodes)?;
            println!("wrote {}", ck.display());
        }
        Command::Eval {
            common,
            checkpoint,
            policies,
            episodes,
        } => {
            run_eval(&common, checkpoint.as_deref(), &policies, episodes, false)?;
        }
        Command::Sweep {
            common,
            checkpoint,
            policies,
            episodes,
        } => {
            run_eval(&common, checkpoint.as_deref(), &policies, episodes, true)?;
        }
        Command::CaseStudy {
            common,
            checkpoint,
            policy,
            scenario_seed,
        } => {
            let p = cmd_case_study(&common, checkpoint.as_deref(), &policy, scenario_seed)?;
            println!("wrote {}", p.display());
        }
        Command::ValidateObs { common, episodes } => {
            cmd_validate_obs(&common, episodes)?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
