use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drivestyle::finetune::Variant;
use drivestyle::io::write_atomic;
use drivestyle::pipeline::{self, FinetuneInputs, Layout, PipelineConfig};
use drivestyle::{Error, ErrorKind, PlannerParams, ScenarioSpec};

/// Driving-style pipeline. Every stage reads and writes files under --out.
#[derive(Debug, Parser)]
#[command(name = "drivestyle", version)]
struct Cli {
    /// Pipeline configuration (JSON). Missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Number of selected indicators, overriding the config.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Worker threads (capped at the available cores).
    #[arg(long, global = true)]
    parallel: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the driver x scenario corpus.
    GenData,
    /// Compute raw and scenario-normalized indicators.
    Extract,
    /// Rank indicators and keep the top k.
    SelectIndicators,
    /// Intra- vs inter-driver similarity of the selected indicators.
    EvalStyle,
    /// Train the reward models and measure their fidelity.
    TrainReward,
    /// Pretrain the planner on expert rollouts.
    PretrainPlanner,
    /// Fine-tune the pretrained planner towards target drivers.
    Finetune {
        /// Target driver; defaults to every configured target.
        #[arg(long)]
        driver: Option<String>,
        /// dft, pdsa-wb or pdsa; defaults to all three.
        #[arg(long)]
        variant: Option<Variant>,
        /// Skip the closed-loop safety comparison.
        #[arg(long)]
        no_safety: bool,
    },
    /// Closed-loop rollouts of a planner checkpoint.
    Rollout {
        /// Scenario id; defaults to every configured scenario.
        #[arg(long)]
        scenario: Option<String>,
        /// Planner checkpoint; defaults to the pretrained planner.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output subdirectory under rollouts/.
        #[arg(long)]
        name: Option<String>,
        /// Single rollout seed; defaults to seeds 0..n from the config.
        #[arg(long)]
        rollout_seed: Option<u64>,
        #[arg(long)]
        densify_rate: Option<usize>,
        #[arg(long)]
        no_override: bool,
    },
    /// Markdown summary of every artifact present.
    Report,
    /// Run every stage in order.
    All,
}

fn load_config(cli: &Cli) -> drivestyle::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_json(&std::fs::read(path)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.k {
        cfg.k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_name(path: &Path) -> String {
    let parts: Vec<String> = path
        .parent()
        .into_iter()
        .flat_map(|p| p.iter().rev().take(2))
        .map(|c| c.to_string_lossy().into_owned())
        .collect();
    match parts.as_slice() {
        [variant, driver] => format!("{driver}-{variant}"),
        _ => path.file_stem().map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned()),
    }
}

fn run(cli: &Cli) -> drivestyle::Result<()> {
    let cfg = load_config(cli)?;
    let layout = Layout::new(&cli.out);
    match &cli.command {
        Command::GenData => {
            let corpus = pipeline::gen_data(&cfg)?;
            pipeline::write_corpus(&corpus, &layout.corpus())?;
            println!("wrote {} logs to {}", corpus.logs.len(), layout.corpus().display());
        }
        Command::Extract => {
            let corpus = pipeline::load_corpus(&cfg, &layout)?;
            let raw = pipeline::extract(&corpus);
            pipeline::write_indicators(&layout.indicators_raw(), &raw)?;
            pipeline::write_indicators(&layout.indicators(), &drivestyle::metrics::scenario_minmax(&raw))?;
            println!("wrote {} indicator rows to {}", raw.len(), layout.indicators().display());
        }
        Command::SelectIndicators => {
            let selection = pipeline::select(&pipeline::read_indicators(&layout.indicators())?, cfg.k)?;
            write_atomic(&layout.selection(), &selection.to_json())?;
            println!("selected: {}", selection.selected.join(", "));
        }
        Command::EvalStyle => {
            let normalized = pipeline::read_indicators(&layout.indicators())?;
            let sim = pipeline::eval_style(&normalized, &pipeline::load_selection(&layout)?, cfg.stage_seed("similarity"))?;
            write_atomic(&layout.similarity(), &sim.to_json())?;
            let show = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"));
            println!("intra MMDSS {} KL {}", show(sim.intra.mmdss), show(sim.intra.kl));
            println!("inter MMDSS {} KL {}", show(sim.inter.mmdss), show(sim.inter.kl));
        }
        Command::TrainReward => {
            let corpus = pipeline::load_corpus(&cfg, &layout)?;
            let styles = pipeline::load_styles(&layout)?;
            let rewards = pipeline::train_rewards(&cfg, &corpus, &styles)?;
            pipeline::write_rewards(&layout, &rewards)?;
            let fid = pipeline::reward_fidelity(&rewards.full, &corpus, &styles, cfg.reward.stride, cfg.stage_seed("similarity"))?;
            pipeline::write_json(&layout.fidelity(), &fid)?;
            println!("fidelity |delta| intra {:.4} inter {:.4}", fid.delta_intra, fid.delta_inter);
        }
        Command::PretrainPlanner => {
            let corpus = pipeline::load_corpus(&cfg, &layout)?;
            let (planner, curve) = pipeline::pretrain_planner(&cfg, &corpus.manifest.scenarios)?;
            planner.save(&layout.planner())?;
            pipeline::write_json(&layout.planner_curve(), &curve)?;
            println!("final trajectory loss {:.4}", curve.trajectory.last().copied().unwrap_or(f64::NAN));
        }
        Command::Finetune { driver, variant, no_safety } => {
            let corpus = pipeline::load_corpus(&cfg, &layout)?;
            let styles = pipeline::load_styles(&layout)?;
            let rewards = pipeline::load_rewards(&layout)?;
            let planner = PlannerParams::load(&layout.planner())?;
            let scenarios = corpus.manifest.scenarios.clone();
            let baseline = if *no_safety {
                None
            } else {
                Some(pipeline::safety_summary(&planner, &scenarios, cfg.rollout.seeds, cfg.rollout.densify_rate)?)
            };
            let drivers = driver.clone().map_or_else(|| pipeline::targets(&cfg, &styles), |d| vec![d]);
            let variants = variant.map_or_else(|| Variant::ALL.to_vec(), |v| vec![v]);
            for d in &drivers {
                let data = pipeline::target_data(&cfg, &corpus, &styles, d)?;
                let inputs = FinetuneInputs { rewards: &rewards, data: &data, scenarios: &scenarios };
                for &v in &variants {
                    let (tuned, report) = pipeline::run_finetune(&cfg, &planner, &inputs, d, v, baseline.as_ref())?;
                    pipeline::write_finetune(&layout, &tuned, &report)?;
                    let show = |x: Option<f64>| x.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"));
                    println!("{d} {v}: MMDSS {} -> {}", show(report.pre_mmdss), show(report.post_mmdss));
                }
            }
        }
        Command::Rollout { scenario, checkpoint, name, rollout_seed, densify_rate, no_override } => {
            let path = checkpoint.clone().unwrap_or_else(|| layout.planner());
            let planner = PlannerParams::load(&path)?;
            let name = name.clone().unwrap_or_else(|| match checkpoint {
                Some(p) => checkpoint_name(p),
                None => "pretrained".into(),
            });
            let scenarios = match scenario {
                Some(id) => vec![ScenarioSpec::builtin(id)?],
                None => cfg.scenario_specs()?,
            };
            let seeds: Vec<u64> = rollout_seed.map_or_else(|| (0..cfg.rollout.seeds).collect(), |s| vec![s]);
            let rate = densify_rate.unwrap_or(cfg.rollout.densify_rate);
            let runs = pipeline::run_rollouts(&planner, &scenarios, &seeds, rate, !no_override)?;
            let dir = layout.rollout_dir(&name);
            pipeline::write_rollouts(&dir, &runs)?;
            for (_, r) in &runs {
                println!(
                    "{} seed {}: completion {:.3} collisions {} score {:.1}",
                    r.scenario_id, r.seed, r.metrics.route_completion, r.metrics.collisions, r.metrics.driving_score
                );
            }
        }
        Command::Report => {
            let md = pipeline::report(&layout)?;
            write_atomic(&layout.report(), md.as_bytes())?;
            print!("{md}");
        }
        Command::All => {
            pipeline::run_all(&cfg, &layout)?;
            println!("wrote {}", layout.report().display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Input => 2,
        ErrorKind::Numeric => 3,
        ErrorKind::Io => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.parallel {
        let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.clamp(1, cores)).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
