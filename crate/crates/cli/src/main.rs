use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coopsched::harness::{
    cmd_bench_scaling, cmd_gen, cmd_run, cmd_score, ExperimentConfig, HarnessError,
};

#[derive(Parser)]
#[command(
    name = "coopsched",
    version,
    about = "Cooperative perception scheduling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// gen: base scenario seed. run/score: the single run seed.
    /// bench-scaling: scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, filter and export scenes.
    Gen(Common),
    /// Replay the dataset under every policy, range and seed.
    Run(Common),
    /// Time the parallel engine across agent counts.
    BenchScaling {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ascending agent counts.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Re-score the detection logs of the last run.
    Score(Common),
}

enum Mode {
    Gen,
    Run,
    Bench,
    Score,
}

fn load(common: &Common, mode: &Mode) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match (&common.config, mode) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Mode::Bench) => {
            ExperimentConfig::from_json(r#"{"policies": [{"name": "no_fusion"}]}"#)?
        }
        (None, _) => return Err(HarnessError::Config("--config is required".into())),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(s) = common.seed {
        match mode {
            Mode::Run | Mode::Score => cfg.seeds = vec![s],
            Mode::Gen | Mode::Bench => cfg.seed = s,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Gen(common) => {
            let cfg = load(&common, &Mode::Gen)?;
            let s = cmd_gen(&cfg)?;
            println!(
                "dataset {}: {} scenes ({} generated), {} frames, {} samples, {} boxes",
                cfg.dataset_dir().display(),
                s.scenes,
                s.generated,
                s.frames,
                s.samples,
                s.boxes
            );
        }
        Command::Run(common) => {
            let cfg = load(&common, &Mode::Run)?;
            let r = cmd_run(&cfg)?;
            print!("{}", coopsched::harness::results_markdown(&r));
            println!(
                "{} cells written to {}; max bytes per ego-frame {}",
                r.cells.len(),
                cfg.results_dir().display(),
                r.max_ego_frame_bytes()
            );
        }
        Command::Score(common) => {
            let cfg = load(&common, &Mode::Score)?;
            let rows = cmd_score(&cfg)?;
            for r in &rows {
                match &r.metrics {
                    Some(m) => println!("{}: mAP {:.4} NDS {:.4}", r.key, m.map, m.nds),
                    None => println!("{}: nothing to score", r.key),
                }
            }
        }
        Command::BenchScaling { common, counts } => {
            let cfg = load(&common, &Mode::Bench)?;
            let counts = counts.unwrap_or_else(|| cfg.scaling.agent_counts.clone());
            let report = cmd_bench_scaling(&counts, cfg.seed, cfg.workers, cfg.scaling.repeats)?;
            let csv = report.to_csv();
            print!("{csv}");
            println!("{}", report.fit_summary());
            if common.out.is_some() || common.config.is_some() {
                let dir = &cfg.output_dir;
                fs::create_dir_all(dir)
                    .map_err(|e| HarnessError::Runtime(format!("{}: {e}", dir.display())))?;
                let path = dir.join("scaling.csv");
                fs::write(&path, csv)
                    .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
