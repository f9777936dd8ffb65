//! `rlc-lab`: dataset generation, single trainings, sweeps, plotting, and
//! the verification suite, from one binary.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use rlc_lab::baselines::{DeepSets, Gin};
use rlc_lab::error::{Error, Result};
use rlc_lab::experiment::{
    emit_csv, emit_svg, parse_csv, run_sweep, ExperimentConfig, RunResult,
};
use rlc_lab::samplers::{RGraphC, RSetC};
use rlc_lab::tasks::{
    gen_connectivity_dataset, gen_set_dataset, write_dataset, SetTask, Split, SplitSizes, TaskKind,
};
use rlc_lab::train::{train_baseline, train_rlc, TrainConfig};
use rlc_lab::verify::verify;

#[derive(Parser)]
#[command(
    name = "rlc-lab",
    about = "Randomized linear classifiers: datasets, training, sweeps, plots, verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate datasets and write them under the output directory.
    Gen(SweepArgs),
    /// Train both models once at the first grid size and print the reports.
    Train(SweepArgs),
    /// Run the full sweep; writes results.csv and plot.svg to the output directory.
    Sweep(SweepArgs),
    /// Re-render plot.svg from an existing results.csv in the output directory.
    Plot(SweepArgs),
    /// Run the verification suite and print one verdict per check.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct SweepArgs {
    /// Task: sorting | sign | connectivity.
    #[arg(long)]
    experiment: Option<String>,
    /// Comma-separated size grid, e.g. 5,9,15.
    #[arg(long)]
    sizes: Option<String>,
    /// Independent runs per grid size.
    #[arg(long)]
    runs: Option<usize>,
    /// Hidden width of every hypernetwork / baseline MLP.
    #[arg(long)]
    hidden: Option<usize>,
    /// Also evaluate set models out-of-distribution at twice the set size.
    #[arg(long)]
    ood: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Root seed of the sweep.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// TOML shape of `--config`; every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    experiment: Option<String>,
    sizes: Option<Vec<usize>>,
    runs: Option<usize>,
    hidden: Option<usize>,
    ood: Option<bool>,
    seed: Option<u64>,
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Usage(format!("bad size '{p}' in --sizes")))
        })
        .collect()
}

fn resolve_config(args: &SweepArgs) -> Result<ExperimentConfig> {
    let file: ConfigFile = match &args.config {
        Some(path) => toml::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::Parse(format!("config {}: {e}", path.display())))?,
        None => ConfigFile::default(),
    };
    let experiment_name = args
        .experiment
        .clone()
        .or(file.experiment)
        .ok_or_else(|| Error::Usage("--experiment (or config) is required".into()))?;
    let experiment = TaskKind::parse(&experiment_name)?;
    let mut cfg = ExperimentConfig::for_task(experiment);
    if let Some(sizes) = &args.sizes {
        cfg.size_grid = parse_sizes(sizes)?;
    } else if let Some(sizes) = file.sizes {
        cfg.size_grid = sizes;
    }
    if let Some(runs) = args.runs.or(file.runs) {
        cfg.runs = runs;
    }
    if let Some(hidden) = args.hidden.or(file.hidden) {
        cfg.hidden_width = hidden;
    }
    cfg.ood = args.ood || file.ood.unwrap_or(false);
    if let Some(seed) = args.seed.or(file.seed) {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn make_split(cfg: &ExperimentConfig, size: usize, seed: u64) -> Result<Split<f64>> {
    match cfg.experiment {
        TaskKind::Sorting => gen_set_dataset(SetTask::Sorting, size, SplitSizes::default(), seed),
        TaskKind::Sign => gen_set_dataset(SetTask::Sign, size, SplitSizes::default(), seed),
        TaskKind::Connectivity => gen_connectivity_dataset(size, SplitSizes::default(), seed),
    }
}

fn cmd_gen(args: &SweepArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    fs::create_dir_all(&args.out)?;
    for &size in &cfg.size_grid {
        let split = make_split(&cfg, size, cfg.seed)?;
        for (part, ds) in [
            ("train", &split.train),
            ("val", &split.validation),
            ("test", &split.test),
        ] {
            let path = args
                .out
                .join(format!("{}_{size}_{part}.txt", cfg.experiment.name()));
            let mut w = BufWriter::new(fs::File::create(&path)?);
            write_dataset(ds, &mut w)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_train(args: &SweepArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    let size = cfg.size_grid[0];
    let split = make_split(&cfg, size, cfg.seed)?;
    fs::create_dir_all(&args.out)?;
    match cfg.experiment {
        TaskKind::Sorting | TaskKind::Sign => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut model: RSetC<f64> = RSetC::init(size, 1, cfg.hidden_width, &mut rng)?;
            let report = train_rlc(&mut model, &split, &TrainConfig::rlc_sets(cfg.seed))?;
            println!("rsetc: {}", report.to_json());
            fs::write(args.out.join("rsetc_report.json"), report.to_json())?;

            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut baseline: DeepSets<f64> =
                DeepSets::init(size, 1, cfg.hidden_width, &mut rng)?;
            let report =
                train_baseline(&mut baseline, &split, &TrainConfig::deep_sets(cfg.seed))?;
            println!("deepsets: {}", report.to_json());
            fs::write(args.out.join("deepsets_report.json"), report.to_json())?;
        }
        TaskKind::Connectivity => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut model: RGraphC<f64> = RGraphC::init(size, cfg.hidden_width, 3, &mut rng)?;
            let report = train_rlc(&mut model, &split, &TrainConfig::rlc_graphs(cfg.seed))?;
            println!("rgraphc: {}", report.to_json());
            fs::write(args.out.join("rgraphc_report.json"), report.to_json())?;

            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut baseline: Gin<f64> = Gin::init(size, cfg.hidden_width, &mut rng)?;
            let report = train_baseline(&mut baseline, &split, &TrainConfig::gin(cfg.seed))?;
            println!("gin: {}", report.to_json());
            fs::write(args.out.join("gin_report.json"), report.to_json())?;
        }
    }
    Ok(())
}

fn write_outputs(results: &[RunResult], title: &str, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("results.csv");
    let mut w = BufWriter::new(fs::File::create(&csv_path)?);
    emit_csv(results, &mut w)?;
    println!("wrote {}", csv_path.display());
    let svg_path = out_dir.join("plot.svg");
    let mut w = BufWriter::new(fs::File::create(&svg_path)?);
    emit_svg(results, title, &mut w)?;
    println!("wrote {}", svg_path.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<bool> {
    let cfg = resolve_config(args)?;
    let outcome = run_sweep(&cfg)?;
    for failure in &outcome.failures {
        eprintln!("run failed: {failure}");
    }
    write_outputs(&outcome.results, cfg.experiment.name(), &args.out)?;
    Ok(outcome.failures.is_empty())
}

fn cmd_plot(args: &SweepArgs) -> Result<()> {
    let csv_path = args.out.join("results.csv");
    let results = parse_csv(BufReader::new(fs::File::open(&csv_path)?))?;
    let title = results
        .first()
        .map(|r| r.experiment.clone())
        .unwrap_or_else(|| "sweep".to_string());
    let svg_path = args.out.join("plot.svg");
    let mut w = BufWriter::new(fs::File::create(&svg_path)?);
    emit_svg(&results, &title, &mut w)?;
    println!("wrote {}", svg_path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen(args) => cmd_gen(&args).map(|()| true),
        Command::Train(args) => cmd_train(&args).map(|()| true),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Plot(args) => cmd_plot(&args).map(|()| true),
        Command::Verify { seed } => {
            let report = verify(seed)?;
            print!("{}", report.render());
            Ok(report.all_passed())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
