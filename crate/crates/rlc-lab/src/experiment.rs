//! Experiment sweeps: train the invariant sampler and its matching baseline
//! over a size grid with repeated seeds, then emit a CSV of per-run results
//! and a hand-written SVG plot of mean accuracy with ±1 std error bars.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{DeepSets, Gin};
use crate::error::{Error, Result};
use crate::samplers::{RGraphC, RSetC};
use crate::tasks::{
    gen_connectivity_dataset, gen_set_dataset, gen_set_ood_test, Dataset, SetTask, Split,
    SplitSizes, TaskKind,
};
use crate::train::{
    constant_classifier_test_accuracy, evaluate_baseline, evaluate_rlc, train_baseline, train_rlc,
    TrainConfig,
};

/// One full sweep: `runs` independent trainings of both models at each grid
/// size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub experiment: TaskKind,
    pub size_grid: Vec<usize>,
    pub hidden_width: usize,
    pub runs: usize,
    /// Also evaluate set models out-of-distribution at twice the set size.
    pub ood: bool,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Defaults matching the headline experiments.
    pub fn for_task(experiment: TaskKind) -> Self {
        let (size_grid, hidden_width) = match experiment {
            TaskKind::Sorting | TaskKind::Sign => (vec![5, 9, 15], 5),
            TaskKind::Connectivity => (vec![10, 20, 30], 2),
        };
        ExperimentConfig { experiment, size_grid, hidden_width, runs: 5, ood: false, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.size_grid.is_empty() {
            return Err(Error::Config("size grid must be nonempty".into()));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden width must be >= 1".into()));
        }
        match self.experiment {
            TaskKind::Sorting | TaskKind::Sign => {
                if self.size_grid.iter().any(|&d| d % 2 == 0) {
                    return Err(Error::Config("set sizes must be odd".into()));
                }
                Ok(())
            }
            TaskKind::Connectivity => {
                if self.ood {
                    return Err(Error::Config(
                        "out-of-distribution evaluation only applies to set tasks".into(),
                    ));
                }
                if self.size_grid.iter().any(|&n| n < 3) {
                    return Err(Error::Config("connectivity needs n >= 3".into()));
                }
                Ok(())
            }
        }
    }
}

/// One trained model (or the constant baseline) evaluated once.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub experiment: String,
    pub model: String,
    pub size: usize,
    pub seed: u64,
    pub test_acc: f64,
    pub ood_acc: Option<f64>,
    pub param_count: usize,
    pub const_acc: f64,
}

/// Sweep output: rows in deterministic (size, run, model) order plus a
/// description of every cell that failed. A failed cell never aborts the
/// remaining cells.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub results: Vec<RunResult>,
    pub failures: Vec<String>,
}

/// Worker count for the sweep pool: `RLC_LAB_THREADS` if set, otherwise the
/// available parallelism (at least 1 either way).
pub fn worker_count() -> usize {
    if let Ok(v) = std::env::var("RLC_LAB_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Per-cell root seed: mixes the sweep seed with the grid size and run index
/// so cells are independent but reproducible in isolation.
pub fn cell_seed(root: u64, size: usize, run: usize) -> u64 {
    root ^ (size as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (run as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03)
}

fn run_set_cell(cfg: &ExperimentConfig, size: usize, run: usize) -> Result<Vec<RunResult>> {
    let task = match cfg.experiment {
        TaskKind::Sorting => SetTask::Sorting,
        TaskKind::Sign => SetTask::Sign,
        TaskKind::Connectivity => unreachable!("set cell on connectivity"),
    };
    let seed = cell_seed(cfg.seed, size, run);
    let split: Split<f64> = gen_set_dataset(task, size, SplitSizes::default(), seed)?;
    let ood_test: Option<Dataset<f64>> = if cfg.ood {
        Some(gen_set_ood_test(task, 2 * size, SplitSizes::default().test, seed))
    } else {
        None
    };
    let const_acc = constant_classifier_test_accuracy(&split.train, &split.test)?;
    let name = cfg.experiment.name().to_string();
    let mut rows = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e7c);
    let mut rsetc: RSetC<f64> = RSetC::init(size, 1, cfg.hidden_width, &mut rng)?;
    let train_cfg = TrainConfig::rlc_sets(seed);
    let report = train_rlc(&mut rsetc, &split, &train_cfg)?;
    let ood_acc = match &ood_test {
        Some(ds) => Some(evaluate_rlc(
            &rsetc.with_set_size(2 * size)?,
            ds,
            train_cfg.eval_majority_m,
            seed,
        )?),
        None => None,
    };
    rows.push(RunResult {
        experiment: name.clone(),
        model: "rsetc".into(),
        size,
        seed,
        test_acc: report.test_accuracy,
        ood_acc,
        param_count: report.param_count,
        const_acc,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdee9);
    let mut deep_sets: DeepSets<f64> = DeepSets::init(size, 1, cfg.hidden_width, &mut rng)?;
    let report = train_baseline(&mut deep_sets, &split, &TrainConfig::deep_sets(seed))?;
    let ood_acc = match &ood_test {
        Some(ds) => Some(evaluate_baseline(&deep_sets.with_set_size(2 * size)?, ds)?),
        None => None,
    };
    rows.push(RunResult {
        experiment: name.clone(),
        model: "deepsets".into(),
        size,
        seed,
        test_acc: report.test_accuracy,
        ood_acc,
        param_count: report.param_count,
        const_acc,
    });

    let const_ood = match &ood_test {
        Some(ds) => Some(constant_classifier_test_accuracy(&split.train, ds)?),
        None => None,
    };
    rows.push(RunResult {
        experiment: name,
        model: "constant".into(),
        size,
        seed,
        test_acc: const_acc,
        ood_acc: const_ood,
        param_count: 0,
        const_acc,
    });
    Ok(rows)
}

fn run_graph_cell(cfg: &ExperimentConfig, size: usize, run: usize) -> Result<Vec<RunResult>> {
    let seed = cell_seed(cfg.seed, size, run);
    let split: Split<f64> = gen_connectivity_dataset(size, SplitSizes::default(), seed)?;
    let const_acc = constant_classifier_test_accuracy(&split.train, &split.test)?;
    let name = cfg.experiment.name().to_string();
    let mut rows = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x96a9);
    let mut rgraphc: RGraphC<f64> = RGraphC::init(size, cfg.hidden_width, 3, &mut rng)?;
    let report = train_rlc(&mut rgraphc, &split, &TrainConfig::rlc_graphs(seed))?;
    rows.push(RunResult {
        experiment: name.clone(),
        model: "rgraphc".into(),
        size,
        seed,
        test_acc: report.test_accuracy,
        ood_acc: None,
        param_count: report.param_count,
        const_acc,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x919a);
    let mut gin: Gin<f64> = Gin::init(size, cfg.hidden_width, &mut rng)?;
    let report = train_baseline(&mut gin, &split, &TrainConfig::gin(seed))?;
    rows.push(RunResult {
        experiment: name.clone(),
        model: "gin".into(),
        size,
        seed,
        test_acc: report.test_accuracy,
        ood_acc: None,
        param_count: report.param_count,
        const_acc,
    });

    rows.push(RunResult {
        experiment: name,
        model: "constant".into(),
        size,
        seed,
        test_acc: const_acc,
        ood_acc: None,
        param_count: 0,
        const_acc,
    });
    Ok(rows)
}

fn run_cell(cfg: &ExperimentConfig, size: usize, run: usize) -> Result<Vec<RunResult>> {
    match cfg.experiment {
        TaskKind::Sorting | TaskKind::Sign => run_set_cell(cfg, size, run),
        TaskKind::Connectivity => run_graph_cell(cfg, size, run),
    }
}

/// Runs all (size, run) cells on a worker pool of [`worker_count`] threads.
/// Result order is deterministic regardless of scheduling; failed cells are
/// reported in `failures` and skipped.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = cfg
        .size_grid
        .iter()
        .flat_map(|&size| (0..cfg.runs).map(move |run| (size, run)))
        .collect();
    let slots: Vec<Mutex<Option<Result<Vec<RunResult>>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = worker_count().min(cells.len()).max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= cells.len() {
                    break;
                }
                let (size, run) = cells[idx];
                let outcome = run_cell(cfg, size, run);
                *slots[idx].lock().expect("unpoisoned slot") = Some(outcome);
            });
        }
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (idx, (size, run)) in cells.iter().enumerate() {
        let outcome = slots[idx]
            .lock()
            .expect("unpoisoned slot")
            .take()
            .expect("every cell was executed");
        match outcome {
            Ok(rows) => results.extend(rows),
            Err(e) => failures.push(format!(
                "{} size {size} run {run}: {e}",
                cfg.experiment.name()
            )),
        }
    }
    Ok(SweepOutcome { results, failures })
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

pub const CSV_HEADER: &str = "experiment,model,size,seed,test_acc,ood_acc,param_count,const_acc";

/// Writes results as CSV with the fixed header. `ood_acc` is empty when not
/// evaluated. Floats use Rust's default (locale-independent) formatting.
pub fn emit_csv<W: Write>(results: &[RunResult], out: &mut W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in results {
        let ood = r.ood_acc.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.experiment, r.model, r.size, r.seed, r.test_acc, ood, r.param_count, r.const_acc
        )?;
    }
    Ok(())
}

/// Parses CSV produced by [`emit_csv`]; the exact header is required.
pub fn parse_csv<R: BufRead>(input: R) -> Result<Vec<RunResult>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))??;
    if header.trim() != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected CSV header: {header}")));
    }
    let mut results = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse(format!(
                "row {}: expected 8 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Parse(format!("row {}: bad {what}", lineno + 2));
        results.push(RunResult {
            experiment: fields[0].to_string(),
            model: fields[1].to_string(),
            size: fields[2].parse().map_err(|_| bad("size"))?,
            seed: fields[3].parse().map_err(|_| bad("seed"))?,
            test_acc: fields[4].parse().map_err(|_| bad("test_acc"))?,
            ood_acc: if fields[5].is_empty() {
                None
            } else {
                Some(fields[5].parse().map_err(|_| bad("ood_acc"))?)
            },
            param_count: fields[6].parse().map_err(|_| bad("param_count"))?,
            const_acc: fields[7].parse().map_err(|_| bad("const_acc"))?,
        });
    }
    Ok(results)
}

// ---------------------------------------------------------------------------
// SVG plot
// ---------------------------------------------------------------------------

/// Per-(model, size) accuracy statistics across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub model: String,
    pub size: usize,
    pub mean: f64,
    /// Population standard deviation (zero for a single run).
    pub std: f64,
}

/// Mean and population std of `test_acc` grouped by (model, size), ordered by
/// first appearance of the model and ascending size.
pub fn summarize(results: &[RunResult]) -> Vec<SeriesPoint> {
    let mut models: Vec<&str> = Vec::new();
    for r in results {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut sizes: Vec<usize> = results.iter().map(|r| r.size).collect();
    sizes.sort_unstable();
    sizes.dedup();

    let mut points = Vec::new();
    for model in models {
        for &size in &sizes {
            let accs: Vec<f64> = results
                .iter()
                .filter(|r| r.model == model && r.size == size)
                .map(|r| r.test_acc)
                .collect();
            if accs.is_empty() {
                continue;
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let var =
                accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
            points.push(SeriesPoint { model: model.to_string(), size, mean, std: var.sqrt() });
        }
    }
    points
}

const SVG_WIDTH: f64 = 800.0;
const SVG_HEIGHT: f64 = 600.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 40.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 70.0;

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];

fn x_position(idx: usize, n: usize) -> f64 {
    let span = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    if n <= 1 {
        MARGIN_LEFT + span / 2.0
    } else {
        MARGIN_LEFT + span * idx as f64 / (n - 1) as f64
    }
}

fn y_position(acc: f64) -> f64 {
    let span = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    SVG_HEIGHT - MARGIN_BOTTOM - span * acc.clamp(0.0, 1.0)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders an 800x600 SVG: one polyline per model with ±1 std error bars,
/// the mean constant-classifier accuracy as a dashed reference line, axes
/// with ticks, and a legend. Each plotted point also carries a structured
/// `<!-- stat ... -->` comment so the encoded statistics can be checked
/// against the CSV.
pub fn render_svg(results: &[RunResult], title: &str) -> String {
    let trained: Vec<RunResult> =
        results.iter().filter(|r| r.model != "constant").cloned().collect();
    let points = summarize(&trained);
    let mut sizes: Vec<usize> = trained.iter().map(|r| r.size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut models: Vec<String> = Vec::new();
    for p in &points {
        if !models.contains(&p.model) {
            models.push(p.model.clone());
        }
    }

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"28\" font-size=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\">{}</text>\n",
        SVG_WIDTH / 2.0,
        xml_escape(title)
    ));

    // axes
    let x0 = MARGIN_LEFT;
    let x1 = SVG_WIDTH - MARGIN_RIGHT;
    let y0 = SVG_HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    // y ticks every 0.1
    for t in 0..=10 {
        let acc = t as f64 / 10.0;
        let y = y_position(acc);
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\" font-family=\"sans-serif\">{acc:.1}</text>\n",
            x0 - 9.0,
            y + 4.0
        ));
    }
    // x ticks at each size
    for (i, &size) in sizes.iter().enumerate() {
        let x = x_position(i, sizes.len());
        svg.push_str(&format!(
            "  <line x1=\"{x}\" y1=\"{y0}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{x}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">{size}</text>\n",
            y0 + 20.0
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\">input size</text>\n",
        (x0 + x1) / 2.0,
        SVG_HEIGHT - 20.0
    ));
    svg.push_str(&format!(
        "  <text x=\"20\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(-90 20 {})\">test accuracy</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));

    // constant-classifier reference: mean const_acc over all rows
    if !results.is_empty() {
        let const_mean =
            results.iter().map(|r| r.const_acc).sum::<f64>() / results.len() as f64;
        let y = y_position(const_mean);
        svg.push_str(&format!(
            "  <!-- stat model=constant mean={const_mean:.6} -->\n"
        ));
        svg.push_str(&format!(
            "  <line x1=\"{x0}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"#777777\" stroke-dasharray=\"6 4\"/>\n"
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#777777\" text-anchor=\"end\" font-family=\"sans-serif\">constant {const_mean:.3}</text>\n",
            x1,
            y - 6.0
        ));
    }

    // series
    for (mi, model) in models.iter().enumerate() {
        let color = PALETTE[mi % PALETTE.len()];
        let series: Vec<&SeriesPoint> = points.iter().filter(|p| &p.model == model).collect();
        let coords: Vec<String> = series
            .iter()
            .map(|p| {
                let i = sizes.iter().position(|&s| s == p.size).expect("size present");
                format!("{:.2},{:.2}", x_position(i, sizes.len()), y_position(p.mean))
            })
            .collect();
        svg.push_str(&format!(
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            coords.join(" ")
        ));
        for p in &series {
            let i = sizes.iter().position(|&s| s == p.size).expect("size present");
            let x = x_position(i, sizes.len());
            let y = y_position(p.mean);
            let y_lo = y_position((p.mean - p.std).max(0.0));
            let y_hi = y_position((p.mean + p.std).min(1.0));
            svg.push_str(&format!(
                "  <!-- stat model={} size={} mean={:.6} std={:.6} -->\n",
                p.model, p.size, p.mean, p.std
            ));
            svg.push_str(&format!(
                "  <line x1=\"{x}\" y1=\"{y_lo:.2}\" x2=\"{x}\" y2=\"{y_hi:.2}\" stroke=\"{color}\"/>\n"
            ));
            svg.push_str(&format!(
                "  <circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"{color}\"/>\n"
            ));
        }
        // legend
        let ly = MARGIN_TOP + 10.0 + 20.0 * mi as f64;
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            x1 - 140.0,
            x1 - 110.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"13\" font-family=\"sans-serif\">{}</text>\n",
            x1 - 104.0,
            ly + 4.0,
            xml_escape(model)
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

/// Writes [`render_svg`] output to a writer.
pub fn emit_svg<W: Write>(results: &[RunResult], title: &str, out: &mut W) -> Result<()> {
    out.write_all(render_svg(results, title).as_bytes())?;
    Ok(())
}
