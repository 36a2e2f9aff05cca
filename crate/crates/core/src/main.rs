//! `ctxsurvey` command-line front end.
//!
//! Exit codes: 0 success, 1 engine error, 2 usage, 3 I/O, 4 malformed file,
//! 5 unsupported format version, 6 cell layout, 7 dimension mismatch,
//! 8 non-finite values, 9 truncated or oversized embedding file,
//! 10 validation violations, 11 configuration error.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ctxsurvey::analysis::{self, BufferSource, Normalization};
use ctxsurvey::context::BufferParams;
use ctxsurvey::detector::{DEFAULT_CONTEXT_THRESHOLD, DEFAULT_TARGET_THRESHOLD};
use ctxsurvey::experiment::{self, BatchResult, Seeding};
use ctxsurvey::io::{self, ExemplarFile, ExemplarSource, FormatError, SiteMeta};
use ctxsurvey::par::Execution;
use ctxsurvey::planner::{
    ContextMode, Corner, PlannerSettings, Policy, SignalMode, Survey, TieBreak,
};
use ctxsurvey::synthworld::{self, SynthParams};
use ctxsurvey::world::CellIndex;
use ctxsurvey::{context, Error};

#[derive(Parser)]
#[command(
    name = "ctxsurvey",
    version,
    about = "Context-guided survey simulation on patch-embedding sites"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic site, its exemplar file and a placement report.
    Synth(SynthArgs),
    /// Run seeded trial batches and write per-step CSVs.
    Run(RunArgs),
    /// Target/context co-occurrence regression over all cells.
    Analyze(AnalyzeArgs),
    /// Lint a site and list every violation.
    Validate(ValidateArgs),
    /// Aggregate a trials CSV into plot-ready mean/std curves.
    Curves(CurvesArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    rows: usize,
    #[arg(long, default_value_t = 30)]
    cols: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    patches_per_cell: usize,
    #[arg(long, default_value_t = 2)]
    clusters: usize,
    #[arg(long, default_value_t = 3.0)]
    cluster_radius: f64,
    #[arg(long, default_value_t = 0.03)]
    target_fraction: f64,
    #[arg(long, default_value_t = 3.0)]
    halo_decay: f64,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 6)]
    background_prototypes: usize,
    #[arg(long, default_value_t = 196)]
    pixels_per_patch: u64,
    /// One context prototype per cluster.
    #[arg(long)]
    context_drift: bool,
    /// Attach a substrate-like scalar channel to every cell.
    #[arg(long)]
    scalar_channel: bool,
    /// Threshold written into the target exemplar file.
    #[arg(long, default_value_t = DEFAULT_TARGET_THRESHOLD)]
    sigma_target: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct DetectArgs {
    /// Site manifest.
    #[arg(long)]
    site: PathBuf,
    /// Target exemplar file.
    #[arg(long)]
    exemplars: PathBuf,
    /// Cell whose patches form the labelled target image, as `row,col`.
    /// Defaults to the exemplar file's source cell.
    #[arg(long, value_parser = parse_cell)]
    target_cell: Option<CellIndex>,
    /// Override the exemplar file's target threshold.
    #[arg(long)]
    sigma_target: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_CONTEXT_THRESHOLD)]
    sigma_context: f64,
    /// Target patches an image needs before it updates the context buffer.
    #[arg(long, default_value_t = context::DEFAULT_TRIGGER)]
    tau: usize,
    /// Embeddings sampled per buffer update.
    #[arg(long, default_value_t = context::DEFAULT_SAMPLE_SIZE)]
    k: usize,
    /// Context buffer capacity.
    #[arg(long, default_value_t = context::DEFAULT_CAPACITY)]
    m: usize,
}

#[derive(Copy, Clone, ValueEnum)]
enum PolicyArg {
    Greedy,
    Lawnmower,
    Random,
}

#[derive(Copy, Clone, ValueEnum)]
enum CornerArg {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    /// Draw a corner per trial.
    Sweep,
}

#[derive(Copy, Clone, ValueEnum)]
enum SeedingArg {
    /// Trial i starts from the same cell in every configuration.
    Paired,
    /// Each configuration draws its own seed sequence.
    Independent,
}

#[derive(Copy, Clone, ValueEnum)]
enum TieBreakArg {
    RowMajor,
    Random,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    detect: DetectArgs,
    /// Policies to run; repeat or comma-separate.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [PolicyArg::Lawnmower, PolicyArg::Greedy])]
    policy: Vec<PolicyArg>,
    /// Greedy signals: target, ec, target+ec, scalar, scalar+target.
    #[arg(long, value_delimiter = ',', default_value = "target+ec")]
    signal: Vec<String>,
    /// Context modes for context-bearing signals: running, fixed.
    #[arg(long, value_delimiter = ',', default_value = "running")]
    context_mode: Vec<String>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Steps per trial; defaults to the number of cells.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SeedingArg::Paired)]
    seeding: SeedingArg,
    #[arg(long, value_enum, default_value_t = CornerArg::TopLeft)]
    corner: CornerArg,
    #[arg(long, value_enum, default_value_t = TieBreakArg::RowMajor)]
    tie_break: TieBreakArg,
    #[arg(long, default_value_t = 1.0)]
    scalar_weight: f64,
    /// Fraction reported in the time-to-fraction summary.
    #[arg(long, default_value_t = 0.75)]
    q: f64,
    /// Run trials on the calling thread only.
    #[arg(long)]
    sequential: bool,
    /// Output directory for trials.csv and aggregate.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    detect: DetectArgs,
    #[arg(long, default_value = "converged")]
    buffer: String,
    #[arg(long, default_value = "minmax")]
    normalize: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Two-column CSV of normalised (target, context) pairs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    site: PathBuf,
}

#[derive(Args)]
struct CurvesArgs {
    /// trials.csv written by `run`.
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    q: f64,
}

fn parse_cell(s: &str) -> Result<CellIndex, String> {
    let (r, c) = s.split_once(',').ok_or("expected row,col")?;
    Ok(CellIndex::new(
        r.trim().parse().map_err(|_| format!("bad row '{r}'"))?,
        c.trim().parse().map_err(|_| format!("bad col '{c}'"))?,
    ))
}

enum CliError {
    Format(FormatError),
    Engine(Error),
    Violations(usize),
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Format(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Engine(e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| {
        CliError::Format(FormatError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Analyze(a) => analyze(a),
        Command::Validate(a) => validate(a),
        Command::Curves(a) => curves(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Format(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(CliError::Engine(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 11,
                Error::InvalidGrid { .. } => 10,
                _ => 1,
            })
        }
        Err(CliError::Violations(n)) => {
            eprintln!("{n} violation(s)");
            ExitCode::from(10)
        }
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let params = SynthParams {
        rows: a.rows,
        cols: a.cols,
        dim: a.dim,
        patches_per_cell: a.patches_per_cell,
        n_target_clusters: a.clusters,
        cluster_radius: a.cluster_radius,
        target_cell_fraction: a.target_fraction,
        halo_decay: a.halo_decay,
        noise_sigma: a.noise,
        n_background_prototypes: a.background_prototypes,
        pixels_per_patch: a.pixels_per_patch,
        context_drift: a.context_drift,
        scalar_channel: a.scalar_channel,
        seed: a.seed,
    };
    let (grid, report) = synthworld::generate_world(&params)?;
    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let meta = SiteMeta {
        embedding_file: "site.emb".into(),
        species: Some("synthetic".into()),
        notes: vec![format!("{params:?}")],
    };
    io::save_site(&a.out.join("site.manifest"), &grid, &meta)?;
    io::save_exemplars(
        &a.out.join("target.exemplars"),
        &ExemplarFile {
            label: ctxsurvey::TARGET_LABEL.into(),
            threshold: a.sigma_target,
            dim: grid.dim,
            source: Some(ExemplarSource {
                site: Some("site.manifest".into()),
                cell: report.query_cell(),
                patches: report.target_patches[report.query].clone(),
            }),
            vectors: vec![],
        },
    )?;
    let path = a.out.join("synth_report.csv");
    let mut w = csv::Writer::from_writer(File::create(&path).map_err(io_err(&path))?);
    let csv_err = |e: csv::Error| CliError::Format(e.into());
    w.write_record([
        "row",
        "col",
        "is_target",
        "gt_target_area",
        "distance",
        "context_count",
        "context_density",
    ])
    .map_err(csv_err)?;
    for (i, cell) in grid.cells.iter().enumerate() {
        let at = grid.index_of(i);
        w.write_record([
            at.row.to_string(),
            at.col.to_string(),
            u8::from(cell.gt_target_area > 0).to_string(),
            cell.gt_target_area.to_string(),
            report.distance[i].to_string(),
            report.context_counts[i].to_string(),
            io::format_fraction(report.context_density[i]),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    println!(
        "wrote {}x{} site with {} target cells (total area {}) to {}",
        grid.rows,
        grid.cols,
        report.target_cells.len(),
        grid.total_gt_area,
        a.out.display()
    );
    Ok(())
}

struct Loaded {
    grid: ctxsurvey::world::SiteGrid,
    target: ctxsurvey::detector::ExemplarSet,
    image_cell: CellIndex,
    settings: PlannerSettings,
}

fn load_inputs(d: &DetectArgs) -> Result<Loaded, CliError> {
    let site = io::load_site(&d.site)?;
    let mut file = io::load_exemplars(&d.exemplars)?;
    if let Some(s) = d.sigma_target {
        file.threshold = s;
    }
    let target = file.resolve(&site.grid)?;
    let image_cell = match (d.target_cell, &file.source) {
        (Some(c), _) => c,
        (None, Some(src)) => src.cell,
        (None, None) => {
            return Err(Error::Config(
                "inline exemplars need --target-cell for the labelled image".into(),
            )
            .into())
        }
    };
    site.grid.check_index(image_cell)?;
    let settings = PlannerSettings {
        sigma_context: d.sigma_context,
        buffer: BufferParams {
            sample_size: d.k,
            capacity: d.m,
            trigger: d.tau,
        },
        ..PlannerSettings::default()
    };
    Ok(Loaded {
        grid: site.grid,
        target,
        image_cell,
        settings,
    })
}

fn run(a: RunArgs) -> Result<(), CliError> {
    let mut inputs = load_inputs(&a.detect)?;
    inputs.settings.tie_break = match a.tie_break {
        TieBreakArg::RowMajor => TieBreak::RowMajor,
        TieBreakArg::Random => TieBreak::Random,
    };
    inputs.settings.scalar_weight = a.scalar_weight;
    let signals = a
        .signal
        .iter()
        .map(|s| s.parse::<SignalMode>())
        .collect::<Result<Vec<_>, _>>()?;
    let modes = a
        .context_mode
        .iter()
        .map(|s| s.parse::<ContextMode>())
        .collect::<Result<Vec<_>, _>>()?;
    let corner = match a.corner {
        CornerArg::TopLeft => Some(Corner::TopLeft),
        CornerArg::TopRight => Some(Corner::TopRight),
        CornerArg::BottomLeft => Some(Corner::BottomLeft),
        CornerArg::BottomRight => Some(Corner::BottomRight),
        CornerArg::Sweep => None,
    };
    let mut policies = Vec::new();
    for p in &a.policy {
        match p {
            PolicyArg::Lawnmower => policies.push(Policy::Lawnmower { corner }),
            PolicyArg::Random => policies.push(Policy::RandomWalk),
            PolicyArg::Greedy => {
                for &signal in &signals {
                    if signal.uses_context() {
                        policies.extend(
                            modes
                                .iter()
                                .map(|&context| Policy::Greedy { signal, context }),
                        );
                    } else {
                        policies.push(Policy::greedy(signal));
                    }
                }
            }
        }
    }
    let image = &inputs.grid.cell(inputs.image_cell).patches;
    let survey = Survey::new(&inputs.grid, &inputs.target, image, inputs.settings)?;
    let steps = a.steps.unwrap_or(inputs.grid.len());
    let exec = if a.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let seeding = match a.seeding {
        SeedingArg::Paired => Seeding::Paired,
        SeedingArg::Independent => Seeding::Independent,
    };
    let batch =
        experiment::run_batch_seeded(&survey, &policies, a.trials, steps, a.seed, seeding, exec)?;
    write_batch(&a.out, &batch)?;
    for o in &batch.outcomes {
        let median = o
            .median_time_to_fraction(a.q)
            .map_or("not reached".to_string(), |t| format!("{t:.2}"));
        println!(
            "{:<28} final mean {:.4}  auc {:.4}  median time to {:.0}%: {median}",
            o.policy.to_string(),
            o.aggregate.mean_fraction.last().copied().unwrap_or(0.0),
            mean(&o.aucs()),
            a.q * 100.0,
        );
    }
    Ok(())
}

fn write_batch(dir: &Path, batch: &BatchResult) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trials = dir.join("trials.csv");
    io::write_trials(
        BufWriter::new(File::create(&trials).map_err(io_err(&trials))?),
        batch,
    )?;
    let agg = dir.join("aggregate.csv");
    io::write_aggregate(
        BufWriter::new(File::create(&agg).map_err(io_err(&agg))?),
        batch.aggregate_rows(),
    )?;
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let inputs = load_inputs(&a.detect)?;
    let source: BufferSource = a.buffer.parse()?;
    let how: Normalization = a.normalize.parse()?;
    let image = &inputs.grid.cell(inputs.image_cell).patches;
    let survey = Survey::new(&inputs.grid, &inputs.target, image, inputs.settings)?;
    let context = analysis::analysis_context(&survey, source, a.seed)?;
    let co = analysis::cooccurrence_regression(
        &inputs.grid,
        &inputs.target,
        &context,
        how,
        Execution::Parallel,
    )?;
    if let Some(out) = &a.out {
        let mut w = csv::Writer::from_writer(File::create(out).map_err(io_err(out))?);
        let csv_err = |e: csv::Error| CliError::Format(e.into());
        w.write_record(["target", "context"]).map_err(csv_err)?;
        for (t, c) in co.target.iter().zip(&co.context) {
            w.write_record([io::format_fraction(*t), io::format_fraction(*c)])
                .map_err(csv_err)?;
        }
        w.flush().map_err(io_err(out))?;
    }
    println!(
        "slope={:.6} intercept={:.6} r={:.6} n={}",
        co.fit.slope, co.fit.intercept, co.fit.r, co.fit.n_points
    );
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let site = io::load_site_unvalidated(&a.site)?;
    let violations = site.grid.validate();
    for v in &violations {
        println!("{v}");
    }
    if violations.is_empty() {
        println!(
            "ok: {}x{} cells, dim {}, total target area {}",
            site.grid.rows, site.grid.cols, site.grid.dim, site.grid.total_gt_area
        );
        Ok(())
    } else {
        Err(CliError::Violations(violations.len()))
    }
}

fn curves(a: CurvesArgs) -> Result<(), CliError> {
    let input = File::open(&a.trials).map_err(io_err(&a.trials))?;
    let groups = io::aggregate_from_trials_csv(input)?;
    io::write_aggregate(
        BufWriter::new(File::create(&a.out).map_err(io_err(&a.out))?),
        groups.iter().map(|(k, c)| (k.clone(), c)),
    )?;
    for ((policy, signal, ctx), agg) in &groups {
        let t = agg
            .time_to_fraction(a.q)
            .map_or("not reached".to_string(), |t| format!("{t:.2}"));
        println!(
            "{policy},{signal},{ctx}: n={} mean curve reaches {:.0}% at {t}",
            agg.n_trials,
            a.q * 100.0
        );
    }
    Ok(())
}
