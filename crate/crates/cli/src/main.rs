//! `shimsense`: batch front end for the sensor-placement pipeline.
//!
//! Exit codes: 0 success, 2 bad arguments or malformed input, 3 I/O
//! failure, 4 numerical failure, 5 sensors missing from a measurement file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use shimsense::formats::{self, ReportFile, TruthSidecar};
use shimsense::pipeline::{
    compare_baseline, loo_crossval_against, predict, summary_table, train_model, CrossValConfig, GapDataset,
    MissingPolicy, ShimSegmentation, TrainConfig,
};
use shimsense::rpca::{pcp, PcpConfig, SvdMode};
use shimsense::synth::{self, ModeFamily, SynthConfig};
use shimsense::{DenseMatrix, Error};

/// Region name used when no segmentation manifest is given.
const WHOLE_REGION: &str = "all";

#[derive(Parser, Debug)]
#[command(name = "shimsense", version, about = "Sparse laser-scan sensor placement for shim gap prediction")]
struct Cli {
    /// Master seed for synthesis, randomized SVD and baseline draws.
    #[arg(long, global = true, env = "SHIMSENSE_SEED", default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic gap dataset with its ground truth.
    Synth(SynthArgs),
    /// Split a gap matrix into low-rank and sparse parts.
    Decompose(DecomposeArgs),
    /// Train per-region bases and sensor sets.
    Train(TrainArgs),
    /// Predict full fields from sparse sensor readings.
    Predict(PredictArgs),
    /// Leave-one-unit-out cross validation against a random-sensor baseline.
    Crossval(CrossvalArgs),
    /// Render the per-region summary of a crossval report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 600)]
    n: usize,
    #[arg(long, default_value_t = 40)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    rank: usize,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    outlier_fraction: Option<f64>,
    #[arg(long)]
    outlier_magnitude: Option<f64>,
    #[arg(long, value_enum, default_value_t = FamilyArg::Cosine1d)]
    mode_family: FamilyArg,
    /// Gap matrix CSV.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON sidecar.
    #[arg(long)]
    truth: PathBuf,
    /// Also write a manifest splitting the locations into this many contiguous regions.
    #[arg(long, requires = "segmentation_out")]
    segments: Option<usize>,
    #[arg(long, requires = "segments")]
    segmentation_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    Cosine1d,
    Grid2d,
}

#[derive(Args, Debug, Clone)]
struct PcpArgs {
    /// Sparsity weight (default 1/sqrt(max(n, m))).
    #[arg(long)]
    lambda: Option<f64>,
    /// Initial penalty (default 1.25/||X||_2).
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long, default_value_t = 1.5)]
    rho: f64,
    #[arg(long, default_value_t = 1e-7)]
    pcp_tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = SvdArg::Exact)]
    svd_mode: SvdArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SvdArg {
    Exact,
    Randomized,
}

impl PcpArgs {
    fn config(&self, seed: u64) -> PcpConfig {
        PcpConfig {
            lambda: self.lambda,
            mu0: self.mu0,
            rho: self.rho,
            tol: self.pcp_tol,
            max_iter: self.max_iter,
            svd_mode: match self.svd_mode {
                SvdArg::Exact => SvdMode::Exact,
                SvdArg::Randomized => SvdMode::Randomized,
            },
            seed,
        }
    }
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Receives L.csv, S.csv and diagnostics.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Subtract per-location means before decomposing; L then excludes them.
    #[arg(long)]
    center: bool,
    #[command(flatten)]
    pcp: PcpArgs,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Region manifest; one region covering every location when absent.
    #[arg(long)]
    segmentation: Option<PathBuf>,
    /// Fixed rank instead of the hard-threshold estimate.
    #[arg(long)]
    rank: Option<usize>,
    /// Sensors per region (default one per retained mode).
    #[arg(long)]
    sensors: Option<usize>,
    /// Known noise level used by the rank threshold.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    no_center: bool,
    /// Skip principal component pursuit and decompose the data directly.
    #[arg(long)]
    no_robust: bool,
    /// Fill missing readings with the location mean instead of rejecting them.
    #[arg(long)]
    impute: bool,
    #[command(flatten)]
    pcp: PcpArgs,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            center: !self.no_center,
            robust: !self.no_robust,
            pcp: self.pcp.config(seed),
            rank_override: self.rank,
            noise_sigma: self.noise_sigma,
            sensor_count: self.sensors,
        }
    }

    fn policy(&self) -> MissingPolicy {
        if self.impute {
            MissingPolicy::ImputeLocationMean
        } else {
            MissingPolicy::Reject
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    /// Model directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Gap-matrix layout with blank cells for unmeasured locations.
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-unit conditioning of the sensor systems, as JSON.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth sidecar; held-out units are read and scored from its noisy clean field.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = shimsense::pipeline::crossval::DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Long-format error histograms for plotting.
    #[arg(long)]
    histogram_csv: Option<PathBuf>,
    /// Run folds one after another.
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report written by `crossval`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    format: ReportFormat,
    /// Standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Table,
    Csv,
    Json,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Io { .. }) => 3,
        Some(Error::NumericalFailure(_) | Error::AllFoldsFailed(_)) => 4,
        Some(Error::MissingSensors(_)) => 5,
        Some(_) => 2,
        None => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => cmd_synth(a, seed),
        Command::Decompose(a) => cmd_decompose(a, seed),
        Command::Train(a) => cmd_train(a, seed),
        Command::Predict(a) => cmd_predict(a),
        Command::Crossval(a) => cmd_crossval(a, seed),
        Command::Report(a) => cmd_report(a),
    }
}

fn io_error(path: &Path, kind: std::io::ErrorKind, msg: &str) -> anyhow::Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(kind, msg.to_string()),
    }
    .into()
}

fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(io_error(path, std::io::ErrorKind::NotFound, "input file not found"));
    }
    Ok(())
}

fn check_input_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(io_error(path, std::io::ErrorKind::NotFound, "directory not found"));
    }
    Ok(())
}

/// Output files may be created, but their directory must already exist.
fn check_output(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(io_error(parent, std::io::ErrorKind::NotFound, "output directory does not exist"));
    }
    if path.is_dir() {
        return Err(io_error(path, std::io::ErrorKind::IsADirectory, "output path is a directory"));
    }
    Ok(())
}

/// Output directories are created on write; their parent must exist.
fn check_output_dir(path: &Path) -> Result<()> {
    if path.is_file() {
        return Err(io_error(path, std::io::ErrorKind::AlreadyExists, "output path is a file"));
    }
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(io_error(p, std::io::ErrorKind::NotFound, "parent directory does not exist"))
        }
        _ => Ok(()),
    }
}

fn load_segmentation(path: Option<&Path>, ds: &GapDataset) -> Result<ShimSegmentation> {
    Ok(match path {
        Some(p) => ShimSegmentation::from_location_ids(ds, &formats::read_segmentation(p)?)?,
        None => ShimSegmentation::whole(ds.locations(), WHOLE_REGION),
    })
}

fn cmd_synth(a: SynthArgs, seed: u64) -> Result<()> {
    check_output(&a.out)?;
    check_output(&a.truth)?;
    if let Some(p) = &a.segmentation_out {
        check_output(p)?;
    }
    let mut cfg = SynthConfig::with_shape(a.n, a.m, a.rank, seed);
    cfg.mode_family = match a.mode_family {
        FamilyArg::Cosine1d => ModeFamily::Cosine1d,
        FamilyArg::Grid2d => ModeFamily::Grid2d,
    };
    if let Some(v) = a.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = a.outlier_fraction {
        cfg.outlier_fraction = v;
    }
    if let Some(v) = a.outlier_magnitude {
        cfg.outlier_magnitude = v;
    }
    let seg = a.segments.map(|k| ShimSegmentation::contiguous(a.n, k)).transpose()?;
    let (ds, truth) = synth::generate(&cfg)?;
    formats::write_gap_csv(&a.out, &ds)?;
    let sidecar = TruthSidecar {
        config: cfg,
        location_ids: ds.location_ids.clone(),
        unit_ids: ds.unit_ids.clone(),
        truth,
    };
    formats::write_json(&a.truth, &sidecar)?;
    if let (Some(seg), Some(path)) = (seg, &a.segmentation_out) {
        formats::write_segmentation(path, &seg.to_location_ids(&ds))?;
    }
    info!("wrote {} locations x {} units to {}", a.n, a.m, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct DecomposeDiagnostics {
    rows: usize,
    cols: usize,
    centered: bool,
    iterations: usize,
    converged: bool,
    final_residual: f64,
    lambda: f64,
    mu0: f64,
    mu_max: f64,
    rho: f64,
    tol: f64,
    max_iter: usize,
    sparsity: f64,
    residual_history: Vec<f64>,
    mu_history: Vec<f64>,
    rank_history: Vec<usize>,
}

fn cmd_decompose(a: DecomposeArgs, seed: u64) -> Result<()> {
    check_input(&a.input)?;
    check_output_dir(&a.out_dir)?;
    let cfg = a.pcp.config(seed);
    cfg.validate()?;
    let ds = formats::read_gap_csv(&a.input, MissingPolicy::Reject)?;
    let x = if a.center {
        let mut raw = ds.matrix.as_dmatrix().clone();
        for mut row in raw.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
        DenseMatrix::new(raw)?
    } else {
        ds.matrix.clone()
    };
    let d = pcp(&x, &cfg)?;
    if !d.converged {
        warn!("pcp stopped after {} iterations at residual {:e}", d.iterations, d.final_residual);
    }
    let diag = DecomposeDiagnostics {
        rows: ds.locations(),
        cols: ds.units(),
        centered: a.center,
        iterations: d.iterations,
        converged: d.converged,
        final_residual: d.final_residual,
        lambda: d.lambda,
        mu0: d.mu0,
        mu_max: d.mu_max,
        rho: cfg.rho,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        sparsity: d.sparsity(),
        residual_history: d.residual_history.clone(),
        mu_history: d.mu_history.clone(),
        rank_history: d.rank_history.clone(),
    };
    let as_dataset = |m: DenseMatrix| -> Result<GapDataset> {
        let mut out = GapDataset::new(m, ds.location_ids.clone(), ds.unit_ids.clone())?;
        out.gap_unit = ds.gap_unit.clone();
        Ok(out)
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::Io { path: a.out_dir.clone(), source: e })?;
    formats::write_gap_csv(&a.out_dir.join("L.csv"), &as_dataset(d.low_rank)?)?;
    formats::write_gap_csv(&a.out_dir.join("S.csv"), &as_dataset(d.sparse)?)?;
    formats::write_json(&a.out_dir.join("diagnostics.json"), &diag)?;
    Ok(())
}

fn cmd_train(a: TrainArgs, seed: u64) -> Result<()> {
    check_input(&a.input)?;
    if let Some(p) = &a.model.segmentation {
        check_input(p)?;
    }
    check_output_dir(&a.out)?;
    let cfg = a.model.config(seed);
    cfg.pcp.validate()?;
    let ds = formats::read_gap_csv(&a.input, a.model.policy())?;
    if ds.imputed > 0 {
        warn!("imputed {} missing readings with location means", ds.imputed);
    }
    let seg = load_segmentation(a.model.segmentation.as_deref(), &ds)?;
    let model = train_model(&ds, &seg, &cfg)?;
    let hash = formats::write_model(&a.out, &model)?;
    for r in &model.regions {
        info!("region {}: rank {}, {} sensors", r.name, r.fit.rank, r.fit.sensors.indices.len());
    }
    println!("{hash}");
    Ok(())
}

#[derive(Serialize)]
struct RegionCondition {
    region: String,
    /// `null` when the sampled basis is singular.
    condition_number: Option<f64>,
    ill_conditioned: bool,
}

#[derive(Serialize)]
struct UnitDiagnostics {
    unit_id: String,
    regions: Vec<RegionCondition>,
}

#[derive(Serialize)]
struct PredictDiagnostics {
    units: Vec<UnitDiagnostics>,
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    check_input_dir(&a.model)?;
    check_input(&a.measurements)?;
    check_output(&a.out)?;
    if let Some(p) = &a.diagnostics {
        check_output(p)?;
    }
    let model = formats::read_model(&a.model)?;
    let meas = formats::read_measurements(&a.measurements)?;
    let mut columns = Vec::with_capacity(meas.unit_ids.len());
    let mut units = Vec::with_capacity(meas.unit_ids.len());
    for (unit, readings) in meas.unit_ids.iter().zip(&meas.readings) {
        let p = predict(&model, readings).with_context(|| format!("unit {unit:?}"))?;
        columns.push(p.values);
        units.push(UnitDiagnostics {
            unit_id: unit.clone(),
            regions: p
                .regions
                .into_iter()
                .map(|r| {
                    if r.ill_conditioned {
                        warn!("unit {unit}: region {} is ill-conditioned ({:e})", r.name, r.condition_number);
                    }
                    RegionCondition {
                        region: r.name,
                        condition_number: r.condition_number.is_finite().then_some(r.condition_number),
                        ill_conditioned: r.ill_conditioned,
                    }
                })
                .collect(),
        });
    }
    let bytes = formats::prediction_csv_bytes(&model.location_ids, &meas.unit_ids, &columns)?;
    formats::write_atomic(&a.out, &bytes)?;
    if let Some(p) = &a.diagnostics {
        formats::write_json(p, &PredictDiagnostics { units })?;
    }
    Ok(())
}

fn load_reference(path: &Path, ds: &GapDataset) -> Result<DenseMatrix> {
    let sidecar: TruthSidecar = formats::read_json(path)?;
    if sidecar.location_ids != ds.location_ids || sidecar.unit_ids != ds.unit_ids {
        return Err(Error::Schema(format!(
            "{}: locations or units do not match the dataset",
            path.display()
        ))
        .into());
    }
    Ok(sidecar.truth.clean())
}

fn cmd_crossval(a: CrossvalArgs, seed: u64) -> Result<()> {
    check_input(&a.input)?;
    for p in [&a.model.segmentation, &a.reference].into_iter().flatten() {
        check_input(p)?;
    }
    check_output(&a.out)?;
    if let Some(p) = &a.histogram_csv {
        check_output(p)?;
    }
    let cfg = CrossValConfig {
        train: a.model.config(seed),
        tolerance: a.tolerance,
        master_seed: seed,
        parallel: !a.sequential,
        ..CrossValConfig::default()
    };
    cfg.train.pcp.validate()?;
    let ds = formats::read_gap_csv(&a.input, a.model.policy())?;
    let seg = load_segmentation(a.model.segmentation.as_deref(), &ds)?;
    let reference = a.reference.as_deref().map(|p| load_reference(p, &ds)).transpose()?;
    let report = loo_crossval_against(&ds, &seg, &cfg, reference.as_ref())?;
    for r in &report.regions {
        for f in &r.failed_folds {
            warn!("fold {} in region {} failed: {}", f.unit_id, f.region, f.message);
        }
    }
    let file = ReportFile {
        comparison: compare_baseline(&report),
        summary: summary_table(&report),
        report,
    };
    formats::write_json(&a.out, &file)?;
    if let Some(p) = &a.histogram_csv {
        formats::write_atomic(p, &formats::histogram_csv_bytes(&file.report)?)?;
    }
    Ok(())
}

fn render_table(file: &ReportFile) -> String {
    let headers = formats::SUMMARY_COLUMNS;
    let rows: Vec<[String; 4]> = file
        .summary
        .iter()
        .map(|r| {
            [
                r.region.clone(),
                format!("{:.2}", r.percent_accurate),
                format!("{:.2}", r.optimal_sensors_avg),
                r.total_points.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..4)
        .map(|k| rows.iter().map(|r| r[k].len()).chain([headers[k].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: [&str; 4]| {
        let _ = write!(out, "{:<w$}", cells[0], w = widths[0]);
        for k in 1..4 {
            let _ = write!(out, "  {:>w$}", cells[k], w = widths[k]);
        }
        out.push('\n');
    };
    line(&mut out, headers);
    for r in &rows {
        line(&mut out, [&r[0], &r[1], &r[2], &r[3]]);
    }
    let _ = writeln!(
        out,
        "\ntolerance {} {}, {} folds; random-sensor baseline {:.2}% pooled",
        file.report.tolerance,
        file.report.gap_unit,
        file.report.fold_count,
        file.report.pooled_percent(true)
    );
    out
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    check_input(&a.input)?;
    if let Some(p) = &a.out {
        check_output(p)?;
    }
    let file: ReportFile = formats::read_json(&a.input)?;
    let bytes = match a.format {
        ReportFormat::Table => render_table(&file).into_bytes(),
        ReportFormat::Csv => formats::summary_csv_bytes(&file.summary)?,
        ReportFormat::Json => {
            let mut b = serde_json::to_vec_pretty(&file.summary)?;
            b.push(b'\n');
            b
        }
    };
    match &a.out {
        Some(p) => formats::write_atomic(p, &bytes)?,
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = stdout.write_all(&bytes) {
                bail!(Error::Io { path: "<stdout>".into(), source: e });
            }
        }
    }
    Ok(())
}
