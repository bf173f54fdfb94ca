//! The `osaa` command line: generate synthetic benchmark domains, train
//! the full method or its baselines, evaluate checkpoints, sweep
//! hyperparameter grids, and gradient-check the autodiff engine.
//!
//! Conventions shared by every subcommand:
//!
//! - All writes stay inside the resolved output location. When `--out` is
//!   omitted, the `OSAA_OUT` environment variable provides the root and
//!   the command picks a deterministic subdirectory name.
//! - Run directories receive `manifest.json` before any long work starts,
//!   holding the resolved configuration, dataset content hashes, and seed
//!   list: enough to re-execute the run. The wall-clock field in the
//!   manifest is provenance only; metrics files carry no timestamps, so
//!   repeated runs produce byte-identical metrics.
//! - Exit codes: 0 success, 2 configuration error, 3 data error,
//!   4 numeric failure, 5 internal error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use osaa_core::checkpoint::{self, CheckpointMeta};
use osaa_core::data::DomainDataset;
use osaa_core::eval::{self, EvalCase, EvalReport, SweepAxis, SweepCell};
use osaa_core::gradcheck::{loss_checks, network_checks, op_checks, NamedCheck};
use osaa_core::scalar::{Precision, Scalar};
use osaa_core::synth::{gen_synthetic, GenReport, SynthSpec};
use osaa_core::train::{train, train_source_only, EpochTrace, TrainConfig, TrainOutput};
use osaa_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "osaa",
    version,
    about = "Selective adversarial alignment for distant-domain time-series adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a source/target domain pair from a synthesis spec file.
    Gen(GenArgs),
    /// Train the full method, a baseline, or an ablation on two domains.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset directory.
    Eval(EvalArgs),
    /// Run a keep-portion or loss-weight sweep over a value grid.
    Sweep(SweepArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Synthesis spec JSON (SynthSpec schema; unknown keys rejected).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; defaults to $OSAA_OUT/gen-<seed>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Full method: selection, intermediate domain, adversarial alignment.
    Osaa,
    /// Supervised training on the source only; the non-transfer baseline.
    SourceOnly,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Osaa => "osaa",
            Mode::SourceOnly => "source-only",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct TrainArgs {
    /// Source dataset directory (labeled).
    #[arg(long)]
    source: PathBuf,
    /// Target dataset directory; labels are used only for held-out scoring.
    #[arg(long)]
    target: PathBuf,
    /// Train config JSON (TrainConfig schema; unknown keys rejected).
    /// Omitted fields keep the reference defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Osaa)]
    mode: Mode,
    /// Components to disable: selection, intermediate, discriminator.
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
    /// Number of repeated runs; run i uses seed (base seed + i).
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Output directory; defaults to $OSAA_OUT/train-<config hash>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also record one mask-trace file per seed (which samples each
    /// selection step kept).
    #[arg(long)]
    mask_trace: bool,
    // Flag overrides beat the config file; the manifest echoes the result.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    keep_portion: Option<f64>,
    #[arg(long)]
    keep_portion_intermediate: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file produced by `osaa train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled dataset directory to score against.
    #[arg(long)]
    data: PathBuf,
    /// Metrics JSON destination; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    /// Full factorial over source and intermediate keep portions.
    Keep,
    /// Loss weights: lambda2 rows at lambda1=1, lambda1 rows at lambda2=0.3.
    Weights,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Comma-separated grid values, e.g. "0.03,0.3,3,30".
    #[arg(long)]
    grid: String,
    /// Training runs averaged inside each cell.
    #[arg(long, default_value_t = 1)]
    seeds_per_cell: usize,
    /// Cells trained in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory; defaults to $OSAA_OUT/sweep-<axis>-<config hash>.
    /// Rerunning with an existing directory resumes: recorded cells are
    /// kept, missing ones are trained.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Ops,
    Networks,
    Losses,
    All,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = ScopeArg::All)]
    scope: ScopeArg,
    /// Random restarts per check.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Negative control: corrupt one analytic gradient per check and
    /// demand the checker notices (the command then exits nonzero).
    #[arg(long)]
    inject_bug: bool,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

// ---------------------------------------------------------------- plumbing

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Re-execution record written into every run directory before the work it
/// describes begins. `written_at_unix` is the only non-reproducible field
/// and lives here, never in metrics files.
#[derive(Default, Serialize, Deserialize)]
#[serde(default)]
struct RunManifest {
    command: String,
    tool_version: String,
    written_at_unix: u64,
    out_dir: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    datasets: Vec<DatasetRef>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    synth: Option<SynthSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gen_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    axis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds_per_cell: Option<usize>,
}

impl RunManifest {
    fn new(command: &str, out: &Path) -> RunManifest {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RunManifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            written_at_unix: now,
            out_dir: out.display().to_string(),
            ..RunManifest::default()
        }
    }
}

#[derive(Default, Serialize, Deserialize)]
struct DatasetRef {
    role: String,
    path: String,
    content_hash: String,
}

fn dataset_ref(role: &str, path: &Path, ds: &DomainDataset) -> DatasetRef {
    DatasetRef {
        role: role.to_string(),
        path: path.display().to_string(),
        content_hash: ds.content_hash(),
    }
}

fn resolve_out(explicit: Option<PathBuf>, default_name: &str) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    match std::env::var_os("OSAA_OUT") {
        Some(root) => Ok(PathBuf::from(root).join(default_name)),
        None => Err(Error::Config(
            "no output location: pass --out or set OSAA_OUT".to_string(),
        )),
    }
}

/// Reads a JSON config-like file; failures are configuration errors that
/// name the file.
fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{what} {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

// --------------------------------------------------------------------- gen

#[derive(Serialize)]
struct GenSummary {
    report: GenReport,
    source_hash: String,
    target_hash: String,
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let spec: SynthSpec = read_json(&a.spec, "synthesis spec")?;
    spec.validate()?;
    let out = resolve_out(a.out, &format!("gen-{}", a.seed))?;

    let mut manifest = RunManifest::new("gen", &out);
    manifest.synth = Some(spec.clone());
    manifest.gen_seed = Some(a.seed);
    write_json(&out.join("manifest.json"), &manifest)?;
    write_json(&out.join("spec.json"), &spec)?;

    let (source, target, report) = gen_synthetic(&spec, a.seed)?;
    source.save(&out.join("source"))?;
    target.save(&out.join("target"))?;
    write_json(
        &out.join("gen_report.json"),
        &GenSummary {
            report,
            source_hash: source.content_hash(),
            target_hash: target.content_hash(),
        },
    )?;
    println!(
        "wrote {} source and {} target samples (m={}, {} classes) under {}",
        source.n,
        target.n,
        source.m,
        source.classes,
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------- train

fn apply_ablations(cfg: &mut TrainConfig, names: &[String]) -> Result<()> {
    for name in names.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        match name {
            "selection" => cfg.ablations.selection = true,
            "intermediate" => cfg.ablations.intermediate = true,
            "discriminator" => cfg.ablations.discriminator = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation component {other}; valid: selection, intermediate, discriminator"
                )))
            }
        }
    }
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => read_json(path, "train config")?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(v) = a.keep_portion {
        cfg.keep_portion = v;
    }
    if let Some(v) = a.keep_portion_intermediate {
        cfg.keep_portion_intermediate = Some(v);
    }
    if let Some(v) = a.lambda1 {
        cfg.lambda1 = v;
    }
    if let Some(v) = a.lambda2 {
        cfg.lambda2 = v;
    }
    if let Some(v) = a.precision {
        cfg.precision = match v {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    apply_ablations(&mut cfg, &a.ablate)?;
    cfg.validate()?;
    Ok(cfg)
}

/// One seed's results inside metrics.json; `checkpoint` is relative to the
/// run directory.
#[derive(Serialize)]
struct SeedRun {
    seed: u64,
    checkpoint: String,
    #[serde(flatten)]
    case: EvalCase,
    epoch_traces: Vec<EpochTrace>,
}

#[derive(Serialize)]
struct RunMetrics {
    report: EvalReport,
    runs: Vec<SeedRun>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(Error::Config("seeds: need at least 1".to_string()));
    }
    let cfg = resolve_train_config(&a)?;
    let source = DomainDataset::load(&a.source)?;
    let target = DomainDataset::load(&a.target)?;
    let chash = eval::config_hash(&cfg);
    let out = resolve_out(a.out.clone(), &format!("train-{chash}"))?;
    let scenario = format!("{}->{}", source.name, target.name);
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();

    let mut manifest = RunManifest::new("train", &out);
    manifest.mode = Some(a.mode.name().to_string());
    manifest.config = Some(cfg.clone());
    manifest.config_hash = Some(chash.clone());
    manifest.seeds = seeds.clone();
    manifest.datasets = vec![
        dataset_ref("source", &a.source, &source),
        dataset_ref("target", &a.target, &target),
    ];
    write_json(&out.join("manifest.json"), &manifest)?;

    match cfg.precision {
        Precision::F32 => run_train::<f32>(&a, &cfg, &source, &target, &scenario, &out, &seeds),
        Precision::F64 => run_train::<f64>(&a, &cfg, &source, &target, &scenario, &out, &seeds),
    }
}

fn run_train<T: Scalar>(
    a: &TrainArgs,
    cfg: &TrainConfig,
    source: &DomainDataset,
    target: &DomainDataset,
    scenario: &str,
    out: &Path,
    seeds: &[u64],
) -> Result<()> {
    let mut cases: Vec<EvalCase> = Vec::with_capacity(seeds.len());
    let mut runs: Vec<SeedRun> = Vec::with_capacity(seeds.len());
    for (i, &run_seed) in seeds.iter().enumerate() {
        let t0 = Instant::now();
        let result: TrainOutput<T> = match a.mode {
            Mode::Osaa => train::<T>(cfg, source, target, run_seed, a.mask_trace)?,
            Mode::SourceOnly => train_source_only::<T>(cfg, source, target, run_seed)?,
        };

        let rel = format!("checkpoints/seed-{run_seed}.osaa");
        let meta = CheckpointMeta {
            scenario: scenario.to_string(),
            config_hash: eval::config_hash(cfg),
            seed: run_seed,
            precision: T::PRECISION,
            net: result.networks.cfg.clone(),
            norm: result.target_norm,
            has_decoder: result.networks.has_decoder,
            has_discriminator: result.networks.has_discriminator,
        };
        checkpoint::save(&out.join(&rel), &result.networks, &meta)?;
        // The held-out split depends only on the base seed, so one copy
        // serves every seed; `osaa eval` on it reproduces final_eval.
        if i == 0 {
            result.target_test.save(&out.join("target-test"))?;
        }
        if a.mask_trace && !result.mask_trace.is_empty() {
            let path = out.join(format!("mask-trace/seed-{run_seed}.jsonl"));
            fs::create_dir_all(path.parent().expect("trace path has a parent"))?;
            let mut text = String::new();
            for row in &result.mask_trace {
                text.push_str(&serde_json::to_string(row)?);
                text.push('\n');
            }
            fs::write(path, text)?;
        }

        eprintln!(
            "seed {run_seed}: macro-F1 {:.4} ({:.1}s)",
            result.final_eval.macro_f1,
            t0.elapsed().as_secs_f64()
        );
        runs.push(SeedRun {
            seed: run_seed,
            checkpoint: rel,
            case: result.final_eval.clone(),
            epoch_traces: result.epoch_traces,
        });
        cases.push(result.final_eval);
    }

    let report = eval::build_report(scenario, cfg, seeds, &cases)?;
    write_json(&out.join("metrics.json"), &RunMetrics { report: report.clone(), runs })?;
    println!(
        "{} macro-F1 mean {:.4} std {:.4} over {} seed(s); results under {}",
        a.mode.name(),
        report.mean,
        report.std,
        seeds.len(),
        out.display()
    );
    Ok(())
}

// -------------------------------------------------------------------- eval

#[derive(Serialize)]
struct EvalDocument {
    checkpoint: String,
    data: String,
    data_hash: String,
    scenario: String,
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    case: EvalCase,
}

fn eval_case<T: Scalar>(path: &Path, data: &DomainDataset) -> Result<(CheckpointMeta, EvalCase)> {
    let (nets, meta) = checkpoint::load::<T>(path)?;
    let case = eval::evaluate(&nets, data, &meta.norm, 64)?;
    Ok((meta, case))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let peek = checkpoint::peek_meta(&a.checkpoint)?;
    let data = DomainDataset::load(&a.data)?;
    // Parameters evaluate in their stored precision, reproducing the
    // producing run's predictions bit for bit.
    let (meta, case) = match peek.precision {
        Precision::F32 => eval_case::<f32>(&a.checkpoint, &data)?,
        Precision::F64 => eval_case::<f64>(&a.checkpoint, &data)?,
    };
    let doc = EvalDocument {
        checkpoint: a.checkpoint.display().to_string(),
        data: a.data.display().to_string(),
        data_hash: data.content_hash(),
        scenario: meta.scenario,
        config_hash: meta.config_hash,
        seed: meta.seed,
        case,
    };
    println!("macro-F1 {:.4} micro-F1 {:.4} on {} samples", doc.case.macro_f1, doc.case.micro_f1, doc.case.n);
    match &a.out {
        Some(path) => write_json(path, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    Ok(())
}

// ------------------------------------------------------------------- sweep

fn parse_grid(text: &str, axis: SweepAxis) -> Result<Vec<f64>> {
    let mut grid = Vec::new();
    for token in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: f64 = token
            .parse()
            .map_err(|_| Error::Config(format!("grid value {token:?} is not a number")))?;
        let ok = match axis {
            SweepAxis::Keep => (0.0..=100.0).contains(&v),
            SweepAxis::Weights => v >= 0.0 && v.is_finite(),
        };
        if !ok {
            return Err(Error::Config(format!(
                "grid value {v} is out of range for this axis"
            )));
        }
        grid.push(v);
    }
    if grid.is_empty() {
        return Err(Error::Config("grid: need at least one value".to_string()));
    }
    Ok(grid)
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let (axis, axis_name) = match a.axis {
        AxisArg::Keep => (SweepAxis::Keep, "keep"),
        AxisArg::Weights => (SweepAxis::Weights, "weights"),
    };
    let grid = parse_grid(&a.grid, axis)?;
    let mut cfg = match &a.config {
        Some(path) => read_json::<TrainConfig>(path, "train config")?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if a.seeds_per_cell == 0 {
        return Err(Error::Config("seeds_per_cell: need at least 1".to_string()));
    }
    let source = DomainDataset::load(&a.source)?;
    let target = DomainDataset::load(&a.target)?;
    let chash = eval::config_hash(&cfg);
    let out = resolve_out(a.out, &format!("sweep-{axis_name}-{chash}"))?;
    let pairs = eval::sweep_pairs(axis, &grid);

    let mut manifest = RunManifest::new("sweep", &out);
    manifest.axis = Some(axis_name.to_string());
    manifest.grid = Some(grid.clone());
    manifest.config = Some(cfg.clone());
    manifest.config_hash = Some(chash.clone());
    manifest.seeds_per_cell = Some(a.seeds_per_cell);
    manifest.datasets = vec![
        dataset_ref("source", &a.source, &source),
        dataset_ref("target", &a.target, &target),
    ];
    let manifest_path = out.join("manifest.json");
    if manifest_path.exists() {
        // Resuming: the directory must describe the same sweep, otherwise
        // recorded cells would silently mix two experiments.
        let prev: RunManifest = read_json(&manifest_path, "sweep manifest")?;
        if prev.axis != manifest.axis
            || prev.grid != manifest.grid
            || prev.config_hash != manifest.config_hash
            || prev.seeds_per_cell != manifest.seeds_per_cell
        {
            return Err(Error::Config(format!(
                "{} holds a different sweep (axis, grid, config, or seeds_per_cell differ); use a fresh --out",
                out.display()
            )));
        }
    } else {
        write_json(&manifest_path, &manifest)?;
    }

    // The cell journal is the resume state: one JSON line per finished
    // cell, appended and flushed as each cell completes.
    let cells_path = out.join("cells.jsonl");
    let mut recorded: Vec<SweepCell> = Vec::new();
    if cells_path.exists() {
        for line in fs::read_to_string(&cells_path)?.lines().filter(|l| !l.trim().is_empty()) {
            recorded.push(serde_json::from_str(line).map_err(|e| {
                Error::Data(format!("corrupt cell record in {}: {e}", cells_path.display()))
            })?);
        }
    }
    let key = |a1: f64, a2: f64| (a1.to_bits(), a2.to_bits());
    let have: std::collections::HashSet<(u64, u64)> =
        recorded.iter().map(|c| key(c.axis1, c.axis2)).collect();
    let todo: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|&(a1, a2)| !have.contains(&key(a1, a2)))
        .collect();
    eprintln!(
        "sweep {axis_name}: {} cells, {} recorded, {} to run",
        pairs.len(),
        recorded.len(),
        todo.len()
    );

    let journal = Mutex::new(
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&cells_path)?,
    );
    let journal_err: Mutex<Option<std::io::Error>> = Mutex::new(None);
    let sink = |cell: &SweepCell| {
        let line = serde_json::to_string(cell).expect("cell serializes");
        let mut f = journal.lock().expect("journal lock");
        let write = writeln!(f, "{line}").and_then(|()| f.flush());
        if let Err(e) = write {
            journal_err.lock().expect("journal error lock").get_or_insert(e);
        }
        eprintln!(
            "cell ({}, {}): {}",
            cell.axis1,
            cell.axis2,
            cell.mean_f1.map_or_else(|| cell.status.clone(), |v| format!("mean F1 {v:.4}"))
        );
    };
    let fresh = match cfg.precision {
        Precision::F32 => eval::run_sweep::<f32>(axis, &todo, &cfg, &source, &target, a.seeds_per_cell, a.jobs, &sink),
        Precision::F64 => eval::run_sweep::<f64>(axis, &todo, &cfg, &source, &target, a.seeds_per_cell, a.jobs, &sink),
    };
    if let Some(e) = journal_err.into_inner().expect("journal error lock").take() {
        return Err(Error::Io(e));
    }

    // Emit the CSV in grid order regardless of which cells were resumed.
    let mut by_key: BTreeMap<(u64, u64), SweepCell> = BTreeMap::new();
    for c in recorded.into_iter().chain(fresh) {
        by_key.insert(key(c.axis1, c.axis2), c);
    }
    let cells: Vec<SweepCell> = pairs
        .iter()
        .map(|&(a1, a2)| {
            by_key
                .get(&key(a1, a2))
                .cloned()
                .ok_or_else(|| Error::Internal(format!("cell ({a1}, {a2}) missing after sweep")))
        })
        .collect::<Result<_>>()?;
    fs::write(out.join("sweep.csv"), eval::sweep_csv(axis, &cells))?;
    let failed = cells.iter().filter(|c| c.mean_f1.is_none()).count();
    println!(
        "sweep complete: {} cells, {failed} failed; CSV under {}",
        cells.len(),
        out.display()
    );
    Ok(())
}

// --------------------------------------------------------------- gradcheck

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut suites: Vec<(&str, Vec<NamedCheck>)> = Vec::new();
    match a.scope {
        ScopeArg::Ops => suites.push(("ops", op_checks())),
        ScopeArg::Networks => suites.push(("networks", network_checks())),
        ScopeArg::Losses => suites.push(("losses", loss_checks())),
        ScopeArg::All => {
            suites.push(("ops", op_checks()));
            suites.push(("networks", network_checks()));
            suites.push(("losses", loss_checks()));
        }
    }
    if a.seeds == 0 {
        return Err(Error::Config("seeds: need at least 1".to_string()));
    }

    let mut total = 0usize;
    let mut failed = 0usize;
    for (suite, checks) in suites {
        for check in checks {
            let mut max_rel = 0.0f64;
            let mut passed = true;
            for seed in 0..a.seeds {
                for rep in (check.run)(seed, a.inject_bug)? {
                    max_rel = max_rel.max(rep.max_rel);
                    passed &= rep.passed;
                }
            }
            total += 1;
            if !passed {
                failed += 1;
            }
            println!(
                "{} {suite}/{} max_rel {max_rel:.3e}",
                if passed { "PASS" } else { "FAIL" },
                check.name
            );
        }
    }
    println!("{total} checks, {failed} failed ({} seeds each)", a.seeds);
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} gradient check(s) failed")));
    }
    Ok(())
}
