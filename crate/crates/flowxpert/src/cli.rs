//! Command-line front end. One subcommand per pipeline stage, a flat
//! `key=value` config file with flag overrides (precedence flag > file >
//! default), and a `<out>.manifest.json` written next to every file
//! output so a run can be reproduced from its artifacts alone.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bundle::{load_model, save_model, ModelIoError};
use crate::cluster::{dbscan, k_distance, ClusterError};
use crate::config::{ConfigError, RunConfig};
use crate::eval::{
    bench, export_embeddings, score, sparsity_report, EvalError, MetricsReport,
};
use crate::flow::{
    read_flow_csv_path, write_flow_csv, FlowCsvError, FlowTable, RawFeatureRecord,
    CONTINUOUS_FEATURE_NAMES,
};
use crate::nn::optim::OptimizerKind;
use crate::nn::NeuralError;
use crate::pcap::{CaptureReader, IngestStats, PcapError};
use crate::preprocess::{
    downsample, parse_labels, split_folds, Class, LabelSpec, PreprocessError, Scaler,
};
use crate::train::{predict_all, train_pipeline, PipelineConfig, TrainError};
use crate::util::{derive_seed, fmt_g9, Crc32};

/// Exit-code classification. Usage problems (bad flags, bad config,
/// missing required inputs) exit 1; data problems (unreadable or
/// malformed inputs, failed training) exit 2 with the module error name
/// on standard error.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

macro_rules! data_error {
    ($($ty:ty),+ $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        })+
    };
}

data_error!(
    PcapError,
    FlowCsvError,
    PreprocessError,
    ClusterError,
    TrainError,
    ModelIoError,
    EvalError,
    NeuralError,
    std::io::Error,
);

#[derive(Parser)]
#[command(
    name = "flowxpert",
    version,
    about = "Flow-level network traffic detection: extract, train, evaluate"
)]
struct Cli {
    /// Flat key=value config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Base seed; every stochastic stage derives its own stream from it.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Read capture files and write one feature row per expired flow.
    Extract(ExtractArgs),
    /// Fit the min-max scaler on a flow CSV; optionally dump vectors.
    Fit(FitArgs),
    /// Cluster scaled vectors and report assignments and k-distances.
    Cluster(ClusterArgs),
    /// Train only the contrastive embedding on a pseudo-labeled sample.
    TrainEmbed(TrainEmbedArgs),
    /// Run the full pipeline and write a model bundle.
    Train(TrainArgs),
    /// Score a model on labeled flows, or cross-validate with --folds.
    Eval(EvalArgs),
    /// Measure single-record prediction latency per stage.
    Bench(BenchArgs),
    /// Classify flows with a trained model.
    Predict(PredictArgs),
    /// Print a model's parameter count, architecture, and manifest.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Capture file; repeat for several inputs, processed in order.
    #[arg(long = "pcap", value_name = "FILE")]
    pcaps: Vec<PathBuf>,
    /// Output flow CSV.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Label spec; adds a label column to the CSV.
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Seconds of silence after which a flow expires.
    #[arg(long, value_name = "SECONDS")]
    inactivity_timeout: Option<f64>,
    /// Hard cap on flow lifetime, seconds.
    #[arg(long, value_name = "SECONDS")]
    active_timeout: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Input flow CSV.
    #[arg(long, value_name = "FILE")]
    flows: Option<PathBuf>,
    /// Output scaler JSON.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also write the scaled feature vectors as CSV.
    #[arg(long, value_name = "FILE")]
    vectors: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Input flow CSV.
    #[arg(long, value_name = "FILE")]
    flows: Option<PathBuf>,
    /// Output assignment CSV (index,cluster).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Neighborhood radius on the scaled vectors.
    #[arg(long, value_name = "R")]
    eps: Option<f64>,
    /// Core-point threshold (neighbors within eps, self included).
    #[arg(long, value_name = "N")]
    min_pts: Option<usize>,
    /// Cluster only this fraction of the rows, sampled by seed.
    #[arg(long, value_name = "RATE")]
    sample_rate: Option<f64>,
    /// Write the sorted k-distance curve here.
    #[arg(long, value_name = "FILE")]
    k_distance: Option<PathBuf>,
    /// Neighbor rank for the k-distance curve; defaults to min_pts.
    #[arg(long, value_name = "K")]
    k: Option<usize>,
}

#[derive(Args)]
struct TrainEmbedArgs {
    /// Input flow CSV.
    #[arg(long, value_name = "FILE")]
    flows: Option<PathBuf>,
    /// Output loss curve CSV (epoch,loss).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "R")]
    eps: Option<f64>,
    #[arg(long, value_name = "N")]
    min_pts: Option<usize>,
    /// Contrastive margin m.
    #[arg(long, value_name = "M")]
    margin: Option<f64>,
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    #[arg(long, value_name = "N")]
    batch: Option<usize>,
    #[arg(long, value_name = "LR")]
    lr: Option<f64>,
    /// Fraction of rows pseudo-labeled and trained on.
    #[arg(long, value_name = "RATE")]
    sample_rate: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Input flow CSV; may carry its own label column.
    #[arg(long, value_name = "FILE")]
    flows: Option<PathBuf>,
    /// Label spec; overrides any label column in the CSV.
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Output model bundle.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also write both loss curves as CSV (phase,epoch,loss).
    #[arg(long, value_name = "FILE")]
    losses: Option<PathBuf>,
    #[arg(long, value_name = "R")]
    eps: Option<f64>,
    #[arg(long, value_name = "N")]
    min_pts: Option<usize>,
    #[arg(long, value_name = "M")]
    margin: Option<f64>,
    #[arg(long, value_name = "RATE")]
    sample_rate: Option<f64>,
    #[arg(long, value_name = "N")]
    embed_epochs: Option<usize>,
    #[arg(long, value_name = "N")]
    embed_batch: Option<usize>,
    #[arg(long, value_name = "LR")]
    embed_lr: Option<f64>,
    #[arg(long, value_name = "N")]
    detector_epochs: Option<usize>,
    #[arg(long, value_name = "N")]
    detector_batch: Option<usize>,
    #[arg(long, value_name = "LR")]
    detector_lr: Option<f64>,
    /// adam or sgd.
    #[arg(long, value_name = "NAME")]
    optimizer: Option<OptimizerKind>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model bundle to score.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Cross-validate: train and score k leak-free folds instead.
    #[arg(long, value_name = "K")]
    folds: Option<usize>,
    /// Input flow CSV; may carry its own label column.
    #[arg(long, value_name = "FILE")]
    flows: Option<PathBuf>,
    /// Label spec; overrides any label column in the CSV.
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Write the report(s) as JSON here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Write per-record embeddings as CSV (model mode only).
    #[arg(long, value_name = "FILE")]
    export_embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Flow CSV supplying the records cycled through the benchmark.
    #[arg(long, value_name = "FILE")]
    flows: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    iters: Option<usize>,
    #[arg(long, value_name = "N")]
    warmup: Option<usize>,
    /// Write the report as JSON here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    flows: Option<PathBuf>,
    /// Output CSV; standard output when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Also report input sparsity over this flow CSV.
    #[arg(long, value_name = "FILE")]
    flows: Option<PathBuf>,
    /// Near-zero threshold for the sparsity report.
    #[arg(long, value_name = "T")]
    tau: Option<f64>,
}

/// Parse argv, run the chosen command, and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.cmd {
        Cmd::Extract(a) => a.apply(&mut cfg),
        Cmd::Fit(a) => a.apply(&mut cfg),
        Cmd::Cluster(a) => a.apply(&mut cfg),
        Cmd::TrainEmbed(a) => a.apply(&mut cfg),
        Cmd::Train(a) => a.apply(&mut cfg),
        Cmd::Eval(a) => a.apply(&mut cfg),
        Cmd::Bench(a) => a.apply(&mut cfg),
        Cmd::Predict(a) => a.apply(&mut cfg),
        Cmd::Inspect(a) => a.apply(&mut cfg),
    }
    cfg.validate()?;
    match cli.cmd {
        Cmd::Extract(_) => cmd_extract(&cfg),
        Cmd::Fit(a) => cmd_fit(&cfg, &a),
        Cmd::Cluster(a) => cmd_cluster(&cfg, &a),
        Cmd::TrainEmbed(_) => cmd_train_embed(&cfg),
        Cmd::Train(a) => cmd_train(&cfg, &a),
        Cmd::Eval(a) => cmd_eval(&cfg, &a),
        Cmd::Bench(_) => cmd_bench(&cfg),
        Cmd::Predict(_) => cmd_predict(&cfg),
        Cmd::Inspect(a) => cmd_inspect(&cfg, &a),
    }
}

macro_rules! apply_opt {
    ($cfg:expr, $args:expr; $($field:ident => $target:expr),+ $(,)?) => {
        $(if let Some(v) = $args.$field.clone() {
            $target = v.into();
        })+
    };
}

impl ExtractArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if !self.pcaps.is_empty() {
            cfg.paths.pcaps = self.pcaps.clone();
        }
        apply_opt!(cfg, self;
            out => cfg.paths.out,
            labels => cfg.paths.labels,
            inactivity_timeout => cfg.inactivity_timeout,
            active_timeout => cfg.active_timeout,
        );
    }
}

impl FitArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        apply_opt!(cfg, self; flows => cfg.paths.flows, out => cfg.paths.out);
    }
}

impl ClusterArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        apply_opt!(cfg, self;
            flows => cfg.paths.flows,
            out => cfg.paths.out,
            eps => cfg.eps,
            min_pts => cfg.min_pts,
        );
        if let Some(rate) = self.sample_rate {
            cfg.downsample_rate = rate;
        }
    }
}

impl TrainEmbedArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        apply_opt!(cfg, self;
            flows => cfg.paths.flows,
            out => cfg.paths.out,
            eps => cfg.eps,
            min_pts => cfg.min_pts,
            margin => cfg.margin,
            epochs => cfg.embed_epochs,
            batch => cfg.embed_batch,
            lr => cfg.embed_lr,
            sample_rate => cfg.downsample_rate,
        );
    }
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        apply_opt!(cfg, self;
            flows => cfg.paths.flows,
            labels => cfg.paths.labels,
            out => cfg.paths.out,
            eps => cfg.eps,
            min_pts => cfg.min_pts,
            margin => cfg.margin,
            sample_rate => cfg.downsample_rate,
            embed_epochs => cfg.embed_epochs,
            embed_batch => cfg.embed_batch,
            embed_lr => cfg.embed_lr,
            detector_epochs => cfg.detector_epochs,
            detector_batch => cfg.detector_batch,
            detector_lr => cfg.detector_lr,
            optimizer => cfg.optimizer,
        );
    }
}

impl EvalArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        apply_opt!(cfg, self;
            model => cfg.paths.model,
            flows => cfg.paths.flows,
            labels => cfg.paths.labels,
            out => cfg.paths.out,
            folds => cfg.folds,
        );
    }
}

impl BenchArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        apply_opt!(cfg, self;
            model => cfg.paths.model,
            flows => cfg.paths.flows,
            out => cfg.paths.out,
            iters => cfg.bench_iters,
            warmup => cfg.bench_warmup,
        );
    }
}

impl PredictArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        apply_opt!(cfg, self;
            model => cfg.paths.model,
            flows => cfg.paths.flows,
            out => cfg.paths.out,
        );
    }
}

impl InspectArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        apply_opt!(cfg, self;
            model => cfg.paths.model,
            flows => cfg.paths.flows,
            tau => cfg.tau,
        );
    }
}

// ---- shared plumbing ----------------------------------------------------

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required input: {what}")))
}

fn file_crc(path: &Path) -> std::io::Result<u32> {
    let mut f = File::open(path)?;
    let mut crc = Crc32::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        crc.update(&buf[..n]);
    }
    Ok(crc.finish())
}

#[derive(Serialize)]
struct FileStamp {
    path: String,
    crc32: String,
}

/// Reproducibility record written next to each file output: with the
/// same tool version, config hash, and input checksums, every non-bench
/// command rewrites its outputs byte for byte.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'static str,
    tool_version: &'static str,
    seed: u64,
    config_crc32: String,
    config: &'a RunConfig,
    inputs: Vec<FileStamp>,
    outputs: Vec<String>,
}

fn write_manifest(
    command: &'static str,
    cfg: &RunConfig,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<(), CliError> {
    let primary = match outputs.first() {
        Some(p) => *p,
        None => return Ok(()),
    };
    let mut stamps = Vec::with_capacity(inputs.len());
    for p in inputs {
        stamps.push(FileStamp {
            path: p.display().to_string(),
            crc32: format!("{:08x}", file_crc(p)?),
        });
    }
    let config_json = serde_json::to_vec(cfg).expect("config serializes");
    let manifest = RunManifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_crc32: format!("{:08x}", crate::util::crc32(&config_json)),
        config: cfg,
        inputs: stamps,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = manifest_path(primary);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| {
        CliError::Data(format!("Io: writing {}: {e}", path.display()))
    })
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn load_flows(path: &Path) -> Result<(Vec<RawFeatureRecord>, Option<Vec<String>>), CliError> {
    Ok(read_flow_csv_path(path)?)
}

/// Ground-truth classes: an explicit rule spec wins over the CSV's own
/// label column; having neither is a usage error.
fn resolve_classes(
    records: &[RawFeatureRecord],
    column: Option<Vec<String>>,
    spec_path: Option<&Path>,
) -> Result<Vec<Class>, CliError> {
    if let Some(path) = spec_path {
        let spec = LabelSpec::from_path(path)?;
        return Ok(spec.classify_all(records));
    }
    if let Some(raw) = column {
        return Ok(parse_labels(&raw)?);
    }
    Err(CliError::Usage(
        "missing required input: --labels spec or a labeled flow CSV".to_string(),
    ))
}

fn create_out(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("Io: creating {}: {e}", path.display())))
}

fn scaled_points(scaler: &Scaler, records: &[RawFeatureRecord]) -> Vec<Vec<f64>> {
    scaler.transform_all(records).iter().map(|v| v.to_f64_vec()).collect()
}

// ---- commands -----------------------------------------------------------

#[derive(Serialize)]
struct ExtractReport {
    flows: usize,
    captures: usize,
    stats: IngestStats,
}

fn cmd_extract(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.paths.pcaps.is_empty() {
        return Err(CliError::Usage("missing required input: --pcap".to_string()));
    }
    let out = require(&cfg.paths.out, "--out")?;

    let mut table = FlowTable::new(cfg.flow_config());
    let mut records = Vec::new();
    let mut stats = IngestStats::default();
    for path in &cfg.paths.pcaps {
        let mut reader = CaptureReader::open(path)?;
        while let Some(pkt) = reader.next_packet()? {
            records.extend(table.assign(&pkt));
        }
        let s = reader.stats();
        stats.packets_read += s.packets_read;
        stats.skipped_non_ip += s.skipped_non_ip;
        stats.skipped_fragment += s.skipped_fragment;
        stats.skipped_truncated += s.skipped_truncated;
    }
    records.extend(table.finish());

    let labels = match &cfg.paths.labels {
        Some(spec_path) => {
            let spec = LabelSpec::from_path(spec_path)?;
            Some(spec.classify_all(&records).iter().map(Class::to_string).collect::<Vec<_>>())
        }
        None => None,
    };
    let mut w = create_out(out)?;
    write_flow_csv(&mut w, &records, labels.as_deref())?;
    w.flush()?;

    let report = ExtractReport { flows: records.len(), captures: cfg.paths.pcaps.len(), stats };
    let report_path = {
        let mut s = out.as_os_str().to_os_string();
        s.push(".report.json");
        PathBuf::from(s)
    };
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )?;

    let mut inputs: Vec<&Path> = cfg.paths.pcaps.iter().map(PathBuf::as_path).collect();
    if let Some(l) = &cfg.paths.labels {
        inputs.push(l);
    }
    write_manifest("extract", cfg, &inputs, &[out, &report_path])?;
    println!(
        "{} flows from {} packets ({} skipped)",
        report.flows,
        stats.packets_read,
        stats.skipped_total()
    );
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, args: &FitArgs) -> Result<(), CliError> {
    let flows = require(&cfg.paths.flows, "--flows")?;
    let out = require(&cfg.paths.out, "--out")?;
    let (records, _) = load_flows(flows)?;
    let scaler = Scaler::fit(&records)?;

    std::fs::write(
        out,
        serde_json::to_string_pretty(&scaler).expect("scaler serializes") + "\n",
    )?;
    let mut outputs: Vec<&Path> = vec![out];
    if let Some(vec_path) = &args.vectors {
        let mut w = create_out(vec_path)?;
        writeln!(
            w,
            "proto_tcp,proto_udp,proto_other,{}",
            CONTINUOUS_FEATURE_NAMES.join(",")
        )?;
        for v in scaler.transform_all(&records) {
            let row: Vec<String> = v.as_slice().iter().map(|&x| fmt_g9(x as f64)).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        outputs.push(vec_path);
    }
    write_manifest("fit", cfg, &[flows], &outputs)?;
    println!("scaler fitted on {} records", records.len());
    Ok(())
}

#[derive(Serialize)]
struct ClusterSummary {
    sampled: usize,
    clusters: usize,
    non_noise: usize,
}

fn cmd_cluster(cfg: &RunConfig, args: &ClusterArgs) -> Result<(), CliError> {
    let flows = require(&cfg.paths.flows, "--flows")?;
    let out = require(&cfg.paths.out, "--out")?;
    let (records, _) = load_flows(flows)?;
    let scaler = Scaler::fit(&records)?;
    let points = scaled_points(&scaler, &records);

    // Keep original row indices through the optional sampling step so
    // the assignment CSV refers back to the input file.
    let indices: Vec<usize> = match args.sample_rate {
        Some(rate) => downsample(points.len(), rate, derive_seed(cfg.seed, "downsample"))?,
        None => (0..points.len()).collect(),
    };
    let sampled: Vec<Vec<f64>> = indices.iter().map(|&i| points[i].clone()).collect();
    let pseudo = dbscan(&sampled, cfg.eps, cfg.min_pts);

    let mut w = create_out(out)?;
    writeln!(w, "index,cluster")?;
    for (&orig, &label) in indices.iter().zip(&pseudo.labels) {
        writeln!(w, "{orig},{label}")?;
    }
    w.flush()?;

    let mut outputs: Vec<&Path> = vec![out];
    if let Some(kd_path) = &args.k_distance {
        let k = args.k.unwrap_or(cfg.min_pts);
        let curve = k_distance(&sampled, k);
        let mut w = create_out(kd_path)?;
        writeln!(w, "rank,distance")?;
        for (rank, d) in curve.iter().enumerate() {
            writeln!(w, "{rank},{}", fmt_g9(*d))?;
        }
        w.flush()?;
        outputs.push(kd_path);
    }
    write_manifest("cluster", cfg, &[flows], &outputs)?;
    let summary = ClusterSummary {
        sampled: sampled.len(),
        clusters: pseudo.clusters,
        non_noise: pseudo.non_noise(),
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn cmd_train_embed(cfg: &RunConfig) -> Result<(), CliError> {
    let flows = require(&cfg.paths.flows, "--flows")?;
    let out = require(&cfg.paths.out, "--out")?;
    let (records, _) = load_flows(flows)?;
    let scaler = Scaler::fit(&records)?;
    let vectors = scaler.transform_all(&records);

    let pipeline = cfg.pipeline_config();
    let sample = downsample(
        vectors.len(),
        pipeline.downsample_rate,
        derive_seed(pipeline.seed, "downsample"),
    )?;
    let sampled: Vec<_> = sample.iter().map(|&i| vectors[i]).collect();
    let points: Vec<Vec<f64>> = sampled.iter().map(|v| v.to_f64_vec()).collect();
    let pseudo = dbscan(&points, pipeline.eps, pipeline.min_pts);
    let (_, losses) = crate::train::train_embedding(&sampled, &pseudo, &pipeline.embed_config())?;

    let mut w = create_out(out)?;
    writeln!(w, "epoch,loss")?;
    for (epoch, loss) in losses.iter().enumerate() {
        writeln!(w, "{},{}", epoch + 1, fmt_g9(*loss))?;
    }
    w.flush()?;
    write_manifest("train-embed", cfg, &[flows], &[out])?;

    #[derive(Serialize)]
    struct EmbedSummary {
        sampled: usize,
        clusters: usize,
        non_noise: usize,
        epochs: usize,
        final_loss: f64,
    }
    let summary = EmbedSummary {
        sampled: sampled.len(),
        clusters: pseudo.clusters,
        non_noise: pseudo.non_noise(),
        epochs: losses.len(),
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn dataset_hash(path: &Path) -> Result<String, CliError> {
    Ok(format!("{:08x}", file_crc(path)?))
}

fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    let flows = require(&cfg.paths.flows, "--flows")?;
    let out = require(&cfg.paths.out, "--out")?;
    let (records, column) = load_flows(flows)?;
    let classes = resolve_classes(&records, column, cfg.paths.labels.as_deref())?;

    let outcome = train_pipeline(&records, &classes, &cfg.pipeline_config(), dataset_hash(flows)?)?;
    save_model(out, &outcome.bundle)?;

    let mut inputs: Vec<&Path> = vec![flows];
    if let Some(l) = &cfg.paths.labels {
        inputs.push(l);
    }
    let mut outputs: Vec<&Path> = vec![out];
    if let Some(losses_path) = &args.losses {
        let mut w = create_out(losses_path)?;
        writeln!(w, "phase,epoch,loss")?;
        for (epoch, loss) in outcome.embed_losses.iter().enumerate() {
            writeln!(w, "embed,{},{}", epoch + 1, fmt_g9(*loss))?;
        }
        for (epoch, loss) in outcome.detector_losses.iter().enumerate() {
            writeln!(w, "detector,{},{}", epoch + 1, fmt_g9(*loss))?;
        }
        w.flush()?;
        outputs.push(losses_path);
    }
    write_manifest("train", cfg, &inputs, &outputs)?;

    #[derive(Serialize)]
    struct TrainSummary<'a> {
        flows: usize,
        sampled: usize,
        clusters: usize,
        non_noise: usize,
        embed_final_loss: f64,
        detector_final_loss: f64,
        trainable_parameters: usize,
        model: &'a str,
    }
    let summary = TrainSummary {
        flows: records.len(),
        sampled: outcome.pseudo.sampled,
        clusters: outcome.pseudo.clusters,
        non_noise: outcome.pseudo.non_noise,
        embed_final_loss: outcome.embed_losses.last().copied().unwrap_or(f64::NAN),
        detector_final_loss: outcome.detector_losses.last().copied().unwrap_or(f64::NAN),
        trainable_parameters: outcome.bundle.param_count(),
        model: &out.display().to_string(),
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<(), CliError> {
    if args.model.is_some() && args.folds.is_some() {
        return Err(CliError::Usage(
            "eval takes either --model or --folds, not both".to_string(),
        ));
    }
    let flows = require(&cfg.paths.flows, "--flows")?;
    let (records, column) = load_flows(flows)?;
    let classes = resolve_classes(&records, column, cfg.paths.labels.as_deref())?;

    if args.folds.is_none() && cfg.paths.model.is_some() {
        return eval_model(cfg, args, flows, &records, &classes);
    }
    eval_folds(cfg, flows, &records, &classes)
}

fn eval_model(
    cfg: &RunConfig,
    args: &EvalArgs,
    flows: &Path,
    records: &[RawFeatureRecord],
    classes: &[Class],
) -> Result<(), CliError> {
    let model_path = require(&cfg.paths.model, "--model")?;
    let bundle = load_model(model_path)?;
    let predictions: Vec<Class> = predict_all(&bundle, records).into_iter().map(|(c, _)| c).collect();
    let report = score(&predictions, classes)?;
    println!("{report}");

    let mut inputs: Vec<&Path> = vec![flows, model_path];
    if let Some(l) = &cfg.paths.labels {
        inputs.push(l);
    }
    let mut outputs: Vec<&Path> = Vec::new();
    if let Some(out) = &cfg.paths.out {
        std::fs::write(
            out,
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        )?;
        outputs.push(out);
    }
    if let Some(emb_path) = &args.export_embeddings {
        let mut w = create_out(emb_path)?;
        export_embeddings(&bundle, records, Some(classes), None, &mut w)?;
        w.flush()?;
        outputs.push(emb_path);
    }
    write_manifest("eval", cfg, &inputs, &outputs)
}

#[derive(Serialize)]
struct FoldReport {
    fold: usize,
    train_records: usize,
    test_records: usize,
    report: MetricsReport,
}

fn eval_folds(
    cfg: &RunConfig,
    flows: &Path,
    records: &[RawFeatureRecord],
    classes: &[Class],
) -> Result<(), CliError> {
    let folds = split_folds(records.len(), cfg.folds, derive_seed(cfg.seed, "folds"))?;
    let hash = dataset_hash(flows)?;
    let mut results = Vec::with_capacity(folds.len());
    for (i, test_idx) in folds.iter().enumerate() {
        let in_test: std::collections::HashSet<usize> = test_idx.iter().copied().collect();
        let mut train_records = Vec::with_capacity(records.len() - test_idx.len());
        let mut train_classes = Vec::with_capacity(train_records.capacity());
        for (j, r) in records.iter().enumerate() {
            if !in_test.contains(&j) {
                train_records.push(r.clone());
                train_classes.push(classes[j]);
            }
        }
        // The scaler and both networks are fitted inside train_pipeline
        // on the training split only; the held-out fold stays unseen.
        let pipeline = PipelineConfig {
            seed: derive_seed(cfg.seed, &format!("fold{i}")),
            ..cfg.pipeline_config()
        };
        let outcome = train_pipeline(&train_records, &train_classes, &pipeline, hash.clone())?;

        let test_records: Vec<RawFeatureRecord> =
            test_idx.iter().map(|&j| records[j].clone()).collect();
        let test_classes: Vec<Class> = test_idx.iter().map(|&j| classes[j]).collect();
        let predictions: Vec<Class> =
            predict_all(&outcome.bundle, &test_records).into_iter().map(|(c, _)| c).collect();
        let report = score(&predictions, &test_classes)?;
        println!("fold {i}:");
        println!("{report}");
        results.push(FoldReport {
            fold: i,
            train_records: train_records.len(),
            test_records: test_records.len(),
            report,
        });
    }
    let mean = |f: fn(&MetricsReport) -> f64| {
        results.iter().map(|r| f(&r.report)).sum::<f64>() / results.len() as f64
    };
    println!(
        "mean f1 over {} folds: benign {:.4}, malicious {:.4}",
        results.len(),
        mean(|r| r.benign.f1),
        mean(|r| r.malicious.f1)
    );

    let mut inputs: Vec<&Path> = vec![flows];
    if let Some(l) = &cfg.paths.labels {
        inputs.push(l);
    }
    let mut outputs: Vec<&Path> = Vec::new();
    if let Some(out) = &cfg.paths.out {
        std::fs::write(
            out,
            serde_json::to_string_pretty(&results).expect("reports serialize") + "\n",
        )?;
        outputs.push(out);
    }
    write_manifest("eval", cfg, &inputs, &outputs)
}

fn cmd_bench(cfg: &RunConfig) -> Result<(), CliError> {
    let model_path = require(&cfg.paths.model, "--model")?;
    let flows = require(&cfg.paths.flows, "--flows")?;
    let bundle = load_model(model_path)?;
    let (records, _) = load_flows(flows)?;
    let report = bench(&bundle, &records, cfg.bench_iters, cfg.bench_warmup)?;
    println!("{report}");
    if let Some(out) = &cfg.paths.out {
        std::fs::write(
            out,
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        )?;
        write_manifest("bench", cfg, &[model_path, flows], &[out])?;
    }
    Ok(())
}

fn cmd_predict(cfg: &RunConfig) -> Result<(), CliError> {
    let model_path = require(&cfg.paths.model, "--model")?;
    let flows = require(&cfg.paths.flows, "--flows")?;
    let bundle = load_model(model_path)?;
    let (records, _) = load_flows(flows)?;
    let predictions = predict_all(&bundle, &records);

    let render = |w: &mut dyn Write| -> Result<(), CliError> {
        writeln!(w, "index,class,p_benign,p_malicious")?;
        for (i, (class, probs)) in predictions.iter().enumerate() {
            writeln!(
                w,
                "{i},{class},{},{}",
                fmt_g9(probs[0] as f64),
                fmt_g9(probs[1] as f64)
            )?;
        }
        Ok(())
    };
    match &cfg.paths.out {
        Some(out) => {
            let mut w = create_out(out)?;
            render(&mut w)?;
            w.flush()?;
            write_manifest("predict", cfg, &[model_path, flows], &[out])?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            render(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_inspect(cfg: &RunConfig, _args: &InspectArgs) -> Result<(), CliError> {
    let model_path = require(&cfg.paths.model, "--model")?;
    let bundle = load_model(model_path)?;
    println!("trainable parameters: {}", bundle.param_count());
    let e = &bundle.embedding;
    println!("embedding: {} -> {} -> {}", e.in_dim(), e.hidden_dim(), e.out_dim());
    let dims = bundle.encoder.dims();
    println!(
        "encoder: {} -> {} -> {} -> {}",
        bundle.encoder.in_dim(),
        dims[0],
        dims[1],
        dims[2]
    );
    println!("head: {} -> {}", bundle.head.l.in_dim(), bundle.head.l.out_dim());
    println!("margin: {}", fmt_g9(bundle.margin));
    println!("protocols: {}", bundle.protocols.join(","));
    println!("training manifest:");
    println!(
        "{}",
        serde_json::to_string_pretty(&bundle.manifest).expect("manifest serializes")
    );

    if let Some(flows) = &cfg.paths.flows {
        let (records, _) = load_flows(flows)?;
        let vectors = bundle.scaler.transform_all(&records);
        let report = sparsity_report(&vectors, cfg.tau)?;
        println!("{report}");
    }
    Ok(())
}
