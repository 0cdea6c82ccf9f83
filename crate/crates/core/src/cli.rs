//! Command-line front end. `main.rs` only forwards to [`run`].
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ablation::{run_grid, summarize, write_rows_csv, Variant};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, roc_auc};
use crate::nn::{model_from_json, model_to_json};
use crate::space::{mean_off_diagonal, pairwise_angles, solve_guide_space};
use crate::synthdata::{generate, read_dataset, write_dataset, GenSpec, SyntheticDataset};
use crate::trainer::{evaluate, train_logged, write_feature_csv, write_metrics_jsonl, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const SPACE_FILE: &str = "guidespace.json";
pub const CONFIDENCE_FILE: &str = "confidence.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";

#[derive(Debug, Parser)]
#[command(name = "guidespace", version, about = "Guide-space training on a synthetic multi-domain benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a guide-space and print its pairwise forgery angles.
    SolveSpace {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        num_forgery: usize,
        #[arg(long, default_value_t = 120.0)]
        theta0: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset directory.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run into a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Replay a previous run from its manifest.
        #[arg(long, conflicts_with = "config_file")]
        manifest: Option<PathBuf>,
        /// Dataset directory; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a scores file (`score,y` CSV) or a trained run.
    Eval {
        #[arg(long, conflicts_with = "run")]
        scores: Option<PathBuf>,
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the variant grid and write a comparison table.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Comma-separated subset of variants.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write encoded features of one split as CSV.
    DumpFeatures {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// One of train, test_in, test_heldout.
        #[arg(long, default_value = "test_heldout")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat JSON config with TrainConfig and GenSpec keys.
    #[arg(long = "config", id = "config_file")]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set gamma3=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
}

const GENSPEC_KEYS: [&str; 10] = [
    "input_dim",
    "N_train_forgery",
    "signal_dims",
    "nuisance_dims",
    "nuisance_clusters",
    "signal_scale",
    "nuisance_scale",
    "noise_scale",
    "samples_per_domain",
    "data_seed",
];

/// Training and data configuration. Serialised as one flat JSON object
/// whose keys are the `TrainConfig` and `GenSpec` field names, with the
/// generator seed renamed to `data_seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: GenSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { train: TrainConfig::synthetic(), data: GenSpec::default() }
    }
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("config structs serialise as objects"),
    }
}

impl RunConfig {
    pub fn to_flat(&self) -> Map<String, Value> {
        let mut flat = object(serde_json::to_value(&self.train).expect("serialisable"));
        let mut data = object(serde_json::to_value(&self.data).expect("serialisable"));
        if let Some(seed) = data.remove("seed") {
            data.insert("data_seed".into(), seed);
        }
        flat.extend(data);
        flat
    }

    /// Applies the keys of `flat` on top of `self`.
    pub fn merge(&self, flat: &Map<String, Value>) -> Result<Self> {
        let mut train = object(serde_json::to_value(&self.train)?);
        let mut data = object(serde_json::to_value(&self.data)?);
        for (k, v) in flat {
            if GENSPEC_KEYS.contains(&k.as_str()) {
                let key = if k == "data_seed" { "seed".to_string() } else { k.clone() };
                data.insert(key, v.clone());
            } else if train.contains_key(k) {
                train.insert(k.clone(), v.clone());
            } else {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
        }
        let train: TrainConfig =
            serde_json::from_value(Value::Object(train)).map_err(|e| Error::Config(e.to_string()))?;
        let data: GenSpec = serde_json::from_value(Value::Object(data)).map_err(|e| Error::Config(e.to_string()))?;
        train.validate()?;
        data.validate()?;
        Ok(Self { train, data })
    }

    pub fn from_flat(flat: &Map<String, Value>) -> Result<Self> {
        Self::default().merge(flat)
    }
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: Option<String>,
    /// Resolved flat configuration.
    pub config: Map<String, Value>,
    pub seed: u64,
    pub data_dir: Option<String>,
    pub output_dir: String,
    pub tool_version: String,
}

impl RunManifest {
    pub fn resolved(&self) -> Result<RunConfig> {
        RunConfig::from_flat(&self.config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad manifest: {e}")))
    }
}

pub fn tool_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn parse_override(item: &str) -> Result<(String, Value)> {
    let (k, v) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut flat = Map::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_str(&text) {
                Ok(Value::Object(m)) => flat = m,
                Ok(_) => return Err(Error::Config("config must be a JSON object".into())),
                Err(e) => return Err(Error::Config(format!("bad config JSON: {e}"))),
            }
        }
        for item in &self.overrides {
            let (k, v) = parse_override(item)?;
            flat.insert(k, v);
        }
        if let Some(e) = self.epochs {
            flat.insert("epochs".into(), e.into());
        }
        if let Some(s) = self.seed {
            flat.insert("seed".into(), s.into());
        }
        if let Some(s) = self.data_seed {
            flat.insert("data_seed".into(), s.into());
        }
        RunConfig::from_flat(&flat)
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::DimensionTooSmall { .. } | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::SolveSpace { dim, num_forgery, theta0, seed, out: path } => {
            cmd_solve_space(dim, num_forgery, theta0, seed, path.as_deref(), out)
        }
        Command::GenData { config, out: dir } => {
            let cfg = config.resolve()?;
            let ds = generate(&cfg.data)?;
            write_dataset(&ds, &dir)?;
            writeln!(out, "wrote {} train, {} in-domain test, {} held-out samples to {}", ds.train.len(), ds.test_in.len(), ds.test_heldout.len(), dir.display())?;
            Ok(())
        }
        Command::Train { config, manifest, data, out: dir } => {
            let manifest = match manifest {
                Some(path) => {
                    let m = RunManifest::load(&path)?;
                    RunManifest { output_dir: dir.display().to_string(), ..m }
                }
                None => {
                    let cfg = config.resolve()?;
                    RunManifest {
                        config_path: config.config.as_ref().map(|p| p.display().to_string()),
                        seed: cfg.train.seed,
                        config: cfg.to_flat(),
                        data_dir: data.as_ref().map(|p| p.display().to_string()),
                        output_dir: dir.display().to_string(),
                        tool_version: tool_version(),
                    }
                }
            };
            cmd_train(&manifest, out)
        }
        Command::Eval { scores, run, data } => match (scores, run) {
            (Some(path), None) => cmd_eval_scores(&path, out),
            (None, Some(run)) => cmd_eval_run(&run, data.as_deref(), out),
            _ => Err(Error::Config("eval needs exactly one of --scores or --run".into())),
        },
        Command::Ablate { config, seeds, variants, out: path } => {
            let cfg = config.resolve()?;
            let variants: Vec<Variant> = if variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<Result<_>>()?
            };
            let seeds: Vec<u64> = (0..seeds).map(|s| cfg.train.seed + s).collect();
            let rows = run_grid(&variants, &cfg.train, &cfg.data, &seeds)?;
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            write_rows_csv(File::create(&path)?, &rows)?;
            writeln!(out, "{:<12} {:>10} {:>10}", "variant", "held-out", "in-domain")?;
            for (v, held, ind) in summarize(&rows, &variants) {
                writeln!(out, "{:<12} {:>10.4} {:>10.4}", v.name(), held, ind)?;
            }
            Ok(())
        }
        Command::DumpFeatures { run, data, split, out: path } => cmd_dump_features(&run, data.as_deref(), &split, &path, out),
    }
}

fn cmd_solve_space(dim: usize, n: usize, theta0: f64, seed: u64, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    if !(theta0 > 0.0 && theta0 < 180.0) {
        return Err(Error::Config("--theta0 must lie strictly between 0 and 180".into()));
    }
    if n == 0 {
        return Err(Error::Config("--num-forgery must be at least 1".into()));
    }
    let (gs, report) = solve_guide_space(dim, n, theta0, seed)?;
    if let Some(p) = path {
        gs.save(p)?;
    }
    let angles = pairwise_angles(&gs);
    writeln!(out, "theta0 = {theta0} deg, d = {dim}, N = {n}, {} iterations", report.iterations)?;
    write!(out, "{:>6}", "")?;
    for j in 0..n {
        write!(out, " {:>8}", format!("g_f{j}"))?;
    }
    writeln!(out)?;
    for (i, row) in angles.iter().enumerate() {
        write!(out, "{:>6}", format!("g_f{i}"))?;
        for a in row {
            write!(out, " {a:>8.3}")?;
        }
        writeln!(out)?;
    }
    if n > 1 {
        writeln!(out, "mean theta_ij = {:.3} deg", mean_off_diagonal(&angles))?;
    }
    Ok(())
}

fn load_or_generate(data_dir: Option<&Path>, spec: &GenSpec) -> Result<SyntheticDataset> {
    match data_dir {
        Some(dir) => read_dataset(dir),
        None => generate(spec),
    }
}

fn cmd_train(manifest: &RunManifest, out: &mut dyn Write) -> Result<()> {
    let cfg = manifest.resolved()?;
    let dir = PathBuf::from(&manifest.output_dir);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)?)?;

    let ds = load_or_generate(manifest.data_dir.as_deref().map(Path::new), &cfg.data)?;
    let tc = &cfg.train;
    let (gs, _) = solve_guide_space(tc.d, ds.num_train_forgery(), tc.theta0, tc.seed)?;
    gs.save(dir.join(SPACE_FILE))?;
    let mut conf = BufWriter::new(File::create(dir.join(CONFIDENCE_FILE))?);
    let result = train_logged(&ds, tc, &gs, Some(&mut conf))?;
    conf.flush()?;

    let mut metrics = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    write_metrics_jsonl(&mut metrics, &result.metrics)?;
    metrics.flush()?;
    let model = model_to_json(&result.encoder, &result.classifier);
    std::fs::write(dir.join(MODEL_FILE), serde_json::to_string(&model)?)?;
    let domains: Vec<usize> = ds.train.iter().map(|s| s.t).collect();
    crate::decoupling::write_cluster_csv(File::create(dir.join(CLUSTERS_FILE))?, &domains, &result.clusters)?;

    match result.metrics.last() {
        Some(m) => writeln!(
            out,
            "epoch {}: in-domain acc {:.4} auc {:.4}, held-out auc {:.4}",
            m.epoch, m.in_domain_acc, m.in_domain_auc, m.heldout_auc
        )?,
        None => writeln!(out, "no epochs run")?,
    }
    Ok(())
}

fn cmd_eval_scores(path: &Path, out: &mut dyn Write) -> Result<()> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut scores, mut y) = (Vec::new(), Vec::new());
    for rec in r.deserialize::<(f64, u8)>() {
        let (s, label) = rec.map_err(|e| Error::Config(format!("bad scores file: {e}")))?;
        if label > 1 {
            return Err(Error::Config(format!("label {label} is not 0 or 1")));
        }
        scores.push(s);
        y.push(label);
    }
    let acc = accuracy(&scores, &y, 0.5)?;
    let auc = roc_auc(&scores, &y)?;
    writeln!(out, "{}", serde_json::json!({ "acc": acc, "auc": auc }))?;
    Ok(())
}

fn load_run(run: &Path, data: Option<&Path>) -> Result<(crate::nn::Encoder, crate::nn::Classifier, SyntheticDataset)> {
    let manifest = RunManifest::load(&run.join(MANIFEST_FILE))?;
    let cfg = manifest.resolved()?;
    let model: Value = serde_json::from_str(&std::fs::read_to_string(run.join(MODEL_FILE))?)?;
    let (enc, clf) = model_from_json(&model)?;
    let data_dir = data.map(Path::to_path_buf).or(manifest.data_dir.map(PathBuf::from));
    let ds = load_or_generate(data_dir.as_deref(), &cfg.data)?;
    if enc.input_dim() != ds.input_dim() {
        return Err(Error::Config("model input dimension does not match the dataset".into()));
    }
    Ok((enc, clf, ds))
}

fn cmd_eval_run(run: &Path, data: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let (enc, clf, ds) = load_run(run, data)?;
    let ind = evaluate(&enc, &clf, &ds.test_in)?;
    let held = evaluate(&enc, &clf, &ds.test_heldout)?;
    let report = serde_json::json!({
        "in_domain": { "acc": ind.acc, "auc": ind.auc },
        "heldout": { "acc": held.acc, "auc": held.auc },
    });
    writeln!(out, "{report}")?;
    Ok(())
}

fn cmd_dump_features(run: &Path, data: Option<&Path>, split: &str, path: &Path, out: &mut dyn Write) -> Result<()> {
    let (enc, _, ds) = load_run(run, data)?;
    let samples = match split {
        "train" => &ds.train,
        "test_in" => &ds.test_in,
        "test_heldout" => &ds.test_heldout,
        other => return Err(Error::Config(format!("unknown split `{other}`"))),
    };
    let rho: Vec<usize> = samples.iter().map(|s| s.rho_true).collect();
    write_feature_csv(File::create(path)?, &enc, samples, &rho)?;
    writeln!(out, "wrote {} feature rows to {}", samples.len(), path.display())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_config_round_trip() {
        let cfg = RunConfig::default();
        let flat = cfg.to_flat();
        assert!(flat.contains_key("data_seed") && flat.contains_key("gamma1") && flat.contains_key("N_train_forgery"));
        assert!(!flat.contains_key("seed") || flat["seed"] == 0);
        assert_eq!(RunConfig::from_flat(&flat).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut flat = Map::new();
        flat.insert("gama1".into(), 1.0.into());
        assert!(matches!(RunConfig::from_flat(&flat), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_parse_json_values() {
        assert_eq!(parse_override("gamma3=0").unwrap(), ("gamma3".into(), Value::from(0)));
        assert_eq!(parse_override("lr_schedule=constant").unwrap().1, Value::from("constant"));
        assert!(parse_override("nokey").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["guidespace", "solve-space", "--dim", "x"], &mut o, &mut e), EXIT_USAGE);
        assert_eq!(run(["guidespace", "solve-space", "--dim", "3", "--num-forgery", "4"], &mut o, &mut e), EXIT_USAGE);
        assert!(String::from_utf8(e).unwrap().contains("d ≥ N"));
    }
}
