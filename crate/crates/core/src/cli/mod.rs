//! The `nnose` command line.

pub mod crossmatrix;
pub mod pipeline;
pub mod predictions;
pub mod sweep;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::datastore::{self, build_datastore, load_datastore, save_datastore, DatastoreConfig, SearchMode};
use crate::fusion::FusionParams;
use crate::stream::{read_token_stream, read_token_stream_with_header, write_token_stream};
use crate::synth::{generate_corpus, SynthConfig};

pub const THREADS_ENV: &str = "NNOSE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "nnose", version, about = "Nearest-neighbor augmented BIO span extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a datastore from one or more token streams.
    Build(BuildArgs),
    /// Fuse retrieval with the base distributions and write predictions.
    Infer(InferArgs),
    /// Grid-search k, lambda and temperature on a development set.
    Sweep(SweepArgs),
    /// Score predictions against gold spans.
    Eval(EvalArgs),
    /// Span-F1 of every (train source, eval set) pair.
    Crossmatrix(CrossmatrixArgs),
    /// Count which source datasets the retrieved neighbors come from.
    Provenance(ProvenanceArgs),
    /// Generate a synthetic corpus as train, dev and test streams.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Training token streams; each becomes one source.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub no_whitening: bool,
    #[arg(long, default_value_t = DatastoreConfig::default().ncentroids)]
    pub centroids: usize,
    #[arg(long, default_value_t = DatastoreConfig::default().nprobe)]
    pub nprobe: usize,
    #[arg(long, default_value_t = DatastoreConfig::default().kmeans_iters)]
    pub kmeans_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FusionArgs {
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value_t = 0.25)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// `exact` or `clustered`.
    #[arg(long, default_value = "clustered")]
    pub mode: SearchMode,
}

impl FusionArgs {
    fn params(&self) -> Result<FusionParams> {
        Ok(FusionParams::new(self.k, self.lambda, self.temperature)?)
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub fusion: FusionArgs,
    /// Override the stored probe count.
    #[arg(long)]
    pub nprobe: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Comma-separated neighbor counts.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub temperatures: Option<Vec<f64>>,
    /// Write the full grid here instead of stdout.
    #[arg(long)]
    pub grid_out: Option<PathBuf>,
    /// Write the best point as a params file.
    #[arg(long)]
    pub params_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Training stream used for frequency binning.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub baseline_pred: Option<PathBuf>,
    /// Emit tab-separated records instead of a table.
    #[arg(long)]
    pub records: bool,
}

#[derive(Debug, Args)]
pub struct CrossmatrixArgs {
    #[arg(long)]
    pub stores: PathBuf,
    /// Streams named `<train>__<eval>.ets`.
    #[arg(long, num_args = 1.., required = true)]
    pub datasets: Vec<PathBuf>,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub records: bool,
}

#[derive(Debug, Args)]
pub struct ProvenanceArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value = "clustered")]
    pub mode: SearchMode,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `key=value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Individual overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return 1;
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Sizes the global rayon pool from `NNOSE_THREADS`; unset or 0 uses every core.
pub fn configure_threads() -> Result<()> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))?,
        Err(_) => 0,
    };
    // a pool configured earlier in the same process stays in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(command: Command) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match command {
        Command::Build(a) => cmd_build(&a, &mut out),
        Command::Infer(a) => cmd_infer(&a, &mut out),
        Command::Sweep(a) => cmd_sweep(&a, &mut out),
        Command::Eval(a) => cmd_eval(&a, &mut out),
        Command::Crossmatrix(a) => cmd_crossmatrix(&a, &mut out),
        Command::Provenance(a) => cmd_provenance(&a, &mut out),
        Command::Synth(a) => cmd_synth(&a, &mut out),
    }
}

fn read_stream(path: &Path) -> Result<Vec<crate::model::Sentence>> {
    read_token_stream(path).with_context(|| format!("reading {}", path.display()))
}

pub fn cmd_build(a: &BuildArgs, out: &mut impl std::io::Write) -> Result<()> {
    let mut streams = Vec::with_capacity(a.inputs.len());
    let mut seen = BTreeSet::new();
    for path in &a.inputs {
        let (header, sentences) =
            read_token_stream_with_header(path).with_context(|| format!("reading {}", path.display()))?;
        let id = if header.dataset_id.is_empty() {
            path.file_stem().and_then(|s| s.to_str()).unwrap_or("unnamed").to_string()
        } else {
            header.dataset_id
        };
        if !seen.insert(id.clone()) {
            bail!("dataset id {id:?} appears in more than one input");
        }
        streams.push((id, sentences));
    }
    let config = DatastoreConfig {
        use_whitening: !a.no_whitening,
        ncentroids: a.centroids,
        nprobe: a.nprobe,
        kmeans_iters: a.kmeans_iters,
        seed: a.seed,
    };
    let store = build_datastore(&streams, config)?;
    save_datastore(&store, &a.out).with_context(|| format!("writing {}", a.out.display()))?;

    writeln!(out, "entries\t{}", store.len())?;
    for (source, count) in store.source_counts() {
        writeln!(out, "source\t{source}\t{count}")?;
    }
    writeln!(out, "whitening\t{}", if store.whitening().is_some() { "on" } else { "off" })?;
    writeln!(out, "centroids\t{}", store.ncentroids())?;
    writeln!(out, "nprobe\t{}", store.config().nprobe)?;
    Ok(())
}

pub fn cmd_infer(a: &InferArgs, out: &mut impl std::io::Write) -> Result<()> {
    let params = a.fusion.params()?;
    let mut store = load_datastore(&a.store).with_context(|| format!("loading {}", a.store.display()))?;
    if let Some(nprobe) = a.nprobe {
        store = store.with_nprobe(nprobe);
    }
    let sentences = read_stream(&a.input)?;
    let predictions = pipeline::infer_corpus(&store, &sentences, &params, a.fusion.mode)?;
    predictions::write_predictions(&predictions, &a.out)?;
    let tokens: usize = predictions.iter().map(Vec::len).sum();
    writeln!(out, "sentences\t{}\ntokens\t{tokens}", predictions.len())?;
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut impl std::io::Write) -> Result<()> {
    let defaults = sweep::SweepSpace::default();
    let space = sweep::SweepSpace {
        ks: a.ks.clone().unwrap_or(defaults.ks),
        lambdas: a.lambdas.clone().unwrap_or(defaults.lambdas),
        temperatures: a.temperatures.clone().unwrap_or(defaults.temperatures),
    };
    let store = load_datastore(&a.store).with_context(|| format!("loading {}", a.store.display()))?;
    let dev = read_stream(&a.dev)?;
    let result = sweep::sweep(&store, &dev, &space)?;

    match &a.grid_out {
        Some(path) => std::fs::write(path, result.records()).with_context(|| format!("writing {}", path.display()))?,
        None => out.write_all(result.records().as_bytes())?,
    }
    let best = result.best.params;
    if let Some(path) = &a.params_out {
        let text = format!(
            "k={}\nlambda={}\ntemperature={}\nmode=clustered\n",
            best.k, best.lambda, best.temperature
        );
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    writeln!(
        out,
        "best\tk={}\tlambda={:.2}\ttemperature={}\tf1={:.6}",
        best.k,
        best.lambda,
        best.temperature,
        result.best.f1()
    )?;
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut impl std::io::Write) -> Result<()> {
    let gold = read_stream(&a.gold)?;
    let pred = predictions::read_prediction_tags(&a.pred)?;
    let counts = match &a.train {
        Some(path) => Some(pipeline::training_surface_counts(&read_stream(path)?)?),
        None => None,
    };
    let baseline = match &a.baseline_pred {
        Some(path) => Some(predictions::read_prediction_tags(path)?),
        None => None,
    };
    let report = pipeline::evaluate(&gold, &pred, counts.as_ref(), baseline.as_deref())?;
    if a.records {
        out.write_all(report.to_records_string().as_bytes())?;
    } else {
        out.write_all(report.to_table().as_bytes())?;
    }
    Ok(())
}

pub fn cmd_crossmatrix(a: &CrossmatrixArgs, out: &mut impl std::io::Write) -> Result<()> {
    let params = crossmatrix::RunParams::from_file(&a.params)?;
    let matrix = crossmatrix::cross_matrix(&a.stores, &a.datasets, &params)?;
    if a.records {
        out.write_all(matrix.records().as_bytes())?;
    } else {
        out.write_all(matrix.to_table().as_bytes())?;
    }
    Ok(())
}

pub fn cmd_provenance(a: &ProvenanceArgs, out: &mut impl std::io::Write) -> Result<()> {
    if a.k == 0 {
        bail!("k must be positive");
    }
    let store = load_datastore(&a.store).with_context(|| format!("loading {}", a.store.display()))?;
    let sentences = read_stream(&a.input)?;
    let queries: Vec<_> = sentences
        .iter()
        .flat_map(|s| s.tokens.iter().map(|t| t.embedding.clone()))
        .collect();
    let counts = datastore::provenance_counts_with_mode(&store, &queries, a.k, a.mode)?;
    for (source, count) in counts {
        writeln!(out, "retrieved\t{source}\t{count}")?;
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, out: &mut impl std::io::Write) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => SynthConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?,
        None => SynthConfig::default(),
    };
    for kv in &a.overrides {
        let (key, value) = kv
            .split_once('=')
            .with_context(|| format!("override {kv:?} is not KEY=VALUE"))?;
        cfg.set(key.trim(), value.trim()).map_err(anyhow::Error::msg)?;
    }
    let corpus = generate_corpus(&cfg)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let path = a.out_dir.join(format!("{name}.ets"));
        write_token_stream(split, &path).with_context(|| format!("writing {}", path.display()))?;
        writeln!(out, "{name}\t{}\t{}", split.len(), path.display())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_sweep_lists() {
        let cli = Cli::try_parse_from([
            "nnose", "sweep", "--store", "s.nds", "--dev", "d.ets", "--ks", "4,8", "--lambdas", "0.1,0.2",
        ])
        .unwrap();
        let Command::Sweep(a) = cli.command else {
            panic!("expected sweep");
        };
        assert_eq!(a.ks, Some(vec![4, 8]));
        assert_eq!(a.lambdas, Some(vec![0.1, 0.2]));
        assert_eq!(a.temperatures, None);
    }

    #[test]
    fn unknown_mode_rejected() {
        let r = Cli::try_parse_from([
            "nnose", "infer", "--store", "s", "--input", "i", "--out", "o", "--mode", "fast",
        ]);
        assert!(r.is_err());
    }
}
