//! Command-line front end. Every command writes its outputs and a
//! `manifest.json` into the `--out` directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::data::{gaussian_features, generate_sbm, named_graph, SbmConfig};
use crate::error::{Error, Result};
use crate::graph::{check_contraction, load_graph, parse_csv_matrix, parse_labels, save_graph, Graph, PropagationKind, PropagationOperator, DEFAULT_CONTRACTION_STEPS};
use crate::linalg::Matrix;
use crate::mixture::{em_fit_bmm, em_fit_gmm, normalize_minmax, TwoComponentMixture, MIN_SAMPLE};
use crate::nn::{Checkpoint, Model};
use crate::probe::{linear_probe, ProbeConfig};
use crate::train::{encoder_input, train_inductive, train_transductive};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Sweeps above this many cells require `--force`.
pub const MAX_SWEEP_CELLS: usize = 200;

#[derive(Debug, Parser)]
#[command(name = "progcl", version, about = "Graph contrastive learning with mixture-guided negatives")]
pub struct Cli {
    /// Master seed; defaults to the configuration's seed (0 if none).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "progcl-out")]
    pub out: PathBuf,
    /// Training configuration (.json, .toml, or key=value lines). A
    /// `manifest.json` from an earlier run replays that run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an encoder and write metrics, checkpoint and histograms.
    Train(TrainArgs),
    /// Fit beta and Gaussian mixtures to a similarity file.
    FitBmm(FitBmmArgs),
    /// Check pairwise distance contraction under normalized propagation.
    CheckTheorem(TheoremArgs),
    /// Grid sweep over mixture and objective hyperparameters.
    Sweep(SweepArgs),
    /// Generate a stochastic block model graph.
    GenSbm(SbmArgs),
    /// Linear-probe evaluation of embeddings.
    Probe(ProbeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SbmArgs {
    #[arg(long, default_value_t = 3)]
    pub blocks: usize,
    #[arg(long, default_value_t = 100)]
    pub nodes_per_block: usize,
    #[arg(long, default_value_t = 0.1)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    pub p_out: f64,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub class_sep: f64,
}

impl SbmArgs {
    fn config(&self) -> SbmConfig {
        SbmConfig {
            blocks: self.blocks,
            nodes_per_block: self.nodes_per_block,
            p_in: self.p_in,
            p_out: self.p_out,
            feature_dim: self.feature_dim,
            class_sep: self.class_sep,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    /// `sbm` to generate a graph, or `files` to load `--edges/--features`.
    #[arg(long, default_value = "sbm")]
    pub dataset: String,
    /// Directory holding edges.txt, features.csv and optionally labels.txt.
    #[arg(long)]
    pub graph_dir: Option<PathBuf>,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub sbm: SbmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epoch at which the mixture is fitted.
    #[arg(long = "E", alias = "fit-epoch")]
    pub fit_epoch: Option<usize>,
    #[arg(long)]
    pub w_init: Option<f64>,
    /// EM iterations.
    #[arg(long = "I", alias = "em-iters")]
    pub em_iters: Option<usize>,
    #[arg(long = "M-prime", alias = "m-prime")]
    pub m_prime: Option<usize>,
    #[arg(long = "N-prime", alias = "n-prime")]
    pub n_prime: Option<usize>,
    /// Synthetic negatives per anchor.
    #[arg(long = "m")]
    pub m: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub encoder: Option<String>,
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub posterior: Option<String>,
    #[arg(long)]
    pub inductive: bool,
    #[arg(long)]
    pub inductive_negatives: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "p-edge-1")]
    pub p_edge_1: Option<f64>,
    #[arg(long = "p-edge-2")]
    pub p_edge_2: Option<f64>,
    #[arg(long = "p-feat-1")]
    pub p_feat_1: Option<f64>,
    #[arg(long = "p-feat-2")]
    pub p_feat_2: Option<f64>,
    /// Any further `key=value` config override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct FitBmmArgs {
    /// Similarity values, comma or whitespace separated.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub w_init: f64,
    #[arg(long = "I", alias = "em-iters", default_value_t = 10)]
    pub em_iters: usize,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TheoremArgs {
    /// Graph spec such as `complete:4`, `cycle:6`, `sbm:2,10,0.5,0.1`.
    #[arg(long, conflicts_with = "edges")]
    pub graph: Option<String>,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Feature CSV; random Gaussian features otherwise.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    /// Propagation steps.
    #[arg(long, default_value_t = DEFAULT_CONTRACTION_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Grid axes, e.g. `mode=base,weight;m=1,5`. Axes: mode, N_prime, m,
    /// E, w_init, I, M_prime.
    #[arg(long)]
    pub grid: String,
    /// Training seeds per cell, comma separated.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    #[arg(long)]
    pub force: bool,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    /// Embedding CSV; alternatively `--checkpoint` with a graph.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub seed: u64,
    pub config: Value,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, seed: u64, config: Value) -> Self {
        Self {
            command: command.to_string(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(cli, a),
        Command::FitBmm(a) => cmd_fit_bmm(cli, a),
        Command::CheckTheorem(a) => cmd_check_theorem(cli, a),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::GenSbm(a) => cmd_gen_sbm(cli, a),
        Command::Probe(a) => cmd_probe(cli, a),
    }
}

/// Configuration resolved from defaults, `--config` and `--seed`.
struct Resolved {
    train: TrainConfig,
    /// SBM parameters recorded in a replayed manifest.
    sbm: Option<SbmConfig>,
    inductive: bool,
}

impl Resolved {
    fn seed(&self) -> u64 {
        self.train.seed
    }
}

/// Reads `config.train` (and `config.sbm`, `config.inductive`) from a run
/// manifest; `None` if the JSON is not a manifest.
fn manifest_config(v: &Value) -> Result<Option<Resolved>> {
    let Some(cfg) = v.get("artifact_version").and(v.get("config")) else {
        return Ok(None);
    };
    let train = match cfg.get("train") {
        Some(t) => serde_json::from_value(t.clone()).map_err(|e| Error::config(format!("manifest config: {e}")))?,
        None => return Err(Error::config("manifest has no training configuration to replay")),
    };
    let sbm = match cfg.get("sbm") {
        Some(s) => Some(serde_json::from_value(s.clone()).map_err(|e| Error::config(format!("manifest sbm: {e}")))?),
        None => None,
    };
    let inductive = cfg.get("inductive").and_then(Value::as_bool).unwrap_or(false);
    Ok(Some(Resolved { train, sbm, inductive }))
}

fn resolve(cli: &Cli) -> Result<Resolved> {
    let mut r = match &cli.config {
        Some(p) => {
            require_file(p)?;
            let replay = if p.extension().is_some_and(|e| e == "json") {
                let v: Value = serde_json::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
                manifest_config(&v)?
            } else {
                None
            };
            match replay {
                Some(r) => r,
                None => Resolved { train: TrainConfig::from_file(p)?, sbm: None, inductive: false },
            }
        }
        None => Resolved { train: TrainConfig::default(), sbm: None, inductive: false },
    };
    if let Some(seed) = cli.seed {
        r.train.seed = seed;
    }
    Ok(r)
}

fn cli_seed(cli: &Cli) -> u64 {
    cli.seed.unwrap_or(0)
}

fn apply_overrides(cfg: &mut TrainConfig, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {o:?} must be key=value")))?;
        cfg.set(k, v)?;
    }
    Ok(())
}

fn train_config(cli: &Cli, a: &TrainArgs) -> Result<Resolved> {
    let mut resolved = resolve(cli)?;
    let cfg = &mut resolved.train;
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        match v {
            Some(v) => cfg.set(k, &v),
            None => Ok(()),
        }
    };
    let s = |x: &Option<f64>| x.map(|v| v.to_string());
    let u = |x: &Option<usize>| x.map(|v| v.to_string());
    set("mode", a.mode.clone())?;
    set("epochs", u(&a.epochs))?;
    set("fit_epoch", u(&a.fit_epoch))?;
    set("w_init", s(&a.w_init))?;
    set("em_iters", u(&a.em_iters))?;
    set("m_prime", u(&a.m_prime))?;
    set("n_prime", u(&a.n_prime))?;
    set("m", u(&a.m))?;
    set("tau", s(&a.tau))?;
    set("lr", s(&a.lr))?;
    set("hidden_dim", u(&a.hidden_dim))?;
    set("encoder", a.encoder.clone())?;
    set("activation", a.activation.clone())?;
    set("posterior", a.posterior.clone())?;
    set("inductive_negatives", a.inductive_negatives.clone())?;
    set("batch_size", u(&a.batch_size))?;
    set("p_edge_1", s(&a.p_edge_1))?;
    set("p_edge_2", s(&a.p_edge_2))?;
    set("p_feat_1", s(&a.p_feat_1))?;
    set("p_feat_2", s(&a.p_feat_2))?;
    apply_overrides(cfg, &a.overrides)?;
    cfg.validate()?;
    resolved.inductive |= a.inductive;
    Ok(resolved)
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::config(format!("input file {} not found", p.display())))
    }
}

/// Loads or generates the graph and records input hashes.
fn load_input_graph(
    a: &GraphArgs,
    sbm: Option<&SbmConfig>,
    seed: u64,
    manifest: &mut RunManifest,
) -> Result<Graph> {
    let (edges, features, labels) = match (&a.graph_dir, &a.edges) {
        (Some(dir), _) => {
            let labels = dir.join("labels.txt");
            (dir.join("edges.txt"), dir.join("features.csv"), labels.is_file().then_some(labels))
        }
        (None, Some(e)) => {
            let f = a.features.clone().ok_or_else(|| Error::config("--edges requires --features"))?;
            (e.clone(), f, a.labels.clone())
        }
        (None, None) => {
            if a.dataset != "sbm" {
                return Err(Error::config(format!("unknown dataset {:?}; use sbm or --graph-dir", a.dataset)));
            }
            let sbm = sbm.cloned().unwrap_or_else(|| a.sbm.config());
            manifest.config["sbm"] = serde_json::to_value(&sbm)?;
            return generate_sbm(&sbm, seed);
        }
    };
    for p in [Some(&edges), Some(&features), labels.as_ref()].into_iter().flatten() {
        require_file(p)?;
        manifest.add_input(p)?;
    }
    load_graph(&edges, &features, labels.as_deref())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let r = train_config(cli, a)?;
    let cfg = &r.train;
    let mut manifest = RunManifest::new("train", r.seed(), json!({ "train": cfg, "inductive": r.inductive }));
    let g = load_input_graph(&a.graph, r.sbm.as_ref(), r.seed(), &mut manifest)?;
    let report = if r.inductive { train_inductive(&g, cfg)? } else { train_transductive(&g, cfg)? };
    manifest.outputs = report.write_outputs(&cli.out)?;
    manifest.outputs.push("manifest.json".into());
    manifest.write(&cli.out)?;
    if let Some(f) = report.final_record() {
        println!("{}", serde_json::to_string(&f)?);
    }
    Ok(())
}

/// Reads similarity values separated by commas, whitespace or newlines.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad similarity value {t:?}"))))
        .collect()
}

fn cmd_fit_bmm(cli: &Cli, a: &FitBmmArgs) -> Result<()> {
    require_file(&a.input)?;
    if a.bins == 0 {
        return Err(Error::config("bins must be positive"));
    }
    let mut manifest = RunManifest::new(
        "fit-bmm",
        cli_seed(cli),
        json!({ "w_init": a.w_init, "em_iters": a.em_iters, "bins": a.bins }),
    );
    manifest.add_input(&a.input)?;
    let raw = parse_values(&std::fs::read_to_string(&a.input)?)?;
    if raw.len() < MIN_SAMPLE {
        return Err(Error::invalid(format!("need at least {MIN_SAMPLE} similarity values, got {}", raw.len())));
    }
    let sample = normalize_minmax(&raw)?;
    let bmm = em_fit_bmm(&sample, a.w_init, a.em_iters)?;
    let gmm = em_fit_gmm(&sample, a.w_init, a.em_iters)?;
    let bmm_ll = bmm.log_likelihood(sample.values());
    let gmm_ll = gmm.log_likelihood(sample.values());
    let params = json!({
        "lambda": bmm.lambda,
        "alpha": bmm.alpha,
        "beta": bmm.beta,
        "true_component": bmm.true_component,
        "loglik_trace": bmm.fit_log,
        "bmm_loglik": bmm_ll,
        "gmm_loglik": gmm_ll,
        "degenerate": bmm.degenerate,
        "identification": bmm.identification,
        "normalization": sample.norm(),
        "gmm": {
            "lambda": gmm.lambda,
            "mu": gmm.mu,
            "sigma2": gmm.sigma2,
            "true_component": gmm.true_component,
            "loglik_trace": gmm.fit_log,
        },
    });
    std::fs::create_dir_all(&cli.out)?;
    std::fs::write(cli.out.join("bmm_params.json"), serde_json::to_string_pretty(&params)? + "\n")?;

    let width = 1.0 / a.bins as f64;
    let mut counts = vec![0usize; a.bins];
    for &s in sample.values() {
        counts[((s / width) as usize).min(a.bins - 1)] += 1;
    }
    let mut csv = String::from("bin_center,empirical_density,bmm_density,gmm_density\n");
    for (b, &c) in counts.iter().enumerate() {
        let center = (b as f64 + 0.5) * width;
        let empirical = c as f64 / (sample.len() as f64 * width);
        csv.push_str(&format!("{center},{empirical},{},{}\n", bmm.density(center), gmm.density(center)));
    }
    std::fs::write(cli.out.join("overlay.csv"), csv)?;
    manifest.outputs = vec!["bmm_params.json".into(), "overlay.csv".into(), "manifest.json".into()];
    manifest.write(&cli.out)?;
    println!("{}", json!({ "bmm_loglik": bmm_ll, "gmm_loglik": gmm_ll }));
    Ok(())
}

/// Largest deviation of `P (D^1/2 1)` from `D^1/2 1` for the symmetric
/// normalized operator with self-loops.
pub fn eigenvector_residual(g: &Graph) -> Result<f64> {
    let op = PropagationOperator::new(g, PropagationKind::SymNormWithSelfLoops);
    let v = Matrix::from_fn(g.n_nodes(), 1, |i, _| ((g.degree(i) + 1) as f64).sqrt());
    Ok(op.apply(&v)?.max_abs_diff(&v))
}

fn cmd_check_theorem(cli: &Cli, a: &TheoremArgs) -> Result<()> {
    let mut manifest = RunManifest::new("check-theorem", cli_seed(cli), json!({
        "graph": a.graph, "feature_dim": a.feature_dim, "steps": a.steps, "tol": a.tol,
    }));
    let mut g = match (&a.graph, &a.edges) {
        (Some(spec), _) => named_graph(spec, a.feature_dim, cli_seed(cli))?,
        (None, Some(e)) => {
            require_file(e)?;
            manifest.add_input(e)?;
            let edges = crate::graph::parse_edge_list(&std::fs::read_to_string(e)?)?;
            let n = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
            Graph::from_edges(&edges, gaussian_features(n, a.feature_dim, cli_seed(cli)), None)?
        }
        (None, None) => return Err(Error::config("check-theorem needs --graph or --edges")),
    };
    if let Some(f) = &a.features {
        require_file(f)?;
        manifest.add_input(f)?;
        g = g.with_features(parse_csv_matrix(&std::fs::read_to_string(f)?)?)?;
    }
    let report = check_contraction(&g, g.features(), a.steps, a.tol)?;
    let out = json!({
        "report": report,
        "eigenvector_residual": eigenvector_residual(&g)?,
    });
    std::fs::create_dir_all(&cli.out)?;
    std::fs::write(cli.out.join("theorem_report.json"), serde_json::to_string_pretty(&out)? + "\n")?;
    manifest.outputs = vec!["theorem_report.json".into(), "manifest.json".into()];
    manifest.write(&cli.out)?;
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

/// One sweep axis: config key and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

const SWEEP_KEYS: [&str; 7] = ["mode", "n_prime", "m", "fit_epoch", "w_init", "em_iters", "m_prime"];

/// Parses `key=v1,v2;key2=...` into axes over the sweepable keys.
pub fn parse_grid(spec: &str) -> Result<Vec<Axis>> {
    let mut axes: Vec<Axis> = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, vs) = part
            .split_once('=')
            .ok_or_else(|| Error::config(format!("grid axis {part:?} must be key=v1,v2")))?;
        let key = match k.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "e" | "fit_epoch" => "fit_epoch".to_string(),
            "i" | "em_iters" => "em_iters".to_string(),
            other => other.to_string(),
        };
        if !SWEEP_KEYS.contains(&key.as_str()) {
            return Err(Error::config(format!("{k:?} is not a sweep axis ({})", SWEEP_KEYS.join(", "))));
        }
        if axes.iter().any(|a| a.key == key) {
            return Err(Error::config(format!("duplicate grid axis {key}")));
        }
        let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::config(format!("grid axis {key} has no values")));
        }
        axes.push(Axis { key, values });
    }
    if axes.is_empty() {
        return Err(Error::config("empty grid"));
    }
    Ok(axes)
}

/// Cartesian product of the axes as ordered `(key, value)` lists.
pub fn grid_cells(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((axis.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    cells
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| Error::config(format!("bad seed {t:?}"))))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::config("at least one seed required"));
    }
    Ok(seeds)
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let resolved = resolve(cli)?;
    let mut base = resolved.train.clone();
    apply_overrides(&mut base, &a.overrides)?;
    let axes = parse_grid(&a.grid)?;
    let seeds = parse_seeds(&a.seeds)?;
    let cells = grid_cells(&axes);
    if cells.len() > MAX_SWEEP_CELLS && !a.force {
        return Err(Error::config(format!(
            "grid has {} cells (limit {MAX_SWEEP_CELLS}); pass --force to run it",
            cells.len()
        )));
    }
    let mut manifest = RunManifest::new("sweep", base.seed, json!({
        "base": base, "grid": a.grid, "seeds": seeds,
    }));
    let g = load_input_graph(&a.graph, resolved.sbm.as_ref(), base.seed, &mut manifest)?;
    if g.labels().is_none() {
        return Err(Error::config("sweep needs node labels for the probe"));
    }

    let mut rows: Vec<(String, Vec<f64>, Vec<f64>, TrainConfig)> = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut cfg = base.clone();
        for (k, v) in cell {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        let key = cell_key(&cfg);
        let mut accs = Vec::new();
        let mut f1s = Vec::new();
        for &seed in &seeds {
            let run = TrainConfig { seed, ..cfg.clone() };
            let r = train_transductive(&g, &run)?;
            let p = r.probe.expect("labels checked above");
            accs.push(p.acc_mean);
            f1s.push(p.f1_mean);
        }
        log::info!("sweep cell {key}: {:?}", accs);
        rows.push((key, accs, f1s, cfg));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));

    let mut csv = String::from("cell,mode,N_prime,m,E,w_init,I,M_prime,acc_mean,acc_std,f1_mean,seeds\n");
    for (key, accs, f1s, cfg) in &rows {
        let (am, asd) = mean_std(accs);
        let (fm, _) = mean_std(f1s);
        csv.push_str(&format!(
            "{key},{},{},{},{},{},{},{},{am},{asd},{fm},{}\n",
            cfg.mode,
            cfg.n_prime,
            cfg.m,
            cfg.fit_epoch,
            cfg.w_init,
            cfg.em_iters,
            cfg.m_prime,
            accs.len()
        ));
    }
    std::fs::create_dir_all(&cli.out)?;
    std::fs::write(cli.out.join("sweep.csv"), &csv)?;
    manifest.outputs = vec!["sweep.csv".into(), "manifest.json".into()];
    manifest.write(&cli.out)?;
    print!("{csv}");
    Ok(())
}

/// Stable textual key of a sweep cell over every sweepable field.
pub fn cell_key(cfg: &TrainConfig) -> String {
    format!(
        "E={}|I={}|M_prime={}|N_prime={}|m={}|mode={}|w_init={}",
        cfg.fit_epoch, cfg.em_iters, cfg.m_prime, cfg.n_prime, cfg.m, cfg.mode, cfg.w_init
    )
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn cmd_gen_sbm(cli: &Cli, a: &SbmArgs) -> Result<()> {
    let cfg = a.config();
    let g = generate_sbm(&cfg, cli_seed(cli))?;
    save_graph(&cli.out, &g)?;
    let mut manifest = RunManifest::new("gen-sbm", cli_seed(cli), serde_json::to_value(&cfg)?);
    manifest.outputs = vec!["edges.txt".into(), "features.csv".into(), "labels.txt".into(), "manifest.json".into()];
    manifest.write(&cli.out)?;
    println!("{}", json!({ "nodes": g.n_nodes(), "edges": g.n_edges() }));
    Ok(())
}

fn cmd_probe(cli: &Cli, a: &ProbeArgs) -> Result<()> {
    let mut pc = ProbeConfig::default();
    if let Some(r) = a.runs {
        pc.runs = r;
    }
    if let Some(l) = a.l2 {
        pc.l2 = l;
    }
    if let Some(t) = a.train_fraction {
        pc.train_fraction = t;
    }
    pc.validate()?;
    let mut manifest = RunManifest::new("probe", cli_seed(cli), serde_json::to_value(pc)?);
    let (emb, labels) = match (&a.embeddings, &a.checkpoint) {
        (Some(e), _) => {
            require_file(e)?;
            manifest.add_input(e)?;
            let labels_path = a.graph.labels.clone().ok_or_else(|| Error::config("--embeddings requires --labels"))?;
            require_file(&labels_path)?;
            manifest.add_input(&labels_path)?;
            (
                parse_csv_matrix(&std::fs::read_to_string(e)?)?,
                parse_labels(&std::fs::read_to_string(&labels_path)?)?,
            )
        }
        (None, Some(ck)) => {
            require_file(ck)?;
            manifest.add_input(ck)?;
            let model = Model::from_checkpoint(&Checkpoint::load(ck)?)?;
            let g = load_input_graph(&a.graph, None, cli_seed(cli), &mut manifest)?;
            let labels = g.labels().ok_or_else(|| Error::config("graph has no labels"))?.to_vec();
            (model.embed(&encoder_input(&g, model.encoder.kind))?, labels)
        }
        (None, None) => return Err(Error::config("probe needs --embeddings or --checkpoint")),
    };
    let res = linear_probe(&emb, &labels, &pc, cli_seed(cli))?;
    std::fs::create_dir_all(&cli.out)?;
    std::fs::write(cli.out.join("probe.json"), serde_json::to_string_pretty(&res)? + "\n")?;
    manifest.outputs = vec!["probe.json".into(), "manifest.json".into()];
    manifest.write(&cli.out)?;
    println!(
        "{}",
        json!({ "probe_acc_mean": res.acc_mean, "probe_acc_std": res.acc_std, "probe_f1_mean": res.f1_mean })
    );
    Ok(())
}
