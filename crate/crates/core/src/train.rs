//! Training schedulers: full-graph (transductive) and sampled-minibatch
//! (inductive) contrastive training with a mixture fit frozen at one epoch.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::augment;
use crate::autodiff::{Tape, Var};
use crate::config::{InductiveNegatives, LossMode, PosteriorMode, TrainConfig, FROZEN_MATRIX_MAX_NODES};
use crate::error::{Error, Result};
use crate::graph::{Graph, PropagationKind, PropagationOperator};
use crate::linalg::{CsrMatrix, Matrix};
use crate::mixture::{em_fit_bmm, normalize_minmax, FrozenPosterior, SampleSource};
use crate::nn::{Adam, BoundModel, EncoderInput, EncoderKind, Model};
use crate::objectives::{
    compute_weights, contrastive_loss, synthesize_negatives, LossTerms, SimVars, SyntheticTerms, WeightMatrix,
};
use crate::probe::{linear_probe, ProbeResult};
use crate::rng::{self, streams};

/// Encoder input for `g` with the operator its encoder kind consumes.
pub fn encoder_input(g: &Graph, kind: EncoderKind) -> EncoderInput {
    let prop = match kind {
        EncoderKind::Gcn2 => PropagationKind::SymNormWithSelfLoops,
        EncoderKind::SageGcn3 => PropagationKind::MeanAgg,
    };
    EncoderInput {
        operator: Arc::new(PropagationOperator::new(g, prop).as_csr().clone()),
        features: g.features().clone(),
    }
}

/// Frozen mixture plus the posterior matrices captured at the fit epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorStore {
    pub frozen: FrozenPosterior,
    pub fit_epoch: usize,
    /// One matrix for full-graph training, one per batch for minibatch
    /// training; empty under [`PosteriorMode::FrozenModel`].
    pub matrices: Vec<Matrix>,
}

impl PosteriorStore {
    /// SHA-256 over the mixture parameters and every stored entry.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.frozen).expect("plain data serializes"));
        h.update(self.fit_epoch.to_le_bytes());
        for m in &self.matrices {
            h.update((m.rows() as u64).to_le_bytes());
            for v in m.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Event attached to an epoch record when a fit is attempted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitEvent {
    Fitted {
        lambda: [f64; 2],
        alpha: [f64; 2],
        beta: [f64; 2],
        true_component: usize,
        iterations: usize,
        log_likelihood: f64,
        samples: usize,
    },
    Retry { attempt: usize, reason: String },
    FallbackToBase { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Objective actually used this epoch.
    pub mode: LossMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_event: Option<FitEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub epoch: usize,
    pub bin_center: f64,
    pub true_count: u64,
    pub false_count: u64,
}

/// Mean inter-view similarity of true- and false-negative pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMeans {
    pub epoch: usize,
    pub true_mean: f64,
    pub false_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub probe_acc_mean: f64,
    pub probe_acc_std: f64,
    pub probe_f1_mean: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model,
    pub epochs: Vec<EpochRecord>,
    pub wall_ms: Vec<f64>,
    pub store: Option<PosteriorStore>,
    /// Store checksum at every epoch after the fit.
    pub posterior_checksums: Vec<String>,
    /// Number of mixture fits performed.
    pub bmm_fits: usize,
    pub fell_back_to_base: bool,
    pub histograms: Vec<HistogramRow>,
    pub similarity_means: Vec<SimilarityMeans>,
    /// Similarities outside the frozen normalization range (clamped).
    pub clamped_posterior_queries: u64,
    pub flagged_weight_rows: u64,
    pub zero_posterior_pairs: u64,
    pub probe: Option<ProbeResult>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn final_record(&self) -> Option<FinalRecord> {
        self.probe.as_ref().map(|p| FinalRecord {
            probe_acc_mean: p.acc_mean,
            probe_acc_std: p.acc_std,
            probe_f1_mean: p.f1_mean,
        })
    }

    /// Metrics as JSON lines: one record per epoch, then the probe record.
    pub fn metrics_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        if let Some(f) = self.final_record() {
            out.push_str(&serde_json::to_string(&f)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes metrics, timings, checkpoint, histograms and the fitted
    /// mixture into `dir`; returns the written file names.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        std::fs::write(dir.join("metrics.jsonl"), self.metrics_jsonl()?)?;
        written.push("metrics.jsonl".to_string());

        let mut t = String::new();
        for (e, ms) in self.epochs.iter().zip(&self.wall_ms) {
            t.push_str(&serde_json::to_string(&serde_json::json!({"epoch": e.epoch, "wall_ms": ms}))?);
            t.push('\n');
        }
        std::fs::write(dir.join("timings.jsonl"), t)?;
        written.push("timings.jsonl".to_string());

        self.model.to_checkpoint().save(&dir.join("checkpoint.json"))?;
        written.push("checkpoint.json".to_string());

        if !self.histograms.is_empty() {
            let mut h = String::from("epoch,bin_center,true_count,false_count\n");
            for r in &self.histograms {
                h.push_str(&format!("{},{},{},{}\n", r.epoch, r.bin_center, r.true_count, r.false_count));
            }
            std::fs::write(dir.join("histograms.csv"), h)?;
            let mut s = String::from("epoch,true_mean,false_mean\n");
            for r in &self.similarity_means {
                s.push_str(&format!("{},{},{}\n", r.epoch, r.true_mean, r.false_mean));
            }
            std::fs::write(dir.join("similarity_means.csv"), s)?;
            written.push("histograms.csv".to_string());
            written.push("similarity_means.csv".to_string());
        }
        if let Some(store) = &self.store {
            std::fs::write(dir.join("bmm.json"), serde_json::to_string_pretty(&store.frozen)?)?;
            written.push("bmm.json".to_string());
        }
        Ok(written)
    }
}

/// Uniformly samples `per_anchor` off-diagonal entries of every row
/// without replacement; caps at `n - 1`.
pub fn sample_similarities(inter: &Matrix, per_anchor: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    let n = inter.rows();
    let k = per_anchor.min(n - 1);
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        for j in index::sample(rng, n - 1, k).into_iter() {
            let col = if j < i { j } else { j + 1 };
            out.push(inter[(i, col)]);
        }
    }
    out
}

/// Fits the mixture on sampled inter-view similarities.
fn fit_posterior(inter: &Matrix, cfg: &TrainConfig, rng: &mut impl rand::Rng) -> Result<(FrozenPosterior, FitEvent)> {
    let raw = sample_similarities(inter, cfg.m_prime, rng);
    let sample = normalize_minmax(&raw)?;
    debug_assert_eq!(sample.source(), SampleSource::InterView);
    let bmm = em_fit_bmm(&sample, cfg.w_init, cfg.em_iters)?;
    let event = FitEvent::Fitted {
        lambda: bmm.lambda,
        alpha: bmm.alpha,
        beta: bmm.beta,
        true_component: bmm.true_component,
        iterations: bmm.iterations,
        log_likelihood: bmm.final_log_likelihood().unwrap_or(f64::NAN),
        samples: sample.len(),
    };
    Ok((FrozenPosterior { bmm, norm: sample.norm() }, event))
}

/// Posterior matrix for every (anchor, negative) pair of `inter`.
fn posterior_matrix(frozen: &FrozenPosterior, inter: &Matrix, clamped: &mut u64) -> Matrix {
    Matrix::from_fn(inter.rows(), inter.cols(), |i, k| {
        let (p, outside) = frozen.posterior_raw(inter[(i, k)]);
        if outside && i != k {
            *clamped += 1;
        }
        p
    })
}

/// One forward pass over two views, paused before the loss so the
/// caller can inspect similarities.
struct Forward {
    tape: Tape,
    bound: BoundModel,
    zu: Var,
    zv: Var,
    hu: Var,
    hv: Var,
    sims: SimVars,
    inter: Matrix,
}

impl Forward {
    fn new(model: &Model, v1: &EncoderInput, v2: &EncoderInput, select: Option<&Arc<CsrMatrix>>) -> Result<Self> {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let mut zu = model.encode(&mut tape, &bound, v1)?;
        let mut zv = model.encode(&mut tape, &bound, v2)?;
        if let Some(sel) = select {
            zu = tape.spmm(sel.clone(), zu)?;
            zv = tape.spmm(sel.clone(), zv)?;
        }
        let hu = model.project(&mut tape, &bound, zu)?;
        let hv = model.project(&mut tape, &bound, zv)?;
        let sims = SimVars::from_projected(&mut tape, hu, hv)?;
        let inter = tape.value(sims.inter).clone();
        Ok(Self { tape, bound, zu, zv, hu, hv, sims, inter })
    }

    fn n(&self) -> usize {
        self.inter.rows()
    }
}

/// Posterior information available for one step.
enum Posteriors<'a> {
    Matrix(&'a FrozenPosterior, &'a Matrix),
    Model(&'a FrozenPosterior),
}

#[derive(Default)]
struct StepCounters {
    clamped: u64,
    flagged_rows: u64,
    zero_posterior_pairs: u64,
}

/// Builds the loss for `mode`, backpropagates and applies one Adam step.
fn finish_step(
    fwd: Forward,
    model: &mut Model,
    adam: &mut Adam,
    cfg: &TrainConfig,
    mode: LossMode,
    posteriors: Option<Posteriors<'_>>,
    mix_rng: &mut impl rand::Rng,
    counters: &mut StepCounters,
) -> Result<f64> {
    let Forward { mut tape, bound, zu, zv, hu, hv, sims, inter } = fwd;
    let n = inter.rows();
    let mut terms = LossTerms::default();
    if mode != LossMode::Base {
        let post = posteriors.ok_or_else(|| Error::Numerical("posterior missing after fit".into()))?;
        let (frozen, pu) = match post {
            Posteriors::Matrix(f, m) => {
                if m.shape() != (n, n) {
                    return Err(Error::Numerical(format!(
                        "stored posterior is {}x{} but the batch has {n} nodes",
                        m.rows(),
                        m.cols()
                    )));
                }
                (f, m.clone())
            }
            Posteriors::Model(f) => (f, posterior_matrix(f, &inter, &mut counters.clamped)),
        };
        let pv = pu.transpose();
        let inter_t = inter.transpose();
        let (wu, wv) = if cfg.unit_weights {
            (WeightMatrix::uniform(n), WeightMatrix::uniform(n))
        } else {
            (
                compute_weights(&inter, &frozen.norm, |i, k, _| pu[(i, k)])?,
                compute_weights(&inter_t, &frozen.norm, |i, k, _| pv[(i, k)])?,
            )
        };
        counters.flagged_rows += (wu.flagged_rows.len() + wv.flagged_rows.len()) as u64;
        match mode {
            LossMode::Weight => {
                terms.weights = Some((Arc::new(wu.w), Arc::new(wv.w)));
            }
            LossMode::Mix => {
                let su = synthesize_negatives(&wu.w, &pu, cfg.n_prime, cfg.m, mix_rng)?;
                let sv = synthesize_negatives(&wv.w, &pv, cfg.n_prime, cfg.m, mix_rng)?;
                counters.zero_posterior_pairs += (su.zero_posterior_pairs + sv.zero_posterior_pairs) as u64;
                let nu = tape.row_normalize(hu);
                let nv = tape.row_normalize(hv);
                let synthetic_sims = |tape: &mut Tape, s: &crate::objectives::SyntheticNegatives, parents: Var, anchors: Var| -> Result<(Var, Arc<CsrMatrix>)> {
                    let mixed = tape.spmm(Arc::new(s.mixing_matrix(n)?), parents)?;
                    let proj = model.project(tape, &bound, mixed)?;
                    let proj = tape.row_normalize(proj);
                    let gathered = tape.spmm(Arc::new(s.anchor_gather()?), anchors)?;
                    Ok((tape.row_dot(gathered, proj)?, Arc::new(s.group_sum()?)))
                };
                let (sims_u, group_u) = synthetic_sims(&mut tape, &su, zv, nu)?;
                let (sims_v, group_v) = synthetic_sims(&mut tape, &sv, zu, nv)?;
                terms.synthetic = Some(SyntheticTerms { sims_u, sims_v, group_u, group_v });
            }
            LossMode::Base => unreachable!(),
        }
    }
    let loss = contrastive_loss(&mut tape, sims, cfg.tau, &terms)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {value}")));
    }
    let grads = tape.backward(loss)?;
    model.assign_grads(&bound, &grads);
    adam.step(&mut model.tensors_mut())?;
    if model.tensors().iter().any(|(_, t)| !t.value.is_finite()) {
        return Err(Error::Numerical("parameters became non-finite".into()));
    }
    Ok(value)
}

/// Histogram of off-diagonal inter-view similarities split by whether the
/// pair shares a label (false negative) or not (true negative).
pub fn similarity_histogram(
    inter: &Matrix,
    labels: &[usize],
    bins: usize,
    epoch: usize,
) -> (Vec<HistogramRow>, SimilarityMeans) {
    let n = inter.rows();
    let width = 2.0 / bins as f64;
    let mut rows: Vec<HistogramRow> = (0..bins)
        .map(|b| HistogramRow { epoch, bin_center: -1.0 + (b as f64 + 0.5) * width, true_count: 0, false_count: 0 })
        .collect();
    let (mut ts, mut tc, mut fs, mut fc) = (0.0, 0u64, 0.0, 0u64);
    for i in 0..n {
        for k in 0..n {
            if i == k {
                continue;
            }
            let s = inter[(i, k)];
            let b = (((s + 1.0) / width).floor().max(0.0) as usize).min(bins - 1);
            if labels[i] == labels[k] {
                rows[b].false_count += 1;
                fs += s;
                fc += 1;
            } else {
                rows[b].true_count += 1;
                ts += s;
                tc += 1;
            }
        }
    }
    let mean = |s: f64, c: u64| if c == 0 { f64::NAN } else { s / c as f64 };
    (rows, SimilarityMeans { epoch, true_mean: mean(ts, tc), false_mean: mean(fs, fc) })
}

/// Mixture-fit lifecycle shared by both schedulers.
struct FitState {
    store: Option<PosteriorStore>,
    failures: usize,
    fell_back: bool,
    fits: usize,
    checksum: Option<String>,
    checksums: Vec<String>,
}

impl FitState {
    fn new() -> Self {
        Self { store: None, failures: 0, fell_back: false, fits: 0, checksum: None, checksums: Vec::new() }
    }

    fn wants_fit(&self, cfg: &TrainConfig, epoch: usize) -> bool {
        cfg.mode != LossMode::Base && !self.fell_back && self.store.is_none() && epoch >= cfg.fit_epoch
    }

    /// Attempts the fit; degenerate similarity ranges are retried on later
    /// epochs until the retry budget runs out.
    fn attempt(&mut self, inter: &Matrix, cfg: &TrainConfig, epoch: usize) -> Result<FitEvent> {
        let mut r = rng::indexed_stream(cfg.seed, streams::SAMPLING, epoch as u64);
        match fit_posterior(inter, cfg, &mut r) {
            Ok((frozen, event)) => {
                self.fits += 1;
                self.store = Some(PosteriorStore { frozen, fit_epoch: epoch, matrices: Vec::new() });
                Ok(event)
            }
            Err(Error::Degenerate(reason)) => {
                self.failures += 1;
                if self.failures > cfg.fit_retries {
                    self.fell_back = true;
                    log::warn!("mixture fit failed {} times ({reason}); training continues with the base loss", self.failures);
                    Ok(FitEvent::FallbackToBase { reason })
                } else {
                    log::warn!("mixture fit at epoch {epoch} failed ({reason}); retrying next epoch");
                    Ok(FitEvent::Retry { attempt: self.failures, reason })
                }
            }
            Err(e) => Err(e),
        }
    }

    fn effective_mode(&self, cfg: &TrainConfig) -> LossMode {
        if self.store.is_some() { cfg.mode } else { LossMode::Base }
    }

    /// Records the store checksum and fails if it changed since freezing.
    fn verify_frozen(&mut self) -> Result<()> {
        if let Some(store) = &self.store {
            let sum = store.checksum();
            match &self.checksum {
                None => self.checksum = Some(sum.clone()),
                Some(prev) if *prev != sum => {
                    return Err(Error::Numerical("posterior store changed after freezing".into()));
                }
                Some(_) => {}
            }
            self.checksums.push(sum);
        }
        Ok(())
    }
}

fn init_model(g: &Graph, cfg: &TrainConfig) -> Model {
    let mut r = rng::stream(cfg.seed, streams::INIT);
    Model::init(cfg.encoder, cfg.activation, g.features().cols(), cfg.hidden_dim, cfg.proj_dim, &mut r)
}

fn effective_posterior_mode(cfg: &TrainConfig, n: usize) -> PosteriorMode {
    if cfg.posterior == PosteriorMode::FrozenMatrix && n > FROZEN_MATRIX_MAX_NODES {
        log::warn!("{n} nodes exceed the frozen-matrix limit {FROZEN_MATRIX_MAX_NODES}; using frozen-model posteriors");
        PosteriorMode::FrozenModel
    } else {
        cfg.posterior
    }
}

fn run_probe(model: &Model, g: &Graph, cfg: &TrainConfig) -> Result<Option<ProbeResult>> {
    let Some(labels) = g.labels() else { return Ok(None) };
    let emb = model.embed(&encoder_input(g, cfg.encoder))?;
    Ok(Some(linear_probe(&emb, labels, &cfg.probe, cfg.seed)?))
}

/// Full-graph training: two augmented views per epoch, the base loss
/// before the fit epoch, the configured loss afterwards.
pub fn train_transductive(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = g.n_nodes();
    cfg.validate_for_nodes(n)?;
    let posterior_mode = effective_posterior_mode(cfg, n);
    let mut model = init_model(g, cfg);
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let mut fit = FitState::new();
    let mut counters = StepCounters::default();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut wall_ms = Vec::with_capacity(cfg.epochs);
    let mut histograms = Vec::new();
    let mut means = Vec::new();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut aug = rng::indexed_stream(cfg.seed, streams::AUGMENT, epoch as u64);
        let views = [0, 1]
            .map(|w| {
                let (pe, pf) = cfg.augment.view(w);
                augment(g, pe, pf, cfg.augment.per_entry_mask, &mut aug)
            });
        let [v1, v2] = views;
        let (v1, v2) = (encoder_input(&v1?, cfg.encoder), encoder_input(&v2?, cfg.encoder));
        let fwd = Forward::new(&model, &v1, &v2, None)?;

        if let Some(labels) = g.labels() {
            let (rows, m) = similarity_histogram(&fwd.inter, labels, cfg.histogram_bins, epoch);
            histograms.extend(rows);
            means.push(m);
        }

        let fit_event = if fit.wants_fit(cfg, epoch) {
            let ev = fit.attempt(&fwd.inter, cfg, epoch)?;
            if let Some(store) = fit.store.as_mut() {
                if posterior_mode == PosteriorMode::FrozenMatrix {
                    let mut clamped = 0;
                    store.matrices.push(posterior_matrix(&store.frozen, &fwd.inter, &mut clamped));
                }
            }
            Some(ev)
        } else {
            None
        };
        fit.verify_frozen()?;

        let mode = fit.effective_mode(cfg);
        let posteriors = fit.store.as_ref().map(|s| match s.matrices.first() {
            Some(m) => Posteriors::Matrix(&s.frozen, m),
            None => Posteriors::Model(&s.frozen),
        });
        let mut mix_rng = rng::indexed_stream(cfg.seed, streams::MIXING, epoch as u64);
        let loss = finish_step(fwd, &mut model, &mut adam, cfg, mode, posteriors, &mut mix_rng, &mut counters)?;
        log::debug!("epoch {epoch} loss {loss:.6} mode {mode}");
        epochs.push(EpochRecord { epoch, loss, mode, fit_event });
        wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }

    let probe = run_probe(&model, g, cfg)?;
    Ok(TrainReport {
        model,
        epochs,
        wall_ms,
        store: fit.store,
        posterior_checksums: fit.checksums,
        bmm_fits: fit.fits,
        fell_back_to_base: fit.fell_back,
        histograms,
        similarity_means: means,
        clamped_posterior_queries: counters.clamped,
        flagged_weight_rows: counters.flagged_rows,
        zero_posterior_pairs: counters.zero_posterior_pairs,
        probe,
    })
}

/// A sampled neighborhood: seeds occupy the first local indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSubgraph {
    pub graph: Graph,
    /// Global id of every local node.
    pub nodes: Vec<usize>,
    pub n_seeds: usize,
}

/// Expands `seeds` hop by hop, drawing `fanouts[h]` neighbors with
/// replacement for every node of the current frontier, and keeps exactly
/// the sampled edges.
pub fn sample_subgraph(
    g: &Graph,
    seeds: &[usize],
    fanouts: &[usize],
    rng: &mut impl rand::Rng,
) -> Result<SampledSubgraph> {
    let mut local: HashMap<usize, usize> = HashMap::with_capacity(seeds.len() * 4);
    let mut nodes = Vec::with_capacity(seeds.len() * 4);
    for &s in seeds {
        if s >= g.n_nodes() {
            return Err(Error::invalid(format!("seed {s} out of range")));
        }
        if local.insert(s, nodes.len()).is_some() {
            return Err(Error::invalid(format!("duplicate seed {s}")));
        }
        nodes.push(s);
    }
    let mut edges = Vec::new();
    let mut frontier = seeds.to_vec();
    for &fanout in fanouts {
        let mut next = Vec::new();
        for &u in &frontier {
            let nb = g.neighbors(u);
            if nb.is_empty() {
                continue;
            }
            for _ in 0..fanout {
                let v = nb[rng.random_range(0..nb.len())];
                let lv = *local.entry(v).or_insert_with(|| {
                    nodes.push(v);
                    next.push(v);
                    nodes.len() - 1
                });
                edges.push((local[&u], lv));
            }
        }
        frontier = next;
    }
    let features = g.features().select_rows(&nodes);
    let labels = g.labels().map(|l| nodes.iter().map(|&i| l[i]).collect());
    Ok(SampledSubgraph { graph: Graph::from_edges(&edges, features, labels)?, nodes, n_seeds: seeds.len() })
}

/// Fixed seeded partition of the node set into batches.
pub fn batch_partition(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, streams::BATCHING));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn seed_selector(n_seeds: usize, n_local: usize) -> Result<Arc<CsrMatrix>> {
    let rows: Vec<Vec<(usize, f64)>> = (0..n_seeds).map(|i| vec![(i, 1.0)]).collect();
    Ok(Arc::new(CsrMatrix::from_row_entries(n_local, &rows)?))
}

/// Minibatch training over a fixed batch partition. The mixture is fitted
/// once, on the first batch of the fit epoch; in frozen-matrix mode every
/// batch stores its posterior matrix at that epoch and reuses it later.
pub fn train_inductive(g: &Graph, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = g.n_nodes();
    if cfg.batch_size > n {
        return Err(Error::config(format!("batch_size {} exceeds {n} nodes", cfg.batch_size)));
    }
    let batches = batch_partition(n, cfg.batch_size, cfg.seed);
    let smallest = batches.iter().map(Vec::len).min().unwrap_or(0);
    if cfg.inductive_negatives == InductiveNegatives::SeedsOnly {
        cfg.validate_for_nodes(smallest)?;
    }
    let posterior_mode = effective_posterior_mode(cfg, cfg.batch_size);
    let mut model = init_model(g, cfg);
    let mut adam = Adam::new(cfg.lr, cfg.weight_decay);
    let mut fit = FitState::new();
    let mut counters = StepCounters::default();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut wall_ms = Vec::with_capacity(cfg.epochs);
    let mut histograms = Vec::new();
    let mut means = Vec::new();

    let fixed_subgraphs: Option<Vec<SampledSubgraph>> = match cfg.inductive_negatives {
        InductiveNegatives::AllSubgraphNodes => Some(
            batches
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let mut r = rng::indexed_stream(cfg.seed, streams::SUBGRAPH, k as u64);
                    sample_subgraph(g, b, &cfg.fanouts, &mut r)
                })
                .collect::<Result<_>>()?,
        ),
        InductiveNegatives::SeedsOnly => None,
    };
    if let Some(subs) = &fixed_subgraphs {
        for s in subs {
            cfg.validate_for_nodes(s.graph.n_nodes())?;
        }
    }

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut total = 0.0;
        let mut fit_event = None;
        let mut mode = fit.effective_mode(cfg);
        for (k, batch) in batches.iter().enumerate() {
            let step_index = (epoch * batches.len() + k) as u64;
            let sub = match &fixed_subgraphs {
                Some(subs) => subs[k].clone(),
                None => {
                    let mut r = rng::indexed_stream(cfg.seed, streams::SUBGRAPH, step_index);
                    sample_subgraph(g, batch, &cfg.fanouts, &mut r)?
                }
            };
            if sub.nodes[..sub.n_seeds] != batch[..] {
                return Err(Error::Numerical(format!("batch {k} changed composition")));
            }
            let mut aug = rng::indexed_stream(cfg.seed, streams::AUGMENT, step_index);
            let mut view = |w: usize| -> Result<EncoderInput> {
                let (pe, pf) = cfg.augment.view(w);
                Ok(encoder_input(&augment(&sub.graph, pe, pf, cfg.augment.per_entry_mask, &mut aug)?, cfg.encoder))
            };
            let (v1, v2) = (view(0)?, view(1)?);
            let select = match cfg.inductive_negatives {
                InductiveNegatives::SeedsOnly => Some(seed_selector(sub.n_seeds, sub.graph.n_nodes())?),
                InductiveNegatives::AllSubgraphNodes => None,
            };
            let fwd = Forward::new(&model, &v1, &v2, select.as_ref())?;

            if k == 0 {
                if let Some(labels) = sub.graph.labels() {
                    let local_labels = &labels[..fwd.n()];
                    let (rows, m) = similarity_histogram(&fwd.inter, local_labels, cfg.histogram_bins, epoch);
                    histograms.extend(rows);
                    means.push(m);
                }
                if fit.wants_fit(cfg, epoch) {
                    fit_event = Some(fit.attempt(&fwd.inter, cfg, epoch)?);
                    mode = fit.effective_mode(cfg);
                }
            }
            if let Some(store) = fit.store.as_mut() {
                if posterior_mode == PosteriorMode::FrozenMatrix && store.fit_epoch == epoch {
                    let mut clamped = 0;
                    store.matrices.push(posterior_matrix(&store.frozen, &fwd.inter, &mut clamped));
                }
            }
            let posteriors = fit.store.as_ref().map(|s| match posterior_mode {
                PosteriorMode::FrozenMatrix => Posteriors::Matrix(&s.frozen, &s.matrices[k]),
                PosteriorMode::FrozenModel => Posteriors::Model(&s.frozen),
            });
            let mut mix_rng = rng::indexed_stream(cfg.seed, streams::MIXING, step_index);
            total += finish_step(fwd, &mut model, &mut adam, cfg, mode, posteriors, &mut mix_rng, &mut counters)?;
        }
        if let Some(store) = &fit.store {
            if posterior_mode == PosteriorMode::FrozenMatrix && store.matrices.len() != batches.len() {
                return Err(Error::Numerical("posterior list does not cover every batch".into()));
            }
        }
        fit.verify_frozen()?;
        let loss = total / batches.len() as f64;
        epochs.push(EpochRecord { epoch, loss, mode, fit_event });
        wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }

    let probe = run_probe(&model, g, cfg)?;
    Ok(TrainReport {
        model,
        epochs,
        wall_ms,
        store: fit.store,
        posterior_checksums: fit.checksums,
        bmm_fits: fit.fits,
        fell_back_to_base: fit.fell_back,
        histograms,
        similarity_means: means,
        clamped_posterior_queries: counters.clamped,
        flagged_weight_rows: counters.flagged_rows,
        zero_posterior_pairs: counters.zero_posterior_pairs,
        probe,
    })
}
