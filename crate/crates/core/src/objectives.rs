//! Contrastive objectives: InfoNCE, posterior-weighted InfoNCE and
//! InfoNCE with posterior-mixed synthetic negatives.
//!
//! Every loss is symmetric in the two views: the `u` direction anchors on
//! rows of the first view, the `v` direction on rows of the second, and
//! the result is `-(1/2n) * sum_i [l(u_i, v_i) + l(v_i, u_i)]`.

use std::sync::Arc;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, Matrix};
use crate::mixture::MinMax;
use crate::nn::{cosine, ProjectionParams};

/// Critic values between all node pairs of two views.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSimilarities {
    /// `inter[(i, k)] = θ(u_i, v_k)`.
    pub inter: Matrix,
    /// `intra_u[(i, k)] = θ(u_i, u_k)`; the diagonal is never used.
    pub intra_u: Matrix,
    pub intra_v: Matrix,
    pub tau: f64,
}

impl PairSimilarities {
    pub fn new(inter: Matrix, intra_u: Matrix, intra_v: Matrix, tau: f64) -> Result<Self> {
        let n = inter.rows();
        for m in [&inter, &intra_u, &intra_v] {
            if m.shape() != (n, n) {
                return Err(Error::dim("similarity matrices must be n x n and equally sized"));
            }
        }
        Ok(Self { inter, intra_u, intra_v, tau })
    }

    /// Critic values for embeddings `u`, `v` under projection head `proj`.
    pub fn from_embeddings(u: &Matrix, v: &Matrix, proj: &ProjectionParams, tau: f64) -> Result<Self> {
        let pu = project_rows(u, proj)?;
        let pv = project_rows(v, proj)?;
        let n = u.rows();
        let sim = |a: &Matrix, b: &Matrix| Matrix::from_fn(n, n, |i, k| cosine(a.row(i), b.row(k)));
        Self::new(sim(&pu, &pv), sim(&pu, &pu), sim(&pv, &pv), tau)
    }

    pub fn n(&self) -> usize {
        self.inter.rows()
    }
}

fn project_rows(z: &Matrix, proj: &ProjectionParams) -> Result<Matrix> {
    let rows = (0..z.rows()).map(|i| proj.apply(z.row(i))).collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

/// Hardness weights `w(i, k)` for one anchor direction. Row `i` holds the
/// weights of anchor `i`'s negatives; the diagonal is zero and unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub w: Matrix,
    /// Rows whose normalizer underflowed and were set to uniform weights.
    pub flagged_rows: Vec<usize>,
}

impl WeightMatrix {
    pub fn uniform(n: usize) -> Self {
        Self { w: Matrix::from_fn(n, n, |i, k| if i == k { 0.0 } else { 1.0 }), flagged_rows: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.w.rows()
    }

    /// Builds from arbitrary values, zeroing the diagonal. Rejects
    /// negative entries.
    pub fn from_matrix(mut w: Matrix) -> Result<Self> {
        if w.rows() != w.cols() {
            return Err(Error::dim("weight matrix must be square"));
        }
        for i in 0..w.rows() {
            w[(i, i)] = 0.0;
        }
        if w.data().iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        Ok(Self { w, flagged_rows: Vec::new() })
    }
}

/// Weights for both anchor directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalWeights {
    pub u: WeightMatrix,
    pub v: WeightMatrix,
}

impl DirectionalWeights {
    pub fn symmetric(w: WeightMatrix) -> Self {
        Self { u: w.clone(), v: w }
    }
}

const ROW_UNDERFLOW: f64 = 1e-12;

/// Hardness measure: `w(i,k) = p_ik s_ik / mean_{j != i}(p_ij s_ij)`,
/// with `s` the Min-Max normalized raw similarity and `p` the posterior
/// of the pair being a true negative.
///
/// `raw` rows are anchors. `posterior(i, k, s)` receives the normalized
/// similarity and returns the true-negative probability.
pub fn compute_weights(
    raw: &Matrix,
    norm: &MinMax,
    posterior: impl Fn(usize, usize, f64) -> f64,
) -> Result<WeightMatrix> {
    let n = raw.rows();
    if raw.cols() != n || n < 2 {
        return Err(Error::dim("weights need a square similarity matrix with n >= 2"));
    }
    let mut w = Matrix::zeros(n, n);
    let mut flagged = Vec::new();
    for i in 0..n {
        let mut sum = 0.0;
        for k in 0..n {
            if k == i {
                continue;
            }
            let (s, _) = norm.apply(raw[(i, k)]);
            let p = posterior(i, k, s);
            let v = p * s;
            w[(i, k)] = v;
            sum += v;
        }
        let mean = sum / (n - 1) as f64;
        if mean < ROW_UNDERFLOW {
            flagged.push(i);
            for k in 0..n {
                w[(i, k)] = if k == i { 0.0 } else { 1.0 };
            }
        } else {
            for k in 0..n {
                w[(i, k)] /= mean;
            }
        }
    }
    Ok(WeightMatrix { w, flagged_rows: flagged })
}

/// One synthetic negative `α v_p + (1 - α) v_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub p: usize,
    pub q: usize,
    pub alpha: f64,
}

/// Synthetic negatives for every anchor of one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticNegatives {
    pub per_anchor: Vec<Vec<SyntheticSpec>>,
    /// The parent pool of each anchor, hardest first.
    pub pools: Vec<Vec<usize>>,
    /// Draws where both parents had zero posterior (α set to 0.5).
    pub zero_posterior_pairs: usize,
}

impl SyntheticNegatives {
    pub fn empty(n: usize) -> Self {
        Self { per_anchor: vec![Vec::new(); n], pools: vec![Vec::new(); n], zero_posterior_pairs: 0 }
    }

    pub fn n_anchors(&self) -> usize {
        self.per_anchor.len()
    }

    /// Synthetics per anchor (`m`); all anchors carry the same count.
    pub fn per_anchor_count(&self) -> usize {
        self.per_anchor.first().map_or(0, Vec::len)
    }

    /// `(n*m) x n_parents` mixing matrix; row `i*m + k` builds anchor `i`'s
    /// `k`-th synthetic.
    pub fn mixing_matrix(&self, n_parents: usize) -> Result<CsrMatrix> {
        let rows: Vec<Vec<(usize, f64)>> = self
            .per_anchor
            .iter()
            .flat_map(|specs| specs.iter().map(|s| vec![(s.p, s.alpha), (s.q, 1.0 - s.alpha)]))
            .collect();
        CsrMatrix::from_row_entries(n_parents, &rows)
    }

    /// Row-to-anchor gather matrix `(n*m) x n`.
    pub fn anchor_gather(&self) -> Result<CsrMatrix> {
        let n = self.n_anchors();
        let rows: Vec<Vec<(usize, f64)>> = self
            .per_anchor
            .iter()
            .enumerate()
            .flat_map(|(i, specs)| specs.iter().map(move |_| vec![(i, 1.0)]))
            .collect();
        CsrMatrix::from_row_entries(n, &rows)
    }

    /// Group-sum matrix `n x (n*m)` summing each anchor's synthetic terms.
    pub fn group_sum(&self) -> Result<CsrMatrix> {
        let mut r = 0;
        let rows: Vec<Vec<(usize, f64)>> = self
            .per_anchor
            .iter()
            .map(|specs| {
                let row = (r..r + specs.len()).map(|c| (c, 1.0)).collect();
                r += specs.len();
                row
            })
            .collect();
        CsrMatrix::from_row_entries(r, &rows)
    }

    /// Synthetic embeddings from the parent view's embeddings.
    pub fn materialize(&self, parents: &Matrix) -> Result<Matrix> {
        self.mixing_matrix(parents.rows())?.spmm(parents)
    }
}

/// Picks the `n_pool` hardest negatives of every anchor by `hardness`
/// and draws `m` parent pairs uniformly without replacement from the pool.
/// Mixing weights are `α = p_ip / (p_ip + p_iq)`.
///
/// `hardness` and `posterior` rows are anchors; columns index the other
/// view. The diagonal (the positive) is never a parent.
pub fn synthesize_negatives(
    hardness: &Matrix,
    posterior: &Matrix,
    n_pool: usize,
    m: usize,
    rng: &mut impl rand::Rng,
) -> Result<SyntheticNegatives> {
    let n = hardness.rows();
    if hardness.shape() != (n, n) || posterior.shape() != (n, n) {
        return Err(Error::dim("hardness and posterior must be n x n"));
    }
    if n_pool < 2 {
        return Err(Error::invalid("the parent pool needs at least two negatives"));
    }
    if n_pool > n - 1 {
        return Err(Error::invalid(format!("pool size {n_pool} exceeds the {} negatives", n - 1)));
    }
    if m == 0 {
        return Err(Error::invalid("m must be at least 1"));
    }
    let mut out = SyntheticNegatives::empty(n);
    for i in 0..n {
        let pool = hardest(hardness.row(i), i, n_pool);
        let mut specs = Vec::with_capacity(m);
        for _ in 0..m {
            let pick = index::sample(rng, n_pool, 2);
            let (p, q) = (pool[pick.index(0)], pool[pick.index(1)]);
            let (pp, pq) = (posterior[(i, p)], posterior[(i, q)]);
            let alpha = if pp + pq > 0.0 {
                pp / (pp + pq)
            } else {
                out.zero_posterior_pairs += 1;
                0.5
            };
            specs.push(SyntheticSpec { p, q, alpha });
        }
        out.per_anchor[i] = specs;
        out.pools[i] = pool;
    }
    Ok(out)
}

/// Indices of the `k` largest scores excluding `skip`; ties go to the
/// lower index.
pub fn hardest(scores: &[f64], skip: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&j| j != skip).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Similarity matrices on a tape.
#[derive(Debug, Clone, Copy)]
pub struct SimVars {
    pub inter: Var,
    pub intra_u: Var,
    pub intra_v: Var,
}

impl SimVars {
    /// Cosine similarities between rows of projected views `hu`, `hv`.
    pub fn from_projected(tape: &mut Tape, hu: Var, hv: Var) -> Result<Self> {
        let nu = tape.row_normalize(hu);
        let nv = tape.row_normalize(hv);
        Ok(Self {
            inter: tape.matmul_t(nu, nv)?,
            intra_u: tape.matmul_t(nu, nu)?,
            intra_v: tape.matmul_t(nv, nv)?,
        })
    }

    pub fn constants(tape: &mut Tape, sims: &PairSimilarities) -> Self {
        Self {
            inter: tape.constant(sims.inter.clone()),
            intra_u: tape.constant(sims.intra_u.clone()),
            intra_v: tape.constant(sims.intra_v.clone()),
        }
    }
}

/// Optional modifications of the InfoNCE denominator.
#[derive(Debug, Clone, Default)]
pub struct LossTerms {
    /// Negative weights for the `u` and `v` anchor directions.
    pub weights: Option<(Arc<Matrix>, Arc<Matrix>)>,
    /// `θ(anchor_i, synthetic)` values, `(n*m) x 1` per direction, and the
    /// group-sum matrix mapping them to anchors.
    pub synthetic: Option<SyntheticTerms>,
}

#[derive(Debug, Clone)]
pub struct SyntheticTerms {
    pub sims_u: Var,
    pub sims_v: Var,
    pub group_u: Arc<CsrMatrix>,
    pub group_v: Arc<CsrMatrix>,
}

fn off_diagonal_ones(n: usize) -> Matrix {
    Matrix::from_fn(n, n, |i, k| if i == k { 0.0 } else { 1.0 })
}

/// Records the symmetric contrastive loss on `tape`.
pub fn contrastive_loss(tape: &mut Tape, sims: SimVars, tau: f64, terms: &LossTerms) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let n = tape.value(sims.inter).rows();
    if n < 2 {
        return Err(Error::invalid("contrastive loss needs at least two nodes"));
    }
    let inv_tau = 1.0 / tau;
    let (wu, wv) = match &terms.weights {
        Some((wu, wv)) => {
            if wu.shape() != (n, n) || wv.shape() != (n, n) {
                return Err(Error::dim("weight matrices must be n x n"));
            }
            let strip = |w: &Matrix| Arc::new(w.zip_map(&off_diagonal_ones(n), |a, b| a * b));
            (strip(wu), strip(wv))
        }
        None => {
            let ones = Arc::new(off_diagonal_ones(n));
            (ones.clone(), ones)
        }
    };

    let scaled_inter = tape.scale(sims.inter, inv_tau);
    let exp_inter = tape.exp(scaled_inter);
    let exp_inter_t = tape.transpose(exp_inter);
    let pos = tape.diag(scaled_inter)?;
    let exp_pos = tape.exp(pos);

    let direction = |tape: &mut Tape, exp_cross: Var, intra: Var, w: Arc<Matrix>, syn: Option<(Var, Arc<CsrMatrix>)>| -> Result<Var> {
        let cross = tape.mul_const(exp_cross, w.clone())?;
        let cross = tape.row_sum(cross);
        let scaled_intra = tape.scale(intra, inv_tau);
        let exp_intra = tape.exp(scaled_intra);
        let intra_w = tape.mul_const(exp_intra, w)?;
        let intra_sum = tape.row_sum(intra_w);
        let mut denom = tape.add(exp_pos, cross)?;
        denom = tape.add(denom, intra_sum)?;
        if let Some((s, group)) = syn {
            let scaled = tape.scale(s, inv_tau);
            let e = tape.exp(scaled);
            let per_anchor = tape.spmm(group, e)?;
            denom = tape.add(denom, per_anchor)?;
        }
        let log_denom = tape.log(denom);
        let l = tape.sub(pos, log_denom)?;
        Ok(tape.sum(l))
    };
    let (syn_u, syn_v) = match &terms.synthetic {
        Some(t) => (Some((t.sims_u, t.group_u.clone())), Some((t.sims_v, t.group_v.clone()))),
        None => (None, None),
    };
    let lu = direction(tape, exp_inter, sims.intra_u, wu, syn_u)?;
    let lv = direction(tape, exp_inter_t, sims.intra_v, wv, syn_v)?;
    let total = tape.add(lu, lv)?;
    Ok(tape.scale(total, -1.0 / (2.0 * n as f64)))
}

/// InfoNCE over positives, inter-view and intra-view negatives.
pub fn loss_infonce(sims: &PairSimilarities) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = SimVars::constants(&mut tape, sims);
    let l = contrastive_loss(&mut tape, vars, sims.tau, &LossTerms::default())?;
    Ok(tape.scalar(l))
}

/// InfoNCE with every negative term scaled by its hardness weight.
pub fn loss_progcl_weight(sims: &PairSimilarities, w: &DirectionalWeights) -> Result<f64> {
    let n = sims.n();
    if w.u.n() != n || w.v.n() != n {
        return Err(Error::dim("weight matrix size differs from similarity size"));
    }
    if w.u.w.data().iter().chain(w.v.w.data()).any(|&x| x < 0.0) {
        return Err(Error::invalid("negative weight"));
    }
    let mut tape = Tape::new();
    let vars = SimVars::constants(&mut tape, sims);
    let terms = LossTerms {
        weights: Some((Arc::new(w.u.w.clone()), Arc::new(w.v.w.clone()))),
        synthetic: None,
    };
    let l = contrastive_loss(&mut tape, vars, sims.tau, &terms)?;
    Ok(tape.scalar(l))
}

/// `θ(anchor_i, synthetic_ik)` for every synthetic, as an `n x m` matrix.
pub fn synthetic_similarities(
    anchors: &Matrix,
    parents: &Matrix,
    synth: &SyntheticNegatives,
    proj: &ProjectionParams,
) -> Result<Matrix> {
    let n = synth.n_anchors();
    let m = synth.per_anchor_count();
    let mixed = synth.materialize(parents)?;
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let a = proj.apply(anchors.row(i))?;
        for k in 0..m {
            let s = proj.apply(mixed.row(i * m + k))?;
            out[(i, k)] = cosine(&a, &s);
        }
    }
    Ok(out)
}

/// InfoNCE with extra synthetic negatives in each denominator.
/// `syn_u[(i, k)] = θ(u_i, ũ_k)`, `syn_v` likewise for the `v` anchors;
/// zero-column matrices reduce to [`loss_infonce`].
pub fn loss_progcl_mix(sims: &PairSimilarities, syn_u: &Matrix, syn_v: &Matrix) -> Result<f64> {
    let n = sims.n();
    if syn_u.rows() != n || syn_v.rows() != n || syn_u.cols() != syn_v.cols() {
        return Err(Error::dim("synthetic similarity matrices must be n x m"));
    }
    let m = syn_u.cols();
    let mut tape = Tape::new();
    let vars = SimVars::constants(&mut tape, sims);
    let terms = if m == 0 {
        LossTerms::default()
    } else {
        let group = Arc::new(group_sum_matrix(n, m));
        LossTerms {
            weights: None,
            synthetic: Some(SyntheticTerms {
                sims_u: tape.constant(Matrix::from_vec(n * m, 1, syn_u.data().to_vec())?),
                sims_v: tape.constant(Matrix::from_vec(n * m, 1, syn_v.data().to_vec())?),
                group_u: group.clone(),
                group_v: group,
            }),
        }
    };
    let l = contrastive_loss(&mut tape, vars, sims.tau, &terms)?;
    Ok(tape.scalar(l))
}

fn group_sum_matrix(n: usize, m: usize) -> CsrMatrix {
    let rows: Vec<Vec<(usize, f64)>> =
        (0..n).map(|i| (0..m).map(|k| (i * m + k, 1.0)).collect()).collect();
    CsrMatrix::from_row_entries(n * m, &rows).expect("indices in range")
}
