//! Two-component mixtures over normalized similarities.
//!
//! The beta mixture is fitted by EM with a method-of-moments M-step; a
//! Gaussian mixture with the same initialization is provided for
//! comparison. Component 0 starts as the low-similarity side of the
//! sample and component 1 as the high-similarity side.
//!
//! The posterior is a function of the normalized similarity alone: one
//! global model is fitted over pooled anchor/negative similarities, so
//! "relative to an anchor" enters only through that pair's similarity.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Similarities are clamped to `[SIM_EPS, 1 - SIM_EPS]` before any beta
/// density evaluation.
pub const SIM_EPS: f64 = 1e-4;
pub const SHAPE_MIN: f64 = 0.1;
pub const SHAPE_MAX: f64 = 100.0;
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// EM stops once the log-likelihood improves by less than this.
pub const CONVERGENCE_TOL: f64 = 1e-6;
pub const MIN_SAMPLE: usize = 4;

/// Affine Min-Max map, frozen from the sample it was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub const UNIT: MinMax = MinMax { min: 0.0, max: 1.0 };

    /// Normalizes and clamps one raw value. The flag reports whether the
    /// raw value fell outside `[min, max]`.
    pub fn apply(&self, raw: f64) -> (f64, bool) {
        let outside = raw < self.min || raw > self.max;
        let s = (raw - self.min) / (self.max - self.min);
        (s.clamp(SIM_EPS, 1.0 - SIM_EPS), outside)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    InterView,
    /// Values supplied directly on the unit interval.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySample {
    values: Vec<f64>,
    norm: MinMax,
    source: SampleSource,
}

impl SimilaritySample {
    /// Clamps values already on `[0, 1]`; the stored map is the identity.
    pub fn from_unit_values(values: &[f64]) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            values: values.iter().map(|v| v.clamp(SIM_EPS, 1.0 - SIM_EPS)).collect(),
            norm: MinMax::UNIT,
            source: SampleSource::Direct,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> MinMax {
        self.norm
    }

    pub fn source(&self) -> SampleSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Min-Max normalization of raw inter-view similarities.
pub fn normalize_minmax(raw: &[f64]) -> Result<SimilaritySample> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite similarity"));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raw.len() < 2 || !(max > min) {
        return Err(Error::Degenerate("similarity range is empty; skip fitting".into()));
    }
    let norm = MinMax { min, max };
    Ok(SimilaritySample {
        values: raw.iter().map(|&r| norm.apply(r).0).collect(),
        norm,
        source: SampleSource::InterView,
    })
}

fn ln_beta_norm(alpha: f64, beta: f64) -> f64 {
    ln_gamma(alpha + beta) - ln_gamma(alpha) - ln_gamma(beta)
}

/// Log beta density on the open unit interval.
pub fn beta_ln_pdf(s: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::invalid(format!("beta density needs s in (0, 1), got {s}")));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::invalid("beta shape parameters must be positive"));
    }
    Ok(ln_beta_norm(alpha, beta) + (alpha - 1.0) * s.ln() + (beta - 1.0) * (1.0 - s).ln())
}

pub fn beta_pdf(s: f64, alpha: f64, beta: f64) -> Result<f64> {
    beta_ln_pdf(s, alpha, beta).map(f64::exp)
}

fn gauss_ln_pdf(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mu) * (x - mu) / var)
}

/// Which component each identification rule picks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Identification {
    /// Smaller mean; `None` if the means tie within 1e-6.
    pub mean_rule: Option<usize>,
    /// Larger mixing weight; `None` on an exact tie.
    pub lambda_rule: Option<usize>,
    pub disagreement: bool,
}

/// Shared surface of the two-component mixtures.
pub trait TwoComponentMixture {
    fn lambda(&self) -> [f64; 2];
    fn means(&self) -> [f64; 2];
    fn component_ln_pdf(&self, c: usize, s: f64) -> f64;
    fn true_component(&self) -> usize;
    fn set_identification(&mut self, true_component: usize, id: Identification);

    fn ln_joint(&self, c: usize, s: f64) -> f64 {
        self.lambda()[c].ln() + self.component_ln_pdf(c, s)
    }

    fn density(&self, s: f64) -> f64 {
        (0..2).map(|c| self.ln_joint(c, s).exp()).sum()
    }

    /// Posterior of the true-negative component at normalized `s`.
    fn posterior_true(&self, s: f64) -> f64 {
        let t = self.true_component();
        let d = self.ln_joint(t, s) - self.ln_joint(1 - t, s);
        logistic(d)
    }

    fn posterior_false(&self, s: f64) -> f64 {
        let t = self.true_component();
        let d = self.ln_joint(1 - t, s) - self.ln_joint(t, s);
        logistic(d)
    }

    fn log_likelihood(&self, values: &[f64]) -> f64 {
        values.iter().map(|&s| log_add(self.ln_joint(0, s), self.ln_joint(1, s))).sum()
    }
}

fn logistic(d: f64) -> f64 {
    if d.is_nan() {
        0.5
    } else if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmmParams {
    pub lambda: [f64; 2],
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub true_component: usize,
    /// Log-likelihood at initialization and after each accepted iteration.
    pub fit_log: Vec<f64>,
    pub iterations: usize,
    pub degenerate: bool,
    /// EM stopped because a method-of-moments step would have lowered the
    /// likelihood; the previous parameters were kept.
    pub stopped_on_decrease: bool,
    pub identification: Identification,
}

impl BmmParams {
    pub fn new(lambda: [f64; 2], alpha: [f64; 2], beta: [f64; 2]) -> Self {
        Self {
            lambda,
            alpha,
            beta,
            true_component: 0,
            fit_log: Vec::new(),
            iterations: 0,
            degenerate: false,
            stopped_on_decrease: false,
            identification: Identification::default(),
        }
    }

    pub fn final_log_likelihood(&self) -> Option<f64> {
        self.fit_log.last().copied()
    }
}

impl TwoComponentMixture for BmmParams {
    fn lambda(&self) -> [f64; 2] {
        self.lambda
    }

    fn means(&self) -> [f64; 2] {
        [0, 1].map(|c| self.alpha[c] / (self.alpha[c] + self.beta[c]))
    }

    fn component_ln_pdf(&self, c: usize, s: f64) -> f64 {
        ln_beta_norm(self.alpha[c], self.beta[c])
            + (self.alpha[c] - 1.0) * s.ln()
            + (self.beta[c] - 1.0) * (1.0 - s).ln()
    }

    fn true_component(&self) -> usize {
        self.true_component
    }

    fn set_identification(&mut self, t: usize, id: Identification) {
        self.true_component = t;
        self.identification = id;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub lambda: [f64; 2],
    pub mu: [f64; 2],
    pub sigma2: [f64; 2],
    pub true_component: usize,
    pub fit_log: Vec<f64>,
    pub iterations: usize,
    pub degenerate: bool,
    pub stopped_on_decrease: bool,
    pub identification: Identification,
}

impl GmmParams {
    pub fn final_log_likelihood(&self) -> Option<f64> {
        self.fit_log.last().copied()
    }
}

impl TwoComponentMixture for GmmParams {
    fn lambda(&self) -> [f64; 2] {
        self.lambda
    }

    fn means(&self) -> [f64; 2] {
        self.mu
    }

    fn component_ln_pdf(&self, c: usize, s: f64) -> f64 {
        gauss_ln_pdf(s, self.mu[c], self.sigma2[c])
    }

    fn true_component(&self) -> usize {
        self.true_component
    }

    fn set_identification(&mut self, t: usize, id: Identification) {
        self.true_component = t;
        self.identification = id;
    }
}

/// Sets the true-negative component: smaller mean first, larger mixing
/// weight on a tie, index 0 if both tie. Both verdicts are recorded.
pub fn identify_true_component<M: TwoComponentMixture>(params: &mut M) {
    let m = params.means();
    let l = params.lambda();
    let mean_rule = if (m[0] - m[1]).abs() > 1e-6 {
        Some(if m[0] < m[1] { 0 } else { 1 })
    } else {
        None
    };
    let lambda_rule = if l[0] != l[1] { Some(if l[0] > l[1] { 0 } else { 1 }) } else { None };
    let disagreement = matches!((mean_rule, lambda_rule), (Some(a), Some(b)) if a != b);
    let chosen = mean_rule.or(lambda_rule).unwrap_or(0);
    if disagreement {
        log::info!(
            "component identification: mean rule picks {chosen}, weight rule picks {}",
            lambda_rule.unwrap_or(0)
        );
    }
    params.set_identification(chosen, Identification { mean_rule, lambda_rule, disagreement });
}

/// Method-of-moments shapes from a mean and variance, with clamping.
/// Returns the shapes and whether any clamp was hit.
pub fn beta_from_moments(mean: f64, var: f64) -> (f64, f64, bool) {
    let mut degenerate = false;
    let mean = if mean > 0.0 && mean < 1.0 {
        mean
    } else {
        degenerate = true;
        mean.clamp(SIM_EPS, 1.0 - SIM_EPS)
    };
    let var = if var < VARIANCE_FLOOR {
        degenerate = true;
        VARIANCE_FLOOR
    } else {
        var
    };
    let alpha = mean * (mean * (1.0 - mean) / var - 1.0);
    let beta = alpha * (1.0 - mean) / mean;
    let clamp = |x: f64, d: &mut bool| {
        if !(SHAPE_MIN..=SHAPE_MAX).contains(&x) || !x.is_finite() {
            *d = true;
            if x.is_nan() {
                SHAPE_MIN
            } else {
                x.clamp(SHAPE_MIN, SHAPE_MAX)
            }
        } else {
            x
        }
    };
    let a = clamp(alpha, &mut degenerate);
    let b = clamp(beta, &mut degenerate);
    (a, b, degenerate)
}

/// Weighted mean and variance; `None` if the weights sum to (almost) zero.
fn weighted_moments(values: &[f64], weights: impl Iterator<Item = f64>) -> Option<(f64, f64, f64)> {
    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swxx = 0.0;
    for (&x, w) in values.iter().zip(weights) {
        sw += w;
        swx += w * x;
        swxx += w * x * x;
    }
    if sw < 1e-12 {
        return None;
    }
    let mean = swx / sw;
    let var = (swxx / sw - mean * mean).max(0.0);
    Some((sw, mean, var))
}

/// Moments of the two sides of a split at the `(1 - w_init)` quantile.
fn split_moments(values: &[f64], w_init: f64) -> [(f64, f64); 2] {
    let m = values.len();
    let mut buf = values.to_vec();
    let k = (((1.0 - w_init) * m as f64).floor() as usize).clamp(1, m - 1);
    buf.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    let (low, high) = buf.split_at(k);
    let mom = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var)
    };
    [mom(low), mom(high)]
}

fn check_fit_args(sample: &SimilaritySample, w_init: f64, iters: usize) -> Result<()> {
    if sample.len() < MIN_SAMPLE {
        return Err(Error::invalid(format!(
            "need at least {MIN_SAMPLE} similarities to fit two components, got {}",
            sample.len()
        )));
    }
    if !(w_init > 0.0 && w_init < 1.0) {
        return Err(Error::invalid(format!("w_init = {w_init} must lie in (0, 1)")));
    }
    if iters == 0 {
        return Err(Error::invalid("EM needs at least one iteration"));
    }
    Ok(())
}

/// Responsibilities of component 0 (component 1 is the complement) and
/// the log-likelihood, in one pass.
fn e_step<M: TwoComponentMixture>(model: &M, values: &[f64], resp0: &mut Vec<f64>) -> f64 {
    resp0.clear();
    let mut ll = 0.0;
    for &s in values {
        let a = model.ln_joint(0, s);
        let b = model.ln_joint(1, s);
        ll += log_add(a, b);
        resp0.push(logistic(a - b));
    }
    ll
}

/// Runs the EM loop shared by both mixtures. `m_step` maps the current
/// model and component-0 responsibilities to the next model.
fn run_em<M: TwoComponentMixture + Clone>(
    init: M,
    values: &[f64],
    iters: usize,
    mut m_step: impl FnMut(&M, &[f64]) -> M,
) -> (M, Vec<f64>, usize, bool) {
    let mut model = init;
    let mut resp = Vec::with_capacity(values.len());
    let mut ll = e_step(&model, values, &mut resp);
    let mut trace = vec![ll];
    let mut done = 0;
    let mut stopped_on_decrease = false;
    let mut next_resp = Vec::with_capacity(values.len());
    for _ in 0..iters {
        let candidate = m_step(&model, &resp);
        let ll_new = e_step(&candidate, values, &mut next_resp);
        if !(ll_new >= ll) {
            stopped_on_decrease = true;
            break;
        }
        model = candidate;
        std::mem::swap(&mut resp, &mut next_resp);
        done += 1;
        trace.push(ll_new);
        let gain = ll_new - ll;
        ll = ll_new;
        if gain < CONVERGENCE_TOL {
            break;
        }
    }
    (model, trace, done, stopped_on_decrease)
}

/// Fits a two-component beta mixture by EM.
///
/// Initialization splits the sample at its `(1 - w_init)` quantile and
/// takes method-of-moments shapes on each side, with mixing weights
/// `(1 - w_init, w_init)`. Each iteration computes responsibilities by
/// Bayes' rule, weighted means and variances, method-of-moments shapes and
/// mean responsibilities as weights. The returned parameters already carry
/// the true-component identification.
pub fn em_fit_bmm(sample: &SimilaritySample, w_init: f64, iters: usize) -> Result<BmmParams> {
    check_fit_args(sample, w_init, iters)?;
    let values = sample.values();
    let m = values.len() as f64;
    let mut degenerate = false;
    let [lo, hi] = split_moments(values, w_init);
    let (a0, b0, d0) = beta_from_moments(lo.0, lo.1);
    let (a1, b1, d1) = beta_from_moments(hi.0, hi.1);
    degenerate |= d0 || d1;
    let init = BmmParams::new([1.0 - w_init, w_init], [a0, a1], [b0, b1]);

    let (mut params, trace, done, stopped) = run_em(init, values, iters, |prev, resp0| {
        let mut next = prev.clone();
        let mut lambda = [0.0; 2];
        for c in 0..2 {
            let w = resp0.iter().map(|&r| if c == 0 { r } else { 1.0 - r });
            match weighted_moments(values, w) {
                Some((sw, mean, var)) => {
                    let (a, b, d) = beta_from_moments(mean, var);
                    degenerate |= d;
                    next.alpha[c] = a;
                    next.beta[c] = b;
                    lambda[c] = sw / m;
                }
                None => {
                    degenerate = true;
                    lambda[c] = 0.0;
                }
            }
        }
        next.lambda = normalized_lambda(lambda);
        next
    });
    params.fit_log = trace;
    params.iterations = done;
    params.stopped_on_decrease = stopped;
    params.degenerate = degenerate;
    identify_true_component(&mut params);
    Ok(params)
}

/// Two-component Gaussian EM with the same initialization and clamps.
pub fn em_fit_gmm(sample: &SimilaritySample, w_init: f64, iters: usize) -> Result<GmmParams> {
    check_fit_args(sample, w_init, iters)?;
    let values = sample.values();
    let m = values.len() as f64;
    let mut degenerate = false;
    let [lo, hi] = split_moments(values, w_init);
    let floor = |v: f64, d: &mut bool| {
        if v < VARIANCE_FLOOR {
            *d = true;
            VARIANCE_FLOOR
        } else {
            v
        }
    };
    let init = GmmParams {
        lambda: [1.0 - w_init, w_init],
        mu: [lo.0, hi.0],
        sigma2: [floor(lo.1, &mut degenerate), floor(hi.1, &mut degenerate)],
        true_component: 0,
        fit_log: Vec::new(),
        iterations: 0,
        degenerate: false,
        stopped_on_decrease: false,
        identification: Identification::default(),
    };
    let (mut params, trace, done, stopped) = run_em(init, values, iters, |prev, resp0| {
        let mut next = prev.clone();
        let mut lambda = [0.0; 2];
        for c in 0..2 {
            let w = resp0.iter().map(|&r| if c == 0 { r } else { 1.0 - r });
            match weighted_moments(values, w) {
                Some((sw, mean, var)) => {
                    next.mu[c] = mean;
                    next.sigma2[c] = floor(var, &mut degenerate);
                    lambda[c] = sw / m;
                }
                None => {
                    degenerate = true;
                    lambda[c] = 0.0;
                }
            }
        }
        next.lambda = normalized_lambda(lambda);
        next
    });
    params.fit_log = trace;
    params.iterations = done;
    params.stopped_on_decrease = stopped;
    params.degenerate = degenerate;
    identify_true_component(&mut params);
    Ok(params)
}

fn normalized_lambda(l: [f64; 2]) -> [f64; 2] {
    let s = l[0] + l[1];
    if s <= 0.0 {
        return [0.5, 0.5];
    }
    [l[0] / s, l[1] / s]
}

/// A fitted mixture together with the normalization it was fitted under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenPosterior {
    pub bmm: BmmParams,
    pub norm: MinMax,
}

impl FrozenPosterior {
    /// Posterior of the true component for a raw similarity; the flag
    /// reports a value outside the frozen range (clamped).
    pub fn posterior_raw(&self, raw: f64) -> (f64, bool) {
        let (s, outside) = self.norm.apply(raw);
        (self.bmm.posterior_true(s), outside)
    }
}

/// Posterior of the true-negative component for a normalized similarity.
pub fn posterior_true(params: &BmmParams, s: f64) -> f64 {
    params.posterior_true(s.clamp(SIM_EPS, 1.0 - SIM_EPS))
}
