//! Linear-probe evaluation: multinomial logistic regression on frozen
//! embeddings, averaged over random train/test splits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Fraction of labelled nodes used for training in each split.
    pub train_fraction: f64,
    /// L2 penalty on the weight matrix (the bias is unpenalized).
    pub l2: f64,
    pub runs: usize,
    pub max_steps: usize,
    pub grad_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { train_fraction: 0.1, l2: 1e-2, runs: 20, max_steps: 10_000, grad_tol: 1e-5 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("probe train_fraction must lie in (0, 1)"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::config("probe l2 must be non-negative"));
        }
        if self.runs == 0 || self.max_steps == 0 {
            return Err(Error::config("probe runs and max_steps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub accuracy: f64,
    pub micro_f1: f64,
    pub steps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub acc_mean: f64,
    pub acc_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub splits: Vec<SplitScore>,
}

/// A fitted softmax classifier on standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `d x classes`.
    weights: Matrix,
    bias: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
}

impl LogisticModel {
    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        argmax(&logits)
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect();
        let mut out = self.bias.clone();
        for (j, &zj) in z.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += zj * self.weights[(j, c)];
            }
        }
        out
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Largest eigenvalue of `zᵀz / n` by power iteration.
fn gram_spectral_radius(z: &Matrix) -> f64 {
    let (n, d) = z.shape();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let zv: Vec<f64> = (0..n).map(|i| crate::linalg::dot(z.row(i), &v)).collect();
        let mut w = vec![0.0; d];
        for i in 0..n {
            for (wj, &zij) in w.iter_mut().zip(z.row(i)) {
                *wj += zij * zv[i];
            }
        }
        let nw = crate::linalg::norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let next = nw / n as f64;
        v = w.into_iter().map(|x| x / nw).collect();
        if (next - lambda).abs() <= 1e-9 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

/// Fits multinomial logistic regression by Nesterov-accelerated gradient
/// descent with adaptive restart. Stops when the gradient norm drops
/// below `cfg.grad_tol` or after `cfg.max_steps` steps.
pub fn fit_logistic(x: &Matrix, y: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<LogisticModel> {
    let (n, d) = x.shape();
    if y.len() != n || n == 0 {
        return Err(Error::dim("one label per training row required"));
    }
    if y.iter().any(|&c| c >= n_classes) {
        return Err(Error::invalid("label exceeds the class count"));
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(Error::invalid("training split contains a single class"));
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = (0..n).map(|i| (x[(i, j)] - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if var > 1e-24 { var.sqrt() } else { 1.0 }
        })
        .collect();
    let z = Matrix::from_fn(n, d, |i, j| (x[(i, j)] - mean[j]) / scale[j]);

    // Block step sizes: softmax curvature is at most 1/2, the coupled
    // Hessian at most twice its block diagonal.
    let step_w = 1.0 / (2.0 * (0.5 * gram_spectral_radius(&z) + cfg.l2)).max(1e-12);
    let step_b = 1.0;

    let grad = |w: &Matrix, b: &[f64]| -> (Matrix, Vec<f64>, f64) {
        let mut gw = w.scale(cfg.l2);
        let mut gb = vec![0.0; n_classes];
        let mut loss = 0.5 * cfg.l2 * w.frobenius_sq();
        let inv_n = 1.0 / n as f64;
        for i in 0..n {
            let zi = z.row(i);
            let mut p = b.to_vec();
            for (j, &zij) in zi.iter().enumerate() {
                for (c, pc) in p.iter_mut().enumerate() {
                    *pc += zij * w[(j, c)];
                }
            }
            let m = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + p.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += (lse - p[y[i]]) * inv_n;
            softmax_in_place(&mut p);
            p[y[i]] -= 1.0;
            for (c, &r) in p.iter().enumerate() {
                gb[c] += r * inv_n;
            }
            for (j, &zij) in zi.iter().enumerate() {
                for (c, &r) in p.iter().enumerate() {
                    gw[(j, c)] += zij * r * inv_n;
                }
            }
        }
        (gw, gb, loss)
    };

    let mut w = Matrix::zeros(d, n_classes);
    let mut b = vec![0.0; n_classes];
    let mut w_look = w.clone();
    let mut b_look = b.clone();
    let mut t = 1.0f64;
    let mut steps = 0;
    let mut converged = false;
    while steps < cfg.max_steps {
        let (gw, gb, _) = grad(&w_look, &b_look);
        let gnorm = (gw.frobenius_sq() + gb.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if gnorm < cfg.grad_tol {
            w = w_look;
            b = b_look;
            converged = true;
            break;
        }
        let w_next = w_look.zip_map(&gw, |a, g| a - step_w * g);
        let b_next: Vec<f64> = b_look.iter().zip(&gb).map(|(a, g)| a - step_b * g).collect();
        // Restart momentum when it points uphill.
        let uphill = gw.data().iter().zip(w_next.data().iter().zip(w.data())).map(|(g, (n1, o))| g * (n1 - o)).sum::<f64>()
            + gb.iter().zip(b_next.iter().zip(&b)).map(|(g, (n1, o))| g * (n1 - o)).sum::<f64>();
        let t_next = if uphill > 0.0 { 1.0 } else { (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0 };
        let mom = if uphill > 0.0 { 0.0 } else { (t - 1.0) / t_next };
        w_look = w_next.zip_map(&w, |a, o| a + mom * (a - o));
        b_look = b_next.iter().zip(&b).map(|(a, o)| a + mom * (a - o)).collect();
        w = w_next;
        b = b_next;
        t = t_next;
        steps += 1;
    }
    if !converged {
        let (gw, gb, _) = grad(&w, &b);
        let gnorm = (gw.frobenius_sq() + gb.iter().map(|v| v * v).sum::<f64>()).sqrt();
        converged = gnorm < cfg.grad_tol;
    }
    if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("logistic regression diverged".into()));
    }
    Ok(LogisticModel { mean, scale, weights: w, bias: b, steps, converged })
}

/// Micro-averaged F1 over all classes; equals accuracy for single-label
/// predictions.
pub fn micro_f1(truth: &[usize], pred: &[usize], n_classes: usize) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for c in 0..n_classes {
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

/// Trains on `train` rows and scores on `test` rows.
pub fn evaluate_split(
    emb: &Matrix,
    labels: &[usize],
    train: &[usize],
    test: &[usize],
    cfg: &ProbeConfig,
) -> Result<SplitScore> {
    if labels.len() != emb.rows() {
        return Err(Error::dim("one label per embedding row required"));
    }
    if test.is_empty() {
        return Err(Error::invalid("empty test split"));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |c| c + 1);
    let x = emb.select_rows(train);
    let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let model = fit_logistic(&x, &y, n_classes, cfg)?;
    let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let pred: Vec<usize> = test.iter().map(|&i| model.predict(emb.row(i))).collect();
    let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
    Ok(SplitScore {
        accuracy: correct as f64 / test.len() as f64,
        micro_f1: micro_f1(&truth, &pred, n_classes),
        steps: model.steps,
        converged: model.converged,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and standard deviation of accuracy and micro-F1 over
/// `cfg.runs` random splits drawn from `seed`.
pub fn linear_probe(emb: &Matrix, labels: &[usize], cfg: &ProbeConfig, seed: u64) -> Result<ProbeResult> {
    cfg.validate()?;
    let n = emb.rows();
    if labels.len() != n {
        return Err(Error::dim("one label per embedding row required"));
    }
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid("too few nodes for a train/test split"));
    }
    let mut splits = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let mut r = rng::indexed_stream(seed, streams::SPLIT, run as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let (train, test) = order.split_at(n_train);
        splits.push(evaluate_split(emb, labels, train, test, cfg)?);
    }
    let acc: Vec<f64> = splits.iter().map(|s| s.accuracy).collect();
    let f1: Vec<f64> = splits.iter().map(|s| s.micro_f1).collect();
    let (acc_mean, acc_std) = mean_std(&acc);
    let (f1_mean, f1_std) = mean_std(&f1);
    Ok(ProbeResult { acc_mean, acc_std, f1_mean, f1_std, splits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_classes_are_learned() {
        let x = Matrix::from_fn(40, 2, |i, j| if (i % 2 == 0) == (j == 0) { 10.0 } else { -10.0 } + 0.01 * ((i * 7 + j) % 5) as f64);
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let res = linear_probe(&x, &y, &ProbeConfig { train_fraction: 0.5, runs: 3, ..Default::default() }, 0).unwrap();
        assert_eq!(res.acc_mean, 1.0);
        assert_eq!(res.f1_mean, 1.0);
    }

    #[test]
    fn single_class_training_rejected() {
        let x = Matrix::zeros(4, 2);
        assert!(fit_logistic(&x, &[1, 1, 1, 1], 2, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn micro_f1_equals_accuracy() {
        let t = [0, 1, 2, 2, 1];
        let p = [0, 2, 2, 1, 1];
        assert!((micro_f1(&t, &p, 3) - 0.6).abs() < 1e-12);
    }
}
