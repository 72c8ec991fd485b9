//! Training configuration: defaults, validation and overrides from files
//! or `key=value` pairs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, EncoderKind};
use crate::probe::ProbeConfig;

/// Contrastive objective used after the mixture fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Base,
    Weight,
    Mix,
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Self::Base),
            "weight" => Ok(Self::Weight),
            "mix" => Ok(Self::Mix),
            other => Err(Error::config(format!("unknown mode {other:?} (base, weight, mix)"))),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Base => "base",
            Self::Weight => "weight",
            Self::Mix => "mix",
        })
    }
}

/// How posteriors are obtained after the fitting epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorMode {
    /// Posterior matrix computed once at the fitting epoch and reused.
    FrozenMatrix,
    /// Frozen mixture and normalization evaluated on current similarities.
    FrozenModel,
}

impl FromStr for PosteriorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "frozen-matrix" => Ok(Self::FrozenMatrix),
            "frozen-model" => Ok(Self::FrozenModel),
            other => Err(Error::config(format!("unknown posterior mode {other:?}"))),
        }
    }
}

/// Which subgraph nodes act as anchors and negatives in minibatch training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InductiveNegatives {
    SeedsOnly,
    AllSubgraphNodes,
}

impl FromStr for InductiveNegatives {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "seeds-only" => Ok(Self::SeedsOnly),
            "all-subgraph-nodes" => Ok(Self::AllSubgraphNodes),
            other => Err(Error::config(format!("unknown inductive negatives {other:?}"))),
        }
    }
}

/// Graphs above this size use [`PosteriorMode::FrozenModel`] regardless
/// of the configured mode.
pub const FROZEN_MATRIX_MAX_NODES: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub mode: LossMode,
    /// Contrastive temperature.
    pub tau: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub encoder: EncoderKind,
    pub activation: Activation,
    pub hidden_dim: usize,
    /// Hidden width of the projection head.
    pub proj_dim: usize,
    /// Epoch at which the mixture is fitted and frozen.
    pub fit_epoch: usize,
    /// Initial weight of the false-negative component.
    pub w_init: f64,
    pub em_iters: usize,
    /// Similarities sampled per anchor for the fit.
    pub m_prime: usize,
    /// Size of the hard-negative parent pool.
    pub n_prime: usize,
    /// Synthetic negatives per anchor.
    pub m: usize,
    pub posterior: PosteriorMode,
    pub augment: AugmentConfig,
    pub batch_size: usize,
    /// Neighbors sampled per hop, with replacement.
    pub fanouts: Vec<usize>,
    pub inductive_negatives: InductiveNegatives,
    pub histogram_bins: usize,
    /// Failed fits tolerated before falling back to the base loss.
    pub fit_retries: usize,
    /// Replaces every hardness weight by 1 (test hook).
    pub unit_weights: bool,
    pub probe: ProbeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: LossMode::Base,
            tau: 0.5,
            lr: 1e-3,
            weight_decay: 1e-5,
            epochs: 200,
            encoder: EncoderKind::Gcn2,
            activation: Activation::Prelu,
            hidden_dim: 128,
            proj_dim: 128,
            fit_epoch: 100,
            w_init: 0.05,
            em_iters: 10,
            m_prime: 100,
            n_prime: 10,
            m: 5,
            posterior: PosteriorMode::FrozenMatrix,
            augment: AugmentConfig::default(),
            batch_size: 256,
            fanouts: vec![10, 10, 25],
            inductive_negatives: InductiveNegatives::SeedsOnly,
            histogram_bins: 40,
            fit_retries: 3,
            unit_weights: false,
            probe: ProbeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.mode != LossMode::Base && self.fit_epoch >= self.epochs {
            return bad(format!(
                "fit epoch E = {} must be smaller than epochs = {}",
                self.fit_epoch, self.epochs
            ));
        }
        if !(self.w_init > 0.0 && self.w_init < 1.0) {
            return bad(format!("w_init must lie in (0, 1), got {}", self.w_init));
        }
        if self.em_iters == 0 {
            return bad("em_iters must be at least 1".into());
        }
        if self.m_prime < 2 {
            return bad("m_prime must be at least 2".into());
        }
        if self.mode == LossMode::Mix {
            if self.n_prime < 2 {
                return bad("n_prime must be at least 2".into());
            }
            if self.m == 0 {
                return bad("m must be at least 1 in mix mode".into());
            }
        }
        if self.hidden_dim == 0 || self.proj_dim == 0 {
            return bad("hidden_dim and proj_dim must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.fanouts.is_empty() || self.fanouts.contains(&0) {
            return bad("fanouts must be a non-empty list of positive counts".into());
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be positive".into());
        }
        self.augment.validate()?;
        self.probe.validate()
    }

    /// Checks that depend on the number of nodes the loss is computed over.
    pub fn validate_for_nodes(&self, n: usize) -> Result<()> {
        if n < 3 {
            return Err(Error::config(format!("training needs at least 3 nodes, got {n}")));
        }
        if self.mode == LossMode::Mix && self.n_prime > n - 1 {
            return Err(Error::config(format!(
                "n_prime = {} exceeds the {} negatives per anchor",
                self.n_prime,
                n - 1
            )));
        }
        Ok(())
    }

    /// Overrides one field. Keys are field names, dotted paths into nested
    /// sections (`augment.p_edge_drop_1`), or the short aliases `E`, `I`,
    /// `M_prime`, `N_prime`, `p_edge_1`, `p_edge_2`, `p_feat_1`, `p_feat_2`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = canonical_key(key);
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in &path {
            slot = slot
                .get_mut(part.as_str())
                .ok_or_else(|| Error::config(format!("unknown config key {key:?}")))?;
        }
        *slot = parse_like(slot, value);
        *self = serde_json::from_value(root)
            .map_err(|e| Error::config(format!("bad value {value:?} for {key}: {e}")))?;
        Ok(())
    }

    /// Loads `.json` or `.toml` files, or `key=value` lines otherwise.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        match ext {
            "json" => serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display()))),
            "toml" => toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display()))),
            _ => {
                let mut cfg = Self::default();
                cfg.apply_pairs(&text)?;
                Ok(cfg)
            }
        }
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_pairs(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", no + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

fn canonical_key(key: &str) -> Vec<String> {
    let k = key.trim().trim_start_matches("--").replace('-', "_");
    let mapped = match k.to_ascii_lowercase().as_str() {
        "e" => "fit_epoch".to_string(),
        "i" => "em_iters".to_string(),
        "p_edge_1" => "augment.p_edge_drop_1".to_string(),
        "p_edge_2" => "augment.p_edge_drop_2".to_string(),
        "p_feat_1" => "augment.p_feat_mask_1".to_string(),
        "p_feat_2" => "augment.p_feat_mask_2".to_string(),
        "m_prime" => "m_prime".to_string(),
        "n_prime" => "n_prime".to_string(),
        _ => k,
    };
    mapped.split('.').map(str::to_string).collect()
}

/// Parses `raw` into the JSON shape of `current`.
fn parse_like(current: &Value, raw: &str) -> Value {
    match current {
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(_) if !raw.trim_start().starts_with('[') => Value::Array(
            raw.split(',')
                .map(|p| serde_json::from_str(p.trim()).unwrap_or_else(|_| Value::String(p.trim().into())))
                .collect(),
        ),
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn fit_epoch_must_precede_end() {
        let cfg = TrainConfig { mode: LossMode::Weight, fit_epoch: 10, epochs: 5, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let base = TrainConfig { fit_epoch: 10, epochs: 5, ..Default::default() };
        base.validate().unwrap();
    }

    #[test]
    fn set_handles_aliases_and_types() {
        let mut cfg = TrainConfig::default();
        cfg.set("E", "7").unwrap();
        cfg.set("mode", "mix").unwrap();
        cfg.set("p-edge-1", "0.25").unwrap();
        cfg.set("fanouts", "2,3").unwrap();
        cfg.set("posterior", "frozen-model").unwrap();
        cfg.set("probe.runs", "4").unwrap();
        assert_eq!(cfg.fit_epoch, 7);
        assert_eq!(cfg.mode, LossMode::Mix);
        assert_eq!(cfg.augment.p_edge_drop_1, 0.25);
        assert_eq!(cfg.fanouts, vec![2, 3]);
        assert_eq!(cfg.posterior, PosteriorMode::FrozenModel);
        assert_eq!(cfg.probe.runs, 4);
        assert!(cfg.set("nonsense", "1").is_err());
        assert!(cfg.set("epochs", "many").is_err());
    }

    #[test]
    fn pairs_and_toml_agree() {
        let mut a = TrainConfig::default();
        a.apply_pairs("# comment\nepochs = 12\ntau=0.2\n").unwrap();
        let b: TrainConfig = toml::from_str("epochs = 12\ntau = 0.2\n").unwrap();
        assert_eq!(a, b);
    }
}
