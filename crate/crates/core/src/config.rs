//! Run configuration, read from TOML. Every key has a default; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SyntheticConfig;
use crate::model::{Decoder, Encoder, OptimizerKind};
use crate::objectives::{Alphas, DistillForm};
use crate::replay::{PatternWeights, ReplayStrategy, SamplingParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ft,
    Tr,
    Tie,
    Fb,
    FbFuture,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Ft => "ft",
            Strategy::Tr => "tr",
            Strategy::Tie => "tie",
            Strategy::Fb => "fb",
            Strategy::FbFuture => "fb_future",
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ft" => Ok(Self::Ft),
            "tr" => Ok(Self::Tr),
            "tie" => Ok(Self::Tie),
            "fb" => Ok(Self::Fb),
            "fb_future" => Ok(Self::FbFuture),
            other => Err(format!("unknown strategy `{other}` (expected ft, tr, tie, fb or fb_future)")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Snapshot cache written by `ingest`. Relative paths resolve against
    /// `TKGC_CACHE_DIR` when set.
    pub cache: Option<PathBuf>,
    /// Generate a synthetic sequence instead of reading a cache.
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: Encoder,
    /// Defaults to ComplEx for DE and TransE for HyTE.
    pub decoder: Option<Decoder>,
    pub dim: usize,
    /// Fraction of lanes modulated by time under DE.
    pub de_gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: Encoder::De,
            decoder: None,
            dim: 128,
            de_gamma: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn decoder(&self) -> Decoder {
        self.decoder.unwrap_or_else(|| self.encoder.default_decoder())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub alpha5: f64,
    pub distill: DistillForm,
    /// Adds `−ln σ(φ(s, r, o, t′))` next to each deleted fact.
    pub paired_positive: bool,
    /// Upper bound on deleted facts per step; 0 keeps them all.
    pub deleted_cap: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
            alpha4: 1.0,
            alpha5: 1.0,
            distill: DistillForm::Full,
            paired_positive: false,
            deleted_cap: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NegConfig {
    pub rate_current: usize,
    pub rate_replay: usize,
}

impl LossConfig {
    pub fn alphas(&self) -> Alphas {
        Alphas {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            alpha4: self.alpha4,
            alpha5: self.alpha5,
        }
    }
}

impl Default for NegConfig {
    fn default() -> Self {
        Self {
            rate_current: 500,
            rate_replay: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    pub max_size: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self { max_size: 2048 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub strategy: ReplayStrategy,
    /// `n`, replay facts drawn per step.
    pub samples: usize,
    /// `τ`, buffer window in steps.
    pub window: usize,
    /// `σ` of the time decay.
    pub sigma: f64,
    /// `γ`, weight of current-pattern counts.
    pub gamma: f64,
    pub lambda: PatternWeights,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            strategy: ReplayStrategy::Freq,
            samples: 1000,
            window: 10,
            sigma: 10.0,
            gamma: 0.5,
            lambda: PatternWeights::default(),
        }
    }
}

impl ReplayConfig {
    pub fn sampling_params(&self) -> SamplingParams {
        SamplingParams {
            lambda: self.lambda.clone(),
            sigma: self.sigma,
            gamma: self.gamma,
            window: self.window,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Row-wise projection of the current gradient against the replay gradient.
    pub agem: bool,
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr: 1e-3,
            agem: false,
            patience: 20,
            max_epochs: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub filtered: bool,
    /// Evaluate `α_{t,j}` for every `j ≤ t`.
    pub exact_a: bool,
    /// Without `exact_a`: every `stride`-th step joins the DF window and the diagonal.
    pub alpha_stride: u32,
    /// `τ_d`.
    pub df_window: u32,
    pub k: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            filtered: false,
            exact_a: true,
            alpha_stride: 5,
            df_window: 10,
            k: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub name: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub num_seeds: u32,
    pub pretrain_fraction: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: "run".into(),
            strategy: Strategy::Tie,
            seed: 0,
            num_seeds: 1,
            pretrain_fraction: 0.7,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub neg: NegConfig,
    pub batch: BatchConfig,
    pub replay: ReplayConfig,
    pub optim: OptimConfig,
    pub eval: EvalConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model.dim == 0 {
            return bad("model.dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.model.de_gamma) {
            return bad(format!("model.de_gamma = {} outside [0, 1]", self.model.de_gamma));
        }
        if self.model.decoder() == Decoder::ComplEx && self.model.dim % 2 != 0 {
            return bad(format!("model.dim = {} must be even for ComplEx", self.model.dim));
        }
        for (i, a) in self.loss.alphas().as_array().iter().enumerate() {
            if !a.is_finite() || *a < 0.0 {
                return bad(format!("loss.alpha{} = {a} must be finite and non-negative", i + 1));
            }
        }
        if self.batch.max_size == 0 {
            return bad("batch.max_size must be positive".into());
        }
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return bad(format!("optim.lr = {} must be positive", self.optim.lr));
        }
        if self.optim.max_epochs == 0 || self.optim.patience == 0 {
            return bad("optim.max_epochs and optim.patience must be positive".into());
        }
        if !(self.replay.sigma > 0.0) {
            return bad("replay.sigma must be positive".into());
        }
        if !(self.run.pretrain_fraction > 0.0 && self.run.pretrain_fraction < 1.0) {
            return bad(format!("run.pretrain_fraction = {} outside (0, 1)", self.run.pretrain_fraction));
        }
        if self.run.num_seeds == 0 {
            return bad("run.num_seeds must be positive".into());
        }
        if self.eval.k == 0 {
            return bad("eval.k must be positive".into());
        }
        if let Some(s) = &self.dataset.synthetic {
            s.validate()?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.run.num_seeds as u64).map(|i| self.run.seed + i).collect()
    }

    /// `T₀ = ⌈fraction · T⌉`, kept below `T` so at least one incremental step remains.
    pub fn pretrain_steps(&self, total: u32) -> u32 {
        let t0 = (self.run.pretrain_fraction * total as f64).ceil() as u32;
        t0.clamp(1, total.saturating_sub(1).max(1))
    }
}
