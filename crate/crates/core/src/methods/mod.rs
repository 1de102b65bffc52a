//! Encoder training for the seven methods.
//!
//! Every method is a loss over a [`StepInputs`] (the epoch's random draws:
//! views, corruption, triples, pairs) and the current parameters, so the
//! loss is a deterministic function of the parameters once the inputs are
//! sampled. [`train`] runs the epoch loop.

mod losses;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{AugmentConfig, CorruptionConfig};

pub use losses::{
    bgrl_loss, ccassg_loss, e2e_loss, gbt_loss, grace_loss, margin_loss, tbgrl_loss,
};
pub use train::{
    method_loss, sample_inputs, step, train, train_with_init, EpochRecord, Model, StepInputs, TrainData, TrainOutput,
    View,
};

/// SSL epoch count used by the pipeline unless `--paper-epochs` is given.
pub const DEFAULT_SSL_EPOCHS: usize = 2000;
pub const PAPER_SSL_EPOCHS: usize = 10_000;
pub const SUPERVISED_MAX_EPOCHS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bgrl,
    Tbgrl,
    Gbt,
    Ccassg,
    Grace,
    Mlgcn,
    E2e,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Bgrl,
        Method::Tbgrl,
        Method::Gbt,
        Method::Ccassg,
        Method::Grace,
        Method::Mlgcn,
        Method::E2e,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bgrl => "bgrl",
            Method::Tbgrl => "tbgrl",
            Method::Gbt => "gbt",
            Method::Ccassg => "ccassg",
            Method::Grace => "grace",
            Method::Mlgcn => "mlgcn",
            Method::E2e => "e2e",
        }
    }

    /// Supervised methods early-stop on validation Hits@50.
    pub fn is_supervised(self) -> bool {
        matches!(self, Method::Mlgcn | Method::E2e)
    }

    /// Methods with a predictor and an EMA target encoder.
    pub fn is_bootstrapped(self) -> bool {
        matches!(self, Method::Bgrl | Method::Tbgrl)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Encoder training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub embed_dim: usize,
    /// Hidden width of the predictor (bootstrapped methods).
    pub pred_hidden: usize,
    /// Hidden width of the GRACE projection head.
    pub proj_hidden: usize,
    /// Weight of the corrupted-view term (T-BGRL).
    pub lambda: f64,
    /// Margin (ML-GCN).
    pub margin: f64,
    /// Temperature (GRACE).
    pub tau: f64,
    /// Off-diagonal weight (GBT); `None` means `1 / embed_dim`.
    pub w_off: Option<f64>,
    /// Decorrelation weight (CCA-SSG).
    pub w_dec: f64,
    /// EMA decay of the target encoder.
    pub decay: f64,
    /// Cosine-anneal the EMA decay to 1 over the run.
    pub anneal: bool,
    pub aug1: AugmentConfig,
    pub aug2: AugmentConfig,
    pub corruption: CorruptionConfig,
    /// Early-stopping patience in epochs (supervised methods).
    pub patience: usize,
    /// Negatives per anchor (ML-GCN) or per positive (E2E).
    pub negatives: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_method(method: Method) -> Self {
        let supervised = method.is_supervised();
        TrainConfig {
            method,
            epochs: if supervised { SUPERVISED_MAX_EPOCHS } else { DEFAULT_SSL_EPOCHS },
            lr: if supervised { 1e-3 } else { 5e-4 },
            weight_decay: 1e-5,
            embed_dim: 256,
            pred_hidden: 512,
            proj_hidden: 256,
            lambda: 0.5,
            margin: 0.5,
            tau: 0.5,
            w_off: None,
            w_dec: 1e-3,
            decay: 0.99,
            anneal: false,
            aug1: AugmentConfig::default(),
            aug2: AugmentConfig::default(),
            corruption: CorruptionConfig::default(),
            patience: 50,
            negatives: 1,
            seed: 0,
        }
    }

    pub fn w_off(&self) -> f64 {
        self.w_off.unwrap_or(1.0 / self.embed_dim as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.margin > 0.0) {
            return bad(format!("margin {} must be positive", self.margin));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau {} must be positive", self.tau));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return bad(format!("decay {} outside [0, 1]", self.decay));
        }
        if self.embed_dim == 0 || self.pred_hidden == 0 || self.proj_hidden == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1".into());
        }
        self.aug1.validate()?;
        self.aug2.validate()?;
        self.corruption.resolve()?;
        Ok(())
    }
}
