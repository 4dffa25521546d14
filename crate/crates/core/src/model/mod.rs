//! Attention + copy + coverage encoder-decoder.
//!
//! The encoder is a two-layer bidirectional LSTM over code-token embeddings.
//! A single-layer LSTM decoder attends over the encoder states (with a coverage
//! term), mixes a vocabulary softmax with a copy distribution through a learned
//! gate, and is trained with negative log-likelihood plus a coverage penalty.

mod forward;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use forward::{
    attention_step, decode_step, encode, loss_and_grad, sequence_loss, Decoder, DecoderState, DecoderStep, Encoded,
    EncodedExample, LossRecord, LossValue, StepView, PROB_FLOOR,
};
pub use params::{Layout, Parameters};

use crate::{Error, Result};

/// Which of the three mechanisms are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ablation {
    pub attention: bool,
    pub copy: bool,
    pub coverage: bool,
}

impl Ablation {
    pub const BASIC: Ablation = Ablation {
        attention: false,
        copy: false,
        coverage: false,
    };
    pub const ATTEN: Ablation = Ablation {
        attention: true,
        copy: false,
        coverage: false,
    };
    pub const ATTEN_COPY: Ablation = Ablation {
        attention: true,
        copy: true,
        coverage: false,
    };
    pub const ATTEN_COVERAGE: Ablation = Ablation {
        attention: true,
        copy: false,
        coverage: true,
    };
    pub const FULL: Ablation = Ablation {
        attention: true,
        copy: true,
        coverage: true,
    };

    pub const ALL: [Ablation; 5] = [
        Ablation::BASIC,
        Ablation::ATTEN,
        Ablation::ATTEN_COPY,
        Ablation::ATTEN_COVERAGE,
        Ablation::FULL,
    ];

    pub fn name(self) -> &'static str {
        match (self.attention, self.copy, self.coverage) {
            (false, _, _) => "basic",
            (true, false, false) => "atten",
            (true, true, false) => "atten+copy",
            (true, false, true) => "atten+coverage",
            (true, true, true) => "full",
        }
    }

    pub fn validate(self) -> Result<()> {
        if !self.attention && (self.copy || self.coverage) {
            return Err(Error::Config("copy and coverage both require attention".into()));
        }
        Ok(())
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown ablation {s:?} (expected basic, atten, atten+copy, atten+coverage or full)"
            ))
        })
    }
}

impl TryFrom<String> for Ablation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ablation> for String {
    fn from(a: Ablation) -> String {
        a.name().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub embed_dim: usize,
    pub hidden: usize,
    /// Base vocabulary size, specials included.
    pub vocab_size: usize,
    pub vocab_min_freq: usize,
    /// Weight of the coverage penalty.
    pub lambda_cov: f64,
    pub ablation: Ablation,
    pub max_decode_len: usize,
    /// Weights start uniform in `[-init_range, init_range]`.
    #[serde(default = "default_init_range")]
    pub init_range: f64,
}

fn default_init_range() -> f64 {
    0.1
}

impl Hyperparams {
    /// 300-d embeddings, 256-d LSTM states, λ = 1, all mechanisms, titles of at most 16 tokens.
    pub fn new(vocab_size: usize) -> Self {
        Hyperparams {
            embed_dim: 300,
            hidden: 256,
            vocab_size,
            vocab_min_freq: 1,
            lambda_cov: 1.0,
            ablation: Ablation::FULL,
            max_decode_len: 16,
            init_range: default_init_range(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ablation.validate()?;
        if !(self.lambda_cov >= 0.0 && self.lambda_cov.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_cov must be >= 0, got {}",
                self.lambda_cov
            )));
        }
        if !(self.init_range >= 0.0 && self.init_range.is_finite()) {
            return Err(Error::Config(format!(
                "init_range must be >= 0, got {}",
                self.init_range
            )));
        }
        if self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("embed_dim and hidden must be positive".into()));
        }
        if self.vocab_size < crate::vocab::NUM_SPECIALS {
            return Err(Error::Config(format!("vocab_size {} is below 4", self.vocab_size)));
        }
        if self.max_decode_len == 0 {
            return Err(Error::Config("max_decode_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
            a.validate().unwrap();
        }
        assert!("copy".parse::<Ablation>().is_err());
        let bad = Ablation {
            attention: false,
            copy: true,
            coverage: false,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hyperparams_defaults_and_checks() {
        let h = Hyperparams::new(100);
        assert_eq!((h.embed_dim, h.hidden, h.max_decode_len), (300, 256, 16));
        h.validate().unwrap();
        assert!(Hyperparams {
            lambda_cov: -1.0,
            ..h.clone()
        }
        .validate()
        .is_err());
        let json = serde_json::to_string(&h).unwrap();
        assert!(json.contains("\"ablation\":\"full\""));
        assert_eq!(serde_json::from_str::<Hyperparams>(&json).unwrap(), h);
    }
}
