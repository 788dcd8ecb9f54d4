//! Backbone families (MLP, ConvNet, ResNet-1D) with per-block angle
//! conditioning, and sequence aggregators for multi-view classification.

mod backbone;
mod gru;
mod model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::{NnError, ANGLE_ENCODING_DIM};

pub use gru::GruCell;
pub use model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mlp,
    Conv,
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    None,
    Concat,
    Film,
    Cbn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    MeanPool,
    Gru,
}

macro_rules! string_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(format!(
                        concat!("unknown ", stringify!($ty), " '{}' (expected one of: {})"),
                        s,
                        [$($name),+].join(", ")
                    )),
                }
            }
        }
    };
}

string_enum!(Family { Mlp => "mlp", Conv => "conv", Resnet => "resnet" });
string_enum!(Conditioning { None => "none", Concat => "concat", Film => "film", Cbn => "cbn" });
string_enum!(Aggregator { MeanPool => "mean_pool", Gru => "gru" });

impl Conditioning {
    pub const ALL: [Conditioning; 4] = [
        Conditioning::None,
        Conditioning::Concat,
        Conditioning::Film,
        Conditioning::Cbn,
    ];
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Mlp, Family::Conv, Family::Resnet];
}

/// Per-profile network: an extractor `(N, 1, L)` → `(N, F)` followed (in
/// one-view use) by a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub family: Family,
    /// Channels per block (conv, resnet) or hidden widths (mlp).
    pub widths: Vec<usize>,
    /// Convolution kernel size (odd); unused by the MLP.
    pub kernel: usize,
    pub conditioning: Conditioning,
    pub n_classes: usize,
    /// Profile length `L`.
    pub input_len: usize,
    /// Angle encoding width `D`.
    pub cond_dim: usize,
}

impl BackboneSpec {
    /// Desk-scale defaults: ResNet 16/32/64 and ConvNet 16/32/64 with
    /// kernel 7, MLP 256/128/64.
    pub fn default_for(family: Family, conditioning: Conditioning, n_classes: usize, input_len: usize) -> Self {
        let widths = match family {
            Family::Mlp => vec![256, 128, 64],
            Family::Conv | Family::Resnet => vec![16, 32, 64],
        };
        Self {
            family,
            widths,
            kernel: 7,
            conditioning,
            n_classes,
            input_len,
            cond_dim: ANGLE_ENCODING_DIM,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Invalid(m));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!("widths must be non-empty and positive, got {:?}", self.widths));
        }
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.cond_dim == 0 {
            return bad("cond_dim must be >= 1".into());
        }
        if self.input_len == 0 {
            return bad("input_len must be >= 1".into());
        }
        if self.family != Family::Mlp && self.kernel.is_multiple_of(2) {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub aggregator: Aggregator,
    /// GRU hidden width (ignored by mean pooling).
    pub hidden: usize,
    /// Sequence length `T`.
    pub steps: usize,
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.steps < 2 {
            return Err(NnError::Invalid(format!(
                "sequence length must be >= 2, got {}",
                self.steps
            )));
        }
        if self.aggregator == Aggregator::Gru && self.hidden == 0 {
            return Err(NnError::Invalid("GRU hidden width must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model; stored in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    /// `None` for one-view models.
    pub sequence: Option<SequenceSpec>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        self.backbone.validate()?;
        if let Some(s) = &self.sequence {
            s.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enum_names_roundtrip() {
        for c in Conditioning::ALL {
            assert_eq!(c.as_str().parse::<Conditioning>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert_eq!("mean_pool".parse::<Aggregator>().unwrap(), Aggregator::MeanPool);
        assert_eq!(serde_json::to_string(&Aggregator::MeanPool).unwrap(), "\"mean_pool\"");
        assert!("lstm".parse::<Aggregator>().is_err());
    }

    #[test]
    fn spec_validation() {
        let ok = BackboneSpec::default_for(Family::Resnet, Conditioning::Film, 10, 128);
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.kernel = 4;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.widths.clear();
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.n_classes = 1;
        assert!(bad.validate().is_err());
        let seq = SequenceSpec {
            aggregator: Aggregator::Gru,
            hidden: 8,
            steps: 1,
        };
        assert!(seq.validate().is_err());
    }
}
