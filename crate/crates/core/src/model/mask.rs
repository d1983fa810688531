use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::linearize::LinearizedFact;

/// How positions outside the object span may attend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Only object-span rows are causal; every other row attends everywhere.
    SpanCausal,
    /// Rows before `[O]` see only the prefix; rows from `[O]` on are causal.
    #[default]
    StrictPrefix,
}

impl std::str::FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "span_causal" | "span-causal" => Ok(MaskMode::SpanCausal),
            "strict_prefix" | "strict-prefix" => Ok(MaskMode::StrictPrefix),
            other => Err(format!("unknown mask mode {other:?}")),
        }
    }
}

/// Additive `l × l` mask with entries in `{0, -inf}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub m: Array2<f64>,
    pub mode: Option<MaskMode>,
}

impl AttentionMask {
    /// No masking at all.
    pub fn full(len: usize) -> Self {
        AttentionMask {
            m: Array2::zeros((len, len)),
            mode: None,
        }
    }

    pub fn len(&self) -> usize {
        self.m.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.m.nrows() == 0
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.m[[i, j]] == 0.0
    }
}

/// Mask for a sequence of `len` positions with `[O]` at `object_start` and
/// loss targets at `region`. Works for partial sequences during decoding.
pub fn build_mask_for(len: usize, object_start: usize, region: Range<usize>, mode: MaskMode) -> AttentionMask {
    let m = Array2::from_shape_fn((len, len), |(i, j)| {
        let visible = match mode {
            MaskMode::SpanCausal => !region.contains(&i) || j <= i,
            MaskMode::StrictPrefix => {
                if i < object_start {
                    j < object_start
                } else {
                    j <= i
                }
            }
        };
        if visible {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    });
    AttentionMask { m, mode: Some(mode) }
}

pub fn build_mask(f: &LinearizedFact, mode: MaskMode) -> AttentionMask {
    build_mask_for(f.len(), f.object_start, f.object_region(), mode)
}
