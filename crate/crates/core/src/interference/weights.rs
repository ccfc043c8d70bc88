use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::slimnet::WidthConfig;

/// Per-width loss multipliers `λ_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ReweightVariant {
    /// All ones.
    None,
    /// `λ_i = 1 + 1{i=1}·Σ_{j≥2} w_j`.
    SumOfSubWidths,
    /// `λ_i = 1 + 1{i=1}·max_{j≥2} w_j`.
    MaxSubWidth,
    /// `λ_i = n·w_i / Σ_j w_j`.
    Proportional,
    /// `λ_i = n·(1 + Σ_{j≥i} w_j) / Σ_j (1 + Σ_{k≥j} w_k)`.
    SuffixSum,
}

impl FromStr for ReweightVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "1" => Ok(Self::SumOfSubWidths),
            "2" => Ok(Self::MaxSubWidth),
            "3" => Ok(Self::Proportional),
            "4" => Ok(Self::SuffixSum),
            other => Err(invalid!("unknown reweighting variant {other:?} (expected 1, 2, 3, 4 or none)")),
        }
    }
}

impl TryFrom<String> for ReweightVariant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ReweightVariant> for String {
    fn from(v: ReweightVariant) -> Self {
        v.to_string()
    }
}

impl fmt::Display for ReweightVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::SumOfSubWidths => "1",
            Self::MaxSubWidth => "2",
            Self::Proportional => "3",
            Self::SuffixSum => "4",
        })
    }
}

pub fn loss_weights(config: &WidthConfig, variant: ReweightVariant) -> Vec<f64> {
    let w = config.widths();
    let n = w.len();
    let sub = &w[1..];
    match variant {
        ReweightVariant::None => vec![1.0; n],
        ReweightVariant::SumOfSubWidths => {
            let s: f64 = sub.iter().sum();
            (0..n).map(|i| if i == 0 { 1.0 + s } else { 1.0 }).collect()
        }
        ReweightVariant::MaxSubWidth => {
            let m = sub.iter().copied().fold(0.0, f64::max);
            (0..n).map(|i| if i == 0 { 1.0 + m } else { 1.0 }).collect()
        }
        ReweightVariant::Proportional => {
            let total: f64 = w.iter().sum();
            w.iter().map(|&wi| n as f64 * wi / total).collect()
        }
        ReweightVariant::SuffixSum => {
            let suffix: Vec<f64> = (0..n).map(|i| 1.0 + w[i..].iter().sum::<f64>()).collect();
            let total: f64 = suffix.iter().sum();
            suffix.iter().map(|&s| n as f64 * s / total).collect()
        }
    }
}

/// Weights printed alongside the variants for widths `[1.0, 0.75, 0.5, 0.25]`.
///
/// Variant 4's printed values do not follow its own formula (which gives
/// ≈ `[1.556, 1.111, 0.778, 0.556]`); [`loss_weights`] follows the formula.
pub const PUBLISHED_VARIANT4_WEIGHTS: [f64; 4] = [1.54, 1.08, 0.77, 0.62];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn four() -> WidthConfig {
        WidthConfig::new(vec![1.0, 0.75, 0.5, 0.25]).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn published_tables() {
        assert!(close(&loss_weights(&four(), ReweightVariant::SumOfSubWidths), &[2.5, 1.0, 1.0, 1.0], 1e-12));
        assert!(close(&loss_weights(&four(), ReweightVariant::MaxSubWidth), &[1.75, 1.0, 1.0, 1.0], 1e-12));
        assert!(close(&loss_weights(&four(), ReweightVariant::Proportional), &[1.6, 1.2, 0.8, 0.4], 1e-12));
    }

    #[test]
    fn variant4_follows_formula() {
        let w = loss_weights(&four(), ReweightVariant::SuffixSum);
        let expected = [4.0 * 3.5 / 9.0, 4.0 * 2.5 / 9.0, 4.0 * 1.75 / 9.0, 4.0 * 1.25 / 9.0];
        assert!(close(&w, &expected, 1e-12));
        assert!(!close(&w, &PUBLISHED_VARIANT4_WEIGHTS, 0.01));
    }

    #[test]
    fn single_width() {
        let c = WidthConfig::full_only();
        for v in ["none", "1", "2", "3", "4"] {
            let w = loss_weights(&c, v.parse().unwrap());
            assert_eq!(w.len(), 1);
            assert!(w[0] > 0.0);
        }
        assert_eq!(loss_weights(&c, ReweightVariant::Proportional), vec![1.0]);
    }

    #[test]
    fn parse_rejects_unknown() {
        assert!("5".parse::<ReweightVariant>().is_err());
        assert!("".parse::<ReweightVariant>().is_err());
    }

    fn width_config() -> impl Strategy<Value = WidthConfig> {
        proptest::collection::btree_set(1u32..1000, 0..6).prop_map(|s| {
            let mut w: Vec<f64> = s.into_iter().map(|v| v as f64 / 1000.0).collect();
            w.reverse();
            w.insert(0, 1.0);
            WidthConfig::new(w).unwrap()
        })
    }

    proptest! {
        #[test]
        fn weights_positive_and_full_model_leads(c in width_config()) {
            for v in [ReweightVariant::None, ReweightVariant::SumOfSubWidths, ReweightVariant::MaxSubWidth,
                      ReweightVariant::Proportional, ReweightVariant::SuffixSum] {
                let w = loss_weights(&c, v);
                prop_assert!(w.iter().all(|&x| x > 0.0));
            }
            let w = loss_weights(&c, ReweightVariant::SumOfSubWidths);
            for &x in &w[1..] {
                prop_assert!(w[0] > x);
            }
        }
    }
}
