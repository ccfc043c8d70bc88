use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance used when looking a width up in a [`WidthConfig`].
const WIDTH_EPS: f64 = 1e-9;

/// Number of channels kept by a layer with `full` channels at `width`.
///
/// Rounds half up and never drops below one channel.
pub fn active_channels(width: f64, full: usize) -> Result<usize> {
    if !(width > 0.0 && width <= 1.0) {
        return Err(invalid!("width {width} outside (0, 1]"));
    }
    if full < 1 {
        return Err(invalid!("channel count must be at least 1"));
    }
    let n = (width * full as f64 + 0.5).floor() as usize;
    Ok(n.clamp(1, full))
}

/// Ordered set of widths a slimmable network can run at.
///
/// Widths are strictly descending and start at the full width 1.0, so index 0
/// is always the full model and the last index the smallest sub-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WidthConfig {
    widths: Vec<f64>,
}

impl WidthConfig {
    pub fn new(widths: Vec<f64>) -> Result<Self> {
        if widths.is_empty() {
            return Err(invalid!("at least one width is required"));
        }
        if (widths[0] - 1.0).abs() > WIDTH_EPS {
            return Err(invalid!("first width must be 1.0, got {}", widths[0]));
        }
        for &w in &widths {
            if !(w > 0.0 && w <= 1.0) {
                return Err(invalid!("width {w} outside (0, 1]"));
            }
        }
        for pair in widths.windows(2) {
            if pair[1] >= pair[0] {
                return Err(invalid!(
                    "widths must be unique and strictly descending: {:?}",
                    widths
                ));
            }
        }
        let mut widths = widths;
        widths[0] = 1.0;
        Ok(Self { widths })
    }

    pub fn full_only() -> Self {
        Self { widths: vec![1.0] }
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self, idx: usize) -> f64 {
        self.widths[idx]
    }

    pub fn smallest(&self) -> f64 {
        *self.widths.last().unwrap()
    }

    /// Position of `width` in the list.
    pub fn index_of(&self, width: f64) -> Result<usize> {
        self.widths
            .iter()
            .position(|&w| (w - width).abs() <= WIDTH_EPS)
            .ok_or(Error::UnknownWidth(width))
    }

    pub fn contains(&self, width: f64) -> bool {
        self.index_of(width).is_ok()
    }
}

impl TryFrom<Vec<f64>> for WidthConfig {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        WidthConfig::new(v)
    }
}

impl From<WidthConfig> for Vec<f64> {
    fn from(c: WidthConfig) -> Self {
        c.widths
    }
}

/// Canonical label for a width, e.g. `1.0`, `0.25`.
pub fn width_label(w: f64) -> String {
    let s = format!("{w}");
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn channel_rounding() {
        assert_eq!(active_channels(0.25, 64).unwrap(), 16);
        assert_eq!(active_channels(0.5, 7).unwrap(), 4);
        assert_eq!(active_channels(0.1, 4).unwrap(), 1);
        assert_eq!(active_channels(1.0, 13).unwrap(), 13);
    }

    #[test]
    fn channel_rounding_rejects_bad_input() {
        assert!(active_channels(0.0, 4).is_err());
        assert!(active_channels(1.5, 4).is_err());
        assert!(active_channels(f64::NAN, 4).is_err());
        assert!(active_channels(0.5, 0).is_err());
    }

    #[test]
    fn width_config_validation() {
        assert!(WidthConfig::new(vec![1.0, 0.5, 0.25]).is_ok());
        assert!(WidthConfig::new(vec![]).is_err());
        assert!(WidthConfig::new(vec![0.5]).is_err());
        assert!(WidthConfig::new(vec![1.0, 0.5, 0.5]).is_err());
        assert!(WidthConfig::new(vec![1.0, 0.25, 0.5]).is_err());
        assert!(WidthConfig::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn lookup() {
        let c = WidthConfig::new(vec![1.0, 0.75, 0.5]).unwrap();
        assert_eq!(c.index_of(0.75).unwrap(), 1);
        assert!(matches!(c.index_of(0.3), Err(Error::UnknownWidth(_))));
        assert_eq!(width_label(1.0), "1.0");
        assert_eq!(width_label(0.25), "0.25");
    }

    proptest! {
        #[test]
        fn active_channels_monotone(full in 1usize..512, a in 1u32..=1000, b in 1u32..=1000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let lo = active_channels(lo as f64 / 1000.0, full).unwrap();
            let hi = active_channels(hi as f64 / 1000.0, full).unwrap();
            prop_assert!(lo <= hi);
            prop_assert!(hi <= full);
            prop_assert_eq!(active_channels(1.0, full).unwrap(), full);
        }
    }
}
