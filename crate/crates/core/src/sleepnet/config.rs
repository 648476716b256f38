use serde::{Deserialize, Serialize};

use crate::diff::Padding;
use crate::error::{Error, Result};

/// Convolution (same padding), ReLU, then max pooling with window = stride = `pool`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    /// 1 disables pooling.
    pub pool: usize,
}

impl ConvBlock {
    pub const fn new(filters: usize, kernel: usize, stride: usize, pool: usize) -> Self {
        Self {
            filters,
            kernel,
            stride,
            pool,
        }
    }

    /// Output length for an input of length `len`, if it is long enough.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        let conv = Padding::Same.output_len(len, self.kernel, self.stride)?;
        match self.pool {
            0 => None,
            1 => Some(conv),
            p if conv >= p => Some((conv - p) / p + 1),
            _ => None,
        }
    }
}

/// Layer stack of the dual-branch encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub input_len: usize,
    /// Short first-layer kernel, tuned to transients.
    pub small: Vec<ConvBlock>,
    /// Long first-layer kernel, tuned to rhythms.
    pub large: Vec<ConvBlock>,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 9,
            input_len: 9216,
            small: vec![ConvBlock::new(64, 51, 6, 8), ConvBlock::new(128, 8, 1, 4)],
            large: vec![ConvBlock::new(64, 410, 51, 4), ConvBlock::new(128, 6, 1, 2)],
            dropout: 0.5,
        }
    }
}

impl EncoderConfig {
    /// A narrow variant for single-core runs on synthetic data.
    pub fn desk() -> Self {
        Self {
            small: vec![ConvBlock::new(8, 32, 16, 4), ConvBlock::new(16, 4, 1, 4)],
            large: vec![ConvBlock::new(8, 128, 32, 4), ConvBlock::new(16, 4, 1, 2)],
            dropout: 0.2,
            ..Self::default()
        }
    }

    /// `(channels, length)` after each branch, small first.
    pub fn branch_shapes(&self) -> Result<[(usize, usize); 2]> {
        let run = |name: &str, blocks: &[ConvBlock]| -> Result<(usize, usize)> {
            if blocks.is_empty() {
                return Err(Error::Config(format!("{name} branch has no blocks")));
            }
            let mut len = self.input_len;
            for (i, b) in blocks.iter().enumerate() {
                if b.filters == 0 || b.kernel == 0 || b.stride == 0 {
                    return Err(Error::Config(format!("{name} block {i} has a zero size: {b:?}")));
                }
                len = b.output_len(len).ok_or_else(|| {
                    Error::Config(format!("{name} block {i} {b:?} does not fit an input of length {len}"))
                })?;
            }
            Ok((blocks[blocks.len() - 1].filters, len))
        };
        Ok([run("small", &self.small)?, run("large", &self.large)?])
    }

    /// Length of the feature vector `h`.
    pub fn feature_dim(&self) -> Result<usize> {
        let [(c1, l1), (c2, l2)] = self.branch_shapes()?;
        Ok(c1 * l1 + c2 * l2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.input_len == 0 {
            return Err(Error::Config("encoder input shape must be nonzero".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.feature_dim().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_feature_dim_by_shape_propagation() {
        // small: ceil(9216/6)=1536, pool 8 -> 192, conv -> 192, pool 4 -> 48
        // large: ceil(9216/51)=181, pool 4 -> 45, conv -> 45, pool 2 -> 22
        let c = EncoderConfig::default();
        assert_eq!(c.branch_shapes().unwrap(), [(128, 48), (128, 22)]);
        assert_eq!(c.feature_dim().unwrap(), 128 * 48 + 128 * 22);
    }

    #[test]
    fn desk_feature_dim() {
        // small: 576 -> 144 -> 144 -> 36; large: 288 -> 72 -> 72 -> 36
        let c = EncoderConfig::desk();
        assert_eq!(c.branch_shapes().unwrap(), [(16, 36), (16, 36)]);
        assert_eq!(c.feature_dim().unwrap(), 1152);
    }

    #[test]
    fn rejects_impossible_stacks() {
        let mut c = EncoderConfig::desk();
        c.input_len = 16;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = EncoderConfig::desk();
        c.large.clear();
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::desk();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }
}
