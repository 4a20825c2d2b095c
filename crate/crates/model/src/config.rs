//! Architecture hyperparameters and the two stock sizes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
}

/// Attention stripe extent for one encoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stripe {
    /// Stripes of this many rows (horizontal half) or columns (vertical
    /// half); must divide the stage's token grid.
    Fixed(usize),
    /// One window covering the whole grid; all heads in a single group.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Stage-1 width of the transformer stream; later stages double it.
    pub base_channels: usize,
    /// Transformer blocks per stage.
    pub depths: [usize; 4],
    /// Attention heads per stage. Even unless that stage is `Stripe::Full`.
    pub heads: [usize; 4],
    pub stripes: [Stripe; 4],
    /// Hidden width of each block's MLP, as a multiple of its channels.
    pub mlp_ratio: usize,
    /// Convolutional stream widths at strides 2, 4, 8, 16.
    pub local_channels: [usize; 4],
    /// Channel width every fusion level aligns both streams to.
    pub fuse_channels: usize,
    /// Width of the aggregated feature the decoupling head works on.
    pub trunk_channels: usize,
    /// Squeeze ratio of the channel-attention bottleneck.
    pub se_reduction: usize,
    /// Channel attention on the aligned transformer feature.
    pub gf_filter: bool,
    /// Spatial attention on the aligned convolutional feature.
    pub lf_filter: bool,
    /// Correlation-weighted fusion instead of plain concatenation.
    pub corr_fuse: bool,
    /// Body/edge decoupling head; off routes the trunk straight to the
    /// final classifier.
    pub decm: bool,
}

impl ModelConfig {
    /// Desk-scale size: fast enough to train and gradient-check on a CPU.
    pub fn toy() -> Self {
        Self {
            in_channels: 3,
            base_channels: 16,
            depths: [1, 1, 2, 1],
            heads: [2, 2, 4, 4],
            stripes: [Stripe::Fixed(1), Stripe::Fixed(2), Stripe::Fixed(2), Stripe::Full],
            mlp_ratio: 2,
            local_channels: [8, 16, 32, 64],
            fuse_channels: 16,
            trunk_channels: 16,
            se_reduction: 4,
            gf_filter: true,
            lf_filter: true,
            corr_fuse: true,
            decm: true,
        }
    }

    /// Publication-scale size. Same code paths, much more compute.
    pub fn full() -> Self {
        Self {
            in_channels: 3,
            base_channels: 64,
            depths: [2, 2, 6, 2],
            heads: [4, 8, 16, 32],
            stripes: [Stripe::Fixed(1), Stripe::Fixed(2), Stripe::Fixed(4), Stripe::Full],
            mlp_ratio: 4,
            local_channels: [64, 128, 256, 512],
            fuse_channels: 64,
            trunk_channels: 64,
            se_reduction: 16,
            gf_filter: true,
            lf_filter: true,
            corr_fuse: true,
            decm: true,
        }
    }

    /// Channel width of transformer stage `i` (0-based).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Input sizes must be multiples of this (the deepest stride).
    pub const INPUT_MULTIPLE: usize = 32;

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError::Invalid(m));
        if self.in_channels == 0 || self.base_channels == 0 {
            return err("channel counts must be positive".into());
        }
        if self.mlp_ratio == 0 {
            return err("mlp_ratio must be positive".into());
        }
        for i in 0..4 {
            let c = self.stage_channels(i);
            let h = self.heads[i];
            if h == 0 || c % h != 0 {
                return err(format!(
                    "stage {} has {} channels, not divisible into {} heads",
                    i + 1,
                    c,
                    h
                ));
            }
            match self.stripes[i] {
                Stripe::Fixed(0) => {
                    return err(format!("stage {} stripe width must be positive", i + 1))
                }
                Stripe::Fixed(_) if h % 2 != 0 => {
                    return err(format!(
                        "stage {} needs an even head count to split across stripe directions",
                        i + 1
                    ));
                }
                _ => {}
            }
            if self.depths[i] == 0 {
                return err(format!("stage {} must have at least one block", i + 1));
            }
            if self.local_channels[i] == 0 {
                return err(format!("local stage {} width must be positive", i + 1));
            }
        }
        if self.fuse_channels == 0 || self.trunk_channels == 0 {
            return err("fusion widths must be positive".into());
        }
        if self.se_reduction == 0 || self.fuse_channels % self.se_reduction != 0 {
            return err(format!(
                "se_reduction {} must divide fuse_channels {}",
                self.se_reduction, self.fuse_channels
            ));
        }
        Ok(())
    }

    /// Check an input size against stage strides and stripe widths.
    pub fn validate_input(&self, h: usize, w: usize) -> Result<(), ConfigError> {
        if h == 0 || w == 0 || h % Self::INPUT_MULTIPLE != 0 || w % Self::INPUT_MULTIPLE != 0 {
            return Err(ConfigError::Invalid(format!(
                "input {}x{} must be a positive multiple of {}",
                h,
                w,
                Self::INPUT_MULTIPLE
            )));
        }
        for i in 0..4 {
            let (gh, gw) = (h >> (i + 2), w >> (i + 2));
            if let Stripe::Fixed(s) = self.stripes[i] {
                if gh % s != 0 || gw % s != 0 {
                    return Err(ConfigError::Invalid(format!(
                        "stage {} grid {}x{} is not divisible by stripe width {}",
                        i + 1,
                        gh,
                        gw,
                        s
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical one-line rendering, the basis for checkpoint compatibility
    /// hashes. Field order is fixed; never reorder without bumping the
    /// checkpoint format version.
    pub fn canonical_string(&self) -> String {
        let stripe = |s: Stripe| match s {
            Stripe::Fixed(n) => n.to_string(),
            Stripe::Full => "full".to_string(),
        };
        format!(
            "in={} base={} depths={:?} heads={:?} stripes=[{},{},{},{}] mlp={} local={:?} fuse={} trunk={} se={} gf={} lf={} corr={} decm={}",
            self.in_channels,
            self.base_channels,
            self.depths,
            self.heads,
            stripe(self.stripes[0]),
            stripe(self.stripes[1]),
            stripe(self.stripes[2]),
            stripe(self.stripes[3]),
            self.mlp_ratio,
            self.local_channels,
            self.fuse_channels,
            self.trunk_channels,
            self.se_reduction,
            self.gf_filter,
            self.lf_filter,
            self.corr_fuse,
            self.decm,
        )
    }
}
