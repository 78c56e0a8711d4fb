use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric-preservation augmentation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    pub enabled: bool,
    /// Chance that a batch is transformed.
    pub probability: f64,
    pub max_rotation_deg: f64,
    /// Translation bound as a fraction of the width.
    pub max_translate_w: f64,
    /// Translation bound as a fraction of the height.
    pub max_translate_h: f64,
    pub scale: [f64; 2],
    /// Feed the transformed image to the encoder too, not only the loss targets.
    pub transform_encoder_input: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            probability: 0.5,
            max_rotation_deg: 5.0,
            max_translate_w: 0.1,
            max_translate_h: 0.05,
            scale: [0.9, 1.1],
            transform_encoder_input: true,
        }
    }
}

/// Architecture and loss settings of the autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqVaeConfig {
    /// Channels after the stem convolution.
    pub stem_channels: usize,
    /// Output channels of each downsampling stage.
    pub channels: Vec<usize>,
    /// `[vertical, horizontal]` stride of each stage (1 or even).
    pub strides: Vec<[usize; 2]>,
    /// Residual blocks at the bottleneck, in the encoder and mirrored in the decoder.
    pub res_blocks: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
    /// Separate raydrop head trained with the BCE term. Off gives the baseline
    /// that regresses the noisy composite and thresholds it.
    pub raydrop_head: bool,
    /// Final upsampling stages each head owns; 0 shares the whole decoder and
    /// emits both heads from one convolution.
    pub head_stages: usize,
    pub lambda: f64,
    /// Weight of the encoder-side commitment term.
    pub beta: f64,
    /// Range threshold of the baseline mask (normalized units).
    pub baseline_threshold: f64,
    pub gp: GpConfig,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl VqVaeConfig {
    /// 16 x 64 input to a 4 x 8 token grid.
    pub fn desk() -> Self {
        Self {
            stem_channels: 16,
            channels: vec![32, 64, 64],
            strides: vec![[2, 2], [2, 2], [1, 2]],
            res_blocks: 1,
            codebook_size: 512,
            code_dim: 64,
            raydrop_head: true,
            head_stages: 2,
            lambda: 0.1,
            beta: 1.0,
            baseline_threshold: 0.05,
            gp: GpConfig::default(),
        }
    }

    /// Roughly 35M parameters at 64 x 1024 with a stride of (8, 16).
    pub fn full_scale() -> Self {
        Self {
            stem_channels: 128,
            channels: vec![256, 512, 512, 512],
            strides: vec![[2, 2], [2, 2], [2, 2], [1, 2]],
            res_blocks: 4,
            codebook_size: 1024,
            code_dim: 256,
            ..Self::desk()
        }
    }

    pub fn total_stride(&self) -> (usize, usize) {
        self.strides.iter().fold((1, 1), |(a, b), s| (a * s[0], b * s[1]))
    }

    /// Token grid size for an `height x width` input.
    pub fn latent_shape(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (sv, sh) = self.total_stride();
        if height % sv != 0 || width % sh != 0 {
            return Err(Error::Config(format!(
                "input {height}x{width} is not divisible by the total stride {sv}x{sh}"
            )));
        }
        Ok((height / sv, width / sh))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.codebook_size < 2 || self.codebook_size > u16::MAX as usize {
            return bad(format!("codebook_size must be in [2, 65535], got {}", self.codebook_size));
        }
        if self.code_dim == 0 || self.stem_channels == 0 || self.channels.contains(&0) {
            return bad("code_dim and channel widths must be positive".into());
        }
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return bad(format!(
                "channels ({}) and strides ({}) must list the same non-zero number of stages",
                self.channels.len(),
                self.strides.len()
            ));
        }
        if let Some(s) = self.strides.iter().flatten().find(|&&s| s == 0 || (s != 1 && s % 2 != 0)) {
            return bad(format!("strides must be 1 or even, got {s}"));
        }
        if self.head_stages > self.strides.len() {
            return bad(format!(
                "head_stages ({}) exceeds the number of stages ({})",
                self.head_stages,
                self.strides.len()
            ));
        }
        if !(self.lambda >= 0.0 && self.beta >= 0.0) {
            return bad("lambda and beta must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.baseline_threshold) {
            return bad("baseline_threshold must lie in [0, 1)".into());
        }
        let gp = &self.gp;
        if !(0.0..=1.0).contains(&gp.probability) {
            return bad("gp.probability must lie in [0, 1]".into());
        }
        if !(gp.max_rotation_deg >= 0.0 && gp.max_translate_w >= 0.0 && gp.max_translate_h >= 0.0) {
            return bad("gp ranges must be non-negative".into());
        }
        if !(gp.scale[0] > 0.0 && gp.scale[0] <= gp.scale[1]) {
            return bad("gp.scale must be a positive [min, max] pair".into());
        }
        Ok(())
    }
}
