use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernel_plan::{stage_plan, StagePlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Residual stages followed by bottlenecked multi-kernel blocks.
    Full,
    /// Multi-kernel branches at full stage width, summed, without 1x1 convolutions.
    NoBottleneck,
    /// Residual stages only.
    BackboneOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoBottleneck, Variant::BackboneOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoBottleneck => "no_bottleneck",
            Variant::BackboneOnly => "backbone_only",
        }
    }

    pub fn has_multiscale_blocks(self) -> bool {
        self != Variant::BackboneOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "variant",
                    format!("{s:?} (expected full, no_bottleneck or backbone_only)"),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StemSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub pool_pad: usize,
}

impl StemSpec {
    /// Kernel-7 stride-2 convolution, then 3/2/1 max pooling.
    pub fn standard(out_channels: usize) -> Self {
        StemSpec {
            out_channels,
            kernel: 7,
            stride: 2,
            pool_kernel: 3,
            pool_stride: 2,
            pool_pad: 1,
        }
    }

    pub fn conv_padding(&self) -> usize {
        (self.kernel - 1) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub blocks: usize,
    pub channels: usize,
    /// Stride of the first residual block.
    pub stride: usize,
    pub plan: Option<StagePlan>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub leads: usize,
    pub input_length: usize,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    pub num_classes: usize,
    pub variant: Variant,
    pub conv_bias: bool,
}

/// Flat description of a residual network from which a [`ModelSpec`] is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub leads: usize,
    pub input_length: usize,
    pub stem_channels: usize,
    pub blocks: Vec<usize>,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    /// Samples to cover at the first stage's input.
    pub initial_cover: usize,
    pub strict_coverage: bool,
    pub num_classes: usize,
    pub variant: Variant,
    pub conv_bias: bool,
}

impl BackboneConfig {
    /// 12 leads x 4096 samples, [3,4,6,3] blocks at [64,128,256,512] channels,
    /// six classes, first-stage cover of 64 samples.
    pub fn reference() -> Self {
        BackboneConfig {
            leads: 12,
            input_length: 4096,
            stem_channels: 64,
            blocks: vec![3, 4, 6, 3],
            channels: vec![64, 128, 256, 512],
            strides: vec![1, 2, 2, 2],
            initial_cover: 64,
            strict_coverage: false,
            num_classes: 6,
            variant: Variant::Full,
            conv_bias: false,
        }
    }

    /// The reduced configuration used for single-CPU training runs on
    /// 12 x 512 synthetic records.
    pub fn desk() -> Self {
        BackboneConfig {
            leads: 12,
            input_length: 512,
            stem_channels: 16,
            blocks: vec![1, 1, 1, 1],
            channels: vec![16, 16, 32, 32],
            strides: vec![1, 2, 2, 2],
            initial_cover: 64,
            strict_coverage: false,
            num_classes: 6,
            variant: Variant::Full,
            conv_bias: false,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Cumulative downsampling at each stage relative to the first stage.
    pub fn downsample_factors(&self) -> Vec<usize> {
        let mut d = 1;
        let mut out = Vec::with_capacity(self.strides.len());
        for (i, &s) in self.strides.iter().enumerate() {
            if i > 0 {
                d *= s.max(1);
            }
            out.push(d);
        }
        out
    }

    pub fn to_spec(&self) -> Result<ModelSpec> {
        let n = self.blocks.len();
        if self.channels.len() != n || self.strides.len() != n {
            return Err(Error::invalid(
                "model.stages",
                format!(
                    "blocks ({}), channels ({}) and strides ({}) must have equal length",
                    n,
                    self.channels.len(),
                    self.strides.len()
                ),
            ));
        }
        let plans = if self.variant.has_multiscale_blocks() && n > 0 {
            Some(stage_plan(
                self.initial_cover,
                &self.downsample_factors(),
                self.strict_coverage,
            )?)
        } else {
            None
        };
        let stages = (0..n)
            .map(|i| StageSpec {
                blocks: self.blocks[i],
                channels: self.channels[i],
                stride: self.strides[i],
                plan: plans.as_ref().map(|p| p.stages[i].clone()),
            })
            .collect();
        let spec = ModelSpec {
            leads: self.leads,
            input_length: self.input_length,
            stem: StemSpec::standard(self.stem_channels),
            stages,
            num_classes: self.num_classes,
            variant: self.variant,
            conv_bias: self.conv_bias,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.leads == 0 {
            return Err(Error::invalid("model.leads", "must be at least 1"));
        }
        if self.num_classes == 0 {
            return Err(Error::invalid("model.num_classes", "must be at least 1"));
        }
        if self.stem.out_channels == 0 || self.stem.kernel == 0 || self.stem.stride == 0 {
            return Err(Error::invalid(
                "model.stem",
                "channels, kernel and stride must be positive",
            ));
        }
        if self.stem.pool_kernel == 0 || self.stem.pool_stride == 0 {
            return Err(Error::invalid(
                "model.stem",
                "pool kernel and stride must be positive",
            ));
        }
        if self.stages.is_empty() {
            return Err(Error::invalid(
                "model.stages",
                "at least one stage required",
            ));
        }
        let mut prev = 0;
        for (i, st) in self.stages.iter().enumerate() {
            let key = format!("model.stage{}", i + 1);
            if st.blocks == 0 {
                return Err(Error::invalid(key, "needs at least one residual block"));
            }
            if st.stride == 0 {
                return Err(Error::invalid(key, "stride must be positive"));
            }
            if st.channels == 0 || st.channels < prev {
                return Err(Error::invalid(
                    key,
                    "channel widths must be positive and non-decreasing",
                ));
            }
            prev = st.channels;
            if self.variant.has_multiscale_blocks() {
                if st.plan.is_none() {
                    return Err(Error::invalid(key, "missing kernel plan"));
                }
                if self.variant == Variant::Full && st.channels % 2 != 0 {
                    return Err(Error::invalid(
                        key,
                        format!("odd channel count {}", st.channels),
                    ));
                }
            }
        }
        let p_ks: Vec<usize> = self
            .stages
            .iter()
            .filter_map(|s| s.plan.as_ref().map(StagePlan::p_k))
            .collect();
        if p_ks.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid(
                "model.kernel_plan",
                "p_k must not increase with depth",
            ));
        }
        Ok(())
    }

    pub fn classifier_inputs(&self) -> usize {
        self.stages
            .last()
            .map_or(self.stem.out_channels, |s| s.channels)
    }
}
