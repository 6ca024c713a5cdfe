use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the modalities are mixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Modalities stacked as input channels of a single serial chain.
    V1,
    /// Per-modality streams with periodic summarization fed back to each
    /// stream.
    V2,
    /// Independent per-modality chains, merged only by the output unit.
    V3,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            "v3" => Ok(Variant::V3),
            _ => Err(Error::Usage(format!("unknown variant {s:?} (expected v1, v2 or v3)"))),
        }
    }
}

/// Parameters of one dilated residual unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilateResUnitConfig {
    /// Input channels.
    pub c1: usize,
    /// Output channels.
    pub c2: usize,
    /// Filter parameter; the bottleneck is `f / 2` wide.
    pub f: usize,
    pub d: usize,
}

impl DilateResUnitConfig {
    pub fn new(c1: usize, c2: usize, f: usize, d: usize) -> Self {
        DilateResUnitConfig { c1, c2, f, d }
    }

    pub fn validate(&self) -> Result<()> {
        if self.f < 2 || self.f % 2 != 0 {
            return Err(Error::Param(format!("filter count f = {} must be even and >= 2", self.f)));
        }
        if self.d == 0 {
            return Err(Error::Param("dilation must be >= 1".into()));
        }
        if self.c1 == 0 || self.c2 == 0 {
            return Err(Error::Param("unit channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn bottleneck(&self) -> usize {
        self.f / 2
    }

    pub fn has_shortcut_conv(&self) -> bool {
        self.c1 != self.c2
    }
}

/// Filter count and dilation of one network level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub filters: usize,
    pub dilation: usize,
}

/// Dilation schedule of the five levels.
pub const DILATIONS: [usize; 5] = [2, 1, 4, 1, 8];

/// Bin counts of the pyramid pooling branches.
pub const PYRAMID_BINS: [usize; 4] = [2, 4, 6, 12];

/// Full description of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub variant: Variant,
    pub levels: Vec<LevelConfig>,
    pub n_classes: usize,
    /// 2x2 max pooling after the initial convolution, paired with bilinear
    /// upscaling of the logits back to the input size.
    pub init_pool: bool,
    pub n_modalities: usize,
    /// Output channels of the initial convolution (per stream for v2/v3).
    pub init_channels: usize,
    pub pyramid_bins: Vec<usize>,
}

impl NetConfig {
    /// Standard layer widths: 72 filters for v1 and 24
    /// per stream for v2/v3, five levels dilated `2, 1, 4, 1, 8`.
    pub fn standard(variant: Variant, n_classes: usize) -> Self {
        let width = match variant {
            Variant::V1 => 72,
            Variant::V2 | Variant::V3 => 24,
        };
        Self::with_width(variant, n_classes, width)
    }

    /// Standard topology with every level (and the initial convolution) at
    /// `width` channels.
    pub fn with_width(variant: Variant, n_classes: usize, width: usize) -> Self {
        NetConfig {
            variant,
            levels: DILATIONS.iter().map(|&d| LevelConfig { filters: width, dilation: d }).collect(),
            n_classes,
            init_pool: true,
            n_modalities: 3,
            init_channels: width,
            pyramid_bins: PYRAMID_BINS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Build(msg));
        if self.levels.is_empty() {
            return fail("at least one level is required".into());
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.filters < 2 || l.filters % 2 != 0 {
                return fail(format!("level {} filter count {} must be even and >= 2", i + 1, l.filters));
            }
            if l.dilation == 0 {
                return fail(format!("level {} dilation must be >= 1", i + 1));
            }
        }
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.n_modalities == 0 {
            return fail("need at least one modality".into());
        }
        if self.init_channels == 0 {
            return fail("initial convolution needs at least one output channel".into());
        }
        if self.pyramid_bins.is_empty() || self.pyramid_bins.contains(&0) {
            return fail(format!("invalid pyramid bins {:?}", self.pyramid_bins));
        }
        Ok(())
    }

    /// Smallest spatial extent the output unit accepts after pooling.
    pub fn min_feature_extent(&self) -> usize {
        self.pyramid_bins.iter().copied().max().unwrap_or(1)
    }

    /// Smallest input extent accepted by the network.
    pub fn min_input_extent(&self) -> usize {
        let f = self.min_feature_extent();
        if self.init_pool {
            2 * f
        } else {
            f
        }
    }

    /// Channels handed to the output unit.
    pub fn aggregate_channels(&self) -> usize {
        let m = self.n_modalities;
        match self.variant {
            Variant::V1 => self.levels.iter().map(|l| l.filters).sum(),
            Variant::V2 => self
                .levels
                .iter()
                .enumerate()
                .map(|(i, l)| if i % 2 == 0 { l.filters } else { m * l.filters })
                .sum(),
            Variant::V3 => m * self.levels.iter().map(|l| l.filters).sum::<usize>(),
        }
    }
}
