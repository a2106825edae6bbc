use crate::error::{IcpeError, Result};

/// How a single support feature map is reduced to a vector when Intra-DAM
/// is off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageProto {
    Gap,
    GapGmp,
}

impl ImageProto {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageProto::Gap => "gap",
            ImageProto::GapGmp => "gap+gmp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gap" => Ok(ImageProto::Gap),
            "gap+gmp" => Ok(ImageProto::GapGmp),
            other => Err(IcpeError::Config(format!(
                "img_proto must be `gap` or `gap+gmp`, got `{other}`"
            ))),
        }
    }
}

/// Mechanism switches. All off is the plain mean-of-GAP prototype path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArmFlags {
    pub use_cic: bool,
    pub use_ccm: bool,
    pub use_intra: bool,
    pub use_inter: bool,
    pub img_proto: ImageProto,
}

impl ArmFlags {
    pub const BASELINE: ArmFlags = ArmFlags {
        use_cic: false,
        use_ccm: false,
        use_intra: false,
        use_inter: false,
        img_proto: ImageProto::Gap,
    };

    pub const FULL: ArmFlags = ArmFlags {
        use_cic: true,
        use_ccm: true,
        use_intra: true,
        use_inter: true,
        img_proto: ImageProto::Gap,
    };

    pub fn validate(&self) -> Result<()> {
        if self.use_ccm && !self.use_cic {
            return Err(IcpeError::Config("use_ccm requires use_cic".into()));
        }
        Ok(())
    }
}

impl Default for ArmFlags {
    fn default() -> Self {
        ArmFlags::FULL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Output channels of the three backbone stages; the last is `C`.
    pub widths: [usize; 3],
    /// Embedding width of the coupling projections.
    pub embed: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// Zero negative cosine values in the coupling condition.
    pub clamp_condition: bool,
    /// Divide Inter-DAM weights by their sum.
    pub normalize_inter: bool,
    pub flags: ArmFlags,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn channels(&self) -> usize {
        self.widths[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.embed == 0 {
            return Err(IcpeError::Config("widths and embed must be positive".into()));
        }
        if !(self.alpha >= 0.0) || !(self.lambda >= 0.0) {
            return Err(IcpeError::Config("alpha and lambda must be non-negative".into()));
        }
        if self.num_classes == 0 {
            return Err(IcpeError::Config("num_classes must be positive".into()));
        }
        self.flags.validate()
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: [16, 32, 32],
            embed: 32,
            alpha: 1.0,
            lambda: 1.0,
            clamp_condition: true,
            normalize_inter: false,
            flags: ArmFlags::FULL,
            num_classes: 8,
        }
    }
}
