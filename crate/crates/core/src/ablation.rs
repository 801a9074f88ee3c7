//! Named component-removal variants.

use std::fmt;
use std::str::FromStr;

use crate::config::TrainConfig;
use crate::error::{Error, Result};

/// Which model components stay enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationFlags {
    pub use_attention_discriminators: bool,
    pub use_attention_generator: bool,
    pub use_pixel_loss: bool,
    pub use_attention_loss: bool,
}

impl AblationFlags {
    pub const FULL: AblationFlags = AblationFlags {
        use_attention_discriminators: true,
        use_attention_generator: true,
        use_pixel_loss: true,
        use_attention_loss: true,
    };

    pub fn validate(&self) -> Result<()> {
        if self.use_attention_discriminators && !self.use_attention_generator {
            return Err(Error::contract(
                "attention discriminators need the attention generator; remove AD together with AG",
            ));
        }
        Ok(())
    }
}

/// The published ablation rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoAd,
    NoAdAg,
    NoAdPl,
    NoAdAl,
    NoAdPlAl,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoAd,
        Variant::NoAdAg,
        Variant::NoAdPl,
        Variant::NoAdAl,
        Variant::NoAdPlAl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAd => "-ad",
            Variant::NoAdAg => "-ad-ag",
            Variant::NoAdPl => "-ad-pl",
            Variant::NoAdAl => "-ad-al",
            Variant::NoAdPlAl => "-ad-pl-al",
        }
    }

    /// Row label as printed in the results table.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "Full",
            Variant::NoAd => "Full - AD",
            Variant::NoAdAg => "Full - AD - AG",
            Variant::NoAdPl => "Full - AD - PL",
            Variant::NoAdAl => "Full - AD - AL",
            Variant::NoAdPlAl => "Full - AD - PL - AL",
        }
    }

    pub fn flags(self) -> AblationFlags {
        let mut f = AblationFlags::FULL;
        if self != Variant::Full {
            f.use_attention_discriminators = false;
        }
        match self {
            Variant::NoAdAg => f.use_attention_generator = false,
            Variant::NoAdPl => f.use_pixel_loss = false,
            Variant::NoAdAl => f.use_attention_loss = false,
            Variant::NoAdPlAl => {
                f.use_pixel_loss = false;
                f.use_attention_loss = false;
            }
            _ => {}
        }
        f
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key = s.trim().to_ascii_lowercase();
        Variant::ALL.into_iter().find(|v| v.name() == key).ok_or_else(|| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            format!("unknown variant `{s}`; expected one of {}", names.join(", "))
        })
    }
}

/// Derives the config for a variant. Removing the attention generator also
/// removes the attention loss, which has no mask to act on.
pub fn apply_ablation(cfg: &TrainConfig, flags: AblationFlags) -> Result<TrainConfig> {
    flags.validate()?;
    let mut out = cfg.clone();
    if !flags.use_attention_discriminators {
        out.attention_discriminators = false;
    }
    if !flags.use_attention_generator {
        out.attention_generator = false;
        out.attention_discriminators = false;
        out.lambda_tv = 0.0;
    }
    if !flags.use_pixel_loss {
        out.lambda_pixel = 0.0;
    }
    if !flags.use_attention_loss {
        out.lambda_tv = 0.0;
    }
    out.validate()?;
    Ok(out)
}
