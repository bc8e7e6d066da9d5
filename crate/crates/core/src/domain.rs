use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Image condition used for training or testing a detector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DomainVariant {
    Original,
    Grayscale,
    LowQuality,
    EnhancedCycleGan,
    EnhancedPix2Pix,
}

impl DomainVariant {
    pub const ALL: [DomainVariant; 5] = [
        Self::Original,
        Self::Grayscale,
        Self::LowQuality,
        Self::EnhancedCycleGan,
        Self::EnhancedPix2Pix,
    ];

    /// Config-file spelling.
    pub fn key(self) -> &'static str {
        match self {
            Self::Original => "original",
            Self::Grayscale => "grayscale",
            Self::LowQuality => "low_quality",
            Self::EnhancedCycleGan => "cyclegan",
            Self::EnhancedPix2Pix => "pix2pix",
        }
    }

    /// Results-table spelling.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::Original => "Original",
            Self::Grayscale => "Grayscale",
            Self::LowQuality => "Low Quality",
            Self::EnhancedCycleGan => "CycleGAN",
            Self::EnhancedPix2Pix => "Pix2Pix",
        }
    }

    pub fn needs_enhancer(self) -> bool {
        matches!(self, Self::EnhancedCycleGan | Self::EnhancedPix2Pix)
    }
}

impl fmt::Display for DomainVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for DomainVariant {
    type Err = Error;

    /// Accepts the config key or the table name, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Self::ALL
            .into_iter()
            .find(|v| v.key() == norm || v.display_name().to_ascii_lowercase().replace(' ', "_") == norm)
            .ok_or_else(|| Error::UnknownVariant(s.to_owned()))
    }
}

impl TryFrom<String> for DomainVariant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<DomainVariant> for String {
    fn from(v: DomainVariant) -> String {
        v.key().to_owned()
    }
}

/// One (training domain, testing domain) cell of the results matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Setting {
    pub train: DomainVariant,
    pub test: DomainVariant,
}

impl Setting {
    pub const fn new(train: DomainVariant, test: DomainVariant) -> Self {
        Self { train, test }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", self.train, self.test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_parse() {
        for v in DomainVariant::ALL {
            assert_eq!(v.key().parse::<DomainVariant>().unwrap(), v);
            assert_eq!(v.display_name().parse::<DomainVariant>().unwrap(), v);
        }
        assert!(matches!("sepia".parse::<DomainVariant>(), Err(Error::UnknownVariant(s)) if s == "sepia"));
        let s: Setting = serde_json::from_str(r#"{"train":"pix2pix","test":"low_quality"}"#).unwrap();
        assert_eq!(s.to_string(), "Pix2Pix / Low Quality");
    }
}
