use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Canonical MRI sequence identifiers. Declaration order is the canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    T1w,
    T1c,
    T2w,
    #[serde(rename = "FLAIR")]
    Flair,
    #[serde(rename = "DWI")]
    Dwi,
    #[serde(rename = "ADC")]
    Adc,
}

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::T1w,
        Modality::T1c,
        Modality::T2w,
        Modality::Flair,
        Modality::Dwi,
        Modality::Adc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::T1w => "T1w",
            Modality::T1c => "T1c",
            Modality::T2w => "T2w",
            Modality::Flair => "FLAIR",
            Modality::Dwi => "DWI",
            Modality::Adc => "ADC",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown modality `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canonical_names_only() {
        for m in Modality::ALL {
            assert_eq!(m.as_str().parse::<Modality>().unwrap(), m);
        }
        assert!("flair".parse::<Modality>().is_err());
        assert!("PD".parse::<Modality>().is_err());
    }

    #[test]
    fn serde_uses_canonical_names() {
        let s = serde_json::to_string(&[Modality::Flair, Modality::T1w]).unwrap();
        assert_eq!(s, r#"["FLAIR","T1w"]"#);
        assert!(serde_json::from_str::<Modality>(r#""SWI""#).is_err());
    }
}
