//! The standard 12-lead set and its canonical ordering.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the twelve standard ECG leads.
///
/// The discriminant is the canonical row index used everywhere a 12-lead
/// array is stored (records, windows, processed datasets).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LeadLabel {
    I = 0,
    II = 1,
    III = 2,
    #[serde(rename = "aVR")]
    AVR = 3,
    #[serde(rename = "aVL")]
    AVL = 4,
    #[serde(rename = "aVF")]
    AVF = 5,
    V1 = 6,
    V2 = 7,
    V3 = 8,
    V4 = 9,
    V5 = 10,
    V6 = 11,
}

pub const NUM_LEADS: usize = 12;

impl LeadLabel {
    pub const ALL: [LeadLabel; NUM_LEADS] = [
        LeadLabel::I,
        LeadLabel::II,
        LeadLabel::III,
        LeadLabel::AVR,
        LeadLabel::AVL,
        LeadLabel::AVF,
        LeadLabel::V1,
        LeadLabel::V2,
        LeadLabel::V3,
        LeadLabel::V4,
        LeadLabel::V5,
        LeadLabel::V6,
    ];

    pub const LIMB: [LeadLabel; 3] = [LeadLabel::I, LeadLabel::II, LeadLabel::III];

    pub const PRECORDIAL: [LeadLabel; 6] = [
        LeadLabel::V1,
        LeadLabel::V2,
        LeadLabel::V3,
        LeadLabel::V4,
        LeadLabel::V5,
        LeadLabel::V6,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LeadLabel::I => "I",
            LeadLabel::II => "II",
            LeadLabel::III => "III",
            LeadLabel::AVR => "aVR",
            LeadLabel::AVL => "aVL",
            LeadLabel::AVF => "aVF",
            LeadLabel::V1 => "V1",
            LeadLabel::V2 => "V2",
            LeadLabel::V3 => "V3",
            LeadLabel::V4 => "V4",
            LeadLabel::V5 => "V5",
            LeadLabel::V6 => "V6",
        }
    }

    pub fn is_precordial(self) -> bool {
        self.index() >= LeadLabel::V1.index()
    }

    pub fn is_limb(self) -> bool {
        self.index() <= LeadLabel::III.index()
    }

    /// Position of a precordial lead within V1..V6, if it is one.
    pub fn precordial_index(self) -> Option<usize> {
        self.is_precordial().then(|| self.index() - LeadLabel::V1.index())
    }
}

impl fmt::Display for LeadLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LeadLabel {
    type Err = Error;

    /// Case-insensitive; accepts the spellings used by PTB (`i`, `avr`, `v1`)
    /// and PTB-XL (`I`, `AVR`, `V1`) headers.
    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        LeadLabel::ALL
            .iter()
            .copied()
            .find(|l| l.name().to_ascii_uppercase() == upper)
            .ok_or_else(|| Error::UnknownLead(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_total() {
        for (i, lead) in LeadLabel::ALL.iter().enumerate() {
            assert_eq!(lead.index(), i);
            assert_eq!(LeadLabel::from_index(i), Some(*lead));
        }
        assert_eq!(LeadLabel::from_index(12), None);
        let mut sorted = LeadLabel::ALL;
        sorted.sort();
        assert_eq!(sorted, LeadLabel::ALL);
    }

    #[test]
    fn subsets() {
        let pre: Vec<_> = LeadLabel::ALL.iter().filter(|l| l.is_precordial()).copied().collect();
        assert_eq!(pre, LeadLabel::PRECORDIAL);
        let limb: Vec<_> = LeadLabel::ALL.iter().filter(|l| l.is_limb()).copied().collect();
        assert_eq!(limb, LeadLabel::LIMB);
        assert_eq!(LeadLabel::V4.precordial_index(), Some(3));
        assert_eq!(LeadLabel::AVF.precordial_index(), None);
    }

    #[test]
    fn parses_header_spellings() {
        assert_eq!("avr".parse::<LeadLabel>().unwrap(), LeadLabel::AVR);
        assert_eq!("AVL".parse::<LeadLabel>().unwrap(), LeadLabel::AVL);
        assert_eq!("ii".parse::<LeadLabel>().unwrap(), LeadLabel::II);
        assert_eq!(" V6 ".parse::<LeadLabel>().unwrap(), LeadLabel::V6);
        assert!("vx".parse::<LeadLabel>().is_err());
        for l in LeadLabel::ALL {
            assert_eq!(l.to_string().parse::<LeadLabel>().unwrap(), l);
        }
    }
}
