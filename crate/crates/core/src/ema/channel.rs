use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of EMA channels (6 articulators × 2 axes).
pub const N_CHANNELS: usize = 12;

/// Number of articulators tracked by the sensor set.
pub const N_ARTICULATORS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Articulator {
    /// Lower incisor.
    LI,
    /// Upper lip.
    UL,
    /// Lower lip.
    LL,
    /// Tongue tip.
    TT,
    /// Tongue blade.
    TB,
    /// Tongue dorsum.
    TD,
}

impl Articulator {
    pub const ALL: [Articulator; N_ARTICULATORS] = [
        Articulator::LI,
        Articulator::UL,
        Articulator::LL,
        Articulator::TT,
        Articulator::TB,
        Articulator::TD,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Articulator::LI => "LI",
            Articulator::UL => "UL",
            Articulator::LL => "LL",
            Articulator::TT => "TT",
            Articulator::TB => "TB",
            Articulator::TD => "TD",
        }
    }
}

/// Midsagittal axis: X is front-back, Y is up-down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// One (articulator, axis) trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArticulatorChannel {
    pub articulator: Articulator,
    pub axis: Axis,
}

impl ArticulatorChannel {
    /// LI.X, LI.Y, UL.X, ..., TD.Y.
    pub const CANONICAL: [ArticulatorChannel; N_CHANNELS] = {
        let mut out = [ArticulatorChannel {
            articulator: Articulator::LI,
            axis: Axis::X,
        }; N_CHANNELS];
        let mut i = 0;
        while i < N_ARTICULATORS {
            out[2 * i].articulator = Articulator::ALL[i];
            out[2 * i + 1].articulator = Articulator::ALL[i];
            out[2 * i + 1].axis = Axis::Y;
            i += 1;
        }
        out
    };

    pub const fn new(articulator: Articulator, axis: Axis) -> Self {
        Self { articulator, axis }
    }

    /// Position in the canonical channel order.
    pub fn canonical_index(self) -> usize {
        2 * self.articulator.index()
            + match self.axis {
                Axis::X => 0,
                Axis::Y => 1,
            }
    }

    pub fn from_canonical_index(i: usize) -> Option<Self> {
        Self::CANONICAL.get(i).copied()
    }
}

impl fmt::Display for ArticulatorChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = match self.axis {
            Axis::X => "X",
            Axis::Y => "Y",
        };
        write!(f, "{}.{}", self.articulator.as_str(), axis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown articulator channel `{0}`")]
pub struct ParseChannelError(pub String);

impl FromStr for ArticulatorChannel {
    type Err = ParseChannelError;

    /// Accepts `TT.X`, `TT_X`, `ttx` and similar spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let cleaned: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        if cleaned.len() != 3 {
            return Err(ParseChannelError(s.to_string()));
        }
        let (art, axis) = cleaned.split_at(2);
        let articulator = Articulator::ALL
            .into_iter()
            .find(|a| a.as_str() == art)
            .ok_or_else(|| ParseChannelError(s.to_string()))?;
        let axis = match axis {
            "X" => Axis::X,
            "Y" => Axis::Y,
            _ => return Err(ParseChannelError(s.to_string())),
        };
        Ok(Self::new(articulator, axis))
    }
}

impl Serialize for ArticulatorChannel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArticulatorChannel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Canonical channel names, e.g. for CSV headers.
pub fn canonical_names() -> Vec<String> {
    ArticulatorChannel::CANONICAL
        .iter()
        .map(|c| c.to_string())
        .collect()
}

/// True when `order` is a permutation of the 12 canonical channels.
pub fn is_permutation(order: &[ArticulatorChannel]) -> bool {
    if order.len() != N_CHANNELS {
        return false;
    }
    let mut seen = [false; N_CHANNELS];
    for c in order {
        let i = c.canonical_index();
        if seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_interleaved() {
        let names = canonical_names();
        assert_eq!(
            names,
            [
                "LI.X", "LI.Y", "UL.X", "UL.Y", "LL.X", "LL.Y", "TT.X", "TT.Y", "TB.X", "TB.Y",
                "TD.X", "TD.Y"
            ]
        );
        for (i, c) in ArticulatorChannel::CANONICAL.iter().enumerate() {
            assert_eq!(c.canonical_index(), i);
        }
        assert!(is_permutation(&ArticulatorChannel::CANONICAL));
    }

    #[test]
    fn parse_variants() {
        let tt_x = ArticulatorChannel::new(Articulator::TT, Axis::X);
        assert_eq!("TT.X".parse::<ArticulatorChannel>().unwrap(), tt_x);
        assert_eq!("tt_x".parse::<ArticulatorChannel>().unwrap(), tt_x);
        assert_eq!("TTX".parse::<ArticulatorChannel>().unwrap(), tt_x);
        assert!("TT.Z".parse::<ArticulatorChannel>().is_err());
        assert!("JAW.X".parse::<ArticulatorChannel>().is_err());
    }

    #[test]
    fn duplicate_is_not_permutation() {
        let mut order = ArticulatorChannel::CANONICAL;
        order[1] = order[0];
        assert!(!is_permutation(&order));
    }
}
