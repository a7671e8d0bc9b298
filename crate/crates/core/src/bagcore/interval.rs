use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// The six visual extent categories, ordered by lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExtentInterval {
    P0,
    P1_5,
    P6_25,
    P26_50,
    P51_75,
    P76_100,
}

impl ExtentInterval {
    pub const ALL: [ExtentInterval; 6] = [
        ExtentInterval::P0,
        ExtentInterval::P1_5,
        ExtentInterval::P6_25,
        ExtentInterval::P26_50,
        ExtentInterval::P51_75,
        ExtentInterval::P76_100,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Bounds in percent; `P0` is the single point 0.
    pub fn bounds_percent(self) -> (u32, u32) {
        match self {
            ExtentInterval::P0 => (0, 0),
            ExtentInterval::P1_5 => (1, 5),
            ExtentInterval::P6_25 => (6, 25),
            ExtentInterval::P26_50 => (26, 50),
            ExtentInterval::P51_75 => (51, 75),
            ExtentInterval::P76_100 => (76, 100),
        }
    }

    pub(crate) fn twice_midpoint(self) -> u64 {
        let (lo, hi) = self.bounds_percent();
        u64::from(lo + hi)
    }

    pub fn midpoint_percent(self) -> f64 {
        self.twice_midpoint() as f64 / 2.0
    }

    pub fn label(self) -> &'static str {
        match self {
            ExtentInterval::P0 => "0",
            ExtentInterval::P1_5 => "1-5",
            ExtentInterval::P6_25 => "6-25",
            ExtentInterval::P26_50 => "26-50",
            ExtentInterval::P51_75 => "51-75",
            ExtentInterval::P76_100 => "76-100",
        }
    }

    /// Maps a predicted extent to its category. Exactly 0 is `P0`; the
    /// remaining boundaries sit half a percent above each upper edge.
    pub fn from_extent(extent: f64) -> Result<Self> {
        crate::bagcore::check_proportion(extent, "extent")?;
        Ok(if extent == 0.0 {
            ExtentInterval::P0
        } else if extent <= 0.055 {
            ExtentInterval::P1_5
        } else if extent <= 0.255 {
            ExtentInterval::P6_25
        } else if extent <= 0.505 {
            ExtentInterval::P26_50
        } else if extent <= 0.755 {
            ExtentInterval::P51_75
        } else {
            ExtentInterval::P76_100
        })
    }
}

impl fmt::Display for ExtentInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ExtentInterval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_end_matches('%');
        Self::ALL
            .into_iter()
            .find(|i| i.label() == t)
            .ok_or_else(|| Error::data(format!("unknown extent interval `{s}`")))
    }
}

impl Serialize for ExtentInterval {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for ExtentInterval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_order() {
        for i in ExtentInterval::ALL {
            assert_eq!(i.label().parse::<ExtentInterval>().unwrap(), i);
        }
        assert!("7-9".parse::<ExtentInterval>().is_err());
        assert!(ExtentInterval::P0 < ExtentInterval::P76_100);
    }

    #[test]
    fn extent_mapping() {
        use ExtentInterval::*;
        assert_eq!(ExtentInterval::from_extent(0.0).unwrap(), P0);
        assert_eq!(ExtentInterval::from_extent(0.0925).unwrap(), P6_25);
        assert_eq!(ExtentInterval::from_extent(1.0).unwrap(), P76_100);
        assert_eq!(ExtentInterval::from_extent(0.01).unwrap(), P1_5);
        assert_eq!(ExtentInterval::from_extent(0.055).unwrap(), P1_5);
        assert_eq!(ExtentInterval::from_extent(0.06).unwrap(), P6_25);
        assert_eq!(ExtentInterval::from_extent(0.26).unwrap(), P26_50);
        assert_eq!(ExtentInterval::from_extent(0.51).unwrap(), P51_75);
        assert_eq!(ExtentInterval::from_extent(0.76).unwrap(), P76_100);
        assert!(ExtentInterval::from_extent(1.01).is_err());
        // every interval midpoint maps back to its own interval
        for i in ExtentInterval::ALL {
            assert_eq!(ExtentInterval::from_extent(i.midpoint_percent() / 100.0).unwrap(), i);
        }
    }
}
