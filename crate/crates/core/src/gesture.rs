//! The nine-gesture touch vocabulary the classifier is trained to recognise.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Number of gesture classes.
pub const GESTURE_COUNT: usize = 9;

/// A touch-screen gesture class.
///
/// Serialized as its numeric id so logs and bridge frames stay compact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum GestureClass {
    Nothing = 0,
    FastTapping = 1,
    SlowTapping = 2,
    FastSwiping = 3,
    AcceleratingSwiping = 4,
    VerySlowSwirling = 5,
    BigSwirling = 6,
    SmallSwirling = 7,
    Combination = 8,
}

impl GestureClass {
    pub const ALL: [GestureClass; GESTURE_COUNT] = [
        GestureClass::Nothing,
        GestureClass::FastTapping,
        GestureClass::SlowTapping,
        GestureClass::FastSwiping,
        GestureClass::AcceleratingSwiping,
        GestureClass::VerySlowSwirling,
        GestureClass::BigSwirling,
        GestureClass::SmallSwirling,
        GestureClass::Combination,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            GestureClass::Nothing => "N",
            GestureClass::FastTapping => "FT",
            GestureClass::SlowTapping => "ST",
            GestureClass::FastSwiping => "FS",
            GestureClass::AcceleratingSwiping => "FSA",
            GestureClass::VerySlowSwirling => "VSS",
            GestureClass::BigSwirling => "BS",
            GestureClass::SmallSwirling => "SS",
            GestureClass::Combination => "C",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            GestureClass::Nothing => "Nothing",
            GestureClass::FastTapping => "Fast Tapping",
            GestureClass::SlowTapping => "Slow Tapping",
            GestureClass::FastSwiping => "Fast Swiping",
            GestureClass::AcceleratingSwiping => "Accelerating Fast Swiping",
            GestureClass::VerySlowSwirling => "Very Slow Swirling",
            GestureClass::BigSwirling => "Big Swirling",
            GestureClass::SmallSwirling => "Small Swirling",
            GestureClass::Combination => "Combination of Swirls and Taps",
        }
    }

    /// Coarse family: 0 nothing, 1 taps, 2 swipes, 3 swirls, 4 combination.
    /// Carried for display only.
    pub fn group(self) -> u8 {
        match self {
            GestureClass::Nothing => 0,
            GestureClass::FastTapping | GestureClass::SlowTapping => 1,
            GestureClass::FastSwiping | GestureClass::AcceleratingSwiping => 2,
            GestureClass::VerySlowSwirling
            | GestureClass::BigSwirling
            | GestureClass::SmallSwirling => 3,
            GestureClass::Combination => 4,
        }
    }
}

impl From<GestureClass> for u8 {
    fn from(g: GestureClass) -> u8 {
        g.id()
    }
}

impl TryFrom<u8> for GestureClass {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self, Error> {
        GestureClass::from_id(id).ok_or(Error::UnknownGesture(id.to_string()))
    }
}

impl fmt::Display for GestureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for GestureClass {
    type Err = Error;

    /// Accepts either the short code (`FT`) or the numeric id (`1`).
    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        if let Ok(id) = s.parse::<u8>() {
            return GestureClass::try_from(id);
        }
        GestureClass::ALL
            .iter()
            .copied()
            .find(|g| g.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownGesture(s.to_string()))
    }
}
