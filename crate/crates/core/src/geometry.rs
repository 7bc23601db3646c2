//! Pixel-space primitives shared by the parser, the rewards and the toy
//! environment: axis-aligned boxes, frame dimensions and frame quadrants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Frame size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    /// EndoVis frames are 1280x1024.
    pub const ENDOVIS: ImageDims = ImageDims {
        width: 1280,
        height: 1024,
    };

    pub fn new(width: u32, height: u32) -> Option<Self> {
        (width > 0 && height > 0).then_some(Self { width, height })
    }
}

impl Default for ImageDims {
    fn default() -> Self {
        Self::ENDOVIS
    }
}

/// Axis-aligned box with integer pixel corners, origin top-left.
///
/// The box covers the half-open region `[x1, x2) x [y1, y2)`, so its width is
/// exactly `x2 - x1`. A valid box has `x1 < x2` and `y1 < y2`; construction
/// through [`BoundingBox::new`] enforces that, while the raw fields stay public
/// so callers can represent (and reject) degenerate input.
///
/// Serialized as the JSON array `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BoundingBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Option<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.is_valid().then_some(b)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn width(&self) -> u64 {
        u64::from(self.x2.saturating_sub(self.x1))
    }

    pub fn height(&self) -> u64 {
        u64::from(self.y2.saturating_sub(self.y1))
    }

    pub fn area(&self) -> u64 {
        self.width() * self.height()
    }

    /// Box center `((x1 + x2) / 2, (y1 + y2) / 2)`. Exact in `f64` for any
    /// `u32` corners.
    pub fn center(&self) -> (f64, f64) {
        (
            (f64::from(self.x1) + f64::from(self.x2)) / 2.0,
            (f64::from(self.y1) + f64::from(self.y2)) / 2.0,
        )
    }

    pub fn within(&self, dims: ImageDims) -> bool {
        self.x2 <= dims.width && self.y2 <= dims.height
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x1, self.y1, self.x2, self.y2)
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[u32; 4]>::deserialize(deserializer)?;
        Ok(Self { x1, y1, x2, y2 })
    }
}

/// One of the four frame quadrants split at `W/2` and `H/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrant {
    #[serde(rename = "LT")]
    LeftTop,
    #[serde(rename = "RT")]
    RightTop,
    #[serde(rename = "LB")]
    LeftBottom,
    #[serde(rename = "RB")]
    RightBottom,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::LeftTop,
        Quadrant::RightTop,
        Quadrant::LeftBottom,
        Quadrant::RightBottom,
    ];

    pub fn index(self) -> usize {
        match self {
            Quadrant::LeftTop => 0,
            Quadrant::RightTop => 1,
            Quadrant::LeftBottom => 2,
            Quadrant::RightBottom => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            Quadrant::LeftTop => "LT",
            Quadrant::RightTop => "RT",
            Quadrant::LeftBottom => "LB",
            Quadrant::RightBottom => "RB",
        }
    }

    /// The answer-vocabulary spelling, e.g. `left-top`.
    pub fn term(self) -> &'static str {
        match self {
            Quadrant::LeftTop => "left-top",
            Quadrant::RightTop => "right-top",
            Quadrant::LeftBottom => "left-bottom",
            Quadrant::RightBottom => "right-bottom",
        }
    }

    pub fn is_right(self) -> bool {
        matches!(self, Quadrant::RightTop | Quadrant::RightBottom)
    }

    pub fn is_bottom(self) -> bool {
        matches!(self, Quadrant::LeftBottom | Quadrant::RightBottom)
    }

    /// Pixel origin and size of this quadrant's cell in a frame.
    pub fn cell(self, dims: ImageDims) -> BoundingBox {
        let half_w = dims.width / 2;
        let half_h = dims.height / 2;
        let (x1, x2) = if self.is_right() {
            (half_w, dims.width)
        } else {
            (0, half_w)
        };
        let (y1, y2) = if self.is_bottom() {
            (half_h, dims.height)
        } else {
            (0, half_h)
        };
        BoundingBox { x1, y1, x2, y2 }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Quadrant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LT" => Ok(Quadrant::LeftTop),
            "RT" => Ok(Quadrant::RightTop),
            "LB" => Ok(Quadrant::LeftBottom),
            "RB" => Ok(Quadrant::RightBottom),
            other => Err(format!("unknown quadrant code `{other}`")),
        }
    }
}
