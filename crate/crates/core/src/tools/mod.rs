//! Pixel-space geometry of the visual tools.
//!
//! Coordinates are real-valued pixels with the origin at the top-left corner
//! of the screenshot. Rasterization only happens inside [`crop_image`] and
//! [`zoom_image`], which round half-up.

mod image;

pub use self::image::{
    crop_image, decode_png, encode_png, read_png, read_png_dims, snap_region, write_png, zoom_image, Image,
    MAX_OUTPUT_PIXELS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("contract violation: {0}")]
    ContractViolation(&'static str),
    #[error("invalid tool spec: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate target box {0:?}: area must be positive")]
    DegenerateTarget(BBox),
    #[error("invalid zoom scale {0}")]
    InvalidScale(f64),
    #[error("crop region rounds to an empty image")]
    EmptyCrop,
    #[error("output image {width}x{height} exceeds the pixel limit")]
    ImageTooLarge { width: u64, height: u64 },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ToolError> = std::result::Result<T, E>;

/// A location in pixel space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned box given by its top-left `(x1, y1)` and bottom-right
/// `(x2, y2)` corners. Construction through [`BBox::new`] guarantees
/// `x1 <= x2`, `y1 <= y2` and finite coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(ToolError::InvalidInput(format!(
                "non-finite box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x1 > x2 || y1 > y2 {
            return Err(ToolError::InvalidInput(format!(
                "inverted box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// The full image rectangle `[0, width] x [0, height]`.
    pub fn full(dims: ImageDims) -> Self {
        Self {
            x1: 0.0,
            y1: 0.0,
            x2: dims.width as f64,
            y2: dims.height as f64,
        }
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> Point {
        Point::new((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn top_left(&self) -> Point {
        Point::new(self.x1, self.y1)
    }

    /// Inclusive membership: points on the border count as inside.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x1 && p.x <= self.x2 && p.y >= self.y1 && p.y <= self.y2
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x1 >= self.x1 && other.x2 <= self.x2 && other.y1 >= self.y1 && other.y2 <= self.y2
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    /// Clamp every coordinate into the image rectangle. Clamping is monotone,
    /// so the result stays ordered even when `self` lies outside the image.
    pub fn clamp_to(&self, dims: ImageDims) -> BBox {
        let (w, h) = (dims.width as f64, dims.height as f64);
        BBox {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        }
    }

    pub fn is_within(&self, dims: ImageDims) -> bool {
        BBox::full(dims).contains_box(self)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = ToolError;

    fn try_from([x1, y1, x2, y2]: [f64; 4]) -> Result<Self> {
        BBox::new(x1, y1, x2, y2)
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ToolError::InvalidInput(format!(
                "image dimensions {width}x{height} must be positive"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Width and height of a tool region, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Extent {
    pub w: f64,
    pub h: f64,
}

impl Extent {
    pub const fn new(w: f64, h: f64) -> Self {
        Self { w, h }
    }
}

impl From<[f64; 2]> for Extent {
    fn from([w, h]: [f64; 2]) -> Self {
        Self { w, h }
    }
}

impl From<Extent> for [f64; 2] {
    fn from(e: Extent) -> Self {
        [e.w, e.h]
    }
}

/// The stage-one perception decision. `NoTool` behaves exactly like a crop
/// of size `[0, 0]` for reward purposes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ToolSpec {
    NoTool,
    Crop { center: Point, size: Extent },
    Zoom { center: Point, size: Extent, scale: f64 },
}

impl ToolSpec {
    pub fn is_tool(&self) -> bool {
        !matches!(self, ToolSpec::NoTool)
    }

    pub fn center(&self) -> Option<Point> {
        match *self {
            ToolSpec::NoTool => None,
            ToolSpec::Crop { center, .. } | ToolSpec::Zoom { center, .. } => Some(center),
        }
    }

    /// Zoom factor applied after cropping; 1 for a plain crop.
    pub fn scale(&self) -> Option<f64> {
        match *self {
            ToolSpec::NoTool => None,
            ToolSpec::Crop { .. } => Some(1.0),
            ToolSpec::Zoom { scale, .. } => Some(scale),
        }
    }

    /// Checks the value-level invariants: finite parameters, non-negative
    /// size and a positive zoom scale.
    pub fn validate(&self) -> Result<()> {
        let (center, size) = match *self {
            ToolSpec::NoTool => return Ok(()),
            ToolSpec::Crop { center, size } => (center, size),
            ToolSpec::Zoom { center, size, scale } => {
                if !scale.is_finite() {
                    return Err(ToolError::InvalidSpec(format!("non-finite scale {scale}")));
                }
                if scale <= 0.0 {
                    return Err(ToolError::InvalidScale(scale));
                }
                (center, size)
            }
        };
        if !center.is_finite() || !size.w.is_finite() || !size.h.is_finite() {
            return Err(ToolError::InvalidSpec("non-finite center or size".into()));
        }
        if size.w < 0.0 || size.h < 0.0 {
            return Err(ToolError::InvalidSpec(format!(
                "negative size [{}, {}]",
                size.w, size.h
            )));
        }
        Ok(())
    }
}

/// Region covered by a crop or zoom call: a box of the requested size
/// centered on the requested point, intersected with the image rectangle.
pub fn crop_region(spec: &ToolSpec, dims: ImageDims) -> Result<BBox> {
    let (center, size) = match *spec {
        ToolSpec::NoTool => return Err(ToolError::ContractViolation("crop_region called without a tool")),
        ToolSpec::Crop { center, size } | ToolSpec::Zoom { center, size, .. } => (center, size),
    };
    spec.validate()?;
    let raw = BBox {
        x1: center.x - size.w / 2.0,
        y1: center.y - size.h / 2.0,
        x2: center.x + size.w / 2.0,
        y2: center.y + size.h / 2.0,
    };
    Ok(raw.clamp_to(dims))
}

/// Distance from `c` to the closest point of `b`; zero inside or on the box.
pub fn boundary_distance(c: Point, b: &BBox) -> Result<f64> {
    if !c.is_finite() {
        return Err(ToolError::InvalidInput(format!(
            "non-finite point ({}, {})",
            c.x, c.y
        )));
    }
    let dx = (b.x1 - c.x).max(c.x - b.x2).max(0.0);
    let dy = (b.y1 - c.y).max(c.y - b.y2).max(0.0);
    Ok(dx.hypot(dy))
}

/// `|crop ∩ gt| / |gt|`: the fraction of the target captured by the crop.
pub fn coverage_fraction(crop: &BBox, gt: &BBox) -> Result<f64> {
    let area = gt.area();
    if area <= 0.0 {
        return Err(ToolError::DegenerateTarget(*gt));
    }
    Ok(crop.intersection_area(gt) / area)
}

/// Intersection over union. Reported as a diagnostic only; the tool reward
/// uses [`coverage_fraction`].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Maps a point from crop-image coordinates back to the original image by
/// adding the crop offset.
pub fn map_from_crop(p: Point, crop: &BBox) -> Point {
    Point::new(p.x + crop.x1, p.y + crop.y1)
}

/// Maps a point from zoomed-crop coordinates back to the original image:
/// undo the zoom, then add the crop offset.
pub fn map_from_zoom(p: Point, crop: &BBox, z: f64) -> Result<Point> {
    if !(z.is_finite() && z > 0.0) {
        return Err(ToolError::InvalidScale(z));
    }
    Ok(Point::new(p.x / z + crop.x1, p.y / z + crop.y1))
}

/// Inverse of [`map_from_zoom`]: original-image point to zoomed-crop point.
pub fn map_to_tool(p: Point, crop: &BBox, z: f64) -> Point {
    Point::new((p.x - crop.x1) * z, (p.y - crop.y1) * z)
}
