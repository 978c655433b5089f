use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::tools::{read_png_dims, BBox, ImageDims, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Mobile,
    Desktop,
    Web,
}

impl Platform {
    pub const ALL: [Platform; 3] = [Platform::Mobile, Platform::Desktop, Platform::Web];

    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Mobile => "mobile",
            Platform::Desktop => "desktop",
            Platform::Web => "web",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UiType {
    Text,
    Icon,
}

impl UiType {
    pub const ALL: [UiType; 2] = [UiType::Text, UiType::Icon];

    pub fn as_str(self) -> &'static str {
        match self {
            UiType::Text => "text",
            UiType::Icon => "icon",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for UiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifies a record by content: the image path as written in the
/// dataset and the instruction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub image: String,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetRecord {
    /// Resolved path of the screenshot.
    pub image: PathBuf,
    /// Path as written in the dataset file.
    pub image_ref: String,
    pub dims: ImageDims,
    pub instruction: String,
    pub gt: BBox,
    pub platform: Platform,
    pub ui_type: UiType,
    pub group: String,
}

impl DatasetRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            image: self.image_ref.clone(),
            instruction: self.instruction.clone(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    image: String,
    instruction: String,
    bbox: [f64; 4],
    platform: Platform,
    ui_type: UiType,
    group: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub rejected: Vec<LineError>,
}

fn resolve(base: &Path, image: &str) -> PathBuf {
    let p = Path::new(image);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parse_line(text: &str, base: &Path) -> Result<DatasetRecord, String> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| format!("bad record: {e}"))?;
    let [x1, y1, x2, y2] = raw.bbox;
    let gt = BBox::new(x1, y1, x2, y2).map_err(|e| format!("invalid bbox: {e}"))?;
    if gt.area() <= 0.0 {
        return Err(format!("invalid bbox: zero area {:?}", raw.bbox));
    }
    let image = resolve(base, &raw.image);
    let dims = read_png_dims(&image).map_err(|e| format!("image {}: {e}", image.display()))?;
    if !gt.is_within(dims) {
        return Err(format!(
            "bbox {:?} exceeds image bounds {}x{}",
            raw.bbox, dims.width, dims.height
        ));
    }
    Ok(DatasetRecord {
        image,
        image_ref: raw.image,
        dims,
        instruction: raw.instruction,
        gt,
        platform: raw.platform,
        ui_type: raw.ui_type,
        group: raw.group,
    })
}

/// Reads a JSONL dataset. Relative image paths are resolved against the
/// dataset's directory. Bad lines are collected, not fatal, unless no line
/// is valid.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, base) {
            Ok(r) => records.push(r),
            Err(reason) => rejected.push(LineError { line: i + 1, reason }),
        }
    }
    if records.is_empty() {
        return Err(EvalError::NoValidRecords {
            path: path.to_path_buf(),
            rejected: rejected.len(),
        });
    }
    Ok(Dataset { records, rejected })
}

/// Per-record reference clicks for the static-crop baseline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferencePoints(HashMap<RecordKey, Point>);

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReference {
    image: String,
    instruction: String,
    point: Point,
}

impl ReferencePoints {
    pub fn insert(&mut self, key: RecordKey, point: Point) {
        self.0.insert(key, point);
    }

    pub fn get(&self, key: &RecordKey) -> Option<Point> {
        self.0.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(RecordKey, Point)> for ReferencePoints {
    fn from_iter<I: IntoIterator<Item = (RecordKey, Point)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Reads `{"image": ..., "instruction": ..., "point": [x, y]}` lines.
pub fn load_reference_points(path: impl AsRef<Path>) -> Result<ReferencePoints, EvalError> {
    let path = path.as_ref();
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io)?;
    let mut refs = ReferencePoints::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: RawReference = serde_json::from_str(line).map_err(|e| {
            io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: {e}", i + 1),
            ))
        })?;
        refs.insert(
            RecordKey {
                image: r.image,
                instruction: r.instruction,
            },
            r.point,
        );
    }
    Ok(refs)
}
