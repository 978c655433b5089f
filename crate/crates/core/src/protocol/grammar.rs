//! The action grammar.
//!
//! ```text
//! output   := ws [ "<think>" text "</think>" ] ws action ws
//! action   := "<tool_call>" tool-json "</tool_call>"      (stage 1 only)
//!           | "<answer>" answer-json "</answer>"
//! tool     := {"name":"crop","center":[x,y],"size":[w,h]}
//!           | {"name":"zoom","center":[x,y],"size":[w,h],"scale":z}
//! answer   := {"point":[x,y]}
//! ```
//!
//! Numbers are JSON numbers and must be finite; sizes are non-negative and
//! the zoom scale positive. Keys may appear in any order but no others are
//! accepted.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::Stage;
use crate::tools::{Extent, Point, ToolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatErrorKind {
    UnclosedTag,
    BadPayload,
    WrongStageAction,
    NonFiniteNumber,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind:?}: {detail}")]
pub struct FormatError {
    pub kind: FormatErrorKind,
    pub detail: String,
}

impl FormatError {
    pub fn new(kind: FormatErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    ToolCall { spec: ToolSpec },
    Answer { point: Point },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedAction {
    pub think: Option<String>,
    pub action: Action,
}

const THINK: (&str, &str) = ("<think>", "</think>");
const TOOL: (&str, &str) = ("<tool_call>", "</tool_call>");
const ANSWER: (&str, &str) = ("<answer>", "</answer>");

fn bad(detail: impl Into<String>) -> FormatError {
    FormatError::new(FormatErrorKind::BadPayload, detail)
}

/// Parses one stage output. Total over arbitrary input.
pub fn parse_action(raw: &str, stage: Stage) -> Result<ParsedAction, FormatError> {
    let mut rest = raw.trim_start();
    let mut think = None;
    if let Some(after) = rest.strip_prefix(THINK.0) {
        let end = after
            .find(THINK.1)
            .ok_or_else(|| FormatError::new(FormatErrorKind::UnclosedTag, "missing </think>"))?;
        think = Some(after[..end].to_string());
        rest = after[end + THINK.1.len()..].trim_start();
    }

    let (tags, is_tool) = if rest.starts_with(TOOL.0) {
        (TOOL, true)
    } else if rest.starts_with(ANSWER.0) {
        (ANSWER, false)
    } else if rest.is_empty() {
        return Err(bad("no action"));
    } else {
        return Err(bad("expected <answer> or <tool_call>"));
    };
    if is_tool && stage == Stage::Two {
        return Err(FormatError::new(
            FormatErrorKind::WrongStageAction,
            "stage 2 must answer",
        ));
    }

    let body = &rest[tags.0.len()..];
    let end = body
        .find(tags.1)
        .ok_or_else(|| FormatError::new(FormatErrorKind::UnclosedTag, format!("missing {}", tags.1)))?;
    let payload = &body[..end];
    if !body[end + tags.1.len()..].trim().is_empty() {
        return Err(bad("trailing text after the action"));
    }

    let value = parse_json(payload)?;
    let obj = value
        .as_object()
        .ok_or_else(|| bad("payload must be a JSON object"))?;
    let action = if is_tool {
        Action::ToolCall {
            spec: tool_spec(obj)?,
        }
    } else {
        expect_keys(obj, &["point"])?;
        Action::Answer {
            point: pair(obj, "point").map(Point::from)?,
        }
    };
    Ok(ParsedAction { think, action })
}

fn parse_json(payload: &str) -> Result<Value, FormatError> {
    serde_json::from_str(payload).map_err(|e| {
        if e.to_string().contains("number out of range") || has_non_finite_literal(payload) {
            FormatError::new(FormatErrorKind::NonFiniteNumber, e.to_string())
        } else {
            bad(format!("invalid JSON: {e}"))
        }
    })
}

/// True if a bare `NaN`/`Infinity`/`inf` token appears outside string literals.
fn has_non_finite_literal(payload: &str) -> bool {
    let mut in_string = false;
    let mut escaped = false;
    let mut word = String::new();
    let mut found = false;
    let mut flush = |word: &mut String| {
        let w = word.to_ascii_lowercase();
        if matches!(w.as_str(), "nan" | "infinity" | "inf") {
            found = true;
        }
        word.clear();
    };
    for ch in payload.chars() {
        if in_string {
            match (escaped, ch) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        if ch.is_ascii_alphabetic() {
            word.push(ch);
        } else {
            flush(&mut word);
            if ch == '"' {
                in_string = true;
            }
        }
    }
    flush(&mut word);
    found
}

fn expect_keys(obj: &Map<String, Value>, allowed: &[&str]) -> Result<(), FormatError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(bad(format!("unexpected key `{k}`"))),
        None => Ok(()),
    }
}

fn number(v: &Value, what: &str) -> Result<f64, FormatError> {
    let x = v
        .as_f64()
        .ok_or_else(|| bad(format!("`{what}` must contain numbers")))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(FormatError::new(
            FormatErrorKind::NonFiniteNumber,
            format!("`{what}` is not finite"),
        ))
    }
}

fn pair(obj: &Map<String, Value>, key: &str) -> Result<[f64; 2], FormatError> {
    let arr = obj
        .get(key)
        .ok_or_else(|| bad(format!("missing `{key}`")))?
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| bad(format!("`{key}` must be a two-element array")))?;
    Ok([number(&arr[0], key)?, number(&arr[1], key)?])
}

fn tool_spec(obj: &Map<String, Value>) -> Result<ToolSpec, FormatError> {
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("tool call needs a string `name`"))?;
    let zoom = match name {
        "crop" => false,
        "zoom" => true,
        other => return Err(bad(format!("unknown tool `{other}`"))),
    };
    if zoom {
        expect_keys(obj, &["name", "center", "size", "scale"])?;
    } else {
        expect_keys(obj, &["name", "center", "size"])?;
    }
    let center = Point::from(pair(obj, "center")?);
    let [w, h] = pair(obj, "size")?;
    if w < 0.0 || h < 0.0 {
        return Err(bad("`size` must be non-negative"));
    }
    let size = Extent::new(w, h);
    if !zoom {
        return Ok(ToolSpec::Crop { center, size });
    }
    let scale = number(
        obj.get("scale").ok_or_else(|| bad("zoom needs `scale`"))?,
        "scale",
    )?;
    if scale <= 0.0 {
        return Err(bad("`scale` must be positive"));
    }
    Ok(ToolSpec::Zoom { center, size, scale })
}

/// Renders an action in the canonical form accepted by [`parse_action`].
pub fn format_action(action: &Action) -> String {
    match action {
        Action::Answer { point } => format!(r#"<answer>{{"point":[{},{}]}}</answer>"#, point.x, point.y),
        Action::ToolCall { spec } => match *spec {
            ToolSpec::NoTool => String::new(),
            ToolSpec::Crop { center, size } => format!(
                r#"<tool_call>{{"name":"crop","center":[{},{}],"size":[{},{}]}}</tool_call>"#,
                center.x, center.y, size.w, size.h
            ),
            ToolSpec::Zoom { center, size, scale } => format!(
                r#"<tool_call>{{"name":"zoom","center":[{},{}],"size":[{},{}],"scale":{}}}</tool_call>"#,
                center.x, center.y, size.w, size.h, scale
            ),
        },
    }
}
