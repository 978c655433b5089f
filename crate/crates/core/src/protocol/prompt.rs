use thiserror::Error;

use super::{Stage, ToolMeta};
use crate::tools::ImageDims;

/// Version tag of the prompt templates under `assets/prompts/`.
pub const PROMPT_VERSION: &str = "v1";

const STAGE1: &str = include_str!("../../assets/prompts/stage1.v1.txt");
const STAGE2: &str = include_str!("../../assets/prompts/stage2.v1.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("stage-2 prompt needs the tool region and scale")]
    MissingToolMeta,
}

/// Instantiates the stage template. The instruction is substituted last so
/// placeholder-like text inside it is kept verbatim.
pub fn render_prompt(
    stage: Stage,
    instruction: &str,
    tool_meta: Option<&ToolMeta>,
    image: ImageDims,
) -> Result<String, PromptError> {
    let text = match stage {
        Stage::One => STAGE1
            .replace("{width}", &image.width.to_string())
            .replace("{height}", &image.height.to_string()),
        Stage::Two => {
            let meta = tool_meta.ok_or(PromptError::MissingToolMeta)?;
            let r = &meta.region;
            STAGE2
                .replace("{offset_x}", &r.x1().to_string())
                .replace("{offset_y}", &r.y1().to_string())
                .replace("{region_w}", &r.width().to_string())
                .replace("{region_h}", &r.height().to_string())
                .replace("{scale}", &meta.scale.to_string())
        }
    };
    Ok(text.replace("{instruction}", instruction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::BBox;

    fn dims() -> ImageDims {
        ImageDims::new(100, 80).unwrap()
    }

    #[test]
    fn stage_one_contains_instruction_and_grammar() {
        let p = render_prompt(Stage::One, "click Save", None, dims()).unwrap();
        assert!(p.contains("click Save"));
        assert!(p.contains("<answer>"));
        assert!(p.contains("<tool_call>"));
        assert!(p.contains("100x80"));
    }

    #[test]
    fn stage_two_states_offset_and_scale() {
        let meta = ToolMeta {
            region: BBox::new(30.0, 40.0, 70.0, 60.0).unwrap(),
            scale: 2.0,
        };
        let p = render_prompt(Stage::Two, "click Save", Some(&meta), dims()).unwrap();
        assert!(p.contains("offset=(30,40)"), "{p}");
        assert!(p.contains("scale=2"), "{p}");
        assert!(!p.contains("<tool_call>"));
        assert!(matches!(
            render_prompt(Stage::Two, "x", None, dims()),
            Err(PromptError::MissingToolMeta)
        ));
    }

    #[test]
    fn deterministic_and_verbatim() {
        let a = render_prompt(Stage::One, "type {width} here", None, dims()).unwrap();
        let b = render_prompt(Stage::One, "type {width} here", None, dims()).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("type {width} here"));
    }
}
