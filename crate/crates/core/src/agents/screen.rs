//! Synthetic screens: solid-color rectangles on a light background. The
//! instruction names the color of exactly one of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::tools::{BBox, Image, ImageDims};

pub const BACKGROUND: [u8; 3] = [245, 245, 245];

pub const PALETTE: [[u8; 3]; 12] = [
    [220, 40, 40],
    [40, 160, 60],
    [40, 80, 220],
    [230, 200, 30],
    [150, 50, 200],
    [30, 190, 200],
    [240, 130, 20],
    [120, 70, 30],
    [240, 90, 170],
    [90, 90, 90],
    [0, 110, 110],
    [160, 200, 60],
];

pub fn color_of(id: u8) -> Option<[u8; 3]> {
    PALETTE.get(id as usize).copied()
}

pub fn instruction_for(color_id: u8) -> String {
    format!("Click the element with color {color_id}.")
}

/// Color id named by an instruction produced by [`instruction_for`].
pub fn target_color_id(instruction: &str) -> Option<u8> {
    let rest = &instruction[instruction.rfind("color ")? + "color ".len()..];
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    digits
        .parse()
        .ok()
        .filter(|&id: &u8| (id as usize) < PALETTE.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub width: u32,
    pub height: u32,
    pub n_elements: usize,
    /// Grid resolution of the policy looking at the screen; element sizes
    /// default to a fraction of one grid cell.
    pub grid: u32,
    pub min_side: u32,
    pub max_side: u32,
    /// Minimum empty pixels between two elements.
    pub gap: u32,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self::for_grid(128, 128, 6, 8)
    }
}

impl ScreenConfig {
    /// Elements between a quarter and two thirds of a grid cell per side.
    pub fn for_grid(width: u32, height: u32, n_elements: usize, grid: u32) -> Self {
        let cell = width.min(height) / grid.max(1);
        Self {
            width,
            height,
            n_elements,
            grid,
            min_side: (cell / 4).max(1),
            max_side: (2 * cell / 3).max(2),
            gap: 2,
        }
    }

    pub fn dims(&self) -> Result<ImageDims, AgentError> {
        ImageDims::new(self.width, self.height).map_err(|e| AgentError::Generation(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenElement {
    pub bbox: BBox,
    pub color_id: u8,
    pub is_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScreen {
    pub dims: ImageDims,
    pub elements: Vec<ScreenElement>,
    pub instruction: String,
    pub gt: BBox,
}

impl SyntheticScreen {
    pub fn render(&self) -> Image {
        let mut img = Image::filled(self.dims, BACKGROUND);
        for el in &self.elements {
            img.fill_rect(&el.bbox, PALETTE[el.color_id as usize]);
        }
        img
    }

    pub fn target(&self) -> &ScreenElement {
        self.elements
            .iter()
            .find(|e| e.is_target)
            .expect("screens always have a target")
    }
}

const MAX_PLACEMENT_TRIES: usize = 1_000;

fn separated(a: &BBox, b: &BBox, gap: f64) -> bool {
    a.x2() + gap <= b.x1() || b.x2() + gap <= a.x1() || a.y2() + gap <= b.y1() || b.y2() + gap <= a.y1()
}

/// Deterministic in `(seed, config)`. Each element gets a distinct color;
/// the first placed element is the target.
pub fn generate_screen(seed: u64, cfg: &ScreenConfig) -> Result<SyntheticScreen, AgentError> {
    let dims = cfg.dims()?;
    if cfg.n_elements == 0 {
        return Err(AgentError::Generation("need at least one element".into()));
    }
    if cfg.n_elements > PALETTE.len() {
        return Err(AgentError::Generation(format!(
            "at most {} elements have distinct colors",
            PALETTE.len()
        )));
    }
    if cfg.min_side == 0 || cfg.min_side > cfg.max_side || cfg.max_side > cfg.width.min(cfg.height) {
        return Err(AgentError::Generation(format!(
            "element sides {}..={} do not fit a {}x{} screen",
            cfg.min_side, cfg.max_side, cfg.width, cfg.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut colors: Vec<u8> = (0..PALETTE.len() as u8).collect();
    for i in 0..cfg.n_elements {
        let j = rng.random_range(i..colors.len());
        colors.swap(i, j);
    }

    let mut elements: Vec<ScreenElement> = Vec::with_capacity(cfg.n_elements);
    for (i, &color_id) in colors.iter().take(cfg.n_elements).enumerate() {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let w = rng.random_range(cfg.min_side..=cfg.max_side);
            let h = rng.random_range(cfg.min_side..=cfg.max_side);
            let x = rng.random_range(0..=cfg.width - w);
            let y = rng.random_range(0..=cfg.height - h);
            let b = BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64)
                .expect("ordered by construction");
            if elements.iter().all(|e| separated(&e.bbox, &b, cfg.gap as f64)) {
                placed = Some(b);
                break;
            }
        }
        let bbox = placed.ok_or_else(|| {
            AgentError::Generation(format!(
                "could not place element {} of {} after {MAX_PLACEMENT_TRIES} tries",
                i + 1,
                cfg.n_elements
            ))
        })?;
        elements.push(ScreenElement {
            bbox,
            color_id,
            is_target: i == 0,
        });
    }
    let target = &elements[0];
    Ok(SyntheticScreen {
        dims,
        instruction: instruction_for(target.color_id),
        gt: target.bbox,
        elements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_screen() {
        let cfg = ScreenConfig::default();
        assert_eq!(
            generate_screen(0, &cfg).unwrap(),
            generate_screen(0, &cfg).unwrap()
        );
        assert_ne!(
            generate_screen(0, &cfg).unwrap(),
            generate_screen(1, &cfg).unwrap()
        );
    }

    #[test]
    fn single_element_is_target() {
        let cfg = ScreenConfig {
            n_elements: 1,
            ..ScreenConfig::default()
        };
        let s = generate_screen(5, &cfg).unwrap();
        assert_eq!(s.elements.len(), 1);
        assert_eq!(s.gt, s.elements[0].bbox);
        assert!(s.elements[0].is_target);
    }

    #[test]
    fn disjoint_over_many_seeds() {
        let cfg = ScreenConfig::default();
        for seed in 0..1_000 {
            let s = generate_screen(seed, &cfg).unwrap();
            assert_eq!(s.elements.iter().filter(|e| e.is_target).count(), 1);
            assert!(s.gt.area() > 0.0);
            for (i, a) in s.elements.iter().enumerate() {
                assert!(a.bbox.is_within(s.dims));
                for b in &s.elements[i + 1..] {
                    assert_eq!(a.bbox.intersection_area(&b.bbox), 0.0, "seed {seed}");
                    assert_ne!(a.color_id, b.color_id);
                }
            }
        }
    }

    #[test]
    fn infeasible_packing_errors() {
        let cfg = ScreenConfig {
            width: 10,
            height: 10,
            n_elements: 5,
            grid: 2,
            min_side: 6,
            max_side: 6,
            gap: 0,
        };
        assert!(matches!(generate_screen(0, &cfg), Err(AgentError::Generation(_))));
    }

    #[test]
    fn render_paints_target_color() {
        let s = generate_screen(3, &ScreenConfig::default()).unwrap();
        let img = s.render();
        let c = s.gt.center();
        assert_eq!(
            img.pixel(c.x as u32, c.y as u32),
            PALETTE[s.target().color_id as usize]
        );
        assert_eq!(target_color_id(&s.instruction), Some(s.target().color_id));
    }

    #[test]
    fn instruction_parsing() {
        assert_eq!(target_color_id("Click the element with color 11."), Some(11));
        assert_eq!(target_color_id("Click the element with color 99."), None);
        assert_eq!(target_color_id("click Save"), None);
    }
}
