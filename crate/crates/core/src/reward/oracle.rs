//! Independent reference computations for the tool reward, used by the
//! `reward-check` command and the test suites.
//!
//! Nothing here calls into [`crate::tools`] geometry: coverage is counted
//! pixel by pixel and distance goes through the nearest point of the box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{tool_reward, total_reward, RewardVariant, RewardWeights, TrajectoryOutcome};
use crate::tools::{BBox, Extent, Point, ToolSpec};

/// Counts unit pixels of an integer-coordinate `gt` whose centers lie in `crop`.
pub fn pixel_coverage(crop: [i64; 4], gt: [i64; 4]) -> f64 {
    let mut hit = 0u64;
    let mut total = 0u64;
    for y in gt[1]..gt[3] {
        for x in gt[0]..gt[2] {
            total += 1;
            let (px, py) = (2 * x + 1, 2 * y + 1);
            if px > 2 * crop[0] && px < 2 * crop[2] && py > 2 * crop[1] && py < 2 * crop[3] {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

/// Gaussian proximity evaluated literally: nearest box point by clamping,
/// Euclidean distance, diagonal by square root.
pub fn direct_center_term(c: [f64; 2], gt: [f64; 4], w: &RewardWeights) -> f64 {
    let nx = c[0].clamp(gt[0], gt[2]);
    let ny = c[1].clamp(gt[1], gt[3]);
    let d = ((c[0] - nx).powi(2) + (c[1] - ny).powi(2)).sqrt();
    let sigma = w.sigma_scale * ((gt[2] - gt[0]).powi(2) + (gt[3] - gt[1]).powi(2)).sqrt();
    (-w.alpha * (d / sigma).powi(2)).exp()
}

#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn random_box(rng: &mut ChaCha8Rng, grid: i64, min_side: i64) -> [i64; 4] {
    loop {
        let (a, b) = (rng.random_range(0..=grid), rng.random_range(0..=grid));
        let (c, d) = (rng.random_range(0..=grid), rng.random_range(0..=grid));
        let bx = [a.min(b), c.min(d), a.max(b), c.max(d)];
        if bx[2] - bx[0] >= min_side && bx[3] - bx[1] >= min_side {
            return bx;
        }
    }
}

fn as_bbox(b: [i64; 4]) -> BBox {
    BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64).expect("ordered box")
}

/// Random integer-grid cases compared against the brute-force oracles.
pub fn check_random_cases(cases: usize, grid: i64, seed: u64) -> Vec<CheckLine> {
    let w = RewardWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut overlap_mismatch = 0usize;
    let mut worst_center = 0.0f64;
    let mut errors = 0usize;
    for _ in 0..cases {
        let gt = random_box(&mut rng, grid, 1);
        let crop = random_box(&mut rng, grid, 0);
        let c = [
            rng.random_range(-8..=grid + 8) as f64,
            rng.random_range(-8..=grid + 8) as f64,
        ];
        let spec = ToolSpec::Crop {
            center: Point::new(c[0], c[1]),
            size: Extent::new((crop[2] - crop[0]) as f64, (crop[3] - crop[1]) as f64),
        };
        let outcome = TrajectoryOutcome::with_tool(spec, as_bbox(crop), Point::new(c[0], c[1]), as_bbox(gt));
        match tool_reward(&outcome, &w, RewardVariant::Full) {
            Ok(t) => {
                if t.overlap_term != pixel_coverage(crop, gt) {
                    overlap_mismatch += 1;
                }
                let gtf = gt.map(|v| v as f64);
                worst_center = worst_center.max((t.center_term - direct_center_term(c, gtf, &w)).abs());
            }
            Err(_) => errors += 1,
        }
    }
    vec![
        CheckLine {
            name: "overlap-vs-pixel-count",
            passed: overlap_mismatch == 0 && errors == 0,
            detail: format!(
                "{cases} cases on a {grid}x{grid} grid, {overlap_mismatch} mismatches, {errors} errors"
            ),
        },
        CheckLine {
            name: "center-vs-direct-evaluation",
            passed: worst_center <= 1e-12 && errors == 0,
            detail: format!("max |diff| = {worst_center:e} (tolerance 1e-12)"),
        },
    ]
}

/// The worked example and the coefficient identities at default weights.
pub fn check_identities() -> Vec<CheckLine> {
    let w = RewardWeights::default();
    let gt = BBox::new(100.0, 100.0, 200.0, 150.0).expect("box");
    let spec = ToolSpec::Crop {
        center: Point::new(250.0, 125.0),
        size: Extent::new(150.0, 100.0),
    };
    let crop = BBox::new(150.0, 100.0, 300.0, 200.0).expect("box");
    let worked = TrajectoryOutcome::with_tool(spec, crop, Point::new(250.0, 125.0), gt);
    let r_tool = tool_reward(&worked, &w, RewardVariant::Full).map(|t| t.r_tool);
    let expected = 0.7 * direct_center_term([250.0, 125.0], [100.0, 100.0, 200.0, 150.0], &w)
        + 0.3 * pixel_coverage([150, 100, 300, 200], [100, 100, 200, 150]);

    let perfect = TrajectoryOutcome::with_tool(
        ToolSpec::Crop {
            center: gt.center(),
            size: Extent::new(200.0, 100.0),
        },
        BBox::new(50.0, 75.0, 250.0, 175.0).expect("box"),
        gt.center(),
        gt,
    );
    let total = total_reward(&perfect, &w, RewardVariant::Full).map(|b| b.total);

    let sigma = w.sigma_scale * gt.diagonal();
    let at_sigma = TrajectoryOutcome::direct(Point::new(gt.x2() + sigma, 125.0), gt);
    let center_at_sigma = tool_reward(&at_sigma, &w, RewardVariant::Full).map(|t| t.center_term);

    vec![
        CheckLine {
            name: "worked-tool-reward",
            passed: matches!(r_tool, Ok(v) if (v - 0.77259).abs() <= 1e-5 && (v - expected).abs() <= 1e-12),
            detail: format!("r_tool = {r_tool:?}, oracle {expected:.6}, expected 0.77259 ± 1e-5"),
        },
        CheckLine {
            name: "maximal-total-is-one",
            passed: matches!(total, Ok(v) if v == 1.0),
            detail: format!("total = {total:?}"),
        },
        CheckLine {
            name: "center-at-sigma",
            passed: matches!(center_at_sigma, Ok(v) if (v - (-1.5f64).exp()).abs() <= 1e-12),
            detail: format!(
                "center term = {center_at_sigma:?}, exp(-1.5) = {:.12}",
                (-1.5f64).exp()
            ),
        },
    ]
}
