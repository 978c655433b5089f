use super::*;
use crate::agents::scripted::{AnswerKey, FnPolicy};
use crate::reward::RewardVariant;
use crate::tools::Extent;

fn screen() -> (Image, BBox) {
    let dims = ImageDims::new(400, 300).unwrap();
    let mut img = Image::filled(dims, [255, 255, 255]);
    let gt = BBox::new(100.0, 100.0, 200.0, 150.0).unwrap();
    img.fill_rect(&gt, [200, 0, 0]);
    (img, gt)
}

fn answer(p: Point) -> String {
    format_action(&Action::Answer { point: p })
}

fn tool(spec: ToolSpec) -> String {
    format_action(&Action::ToolCall { spec })
}

fn rng() -> ChaCha8Rng {
    episode_rng(0, 0)
}

#[test]
fn direct_answer_inside_target() {
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    let policy = FnPolicy(|_: &Observation<'_>| answer(Point::new(150.0, 125.0)));
    let ep = run_episode(&policy, &task, &RewardConfig::default(), &mut rng()).unwrap();
    let r = ep.record.reward;
    assert_eq!(ep.record.step_count, 1);
    assert!(!ep.record.used_tool());
    assert_eq!(r.r_acc, 1.0);
    assert_eq!(r.r_format, 1.0);
    // No tool: center term is 1 inside the box, overlap is 0.
    assert!((r.r_tool - 0.7).abs() < 1e-15);
    assert!((r.total - (0.6 + 0.1 + 0.3 * 0.7)).abs() < 1e-15);
    assert_eq!(ep.traces.len(), 1);
}

#[test]
fn crop_then_click_center_is_maximal() {
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    let crop = ToolSpec::Crop {
        center: Point::new(150.0, 125.0),
        size: Extent::new(120.0, 80.0),
    };
    let policy = FnPolicy(move |obs: &Observation<'_>| match obs.stage {
        Stage::One => tool(crop),
        Stage::Two => {
            let meta = obs.tool_meta.unwrap();
            answer(crate::tools::map_to_tool(
                Point::new(150.0, 125.0),
                &meta.region,
                meta.scale,
            ))
        }
    });
    let ep = run_episode(&policy, &task, &RewardConfig::default(), &mut rng()).unwrap();
    assert_eq!(ep.record.step_count, 2);
    assert_eq!(
        ep.record.tool_region,
        Some(BBox::new(90.0, 85.0, 210.0, 165.0).unwrap())
    );
    assert_eq!(
        ep.record.outcome.final_point_original,
        Some(Point::new(150.0, 125.0))
    );
    assert_eq!(ep.record.reward.total, 1.0);
    assert_eq!(ep.traces.len(), 2);
}

#[test]
fn stage_two_sees_the_crop_and_its_own_prompt() {
    let (img, gt) = screen();
    let task = Task::new("click the red box", &img, gt);
    let crop = ToolSpec::Crop {
        center: Point::new(150.0, 125.0),
        size: Extent::new(100.0, 50.0),
    };
    let policy = FnPolicy(move |obs: &Observation<'_>| match obs.stage {
        Stage::One => {
            assert!(obs.tool_meta.is_none());
            assert_eq!(obs.image.dims(), ImageDims::new(400, 300).unwrap());
            tool(crop)
        }
        Stage::Two => {
            assert_eq!(obs.image.dims(), ImageDims::new(100, 50).unwrap());
            assert!(obs.prompt.contains("offset=(100,100)"), "{}", obs.prompt);
            assert!(obs.prompt.contains("click the red box"));
            // The crop is exactly the target.
            assert!(obs.image.pixels().chunks(3).all(|p| p == [200, 0, 0]));
            answer(Point::new(0.0, 0.0))
        }
    });
    let ep = run_episode(&policy, &task, &RewardConfig::default(), &mut rng()).unwrap();
    assert_eq!(
        ep.record.outcome.final_point_original,
        Some(Point::new(100.0, 100.0))
    );
    assert_eq!(ep.record.reward.r_acc, 1.0);
}

#[test]
fn zoom_answers_map_back_through_the_scale() {
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    let zoom = ToolSpec::Zoom {
        center: Point::new(150.0, 125.0),
        size: Extent::new(100.0, 50.0),
        scale: 2.0,
    };
    let policy = FnPolicy(move |obs: &Observation<'_>| match obs.stage {
        Stage::One => tool(zoom),
        Stage::Two => {
            assert_eq!(obs.image.dims(), ImageDims::new(200, 100).unwrap());
            answer(Point::new(100.0, 50.0))
        }
    });
    let ep = run_episode(&policy, &task, &RewardConfig::default(), &mut rng()).unwrap();
    assert_eq!(ep.record.zoom_scale, Some(2.0));
    assert_eq!(
        ep.record.outcome.final_point_original,
        Some(Point::new(150.0, 125.0))
    );
    assert_eq!(ep.record.reward.total, 1.0);
}

#[test]
fn answer_key_clicks_the_same_place_through_any_tool() {
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    let mut key = AnswerKey::default();
    key.insert("click", Point::new(123.0, 111.0));
    for spec in [
        ToolSpec::Crop {
            center: Point::new(130.0, 120.0),
            size: Extent::new(80.0, 60.0),
        },
        ToolSpec::Zoom {
            center: Point::new(130.0, 120.0),
            size: Extent::new(80.0, 60.0),
            scale: 3.0,
        },
    ] {
        let both = FnPolicy(|obs: &Observation<'_>| match obs.stage {
            Stage::One => tool(spec),
            Stage::Two => key.respond(obs, &mut rng()).unwrap().text,
        });
        let ep = run_episode(&both, &task, &RewardConfig::default(), &mut rng()).unwrap();
        let p = ep.record.outcome.final_point_original.unwrap();
        assert!((p.x - 123.0).abs() < 1e-9 && (p.y - 111.0).abs() < 1e-9, "{p:?}");
    }
}

#[test]
fn garbage_scores_zero() {
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    for text in [
        "",
        "hello",
        "<answer>{\"point\":[1]}</answer>",
        "<tool_call>{}</tool_call>",
    ] {
        let policy = FnPolicy(move |_: &Observation<'_>| text.to_owned());
        let ep = run_episode(&policy, &task, &RewardConfig::default(), &mut rng()).unwrap();
        assert_eq!(ep.record.reward, RewardBreakdown::ZERO, "{text:?}");
        assert!(matches!(ep.record.stage1.parsed, StageParse::Invalid(_)));
    }
}

#[test]
fn bad_stage_two_reply_zeroes_the_whole_trajectory() {
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    let policy = FnPolicy(|obs: &Observation<'_>| match obs.stage {
        Stage::One => tool(ToolSpec::Crop {
            center: Point::new(150.0, 125.0),
            size: Extent::new(100.0, 50.0),
        }),
        Stage::Two => tool(ToolSpec::Crop {
            center: Point::new(10.0, 10.0),
            size: Extent::new(5.0, 5.0),
        }),
    });
    let ep = run_episode(&policy, &task, &RewardConfig::default(), &mut rng()).unwrap();
    assert_eq!(ep.record.step_count, 2);
    let s2 = ep.record.stage2.as_ref().unwrap();
    match &s2.parsed {
        StageParse::Invalid(e) => assert_eq!(e.kind, FormatErrorKind::WrongStageAction),
        other => panic!("{other:?}"),
    }
    assert_eq!(ep.record.reward.total, 0.0);
}

#[test]
fn unexecutable_tool_is_a_format_failure() {
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    let policy = FnPolicy(|_: &Observation<'_>| {
        tool(ToolSpec::Crop {
            center: Point::new(399.9, 299.9),
            size: Extent::new(0.2, 0.2),
        })
    });
    let ep = run_episode(&policy, &task, &RewardConfig::default(), &mut rng()).unwrap();
    assert_eq!(ep.record.step_count, 1);
    assert_eq!(ep.record.reward.total, 0.0);
    match &ep.record.stage1.parsed {
        StageParse::Invalid(e) => assert_eq!(e.kind, FormatErrorKind::BadPayload),
        other => panic!("{other:?}"),
    }
}

#[test]
fn policy_failure_is_an_error_not_a_format_failure() {
    struct Broken;
    impl Policy for Broken {
        type Trace = ();
        fn respond(&self, _: &Observation<'_>, _: &mut ChaCha8Rng) -> Result<Reply<()>, PolicyError> {
            Err(PolicyError::msg("connection refused"))
        }
    }
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    let r = run_episode(&Broken, &task, &RewardConfig::default(), &mut rng());
    assert!(matches!(r, Err(EpisodeError::Policy(_))));
}

#[test]
fn degenerate_target_is_rejected_before_any_call() {
    let (img, _) = screen();
    let task = Task::new("click", &img, BBox::new(5.0, 5.0, 5.0, 9.0).unwrap());
    let policy = FnPolicy(|_: &Observation<'_>| panic!("must not be called"));
    let r = run_episode(&policy, &task, &RewardConfig::default(), &mut rng());
    assert!(matches!(
        r,
        Err(EpisodeError::Reward(RewardError::DegenerateTarget(_)))
    ));
}

#[test]
fn records_round_trip_through_json() {
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    let policy = FnPolicy(|obs: &Observation<'_>| match obs.stage {
        Stage::One => tool(ToolSpec::Crop {
            center: Point::new(150.0, 125.0),
            size: Extent::new(100.0, 50.0),
        }),
        Stage::Two => answer(Point::new(3.5, 7.25)),
    });
    let ep = run_episode(&policy, &task, &RewardConfig::default(), &mut rng()).unwrap();
    let line = ep.record.to_json_line();
    assert!(!line.contains('\n'));
    let back: EpisodeRecord = serde_json::from_str(&line).unwrap();
    assert_eq!(back, ep.record);
}

#[test]
fn variants_change_only_the_tool_term() {
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    let policy = FnPolicy(|obs: &Observation<'_>| match obs.stage {
        Stage::One => tool(ToolSpec::Crop {
            center: Point::new(260.0, 125.0),
            size: Extent::new(200.0, 100.0),
        }),
        Stage::Two => answer(Point::new(10.0, 30.0)),
    });
    let mut totals = Vec::new();
    for variant in RewardVariant::ALL {
        let cfg = RewardConfig {
            variant,
            ..RewardConfig::default()
        };
        let ep = run_episode(&policy, &task, &cfg, &mut rng()).unwrap();
        assert_eq!(ep.record.reward.r_acc, 1.0);
        totals.push((variant, ep.record.reward));
    }
    let center = totals
        .iter()
        .find(|t| t.0 == RewardVariant::CenterOnly)
        .unwrap()
        .1;
    let overlap = totals
        .iter()
        .find(|t| t.0 == RewardVariant::OverlapOnly)
        .unwrap()
        .1;
    assert_eq!(center.overlap_term, overlap.overlap_term);
    assert_eq!(center.r_tool, 0.7 * center.center_term);
    assert_eq!(overlap.r_tool, 0.3 * overlap.overlap_term);
}

#[test]
fn focused_query_on_full_image_equals_direct_outcome() {
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    let policy = FnPolicy(|_: &Observation<'_>| answer(Point::new(150.0, 125.0)));
    let ep = run_focused_query(&policy, &task, None, &RewardConfig::default(), &mut rng()).unwrap();
    assert_eq!(
        ep.record.outcome,
        TrajectoryOutcome::direct(Point::new(150.0, 125.0), gt)
    );
    assert_eq!(ep.record.tool_region, None);

    let region = BBox::new(100.0, 80.0, 260.0, 200.0).unwrap();
    let ep = run_focused_query(&policy, &task, Some(region), &RewardConfig::default(), &mut rng()).unwrap();
    assert_eq!(ep.record.tool_region, Some(region));
    assert_eq!(
        ep.record.outcome.final_point_original,
        Some(Point::new(250.0, 205.0))
    );
}

#[test]
fn same_seed_same_episode() {
    use rand::Rng;
    let (img, gt) = screen();
    let task = Task::new("click", &img, gt);
    let policy = FnPolicy(|_: &Observation<'_>| answer(Point::new(150.0, 125.0)));
    struct Noisy;
    impl Policy for Noisy {
        type Trace = f64;
        fn respond(&self, _: &Observation<'_>, rng: &mut ChaCha8Rng) -> Result<Reply<f64>, PolicyError> {
            let x: f64 = rng.random_range(0.0..400.0);
            Ok(Reply {
                text: answer(Point::new(x, 120.0)),
                trace: x,
            })
        }
    }
    let a = run_episode(&Noisy, &task, &RewardConfig::default(), &mut episode_rng(7, 3)).unwrap();
    let b = run_episode(&Noisy, &task, &RewardConfig::default(), &mut episode_rng(7, 3)).unwrap();
    let c = run_episode(&Noisy, &task, &RewardConfig::default(), &mut episode_rng(7, 4)).unwrap();
    assert_eq!(a.record, b.record);
    assert_eq!(a.traces, b.traces);
    assert_ne!(a.traces, c.traces);
    let _ = run_episode(&policy, &task, &RewardConfig::default(), &mut rng()).unwrap();
}
