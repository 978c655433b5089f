use std::path::PathBuf;

use super::*;
use crate::agents::scripted::{AnswerKey, FnPolicy};
use crate::protocol::{format_action, Action, Observation};
use crate::reward::accuracy_reward;
use crate::reward::{RewardVariant, TrajectoryOutcome};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn fixture() -> Vec<DatasetRecord> {
    load_dataset(fixture_dir().join("dataset.jsonl")).unwrap().records
}

fn answers() -> AnswerKey {
    AnswerKey::from_jsonl(fixture_dir().join("answers.jsonl")).unwrap()
}

#[test]
fn scoring_rule() {
    let gt = BBox::new(10.0, 10.0, 20.0, 20.0).unwrap();
    assert_eq!(score_prediction(Point::new(15.0, 15.0), &gt), 1);
    assert_eq!(score_prediction(Point::new(21.0, 15.0), &gt), 0);
    assert_eq!(score_prediction(Point::new(20.0, 20.0), &gt), 1);
    assert_eq!(score_prediction(Point::new(10.0, 10.0), &gt), 1);
}

#[test]
fn scoring_agrees_with_accuracy_reward() {
    let gt = BBox::new(3.0, 4.0, 9.0, 7.0).unwrap();
    for x in 0..25 {
        for y in 0..25 {
            let p = Point::new(x as f64 * 0.5, y as f64 * 0.5);
            let r = accuracy_reward(&TrajectoryOutcome::direct(p, gt));
            assert_eq!(score_prediction(p, &gt) as f64, r);
        }
    }
}

#[test]
fn fixture_loads() {
    let ds = load_dataset(fixture_dir().join("dataset.jsonl")).unwrap();
    assert_eq!(ds.records.len(), 12);
    assert!(ds.rejected.is_empty());
    assert_eq!(ds.records[0].dims, ImageDims::new(120, 240).unwrap());
}

#[test]
fn bad_lines_are_reported_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("images")).unwrap();
    std::fs::copy(
        fixture_dir().join("images/rec01.png"),
        dir.path().join("images/a.png"),
    )
    .unwrap();
    let good = r#"{"image":"images/a.png","instruction":"x","bbox":[1,1,5,5],"platform":"mobile","ui_type":"text","group":"g"}"#;
    let lines = [
        good.to_string(),
        good.replace("[1,1,5,5]", "[200,100,100,150]"),
        good.replace("[1,1,5,5]", "[100,100,130,150]"),
        good.replace("\"mobile\"", "\"tv\""),
        good.replace("a.png", "missing.png"),
        "not json".to_string(),
        good.replace("\"group\":\"g\"", "\"group\":\"g\",\"extra\":1"),
    ];
    let path = dir.path().join("d.jsonl");
    std::fs::write(&path, lines.join("\n")).unwrap();
    let ds = load_dataset(&path).unwrap();
    assert_eq!(ds.records.len(), 1);
    let rejected: Vec<usize> = ds.rejected.iter().map(|e| e.line).collect();
    assert_eq!(rejected, vec![2, 3, 4, 5, 6, 7]);
    assert!(
        ds.rejected[0].reason.contains("invalid bbox"),
        "{}",
        ds.rejected[0]
    );
    assert!(
        ds.rejected[1].reason.contains("exceeds image bounds"),
        "{}",
        ds.rejected[1]
    );

    std::fs::write(&path, lines[1..].join("\n")).unwrap();
    assert!(matches!(
        load_dataset(&path),
        Err(EvalError::NoValidRecords { rejected: 6, .. })
    ));
    assert!(matches!(
        load_dataset(dir.path().join("nope.jsonl")),
        Err(EvalError::Io { .. })
    ));
}

#[test]
fn fixture_report_matches_hand_counts() {
    let records = fixture();
    let (report, episodes) = evaluate(&records, &answers(), EvalMode::Full, &EvalOptions::new(0));
    let s = &report.summary;
    assert_eq!(episodes.len(), 12);
    assert_eq!((s.overall.correct, s.overall.total), (8, 12));
    assert!((s.micro_average.unwrap() - 200.0 / 3.0).abs() < 1e-12);

    let p = &s.by_platform;
    let cell = |t: &CellTable, c: &str, ui| {
        let x = t.cell(c, ui).unwrap();
        (x.correct, x.total)
    };
    assert_eq!(cell(p, "mobile", UiType::Text), (1, 2));
    assert_eq!(cell(p, "mobile", UiType::Icon), (1, 2));
    assert_eq!(cell(p, "desktop", UiType::Text), (2, 2));
    assert_eq!(cell(p, "desktop", UiType::Icon), (1, 2));
    assert_eq!(cell(p, "web", UiType::Text), (3, 3));
    assert_eq!(cell(p, "web", UiType::Icon), (0, 1));
    assert!((s.cell_average.unwrap() - 350.0 / 6.0).abs() < 1e-12);

    let g = &s.by_group;
    let names: Vec<&str> = g.rows.iter().map(|r| r.category.as_str()).collect();
    assert_eq!(names, ["CAD", "Dev", "Office"]);
    assert_eq!(cell(g, "CAD", UiType::Text), (1, 1));
    assert_eq!(cell(g, "CAD", UiType::Icon), (1, 3));
    assert_eq!(cell(g, "Dev", UiType::Text), (2, 2));
    assert_eq!(cell(g, "Dev", UiType::Icon), (1, 2));
    assert_eq!(cell(g, "Office", UiType::Text), (3, 4));
    assert_eq!(g.cell("Office", UiType::Icon).unwrap().accuracy(), None);

    let md = report.to_markdown();
    assert!(
        md.contains("| Office | 75.00 (3/4) | n/a | 75.00 (3/4) |"),
        "{md}"
    );
    assert!(md.contains("micro-average: 66.67 (8/12)"), "{md}");
    let csv = report.to_csv();
    assert!(csv.contains("group,Office,icon,0,0,0,n/a"), "{csv}");
    assert!(csv.contains("overall,micro,all,8,12,0,66.6667"), "{csv}");
}

#[test]
fn all_correct_policy_fills_every_cell() {
    let records = fixture();
    let mut key = AnswerKey::default();
    for r in &records {
        key.insert(r.instruction.clone(), r.gt.center());
    }
    let (report, _) = evaluate(&records, &key, EvalMode::Direct, &EvalOptions::new(1));
    for row in report
        .summary
        .by_platform
        .rows
        .iter()
        .chain(&report.summary.by_group.rows)
    {
        for cell in [&row.text, &row.icon] {
            assert!(matches!(cell.accuracy(), Some(a) if a == 100.0) || cell.total == 0);
        }
    }
    assert_eq!(report.summary.micro_average, Some(100.0));
}

#[test]
fn empty_platform_is_not_a_number() {
    let records: Vec<_> = fixture()
        .into_iter()
        .filter(|r| r.platform != Platform::Web)
        .collect();
    let (report, _) = evaluate(&records, &answers(), EvalMode::Full, &EvalOptions::new(0));
    let web = report.summary.by_platform.row("web").unwrap();
    assert_eq!(web.all.total, 0);
    assert_eq!(web.all.accuracy(), None);
    assert!(report.to_markdown().contains("| web | n/a | n/a | n/a |"));
}

#[test]
fn reordering_records_changes_nothing() {
    let records = fixture();
    let mut reversed = records.clone();
    reversed.reverse();
    let noisy = FnPolicy(|obs: &Observation<'_>| {
        // Deterministic in what is shown, so any difference would come from
        // the harness.
        let w = obs.image.width() as f64;
        format_action(&Action::Answer {
            point: Point::new(w / 3.0, obs.instruction.len() as f64),
        })
    });
    let opts = EvalOptions::new(3);
    let a = evaluate(&records, &noisy, EvalMode::Full, &opts).0;
    let b = evaluate(&reversed, &noisy, EvalMode::Full, &opts).0;
    assert_eq!(a, b);
}

#[test]
fn errors_count_as_incorrect_unless_excluded() {
    use crate::protocol::{Policy, PolicyError, Reply};
    use rand_chacha::ChaCha8Rng;
    struct Flaky(AnswerKey);
    impl Policy for Flaky {
        type Trace = ();
        fn respond(&self, obs: &Observation<'_>, rng: &mut ChaCha8Rng) -> Result<Reply<()>, PolicyError> {
            if obs.instruction.ends_with("color 0.") {
                Err(PolicyError::msg("HTTP 500"))
            } else {
                self.0.respond(obs, rng)
            }
        }
    }
    let records = fixture();
    let policy = Flaky(answers());
    let (report, episodes) = evaluate(&records, &policy, EvalMode::Full, &EvalOptions::new(0));
    assert_eq!(episodes.len(), 11);
    let o = report.summary.overall;
    assert_eq!((o.correct, o.total, o.errored), (7, 12, 1));
    let opts = EvalOptions {
        exclude_errors: true,
        ..EvalOptions::new(0)
    };
    let o = evaluate(&records, &policy, EvalMode::Full, &opts)
        .0
        .summary
        .overall;
    assert_eq!((o.correct, o.total, o.errored), (7, 11, 1));
}

#[test]
fn static_crop_geometry() {
    let dims = ImageDims::new(1000, 800).unwrap();
    let r = static_crop_region(Point::new(500.0, 400.0), 0.4, dims).unwrap();
    assert_eq!(r, BBox::new(300.0, 240.0, 700.0, 560.0).unwrap());
    let r = static_crop_region(Point::new(10.0, 790.0), 0.4, dims).unwrap();
    assert_eq!(r, BBox::new(0.0, 480.0, 400.0, 800.0).unwrap());
    assert_eq!(
        static_crop_region(Point::new(3.0, 3.0), 1.0, dims).unwrap(),
        BBox::full(dims)
    );
    assert!(matches!(
        static_crop_region(Point::new(0.0, 0.0), 1.5, dims),
        Err(EvalError::InvalidAlpha(_))
    ));
}

fn center_refs(records: &[DatasetRecord]) -> ReferencePoints {
    records.iter().map(|r| (r.key(), r.gt.center())).collect()
}

#[test]
fn alpha_zero_is_direct_evaluation() {
    let records = fixture();
    let opts = EvalOptions::new(5);
    let direct = evaluate(&records, &answers(), EvalMode::Direct, &opts);
    let base = static_crop_baseline(&records, &center_refs(&records), 0.0, &answers(), &opts).unwrap();
    assert_eq!(base.0.summary, direct.0.summary);
    assert_eq!(base.1, direct.1);
    assert_eq!(base.0.config.alpha, Some(0.0));
}

#[test]
fn alpha_one_crop_is_the_identity() {
    let records = fixture();
    let opts = EvalOptions::new(5);
    let direct = evaluate(&records, &answers(), EvalMode::Direct, &opts).0;
    let full = static_crop_baseline(&records, &center_refs(&records), 1.0, &answers(), &opts)
        .unwrap()
        .0;
    let preds = |r: &EvalReport| r.summary.results.iter().map(|x| x.prediction).collect::<Vec<_>>();
    assert_eq!(preds(&direct), preds(&full));
    assert_eq!(direct.summary.overall, full.summary.overall);
}

#[test]
fn missing_reference_is_a_record_error() {
    let records = fixture();
    let mut refs = center_refs(&records);
    refs = records[1..]
        .iter()
        .map(|r| (r.key(), refs.get(&r.key()).unwrap()))
        .collect();
    let (report, _) = static_crop_baseline(&records, &refs, 0.4, &answers(), &EvalOptions::new(0)).unwrap();
    assert_eq!(report.summary.overall.errored, 1);
    let errored: Vec<_> = report
        .summary
        .results
        .iter()
        .filter(|r| r.error.is_some())
        .collect();
    assert_eq!(errored[0].key, records[0].key());
}

#[test]
fn sweep_shapes() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/grids");
    let coeffs = load_sweep_grid(dir.join("reward-coefficients.toml")).unwrap();
    let variants = load_sweep_grid(dir.join("tool-reward-variants.toml")).unwrap();
    let base = RewardConfig::default();
    let t = sweep(&coeffs, &base, &[1, 2], "value", |c, s| {
        Ok(c.weights.lambda_acc + s as f64)
    })
    .unwrap();
    assert_eq!(t.rows.len(), 5);
    assert!(t.rows.iter().all(|r| r.config.weights.lambda_format == 0.1));
    assert_eq!(t.rows[0].mean, Some(0.4 + 1.5));
    assert!((t.rows[0].std.unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    let t = sweep(&variants, &base, &[0], "value", |_, _| Ok(1.0)).unwrap();
    let labels: Vec<_> = t.rows.iter().map(|r| r.config.variant).collect();
    assert_eq!(
        labels,
        [
            RewardVariant::CenterOnly,
            RewardVariant::OverlapOnly,
            RewardVariant::Full
        ]
    );

    let single = SweepGrid {
        name: "one".into(),
        rows: vec![SweepRow {
            label: "default".into(),
            ..SweepRow::default()
        }],
    };
    let t = sweep(&single, &base, &[9], "value", |_, s| Ok(s as f64 / 10.0)).unwrap();
    assert_eq!((t.rows[0].mean, t.rows[0].std), (Some(0.9), Some(0.0)));

    let t = sweep(&single, &base, &[1, 2], "value", |_, s| {
        if s == 1 {
            Err("boom".into())
        } else {
            Ok(0.5)
        }
    })
    .unwrap();
    assert_eq!(t.rows[0].mean, Some(0.5));
    assert!(t.to_markdown().contains("error: boom"));
    assert!(sweep(&single, &base, &[], "value", |_, _| Ok(0.0)).is_err());
}

#[test]
fn evaluation_runner_reports_accuracy() {
    let records = fixture();
    let key = answers();
    let grid = SweepGrid {
        name: "eval".into(),
        rows: vec![SweepRow {
            label: "default".into(),
            ..SweepRow::default()
        }],
    };
    let t = sweep(
        &grid,
        &RewardConfig::default(),
        &[0],
        "accuracy",
        evaluation_runner(&records, &key, EvalMode::Full),
    )
    .unwrap();
    assert!((t.rows[0].mean.unwrap() - 8.0 / 12.0).abs() < 1e-12);
}
