use fefet_core::crossbar::{Encoding, InjectorCounts};
use fefet_sim::harness::{
    parse_report_csv, report_csv, report_table, trend_violation, LadderRow, ScenarioReport, Step,
};

fn ladder(id: &str, levels: u8, encoding: Encoding, means: [f64; 6]) -> ScenarioReport {
    let mut rows = Vec::new();
    for (i, &m) in means.iter().enumerate() {
        let step = if i == 0 { None } else { Some(Step::ALL[i - 1]) };
        rows.push(LadderRow {
            step,
            active: Step::ALL[..i].to_vec(),
            accuracies: vec![m + 0.1, m - 0.1],
            mean: m,
            std: 0.1414,
            counts: InjectorCounts { d2d: i.min(1) as u64 * 10, ..Default::default() },
        });
    }
    ScenarioReport {
        scenario: id.into(),
        levels,
        encoding,
        vg_read: if encoding == Encoding::Differential { 0.75 } else { 1.45 },
        cold_temp: 233.0,
        flicker_sigma: 0.007,
        c2c_sigma: 0.012,
        d2d_note: if levels == 2 { "dG=15%".into() } else { "meas.".into() },
        seeds: vec![1, 2],
        config_hash: format!("hash{id}"),
        timestamp: None,
        rows,
    }
}

fn three() -> Vec<ScenarioReport> {
    vec![
        ladder("A", 2, Encoding::Differential, [95.9, 95.5, 95.5, 95.4, 95.4, 95.3]),
        ladder("B", 4, Encoding::Differential, [97.3, 97.3, 95.6, 24.7, 24.6, 24.6]),
        ladder("C", 4, Encoding::OffsetReferenced, [97.5, 93.2, 11.4, 11.3, 11.3, 11.3]),
    ]
}

#[test]
fn table_has_six_rows_and_three_columns() {
    let t = report_table(&three());
    let lines: Vec<&str> = t.lines().collect();
    // Title, header, rule, six ladder rows.
    let body = &lines[3..9];
    assert!(body[0].starts_with("Baseline (300K)"));
    assert!(body[1].starts_with("Device-to-device G variation [dG=15% / meas. / meas.]"));
    assert!(body[2].starts_with("Device aging"));
    assert!(body[3].starts_with("Temperature 233K"));
    assert!(body[4].starts_with("Flicker noise (sigma=0.7%)"));
    assert!(body[5].starts_with("C2C variation (sigma=1.2%)"));
    for l in body {
        assert_eq!(l.matches(" | ").count(), 3, "{l}");
    }
    assert!(lines[1].contains("Scenario A (2-level") && lines[1].contains("Scenario C (4-level, OffsetReferenced"));
    assert!(body[3].contains("24.70 ± 0.14 [46.6]"));
    assert!(body[0].contains("95.90 ± 0.14 [96.4]"));
    assert!(t.contains("config B: hashB"));
    assert!(t.contains("96.4%") && t.contains("95.5%"));
}

#[test]
fn csv_is_byte_stable_and_round_trips() {
    for r in three() {
        let a = report_csv(&r).unwrap();
        assert_eq!(a, report_csv(&r.clone()).unwrap());
        let back = parse_report_csv(&a).unwrap();
        assert_eq!(back, r);
        assert_eq!(report_csv(&back).unwrap(), a);
    }
    assert_eq!(report_table(&three()), report_table(&three()));
}

#[test]
fn synthetic_ladders_follow_trends() {
    for r in three() {
        assert_eq!(trend_violation(&r), None, "{}", r.scenario);
    }
    let bad = ladder("B", 4, Encoding::Differential, [97.3, 97.3, 95.6, 80.0, 80.0, 80.0]);
    assert!(trend_violation(&bad).is_some());
    let bad = ladder("C", 4, Encoding::OffsetReferenced, [97.5, 93.2, 40.0, 11.3, 11.3, 11.3]);
    assert!(trend_violation(&bad).is_some());
    let bad = ladder("A", 2, Encoding::Differential, [95.9, 95.5, 94.5, 94.4, 94.4, 94.3]);
    assert!(trend_violation(&bad).is_some());
}

proptest::proptest! {
    #[test]
    fn csv_round_trips_any_ladder(
        accs in proptest::collection::vec(proptest::collection::vec(0.0f64..100.0, 3), 1..7),
        vg in 0.3f64..1.5,
        seed0 in 0u64..1000,
    ) {
        let mut r = ladder("A", 2, Encoding::Differential, [0.0; 6]);
        r.vg_read = vg;
        r.seeds = (seed0..seed0 + 3).collect();
        r.rows.truncate(accs.len());
        for (row, a) in r.rows.iter_mut().zip(&accs) {
            let (m, s) = fefet_sim::harness::mean_std(a);
            row.accuracies = a.clone();
            row.mean = m;
            row.std = s;
        }
        let text = report_csv(&r).unwrap();
        proptest::prop_assert_eq!(parse_report_csv(&text).unwrap(), r);
    }
}
