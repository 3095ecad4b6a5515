use didchain_bench::{
    bench_events, bench_manufacture_sweep, bench_trace_sweep, read_csv, write_csv, BenchRow, EventsParams, SweepParams,
    TraceSweepParams,
};
use didchain_core::error::ErrorCode;
use didchain_core::events::CommitMode;

fn ops(rows: &[BenchRow]) -> Vec<(String, u64, u64, u64, Option<u64>)> {
    rows.iter()
        .map(|r| (r.event_type.clone(), r.x, r.doc_ops_create, r.doc_ops_update, r.trace_resolutions))
        .collect()
}

#[test]
fn events_defaults() {
    let rows = bench_events(&EventsParams::default()).unwrap();
    assert_eq!(rows.len(), 4 * 30);
    for r in &rows {
        let expected = match r.event_type.as_str() {
            "produce" => (1, 0),
            "ship" | "receive" => (0, 1),
            "manufacture" => (1, 2),
            other => panic!("{other}"),
        };
        assert_eq!((r.doc_ops_create, r.doc_ops_update), expected, "{r:?}");
    }
    for kind in ["produce", "ship", "receive", "manufacture"] {
        let xs: Vec<u64> = rows.iter().filter(|r| r.event_type == kind).map(|r| r.x).collect();
        assert_eq!(xs, (1..=30).collect::<Vec<_>>());
    }
    let again = bench_events(&EventsParams::default()).unwrap();
    assert_eq!(ops(&rows), ops(&again));
}

#[test]
fn events_rejects_zero_counts() {
    let params = EventsParams {
        compartments: 0,
        ..Default::default()
    };
    assert!(bench_events(&params).is_err());
}

#[test]
fn compat_limited_sweep() {
    let report = bench_manufacture_sweep(&SweepParams {
        max_n: 45,
        compat_limit: Some(39),
        ..Default::default()
    })
    .unwrap();
    assert_eq!(report.max_accepted, Some(39));
    let end = report.endpoint.unwrap();
    assert_eq!((end.n, end.error_code), (40, ErrorCode::CompartmentLimitExceeded));
    assert!(report.affine);
    for pair in report.rows.windows(2) {
        assert_eq!(pair[1].doc_ops_update - pair[0].doc_ops_update, 1);
        assert_eq!(pair[1].doc_ops_create, 1);
    }
}

#[test]
fn capacity_endpoint() {
    let report = bench_manufacture_sweep(&SweepParams {
        start: 793,
        max_n: 800,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(report.max_accepted, Some(795));
    let end = report.endpoint.unwrap();
    assert_eq!((end.n, end.error_code), (796, ErrorCode::PayloadTooLarge));
    assert!(report.affine);

    let merkle = bench_manufacture_sweep(&SweepParams {
        start: 796,
        max_n: 797,
        mode: CommitMode::MerkleRoot,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(merkle.max_accepted, Some(797));
    assert!(merkle.endpoint.is_none());
}

#[test]
fn trace_sweep_is_exactly_affine() {
    let params = TraceSweepParams {
        num_assets: 24,
        max_events: 30,
        ..Default::default()
    };
    let report = bench_trace_sweep(&params).unwrap();
    assert_eq!(report.rows.len(), 24);
    assert_eq!(report.rows[0].x, 1);
    assert_eq!(report.rows[1].x, 30);
    let fit = report.resolution_fit;
    assert_eq!(fit.r_squared, 1.0);
    assert!((fit.model.a - 2.0).abs() < 1e-9 && (fit.model.b - 1.0).abs() < 1e-9, "{fit:?}");
    for r in &report.rows {
        assert_eq!(r.trace_resolutions, Some(2 * r.x + 1));
    }
    assert!(report.time_fit.samples == 24);

    let parallel = bench_trace_sweep(&TraceSweepParams { parallel: true, ..params }).unwrap();
    assert_eq!(ops(&report.rows), ops(&parallel.rows));
}

#[test]
fn trace_sweep_needs_spread() {
    let params = TraceSweepParams {
        num_assets: 1,
        ..Default::default()
    };
    assert!(bench_trace_sweep(&params).is_err());
}

#[test]
fn csv_round_trip_of_a_real_run() {
    let rows = bench_events(&EventsParams {
        assets_per_event: 3,
        ..Default::default()
    })
    .unwrap();
    let mut out = Vec::new();
    write_csv(&rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().count(), 1 + 12);
    assert_eq!(ops(&read_csv(&text).unwrap()), ops(&rows));
}
