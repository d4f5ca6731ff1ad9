use std::collections::BTreeMap;
use std::path::Path;

use neuroplastic::diagnostics::{mean_std, RunRecord, RunStatus};
use neuroplastic::experiment::{run_experiment, ExperimentConfig};
use neuroplastic::output::{self, emit_outputs, read_results, SummaryFile, CSV_COLUMNS};

fn synthetic_records() -> Vec<RunRecord> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
    let cfg = ExperimentConfig::from_file(&path).unwrap();
    let (train, test) = cfg.load_data(path.parent()).unwrap();
    run_experiment(&cfg, &train, &test, &|_| {}).unwrap()
}

#[test]
fn csv_round_trips_and_matches_summary_json() {
    let records = synthetic_records();
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&records, Some("gradient_only"), dir.path()).unwrap();

    let back = read_results(dir.path()).unwrap();
    assert_eq!(back, records);

    let text = std::fs::read_to_string(dir.path().join(output::SUMMARY_JSON)).unwrap();
    let summary: SummaryFile = serde_json::from_str(&text).unwrap();
    assert_eq!(summary.runs.len(), back.len());
    for (run, rec) in summary.runs.iter().zip(&back) {
        assert_eq!(run.run_id, rec.run_id);
        assert_eq!(run.epochs, rec.epochs.len());
        let last = rec.epochs.last().unwrap().test_accuracy;
        assert_eq!(run.final_accuracy.unwrap().to_bits(), last.to_bits());
    }
    for row in &summary.summary.rows {
        let finals: Vec<f64> = back
            .iter()
            .filter(|r| r.optimizer == row.optimizer && r.lr == row.lr && r.data_fraction == row.data_fraction)
            .map(|r| r.final_accuracy())
            .collect();
        let (m, s) = mean_std(&finals);
        assert_eq!(row.final_accuracy_mean.to_bits(), m.to_bits());
        assert_eq!(row.final_accuracy_std.to_bits(), s.to_bits());
    }
}

fn points(line: &str) -> Vec<(f64, f64)> {
    let start = line.find("points=\"").unwrap() + 8;
    let end = start + line[start..].find('"').unwrap();
    line[start..end]
        .split(' ')
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect()
}

#[test]
fn svg_band_is_mean_plus_minus_std_from_csv() {
    let records = synthetic_records();
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&records, None, dir.path()).unwrap();
    let back = read_results(dir.path()).unwrap();

    // (fraction, optimizer) -> per-epoch (mean, std) recomputed from the CSV
    let mut stats: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for frac in [0.5, 1.0] {
        for opt in ["adam", "gradient_only", "neuroplastic"] {
            let runs: Vec<&RunRecord> = back
                .iter()
                .filter(|r| r.optimizer == opt && r.data_fraction == frac)
                .collect();
            assert_eq!(runs.len(), 2, "{opt} at {frac}");
            let per_epoch = (0..3)
                .map(|e| mean_std(&runs.iter().map(|r| r.epochs[e].test_accuracy).collect::<Vec<_>>()))
                .collect();
            stats.insert((format!("{frac:?}"), opt.to_string()), per_epoch);
        }
    }

    let svg = std::fs::read_to_string(dir.path().join(output::CURVES_SVG)).unwrap();
    let bands: Vec<&str> = svg.lines().filter(|l| l.contains("class=\"band\"")).collect();
    let means: Vec<&str> = svg.lines().filter(|l| l.contains("class=\"mean\"")).collect();
    assert_eq!(bands.len(), 6);
    assert_eq!(means.len(), 6);

    // Curves are drawn panel by panel (fraction ascending), optimizers in name order.
    let order: Vec<&(String, String)> = stats.keys().collect();
    let mut all_acc = Vec::new();
    let mut all_y = Vec::new();
    for (i, key) in order.iter().enumerate() {
        let band = points(bands[i]);
        let mean = points(means[i]);
        let s = &stats[*key];
        assert_eq!(mean.len(), 3);
        assert_eq!(band.len(), 6);
        for e in 0..3 {
            let upper = band[e];
            let lower = band[5 - e];
            assert_eq!(upper.0, mean[e].0);
            assert_eq!(lower.0, mean[e].0);
            all_acc.push((s[e].0, s[e].1, upper.1, mean[e].1, lower.1));
        }
        all_y.push(mean[0].1);
    }
    // The y axis is affine in accuracy: y = c - k * acc. Fit on the extremes.
    let lo = all_acc.iter().cloned().fold(all_acc[0], |a, b| if b.0 < a.0 { b } else { a });
    let hi = all_acc.iter().cloned().fold(all_acc[0], |a, b| if b.0 > a.0 { b } else { a });
    let k = (lo.3 - hi.3) / (hi.0 - lo.0);
    assert!(k > 0.0);
    for &(m, s, yu, ym, yl) in &all_acc {
        let tol = 0.011;
        assert!((ym - (lo.3 - k * (m - lo.0))).abs() < tol, "mean line off: {ym}");
        assert!((yu - (ym - k * s)).abs() < tol, "upper band off by {}", yu - (ym - k * s));
        assert!((yl - (ym + k * s)).abs() < tol, "lower band off by {}", yl - (ym + k * s));
    }
}

#[test]
fn empty_run_set_writes_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&[], None, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(output::RESULTS_CSV)).unwrap();
    assert_eq!(text, format!("{}\n", CSV_COLUMNS.join(",")));
    assert!(!dir.path().join(output::SUMMARY_JSON).exists());
    assert!(read_results(dir.path()).unwrap().is_empty());
}

#[test]
fn diverged_run_keeps_nan_in_csv_and_null_in_json() {
    let mut records = synthetic_records();
    records.truncate(1);
    records[0].status = RunStatus::Diverged;
    records[0].epochs.last_mut().unwrap().test_accuracy = f64::NAN;
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&records, None, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(output::RESULTS_CSV)).unwrap();
    assert!(text.contains("DIVERGED"));
    assert!(text.contains("NaN"));
    let back = read_results(dir.path()).unwrap();
    assert!(back[0].epochs.last().unwrap().test_accuracy.is_nan());
    let summary: SummaryFile =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(output::SUMMARY_JSON)).unwrap()).unwrap();
    assert_eq!(summary.runs[0].final_accuracy, None);
}
