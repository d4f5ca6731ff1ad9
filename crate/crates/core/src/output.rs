//! Result files: `results.csv`, `summary.json`, `curves.svg`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{accuracy_curves, summarize_seeds, Curve, EpochRecord, RunRecord, RunStatus, SummaryTable};
use crate::error::{Error, Result};

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CURVES_SVG: &str = "curves.svg";

pub const CSV_COLUMNS: [&str; 16] = [
    "run_id",
    "optimizer",
    "lr",
    "seed",
    "data_fraction",
    "status",
    "epoch",
    "train_loss",
    "test_loss",
    "test_accuracy",
    "mean_alpha",
    "mean_update_norm",
    "mean_grad_norm",
    "mean_gain",
    "mean_eta",
    "alpha_saturation_frac",
];

/// Shortest text that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn results_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in records {
        for e in &r.epochs {
            w.write_record([
                r.run_id.clone(),
                r.optimizer.clone(),
                num(r.lr),
                r.seed.to_string(),
                num(r.data_fraction),
                r.status.as_str().to_string(),
                e.epoch.to_string(),
                num(e.train_loss),
                num(e.test_loss),
                num(e.test_accuracy),
                num(e.mean_alpha),
                num(e.mean_update_norm),
                num(e.mean_grad_norm),
                num(e.mean_gain),
                num(e.mean_eta),
                num(e.alpha_saturation_frac),
            ])
            .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Parse(e.to_string()))
}

/// Rebuild run records from `results.csv` content, in file order.
pub fn parse_results_csv(text: &[u8]) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(text);
    let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(Error::Parse(format!("unexpected header {headers:?}")));
    }
    let mut records: Vec<RunRecord> = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::Parse(e.to_string()))?;
        let at = |i: usize| &row[i];
        let f = |i: usize| {
            at(i).parse::<f64>().map_err(|_| {
                Error::Parse(format!("row {}: bad number `{}` in {}", line + 2, at(i), CSV_COLUMNS[i]))
            })
        };
        let u = |i: usize| {
            at(i).parse::<u64>().map_err(|_| {
                Error::Parse(format!("row {}: bad integer `{}` in {}", line + 2, at(i), CSV_COLUMNS[i]))
            })
        };
        let status = match at(5) {
            "COMPLETED" => RunStatus::Completed,
            "DIVERGED" => RunStatus::Diverged,
            other => return Err(Error::Parse(format!("row {}: bad status `{other}`", line + 2))),
        };
        let epoch = EpochRecord {
            epoch: u(6)? as usize,
            train_loss: f(7)?,
            test_loss: f(8)?,
            test_accuracy: f(9)?,
            mean_alpha: f(10)?,
            mean_update_norm: f(11)?,
            mean_grad_norm: f(12)?,
            mean_gain: f(13)?,
            mean_eta: f(14)?,
            alpha_saturation_frac: f(15)?,
        };
        match records.last_mut() {
            Some(r) if r.run_id == at(0) => r.epochs.push(epoch),
            _ => records.push(RunRecord {
                run_id: at(0).to_string(),
                optimizer: at(1).to_string(),
                lr: f(2)?,
                seed: u(3)?,
                data_fraction: f(4)?,
                status,
                epochs: vec![epoch],
            }),
        }
    }
    Ok(records)
}

/// Per-run headline numbers, repeated in `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub optimizer: String,
    pub lr: f64,
    pub seed: u64,
    pub data_fraction: f64,
    pub status: RunStatus,
    pub epochs: usize,
    pub final_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub summary: SummaryTable,
    pub runs: Vec<RunSummary>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn summary_file(records: &[RunRecord], reference: Option<&str>) -> Result<SummaryFile> {
    Ok(SummaryFile {
        summary: summarize_seeds(records, reference)?,
        runs: records
            .iter()
            .map(|r| RunSummary {
                run_id: r.run_id.clone(),
                optimizer: r.optimizer.clone(),
                lr: r.lr,
                seed: r.seed,
                data_fraction: r.data_fraction,
                status: r.status,
                epochs: r.epochs.len(),
                final_accuracy: finite(r.final_accuracy()),
                best_accuracy: finite(r.best_accuracy()),
            })
            .collect(),
    })
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Test accuracy against epoch, one panel per data fraction, mean line with a ±std band.
pub fn curves_svg(curves: &[Curve]) -> String {
    let mut fractions: Vec<f64> = curves.iter().map(|c| c.data_fraction).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let mut series: Vec<(String, f64)> = curves.iter().map(|c| (c.optimizer.clone(), c.lr)).collect();
    series.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    series.dedup();

    let (pw, ph, margin, legend_h) = (360.0, 260.0, 50.0, 22.0 * series.len().max(1) as f64);
    let width = margin + fractions.len().max(1) as f64 * (pw + margin);
    let height = margin * 2.0 + ph + legend_h;

    let max_epoch = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in curves {
        for &(_, m, s) in &c.points {
            lo = lo.min(m - s);
            hi = hi.max(m + s);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    let (lo, hi) = ((lo - pad).max(0.0), (hi + pad).min(1.0));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    for (pi, &frac) in fractions.iter().enumerate() {
        let x0 = margin + pi as f64 * (pw + margin);
        let y0 = margin;
        let sx = |e: f64| x0 + e / max_epoch * pw;
        let sy = |a: f64| y0 + ph - (a - lo) / (hi - lo) * ph;
        let _ = writeln!(
            svg,
            r##"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">data fraction {frac}</text>"#,
            x0 + pw / 2.0,
            y0 - 10.0
        );
        for t in 0..=4 {
            let a = lo + (hi - lo) * t as f64 / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{a:.3}</text>"#,
                x0 - 4.0,
                sy(a) + 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
            x0 + pw / 2.0,
            y0 + ph + 30.0
        );
        for e in 0..=max_epoch as usize {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{e}</text>"#,
                sx(e as f64),
                y0 + ph + 14.0
            );
        }

        for c in curves.iter().filter(|c| c.data_fraction == frac) {
            let idx = series
                .iter()
                .position(|s| s.0 == c.optimizer && s.1 == c.lr)
                .unwrap_or(0);
            let color = PALETTE[idx % PALETTE.len()];
            if c.seeds > 1 && !c.points.is_empty() {
                let upper = c.points.iter().map(|&(e, m, s)| (sx(e as f64), sy(m + s)));
                let lower = c.points.iter().rev().map(|&(e, m, s)| (sx(e as f64), sy(m - s)));
                let pts: Vec<String> = upper
                    .chain(lower)
                    .map(|(x, y)| format!("{x:.2},{y:.2}"))
                    .collect();
                let _ = writeln!(
                    svg,
                    r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                    pts.join(" ")
                );
            }
            let pts: Vec<String> = c
                .points
                .iter()
                .map(|&(e, m, _)| format!("{:.2},{:.2}", sx(e as f64), sy(m)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                pts.join(" ")
            );
        }
    }

    for (i, (name, lr)) in series.iter().enumerate() {
        let y = margin + ph + 50.0 + 20.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<line x1="{margin}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="3"/>"#,
            margin + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{} (lr {lr})</text>"#,
            margin + 26.0,
            y + 4.0,
            xml_escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

/// Write all three files into `dir`, creating it if needed.
///
/// `summary.json` and `curves.svg` are skipped for an empty record set, which
/// still gets a header-only CSV.
pub fn emit_outputs(records: &[RunRecord], reference: Option<&str>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, RESULTS_CSV, &results_csv(records)?)?;
    if records.is_empty() {
        return Ok(());
    }
    let summary = summary_file(records, reference)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?;
    write(dir, SUMMARY_JSON, format!("{json}\n").as_bytes())?;
    write(dir, CURVES_SVG, curves_svg(&accuracy_curves(records)).as_bytes())
}

pub fn read_results(dir: &Path) -> Result<Vec<RunRecord>> {
    let path = dir.join(RESULTS_CSV);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    parse_results_csv(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::EpochAccumulator;

    fn record(opt: &str, seed: u64, accs: &[f64]) -> RunRecord {
        RunRecord {
            run_id: format!("{opt}_s{seed}"),
            optimizer: opt.into(),
            lr: 1e-3,
            seed,
            data_fraction: 0.25,
            status: RunStatus::Completed,
            epochs: accs
                .iter()
                .enumerate()
                .map(|(e, &a)| EpochAccumulator::new().finish(e, 0.1 + a / 3.0, a))
                .collect(),
        }
    }

    #[test]
    fn empty_records_give_header_only() {
        let bytes = results_csv(&[]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), CSV_COLUMNS.join(",") + "\n");
    }

    #[test]
    fn csv_round_trips_exactly() {
        let recs = vec![
            record("a", 0, &[0.1 + 0.2, 1.0 / 3.0]),
            record("b", 1, &[0.7, 0.75, 0.8]),
        ];
        let parsed = parse_results_csv(&results_csv(&recs).unwrap()).unwrap();
        assert_eq!(parsed.len(), 2);
        for (p, r) in parsed.iter().zip(&recs) {
            assert_eq!(p.run_id, r.run_id);
            for (pe, re) in p.epochs.iter().zip(&r.epochs) {
                assert_eq!(pe.test_accuracy.to_bits(), re.test_accuracy.to_bits());
                assert_eq!(pe.test_loss.to_bits(), re.test_loss.to_bits());
                // NaN train loss survives as NaN.
                assert!(pe.train_loss.is_nan() && re.train_loss.is_nan());
            }
        }
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(parse_results_csv(b"a,b\n1,2\n").is_err());
        let mut bytes = results_csv(&[record("a", 0, &[0.5])]).unwrap();
        bytes.extend_from_slice(b"x,a,oops,0,1,COMPLETED,0,0,0,0,0,0,0,0,0,0\n");
        assert!(parse_results_csv(&bytes).is_err());
    }

    #[test]
    fn single_run_has_no_band() {
        let svg = curves_svg(&accuracy_curves(&[record("a", 0, &[0.5, 0.6])]));
        assert!(svg.contains("class=\"mean\""));
        assert!(!svg.contains("class=\"band\""));
    }

    #[test]
    fn three_seeds_draw_a_band() {
        let recs: Vec<RunRecord> = (0..3).map(|s| record("a", s, &[0.5 + 0.01 * s as f64, 0.6])).collect();
        let svg = curves_svg(&accuracy_curves(&recs));
        assert_eq!(svg.matches("class=\"band\"").count(), 1);
    }

    #[test]
    fn emit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record("a", 0, &[0.5]), record("a", 1, &[0.7])];
        emit_outputs(&recs, Some("a"), dir.path()).unwrap();
        for f in [RESULTS_CSV, SUMMARY_JSON, CURVES_SVG] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(read_results(dir.path()).unwrap().len(), 2);
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, b"x").unwrap();
        assert!(matches!(
            emit_outputs(&[], None, &file.join("sub")),
            Err(Error::Io { .. })
        ));
    }
}
