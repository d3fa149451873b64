use std::fmt::Write as _;
use std::path::Path;

use super::{Confusion, MetricsReport, RocCurve, RocPoint};
use crate::error::{Error, Result};
use crate::io;

pub const METRICS_HEADER: &str = "direction,strategy,tp,fp,tn,fn,accuracy,recall,precision,f1,auc";
pub const ROC_HEADER: &str = "fpr,tpr,threshold";

fn csv_err(what: &str, e: impl std::fmt::Display) -> Error {
    Error::Ingestion {
        path: what.into(),
        reason: e.to_string(),
    }
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(METRICS_HEADER.split(',')).expect("in-memory write");
    for r in reports {
        let c = &r.counts;
        w.write_record([
            r.direction.clone(),
            r.strategy.clone(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            r.accuracy.to_string(),
            r.recall.to_string(),
            r.precision.to_string(),
            r.f1.to_string(),
            r.auc.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

/// Reports from metrics CSV text. Ratios are read back as written; the
/// undefined-ratio flags are recomputed from the counts.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsReport>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_err("metrics csv", e))?;
    if headers.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(csv_err("metrics csv", format!("header must be {METRICS_HEADER:?}")));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err("metrics csv", e))?;
        let int = |i: usize| record[i].parse::<u64>().map_err(|e| csv_err("metrics csv", format!("column {i}: {e}")));
        let real = |i: usize| record[i].parse::<f64>().map_err(|e| csv_err("metrics csv", format!("column {i}: {e}")));
        let counts = Confusion {
            tp: int(2)?,
            fp: int(3)?,
            tn: int(4)?,
            fn_: int(5)?,
        };
        let mut r = MetricsReport::from_counts(&record[0], &record[1], counts, real(10)?)?;
        r.accuracy = real(6)?;
        r.recall = real(7)?;
        r.precision = real(8)?;
        r.f1 = real(9)?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_metrics_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    io::write(path, metrics_csv(reports).as_bytes())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsReport>> {
    parse_metrics_csv(&io::read_to_string(path)?)
}

pub fn roc_csv(roc: &RocCurve) -> String {
    let mut out = format!("{ROC_HEADER}\n");
    for p in &roc.points {
        let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold);
    }
    out
}

pub fn parse_roc_csv(text: &str) -> Result<RocCurve> {
    let mut lines = text.lines();
    if lines.next() != Some(ROC_HEADER) {
        return Err(csv_err("roc csv", format!("header must be {ROC_HEADER:?}")));
    }
    let points = lines
        .map(|line| {
            let v: Vec<f64> = line
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| csv_err("roc csv", format!("{line:?}: {e}")))?;
            match v[..] {
                [fpr, tpr, threshold] => Ok(RocPoint { fpr, tpr, threshold }),
                _ => Err(csv_err("roc csv", format!("{line:?}: expected 3 fields"))),
            }
        })
        .collect::<Result<_>>()?;
    Ok(RocCurve { points })
}

pub fn write_roc_csv(path: &Path, roc: &RocCurve) -> Result<()> {
    io::write(path, roc_csv(roc).as_bytes())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// ROC plot with one polyline per `(label, curve, auc)`.
pub fn roc_svg(title: &str, curves: &[(&str, &RocCurve, f64)]) -> String {
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 60.0);
    let (pw, ph) = (WIDTH - left - right, HEIGHT - top - bottom);
    let x = |fpr: f64| left + fpr * pw;
    let y = |tpr: f64| top + (1.0 - tpr) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{t:.1}</text>"#, x(t), top + ph + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t:.1}</text>"#, left - 6.0, y(t) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#,
        left + pw / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">True positive rate</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (k, (label, roc, auc)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = roc.points.iter().map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + ph - 20.0 - 20.0 * (curves.len() - 1 - k) as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            x(0.55),
            x(0.62)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{} (AUC {auc:.3})</text>"#,
            x(0.64),
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
