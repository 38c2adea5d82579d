//! Plot data and SVG rendering: score box plots, convergence traces and
//! adversarial images.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stats::{CampaignReport, SummaryStats};
use crate::attack::{AttackDirection, AttackRecord};
use crate::imaging::{encode_png, PixelPerturbation, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPlotData {
    pub direction: AttackDirection,
    pub before: SummaryStats,
    pub after: SummaryStats,
}

/// Replaces anything outside `[A-Za-z0-9._-]` so ids are safe file stems.
pub fn file_stem(image_id: &str) -> String {
    image_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

const WIDTH: f64 = 420.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn y_px(score: f64) -> f64 {
    TOP + (1.0 - score.clamp(0.0, 1.0)) * (HEIGHT - TOP - BOTTOM)
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    // score axis
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        y_px(1.0),
        y_px(0.0)
    );
    for tick in 0..=10 {
        let v = tick as f64 / 10.0;
        let y = y_px(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#,
            LEFT - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            LEFT - 7.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">confidence score</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_box(s: &mut String, center: f64, stats: &SummaryStats, label: &str) {
    let half = 40.0;
    let (q1, q3, med) = (y_px(stats.q1), y_px(stats.q3), y_px(stats.median));
    let (wl, wh) = (y_px(stats.whisker_low), y_px(stats.whisker_high));
    let _ = writeln!(
        s,
        r#"<line x1="{center}" y1="{wh:.2}" x2="{center}" y2="{q3:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{center}" y1="{q1:.2}" x2="{center}" y2="{wl:.2}" stroke="black"/>"#
    );
    for y in [wl, wh] {
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black"/>"#,
            center - half / 2.0,
            center + half / 2.0
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{}" y="{q3:.2}" width="{}" height="{:.2}" fill="#9ecae1" stroke="black"/>"##,
        center - half,
        2.0 * half,
        (q1 - q3).max(0.5)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{med:.2}" x2="{}" y2="{med:.2}" stroke="black" stroke-width="2"/>"#,
        center - half,
        center + half
    );
    for &o in &stats.outliers {
        let _ = writeln!(
            s,
            r#"<circle cx="{center}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"#,
            y_px(o)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{center}" y="{}" text-anchor="middle">{} (n={})</text>"#,
        HEIGHT - BOTTOM + 20.0,
        escape(label),
        stats.count
    );
}

pub fn boxplot_svg(data: &BoxPlotData) -> String {
    let mut s = svg_open(&format!("{} attack", data.direction));
    let span = WIDTH - LEFT - RIGHT;
    draw_box(&mut s, LEFT + span * 0.3, &data.before, "before");
    draw_box(&mut s, LEFT + span * 0.7, &data.after, "after");
    s.push_str("</svg>\n");
    s
}

pub fn trace_svg(image_id: &str, trace: &[f64]) -> String {
    let mut s = svg_open(&format!("{image_id}: best score per iteration"));
    let span = WIDTH - LEFT - RIGHT;
    let last = trace.len().saturating_sub(1).max(1) as f64;
    let x_px = |i: usize| LEFT + span * i as f64 / last;
    let points: Vec<String> = trace
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{:.2},{:.2}", x_px(i), y_px(v)))
        .collect();
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        y_px(0.0),
        WIDTH - RIGHT,
        y_px(0.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">iteration (0..{})</text>"#,
        LEFT + span / 2.0,
        HEIGHT - 15.0,
        trace.len().saturating_sub(1)
    );
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#d62728" stroke-width="2" points="{}"/>"##,
        points.join(" ")
    );
    s.push_str("</svg>\n");
    s
}

fn write(path: PathBuf, contents: &[u8]) -> io::Result<PathBuf> {
    fs::write(&path, contents)?;
    Ok(path)
}

/// Writes `boxplot_<direction>.json` and `.svg` for each direction with
/// attacked rows. The JSON holds the report's own [`SummaryStats`].
pub fn emit_boxplots(report: &CampaignReport, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (&direction, dir) in &report.directions {
        let (Some(before), Some(after)) = (&dir.before, &dir.after) else {
            continue;
        };
        let data = BoxPlotData {
            direction,
            before: before.clone(),
            after: after.clone(),
        };
        let stem = format!("boxplot_{}", direction.as_str());
        let json = serde_json::to_vec_pretty(&data).map_err(io::Error::other)?;
        written.push(write(out_dir.join(format!("{stem}.json")), &json)?);
        written.push(write(
            out_dir.join(format!("{stem}.svg")),
            boxplot_svg(&data).as_bytes(),
        )?);
    }
    Ok(written)
}

/// Writes `<id>_trace.csv` (`iteration,best_score`) and `<id>_trace.svg`.
pub fn emit_trace(image_id: &str, trace: &[f64], out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let stem = file_stem(image_id);
    let mut csv = String::from("iteration,best_score\n");
    for (i, v) in trace.iter().enumerate() {
        let _ = writeln!(csv, "{i},{v}");
    }
    Ok(vec![
        write(out_dir.join(format!("{stem}_trace.csv")), csv.as_bytes())?,
        write(
            out_dir.join(format!("{stem}_trace.svg")),
            trace_svg(image_id, trace).as_bytes(),
        )?,
    ])
}

/// Writes `<id>_adv.png`: the source with the winning pixel applied.
pub fn emit_adversarial(
    image_id: &str,
    source: &RgbImage,
    perturbation: &PixelPerturbation,
    out_dir: &Path,
) -> io::Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let adversarial = source.apply_perturbation(perturbation).map_err(io::Error::other)?;
    let bytes = encode_png(&adversarial).map_err(io::Error::other)?;
    write(out_dir.join(format!("{}_adv.png", file_stem(image_id))), &bytes)
}

/// Box plots for the report, plus a trace and (when its source image is
/// supplied) an adversarial PNG for each record.
pub fn emit_plots(
    report: &CampaignReport,
    records: &[AttackRecord],
    source: impl Fn(&str) -> Option<RgbImage>,
    out_dir: &Path,
) -> io::Result<Vec<PathBuf>> {
    let mut written = emit_boxplots(report, out_dir)?;
    for record in records {
        written.extend(emit_trace(&record.image_id, &record.trace, out_dir)?);
        if let Some(image) = source(&record.image_id) {
            written.push(emit_adversarial(
                &record.image_id,
                &image,
                &record.best_perturbation,
                out_dir,
            )?);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::stats::summarize;
    use crate::imaging::decode_png;
    use crate::synthetic::tissue_tile;

    #[test]
    fn trace_csv_has_one_row_per_iteration() {
        let dir = tempfile::tempdir().unwrap();
        emit_trace("img 1", &[0.49, 0.2, 0.08, 0.08], dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("img_1_trace.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1..], ["0,0.49", "1,0.2", "2,0.08", "3,0.08"]);
        let svg = fs::read_to_string(dir.path().join("img_1_trace.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    }

    #[test]
    fn boxplot_json_equals_summary() {
        let dir = tempfile::tempdir().unwrap();
        let before = summarize(&[0.96, 0.97, 0.99, 0.9]).unwrap();
        let after = summarize(&[0.02, 0.14, 0.3, 0.83, 0.0001]).unwrap();
        let mut report = CampaignReport::default();
        report.directions.insert(
            AttackDirection::MitosisToNormal,
            crate::campaign::stats::DirectionReport {
                total: 5,
                early_converged: 0,
                failed: 1,
                success: 4,
                strong_success: 0,
                errored: 0,
                attacked: 5,
                success_rate: Some(0.8),
                strong_success_rate: Some(0.0),
                before: Some(before.clone()),
                after: Some(after.clone()),
                score_change: None,
                mean_iterations: None,
                top_colors: vec![],
            },
        );
        emit_boxplots(&report, dir.path()).unwrap();
        let json = fs::read(dir.path().join("boxplot_mitosis-to-normal.json")).unwrap();
        let data: BoxPlotData = serde_json::from_slice(&json).unwrap();
        assert_eq!(data.before, before);
        assert_eq!(data.after, after);
        assert!(dir.path().join("boxplot_mitosis-to-normal.svg").exists());
    }

    #[test]
    fn adversarial_png_differs_in_one_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let src = tissue_tile(64, 64, 1);
        let path = emit_adversarial("t", &src, &PixelPerturbation::new(3, 4, 255, 255, 0), dir.path()).unwrap();
        let adv = decode_png(&fs::read(path).unwrap()).unwrap();
        assert_eq!(adv.diff_count(&src), Some(1));
    }

    #[test]
    fn file_stems_are_sanitized() {
        assert_eq!(file_stem("a/b c.png"), "a_b_c.png");
    }
}
