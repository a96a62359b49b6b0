//! Learning-curve plots as standalone SVG files.
//!
//! One image per (task, scenario) with the episode-end return of every
//! variant drawn as a polyline over episodes. Output depends only on the
//! metrics rows, so identical input gives identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dyna::Variant;
use crate::envsim::Scenario;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn colour(v: Variant) -> &'static str {
    match v {
        Variant::Mbrl => "#1f77b4",
        Variant::Mfrl => "#d62728",
    }
}

/// Per (task, scenario), per variant: (episode, return) at each episode's
/// last logged step.
pub type Curves = BTreeMap<(u8, Scenario), BTreeMap<Variant, Vec<(usize, f64)>>>;

pub fn episode_curves(rows: &[MetricsRow]) -> Curves {
    let mut last: BTreeMap<(u8, Scenario, Variant, usize), (usize, f64)> = BTreeMap::new();
    for r in rows {
        let key = (r.task_id, r.scenario, r.variant, r.episode);
        match last.get(&key) {
            Some(&(step, _)) if step > r.step => {}
            _ => {
                last.insert(key, (r.step, r.episodic_return));
            }
        }
    }
    let mut curves = Curves::new();
    for ((task, scenario, variant, episode), (_, ret)) in last {
        curves
            .entry((task, scenario))
            .or_default()
            .entry(variant)
            .or_default()
            .push((episode, ret));
    }
    curves
}

/// Round-number axis ticks covering [lo, hi].
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

pub fn render_panel(
    task: u8,
    scenario: Scenario,
    series: &BTreeMap<Variant, Vec<(usize, f64)>>,
) -> String {
    let points = series.values().flatten();
    let (mut x_max, mut y_min, mut y_max) = (1usize, f64::INFINITY, f64::NEG_INFINITY);
    for &(e, r) in points {
        x_max = x_max.max(e);
        y_min = y_min.min(r);
        y_max = y_max.max(r);
    }
    y_max = y_max.min(0.0).max(y_min + 1e-6);
    if y_max <= y_min {
        y_min = y_max - 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_lo, y_hi) = (y_min - pad, (y_max + pad).min(0.0).max(y_max));
    let (x_lo, x_hi) = (1.0, (x_max as f64).max(2.0));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * pw;
    let sy = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">Task {task}, {scenario}</text>"#,
        WIDTH / 2.0
    )
    .unwrap();
    writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    )
    .unwrap();
    for y in ticks(y_lo, y_hi, 6) {
        let py = sy(y);
        writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            py + 4.0,
            fmt_tick(y)
        )
        .unwrap();
    }
    for x in ticks(x_lo, x_hi, 8) {
        let px = sx(x);
        writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            fmt_tick(x)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">episode</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">episodic return (K·h)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    )
    .unwrap();
    for (i, (variant, pts)) in series.iter().enumerate() {
        let c = colour(*variant);
        let path: Vec<String> = pts
            .iter()
            .map(|&(e, r)| format!("{:.2},{:.2}", sx(e as f64), sy(r)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        )
        .unwrap();
        for p in &path {
            let (x, y) = p.split_once(',').unwrap();
            writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{c}"/>"#).unwrap();
        }
        let ly = TOP + 16.0 + 16.0 * i as f64;
        let lx = LEFT + pw - 90.0;
        writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{c}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            variant.label().to_uppercase()
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.fract().abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        let t = format!("{v:.3}");
        t.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub fn panel_file_name(task: u8, scenario: Scenario) -> String {
    format!("task{task}_{scenario}.svg")
}

/// Renders every panel of `rows` into `out_dir`, returning the written paths.
pub fn plot_rows(rows: &[MetricsRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::Metrics {
            line: 2,
            detail: "metrics file has no data rows".into(),
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for ((task, scenario), series) in episode_curves(rows) {
        let path = out_dir.join(panel_file_name(task, scenario));
        std::fs::write(&path, render_panel(task, scenario, &series))
            .map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn plot_file(metrics_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    plot_rows(&metrics::load(metrics_path)?, out_dir)
}
