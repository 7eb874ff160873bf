//! Plain SVG charts: the early-observation AUC curve and per-video detection
//! timelines.

use std::fmt::Write;

use crate::eval::VideoResult;

const W: f64 = 640.0;
const H: f64 = 240.0;
const PAD: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = write!(
        out,
        r#"<rect width="{W}" height="{H}" fill="white"/><text x="{PAD}" y="20" font-family="sans-serif" font-size="13">{}</text>"#,
        escape(title)
    );
    let (x0, y0, x1) = (PAD, H - PAD, W - PAD);
    let _ = write!(
        out,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{PAD}" stroke="black"/>"#
    );
}

fn sx(u: f64) -> f64 {
    PAD + u * (W - 2.0 * PAD)
}

fn sy(v: f64) -> f64 {
    H - PAD - v * (H - 2.0 * PAD)
}

/// Line chart of AUC against observed fraction; undefined points are
/// skipped.
pub fn auc_curve_svg(curve: &[(f64, Option<f64>)]) -> String {
    let mut out = String::new();
    header(&mut out, "AUC vs. observed fraction");
    for tick in [0.0, 0.5, 1.0] {
        let _ = write!(
            out,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{tick:.1}</text><text x="{}" y="{}" font-size="10" text-anchor="middle">{tick:.1}</text>"#,
            PAD - 4.0,
            sy(tick) + 3.0,
            sx(tick),
            H - PAD + 14.0
        );
    }
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter_map(|&(f, a)| a.map(|a| (sx(f), sy(a))))
        .collect();
    if !pts.is_empty() {
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = write!(
            out,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
    }
    for (x, y) in &pts {
        let _ = write!(out, r#"<circle class="point" cx="{x:.2}" cy="{y:.2}" r="3" fill="steelblue"/>"#);
    }
    out.push_str("</svg>\n");
    out
}

/// Probability strip for one video: the online action probability per clip
/// as a line, ground-truth segments and extracted instances as bands.
pub fn timeline_svg(video: &VideoResult, class: usize) -> String {
    let mut out = String::new();
    header(&mut out, &format!("{} (label {:?})", video.video_id, video.label));
    let total = video.windows.last().map_or(1, |w| w.1).max(1) as f64;
    let fx = |frame: f64| sx(frame / total);
    let band = |out: &mut String, s: usize, e: usize, y: f64, kind: &str, color: &str| {
        let (x0, x1) = (fx(s as f64 - 1.0), fx(e as f64));
        let _ = write!(
            out,
            r#"<rect class="{kind}" x="{x0:.2}" y="{y:.2}" width="{:.2}" height="10" fill="{color}" fill-opacity="0.6"/>"#,
            x1 - x0
        );
    };
    if let Some(gt) = &video.gt_segments {
        for g in gt.iter().filter(|g| g.class == class) {
            band(&mut out, g.start, g.end, H - PAD + 6.0, "gt", "seagreen");
        }
    }
    for inst in video.instances.iter().filter(|i| i.class == class) {
        band(&mut out, inst.start_frame, inst.end_frame, H - PAD + 18.0, "instance", "darkorange");
    }
    let pts: Vec<String> = video
        .windows
        .iter()
        .zip(&video.clip_probs)
        .filter_map(|(w, p)| {
            let mid = 0.5 * (w.0 as f64 - 1.0 + w.1 as f64);
            p.get(class).map(|&v| format!("{:.2},{:.2}", fx(mid), sy(v)))
        })
        .collect();
    if !pts.is_empty() {
        let _ = write!(
            out,
            r#"<polyline class="prob" fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}
