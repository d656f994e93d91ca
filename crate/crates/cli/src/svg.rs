//! Trace plot: original and reconstruction as polylines, detected peaks as
//! circles, labeled peaks as dashed vertical lines.

use std::fmt::Write as _;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub original: f64,
    pub reconstruction: f64,
    pub peak: bool,
}

struct Frame {
    len: usize,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn x(&self, i: usize) -> f64 {
        let span = (self.len.max(2) - 1) as f64;
        MARGIN + i as f64 / span * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.lo) / (self.hi - self.lo) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn polyline(out: &mut String, frame: &Frame, values: impl Iterator<Item = f64>, class: &str, color: &str) {
    let pts: Vec<String> = values
        .enumerate()
        .map(|(i, v)| format!("{:.2},{:.2}", frame.x(i), frame.y(v)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
        pts.join(" ")
    );
}

pub fn render_trace(id: u64, trace: &[TracePoint], truths: &[usize]) -> String {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in trace {
        lo = lo.min(p.original).min(p.reconstruction);
        hi = hi.max(p.original).max(p.reconstruction);
    }
    if !(hi > lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    let frame = Frame {
        len: trace.len(),
        lo,
        hi,
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<title>record {id}</title>"#);
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let top = MARGIN;
    let bottom = HEIGHT - MARGIN;
    for &t in truths.iter().filter(|&&t| t < trace.len()) {
        let x = frame.x(t);
        let _ = writeln!(
            out,
            r#"<line class="truth" x1="{x:.2}" y1="{top:.2}" x2="{x:.2}" y2="{bottom:.2}" stroke="green" stroke-dasharray="4 3"/>"#
        );
    }
    polyline(&mut out, &frame, trace.iter().map(|p| p.original), "original", "black");
    polyline(&mut out, &frame, trace.iter().map(|p| p.reconstruction), "reconstruction", "steelblue");
    for (i, p) in trace.iter().enumerate().filter(|(_, p)| p.peak) {
        let _ = writeln!(
            out,
            r#"<circle class="peak" cx="{:.2}" cy="{:.2}" r="4" fill="red"/>"#,
            frame.x(i),
            frame.y(p.original)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="13">record {id}: original (black), reconstruction (blue), detected (red), labeled (green)</text>"#
    );
    out.push_str("</svg>\n");
    out
}
