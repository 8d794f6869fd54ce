//! Deterministic SVG figures: the initial-velocity scatter and orbit plots.

use std::collections::BTreeMap;
use std::fmt::Write;

use rug::Float;

use crate::catalog::SolutionRecord;
use crate::dynamics::{initial_state, x_index, y_index, VelocityPair, DIM};
use crate::precision::{PrecisionConfig, Real};
use crate::taylor::{integrate, IntegrationStatus, Observer, TaylorStep};

use super::PipelineError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 64.0;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const BODY_STYLES: [(&str, &str); 3] = [
    ("#d62728", "none"),
    ("#1f77b4", "6 3"),
    ("#2ca02c", "2 2"),
];

/// Axis-aligned data window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Window {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let w = WIDTH - 2.0 * MARGIN;
        let h = HEIGHT - 2.0 * MARGIN;
        let px = MARGIN + (x - self.x_lo) / (self.x_hi - self.x_lo) * w;
        let py = HEIGHT - MARGIN - (y - self.y_lo) / (self.y_hi - self.y_lo) * h;
        (px, py)
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<title>{title}</title>");
    let _ = writeln!(
        out,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
}

fn axes(out: &mut String, win: &Window, x_label: &str, y_label: &str) {
    let (x0, y0) = win.map(win.x_lo, win.y_lo);
    let (x1, y1) = win.map(win.x_hi, win.y_hi);
    let _ = writeln!(
        out,
        "<rect x=\"{x0:.2}\" y=\"{y1:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>",
        x1 - x0,
        y0 - y1
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = win.x_lo + f * (win.x_hi - win.x_lo);
        let yv = win.y_lo + f * (win.y_hi - win.y_lo);
        let (px, _) = win.map(xv, win.y_lo);
        let (_, py) = win.map(win.x_lo, yv);
        let _ = writeln!(
            out,
            "<line x1=\"{px:.2}\" y1=\"{y0:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            y0 + 5.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{px:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{xv:.3}</text>",
            y0 + 20.0
        );
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{x0:.2}\" y2=\"{py:.2}\" stroke=\"black\"/>",
            x0 - 5.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{yv:.3}</text>",
            x0 - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\">{x_label}</text>",
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{y_label}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
}

fn parse_f64(text: &str) -> f64 {
    text.parse().unwrap_or(f64::NAN)
}

/// Marker per record at `(vx, vy)`, one colour per provenance source.
pub fn render_scatter(records: &[SolutionRecord], win: &Window) -> String {
    let mut out = String::new();
    svg_open(&mut out, "initial velocities");
    axes(&mut out, win, "vx", "vy");
    let mut by_source: BTreeMap<&str, Vec<&SolutionRecord>> = BTreeMap::new();
    for r in records {
        by_source.entry(r.provenance.source.as_str()).or_default().push(r);
    }
    for (k, (source, recs)) in by_source.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(out, "<g class=\"{source}\" fill=\"{colour}\">");
        for r in recs {
            let (x, y) = (parse_f64(&r.vx), parse_f64(&r.vy));
            if x < win.x_lo || x > win.x_hi || y < win.y_lo || y > win.y_hi || x.is_nan() || y.is_nan()
            {
                continue;
            }
            let (px, py) = win.map(x, y);
            let _ = writeln!(out, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\"/>");
        }
        let _ = writeln!(out, "</g>");
        let ly = MARGIN - 40.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{colour}\"/>",
            WIDTH - MARGIN - 90.0,
            ly
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{source}</text>",
            WIDTH - MARGIN - 80.0,
            ly + 4.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Positions of the three bodies at `samples + 1` equally spaced times.
struct Sampler {
    times: Vec<Real>,
    next: usize,
    buf: Vec<Real>,
    points: Vec<[(f64, f64); 3]>,
}

impl Observer for Sampler {
    fn observe(&mut self, step: &TaylorStep) {
        let end = step.end_time();
        while self.next < self.times.len() && self.times[self.next] <= end {
            let tau = Float::with_val(step.precision(), &self.times[self.next] - &step.t0);
            step.eval_into(&tau, &mut self.buf);
            let p = |b: usize| (self.buf[x_index(b)].to_f64(), self.buf[y_index(b)].to_f64());
            self.points.push([p(0), p(1), p(2)]);
            self.next += 1;
        }
    }
}

/// Samples one period of `record`'s orbit.
pub fn sample_orbit(
    record: &SolutionRecord,
    cfg: &PrecisionConfig,
    samples: usize,
) -> Result<Vec<[(f64, f64); 3]>, PipelineError> {
    let ctx = cfg.context();
    let parse = |s: &str| {
        ctx.parse(s)
            .map_err(|e| PipelineError::Job(format!("record field '{s}': {e}")))
    };
    let v = VelocityPair::new(parse(&record.vx)?, parse(&record.vy)?)
        .map_err(|e| PipelineError::Job(e.to_string()))?;
    let period = parse(&record.t)?;
    let start = initial_state(&v, &ctx);
    let samples = samples.max(2);
    let times: Vec<Real> = (0..=samples)
        .map(|k| Float::with_val(ctx.bits(), &period * k as u32) / samples as u32)
        .collect();
    let u0 = |b: usize| (start.u[x_index(b)].to_f64(), start.u[y_index(b)].to_f64());
    let mut sampler = Sampler {
        times,
        next: 1,
        buf: (0..DIM).map(|_| ctx.zero()).collect(),
        points: vec![[u0(0), u0(1), u0(2)]],
    };
    let out = integrate(&start, &period, cfg, &mut [&mut sampler])
        .map_err(|e| PipelineError::Job(e.to_string()))?;
    if out.status != IntegrationStatus::ReachedEnd {
        return Err(PipelineError::Job(format!(
            "orbit integration ended with {}",
            out.status.code()
        )));
    }
    Ok(sampler.points)
}

/// Three polylines, one per body, in a square frame fitted to the data.
pub fn render_orbit_points(points: &[[(f64, f64); 3]], title: &str) -> String {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points.iter().flatten() {
        lo = lo.min(p.0).min(p.1);
        hi = hi.max(p.0).max(p.1);
    }
    if !lo.is_finite() || !hi.is_finite() || hi <= lo {
        lo = -1.0;
        hi = 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let win = Window {
        x_lo: lo - pad,
        x_hi: hi + pad,
        y_lo: lo - pad,
        y_hi: hi + pad,
    };
    let mut out = String::new();
    svg_open(&mut out, title);
    axes(&mut out, &win, "x", "y");
    for (b, (colour, dash)) in BODY_STYLES.iter().enumerate() {
        let mut path = String::new();
        for p in points {
            let (px, py) = win.map(p[b].0, p[b].1);
            let _ = write!(path, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(
            out,
            "<polyline class=\"body{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" stroke-dasharray=\"{dash}\" points=\"{}\"/>",
            b + 1,
            path.trim_end()
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn render_orbit(
    record: &SolutionRecord,
    cfg: &PrecisionConfig,
    samples: usize,
) -> Result<String, PipelineError> {
    let points = sample_orbit(record, cfg, samples)?;
    let title = format!("orbit {} T={}", record.signature, &record.t[..record.t.len().min(12)]);
    Ok(render_orbit_points(&points, &title))
}
