//! Jitterplots: activation on x, a stable pseudo-random height on y.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::store::{ClassIndex, UnitActivations};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Marker {
    Square,
    Triangle,
    Diamond,
    Cross,
    Circle,
}

impl Marker {
    pub const CYCLE: [Marker; 5] = [Marker::Square, Marker::Triangle, Marker::Diamond, Marker::Cross, Marker::Circle];

    pub fn name(self) -> &'static str {
        match self {
            Marker::Square => "square",
            Marker::Triangle => "triangle",
            Marker::Diamond => "diamond",
            Marker::Cross => "cross",
            Marker::Circle => "circle",
        }
    }
}

impl std::str::FromStr for Marker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Marker::CYCLE
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown marker '{s}'")))
    }
}

/// A named vertical rule, e.g. a class threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub name: String,
    pub x: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterPoint {
    pub image: usize,
    pub x: f32,
    pub y: f64,
    pub class: u32,
    pub marker: Option<Marker>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JitterplotData {
    pub unit_id: usize,
    pub points: Vec<JitterPoint>,
    pub highlight: Vec<(u32, Marker)>,
    pub annotations: Vec<Annotation>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Height in [0, 1) for one point. Depends only on (seed, unit, image), so
/// subsetting the images never moves the others.
pub fn jitter_y(seed: u64, unit: usize, image: usize) -> f64 {
    let h = splitmix64(seed ^ splitmix64(unit as u64) ^ splitmix64((image as u64).rotate_left(32) ^ 0x5851_f42d));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

pub fn jitterplot_data(
    acts: &UnitActivations,
    labels: &ClassIndex,
    highlight: &[(u32, Marker)],
    annotations: &[Annotation],
    seed: u64,
) -> Result<JitterplotData> {
    if acts.len() != labels.n_images() {
        return Err(Error::Shape(format!(
            "unit {} has {} activations, labels cover {} images",
            acts.unit_id,
            acts.len(),
            labels.n_images()
        )));
    }
    if let Some(&(c, _)) = highlight.iter().find(|(c, _)| labels.slot_of_id(*c).is_none()) {
        return Err(Error::UnknownClass(c));
    }
    if let Some(a) = annotations.iter().find(|a| !a.x.is_finite()) {
        return Err(Error::InvalidParameter(format!("annotation '{}' has non-finite x", a.name)));
    }
    let points = acts
        .values
        .iter()
        .enumerate()
        .map(|(image, &x)| {
            let class = labels.class_of(image);
            JitterPoint {
                image,
                x,
                y: jitter_y(seed, acts.unit_id, image),
                class,
                marker: highlight.iter().find(|(c, _)| *c == class).map(|&(_, m)| m),
            }
        })
        .collect();
    Ok(JitterplotData {
        unit_id: acts.unit_id,
        points,
        highlight: highlight.to_vec(),
        annotations: annotations.to_vec(),
    })
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 320.0;
const LEFT: f64 = 50.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn marker_svg(out: &mut String, marker: Option<Marker>, x: f64, y: f64, color: &str, class: u32) {
    let r = 3.0;
    let _ = match marker {
        None => writeln!(out, r##"<circle class="pt" data-class="{class}" cx="{x:.2}" cy="{y:.2}" r="2" fill="#999999" fill-opacity="0.5"/>"##),
        Some(Marker::Circle) => writeln!(out, r#"<circle class="pt hl" data-class="{class}" cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}"/>"#),
        Some(Marker::Square) => writeln!(
            out,
            r#"<rect class="pt hl" data-class="{class}" x="{:.2}" y="{:.2}" width="{}" height="{}" fill="{color}"/>"#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        Some(Marker::Triangle) => writeln!(
            out,
            r#"<polygon class="pt hl" data-class="{class}" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        ),
        Some(Marker::Diamond) => writeln!(
            out,
            r#"<polygon class="pt hl" data-class="{class}" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            x,
            y - r,
            x + r,
            y,
            x,
            y + r,
            x - r,
            y
        ),
        Some(Marker::Cross) => writeln!(
            out,
            r#"<path class="pt hl" data-class="{class}" d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}" stroke="{color}" stroke-width="1.5"/>"#,
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        ),
    };
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG 1.1 document. Background points are drawn first, highlighted
/// classes on top in the order given.
pub fn render_svg(data: &JitterplotData) -> String {
    let xs = data.points.iter().map(|p| p.x as f64).chain(data.annotations.iter().map(|a| a.x));
    let (mut lo, mut hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo <= 0.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = (hi - lo) * 0.02;
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - lo) / (hi - lo) * plot_w;
    let sy = |y: f64| TOP + (1.0 - y) * plot_h;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{LEFT}" y="18" font-family="sans-serif" font-size="13">unit {} ({} images)</text>"#,
        data.unit_id,
        data.points.len()
    );
    let base = TOP + plot_h;
    let _ = writeln!(
        out,
        r#"<line class="axis" x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        LEFT + plot_w
    );
    for t in 0..=5 {
        let v = lo + (hi - lo) * t as f64 / 5.0;
        let x = sx(v);
        let _ = writeln!(
            out,
            r#"<line class="tick" x1="{x:.2}" y1="{base}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            base + 4.0,
            base + 16.0,
            super::format_sig6((v * 1000.0).round() / 1000.0)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">activation</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 8.0
    );

    let _ = writeln!(out, r#"<g class="points">"#);
    for p in data.points.iter().filter(|p| p.marker.is_none()) {
        marker_svg(&mut out, None, sx(p.x as f64), sy(p.y), "", p.class);
    }
    for (i, &(class, marker)) in data.highlight.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for p in data.points.iter().filter(|p| p.class == class) {
            marker_svg(&mut out, Some(marker), sx(p.x as f64), sy(p.y), color, class);
        }
    }
    let _ = writeln!(out, "</g>");

    for a in &data.annotations {
        let x = sx(a.x);
        let _ = writeln!(
            out,
            r##"<line class="rule" x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{base}" stroke="#000000" stroke-dasharray="4,3"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" font-family="sans-serif" font-size="10">{}</text>"#,
            x + 3.0,
            TOP + 10.0,
            escape(&a.name)
        );
    }
    for (i, &(class, marker)) in data.highlight.iter().enumerate() {
        let y = TOP + 12.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text class="legend" x="{}" y="{:.2}" font-family="sans-serif" font-size="10" fill="{}" text-anchor="end">class {class} ({})</text>"#,
            WIDTH - RIGHT,
            y + 4.0,
            PALETTE[i % PALETTE.len()],
            marker.name()
        );
    }
    let _ = writeln!(out, "</svg>");
    out
}

pub fn jitterplot(
    acts: &UnitActivations,
    labels: &ClassIndex,
    highlight: &[(u32, Marker)],
    annotations: &[Annotation],
    seed: u64,
) -> Result<String> {
    Ok(render_svg(&jitterplot_data(acts, labels, highlight, annotations, seed)?))
}
