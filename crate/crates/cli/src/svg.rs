//! Minimal SVG writer.

use std::fmt::Write as _;

use trajrisk::data::{AgentCategory, SemanticRegionType};
use trajrisk::geometry::Point;

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Document in pixel coordinates.
#[derive(Debug, Clone)]
pub struct Doc {
    pub width: f64,
    pub height: f64,
    body: String,
}

impl Doc {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn raw(&mut self, element: &str) {
        self.body.push_str(element);
        self.body.push('\n');
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, attrs: &str, title: Option<&str>) {
        let t = title.map(|t| format!("<title>{}</title>", escape(t))).unwrap_or_default();
        self.raw(&format!(
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" {attrs}>{t}</rect>"#
        ));
    }

    pub fn text(&mut self, x: f64, y: f64, attrs: &str, s: &str) {
        self.raw(&format!(r#"<text x="{x:.2}" y="{y:.2}" {attrs}>{}</text>"#, escape(s)));
    }

    /// `comment` goes into an XML comment after the root element opens.
    pub fn finish(self, comment: &str) -> String {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#,
            w = self.width.ceil(),
            h = self.height.ceil()
        );
        let _ = writeln!(out, "<!-- {} -->", comment.replace("--", "- -"));
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        out.push_str(&self.body);
        out.push_str("</svg>\n");
        out
    }
}

/// World-to-pixel mapping with y pointing up.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub min: Point,
    pub max: Point,
    pub scale: f64,
    pub pad: f64,
}

impl View {
    /// Bounding box of `points` grown by `margin` meters.
    pub fn fit(points: impl IntoIterator<Item = Point>, margin: f64, scale: f64) -> Self {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min = Point::new(min.x.min(p.x), min.y.min(p.y));
            max = Point::new(max.x.max(p.x), max.y.max(p.y));
        }
        if !(min.x <= max.x) {
            min = Point::ORIGIN;
            max = Point::ORIGIN;
        }
        Self {
            min: Point::new(min.x - margin, min.y - margin),
            max: Point::new(max.x + margin, max.y + margin),
            scale,
            pad: 10.0,
        }
    }

    pub fn doc(&self) -> Doc {
        Doc::new(
            (self.max.x - self.min.x) * self.scale + 2.0 * self.pad,
            (self.max.y - self.min.y) * self.scale + 2.0 * self.pad,
        )
    }

    pub fn px(&self, p: Point) -> (f64, f64) {
        (
            (p.x - self.min.x) * self.scale + self.pad,
            (self.max.y - p.y) * self.scale + self.pad,
        )
    }

    fn coords(&self, pts: &[Point]) -> String {
        pts.iter()
            .map(|&p| {
                let (x, y) = self.px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn polyline(&self, doc: &mut Doc, pts: &[Point], attrs: &str) {
        doc.raw(&format!(r#"<polyline points="{}" fill="none" {attrs}/>"#, self.coords(pts)));
    }

    pub fn polygon(&self, doc: &mut Doc, pts: &[Point], attrs: &str, title: &str) {
        doc.raw(&format!(
            r#"<polygon points="{}" {attrs}><title>{}</title></polygon>"#,
            self.coords(pts),
            escape(title)
        ));
    }

    pub fn line(&self, doc: &mut Doc, a: Point, b: Point, attrs: &str) {
        let ((x1, y1), (x2, y2)) = (self.px(a), self.px(b));
        doc.raw(&format!(
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" {attrs}/>"#
        ));
    }

    pub fn circle(&self, doc: &mut Doc, c: Point, r: f64, attrs: &str, title: &str) {
        let (x, y) = self.px(c);
        doc.raw(&format!(
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" {attrs}><title>{}</title></circle>"#,
            escape(title)
        ));
    }
}

pub fn category_color(c: AgentCategory) -> &'static str {
    match c {
        AgentCategory::Pedestrian => "#1f77b4",
        AgentCategory::Car => "#d62728",
        AgentCategory::Rider => "#2ca02c",
    }
}

pub fn region_color(r: SemanticRegionType) -> &'static str {
    use SemanticRegionType::*;
    match r {
        RoadSegment => "#9e9e9e",
        DrivableArea => "#bdbdbd",
        RoadLanes => "#b0b0b0",
        RoadBlock => "#757575",
        StopLines => "#ff9800",
        ZebraRegion => "#fafafa",
        Sidewalk => "#e6d5b8",
        Carpark => "#c5cae9",
    }
}

/// White to red.
pub fn heat(a: f64) -> String {
    let a = if a.is_finite() { a.clamp(0.0, 1.0) } else { 1.0 };
    let g = (255.0 * (1.0 - a)).round() as u8;
    format!("#ff{g:02x}{g:02x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_flips_y() {
        let v = View::fit([Point::new(0.0, 0.0), Point::new(10.0, 5.0)], 0.0, 2.0);
        assert_eq!(v.px(Point::new(0.0, 5.0)), (10.0, 10.0));
        assert_eq!(v.px(Point::new(10.0, 0.0)), (30.0, 20.0));
        let d = v.doc();
        assert_eq!((d.width, d.height), (40.0, 30.0));
    }

    #[test]
    fn heat_scale() {
        assert_eq!(heat(0.0), "#ffffff");
        assert_eq!(heat(1.0), "#ff0000");
        assert_eq!(heat(f64::NAN), "#ff0000");
        assert_eq!(heat(-3.0), "#ffffff");
    }

    #[test]
    fn document_is_well_formed() {
        let v = View::fit([Point::new(-1.0, -1.0), Point::new(1.0, 1.0)], 1.0, 10.0);
        let mut d = v.doc();
        v.polyline(&mut d, &[Point::ORIGIN, Point::new(1.0, 1.0)], r#"stroke="black""#);
        v.circle(&mut d, Point::ORIGIN, 3.0, r#"fill="red""#, "a<b & c");
        d.text(1.0, 2.0, "", "x > y");
        let text = d.finish("hash -- x");
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 1);
    }
}
