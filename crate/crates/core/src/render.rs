//! Deterministic scene renderings: an annotated top-down SVG and a merged
//! PNG with a top-down panel next to a fixed isometric view.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain_synth::fnv1a;
use crate::geometry::{obb_from_object, point_in_polygon, Point};
use crate::scene::{Scene, SceneObject};

const PANEL: u32 = 512;
const MARGIN: f64 = 36.0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid render options: {0}")]
    InvalidOptions(String),
    #[error("encoding image: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub px_per_meter: f64,
    pub grid_step: f64,
    pub label_boxes: bool,
    pub merged: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { px_per_meter: 80.0, grid_step: 1.0, label_boxes: true, merged: false }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.px_per_meter > 0.0 && self.px_per_meter.is_finite()) {
            return Err(RenderError::InvalidOptions("px_per_meter must be positive".into()));
        }
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return Err(RenderError::InvalidOptions("grid_step must be positive".into()));
        }
        Ok(())
    }
}

/// Stable per-uid color.
pub fn uid_color(uid: &str) -> [u8; 3] {
    let h = fnv1a(uid);
    let hue = (h % 360) as f64;
    hsl_to_rgb(hue, 0.65, 0.5)
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> [u8; 3] {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [to(r), to(g), to(b)]
}

fn bounds(scene: &Scene) -> (Point, Point) {
    scene.room.footprint().iter().fold(
        ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), &(x, z)| ((lo.0.min(x), lo.1.min(z)), (hi.0.max(x), hi.1.max(z))),
    )
}

/// Maps floor coordinates (x right, z down) to canvas pixels.
#[derive(Debug, Clone, Copy)]
struct TopView {
    origin: Point,
    scale: f64,
}

impl TopView {
    fn px(&self, p: Point) -> Point {
        (MARGIN + (p.0 - self.origin.0) * self.scale, MARGIN + (p.1 - self.origin.1) * self.scale)
    }
}

fn fmt(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn grid_lines(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Pixel corners of each object's footprint in the top-down view, in scene order.
pub fn topdown_boxes(scene: &Scene, opts: &RenderOptions) -> Vec<(String, [Point; 4])> {
    let (lo, _) = bounds(scene);
    let view = TopView { origin: lo, scale: opts.px_per_meter };
    scene
        .objects
        .iter()
        .map(|o| (o.uid.clone(), obb_from_object(o).corners().map(|c| view.px(c))))
        .collect()
}

pub fn render_topdown(scene: &Scene, opts: &RenderOptions) -> Result<String, RenderError> {
    opts.validate()?;
    let (lo, hi) = bounds(scene);
    let view = TopView { origin: lo, scale: opts.px_per_meter };
    let w = (hi.0 - lo.0) * opts.px_per_meter + 2.0 * MARGIN;
    let h = (hi.1 - lo.1) * opts.px_per_meter + 2.0 * MARGIN;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        fmt(w),
        fmt(h),
        fmt(w),
        fmt(h)
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    let floor: Vec<String> = scene
        .room
        .footprint()
        .iter()
        .map(|&p| {
            let q = view.px(p);
            format!("{},{}", fmt(q.0), fmt(q.1))
        })
        .collect();
    svg.push_str(&format!(
        "<polygon class=\"floor\" points=\"{}\" fill=\"#eeeae2\" stroke=\"#333333\" stroke-width=\"2\"/>\n",
        floor.join(" ")
    ));
    svg.push_str("<g class=\"grid\" stroke=\"#b8b8b8\" stroke-width=\"1\">\n");
    for x in grid_lines(lo.0, hi.0, opts.grid_step) {
        let (a, b) = (view.px((x, lo.1)), view.px((x, hi.1)));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>\n",
            fmt(a.0),
            fmt(a.1),
            fmt(b.0),
            fmt(b.1)
        ));
    }
    for z in grid_lines(lo.1, hi.1, opts.grid_step) {
        let (a, b) = (view.px((lo.0, z)), view.px((hi.0, z)));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>\n",
            fmt(a.0),
            fmt(a.1),
            fmt(b.0),
            fmt(b.1)
        ));
    }
    svg.push_str("</g>\n<g class=\"grid-labels\" font-family=\"monospace\" font-size=\"11\" fill=\"#555555\">\n");
    for x in grid_lines(lo.0, hi.0, opts.grid_step) {
        let p = view.px((x, lo.1));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt(p.0),
            fmt(p.1 - 8.0),
            fmt(x)
        ));
    }
    for z in grid_lines(lo.1, hi.1, opts.grid_step) {
        let p = view.px((lo.0, z));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(p.0 - 6.0),
            fmt(p.1 + 4.0),
            fmt(z)
        ));
    }
    svg.push_str("</g>\n");
    for (obj, (_, corners)) in scene.objects.iter().zip(topdown_boxes(scene, opts)) {
        let [r, g, b] = uid_color(&obj.uid);
        let pts: Vec<String> = corners.iter().map(|q| format!("{},{}", fmt(q.0), fmt(q.1))).collect();
        svg.push_str(&format!(
            "<polygon class=\"bbox\" data-uid=\"{}\" points=\"{}\" fill=\"#{r:02x}{g:02x}{b:02x}\" fill-opacity=\"0.45\" stroke=\"#{r:02x}{g:02x}{b:02x}\" stroke-width=\"2\"/>\n",
            xml_escape(&obj.uid),
            pts.join(" ")
        ));
        if opts.label_boxes {
            let c = view.px((obj.position.x, obj.position.z));
            svg.push_str(&format!(
                "<text class=\"label\" x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#111111\">{}</text>\n",
                fmt(c.0),
                fmt(c.1 + 3.0),
                xml_escape(&obj.description)
            ));
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

// --- raster ---------------------------------------------------------------

/// 3x5 glyphs, one row per entry, bit 2 = leftmost column.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [7, 4, 4, 4, 7],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [7, 4, 5, 5, 7],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 7],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [7, 5, 5, 5, 7],
        'P' => [7, 5, 7, 4, 4],
        'Q' => [7, 5, 5, 7, 1],
        'R' => [6, 5, 6, 5, 5],
        'S' => [7, 4, 7, 1, 7],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '_' => [0, 0, 0, 0, 7],
        _ => [0; 5],
    }
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Self { img: RgbImage::from_pixel(w, h, Rgb([255, 255, 255])) }
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn pixel_range(&self, pts: &[Point]) -> Option<(i64, i64, i64, i64)> {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in pts {
            x0 = x0.min(p.0);
            y0 = y0.min(p.1);
            x1 = x1.max(p.0);
            y1 = y1.max(p.1);
        }
        let (w, h) = (self.img.width() as i64, self.img.height() as i64);
        let r = (x0.floor().max(0.0) as i64, y0.floor().max(0.0) as i64, (x1.ceil() as i64).min(w - 1), (y1.ceil() as i64).min(h - 1));
        (r.0 <= r.2 && r.1 <= r.3).then_some(r)
    }

    /// Fill any simple polygon, sampling pixel centers.
    fn fill(&mut self, pts: &[Point], c: [u8; 3]) {
        let Some((x0, y0, x1, y1)) = self.pixel_range(pts) else { return };
        for y in y0..=y1 {
            for x in x0..=x1 {
                if point_in_polygon((x as f64 + 0.5, y as f64 + 0.5), pts) {
                    self.put(x, y, c);
                }
            }
        }
    }

    fn line(&mut self, a: Point, b: Point, c: [u8; 3]) {
        let (mut x0, mut y0) = (a.0.round() as i64, a.1.round() as i64);
        let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn outline(&mut self, pts: &[Point], c: [u8; 3]) {
        for i in 0..pts.len() {
            self.line(pts[i], pts[(i + 1) % pts.len()], c);
        }
    }

    fn text(&mut self, x: f64, y: f64, text: &str, c: [u8; 3]) {
        let (x, y) = (x.round() as i64, y.round() as i64);
        for (i, ch) in text.chars().enumerate() {
            let rows = glyph(ch);
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        self.put(x + 4 * i as i64 + col, y + r as i64, c);
                    }
                }
            }
        }
    }
}

fn shade(c: [u8; 3], k: f64) -> [u8; 3] {
    c.map(|v| (v as f64 * k).round().clamp(0.0, 255.0) as u8)
}

fn draw_topdown_panel(canvas: &mut Canvas, scene: &Scene, opts: &RenderOptions) {
    let (lo, hi) = bounds(scene);
    let span = (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-6);
    let scale = (PANEL as f64 - 2.0 * MARGIN) / span;
    let view = TopView { origin: lo, scale };
    let floor: Vec<Point> = scene.room.footprint().iter().map(|&p| view.px(p)).collect();
    canvas.fill(&floor, [238, 234, 226]);
    let grid = [184, 184, 184];
    for x in grid_lines(lo.0, hi.0, opts.grid_step) {
        canvas.line(view.px((x, lo.1)), view.px((x, hi.1)), grid);
        let p = view.px((x, lo.1));
        canvas.text(p.0 - 2.0, p.1 - 12.0, &fmt(x), [85, 85, 85]);
    }
    for z in grid_lines(lo.1, hi.1, opts.grid_step) {
        canvas.line(view.px((lo.0, z)), view.px((hi.0, z)), grid);
        let p = view.px((lo.0, z));
        canvas.text(p.0 - 4.0 * fmt(z).len() as f64 - 6.0, p.1 - 2.0, &fmt(z), [85, 85, 85]);
    }
    canvas.outline(&floor, [51, 51, 51]);
    for o in &scene.objects {
        let c = uid_color(&o.uid);
        let pts = obb_from_object(o).corners().map(|p| view.px(p));
        canvas.fill(&pts, shade(c, 1.25));
        canvas.outline(&pts, c);
        if opts.label_boxes {
            let q = view.px((o.position.x, o.position.z));
            let label: String = o.uid.chars().take(14).collect();
            canvas.text(q.0 - 2.0 * label.len() as f64, q.1 - 2.0, &label, [17, 17, 17]);
        }
    }
}

const COS30: f64 = 0.866_025_403_784_438_6;

fn iso(p: (f64, f64, f64)) -> Point {
    ((p.0 - p.2) * COS30, (p.0 + p.2) * 0.5 - p.1)
}

/// Isometric painter's order: ascending `x + y + z` of the box center
/// (the camera looks from the `+x +y +z` octant), ties by uid.
pub fn isometric_draw_order(scene: &Scene) -> Vec<String> {
    let mut keyed: Vec<(f64, &str)> = scene
        .objects
        .iter()
        .map(|o| (o.position.x + o.position.y + o.position.z, o.uid.as_str()))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    keyed.into_iter().map(|(_, u)| u.to_string()).collect()
}

fn box_faces(o: &SceneObject) -> Vec<(Vec<(f64, f64, f64)>, f64)> {
    let obb = obb_from_object(o);
    let c = obb.corners();
    let (y0, y1) = (obb.bottom(), obb.top());
    let mut faces = Vec::new();
    for i in 0..4 {
        let (a, b) = (c[i], c[(i + 1) % 4]);
        // Outward normal of a CCW footprint edge.
        let n = (b.1 - a.1, -(b.0 - a.0));
        if n.0 + n.1 > 1e-12 {
            let quad = vec![(a.0, y0, a.1), (b.0, y0, b.1), (b.0, y1, b.1), (a.0, y1, a.1)];
            faces.push((quad, if n.0 > n.1 { 0.8 } else { 0.65 }));
        }
    }
    faces.push((c.iter().map(|p| (p.0, y1, p.1)).collect(), 1.0));
    faces
}

fn draw_isometric_panel(canvas: &mut Canvas, scene: &Scene) {
    let floor3: Vec<(f64, f64, f64)> = scene.room.footprint().iter().map(|&(x, z)| (x, 0.0, z)).collect();
    let ceiling = scene.room.ceiling_height();
    // Fit floor plus full ceiling-height prisms into the panel.
    let mut pts: Vec<Point> = floor3.iter().map(|&p| iso(p)).collect();
    pts.extend(floor3.iter().map(|&(x, _, z)| iso((x, ceiling, z))));
    let (mut u0, mut v0, mut u1, mut v1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &pts {
        u0 = u0.min(p.0);
        v0 = v0.min(p.1);
        u1 = u1.max(p.0);
        v1 = v1.max(p.1);
    }
    let scale = (PANEL as f64 - 2.0 * MARGIN) / (u1 - u0).max(v1 - v0).max(1e-6);
    let off = (PANEL as f64 + MARGIN - u0 * scale, MARGIN - v0 * scale);
    let to_px = |p: (f64, f64, f64)| {
        let q = iso(p);
        (off.0 + q.0 * scale, off.1 + q.1 * scale)
    };
    let floor: Vec<Point> = floor3.iter().map(|&p| to_px(p)).collect();
    canvas.fill(&floor, [226, 222, 214]);
    canvas.outline(&floor, [51, 51, 51]);
    let order = isometric_draw_order(scene);
    for uid in &order {
        let o = scene.object(uid).expect("uid from scene");
        let base = uid_color(uid);
        for (quad, k) in box_faces(o) {
            let px: Vec<Point> = quad.iter().map(|&p| to_px(p)).collect();
            canvas.fill(&px, shade(base, k));
            canvas.outline(&px, shade(base, 0.5));
        }
    }
}

/// Left: top-down view with grid and boxes. Right: isometric view.
pub fn render_merged(scene: &Scene, opts: &RenderOptions) -> Result<Vec<u8>, RenderError> {
    opts.validate()?;
    let mut canvas = Canvas::new(2 * PANEL, PANEL);
    draw_topdown_panel(&mut canvas, scene, opts);
    draw_isometric_panel(&mut canvas, scene);
    for y in 0..PANEL as i64 {
        canvas.put(PANEL as i64, y, [120, 120, 120]);
    }
    let mut out = Cursor::new(Vec::new());
    canvas.img.write_to(&mut out, ImageFormat::Png).map_err(|e| RenderError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Top-down only, rasterized at the panel size.
pub fn render_topdown_png(scene: &Scene, opts: &RenderOptions) -> Result<Vec<u8>, RenderError> {
    opts.validate()?;
    let mut canvas = Canvas::new(PANEL, PANEL);
    draw_topdown_panel(&mut canvas, scene, opts);
    let mut out = Cursor::new(Vec::new());
    canvas.img.write_to(&mut out, ImageFormat::Png).map_err(|e| RenderError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{RoomGeometry, Vec3};

    fn room4() -> Scene {
        Scene::empty(RoomGeometry::rectangle(4.0, 4.0, 2.8, "bedroom", "r"))
    }

    #[test]
    fn empty_room_has_five_by_five_grid_and_no_boxes() {
        let svg = render_topdown(&room4(), &RenderOptions::default()).unwrap();
        assert_eq!(svg.matches("<line ").count(), 10);
        assert_eq!(svg.matches("class=\"bbox\"").count(), 0);
        assert_eq!(svg.matches("class=\"floor\"").count(), 1);
    }

    #[test]
    fn bed_corners_match_analytic_values() {
        let mut s = room4();
        s.objects.push(SceneObject::new(
            "bed",
            "double bed",
            Vec3::new(2.0, 0.5, 2.0),
            std::f64::consts::FRAC_PI_2,
            Vec3::new(2.0, 1.0, 1.0),
        ));
        let boxes = topdown_boxes(&s, &RenderOptions::default());
        assert_eq!(boxes.len(), 1);
        // A quarter turn swaps the extents: 1 m along x, 2 m along z.
        let mut xs: Vec<f64> = boxes[0].1.iter().map(|p| ((p.0 - MARGIN) / 80.0 * 1e6).round() / 1e6).collect();
        let mut zs: Vec<f64> = boxes[0].1.iter().map(|p| ((p.1 - MARGIN) / 80.0 * 1e6).round() / 1e6).collect();
        xs.sort_by(f64::total_cmp);
        zs.sort_by(f64::total_cmp);
        assert_eq!(xs, [1.5, 1.5, 2.5, 2.5]);
        assert_eq!(zs, [1.0, 1.0, 3.0, 3.0]);
        let svg = render_topdown(&s, &RenderOptions::default()).unwrap();
        assert_eq!(svg.matches("class=\"bbox\"").count(), 1);
        assert!(svg.contains(">double bed</text>"));
    }

    #[test]
    fn lamp_is_painted_after_its_table() {
        let mut s = room4();
        s.objects.push(SceneObject::new("z_table", "side table", Vec3::new(2.0, 0.3, 2.0), 0.0, Vec3::new(0.6, 0.6, 0.6)));
        s.objects.push(SceneObject::new("a_lamp", "lamp", Vec3::new(2.0, 0.85, 2.0), 0.0, Vec3::new(0.3, 0.5, 0.3)));
        assert_eq!(isometric_draw_order(&s), ["z_table", "a_lamp"]);
    }

    #[test]
    fn outputs_are_deterministic() {
        let mut s = room4();
        s.objects.push(SceneObject::new("sofa_1", "sofa", Vec3::new(2.0, 0.45, 1.0), 0.3, Vec3::new(2.2, 0.9, 0.95)));
        let o = RenderOptions::default();
        assert_eq!(render_topdown(&s, &o).unwrap(), render_topdown(&s, &o).unwrap());
        let a = render_merged(&s, &o).unwrap();
        assert_eq!(a, render_merged(&s, &o).unwrap());
        assert_eq!(&a[1..4], b"PNG");
        let img = image::load_from_memory(&a).unwrap();
        assert_eq!((img.width(), img.height()), (1024, 512));
    }

    #[test]
    fn bad_options_are_rejected() {
        let o = RenderOptions { px_per_meter: 0.0, ..RenderOptions::default() };
        assert!(render_topdown(&room4(), &o).is_err());
    }
}
