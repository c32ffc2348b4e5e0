//! Report rendering to PNG: top-down trajectory views, 2D reprojection
//! overlays on an expanded image plane, and per-future-step error curves.
//!
//! Rendering is pure rasterization (lines, discs, rectangles on an RGB
//! buffer), so identical inputs produce identical files.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::data::{Sequence, Side};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

const BACKGROUND: Rgb<u8> = Rgb([250, 250, 250]);
const FRAME_COLOR: Rgb<u8> = Rgb([40, 40, 40]);
const CAMERA_COLOR: Rgb<u8> = Rgb([150, 150, 150]);
const GT_COLORS: [Rgb<u8>; 2] = [Rgb([30, 90, 200]), Rgb([30, 150, 60])];
const PRED_COLORS: [Rgb<u8>; 2] = [Rgb([200, 60, 30]), Rgb([200, 140, 20])];
const CURVE_COLOR: Rgb<u8> = Rgb([30, 90, 200]);
const AXIS_COLOR: Rgb<u8> = Rgb([90, 90, 90]);

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Canvas {
        Canvas { img: RgbImage::from_pixel(w, h, BACKGROUND) }
    }

    fn set(&mut self, x: i64, y: i64, color: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, color);
        }
    }

    fn line(&mut self, a: (i64, i64), b: (i64, i64), color: Rgb<u8>) {
        let (mut x, mut y) = a;
        let dx = (b.0 - a.0).abs();
        let dy = -(b.1 - a.1).abs();
        let sx = if a.0 < b.0 { 1 } else { -1 };
        let sy = if a.1 < b.1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x, y, color);
            if x == b.0 && y == b.1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn disc(&mut self, c: (i64, i64), r: i64, color: Rgb<u8>) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.set(c.0 + dx, c.1 + dy, color);
                }
            }
        }
    }

    fn rect(&mut self, a: (i64, i64), b: (i64, i64), color: Rgb<u8>) {
        self.line(a, (b.0, a.1), color);
        self.line((b.0, a.1), b, color);
        self.line(b, (a.0, b.1), color);
        self.line((a.0, b.1), a, color);
    }

    fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.img.save_with_format(path.as_ref(), image::ImageFormat::Png)?)
    }
}

/// Affine map from a data rectangle to canvas pixels, preserving aspect.
struct Mapper {
    scale: f64,
    x0: f64,
    y0: f64,
    px: f64,
    py: f64,
    flip_y: bool,
}

impl Mapper {
    fn fit(xs: &[f64], ys: &[f64], w: u32, h: u32, margin: f64, flip_y: bool) -> Mapper {
        let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &x in xs {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
        }
        for &y in ys {
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
        let span_x = (x_hi - x_lo).max(1e-6);
        let span_y = (y_hi - y_lo).max(1e-6);
        let usable_w = w as f64 * (1.0 - 2.0 * margin);
        let usable_h = h as f64 * (1.0 - 2.0 * margin);
        let scale = (usable_w / span_x).min(usable_h / span_y);
        let px = (w as f64 - scale * span_x) / 2.0;
        let py = (h as f64 - scale * span_y) / 2.0;
        Mapper { scale, x0: x_lo, y0: y_lo, px, py, flip_y }
    }

    fn map(&self, x: f64, y: f64, h: u32) -> (i64, i64) {
        let u = self.px + self.scale * (x - self.x0);
        let v = self.py + self.scale * (y - self.y0);
        let v = if self.flip_y { h as f64 - v } else { v };
        (u.round() as i64, v.round() as i64)
    }
}

fn polyline(canvas: &mut Canvas, pts: &[(i64, i64)], color: Rgb<u8>) {
    for w in pts.windows(2) {
        canvas.line(w[0], w[1], color);
    }
}

/// Top-down (x, y) view of ground-truth and predicted wrist trajectories
/// with the camera track. Ground truth is drawn with small markers,
/// predictions with large ones; the future segment starts at the square.
pub fn plot_top_down(seq: &Sequence, pred: &[Vec<Vec3>], path: impl AsRef<Path>) -> Result<()> {
    let (t_obs, f_fut) = (seq.t_obs(), seq.f_fut());
    if pred.len() != t_obs + f_fut {
        return Err(Error::Contract(format!(
            "prediction has {} frames, sequence wants {}",
            pred.len(),
            t_obs + f_fut
        )));
    }
    let (w, h) = (640u32, 640u32);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut push = |p: Vec3| {
        xs.push(p.x);
        ys.push(p.y);
    };
    for pose in &seq.obs_poses {
        push(pose.position());
    }
    for side in Side::BOTH {
        for frame in seq.obs_joints.iter().chain(&seq.fut_joints) {
            if let Some(p) = frame.position(side.wrist()) {
                push(p);
            }
        }
        for frame in pred {
            push(frame[side.wrist()]);
        }
    }
    let mapper = Mapper::fit(&xs, &ys, w, h, 0.08, true);
    let mut canvas = Canvas::new(w, h);

    let cam: Vec<(i64, i64)> =
        seq.obs_poses.iter().map(|p| mapper.map(p.position().x, p.position().y, h)).collect();
    polyline(&mut canvas, &cam, CAMERA_COLOR);
    for c in &cam {
        canvas.disc(*c, 2, CAMERA_COLOR);
    }

    for (i, side) in Side::BOTH.into_iter().enumerate() {
        let gt: Vec<(i64, i64)> = seq
            .obs_joints
            .iter()
            .chain(&seq.fut_joints)
            .filter_map(|f| f.position(side.wrist()))
            .map(|p| mapper.map(p.x, p.y, h))
            .collect();
        polyline(&mut canvas, &gt, GT_COLORS[i]);
        for p in &gt {
            canvas.disc(*p, 2, GT_COLORS[i]);
        }
        let fut: Vec<(i64, i64)> = (t_obs..t_obs + f_fut)
            .map(|k| {
                let p = pred[k][side.wrist()];
                mapper.map(p.x, p.y, h)
            })
            .collect();
        polyline(&mut canvas, &fut, PRED_COLORS[i]);
        for p in &fut {
            canvas.disc(*p, 3, PRED_COLORS[i]);
        }
        if let Some(first) = fut.first() {
            canvas.rect((first.0 - 4, first.1 - 4), (first.0 + 4, first.1 + 4), PRED_COLORS[i]);
        }
    }
    canvas.save(path)
}

/// Reprojection overlay for one observation frame: ground-truth and
/// predicted hand joints projected through that frame's camera onto a
/// canvas `expand` times the image so out-of-view joints still render. The
/// true image boundary is outlined.
pub fn plot_overlay(
    seq: &Sequence,
    pred: &[Vec<Vec3>],
    frame: usize,
    expand: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    if frame >= seq.t_obs() {
        return Err(Error::Contract(format!(
            "overlay frame {frame} outside the {} observation frames",
            seq.t_obs()
        )));
    }
    if !(1.0..=8.0).contains(&expand) {
        return Err(Error::InvalidConfig(format!("expand factor {expand} outside [1, 8]")));
    }
    if pred.len() != seq.t_obs() + seq.f_fut() {
        return Err(Error::Contract("prediction frame count mismatch".into()));
    }
    let pose = &seq.obs_poses[frame];
    let [iw, ih] = pose.image_size;
    let w = (iw as f64 * expand).round() as u32;
    let h = (ih as f64 * expand).round() as u32;
    let off_x = ((w - iw) / 2) as i64;
    let off_y = ((h - ih) / 2) as i64;
    let mut canvas = Canvas::new(w, h);
    canvas.rect((off_x, off_y), (off_x + iw as i64 - 1, off_y + ih as i64 - 1), FRAME_COLOR);

    let mut draw = |p: Vec3, color: Rgb<u8>, r: i64| {
        if let Ok(([u, v], z)) = pose.project(p) {
            if z > 0.0 {
                canvas.disc((off_x + u.round() as i64, off_y + v.round() as i64), r, color);
            }
        }
    };
    for (i, side) in Side::BOTH.into_iter().enumerate() {
        for j in side.hand_range() {
            if let Some(p) = seq.obs_joints[frame].position(j) {
                draw(p, GT_COLORS[i], 2);
            }
            draw(pred[frame][j], PRED_COLORS[i], if j == side.wrist() { 4 } else { 2 });
        }
    }
    canvas.save(path)
}

/// Polyline of a per-future-step error curve with axes; gaps where a step
/// has no defined value.
pub fn plot_error_curve(per_step: &[Option<f64>], path: impl AsRef<Path>) -> Result<()> {
    if per_step.is_empty() || per_step.iter().all(Option::is_none) {
        return Err(Error::Contract("error curve has no defined points".into()));
    }
    let (w, h) = (640u32, 360u32);
    let hi = per_step.iter().flatten().fold(0.0f64, |acc, &v| acc.max(v)).max(1e-9);
    let mut canvas = Canvas::new(w, h);
    let (left, right, top, bottom) = (60i64, 20i64, 20i64, 40i64);
    let plot_w = w as i64 - left - right;
    let plot_h = h as i64 - top - bottom;
    canvas.line((left, top), (left, top + plot_h), AXIS_COLOR);
    canvas.line((left, top + plot_h), (left + plot_w, top + plot_h), AXIS_COLOR);

    let map = |k: usize, v: f64| -> (i64, i64) {
        let x = if per_step.len() == 1 {
            left + plot_w / 2
        } else {
            left + (plot_w as f64 * k as f64 / (per_step.len() - 1) as f64).round() as i64
        };
        let y = top + plot_h - (plot_h as f64 * v / hi).round() as i64;
        (x, y)
    };
    let mut prev: Option<(i64, i64)> = None;
    for (k, v) in per_step.iter().enumerate() {
        match v {
            Some(v) => {
                let p = map(k, *v);
                canvas.disc(p, 3, CURVE_COLOR);
                if let Some(q) = prev {
                    canvas.line(q, p, CURVE_COLOR);
                }
                prev = Some(p);
            }
            None => prev = None,
        }
    }
    // Tick marks at each step and a quarter-scale grid.
    for k in 0..per_step.len() {
        let (x, _) = map(k, 0.0);
        canvas.line((x, top + plot_h), (x, top + plot_h + 4), AXIS_COLOR);
    }
    for q in 1..=4 {
        let y = top + plot_h - (plot_h as f64 * q as f64 / 4.0).round() as i64;
        canvas.line((left - 4, y), (left, y), AXIS_COLOR);
    }
    canvas.save(path)
}
