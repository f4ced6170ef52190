//! Rasterization helpers for defect geometry.

use ndarray::Array2;

fn stamp_disk(region: &mut Array2<bool>, cy: f32, cx: f32, radius: f32) {
    let (h, w) = region.dim();
    let r = radius.max(0.5);
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil() as usize).min(h - 1);
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(w - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dy = y as f32 - cy;
            let dx = x as f32 - cx;
            if dy * dy + dx * dx <= r * r {
                region[[y, x]] = true;
            }
        }
    }
}

/// Stamp disks along a segment so the stroke is connected.
pub fn thick_segment(region: &mut Array2<bool>, from: (f32, f32), to: (f32, f32), radius: f32) {
    let (y0, x0) = from;
    let (y1, x1) = to;
    let len = ((y1 - y0).powi(2) + (x1 - x0).powi(2)).sqrt();
    let steps = (len / 0.5).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f32 / steps as f32;
        stamp_disk(region, y0 + t * (y1 - y0), x0 + t * (x1 - x0), radius);
    }
}

/// One-pixel-wide curved stroke with constant curvature `bend`.
pub fn thin_curve(region: &mut Array2<bool>, start: (f32, f32), angle: f32, bend: f32, len: f32) {
    let (h, w) = region.dim();
    let (mut y, mut x) = start;
    let mut theta = angle;
    let step = 0.5f32;
    let steps = (len / step).ceil() as usize;
    for _ in 0..steps {
        let yi = y.round();
        let xi = x.round();
        if yi >= 0.0 && xi >= 0.0 && (yi as usize) < h && (xi as usize) < w {
            region[[yi as usize, xi as usize]] = true;
        }
        y += step * theta.sin();
        x += step * theta.cos();
        theta += bend * step / len;
    }
}

/// Right triangle cut off one corner: 0=top-left, 1=top-right,
/// 2=bottom-left, 3=bottom-right.
pub fn corner_wedge(region: &mut Array2<bool>, corner: u8, leg: f32) {
    let (h, w) = region.dim();
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = match corner {
                0 => (y as f32, x as f32),
                1 => (y as f32, (w - 1 - x) as f32),
                2 => ((h - 1 - y) as f32, x as f32),
                _ => ((h - 1 - y) as f32, (w - 1 - x) as f32),
            };
            if dy + dx <= leg {
                region[[y, x]] = true;
            }
        }
    }
}

pub fn ellipse(region: &mut Array2<bool>, center: (f32, f32), radii: (f32, f32)) {
    let (h, w) = region.dim();
    let (cy, cx) = center;
    let (ry, rx) = radii;
    for y in 0..h {
        for x in 0..w {
            let dy = (y as f32 - cy) / ry;
            let dx = (x as f32 - cx) / rx;
            if dy * dy + dx * dx <= 1.0 {
                region[[y, x]] = true;
            }
        }
    }
}
