use super::image::Image;

/// Sparse motion-blur kernel: `(dx, dy, weight)` taps summing to one.
pub fn motion_kernel(length: u32, angle_deg: f32) -> Vec<(i32, i32, f32)> {
    let length = length.max(1);
    let theta = (angle_deg as f64).to_radians();
    let (dir_x, dir_y) = (theta.cos(), -theta.sin());
    let half = (length as f64 - 1.0) / 2.0;
    let mut taps: Vec<(i32, i32, f64)> = Vec::new();
    let mut add = |x: i32, y: i32, w: f64| {
        if w <= 0.0 {
            return;
        }
        match taps.iter_mut().find(|t| t.0 == x && t.1 == y) {
            Some(t) => t.2 += w,
            None => taps.push((x, y, w)),
        }
    };
    for t in 0..length {
        let d = t as f64 - half;
        let (px, py) = (d * dir_x, d * dir_y);
        // bilinear splat of the sample point onto the integer grid
        let (x0, y0) = (px.floor(), py.floor());
        let (fx, fy) = (px - x0, py - y0);
        let (x0, y0) = (x0 as i32, y0 as i32);
        add(x0, y0, (1.0 - fx) * (1.0 - fy));
        add(x0 + 1, y0, fx * (1.0 - fy));
        add(x0, y0 + 1, (1.0 - fx) * fy);
        add(x0 + 1, y0 + 1, fx * fy);
    }
    let total: f64 = taps.iter().map(|t| t.2).sum();
    taps.into_iter().map(|(x, y, w)| (x, y, (w / total) as f32)).collect()
}

/// Convolves with a normalised line kernel of `length` pixels at `angle`
/// degrees (counter-clockwise from +x). Borders replicate the edge.
pub fn motion_blur(img: &Image, length: u32, angle_deg: f32) -> Image {
    if length <= 1 {
        return img.clone();
    }
    let taps = motion_kernel(length, angle_deg);
    let (w, h) = (img.width() as i32, img.height() as i32);
    let src = img.data();
    let mut out = Image::new(img.width(), img.height());
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for &(dx, dy, wt) in &taps {
                let sx = (x + dx).clamp(0, w - 1);
                let sy = (y + dy).clamp(0, h - 1);
                let i = ((sy * w + sx) * 3) as usize;
                acc[0] += wt * src[i];
                acc[1] += wt * src[i + 1];
                acc[2] += wt * src[i + 2];
            }
            let o = ((y * w + x) * 3) as usize;
            for c in 0..3 {
                dst[o + c] = acc[c].clamp(0.0, 1.0);
            }
        }
    }
    out
}

pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Hue rotation (fraction of a full turn) and saturation scaling in HSV.
pub fn color_jitter(img: &Image, hue_shift: f32, saturation_factor: f32) -> Image {
    img.map_pixels(|[r, g, b]| {
        let [h, s, v] = rgb_to_hsv([r as f64, g as f64, b as f64]);
        let h = (h + hue_shift as f64).rem_euclid(1.0);
        let s = (s * saturation_factor as f64).clamp(0.0, 1.0);
        hsv_to_rgb([h, s, v]).map(|c| (c as f32).clamp(0.0, 1.0))
    })
}

/// `clamp(contrast * (x - 0.5) + 0.5 + brightness)` per channel.
pub fn brightness_contrast(img: &Image, brightness_delta: f32, contrast_factor: f32) -> Image {
    img.map_pixels(|px| px.map(|v| (contrast_factor * (v - 0.5) + 0.5 + brightness_delta).clamp(0.0, 1.0)))
}

pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Rec. 601 luma replicated into all three channels.
pub fn to_grayscale(img: &Image) -> Image {
    img.map_pixels(|[r, g, b]| {
        let y = (LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b).clamp(0.0, 1.0);
        [y; 3]
    })
}
