//! Seeded synthetic images, so experiments run without external datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::counter_unit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Bright pen strokes on a black background, digit-like.
    Digit,
    /// Smooth random texture covering the whole image.
    Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticImages {
    pub kind: SyntheticKind,
    pub count: usize,
    pub seed: u64,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_side() -> usize {
    28
}

fn default_channels() -> usize {
    1
}

impl SyntheticImages {
    pub fn generate(&self) -> Result<Vec<Image>> {
        (0..self.count as u64)
            .map(|i| match self.kind {
                SyntheticKind::Digit => {
                    if self.channels != 1 {
                        return Err(Error::InvalidParameter("digit images are grayscale".into()));
                    }
                    synthetic_digit(self.height, self.width, self.seed, i)
                }
                SyntheticKind::Texture => {
                    synthetic_texture(self.height, self.width, self.channels, self.seed, i)
                }
            })
            .collect()
    }
}

fn unit(seed: u64, index: u64, k: u64) -> f64 {
    counter_unit(seed, index, k)
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// A pen-stroke figure: an open polyline of 3 to 5 points plus, half of the
/// time, an ellipse loop. Strokes are about 2.5 pixels wide with soft edges;
/// the background is exactly 0.
pub fn synthetic_digit(height: usize, width: usize, seed: u64, index: u64) -> Result<Image> {
    if height < 8 || width < 8 {
        return Err(Error::InvalidParameter(format!(
            "digit images need at least 8x8 pixels, got {height}x{width}"
        )));
    }
    let (h, w) = (height as f64, width as f64);
    let margin = 0.2;
    let point = |k: u64| {
        (
            h * (margin + (1.0 - 2.0 * margin) * unit(seed, index, 2 * k)),
            w * (margin + (1.0 - 2.0 * margin) * unit(seed, index, 2 * k + 1)),
        )
    };
    let count = 3 + (unit(seed, index, 100) * 3.0) as u64;
    let points: Vec<(f64, f64)> = (0..count).map(point).collect();
    let loop_ = (unit(seed, index, 101) < 0.5).then(|| {
        let center = point(20);
        let ry = h * (0.12 + 0.1 * unit(seed, index, 102));
        let rx = w * (0.1 + 0.1 * unit(seed, index, 103));
        (center, ry, rx)
    });
    let radius = 1.25;
    let pixels = (0..height * width)
        .map(|u| {
            let p = ((u / width) as f64 + 0.5, (u % width) as f64 + 0.5);
            let mut dist = points
                .windows(2)
                .map(|s| segment_distance(p, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            if let Some(((cy, cx), ry, rx)) = loop_ {
                let r = (((p.0 - cy) / ry).powi(2) + ((p.1 - cx) / rx).powi(2)).sqrt();
                dist = dist.min((r - 1.0).abs() * ry.min(rx));
            }
            (radius + 0.5 - dist).clamp(0.0, 1.0)
        })
        .collect();
    Image::new(height, width, 1, pixels)
}

/// Sum of a few random plane waves per channel, rescaled to `[0.05, 0.95]`,
/// plus a little pixel noise.
pub fn synthetic_texture(height: usize, width: usize, channels: usize, seed: u64, index: u64) -> Result<Image> {
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidParameter(format!("channels must be 1 or 3, got {channels}")));
    }
    let waves = 4u64;
    let mut raw = vec![0.0; height * width * channels];
    for c in 0..channels {
        let base = 1000 * (c as u64 + 1);
        for u in 0..height * width {
            let (r, col) = ((u / width) as f64, (u % width) as f64);
            let mut v = 0.0;
            for k in 0..waves {
                let o = base + 4 * k;
                let fy = (unit(seed, index, o) - 0.5) * 0.8;
                let fx = (unit(seed, index, o + 1) - 0.5) * 0.8;
                let phase = unit(seed, index, o + 2) * std::f64::consts::TAU;
                let amp = 0.5 + unit(seed, index, o + 3);
                v += amp * (fy * r + fx * col + phase).sin();
            }
            v += 0.3 * (unit(seed ^ 0x5eed, index, (u * channels + c) as u64) - 0.5);
            raw[u * channels + c] = v;
        }
    }
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    let pixels = raw.iter().map(|v| 0.05 + 0.9 * (v - lo) / span).collect();
    Image::new(height, width, channels, pixels)
}
