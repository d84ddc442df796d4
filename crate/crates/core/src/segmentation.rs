//! Superpixel segmenters: a simplified quickshift and a deterministic grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, SuperpixelPartition};

/// Parameters of the quickshift mode-seeking segmenter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuickshiftParams {
    /// Weight of color against space in the feature vector.
    pub ratio: f64,
    /// Bandwidth of the Gaussian density estimate.
    pub kernel_size: f64,
    /// Longest allowed link to a parent, in feature space.
    pub max_dist: f64,
}

impl Default for QuickshiftParams {
    fn default() -> Self {
        Self {
            ratio: 1.0,
            kernel_size: 5.0,
            max_dist: 10.0,
        }
    }
}

impl QuickshiftParams {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ratio", self.ratio),
            ("kernel_size", self.kernel_size),
            ("max_dist", self.max_dist),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "quickshift {name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridParams {
    pub rows: usize,
    pub cols: usize,
}

fn feature_dist2(image: &Image, ratio: f64, u: usize, v: usize) -> f64 {
    let w = image.width();
    let (ur, uc) = ((u / w) as f64, (u % w) as f64);
    let (vr, vc) = ((v / w) as f64, (v % w) as f64);
    let color: f64 = image
        .pixel(u)
        .iter()
        .zip(image.pixel(v))
        .map(|(a, b)| {
            let diff = ratio * (a - b);
            diff * diff
        })
        .sum();
    (ur - vr).powi(2) + (uc - vc).powi(2) + color
}

fn window(center: usize, radius: usize, len: usize) -> std::ops::RangeInclusive<usize> {
    center.saturating_sub(radius)..=(center + radius).min(len - 1)
}

/// Quickshift over the joint (row, col, ratio * color) feature space.
///
/// Each pixel's density is a Gaussian-kernel sum over a square window of
/// radius `ceil(3 * kernel_size)`. Each pixel then links to the nearest pixel
/// of higher density within `max_dist`; pixels with no such neighbor are
/// modes, and the trees hanging from the modes are the superpixels. Equal
/// densities are ordered by pixel index (smaller index ranks higher), and
/// equally near candidates resolve to the smaller index, so the output is
/// fully deterministic.
pub fn quickshift_segment(image: &Image, params: &QuickshiftParams) -> Result<SuperpixelPartition> {
    params.validate()?;
    let (h, w) = (image.height(), image.width());
    let n = h * w;
    let radius = (3.0 * params.kernel_size).ceil() as usize;
    let inv_two_sigma2 = 1.0 / (2.0 * params.kernel_size * params.kernel_size);

    // Performance-sensitive kernel: O(D * (2 * radius + 1)^2).
    let density: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|u| {
            let (r, c) = (u / w, u % w);
            let mut acc = 0.0;
            for rr in window(r, radius, h) {
                for cc in window(c, radius, w) {
                    let d2 = feature_dist2(image, params.ratio, u, rr * w + cc);
                    acc += (-d2 * inv_two_sigma2).exp();
                }
            }
            acc
        })
        .collect();

    let link_radius = params.max_dist.ceil() as usize;
    let max_d2 = params.max_dist * params.max_dist;
    let parent: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|u| {
            let (r, c) = (u / w, u % w);
            let mut best: Option<(f64, usize)> = None;
            for rr in window(r, link_radius, h) {
                for cc in window(c, link_radius, w) {
                    let v = rr * w + cc;
                    let higher = density[v] > density[u] || (density[v] == density[u] && v < u);
                    if !higher {
                        continue;
                    }
                    let d2 = feature_dist2(image, params.ratio, u, v);
                    if d2 > max_d2 {
                        continue;
                    }
                    // Row-major scan visits smaller indices first, so strict `<` keeps them on ties.
                    if best.is_none_or(|(bd, _)| d2 < bd) {
                        best = Some((d2, v));
                    }
                }
            }
            best.map_or(u, |(_, v)| v)
        })
        .collect();

    let mut root = parent.clone();
    for u in 0..n {
        let mut r = u;
        while root[r] != r {
            r = root[r];
        }
        let mut cur = u;
        while root[cur] != r {
            let next = root[cur];
            root[cur] = r;
            cur = next;
        }
    }
    SuperpixelPartition::from_arbitrary_labels(h, w, &root)
}

fn split_points(len: usize, parts: usize) -> Vec<usize> {
    let (base, extra) = (len / parts, len % parts);
    let mut bounds = Vec::with_capacity(parts + 1);
    bounds.push(0);
    for i in 0..parts {
        let size = base + usize::from(i < extra);
        bounds.push(bounds[i] + size);
    }
    bounds
}

/// Rectangular `rows x cols` blocks labeled in row-major order.
///
/// When the size does not divide evenly, the leading blocks get the extra row
/// or column, e.g. 5 rows into 2 blocks gives heights 3 and 2.
pub fn grid_segment(height: usize, width: usize, params: GridParams) -> Result<SuperpixelPartition> {
    let GridParams { rows, cols } = params;
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid {rows}x{cols} must have at least 2 blocks"
        )));
    }
    if rows > height || cols > width {
        return Err(Error::InvalidParameter(format!(
            "grid {rows}x{cols} exceeds image {height}x{width}"
        )));
    }
    let rb = split_points(height, rows);
    let cb = split_points(width, cols);
    let block_of = |pos: usize, bounds: &[usize]| bounds.partition_point(|&b| b <= pos) - 1;
    let labels = (0..height * width)
        .map(|u| block_of(u / width, &rb) * cols + block_of(u % width, &cb))
        .collect();
    SuperpixelPartition::new(height, width, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sizes(p: &SuperpixelPartition) -> Vec<usize> {
        (0..p.d()).map(|j| p.members(j).len()).collect()
    }

    #[test]
    fn grid_exact_and_uneven() {
        let p = grid_segment(4, 4, GridParams { rows: 2, cols: 2 }).unwrap();
        assert_eq!(sizes(&p), vec![4, 4, 4, 4]);
        let p = grid_segment(5, 5, GridParams { rows: 2, cols: 2 }).unwrap();
        assert_eq!(sizes(&p), vec![9, 6, 6, 4]);
        let p = grid_segment(28, 28, GridParams { rows: 4, cols: 4 }).unwrap();
        assert_eq!(p.d(), 16);
        assert!(sizes(&p).iter().all(|&s| s == 49));
    }

    #[test]
    fn grid_rejects_oversized_or_trivial() {
        assert!(grid_segment(3, 3, GridParams { rows: 4, cols: 1 }).is_err());
        assert!(grid_segment(3, 3, GridParams { rows: 1, cols: 1 }).is_err());
    }

    #[test]
    fn quickshift_constant_image_is_one_segment() {
        let img = Image::filled(12, 10, 1, 0.4).unwrap();
        let p = quickshift_segment(&img, &QuickshiftParams::default()).unwrap();
        assert_eq!(p.d(), 1);
        assert!(p.require_at_least(2).is_err());
    }

    #[test]
    fn quickshift_two_halves() {
        let (h, w) = (10, 12);
        let px: Vec<f64> = (0..h * w)
            .map(|u| if u % w < w / 2 { 0.1 } else { 0.9 })
            .collect();
        let img = Image::new(h, w, 1, px).unwrap();
        let params = QuickshiftParams {
            ratio: 20.0,
            kernel_size: 2.0,
            max_dist: 10.0,
        };
        let p = quickshift_segment(&img, &params).unwrap();
        assert_eq!(p.d(), 2);
        for u in 0..h * w {
            assert_eq!(p.label(u) == p.label(0), u % w < w / 2);
        }
    }

    #[test]
    fn quickshift_ignores_color_as_ratio_vanishes() {
        let (h, w) = (9, 9);
        let checker: Vec<f64> = (0..h * w)
            .map(|u| if (u / w + u % w) % 2 == 0 { 0.0 } else { 1.0 })
            .collect();
        let img = Image::new(h, w, 1, checker).unwrap();
        let flat = Image::filled(h, w, 1, 0.5).unwrap();
        let params = QuickshiftParams {
            ratio: 1e-9,
            kernel_size: 1.0,
            max_dist: 1.5,
        };
        let a = quickshift_segment(&img, &params).unwrap();
        let b = quickshift_segment(&flat, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quickshift_rejects_bad_params() {
        let img = Image::filled(2, 2, 1, 0.0).unwrap();
        let bad = QuickshiftParams {
            ratio: 0.0,
            ..Default::default()
        };
        assert!(quickshift_segment(&img, &bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn grid_blocks_differ_by_at_most_one(h in 2usize..30, w in 2usize..30, r in 1usize..6, c in 1usize..6) {
            prop_assume!(r <= h && c <= w && r * c >= 2);
            let p = grid_segment(h, w, GridParams { rows: r, cols: c }).unwrap();
            prop_assert_eq!(p.d(), r * c);
            let heights: Vec<usize> = split_points(h, r).windows(2).map(|b| b[1] - b[0]).collect();
            prop_assert!(heights.iter().max().unwrap() - heights.iter().min().unwrap() <= 1);
        }

        #[test]
        fn quickshift_is_deterministic(px in proptest::collection::vec(0.0f64..=1.0, 64)) {
            let img = Image::new(8, 8, 1, px).unwrap();
            let params = QuickshiftParams { ratio: 4.0, kernel_size: 1.0, max_dist: 3.0 };
            let a = quickshift_segment(&img, &params).unwrap();
            let b = quickshift_segment(&img, &params).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
