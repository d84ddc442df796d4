//! Images, superpixel partitions, replacement images and masking.
//!
//! Pixels are stored row-major with channels interleaved, so the value of
//! channel `c` at `(row, col)` lives at `(row * width + col) * channels + c`.
//! Superpixel labels are 0-based in memory; files use 1-based labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `height x width x channels` image with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = height * width * channels;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} values for {height}x{width}x{channels}, got {}",
                pixels.len()
            )));
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::PixelOutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Image with every value equal to `value`.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixel locations (not values): `height * width`.
    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    /// Channel values of pixel location `u`.
    pub fn pixel(&self, u: usize) -> &[f64] {
        &self.pixels[u * self.channels..(u + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    /// Builds an image without range validation. Callers guarantee values in `[0, 1]`.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            pixels,
        }
    }
}

/// A partition of the pixel grid into `d` superpixels.
///
/// Superpixels need not be spatially contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelPartition {
    height: usize,
    width: usize,
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl SuperpixelPartition {
    /// Validates 0-based `labels`: every label below `d` and every id in `0..d` used,
    /// where `d = max(label) + 1`.
    pub fn new(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "partition has {} labels for a {height}x{width} grid",
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidPartition("empty partition".into()));
        }
        let d = labels.iter().copied().max().unwrap_or(0) + 1;
        let mut members = vec![Vec::new(); d];
        for (u, &label) in labels.iter().enumerate() {
            members[label].push(u);
        }
        if let Some(missing) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidPartition(format!(
                "superpixel id {} (1-based) has no pixels; labels must cover 1..={d} without gaps",
                missing + 1
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            members,
        })
    }

    /// Builds a partition from 1-based labels as stored in files.
    pub fn from_one_based(height: usize, width: usize, labels: &[usize]) -> Result<Self> {
        let zero_based = labels
            .iter()
            .map(|&l| {
                l.checked_sub(1).ok_or_else(|| {
                    Error::InvalidPartition("label 0 found; file labels are 1-based".into())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(height, width, zero_based)
    }

    /// Relabels arbitrary ids to contiguous 0-based ids in order of first appearance.
    pub fn from_arbitrary_labels(height: usize, width: usize, raw: &[usize]) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        let labels = raw
            .iter()
            .map(|r| {
                let next = map.len();
                *map.entry(*r).or_insert(next)
            })
            .collect();
        Self::new(height, width, labels)
    }

    /// Number of superpixels.
    pub fn d(&self) -> usize {
        self.members.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, u: usize) -> usize {
        self.labels[u]
    }

    /// Pixel locations of superpixel `j` in increasing order.
    pub fn members(&self, j: usize) -> &[usize] {
        &self.members[j]
    }

    pub fn check_image(&self, image: &Image) -> Result<()> {
        if image.height() == self.height && image.width() == self.width {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "partition is {}x{}, image is {}x{}",
                self.height,
                self.width,
                image.height(),
                image.width()
            )))
        }
    }

    /// Rejects partitions with fewer than `min` superpixels.
    pub fn require_at_least(&self, min: usize) -> Result<()> {
        if self.d() >= min {
            Ok(())
        } else {
            Err(Error::InvalidPartition(format!(
                "need at least {min} superpixels, partition has {}",
                self.d()
            )))
        }
    }
}

/// How the replacement image is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReplacementSpec {
    /// Each superpixel replaced by its channel-wise mean color.
    MeanPerSuperpixel,
    /// Every pixel replaced by a fixed color, one component per channel.
    SolidColor { color: Vec<f64> },
}

impl ReplacementSpec {
    pub fn black(channels: usize) -> Self {
        ReplacementSpec::SolidColor {
            color: vec![0.0; channels],
        }
    }
}

/// Interpretable features: `true` keeps the superpixel, `false` replaces it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskVector(Vec<bool>);

impl MaskVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn ones(d: usize) -> Self {
        Self(vec![true; d])
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![false; d])
    }

    /// Mask whose bit `j` is bit `j` of `code`.
    pub fn from_code(code: u64, d: usize) -> Self {
        Self((0..d).map(|j| (code >> j) & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    /// Number of deactivated superpixels.
    pub fn count_zeros(&self) -> usize {
        self.0.iter().filter(|b| !**b).count()
    }
}

/// Builds the replacement image used for deactivated superpixels.
pub fn compute_replacement(
    image: &Image,
    partition: &SuperpixelPartition,
    spec: &ReplacementSpec,
) -> Result<Image> {
    partition.check_image(image)?;
    let c = image.channels();
    match spec {
        ReplacementSpec::SolidColor { color } => {
            if color.len() != c {
                return Err(Error::DimensionMismatch(format!(
                    "solid color has {} components, image has {c} channels",
                    color.len()
                )));
            }
            if let Some((index, &value)) = color
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::PixelOutOfRange { index, value });
            }
            let pixels = color
                .iter()
                .copied()
                .cycle()
                .take(image.num_pixels() * c)
                .collect();
            Ok(Image::from_raw(image.height(), image.width(), c, pixels))
        }
        ReplacementSpec::MeanPerSuperpixel => {
            let mut pixels = vec![0.0; image.pixels().len()];
            for j in 0..partition.d() {
                let members = partition.members(j);
                let count = members.len() as f64;
                for ch in 0..c {
                    let mean =
                        members.iter().map(|&u| image.pixel(u)[ch]).sum::<f64>() / count;
                    // Rounding can push the mean a hair outside the data range.
                    let mean = mean.clamp(0.0, 1.0);
                    for &u in members {
                        pixels[u * c + ch] = mean;
                    }
                }
            }
            Ok(Image::from_raw(image.height(), image.width(), c, pixels))
        }
    }
}

/// Perturbed image: superpixel `j` comes from `image` when `z[j]` is set,
/// from `replacement` otherwise.
pub fn apply_mask(
    image: &Image,
    replacement: &Image,
    partition: &SuperpixelPartition,
    z: &MaskVector,
) -> Result<Image> {
    image.check_same_shape(replacement, "image vs replacement")?;
    partition.check_image(image)?;
    if z.len() != partition.d() {
        return Err(Error::DimensionMismatch(format!(
            "mask has length {}, partition has {} superpixels",
            z.len(),
            partition.d()
        )));
    }
    Ok(apply_mask_unchecked(image, replacement, partition, z.bits()))
}

pub(crate) fn apply_mask_unchecked(
    image: &Image,
    replacement: &Image,
    partition: &SuperpixelPartition,
    z: &[bool],
) -> Image {
    let c = image.channels();
    let mut pixels = replacement.pixels().to_vec();
    for (j, &on) in z.iter().enumerate() {
        if on {
            for &u in partition.members(j) {
                pixels[u * c..(u + 1) * c].copy_from_slice(image.pixel(u));
            }
        }
    }
    Image::from_raw(image.height(), image.width(), c, pixels)
}

/// Single-channel indicator image of superpixel `j` (0-based).
pub fn binary_superpixel_mask(partition: &SuperpixelPartition, j: usize) -> Result<Image> {
    if j >= partition.d() {
        return Err(Error::InvalidParameter(format!(
            "superpixel {j} out of range 0..{}",
            partition.d()
        )));
    }
    let pixels = partition
        .labels()
        .iter()
        .map(|&l| if l == j { 1.0 } else { 0.0 })
        .collect();
    Ok(Image::from_raw(
        partition.height(),
        partition.width(),
        1,
        pixels,
    ))
}
