//! File formats: Netpbm (PGM/PPM), CSV images, and partition CSV with a JSON sidecar.
//!
//! 8-bit samples map to `[0, 1]` by `value / maxval`; writing uses maxval 255
//! and rounds to the nearest level.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, SuperpixelPartition};

/// Netpbm encodings handled here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmFormat {
    /// P2, ASCII graymap.
    PgmAscii,
    /// P5, binary graymap.
    PgmBinary,
    /// P3, ASCII pixmap.
    PpmAscii,
    /// P6, binary pixmap.
    PpmBinary,
}

impl PnmFormat {
    fn magic(self) -> &'static str {
        match self {
            PnmFormat::PgmAscii => "P2",
            PnmFormat::PgmBinary => "P5",
            PnmFormat::PpmAscii => "P3",
            PnmFormat::PpmBinary => "P6",
        }
    }

    fn channels(self) -> usize {
        match self {
            PnmFormat::PgmAscii | PnmFormat::PgmBinary => 1,
            PnmFormat::PpmAscii | PnmFormat::PpmBinary => 3,
        }
    }

    fn is_binary(self) -> bool {
        matches!(self, PnmFormat::PgmBinary | PnmFormat::PpmBinary)
    }
}

struct HeaderReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse("unexpected end of PNM data".into()));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| Error::Parse("non-ASCII token in PNM header".into()))
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::Parse(format!("expected integer in PNM data, got {tok:?}")))
    }
}

/// Decodes a P2/P3/P5/P6 image.
pub fn decode_pnm(data: &[u8]) -> Result<Image> {
    let mut r = HeaderReader { data, pos: 0 };
    let format = match r.token()? {
        "P2" => PnmFormat::PgmAscii,
        "P3" => PnmFormat::PpmAscii,
        "P5" => PnmFormat::PgmBinary,
        "P6" => PnmFormat::PpmBinary,
        other => return Err(Error::Parse(format!("unsupported PNM magic {other:?}"))),
    };
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("invalid maxval {maxval}")));
    }
    let channels = format.channels();
    let count = width * height * channels;
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(count);
    if format.is_binary() {
        // Exactly one whitespace byte separates the header from the raster.
        r.pos += 1;
        let bytes_per = if maxval < 256 { 1 } else { 2 };
        let raster = data
            .get(r.pos..r.pos + count * bytes_per)
            .ok_or_else(|| Error::Parse("truncated PNM raster".into()))?;
        for chunk in raster.chunks_exact(bytes_per) {
            let v = if bytes_per == 1 {
                chunk[0] as usize
            } else {
                u16::from_be_bytes([chunk[0], chunk[1]]) as usize
            };
            pixels.push(sample(v, maxval, scale)?);
        }
    } else {
        for _ in 0..count {
            let v = r.number()?;
            pixels.push(sample(v, maxval, scale)?);
        }
    }
    Image::new(height, width, channels, pixels)
}

fn sample(v: usize, maxval: usize, scale: f64) -> Result<f64> {
    if v > maxval {
        return Err(Error::Parse(format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(v as f64 / scale)
}

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Encodes with maxval 255. The format's channel count must match the image.
pub fn encode_pnm(image: &Image, format: PnmFormat) -> Result<Vec<u8>> {
    if image.channels() != format.channels() {
        return Err(Error::DimensionMismatch(format!(
            "{} needs {} channel(s), image has {}",
            format.magic(),
            format.channels(),
            image.channels()
        )));
    }
    let mut out = format!(
        "{}\n{} {}\n255\n",
        format.magic(),
        image.width(),
        image.height()
    )
    .into_bytes();
    if format.is_binary() {
        out.extend(image.pixels().iter().map(|&v| quantize(v)));
    } else {
        let row_len = image.width() * image.channels();
        for row in image.pixels().chunks(row_len) {
            let line: Vec<String> = row.iter().map(|&v| quantize(v).to_string()).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    Ok(out)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
    decode_pnm(&fs::read(path)?)
}

pub fn write_pnm(image: &Image, path: impl AsRef<Path>, format: PnmFormat) -> Result<()> {
    fs::write(path, encode_pnm(image, format)?)?;
    Ok(())
}

fn read_csv_rows<T: std::str::FromStr>(path: &Path) -> Result<Vec<Vec<T>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<T>()
                    .map_err(|_| Error::Parse(format!("bad CSV field {field:?} in {}", path.display())))
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{} is empty", path.display())));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Parse(format!("{} has ragged rows", path.display())));
    }
    Ok(rows)
}

/// Reads every numeric field of a CSV file in row-major order, without range checks.
pub fn read_values_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = read_csv_rows(path.as_ref())?;
    Ok(rows.concat())
}

/// Reads an image stored as one CSV row per image row, channels interleaved.
pub fn read_image_csv(path: impl AsRef<Path>, channels: usize) -> Result<Image> {
    let rows: Vec<Vec<f64>> = read_csv_rows(path.as_ref())?;
    let row_len = rows[0].len();
    if channels == 0 || !row_len.is_multiple_of(channels) {
        return Err(Error::DimensionMismatch(format!(
            "row length {row_len} is not a multiple of {channels} channels"
        )));
    }
    let height = rows.len();
    Image::new(height, row_len / channels, channels, rows.concat())
}

pub fn write_image_csv(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in image.pixels().chunks(image.width() * image.channels()) {
        w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Sidecar metadata written next to a partition CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionMeta {
    pub d: usize,
    pub height: usize,
    pub width: usize,
}

/// Path of the JSON sidecar for a partition CSV: `labels.csv` -> `labels.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes 1-based labels as CSV plus the `{d, height, width}` sidecar.
pub fn write_partition(partition: &SuperpixelPartition, csv_path: impl AsRef<Path>) -> Result<()> {
    let csv_path = csv_path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(csv_path)?;
    for row in partition.labels().chunks(partition.width()) {
        w.write_record(row.iter().map(|l| (l + 1).to_string()))?;
    }
    w.flush()?;
    let meta = PartitionMeta {
        d: partition.d(),
        height: partition.height(),
        width: partition.width(),
    };
    let mut f = fs::File::create(sidecar_path(csv_path))?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Reads a partition CSV; the sidecar, when present, must agree with the labels.
pub fn read_partition(csv_path: impl AsRef<Path>) -> Result<SuperpixelPartition> {
    let csv_path = csv_path.as_ref();
    let rows: Vec<Vec<usize>> = read_csv_rows(csv_path)?;
    let height = rows.len();
    let width = rows[0].len();
    let partition = SuperpixelPartition::from_one_based(height, width, &rows.concat())?;
    let sidecar = sidecar_path(csv_path);
    if sidecar.exists() {
        let meta: PartitionMeta = serde_json::from_slice(&fs::read(&sidecar)?)?;
        let actual = PartitionMeta {
            d: partition.d(),
            height,
            width,
        };
        if meta != actual {
            return Err(Error::InvalidPartition(format!(
                "sidecar {} says {meta:?}, labels give {actual:?}",
                sidecar.display()
            )));
        }
    }
    Ok(partition)
}

/// Reads an image by extension: `.pgm`/`.ppm`/`.pnm` or `.csv` (grayscale).
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_image_csv(path, 1),
        _ => read_pnm(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_pgm_parses_with_comments() {
        let data = b"P2\n# a comment\n3 2\n255\n0 51 255\n102 # inline\n 153 204\n";
        let img = decode_pnm(data).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (2, 3, 1));
        assert_eq!(img.pixels()[1], 0.2);
        assert_eq!(img.pixels()[5], 0.8);
    }

    #[test]
    fn binary_round_trip_is_exact_on_255_levels() {
        let px: Vec<f64> = (0..12).map(|i| (i * 20) as f64 / 255.0).collect();
        let img = Image::new(2, 2, 3, px).unwrap();
        for fmt in [PnmFormat::PpmBinary, PnmFormat::PpmAscii] {
            let back = decode_pnm(&encode_pnm(&img, fmt).unwrap()).unwrap();
            assert_eq!(back, img);
        }
        let gray = Image::new(1, 3, 1, vec![0.0, 128.0 / 255.0, 1.0]).unwrap();
        for fmt in [PnmFormat::PgmBinary, PnmFormat::PgmAscii] {
            assert_eq!(decode_pnm(&encode_pnm(&gray, fmt).unwrap()).unwrap(), gray);
        }
        assert!(encode_pnm(&gray, PnmFormat::PpmBinary).is_err());
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(decode_pnm(b"P7\n1 1\n255\n0").is_err());
        assert!(decode_pnm(b"P5\n2 2\n255\n\x00\x01").is_err());
        assert!(decode_pnm(b"P2\n1 1\n10\n11\n").is_err());
    }

    #[test]
    fn sixteen_bit_binary() {
        let data = [b"P5\n2 1\n1000\n".as_slice(), &[0x01, 0xF4, 0x03, 0xE8]].concat();
        let img = decode_pnm(&data).unwrap();
        assert_eq!(img.pixels(), &[0.5, 1.0]);
    }

    #[test]
    fn csv_image_and_partition_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(2, 3, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 1.0 / 3.0]).unwrap();
        let path = dir.path().join("img.csv");
        write_image_csv(&img, &path).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);

        let p = SuperpixelPartition::new(2, 3, vec![0, 0, 1, 2, 2, 1]).unwrap();
        let ppath = dir.path().join("labels.csv");
        write_partition(&p, &ppath).unwrap();
        let text = fs::read_to_string(&ppath).unwrap();
        assert_eq!(text, "1,1,2\n3,3,2\n");
        assert_eq!(read_partition(&ppath).unwrap(), p);

        fs::write(sidecar_path(&ppath), r#"{"d":4,"height":2,"width":3}"#).unwrap();
        assert!(read_partition(&ppath).is_err());
    }
}
