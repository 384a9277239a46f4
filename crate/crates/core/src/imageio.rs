//! Grayscale document images and binary PGM (P5) I/O.
//!
//! PGM is the only raster format accepted: it is simple enough to read and
//! write bit-exactly with no external decoder. Both 8-bit (maxval 255) and
//! 16-bit (maxval 65535) samples are supported; 16-bit samples are big-endian
//! on disk per the PGM standard regardless of host platform.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Sample depth of a grayscale image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    /// Largest representable intensity at this depth.
    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    /// Bytes per sample in the PGM encoding.
    pub fn bytes_per_sample(self) -> usize {
        match self {
            BitDepth::Eight => 1,
            BitDepth::Sixteen => 2,
        }
    }
}

impl std::fmt::Display for BitDepth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BitDepth::Eight => write!(f, "8-bit"),
            BitDepth::Sixteen => write!(f, "16-bit"),
        }
    }
}

/// Errors from image construction, I/O, and parsing.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions {width}x{height} are degenerate (zero area)")]
    ZeroArea { width: u32, height: u32 },
    #[error("pixel buffer holds {got} samples but {width}x{height} needs {expected}")]
    PixelCount {
        got: usize,
        expected: usize,
        width: u32,
        height: u32,
    },
    #[error("intensity {value} exceeds {depth} maximum {max}")]
    IntensityRange { value: u16, max: u16, depth: BitDepth },
    #[error("{path}: malformed PGM header at byte {offset}: {detail}")]
    MalformedHeader {
        path: PathBuf,
        offset: usize,
        detail: String,
    },
    #[error("{path}: unsupported maxval {maxval} at byte {offset} (expected 255 or 65535)")]
    UnsupportedMaxval {
        path: PathBuf,
        maxval: u64,
        offset: usize,
    },
    #[error(
        "{path}: truncated payload at byte {offset}: expected {expected} bytes, found {got}"
    )]
    TruncatedPayload {
        path: PathBuf,
        offset: usize,
        expected: usize,
        got: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// A grayscale page image with row-major samples.
///
/// Intensities are stored as `u16` at either depth; at 8-bit depth every
/// sample is ≤ 255. The image is immutable after construction and can be
/// shared freely across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentImage {
    width: u32,
    height: u32,
    bit_depth: BitDepth,
    pixels: Vec<u16>,
    /// Where the image was loaded from, when it came from disk.
    pub source_path: Option<PathBuf>,
    /// Ground-truth printer label, when known.
    pub printer_label: Option<String>,
}

impl DocumentImage {
    /// Builds an image, validating dimensions, buffer length, and sample
    /// range. Zero-area images are rejected; letter crops smaller than the
    /// descriptor's 3×3 minimum are legal here and flagged at crop time.
    pub fn new(
        width: u32,
        height: u32,
        bit_depth: BitDepth,
        pixels: Vec<u16>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroArea { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(ImageError::PixelCount {
                got: pixels.len(),
                expected,
                width,
                height,
            });
        }
        let max = bit_depth.max_value();
        if let Some(&value) = pixels.iter().find(|&&p| p > max) {
            return Err(ImageError::IntensityRange {
                value,
                max,
                depth: bit_depth,
            });
        }
        Ok(Self {
            width,
            height,
            bit_depth,
            pixels,
            source_path: None,
            printer_label: None,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    /// Row-major sample buffer.
    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    /// Sample at (row, col). Panics if out of bounds, like slice indexing.
    #[inline]
    pub fn get(&self, row: u32, col: u32) -> u16 {
        debug_assert!(row < self.height && col < self.width);
        self.pixels[row as usize * self.width as usize + col as usize]
    }

    /// Copies the inclusive rectangle into a new image, keeping depth and
    /// metadata.
    pub fn crop(
        &self,
        row_min: u32,
        col_min: u32,
        row_max: u32,
        col_max: u32,
    ) -> Result<DocumentImage, ImageError> {
        assert!(
            row_min <= row_max && col_min <= col_max && row_max < self.height && col_max < self.width,
            "crop rectangle ({row_min},{col_min})-({row_max},{col_max}) outside {}x{} image",
            self.width,
            self.height
        );
        let (w, h) = (col_max - col_min + 1, row_max - row_min + 1);
        let mut pixels = Vec::with_capacity(w as usize * h as usize);
        for row in row_min..=row_max {
            let start = row as usize * self.width as usize + col_min as usize;
            pixels.extend_from_slice(&self.pixels[start..start + w as usize]);
        }
        let mut out = DocumentImage::new(w, h, self.bit_depth, pixels)?;
        out.source_path = self.source_path.clone();
        out.printer_label = self.printer_label.clone();
        Ok(out)
    }
}

/// Reads a binary PGM (P5). Maxval must be 255 or 65535; 16-bit samples are
/// big-endian. Header comments introduced by `#` run to end of line. Errors
/// carry the byte offset where parsing failed.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<DocumentImage, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_owned(),
        source,
    })?;
    let malformed = |offset: usize, detail: &str| ImageError::MalformedHeader {
        path: path.to_owned(),
        offset,
        detail: detail.to_owned(),
    };

    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(malformed(0, "magic is not \"P5\""));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3]; // width, height, maxval
    for (i, field) in fields.iter_mut().enumerate() {
        pos = skip_whitespace_and_comments(&bytes, pos);
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            let name = ["width", "height", "maxval"][i];
            return Err(malformed(start, &format!("expected {name} digits")));
        }
        // Digits only, so the parse can only fail by overflow.
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| malformed(start, "numeric field overflows u64"))?;
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed(pos, "expected single whitespace before payload"));
    }
    pos += 1;

    let [width, height, maxval] = fields;
    let bit_depth = match maxval {
        255 => BitDepth::Eight,
        65535 => BitDepth::Sixteen,
        other => {
            return Err(ImageError::UnsupportedMaxval {
                path: path.to_owned(),
                maxval: other,
                offset: pos,
            })
        }
    };
    if width == 0 || height == 0 || width > u32::MAX as u64 || height > u32::MAX as u64 {
        return Err(malformed(2, "dimensions out of range"));
    }
    let count = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(bit_depth.bytes_per_sample()))
        .ok_or_else(|| malformed(2, "dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() < count {
        return Err(ImageError::TruncatedPayload {
            path: path.to_owned(),
            offset: pos + payload.len(),
            expected: count,
            got: payload.len(),
        });
    }
    let pixels: Vec<u16> = match bit_depth {
        BitDepth::Eight => payload[..count].iter().map(|&b| b as u16).collect(),
        BitDepth::Sixteen => payload[..count]
            .chunks_exact(2)
            .map(|pair| u16::from_be_bytes([pair[0], pair[1]]))
            .collect(),
    };
    let mut img = DocumentImage::new(width as u32, height as u32, bit_depth, pixels)?;
    img.source_path = Some(path.to_owned());
    Ok(img)
}

fn skip_whitespace_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

/// Writes a binary PGM (P5) such that [`load_pgm`] reproduces the image
/// bit-exactly.
pub fn save_pgm(img: &DocumentImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(
        32 + img.pixels.len() * img.bit_depth.bytes_per_sample(),
    );
    out.extend_from_slice(
        format!(
            "P5\n{} {}\n{}\n",
            img.width,
            img.height,
            img.bit_depth.max_value()
        )
        .as_bytes(),
    );
    match img.bit_depth {
        BitDepth::Eight => out.extend(img.pixels.iter().map(|&p| p as u8)),
        BitDepth::Sixteen => {
            for &p in &img.pixels {
                out.extend_from_slice(&p.to_be_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|source| ImageError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Converts between depths. 8→16 multiplies by 257 (65535/255 exactly, so
/// full scale maps to full scale); 16→8 divides by 257 rounding half up.
/// Same-depth conversion is the identity.
pub fn normalize_depth(img: &DocumentImage, target: BitDepth) -> DocumentImage {
    if img.bit_depth == target {
        return img.clone();
    }
    let pixels: Vec<u16> = match target {
        BitDepth::Sixteen => img.pixels.iter().map(|&p| p * 257).collect(),
        // round(v/257) half-up, in integer arithmetic: (2v + 257) / 514.
        BitDepth::Eight => img
            .pixels
            .iter()
            .map(|&p| ((2 * p as u32 + 257) / 514) as u16)
            .collect(),
    };
    let mut out = DocumentImage::new(img.width, img.height, target, pixels)
        .expect("depth conversion preserves dimensions and range");
    out.source_path = img.source_path.clone();
    out.printer_label = img.printer_label.clone();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_bytes(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn loads_minimal_8bit_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_bytes(&dir, "min.pgm", b"P5\n3 2\n255\n\x00\x01\x02\x03\x04\x05");
        let img = load_pgm(&path).unwrap();
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.bit_depth(), BitDepth::Eight);
        assert_eq!(img.pixels(), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(img.source_path.as_deref(), Some(path.as_path()));
    }

    #[test]
    fn loads_16bit_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_bytes(&dir, "be.pgm", b"P5\n1 1\n65535\n\x01\x02");
        let img = load_pgm(&path).unwrap();
        assert_eq!(img.bit_depth(), BitDepth::Sixteen);
        assert_eq!(img.pixels(), &[0x0102]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_bytes(
            &dir,
            "comment.pgm",
            b"P5\n# scanner says hi\n2 1\n# and again\n255\n\x07\x08",
        );
        let img = load_pgm(&path).unwrap();
        assert_eq!(img.pixels(), &[7, 8]);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        // 4×4 at 8-bit needs 16 bytes; supply 15.
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend_from_slice(&[0u8; 15]);
        let path = write_bytes(&dir, "short.pgm", &bytes);
        match load_pgm(&path) {
            Err(ImageError::TruncatedPayload {
                offset,
                expected,
                got,
                ..
            }) => {
                assert_eq!(expected, 16);
                assert_eq!(got, 15);
                assert_eq!(offset, 11 + 15);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_bad_maxval_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p2 = write_bytes(&dir, "ascii.pgm", b"P2\n1 1\n255\n0");
        assert!(matches!(
            load_pgm(&p2),
            Err(ImageError::MalformedHeader { offset: 0, .. })
        ));
        let odd = write_bytes(&dir, "odd.pgm", b"P5\n1 1\n1023\n\x00\x00");
        assert!(matches!(
            load_pgm(&odd),
            Err(ImageError::UnsupportedMaxval { maxval: 1023, .. })
        ));
    }

    #[test]
    fn save_load_round_trip_both_depths() {
        let dir = tempfile::tempdir().unwrap();
        let eight =
            DocumentImage::new(3, 3, BitDepth::Eight, (0..9).map(|i| i * 31).collect()).unwrap();
        let sixteen = DocumentImage::new(
            2,
            3,
            BitDepth::Sixteen,
            vec![0, 65535, 258, 1, 40000, 12345],
        )
        .unwrap();
        for (name, img) in [("a.pgm", &eight), ("b.pgm", &sixteen)] {
            let path = dir.path().join(name);
            save_pgm(img, &path).unwrap();
            let back = load_pgm(&path).unwrap();
            assert_eq!(back.pixels(), img.pixels());
            assert_eq!(back.bit_depth(), img.bit_depth());
            assert_eq!((back.width(), back.height()), (img.width(), img.height()));
        }
    }

    #[test]
    fn zero_area_rejected_before_write() {
        assert!(matches!(
            DocumentImage::new(0, 5, BitDepth::Eight, vec![]),
            Err(ImageError::ZeroArea { .. })
        ));
        assert!(matches!(
            DocumentImage::new(5, 0, BitDepth::Eight, vec![]),
            Err(ImageError::ZeroArea { .. })
        ));
    }

    #[test]
    fn constructor_validates_buffer_and_range() {
        assert!(matches!(
            DocumentImage::new(2, 2, BitDepth::Eight, vec![0; 3]),
            Err(ImageError::PixelCount { got: 3, expected: 4, .. })
        ));
        assert!(matches!(
            DocumentImage::new(2, 2, BitDepth::Eight, vec![0, 0, 0, 256]),
            Err(ImageError::IntensityRange { value: 256, .. })
        ));
    }

    #[test]
    fn normalize_depth_scales_by_257() {
        let img = DocumentImage::new(2, 2, BitDepth::Eight, vec![0, 1, 128, 255]).unwrap();
        let up = normalize_depth(&img, BitDepth::Sixteen);
        assert_eq!(up.pixels(), &[0, 257, 32896, 65535]);
        let down = normalize_depth(&up, BitDepth::Eight);
        assert_eq!(down.pixels(), img.pixels());

        let wide = DocumentImage::new(3, 1, BitDepth::Sixteen, vec![300, 65535, 128]).unwrap();
        let eight = normalize_depth(&wide, BitDepth::Eight);
        // round(300/257)=1, round(65535/257)=255, round(128/257)=0 (128/257 < 0.5)
        assert_eq!(eight.pixels(), &[1, 255, 0]);
    }

    #[test]
    fn same_depth_normalize_is_identity() {
        let img = DocumentImage::new(2, 1, BitDepth::Eight, vec![9, 200]).unwrap();
        assert_eq!(normalize_depth(&img, BitDepth::Eight), img);
    }

    #[test]
    fn crop_extracts_inclusive_rectangle() {
        let img = DocumentImage::new(4, 4, BitDepth::Eight, (0..16).collect()).unwrap();
        let sub = img.crop(1, 2, 2, 3).unwrap();
        assert_eq!((sub.width(), sub.height()), (2, 2));
        assert_eq!(sub.pixels(), &[6, 7, 10, 11]);
        // Cropping the crop with its full extent is the identity.
        let again = sub.crop(0, 0, 1, 1).unwrap();
        assert_eq!(again, sub);
    }
}
