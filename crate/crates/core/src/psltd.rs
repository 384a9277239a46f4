//! Local texture descriptor for printed letters.
//!
//! Every interior pixel of a grayscale letter crop yields a 3×3 patch that is
//! quantized into a five-level "pent" pattern (signed neighbor−center
//! differences banded on thresholds T0/T1), split one-hot into five binary
//! pattern vectors, and binned into 59-bin uniform-pattern histograms. The
//! patch is simultaneously tagged with line-orientation flags (intensity and
//! gradient-direction similarity along the four lines through the center),
//! which regroup the histograms:
//!
//! * F1 — 15 groups (nonempty subsets of orientations where intensity AND
//!   gradient similarity hold) × 5 patterns × 59 bins = 4425 entries;
//! * F2 — 5 groups (the single similar intensity orientation when exactly
//!   one, else "other") × 5 × 59 = 1475;
//! * F3 — 15 groups from gradient similarity alone × 5 × 59 = 4425;
//! * BMPV — 3 binary magnitude patterns (|difference| against T0, T1, and
//!   the patch mean) × 59 = 177.
//!
//! Full descriptor: 10502 entries; the approximate variant keeps F1 + BMPV
//! (4602). Each 59-bin sub-histogram is L1-normalized independently.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::imageio::{BitDepth, DocumentImage};
use crate::segmentation::Bbox;
use crate::wire::{Reader, WireError, Writer};

/// Bins of one uniform-pattern histogram: 58 uniform patterns + 1 catch-all.
pub const BINS: usize = 59;
/// Binary pattern vectors per patch (one per pent level).
pub const BPVS: usize = 5;
pub const F1_GROUPS: usize = 15;
pub const F2_GROUPS: usize = 5;
pub const F3_GROUPS: usize = 15;
pub const BMPV_PATTERNS: usize = 3;
pub const F1_LEN: usize = F1_GROUPS * BPVS * BINS;
pub const F2_LEN: usize = F2_GROUPS * BPVS * BINS;
pub const F3_LEN: usize = F3_GROUPS * BPVS * BINS;
pub const BMPV_LEN: usize = BMPV_PATTERNS * BINS;
/// 4425 + 1475 + 4425 + 177 = 10502.
pub const FULL_LEN: usize = F1_LEN + F2_LEN + F3_LEN + BMPV_LEN;
/// 4425 + 177 = 4602.
pub const APPROX_LEN: usize = F1_LEN + BMPV_LEN;

/// The 3×3 neighbor ring in clockwise order from the top-left corner:
/// NW, N, NE, E, SE, S, SW, W as (row, col) offsets. Bit i of every 8-bit
/// pattern refers to ring position i. This order is frozen — descriptor
/// files are sensitive to it.
pub const NEIGHBOR_OFFSETS: [(i32, i32); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
];

// Ring position → raster index within a row-major [u16; 9] patch.
const NEIGHBOR_RASTER: [usize; 8] = [0, 1, 2, 5, 8, 7, 6, 3];
const CENTER: usize = 4;

// The four lines through the patch center as raster-index triples, in
// orientation order 0° {W,C,E}, 45° {SW,C,NE}, 90° {N,C,S}, 135° {NW,C,SE}.
const LINE_TRIPLES: [[usize; 3]; 4] = [[3, 4, 5], [6, 4, 2], [1, 4, 7], [0, 4, 8]];

/// Descriptor thresholds. T0/T1 are intensity units and must fit the image
/// depth; G0 is the gradient-direction tolerance in degrees (not rescaled
/// with depth).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DescriptorParams {
    pub t0: u16,
    pub t1: u16,
    pub g0_degrees: f64,
}

impl DescriptorParams {
    /// Defaults per image depth: (20, 80) at 8-bit, (13000, 50000) at
    /// 16-bit, G0 = 90° at both.
    pub fn defaults_for(depth: BitDepth) -> Self {
        match depth {
            BitDepth::Eight => Self { t0: 20, t1: 80, g0_degrees: 90.0 },
            BitDepth::Sixteen => Self { t0: 13000, t1: 50000, g0_degrees: 90.0 },
        }
    }

    /// Enforces 0 < T0 < T1 < 2^depth and 0 < G0 ≤ 180.
    pub fn validate(&self, depth: BitDepth) -> Result<(), PsltdError> {
        if self.t0 == 0 || self.t0 >= self.t1 {
            return Err(PsltdError::InvalidParams(format!(
                "need 0 < T0 < T1, got T0={} T1={}",
                self.t0, self.t1
            )));
        }
        if depth == BitDepth::Eight && self.t1 > 255 {
            return Err(PsltdError::InvalidParams(format!(
                "T1={} exceeds 8-bit range",
                self.t1
            )));
        }
        if !(self.g0_degrees > 0.0 && self.g0_degrees <= 180.0) {
            return Err(PsltdError::InvalidParams(format!(
                "need 0 < G0 <= 180 degrees, got {}",
                self.g0_degrees
            )));
        }
        Ok(())
    }
}

/// Descriptor length variant: the full four-component vector or the
/// F1 + BMPV approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum DescriptorVariant {
    Full,
    Approx,
}

impl DescriptorVariant {
    /// Vector length of this variant; never zero, so no `is_empty`.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        match self {
            DescriptorVariant::Full => FULL_LEN,
            DescriptorVariant::Approx => APPROX_LEN,
        }
    }

    pub(crate) fn wire_code(self) -> u8 {
        match self {
            DescriptorVariant::Full => 0,
            DescriptorVariant::Approx => 1,
        }
    }

    pub(crate) fn from_wire(code: u8) -> Option<Self> {
        match code {
            0 => Some(DescriptorVariant::Full),
            1 => Some(DescriptorVariant::Approx),
            _ => None,
        }
    }
}

impl std::fmt::Display for DescriptorVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DescriptorVariant::Full => write!(f, "full"),
            DescriptorVariant::Approx => write!(f, "approx"),
        }
    }
}

impl std::str::FromStr for DescriptorVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(DescriptorVariant::Full),
            "approx" => Ok(DescriptorVariant::Approx),
            other => Err(format!("unknown descriptor variant {other:?} (expected full or approx)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum PsltdError {
    #[error("invalid descriptor params: {0}")]
    InvalidParams(String),
    #[error("letter is {width}x{height}, descriptor needs at least 3x3")]
    LetterTooSmall { width: u32, height: u32 },
    #[error("descriptor batch holds {batch} but {got} was pushed")]
    VariantMismatch {
        batch: DescriptorVariant,
        got: DescriptorVariant,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: WireError,
    },
    #[error("{path}: unsupported descriptor file version {version}")]
    Version { path: PathBuf, version: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Five-level quantization of the 8 neighbor differences of one patch.
/// Codes follow the frozen ring order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PentPattern {
    pub codes: [u8; 8],
}

/// Per-patch line-orientation similarity flags, orientation order
/// 0°, 45°, 90°, 135°.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrientationFlags {
    pub intensity_sim: [bool; 4],
    pub gradient_sim: [bool; 4],
}

/// Quantizes signed differences d = neighbor − center into five bands:
/// d ≤ −T1 → 0; −T1 < d ≤ −T0 → 1; |d| < T0 → 2; T0 ≤ d < T1 → 3; d ≥ T1 → 4.
pub fn quantize_pent(patch: &[u16; 9], params: &DescriptorParams) -> PentPattern {
    let center = patch[CENTER] as i32;
    let (t0, t1) = (params.t0 as i32, params.t1 as i32);
    let mut codes = [0u8; 8];
    for (ring, &raster) in NEIGHBOR_RASTER.iter().enumerate() {
        let d = patch[raster] as i32 - center;
        codes[ring] = if d <= -t1 {
            0
        } else if d <= -t0 {
            1
        } else if d < t0 {
            2
        } else if d < t1 {
            3
        } else {
            4
        };
    }
    PentPattern { codes }
}

/// One-hot decomposition: bit i of pattern k is set iff code[i] == k.
/// The five patterns OR to 0xFF and their popcounts sum to 8.
pub fn bpv_split(pent: &PentPattern) -> [u8; 5] {
    let mut bpvs = [0u8; 5];
    for (i, &code) in pent.codes.iter().enumerate() {
        bpvs[code as usize] |= 1 << i;
    }
    bpvs
}

// Uniform-pattern bin table: the 58 patterns with at most two circular 0/1
// transitions receive bins 0..=57 in ascending numeric order; everything
// else maps to the catch-all bin 58.
const UNIFORM_BIN_TABLE: [u8; 256] = {
    let mut table = [58u8; 256];
    let mut next = 0u8;
    let mut p = 0usize;
    while p < 256 {
        let pattern = p as u8;
        if (pattern ^ pattern.rotate_left(1)).count_ones() <= 2 {
            table[p] = next;
            next += 1;
        }
        p += 1;
    }
    assert!(next == 58);
    table
};

/// Maps an 8-bit circular pattern to its uniform-histogram bin in 0..=58.
#[inline]
pub fn uniform_bin(bp: u8) -> usize {
    UNIFORM_BIN_TABLE[bp as usize] as usize
}

/// Per-pixel gradient orientations of a letter. Directions are degrees in
/// [0, 180) (line structure is unsigned, so opposite gradients fold
/// together). Border pixels are undefined; zero-magnitude pixels carry
/// direction 0° with the nonzero flag cleared.
#[derive(Debug, Clone)]
pub struct GradientField {
    width: u32,
    height: u32,
    dir_deg: Vec<f64>,
    nonzero: Vec<bool>,
}

impl GradientField {
    #[inline]
    pub fn dir(&self, row: u32, col: u32) -> f64 {
        self.dir_deg[row as usize * self.width as usize + col as usize]
    }

    #[inline]
    pub fn is_nonzero(&self, row: u32, col: u32) -> bool {
        self.nonzero[row as usize * self.width as usize + col as usize]
    }

    /// Gradients exist only where the full 3×3 Sobel window fits.
    #[inline]
    pub fn is_defined(&self, row: u32, col: u32) -> bool {
        row >= 1 && col >= 1 && row + 1 < self.height && col + 1 < self.width
    }
}

/// 3×3 Sobel gradient orientations on the interior of a letter.
pub fn gradient_field(letter: &DocumentImage) -> GradientField {
    assert!(
        letter.width() >= 3 && letter.height() >= 3,
        "gradient field needs at least a 3x3 letter"
    );
    let (w, h) = (letter.width() as usize, letter.height() as usize);
    let px = letter.pixels();
    let mut dir_deg = vec![0.0f64; w * h];
    let mut nonzero = vec![false; w * h];
    for row in 1..h - 1 {
        for col in 1..w - 1 {
            let at = |dr: isize, dc: isize| {
                px[(row as isize + dr) as usize * w + (col as isize + dc) as usize] as i32
            };
            let gx = at(-1, 1) + 2 * at(0, 1) + at(1, 1) - at(-1, -1) - 2 * at(0, -1) - at(1, -1);
            let gy = at(1, -1) + 2 * at(1, 0) + at(1, 1) - at(-1, -1) - 2 * at(-1, 0) - at(-1, 1);
            let idx = row * w + col;
            if gx != 0 || gy != 0 {
                nonzero[idx] = true;
                dir_deg[idx] = (gy as f64).atan2(gx as f64).to_degrees().rem_euclid(180.0);
            }
        }
    }
    GradientField {
        width: letter.width(),
        height: letter.height(),
        dir_deg,
        nonzero,
    }
}

/// Circular distance between two orientations with period 180°.
#[inline]
fn circular_diff_180(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % 180.0;
    d.min(180.0 - d)
}

/// Gradient info of one 3×3 window in raster order: (direction, nonzero).
pub type GradWindow = [(f64, bool); 9];

/// Line-orientation flags of one patch. intensity_sim\[o\] holds when the
/// intensity spread (max−min) along line o is at most T0; gradient_sim\[o\]
/// holds when all three line pixels have nonzero gradient magnitude and
/// their pairwise circular direction differences stay within G0.
pub fn orientation_flags(
    patch: &[u16; 9],
    grad: &GradWindow,
    params: &DescriptorParams,
) -> OrientationFlags {
    let mut intensity_sim = [false; 4];
    let mut gradient_sim = [false; 4];
    for (o, triple) in LINE_TRIPLES.iter().enumerate() {
        let vals = triple.map(|i| patch[i]);
        let max = vals.iter().copied().max().unwrap();
        let min = vals.iter().copied().min().unwrap();
        intensity_sim[o] = (max - min) <= params.t0;

        let g = triple.map(|i| grad[i]);
        if g.iter().all(|&(_, nz)| nz) {
            let max_pair = circular_diff_180(g[0].0, g[1].0)
                .max(circular_diff_180(g[0].0, g[2].0))
                .max(circular_diff_180(g[1].0, g[2].0));
            gradient_sim[o] = max_pair <= params.g0_degrees;
        }
    }
    OrientationFlags {
        intensity_sim,
        gradient_sim,
    }
}

/// The three binary magnitude patterns of a patch: with m_i = |neighbor −
/// center| and μ their mean, bit i is set when m_i ≥ T0 (pattern A), m_i ≥ T1
/// (pattern B), m_i ≥ μ (pattern C). The degenerate μ = 0 case emits an
/// all-zero pattern C instead of all-ones.
pub fn bmpv(patch: &[u16; 9], params: &DescriptorParams) -> [u8; 3] {
    let center = patch[CENTER] as i32;
    let mut m = [0u16; 8];
    let mut sum = 0u32;
    for (ring, &raster) in NEIGHBOR_RASTER.iter().enumerate() {
        m[ring] = (patch[raster] as i32 - center).unsigned_abs() as u16;
        sum += m[ring] as u32;
    }
    let mu = sum as f64 / 8.0;
    let mut patterns = [0u8; 3];
    for (ring, &mi) in m.iter().enumerate() {
        if mi >= params.t0 {
            patterns[0] |= 1 << ring;
        }
        if mi >= params.t1 {
            patterns[1] |= 1 << ring;
        }
        if sum > 0 && mi as f64 >= mu {
            patterns[2] |= 1 << ring;
        }
    }
    patterns
}

/// A descriptor vector. The full variant concatenates F1, F2, F3, BMPV in
/// that order; the approximate variant concatenates F1, BMPV. All entries
/// are nonnegative and every 59-bin sub-histogram sums to 1 or is all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    variant: DescriptorVariant,
    data: Vec<f64>,
}

impl Descriptor {
    fn new(variant: DescriptorVariant, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), variant.len(), "descriptor length mismatch");
        Self { variant, data }
    }

    pub fn variant(&self) -> DescriptorVariant {
        self.variant
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn f1(&self) -> &[f64] {
        &self.data[..F1_LEN]
    }

    /// Present only on the full variant.
    pub fn f2(&self) -> Option<&[f64]> {
        match self.variant {
            DescriptorVariant::Full => Some(&self.data[F1_LEN..F1_LEN + F2_LEN]),
            DescriptorVariant::Approx => None,
        }
    }

    /// Present only on the full variant.
    pub fn f3(&self) -> Option<&[f64]> {
        match self.variant {
            DescriptorVariant::Full => {
                Some(&self.data[F1_LEN + F2_LEN..F1_LEN + F2_LEN + F3_LEN])
            }
            DescriptorVariant::Approx => None,
        }
    }

    pub fn bmpv(&self) -> &[f64] {
        &self.data[self.data.len() - BMPV_LEN..]
    }

    /// The file formats and pooling exchange descriptors at f32 precision.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Projects a full descriptor onto the F1 + BMPV approximation. Entries are
/// copied bit-identically; an already-approximate input passes through.
pub fn approx(d: &Descriptor) -> Descriptor {
    match d.variant {
        DescriptorVariant::Approx => d.clone(),
        DescriptorVariant::Full => {
            let mut data = Vec::with_capacity(APPROX_LEN);
            data.extend_from_slice(d.f1());
            data.extend_from_slice(d.bmpv());
            Descriptor::new(DescriptorVariant::Approx, data)
        }
    }
}

/// Extracts the texture descriptor of one grayscale letter crop.
///
/// Deterministic: identical letter pixels and params always produce the
/// identical vector regardless of the letter's position on the source page.
pub fn extract_psltd(
    letter: &DocumentImage,
    params: &DescriptorParams,
    variant: DescriptorVariant,
) -> Result<Descriptor, PsltdError> {
    if letter.width() < 3 || letter.height() < 3 {
        return Err(PsltdError::LetterTooSmall {
            width: letter.width(),
            height: letter.height(),
        });
    }
    params.validate(letter.bit_depth())?;

    let (w, h) = (letter.width() as usize, letter.height() as usize);
    let px = letter.pixels();
    let grad = gradient_field(letter);

    let mut f1_counts = vec![0u32; F1_LEN];
    let mut f2_counts = vec![0u32; F2_LEN];
    let mut f3_counts = vec![0u32; F3_LEN];
    let mut bmpv_counts = vec![0u32; BMPV_LEN];

    for row in 1..h - 1 {
        for col in 1..w - 1 {
            let mut patch = [0u16; 9];
            let mut gwin: GradWindow = [(0.0, false); 9];
            for dr in 0..3 {
                let src = (row + dr - 1) * w + (col - 1);
                for dc in 0..3 {
                    let idx = dr * 3 + dc;
                    patch[idx] = px[src + dc];
                    let (r, c) = ((row + dr - 1) as u32, (col + dc - 1) as u32);
                    gwin[idx] = (grad.dir(r, c), grad.is_nonzero(r, c));
                }
            }

            let pent = quantize_pent(&patch, params);
            let bpvs = bpv_split(&pent);
            let bins = bpvs.map(uniform_bin);
            let flags = orientation_flags(&patch, &gwin, params);

            let mut joint_mask = 0usize;
            let mut grad_mask = 0usize;
            let mut intensity_count = 0;
            let mut intensity_single = 0;
            for o in 0..4 {
                if flags.intensity_sim[o] && flags.gradient_sim[o] {
                    joint_mask |= 1 << o;
                }
                if flags.gradient_sim[o] {
                    grad_mask |= 1 << o;
                }
                if flags.intensity_sim[o] {
                    intensity_count += 1;
                    intensity_single = o;
                }
            }

            if joint_mask != 0 {
                let base = (joint_mask - 1) * BPVS * BINS;
                for (k, &bin) in bins.iter().enumerate() {
                    f1_counts[base + k * BINS + bin] += 1;
                }
            }
            let f2_group = if intensity_count == 1 { intensity_single } else { 4 };
            let base = f2_group * BPVS * BINS;
            for (k, &bin) in bins.iter().enumerate() {
                f2_counts[base + k * BINS + bin] += 1;
            }
            if grad_mask != 0 {
                let base = (grad_mask - 1) * BPVS * BINS;
                for (k, &bin) in bins.iter().enumerate() {
                    f3_counts[base + k * BINS + bin] += 1;
                }
            }
            for (j, &pattern) in bmpv(&patch, params).iter().enumerate() {
                bmpv_counts[j * BINS + uniform_bin(pattern)] += 1;
            }
        }
    }

    let mut data = Vec::with_capacity(variant.len());
    normalize_sub_histograms(&f1_counts, &mut data);
    if variant == DescriptorVariant::Full {
        normalize_sub_histograms(&f2_counts, &mut data);
        normalize_sub_histograms(&f3_counts, &mut data);
    }
    normalize_sub_histograms(&bmpv_counts, &mut data);
    Ok(Descriptor::new(variant, data))
}

/// L1-normalizes each 59-bin sub-histogram independently; empty
/// sub-histograms stay all-zero.
fn normalize_sub_histograms(counts: &[u32], out: &mut Vec<f64>) {
    for sub in counts.chunks_exact(BINS) {
        let total: u64 = sub.iter().map(|&c| c as u64).sum();
        if total == 0 {
            out.extend(std::iter::repeat_n(0.0, BINS));
        } else {
            let t = total as f64;
            out.extend(sub.iter().map(|&c| c as f64 / t));
        }
    }
}

pub const DESCRIPTOR_FILE_VERSION: u32 = 1;
const DESCRIPTOR_MAGIC: &[u8; 4] = b"PSLT";

/// Provenance of one descriptor: which document and component it came from
/// and where that letter sat on the page (pooling needs the geometry).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorRecord {
    pub doc_id: u32,
    pub component_id: u32,
    pub centroid: (f32, f32),
    pub bbox: Bbox,
}

/// A batch of like-variant descriptor vectors at the f32 interchange
/// precision, with per-vector provenance records.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorBatch {
    variant: DescriptorVariant,
    data: Vec<f32>,
    records: Vec<DescriptorRecord>,
}

impl DescriptorBatch {
    pub fn new(variant: DescriptorVariant) -> Self {
        Self {
            variant,
            data: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        descriptor: &Descriptor,
        record: DescriptorRecord,
    ) -> Result<(), PsltdError> {
        if descriptor.variant() != self.variant {
            return Err(PsltdError::VariantMismatch {
                batch: self.variant,
                got: descriptor.variant(),
            });
        }
        self.data.extend(descriptor.as_slice().iter().map(|&v| v as f32));
        self.records.push(record);
        Ok(())
    }

    /// Appends a vector already at interchange precision, e.g. one produced
    /// by the document pipeline.
    pub fn push_vector(&mut self, vector: &[f32], record: DescriptorRecord) -> Result<(), PsltdError> {
        if vector.len() != self.dim() {
            return Err(PsltdError::InvalidParams(format!(
                "vector length {} does not match {} variant ({})",
                vector.len(),
                self.variant,
                self.dim()
            )));
        }
        self.data.extend_from_slice(vector);
        self.records.push(record);
        Ok(())
    }

    pub fn variant(&self) -> DescriptorVariant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.variant.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim()..(i + 1) * self.dim()]
    }

    pub fn record(&self, i: usize) -> &DescriptorRecord {
        &self.records[i]
    }

    pub fn records(&self) -> &[DescriptorRecord] {
        &self.records
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DescriptorRecord, &[f32])> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r, self.vector(i)))
    }
}

/// Writes a descriptor batch file: little-endian, header {magic "PSLT",
/// version, variant, count, dim}, then count×dim f32 vectors, then the
/// provenance records.
pub fn write_descriptor_batch(
    batch: &DescriptorBatch,
    path: impl AsRef<Path>,
) -> Result<(), PsltdError> {
    let path = path.as_ref();
    let mut w = Writer::with_capacity(17 + batch.data.len() * 4 + batch.records.len() * 32);
    w.magic(DESCRIPTOR_MAGIC);
    w.u32(DESCRIPTOR_FILE_VERSION);
    w.u8(batch.variant.wire_code());
    w.u32(batch.len() as u32);
    w.u32(batch.dim() as u32);
    w.f32_slice(&batch.data);
    for r in &batch.records {
        w.u32(r.doc_id);
        w.u32(r.component_id);
        w.f32(r.centroid.0);
        w.f32(r.centroid.1);
        w.i32(r.bbox.row_min as i32);
        w.i32(r.bbox.col_min as i32);
        w.i32(r.bbox.row_max as i32);
        w.i32(r.bbox.col_max as i32);
    }
    fs::write(path, w.into_bytes()).map_err(|source| PsltdError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads a descriptor batch file written by [`write_descriptor_batch`].
pub fn read_descriptor_batch(path: impl AsRef<Path>) -> Result<DescriptorBatch, PsltdError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PsltdError::Io {
        path: path.to_owned(),
        source,
    })?;
    let wrap = |source: WireError| PsltdError::Format {
        path: path.to_owned(),
        source,
    };
    let mut r = Reader::new(&bytes);
    r.magic(DESCRIPTOR_MAGIC).map_err(wrap)?;
    let version = r.u32("version").map_err(wrap)?;
    if version != DESCRIPTOR_FILE_VERSION {
        return Err(PsltdError::Version {
            path: path.to_owned(),
            version,
        });
    }
    let variant_code = r.u8("variant").map_err(wrap)?;
    let variant = DescriptorVariant::from_wire(variant_code).ok_or_else(|| {
        wrap(WireError {
            offset: 8,
            detail: format!("unknown variant code {variant_code}"),
        })
    })?;
    let count = r.u32("count").map_err(wrap)? as usize;
    let dim = r.u32("dim").map_err(wrap)? as usize;
    if dim != variant.len() {
        return Err(wrap(WireError {
            offset: 13,
            detail: format!("dim {dim} does not match {variant} variant ({})", variant.len()),
        }));
    }
    let data = r.f32_vec(count * dim, "descriptor data").map_err(wrap)?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        records.push(DescriptorRecord {
            doc_id: r.u32("doc_id").map_err(wrap)?,
            component_id: r.u32("component_id").map_err(wrap)?,
            centroid: (
                r.f32("centroid_row").map_err(wrap)?,
                r.f32("centroid_col").map_err(wrap)?,
            ),
            bbox: Bbox {
                row_min: r.i32("row_min").map_err(wrap)? as u32,
                col_min: r.i32("col_min").map_err(wrap)? as u32,
                row_max: r.i32("row_max").map_err(wrap)? as u32,
                col_max: r.i32("col_max").map_err(wrap)? as u32,
            },
        });
    }
    r.expect_end().map_err(wrap)?;
    Ok(DescriptorBatch {
        variant,
        data,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn letter(width: u32, height: u32, pixels: Vec<u16>) -> DocumentImage {
        DocumentImage::new(width, height, BitDepth::Eight, pixels).unwrap()
    }

    fn params8() -> DescriptorParams {
        DescriptorParams::defaults_for(BitDepth::Eight)
    }

    #[test]
    fn component_lengths_add_up() {
        assert_eq!(F1_LEN, 4425);
        assert_eq!(F2_LEN, 1475);
        assert_eq!(F3_LEN, 4425);
        assert_eq!(BMPV_LEN, 177);
        assert_eq!(FULL_LEN, 10502);
        assert_eq!(APPROX_LEN, 4602);
    }

    #[test]
    fn pent_bands_follow_thresholds() {
        let constant = [100u16; 9];
        assert_eq!(quantize_pent(&constant, &params8()).codes, [2; 8]);

        // Neighbor 200 at the NW corner (ring 0): d = 100 ≥ T1=80 → code 4.
        let mut patch = [100u16; 9];
        patch[0] = 200;
        assert_eq!(quantize_pent(&patch, &params8()).codes[0], 4);

        // Neighbor 75: d = −25, −80 < −25 ≤ −20 → code 1.
        let mut patch = [100u16; 9];
        patch[0] = 75;
        assert_eq!(quantize_pent(&patch, &params8()).codes[0], 1);

        // Band edges are half-open exactly as specified.
        let cases = [(20u16, 3u8), (19, 2), (80, 4), (79, 3)];
        for (delta, expected) in cases {
            let mut patch = [100u16; 9];
            patch[0] = 100 + delta;
            assert_eq!(
                quantize_pent(&patch, &params8()).codes[0],
                expected,
                "d = {delta}"
            );
        }
    }

    #[test]
    fn full_scale_t0_forces_center_band() {
        // With T0 close to the depth maximum every difference lands in the
        // middle band regardless of patch content.
        let params = DescriptorParams { t0: 254, t1: 255, g0_degrees: 90.0 };
        let patch = [1u16, 254, 3, 100, 128, 200, 50, 254, 1];
        assert_eq!(quantize_pent(&patch, &params).codes, [2; 8]);
    }

    #[test]
    fn bpv_is_one_hot() {
        let all_two = PentPattern { codes: [2; 8] };
        let bpvs = bpv_split(&all_two);
        assert_eq!(bpvs, [0, 0, 0xFF, 0, 0]);

        let pent = PentPattern { codes: [0, 1, 2, 3, 4, 4, 3, 2] };
        let bpvs = bpv_split(&pent);
        assert_eq!(bpvs[4], (1 << 4) | (1 << 5));
        let popcount_sum: u32 = bpvs.iter().map(|b| b.count_ones()).sum();
        assert_eq!(popcount_sum, 8);
        assert_eq!(bpvs.iter().fold(0u8, |acc, &b| acc | b), 0xFF);
    }

    #[test]
    fn uniform_mapping_is_58_plus_catchall() {
        let mut uniform_bins = std::collections::BTreeSet::new();
        let mut uniform_count = 0;
        for p in 0u16..256 {
            let bin = uniform_bin(p as u8);
            let transitions = (p as u8 ^ (p as u8).rotate_left(1)).count_ones();
            if transitions <= 2 {
                uniform_count += 1;
                assert!(bin < 58, "uniform pattern {p:08b} got catch-all bin");
                uniform_bins.insert(bin);
            } else {
                assert_eq!(bin, 58, "non-uniform pattern {p:08b} got bin {bin}");
            }
        }
        assert_eq!(uniform_count, 58);
        assert_eq!(uniform_bins.len(), 58);
        // Ascending numeric enumeration pins the two ends.
        assert_eq!(uniform_bin(0b0000_0000), 0);
        assert_eq!(uniform_bin(0b1111_1111), 57);
        assert_eq!(uniform_bin(0b0101_0101), 58);
    }

    #[test]
    fn orientation_flags_on_constant_patch() {
        let patch = [128u16; 9];
        let grad: GradWindow = [(0.0, false); 9];
        let flags = orientation_flags(&patch, &grad, &params8());
        assert_eq!(flags.intensity_sim, [true; 4]);
        assert_eq!(flags.gradient_sim, [false; 4]);
    }

    #[test]
    fn vertical_stroke_is_intensity_similar_along_90_only() {
        // Column of 0s through the center, rest 255.
        let patch = [255u16, 0, 255, 255, 0, 255, 255, 0, 255];
        let grad: GradWindow = [(0.0, false); 9];
        let flags = orientation_flags(&patch, &grad, &params8());
        assert_eq!(flags.intensity_sim, [false, false, true, false]);
    }

    #[test]
    fn gradient_similarity_uses_circular_difference() {
        let patch = [128u16; 9];
        // N, C, S (raster 1, 4, 7) carry 10°, 20°, 30°: max pairwise 20° ≤ 90.
        let mut grad: GradWindow = [(0.0, false); 9];
        grad[1] = (10.0, true);
        grad[4] = (20.0, true);
        grad[7] = (30.0, true);
        let flags = orientation_flags(&patch, &grad, &params8());
        assert_eq!(flags.gradient_sim, [false, false, true, false]);

        // 175° vs 5° are 10° apart circularly, not 170°.
        let tight = DescriptorParams { g0_degrees: 15.0, ..params8() };
        grad[1] = (175.0, true);
        grad[4] = (5.0, true);
        grad[7] = (0.0, true);
        let flags = orientation_flags(&patch, &grad, &tight);
        assert!(flags.gradient_sim[2]);
        // One zero-magnitude pixel kills the line.
        grad[7] = (0.0, false);
        let flags = orientation_flags(&patch, &grad, &tight);
        assert!(!flags.gradient_sim[2]);
    }

    #[test]
    fn gradient_field_matches_axis_aligned_edges() {
        // Vertical step edge: left half 0, right half 255 → gradient at 0°.
        let v = letter(4, 4, (0..16).map(|i| if i % 4 < 2 { 0 } else { 255 }).collect());
        let gv = gradient_field(&v);
        assert!(gv.is_nonzero(1, 1) || gv.is_nonzero(1, 2));
        for (r, c) in [(1u32, 1u32), (1, 2), (2, 1), (2, 2)] {
            if gv.is_nonzero(r, c) {
                assert_eq!(gv.dir(r, c), 0.0, "at ({r},{c})");
            }
        }
        // Horizontal step edge → 90°.
        let himg = letter(4, 4, (0..16).map(|i| if i / 4 < 2 { 0 } else { 255 }).collect());
        let gh = gradient_field(&himg);
        for (r, c) in [(1u32, 1u32), (1, 2), (2, 1), (2, 2)] {
            if gh.is_nonzero(r, c) {
                assert_eq!(gh.dir(r, c), 90.0, "at ({r},{c})");
            }
        }
        // Constant image: all zero-magnitude, direction parked at 0°.
        let flat = letter(3, 3, vec![7; 9]);
        let gf = gradient_field(&flat);
        assert!(!gf.is_nonzero(1, 1));
        assert_eq!(gf.dir(1, 1), 0.0);
        assert!(!gf.is_defined(0, 0));
        assert!(gf.is_defined(1, 1));
    }

    #[test]
    fn bmpv_thresholds_and_mean_rule() {
        let constant = [100u16; 9];
        assert_eq!(bmpv(&constant, &params8()), [0, 0, 0]);

        // One neighbor differs by 100: A and B both set that bit (100 ≥ 80).
        let mut patch = [100u16; 9];
        patch[0] = 200; // ring position 0
        let [a, b, _] = bmpv(&patch, &params8());
        assert_eq!(a, 1);
        assert_eq!(b, 1);

        // m = {10×7, 90}: μ = 20, so C has only the 90-neighbor bit.
        let mut patch = [110u16; 9];
        patch[CENTER] = 100;
        patch[NEIGHBOR_RASTER[3]] = 190; // ring position 3 gets m = 90
        let [_, _, c] = bmpv(&patch, &params8());
        assert_eq!(c, 1 << 3);
    }

    #[test]
    fn extract_rejects_small_letters_and_bad_params() {
        let tiny = letter(2, 3, vec![0; 6]);
        assert!(matches!(
            extract_psltd(&tiny, &params8(), DescriptorVariant::Full),
            Err(PsltdError::LetterTooSmall { width: 2, height: 3 })
        ));
        let img = letter(3, 3, vec![0; 9]);
        let bad = DescriptorParams { t0: 80, t1: 20, g0_degrees: 90.0 };
        assert!(matches!(
            extract_psltd(&img, &bad, DescriptorVariant::Full),
            Err(PsltdError::InvalidParams(_))
        ));
        let sixteen_on_eight = DescriptorParams::defaults_for(BitDepth::Sixteen);
        assert!(sixteen_on_eight.validate(BitDepth::Eight).is_err());
        assert!(sixteen_on_eight.validate(BitDepth::Sixteen).is_ok());
    }

    #[test]
    fn constant_letter_descriptor_shape() {
        let img = letter(5, 5, vec![128; 25]);
        let d = extract_psltd(&img, &params8(), DescriptorVariant::Full).unwrap();
        assert_eq!(d.len(), FULL_LEN);
        assert!(d.f1().iter().all(|&v| v == 0.0), "F1 must be empty");
        assert!(d.f3().unwrap().iter().all(|&v| v == 0.0), "F3 must be empty");
        // All mass lands in the "other" intensity group; its BPV_2
        // sub-histogram concentrates at the all-ones uniform bin.
        let f2 = d.f2().unwrap();
        let other_bpv2 = &f2[(4 * BPVS + 2) * BINS..(4 * BPVS + 3) * BINS];
        assert_eq!(other_bpv2[uniform_bin(0xFF)], 1.0);
        assert_eq!(other_bpv2.iter().sum::<f64>(), 1.0);
    }

    fn assert_sub_histogram_invariant(d: &Descriptor) {
        for sub in d.as_slice().chunks_exact(BINS) {
            let sum: f64 = sub.iter().sum();
            assert!(
                sum == 0.0 || (sum - 1.0).abs() <= 1e-9,
                "sub-histogram sum {sum}"
            );
            assert!(sub.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn sub_histograms_normalize_on_textured_letter() {
        // Deterministic pseudo-texture without pulling in an RNG.
        let pixels: Vec<u16> = (0..11 * 9)
            .map(|i: u32| ((i * 7919 + 13) % 256) as u16)
            .collect();
        let img = letter(11, 9, pixels);
        for variant in [DescriptorVariant::Full, DescriptorVariant::Approx] {
            let d = extract_psltd(&img, &params8(), variant).unwrap();
            assert_eq!(d.len(), variant.len());
            assert_sub_histogram_invariant(&d);
        }
    }

    #[test]
    fn approx_projects_f1_and_bmpv_bit_identically() {
        let pixels: Vec<u16> = (0..8 * 8).map(|i: u32| ((i * 31) % 256) as u16).collect();
        let img = letter(8, 8, pixels);
        let full = extract_psltd(&img, &params8(), DescriptorVariant::Full).unwrap();
        let projected = approx(&full);
        assert_eq!(projected.len(), APPROX_LEN);
        assert_eq!(projected.f1(), full.f1());
        assert_eq!(projected.bmpv(), full.bmpv());
        assert_eq!(approx(&projected), projected);
        // Extracting directly at the approximate variant matches the
        // projection of the full extraction.
        let direct = extract_psltd(&img, &params8(), DescriptorVariant::Approx).unwrap();
        assert_eq!(direct, projected);
    }

    #[test]
    fn descriptor_ignores_page_position() {
        let content: Vec<u16> = (0..5 * 5).map(|i: u32| ((i * 53) % 256) as u16).collect();
        let inner = letter(5, 5, content.clone());
        // Embed the same 5×5 content at two offsets of larger pages.
        let mut page_a = vec![200u16; 12 * 12];
        let mut page_b = vec![200u16; 15 * 10];
        for r in 0..5 {
            for c in 0..5 {
                page_a[(r + 2) * 12 + (c + 3)] = content[r * 5 + c];
                page_b[(r + 4) * 15 + (c + 9)] = content[r * 5 + c];
            }
        }
        let img_a = letter(12, 12, page_a).crop(2, 3, 6, 7).unwrap();
        let img_b = letter(15, 10, page_b).crop(4, 9, 8, 13).unwrap();
        assert_eq!(img_a.pixels(), inner.pixels());
        let params = params8();
        let d0 = extract_psltd(&inner, &params, DescriptorVariant::Full).unwrap();
        let da = extract_psltd(&img_a, &params, DescriptorVariant::Full).unwrap();
        let db = extract_psltd(&img_b, &params, DescriptorVariant::Full).unwrap();
        assert_eq!(d0, da);
        assert_eq!(d0, db);
    }

    #[test]
    fn batch_round_trips_through_file() {
        let pixels: Vec<u16> = (0..6 * 6).map(|i: u32| ((i * 97) % 256) as u16).collect();
        let img = letter(6, 6, pixels);
        let d = extract_psltd(&img, &params8(), DescriptorVariant::Approx).unwrap();
        let mut batch = DescriptorBatch::new(DescriptorVariant::Approx);
        for i in 0..3 {
            batch
                .push(
                    &d,
                    DescriptorRecord {
                        doc_id: i,
                        component_id: 10 + i,
                        centroid: (1.5 + i as f32, 2.5),
                        bbox: Bbox { row_min: i, col_min: 0, row_max: i + 5, col_max: 5 },
                    },
                )
                .unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.pslt");
        write_descriptor_batch(&batch, &path).unwrap();
        let back = read_descriptor_batch(&path).unwrap();
        assert_eq!(back, batch);
        // Writing again produces identical bytes (determinism).
        let path2 = dir.path().join("batch2.pslt");
        write_descriptor_batch(&batch, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn batch_rejects_variant_mixing_and_bad_files() {
        let img = letter(4, 4, (0..16).map(|i| (i * 16) as u16).collect());
        let full = extract_psltd(&img, &params8(), DescriptorVariant::Full).unwrap();
        let mut batch = DescriptorBatch::new(DescriptorVariant::Approx);
        let rec = DescriptorRecord {
            doc_id: 0,
            component_id: 0,
            centroid: (0.0, 0.0),
            bbox: Bbox { row_min: 0, col_min: 0, row_max: 3, col_max: 3 },
        };
        assert!(matches!(
            batch.push(&full, rec),
            Err(PsltdError::VariantMismatch { .. })
        ));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pslt");
        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(
            read_descriptor_batch(&path),
            Err(PsltdError::Format { .. })
        ));
    }
}
