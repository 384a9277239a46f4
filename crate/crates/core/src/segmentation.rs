//! Page binarization, connected component labeling, component filtering, and
//! grayscale letter cropping.
//!
//! Binarization is global Otsu thresholding over the full-depth histogram;
//! the descriptor consumes grayscale crops, so binarization only needs to
//! localize letters reliably. Labeling uses the classic two-pass union-find
//! algorithm with 8-connectivity so diagonally touching strokes stay one
//! component.

use thiserror::Error;

use crate::imageio::DocumentImage;

/// Errors from segmentation operations.
#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("filter policy invalid: {0}")]
    InvalidPolicy(String),
    #[error("component {id} crop is {width}x{height}, too small for descriptor (needs 3x3)")]
    CropTooSmall { id: u32, width: u32, height: u32 },
    #[error("component {id} bbox ({0:?}) exceeds {width}x{height} image", .bbox)]
    BboxOutOfBounds {
        id: u32,
        bbox: Bbox,
        width: u32,
        height: u32,
    },
}

/// Inclusive bounding box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Bbox {
    pub row_min: u32,
    pub col_min: u32,
    pub row_max: u32,
    pub col_max: u32,
}

impl Bbox {
    pub fn width(&self) -> u32 {
        self.col_max - self.col_min + 1
    }

    pub fn height(&self) -> u32 {
        self.row_max - self.row_min + 1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }
}

/// Binary page mask: `true` = ink (dark), `false` = background (light).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(
            bits.len(),
            width as usize * height as usize,
            "bit buffer length must match dimensions"
        );
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> bool {
        self.bits[row as usize * self.width as usize + col as usize]
    }

    /// Number of ink pixels.
    pub fn ink_count(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }
}

/// A labeled ink component with its box, area, and centroid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConnectedComponent {
    pub id: u32,
    pub bbox: Bbox,
    /// Count of ink pixels.
    pub area: u64,
    /// Mean ink pixel position, (row, col).
    pub centroid: (f64, f64),
}

/// Keep/remove rules for spurious components: area relative to the median
/// area of all components, plus optional absolute width/height windows
/// (inclusive bounds).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FilterPolicy {
    pub area_median_low: f64,
    pub area_median_high: f64,
    pub width_range: Option<(u32, u32)>,
    pub height_range: Option<(u32, u32)>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            area_median_low: 0.5,
            area_median_high: 4.0,
            width_range: None,
            height_range: None,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if !self.area_median_low.is_finite()
            || !self.area_median_high.is_finite()
            || self.area_median_low <= 0.0
            || self.area_median_low >= self.area_median_high
        {
            return Err(SegmentationError::InvalidPolicy(format!(
                "area ratios must satisfy 0 < low < high, got {} and {}",
                self.area_median_low, self.area_median_high
            )));
        }
        for (name, range) in [("width", self.width_range), ("height", self.height_range)] {
            if let Some((min, max)) = range {
                if min >= max {
                    return Err(SegmentationError::InvalidPolicy(format!(
                        "{name} range must have min < max, got ({min},{max})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Global Otsu binarization over the full-depth intensity histogram.
///
/// Ink is every pixel strictly below the returned class boundary (the Otsu
/// split index k* maximizes between-class variance; ink = intensity ≤ k*).
/// A single-intensity image has no split and comes back all background.
pub fn binarize(img: &DocumentImage) -> BinaryImage {
    let bins = img.bit_depth().max_value() as usize + 1;
    let mut hist = vec![0u64; bins];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let bits = match otsu_threshold(&hist) {
        Some(split) => img.pixels().iter().map(|&p| (p as usize) <= split).collect(),
        None => vec![false; img.pixels().len()],
    };
    BinaryImage::new(img.width(), img.height(), bits)
}

/// Otsu's method: returns the split index k maximizing between-class variance
/// where class 0 is intensities ≤ k and class 1 is intensities > k. Ties take
/// the lowest k. Returns `None` when fewer than two distinct intensities
/// occur (no split exists).
pub fn otsu_threshold(hist: &[u64]) -> Option<usize> {
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as f64 * h as f64)
        .sum();
    let mut w0 = 0u64;
    let mut sum0 = 0.0f64;
    let mut best: Option<(usize, f64)> = None;
    for (k, &h) in hist.iter().enumerate() {
        w0 += h;
        sum0 += k as f64 * h as f64;
        if w0 == 0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0 {
            break;
        }
        let mean0 = sum0 / w0 as f64;
        let mean1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (mean0 - mean1) * (mean0 - mean1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((k, between));
        }
    }
    best.map(|(k, _)| k)
}

/// Two-pass 8-connectivity labeling. Components are numbered in raster order
/// of their first pixel, then sorted by (row_min, col_min, id). Every ink
/// pixel belongs to exactly one component; a blank page yields an empty list.
pub fn label_components(bin: &BinaryImage) -> Vec<ConnectedComponent> {
    let (w, h) = (bin.width as usize, bin.height as usize);
    const UNLABELED: u32 = u32::MAX;
    let mut labels = vec![UNLABELED; w * h];
    let mut parent: Vec<u32> = Vec::new();

    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }
    fn union(parent: &mut [u32], a: u32, b: u32) {
        let (ra, rb) = (find(parent, a), find(parent, b));
        // Keep the smaller root so provisional labels stay raster-ordered.
        if ra < rb {
            parent[rb as usize] = ra;
        } else {
            parent[ra as usize] = rb;
        }
    }

    // First pass: provisional labels from the four already-scanned neighbors
    // (W, NW, N, NE).
    for row in 0..h {
        for col in 0..w {
            if !bin.bits[row * w + col] {
                continue;
            }
            let mut neighbor_label = UNLABELED;
            let mut merge = [UNLABELED; 4];
            let mut n_merge = 0;
            let candidates = [
                (row > 0 && col > 0, row.wrapping_sub(1), col.wrapping_sub(1)),
                (row > 0, row.wrapping_sub(1), col),
                (row > 0 && col + 1 < w, row.wrapping_sub(1), col + 1),
                (col > 0, row, col.wrapping_sub(1)),
            ];
            for (ok, r, c) in candidates {
                if ok {
                    let l = labels[r * w + c];
                    if l != UNLABELED {
                        if neighbor_label == UNLABELED {
                            neighbor_label = l;
                        } else if l != neighbor_label {
                            merge[n_merge] = l;
                            n_merge += 1;
                        }
                    }
                }
            }
            let label = if neighbor_label == UNLABELED {
                let fresh = parent.len() as u32;
                parent.push(fresh);
                fresh
            } else {
                for &other in &merge[..n_merge] {
                    union(&mut parent, neighbor_label, other);
                }
                neighbor_label
            };
            labels[row * w + col] = label;
        }
    }

    // Second pass: resolve to roots, numbering components by raster order of
    // first appearance, and accumulate geometry.
    let mut root_to_id: Vec<u32> = vec![UNLABELED; parent.len()];
    let mut comps: Vec<(Bbox, u64, u64, u64)> = Vec::new(); // bbox, area, Σrow, Σcol
    for row in 0..h {
        for col in 0..w {
            let l = labels[row * w + col];
            if l == UNLABELED {
                continue;
            }
            let root = find(&mut parent, l);
            let id = if root_to_id[root as usize] == UNLABELED {
                let id = comps.len() as u32;
                root_to_id[root as usize] = id;
                comps.push((
                    Bbox {
                        row_min: row as u32,
                        col_min: col as u32,
                        row_max: row as u32,
                        col_max: col as u32,
                    },
                    0,
                    0,
                    0,
                ));
                id
            } else {
                root_to_id[root as usize]
            };
            let (bbox, area, sum_row, sum_col) = &mut comps[id as usize];
            bbox.row_min = bbox.row_min.min(row as u32);
            bbox.col_min = bbox.col_min.min(col as u32);
            bbox.row_max = bbox.row_max.max(row as u32);
            bbox.col_max = bbox.col_max.max(col as u32);
            *area += 1;
            *sum_row += row as u64;
            *sum_col += col as u64;
        }
    }

    let mut out: Vec<ConnectedComponent> = comps
        .into_iter()
        .enumerate()
        .map(|(id, (bbox, area, sum_row, sum_col))| ConnectedComponent {
            id: id as u32,
            bbox,
            area,
            centroid: (sum_row as f64 / area as f64, sum_col as f64 / area as f64),
        })
        .collect();
    out.sort_by_key(|c| (c.bbox.row_min, c.bbox.col_min, c.id));
    out
}

/// Removes spurious components. The area median (lower median of the sorted
/// areas) is computed once over ALL input components, then each component is
/// kept iff its area lies in [low×median, high×median] and, when configured,
/// its width and height fall inside the inclusive ranges. Ids are preserved.
pub fn filter_components(
    comps: &[ConnectedComponent],
    policy: &FilterPolicy,
) -> Vec<ConnectedComponent> {
    if comps.is_empty() {
        return Vec::new();
    }
    let mut areas: Vec<u64> = comps.iter().map(|c| c.area).collect();
    areas.sort_unstable();
    let median = areas[(areas.len() - 1) / 2] as f64;
    let (lo, hi) = (
        policy.area_median_low * median,
        policy.area_median_high * median,
    );
    comps
        .iter()
        .filter(|c| {
            let area = c.area as f64;
            area >= lo
                && area <= hi
                && policy
                    .width_range
                    .is_none_or(|(min, max)| c.bbox.width() >= min && c.bbox.width() <= max)
                && policy
                    .height_range
                    .is_none_or(|(min, max)| c.bbox.height() >= min && c.bbox.height() <= max)
        })
        .cloned()
        .collect()
}

/// A grayscale letter image plus its page-coordinate component, which pooling
/// needs for block assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct LetterCrop {
    pub image: DocumentImage,
    pub component: ConnectedComponent,
}

/// Crops the component's bounding box out of the ORIGINAL grayscale image
/// (the descriptor consumes intensity texture, not the binary mask).
/// Boxes smaller than 3×3 cannot host a descriptor and are rejected so
/// callers can skip them.
pub fn crop_letter(
    img: &DocumentImage,
    comp: &ConnectedComponent,
) -> Result<LetterCrop, SegmentationError> {
    let b = comp.bbox;
    if b.row_max >= img.height() || b.col_max >= img.width() {
        return Err(SegmentationError::BboxOutOfBounds {
            id: comp.id,
            bbox: b,
            width: img.width(),
            height: img.height(),
        });
    }
    if b.width() < 3 || b.height() < 3 {
        return Err(SegmentationError::CropTooSmall {
            id: comp.id,
            width: b.width(),
            height: b.height(),
        });
    }
    let image = img
        .crop(b.row_min, b.col_min, b.row_max, b.col_max)
        .expect("bbox validated against image bounds");
    Ok(LetterCrop {
        image,
        component: comp.clone(),
    })
}

/// Renders components as CSV with the header row
/// `id,row_min,col_min,row_max,col_max,area`.
pub fn components_to_csv(comps: &[ConnectedComponent]) -> String {
    let mut out = String::from("id,row_min,col_min,row_max,col_max,area\n");
    for c in comps {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.id, c.bbox.row_min, c.bbox.col_min, c.bbox.row_max, c.bbox.col_max, c.area
        ));
    }
    out
}
