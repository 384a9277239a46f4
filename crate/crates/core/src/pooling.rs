//! Spatial pooling of letter descriptors.
//!
//! The printed-text extent of a page is estimated robustly from the letter
//! bounding boxes, partitioned into vertical columns or a grid of cells, and
//! every letter is assigned to the block holding the larger share of its
//! bounding box. Descriptors of letters in one block are then average-pooled,
//! either all at once or in consecutive reading-order groups of N_p.
//!
//! Pooling consumes descriptor vectors at the f32 interchange precision used
//! by the batch files, so pooling in memory and pooling from files produce
//! bit-identical results.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::psltd::DescriptorVariant;
use crate::segmentation::{Bbox, ConnectedComponent};
use crate::wire::{Reader, WireError, Writer};

#[derive(Debug, Error)]
pub enum PoolingError {
    #[error("cannot compute text extent of zero components")]
    NoComponents,
    #[error("degenerate text extent: {axis} span is zero")]
    DegenerateExtent { axis: &'static str },
    #[error("{axis} span {span}px is smaller than {divisor} blocks")]
    SpanTooSmall {
        axis: &'static str,
        span: u32,
        divisor: u32,
    },
    #[error("invalid pooling parameter: {0}")]
    InvalidParam(String),
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: WireError,
    },
    #[error("{path}: unsupported pooled file version {version}")]
    Version { path: PathBuf, version: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Printed-text area of a page, inclusive pixel coordinates per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TextExtent {
    pub col_start: u32,
    pub col_end: u32,
    pub row_start: u32,
    pub row_end: u32,
}

/// Estimates the text extent from component boxes. Each side takes the
/// lower median of the 1% most extreme edge coordinates (at least one), so
/// isolated spurious components cannot drag the boundary out.
pub fn text_extent(comps: &[ConnectedComponent]) -> Result<TextExtent, PoolingError> {
    let boxes: Vec<Bbox> = comps.iter().map(|c| c.bbox).collect();
    text_extent_of_bboxes(&boxes)
}

/// [`text_extent`] over raw bounding boxes (the file-based pipeline has no
/// full components, only recorded boxes).
pub fn text_extent_of_bboxes(boxes: &[Bbox]) -> Result<TextExtent, PoolingError> {
    if boxes.is_empty() {
        return Err(PoolingError::NoComponents);
    }
    let n = boxes.len();
    let m = 1.max(n.div_ceil(100)); // ⌈0.01·n⌉, at least one
    let slice_median = |mut edges: Vec<u32>, largest: bool| -> u32 {
        edges.sort_unstable();
        let slice = if largest { &edges[n - m..] } else { &edges[..m] };
        slice[(m - 1) / 2]
    };
    let extent = TextExtent {
        col_start: slice_median(boxes.iter().map(|b| b.col_min).collect(), false),
        col_end: slice_median(boxes.iter().map(|b| b.col_max).collect(), true),
        row_start: slice_median(boxes.iter().map(|b| b.row_min).collect(), false),
        row_end: slice_median(boxes.iter().map(|b| b.row_max).collect(), true),
    };
    if extent.col_start >= extent.col_end {
        return Err(PoolingError::DegenerateExtent { axis: "column" });
    }
    if extent.row_start >= extent.row_end {
        return Err(PoolingError::DegenerateExtent { axis: "row" });
    }
    Ok(extent)
}

/// Vertical columns over the text extent. Column k spans
/// [boundaries\[k\], boundaries\[k+1\]); the last column absorbs the integer
/// division remainder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnLayout {
    pub n_columns: u32,
    pub column_width: u32,
    pub boundaries: Vec<u32>,
}

/// Grid of cells over the text extent, both axes divided like columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    pub n_w: u32,
    pub n_h: u32,
    pub cell_width: u32,
    pub cell_height: u32,
    pub col_boundaries: Vec<u32>,
    pub row_boundaries: Vec<u32>,
}

fn axis_boundaries(
    start: u32,
    end: u32,
    n: u32,
    axis: &'static str,
) -> Result<(u32, Vec<u32>), PoolingError> {
    if n == 0 {
        return Err(PoolingError::InvalidParam(format!(
            "{axis} block count must be at least 1"
        )));
    }
    let span = end - start;
    let width = span / n;
    if width == 0 {
        return Err(PoolingError::SpanTooSmall { axis, span, divisor: n });
    }
    let mut boundaries: Vec<u32> = (0..n).map(|k| start + k * width).collect();
    boundaries.push(end);
    Ok((width, boundaries))
}

/// Divides the horizontal extent into `n_c` columns of width
/// ⌊span / n_c⌋, remainder to the last column.
pub fn column_layout(extent: &TextExtent, n_c: u32) -> Result<ColumnLayout, PoolingError> {
    let (column_width, boundaries) =
        axis_boundaries(extent.col_start, extent.col_end, n_c, "column")?;
    Ok(ColumnLayout {
        n_columns: n_c,
        column_width,
        boundaries,
    })
}

/// Divides the extent into an `n_w` × `n_h` grid, each axis like
/// [`column_layout`].
pub fn grid_layout(extent: &TextExtent, n_w: u32, n_h: u32) -> Result<GridLayout, PoolingError> {
    let (cell_width, col_boundaries) =
        axis_boundaries(extent.col_start, extent.col_end, n_w, "column")?;
    let (cell_height, row_boundaries) =
        axis_boundaries(extent.row_start, extent.row_end, n_h, "row")?;
    Ok(GridLayout {
        n_w,
        n_h,
        cell_width,
        cell_height,
        col_boundaries,
        row_boundaries,
    })
}

/// A concrete block partition of one page. `Page` is the degenerate
/// whole-page partition used by consecutive (block-free) pooling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    Column(ColumnLayout),
    Grid(GridLayout),
    Page,
}

impl Layout {
    pub fn spec(&self) -> LayoutSpec {
        match self {
            Layout::Column(c) => LayoutSpec::Column { n_columns: c.n_columns },
            Layout::Grid(g) => LayoutSpec::Grid { n_w: g.n_w, n_h: g.n_h },
            Layout::Page => LayoutSpec::Page,
        }
    }
}

/// Layout parameters without page-specific pixel boundaries. Two documents
/// share a spec when their block indexes are comparable, even though each
/// page computes its own extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LayoutSpec {
    Column { n_columns: u32 },
    Grid { n_w: u32, n_h: u32 },
    Page,
}

impl LayoutSpec {
    /// Builds the concrete per-page layout over an extent.
    pub fn realize(&self, extent: &TextExtent) -> Result<Layout, PoolingError> {
        Ok(match *self {
            LayoutSpec::Column { n_columns } => Layout::Column(column_layout(extent, n_columns)?),
            LayoutSpec::Grid { n_w, n_h } => Layout::Grid(grid_layout(extent, n_w, n_h)?),
            LayoutSpec::Page => Layout::Page,
        })
    }

    /// Checks a block id against this spec's index ranges.
    pub fn contains(&self, block: &BlockId) -> bool {
        match (self, block) {
            (LayoutSpec::Column { n_columns }, BlockId::Column(c)) => c < n_columns,
            (LayoutSpec::Grid { n_w, n_h }, BlockId::Cell { row, col }) => row < n_h && col < n_w,
            (LayoutSpec::Page, BlockId::Page) => true,
            _ => false,
        }
    }

    pub(crate) fn wire_parts(&self) -> (u8, u32, u32) {
        match *self {
            LayoutSpec::Column { n_columns } => (0, n_columns, 0),
            LayoutSpec::Grid { n_w, n_h } => (1, n_w, n_h),
            LayoutSpec::Page => (2, 0, 0),
        }
    }

    pub(crate) fn from_wire(kind: u8, p0: u32, p1: u32) -> Option<Self> {
        match (kind, p0, p1) {
            (0, n, 0) if n > 0 => Some(LayoutSpec::Column { n_columns: n }),
            (1, w, h) if w > 0 && h > 0 => Some(LayoutSpec::Grid { n_w: w, n_h: h }),
            (2, 0, 0) => Some(LayoutSpec::Page),
            _ => None,
        }
    }
}

impl std::fmt::Display for LayoutSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayoutSpec::Column { n_columns } => write!(f, "column({n_columns})"),
            LayoutSpec::Grid { n_w, n_h } => write!(f, "grid({n_w}x{n_h})"),
            LayoutSpec::Page => write!(f, "page"),
        }
    }
}

/// Identifies one pooling block within a layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockId {
    Column(u32),
    Cell { row: u32, col: u32 },
    Page,
}

impl BlockId {
    pub(crate) fn wire_parts(&self) -> (u32, u32) {
        match *self {
            BlockId::Column(c) => (c, 0),
            BlockId::Cell { row, col } => (row, col),
            BlockId::Page => (0, 0),
        }
    }

    pub(crate) fn from_wire(spec: &LayoutSpec, a: u32, b: u32) -> Option<Self> {
        let block = match spec {
            LayoutSpec::Column { .. } => {
                if b != 0 {
                    return None;
                }
                BlockId::Column(a)
            }
            LayoutSpec::Grid { .. } => BlockId::Cell { row: a, col: b },
            LayoutSpec::Page => {
                if a != 0 || b != 0 {
                    return None;
                }
                BlockId::Page
            }
        };
        spec.contains(&block).then_some(block)
    }
}

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockId::Column(c) => write!(f, "col:{c}"),
            BlockId::Cell { row, col } => write!(f, "cell:{row},{col}"),
            BlockId::Page => write!(f, "page"),
        }
    }
}

impl serde::Serialize for BlockId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Picks the block along one axis with the largest overlap against the
/// inclusive interval [min, max]. The first and last blocks extend to ±∞ so
/// components beyond the extent clamp to the nearest edge block; ties go to
/// the lower index.
fn assign_axis(boundaries: &[u32], min: u32, max: u32) -> u32 {
    let n = boundaries.len() - 1;
    let (mut best, mut best_overlap) = (0u32, i64::MIN);
    for k in 0..n {
        let lo = if k == 0 { i64::MIN } else { boundaries[k] as i64 };
        let hi = if k == n - 1 {
            i64::MAX
        } else {
            boundaries[k + 1] as i64
        };
        let overlap = (hi.min(max as i64 + 1) - lo.max(min as i64)).max(0);
        if overlap > best_overlap {
            best_overlap = overlap;
            best = k as u32;
        }
    }
    best
}

/// Assigns a bounding box to the block containing the larger share of its
/// area. Ties take the left-most column; on grids the smaller grid row, then
/// the smaller grid column.
pub fn assign_bbox(bbox: &Bbox, layout: &Layout) -> BlockId {
    match layout {
        Layout::Column(c) => BlockId::Column(assign_axis(&c.boundaries, bbox.col_min, bbox.col_max)),
        // The cell area overlap factors into independent axis overlaps, so
        // the (row, col) argmax pair is the per-axis argmax pair, and the
        // per-axis low-index tie rule is exactly the (row, col) lexicographic
        // tie rule.
        Layout::Grid(g) => BlockId::Cell {
            row: assign_axis(&g.row_boundaries, bbox.row_min, bbox.row_max),
            col: assign_axis(&g.col_boundaries, bbox.col_min, bbox.col_max),
        },
        Layout::Page => BlockId::Page,
    }
}

/// Assigns a component to its pooling block by bounding-box majority.
pub fn assign_block(comp: &ConnectedComponent, layout: &Layout) -> BlockId {
    assign_bbox(&comp.bbox, layout)
}

/// Group size for pooling within a block: everything at once, or consecutive
/// reading-order groups of the given size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PoolSize {
    All,
    Of(u32),
}

impl std::str::FromStr for PoolSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(PoolSize::All);
        }
        match s.parse::<u32>() {
            Ok(n) if n >= 1 => Ok(PoolSize::Of(n)),
            _ => Err(format!("pool size must be \"all\" or a positive integer, got {s:?}")),
        }
    }
}

impl std::fmt::Display for PoolSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolSize::All => write!(f, "all"),
            PoolSize::Of(n) => write!(f, "{n}"),
        }
    }
}

/// An average-pooled descriptor group of one block of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    pub doc_id: u32,
    pub block: BlockId,
    pub vector: Vec<f32>,
    pub member_count: u32,
}

/// One letter entering pooling: its page geometry plus its descriptor at
/// interchange precision.
#[derive(Debug, Clone, Copy)]
pub struct PoolMember<'a> {
    pub centroid: (f32, f32),
    pub bbox: Bbox,
    pub vector: &'a [f32],
}

/// Pools one document's letters.
///
/// Members are assigned to blocks, sorted in reading order (centroid row,
/// then column), and averaged. With `PoolSize::Of(k)` each block is split
/// into consecutive groups of k; a final partial group keeps its own pooled
/// vector when it has at least ⌈k/2⌉ members and is merged into the previous
/// group otherwise (a lone undersized group stands by itself). Grid layouts
/// always pool the whole cell at once. Empty input yields an empty list.
pub fn pool_document(
    doc_id: u32,
    members: &[PoolMember],
    layout: &Layout,
    n_p: PoolSize,
) -> Vec<PooledFeature> {
    if members.is_empty() {
        return Vec::new();
    }
    let dim = members[0].vector.len();
    assert!(
        members.iter().all(|m| m.vector.len() == dim),
        "pool members must share one descriptor length"
    );
    let n_p = match layout {
        Layout::Grid(_) => PoolSize::All,
        _ => n_p,
    };

    let mut by_block: BTreeMap<BlockId, Vec<usize>> = BTreeMap::new();
    for (i, m) in members.iter().enumerate() {
        by_block.entry(assign_bbox(&m.bbox, layout)).or_default().push(i);
    }

    let mut out = Vec::new();
    for (block, mut indices) in by_block {
        indices.sort_by(|&a, &b| {
            let (ca, cb) = (members[a].centroid, members[b].centroid);
            ca.0.total_cmp(&cb.0).then(ca.1.total_cmp(&cb.1))
        });
        for group in split_groups(&indices, n_p) {
            let mut sum = vec![0.0f64; dim];
            for &i in group {
                for (s, &v) in sum.iter_mut().zip(members[i].vector) {
                    *s += v as f64;
                }
            }
            let count = group.len() as u32;
            out.push(PooledFeature {
                doc_id,
                block,
                vector: sum.iter().map(|&s| (s / group.len() as f64) as f32).collect(),
                member_count: count,
            });
        }
    }
    out
}

/// Splits sorted block members into pooling groups per the partial-group
/// rule. Returned slices partition the input.
fn split_groups(indices: &[usize], n_p: PoolSize) -> Vec<&[usize]> {
    match n_p {
        PoolSize::All => vec![indices],
        PoolSize::Of(k) => {
            let k = k as usize;
            let full = indices.len() / k;
            let rem = indices.len() % k;
            let mut groups: Vec<&[usize]> = (0..full).map(|g| &indices[g * k..(g + 1) * k]).collect();
            if rem > 0 {
                if rem >= k.div_ceil(2) || full == 0 {
                    groups.push(&indices[full * k..]);
                } else {
                    // Merge the undersized tail into the previous group.
                    groups.pop();
                    groups.push(&indices[(full - 1) * k..]);
                }
            }
            groups
        }
    }
}

/// Pools in-memory (component, descriptor) pairs; descriptors are first cast
/// to the f32 interchange precision so this path matches the file-based one
/// bit-for-bit.
pub fn pool_descriptors(
    doc_id: u32,
    features: &[(ConnectedComponent, crate::psltd::Descriptor)],
    layout: &Layout,
    n_p: PoolSize,
) -> Vec<PooledFeature> {
    let vectors: Vec<Vec<f32>> = features.iter().map(|(_, d)| d.to_f32_vec()).collect();
    let members: Vec<PoolMember> = features
        .iter()
        .zip(&vectors)
        .map(|((comp, _), vector)| PoolMember {
            centroid: (comp.centroid.0 as f32, comp.centroid.1 as f32),
            bbox: comp.bbox,
            vector,
        })
        .collect();
    pool_document(doc_id, &members, layout, n_p)
}

pub const POOLED_FILE_VERSION: u32 = 1;
const POOLED_MAGIC: &[u8; 4] = b"PSLP";

/// Pooled features of one or more documents under a single layout spec and
/// descriptor variant.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledBatch {
    pub variant: DescriptorVariant,
    pub spec: LayoutSpec,
    pub features: Vec<PooledFeature>,
}

impl PooledBatch {
    pub fn new(variant: DescriptorVariant, spec: LayoutSpec) -> Self {
        Self {
            variant,
            spec,
            features: Vec::new(),
        }
    }

    /// Appends features, validating length and block-id consistency.
    pub fn extend(&mut self, features: Vec<PooledFeature>) -> Result<(), PoolingError> {
        for f in &features {
            if f.vector.len() != self.variant.len() {
                return Err(PoolingError::InvalidParam(format!(
                    "pooled vector length {} does not match {} variant ({})",
                    f.vector.len(),
                    self.variant,
                    self.variant.len()
                )));
            }
            if !self.spec.contains(&f.block) {
                return Err(PoolingError::InvalidParam(format!(
                    "block {} outside layout {}",
                    f.block, self.spec
                )));
            }
        }
        self.features.extend(features);
        Ok(())
    }
}

/// Writes a pooled-feature file: header {magic "PSLP", version, variant,
/// layout spec, count, dim}, then count×dim f32 vectors, then per-feature
/// records (doc_id, block id, member count). Little-endian throughout.
pub fn write_pooled_batch(batch: &PooledBatch, path: impl AsRef<Path>) -> Result<(), PoolingError> {
    let path = path.as_ref();
    let dim = batch.variant.len();
    let mut w = Writer::with_capacity(26 + batch.features.len() * (dim * 4 + 16));
    w.magic(POOLED_MAGIC);
    w.u32(POOLED_FILE_VERSION);
    w.u8(batch.variant.wire_code());
    let (kind, p0, p1) = batch.spec.wire_parts();
    w.u8(kind);
    w.u32(p0);
    w.u32(p1);
    w.u32(batch.features.len() as u32);
    w.u32(dim as u32);
    for f in &batch.features {
        w.f32_slice(&f.vector);
    }
    for f in &batch.features {
        let (a, b) = f.block.wire_parts();
        w.u32(f.doc_id);
        w.u32(a);
        w.u32(b);
        w.u32(f.member_count);
    }
    fs::write(path, w.into_bytes()).map_err(|source| PoolingError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads a pooled-feature file written by [`write_pooled_batch`].
pub fn read_pooled_batch(path: impl AsRef<Path>) -> Result<PooledBatch, PoolingError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PoolingError::Io {
        path: path.to_owned(),
        source,
    })?;
    let wrap = |source: WireError| PoolingError::Format {
        path: path.to_owned(),
        source,
    };
    let bad = |offset: usize, detail: String| {
        PoolingError::Format {
            path: path.to_owned(),
            source: WireError { offset, detail },
        }
    };
    let mut r = Reader::new(&bytes);
    r.magic(POOLED_MAGIC).map_err(wrap)?;
    let version = r.u32("version").map_err(wrap)?;
    if version != POOLED_FILE_VERSION {
        return Err(PoolingError::Version {
            path: path.to_owned(),
            version,
        });
    }
    let variant_code = r.u8("variant").map_err(wrap)?;
    let variant = DescriptorVariant::from_wire(variant_code)
        .ok_or_else(|| bad(8, format!("unknown variant code {variant_code}")))?;
    let kind = r.u8("layout kind").map_err(wrap)?;
    let p0 = r.u32("layout param 0").map_err(wrap)?;
    let p1 = r.u32("layout param 1").map_err(wrap)?;
    let spec = LayoutSpec::from_wire(kind, p0, p1)
        .ok_or_else(|| bad(9, format!("invalid layout descriptor ({kind},{p0},{p1})")))?;
    let count = r.u32("count").map_err(wrap)? as usize;
    let dim = r.u32("dim").map_err(wrap)? as usize;
    if dim != variant.len() {
        return Err(bad(
            18,
            format!("dim {dim} does not match {variant} variant ({})", variant.len()),
        ));
    }
    let mut vectors = Vec::with_capacity(count);
    for _ in 0..count {
        vectors.push(r.f32_vec(dim, "pooled vector").map_err(wrap)?);
    }
    let mut features = Vec::with_capacity(count);
    for vector in vectors {
        let offset = r.pos();
        let doc_id = r.u32("doc_id").map_err(wrap)?;
        let a = r.u32("block id").map_err(wrap)?;
        let b = r.u32("block id").map_err(wrap)?;
        let member_count = r.u32("member count").map_err(wrap)?;
        let block = BlockId::from_wire(&spec, a, b)
            .ok_or_else(|| bad(offset, format!("block id ({a},{b}) invalid for layout {spec}")))?;
        if member_count == 0 {
            return Err(bad(offset, "member count must be at least 1".into()));
        }
        features.push(PooledFeature {
            doc_id,
            block,
            vector,
            member_count,
        });
    }
    r.expect_end().map_err(wrap)?;
    Ok(PooledBatch {
        variant,
        spec,
        features,
    })
}
