//! End-to-end acceptance gate for the attribution pipeline.
//!
//! Eleven checks, each printing one `criterion N: pass` line (run with
//! `--nocapture` to see them). Criteria 1–5 are fast structural checks
//! whose expected values come from independent oracles written here, not
//! from the library code under test. Criteria 6–10 evaluate a full
//! synthetic corpus off one shared fixture; criterion 11 recomputes that
//! fixture from scratch and demands byte-identical rendered output.
//!
//! Fixture shape: 8 synthetic printers (master seed 42), 15 documents each
//! of glyph family Alpha for the closed-set runs plus 5 of family Beta for
//! cross-family transfer, at the default page geometry (2550×3300 px, 45×30
//! glyphs of 48 px — 1350 letters per page), approximate descriptor
//! variant. On one core the fixture takes a few minutes to build; every
//! output it feeds into the assertions is deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use once_cell::sync::Lazy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use printtrace_core::eval::{
    fisher_ratio, lda_project, mean_pairwise_distance, run_iterations_pooled, run_split_pooled,
    sc_cc_analysis, sc_cc_to_csv, variance_report, variance_to_csv, ExperimentOptions,
    ExperimentReport, PooledDoc, ScCcRow, SplitPlan, VarianceGroup, VarianceRow,
};
use printtrace_core::imageio::{BitDepth, DocumentImage};
use printtrace_core::pipeline::{extract_document, pool_extracted};
use printtrace_core::pooling::{
    assign_bbox, column_layout, grid_layout, text_extent_of_bboxes, BlockId, Layout, LayoutSpec,
    PoolSize, PooledFeature, TextExtent,
};
use printtrace_core::predict::{
    build_bank, pearson_r, pearson_r_f32, predict_document, Predictor,
};
use printtrace_core::psltd::{
    extract_psltd, uniform_bin, DescriptorParams, DescriptorVariant, APPROX_LEN, BINS, BMPV_LEN,
    F1_LEN, F2_LEN, F3_LEN, FULL_LEN,
};
use printtrace_core::segmentation::{label_components, Bbox, BinaryImage, FilterPolicy};
use printtrace_core::synth::{make_printer_profiles, render_document, GlyphFamily, PageParams};

// ---------------------------------------------------------------------------
// Criterion 1: descriptor dimensions.

#[test]
fn c01_descriptor_dimensions() {
    // The four sub-histogram families and both variant totals, as numbers,
    // not as re-derivations of the library's own formulas.
    assert_eq!(F1_LEN, 4425, "criterion 1: FAIL — intensity-similarity family length");
    assert_eq!(F2_LEN, 1475, "criterion 1: FAIL — gradient-similarity family length");
    assert_eq!(F3_LEN, 4425, "criterion 1: FAIL — combined-similarity family length");
    assert_eq!(BMPV_LEN, 177, "criterion 1: FAIL — magnitude-pattern family length");
    assert_eq!(FULL_LEN, 10502, "criterion 1: FAIL — full variant length");
    assert_eq!(APPROX_LEN, 4602, "criterion 1: FAIL — approximate variant length");
    assert_eq!(F1_LEN + F2_LEN + F3_LEN + BMPV_LEN, FULL_LEN);
    assert_eq!(F1_LEN + BMPV_LEN, APPROX_LEN);
    assert_eq!(DescriptorVariant::Full.len(), FULL_LEN);
    assert_eq!(DescriptorVariant::Approx.len(), APPROX_LEN);

    // A real extraction must produce exactly these lengths, split the same
    // way. 16×16 binary noise gives every sub-histogram something to count.
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let pixels: Vec<u16> = (0..16 * 16)
        .map(|_| if rng.random::<f64>() < 0.5 { 0 } else { 255 })
        .collect();
    let letter = DocumentImage::new(16, 16, BitDepth::Eight, pixels).unwrap();
    let params = DescriptorParams::defaults_for(BitDepth::Eight);

    let full = extract_psltd(&letter, &params, DescriptorVariant::Full).unwrap();
    assert_eq!(full.len(), 10502);
    assert_eq!(full.f1().len(), 4425);
    assert_eq!(full.f2().map(<[f64]>::len), Some(1475));
    assert_eq!(full.f3().map(<[f64]>::len), Some(4425));
    assert_eq!(full.bmpv().len(), 177);

    let approx = extract_psltd(&letter, &params, DescriptorVariant::Approx).unwrap();
    assert_eq!(approx.len(), 4602);
    assert_eq!(approx.f1().len(), 4425);
    assert_eq!(approx.f2(), None);
    assert_eq!(approx.f3(), None);
    assert_eq!(approx.bmpv().len(), 177);

    println!("criterion 1: pass — full 10502 = 4425+1475+4425+177, approx 4602 = 4425+177");
}

// ---------------------------------------------------------------------------
// Criterion 2: uniform-pattern binning over all 256 byte patterns.

#[test]
fn c02_uniform_pattern_binning() {
    // Independent transition count: walk the 8 circular bit pairs directly.
    let circular_transitions = |p: u8| -> u32 {
        (0..8)
            .filter(|&i| (p >> i) & 1 != (p >> ((i + 1) % 8)) & 1)
            .count() as u32
    };

    let mut uniform_bins = BTreeSet::new();
    let mut uniform_patterns = 0u32;
    for p in 0..=255u8 {
        let bin = uniform_bin(p);
        assert!(bin < BINS, "criterion 2: FAIL — bin {bin} out of range for pattern {p:#010b}");
        if circular_transitions(p) <= 2 {
            uniform_patterns += 1;
            assert!(bin < 58, "criterion 2: FAIL — uniform pattern {p:#010b} mapped to catch-all");
            assert!(
                uniform_bins.insert(bin),
                "criterion 2: FAIL — bin {bin} assigned to two uniform patterns"
            );
        } else {
            assert_eq!(
                bin, 58,
                "criterion 2: FAIL — non-uniform pattern {p:#010b} escaped the catch-all bin"
            );
        }
    }
    assert_eq!(uniform_patterns, 58, "criterion 2: FAIL — uniform pattern count");
    assert_eq!(uniform_bins, (0..58).collect::<BTreeSet<_>>());

    println!("criterion 2: pass — 58 uniform patterns fill bins 0..=57, 198 others share bin 58");
}

// ---------------------------------------------------------------------------
// Criterion 3: block layout geometry on the reference text extent.

#[test]
fn c03_layout_geometry() {
    // A text area spanning 3575 px across and 5320 px down.
    let extent = TextExtent { col_start: 0, col_end: 3575, row_start: 0, row_end: 5320 };

    let columns = column_layout(&extent, 15).unwrap();
    assert_eq!(
        columns.column_width, 238,
        "criterion 3: FAIL — 3575 px over 15 columns must floor to 238 px"
    );
    assert_eq!(columns.boundaries.len(), 16);
    for k in 0..14 {
        assert_eq!(columns.boundaries[k + 1] - columns.boundaries[k], 238);
    }
    // The last column absorbs the division remainder.
    assert_eq!(columns.boundaries[15] - columns.boundaries[14], 3575 - 14 * 238);

    let grid = grid_layout(&extent, 8, 8).unwrap();
    assert!(
        (grid.cell_width as i64 - 446).abs() <= 1,
        "criterion 3: FAIL — 8×8 cell width {} not within 1 px of 446",
        grid.cell_width
    );
    assert!(
        (grid.cell_height as i64 - 665).abs() <= 1,
        "criterion 3: FAIL — 8×8 cell height {} not within 1 px of 665",
        grid.cell_height
    );

    println!(
        "criterion 3: pass — 15 columns of 238 px; 8×8 grid of {}×{} px cells",
        grid.cell_height, grid.cell_width
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: correlation coefficient properties over random pairs.

#[test]
fn c04_correlation_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);

    for case in 0..10_000u32 {
        let n = rng.random_range(2..=64);
        let scale = 10f64.powi(rng.random_range(-2..=3));
        let offset = (rng.random::<f64>() - 0.5) * 1e3;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * scale + offset).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * scale - offset).collect();

        let r = pearson_r(&x, &y).unwrap();
        assert!(r.abs() <= 1.0 + 1e-12, "criterion 4: FAIL — |r| = {} exceeds 1", r.abs());
        assert_eq!(r, pearson_r(&y, &x).unwrap(), "criterion 4: FAIL — asymmetric r");

        // Positive affine maps of one side leave r unchanged (up to
        // accumulation error), negation flips its sign exactly.
        let a = 0.1 + 3.0 * rng.random::<f64>();
        let b = (rng.random::<f64>() - 0.5) * 10.0;
        let mapped: Vec<f64> = x.iter().map(|&v| a * v + b).collect();
        let r_mapped = pearson_r(&mapped, &y).unwrap();
        assert!(
            (r_mapped - r).abs() <= 1e-9,
            "criterion 4: FAIL — affine map moved r by {}",
            (r_mapped - r).abs()
        );
        let negated: Vec<f64> = x.iter().map(|&v| -v).collect();
        assert_eq!(pearson_r(&negated, &y).unwrap(), -r, "criterion 4: FAIL — sign flip inexact");

        // Every few hundred cases, pin the zero-variance convention.
        if case % 250 == 0 {
            let flat = vec![offset; n];
            assert_eq!(pearson_r(&flat, &y).unwrap(), 0.0);
            assert_eq!(pearson_r(&x, &flat).unwrap(), 0.0);
        }
    }

    // The f32 interchange path obeys the same contract.
    for case in 0..1_000u32 {
        let n = rng.random_range(2..=64);
        let x: Vec<f32> = (0..n).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
        let y: Vec<f32> = (0..n).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
        let r = pearson_r_f32(&x, &y);
        assert!(r.abs() <= 1.0 + 1e-12);
        assert_eq!(r, pearson_r_f32(&y, &x));
        let negated: Vec<f32> = x.iter().map(|&v| -v).collect();
        assert_eq!(pearson_r_f32(&negated, &y), -r);
        if case % 100 == 0 {
            assert_eq!(pearson_r_f32(&vec![1.5f32; n], &y), 0.0);
        }
    }

    println!("criterion 4: pass — bound, symmetry, affine invariance, sign flip, zero-variance");
}

// ---------------------------------------------------------------------------
// Criterion 5: independent oracles for labeling, block assignment, argmax.

/// Flood-fill labeling by explicit stack walk, 8-connected, summarized the
/// same way the two-pass labeler reports components: bbox, area, and the
/// integer-sum centroid.
fn flood_fill_components(width: usize, height: usize, bits: &[bool]) -> Vec<(Bbox, u64, f64, f64)> {
    let mut seen = vec![false; bits.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        let (mut area, mut sum_r, mut sum_c) = (0u64, 0u64, 0u64);
        let (mut bbox_set, mut bbox) = (false, Bbox { row_min: 0, col_min: 0, row_max: 0, col_max: 0 });
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (row, col) = (i / width, i % width);
            area += 1;
            sum_r += row as u64;
            sum_c += col as u64;
            if !bbox_set {
                bbox = Bbox {
                    row_min: row as u32,
                    col_min: col as u32,
                    row_max: row as u32,
                    col_max: col as u32,
                };
                bbox_set = true;
            } else {
                bbox.row_min = bbox.row_min.min(row as u32);
                bbox.col_min = bbox.col_min.min(col as u32);
                bbox.row_max = bbox.row_max.max(row as u32);
                bbox.col_max = bbox.col_max.max(col as u32);
            }
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (row as i64 + dr, col as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= height as i64 || nc >= width as i64 {
                        continue;
                    }
                    let ni = nr as usize * width + nc as usize;
                    if bits[ni] && !seen[ni] {
                        seen[ni] = true;
                        stack.push(ni);
                    }
                }
            }
        }
        out.push((bbox, area, sum_r as f64 / area as f64, sum_c as f64 / area as f64));
    }
    out
}

/// Which block of a partition holds integer coordinate `c`. Interior blocks
/// are [boundaries[k], boundaries[k+1]); the outermost two extend to ±∞.
fn block_of(boundaries: &[u32], c: i64) -> usize {
    let n = boundaries.len() - 1;
    for k in 0..n {
        let lo = if k == 0 { i64::MIN } else { boundaries[k] as i64 };
        let hi = if k == n - 1 { i64::MAX } else { boundaries[k + 1] as i64 };
        if c >= lo && c < hi {
            return k;
        }
    }
    unreachable!("blocks partition the integer line");
}

/// Per-coordinate membership counts of the inclusive interval [min, max]
/// against one boundary axis.
fn axis_pixel_counts(boundaries: &[u32], min: u32, max: u32) -> Vec<u64> {
    let mut counts = vec![0u64; boundaries.len() - 1];
    for c in min as i64..=max as i64 {
        counts[block_of(boundaries, c)] += 1;
    }
    counts
}

fn argmax_low_tie(counts: &[u64]) -> usize {
    let best = *counts.iter().max().unwrap();
    counts.iter().position(|&c| c == best).unwrap()
}

/// Textbook one-pass correlation, deliberately a different formula shape
/// than the library's two-pass version.
fn naive_pearson(x: &[f32], y: &[f32]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a as f64, b as f64);
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    let cov = sxy - sx * sy / n;
    let vx = sxx - sx * sx / n;
    let vy = syy - sy * sy / n;
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

#[test]
fn c05_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);

    // (a) Two-pass labeling against flood fill on 1000 random 64×64 masks,
    // across sparse to nearly solid ink.
    for _ in 0..1000 {
        let density = 0.05 + 0.9 * rng.random::<f64>();
        let bits: Vec<bool> = (0..64 * 64).map(|_| rng.random::<f64>() < density).collect();
        let image = BinaryImage::new(64, 64, bits.clone());
        let mut got: Vec<_> = label_components(&image)
            .into_iter()
            .map(|c| (c.bbox, c.area, c.centroid.0.to_bits(), c.centroid.1.to_bits()))
            .collect();
        let mut want: Vec<_> = flood_fill_components(64, 64, &bits)
            .into_iter()
            .map(|(bbox, area, cr, cc)| (bbox, area, cr.to_bits(), cc.to_bits()))
            .collect();
        let key = |v: &(Bbox, u64, u64, u64)| {
            (v.0.row_min, v.0.col_min, v.0.row_max, v.0.col_max, v.1, v.2, v.3)
        };
        got.sort_by_key(key);
        want.sort_by_key(key);
        assert_eq!(got, want, "criterion 5: FAIL — labeling disagrees with flood fill");
        let ink: u64 = got.iter().map(|v| v.1).sum();
        assert_eq!(ink, image.ink_count());
    }

    // (b) Block assignment against per-pixel membership counts on 1000
    // random extents/boxes, including boxes overhanging the extent.
    for _ in 0..1000 {
        let col_start = rng.random_range(0..400u32);
        let row_start = rng.random_range(0..400u32);
        let n_cols = rng.random_range(2..=20u32);
        let (n_w, n_h) = (rng.random_range(2..=10u32), rng.random_range(2..=10u32));
        let col_span = rng.random_range(20 * 21..4000u32);
        let row_span = rng.random_range(10 * 11..4000u32);
        let extent = TextExtent {
            col_start,
            col_end: col_start + col_span,
            row_start,
            row_end: row_start + row_span,
        };
        let random_interval = |rng: &mut ChaCha8Rng, start: u32, end: u32| -> (u32, u32) {
            let lo = start.saturating_sub(150);
            let hi = end + 150;
            let a = rng.random_range(lo..hi);
            let b = rng.random_range(lo..hi);
            (a.min(b), a.max(b))
        };
        let (col_min, col_max) = random_interval(&mut rng, extent.col_start, extent.col_end);
        let (row_min, row_max) = random_interval(&mut rng, extent.row_start, extent.row_end);
        let bbox = Bbox { row_min, col_min, row_max, col_max };

        let columns = column_layout(&extent, n_cols).unwrap();
        let expect = argmax_low_tie(&axis_pixel_counts(&columns.boundaries, col_min, col_max));
        assert_eq!(
            assign_bbox(&bbox, &Layout::Column(columns)),
            BlockId::Column(expect as u32),
            "criterion 5: FAIL — column assignment disagrees with pixel counts"
        );

        // Grid: cell pixel counts factor into per-axis counts, so the
        // oracle scores every (row, col) cell by count product and takes
        // the lexicographically first maximum.
        let grid = grid_layout(&extent, n_w, n_h).unwrap();
        let row_counts = axis_pixel_counts(&grid.row_boundaries, row_min, row_max);
        let col_counts = axis_pixel_counts(&grid.col_boundaries, col_min, col_max);
        let mut best = (0u32, 0u32);
        let mut best_area = 0u64;
        for (i, &rc) in row_counts.iter().enumerate() {
            for (j, &cc) in col_counts.iter().enumerate() {
                if rc * cc > best_area {
                    best_area = rc * cc;
                    best = (i as u32, j as u32);
                }
            }
        }
        assert_eq!(
            assign_bbox(&bbox, &Layout::Grid(grid)),
            BlockId::Cell { row: best.0, col: best.1 },
            "criterion 5: FAIL — grid assignment disagrees with pixel counts"
        );
    }

    // (c) The correlation predictor's per-feature argmax against a naive
    // double loop over every bank entry, on 100 synthetic features.
    let spec = LayoutSpec::Grid { n_w: 2, n_h: 2 };
    let blocks: Vec<BlockId> = (0..2)
        .flat_map(|row| (0..2).map(move |col| BlockId::Cell { row, col }))
        .collect();
    let random_vector = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        (0..APPROX_LEN).map(|_| rng.random::<f32>()).collect()
    };
    let mut train: Vec<(Vec<PooledFeature>, String)> = Vec::new();
    for (p, printer) in ["alders", "birch", "cedar"].iter().enumerate() {
        for doc in 0..3u32 {
            let features: Vec<PooledFeature> = blocks
                .iter()
                .map(|&block| PooledFeature {
                    doc_id: p as u32 * 3 + doc,
                    block,
                    vector: random_vector(&mut rng),
                    member_count: 1,
                })
                .collect();
            train.push((features, printer.to_string()));
        }
    }
    let bank = build_bank(&train, spec, DescriptorVariant::Approx).unwrap();
    for t in 0..100u32 {
        let feature = PooledFeature {
            doc_id: t,
            block: blocks[rng.random_range(0..blocks.len())],
            vector: random_vector(&mut rng),
            member_count: 1,
        };
        let prediction =
            predict_document(&bank, std::slice::from_ref(&feature), Predictor::Correlation)
                .unwrap();
        let vote = &prediction.per_feature[0];

        let mut best: Option<(f64, &str)> = None;
        for entry in bank.entries(&feature.block).unwrap() {
            let r = naive_pearson(&feature.vector, &entry.vector);
            let printer = bank.printers()[entry.printer_idx as usize].as_str();
            let better = match best {
                None => true,
                Some((best_r, best_p)) => r > best_r || (r == best_r && printer < best_p),
            };
            if better {
                best = Some((r, printer));
            }
        }
        let (oracle_r, oracle_printer) = best.unwrap();
        assert_eq!(
            vote.printer, oracle_printer,
            "criterion 5: FAIL — argmax printer disagrees with double loop"
        );
        assert!(
            (vote.best_r - oracle_r).abs() <= 1e-9,
            "criterion 5: FAIL — best r {} vs oracle {}",
            vote.best_r,
            oracle_r
        );
    }

    println!("criterion 5: pass — labeling, block assignment, and argmax match their oracles");
}

// ---------------------------------------------------------------------------
// Shared fixture for criteria 6–10.

const PRINTERS: u32 = 8;
const ALPHA_DOCS: u32 = 15;
const BETA_DOCS: u32 = 5;
const TRAIN_PER_PRINTER: u32 = 10;
const MASTER_SEED: u64 = 42;
const SPLIT_SEED: u64 = 7;
const GRID: LayoutSpec = LayoutSpec::Grid { n_w: 8, n_h: 8 };
const COLUMNS: LayoutSpec = LayoutSpec::Column { n_columns: 15 };
const CONSECUTIVE: u32 = 20;

/// One document's pooled features under the layouts the criteria compare.
/// Column and consecutive variants are only kept where a criterion reads
/// them (training documents, and all transfer-test documents).
struct DocSet {
    printer: String,
    grid: Vec<PooledFeature>,
    column: Vec<PooledFeature>,
    consecutive: Vec<PooledFeature>,
}

struct Bundle {
    report: ExperimentReport,
    cross_grid: f64,
    cross_consecutive: f64,
    sc_cc: Vec<ScCcRow>,
    variance: Vec<VarianceRow>,
    fisher_column: f64,
    fisher_consecutive: f64,
    /// Every rendered artifact concatenated; criterion 11 compares bytes.
    rendered: String,
    elapsed_secs: f64,
}

fn page(family: GlyphFamily) -> PageParams {
    PageParams { family, ..PageParams::default() }
}

fn is_train(corpus_idx: usize) -> bool {
    (corpus_idx as u32 % ALPHA_DOCS) < TRAIN_PER_PRINTER
}

fn renumbered(features: &[PooledFeature], doc_id: u32) -> Vec<PooledFeature> {
    features.iter().map(|f| PooledFeature { doc_id, ..f.clone() }).collect()
}

fn pick_grid(d: &DocSet) -> &[PooledFeature] {
    &d.grid
}

fn pick_column(d: &DocSet) -> &[PooledFeature] {
    &d.column
}

fn pick_consecutive(d: &DocSet) -> &[PooledFeature] {
    &d.consecutive
}

fn compute_bundle() -> Bundle {
    let started = Instant::now();
    let profiles = make_printer_profiles(MASTER_SEED, PRINTERS);
    let filter = FilterPolicy::default();

    // Render, extract, and pool the closed-set corpus printer by printer.
    // Raw per-letter descriptors are only held long enough to measure each
    // printer's within-block spread, then dropped; keeping all of them at
    // once would cost gigabytes.
    let mut alpha: Vec<DocSet> = Vec::with_capacity((PRINTERS * ALPHA_DOCS) as usize);
    let mut variance = Vec::new();
    for profile in &profiles {
        let p = alpha.len() as u32 / ALPHA_DOCS;
        let mut raw_by_block: BTreeMap<BlockId, Vec<Vec<f32>>> = BTreeMap::new();
        let mut pooled_by_block: BTreeMap<BlockId, Vec<Vec<f32>>> = BTreeMap::new();
        for d in 0..ALPHA_DOCS {
            let doc_id = p * ALPHA_DOCS + d;
            let (image, _) =
                render_document(profile, &page(GlyphFamily::Alpha), 10_000 + doc_id as u64)
                    .unwrap();
            let params = DescriptorParams::defaults_for(image.bit_depth());
            let doc =
                extract_document(&image, doc_id, &params, DescriptorVariant::Approx, &filter)
                    .unwrap();
            let grid = pool_extracted(&doc, &GRID, PoolSize::All).unwrap();
            let (column, consecutive) = if d < TRAIN_PER_PRINTER {
                (
                    pool_extracted(&doc, &COLUMNS, PoolSize::All).unwrap(),
                    pool_extracted(&doc, &LayoutSpec::Page, PoolSize::Of(CONSECUTIVE)).unwrap(),
                )
            } else {
                (Vec::new(), Vec::new())
            };
            if d < TRAIN_PER_PRINTER {
                let boxes: Vec<Bbox> = doc.letters.iter().map(|l| l.component.bbox).collect();
                let layout = GRID.realize(&text_extent_of_bboxes(&boxes).unwrap()).unwrap();
                for letter in doc.letters {
                    raw_by_block
                        .entry(assign_bbox(&letter.component.bbox, &layout))
                        .or_default()
                        .push(letter.vector);
                }
                for f in &grid {
                    pooled_by_block.entry(f.block).or_default().push(f.vector.clone());
                }
            }
            alpha.push(DocSet { printer: profile.printer_id.clone(), grid, column, consecutive });
        }
        let groups: Vec<VarianceGroup> = raw_by_block
            .iter()
            .map(|(&block, raw)| VarianceGroup {
                printer: profile.printer_id.clone(),
                block,
                raw: raw.iter().map(Vec::as_slice).collect(),
                pooled: pooled_by_block[&block].iter().map(Vec::as_slice).collect(),
            })
            .collect();
        variance.extend(variance_report(&groups));
    }

    // The transfer test set: a second glyph family from the same printers.
    let mut beta: Vec<DocSet> = Vec::with_capacity((PRINTERS * BETA_DOCS) as usize);
    for (p, profile) in profiles.iter().enumerate() {
        for d in 0..BETA_DOCS {
            let seed = 20_000 + p as u64 * BETA_DOCS as u64 + d as u64;
            let (image, _) = render_document(profile, &page(GlyphFamily::Beta), seed).unwrap();
            let params = DescriptorParams::defaults_for(image.bit_depth());
            let doc = extract_document(&image, 0, &params, DescriptorVariant::Approx, &filter)
                .unwrap();
            beta.push(DocSet {
                printer: profile.printer_id.clone(),
                grid: pool_extracted(&doc, &GRID, PoolSize::All).unwrap(),
                column: Vec::new(),
                consecutive: pool_extracted(&doc, &LayoutSpec::Page, PoolSize::Of(CONSECUTIVE))
                    .unwrap(),
            });
        }
    }

    // Criterion 6: repeated random splits on the grid layout.
    let opts = ExperimentOptions {
        layout: GRID,
        split: SplitPlan {
            iterations: 5,
            train_per_printer: TRAIN_PER_PRINTER,
            seed: SPLIT_SEED,
        },
        ..ExperimentOptions::default()
    };
    let grid_docs: Vec<PooledDoc> = alpha
        .iter()
        .map(|d| PooledDoc { printer: d.printer.clone(), features: d.grid.clone() })
        .collect();
    let report = run_iterations_pooled(&grid_docs, &opts).unwrap();

    // Criterion 7: train on family Alpha, test on family Beta, under the
    // spatial grid and under spatially blind consecutive pooling.
    let cross = |pick: fn(&DocSet) -> &[PooledFeature], layout: LayoutSpec, n_p: PoolSize| -> f64 {
        let mut docs: Vec<PooledDoc> = Vec::new();
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for (i, d) in alpha.iter().enumerate() {
            if is_train(i) {
                train_idx.push(docs.len() as u32);
                let features = renumbered(pick(d), docs.len() as u32);
                docs.push(PooledDoc { printer: d.printer.clone(), features });
            }
        }
        for d in &beta {
            test_idx.push(docs.len() as u32);
            let features = renumbered(pick(d), docs.len() as u32);
            docs.push(PooledDoc { printer: d.printer.clone(), features });
        }
        let opts = ExperimentOptions { layout, n_p, ..opts.clone() };
        run_split_pooled(&docs, &train_idx, &test_idx, &opts).unwrap().accuracy
    };
    let cross_grid = cross(pick_grid, GRID, PoolSize::All);
    let cross_consecutive = cross(pick_consecutive, LayoutSpec::Page, PoolSize::Of(CONSECUTIVE));

    // Criterion 8: same-block vs cross-block agreement over the training
    // documents' column features.
    let mut by_printer: BTreeMap<String, Vec<PooledFeature>> = BTreeMap::new();
    for (i, d) in alpha.iter().enumerate() {
        if is_train(i) {
            by_printer.entry(d.printer.clone()).or_default().extend(d.column.iter().cloned());
        }
    }
    let sc_cc = sc_cc_analysis(&by_printer);

    // Criterion 10: class separation of the same features after projection,
    // spatial columns vs consecutive groups.
    let printer_index = |name: &str| -> u32 {
        profiles.iter().position(|p| p.printer_id == name).unwrap() as u32
    };
    let fisher_of = |pick: fn(&DocSet) -> &[PooledFeature]| -> f64 {
        let mut features: Vec<&[f32]> = Vec::new();
        let mut labels: Vec<u32> = Vec::new();
        for (i, d) in alpha.iter().enumerate() {
            if is_train(i) {
                for f in pick(d) {
                    features.push(&f.vector);
                    labels.push(printer_index(&d.printer));
                }
            }
        }
        let projection = lda_project(&features, &labels, 2).unwrap();
        fisher_ratio(&projection.points, &labels)
    };
    let fisher_column = fisher_of(pick_column);
    let fisher_consecutive = fisher_of(pick_consecutive);

    // Everything criteria 6–10 asserted, rendered once; criterion 11 runs
    // the whole computation again and compares these bytes.
    let mut rendered = String::new();
    rendered.push_str(&report.to_json());
    rendered.push_str(&report.to_markdown());
    rendered.push_str(&report.confusion_csv());
    writeln!(rendered, "cross_family_grid_accuracy,{cross_grid}").unwrap();
    writeln!(rendered, "cross_family_consecutive_accuracy,{cross_consecutive}").unwrap();
    rendered.push_str(&sc_cc_to_csv(&sc_cc));
    rendered.push_str(&variance_to_csv(&variance));
    writeln!(rendered, "fisher_column,{fisher_column}").unwrap();
    writeln!(rendered, "fisher_consecutive,{fisher_consecutive}").unwrap();

    Bundle {
        report,
        cross_grid,
        cross_consecutive,
        sc_cc,
        variance,
        fisher_column,
        fisher_consecutive,
        rendered,
        elapsed_secs: started.elapsed().as_secs_f64(),
    }
}

static BUNDLE: Lazy<Bundle> = Lazy::new(compute_bundle);

// ---------------------------------------------------------------------------
// Criterion 6: closed-set accuracy on the grid layout.

#[test]
fn c06_closed_set_accuracy() {
    let bundle = &*BUNDLE;
    assert_eq!(bundle.report.labels.len(), PRINTERS as usize);
    assert_eq!(bundle.report.iterations.len(), 5);
    assert!(
        bundle.report.mean_accuracy >= 0.95,
        "criterion 6: FAIL — mean accuracy {:.4} below 0.95",
        bundle.report.mean_accuracy
    );
    // Tractability guard: the whole fixture (which contains this run) must
    // stay far inside a 10-minute 4-core budget; allow that many core-seconds.
    assert!(
        bundle.elapsed_secs <= 2400.0,
        "criterion 6: FAIL — fixture took {:.0}s of core time",
        bundle.elapsed_secs
    );
    println!(
        "criterion 6: pass — 8-printer grid/correlation mean accuracy {:.4} over 5 splits ({:.0}s fixture)",
        bundle.report.mean_accuracy, bundle.elapsed_secs
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: transfer to an unseen glyph family.

#[test]
fn c07_cross_family_transfer() {
    let bundle = &*BUNDLE;
    assert!(
        bundle.cross_grid >= bundle.cross_consecutive,
        "criterion 7: FAIL — grid {:.4} below consecutive {:.4} on the unseen family",
        bundle.cross_grid,
        bundle.cross_consecutive
    );
    assert!(
        bundle.cross_grid >= 0.70,
        "criterion 7: FAIL — grid transfer accuracy {:.4} below 0.70",
        bundle.cross_grid
    );
    println!(
        "criterion 7: pass — unseen-family accuracy {:.4} (grid) vs {:.4} (consecutive)",
        bundle.cross_grid, bundle.cross_consecutive
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: same-block correlations beat cross-block correlations.

#[test]
fn c08_same_block_coherence() {
    let bundle = &*BUNDLE;
    assert_eq!(bundle.sc_cc.len(), PRINTERS as usize, "criterion 8: FAIL — missing printers");
    for row in &bundle.sc_cc {
        assert!(
            row.same_block_median_r > row.cross_block_median_r,
            "criterion 8: FAIL — {}: same-block median {:.4} not above cross-block {:.4}",
            row.printer,
            row.same_block_median_r,
            row.cross_block_median_r
        );
    }
    let worst = bundle
        .sc_cc
        .iter()
        .map(|r| r.same_block_median_r - r.cross_block_median_r)
        .fold(f64::INFINITY, f64::min);
    println!(
        "criterion 8: pass — same-block beats cross-block for all 8 printers (min margin {worst:.4})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: pooling shrinks within-block spread, at the expected rate.

#[test]
fn c09_pooling_variance() {
    let bundle = &*BUNDLE;
    assert!(!bundle.variance.is_empty());
    let printers: BTreeSet<&str> = bundle.variance.iter().map(|r| r.printer.as_str()).collect();
    assert_eq!(printers.len(), PRINTERS as usize, "criterion 9: FAIL — missing printers");
    for row in &bundle.variance {
        let ratio = row.ratio.expect("raw spread is never zero on real pages");
        assert!(
            ratio < 1.0,
            "criterion 9: FAIL — {} {}: pooled/raw spread ratio {:.3} not below 1",
            row.printer,
            row.block,
            ratio
        );
    }

    // Control: on i.i.d. vectors with no shared structure, pooling k-means
    // shrinks mean pairwise distance like 1/√k. d = 256 coordinates, 30
    // groups per size, sizes 4, 16, 25.
    for k in [4usize, 16, 25] {
        let mut rng = ChaCha8Rng::seed_from_u64(909 + k as u64);
        let groups = 30;
        let dim = 256;
        let raw: Vec<Vec<f32>> = (0..groups * k)
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect())
            .collect();
        let pooled: Vec<Vec<f32>> = (0..groups)
            .map(|g| {
                let mut mean = vec![0.0f64; dim];
                for v in &raw[g * k..(g + 1) * k] {
                    for (m, &x) in mean.iter_mut().zip(v) {
                        *m += x as f64;
                    }
                }
                mean.iter().map(|&m| (m / k as f64) as f32).collect()
            })
            .collect();
        let raw_refs: Vec<&[f32]> = raw.iter().map(Vec::as_slice).collect();
        let pooled_refs: Vec<&[f32]> = pooled.iter().map(Vec::as_slice).collect();
        let ratio = mean_pairwise_distance(&pooled_refs).unwrap()
            / mean_pairwise_distance(&raw_refs).unwrap();
        let expected = 1.0 / (k as f64).sqrt();
        assert!(
            (ratio / expected - 1.0).abs() <= 0.20,
            "criterion 9: FAIL — i.i.d. control ratio {ratio:.4} not within 20% of {expected:.4} at k={k}"
        );
    }

    let worst = bundle
        .variance
        .iter()
        .filter_map(|r| r.ratio)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "criterion 9: pass — every pooled/raw spread ratio below 1 (max {:.3}, {} groups); i.i.d. control tracks 1/√k",
        worst,
        bundle.variance.len()
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: spatial pooling separates classes better after projection.

#[test]
fn c10_discriminant_separation() {
    let bundle = &*BUNDLE;
    assert!(
        bundle.fisher_column.is_finite() && bundle.fisher_consecutive.is_finite(),
        "criterion 10: FAIL — non-finite separation scores"
    );
    assert!(
        bundle.fisher_column > bundle.fisher_consecutive,
        "criterion 10: FAIL — column separation {:.2} not above consecutive {:.2}",
        bundle.fisher_column,
        bundle.fisher_consecutive
    );
    println!(
        "criterion 10: pass — projected class separation {:.1} (columns) vs {:.1} (consecutive)",
        bundle.fisher_column, bundle.fisher_consecutive
    );
}

// ---------------------------------------------------------------------------
// Criterion 11: the whole fixture is byte-deterministic.

#[test]
fn c11_deterministic_replay() {
    let first = &BUNDLE.rendered;
    let again = compute_bundle();
    assert!(
        *first == again.rendered,
        "criterion 11: FAIL — rendered artifacts differ between runs ({} vs {} bytes)",
        first.len(),
        again.rendered.len()
    );
    println!(
        "criterion 11: pass — {} rendered bytes identical across independent recomputation",
        first.len()
    );
}
