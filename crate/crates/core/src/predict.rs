//! Printer prediction by per-block correlation matching.
//!
//! Training pools descriptors per document and block; the resulting vectors,
//! grouped by block across all training documents and printers, form the
//! reference bank. A test feature is correlated against every training
//! vector of its block (or against per-printer centroids for the baseline
//! predictor) and votes for the printer with the highest Pearson r; the
//! document label is the majority vote over its features.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::pooling::{BlockId, LayoutSpec, PooledFeature};
use crate::psltd::DescriptorVariant;
use crate::wire::{Reader, WireError, Writer};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("vector lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("correlation needs at least 2 entries, got {0}")]
    TooShort(usize),
    #[error("reference bank needs at least 2 distinct printers, got {0}")]
    TooFewPrinters(usize),
    #[error("printer {printer} contributed no pooled features")]
    EmptyPrinter { printer: String },
    #[error("feature vector length {got} does not match {variant} variant ({expected})")]
    VariantMismatch {
        got: usize,
        variant: DescriptorVariant,
        expected: usize,
    },
    #[error("block {block} does not belong to layout {spec}")]
    BlockOutsideLayout { block: BlockId, spec: LayoutSpec },
    #[error("document has no pooled features to predict from")]
    NoFeatures,
    #[error("all {count} features of document {doc_id} abstained (blocks unseen in training)")]
    AllAbstained { doc_id: u32, count: usize },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: WireError,
    },
    #[error("{path}: unsupported bank file version {version}")]
    Version { path: PathBuf, version: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Standard Pearson correlation coefficient. Zero variance in either input
/// yields 0 ("no evidence") rather than NaN.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, PredictError> {
    if x.len() != y.len() {
        return Err(PredictError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 2 {
        return Err(PredictError::TooShort(x.len()));
    }
    // Constant inputs need an exact check: their rounded mean can differ
    // from the constant by an ulp, leaving a spurious nonzero variance that
    // turns r into amplified rounding noise. Short-circuits immediately on
    // real data.
    if x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]) {
        return Ok(0.0);
    }
    let n = x.len() as f64;
    let mean_x: f64 = x.iter().sum::<f64>() / n;
    let mean_y: f64 = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mean_x, yi - mean_y);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// [`pearson_r`] over the f32 interchange vectors, computed in f64.
/// Lengths must match (callers validate once per batch, not per pair).
pub fn pearson_r_f32(x: &[f32], y: &[f32]) -> f64 {
    assert_eq!(x.len(), y.len(), "pearson inputs must have equal length");
    assert!(x.len() >= 2, "pearson needs at least 2 entries");
    // Same exact constant-input guard as [`pearson_r`].
    if x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]) {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean_x: f64 = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mean_y: f64 = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let (dx, dy) = (xi as f64 - mean_x, yi as f64 - mean_y);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Per-feature classifier choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Predictor {
    /// Argmax of r over every training pooled vector of the block.
    Correlation,
    /// Argmax of r over the per-printer block centroids.
    Centroid,
}

impl std::str::FromStr for Predictor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "correlation" => Ok(Predictor::Correlation),
            "centroid" => Ok(Predictor::Centroid),
            other => Err(format!(
                "unknown predictor {other:?} (expected correlation or centroid)"
            )),
        }
    }
}

impl std::fmt::Display for Predictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Predictor::Correlation => write!(f, "correlation"),
            Predictor::Centroid => write!(f, "centroid"),
        }
    }
}

/// One training pooled vector inside the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub printer_idx: u32,
    pub doc_id: u32,
    pub vector: Vec<f32>,
}

/// The trained model: per-block training pooled vectors for every printer,
/// plus per-(block, printer) centroids. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBank {
    spec: LayoutSpec,
    variant: DescriptorVariant,
    printers: Vec<String>,
    entries: BTreeMap<BlockId, Vec<BankEntry>>,
    centroids: BTreeMap<(BlockId, u32), Vec<f32>>,
}

impl ReferenceBank {
    pub fn spec(&self) -> LayoutSpec {
        self.spec
    }

    pub fn variant(&self) -> DescriptorVariant {
        self.variant
    }

    /// Printer labels in sorted order; `printer_idx` indexes this list.
    pub fn printers(&self) -> &[String] {
        &self.printers
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BlockId> {
        self.entries.keys()
    }

    pub fn entries(&self, block: &BlockId) -> Option<&[BankEntry]> {
        self.entries.get(block).map(|v| v.as_slice())
    }

    pub fn centroid(&self, block: &BlockId, printer_idx: u32) -> Option<&[f32]> {
        self.centroids.get(&(*block, printer_idx)).map(|v| v.as_slice())
    }

    fn validate_feature(&self, f: &PooledFeature) -> Result<(), PredictError> {
        if f.vector.len() != self.variant.len() {
            return Err(PredictError::VariantMismatch {
                got: f.vector.len(),
                variant: self.variant,
                expected: self.variant.len(),
            });
        }
        if !self.spec.contains(&f.block) {
            return Err(PredictError::BlockOutsideLayout {
                block: f.block,
                spec: self.spec,
            });
        }
        Ok(())
    }
}

/// Builds the reference bank from per-document pooled features with printer
/// labels. Labels are sorted; entries within a block are ordered by
/// (printer, doc_id) so matching and tie-breaking are deterministic.
pub fn build_bank(
    train: &[(Vec<PooledFeature>, String)],
    spec: LayoutSpec,
    variant: DescriptorVariant,
) -> Result<ReferenceBank, PredictError> {
    let mut printers: Vec<String> = train.iter().map(|(_, label)| label.clone()).collect();
    printers.sort();
    printers.dedup();
    if printers.len() < 2 {
        return Err(PredictError::TooFewPrinters(printers.len()));
    }

    let mut entries: BTreeMap<BlockId, Vec<BankEntry>> = BTreeMap::new();
    let mut per_printer_count = vec![0u64; printers.len()];
    for (features, label) in train {
        let printer_idx = printers.binary_search(label).unwrap() as u32;
        for f in features {
            if f.vector.len() != variant.len() {
                return Err(PredictError::VariantMismatch {
                    got: f.vector.len(),
                    variant,
                    expected: variant.len(),
                });
            }
            if !spec.contains(&f.block) {
                return Err(PredictError::BlockOutsideLayout { block: f.block, spec });
            }
            per_printer_count[printer_idx as usize] += 1;
            entries.entry(f.block).or_default().push(BankEntry {
                printer_idx,
                doc_id: f.doc_id,
                vector: f.vector.clone(),
            });
        }
    }
    for (idx, &count) in per_printer_count.iter().enumerate() {
        if count == 0 {
            return Err(PredictError::EmptyPrinter {
                printer: printers[idx].clone(),
            });
        }
    }
    for block_entries in entries.values_mut() {
        block_entries.sort_by_key(|e| (e.printer_idx, e.doc_id));
    }

    let centroids = compute_centroids(&entries, variant.len());
    Ok(ReferenceBank {
        spec,
        variant,
        printers,
        entries,
        centroids,
    })
}

fn compute_centroids(
    entries: &BTreeMap<BlockId, Vec<BankEntry>>,
    dim: usize,
) -> BTreeMap<(BlockId, u32), Vec<f32>> {
    let mut centroids = BTreeMap::new();
    for (block, block_entries) in entries {
        let mut by_printer: BTreeMap<u32, (Vec<f64>, u64)> = BTreeMap::new();
        for e in block_entries {
            let (sum, count) = by_printer
                .entry(e.printer_idx)
                .or_insert_with(|| (vec![0.0; dim], 0));
            for (s, &v) in sum.iter_mut().zip(&e.vector) {
                *s += v as f64;
            }
            *count += 1;
        }
        for (printer_idx, (sum, count)) in by_printer {
            let centroid = sum.iter().map(|&s| (s / count as f64) as f32).collect();
            centroids.insert((*block, printer_idx), centroid);
        }
    }
    centroids
}

/// One feature's vote: where it sat, whom it matched, and how strongly.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FeatureVote {
    pub block: BlockId,
    pub printer: String,
    pub best_r: f64,
}

/// Correlates a pooled feature against every training vector of its block;
/// the best match wins, ties favoring the lexicographically smallest printer.
/// Features of blocks unseen in training abstain (`None`).
pub fn predict_feature_correlation(
    bank: &ReferenceBank,
    f: &PooledFeature,
) -> Result<Option<FeatureVote>, PredictError> {
    bank.validate_feature(f)?;
    let Some(entries) = bank.entries(&f.block) else {
        return Ok(None);
    };
    let mut best: Option<(u32, f64)> = None;
    // Entries are sorted by printer index, so keeping the first maximum
    // implements the smallest-label tie rule.
    for e in entries {
        let r = pearson_r_f32(&f.vector, &e.vector);
        if best.is_none_or(|(_, best_r)| r > best_r) {
            best = Some((e.printer_idx, r));
        }
    }
    let (printer_idx, best_r) = best.expect("bank blocks are never empty");
    Ok(Some(FeatureVote {
        block: f.block,
        printer: bank.printers[printer_idx as usize].clone(),
        best_r,
    }))
}

/// Baseline: correlates a pooled feature against each printer's centroid of
/// its block. Same abstention and tie rules as the correlation predictor.
pub fn predict_feature_centroid(
    bank: &ReferenceBank,
    f: &PooledFeature,
) -> Result<Option<FeatureVote>, PredictError> {
    bank.validate_feature(f)?;
    if !bank.entries.contains_key(&f.block) {
        return Ok(None);
    }
    let mut best: Option<(u32, f64)> = None;
    for printer_idx in 0..bank.printers.len() as u32 {
        let Some(centroid) = bank.centroid(&f.block, printer_idx) else {
            continue;
        };
        let r = pearson_r_f32(&f.vector, centroid);
        if best.is_none_or(|(_, best_r)| r > best_r) {
            best = Some((printer_idx, r));
        }
    }
    let (printer_idx, best_r) = best.expect("block present means at least one centroid");
    Ok(Some(FeatureVote {
        block: f.block,
        printer: bank.printers[printer_idx as usize].clone(),
        best_r,
    }))
}

/// A document's predicted printer with the vote breakdown.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DocumentPrediction {
    pub doc_id: u32,
    pub predicted: String,
    pub votes: BTreeMap<String, u32>,
    pub abstained: u32,
    pub per_feature: Vec<FeatureVote>,
}

/// Majority vote over the per-feature predictions. Vote ties go to the
/// printer with the larger summed best_r, then to the lexicographically
/// smallest label. Errors when every feature abstained.
pub fn predict_document(
    bank: &ReferenceBank,
    features: &[PooledFeature],
    method: Predictor,
) -> Result<DocumentPrediction, PredictError> {
    let doc_id = features.first().ok_or(PredictError::NoFeatures)?.doc_id;
    let mut votes: BTreeMap<String, u32> = BTreeMap::new();
    let mut summed_r: BTreeMap<String, f64> = BTreeMap::new();
    let mut per_feature = Vec::with_capacity(features.len());
    let mut abstained = 0u32;
    for f in features {
        let vote = match method {
            Predictor::Correlation => predict_feature_correlation(bank, f)?,
            Predictor::Centroid => predict_feature_centroid(bank, f)?,
        };
        match vote {
            Some(v) => {
                *votes.entry(v.printer.clone()).or_insert(0) += 1;
                *summed_r.entry(v.printer.clone()).or_insert(0.0) += v.best_r;
                per_feature.push(v);
            }
            None => abstained += 1,
        }
    }
    if votes.is_empty() {
        return Err(PredictError::AllAbstained {
            doc_id,
            count: features.len(),
        });
    }
    // BTreeMap iterates labels in ascending order, so strict improvement on
    // (count, summed r) leaves ties with the smallest label.
    let mut predicted: Option<(&String, u32, f64)> = None;
    for (label, &count) in &votes {
        let r_sum = summed_r[label];
        let better = match predicted {
            None => true,
            Some((_, best_count, best_sum)) => {
                count > best_count || (count == best_count && r_sum > best_sum)
            }
        };
        if better {
            predicted = Some((label, count, r_sum));
        }
    }
    Ok(DocumentPrediction {
        doc_id,
        predicted: predicted.unwrap().0.clone(),
        votes,
        abstained,
        per_feature,
    })
}

/// Serializes predictions as JSON lines, one document per line.
pub fn predictions_to_jsonl(preds: &[DocumentPrediction]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub const BANK_FILE_VERSION: u32 = 1;
const BANK_MAGIC: &[u8; 4] = b"PBNK";

/// Writes a reference bank: header {magic "PBNK", version, layout spec,
/// variant, printer table}, then per-block entry lists with f32 vectors.
/// Centroids are recomputed on load (they are a pure function of entries).
pub fn write_bank(bank: &ReferenceBank, path: impl AsRef<Path>) -> Result<(), PredictError> {
    let path = path.as_ref();
    let dim = bank.variant.len();
    let mut w = Writer::with_capacity(64 + bank.entries.len() * dim * 8);
    w.magic(BANK_MAGIC);
    w.u32(BANK_FILE_VERSION);
    let (kind, p0, p1) = bank.spec.wire_parts();
    w.u8(kind);
    w.u32(p0);
    w.u32(p1);
    w.u8(bank.variant.wire_code());
    w.u32(bank.printers.len() as u32);
    for label in &bank.printers {
        w.string(label);
    }
    w.u32(dim as u32);
    w.u32(bank.entries.len() as u32);
    for (block, entries) in &bank.entries {
        let (a, b) = block.wire_parts();
        w.u32(a);
        w.u32(b);
        w.u32(entries.len() as u32);
        for e in entries {
            w.u32(e.printer_idx);
            w.u32(e.doc_id);
            w.f32_slice(&e.vector);
        }
    }
    fs::write(path, w.into_bytes()).map_err(|source| PredictError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads a bank written by [`write_bank`].
pub fn read_bank(path: impl AsRef<Path>) -> Result<ReferenceBank, PredictError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PredictError::Io {
        path: path.to_owned(),
        source,
    })?;
    let wrap = |source: WireError| PredictError::Format {
        path: path.to_owned(),
        source,
    };
    let bad = |offset: usize, detail: String| PredictError::Format {
        path: path.to_owned(),
        source: WireError { offset, detail },
    };
    let mut r = Reader::new(&bytes);
    r.magic(BANK_MAGIC).map_err(wrap)?;
    let version = r.u32("version").map_err(wrap)?;
    if version != BANK_FILE_VERSION {
        return Err(PredictError::Version {
            path: path.to_owned(),
            version,
        });
    }
    let kind = r.u8("layout kind").map_err(wrap)?;
    let p0 = r.u32("layout param 0").map_err(wrap)?;
    let p1 = r.u32("layout param 1").map_err(wrap)?;
    let spec = LayoutSpec::from_wire(kind, p0, p1)
        .ok_or_else(|| bad(8, format!("invalid layout descriptor ({kind},{p0},{p1})")))?;
    let variant_code = r.u8("variant").map_err(wrap)?;
    let variant = DescriptorVariant::from_wire(variant_code)
        .ok_or_else(|| bad(17, format!("unknown variant code {variant_code}")))?;
    let printer_count = r.u32("printer count").map_err(wrap)? as usize;
    if printer_count < 2 {
        return Err(PredictError::TooFewPrinters(printer_count));
    }
    let mut printers = Vec::with_capacity(printer_count);
    for _ in 0..printer_count {
        printers.push(r.string("printer label").map_err(wrap)?);
    }
    let dim = r.u32("dim").map_err(wrap)? as usize;
    if dim != variant.len() {
        return Err(bad(
            r.pos(),
            format!("dim {dim} does not match {variant} variant ({})", variant.len()),
        ));
    }
    let block_count = r.u32("block count").map_err(wrap)? as usize;
    let mut entries: BTreeMap<BlockId, Vec<BankEntry>> = BTreeMap::new();
    for _ in 0..block_count {
        let offset = r.pos();
        let a = r.u32("block id").map_err(wrap)?;
        let b = r.u32("block id").map_err(wrap)?;
        let block = BlockId::from_wire(&spec, a, b)
            .ok_or_else(|| bad(offset, format!("block id ({a},{b}) invalid for layout {spec}")))?;
        let entry_count = r.u32("entry count").map_err(wrap)? as usize;
        if entry_count == 0 {
            return Err(bad(offset, format!("block {block} has no entries")));
        }
        let mut block_entries = Vec::with_capacity(entry_count);
        for _ in 0..entry_count {
            let printer_idx = r.u32("printer index").map_err(wrap)?;
            if printer_idx as usize >= printers.len() {
                return Err(bad(r.pos(), format!("printer index {printer_idx} out of range")));
            }
            let doc_id = r.u32("doc id").map_err(wrap)?;
            let vector = r.f32_vec(dim, "bank vector").map_err(wrap)?;
            block_entries.push(BankEntry {
                printer_idx,
                doc_id,
                vector,
            });
        }
        // Files written by write_bank are already ordered; re-sorting makes
        // the tie rule hold even for files from other producers.
        block_entries.sort_by_key(|e| (e.printer_idx, e.doc_id));
        if entries.insert(block, block_entries).is_some() {
            return Err(bad(offset, format!("duplicate block {block}")));
        }
    }
    r.expect_end().map_err(wrap)?;
    let centroids = compute_centroids(&entries, dim);
    Ok(ReferenceBank {
        spec,
        variant,
        printers,
        entries,
        centroids,
    })
}
