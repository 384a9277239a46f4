//! Experiment harness: corpus loading, train/test splitting, accuracy and
//! confusion reporting, plus the block-structure analyses (same- vs
//! cross-block correlation, pooling variance reduction, and a discriminant
//! projection for visualizing block separability).
//!
//! Everything here is deterministic: splits derive from an explicit seed,
//! collections iterate in sorted order, and parallel passes only compute
//! independent outputs, so a report rendered twice from the same inputs is
//! byte-identical.

mod lda;

pub use lda::{fisher_ratio, lda_project, LdaProjection};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::imageio::{load_pgm, BitDepth, DocumentImage, ImageError};
use crate::pipeline::{process_document, PipelineError, PipelineParams};
use crate::pooling::{BlockId, LayoutSpec, PoolSize, PooledFeature};
use crate::predict::{
    build_bank, pearson_r_f32, predict_document, DocumentPrediction, PredictError, Predictor,
};
use crate::psltd::{DescriptorParams, DescriptorVariant};
use crate::segmentation::FilterPolicy;
use crate::synth::{load_manifest, SynthError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("document {doc} produced no pooled features")]
    EmptyDocument { doc: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One labeled document on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusDoc {
    pub path: PathBuf,
    pub printer: String,
}

/// Lists a generated corpus as labeled documents, resolving paths relative
/// to the manifest file.
pub fn corpus_from_manifest(manifest_path: impl AsRef<Path>) -> Result<Vec<CorpusDoc>, EvalError> {
    let manifest_path = manifest_path.as_ref();
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    Ok(manifest
        .docs
        .iter()
        .map(|d| CorpusDoc {
            path: base.join(&d.path),
            printer: d.printer_id.clone(),
        })
        .collect())
}

/// Reads a `path,printer` CSV (no header), resolving paths relative to the
/// CSV file.
pub fn corpus_from_labels_csv(csv_path: impl AsRef<Path>) -> Result<Vec<CorpusDoc>, EvalError> {
    let csv_path = csv_path.as_ref();
    let text = std::fs::read_to_string(csv_path).map_err(|source| EvalError::Io {
        path: csv_path.to_owned(),
        source,
    })?;
    let base = csv_path.parent().unwrap_or_else(|| Path::new("."));
    let mut docs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((path, printer)) = line.split_once(',') else {
            return Err(EvalError::InvalidConfig(format!(
                "{}:{}: expected \"path,printer\", got {line:?}",
                csv_path.display(),
                lineno + 1
            )));
        };
        docs.push(CorpusDoc {
            path: base.join(path.trim()),
            printer: printer.trim().to_owned(),
        });
    }
    if docs.is_empty() {
        return Err(EvalError::InvalidConfig(format!(
            "{}: no documents listed",
            csv_path.display()
        )));
    }
    Ok(docs)
}

/// Random train/test splitting: each iteration shuffles every printer's
/// documents with its own RNG stream and takes the first `train_per_printer`
/// for the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitPlan {
    pub iterations: u32,
    pub train_per_printer: u32,
    pub seed: u64,
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub layout: LayoutSpec,
    pub n_p: PoolSize,
    pub predictor: Predictor,
    pub variant: DescriptorVariant,
    /// `None` picks the defaults for the corpus bit depth.
    pub descriptor: Option<DescriptorParams>,
    pub filter: FilterPolicy,
    pub split: SplitPlan,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            layout: LayoutSpec::Column { n_columns: 15 },
            n_p: PoolSize::All,
            predictor: Predictor::Correlation,
            variant: DescriptorVariant::Approx,
            descriptor: None,
            filter: FilterPolicy::default(),
            split: SplitPlan {
                iterations: 5,
                train_per_printer: 10,
                seed: 1,
            },
        }
    }
}

/// One document's pooled features plus its true printer. Its id is its index
/// in the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledDoc {
    pub printer: String,
    pub features: Vec<PooledFeature>,
}

/// Counts of (true printer, predicted printer) over test documents;
/// `counts[truth][predicted]` with both axes in `labels` order.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u32>>,
}

pub fn confusion_matrix(
    pairs: &[(String, String)],
    labels: &[String],
) -> Result<ConfusionMatrix, EvalError> {
    let index = |label: &String| -> Result<usize, EvalError> {
        labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| EvalError::InvalidConfig(format!("unknown printer label {label:?}")))
    };
    let mut counts = vec![vec![0u32; labels.len()]; labels.len()];
    for (truth, predicted) in pairs {
        counts[index(truth)?][index(predicted)?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.to_vec(),
        counts,
    })
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| c as u64).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.labels.len()).map(|i| self.counts[i][i] as u64).sum();
        correct as f64 / self.total() as f64
    }

    /// Rows normalized to percentages; an empty row stays all-zero.
    pub fn row_percent(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().map(|&c| c as u64).sum();
                row.iter()
                    .map(|&c| {
                        if total == 0 {
                            0.0
                        } else {
                            100.0 * c as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth");
        for label in &self.labels {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(label);
            for &c in row {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// One test document's outcome.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PredictionRecord {
    pub doc_id: u32,
    pub truth: String,
    pub prediction: DocumentPrediction,
}

/// One train/test split evaluated end to end.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IterationResult {
    pub train_docs: Vec<u32>,
    pub test_docs: Vec<u32>,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<PredictionRecord>,
}

/// Aggregated experiment outcome; renders to JSON, Markdown, and CSV with
/// byte-deterministic output.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ExperimentReport {
    pub layout: String,
    pub pool_size: String,
    pub predictor: String,
    pub variant: String,
    pub labels: Vec<String>,
    pub train_per_printer: u32,
    pub split_seed: u64,
    pub mean_accuracy: f64,
    /// Mean over iterations of the row-normalized confusion, as percentages
    /// rounded to 0.01.
    pub mean_confusion_percent: Vec<Vec<f64>>,
    pub iterations: Vec<IterationResult>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Printer attribution experiment\n\n");
        writeln!(out, "- layout: {}", self.layout).unwrap();
        writeln!(out, "- pool size: {}", self.pool_size).unwrap();
        writeln!(out, "- predictor: {}", self.predictor).unwrap();
        writeln!(out, "- variant: {}", self.variant).unwrap();
        writeln!(out, "- printers: {}", self.labels.len()).unwrap();
        writeln!(
            out,
            "- iterations: {} (train {} per printer, split seed {})",
            self.iterations.len(),
            self.train_per_printer,
            self.split_seed
        )
        .unwrap();
        writeln!(out, "- mean accuracy: {:.6}", self.mean_accuracy).unwrap();

        out.push_str("\n## Mean confusion (% of test documents)\n\n");
        out.push_str("| truth \\ predicted |");
        for label in &self.labels {
            write!(out, " {label} |").unwrap();
        }
        out.push_str("\n|---|");
        for _ in &self.labels {
            out.push_str("---:|");
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.mean_confusion_percent) {
            write!(out, "| {label} |").unwrap();
            for &v in row {
                write!(out, " {v:.2} |").unwrap();
            }
            out.push('\n');
        }

        out.push_str("\n## Per-iteration accuracy\n\n");
        out.push_str("| iteration | accuracy | test documents |\n|---:|---:|---:|\n");
        for (k, it) in self.iterations.iter().enumerate() {
            writeln!(out, "| {k} | {:.6} | {} |", it.accuracy, it.test_docs.len()).unwrap();
        }
        out
    }

    /// The mean confusion matrix as CSV percentages.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("truth");
        for label in &self.labels {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.mean_confusion_percent) {
            out.push_str(label);
            for &v in row {
                write!(out, ",{v:.2}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Writes report.json, report.md, and confusion_mean.csv into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.to_owned(),
            source,
        })?;
        for (name, contents) in [
            ("report.json", self.to_json()),
            ("report.md", self.to_markdown()),
            ("confusion_mean.csv", self.confusion_csv()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|source| EvalError::Io { path, source })?;
        }
        Ok(())
    }
}

/// Groups document indices by printer, in sorted label order.
fn docs_by_printer(docs: &[PooledDoc]) -> BTreeMap<String, Vec<u32>> {
    let mut by_printer: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for (i, doc) in docs.iter().enumerate() {
        by_printer.entry(doc.printer.clone()).or_default().push(i as u32);
    }
    by_printer
}

fn validate_pooled_docs(docs: &[PooledDoc]) -> Result<(), EvalError> {
    for (i, doc) in docs.iter().enumerate() {
        if doc.features.is_empty() {
            return Err(EvalError::EmptyDocument {
                doc: format!("{} ({})", i, doc.printer),
            });
        }
        if doc.features.iter().any(|f| f.doc_id != i as u32) {
            return Err(EvalError::InvalidConfig(format!(
                "document {i} carries features pooled under a different doc id"
            )));
        }
    }
    Ok(())
}

/// Evaluates one explicit train/test split of pre-pooled documents.
pub fn run_split_pooled(
    docs: &[PooledDoc],
    train_idx: &[u32],
    test_idx: &[u32],
    opts: &ExperimentOptions,
) -> Result<IterationResult, EvalError> {
    validate_pooled_docs(docs)?;
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(EvalError::InvalidConfig(
            "train and test splits must both be non-empty".into(),
        ));
    }
    for &i in train_idx.iter().chain(test_idx) {
        if i as usize >= docs.len() {
            return Err(EvalError::InvalidConfig(format!(
                "split references document {i} but the corpus has {}",
                docs.len()
            )));
        }
    }
    if train_idx.iter().any(|i| test_idx.contains(i)) {
        return Err(EvalError::InvalidConfig(
            "train and test splits overlap".into(),
        ));
    }
    let labels: Vec<String> = docs_by_printer(docs).into_keys().collect();
    eval_split(docs, train_idx, test_idx, &labels, opts)
}

fn eval_split(
    docs: &[PooledDoc],
    train_idx: &[u32],
    test_idx: &[u32],
    labels: &[String],
    opts: &ExperimentOptions,
) -> Result<IterationResult, EvalError> {
    let train: Vec<(Vec<PooledFeature>, String)> = train_idx
        .iter()
        .map(|&i| {
            let doc = &docs[i as usize];
            (doc.features.clone(), doc.printer.clone())
        })
        .collect();
    let bank = build_bank(&train, opts.layout, opts.variant)?;

    let predictions: Vec<PredictionRecord> = test_idx
        .par_iter()
        .map(|&i| -> Result<PredictionRecord, EvalError> {
            let doc = &docs[i as usize];
            let prediction = predict_document(&bank, &doc.features, opts.predictor)?;
            Ok(PredictionRecord {
                doc_id: i,
                truth: doc.printer.clone(),
                prediction,
            })
        })
        .collect::<Result<_, _>>()?;

    let pairs: Vec<(String, String)> = predictions
        .iter()
        .map(|p| (p.truth.clone(), p.prediction.predicted.clone()))
        .collect();
    let confusion = confusion_matrix(&pairs, labels)?;
    Ok(IterationResult {
        train_docs: train_idx.to_vec(),
        test_docs: test_idx.to_vec(),
        accuracy: confusion.accuracy(),
        confusion,
        predictions,
    })
}

/// Runs the configured number of random-split iterations over pre-pooled
/// documents and aggregates the outcome.
pub fn run_iterations_pooled(
    docs: &[PooledDoc],
    opts: &ExperimentOptions,
) -> Result<ExperimentReport, EvalError> {
    validate_pooled_docs(docs)?;
    let by_printer = docs_by_printer(docs);
    if by_printer.len() < 2 {
        return Err(EvalError::InvalidConfig(format!(
            "need at least 2 printers, got {}",
            by_printer.len()
        )));
    }
    let split = &opts.split;
    if split.iterations == 0 || split.train_per_printer == 0 {
        return Err(EvalError::InvalidConfig(
            "need at least one iteration and one training document per printer".into(),
        ));
    }
    for (label, indices) in &by_printer {
        if indices.len() <= split.train_per_printer as usize {
            return Err(EvalError::InvalidConfig(format!(
                "printer {label} has {} documents; training takes {} and needs at least one for testing",
                indices.len(),
                split.train_per_printer
            )));
        }
    }
    let labels: Vec<String> = by_printer.keys().cloned().collect();

    let mut iterations = Vec::with_capacity(split.iterations as usize);
    for k in 0..split.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
        rng.set_stream(k as u64);
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for indices in by_printer.values() {
            let mut shuffled = indices.clone();
            shuffled.shuffle(&mut rng);
            let t = split.train_per_printer as usize;
            train_idx.extend_from_slice(&shuffled[..t]);
            test_idx.extend_from_slice(&shuffled[t..]);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        iterations.push(eval_split(docs, &train_idx, &test_idx, &labels, opts)?);
    }

    let mean_accuracy =
        iterations.iter().map(|it| it.accuracy).sum::<f64>() / iterations.len() as f64;
    let n = labels.len();
    let mut mean_confusion = vec![vec![0.0f64; n]; n];
    for it in &iterations {
        for (acc_row, row) in mean_confusion.iter_mut().zip(it.confusion.row_percent()) {
            for (acc, v) in acc_row.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    for row in &mut mean_confusion {
        for v in row.iter_mut() {
            *v = round2(*v / iterations.len() as f64);
        }
    }

    Ok(ExperimentReport {
        layout: opts.layout.to_string(),
        pool_size: opts.n_p.to_string(),
        predictor: opts.predictor.to_string(),
        variant: opts.variant.to_string(),
        labels,
        train_per_printer: split.train_per_printer,
        split_seed: split.seed,
        mean_accuracy,
        mean_confusion_percent: mean_confusion,
        iterations,
    })
}

/// Pools documents in parallel (document order preserved) and checks the
/// corpus uses one bit depth throughout.
fn pool_docs_parallel(
    n: usize,
    load: impl (Fn(usize) -> Result<(DocumentImage, String), EvalError>) + Sync,
    opts: &ExperimentOptions,
) -> Result<Vec<PooledDoc>, EvalError> {
    let pooled: Vec<(PooledDoc, BitDepth)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(PooledDoc, BitDepth), EvalError> {
            let (image, printer) = load(i)?;
            let descriptor = opts
                .descriptor
                .unwrap_or_else(|| DescriptorParams::defaults_for(image.bit_depth()));
            let params = PipelineParams {
                descriptor,
                variant: opts.variant,
                filter: opts.filter.clone(),
                layout: opts.layout,
                n_p: opts.n_p,
            };
            let (features, stats) = process_document(&image, i as u32, &params)?;
            if features.is_empty() {
                return Err(EvalError::EmptyDocument {
                    doc: format!("{i} ({printer})"),
                });
            }
            Ok((PooledDoc { printer, features }, stats.depth))
        })
        .collect::<Result<_, _>>()?;

    let mut docs = Vec::with_capacity(n);
    let mut depth: Option<BitDepth> = None;
    for (doc, d) in pooled {
        match depth {
            None => depth = Some(d),
            Some(prev) if prev != d => {
                return Err(EvalError::InvalidConfig(
                    "corpus mixes 8-bit and 16-bit documents".into(),
                ))
            }
            _ => {}
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Extracts and pools in-memory documents, then runs the split iterations.
pub fn run_experiment_on_docs(
    docs: &[(DocumentImage, String)],
    opts: &ExperimentOptions,
) -> Result<ExperimentReport, EvalError> {
    let pooled = pool_docs_parallel(
        docs.len(),
        |i| Ok((docs[i].0.clone(), docs[i].1.clone())),
        opts,
    )?;
    run_iterations_pooled(&pooled, opts)
}

/// Loads, extracts, and pools a corpus from disk one document at a time,
/// then runs the split iterations.
pub fn run_experiment(
    corpus: &[CorpusDoc],
    opts: &ExperimentOptions,
) -> Result<ExperimentReport, EvalError> {
    let pooled = pool_docs_parallel(
        corpus.len(),
        |i| {
            let doc = &corpus[i];
            let image = load_pgm(&doc.path)?;
            Ok((image, doc.printer.clone()))
        },
        opts,
    )?;
    run_iterations_pooled(&pooled, opts)
}

/// Median of the per-printer same-block and cross-block feature correlations.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScCcRow {
    pub printer: String,
    pub same_block_median_r: f64,
    pub cross_block_median_r: f64,
    pub same_pairs: u64,
    pub cross_pairs: u64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Correlates every unordered pair of one printer's pooled features and
/// summarizes same-block vs cross-block agreement. Printers without at least
/// one pair of each kind are omitted.
pub fn sc_cc_analysis(features_by_printer: &BTreeMap<String, Vec<PooledFeature>>) -> Vec<ScCcRow> {
    let printers: Vec<(&String, &Vec<PooledFeature>)> = features_by_printer.iter().collect();
    printers
        .par_iter()
        .filter_map(|(printer, feats)| {
            let mut same = Vec::new();
            let mut cross = Vec::new();
            for i in 0..feats.len() {
                for j in i + 1..feats.len() {
                    let r = pearson_r_f32(&feats[i].vector, &feats[j].vector);
                    if feats[i].block == feats[j].block {
                        same.push(r);
                    } else {
                        cross.push(r);
                    }
                }
            }
            if same.is_empty() || cross.is_empty() {
                return None;
            }
            Some(ScCcRow {
                printer: (*printer).clone(),
                same_pairs: same.len() as u64,
                cross_pairs: cross.len() as u64,
                same_block_median_r: median(&mut same),
                cross_block_median_r: median(&mut cross),
            })
        })
        .collect()
}

pub fn sc_cc_to_csv(rows: &[ScCcRow]) -> String {
    let mut out =
        String::from("printer,same_block_median_r,cross_block_median_r,same_pairs,cross_pairs\n");
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.printer,
            row.same_block_median_r,
            row.cross_block_median_r,
            row.same_pairs,
            row.cross_pairs
        )
        .unwrap();
    }
    out
}

/// Raw per-letter descriptors and pooled features of one (printer, block)
/// population, compared by spread.
#[derive(Debug, Clone)]
pub struct VarianceGroup<'a> {
    pub printer: String,
    pub block: BlockId,
    pub raw: Vec<&'a [f32]>,
    pub pooled: Vec<&'a [f32]>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VarianceRow {
    pub printer: String,
    pub block: BlockId,
    pub raw_mean_dist: f64,
    pub pooled_mean_dist: f64,
    /// pooled / raw; `None` when the raw spread is exactly zero.
    pub ratio: Option<f64>,
    pub raw_count: u64,
    pub pooled_count: u64,
}

/// Mean Euclidean distance over all unordered pairs; `None` under 2 vectors.
pub fn mean_pairwise_distance(vectors: &[&[f32]]) -> Option<f64> {
    let n = vectors.len();
    if n < 2 {
        return None;
    }
    let mut sum = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = vectors[i]
                .iter()
                .zip(vectors[j])
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum();
            sum += d2.sqrt();
        }
    }
    Some(sum / (n * (n - 1) / 2) as f64)
}

/// Compares raw vs pooled spread per group; groups where either side has
/// fewer than 2 vectors are skipped.
pub fn variance_report(groups: &[VarianceGroup]) -> Vec<VarianceRow> {
    groups
        .par_iter()
        .filter_map(|g| {
            let raw = mean_pairwise_distance(&g.raw)?;
            let pooled = mean_pairwise_distance(&g.pooled)?;
            Some(VarianceRow {
                printer: g.printer.clone(),
                block: g.block,
                raw_mean_dist: raw,
                pooled_mean_dist: pooled,
                ratio: (raw > 0.0).then(|| pooled / raw),
                raw_count: g.raw.len() as u64,
                pooled_count: g.pooled.len() as u64,
            })
        })
        .collect()
}

pub fn variance_to_csv(rows: &[VarianceRow]) -> String {
    let mut out =
        String::from("printer,block,raw_mean_dist,pooled_mean_dist,ratio,raw_count,pooled_count\n");
    for row in rows {
        let ratio = row.ratio.map(|r| r.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.printer,
            row.block,
            row.raw_mean_dist,
            row.pooled_mean_dist,
            ratio,
            row.raw_count,
            row.pooled_count
        )
        .unwrap();
    }
    out
}

/// Renders projected points as `label,c0,c1,...` CSV.
pub fn lda_points_to_csv(points: &[Vec<f64>], labels: &[String]) -> String {
    assert_eq!(points.len(), labels.len(), "one label per point");
    let dims = points.first().map_or(0, |p| p.len());
    let mut out = String::from("label");
    for d in 0..dims {
        write!(out, ",c{d}").unwrap();
    }
    out.push('\n');
    for (label, point) in labels.iter().zip(points) {
        out.push_str(label);
        for v in point {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}
