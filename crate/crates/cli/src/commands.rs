//! One function per subcommand, plus the flag groups they share.
//!
//! Every function resolves its settings through the same precedence —
//! explicit flag, then config file, then built-in default — and writes
//! outputs whose bytes depend only on those settings and the inputs, never
//! on thread count or wall clock.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use printtrace_core::eval::{
    self, corpus_from_labels_csv, corpus_from_manifest, run_experiment, CorpusDoc,
    ExperimentOptions, SplitPlan, VarianceGroup,
};
use printtrace_core::imageio::load_pgm;
use printtrace_core::pipeline::{extract_document, process_document, PipelineParams};
use printtrace_core::pooling::{
    pool_document, read_pooled_batch, text_extent_of_bboxes, write_pooled_batch, PoolMember,
    PooledBatch,
};
use printtrace_core::predict::{
    build_bank, predict_document, predictions_to_jsonl, read_bank, write_bank,
};
use printtrace_core::psltd::{
    read_descriptor_batch, write_descriptor_batch, DescriptorBatch, DescriptorRecord,
};
use printtrace_core::segmentation::{
    binarize, components_to_csv, filter_components, label_components,
};
use printtrace_core::synth::{generate_corpus, CorpusConfig};
use printtrace_core::{
    BitDepth, DescriptorParams, DescriptorVariant, DocumentPrediction, FilterPolicy, GlyphFamily,
    LayoutSpec, PoolSize, PooledFeature, Predictor,
};

use crate::config::{parse_grid, parse_range, FileConfig};

/// Settings shared by every subcommand, with the config file already
/// loaded and validated.
pub struct Ctx {
    pub cfg: FileConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Ctx {
    fn seed_or(&self, default: u64) -> u64 {
        self.cfg.resolve(self.seed, "seed", default)
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out
            .clone()
            .or_else(|| self.cfg.raw("out").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(default))
    }
}

/// Thresholds and variant of the letter descriptor.
#[derive(Debug, Args)]
pub struct DescriptorFlags {
    /// Lower intensity threshold (default 20 at 8-bit, 13000 at 16-bit)
    #[arg(long, value_name = "N")]
    t0: Option<u16>,
    /// Upper intensity threshold (default 80 at 8-bit, 50000 at 16-bit)
    #[arg(long, value_name = "N")]
    t1: Option<u16>,
    /// Gradient-direction tolerance in degrees (default 90)
    #[arg(long, value_name = "DEG")]
    g0: Option<f64>,
}

/// Which letter components count as text.
#[derive(Debug, Args)]
pub struct FilterFlags {
    /// Keep letters with area >= this multiple of the median (default 0.5)
    #[arg(long, value_name = "X")]
    area_low: Option<f64>,
    /// Keep letters with area <= this multiple of the median (default 4)
    #[arg(long, value_name = "X")]
    area_high: Option<f64>,
    /// Keep letters whose bounding-box width is within MIN..MAX pixels
    #[arg(long, value_name = "MIN..MAX", value_parser = parse_range)]
    width_range: Option<(u32, u32)>,
    /// Keep letters whose bounding-box height is within MIN..MAX pixels
    #[arg(long, value_name = "MIN..MAX", value_parser = parse_range)]
    height_range: Option<(u32, u32)>,
}

/// How letter descriptors are grouped into blocks and averaged.
#[derive(Debug, Args)]
pub struct LayoutFlags {
    /// Pooling layout: column, grid, or page (default column)
    #[arg(long, value_name = "KIND")]
    layout: Option<String>,
    /// Column count for the column layout (default 15)
    #[arg(long, value_name = "N")]
    columns: Option<u32>,
    /// Grid dimensions for the grid layout (default 8x8)
    #[arg(long, value_name = "WxH", value_parser = parse_grid)]
    grid: Option<(u32, u32)>,
    /// Letters per pooled group: all, or a positive count (default all)
    #[arg(long, value_name = "N|all")]
    pool_size: Option<PoolSize>,
}

fn resolve_descriptor(flags: &DescriptorFlags, cfg: &FileConfig, depth: BitDepth) -> DescriptorParams {
    let d = DescriptorParams::defaults_for(depth);
    DescriptorParams {
        t0: cfg.resolve(flags.t0, "t0", d.t0),
        t1: cfg.resolve(flags.t1, "t1", d.t1),
        g0_degrees: cfg.resolve(flags.g0, "g0", d.g0_degrees),
    }
}

fn resolve_variant(flag: Option<DescriptorVariant>, cfg: &FileConfig) -> DescriptorVariant {
    cfg.resolve(flag, "variant", DescriptorVariant::Approx)
}

fn resolve_filter(flags: &FilterFlags, cfg: &FileConfig) -> Result<FilterPolicy> {
    let d = FilterPolicy::default();
    let range = |flag: Option<(u32, u32)>, key: &str| -> Option<(u32, u32)> {
        flag.or_else(|| self_parsed(cfg.raw(key), parse_range))
    };
    let policy = FilterPolicy {
        area_median_low: cfg.resolve(flags.area_low, "area_low", d.area_median_low),
        area_median_high: cfg.resolve(flags.area_high, "area_high", d.area_median_high),
        width_range: range(flags.width_range, "width_range"),
        height_range: range(flags.height_range, "height_range"),
    };
    policy.validate()?;
    Ok(policy)
}

fn self_parsed<T>(raw: Option<&str>, parse: impl Fn(&str) -> Result<T, String>) -> Option<T> {
    raw.map(|v| parse(v).expect("config values are validated at load"))
}

fn resolve_layout(flags: &LayoutFlags, cfg: &FileConfig) -> Result<LayoutSpec> {
    let kind = cfg.resolve(flags.layout.clone(), "layout", "column".to_owned());
    let (n_w, n_h) = flags
        .grid
        .or_else(|| self_parsed(cfg.raw("grid"), parse_grid))
        .unwrap_or((8, 8));
    match kind.as_str() {
        "column" => Ok(LayoutSpec::Column {
            n_columns: cfg.resolve(flags.columns, "columns", 15),
        }),
        "grid" => Ok(LayoutSpec::Grid { n_w, n_h }),
        "page" => Ok(LayoutSpec::Page),
        other => bail!("layout: expected column|grid|page, got {other:?}"),
    }
}

fn resolve_pool_size(flag: Option<PoolSize>, cfg: &FileConfig) -> PoolSize {
    cfg.resolve(flag, "pool_size", PoolSize::All)
}

/// The documented prediction-rule default: correlation against every
/// training vector on 16-bit scans, centroids on 8-bit ones.
fn resolve_predictor(flag: Option<Predictor>, cfg: &FileConfig, depth: Option<BitDepth>) -> Predictor {
    let default = match depth {
        Some(BitDepth::Eight) => Predictor::Centroid,
        _ => Predictor::Correlation,
    };
    cfg.resolve(flag, "predictor", default)
}

fn file_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .with_context(|| format!("{}: input path has no file name", path.display()))
}

fn out_file(dir: &Path, input: &Path, extension: &str) -> Result<PathBuf> {
    Ok(dir.join(format!("{}.{extension}", file_stem(input)?)))
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("creating {}: {e}", dir.display()))
}

fn write_text(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))
}

fn group_by_doc(features: Vec<PooledFeature>) -> BTreeMap<u32, Vec<PooledFeature>> {
    let mut groups: BTreeMap<u32, Vec<PooledFeature>> = BTreeMap::new();
    for f in features {
        groups.entry(f.doc_id).or_default().push(f);
    }
    groups
}

fn labels_path(flag: Option<PathBuf>, cfg: &FileConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.raw("labels").map(PathBuf::from))
        .context("no labels CSV given (use --labels or the labels config key)")
}

/// Binarizes pages and writes one `<stem>.components.csv` listing of kept
/// letter components per input.
#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Input page images (PGM, 8- or 16-bit)
    #[arg(value_name = "IMAGE", required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    filter: FilterFlags,
}

pub fn segment(ctx: &Ctx, args: &SegmentArgs) -> Result<()> {
    let filter = resolve_filter(&args.filter, &ctx.cfg)?;
    let out_dir = ctx.out_or(".");
    create_out_dir(&out_dir)?;
    for path in &args.inputs {
        let image = load_pgm(path)?;
        let components = label_components(&binarize(&image));
        let kept = filter_components(&components, &filter);
        let out = out_file(&out_dir, path, "components.csv")?;
        write_text(&out, &components_to_csv(&kept))?;
        println!(
            "{}: {} components, {} kept -> {}",
            path.display(),
            components.len(),
            kept.len(),
            out.display()
        );
    }
    Ok(())
}

/// Extracts one texture descriptor per letter and writes one `<stem>.pslt`
/// batch per input page. Document ids follow input order.
#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input page images (PGM, 8- or 16-bit)
    #[arg(value_name = "IMAGE", required = true)]
    inputs: Vec<PathBuf>,
    /// Descriptor variant: full (10502) or approx (4602; default)
    #[arg(long, value_name = "WHICH")]
    variant: Option<DescriptorVariant>,
    #[command(flatten)]
    descriptor: DescriptorFlags,
    #[command(flatten)]
    filter: FilterFlags,
}

pub fn extract(ctx: &Ctx, args: &ExtractArgs) -> Result<()> {
    let filter = resolve_filter(&args.filter, &ctx.cfg)?;
    let variant = resolve_variant(args.variant, &ctx.cfg);
    let out_dir = ctx.out_or(".");
    create_out_dir(&out_dir)?;
    for (i, path) in args.inputs.iter().enumerate() {
        let image = load_pgm(path)?;
        let params = resolve_descriptor(&args.descriptor, &ctx.cfg, image.bit_depth());
        let doc = extract_document(&image, i as u32, &params, variant, &filter)?;
        let mut batch = DescriptorBatch::new(variant);
        for letter in &doc.letters {
            batch.push_vector(
                &letter.vector,
                DescriptorRecord {
                    doc_id: doc.doc_id,
                    component_id: letter.component.id,
                    centroid: (
                        letter.component.centroid.0 as f32,
                        letter.component.centroid.1 as f32,
                    ),
                    bbox: letter.component.bbox,
                },
            )?;
        }
        let out = out_file(&out_dir, path, "pslt")?;
        write_descriptor_batch(&batch, &out)?;
        println!(
            "{}: {} letters, {} skipped -> {}",
            path.display(),
            batch.len(),
            doc.skipped_small,
            out.display()
        );
    }
    Ok(())
}

/// Averages each document's letter descriptors into per-block pooled
/// features, one `<stem>.pslp` per input batch.
#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Descriptor batch files written by `extract`
    #[arg(value_name = "BATCH", required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    layout: LayoutFlags,
}

pub fn pool(ctx: &Ctx, args: &PoolArgs) -> Result<()> {
    let spec = resolve_layout(&args.layout, &ctx.cfg)?;
    let n_p = resolve_pool_size(args.layout.pool_size, &ctx.cfg);
    let out_dir = ctx.out_or(".");
    create_out_dir(&out_dir)?;
    for path in &args.inputs {
        let batch = read_descriptor_batch(path)?;
        let mut by_doc: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, record) in batch.records().iter().enumerate() {
            by_doc.entry(record.doc_id).or_default().push(i);
        }
        let mut pooled = PooledBatch::new(batch.variant(), spec);
        for (doc_id, rows) in by_doc {
            let boxes: Vec<_> = rows.iter().map(|&i| batch.record(i).bbox).collect();
            let layout = spec.realize(&text_extent_of_bboxes(&boxes)?)?;
            let members: Vec<PoolMember> = rows
                .iter()
                .map(|&i| PoolMember {
                    centroid: batch.record(i).centroid,
                    bbox: batch.record(i).bbox,
                    vector: batch.vector(i),
                })
                .collect();
            pooled.extend(pool_document(doc_id, &members, &layout, n_p))?;
        }
        let out = out_file(&out_dir, path, "pslp")?;
        write_pooled_batch(&pooled, &out)?;
        println!(
            "{}: {} pooled features -> {}",
            path.display(),
            pooled.features.len(),
            out.display()
        );
    }
    Ok(())
}

/// One document's pooled features plus its printer label.
type LabeledFeatures = (Vec<PooledFeature>, String);

/// Reads every labeled pooled batch and checks they share one layout and
/// variant; each batch's documents become separate entries.
fn read_labeled_pooled(
    labeled: &[CorpusDoc],
) -> Result<(Vec<LabeledFeatures>, LayoutSpec, DescriptorVariant)> {
    let mut shape: Option<(LayoutSpec, DescriptorVariant)> = None;
    let mut docs = Vec::new();
    for entry in labeled {
        let batch = read_pooled_batch(&entry.path)?;
        match shape {
            None => shape = Some((batch.spec, batch.variant)),
            Some((spec, variant)) if spec != batch.spec || variant != batch.variant => bail!(
                "{}: pooled as {} {} but other inputs use {} {}",
                entry.path.display(),
                batch.spec,
                batch.variant,
                spec,
                variant
            ),
            Some(_) => {}
        }
        for (_, features) in group_by_doc(batch.features) {
            docs.push((features, entry.printer.clone()));
        }
    }
    let (spec, variant) = shape.context("no pooled features listed")?;
    Ok((docs, spec, variant))
}

/// Builds a reference bank from labeled pooled features.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV of `pooled_file,printer` lines (paths relative to the CSV)
    #[arg(long, value_name = "CSV")]
    labels: Option<PathBuf>,
}

pub fn train(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let labels = labels_path(args.labels.clone(), &ctx.cfg)?;
    let labeled = corpus_from_labels_csv(&labels)?;
    let (docs, spec, variant) = read_labeled_pooled(&labeled)?;
    let bank = build_bank(&docs, spec, variant)?;
    let out = ctx.out_or("bank.pbnk");
    write_bank(&bank, &out)?;
    println!(
        "{} printers, {} documents, {} blocks -> {}",
        bank.printers().len(),
        docs.len(),
        bank.blocks().count(),
        out.display()
    );
    Ok(())
}

/// Attributes documents to printers; one JSON line per document.
#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Pooled feature files, or page images with --images
    #[arg(value_name = "INPUT", required = true)]
    inputs: Vec<PathBuf>,
    /// Reference bank written by `train`
    #[arg(long, value_name = "FILE")]
    bank: Option<PathBuf>,
    /// Treat inputs as page images and run the full pipeline
    #[arg(long)]
    images: bool,
    /// Prediction rule: correlation or centroid (default by input depth)
    #[arg(long, value_name = "RULE")]
    predictor: Option<Predictor>,
    #[command(flatten)]
    descriptor: DescriptorFlags,
    #[command(flatten)]
    filter: FilterFlags,
    /// Letters per pooled group in --images mode (default all)
    #[arg(long, value_name = "N|all")]
    pool_size: Option<PoolSize>,
}

pub fn predict(ctx: &Ctx, args: &PredictArgs) -> Result<()> {
    let bank_path = args
        .bank
        .clone()
        .or_else(|| ctx.cfg.raw("bank").map(PathBuf::from))
        .context("no reference bank given (use --bank or the bank config key)")?;
    let bank = read_bank(&bank_path)?;

    let mut predictions: Vec<DocumentPrediction> = Vec::new();
    if args.images {
        let filter = resolve_filter(&args.filter, &ctx.cfg)?;
        let n_p = resolve_pool_size(args.pool_size, &ctx.cfg);
        let mut method: Option<Predictor> = None;
        for (i, path) in args.inputs.iter().enumerate() {
            let image = load_pgm(path)?;
            let params = PipelineParams {
                descriptor: resolve_descriptor(&args.descriptor, &ctx.cfg, image.bit_depth()),
                variant: bank.variant(),
                filter: filter.clone(),
                layout: bank.spec(),
                n_p,
            };
            let method = *method.get_or_insert_with(|| {
                resolve_predictor(args.predictor, &ctx.cfg, Some(image.bit_depth()))
            });
            let (features, _) = process_document(&image, i as u32, &params)?;
            if features.is_empty() {
                bail!("{}: no letters found on the page", path.display());
            }
            predictions.push(predict_document(&bank, &features, method)?);
        }
    } else {
        let method = resolve_predictor(args.predictor, &ctx.cfg, None);
        for path in &args.inputs {
            let batch = read_pooled_batch(path)?;
            if batch.spec != bank.spec() || batch.variant != bank.variant() {
                bail!(
                    "{}: pooled as {} {} but the bank holds {} {}",
                    path.display(),
                    batch.spec,
                    batch.variant,
                    bank.spec(),
                    bank.variant()
                );
            }
            for (_, features) in group_by_doc(batch.features) {
                predictions.push(predict_document(&bank, &features, method)?);
            }
        }
    }

    let jsonl = predictions_to_jsonl(&predictions);
    match &ctx.out {
        Some(_) => {
            let out = ctx.out_or("predictions.jsonl");
            write_text(&out, &jsonl)?;
            println!("{} predictions -> {}", predictions.len(), out.display());
        }
        None => print!("{jsonl}"),
    }
    Ok(())
}

/// Runs repeated train/test splits over a labeled corpus and writes a
/// report directory (report.json, report.md, confusion_mean.csv).
#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Corpus manifest written by `synth`
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// CSV of `image,printer` lines (paths relative to the CSV)
    #[arg(long, value_name = "CSV")]
    labels: Option<PathBuf>,
    /// Descriptor variant: full or approx (default approx)
    #[arg(long, value_name = "WHICH")]
    variant: Option<DescriptorVariant>,
    /// Prediction rule: correlation or centroid (default by input depth)
    #[arg(long, value_name = "RULE")]
    predictor: Option<Predictor>,
    /// Random split iterations (default 5)
    #[arg(long, value_name = "N")]
    iterations: Option<u32>,
    /// Training documents per printer (default 10)
    #[arg(long, value_name = "N")]
    train_per_printer: Option<u32>,
    #[command(flatten)]
    descriptor: DescriptorFlags,
    #[command(flatten)]
    filter: FilterFlags,
    #[command(flatten)]
    layout: LayoutFlags,
}

pub fn evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<()> {
    let manifest = args
        .manifest
        .clone()
        .or_else(|| ctx.cfg.raw("manifest").map(PathBuf::from));
    let labels = args
        .labels
        .clone()
        .or_else(|| ctx.cfg.raw("labels").map(PathBuf::from));
    let corpus = match (manifest, labels) {
        (Some(m), None) => corpus_from_manifest(m)?,
        (None, Some(l)) => corpus_from_labels_csv(l)?,
        (Some(_), Some(_)) => bail!("give either --manifest or --labels, not both"),
        (None, None) => bail!("no corpus given (use --manifest or --labels)"),
    };
    let first = corpus.first().context("corpus lists no documents")?;
    let depth = load_pgm(&first.path)?.bit_depth();

    let opts = ExperimentOptions {
        layout: resolve_layout(&args.layout, &ctx.cfg)?,
        n_p: resolve_pool_size(args.layout.pool_size, &ctx.cfg),
        predictor: resolve_predictor(args.predictor, &ctx.cfg, Some(depth)),
        variant: resolve_variant(args.variant, &ctx.cfg),
        descriptor: Some(resolve_descriptor(&args.descriptor, &ctx.cfg, depth)),
        filter: resolve_filter(&args.filter, &ctx.cfg)?,
        split: SplitPlan {
            iterations: ctx.cfg.resolve(args.iterations, "iterations", 5),
            train_per_printer: ctx.cfg.resolve(args.train_per_printer, "train_per_printer", 10),
            seed: ctx.seed_or(1),
        },
    };
    let report = run_experiment(&corpus, &opts)?;
    let out_dir = ctx.out_or("report");
    report.write(&out_dir)?;
    println!(
        "mean accuracy {:.4} over {} iterations -> {}",
        report.mean_accuracy,
        report.iterations.len(),
        out_dir.display()
    );
    Ok(())
}

/// Renders a deterministic synthetic corpus of printed pages plus a
/// manifest that regenerates it bit for bit.
#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Printers to simulate (default 4)
    #[arg(long, value_name = "N")]
    printers: Option<u32>,
    /// Documents per printer (default 4)
    #[arg(long, value_name = "N")]
    docs_per_printer: Option<u32>,
    /// Page width in pixels (default 2550)
    #[arg(long, value_name = "PX")]
    page_width: Option<u32>,
    /// Page height in pixels (default 3300)
    #[arg(long, value_name = "PX")]
    page_height: Option<u32>,
    /// Glyph rows per page (default 45)
    #[arg(long, value_name = "N")]
    glyph_rows: Option<u32>,
    /// Glyph columns per page (default 30)
    #[arg(long, value_name = "N")]
    glyph_cols: Option<u32>,
    /// Glyph cell size in pixels (default 48)
    #[arg(long, value_name = "PX")]
    glyph_size: Option<u32>,
    /// Glyph family to print: alpha or beta (default alpha)
    #[arg(long, value_name = "WHICH")]
    family: Option<GlyphFamily>,
}

pub fn synth(ctx: &Ctx, args: &SynthArgs) -> Result<()> {
    let d = printtrace_core::PageParams::default();
    let page = printtrace_core::PageParams {
        width: ctx.cfg.resolve(args.page_width, "page_width", d.width),
        height: ctx.cfg.resolve(args.page_height, "page_height", d.height),
        glyph_rows: ctx.cfg.resolve(args.glyph_rows, "glyph_rows", d.glyph_rows),
        glyph_cols: ctx.cfg.resolve(args.glyph_cols, "glyph_cols", d.glyph_cols),
        glyph_size: ctx.cfg.resolve(args.glyph_size, "glyph_size", d.glyph_size),
        family: ctx.cfg.resolve(args.family, "family", d.family),
    };
    let config = CorpusConfig {
        printers: ctx.cfg.resolve(args.printers, "printers", 4),
        docs_per_printer: ctx.cfg.resolve(args.docs_per_printer, "docs_per_printer", 4),
        page,
        master_seed: ctx.seed_or(42),
    };
    let out_dir = ctx.out_or("corpus");
    let manifest = generate_corpus(&config, &out_dir)?;
    println!(
        "{} documents from {} printers -> {}",
        manifest.docs.len(),
        manifest.profiles.len(),
        out_dir.join("manifest.json").display()
    );
    Ok(())
}

/// Feature diagnostics over extracted or pooled batches.
#[derive(Debug, clap::Subcommand)]
pub enum AnalyzeCmd {
    /// Median same-block vs cross-block correlation per printer
    ScCc {
        /// CSV of `pooled_file,printer` lines
        #[arg(long, value_name = "CSV")]
        labels: Option<PathBuf>,
    },
    /// Pooled vs raw descriptor scatter per printer and block
    Variance {
        /// CSV of `descriptor_batch,printer` lines
        #[arg(long, value_name = "CSV")]
        labels: Option<PathBuf>,
        #[command(flatten)]
        layout: LayoutFlags,
    },
    /// Discriminant projection of pooled features
    Lda {
        /// CSV of `pooled_file,printer` lines
        #[arg(long, value_name = "CSV")]
        labels: Option<PathBuf>,
        /// Projection dimensions (default 2)
        #[arg(long, value_name = "N")]
        dims: Option<usize>,
    },
}

pub fn analyze(ctx: &Ctx, cmd: &AnalyzeCmd) -> Result<()> {
    match cmd {
        AnalyzeCmd::ScCc { labels } => analyze_sc_cc(ctx, labels.clone()),
        AnalyzeCmd::Variance { labels, layout } => analyze_variance(ctx, labels.clone(), layout),
        AnalyzeCmd::Lda { labels, dims } => analyze_lda(ctx, labels.clone(), *dims),
    }
}

fn analyze_sc_cc(ctx: &Ctx, labels: Option<PathBuf>) -> Result<()> {
    let labeled = corpus_from_labels_csv(labels_path(labels, &ctx.cfg)?)?;
    let (docs, _, _) = read_labeled_pooled(&labeled)?;
    let mut by_printer: BTreeMap<String, Vec<PooledFeature>> = BTreeMap::new();
    for (features, printer) in docs {
        by_printer.entry(printer).or_default().extend(features);
    }
    let rows = eval::sc_cc_analysis(&by_printer);
    let out = ctx.out_or("sc_cc.csv");
    write_text(&out, &eval::sc_cc_to_csv(&rows))?;
    println!("{} printers -> {}", rows.len(), out.display());
    Ok(())
}

fn analyze_variance(ctx: &Ctx, labels: Option<PathBuf>, layout: &LayoutFlags) -> Result<()> {
    let labeled = corpus_from_labels_csv(labels_path(labels, &ctx.cfg)?)?;
    let spec = resolve_layout(layout, &ctx.cfg)?;
    let n_p = resolve_pool_size(layout.pool_size, &ctx.cfg);

    type Key = (String, printtrace_core::BlockId);
    let mut raw: BTreeMap<Key, Vec<Vec<f32>>> = BTreeMap::new();
    let mut pooled: BTreeMap<Key, Vec<Vec<f32>>> = BTreeMap::new();
    for entry in &labeled {
        let batch = read_descriptor_batch(&entry.path)?;
        let mut by_doc: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, record) in batch.records().iter().enumerate() {
            by_doc.entry(record.doc_id).or_default().push(i);
        }
        for (doc_id, rows) in by_doc {
            let boxes: Vec<_> = rows.iter().map(|&i| batch.record(i).bbox).collect();
            let realized = spec.realize(&text_extent_of_bboxes(&boxes)?)?;
            for &i in &rows {
                let block =
                    printtrace_core::pooling::assign_bbox(&batch.record(i).bbox, &realized);
                raw.entry((entry.printer.clone(), block))
                    .or_default()
                    .push(batch.vector(i).to_vec());
            }
            let members: Vec<PoolMember> = rows
                .iter()
                .map(|&i| PoolMember {
                    centroid: batch.record(i).centroid,
                    bbox: batch.record(i).bbox,
                    vector: batch.vector(i),
                })
                .collect();
            for feature in pool_document(doc_id, &members, &realized, n_p) {
                pooled
                    .entry((entry.printer.clone(), feature.block))
                    .or_default()
                    .push(feature.vector);
            }
        }
    }

    let groups: Vec<VarianceGroup> = raw
        .iter()
        .filter_map(|((printer, block), raw_vecs)| {
            let pooled_vecs = pooled.get(&(printer.clone(), *block))?;
            Some(VarianceGroup {
                printer: printer.clone(),
                block: *block,
                raw: raw_vecs.iter().map(Vec::as_slice).collect(),
                pooled: pooled_vecs.iter().map(Vec::as_slice).collect(),
            })
        })
        .collect();
    let rows = eval::variance_report(&groups);
    let out = ctx.out_or("variance.csv");
    write_text(&out, &eval::variance_to_csv(&rows))?;
    println!("{} printer-blocks -> {}", rows.len(), out.display());
    Ok(())
}

fn analyze_lda(ctx: &Ctx, labels: Option<PathBuf>, dims: Option<usize>) -> Result<()> {
    let labeled = corpus_from_labels_csv(labels_path(labels, &ctx.cfg)?)?;
    let (docs, _, _) = read_labeled_pooled(&labeled)?;
    let dims = ctx.cfg.resolve(dims, "dims", 2);

    let mut printers: Vec<String> = docs.iter().map(|(_, p)| p.clone()).collect();
    printers.sort();
    printers.dedup();
    let mut vectors: Vec<&[f32]> = Vec::new();
    let mut class_ids: Vec<u32> = Vec::new();
    let mut point_labels: Vec<String> = Vec::new();
    for (features, printer) in &docs {
        let class = printers.iter().position(|p| p == printer).expect("listed") as u32;
        for f in features {
            vectors.push(&f.vector);
            class_ids.push(class);
            point_labels.push(printer.clone());
        }
    }
    let projection = eval::lda_project(&vectors, &class_ids, dims)?;
    let fisher = eval::fisher_ratio(&projection.points, &class_ids);
    let out = ctx.out_or("lda.csv");
    write_text(&out, &eval::lda_points_to_csv(&projection.points, &point_labels))?;
    println!(
        "{} features, fisher ratio {fisher:.6} -> {}",
        vectors.len(),
        out.display()
    );
    Ok(())
}
