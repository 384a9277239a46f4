//! The document-to-features path shared by the CLI and the evaluation
//! harness: binarize, label, filter, crop, extract, pool.
//!
//! Keeping this in one place guarantees that pooling a document in memory
//! and pooling it through intermediate descriptor files produce identical
//! features: both routes carry descriptors at f32 interchange precision and
//! compute the text extent from the letters that actually yielded a
//! descriptor (crops under 3×3 are skipped and counted, not errors).

use rayon::prelude::*;
use thiserror::Error;

use crate::imageio::{BitDepth, DocumentImage};
use crate::pooling::{
    pool_document, text_extent_of_bboxes, LayoutSpec, PoolMember, PoolSize, PooledFeature,
    PoolingError,
};
use crate::psltd::{extract_psltd, DescriptorParams, DescriptorVariant, PsltdError};
use crate::segmentation::{
    binarize, crop_letter, filter_components, label_components, ConnectedComponent, FilterPolicy,
    SegmentationError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Descriptor(#[from] PsltdError),
    #[error(transparent)]
    Pooling(#[from] PoolingError),
}

/// One letter's page geometry plus its descriptor at interchange precision.
#[derive(Debug, Clone, PartialEq)]
pub struct LetterFeature {
    pub component: ConnectedComponent,
    pub vector: Vec<f32>,
}

/// All letter descriptors of one document, before pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentDescriptors {
    pub doc_id: u32,
    pub variant: DescriptorVariant,
    pub depth: BitDepth,
    pub letters: Vec<LetterFeature>,
    /// Components that survived filtering but whose crop was under 3×3.
    pub skipped_small: u32,
}

/// Per-document processing counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DocStats {
    pub components: u32,
    pub kept_letters: u32,
    pub skipped_small: u32,
    pub depth: BitDepth,
}

/// Segments a page and extracts one descriptor per kept letter, in component
/// order. Letters too small to host a descriptor are skipped and counted.
pub fn extract_document(
    image: &DocumentImage,
    doc_id: u32,
    params: &DescriptorParams,
    variant: DescriptorVariant,
    filter: &FilterPolicy,
) -> Result<DocumentDescriptors, PipelineError> {
    params.validate(image.bit_depth())?;
    filter.validate()?;
    let mask = binarize(image);
    let components = label_components(&mask);
    let kept = filter_components(&components, filter);

    let results: Vec<Option<LetterFeature>> = kept
        .par_iter()
        .map(|comp| -> Result<Option<LetterFeature>, PipelineError> {
            let crop = match crop_letter(image, comp) {
                Ok(crop) => crop,
                Err(SegmentationError::CropTooSmall { .. }) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let descriptor = extract_psltd(&crop.image, params, variant)?;
            Ok(Some(LetterFeature {
                component: comp.clone(),
                vector: descriptor.to_f32_vec(),
            }))
        })
        .collect::<Result<_, _>>()?;

    let mut letters = Vec::with_capacity(results.len());
    let mut skipped_small = 0;
    for r in results {
        match r {
            Some(letter) => letters.push(letter),
            None => skipped_small += 1,
        }
    }
    Ok(DocumentDescriptors {
        doc_id,
        variant,
        depth: image.bit_depth(),
        letters,
        skipped_small,
    })
}

/// Pools one document's extracted letters under a layout spec. The text
/// extent is measured from the letters present here, i.e. exactly those that
/// produced a descriptor.
pub fn pool_extracted(
    doc: &DocumentDescriptors,
    spec: &LayoutSpec,
    n_p: PoolSize,
) -> Result<Vec<PooledFeature>, PipelineError> {
    if doc.letters.is_empty() {
        return Ok(Vec::new());
    }
    let boxes: Vec<_> = doc.letters.iter().map(|l| l.component.bbox).collect();
    let layout = spec.realize(&text_extent_of_bboxes(&boxes)?)?;
    let members: Vec<PoolMember> = doc
        .letters
        .iter()
        .map(|l| PoolMember {
            centroid: (l.component.centroid.0 as f32, l.component.centroid.1 as f32),
            bbox: l.component.bbox,
            vector: &l.vector,
        })
        .collect();
    Ok(pool_document(doc.doc_id, &members, &layout, n_p))
}

/// How a page becomes pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub descriptor: DescriptorParams,
    pub variant: DescriptorVariant,
    pub filter: FilterPolicy,
    pub layout: LayoutSpec,
    pub n_p: PoolSize,
}

impl PipelineParams {
    /// Defaults for a given input depth: approximate descriptor, 15 columns,
    /// whole-block pooling.
    pub fn defaults_for(depth: BitDepth) -> Self {
        Self {
            descriptor: DescriptorParams::defaults_for(depth),
            variant: DescriptorVariant::Approx,
            filter: FilterPolicy::default(),
            layout: LayoutSpec::Column { n_columns: 15 },
            n_p: PoolSize::All,
        }
    }
}

/// Full single-document pass: segment, extract, pool.
pub fn process_document(
    image: &DocumentImage,
    doc_id: u32,
    params: &PipelineParams,
) -> Result<(Vec<PooledFeature>, DocStats), PipelineError> {
    let extracted = extract_document(image, doc_id, &params.descriptor, params.variant, &params.filter)?;
    let stats = DocStats {
        components: extracted.letters.len() as u32 + extracted.skipped_small,
        kept_letters: extracted.letters.len() as u32,
        skipped_small: extracted.skipped_small,
        depth: extracted.depth,
    };
    let pooled = pool_extracted(&extracted, &params.layout, params.n_p)?;
    Ok((pooled, stats))
}
