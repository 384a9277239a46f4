//! Shared fixtures for the pipeline benchmarks: one deterministic synthetic
//! page and the letter crops extracted from it.

use printtrace_core::imageio::DocumentImage;
use printtrace_core::segmentation::{binarize, crop_letter, filter_components, label_components};
use printtrace_core::synth::{make_printer_profile, render_document, GlyphFamily, PageParams};

/// A mid-size synthetic page: 40 glyphs, 16-bit, fixed seed.
pub fn bench_page() -> DocumentImage {
    let profile = make_printer_profile(99, 0);
    let page = PageParams {
        width: 600,
        height: 400,
        glyph_rows: 5,
        glyph_cols: 8,
        glyph_size: 28,
        family: GlyphFamily::Alpha,
    };
    render_document(&profile, &page, 7).expect("valid page parameters").0
}

/// Grayscale crops of every kept letter on the bench page.
pub fn bench_letters(page: &DocumentImage) -> Vec<DocumentImage> {
    let components = label_components(&binarize(page));
    filter_components(&components, &Default::default())
        .iter()
        .map(|c| crop_letter(page, c).expect("letters fit the page").image)
        .collect()
}
