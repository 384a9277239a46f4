//! Deterministic synthetic corpus generator.
//!
//! Real printed pages carry device-specific micro-texture inside the ink,
//! and that texture varies across the page width (perpendicular to the paper
//! feed). The generator reproduces both phenomena so the pipeline has true
//! positives to find: every glyph is filled with a triangular ridge field in
//! one of four orientations, the orientation drawn per glyph from
//! printer-specific mixture weights (`orientation_bias`) that change
//! linearly across the page (`bias_drift`), plus stroke-boundary noise and
//! probabilistic dot gain. Glyph shapes are procedural strokes in two
//! disjoint families so cross-font experiments can train on one family and
//! test on the other.
//!
//! Everything is reproducible: profiles derive from a master seed by
//! rejection sampling, each document renders from its own recorded seed, and
//! regenerating from a manifest yields bit-identical files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, Normal};
use thiserror::Error;

use crate::imageio::{save_pgm, BitDepth, DocumentImage, ImageError};

const BG_BASE: f64 = 60000.0;
const INK_BASE: f64 = 4000.0;
const TEXTURE_AMPLITUDE: f64 = 30000.0;
const WAVE_PERIOD: f64 = 4.0;
/// Page-wide sensor noise, as a fraction of the profile's edge noise.
const BASE_NOISE_FRACTION: f64 = 0.15;

pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
    #[error("page geometry overflow: {0}")]
    Geometry(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A synthetic printer's signature.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PrinterProfile {
    pub printer_id: String,
    pub seed: u64,
    /// Probability that a glyph is ridged at 0°/45°/90°/135°, measured at
    /// the left page edge. Sums to 1.
    pub orientation_bias: [f64; 4],
    /// Linear change of each probability across the page width: probability
    /// mass shifts from the strongest orientation to the runner-up as x goes
    /// left to right. Sums to 0 and bias + drift stays positive, so the mix
    /// at every column is still a distribution.
    pub bias_drift: [f64; 4],
    /// Gaussian noise applied to stroke-boundary ink pixels (intensity
    /// units); a quarter of it is applied page-wide.
    pub edge_noise_sigma: f64,
    /// Probability that a background pixel touching ink gets inked.
    pub dot_gain: f64,
}

impl PrinterProfile {
    /// A profile that renders clean two-level pages: no texture, no noise,
    /// no dot gain. Useful as ground truth for segmentation.
    pub fn noiseless(printer_id: impl Into<String>) -> Self {
        Self {
            printer_id: printer_id.into(),
            seed: 0,
            orientation_bias: [0.0; 4],
            bias_drift: [0.0; 4],
            edge_noise_sigma: 0.0,
            dot_gain: 0.0,
        }
    }
}

/// Derives the profiles for printers 0..count from the master seed. Bias
/// mixes come from a sparse Dirichlet, so most printers favor one or two
/// orientations; the sampler rejects candidates until every pair of mixes is
/// at least 0.55 apart in L1, drift moves at least 0.2 of probability
/// between the two dominant orientations across the page, and every
/// orientation keeps probability at least 0.02 everywhere.
pub fn make_printer_profiles(master_seed: u64, count: u32) -> Vec<PrinterProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let bias_prior = Dirichlet::new([0.4f64; 4]).expect("static parameters are valid");
    let mut profiles: Vec<PrinterProfile> = Vec::with_capacity(count as usize);
    for index in 0..count {
        let profile = loop {
            let orientation_bias: [f64; 4] = bias_prior.sample(&mut rng);
            let delta = rng.random_range(0.20..0.35);
            let edge_noise_sigma = rng.random_range(1800.0..2800.0);
            let dot_gain = rng.random_range(0.10..0.40);
            let seed = rng.random::<u64>();

            let mut order = [0usize, 1, 2, 3];
            order.sort_by(|&a, &b| orientation_bias[b].total_cmp(&orientation_bias[a]));
            let mut bias_drift = [0.0f64; 4];
            bias_drift[order[0]] = -delta;
            bias_drift[order[1]] = delta;

            // Only the strongest orientation loses mass, and linearly in x,
            // so positivity at the right page edge covers the interior.
            let positive_everywhere = orientation_bias[order[3]] >= 0.02
                && orientation_bias[order[0]] - delta >= 0.02;
            let distinct = profiles.iter().all(|p| {
                let l1: f64 = p
                    .orientation_bias
                    .iter()
                    .zip(&orientation_bias)
                    .map(|(&a, &b)| (a - b).abs())
                    .sum();
                l1 >= 0.55
            });
            if positive_everywhere && distinct {
                break PrinterProfile {
                    printer_id: format!("printer{index:02}"),
                    seed,
                    orientation_bias,
                    bias_drift,
                    edge_noise_sigma,
                    dot_gain,
                };
            }
        };
        profiles.push(profile);
    }
    profiles
}

/// The profile a given index receives under [`make_printer_profiles`];
/// stable regardless of how many profiles are derived.
pub fn make_printer_profile(master_seed: u64, index: u32) -> PrinterProfile {
    make_printer_profiles(master_seed, index + 1).pop().unwrap()
}

/// Glyph shape families, emulating disjoint fonts: `Alpha` draws L/H/X/V
/// strokes, `Beta` draws T/Z/N/Λ strokes. The families share no shapes but
/// use a similar mix of bar and slant directions, as real fonts do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GlyphFamily {
    Alpha,
    Beta,
}

impl std::str::FromStr for GlyphFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "alpha" | "a" => Ok(GlyphFamily::Alpha),
            "beta" | "b" => Ok(GlyphFamily::Beta),
            other => Err(format!("unknown glyph family {other:?} (expected alpha or beta)")),
        }
    }
}

impl std::fmt::Display for GlyphFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GlyphFamily::Alpha => write!(f, "alpha"),
            GlyphFamily::Beta => write!(f, "beta"),
        }
    }
}

/// Page geometry: glyphs are stamped on a rows×cols lattice with evenly
/// divided gaps and per-glyph jitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PageParams {
    pub width: u32,
    pub height: u32,
    pub glyph_rows: u32,
    pub glyph_cols: u32,
    pub glyph_size: u32,
    pub family: GlyphFamily,
}

impl Default for PageParams {
    fn default() -> Self {
        Self {
            width: 2550,
            height: 3300,
            glyph_rows: 45,
            glyph_cols: 30,
            glyph_size: 48,
            family: GlyphFamily::Alpha,
        }
    }
}

impl PageParams {
    fn validate(&self) -> Result<(u32, u32), SynthError> {
        if self.glyph_rows == 0 || self.glyph_cols == 0 || self.glyph_size < 9 {
            return Err(SynthError::Geometry(format!(
                "need at least a 1x1 grid of 9px glyphs, got {}x{} of {}px",
                self.glyph_rows, self.glyph_cols, self.glyph_size
            )));
        }
        let used_w = self.glyph_cols * self.glyph_size;
        let used_h = self.glyph_rows * self.glyph_size;
        if used_w >= self.width || used_h >= self.height {
            return Err(SynthError::Geometry(format!(
                "{}x{} glyphs of {}px do not fit a {}x{} page",
                self.glyph_rows, self.glyph_cols, self.glyph_size, self.width, self.height
            )));
        }
        // Evenly divided gaps, one more gap than glyphs per axis.
        let gap_x = (self.width - used_w) / (self.glyph_cols + 1);
        let gap_y = (self.height - used_h) / (self.glyph_rows + 1);
        if gap_x < 4 || gap_y < 4 {
            return Err(SynthError::Geometry(format!(
                "glyph gaps {gap_x}x{gap_y}px are too tight; glyphs would merge"
            )));
        }
        Ok((gap_x, gap_y))
    }
}

/// Ground truth recorded while rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderStats {
    /// Ink pixels in the final mask (after dot gain).
    pub ink_pixels: u64,
    pub glyph_count: u32,
}

/// Renders one page deterministically from (profile, page, doc_seed).
pub fn render_document(
    profile: &PrinterProfile,
    page: &PageParams,
    doc_seed: u64,
) -> Result<(DocumentImage, RenderStats), SynthError> {
    let (gap_x, gap_y) = page.validate()?;
    let (w, h) = (page.width as usize, page.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed ^ doc_seed);

    // Orientation mix per pixel column: bias plus drift scaled by page
    // position. All zeros (the noiseless profile) leaves glyphs untextured.
    let mut weights = vec![[0.0f64; 4]; w];
    for (c, wc) in weights.iter_mut().enumerate() {
        let x = c as f64 / page.width as f64;
        let raw: [f64; 4] = std::array::from_fn(|o| {
            (profile.orientation_bias[o] + profile.bias_drift[o] * x).max(0.0)
        });
        let denom: f64 = raw.iter().sum();
        if denom > 1e-9 {
            *wc = raw.map(|v| v / denom);
        }
    }

    // Stamp glyphs on the lattice with small positional jitter. Each glyph
    // draws its ridge orientation from the mix at its (unjittered) center
    // column plus a wave phase; `ridge` records the combined code per pixel,
    // NO_INK marking background.
    let mut ridge = vec![NO_INK; w * h];
    let g = page.glyph_size;
    let jitter_x = (gap_x / 3).min(3) as i64;
    let jitter_y = (gap_y / 3).min(3) as i64;
    for row in 0..page.glyph_rows {
        for col in 0..page.glyph_cols {
            let shape = rng.random_range(0..4u32);
            let dx = rng.random_range(-jitter_x..=jitter_x);
            let dy = rng.random_range(-jitter_y..=jitter_y);
            let u: f64 = rng.random();
            let phase = rng.random_range(0..WAVE_PERIOD as u8);
            let center = (gap_x + col * (g + gap_x) + g / 2) as usize;
            let code = match sample_orientation(&weights[center.min(w - 1)], u) {
                NO_TEXTURE => NO_TEXTURE,
                orientation => phase * 4 + orientation,
            };
            let x0 = (gap_x + col * (g + gap_x)) as i64 + dx;
            let y0 = (gap_y + row * (g + gap_y)) as i64 + dy;
            stamp_glyph(&mut ridge, w, x0, y0, g, page.family, shape, code);
        }
    }

    // Dot gain: background pixels touching ink get inked probabilistically,
    // continuing the neighbor's ridge field. The adjacency test uses a
    // snapshot so the dilation is exactly 1px.
    if profile.dot_gain > 0.0 {
        let snapshot = ridge.clone();
        for r in 0..h {
            for c in 0..w {
                if snapshot[r * w + c] != NO_INK {
                    continue;
                }
                let ink_neighbor = neighbors8(r, c, w, h)
                    .into_iter()
                    .flatten()
                    .map(|(nr, nc)| snapshot[nr * w + nc])
                    .find(|&code| code != NO_INK);
                if let Some(code) = ink_neighbor {
                    if rng.random_bool(profile.dot_gain) {
                        ridge[r * w + c] = code;
                    }
                }
            }
        }
    }

    // Intensities: ridged ink on a light background.
    let mut values = vec![0.0f64; w * h];
    for r in 0..h {
        for c in 0..w {
            let idx = r * w + c;
            values[idx] = match ridge[idx] {
                NO_INK => BG_BASE,
                NO_TEXTURE => INK_BASE,
                code => {
                    let (rf, cf) = (r as f64, c as f64);
                    let t = match code % 4 {
                        0 => rf,
                        1 => rf + cf,
                        2 => cf,
                        _ => rf - cf,
                    };
                    INK_BASE + TEXTURE_AMPLITUDE * tri_wave(t, (code / 4) as f64)
                }
            };
        }
    }

    // Page-wide sensor noise, then stronger noise on stroke boundaries.
    if profile.edge_noise_sigma > 0.0 {
        let base = Normal::new(0.0, profile.edge_noise_sigma * BASE_NOISE_FRACTION)
            .expect("sigma is positive and finite");
        for v in values.iter_mut() {
            *v += base.sample(&mut rng);
        }
        let edge = Normal::new(0.0, profile.edge_noise_sigma).expect("sigma is positive");
        for r in 0..h {
            for c in 0..w {
                let idx = r * w + c;
                if ridge[idx] == NO_INK {
                    continue;
                }
                let on_boundary = neighbors8(r, c, w, h)
                    .into_iter()
                    .flatten()
                    .any(|(nr, nc)| ridge[nr * w + nc] == NO_INK);
                if on_boundary {
                    values[idx] += edge.sample(&mut rng);
                }
            }
        }
    }

    let pixels: Vec<u16> = values.iter().map(|&v| v.clamp(0.0, 65535.0).round() as u16).collect();
    let mut image = DocumentImage::new(page.width, page.height, BitDepth::Sixteen, pixels)?;
    image.printer_label = Some(profile.printer_id.clone());
    let stats = RenderStats {
        ink_pixels: ridge.iter().filter(|&&code| code != NO_INK).count() as u64,
        glyph_count: page.glyph_rows * page.glyph_cols,
    };
    Ok((image, stats))
}

/// Background marker in the render's per-pixel ridge map. Inked pixels hold
/// `phase * 4 + orientation` (16 codes) or [`NO_TEXTURE`].
const NO_INK: u8 = u8::MAX;
/// Ink with no ridge field (all mixture weights zero).
const NO_TEXTURE: u8 = 16;

/// Picks a ridge orientation from the cumulative mix, `u` uniform in [0, 1).
fn sample_orientation(weights: &[f64; 4], u: f64) -> u8 {
    if weights.iter().sum::<f64>() <= 0.0 {
        return NO_TEXTURE;
    }
    let mut acc = 0.0;
    for (o, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return o as u8;
        }
    }
    3
}

/// Triangular wave with period [`WAVE_PERIOD`], range [0, 1].
#[inline]
fn tri_wave(t: f64, phase: f64) -> f64 {
    let s = ((t + phase) / WAVE_PERIOD).rem_euclid(1.0);
    if s < 0.5 {
        2.0 * s
    } else {
        2.0 * (1.0 - s)
    }
}

fn neighbors8(r: usize, c: usize, w: usize, h: usize) -> [Option<(usize, usize)>; 8] {
    let mut out = [None; 8];
    let mut i = 0;
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
            if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w {
                out[i] = Some((nr as usize, nc as usize));
            }
            i += 1;
        }
    }
    out
}

/// Stamps one procedural glyph whose top-left corner sits at (x0, y0),
/// recording the glyph's ridge code for every inked pixel.
#[allow(clippy::too_many_arguments)]
fn stamp_glyph(
    ridge: &mut [u8],
    page_w: usize,
    x0: i64,
    y0: i64,
    size: u32,
    family: GlyphFamily,
    shape: u32,
    code: u8,
) {
    let g = size as i64;
    let stroke = (g / 5).max(3);
    let inside = |r: i64, c: i64, family: GlyphFamily, shape: u32| -> bool {
        let vbar_left = c < stroke;
        let vbar_right = c >= g - stroke;
        let vbar_mid = (c - (g - stroke) / 2).abs() < stroke;
        let hbar_top = r < stroke;
        let hbar_mid = (r - (g - stroke) / 2).abs() < stroke;
        let hbar_bottom = r >= g - stroke;
        let half = stroke as f64 * 0.55;
        let (rf, cf) = (r as f64, c as f64);
        let gf = (g - 1) as f64;
        let slash = ((gf - rf) - cf).abs() <= half;
        let backslash = (rf - cf).abs() <= half;
        match family {
            GlyphFamily::Alpha => {
                let v_left = (cf - rf / 2.0).abs() <= half;
                let v_right = (cf - (gf - rf / 2.0)).abs() <= half;
                match shape {
                    0 => vbar_left || hbar_bottom,            // L
                    1 => vbar_left || vbar_right || hbar_mid, // H
                    2 => slash || backslash,                  // X
                    _ => v_left || v_right,                   // V
                }
            }
            GlyphFamily::Beta => {
                let lam_left = (cf - (gf - rf) / 2.0).abs() <= half;
                let lam_right = (cf - (gf - (gf - rf) / 2.0)).abs() <= half;
                match shape {
                    0 => hbar_top || vbar_mid,                 // T
                    1 => hbar_top || hbar_bottom || slash,     // Z
                    2 => vbar_left || vbar_right || backslash, // N
                    _ => lam_left || lam_right,                // Λ
                }
            }
        }
    };
    for r in 0..g {
        for c in 0..g {
            if inside(r, c, family, shape) {
                let (pr, pc) = (y0 + r, x0 + c);
                ridge[pr as usize * page_w + pc as usize] = code;
            }
        }
    }
}

/// One document inside a corpus manifest; `path` is relative to the
/// manifest file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestDoc {
    pub path: String,
    pub printer_id: String,
    pub doc_seed: u64,
}

/// Everything needed to regenerate a corpus bit-identically.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorpusManifest {
    pub generator_version: u32,
    pub master_seed: u64,
    pub page: PageParams,
    pub profiles: Vec<PrinterProfile>,
    pub docs: Vec<ManifestDoc>,
}

/// Corpus generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusConfig {
    pub printers: u32,
    pub docs_per_printer: u32,
    pub page: PageParams,
    pub master_seed: u64,
}

/// Derives the full corpus plan (profiles and per-document seeds) without
/// rendering anything.
pub fn corpus_plan(cfg: &CorpusConfig) -> Result<(Vec<PrinterProfile>, Vec<ManifestDoc>), SynthError> {
    if cfg.printers < 2 || cfg.docs_per_printer < 2 {
        return Err(SynthError::InvalidConfig(format!(
            "need at least 2 printers and 2 documents each, got {} and {}",
            cfg.printers, cfg.docs_per_printer
        )));
    }
    cfg.page.validate()?;
    let profiles = make_printer_profiles(cfg.master_seed, cfg.printers);
    // Per-document seeds come from a dedicated RNG stream; duplicates are
    // rejected so every document renders from a distinct seed.
    let mut seed_rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    seed_rng.set_stream(1);
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for profile in &profiles {
        for d in 0..cfg.docs_per_printer {
            let doc_seed = loop {
                let s = seed_rng.random::<u64>();
                if seen.insert(s) {
                    break s;
                }
            };
            docs.push(ManifestDoc {
                path: format!("{}_doc{d:03}.pgm", profile.printer_id),
                printer_id: profile.printer_id.clone(),
                doc_seed,
            });
        }
    }
    Ok((profiles, docs))
}

/// Renders the whole corpus into `out_dir` plus a `manifest.json`.
pub fn generate_corpus(cfg: &CorpusConfig, out_dir: impl AsRef<Path>) -> Result<CorpusManifest, SynthError> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|source| SynthError::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    let (profiles, docs) = corpus_plan(cfg)?;
    let manifest = CorpusManifest {
        generator_version: GENERATOR_VERSION,
        master_seed: cfg.master_seed,
        page: cfg.page,
        profiles,
        docs,
    };
    render_manifest_docs(&manifest, out_dir)?;
    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(|source| SynthError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    Ok(manifest)
}

/// Re-renders every document listed in a manifest into `out_dir`;
/// output bytes are identical to the original generation.
pub fn regenerate_corpus(manifest: &CorpusManifest, out_dir: impl AsRef<Path>) -> Result<(), SynthError> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|source| SynthError::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    render_manifest_docs(manifest, out_dir)
}

fn render_manifest_docs(manifest: &CorpusManifest, out_dir: &Path) -> Result<(), SynthError> {
    use rayon::prelude::*;
    manifest
        .docs
        .par_iter()
        .try_for_each(|doc| -> Result<(), SynthError> {
            let profile = manifest
                .profiles
                .iter()
                .find(|p| p.printer_id == doc.printer_id)
                .ok_or_else(|| {
                    SynthError::InvalidConfig(format!(
                        "manifest references unknown printer {}",
                        doc.printer_id
                    ))
                })?;
            let (image, _) = render_document(profile, &manifest.page, doc.doc_seed)?;
            save_pgm(&image, out_dir.join(&doc.path))?;
            Ok(())
        })
}

/// Reads a manifest written by [`generate_corpus`].
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest, SynthError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| SynthError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| SynthError::Json {
        path: path.to_owned(),
        source,
    })
}
