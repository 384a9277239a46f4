//! Flat key=value configuration files.
//!
//! A config file pre-sets command-line flags: the line `columns = 20` and
//! the flag `--columns 20` mean the same thing, and an explicit flag always
//! wins over the file. Lines are `key = value`; `#` starts a comment and
//! blank lines are ignored. Loading validates the whole file at once and
//! reports every violation — unknown keys, bad values, duplicates — in a
//! single error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use printtrace_core::{DescriptorVariant, GlyphFamily, PoolSize, Predictor};

type Check = fn(&str) -> Result<(), String>;

/// Every key a config file may set, with its value syntax. Keys irrelevant
/// to the current subcommand are allowed (one file can drive a whole
/// pipeline); keys outside this table are rejected.
pub const SCHEMA: &[(&str, &str, Check)] = &[
    ("t0", "lower intensity threshold, integer 1..=65535", check_u16_ge1),
    ("t1", "upper intensity threshold, integer 1..=65535", check_u16_ge1),
    ("g0", "gradient tolerance in degrees, 0 < G0 <= 180", check_g0),
    ("variant", "descriptor variant, full|approx", check_variant),
    ("area_low", "area filter lower multiple of the median, >= 0", check_f64_nonneg),
    ("area_high", "area filter upper multiple of the median, > 0", check_f64_pos),
    ("width_range", "kept component widths, MIN..MAX pixels", check_range),
    ("height_range", "kept component heights, MIN..MAX pixels", check_range),
    ("layout", "pooling layout, column|grid|page", check_layout),
    ("columns", "column count for column layout, >= 1", check_u32_ge1),
    ("grid", "grid dimensions, WxH with both >= 1", check_grid),
    ("pool_size", "letters per pooled group, all or an integer >= 1", check_pool_size),
    ("predictor", "prediction rule, correlation|centroid", check_predictor),
    ("bank", "reference bank file path", check_path),
    ("labels", "path,printer CSV file path", check_path),
    ("manifest", "corpus manifest file path", check_path),
    ("iterations", "train/test split iterations, >= 1", check_u32_ge1),
    ("train_per_printer", "training documents per printer, >= 1", check_u32_ge1),
    ("printers", "printers to synthesize, >= 2", check_u32_ge2),
    ("docs_per_printer", "documents per synthetic printer, >= 2", check_u32_ge2),
    ("page_width", "synthetic page width in pixels, >= 1", check_u32_ge1),
    ("page_height", "synthetic page height in pixels, >= 1", check_u32_ge1),
    ("glyph_rows", "glyph rows per synthetic page, >= 1", check_u32_ge1),
    ("glyph_cols", "glyph columns per synthetic page, >= 1", check_u32_ge1),
    ("glyph_size", "glyph cell size in pixels, >= 1", check_u32_ge1),
    ("family", "synthetic glyph family, alpha|beta", check_family),
    ("dims", "projection dimensions, >= 1", check_usize_ge1),
    ("seed", "master random seed, unsigned 64-bit integer", check_u64),
    ("jobs", "worker threads, >= 1", check_usize_ge1),
    ("out", "output file or directory path", check_path),
];

fn schema_entry(key: &str) -> Option<&'static (&'static str, &'static str, Check)> {
    SCHEMA.iter().find(|(k, _, _)| *k == key)
}

fn check_u16_ge1(v: &str) -> Result<(), String> {
    match v.parse::<u16>() {
        Ok(n) if n >= 1 => Ok(()),
        _ => Err(format!("expected integer 1..=65535, got {v:?}")),
    }
}

fn check_u32_ge1(v: &str) -> Result<(), String> {
    parse_u32_min(v, 1).map(|_| ())
}

fn check_u32_ge2(v: &str) -> Result<(), String> {
    parse_u32_min(v, 2).map(|_| ())
}

pub fn parse_u32_min(v: &str, min: u32) -> Result<u32, String> {
    match v.parse::<u32>() {
        Ok(n) if n >= min => Ok(n),
        _ => Err(format!("expected integer >= {min}, got {v:?}")),
    }
}

fn check_u64(v: &str) -> Result<(), String> {
    v.parse::<u64>()
        .map(|_| ())
        .map_err(|_| format!("expected unsigned 64-bit integer, got {v:?}"))
}

fn check_usize_ge1(v: &str) -> Result<(), String> {
    match v.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(()),
        _ => Err(format!("expected integer >= 1, got {v:?}")),
    }
}

fn check_f64_nonneg(v: &str) -> Result<(), String> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() && x >= 0.0 => Ok(()),
        _ => Err(format!("expected finite number >= 0, got {v:?}")),
    }
}

fn check_f64_pos(v: &str) -> Result<(), String> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() && x > 0.0 => Ok(()),
        _ => Err(format!("expected finite number > 0, got {v:?}")),
    }
}

fn check_g0(v: &str) -> Result<(), String> {
    match v.parse::<f64>() {
        Ok(x) if x > 0.0 && x <= 180.0 => Ok(()),
        _ => Err(format!("expected degrees in (0, 180], got {v:?}")),
    }
}

fn check_variant(v: &str) -> Result<(), String> {
    DescriptorVariant::from_str(v).map(|_| ())
}

fn check_layout(v: &str) -> Result<(), String> {
    match v {
        "column" | "grid" | "page" => Ok(()),
        _ => Err(format!("expected column|grid|page, got {v:?}")),
    }
}

fn check_grid(v: &str) -> Result<(), String> {
    parse_grid(v).map(|_| ())
}

/// Parses grid dimensions written as `WxH`, e.g. `8x8`.
pub fn parse_grid(v: &str) -> Result<(u32, u32), String> {
    let err = || format!("expected WxH with both >= 1, e.g. 8x8, got {v:?}");
    let (w, h) = v.split_once(['x', 'X']).ok_or_else(err)?;
    match (w.trim().parse::<u32>(), h.trim().parse::<u32>()) {
        (Ok(w), Ok(h)) if w >= 1 && h >= 1 => Ok((w, h)),
        _ => Err(err()),
    }
}

fn check_pool_size(v: &str) -> Result<(), String> {
    PoolSize::from_str(v).map(|_| ())
}

fn check_predictor(v: &str) -> Result<(), String> {
    Predictor::from_str(v).map(|_| ())
}

fn check_family(v: &str) -> Result<(), String> {
    GlyphFamily::from_str(v).map(|_| ())
}

fn check_range(v: &str) -> Result<(), String> {
    parse_range(v).map(|_| ())
}

/// Parses an inclusive pixel range written as `MIN..MAX`, e.g. `4..120`.
pub fn parse_range(v: &str) -> Result<(u32, u32), String> {
    let err = || format!("expected MIN..MAX with MIN <= MAX, e.g. 4..120, got {v:?}");
    let (lo, hi) = v.split_once("..").ok_or_else(err)?;
    match (lo.trim().parse::<u32>(), hi.trim().parse::<u32>()) {
        (Ok(lo), Ok(hi)) if lo <= hi => Ok((lo, hi)),
        _ => Err(err()),
    }
}

fn check_path(v: &str) -> Result<(), String> {
    if v.is_empty() {
        Err("expected a non-empty path".into())
    } else {
        Ok(())
    }
}

/// A validated config file. Values are kept as strings and re-parsed on
/// access; validation at load time guarantees those parses succeed.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    /// No file given: every lookup falls through to the built-in default.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Loads and fully validates a config file, reporting every violation
    /// in one single-line error.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("config file {}: {e}", path.display()))?;
        let mut values = BTreeMap::new();
        let mut violations = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                violations.push(format!("line {}: expected key = value, got {line:?}", lineno + 1));
                continue;
            };
            let (key, value) = (key.trim().to_owned(), value.trim().to_owned());
            match schema_entry(&key) {
                None => violations.push(format!("line {}: unknown key {key:?}", lineno + 1)),
                Some((_, expected, check)) => {
                    if let Err(e) = check(&value) {
                        violations.push(format!("{key}: {e} ({expected})"));
                    }
                    if values.insert(key.clone(), value).is_some() {
                        violations.push(format!("line {}: duplicate key {key:?}", lineno + 1));
                    }
                }
            }
        }
        for (a, b) in [("t0", "t1"), ("area_low", "area_high")] {
            if let (Some(x), Some(y)) = (values.get(a), values.get(b)) {
                if let (Ok(x_num), Ok(y_num)) = (x.parse::<f64>(), y.parse::<f64>()) {
                    if x_num >= y_num {
                        violations.push(format!("{a} = {x} must be < {b} = {y}"));
                    }
                }
            }
        }
        if violations.is_empty() {
            Ok(Self { values })
        } else {
            Err(anyhow::anyhow!(
                "config file {} is invalid: {}",
                path.display(),
                violations.join("; ")
            ))
        }
    }

    /// Raw string for a key, if the file sets it.
    pub fn raw(&self, key: &str) -> Option<&str> {
        debug_assert!(schema_entry(key).is_some(), "unknown config key {key}");
        self.values.get(key).map(String::as_str)
    }

    /// The value for `key` after precedence: explicit flag, then file, then
    /// `default`. File values re-parse with the same rules the flag uses.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> T
    where
        T::Err: std::fmt::Debug,
    {
        flag.unwrap_or_else(|| {
            self.raw(key)
                .map(|v| v.parse().expect("config values are validated at load"))
                .unwrap_or(default)
        })
    }

    /// Like [`resolve`](Self::resolve) without a built-in default.
    pub fn resolve_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Option<T>
    where
        T::Err: std::fmt::Debug,
    {
        flag.or_else(|| {
            self.raw(key)
                .map(|v| v.parse().expect("config values are validated at load"))
        })
    }
}

/// The `key = value` schema rendered for `--help`.
pub fn schema_help() -> String {
    let mut out = String::from("Config file keys (key = value, # comments):\n");
    for (key, expected, _) in SCHEMA {
        writeln!(out, "  {key:<18} {expected}").unwrap();
    }
    out
}
