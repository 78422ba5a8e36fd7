//! Parsing of raw sensor dataset files into an ordered row model.
//!
//! Rows are kept verbatim. Cells are a view used only by the column-level
//! analyses and by cell-granularity diffs.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lines sampled by [`infer_format`].
const INFER_SAMPLE_LINES: usize = 50;
/// Share of sampled lines that must agree on a token count.
const INFER_CONSISTENCY: f64 = 0.9;
/// Number of deltas kept verbatim in [`IncrementStats::deltas`].
const MAX_REPORTED_DELTAS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("input is empty")]
    EmptyInput,
    #[error("no delimiter gives a consistent token count")]
    NoConsistentDelimiter,
    #[error("line {0}: column count does not match the expected count")]
    ColumnCountMismatch(usize),
    #[error("no data rows remain after removing blank, comment and header lines")]
    EmptyAfterFiltering,
    #[error("expected_column_count must be at least 1")]
    InvalidConfig,
    #[error("unsupported delimiter {0:?}")]
    UnsupportedDelimiter(String),
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    Comma,
    Space,
    Tab,
    Semicolon,
}

impl Delimiter {
    pub const ALL: [Delimiter; 4] = [
        Delimiter::Comma,
        Delimiter::Tab,
        Delimiter::Semicolon,
        Delimiter::Space,
    ];

    pub fn as_char(self) -> char {
        match self {
            Delimiter::Comma => ',',
            Delimiter::Space => ' ',
            Delimiter::Tab => '\t',
            Delimiter::Semicolon => ';',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.as_char() == c)
    }

    /// Accepts the literal character or its name (`comma`, `space`, `tab`, `semicolon`).
    pub fn parse(s: &str) -> Result<Self, IngestError> {
        match s {
            "comma" | "," => Ok(Delimiter::Comma),
            "space" | " " => Ok(Delimiter::Space),
            "tab" | "\t" | "\\t" => Ok(Delimiter::Tab),
            "semicolon" | ";" => Ok(Delimiter::Semicolon),
            other => Err(IngestError::UnsupportedDelimiter(other.to_string())),
        }
    }
}

impl fmt::Display for Delimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Delimiter::Comma => "comma",
            Delimiter::Space => "space",
            Delimiter::Tab => "tab",
            Delimiter::Semicolon => "semicolon",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseConfig {
    pub delimiter: Delimiter,
    pub has_header: bool,
    #[serde(default)]
    pub comment_prefix: Option<String>,
    #[serde(default)]
    pub expected_column_count: Option<usize>,
}

impl ParseConfig {
    pub fn new(delimiter: Delimiter) -> Self {
        Self {
            delimiter,
            has_header: false,
            comment_prefix: None,
            expected_column_count: None,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        match self.expected_column_count {
            Some(0) => Err(IngestError::InvalidConfig),
            _ => Ok(()),
        }
    }

    fn is_comment(&self, line: &str) -> bool {
        match &self.comment_prefix {
            Some(prefix) if !prefix.is_empty() => line.trim_start().starts_with(prefix.as_str()),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub source_name: String,
    pub delimiter: Delimiter,
    /// Raw header line, verbatim.
    pub header_line: Option<String>,
    pub header: Option<Vec<String>>,
    pub rows: Vec<String>,
    pub cells: Vec<Vec<String>>,
    pub column_count: usize,
    /// Set when a space-delimited file has runs of spaces or padding, so that
    /// the cell split is not lossless.
    pub non_canonical_spacing: bool,
}

impl DatasetFile {
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// Cells of row `i` joined back with the delimiter.
    pub fn rejoin(&self, i: usize) -> String {
        let mut buf = [0u8; 4];
        let sep = self.delimiter.as_char().encode_utf8(&mut buf);
        self.cells[i].join(sep)
    }

    /// Values of column `index` in row order; ragged rows that lack it are skipped.
    pub fn column(&self, index: usize) -> impl Iterator<Item = &str> {
        self.cells
            .iter()
            .filter_map(move |row| row.get(index).map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    StrictlyIncreasing,
    StrictlyDecreasing,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementStats {
    /// Distinct consecutive deltas, ascending, at most 64 of them.
    pub deltas: Vec<f64>,
    pub distinct_deltas: usize,
    pub monotonicity: Monotonicity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub index: usize,
    pub value_count: usize,
    pub distinct_count: usize,
    pub distinct_fraction: f64,
    pub max_run_length: usize,
    pub is_numeric: bool,
    pub increment_stats: Option<IncrementStats>,
}

pub fn decode_lossy(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// Strict decimal check: optional sign, digits with an optional fraction,
/// optional exponent. Rejects `nan`, `inf` and friends that `f64::from_str` accepts.
pub fn is_numeric_token(token: &str) -> bool {
    let s = token.trim();
    let s = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => (&s[..pos], Some(&s[pos + 1..])),
        None => (s, None),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    let digits_ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if int_part.is_empty() && frac_part.is_empty() {
        return false;
    }
    if !digits_ok(int_part) || !digits_ok(frac_part) {
        return false;
    }
    match exponent {
        None => true,
        Some(e) => {
            let e = e.strip_prefix(['+', '-']).unwrap_or(e);
            !e.is_empty() && digits_ok(e)
        }
    }
}

fn logical_lines(raw: &str) -> impl Iterator<Item = (usize, &str)> {
    raw.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

fn split_cells(line: &str, delimiter: Delimiter) -> (Vec<String>, bool) {
    match delimiter {
        Delimiter::Space => {
            let canonical = !line.starts_with(' ') && !line.ends_with(' ') && !line.contains("  ");
            let cells = if canonical {
                line.split(' ').map(str::to_string).collect()
            } else {
                line.split(' ')
                    .filter(|t| !t.is_empty())
                    .map(str::to_string)
                    .collect()
            };
            (cells, !canonical)
        }
        other => (
            line.split(other.as_char()).map(str::to_string).collect(),
            false,
        ),
    }
}

fn token_count(line: &str, delimiter: Delimiter) -> usize {
    match delimiter {
        Delimiter::Space => line.split(' ').filter(|t| !t.is_empty()).count(),
        other => line.split(other.as_char()).count(),
    }
}

/// Guesses delimiter, header presence and comment prefix from the text.
pub fn infer_format(raw_text: &str) -> Result<ParseConfig, IngestError> {
    if raw_text.trim().is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let comment_prefix = logical_lines(raw_text)
        .any(|(_, l)| l.trim_start().starts_with('#'))
        .then(|| "#".to_string());

    let sample: Vec<&str> = logical_lines(raw_text)
        .map(|(_, l)| l)
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .take(INFER_SAMPLE_LINES)
        .collect();
    if sample.is_empty() {
        return Err(IngestError::EmptyInput);
    }

    // (consistency, modal token count, delimiter); candidates that never split are ignored.
    let mut best: Option<(f64, usize, Delimiter)> = None;
    for delimiter in Delimiter::ALL {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for line in &sample {
            *counts.entry(token_count(line, delimiter)).or_default() += 1;
        }
        let (modal, freq) = counts
            .into_iter()
            .max_by_key(|&(count, freq)| (freq, count))
            .expect("sample is non-empty");
        if modal < 2 {
            continue;
        }
        let consistency = freq as f64 / sample.len() as f64;
        if consistency + 1e-12 < INFER_CONSISTENCY {
            continue;
        }
        let better = match best {
            None => true,
            Some((c, m, _)) => consistency > c || (consistency == c && modal > m),
        };
        if better {
            best = Some((consistency, modal, delimiter));
        }
    }
    let (_, _, delimiter) = best.ok_or(IngestError::NoConsistentDelimiter)?;

    let tokens = |line: &str| -> Vec<String> {
        let (cells, _) = split_cells(line, delimiter);
        cells
    };
    let has_header = match (sample.first(), sample.get(1)) {
        (Some(first), Some(second)) => {
            tokens(first).iter().any(|t| !is_numeric_token(t))
                && tokens(second).iter().all(|t| is_numeric_token(t))
        }
        _ => false,
    };

    Ok(ParseConfig {
        delimiter,
        has_header,
        comment_prefix,
        expected_column_count: None,
    })
}

pub fn parse_dataset_file(
    source_name: &str,
    raw_text: &str,
    cfg: &ParseConfig,
) -> Result<DatasetFile, IngestError> {
    cfg.validate()?;
    if raw_text.is_empty() {
        return Err(IngestError::EmptyInput);
    }

    let mut header_line = None;
    let mut header = None;
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut non_canonical_spacing = false;

    for (line_no, line) in logical_lines(raw_text) {
        if line.trim().is_empty() || cfg.is_comment(line) {
            continue;
        }
        let (tokens, irregular) = split_cells(line, cfg.delimiter);
        if let Some(expected) = cfg.expected_column_count {
            if tokens.len() != expected {
                return Err(IngestError::ColumnCountMismatch(line_no));
            }
        }
        if cfg.has_header && header_line.is_none() {
            header_line = Some(line.to_string());
            header = Some(tokens);
            continue;
        }
        non_canonical_spacing |= irregular;
        rows.push(line.to_string());
        cells.push(tokens);
    }

    if rows.is_empty() {
        return Err(IngestError::EmptyAfterFiltering);
    }

    let column_count = match cfg.expected_column_count {
        Some(n) => n,
        None => modal_width(&cells),
    };

    Ok(DatasetFile {
        source_name: source_name.to_string(),
        delimiter: cfg.delimiter,
        header_line,
        header,
        rows,
        cells,
        column_count,
        non_canonical_spacing,
    })
}

fn modal_width(cells: &[Vec<String>]) -> usize {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for row in cells {
        *counts.entry(row.len()).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by_key(|&(width, freq)| (freq, width))
        .map(|(width, _)| width.max(1))
        .unwrap_or(1)
}

/// Reads a file from disk, decoding invalid UTF-8 lossily. The format is
/// inferred unless `cfg` is given.
pub fn read_dataset_file(path: &Path, cfg: Option<&ParseConfig>) -> Result<DatasetFile, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let text = decode_lossy(&bytes);
    let cfg = match cfg {
        Some(c) => c.clone(),
        None => infer_format(&text)?,
    };
    parse_dataset_file(&path.display().to_string(), &text, &cfg)
}

/// Exact decimal value: `mantissa * 10^-scale`.
#[derive(Debug, Clone, Copy)]
struct Decimal {
    mantissa: i128,
    scale: u32,
}

fn parse_decimal(token: &str) -> Option<Decimal> {
    let s = token.trim();
    if s.contains(['e', 'E']) || !is_numeric_token(s) {
        return None;
    }
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.len() + frac_part.len() > 30 {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let magnitude: i128 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    Some(Decimal {
        mantissa: if negative { -magnitude } else { magnitude },
        scale: frac_part.len() as u32,
    })
}

fn increment_stats(values: &[&str]) -> Option<IncrementStats> {
    if values.len() < 2 {
        return Some(IncrementStats {
            deltas: Vec::new(),
            distinct_deltas: 0,
            monotonicity: Monotonicity::None,
        });
    }
    let decimals: Option<Vec<Decimal>> = values.iter().map(|v| parse_decimal(v)).collect();
    let (exact, scale): (Vec<i128>, u32) = match decimals {
        Some(ds) => {
            let scale = ds.iter().map(|d| d.scale).max().unwrap_or(0);
            let aligned: Option<Vec<i128>> = ds
                .iter()
                .map(|d| {
                    10i128
                        .checked_pow(scale - d.scale)
                        .and_then(|f| d.mantissa.checked_mul(f))
                })
                .collect();
            match aligned {
                Some(a) => (a, scale),
                None => return float_increment_stats(values),
            }
        }
        None => return float_increment_stats(values),
    };

    let mut distinct: BTreeSet<i128> = BTreeSet::new();
    let (mut all_pos, mut all_neg) = (true, true);
    for pair in exact.windows(2) {
        let delta = pair[1] - pair[0];
        all_pos &= delta > 0;
        all_neg &= delta < 0;
        distinct.insert(delta);
    }
    let divisor = 10f64.powi(scale as i32);
    Some(IncrementStats {
        deltas: distinct
            .iter()
            .take(MAX_REPORTED_DELTAS)
            .map(|&d| d as f64 / divisor)
            .collect(),
        distinct_deltas: distinct.len(),
        monotonicity: monotonicity(all_pos, all_neg),
    })
}

fn float_increment_stats(values: &[&str]) -> Option<IncrementStats> {
    let parsed: Vec<f64> = values
        .iter()
        .map(|v| v.trim().parse::<f64>().ok())
        .collect::<Option<_>>()?;
    let mut deltas: Vec<f64> = parsed.windows(2).map(|p| p[1] - p[0]).collect();
    let all_pos = deltas.iter().all(|&d| d > 0.0);
    let all_neg = deltas.iter().all(|&d| d < 0.0);
    deltas.sort_by(f64::total_cmp);
    deltas.dedup_by(|a, b| a.to_bits() == b.to_bits());
    Some(IncrementStats {
        distinct_deltas: deltas.len(),
        deltas: deltas.into_iter().take(MAX_REPORTED_DELTAS).collect(),
        monotonicity: monotonicity(all_pos, all_neg),
    })
}

fn monotonicity(all_pos: bool, all_neg: bool) -> Monotonicity {
    match (all_pos, all_neg) {
        (true, _) => Monotonicity::StrictlyIncreasing,
        (_, true) => Monotonicity::StrictlyDecreasing,
        _ => Monotonicity::None,
    }
}

/// Longest run of identical consecutive items.
pub fn max_run_length<T: PartialEq>(items: &[T]) -> usize {
    let mut best = 0;
    let mut current = 0;
    for (i, item) in items.iter().enumerate() {
        if i > 0 && items[i - 1] == *item {
            current += 1;
        } else {
            current = 1;
        }
        best = best.max(current);
    }
    best
}

pub fn profile_column(index: usize, values: &[&str]) -> ColumnProfile {
    let distinct: HashSet<&str> = values.iter().copied().collect();
    let is_numeric = !values.is_empty() && values.iter().all(|v| is_numeric_token(v));
    ColumnProfile {
        index,
        value_count: values.len(),
        distinct_count: distinct.len(),
        distinct_fraction: if values.is_empty() {
            0.0
        } else {
            distinct.len() as f64 / values.len() as f64
        },
        max_run_length: max_run_length(values),
        is_numeric,
        increment_stats: if is_numeric { increment_stats(values) } else { None },
    }
}

pub fn profile_columns(file: &DatasetFile) -> Vec<ColumnProfile> {
    (0..file.column_count)
        .map(|index| {
            let values: Vec<&str> = file.column(index).collect();
            profile_column(index, &values)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(has_header: bool) -> ParseConfig {
        ParseConfig {
            has_header,
            ..ParseConfig::new(Delimiter::Comma)
        }
    }

    #[test]
    fn infers_comma_with_header() {
        let cfg = infer_format("a,b,c\n1,2,3\n4,5,6").unwrap();
        assert_eq!(cfg.delimiter, Delimiter::Comma);
        assert!(cfg.has_header);
    }

    #[test]
    fn infers_space_without_header() {
        let cfg = infer_format("0 1.5 2.5\n15 1.6 2.4").unwrap();
        assert_eq!(cfg.delimiter, Delimiter::Space);
        assert!(!cfg.has_header);
    }

    #[test]
    fn ragged_text_has_no_consistent_delimiter() {
        assert_eq!(
            infer_format("1;2\n3;4;5\n6"),
            Err(IngestError::NoConsistentDelimiter)
        );
    }

    #[test]
    fn infers_tab_and_comment_prefix() {
        let cfg = infer_format("# exported\n1\t2\t3\n4\t5\t6\n").unwrap();
        assert_eq!(cfg.delimiter, Delimiter::Tab);
        assert_eq!(cfg.comment_prefix.as_deref(), Some("#"));
        assert!(!cfg.has_header);
    }

    #[test]
    fn parses_with_header() {
        let file = parse_dataset_file("f", "t,x\n0,1.0\n15,1.1", &csv(true)).unwrap();
        assert_eq!(file.rows, vec!["0,1.0", "15,1.1"]);
        assert_eq!(file.column_count, 2);
        assert_eq!(file.header, Some(vec!["t".to_string(), "x".to_string()]));
        assert_eq!(file.header_line.as_deref(), Some("t,x"));
    }

    #[test]
    fn strips_crlf() {
        let file =
            parse_dataset_file("f", "0 1.0\r\n15 1.1\r\n", &ParseConfig::new(Delimiter::Space))
                .unwrap();
        assert_eq!(file.rows, vec!["0 1.0", "15 1.1"]);
        assert!(!file.non_canonical_spacing);
    }

    #[test]
    fn column_mismatch_reports_original_line_number() {
        let cfg = ParseConfig {
            comment_prefix: Some("#".into()),
            expected_column_count: Some(2),
            ..ParseConfig::new(Delimiter::Comma)
        };
        assert_eq!(
            parse_dataset_file("f", "# log\n0,1\n0,1,2", &cfg),
            Err(IngestError::ColumnCountMismatch(3))
        );
    }

    #[test]
    fn only_comments_is_empty_after_filtering() {
        let cfg = ParseConfig {
            comment_prefix: Some("#".into()),
            ..ParseConfig::new(Delimiter::Comma)
        };
        assert_eq!(
            parse_dataset_file("f", "# a\n\n# b\n", &cfg),
            Err(IngestError::EmptyAfterFiltering)
        );
    }

    #[test]
    fn zero_expected_columns_is_invalid() {
        let cfg = ParseConfig {
            expected_column_count: Some(0),
            ..ParseConfig::new(Delimiter::Comma)
        };
        assert_eq!(
            parse_dataset_file("f", "1,2", &cfg),
            Err(IngestError::InvalidConfig)
        );
    }

    #[test]
    fn multi_space_rows_are_flagged_but_kept_verbatim() {
        let file =
            parse_dataset_file("f", "0  1.0 2\n15 1.1 2", &ParseConfig::new(Delimiter::Space))
                .unwrap();
        assert!(file.non_canonical_spacing);
        assert_eq!(file.rows[0], "0  1.0 2");
        assert_eq!(file.cells[0], vec!["0", "1.0", "2"]);
        assert_eq!(file.column_count, 3);
    }

    #[test]
    fn numeric_tokens() {
        for ok in ["0", "-1.5", "+2", ".5", "5.", "1e-3", "-2.5E+4"] {
            assert!(is_numeric_token(ok), "{ok}");
        }
        for bad in ["", "nan", "inf", "a1", "1.2.3", "e5", "1e", "-"] {
            assert!(!is_numeric_token(bad), "{bad}");
        }
    }

    #[test]
    fn constant_column_profile() {
        let p = profile_column(0, &["5", "5", "5", "5"]);
        assert_eq!(p.distinct_fraction, 0.25);
        assert_eq!(p.max_run_length, 4);
    }

    #[test]
    fn timestamp_increments_are_exact() {
        let p = profile_column(0, &["0", "15", "31", "46", "62"]);
        let stats = p.increment_stats.unwrap();
        assert_eq!(stats.deltas, vec![15.0, 16.0]);
        assert_eq!(stats.monotonicity, Monotonicity::StrictlyIncreasing);
    }

    #[test]
    fn decimal_increments_do_not_pick_up_float_error() {
        let p = profile_column(0, &["0.1", "0.2", "0.3", "0.4"]);
        let stats = p.increment_stats.unwrap();
        assert_eq!(stats.distinct_deltas, 1);
    }

    #[test]
    fn non_numeric_column_has_no_increments() {
        let p = profile_column(2, &["walk", "walk", "run"]);
        assert!(!p.is_numeric);
        assert!(p.increment_stats.is_none());
        assert_eq!(p.max_run_length, 2);
    }

    #[test]
    fn stuck_run_found_by_profile() {
        // Oracle: a direct scan over the generated column.
        let mut rng = crate::rng::SplitMix64::new(11);
        let mut column: Vec<String> = (0..200)
            .map(|i| format!("{}.{:03}", i % 7, rng.below(1000)))
            .collect();
        for v in column.iter_mut().skip(80).take(37) {
            *v = "0.042".to_string();
        }
        let refs: Vec<&str> = column.iter().map(String::as_str).collect();
        let mut oracle = 0;
        for start in 0..refs.len() {
            let mut len = 1;
            while start + len < refs.len() && refs[start + len] == refs[start] {
                len += 1;
            }
            oracle = oracle.max(len);
        }
        assert_eq!(oracle, 37);
        assert_eq!(profile_column(0, &refs).max_run_length, oracle);
    }
}
