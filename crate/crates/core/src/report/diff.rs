use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    /// Matches the ground truth.
    Green,
    /// Differs from the ground truth, or marks a missing cell (empty text).
    Red,
    /// Beyond the ground truth: surplus cells or extra output lines.
    Purple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Cell,
    Char,
}

impl Granularity {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cell" => Some(Granularity::Cell),
            "char" => Some(Granularity::Char),
            _ => None,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Cell => "cell",
            Granularity::Char => "char",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    pub color: Color,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowDiff {
    pub segments: Vec<Segment>,
    pub gt_row: String,
    pub gen_row: String,
    pub granularity: Granularity,
}

impl RowDiff {
    pub fn is_all_green(&self) -> bool {
        self.segments.iter().all(|s| s.color == Color::Green)
    }

    /// Green and red text in order; equals the scored part of the generated row.
    pub fn scored_text(&self) -> String {
        self.segments
            .iter()
            .filter(|s| s.color != Color::Purple)
            .map(|s| s.text.as_str())
            .collect()
    }
}

fn push(segments: &mut Vec<Segment>, text: &str, color: Color) {
    match segments.last_mut() {
        Some(last) if last.color == color && !text.is_empty() && !last.text.is_empty() => {
            last.text.push_str(text)
        }
        _ => segments.push(Segment {
            text: text.to_string(),
            color,
        }),
    }
}

fn cell_segments(gt: &str, gen: &str, delimiter: char) -> Vec<Segment> {
    let gt_cells: Vec<&str> = gt.split(delimiter).collect();
    let gen_cells: Vec<&str> = gen.split(delimiter).collect();
    let mut segments = Vec::with_capacity(gen_cells.len());
    for (k, cell) in gen_cells.iter().enumerate() {
        let text = if k == 0 {
            cell.to_string()
        } else {
            format!("{delimiter}{cell}")
        };
        let color = match gt_cells.get(k) {
            Some(expected) if expected == cell => Color::Green,
            Some(_) => Color::Red,
            None => Color::Purple,
        };
        // Cells stay separate so each value is coloured on its own.
        segments.push(Segment { text, color });
    }
    for _ in gen_cells.len()..gt_cells.len() {
        segments.push(Segment {
            text: String::new(),
            color: Color::Red,
        });
    }
    segments
}

fn char_segments(gt: &str, gen: &str) -> Vec<Segment> {
    let gt_chars: Vec<char> = gt.chars().collect();
    let mut segments = Vec::new();
    let mut buf = [0u8; 4];
    let mut gen_len = 0;
    for (k, c) in gen.chars().enumerate() {
        gen_len += 1;
        let color = match gt_chars.get(k) {
            Some(&expected) if expected == c => Color::Green,
            Some(_) => Color::Red,
            None => Color::Purple,
        };
        push(&mut segments, c.encode_utf8(&mut buf), color);
    }
    if gen_len < gt_chars.len() {
        segments.push(Segment {
            text: String::new(),
            color: Color::Red,
        });
    }
    segments
}

/// Positional comparison of a generated row against the ground truth.
///
/// Cell granularity splits both rows on `delimiter` (exactly, so the split is
/// lossless) and colours each generated cell; missing trailing cells appear as
/// empty red segments. Extra output lines follow as purple segments, each
/// starting with a newline.
pub fn diff_row_with(
    gt: &str,
    gen: &str,
    extra: &[String],
    delimiter: char,
    granularity: Granularity,
) -> RowDiff {
    let mut segments = match granularity {
        Granularity::Cell => cell_segments(gt, gen, delimiter),
        Granularity::Char => char_segments(gt, gen),
    };
    for line in extra {
        segments.push(Segment {
            text: format!("\n{line}"),
            color: Color::Purple,
        });
    }
    RowDiff {
        segments,
        gt_row: gt.to_string(),
        gen_row: gen.to_string(),
        granularity,
    }
}

pub fn diff_row(gt: &str, gen: &str, extra: &[String], delimiter: char) -> RowDiff {
    diff_row_with(gt, gen, extra, delimiter, Granularity::Cell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn colors(d: &RowDiff) -> Vec<Color> {
        d.segments.iter().map(|s| s.color).collect()
    }

    #[test]
    fn identical_rows_are_green() {
        let d = diff_row("1,2,3", "1,2,3", &[], ',');
        assert_eq!(colors(&d), vec![Color::Green; 3]);
        assert!(d.is_all_green());
    }

    #[test]
    fn mixed_row() {
        let d = diff_row("1,2,3", "1,9,3,4", &[], ',');
        assert_eq!(
            colors(&d),
            vec![Color::Green, Color::Red, Color::Green, Color::Purple]
        );
        assert_eq!(d.scored_text(), "1,9,3");
    }

    #[test]
    fn extra_lines_are_purple() {
        let d = diff_row("1,2", "1,2", &["7,8".to_string()], ',');
        assert_eq!(colors(&d), vec![Color::Green, Color::Green, Color::Purple]);
        assert_eq!(d.segments[2].text, "\n7,8");
        assert!(!d.is_all_green());
    }

    #[test]
    fn short_generation_marks_missing_cells() {
        let d = diff_row("1,2,3", "1,2", &[], ',');
        assert_eq!(colors(&d), vec![Color::Green, Color::Green, Color::Red]);
        assert_eq!(d.scored_text(), "1,2");
    }

    #[test]
    fn char_granularity_merges_runs() {
        let d = diff_row_with("0 1.25", "0 1.2599", &[], ' ', Granularity::Char);
        assert_eq!(
            d.segments,
            vec![
                Segment { text: "0 1.25".into(), color: Color::Green },
                Segment { text: "99".into(), color: Color::Purple },
            ]
        );
    }

    proptest! {
        #[test]
        fn all_green_iff_equal(gt in "[0-9,.]{0,10}", gen in "[0-9,.]{0,10}", cell in any::<bool>()) {
            let g = if cell { Granularity::Cell } else { Granularity::Char };
            let d = diff_row_with(&gt, &gen, &[], ',', g);
            prop_assert_eq!(d.is_all_green(), gt == gen);
            let prefix: String = if cell {
                let n = gt.split(',').count();
                gen.split(',').take(n).collect::<Vec<_>>().join(",")
            } else {
                gen.chars().take(gt.chars().count()).collect()
            };
            prop_assert_eq!(d.scored_text(), prefix);
        }
    }
}
