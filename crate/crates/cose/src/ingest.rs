//! Converters from public ink corpora to the NDJSON interchange schema.
//!
//! Both sources store one JSON object per line with a `"drawing"` key
//! holding strokes as parallel coordinate arrays: `[[x...], [y...], [t...]]`.
//! DiDi always carries timestamps; QuickDraw's simplified files do not.

use std::io::BufRead;

use clap::ValueEnum;
use serde::Deserialize;

use cose_core::ink::{normalize_drawing, resample_stroke, Drawing, Point, Stroke};
use cose_core::{Error, Result};

/// Resampling step for timestamped strokes, in milliseconds.
pub const STEP_MS: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SourceFormat {
    Didi,
    Quickdraw,
}

#[derive(Deserialize)]
struct SourceRecord {
    drawing: Vec<Vec<Vec<f64>>>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn stroke_from_columns(cols: &[Vec<f64>], format: SourceFormat, line: usize, k: usize) -> Result<Stroke> {
    let (xs, ys, ts) = match (cols, format) {
        ([xs, ys, ts], _) => (xs, ys, Some(ts)),
        ([xs, ys], SourceFormat::Quickdraw) => (xs, ys, None),
        _ => {
            let want = if format == SourceFormat::Didi { "3 arrays [x, y, t]" } else { "2 or 3 arrays" };
            return Err(parse_err(line, format!("stroke {k}: expected {want}, got {}", cols.len())));
        }
    };
    if xs.len() != ys.len() || ts.is_some_and(|t| t.len() != xs.len()) {
        return Err(parse_err(line, format!("stroke {k}: coordinate arrays differ in length")));
    }
    if xs.is_empty() {
        return Err(Error::EmptyStroke { line, stroke: k });
    }
    let points = (0..xs.len())
        .map(|i| match ts {
            Some(t) => Point::timed(xs[i], ys[i], t[i]),
            None => Point::new(xs[i], ys[i]),
        })
        .collect();
    Stroke::new(points).map_err(|e| parse_err(line, format!("stroke {k}: {e}")))
}

/// Parses one source line into a drawing with strokes as stored.
pub fn parse_source_line(text: &str, line: usize, format: SourceFormat) -> Result<Drawing> {
    let record: SourceRecord = serde_json::from_str(text).map_err(|e| parse_err(line, e.to_string()))?;
    if record.drawing.is_empty() {
        return Err(parse_err(line, "drawing has no strokes"));
    }
    let strokes = record
        .drawing
        .iter()
        .enumerate()
        .map(|(k, cols)| stroke_from_columns(cols, format, line, k))
        .collect::<Result<Vec<_>>>()?;
    Drawing::new(strokes)
}

/// Resamples timestamped strokes on the 20 ms grid and normalizes the
/// drawing to unit height. Strokes without timestamps keep their points.
pub fn preprocess(d: &Drawing) -> Result<Drawing> {
    let strokes = d
        .strokes()
        .iter()
        .map(|s| if s.has_timestamps() { resample_stroke(s, STEP_MS) } else { Ok(s.clone()) })
        .collect::<Result<Vec<_>>>()?;
    Ok(normalize_drawing(&Drawing::new(strokes)?))
}

/// Converts every non-blank line of `reader`.
pub fn convert(reader: impl BufRead, format: SourceFormat) -> Result<Vec<Drawing>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(preprocess(&parse_source_line(&line, i + 1, format)?)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn didi_requires_timestamps() {
        let line = r#"{"drawing": [[[0, 1], [0, 1]]]}"#;
        assert!(parse_source_line(line, 3, SourceFormat::Didi).unwrap_err().to_string().contains("line 3"));
        assert_eq!(parse_source_line(line, 3, SourceFormat::Quickdraw).unwrap().len(), 1);
    }

    #[test]
    fn mismatched_columns_are_rejected() {
        let line = r#"{"drawing": [[[0, 1, 2], [0, 1], [0, 10, 20]]]}"#;
        assert!(parse_source_line(line, 1, SourceFormat::Didi).is_err());
    }

    #[test]
    fn empty_stroke_names_its_index() {
        let line = r#"{"drawing": [[[0], [0], [0]], [[], [], []]]}"#;
        let err = parse_source_line(line, 1, SourceFormat::Didi).unwrap_err();
        assert!(err.to_string().contains("empty stroke at line 1"), "{err}");
        assert!(matches!(err, Error::EmptyStroke { stroke: 1, .. }));
    }
}
