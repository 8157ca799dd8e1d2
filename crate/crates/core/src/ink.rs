//! Digital ink primitives: strokes, drawings, NDJSON interchange, and the
//! preprocessing pipeline (unit-height normalization, temporal and spatial
//! resampling, augmentation, curve parameterization, padded batching).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default temporal resampling step.
pub const RESAMPLE_STEP_MS: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    /// Milliseconds since an arbitrary origin.
    pub t: Option<f64>,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, t: None }
    }

    pub fn timed(x: f64, y: f64, t: f64) -> Self {
        Self { x, y, t: Some(t) }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// An ordered polyline between pen-down and pen-up.
#[derive(Clone, Debug, PartialEq)]
pub struct Stroke {
    points: Vec<Point>,
}

impl Stroke {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("stroke must contain at least one point".into()));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::NonFinite("stroke coordinates".into()));
        }
        let timed = points[0].t.is_some();
        if points.iter().any(|p| p.t.is_some() != timed) {
            return Err(Error::InvalidInput(
                "timestamps must be present on all points of a stroke or on none".into(),
            ));
        }
        if timed {
            let decreasing = points
                .windows(2)
                .any(|w| w[1].t.unwrap_or(0.0) < w[0].t.unwrap_or(0.0));
            if decreasing {
                return Err(Error::InvalidInput("timestamps must be non-decreasing".into()));
            }
        }
        Ok(Self { points })
    }

    pub fn from_xy(xy: &[[f64; 2]]) -> Result<Self> {
        Self::new(xy.iter().map(|p| Point::new(p[0], p[1])).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_timestamps(&self) -> bool {
        self.points[0].t.is_some()
    }

    /// First point of the stroke, used as its start position.
    pub fn start(&self) -> [f64; 2] {
        self.points[0].xy()
    }

    pub fn xy(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(Point::xy).collect()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| Point { x: p.x + dx, y: p.y + dy, t: p.t })
                .collect(),
        }
    }

    fn map_xy(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| {
                    let (x, y) = f(p.x, p.y);
                    Point { x, y, t: p.t }
                })
                .collect(),
        }
    }
}

/// An unordered collection of strokes. Start positions are always derived
/// from the strokes themselves, so they can never disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct Drawing {
    strokes: Vec<Stroke>,
}

impl Drawing {
    pub fn new(strokes: Vec<Stroke>) -> Result<Self> {
        if strokes.is_empty() {
            return Err(Error::InvalidInput("drawing must contain at least one stroke".into()));
        }
        Ok(Self { strokes })
    }

    pub fn strokes(&self) -> &[Stroke] {
        &self.strokes
    }

    pub fn into_strokes(self) -> Vec<Stroke> {
        self.strokes
    }

    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    pub fn start_positions(&self) -> Vec<[f64; 2]> {
        self.strokes.iter().map(Stroke::start).collect()
    }

    /// `(min_x, min_y, max_x, max_y)` over every point.
    pub fn bounding_box(&self) -> [f64; 4] {
        bounding_box(self.strokes.iter().flat_map(|s| s.points.iter()))
    }

    fn map_xy(&self, f: impl Fn(f64, f64) -> (f64, f64) + Copy) -> Self {
        Self { strokes: self.strokes.iter().map(|s| s.map_xy(f)).collect() }
    }
}

pub(crate) fn bounding_box<'a>(points: impl Iterator<Item = &'a Point>) -> [f64; 4] {
    let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in points {
        bb[0] = bb[0].min(p.x);
        bb[1] = bb[1].min(p.y);
        bb[2] = bb[2].max(p.x);
        bb[3] = bb[3].max(p.y);
    }
    bb
}

// ---------------------------------------------------------------------------
// NDJSON interchange

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InkFormat {
    /// One `{"strokes": [[[x,y(,t)],...],...]}` object per line.
    Ndjson,
}

#[derive(Serialize, Deserialize)]
struct DrawingRecord {
    strokes: Vec<Vec<Vec<f64>>>,
}

pub fn load_drawings(path: impl AsRef<Path>, format: InkFormat) -> Result<Vec<Drawing>> {
    let file = std::fs::File::open(path)?;
    match format {
        InkFormat::Ndjson => read_drawings(BufReader::new(file)),
    }
}

pub fn read_drawings(reader: impl BufRead) -> Result<Vec<Drawing>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_drawing_line(&line, line_no)?);
    }
    Ok(out)
}

pub fn parse_drawing_line(line: &str, line_no: usize) -> Result<Drawing> {
    let record: DrawingRecord = serde_json::from_str(line)
        .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
    drawing_from_arrays(record.strokes, line_no)
}

/// Builds a drawing from nested `[[[x, y(, t)], ...], ...]` arrays.
pub fn drawing_from_arrays(strokes: Vec<Vec<Vec<f64>>>, line_no: usize) -> Result<Drawing> {
    if strokes.is_empty() {
        return Err(Error::Parse { line: line_no, message: "drawing has no strokes".into() });
    }
    let mut out = Vec::with_capacity(strokes.len());
    for (k, raw) in strokes.into_iter().enumerate() {
        if raw.is_empty() {
            return Err(Error::EmptyStroke { line: line_no, stroke: k });
        }
        let mut points = Vec::with_capacity(raw.len());
        for p in raw {
            let point = match p.as_slice() {
                [x, y] => Point::new(*x, *y),
                [x, y, t] => Point::timed(*x, *y, *t),
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("stroke {k}: point must be [x, y] or [x, y, t], got {} values", p.len()),
                    })
                }
            };
            points.push(point);
        }
        let stroke = Stroke::new(points).map_err(|e| Error::Parse {
            line: line_no,
            message: format!("stroke {k}: {e}"),
        })?;
        out.push(stroke);
    }
    Drawing::new(out)
}

pub fn drawing_to_arrays(d: &Drawing) -> Vec<Vec<Vec<f64>>> {
    d.strokes
        .iter()
        .map(|s| {
            s.points
                .iter()
                .map(|p| match p.t {
                    Some(t) => vec![p.x, p.y, t],
                    None => vec![p.x, p.y],
                })
                .collect()
        })
        .collect()
}

pub fn drawing_to_json_line(d: &Drawing) -> String {
    serde_json::to_string(&DrawingRecord { strokes: drawing_to_arrays(d) })
        .expect("drawing record serializes")
}

pub fn write_drawings(mut writer: impl Write, drawings: &[Drawing]) -> Result<()> {
    for d in drawings {
        writeln!(writer, "{}", drawing_to_json_line(d))?;
    }
    Ok(())
}

pub fn save_drawings(path: impl AsRef<Path>, drawings: &[Drawing]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_drawings(&mut w, drawings)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Scales the drawing uniformly so that its bounding box has unit height.
/// Zero-height drawings fall back to unit width; zero-extent drawings are
/// returned unchanged.
pub fn normalize_drawing(d: &Drawing) -> Drawing {
    let [x0, y0, x1, y1] = d.bounding_box();
    let height = y1 - y0;
    let width = x1 - x0;
    let extent = if height > 0.0 {
        height
    } else if width > 0.0 {
        width
    } else {
        return d.clone();
    };
    let s = 1.0 / extent;
    d.map_xy(|x, y| (x * s, y * s))
}

/// Resamples a timed stroke on a regular time grid `t0, t0 + step, ...`
/// with linear interpolation. The last input point is always kept.
pub fn resample_stroke(s: &Stroke, step_ms: f64) -> Result<Stroke> {
    if !s.has_timestamps() {
        return Err(Error::MissingTimestamps);
    }
    if !(step_ms > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {step_ms}")));
    }
    let pts = &s.points;
    if pts.len() == 1 {
        return Ok(s.clone());
    }
    let time = |i: usize| pts[i].t.unwrap_or_default();
    let t0 = time(0);
    let t_end = time(pts.len() - 1);
    let mut out = vec![pts[0]];
    let mut seg = 0;
    let mut k = 1usize;
    loop {
        let g = t0 + k as f64 * step_ms;
        if g >= t_end - 1e-9 {
            break;
        }
        while seg + 1 < pts.len() - 1 && time(seg + 1) < g {
            seg += 1;
        }
        let (a, b) = (pts[seg], pts[seg + 1]);
        let (ta, tb) = (time(seg), time(seg + 1));
        let w = if tb > ta { (g - ta) / (tb - ta) } else { 1.0 };
        out.push(Point::timed(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y), g));
        k += 1;
    }
    out.push(pts[pts.len() - 1]);
    Ok(Stroke { points: out })
}

/// Resamples a stroke to `n` points equally spaced in cumulative arc
/// length. Endpoints are kept exactly.
pub fn spatial_resample(s: &Stroke, n: usize) -> Result<Stroke> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("spatial_resample needs n >= 2, got {n}")));
    }
    let pts = &s.points;
    if pts.len() < 2 {
        return Err(Error::InvalidInput("spatial_resample needs a stroke of at least 2 points".into()));
    }
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
        cum.push(cum.last().copied().unwrap_or(0.0) + d);
    }
    let total = *cum.last().unwrap_or(&0.0);
    let last = pts[pts.len() - 1];
    let mut out = Vec::with_capacity(n);
    out.push(pts[0]);
    let mut seg = 0;
    for k in 1..n - 1 {
        if total == 0.0 {
            out.push(pts[0]);
            continue;
        }
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 1 < pts.len() - 1 && cum[seg + 1] < target {
            seg += 1;
        }
        let (a, b) = (pts[seg], pts[seg + 1]);
        let len = cum[seg + 1] - cum[seg];
        let w = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
        let t = match (a.t, b.t) {
            (Some(ta), Some(tb)) => Some(ta + w * (tb - ta)),
            _ => None,
        };
        out.push(Point { x: a.x + w * (b.x - a.x), y: a.y + w * (b.y - a.y), t });
    }
    out.push(last);
    Ok(Stroke { points: out })
}

/// Point on the stroke's piecewise-linear interpolant, with point `i`
/// mapped to `t = i / (T - 1)`.
pub fn curve_point(s: &Stroke, t: f64) -> Result<[f64; 2]> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::CurveParameter(t));
    }
    let pts = &s.points;
    let n = pts.len();
    if n == 1 {
        return Ok(pts[0].xy());
    }
    let u = t * (n - 1) as f64;
    let nearest = u.round();
    if (u - nearest).abs() < 1e-9 {
        return Ok(pts[nearest as usize].xy());
    }
    let i = (u.floor() as usize).min(n - 2);
    let w = u - i as f64;
    let (a, b) = (pts[i], pts[i + 1]);
    Ok([a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)])
}

// ---------------------------------------------------------------------------
// Augmentation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Maximum absolute rotation, radians.
    pub rotation_range: f64,
    pub scale_range: [f64; 2],
    pub shear_range: [f64; 2],
    /// Probability with which each transform is applied.
    pub probability: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation_range: std::f64::consts::FRAC_PI_2,
            scale_range: [0.5, 2.5],
            shear_range: [-0.3, 0.3],
            probability: 0.3,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::InvalidInput("augmentation probability must be in [0, 1]".into()));
        }
        if !(self.scale_range[0] > 0.0 && self.scale_range[0] <= self.scale_range[1]) {
            return Err(Error::InvalidInput("scale range must be positive and ordered".into()));
        }
        if self.shear_range[0] > self.shear_range[1] || self.rotation_range < 0.0 {
            return Err(Error::InvalidInput("invalid rotation or shear range".into()));
        }
        Ok(())
    }
}

/// Concrete transforms chosen for one augmentation draw.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AugmentPlan {
    pub rotation: Option<f64>,
    pub scale: Option<f64>,
    pub shear: Option<f64>,
}

pub fn sample_augmentation<R: Rng + ?Sized>(p: &AugmentParams, rng: &mut R) -> AugmentPlan {
    let mut plan = AugmentPlan::default();
    if rng.random::<f64>() < p.probability {
        plan.rotation = Some(rng.random_range(-p.rotation_range..=p.rotation_range));
    }
    if rng.random::<f64>() < p.probability {
        plan.scale = Some(rng.random_range(p.scale_range[0]..=p.scale_range[1]));
    }
    if rng.random::<f64>() < p.probability {
        plan.shear = Some(rng.random_range(p.shear_range[0]..=p.shear_range[1]));
    }
    plan
}

/// Applies rotation, then scaling, then horizontal shear, about the origin.
pub fn apply_augmentation(d: &Drawing, plan: &AugmentPlan) -> Drawing {
    let mut out = d.clone();
    if let Some(a) = plan.rotation {
        let (s, c) = a.sin_cos();
        out = out.map_xy(|x, y| (c * x - s * y, s * x + c * y));
    }
    if let Some(k) = plan.scale {
        out = out.map_xy(|x, y| (k * x, k * y));
    }
    if let Some(h) = plan.shear {
        out = out.map_xy(|x, y| (x + h * y, y));
    }
    out
}

pub fn augment_drawing<R: Rng + ?Sized>(d: &Drawing, p: &AugmentParams, rng: &mut R) -> Drawing {
    let plan = sample_augmentation(p, rng);
    apply_augmentation(d, &plan)
}

// ---------------------------------------------------------------------------
// Batching

/// Rectangular `(x, y)` batch with a validity mask, row-major by stroke.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub width: usize,
    pub points: Vec<[f64; 2]>,
    pub mask: Vec<bool>,
}

impl PaddedBatch {
    pub fn rows(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.mask.len() / self.width
        }
    }

    pub fn mask_row(&self, i: usize) -> &[bool] {
        &self.mask[i * self.width..(i + 1) * self.width]
    }

    pub fn row(&self, i: usize) -> &[[f64; 2]] {
        &self.points[i * self.width..(i + 1) * self.width]
    }

    pub fn lengths(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|i| self.mask_row(i).iter().filter(|&&m| m).count())
            .collect()
    }
}

/// Pads strokes into a rectangular batch; strokes longer than `max_len` are
/// spatially resampled down to `max_len` points.
pub fn make_batch(strokes: &[&Stroke], max_len: usize) -> Result<PaddedBatch> {
    if max_len < 2 {
        return Err(Error::InvalidInput("max_len must be at least 2".into()));
    }
    let fitted: Vec<Vec<[f64; 2]>> = strokes
        .iter()
        .map(|s| {
            if s.len() > max_len {
                spatial_resample(s, max_len).map(|r| r.xy())
            } else {
                Ok(s.xy())
            }
        })
        .collect::<Result<_>>()?;
    let width = fitted.iter().map(Vec::len).max().unwrap_or(0);
    let mut points = Vec::with_capacity(width * fitted.len());
    let mut mask = Vec::with_capacity(width * fitted.len());
    for s in &fitted {
        for j in 0..width {
            match s.get(j) {
                Some(p) => {
                    points.push(*p);
                    mask.push(true);
                }
                None => {
                    points.push([0.0, 0.0]);
                    mask.push(false);
                }
            }
        }
    }
    Ok(PaddedBatch { width, points, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stroke(xy: &[[f64; 2]]) -> Stroke {
        Stroke::from_xy(xy).unwrap()
    }

    #[test]
    fn parse_single_stroke() {
        let d = read_drawings(r#"{"strokes": [[[0, 0], [1, 2]]]}"#.as_bytes()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].len(), 1);
        assert_eq!(d[0].strokes()[0].len(), 2);
        assert_eq!(d[0].start_positions(), vec![[0.0, 0.0]]);
    }

    #[test]
    fn parse_empty_input() {
        assert!(read_drawings("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn empty_stroke_is_rejected() {
        let err = read_drawings(r#"{"strokes": [[]]}"#.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("empty stroke at line 1"), "{err}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let input = "{\"strokes\": [[[0,0]]]}\n{not json}\n";
        match read_drawings(input.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn timed_points_parse() {
        let d = read_drawings(r#"{"strokes": [[[0, 0, 0], [1, 0, 20]]]}"#.as_bytes()).unwrap();
        assert!(d[0].strokes()[0].has_timestamps());
    }

    #[test]
    fn normalize_halves_height_two() {
        let d = Drawing::new(vec![stroke(&[[0.0, 0.0], [1.0, 2.0]])]).unwrap();
        let n = normalize_drawing(&d);
        assert_eq!(n.strokes()[0].xy(), vec![[0.0, 0.0], [0.5, 1.0]]);
    }

    #[test]
    fn normalize_unit_height_is_identity() {
        let d = Drawing::new(vec![stroke(&[[0.3, 0.0], [1.7, 1.0]])]).unwrap();
        let n = normalize_drawing(&d);
        for (a, b) in n.strokes()[0].xy().iter().zip(d.strokes()[0].xy()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_horizontal_line_uses_width() {
        let d = Drawing::new(vec![stroke(&[[1.0, 3.0], [5.0, 3.0]])]).unwrap();
        let n = normalize_drawing(&d);
        // independent min/max scan
        let xs: Vec<f64> = n.strokes()[0].points().iter().map(|p| p.x).collect();
        let width = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
        assert!((width - 1.0).abs() < 1e-12);
        assert_eq!(n.strokes()[0].xy(), vec![[0.25, 0.75], [1.25, 0.75]]);
    }

    #[test]
    fn normalize_zero_extent_passthrough() {
        let d = Drawing::new(vec![stroke(&[[2.0, 2.0]]), stroke(&[[2.0, 2.0], [2.0, 2.0]])]).unwrap();
        assert_eq!(normalize_drawing(&d), d);
    }

    #[test]
    fn resample_on_grid_is_unchanged() {
        let s = Stroke::new(vec![Point::timed(0.0, 0.0, 0.0), Point::timed(1.0, 1.0, 20.0)]).unwrap();
        assert_eq!(resample_stroke(&s, 20.0).unwrap(), s);
    }

    #[test]
    fn resample_interpolates_between_samples() {
        let s = Stroke::new(vec![
            Point::timed(0.0, 0.0, 0.0),
            Point::timed(2.0, 0.0, 10.0),
            Point::timed(8.0, 0.0, 40.0),
        ])
        .unwrap();
        let r = resample_stroke(&s, 20.0).unwrap();
        // piecewise-linear oracle: x(20) = 2 + 6 * (20 - 10) / 30
        let oracle = 2.0 + 6.0 * (20.0 - 10.0) / 30.0;
        let got: Vec<_> = r.points().iter().map(|p| (p.x, p.y, p.t.unwrap())).collect();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0], (0.0, 0.0, 0.0));
        assert!((got[1].0 - oracle).abs() < 1e-12 && got[1].2 == 20.0);
        assert_eq!(got[2], (8.0, 0.0, 40.0));
    }

    #[test]
    fn resample_single_point() {
        let s = Stroke::new(vec![Point::timed(1.0, 2.0, 5.0)]).unwrap();
        assert_eq!(resample_stroke(&s, 20.0).unwrap(), s);
    }

    #[test]
    fn resample_requires_timestamps() {
        assert!(matches!(
            resample_stroke(&stroke(&[[0.0, 0.0], [1.0, 0.0]]), 20.0),
            Err(Error::MissingTimestamps)
        ));
    }

    #[test]
    fn spatial_resample_straight_segment() {
        let r = spatial_resample(&stroke(&[[0.0, 0.0], [1.0, 0.0]]), 3).unwrap();
        assert_eq!(r.xy(), vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]);
        let r2 = spatial_resample(&stroke(&[[0.0, 0.0], [0.2, 0.1], [1.0, 0.0]]), 2).unwrap();
        assert_eq!(r2.xy(), vec![[0.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn spatial_resample_l_shape_matches_dense_oracle() {
        let s = stroke(&[[0.0, 0.0], [2.0, 0.0], [2.0, 1.0]]);
        let r = spatial_resample(&s, 5).unwrap();
        // dense-sampling oracle: walk the polyline in tiny steps, record the
        // positions where the accumulated length crosses each quarter.
        let total = 3.0;
        let steps = 300_000;
        let mut expected = vec![[0.0, 0.0]];
        let mut next = 1;
        for i in 1..=steps {
            let arc = total * i as f64 / steps as f64;
            let p = if arc <= 2.0 { [arc, 0.0] } else { [2.0, arc - 2.0] };
            if next < 4 && arc >= total * next as f64 / 4.0 - 1e-12 {
                expected.push(p);
                next += 1;
            }
        }
        expected.push([2.0, 1.0]);
        for (a, b) in r.xy().iter().zip(&expected) {
            assert!((a[0] - b[0]).abs() < 1e-4 && (a[1] - b[1]).abs() < 1e-4, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn spatial_resample_rejects_short_input() {
        assert!(spatial_resample(&stroke(&[[0.0, 0.0]]), 4).is_err());
        assert!(spatial_resample(&stroke(&[[0.0, 0.0], [1.0, 1.0]]), 1).is_err());
    }

    #[test]
    fn curve_point_examples() {
        let s = stroke(&[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(curve_point(&s, 0.5).unwrap(), [0.5, 0.0]);
        let s3 = stroke(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        assert_eq!(curve_point(&s3, 1.0).unwrap(), [1.0, 1.0]);
        // index normalization: t = 0.75 -> u = 1.5 -> halfway between points 1 and 2
        assert_eq!(curve_point(&s3, 0.75).unwrap(), [1.0, 0.5]);
        assert_eq!(curve_point(&stroke(&[[3.0, 4.0]]), 0.7).unwrap(), [3.0, 4.0]);
        assert!(matches!(curve_point(&s3, 1.5), Err(Error::CurveParameter(_))));
        assert!(curve_point(&s3, -0.1).is_err());
    }

    #[test]
    fn augment_identity_when_probability_zero() {
        let d = Drawing::new(vec![stroke(&[[0.1, 0.2], [0.4, 0.9]])]).unwrap();
        let p = AugmentParams { probability: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(augment_drawing(&d, &p, &mut rng), d);
    }

    #[test]
    fn augment_scale_only_doubles() {
        let d = Drawing::new(vec![stroke(&[[0.1, 0.2], [0.4, 0.9]])]).unwrap();
        let out = apply_augmentation(&d, &AugmentPlan { scale: Some(2.0), ..Default::default() });
        assert_eq!(out.strokes()[0].xy(), vec![[0.2, 0.4], [0.8, 1.8]]);
        assert_eq!(out.start_positions(), vec![[0.2, 0.4]]);
    }

    #[test]
    fn augment_quarter_turn_rotation() {
        let d = Drawing::new(vec![stroke(&[[1.0, 0.0], [0.5, 2.0]])]).unwrap();
        let plan = AugmentPlan { rotation: Some(std::f64::consts::FRAC_PI_2), ..Default::default() };
        let out = apply_augmentation(&d, &plan);
        for (a, b) in out.strokes()[0].xy().iter().zip(d.strokes()[0].xy()) {
            assert!((a[0] + b[1]).abs() < 1e-12 && (a[1] - b[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn augment_always_applies_all_in_range() {
        let p = AugmentParams { probability: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let plan = sample_augmentation(&p, &mut rng);
            let r = plan.rotation.unwrap();
            let s = plan.scale.unwrap();
            let h = plan.shear.unwrap();
            assert!(r.abs() <= std::f64::consts::FRAC_PI_2);
            assert!((0.5..=2.5).contains(&s));
            assert!((-0.3..=0.3).contains(&h));
        }
    }

    #[test]
    fn batch_masks() {
        let a = stroke(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let b = stroke(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]]);
        let batch = make_batch(&[&a, &b], 5).unwrap();
        assert_eq!(batch.mask_row(0), &[true, true, true, false, false]);
        assert_eq!(batch.mask_row(1), &[true; 5]);
        let same = make_batch(&[&a, &a], 5).unwrap();
        assert!(same.mask.iter().all(|&m| m));
    }

    #[test]
    fn batch_resamples_long_strokes() {
        let long: Vec<[f64; 2]> = (0..300).map(|i| [i as f64 * 0.01, (i as f64 * 0.05).sin()]).collect();
        let s = stroke(&long);
        let batch = make_batch(&[&s], 200).unwrap();
        assert_eq!(batch.width, 200);
        assert!(batch.mask.iter().all(|&m| m));
        let oracle = spatial_resample(&s, 200).unwrap().xy();
        assert_eq!(batch.row(0), oracle.as_slice());
    }

    fn arb_stroke() -> impl Strategy<Value = Stroke> {
        prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20)
            .prop_map(|v| Stroke::from_xy(&v.iter().map(|&(x, y)| [x, y]).collect::<Vec<_>>()).unwrap())
    }

    fn arb_drawing() -> impl Strategy<Value = Drawing> {
        prop::collection::vec(arb_stroke(), 1..6).prop_map(|s| Drawing::new(s).unwrap())
    }

    proptest! {
        #[test]
        fn normalized_height_is_one(d in arb_drawing()) {
            let [_, y0, _, y1] = d.bounding_box();
            prop_assume!(y1 - y0 > 1e-6);
            let [_, ny0, _, ny1] = normalize_drawing(&d).bounding_box();
            prop_assert!(((ny1 - ny0) - 1.0).abs() < 1e-9);
        }

        #[test]
        fn curve_point_hits_every_vertex(s in arb_stroke()) {
            let n = s.len();
            for i in 0..n {
                let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                prop_assert_eq!(curve_point(&s, t).unwrap(), s.points()[i].xy());
            }
        }

        #[test]
        fn resample_keeps_endpoints(
            deltas in prop::collection::vec((0.0f64..45.0, -1.0f64..1.0, -1.0f64..1.0), 1..30),
            t0 in 0.0f64..1000.0,
        ) {
            let mut t = t0;
            let mut pts = vec![Point::timed(0.0, 0.0, t)];
            for (dt, x, y) in deltas {
                t += dt;
                pts.push(Point::timed(x, y, t));
            }
            let s = Stroke::new(pts).unwrap();
            let r = resample_stroke(&s, 20.0).unwrap();
            let (a, b) = (s.points()[0], r.points()[0]);
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            let (a, b) = (s.points()[s.len() - 1], r.points()[r.len() - 1]);
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }

        #[test]
        fn ndjson_round_trip(d in arb_drawing()) {
            let line = drawing_to_json_line(&d);
            let back = parse_drawing_line(&line, 1).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
