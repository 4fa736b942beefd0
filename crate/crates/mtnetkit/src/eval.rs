//! Benchmark metrics: precision rate, success rate (AUC), normalized
//! precision rate, curves, and attribute-wise aggregation.
//!
//! Conventions, pinned here once:
//!
//! * precision counts frames with Euclidean center error `<= tau` pixels;
//! * success is the mean over the 21 IoU thresholds `{0, 0.05, ..., 1.0}`
//!   of the fraction of frames with IoU strictly greater than the
//!   threshold — evaluating perfect results therefore yields 20/21, not 1;
//! * normalized precision divides the center offset per-axis by the
//!   ground-truth box extents and averages the pass fraction over the 101
//!   thresholds `{0, 0.005, ..., 0.5}` (inclusive comparison);
//! * frames whose ground-truth box has a non-positive extent (including the
//!   all-zero "absent target" marker) are excluded from every metric;
//! * attribute aggregation concatenates frames across sequences rather than
//!   averaging per-sequence scores.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::bbox::{iou_pixel, PixelBox};

/// The attribute vocabulary used by annotation sidecars.
pub const ATTRIBUTES: [&str; 12] = [
    "NO", "PO", "HO", "LI", "LR", "TC", "DEF", "FM", "SV", "MB", "CM", "BC",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    Parse { line: usize, message: String },
    LengthMismatch { gt: usize, pred: usize },
    /// No frames left after excluding absent/degenerate ground truth.
    NoCountedFrames,
    UnknownAttribute(String),
    DuplicateSequence(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::Parse { line, message } => write!(f, "line {line}: {message}"),
            EvalError::LengthMismatch { gt, pred } => {
                write!(f, "ground truth has {gt} frames but results have {pred}")
            }
            EvalError::NoCountedFrames => {
                write!(f, "no evaluable frames (all ground-truth boxes absent or degenerate)")
            }
            EvalError::UnknownAttribute(a) => write!(f, "unknown attribute {a:?}"),
            EvalError::DuplicateSequence(s) => write!(f, "sequence {s:?} listed twice"),
        }
    }
}

impl std::error::Error for EvalError {}

// ---- file parsing ----------------------------------------------------------

/// Parses a box file: one `x,y,w,h` line per frame. Commas, tabs, and
/// spaces are all accepted as separators; blank lines are skipped.
pub fn parse_box_file(text: &str) -> Result<Vec<PixelBox>, EvalError> {
    let mut boxes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c == '\t' || c == ' ')
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(EvalError::Parse {
                line: i + 1,
                message: format!("expected 4 fields (x,y,w,h), got {}", fields.len()),
            });
        }
        let mut vals = [0.0; 4];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f.parse::<f64>().map_err(|_| EvalError::Parse {
                line: i + 1,
                message: format!("field {:?} is not a number", f),
            })?;
            if !vals[k].is_finite() {
                return Err(EvalError::Parse {
                    line: i + 1,
                    message: format!("field {:?} is not finite", f),
                });
            }
        }
        boxes.push(PixelBox::new(vals[0], vals[1], vals[2], vals[3]));
    }
    Ok(boxes)
}

/// Parses an attribute sidecar: `sequence_name attr1,attr2,...` per line.
/// Attribute names must come from [`ATTRIBUTES`]; duplicate sequence names
/// are rejected. A line with just a name carries no attributes.
pub fn parse_attributes(text: &str) -> Result<BTreeMap<String, Vec<String>>, EvalError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (name, rest) = match line.split_once(char::is_whitespace) {
            Some((n, r)) => (n, r.trim()),
            None => (line, ""),
        };
        let mut attrs = Vec::new();
        if !rest.is_empty() {
            for a in rest.split(',') {
                let a = a.trim();
                if a.is_empty() {
                    continue;
                }
                if !ATTRIBUTES.contains(&a) {
                    return Err(EvalError::Parse {
                        line: i + 1,
                        message: format!("unknown attribute {a:?}"),
                    });
                }
                attrs.push(a.to_string());
            }
        }
        if map.insert(name.to_string(), attrs).is_some() {
            return Err(EvalError::DuplicateSequence(name.to_string()));
        }
    }
    Ok(map)
}

// ---- per-sequence evaluation -------------------------------------------------

/// Per-frame quantities for one sequence, absent-ground-truth frames
/// already excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEval {
    pub name: String,
    pub center_errors: Vec<f64>,
    pub norm_errors: Vec<f64>,
    pub ious: Vec<f64>,
    /// Frames dropped because ground truth was absent or degenerate.
    pub excluded: usize,
}

/// Euclidean distance between box centers.
pub fn center_error(gt: &PixelBox, pred: &PixelBox) -> f64 {
    let (gx, gy) = gt.center();
    let (px, py) = pred.center();
    ((gx - px).powi(2) + (gy - py).powi(2)).sqrt()
}

/// Center error with each axis normalized by the ground-truth extents.
pub fn norm_center_error(gt: &PixelBox, pred: &PixelBox) -> f64 {
    let (gx, gy) = gt.center();
    let (px, py) = pred.center();
    (((gx - px) / gt.w).powi(2) + ((gy - py) / gt.h).powi(2)).sqrt()
}

/// Computes all per-frame quantities for a gt/result pair of equal length.
pub fn evaluate_sequence(
    name: &str,
    gt: &[PixelBox],
    pred: &[PixelBox],
) -> Result<SequenceEval, EvalError> {
    if gt.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gt: gt.len(), pred: pred.len() });
    }
    let mut out = SequenceEval {
        name: name.to_string(),
        center_errors: Vec::new(),
        norm_errors: Vec::new(),
        ious: Vec::new(),
        excluded: 0,
    };
    for (g, p) in gt.iter().zip(pred) {
        if !(g.w > 0.0 && g.h > 0.0) {
            out.excluded += 1;
            continue;
        }
        out.center_errors.push(center_error(g, p));
        out.norm_errors.push(norm_center_error(g, p));
        out.ious.push(iou_pixel(g, p));
    }
    if out.center_errors.is_empty() {
        return Err(EvalError::NoCountedFrames);
    }
    Ok(out)
}

// ---- scores ------------------------------------------------------------------

/// Fraction of frames with center error `<= tau` pixels.
pub fn precision_rate(errors: &[f64], tau: f64) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::NoCountedFrames);
    }
    let hits = errors.iter().filter(|&&e| e <= tau).count();
    Ok(hits as f64 / errors.len() as f64)
}

/// Mean over the 21 thresholds `{0, 0.05, ..., 1.0}` of the fraction of
/// frames with IoU strictly above the threshold.
pub fn success_rate(ious: &[f64]) -> Result<f64, EvalError> {
    if ious.is_empty() {
        return Err(EvalError::NoCountedFrames);
    }
    let mut acc = 0.0;
    for i in 0..=20 {
        let t = i as f64 / 20.0;
        let frac = ious.iter().filter(|&&v| v > t).count() as f64 / ious.len() as f64;
        acc += frac;
    }
    Ok(acc / 21.0)
}

/// Mean over the 101 thresholds `{0, 0.005, ..., 0.5}` of the fraction of
/// frames with normalized center error `<= t`.
pub fn normalized_precision_from_errors(norm_errors: &[f64]) -> Result<f64, EvalError> {
    if norm_errors.is_empty() {
        return Err(EvalError::NoCountedFrames);
    }
    let mut acc = 0.0;
    for i in 0..=100 {
        let t = i as f64 / 200.0;
        let frac = norm_errors.iter().filter(|&&e| e <= t).count() as f64 / norm_errors.len() as f64;
        acc += frac;
    }
    Ok(acc / 101.0)
}

/// Normalized precision straight from box lists (excluding degenerate
/// ground-truth frames).
pub fn normalized_precision(gt: &[PixelBox], pred: &[PixelBox]) -> Result<f64, EvalError> {
    if gt.len() != pred.len() {
        return Err(EvalError::LengthMismatch { gt: gt.len(), pred: pred.len() });
    }
    let errors: Vec<f64> = gt
        .iter()
        .zip(pred)
        .filter(|(g, _)| g.w > 0.0 && g.h > 0.0)
        .map(|(g, p)| norm_center_error(g, p))
        .collect();
    normalized_precision_from_errors(&errors)
}

// ---- curves -------------------------------------------------------------------

/// The three standard plots as raw (threshold, fraction) samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveReport {
    /// Center-error thresholds 0..=50 px, step 1.
    pub precision: Vec<(f64, f64)>,
    /// IoU thresholds 0..=1, step 0.05 (strict comparison).
    pub success: Vec<(f64, f64)>,
    /// Normalized-error thresholds 0..=0.5, step 0.005.
    pub norm_precision: Vec<(f64, f64)>,
}

/// Samples all three curves from per-frame quantities.
pub fn curves(center_errors: &[f64], norm_errors: &[f64], ious: &[f64]) -> Result<CurveReport, EvalError> {
    if center_errors.is_empty() || ious.is_empty() || norm_errors.is_empty() {
        return Err(EvalError::NoCountedFrames);
    }
    let n_c = center_errors.len() as f64;
    let n_i = ious.len() as f64;
    let n_n = norm_errors.len() as f64;
    let precision = (0..=50)
        .map(|t| {
            let t = t as f64;
            (t, center_errors.iter().filter(|&&e| e <= t).count() as f64 / n_c)
        })
        .collect();
    let success = (0..=20)
        .map(|i| {
            let t = i as f64 / 20.0;
            (t, ious.iter().filter(|&&v| v > t).count() as f64 / n_i)
        })
        .collect();
    let norm_precision = (0..=100)
        .map(|i| {
            let t = i as f64 / 200.0;
            (t, norm_errors.iter().filter(|&&e| e <= t).count() as f64 / n_n)
        })
        .collect();
    Ok(CurveReport { precision, success, norm_precision })
}

impl CurveReport {
    /// One CSV per curve: `threshold,fraction` rows with a header.
    pub fn to_csv(points: &[(f64, f64)]) -> String {
        let mut out = String::from("threshold,fraction\n");
        for (t, f) in points {
            out.push_str(&format!("{t},{f}\n"));
        }
        out
    }
}

// ---- aggregation ---------------------------------------------------------------

/// Whole-benchmark report, serializable as JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub tau: f64,
    pub overall: Scores,
    pub sequences: Vec<SequenceScores>,
    /// Attribute name -> scores over the concatenated frames of sequences
    /// carrying that attribute. Attributes with no sequences are omitted.
    pub attributes: BTreeMap<String, AttributeScores>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub pr: f64,
    pub sr: f64,
    pub npr: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceScores {
    pub name: String,
    pub frames: usize,
    pub excluded: usize,
    pub pr: f64,
    pub sr: f64,
    pub npr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeScores {
    pub sequences: usize,
    pub frames: usize,
    pub pr: f64,
    pub sr: f64,
}

/// Precision/success over the concatenation of all frames from sequences
/// tagged with `attribute`. Returns `Ok(None)` when no sequence carries the
/// attribute (absent, not zero).
pub fn attribute_aggregate(
    evals: &[SequenceEval],
    tags: &BTreeMap<String, Vec<String>>,
    attribute: &str,
    tau: f64,
) -> Result<Option<(f64, f64)>, EvalError> {
    if !ATTRIBUTES.contains(&attribute) {
        return Err(EvalError::UnknownAttribute(attribute.to_string()));
    }
    let mut errors = Vec::new();
    let mut ious = Vec::new();
    for ev in evals {
        let carries = tags
            .get(&ev.name)
            .map(|attrs| attrs.iter().any(|a| a == attribute))
            .unwrap_or(false);
        if carries {
            errors.extend_from_slice(&ev.center_errors);
            ious.extend_from_slice(&ev.ious);
        }
    }
    if errors.is_empty() {
        return Ok(None);
    }
    Ok(Some((precision_rate(&errors, tau)?, success_rate(&ious)?)))
}

/// Builds the full report for a set of evaluated sequences.
pub fn build_report(
    evals: &[SequenceEval],
    tags: &BTreeMap<String, Vec<String>>,
    tau: f64,
) -> Result<EvalReport, EvalError> {
    if evals.is_empty() {
        return Err(EvalError::NoCountedFrames);
    }
    let mut all_errors = Vec::new();
    let mut all_norm = Vec::new();
    let mut all_ious = Vec::new();
    let mut sequences = Vec::new();
    for ev in evals {
        sequences.push(SequenceScores {
            name: ev.name.clone(),
            frames: ev.center_errors.len(),
            excluded: ev.excluded,
            pr: precision_rate(&ev.center_errors, tau)?,
            sr: success_rate(&ev.ious)?,
            npr: normalized_precision_from_errors(&ev.norm_errors)?,
        });
        all_errors.extend_from_slice(&ev.center_errors);
        all_norm.extend_from_slice(&ev.norm_errors);
        all_ious.extend_from_slice(&ev.ious);
    }
    let overall = Scores {
        pr: precision_rate(&all_errors, tau)?,
        sr: success_rate(&all_ious)?,
        npr: normalized_precision_from_errors(&all_norm)?,
        frames: all_errors.len(),
    };
    let mut attributes = BTreeMap::new();
    for attr in ATTRIBUTES {
        if let Some((pr, sr)) = attribute_aggregate(evals, tags, attr, tau)? {
            let seqs = evals
                .iter()
                .filter(|ev| {
                    tags.get(&ev.name)
                        .map(|a| a.iter().any(|x| x == attr))
                        .unwrap_or(false)
                })
                .collect::<Vec<_>>();
            attributes.insert(
                attr.to_string(),
                AttributeScores {
                    sequences: seqs.len(),
                    frames: seqs.iter().map(|ev| ev.center_errors.len()).sum(),
                    pr,
                    sr,
                },
            );
        }
    }
    Ok(EvalReport { tau, overall, sequences, attributes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_boxes(rng: &mut Rng, n: usize) -> Vec<PixelBox> {
        (0..n)
            .map(|_| {
                PixelBox::new(
                    rng.uniform(0.0, 200.0),
                    rng.uniform(0.0, 200.0),
                    rng.uniform(5.0, 80.0),
                    rng.uniform(5.0, 80.0),
                )
            })
            .collect()
    }

    // Brute-force references, written as plain per-frame loops.
    fn pr_reference(gt: &[PixelBox], pred: &[PixelBox], tau: f64) -> f64 {
        let mut hits = 0;
        let mut counted = 0;
        for (g, p) in gt.iter().zip(pred) {
            if g.w <= 0.0 || g.h <= 0.0 {
                continue;
            }
            counted += 1;
            let dx = (g.x + g.w / 2.0) - (p.x + p.w / 2.0);
            let dy = (g.y + g.h / 2.0) - (p.y + p.h / 2.0);
            if (dx * dx + dy * dy).sqrt() <= tau {
                hits += 1;
            }
        }
        hits as f64 / counted as f64
    }

    fn sr_reference(gt: &[PixelBox], pred: &[PixelBox]) -> f64 {
        let ious: Vec<f64> = gt
            .iter()
            .zip(pred)
            .filter(|(g, _)| g.w > 0.0 && g.h > 0.0)
            .map(|(g, p)| iou_pixel(g, p))
            .collect();
        let mut total = 0.0;
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let mut pass = 0;
            for &v in &ious {
                if v > t {
                    pass += 1;
                }
            }
            total += pass as f64 / ious.len() as f64;
        }
        total / 21.0
    }

    fn npr_reference(gt: &[PixelBox], pred: &[PixelBox]) -> f64 {
        let errs: Vec<f64> = gt
            .iter()
            .zip(pred)
            .filter(|(g, _)| g.w > 0.0 && g.h > 0.0)
            .map(|(g, p)| {
                let dx = ((g.x + g.w / 2.0) - (p.x + p.w / 2.0)) / g.w;
                let dy = ((g.y + g.h / 2.0) - (p.y + p.h / 2.0)) / g.h;
                (dx * dx + dy * dy).sqrt()
            })
            .collect();
        let mut total = 0.0;
        for i in 0..=100 {
            let t = i as f64 / 200.0;
            let mut pass = 0;
            for &e in &errs {
                if e <= t {
                    pass += 1;
                }
            }
            total += pass as f64 / errs.len() as f64;
        }
        total / 101.0
    }

    #[test]
    fn precision_counting_hand_case() {
        assert_eq!(precision_rate(&[3.0, 10.0, 25.0], 20.0).unwrap(), 2.0 / 3.0);
        assert_eq!(precision_rate(&[0.0; 7], 5.0).unwrap(), 1.0);
    }

    #[test]
    fn precision_monotone_in_tau() {
        let errors = [1.0, 4.0, 6.0, 19.0, 21.0, 300.0];
        let pr5 = precision_rate(&errors, 5.0).unwrap();
        let pr20 = precision_rate(&errors, 20.0).unwrap();
        assert!(pr5 <= pr20);
    }

    #[test]
    fn success_perfect_is_twenty_over_twentyone() {
        let sr = success_rate(&[1.0; 40]).unwrap();
        assert!((sr - 20.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn success_all_zero_is_zero() {
        assert_eq!(success_rate(&[0.0; 10]).unwrap(), 0.0);
    }

    #[test]
    fn npr_single_error_hand_case() {
        // err 0.25: passes thresholds 0.25..=0.5, i.e. i in 50..=100 -> 51 of 101
        let npr = normalized_precision_from_errors(&[0.25]).unwrap();
        assert!((npr - 51.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn npr_is_resolution_invariant() {
        let mut rng = Rng::new(77);
        let gt = random_boxes(&mut rng, 50);
        let pred = random_boxes(&mut rng, 50);
        let scaled = |bs: &[PixelBox]| -> Vec<PixelBox> {
            bs.iter().map(|b| PixelBox::new(3.0 * b.x, 3.0 * b.y, 3.0 * b.w, 3.0 * b.h)).collect()
        };
        let a = normalized_precision(&gt, &pred).unwrap();
        let b = normalized_precision(&scaled(&gt), &scaled(&pred)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn all_three_match_brute_force_references() {
        let mut rng = Rng::new(2025);
        for _ in 0..100 {
            let n = 200;
            let mut gt = random_boxes(&mut rng, n);
            let pred = random_boxes(&mut rng, n);
            // plant some absent frames
            for _ in 0..5 {
                let k = rng.next_below(n as u64) as usize;
                gt[k] = PixelBox::new(0.0, 0.0, 0.0, 0.0);
            }
            let ev = evaluate_sequence("s", &gt, &pred).unwrap();
            let pr = precision_rate(&ev.center_errors, 20.0).unwrap();
            let sr = success_rate(&ev.ious).unwrap();
            let npr = normalized_precision_from_errors(&ev.norm_errors).unwrap();
            assert!((pr - pr_reference(&gt, &pred, 20.0)).abs() < 1e-12);
            assert!((sr - sr_reference(&gt, &pred)).abs() < 1e-12);
            assert!((npr - npr_reference(&gt, &pred)).abs() < 1e-12);
        }
    }

    #[test]
    fn self_evaluation_identity() {
        let mut rng = Rng::new(4);
        let gt = random_boxes(&mut rng, 60);
        let ev = evaluate_sequence("self", &gt, &gt).unwrap();
        assert_eq!(precision_rate(&ev.center_errors, 20.0).unwrap(), 1.0);
        assert_eq!(normalized_precision_from_errors(&ev.norm_errors).unwrap(), 1.0);
        let sr = success_rate(&ev.ious).unwrap();
        assert!((sr - 20.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn absent_frames_are_excluded() {
        let gt = vec![
            PixelBox::new(0.0, 0.0, 0.0, 0.0),
            PixelBox::new(10.0, 10.0, 20.0, 20.0),
        ];
        let pred = vec![
            PixelBox::new(500.0, 500.0, 10.0, 10.0), // wildly wrong but excluded
            PixelBox::new(10.0, 10.0, 20.0, 20.0),
        ];
        let ev = evaluate_sequence("s", &gt, &pred).unwrap();
        assert_eq!(ev.excluded, 1);
        assert_eq!(ev.center_errors.len(), 1);
        assert_eq!(precision_rate(&ev.center_errors, 20.0).unwrap(), 1.0);
    }

    #[test]
    fn all_absent_is_an_error() {
        let gt = vec![PixelBox::new(0.0, 0.0, 0.0, 0.0)];
        let pred = vec![PixelBox::new(1.0, 1.0, 2.0, 2.0)];
        assert_eq!(evaluate_sequence("s", &gt, &pred), Err(EvalError::NoCountedFrames));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = vec![PixelBox::new(0.0, 0.0, 1.0, 1.0)];
        assert!(matches!(
            evaluate_sequence("s", &a, &[]),
            Err(EvalError::LengthMismatch { gt: 1, pred: 0 })
        ));
    }

    #[test]
    fn curve_shapes_and_monotonicity() {
        let mut rng = Rng::new(8);
        let gt = random_boxes(&mut rng, 100);
        let pred = random_boxes(&mut rng, 100);
        let ev = evaluate_sequence("s", &gt, &pred).unwrap();
        let c = curves(&ev.center_errors, &ev.norm_errors, &ev.ious).unwrap();
        assert_eq!(c.precision.len(), 51);
        assert_eq!(c.success.len(), 21);
        assert_eq!(c.norm_precision.len(), 101);
        for w in c.precision.windows(2) {
            assert!(w[0].1 <= w[1].1, "precision curve must be non-decreasing");
        }
        for w in c.success.windows(2) {
            assert!(w[0].1 >= w[1].1, "success curve must be non-increasing");
        }
        for (_, f) in c.precision.iter().chain(&c.success).chain(&c.norm_precision) {
            assert!((0.0..=1.0).contains(f));
        }
    }

    #[test]
    fn csv_emission() {
        let csv = CurveReport::to_csv(&[(0.0, 0.5), (1.0, 0.75)]);
        assert_eq!(csv, "threshold,fraction\n0,0.5\n1,0.75\n");
    }

    #[test]
    fn parse_box_file_accepts_mixed_separators() {
        let text = "1,2,3,4\n5\t6\t7\t8\n9 10 11 12\n\n13, 14, 15, 16\n";
        let boxes = parse_box_file(text).unwrap();
        assert_eq!(boxes.len(), 4);
        assert_eq!(boxes[0], PixelBox::new(1.0, 2.0, 3.0, 4.0));
        assert_eq!(boxes[3], PixelBox::new(13.0, 14.0, 15.0, 16.0));
    }

    #[test]
    fn parse_box_file_rejects_bad_lines() {
        assert!(matches!(
            parse_box_file("1,2,3\n"),
            Err(EvalError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_box_file("1,2,3,4\nx,2,3,4\n"),
            Err(EvalError::Parse { line: 2, .. })
        ));
        assert!(parse_box_file("1,2,3,inf\n").is_err());
    }

    #[test]
    fn parse_attributes_basics() {
        let tags = parse_attributes("seq1 NO,PO\nseq2 BC\nseq3\n").unwrap();
        assert_eq!(tags["seq1"], vec!["NO", "PO"]);
        assert_eq!(tags["seq2"], vec!["BC"]);
        assert!(tags["seq3"].is_empty());
        assert!(matches!(
            parse_attributes("seq1 XX\n"),
            Err(EvalError::Parse { line: 1, .. })
        ));
        assert_eq!(
            parse_attributes("a NO\na PO\n"),
            Err(EvalError::DuplicateSequence("a".into()))
        );
    }

    #[test]
    fn attribute_aggregation_concatenates_frames() {
        // two equal-length sequences, one perfect, one hopeless: PR 0.5
        let good = vec![PixelBox::new(10.0, 10.0, 20.0, 20.0); 10];
        let far = vec![PixelBox::new(500.0, 500.0, 20.0, 20.0); 10];
        let ev1 = evaluate_sequence("a", &good, &good).unwrap();
        let ev2 = evaluate_sequence("b", &good, &far).unwrap();
        let mut tags = BTreeMap::new();
        tags.insert("a".to_string(), vec!["PO".to_string()]);
        tags.insert("b".to_string(), vec!["PO".to_string()]);
        let (pr, _sr) = attribute_aggregate(&[ev1.clone(), ev2.clone()], &tags, "PO", 20.0)
            .unwrap()
            .unwrap();
        assert_eq!(pr, 0.5);
        // single sequence, single attribute: equals whole-sequence metrics
        let (pr1, sr1) = attribute_aggregate(&[ev1.clone()], &tags, "PO", 20.0).unwrap().unwrap();
        assert_eq!(pr1, precision_rate(&ev1.center_errors, 20.0).unwrap());
        assert_eq!(sr1, success_rate(&ev1.ious).unwrap());
        // attribute with no sequences: absent, not zero
        assert_eq!(attribute_aggregate(&[ev1], &tags, "MB", 20.0).unwrap(), None);
        // unknown attribute name: error
        assert!(matches!(
            attribute_aggregate(&[], &tags, "ZZ", 20.0),
            Err(EvalError::UnknownAttribute(_))
        ));
    }

    #[test]
    fn report_is_serializable_and_consistent() {
        let mut rng = Rng::new(13);
        let gt = random_boxes(&mut rng, 30);
        let ev = evaluate_sequence("only", &gt, &gt).unwrap();
        let mut tags = BTreeMap::new();
        tags.insert("only".to_string(), vec!["NO".to_string()]);
        let report = build_report(&[ev], &tags, 20.0).unwrap();
        assert_eq!(report.overall.pr, 1.0);
        assert_eq!(report.sequences.len(), 1);
        assert!(report.attributes.contains_key("NO"));
        assert!(!report.attributes.contains_key("BC"));
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"overall\""));
    }
}
