//! Oracles answering a line query with a boundary annotation and the label of
//! the query sample.
//!
//! Simulated annotations are snapped to the sampled image grid of the line,
//! so a noiseless oracle and a zero-noise oracle agree exactly. Noise is an
//! integer shift measured in images along the line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intersect_line_hyperplane, QueryLine};
use crate::model::{Label, LinearBoundary};
use crate::rng::Rng;

/// Where the oracle saw the class change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPoint {
    Point(Vec<f64>),
    NoChange,
}

impl BoundaryPoint {
    pub fn point(&self) -> Option<&[f64]> {
        match self {
            BoundaryPoint::Point(p) => Some(p),
            BoundaryPoint::NoChange => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotationSource {
    Svm,
    Noisy { sigma: f64 },
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub line_id: u64,
    pub boundary_point: BoundaryPoint,
    pub query_label: Label,
    pub source: AnnotationSource,
    /// Images shifted away from the noiseless annotation.
    pub noise_offset: i64,
    /// Grid index of the annotated image, when the annotation is a grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<usize>,
    /// Line parameter of the annotated point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Exact oracle intersection parameter (simulated oracles only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_t: Option<f64>,
}

/// The exact crossing of the oracle plane with the clipped line.
pub fn oracle_intersection(line: &QueryLine, oracle: &LinearBoundary) -> Option<f64> {
    intersect_line_hyperplane(line, &oracle.w, oracle.b)
}

/// Noiseless simulated annotation: the grid image nearest the oracle's
/// crossing, labeled by the oracle.
pub fn svm_oracle_annotate(line_id: u64, line: &QueryLine, oracle: &LinearBoundary) -> Result<AnnotationRecord> {
    let mut unused = Rng::seed_from_u64(0);
    annotate_with_offset(line_id, line, oracle, AnnotationSource::Svm, |_| 0, &mut unused)
}

/// Like [`svm_oracle_annotate`] but shifts the annotation by `round(g)`
/// images with `g ~ N(0, σ²)`, clamped to the line. The RNG is only drawn
/// when a crossing exists and `σ > 0`.
pub fn noisy_oracle_annotate(
    line_id: u64,
    line: &QueryLine,
    oracle: &LinearBoundary,
    sigma: f64,
    rng: &mut Rng,
) -> Result<AnnotationRecord> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be finite and ≥ 0, got {sigma}")));
    }
    let draw = |rng: &mut Rng| {
        if sigma == 0.0 {
            0
        } else {
            (sigma * rng.normal()).round() as i64
        }
    };
    annotate_with_offset(line_id, line, oracle, AnnotationSource::Noisy { sigma }, draw, rng)
}

// Shared body; `offset` draws the noise shift in images.
fn annotate_with_offset<F>(
    line_id: u64,
    line: &QueryLine,
    oracle: &LinearBoundary,
    source: AnnotationSource,
    offset: F,
    rng: &mut Rng,
) -> Result<AnnotationRecord>
where
    F: FnOnce(&mut Rng) -> i64,
{
    let query_label = oracle.predict(&line.query)?;
    let Some(true_t) = oracle_intersection(line, oracle) else {
        return Ok(AnnotationRecord {
            line_id,
            boundary_point: BoundaryPoint::NoChange,
            query_label,
            source,
            noise_offset: 0,
            sample_index: None,
            t: None,
            true_t: None,
        });
    };
    let nearest = line.nearest_sample_index(true_t) as i64;
    let last = line.sample_count() as i64 - 1;
    let shifted = (nearest + offset(rng)).clamp(0, last);
    let index = shifted as usize;
    let t = line.sample_t(index);
    Ok(AnnotationRecord {
        line_id,
        boundary_point: BoundaryPoint::Point(line.point_at(t)),
        query_label,
        source,
        noise_offset: shifted - nearest,
        sample_index: Some(index),
        t: Some(t),
        true_t: Some(true_t),
    })
}

/// A human's answer for one rendered strip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanResponse {
    /// First image of the new class, or `None` for "no change".
    pub change_index: Option<usize>,
    pub label: Label,
}

/// Converts a click on image `k` (the first image of the new class) into the
/// midpoint between images `k-1` and `k`; `k = 0` maps to image 0.
pub fn human_oracle_annotate(line_id: u64, line: &QueryLine, response: HumanResponse) -> Result<AnnotationRecord> {
    let (boundary_point, sample_index, t) = match response.change_index {
        None => (BoundaryPoint::NoChange, None, None),
        Some(k) => {
            let s = line.sample_count();
            if k >= s {
                return Err(Error::InvalidArgument(format!("change index {k} outside 0..{s}")));
            }
            let t = if k == 0 {
                line.sample_t(0)
            } else {
                0.5 * (line.sample_t(k - 1) + line.sample_t(k))
            };
            (BoundaryPoint::Point(line.point_at(t)), Some(k), Some(t))
        }
    };
    Ok(AnnotationRecord {
        line_id,
        boundary_point,
        query_label: response.label,
        source: AnnotationSource::Human,
        noise_offset: 0,
        sample_index,
        t,
        true_t: None,
    })
}
