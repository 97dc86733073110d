//! Latent-space geometry: the bounding hypersphere, projection onto a
//! hyperplane, and construction, clipping and sampling of query lines.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist, dot, norm, norm_sq, point_on_line, sub};
use crate::model::LinearBoundary;

/// Default latent distance between consecutive images on a query line.
pub const DEFAULT_RESOLUTION: f64 = 0.25;

/// Discriminants in `[-TANGENT_SLACK, 0)` are treated as tangent lines.
const TANGENT_SLACK: f64 = 1e-12;

/// Smallest sphere centered at the data mean containing every point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypersphere {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Hypersphere {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, point: &[f64], rel_slack: f64) -> bool {
        dist(point, &self.center) <= self.radius * (1.0 + rel_slack) + rel_slack
    }
}

/// Center at the arithmetic mean, radius the largest distance to it.
pub fn fit_hypersphere<P: AsRef<[f64]>>(points: &[P]) -> Result<Hypersphere> {
    let first = points.first().ok_or(Error::NoPoints)?.as_ref();
    let dim = first.len();
    let mut center = vec![0.0; dim];
    for p in points {
        let p = p.as_ref();
        check_dim(dim, p.len())?;
        for (c, x) in center.iter_mut().zip(p) {
            *c += x;
        }
    }
    let n = points.len() as f64;
    center.iter_mut().for_each(|c| *c /= n);
    let radius = points
        .iter()
        .map(|p| dist(p.as_ref(), &center))
        .fold(0.0, f64::max);
    Ok(Hypersphere { center, radius })
}

/// Orthogonal projection of `z` onto the hyperplane `w·x + b = 0`.
pub fn project_onto_boundary(z: &[f64], w: &[f64], b: f64) -> Result<Vec<f64>> {
    check_dim(w.len(), z.len())?;
    let ww = norm_sq(w);
    if ww == 0.0 || !ww.is_finite() {
        return Err(Error::DegenerateBoundary);
    }
    let scale = (dot(w, z) + b) / ww;
    Ok(z.iter().zip(w).map(|(zi, wi)| zi - scale * wi).collect())
}

/// A line `q(t) = base + t * direction` through the query sample, clipped to
/// the hypersphere. `t = 0` is the projection onto the boundary estimate and
/// `t = 1` is the query sample itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLine {
    pub base: Vec<f64>,
    pub query: Vec<f64>,
    pub direction: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
    pub resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSample {
    pub index: usize,
    pub t: f64,
    pub point: Vec<f64>,
}

impl QueryLine {
    pub fn point_at(&self, t: f64) -> Vec<f64> {
        point_on_line(&self.base, &self.direction, t)
    }

    /// Euclidean length of one unit of `t`.
    pub fn direction_norm(&self) -> f64 {
        norm(&self.direction)
    }

    /// Latent length of the clipped segment.
    pub fn segment_length(&self) -> f64 {
        (self.t_hi - self.t_lo) * self.direction_norm()
    }

    /// Parameter step between consecutive samples.
    pub fn t_step(&self) -> f64 {
        self.resolution / self.direction_norm()
    }

    pub fn sample_count(&self) -> usize {
        self.intervals() + 1
    }

    // Whole resolution steps that fit in the segment.
    fn intervals(&self) -> usize {
        let mut n = (self.segment_length() / self.resolution).floor().max(0.0) as usize;
        // Guard the floor against n*step landing a rounding error past the span.
        while n > 0 && n as f64 * self.t_step() > self.t_hi - self.t_lo {
            n -= 1;
        }
        n
    }

    /// Parameter of the first sample. The grid is centered in the segment so
    /// the leftover shorter than one step is split between both ends, which
    /// keeps every point of the segment within half a step of a sample.
    pub fn grid_start(&self) -> f64 {
        let slack = (self.t_hi - self.t_lo) - self.intervals() as f64 * self.t_step();
        self.t_lo + 0.5 * slack.max(0.0)
    }

    pub fn sample_t(&self, index: usize) -> f64 {
        self.grid_start() + index as f64 * self.t_step()
    }

    /// Index of the grid sample nearest to parameter `t`, clamped to the grid.
    pub fn nearest_sample_index(&self, t: f64) -> usize {
        let raw = ((t - self.grid_start()) / self.t_step()).round();
        let last = self.sample_count() - 1;
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(last)
        }
    }
}

/// Builds the query line through `query` perpendicular to `boundary`,
/// clipped to `sphere`.
pub fn build_query_line(
    query: &[f64],
    boundary: &LinearBoundary,
    sphere: &Hypersphere,
    resolution: f64,
) -> Result<QueryLine> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::InvalidResolution(resolution));
    }
    check_dim(sphere.dim(), query.len())?;
    let base = project_onto_boundary(query, &boundary.w, boundary.b)?;
    let direction = sub(query, &base);
    let dd = norm_sq(&direction);
    if dd == 0.0 {
        return Err(Error::DegenerateQuery);
    }
    let (t_lo, t_hi) = clip_to_sphere(&base, &direction, sphere)?;
    Ok(QueryLine {
        base,
        query: query.to_vec(),
        direction,
        t_lo,
        t_hi,
        resolution,
    })
}

/// Roots of `||base + t*direction - center||^2 = radius^2`.
fn clip_to_sphere(base: &[f64], direction: &[f64], sphere: &Hypersphere) -> Result<(f64, f64)> {
    let offset = sub(base, &sphere.center);
    let a = norm_sq(direction);
    let half_b = dot(direction, &offset);
    let c = norm_sq(&offset) - sphere.radius * sphere.radius;
    let disc = half_b * half_b - a * c;
    let scale = (half_b * half_b).max((a * c).abs()).max(f64::MIN_POSITIVE);
    if disc < 0.0 {
        if disc >= -TANGENT_SLACK * scale {
            let t = -half_b / a;
            return Ok((t, t));
        }
        return Err(Error::QueryOutsideDomain);
    }
    let root = disc.sqrt();
    // Stable form: compute the larger-magnitude root first, then use Vieta.
    let q = -(half_b + half_b.signum() * root);
    let (t1, t2) = if q == 0.0 {
        // half_b = 0 and disc = 0: tangent at the foot point.
        (0.0, 0.0)
    } else {
        (q / a, c / q)
    };
    Ok(if t1 <= t2 { (t1, t2) } else { (t2, t1) })
}

/// Evenly spaced samples `resolution` apart, centered in `[t_lo, t_hi]`.
pub fn sample_line(line: &QueryLine) -> Vec<LineSample> {
    (0..line.sample_count())
        .map(|index| {
            let t = line.sample_t(index);
            LineSample {
                index,
                t,
                point: line.point_at(t),
            }
        })
        .collect()
}

/// Parameter where the line meets `w·x + b = 0`, if inside the segment.
pub fn intersect_line_hyperplane(line: &QueryLine, w: &[f64], b: f64) -> Option<f64> {
    if w.len() != line.base.len() {
        return None;
    }
    let denom = dot(w, &line.direction);
    if denom == 0.0 {
        return None;
    }
    let t = -(dot(w, &line.base) + b) / denom;
    (t.is_finite() && t >= line.t_lo && t <= line.t_hi).then_some(t)
}
