//! Achievable rate-quality region of a representation set.
//!
//! Any mix of viewing probabilities over a ladder's operating points
//! `(bitrate, quality)` lands the expected (rate, quality) pair inside the
//! convex hull of those points, and every hull point is reachable by some
//! mix, so the hull is exactly the achievable region. This module computes
//! the hull, answers membership queries, and exposes the upper boundary of a
//! set of rate-quality curves for baseline construction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rq_model::RateQualityCurve;

/// One operating point: an encoding bitrate and the quality it delivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RqPoint {
    /// Bits per second.
    pub rate: f64,
    /// Quality units.
    pub quality: f64,
}

impl RqPoint {
    pub fn new(rate: f64, quality: f64) -> Self {
        RqPoint { rate, quality }
    }
}

/// Relative epsilon for orientation tests on normalized coordinates.
const ORIENT_EPS: f64 = 1e-12;

/// Convex hull of a set of operating points, stored counterclockwise.
///
/// Degenerate hulls (a single point, a segment) are represented by one or two
/// vertices. Geometry runs on coordinates normalized by the largest rate and
/// quality magnitudes seen at construction, so tolerances are relative.
#[derive(Debug, Clone, PartialEq)]
pub struct AchievableRegion {
    hull_vertices: Vec<RqPoint>,
    rate_scale: f64,
    quality_scale: f64,
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn scales(points: &[RqPoint]) -> (f64, f64) {
    let rate_scale = points.iter().map(|p| p.rate.abs()).fold(0.0, f64::max);
    let quality_scale = points.iter().map(|p| p.quality.abs()).fold(0.0, f64::max);
    (
        if rate_scale > 0.0 { rate_scale } else { 1.0 },
        if quality_scale > 0.0 { quality_scale } else { 1.0 },
    )
}

/// Convex hull of the given operating points.
pub fn achievable_region(points: &[RqPoint]) -> Result<AchievableRegion> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    for p in points {
        if !(p.rate.is_finite() && p.quality.is_finite() && p.rate > 0.0) {
            return Err(Error::BadPoint {
                rate: p.rate,
                quality: p.quality,
            });
        }
    }
    let (rate_scale, quality_scale) = scales(points);
    let normalized: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.rate / rate_scale, p.quality / quality_scale))
        .collect();

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        normalized[a]
            .0
            .total_cmp(&normalized[b].0)
            .then(normalized[a].1.total_cmp(&normalized[b].1))
    });
    order.dedup_by(|&mut a, &mut b| {
        (normalized[a].0 - normalized[b].0).abs() <= ORIENT_EPS
            && (normalized[a].1 - normalized[b].1).abs() <= ORIENT_EPS
    });

    let hull_indices = if order.len() == 1 {
        order
    } else {
        let mut lower: Vec<usize> = Vec::new();
        for &i in &order {
            while lower.len() >= 2
                && cross(
                    normalized[lower[lower.len() - 2]],
                    normalized[lower[lower.len() - 1]],
                    normalized[i],
                ) <= ORIENT_EPS
            {
                lower.pop();
            }
            lower.push(i);
        }
        let mut upper: Vec<usize> = Vec::new();
        for &i in order.iter().rev() {
            while upper.len() >= 2
                && cross(
                    normalized[upper[upper.len() - 2]],
                    normalized[upper[upper.len() - 1]],
                    normalized[i],
                ) <= ORIENT_EPS
            {
                upper.pop();
            }
            upper.push(i);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        lower
    };

    Ok(AchievableRegion {
        hull_vertices: hull_indices.into_iter().map(|i| points[i]).collect(),
        rate_scale,
        quality_scale,
    })
}

impl AchievableRegion {
    /// Hull vertices in counterclockwise order.
    pub fn hull_vertices(&self) -> &[RqPoint] {
        &self.hull_vertices
    }

    fn normalize(&self, p: RqPoint) -> (f64, f64) {
        (p.rate / self.rate_scale, p.quality / self.quality_scale)
    }

    /// True when `p` lies inside the region or within `tol` of its boundary,
    /// with `tol` measured in normalized coordinates.
    pub fn contains(&self, p: RqPoint, tol: f64) -> bool {
        let q = self.normalize(p);
        match self.hull_vertices.len() {
            0 => false,
            1 => {
                let v = self.normalize(self.hull_vertices[0]);
                ((q.0 - v.0).powi(2) + (q.1 - v.1).powi(2)).sqrt() <= tol
            }
            2 => {
                let a = self.normalize(self.hull_vertices[0]);
                let b = self.normalize(self.hull_vertices[1]);
                segment_distance(a, b, q) <= tol
            }
            n => {
                for i in 0..n {
                    let a = self.normalize(self.hull_vertices[i]);
                    let b = self.normalize(self.hull_vertices[(i + 1) % n]);
                    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
                    if cross(a, b, q) / len < -tol {
                        return false;
                    }
                }
                true
            }
        }
    }
}

fn segment_distance(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    let ab = (b.0 - a.0, b.1 - a.1);
    let ap = (p.0 - a.0, p.1 - a.1);
    let len2 = ab.0 * ab.0 + ab.1 * ab.1;
    let t = if len2 > 0.0 {
        ((ap.0 * ab.0 + ap.1 * ab.1) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let closest = (a.0 + t * ab.0, a.1 + t * ab.1);
    ((p.0 - closest.0).powi(2) + (p.1 - closest.1).powi(2)).sqrt()
}

/// Bitrate interval over which each resolution's curve supplies vertices of
/// the upper boundary (maximal quality per rate) of the union of all curves'
/// sample points. `None` marks a resolution dominated everywhere.
pub fn upper_hull(
    curves: &BTreeMap<u32, RateQualityCurve>,
) -> BTreeMap<u32, Option<(f64, f64)>> {
    let mut tagged: Vec<(f64, f64, u32)> = Vec::new();
    for (&resolution, curve) in curves {
        for sample in curve.samples() {
            tagged.push((sample.bitrate, sample.quality, resolution));
        }
    }
    let mut intervals: BTreeMap<u32, Option<(f64, f64)>> =
        curves.keys().map(|&r| (r, None)).collect();
    if tagged.is_empty() {
        return intervals;
    }

    let rate_scale = tagged.iter().map(|t| t.0.abs()).fold(0.0, f64::max).max(1e-300);
    let quality_scale = {
        let s = tagged.iter().map(|t| t.1.abs()).fold(0.0, f64::max);
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };

    // At equal rates only the highest-quality point can sit on the upper
    // boundary; exact (rate, quality) ties go to the first resolution in key
    // order so the output is deterministic.
    tagged.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(b.1.total_cmp(&a.1))
            .then(a.2.cmp(&b.2))
    });
    tagged.dedup_by(|next, kept| next.0 == kept.0);

    let mut chain: Vec<&(f64, f64, u32)> = Vec::new();
    for point in &tagged {
        let p = (point.0 / rate_scale, point.1 / quality_scale);
        while chain.len() >= 2 {
            let o = chain[chain.len() - 2];
            let a = chain[chain.len() - 1];
            let turn = cross(
                (o.0 / rate_scale, o.1 / quality_scale),
                (a.0 / rate_scale, a.1 / quality_scale),
                p,
            );
            if turn >= -ORIENT_EPS {
                chain.pop();
            } else {
                break;
            }
        }
        chain.push(point);
    }

    for point in chain {
        let entry = intervals.get_mut(&point.2).unwrap();
        *entry = match *entry {
            None => Some((point.0, point.0)),
            Some((lo, hi)) => Some((lo.min(point.0), hi.max(point.0))),
        };
    }
    intervals
}
