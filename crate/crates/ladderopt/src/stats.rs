//! Empirical playback distributions.
//!
//! Traces of (estimated bandwidth, viewport height) records become two
//! independent distributions: a probability mass function over snapped
//! viewport heights and an empirical bandwidth CDF. The bandwidth CDF can be
//! queried in two modes: [`Smoothing::Step`] keeps the exact empirical step
//! function, while [`Smoothing::PiecewiseLinear`] interpolates linearly
//! between support points so the CDF has a density almost everywhere, which
//! the optimizer needs for gradients.
//!
//! All interval probabilities use the half-open convention `P(lo < X <= hi)`.

use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::trace::TraceRecord;

/// Viewport heights a player reports, in pixels.
pub const SUPPORTED_VIEWPORT_HEIGHTS: [u32; 8] = [144, 240, 360, 480, 720, 1080, 1440, 2160];

/// Snaps an observed viewport height onto the supported set: the largest
/// supported height that fits, or the smallest supported height for
/// observations below it.
pub fn snap_viewport(height: u32) -> u32 {
    let mut snapped = SUPPORTED_VIEWPORT_HEIGHTS[0];
    for &candidate in &SUPPORTED_VIEWPORT_HEIGHTS {
        if candidate <= height {
            snapped = candidate;
        }
    }
    snapped
}

/// How bandwidth CDF queries interpolate between support points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Exact empirical step function, right-continuous.
    Step,
    /// Linear interpolation between support points; differentiable between
    /// them, which makes [`BandwidthDistribution::density`] available.
    PiecewiseLinear,
}

/// Probability mass function over snapped viewport heights.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewportDistribution {
    pmf: BTreeMap<u32, f64>,
}

impl ViewportDistribution {
    /// Builds from per-height weights (counts), normalizing to sum 1.
    ///
    /// Heights must already be snapped onto the supported set.
    pub fn from_counts(counts: &BTreeMap<u32, f64>) -> Result<Self> {
        let total: f64 = counts.values().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::EmptyTrace { skipped: 0 });
        }
        let mut pmf = BTreeMap::new();
        for (&height, &weight) in counts {
            if !SUPPORTED_VIEWPORT_HEIGHTS.contains(&height) {
                return Err(Error::UnsupportedViewport { height });
            }
            if weight > 0.0 {
                pmf.insert(height, weight / total);
            }
        }
        Ok(ViewportDistribution { pmf })
    }

    /// Builds from an already normalized PMF, tolerating rounding from
    /// serialization and renormalizing exactly.
    pub fn from_pmf(pmf: &BTreeMap<u32, f64>) -> Result<Self> {
        let sum: f64 = pmf.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::PmfNotNormalized { sum });
        }
        Self::from_counts(pmf)
    }

    /// Probability that the viewport equals `height` exactly.
    pub fn prob_eq(&self, height: u32) -> f64 {
        self.pmf.get(&height).copied().unwrap_or(0.0)
    }

    /// Probability that the viewport is strictly larger than `height`.
    pub fn prob_gt(&self, height: u32) -> f64 {
        self.pmf
            .iter()
            .filter(|&(&h, _)| h > height)
            .map(|(_, &p)| p)
            .sum()
    }

    /// Heights with positive mass, ascending, with their probabilities.
    pub fn pmf(&self) -> &BTreeMap<u32, f64> {
        &self.pmf
    }

    /// Inverse CDF transform of a uniform draw `u` in `[0, 1)`, scanning
    /// heights in ascending order.
    pub fn sample(&self, u: f64) -> u32 {
        let mut acc = 0.0;
        for (&height, &p) in &self.pmf {
            acc += p;
            if u < acc {
                return height;
            }
        }
        *self.pmf.keys().next_back().expect("pmf is never empty")
    }
}

/// Empirical bandwidth distribution over deduplicated support points.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthDistribution {
    /// Distinct observed bandwidths, strictly ascending, in bits per second.
    support: Vec<f64>,
    /// Cumulative probability at each support point; final value is 1.
    cdf: Vec<f64>,
    smoothing: Smoothing,
}

impl BandwidthDistribution {
    /// Builds from weighted observations, merging duplicates and normalizing.
    pub fn from_samples(mut samples: Vec<(f64, f64)>, smoothing: Smoothing) -> Result<Self> {
        samples.retain(|&(value, weight)| value.is_finite() && value > 0.0 && weight > 0.0);
        if samples.is_empty() {
            return Err(Error::EmptyTrace { skipped: 0 });
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (value, weight) in samples {
            if support.last() == Some(&value) {
                *weights.last_mut().unwrap() += weight;
            } else {
                support.push(value);
                weights.push(weight);
            }
        }
        let mut cdf = Vec::with_capacity(weights.len());
        let mut cum = 0.0;
        for w in &weights {
            cum += w;
            cdf.push(cum);
        }
        let total = cum;
        for c in &mut cdf {
            *c /= total;
        }
        Ok(BandwidthDistribution {
            support,
            cdf,
            smoothing,
        })
    }

    /// Rebuilds from stored support and CDF values, validating shape.
    pub fn from_support_cdf(support: Vec<f64>, cdf: Vec<f64>, smoothing: Smoothing) -> Result<Self> {
        if support.is_empty() || support.len() != cdf.len() {
            return Err(Error::EmptyTrace { skipped: 0 });
        }
        for pair in support.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(Error::BadSampleBitrate { bitrate: pair[1] });
            }
        }
        let mut previous = 0.0;
        for &c in &cdf {
            if !(c > previous && c <= 1.0 + 1e-12) {
                return Err(Error::PmfNotNormalized { sum: c });
            }
            previous = c;
        }
        if (cdf.last().unwrap() - 1.0).abs() > 1e-9 {
            return Err(Error::PmfNotNormalized {
                sum: *cdf.last().unwrap(),
            });
        }
        let mut cdf = cdf;
        *cdf.last_mut().unwrap() = 1.0;
        if !(support[0] > 0.0 && support[0].is_finite() && support.last().unwrap().is_finite()) {
            return Err(Error::BadSampleBitrate {
                bitrate: support[0],
            });
        }
        Ok(BandwidthDistribution {
            support,
            cdf,
            smoothing,
        })
    }

    /// Same distribution queried under a different smoothing mode.
    pub fn with_smoothing(mut self, smoothing: Smoothing) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    /// `P(X <= x)` under the active smoothing mode.
    ///
    /// In both modes the CDF is 0 below the first support point and 1 at or
    /// above the last. Piecewise linear mode keeps the jump at the first
    /// support point (that atom cannot be spread without inventing mass below
    /// the observed minimum) and interpolates linearly between the rest.
    pub fn cdf(&self, x: f64) -> f64 {
        let idx = self.support.partition_point(|&s| s <= x);
        if idx == 0 {
            return 0.0;
        }
        if idx == self.support.len() {
            return 1.0;
        }
        match self.smoothing {
            Smoothing::Step => self.cdf[idx - 1],
            Smoothing::PiecewiseLinear => {
                let (s0, s1) = (self.support[idx - 1], self.support[idx]);
                let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
                c0 + (c1 - c0) * (x - s0) / (s1 - s0)
            }
        }
    }

    /// `P(X > x)`.
    pub fn prob_gt(&self, x: f64) -> f64 {
        1.0 - self.cdf(x)
    }

    /// `P(lo < X <= hi)`; `hi` may be infinite.
    pub fn prob_interval(&self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo <= hi) {
            return Err(Error::BadInterval { lo, hi });
        }
        let upper = if hi == f64::INFINITY { 1.0 } else { self.cdf(hi) };
        Ok(upper - self.cdf(lo))
    }

    /// Derivative of the piecewise linear CDF at `x`: the slope of the
    /// segment containing `x` (right-hand at support points), zero outside
    /// the support. Errors under step smoothing, which has no density.
    pub fn density(&self, x: f64) -> Result<f64> {
        if self.smoothing == Smoothing::Step {
            return Err(Error::DensityUnderStep);
        }
        let idx = self.support.partition_point(|&s| s <= x);
        if idx == 0 || idx == self.support.len() {
            return Ok(0.0);
        }
        let (s0, s1) = (self.support[idx - 1], self.support[idx]);
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        Ok((c1 - c0) / (s1 - s0))
    }

    /// Inverse CDF transform of a uniform draw `u` in `[0, 1)`.
    ///
    /// Step mode returns support points with their empirical masses;
    /// piecewise linear mode returns the continuous interpolant (the atom at
    /// the first support point is preserved).
    pub fn sample(&self, u: f64) -> f64 {
        let idx = self.cdf.partition_point(|&c| c <= u);
        match self.smoothing {
            Smoothing::Step => self.support[idx.min(self.support.len() - 1)],
            Smoothing::PiecewiseLinear => {
                if idx == 0 {
                    return self.support[0];
                }
                if idx == self.support.len() {
                    return *self.support.last().unwrap();
                }
                let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
                let (s0, s1) = (self.support[idx - 1], self.support[idx]);
                s0 + (s1 - s0) * (u - c0) / (c1 - c0)
            }
        }
    }
}

/// Distributions built from a trace, with ingest bookkeeping.
#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub viewport: ViewportDistribution,
    pub bandwidth: BandwidthDistribution,
    /// Records that contributed to the distributions.
    pub records_used: u64,
    /// Records dropped for parse errors or out-of-domain values.
    pub records_skipped: u64,
}

/// Folds a stream of parsed trace records into the two distributions.
///
/// Malformed records (parse failures, non-positive bandwidth or weight) are
/// counted and skipped rather than aborting the ingest. Viewports are snapped
/// onto the supported set. Errors only if no record survives.
pub fn ingest_traces<I>(records: I, smoothing: Smoothing) -> Result<IngestOutcome>
where
    I: IntoIterator<Item = Result<TraceRecord>>,
{
    let mut viewport_counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut bandwidth_samples: Vec<(f64, f64)> = Vec::new();
    let mut used = 0u64;
    let mut skipped = 0u64;
    for record in records {
        let Ok(record) = record else {
            skipped += 1;
            continue;
        };
        let weight = record.weight.unwrap_or(1.0);
        let valid = record.estimated_bandwidth_bps.is_finite()
            && record.estimated_bandwidth_bps > 0.0
            && weight.is_finite()
            && weight > 0.0
            && record.viewport_height > 0;
        if !valid {
            skipped += 1;
            continue;
        }
        *viewport_counts
            .entry(snap_viewport(record.viewport_height))
            .or_insert(0.0) += weight;
        bandwidth_samples.push((record.estimated_bandwidth_bps, weight));
        used += 1;
    }
    if used == 0 {
        return Err(Error::EmptyTrace { skipped });
    }
    Ok(IngestOutcome {
        viewport: ViewportDistribution::from_counts(&viewport_counts)?,
        bandwidth: BandwidthDistribution::from_samples(bandwidth_samples, smoothing)?,
        records_used: used,
        records_skipped: skipped,
    })
}
