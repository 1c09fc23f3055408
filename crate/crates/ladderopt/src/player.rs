//! Analytic model of player representation selection.
//!
//! A player holding a [`Ladder`] picks one entry per segment from two rules:
//! only entries whose resolution fits the viewport are eligible, and among
//! those the player takes the most expensive entry whose bitrate is strictly
//! below the bandwidth estimate. When even the cheapest eligible entry is too
//! expensive the player falls back to it rather than stalling.
//!
//! Averaging those decisions over the viewport and bandwidth distributions
//! gives each entry a viewing probability. Expected streaming bitrate and
//! expected delivered quality are probability-weighted sums over entries, and
//! under piecewise linear bandwidth smoothing both have analytic gradients in
//! the entry bitrates.

use crate::error::{Error, Result};
use crate::rq_model::ChunkRqModel;
use crate::stats::{BandwidthDistribution, Smoothing, ViewportDistribution};

/// One representation: a resolution encoded at a bitrate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderEntry {
    /// Encoded height in pixels.
    pub resolution: u32,
    /// Encoding bitrate in bits per second.
    pub bitrate: f64,
}

impl LadderEntry {
    pub fn new(resolution: u32, bitrate: f64) -> Self {
        LadderEntry {
            resolution,
            bitrate,
        }
    }
}

/// An ordered set of representations for one chunk.
///
/// Entries are sorted by ascending bitrate with ties broken by ascending
/// resolution, and resolutions are non-decreasing along the ladder, so a more
/// expensive entry is never smaller than a cheaper one.
#[derive(Debug, Clone, PartialEq)]
pub struct Ladder {
    entries: Vec<LadderEntry>,
}

impl Ladder {
    pub fn new(entries: Vec<LadderEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyLadder);
        }
        for entry in &entries {
            if !(entry.bitrate.is_finite() && entry.bitrate > 0.0) {
                return Err(Error::BadLadderBitrate {
                    bitrate: entry.bitrate,
                });
            }
        }
        for (index, pair) in entries.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if b.bitrate < a.bitrate {
                return Err(Error::LadderBitrateOrder {
                    index: index + 1,
                    bitrate: b.bitrate,
                    previous: a.bitrate,
                });
            }
            if b.resolution < a.resolution {
                return Err(Error::LadderResolutionOrder {
                    index: index + 1,
                    resolution: b.resolution,
                    previous: a.resolution,
                });
            }
            if b.bitrate == a.bitrate && b.resolution == a.resolution {
                return Err(Error::DuplicateLadderEntry {
                    resolution: b.resolution,
                    bitrate: b.bitrate,
                });
            }
        }
        Ok(Ladder { entries })
    }

    /// Builds without validation; the caller guarantees the invariants.
    pub(crate) fn from_sorted_unchecked(entries: Vec<LadderEntry>) -> Self {
        debug_assert!(Ladder::new(entries.clone()).is_ok());
        Ladder { entries }
    }

    pub fn entries(&self) -> &[LadderEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bitrates(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.bitrate).collect()
    }

    pub fn resolutions(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.resolution).collect()
    }

    /// Checks that every entry has a curve in the model and sits inside its
    /// sampled bitrate range.
    pub fn validate_against(&self, model: &ChunkRqModel) -> Result<()> {
        for entry in &self.entries {
            let curve = model.curve(entry.resolution)?;
            let (lo, hi) = curve.bitrate_range();
            if entry.bitrate < lo || entry.bitrate > hi {
                return Err(Error::BitrateOutsideCurve {
                    resolution: entry.resolution,
                    bitrate: entry.bitrate,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }
}

/// Ladder indices eligible under a viewport, in ladder order.
///
/// When every entry is larger than the viewport, eligibility relaxes to the
/// entries at the ladder's smallest resolution so the player always has
/// something to request.
fn eligible_indices(entries: &[LadderEntry], viewport: u32) -> Vec<usize> {
    let eligible: Vec<usize> = (0..entries.len())
        .filter(|&i| entries[i].resolution <= viewport)
        .collect();
    if !eligible.is_empty() {
        return eligible;
    }
    let min_resolution = entries.iter().map(|e| e.resolution).min().unwrap();
    (0..entries.len())
        .filter(|&i| entries[i].resolution == min_resolution)
        .collect()
}

/// Index selected for one (viewport, bandwidth) observation, plus whether the
/// bandwidth fallback fired.
pub(crate) fn select_with_fallback(
    entries: &[LadderEntry],
    viewport: u32,
    bandwidth_bps: f64,
) -> (usize, bool) {
    let eligible = eligible_indices(entries, viewport);
    // Most expensive eligible entry strictly below the bandwidth estimate;
    // scanning from the back also resolves bitrate ties toward the higher
    // resolution.
    for &i in eligible.iter().rev() {
        if entries[i].bitrate < bandwidth_bps {
            return (i, false);
        }
    }
    // Nothing fits: fall back to the cheapest eligible bitrate, again
    // preferring the higher resolution on ties.
    let cheapest = entries[eligible[0]].bitrate;
    let fallback = eligible
        .iter()
        .rev()
        .find(|&&i| entries[i].bitrate == cheapest)
        .copied()
        .unwrap();
    (fallback, true)
}

/// Entry a player with the given viewport and bandwidth estimate requests.
pub fn select_representation(ladder: &Ladder, viewport: u32, bandwidth_bps: f64) -> usize {
    select_with_fallback(ladder.entries(), viewport, bandwidth_bps).0
}

/// How [`evaluate`] treats ladder bitrates outside a curve's sampled range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Clamp out-of-range bitrates to the curve endpoints (the default)
    /// instead of failing.
    pub clamp: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { clamp: true }
    }
}

/// Expected behavior of the player population on one ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEvaluation {
    /// Probability that a random segment view streams each entry.
    pub viewing_prob: Vec<f64>,
    /// Expected streaming bitrate in bits per second.
    pub avg_bitrate: f64,
    /// Expected delivered quality.
    pub avg_quality: f64,
    /// Interpolated quality of each entry on its curve.
    pub entry_quality: Vec<f64>,
    /// Probability mass served through the bandwidth fallback.
    pub fallback_prob: f64,
    /// d(avg_bitrate)/d(bitrate_j); present under piecewise linear smoothing.
    pub grad_bitrate: Option<Vec<f64>>,
    /// d(avg_quality)/d(bitrate_j); present under piecewise linear smoothing.
    pub grad_quality: Option<Vec<f64>>,
}

/// Viewing probability of each ladder entry under the two selection rules.
///
/// Computed by partitioning the bandwidth axis per viewport value: entry at
/// eligible position k is selected exactly when the bandwidth lands in
/// `(r_k, r_{k+1}]` (unbounded above for the top entry), and the mass at or
/// below the cheapest eligible bitrate falls back to that entry.
pub fn viewing_probabilities(
    ladder: &Ladder,
    viewport: &ViewportDistribution,
    bandwidth: &BandwidthDistribution,
) -> Vec<f64> {
    let n = ladder.len();
    let mut lambda = vec![0.0; n];
    for_each_viewport_partition(ladder.entries(), viewport, bandwidth, |index, mass| {
        lambda[index] += mass;
    });
    lambda
}

/// Shared partition walk: calls `account(ladder_index, probability_mass)` for
/// every (viewport, bandwidth interval) cell.
fn for_each_viewport_partition<F>(
    entries: &[LadderEntry],
    viewport: &ViewportDistribution,
    bandwidth: &BandwidthDistribution,
    mut account: F,
) where
    F: FnMut(usize, f64),
{
    for (&v, &pv) in viewport.pmf() {
        let eligible = eligible_indices(entries, v);
        let m = eligible.len();
        let cheapest = entries[eligible[0]].bitrate;
        let fallback_target = eligible
            .iter()
            .rev()
            .find(|&&i| entries[i].bitrate == cheapest)
            .copied()
            .unwrap();
        account(fallback_target, pv * bandwidth.cdf(cheapest));
        for k in 0..m {
            let lower = bandwidth.cdf(entries[eligible[k]].bitrate);
            let upper = if k + 1 < m {
                bandwidth.cdf(entries[eligible[k + 1]].bitrate)
            } else {
                1.0
            };
            account(eligible[k], pv * (upper - lower));
        }
    }
}

/// Closed-form viewing probability: each entry is watched when the viewport
/// matches it and the bandwidth clears its bitrate, or when the viewport is
/// larger and the bandwidth lands between its bitrate and the next one (the
/// top entry takes the whole upper tail).
///
/// Agrees with [`viewing_probabilities`] for ladders with one entry per
/// resolution when no bandwidth mass sits at or below the cheapest bitrate
/// and all viewport mass sits on or above the ladder's resolutions.
pub fn viewing_probabilities_closed_form(
    ladder: &Ladder,
    viewport: &ViewportDistribution,
    bandwidth: &BandwidthDistribution,
) -> Vec<f64> {
    let entries = ladder.entries();
    debug_assert!(
        entries.windows(2).all(|w| w[0].resolution < w[1].resolution),
        "closed form assumes one entry per resolution"
    );
    entries
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let own = viewport.prob_eq(entry.resolution) * bandwidth.prob_gt(entry.bitrate);
            let next_bitrate = entries
                .get(i + 1)
                .map(|e| e.bitrate)
                .unwrap_or(f64::INFINITY);
            let passed_through = viewport.prob_gt(entry.resolution)
                * bandwidth
                    .prob_interval(entry.bitrate, next_bitrate)
                    .expect("ladder bitrates are ordered");
            own + passed_through
        })
        .collect()
}

/// Evaluates a ladder against a chunk model and the playback distributions.
pub fn evaluate(
    ladder: &Ladder,
    model: &ChunkRqModel,
    viewport: &ViewportDistribution,
    bandwidth: &BandwidthDistribution,
) -> Result<ModelEvaluation> {
    evaluate_with(ladder, model, viewport, bandwidth, EvalOptions::default())
}

/// [`evaluate`] with explicit out-of-range handling.
pub fn evaluate_with(
    ladder: &Ladder,
    model: &ChunkRqModel,
    viewport: &ViewportDistribution,
    bandwidth: &BandwidthDistribution,
    options: EvalOptions,
) -> Result<ModelEvaluation> {
    let entries = ladder.entries();
    let n = entries.len();
    let mut quality = Vec::with_capacity(n);
    let mut slope = Vec::with_capacity(n);
    for entry in entries {
        let curve = model.curve(entry.resolution)?;
        let (lo, hi) = curve.bitrate_range();
        if !options.clamp && (entry.bitrate < lo || entry.bitrate > hi) {
            return Err(Error::BitrateOutsideCurve {
                resolution: entry.resolution,
                bitrate: entry.bitrate,
                lo,
                hi,
            });
        }
        quality.push(curve.eval_quality(entry.bitrate));
        slope.push(curve.eval_quality_slope(entry.bitrate));
    }

    let want_grad = bandwidth.smoothing() == Smoothing::PiecewiseLinear;
    let mut lambda = vec![0.0; n];
    let mut fallback_prob = 0.0;
    // dlam[i * n + j] accumulates the sensitivity of entry i's probability to
    // entry j's bitrate. Only interval boundaries move with a bitrate, so per
    // viewport each eligible position k >= 1 shifts mass between itself and
    // the position below at the local CDF density. The cheapest position's
    // own boundary nets out against the fallback mass it absorbs.
    let mut dlam = vec![0.0; if want_grad { n * n } else { 0 }];

    for (&v, &pv) in viewport.pmf() {
        let eligible = eligible_indices(entries, v);
        let m = eligible.len();
        let cheapest = entries[eligible[0]].bitrate;
        let fallback_target = eligible
            .iter()
            .rev()
            .find(|&&i| entries[i].bitrate == cheapest)
            .copied()
            .unwrap();
        let mass_below = pv * bandwidth.cdf(cheapest);
        lambda[fallback_target] += mass_below;
        fallback_prob += mass_below;
        for k in 0..m {
            let lower = bandwidth.cdf(entries[eligible[k]].bitrate);
            let upper = if k + 1 < m {
                bandwidth.cdf(entries[eligible[k + 1]].bitrate)
            } else {
                1.0
            };
            lambda[eligible[k]] += pv * (upper - lower);
        }
        if want_grad {
            for k in 1..m {
                let j = eligible[k];
                let density = bandwidth.density(entries[j].bitrate)?;
                if density != 0.0 {
                    dlam[j * n + j] -= pv * density;
                    dlam[eligible[k - 1] * n + j] += pv * density;
                }
            }
        }
    }

    let avg_bitrate: f64 = lambda
        .iter()
        .zip(entries)
        .map(|(l, e)| l * e.bitrate)
        .sum();
    let avg_quality: f64 = lambda.iter().zip(&quality).map(|(l, q)| l * q).sum();

    let (grad_bitrate, grad_quality) = if want_grad {
        let mut grad_r = vec![0.0; n];
        let mut grad_q = vec![0.0; n];
        for j in 0..n {
            grad_r[j] = lambda[j];
            grad_q[j] = lambda[j] * slope[j];
            for i in 0..n {
                let d = dlam[i * n + j];
                if d != 0.0 {
                    grad_r[j] += entries[i].bitrate * d;
                    grad_q[j] += quality[i] * d;
                }
            }
        }
        (Some(grad_r), Some(grad_q))
    } else {
        (None, None)
    };

    Ok(ModelEvaluation {
        viewing_prob: lambda,
        avg_bitrate,
        avg_quality,
        entry_quality: quality,
        fallback_prob,
        grad_bitrate,
        grad_quality,
    })
}
