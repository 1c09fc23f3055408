//! Reference ladders the optimizer is compared against.
//!
//! Two constructions are provided: a fixed-label ladder that takes the same
//! labeled sample (for example the same CRF) from every curve, and a
//! hull-maximizing ladder that pins the lowest and highest resolutions at a
//! labeled sample and spreads the intermediate resolutions across the upper
//! boundary of the combined rate-quality curves, which maximizes the
//! achievable rate-quality region spanned by the ladder's operating points.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::player::{Ladder, LadderEntry};
use crate::region::upper_hull;
use crate::rq_model::ChunkRqModel;

/// Multiplier applied when a later entry must be lifted above its
/// predecessor to keep ladder bitrates increasing.
const NUDGE_FACTOR: f64 = 1.001;

/// A parseable description of one baseline ladder construction.
///
/// Text forms: `fixed:<label>` and `hull:<low>:<high>:<label>`, for example
/// `fixed:crf20` or `hull:144:1080:crf20`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BaselineSpec {
    /// Same labeled sample from every curve in the model.
    FixedLabel { label: String },
    /// Anchors pinned at their labeled samples, intermediates on the upper
    /// hull of the curve union.
    HullMaximizing { low: u32, high: u32, label: String },
}

impl BaselineSpec {
    /// Builds the described ladder for one chunk model.
    pub fn build(&self, model: &ChunkRqModel) -> Result<Ladder> {
        match self {
            BaselineSpec::FixedLabel { label } => fixed_label_ladder(model, label),
            BaselineSpec::HullMaximizing { low, high, label } => {
                hull_maximizing_ladder(model, (*low, *high), label)
            }
        }
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineSpec::FixedLabel { label } => write!(f, "fixed:{label}"),
            BaselineSpec::HullMaximizing { low, high, label } => {
                write!(f, "hull:{low}:{high}:{label}")
            }
        }
    }
}

impl FromStr for BaselineSpec {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let bad = || Error::BadBaselineSpec {
            spec: spec.to_string(),
        };
        let mut parts = spec.split(':');
        match parts.next() {
            Some("fixed") => {
                let label = parts.next().filter(|l| !l.is_empty()).ok_or_else(bad)?;
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(BaselineSpec::FixedLabel {
                    label: label.to_string(),
                })
            }
            Some("hull") => {
                let low: u32 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(bad)?;
                let high: u32 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(bad)?;
                let label = parts.next().filter(|l| !l.is_empty()).ok_or_else(bad)?;
                if parts.next().is_some() {
                    return Err(bad());
                }
                if low >= high {
                    return Err(Error::BadAnchors { low, high });
                }
                Ok(BaselineSpec::HullMaximizing {
                    low,
                    high,
                    label: label.to_string(),
                })
            }
            _ => Err(bad()),
        }
    }
}

fn labeled_bitrate(model: &ChunkRqModel, resolution: u32, label: &str) -> Result<f64> {
    let curve = model.curve(resolution)?;
    curve
        .sample_with_label(label)
        .map(|s| s.bitrate)
        .ok_or_else(|| Error::MissingLabel {
            resolution,
            label: label.to_string(),
        })
}

/// Ladder taking the sample labeled `label` from every curve in the model.
pub fn fixed_label_ladder(model: &ChunkRqModel, label: &str) -> Result<Ladder> {
    let mut entries = Vec::new();
    for &resolution in &model.resolutions() {
        entries.push(LadderEntry::new(
            resolution,
            labeled_bitrate(model, resolution, label)?,
        ));
    }
    entries.sort_by(|a, b| {
        a.bitrate
            .total_cmp(&b.bitrate)
            .then(a.resolution.cmp(&b.resolution))
    });
    Ladder::new(entries)
}

/// Ladder spanning `anchors.0` to `anchors.1` with anchors pinned at their
/// `anchor_label` samples and intermediates placed on the upper hull.
///
/// Each intermediate resolution takes the log-scale midpoint of the bitrate
/// interval where its curve supplies upper-hull points. A resolution that
/// never reaches the hull is placed at the geometric mean of its nearest
/// placed neighbors, clamped to its own sampled range. If pinned anchors and
/// hull placements would break the bitrate ordering, later entries are
/// lifted just above their predecessor; placement cannot move entries off
/// their own curves, so ordering wins over exact pinning in that corner.
pub fn hull_maximizing_ladder(
    model: &ChunkRqModel,
    anchors: (u32, u32),
    anchor_label: &str,
) -> Result<Ladder> {
    let (low, high) = anchors;
    if low >= high {
        return Err(Error::BadAnchors { low, high });
    }
    for anchor in [low, high] {
        if model.curve(anchor).is_err() {
            return Err(Error::MissingAnchor { resolution: anchor });
        }
    }

    let resolutions: Vec<u32> = model
        .resolutions()
        .into_iter()
        .filter(|&r| r >= low && r <= high)
        .collect();
    let intervals = upper_hull(model.curves());

    let mut chosen: Vec<(u32, Option<f64>)> = Vec::with_capacity(resolutions.len());
    for &resolution in &resolutions {
        let bitrate = if resolution == low || resolution == high {
            Some(labeled_bitrate(model, resolution, anchor_label)?)
        } else {
            intervals[&resolution].map(|(lo, hi)| (lo * hi).sqrt())
        };
        chosen.push((resolution, bitrate));
    }

    // Dominated intermediates interpolate between their nearest placed
    // neighbors; anchors guarantee a neighbor exists on each side.
    let placed: Vec<(usize, f64)> = chosen
        .iter()
        .enumerate()
        .filter_map(|(i, &(_, b))| b.map(|b| (i, b)))
        .collect();
    for i in 0..chosen.len() {
        if chosen[i].1.is_some() {
            continue;
        }
        let below = placed.iter().rev().find(|&&(j, _)| j < i).unwrap().1;
        let above = placed.iter().find(|&&(j, _)| j > i).unwrap().1;
        let (range_lo, range_hi) = model.curve(chosen[i].0)?.bitrate_range();
        chosen[i].1 = Some((below * above).sqrt().clamp(range_lo, range_hi));
    }

    let mut entries = Vec::with_capacity(chosen.len());
    let mut floor = 0.0f64;
    for (resolution, bitrate) in chosen {
        let mut bitrate = bitrate.unwrap();
        if bitrate <= floor {
            let (_, range_hi) = model.curve(resolution)?.bitrate_range();
            bitrate = (floor * NUDGE_FACTOR).min(range_hi);
        }
        floor = bitrate;
        entries.push(LadderEntry::new(resolution, bitrate));
    }
    Ladder::new(entries)
}
