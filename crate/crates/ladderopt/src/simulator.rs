//! Monte Carlo playback simulator.
//!
//! Replays the player's two selection rules over sampled (viewport,
//! bandwidth) draws instead of integrating over the distributions, so its
//! watch-time shares converge to the analytic viewing probabilities and
//! serve as an independent check on them. Sessions hold one viewport;
//! bandwidth is redrawn per segment or held per session. Each session uses
//! an RNG stream derived from (seed, session index), so reports are
//! deterministic and sessions could be simulated in any order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::player::{select_with_fallback, Ladder};
use crate::rq_model::ChunkRqModel;
use crate::stats::{BandwidthDistribution, ViewportDistribution};

/// Shape of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_sessions: usize,
    pub segments_per_session: usize,
    /// Wall-clock length of one segment, used only to scale the switch
    /// rate to per-hour units.
    pub segment_duration_s: f64,
    pub seed: u64,
    /// Redraw bandwidth every segment; otherwise one draw serves the whole
    /// session.
    pub resample_bandwidth_per_segment: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_sessions: 1000,
            segments_per_session: 20,
            segment_duration_s: 5.0,
            seed: 0,
            resample_bandwidth_per_segment: true,
        }
    }
}

/// Aggregated outcome of simulated playback of one ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub chunk_id: String,
    /// The simulated ladder's (resolution, bitrate) pairs in entry order.
    pub entries: Vec<(u32, f64)>,
    /// Fraction of segment downloads that used each entry.
    pub empirical_lambda: Vec<f64>,
    /// Probability-weighted mean of the entry bitrates.
    pub empirical_avg_bitrate: f64,
    /// Probability-weighted mean of the entry qualities.
    pub empirical_avg_quality: f64,
    /// Fraction of watch time spent at each resolution.
    pub watch_time_by_resolution: BTreeMap<u32, f64>,
    /// Representation switches per session-hour.
    pub switch_rate: f64,
    /// Fraction of segments where even the cheapest eligible entry was at
    /// or above the bandwidth estimate.
    pub fallback_fraction: f64,
}

/// Simulates playback sessions of `ladder` and aggregates watch statistics.
pub fn simulate(
    ladder: &Ladder,
    model: &ChunkRqModel,
    viewport: &ViewportDistribution,
    bandwidth: &BandwidthDistribution,
    config: &SimConfig,
) -> Result<SimReport> {
    if config.num_sessions == 0 || config.segments_per_session == 0 {
        return Err(Error::EmptySimulation);
    }
    let entries = ladder.entries();
    let n = entries.len();
    let quality: Vec<f64> = entries
        .iter()
        .map(|e| Ok(model.curve(e.resolution)?.eval_quality(e.bitrate)))
        .collect::<Result<_>>()?;

    let mut counts = vec![0u64; n];
    let mut fallback_count = 0u64;
    let mut switches = 0u64;
    for session in 0..config.num_sessions {
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        rng.set_stream(session as u64);
        let viewport_height = viewport.sample(rng.gen::<f64>());
        let mut session_bandwidth = bandwidth.sample(rng.gen::<f64>());
        let mut previous: Option<usize> = None;
        for _ in 0..config.segments_per_session {
            if config.resample_bandwidth_per_segment {
                session_bandwidth = bandwidth.sample(rng.gen::<f64>());
            }
            let (index, fell_back) =
                select_with_fallback(entries, viewport_height, session_bandwidth);
            counts[index] += 1;
            if fell_back {
                fallback_count += 1;
            }
            if previous.is_some_and(|p| p != index) {
                switches += 1;
            }
            previous = Some(index);
        }
    }

    let total = (config.num_sessions * config.segments_per_session) as f64;
    let empirical_lambda: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let empirical_avg_bitrate = empirical_lambda
        .iter()
        .zip(entries)
        .map(|(l, e)| l * e.bitrate)
        .sum();
    let empirical_avg_quality = empirical_lambda
        .iter()
        .zip(&quality)
        .map(|(l, q)| l * q)
        .sum();
    let mut watch_time_by_resolution = BTreeMap::new();
    for (l, e) in empirical_lambda.iter().zip(entries) {
        *watch_time_by_resolution.entry(e.resolution).or_insert(0.0) += l;
    }
    let session_hours = total * config.segment_duration_s / 3600.0;

    Ok(SimReport {
        chunk_id: model.chunk_id().to_string(),
        entries: entries.iter().map(|e| (e.resolution, e.bitrate)).collect(),
        empirical_lambda,
        empirical_avg_bitrate,
        empirical_avg_quality,
        watch_time_by_resolution,
        switch_rate: switches as f64 / session_hours,
        fallback_fraction: fallback_count as f64 / total,
    })
}

/// One ladder's simulated outcome relative to the reference ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    /// `R / R_ref - 1`.
    pub bitrate_change: f64,
    /// `Q - Q_ref`.
    pub quality_delta: f64,
    /// Per-resolution watch-time fraction minus the reference fraction.
    pub watch_time_shift: BTreeMap<u32, f64>,
    /// Per-resolution `r / r_ref - 1` for resolutions both ladders carry.
    pub bitrate_ratio_by_resolution: BTreeMap<u32, f64>,
}

/// Simulated ladders on one chunk, each measured against a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub chunk_id: String,
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
}

/// Compares each report against `reference`, which must be one of the keys.
pub fn compare(
    reports: &BTreeMap<String, SimReport>,
    reference: &str,
) -> Result<ComparisonReport> {
    if reports.len() < 2 {
        return Err(Error::TooFewReports);
    }
    let base = reports.get(reference).ok_or_else(|| Error::MissingReference {
        name: reference.to_string(),
    })?;
    let base_bitrates: BTreeMap<u32, f64> = first_bitrate_per_resolution(&base.entries);

    let mut rows = Vec::new();
    for (name, report) in reports {
        if report.chunk_id != base.chunk_id {
            return Err(Error::MismatchedChunks {
                a: base.chunk_id.clone(),
                b: report.chunk_id.clone(),
            });
        }
        if name == reference {
            continue;
        }
        let mut watch_time_shift = BTreeMap::new();
        for (&res, &fraction) in &report.watch_time_by_resolution {
            watch_time_shift.insert(res, fraction);
        }
        for (&res, &fraction) in &base.watch_time_by_resolution {
            *watch_time_shift.entry(res).or_insert(0.0) -= fraction;
        }
        let bitrate_ratio_by_resolution = first_bitrate_per_resolution(&report.entries)
            .into_iter()
            .filter_map(|(res, bitrate)| {
                base_bitrates.get(&res).map(|&b| (res, bitrate / b - 1.0))
            })
            .collect();
        rows.push(ComparisonRow {
            name: name.clone(),
            bitrate_change: report.empirical_avg_bitrate / base.empirical_avg_bitrate - 1.0,
            quality_delta: report.empirical_avg_quality - base.empirical_avg_quality,
            watch_time_shift,
            bitrate_ratio_by_resolution,
        });
    }

    Ok(ComparisonReport {
        chunk_id: base.chunk_id.clone(),
        reference: reference.to_string(),
        rows,
    })
}

fn first_bitrate_per_resolution(entries: &[(u32, f64)]) -> BTreeMap<u32, f64> {
    let mut map = BTreeMap::new();
    for &(res, bitrate) in entries {
        map.entry(res).or_insert(bitrate);
    }
    map
}
