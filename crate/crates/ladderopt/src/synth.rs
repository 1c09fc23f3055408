//! Synthetic corpus generation for tests, benchmarks, and demos.
//!
//! The canonical curve family mimics how measured rate-quality curves nest
//! across resolutions: every resolution follows `q(r) = a + b*ln(1 + r/k)`,
//! lower resolutions deliver more quality per bit at low rates, higher
//! resolutions overtake them one by one as the rate grows, and each adjacent
//! pair crosses exactly once at a known rate. Parameters are solved from
//! those crossover placements, so tests can assert against the intended
//! geometry instead of rediscovering it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::error::Result;
use crate::rq_model::{synth_curve, ChunkRqModel, SynthParams};
use crate::stats::ViewportDistribution;
use crate::trace::TraceRecord;

/// Resolutions of the canonical family, ascending.
pub const FAMILY_RESOLUTIONS: [u32; 6] = [144, 240, 360, 480, 720, 1080];

/// Log-curve gain per resolution; higher resolutions improve faster with
/// rate once past their knee. The 1.5x ratio between neighbors keeps the
/// crossings sharp enough that sampled hull intervals separate cleanly.
const FAMILY_B: [f64; 6] = [1.0, 1.5, 2.25, 3.375, 5.0625, 7.59375];

/// Knee rates in bits per second; higher resolutions need more bits before
/// the curve flattens. Chosen together with the crossover rates so that no
/// resolution's samples poke above a neighbor's hull chords outside its own
/// quality-lead regime.
const FAMILY_KNEE: [f64; 6] = [9e3, 1.9e4, 3.3e4, 7.2e4, 1.2e5, 2.4e5];

/// Rates at which each resolution hands the quality lead to the next one.
pub const FAMILY_CROSSOVERS: [f64; 5] = [7.1e4, 2.0e5, 6.8e5, 1.9e6, 6.4e6];

/// Quality where the 144p and 240p curves meet, anchoring the family.
const FIRST_CROSSOVER_QUALITY: f64 = 29.0;

/// Median of the synthetic bandwidth distribution in bits per second.
pub const TRACE_BANDWIDTH_MEDIAN_BPS: f64 = 1.5e6;

/// Log-scale sigma of the synthetic bandwidth distribution.
pub const TRACE_BANDWIDTH_LOG_SIGMA: f64 = 0.9;

/// Segments per synthetic playback session.
const TRACE_SESSION_SEGMENTS: usize = 20;

/// Segment duration stamped into synthetic trace timestamps.
const TRACE_SEGMENT_MS: i64 = 5000;

/// The canonical six-resolution family with exact crossover placement.
///
/// Solved left to right: the 144p offset comes from the anchored quality at
/// the first crossover, then each next curve is required to pass through the
/// previous curve's value at their shared crossover rate.
pub fn canonical_family() -> Vec<(u32, SynthParams)> {
    let mut family = Vec::with_capacity(FAMILY_RESOLUTIONS.len());
    let mut a = FIRST_CROSSOVER_QUALITY - FAMILY_B[0] * (FAMILY_CROSSOVERS[0] / FAMILY_KNEE[0]).ln_1p();
    for j in 0..FAMILY_RESOLUTIONS.len() {
        family.push((
            FAMILY_RESOLUTIONS[j],
            SynthParams {
                a,
                b: FAMILY_B[j],
                r_knee: FAMILY_KNEE[j],
            },
        ));
        if j + 1 < FAMILY_RESOLUTIONS.len() {
            let x = FAMILY_CROSSOVERS[j];
            let quality_at_crossover = a + FAMILY_B[j] * (x / FAMILY_KNEE[j]).ln_1p();
            a = quality_at_crossover - FAMILY_B[j + 1] * (x / FAMILY_KNEE[j + 1]).ln_1p();
        }
    }
    family
}

/// A per-chunk perturbation of the canonical family.
///
/// `strength` scales the jitter; 0 returns the canonical parameters and 1 is
/// the default corpus variability. Knees move the most (shifting curves along
/// the rate axis), gains and offsets move mildly so the family keeps its
/// nested shape.
pub fn jittered_family<R: Rng>(rng: &mut R, strength: f64) -> Vec<(u32, SynthParams)> {
    let knee_noise = Normal::new(0.0, 0.15 * strength).unwrap();
    let gain_noise = Normal::new(0.0, 0.05 * strength).unwrap();
    let offset_noise = Normal::new(0.0, 0.3 * strength).unwrap();
    canonical_family()
        .into_iter()
        .map(|(resolution, p)| {
            (
                resolution,
                SynthParams {
                    a: (p.a + offset_noise.sample(rng)).max(0.5),
                    b: p.b * gain_noise.sample(rng).exp(),
                    r_knee: p.r_knee * knee_noise.sample(rng).exp(),
                },
            )
        })
        .collect()
}

/// Builds a chunk model from a parameter family.
pub fn synth_chunk_model(chunk_id: &str, family: &[(u32, SynthParams)]) -> Result<ChunkRqModel> {
    let source = family.iter().map(|&(r, _)| r).max().unwrap_or(0);
    let curves = family
        .iter()
        .map(|&(resolution, params)| synth_curve(resolution, params))
        .collect::<Result<Vec<_>>>()?;
    ChunkRqModel::new(chunk_id, source, curves)
}

/// A corpus of jittered chunk models, one independent RNG stream per chunk.
pub fn synth_corpus(chunk_count: usize, seed: u64, jitter: f64) -> Result<Vec<ChunkRqModel>> {
    (0..chunk_count)
        .map(|index| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let family = jittered_family(&mut rng, jitter);
            synth_chunk_model(&format!("chunk{index:03}"), &family)
        })
        .collect()
}

/// Viewport mix used by the synthetic corpus: phone-heavy at the bottom,
/// desktop and TV dominating, a small 1440p/2160p tail.
pub fn default_viewport_pmf() -> BTreeMap<u32, f64> {
    [
        (144, 0.02),
        (240, 0.03),
        (360, 0.10),
        (480, 0.15),
        (720, 0.30),
        (1080, 0.30),
        (1440, 0.06),
        (2160, 0.04),
    ]
    .into_iter()
    .collect()
}

/// Synthetic playback records: sessions of fixed length, one viewport per
/// session, log-normal bandwidth per segment.
pub fn synth_trace_records(count: usize, seed: u64) -> Vec<TraceRecord> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let bandwidth = LogNormal::new(
        TRACE_BANDWIDTH_MEDIAN_BPS.ln(),
        TRACE_BANDWIDTH_LOG_SIGMA,
    )
    .unwrap();
    let viewports = ViewportDistribution::from_pmf(&default_viewport_pmf())
        .expect("default pmf is normalized");
    let mut records = Vec::with_capacity(count);
    let mut session_viewport = 0u32;
    for i in 0..count {
        let segment = i % TRACE_SESSION_SEGMENTS;
        if segment == 0 {
            session_viewport = viewports.sample(rng.gen::<f64>());
        }
        records.push(TraceRecord {
            estimated_bandwidth_bps: bandwidth.sample(&mut rng),
            viewport_height: session_viewport,
            session_id: Some(format!("s{:06}", i / TRACE_SESSION_SEGMENTS)),
            timestamp_ms: Some(segment as i64 * TRACE_SEGMENT_MS),
            weight: None,
        });
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::upper_hull;
    use crate::stats::{ingest_traces, Smoothing};

    fn eval(params: SynthParams, rate: f64) -> f64 {
        params.a + params.b * (rate / params.r_knee).ln_1p()
    }

    #[test]
    fn family_offsets_match_the_solved_values() {
        let family = canonical_family();
        let expected_a = [26.815, 26.667, 25.936, 24.932, 21.811, 16.823];
        for ((_, params), &a) in family.iter().zip(&expected_a) {
            assert!(
                (params.a - a).abs() < 0.01,
                "offset {} vs {a}",
                params.a
            );
        }
        for pair in family.windows(2) {
            assert!(pair[0].1.a > pair[1].1.a);
        }
    }

    #[test]
    fn adjacent_curves_meet_exactly_at_their_crossovers() {
        let family = canonical_family();
        let expected_quality = [29.0, 30.334, 32.851, 36.104, 42.036];
        for (j, &x) in FAMILY_CROSSOVERS.iter().enumerate() {
            let lo = eval(family[j].1, x);
            let hi = eval(family[j + 1].1, x);
            assert!((lo - hi).abs() < 1e-9, "crossover {j}: {lo} vs {hi}");
            assert!((lo - expected_quality[j]).abs() < 0.01);
        }
    }

    #[test]
    fn each_crossover_is_the_unique_local_sign_change() {
        let family = canonical_family();
        for (j, &x) in FAMILY_CROSSOVERS.iter().enumerate() {
            let diff = |r: f64| eval(family[j + 1].1, r) - eval(family[j].1, r);
            let (mut lo, mut hi) = (x / 2.0, x * 2.0);
            assert!(diff(lo) < 0.0);
            assert!(diff(hi) > 0.0);
            for _ in 0..200 {
                let mid = (lo * hi).sqrt();
                if diff(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let root = (lo * hi).sqrt();
            assert!(
                ((root / x).ln()).abs() < 1e-9,
                "crossover {j} found at {root}, expected {x}"
            );
        }
    }

    #[test]
    fn the_best_resolution_is_non_decreasing_in_rate() {
        let family = canonical_family();
        let mut previous_best = 0usize;
        let mut rate = 1e3;
        while rate < 2e7 {
            let best = (0..family.len())
                .max_by(|&i, &j| eval(family[i].1, rate).total_cmp(&eval(family[j].1, rate)))
                .unwrap();
            assert!(
                best >= previous_best,
                "lead regressed to {best} at rate {rate}"
            );
            previous_best = best;
            rate *= 1.05;
        }
        assert_eq!(previous_best, family.len() - 1);
    }

    #[test]
    fn hull_intervals_are_consecutive_and_track_the_crossovers() {
        let model = synth_chunk_model("canonical", &canonical_family()).unwrap();
        let intervals = upper_hull(model.curves());
        let spans: Vec<(f64, f64)> = FAMILY_RESOLUTIONS
            .iter()
            .map(|r| intervals[r].expect("every resolution holds part of the hull"))
            .collect();
        for pair in spans.windows(2) {
            assert!(pair[0].1 <= pair[1].0 * (1.0 + 1e-12));
        }
        // Hand-off points sit within one sample spacing (0.4 decades) of the
        // constructed crossovers.
        for (j, &x) in FAMILY_CROSSOVERS.iter().enumerate() {
            let depart = spans[j].1;
            let arrive = spans[j + 1].0;
            assert!(
                (depart / x).log10().abs() <= 0.45,
                "curve {j} leaves the hull at {depart}, crossover {x}"
            );
            assert!(
                (arrive / x).log10().abs() <= 0.45,
                "curve {} joins the hull at {arrive}, crossover {x}",
                j + 1
            );
        }
        let (lo_first, _) = spans[0];
        let (_, hi_last) = spans[spans.len() - 1];
        let (range_lo, _) = model.curve(144).unwrap().bitrate_range();
        let (_, range_hi) = model.curve(1080).unwrap().bitrate_range();
        assert!((lo_first / range_lo - 1.0).abs() < 1e-9);
        assert!((hi_last / range_hi - 1.0).abs() < 1e-9);
    }

    #[test]
    fn corpus_generation_is_deterministic_and_varied() {
        let a = synth_corpus(3, 42, 1.0).unwrap();
        let b = synth_corpus(3, 42, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.chunk_id(), y.chunk_id());
            for res in x.resolutions() {
                let sx = x.curve(res).unwrap().samples();
                let sy = y.curve(res).unwrap().samples();
                assert_eq!(sx, sy);
            }
        }
        let first = a[0].curve(360).unwrap().samples()[0].bitrate;
        let second = a[1].curve(360).unwrap().samples()[0].bitrate;
        assert_ne!(first, second);
    }

    #[test]
    fn zero_jitter_reproduces_the_canonical_family() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let jittered = jittered_family(&mut rng, 0.0);
        for ((ra, pa), (rb, pb)) in jittered.iter().zip(canonical_family()) {
            assert_eq!(*ra, rb);
            assert_eq!(pa.a, pb.a);
            assert_eq!(pa.b, pb.b);
            assert_eq!(pa.r_knee, pb.r_knee);
        }
    }

    #[test]
    fn synthetic_traces_reproduce_their_generating_distributions() {
        let records = synth_trace_records(50_000, 11);
        let outcome = ingest_traces(
            records.into_iter().map(Ok),
            Smoothing::PiecewiseLinear,
        )
        .unwrap();
        assert_eq!(outcome.records_skipped, 0);
        assert_eq!(outcome.records_used, 50_000);
        for (&height, &target) in &default_viewport_pmf() {
            let got = outcome.viewport.prob_eq(height);
            assert!(
                (got - target).abs() < 0.02,
                "viewport {height}: {got} vs {target}"
            );
        }
        let median_cdf = outcome.bandwidth.cdf(TRACE_BANDWIDTH_MEDIAN_BPS);
        assert!((median_cdf - 0.5).abs() < 0.02);
        assert!(outcome.bandwidth.cdf(5.7e4) < 1e-3);
    }
}
