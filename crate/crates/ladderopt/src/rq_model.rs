//! Per-chunk rate-quality curves.
//!
//! Each encoded resolution of a chunk gets a [`RateQualityCurve`]: a set of
//! (bitrate, quality) samples measured from an encoder sweep, interpolated
//! piecewise linearly in between. Queries outside the sampled range clamp to
//! the nearest endpoint rather than extrapolate, so a curve is only trusted
//! where it was measured. A [`ChunkRqModel`] collects the curves of one chunk
//! keyed by resolution.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One measured point of an encoder sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RqSample {
    /// Encoded bitrate in bits per second.
    pub bitrate: f64,
    /// Quality score at that bitrate, measured against the source.
    pub quality: f64,
    /// Optional encoder setting that produced the sample, e.g. "crf23".
    pub label: Option<String>,
}

impl RqSample {
    pub fn new(bitrate: f64, quality: f64) -> Self {
        RqSample {
            bitrate,
            quality,
            label: None,
        }
    }

    pub fn labeled(bitrate: f64, quality: f64, label: impl Into<String>) -> Self {
        RqSample {
            bitrate,
            quality,
            label: Some(label.into()),
        }
    }
}

/// Sampled rate-quality curve for one encoded resolution.
///
/// Invariants, enforced at construction: at least two samples, bitrates
/// strictly ascending, qualities non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RateQualityCurve {
    resolution: u32,
    samples: Vec<RqSample>,
}

impl RateQualityCurve {
    /// Builds a curve from samples that must already satisfy the invariants.
    pub fn new(resolution: u32, samples: Vec<RqSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooFewSamples {
                count: samples.len(),
            });
        }
        for sample in &samples {
            if !(sample.bitrate.is_finite() && sample.bitrate > 0.0) {
                return Err(Error::BadSampleBitrate {
                    bitrate: sample.bitrate,
                });
            }
            if !sample.quality.is_finite() {
                return Err(Error::BadSampleQuality {
                    quality: sample.quality,
                });
            }
        }
        for pair in samples.windows(2) {
            if pair[1].bitrate == pair[0].bitrate {
                return Err(Error::DuplicateSampleBitrate {
                    resolution,
                    bitrate: pair[1].bitrate,
                });
            }
            if pair[1].bitrate < pair[0].bitrate {
                return Err(Error::BadSampleBitrate {
                    bitrate: pair[1].bitrate,
                });
            }
            if pair[1].quality < pair[0].quality {
                return Err(Error::NonMonotoneQuality {
                    resolution,
                    bitrate: pair[1].bitrate,
                });
            }
        }
        Ok(RateQualityCurve {
            resolution,
            samples,
        })
    }

    /// Builds a curve from raw sweep output: sorts by bitrate and repairs
    /// non-monotone qualities with a running maximum.
    ///
    /// Returns the curve and the number of samples whose quality was raised,
    /// so callers can surface a warning when the input needed repair.
    pub fn from_samples(resolution: u32, mut samples: Vec<RqSample>) -> Result<(Self, usize)> {
        for sample in &samples {
            if !(sample.bitrate.is_finite() && sample.bitrate > 0.0) {
                return Err(Error::BadSampleBitrate {
                    bitrate: sample.bitrate,
                });
            }
            if !sample.quality.is_finite() {
                return Err(Error::BadSampleQuality {
                    quality: sample.quality,
                });
            }
        }
        samples.sort_by(|a, b| a.bitrate.total_cmp(&b.bitrate));
        for pair in samples.windows(2) {
            if pair[1].bitrate == pair[0].bitrate {
                return Err(Error::DuplicateSampleBitrate {
                    resolution,
                    bitrate: pair[1].bitrate,
                });
            }
        }
        let mut repaired = 0;
        let mut running = f64::NEG_INFINITY;
        for sample in &mut samples {
            if sample.quality < running {
                sample.quality = running;
                repaired += 1;
            } else {
                running = sample.quality;
            }
        }
        Ok((Self::new(resolution, samples)?, repaired))
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn samples(&self) -> &[RqSample] {
        &self.samples
    }

    /// Lowest and highest sampled bitrates.
    pub fn bitrate_range(&self) -> (f64, f64) {
        (
            self.samples.first().unwrap().bitrate,
            self.samples.last().unwrap().bitrate,
        )
    }

    /// Quality range implied by the samples.
    pub fn quality_range(&self) -> (f64, f64) {
        (
            self.samples.first().unwrap().quality,
            self.samples.last().unwrap().quality,
        )
    }

    /// First sample carrying the given label, if any.
    pub fn sample_with_label(&self, label: &str) -> Option<&RqSample> {
        self.samples
            .iter()
            .find(|s| s.label.as_deref() == Some(label))
    }

    /// Interpolated quality at `bitrate`, clamped to the sampled range.
    pub fn eval_quality(&self, bitrate: f64) -> f64 {
        let idx = self
            .samples
            .partition_point(|s| s.bitrate <= bitrate);
        if idx == 0 {
            return self.samples[0].quality;
        }
        if idx == self.samples.len() {
            return self.samples[idx - 1].quality;
        }
        let lo = &self.samples[idx - 1];
        let hi = &self.samples[idx];
        let t = (bitrate - lo.bitrate) / (hi.bitrate - lo.bitrate);
        lo.quality + t * (hi.quality - lo.quality)
    }

    /// Right-hand derivative of [`eval_quality`] at `bitrate`.
    ///
    /// Zero below the first sample and at or above the last, where the curve
    /// is clamped flat. At an interior sample the slope of the segment to the
    /// right is returned.
    ///
    /// [`eval_quality`]: RateQualityCurve::eval_quality
    pub fn eval_quality_slope(&self, bitrate: f64) -> f64 {
        let idx = self
            .samples
            .partition_point(|s| s.bitrate <= bitrate);
        if idx == 0 || idx == self.samples.len() {
            return 0.0;
        }
        let lo = &self.samples[idx - 1];
        let hi = &self.samples[idx];
        (hi.quality - lo.quality) / (hi.bitrate - lo.bitrate)
    }
}

/// Parameters of a synthetic rate-quality curve, see [`synth_curve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    /// Quality as bitrate approaches zero.
    pub a: f64,
    /// Quality gained per e-fold of bitrate above the knee.
    pub b: f64,
    /// Bitrate scale at which the curve transitions to logarithmic growth.
    pub r_knee: f64,
}

/// Number of samples emitted by [`synth_curve`], one per sweep step.
pub const SYNTH_SAMPLES: usize = 11;

/// Span of the synthetic sweep in decades of bitrate around the knee.
const SYNTH_DECADES: f64 = 4.0;

/// Generates a synthetic curve `q(r) = a + b * ln(1 + r / r_knee)`.
///
/// The curve is sampled at 11 log-spaced bitrates spanning `r_knee / 100` to
/// `100 * r_knee`, labeled "crf55" (cheapest) down to "crf5" (most expensive)
/// to mirror an encoder sweep at constant-quality settings 55, 50, ..., 5.
pub fn synth_curve(resolution: u32, params: SynthParams) -> Result<RateQualityCurve> {
    let SynthParams { a, b, r_knee } = params;
    if !(a > 0.0 && b > 0.0 && r_knee > 0.0 && a.is_finite() && b.is_finite() && r_knee.is_finite())
    {
        return Err(Error::BadSynthParams { a, b, r_knee });
    }
    let step = SYNTH_DECADES / (SYNTH_SAMPLES - 1) as f64;
    let samples = (0..SYNTH_SAMPLES)
        .map(|i| {
            let bitrate = r_knee / 100.0 * 10f64.powf(step * i as f64);
            let quality = a + b * (bitrate / r_knee).ln_1p();
            let crf = 55 - 5 * i;
            RqSample::labeled(bitrate, quality, format!("crf{crf}"))
        })
        .collect();
    RateQualityCurve::new(resolution, samples)
}

/// All rate-quality curves of one chunk, keyed by resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRqModel {
    chunk_id: String,
    source_resolution: u32,
    curves: BTreeMap<u32, RateQualityCurve>,
}

impl ChunkRqModel {
    pub fn new(
        chunk_id: impl Into<String>,
        source_resolution: u32,
        curves: Vec<RateQualityCurve>,
    ) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::EmptyModel);
        }
        let mut map = BTreeMap::new();
        for curve in curves {
            let resolution = curve.resolution();
            if resolution > source_resolution {
                return Err(Error::CurveAboveSource {
                    resolution,
                    source_resolution,
                });
            }
            if map.insert(resolution, curve).is_some() {
                return Err(Error::DuplicateResolution { resolution });
            }
        }
        Ok(ChunkRqModel {
            chunk_id: chunk_id.into(),
            source_resolution,
            curves: map,
        })
    }

    pub fn chunk_id(&self) -> &str {
        &self.chunk_id
    }

    pub fn source_resolution(&self) -> u32 {
        self.source_resolution
    }

    /// Curve for `resolution`, or an error naming the missing resolution.
    pub fn curve(&self, resolution: u32) -> Result<&RateQualityCurve> {
        self.curves
            .get(&resolution)
            .ok_or(Error::UnknownResolution { resolution })
    }

    /// Curves keyed by resolution, ascending.
    pub fn curves(&self) -> &BTreeMap<u32, RateQualityCurve> {
        &self.curves
    }

    /// Resolutions present in the model, ascending.
    pub fn resolutions(&self) -> Vec<u32> {
        self.curves.keys().copied().collect()
    }
}
