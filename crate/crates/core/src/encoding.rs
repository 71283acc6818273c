//! Positional encoding with a coarse-to-fine frequency window.
//!
//! Band k contributes w_k(α)·(cos(2^k π x), sin(2^k π x)); the window w_k
//! opens smoothly as α rises from 0 to the band count, so low frequencies
//! train first and higher bands are admitted as optimization proceeds.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Band count and ramp controlling how fast the frequency window opens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingSchedule {
    /// Number of frequency bands L.
    pub bands: usize,
    /// Iterations over which α rises linearly from 0 to L.
    pub ramp_iters: usize,
    /// Prepend the raw coordinates, unweighted.
    pub include_identity: bool,
}

impl EncodingSchedule {
    pub fn new(bands: usize, ramp_iters: usize, include_identity: bool) -> Self {
        assert!(bands >= 1, "need at least one band");
        assert!(ramp_iters >= 1, "ramp must span at least one iteration");
        Self { bands, ramp_iters, include_identity }
    }

    /// Output length of [`encode`] under this schedule.
    pub fn output_len(&self) -> usize {
        3 * (2 * self.bands + usize::from(self.include_identity))
    }

    /// Fully-open schedule (α = L from iteration 0); used for view
    /// directions, which are never windowed.
    pub fn unwindowed(bands: usize, include_identity: bool) -> Self {
        Self::new(bands, 1, include_identity)
    }
}

/// α at a training iteration: L · min(1, iter / ramp_iters).
pub fn alpha_at(schedule: &EncodingSchedule, iter: usize) -> f64 {
    let frac = (iter as f64 / schedule.ramp_iters as f64).min(1.0);
    schedule.bands as f64 * frac
}

/// Window weight for band k at progress α: 0 before the band's onset,
/// (1 − cos((α−k)π))/2 across it, 1 once fully open.
pub fn frequency_weight(k: usize, alpha: f64) -> f64 {
    let a = alpha - k as f64;
    if a < 0.0 {
        0.0
    } else if a < 1.0 {
        // cos(aπ) via sin(π(0.5 − a)): the reduction is exact at the
        // half-open point, so w(k + 0.5) is exactly 0.5.
        (1.0 - (std::f64::consts::PI * (0.5 - a)).sin()) / 2.0
    } else {
        1.0
    }
}

/// Windowed sinusoidal encoding of a 3-vector.
///
/// Layout: optional raw (x, y, z), then per band k the six values
/// w_k·(cos(2^k π x), cos(2^k π y), cos(2^k π z), sin(2^k π x), sin(..y), sin(..z)).
pub fn encode(x: &Vector3<f64>, schedule: &EncodingSchedule, alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(schedule.output_len());
    encode_into(x, schedule, alpha, &mut out);
    out
}

/// [`encode`] appending into an existing buffer; avoids per-sample
/// allocation in batched paths.
pub fn encode_into(x: &Vector3<f64>, schedule: &EncodingSchedule, alpha: f64, out: &mut Vec<f64>) {
    if schedule.include_identity {
        out.extend_from_slice(&[x.x, x.y, x.z]);
    }
    let mut freq = std::f64::consts::PI;
    for k in 0..schedule.bands {
        let w = frequency_weight(k, alpha);
        if w == 0.0 {
            out.extend_from_slice(&[0.0; 6]);
        } else {
            let (sx, cx) = (freq * x.x).sin_cos();
            let (sy, cy) = (freq * x.y).sin_cos();
            let (sz, cz) = (freq * x.z).sin_cos();
            out.extend_from_slice(&[w * cx, w * cy, w * cz, w * sx, w * sy, w * sz]);
        }
        freq *= 2.0;
    }
}
