//! Deterministic samplers on top of the SplitMix64 stream.

use crate::dist::Distribution;
use crate::prf::SplitMix64;

/// Inverse-CDF draw over the support in index order from a single uniform.
///
/// Returns the first index whose cumulative mass exceeds `u`; if floating
/// point leaves `u` beyond the final cumulative sum, falls back to the last
/// index with positive mass, so zero-mass outcomes are never produced.
pub fn sample_index(dist: &Distribution, u: f64) -> usize {
    let probs = dist.probs();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cum += p;
        if u < cum && p > 0.0 {
            return i;
        }
    }
    last_positive
}

/// Standard normal via Box-Muller; consumes exactly two uniforms.
pub fn standard_normal(stream: &mut SplitMix64) -> f64 {
    // 1 - u lies in (0, 1], keeping the log finite
    let u1 = 1.0 - stream.next_f64();
    let u2 = stream.next_f64();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gamma(shape, 1) via Marsaglia-Tsang, with the standard boost for
/// shape < 1. Draw count varies with rejections but the stream order is
/// fixed, so results are deterministic given the stream state.
pub fn gamma(stream: &mut SplitMix64, shape: f64) -> f64 {
    assert!(shape > 0.0, "gamma shape must be positive");
    if shape < 1.0 {
        let boost = (1.0 - stream.next_f64()).powf(1.0 / shape);
        return gamma(stream, shape + 1.0) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (3.0 * d.sqrt());
    loop {
        let x = standard_normal(stream);
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u = stream.next_f64();
        if u < 1.0 - 0.0331 * x.powi(4) {
            return d * v;
        }
        if u > 0.0 && u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}
