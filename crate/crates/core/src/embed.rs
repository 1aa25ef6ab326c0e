//! Sinusoidal embedding of small real-valued feature vectors.

use alloc::vec::Vec;

/// Largest wavelength of the geometric frequency ladder.
pub const MAX_WAVELENGTH: f64 = 1000.0;

/// `count` frequencies `scale / λ_m` with wavelengths `λ_m` geometric from 1 to [`MAX_WAVELENGTH`].
pub fn geometric_frequencies(count: usize, scale: f64) -> Vec<f64> {
    (0..count)
        .map(|m| {
            let t = if count > 1 { m as f64 / (count - 1) as f64 } else { 0.0 };
            scale / libm::pow(MAX_WAVELENGTH, t)
        })
        .collect()
}

/// For every input scalar `x` and frequency `f`, emits `sin(f x), cos(f x)`.
/// Output length is `2 * x.len() * freqs.len()`.
pub fn sinusoidal_embed(x: &[f64], freqs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * x.len() * freqs.len());
    for v in x {
        for f in freqs {
            let a = v * f;
            out.push(libm::sin(a));
            out.push(libm::cos(a));
        }
    }
    out
}
