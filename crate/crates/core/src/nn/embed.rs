use crate::error::{Error, Result};

/// Lowest angular frequency of the time embedding.
pub const BASE_FREQUENCY: f64 = 1.0;
/// Highest angular frequency of the time embedding.
pub const MAX_FREQUENCY: f64 = 64.0;

/// Angular frequency of the `index`-th (sin, cos) pair when the embedding has
/// `pairs` pairs. Frequencies are spaced geometrically from
/// [`BASE_FREQUENCY`] to [`MAX_FREQUENCY`].
pub fn embedding_frequency(index: usize, pairs: usize) -> f64 {
    if pairs <= 1 {
        return BASE_FREQUENCY;
    }
    let ratio = MAX_FREQUENCY / BASE_FREQUENCY;
    BASE_FREQUENCY * ratio.powf(index as f64 / (pairs - 1) as f64)
}

/// Sinusoidal embedding of a scalar time, laid out as interleaved
/// `[sin(w0 t), cos(w0 t), sin(w1 t), cos(w1 t), ...]`.
pub fn sinusoidal_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "time embedding dimension must be even and >= 2, got {dim}"
        )));
    }
    let mut out = vec![0.0; dim];
    sinusoidal_embed_into(t, &mut out);
    Ok(out)
}

/// Writes the embedding of `t` into `out`; `out.len()` must be even.
pub fn sinusoidal_embed_into(t: f64, out: &mut [f64]) {
    let pairs = out.len() / 2;
    let freqs: Vec<f64> = (0..pairs).map(|i| embedding_frequency(i, pairs)).collect();
    embed_with_frequencies(t, &freqs, out);
}

/// Same as [`sinusoidal_embed_into`] with the frequencies supplied, so a
/// batch can compute them once.
pub(crate) fn embed_with_frequencies(t: f64, freqs: &[f64], out: &mut [f64]) {
    for (pair, &w) in out.chunks_exact_mut(2).zip(freqs) {
        let (s, c) = (t * w).sin_cos();
        pair[0] = s;
        pair[1] = c;
    }
}
