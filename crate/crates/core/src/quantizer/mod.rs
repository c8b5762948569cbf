//! Vector quantization: EMA-trained codebooks, residual stacks, token files,
//! and the Lloyd's k-means baseline. All of them minimise the same
//! distortion, `(1/T)·Σ_t (1/H)·‖z_t − e_{assign(t)}‖²`.

mod codebook;
mod kmeans;
mod rvq;
mod tokens;

pub use codebook::{
    init_codebook_from_latents, quantize_vq, Assignment, Codebook, VqOutput, DEFAULT_COUNT_FLOOR,
    DEFAULT_GAMMA,
};
pub use kmeans::{kmeans_fit, kmeans_plus_plus, kmeans_predict, KMeansFit, DEFAULT_KMEANS_TOL};
pub use rvq::{quantize_rvq, RvqOutput, RvqStack};
pub use tokens::{
    decode_token_bytes, encode_token_bytes, read_token_file, write_token_file, TokenSequence,
    TOKEN_MAGIC, TOKEN_VERSION,
};

use crate::error::{Error, Result};
use crate::tensor::{squared_distance, squared_distance_f64, Matrix, Real};

/// Index of the entry nearest to `z`; ties go to the lowest index.
pub(crate) fn nearest<F: Real>(entries: &Matrix<F>, z: &[F]) -> usize {
    let mut best = 0;
    let mut best_d = F::infinity();
    for (k, e) in entries.iter_rows().enumerate() {
        let d = squared_distance(e, z);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

pub(crate) fn check_dim<F: Real>(entries: &Matrix<F>, data: &Matrix<F>, what: &str) -> Result<()> {
    if entries.cols() != data.cols() {
        return Err(Error::Contract(format!(
            "{what}: data dimension {} does not match codebook dimension {}",
            data.cols(),
            entries.cols()
        )));
    }
    Ok(())
}

/// `(1/T)·Σ_t (1/H)·‖a_t − b_t‖²`, accumulated in f64. Zero for empty input.
pub fn mean_normalized_sq_error<F: Real>(a: &Matrix<F>, b: &Matrix<F>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let (t, h) = a.shape();
    if t == 0 || h == 0 {
        return 0.0;
    }
    let total: f64 = a
        .iter_rows()
        .zip(b.iter_rows())
        .map(|(x, y)| squared_distance_f64(x, y) / h as f64)
        .sum();
    total / t as f64
}

/// The clustering objective shared by VQ and k-means: mean dimension-normalised
/// squared distance from each row of `data` to its nearest row of `centers`.
pub fn distortion<F: Real>(data: &Matrix<F>, centers: &Matrix<F>) -> Result<f64> {
    check_dim(centers, data, "distortion")?;
    if centers.rows() == 0 {
        return Err(Error::Contract("distortion against an empty codebook".into()));
    }
    if data.rows() == 0 {
        return Ok(0.0);
    }
    let quantized = Matrix::from_rows(
        &data
            .iter_rows()
            .map(|z| centers.row(nearest(centers, z)))
            .collect::<Vec<_>>(),
    )?;
    Ok(mean_normalized_sq_error(data, &quantized))
}

/// Quantization has identity Jacobian for encoder training; codebooks never
/// receive gradient and learn only through their EMA statistics.
pub fn straight_through<F: Real>(grad_wrt_quantized: &Matrix<F>) -> Matrix<F> {
    grad_wrt_quantized.clone()
}
