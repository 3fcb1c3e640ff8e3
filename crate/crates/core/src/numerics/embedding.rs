use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Sinusoidal features `[sin(w_0 t) .. sin(w_{h-1} t), cos(w_0 t) .. cos(w_{h-1} t)]`
/// with `h = dim / 2` and frequencies geometric from 1 to 1e4.
pub fn time_embedding(t: f64, dim: usize) -> Result<Tensor> {
    check_dim(dim)?;
    let mut out = vec![0.0; dim];
    fill_row(t, &mut out)?;
    Ok(Tensor::vector(out))
}

/// Row-stacked embeddings for a batch of times, shape `(ts.len(), dim)`.
pub fn time_embedding_batch(ts: &[f64], dim: usize) -> Result<Tensor> {
    check_dim(dim)?;
    let mut data = vec![0.0; ts.len() * dim];
    for (&t, row) in ts.iter().zip(data.chunks_exact_mut(dim)) {
        fill_row(t, row)?;
    }
    Tensor::matrix(ts.len(), dim, data)
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "time embedding dim must be even and >= 2, got {dim}"
        )));
    }
    Ok(())
}

fn frequency(j: usize, half: usize) -> f64 {
    if half == 1 {
        1.0
    } else {
        10f64.powf(4.0 * j as f64 / (half - 1) as f64)
    }
}

fn fill_row(t: f64, row: &mut [f64]) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("diffusion time {t} outside [0, 1]")));
    }
    let half = row.len() / 2;
    for j in 0..half {
        let (s, c) = (frequency(j, half) * t).sin_cos();
        row[j] = s;
        row[half + j] = c;
    }
    Ok(())
}
