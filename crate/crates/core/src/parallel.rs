//! Row-parallel dense kernels.
//!
//! Every kernel has a `_seq` and (with the `parallel` feature) a `_par`
//! variant. Both variants reduce each output element in the same order, so
//! their results are bit-identical; the dispatching functions only choose
//! which one runs. Parallelism is always over independent output rows or
//! output units, never over a reduction axis.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the sequential path is used.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 1 << 15;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn forward_row(x_row: &[f64], w: &[f64], b: &[f64], in_dim: usize, out_row: &mut [f64]) {
    for (o, out) in out_row.iter_mut().enumerate() {
        *out = b[o] + dot(x_row, &w[o * in_dim..(o + 1) * in_dim]);
    }
}

fn input_grad_row(g_row: &[f64], w: &[f64], in_dim: usize, dx_row: &mut [f64]) {
    dx_row.iter_mut().for_each(|v| *v = 0.0);
    for (o, &g) in g_row.iter().enumerate() {
        if g != 0.0 {
            axpy(g, &w[o * in_dim..(o + 1) * in_dim], dx_row);
        }
    }
}

fn weight_grad_unit(o: usize, g: &[f64], x: &[f64], out_dim: usize, in_dim: usize, dw_row: &mut [f64], db: &mut f64) {
    let rows = g.len() / out_dim;
    for r in 0..rows {
        let gro = g[r * out_dim + o];
        if gro != 0.0 {
            axpy(gro, &x[r * in_dim..(r + 1) * in_dim], dw_row);
            *db += gro;
        }
    }
}

/// `out[r, o] = b[o] + sum_i x[r, i] * w[o, i]` with `w` stored row-major `(out, in)`.
pub fn linear_forward_seq(x: &[f64], in_dim: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let out_dim = b.len();
    for (x_row, out_row) in x.chunks_exact(in_dim).zip(out.chunks_exact_mut(out_dim)) {
        forward_row(x_row, w, b, in_dim, out_row);
    }
}

#[cfg(feature = "parallel")]
pub fn linear_forward_par(x: &[f64], in_dim: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let out_dim = b.len();
    x.par_chunks_exact(in_dim)
        .zip(out.par_chunks_exact_mut(out_dim))
        .for_each(|(x_row, out_row)| forward_row(x_row, w, b, in_dim, out_row));
}

/// `dx[r, i] = sum_o g[r, o] * w[o, i]`.
pub fn linear_input_grad_seq(g: &[f64], w: &[f64], in_dim: usize, out_dim: usize, dx: &mut [f64]) {
    for (g_row, dx_row) in g.chunks_exact(out_dim).zip(dx.chunks_exact_mut(in_dim)) {
        input_grad_row(g_row, w, in_dim, dx_row);
    }
}

#[cfg(feature = "parallel")]
pub fn linear_input_grad_par(g: &[f64], w: &[f64], in_dim: usize, out_dim: usize, dx: &mut [f64]) {
    g.par_chunks_exact(out_dim)
        .zip(dx.par_chunks_exact_mut(in_dim))
        .for_each(|(g_row, dx_row)| input_grad_row(g_row, w, in_dim, dx_row));
}

/// Accumulates `dw[o, i] += sum_r g[r, o] * x[r, i]` and `db[o] += sum_r g[r, o]`.
pub fn linear_weight_grad_seq(g: &[f64], x: &[f64], in_dim: usize, dw: &mut [f64], db: &mut [f64]) {
    let out_dim = db.len();
    for (o, (dw_row, dbo)) in dw.chunks_exact_mut(in_dim).zip(db.iter_mut()).enumerate() {
        weight_grad_unit(o, g, x, out_dim, in_dim, dw_row, dbo);
    }
}

#[cfg(feature = "parallel")]
pub fn linear_weight_grad_par(g: &[f64], x: &[f64], in_dim: usize, dw: &mut [f64], db: &mut [f64]) {
    let out_dim = db.len();
    dw.par_chunks_exact_mut(in_dim)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(o, (dw_row, dbo))| weight_grad_unit(o, g, x, out_dim, in_dim, dw_row, dbo));
}

pub fn linear_forward(x: &[f64], in_dim: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if x.len() * b.len() >= PAR_THRESHOLD {
        return linear_forward_par(x, in_dim, w, b, out);
    }
    linear_forward_seq(x, in_dim, w, b, out)
}

pub fn linear_input_grad(g: &[f64], w: &[f64], in_dim: usize, out_dim: usize, dx: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if g.len() * in_dim >= PAR_THRESHOLD {
        return linear_input_grad_par(g, w, in_dim, out_dim, dx);
    }
    linear_input_grad_seq(g, w, in_dim, out_dim, dx)
}

pub fn linear_weight_grad(g: &[f64], x: &[f64], in_dim: usize, dw: &mut [f64], db: &mut [f64]) {
    #[cfg(feature = "parallel")]
    if g.len() * in_dim >= PAR_THRESHOLD {
        return linear_weight_grad_par(g, x, in_dim, dw, db);
    }
    linear_weight_grad_seq(g, x, in_dim, dw, db)
}

/// Maps `f` over `0..n`, in parallel when the feature is enabled.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_forward(x: &[f64], in_dim: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
        let out_dim = b.len();
        let rows = x.len() / in_dim;
        let mut out = vec![0.0; rows * out_dim];
        for r in 0..rows {
            for o in 0..out_dim {
                let mut s = b[o];
                for i in 0..in_dim {
                    s += x[r * in_dim + i] * w[o * in_dim + i];
                }
                out[r * out_dim + o] = s;
            }
        }
        out
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..7).map(|i| i as f64).collect();
        assert_eq!(dot(&a, &a), 91.0);
        assert_eq!(dot(&[], &[]), 0.0);
    }

    proptest! {
        #[test]
        fn forward_matches_naive(rows in 1usize..6, in_dim in 1usize..9, out_dim in 1usize..7, seed in 0u64..1000) {
            let gen = |n: usize, s: u64| -> Vec<f64> {
                (0..n).map(|i| (((i as u64 + 1) * (s + 7) * 2654435761) % 1000) as f64 / 500.0 - 1.0).collect()
            };
            let x = gen(rows * in_dim, seed);
            let w = gen(out_dim * in_dim, seed + 1);
            let b = gen(out_dim, seed + 2);
            let mut out = vec![0.0; rows * out_dim];
            linear_forward_seq(&x, in_dim, &w, &b, &mut out);
            let naive = naive_forward(&x, in_dim, &w, &b);
            for (a, e) in out.iter().zip(&naive) {
                prop_assert!((a - e).abs() < 1e-12);
            }
        }

        #[cfg(feature = "parallel")]
        #[test]
        fn parallel_is_bit_identical(rows in 1usize..40, in_dim in 1usize..20, out_dim in 1usize..20, seed in 0u64..1000) {
            let gen = |n: usize, s: u64| -> Vec<f64> {
                (0..n).map(|i| ((((i as u64 + 3) * (s + 11)) * 40503) % 997) as f64 / 300.0 - 1.5).collect()
            };
            let x = gen(rows * in_dim, seed);
            let w = gen(out_dim * in_dim, seed + 1);
            let b = gen(out_dim, seed + 2);
            let g = gen(rows * out_dim, seed + 3);

            let (mut o1, mut o2) = (vec![0.0; rows * out_dim], vec![0.0; rows * out_dim]);
            linear_forward_seq(&x, in_dim, &w, &b, &mut o1);
            linear_forward_par(&x, in_dim, &w, &b, &mut o2);
            prop_assert_eq!(o1, o2);

            let (mut d1, mut d2) = (vec![0.0; rows * in_dim], vec![0.0; rows * in_dim]);
            linear_input_grad_seq(&g, &w, in_dim, out_dim, &mut d1);
            linear_input_grad_par(&g, &w, in_dim, out_dim, &mut d2);
            prop_assert_eq!(d1, d2);

            let (mut w1, mut w2) = (vec![0.0; out_dim * in_dim], vec![0.0; out_dim * in_dim]);
            let (mut b1, mut b2) = (vec![0.0; out_dim], vec![0.0; out_dim]);
            linear_weight_grad_seq(&g, &x, in_dim, &mut w1, &mut b1);
            linear_weight_grad_par(&g, &x, in_dim, &mut w2, &mut b2);
            prop_assert_eq!(w1, w2);
            prop_assert_eq!(b1, b2);
        }
    }
}
