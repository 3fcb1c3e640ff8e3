use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Dense, ParamGrads, Parameterized, Tensor};

/// Dense U-Net: an encoder stack, a middle block, and a decoder stack whose
/// inputs concatenate the previous decoder output with the encoder
/// activation at the same depth.
///
/// With encoder widths `[w1, ..., wd]`:
///
/// ```text
/// h1 = silu(E1 x)          ... hd = silu(Ed h_{d-1})
/// m  = silu(M hd)
/// ud = silu(Dd [m, hd])    ... u2 = silu(D2 [u3, h2])
/// y  = D1 [u2, h1]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseUNet {
    encoder: Vec<Dense>,
    middle: Dense,
    decoder: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct UNetTape {
    input: Tensor,
    enc_pre: Vec<Tensor>,
    enc_out: Vec<Tensor>,
    mid_pre: Tensor,
    mid_out: Tensor,
    /// Concatenated inputs and pre-activations of decoder layers, in
    /// decoder order (deepest first).
    dec_in: Vec<Tensor>,
    dec_pre: Vec<Tensor>,
}

impl DenseUNet {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, widths: &[usize], output_dim: usize, rng: &mut R) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::Config(format!("invalid encoder widths {widths:?}")));
        }
        let d = widths.len();
        let mut encoder = Vec::with_capacity(d);
        let mut prev = input_dim;
        for &w in widths {
            encoder.push(Dense::new(prev, w, Activation::Silu, rng));
            prev = w;
        }
        let middle = Dense::new(widths[d - 1], widths[d - 1], Activation::Silu, rng);
        // decoder[j] serves depth d - j (1-based)
        let mut decoder = Vec::with_capacity(d);
        for depth in (1..=d).rev() {
            let w = widths[depth - 1];
            let in_dim = 2 * w;
            if depth == 1 {
                decoder.push(Dense::new(in_dim, output_dim, Activation::Identity, rng));
            } else {
                decoder.push(Dense::new(in_dim, widths[depth - 2], Activation::Silu, rng));
            }
        }
        Ok(Self {
            encoder,
            middle,
            decoder,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.decoder[self.decoder.len() - 1].out_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.encoder.iter().map(|l| l.out_dim()).collect()
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, UNetTape)> {
        let mut enc_pre = Vec::with_capacity(self.encoder.len());
        let mut enc_out: Vec<Tensor> = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (p, o) = layer.forward(enc_out.last().unwrap_or(x))?;
            enc_pre.push(p);
            enc_out.push(o);
        }
        let (mid_pre, mid_out) = self.middle.forward(enc_out.last().expect("non-empty encoder"))?;
        let d = self.encoder.len();
        let mut dec_in = Vec::with_capacity(d);
        let mut dec_pre = Vec::with_capacity(d);
        let mut prev = mid_out.clone();
        for (j, layer) in self.decoder.iter().enumerate() {
            let skip = &enc_out[d - 1 - j];
            let input = Tensor::concat_cols(&[&prev, skip])?;
            let (p, o) = layer.forward(&input)?;
            dec_in.push(input);
            dec_pre.push(p);
            prev = o;
        }
        Ok((
            prev,
            UNetTape {
                input: x.clone(),
                enc_pre,
                enc_out,
                mid_pre,
                mid_out,
                dec_in,
                dec_pre,
            },
        ))
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, tape: &UNetTape, output_grad: &Tensor) -> Result<(ParamGrads, Tensor)> {
        let d = self.encoder.len();
        if tape.enc_out.len() != d || tape.dec_in.len() != d {
            return Err(Error::Consistency("U-Net tape depth does not match network".into()));
        }
        let mut grads = self.zero_grads();
        // group layout: encoder (2 each), middle (2), decoder (2 each)
        let mid_base = 2 * d;
        let dec_base = mid_base + 2;
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; d];
        let mut g = output_grad.clone();
        for j in (0..d).rev() {
            let layer = &self.decoder[j];
            let (dw, db) = grads.0[dec_base + 2 * j..dec_base + 2 * j + 2].split_at_mut(1);
            let g_in = layer
                .backward_into(&tape.dec_in[j], &tape.dec_pre[j], &g, &mut dw[0], &mut db[0], true)?
                .expect("input grad");
            let prev_width = g_in.cols() - tape.enc_out[d - 1 - j].cols();
            let mut parts = g_in.split_cols(&[prev_width, tape.enc_out[d - 1 - j].cols()])?;
            skip_grads[d - 1 - j] = parts.pop();
            g = parts.pop().expect("two parts");
        }
        // g is now the gradient w.r.t. the middle block output
        {
            let (dw, db) = grads.0[mid_base..mid_base + 2].split_at_mut(1);
            g = self
                .middle
                .backward_into(&tape.enc_out[d - 1], &tape.mid_pre, &g, &mut dw[0], &mut db[0], true)?
                .expect("input grad");
        }
        for i in (0..d).rev() {
            let skip = skip_grads[i].take().expect("every depth has a skip");
            let total: Vec<f64> = g.data().iter().zip(skip.data()).map(|(a, b)| a + b).collect();
            let g_out = Tensor::new(g.shape().to_vec(), total)?;
            let input = if i == 0 { &tape.input } else { &tape.enc_out[i - 1] };
            let (dw, db) = grads.0[2 * i..2 * i + 2].split_at_mut(1);
            g = self.encoder[i]
                .backward_into(input, &tape.enc_pre[i], &g_out, &mut dw[0], &mut db[0], true)?
                .expect("input grad");
        }
        debug_assert_eq!(tape.mid_out.cols(), self.middle.out_dim());
        Ok((grads, g))
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.middle))
            .chain(self.decoder.iter())
    }

    /// Rebuilds a network from layers in [`DenseUNet::layers`] order.
    pub fn from_layers(mut layers: Vec<Dense>) -> Result<Self> {
        if layers.len() < 3 || layers.len().is_multiple_of(2) {
            return Err(Error::Consistency(format!(
                "a dense U-Net has 2*depth+1 layers, got {}",
                layers.len()
            )));
        }
        let d = (layers.len() - 1) / 2;
        let decoder = layers.split_off(d + 1);
        let middle = layers.pop().expect("middle");
        let net = Self {
            encoder: layers,
            middle,
            decoder,
        };
        let widths = net.widths();
        for (i, l) in net.encoder.iter().enumerate().skip(1) {
            if l.in_dim() != widths[i - 1] {
                return Err(Error::Shape(format!("encoder layer {i} has input {}", l.in_dim())));
            }
        }
        if net.middle.in_dim() != widths[d - 1] || net.middle.out_dim() != widths[d - 1] {
            return Err(Error::Shape("middle block width mismatch".into()));
        }
        for (j, l) in net.decoder.iter().enumerate() {
            let depth = d - j;
            if l.in_dim() != 2 * widths[depth - 1] || (depth > 1 && l.out_dim() != widths[depth - 2]) {
                return Err(Error::Shape(format!("decoder layer at depth {depth} has wrong dims")));
            }
        }
        Ok(net)
    }
}

impl Parameterized for DenseUNet {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers().flat_map(|l| l.param_slices()).collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder
            .iter_mut()
            .chain(std::iter::once(&mut self.middle))
            .chain(self.decoder.iter_mut())
            .flat_map(|l| l.param_slices_mut())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_shape_and_layer_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseUNet::new(7, &[8, 6, 4], 3, &mut rng).unwrap();
        let x = Tensor::matrix(5, 7, (0..35).map(|i| (i as f64).sin()).collect()).unwrap();
        let y = net.predict(&x).unwrap();
        assert_eq!(y.shape(), &[5, 3]);
        let rebuilt = DenseUNet::from_layers(net.layers().cloned().collect()).unwrap();
        assert_eq!(rebuilt, net);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseUNet::new(3, &[5, 4], 2, &mut rng).unwrap();
        let x = Tensor::matrix(4, 3, (0..12).map(|i| ((i * 7) as f64).cos()).collect()).unwrap();
        let dir: Vec<f64> = (0..8).map(|i| ((i * 3) as f64).sin()).collect();
        let loss = |n: &DenseUNet, x: &Tensor| -> f64 {
            n.predict(x).unwrap().data().iter().zip(&dir).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = net.forward(&x).unwrap();
        let g = Tensor::matrix(4, 2, dir.clone()).unwrap();
        let (grads, gx) = net.backward(&tape, &g).unwrap();
        let analytic = grads.flatten();
        let params = net.flat_params();
        let h = 1e-5;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let mut plus = net.clone();
            plus.set_flat_params(&p).unwrap();
            p[i] -= 2.0 * h;
            let mut minus = net.clone();
            minus.set_flat_params(&p).unwrap();
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() <= 1e-6 * fd.abs().max(1.0),
                "param {i}: {fd} vs {}",
                analytic[i]
            );
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - gx.data()[i]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }
}
