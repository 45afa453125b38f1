//! Composite layers built from tape primitives. Because they are compositions,
//! their gradients (and gradients of gradients) come for free.

use rand::Rng;

use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::kernels::Window;
use crate::tensor::Tensor;

/// Negative slope used by every leaky-relu in the models.
pub const LEAKY_SLOPE: f64 = 0.2;

/// 2-D convolution of an NCHW input with `[out, in, k, k]` weights,
/// lowered to im2col followed by one matrix product.
pub fn conv2d<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let [n, c, h, w] = g.value(x).dims4("conv2d")?;
    let [o, ci, kh, kw] = g.value(weight).dims4("conv2d")?;
    if ci != c || kh != kw {
        return Err(shape_err(
            "conv2d",
            format!("weight [{o}, {ci}, {kh}, {kw}] vs input channels {c}"),
        ));
    }
    let win = Window::new(kh, stride, pad);
    let (oh, ow) = match (win.out_len(h), win.out_len(w)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(shape_err(
                "conv2d",
                format!("kernel {kh} does not fit {h}x{w}"),
            ))
        }
    };
    let cols = g.unfold(x, win)?;
    let wm = g.reshape(weight, &[o, c * kh * kw])?;
    let y = g.matmul(wm, cols)?;
    let y = g.reshape(y, &[o, n, oh * ow])?;
    let y = g.swap_leading(y)?;
    let y = g.reshape(y, &[n, o, oh, ow])?;
    match bias {
        Some(b) => bias_add(g, y, b),
        None => Ok(y),
    }
}

/// Adds a per-channel bias `[c]` to an NCHW tensor.
pub fn bias_add<T: Element>(g: &mut Graph<T>, x: Var, bias: Var) -> Result<Var> {
    let [n, c, h, w] = g.value(x).dims4("bias_add")?;
    if g.shape(bias) != [c] {
        return Err(shape_err(
            "bias_add",
            format!("bias {:?} for {c} channels", g.shape(bias)),
        ));
    }
    let b = g.reshape(bias, &[1, c, 1])?;
    let b = g.expand_axis(b, 2, h * w)?;
    let b = g.expand_axis(b, 0, n)?;
    let b = g.reshape(b, &[n, c, h, w])?;
    g.add(x, b)
}

pub fn mean<T: Element>(g: &mut Graph<T>, x: Var) -> Var {
    let n = g.value(x).numel();
    let s = g.sum(x);
    g.scale(s, 1.0 / n as f64)
}

/// Mean absolute difference.
pub fn l1_mean<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(mean(g, d))
}

/// Mean squared difference.
pub fn mse<T: Element>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d2 = g.mul(d, d)?;
    Ok(mean(g, d2))
}

pub fn transpose<T: Element>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let [r, c] = g.value(x).dims2("transpose")?;
    let x3 = g.reshape(x, &[r, c, 1])?;
    let t = g.swap_leading(x3)?;
    g.reshape(t, &[c, r])
}

/// Scales every column of a matrix to unit L2 norm; `eps` keeps all-zero
/// columns at zero instead of dividing by zero.
pub fn normalize_cols<T: Element>(g: &mut Graph<T>, x: Var, eps: f64) -> Result<Var> {
    let [r, _] = g.value(x).dims2("normalize_cols")?;
    let sq = g.mul(x, x)?;
    let ss = g.sum_axis(sq, 0)?;
    let ss = g.add_scalar(ss, eps * eps);
    let norm = g.sqrt(ss);
    let norm = g.expand_axis(norm, 0, r)?;
    g.div(x, norm)
}

/// Repeats a single-channel map `[n, 1, h, w]` across `c` channels.
pub fn broadcast_channels<T: Element>(g: &mut Graph<T>, x: Var, c: usize) -> Result<Var> {
    let [_, one, _, _] = g.value(x).dims4("broadcast_channels")?;
    if one != 1 {
        return Err(shape_err(
            "broadcast_channels",
            format!("expected 1 channel, got {one}"),
        ));
    }
    g.expand_axis(x, 1, c)
}

/// Nearest-neighbour upsampling by an integer factor, via channel repetition
/// and pixel shuffle.
pub fn upsample_nearest<T: Element>(g: &mut Graph<T>, x: Var, r: usize) -> Result<Var> {
    let [n, c, h, w] = g.value(x).dims4("upsample_nearest")?;
    let y = g.reshape(x, &[n, c, 1, h * w])?;
    let y = g.expand_axis(y, 2, r * r)?;
    let y = g.reshape(y, &[n, c * r * r, h, w])?;
    g.pixel_shuffle(y, r)
}

/// `mean_i (‖∇ₓ D(x)ᵢ‖₂ − 1)²` over the batch rows of `x`, where `critic`
/// maps `[n, …]` to per-sample scores. The gradient is taken on the tape, so
/// the result can be differentiated with respect to the critic's weights.
pub fn gradient_penalty<T: Element, F>(g: &mut Graph<T>, x: Var, critic: F) -> Result<Var>
where
    F: FnOnce(&mut Graph<T>, Var) -> Result<Var>,
{
    let shape = g.shape(x).to_vec();
    let n = shape[0];
    let per = shape[1..].iter().product::<usize>();
    let scores = critic(g, x)?;
    let total = g.sum(scores);
    let grad = match g.grad(total, &[x])?[0] {
        Some(v) => v,
        // Critic ignores its input: the gradient is identically zero.
        None => g.constant(Tensor::zeros(&shape)),
    };
    let flat = g.reshape(grad, &[n, per])?;
    let sq = g.mul(flat, flat)?;
    let ss = g.sum_axis(sq, 1)?;
    let norm = g.sqrt(ss);
    let dev = g.add_scalar(norm, -1.0);
    let dev2 = g.mul(dev, dev)?;
    Ok(mean(g, dev2))
}

/// Kaiming-uniform initialisation for a `[out, in, k, k]` (or `[in, out]`
/// for dense layers, with `fan_in` given explicitly) weight feeding a
/// leaky-relu of the given slope.
pub fn kaiming_uniform<R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    slope: f64,
    rng: &mut R,
) -> Tensor<f64> {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_upsample_repeats_pixels() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = upsample_nearest(&mut g, x, 2).unwrap();
        assert_eq!(
            g.value(y).data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
    }

    #[test]
    fn normalized_columns_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::rand_uniform(&[5, 4], -1.0, 1.0, &mut rng));
        let y = normalize_cols(&mut g, x, 1e-12).unwrap();
        let v = g.value(y).data();
        for c in 0..4 {
            let n: f64 = (0..5).map(|r| v[r * 4 + c] * v[r * 4 + c]).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_column_stays_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[2, 2], vec![0.0, 3.0, 0.0, 4.0]).unwrap());
        let y = normalize_cols(&mut g, x, 1e-12).unwrap();
        assert_eq!(g.value(y).data()[0], 0.0);
        assert!((g.value(y).data()[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn constant_critic_penalty_is_one() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[3, 1, 2, 2]));
        let p =
            gradient_penalty(&mut g, x, |g, _| Ok(g.constant(Tensor::full(&[3, 1], 0.7)))).unwrap();
        assert_eq!(g.value(p).item(), 1.0);
    }
}
