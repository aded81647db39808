use rand::Rng;
use serde::{Deserialize, Serialize};

use super::real::{gemm, MatRef};
use super::{Real, Tensor3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Convolution + batch normalization + activation (+ optional 2x max pool).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub pooled: bool,
    pub activation: Activation,
    /// `[out_ch][in_ch][kernel]`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub bn_eps: T,
    pub bn_momentum: T,
}

impl<T: Real> Layer<T> {
    pub const DEFAULT_BN_EPS: f64 = 1e-3;
    pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;

    /// Zero weights and biases, identity batch normalization.
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, pooled: bool, activation: Activation) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            pooled,
            activation,
            weight: vec![T::ZERO; out_ch * in_ch * kernel],
            bias: vec![T::ZERO; out_ch],
            gamma: vec![T::ONE; out_ch],
            beta: vec![T::ZERO; out_ch],
            running_mean: vec![T::ZERO; out_ch],
            running_var: vec![T::ONE; out_ch],
            bn_eps: T::from_f64(Self::DEFAULT_BN_EPS),
            bn_momentum: T::from_f64(Self::DEFAULT_BN_MOMENTUM),
        }
    }

    /// He-uniform weights: U(-a, a) with a = sqrt(6 / (in_ch * kernel)).
    pub fn init_he(&mut self, rng: &mut impl Rng) {
        let a = (6.0 / (self.in_ch * self.kernel) as f64).sqrt();
        for w in &mut self.weight {
            *w = T::from_f64(rng.random_range(-a..a));
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 || self.kernel == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        let o = self.out_ch;
        let ok = self.weight.len() == o * self.in_ch * self.kernel
            && [&self.bias, &self.gamma, &self.beta, &self.running_mean, &self.running_var]
                .iter()
                .all(|v| v.len() == o);
        if !ok {
            return Err(Error::Shape(format!(
                "parameter sizes inconsistent with {}x{}x{} layer",
                o, self.in_ch, self.kernel
            )));
        }
        if self.running_var.iter().any(|&v| !(v >= T::ZERO)) {
            return Err(Error::Shape("negative running variance".into()));
        }
        Ok(())
    }

    /// Output length for an input of `len` samples, if defined.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        let conv = len.checked_sub(self.kernel - 1).filter(|&n| n > 0)?;
        if self.pooled {
            Some(conv / 2).filter(|&n| n > 0)
        } else {
            Some(conv)
        }
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, cache: &BnCache<T>) {
        let m = self.bn_momentum;
        for c in 0..self.out_ch {
            self.running_mean[c] = m * self.running_mean[c] + (T::ONE - m) * cache.mean[c];
            self.running_var[c] = m * self.running_var[c] + (T::ONE - m) * cache.var[c];
        }
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64())).collect();
        Layer {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kernel: self.kernel,
            pooled: self.pooled,
            activation: self.activation,
            weight: c(&self.weight),
            bias: c(&self.bias),
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            bn_eps: U::from_f64(self.bn_eps.to_f64()),
            bn_momentum: U::from_f64(self.bn_momentum.to_f64()),
        }
    }
}

/// Rows `(i * kernel + k)`, columns `(b * t_out + t)`: `x[b][i][t + k]`.
fn im2col<T: Real>(x: &Tensor3<T>, kernel: usize, t_out: usize) -> Vec<T> {
    let (batch, cin, _) = x.dims();
    let width = batch * t_out;
    let mut cols = vec![T::ZERO; cin * kernel * width];
    for i in 0..cin {
        for k in 0..kernel {
            let row = &mut cols[(i * kernel + k) * width..(i * kernel + k + 1) * width];
            for b in 0..batch {
                row[b * t_out..(b + 1) * t_out].copy_from_slice(&x.row(b, i)[k..k + t_out]);
            }
        }
    }
    cols
}

fn check_conv_input<T: Real>(x: &Tensor3<T>, layer: &Layer<T>) -> Result<usize> {
    if x.channels() != layer.in_ch {
        return Err(Error::Shape(format!(
            "convolution expects {} input channels, got {}",
            layer.in_ch,
            x.channels()
        )));
    }
    if x.time() < layer.kernel {
        return Err(Error::Shape(format!(
            "input length {} shorter than kernel {}",
            x.time(),
            layer.kernel
        )));
    }
    if x.batch() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(x.time() - layer.kernel + 1)
}

/// Valid, stride-1 convolution with bias.
pub fn conv1d_forward<T: Real>(x: &Tensor3<T>, layer: &Layer<T>) -> Result<Tensor3<T>> {
    let t_out = check_conv_input(x, layer)?;
    let width = x.batch() * t_out;
    let cols = im2col(x, layer.kernel, t_out);
    let mut out = vec![T::ZERO; layer.out_ch * width];
    for (row, &b) in out.chunks_exact_mut(width).zip(&layer.bias) {
        row.fill(b);
    }
    let ck = layer.in_ch * layer.kernel;
    gemm(
        T::ONE,
        MatRef::row_major(&layer.weight, layer.out_ch, ck),
        MatRef::row_major(&cols, ck, width),
        T::ONE,
        &mut out,
    );
    Tensor3::from_channel_major(x.batch(), layer.out_ch, t_out, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of the convolution. The input gradient is skipped when
/// `need_input_grad` is false.
pub fn conv1d_backward<T: Real>(
    x: &Tensor3<T>,
    layer: &Layer<T>,
    grad_out: &Tensor3<T>,
    need_input_grad: bool,
) -> Result<(Option<Tensor3<T>>, ConvGrads<T>)> {
    let t_out = check_conv_input(x, layer)?;
    if grad_out.dims() != (x.batch(), layer.out_ch, t_out) {
        return Err(Error::Shape(format!(
            "output gradient {:?} does not match convolution output {:?}",
            grad_out.dims(),
            (x.batch(), layer.out_ch, t_out)
        )));
    }
    let width = x.batch() * t_out;
    let ck = layer.in_ch * layer.kernel;
    let cols = im2col(x, layer.kernel, t_out);
    let g = MatRef::row_major(grad_out.data(), layer.out_ch, width);

    let mut weight = vec![T::ZERO; layer.out_ch * ck];
    gemm(T::ONE, g, MatRef::row_major(&cols, ck, width).t(), T::ZERO, &mut weight);
    let bias = grad_out.data().chunks_exact(width).map(|r| r.iter().copied().sum()).collect();

    let grad_x = if need_input_grad {
        let mut dcols = cols;
        gemm(T::ONE, MatRef::row_major(&layer.weight, layer.out_ch, ck).t(), g, T::ZERO, &mut dcols);
        let mut gx = Tensor3::zeros(x.batch(), layer.in_ch, x.time());
        for i in 0..layer.in_ch {
            for k in 0..layer.kernel {
                let row = &dcols[(i * layer.kernel + k) * width..(i * layer.kernel + k + 1) * width];
                for b in 0..x.batch() {
                    let dst = &mut gx.row_mut(b, i)[k..k + t_out];
                    for (d, &s) in dst.iter_mut().zip(&row[b * t_out..(b + 1) * t_out]) {
                        *d += s;
                    }
                }
            }
        }
        Some(gx)
    } else {
        None
    };
    Ok((grad_x, ConvGrads { weight, bias }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Normalized activations and per-channel inverse deviations from a
/// training-mode pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor3<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-channel batch normalization over batch and time.
///
/// Training mode normalizes with the biased batch variance and returns the
/// batch statistics in the cache; see [`Layer::update_running_stats`].
pub fn batchnorm_forward<T: Real>(
    x: &Tensor3<T>,
    layer: &Layer<T>,
    mode: BnMode,
) -> Result<(Tensor3<T>, Option<BnCache<T>>)> {
    if x.channels() != layer.out_ch {
        return Err(Error::Shape(format!(
            "batch norm expects {} channels, got {}",
            layer.out_ch,
            x.channels()
        )));
    }
    let n = x.batch() * x.time();
    let mut y = x.clone();
    match mode {
        BnMode::Infer => {
            for c in 0..layer.out_ch {
                let inv = T::ONE / (layer.running_var[c] + layer.bn_eps).sqrt();
                let scale = layer.gamma[c] * inv;
                let shift = layer.beta[c] - layer.running_mean[c] * scale;
                for v in y.channel_mut(c) {
                    *v = *v * scale + shift;
                }
            }
            Ok((y, None))
        }
        BnMode::Train => {
            if n < 2 {
                return Err(Error::Shape("training-mode batch norm needs at least 2 values per channel".into()));
            }
            let mut xhat = x.clone();
            let mut inv_std = Vec::with_capacity(layer.out_ch);
            let mut means = Vec::with_capacity(layer.out_ch);
            let mut vars = Vec::with_capacity(layer.out_ch);
            for c in 0..layer.out_ch {
                let xs = x.channel(c);
                let mean = xs.iter().map(|v| v.to_f64()).sum::<f64>() / n as f64;
                let var = xs.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + layer.bn_eps.to_f64()).sqrt();
                let (mean_t, inv_t) = (T::from_f64(mean), T::from_f64(inv));
                for (h, &v) in xhat.channel_mut(c).iter_mut().zip(xs) {
                    *h = (v - mean_t) * inv_t;
                }
                let (g, b) = (layer.gamma[c], layer.beta[c]);
                for (o, &h) in y.channel_mut(c).iter_mut().zip(xhat.channel(c)) {
                    *o = g * h + b;
                }
                inv_std.push(inv_t);
                means.push(mean_t);
                vars.push(T::from_f64(var));
            }
            Ok((
                y,
                Some(BnCache {
                    xhat,
                    inv_std,
                    mean: means,
                    var: vars,
                }),
            ))
        }
    }
}

/// Returns `(grad_x, grad_gamma, grad_beta)` for a training-mode pass.
pub fn batchnorm_backward<T: Real>(
    grad_y: &Tensor3<T>,
    cache: &BnCache<T>,
    layer: &Layer<T>,
) -> Result<(Tensor3<T>, Vec<T>, Vec<T>)> {
    if !grad_y.same_shape(&cache.xhat) {
        return Err(Error::Shape("batch norm gradient shape mismatch".into()));
    }
    let n = T::from_f64((grad_y.batch() * grad_y.time()) as f64);
    let mut gx = grad_y.clone();
    let mut dgamma = Vec::with_capacity(layer.out_ch);
    let mut dbeta = Vec::with_capacity(layer.out_ch);
    for c in 0..layer.out_ch {
        let g = grad_y.channel(c);
        let h = cache.xhat.channel(c);
        let sum_g: T = g.iter().copied().sum();
        let sum_gh: T = g.iter().zip(h).map(|(&a, &b)| a * b).sum();
        let k = layer.gamma[c] * cache.inv_std[c] / n;
        for ((o, &gi), &hi) in gx.channel_mut(c).iter_mut().zip(g).zip(h) {
            *o = k * (n * gi - sum_g - hi * sum_gh);
        }
        dgamma.push(sum_gh);
        dbeta.push(sum_g);
    }
    Ok((gx, dgamma, dbeta))
}

pub fn relu<T: Real>(x: &mut Tensor3<T>) {
    for v in x.data_mut() {
        if !(*v > T::ZERO) {
            *v = T::ZERO;
        }
    }
}

/// Multiplies `grad` by the ReLU derivative, read from the output `y`.
pub fn relu_backward<T: Real>(y: &Tensor3<T>, grad: &mut Tensor3<T>) {
    for (g, &v) in grad.data_mut().iter_mut().zip(y.data()) {
        if !(v > T::ZERO) {
            *g = T::ZERO;
        }
    }
}

pub fn sigmoid<T: Real>(x: &mut Tensor3<T>) {
    for v in x.data_mut() {
        *v = if *v >= T::ZERO {
            T::ONE / (T::ONE + (-*v).exp())
        } else {
            let e = v.exp();
            e / (T::ONE + e)
        };
    }
}

pub fn sigmoid_backward<T: Real>(y: &Tensor3<T>, grad: &mut Tensor3<T>) {
    for (g, &v) in grad.data_mut().iter_mut().zip(y.data()) {
        *g *= v * (T::ONE - v);
    }
}

/// Window-2 stride-2 max pooling; an odd trailing sample is dropped.
/// Returns the pooled tensor and, per output, the winning in-row index
/// (the earlier one on ties).
pub fn maxpool2_forward<T: Real>(x: &Tensor3<T>) -> Result<(Tensor3<T>, Vec<u32>)> {
    if x.time() < 2 || x.batch() == 0 || x.channels() == 0 {
        return Err(Error::Shape("max pooling needs a non-empty input of length >= 2".into()));
    }
    let t_out = x.time() / 2;
    let mut y = Tensor3::zeros(x.batch(), x.channels(), t_out);
    let mut arg = Vec::with_capacity(x.batch() * x.channels() * t_out);
    for c in 0..x.channels() {
        for b in 0..x.batch() {
            let src = x.row(b, c);
            let dst = y.row_mut(b, c);
            for (t, d) in dst.iter_mut().enumerate() {
                let (l, r) = (src[2 * t], src[2 * t + 1]);
                if r > l {
                    *d = r;
                    arg.push((2 * t + 1) as u32);
                } else {
                    *d = l;
                    arg.push((2 * t) as u32);
                }
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward<T: Real>(grad_y: &Tensor3<T>, argmax: &[u32], input_time: usize) -> Result<Tensor3<T>> {
    if argmax.len() != grad_y.data().len() || input_time / 2 != grad_y.time() {
        return Err(Error::Shape("pooling gradient does not match stored argmax".into()));
    }
    let mut gx = Tensor3::zeros(grad_y.batch(), grad_y.channels(), input_time);
    let mut k = 0;
    for c in 0..grad_y.channels() {
        for b in 0..grad_y.batch() {
            let src = grad_y.row(b, c);
            let dst = gx.row_mut(b, c);
            for &g in src {
                dst[argmax[k] as usize] += g;
                k += 1;
            }
        }
    }
    Ok(gx)
}

/// Mean squared error over all elements and its gradient `2 (p - t) / N`.
pub fn mse_loss<T: Real>(pred: &Tensor3<T>, target: &Tensor3<T>) -> Result<(T, Tensor3<T>)> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ",
            pred.dims(),
            target.dims()
        )));
    }
    let n = pred.data().len();
    if n == 0 {
        return Err(Error::Shape("empty prediction".into()));
    }
    let mut grad = pred.clone();
    let mut acc = 0.0f64;
    let scale = T::from_f64(2.0 / n as f64);
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        acc += d.to_f64() * d.to_f64();
        *g = scale * d;
    }
    Ok((T::from_f64(acc / n as f64), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_example() {
        let x = Tensor3::from_rows(&[vec![1.0f64, 3.0, 2.0, 2.0]]).unwrap();
        let (y, arg) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        assert_eq!(arg, [1, 2]);
        let g = maxpool2_backward(&Tensor3::from_rows(&[vec![5.0, 7.0]]).unwrap(), &arg, 4).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0, 7.0, 0.0]);
        let odd = Tensor3::<f64>::zeros(2, 3, 993);
        assert_eq!(maxpool2_forward(&odd).unwrap().0.time(), 496);
    }

    #[test]
    fn activations() {
        let mut x = Tensor3::from_rows(&[vec![-2.0f64, 3.0, 0.0]]).unwrap();
        let mut s = x.clone();
        relu(&mut x);
        assert_eq!(x.data(), &[0.0, 3.0, 0.0]);
        sigmoid(&mut s);
        assert_eq!(s.data()[2], 0.5);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let mut big = Tensor3::from_rows(&[vec![-800.0f64, 800.0]]).unwrap();
        sigmoid(&mut big);
        assert!(big.all_finite());
    }

    #[test]
    fn mse_values() {
        let p = Tensor3::from_rows(&[vec![1.0f64, 2.0, 3.0]]).unwrap();
        let (l, g) = mse_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let t = Tensor3::from_rows(&[vec![0.5f64, 1.5, 2.5]]).unwrap();
        assert!((mse_loss(&p, &t).unwrap().0 - 0.25).abs() < 1e-15);
        assert!(mse_loss(&p, &Tensor3::zeros(1, 1, 2)).is_err());
    }

    #[test]
    fn identity_kernel_passes_input() {
        let mut layer = Layer::<f64>::new(2, 2, 3, false, Activation::Relu);
        layer.weight[0] = 1.0; // w[0][0][0]
        layer.weight[2 * 3 + 3] = 1.0; // w[1][1][0]
        let mut x = Tensor3::zeros(1, 2, 10);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = i as f64;
        }
        let y = conv1d_forward(&x, &layer).unwrap();
        assert_eq!(y.time(), 8);
        for c in 0..2 {
            assert_eq!(y.row(0, c), &x.row(0, c)[..8]);
        }
        assert_eq!(Layer::<f32>::new(1, 4, 32, true, Activation::Relu).output_len(993), Some(481));
    }

    #[test]
    fn bias_gradient_is_output_gradient_sum() {
        let layer = Layer::<f64>::new(1, 2, 3, false, Activation::Relu);
        let x = Tensor3::zeros(3, 1, 9);
        let mut g = Tensor3::zeros(3, 2, 7);
        for (i, v) in g.data_mut().iter_mut().enumerate() {
            *v = (i % 5) as f64 - 1.0;
        }
        let (_, grads) = conv1d_backward(&x, &layer, &g, true).unwrap();
        for c in 0..2 {
            assert_eq!(grads.bias[c], g.channel(c).iter().sum::<f64>());
        }
        let (gx, zero) = conv1d_backward(&x, &layer, &Tensor3::zeros(3, 2, 7), true).unwrap();
        assert!(zero.weight.iter().chain(&zero.bias).all(|&v| v == 0.0));
        assert!(gx.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infer_mode_with_unit_stats() {
        let layer = Layer::<f64>::new(1, 1, 1, false, Activation::Relu);
        let x = Tensor3::from_rows(&[vec![1.0, -2.0, 4.0]]).unwrap();
        let (y, cache) = batchnorm_forward(&x, &layer, BnMode::Infer).unwrap();
        assert!(cache.is_none());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b / (1.0f64 + 1e-3).sqrt()).abs() < 1e-15);
        }
        let single = Tensor3::from_rows(&[vec![1.0]]).unwrap();
        assert!(batchnorm_forward(&single, &layer, BnMode::Train).is_err());
    }
}
