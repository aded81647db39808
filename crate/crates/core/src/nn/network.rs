use rand::Rng;

use super::layers::{
    batchnorm_backward, batchnorm_forward, conv1d_backward, conv1d_forward, maxpool2_backward, maxpool2_forward, relu,
    relu_backward, sigmoid, sigmoid_backward, Activation, BnCache, BnMode, Layer,
};
use super::{Real, Tensor3};
use crate::error::{Error, Result};

/// Feed-forward chain of conv / batch-norm / activation / pool layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
}

struct LayerTrace<T> {
    input: Tensor3<T>,
    bn: BnCache<T>,
    activated: Tensor3<T>,
    argmax: Option<Vec<u32>>,
}

/// Intermediate values of a training-mode forward pass.
pub struct Trace<T> {
    layers: Vec<LayerTrace<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> LayerGrads<T> {
    pub fn slices(&self) -> [&[T]; 4] {
        [&self.weight, &self.bias, &self.gamma, &self.beta]
    }
}

impl<T: Real> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate()?;
            if i > 0 && l.in_ch != layers[i - 1].out_ch {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} channels but layer {} produces {}",
                    l.in_ch,
                    i - 1,
                    layers[i - 1].out_ch
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn init_he(&mut self, rng: &mut impl Rng) {
        for l in &mut self.layers {
            l.init_he(rng);
        }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_ch
    }

    /// Output length for an input of `len` samples, or `None` if too short.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        self.layers.iter().try_fold(len, |n, l| l.output_len(n))
    }

    /// Length of every intermediate stage: input, then after each conv and
    /// each pool.
    pub fn stage_lengths(&self, len: usize) -> Vec<usize> {
        let mut out = vec![len];
        let mut n = len;
        for l in &self.layers {
            match n.checked_sub(l.kernel - 1).filter(|&v| v > 0) {
                Some(v) => n = v,
                None => break,
            }
            out.push(n);
            if l.pooled {
                n /= 2;
                out.push(n);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len() + l.gamma.len() + l.beta.len())
            .sum()
    }

    /// Trainable parameters in a fixed order: per layer weight, bias, gamma, beta.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_mut_slice(),
                    l.bias.as_mut_slice(),
                    l.gamma.as_mut_slice(),
                    l.beta.as_mut_slice(),
                ]
            })
            .collect()
    }

    fn activate(act: Activation, x: &mut Tensor3<T>) {
        match act {
            Activation::Relu => relu(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Inference pass with batch normalization from running statistics.
    pub fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        let mut h = x.clone();
        for l in &self.layers {
            let conv = conv1d_forward(&h, l)?;
            let (mut y, _) = batchnorm_forward(&conv, l, BnMode::Infer)?;
            Self::activate(l.activation, &mut y);
            h = if l.pooled { maxpool2_forward(&y)?.0 } else { y };
        }
        Ok(h)
    }

    /// Training pass: batch statistics normalize the activations and are
    /// folded into the running statistics.
    pub fn forward_train(&mut self, x: &Tensor3<T>) -> Result<(Tensor3<T>, Trace<T>)> {
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &mut self.layers {
            let conv = conv1d_forward(&h, l)?;
            let (mut y, cache) = batchnorm_forward(&conv, l, BnMode::Train)?;
            let bn = cache.expect("training mode returns a cache");
            l.update_running_stats(&bn);
            Self::activate(l.activation, &mut y);
            let (next, argmax) = if l.pooled {
                let (p, a) = maxpool2_forward(&y)?;
                (p, Some(a))
            } else {
                (y.clone(), None)
            };
            traces.push(LayerTrace {
                input: std::mem::replace(&mut h, next),
                bn,
                activated: y,
                argmax,
            });
        }
        Ok((h, Trace { layers: traces }))
    }

    /// Parameter gradients for `grad_out`, the loss gradient at the output.
    pub fn backward(&self, trace: &Trace<T>, grad_out: &Tensor3<T>) -> Result<Vec<LayerGrads<T>>> {
        self.backward_impl(trace, grad_out, false).map(|(g, _)| g)
    }

    /// As [`Network::backward`], also returning the input gradient.
    pub fn backward_with_input(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor3<T>,
    ) -> Result<(Vec<LayerGrads<T>>, Tensor3<T>)> {
        self.backward_impl(trace, grad_out, true)
            .map(|(g, gx)| (g, gx.expect("input gradient requested")))
    }

    fn backward_impl(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor3<T>,
        input_grad: bool,
    ) -> Result<(Vec<LayerGrads<T>>, Option<Tensor3<T>>)> {
        if trace.layers.len() != self.layers.len() {
            return Err(Error::Shape("trace does not belong to this network".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, (l, t)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            if let Some(arg) = &t.argmax {
                g = maxpool2_backward(&g, arg, t.activated.time())?;
            }
            if !g.same_shape(&t.activated) {
                return Err(Error::Shape(format!(
                    "gradient {:?} does not match layer {i} output {:?}",
                    g.dims(),
                    t.activated.dims()
                )));
            }
            match l.activation {
                Activation::Relu => relu_backward(&t.activated, &mut g),
                Activation::Sigmoid => sigmoid_backward(&t.activated, &mut g),
            }
            let (g_bn, gamma, beta) = batchnorm_backward(&g, &t.bn, l)?;
            let (gx, conv) = conv1d_backward(&t.input, l, &g_bn, i > 0 || input_grad)?;
            grads.push(LayerGrads {
                weight: conv.weight,
                bias: conv.bias,
                gamma,
                beta,
            });
            match gx {
                Some(gx) => g = gx,
                None => {
                    grads.reverse();
                    return Ok((grads, None));
                }
            }
        }
        grads.reverse();
        Ok((grads, Some(g)))
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }
}
