//! Layers used by the transforms and context models.

use candle_core::{Tensor, D};

use crate::error::{FcnrError, Result};
use crate::networks::ops::{positive_scale, softmax_last};
use crate::networks::params::Init;

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Result<Self> {
        let mut init = init.push(name);
        let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
        Ok(Conv2d {
            weight: init.uniform("weight", &[cout, cin, kernel, kernel], bound)?,
            bias: init.uniform("bias", &[cout], bound)?,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }
}

/// Stride-2 transposed convolution that exactly doubles the spatial size.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        let mut init = init.push(name);
        let bound = 1.0 / ((cout * kernel * kernel) as f64).sqrt();
        Ok(ConvTranspose2d {
            weight: init.uniform("weight", &[cin, cout, kernel, kernel], bound)?,
            bias: init.uniform("bias", &[cout], bound)?,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, self.padding, 1, 2, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Parametric ReLU with one learned slope per channel.
#[derive(Debug, Clone)]
pub struct PRelu {
    slope: Tensor,
}

impl PRelu {
    pub fn new(init: &mut Init, name: &str, channels: usize) -> Result<Self> {
        let mut init = init.push(name);
        Ok(PRelu {
            slope: init.constant("slope", &[channels], 0.25)?,
        })
    }

    /// `x` is `[batch, channels, h, w]` or `[batch, features]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.slope.dim(0)?;
        let slope = match x.rank() {
            4 => self.slope.reshape((1, c, 1, 1))?,
            2 => self.slope.reshape((1, c))?,
            r => return Err(FcnrError::Shape(format!("prelu on rank-{r} tensor"))),
        };
        let neg = x.neg()?.relu()?.broadcast_mul(&slope)?;
        Ok(x.relu()?.sub(&neg)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, fin: usize, fout: usize) -> Result<Self> {
        let mut init = init.push(name);
        let bound = 1.0 / (fin as f64).sqrt();
        Ok(Linear {
            weight: init.uniform("weight", &[fout, fin], bound)?,
            bias: init.uniform("bias", &[fout], bound)?,
        })
    }

    /// Output layer whose bias is fixed to `bias` (weights scaled down).
    pub fn with_bias(init: &mut Init, name: &str, fin: usize, bias: Vec<f64>) -> Result<Self> {
        let mut init = init.push(name);
        let fout = bias.len();
        let bound = 0.1 / (fin as f64).sqrt();
        Ok(Linear {
            weight: init.uniform("weight", &[fout, fin], bound)?,
            bias: init.from_values("bias", &[fout], bias)?,
        })
    }

    /// `x` is `[n, fin]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias.unsqueeze(0)?)?)
    }
}

/// Joint context transfer: bidirectional multi-head cross-attention between
/// the two views, with residual connections.
///
/// The same projections serve both directions, so swapping the inputs swaps
/// the outputs and identical inputs give identical outputs.
#[derive(Debug, Clone)]
pub struct Jctm {
    query: Conv2d,
    key: Conv2d,
    value: Conv2d,
    out: Conv2d,
    heads: usize,
}

impl Jctm {
    pub fn new(init: &mut Init, name: &str, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(FcnrError::Config(format!(
                "{channels} channels cannot be split into {heads} heads"
            )));
        }
        let mut init = init.push(name);
        Ok(Jctm {
            query: Conv2d::new(&mut init, "query", channels, channels, 1, 1)?,
            key: Conv2d::new(&mut init, "key", channels, channels, 1, 1)?,
            value: Conv2d::new(&mut init, "value", channels, channels, 1, 1)?,
            out: Conv2d::new(&mut init, "out", channels, channels, 1, 1)?,
            heads,
        })
    }

    /// `[b, c, h, w]` -> `[b * heads, h * w, c / heads]`.
    fn tokens(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        Ok(x
            .reshape((b * self.heads, c / self.heads, h * w))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// `pair` stacks the left and right feature maps along the batch axis.
    pub fn forward(&self, pair: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = pair.dims4()?;
        if b != 2 {
            return Err(FcnrError::Shape(format!("joint context transfer needs a pair, got batch {b}")));
        }
        let swapped = Tensor::cat(&[pair.narrow(0, 1, 1)?, pair.narrow(0, 0, 1)?], 0)?;
        let q = self.tokens(&self.query.forward(pair)?)?;
        let k = self.tokens(&self.key.forward(&swapped)?)?;
        let v = self.tokens(&self.value.forward(&swapped)?)?;
        let head_dim = c / self.heads;
        let logits = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? / (head_dim as f64).sqrt())?;
        let attended = softmax_last(&logits)?.matmul(&v)?;
        let merged = attended
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, c, h, w))?;
        Ok((pair + self.out.forward(&merged)?)?)
    }
}

/// Laplace parameters `(mu, b)` as a pair of equally shaped tensors.
#[derive(Debug, Clone)]
pub struct ParamTensors {
    pub mu: Tensor,
    pub scale: Tensor,
}

impl ParamTensors {
    /// Split `[n, 2c, ...]` into `mu = [:, :c]` and positive `b` from `[:, c:]`.
    pub fn from_raw(raw: &Tensor) -> Result<Self> {
        let c2 = raw.dim(1)?;
        let c = c2 / 2;
        Ok(ParamTensors {
            mu: raw.narrow(1, 0, c)?,
            scale: positive_scale(&raw.narrow(1, c, c)?)?,
        })
    }

    /// Select one member of a batched pair.
    pub fn member(&self, index: usize) -> Result<Self> {
        Ok(ParamTensors {
            mu: self.mu.narrow(0, index, 1)?,
            scale: self.scale.narrow(0, index, 1)?,
        })
    }

    /// Broadcast `[1, c]` channel parameters over a `[1, c, h, w]` grid.
    pub fn broadcast_spatial(&self, h: usize, w: usize) -> Result<Self> {
        let expand = |t: &Tensor| -> Result<Tensor> {
            let (n, c) = t.dims2()?;
            Ok(t.reshape((n, c, 1, 1))?.broadcast_as((n, c, h, w))?.contiguous()?)
        };
        Ok(ParamTensors {
            mu: expand(&self.mu)?,
            scale: expand(&self.scale)?,
        })
    }
}

/// Stereo context module: refines the right view's parameters from an
/// already decoded left-view tensor and the right view's prior parameters.
#[derive(Debug, Clone)]
pub struct Scm {
    ctx1: Conv2d,
    act1: PRelu,
    ctx2: Conv2d,
    act2: PRelu,
    fuse1: Conv2d,
    act3: PRelu,
    fuse2: Conv2d,
}

impl Scm {
    pub fn new(init: &mut Init, name: &str, latent: usize, hidden: usize) -> Result<Self> {
        let mut init = init.push(name);
        Ok(Scm {
            ctx1: Conv2d::new(&mut init, "ctx1", latent, hidden, 3, 1)?,
            act1: PRelu::new(&mut init, "act1", hidden)?,
            ctx2: Conv2d::new(&mut init, "ctx2", hidden, hidden, 3, 1)?,
            act2: PRelu::new(&mut init, "act2", hidden)?,
            fuse1: Conv2d::new(&mut init, "fuse1", hidden + 2 * latent, hidden, 1, 1)?,
            act3: PRelu::new(&mut init, "act3", hidden)?,
            fuse2: Conv2d::new(&mut init, "fuse2", hidden, 2 * latent, 1, 1)?,
        })
    }

    pub fn context_features(&self, context: &Tensor) -> Result<Tensor> {
        let h = self.act1.forward(&self.ctx1.forward(context)?)?;
        self.act2.forward(&self.ctx2.forward(&h)?)
    }

    pub fn forward(&self, context: &Tensor, prior: &ParamTensors) -> Result<ParamTensors> {
        if context.dims() != prior.mu.dims() {
            return Err(FcnrError::Shape(format!(
                "context {:?} vs prior {:?}",
                context.dims(),
                prior.mu.dims()
            )));
        }
        let feats = self.context_features(context)?;
        let joined = Tensor::cat(&[&feats, &prior.mu, &prior.scale], 1)?;
        let h = self.act3.forward(&self.fuse1.forward(&joined)?)?;
        ParamTensors::from_raw(&self.fuse2.forward(&h)?)
    }
}

/// Maps an encoded visualization-parameter vector to channel-wise Laplace
/// parameters.
#[derive(Debug, Clone)]
pub struct Mlp {
    l1: Linear,
    a1: PRelu,
    l2: Linear,
    a2: PRelu,
    l3: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, input: usize, hidden: usize, channels: usize) -> Result<Self> {
        let mut init = init.push(name);
        let mut bias = vec![0.0; channels];
        bias.extend(std::iter::repeat_n(crate::networks::ops::softplus_inverse(1.0), channels));
        Ok(Mlp {
            l1: Linear::new(&mut init, "l1", input, hidden)?,
            a1: PRelu::new(&mut init, "a1", hidden)?,
            l2: Linear::new(&mut init, "l2", hidden, hidden)?,
            a2: PRelu::new(&mut init, "a2", hidden)?,
            l3: Linear::with_bias(&mut init, "l3", hidden, bias)?,
        })
    }

    /// `x` is `[1, input]`; returns `[1, channels]` parameters.
    pub fn forward(&self, x: &Tensor) -> Result<ParamTensors> {
        if x.rank() != 2 || x.dim(D::Minus1)? != self.l1.weight.dim(1)? {
            return Err(FcnrError::Shape(format!(
                "MLP expects [1, {}] input, got {:?}",
                self.l1.weight.dim(1)?,
                x.dims()
            )));
        }
        let h = self.a1.forward(&self.l1.forward(x)?)?;
        let h = self.a2.forward(&self.l2.forward(&h)?)?;
        ParamTensors::from_raw(&self.l3.forward(&h)?)
    }
}
