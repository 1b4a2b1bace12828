//! Tied-weight stacked autoencoder networks.
//!
//! Layer `i` owns one weight matrix `W_i` of shape `out_i x in_i`, an encoder
//! bias of length `out_i` and a decoder bias of length `in_i`. Encoding walks
//! the layers in order computing `H_{i+1} = s(H_i W_i^T + b_enc)`; decoding
//! walks them in reverse computing `D_i = s(D_{i+1} W_i + b_dec)`. The
//! decoder never holds its own weights, so it always uses exactly `W_i^T`.
//!
//! Variational networks additionally carry a log-variance head on the top
//! layer. The top layer's own output is the posterior mean.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::matrix::{sigmoid_scalar, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Sigmoid => z.map(sigmoid_scalar),
            Activation::Identity => z.clone(),
        }
    }

    /// `grad * s'(z)`, with the derivative expressed through the output
    /// `a = s(z)`.
    pub(crate) fn backprop(self, output: &Matrix, grad: &Matrix) -> Matrix {
        match self {
            Activation::Sigmoid => output
                .zip_map(grad, |a, g| g * a * (1.0 - a))
                .expect("trace shapes agree"),
            Activation::Identity => grad.clone(),
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Identity => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Matrix,
    pub enc_bias: Vec<f64>,
    pub dec_bias: Vec<f64>,
}

impl Layer {
    fn zeros(spec: LayerSpec) -> Self {
        Layer {
            spec,
            weight: Matrix::zeros(spec.out_dim, spec.in_dim),
            enc_bias: vec![0.0; spec.out_dim],
            dec_bias: vec![0.0; spec.in_dim],
        }
    }

    pub fn encode(&self, h: &Matrix) -> Result<Matrix> {
        let z = h.matmul_t(&self.weight)?.add_row_vector(&self.enc_bias)?;
        Ok(self.spec.activation.apply(&z))
    }

    pub fn decode(&self, d: &Matrix) -> Result<Matrix> {
        let u = d.matmul(&self.weight)?.add_row_vector(&self.dec_bias)?;
        Ok(self.spec.activation.apply(&u))
    }
}

/// Log-variance head of a variational network: `log sigma^2 = H W_v^T + b_v`,
/// always linear.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceHead {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl VarianceHead {
    pub fn log_variance(&self, h: &Matrix) -> Result<Matrix> {
        h.matmul_t(&self.weight)?.add_row_vector(&self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub variance_head: Option<VarianceHead>,
}

/// Layer widths shrinking by `ceil(log2(n))` per layer down to `l_t`.
///
/// A width that would fall below `l_t` is replaced by `l_t` and the sequence
/// ends there.
pub fn plan_layers(input_dim: usize, l_t: usize) -> Result<Vec<usize>> {
    if l_t == 0 || l_t > input_dim {
        return Err(Error::InvalidArgument(format!(
            "bottleneck width {l_t} must be in 1..={input_dim}"
        )));
    }
    let mut sizes = vec![input_dim];
    let mut current = input_dim;
    while current > l_t {
        let next = ceil_log2(current);
        if next <= l_t {
            sizes.push(l_t);
            break;
        }
        sizes.push(next);
        current = next;
    }
    Ok(sizes)
}

fn ceil_log2(n: usize) -> usize {
    debug_assert!(n >= 1);
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

/// Network with sigmoid layers of the given widths, Xavier-uniform weights
/// and zero biases.
pub fn init_network(layer_sizes: &[usize], rng: &mut Rng) -> Result<Network> {
    Network::init(layer_sizes, Activation::Sigmoid, rng)
}

impl Network {
    /// Weights of layer `i` are drawn from `U[-1/sqrt(n), 1/sqrt(n))` where
    /// `n` is the width feeding that layer.
    pub fn init(layer_sizes: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a network needs at least two layer widths, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive, got {layer_sizes:?}"
            )));
        }
        let specs = layer_sizes
            .windows(2)
            .map(|w| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                activation,
            })
            .collect::<Vec<_>>();
        Self::from_specs(&specs, rng)
    }

    pub fn from_specs(specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument("no layers".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if spec.in_dim == 0 || spec.out_dim == 0 {
                return Err(Error::InvalidArgument(format!("layer {i} has a zero width")));
            }
            if i > 0 && specs[i - 1].out_dim != spec.in_dim {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    spec.in_dim,
                    i - 1,
                    specs[i - 1].out_dim
                )));
            }
            let bound = 1.0 / (spec.in_dim as f64).sqrt();
            let mut layer = Layer::zeros(*spec);
            layer.weight = rng.uniform(-bound, bound, spec.out_dim, spec.in_dim)?;
            layers.push(layer);
        }
        Ok(Network {
            layers,
            variance_head: None,
        })
    }

    /// Adds a log-variance head on the top layer, initialized like the top
    /// layer's weights.
    pub fn with_variance_head(mut self, rng: &mut Rng) -> Result<Self> {
        let top = self.layers.last().expect("non-empty").spec;
        let bound = 1.0 / (top.in_dim as f64).sqrt();
        self.variance_head = Some(VarianceHead {
            weight: rng.uniform(-bound, bound, top.out_dim, top.in_dim)?,
            bias: vec![0.0; top.out_dim],
        });
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.layers.last().expect("non-empty").spec.out_dim
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.spec.out_dim))
            .collect()
    }

    pub fn is_variational(&self) -> bool {
        self.variance_head.is_some()
    }

    fn check_input(&self, x: &Matrix, width: usize, op: &'static str) -> Result<()> {
        if x.cols() != width {
            return Err(Error::DimensionMismatch {
                op,
                left: x.shape(),
                right: (x.rows(), width),
            });
        }
        Ok(())
    }

    /// Deterministic code for `x`; the posterior mean for variational nets.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x, self.input_dim(), "encode")?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.encode(&h)?;
        }
        Ok(h)
    }

    pub fn decode(&self, y: &Matrix) -> Result<Matrix> {
        self.check_input(y, self.latent_dim(), "decode")?;
        let mut d = y.clone();
        for layer in self.layers.iter().rev() {
            d = layer.decode(&d)?;
        }
        Ok(d)
    }

    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        self.decode(&self.encode(x)?)
    }

    /// Deterministic forward pass recording every activation.
    pub fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        self.forward_inner(x, None)
    }

    /// Forward pass of a variational net with the latent sample
    /// `mu + exp(logvar / 2) * noise`. `noise` has shape `rows x latent`.
    pub fn forward_sampled(&self, x: &Matrix, noise: &Matrix) -> Result<ForwardTrace> {
        if !self.is_variational() {
            return Err(Error::InvalidArgument(
                "sampled forward pass needs a variance head".into(),
            ));
        }
        if noise.shape() != (x.rows(), self.latent_dim()) {
            return Err(Error::DimensionMismatch {
                op: "forward_sampled",
                left: noise.shape(),
                right: (x.rows(), self.latent_dim()),
            });
        }
        self.forward_inner(x, Some(noise))
    }

    fn forward_inner(&self, x: &Matrix, noise: Option<&Matrix>) -> Result<ForwardTrace> {
        self.check_input(x, self.input_dim(), "forward")?;
        if x.rows() == 0 {
            return Err(Error::InvalidArgument("forward pass on an empty batch".into()));
        }
        let mut encoder = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.encode(&h)?;
            encoder.push(h.clone());
        }
        let latent = match (noise, &self.variance_head) {
            (Some(noise), Some(head)) => {
                let below = if self.layers.len() > 1 {
                    &encoder[encoder.len() - 2]
                } else {
                    x
                };
                let log_var = head.log_variance(below)?;
                let spread = log_var.zip_map(noise, |lv, xi| (0.5 * lv).exp() * xi)?;
                let sample = h.add(&spread)?.ensure_finite("latent sample")?;
                Latent {
                    code: sample,
                    log_var: Some(log_var),
                    noise: Some(noise.clone()),
                }
            }
            _ => Latent {
                code: h,
                log_var: None,
                noise: None,
            },
        };
        let mut decoder = Vec::with_capacity(self.layers.len());
        let mut d = latent.code.clone();
        for layer in self.layers.iter().rev() {
            d = layer.decode(&d)?;
            decoder.push(d.clone());
        }
        Ok(ForwardTrace {
            input: x.clone(),
            encoder,
            latent,
            decoder,
        })
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.sum_sq()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.flat_params().len()
    }

    /// All parameters in a fixed order: per layer `W`, encoder bias, decoder
    /// bias; then the variance head's `W` and bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.enc_bias);
            out.extend_from_slice(&l.dec_bias);
        }
        if let Some(head) = &self.variance_head {
            out.extend_from_slice(head.weight.as_slice());
            out.extend_from_slice(&head.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for v in l.weight.as_mut_slice() {
                *v = it.next().unwrap();
            }
            for v in l.enc_bias.iter_mut().chain(l.dec_bias.iter_mut()) {
                *v = it.next().unwrap();
            }
        }
        if let Some(head) = &mut self.variance_head {
            for v in head.weight.as_mut_slice().iter_mut().chain(head.bias.iter_mut()) {
                *v = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// `theta <- theta - step * grad`.
    pub fn apply_gradients(&mut self, grads: &Gradients, step: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || grads.variance_head.is_some() != self.variance_head.is_some()
        {
            return Err(Error::InvalidArgument(
                "gradient structure does not match the network".into(),
            ));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weight.add_scaled_in_place(&g.weight, -step)?;
            axpy(&mut l.enc_bias, &g.enc_bias, -step);
            axpy(&mut l.dec_bias, &g.dec_bias, -step);
        }
        if let (Some(h), Some(g)) = (&mut self.variance_head, &grads.variance_head) {
            h.weight.add_scaled_in_place(&g.weight, -step)?;
            axpy(&mut h.bias, &g.bias, -step);
        }
        Ok(())
    }

    /// Keeps only the first `n` layers (and drops any variance head).
    pub fn truncated(&self, n: usize) -> Network {
        Network {
            layers: self.layers[..n].to_vec(),
            variance_head: None,
        }
    }
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Debug, Clone)]
pub struct Latent {
    /// The code fed to the decoder: the mean, or a reparameterized sample.
    pub code: Matrix,
    pub log_var: Option<Matrix>,
    pub noise: Option<Matrix>,
}

/// Activations recorded by a forward pass, consumed by backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Matrix,
    /// `encoder[i]` is the output of layer `i`; the last entry is the
    /// deterministic code (posterior mean for variational nets).
    pub encoder: Vec<Matrix>,
    pub latent: Latent,
    /// Decoder outputs in the order they are produced: `decoder[0]` comes
    /// from the top layer, the last entry is the reconstruction.
    pub decoder: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn reconstruction(&self) -> &Matrix {
        self.decoder.last().expect("non-empty trace")
    }

    pub fn code_mean(&self) -> &Matrix {
        self.encoder.last().expect("non-empty trace")
    }

    /// Input of encoder layer `i`.
    pub(crate) fn encoder_input(&self, i: usize) -> &Matrix {
        if i == 0 {
            &self.input
        } else {
            &self.encoder[i - 1]
        }
    }

    /// Input of the decoder step through layer `i`.
    pub(crate) fn decoder_input(&self, i: usize) -> &Matrix {
        let n = self.encoder.len();
        let k = n - 1 - i;
        if k == 0 {
            &self.latent.code
        } else {
            &self.decoder[k - 1]
        }
    }

    /// Output of the decoder step through layer `i`.
    pub(crate) fn decoder_output(&self, i: usize) -> &Matrix {
        &self.decoder[self.encoder.len() - 1 - i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weight: Matrix,
    pub enc_bias: Vec<f64>,
    pub dec_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter-shaped gradients of a scalar loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
    pub variance_head: Option<HeadGradients>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weight: Matrix::zeros(l.spec.out_dim, l.spec.in_dim),
                    enc_bias: vec![0.0; l.spec.out_dim],
                    dec_bias: vec![0.0; l.spec.in_dim],
                })
                .collect(),
            variance_head: net.variance_head.as_ref().map(|h| HeadGradients {
                weight: Matrix::zeros(h.weight.rows(), h.weight.cols()),
                bias: vec![0.0; h.bias.len()],
            }),
        }
    }

    /// Same ordering as [`Network::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.enc_bias);
            out.extend_from_slice(&l.dec_bias);
        }
        if let Some(h) = &self.variance_head {
            out.extend_from_slice(h.weight.as_slice());
            out.extend_from_slice(&h.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

// Checkpoint layout, all integers and floats little-endian:
//   u8  format version (1)
//   u32 layer count L
//   L x { u32 in_dim, u32 out_dim, u8 activation (0 sigmoid, 1 identity) }
//   u8  variance head present (0/1)
//   L x { W (out x in, row-major f64), enc bias (out f64), dec bias (in f64) }
//   if head: W_v (out x in of top layer, f64), b_v (out f64)
const CHECKPOINT_VERSION: u8 = 1;

impl Network {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_u8(CHECKPOINT_VERSION)?;
        w.write_u32::<LittleEndian>(self.layers.len() as u32)?;
        for l in &self.layers {
            w.write_u32::<LittleEndian>(l.spec.in_dim as u32)?;
            w.write_u32::<LittleEndian>(l.spec.out_dim as u32)?;
            w.write_u8(l.spec.activation.tag())?;
        }
        w.write_u8(self.variance_head.is_some() as u8)?;
        for l in &self.layers {
            for v in l.weight.as_slice().iter().chain(&l.enc_bias).chain(&l.dec_bias) {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        if let Some(h) = &self.variance_head {
            for v in h.weight.as_slice().iter().chain(&h.bias) {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut Cursor::new(bytes), Path::new("<memory>"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut Cursor::new(&bytes[..]), path)
    }

    fn read_from<R: Read>(r: &mut R, path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(path, reason.to_string());
        let truncated = |_| bad("truncated checkpoint");
        let version = r.read_u8().map_err(truncated)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if n == 0 {
            return Err(bad("checkpoint has no layers"));
        }
        let mut specs = Vec::with_capacity(n);
        for _ in 0..n {
            let in_dim = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let out_dim = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let tag = r.read_u8().map_err(truncated)?;
            let activation =
                Activation::from_tag(tag).ok_or_else(|| bad("unknown activation tag"))?;
            specs.push(LayerSpec {
                in_dim,
                out_dim,
                activation,
            });
        }
        for w in specs.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(bad("layer widths do not chain"));
            }
        }
        let has_head = r.read_u8().map_err(truncated)? != 0;
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; len];
            r.read_f64_into::<LittleEndian>(&mut v).map_err(truncated)?;
            Ok(v)
        };
        let mut layers = Vec::with_capacity(n);
        for spec in specs {
            let weight = Matrix::from_vec(
                spec.out_dim,
                spec.in_dim,
                read_vec(spec.out_dim * spec.in_dim)?,
            )?;
            let enc_bias = read_vec(spec.out_dim)?;
            let dec_bias = read_vec(spec.in_dim)?;
            layers.push(Layer {
                spec,
                weight,
                enc_bias,
                dec_bias,
            });
        }
        let variance_head = if has_head {
            let top = layers.last().unwrap().spec;
            let weight =
                Matrix::from_vec(top.out_dim, top.in_dim, read_vec(top.out_dim * top.in_dim)?)?;
            let bias = read_vec(top.out_dim)?;
            Some(VarianceHead { weight, bias })
        } else {
            None
        };
        Ok(Network {
            layers,
            variance_head,
        })
    }
}
