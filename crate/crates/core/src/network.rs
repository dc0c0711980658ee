//! The restoration network: a shared HFC encoder `E`, an HFC-alignment
//! decoder `D_H` and an image-restoration decoder `D_R`.
//!
//! With `L` layers and `f^l_E` the output of encoder layer `l`:
//!
//! ```text
//! f^0_H = f^0_R = f^L_E
//! f^l_H = [D^l_H(f^{l-1}_H), f^{L-l}_E]          l = 1..L-1
//! f^l_R = [D^l_R(f^{l-1}_R), D^l_H(f^{l-1}_H)]   l = 1..L-1
//! aligned  = D^L_H(f^{L-1}_H)                     (linear head)
//! restored = (tanh(D^L_R(f^{L-1}_R)) + 1) / 2     (in [0, 1])
//! ```
//!
//! Without `D_H` the restoration decoder falls back to plain encoder skips,
//! `f^l_R = [D^l_R(f^{l-1}_R), f^{L-l}_E]`.
//!
//! Encoder layers are stride-2 convolutions with leaky ReLU; decoder layers
//! are stride-2 transposed convolutions with ReLU, except the output heads.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imaging::{HFC_RADIUS, HFC_SIGMA};
use crate::tensor::{
    affine, concat_channels, conv2d, conv2d_transpose, leaky_relu, relu, tanh, Scalar, Tensor,
};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCRN";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Magic, version, config block and tensor count.
pub const CHECKPOINT_HEADER_BYTES: usize = 72;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    /// Even kernel size; padding is `kernel_size / 2 - 1` so every layer
    /// exactly halves or doubles the spatial size.
    pub kernel_size: usize,
    pub negative_slope: f64,
    pub seed: u64,
    /// Training resolution (square).
    pub input_size: usize,
    /// Build the alignment decoder and wire its features into `D_R`.
    pub use_dh: bool,
    /// Feed HFCs (rather than raw images) to the encoder.
    pub hfc_input: bool,
    pub hfc_radius: usize,
    pub hfc_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration for CPU experiments (64×64, four layers).
    pub fn desk() -> Self {
        Self {
            num_layers: 4,
            base_channels: 16,
            max_channels: 64,
            input_channels: 3,
            output_channels: 3,
            kernel_size: 4,
            negative_slope: 0.2,
            seed: 0,
            input_size: 64,
            use_dh: true,
            hfc_input: true,
            hfc_radius: HFC_RADIUS,
            hfc_sigma: HFC_SIGMA,
        }
    }

    /// Full-size configuration (256×256, eight layers, 64 → 512 channels).
    pub fn paper() -> Self {
        Self {
            num_layers: 8,
            base_channels: 64,
            max_channels: 512,
            input_size: 256,
            ..Self::desk()
        }
    }

    /// Output channels of encoder layer `l` (1-based).
    pub fn channels(&self, l: usize) -> usize {
        let doubled = self
            .base_channels
            .checked_shl((l - 1) as u32)
            .filter(|&c| c >> (l - 1) == self.base_channels)
            .unwrap_or(usize::MAX);
        doubled.min(self.max_channels)
    }

    pub fn padding(&self) -> usize {
        self.kernel_size / 2 - 1
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1usize << self.num_layers
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.num_layers < 2 || self.num_layers > 16 {
            return bad(format!("num_layers {} must lie in [2, 16]", self.num_layers));
        }
        if self.base_channels == 0 || self.max_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.input_channels == 0 || self.output_channels == 0 {
            return bad("input/output channels must be positive".into());
        }
        if self.kernel_size < 2 || !self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size {} must be even and >= 2", self.kernel_size));
        }
        if !(self.negative_slope >= 0.0 && self.negative_slope < 1.0) {
            return bad(format!("negative_slope {} must lie in [0, 1)", self.negative_slope));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(self.size_multiple()) {
            return bad(format!(
                "input_size {} must be a positive multiple of 2^{} = {}",
                self.input_size,
                self.num_layers,
                self.size_multiple()
            ));
        }
        if !(self.hfc_sigma > 0.0) {
            return bad(format!("hfc_sigma {} must be positive", self.hfc_sigma));
        }
        Ok(())
    }

    /// `(in, out)` channels of encoder layer `l`.
    fn encoder_shape(&self, l: usize) -> (usize, usize) {
        let input = if l == 1 { self.input_channels } else { self.channels(l - 1) };
        (input, self.channels(l))
    }

    /// `(in, out)` channels of decoder layer `l`, identical for both
    /// decoders. Layer `l ≥ 2` reads two blocks of the width that layer
    /// `l - 1` produced.
    fn decoder_shape(&self, l: usize) -> (usize, usize) {
        let big_l = self.num_layers;
        let input = if l == 1 {
            self.channels(big_l)
        } else {
            2 * self.channels(big_l - l + 1)
        };
        let output = if l == big_l {
            self.output_channels
        } else {
            self.channels(big_l - l)
        };
        (input, output)
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let k2 = self.kernel_size * self.kernel_size;
        let layer = |(i, o): (usize, usize)| i * o * k2 + o;
        let decoders = if self.use_dh { 2 } else { 1 };
        (1..=self.num_layers)
            .map(|l| layer(self.encoder_shape(l)) + decoders * layer(self.decoder_shape(l)))
            .sum()
    }
}

/// Weight and bias of one convolution.
#[derive(Clone, Debug)]
pub struct Layer<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Layer<T> {
    fn init(shape: [usize; 4], bias: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| T::of(normal.sample(rng))).collect();
        Self {
            weight: Tensor::parameter(values, &shape).expect("consistent"),
            bias: Tensor::parameter(vec![T::zero(); bias], &[bias]).expect("consistent"),
        }
    }

    fn in_channels(&self, transposed: bool) -> usize {
        self.weight.shape()[if transposed { 0 } else { 1 }]
    }

    fn out_channels(&self, transposed: bool) -> usize {
        self.weight.shape()[if transposed { 1 } else { 0 }]
    }
}

/// Outputs of one forward pass. `aligned` is absent without `D_H`.
pub struct Outputs<T: Scalar> {
    pub aligned: Option<Tensor<T>>,
    pub restored: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    encoder: Vec<Layer<T>>,
    align: Vec<Layer<T>>,
    restore: Vec<Layer<T>>,
}

impl<T: Scalar> Model<T> {
    /// Builds a model with `N(0, 0.02²)` weights and zero biases, seeded by
    /// `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.kernel_size;
        let big_l = config.num_layers;
        let encoder = (1..=big_l)
            .map(|l| {
                let (i, o) = config.encoder_shape(l);
                Layer::init([o, i, k, k], o, &mut rng)
            })
            .collect();
        let decoder = |rng: &mut ChaCha8Rng| -> Vec<Layer<T>> {
            (1..=big_l)
                .map(|l| {
                    let (i, o) = config.decoder_shape(l);
                    Layer::init([i, o, k, k], o, rng)
                })
                .collect()
        };
        let align = if config.use_dh { decoder(&mut rng) } else { Vec::new() };
        let restore = decoder(&mut rng);
        let model = Self {
            config,
            encoder,
            align,
            restore,
        };
        model.check_wiring();
        Ok(model)
    }

    /// Asserts that every decoder layer consumes exactly the channels its
    /// concatenation produces.
    fn check_wiring(&self) {
        let big_l = self.config.num_layers;
        let enc_out = |l: usize| self.encoder[l - 1].out_channels(false);
        let r = &self.restore;
        assert_eq!(r[0].in_channels(true), enc_out(big_l));
        for l in 2..=big_l {
            let skip = if self.config.use_dh {
                let a = &self.align;
                assert_eq!(a[l - 1].in_channels(true), a[l - 2].out_channels(true) + enc_out(big_l - l + 1));
                a[l - 2].out_channels(true)
            } else {
                enc_out(big_l - l + 1)
            };
            assert_eq!(r[l - 1].in_channels(true), r[l - 2].out_channels(true) + skip);
        }
        if self.config.use_dh {
            for (a, b) in self.align.iter().zip(&self.restore) {
                assert_eq!(a.weight.shape(), b.weight.shape());
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &[Layer<T>] {
        &self.encoder
    }

    pub fn align_decoder(&self) -> &[Layer<T>] {
        &self.align
    }

    pub fn restore_decoder(&self) -> &[Layer<T>] {
        &self.restore
    }

    /// All trainable tensors in canonical order: encoder, `D_H`, `D_R`;
    /// weight before bias within each layer.
    pub fn parameters(&self) -> Vec<Tensor<T>> {
        self.encoder
            .iter()
            .chain(&self.align)
            .chain(&self.restore)
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&self) {
        self.parameters().iter().for_each(|p| p.zero_grad());
    }

    /// Runs `[N, C_in, H, W]` through the network.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Outputs<T>> {
        let cfg = &self.config;
        let s = x.shape();
        let m = cfg.size_multiple();
        if s.len() != 4 || s[1] != cfg.input_channels {
            return Err(Error::Shape(format!(
                "network input must be [N, {}, H, W], got {s:?}",
                cfg.input_channels
            )));
        }
        if s[2] == 0 || s[3] == 0 || !s[2].is_multiple_of(m) || !s[3].is_multiple_of(m) {
            return Err(Error::Shape(format!(
                "spatial size {}x{} is not a multiple of 2^{} = {m}",
                s[2], s[3], cfg.num_layers
            )));
        }
        let (stride, pad, slope) = (2, cfg.padding(), cfg.negative_slope);
        let big_l = cfg.num_layers;

        let mut encoded: Vec<Tensor<T>> = Vec::with_capacity(big_l);
        let mut h = x.clone();
        for layer in &self.encoder {
            h = leaky_relu(&conv2d(&h, &layer.weight, &layer.bias, stride, pad)?, slope);
            encoded.push(h.clone());
        }
        // f^{L-l}_E lives at encoded[L-l-1]
        let skip = |l: usize| &encoded[big_l - l - 1];
        let up = |layer: &Layer<T>, f: &Tensor<T>| {
            conv2d_transpose(f, &layer.weight, &layer.bias, stride, pad)
        };

        let bottleneck = encoded[big_l - 1].clone();
        let mut f_r = bottleneck.clone();
        let mut f_h = bottleneck;
        for l in 1..big_l {
            let d_r = relu(&up(&self.restore[l - 1], &f_r)?);
            if cfg.use_dh {
                let d_h = relu(&up(&self.align[l - 1], &f_h)?);
                f_h = concat_channels(&d_h, skip(l))?;
                f_r = concat_channels(&d_r, &d_h)?;
            } else {
                f_r = concat_channels(&d_r, skip(l))?;
            }
        }
        let aligned = if cfg.use_dh {
            Some(up(&self.align[big_l - 1], &f_h)?)
        } else {
            None
        };
        let restored = affine(&tanh(&up(&self.restore[big_l - 1], &f_r)?), 0.5, 0.5);
        Ok(Outputs { aligned, restored })
    }

    /// Copies the parameter values into a model of another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let convert = |layers: &[Layer<T>]| -> Vec<Layer<U>> {
            layers
                .iter()
                .map(|l| Layer {
                    weight: Tensor::parameter(
                        l.weight.data().iter().map(|v| U::of(v.as_f64())).collect(),
                        l.weight.shape(),
                    )
                    .expect("consistent"),
                    bias: Tensor::parameter(
                        l.bias.data().iter().map(|v| U::of(v.as_f64())).collect(),
                        l.bias.shape(),
                    )
                    .expect("consistent"),
                })
                .collect()
        };
        Model {
            config: self.config.clone(),
            encoder: convert(&self.encoder),
            align: convert(&self.align),
            restore: convert(&self.restore),
        }
    }

    /// Serializes to the checkpoint format; parameters are stored as f32.
    ///
    /// Layout (little-endian): `SCRN`, u32 version, u32 num_layers,
    /// u32 base_channels, u32 max_channels, u32 input_channels,
    /// u32 output_channels, u32 kernel_size, u64 negative_slope (f64 bits),
    /// u64 seed, u32 input_size, u32 flags (bit 0 `use_dh`, bit 1
    /// `hfc_input`), u32 hfc_radius, u64 hfc_sigma (f64 bits), u32 tensor
    /// count; then per tensor in [`parameters`](Self::parameters) order:
    /// u32 rank, u32 dims, f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(CHECKPOINT_HEADER_BYTES + 4 * self.parameter_count());
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [
            c.num_layers,
            c.base_channels,
            c.max_channels,
            c.input_channels,
            c.output_channels,
            c.kernel_size,
        ] {
            u32le(&mut out, v);
        }
        out.extend_from_slice(&c.negative_slope.to_bits().to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());
        u32le(&mut out, c.input_size);
        u32le(&mut out, c.use_dh as usize | (c.hfc_input as usize) << 1);
        u32le(&mut out, c.hfc_radius);
        out.extend_from_slice(&c.hfc_sigma.to_bits().to_le_bytes());
        let params = self.parameters();
        u32le(&mut out, params.len());
        for p in &params {
            u32le(&mut out, p.shape().len());
            for &d in p.shape() {
                u32le(&mut out, d);
            }
            for v in p.data().iter() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let num_layers = r.u32("num_layers")? as usize;
        let base_channels = r.u32("base_channels")? as usize;
        let max_channels = r.u32("max_channels")? as usize;
        let input_channels = r.u32("input_channels")? as usize;
        let output_channels = r.u32("output_channels")? as usize;
        let kernel_size = r.u32("kernel_size")? as usize;
        let negative_slope = f64::from_bits(r.u64("negative_slope")?);
        let seed = r.u64("seed")?;
        let input_size = r.u32("input_size")? as usize;
        let flags = r.u32("flags")?;
        let hfc_radius = r.u32("hfc_radius")? as usize;
        let hfc_sigma = f64::from_bits(r.u64("hfc_sigma")?);
        let config = ModelConfig {
            num_layers,
            base_channels,
            max_channels,
            input_channels,
            output_channels,
            kernel_size,
            negative_slope,
            seed,
            input_size,
            use_dh: flags & 1 != 0,
            hfc_input: flags & 2 != 0,
            hfc_radius,
            hfc_sigma,
        };
        let model = Self::new(config)?;
        let params = model.parameters();
        let count = r.u32("tensor count")? as usize;
        if count != params.len() {
            return Err(Error::CheckpointShape {
                index: count.min(params.len()),
                found: vec![count],
                expected: vec![params.len()],
            });
        }
        for (index, p) in params.iter().enumerate() {
            let rank = r.u32("tensor rank")? as usize;
            let dims = (0..rank)
                .map(|_| r.u32("tensor dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if dims != p.shape() {
                return Err(Error::CheckpointShape {
                    index,
                    found: dims,
                    expected: p.shape().to_vec(),
                });
            }
            let raw = r.take(4 * p.len(), "tensor values")?;
            let values = raw
                .chunks_exact(4)
                .map(|b| T::of(f32::from_le_bytes(b.try_into().unwrap()) as f64))
                .collect();
            p.set_data(values)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Truncated(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!("reading {what} at byte {}", self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}
