//! Coarse-to-fine field mapping network.
//!
//! A small encoder runs on the coarse patch at its own resolution. The
//! decoder doubles the resolution with stride-2 transposed convolutions,
//! concatenating the fine density (average-pooled to the stage resolution)
//! after every stage, and a final stride-1 convolution with ReLU produces the
//! nonnegative fine field. The layer stack is data ([`LayerSpec`]), so other
//! wirings can be built with [`MapNetModel::from_layers`].

mod layers;
mod serialize;
mod train;

pub use layers::{Padding, Tensor};
pub use serialize::{load_model, read_model, save_model, write_model};
pub use train::{train, Adam, TrainConfig, TrainOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::fragmap::{block_mean, FragmentBatch, FragmentSpec, NormalizationFactors};
use layers::{conv_backward, conv_forward, relu_backward_in_place, relu_in_place, tconv_backward, tconv_forward};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    TransposedConv,
    ConcatInjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// What a concatenation layer appends to the running tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Injection {
    /// The fine density patch pooled to the current resolution.
    Density,
    /// The output of an earlier layer with the same resolution.
    Skip(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// 1 for convolutions, 2 for transposed convolutions, 1 for concatenation.
    pub stride: usize,
    pub activation: Activation,
    pub source: Option<Injection>,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            stride: 1,
            activation,
            source: None,
        }
    }

    pub fn upsample(in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::TransposedConv,
            in_channels,
            out_channels,
            stride: 2,
            activation,
            source: None,
        }
    }

    pub fn concat(in_channels: usize, extra: usize, source: Injection) -> Self {
        Self {
            kind: LayerKind::ConcatInjection,
            in_channels,
            out_channels: in_channels + extra,
            stride: 1,
            activation: Activation::Linear,
            source: Some(source),
        }
    }

    /// Weights plus biases.
    pub fn parameter_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv | LayerKind::TransposedConv => self.in_channels * self.out_channels * 9 + self.out_channels,
            LayerKind::ConcatInjection => 0,
        }
    }
}

/// Sum of per-layer parameter counts.
pub fn parameter_count(layers: &[LayerSpec]) -> usize {
    layers.iter().map(LayerSpec::parameter_count).sum()
}

pub const DEFAULT_CHANNELS: usize = 16;

/// Scale applied to the He-uniform weights of the output layer.
pub const OUTPUT_INIT_GAIN: f64 = 0.1;
/// Initial bias of the output layer, in normalized field units.
pub const OUTPUT_INIT_BIAS: f64 = 0.1;

/// Default layer stack for a fragment geometry.
pub fn default_layers(fspec: &FragmentSpec, channels_base: usize) -> Result<Vec<LayerSpec>> {
    let ratio = fspec.ratio();
    if !ratio.is_power_of_two() || ratio < 2 || fspec.fine_patch != ratio * fspec.coarse_patch {
        return Err(Error::Config(format!(
            "fine/coarse patch ratio {}/{} is not a power of two",
            fspec.fine_patch, fspec.coarse_patch
        )));
    }
    if channels_base == 0 {
        return Err(Error::Config("channels_base must be positive".into()));
    }
    let stages = ratio.trailing_zeros() as usize;
    let c = channels_base;
    let mut layers = vec![
        LayerSpec::conv(1, c, Activation::Relu),
        LayerSpec::conv(c, 2 * c, Activation::Relu),
        LayerSpec::concat(2 * c, c, Injection::Skip(0)),
    ];
    let mut ch = 3 * c;
    let mut width = 2 * c;
    for _ in 0..stages {
        width = (width / 2).max(1);
        layers.push(LayerSpec::upsample(ch, width, Activation::Relu));
        layers.push(LayerSpec::concat(width, 1, Injection::Density));
        ch = width + 1;
    }
    layers.push(LayerSpec::conv(ch, 1, Activation::Relu));
    Ok(layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapNetModel {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    norm: NormalizationFactors,
    fspec: FragmentSpec,
    padding: Padding,
}

/// Builds the default architecture: He-uniform weights, zero hidden biases
/// and a damped, positively biased output layer.
pub fn build_model(
    fspec: &FragmentSpec,
    channels_base: usize,
    norm: NormalizationFactors,
    seed: u64,
) -> Result<MapNetModel> {
    MapNetModel::from_layers(default_layers(fspec, channels_base)?, *fspec, norm, seed)
}

/// Per-layer outputs kept for the backward pass.
struct Activations {
    outputs: Vec<Tensor>,
}

impl MapNetModel {
    /// Validates the wiring and initializes parameters from `seed`.
    pub fn from_layers(
        layers: Vec<LayerSpec>,
        fspec: FragmentSpec,
        norm: NormalizationFactors,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::with_zero_params(layers, fspec, norm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, &off) in model.layers.iter().zip(&model.offsets) {
            if l.parameter_count() == 0 {
                continue;
            }
            let fan_in = (l.in_channels * 9) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let nw = l.in_channels * l.out_channels * 9;
            for p in &mut model.params[off..off + nw] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        // Damp the output layer and bias it upward so its ReLU starts active.
        // With plain He init some seeds begin with almost every output pixel
        // at zero and never recover.
        if let (Some(l), Some(&off)) = (model.layers.last(), model.offsets.last()) {
            let nw = l.in_channels * l.out_channels * 9;
            for p in &mut model.params[off..off + nw] {
                *p *= OUTPUT_INIT_GAIN;
            }
            for p in &mut model.params[off + nw..off + l.parameter_count()] {
                *p = OUTPUT_INIT_BIAS;
            }
        }
        Ok(model)
    }

    pub(crate) fn with_zero_params(
        layers: Vec<LayerSpec>,
        fspec: FragmentSpec,
        norm: NormalizationFactors,
    ) -> Result<Self> {
        let mut side = fspec.coarse_patch;
        let mut channels = 1;
        let mut sides = Vec::with_capacity(layers.len());
        let mut chans = Vec::with_capacity(layers.len());
        for (k, l) in layers.iter().enumerate() {
            let bad = |msg: String| Err(Error::Config(format!("layer {k}: {msg}")));
            if l.in_channels != channels {
                return bad(format!("expects {} channels, receives {channels}", l.in_channels));
            }
            match l.kind {
                LayerKind::Conv => {
                    if l.stride != 1 || l.source.is_some() {
                        return bad("convolutions use stride 1".into());
                    }
                }
                LayerKind::TransposedConv => {
                    if l.stride != 2 || l.source.is_some() {
                        return bad("transposed convolutions use stride 2".into());
                    }
                    side *= 2;
                }
                LayerKind::ConcatInjection => {
                    let extra = match l.source {
                        Some(Injection::Density) => {
                            if !fspec.fine_patch.is_multiple_of(side) {
                                return bad("density cannot be pooled to this resolution".into());
                            }
                            1
                        }
                        Some(Injection::Skip(j)) => {
                            if j >= k || sides[j] != side {
                                return bad(format!("skip from layer {j} does not match"));
                            }
                            chans[j]
                        }
                        None => return bad("concatenation without a source".into()),
                    };
                    if l.out_channels != l.in_channels + extra || l.activation != Activation::Linear {
                        return bad("concatenation channel count".into());
                    }
                }
            }
            channels = l.out_channels;
            sides.push(side);
            chans.push(channels);
        }
        if channels != 1 || side != fspec.fine_patch {
            return Err(Error::Config(format!(
                "network ends with {channels} channels at {side}x{side}, expected 1 at {0}x{0}",
                fspec.fine_patch
            )));
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.parameter_count();
        }
        Ok(Self {
            layers,
            offsets,
            params: vec![0.0; total],
            norm,
            fspec,
            padding: Padding::Zero,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} parameters", self.params.len()),
                got: format!("{} parameters", params.len()),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn norm(&self) -> NormalizationFactors {
        self.norm
    }

    pub fn set_norm(&mut self, norm: NormalizationFactors) {
        self.norm = norm;
    }

    pub fn fspec(&self) -> &FragmentSpec {
        &self.fspec
    }

    /// Index range of each layer's parameters.
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.layers
            .iter()
            .zip(&self.offsets)
            .map(|(l, &o)| o..o + l.parameter_count())
            .collect()
    }

    /// Padding mode; circular padding exists for translation tests.
    pub fn set_padding(&mut self, padding: Padding) {
        self.padding = padding;
    }

    fn check_inputs(&self, coarse: &ScalarField, density: &ScalarField) -> Result<()> {
        let (c, f) = (self.fspec.coarse_patch, self.fspec.fine_patch);
        coarse.check_shape(c, c)?;
        density.check_shape(f, f)
    }

    fn split(&self, k: usize) -> (&[f64], &[f64]) {
        let l = &self.layers[k];
        let off = self.offsets[k];
        let nw = l.in_channels * l.out_channels * 9;
        (
            &self.params[off..off + nw],
            &self.params[off + nw..off + nw + l.out_channels],
        )
    }

    fn run(&self, coarse: &ScalarField, density: &ScalarField, keep: bool) -> Activations {
        let mut x = Tensor {
            channels: 1,
            side: coarse.rows(),
            data: coarse.as_slice().to_vec(),
        };
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            let mut y = match l.kind {
                LayerKind::Conv => {
                    let (w, b) = self.split(k);
                    conv_forward(&x, w, b, l.out_channels, self.padding)
                }
                LayerKind::TransposedConv => {
                    let (w, b) = self.split(k);
                    tconv_forward(&x, w, b, l.out_channels, self.padding)
                }
                LayerKind::ConcatInjection => match l.source.expect("validated") {
                    Injection::Density => x.concat(&pool_density(density, x.side)),
                    Injection::Skip(j) => x.concat(&outputs[j]),
                },
            };
            if l.activation == Activation::Relu {
                relu_in_place(&mut y);
            }
            if keep || needs_output_later(&self.layers, k) {
                outputs.push(y.clone());
            } else {
                outputs.push(Tensor::zeros(0, 0));
            }
            x = y;
        }
        // The last slot holds the network output.
        if let Some(last) = outputs.last_mut() {
            *last = x;
        }
        Activations { outputs }
    }

    /// Normalized fine prediction for one normalized coarse patch and its
    /// fine density patch.
    pub fn forward(&self, coarse: &ScalarField, density: &ScalarField) -> Result<ScalarField> {
        self.check_inputs(coarse, density)?;
        let acts = self.run(coarse, density, false);
        let out = acts.outputs.last().expect("nonempty network");
        let f = self.fspec.fine_patch;
        ScalarField::from_vec(f, f, out.data.clone())
    }

    /// Forward over every fragment of a batch (inputs already normalized).
    pub fn forward_batch(&self, batch: &FragmentBatch) -> Result<Vec<ScalarField>> {
        batch
            .coarse
            .par_iter()
            .zip(&batch.density)
            .map(|(c, d)| self.forward(c, d))
            .collect()
    }

    /// Squared error and parameter gradient of one sample, unscaled.
    fn sample_gradient(&self, coarse: &ScalarField, density: &ScalarField, target: &ScalarField) -> (f64, Vec<f64>) {
        let acts = self.run(coarse, density, true);
        let out = acts.outputs.last().expect("nonempty network");
        let mut sq = 0.0;
        let mut grad_out = Tensor::zeros(1, out.side);
        for ((g, &y), &t) in grad_out.data.iter_mut().zip(&out.data).zip(target.as_slice()) {
            let e = y - t;
            sq += e * e;
            *g = 2.0 * e;
        }
        let n = self.layers.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[n - 1] = Some(grad_out);
        let mut d_params = vec![0.0; self.params.len()];
        let input = Tensor {
            channels: 1,
            side: coarse.rows(),
            data: coarse.as_slice().to_vec(),
        };
        for k in (0..n).rev() {
            let Some(mut g) = grads[k].take() else { continue };
            let l = self.layers[k];
            if l.activation == Activation::Relu {
                relu_backward_in_place(&acts.outputs[k], &mut g);
            }
            let x = if k == 0 { &input } else { &acts.outputs[k - 1] };
            let d_in = match l.kind {
                LayerKind::Conv | LayerKind::TransposedConv => {
                    let off = self.offsets[k];
                    let nw = l.in_channels * l.out_channels * 9;
                    let (w, _) = self.split(k);
                    let (dw, db) = d_params[off..off + nw + l.out_channels].split_at_mut(nw);
                    if l.kind == LayerKind::Conv {
                        conv_backward(x, w, &g, dw, db, k > 0, self.padding)
                    } else {
                        tconv_backward(x, w, &g, dw, db, k > 0, self.padding)
                    }
                }
                LayerKind::ConcatInjection => {
                    let split = l.in_channels * g.side * g.side;
                    if let Some(Injection::Skip(j)) = l.source {
                        let extra = Tensor {
                            channels: l.out_channels - l.in_channels,
                            side: g.side,
                            data: g.data[split..].to_vec(),
                        };
                        accumulate(&mut grads[j], extra);
                    }
                    g.data.truncate(split);
                    g.channels = l.in_channels;
                    Some(g)
                }
            };
            if let (Some(d), true) = (d_in, k > 0) {
                accumulate(&mut grads[k - 1], d);
            }
        }
        (sq, d_params)
    }

    /// Mean squared error over all pixels of all fragments and its gradient.
    /// Inputs and targets must already be normalized.
    pub fn loss_and_gradient(&self, batch: &FragmentBatch) -> Result<(f64, Vec<f64>)> {
        let targets = batch.fine.as_ref().ok_or(Error::MissingTargets)?;
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        for ((c, d), t) in batch.coarse.iter().zip(&batch.density).zip(targets) {
            self.check_inputs(c, d)?;
            t.check_shape(self.fspec.fine_patch, self.fspec.fine_patch)?;
        }
        let per_sample: Vec<(f64, Vec<f64>)> = batch
            .coarse
            .par_iter()
            .zip(&batch.density)
            .zip(targets)
            .map(|((c, d), t)| self.sample_gradient(c, d, t))
            .collect();
        // Sequential reduction keeps results independent of thread count.
        let scale = 1.0 / (batch.len() * self.fspec.fine_patch * self.fspec.fine_patch) as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (sq, g) in per_sample {
            loss += sq;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        for v in &mut grad {
            *v *= scale;
        }
        Ok((loss * scale, grad))
    }
}

fn needs_output_later(layers: &[LayerSpec], k: usize) -> bool {
    layers[k + 1..].iter().any(|l| l.source == Some(Injection::Skip(k)))
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn pool_density(density: &ScalarField, side: usize) -> Tensor {
    let factor = density.rows() / side;
    let data = if factor == 1 {
        density.as_slice().to_vec()
    } else {
        block_mean(density, factor)
            .expect("pool factor divides the patch")
            .into_vec()
    };
    Tensor {
        channels: 1,
        side,
        data,
    }
}
