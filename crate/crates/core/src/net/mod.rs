//! Two small, architecturally distinct segmentation networks with manual
//! forward/backward passes, an AdamW optimizer and data augmentation.
//!
//! Both networks map a `C_in x H x W` image to a `1 x H x W` logit map.
//! Architecture A is a three-stage small-kernel encoder-decoder; architecture
//! B is a two-stage large-kernel dilated variant with different widths. The
//! head predicts logits at half resolution and a final bilinear upsample
//! restores the input resolution, so the pixelwise feature distance between
//! the two heterogeneous networks is well-defined.

pub mod adamw;
pub mod augment;
pub mod layers;

pub use adamw::{adamw_step, AdamW, AdamWConfig};
pub use augment::{augment, Augmentation};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::loss::FeatureMap;
use crate::mask::ProbMap;
use crate::Result;

use layers::{Conv2d, Layer};

/// Which of the two toy architectures to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchId {
    A,
    B,
}

impl std::fmt::Display for ArchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ArchId::A => write!(f, "A"),
            ArchId::B => write!(f, "B"),
        }
    }
}

/// Structural description of one network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub arch: ArchId,
    pub in_channels: usize,
    /// Encoder stage widths; the number of stages is `widths.len()`.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub dilation: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// Three-stage small-kernel encoder-decoder.
    pub fn arch_a(seed: u64) -> Self {
        NetworkConfig {
            arch: ArchId::A,
            in_channels: 1,
            widths: vec![6, 12, 18],
            kernel: 3,
            dilation: 1,
            seed,
        }
    }

    /// Two-stage large-kernel dilated variant.
    pub fn arch_b(seed: u64) -> Self {
        NetworkConfig {
            arch: ArchId::B,
            in_channels: 1,
            widths: vec![5, 10],
            kernel: 5,
            dilation: 2,
            seed,
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Input spatial sizes must be divisible by this.
    pub fn downsample_factor(&self) -> usize {
        1 << (self.depth() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("network widths must be nonempty and positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        if self.dilation == 0 || self.in_channels == 0 {
            return Err(Error::Config("dilation and in_channels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameters plus step counter for one network. Parameter shapes are fixed
/// at construction; the version counter invalidates cached activations
/// whenever parameters change.
#[derive(Debug, Clone)]
pub struct NetworkState {
    config: NetworkConfig,
    layers: Vec<Layer>,
    step: u64,
    version: u64,
}

/// Cached activations from one forward pass, consumed by [`NetworkState::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Pre-sigmoid logits at input resolution, `1 x H x W`.
    pub logits: FeatureMap,
    /// Sigmoid of the logits.
    pub prob: ProbMap,
    /// Input to each layer, in layer order.
    trace: Vec<FeatureMap>,
    version: u64,
}

/// Per-parameter-tensor gradients, aligned with [`NetworkState::param_names`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(state: &NetworkState) -> Self {
        ParamGrads {
            tensors: state.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }
}

fn build_layers(cfg: &NetworkConfig) -> Vec<Layer> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layers = Vec::new();
    layers.push(Layer::Conv(Conv2d::new(
        cfg.in_channels,
        cfg.widths[0],
        cfg.kernel,
        cfg.dilation,
        &mut rng,
    )));
    layers.push(Layer::Silu);
    for i in 1..cfg.depth() {
        layers.push(Layer::AvgPool);
        layers.push(Layer::Conv(Conv2d::new(
            cfg.widths[i - 1],
            cfg.widths[i],
            cfg.kernel,
            cfg.dilation,
            &mut rng,
        )));
        layers.push(Layer::Silu);
    }
    // decode back to half the input resolution, where the head sits
    for _ in 0..cfg.depth().saturating_sub(2) {
        layers.push(Layer::Upsample);
    }
    let head_in = if cfg.depth() >= 3 {
        layers.push(Layer::Conv(Conv2d::new(
            cfg.widths[cfg.depth() - 1],
            cfg.widths[0],
            cfg.kernel,
            cfg.dilation,
            &mut rng,
        )));
        layers.push(Layer::Silu);
        cfg.widths[0]
    } else {
        cfg.widths[cfg.depth() - 1]
    };
    layers.push(Layer::Conv(Conv2d::new(head_in, 1, 3, 1, &mut rng)));
    layers.push(Layer::Upsample);
    layers
}

impl NetworkState {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layers = build_layers(&config);
        Ok(NetworkState {
            config,
            layers,
            step: 0,
            version: 0,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn bump_step(&mut self) {
        self.step += 1;
    }

    /// Parameter tensors in a fixed order: weight then bias per convolution.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::Conv(c) = layer {
                out.push(c.weight.as_slice());
                out.push(c.bias.as_slice());
            }
        }
        out
    }

    /// Mutable parameter access; bumps the version so stale forward passes
    /// are rejected by [`Self::backward`].
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.version += 1;
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::Conv(c) = layer {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut conv = 0usize;
        for layer in &self.layers {
            if let Layer::Conv(_) = layer {
                out.push(format!("conv{conv}.weight"));
                out.push(format!("conv{conv}.bias"));
                conv += 1;
            }
        }
        out
    }

    pub fn total_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Conservative receptive-field radius in input pixels: a change to one
    /// input pixel can only affect logits within this radius.
    pub fn receptive_radius(&self) -> usize {
        let mut scale = 1.0f64;
        let mut r = 0.0f64;
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => r += c.pad() as f64 * scale,
                Layer::Silu => {}
                Layer::AvgPool => {
                    r += scale;
                    scale *= 2.0;
                }
                Layer::Upsample => {
                    r += scale;
                    scale /= 2.0;
                }
            }
        }
        r.ceil() as usize
    }

    /// Run the network. The input spatial size must be divisible by
    /// [`NetworkConfig::downsample_factor`]; output spatial size equals the
    /// input's.
    pub fn forward(&self, image: &FeatureMap) -> Result<ForwardPass> {
        if image.channels() != self.config.in_channels {
            return Err(Error::Config(format!(
                "network expects {} input channel(s), got {}",
                self.config.in_channels,
                image.channels()
            )));
        }
        let factor = self.config.downsample_factor();
        let size = image.size();
        if size.height % factor != 0 || size.width % factor != 0 {
            return Err(Error::IndivisibleSize { size, factor });
        }
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut current = image.clone();
        for layer in &self.layers {
            let next = layer.forward(&current);
            trace.push(current);
            current = next;
        }
        debug_assert_eq!(current.channels(), 1);
        debug_assert_eq!(current.size(), size);
        let prob = current.sigmoid_plane();
        Ok(ForwardPass {
            logits: current,
            prob,
            trace,
            version: self.version,
        })
    }

    /// Backpropagate a gradient on the logits through the cached pass.
    pub fn backward(&self, pass: &ForwardPass, grad_logits: &FeatureMap) -> Result<ParamGrads> {
        if pass.version != self.version {
            return Err(Error::StaleCache);
        }
        if grad_logits.size() != pass.logits.size() || grad_logits.channels() != 1 {
            return Err(Error::ShapeMismatch {
                context: "backward grad_logits",
                expected: pass.logits.size(),
                found: grad_logits.size(),
            });
        }
        let mut grads_rev: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut grad = grad_logits.clone();
        for (layer, input) in self.layers.iter().zip(&pass.trace).rev() {
            let (param_grads, grad_in) = layer.backward(input, &grad);
            if let Some((gw, gb)) = param_grads {
                grads_rev.push(vec![gw, gb]);
            }
            grad = grad_in;
        }
        let mut tensors = Vec::new();
        for pair in grads_rev.into_iter().rev() {
            let mut it = pair.into_iter();
            tensors.push(it.next().unwrap());
            tensors.push(it.next().unwrap());
        }
        Ok(ParamGrads { tensors })
    }
}

/// Forward both networks on the same image and return their pre-sigmoid
/// logit maps, the feature pair consumed by the image-consistency loss.
pub fn feature_pair(
    state_a: &NetworkState,
    state_b: &NetworkState,
    image: &FeatureMap,
) -> Result<(FeatureMap, FeatureMap)> {
    let a = state_a.forward(image)?;
    let b = state_b.forward(image)?;
    Ok((a.logits, b.logits))
}
