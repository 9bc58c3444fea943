//! Declarative network descriptions and their static shape plan.

use serde::{Deserialize, Serialize};

use crate::ail::{AilConfig, GradMode, DEFAULT_EPSILON};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputKind {
    /// `(H, W, channels)` images.
    Image { channels: usize },
    /// `(L, features)` frame sequences, handled internally as `(L, 1, features)` maps.
    Sequence { features: usize },
}

impl InputKind {
    pub fn channels(self) -> usize {
        match self {
            InputKind::Image { channels } => channels,
            InputKind::Sequence { features } => features,
        }
    }

    pub fn is_sequence(self) -> bool {
        matches!(self, InputKind::Sequence { .. })
    }
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn three() -> usize {
    3
}
fn yes() -> bool {
    true
}
fn default_eps() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerOp {
    Conv2d {
        channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "yes")]
        relu: bool,
    },
    Conv1d {
        channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "yes")]
        relu: bool,
    },
    Lail {
        channels: usize,
        #[serde(default = "three")]
        kernel: usize,
        #[serde(default = "two")]
        stride: usize,
        #[serde(default)]
        grad_mode: GradMode,
        #[serde(default = "default_eps")]
        epsilon: f64,
    },
    Gail {
        channels: usize,
        #[serde(default)]
        grad_mode: GradMode,
        #[serde(default = "default_eps")]
        epsilon: f64,
    },
    /// Max pooling with `floor(kernel/2)` padding; `channels` adds a 1×1
    /// projection afterwards when set.
    MaxPool {
        #[serde(default = "three")]
        kernel: usize,
        #[serde(default = "two")]
        stride: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        channels: Option<usize>,
    },
    StridedConv {
        channels: usize,
        #[serde(default = "one")]
        kernel: usize,
        #[serde(default = "two")]
        stride: usize,
    },
    DenseBlock {
        repetitions: usize,
        growth: usize,
        #[serde(default = "yes")]
        bottleneck: bool,
    },
    BatchNorm {
        #[serde(default = "yes")]
        relu: bool,
    },
    Classifier,
}

/// One layer. `in_channels`, when given, is checked against the channel
/// count flowing into the layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub op: LayerOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
}

impl From<LayerOp> for LayerSpec {
    fn from(op: LayerOp) -> Self {
        Self { op, in_channels: None }
    }
}

impl LayerOp {
    pub fn name(&self) -> &'static str {
        match self {
            LayerOp::Conv2d { .. } => "conv",
            LayerOp::Conv1d { .. } => "conv",
            LayerOp::Lail { .. } => "lail",
            LayerOp::Gail { .. } => "gail",
            LayerOp::MaxPool { .. } => "maxpool",
            LayerOp::StridedConv { .. } => "strided",
            LayerOp::DenseBlock { .. } => "dense",
            LayerOp::BatchNorm { .. } => "bn",
            LayerOp::Classifier => "fc",
        }
    }

    pub fn is_transition(&self) -> bool {
        matches!(
            self,
            LayerOp::Lail { .. } | LayerOp::MaxPool { .. } | LayerOp::StridedConv { .. }
        )
    }

    /// Downsampling factor along the (first, second) spatial axes.
    fn strides(&self, sequence: bool) -> (usize, usize) {
        let s = match *self {
            LayerOp::Conv2d { stride, .. }
            | LayerOp::Conv1d { stride, .. }
            | LayerOp::Lail { stride, .. }
            | LayerOp::MaxPool { stride, .. }
            | LayerOp::StridedConv { stride, .. } => stride,
            _ => 1,
        };
        (s, if sequence { 1 } else { s })
    }
}

/// Which layer kind fills transition slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Lail,
    MaxPool,
    StridedConv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input: InputKind,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    /// Inputs of differing spatial size are accepted; requires a global layer.
    #[serde(default)]
    pub variable_size: bool,
}

/// Activation extent after a layer: `(h, w, channels)`.
pub type Extent = (usize, usize, usize);

fn build_err(index: usize, message: impl Into<String>) -> Error {
    Error::Build {
        index,
        message: message.into(),
    }
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Structural checks; errors carry the offending layer index.
    pub fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        if n == 0 {
            return Err(build_err(0, "network has no layers"));
        }
        if self.num_classes == 0 {
            return Err(build_err(n - 1, "num_classes must be positive"));
        }
        if self.input.channels() == 0 {
            return Err(build_err(0, "input channel count must be positive"));
        }
        let seq = self.input.is_sequence();
        let mut c = self.input.channels();
        let mut globals = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(expected) = layer.in_channels {
                if expected != c {
                    return Err(build_err(
                        i,
                        format!("{} expects {expected} input channels but receives {c}", layer.op.name()),
                    ));
                }
            }
            if globals > 0 && !matches!(layer.op, LayerOp::Classifier | LayerOp::BatchNorm { .. }) {
                return Err(build_err(
                    i,
                    "only batch norm and the classifier may follow a global layer",
                ));
            }
            let positive = |v: usize, what: &str| {
                if v == 0 {
                    Err(build_err(i, format!("{what} must be positive")))
                } else {
                    Ok(())
                }
            };
            match layer.op {
                LayerOp::Conv2d {
                    channels,
                    kernel,
                    stride,
                    ..
                } => {
                    if seq {
                        return Err(build_err(i, "conv2d in a sequence network; use conv1d"));
                    }
                    positive(channels, "channels")?;
                    positive(kernel, "kernel")?;
                    positive(stride, "stride")?;
                    c = channels;
                }
                LayerOp::Conv1d {
                    channels,
                    kernel,
                    stride,
                    ..
                } => {
                    if !seq {
                        return Err(build_err(i, "conv1d in an image network; use conv2d"));
                    }
                    positive(channels, "channels")?;
                    positive(kernel, "kernel")?;
                    positive(stride, "stride")?;
                    c = channels;
                }
                LayerOp::Lail {
                    channels,
                    kernel,
                    stride,
                    epsilon,
                    ..
                } => {
                    positive(channels, "channels")?;
                    positive(kernel, "kernel")?;
                    positive(stride, "stride")?;
                    if !(epsilon > 0.0) {
                        return Err(build_err(i, "epsilon must be > 0"));
                    }
                    c = channels;
                }
                LayerOp::Gail { channels, epsilon, .. } => {
                    positive(channels, "channels")?;
                    if !(epsilon > 0.0) {
                        return Err(build_err(i, "epsilon must be > 0"));
                    }
                    globals += 1;
                    c = channels;
                }
                LayerOp::MaxPool {
                    kernel,
                    stride,
                    channels,
                } => {
                    positive(kernel, "kernel")?;
                    positive(stride, "stride")?;
                    if let Some(ch) = channels {
                        positive(ch, "channels")?;
                        c = ch;
                    }
                }
                LayerOp::StridedConv {
                    channels,
                    kernel,
                    stride,
                } => {
                    positive(channels, "channels")?;
                    positive(kernel, "kernel")?;
                    positive(stride, "stride")?;
                    c = channels;
                }
                LayerOp::DenseBlock {
                    repetitions, growth, ..
                } => {
                    if repetitions > 0 {
                        positive(growth, "growth")?;
                    }
                    c += repetitions * growth;
                }
                LayerOp::BatchNorm { .. } => {}
                LayerOp::Classifier => {
                    if i != n - 1 {
                        return Err(build_err(i, "classifier must be the final layer"));
                    }
                }
            }
        }
        if !matches!(self.layers[n - 1].op, LayerOp::Classifier) {
            return Err(build_err(n - 1, "final layer must be a classifier"));
        }
        if self.variable_size && globals != 1 {
            return Err(build_err(
                n - 1,
                format!("variable-size networks need exactly one global layer before the classifier, found {globals}"),
            ));
        }
        Ok(())
    }

    /// Smallest accepted spatial extent: the product of all strides.
    pub fn min_extent(&self) -> (usize, usize) {
        let seq = self.input.is_sequence();
        self.layers.iter().fold((1, 1), |(h, w), l| {
            let (sh, sw) = l.op.strides(seq);
            (h * sh, w * sw)
        })
    }

    /// Extent after every layer for an `h × w` input (`w = 1` for sequences).
    /// The classifier entry is `(1, 1, num_classes)`.
    pub fn plan(&self, h: usize, w: usize) -> Result<Vec<Extent>> {
        self.validate()?;
        let seq = self.input.is_sequence();
        let (mut h, mut w, mut c) = (h, if seq { 1 } else { w }, self.input.channels());
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let down = |v: usize, s: usize| v.div_ceil(s);
            let (sh, sw) = layer.op.strides(seq);
            match layer.op {
                LayerOp::Conv2d { channels, .. }
                | LayerOp::Conv1d { channels, .. }
                | LayerOp::Lail { channels, .. }
                | LayerOp::StridedConv { channels, .. } => {
                    (h, w, c) = (down(h, sh), down(w, sw), channels);
                }
                LayerOp::MaxPool { channels, .. } => {
                    (h, w, c) = (down(h, sh), down(w, sw), channels.unwrap_or(c));
                }
                LayerOp::Gail { channels, .. } => (h, w, c) = (1, 1, channels),
                LayerOp::DenseBlock {
                    repetitions, growth, ..
                } => c += repetitions * growth,
                LayerOp::BatchNorm { .. } => {}
                LayerOp::Classifier => (h, w, c) = (1, 1, self.num_classes),
            }
            if h == 0 || w == 0 {
                return Err(build_err(i, "spatial extent collapsed to zero"));
            }
            out.push((h, w, c));
        }
        Ok(out)
    }

    /// The same network with every transition replaced by `kind`, keeping
    /// each slot's stride and output channels. Max pooling gets a 1×1
    /// projection so downstream widths are unchanged.
    pub fn with_transitions(&self, kind: TransitionKind) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        let mut c = self.input.channels();
        for (layer, orig) in out.layers.iter_mut().zip(&self.layers) {
            let stride_and_width = match orig.op {
                LayerOp::Lail { channels, stride, .. } => Some((stride, channels)),
                LayerOp::MaxPool { stride, channels, .. } => Some((stride, channels.unwrap_or(c))),
                LayerOp::StridedConv { channels, stride, .. } => Some((stride, channels)),
                _ => None,
            };
            if let Some((stride, channels)) = stride_and_width {
                layer.op = match kind {
                    TransitionKind::Lail => match orig.op {
                        LayerOp::Lail { .. } => orig.op.clone(),
                        _ => LayerOp::Lail {
                            channels,
                            kernel: 3,
                            stride,
                            grad_mode: GradMode::Analytic,
                            epsilon: DEFAULT_EPSILON,
                        },
                    },
                    TransitionKind::MaxPool => LayerOp::MaxPool {
                        kernel: 3,
                        stride,
                        channels: (channels != c).then_some(channels),
                    },
                    TransitionKind::StridedConv => LayerOp::StridedConv {
                        channels,
                        kernel: 1,
                        stride,
                    },
                };
            }
            c = match orig.op {
                LayerOp::Conv2d { channels, .. }
                | LayerOp::Conv1d { channels, .. }
                | LayerOp::Lail { channels, .. }
                | LayerOp::Gail { channels, .. }
                | LayerOp::StridedConv { channels, .. } => channels,
                LayerOp::MaxPool { channels, .. } => channels.unwrap_or(c),
                LayerOp::DenseBlock {
                    repetitions, growth, ..
                } => c + repetitions * growth,
                _ => c,
            };
        }
        out.name = format!("{}-{}", self.name, transition_label(kind));
        out.validate()?;
        Ok(out)
    }

    /// Trainable scalar count from per-layer closed forms.
    pub fn analytic_param_count(&self) -> Result<usize> {
        self.validate()?;
        let seq = self.input.is_sequence();
        let att = if seq { 3 } else { 9 };
        let k2 = |k: usize| if seq { k } else { k * k };
        let bn = |c: usize| 2 * c;
        let mut c = self.input.channels();
        let mut total = 0;
        for layer in &self.layers {
            match layer.op {
                LayerOp::Conv2d { channels, kernel, .. }
                | LayerOp::Conv1d { channels, kernel, .. }
                | LayerOp::StridedConv { channels, kernel, .. } => {
                    total += k2(kernel) * c * channels + channels;
                    c = channels;
                }
                LayerOp::Lail { channels, .. } | LayerOp::Gail { channels, .. } => {
                    total += (c * channels + channels) + (att * c * channels + channels);
                    c = channels;
                }
                LayerOp::MaxPool { channels, .. } => {
                    if let Some(ch) = channels {
                        total += c * ch + ch;
                        c = ch;
                    }
                }
                LayerOp::DenseBlock {
                    repetitions,
                    growth,
                    bottleneck,
                } => {
                    for _ in 0..repetitions {
                        if bottleneck {
                            let mid = 4 * growth;
                            total += bn(c) + c * mid + mid + bn(mid) + att * mid * growth + growth;
                        } else {
                            total += bn(c) + att * c * growth + growth;
                        }
                        c += growth;
                    }
                }
                LayerOp::BatchNorm { .. } => total += bn(c),
                LayerOp::Classifier => total += c * self.num_classes + self.num_classes,
            }
        }
        Ok(total)
    }

    pub(crate) fn ail_config(&self, op: &LayerOp, c_in: usize) -> Option<AilConfig> {
        let seq = self.input.is_sequence();
        let base = match *op {
            LayerOp::Lail {
                channels,
                kernel,
                stride,
                ..
            } => {
                if seq {
                    AilConfig::local_1d(kernel, stride, c_in, channels)
                } else {
                    AilConfig::local(kernel, kernel, stride, c_in, channels)
                }
            }
            LayerOp::Gail { channels, .. } => {
                if seq {
                    AilConfig::global_1d(c_in, channels)
                } else {
                    AilConfig::global(c_in, channels)
                }
            }
            _ => return None,
        };
        match *op {
            LayerOp::Lail { grad_mode, epsilon, .. } | LayerOp::Gail { grad_mode, epsilon, .. } => {
                Some(base.with_grad_mode(grad_mode).with_epsilon(epsilon))
            }
            _ => None,
        }
    }
}

pub fn transition_label(kind: TransitionKind) -> &'static str {
    match kind {
        TransitionKind::Lail => "lail",
        TransitionKind::MaxPool => "maxpool",
        TransitionKind::StridedConv => "strided",
    }
}
