//! Built networks: parameters plus a forward pass recorded on a tape.

use rand::Rng;

use crate::ail::{ail_forward_tape, he_normal, AilConfig, AilVars};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{domain, Error, Result};
use crate::kernels::conv::ConvGeom;
use crate::kernels::linear::softmax;
use crate::kernels::norm::{BnStats, BN_MOMENTUM};
use crate::nets::spec::{LayerOp, NetworkSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm (for micro-batches larger than one).
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
    geom: ConvGeom,
}

#[derive(Clone, Copy, Debug)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Clone, Debug)]
struct DenseUnit {
    bn1: BnIds,
    conv1: Option<ConvIds>,
    bn2: Option<BnIds>,
    conv2: ConvIds,
}

#[derive(Clone, Debug)]
enum Built {
    Conv { conv: ConvIds, relu: bool },
    Ail { cfg: AilConfig, ids: [ParamId; 4] },
    MaxPool { geom: ConvGeom, proj: Option<ConvIds> },
    Dense(Vec<DenseUnit>),
    Norm { bn: BnIds, relu: bool },
    Classifier { w: ParamId, b: ParamId },
}

/// One attention map recorded during a forward pass.
#[derive(Clone, Debug)]
pub struct AttentionTap {
    pub layer: usize,
    pub name: String,
    /// Attention node, NHWC, including the layer's padding ring.
    pub attention: Var,
    pub padding: (usize, usize),
}

/// Batch statistics to fold into running averages after a training step.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    mean: ParamId,
    var: ParamId,
    stats: BnStats<T>,
}

pub struct ForwardOut<T> {
    /// `(B, num_classes)` logits.
    pub logits: Var,
    /// Output node of every layer, in order.
    pub layer_outputs: Vec<Var>,
    pub attention: Vec<AttentionTap>,
    pub bn_updates: Vec<BnUpdate<T>>,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    layers: Vec<Built>,
    names: Vec<String>,
    pub params: ParamStore<T>,
}

#[allow(clippy::too_many_arguments)]
fn conv_param<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    kh: usize,
    kw: usize,
    c_in: usize,
    c_out: usize,
    geom: ConvGeom,
    rng: &mut R,
) -> Result<ConvIds> {
    let w = store.add(
        format!("{prefix}.weights"),
        he_normal(&[kh, kw, c_in, c_out], kh * kw * c_in, rng),
    )?;
    let b = store.add(format!("{prefix}.bias"), Tensor::zeros(&[c_out]))?;
    Ok(ConvIds { w, b, geom })
}

fn bn_param<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, c: usize) -> Result<BnIds> {
    Ok(BnIds {
        gamma: store.add(format!("{prefix}.gamma"), Tensor::full(&[c], T::one()))?,
        beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[c]))?,
        mean: store.add_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[c]))?,
        var: store.add_buffer(format!("{prefix}.running_var"), Tensor::full(&[c], T::one()))?,
    })
}

impl<T: Scalar> Network<T> {
    /// Validate `spec` and draw fresh parameters. Convolutions are fan-in
    /// scaled with zero bias; the classifier starts at zero.
    pub fn build<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let seq = spec.input.is_sequence();
        let kdims = |k: usize| if seq { (k, 1) } else { (k, k) };
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut names = Vec::with_capacity(spec.layers.len());
        let mut counts = std::collections::HashMap::<&str, usize>::new();
        let mut c = spec.input.channels();
        for layer in &spec.layers {
            let kind = layer.op.name();
            let ordinal = counts.entry(kind).or_default();
            *ordinal += 1;
            let name = if kind == "fc" {
                "fc".to_string()
            } else {
                format!("{kind}{ordinal}")
            };
            let built = match layer.op {
                LayerOp::Conv2d {
                    channels,
                    kernel,
                    stride,
                    relu,
                }
                | LayerOp::Conv1d {
                    channels,
                    kernel,
                    stride,
                    relu,
                } => {
                    let (kh, kw) = kdims(kernel);
                    let geom = ConvGeom::same(kh, kw, stride);
                    let conv = conv_param(&mut store, &name, kh, kw, c, channels, geom, rng)?;
                    c = channels;
                    Built::Conv { conv, relu }
                }
                LayerOp::StridedConv {
                    channels,
                    kernel,
                    stride,
                } => {
                    let (kh, kw) = kdims(kernel);
                    let geom = ConvGeom::same(kh, kw, stride);
                    let conv = conv_param(&mut store, &name, kh, kw, c, channels, geom, rng)?;
                    c = channels;
                    Built::Conv { conv, relu: false }
                }
                LayerOp::Lail { .. } | LayerOp::Gail { .. } => {
                    let cfg = spec.ail_config(&layer.op, c).expect("attention layer");
                    let (kh, kw) = cfg.attention_extent();
                    let ids = [
                        store.add(
                            format!("{name}.content.weights"),
                            he_normal(&[1, 1, c, cfg.c_out], c, rng),
                        )?,
                        store.add(format!("{name}.content.bias"), Tensor::zeros(&[cfg.c_out]))?,
                        store.add(
                            format!("{name}.attention.weights"),
                            he_normal(&[kh, kw, c, cfg.c_out], kh * kw * c, rng),
                        )?,
                        store.add(format!("{name}.attention.bias"), Tensor::zeros(&[cfg.c_out]))?,
                    ];
                    c = cfg.c_out;
                    Built::Ail { cfg, ids }
                }
                LayerOp::MaxPool {
                    kernel,
                    stride,
                    channels,
                } => {
                    let (kh, kw) = kdims(kernel);
                    let geom = ConvGeom::same(kh, kw, stride);
                    let proj = match channels {
                        Some(ch) => {
                            let p = conv_param(
                                &mut store,
                                &format!("{name}.proj"),
                                1,
                                1,
                                c,
                                ch,
                                ConvGeom::same(1, 1, 1),
                                rng,
                            )?;
                            c = ch;
                            Some(p)
                        }
                        None => None,
                    };
                    Built::MaxPool { geom, proj }
                }
                LayerOp::DenseBlock {
                    repetitions,
                    growth,
                    bottleneck,
                } => {
                    let (kh, kw) = kdims(3);
                    let mut units = Vec::with_capacity(repetitions);
                    for u in 0..repetitions {
                        let p = format!("{name}.unit{u}");
                        let bn1 = bn_param(&mut store, &format!("{p}.bn1"), c)?;
                        let (conv1, bn2, mid) = if bottleneck {
                            let mid = 4 * growth;
                            let conv1 = conv_param(
                                &mut store,
                                &format!("{p}.conv1"),
                                1,
                                1,
                                c,
                                mid,
                                ConvGeom::same(1, 1, 1),
                                rng,
                            )?;
                            let bn2 = bn_param(&mut store, &format!("{p}.bn2"), mid)?;
                            (Some(conv1), Some(bn2), mid)
                        } else {
                            (None, None, c)
                        };
                        let geom = ConvGeom::same(kh, kw, 1);
                        let conv2 = conv_param(&mut store, &format!("{p}.conv2"), kh, kw, mid, growth, geom, rng)?;
                        units.push(DenseUnit { bn1, conv1, bn2, conv2 });
                        c += growth;
                    }
                    Built::Dense(units)
                }
                LayerOp::BatchNorm { relu } => Built::Norm {
                    bn: bn_param(&mut store, &name, c)?,
                    relu,
                },
                LayerOp::Classifier => {
                    // consumes a 1×1 map, which a global layer guarantees
                    let w = store.add("fc.weights", Tensor::zeros(&[c, spec.num_classes]))?;
                    let b = store.add("fc.bias", Tensor::zeros(&[spec.num_classes]))?;
                    Built::Classifier { w, b }
                }
            };
            layers.push(built);
            names.push(name);
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
            names,
            params: store,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layer_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_params(&self) -> usize {
        self.params.num_trainable()
    }

    /// Replace parameter values by name; every trainable and buffer entry
    /// must be present with a matching shape.
    pub fn load_values(&mut self, lookup: impl Fn(&str) -> Option<Tensor<T>>) -> Result<()> {
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            let name = self.params.get(id).name.clone();
            let value = lookup(&name).ok_or_else(|| Error::MissingParameter(name.clone()))?;
            value.expect_shape(self.params.get(id).value.shape())?;
            self.params.get_mut(id).value = value;
        }
        Ok(())
    }

    /// Convert a sample or batch to NHWC and check its extent.
    pub fn prepare_input(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.spec.input.channels();
        let nhwc = match (self.spec.input.is_sequence(), x.shape()) {
            (true, &[l, f]) => x.clone().reshape(&[1, l, 1, f])?,
            (true, &[b, l, f]) => x.clone().reshape(&[b, l, 1, f])?,
            (false, &[h, w, ch]) => x.clone().reshape(&[1, h, w, ch])?,
            (false, &[_, _, _, _]) => x.clone(),
            _ => {
                return Err(domain(format!(
                    "input of shape {:?} does not fit network `{}`",
                    x.shape(),
                    self.spec.name
                )))
            }
        };
        let s = nhwc.shape();
        if s[3] != c {
            return Err(crate::error::config(format!(
                "network `{}` expects {c} input channels, got {}",
                self.spec.name, s[3]
            )));
        }
        let (mh, mw) = self.spec.min_extent();
        if s[1] < mh || s[2] < mw {
            return Err(domain(format!(
                "input {}x{} is smaller than the minimum {mh}x{mw} of network `{}`",
                s[1], s[2], self.spec.name
            )));
        }
        Ok(nhwc)
    }

    fn bn(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: Var,
        ids: BnIds,
        batch_mode: bool,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<Var> {
        let gamma = tape.param(store, ids.gamma);
        let beta = tape.param(store, ids.beta);
        let running = (store.value(ids.mean), store.value(ids.var));
        let (y, stats) = tape.batch_norm(x, gamma, beta, running, batch_mode)?;
        if batch_mode {
            updates.push(BnUpdate {
                mean: ids.mean,
                var: ids.var,
                stats,
            });
        }
        Ok(y)
    }

    fn conv(&self, store: &ParamStore<T>, tape: &mut Tape<T>, x: Var, ids: ConvIds) -> Result<Var> {
        let w = tape.param(store, ids.w);
        let b = tape.param(store, ids.b);
        tape.conv2d(x, w, b, ids.geom)
    }

    /// Record the network on `tape`. `x` is a sample or batch in the
    /// network's input layout.
    pub fn forward(&self, tape: &mut Tape<T>, x: &Tensor<T>, mode: Mode) -> Result<ForwardOut<T>> {
        self.forward_with(&self.params, tape, x, mode)
    }

    /// [`Network::forward`] reading parameters from `store`, which must
    /// share this network's layout (a clone of `params`, say).
    pub fn forward_with(
        &self,
        store: &ParamStore<T>,
        tape: &mut Tape<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<ForwardOut<T>> {
        let input = self.prepare_input(x)?;
        let batch = input.shape()[0];
        // single-sample micro-batches fall back to running statistics
        let batch_mode = mode == Mode::Train && batch > 1;
        let mut cur = tape.input(input);
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut attention = Vec::new();
        let mut updates = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                Built::Conv { conv, relu } => {
                    let y = self.conv(store, tape, cur, *conv)?;
                    if *relu {
                        tape.relu(y)
                    } else {
                        y
                    }
                }
                Built::Ail { cfg, ids } => {
                    let vars = AilVars {
                        content_w: tape.param(store, ids[0]),
                        content_b: tape.param(store, ids[1]),
                        attention_w: tape.param(store, ids[2]),
                        attention_b: tape.param(store, ids[3]),
                    };
                    let trace = ail_forward_tape(tape, cur, cfg, vars)?;
                    attention.push(AttentionTap {
                        layer: i,
                        name: self.names[i].clone(),
                        attention: trace.attention,
                        padding: cfg.padding(),
                    });
                    trace.output
                }
                Built::MaxPool { geom, proj } => {
                    let y = tape.maxpool(cur, *geom)?;
                    match proj {
                        Some(p) => self.conv(store, tape, y, *p)?,
                        None => y,
                    }
                }
                Built::Dense(units) => {
                    for u in units {
                        let mut h = self.bn(store, tape, cur, u.bn1, batch_mode, &mut updates)?;
                        h = tape.relu(h);
                        if let (Some(c1), Some(b2)) = (u.conv1, u.bn2) {
                            h = self.conv(store, tape, h, c1)?;
                            h = self.bn(store, tape, h, b2, batch_mode, &mut updates)?;
                            h = tape.relu(h);
                        }
                        let g = self.conv(store, tape, h, u.conv2)?;
                        cur = tape.concat(&[cur, g])?;
                    }
                    cur
                }
                Built::Norm { bn, relu } => {
                    let y = self.bn(store, tape, cur, *bn, batch_mode, &mut updates)?;
                    if *relu {
                        tape.relu(y)
                    } else {
                        y
                    }
                }
                Built::Classifier { w, b } => {
                    let s = tape.value(cur).shape().to_vec();
                    let features = s[1] * s[2] * s[3];
                    let expected = store.value(*w).shape()[0];
                    if features != expected {
                        return Err(domain(format!(
                            "classifier expects a 1x1x{expected} map, got {}x{}x{}",
                            s[1], s[2], s[3]
                        )));
                    }
                    let flat = tape.reshape(cur, &[s[0], features])?;
                    let wv = tape.param(store, *w);
                    let bv = tape.param(store, *b);
                    tape.linear(flat, wv, bv)?
                }
            };
            outputs.push(cur);
        }
        Ok(ForwardOut {
            logits: cur,
            layer_outputs: outputs,
            attention,
            bn_updates: updates,
        })
    }

    /// Fold batch statistics into the running averages.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        let m = T::of(BN_MOMENTUM);
        let keep = T::one() - m;
        for u in updates {
            for (r, &b) in self
                .params
                .get_mut(u.mean)
                .value
                .data_mut()
                .iter_mut()
                .zip(&u.stats.mean)
            {
                *r = keep * *r + m * b;
            }
            for (r, &b) in self
                .params
                .get_mut(u.var)
                .value
                .data_mut()
                .iter_mut()
                .zip(&u.stats.var_unbiased)
            {
                *r = keep * *r + m * b;
            }
        }
    }

    /// Class probabilities `(B, K)` in evaluation mode.
    pub fn predict_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x, Mode::Eval)?;
        Ok(softmax(tape.value(out.logits)))
    }

    /// Class distribution `(K)` of one sample.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let expected = if self.spec.input.is_sequence() { 2 } else { 3 };
        if x.rank() != expected {
            return Err(domain(format!(
                "predict takes a single sample of rank {expected}, got shape {:?}",
                x.shape()
            )));
        }
        let p = self.predict_batch(x)?;
        p.reshape(&[self.spec.num_classes])
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            names: self.names.clone(),
            params: self.params.cast(),
        }
    }
}
