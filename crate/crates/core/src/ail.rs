//! Attention incorporate layers.
//!
//! An AIL computes two branches at full resolution from its input,
//!
//! ```text
//! X = relu(conv1x1(x_in))        content, ≥ 0
//! W = sigmoid(conv3x3(x_in))     attention, in (0, 1)
//! ```
//!
//! then slides an `m×n` window with stride `s` over both maps and emits, per
//! window and channel `k`,
//!
//! ```text
//! out_k = Σ_ij W_ijk·X_ijk / (Σ_ij W_ijk + ε)
//! ```
//!
//! A local layer (LAIL) uses a fixed window and downsamples like pooling. A
//! global layer (GAIL) uses one window covering the whole map and so emits
//! `1×1×c′` whatever the input size. Sequences use the same math with the
//! window width fixed to 1.
//!
//! Zero padding of `floor(m/2)`, `floor(n/2)` is applied to the branch
//! inputs rather than to `X`/`W`, so the maps the windows see are
//! `(M + 2·floor(m/2)) × (N + 2·floor(n/2))` and every site in them holds a
//! computed activation. With odd windows the output is `ceil(M/s) × ceil(N/s)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{config, contract, domain, Result};
use crate::kernels::activation::{relu, sigmoid};
use crate::kernels::conv::{conv2d_forward, ConvGeom, ConvKernel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Which derivative the attention branch receives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// Exact quotient-rule derivative of the incorporate step.
    #[default]
    Analytic,
    /// `Σ_ij W_ij·(X_xy − X_ij) / (Σ_ij W_ij² + ε)`: the attention gradient
    /// as originally published. It is not the derivative of the forward
    /// pass; kept for comparison runs.
    PaperLiteral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AilKernel {
    Local { m: usize, n: usize },
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AilConfig {
    pub kernel: AilKernel,
    /// Window stride; ignored for [`AilKernel::Global`].
    pub stride: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub epsilon: f64,
    pub grad_mode: GradMode,
    /// 1-D layer over `(L, 1, C)` maps: width-1 windows and a `3×1` attention conv.
    pub sequence: bool,
}

impl AilConfig {
    pub fn local(m: usize, n: usize, stride: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            kernel: AilKernel::Local { m, n },
            stride,
            c_in,
            c_out,
            epsilon: DEFAULT_EPSILON,
            grad_mode: GradMode::Analytic,
            sequence: false,
        }
    }

    pub fn global(c_in: usize, c_out: usize) -> Self {
        Self {
            kernel: AilKernel::Global,
            stride: 1,
            ..Self::local(1, 1, 1, c_in, c_out)
        }
    }

    pub fn local_1d(m: usize, stride: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            sequence: true,
            ..Self::local(m, 1, stride, c_in, c_out)
        }
    }

    pub fn global_1d(c_in: usize, c_out: usize) -> Self {
        Self {
            sequence: true,
            ..Self::global(c_in, c_out)
        }
    }

    pub fn with_grad_mode(mut self, mode: GradMode) -> Self {
        self.grad_mode = mode;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 {
            return Err(config("AIL channel counts must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(config(format!("AIL epsilon must be > 0, got {}", self.epsilon)));
        }
        if let AilKernel::Local { m, n } = self.kernel {
            if m == 0 || n == 0 {
                return Err(config("local AIL window extents must be ≥ 1"));
            }
            if self.stride == 0 {
                return Err(config("local AIL stride must be ≥ 1"));
            }
            if self.sequence && n != 1 {
                return Err(config("1-D AIL windows have width 1"));
            }
        }
        Ok(())
    }

    /// Zero padding applied to the branch inputs.
    pub fn padding(&self) -> (usize, usize) {
        match self.kernel {
            AilKernel::Local { m, n } => (m / 2, n / 2),
            AilKernel::Global => (0, 0),
        }
    }

    pub fn attention_extent(&self) -> (usize, usize) {
        if self.sequence {
            (3, 1)
        } else {
            (3, 3)
        }
    }

    pub fn content_geom(&self) -> ConvGeom {
        let (ph, pw) = self.padding();
        ConvGeom::with_padding(1, 1, 1, ph, pw)
    }

    pub fn attention_geom(&self) -> ConvGeom {
        let (ph, pw) = self.padding();
        let (kh, kw) = self.attention_extent();
        ConvGeom::with_padding(kh, kw, 1, ph + kh / 2, pw + kw / 2)
    }

    /// Window parameters for branch maps of spatial extent `hp × wp`.
    pub fn incorporation(&self, hp: usize, wp: usize) -> Incorporation {
        let (m, n, stride) = match self.kernel {
            AilKernel::Local { m, n } => (m, n, self.stride),
            AilKernel::Global => (hp, wp, 1),
        };
        Incorporation {
            m,
            n,
            stride,
            eps: self.epsilon,
            grad_mode: self.grad_mode,
        }
    }

    /// Output spatial extent for an `h × w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.padding();
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);
        self.incorporation(hp, wp).output_extent(hp, wp)
    }
}

/// Learnable branch kernels of one AIL.
#[derive(Clone, Debug)]
pub struct AilParams<T> {
    pub content: ConvKernel<T>,
    pub attention: ConvKernel<T>,
}

/// Fan-in scaled normal initialization: `N(0, 2 / fan_in)`.
pub fn he_normal<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

impl<T: Scalar> AilParams<T> {
    /// Both branches fan-in scaled, zero biases: initial attention sits
    /// around 0.5 and the layer starts close to average pooling.
    pub fn init<R: Rng + ?Sized>(cfg: &AilConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (kh, kw) = cfg.attention_extent();
        let content = he_normal(&[1, 1, cfg.c_in, cfg.c_out], cfg.c_in, rng);
        let attention = he_normal(&[kh, kw, cfg.c_in, cfg.c_out], kh * kw * cfg.c_in, rng);
        Self::new(
            cfg,
            content,
            Tensor::zeros(&[cfg.c_out]),
            attention,
            Tensor::zeros(&[cfg.c_out]),
        )
    }

    pub fn new(
        cfg: &AilConfig,
        content_w: Tensor<T>,
        content_b: Tensor<T>,
        attention_w: Tensor<T>,
        attention_b: Tensor<T>,
    ) -> Result<Self> {
        let (kh, kw) = cfg.attention_extent();
        content_w.expect_shape(&[1, 1, cfg.c_in, cfg.c_out])?;
        attention_w.expect_shape(&[kh, kw, cfg.c_in, cfg.c_out])?;
        let cg = cfg.content_geom();
        let ag = cfg.attention_geom();
        Ok(Self {
            content: ConvKernel {
                weights: content_w,
                bias: content_b,
                stride: 1,
                padding: (cg.pad_h, cg.pad_w),
            },
            attention: ConvKernel {
                weights: attention_w,
                bias: attention_b,
                stride: 1,
                padding: (ag.pad_h, ag.pad_w),
            },
        })
    }
}

/// Window parameters of the incorporate step on already-computed branch maps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Incorporation {
    pub m: usize,
    pub n: usize,
    pub stride: usize,
    pub eps: f64,
    pub grad_mode: GradMode,
}

impl Incorporation {
    pub fn output_extent(&self, hp: usize, wp: usize) -> Result<(usize, usize)> {
        if self.m == 0 || self.n == 0 || self.stride == 0 {
            return Err(config(format!("bad window {self:?}")));
        }
        if hp < self.m || wp < self.n {
            return Err(domain(format!(
                "window {}x{} exceeds padded map {hp}x{wp}",
                self.m, self.n
            )));
        }
        Ok(((hp - self.m) / self.stride + 1, (wp - self.n) / self.stride + 1))
    }
}

struct MapDims {
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    ho: usize,
    wo: usize,
}

fn map_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, spec: &Incorporation) -> Result<MapDims> {
    if x.shape() != w.shape() {
        return Err(contract(format!(
            "content {:?} and attention {:?} maps differ in shape",
            x.shape(),
            w.shape()
        )));
    }
    let [b, h, wd, c] = match *x.shape() {
        [b, h, w, c] => [b, h, w, c],
        _ => return Err(config(format!("branch maps must be NHWC, got {:?}", x.shape()))),
    };
    let (ho, wo) = spec.output_extent(h, wd)?;
    Ok(MapDims { b, h, w: wd, c, ho, wo })
}

impl MapDims {
    /// Channel-0 offsets of every site in window `(oy, ox)` of image `b`.
    fn sites(&self, spec: &Incorporation, b: usize, oy: usize, ox: usize) -> impl Iterator<Item = usize> + '_ {
        let (y0, x0) = (oy * spec.stride, ox * spec.stride);
        let (m, n) = (spec.m, spec.n);
        (0..m).flat_map(move |i| {
            let row = ((b * self.h + y0 + i) * self.w + x0) * self.c;
            (0..n).map(move |j| row + j * self.c)
        })
    }

    fn windows(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        (0..self.b).flat_map(move |b| {
            (0..self.ho).flat_map(move |oy| {
                (0..self.wo).map(move |ox| (b, oy, ox, ((b * self.ho + oy) * self.wo + ox) * self.c))
            })
        })
    }
}

/// Per-window sums Σw, Σw·x and (optionally) Σw².
fn accumulate<T: Scalar>(
    x: &[T],
    w: &[T],
    sites: impl Iterator<Item = usize>,
    sw: &mut [T],
    swx: &mut [T],
    mut sw2: Option<&mut [T]>,
) {
    sw.fill(T::zero());
    swx.fill(T::zero());
    if let Some(s) = sw2.as_deref_mut() {
        s.fill(T::zero());
    }
    let c = sw.len();
    for base in sites {
        let (xs, ws) = (&x[base..base + c], &w[base..base + c]);
        for ch in 0..c {
            sw[ch] += ws[ch];
            swx[ch] += ws[ch] * xs[ch];
        }
        if let Some(s) = sw2.as_deref_mut() {
            for ch in 0..c {
                s[ch] += ws[ch] * ws[ch];
            }
        }
    }
}

/// Incorporate every window of NHWC branch maps `x` (content) and `w`
/// (attention), which must already carry their padding.
pub fn incorporate_map<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, spec: &Incorporation) -> Result<Tensor<T>> {
    let d = map_dims(x, w, spec)?;
    let eps = T::of(spec.eps);
    let mut out = vec![T::zero(); d.b * d.ho * d.wo * d.c];
    let (mut sw, mut swx) = (vec![T::zero(); d.c], vec![T::zero(); d.c]);
    for (b, oy, ox, o) in d.windows() {
        accumulate(x.data(), w.data(), d.sites(spec, b, oy, ox), &mut sw, &mut swx, None);
        for ch in 0..d.c {
            out[o + ch] = swx[ch] / (sw[ch] + eps);
        }
    }
    Tensor::new(&[d.b, d.ho, d.wo, d.c], out)
}

/// Gradient of the incorporate step with respect to the content map:
/// `∂out_k/∂X_xyk = W_xyk / (Σ W + ε)`, summed over overlapping windows.
pub fn ail_backward_content<T: Scalar>(grad_out: &Tensor<T>, w: &Tensor<T>, spec: &Incorporation) -> Result<Tensor<T>> {
    let d = map_dims(w, w, spec)?;
    grad_out.expect_shape(&[d.b, d.ho, d.wo, d.c])?;
    let eps = T::of(spec.eps);
    let wd = w.data();
    let g = grad_out.data();
    let mut dx = vec![T::zero(); w.len()];
    let mut sw = vec![T::zero(); d.c];
    for (b, oy, ox, o) in d.windows() {
        sw.fill(T::zero());
        for base in d.sites(spec, b, oy, ox) {
            for ch in 0..d.c {
                sw[ch] += wd[base + ch];
            }
        }
        for ch in 0..d.c {
            sw[ch] = g[o + ch] / (sw[ch] + eps);
        }
        for base in d.sites(spec, b, oy, ox) {
            for ch in 0..d.c {
                dx[base + ch] += sw[ch] * wd[base + ch];
            }
        }
    }
    Tensor::new(w.shape(), dx)
}

/// Gradient of the incorporate step with respect to the attention map.
///
/// Analytic: `(X_xy·(ΣW + ε) − Σ W·X) / (ΣW + ε)² = (X_xy − out) / (ΣW + ε)`.
/// PaperLiteral: `(X_xy·ΣW − Σ W·X) / (Σ W² + ε)`.
pub fn ail_backward_attention<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &Incorporation,
) -> Result<Tensor<T>> {
    let d = map_dims(x, w, spec)?;
    grad_out.expect_shape(&[d.b, d.ho, d.wo, d.c])?;
    let eps = T::of(spec.eps);
    let (xd, wd, g) = (x.data(), w.data(), grad_out.data());
    let mut dw = vec![T::zero(); w.len()];
    let (mut sw, mut swx, mut sw2) = (vec![T::zero(); d.c], vec![T::zero(); d.c], vec![T::zero(); d.c]);
    // per-channel (scale, shift): dW_site = scale·X_site − shift
    let (mut scale, mut shift) = (vec![T::zero(); d.c], vec![T::zero(); d.c]);
    for (b, oy, ox, o) in d.windows() {
        let literal = spec.grad_mode == GradMode::PaperLiteral;
        accumulate(
            xd,
            wd,
            d.sites(spec, b, oy, ox),
            &mut sw,
            &mut swx,
            literal.then_some(&mut sw2[..]),
        );
        for ch in 0..d.c {
            match spec.grad_mode {
                GradMode::Analytic => {
                    let denom = sw[ch] + eps;
                    scale[ch] = g[o + ch] / denom;
                    shift[ch] = scale[ch] * swx[ch] / denom;
                }
                GradMode::PaperLiteral => {
                    let denom = sw2[ch] + eps;
                    scale[ch] = g[o + ch] * sw[ch] / denom;
                    shift[ch] = g[o + ch] * swx[ch] / denom;
                }
            }
        }
        for base in d.sites(spec, b, oy, ox) {
            for ch in 0..d.c {
                dw[base + ch] += scale[ch] * xd[base + ch] - shift[ch];
            }
        }
    }
    Tensor::new(w.shape(), dw)
}

fn as_map<T: Scalar>(x_in: &Tensor<T>, cfg: &AilConfig) -> Result<(Tensor<T>, usize)> {
    let rank = x_in.rank();
    let map = match (cfg.sequence, x_in.shape()) {
        (true, &[l, c]) => x_in.clone().reshape(&[1, l, 1, c])?,
        (true, &[b, l, c]) => x_in.clone().reshape(&[b, l, 1, c])?,
        (false, _) => x_in.clone().reshape(&x_in.as_nhwc_dims()?)?,
        (true, _) => return Err(config(format!("1-D AIL expects (L, C) input, got {:?}", x_in.shape()))),
    };
    if map.shape()[3] != cfg.c_in {
        return Err(config(format!(
            "channel mismatch: AIL expects {} input channels, got {}",
            cfg.c_in,
            map.shape()[3]
        )));
    }
    Ok((map, rank))
}

/// Content and attention maps `(X, W)` of an input, each with the layer's
/// padding included. Accepts `(H, W, C)` / `(B, H, W, C)`, or `(L, C)` /
/// `(B, L, C)` for 1-D layers; outputs are NHWC.
pub fn ail_branches<T: Scalar>(
    x_in: &Tensor<T>,
    cfg: &AilConfig,
    params: &AilParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    cfg.validate()?;
    let (map, _) = as_map(x_in, cfg)?;
    let x = relu(&conv2d_forward(
        &map,
        &params.content.weights,
        &params.content.bias,
        cfg.content_geom(),
    )?);
    let w = sigmoid(&conv2d_forward(
        &map,
        &params.attention.weights,
        &params.attention.bias,
        cfg.attention_geom(),
    )?);
    if x.shape() != w.shape() {
        return Err(contract(format!(
            "branch shapes diverged: {:?} vs {:?}",
            x.shape(),
            w.shape()
        )));
    }
    Ok((x, w))
}

/// One window cut from a map, with the output coordinate it produces.
#[derive(Clone, Debug)]
pub struct Window<T> {
    pub out_y: usize,
    pub out_x: usize,
    pub values: Tensor<T>,
}

/// Cut an `(M, N, C)` map into windows in row-major output order. The map
/// is zero padded by `padding` first, defaulting to `floor(m/2)`,
/// `floor(n/2)` for local windows and none for a global one.
pub fn window_iter<T: Scalar>(
    t: &Tensor<T>,
    kernel: AilKernel,
    stride: usize,
    padding: Option<(usize, usize)>,
) -> Result<Vec<Window<T>>> {
    let [mm, nn, c] = match *t.shape() {
        [a, b, c] => [a, b, c],
        _ => return Err(config(format!("window_iter expects (M, N, C), got {:?}", t.shape()))),
    };
    let (m, n, stride, (ph, pw)) = match kernel {
        AilKernel::Local { m, n } => (m, n, stride, padding.unwrap_or((m / 2, n / 2))),
        AilKernel::Global => (mm, nn, 1, (0, 0)),
    };
    let (hp, wp) = (mm + 2 * ph, nn + 2 * pw);
    let spec = Incorporation {
        m,
        n,
        stride,
        eps: 0.0,
        grad_mode: GradMode::Analytic,
    };
    let (ho, wo) = spec.output_extent(hp, wp)?;
    let mut out = Vec::with_capacity(ho * wo);
    for oy in 0..ho {
        for ox in 0..wo {
            let values = Tensor::from_fn(&[m, n, c], |flat| {
                let (i, j, ch) = (flat / (n * c), (flat / c) % n, flat % c);
                let (y, x) = (oy * stride + i, ox * stride + j);
                if y < ph || y >= ph + mm || x < pw || x >= pw + nn {
                    T::zero()
                } else {
                    t.get(&[y - ph, x - pw, ch])
                }
            });
            out.push(Window {
                out_y: oy,
                out_x: ox,
                values,
            });
        }
    }
    Ok(out)
}

/// Incorporate one pair of `(m, n, c)` windows into a `(1, 1, c)` output.
pub fn incorporate<T: Scalar>(xw: &Tensor<T>, ww: &Tensor<T>, epsilon: f64) -> Result<Tensor<T>> {
    let (m, n, c) = match *xw.shape() {
        [m, n, c] => (m, n, c),
        _ => return Err(config(format!("window must be (m, n, c), got {:?}", xw.shape()))),
    };
    let spec = Incorporation {
        m,
        n,
        stride: 1,
        eps: epsilon,
        grad_mode: GradMode::Analytic,
    };
    let x = xw.clone().reshape(&[1, m, n, c])?;
    let w = ww.clone().reshape(&[1, m, n, c])?;
    incorporate_map(&x, &w, &spec)?.reshape(&[1, 1, c])
}

/// Plain-tensor forward pass. Output is `(H', W', c′)` (or batched), or
/// `(L', c′)` for 1-D layers.
pub fn ail_forward<T: Scalar>(x_in: &Tensor<T>, cfg: &AilConfig, params: &AilParams<T>) -> Result<Tensor<T>> {
    let (x, w) = ail_branches(x_in, cfg, params)?;
    let spec = cfg.incorporation(x.shape()[1], x.shape()[2]);
    let y = incorporate_map(&x, &w, &spec)?;
    let [b, ho, wo, c] = [y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]];
    match (cfg.sequence, x_in.rank()) {
        (true, 2) => y.reshape(&[ho, c]),
        (true, _) => y.reshape(&[b, ho, c]),
        (false, 3) => y.reshape(&[ho, wo, c]),
        _ => Ok(y),
    }
}

/// Tape handles for the four learnable tensors of one AIL.
#[derive(Clone, Copy, Debug)]
pub struct AilVars {
    pub content_w: Var,
    pub content_b: Var,
    pub attention_w: Var,
    pub attention_b: Var,
}

/// Nodes produced by [`ail_forward_tape`].
#[derive(Clone, Copy, Debug)]
pub struct AilTrace {
    pub output: Var,
    pub content: Var,
    pub attention: Var,
}

/// Records an AIL on the tape. `x` must be NHWC (`(B, L, 1, C)` for 1-D).
pub fn ail_forward_tape<T: Scalar>(tape: &mut Tape<T>, x: Var, cfg: &AilConfig, vars: AilVars) -> Result<AilTrace> {
    cfg.validate()?;
    let pre_x = tape.conv2d(x, vars.content_w, vars.content_b, cfg.content_geom())?;
    let content = tape.relu(pre_x);
    let pre_w = tape.conv2d(x, vars.attention_w, vars.attention_b, cfg.attention_geom())?;
    let attention = tape.sigmoid(pre_w);
    let (hp, wp) = (tape.value(content).shape()[1], tape.value(content).shape()[2]);
    let output = tape.incorporate(content, attention, cfg.incorporation(hp, wp))?;
    Ok(AilTrace {
        output,
        content,
        attention,
    })
}
