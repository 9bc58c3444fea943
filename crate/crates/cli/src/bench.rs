//! Forward-cost comparison of the three transition kinds on one layer.

use std::io::Write;
use std::time::Instant;

use ain_core::ail::{ail_forward, he_normal};
use ain_core::kernels::conv::conv2d_forward;
use ain_core::kernels::pool::maxpool_forward;
use ain_core::kernels::ConvGeom;
use ain_core::nets::TransitionKind;
use ain_core::rng::{stream, Stream};
use ain_core::{AilConfig, AilParams, Tensor};
use rand::Rng;
use serde::Serialize;

use crate::Failure;

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub size: usize,
    pub kind: &'static str,
    pub c_in: usize,
    pub c_out: usize,
    pub params: usize,
    pub repeats: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
}

const KINDS: [(TransitionKind, &str); 3] = [
    (TransitionKind::Lail, "lail"),
    (TransitionKind::MaxPool, "max_pool"),
    (TransitionKind::StridedConv, "strided_conv"),
];

/// One stride-2 transition from `c_in` to `c_out` channels, laid out as the
/// network builder lays it out: 3×3 attention windows, 3×3 max pooling with
/// a 1×1 projection when widths differ, or a 1×1 strided convolution.
struct Layer {
    kind: TransitionKind,
    ail: Option<(AilConfig, AilParams<f32>)>,
    conv: Option<(Tensor<f32>, Tensor<f32>)>,
}

impl Layer {
    fn new(kind: TransitionKind, c_in: usize, c_out: usize, seed: u64) -> Result<Self, Failure> {
        let mut rng = stream(seed, Stream::Bench, kind as u64);
        let conv = |rng: &mut _| (he_normal(&[1, 1, c_in, c_out], c_in, rng), Tensor::zeros(&[c_out]));
        Ok(match kind {
            TransitionKind::Lail => {
                let cfg = AilConfig::local(3, 3, 2, c_in, c_out);
                let params = AilParams::init(&cfg, &mut rng)?;
                Layer {
                    kind,
                    ail: Some((cfg, params)),
                    conv: None,
                }
            }
            TransitionKind::MaxPool => Layer {
                kind,
                ail: None,
                conv: (c_in != c_out).then(|| conv(&mut rng)),
            },
            TransitionKind::StridedConv => Layer {
                kind,
                ail: None,
                conv: Some(conv(&mut rng)),
            },
        })
    }

    fn params(&self) -> usize {
        let ail = self.ail.as_ref().map_or(0, |(_, p)| {
            p.content.weights.len() + p.content.bias.len() + p.attention.weights.len() + p.attention.bias.len()
        });
        ail + self.conv.as_ref().map_or(0, |(w, b)| w.len() + b.len())
    }

    fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, Failure> {
        Ok(match self.kind {
            TransitionKind::Lail => {
                let (cfg, p) = self.ail.as_ref().expect("lail parameters");
                ail_forward(x, cfg, p)?
            }
            TransitionKind::MaxPool => {
                let (y, _) = maxpool_forward(x, ConvGeom::same(3, 3, 2))?;
                match &self.conv {
                    Some((w, b)) => conv2d_forward(&y, w, b, ConvGeom::same(1, 1, 1))?,
                    None => y,
                }
            }
            TransitionKind::StridedConv => {
                let (w, b) = self.conv.as_ref().expect("strided weights");
                conv2d_forward(x, w, b, ConvGeom::same(1, 1, 2))?
            }
        })
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rows for every size in `sizes` and every transition kind. Output
/// shapes are compared across kinds before anything is timed.
pub fn run(sizes: &[usize], repeats: usize, c_in: usize, c_out: usize, seed: u64) -> Result<Vec<BenchRow>, Failure> {
    if repeats == 0 || sizes.is_empty() || sizes.contains(&0) || c_in == 0 || c_out == 0 {
        return Err(Failure::Config(
            "bench: sizes, repeats and channels must be positive".into(),
        ));
    }
    let layers = KINDS
        .iter()
        .map(|&(k, _)| Layer::new(k, c_in, c_out, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for &size in sizes {
        let mut rng = stream(seed, Stream::Bench, 100 + size as u64);
        let x = Tensor::from_fn(&[1, size, size, c_in], |_| rng.random_range(-1.0f32..1.0));
        let outs = layers.iter().map(|l| l.forward(&x)).collect::<Result<Vec<_>, _>>()?;
        if outs.iter().any(|o| o.shape() != outs[0].shape()) {
            let shapes: Vec<_> = outs.iter().map(|o| o.shape().to_vec()).collect();
            return Err(Failure::Check(format!(
                "transition output shapes differ at size {size}: {shapes:?}"
            )));
        }
        let s = outs[0].shape().to_vec();
        for (layer, &(_, name)) in layers.iter().zip(&KINDS) {
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let t = Instant::now();
                std::hint::black_box(layer.forward(&x)?);
                times.push(t.elapsed().as_secs_f64() * 1e3);
            }
            rows.push(BenchRow {
                size,
                kind: name,
                c_in,
                c_out,
                params: layer.params(),
                repeats,
                min_ms: times.iter().cloned().fold(f64::INFINITY, f64::min),
                median_ms: median(times),
                out_h: s[1],
                out_w: s[2],
                out_c: s[3],
            });
        }
    }
    Ok(rows)
}

pub fn write_csv(rows: &[BenchRow], w: impl Write) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
