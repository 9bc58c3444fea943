//! Named network specifications.

use crate::ail::{GradMode, DEFAULT_EPSILON};
use crate::nets::spec::{InputKind, LayerOp, LayerSpec, NetworkSpec};

fn lail(channels: usize) -> LayerSpec {
    LayerOp::Lail {
        channels,
        kernel: 3,
        stride: 2,
        grad_mode: GradMode::Analytic,
        epsilon: DEFAULT_EPSILON,
    }
    .into()
}

fn gail(channels: usize) -> LayerSpec {
    LayerOp::Gail {
        channels,
        grad_mode: GradMode::Analytic,
        epsilon: DEFAULT_EPSILON,
    }
    .into()
}

fn dense(repetitions: usize, growth: usize) -> LayerSpec {
    LayerOp::DenseBlock {
        repetitions,
        growth,
        bottleneck: true,
    }
    .into()
}

fn bn_relu() -> LayerSpec {
    LayerOp::BatchNorm { relu: true }.into()
}

fn conv2d(channels: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerOp::Conv2d {
        channels,
        kernel,
        stride,
        relu: true,
    }
    .into()
}

/// Stem 7×7/s2, four attention transitions between dense blocks, a global
/// attention head and a classifier. Transition widths follow the
/// `lail_widths` list; the last one feeds the final dense block.
fn dense_ain(name: &str, blocks: [usize; 4], lail_widths: [usize; 4], num_classes: usize) -> NetworkSpec {
    let mut layers = vec![conv2d(64, 7, 2)];
    for (reps, width) in blocks.into_iter().zip(lail_widths) {
        layers.push(bn_relu());
        layers.push(lail(width));
        layers.push(dense(reps, 32));
    }
    layers.push(bn_relu());
    layers.push(gail(512));
    layers.push(LayerOp::Classifier.into());
    NetworkSpec {
        name: name.into(),
        input: InputKind::Image { channels: 3 },
        layers,
        num_classes,
        variable_size: true,
    }
}

/// Dense blocks of 6/12/24/16 units, 128 classes.
pub fn ain_121() -> NetworkSpec {
    dense_ain("ain-121", [6, 12, 24, 16], [64, 64, 128, 256], 128)
}

/// Dense blocks of 6/12/32/32 units, 128 classes.
pub fn ain_169() -> NetworkSpec {
    dense_ain("ain-169", [6, 12, 32, 32], [64, 64, 128, 256], 128)
}

/// Desk-scale network: two attention transitions and a global head.
pub fn ain_tiny(num_classes: usize) -> NetworkSpec {
    NetworkSpec {
        name: "ain-tiny".into(),
        input: InputKind::Image { channels: 3 },
        layers: vec![
            conv2d(16, 3, 1),
            lail(16),
            dense(4, 12),
            bn_relu(),
            lail(32),
            dense(4, 12),
            bn_relu(),
            gail(64),
            LayerOp::Classifier.into(),
        ],
        num_classes,
        variable_size: true,
    }
}

/// Three attention transitions; one step up from [`ain_tiny`].
pub fn ain_small(num_classes: usize) -> NetworkSpec {
    NetworkSpec {
        name: "ain-small".into(),
        input: InputKind::Image { channels: 3 },
        layers: vec![
            conv2d(24, 3, 1),
            lail(24),
            dense(4, 12),
            bn_relu(),
            lail(48),
            dense(6, 12),
            bn_relu(),
            lail(64),
            dense(6, 12),
            bn_relu(),
            gail(96),
            LayerOp::Classifier.into(),
        ],
        num_classes,
        variable_size: true,
    }
}

/// 1-D network over `(L, 40)` feature frames with 30 classes.
pub fn table4() -> NetworkSpec {
    NetworkSpec {
        name: "ain-frames".into(),
        input: InputKind::Sequence { features: 40 },
        layers: vec![
            LayerOp::Conv1d {
                channels: 64,
                kernel: 15,
                stride: 2,
                relu: true,
            }
            .into(),
            lail(64),
            LayerOp::Conv1d {
                channels: 128,
                kernel: 5,
                stride: 1,
                relu: true,
            }
            .into(),
            gail(128),
            LayerOp::Classifier.into(),
        ],
        num_classes: 30,
        variable_size: true,
    }
}

/// Preset lookup by name: `ain-121`, `ain-169`, `ain-tiny`, `ain-small`, `ain-frames`.
pub fn by_name(name: &str, num_classes: usize) -> Option<NetworkSpec> {
    Some(match name {
        "ain-121" => ain_121(),
        "ain-169" => ain_169(),
        "ain-tiny" => ain_tiny(num_classes),
        "ain-small" => ain_small(num_classes),
        "ain-frames" => table4(),
        _ => return None,
    })
}
