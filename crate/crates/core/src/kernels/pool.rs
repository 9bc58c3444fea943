use crate::error::{config, Result};
use crate::kernels::conv::ConvGeom;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Max pooling over NHWC input; padded sites never win. Returns the output
/// and, per output element, the flat input offset that produced it.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>, g: ConvGeom) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, h, w, c] = match *x.shape() {
        [b, h, w, c] => [b, h, w, c],
        _ => return Err(config(format!("maxpool expects NHWC, got {:?}", x.shape()))),
    };
    if g.pad_h * 2 > g.kh || g.pad_w * 2 > g.kw {
        return Err(config(format!("padding exceeds half the window: {g:?}")));
    }
    let (ho, wo) = g.out_extent(h, w)?;
    let xd = x.data();
    let mut out = vec![T::neg_infinity(); b * ho * wo * c];
    let mut arg = vec![usize::MAX; out.len()];
    for n in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let o = ((n * ho + oy) * wo + ox) * c;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = ((n * h + iy as usize) * w + ix as usize) * c;
                        for ch in 0..c {
                            // strict comparison keeps the first maximum in scan order
                            if xd[i + ch] > out[o + ch] || arg[o + ch] == usize::MAX {
                                out[o + ch] = xd[i + ch];
                                arg[o + ch] = i + ch;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(&[b, ho, wo, c], out)?, arg))
}

pub fn maxpool_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    dx
}

/// Max pooling of `(H, W, C)` or `(B, H, W, C)` with a square window and no padding.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let batched = input.rank() == 4;
    let x = input.clone().reshape(&input.as_nhwc_dims()?)?;
    let (y, _) = maxpool_forward(&x, ConvGeom::with_padding(window, window, stride, 0, 0))?;
    if batched {
        Ok(y)
    } else {
        let s = y.shape()[1..].to_vec();
        y.reshape(&s)
    }
}
