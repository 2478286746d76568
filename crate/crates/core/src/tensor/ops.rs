use super::Tensor;
use crate::error::{Error, Result};

/// Matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Dimension(format!(
            "matmul of {:?} by {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for (a_row, out_row) in a.data.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&av, b_row) in a_row.iter().zip(b.data.chunks_exact(n)) {
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![m, n], out))
}

/// Output extent of a sliding window along one axis.
pub fn conv_output_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// 2-D cross-correlation over an NCHW batch with `[D, C, KH, KW]` kernels.
pub fn conv2d(input: &Tensor, weights: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    if input.rank() != 4 || weights.rank() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d expects NCHW input and DCHW weights, got {:?} and {:?}",
            input.shape, weights.shape
        )));
    }
    let (n, c, h, w) = (
        input.shape[0],
        input.shape[1],
        input.shape[2],
        input.shape[3],
    );
    let (d, wc, kh, kw) = (
        weights.shape[0],
        weights.shape[1],
        weights.shape[2],
        weights.shape[3],
    );
    if c != wc {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input {:?} has {c} channels, weights {:?} expect {wc}",
            input.shape, weights.shape
        )));
    }
    let (oh, ow) = match (
        conv_output_dim(h, kh, stride, padding),
        conv_output_dim(w, kw, stride, padding),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => return Err(Error::Dimension(format!(
            "conv2d kernel {kh}x{kw} (stride {stride}, padding {padding}) does not fit input {:?}",
            input.shape
        ))),
    };

    let mut out = vec![0.0; n * d * oh * ow];
    let in_plane = h * w;
    let in_image = c * in_plane;
    let k_plane = kh * kw;
    for b in 0..n {
        let image = &input.data[b * in_image..(b + 1) * in_image];
        for f in 0..d {
            let filter = &weights.data[f * c * k_plane..(f + 1) * c * k_plane];
            let out_plane = &mut out[(b * d + f) * oh * ow..(b * d + f + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        let plane = &image[ch * in_plane..(ch + 1) * in_plane];
                        let kernel = &filter[ch * k_plane..(ch + 1) * k_plane];
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += row[ix as usize] * kernel[ky * kw + kx];
                            }
                        }
                    }
                    out_plane[oy * ow + ox] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![n, d, oh, ow], out))
}

pub fn relu(t: &Tensor) -> Tensor {
    let data = t.data.iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_parts_unchecked(t.shape.clone(), data)
}

/// Max pooling over the spatial axes of an NCHW tensor, no padding.
pub fn maxpool2d(t: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    if t.rank() != 4 {
        return Err(Error::Dimension(format!(
            "maxpool2d expects NCHW input, got {:?}",
            t.shape
        )));
    }
    let (n, c, h, w) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    let (oh, ow) = match (
        conv_output_dim(h, kernel, stride, 0),
        conv_output_dim(w, kernel, stride, 0),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::Dimension(format!(
                "maxpool2d window {kernel} (stride {stride}) does not fit input {:?}",
                t.shape
            )))
        }
    };
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in t.data.chunks_exact(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..kernel {
                    let row = (oy * stride + ky) * w;
                    for kx in 0..kernel {
                        m = m.max(plane[row + ox * stride + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![n, c, oh, ow], out))
}

/// Collapses every axis but the first.
pub fn flatten(t: &Tensor) -> Tensor {
    let batch = t.shape[0];
    let features = t.data.len() / batch;
    Tensor::from_parts_unchecked(vec![batch, features], t.data.clone())
}

/// Adds a rank-1 bias along the feature axis of `[N, F]` or the channel
/// axis of `[N, C, H, W]`.
pub fn add_bias(t: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let mismatch = || {
        Error::Dimension(format!(
            "bias {:?} does not broadcast over {:?}",
            bias.shape, t.shape
        ))
    };
    if bias.rank() != 1 {
        return Err(mismatch());
    }
    let mut data = t.data.clone();
    match t.rank() {
        2 => {
            if t.shape[1] != bias.len() {
                return Err(mismatch());
            }
            for row in data.chunks_exact_mut(bias.len()) {
                for (v, b) in row.iter_mut().zip(&bias.data) {
                    *v += b;
                }
            }
        }
        4 => {
            if t.shape[1] != bias.len() {
                return Err(mismatch());
            }
            let plane = t.shape[2] * t.shape[3];
            for (i, chunk) in data.chunks_exact_mut(plane).enumerate() {
                let b = bias.data[i % bias.len()];
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        _ => return Err(mismatch()),
    }
    Ok(Tensor::from_parts_unchecked(t.shape.clone(), data))
}
