//! Differentiable kernels. Shapes are documented per function; all inputs are
//! row-major f64. Functions returning `Result` carry the contract errors; the
//! plain combinators assert on misuse.

use crate::tensor::BackwardArgs;
use crate::{Tensor, TensorError};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
}

/// Elementwise a + b (identical shapes).
pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "add");
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|args: &BackwardArgs| {
            vec![Some(args.grad_out.to_vec()), Some(args.grad_out.to_vec())]
        }),
    )
}

/// Elementwise a - b.
pub fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "sub");
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|args: &BackwardArgs| {
            vec![
                Some(args.grad_out.to_vec()),
                Some(args.grad_out.iter().map(|g| -g).collect()),
            ]
        }),
    )
}

/// Elementwise a * b.
pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    same_shape(a, b, "mul");
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|args: &BackwardArgs| {
            let da: Vec<f64> = args.grad_out.iter().zip(&args.parents[1]).map(|(g, y)| g * y).collect();
            let db: Vec<f64> = args.grad_out.iter().zip(&args.parents[0]).map(|(g, x)| g * x).collect();
            vec![Some(da), Some(db)]
        }),
    )
}

/// x * c for a constant c.
pub fn scale(x: &Tensor, c: f64) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|v| v * c).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |args: &BackwardArgs| {
            vec![Some(args.grad_out.iter().map(|g| g * c).collect())]
        }),
    )
}

/// Sum of all entries, as a scalar.
pub fn sum(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().sum();
    let n = x.numel();
    Tensor::from_op(
        vec![1],
        vec![s],
        vec![x.clone()],
        Box::new(move |args: &BackwardArgs| {
            let g = args.grad_out[0];
            vec![Some(vec![g; n])]
        }),
    )
}

/// Mean of all entries, as a scalar.
pub fn mean(x: &Tensor) -> Tensor {
    scale(&sum(x), 1.0 / x.numel() as f64)
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Tensor {
    let data: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |args: &BackwardArgs| {
            let dx: Vec<f64> = args
                .grad_out
                .iter()
                .zip(&args.parents[0])
                .map(|(g, &v)| g * df(v))
                .collect();
            vec![Some(dx)]
        }),
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    unary(x, |v| v.max(0.0), |v| if v > 0.0 { 1.0 } else { 0.0 })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let s = |v: f64| 1.0 / (1.0 + (-v).exp());
    unary(x, s, move |v| {
        let y = s(v);
        y * (1.0 - y)
    })
}

/// Gaussian error linear unit, tanh approximation.
pub fn gelu(x: &Tensor) -> Tensor {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044715;
    unary(
        x,
        |v| 0.5 * v * (1.0 + (C * (v + A * v * v * v)).tanh()),
        |v| {
            let u = C * (v + A * v * v * v);
            let t = u.tanh();
            0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * C * (1.0 + 3.0 * A * v * v)
        },
    )
}

/// Softmax along `axis`; max-subtracted for stability.
pub fn softmax(x: &Tensor, axis: usize) -> Tensor {
    let shape = x.shape().to_vec();
    assert!(axis < shape.len(), "softmax axis {axis} out of range");
    let k = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let xd = x.to_vec();
    let mut data = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * k + j) * inner + i;
            let mx = (0..k).map(|j| xd[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..k {
                let e = (xd[at(j)] - mx).exp();
                data[at(j)] = e;
                z += e;
            }
            for j in 0..k {
                data[at(j)] /= z;
            }
        }
    }
    Tensor::from_op(
        shape,
        data,
        vec![x.clone()],
        Box::new(move |args: &BackwardArgs| {
            let y = args.output;
            let g = args.grad_out;
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * k + j) * inner + i;
                    let dot: f64 = (0..k).map(|j| g[at(j)] * y[at(j)]).sum();
                    for j in 0..k {
                        dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Per-row layer normalization: x [rows, d], gain [d], bias [d].
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Tensor {
    const EPS: f64 = 1e-5;
    let d = *x.shape().last().expect("layer_norm input must have rank >= 1");
    let rows = x.numel() / d;
    assert_eq!(gain.shape(), &[d], "layer_norm gain width");
    assert_eq!(bias.shape(), &[d], "layer_norm bias width");
    let xd = x.to_vec();
    let gd = gain.to_vec();
    let bd = bias.to_vec();
    let mut data = vec![0.0; xd.len()];
    for r in 0..rows {
        let row = &xd[r * d..(r + 1) * d];
        let m = row.iter().sum::<f64>() / d as f64;
        let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d as f64;
        let inv = 1.0 / (v + EPS).sqrt();
        for j in 0..d {
            data[r * d + j] = gd[j] * (row[j] - m) * inv + bd[j];
        }
    }
    let shape = x.shape().to_vec();
    Tensor::from_op(
        shape,
        data,
        vec![x.clone(), gain.clone(), bias.clone()],
        Box::new(move |args: &BackwardArgs| {
            let xd = &args.parents[0];
            let gd = &args.parents[1];
            let g = args.grad_out;
            let mut dx = vec![0.0; xd.len()];
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let m = row.iter().sum::<f64>() / d as f64;
                let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d as f64;
                let inv = 1.0 / (v + EPS).sqrt();
                let xhat: Vec<f64> = row.iter().map(|x| (x - m) * inv).collect();
                let gr = &g[r * d..(r + 1) * d];
                let dxhat: Vec<f64> = (0..d).map(|j| gr[j] * gd[j]).collect();
                let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                let mean_dxhat_xhat =
                    (0..d).map(|j| dxhat[j] * xhat[j]).sum::<f64>() / d as f64;
                for j in 0..d {
                    dgain[j] += gr[j] * xhat[j];
                    dbias[j] += gr[j];
                    dx[r * d + j] =
                        inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                }
            }
            vec![Some(dx), Some(dgain), Some(dbias)]
        }),
    )
}

/// a [m, k] @ b [k, n] -> [m, n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape().len(), 2, "matmul lhs must be 2-D");
    assert_eq!(b.shape().len(), 2, "matmul rhs must be 2-D");
    let (m, ka) = (a.shape()[0], a.shape()[1]);
    let (kb, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(ka, kb, "matmul inner dims: {ka} vs {kb}");
    let ad = a.to_vec();
    let bd = b.to_vec();
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..ka {
            let av = ad[i * ka + l];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                data[i * n + j] += av * bd[l * n + j];
            }
        }
    }
    Tensor::from_op(
        vec![m, n],
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |args: &BackwardArgs| {
            let ad = &args.parents[0];
            let bd = &args.parents[1];
            let g = args.grad_out;
            let mut da = vec![0.0; m * ka];
            let mut db = vec![0.0; ka * n];
            for i in 0..m {
                for l in 0..ka {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += g[i * n + j] * bd[l * n + j];
                    }
                    da[i * ka + l] = s;
                }
            }
            for l in 0..ka {
                for j in 0..n {
                    let mut s = 0.0;
                    for i in 0..m {
                        s += ad[i * ka + l] * g[i * n + j];
                    }
                    db[l * n + j] = s;
                }
            }
            vec![Some(da), Some(db)]
        }),
    )
}

/// x [rows, din], w [dout, din], b [dout] -> [rows, dout].
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(x.shape().len(), 2, "linear input must be 2-D");
    let (rows, din) = (x.shape()[0], x.shape()[1]);
    let (dout, din_w) = (w.shape()[0], w.shape()[1]);
    assert_eq!(din, din_w, "linear: input width {din} vs weight width {din_w}");
    assert_eq!(b.shape(), &[dout], "linear bias width");
    let xd = x.to_vec();
    let wd = w.to_vec();
    let bd = b.to_vec();
    let mut data = vec![0.0; rows * dout];
    for r in 0..rows {
        for o in 0..dout {
            let mut s = bd[o];
            for i in 0..din {
                s += xd[r * din + i] * wd[o * din + i];
            }
            data[r * dout + o] = s;
        }
    }
    Tensor::from_op(
        vec![rows, dout],
        data,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(move |args: &BackwardArgs| {
            let xd = &args.parents[0];
            let wd = &args.parents[1];
            let g = args.grad_out;
            let mut dx = vec![0.0; rows * din];
            let mut dw = vec![0.0; dout * din];
            let mut db = vec![0.0; dout];
            for r in 0..rows {
                for o in 0..dout {
                    let go = g[r * dout + o];
                    if go == 0.0 {
                        continue;
                    }
                    db[o] += go;
                    for i in 0..din {
                        dx[r * din + i] += go * wd[o * din + i];
                        dw[o * din + i] += go * xd[r * din + i];
                    }
                }
            }
            vec![Some(dx), Some(dw), Some(db)]
        }),
    )
}

/// [m, n] -> [n, m].
pub fn transpose(x: &Tensor) -> Tensor {
    assert_eq!(x.shape().len(), 2, "transpose expects 2-D");
    let (m, n) = (x.shape()[0], x.shape()[1]);
    let xd = x.to_vec();
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = xd[i * n + j];
        }
    }
    Tensor::from_op(
        vec![n, m],
        data,
        vec![x.clone()],
        Box::new(move |args: &BackwardArgs| {
            let g = args.grad_out;
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] = g[j * m + i];
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Same data, new shape (identical element count).
pub fn reshape(x: &Tensor, shape: &[usize]) -> Tensor {
    assert_eq!(
        shape.iter().product::<usize>(),
        x.numel(),
        "reshape must preserve element count"
    );
    Tensor::from_op(
        shape.to_vec(),
        x.to_vec(),
        vec![x.clone()],
        Box::new(|args: &BackwardArgs| vec![Some(args.grad_out.to_vec())]),
    )
}

/// Vertical concatenation of [r1, d] and [r2, d].
pub fn concat_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let (r1, d) = (a.shape()[0], a.shape()[1]);
    let (r2, d2) = (b.shape()[0], b.shape()[1]);
    assert_eq!(d, d2, "concat_rows widths differ");
    let mut data = a.to_vec();
    data.extend_from_slice(&b.to_vec());
    Tensor::from_op(
        vec![r1 + r2, d],
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |args: &BackwardArgs| {
            let g = args.grad_out;
            vec![Some(g[..r1 * d].to_vec()), Some(g[r1 * d..].to_vec())]
        }),
    )
}

/// Rows [start, end) of a 2-D tensor.
pub fn slice_rows(x: &Tensor, start: usize, end: usize) -> Tensor {
    let (r, d) = (x.shape()[0], x.shape()[1]);
    assert!(start < end && end <= r, "slice_rows range out of bounds");
    let data = x.to_vec()[start * d..end * d].to_vec();
    Tensor::from_op(
        vec![end - start, d],
        data,
        vec![x.clone()],
        Box::new(move |args: &BackwardArgs| {
            let mut dx = vec![0.0; r * d];
            dx[start * d..end * d].copy_from_slice(args.grad_out);
            vec![Some(dx)]
        }),
    )
}

/// Columns [start, end) of a 2-D tensor.
pub fn slice_cols(x: &Tensor, start: usize, end: usize) -> Tensor {
    let (r, d) = (x.shape()[0], x.shape()[1]);
    assert!(start < end && end <= d, "slice_cols range out of bounds");
    let w = end - start;
    let xd = x.to_vec();
    let mut data = vec![0.0; r * w];
    for i in 0..r {
        data[i * w..(i + 1) * w].copy_from_slice(&xd[i * d + start..i * d + end]);
    }
    Tensor::from_op(
        vec![r, w],
        data,
        vec![x.clone()],
        Box::new(move |args: &BackwardArgs| {
            let g = args.grad_out;
            let mut dx = vec![0.0; r * d];
            for i in 0..r {
                dx[i * d + start..i * d + end].copy_from_slice(&g[i * w..(i + 1) * w]);
            }
            vec![Some(dx)]
        }),
    )
}

/// Horizontal concatenation of [r, d1] and [r, d2].
pub fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, d1) = (a.shape()[0], a.shape()[1]);
    let (r2, d2) = (b.shape()[0], b.shape()[1]);
    assert_eq!(r, r2, "concat_cols row counts differ");
    let ad = a.to_vec();
    let bd = b.to_vec();
    let d = d1 + d2;
    let mut data = vec![0.0; r * d];
    for i in 0..r {
        data[i * d..i * d + d1].copy_from_slice(&ad[i * d1..(i + 1) * d1]);
        data[i * d + d1..(i + 1) * d].copy_from_slice(&bd[i * d2..(i + 1) * d2]);
    }
    Tensor::from_op(
        vec![r, d],
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |args: &BackwardArgs| {
            let g = args.grad_out;
            let mut da = vec![0.0; r * d1];
            let mut db = vec![0.0; r * d2];
            for i in 0..r {
                da[i * d1..(i + 1) * d1].copy_from_slice(&g[i * d..i * d + d1]);
                db[i * d2..(i + 1) * d2].copy_from_slice(&g[i * d + d1..(i + 1) * d]);
            }
            vec![Some(da), Some(db)]
        }),
    )
}

/// Scale each row of x [r, d] by s (shape [r] or [r, 1]).
pub fn mul_rows(x: &Tensor, s: &Tensor) -> Tensor {
    let (r, d) = (x.shape()[0], x.shape()[1]);
    assert_eq!(s.numel(), r, "mul_rows scale length");
    let xd = x.to_vec();
    let sd = s.to_vec();
    let mut data = vec![0.0; r * d];
    for i in 0..r {
        for j in 0..d {
            data[i * d + j] = xd[i * d + j] * sd[i];
        }
    }
    Tensor::from_op(
        vec![r, d],
        data,
        vec![x.clone(), s.clone()],
        Box::new(move |args: &BackwardArgs| {
            let xd = &args.parents[0];
            let sd = &args.parents[1];
            let g = args.grad_out;
            let mut dx = vec![0.0; r * d];
            let mut ds = vec![0.0; r];
            for i in 0..r {
                for j in 0..d {
                    dx[i * d + j] = g[i * d + j] * sd[i];
                    ds[i] += g[i * d + j] * xd[i * d + j];
                }
            }
            vec![Some(dx), Some(ds)]
        }),
    )
}

/// Scale each channel of x [B, C, H, W] by s [B, C] (squeeze-excitation gate).
pub fn mul_channels(x: &Tensor, s: &Tensor) -> Tensor {
    let (b, c, h, w) = dims4(x);
    assert_eq!(s.shape(), &[b, c], "mul_channels gate shape");
    let xd = x.to_vec();
    let sd = s.to_vec();
    let hw = h * w;
    let mut data = vec![0.0; xd.len()];
    for bi in 0..b {
        for ci in 0..c {
            let sc = sd[bi * c + ci];
            let base = (bi * c + ci) * hw;
            for p in 0..hw {
                data[base + p] = xd[base + p] * sc;
            }
        }
    }
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone(), s.clone()],
        Box::new(move |args: &BackwardArgs| {
            let xd = &args.parents[0];
            let sd = &args.parents[1];
            let g = args.grad_out;
            let mut dx = vec![0.0; xd.len()];
            let mut ds = vec![0.0; b * c];
            for bi in 0..b {
                for ci in 0..c {
                    let sc = sd[bi * c + ci];
                    let base = (bi * c + ci) * hw;
                    for p in 0..hw {
                        dx[base + p] = g[base + p] * sc;
                        ds[bi * c + ci] += g[base + p] * xd[base + p];
                    }
                }
            }
            vec![Some(dx), Some(ds)]
        }),
    )
}

fn dims4(x: &Tensor) -> (usize, usize, usize, usize) {
    assert_eq!(x.shape().len(), 4, "expected a [B, C, H, W] tensor");
    (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3])
}

/// Cross-correlation of x [B, C, H, W] with weight [C', C, k, k].
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    let (b, c, h, w) = dims4(x);
    if weight.shape().len() != 4 {
        return Err(TensorError::InvalidShape(format!(
            "conv2d weight must be 4-D, got {:?}",
            weight.shape()
        )));
    }
    let (co, ci, kh, kw) = dims4(weight);
    if ci != c {
        return Err(TensorError::AxisMismatch {
            axis: 1,
            context: "conv2d input channels vs weight channels".into(),
            expected: c,
            got: ci,
        });
    }
    if kh != kw || kh % 2 == 0 {
        return Err(TensorError::InvalidShape(format!(
            "conv2d kernel must be square with odd extent, got {kh}x{kw}"
        )));
    }
    if stride == 0 {
        return Err(TensorError::InvalidShape("conv2d stride must be positive".into()));
    }
    let k = kh;
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(TensorError::InvalidShape(format!(
            "conv2d kernel {k} exceeds padded input ({h}+2*{padding}, {w}+2*{padding})"
        )));
    }
    if (h + 2 * padding - k) % stride != 0 || (w + 2 * padding - k) % stride != 0 {
        return Err(TensorError::InvalidShape(format!(
            "conv2d output extent not integral for input ({h}, {w}), k={k}, stride={stride}, padding={padding}"
        )));
    }
    let ho = (h + 2 * padding - k) / stride + 1;
    let wo = (w + 2 * padding - k) / stride + 1;

    let xd = x.to_vec();
    let wd = weight.to_vec();
    let mut data = vec![0.0; b * co * ho * wo];
    for bi in 0..b {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for cix in 0..c {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                s += xd[((bi * c + cix) * h + iy as usize) * w + ix as usize]
                                    * wd[((o * c + cix) * k + ky) * k + kx];
                            }
                        }
                    }
                    data[((bi * co + o) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![b, co, ho, wo],
        data,
        vec![x.clone(), weight.clone()],
        Box::new(move |args: &BackwardArgs| {
            let xd = &args.parents[0];
            let wd = &args.parents[1];
            let g = args.grad_out;
            let mut dx = vec![0.0; b * c * h * w];
            let mut dw = vec![0.0; co * c * k * k];
            for bi in 0..b {
                for o in 0..co {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let go = g[((bi * co + o) * ho + oy) * wo + ox];
                            if go == 0.0 {
                                continue;
                            }
                            for cix in 0..c {
                                for ky in 0..k {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox * stride + kx) as isize - padding as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = ((bi * c + cix) * h + iy as usize) * w
                                            + ix as usize;
                                        let wi = ((o * c + cix) * k + ky) * k + kx;
                                        dx[xi] += go * wd[wi];
                                        dw[wi] += go * xd[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(dx), Some(dw)]
        }),
    ))
}

/// Adaptive average pooling of x [B, C, H, W] to (h, w). Output cell (i, j)
/// averages the window [floor(iH/h), ceil((i+1)H/h)) x [floor(jW/w), ceil((j+1)W/w)).
/// Downsampling only; use [`bilinear_resize`] when a larger target is wanted.
pub fn adaptive_avg_pool2d(x: &Tensor, out: (usize, usize)) -> Result<Tensor, TensorError> {
    let (b, c, h, w) = dims4(x);
    let (th, tw) = out;
    if th == 0 || tw == 0 {
        return Err(TensorError::NonPositivePoolTarget { h: th, w: tw });
    }
    if th > h || tw > w {
        return Err(TensorError::PoolUpsample { th, tw, h, w });
    }
    let windows_y: Vec<(usize, usize)> = (0..th)
        .map(|i| (i * h / th, ((i + 1) * h + th - 1) / th))
        .collect();
    let windows_x: Vec<(usize, usize)> = (0..tw)
        .map(|j| (j * w / tw, ((j + 1) * w + tw - 1) / tw))
        .collect();
    let xd = x.to_vec();
    let mut data = vec![0.0; b * c * th * tw];
    for bi in 0..b {
        for ci in 0..c {
            for (i, &(y0, y1)) in windows_y.iter().enumerate() {
                for (j, &(x0, x1)) in windows_x.iter().enumerate() {
                    let mut s = 0.0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            s += xd[((bi * c + ci) * h + y) * w + xx];
                        }
                    }
                    let cnt = ((y1 - y0) * (x1 - x0)) as f64;
                    data[((bi * c + ci) * th + i) * tw + j] = s / cnt;
                }
            }
        }
    }
    let wy = windows_y.clone();
    let wx = windows_x.clone();
    Ok(Tensor::from_op(
        vec![b, c, th, tw],
        data,
        vec![x.clone()],
        Box::new(move |args: &BackwardArgs| {
            let g = args.grad_out;
            let mut dx = vec![0.0; b * c * h * w];
            for bi in 0..b {
                for ci in 0..c {
                    for (i, &(y0, y1)) in wy.iter().enumerate() {
                        for (j, &(x0, x1)) in wx.iter().enumerate() {
                            let cnt = ((y1 - y0) * (x1 - x0)) as f64;
                            let go = g[((bi * c + ci) * th + i) * tw + j] / cnt;
                            for y in y0..y1 {
                                for xx in x0..x1 {
                                    dx[((bi * c + ci) * h + y) * w + xx] += go;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}

fn clampi(v: isize, hi: usize) -> usize {
    v.clamp(0, hi as isize - 1) as usize
}

/// Bilinear resize of x [B, C, H, W] to (h, w), sampling at target cell
/// centers with border clamping. Used for projecting to more tokens than
/// input features.
pub fn bilinear_resize(x: &Tensor, out: (usize, usize)) -> Result<Tensor, TensorError> {
    let (b, c, h, w) = dims4(x);
    let (th, tw) = out;
    if th == 0 || tw == 0 {
        return Err(TensorError::NonPositivePoolTarget { h: th, w: tw });
    }
    // Per target cell: source position, neighbor rows/cols, blend weight.
    let prep = |t: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..t)
            .map(|i| {
                let pos = (i as f64 + 0.5) / t as f64 * src as f64 - 0.5;
                let i0 = pos.floor() as isize;
                let frac = pos - i0 as f64;
                (clampi(i0, src), clampi(i0 + 1, src), frac)
            })
            .collect()
    };
    let rows = prep(th, h);
    let cols = prep(tw, w);
    let xd = x.to_vec();
    let mut data = vec![0.0; b * c * th * tw];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            for (i, &(r0, r1, ty)) in rows.iter().enumerate() {
                for (j, &(c0, c1, tx)) in cols.iter().enumerate() {
                    let v = (1.0 - ty) * (1.0 - tx) * xd[base + r0 * w + c0]
                        + (1.0 - ty) * tx * xd[base + r0 * w + c1]
                        + ty * (1.0 - tx) * xd[base + r1 * w + c0]
                        + ty * tx * xd[base + r1 * w + c1];
                    data[((bi * c + ci) * th + i) * tw + j] = v;
                }
            }
        }
    }
    let rows2 = rows.clone();
    let cols2 = cols.clone();
    Ok(Tensor::from_op(
        vec![b, c, th, tw],
        data,
        vec![x.clone()],
        Box::new(move |args: &BackwardArgs| {
            let g = args.grad_out;
            let mut dx = vec![0.0; b * c * h * w];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * h * w;
                    for (i, &(r0, r1, ty)) in rows2.iter().enumerate() {
                        for (j, &(c0, c1, tx)) in cols2.iter().enumerate() {
                            let go = g[((bi * c + ci) * th + i) * tw + j];
                            dx[base + r0 * w + c0] += go * (1.0 - ty) * (1.0 - tx);
                            dx[base + r0 * w + c1] += go * (1.0 - ty) * tx;
                            dx[base + r1 * w + c0] += go * ty * (1.0 - tx);
                            dx[base + r1 * w + c1] += go * ty * tx;
                        }
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Sample x [C, H, W] at pts [Q, 2] (normalized [0, 1]^2, row coordinate
/// first) -> [Q, C]. Coordinate u maps to pixel position u*H - 0.5 (cell
/// centers land exactly on pixels); out-of-range samples clamp to the border.
/// Differentiable w.r.t. both x and pts.
pub fn bilinear_sample(x: &Tensor, pts: &Tensor) -> Tensor {
    assert_eq!(x.shape().len(), 3, "bilinear_sample input must be [C, H, W]");
    assert_eq!(pts.shape().len(), 2, "bilinear_sample pts must be [Q, 2]");
    assert_eq!(pts.shape()[1], 2, "bilinear_sample pts must be [Q, 2]");
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let q = pts.shape()[0];
    let xd = x.to_vec();
    let pd = pts.to_vec();
    assert!(pd.iter().all(|v| v.is_finite()), "bilinear_sample pts must be finite");
    let mut data = vec![0.0; q * c];
    for qi in 0..q {
        let py = pd[qi * 2] * h as f64 - 0.5;
        let px = pd[qi * 2 + 1] * w as f64 - 0.5;
        let y0 = py.floor() as isize;
        let x0 = px.floor() as isize;
        let ty = py - y0 as f64;
        let tx = px - x0 as f64;
        let (r0, r1) = (clampi(y0, h), clampi(y0 + 1, h));
        let (c0, c1) = (clampi(x0, w), clampi(x0 + 1, w));
        for ci in 0..c {
            let base = ci * h * w;
            data[qi * c + ci] = (1.0 - ty) * (1.0 - tx) * xd[base + r0 * w + c0]
                + (1.0 - ty) * tx * xd[base + r0 * w + c1]
                + ty * (1.0 - tx) * xd[base + r1 * w + c0]
                + ty * tx * xd[base + r1 * w + c1];
        }
    }
    Tensor::from_op(
        vec![q, c],
        data,
        vec![x.clone(), pts.clone()],
        Box::new(move |args: &BackwardArgs| {
            let xd = &args.parents[0];
            let pd = &args.parents[1];
            let g = args.grad_out;
            let mut dx = vec![0.0; c * h * w];
            let mut dp = vec![0.0; q * 2];
            for qi in 0..q {
                let py = pd[qi * 2] * h as f64 - 0.5;
                let px = pd[qi * 2 + 1] * w as f64 - 0.5;
                let y0 = py.floor() as isize;
                let x0 = px.floor() as isize;
                let ty = py - y0 as f64;
                let tx = px - x0 as f64;
                let (r0, r1) = (clampi(y0, h), clampi(y0 + 1, h));
                let (c0, c1) = (clampi(x0, w), clampi(x0 + 1, w));
                for ci in 0..c {
                    let go = g[qi * c + ci];
                    if go == 0.0 {
                        continue;
                    }
                    let base = ci * h * w;
                    let v00 = xd[base + r0 * w + c0];
                    let v01 = xd[base + r0 * w + c1];
                    let v10 = xd[base + r1 * w + c0];
                    let v11 = xd[base + r1 * w + c1];
                    dx[base + r0 * w + c0] += go * (1.0 - ty) * (1.0 - tx);
                    dx[base + r0 * w + c1] += go * (1.0 - ty) * tx;
                    dx[base + r1 * w + c0] += go * ty * (1.0 - tx);
                    dx[base + r1 * w + c1] += go * ty * tx;
                    // d/d(ty) vanishes when both rows clamp to the same pixel.
                    let dvy = (1.0 - tx) * (v10 - v00) + tx * (v11 - v01);
                    let dvx = (1.0 - ty) * (v01 - v00) + ty * (v11 - v10);
                    dp[qi * 2] += go * dvy * h as f64;
                    dp[qi * 2 + 1] += go * dvx * w as f64;
                }
            }
            vec![Some(dx), Some(dp)]
        }),
    )
}

/// Row lookups into table [V, D] -> [len(ids), D].
pub fn embedding(table: &Tensor, ids: &[usize]) -> Tensor {
    let (v, d) = (table.shape()[0], table.shape()[1]);
    assert!(ids.iter().all(|&i| i < v), "embedding id out of vocab range");
    let td = table.to_vec();
    let mut data = vec![0.0; ids.len() * d];
    for (t, &i) in ids.iter().enumerate() {
        data[t * d..(t + 1) * d].copy_from_slice(&td[i * d..(i + 1) * d]);
    }
    let ids = ids.to_vec();
    Tensor::from_op(
        vec![ids.len(), d],
        data,
        vec![table.clone()],
        Box::new(move |args: &BackwardArgs| {
            let g = args.grad_out;
            let mut dt = vec![0.0; v * d];
            for (t, &i) in ids.iter().enumerate() {
                for j in 0..d {
                    dt[i * d + j] += g[t * d + j];
                }
            }
            vec![Some(dt)]
        }),
    )
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// logits [T, V]; positions with target `None` contribute nothing, in loss
/// and in gradient. Panics if no position is active.
pub fn masked_cross_entropy(logits: &Tensor, targets: &[Option<usize>]) -> Tensor {
    let (t, v) = (logits.shape()[0], logits.shape()[1]);
    assert_eq!(targets.len(), t, "one target slot per logit row");
    let active: usize = targets.iter().flatten().count();
    assert!(active > 0, "masked_cross_entropy needs at least one active position");
    let ld = logits.to_vec();
    let mut loss = 0.0;
    for (r, tgt) in targets.iter().enumerate() {
        let Some(tgt) = tgt else { continue };
        assert!(*tgt < v, "target id out of vocab range");
        let row = &ld[r * v..(r + 1) * v];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
        loss += -(row[*tgt] - mx - z.ln());
    }
    loss /= active as f64;
    let targets = targets.to_vec();
    Tensor::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |args: &BackwardArgs| {
            let ld = &args.parents[0];
            let g = args.grad_out[0];
            let mut dl = vec![0.0; t * v];
            for (r, tgt) in targets.iter().enumerate() {
                let Some(tgt) = tgt else { continue };
                let row = &ld[r * v..(r + 1) * v];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
                for j in 0..v {
                    let p = (row[j] - mx).exp() / z;
                    dl[r * v + j] =
                        g * (p - if j == *tgt { 1.0 } else { 0.0 }) / active as f64;
                }
            }
            vec![Some(dl)]
        }),
    )
}

/// Scaled dot-product attention with `heads` heads. q [Sq, D], k/v [Sk, D].
/// Returns the output [Sq, D] and a detached copy of the attention
/// probabilities, laid out as [heads, Sq, Sk].
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    causal: bool,
) -> Result<(Tensor, Vec<f64>), TensorError> {
    let d = q.shape()[1];
    if heads == 0 || d % heads != 0 {
        return Err(TensorError::HeadsMustDivideWidth { heads, width: d });
    }
    let (sq, sk) = (q.shape()[0], k.shape()[0]);
    assert_eq!(k.shape()[1], d, "key width differs from query width");
    assert_eq!(v.shape(), k.shape(), "value shape differs from key shape");
    let dh = d / heads;
    let mask = if causal {
        // Query i may look at keys up to i + (Sk - Sq).
        let off = sk - sq;
        let mut m = vec![0.0; sq * sk];
        for i in 0..sq {
            for j in 0..sk {
                if j > i + off {
                    m[i * sk + j] = -1e30;
                }
            }
        }
        Some(Tensor::new(&[sq, sk], m))
    } else {
        None
    };
    let mut outs: Vec<Tensor> = Vec::with_capacity(heads);
    let mut probs = vec![0.0; heads * sq * sk];
    for hd in 0..heads {
        let qh = slice_cols(q, hd * dh, (hd + 1) * dh);
        let kh = slice_cols(k, hd * dh, (hd + 1) * dh);
        let vh = slice_cols(v, hd * dh, (hd + 1) * dh);
        let mut logits = scale(&matmul(&qh, &transpose(&kh)), 1.0 / (dh as f64).sqrt());
        if let Some(m) = &mask {
            logits = add(&logits, m);
        }
        let a = softmax(&logits, 1);
        probs[hd * sq * sk..(hd + 1) * sq * sk].copy_from_slice(&a.data());
        outs.push(matmul(&a, &vh));
    }
    let mut out = outs[0].clone();
    for o in &outs[1..] {
        out = concat_cols(&out, o);
    }
    Ok((out, probs))
}
