//! Tensor kernels with hand-written backward passes, plus composite ops built on candle primitives.
//!
//! Convolution is an explicit im2col followed by one large matrix product per pass, with the
//! input gradient computed as a convolution of the output gradient with the flipped kernel.

use candle_core::{
    backend::BackendStorage, bail, CpuStorage, CustomOp1, CustomOp2, DType, Layout, Result, Shape, Tensor, WithDType, D,
};
use gemm::{gemm, Parallelism};

fn contiguous_slice<'a, T>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => bail!("custom op expects a contiguous input"),
    }
}

fn out_len(n: usize, k: usize, pad: usize) -> usize {
    n + 2 * pad + 1 - k
}

type Dims4 = (usize, usize, usize, usize);

/// Patches of a zero-padded NCHW input as rows: `[B*OH*OW, C*k*k]`, columns ordered
/// `(c, ky, kx)`.
fn im2col_rows<T: WithDType>(src: &[T], dims: Dims4, k: usize, pad: usize) -> Vec<T> {
    let (b, c, h, w) = dims;
    let (oh, ow) = (out_len(h, k, pad), out_len(w, k, pad));
    let ckk = c * k * k;
    let mut out = vec![T::zero(); b * oh * ow * ckk];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut out[((bi * oh + oy) * ow + ox) * ckk..][..ckk];
                for ci in 0..c {
                    let plane = &src[(bi * c + ci) * h * w..][..h * w];
                    for ky in 0..k {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let line = &plane[(iy - pad) * w..][..w];
                        let dst = &mut row[(ci * k + ky) * k..][..k];
                        for (kx, d) in dst.iter_mut().enumerate() {
                            let ix = ox + kx;
                            if ix >= pad && ix - pad < w {
                                *d = line[ix - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Patches as columns, one `[C*k*k, OH*OW]` matrix per batch element.
fn im2col_cols<T: WithDType>(src: &[T], dims: Dims4, k: usize, pad: usize) -> Vec<T> {
    let (b, c, h, w) = dims;
    let (oh, ow) = (out_len(h, k, pad), out_len(w, k, pad));
    let ckk = c * k * k;
    let mut out = vec![T::zero(); b * ckk * oh * ow];
    for bi in 0..b {
        for ci in 0..c {
            let plane = &src[(bi * c + ci) * h * w..][..h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut out[(bi * ckk + row) * oh * ow..][..oh * ow];
                    let x0 = pad.saturating_sub(kx);
                    let x1 = (w + pad).saturating_sub(kx).min(ow);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let line = &plane[(iy - pad) * w..][..w];
                        let ix0 = x0 + kx - pad;
                        dst[oy * ow + x0..oy * ow + x1].copy_from_slice(&line[ix0..ix0 + (x1 - x0)]);
                    }
                }
            }
        }
    }
    out
}

/// Row-major `[B*L, C]` to NCHW `[B, C, L]`.
fn rows_to_nchw<T: WithDType>(src: &[T], b: usize, l: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); b * l * c];
    for bi in 0..b {
        let s = &src[bi * l * c..][..l * c];
        let d = &mut out[bi * l * c..][..l * c];
        for p in 0..l {
            for ci in 0..c {
                d[ci * l + p] = s[p * c + ci];
            }
        }
    }
    out
}

/// `dst (m x n) = [dst +] lhs (m x k) * rhs (k x n)` with element strides `(row, col)`.
#[allow(clippy::too_many_arguments)]
fn matmul_into<T: WithDType>(
    dst: &mut [T],
    dst_strides: (usize, usize),
    accumulate: bool,
    lhs: &[T],
    lhs_strides: (usize, usize),
    rhs: &[T],
    rhs_strides: (usize, usize),
    (m, n, k): (usize, usize, usize),
) {
    let span = |(rs, cs): (usize, usize), r: usize, c: usize| if r == 0 || c == 0 { 0 } else { (r - 1) * rs + (c - 1) * cs + 1 };
    assert!(dst.len() >= span(dst_strides, m, n));
    assert!(lhs.len() >= span(lhs_strides, m, k));
    assert!(rhs.len() >= span(rhs_strides, k, n));
    // SAFETY: the asserts above keep every strided access inside the three slices, and `dst`
    // does not alias the inputs.
    unsafe {
        gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            dst_strides.1 as isize,
            dst_strides.0 as isize,
            accumulate,
            lhs.as_ptr(),
            lhs_strides.1 as isize,
            lhs_strides.0 as isize,
            rhs.as_ptr(),
            rhs_strides.1 as isize,
            rhs_strides.0 as isize,
            T::from_f64(1.0),
            T::from_f64(1.0),
            false,
            false,
            false,
            Parallelism::None,
        )
    }
}

/// Forward convolution; `w` is `[Cout, C, k, k]`, output NCHW.
fn conv_forward<T: WithDType>(x: &[T], dims: Dims4, w: &[T], cout: usize, k: usize, pad: usize) -> Vec<T> {
    let (b, c, h, wd) = dims;
    let l = out_len(h, k, pad) * out_len(wd, k, pad);
    let ckk = c * k * k;
    let rows = im2col_rows(x, dims, k, pad);
    let mut y = vec![T::zero(); b * l * cout];
    // Y[B*L, Cout] = rows[B*L, ckk] * W^T
    matmul_into(&mut y, (cout, 1), false, &rows, (ckk, 1), w, (1, ckk), (b * l, cout, ckk));
    rows_to_nchw(&y, b, l, cout)
}

/// Kernel gradient `[Cout, C, k, k]` from the input and the NCHW output gradient.
fn conv_grad_weight<T: WithDType>(x: &[T], dims: Dims4, dy: &[T], cout: usize, k: usize, pad: usize) -> Vec<T> {
    let (b, c, h, wd) = dims;
    let l = out_len(h, k, pad) * out_len(wd, k, pad);
    let ckk = c * k * k;
    let cols = im2col_cols(x, dims, k, pad);
    let mut dwt = vec![T::zero(); ckk * cout];
    for bi in 0..b {
        // dW^T[ckk, Cout] += cols_b[ckk, L] * dY_b^T
        matmul_into(
            &mut dwt,
            (cout, 1),
            bi > 0,
            &cols[bi * ckk * l..][..ckk * l],
            (l, 1),
            &dy[bi * cout * l..][..cout * l],
            (1, l),
            (ckk, cout, l),
        );
    }
    let mut dw = vec![T::zero(); cout * ckk];
    for j in 0..ckk {
        for co in 0..cout {
            dw[co * ckk + j] = dwt[j * cout + co];
        }
    }
    dw
}

/// Input gradient: the output gradient convolved with the flipped, transposed kernel.
fn conv_grad_input<T: WithDType>(dy: &[T], dy_dims: Dims4, w: &[T], cin: usize, k: usize, pad: usize) -> Vec<T> {
    let (b, cout, oh, ow) = dy_dims;
    let rpad = k - 1 - pad;
    let (h, wd) = (out_len(oh, k, rpad), out_len(ow, k, rpad));
    let okk = cout * k * k;
    let rows = im2col_rows(dy, dy_dims, k, rpad);
    let mut wf = vec![T::zero(); okk * cin];
    for co in 0..cout {
        for ci in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    wf[((co * k + ky) * k + kx) * cin + ci] = w[((co * cin + ci) * k + (k - 1 - ky)) * k + (k - 1 - kx)];
                }
            }
        }
    }
    let mut dx = vec![T::zero(); b * h * wd * cin];
    matmul_into(&mut dx, (cin, 1), false, &rows, (okk, 1), &wf, (cin, 1), (b * h * wd, cin, okk));
    rows_to_nchw(&dx, b, h * wd, cin)
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    k: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvGradInput {
    k: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvGradWeight {
    k: usize,
    pad: usize,
}

macro_rules! dispatch2 {
    ($name:expr, $s1:expr, $l1:expr, $s2:expr, $l2:expr, |$a:ident, $b:ident| $body:expr) => {
        match ($s1, $s2) {
            (CpuStorage::F32(x), CpuStorage::F32(y)) => {
                let ($a, $b) = (contiguous_slice(x, $l1)?, contiguous_slice(y, $l2)?);
                CpuStorage::F32($body)
            }
            (CpuStorage::F64(x), CpuStorage::F64(y)) => {
                let ($a, $b) = (contiguous_slice(x, $l1)?, contiguous_slice(y, $l2)?);
                CpuStorage::F64($body)
            }
            _ => bail!("{}: unsupported dtypes {:?}, {:?}", $name, $s1.dtype(), $s2.dtype()),
        }
    };
}

impl CustomOp2 for Conv {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let dims = l1.shape().dims4()?;
        let cout = l2.shape().dims4()?.0;
        let (b, _, h, w) = dims;
        let out = dispatch2!("conv2d", s1, l1, s2, l2, |x, wt| conv_forward(x, dims, wt, cout, self.k, self.pad));
        Ok((out, Shape::from((b, cout, out_len(h, self.k, self.pad), out_len(w, self.k, self.pad)))))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let (k, pad) = (self.k, self.pad);
        let dx = grad.apply_op2_no_bwd(w, &ConvGradInput { k, pad })?;
        let dw = x.apply_op2_no_bwd(&grad, &ConvGradWeight { k, pad })?;
        Ok((Some(dx), Some(dw)))
    }
}

impl CustomOp2 for ConvGradInput {
    fn name(&self) -> &'static str {
        "conv2d-grad-input"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let dims = l1.shape().dims4()?;
        let cin = l2.shape().dims4()?.1;
        let rpad = self.k - 1 - self.pad;
        let (b, _, oh, ow) = dims;
        let out = dispatch2!("conv2d-grad-input", s1, l1, s2, l2, |dy, wt| conv_grad_input(dy, dims, wt, cin, self.k, self.pad));
        Ok((out, Shape::from((b, cin, out_len(oh, self.k, rpad), out_len(ow, self.k, rpad)))))
    }
}

impl CustomOp2 for ConvGradWeight {
    fn name(&self) -> &'static str {
        "conv2d-grad-weight"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let dims = l1.shape().dims4()?;
        let cout = l2.shape().dims4()?.1;
        let c = dims.1;
        let out = dispatch2!("conv2d-grad-weight", s1, l1, s2, l2, |x, dy| conv_grad_weight(x, dims, dy, cout, self.k, self.pad));
        Ok((out, Shape::from((cout, c, self.k, self.k))))
    }
}

/// 2x2 max pooling, stride 2, floor semantics on odd sizes. Ties resolve to the first element
/// in row-major window order, for the forward selection and the gradient alike.
#[derive(Debug, Clone, Copy)]
struct MaxPool2;

#[derive(Debug, Clone, Copy)]
struct MaxPool2Bwd;

fn argmax_window<T: WithDType>(plane: &[T], w: usize, oy: usize, ox: usize) -> usize {
    let base = 2 * oy * w + 2 * ox;
    let cands = [base, base + 1, base + w, base + w + 1];
    let mut best = cands[0];
    for &i in &cands[1..] {
        if plane[i] > plane[best] {
            best = i;
        }
    }
    best
}

fn maxpool_kernel<T: WithDType>(src: &[T], dims: (usize, usize, usize, usize)) -> Vec<T> {
    let (b, c, h, w) = dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for p in 0..b * c {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                out.push(plane[argmax_window(plane, w, oy, ox)]);
            }
        }
    }
    out
}

fn maxpool_bwd_kernel<T: WithDType>(src: &[T], grad: &[T], dims: (usize, usize, usize, usize)) -> Vec<T> {
    let (b, c, h, w) = dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); b * c * h * w];
    for p in 0..b * c {
        let plane = &src[p * h * w..(p + 1) * h * w];
        let g = &grad[p * oh * ow..(p + 1) * oh * ow];
        let o = &mut out[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                o[argmax_window(plane, w, oy, ox)] += g[oy * ow + ox];
            }
        }
    }
    out
}

impl CustomOp1 for MaxPool2 {
    fn name(&self) -> &'static str {
        "max-pool-2x2"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let dims = layout.shape().dims4()?;
        let shape = Shape::from((dims.0, dims.1, dims.2 / 2, dims.3 / 2));
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(maxpool_kernel(contiguous_slice(v, layout)?, dims)),
            CpuStorage::F64(v) => CpuStorage::F64(maxpool_kernel(contiguous_slice(v, layout)?, dims)),
            _ => bail!("max-pool: unsupported dtype {:?}", storage.dtype()),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(arg.apply_op2_no_bwd(&grad_res.contiguous()?, &MaxPool2Bwd)?))
    }
}

impl CustomOp2 for MaxPool2Bwd {
    fn name(&self) -> &'static str {
        "max-pool-2x2-bwd"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let dims = l1.shape().dims4()?;
        let out = match (s1, s2) {
            (CpuStorage::F32(a), CpuStorage::F32(g)) => {
                CpuStorage::F32(maxpool_bwd_kernel(contiguous_slice(a, l1)?, contiguous_slice(g, l2)?, dims))
            }
            (CpuStorage::F64(a), CpuStorage::F64(g)) => {
                CpuStorage::F64(maxpool_bwd_kernel(contiguous_slice(a, l1)?, contiguous_slice(g, l2)?, dims))
            }
            _ => bail!("max-pool-bwd: unsupported dtypes"),
        };
        Ok((out, l1.shape().clone()))
    }
}

/// 2-D convolution, stride 1, symmetric zero padding `pad`. `w` is `[Cout, Cin, k, k]`.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, pad: usize) -> Result<Tensor> {
    let (_, cin, h, wd) = x.dims4()?;
    let (cout, wcin, k, k2) = w.dims4()?;
    if wcin != cin || k != k2 {
        bail!("conv2d: input has {cin} channels, weight expects {wcin} (kernel {k}x{k2})");
    }
    if pad >= k || h + 2 * pad < k || wd + 2 * pad < k {
        bail!("conv2d: kernel {k} with padding {pad} does not fit a {h}x{wd} input");
    }
    let y = x.contiguous()?.apply_op2(&w.contiguous()?, Conv { k, pad })?;
    match bias {
        Some(bias) => y.broadcast_add(&bias.reshape((1, cout, 1, 1))?),
        None => Ok(y),
    }
}

pub fn max_pool2(x: &Tensor) -> Result<Tensor> {
    x.contiguous()?.apply_op1(MaxPool2)
}

/// `x @ w^T + b` over the last dimension; `w` is `[out, in]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let (din, dout) = (dims[dims.len() - 1], w.dim(0)?);
    let rows = x.elem_count() / din.max(1);
    let mut out_dims = dims;
    *out_dims.last_mut().unwrap() = dout;
    let y = x.reshape((rows, din))?.matmul(&w.t()?)?.reshape(out_dims)?;
    match b {
        Some(b) => y.broadcast_add(b),
        None => Ok(y),
    }
}

/// Softmax over the last dimension. The running max is detached; it only shifts the exponent.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    e.broadcast_div(&s)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    candle_nn::ops::sigmoid(x)
}

/// Layer normalization over the last dimension with affine parameters.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    let xn = xc.broadcast_div(&(var + eps)?.sqrt()?)?;
    xn.broadcast_mul(gamma)?.broadcast_add(beta)
}

/// Group normalization of `[B, C, H, W]` with per-channel affine parameters.
pub fn group_norm(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if c % groups != 0 {
        bail!("group_norm: {c} channels not divisible into {groups} groups");
    }
    let xg = x.reshape((b, groups, (c / groups) * h * w))?;
    let mean = xg.mean_keepdim(D::Minus1)?;
    let xc = xg.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    let xn = xc.broadcast_div(&(var + eps)?.sqrt()?)?.reshape((b, c, h, w))?;
    xn.broadcast_mul(&gamma.reshape((1, c, 1, 1))?)?
        .broadcast_add(&beta.reshape((1, c, 1, 1))?)
}

/// Largest divisor of `c` not exceeding 8.
pub fn default_groups(c: usize) -> usize {
    (1..=8.min(c)).rev().find(|g| c % g == 0).unwrap_or(1)
}

/// Row-stochastic `[out, inp]` matrix for half-pixel-centred linear interpolation.
pub fn interpolation_matrix(inp: usize, out: usize) -> Vec<f64> {
    let mut m = vec![0.0; out * inp];
    let scale = inp as f64 / out as f64;
    for i in 0..out {
        let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        let frac = src - i0 as f64;
        m[i * inp + i0] += 1.0 - frac;
        m[i * inp + i1] += frac;
    }
    m
}

/// Bilinear resize of `[B, C, H, W]` to `(out_h, out_w)` as two matmuls with fixed matrices.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let dev = x.device();
    let ah = Tensor::from_vec(interpolation_matrix(h, out_h), (out_h, h), dev)?.to_dtype(x.dtype())?;
    let aw_t = Tensor::from_vec(interpolation_matrix(w, out_w), (out_w, w), dev)?
        .to_dtype(x.dtype())?
        .t()?
        .contiguous()?;
    let y = x.broadcast_matmul(&aw_t)?;
    ah.broadcast_matmul(&y)
}

/// Scalar tensor of `x`'s dtype.
pub fn scalar_like(x: &Tensor, v: f64) -> Result<Tensor> {
    Tensor::new(v, x.device())?.to_dtype(x.dtype())
}

pub fn is_float(dtype: DType) -> bool {
    matches!(dtype, DType::F32 | DType::F64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn rand_t(shape: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn conv_matches_candle_reference() {
        for &(k, pad) in &[(3usize, 1usize), (7, 3), (3, 0), (1, 0)] {
            let x = rand_t(&[2, 3, 9, 7], 1);
            let w = rand_t(&[4, 3, k, k], 2);
            let ours = conv2d(&x, &w, None, pad).unwrap();
            let reference = x.conv2d(&w, pad, 1, 1, 1).unwrap();
            let diff = (ours - reference).unwrap().abs().unwrap().max_all().unwrap();
            assert!(diff.to_scalar::<f64>().unwrap() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn conv_gradients_match_candle_reference() {
        let x = Var::from_tensor(&rand_t(&[2, 3, 6, 5], 3)).unwrap();
        let w = Var::from_tensor(&rand_t(&[4, 3, 3, 3], 4)).unwrap();
        let target = rand_t(&[2, 4, 6, 5], 5);
        let g1 = conv2d(&x, &w, None, 1)
            .unwrap()
            .mul(&target)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        let g2 = x
            .conv2d(&w, 1, 1, 1, 1)
            .unwrap()
            .mul(&target)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        for v in [&x, &w] {
            let d = (g1.get(v).unwrap() - g2.get(v).unwrap()).unwrap().abs().unwrap().max_all().unwrap();
            assert!(d.to_scalar::<f64>().unwrap() < 1e-10);
        }
    }

    #[test]
    fn max_pool_forward_and_gradient() {
        let x = Var::from_tensor(&rand_t(&[1, 2, 4, 6], 7)).unwrap();
        let y = max_pool2(&x).unwrap();
        let reference = x.max_pool2d(2).unwrap();
        let d = (&y - &reference).unwrap().abs().unwrap().max_all().unwrap();
        assert_eq!(d.to_scalar::<f64>().unwrap(), 0.0);
        let g = y.sum_all().unwrap().backward().unwrap();
        let gx = g.get(&x).unwrap();
        // Exactly one unit of gradient per pooling window.
        assert_eq!(gx.sum_all().unwrap().to_scalar::<f64>().unwrap(), 12.0);
        assert_eq!(gx.max_all().unwrap().to_scalar::<f64>().unwrap(), 1.0);
    }

    #[test]
    fn interpolation_rows_sum_to_one_and_identity_when_same_size() {
        for (i, o) in [(4usize, 8usize), (13, 52), (3, 7), (5, 5)] {
            let m = interpolation_matrix(i, o);
            for r in 0..o {
                let s: f64 = m[r * i..(r + 1) * i].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let m = interpolation_matrix(5, 5);
        for r in 0..5 {
            assert_eq!(m[r * 5 + r], 1.0);
        }
    }

    #[test]
    fn bilinear_doubling_preserves_mean() {
        let x = rand_t(&[1, 1, 3, 3], 9);
        let y = resize_bilinear(&x, 6, 6).unwrap();
        assert_eq!(y.dims4().unwrap(), (1, 1, 6, 6));
        let mx = x.mean_all().unwrap().to_scalar::<f64>().unwrap();
        let my = y.mean_all().unwrap().to_scalar::<f64>().unwrap();
        assert!((mx - my).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_normalize() {
        let x = rand_t(&[3, 5], 11);
        let s = softmax_last(&x).unwrap().sum(1).unwrap().to_vec1::<f64>().unwrap();
        for v in s {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn group_norm_zero_mean_unit_var() {
        let x = rand_t(&[2, 8, 4, 4], 13);
        let g = Tensor::ones(8, DType::F64, &Device::Cpu).unwrap();
        let b = Tensor::zeros(8, DType::F64, &Device::Cpu).unwrap();
        let y = group_norm(&x, 4, &g, &b, 1e-12).unwrap();
        let yg = y.reshape((2, 4, 32)).unwrap();
        let m = yg.mean(2).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(m < 1e-12);
        assert_eq!(default_groups(12), 6);
        assert_eq!(default_groups(7), 7);
        assert_eq!(default_groups(16), 8);
    }
}
