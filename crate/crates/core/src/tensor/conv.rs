use super::{Param, Real, Shape4, Tensor4};
use crate::{Error, Result};

/// Square "same" convolution: `kh = kw = k ∈ {1, 3, 5}`, zero padding
/// `(k − 1) / 2`, stride 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub out_c: usize,
    pub in_c: usize,
    pub k: usize,
    /// `(out_c, in_c, k, k)` row-major.
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(out_c: usize, in_c: usize, k: usize) -> Result<Self> {
        if !matches!(k, 1 | 3 | 5) {
            return Err(Error::Config(format!(
                "kernel size {k} not supported (expected 1, 3 or 5)"
            )));
        }
        Ok(Self {
            out_c,
            in_c,
            k,
            weight: Param::zeros(out_c * in_c * k * k),
            bias: Param::zeros(out_c),
        })
    }

    pub fn from_values(weight: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let s = weight.shape();
        let mut p = Self::zeros(s.n, s.c, s.h)?;
        if s.h != s.w {
            return Err(Error::shape("ConvParams", "square kernel", s));
        }
        if bias.len() != s.n {
            return Err(Error::shape(
                "ConvParams bias",
                s.n,
                format!("{} biases", bias.len()),
            ));
        }
        p.weight.value = weight.into_data();
        p.bias.value = bias;
        Ok(p)
    }

    pub fn weight_shape(&self) -> Shape4 {
        Shape4::new(self.out_c, self.in_c, self.k, self.k)
    }

    pub fn pad(&self) -> usize {
        (self.k - 1) / 2
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, input: Shape4) -> Result<()> {
        if input.c != self.in_c {
            return Err(Error::shape(
                "conv2d",
                format!("input with {} channels for weights {}", self.in_c, self.weight_shape()),
                input,
            ));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ConvParams<U> {
        ConvParams {
            out_c: self.out_c,
            in_c: self.in_c,
            k: self.k,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `d`
/// (input index = output index + d).
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// Unfold the batch into a `(in_c·k·k) × (n·h·w)` matrix: row
/// `(i·k + ky)·k + kx`, column `n·h·w + y·w + x` holds the (zero-padded)
/// input sample feeding that tap of that output position.
fn im2col<T: Real>(input: &Tensor4<T>, k: usize) -> Vec<T> {
    let s = input.shape();
    let (h, w, plane) = (s.h, s.w, s.plane());
    let cols = s.n * plane;
    let pad = ((k - 1) / 2) as isize;
    let mut col = vec![T::zero(); s.c * k * k * cols];
    for i in 0..s.c {
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (ylo, yhi) = span(h, dy);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (xlo, xhi) = span(w, dx);
                if xlo == xhi {
                    continue;
                }
                let row = &mut col[((i * k + ky) * k + kx) * cols..][..cols];
                for n in 0..s.n {
                    let src = &input.data()[(n * s.c + i) * plane..][..plane];
                    let dst = &mut row[n * plane..][..plane];
                    for y in ylo..yhi {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (xlo as isize + dx) as usize;
                        dst[y * w + xlo..y * w + xhi].copy_from_slice(&src[iy * w + ix0..iy * w + ix0 + (xhi - xlo)]);
                    }
                }
            }
        }
    }
    col
}

/// Inverse scatter of [`im2col`]: accumulate every column entry back onto
/// the input position it was read from.
fn col2im<T: Real>(col: &[T], shape: Shape4, k: usize) -> Tensor4<T> {
    let (h, w, plane) = (shape.h, shape.w, shape.plane());
    let cols = shape.n * plane;
    let pad = ((k - 1) / 2) as isize;
    let mut out = Tensor4::zeros(shape);
    for i in 0..shape.c {
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (ylo, yhi) = span(h, dy);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (xlo, xhi) = span(w, dx);
                if xlo == xhi {
                    continue;
                }
                let row = &col[((i * k + ky) * k + kx) * cols..][..cols];
                for n in 0..shape.n {
                    let src = &row[n * plane..][..plane];
                    let dst = &mut out.data_mut()[(n * shape.c + i) * plane..][..plane];
                    for y in ylo..yhi {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (xlo as isize + dx) as usize;
                        for (d, &v) in dst[iy * w + ix0..iy * w + ix0 + (xhi - xlo)]
                            .iter_mut()
                            .zip(&src[y * w + xlo..y * w + xhi])
                        {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// `(n, c, h, w)` → row-major `c × (n·h·w)`.
fn to_channel_major<T: Real>(t: &Tensor4<T>) -> Vec<T> {
    let s = t.shape();
    let plane = s.plane();
    let mut out = vec![T::zero(); s.len()];
    for n in 0..s.n {
        for c in 0..s.c {
            out[(c * s.n + n) * plane..][..plane].copy_from_slice(&t.data()[(n * s.c + c) * plane..][..plane]);
        }
    }
    out
}

/// `out[n,o,y,x] = bias[o] + Σ_{i,ky,kx} w[o,i,ky,kx] · in_padded[n,i,y+ky,x+kx]`.
pub fn conv2d_forward<T: Real>(input: &Tensor4<T>, p: &ConvParams<T>) -> Result<Tensor4<T>> {
    let s = input.shape();
    p.check_input(s)?;
    let out_shape = Shape4::new(s.n, p.out_c, s.h, s.w);
    let plane = s.plane();
    let cols = s.n * plane;
    let kk = p.in_c * p.k * p.k;
    let col = im2col(input, p.k);
    let mut prod = vec![T::zero(); p.out_c * cols];
    T::gemm(p.out_c, kk, cols, &p.weight.value, (kk, 1), &col, (cols, 1), &mut prod);
    let mut out = Tensor4::zeros(out_shape);
    let data = out.data_mut();
    for o in 0..p.out_c {
        let b = p.bias.value[o];
        for n in 0..s.n {
            let src = &prod[o * cols + n * plane..][..plane];
            let dst = &mut data[(n * p.out_c + o) * plane..][..plane];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v + b;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor4<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Backward pass. Bias gradients are summed in `f64`; weight and input
/// gradients are matrix products in the storage precision. `need_input`
/// skips the input gradient when the caller has no use for it (the first
/// layer).
pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor4<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    p.check_input(s)?;
    let expected = Shape4::new(s.n, p.out_c, s.h, s.w);
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d_backward", expected, grad_out.shape()));
    }
    let cols = s.n * s.plane();
    let kk = p.in_c * p.k * p.k;
    let g = to_channel_major(grad_out);
    let bias = g
        .chunks_exact(cols.max(1))
        .take(p.out_c)
        .map(|row| T::of(row.iter().map(|v| v.f64()).sum()))
        .collect::<Vec<T>>();
    let bias = if cols == 0 { vec![T::zero(); p.out_c] } else { bias };

    let col = im2col(input, p.k);
    // dW = G · colᵀ
    let mut weight = vec![T::zero(); p.out_c * kk];
    T::gemm(p.out_c, cols, kk, &g, (cols, 1), &col, (1, cols), &mut weight);

    let input_grad = need_input.then(|| {
        // dcol = Wᵀ · G
        let mut dcol = col;
        T::gemm(kk, p.out_c, cols, &p.weight.value, (1, kk), &g, (cols, 1), &mut dcol);
        col2im(&dcol, s, p.k)
    });

    Ok(ConvGrads {
        input: input_grad,
        weight,
        bias,
    })
}
