//! Dense row-major `f64` tensors and the eager kernels behind every tape op.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape, other.shape);
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Squared L2 norm.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// Spatial padding for stride-1 convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

/// Geometry of a stride-1 2-D convolution over `[N, C, H, W]` inputs with
/// `[F, C, KH, KW]` kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], k: &[usize], padding: Padding) -> Result<ConvGeom> {
        if x.len() != 4 || k.len() != 4 || x[1] != k[1] {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: x.to_vec(),
                rhs: k.to_vec(),
            });
        }
        let (n, c, h, w) = (x[0], x[1], x[2], x[3]);
        let (f, kh, kw) = (k[0], k[2], k[3]);
        let (pad_top, pad_left, oh, ow) = match padding {
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::Shape {
                        op: "conv2d",
                        lhs: x.to_vec(),
                        rhs: k.to_vec(),
                    });
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, h, w),
        };
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            pad_top,
            pad_left,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.f, self.oh, self.ow]
    }

    pub fn in_shape(&self) -> Vec<usize> {
        vec![self.n, self.c, self.h, self.w]
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![self.f, self.c, self.kh, self.kw]
    }
}

pub(crate) mod kernels {
    use super::{ConvGeom, Tensor};

    /// `op(a) · op(b)` for 2-D tensors, with optional transposes. Zero entries
    /// of `a` are skipped, which matters for one-hot grid observations.
    pub fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Option<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 {
            return None;
        }
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return None;
        }
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![0.0; m * n];
        // a[i,p] lives at i*sa1+p (no transpose) or p*sa1+i (transpose).
        let a_at = |i: usize, p: usize| {
            if ta {
                ad[p * sa[1] + i]
            } else {
                ad[i * sa[1] + p]
            }
        };
        if ta && !tb {
            // a is [k, m]: accumulate outer products row by row.
            for p in 0..k {
                let arow = &ad[p * m..(p + 1) * m];
                let brow = &bd[p * n..(p + 1) * n];
                for (i, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        } else if !tb {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a_at(i, p);
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        } else if !ta {
            // b is [n, k]: rows of a dot rows of b.
            for i in 0..m {
                let arow = &ad[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &bd[j * k..(j + 1) * k];
                    out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                }
            }
        } else {
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += a_at(i, p) * bd[j * sb[1] + p];
                    }
                    out[i * n + j] = s;
                }
            }
        }
        Some(Tensor::from_parts(vec![m, n], out))
    }

    pub fn conv2d(x: &Tensor, k: &Tensor, g: &ConvGeom) -> Tensor {
        let (q, plane) = (g.c * g.kh * g.kw, g.oh * g.ow);
        let mut out = vec![0.0; g.n * g.f * plane];
        let mut cols = vec![0.0; q * plane];
        let kd = k.data();
        for n in 0..g.n {
            im2col(x.data(), g, n, &mut cols);
            let on = &mut out[n * g.f * plane..(n + 1) * g.f * plane];
            for f in 0..g.f {
                let orow = &mut on[f * plane..(f + 1) * plane];
                for (j, &kv) in kd[f * q..(f + 1) * q].iter().enumerate() {
                    if kv == 0.0 {
                        continue;
                    }
                    for (o, &c) in orow.iter_mut().zip(&cols[j * plane..(j + 1) * plane]) {
                        *o += kv * c;
                    }
                }
            }
        }
        Tensor::from_parts(g.out_shape(), out)
    }

    /// Adjoint of `conv2d` in its input: maps an output-shaped tensor back to
    /// the input shape.
    pub fn conv2d_input_grad(gy: &Tensor, k: &Tensor, g: &ConvGeom) -> Tensor {
        let (q, plane) = (g.c * g.kh * g.kw, g.oh * g.ow);
        let mut out = vec![0.0; g.n * g.c * g.h * g.w];
        let mut cols = vec![0.0; q * plane];
        let (gd, kd) = (gy.data(), k.data());
        for n in 0..g.n {
            cols.iter_mut().for_each(|v| *v = 0.0);
            let gn = &gd[n * g.f * plane..(n + 1) * g.f * plane];
            for f in 0..g.f {
                let grow = &gn[f * plane..(f + 1) * plane];
                for (j, &kv) in kd[f * q..(f + 1) * q].iter().enumerate() {
                    if kv == 0.0 {
                        continue;
                    }
                    for (c, &gv) in cols[j * plane..(j + 1) * plane].iter_mut().zip(grow) {
                        *c += kv * gv;
                    }
                }
            }
            col2im(&cols, g, n, &mut out);
        }
        Tensor::from_parts(g.in_shape(), out)
    }

    /// Adjoint of `conv2d` in its kernel.
    pub fn conv2d_kernel_grad(x: &Tensor, gy: &Tensor, g: &ConvGeom) -> Tensor {
        let (q, plane) = (g.c * g.kh * g.kw, g.oh * g.ow);
        let mut out = vec![0.0; g.f * q];
        let mut cols = vec![0.0; q * plane];
        let gd = gy.data();
        for n in 0..g.n {
            im2col(x.data(), g, n, &mut cols);
            let gn = &gd[n * g.f * plane..(n + 1) * g.f * plane];
            for f in 0..g.f {
                let grow = &gn[f * plane..(f + 1) * plane];
                for (j, o) in out[f * q..(f + 1) * q].iter_mut().enumerate() {
                    *o += grow
                        .iter()
                        .zip(&cols[j * plane..(j + 1) * plane])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
        }
        Tensor::from_parts(g.kernel_shape(), out)
    }

    /// Row-wise log-softmax over the last axis, max-subtracted.
    pub fn log_softmax_last(x: &Tensor) -> Tensor {
        let cols = *x.shape().last().unwrap_or(&1);
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(cols.max(1)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Tensor::from_parts(x.shape().to_vec(), out)
    }

    pub fn softmax_last(x: &Tensor) -> Tensor {
        log_softmax_last(x).map(f64::exp)
    }

    pub fn sum_last(x: &Tensor) -> Tensor {
        let cols = *x.shape().last().unwrap_or(&1);
        let shape = x.shape()[..x.shape().len().saturating_sub(1)].to_vec();
        let data = x
            .data()
            .chunks(cols.max(1))
            .map(|r| r.iter().sum())
            .collect();
        Tensor::from_parts(shape, data)
    }

    pub fn expand_last(x: &Tensor, n: usize) -> Tensor {
        let mut shape = x.shape().to_vec();
        shape.push(n);
        let data = x
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(n))
            .collect();
        Tensor::from_parts(shape, data)
    }

    /// Tile `x` (whose shape is a suffix of `shape`) up to `shape`.
    pub fn broadcast_trailing(x: &Tensor, shape: &[usize]) -> Tensor {
        let reps = shape.iter().product::<usize>() / x.numel().max(1);
        let mut data = Vec::with_capacity(reps * x.numel());
        for _ in 0..reps {
            data.extend_from_slice(x.data());
        }
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Sum `x` over its leading axes down to the trailing `shape`.
    pub fn sum_to_trailing(x: &Tensor, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        for chunk in x.data().chunks(n.max(1)) {
            for (o, v) in data.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn gather(x: &Tensor, idx: &[usize], shape: &[usize]) -> Tensor {
        let xd = x.data();
        Tensor::from_parts(shape.to_vec(), idx.iter().map(|&i| xd[i]).collect())
    }

    pub fn scatter_add(x: &Tensor, idx: &[usize], shape: &[usize]) -> Tensor {
        let mut out = vec![0.0; shape.iter().product()];
        for (&i, &v) in idx.iter().zip(x.data()) {
            out[i] += v;
        }
        Tensor::from_parts(shape.to_vec(), out)
    }

    pub fn concat_last(a: &Tensor, b: &Tensor) -> Tensor {
        let (ca, cb) = (*a.shape().last().unwrap(), *b.shape().last().unwrap());
        let rows = a.numel() / ca.max(1);
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for r in 0..rows {
            data.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        Tensor::from_parts(shape, data)
    }

    pub fn powi(x: &Tensor, exps: &[i32]) -> Tensor {
        let data = if exps.len() == 1 {
            x.data().iter().map(|v| v.powi(exps[0])).collect()
        } else {
            x.data().iter().zip(exps).map(|(v, &e)| v.powi(e)).collect()
        };
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    /// Unfolds sample `n` of `x` into `[C*KH*KW, OH*OW]` patch columns; padded
    /// positions read as zero.
    fn im2col(x: &[f64], g: &ConvGeom, n: usize, cols: &mut [f64]) {
        let plane = g.oh * g.ow;
        for c in 0..g.c {
            let xc = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
            for dy in 0..g.kh {
                for dx in 0..g.kw {
                    let row = &mut cols[((c * g.kh + dy) * g.kw + dx) * plane..][..plane];
                    for oy in 0..g.oh {
                        let iy = (oy + dy).wrapping_sub(g.pad_top);
                        let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                        if iy >= g.h {
                            dst.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox + dx).wrapping_sub(g.pad_left);
                            *d = if ix < g.w { xc[iy * g.w + ix] } else { 0.0 };
                        }
                    }
                }
            }
        }
    }

    /// Adds patch columns back onto sample `n` of an input-shaped buffer.
    fn col2im(cols: &[f64], g: &ConvGeom, n: usize, out: &mut [f64]) {
        let plane = g.oh * g.ow;
        for c in 0..g.c {
            let oc = &mut out[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
            for dy in 0..g.kh {
                for dx in 0..g.kw {
                    let row = &cols[((c * g.kh + dy) * g.kw + dx) * plane..][..plane];
                    for oy in 0..g.oh {
                        let iy = (oy + dy).wrapping_sub(g.pad_top);
                        if iy >= g.h {
                            continue;
                        }
                        for ox in 0..g.ow {
                            let ix = (ox + dx).wrapping_sub(g.pad_left);
                            if ix < g.w {
                                oc[iy * g.w + ix] += row[oy * g.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_transposes_agree() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 0., -1., 0.5, 3.]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![2., 1., 0., -1., 4., 0.25]).unwrap();
        let plain = kernels::matmul(&a, &b, false, false).unwrap();
        let at = Tensor::new(vec![3, 2], vec![1., -1., 2., 0.5, 0., 3.]).unwrap();
        let bt = Tensor::new(vec![2, 3], vec![2., 0., 4., 1., -1., 0.25]).unwrap();
        assert_eq!(kernels::matmul(&at, &b, true, false).unwrap(), plain);
        assert_eq!(kernels::matmul(&a, &bt, false, true).unwrap(), plain);
        assert_eq!(kernels::matmul(&at, &bt, true, true).unwrap(), plain);
        assert_eq!(plain.data(), &[2., -1., 10., -0.75]);
    }

    #[test]
    fn same_padding_keeps_spatial_size() {
        let g = ConvGeom::new(&[1, 2, 5, 4], &[3, 2, 2, 2], Padding::Same).unwrap();
        assert_eq!(g.out_shape(), vec![1, 3, 5, 4]);
        let g = ConvGeom::new(&[1, 2, 5, 4], &[3, 2, 2, 2], Padding::Valid).unwrap();
        assert_eq!(g.out_shape(), vec![1, 3, 4, 3]);
    }
}
