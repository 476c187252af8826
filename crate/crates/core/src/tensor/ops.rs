//! Differentiable operations on [`Var`].

use std::rc::Rc;

use super::gemm::gemm;
use super::tape::{Backward, Var};
use super::{strides_of, Tensor};
use crate::error::{dim_err, Error, Result};

// ---------------------------------------------------------------------------
// Elementwise binary

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

struct Binary(BinaryKind);

impl Backward for Binary {
    fn name(&self) -> &'static str {
        "binary"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let g = grad;
        let (ga, gb) = match self.0 {
            BinaryKind::Add => (g.clone(), g.clone()),
            BinaryKind::Sub => (g.clone(), g.map(|x| -x)),
            BinaryKind::Mul => (
                g.zip_map(b, |g, b| g * b).unwrap(),
                g.zip_map(a, |g, a| g * a).unwrap(),
            ),
            BinaryKind::Div => {
                let ga = g.zip_map(b, |g, b| g / b).unwrap();
                let mut gb = ga.zip_map(a, |q, a| -q * a).unwrap();
                for (x, &bv) in gb.data_mut().iter_mut().zip(b.data()) {
                    *x /= bv;
                }
                (ga, gb)
            }
        };
        vec![needs[0].then_some(ga), needs[1].then_some(gb)]
    }
}

/// `x * s` for a single-element `s`.
struct ScaleByVar;

impl Backward for ScaleByVar {
    fn name(&self) -> &'static str {
        "scale_by_var"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, s) = (inputs[0], inputs[1]);
        let gx = needs[0].then(|| grad.map(|g| g * s.item()));
        let gs = needs[1].then(|| {
            let dot: f64 = grad.data().iter().zip(x.data()).map(|(g, x)| g * x).sum();
            Tensor::full(s.shape(), dot)
        });
        vec![gx, gs]
    }
}

// ---------------------------------------------------------------------------
// Elementwise unary

#[derive(Clone, Copy, Debug)]
enum UnaryKind {
    Scale(f64),
    AddScalar(f64),
    Abs,
    Exp,
    Ln,
    Sqrt,
    Square,
    Powf(f64),
    Sigmoid,
    LeakyRelu(f64),
    Clamp(f64, f64),
}

impl UnaryKind {
    fn forward(self, x: f64) -> f64 {
        match self {
            UnaryKind::Scale(c) => c * x,
            UnaryKind::AddScalar(c) => x + c,
            UnaryKind::Abs => x.abs(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Ln => x.ln(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Square => x * x,
            UnaryKind::Powf(p) => x.powf(p),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            UnaryKind::Clamp(lo, hi) => x.clamp(lo, hi),
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Scale(c) => c,
            UnaryKind::AddScalar(_) => 1.0,
            UnaryKind::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Exp => y,
            UnaryKind::Ln => 1.0 / x,
            UnaryKind::Sqrt => 0.5 / y,
            UnaryKind::Square => 2.0 * x,
            UnaryKind::Powf(p) => p * x.powf(p - 1.0),
            UnaryKind::Sigmoid => y * (1.0 - y),
            // Subgradient at exactly zero is the slope.
            UnaryKind::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            UnaryKind::Clamp(lo, hi) => {
                if x < lo || x > hi {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Unary(UnaryKind);

impl Backward for Unary {
    fn name(&self) -> &'static str {
        "unary"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let data = x
            .data()
            .iter()
            .zip(out.data())
            .zip(grad.data())
            .map(|((&x, &y), &g)| g * self.0.derivative(x, y))
            .collect();
        vec![Some(Tensor::new(x.shape(), data).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// Shape manipulation

struct Reshape;

impl Backward for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::new(inputs[0].shape(), grad.data().to_vec()).unwrap())]
    }
}

fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

struct Transpose;

impl Backward for Transpose {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn backward(&self, _inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let (r, c) = (grad.shape()[0], grad.shape()[1]);
        vec![Some(Tensor::new(&[c, r], transpose_data(grad.data(), r, c)).unwrap())]
    }
}

/// Output index for every input element when `axes` are reduced away.
fn reduce_index_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect();
    let out_strides_full: Vec<usize> = {
        let os = strides_of(&out_shape);
        let mut k = 0;
        (0..shape.len())
            .map(|i| {
                if axes.contains(&i) {
                    0
                } else {
                    k += 1;
                    os[k - 1]
                }
            })
            .collect()
    };
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut o = 0usize;
    for _ in 0..n {
        map.push(o);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            o += out_strides_full[d];
            if idx[d] < shape[d] {
                break;
            }
            o -= out_strides_full[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out_shape, map)
}

/// Reduction flavours.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Mean of absolute values.
    L1,
}

struct Reduce {
    kind: ReduceKind,
    map: Rc<Vec<usize>>,
    count: usize,
}

impl Backward for Reduce {
    fn name(&self) -> &'static str {
        "reduce"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let g = grad.data();
        let inv = 1.0 / self.count as f64;
        let data = self
            .map
            .iter()
            .zip(x.data())
            .map(|(&o, &xv)| match self.kind {
                ReduceKind::Sum => g[o],
                ReduceKind::Mean => g[o] * inv,
                ReduceKind::L1 => g[o] * inv * UnaryKind::Abs.derivative(xv, 0.0),
            })
            .collect();
        vec![Some(Tensor::new(x.shape(), data).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// Matmul

struct Matmul;

impl Backward for Matmul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let ga = needs[0].then(|| {
            let mut out = vec![0.0; m * k];
            // g[m,n] x b^T[n,k]
            gemm(m, n, k, 1.0, grad.data(), n, 1, b.data(), 1, n, 0.0, &mut out);
            Tensor::new(&[m, k], out).unwrap()
        });
        let gb = needs[1].then(|| {
            let mut out = vec![0.0; k * n];
            // a^T[k,m] x g[m,n]
            gemm(k, m, n, 1.0, a.data(), 1, k, grad.data(), n, 1, 0.0, &mut out);
            Tensor::new(&[k, n], out).unwrap()
        });
        vec![ga, gb]
    }
}

// ---------------------------------------------------------------------------
// Convolution

/// Spatial output length of a convolution, if the configuration is valid.
pub fn conv2d_output_size(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Visits every (column-matrix offset, input offset) pair inside the image.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let p = self.cols();
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let in_row = (ci * self.h + iy as usize) * self.w;
                        let col_row = row * p + oy * self.wo;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(col_row + ox, in_row + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.rows() * self.cols()];
        self.for_each_tap(|c, i| cols[c] = x[i]);
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.c * self.h * self.w];
        self.for_each_tap(|c, i| x[i] += cols[c]);
        x
    }
}

struct Conv2d {
    geom: ConvGeom,
}

impl Backward for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let g = &self.geom;
        let co = w.shape()[0];
        let (kr, p) = (g.rows(), g.cols());
        let gx = needs[0].then(|| {
            let mut gcols = vec![0.0; kr * p];
            // w^T[kr,co] x grad[co,p]
            gemm(kr, co, p, 1.0, w.data(), 1, kr, grad.data(), p, 1, 0.0, &mut gcols);
            Tensor::new(x.shape(), g.col2im(&gcols)).unwrap()
        });
        let gw = needs[1].then(|| {
            let cols = g.im2col(x.data());
            let mut out = vec![0.0; co * kr];
            // grad[co,p] x cols^T[p,kr]
            gemm(co, p, kr, 1.0, grad.data(), p, 1, &cols, 1, p, 0.0, &mut out);
            Tensor::new(w.shape(), out).unwrap()
        });
        let gb = needs[2].then(|| {
            let data = grad.data().chunks(p).map(|row| row.iter().sum()).collect();
            Tensor::new(&[co], data).unwrap()
        });
        vec![gx, gw, gb]
    }
}

// ---------------------------------------------------------------------------
// Bilinear resize (corner-aligned)

/// Output length of a resize by `factor`.
pub fn resized_len(len: usize, factor: f64) -> usize {
    (len as f64 * factor).round().max(0.0) as usize
}

/// (lower index, upper index, fraction) for each output position.
fn corner_aligned_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            if input == 1 || output == 1 {
                return (0, 0, 0.0);
            }
            let src = o as f64 * (input - 1) as f64 / (output - 1) as f64;
            let i0 = (src.floor() as usize).min(input - 2);
            (i0, i0 + 1, src - i0 as f64)
        })
        .collect()
}

struct Resize {
    ys: Vec<(usize, usize, f64)>,
    xs: Vec<(usize, usize, f64)>,
}

impl Resize {
    fn for_each(&self, c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, f64)) {
        let (ho, wo) = (self.ys.len(), self.xs.len());
        for ci in 0..c {
            for (oy, &(y0, y1, fy)) in self.ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in self.xs.iter().enumerate() {
                    let o = (ci * ho + oy) * wo + ox;
                    let base = ci * h * w;
                    f(o, base + y0 * w + x0, (1.0 - fy) * (1.0 - fx));
                    f(o, base + y0 * w + x1, (1.0 - fy) * fx);
                    f(o, base + y1 * w + x0, fy * (1.0 - fx));
                    f(o, base + y1 * w + x1, fy * fx);
                }
            }
        }
    }
}

impl Backward for Resize {
    fn name(&self) -> &'static str {
        "resize_bilinear"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut gx = vec![0.0; x.numel()];
        let g = grad.data();
        self.for_each(c, h, w, |o, i, wt| gx[i] += wt * g[o]);
        vec![Some(Tensor::new(x.shape(), gx).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// Box filter with windows clipped to the image

fn box_sum(data: &[f64], c: usize, h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    let mut integral = vec![0.0; (h + 1) * (w + 1)];
    for ci in 0..c {
        let plane = &data[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += plane[y * w + x];
                integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
            }
        }
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1) + 1);
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1) + 1);
                out[ci * h * w + y * w + x] = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                    - integral[y1 * (w + 1) + x0]
                    + integral[y0 * (w + 1) + x0];
            }
        }
    }
    out
}

fn box_counts(h: usize, w: usize, r: usize) -> Vec<f64> {
    let span = |i: usize, n: usize| ((i + r).min(n - 1) + 1 - i.saturating_sub(r)) as f64;
    (0..h)
        .flat_map(|y| (0..w).map(move |x| span(y, h) * span(x, w)))
        .collect()
}

struct BoxFilter {
    radius: usize,
}

impl Backward for BoxFilter {
    fn name(&self) -> &'static str {
        "box_filter"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let counts = box_counts(h, w, self.radius);
        let scaled: Vec<f64> = grad
            .data()
            .iter()
            .enumerate()
            .map(|(i, g)| g / counts[i % (h * w)])
            .collect();
        vec![Some(Tensor::new(x.shape(), box_sum(&scaled, c, h, w, self.radius)).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// Axis-wise softmax and L2 normalization

#[derive(Clone, Copy)]
struct AxisGeom {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisGeom {
    fn new(shape: &[usize], axis: usize) -> Self {
        AxisGeom {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }

    /// Calls `f` with the flat indices of every 1-D lane along the axis.
    fn for_each_lane(&self, mut f: impl FnMut(&mut dyn Iterator<Item = usize>)) {
        for o in 0..self.outer {
            for i in 0..self.inner {
                let base = o * self.len * self.inner + i;
                let stride = self.inner;
                let mut lane = (0..self.len).map(move |k| base + k * stride);
                f(&mut lane);
            }
        }
    }

    fn lanes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.outer * self.inner);
        self.for_each_lane(|lane| out.push(lane.collect()));
        out
    }
}

struct Softmax {
    geom: AxisGeom,
}

impl Backward for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let y = out.data();
        let g = grad.data();
        let mut gx = vec![0.0; y.len()];
        for lane in self.geom.lanes() {
            let dot: f64 = lane.iter().map(|&i| y[i] * g[i]).sum();
            for &i in &lane {
                gx[i] = y[i] * (g[i] - dot);
            }
        }
        vec![Some(Tensor::new(inputs[0].shape(), gx).unwrap())]
    }
}

struct L2Normalize {
    geom: AxisGeom,
    eps: f64,
}

impl Backward for L2Normalize {
    fn name(&self) -> &'static str {
        "l2_normalize"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0].data();
        let y = out.data();
        let g = grad.data();
        let mut gx = vec![0.0; x.len()];
        for lane in self.geom.lanes() {
            let norm = lane.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
            if norm >= self.eps {
                let dot: f64 = lane.iter().map(|&i| y[i] * g[i]).sum();
                for &i in &lane {
                    gx[i] = (g[i] - y[i] * dot) / norm;
                }
            } else {
                for &i in &lane {
                    gx[i] = g[i] / self.eps;
                }
            }
        }
        vec![Some(Tensor::new(inputs[0].shape(), gx).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// Forward differences

struct ForwardDiff {
    geom: AxisGeom,
}

impl Backward for ForwardDiff {
    fn name(&self) -> &'static str {
        "forward_diff"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let AxisGeom { outer, len, inner } = self.geom;
        let g = grad.data();
        let mut gx = vec![0.0; inputs[0].numel()];
        for o in 0..outer {
            for k in 0..len - 1 {
                for i in 0..inner {
                    let gv = g[(o * (len - 1) + k) * inner + i];
                    gx[(o * len + k + 1) * inner + i] += gv;
                    gx[(o * len + k) * inner + i] -= gv;
                }
            }
        }
        vec![Some(Tensor::new(inputs[0].shape(), gx).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// Bilinear sampling at arbitrary coordinates

/// Bilinear taps for sampling a `h x w` plane at `(x, y)`; `None` outside.
pub(crate) fn bilinear_taps(x: f64, y: f64, h: usize, w: usize) -> Option<[(usize, f64); 4]> {
    if !(x.is_finite() && y.is_finite()) {
        return None;
    }
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return None;
    }
    let axis = |v: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let i0 = (v.floor() as usize).min(n - 2);
        (i0, i0 + 1, v - i0 as f64)
    };
    let (x0, x1, fx) = axis(x, w);
    let (y0, y1, fy) = axis(y, h);
    Some([
        (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
        (y0 * w + x1, (1.0 - fy) * fx),
        (y1 * w + x0, fy * (1.0 - fx)),
        (y1 * w + x1, fy * fx),
    ])
}

struct Sample {
    taps: Rc<Vec<Option<[(usize, f64); 4]>>>,
}

impl Backward for Sample {
    fn name(&self) -> &'static str {
        "sample_bilinear"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let p = self.taps.len();
        let g = grad.data();
        let mut gx = vec![0.0; x.numel()];
        for ci in 0..c {
            for (o, taps) in self.taps.iter().enumerate() {
                if let Some(taps) = taps {
                    for &(i, wt) in taps {
                        gx[ci * h * w + i] += wt * g[ci * p + o];
                    }
                }
            }
        }
        vec![Some(Tensor::new(x.shape(), gx).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// Public API on Var

impl<'t> Var<'t> {
    fn binary(self, other: Var<'t>, kind: BinaryKind) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        a.expect_same_shape(&b, "elementwise op")?;
        let out = a
            .zip_map(&b, |x, y| match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::Div => x / y,
            })?;
        Ok(self.tape().apply(&[self, other], out, Binary(kind)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Div)
    }

    /// Multiplies every element by the single-element `s`.
    pub fn scale_by(self, s: Var<'t>) -> Result<Var<'t>> {
        let sv = s.value();
        if sv.numel() != 1 {
            return dim_err(format!("scale_by expects a scalar, got {:?}", sv.shape()));
        }
        let k = sv.item();
        let out = self.value().map(|x| x * k);
        Ok(self.tape().apply(&[self, s], out, ScaleByVar))
    }

    fn unary(self, kind: UnaryKind) -> Var<'t> {
        let out = self.value().map(|x| kind.forward(x));
        self.tape().apply(&[self], out, Unary(kind))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(UnaryKind::Scale(c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(UnaryKind::AddScalar(c))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(UnaryKind::Abs)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(UnaryKind::Exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(UnaryKind::Ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(UnaryKind::Sqrt)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(UnaryKind::Square)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(UnaryKind::Powf(p))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(UnaryKind::Sigmoid)
    }

    /// `max(x, slope * x)` for `slope` in (0, 1).
    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        debug_assert!(slope > 0.0 && slope < 1.0);
        self.unary(UnaryKind::LeakyRelu(slope))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(UnaryKind::Clamp(lo, hi))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?;
        Ok(self.tape().apply(&[self], out, Reshape))
    }

    /// Transpose of a matrix.
    pub fn transpose(self) -> Result<Var<'t>> {
        let v = self.value();
        v.expect_rank(2, "transpose")?;
        let (r, c) = (v.shape()[0], v.shape()[1]);
        let out = Tensor::new(&[c, r], transpose_data(v.data(), r, c))?;
        Ok(self.tape().apply(&[self], out, Transpose))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        a.expect_rank(2, "matmul lhs")?;
        b.expect_rank(2, "matmul rhs")?;
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        if b.shape()[0] != k {
            return dim_err(format!("matmul: {:?} x {:?}", a.shape(), b.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, a.data(), k, 1, b.data(), n, 1, 0.0, &mut out);
        Ok(self.tape().apply(&[self, other], Tensor::new(&[m, n], out)?, Matmul))
    }

    /// Reduction over `axes`; the reduced axes are removed from the shape.
    pub fn reduce(self, kind: ReduceKind, axes: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        let shape = v.shape();
        for (i, &a) in axes.iter().enumerate() {
            if a >= shape.len() || axes[..i].contains(&a) {
                return dim_err(format!("reduce: bad axes {axes:?} for shape {shape:?}"));
            }
        }
        if axes.is_empty() && !shape.is_empty() {
            return dim_err("reduce: empty axis list");
        }
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let (out_shape, map) = reduce_index_map(shape, axes);
        let mut out = vec![0.0; out_shape.iter().product()];
        for (&o, &x) in map.iter().zip(v.data()) {
            out[o] += match kind {
                ReduceKind::Sum | ReduceKind::Mean => x,
                ReduceKind::L1 => x.abs(),
            };
        }
        if kind != ReduceKind::Sum {
            for x in &mut out {
                *x /= count as f64;
            }
        }
        let rule = Reduce {
            kind,
            map: Rc::new(map),
            count,
        };
        Ok(self.tape().apply(&[self], Tensor::new(&out_shape, out)?, rule))
    }

    fn all_axes(&self) -> Vec<usize> {
        (0..self.value().rank()).collect()
    }

    pub fn sum(self) -> Var<'t> {
        let axes = self.all_axes();
        self.reduce(ReduceKind::Sum, &axes).expect("full reduction")
    }

    pub fn mean(self) -> Var<'t> {
        let axes = self.all_axes();
        self.reduce(ReduceKind::Mean, &axes).expect("full reduction")
    }

    /// Mean absolute value over all elements.
    pub fn l1(self) -> Var<'t> {
        let axes = self.all_axes();
        self.reduce(ReduceKind::L1, &axes).expect("full reduction")
    }

    /// Cross-correlation of a `[C_in, H, W]` input with `[C_out, C_in, k, k]`
    /// weights, zero padding.
    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        x.expect_rank(3, "conv2d input")?;
        w.expect_rank(4, "conv2d weight")?;
        let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, ci, k, k2) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if ci != c || k != k2 || k % 2 == 0 || b.shape() != [co] {
            return dim_err(format!(
                "conv2d: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            ));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d: stride must be at least 1".into()));
        }
        x.expect_finite("conv2d")?;
        let (Some(ho), Some(wo)) = (
            conv2d_output_size(h, k, stride, padding),
            conv2d_output_size(wd, k, stride, padding),
        ) else {
            return dim_err(format!("conv2d: kernel {k} does not fit input {h}x{wd}"));
        };
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            k,
            stride,
            pad: padding,
            ho,
            wo,
        };
        let cols = geom.im2col(x.data());
        let p = ho * wo;
        let mut out = vec![0.0; co * p];
        for (row, &bv) in out.chunks_mut(p).zip(b.data()) {
            row.fill(bv);
        }
        gemm(co, geom.rows(), p, 1.0, w.data(), geom.rows(), 1, &cols, p, 1, 1.0, &mut out);
        let out = Tensor::new(&[co, ho, wo], out)?;
        Ok(self.tape().apply(&[self, weight, bias], out, Conv2d { geom }))
    }

    /// Corner-aligned bilinear resize of a `[C, H, W]` tensor to `[C, out_h, out_w]`.
    pub fn resize_to(self, out_h: usize, out_w: usize) -> Result<Var<'t>> {
        let x = self.value();
        x.expect_rank(3, "resize")?;
        if out_h == 0 || out_w == 0 {
            return dim_err("resize: degenerate output shape");
        }
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let rule = Resize {
            ys: corner_aligned_taps(h, out_h),
            xs: corner_aligned_taps(w, out_w),
        };
        let mut out = vec![0.0; c * out_h * out_w];
        let xd = x.data();
        rule.for_each(c, h, w, |o, i, wt| out[o] += wt * xd[i]);
        let out = Tensor::new(&[c, out_h, out_w], out)?;
        Ok(self.tape().apply(&[self], out, rule))
    }

    /// Resize both spatial dims by `factor`.
    pub fn resize_bilinear(self, factor: f64) -> Result<Var<'t>> {
        if !(factor > 0.0) {
            return dim_err(format!("resize: factor {factor} must be positive"));
        }
        let s = self.shape();
        if s.len() != 3 {
            return dim_err(format!("resize: expected [C,H,W], got {s:?}"));
        }
        self.resize_to(resized_len(s[1], factor), resized_len(s[2], factor))
    }

    /// Mean over the `(2r+1)^2` window, clipped to the image.
    pub fn box_filter(self, radius: usize) -> Result<Var<'t>> {
        let x = self.value();
        x.expect_rank(3, "box_filter")?;
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if radius > h && radius > w {
            return dim_err(format!("box_filter: radius {radius} exceeds image {h}x{w}"));
        }
        let counts = box_counts(h, w, radius);
        let mut out = box_sum(x.data(), c, h, w, radius);
        for (i, v) in out.iter_mut().enumerate() {
            *v /= counts[i % (h * w)];
        }
        let out = Tensor::new(x.shape(), out)?;
        Ok(self.tape().apply(&[self], out, BoxFilter { radius }))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return dim_err(format!("softmax: axis {axis} for shape {:?}", x.shape()));
        }
        let geom = AxisGeom::new(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![0.0; xd.len()];
        for lane in geom.lanes() {
            let max = lane.iter().map(|&i| xd[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for &i in &lane {
                out[i] = (xd[i] - max).exp();
                total += out[i];
            }
            for &i in &lane {
                out[i] /= total;
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        Ok(self.tape().apply(&[self], out, Softmax { geom }))
    }

    /// `x / max(||x||, eps)` along `axis`.
    pub fn l2_normalize(self, axis: usize, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return dim_err(format!("l2_normalize: axis {axis} for shape {:?}", x.shape()));
        }
        if !(eps > 0.0) {
            return Err(Error::Contract("l2_normalize: eps must be positive".into()));
        }
        let geom = AxisGeom::new(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![0.0; xd.len()];
        for lane in geom.lanes() {
            let norm = lane.iter().map(|&i| xd[i] * xd[i]).sum::<f64>().sqrt();
            let d = norm.max(eps);
            for &i in &lane {
                out[i] = xd[i] / d;
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        Ok(self.tape().apply(&[self], out, L2Normalize { geom, eps }))
    }

    /// `x[k+1] - x[k]` along `axis`; that axis shrinks by one.
    pub fn forward_diff(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() || x.shape()[axis] < 2 {
            return dim_err(format!("forward_diff: axis {axis} for shape {:?}", x.shape()));
        }
        let geom = AxisGeom::new(x.shape(), axis);
        let AxisGeom { outer, len, inner } = geom;
        let xd = x.data();
        let mut out = Vec::with_capacity(outer * (len - 1) * inner);
        for o in 0..outer {
            for k in 0..len - 1 {
                for i in 0..inner {
                    out.push(xd[(o * len + k + 1) * inner + i] - xd[(o * len + k) * inner + i]);
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] -= 1;
        let out = Tensor::new(&shape, out)?;
        Ok(self.tape().apply(&[self], out, ForwardDiff { geom }))
    }

    /// Bilinear samples of a `[C, H, W]` tensor at `coords` (x, y), producing
    /// `[C, out_h, out_w]`. Coordinates outside the frame yield zero.
    pub fn sample_bilinear(self, coords: &[(f64, f64)], out_h: usize, out_w: usize) -> Result<Var<'t>> {
        let x = self.value();
        x.expect_rank(3, "sample_bilinear")?;
        if coords.len() != out_h * out_w {
            return dim_err("sample_bilinear: coordinate count does not match output size");
        }
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let taps: Vec<_> = coords.iter().map(|&(cx, cy)| bilinear_taps(cx, cy, h, w)).collect();
        let p = taps.len();
        let xd = x.data();
        let mut out = vec![0.0; c * p];
        for ci in 0..c {
            for (o, t) in taps.iter().enumerate() {
                if let Some(t) = t {
                    out[ci * p + o] = t.iter().map(|&(i, wt)| wt * xd[ci * h * w + i]).sum();
                }
            }
        }
        let out = Tensor::new(&[c, out_h, out_w], out)?;
        Ok(self.tape().apply(&[self], out, Sample { taps: Rc::new(taps) }))
    }
}
