//! Tape-based reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of that scalar with respect to every node that requires one.
//! Image tensors are laid out `[C, H, W]`.

use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array1, Array2, Array3, ArrayD, Axis, Ix1, Ix2, Ix3, IxDyn, Zip};

use crate::error::{Error, Result};

pub type Tensor = ArrayD<f64>;

/// Gradient contributions for each parent; `None` where the parent needs none.
type Backward = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<Backward>,
    requires_grad: bool,
}

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    graph: u64,
}

pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}

fn scalar_tensor(v: f64) -> Tensor {
    ArrayD::from_elem(IxDyn(&[]), v)
}

fn as3(t: &Tensor, op: &'static str) -> Result<Array3<f64>> {
    t.view()
        .into_dimensionality::<Ix3>()
        .map(|v| v.to_owned())
        .map_err(|_| Error::shape(op, format!("expected [C, H, W], got {:?}", t.shape())))
}

/// Column matrix `[C·k·k, Ho·Wo]` of zero-padded `k×k` patches.
fn im2col(x: &Array3<f64>, k: usize, stride: usize, pad: usize, out: (usize, usize)) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (ho, wo) = out;
    let mut cols = Array2::<f64>::zeros((c * k * k, ho * wo));
    for ch in 0..c {
        for u in 0..k {
            for v in 0..k {
                let row = (ch * k + u) * k + v;
                let mut dst = cols.row_mut(row);
                for i in 0..ho {
                    let y = (i * stride + u) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for j in 0..wo {
                        let xx = (j * stride + v) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            dst[i * wo + j] = x[[ch, y as usize, xx as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, dims: (usize, usize, usize), k: usize, stride: usize, pad: usize, out: (usize, usize)) -> Array3<f64> {
    let (c, h, w) = dims;
    let (ho, wo) = out;
    let mut x = Array3::<f64>::zeros(dims);
    for ch in 0..c {
        for u in 0..k {
            for v in 0..k {
                let src = cols.row((ch * k + u) * k + v);
                for i in 0..ho {
                    let y = (i * stride + u) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for j in 0..wo {
                        let xx = (j * stride + v) as isize - pad as isize;
                        if xx >= 0 && xx < w as isize {
                            x[[ch, y as usize, xx as usize]] += src[i * wo + j];
                        }
                    }
                }
            }
        }
    }
    x
}

fn filter_rows_valid(x: &Array3<f64>, taps: &[f64]) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let k = taps.len();
    Array3::from_shape_fn((c, h, w + 1 - k), |(ch, i, j)| taps.iter().enumerate().map(|(t, g)| g * x[[ch, i, j + t]]).sum())
}

fn filter_cols_valid(x: &Array3<f64>, taps: &[f64]) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let k = taps.len();
    Array3::from_shape_fn((c, h + 1 - k, w), |(ch, i, j)| taps.iter().enumerate().map(|(t, g)| g * x[[ch, i + t, j]]).sum())
}

/// Adjoint of [`filter_rows_valid`]: scatter back to the wider input.
fn filter_rows_adjoint(g: &Array3<f64>, taps: &[f64]) -> Array3<f64> {
    let (c, h, wo) = g.dim();
    let k = taps.len();
    let mut out = Array3::<f64>::zeros((c, h, wo + k - 1));
    for ((ch, i, j), &v) in g.indexed_iter() {
        for (t, tap) in taps.iter().enumerate() {
            out[[ch, i, j + t]] += tap * v;
        }
    }
    out
}

fn filter_cols_adjoint(g: &Array3<f64>, taps: &[f64]) -> Array3<f64> {
    let (c, ho, w) = g.dim();
    let k = taps.len();
    let mut out = Array3::<f64>::zeros((c, ho + k - 1, w));
    for ((ch, i, j), &v) in g.indexed_iter() {
        for (t, tap) in taps.iter().enumerate() {
            out[[ch, i + t, j]] += tap * v;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph == self.id && v.index < self.nodes.len() {
            Ok(v.index)
        } else {
            Err(Error::ForeignVar)
        }
    }

    fn val(&self, v: Var) -> Result<Rc<Tensor>> {
        Ok(Rc::clone(&self.nodes[self.check(v)?].value))
    }

    fn push(&mut self, value: Tensor, parents: &[Var], backward: Backward) -> Var {
        let parents: Vec<usize> = parents.iter().map(|p| p.index).collect();
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var {
            index: self.nodes.len() - 1,
            graph: self.id,
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            index: self.nodes.len() - 1,
            graph: self.id,
        }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.check(v)?].value)
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v)?;
        if t.len() != 1 {
            return Err(Error::shape("scalar", format!("{} elements", t.len())));
        }
        Ok(*t.iter().next().unwrap())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.nodes[self.check(v)?].requires_grad)
    }

    /// Same value, cut from the tape.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = (*self.val(v)?).clone();
        Ok(self.constant(t))
    }

    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let r = self.check(root)?;
        let rv = &self.nodes[r].value;
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=r).map(|_| None).collect();
        grads[r] = Some(ArrayD::ones(rv.raw_dim()));
        for i in (0..=r).rev() {
            let node = &self.nodes[i];
            let Some(back) = &node.backward else { continue };
            let Some(g) = grads[i].as_ref() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect();
            let contribs = back(g, &needs);
            for (&p, c) in node.parents.iter().zip(contribs) {
                if let Some(c) = c {
                    match &mut grads[p] {
                        Some(acc) => *acc += &c,
                        slot => *slot = Some(c),
                    }
                }
            }
        }
        Ok(Gradients { graph: self.id, grads })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(Rc<Tensor>, Rc<Tensor>)> {
        let (x, y) = (self.val(a)?, self.val(b)?);
        if x.shape() != y.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        Ok((x, y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = self.same_shape("add", a, b)?;
        let out = &*x + &*y;
        Ok(self.push(out, &[a, b], Box::new(|g, n| vec![n[0].then(|| g.clone()), n[1].then(|| g.clone())])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = self.same_shape("sub", a, b)?;
        let out = &*x - &*y;
        Ok(self.push(out, &[a, b], Box::new(|g, n| vec![n[0].then(|| g.clone()), n[1].then(|| -g)])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = self.same_shape("mul", a, b)?;
        let out = &*x * &*y;
        Ok(self.push(out, &[a, b], Box::new(move |g, n| vec![n[0].then(|| g * &*y), n[1].then(|| g * &*x)])))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = self.same_shape("div", a, b)?;
        let out = &*x / &*y;
        let q = Rc::new(out.clone());
        Ok(self.push(
            out,
            &[a, b],
            Box::new(move |g, n| vec![n[0].then(|| g / &*y), n[1].then(|| -(g * &*q) / &*y)]),
        ))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let x = self.val(a)?;
        let out = x.mapv(|v| scale * v + shift);
        Ok(self.push(out, &[a], Box::new(move |g, _| vec![Some(g * scale)])))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a)?;
        let out = x.mapv(f64::abs);
        Ok(self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let mut d = g.clone();
                Zip::from(&mut d).and(&*x).for_each(|d, &v| *d *= if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 });
                vec![Some(d)]
            }),
        ))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let x = self.val(a)?;
        let out = x.mapv(|v| if v > 0.0 { v } else { slope * v });
        Ok(self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let mut d = g.clone();
                Zip::from(&mut d).and(&*x).for_each(|d, &v| {
                    if v <= 0.0 {
                        *d *= slope
                    }
                });
                vec![Some(d)]
            }),
        ))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a)?;
        let out = x.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let s = Rc::new(out.clone());
        Ok(self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let mut d = g.clone();
                Zip::from(&mut d).and(&*s).for_each(|d, &s| *d *= s * (1.0 - s));
                vec![Some(d)]
            }),
        ))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a)?;
        let out = x.mapv(f64::tanh);
        let t = Rc::new(out.clone());
        Ok(self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let mut d = g.clone();
                Zip::from(&mut d).and(&*t).for_each(|d, &t| *d *= 1.0 - t * t);
                vec![Some(d)]
            }),
        ))
    }

    /// `max(a, floor)^p` elementwise; zero gradient where clamped.
    pub fn pow_clamped(&mut self, a: Var, p: f64, floor: f64) -> Result<Var> {
        if !(floor > 0.0) {
            return Err(Error::Config(format!("pow floor {floor} must be positive")));
        }
        let x = self.val(a)?;
        let out = x.mapv(|v| v.max(floor).powf(p));
        Ok(self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let mut d = g.clone();
                Zip::from(&mut d).and(&*x).for_each(|d, &v| *d *= if v > floor { p * v.powf(p - 1.0) } else { 0.0 });
                vec![Some(d)]
            }),
        ))
    }

    /// Sum of all elements, as a 0-d tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a)?;
        let shape = x.raw_dim();
        let out = scalar_tensor(x.sum());
        Ok(self.push(
            out,
            &[a],
            Box::new(move |g, _| vec![Some(ArrayD::from_elem(shape.clone(), *g.iter().next().unwrap()))]),
        ))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.val(a)?.len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = self.sum(a)?;
        self.affine(s, 1.0 / n as f64, 0.0)
    }

    /// Concatenate `[C_i, H, W]` tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let vals: Vec<Array3<f64>> = parts.iter().map(|&p| as3(&*self.val(p)?, "concat")).collect::<Result<_>>()?;
        let (_, h, w) = vals[0].dim();
        if vals.iter().any(|v| v.dim().1 != h || v.dim().2 != w) {
            return Err(Error::shape("concat", "spatial dims differ"));
        }
        let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("checked dims").into_dyn();
        let sizes: Vec<usize> = vals.iter().map(|v| v.dim().0).collect();
        Ok(self.push(
            out,
            parts,
            Box::new(move |g, n| {
                let mut start = 0;
                sizes
                    .iter()
                    .zip(n)
                    .map(|(&c, &need)| {
                        let piece = need.then(|| g.slice_axis(Axis(0), (start..start + c).into()).to_owned());
                        start += c;
                        piece
                    })
                    .collect()
            }),
        ))
    }

    /// Channel `c` of a `[C, H, W]` tensor, kept as `[1, H, W]`.
    pub fn channel(&mut self, a: Var, c: usize) -> Result<Var> {
        let x = as3(&*self.val(a)?, "channel")?;
        let (nc, h, w) = x.dim();
        if c >= nc {
            return Err(Error::shape("channel", format!("channel {c} of {nc}")));
        }
        let out = x.slice(s![c..c + 1, .., ..]).to_owned().into_dyn();
        Ok(self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let mut d = Array3::<f64>::zeros((nc, h, w));
                d.slice_mut(s![c..c + 1, .., ..]).assign(&g.view().into_dimensionality::<Ix3>().unwrap());
                vec![Some(d.into_dyn())]
            }),
        ))
    }

    /// Square `k×k` convolution with zero "same" padding `k/2`.
    ///
    /// `x: [C, H, W]`, `w: [O, C, k, k]`, `b: [O]`; output `[O, ⌈H/s⌉, ⌈W/s⌉]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let xv = as3(&*self.val(x)?, "conv2d")?;
        let wv = self.val(w)?;
        let bv = self.val(b)?;
        let (c, h, wd) = xv.dim();
        let ws = wv.shape().to_vec();
        if ws.len() != 4 || ws[1] != c || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel {ws:?} for {c} input channels")));
        }
        if bv.shape() != [ws[0]] {
            return Err(Error::shape("conv2d", format!("bias {:?} for {} outputs", bv.shape(), ws[0])));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride 0"));
        }
        let (o, k) = (ws[0], ws[2]);
        let pad = k / 2;
        let (ho, wo) = ((h + 2 * pad - k) / stride + 1, (wd + 2 * pad - k) / stride + 1);
        let cols = Rc::new(im2col(&xv, k, stride, pad, (ho, wo)));
        let wm = Rc::new(wv.view().into_shape_with_order((o, c * k * k)).unwrap().to_owned());
        let mut out = wm.dot(&*cols);
        let bias = bv.view().into_dimensionality::<Ix1>().unwrap().to_owned();
        for (mut row, &bb) in out.axis_iter_mut(Axis(0)).zip(bias.iter()) {
            row += bb;
        }
        let out = out.into_shape_with_order((o, ho, wo)).unwrap().into_dyn();
        Ok(self.push(
            out,
            &[x, w, b],
            Box::new(move |g, n| {
                let gm = g.view().into_shape_with_order((o, ho * wo)).unwrap();
                let dx = n[0].then(|| col2im(&wm.t().dot(&gm), (c, h, wd), k, stride, pad, (ho, wo)).into_dyn());
                let dw = n[1].then(|| gm.dot(&cols.t()).into_shape_with_order(IxDyn(&[o, c, k, k])).unwrap());
                let db = n[2].then(|| gm.sum_axis(Axis(1)).into_dyn());
                vec![dx, dw, db]
            }),
        ))
    }

    /// Transposed 2×2 convolution with stride 2 (exact 2× upsampling).
    ///
    /// `x: [C, H, W]`, `w: [C, O, 2, 2]`, `b: [O]`; output `[O, 2H, 2W]`.
    pub fn conv_transpose2x2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xv = as3(&*self.val(x)?, "conv_transpose2x2")?;
        let wv = self.val(w)?;
        let bv = self.val(b)?;
        let (c, h, wd) = xv.dim();
        let ws = wv.shape().to_vec();
        if ws.len() != 4 || ws[0] != c || ws[2] != 2 || ws[3] != 2 {
            return Err(Error::shape("conv_transpose2x2", format!("kernel {ws:?} for {c} input channels")));
        }
        let o = ws[1];
        if bv.shape() != [o] {
            return Err(Error::shape("conv_transpose2x2", format!("bias {:?} for {o} outputs", bv.shape())));
        }
        let xm = Rc::new(xv.into_shape_with_order((c, h * wd)).unwrap());
        let wm = Rc::new(wv.view().into_shape_with_order((c, o * 4)).unwrap().to_owned());
        // y[(o, u, v), p] = Σ_c w[c, o, u, v] x[c, p]
        let y = wm.t().dot(&*xm);
        let bias = bv.view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let mut out = Array3::<f64>::zeros((o, 2 * h, 2 * wd));
        for oc in 0..o {
            for u in 0..2 {
                for v in 0..2 {
                    let row = y.row(oc * 4 + u * 2 + v);
                    for i in 0..h {
                        for j in 0..wd {
                            out[[oc, 2 * i + u, 2 * j + v]] = row[i * wd + j] + bias[oc];
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out.into_dyn(),
            &[x, w, b],
            Box::new(move |g, n| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let mut gy = Array2::<f64>::zeros((o * 4, h * wd));
                for oc in 0..o {
                    for u in 0..2 {
                        for v in 0..2 {
                            let mut row = gy.row_mut(oc * 4 + u * 2 + v);
                            for i in 0..h {
                                for j in 0..wd {
                                    row[i * wd + j] = g3[[oc, 2 * i + u, 2 * j + v]];
                                }
                            }
                        }
                    }
                }
                let dx = n[0].then(|| wm.dot(&gy).into_shape_with_order(IxDyn(&[c, h, wd])).unwrap());
                let dw = n[1].then(|| xm.dot(&gy.t()).into_shape_with_order(IxDyn(&[c, o, 2, 2])).unwrap());
                let db = n[2].then(|| g3.sum_axis(Axis(2)).sum_axis(Axis(1)).into_dyn());
                vec![dx, dw, db]
            }),
        ))
    }

    /// 2×2 mean pooling of `[C, H, W]`; an odd trailing row/column is dropped.
    pub fn mean_pool2(&mut self, a: Var) -> Result<Var> {
        let x = as3(&*self.val(a)?, "mean_pool2")?;
        let (c, h, w) = x.dim();
        if h < 2 || w < 2 {
            return Err(Error::shape("mean_pool2", format!("{h}x{w} too small")));
        }
        let out = Array3::from_shape_fn((c, h / 2, w / 2), |(ch, i, j)| {
            0.25 * (x[[ch, 2 * i, 2 * j]] + x[[ch, 2 * i + 1, 2 * j]] + x[[ch, 2 * i, 2 * j + 1]] + x[[ch, 2 * i + 1, 2 * j + 1]])
        });
        Ok(self.push(
            out.into_dyn(),
            &[a],
            Box::new(move |g, _| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let mut d = Array3::<f64>::zeros((c, h, w));
                for ((ch, i, j), &v) in g3.indexed_iter() {
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        d[[ch, 2 * i + di, 2 * j + dj]] = 0.25 * v;
                    }
                }
                vec![Some(d.into_dyn())]
            }),
        ))
    }

    /// Spatial mean of `[C, H, W]`, giving `[C]`.
    pub fn global_mean(&mut self, a: Var) -> Result<Var> {
        let x = as3(&*self.val(a)?, "global_mean")?;
        let (c, h, w) = x.dim();
        let n = (h * w) as f64;
        let out = x.sum_axis(Axis(2)).sum_axis(Axis(1)) / n;
        Ok(self.push(
            out.into_dyn(),
            &[a],
            Box::new(move |g, _| {
                let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                vec![Some(Array3::from_shape_fn((c, h, w), |(ch, _, _)| g1[ch] / n).into_dyn())]
            }),
        ))
    }

    /// Affine map `w · x + b` of a vector: `x: [C]`, `w: [O, C]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xv = self.val(x)?;
        let wv = self.val(w)?;
        let bv = self.val(b)?;
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bv.shape() != [ws[0]] {
            return Err(Error::shape("linear", format!("x {xs:?}, w {ws:?}, b {:?}", bv.shape())));
        }
        let x1: Array1<f64> = xv.view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let w2: Array2<f64> = wv.view().into_dimensionality::<Ix2>().unwrap().to_owned();
        let out = w2.dot(&x1) + bv.view().into_dimensionality::<Ix1>().unwrap();
        Ok(self.push(
            out.into_dyn(),
            &[x, w, b],
            Box::new(move |g, n| {
                let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                let dx = n[0].then(|| w2.t().dot(&g1).into_dyn());
                let dw = n[1].then(|| {
                    let gc = g1.to_owned().insert_axis(Axis(1));
                    let xr = x1.view().insert_axis(Axis(0));
                    gc.dot(&xr).into_dyn()
                });
                let db = n[2].then(|| g1.to_owned().into_dyn());
                vec![dx, dw, db]
            }),
        ))
    }

    /// Separable "valid" filtering of every channel with the outer product of `taps`.
    pub fn filter_valid(&mut self, a: Var, taps: &[f64]) -> Result<Var> {
        let x = as3(&*self.val(a)?, "filter_valid")?;
        let (_, h, w) = x.dim();
        if taps.is_empty() || h < taps.len() || w < taps.len() {
            return Err(Error::shape("filter_valid", format!("{h}x{w} smaller than {} taps", taps.len())));
        }
        let taps = taps.to_vec();
        let out = filter_cols_valid(&filter_rows_valid(&x, &taps), &taps);
        Ok(self.push(
            out.into_dyn(),
            &[a],
            Box::new(move |g, _| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap().to_owned();
                vec![Some(filter_rows_adjoint(&filter_cols_adjoint(&g3, &taps), &taps).into_dyn())]
            }),
        ))
    }
}
