//! The tape and its differentiable operations.

use super::Scalar;
use ndarray::{concatenate, ArrayD, ArrayViewD, Axis, Ix1, Ix2, IxDyn, Slice};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn<F> = Box<dyn for<'a> FnOnce(&ArrayD<F>, &[ArrayD<F>], &mut GradSink<'a, F>)>;

/// Accumulates gradient contributions during the backward sweep.
pub struct GradSink<'a, F: Scalar> {
    grads: &'a mut [Option<ArrayD<F>>],
    requires_grad: &'a [bool],
}

impl<'a, F: Scalar> GradSink<'a, F> {
    pub fn wants(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    pub fn add(&mut self, v: Var, contrib: ArrayD<F>) {
        if !self.requires_grad[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                debug_assert_eq!(g.shape(), contrib.shape());
                *g += &contrib;
            }
            slot => *slot = Some(contrib),
        }
    }
}

/// Gradients produced by one backward sweep.
pub struct Grads<F: Scalar> {
    grads: Vec<Option<ArrayD<F>>>,
}

impl<F: Scalar> Grads<F> {
    /// Gradient of the root with respect to `v`; `None` when nothing flowed
    /// back (e.g. a constant or an unused parameter).
    pub fn get(&self, v: Var) -> Option<&ArrayD<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// A single-use computation graph.
pub struct Tape<F: Scalar> {
    values: Vec<ArrayD<F>>,
    backs: Vec<Option<BackFn<F>>>,
    requires_grad: Vec<bool>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn as2<F: Scalar>(a: &ArrayD<F>) -> ndarray::ArrayView2<'_, F> {
    a.view()
        .into_dimensionality::<Ix2>()
        .expect("expected a 2-d array")
}

/// View an [..., d] array as 2-d with the last axis preserved.
fn rows_view<F: Scalar>(a: &ArrayD<F>) -> ndarray::ArrayView2<'_, F> {
    let d = *a.shape().last().expect("array must have at least one axis");
    let n = a.len() / d.max(1);
    a.view()
        .into_shape_with_order((n, d))
        .expect("value arrays are kept in standard layout")
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            backs: Vec::new(),
            requires_grad: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &ArrayD<F> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub(crate) fn requires_grad_of(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    pub fn scalar_value(&self, v: Var) -> F {
        let a = self.value(v);
        assert!(a.len() == 1, "expected scalar node, got shape {:?}", a.shape());
        *a.iter().next().unwrap()
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<F>,
        requires_grad: bool,
        back: Option<BackFn<F>>,
    ) -> Var {
        debug_assert!(value.is_standard_layout());
        self.values.push(value);
        self.backs.push(if requires_grad { back } else { None });
        self.requires_grad.push(requires_grad);
        Var(self.values.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires_grad[v.0])
    }

    /// Differentiable input (parameters, activations under test).
    pub fn leaf(&mut self, value: ArrayD<F>) -> Var {
        let value = to_standard(value);
        self.push(value, true, None)
    }

    /// Non-differentiable input (data, masks, targets).
    pub fn constant(&mut self, value: ArrayD<F>) -> Var {
        let value = to_standard(value);
        self.push(value, false, None)
    }

    /// Reverse sweep from a scalar root. Gradients of leaves are available
    /// in the returned [`Grads`].
    pub fn backward(&mut self, root: Var) -> Grads<F> {
        assert!(
            self.values[root.0].len() == 1,
            "backward root must be scalar, got shape {:?}",
            self.values[root.0].shape()
        );
        let n = self.values.len();
        let mut grads: Vec<Option<ArrayD<F>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[root.0] = Some(ArrayD::ones(self.values[root.0].raw_dim()));
        for i in (0..=root.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            if let Some(back) = self.backs[i].take() {
                let g = grads[i].take().unwrap();
                let mut sink = GradSink {
                    grads: &mut grads,
                    requires_grad: &self.requires_grad,
                };
                back(&g, &self.values, &mut sink);
            }
        }
        Grads { grads }
    }

    // ---- elementwise binary ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = binary_value(self, a, b, "add", |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, _vals, sink| {
                sink.add(a, g.clone());
                sink.add(b, g.clone());
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = binary_value(self, a, b, "sub", |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, _vals, sink| {
                sink.add(a, g.clone());
                sink.add(b, g.mapv(|x| -x));
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = binary_value(self, a, b, "mul", |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                if sink.wants(a) {
                    sink.add(a, g * &vals[b.0]);
                }
                if sink.wants(b) {
                    sink.add(b, g * &vals[a.0]);
                }
            })),
        )
    }

    // ---- elementwise unary / scalar ----

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -F::one())
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.values[a.0].mapv(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, _vals, sink| {
                sink.add(a, g.mapv(|x| x * c));
            })),
        )
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|x| x * x);
        let rg = self.rg(&[a]);
        let two = F::fl(2.0);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                sink.add(a, g * &vals[a.0].mapv(|x| x * two));
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|x| x.tanh());
        let rg = self.rg(&[a]);
        let out = Var(self.values.len());
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let d = vals[out.0].mapv(|y| F::one() - y * y);
                sink.add(a, g * &d);
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(sigmoid_scalar);
        let rg = self.rg(&[a]);
        let out = Var(self.values.len());
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let d = vals[out.0].mapv(|y| y * (F::one() - y));
                sink.add(a, g * &d);
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(|x| if x > F::zero() { x } else { F::zero() });
        let rg = self.rg(&[a]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let d = vals[a.0].mapv(|x| if x > F::zero() { F::one() } else { F::zero() });
                sink.add(a, g * &d);
            })),
        )
    }

    /// tanh-approximated GELU; the backward pass differentiates the same
    /// approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.values[a.0].mapv(gelu_scalar);
        let rg = self.rg(&[a]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let d = vals[a.0].mapv(gelu_grad_scalar);
                sink.add(a, g * &d);
            })),
        )
    }

    /// Softmax along the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let mut value = rows_view(&self.values[a.0]).to_owned();
        for mut row in value.rows_mut() {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let shape = self.values[a.0].raw_dim();
        let value = value.into_dyn().into_shape_with_order(shape).unwrap();
        let rg = self.rg(&[a]);
        let out = Var(self.values.len());
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let y = rows_view(&vals[out.0]);
                let g2 = rows_view(g);
                let mut dx = g2.to_owned();
                for ((mut drow, yrow), grow) in
                    dx.rows_mut().into_iter().zip(y.rows()).zip(g2.rows())
                {
                    let dot: F = yrow.iter().zip(grow.iter()).map(|(&y, &g)| y * g).sum();
                    drow.zip_mut_with(&yrow, |d, &y| *d = y * (*d - dot));
                }
                sink.add(
                    a,
                    dx.into_dyn()
                        .into_shape_with_order(vals[a.0].raw_dim())
                        .unwrap(),
                );
            })),
        )
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax_last(&mut self, a: Var) -> Var {
        let mut value = rows_view(&self.values[a.0]).to_owned();
        for mut row in value.rows_mut() {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<F>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let shape = self.values[a.0].raw_dim();
        let value = value.into_dyn().into_shape_with_order(shape).unwrap();
        let rg = self.rg(&[a]);
        let out = Var(self.values.len());
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let y = rows_view(&vals[out.0]);
                let g2 = rows_view(g);
                let mut dx = g2.to_owned();
                for (mut drow, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                    let gsum: F = drow.iter().copied().sum();
                    drow.zip_mut_with(&yrow, |d, &y| *d = *d - y.exp() * gsum);
                }
                sink.add(
                    a,
                    dx.into_dyn()
                        .into_shape_with_order(vals[a.0].raw_dim())
                        .unwrap(),
                );
            })),
        )
    }

    /// Normalize each last-axis row to zero mean and unit variance
    /// (no gain/bias; compose with `mul_rowbcast`/`add_rowbcast`).
    pub fn layer_norm_last(&mut self, a: Var, eps: F) -> Var {
        let x = rows_view(&self.values[a.0]);
        let d = x.ncols();
        let df = F::fl(d as f64);
        let mut value = x.to_owned();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in value.rows_mut() {
            let mean = row.sum() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / df;
            let is = F::one() / (var + eps).sqrt();
            inv_std.push(is);
            row.mapv_inplace(|v| (v - mean) * is);
        }
        let shape = self.values[a.0].raw_dim();
        let value = value.into_dyn().into_shape_with_order(shape).unwrap();
        let rg = self.rg(&[a]);
        let out = Var(self.values.len());
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let y = rows_view(&vals[out.0]);
                let g2 = rows_view(g);
                let mut dx = g2.to_owned();
                for (r, (mut drow, yrow)) in
                    dx.rows_mut().into_iter().zip(y.rows()).enumerate()
                {
                    let df = F::fl(drow.len() as f64);
                    let gmean: F = drow.iter().copied().sum::<F>() / df;
                    let gymean: F =
                        drow.iter().zip(yrow.iter()).map(|(&g, &y)| g * y).sum::<F>() / df;
                    let is = inv_std[r];
                    drow.zip_mut_with(&yrow, |d, &y| *d = (*d - gmean - y * gymean) * is);
                }
                sink.add(
                    a,
                    dx.into_dyn()
                        .into_shape_with_order(vals[a.0].raw_dim())
                        .unwrap(),
                );
            })),
        )
    }

    /// Scale each last-axis row to unit L2 norm; rows with norm below `eps`
    /// are divided by `eps` instead.
    pub fn row_l2_normalize(&mut self, a: Var, eps: F) -> Var {
        let x = rows_view(&self.values[a.0]);
        let mut value = x.to_owned();
        let mut norms = Vec::with_capacity(x.nrows());
        for mut row in value.rows_mut() {
            let n = row.iter().map(|&v| v * v).sum::<F>().sqrt();
            norms.push(n);
            let denom = n.max(eps);
            row.mapv_inplace(|v| v / denom);
        }
        let shape = self.values[a.0].raw_dim();
        let value = value.into_dyn().into_shape_with_order(shape).unwrap();
        let rg = self.rg(&[a]);
        let out = Var(self.values.len());
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let y = rows_view(&vals[out.0]);
                let g2 = rows_view(g);
                let mut dx = g2.to_owned();
                for (r, (mut drow, yrow)) in
                    dx.rows_mut().into_iter().zip(y.rows()).enumerate()
                {
                    let n = norms[r];
                    if n > eps {
                        let dot: F =
                            drow.iter().zip(yrow.iter()).map(|(&g, &y)| g * y).sum();
                        drow.zip_mut_with(&yrow, |d, &y| *d = (*d - y * dot) / n);
                    } else {
                        drow.mapv_inplace(|d| d / eps);
                    }
                }
                sink.add(
                    a,
                    dx.into_dyn()
                        .into_shape_with_order(vals[a.0].raw_dim())
                        .unwrap(),
                );
            })),
        )
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, training: bool, rng: &mut ChaCha8Rng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        if !training || p == 0.0 {
            return a;
        }
        let keep = F::fl(1.0 / (1.0 - p));
        let mask = self.values[a.0].mapv(|_| {
            if rng.random::<f64>() < p {
                F::zero()
            } else {
                keep
            }
        });
        self.mul_constarr(a, &mask)
    }

    // ---- structural ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self.values[a.0]
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|_| {
                panic!(
                    "reshape: cannot view shape {:?} as {:?}",
                    self.values[a.0].shape(),
                    shape
                )
            });
        let rg = self.rg(&[a]);
        let parent_shape: Vec<usize> = self.values[a.0].shape().to_vec();
        self.push(
            value,
            rg,
            Some(Box::new(move |g, _vals, sink| {
                sink.add(
                    a,
                    g.clone().into_shape_with_order(IxDyn(&parent_shape)).unwrap(),
                );
            })),
        )
    }

    pub fn transpose2d(&mut self, a: Var) -> Var {
        let value = to_standard(as2(&self.values[a.0]).t().to_owned().into_dyn());
        let rg = self.rg(&[a]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, _vals, sink| {
                sink.add(a, to_standard(as2(g).t().to_owned().into_dyn()));
            })),
        )
    }

    pub fn slice_axis_op(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Var {
        let value = to_standard(
            self.values[a.0]
                .slice_axis(Axis(axis), Slice::from(start..end))
                .to_owned(),
        );
        let rg = self.rg(&[a]);
        let parent_shape: Vec<usize> = self.values[a.0].shape().to_vec();
        self.push(
            value,
            rg,
            Some(Box::new(move |g, _vals, sink| {
                let mut z = ArrayD::zeros(IxDyn(&parent_shape));
                z.slice_axis_mut(Axis(axis), Slice::from(start..end))
                    .assign(g);
                sink.add(a, z);
            })),
        )
    }

    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Var {
        let views: Vec<ArrayViewD<'_, F>> =
            parts.iter().map(|v| self.values[v.0].view()).collect();
        let value = to_standard(concatenate(Axis(axis), &views).expect("concat shape mismatch"));
        let rg = self.rg(parts);
        let parts: Vec<Var> = parts.to_vec();
        let sizes: Vec<usize> = parts
            .iter()
            .map(|v| self.values[v.0].shape()[axis])
            .collect();
        self.push(
            value,
            rg,
            Some(Box::new(move |g, _vals, sink| {
                let mut offset = 0;
                for (v, sz) in parts.iter().zip(&sizes) {
                    let piece = g
                        .slice_axis(Axis(axis), Slice::from(offset..offset + sz))
                        .to_owned();
                    sink.add(*v, to_standard(piece));
                    offset += sz;
                }
            })),
        )
    }

    /// Shift along axis 0: `y[t] = x[t + offset]`, zero outside the range.
    pub fn shift_time(&mut self, a: Var, offset: isize) -> Var {
        let x = &self.values[a.0];
        let t = x.shape()[0] as isize;
        let mut value = ArrayD::zeros(x.raw_dim());
        let (dst_lo, src_lo, len) = shift_ranges(t, offset);
        if len > 0 {
            value
                .slice_axis_mut(Axis(0), Slice::from(dst_lo..dst_lo + len))
                .assign(&x.slice_axis(Axis(0), Slice::from(src_lo..src_lo + len)));
        }
        let rg = self.rg(&[a]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let mut z = ArrayD::zeros(vals[a.0].raw_dim());
                let (dst_lo, src_lo, len) = shift_ranges(t, offset);
                if len > 0 {
                    // the forward read from src becomes a write in backward
                    z.slice_axis_mut(Axis(0), Slice::from(src_lo..src_lo + len))
                        .assign(&g.slice_axis(Axis(0), Slice::from(dst_lo..dst_lo + len)));
                }
                sink.add(a, z);
            })),
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        assert!(
            av.ndim() == 2 && bv.ndim() == 2 && av.shape()[1] == bv.shape()[0],
            "matmul: shape mismatch between {:?} and {:?}",
            av.shape(),
            bv.shape()
        );
        let value = as2(av).dot(&as2(bv)).into_dyn();
        let rg = self.rg(&[a, b]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let g2 = as2(g);
                if sink.wants(a) {
                    sink.add(a, g2.dot(&as2(&vals[b.0]).t()).into_dyn());
                }
                if sink.wants(b) {
                    sink.add(b, as2(&vals[a.0]).t().dot(&g2).into_dyn());
                }
            })),
        )
    }

    /// `x` of shape [..., d_in] times `w` [d_in, d_out] plus bias `b` [d_out].
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let d_in = *xv.shape().last().unwrap();
        assert!(
            wv.ndim() == 2 && wv.shape()[0] == d_in,
            "affine: shape mismatch between input {:?} and weight {:?}",
            xv.shape(),
            wv.shape()
        );
        let d_out = wv.shape()[1];
        let mut out_shape: Vec<usize> = xv.shape().to_vec();
        *out_shape.last_mut().unwrap() = d_out;

        let x2 = rows_view(xv);
        let mut y2 = x2.dot(&as2(wv));
        let bv = self.values[b.0]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("affine bias must be 1-d");
        y2 += &bv;
        let value = y2.into_dyn().into_shape_with_order(IxDyn(&out_shape)).unwrap();
        let rg = self.rg(&[x, w, b]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let g2 = rows_view(g);
                if sink.wants(x) {
                    let dx = g2.dot(&as2(&vals[w.0]).t());
                    sink.add(
                        x,
                        dx.into_dyn()
                            .into_shape_with_order(vals[x.0].raw_dim())
                            .unwrap(),
                    );
                }
                if sink.wants(w) {
                    sink.add(w, rows_view(&vals[x.0]).t().dot(&g2).into_dyn());
                }
                if sink.wants(b) {
                    sink.add(b, g2.sum_axis(Axis(0)).into_dyn());
                }
            })),
        )
    }

    /// Broadcast-add a [d] vector along the last axis of `x`.
    pub fn add_rowbcast(&mut self, x: Var, b: Var) -> Var {
        let xv = &self.values[x.0];
        let bv = &self.values[b.0];
        assert!(
            bv.ndim() == 1 && bv.shape()[0] == *xv.shape().last().unwrap(),
            "add_rowbcast: shape mismatch between {:?} and {:?}",
            xv.shape(),
            bv.shape()
        );
        let shape = xv.raw_dim();
        let mut y2 = rows_view(xv).to_owned();
        y2 += &bv.view().into_dimensionality::<Ix1>().unwrap();
        let value = y2.into_dyn().into_shape_with_order(shape).unwrap();
        let rg = self.rg(&[x, b]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, _vals, sink| {
                sink.add(x, g.clone());
                if sink.wants(b) {
                    sink.add(b, rows_view(g).sum_axis(Axis(0)).into_dyn());
                }
            })),
        )
    }

    /// Broadcast-multiply a [d] vector along the last axis of `x`.
    pub fn mul_rowbcast(&mut self, x: Var, w: Var) -> Var {
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        assert!(
            wv.ndim() == 1 && wv.shape()[0] == *xv.shape().last().unwrap(),
            "mul_rowbcast: shape mismatch between {:?} and {:?}",
            xv.shape(),
            wv.shape()
        );
        let shape = xv.raw_dim();
        let mut y2 = rows_view(xv).to_owned();
        y2 *= &wv.view().into_dimensionality::<Ix1>().unwrap();
        let value = y2.into_dyn().into_shape_with_order(shape).unwrap();
        let rg = self.rg(&[x, w]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let w1 = vals[w.0].view().into_dimensionality::<Ix1>().unwrap();
                if sink.wants(x) {
                    let mut dx = rows_view(g).to_owned();
                    dx *= &w1;
                    sink.add(
                        x,
                        dx.into_dyn()
                            .into_shape_with_order(vals[x.0].raw_dim())
                            .unwrap(),
                    );
                }
                if sink.wants(w) {
                    let prod = &rows_view(g).to_owned() * &rows_view(&vals[x.0]);
                    sink.add(w, prod.sum_axis(Axis(0)).into_dyn());
                }
            })),
        )
    }

    // ---- constants mixed in ----

    pub fn add_constarr(&mut self, a: Var, arr: &ArrayD<F>) -> Var {
        let value = &self.values[a.0] + arr;
        let rg = self.rg(&[a]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, _vals, sink| {
                sink.add(a, g.clone());
            })),
        )
    }

    pub fn mul_constarr(&mut self, a: Var, arr: &ArrayD<F>) -> Var {
        let value = &self.values[a.0] * arr;
        let rg = self.rg(&[a]);
        let arr = arr.clone();
        self.push(
            value,
            rg,
            Some(Box::new(move |g, _vals, sink| {
                sink.add(a, g * &arr);
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = ArrayD::from_elem(IxDyn(&[]), self.values[a.0].sum());
        let rg = self.rg(&[a]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let gs = *g.iter().next().unwrap();
                sink.add(a, ArrayD::from_elem(vals[a.0].raw_dim(), gs));
            })),
        )
    }

    pub fn sum_axis_op(&mut self, a: Var, axis: usize) -> Var {
        let value = to_standard(self.values[a.0].sum_axis(Axis(axis)));
        let rg = self.rg(&[a]);
        self.push(
            value,
            rg,
            Some(Box::new(move |g, vals, sink| {
                let shape = vals[a.0].raw_dim();
                let expanded = g
                    .view()
                    .insert_axis(Axis(axis))
                    .broadcast(shape.clone())
                    .unwrap()
                    .to_owned();
                sink.add(a, to_standard(expanded));
            })),
        )
    }
}

fn shift_ranges(t: isize, offset: isize) -> (usize, usize, usize) {
    // y[dst] = x[dst + offset] for dst in [max(0,-offset), min(t, t-offset))
    let dst_lo = (-offset).max(0);
    let dst_hi = (t - offset).min(t);
    if dst_hi <= dst_lo {
        return (0, 0, 0);
    }
    let src_lo = dst_lo + offset;
    ((dst_lo) as usize, (src_lo) as usize, (dst_hi - dst_lo) as usize)
}

fn binary_value<F: Scalar>(
    tape: &Tape<F>,
    a: Var,
    b: Var,
    op: &str,
    f: impl Fn(F, F) -> F,
) -> ArrayD<F> {
    let (av, bv) = (&tape.values[a.0], &tape.values[b.0]);
    assert!(
        av.shape() == bv.shape(),
        "{op}: shape mismatch between {:?} and {:?}",
        av.shape(),
        bv.shape()
    );
    let mut out = av.clone();
    out.zip_mut_with(bv, |x, y| *x = f(*x, *y));
    out
}

fn sigmoid_scalar<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

const GELU_COEFF: f64 = 0.044715;

fn gelu_scalar<F: Scalar>(x: F) -> F {
    let half = F::fl(0.5);
    let k = F::fl((2.0 / std::f64::consts::PI).sqrt());
    let c = F::fl(GELU_COEFF);
    let u = k * (x + c * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_grad_scalar<F: Scalar>(x: F) -> F {
    let half = F::fl(0.5);
    let three = F::fl(3.0);
    let k = F::fl((2.0 / std::f64::consts::PI).sqrt());
    let c = F::fl(GELU_COEFF);
    let u = k * (x + c * x * x * x);
    let t = u.tanh();
    let du = k * (F::one() + three * c * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}

pub(crate) fn to_standard<F: Scalar, D: ndarray::Dimension>(
    a: ndarray::Array<F, D>,
) -> ArrayD<F> {
    let a = a.into_dyn();
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().to_owned()
    }
}
