//! Dense tensors, named parameter storage with gradient accumulators, the
//! affine and elementwise primitives, and the RMSProp update.
//!
//! Everything runs in `f64`. Gradients accumulate (`+=`) into the
//! [`ParamSet`] and are only cleared by [`rmsprop_step`] or
//! [`ParamSet::zero_grads`], so a whole session can contribute to one update.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{dim_err, Error, Result};

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting shape/length disagreement and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(dim_err("tensor data length", expected, data.len()));
        }
        let t = Tensor { shape, data };
        t.check_finite("tensor construction")?;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a `rows × cols` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(dim_err(&format!("row {i} width"), cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn uniform<R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        Tensor {
            shape: shape.to_vec(),
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (a vector is one row).
    pub fn n_rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn n_cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_cols().max(1))
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("{what} (flat index {i})"))),
            None => Ok(()),
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// One named trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Param {
            name,
            value,
            grad,
            trainable: true,
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].grad
    }

    /// Borrow a parameter's value and its gradient buffer at the same time.
    pub fn value_and_grad(&mut self, id: ParamId) -> (&Tensor, &mut Tensor) {
        let p = &mut self.entries[id.0];
        (&p.value, &mut p.grad)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|p| p.name.clone()).collect()
    }

    /// Total number of scalar parameters (runtime census).
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Freezes or unfreezes every entry whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in self.entries.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    /// ‖θ‖² over trainable entries.
    pub fn trainable_sum_squares(&self) -> f64 {
        self.entries
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.sum_squares())
            .sum()
    }

    /// Accumulates the gradient of `lambda·‖θ‖²` (i.e. `2·lambda·θ`) into trainable grads.
    pub fn add_l2_grad(&mut self, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for p in self.entries.iter_mut().filter(|p| p.trainable) {
            for (g, v) in p.grad.data.iter_mut().zip(&p.value.data) {
                *g += 2.0 * lambda * v;
            }
        }
    }

    /// Clamps every trainable gradient component into `[-limit, limit]`.
    pub fn clip_grads(&mut self, limit: f64) {
        for p in self.entries.iter_mut().filter(|p| p.trainable) {
            for g in &mut p.grad.data {
                *g = g.clamp(-limit, limit);
            }
        }
    }

    /// Rounds every value to the nearest `f32`, the checkpoint storage precision.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.entries {
            for v in &mut p.value.data {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Copies values of `src` entries into same-named entries here.
    pub fn copy_values_from(&mut self, src: &ParamSet, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for p in src.entries.iter().filter(|p| p.name.starts_with(prefix)) {
            let id = self
                .id(&p.name)
                .ok_or_else(|| Error::Config(format!("target lacks parameter `{}`", p.name)))?;
            let dst = &mut self.entries[id.0].value;
            if dst.shape != p.value.shape {
                return Err(Error::Dimension(format!(
                    "parameter `{}`: shape {:?} vs {:?}",
                    p.name, dst.shape, p.value.shape
                )));
            }
            dst.data.copy_from_slice(&p.value.data);
            copied += 1;
        }
        Ok(copied)
    }
}

/// Per-parameter running mean of squared gradients.
#[derive(Clone, Debug)]
pub struct RmsPropState {
    names: Vec<String>,
    mean_square: Vec<Tensor>,
    pub decay: f64,
    pub epsilon: f64,
}

impl RmsPropState {
    pub const DEFAULT_DECAY: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(params: &ParamSet, decay: f64, epsilon: f64) -> Self {
        RmsPropState {
            names: params.names(),
            mean_square: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            decay,
            epsilon,
        }
    }

    pub fn with_defaults(params: &ParamSet) -> Self {
        Self::new(params, Self::DEFAULT_DECAY, Self::DEFAULT_EPSILON)
    }

    pub fn mean_square(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.mean_square[i])
    }
}

/// One RMSProp update over all trainable parameters, then clears every gradient.
///
/// `ms ← decay·ms + (1−decay)·g²`, `θ ← θ − lr·g/(√ms + ε)`.
pub fn rmsprop_step(params: &mut ParamSet, state: &mut RmsPropState, lr: f64) -> Result<()> {
    if state.names.len() != params.len()
        || state.names.iter().zip(params.iter()).any(|(n, p)| *n != p.name)
    {
        return Err(Error::Config(
            "optimizer state does not match the parameter set".into(),
        ));
    }
    for p in params.iter() {
        if p.trainable && p.grad.data.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(p.name.clone()));
        }
    }
    let (decay, eps) = (state.decay, state.epsilon);
    for (p, ms) in params.iter_mut().zip(state.mean_square.iter_mut()) {
        if p.trainable {
            for ((v, g), m) in p
                .value
                .data
                .iter_mut()
                .zip(&p.grad.data)
                .zip(ms.data.iter_mut())
            {
                *m = decay * *m + (1.0 - decay) * g * g;
                *v -= lr * g / (m.sqrt() + eps);
            }
        }
        p.grad.data.iter_mut().for_each(|g| *g = 0.0);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Slice kernels shared by the layers.

/// `out += W·x` for row-major `W` of shape `rows × cols`.
#[inline]
pub(crate) fn matvec_add(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (o, wr) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ·g`.
#[inline]
pub(crate) fn matvec_t_add(w: &[f64], cols: usize, g: &[f64], out: &mut [f64]) {
    for (gi, wr) in g.iter().zip(w.chunks_exact(cols)) {
        if *gi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(wr) {
            *o += gi * a;
        }
    }
}

/// `gw += g ⊗ x`.
#[inline]
pub(crate) fn outer_add(gw: &mut [f64], cols: usize, g: &[f64], x: &[f64]) {
    for (gi, row) in g.iter().zip(gw.chunks_exact_mut(cols)) {
        if *gi == 0.0 {
            continue;
        }
        for (r, xv) in row.iter_mut().zip(x) {
            *r += gi * xv;
        }
    }
}

#[inline]
pub(crate) fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Tensor-level operations.

fn check_linear(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<(usize, usize)> {
    if w.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "weight must be 2-d, got shape {:?}",
            w.shape()
        )));
    }
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    if b.len() != rows {
        return Err(dim_err("bias length", rows, b.len()));
    }
    if x.len() != cols {
        return Err(dim_err("input length", cols, x.len()));
    }
    Ok((rows, cols))
}

/// `y = W·x + b`.
pub fn linear_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (rows, cols) = check_linear(w, b, x)?;
    let mut y = b.data().to_vec();
    matvec_add(w.data(), rows, cols, x.data(), &mut y);
    Ok(Tensor::vector(y))
}

/// Gradients of the affine map: `(grad_W, grad_b, grad_x)`.
pub fn linear_backward(
    w: &Tensor,
    b: &Tensor,
    x: &Tensor,
    grad_y: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (rows, cols) = check_linear(w, b, x)?;
    if grad_y.len() != rows {
        return Err(dim_err("upstream gradient length", rows, grad_y.len()));
    }
    let mut gw = Tensor::zeros(&[rows, cols]);
    outer_add(gw.data_mut(), cols, grad_y.data(), x.data());
    let mut gx = vec![0.0; cols];
    matvec_t_add(w.data(), cols, grad_y.data(), &mut gx);
    Ok((gw, Tensor::vector(grad_y.data().to_vec()), Tensor::vector(gx)))
}

/// An affine layer whose weights live in a [`ParamSet`].
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::uniform(&[out_dim, in_dim], scale, rng),
        )?;
        let bias = params.add(format!("{name}.bias"), Tensor::uniform(&[out_dim], scale, rng))?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Vec<f64> {
        let mut y = params.value(self.bias).data().to_vec();
        matvec_add(
            params.value(self.weight).data(),
            self.out_dim,
            self.in_dim,
            x,
            &mut y,
        );
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&self, params: &mut ParamSet, x: &[f64], grad_y: &[f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_dim];
        {
            let (w, gw) = params.value_and_grad(self.weight);
            matvec_t_add(w.data(), self.in_dim, grad_y, &mut gx);
            outer_add(gw.data_mut(), self.in_dim, grad_y, x);
        }
        add_into(params.grad_mut(self.bias).data_mut(), grad_y);
        gx
    }
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    map(x, sigmoid)
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    map(x, f64::tanh)
}

/// `grad · σ(x)(1−σ(x))`, elementwise.
pub fn sigmoid_backward(x: &Tensor, grad: &Tensor) -> Result<Tensor> {
    zip_map(x, grad, |xv, g| {
        let s = sigmoid(xv);
        g * s * (1.0 - s)
    })
}

/// `grad · (1 − tanh²(x))`, elementwise.
pub fn tanh_backward(x: &Tensor, grad: &Tensor) -> Result<Tensor> {
    zip_map(x, grad, |xv, g| {
        let t = xv.tanh();
        g * (1.0 - t * t)
    })
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip_map(x: &Tensor, g: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if x.shape != g.shape {
        return Err(Error::Dimension(format!(
            "activation backward: {:?} vs {:?}",
            x.shape, g.shape
        )));
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().zip(&g.data).map(|(&a, &b)| f(a, b)).collect(),
    })
}

/// Softmax of `logits − max(logits)`.
pub fn shifted_softmax(logits: &[f64]) -> Vec<f64> {
    let shift = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - shift).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(w: &Tensor, x: &Tensor, b: &Tensor) -> Vec<f64> {
        let (r, c) = (w.shape()[0], w.shape()[1]);
        let mut out = vec![0.0; r];
        for i in 0..r {
            let mut acc = 0.0;
            for j in 0..c {
                acc += w.data()[i * c + j] * x.data()[j];
            }
            out[i] = acc + b.data()[i];
        }
        out
    }

    #[test]
    fn linear_identity_and_hand_cases() {
        let eye = Tensor::matrix(2, 2, vec![1., 0., 0., 1.]).unwrap();
        let y = linear_forward(&eye, &Tensor::zeros(&[2]), &Tensor::vector(vec![3., -1.])).unwrap();
        assert_eq!(y.data(), &[3., -1.]);

        let w = Tensor::matrix(2, 2, vec![1., 2., 0., 1.]).unwrap();
        let y = linear_forward(&w, &Tensor::vector(vec![1., 1.]), &Tensor::vector(vec![1., 1.])).unwrap();
        assert_eq!(y.data(), &[4., 2.]);
    }

    #[test]
    fn linear_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Tensor::uniform(&[5, 3], 1.0, &mut rng);
        let b = Tensor::uniform(&[5], 1.0, &mut rng);
        let x = Tensor::uniform(&[3], 1.0, &mut rng);
        let y = linear_forward(&w, &b, &x).unwrap();
        for (a, e) in y.data().iter().zip(naive_matmul(&w, &x, &b)) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_shape_errors() {
        let w = Tensor::zeros(&[2, 3]);
        assert!(linear_forward(&w, &Tensor::zeros(&[2]), &Tensor::zeros(&[2])).is_err());
        assert!(linear_forward(&w, &Tensor::zeros(&[3]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn linear_backward_hand_cases() {
        let w = Tensor::vector(vec![2.0]);
        let w = Tensor::matrix(1, 1, w.into_data()).unwrap();
        let (gw, gb, gx) = linear_backward(
            &w,
            &Tensor::zeros(&[1]),
            &Tensor::vector(vec![3.0]),
            &Tensor::vector(vec![1.0]),
        )
        .unwrap();
        assert_eq!((gw.data()[0], gb.data()[0], gx.data()[0]), (3.0, 1.0, 2.0));

        let w = Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let (gw, gb, gx) = linear_backward(
            &w,
            &Tensor::zeros(&[2]),
            &Tensor::vector(vec![5., 6.]),
            &Tensor::zeros(&[2]),
        )
        .unwrap();
        assert!(gw.data().iter().chain(gb.data()).chain(gx.data()).all(|v| *v == 0.0));
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = Tensor::uniform(&[4, 6], 1.0, &mut rng);
        let b = Tensor::uniform(&[4], 1.0, &mut rng);
        let x = Tensor::uniform(&[6], 1.0, &mut rng);
        let gy = Tensor::uniform(&[4], 1.0, &mut rng);
        // scalar objective: gy · (W x + b)
        let obj = |w: &Tensor, b: &Tensor, x: &Tensor| -> f64 {
            linear_forward(w, b, x)
                .unwrap()
                .data()
                .iter()
                .zip(gy.data())
                .map(|(a, g)| a * g)
                .sum()
        };
        let (gw, gb, gx) = linear_backward(&w, &b, &x, &gy).unwrap();
        let h = 1e-5;
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (obj(&p, &b, &x) - obj(&m, &b, &x)) / (2.0 * h);
            assert!(rel_err(gw.data()[i], fd) < 1e-6);
        }
        for i in 0..b.len() {
            let (mut p, mut m) = (b.clone(), b.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (obj(&w, &p, &x) - obj(&w, &m, &x)) / (2.0 * h);
            assert!(rel_err(gb.data()[i], fd) < 1e-6);
        }
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (obj(&w, &b, &p) - obj(&w, &b, &m)) / (2.0 * h);
            assert!(rel_err(gx.data()[i], fd) < 1e-6);
        }
    }

    #[test]
    fn activations_at_zero() {
        let z = Tensor::zeros(&[1]);
        assert_eq!(sigmoid_forward(&z).data(), &[0.5]);
        assert_eq!(tanh_forward(&z).data(), &[0.0]);
        let g = sigmoid_backward(&z, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(g.data(), &[0.25]);
    }

    #[test]
    fn activation_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(&[12], 3.0, &mut rng);
        let ones = Tensor::vector(vec![1.0; 12]);
        let gs = sigmoid_backward(&x, &ones).unwrap();
        let gt = tanh_backward(&x, &ones).unwrap();
        let h = 1e-5;
        for i in 0..x.len() {
            let v = x.data()[i];
            let fs = (sigmoid(v + h) - sigmoid(v - h)) / (2.0 * h);
            let ft = ((v + h).tanh() - (v - h).tanh()) / (2.0 * h);
            assert!(rel_err(gs.data()[i], fs) < 1e-6);
            assert!(rel_err(gt.data()[i], ft) < 1e-6);
        }
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
    }

    #[test]
    fn tensor_rejects_non_finite_and_bad_length() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    fn scalar_set(v: f64, g: f64) -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("theta", Tensor::vector(vec![v])).unwrap();
        ps.grad_mut(id).data_mut()[0] = g;
        (ps, id)
    }

    #[test]
    fn rmsprop_single_step_hand_value() {
        let (mut ps, id) = scalar_set(1.0, 1.0);
        let mut st = RmsPropState::new(&ps, 0.9, 1e-8);
        rmsprop_step(&mut ps, &mut st, 0.1).unwrap();
        let ms = st.mean_square("theta").unwrap().data()[0];
        assert!((ms - 0.1).abs() < 1e-15);
        let expected = 1.0 - 0.1 / (0.1f64.sqrt() + 1e-8);
        assert!((ps.value(id).data()[0] - expected).abs() < 1e-12);
        assert!((ps.value(id).data()[0] - 0.68377).abs() < 1e-5);
        assert_eq!(ps.grad(id).data()[0], 0.0);
    }

    #[test]
    fn rmsprop_two_step_scripted_trace() {
        // scripted oracle: same gradient g=0.5 twice from θ=2, decay 0.9, lr 0.01
        let (mut ps, id) = scalar_set(2.0, 0.5);
        let mut st = RmsPropState::new(&ps, 0.9, 1e-8);
        rmsprop_step(&mut ps, &mut st, 0.01).unwrap();
        ps.grad_mut(id).data_mut()[0] = 0.5;
        rmsprop_step(&mut ps, &mut st, 0.01).unwrap();
        let ms1 = 0.1 * 0.25;
        let t1 = 2.0 - 0.01 * 0.5 / (f64::sqrt(ms1) + 1e-8);
        let ms2 = 0.9 * ms1 + 0.1 * 0.25;
        let t2 = t1 - 0.01 * 0.5 / (f64::sqrt(ms2) + 1e-8);
        assert!((ps.value(id).data()[0] - t2).abs() < 1e-14);
        assert!((st.mean_square("theta").unwrap().data()[0] - ms2).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_zero_gradient_decays_state_only() {
        let (mut ps, id) = scalar_set(1.5, 1.0);
        let mut st = RmsPropState::new(&ps, 0.9, 1e-8);
        rmsprop_step(&mut ps, &mut st, 0.1).unwrap();
        let before = ps.value(id).data()[0];
        let ms_before = st.mean_square("theta").unwrap().data()[0];
        rmsprop_step(&mut ps, &mut st, 0.1).unwrap();
        assert_eq!(ps.value(id).data()[0], before);
        assert!((st.mean_square("theta").unwrap().data()[0] - 0.9 * ms_before).abs() < 1e-18);
    }

    #[test]
    fn rmsprop_rejects_non_finite_gradient() {
        let (mut ps, _) = scalar_set(1.0, f64::INFINITY);
        let mut st = RmsPropState::with_defaults(&ps);
        match rmsprop_step(&mut ps, &mut st, 0.1) {
            Err(Error::Divergence(name)) => assert_eq!(name, "theta"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rmsprop_skips_frozen_entries() {
        let (mut ps, id) = scalar_set(1.0, 1.0);
        ps.set_trainable_prefix("theta", false);
        let mut st = RmsPropState::with_defaults(&ps);
        rmsprop_step(&mut ps, &mut st, 0.1).unwrap();
        assert_eq!(ps.value(id).data()[0], 1.0);
        assert_eq!(ps.grad(id).data()[0], 0.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::new();
        ps.add("a", Tensor::zeros(&[1])).unwrap();
        assert!(ps.add("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn softmax_shift_guard() {
        let o = shifted_softmax(&[1000.0, 1000.0, 1000.0]);
        assert!(o.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let o = shifted_softmax(&[2f64.ln(), 0.0]);
        assert!((o[0] - 2.0 / 3.0).abs() < 1e-15 && (o[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn rmsprop_lr_zero_is_identity(vals in proptest::collection::vec(-5.0f64..5.0, 1..20),
                                       grads in proptest::collection::vec(-5.0f64..5.0, 20)) {
            let mut ps = ParamSet::new();
            let id = ps.add("w", Tensor::vector(vals.clone())).unwrap();
            for (g, s) in ps.grad_mut(id).data_mut().iter_mut().zip(&grads) {
                *g = *s;
            }
            let mut st = RmsPropState::with_defaults(&ps);
            rmsprop_step(&mut ps, &mut st, 0.0).unwrap();
            proptest::prop_assert_eq!(ps.value(id).data(), &vals[..]);
        }

        #[test]
        fn linear_backward_gradient_check(rows in 1usize..20, cols in 1usize..20, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = Tensor::uniform(&[rows, cols], 1.0, &mut rng);
            let b = Tensor::uniform(&[rows], 1.0, &mut rng);
            let x = Tensor::uniform(&[cols], 1.0, &mut rng);
            let gy = Tensor::uniform(&[rows], 1.0, &mut rng);
            let (gw, _, gx) = linear_backward(&w, &b, &x, &gy).unwrap();
            let obj = |w: &Tensor, x: &Tensor| -> f64 {
                linear_forward(w, &b, x).unwrap().data().iter().zip(gy.data()).map(|(a, g)| a * g).sum()
            };
            let h = 1e-5;
            let i = (seed as usize) % w.len();
            let (mut p, mut m) = (w.clone(), w.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (obj(&p, &x) - obj(&m, &x)) / (2.0 * h);
            proptest::prop_assert!(rel_err(gw.data()[i], fd) < 1e-4);
            let j = (seed as usize) % x.len();
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[j] += h;
            m.data_mut()[j] -= h;
            let fd = (obj(&w, &p) - obj(&w, &m)) / (2.0 * h);
            proptest::prop_assert!(rel_err(gx.data()[j], fd) < 1e-4);
        }
    }
}
