//! LSTM memory cell and variable-length sequence processing with
//! backpropagation through time.
//!
//! ```text
//! i_t = σ(W_xi x_t + W_hi h_{t-1} + b_xi + b_hi)
//! f_t = σ(W_xf x_t + W_hf h_{t-1} + b_xf + b_hf)
//! o_t = σ(W_xo x_t + W_ho h_{t-1} + b_xo + b_ho)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ act(W_xc x_t + W_hc h_{t-1} + b_xc + b_hc)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! `act` is the sigmoid by default ([`CellCandidate::Sigmoid`]); the
//! conventional `tanh` is available as an option.
//!
//! Cells are created on demand as a sequence is unrolled and every cell reads
//! the same [`LstmParams`], so the parameter count never depends on length.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{matvec_add, matvec_t_add, outer_add, sigmoid, ParamId, ParamSet, Tensor};

/// Uniform init half-width for all recurrent and affine weights.
pub const INIT_SCALE: f64 = 0.05;

const GATE_NAMES: [&str; 4] = ["i", "f", "o", "c"];
const I: usize = 0;
const F: usize = 1;
const O: usize = 2;
const C: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellCandidate {
    #[default]
    Sigmoid,
    Tanh,
}

impl CellCandidate {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            CellCandidate::Sigmoid => sigmoid(x),
            CellCandidate::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            CellCandidate::Sigmoid => y * (1.0 - y),
            CellCandidate::Tanh => 1.0 - y * y,
        }
    }
}

impl std::str::FromStr for CellCandidate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(CellCandidate::Sigmoid),
            "tanh" => Ok(CellCandidate::Tanh),
            _ => Err(Error::Config(format!("unknown cell candidate `{s}`"))),
        }
    }
}

/// Handles to the sixteen tensors of one LSTM inside a [`ParamSet`]:
/// per gate an input matrix, a recurrent matrix and two bias vectors.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub candidate: CellCandidate,
    w_x: [ParamId; 4],
    w_h: [ParamId; 4],
    b_x: [ParamId; 4],
    b_h: [ParamId; 4],
}

/// Recurrent state carried between cells.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Output of one cell plus the gate activations backward needs.
#[derive(Clone, Debug)]
pub struct LstmStep {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub candidate: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmStep {
    pub fn state(&self) -> LstmState {
        LstmState {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }
}

/// Everything retained by [`LstmParams::sequence_forward`] for BPTT.
#[derive(Clone, Debug, Default)]
pub struct SequenceCache {
    inputs: Vec<Vec<f64>>,
    initial: Option<LstmState>,
    steps: Vec<LstmStep>,
}

impl SequenceCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[LstmStep] {
        &self.steps
    }

    pub fn hidden_states(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.h.as_slice())
    }

    pub fn last_h(&self) -> &[f64] {
        &self.steps.last().expect("non-empty sequence cache").h
    }
}

impl LstmParams {
    /// Parameters of one LSTM: `4·(in·h + h·h + 2h)`.
    pub const fn parameter_count(input: usize, hidden: usize) -> usize {
        4 * (input * hidden + hidden * hidden + 2 * hidden)
    }

    /// Allocates and initializes the LSTM's tensors under `prefix`.
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        candidate: CellCandidate,
        rng: &mut R,
    ) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::Config(format!(
                "lstm `{prefix}` needs positive sizes, got input {input_size} hidden {hidden_size}"
            )));
        }
        let mut reg = |kind: &str, g: usize, shape: &[usize], rng: &mut R| {
            params.add(
                format!("{prefix}.{kind}_{}", GATE_NAMES[g]),
                Tensor::uniform(shape, INIT_SCALE, rng),
            )
        };
        let mut w_x = Vec::with_capacity(4);
        let mut w_h = Vec::with_capacity(4);
        let mut b_x = Vec::with_capacity(4);
        let mut b_h = Vec::with_capacity(4);
        for g in 0..4 {
            w_x.push(reg("w_x", g, &[hidden_size, input_size], rng)?);
            w_h.push(reg("w_h", g, &[hidden_size, hidden_size], rng)?);
            b_x.push(reg("b_x", g, &[hidden_size], rng)?);
            b_h.push(reg("b_h", g, &[hidden_size], rng)?);
        }
        let arr = |v: Vec<ParamId>| -> [ParamId; 4] { v.try_into().expect("four gates") };
        Ok(LstmParams {
            input_size,
            hidden_size,
            candidate,
            w_x: arr(w_x),
            w_h: arr(w_h),
            b_x: arr(b_x),
            b_h: arr(b_h),
        })
    }

    /// Re-binds handles to an existing parameter set laid out by [`register`](Self::register).
    pub fn bind(
        params: &ParamSet,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        candidate: CellCandidate,
    ) -> Result<Self> {
        let find = |kind: &str, g: usize, shape: &[usize]| -> Result<ParamId> {
            let name = format!("{prefix}.{kind}_{}", GATE_NAMES[g]);
            let id = params
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if params.value(id).shape() != shape {
                return Err(Error::Dimension(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    params.value(id).shape()
                )));
            }
            Ok(id)
        };
        let collect = |kind: &str, shape: &[usize]| -> Result<[ParamId; 4]> {
            let ids = (0..4)
                .map(|g| find(kind, g, shape))
                .collect::<Result<Vec<_>>>()?;
            Ok(ids.try_into().expect("four gates"))
        };
        Ok(LstmParams {
            input_size,
            hidden_size,
            candidate,
            w_x: collect("w_x", &[hidden_size, input_size])?,
            w_h: collect("w_h", &[hidden_size, hidden_size])?,
            b_x: collect("b_x", &[hidden_size])?,
            b_h: collect("b_h", &[hidden_size])?,
        })
    }

    pub fn tensor_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.w_x
            .iter()
            .chain(&self.w_h)
            .chain(&self.b_x)
            .chain(&self.b_h)
            .copied()
    }

    /// Sets both bias vectors of one gate (`"i"`, `"f"`, `"o"` or `"c"`) to `value`.
    pub fn set_gate_bias(&self, params: &mut ParamSet, gate: &str, value: f64) -> Result<()> {
        let g = GATE_NAMES
            .iter()
            .position(|n| *n == gate)
            .ok_or_else(|| Error::Config(format!("unknown gate `{gate}`")))?;
        for id in [self.b_x[g], self.b_h[g]] {
            params.value_mut(id).data_mut().iter_mut().for_each(|v| *v = value / 2.0);
        }
        Ok(())
    }

    /// One memory cell.
    pub fn cell_forward(&self, params: &ParamSet, x: &[f64], prev: &LstmState) -> Result<LstmStep> {
        if x.len() != self.input_size {
            return Err(dim_err("lstm input", self.input_size, x.len()));
        }
        if prev.h.len() != self.hidden_size || prev.c.len() != self.hidden_size {
            return Err(dim_err("lstm state", self.hidden_size, prev.h.len()));
        }
        Ok(self.step(params, x, &prev.h, &prev.c))
    }

    fn step(&self, params: &ParamSet, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let hs = self.hidden_size;
        let mut pre = [vec![0.0; hs], vec![0.0; hs], vec![0.0; hs], vec![0.0; hs]];
        for (g, z) in pre.iter_mut().enumerate() {
            for (zv, (bx, bh)) in z.iter_mut().zip(
                params
                    .value(self.b_x[g])
                    .data()
                    .iter()
                    .zip(params.value(self.b_h[g]).data()),
            ) {
                *zv = bx + bh;
            }
            matvec_add(params.value(self.w_x[g]).data(), hs, self.input_size, x, z);
            matvec_add(params.value(self.w_h[g]).data(), hs, hs, h_prev, z);
        }
        let [zi, zf, zo, zc] = pre;
        let i: Vec<f64> = zi.into_iter().map(sigmoid).collect();
        let f: Vec<f64> = zf.into_iter().map(sigmoid).collect();
        let o: Vec<f64> = zo.into_iter().map(sigmoid).collect();
        let cand: Vec<f64> = zc.into_iter().map(|v| self.candidate.apply(v)).collect();
        let c: Vec<f64> = (0..hs).map(|k| f[k] * c_prev[k] + i[k] * cand[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
        LstmStep {
            h,
            c,
            input_gate: i,
            forget_gate: f,
            output_gate: o,
            candidate: cand,
            tanh_c,
        }
    }

    /// Unrolls the LSTM over the rows of `xs` from the zero state.
    pub fn sequence_forward(&self, params: &ParamSet, xs: &Tensor) -> Result<SequenceCache> {
        self.sequence_forward_from(params, xs, None)
    }

    /// Unrolls from an explicit initial state (zero state when `None`).
    pub fn sequence_forward_from(
        &self,
        params: &ParamSet,
        xs: &Tensor,
        initial: Option<&LstmState>,
    ) -> Result<SequenceCache> {
        if xs.is_empty() {
            return Err(Error::EmptyInput("lstm sequence has no elements".into()));
        }
        if xs.n_cols() != self.input_size {
            return Err(dim_err("lstm input width", self.input_size, xs.n_cols()));
        }
        if let Some(s) = initial {
            if s.h.len() != self.hidden_size || s.c.len() != self.hidden_size {
                return Err(dim_err("lstm initial state", self.hidden_size, s.h.len()));
            }
        }
        let zero = LstmState::zeros(self.hidden_size);
        let start = initial.unwrap_or(&zero);
        let mut steps: Vec<LstmStep> = Vec::with_capacity(xs.n_rows());
        for x in xs.rows() {
            let step = match steps.last() {
                Some(p) => self.step(params, x, &p.h, &p.c),
                None => self.step(params, x, &start.h, &start.c),
            };
            steps.push(step);
        }
        Ok(SequenceCache {
            inputs: xs.rows().map(<[f64]>::to_vec).collect(),
            initial: initial.cloned(),
            steps,
        })
    }

    /// Backpropagation through time. `grad_hs[t]` is ∂L/∂h_t coming from
    /// above (zeros where a state is not used). Parameter gradients
    /// accumulate into `params`; the returned vectors are ∂L/∂x_t.
    pub fn sequence_backward(
        &self,
        params: &mut ParamSet,
        cache: &SequenceCache,
        grad_hs: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        if cache.is_empty() {
            return Err(Error::Usage(
                "lstm backward called without a forward cache".into(),
            ));
        }
        if grad_hs.len() != cache.len() {
            return Err(Error::LengthMismatch(grad_hs.len(), cache.len()));
        }
        let hs = self.hidden_size;
        let inp = self.input_size;
        let zero = LstmState::zeros(hs);
        let start = cache.initial.as_ref().unwrap_or(&zero);

        let mut grad_xs = vec![vec![0.0; inp]; cache.len()];
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        let mut dpre = [vec![0.0; hs], vec![0.0; hs], vec![0.0; hs], vec![0.0; hs]];

        for t in (0..cache.len()).rev() {
            let st = &cache.steps[t];
            let (h_prev, c_prev) = if t == 0 {
                (start.h.as_slice(), start.c.as_slice())
            } else {
                (cache.steps[t - 1].h.as_slice(), cache.steps[t - 1].c.as_slice())
            };
            if grad_hs[t].len() != hs {
                return Err(dim_err("upstream hidden gradient", hs, grad_hs[t].len()));
            }
            for k in 0..hs {
                let dh = grad_hs[t][k] + dh_next[k];
                let o = st.output_gate[k];
                let tc = st.tanh_c[k];
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                let i = st.input_gate[k];
                let f = st.forget_gate[k];
                let g = st.candidate[k];
                dpre[O][k] = dh * tc * o * (1.0 - o);
                dpre[I][k] = dc * g * i * (1.0 - i);
                dpre[F][k] = dc * c_prev[k] * f * (1.0 - f);
                dpre[C][k] = dc * i * self.candidate.derivative_from_output(g);
                dc_next[k] = dc * f;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            let x = &cache.inputs[t];
            for (g, dz) in dpre.iter().enumerate() {
                {
                    let (w, gw) = params.value_and_grad(self.w_x[g]);
                    matvec_t_add(w.data(), inp, dz, &mut grad_xs[t]);
                    outer_add(gw.data_mut(), inp, dz, x);
                }
                {
                    let (w, gw) = params.value_and_grad(self.w_h[g]);
                    matvec_t_add(w.data(), hs, dz, &mut dh_next);
                    outer_add(gw.data_mut(), hs, dz, h_prev);
                }
                for id in [self.b_x[g], self.b_h[g]] {
                    for (b, d) in params.grad_mut(id).data_mut().iter_mut().zip(dz) {
                        *b += d;
                    }
                }
            }
        }
        Ok(grad_xs)
    }
}
