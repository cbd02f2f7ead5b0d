use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::params::{glorot, visit_matrix, visit_vector, Parameters};
use crate::error::{Error, Result};

const GATES: [&str; 4] = ["i", "f", "o", "g"];
const BIASES: [&str; 4] = ["b_i", "b_f", "b_o", "b_c"];

/// Gate order everywhere: input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// Input projections, `d_w x d_h` each.
    pub u: [Array2<f64>; 4],
    /// Recurrent projections, `d_h x d_h` each.
    pub w: [Array2<f64>; 4],
    pub b: [Array1<f64>; 4],
}

impl LstmParams {
    pub fn zeros(d_w: usize, d_h: usize) -> Self {
        LstmParams {
            u: std::array::from_fn(|_| Array2::zeros((d_w, d_h))),
            w: std::array::from_fn(|_| Array2::zeros((d_h, d_h))),
            b: std::array::from_fn(|_| Array1::zeros(d_h)),
        }
    }

    pub fn random<R: Rng>(d_w: usize, d_h: usize, rng: &mut R) -> Self {
        LstmParams {
            u: std::array::from_fn(|_| glorot(d_w, d_h, rng)),
            w: std::array::from_fn(|_| glorot(d_h, d_h, rng)),
            b: std::array::from_fn(|_| Array1::zeros(d_h)),
        }
    }

    pub fn d_w(&self) -> usize {
        self.u[0].nrows()
    }

    pub fn d_h(&self) -> usize {
        self.u[0].ncols()
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.d_w(), self.d_h())
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        let (d_w, d_h) = (self.d_w(), self.d_h());
        let consistent = self.u.iter().all(|m| m.dim() == (d_w, d_h))
            && self.w.iter().all(|m| m.dim() == (d_h, d_h))
            && self.b.iter().all(|v| v.len() == d_h);
        if !consistent {
            return Err(Error::Config("inconsistent LSTM parameter shapes".into()));
        }
        if x.ncols() != d_w {
            return Err(Error::Config(format!(
                "LSTM expects {d_w}-dimensional word vectors, got {}",
                x.ncols()
            )));
        }
        Ok(())
    }
}

impl Parameters for LstmParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &[usize], &'a [f64])) {
        for (k, gate) in GATES.iter().enumerate() {
            visit_matrix(f, &format!("U_{gate}"), &self.u[k]);
        }
        for (k, gate) in GATES.iter().enumerate() {
            visit_matrix(f, &format!("W_{gate}"), &self.w[k]);
        }
        for (k, name) in BIASES.iter().enumerate() {
            visit_vector(f, name, &self.b[k]);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (k, gate) in GATES.iter().enumerate() {
            f(&format!("U_{gate}"), self.u[k].as_slice_mut().unwrap());
        }
        for (k, gate) in GATES.iter().enumerate() {
            f(&format!("W_{gate}"), self.w[k].as_slice_mut().unwrap());
        }
        for (k, name) in BIASES.iter().enumerate() {
            f(name, self.b[k].as_slice_mut().unwrap());
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Forward activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Array2<f64>,
    /// Activated gates per step, `N x d_h` each.
    gates: [Array2<f64>; 4],
    cell: Array2<f64>,
    tanh_cell: Array2<f64>,
    hidden: Array2<f64>,
    squashed_cell: bool,
}

impl LstmCache {
    pub fn hidden(&self) -> &Array2<f64> {
        &self.hidden
    }
}

/// Run the recurrence from `h_0 = C_0 = 0` and return every hidden state.
///
/// With `squashed_cell` the cell update is squashed:
/// `C_t = sigmoid(f_t * C_{t-1} + i_t * C~_t)`; otherwise the standard
/// `C_t = f_t * C_{t-1} + i_t * C~_t` is used.
pub fn lstm_forward(
    x: ArrayView2<f64>,
    params: &LstmParams,
    squashed_cell: bool,
) -> Result<Array2<f64>> {
    Ok(lstm_forward_cached(x, params, squashed_cell)?.hidden)
}

pub fn lstm_forward_cached(
    x: ArrayView2<f64>,
    params: &LstmParams,
    squashed_cell: bool,
) -> Result<LstmCache> {
    params.check(&x)?;
    let n = x.nrows();
    let d_h = params.d_h();
    let projected: [Array2<f64>; 4] = std::array::from_fn(|k| x.dot(&params.u[k]) + &params.b[k]);
    let mut gates: [Array2<f64>; 4] = std::array::from_fn(|_| Array2::zeros((n, d_h)));
    let mut cell = Array2::zeros((n, d_h));
    let mut tanh_cell = Array2::zeros((n, d_h));
    let mut hidden = Array2::zeros((n, d_h));
    let mut h_prev = Array1::<f64>::zeros(d_h);
    let mut c_prev = Array1::<f64>::zeros(d_h);

    for t in 0..n {
        let mut act: [Array1<f64>; 4] =
            std::array::from_fn(|k| &projected[k].row(t) + &h_prev.dot(&params.w[k]));
        for gate in &mut act[..3] {
            gate.mapv_inplace(sigmoid);
        }
        act[3].mapv_inplace(f64::tanh);
        let mut c = &act[1] * &c_prev + &act[0] * &act[3];
        if squashed_cell {
            c.mapv_inplace(sigmoid);
        }
        let tc = c.mapv(f64::tanh);
        let h = &tc * &act[2];
        for k in 0..4 {
            gates[k].row_mut(t).assign(&act[k]);
        }
        cell.row_mut(t).assign(&c);
        tanh_cell.row_mut(t).assign(&tc);
        hidden.row_mut(t).assign(&h);
        h_prev = h;
        c_prev = c;
    }
    Ok(LstmCache {
        x: x.to_owned(),
        gates,
        cell,
        tanh_cell,
        hidden,
        squashed_cell,
    })
}

/// Full backpropagation through time for upstream `dh = dL/dH` (`N x d_h`).
pub fn lstm_backward(
    cache: &LstmCache,
    params: &LstmParams,
    dh: ArrayView2<f64>,
) -> Result<(LstmParams, Array2<f64>)> {
    let (n, d_h) = cache.hidden.dim();
    if dh.dim() != (n, d_h) {
        return Err(Error::Internal(format!(
            "upstream gradient shape {:?} does not match LSTM output ({n}, {d_h})",
            dh.dim()
        )));
    }
    // pre-activation gradients for all steps
    let mut dact: [Array2<f64>; 4] = std::array::from_fn(|_| Array2::zeros((n, d_h)));
    let mut dh_next = Array1::<f64>::zeros(d_h);
    let mut dc_next = Array1::<f64>::zeros(d_h);
    let zeros = Array1::<f64>::zeros(d_h);

    for t in (0..n).rev() {
        let i = cache.gates[0].row(t);
        let f = cache.gates[1].row(t);
        let o = cache.gates[2].row(t);
        let g = cache.gates[3].row(t);
        let tc = cache.tanh_cell.row(t);
        let c_prev: ArrayView1<f64> = if t > 0 {
            cache.cell.row(t - 1)
        } else {
            zeros.view()
        };

        let dh_t = &dh.row(t) + &dh_next;
        let d_o = &dh_t * &tc;
        let mut dc = &dc_next + &(&dh_t * &o * &tc.mapv(|v| 1.0 - v * v));
        if cache.squashed_cell {
            dc *= &cache.cell.row(t).mapv(|c| c * (1.0 - c));
        }
        let d_i = &dc * &g;
        let d_g = &dc * &i;
        let d_f = &dc * &c_prev;
        dc_next = &dc * &f;

        let da = [
            d_i * &i.mapv(|v| v * (1.0 - v)),
            d_f * &f.mapv(|v| v * (1.0 - v)),
            d_o * &o.mapv(|v| v * (1.0 - v)),
            d_g * &g.mapv(|v| 1.0 - v * v),
        ];
        let mut next = Array1::<f64>::zeros(d_h);
        for k in 0..4 {
            next += &params.w[k].dot(&da[k]);
            dact[k].row_mut(t).assign(&da[k]);
        }
        dh_next = next;
    }

    // h_{t-1} for every step, with h_0 = 0
    let mut h_prev = Array2::zeros((n, d_h));
    if n > 1 {
        h_prev
            .slice_mut(s![1.., ..])
            .assign(&cache.hidden.slice(s![..n - 1, ..]));
    }
    let grads = LstmParams {
        u: std::array::from_fn(|k| cache.x.t().dot(&dact[k])),
        w: std::array::from_fn(|k| h_prev.t().dot(&dact[k])),
        b: std::array::from_fn(|k| dact[k].sum_axis(Axis(0))),
    };
    let mut dx = Array2::zeros(cache.x.dim());
    for (d, u) in dact.iter().zip(&params.u) {
        dx += &d.dot(&u.t());
    }
    Ok((grads, dx))
}

fn reversed(x: ArrayView2<f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

impl BiLstmCache {
    pub fn output(&self) -> Array2<f64> {
        let n = self.fwd.hidden.nrows();
        let d_h = self.fwd.hidden.ncols();
        let mut out = Array2::zeros((n, 2 * d_h));
        out.slice_mut(s![.., ..d_h]).assign(&self.fwd.hidden);
        out.slice_mut(s![.., d_h..])
            .assign(&self.bwd.hidden.slice(s![..;-1, ..]));
        out
    }
}

/// Point `t` is `[h_t (forward pass) ; h (backward pass) at position t]`.
pub fn bilstm_forward(
    x: ArrayView2<f64>,
    fwd: &LstmParams,
    bwd: &LstmParams,
    squashed_cell: bool,
) -> Result<Array2<f64>> {
    Ok(bilstm_forward_cached(x, fwd, bwd, squashed_cell)?.output())
}

pub fn bilstm_forward_cached(
    x: ArrayView2<f64>,
    fwd: &LstmParams,
    bwd: &LstmParams,
    squashed_cell: bool,
) -> Result<BiLstmCache> {
    if fwd.d_h() != bwd.d_h() {
        return Err(Error::Config(
            "forward and backward LSTMs differ in hidden size".into(),
        ));
    }
    Ok(BiLstmCache {
        fwd: lstm_forward_cached(x, fwd, squashed_cell)?,
        bwd: lstm_forward_cached(reversed(x).view(), bwd, squashed_cell)?,
    })
}

pub fn bilstm_backward(
    cache: &BiLstmCache,
    fwd: &LstmParams,
    bwd: &LstmParams,
    dz: ArrayView2<f64>,
) -> Result<(LstmParams, LstmParams, Array2<f64>)> {
    let d_h = fwd.d_h();
    if dz.ncols() != 2 * d_h {
        return Err(Error::Internal(format!(
            "upstream gradient has {} columns, biLSTM output has {}",
            dz.ncols(),
            2 * d_h
        )));
    }
    let (gf, dx_f) = lstm_backward(&cache.fwd, fwd, dz.slice(s![.., ..d_h]))?;
    let d_back = reversed(dz.slice(s![.., d_h..]));
    let (gb, dx_b) = lstm_backward(&cache.bwd, bwd, d_back.view())?;
    let dx = dx_f + dx_b.slice(s![..;-1, ..]);
    Ok((gf, gb, dx))
}
