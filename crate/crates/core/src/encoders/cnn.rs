use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::params::{glorot, visit_matrix, visit_vector, Parameters};
use crate::error::{Error, Result};

/// Window encoder: a shared linear map over zero-padded windows of `2l + 1` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    /// `((2l + 1) * d_w) x d_c`
    pub s: Array2<f64>,
    pub g: Array1<f64>,
    pub half_window: usize,
}

impl CnnParams {
    pub fn zeros(d_w: usize, d_c: usize, half_window: usize) -> Self {
        CnnParams {
            s: Array2::zeros(((2 * half_window + 1) * d_w, d_c)),
            g: Array1::zeros(d_c),
            half_window,
        }
    }

    pub fn random<R: Rng>(d_w: usize, d_c: usize, half_window: usize, rng: &mut R) -> Self {
        CnnParams {
            s: glorot((2 * half_window + 1) * d_w, d_c, rng),
            g: Array1::zeros(d_c),
            half_window,
        }
    }

    pub fn window(&self) -> usize {
        2 * self.half_window + 1
    }

    pub fn d_w(&self) -> usize {
        self.s.nrows() / self.window()
    }

    pub fn d_c(&self) -> usize {
        self.s.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        CnnParams::zeros(self.d_w(), self.d_c(), self.half_window)
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if !self.s.nrows().is_multiple_of(self.window()) || self.g.len() != self.d_c() {
            return Err(Error::Config("inconsistent CNN parameter shapes".into()));
        }
        if x.ncols() != self.d_w() {
            return Err(Error::Config(format!(
                "CNN expects {}-dimensional word vectors, got {}",
                self.d_w(),
                x.ncols()
            )));
        }
        Ok(())
    }
}

impl Parameters for CnnParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &[usize], &'a [f64])) {
        visit_matrix(f, "S", &self.s);
        visit_vector(f, "g", &self.g);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("S", self.s.as_slice_mut().unwrap());
        f("g", self.g.as_slice_mut().unwrap());
    }
}

/// Row `t` holds the concatenation of tokens `t - l ..= t + l`, zeros outside the document.
fn windows(x: &ArrayView2<f64>, half_window: usize) -> Array2<f64> {
    let (n, d_w) = x.dim();
    let width = 2 * half_window + 1;
    let mut out = Array2::zeros((n, width * d_w));
    for t in 0..n {
        for k in 0..width {
            let src = t as isize + k as isize - half_window as isize;
            if src >= 0 && (src as usize) < n {
                out.slice_mut(s![t, k * d_w..(k + 1) * d_w])
                    .assign(&x.row(src as usize));
            }
        }
    }
    out
}

pub fn cnn_forward(x: ArrayView2<f64>, params: &CnnParams) -> Result<Array2<f64>> {
    params.check(&x)?;
    Ok(windows(&x, params.half_window).dot(&params.s) + &params.g)
}

/// Gradients of all parameters and of the input for upstream `dz = dL/dZ`.
pub fn cnn_backward(
    x: ArrayView2<f64>,
    params: &CnnParams,
    dz: ArrayView2<f64>,
) -> Result<(CnnParams, Array2<f64>)> {
    params.check(&x)?;
    if dz.dim() != (x.nrows(), params.d_c()) {
        return Err(Error::Internal(format!(
            "upstream gradient shape {:?} does not match CNN output ({}, {})",
            dz.dim(),
            x.nrows(),
            params.d_c()
        )));
    }
    let win = windows(&x, params.half_window);
    let grads = CnnParams {
        s: win.t().dot(&dz),
        g: dz.sum_axis(Axis(0)),
        half_window: params.half_window,
    };
    let dwin = dz.dot(&params.s.t());
    let (n, d_w) = x.dim();
    let mut dx = Array2::zeros((n, d_w));
    let l = params.half_window;
    for t in 0..n {
        for k in 0..params.window() {
            let src = t as isize + k as isize - l as isize;
            if src >= 0 && (src as usize) < n {
                let mut row = dx.row_mut(src as usize);
                row += &dwin.slice(s![t, k * d_w..(k + 1) * d_w]);
            }
        }
    }
    Ok((grads, dx))
}
