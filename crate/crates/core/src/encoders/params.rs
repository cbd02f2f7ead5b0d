//! Named parameter tensors: flattening for the optimizer, and the JSON
//! checkpoint container.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of trainable tensors visited in a fixed order.
pub trait Parameters {
    #[allow(clippy::type_complexity)]
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &[usize], &'a [f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, d| n += d.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, d| out.extend_from_slice(d));
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, d| {
            d.copy_from_slice(&flat[offset..offset + d.len()]);
            offset += d.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn scale(&mut self, c: f64) {
        self.visit_mut(&mut |_, d| d.iter_mut().for_each(|v| *v *= c));
    }

    fn fill_zero(&mut self) {
        self.visit_mut(&mut |_, d| d.fill(0.0));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, d| ok &= d.iter().all(|v| v.is_finite()));
        ok
    }

    fn squared_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |_, _, d| s += d.iter().map(|v| v * v).sum::<f64>());
        s
    }

    /// `self += other`; panics if the layouts differ.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut(&mut |_, d| {
            let n = d.len();
            for (v, o) in d.iter_mut().zip(&flat[offset..offset + n]) {
                *v += o;
            }
            offset += n;
        });
    }
}

#[allow(clippy::type_complexity)]
pub(crate) fn visit_matrix<'a>(
    f: &mut dyn FnMut(&str, &[usize], &'a [f64]),
    name: &str,
    m: &'a Array2<f64>,
) {
    f(
        name,
        &[m.nrows(), m.ncols()],
        m.as_slice().expect("standard layout"),
    );
}

#[allow(clippy::type_complexity)]
pub(crate) fn visit_vector<'a>(
    f: &mut dyn FnMut(&str, &[usize], &'a [f64]),
    name: &str,
    v: &'a Array1<f64>,
) {
    f(name, &[v.len()], v.as_slice().expect("standard layout"));
}

/// Glorot-uniform matrix with bound `sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-r..=r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub(crate) fn records_of(p: &impl Parameters, prefix: &str) -> Vec<TensorRecord> {
    let mut out = Vec::new();
    p.visit(&mut |name, shape, data| {
        out.push(TensorRecord {
            name: format!("{prefix}{name}"),
            shape: shape.to_vec(),
            data: data.to_vec(),
        })
    });
    out
}

/// Fill `p` from records, checking names and shapes exactly.
pub(crate) fn assign_records(
    p: &mut impl Parameters,
    prefix: &str,
    records: &[TensorRecord],
) -> Result<()> {
    let mut expected = Vec::new();
    p.visit(&mut |name, shape, _| expected.push((format!("{prefix}{name}"), shape.to_vec())));
    let mut flat = Vec::new();
    for (name, shape) in &expected {
        let rec = records
            .iter()
            .find(|r| &r.name == name)
            .ok_or_else(|| Error::Load(format!("checkpoint is missing tensor {name}")))?;
        if &rec.shape != shape || rec.data.len() != shape.iter().product::<usize>() {
            return Err(Error::Load(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                rec.shape, shape
            )));
        }
        if rec.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Load(format!(
                "tensor {name} contains non-finite values"
            )));
        }
        flat.extend_from_slice(&rec.data);
    }
    p.assign_flat(&flat);
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}
