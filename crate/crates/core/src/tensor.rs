//! Dense 64-bit tensors and the parameter registry.
//!
//! Every trainable quantity in the model is a [`Tensor`] owned by a
//! [`ParamStore`]. The store hands out stable [`ParamId`]s that the
//! computation tape, the optimizer, and the checkpoint format all key on.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Row-major matrix of `f64`. Vectors are tensors with `cols == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn vector(len: usize) -> Self {
        Self::zeros(len, 1)
    }

    /// Entries drawn i.i.d. uniform on `[lo, hi]`.
    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen::<f64>() * (hi - lo) + lo)
            .collect();
        Tensor { rows, cols, data }
    }

    pub fn from_nested(rows: &[Vec<f64>]) -> Option<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return None;
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Some(Tensor {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// `y = self * x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for (r, out) in y.iter_mut().enumerate() {
            let row = self.row(r);
            *out = row.iter().zip(x).map(|(w, v)| w * v).sum();
        }
        y
    }

    /// `dx += selfᵀ * dy`.
    pub fn matvec_t_acc(&self, dy: &[f64], dx: &mut [f64]) {
        debug_assert_eq!(dy.len(), self.rows);
        debug_assert_eq!(dx.len(), self.cols);
        for (r, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (w, out) in self.row(r).iter().zip(dx.iter_mut()) {
                *out += w * d;
            }
        }
    }

    /// `self += dy ⊗ x` (rank-1 update used for weight gradients).
    pub fn outer_acc(&mut self, dy: &[f64], x: &[f64]) {
        debug_assert_eq!(dy.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (r, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (out, v) in self.row_mut(r).iter_mut().zip(x) {
                *out += d * v;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, factor: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }
}

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Registry of named parameter tensors.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn alloc(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar coordinates across all tensors.
    pub fn total_coords(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Locate the `k`-th scalar coordinate as (tensor, offset).
    pub fn coord(&self, k: usize) -> (ParamId, usize) {
        let mut rest = k;
        for (i, t) in self.tensors.iter().enumerate() {
            if rest < t.len() {
                return (ParamId(i), rest);
            }
            rest -= t.len();
        }
        panic!("coordinate {k} out of range");
    }

    pub fn set_all_zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            tensors: store
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(factor));
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matvec_and_transpose_agree_with_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Tensor::uniform(3, 4, -1.0, 1.0, &mut rng);
        let x: Vec<f64> = (0..4).map(|i| i as f64 * 0.5 - 1.0).collect();
        let y = w.matvec(&x);
        for r in 0..3 {
            let expect: f64 = (0..4).map(|c| w.row(r)[c] * x[c]).sum();
            assert!((y[r] - expect).abs() < 1e-12);
        }

        let dy = vec![1.0, -2.0, 0.5];
        let mut dx = vec![0.0; 4];
        w.matvec_t_acc(&dy, &mut dx);
        for c in 0..4 {
            let expect: f64 = (0..3).map(|r| w.row(r)[c] * dy[r]).sum();
            assert!((dx[c] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn store_coord_addressing() {
        let mut store = ParamStore::new();
        let a = store.alloc("a", Tensor::zeros(2, 3));
        let b = store.alloc("b", Tensor::vector(4));
        assert_eq!(store.total_coords(), 10);
        assert_eq!(store.coord(0), (a, 0));
        assert_eq!(store.coord(5), (a, 5));
        assert_eq!(store.coord(6), (b, 0));
        assert_eq!(store.coord(9), (b, 3));
        assert_eq!(store.find("b"), Some(b));
    }
}
