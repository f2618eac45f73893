//! Named parameter tensors and their gradients. Every parameter is a 2-d
//! array; biases are single-row matrices and embeddings are one row per
//! entry.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
struct Param<F> {
    name: String,
    value: Array2<F>,
}

#[derive(Debug, Clone)]
pub struct ParamStore<F: Scalar> {
    entries: Vec<Param<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        range: f64,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        debug_assert!(self.entries.iter().all(|p| p.name != name));
        // sample in f64 so both precisions draw identical streams
        let value = Array2::from_shape_fn((rows, cols), |_| {
            F::from_f64(rng.gen_range(-range..range))
        });
        let id = ParamId(self.entries.len());
        self.entries.push(Param {
            name: name.to_string(),
            value,
        });
        id
    }

    pub fn value(&self, id: ParamId) -> &Array2<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<F> {
        &mut self.entries[id.0].value
    }

    pub fn row(&self, id: ParamId, row: usize) -> ArrayView1<'_, F> {
        self.entries[id.0].value.row(row)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<F>)> {
        self.entries.iter().map(|p| (p.name.as_str(), &p.value))
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// First parameter holding a non-finite value, if any.
    pub fn find_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|p| p.value.iter().any(|v| !v.is_finite()))
            .map(|p| p.name.as_str())
    }

    /// Read a scalar by flat index across all tensors, row-major.
    pub fn get_flat(&self, mut at: usize) -> f64 {
        for p in &self.entries {
            if at < p.value.len() {
                return p.value.as_slice().expect("standard layout")[at].as_f64();
            }
            at -= p.value.len();
        }
        panic!("flat index out of range");
    }

    /// Write a scalar by flat index across all tensors, row-major.
    pub fn set_flat(&mut self, mut at: usize, v: f64) {
        for p in &mut self.entries {
            if at < p.value.len() {
                p.value.as_slice_mut().expect("standard layout")[at] = F::from_f64(v);
                return;
            }
            at -= p.value.len();
        }
        panic!("flat index out of range");
    }

    pub fn export(&self) -> Vec<(String, (usize, usize), Vec<f64>)> {
        self.entries
            .iter()
            .map(|p| {
                let (r, c) = p.value.dim();
                let data = p.value.iter().map(|v| v.as_f64()).collect();
                (p.name.clone(), (r, c), data)
            })
            .collect()
    }

    /// Overwrite tensor contents from exported blobs, matched by name.
    pub fn import(
        &mut self,
        blobs: &[(String, (usize, usize), Vec<f64>)],
    ) -> Result<(), String> {
        for p in &mut self.entries {
            let blob = blobs
                .iter()
                .find(|(name, _, _)| *name == p.name)
                .ok_or_else(|| format!("checkpoint is missing tensor `{}`", p.name))?;
            let (rows, cols) = p.value.dim();
            if blob.1 != (rows, cols) {
                return Err(format!(
                    "tensor `{}` has shape {:?} in the checkpoint, expected {:?}",
                    p.name,
                    blob.1,
                    (rows, cols)
                ));
            }
            for (slot, v) in p
                .value
                .as_slice_mut()
                .expect("standard layout")
                .iter_mut()
                .zip(&blob.2)
            {
                *slot = F::from_f64(*v);
            }
        }
        Ok(())
    }
}

/// Gradient buffers matching a [`ParamStore`] shape for shape.
#[derive(Debug, Clone)]
pub struct GradStore<F: Scalar> {
    grads: Vec<Array2<F>>,
}

impl<F: Scalar> GradStore<F> {
    pub fn zeros_like(params: &ParamStore<F>) -> Self {
        GradStore {
            grads: params
                .entries
                .iter()
                .map(|p| Array2::zeros(p.value.dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<F> {
        &self.grads[id.0]
    }

    pub fn add_row(&mut self, id: ParamId, row: usize, g: &Array1<F>) {
        let mut r = self.grads[id.0].row_mut(row);
        r += g;
    }

    pub fn add_outer(&mut self, id: ParamId, g: &Array1<F>, x: &Array1<F>) {
        let rows = g.len();
        let cols = x.len();
        let target = &mut self.grads[id.0];
        debug_assert_eq!(target.dim(), (rows, cols));
        let slice = target.as_slice_mut().expect("standard layout");
        for (i, gi) in g.iter().enumerate() {
            if gi.is_zero() {
                continue;
            }
            let base = i * cols;
            for (j, xj) in x.iter().enumerate() {
                slice[base + j] = slice[base + j] + *gi * *xj;
            }
        }
    }

    /// Add `other`, consuming it.
    pub fn merge(&mut self, other: GradStore<F>) {
        for (mine, theirs) in self.grads.iter_mut().zip(other.grads) {
            *mine += &theirs;
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in &mut self.grads {
            g.mapv_inplace(|v| v * s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Scale so the global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(F::from_f64(max_norm / norm));
        }
    }

    pub fn get_flat(&self, mut at: usize) -> f64 {
        for g in &self.grads {
            if at < g.len() {
                return g.as_slice().expect("standard layout")[at].as_f64();
            }
            at -= g.len();
        }
        panic!("flat index out of range");
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Array2<F>> {
        self.grads.iter_mut()
    }

    pub fn tensors(&self) -> &[Array2<F>] {
        &self.grads
    }
}
