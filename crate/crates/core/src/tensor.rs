//! Dense order-`k` tensors over `ℝ^d`, stored row-major in a `d^k` array.

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dim: usize,
    order: usize,
    data: Vec<f64>,
}

/// Number of entries of a `d^k` tensor, or a resource-limit error.
pub fn checked_len(dim: usize, order: usize, limit: u128) -> Result<usize> {
    let requested = (dim as u128).checked_pow(order as u32).unwrap_or(u128::MAX);
    if requested > limit {
        return Err(Error::ResourceLimit {
            what: "dense tensor",
            requested,
            limit,
        });
    }
    Ok(requested as usize)
}

impl DenseTensor {
    pub fn zeros(dim: usize, order: usize, limit: u128) -> Result<Self> {
        if dim == 0 {
            return invalid("tensor dimension must be positive");
        }
        let len = checked_len(dim, order, limit)?;
        Ok(DenseTensor {
            dim,
            order,
            data: vec![0.0; len],
        })
    }

    pub fn from_data(dim: usize, order: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() as u128 != (dim as u128).pow(order as u32) {
            return invalid(format!(
                "data of length {} does not match a {dim}^{order} tensor",
                data.len()
            ));
        }
        Ok(DenseTensor { dim, order, data })
    }

    /// `v^{⊗k}`.
    pub fn outer_power(v: &[f64], order: usize, limit: u128) -> Result<Self> {
        let mut t = Self::zeros(v.len(), order, limit)?;
        t.data[0] = 1.0;
        let mut filled = 1;
        // expand one axis at a time: new[i*d + j] = old[i] * v[j]
        for _ in 0..order {
            for i in (0..filled).rev() {
                let base = t.data[i];
                for (j, &vj) in v.iter().enumerate() {
                    t.data[i * v.len() + j] = base * vj;
                }
            }
            filled *= v.len();
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
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

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat(idx)]
    }

    fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    fn unflat(&self, mut flat: usize, idx: &mut [usize]) {
        for slot in idx.iter_mut().rev() {
            *slot = flat % self.dim;
            flat /= self.dim;
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Flattened dot product `⟨self, other⟩`.
    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    fn same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.dim != other.dim || self.order != other.order {
            return invalid(format!(
                "shape mismatch: {}^{} vs {}^{}",
                self.dim, self.order, other.dim, other.order
            ));
        }
        Ok(())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, scale: f64, other: &DenseTensor) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// Average over all `k!` axis permutations.
    pub fn symmetrize(&self) -> DenseTensor {
        let perms = permutations(self.order);
        let mut out = vec![0.0; self.data.len()];
        let mut idx = vec![0usize; self.order];
        let mut permuted = vec![0usize; self.order];
        let inv = 1.0 / perms.len() as f64;
        for (flat, o) in out.iter_mut().enumerate() {
            self.unflat(flat, &mut idx);
            let mut acc = 0.0;
            for p in &perms {
                for (slot, &src) in permuted.iter_mut().zip(p) {
                    *slot = idx[src];
                }
                acc += self.data[self.flat(&permuted)];
            }
            *o = acc * inv;
        }
        DenseTensor {
            dim: self.dim,
            order: self.order,
            data: out,
        }
    }

    /// Largest deviation from any transposition of two axes.
    pub fn asymmetry(&self) -> f64 {
        let mut idx = vec![0usize; self.order];
        let mut worst = 0.0f64;
        for flat in 0..self.data.len() {
            self.unflat(flat, &mut idx);
            for a in 0..self.order {
                for b in a + 1..self.order {
                    idx.swap(a, b);
                    let other = self.data[self.flat(&idx)];
                    idx.swap(a, b);
                    worst = worst.max((self.data[flat] - other).abs());
                }
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.asymmetry() <= tol
    }

    /// Contracts the last `times` axes with `v`: `T[v^{⊗times}]`.
    pub fn contract_vector(&self, v: &[f64], times: usize) -> Result<DenseTensor> {
        if v.len() != self.dim {
            return invalid(format!("vector of length {} for a tensor of dim {}", v.len(), self.dim));
        }
        if times > self.order {
            return invalid(format!(
                "cannot contract {times} axes of an order-{} tensor",
                self.order
            ));
        }
        let mut data = self.data.clone();
        for _ in 0..times {
            data = data
                .chunks_exact(self.dim)
                .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect();
        }
        Ok(DenseTensor {
            dim: self.dim,
            order: self.order - times,
            data,
        })
    }

    /// Contracts the last two axes with the identity.
    pub fn trace_last_pair(&self) -> Result<DenseTensor> {
        if self.order < 2 {
            return invalid("trace needs a tensor of order >= 2");
        }
        let d = self.dim;
        let data = self
            .data
            .chunks_exact(d * d)
            .map(|block| (0..d).map(|i| block[i * d + i]).sum())
            .collect();
        Ok(DenseTensor {
            dim: d,
            order: self.order - 2,
            data,
        })
    }

    /// Full contraction `⟨T, v^{⊗k}⟩`.
    pub fn eval_power(&self, v: &[f64]) -> Result<f64> {
        Ok(self.contract_vector(v, self.order)?.data[0])
    }
}

/// All permutations of `0..k` (Heap's algorithm).
pub(crate) fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..k).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; k];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}
