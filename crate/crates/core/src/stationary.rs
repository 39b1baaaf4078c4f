//! Time-invariant linear segments between pulses.
//!
//! Outside the pulse windows both engines evolve a small state vector `v`
//! (compact path configurations, or the bare density matrix) by one fixed
//! matrix `K` per step. Readouts `R Kᵏ v` of the reduced density matrix are
//! tabulated once per engine, and `Kᵏ v` is obtained by binary powering, so a
//! delay run never has to step through the long pulse-free stretches.

use num_traits::Zero;

use crate::{Real, C};

#[derive(Debug, Clone)]
pub(crate) struct Stationary<T> {
    d: usize,
    /// `K^(2^j)`, row-major `d × d`.
    powers: Vec<Vec<C<T>>>,
    /// `rows[k]`: the `4 × d` matrix `R Kᵏ`, row-major.
    rows: Vec<C<T>>,
    /// Columns with a non-zero readout for each Liouville component.
    support: [Vec<usize>; 4],
    max_k: usize,
}

impl<T: Real> Stationary<T> {
    /// `k` is the dense step matrix, `readout` the `4 × d` reduction.
    pub fn new(d: usize, k: &[C<T>], readout: &[C<T>], max_k: usize) -> Self {
        assert_eq!(k.len(), d * d);
        assert_eq!(readout.len(), 4 * d);
        let mut rows = Vec::with_capacity((max_k + 1) * 4 * d);
        rows.extend_from_slice(readout);
        let mut cur = readout.to_vec();
        let mut support: [Vec<bool>; 4] = std::array::from_fn(|_| vec![false; d]);
        let mark = |support: &mut [Vec<bool>; 4], m: &[C<T>]| {
            for c in 0..4 {
                for i in 0..d {
                    if !m[c * d + i].is_zero() {
                        support[c][i] = true;
                    }
                }
            }
        };
        mark(&mut support, &cur);
        for _ in 0..max_k {
            let next = matmul(&cur, k, 4, d, d);
            mark(&mut support, &next);
            rows.extend_from_slice(&next);
            cur = next;
        }
        let mut powers = vec![k.to_vec()];
        let mut span = 1usize;
        while span * 2 <= max_k.max(1) {
            let last = powers.last().expect("non-empty");
            powers.push(matmul(last, last, d, d, d));
            span *= 2;
        }
        let support = support.map(|s| s.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect());
        Self { d, powers, rows, support, max_k }
    }

    /// Reduced density matrix after `k` steps from `v`.
    pub fn read(&self, v: &[C<T>], k: usize) -> [C<T>; 4] {
        std::array::from_fn(|c| self.read_component(v, k, c))
    }

    /// Single Liouville component of the reduced density matrix after `k` steps.
    #[inline]
    pub fn read_component(&self, v: &[C<T>], k: usize, c: usize) -> C<T> {
        debug_assert!(k <= self.max_k);
        let base = (k * 4 + c) * self.d;
        let mut acc = C::zero();
        for &i in &self.support[c] {
            acc = acc + self.rows[base + i] * v[i];
        }
        acc
    }

    /// `Kᵏ v`
    pub fn advance(&self, v: &[C<T>], k: usize) -> Vec<C<T>> {
        let mut out = v.to_vec();
        let top = self.powers.len() - 1;
        // multiples of the largest tabulated power, then the binary remainder
        for _ in 0..k >> top {
            out = matvec(&self.powers[top], &out, self.d);
        }
        let rest = k & ((1 << top) - 1);
        for j in 0..top {
            if rest >> j & 1 == 1 {
                out = matvec(&self.powers[j], &out, self.d);
            }
        }
        out
    }
}

/// Reduced density matrices of basis states propagated through a pulse
/// window: `data[(u − start)·d + j]` is the readout at step `u` of the basis
/// vector `e_j` placed in the compact space at step `start − 1`.
#[derive(Debug, Clone)]
pub(crate) struct CheckpointTable<T> {
    pub start: usize,
    pub d: usize,
    pub data: Vec<[C<T>; 4]>,
}

impl<T: Real> CheckpointTable<T> {
    pub fn end(&self) -> usize {
        self.start + self.data.len() / self.d - 1
    }

    #[inline]
    pub fn read(&self, v: &[C<T>], u: usize, component: Option<usize>) -> [C<T>; 4] {
        let base = (u - self.start) * self.d;
        let row = &self.data[base..base + self.d];
        match component {
            Some(c) => {
                let mut out = [C::zero(); 4];
                out[c] = row.iter().zip(v).fold(C::zero(), |acc, (r, x)| acc + r[c] * *x);
                out
            }
            None => {
                let mut out = [C::zero(); 4];
                for (r, x) in row.iter().zip(v) {
                    for c in 0..4 {
                        out[c] = out[c] + r[c] * *x;
                    }
                }
                out
            }
        }
    }
}

pub(crate) fn matmul<T: Real>(a: &[C<T>], b: &[C<T>], n: usize, m: usize, p: usize) -> Vec<C<T>> {
    let mut out = vec![C::zero(); n * p];
    for i in 0..n {
        for k in 0..m {
            let x = a[i * m + k];
            if x.is_zero() {
                continue;
            }
            for j in 0..p {
                out[i * p + j] = out[i * p + j] + x * b[k * p + j];
            }
        }
    }
    out
}

pub(crate) fn matvec<T: Real>(a: &[C<T>], v: &[C<T>], d: usize) -> Vec<C<T>> {
    (0..d)
        .map(|i| (0..d).fold(C::zero(), |acc, k| acc + a[i * d + k] * v[k]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C<f64> {
        C::new(re, 0.0)
    }

    #[test]
    fn powers_and_tables_agree_with_stepping() {
        let d = 3;
        let k = vec![c(0.9), c(0.1), c(0.0), c(0.05), c(0.8), c(0.2), c(0.0), c(0.1), c(0.7)];
        let mut r = vec![c(0.0); 12];
        r[0] = c(1.0);
        r[3 * 3 + 1] = c(1.0);
        r[3 * 3 + 2] = c(1.0);
        let st = Stationary::new(d, &k, &r, 40);
        let v = vec![c(0.3), c(-0.2), c(1.1)];
        let mut w = v.clone();
        for step in 0..=40 {
            let adv = st.advance(&v, step);
            for i in 0..d {
                assert!((adv[i] - w[i]).norm() < 1e-14);
            }
            let rd = st.read(&v, step);
            assert!((rd[0] - w[0]).norm() < 1e-14);
            assert!((rd[3] - (w[1] + w[2])).norm() < 1e-14);
            assert_eq!(rd[1], c(0.0));
            w = matvec(&k, &w, d);
        }
        // beyond the table
        let mut w = v.clone();
        for _ in 0..100 {
            w = matvec(&k, &w, d);
        }
        let adv = st.advance(&v, 100);
        for i in 0..d {
            assert!((adv[i] - w[i]).norm() < 1e-13);
        }
    }
}
