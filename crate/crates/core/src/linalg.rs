//! Two-level operators and their 4×4 Liouville-space superoperators.
//!
//! A density matrix `ρ` over the basis `{G, X}` is vectorized as
//! `v[2·a + b] = ρ[a][b]`, so the Liouville indices are
//! `GG = 0, GX = 1, XG = 2, XX = 3`.

use std::ops::{Add, Mul, Sub};

use num_traits::Zero;

use crate::{Real, C};

pub const GG: usize = 0;
pub const GX: usize = 1;
pub const XG: usize = 2;
pub const XX: usize = 3;

/// Row state `ν⁺` and column state `ν⁻` of a Liouville index.
#[inline]
pub fn split(alpha: usize) -> (usize, usize) {
    (alpha >> 1, alpha & 1)
}

/// 2×2 complex operator on the emitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Op2<T>(pub [[C<T>; 2]; 2]);

impl<T: Real> Op2<T> {
    pub fn zero() -> Self {
        Self([[C::zero(); 2]; 2])
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        m.0[0][0] = C::new(T::one(), T::zero());
        m.0[1][1] = C::new(T::one(), T::zero());
        m
    }

    /// Lowering operator `σ = |G⟩⟨X|`.
    pub fn sigma() -> Self {
        let mut m = Self::zero();
        m.0[0][1] = C::new(T::one(), T::zero());
        m
    }

    /// Raising operator `σ† = |X⟩⟨G|`.
    pub fn sigma_dag() -> Self {
        Self::sigma().dagger()
    }

    /// Exciton projector `|X⟩⟨X|`.
    pub fn exciton() -> Self {
        let mut m = Self::zero();
        m.0[1][1] = C::new(T::one(), T::zero());
        m
    }

    pub fn dagger(&self) -> Self {
        let mut m = Self::zero();
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] = self.0[j][i].conj();
            }
        }
        m
    }

    pub fn scale(&self, s: C<T>) -> Self {
        let mut m = *self;
        for row in &mut m.0 {
            for x in row {
                *x = *x * s;
            }
        }
        m
    }

    pub fn trace(&self) -> C<T> {
        self.0[0][0] + self.0[1][1]
    }

    pub fn to_vec(&self) -> [C<T>; 4] {
        [self.0[0][0], self.0[0][1], self.0[1][0], self.0[1][1]]
    }

    pub fn from_vec(v: &[C<T>; 4]) -> Self {
        Self([[v[0], v[1]], [v[2], v[3]]])
    }

    /// Largest entry of `|ρ − ρ†|`.
    pub fn hermiticity_error(&self) -> T {
        let d = *self - self.dagger();
        d.0.iter().flatten().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> [T; 2] {
        let a = self.0[0][0].re;
        let d = self.0[1][1].re;
        let b = (self.0[0][1] + self.0[1][0].conj()) * T::lit(0.5);
        let mean = (a + d) * T::lit(0.5);
        let half = (a - d) * T::lit(0.5);
        let r = (half * half + b.norm_sqr()).sqrt();
        [mean - r, mean + r]
    }
}

impl<T: Real> Add for Op2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut m = self;
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] = m.0[i][j] + o.0[i][j];
            }
        }
        m
    }
}

impl<T: Real> Sub for Op2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut m = self;
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] = m.0[i][j] - o.0[i][j];
            }
        }
        m
    }
}

impl<T: Real> Mul for Op2<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut m = Self::zero();
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j];
            }
        }
        m
    }
}

/// 4×4 complex superoperator acting on vectorized density matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Super<T>(pub [[C<T>; 4]; 4]);

impl<T: Real> Super<T> {
    pub fn zero() -> Self {
        Self([[C::zero(); 4]; 4])
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        for i in 0..4 {
            m.0[i][i] = C::new(T::one(), T::zero());
        }
        m
    }

    /// `ρ ↦ A ρ`
    pub fn left(a: &Op2<T>) -> Self {
        let mut m = Self::zero();
        for r in 0..2 {
            for c in 0..2 {
                for k in 0..2 {
                    m.0[2 * r + c][2 * k + c] = a.0[r][k];
                }
            }
        }
        m
    }

    /// `ρ ↦ ρ B`
    pub fn right(b: &Op2<T>) -> Self {
        let mut m = Self::zero();
        for r in 0..2 {
            for c in 0..2 {
                for k in 0..2 {
                    m.0[2 * r + c][2 * r + k] = b.0[k][c];
                }
            }
        }
        m
    }

    /// `ρ ↦ A ρ B`
    pub fn sandwich(a: &Op2<T>, b: &Op2<T>) -> Self {
        Self::left(a) * Self::right(b)
    }

    /// `ρ ↦ −i[H, ρ]`
    pub fn commutator(h: &Op2<T>) -> Self {
        let mi = C::new(T::zero(), -T::one());
        (Self::left(h) - Self::right(h)).scale(mi)
    }

    /// `ρ ↦ L ρ L† − ½{L†L, ρ}`
    pub fn dissipator(l: &Op2<T>) -> Self {
        let ld = l.dagger();
        let n = ld * *l;
        let half = C::new(T::lit(0.5), T::zero());
        Self::sandwich(l, &ld) - (Self::left(&n) + Self::right(&n)).scale(half)
    }

    pub fn scale(&self, s: C<T>) -> Self {
        let mut m = *self;
        for row in &mut m.0 {
            for x in row {
                *x = *x * s;
            }
        }
        m
    }

    pub fn apply(&self, v: &[C<T>; 4]) -> [C<T>; 4] {
        let mut out = [C::zero(); 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0[i][0] * v[0] + self.0[i][1] * v[1] + self.0[i][2] * v[2] + self.0[i][3] * v[3];
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().flatten().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> T {
        self.0
            .iter()
            .map(|row| row.iter().map(|z| z.norm()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    /// Matrix exponential by scaling and squaring with a Taylor kernel.
    pub fn expm(&self) -> Self {
        let norm = self.norm_inf();
        let mut squarings = 0u32;
        let mut scaled = *self;
        let half = C::new(T::lit(0.5), T::zero());
        let target = T::lit(0.25);
        while norm * T::lit(0.5).powi(squarings as i32) > target {
            squarings += 1;
            scaled = scaled.scale(half);
        }
        // ‖A‖ ≤ 1/4: 18 Taylor terms reach round-off for f64
        let mut result = Self::identity();
        let mut term = Self::identity();
        for k in 1..=18 {
            term = (term * scaled).scale(C::new(T::one() / T::from_usize_lossy(k), T::zero()));
            result = result + term;
        }
        for _ in 0..squarings {
            result = result * result;
        }
        result
    }

    /// Trace functional applied after the map: `Tr[M ρ]` as a row vector.
    pub fn trace_row(&self) -> [C<T>; 4] {
        let mut row = [C::zero(); 4];
        for (j, r) in row.iter_mut().enumerate() {
            *r = self.0[GG][j] + self.0[XX][j];
        }
        row
    }
}

impl<T: Real> Add for Super<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut m = self;
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = m.0[i][j] + o.0[i][j];
            }
        }
        m
    }
}

impl<T: Real> Sub for Super<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut m = self;
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = m.0[i][j] - o.0[i][j];
            }
        }
        m
    }
}

impl<T: Real> Mul for Super<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut m = Self::zero();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = C::zero();
                for k in 0..4 {
                    s = s + self.0[i][k] * o.0[k][j];
                }
                m.0[i][j] = s;
            }
        }
        m
    }
}

/// Emitter Hamiltonian in the laser frame:
/// `H = δ |X⟩⟨X| − (f/2)(σ + σ†)`.
pub fn emitter_hamiltonian<T: Real>(detuning: T, rabi: T) -> Op2<T> {
    let mut h = Op2::zero();
    h.0[1][1] = C::new(detuning, T::zero());
    let off = C::new(-rabi * T::lit(0.5), T::zero());
    h.0[0][1] = off;
    h.0[1][0] = off;
    h
}

/// Generator of coherent drive plus radiative decay at rate `gamma`.
pub fn lindblad_generator<T: Real>(detuning: T, rabi: T, gamma: T) -> Super<T> {
    let h = emitter_hamiltonian(detuning, rabi);
    Super::commutator(&h) + Super::dissipator(&Op2::sigma()).scale(C::new(gamma, T::zero()))
}
