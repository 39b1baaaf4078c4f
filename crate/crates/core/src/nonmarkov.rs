//! Trace distance and the trace-distance measure of non-Markovianity.

use num_traits::Zero;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::linalg::Op2;
use crate::model::{Model, PhysicsConfig};
use crate::pathint::{Adm, PathIntegral};
use crate::{Real, C};

const HERMITICITY_TOL: f64 = 1e-9;

/// `½ Σ |x_k|` over the eigenvalues of `ρ₁ − ρ₂`.
pub fn trace_distance<T: Real>(a: &Op2<T>, b: &Op2<T>) -> Result<T> {
    let d = *a - *b;
    let err = d.hermiticity_error();
    if err > T::lit(HERMITICITY_TOL) {
        return Err(domain(format!("trace distance of non-Hermitian matrices (error {err})")));
    }
    let [x0, x1] = d.hermitian_eigenvalues();
    Ok(T::lit(0.5) * (x0.abs() + x1.abs()))
}

/// Antipodal pure states `ρ± = (1 ± n·σ)/2` with `σ_z = |X⟩⟨X| − |G⟩⟨G|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlochPair {
    pub n: [f64; 3],
}

impl BlochPair {
    pub fn new(n: [f64; 3]) -> Result<Self> {
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if !(len > 0.0) || !len.is_finite() {
            return Err(domain("Bloch direction must be a non-zero finite vector"));
        }
        Ok(Self { n: n.map(|x| x / len) })
    }

    /// `k`-th of `count` Fibonacci-lattice directions on the upper half sphere.
    pub fn fibonacci(k: usize, count: usize) -> Self {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let z = 1.0 - (k as f64 + 0.5) / count as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = golden * k as f64;
        Self::new([r * phi.cos(), r * phi.sin(), z]).expect("unit vector")
    }

    pub fn lattice(count: usize) -> Vec<Self> {
        (0..count).map(|k| Self::fibonacci(k, count)).collect()
    }

    /// `ρ₊` for `sign = 1`, `ρ₋` for `sign = −1`.
    pub fn state<T: Real>(&self, sign: f64) -> Op2<T> {
        let [x, y, z] = self.n.map(|v| T::lit(sign * v));
        let h = T::lit(0.5);
        let one = T::one();
        // basis (G, X): ⟨G|ρ|G⟩ = (1 − z)/2, ⟨G|ρ|X⟩ = (x + i y)/2
        Op2([
            [C::new(h * (one - z), T::zero()), C::new(h * x, h * y)],
            [C::new(h * x, -h * y), C::new(h * (one + z), T::zero())],
        ])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NonMarkovianity {
    pub value: f64,
    pub pair: BlochPair,
    /// `D(t)` of the maximizing pair on the step grid.
    pub distance: Vec<f64>,
    pub dt: f64,
}

/// Sum of the positive increments of a sampled curve.
pub fn positive_growth<T: Real>(d: &[T]) -> T {
    d.windows(2).fold(T::zero(), |acc, w| acc + (w[1] - w[0]).max(T::zero()))
}

/// Images of `σ_x`, `σ_y`, `σ_z` under the single-time dynamical map, on
/// every step up to the engine horizon. The map is linear in the initial
/// reduced state, so three runs cover every pair.
fn pauli_images<T: Real>(engine: &PathIntegral<T>) -> Result<[Vec<[C<T>; 4]>; 3]> {
    let z = C::zero();
    let one = C::new(T::one(), T::zero());
    let i = C::new(T::zero(), T::one());
    let paulis = [[z, one, one, z], [z, i, -i, z], [-one, z, z, one]];
    let requests: Vec<usize> = (0..=engine.n_steps()).collect();
    let mut ws = engine.workspace();
    let mut out: [Vec<[C<T>; 4]>; 3] = Default::default();
    for (p, slot) in paulis.iter().zip(out.iter_mut()) {
        let start = Adm::from_reduced(p, 0, engine.slices());
        slot.reserve(requests.len());
        engine.run(&mut ws, &start, &requests, None, &mut |_, r| slot.push(r))?;
    }
    Ok(out)
}

/// `D(t)` of one pair from the propagated Pauli images.
fn pair_distance<T: Real>(images: &[Vec<[C<T>; 4]>; 3], pair: &BlochPair) -> Result<Vec<T>> {
    let n = pair.n.map(T::lit);
    let zero = Op2::from_vec(&[C::zero(); 4]);
    (0..images[0].len())
        .map(|k| {
            let v: [C<T>; 4] = std::array::from_fn(|c| (0..3).fold(C::zero(), |acc, j| acc + images[j][k][c] * n[j]));
            // ρ₊ − ρ₋ = n·σ
            trace_distance(&Op2::from_vec(&v), &zero)
        })
        .collect()
}

/// Maximal integrated growth of the trace distance over `pairs` antipodal
/// pairs, starting from the product state with a thermal bath at `t = 0`.
pub fn non_markovianity_with<T: Real>(engine: &PathIntegral<T>, pairs: &[BlochPair]) -> Result<(T, BlochPair, Vec<T>)> {
    let first = *pairs.first().ok_or_else(|| domain("at least one Bloch pair is required"))?;
    let images = pauli_images(engine)?;
    let mut best = (T::neg_infinity(), first, Vec::new());
    for pair in pairs {
        let d = pair_distance(&images, pair)?;
        let g = positive_growth(&d);
        if g > best.0 {
            best = (g, *pair, d);
        }
    }
    Ok(best)
}

/// Non-Markovianity of the configured point. The pulse train is switched off
/// unless `analysis.nm_with_drive` is set.
pub fn non_markovianity(cfg: &PhysicsConfig, pairs: usize) -> Result<NonMarkovianity> {
    if pairs == 0 {
        return Err(domain("pair sampling needs at least one pair"));
    }
    let mut model = Model::<f64>::new(cfg)?;
    if !cfg.analysis.nm_with_drive {
        model.area = 0.0;
    }
    let engine = PathIntegral::from_model(&model, cfg.grid.dt, cfg.grid.n_c, cfg.analysis.nm_horizon, cfg.grid.memory_cap_bytes)?;
    let (value, pair, distance) = non_markovianity_with(&engine, &BlochPair::lattice(pairs))?;
    Ok(NonMarkovianity { value, pair, distance, dt: cfg.grid.dt })
}
