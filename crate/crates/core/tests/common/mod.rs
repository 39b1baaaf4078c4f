//! Independent references shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64 as C;
use qdcorr::model::{spectral_density, PhononBath, PhysicsConfig, HBAR_MEV_PS, KB_MEV_PER_K};
use qdcorr::{CorrelationGrid, EtaTable, Model};

// Dense Liouville-space RK4 integrator applying the regression formula directly.

type M = [[C; 2]; 2];


fn mul(a: &M, b: &M) -> M {
    let mut m = [[C::default(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    m
}

fn axpy(a: &M, s: f64, b: &M) -> M {
    let mut m = *a;
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] += b[i][j] * s;
        }
    }
    m
}

struct Oracle {
    gamma: f64,
    area: f64,
    sigma: f64,
    centers: Vec<f64>,
}

impl Oracle {
    fn new(cfg: &PhysicsConfig) -> Self {
        let p = &cfg.pulses;
        Self {
            gamma: cfg.system.radiative_rate,
            area: p.area,
            sigma: p.fwhm / (2.0 * (2.0 * 2f64.ln()).sqrt()),
            centers: (0..p.count).map(|k| p.first_center + k as f64 * p.period).collect(),
        }
    }

    fn rabi(&self, t: f64) -> f64 {
        let norm = self.area / (self.sigma * (2.0 * std::f64::consts::PI).sqrt());
        self.centers.iter().map(|c| norm * (-0.5 * ((t - c) / self.sigma).powi(2)).exp()).sum()
    }

    /// `dρ/dt = −i[H, ρ] + γ(σρσ† − ½{σ†σ, ρ})`, basis (G, X), σ = |G⟩⟨X|,
    /// `H = −(f/2)(σ + σ†)` on resonance.
    fn rhs(&self, t: f64, r: &M) -> M {
        let f = self.rabi(t);
        let z = C::default();
        let h = [[z, C::new(-0.5 * f, 0.0)], [C::new(-0.5 * f, 0.0), z]];
        let hr = mul(&h, r);
        let rh = mul(r, &h);
        let mut d = [[z; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                d[i][j] = (hr[i][j] - rh[i][j]) * C::new(0.0, -1.0);
            }
        }
        let g = self.gamma;
        d[0][0] += r[1][1] * g;
        d[1][1] -= r[1][1] * g;
        d[0][1] -= r[0][1] * (0.5 * g);
        d[1][0] -= r[1][0] * (0.5 * g);
        d
    }

    fn step(&self, t: f64, r: &M, h: f64) -> M {
        let k1 = self.rhs(t, r);
        let k2 = self.rhs(t + 0.5 * h, &axpy(r, 0.5 * h, &k1));
        let k3 = self.rhs(t + 0.5 * h, &axpy(r, 0.5 * h, &k2));
        let k4 = self.rhs(t + h, &axpy(r, h, &k3));
        let mut out = *r;
        for (k, w) in [(k1, 1.0), (k2, 2.0), (k3, 2.0), (k4, 1.0)] {
            out = axpy(&out, h * w / 6.0, &k);
        }
        out
    }

    /// Evolves `r` from `t0` over `steps` grid steps of `dt`, calling `visit`
    /// after every step.
    fn evolve(&self, t0: f64, r: M, dt: f64, steps: usize, sub: usize, mut visit: impl FnMut(usize, &M)) {
        let h = dt / sub as f64;
        let mut r = r;
        let mut t = t0;
        visit(0, &r);
        for k in 1..=steps {
            for _ in 0..sub {
                r = self.step(t, &r, h);
                t += h;
            }
            visit(k, &r);
        }
    }
}

const SUB: usize = 25;

/// `G1 = Tr[σ† Λ(σρ)]`, `G2 = Tr[σ†σ Λ(σρσ†)]` on the grid nodes of `like`.
pub fn oracle_grids(cfg: &PhysicsConfig, like: &CorrelationGrid) -> (Vec<C>, Vec<C>) {
    let o = Oracle::new(cfg);
    let dt = like.dt;
    let z = C::default();
    let one = C::new(1.0, 0.0);
    let last_t = *like.t_steps.last().unwrap();
    let mut rho_at = vec![[[z; 2]; 2]; last_t + 1];
    o.evolve(0.0, [[one, z], [z, z]], dt, last_t, SUB, |k, r| rho_at[k] = *r);
    let ntau = like.tau_steps.len();
    let kmax = *like.tau_steps.last().unwrap();
    let mut g1 = vec![z; like.t_steps.len() * ntau];
    let mut g2 = vec![z; like.t_steps.len() * ntau];
    for (i, &n) in like.t_steps.iter().enumerate() {
        let r = rho_at[n];
        // σρ and σρσ†
        let x = [[r[1][0], r[1][1]], [z, z]];
        let y = [[r[1][1], z], [z, z]];
        let mut j = 0;
        o.evolve(n as f64 * dt, x, dt, kmax, SUB, |k, m| {
            if j < ntau && like.tau_steps[j] == k {
                g1[i * ntau + j] = m[0][1];
                j += 1;
            }
        });
        let mut j = 0;
        o.evolve(n as f64 * dt, y, dt, kmax, SUB, |k, m| {
            if j < ntau && like.tau_steps[j] == k {
                g2[i * ntau + j] = m[1][1];
                j += 1;
            }
        });
    }
    (g1, g2)
}

pub fn small_config() -> PhysicsConfig {
    let mut cfg = PhysicsConfig::default();
    cfg.bath.lambda = 0.0;
    cfg.system.radiative_rate = 0.02;
    cfg.pulses.period = 120.0;
    cfg.grid.t_stride = 8;
    cfg.grid.tau_fine = 10.0;
    cfg
}

pub fn max_diff(a: &[C], b: &[C]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

// Influence coefficients by brute-force cubature.

/// `C(u)` for `u = m·h`, `m = −max..=max`, by a midpoint sum over frequency.
fn correlation_table(bath: &PhononBath, h: f64, max: usize) -> Vec<C> {
    let w_max = 16.0;
    let n = 80_000;
    let dw = w_max / n as f64;
    let mut js = Vec::with_capacity(n);
    for i in 0..n {
        let w = (i as f64 + 0.5) * dw;
        let coth = 1.0 / (HBAR_MEV_PS * w / (2.0 * KB_MEV_PER_K * bath.temperature)).tanh();
        js.push((w, spectral_density(w, bath).unwrap() * dw, coth));
    }
    (0..=2 * max)
        .map(|m| {
            let u = (m as f64 - max as f64) * h;
            js.iter().fold(C::default(), |acc, &(w, j, coth)| acc + C::new(j * coth * (w * u).cos(), -j * (w * u).sin()))
        })
        .collect()
}

/// Midpoint cubature with `n` points per step, `k = 0` the triangular self cell.
fn cell(table: &[C], max: usize, n: usize, stride: usize, k: usize) -> C {
    let mut acc = C::default();
    for i in 0..n {
        for j in 0..n {
            // s = (k·n + i + ½)h, s' = (j + ½)h, index offset in units of the fine step
            let m = (k * n + i) as isize - j as isize;
            let weight = if k > 0 || i > j {
                1.0
            } else if i == j {
                0.5
            } else {
                0.0
            };
            if weight > 0.0 {
                acc += table[(max as isize + m * stride as isize) as usize] * weight;
            }
        }
    }
    acc
}

/// Largest relative deviation of the `dt = 0.5` table from Richardson-extrapolated
/// midpoint cubature, over cells `0..=n_c`.
pub fn worst_cell_error(temperature: f64, n_c: usize) -> f64 {
    let dt = 0.5;
    let mut cfg = PhysicsConfig::default();
    cfg.bath.temperature = temperature;
    cfg.bath.lambda = 1.0;
    let table = EtaTable::compute(&Model::new(&cfg).unwrap(), dt, n_c).unwrap();
    let fine = 200;
    let h = dt / fine as f64;
    let max = (n_c + 1) * fine;
    let corr = correlation_table(&cfg.bath, h, max);
    (0..=n_c)
        .map(|k| {
            // Richardson on step h and 2h
            let a = cell(&corr, max, fine, 1, k) * (h * h);
            let b = cell(&corr, max, fine / 2, 2, k) * (4.0 * h * h);
            let oracle = (a * 4.0 - b) / 3.0;
            (table.get(k) - oracle).norm() / oracle.norm()
        })
        .fold(0.0, f64::max)
}
