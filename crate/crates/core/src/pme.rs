//! Time-local polaron master equation.
//!
//! In the polaron frame the drive `f(t)` is renormalized to `⟨B⟩ f(t)` and the
//! residual coupling `(f/2)(B_x σ_x + B_y σ_y)` is treated to second order with
//! the bath correlations
//!
//! ```text
//! Λ_x(τ) = ⟨B⟩²/2 (e^{φ(τ)} + e^{−φ(τ)} − 2)
//! Λ_y(τ) = ⟨B⟩²/2 (e^{φ(τ)} − e^{−φ(τ)})
//! ```
//!
//! Each channel contributes `−(f²/4)([A, Q ρ] − [A, ρ Q'])` with
//! `Q = ∫₀^∞ Λ(τ) Ã(−τ) dτ`, `Q' = ∫₀^∞ Λ*(τ) Ã(−τ) dτ` and `Ã` evolved with
//! the instantaneous polaron-frame Hamiltonian. The generator is evaluated
//! at the instantaneous Rabi frequency.

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::influence::PolaronKernel;
use crate::linalg::{lindblad_generator, Op2, Super, GG};
use crate::model::Model;
use crate::pathint::{Invariants, Side, Trajectory};
use crate::stationary::{matvec, CheckpointTable, Stationary};
use crate::{Real, C};

const SUBSTEPS: usize = 32;
/// Resolution of the tabulated half-Fourier transforms.
const OMEGA_TABLE: usize = 1024;

/// PME state at a step: reduced density matrix plus pending insertions.
#[derive(Debug, Clone, PartialEq)]
pub struct PmeState<T> {
    pub step: usize,
    pub rho: [C<T>; 4],
    pending: Option<Super<T>>,
}

impl<T: Real> PmeState<T> {
    pub fn new(step: usize, rho: [C<T>; 4]) -> Self {
        Self { step, rho, pending: None }
    }

    pub fn insert(&mut self, side: Side, op: &Op2<T>) {
        let s = match side {
            Side::Left => Super::left(op),
            Side::Right => Super::right(op),
        };
        self.pending = Some(match self.pending {
            Some(p) => s * p,
            None => s,
        });
    }

    pub fn reduced(&self) -> [C<T>; 4] {
        match &self.pending {
            Some(p) => p.apply(&self.rho),
            None => self.rho,
        }
    }
}

/// Half-Fourier transforms `F(Δ) = ∫₀^∞ Λ(τ) e^{iΔτ} dτ` of both channels on
/// a uniform `Δ ≥ 0` grid; negative `Δ` by tabulating `F(−Δ)` separately.
#[derive(Debug, Clone)]
struct RateTable<T> {
    d_omega: T,
    /// `[x(+Δ), x(−Δ), y(+Δ), y(−Δ)]` per node.
    nodes: Vec<[C<T>; 4]>,
}

impl<T: Real> RateTable<T> {
    fn new(kernel: &PolaronKernel<T>, omega_max: T) -> Self {
        let n = OMEGA_TABLE;
        let d_omega = (omega_max * T::lit(1.05)).max(T::lit(1e-6)) / T::from_usize_lossy(n - 1);
        let half = T::lit(0.5);
        let nodes = (0..n)
            .map(|k| {
                let w = d_omega * T::from_usize_lossy(k);
                let pp = kernel.half_fourier(T::one(), w);
                let pm = kernel.half_fourier(-T::one(), w);
                let mp = kernel.half_fourier(T::one(), -w);
                let mm = kernel.half_fourier(-T::one(), -w);
                [(pp + pm) * half, (mp + mm) * half, (pp - pm) * half, (mp - mm) * half]
            })
            .collect();
        Self { d_omega, nodes }
    }

    fn at(&self, omega: T) -> [C<T>; 4] {
        let x = (omega.abs() / self.d_omega).min(T::from_usize_lossy(self.nodes.len() - 1));
        let k = x.floor().to_usize().unwrap_or(0).min(self.nodes.len() - 2);
        let f = x - T::from_usize_lossy(k);
        let (a, b) = (self.nodes[k], self.nodes[k + 1]);
        let v: [C<T>; 4] = std::array::from_fn(|i| a[i] * (T::one() - f) + b[i] * f);
        if omega < T::zero() {
            [v[1], v[0], v[3], v[2]]
        } else {
            v
        }
    }
}

#[derive(Debug, Clone)]
struct Crossing<T> {
    table: CheckpointTable<T>,
    /// Product of the driven step propagators, row-major 4×4.
    exit: Vec<C<T>>,
}

/// Polaron master equation propagator on the step grid.
#[derive(Debug, Clone)]
pub struct PolaronSolver<T> {
    dt: T,
    n_steps: usize,
    gamma: T,
    delta: T,
    kernel: PolaronKernel<T>,
    rates: RateTable<T>,
    off: Super<T>,
    drive: Vec<(usize, Super<T>)>,
    regions: Vec<(usize, usize)>,
    free: Stationary<T>,
    crossings: Vec<Crossing<T>>,
    model: Model<T>,
}

impl<T: Real> PolaronSolver<T> {
    pub fn new(model: &Model<T>, dt: T, t_max: T) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(crate::error::domain("PME needs dt > 0"));
        }
        let n_steps = (t_max / dt).ceil().to_usize().unwrap_or(0);
        let sub = (dt / T::lit(0.02)).ceil().to_usize().unwrap_or(1).max(1);
        let kernel = PolaronKernel::new(model, dt / T::from_usize_lossy(sub))?;
        let peak = model.area / (model.sigma * T::lit(2.0 * std::f64::consts::PI).sqrt());
        let omega_max = (kernel.b_avg * peak).hypot(model.detuning);
        let rates = RateTable::new(&kernel, omega_max);
        let delta = -model.detuning;
        let off = lindblad_generator(delta, T::zero(), model.gamma).scale(C::new(dt, T::zero())).expm();
        let mut solver = Self {
            dt,
            n_steps,
            gamma: model.gamma,
            delta,
            kernel,
            rates,
            off,
            drive: Vec::new(),
            regions: Vec::new(),
            free: Stationary::new(1, &[C::zero()], &[C::zero(); 4], 0),
            crossings: Vec::new(),
            model: model.clone(),
        };
        let t = |n: usize| dt * T::from_usize_lossy(n);
        for n in 1..=n_steps {
            if model.drive_on(t(n - 1), t(n)) {
                let m = solver.driven_step(t(n - 1));
                solver.drive.push((n, m));
            }
        }
        for &(n, _) in &solver.drive {
            match solver.regions.last_mut() {
                Some(r) if r.1 + 1 == n => r.1 = n,
                _ => solver.regions.push((n, n)),
            }
        }
        let k: Vec<C<T>> = off.0.iter().flatten().copied().collect();
        let mut r = vec![C::zero(); 16];
        for i in 0..4 {
            r[i * 4 + i] = C::new(T::one(), T::zero());
        }
        solver.free = Stationary::new(4, &k, &r, n_steps);
        solver.crossings = solver
            .regions
            .iter()
            .map(|&(s, e)| {
                let mut data = Vec::with_capacity((e - s + 1) * 4);
                let mut prod = Super::identity();
                for n in s..=e {
                    prod = solver.step_propagator(n) * prod;
                    for j in 0..4 {
                        data.push(std::array::from_fn(|i| prod.0[i][j]));
                    }
                }
                Crossing {
                    table: CheckpointTable { start: s, d: 4, data },
                    exit: prod.0.iter().flatten().copied().collect(),
                }
            })
            .collect();
        Ok(solver)
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn drive_regions(&self) -> &[(usize, usize)] {
        &self.regions
    }

    pub fn kernel(&self) -> &PolaronKernel<T> {
        &self.kernel
    }

    /// Liouville generator at bare Rabi frequency `f`.
    pub fn generator(&self, f: T) -> Super<T> {
        let h = self.kernel.b_avg * f;
        let mut l = lindblad_generator(self.delta, h, self.gamma);
        if f.is_zero() || self.kernel.b_avg == T::one() {
            return l;
        }
        // δσ†σ − (h/2)σ_x = const + (Ω/2) n·σ with n ∝ (−h, 0, δ)
        let omega = h.hypot(self.delta);
        let n = [-h / omega, T::zero(), self.delta / omega];
        let paulis = paulis::<T>();
        let rates = self.rates.at(omega);
        let c2 = C::new(f * f * T::lit(0.25), T::zero());
        for (ch, (fp, fm)) in [(rates[0], rates[1]), (rates[2], rates[3])].into_iter().enumerate() {
            // K0 = F(0), Kc = (F(Ω) + F(−Ω))/2, Ks = (F(Ω) − F(−Ω))/2i
            let f0 = if ch == 0 { self.rates.at(T::zero())[0] } else { self.rates.at(T::zero())[2] };
            let kc = (fp + fm) * T::lit(0.5);
            let ks = (fp - fm) * C::new(T::zero(), -T::lit(0.5));
            let e = if ch == 0 { [T::one(), T::zero(), T::zero()] } else { [T::zero(), T::one(), T::zero()] };
            let cross = [n[1] * e[2] - n[2] * e[1], n[2] * e[0] - n[0] * e[2], n[0] * e[1] - n[1] * e[0]];
            let ni = n[0] * e[0] + n[1] * e[1] + n[2] * e[2];
            let mut q = Op2::zero();
            let mut qp = Op2::zero();
            for j in 0..3 {
                let coef = |k0: C<T>, kc: C<T>, ks: C<T>| kc * e[j] + ks * cross[j] + (k0 - kc) * (n[j] * ni);
                q = q + paulis[j].scale(coef(f0, kc, ks));
                qp = qp + paulis[j].scale(coef(f0.conj(), kc.conj(), ks.conj()));
            }
            let a = paulis[ch];
            let term = Super::left(&a) * Super::left(&q) - Super::left(&q) * Super::right(&a)
                + Super::right(&a) * Super::right(&qp)
                - Super::left(&a) * Super::right(&qp);
            l = l - term.scale(c2);
        }
        l
    }

    /// Fourth-order commutator-free exponential integrator over one driven step.
    fn driven_step(&self, a: T) -> Super<T> {
        let h = self.dt / T::from_usize_lossy(SUBSTEPS);
        let s3 = T::lit(3f64.sqrt() / 6.0);
        let (c1, c2) = (T::lit(0.5) - s3, T::lit(0.5) + s3);
        let (a1, a2) = (T::lit(0.25) + s3, T::lit(0.25) - s3);
        let mut m = Super::identity();
        for j in 0..SUBSTEPS {
            let t0 = a + h * T::from_usize_lossy(j);
            let l1 = self.generator(self.model.pulse_envelope(t0 + c1 * h));
            let l2 = self.generator(self.model.pulse_envelope(t0 + c2 * h));
            let hc = |x: T| C::new(x * h, T::zero());
            let first = (l1.scale(hc(a1)) + l2.scale(hc(a2))).expm();
            let second = (l1.scale(hc(a2)) + l2.scale(hc(a1))).expm();
            m = second * first * m;
        }
        m
    }

    pub fn step_propagator(&self, n: usize) -> Super<T> {
        match self.drive.binary_search_by_key(&n, |d| d.0) {
            Ok(i) => self.drive[i].1,
            Err(_) => self.off,
        }
    }

    /// Polaron-frame trajectory from the ground state; `on_snapshot` receives
    /// the state at every step listed in `snapshot_steps`.
    pub fn trajectory(
        &self,
        snapshot_steps: &[usize],
        on_snapshot: &mut dyn FnMut(PmeState<T>) -> Result<()>,
    ) -> Result<Trajectory<T>> {
        let mut rho = [C::zero(); 4];
        rho[GG] = C::new(T::one(), T::zero());
        let mut out = Vec::with_capacity(self.n_steps + 1);
        let mut inv = Invariants::new();
        let mut snaps = snapshot_steps.iter().peekable();
        for n in 0..=self.n_steps {
            if n > 0 {
                rho = self.step_propagator(n).apply(&rho);
            }
            if !rho.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::Numerical { what: "PME propagation".into(), detail: format!("non-finite state at step {n}") });
            }
            inv.record(&rho);
            out.push(rho);
            while snaps.peek() == Some(&&n) {
                snaps.next();
                on_snapshot(PmeState::new(n, rho))?;
            }
        }
        if inv.min_eigenvalue < -1e-6 {
            log::warn!("PME trajectory leaves the physical state space: eigenvalue {:.3e}", inv.min_eigenvalue);
        }
        Ok(Trajectory { dt: self.dt, rho: out, invariants: inv })
    }

    /// Continues `start` and reports the reduced state at each requested step.
    pub fn run(&self, start: &PmeState<T>, requests: &[usize], sink: &mut dyn FnMut(usize, [C<T>; 4])) -> Result<()> {
        let mut v: Vec<C<T>> = start.reduced().to_vec();
        let mut e = start.step;
        let mut ri = requests.partition_point(|&r| r < e);
        // inside a pulse: step until the drive is off
        if let Some(&(_, end)) = self.regions.iter().find(|r| r.0 <= e + 1 && e < r.1) {
            let mut rho = start.reduced();
            while e < end && ri < requests.len() {
                while ri < requests.len() && requests[ri] == e {
                    sink(e, rho);
                    ri += 1;
                }
                e += 1;
                rho = self.step_propagator(e).apply(&rho);
            }
            v = rho.to_vec();
        }
        loop {
            let region = self.regions.iter().find(|r| r.0 > e).copied();
            let stop = region.map(|r| r.0 - 1).unwrap_or(self.n_steps);
            while ri < requests.len() && requests[ri] <= stop {
                let u = requests[ri];
                sink(u, self.free.read(&v, u - e));
                ri += 1;
            }
            let Some((s, _)) = region else { break };
            if ri >= requests.len() {
                break;
            }
            v = self.free.advance(&v, s - 1 - e);
            let cr = self.crossings.iter().find(|c| c.table.start == s).expect("one crossing per region");
            let end = cr.table.end();
            while ri < requests.len() && requests[ri] <= end {
                let u = requests[ri];
                sink(u, cr.table.read(&v, u, None));
                ri += 1;
            }
            v = matvec(&cr.exit, &v, 4);
            e = end;
        }
        if ri < requests.len() && requests[ri] > self.n_steps {
            return Err(Error::Numerical { what: "PME delay propagation".into(), detail: "request beyond horizon".into() });
        }
        Ok(())
    }
}

/// `σ_x, σ_y, σ_z` in the basis `{G, X}` with `σ_z = |X⟩⟨X| − |G⟩⟨G|`.
fn paulis<T: Real>() -> [Op2<T>; 3] {
    let one = C::new(T::one(), T::zero());
    let i = C::new(T::zero(), T::one());
    let z = C::zero();
    [
        Op2([[z, one], [one, z]]),
        Op2([[z, i], [-i, z]]),
        Op2([[-one, z], [z, one]]),
    ]
}

/// Polaron-frame single-time trajectory for a model.
pub fn pme_propagate<T: Real>(model: &Model<T>, dt: T, t_max: T) -> Result<Trajectory<T>> {
    PolaronSolver::new(model, dt, t_max)?.trajectory(&[], &mut |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::XX;
    use crate::model::PhysicsConfig;

    fn cfg(lambda: f64) -> PhysicsConfig {
        let mut c = PhysicsConfig::default();
        c.bath.lambda = lambda;
        c.pulses.period = 200.0;
        c
    }

    #[test]
    fn zero_coupling_is_plain_lindblad() {
        let m = Model::<f64>::new(&cfg(0.0)).unwrap();
        let s = PolaronSolver::new(&m, 0.5, 100.0).unwrap();
        for f in [0.0, 0.3, 1.0] {
            let a = s.generator(f);
            let b = lindblad_generator(0.0, f, m.gamma);
            assert!((a - b).max_abs() < 1e-15);
        }
    }

    #[test]
    fn generator_preserves_trace_and_hermiticity() {
        let m = Model::<f64>::new(&cfg(1.0)).unwrap();
        let s = PolaronSolver::new(&m, 0.5, 100.0).unwrap();
        let l = s.generator(0.8);
        let row = l.trace_row();
        assert!(row.iter().all(|z| z.norm() < 1e-14), "{row:?}");
        // Hermitian input stays Hermitian
        let rho = [C::new(0.6, 0.0), C::new(0.1, 0.2), C::new(0.1, -0.2), C::new(0.4, 0.0)];
        let d = Op2::from_vec(&l.apply(&rho));
        assert!(d.hermiticity_error() < 1e-14);
    }

    #[test]
    fn phonons_damp_the_pi_pulse() {
        let free = Model::<f64>::new(&cfg(0.0)).unwrap();
        let coupled = Model::<f64>::new(&cfg(1.0)).unwrap();
        let a = pme_propagate(&free, 0.5, 60.0).unwrap();
        let b = pme_propagate(&coupled, 0.5, 60.0).unwrap();
        let n = 80;
        assert!(a.rho[n][XX].re > 0.97, "{}", a.rho[n][XX].re);
        assert!(b.rho[n][XX].re < a.rho[n][XX].re && b.rho[n][XX].re > 0.8, "{}", b.rho[n][XX].re);
    }

    #[test]
    fn runs_match_trajectory() {
        let m = Model::<f64>::new(&cfg(1.0)).unwrap();
        let s = PolaronSolver::new(&m, 0.5, 700.0).unwrap();
        let tr = s.trajectory(&[], &mut |_| Ok(())).unwrap();
        let req: Vec<usize> = (10..=s.n_steps()).step_by(7).collect();
        let mut got = Vec::new();
        s.run(&PmeState::new(10, tr.rho[10]), &req, &mut |u, r| got.push((u, r))).unwrap();
        assert_eq!(got.len(), req.len());
        for (u, r) in got {
            for k in 0..4 {
                assert!((r[k] - tr.rho[u][k]).norm() < 1e-12);
            }
        }
    }
}
