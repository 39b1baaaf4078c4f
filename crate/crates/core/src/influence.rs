//! Bath autocorrelation, discretized influence-functional coefficients and
//! polaron-frame phonon functions.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::model::{Model, PhononBath};
use crate::quad::{CompositeGrid, GaussLegendre};
use crate::{Real, C};

/// `C(t) = ∫ dω J(ω) [coth(ħω/2k_BT) cos ωt − i sin ωt]` on a cached
/// frequency quadrature.
#[derive(Debug, Clone)]
pub struct BathCorrelation<T> {
    omega: Vec<T>,
    /// `w · J(ω) · coth`
    even: Vec<T>,
    /// `w · J(ω)`
    odd: Vec<T>,
    t_cap: T,
}

impl<T: Real> BathCorrelation<T> {
    /// Quadrature accurate for `|t| ≤ t_cap`.
    pub fn new(model: &Model<T>, t_cap: T) -> Self {
        let grid = model.frequency_grid(t_cap);
        Self::on_grid(model, &grid, t_cap, |_| T::one())
    }

    fn on_grid(model: &Model<T>, grid: &CompositeGrid<T>, t_cap: T, weight: impl Fn(T) -> T) -> Self {
        let mut omega = Vec::with_capacity(grid.nodes.len());
        let mut even = Vec::with_capacity(grid.nodes.len());
        let mut odd = Vec::with_capacity(grid.nodes.len());
        for (&w, &q) in grid.nodes.iter().zip(&grid.weights) {
            let j = model.j(w) * weight(w) * q;
            omega.push(w);
            even.push(j * model.coth(w));
            odd.push(j);
        }
        Self { omega, even, odd, t_cap }
    }

    pub fn at(&self, t: T) -> C<T> {
        let mut re = T::zero();
        let mut im = T::zero();
        for i in 0..self.omega.len() {
            let (s, c) = (self.omega[i] * t).sin_cos();
            re += self.even[i] * c;
            im -= self.odd[i] * s;
        }
        C::new(re, im)
    }

    pub fn t_cap(&self) -> T {
        self.t_cap
    }

    /// `∫_dt^∞ ds ∫₀^dt ds' C(s − s')`, the sum of every coupling cell,
    /// `−∫ dω J(ω) [coth (1 − cos ω dt) + i sin ω dt] / ω²`.
    pub fn coupling_total(&self, dt: T) -> C<T> {
        let mut re = T::zero();
        let mut im = T::zero();
        for i in 0..self.omega.len() {
            let w = self.omega[i];
            let s = (w * dt).sin();
            // 1 − cos without cancellation
            let h = (w * dt * T::lit(0.5)).sin();
            let one_minus_cos = T::lit(2.0) * h * h;
            re -= self.even[i] * one_minus_cos / (w * w);
            im -= self.odd[i] * s / (w * w);
        }
        C::new(re, im)
    }

    /// Time after which `|C(t)|` stays below `10⁻³ |C(0)|`, scanned up to
    /// `t_cap`. `None` when the coupling vanishes or the tail never settles.
    pub fn memory_time(&self) -> Option<T> {
        let c0 = self.at(T::zero()).norm();
        if c0 == T::zero() {
            return None;
        }
        let h = T::lit(0.02);
        let n = (self.t_cap / h).to_usize().unwrap_or(0);
        let mut last_above = None;
        for i in 0..=n {
            let t = h * T::from_usize_lossy(i);
            if self.at(t).norm() >= T::lit(1e-3) * c0 {
                last_above = Some(t);
            }
        }
        match last_above {
            Some(t) if t + h < self.t_cap => Some(t + h),
            _ => None,
        }
    }
}

/// `C(t)` for a bath description at a single time.
pub fn bath_correlation(t: f64, bath: &PhononBath) -> Result<crate::Complex64> {
    let cfg = crate::model::PhysicsConfig { bath: bath.clone(), ..Default::default() };
    let model = Model::<f64>::new(&cfg)?;
    let corr = BathCorrelation::new(&model, t.abs().max(1.0));
    Ok(corr.at(t))
}

/// Influence-functional coefficients on the step grid.
///
/// `diag` is the self term of one step, `off[k-1]` couples two steps `k`
/// apart (`k = 1..=n_c`). `tail` is the sum of the cells beyond `n_c`; the
/// propagator adds it to the last retained coupling so the long-time
/// dephasing stays exact.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaTable<T> {
    pub dt: T,
    pub n_c: usize,
    pub diag: C<T>,
    pub off: Vec<C<T>>,
    pub tail: C<T>,
}

impl<T: Real> EtaTable<T> {
    /// Cell integrals with a tensor-product Gauss–Legendre rule of order 16,
    /// checked against order 24.
    pub fn compute(model: &Model<T>, dt: T, n_c: usize) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(crate::error::domain("eta table needs dt > 0"));
        }
        let t_cap = dt * T::from_usize_lossy(n_c + 2);
        let corr = BathCorrelation::new(model, t_cap);
        let lo = GaussLegendre::<T>::new(16);
        let hi = GaussLegendre::<T>::new(24);
        let check = |name: String, a: C<T>, b: C<T>, floor: T| -> Result<C<T>> {
            if !(a.re.is_finite() && a.im.is_finite()) || (a - b).norm() > T::lit(1e-9) * b.norm().max(floor) {
                return Err(Error::Numerical {
                    what: format!("eta cell {name}"),
                    detail: format!("order-16 {a} vs order-24 {b}"),
                });
            }
            Ok(b)
        };
        let diag = check("diag".into(), diag_cell(&corr, &lo, dt), diag_cell(&corr, &hi, dt), T::lit(1e-30))?;
        // cells far below the self term only need absolute accuracy
        let floor = diag.norm() * T::lit(1e-6);
        let mut off = Vec::with_capacity(n_c);
        for k in 1..=n_c {
            let a = off_cell(&corr, &lo, dt, k);
            let b = off_cell(&corr, &hi, dt, k);
            off.push(check(format!("k={k}"), a, b, floor)?);
        }
        let tail = if n_c == 0 {
            C::zero()
        } else {
            off.iter().fold(corr.coupling_total(dt), |acc, z| acc - *z)
        };
        Ok(Self { dt, n_c, diag, off, tail })
    }

    /// Coefficient for step separation `l` (`0` is the self term).
    pub fn get(&self, l: usize) -> C<T> {
        if l == 0 {
            self.diag
        } else {
            self.off[l - 1]
        }
    }

    /// Coefficient used by the propagator: as [`get`](Self::get), with the
    /// tail folded into `l = n_c`.
    pub fn coupling(&self, l: usize) -> C<T> {
        if l == self.n_c && l > 0 {
            self.off[l - 1] + self.tail
        } else {
            self.get(l)
        }
    }

    pub fn max_abs(&self) -> T {
        self.off.iter().map(|z| z.norm()).fold(self.diag.norm(), T::max)
    }

    /// Whether the last coefficient dropped below 1% of the self term.
    pub fn memory_truncated_cleanly(&self) -> bool {
        match self.off.last() {
            Some(last) => last.norm() < T::lit(0.01) * self.diag.norm() || self.diag.is_zero(),
            None => true,
        }
    }
}

/// `∫₀^dt ds ∫₀^s ds' C(s − s')`, with `s' = s·v`.
fn diag_cell<T: Real>(corr: &BathCorrelation<T>, rule: &GaussLegendre<T>, dt: T) -> C<T> {
    let mut acc = C::zero();
    for (s, ws) in rule.mapped(T::zero(), dt) {
        for (v, wv) in rule.mapped(T::zero(), T::one()) {
            acc = acc + corr.at(s * (T::one() - v)) * (ws * wv * s);
        }
    }
    acc
}

/// `∫_{k dt}^{(k+1) dt} ds ∫₀^dt ds' C(s − s')`
fn off_cell<T: Real>(corr: &BathCorrelation<T>, rule: &GaussLegendre<T>, dt: T, k: usize) -> C<T> {
    let lo = dt * T::from_usize_lossy(k);
    let mut acc = C::zero();
    for (s, ws) in rule.mapped(lo, lo + dt) {
        for (sp, wsp) in rule.mapped(T::zero(), dt) {
            acc = acc + corr.at(s - sp) * (ws * wsp);
        }
    }
    acc
}

const ETA_MAGIC: &[u8; 8] = b"QDETA\0\0\0";
/// Bumped whenever the quadrature behind the table changes.
pub const ETA_SCHEMA_VERSION: u32 = 2;

/// Key of a cached η-table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaKey {
    pub dt: f64,
    pub n_c: u32,
    pub lambda: f64,
    pub temperature: f64,
    pub material_hash: u64,
}

impl EtaKey {
    pub fn new(bath: &PhononBath, dt: f64, n_c: usize) -> Self {
        Self {
            dt,
            n_c: n_c as u32,
            lambda: bath.lambda,
            temperature: bath.temperature,
            material_hash: bath.material_hash(),
        }
    }

    pub fn file_name(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(ETA_SCHEMA_VERSION.to_le_bytes());
        h.update(self.dt.to_le_bytes());
        h.update(self.n_c.to_le_bytes());
        h.update(self.lambda.to_le_bytes());
        h.update(self.temperature.to_le_bytes());
        h.update(self.material_hash.to_le_bytes());
        let d = h.finalize();
        let hex: String = d[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("eta-{hex}.bin")
    }
}

/// Writes the table in the cache layout:
///
/// ```text
/// offset  size  field
/// 0       8     magic "QDETA\0\0\0"
/// 8       4     schema version, u32 LE
/// 12      8     dt (ps), f64 LE
/// 20      4     n_c, u32 LE
/// 24      8     lambda, f64 LE
/// 32      8     temperature (K), f64 LE
/// 40      8     material hash, u64 LE
/// 48      4     entry count = n_c + 2, u32 LE
/// 52      16·n  entries (re, im) f64 LE: diag, off[1], …, off[n_c], tail
/// ```
pub fn write_eta<W: Write>(mut w: W, key: &EtaKey, table: &EtaTable<f64>) -> Result<()> {
    w.write_all(ETA_MAGIC)?;
    w.write_all(&ETA_SCHEMA_VERSION.to_le_bytes())?;
    w.write_all(&key.dt.to_le_bytes())?;
    w.write_all(&key.n_c.to_le_bytes())?;
    w.write_all(&key.lambda.to_le_bytes())?;
    w.write_all(&key.temperature.to_le_bytes())?;
    w.write_all(&key.material_hash.to_le_bytes())?;
    let count = (table.n_c + 2) as u32;
    w.write_all(&count.to_le_bytes())?;
    for l in 0..=table.n_c + 1 {
        let z = if l > table.n_c { table.tail } else { table.get(l) };
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_eta<R: Read>(mut r: R) -> Result<(EtaKey, EtaTable<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != ETA_MAGIC {
        return Err(Error::Format("not an eta table".into()));
    }
    let version = read_u32(&mut r)?;
    if version != ETA_SCHEMA_VERSION {
        return Err(Error::Format(format!("eta schema version {version}, expected {ETA_SCHEMA_VERSION}")));
    }
    let key = EtaKey {
        dt: read_f64(&mut r)?,
        n_c: read_u32(&mut r)?,
        lambda: read_f64(&mut r)?,
        temperature: read_f64(&mut r)?,
        material_hash: read_u64(&mut r)?,
    };
    let count = read_u32(&mut r)?;
    if count != key.n_c + 2 {
        return Err(Error::Format(format!("entry count {count} does not match n_c {}", key.n_c)));
    }
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let re = read_f64(&mut r)?;
        let im = read_f64(&mut r)?;
        entries.push(C::new(re, im));
    }
    let tail = entries.pop().expect("count checked");
    let table = EtaTable { dt: key.dt, n_c: key.n_c as usize, diag: entries[0], off: entries[1..].to_vec(), tail };
    Ok((key, table))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Loads the table for `key` from `dir`, computing and persisting it on a miss.
pub fn cached_eta(dir: &Path, model: &Model<f64>, key: &EtaKey) -> Result<EtaTable<f64>> {
    let path: PathBuf = dir.join(key.file_name());
    if let Ok(file) = std::fs::File::open(&path) {
        if let Ok((stored, table)) = read_eta(std::io::BufReader::new(file)) {
            if stored == *key {
                return Ok(table);
            }
        }
    }
    let table = EtaTable::compute(model, key.dt, key.n_c as usize)?;
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write_eta(&mut f, key, &table)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, &path)?;
    Ok(table)
}

/// Polaron-frame phonon functions: `φ(t)` sampled on a fine delay grid and
/// the renormalization `⟨B⟩`.
#[derive(Debug, Clone)]
pub struct PolaronKernel<T> {
    /// Sample spacing of `phi`.
    pub h: T,
    /// `φ(k·h)` for `k = 0..len`; zero beyond.
    pub phi: Vec<C<T>>,
    pub b_avg: T,
}

impl<T: Real> PolaronKernel<T> {
    /// `h` must be a divisor of the simulation step so step times hit samples.
    pub fn new(model: &Model<T>, h: T) -> Result<Self> {
        if model.coupling == T::zero() {
            return Ok(Self { h, phi: vec![C::zero()], b_avg: T::one() });
        }
        let mut t_cap = T::lit(25.0);
        loop {
            let grid = model.frequency_grid(t_cap);
            let corr = BathCorrelation::on_grid(model, &grid, t_cap, |w| T::one() / (w * w));
            let n = (t_cap / h).to_usize().unwrap_or(0);
            let phi0 = corr.at(T::zero());
            let mut phi = Vec::with_capacity(n + 1);
            for k in 0..=n {
                phi.push(corr.at(h * T::from_usize_lossy(k)));
            }
            // settled when the last 20% of the window is below 10⁻¹² φ(0)
            let tail_start = n - n / 5;
            let settled = phi[tail_start..].iter().all(|z| z.norm() < T::lit(1e-12) * phi0.re);
            if settled {
                let keep = phi.iter().rposition(|z| z.norm() >= T::lit(1e-12) * phi0.re).unwrap_or(0) + 1;
                phi.truncate(keep);
                let b_avg = (-phi0.re * T::lit(0.5)).exp();
                if !(b_avg > T::zero()) {
                    return Err(Error::Numerical {
                        what: "polaron renormalization".into(),
                        detail: format!("<B> underflows for phi(0) = {}", phi0.re),
                    });
                }
                return Ok(Self { h, phi, b_avg });
            }
            if t_cap > T::lit(400.0) {
                return Err(Error::Numerical {
                    what: "polaron function".into(),
                    detail: "phi(t) did not decay within 400 ps".into(),
                });
            }
            t_cap = t_cap * T::lit(2.0);
        }
    }

    /// `φ(t)` for `t ≥ 0`, linearly interpolated between samples.
    pub fn phi(&self, t: T) -> C<T> {
        let x = t / self.h;
        let k = x.floor().to_usize().unwrap_or(usize::MAX);
        if k + 1 >= self.phi.len() {
            return if k + 1 == self.phi.len() { self.phi[k] } else { C::zero() };
        }
        let frac = x - T::from_usize_lossy(k);
        self.phi[k] * (T::one() - frac) + self.phi[k + 1] * frac
    }

    /// Phonon part of the emitted-field correlation, `⟨B⟩² e^{φ(t)}`.
    pub fn phonon_g1(&self, t: T) -> C<T> {
        let phi0 = self.phi[0].re;
        let p = self.phi(t);
        C::new(p.re - phi0, p.im).exp()
    }

    /// `∫₀^∞ dτ ⟨B⟩² (e^{±φ(τ)} − 1) e^{iΔτ}` by Simpson on the sample grid;
    /// `sign` selects `e^{+φ}` or `e^{−φ}`.
    pub fn half_fourier(&self, sign: T, delta: T) -> C<T> {
        let phi0 = self.phi[0].re;
        let b2 = (-phi0).exp();
        let n = self.phi.len();
        let f = |k: usize| -> C<T> {
            let p = self.phi[k] * sign;
            let tau = self.h * T::from_usize_lossy(k);
            let kern = C::new(p.re - phi0, p.im).exp() - C::new(b2, T::zero());
            kern * C::new(T::zero(), delta * tau).exp()
        };
        let mut m = n - 1;
        if m % 2 == 1 {
            m -= 1;
        }
        let mut acc = C::zero();
        if m >= 2 {
            acc = f(0) + f(m);
            for k in 1..m {
                let w = if k % 2 == 1 { T::lit(4.0) } else { T::lit(2.0) };
                acc = acc + f(k) * w;
            }
            acc = acc * (self.h / T::lit(3.0));
        }
        if m + 1 < n {
            acc = acc + (f(m) + f(m + 1)) * (self.h * T::lit(0.5));
        }
        acc
    }
}

/// `(φ(t), ⟨B⟩)` for a bath description.
pub fn polaron_displacement_functions(t: f64, bath: &PhononBath) -> Result<(crate::Complex64, f64)> {
    let cfg = crate::model::PhysicsConfig { bath: bath.clone(), ..Default::default() };
    let model = Model::<f64>::new(&cfg)?;
    let kernel = PolaronKernel::new(&model, 0.01)?;
    Ok((kernel.phi(t.abs()), kernel.b_avg))
}
