//! Iterative path sum over an augmented density matrix (ADM).
//!
//! The ADM holds one Liouville index per retained time slice, newest slice in
//! the lowest base-4 digit: `idx = Σ_l α_l 4^l`. A step applies the emitter
//! propagator to the newest slice, multiplies in the influence factors that
//! couple the new slice to the `n_c` retained ones, and sums out the oldest.
//!
//! Without drive the emitter propagator never mixes populations with
//! coherences, so once a pulse has left the memory window the ADM collapses
//! onto a handful of path configurations (`GGG…`, `GX GX…`, `GG…XX…`). Runs
//! exploit this: outside pulses they switch to that compact subspace, where
//! precomputed tables replace the step loop.

use std::io::{Read, Write};

use num_traits::Zero;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::influence::{read_f64, read_u32, read_u64, EtaTable};
use crate::linalg::{lindblad_generator, split, Op2, Super, GX, XG, XX};
use crate::model::Model;
use crate::stationary::{CheckpointTable, Stationary};
use crate::{Real, C};

/// Substeps used to assemble a propagator over a driven step.
const DRIVE_SUBSTEPS: usize = 32;
/// Below this many entries per chunk the dense kernel stays sequential.
const PAR_CHUNK: usize = 1 << 14;

/// Which side of the density matrix an inserted operator multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
enum Data<T> {
    Sparse(Vec<(u32, C<T>)>),
    Dense(Vec<C<T>>),
}

/// Snapshot of an augmented density matrix.
///
/// An inserted operator is kept as a pending superoperator and applied to the
/// newest slice together with the next step propagator; the influence
/// functional then sees the path value of the insertion step unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Adm<T> {
    /// Step index `n` of the time `t_n = n·dt` the tensor refers to.
    pub step: usize,
    /// Number of real (not padded) slices, at most `n_c`.
    pub depth: usize,
    slices: usize,
    data: Data<T>,
    pending: Option<Super<T>>,
}

impl<T: Real> Adm<T> {
    /// Emitter in the ground state, bath thermal, at `t = 0`.
    pub fn ground(slices: usize) -> Self {
        Self::from_reduced(&[C::new(T::one(), T::zero()), C::zero(), C::zero(), C::zero()], 0, slices)
    }

    /// Factorized emitter-bath state with no memory.
    pub fn from_reduced(rho: &[C<T>; 4], step: usize, slices: usize) -> Self {
        let entries = (0..4).filter(|&a| !rho[a].is_zero()).map(|a| (a as u32, rho[a])).collect();
        Self { step, depth: 0, slices: slices.max(1), data: Data::Sparse(entries), pending: None }
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        match &self.data {
            Data::Sparse(e) => e.len(),
            Data::Dense(v) => v.iter().filter(|z| !z.is_zero()).count(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.data, Data::Dense(_))
    }

    pub fn pending(&self) -> Option<&Super<T>> {
        self.pending.as_ref()
    }

    /// Multiplies `op` onto the given side at the current time.
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

    /// Entry at a configuration index with any pending insertion applied.
    pub fn get(&self, idx: usize) -> C<T> {
        let raw = |i: usize| -> C<T> {
            match &self.data {
                Data::Sparse(e) => e.iter().find(|(j, _)| *j as usize == i).map(|e| e.1).unwrap_or_else(C::zero),
                Data::Dense(v) => v[i],
            }
        };
        match &self.pending {
            None => raw(idx),
            Some(p) => {
                let a = idx & 3;
                let base = idx & !3;
                (0..4).fold(C::zero(), |acc, b| acc + p.0[a][b] * raw(base | b))
            }
        }
    }

    /// All entries as a dense vector of length `4^slices`, pending applied.
    pub fn to_dense(&self) -> Vec<C<T>> {
        let len = 1usize << (2 * self.slices);
        let mut raw = vec![C::zero(); len];
        match &self.data {
            Data::Sparse(e) => {
                for &(i, z) in e {
                    raw[i as usize] = z;
                }
            }
            Data::Dense(v) => raw.copy_from_slice(v),
        }
        if let Some(p) = &self.pending {
            for chunk in raw.chunks_mut(4) {
                let v = [chunk[0], chunk[1], chunk[2], chunk[3]];
                chunk.copy_from_slice(&p.apply(&v));
            }
        }
        raw
    }

    /// Reduced density matrix (memory slices summed out), pending applied.
    pub fn reduced(&self) -> [C<T>; 4] {
        let mut r = [C::zero(); 4];
        match &self.data {
            Data::Sparse(e) => {
                for &(i, z) in e {
                    r[i as usize & 3] += z;
                }
            }
            Data::Dense(v) => {
                for (i, z) in v.iter().enumerate() {
                    r[i & 3] += *z;
                }
            }
        }
        match &self.pending {
            Some(p) => p.apply(&r),
            None => r,
        }
    }

    /// Memory traced out: the reduced state restarted with a fresh thermal bath.
    pub fn trace_out(&self) -> Self {
        Self::from_reduced(&self.reduced(), self.step, self.slices)
    }
}

const ADM_MAGIC: &[u8; 8] = b"QDADM\0\0\0";
pub const ADM_SCHEMA_VERSION: u32 = 1;

impl Adm<f64> {
    /// Writes a snapshot:
    ///
    /// ```text
    /// offset  size  field
    /// 0       8     magic "QDADM\0\0\0"
    /// 8       4     schema version, u32 LE
    /// 12      8     step, u64 LE
    /// 20      4     depth, u32 LE
    /// 24      4     slices, u32 LE
    /// 28      4     flags, u32 LE: bit 0 dense, bit 1 pending present
    /// 32      8     entry count, u64 LE
    /// 40      256   pending superoperator, 16 × (re, im) f64 LE, if flagged
    /// …             entries: dense as (re, im) f64 LE;
    ///               sparse as index u32 LE followed by (re, im) f64 LE
    /// ```
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(ADM_MAGIC)?;
        w.write_all(&ADM_SCHEMA_VERSION.to_le_bytes())?;
        w.write_all(&(self.step as u64).to_le_bytes())?;
        w.write_all(&(self.depth as u32).to_le_bytes())?;
        w.write_all(&(self.slices as u32).to_le_bytes())?;
        let flags = u32::from(self.is_dense()) | (u32::from(self.pending.is_some()) << 1);
        w.write_all(&flags.to_le_bytes())?;
        let count = match &self.data {
            Data::Sparse(e) => e.len(),
            Data::Dense(v) => v.len(),
        };
        w.write_all(&(count as u64).to_le_bytes())?;
        let mut put = |z: C<f64>| -> std::io::Result<()> {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())
        };
        if let Some(p) = &self.pending {
            for z in p.0.iter().flatten() {
                put(*z)?;
            }
        }
        match &self.data {
            Data::Dense(v) => {
                for z in v {
                    put(*z)?;
                }
            }
            Data::Sparse(e) => {
                for &(i, z) in e {
                    w.write_all(&i.to_le_bytes())?;
                    w.write_all(&z.re.to_le_bytes())?;
                    w.write_all(&z.im.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != ADM_MAGIC {
            return Err(Error::Format("not an ADM snapshot".into()));
        }
        let version = read_u32(&mut r)?;
        if version != ADM_SCHEMA_VERSION {
            return Err(Error::Format(format!("ADM schema version {version}, expected {ADM_SCHEMA_VERSION}")));
        }
        let step = read_u64(&mut r)? as usize;
        let depth = read_u32(&mut r)? as usize;
        let slices = read_u32(&mut r)? as usize;
        let flags = read_u32(&mut r)?;
        let count = read_u64(&mut r)? as usize;
        if slices == 0 || slices > 15 || depth > slices {
            return Err(Error::Format(format!("bad ADM shape: depth {depth}, slices {slices}")));
        }
        let len = 1usize << (2 * slices);
        let get = |r: &mut R| -> Result<C<f64>> { Ok(C::new(read_f64(r)?, read_f64(r)?)) };
        let pending = if flags & 2 != 0 {
            let mut p = Super::zero();
            for row in p.0.iter_mut() {
                for z in row.iter_mut() {
                    *z = get(&mut r)?;
                }
            }
            Some(p)
        } else {
            None
        };
        let data = if flags & 1 != 0 {
            if count != len {
                return Err(Error::Format(format!("dense ADM with {count} entries, expected {len}")));
            }
            Data::Dense((0..count).map(|_| get(&mut r)).collect::<Result<_>>()?)
        } else {
            let mut e = Vec::with_capacity(count.min(len));
            for _ in 0..count {
                let i = read_u32(&mut r)?;
                if i as usize >= len {
                    return Err(Error::Format(format!("ADM index {i} out of range")));
                }
                e.push((i, get(&mut r)?));
            }
            Data::Sparse(e)
        };
        Ok(Self { step, depth, slices, data, pending })
    }
}

/// Deviations of a reduced density matrix from a physical state.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct Invariants {
    pub max_trace_error: f64,
    pub max_hermiticity_error: f64,
    pub min_eigenvalue: f64,
}

impl Invariants {
    pub fn new() -> Self {
        Self { max_trace_error: 0.0, max_hermiticity_error: 0.0, min_eigenvalue: f64::INFINITY }
    }

    pub fn record<T: Real>(&mut self, rho: &[C<T>; 4]) {
        let op = Op2::from_vec(rho);
        let tr = op.trace();
        let terr = ((tr.re - T::one()).abs() + tr.im.abs()).f64();
        self.max_trace_error = self.max_trace_error.max(terr);
        self.max_hermiticity_error = self.max_hermiticity_error.max(op.hermiticity_error().f64());
        let ev = op.hermitian_eigenvalues();
        self.min_eigenvalue = self.min_eigenvalue.min(ev[0].f64().min(ev[1].f64()));
    }

    pub fn merge(&mut self, o: &Self) {
        self.max_trace_error = self.max_trace_error.max(o.max_trace_error);
        self.max_hermiticity_error = self.max_hermiticity_error.max(o.max_hermiticity_error);
        self.min_eigenvalue = self.min_eigenvalue.min(o.min_eigenvalue);
    }

    /// Trace within 10⁻⁸, Hermitian within 10⁻⁹, eigenvalues above −10⁻⁶.
    pub fn hold(&self) -> bool {
        self.max_trace_error < 1e-8 && self.max_hermiticity_error < 1e-9 && self.min_eigenvalue > -1e-6
    }
}

/// Reduced trajectory on the step grid.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub dt: T,
    /// `rho[n]` at `t_n = n·dt`, vectorized.
    pub rho: Vec<[C<T>; 4]>,
    pub invariants: Invariants,
}

impl<T: Real> Trajectory<T> {
    pub fn occupation(&self, n: usize) -> T {
        self.rho[n][XX].re
    }
}

/// Mutable scratch space for one propagation.
pub struct Workspace<T> {
    cur: Vec<C<T>>,
    next: Vec<C<T>>,
    marks: Vec<bool>,
    nz: Vec<u32>,
    nz_next: Vec<u32>,
    sparse: bool,
    step: usize,
    depth: usize,
    pending: Option<Super<T>>,
}

impl<T: Real> Workspace<T> {
    pub fn new(slices: usize) -> Self {
        let len = 1usize << (2 * slices);
        Self {
            cur: vec![C::zero(); len],
            next: vec![C::zero(); len],
            marks: vec![false; len],
            nz: Vec::new(),
            nz_next: Vec::new(),
            sparse: true,
            step: 0,
            depth: 0,
            pending: None,
        }
    }

    fn clear(&mut self) {
        if self.sparse {
            for &i in &self.nz {
                self.cur[i as usize] = C::zero();
            }
        } else {
            self.cur.fill(C::zero());
        }
        self.nz.clear();
        self.sparse = true;
    }

    fn load(&mut self, adm: &Adm<T>) {
        self.clear();
        match &adm.data {
            Data::Sparse(e) => {
                for &(i, z) in e {
                    if self.cur[i as usize].is_zero() {
                        self.nz.push(i);
                    }
                    self.cur[i as usize] += z;
                }
                self.sparse = true;
            }
            Data::Dense(v) => {
                self.cur.copy_from_slice(v);
                self.sparse = false;
            }
        }
        self.step = adm.step;
        self.depth = adm.depth;
        self.pending = adm.pending;
    }

    fn snapshot(&self, slices: usize) -> Adm<T> {
        let data = if self.sparse {
            let mut e: Vec<(u32, C<T>)> = self.nz.iter().map(|&i| (i, self.cur[i as usize])).collect();
            e.sort_unstable_by_key(|x| x.0);
            Data::Sparse(e)
        } else {
            Data::Dense(self.cur.clone())
        };
        Adm { step: self.step, depth: self.depth, slices, data, pending: self.pending }
    }

    fn reduced(&self) -> [C<T>; 4] {
        let mut r = [C::zero(); 4];
        if self.sparse {
            for &i in &self.nz {
                r[i as usize & 3] += self.cur[i as usize];
            }
        } else {
            for (i, z) in self.cur.iter().enumerate() {
                r[i & 3] += *z;
            }
        }
        match &self.pending {
            Some(p) => p.apply(&r),
            None => r,
        }
    }
}

/// Path configurations reachable without drive once the window is full.
#[derive(Debug, Clone)]
struct Compact<T> {
    configs: Vec<u32>,
    /// `(to, from, factor)`
    trans: Vec<(usize, usize, C<T>)>,
    free: Stationary<T>,
}

impl<T: Real> Compact<T> {
    fn position(&self, idx: u32) -> Option<usize> {
        self.configs.binary_search(&idx).ok()
    }

    fn step(&self, v: &[C<T>]) -> Vec<C<T>> {
        let mut out = vec![C::zero(); v.len()];
        for &(to, from, f) in &self.trans {
            out[to] += f * v[from];
        }
        out
    }

    fn reduced(&self, v: &[C<T>]) -> [C<T>; 4] {
        let mut r = [C::zero(); 4];
        for (i, &c) in self.configs.iter().enumerate() {
            r[c as usize & 3] += v[i];
        }
        r
    }
}

/// Propagator for one parameter point: step matrices, influence factors and
/// the precomputed pulse-free tables.
#[derive(Debug, Clone)]
pub struct PathIntegral<T> {
    dt: T,
    n_c: usize,
    slices: usize,
    n_steps: usize,
    eta: EtaTable<T>,
    off: Super<T>,
    drive: Vec<(usize, Super<T>)>,
    regions: Vec<(usize, usize)>,
    f0: [C<T>; 4],
    /// `fl[l − 1][a][b]`: factor between the new index `a` and the index `b`
    /// `l` steps older.
    fl: Vec<[[C<T>; 4]; 4]>,
    compact: Compact<T>,
    checkpoints: Vec<Checkpoint<T>>,
}

#[derive(Debug, Clone)]
struct Checkpoint<T> {
    table: CheckpointTable<T>,
    /// Column `j`: compact vector at `table.end()` for the basis vector `e_j`.
    exit: Vec<C<T>>,
}

/// `(ν⁺ − ν⁻)` and the exponent of the influence factor between indices.
fn influence_exponent<T: Real>(eta: C<T>, a: usize, b: usize) -> C<T> {
    let (pa, ma) = split(a);
    let (pb, mb) = split(b);
    let da = T::from_usize_lossy(pa) - T::from_usize_lossy(ma);
    if da.is_zero() {
        return C::zero();
    }
    let term = eta * T::from_usize_lossy(pb) - eta.conj() * T::from_usize_lossy(mb);
    -(term * da)
}

#[inline]
fn coupled(a: usize) -> bool {
    a == GX || a == XG
}

impl<T: Real> PathIntegral<T> {
    /// Builds the propagator for steps `1..=n_steps`. Refuses tensors larger
    /// than `cap_bytes`.
    pub fn new(model: &Model<T>, eta: EtaTable<T>, n_steps: usize, cap_bytes: u64) -> Result<Self> {
        let n_c = eta.n_c;
        let slices = n_c.max(1);
        let entries = 1u128 << (2 * slices.min(60));
        let required = entries.saturating_mul(std::mem::size_of::<C<T>>() as u128 * 2);
        if slices > 15 || required > cap_bytes as u128 {
            return Err(Error::Resource { required_bytes: required.min(u64::MAX as u128) as u64, cap_bytes });
        }
        let dt = eta.dt;
        let delta = model.bare_detuning();
        let off = lindblad_generator(delta, T::zero(), model.gamma).scale(C::new(dt, T::zero())).expm();
        let t = |n: usize| dt * T::from_usize_lossy(n);
        let mut drive = Vec::new();
        for n in 1..=n_steps {
            let (a, b) = (t(n - 1), t(n));
            if !model.drive_on(a, b) {
                continue;
            }
            let h = dt / T::from_usize_lossy(DRIVE_SUBSTEPS);
            let mut m = Super::identity();
            for j in 0..DRIVE_SUBSTEPS {
                let lo = a + h * T::from_usize_lossy(j);
                let rabi = model.pulse_integral(lo, lo + h) / h;
                m = lindblad_generator(delta, rabi, model.gamma).scale(C::new(h, T::zero())).expm() * m;
            }
            drive.push((n, m));
        }
        let mut regions: Vec<(usize, usize)> = Vec::new();
        for &(n, _) in &drive {
            match regions.last_mut() {
                Some(r) if r.1 + 1 == n => r.1 = n,
                _ => regions.push((n, n)),
            }
        }
        let f0 = std::array::from_fn(|a| influence_exponent(eta.diag, a, a).exp());
        let fl = (1..=n_c)
            .map(|l| std::array::from_fn(|a| std::array::from_fn(|b| influence_exponent(eta.coupling(l), a, b).exp())))
            .collect();
        let mut engine = Self {
            dt,
            n_c,
            slices,
            n_steps,
            eta,
            off,
            drive,
            regions,
            f0,
            fl,
            compact: Compact { configs: Vec::new(), trans: Vec::new(), free: Stationary::new(1, &[C::zero()], &[C::zero(); 4], 0) },
            checkpoints: Vec::new(),
        };
        engine.compact = engine.build_compact();
        Ok(engine)
    }

    /// Convenience constructor computing the influence coefficients.
    pub fn from_model(model: &Model<T>, dt: T, n_c: usize, t_max: T, cap_bytes: u64) -> Result<Self> {
        let eta = EtaTable::compute(model, dt, n_c)?;
        let n_steps = (t_max / dt).ceil().to_usize().unwrap_or(0);
        Self::new(model, eta, n_steps, cap_bytes)
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn eta(&self) -> &EtaTable<T> {
        &self.eta
    }

    /// Inclusive step ranges during which the drive is on.
    pub fn drive_regions(&self) -> &[(usize, usize)] {
        &self.regions
    }

    /// Dimension of the pulse-free configuration subspace.
    pub fn compact_dim(&self) -> usize {
        self.compact.configs.len()
    }

    pub fn workspace(&self) -> Workspace<T> {
        Workspace::new(self.slices)
    }

    /// Emitter propagator of step `n`, mapping `t_{n−1}` to `t_n`.
    pub fn step_propagator(&self, n: usize) -> Super<T> {
        match self.drive.binary_search_by_key(&n, |d| d.0) {
            Ok(i) => self.drive[i].1,
            Err(_) => self.off,
        }
    }

    fn is_driven(&self, n: usize) -> bool {
        self.drive.binary_search_by_key(&n, |d| d.0).is_ok()
    }

    /// First driven step strictly after `n`.
    fn next_region(&self, n: usize) -> Option<(usize, usize)> {
        self.regions.iter().copied().find(|r| r.0 > n)
    }

    fn build_compact(&self) -> Compact<T> {
        let s = self.slices;
        let mut configs = Vec::new();
        let mut stack: Vec<(usize, u32)> = (0..4).map(|a| (1usize, a as u32)).collect();
        while let Some((len, idx)) = stack.pop() {
            if len == s {
                configs.push(idx);
                continue;
            }
            let newer = (idx >> (2 * (len - 1))) as usize & 3;
            for b in 0..4 {
                if !self.off.0[newer][b].is_zero() {
                    stack.push((len + 1, idx | ((b as u32) << (2 * len))));
                }
            }
        }
        configs.sort_unstable();
        let d = configs.len();
        let rest_mod = 1u32 << (2 * (s - 1));
        let mut trans = Vec::new();
        for (i, &c) in configs.iter().enumerate() {
            let s0 = c as usize & 3;
            for a in 0..4 {
                let m = self.off.0[a][s0];
                if m.is_zero() {
                    continue;
                }
                let mut f = m * self.f0[a];
                let mut x = c as usize;
                for l in 1..=self.n_c {
                    f = f * self.fl[l - 1][a][x & 3];
                    x >>= 2;
                }
                let to = a as u32 + 4 * (c % rest_mod);
                let j = configs.binary_search(&to).expect("pulse-free successor stays in the subspace");
                trans.push((j, i, f));
            }
        }
        let mut k = vec![C::zero(); d * d];
        for &(j, i, f) in &trans {
            k[j * d + i] += f;
        }
        let mut r = vec![C::zero(); 4 * d];
        for (i, &c) in configs.iter().enumerate() {
            r[(c as usize & 3) * d + i] = C::new(T::one(), T::zero());
        }
        let free = Stationary::new(d, &k, &r, self.n_steps);
        Compact { configs, trans, free }
    }

    /// Prepares pulse-crossing tables for every pulse starting after step
    /// `from`. Runs started later than `from` then skip the driven windows.
    pub fn prepare_checkpoints(&mut self, from: usize) -> Result<()> {
        let d = self.compact_dim();
        let mut out = Vec::new();
        let mut ws = self.workspace();
        for &(s, e) in &self.regions {
            if s <= from + 1 || self.checkpoints.iter().any(|c| c.table.start == s) {
                continue;
            }
            let exit = (e + self.slices).min(self.n_steps);
            if let Some(next) = self.next_region(e) {
                if exit >= next.0 {
                    continue;
                }
            }
            let mut data = vec![[C::zero(); 4]; (exit - s + 1) * d];
            let mut exits = vec![C::zero(); d * d];
            for j in 0..d {
                let adm = Adm {
                    step: s - 1,
                    depth: self.n_c,
                    slices: self.slices,
                    data: Data::Sparse(vec![(self.compact.configs[j], C::new(T::one(), T::zero()))]),
                    pending: None,
                };
                ws.load(&adm);
                while ws.step < exit {
                    self.step_ws(&mut ws);
                    data[(ws.step - s) * d + j] = ws.reduced();
                }
                let v = self.extract_compact(&ws).ok_or_else(|| Error::Numerical {
                    what: "pulse checkpoint".into(),
                    detail: format!("state did not return to the pulse-free subspace by step {exit}"),
                })?;
                for i in 0..d {
                    exits[i * d + j] = v[i];
                }
                ws.clear();
            }
            out.push(Checkpoint { table: CheckpointTable { start: s, d, data }, exit: exits });
        }
        self.checkpoints.extend(out);
        self.checkpoints.sort_by_key(|c| c.table.start);
        Ok(())
    }

    fn checkpoint(&self, start: usize) -> Option<&Checkpoint<T>> {
        self.checkpoints.iter().find(|c| c.table.start == start)
    }

    fn extract_compact(&self, ws: &Workspace<T>) -> Option<Vec<C<T>>> {
        if ws.pending.is_some() || ws.depth < self.n_c {
            return None;
        }
        let d = self.compact_dim();
        let mut v = vec![C::zero(); d];
        if ws.sparse {
            if ws.nz.len() > d {
                return None;
            }
            for &i in &ws.nz {
                let p = self.compact.position(i)?;
                v[p] = ws.cur[i as usize];
            }
        } else {
            // only small tensors stay dense after a pulse
            if ws.cur.len() > 4 * d.max(64) {
                return None;
            }
            for (i, z) in ws.cur.iter().enumerate() {
                if !z.is_zero() {
                    v[self.compact.position(i as u32)?] = *z;
                }
            }
        }
        Some(v)
    }

    fn load_compact(&self, ws: &mut Workspace<T>, v: &[C<T>], step: usize) {
        ws.clear();
        for (i, &z) in v.iter().enumerate() {
            if !z.is_zero() {
                let c = self.compact.configs[i];
                ws.cur[c as usize] = z;
                ws.nz.push(c);
            }
        }
        ws.sparse = true;
        ws.step = step;
        ws.depth = self.n_c;
        ws.pending = None;
    }

    /// Advances the workspace tensor by one step.
    fn step_ws(&self, ws: &mut Workspace<T>) {
        let n = ws.step + 1;
        let mut m = self.step_propagator(n);
        if let Some(p) = ws.pending.take() {
            m = m * p;
        }
        let l_max = self.n_c.min(ws.depth);
        if ws.sparse {
            self.sparse_step(ws, &m, l_max);
        } else {
            self.dense_step(ws, &m, l_max);
            if !self.is_driven(n) {
                let nnz = ws.cur.iter().filter(|z| !z.is_zero()).count();
                if nnz <= ws.cur.len() / 8 {
                    ws.nz.clear();
                    ws.nz.extend((0..ws.cur.len() as u32).filter(|&i| !ws.cur[i as usize].is_zero()));
                    ws.sparse = true;
                }
            }
        }
        ws.step = n;
        ws.depth = (ws.depth + 1).min(self.n_c);
    }

    fn sparse_step(&self, ws: &mut Workspace<T>, m: &Super<T>, l_max: usize) {
        let rest_mod = 1usize << (2 * (self.slices - 1));
        for k in 0..ws.nz.len() {
            let idx = ws.nz[k] as usize;
            let v = ws.cur[idx];
            ws.cur[idx] = C::zero();
            if v.is_zero() {
                continue;
            }
            let s0 = idx & 3;
            let rest = idx % rest_mod;
            let mut prod = [C::new(T::one(), T::zero()); 4];
            let needs = [coupled(GX) && !m.0[GX][s0].is_zero(), !m.0[XG][s0].is_zero()];
            if needs[0] || needs[1] {
                prod[GX] = self.f0[GX];
                prod[XG] = self.f0[XG];
                let mut x = idx;
                for l in 1..=l_max {
                    let f = &self.fl[l - 1];
                    let d = x & 3;
                    prod[GX] *= f[GX][d];
                    prod[XG] *= f[XG][d];
                    x >>= 2;
                }
            }
            for a in 0..4 {
                let mm = m.0[a][s0];
                if mm.is_zero() {
                    continue;
                }
                let j = a + 4 * rest;
                if !ws.marks[j] {
                    ws.marks[j] = true;
                    ws.nz_next.push(j as u32);
                }
                ws.next[j] += mm * prod[a] * v;
            }
        }
        for &j in &ws.nz_next {
            ws.marks[j as usize] = false;
        }
        std::mem::swap(&mut ws.cur, &mut ws.next);
        std::mem::swap(&mut ws.nz, &mut ws.nz_next);
        ws.nz_next.clear();
        if ws.nz.len() > ws.cur.len() / 4 {
            ws.sparse = false;
            ws.nz.clear();
        }
    }

    fn dense_step(&self, ws: &mut Workspace<T>, m: &Super<T>, l_max: usize) {
        let s = self.slices;
        let one = C::new(T::one(), T::zero());
        if s == 1 {
            let old = [ws.cur[0], ws.cur[1], ws.cur[2], ws.cur[3]];
            for a in 0..4 {
                let mut acc = C::zero();
                for (s0, &o) in old.iter().enumerate() {
                    let f = if coupled(a) { self.f0[a] * if l_max >= 1 { self.fl[0][a][s0] } else { one } } else { one };
                    acc += m.0[a][s0] * f * o;
                }
                ws.cur[a] = acc;
            }
            return;
        }
        // Slices 1..s−1 of the new tensor are the old slices 0..s−2 (`rest`);
        // their influence factors split into a low and a high digit table.
        let h1 = (s - 1) / 2;
        let h2 = s - 1 - h1;
        let table = |a: usize, first: usize, digits: usize| -> Vec<C<T>> {
            let mut t = vec![one; 1 << (2 * digits)];
            for (x, slot) in t.iter_mut().enumerate() {
                let mut p = one;
                let mut y = x;
                for k in 0..digits {
                    let l = first + k;
                    if l <= l_max {
                        p *= self.fl[l - 1][a][y & 3];
                    }
                    y >>= 2;
                }
                *slot = p;
            }
            t
        };
        let lo = [table(GX, 1, h1), table(XG, 1, h1)];
        let hi = [table(GX, 1 + h1, h2), table(XG, 1 + h1, h2)];
        let last: [[C<T>; 4]; 2] = std::array::from_fn(|r| {
            let a = if r == 0 { GX } else { XG };
            std::array::from_fn(|b| if l_max >= s { self.fl[s - 1][a][b] } else { one })
        });
        let r_len = 1usize << (2 * (s - 1));
        let lo_mask = (1usize << (2 * h1)) - 1;
        let old = &ws.cur;
        let kernel = |rest0: usize, out: &mut [C<T>]| {
            for (k, chunk) in out.chunks_mut(4).enumerate() {
                let rest = rest0 + k;
                let s0 = rest & 3;
                let o = [old[rest], old[rest + r_len], old[rest + 2 * r_len], old[rest + 3 * r_len]];
                let plain = o[0] + o[1] + o[2] + o[3];
                for a in 0..4 {
                    let mm = m.0[a][s0];
                    if mm.is_zero() {
                        chunk[a] = C::zero();
                        continue;
                    }
                    chunk[a] = if coupled(a) {
                        let r = usize::from(a == XG);
                        let sum = last[r][0] * o[0] + last[r][1] * o[1] + last[r][2] * o[2] + last[r][3] * o[3];
                        mm * self.f0[a] * lo[r][rest & lo_mask] * hi[r][rest >> (2 * h1)] * sum
                    } else {
                        mm * plain
                    };
                }
            }
        };
        if ws.next.len() >= 4 * PAR_CHUNK {
            ws.next
                .par_chunks_mut(4 * PAR_CHUNK)
                .enumerate()
                .for_each(|(c, out)| kernel(c * PAR_CHUNK, out));
        } else {
            kernel(0, &mut ws.next);
        }
        std::mem::swap(&mut ws.cur, &mut ws.next);
        ws.next.fill(C::zero());
    }

    /// Single-time trajectory from `start`, reporting every `snapshot_steps`
    /// entry (sorted) to `on_snapshot`.
    pub fn trajectory_from(
        &self,
        start: &Adm<T>,
        snapshot_steps: &[usize],
        on_snapshot: &mut dyn FnMut(Adm<T>) -> Result<()>,
    ) -> Result<Trajectory<T>> {
        let mut ws = self.workspace();
        ws.load(start);
        let mut rho = Vec::with_capacity(self.n_steps + 1 - start.step.min(self.n_steps));
        let mut inv = Invariants::new();
        let mut snaps = snapshot_steps.iter().copied().filter(|&s| s >= start.step).peekable();
        let mut compact: Option<Vec<C<T>>> = None;
        let mut step = start.step;
        loop {
            let r = match &compact {
                Some(v) => self.compact.reduced(v),
                None => ws.reduced(),
            };
            check_finite(&r, step)?;
            inv.record(&r);
            rho.push(r);
            while snaps.peek() == Some(&step) {
                snaps.next();
                let snap = match &compact {
                    Some(v) => self.compact_adm(v, step),
                    None => ws.snapshot(self.slices),
                };
                on_snapshot(snap)?;
            }
            if step >= self.n_steps {
                break;
            }
            if compact.is_some() && self.is_driven(step + 1) {
                let v = compact.take().expect("checked");
                self.load_compact(&mut ws, &v, step);
            }
            match &mut compact {
                Some(v) => *v = self.compact.step(v),
                None => {
                    if !self.is_driven(step + 1) {
                        if let Some(v) = self.extract_compact(&ws) {
                            compact = Some(self.compact.step(&v));
                            ws.clear();
                            step += 1;
                            continue;
                        }
                    }
                    self.step_ws(&mut ws);
                }
            }
            step += 1;
        }
        Ok(Trajectory { dt: self.dt, rho, invariants: inv })
    }

    fn compact_adm(&self, v: &[C<T>], step: usize) -> Adm<T> {
        let data = self
            .compact
            .configs
            .iter()
            .zip(v)
            .filter(|(_, z)| !z.is_zero())
            .map(|(&c, &z)| (c, z))
            .collect();
        Adm { step, depth: self.n_c, slices: self.slices, data: Data::Sparse(data), pending: None }
    }

    /// Continues `start` and reports the reduced state at every requested step
    /// (sorted, `≥ start.step`, `≤ n_steps`). With `component` set only that
    /// Liouville entry is evaluated; the others are reported as zero.
    pub fn run(
        &self,
        ws: &mut Workspace<T>,
        start: &Adm<T>,
        requests: &[usize],
        component: Option<usize>,
        sink: &mut dyn FnMut(usize, [C<T>; 4]),
    ) -> Result<()> {
        ws.load(start);
        let mut ri = requests.partition_point(|&r| r < start.step);
        let read_compact = |v: &[C<T>], k: usize| -> [C<T>; 4] {
            match component {
                Some(c) => {
                    let mut out = [C::zero(); 4];
                    out[c] = self.compact.free.read_component(v, k, c);
                    out
                }
                None => self.compact.free.read(v, k),
            }
        };
        let result = (|| -> Result<()> {
            loop {
                while ri < requests.len() && requests[ri] == ws.step {
                    let r = ws.reduced();
                    check_finite(&r, ws.step)?;
                    sink(ws.step, r);
                    ri += 1;
                }
                if ri >= requests.len() || ws.step >= self.n_steps {
                    return Ok(());
                }
                if !self.is_driven(ws.step + 1) {
                    if let Some(mut v) = self.extract_compact(ws) {
                        let mut e = ws.step;
                        ws.clear();
                        loop {
                            let region = self.next_region(e);
                            let stop = region.map(|r| r.0 - 1).unwrap_or(self.n_steps);
                            while ri < requests.len() && requests[ri] <= stop {
                                let u = requests[ri];
                                sink(u, read_compact(&v, u - e));
                                ri += 1;
                            }
                            let Some((s, _)) = region else { return Ok(()) };
                            if ri >= requests.len() {
                                return Ok(());
                            }
                            v = self.compact.free.advance(&v, s - 1 - e);
                            match self.checkpoint(s) {
                                Some(cp) => {
                                    let end = cp.table.end();
                                    while ri < requests.len() && requests[ri] <= end {
                                        let u = requests[ri];
                                        sink(u, cp.table.read(&v, u, component));
                                        ri += 1;
                                    }
                                    let d = v.len();
                                    v = crate::stationary::matvec(&cp.exit, &v, d);
                                    e = end;
                                }
                                None => {
                                    self.load_compact(ws, &v, s - 1);
                                    break;
                                }
                            }
                        }
                        continue;
                    }
                }
                self.step_ws(ws);
            }
        })();
        ws.clear();
        ws.pending = None;
        result
    }
}

fn check_finite<T: Real>(r: &[C<T>; 4], step: usize) -> Result<()> {
    if r.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { what: "path-integral propagation".into(), detail: format!("non-finite state at step {step}") })
    }
}

/// Reduced trajectory from the ground state over the whole horizon.
pub fn propagate_single_time<T: Real>(engine: &PathIntegral<T>) -> Result<Trajectory<T>> {
    engine.trajectory_from(&Adm::ground(engine.slices()), &[], &mut |_| Ok(()))
}

/// Delay propagation keeping the full memory: reduced states at
/// `adm.step + k` for `k = 0..=tau_steps`.
pub fn continue_tau_exact<T: Real>(engine: &PathIntegral<T>, adm: &Adm<T>, tau_steps: usize) -> Result<Vec<[C<T>; 4]>> {
    let last = (adm.step + tau_steps).min(engine.n_steps());
    let req: Vec<usize> = (adm.step..=last).collect();
    let mut out = Vec::with_capacity(req.len());
    let mut ws = engine.workspace();
    engine.run(&mut ws, adm, &req, None, &mut |_, r| out.push(r))?;
    Ok(out)
}

/// Delay propagation after tracing out the memory at the insertion time.
pub fn continue_tau_qrt<T: Real>(engine: &PathIntegral<T>, adm: &Adm<T>, tau_steps: usize) -> Result<Vec<[C<T>; 4]>> {
    continue_tau_exact(engine, &adm.trace_out(), tau_steps)
}

/// Same as `Adm::insert`, returning the modified snapshot.
pub fn insert_superoperator<T: Real>(mut adm: Adm<T>, side: Side, op: &Op2<T>) -> Adm<T> {
    adm.insert(side, op);
    adm
}
