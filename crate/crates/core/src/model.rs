//! Emitter, pulse train and phonon bath: configuration and closed-form
//! ingredients.
//!
//! Configuration structs hold user-facing units (ps, 1/ps, K, eV, nm,
//! kg/m³, m/s) in `f64`. [`Model`] converts them once into the internal
//! system, where ħ = 1, times are in ps and angular frequencies in 1/ps.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{config, domain, Error, Result};
use crate::quad::CompositeGrid;
use crate::Real;

/// ħ in meV·ps.
pub const HBAR_MEV_PS: f64 = 0.658_211_956_9;
/// k_B in meV/K.
pub const KB_MEV_PER_K: f64 = 0.086_173_332_62;
const HBAR_JS: f64 = 1.054_571_817e-34;
const EV_J: f64 = 1.602_176_634e-19;
/// Gaussian pulses are cut at this many standard deviations.
pub const PULSE_TRUNCATION_SIGMAS: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitonSystem {
    /// Radiative decay rate γ in 1/ps.
    pub radiative_rate: f64,
    /// Laser detuning from the polaron-shifted transition, 1/ps.
    pub detuning: f64,
}

impl Default for ExcitonSystem {
    fn default() -> Self {
        Self { radiative_rate: 0.001, detuning: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseTrain {
    /// Pulse area in radians.
    pub area: f64,
    /// Full width at half maximum of the Rabi envelope, ps.
    pub fwhm: f64,
    /// Pulse separation, ps.
    pub period: f64,
    pub count: usize,
    /// Center of the first pulse, ps.
    pub first_center: f64,
}

impl Default for PulseTrain {
    fn default() -> Self {
        Self { area: std::f64::consts::PI, fwhm: 3.0, period: 12_500.0, count: 3, first_center: 20.0 }
    }
}

impl PulseTrain {
    pub fn sigma(&self) -> f64 {
        self.fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }

    pub fn center(&self, k: usize) -> f64 {
        self.first_center + self.period * k as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhononBath {
    /// Overall coupling scale λ.
    pub lambda: f64,
    /// Temperature in K.
    pub temperature: f64,
    /// Electron and hole localization radius, nm.
    pub dot_radius: f64,
    /// Electron deformation potential, eV.
    pub d_electron: f64,
    /// Hole deformation potential, eV.
    pub d_hole: f64,
    /// Mass density, kg/m³.
    pub mass_density: f64,
    /// Longitudinal sound velocity, m/s.
    pub sound_velocity: f64,
}

impl Default for PhononBath {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            temperature: 4.0,
            dot_radius: 3.0,
            d_electron: 7.0,
            d_hole: -3.5,
            mass_density: 5370.0,
            sound_velocity: 5110.0,
        }
    }
}

impl PhononBath {
    /// Stable 64-bit digest of the material parameters (λ and T excluded).
    pub fn material_hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in [self.dot_radius, self.d_electron, self.d_hole, self.mass_density, self.sound_velocity] {
            h.update(v.to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimGrid {
    /// Time step, ps.
    pub dt: f64,
    /// Memory window length in steps.
    pub n_c: usize,
    /// Single-time horizon, ps; derived from the pulse train when absent.
    pub t_max: Option<f64>,
    /// Delay horizon, ps; 1.5 pulse periods when absent.
    pub tau_max: Option<f64>,
    /// Stride of the t-nodes of two-time grids.
    pub t_stride: usize,
    /// Stride of t-nodes inside the drive-on window of a pulse.
    pub pulse_t_stride: usize,
    /// Delays below this value (ps) are sampled at every step.
    pub tau_fine: f64,
    /// Refuse augmented density matrices above this size.
    pub memory_cap_bytes: u64,
}

impl Default for SimGrid {
    fn default() -> Self {
        Self::desk()
    }
}

impl SimGrid {
    pub fn desk() -> Self {
        Self {
            dt: 0.5,
            n_c: 7,
            t_max: None,
            tau_max: None,
            t_stride: 4,
            pulse_t_stride: 1,
            tau_fine: 100.0,
            memory_cap_bytes: 2 << 30,
        }
    }

    pub fn accuracy() -> Self {
        Self { dt: 0.25, n_c: 12, ..Self::desk() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Index of the pulse whose period defines the averaging window.
    pub average_pulse: usize,
    /// Number of antipodal Bloch-sphere pairs for the non-Markovianity measure.
    pub nm_pairs: usize,
    /// Propagation horizon of the non-Markovianity measure, ps.
    pub nm_horizon: f64,
    /// Keep the pulse train switched on while measuring non-Markovianity.
    pub nm_with_drive: bool,
    /// Delay window (ps) of the emission spectrum transform.
    pub spectrum_window: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { average_pulse: 1, nm_pairs: 32, nm_horizon: 40.0, nm_with_drive: false, spectrum_window: 100.0 }
    }
}

/// Everything that defines one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub system: ExcitonSystem,
    pub pulses: PulseTrain,
    pub bath: PhononBath,
    pub grid: SimGrid,
    pub analysis: AnalysisConfig,
}

impl PhysicsConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets a field addressed by a dotted path such as `bath.lambda`.
    /// The value is parsed as JSON, falling back to a plain string.
    pub fn set_path(&mut self, path: &str, raw: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut tree;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| config(format!("`{path}`: `{part}` is not inside an object")))?;
            if !obj.contains_key(*part) {
                return Err(config(format!("unknown configuration key `{path}`")));
            }
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value);
                break;
            }
            node = obj.get_mut(*part).expect("key checked");
        }
        let updated: Self = serde_json::from_value(tree)?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Stable digest of the full configuration.
    pub fn hash_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let canon = serde_json::to_string(self).expect("config serializes");
        let d = Sha256::digest(canon.as_bytes());
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        let p = &self.pulses;
        let b = &self.bath;
        let g = &self.grid;
        if !(s.radiative_rate >= 0.0) {
            return Err(config("system.radiative_rate must be >= 0"));
        }
        if !s.detuning.is_finite() {
            return Err(config("system.detuning must be finite"));
        }
        if !(p.fwhm > 0.0) {
            return Err(config("pulses.fwhm must be > 0"));
        }
        if !(p.area >= 0.0) {
            return Err(config("pulses.area must be >= 0"));
        }
        if !(p.period > 10.0 * p.fwhm) {
            return Err(config("pulses.period must exceed 10 * pulses.fwhm"));
        }
        if p.count < 2 {
            return Err(config("pulses.count must be >= 2"));
        }
        if !(b.lambda >= 0.0) {
            return Err(config("bath.lambda must be >= 0"));
        }
        if !(b.temperature > 0.0) {
            return Err(config("bath.temperature must be > 0"));
        }
        if !(b.dot_radius > 0.0 && b.mass_density > 0.0 && b.sound_velocity > 0.0) {
            return Err(config("bath.dot_radius, bath.mass_density and bath.sound_velocity must be > 0"));
        }
        if !(g.dt > 0.0) {
            return Err(config("grid.dt must be > 0"));
        }
        if g.t_stride == 0 || g.pulse_t_stride == 0 {
            return Err(config("grid strides must be >= 1"));
        }
        if let Some(t) = g.t_max {
            if t < p.count as f64 * p.period {
                return Err(config("grid.t_max must be >= pulses.count * pulses.period"));
            }
        }
        if self.analysis.average_pulse >= p.count {
            return Err(config("analysis.average_pulse must index an existing pulse"));
        }
        if self.analysis.nm_pairs == 0 {
            return Err(config("analysis.nm_pairs must be >= 1"));
        }
        Ok(())
    }

    pub fn tau_max(&self) -> f64 {
        self.grid.tau_max.unwrap_or(1.5 * self.pulses.period)
    }

    /// Averaging window `[c − T/2, c + T/2]` around the selected pulse.
    pub fn average_window(&self) -> (f64, f64) {
        let c = self.pulses.center(self.analysis.average_pulse);
        (c - 0.5 * self.pulses.period, c + 0.5 * self.pulses.period)
    }

    /// `[t₀ − T/2, t₀ + T/2]` around the first pulse.
    pub fn brightness_window(&self) -> (f64, f64) {
        let c = self.pulses.center(0);
        (c - 0.5 * self.pulses.period, c + 0.5 * self.pulses.period)
    }

    /// Single-time horizon covering the train and every two-time sample.
    pub fn t_max(&self) -> f64 {
        let needed = self.average_window().1 + self.tau_max();
        let train = self.pulses.count as f64 * self.pulses.period;
        self.grid.t_max.unwrap_or(needed.max(train)).max(needed)
    }
}

/// Converted, validated model in internal units.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub gamma: T,
    /// Laser detuning from the polaron-shifted line.
    pub detuning: T,
    pub area: T,
    pub sigma: T,
    pub centers: Vec<T>,
    /// Coupling strength multiplying the `ω³ · form²` shape, ps².
    pub coupling: T,
    /// Electron and hole potentials relative to their difference.
    pub d_e: T,
    pub d_h: T,
    /// `a / v_s` in ps.
    pub form_scale: T,
    /// `ħ / (2 k_B T)` in ps.
    pub half_beta: T,
    /// Frequency beyond which `J(ω) < 10⁻¹² max J`.
    pub omega_cut: T,
    pub lambda: T,
    pub temperature: T,
    polaron_shift: T,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: &PhysicsConfig) -> Result<Self> {
        cfg.validate()?;
        let b = &cfg.bath;
        let p = &cfg.pulses;
        let d_diff = b.d_electron - b.d_hole;
        let norm = if d_diff != 0.0 { d_diff.abs() } else { 1.0 };
        // J(ω) = λ ω³ (D_e F − D_h F)² / (4π² ρ ħ v⁵), SI → ps
        let alpha_si = (norm * EV_J).powi(2)
            / (4.0 * std::f64::consts::PI.powi(2) * b.mass_density * HBAR_JS * b.sound_velocity.powi(5));
        let form_scale = b.dot_radius * 1e3 / b.sound_velocity;
        // x³ e^{-x²/2} with x = ω s peaks at √3; find the 10⁻¹² tail point
        let shape = |x: f64| x.powi(3) * (-0.5 * x * x).exp();
        let peak = shape(3f64.sqrt());
        let mut x = 3f64.sqrt();
        while shape(x) > 1e-12 * peak {
            x += 0.01;
        }
        let mut model = Self {
            gamma: T::lit(cfg.system.radiative_rate),
            detuning: T::lit(cfg.system.detuning),
            area: T::lit(p.area),
            sigma: T::lit(p.sigma()),
            centers: (0..p.count).map(|k| T::lit(p.center(k))).collect(),
            coupling: T::lit(b.lambda * alpha_si * 1e24),
            d_e: T::lit(b.d_electron / norm),
            d_h: T::lit(b.d_hole / norm),
            form_scale: T::lit(form_scale),
            half_beta: T::lit(HBAR_MEV_PS / (2.0 * KB_MEV_PER_K * b.temperature)),
            omega_cut: T::lit(x / form_scale),
            lambda: T::lit(b.lambda),
            temperature: T::lit(b.temperature),
            polaron_shift: T::zero(),
        };
        model.polaron_shift = model.compute_polaron_shift()?;
        Ok(model)
    }

    /// Phonon spectral density `J(ω)` in 1/ps.
    pub fn spectral_density(&self, omega: T) -> Result<T> {
        if omega < T::zero() || omega.is_nan() {
            return Err(domain(format!("spectral density needs omega >= 0, got {omega}")));
        }
        Ok(self.j(omega))
    }

    #[inline]
    pub(crate) fn j(&self, omega: T) -> T {
        let x = omega * self.form_scale;
        let f = (-x * x * T::lit(0.25)).exp();
        let g = self.d_e * f - self.d_h * f;
        self.coupling * omega * omega * omega * g * g
    }

    /// `coth(ħω / 2k_BT)`
    #[inline]
    pub(crate) fn coth(&self, omega: T) -> T {
        let y = omega * self.half_beta;
        T::one() / y.tanh()
    }

    /// Frequency quadrature resolving `cos(ωt)` up to `t_max`.
    pub fn frequency_grid(&self, t_max: T) -> CompositeGrid<T> {
        let cycles = (self.omega_cut * t_max / T::PI()).ceil().to_usize().unwrap_or(0);
        let panels = (2 * cycles).max(24);
        CompositeGrid::new(T::zero(), self.omega_cut, panels, 16)
    }

    /// Polaron shift `∫ J(ω)/ω dω`, 1/ps.
    pub fn polaron_shift(&self) -> T {
        self.polaron_shift
    }

    fn compute_polaron_shift(&self) -> Result<T> {
        let coarse = CompositeGrid::new(T::zero(), self.omega_cut, 24, 16).integrate(|w| self.j(w) / w);
        let fine = CompositeGrid::new(T::zero(), self.omega_cut, 48, 16).integrate(|w| self.j(w) / w);
        let tol = T::lit(1e3) * T::epsilon() * fine.abs().max(T::min_positive_value());
        if !fine.is_finite() || (fine - coarse).abs() > tol {
            return Err(Error::Numerical {
                what: "polaron shift".into(),
                detail: format!("quadrature refinement changed {coarse} -> {fine}"),
            });
        }
        Ok(fine)
    }

    /// Exciton energy in the laser frame: polaron shift compensated, minus the
    /// laser detuning.
    pub fn bare_detuning(&self) -> T {
        self.polaron_shift - self.detuning
    }

    pub fn half_width(&self) -> T {
        self.sigma * T::lit(PULSE_TRUNCATION_SIGMAS)
    }

    /// Rabi envelope `f(t)`: truncated Gaussians, each of area `area`.
    pub fn pulse_envelope(&self, t: T) -> T {
        let hw = self.half_width();
        let norm = self.area / (self.sigma * T::lit(2.0 * std::f64::consts::PI).sqrt());
        self.centers
            .iter()
            .filter(|&&c| (t - c).abs() <= hw)
            .map(|&c| {
                let u = (t - c) / self.sigma;
                norm * (-u * u * T::lit(0.5)).exp()
            })
            .sum()
    }

    /// `∫_a^b f(t) dt` of the truncated envelope.
    pub fn pulse_integral(&self, a: T, b: T) -> T {
        let hw = self.half_width();
        let s2 = self.sigma * T::SQRT_2();
        let mut total = T::zero();
        for &c in &self.centers {
            let lo = a.max(c - hw);
            let hi = b.min(c + hw);
            if hi > lo {
                total += self.area * T::lit(0.5) * (((hi - c) / s2).erf() - ((lo - c) / s2).erf());
            }
        }
        total
    }

    /// Whether the cell `(a, b]` overlaps the support of any pulse.
    pub fn drive_on(&self, a: T, b: T) -> bool {
        let hw = self.half_width();
        self.area > T::zero() && self.centers.iter().any(|&c| b > c - hw && a < c + hw)
    }
}

/// `J(ω)` for a bath description, in 1/ps.
pub fn spectral_density(omega: f64, bath: &PhononBath) -> Result<f64> {
    let cfg = PhysicsConfig { bath: bath.clone(), ..Default::default() };
    Model::<f64>::new(&cfg)?.spectral_density(omega)
}

/// Polaron shift `∫ J(ω)/ω dω` in 1/ps.
pub fn polaron_shift(bath: &PhononBath) -> Result<f64> {
    let cfg = PhysicsConfig { bath: bath.clone(), ..Default::default() };
    Ok(Model::<f64>::new(&cfg)?.polaron_shift())
}

/// Rabi envelope of a pulse train in 1/ps.
pub fn pulse_envelope(t: f64, train: &PulseTrain) -> Result<f64> {
    let cfg = PhysicsConfig { pulses: train.clone(), ..Default::default() };
    Ok(Model::<f64>::new(&cfg)?.pulse_envelope(t))
}
