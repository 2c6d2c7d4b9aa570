//! Driven-damped Kerr cavity solver and the derived index modulation.
//!
//! The intracavity envelope obeys the normalized equation
//!
//! ```text
//! ∂ψ/∂τ = F − (1 + iα)ψ + i|ψ|²ψ + i(d₂/2) ∂²ψ/∂θ²
//! ```
//!
//! with τ = (κ/2)t, α = 2δω/κ, d₂ = 2D₂/κ and κ = ω_p/Q_l. Steady bright
//! pulses of this equation, launched in both directions, interfere into a
//! time-periodic intensity pattern; the resulting Kerr index change drives
//! the coupled microwave ring through the masked overlap.

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::FftPair;
use crate::float::{fl, speed_of_light, Float};
use crate::grid::AngularGrid;

/// Dimensionless parameters of the normalized cavity equation.
#[derive(Debug, Clone, PartialEq)]
pub struct LleParams<T> {
    /// Normalized pump power F².
    pub pump_strength_sq: T,
    /// Normalized detuning α.
    pub detuning: T,
    /// Normalized second-order dispersion d₂ (anomalous, > 0).
    pub dispersion: T,
    /// Angular samples over [0, 2π); power of two, at least 256.
    pub grid_points: usize,
    /// Normalized time step of the split-step integrator.
    pub step: T,
}

impl<T: Float> LleParams<T> {
    /// Dimensionless dispersion d₂ = 2·(2π·D₂)/κ from the physical inputs.
    ///
    /// `d2_hz` is the dispersion parameter quoted in Hz (cycles), converted
    /// to angular frequency internally; κ = ω_p/Q_l is the loaded linewidth.
    pub fn dispersion_from_physical(d2_hz: T, loaded_q: T, pump_wavelength: T) -> T {
        let omega_p = T::TAU() * speed_of_light::<T>() / pump_wavelength;
        let kappa = omega_p / loaded_q;
        fl::<T>(2.0) * (T::TAU() * d2_hz) / kappa
    }

    pub fn pump_amplitude(&self) -> T {
        self.pump_strength_sq.sqrt()
    }

    /// Approximate upper detuning bound of the single-soliton existence
    /// region, α_max ≈ π²F²/8.
    pub fn existence_limit(&self) -> T {
        T::PI() * T::PI() * self.pump_strength_sq / fl(8.0)
    }

    pub fn grid(&self) -> AngularGrid<T> {
        AngularGrid::new(self.grid_points)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.grid_points.is_power_of_two() || self.grid_points < 256 {
            return Err(Error::GridMismatch(format!(
                "grid_points must be a power of two >= 256, got {}",
                self.grid_points
            )));
        }
        if self.dispersion <= T::zero() {
            return Err(Error::InvalidState(
                "dispersion must be positive (anomalous regime)".into(),
            ));
        }
        if self.pump_strength_sq <= T::zero() {
            return Err(Error::InvalidState("pump strength must be positive".into()));
        }
        if self.step <= T::zero() {
            return Err(Error::InvalidState("step must be positive".into()));
        }
        Ok(())
    }
}

/// Complex intracavity envelope on the angular grid.
#[derive(Debug, Clone)]
pub struct SolitonField<T> {
    pub envelope: Vec<Complex<T>>,
    pub params: LleParams<T>,
    /// L2 change of |ψ| per unit normalized time at the last convergence
    /// check; below the steady tolerance once the field is marked steady.
    pub residual: T,
}

impl<T: Float> SolitonField<T> {
    pub fn new(envelope: Vec<Complex<T>>, params: LleParams<T>) -> Result<Self> {
        if envelope.len() != params.grid_points {
            return Err(Error::GridMismatch(format!(
                "envelope has {} samples, grid expects {}",
                envelope.len(),
                params.grid_points
            )));
        }
        Ok(Self {
            envelope,
            params,
            residual: T::infinity(),
        })
    }

    pub fn vacuum(params: LleParams<T>) -> Self {
        let n = params.grid_points;
        Self {
            envelope: vec![Complex::new(T::zero(), T::zero()); n],
            params,
            residual: T::infinity(),
        }
    }

    pub fn intensity(&self) -> Vec<T> {
        self.envelope.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn peak_intensity(&self) -> T {
        self.envelope
            .iter()
            .map(|c| c.norm_sqr())
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    /// ∫|ψ|² dθ over the ring.
    pub fn power(&self) -> T {
        let grid = self.params.grid();
        let intensity = self.intensity();
        grid.integrate(&intensity)
    }

    /// |∫|ψ|²dθ − Re∫Fψ*dθ| / ∫|ψ|²dθ, zero at an exact steady state.
    pub fn power_balance_residual(&self) -> T {
        let grid = self.params.grid();
        let f = self.params.pump_amplitude();
        let absorbed = self.power();
        let injected =
            f * self.envelope.iter().fold(T::zero(), |acc, c| acc + c.re) * grid.dtheta();
        (absorbed - injected).abs() / absorbed
    }

    /// Magnitudes of the comb lines |ψ̂_μ| in FFT bin order.
    pub fn spectrum_magnitudes(&self) -> Vec<T> {
        let n = self.envelope.len();
        let fft = FftPair::new(n);
        let mut buf = self.envelope.clone();
        fft.forward(&mut buf);
        let scale = fl::<T>(1.0) / fl::<T>(n as f64);
        buf.iter().map(|c| c.norm() * scale).collect()
    }

    /// Circularly shift the envelope so the intensity peak sits at θ = 0.
    pub fn recentered(&self) -> Self {
        let intensity = self.intensity();
        let peak = argmax(&intensity);
        let mut out = self.clone();
        out.envelope.rotate_left(peak);
        out
    }
}

fn argmax<T: Float>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Tuning knobs for the steady-state search.
#[derive(Debug, Clone)]
pub struct SolverOptions<T> {
    /// Steady when the L2 change of |ψ| per unit normalized time drops below this.
    pub steady_tol: T,
    /// Normalized-time budget before giving up.
    pub max_time: T,
    /// Interval between convergence checks, in normalized time.
    pub check_interval: T,
    /// Step refinement factor for the final polish phase.
    pub polish_factor: u32,
    /// Duration of the polish phase, in normalized time.
    pub polish_time: T,
    /// Divergence cap on ∫|ψ|²dθ.
    pub power_cap: T,
}

impl<T: Float> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            steady_tol: fl(1e-8),
            max_time: fl(400.0),
            check_interval: fl(1.0),
            polish_factor: 8,
            polish_time: fl(15.0),
            power_cap: fl(1e8),
        }
    }
}

/// Second-order Strang split-step engine for the normalized cavity equation.
///
/// The linear flow (loss, detuning, dispersion) is applied exactly in the
/// spectral domain; pump and Kerr rotation are applied in the angular domain
/// as a symmetric pump/Kerr/pump sandwich of exact subflows, keeping the
/// overall scheme second order.
struct SplitStep<T: Float> {
    fft: FftPair<T>,
    linear_half: Vec<Complex<T>>,
    linear_full: Vec<Complex<T>>,
    pump_half: Complex<T>,
    step: T,
    power_cap: T,
    dtheta: T,
    steps_taken: usize,
}

impl<T: Float> SplitStep<T> {
    fn new(params: &LleParams<T>, step: T, power_cap: T) -> Self {
        let n = params.grid_points;
        let grid = params.grid();
        let alpha = params.detuning;
        let d2 = params.dispersion;
        let half = fl::<T>(0.5);
        let lin_factor = |h: T| -> Vec<Complex<T>> {
            (0..n)
                .map(|i| {
                    let mu = fl::<T>(grid.wavenumber(i) as f64);
                    // ∂ψ̂/∂τ = −(1 + iα + i d₂ μ²/2) ψ̂
                    let rate = Complex::new(-T::one(), -(alpha + half * d2 * mu * mu));
                    (rate * h).exp()
                })
                .collect()
        };
        Self {
            fft: FftPair::new(n),
            linear_half: lin_factor(step * half),
            linear_full: lin_factor(step),
            pump_half: Complex::new(params.pump_amplitude() * step * half, T::zero()),
            step,
            power_cap,
            dtheta: grid.dtheta(),
            steps_taken: 0,
        }
    }

    fn apply_linear(&self, psi: &mut [Complex<T>], factors: &[Complex<T>]) {
        self.fft.forward(psi);
        for (v, f) in psi.iter_mut().zip(factors) {
            *v *= *f;
        }
        self.fft.inverse(psi);
    }

    /// Pump/Kerr/pump sandwich: exact subflows of ψ' = F and ψ' = i|ψ|²ψ.
    fn apply_nonlinear(&self, psi: &mut [Complex<T>]) {
        for v in psi.iter_mut() {
            *v += self.pump_half;
            let phase = v.norm_sqr() * self.step;
            *v *= Complex::new(T::zero(), phase).exp();
            *v += self.pump_half;
        }
    }

    fn check_power(&self, psi: &[Complex<T>]) -> Result<()> {
        let power = psi.iter().fold(T::zero(), |acc, c| acc + c.norm_sqr()) * self.dtheta;
        if !power.is_finite() || power > self.power_cap {
            return Err(Error::Diverged {
                step: self.steps_taken,
                power: power.as_f64(),
                cap: self.power_cap.as_f64(),
            });
        }
        Ok(())
    }

    /// Advance by `n_steps` Strang steps, fusing adjacent half linear flows.
    fn advance(&mut self, psi: &mut [Complex<T>], n_steps: usize) -> Result<()> {
        if n_steps == 0 {
            return Ok(());
        }
        let half = self.linear_half.clone();
        let full = self.linear_full.clone();
        self.apply_linear(psi, &half);
        for k in 0..n_steps {
            self.apply_nonlinear(psi);
            if k + 1 < n_steps {
                self.apply_linear(psi, &full);
            }
            self.steps_taken += 1;
            if self.steps_taken % 64 == 0 {
                self.check_power(psi)?;
            }
        }
        self.apply_linear(psi, &half);
        self.check_power(psi)
    }
}

/// Advance the field by `duration` normalized time units.
pub fn evolve_lle<T: Float>(state: &SolitonField<T>, duration: T) -> Result<SolitonField<T>> {
    state.params.validate()?;
    if duration < T::zero() {
        return Err(Error::InvalidState("duration must be non-negative".into()));
    }
    let h = state.params.step;
    let n_full = (duration / h).floor();
    let n_steps = n_full.as_f64() as usize;
    let remainder = duration - fl::<T>(n_steps as f64) * h;

    let mut out = state.clone();
    let opts = SolverOptions::<T>::default();
    let mut engine = SplitStep::new(&state.params, h, opts.power_cap);
    engine.advance(&mut out.envelope, n_steps)?;
    if remainder > h * fl(1e-9) {
        let mut tail = SplitStep::new(&state.params, remainder, opts.power_cap);
        tail.steps_taken = engine.steps_taken;
        tail.advance(&mut out.envelope, 1)?;
    }
    Ok(out)
}

/// Smallest positive root of the homogeneous-state cubic
/// ρ(1 + (α − ρ)²) = F², by first-sign-change scan plus bisection.
pub fn homogeneous_low_branch<T: Float>(pump_strength_sq: T, detuning: T) -> T {
    let f_sq = pump_strength_sq;
    let g = |rho: T| -> T {
        let d = detuning - rho;
        rho * (T::one() + d * d) - f_sq
    };
    // Root lies in (0, F²]: ρ(1+(α−ρ)²) ≥ ρ.
    let mut lo = T::zero();
    let mut hi = f_sq;
    let n_scan = 2000;
    let dr = f_sq / fl(n_scan as f64);
    let mut x = dr;
    for _ in 0..n_scan {
        if g(x) >= T::zero() {
            hi = x;
            lo = x - dr;
            break;
        }
        x += dr;
    }
    for _ in 0..200 {
        let mid = (lo + hi) * fl(0.5);
        if g(mid) >= T::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo + hi) * fl(0.5)
}

/// Steady homogeneous field ψ = F / (1 + i(α − ρ)) on the given branch.
fn homogeneous_field<T: Float>(params: &LleParams<T>, rho: T) -> Complex<T> {
    let f = params.pump_amplitude();
    Complex::new(f, T::zero()) / Complex::new(T::one(), params.detuning - rho)
}

/// Classification of a converged field.
enum FieldShape {
    Flat,
    SinglePulse,
    MultiPulse(usize),
}

fn classify<T: Float>(intensity: &[T]) -> FieldShape {
    let max = intensity.iter().fold(T::zero(), |a, &b| if b > a { b } else { a });
    let min = intensity.iter().fold(T::infinity(), |a, &b| if b < a { b } else { a });
    if max <= T::zero() || (max - min) / max < fl(1e-3) {
        return FieldShape::Flat;
    }
    let threshold = min + (max - min) * fl(0.5);
    let n = intensity.len();
    let mut peaks = 0;
    for i in 0..n {
        let prev = intensity[(i + n - 1) % n];
        let next = intensity[(i + 1) % n];
        if intensity[i] > threshold && intensity[i] > prev && intensity[i] >= next {
            peaks += 1;
        }
    }
    match peaks {
        0 => FieldShape::Flat,
        1 => FieldShape::SinglePulse,
        k => FieldShape::MultiPulse(k),
    }
}

/// L2 distance between peak-recentered |ψ| profiles.
fn recentered_modulus_change<T: Float>(a: &[Complex<T>], b: &[Complex<T>], dtheta: T) -> T {
    let modulus = |v: &[Complex<T>]| -> Vec<T> {
        let mag: Vec<T> = v.iter().map(|c| c.norm()).collect();
        let peak = argmax(&mag);
        let mut m = mag;
        m.rotate_left(peak);
        m
    };
    let ma = modulus(a);
    let mb = modulus(b);
    let sum = ma
        .iter()
        .zip(&mb)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
    (sum * dtheta).sqrt()
}

/// Find the steady single-soliton state for the given parameters.
///
/// Seeds with the sech ansatz √(2α)·sech(√(2α/d₂)·θ) on top of the
/// low-amplitude homogeneous branch, evolves until the recentered modulus
/// stops changing, then polishes with a refined step so the converged field
/// satisfies the continuum power balance rather than the coarse-step one.
pub fn find_steady_soliton<T: Float>(params: &LleParams<T>) -> Result<SolitonField<T>> {
    find_steady_soliton_with(params, &SolverOptions::default())
}

pub fn find_steady_soliton_with<T: Float>(
    params: &LleParams<T>,
    opts: &SolverOptions<T>,
) -> Result<SolitonField<T>> {
    params.validate()?;
    let alpha = params.detuning;
    if alpha > params.existence_limit() {
        log::warn!(
            "detuning {} above single-soliton existence bound pi^2 F^2/8 = {}",
            alpha,
            params.existence_limit()
        );
    }

    let grid = params.grid();
    let rho_low = homogeneous_low_branch(params.pump_strength_sq, alpha);
    let background = homogeneous_field(params, rho_low);

    // Relative soliton phase cos φ₀ = √(8α)/(πF), clamped into range.
    let f = params.pump_amplitude();
    let cos_phi = ((fl::<T>(8.0) * alpha).sqrt() / (T::PI() * f)).min(T::one());
    let phase = Complex::new(T::zero(), cos_phi.acos()).exp();
    let amp = (fl::<T>(2.0) * alpha).sqrt();
    let width_inv = (fl::<T>(2.0) * alpha / params.dispersion).sqrt();

    let n = params.grid_points;
    let center = T::PI();
    let envelope: Vec<Complex<T>> = (0..n)
        .map(|i| {
            let d = grid.wrapped_distance(i, center);
            let sech = T::one() / (width_inv * d).cosh();
            background + phase.scale(amp * sech)
        })
        .collect();
    let mut field = SolitonField::new(envelope, params.clone())?;

    let run_phase = |field: &mut SolitonField<T>,
                     step: T,
                     budget: T,
                     tol: T|
     -> Result<(bool, T, T)> {
        let mut engine = SplitStep::new(&field.params, step, opts.power_cap);
        let steps_per_check = (opts.check_interval / step).round().as_f64().max(1.0) as usize;
        let interval = step * fl::<T>(steps_per_check as f64);
        let mut elapsed = T::zero();
        let mut residual = T::infinity();
        while elapsed < budget {
            let previous = field.envelope.clone();
            engine.advance(&mut field.envelope, steps_per_check)?;
            elapsed += interval;
            residual = recentered_modulus_change(&field.envelope, &previous, grid.dtheta())
                / interval;
            if residual < tol {
                return Ok((true, residual, elapsed));
            }
        }
        Ok((false, residual, elapsed))
    };

    // Coarse convergence at the configured step.
    let (converged, residual, spent) =
        run_phase(&mut field, params.step, opts.max_time, opts.steady_tol)?;
    if !converged {
        let intensity = field.intensity();
        if let FieldShape::Flat = classify(&intensity) {
            return Err(Error::NoSoliton {
                reason: "field decayed to the flat homogeneous state".into(),
            });
        }
        return Err(Error::NotConverged {
            residual: residual.as_f64(),
            max_time: opts.max_time.as_f64(),
        });
    }

    // Polish with a refined step toward the continuum fixed point.
    let fine_step = params.step / fl(f64::from(opts.polish_factor));
    let budget = opts.polish_time + (opts.max_time - spent).max(T::zero());
    let (_, polish_residual, _) = {
        let mut engine = SplitStep::new(&field.params, fine_step, opts.power_cap);
        let steps = (opts.polish_time / fine_step).round().as_f64() as usize;
        engine.advance(&mut field.envelope, steps)?;
        run_phase(&mut field, fine_step, budget, opts.steady_tol)?
    };
    field.residual = polish_residual;

    let intensity = field.intensity();
    match classify(&intensity) {
        FieldShape::Flat => Err(Error::NoSoliton {
            reason: "field decayed to the flat homogeneous state".into(),
        }),
        FieldShape::MultiPulse(k) => Err(Error::NoSoliton {
            reason: format!("converged to {k} pulses instead of a single soliton"),
        }),
        FieldShape::SinglePulse => Ok(field),
    }
}

/// Physical device parameters of the coupled ring pair.
#[derive(Debug, Clone)]
pub struct PhysicalParams<T> {
    /// Ring radius R in meters.
    pub ring_radius: T,
    /// Linear effective index n₀ of the optical ring.
    pub base_index: T,
    /// Group index n_g setting the free spectral range.
    pub group_index: T,
    /// Pump wavelength λ₀ in meters.
    pub pump_wavelength: T,
    /// Nonlinear index n₂ in m²/W (reported in outputs; the index-change
    /// calibration below does not need it).
    pub nonlinear_index: T,
    /// Loaded quality factor Q_l.
    pub loaded_q: T,
    /// Transverse mode overlap fraction η between the two rings.
    pub overlap: T,
    /// Masking coefficient M(θ) sampled on the angular grid.
    pub mask: Vec<T>,
    /// Dimensionless scaling of the index perturbation (default 1).
    pub coupling_boost: T,
}

impl<T: Float> PhysicalParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.ring_radius <= T::zero() {
            return Err(Error::InvalidState("ring radius must be positive".into()));
        }
        if self.overlap <= T::zero() || self.overlap > T::one() {
            return Err(Error::InvalidState("overlap must lie in (0, 1]".into()));
        }
        if self
            .mask
            .iter()
            .any(|&m| m < T::zero() || m > T::one())
        {
            return Err(Error::InvalidState("mask values must lie in [0, 1]".into()));
        }
        if self.loaded_q <= T::zero() {
            return Err(Error::InvalidState("loaded Q must be positive".into()));
        }
        Ok(())
    }

    /// Free spectral range c/(2πR·n_g) in Hz.
    pub fn fsr(&self) -> T {
        speed_of_light::<T>() / (T::TAU() * self.ring_radius * self.group_index)
    }

    /// Round-trip period T_opt = 1/FSR in seconds.
    pub fn round_trip_period(&self) -> T {
        T::one() / self.fsr()
    }

    /// Pump angular frequency ω_p = 2πc/λ₀.
    pub fn pump_omega(&self) -> T {
        T::TAU() * speed_of_light::<T>() / self.pump_wavelength
    }

    /// Loaded linewidth κ = ω_p/Q_l.
    pub fn linewidth(&self) -> T {
        self.pump_omega() / self.loaded_q
    }
}

/// Time-periodic perturbed index profile of the microwave ring.
#[derive(Debug, Clone)]
pub struct ModulationProfile<T> {
    /// Sample times, K uniform points over one round-trip period.
    pub times: Vec<T>,
    /// n(θ, t_k), one row per time sample.
    pub index_profiles: Vec<Vec<T>>,
    /// Optical path length L(t_k) in meters.
    pub path_lengths: Vec<T>,
    /// Fundamental modulation frequency ω₀ = 2π·FSR in rad/s.
    pub fundamental_freq: T,
}

impl<T: Float> ModulationProfile<T> {
    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    pub fn grid_points(&self) -> usize {
        self.index_profiles.first().map_or(0, Vec::len)
    }

    /// Structural checks: positivity, stored path lengths consistent with
    /// the profiles, and T_opt/2 periodicity of L(t).
    pub fn validate(&self, ring_radius: T) -> Result<()> {
        let k = self.n_samples();
        if self.index_profiles.len() != k || self.path_lengths.len() != k {
            return Err(Error::GridMismatch("modulation profile arrays disagree".into()));
        }
        let mean_l = self.path_lengths.iter().fold(T::zero(), |a, &b| a + b) / fl(k as f64);
        for (i, profile) in self.index_profiles.iter().enumerate() {
            if profile.iter().any(|&v| v <= T::zero()) {
                return Err(Error::InvalidState(format!(
                    "index profile at sample {i} is not strictly positive"
                )));
            }
            let l = optical_path_length(profile, ring_radius);
            if (l - self.path_lengths[i]).abs() > fl::<T>(1e-12) * mean_l {
                return Err(Error::InvalidState(format!(
                    "stored path length at sample {i} inconsistent with profile"
                )));
            }
        }
        Ok(())
    }

    /// max_k |L(t_k) − L(t_k + T/2)| / mean(L).
    pub fn half_period_deviation(&self) -> T {
        let k = self.n_samples();
        let mean_l = self.path_lengths.iter().fold(T::zero(), |a, &b| a + b) / fl(k as f64);
        let mut worst = T::zero();
        for i in 0..k {
            let j = (i + k / 2) % k;
            let d = (self.path_lengths[i] - self.path_lengths[j]).abs();
            if d > worst {
                worst = d;
            }
        }
        worst / mean_l
    }
}

/// Spectral synthesizer for the counter-propagating pulse pair.
///
/// Holds the comb of the steady envelope once; each sample time costs one
/// inverse FFT because the two counter-rotated copies share coefficients:
/// Ŝ_μ(e^{−iμΩt} + e^{+iμΩt}) = 2Ŝ_μ cos(μΩt).
pub struct CpSynthesizer<T: Float> {
    coeffs: Vec<Complex<T>>,
    fft: FftPair<T>,
    omega: T,
}

impl<T: Float> CpSynthesizer<T> {
    /// Build from a steady soliton; the envelope is recentered so both
    /// copies sit at θ = 0 with equal phase at t = 0.
    pub fn new(soliton: &SolitonField<T>, fsr: T) -> Self {
        let centered = soliton.recentered();
        let n = centered.envelope.len();
        let fft = FftPair::new(n);
        let mut coeffs = centered.envelope;
        fft.forward(&mut coeffs);
        let scale = fl::<T>(1.0) / fl::<T>(n as f64);
        for c in coeffs.iter_mut() {
            *c = c.scale(scale);
        }
        Self {
            coeffs,
            fft,
            omega: T::TAU() * fsr,
        }
    }

    /// |S(θ−Ωt) + S(θ+Ωt)|² on the grid.
    pub fn intensity_at(&self, t: T) -> Vec<T> {
        let n = self.coeffs.len();
        let grid = AngularGrid::<T>::new(n);
        let angle = self.omega * t;
        let mut buf: Vec<Complex<T>> = (0..n)
            .map(|i| {
                let mu = fl::<T>(grid.wavenumber(i) as f64);
                self.coeffs[i].scale(fl::<T>(2.0) * (mu * angle).cos())
            })
            .collect();
        // Coefficients are already 1/N-normalized; undo the inverse scaling.
        self.fft.inverse(&mut buf);
        buf.iter()
            .map(|c| c.scale(fl::<T>(n as f64)).norm_sqr())
            .collect()
    }
}

/// Coherent counter-propagating intensity I(θ, t) = |S(θ−Ωt) + S(θ+Ωt)|²
/// with Ω = 2π·fsr, both envelopes centered at θ = 0 at t = 0.
pub fn synthesize_cp_intensity<T: Float>(
    soliton: &SolitonField<T>,
    t: T,
    fsr: T,
) -> Vec<T> {
    CpSynthesizer::new(soliton, fsr).intensity_at(t)
}

/// Kerr index change Δn(θ) = (n₀·κ/(2ω_p))·I_norm(θ), scaled by the
/// configured coupling boost.
///
/// The calibration equates the normalized self-phase-modulation rate
/// dφ/dτ = |ψ|² (with τ = κt/2) with the physical Kerr phase rate
/// Δn·ω_p/n₀, so no separate power calibration enters.
pub fn kerr_index_profile<T: Float>(
    intensity: &[T],
    params: &PhysicalParams<T>,
    _lle: &LleParams<T>,
) -> Vec<T> {
    let factor =
        params.base_index * params.linewidth() / (fl::<T>(2.0) * params.pump_omega())
            * params.coupling_boost;
    intensity.iter().map(|&i| factor * i).collect()
}

/// Perturbed microwave index n(θ) = n_mw + η·M(θ)·Δn(θ).
pub fn mw_index_profile<T: Float>(
    delta_n: &[T],
    params: &PhysicalParams<T>,
    n_mw: T,
) -> Result<Vec<T>> {
    if params.mask.len() != delta_n.len() {
        return Err(Error::GridMismatch(format!(
            "mask has {} samples, perturbation has {}",
            params.mask.len(),
            delta_n.len()
        )));
    }
    Ok(delta_n
        .iter()
        .zip(&params.mask)
        .map(|(&dn, &m)| n_mw + params.overlap * m * dn)
        .collect())
}

/// Total optical path length ∫₀^{2π} n(θ) R dθ by the periodic trapezoid rule.
pub fn optical_path_length<T: Float>(profile: &[T], ring_radius: T) -> T {
    let grid = AngularGrid::<T>::new(profile.len());
    ring_radius * grid.integrate(profile)
}

/// Sample n(θ, t_k) and L(t_k) at K uniform times over one full round-trip
/// period T_opt. The full period is retained so odd harmonics of the matrix
/// elements survive even though L(t) itself repeats every T_opt/2.
pub fn sample_modulation_period<T: Float>(
    soliton: &SolitonField<T>,
    params: &PhysicalParams<T>,
    n_mw: T,
    k_samples: usize,
) -> Result<ModulationProfile<T>> {
    params.validate()?;
    if k_samples < 64 || k_samples % 2 != 0 {
        return Err(Error::InvalidState(format!(
            "need an even number of samples >= 64, got {k_samples}"
        )));
    }
    if params.mask.len() != soliton.envelope.len() {
        return Err(Error::GridMismatch(
            "mask grid does not match the soliton grid".into(),
        ));
    }

    let fsr = params.fsr();
    let period = params.round_trip_period();
    let synth = CpSynthesizer::new(soliton, fsr);
    let times: Vec<T> = (0..k_samples)
        .map(|k| period * fl::<T>(k as f64) / fl::<T>(k_samples as f64))
        .collect();

    let rows: Result<Vec<(Vec<T>, T)>> = times
        .par_iter()
        .map(|&t| {
            let intensity = synth.intensity_at(t);
            let delta_n = kerr_index_profile(&intensity, params, &soliton.params);
            let profile = mw_index_profile(&delta_n, params, n_mw)?;
            let length = optical_path_length(&profile, params.ring_radius);
            Ok((profile, length))
        })
        .collect();
    let rows = rows?;

    let (index_profiles, path_lengths): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(ModulationProfile {
        times,
        index_profiles,
        path_lengths,
        fundamental_freq: T::TAU() * fsr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_params(f_sq: f64, alpha: f64) -> LleParams<f64> {
        LleParams {
            pump_strength_sq: f_sq,
            detuning: alpha,
            dispersion: 0.0078821,
            grid_points: 512,
            step: 1e-3,
        }
    }

    /// Independent root of ρ(1+(α−ρ)²) = F² for the flat-state oracle:
    /// plain Newton from ρ = 0, kept separate from the solver's bisection.
    fn cubic_root_oracle(f_sq: f64, alpha: f64) -> f64 {
        let mut rho = 0.0f64;
        for _ in 0..200 {
            let d = alpha - rho;
            let g = rho * (1.0 + d * d) - f_sq;
            let dg = 1.0 + d * d - 2.0 * rho * d;
            rho -= g / dg;
        }
        rho
    }

    #[test]
    fn unpumped_vacuum_is_fixed_point() {
        let mut params = small_params(4.0, 2.0);
        params.pump_strength_sq = 1e-300; // validate() requires > 0; effectively F = 0
        let state = SolitonField::vacuum(params);
        let out = evolve_lle(&state, 0.5).unwrap();
        let max: f64 = out.envelope.iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(max < 1e-140);
    }

    #[test]
    fn homogeneous_root_is_stationary() {
        let params = small_params(1.5, 2.0);
        let rho = cubic_root_oracle(1.5, 2.0);
        assert_relative_eq!(
            homogeneous_low_branch(1.5, 2.0),
            rho,
            max_relative = 1e-10
        );
        let psi = Complex::new(params.pump_amplitude(), 0.0)
            / Complex::new(1.0, params.detuning - rho);
        let mut fine = params.clone();
        fine.step = 1e-4;
        let n = fine.grid_points;
        let state = SolitonField::new(vec![psi; n], fine).unwrap();
        let out = evolve_lle(&state, 1.0).unwrap();
        for c in &out.envelope {
            assert!((c - psi).norm() < 1e-8, "flat state moved by {}", (c - psi).norm());
        }
    }

    #[test]
    fn soliton_seed_residual_decreases() {
        // Convergence tendency at the bright-soliton operating point.
        let params = small_params(4.1, 3.2);
        let grid = params.grid();
        let rho = homogeneous_low_branch(4.1, 3.2);
        let bg = Complex::new(params.pump_amplitude(), 0.0)
            / Complex::new(1.0, params.detuning - rho);
        let amp = (2.0 * params.detuning).sqrt();
        let width_inv = (2.0 * params.detuning / params.dispersion).sqrt();
        let cos_phi = (8.0 * params.detuning).sqrt() / (std::f64::consts::PI * 4.1f64.sqrt());
        let phase = Complex::new(0.0, cos_phi.acos()).exp();
        let envelope: Vec<Complex<f64>> = (0..params.grid_points)
            .map(|i| {
                let d = grid.wrapped_distance(i, std::f64::consts::PI);
                bg + phase * amp / (width_inv * d).cosh()
            })
            .collect();
        let state = SolitonField::new(envelope, params).unwrap();
        let early = evolve_lle(&state, 2.0).unwrap();
        let later = evolve_lle(&early, 6.0).unwrap();
        let dtheta = state.params.grid().dtheta();
        let r1 = recentered_modulus_change(&early.envelope, &state.envelope, dtheta) / 2.0;
        let r2 = recentered_modulus_change(&later.envelope, &early.envelope, dtheta) / 6.0;
        assert!(r2 < r1, "residual did not decrease: {r1} -> {r2}");
    }

    #[test]
    fn low_pump_detuned_state_has_no_soliton() {
        let params = small_params(1.0, 3.2);
        // Existence bound π²F²/8 ≈ 1.23 < α = 3.2.
        assert!(params.existence_limit() < params.detuning);
        let mut opts = SolverOptions::<f64>::default();
        opts.max_time = 120.0;
        match find_steady_soliton_with(&params, &opts) {
            Err(Error::NoSoliton { .. }) => {}
            other => panic!("expected NoSoliton, got {other:?}"),
        }
    }

    #[test]
    fn zero_detuning_limit_yields_no_bright_pulse() {
        let params = small_params(4.1, 0.05);
        let mut opts = SolverOptions::<f64>::default();
        opts.max_time = 60.0;
        assert!(find_steady_soliton_with(&params, &opts).is_err());
    }

    #[test]
    fn cp_overlap_quadruples_peak_and_beats_antipodal_energy() {
        // A synthetic steady-like pulse is enough to exercise the synthesis.
        let params = small_params(4.1, 3.2);
        let grid = params.grid();
        let envelope: Vec<Complex<f64>> = (0..params.grid_points)
            .map(|i| {
                let d = grid.wrapped_distance(i, 1.0);
                Complex::new(2.5 / (30.0 * d).cosh(), 0.0)
            })
            .collect();
        let field = SolitonField::new(envelope, params).unwrap();
        let fsr = 1.0e11;
        let period = 1.0 / fsr;

        let at_overlap = synthesize_cp_intensity(&field, 0.0, fsr);
        let peak0: f64 = at_overlap.iter().cloned().fold(0.0, f64::max);
        let single_peak = field.peak_intensity();
        assert_relative_eq!(peak0, 4.0 * single_peak, max_relative = 1e-10);

        let antipodal = synthesize_cp_intensity(&field, period / 4.0, fsr);
        let peak_anti: f64 = antipodal.iter().cloned().fold(0.0, f64::max);
        assert_relative_eq!(peak_anti, single_peak, max_relative = 2e-2);

        let sum0: f64 = at_overlap.iter().sum();
        let sum_anti: f64 = antipodal.iter().sum();
        assert!(
            sum0 > sum_anti,
            "integrated intensity at overlap must exceed the antipodal instant"
        );
    }

    fn test_phys(n_grid: usize) -> PhysicalParams<f64> {
        PhysicalParams {
            ring_radius: 200e-6,
            base_index: 1.9,
            group_index: 2.1,
            pump_wavelength: 1550e-9,
            nonlinear_index: 2.4e-19,
            loaded_q: 5e5,
            overlap: 0.1,
            mask: vec![1.0; n_grid],
            coupling_boost: 1.0,
        }
    }

    #[test]
    fn kerr_index_matches_scalar_oracle() {
        let params = test_phys(4);
        let lle = small_params(4.1, 3.2);
        // Scalar oracle straight from the stated formula, Δn = n₀κ/(2ω_p)·I.
        let omega_p = 2.0 * std::f64::consts::PI * 299_792_458.0 / 1550e-9;
        let kappa = omega_p / 5e5;
        let expected = 1.9 * kappa / (2.0 * omega_p) * 6.4;
        let dn = kerr_index_profile(&[0.0, 6.4, 3.2, 6.4], &params, &lle);
        assert_eq!(dn[0], 0.0);
        assert_relative_eq!(dn[1], expected, max_relative = 1e-14);
        // Linearity: doubling the intensity doubles the perturbation.
        assert_relative_eq!(dn[1], 2.0 * dn[2], max_relative = 1e-14);
    }

    #[test]
    fn mw_profile_mask_and_decoupling() {
        let mut params = test_phys(4);
        let dn = vec![1e-5, 2e-5, 3e-5, 4e-5];
        let n = mw_index_profile(&dn, &params, 2.1).unwrap();
        for (ni, dni) in n.iter().zip(&dn) {
            assert_relative_eq!(*ni, 2.1 + 0.1 * dni, max_relative = 1e-14);
        }
        // Step mask zeroes the covered half.
        params.mask = vec![1.0, 1.0, 0.0, 0.0];
        let masked = mw_index_profile(&dn, &params, 2.1).unwrap();
        assert_eq!(masked[2], 2.1);
        assert_eq!(masked[3], 2.1);
        // η = 0 decouples entirely.
        params.mask = vec![1.0; 4];
        params.overlap = 1e-300;
        let decoupled = mw_index_profile(&dn, &params, 2.1).unwrap();
        for v in decoupled {
            assert_relative_eq!(v, 2.1, max_relative = 1e-14);
        }
    }

    #[test]
    fn path_length_of_uniform_and_cosine_profiles() {
        let n = 512;
        let r = 200e-6;
        let uniform = vec![1.9; n];
        let expected = 2.0 * std::f64::consts::PI * 1.9 * r;
        assert_relative_eq!(optical_path_length(&uniform, r), expected, max_relative = 1e-14);

        let grid = AngularGrid::<f64>::new(n);
        let wobbly: Vec<f64> = (0..n).map(|i| 1.9 + 0.3 * grid.theta(i).cos()).collect();
        assert_relative_eq!(optical_path_length(&wobbly, r), expected, max_relative = 1e-13);

        // Equals 2πR times the grid mean for arbitrary profiles.
        let arbitrary: Vec<f64> = (0..n).map(|i| 2.0 + 0.1 * (3.0 * grid.theta(i)).sin()).collect();
        let mean = grid.mean(&arbitrary);
        assert_relative_eq!(
            optical_path_length(&arbitrary, r),
            2.0 * std::f64::consts::PI * r * mean,
            max_relative = 1e-13
        );
    }
}
