//! Hierarchical run configuration with paper-parameter defaults.
//!
//! Units are encoded in key names (`ring_radius_um`, `d2_mhz`, …) so a value
//! can never silently change meaning. Unknown keys are rejected with a
//! nearest-match suggestion, and all problems are reported in one pass.

use serde::{Deserialize, Serialize};
use soliton_dce::lle::{LleParams, PhysicalParams};
use soliton_dce::modes::DoubletRule;

/// All tunables of a run. `Default` is the reference parameter set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub optics: OpticsConfig,
    pub mw: MwConfig,
    pub quantum: QuantumConfig,
    pub analysis: AnalysisConfig,
    pub io: IoConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OpticsConfig {
    /// Normalized pump power F².
    pub pump_strength_sq: f64,
    /// Normalized detuning α.
    pub detuning: f64,
    /// Dispersion parameter D₂/2π in MHz.
    pub d2_mhz: f64,
    /// Angular grid points (power of two ≥ 256).
    pub grid_points: usize,
    /// Split-step size in normalized time.
    pub step: f64,
    /// Normalized-time budget for the steady-state search.
    pub steady_max_time: f64,
    /// Ring radius in micrometers.
    pub ring_radius_um: f64,
    /// Linear effective index n₀.
    pub base_index: f64,
    /// Group index n_g (sets the free spectral range).
    pub group_index: f64,
    /// Pump wavelength in nanometers.
    pub pump_wavelength_nm: f64,
    /// Nonlinear index n₂ in m²/W (reported in outputs).
    pub nonlinear_index_m2_per_w: f64,
    /// Loaded quality factor Q_l.
    pub loaded_q: f64,
    /// Transverse mode overlap η between the rings.
    pub overlap: f64,
    /// Dimensionless scaling of the index perturbation.
    pub coupling_boost: f64,
    /// Masking profile M(θ): "uniform" or "half_ring".
    pub mask: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MwConfig {
    /// Microwave effective index n_mw.
    pub base_index: f64,
    /// Retained resonant modes.
    pub n_modes: usize,
    /// Time samples per modulation period (even, ≥ 64).
    pub k_samples: usize,
    /// Doublet member selection: "modulation_overlap" or "symmetric".
    pub doublet_rule: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuantumConfig {
    /// Fock levels per mode (photons 0..levels−1).
    pub levels: usize,
    /// Decay rates to simulate, in 1/s; 0 runs the closed-system propagator.
    pub decay_rates_per_s: Vec<f64>,
    /// Window and sampling of the zero-decay run.
    pub zero_decay_window_us: f64,
    pub zero_decay_samples: usize,
    /// Window and sampling of the finite-decay runs.
    pub decay_window_us: f64,
    pub decay_samples: usize,
    /// Cap on the flat Fock-space dimension.
    pub dim_cap: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnalysisConfig {
    /// Modes to measure in the persistency analysis.
    pub measure_modes: Vec<usize>,
    /// Largest resolved photon number in the persistency table.
    pub max_fock: usize,
    /// Display truncation of exported density-matrix blocks.
    pub display_levels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IoConfig {
    pub out_dir: String,
    pub cache_dir: String,
    /// "csv" (decimal text) or "json".
    pub format: String,
    /// Reuse cached stage artifacts when hashes match.
    pub cache: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            optics: OpticsConfig {
                pump_strength_sq: 4.1,
                detuning: 3.2,
                d2_mhz: 1.5246,
                grid_points: 1024,
                step: 1e-3,
                steady_max_time: 400.0,
                ring_radius_um: 200.0,
                base_index: 1.9,
                group_index: 2.1,
                pump_wavelength_nm: 1550.0,
                nonlinear_index_m2_per_w: 2.4e-19,
                loaded_q: 5e5,
                overlap: 0.1,
                coupling_boost: 1.0,
                mask: "uniform".into(),
            },
            mw: MwConfig {
                base_index: 2.1,
                n_modes: 3,
                k_samples: 256,
                doublet_rule: "modulation_overlap".into(),
            },
            quantum: QuantumConfig {
                levels: 9,
                decay_rates_per_s: vec![0.0, 1e5],
                zero_decay_window_us: 5.0,
                zero_decay_samples: 501,
                decay_window_us: 3.0,
                decay_samples: 301,
                dim_cap: 16_384,
            },
            analysis: AnalysisConfig {
                measure_modes: vec![0, 1, 2],
                max_fock: 8,
                display_levels: 4,
            },
            io: IoConfig {
                out_dir: "out".into(),
                cache_dir: "cache".into(),
                format: "csv".into(),
                cache: true,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn lle_params(&self) -> LleParams<f64> {
        let o = &self.optics;
        LleParams {
            pump_strength_sq: o.pump_strength_sq,
            detuning: o.detuning,
            dispersion: LleParams::dispersion_from_physical(
                o.d2_mhz * 1e6,
                o.loaded_q,
                o.pump_wavelength_nm * 1e-9,
            ),
            grid_points: o.grid_points,
            step: o.step,
        }
    }

    pub fn physical_params(&self) -> PhysicalParams<f64> {
        let o = &self.optics;
        let n = o.grid_points;
        let mask = match o.mask.as_str() {
            "half_ring" => (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect(),
            _ => vec![1.0; n],
        };
        PhysicalParams {
            ring_radius: o.ring_radius_um * 1e-6,
            base_index: o.base_index,
            group_index: o.group_index,
            pump_wavelength: o.pump_wavelength_nm * 1e-9,
            nonlinear_index: o.nonlinear_index_m2_per_w,
            loaded_q: o.loaded_q,
            overlap: o.overlap,
            mask,
            coupling_boost: o.coupling_boost,
        }
    }

    pub fn doublet_rule(&self) -> DoubletRule {
        match self.mw.doublet_rule.as_str() {
            "symmetric" => DoubletRule::Symmetric,
            _ => DoubletRule::ModulationOverlap,
        }
    }

    pub fn zero_decay_times(&self) -> Vec<f64> {
        uniform_times(
            self.quantum.zero_decay_window_us * 1e-6,
            self.quantum.zero_decay_samples,
        )
    }

    pub fn decay_times(&self) -> Vec<f64> {
        uniform_times(self.quantum.decay_window_us * 1e-6, self.quantum.decay_samples)
    }

    /// Canonical serialization used by the stage hashes.
    pub fn canonical_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Canonical serialization of everything that determines output content:
    /// the numeric sections plus the file format, but not the directories
    /// the files land in.
    pub fn content_string(&self) -> String {
        #[derive(Serialize)]
        struct Content<'a> {
            optics: &'a OpticsConfig,
            mw: &'a MwConfig,
            quantum: &'a QuantumConfig,
            analysis: &'a AnalysisConfig,
            format: &'a str,
        }
        toml::to_string(&Content {
            optics: &self.optics,
            mw: &self.mw,
            quantum: &self.quantum,
            analysis: &self.analysis,
            format: &self.io.format,
        })
        .expect("config serializes")
    }
}

fn uniform_times(window: f64, samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|i| window * i as f64 / (samples - 1) as f64)
        .collect()
}

/// Every problem found while parsing a configuration.
#[derive(Debug, thiserror::Error)]
#[error("invalid configuration:\n{}", errors.join("\n"))]
pub struct ConfigError {
    pub errors: Vec<String>,
}

struct KeySchema {
    section: &'static str,
    key: &'static str,
    apply: fn(&mut ExperimentConfig, &toml::Value) -> Result<(), String>,
}

fn as_f64(v: &toml::Value) -> Result<f64, String> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(x) => Ok(*x as f64),
        other => Err(format!("expected a number, got {other}")),
    }
}

fn as_usize(v: &toml::Value) -> Result<usize, String> {
    match v {
        toml::Value::Integer(x) if *x >= 0 => Ok(*x as usize),
        other => Err(format!("expected a non-negative integer, got {other}")),
    }
}

fn as_string(v: &toml::Value) -> Result<String, String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        other => Err(format!("expected a string, got {other}")),
    }
}

fn as_bool(v: &toml::Value) -> Result<bool, String> {
    match v {
        toml::Value::Boolean(b) => Ok(*b),
        other => Err(format!("expected a boolean, got {other}")),
    }
}

fn as_f64_list(v: &toml::Value) -> Result<Vec<f64>, String> {
    match v {
        toml::Value::Array(items) => items.iter().map(as_f64).collect(),
        other => Err(format!("expected an array of numbers, got {other}")),
    }
}

fn as_usize_list(v: &toml::Value) -> Result<Vec<usize>, String> {
    match v {
        toml::Value::Array(items) => items.iter().map(as_usize).collect(),
        other => Err(format!(
            "expected an array of non-negative integers, got {other}"
        )),
    }
}

macro_rules! schema_entry {
    ($section:ident, $key:ident, $conv:ident) => {
        KeySchema {
            section: stringify!($section),
            key: stringify!($key),
            apply: |cfg, v| {
                cfg.$section.$key = $conv(v)?;
                Ok(())
            },
        }
    };
}

fn schema() -> Vec<KeySchema> {
    vec![
        schema_entry!(optics, pump_strength_sq, as_f64),
        schema_entry!(optics, detuning, as_f64),
        schema_entry!(optics, d2_mhz, as_f64),
        schema_entry!(optics, grid_points, as_usize),
        schema_entry!(optics, step, as_f64),
        schema_entry!(optics, steady_max_time, as_f64),
        schema_entry!(optics, ring_radius_um, as_f64),
        schema_entry!(optics, base_index, as_f64),
        schema_entry!(optics, group_index, as_f64),
        schema_entry!(optics, pump_wavelength_nm, as_f64),
        schema_entry!(optics, nonlinear_index_m2_per_w, as_f64),
        schema_entry!(optics, loaded_q, as_f64),
        schema_entry!(optics, overlap, as_f64),
        schema_entry!(optics, coupling_boost, as_f64),
        schema_entry!(optics, mask, as_string),
        schema_entry!(mw, base_index, as_f64),
        schema_entry!(mw, n_modes, as_usize),
        schema_entry!(mw, k_samples, as_usize),
        schema_entry!(mw, doublet_rule, as_string),
        schema_entry!(quantum, levels, as_usize),
        schema_entry!(quantum, decay_rates_per_s, as_f64_list),
        schema_entry!(quantum, zero_decay_window_us, as_f64),
        schema_entry!(quantum, zero_decay_samples, as_usize),
        schema_entry!(quantum, decay_window_us, as_f64),
        schema_entry!(quantum, decay_samples, as_usize),
        schema_entry!(quantum, dim_cap, as_usize),
        schema_entry!(analysis, measure_modes, as_usize_list),
        schema_entry!(analysis, max_fock, as_usize),
        schema_entry!(analysis, display_levels, as_usize),
        schema_entry!(io, out_dir, as_string),
        schema_entry!(io, cache_dir, as_string),
        schema_entry!(io, format, as_string),
        schema_entry!(io, cache, as_bool),
    ]
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn nearest_key<'a>(unknown: &str, known: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    known
        .map(|k| (levenshtein(unknown, k), k))
        .min()
        .filter(|(d, _)| *d <= 3)
        .map(|(_, k)| k)
}

/// Parse and validate a configuration document. An empty document yields the
/// full default (reference-parameter) configuration.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut errors = Vec::new();
    let parsed: toml::Value = match raw.parse() {
        Ok(v) => v,
        Err(e) => {
            return Err(ConfigError {
                errors: vec![format!("TOML syntax error: {e}")],
            })
        }
    };

    let mut cfg = ExperimentConfig::default();
    let entries = schema();
    let sections = ["optics", "mw", "quantum", "analysis", "io"];

    if let toml::Value::Table(table) = parsed {
        for (section, content) in table {
            if !sections.contains(&section.as_str()) {
                let hint = nearest_key(&section, sections.iter().copied())
                    .map(|s| format!(" (did you mean `{s}`?)"))
                    .unwrap_or_default();
                errors.push(format!("unknown section `{section}`{hint}"));
                continue;
            }
            let toml::Value::Table(kv) = content else {
                errors.push(format!("section `{section}` must be a table"));
                continue;
            };
            for (key, value) in kv {
                match entries
                    .iter()
                    .find(|e| e.section == section && e.key == key)
                {
                    Some(entry) => {
                        if let Err(msg) = (entry.apply)(&mut cfg, &value) {
                            errors.push(format!("`{section}.{key}`: {msg}"));
                        }
                    }
                    None => {
                        let hint = nearest_key(
                            &key,
                            entries
                                .iter()
                                .filter(|e| e.section == section)
                                .map(|e| e.key),
                        )
                        .map(|s| format!(" (did you mean `{section}.{s}`?)"))
                        .unwrap_or_default();
                        errors.push(format!("unknown key `{section}.{key}`{hint}"));
                    }
                }
            }
        }
    } else {
        errors.push("top level of the configuration must be a table".into());
    }

    check_ranges(&cfg, &mut errors);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { errors })
    }
}

fn check_ranges(cfg: &ExperimentConfig, errors: &mut Vec<String>) {
    let mut positive = |name: &str, v: f64| {
        if !(v > 0.0) {
            errors.push(format!("`{name}` must be positive, got {v}"));
        }
    };
    let o = &cfg.optics;
    positive("optics.pump_strength_sq", o.pump_strength_sq);
    positive("optics.d2_mhz", o.d2_mhz);
    positive("optics.step", o.step);
    positive("optics.steady_max_time", o.steady_max_time);
    positive("optics.ring_radius_um", o.ring_radius_um);
    positive("optics.base_index", o.base_index);
    positive("optics.group_index", o.group_index);
    positive("optics.pump_wavelength_nm", o.pump_wavelength_nm);
    positive("optics.nonlinear_index_m2_per_w", o.nonlinear_index_m2_per_w);
    positive("optics.loaded_q", o.loaded_q);
    positive("optics.coupling_boost", o.coupling_boost);
    positive("mw.base_index", cfg.mw.base_index);
    positive("quantum.zero_decay_window_us", cfg.quantum.zero_decay_window_us);
    positive("quantum.decay_window_us", cfg.quantum.decay_window_us);

    if !o.grid_points.is_power_of_two() || o.grid_points < 256 {
        errors.push(format!(
            "`optics.grid_points` must be a power of two >= 256, got {}",
            o.grid_points
        ));
    }
    if !(o.overlap > 0.0 && o.overlap <= 1.0) {
        errors.push(format!(
            "`optics.overlap` must lie in (0, 1], got {}",
            o.overlap
        ));
    }
    if o.mask != "uniform" && o.mask != "half_ring" {
        errors.push(format!(
            "`optics.mask` must be \"uniform\" or \"half_ring\", got \"{}\"",
            o.mask
        ));
    }
    if cfg.mw.n_modes < 1 {
        errors.push("`mw.n_modes` must be at least 1".into());
    }
    if cfg.mw.k_samples < 64 || cfg.mw.k_samples % 2 != 0 {
        errors.push(format!(
            "`mw.k_samples` must be an even number >= 64, got {}",
            cfg.mw.k_samples
        ));
    }
    if cfg.mw.doublet_rule != "modulation_overlap" && cfg.mw.doublet_rule != "symmetric" {
        errors.push(format!(
            "`mw.doublet_rule` must be \"modulation_overlap\" or \"symmetric\", got \"{}\"",
            cfg.mw.doublet_rule
        ));
    }
    let q = &cfg.quantum;
    if q.levels < 2 {
        errors.push(format!("`quantum.levels` must be at least 2, got {}", q.levels));
    }
    if q.decay_rates_per_s.iter().any(|&r| r < 0.0) {
        errors.push("`quantum.decay_rates_per_s` entries must be non-negative".into());
    }
    if q.decay_rates_per_s.is_empty() {
        errors.push("`quantum.decay_rates_per_s` must list at least one rate".into());
    }
    if q.zero_decay_samples < 2 {
        errors.push("`quantum.zero_decay_samples` must be at least 2".into());
    }
    if q.decay_samples < 2 {
        errors.push("`quantum.decay_samples` must be at least 2".into());
    }
    let a = &cfg.analysis;
    if a.measure_modes.iter().any(|&m| m >= cfg.mw.n_modes) {
        errors.push(format!(
            "`analysis.measure_modes` entries must be below mw.n_modes = {}",
            cfg.mw.n_modes
        ));
    }
    if a.max_fock >= q.levels {
        errors.push(format!(
            "`analysis.max_fock` must be below quantum.levels = {}, got {}",
            q.levels, a.max_fock
        ));
    }
    if a.display_levels == 0 || a.display_levels > q.levels {
        errors.push(format!(
            "`analysis.display_levels` must lie in 1..={}, got {}",
            q.levels, a.display_levels
        ));
    }
    if cfg.io.format != "csv" && cfg.io.format != "json" {
        errors.push(format!(
            "`io.format` must be \"csv\" or \"json\", got \"{}\"",
            cfg.io.format
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_preset() {
        let cfg = validate_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.optics.pump_strength_sq, 4.1);
        assert_eq!(cfg.quantum.levels, 9);
        assert_eq!(cfg.quantum.decay_rates_per_s, vec![0.0, 1e5]);
    }

    #[test]
    fn negative_q_is_a_range_error_naming_the_key() {
        let err = validate_config("[optics]\nloaded_q = -5.0\n").unwrap_err();
        assert!(err.errors.iter().any(|e| e.contains("optics.loaded_q")));
    }

    #[test]
    fn unknown_key_gets_a_suggestion() {
        let err = validate_config("[optics]\ndetunning = 3.0\n").unwrap_err();
        let msg = &err.errors[0];
        assert!(msg.contains("unknown key"), "{msg}");
        assert!(msg.contains("did you mean `optics.detuning`"), "{msg}");
    }

    #[test]
    fn all_errors_reported_at_once() {
        let err = validate_config(
            "[optics]\nloaded_q = -1\noverlap = 2.0\n[mw]\nk_samples = 63\n",
        )
        .unwrap_err();
        assert!(err.errors.len() >= 3, "{:?}", err.errors);
    }

    #[test]
    fn overrides_apply_over_defaults() {
        let cfg =
            validate_config("[optics]\ndetuning = 3.1\n[io]\nformat = \"json\"\n").unwrap();
        assert_eq!(cfg.optics.detuning, 3.1);
        assert_eq!(cfg.io.format, "json");
        assert_eq!(cfg.optics.pump_strength_sq, 4.1);
    }

    #[test]
    fn derived_parameters_have_expected_scales() {
        let cfg = ExperimentConfig::default();
        let lle = cfg.lle_params();
        assert!((lle.dispersion - 7.8826e-3).abs() < 1e-6);
        let phys = cfg.physical_params();
        assert!((phys.fsr() - 1.136e11).abs() < 1e8);
        let times = cfg.zero_decay_times();
        assert_eq!(times.len(), 501);
        assert!((times[500] - 5e-6).abs() < 1e-18);
    }
}
