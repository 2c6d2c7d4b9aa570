//! Staged pipeline with content-hashed, cached intermediate artifacts.
//!
//! Each stage hashes the configuration keys it depends on together with its
//! upstream stage hash; a cache hit replays the stored payload bit-exactly,
//! so reruns with an unchanged configuration do no numerical work.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use soliton_dce::entangle::{
    self, concurrence_of_density, Partition, ProjectionKind,
};
use soliton_dce::fock::{
    self, CollapseChannel, FockSpace, LindbladOptions, QuantumState, StateData,
};
use soliton_dce::lle::{self, ModulationProfile, SolitonField, SolverOptions};
use soliton_dce::modes::{self, RwaHamiltonian};

use crate::config::ExperimentConfig;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Soliton,
    Modulation,
    Hamiltonian,
    Evolution,
    Analysis,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Soliton,
        Stage::Modulation,
        Stage::Hamiltonian,
        Stage::Evolution,
        Stage::Analysis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Soliton => "soliton",
            Stage::Modulation => "modulation",
            Stage::Hamiltonian => "hamiltonian",
            Stage::Evolution => "evolution",
            Stage::Analysis => "analysis",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("numeric failure in stage {stage}: {source}")]
    Numeric {
        stage: &'static str,
        #[source]
        source: soliton_dce::Error,
    },
    #[error("invariant check failed: {0}")]
    Invariant(String),
    #[error("missing upstream artifact for stage `{needed}`: run the `{run}` stage first")]
    MissingDependency { needed: String, run: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt cache payload at {path}: {detail}")]
    CorruptCache { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---- stage payloads -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolitonPayload {
    pub pump_strength_sq: f64,
    pub detuning: f64,
    pub dispersion: f64,
    pub grid_points: usize,
    pub step: f64,
    pub residual: f64,
    pub power_balance_residual: f64,
    pub peak_intensity: f64,
    pub envelope_re: Vec<f64>,
    pub envelope_im: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModulationPayload {
    pub times: Vec<f64>,
    pub path_lengths: Vec<f64>,
    pub fundamental_freq: f64,
    pub ring_radius: f64,
    pub index_profiles: Vec<Vec<f64>>,
    pub half_period_deviation: f64,
    pub coupling_boost: f64,
}

/// The on-disk form of the resonant Hamiltonian: complex matrices as
/// `[re, im]` pairs in row-major order, plus assembly metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HamiltonianPayload {
    pub n_modes: usize,
    pub fundamental_rad_per_s: f64,
    pub mode_freqs_rad_per_s: Vec<f64>,
    pub beamsplitter: Vec<Vec<[f64; 2]>>,
    pub pair: Vec<Vec<[f64; 2]>>,
    pub hermiticity_deviation: f64,
    pub ladder_detuning: Vec<f64>,
    pub k_samples: usize,
    pub grid_points: usize,
    pub orthonormality_deviation: f64,
    pub antisymmetry_deviation: f64,
    pub symmetry_deviation: f64,
    pub tolerances: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TomographyPayload {
    pub labels: Vec<Vec<usize>>,
    pub matrix_re: Vec<Vec<f64>>,
    pub matrix_im: Vec<Vec<f64>>,
    pub probability_mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PureRunPayload {
    pub times: Vec<f64>,
    /// Per-mode mean photon numbers, `[sample][mode]`.
    pub mean_photons: Vec<Vec<f64>>,
    /// Full state series, `[sample][flat index]`.
    pub amplitudes_re: Vec<Vec<f64>>,
    pub amplitudes_im: Vec<Vec<f64>>,
    pub max_odd_parity_probability: f64,
    pub max_top_level_occupation: f64,
    pub final_tomography: TomographyPayload,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DampedRunPayload {
    pub decay_rate_per_s: f64,
    pub times: Vec<f64>,
    pub mean_photons: Vec<Vec<f64>>,
    pub max_top_level_occupation: f64,
    pub final_tomography: TomographyPayload,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionPayload {
    pub levels: usize,
    pub n_modes: usize,
    pub zero_decay: PureRunPayload,
    pub damped: Vec<DampedRunPayload>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcurrenceTracePayload {
    pub times: Vec<f64>,
    pub full: Vec<f64>,
    /// Pair value with the named mode traced out, `[sample][traced_mode]`.
    pub reduced: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistencyCellPayload {
    pub probability: f64,
    pub concurrence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersistencyPayload {
    pub modes: Vec<usize>,
    pub max_fock: usize,
    /// `entries[row][j]`; `None` marks an impossible outcome.
    pub entries: Vec<Vec<Option<PersistencyCellPayload>>>,
    pub snapshot_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionPayload {
    pub mode: usize,
    /// "zero" or "nonzero".
    pub kind: String,
    pub probability: f64,
    /// Purity-based concurrence of the untouched pair.
    pub pair_concurrence: f64,
    pub pair_tomography: TomographyPayload,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisPayload {
    pub concurrence: ConcurrenceTracePayload,
    pub persistency: PersistencyPayload,
    pub projections: Vec<ProjectionPayload>,
}

// ---- payload <-> core type conversion --------------------------------------

impl SolitonPayload {
    pub fn from_field(field: &SolitonField<f64>) -> Self {
        Self {
            pump_strength_sq: field.params.pump_strength_sq,
            detuning: field.params.detuning,
            dispersion: field.params.dispersion,
            grid_points: field.params.grid_points,
            step: field.params.step,
            residual: field.residual,
            power_balance_residual: field.power_balance_residual(),
            peak_intensity: field.peak_intensity(),
            envelope_re: field.envelope.iter().map(|c| c.re).collect(),
            envelope_im: field.envelope.iter().map(|c| c.im).collect(),
        }
    }

    pub fn to_field(&self) -> Result<SolitonField<f64>, soliton_dce::Error> {
        let params = lle::LleParams {
            pump_strength_sq: self.pump_strength_sq,
            detuning: self.detuning,
            dispersion: self.dispersion,
            grid_points: self.grid_points,
            step: self.step,
        };
        let envelope = self
            .envelope_re
            .iter()
            .zip(&self.envelope_im)
            .map(|(&re, &im)| Complex::new(re, im))
            .collect();
        let mut field = SolitonField::new(envelope, params)?;
        field.residual = self.residual;
        Ok(field)
    }
}

impl ModulationPayload {
    pub fn to_profile(&self) -> ModulationProfile<f64> {
        ModulationProfile {
            times: self.times.clone(),
            index_profiles: self.index_profiles.clone(),
            path_lengths: self.path_lengths.clone(),
            fundamental_freq: self.fundamental_freq,
        }
    }
}

fn matrix_to_pairs(m: &DMatrix<Complex<f64>>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn pairs_to_matrix(rows: &[Vec<[f64; 2]>]) -> DMatrix<Complex<f64>> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| Complex::new(rows[i][j][0], rows[i][j][1]))
}

impl HamiltonianPayload {
    pub fn to_rwa(&self) -> RwaHamiltonian<f64> {
        RwaHamiltonian {
            beamsplitter: pairs_to_matrix(&self.beamsplitter),
            pair: pairs_to_matrix(&self.pair),
            mode_freqs: self.mode_freqs_rad_per_s.clone(),
            fundamental: self.fundamental_rad_per_s,
            hermiticity_deviation: self.hermiticity_deviation,
            ladder_detuning: self.ladder_detuning.clone(),
        }
    }
}

fn tomography_payload(state: &QuantumState<f64>, display_levels: usize) -> TomographyPayload {
    let sub = fock::tomography_subset(state, display_levels).expect("display levels validated");
    let k = sub.matrix.nrows();
    TomographyPayload {
        labels: sub.labels,
        matrix_re: (0..k)
            .map(|i| (0..k).map(|j| sub.matrix[(i, j)].re).collect())
            .collect(),
        matrix_im: (0..k)
            .map(|i| (0..k).map(|j| sub.matrix[(i, j)].im).collect())
            .collect(),
        probability_mass: sub.probability_mass,
    }
}

impl PureRunPayload {
    pub fn state_at(&self, idx: usize, space: &FockSpace) -> QuantumState<f64> {
        let amplitudes = DVector::from_iterator(
            space.dim(),
            self.amplitudes_re[idx]
                .iter()
                .zip(&self.amplitudes_im[idx])
                .map(|(&re, &im)| Complex::new(re, im)),
        );
        QuantumState {
            space: space.clone(),
            data: StateData::Pure(amplitudes),
            frame_time: self.times[idx],
        }
    }
}

// ---- invariant checks -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Warnings are recorded but do not abort the run.
    pub fatal: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, fatal: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        fatal,
        detail,
    }
}

// ---- manifest ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub hash: String,
    pub from_cache: bool,
}

/// Deterministic record of a pipeline run: configuration hash, stage hashes,
/// every emitted file with its digest, and the invariant-check results.
/// Contains no wall-clock data, so identical runs serialize identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub format: String,
    pub stages: Vec<StageManifest>,
    pub files: BTreeMap<String, String>,
    pub checks: Vec<CheckResult>,
    pub tolerances: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn build(
        config_hash: String,
        format: String,
        artifacts: &PipelineArtifacts,
        checks: Vec<CheckResult>,
        files: BTreeMap<String, String>,
    ) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            format,
            stages: Stage::ALL
                .iter()
                .map(|&stage| StageManifest {
                    stage,
                    hash: artifacts.hashes[&stage].clone(),
                    from_cache: artifacts.from_cache[&stage],
                })
                .collect(),
            files,
            checks,
            tolerances: tolerances(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---- stage hashing -----------------------------------------------------------

fn hash_keys(stage: &str, upstream: &str, keys: &[(&str, String)]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(stage.as_bytes());
    hasher.update(b"|");
    hasher.update(upstream.as_bytes());
    for (name, value) in keys {
        hasher.update(b"|");
        hasher.update(name.as_bytes());
        hasher.update(b"=");
        hasher.update(value.as_bytes());
    }
    hex_string(&hasher.finalize())
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

/// Content hash of each stage, chained through its upstream stage.
pub fn stage_hashes(cfg: &ExperimentConfig) -> BTreeMap<Stage, String> {
    let o = &cfg.optics;
    let soliton = hash_keys(
        "soliton/v1",
        "",
        &[
            ("pump_strength_sq", f(o.pump_strength_sq)),
            ("detuning", f(o.detuning)),
            ("d2_mhz", f(o.d2_mhz)),
            ("grid_points", o.grid_points.to_string()),
            ("step", f(o.step)),
            ("steady_max_time", f(o.steady_max_time)),
            ("loaded_q", f(o.loaded_q)),
            ("pump_wavelength_nm", f(o.pump_wavelength_nm)),
        ],
    );
    let modulation = hash_keys(
        "modulation/v1",
        &soliton,
        &[
            ("ring_radius_um", f(o.ring_radius_um)),
            ("base_index", f(o.base_index)),
            ("group_index", f(o.group_index)),
            ("overlap", f(o.overlap)),
            ("coupling_boost", f(o.coupling_boost)),
            ("mask", o.mask.clone()),
            ("mw_base_index", f(cfg.mw.base_index)),
            ("k_samples", cfg.mw.k_samples.to_string()),
        ],
    );
    let hamiltonian = hash_keys(
        "hamiltonian/v1",
        &modulation,
        &[
            ("n_modes", cfg.mw.n_modes.to_string()),
            ("doublet_rule", cfg.mw.doublet_rule.clone()),
        ],
    );
    let q = &cfg.quantum;
    let evolution = hash_keys(
        "evolution/v1",
        &hamiltonian,
        &[
            ("levels", q.levels.to_string()),
            (
                "decay_rates",
                q.decay_rates_per_s.iter().map(|r| f(*r)).collect::<Vec<_>>().join(","),
            ),
            ("zero_decay_window_us", f(q.zero_decay_window_us)),
            ("zero_decay_samples", q.zero_decay_samples.to_string()),
            ("decay_window_us", f(q.decay_window_us)),
            ("decay_samples", q.decay_samples.to_string()),
            ("dim_cap", q.dim_cap.to_string()),
        ],
    );
    let a = &cfg.analysis;
    let analysis = hash_keys(
        "analysis/v1",
        &evolution,
        &[
            (
                "measure_modes",
                a.measure_modes.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("max_fock", a.max_fock.to_string()),
            ("display_levels", a.display_levels.to_string()),
        ],
    );
    BTreeMap::from([
        (Stage::Soliton, soliton),
        (Stage::Modulation, modulation),
        (Stage::Hamiltonian, hamiltonian),
        (Stage::Evolution, evolution),
        (Stage::Analysis, analysis),
    ])
}

// ---- cache -------------------------------------------------------------------

pub struct StageCache {
    root: PathBuf,
}

impl StageCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn payload_path(&self, stage: Stage, hash: &str) -> PathBuf {
        self.root
            .join(format!("{}-{}", stage.name(), &hash[..16]))
            .join("payload.json")
    }

    pub fn load<P: DeserializeOwned>(&self, stage: Stage, hash: &str) -> Option<P> {
        let path = self.payload_path(stage, hash);
        let bytes = fs::read(&path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Atomic write: temp file in the final directory, then rename.
    pub fn store<P: Serialize>(
        &self,
        stage: Stage,
        hash: &str,
        payload: &P,
    ) -> Result<(), PipelineError> {
        let path = self.payload_path(stage, hash);
        let dir = path.parent().expect("payload path has a directory");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let bytes = serde_json::to_vec(payload).expect("payload serializes");
        let tmp = dir.join("payload.json.tmp");
        fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(())
    }
}

// ---- stage execution -----------------------------------------------------------

pub struct StageOutcome<P> {
    pub payload: P,
    pub from_cache: bool,
}

fn run_stage<P, F>(
    cache: &StageCache,
    use_cache: bool,
    stage: Stage,
    hash: &str,
    compute: F,
) -> Result<StageOutcome<P>, PipelineError>
where
    P: Serialize + DeserializeOwned,
    F: FnOnce() -> Result<P, PipelineError>,
{
    if use_cache {
        if let Some(payload) = cache.load::<P>(stage, hash) {
            log::info!("stage {} served from cache ({}…)", stage.name(), &hash[..8]);
            return Ok(StageOutcome {
                payload,
                from_cache: true,
            });
        }
    }
    log::info!("computing stage {}", stage.name());
    let payload = compute()?;
    cache.store(stage, hash, &payload)?;
    Ok(StageOutcome {
        payload,
        from_cache: false,
    })
}

fn numeric(stage: &'static str) -> impl FnOnce(soliton_dce::Error) -> PipelineError {
    move |source| PipelineError::Numeric { stage, source }
}

pub fn compute_soliton(cfg: &ExperimentConfig) -> Result<SolitonPayload, PipelineError> {
    let params = cfg.lle_params();
    let opts = SolverOptions {
        max_time: cfg.optics.steady_max_time,
        ..SolverOptions::default()
    };
    let field = lle::find_steady_soliton_with(&params, &opts).map_err(numeric("soliton"))?;
    Ok(SolitonPayload::from_field(&field))
}

pub fn compute_modulation(
    cfg: &ExperimentConfig,
    soliton: &SolitonPayload,
) -> Result<ModulationPayload, PipelineError> {
    let field = soliton.to_field().map_err(numeric("modulation"))?;
    let phys = cfg.physical_params();
    let profile = lle::sample_modulation_period(&field, &phys, cfg.mw.base_index, cfg.mw.k_samples)
        .map_err(numeric("modulation"))?;
    profile
        .validate(phys.ring_radius)
        .map_err(numeric("modulation"))?;
    Ok(ModulationPayload {
        times: profile.times.clone(),
        path_lengths: profile.path_lengths.clone(),
        fundamental_freq: profile.fundamental_freq,
        ring_radius: phys.ring_radius,
        index_profiles: profile.index_profiles,
        half_period_deviation: {
            let p = ModulationProfile {
                times: profile.times,
                index_profiles: Vec::new(),
                path_lengths: profile.path_lengths,
                fundamental_freq: profile.fundamental_freq,
            };
            p.half_period_deviation()
        },
        coupling_boost: cfg.optics.coupling_boost,
    })
}

pub fn compute_hamiltonian(
    cfg: &ExperimentConfig,
    modulation: &ModulationPayload,
) -> Result<HamiltonianPayload, PipelineError> {
    let profile = modulation.to_profile();
    let basis = modes::basis_series(
        &profile,
        modulation.ring_radius,
        cfg.mw.n_modes,
        cfg.doublet_rule(),
    )
    .map_err(numeric("hamiltonian"))?;
    let ortho = basis.orthonormality_deviation();
    let g = modes::coupling_g(&basis).map_err(numeric("hamiltonian"))?;
    let coeffs = modes::assemble_cd(&basis, g).map_err(numeric("hamiltonian"))?;
    let antisym = coeffs.antisymmetry_deviation();
    let sym = coeffs.symmetry_deviation();
    let rwa = modes::rwa_hamiltonian(&coeffs, profile.fundamental_freq, cfg.mw.n_modes)
        .map_err(numeric("hamiltonian"))?;

    Ok(HamiltonianPayload {
        n_modes: cfg.mw.n_modes,
        fundamental_rad_per_s: rwa.fundamental,
        mode_freqs_rad_per_s: rwa.mode_freqs.clone(),
        beamsplitter: matrix_to_pairs(&rwa.beamsplitter),
        pair: matrix_to_pairs(&rwa.pair),
        hermiticity_deviation: rwa.hermiticity_deviation,
        ladder_detuning: rwa.ladder_detuning.clone(),
        k_samples: cfg.mw.k_samples,
        grid_points: cfg.optics.grid_points,
        orthonormality_deviation: ortho,
        antisymmetry_deviation: antisym,
        symmetry_deviation: sym,
        tolerances: tolerances(),
    })
}

pub fn compute_evolution(
    cfg: &ExperimentConfig,
    hamiltonian: &HamiltonianPayload,
) -> Result<EvolutionPayload, PipelineError> {
    let rwa = hamiltonian.to_rwa();
    let space = FockSpace::build_with_cap(cfg.mw.n_modes, cfg.quantum.levels, cfg.quantum.dim_cap)
        .map_err(numeric("evolution"))?;
    let h = fock::hamiltonian_matrix(&rwa, &space).map_err(numeric("evolution"))?;
    let vacuum = QuantumState::vacuum(space.clone());
    let display = cfg.analysis.display_levels;

    // Closed-system run over the zero-decay window.
    let times = cfg.zero_decay_times();
    let states = fock::evolve_pure(&h, &vacuum, &times).map_err(numeric("evolution"))?;
    let mut max_odd: f64 = 0.0;
    let mut max_top: f64 = 0.0;
    let mut mean_photons = Vec::with_capacity(states.len());
    let mut amp_re = Vec::with_capacity(states.len());
    let mut amp_im = Vec::with_capacity(states.len());
    for st in &states {
        max_odd = max_odd.max(st.odd_parity_probability());
        max_top = max_top.max(st.top_level_occupation().into_iter().fold(0.0, f64::max));
        mean_photons.push(st.mean_photon_numbers());
        let amps = st.pure_amplitudes().map_err(numeric("evolution"))?;
        amp_re.push(amps.iter().map(|c| c.re).collect());
        amp_im.push(amps.iter().map(|c| c.im).collect());
    }
    let zero_decay = PureRunPayload {
        times,
        mean_photons,
        amplitudes_re: amp_re,
        amplitudes_im: amp_im,
        max_odd_parity_probability: max_odd,
        max_top_level_occupation: max_top,
        final_tomography: tomography_payload(states.last().expect("nonempty"), display),
    };

    // Open-system runs for every nonzero decay rate.
    let mut damped = Vec::new();
    let dtimes = cfg.decay_times();
    for &rate in cfg.quantum.decay_rates_per_s.iter().filter(|&&r| r > 0.0) {
        let channels: Vec<CollapseChannel<f64>> = (0..cfg.mw.n_modes)
            .map(|mode| CollapseChannel { mode, rate })
            .collect();
        let rho0 = QuantumState::from_density(space.clone(), vacuum.to_density_matrix())
            .map_err(numeric("evolution"))?;
        let states = fock::evolve_lindblad(&h, &channels, &rho0, &dtimes, &LindbladOptions::default())
            .map_err(numeric("evolution"))?;
        let mut max_top: f64 = 0.0;
        let mut mean_photons = Vec::with_capacity(states.len());
        for st in &states {
            st.validate().map_err(numeric("evolution"))?;
            max_top = max_top.max(st.top_level_occupation().into_iter().fold(0.0, f64::max));
            mean_photons.push(st.mean_photon_numbers());
        }
        damped.push(DampedRunPayload {
            decay_rate_per_s: rate,
            times: dtimes.clone(),
            mean_photons,
            max_top_level_occupation: max_top,
            final_tomography: tomography_payload(states.last().expect("nonempty"), display),
        });
    }

    Ok(EvolutionPayload {
        levels: cfg.quantum.levels,
        n_modes: cfg.mw.n_modes,
        zero_decay,
        damped,
    })
}

pub fn compute_analysis(
    cfg: &ExperimentConfig,
    evolution: &EvolutionPayload,
) -> Result<AnalysisPayload, PipelineError> {
    let space = FockSpace::build_with_cap(evolution.n_modes, evolution.levels, cfg.quantum.dim_cap)
        .map_err(numeric("analysis"))?;
    let run = &evolution.zero_decay;
    let n_samples = run.times.len();

    let mut full = Vec::with_capacity(n_samples);
    let mut reduced = Vec::with_capacity(n_samples);
    for idx in 0..n_samples {
        let state = run.state_at(idx, &space);
        let report = entangle::concurrence(&state).map_err(numeric("analysis"))?;
        full.push(report.full);
        reduced.push(report.reduced.iter().map(|&(_, c)| c).collect());
    }

    let final_state = run.state_at(n_samples - 1, &space);
    let table = entangle::persistency_table(
        &final_state,
        &cfg.analysis.measure_modes,
        cfg.analysis.max_fock,
    )
    .map_err(numeric("analysis"))?;
    let persistency = PersistencyPayload {
        modes: table.modes.clone(),
        max_fock: table.max_fock,
        entries: table
            .entries
            .iter()
            .map(|row| {
                row.iter()
                    .map(|cell| {
                        cell.map(|c| PersistencyCellPayload {
                            probability: c.probability,
                            concurrence: c.concurrence,
                        })
                    })
                    .collect()
            })
            .collect(),
        snapshot_time: *run.times.last().expect("nonempty"),
    };

    // Photon-or-not projections on each measured mode.
    let mut projections = Vec::new();
    for &mode in &cfg.analysis.measure_modes {
        for (kind, label) in [(ProjectionKind::Zero, "zero"), (ProjectionKind::NonZero, "nonzero")]
        {
            let outcome =
                entangle::project_mode(&final_state, mode, kind).map_err(numeric("analysis"))?;
            let (pair_concurrence, pair_tomography) = match &outcome.collapsed {
                Some(collapsed) => {
                    let keep: Vec<usize> =
                        (0..evolution.n_modes).filter(|&m| m != mode).collect();
                    let part =
                        Partition::new(&keep, evolution.n_modes).map_err(numeric("analysis"))?;
                    let rho_pair =
                        entangle::partial_trace(collapsed, &part).map_err(numeric("analysis"))?;
                    let c = concurrence_of_density(&rho_pair, keep.len(), evolution.levels)
                        .map_err(numeric("analysis"))?;
                    let pair_space =
                        FockSpace::build_with_cap(keep.len(), evolution.levels, usize::MAX)
                            .map_err(numeric("analysis"))?;
                    let pair_state = QuantumState::from_density(pair_space, rho_pair)
                        .map_err(numeric("analysis"))?;
                    (c, tomography_payload(&pair_state, cfg.analysis.display_levels))
                }
                None => (
                    0.0,
                    TomographyPayload {
                        labels: Vec::new(),
                        matrix_re: Vec::new(),
                        matrix_im: Vec::new(),
                        probability_mass: 0.0,
                    },
                ),
            };
            projections.push(ProjectionPayload {
                mode,
                kind: label.into(),
                probability: outcome.probability,
                pair_concurrence,
                pair_tomography,
            });
        }
    }

    Ok(AnalysisPayload {
        concurrence: ConcurrenceTracePayload {
            times: run.times.clone(),
            full,
            reduced,
        },
        persistency,
        projections,
    })
}

/// Pinned invariant tolerances, reported in every manifest.
pub fn tolerances() -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("power_balance".into(), 1e-6),
        ("half_period_relative".into(), 1e-10),
        ("orthonormality".into(), 1e-10),
        ("coupling_symmetry".into(), 1e-9),
        ("hermiticity".into(), 1e-10),
        ("parity_probability".into(), 1e-10),
        ("truncation_occupation".into(), 1e-4),
        ("steady_state_residual".into(), 1e-8),
        ("lindblad_rtol".into(), 1e-8),
        ("lindblad_atol".into(), 1e-10),
        ("outcome_probability_floor".into(), 1e-12),
    ])
}

pub struct PipelineArtifacts {
    pub soliton: SolitonPayload,
    pub modulation: ModulationPayload,
    pub hamiltonian: HamiltonianPayload,
    pub evolution: EvolutionPayload,
    pub analysis: AnalysisPayload,
    pub hashes: BTreeMap<Stage, String>,
    pub from_cache: BTreeMap<Stage, bool>,
}

/// Evaluate the cross-stage invariant checks on a finished artifact set.
pub fn evaluate_checks(artifacts: &PipelineArtifacts) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let s = &artifacts.soliton;
    out.push(check(
        "soliton_steady_residual",
        s.residual < 1e-8,
        true,
        format!("residual {:.3e} (tolerance 1e-8)", s.residual),
    ));
    out.push(check(
        "soliton_power_balance",
        s.power_balance_residual < 1e-6,
        true,
        format!("relative imbalance {:.3e} (tolerance 1e-6)", s.power_balance_residual),
    ));

    let m = &artifacts.modulation;
    out.push(check(
        "modulation_half_period",
        m.half_period_deviation < 1e-10,
        true,
        format!("relative deviation {:.3e} (tolerance 1e-10)", m.half_period_deviation),
    ));
    let quarter = m.path_lengths.len() / 4;
    out.push(check(
        "modulation_overlap_peak",
        m.path_lengths[0] > m.path_lengths[quarter],
        true,
        format!(
            "L(0) = {:.6e}, L(T/4) = {:.6e}",
            m.path_lengths[0], m.path_lengths[quarter]
        ),
    ));

    let h = &artifacts.hamiltonian;
    out.push(check(
        "mode_orthonormality",
        h.orthonormality_deviation < 1e-10,
        true,
        format!("deviation {:.3e} (tolerance 1e-10)", h.orthonormality_deviation),
    ));
    out.push(check(
        "coupling_antisymmetry",
        h.antisymmetry_deviation < 1e-9,
        true,
        format!("deviation {:.3e} (tolerance 1e-9)", h.antisymmetry_deviation),
    ));
    out.push(check(
        "coupling_symmetry",
        h.symmetry_deviation < 1e-9,
        true,
        format!("deviation {:.3e} (tolerance 1e-9)", h.symmetry_deviation),
    ));
    out.push(check(
        "rwa_hermiticity",
        h.hermiticity_deviation < 1e-10,
        true,
        format!("deviation {:.3e} (tolerance 1e-10)", h.hermiticity_deviation),
    ));

    let e = &artifacts.evolution;
    out.push(check(
        "parity_conservation",
        e.zero_decay.max_odd_parity_probability < 1e-10,
        true,
        format!(
            "max odd-parity probability {:.3e} (tolerance 1e-10)",
            e.zero_decay.max_odd_parity_probability
        ),
    ));
    let top = e
        .zero_decay
        .max_top_level_occupation
        .max(e.damped.iter().map(|d| d.max_top_level_occupation).fold(0.0, f64::max));
    out.push(check(
        "truncation_guard",
        top < 1e-4,
        false,
        format!("max top-level occupation {top:.3e} (flag threshold 1e-4)"),
    ));

    let a = &artifacts.analysis;
    out.push(check(
        "vacuum_concurrence",
        a.concurrence.full[0].abs() < 1e-8,
        true,
        format!("C(0) = {:.3e}", a.concurrence.full[0]),
    ));
    let bound = {
        let n = e.n_modes as f64;
        2f64.powf(1.0 - n / 2.0) * (2f64.powi(e.n_modes as i32) - 2.0).sqrt()
    };
    let max_c = a.concurrence.full.iter().cloned().fold(0.0, f64::max);
    out.push(check(
        "concurrence_bound",
        max_c <= bound + 1e-12,
        true,
        format!("max C = {max_c:.6} (absolute bound {bound:.6})"),
    ));
    let dominated = a
        .concurrence
        .full
        .iter()
        .zip(&a.concurrence.reduced)
        .all(|(c, reds)| reds.iter().all(|r| c + 1e-12 >= *r));
    out.push(check(
        "full_concurrence_dominates_pairs",
        dominated,
        false,
        "C_N >= every reduced pair value at every sample".into(),
    ));
    out
}

/// Execute all stages, respecting the cache, and evaluate the checks.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    cache: &StageCache,
    force: bool,
) -> Result<PipelineArtifacts, PipelineError> {
    let hashes = stage_hashes(cfg);
    let use_cache = cfg.io.cache && !force;
    let mut from_cache = BTreeMap::new();

    let soliton = run_stage(cache, use_cache, Stage::Soliton, &hashes[&Stage::Soliton], || {
        compute_soliton(cfg)
    })?;
    from_cache.insert(Stage::Soliton, soliton.from_cache);

    let modulation = run_stage(
        cache,
        use_cache,
        Stage::Modulation,
        &hashes[&Stage::Modulation],
        || compute_modulation(cfg, &soliton.payload),
    )?;
    from_cache.insert(Stage::Modulation, modulation.from_cache);

    let hamiltonian = run_stage(
        cache,
        use_cache,
        Stage::Hamiltonian,
        &hashes[&Stage::Hamiltonian],
        || compute_hamiltonian(cfg, &modulation.payload),
    )?;
    from_cache.insert(Stage::Hamiltonian, hamiltonian.from_cache);

    let evolution = run_stage(
        cache,
        use_cache,
        Stage::Evolution,
        &hashes[&Stage::Evolution],
        || compute_evolution(cfg, &hamiltonian.payload),
    )?;
    from_cache.insert(Stage::Evolution, evolution.from_cache);

    let analysis = run_stage(
        cache,
        use_cache,
        Stage::Analysis,
        &hashes[&Stage::Analysis],
        || compute_analysis(cfg, &evolution.payload),
    )?;
    from_cache.insert(Stage::Analysis, analysis.from_cache);

    Ok(PipelineArtifacts {
        soliton: soliton.payload,
        modulation: modulation.payload,
        hamiltonian: hamiltonian.payload,
        evolution: evolution.payload,
        analysis: analysis.payload,
        hashes,
        from_cache,
    })
}
