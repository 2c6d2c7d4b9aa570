//! Multipartite concurrence, projective measurement, and persistency.
//!
//! For a pure N-partite state the concurrence is
//!
//! ```text
//! C_N = 2^{1−N/2} √((2^N − 2) − Σ_i Tr ρ_i²)
//! ```
//!
//! with the sum over all 2^N − 2 proper nonempty subsets. Reduced values
//! quoted for mixed marginals apply the same purity-based formula to the
//! reduced density matrix; no convex-roof extension is attempted.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::float::{fl, Float};
use crate::fock::{FockSpace, QuantumState, StateData};

#[inline]
fn fsqrt<T: Float>(x: T) -> T {
    num_traits::Float::sqrt(x)
}

/// Proper nonempty subset of the mode indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    subset: Vec<usize>,
}

impl Partition {
    pub fn new(subset: &[usize], n_modes: usize) -> Result<Self> {
        let mut s: Vec<usize> = subset.to_vec();
        s.sort_unstable();
        s.dedup();
        if s.len() != subset.len() {
            return Err(Error::InvalidState("partition has repeated modes".into()));
        }
        if s.is_empty() || s.len() >= n_modes {
            return Err(Error::InvalidState(
                "partition must be a proper nonempty subset of the modes".into(),
            ));
        }
        if s.iter().any(|&m| m >= n_modes) {
            return Err(Error::InvalidState("partition mode index out of range".into()));
        }
        Ok(Self { subset: s })
    }

    pub fn modes(&self) -> &[usize] {
        &self.subset
    }

    pub fn complement(&self, n_modes: usize) -> Vec<usize> {
        (0..n_modes).filter(|m| !self.subset.contains(m)).collect()
    }
}

/// Reduced density matrix on the kept modes (standard partial trace).
pub fn partial_trace<T: Float>(
    state: &QuantumState<T>,
    keep: &Partition,
) -> Result<DMatrix<Complex<T>>> {
    let space = &state.space;
    let n_modes = space.n_modes();
    let levels = space.levels();
    let kept = keep.modes();
    let env: Vec<usize> = keep.complement(n_modes);

    let kept_dim = levels.pow(kept.len() as u32);
    let env_dim = levels.pow(env.len() as u32);

    // Flat offsets contributed by each kept / env multi-index.
    let offsets = |modes: &[usize], dim: usize| -> Vec<usize> {
        (0..dim)
            .map(|mut idx| {
                let mut off = 0;
                for &m in modes.iter().rev() {
                    off += (idx % levels) * space.stride(m);
                    idx /= levels;
                }
                off
            })
            .collect()
    };
    let kept_off = offsets(kept, kept_dim);
    let env_off = offsets(&env, env_dim);

    let zero = Complex::new(T::zero(), T::zero());
    let mut rho = DMatrix::from_element(kept_dim, kept_dim, zero);
    match &state.data {
        StateData::Pure(psi) => {
            for &base in &env_off {
                for a in 0..kept_dim {
                    let pa = psi[base + kept_off[a]];
                    if pa.norm_sqr() == T::zero() {
                        continue;
                    }
                    for b in 0..kept_dim {
                        rho[(a, b)] += pa * psi[base + kept_off[b]].conj();
                    }
                }
            }
        }
        StateData::Density(full) => {
            for &base in &env_off {
                for a in 0..kept_dim {
                    for b in 0..kept_dim {
                        rho[(a, b)] += full[(base + kept_off[a], base + kept_off[b])];
                    }
                }
            }
        }
    }
    Ok(rho)
}

/// Tr ρ² of a Hermitian matrix.
pub fn purity<T: Float>(rho: &DMatrix<Complex<T>>) -> T {
    rho.iter().fold(T::zero(), |acc, v| acc + v.norm_sqr())
}

/// Full and reduced concurrences of a state at one instant.
#[derive(Debug, Clone)]
pub struct ConcurrenceReport<T> {
    /// C_N over all proper subsets.
    pub full: T,
    /// Traced-out mode → purity-based concurrence of the remaining modes.
    pub reduced: Vec<(usize, T)>,
    /// Frame time of the underlying state, seconds.
    pub time: T,
}

impl<T: Float> ConcurrenceReport<T> {
    /// Absolute bound 2^{1−N/2}·√(2^N−2) (all marginal purities ≥ 0).
    pub fn absolute_bound(n_modes: usize) -> T {
        let n = n_modes as f64;
        fl(2f64.powf(1.0 - n / 2.0) * (2f64.powi(n_modes as i32) - 2.0).sqrt())
    }
}

/// Purity-based N-partite concurrence from the subset-purity sum.
fn concurrence_from_purities<T: Float>(n_modes: usize, purity_sum: T) -> T {
    let n = n_modes as f64;
    let prefactor = fl::<T>(2f64.powf(1.0 - n / 2.0));
    let subsets = fl::<T>(2f64.powi(n_modes as i32) - 2.0);
    let gap = subsets - purity_sum;
    if gap > T::zero() {
        prefactor * fsqrt(gap)
    } else {
        T::zero()
    }
}

/// Apply the purity-based formula to a (possibly mixed) multimode density
/// matrix: marginals are computed within the given matrix.
pub fn concurrence_of_density<T: Float>(
    rho: &DMatrix<Complex<T>>,
    n_modes: usize,
    levels: usize,
) -> Result<T> {
    let dim = levels.pow(n_modes as u32);
    if rho.nrows() != dim {
        return Err(Error::GridMismatch(format!(
            "density of dimension {} does not match {n_modes} modes x {levels} levels",
            rho.nrows()
        )));
    }
    let space = FockSpace::build_with_cap(n_modes, levels, usize::MAX)?;
    let state = QuantumState::from_density(space, rho.clone())?;
    let mut sum = T::zero();
    for mask in 1..((1usize << n_modes) - 1) {
        let subset: Vec<usize> = (0..n_modes).filter(|m| mask & (1 << m) != 0).collect();
        let part = Partition::new(&subset, n_modes)?;
        sum += purity(&partial_trace(&state, &part)?);
    }
    Ok(concurrence_from_purities(n_modes, sum))
}

/// Concurrence of a pure state, with the per-traced-mode reduced values.
pub fn concurrence<T: Float>(state: &QuantumState<T>) -> Result<ConcurrenceReport<T>> {
    if !state.is_pure() {
        return Err(Error::InvalidState(
            "concurrence is defined here for pure states only".into(),
        ));
    }
    state.validate()?;
    let n_modes = state.space.n_modes();
    if n_modes < 2 {
        return Err(Error::InvalidState("need at least two modes".into()));
    }

    let mut purities = Vec::with_capacity((1 << n_modes) - 2);
    let mut sum = T::zero();
    for mask in 1..((1usize << n_modes) - 1) {
        let subset: Vec<usize> = (0..n_modes).filter(|m| mask & (1 << m) != 0).collect();
        let part = Partition::new(&subset, n_modes)?;
        let p = purity(&partial_trace(state, &part)?);
        purities.push((mask, p));
        sum += p;
    }
    let full = concurrence_from_purities(n_modes, sum);

    let mut reduced = Vec::with_capacity(n_modes);
    if n_modes >= 3 {
        for traced in 0..n_modes {
            let keep: Vec<usize> = (0..n_modes).filter(|&m| m != traced).collect();
            let part = Partition::new(&keep, n_modes)?;
            let rho = partial_trace(state, &part)?;
            let c = concurrence_of_density(&rho, keep.len(), state.space.levels())?;
            reduced.push((traced, c));
        }
    }

    Ok(ConcurrenceReport {
        full,
        reduced,
        time: state.frame_time,
    })
}

/// Concurrence reports along a pure-state trajectory.
pub fn concurrence_trace<T: Float>(
    states: &[QuantumState<T>],
) -> Result<Vec<ConcurrenceReport<T>>> {
    states.iter().map(concurrence).collect()
}

/// What a projective measurement asks about one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    /// P = |j⟩⟨j| on the mode.
    Fock(usize),
    /// P = |0⟩⟨0|.
    Zero,
    /// P = I − |0⟩⟨0|.
    NonZero,
}

/// Result of collapsing one mode.
#[derive(Debug, Clone)]
pub struct MeasurementOutcome<T> {
    pub mode: usize,
    pub kind: ProjectionKind,
    pub probability: T,
    /// Normalized post-measurement state; `None` when the outcome
    /// probability sits below the impossibility threshold.
    pub collapsed: Option<QuantumState<T>>,
}

impl<T> MeasurementOutcome<T> {
    pub fn is_possible(&self) -> bool {
        self.collapsed.is_some()
    }
}

/// Outcomes below this probability are reported as impossible.
pub fn outcome_threshold<T: Float>() -> T {
    fl(1e-12)
}

/// Project one mode of a pure state.
pub fn project_mode<T: Float>(
    state: &QuantumState<T>,
    mode: usize,
    kind: ProjectionKind,
) -> Result<MeasurementOutcome<T>> {
    state.validate()?;
    let psi = state.pure_amplitudes()?;
    let space = &state.space;
    if mode >= space.n_modes() {
        return Err(Error::InvalidState(format!(
            "mode {mode} out of range for {} modes",
            space.n_modes()
        )));
    }
    if let ProjectionKind::Fock(j) = kind {
        if j >= space.levels() {
            return Err(Error::InvalidState(format!(
                "Fock level {j} outside truncation {}",
                space.levels()
            )));
        }
    }
    let keep = |occ: usize| -> bool {
        match kind {
            ProjectionKind::Fock(j) => occ == j,
            ProjectionKind::Zero => occ == 0,
            ProjectionKind::NonZero => occ != 0,
        }
    };

    let mut probability = T::zero();
    for (i, c) in psi.iter().enumerate() {
        if keep(space.occupation(i, mode)) {
            probability += c.norm_sqr();
        }
    }
    if probability <= outcome_threshold() {
        return Ok(MeasurementOutcome {
            mode,
            kind,
            probability,
            collapsed: None,
        });
    }
    let inv = T::one() / fsqrt(probability);
    let amplitudes = DVector::from_iterator(
        space.dim(),
        psi.iter().enumerate().map(|(i, c)| {
            if keep(space.occupation(i, mode)) {
                c.scale(inv)
            } else {
                Complex::new(T::zero(), T::zero())
            }
        }),
    );
    let collapsed = QuantumState {
        space: space.clone(),
        data: StateData::Pure(amplitudes),
        frame_time: state.frame_time,
    };
    Ok(MeasurementOutcome {
        mode,
        kind,
        probability,
        collapsed: Some(collapsed),
    })
}

/// After a number-resolved collapse of `mode`, the untouched modes carry a
/// pure state; extract it on the smaller space.
pub fn remaining_state_after_fock<T: Float>(
    outcome: &MeasurementOutcome<T>,
) -> Result<QuantumState<T>> {
    let collapsed = outcome.collapsed.as_ref().ok_or_else(|| {
        Error::InvalidState("outcome marked impossible has no collapsed state".into())
    })?;
    let j = match outcome.kind {
        ProjectionKind::Fock(j) => j,
        ProjectionKind::Zero => 0,
        ProjectionKind::NonZero => {
            return Err(Error::InvalidState(
                "photon-or-not collapse does not factorize the measured mode".into(),
            ))
        }
    };
    let space = &collapsed.space;
    let psi = collapsed.pure_amplitudes()?;
    let rest_space = FockSpace::build_with_cap(
        space.n_modes() - 1,
        space.levels(),
        usize::MAX,
    )?;
    let rest_modes: Vec<usize> = (0..space.n_modes())
        .filter(|&m| m != outcome.mode)
        .collect();
    let amplitudes = DVector::from_iterator(
        rest_space.dim(),
        (0..rest_space.dim()).map(|r| {
            let rest_occ = rest_space.occupations(r);
            let mut occ = vec![0usize; space.n_modes()];
            for (slot, &m) in rest_modes.iter().enumerate() {
                occ[m] = rest_occ[slot];
            }
            occ[outcome.mode] = j;
            psi[space.flat_index(&occ)]
        }),
    );
    Ok(QuantumState {
        space: rest_space,
        data: StateData::Pure(amplitudes),
        frame_time: collapsed.frame_time,
    })
}

/// One cell of the persistency table.
#[derive(Debug, Clone, Copy)]
pub struct PersistencyEntry<T> {
    pub probability: T,
    /// Concurrence of the untouched modes after the collapse.
    pub concurrence: T,
}

/// Persistency of entanglement under number-resolved measurement:
/// rows are measured modes, columns the detected photon number.
#[derive(Debug, Clone)]
pub struct PersistencyTable<T> {
    pub modes: Vec<usize>,
    pub max_fock: usize,
    /// `entries[row][j]`; `None` marks an impossible outcome.
    pub entries: Vec<Vec<Option<PersistencyEntry<T>>>>,
}

/// Build the persistency table of a pure state.
pub fn persistency_table<T: Float>(
    state: &QuantumState<T>,
    modes: &[usize],
    max_fock: usize,
) -> Result<PersistencyTable<T>> {
    if state.space.n_modes() < 3 {
        return Err(Error::InvalidState(
            "persistency needs at least three modes".into(),
        ));
    }
    if max_fock >= state.space.levels() {
        return Err(Error::InvalidState(format!(
            "max Fock level {max_fock} outside truncation {}",
            state.space.levels()
        )));
    }
    let mut entries = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut row = Vec::with_capacity(max_fock + 1);
        for j in 0..=max_fock {
            let outcome = project_mode(state, mode, ProjectionKind::Fock(j))?;
            if outcome.is_possible() {
                let rest = remaining_state_after_fock(&outcome)?;
                let report = concurrence(&rest)?;
                row.push(Some(PersistencyEntry {
                    probability: outcome.probability,
                    concurrence: report.full,
                }));
            } else {
                row.push(None);
            }
        }
        entries.push(row);
    }
    Ok(PersistencyTable {
        modes: modes.to_vec(),
        max_fock,
        entries,
    })
}

/// Phase rotation exp(iφ·a_k†a_k) on one mode of a pure state.
pub fn apply_local_phase<T: Float>(
    state: &QuantumState<T>,
    mode: usize,
    phi: T,
) -> Result<QuantumState<T>> {
    let psi = state.pure_amplitudes()?;
    let space = &state.space;
    let amplitudes = DVector::from_iterator(
        space.dim(),
        psi.iter().enumerate().map(|(i, c)| {
            let n = fl::<T>(space.occupation(i, mode) as f64);
            c * Complex::new(T::zero(), phi * n).exp()
        }),
    );
    Ok(QuantumState {
        space: space.clone(),
        data: StateData::Pure(amplitudes),
        frame_time: state.frame_time,
    })
}

/// Apply a single-mode unitary (levels × levels) to a pure state.
pub fn apply_local_unitary<T: Float>(
    state: &QuantumState<T>,
    mode: usize,
    u: &DMatrix<Complex<T>>,
) -> Result<QuantumState<T>> {
    let psi = state.pure_amplitudes()?;
    let space = &state.space;
    let levels = space.levels();
    if u.nrows() != levels || u.ncols() != levels {
        return Err(Error::GridMismatch(format!(
            "unitary is {}x{}, mode has {levels} levels",
            u.nrows(),
            u.ncols()
        )));
    }
    let stride = space.stride(mode);
    let mut amplitudes = DVector::from_element(space.dim(), Complex::new(T::zero(), T::zero()));
    for i in 0..space.dim() {
        let n_in = space.occupation(i, mode);
        let base = i - n_in * stride;
        let c = psi[i];
        if c.norm_sqr() == T::zero() {
            continue;
        }
        for n_out in 0..levels {
            amplitudes[base + n_out * stride] += u[(n_out, n_in)] * c;
        }
    }
    Ok(QuantumState {
        space: space.clone(),
        data: StateData::Pure(amplitudes),
        frame_time: state.frame_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pure_state(space: FockSpace, terms: &[(&[usize], Complex<f64>)]) -> QuantumState<f64> {
        let mut v = DVector::from_element(space.dim(), Complex::new(0.0, 0.0));
        for (occ, amp) in terms {
            v[space.flat_index(occ)] = *amp;
        }
        let norm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        for c in v.iter_mut() {
            *c /= norm;
        }
        QuantumState {
            space,
            data: StateData::Pure(v),
            frame_time: 0.0,
        }
    }

    fn ghz(levels: usize) -> QuantumState<f64> {
        let space = FockSpace::build(3, levels).unwrap();
        let a = Complex::new(1.0, 0.0);
        pure_state(space, &[(&[0, 0, 0], a), (&[1, 1, 1], a)])
    }

    fn w_state(levels: usize) -> QuantumState<f64> {
        let space = FockSpace::build(3, levels).unwrap();
        let a = Complex::new(1.0, 0.0);
        pure_state(
            space,
            &[(&[1, 0, 0], a), (&[0, 1, 0], a), (&[0, 0, 1], a)],
        )
    }

    #[test]
    fn partial_trace_of_product_and_ghz_states() {
        let space = FockSpace::build(3, 4).unwrap();
        let st = QuantumState::<f64>::fock(space.clone(), &[1, 0, 2]).unwrap();
        let part = Partition::new(&[0], 3).unwrap();
        let rho = partial_trace(&st, &part).unwrap();
        assert_relative_eq!(rho[(1, 1)].re, 1.0, max_relative = 1e-14);
        assert_relative_eq!(rho.iter().map(|c| c.norm()).sum::<f64>(), 1.0, max_relative = 1e-14);

        let g = ghz(3);
        let rho0 = partial_trace(&g, &Partition::new(&[0], 3).unwrap()).unwrap();
        assert_relative_eq!(rho0[(0, 0)].re, 0.5, max_relative = 1e-12);
        assert_relative_eq!(rho0[(1, 1)].re, 0.5, max_relative = 1e-12);
        assert!(rho0[(0, 1)].norm() < 1e-14);
    }

    #[test]
    fn complementary_marginals_share_purity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let space = FockSpace::build(3, 3).unwrap();
        for _ in 0..5 {
            let v = DVector::from_iterator(
                space.dim(),
                (0..space.dim()).map(|_| {
                    Complex::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                }),
            );
            let norm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            let st = QuantumState::from_pure(space.clone(), v.map(|c| c / norm)).unwrap();
            for mask in 1usize..4 {
                let subset: Vec<usize> = (0..3).filter(|m| mask & (1 << m) != 0).collect();
                let part = Partition::new(&subset, 3).unwrap();
                let comp = Partition::new(&part.complement(3), 3).unwrap();
                let p1 = purity(&partial_trace(&st, &part).unwrap());
                let p2 = purity(&partial_trace(&st, &comp).unwrap());
                assert!((p1 - p2).abs() < 1e-12, "purities {p1} vs {p2}");
            }
        }
    }

    #[test]
    fn concurrence_oracles() {
        // Product state.
        let space = FockSpace::build(3, 4).unwrap();
        let prod = QuantumState::<f64>::fock(space, &[1, 2, 0]).unwrap();
        let r = concurrence(&prod).unwrap();
        assert!(r.full.abs() < 1e-10);
        for (_, c) in &r.reduced {
            assert!(c.abs() < 1e-10);
        }

        // GHZ: all six marginal purities are 1/2.
        let r = concurrence(&ghz(9)).unwrap();
        assert_relative_eq!(r.full, 1.5f64.sqrt(), epsilon = 1e-12);

        // W: marginal purities 5/9, summing to 10/3.
        let r = concurrence(&w_state(9)).unwrap();
        assert_relative_eq!(r.full, (4f64 / 3.0).sqrt(), epsilon = 1e-12);

        // Bell pair on two modes.
        let space2 = FockSpace::build(2, 3).unwrap();
        let a = Complex::new(1.0, 0.0);
        let bell = pure_state(space2, &[(&[0, 0], a), (&[1, 1], a)]);
        let r = concurrence(&bell).unwrap();
        assert_relative_eq!(r.full, 1.0, epsilon = 1e-12);

        // Bound for 3 modes with 9 levels: marginal purity ≥ 1/9.
        assert!(r.full <= ConcurrenceReport::<f64>::absolute_bound(2));
        let g = concurrence(&ghz(9)).unwrap();
        assert!(g.full <= (8f64 / 3.0).sqrt() + 1e-12);
    }

    #[test]
    fn factored_mode_reduces_to_pair_concurrence() {
        // |φ⟩₀ ⊗ (α|00⟩ + β|11⟩)₁₂: C₃ equals the pair concurrence.
        let space = FockSpace::build(3, 4).unwrap();
        let alpha = Complex::new(0.6, 0.0);
        let beta = Complex::new(0.0, 0.8);
        let st = pure_state(
            space,
            &[(&[2, 0, 0], alpha), (&[2, 1, 1], beta)],
        );
        let r = concurrence(&st).unwrap();
        let pair_c = 2.0 * 0.6 * 0.8;
        assert_relative_eq!(r.full, pair_c, epsilon = 1e-12);
        // Tracing the factored mode keeps the value; tracing an entangled
        // mode destroys it.
        let traced0 = r.reduced.iter().find(|(m, _)| *m == 0).unwrap().1;
        assert_relative_eq!(traced0, pair_c, epsilon = 1e-12);
    }

    #[test]
    fn ghz_projections_and_probability_completeness() {
        let g = ghz(9);
        let zero = project_mode(&g, 0, ProjectionKind::Fock(0)).unwrap();
        assert_relative_eq!(zero.probability, 0.5, epsilon = 1e-12);
        let rest = remaining_state_after_fock(&zero).unwrap();
        let c = concurrence(&rest).unwrap();
        assert!(c.full.abs() < 1e-12, "GHZ collapse must be separable");

        let nonzero = project_mode(&g, 0, ProjectionKind::NonZero).unwrap();
        assert_relative_eq!(nonzero.probability, 0.5, epsilon = 1e-12);
        let collapsed = nonzero.collapsed.as_ref().unwrap();
        let idx = collapsed.space.flat_index(&[1, 1, 1]);
        assert_relative_eq!(
            collapsed.pure_amplitudes().unwrap()[idx].norm(),
            1.0,
            epsilon = 1e-12
        );

        // Completeness of the number-resolved outcome set.
        let mut total = 0.0;
        for j in 0..9 {
            total += project_mode(&g, 1, ProjectionKind::Fock(j)).unwrap().probability;
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn persistency_of_product_and_ghz_states() {
        let space = FockSpace::build(3, 4).unwrap();
        let prod = QuantumState::<f64>::fock(space, &[1, 1, 1]).unwrap();
        let table = persistency_table(&prod, &[0, 1, 2], 3).unwrap();
        for row in &table.entries {
            for cell in row.iter().flatten() {
                assert!(cell.concurrence.abs() < 1e-12);
            }
        }

        let g = ghz(4);
        let table = persistency_table(&g, &[0, 1, 2], 3).unwrap();
        for row in &table.entries {
            for cell in row.iter().flatten() {
                assert!(cell.concurrence.abs() < 1e-12, "GHZ persistency must vanish");
            }
        }
    }

    #[test]
    fn concurrence_is_local_unitary_invariant() {
        let w = w_state(4);
        let base = concurrence(&w).unwrap().full;

        let phased = apply_local_phase(&w, 1, 0.73).unwrap();
        assert!((concurrence(&phased).unwrap().full - base).abs() < 1e-10);

        // Givens rotation between levels 0 and 1 of mode 2.
        let levels = 4;
        let mut u = DMatrix::from_element(levels, levels, Complex::new(0.0, 0.0));
        for i in 0..levels {
            u[(i, i)] = Complex::new(1.0, 0.0);
        }
        let (c, s) = (0.8f64, 0.6f64);
        u[(0, 0)] = Complex::new(c, 0.0);
        u[(0, 1)] = Complex::new(0.0, s);
        u[(1, 0)] = Complex::new(0.0, s);
        u[(1, 1)] = Complex::new(c, 0.0);
        let rotated = apply_local_unitary(&w, 2, &u).unwrap();
        rotated.validate().unwrap();
        assert!((concurrence(&rotated).unwrap().full - base).abs() < 1e-10);
    }

    #[test]
    fn vacuum_trace_starts_at_zero() {
        let space = FockSpace::build(3, 3).unwrap();
        let vac = QuantumState::<f64>::vacuum(space);
        let reports = concurrence_trace(std::slice::from_ref(&vac)).unwrap();
        assert!(reports[0].full.abs() < 1e-12);
    }
}
