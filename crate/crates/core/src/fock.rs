//! Truncated multimode Fock space, bosonic operators, and propagation.
//!
//! States live on `levels^n_modes` basis vectors |n₁,…,n_N⟩ with each
//! occupation truncated below `levels`. The effective Hamiltonian
//!
//! ```text
//! H = i(Σ_kl A_kl a_k†a_l + ½ Σ_kl B_kl a_k†a_l† − ½ Σ_kl B*_kl a_k a_l)
//! ```
//!
//! is assembled as a sparse matrix; pure states evolve through the exact
//! eigendecomposition of H, open systems through an adaptive embedded
//! Runge–Kutta integration of the Lindblad equation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::float::{fl, Float, LinalgFloat};
use crate::modes::RwaHamiltonian;

#[inline]
fn fsqrt<T: Float>(x: T) -> T {
    num_traits::Float::sqrt(x)
}

#[inline]
fn fabs<T: Float>(x: T) -> T {
    num_traits::Float::abs(x)
}

#[inline]
fn fmax<T: Float>(a: T, b: T) -> T {
    if a > b {
        a
    } else {
        b
    }
}

/// Index bookkeeping for the truncated product space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FockSpace {
    n_modes: usize,
    levels: usize,
    dim: usize,
    strides: Vec<usize>,
}

impl FockSpace {
    /// Default cap on the flat dimension; beyond this, dense density
    /// matrices stop being practical.
    pub const DEFAULT_DIM_CAP: usize = 16_384;

    pub fn build(n_modes: usize, levels: usize) -> Result<Self> {
        Self::build_with_cap(n_modes, levels, Self::DEFAULT_DIM_CAP)
    }

    pub fn build_with_cap(n_modes: usize, levels: usize, cap: usize) -> Result<Self> {
        if n_modes < 1 || levels < 2 {
            return Err(Error::InvalidState(
                "need at least one mode and two levels".into(),
            ));
        }
        let mut dim: usize = 1;
        for _ in 0..n_modes {
            dim = dim.checked_mul(levels).ok_or(Error::Capacity {
                dim: usize::MAX,
                cap,
            })?;
        }
        if dim > cap {
            return Err(Error::Capacity { dim, cap });
        }
        // Mode 0 is the most significant digit.
        let strides = (0..n_modes)
            .map(|j| levels.pow((n_modes - 1 - j) as u32))
            .collect();
        Ok(Self {
            n_modes,
            levels,
            dim,
            strides,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stride(&self, mode: usize) -> usize {
        self.strides[mode]
    }

    pub fn flat_index(&self, occupations: &[usize]) -> usize {
        debug_assert_eq!(occupations.len(), self.n_modes);
        occupations
            .iter()
            .zip(&self.strides)
            .map(|(&n, &s)| n * s)
            .sum()
    }

    pub fn occupations(&self, flat: usize) -> Vec<usize> {
        (0..self.n_modes).map(|m| self.occupation(flat, m)).collect()
    }

    #[inline]
    pub fn occupation(&self, flat: usize, mode: usize) -> usize {
        (flat / self.strides[mode]) % self.levels
    }

    /// Total photon number of a basis state.
    #[inline]
    pub fn total_occupation(&self, flat: usize) -> usize {
        (0..self.n_modes).map(|m| self.occupation(flat, m)).sum()
    }
}

/// Compressed sparse row complex matrix.
#[derive(Debug, Clone)]
pub struct SparseOp<T> {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex<T>>,
}

impl<T: Float> SparseOp<T> {
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, Complex<T>)>) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut rows = Vec::with_capacity(triplets.len());
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<Complex<T>> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().expect("aligned with cols") += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        let mut row_ptr = vec![0usize; dim + 1];
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, Complex<T>)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn dagger(&self) -> Self {
        let triplets = self
            .iter_entries()
            .map(|(r, c, v)| (c, r, v.conj()))
            .collect();
        Self::from_triplets(self.dim, triplets)
    }

    pub fn transpose(&self) -> Self {
        let triplets = self.iter_entries().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.dim, triplets)
    }

    pub fn scale(&mut self, factor: Complex<T>) {
        for v in self.vals.iter_mut() {
            *v *= factor;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut triplets: Vec<_> = self.iter_entries().collect();
        triplets.extend(other.iter_entries());
        Self::from_triplets(self.dim, triplets)
    }

    /// Sparse-sparse product, for small operator algebra.
    pub fn matmul(&self, other: &Self) -> Self {
        let mut triplets = Vec::new();
        for (r, k, v) in self.iter_entries() {
            for idx in other.row_ptr[k]..other.row_ptr[k + 1] {
                triplets.push((r, other.cols[idx], v * other.vals[idx]));
            }
        }
        Self::from_triplets(self.dim, triplets)
    }

    pub fn mul_vec(&self, x: &DVector<Complex<T>>) -> DVector<Complex<T>> {
        let mut y = DVector::from_element(self.dim, Complex::new(T::zero(), T::zero()));
        for r in 0..self.dim {
            let mut acc = Complex::new(T::zero(), T::zero());
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
        y
    }

    /// Self times a dense matrix, parallel over output columns.
    pub fn mul_dense(&self, rho: &DMatrix<Complex<T>>) -> DMatrix<Complex<T>> {
        let n = self.dim;
        let mut out = DMatrix::from_element(n, n, Complex::new(T::zero(), T::zero()));
        out.par_column_iter_mut()
            .enumerate()
            .for_each(|(col, mut out_col)| {
                let rho_col = rho.column(col);
                for r in 0..n {
                    let mut acc = Complex::new(T::zero(), T::zero());
                    for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                        acc += self.vals[k] * rho_col[self.cols[k]];
                    }
                    out_col[r] = acc;
                }
            });
        out
    }

    /// Dense matrix times self; `self_t` must be the transpose of `self`.
    pub fn mul_dense_left(
        self_t: &SparseOp<T>,
        rho: &DMatrix<Complex<T>>,
    ) -> DMatrix<Complex<T>> {
        let n = self_t.dim;
        let mut out = DMatrix::from_element(n, n, Complex::new(T::zero(), T::zero()));
        out.par_column_iter_mut()
            .enumerate()
            .for_each(|(j, mut out_col)| {
                // (ρ·H) column j mixes ρ columns with weights from H column j,
                // i.e. row j of Hᵀ.
                for k in self_t.row_ptr[j]..self_t.row_ptr[j + 1] {
                    let c = self_t.cols[k];
                    let w = self_t.vals[k];
                    let rho_col = rho.column(c);
                    for r in 0..n {
                        out_col[r] += rho_col[r] * w;
                    }
                }
            });
        out
    }

    pub fn to_dense(&self) -> DMatrix<Complex<T>> {
        let mut m = DMatrix::from_element(self.dim, self.dim, Complex::new(T::zero(), T::zero()));
        for (r, c, v) in self.iter_entries() {
            m[(r, c)] += v;
        }
        m
    }

    /// ‖H − H†‖_F / ‖H‖_F.
    pub fn hermiticity_deviation(&self) -> T {
        let dag = self.dagger();
        let diff = {
            let mut neg = dag.clone();
            neg.scale(Complex::new(-T::one(), T::zero()));
            self.add(&neg)
        };
        let f = |op: &SparseOp<T>| -> T {
            fsqrt(
                op.vals
                    .iter()
                    .fold(T::zero(), |acc, v| acc + v.norm_sqr()),
            )
        };
        let scale = f(self);
        if scale > T::zero() {
            f(&diff) / scale
        } else {
            T::zero()
        }
    }

    /// ⟨ψ|H|ψ⟩.
    pub fn expectation(&self, psi: &DVector<Complex<T>>) -> Complex<T> {
        let hpsi = self.mul_vec(psi);
        psi.iter()
            .zip(hpsi.iter())
            .fold(Complex::new(T::zero(), T::zero()), |acc, (p, h)| {
                acc + p.conj() * h
            })
    }
}

/// Lowering and raising operators (a, a†) for one mode.
pub fn ladder_operators<T: Float>(space: &FockSpace, mode: usize) -> (SparseOp<T>, SparseOp<T>) {
    assert!(mode < space.n_modes(), "mode index out of range");
    let stride = space.stride(mode);
    let mut lower = Vec::new();
    for s in 0..space.dim() {
        let m = space.occupation(s, mode);
        if m > 0 {
            lower.push((s - stride, s, Complex::new(fsqrt(fl::<T>(m as f64)), T::zero())));
        }
    }
    let a = SparseOp::from_triplets(space.dim(), lower);
    let a_dag = a.dagger();
    (a, a_dag)
}

/// Decay channel C_n = √γ_n·a_n acting on one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseChannel<T> {
    pub mode: usize,
    /// Decay rate γ in 1/s.
    pub rate: T,
}

impl<T: Float> CollapseChannel<T> {
    pub fn validate(&self, space: &FockSpace) -> Result<()> {
        if self.mode >= space.n_modes() {
            return Err(Error::InvalidState(format!(
                "collapse channel on mode {} of a {}-mode space",
                self.mode,
                space.n_modes()
            )));
        }
        if self.rate < T::zero() {
            return Err(Error::InvalidState("decay rate must be non-negative".into()));
        }
        Ok(())
    }
}

/// Pure state vector or density matrix with its space metadata.
#[derive(Debug, Clone)]
pub enum StateData<T> {
    Pure(DVector<Complex<T>>),
    Density(DMatrix<Complex<T>>),
}

#[derive(Debug, Clone)]
pub struct QuantumState<T> {
    pub space: FockSpace,
    pub data: StateData<T>,
    /// Rotating-frame time stamp in seconds.
    pub frame_time: T,
}

impl<T: Float> QuantumState<T> {
    pub fn vacuum(space: FockSpace) -> Self {
        let mut v = DVector::from_element(space.dim(), Complex::new(T::zero(), T::zero()));
        v[0] = Complex::new(T::one(), T::zero());
        Self {
            space,
            data: StateData::Pure(v),
            frame_time: T::zero(),
        }
    }

    /// Product number state |n₁,…,n_N⟩.
    pub fn fock(space: FockSpace, occupations: &[usize]) -> Result<Self> {
        if occupations.len() != space.n_modes()
            || occupations.iter().any(|&n| n >= space.levels())
        {
            return Err(Error::InvalidState(format!(
                "occupations {occupations:?} outside a {}-mode, {}-level space",
                space.n_modes(),
                space.levels()
            )));
        }
        let idx = space.flat_index(occupations);
        let mut v = DVector::from_element(space.dim(), Complex::new(T::zero(), T::zero()));
        v[idx] = Complex::new(T::one(), T::zero());
        Ok(Self {
            space,
            data: StateData::Pure(v),
            frame_time: T::zero(),
        })
    }

    /// Wrap an amplitude vector, requiring it normalized within 1e-6 and
    /// rescaling exactly to unit norm.
    pub fn from_pure(space: FockSpace, mut amplitudes: DVector<Complex<T>>) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::InvalidState("amplitude vector has wrong length".into()));
        }
        let norm = fsqrt(
            amplitudes
                .iter()
                .fold(T::zero(), |acc, c| acc + c.norm_sqr()),
        );
        if fabs(norm - T::one()) > fl(1e-6) {
            return Err(Error::InvalidState(format!(
                "pure state norm {norm} is not 1 within 1e-6"
            )));
        }
        let inv = T::one() / norm;
        for c in amplitudes.iter_mut() {
            *c = c.scale(inv);
        }
        Ok(Self {
            space,
            data: StateData::Pure(amplitudes),
            frame_time: T::zero(),
        })
    }

    pub fn from_density(space: FockSpace, rho: DMatrix<Complex<T>>) -> Result<Self> {
        if rho.nrows() != space.dim() || rho.ncols() != space.dim() {
            return Err(Error::InvalidState("density matrix has wrong shape".into()));
        }
        Ok(Self {
            space,
            data: StateData::Density(rho),
            frame_time: T::zero(),
        })
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.data, StateData::Pure(_))
    }

    pub fn pure_amplitudes(&self) -> Result<&DVector<Complex<T>>> {
        match &self.data {
            StateData::Pure(v) => Ok(v),
            StateData::Density(_) => Err(Error::InvalidState(
                "operation requires a pure state".into(),
            )),
        }
    }

    pub fn to_density_matrix(&self) -> DMatrix<Complex<T>> {
        match &self.data {
            StateData::Pure(v) => {
                let n = v.len();
                DMatrix::from_fn(n, n, |i, j| v[i] * v[j].conj())
            }
            StateData::Density(m) => m.clone(),
        }
    }

    /// Norm (pure) or trace (density).
    pub fn weight(&self) -> T {
        match &self.data {
            StateData::Pure(v) => fsqrt(v.iter().fold(T::zero(), |acc, c| acc + c.norm_sqr())),
            StateData::Density(m) => {
                let mut tr = T::zero();
                for i in 0..m.nrows() {
                    tr += m[(i, i)].re;
                }
                tr
            }
        }
    }

    /// Probability of each basis state (diagonal in the number basis).
    pub fn populations(&self) -> Vec<T> {
        match &self.data {
            StateData::Pure(v) => v.iter().map(|c| c.norm_sqr()).collect(),
            StateData::Density(m) => (0..m.nrows()).map(|i| m[(i, i)].re).collect(),
        }
    }

    /// ⟨a_k†a_k⟩ per mode.
    pub fn mean_photon_numbers(&self) -> Vec<T> {
        let pops = self.populations();
        let mut out = vec![T::zero(); self.space.n_modes()];
        for (idx, &p) in pops.iter().enumerate() {
            for (m, o) in out.iter_mut().enumerate() {
                *o += p * fl::<T>(self.space.occupation(idx, m) as f64);
            }
        }
        out
    }

    /// Probability mass sitting in the top truncation level of each mode.
    pub fn top_level_occupation(&self) -> Vec<T> {
        let pops = self.populations();
        let top = self.space.levels() - 1;
        let mut out = vec![T::zero(); self.space.n_modes()];
        for (idx, &p) in pops.iter().enumerate() {
            for (m, o) in out.iter_mut().enumerate() {
                if self.space.occupation(idx, m) == top {
                    *o += p;
                }
            }
        }
        out
    }

    /// Probability of odd total photon number; stays at the noise floor for
    /// pair-generated states evolved from vacuum.
    pub fn odd_parity_probability(&self) -> T {
        let pops = self.populations();
        let mut acc = T::zero();
        for (idx, &p) in pops.iter().enumerate() {
            if self.space.total_occupation(idx) % 2 == 1 {
                acc += p;
            }
        }
        acc
    }

    /// Structural sanity checks from the state invariants.
    pub fn validate(&self) -> Result<()> {
        match &self.data {
            StateData::Pure(_) => {
                let norm = self.weight();
                if fabs(norm - T::one()) > fl(1e-9) {
                    return Err(Error::InvalidState(format!(
                        "pure state norm {norm} deviates from 1 beyond 1e-9"
                    )));
                }
            }
            StateData::Density(m) => {
                let tr = self.weight();
                if fabs(tr - T::one()) > fl(1e-8) {
                    return Err(Error::InvalidState(format!(
                        "density trace {tr} deviates from 1 beyond 1e-8"
                    )));
                }
                let mut dev = T::zero();
                let mut scale = T::zero();
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        dev += (m[(i, j)] - m[(j, i)].conj()).norm();
                        scale += m[(i, j)].norm();
                    }
                }
                if scale > T::zero() && dev / scale > fl(1e-10) {
                    return Err(Error::InvalidState(format!(
                        "density matrix Hermiticity deviation {} beyond 1e-10",
                        (dev / scale)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Display-truncated block of the density operator.
#[derive(Debug, Clone)]
pub struct TomographySubset<T> {
    /// Flat indices (into the full space) of the retained basis states.
    pub indices: Vec<usize>,
    /// Multi-index labels of the retained basis states.
    pub labels: Vec<Vec<usize>>,
    /// Sub-block of the density matrix, not renormalized.
    pub matrix: DMatrix<Complex<T>>,
    /// Probability mass contained in the subset.
    pub probability_mass: T,
}

/// Extract the sub-block with all mode occupations below `display_levels`.
pub fn tomography_subset<T: Float>(
    state: &QuantumState<T>,
    display_levels: usize,
) -> Result<TomographySubset<T>> {
    if display_levels == 0 || display_levels > state.space.levels() {
        return Err(Error::InvalidState(format!(
            "display truncation {display_levels} outside 1..={}",
            state.space.levels()
        )));
    }
    let space = &state.space;
    let indices: Vec<usize> = (0..space.dim())
        .filter(|&idx| (0..space.n_modes()).all(|m| space.occupation(idx, m) < display_levels))
        .collect();
    let labels: Vec<Vec<usize>> = indices.iter().map(|&i| space.occupations(i)).collect();
    let rho = state.to_density_matrix();
    let k = indices.len();
    let matrix = DMatrix::from_fn(k, k, |a, b| rho[(indices[a], indices[b])]);
    let mut probability_mass = T::zero();
    for a in 0..k {
        probability_mass += matrix[(a, a)].re;
    }
    Ok(TomographySubset {
        indices,
        labels,
        matrix,
        probability_mass,
    })
}

/// Assemble the effective Hamiltonian as a sparse matrix (ħ = 1, rad/s).
pub fn hamiltonian_matrix<T: Float>(
    h: &RwaHamiltonian<T>,
    space: &FockSpace,
) -> Result<SparseOp<T>> {
    let n_modes = h.n_modes();
    if n_modes != space.n_modes() {
        return Err(Error::GridMismatch(format!(
            "Hamiltonian has {n_modes} modes, space has {}",
            space.n_modes()
        )));
    }
    let input_dev = crate::modes::hermiticity_deviation(&h.beamsplitter, &h.pair);
    if input_dev > fl(1e-8) {
        return Err(Error::NonHermitian {
            deviation: input_dev.as_f64(),
            tolerance: 1e-8,
        });
    }
    // Work from exactly symmetrized coefficient matrices.
    let half_c = Complex::new(fl::<T>(0.5), T::zero());
    let a_adj = h.beamsplitter.map(|c| c.conj()).transpose();
    let a_m = (&h.beamsplitter - a_adj) * half_c;
    let b_m = (&h.pair + h.pair.transpose()) * half_c;

    let i_unit = Complex::new(T::zero(), T::one());
    let half_i = Complex::new(T::zero(), fl::<T>(0.5));
    let levels = space.levels();
    let mut triplets: Vec<(usize, usize, Complex<T>)> = Vec::new();
    let occ_amp = |n: usize| fsqrt(fl::<T>(n as f64));

    for s in 0..space.dim() {
        for k in 0..n_modes {
            let sk = space.stride(k);
            for l in 0..n_modes {
                let sl = space.stride(l);
                // i·A_kl a_k†a_l
                let a_kl = a_m[(k, l)];
                if a_kl.norm_sqr() > T::zero() {
                    let n_l = space.occupation(s, l);
                    if n_l > 0 {
                        let mid = s - sl;
                        let n_k = space.occupation(mid, k);
                        if n_k + 1 < levels {
                            let t = mid + sk;
                            let amp = occ_amp(n_l) * occ_amp(n_k + 1);
                            triplets.push((t, s, i_unit * a_kl * Complex::new(amp, T::zero())));
                        }
                    }
                }
                // (i/2)·B_kl a_k†a_l†
                let b_kl = b_m[(k, l)];
                if b_kl.norm_sqr() > T::zero() {
                    let n_l = space.occupation(s, l);
                    if n_l + 1 < levels {
                        let mid = s + sl;
                        let n_k = space.occupation(mid, k);
                        if n_k + 1 < levels {
                            let t = mid + sk;
                            let amp = occ_amp(n_l + 1) * occ_amp(n_k + 1);
                            triplets.push((t, s, half_i * b_kl * Complex::new(amp, T::zero())));
                        }
                    }
                    // −(i/2)·B*_kl a_k a_l
                    let n_l2 = space.occupation(s, l);
                    if n_l2 > 0 {
                        let mid = s - sl;
                        let n_k = space.occupation(mid, k);
                        if n_k > 0 {
                            let t = mid - sk;
                            let amp = occ_amp(n_l2) * occ_amp(n_k);
                            triplets
                                .push((t, s, -half_i * b_kl.conj() * Complex::new(amp, T::zero())));
                        }
                    }
                }
            }
        }
    }

    let op = SparseOp::from_triplets(space.dim(), triplets);
    let dev = op.hermiticity_deviation();
    if dev > fl(1e-10) {
        return Err(Error::NonHermitian {
            deviation: dev.as_f64(),
            tolerance: 1e-10,
        });
    }
    Ok(op)
}

/// Evolve a pure state under a time-independent Hermitian H through its
/// eigendecomposition, ψ(t) = V·e^{−iΛt}·V†ψ₀.
///
/// When H conserves total photon parity (every Hamiltonian of the pair/
/// beam-splitter form does), the eigenproblem is solved per parity sector.
pub fn evolve_pure<T: LinalgFloat>(
    h: &SparseOp<T>,
    psi0: &QuantumState<T>,
    times: &[T],
) -> Result<Vec<QuantumState<T>>> {
    let space = psi0.space.clone();
    if h.dim() != space.dim() {
        return Err(Error::GridMismatch(
            "Hamiltonian dimension does not match the state space".into(),
        ));
    }
    psi0.validate()?;
    let psi = psi0.pure_amplitudes()?;

    // Partition into parity sectors when H allows it.
    let parity: Vec<u8> = (0..space.dim())
        .map(|i| (space.total_occupation(i) % 2) as u8)
        .collect();
    let parity_safe = h.iter_entries().all(|(r, c, _)| parity[r] == parity[c]);
    let sectors: Vec<Vec<usize>> = if parity_safe {
        let even = (0..space.dim()).filter(|&i| parity[i] == 0).collect();
        let odd = (0..space.dim()).filter(|&i| parity[i] == 1).collect();
        vec![even, odd]
    } else {
        vec![(0..space.dim()).collect()]
    };

    struct Sector<T: LinalgFloat> {
        indices: Vec<usize>,
        eigvals: Vec<T>,
        vectors: DMatrix<Complex<T>>,
        coeffs: DVector<Complex<T>>,
    }

    let mut decomposed: Vec<Sector<T>> = Vec::new();
    for indices in sectors {
        let n = indices.len();
        if n == 0 {
            continue;
        }
        let mut local = vec![usize::MAX; space.dim()];
        for (li, &gi) in indices.iter().enumerate() {
            local[gi] = li;
        }
        let mut block =
            DMatrix::from_element(n, n, Complex::new(T::zero(), T::zero()));
        for (r, c, v) in h.iter_entries() {
            if local[r] != usize::MAX && local[c] != usize::MAX {
                block[(local[r], local[c])] += v;
            }
        }
        let eig = block
            .try_symmetric_eigen(T::default_epsilon(), 100_000)
            .ok_or_else(|| Error::Eigen("Hermitian eigensolver did not converge".into()))?;
        let coeffs = eig.eigenvectors.adjoint()
            * DVector::from_iterator(n, indices.iter().map(|&gi| psi[gi]));
        decomposed.push(Sector {
            indices,
            eigvals: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
            coeffs,
        });
    }

    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        // U(0) is the identity; skip the eigenbasis round trip so the
        // initial snapshot is bit-exact.
        if t == T::zero() {
            out.push(psi0.clone());
            continue;
        }
        let mut amplitudes =
            DVector::from_element(space.dim(), Complex::new(T::zero(), T::zero()));
        for sector in &decomposed {
            let n = sector.indices.len();
            let phased = DVector::from_iterator(
                n,
                (0..n).map(|j| {
                    sector.coeffs[j] * Complex::new(T::zero(), -sector.eigvals[j] * t).exp()
                }),
            );
            let local_psi = &sector.vectors * phased;
            for (li, &gi) in sector.indices.iter().enumerate() {
                amplitudes[gi] = local_psi[li];
            }
        }
        out.push(QuantumState {
            space: space.clone(),
            data: StateData::Pure(amplitudes),
            frame_time: psi0.frame_time + t,
        });
    }
    Ok(out)
}

/// Tolerances of the adaptive Lindblad integrator.
#[derive(Debug, Clone)]
pub struct LindbladOptions<T> {
    pub rtol: T,
    pub atol: T,
}

impl<T: Float> Default for LindbladOptions<T> {
    fn default() -> Self {
        Self {
            rtol: fl(1e-8),
            atol: fl(1e-10),
        }
    }
}

struct LindbladRhs<T: Float> {
    h: SparseOp<T>,
    h_t: SparseOp<T>,
    /// Σ_n γ_n·occ_n(i), the diagonal of the anticommutator term.
    damping: Vec<T>,
    /// (mode, stride, rate) per channel with γ > 0.
    jumps: Vec<(usize, usize, T)>,
    space: FockSpace,
}

impl<T: Float> LindbladRhs<T> {
    fn new(h: &SparseOp<T>, channels: &[CollapseChannel<T>], space: &FockSpace) -> Self {
        let mut damping = vec![T::zero(); space.dim()];
        let mut jumps = Vec::new();
        for ch in channels {
            if ch.rate > T::zero() {
                for (i, d) in damping.iter_mut().enumerate() {
                    *d += ch.rate * fl::<T>(space.occupation(i, ch.mode) as f64);
                }
                jumps.push((ch.mode, space.stride(ch.mode), ch.rate));
            }
        }
        Self {
            h: h.clone(),
            h_t: h.transpose(),
            damping,
            jumps,
            space: space.clone(),
        }
    }

    fn eval(&self, rho: &DMatrix<Complex<T>>) -> DMatrix<Complex<T>> {
        let n = rho.nrows();
        let h_rho = self.h.mul_dense(rho);
        let rho_h = SparseOp::mul_dense_left(&self.h_t, rho);
        let minus_i = Complex::new(T::zero(), -T::one());
        let half = fl::<T>(0.5);
        let levels = self.space.levels();

        let mut out = DMatrix::from_element(n, n, Complex::new(T::zero(), T::zero()));
        out.par_column_iter_mut()
            .enumerate()
            .for_each(|(j, mut col)| {
                let hr = h_rho.column(j);
                let rh = rho_h.column(j);
                let rho_j = rho.column(j);
                let dj = self.damping[j];
                for i in 0..n {
                    // −i[H,ρ] − ½(d_i + d_j)ρ
                    col[i] = minus_i * (hr[i] - rh[i])
                        - rho_j[i].scale(half * (self.damping[i] + dj));
                }
                // γ a ρ a†: (i,j) ← γ√((m_i+1)(m_j+1))·ρ(i+s, j+s)
                for &(mode, stride, rate) in &self.jumps {
                    let m_j = self.space.occupation(j, mode);
                    if m_j + 1 >= levels {
                        continue;
                    }
                    let shifted = rho.column(j + stride);
                    let w_j = fsqrt(fl::<T>((m_j + 1) as f64));
                    for i in 0..n {
                        let m_i = self.space.occupation(i, mode);
                        if m_i + 1 < levels {
                            let w = rate * w_j * fsqrt(fl::<T>((m_i + 1) as f64));
                            col[i] += shifted[i + stride].scale(w);
                        }
                    }
                }
            });
        out
    }
}

/// Dormand–Prince 5(4) stage coefficients (the system is autonomous, so
/// the abscissae are not needed).
const DP_A: [[f64; 6]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate the Lindblad master equation
/// ρ̇ = −i[H,ρ] + Σ_n (C_n ρ C_n† − ½{C_n†C_n, ρ}) with C_n = √γ_n a_n,
/// sampling the solution at the requested times.
pub fn evolve_lindblad<T: Float>(
    h: &SparseOp<T>,
    channels: &[CollapseChannel<T>],
    rho0: &QuantumState<T>,
    times: &[T],
    opts: &LindbladOptions<T>,
) -> Result<Vec<QuantumState<T>>> {
    let space = rho0.space.clone();
    if h.dim() != space.dim() {
        return Err(Error::GridMismatch(
            "Hamiltonian dimension does not match the state space".into(),
        ));
    }
    for ch in channels {
        ch.validate(&space)?;
    }
    rho0.validate()?;
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let sorted = times.to_vec();
    for w in sorted.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidState("times must be non-decreasing".into()));
        }
    }

    let rhs = LindbladRhs::new(h, channels, &space);
    let mut rho = rho0.to_density_matrix();
    let mut t = T::zero();
    let t_end = *sorted.last().expect("non-empty");
    let t_scale = fmax(t_end, fl(1e-30));

    // Initial step from the right-hand-side magnitude.
    let f0 = rhs.eval(&rho);
    let norm = |m: &DMatrix<Complex<T>>| -> T {
        fsqrt(m.iter().fold(T::zero(), |acc, v| acc + v.norm_sqr()))
    };
    let f_norm = norm(&f0);
    let mut h_step = if f_norm > T::zero() {
        fmax(fl::<T>(1e-6) * t_scale, fl::<T>(0.01) / f_norm)
    } else {
        fl::<T>(0.01) * t_scale
    };
    let mut k1 = f0;

    let mut out = Vec::with_capacity(sorted.len());
    let mut emit = |rho: &DMatrix<Complex<T>>, at: T| {
        // Snapshots are exactly Hermitian-symmetrized; the flow preserves
        // Hermiticity, this only removes roundoff drift.
        let n = rho.nrows();
        let sym = DMatrix::from_fn(n, n, |i, j| {
            (rho[(i, j)] + rho[(j, i)].conj()).scale(fl::<T>(0.5))
        });
        out.push(QuantumState {
            space: space.clone(),
            data: StateData::Density(sym),
            frame_time: rho0.frame_time + at,
        });
    };

    let mut target_idx = 0;
    while target_idx < sorted.len() && sorted[target_idx] <= t {
        emit(&rho, t);
        target_idx += 1;
    }

    let safety = fl::<T>(0.9);
    let min_factor = fl::<T>(0.2);
    let max_factor = fl::<T>(5.0);
    let order_exp = fl::<T>(0.2);

    while target_idx < sorted.len() {
        let target = sorted[target_idx];
        let mut hitting = false;
        let mut h_try = h_step;
        if t + h_try >= target {
            h_try = target - t;
            hitting = true;
        }
        if h_try < t_scale * fl(1e-15) {
            // Step collapsed onto the target; accept the current state.
            if hitting {
                emit(&rho, target);
                target_idx += 1;
                continue;
            }
            return Err(Error::StepUnderflow {
                t: t.as_f64(),
                step: h_try.as_f64(),
            });
        }

        // Stages (FSAL: k1 carried over).
        let mut stages: Vec<DMatrix<Complex<T>>> = Vec::with_capacity(7);
        stages.push(k1.clone());
        for s in 1..6 {
            let mut y = rho.clone();
            for (j, stage) in stages.iter().enumerate() {
                let a = fl::<T>(DP_A[s][j]);
                if a != T::zero() {
                    y += stage * Complex::new(a * h_try, T::zero());
                }
            }
            stages.push(rhs.eval(&y));
        }
        let mut y5 = rho.clone();
        for (j, stage) in stages.iter().enumerate() {
            let b = fl::<T>(DP_B5[j]);
            if b != T::zero() {
                y5 += stage * Complex::new(b * h_try, T::zero());
            }
        }
        let k7 = rhs.eval(&y5);
        stages.push(k7);

        // Embedded error estimate.
        let mut err_sq = T::zero();
        let n_el = fl::<T>((rho.nrows() * rho.ncols()) as f64);
        {
            let mut err = DMatrix::from_element(
                rho.nrows(),
                rho.ncols(),
                Complex::new(T::zero(), T::zero()),
            );
            for (j, stage) in stages.iter().enumerate() {
                let d = fl::<T>(DP_B5[j] - DP_B4[j]);
                if d != T::zero() {
                    err += stage * Complex::new(d * h_try, T::zero());
                }
            }
            for i in 0..rho.nrows() {
                for j in 0..rho.ncols() {
                    let scale = opts.atol
                        + opts.rtol * fmax(rho[(i, j)].norm(), y5[(i, j)].norm());
                    let r = err[(i, j)].norm() / scale;
                    err_sq += r * r;
                }
            }
        }
        let err_norm = fsqrt(err_sq / n_el);

        if err_norm <= T::one() {
            t += h_try;
            rho = y5;
            k1 = stages.pop().expect("k7 present");
            if hitting {
                emit(&rho, target);
                target_idx += 1;
            }
        }
        let factor = if err_norm > T::zero() {
            safety * num_traits::Float::powf(err_norm, -order_exp)
        } else {
            max_factor
        };
        let factor = fmax(min_factor, if factor < max_factor { factor } else { max_factor });
        h_step = h_try * factor;
        if h_step < t_scale * fl(1e-15) {
            return Err(Error::StepUnderflow {
                t: t.as_f64(),
                step: h_step.as_f64(),
            });
        }
    }

    Ok(out)
}

/// Trace distance ½‖ρ₁ − ρ₂‖₁ between two density matrices.
pub fn trace_distance<T: LinalgFloat>(
    a: &DMatrix<Complex<T>>,
    b: &DMatrix<Complex<T>>,
) -> Result<T> {
    let diff = a - b;
    let eig = diff
        .try_symmetric_eigen(T::default_epsilon(), 100_000)
        .ok_or_else(|| Error::Eigen("trace-distance eigensolver did not converge".into()))?;
    let sum = eig
        .eigenvalues
        .iter()
        .fold(T::zero(), |acc, &l| acc + fabs(l));
    Ok(sum * fl(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn squeezer_h(space: &FockSpace, lambda: f64) -> SparseOp<f64> {
        let n = space.n_modes();
        let rwa = RwaHamiltonian {
            beamsplitter: DMatrix::from_element(n, n, Complex::new(0.0, 0.0)),
            pair: {
                let mut b = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
                b[(0, 0)] = Complex::new(lambda, 0.0);
                b
            },
            mode_freqs: (0..n).map(|k| (k + 1) as f64).collect(),
            fundamental: 1.0,
            hermiticity_deviation: 0.0,
            ladder_detuning: vec![0.0; n],
        };
        hamiltonian_matrix(&rwa, space).unwrap()
    }

    #[test]
    fn space_dimensions_and_index_round_trip() {
        let s = FockSpace::build(3, 9).unwrap();
        assert_eq!(s.dim(), 729);
        let tiny = FockSpace::build(1, 2).unwrap();
        assert_eq!(tiny.dim(), 2);
        for flat in 0..s.dim() {
            assert_eq!(s.flat_index(&s.occupations(flat)), flat);
        }
        assert!(matches!(
            FockSpace::build_with_cap(4, 10, 100),
            Err(Error::Capacity { dim: 10_000, cap: 100 })
        ));
    }

    #[test]
    fn ladder_operators_satisfy_truncated_commutator() {
        let space = FockSpace::build(1, 6).unwrap();
        let (a, a_dag) = ladder_operators::<f64>(&space, 0);
        // ⟨0| a a† |0⟩ = 1
        let vac = QuantumState::<f64>::vacuum(space.clone());
        let up = a_dag.mul_vec(vac.pure_amplitudes().unwrap());
        let back = a.mul_vec(&up);
        assert_relative_eq!(back[0].re, 1.0, max_relative = 1e-14);

        // [a, a†] = I − levels·|top⟩⟨top| exactly on the truncated space.
        let comm = a.matmul(&a_dag).add(&{
            let mut neg = a_dag.matmul(&a);
            neg.scale(Complex::new(-1.0, 0.0));
            neg
        });
        let dense = comm.to_dense();
        for i in 0..6 {
            for j in 0..6 {
                let expected = if i != j {
                    0.0
                } else if i == 5 {
                    1.0 - 6.0
                } else {
                    1.0
                };
                // √n·√n reproduces n only to rounding.
                assert_relative_eq!(dense[(i, j)].re, expected, epsilon = 1e-14);
                assert_eq!(dense[(i, j)].im, 0.0);
            }
        }
    }

    #[test]
    fn ladder_operators_on_distinct_modes_commute_exactly() {
        let space = FockSpace::build(2, 4).unwrap();
        let (a0, _) = ladder_operators::<f64>(&space, 0);
        let (_, a1_dag) = ladder_operators::<f64>(&space, 1);
        let lhs = a0.matmul(&a1_dag).to_dense();
        let rhs = a1_dag.matmul(&a0).to_dense();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn squeezer_matrix_elements_match_closed_form() {
        let space = FockSpace::build(1, 9).unwrap();
        let lambda = 0.7;
        let h = squeezer_h(&space, lambda).to_dense();
        for n in 0..7usize {
            let expected = 0.5 * lambda * (((n + 1) * (n + 2)) as f64).sqrt();
            let elem = h[(n + 2, n)];
            assert_relative_eq!(elem.im, expected, max_relative = 1e-14);
            assert_eq!(elem.re, 0.0);
            let adj = h[(n, n + 2)];
            assert_relative_eq!(adj.im, -expected, max_relative = 1e-14);
        }
        // H = 0 when A = B = 0.
        let zero = squeezer_h(&space, 0.0);
        assert_eq!(zero.nnz(), 0);
    }

    #[test]
    fn hamiltonian_conserves_total_photon_parity() {
        let space = FockSpace::build(2, 5).unwrap();
        let mut b = DMatrix::from_element(2, 2, Complex::new(0.0, 0.0));
        b[(0, 0)] = Complex::new(0.4, 0.1);
        b[(0, 1)] = Complex::new(0.2, -0.3);
        b[(1, 0)] = Complex::new(0.2, -0.3);
        b[(1, 1)] = Complex::new(-0.1, 0.2);
        let mut a = DMatrix::from_element(2, 2, Complex::new(0.0, 0.0));
        a[(0, 1)] = Complex::new(0.5, 0.2);
        a[(1, 0)] = Complex::new(-0.5, 0.2);
        let rwa = RwaHamiltonian {
            beamsplitter: a,
            pair: b,
            mode_freqs: vec![1.0, 2.0],
            fundamental: 1.0,
            hermiticity_deviation: 0.0,
            ladder_detuning: vec![0.0, 0.0],
        };
        let h = hamiltonian_matrix(&rwa, &space).unwrap();
        assert!(h.hermiticity_deviation() < 1e-14);
        for (r, c, _) in h.iter_entries() {
            assert_eq!(
                space.total_occupation(r) % 2,
                space.total_occupation(c) % 2,
                "entry ({r},{c}) crosses parity sectors"
            );
        }
    }

    #[test]
    fn zero_hamiltonian_leaves_state_unchanged() {
        let space = FockSpace::build(2, 3).unwrap();
        let h = SparseOp::from_triplets(space.dim(), Vec::new());
        let psi0 = QuantumState::<f64>::fock(space, &[1, 2]).unwrap();
        let states = evolve_pure(&h, &psi0, &[0.0, 0.5, 2.0]).unwrap();
        for st in states {
            let amp = st.pure_amplitudes().unwrap();
            let idx = st.space.flat_index(&[1, 2]);
            assert_relative_eq!(amp[idx].re, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn single_mode_squeezer_photon_number_matches_analytic() {
        let space = FockSpace::build(1, 9).unwrap();
        let lambda = 1.0;
        let h = squeezer_h(&space, lambda);
        let vac = QuantumState::<f64>::vacuum(space);
        let times = [0.1, 0.3];
        let states = evolve_pure(&h, &vac, &times).unwrap();
        for (st, &t) in states.iter().zip(&times) {
            let n = st.mean_photon_numbers()[0];
            let expected = (lambda * t).sinh().powi(2);
            assert!(
                (n - expected).abs() < 1e-3,
                "⟨n⟩ = {n} vs sinh²(λt) = {expected} at λt = {t}"
            );
            // Energy in the rotating frame is conserved.
            let e0 = h.expectation(vac.pure_amplitudes().unwrap());
            let et = h.expectation(st.pure_amplitudes().unwrap());
            assert!((e0 - et).norm() <= 1e-9 * (1.0 + et.norm()));
        }
    }

    #[test]
    fn two_mode_squeezer_balances_photon_numbers() {
        let space = FockSpace::build(2, 9).unwrap();
        let mut b = DMatrix::from_element(2, 2, Complex::new(0.0, 0.0));
        b[(0, 1)] = Complex::new(0.8, 0.0);
        b[(1, 0)] = Complex::new(0.8, 0.0);
        let rwa = RwaHamiltonian {
            beamsplitter: DMatrix::from_element(2, 2, Complex::new(0.0, 0.0)),
            pair: b,
            mode_freqs: vec![1.0, 2.0],
            fundamental: 1.0,
            hermiticity_deviation: 0.0,
            ladder_detuning: vec![0.0, 0.0],
        };
        let h = hamiltonian_matrix(&rwa, &space).unwrap();
        let vac = QuantumState::<f64>::vacuum(space);
        let states = evolve_pure(&h, &vac, &[0.05, 0.2, 0.4]).unwrap();
        for st in states {
            let n = st.mean_photon_numbers();
            assert!((n[0] - n[1]).abs() < 1e-9, "⟨n₀⟩ = {}, ⟨n₁⟩ = {}", n[0], n[1]);
            assert!(st.odd_parity_probability() < 1e-12);
        }
    }

    #[test]
    fn amplitude_damping_matches_exponential_decay() {
        let space = FockSpace::build(1, 4).unwrap();
        let h = SparseOp::from_triplets(space.dim(), Vec::new());
        let one = QuantumState::<f64>::fock(space.clone(), &[1]).unwrap();
        let rho0 = QuantumState::from_density(space, one.to_density_matrix()).unwrap();
        let gamma = 1e5;
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25 / gamma * 5.0).collect();
        let channels = [CollapseChannel { mode: 0, rate: gamma }];
        let states =
            evolve_lindblad(&h, &channels, &rho0, &times, &LindbladOptions::default()).unwrap();
        for (st, &t) in states.iter().zip(&times) {
            let n = st.mean_photon_numbers()[0];
            let expected = (-gamma * t).exp();
            assert!(
                (n - expected).abs() < 1e-6,
                "⟨n⟩ = {n} vs e^{{−γt}} = {expected} at t = {t}"
            );
            st.validate().unwrap();
        }
    }

    #[test]
    fn two_level_damping_matches_analytic_map() {
        // H = 0, superposition initial state: ρ00' = ρ00 + (1−e^{−γt})ρ11,
        // ρ11' = e^{−γt}ρ11, ρ01' = e^{−γt/2}ρ01.
        let space = FockSpace::build(1, 2).unwrap();
        let h = SparseOp::from_triplets(2, Vec::new());
        let amp = DVector::from_vec(vec![
            Complex::new(0.6, 0.0),
            Complex::new(0.0, 0.8),
        ]);
        let psi = QuantumState::from_pure(space.clone(), amp).unwrap();
        let rho0 = QuantumState::from_density(space, psi.to_density_matrix()).unwrap();
        let gamma: f64 = 2.0e4;
        let t: f64 = 3.5e-5;
        let channels = [CollapseChannel { mode: 0, rate: gamma }];
        let states =
            evolve_lindblad(&h, &channels, &rho0, &[t], &LindbladOptions::default()).unwrap();
        let rho = states[0].to_density_matrix();
        let decay = (-gamma * t).exp();
        let half = (-(gamma * t) / 2.0).exp();
        assert!((rho[(1, 1)].re - 0.64 * decay).abs() < 1e-6);
        assert!((rho[(0, 0)].re - (0.36 + 0.64 * (1.0 - decay))).abs() < 1e-6);
        let expected01 = Complex::new(0.0, -0.48) * half;
        assert!((rho[(0, 1)] - expected01).norm() < 1e-6);
    }

    #[test]
    fn zero_rate_lindblad_matches_pure_evolution() {
        let space = FockSpace::build(1, 9).unwrap();
        let h = squeezer_h(&space, 1.0);
        let vac = QuantumState::<f64>::vacuum(space.clone());
        let t = 0.3;
        let pure = evolve_pure(&h, &vac, &[t]).unwrap().remove(0);
        let rho0 = QuantumState::from_density(space, vac.to_density_matrix()).unwrap();
        let channels = [CollapseChannel { mode: 0, rate: 0.0 }];
        let open =
            evolve_lindblad(&h, &channels, &rho0, &[t], &LindbladOptions::default()).unwrap();
        let dist =
            trace_distance(&pure.to_density_matrix(), &open[0].to_density_matrix()).unwrap();
        assert!(dist < 1e-7, "trace distance {dist}");
    }

    #[test]
    fn decay_suppresses_photon_growth() {
        let space = FockSpace::build(1, 9).unwrap();
        let lambda = 2.0e5;
        let h = squeezer_h(&space, lambda);
        let vac = QuantumState::<f64>::vacuum(space.clone());
        let times: Vec<f64> = (1..=6).map(|i| i as f64 * 5e-7).collect();
        let pure = evolve_pure(&h, &vac, &times).unwrap();
        let rho0 = QuantumState::from_density(space, vac.to_density_matrix()).unwrap();
        let channels = [CollapseChannel { mode: 0, rate: 1e5 }];
        let open =
            evolve_lindblad(&h, &channels, &rho0, &times, &LindbladOptions::default()).unwrap();
        for (p, o) in pure.iter().zip(&open) {
            let np = p.mean_photon_numbers()[0];
            let no = o.mean_photon_numbers()[0];
            assert!(no < np, "damped ⟨n⟩ = {no} not below lossless {np}");
        }
    }

    #[test]
    fn tomography_subset_extracts_low_photon_block() {
        let space = FockSpace::build(3, 9).unwrap();
        let vac = QuantumState::<f64>::vacuum(space.clone());
        let sub = tomography_subset(&vac, 4).unwrap();
        assert_eq!(sub.matrix.nrows(), 64);
        assert_relative_eq!(sub.probability_mass, 1.0, max_relative = 1e-14);
        assert_eq!(sub.labels[0], vec![0, 0, 0]);
        assert_relative_eq!(sub.matrix[(0, 0)].re, 1.0, max_relative = 1e-14);

        // Full display truncation returns the whole matrix.
        let st = QuantumState::<f64>::fock(space, &[2, 0, 1]).unwrap();
        assert_eq!(st.mean_photon_numbers(), vec![2.0, 0.0, 1.0]);
        let full = tomography_subset(&st, 9).unwrap();
        assert_eq!(full.matrix.nrows(), 729);
        let mass: f64 = (0..full.matrix.nrows())
            .map(|i| full.matrix[(i, i)].re)
            .sum();
        assert_relative_eq!(full.probability_mass, mass, max_relative = 1e-14);
    }

    #[test]
    fn truncation_guard_flags_top_level_occupation() {
        let space = FockSpace::build(1, 3).unwrap();
        let st = QuantumState::<f64>::fock(space, &[2]).unwrap();
        let top = st.top_level_occupation();
        assert_relative_eq!(top[0], 1.0, max_relative = 1e-14);
    }
}
