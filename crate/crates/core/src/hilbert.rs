//! State and operator algebra over the `2^N` computational basis of `N` qubits.
//!
//! Basis index bits run with qubit 1 as the most significant bit, `|g⟩ = 0`
//! and `|e⟩ = 1`. `σ_z|e⟩ = +|e⟩` and `σ_- = |g⟩⟨e|`.

use std::fmt;

use ndarray::{array, Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{self, C64, I, ONE, ZERO};

/// Largest qubit count the dense representations accept.
pub const MAX_QUBITS: usize = 12;

fn dim_of(n_qubits: usize) -> usize {
    1usize << n_qubits
}

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "dimension {dim} is not a power of two"
        )));
    }
    Ok(dim.trailing_zeros() as usize)
}

/// Bit mask of qubit `j` (1-based) inside a basis index.
pub fn qubit_mask(j: usize, n_qubits: usize) -> usize {
    1 << (n_qubits - j)
}

/// Pure state amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: Array1<C64>,
    n_qubits: usize,
}

impl StateVector {
    pub fn new(amplitudes: Array1<C64>) -> Result<Self> {
        let n_qubits = qubits_for_dim(amplitudes.len())?;
        Ok(Self { amplitudes, n_qubits })
    }

    pub fn zeros(n_qubits: usize) -> Self {
        Self { amplitudes: Array1::zeros(dim_of(n_qubits)), n_qubits }
    }

    /// Computational basis state from a string of `g`/`e` (or `0`/`1`),
    /// qubit 1 first.
    pub fn basis(label: &str) -> Result<Self> {
        let n = label.chars().count();
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::InvalidArgument(format!("bad basis label '{label}'")));
        }
        let mut index = 0usize;
        for c in label.chars() {
            index <<= 1;
            match c {
                'g' | '0' => {}
                'e' | '1' => index |= 1,
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "bad character '{c}' in basis label '{label}'"
                    )))
                }
            }
        }
        let mut s = Self::zeros(n);
        s.amplitudes[index] = ONE;
        Ok(s)
    }

    /// All qubits in `|g⟩`.
    pub fn ground(n_qubits: usize) -> Self {
        let mut s = Self::zeros(n_qubits);
        s.amplitudes[0] = ONE;
        s
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Array1<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        linalg::norm_sqr(&self.amplitudes).sqrt()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::NotNormalized(n));
        }
        self.amplitudes.mapv_inplace(|z| z / n);
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(linalg::inner(&self.amplitudes, &other.amplitudes))
    }

    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix {
            entries: linalg::outer(&self.amplitudes, &self.amplitudes),
            n_qubits: self.n_qubits,
        }
    }

    pub fn scaled(&self, factor: C64) -> StateVector {
        StateVector { amplitudes: self.amplitudes.mapv(|z| z * factor), n_qubits: self.n_qubits }
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (idx, a) in self.amplitudes.iter().enumerate() {
            if a.norm() < 1e-12 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({:.6}{:+.6}i)|{}⟩", a.re, a.im, basis_label(idx, self.n_qubits))?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// `g`/`e` label of basis index `idx`.
pub fn basis_label(idx: usize, n_qubits: usize) -> String {
    (1..=n_qubits)
        .map(|j| if idx & qubit_mask(j, n_qubits) != 0 { 'e' } else { 'g' })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: Array2<C64>,
    n_qubits: usize,
}

impl DensityMatrix {
    pub fn new(entries: Array2<C64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch { expected: entries.nrows(), found: entries.ncols() });
        }
        let n_qubits = qubits_for_dim(entries.nrows())?;
        Ok(Self { entries, n_qubits })
    }

    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let d = dim_of(n_qubits);
        Self { entries: Array2::from_diag_elem(d, C64::new(1.0 / d as f64, 0.0)), n_qubits }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<C64> {
        self.entries
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.entries.view())
    }

    pub fn purity(&self) -> f64 {
        // tr ρ² = Σ |ρ_ij|² for Hermitian ρ
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hermitian_deviation(&self) -> f64 {
        linalg::hermitian_deviation(&self.entries.view())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::eigvalsh(&self.entries.view())[0]
    }

    /// Checks the physical-state tolerances: Hermitian to 1e-10, unit trace
    /// to 1e-10, eigenvalues above −1e-8.
    pub fn check_physical(&self) -> Result<()> {
        let herm = self.hermitian_deviation();
        if herm > 1e-10 {
            return Err(Error::NotHermitian(herm));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > 1e-10 {
            return Err(Error::InvalidArgument(format!("trace {tr} differs from 1")));
        }
        let lowest = self.min_eigenvalue();
        if lowest < -1e-8 {
            return Err(Error::InvalidArgument(format!("negative eigenvalue {lowest:.3e}")));
        }
        Ok(())
    }

    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(linalg::trace_distance(&self.entries.view(), &other.entries.view()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    entries: Array2<C64>,
    n_qubits: usize,
}

impl OperatorMatrix {
    pub fn new(entries: Array2<C64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch { expected: entries.nrows(), found: entries.ncols() });
        }
        let n_qubits = qubits_for_dim(entries.nrows())?;
        Ok(Self { entries, n_qubits })
    }

    pub fn identity(n_qubits: usize) -> Self {
        Self { entries: linalg::identity(dim_of(n_qubits)), n_qubits }
    }

    pub fn zeros(n_qubits: usize) -> Self {
        let d = dim_of(n_qubits);
        Self { entries: Array2::zeros((d, d)), n_qubits }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<C64> {
        self.entries
    }

    pub fn dagger(&self) -> OperatorMatrix {
        OperatorMatrix { entries: linalg::dagger(&self.entries.view()), n_qubits: self.n_qubits }
    }

    pub fn matmul(&self, other: &OperatorMatrix) -> Result<OperatorMatrix> {
        check_dim(self.dim(), other.dim())?;
        Ok(OperatorMatrix { entries: self.entries.dot(&other.entries), n_qubits: self.n_qubits })
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        check_dim(self.dim(), state.dim())?;
        Ok(StateVector { amplitudes: self.entries.dot(&state.amplitudes), n_qubits: self.n_qubits })
    }

    pub fn add(&self, other: &OperatorMatrix) -> Result<OperatorMatrix> {
        check_dim(self.dim(), other.dim())?;
        Ok(OperatorMatrix { entries: &self.entries + &other.entries, n_qubits: self.n_qubits })
    }

    pub fn scale(&self, factor: C64) -> OperatorMatrix {
        OperatorMatrix { entries: self.entries.mapv(|z| z * factor), n_qubits: self.n_qubits }
    }

    pub fn hermitian_deviation(&self) -> f64 {
        linalg::hermitian_deviation(&self.entries.view())
    }

    pub fn unitarity_deviation(&self) -> f64 {
        linalg::unitarity_deviation(&self.entries.view())
    }

    pub fn max_abs_diff(&self, other: &OperatorMatrix) -> f64 {
        linalg::max_abs(&(&self.entries - &other.entries).view())
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Single-qubit matrices in the `(|g⟩, |e⟩)` basis.
pub mod pauli {
    use super::*;

    pub fn identity() -> Array2<C64> {
        array![[ONE, ZERO], [ZERO, ONE]]
    }

    /// `σ_- = |g⟩⟨e|`
    pub fn lowering() -> Array2<C64> {
        array![[ZERO, ONE], [ZERO, ZERO]]
    }

    /// `σ_+ = |e⟩⟨g|`
    pub fn raising() -> Array2<C64> {
        array![[ZERO, ZERO], [ONE, ZERO]]
    }

    pub fn x() -> Array2<C64> {
        array![[ZERO, ONE], [ONE, ZERO]]
    }

    /// `σ_y = −i(σ_+ − σ_-)`
    pub fn y() -> Array2<C64> {
        array![[ZERO, I], [-I, ZERO]]
    }

    /// `σ_z` with `σ_z|e⟩ = +|e⟩`
    pub fn z() -> Array2<C64> {
        array![[-ONE, ZERO], [ZERO, ONE]]
    }
}

/// `I ⊗ … ⊗ op2 ⊗ … ⊗ I` with `op2` on qubit `j` (1-based).
pub fn embed_single(op2: &Array2<C64>, j: usize, n_qubits: usize) -> Result<OperatorMatrix> {
    if op2.dim() != (2, 2) {
        return Err(Error::DimensionMismatch { expected: 2, found: op2.nrows() });
    }
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::UnsupportedQubitCount { n_qubits, reason: "need 1..=12 qubits" });
    }
    if j == 0 || j > n_qubits {
        return Err(Error::QubitIndex { index: j, n_qubits });
    }
    let d = dim_of(n_qubits);
    let mask = qubit_mask(j, n_qubits);
    let mut out = Array2::zeros((d, d));
    for col in 0..d {
        let b_in = usize::from(col & mask != 0);
        for b_out in 0..2 {
            let x = op2[[b_out, b_in]];
            if x == ZERO {
                continue;
            }
            let row = if b_out == 1 { col | mask } else { col & !mask };
            out[[row, col]] = x;
        }
    }
    Ok(OperatorMatrix { entries: out, n_qubits })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Collective {
    Plus,
    Minus,
    Z,
    X,
    Y,
}

impl Collective {
    fn single(self) -> Array2<C64> {
        match self {
            Collective::Plus => pauli::raising(),
            Collective::Minus => pauli::lowering(),
            Collective::Z => pauli::z(),
            Collective::X => pauli::x(),
            Collective::Y => pauli::y(),
        }
    }
}

/// `Σ_j σ_kind^(j)`. Note the z, x and y sums are twice the spin components.
pub fn collective(kind: Collective, n_qubits: usize) -> Result<OperatorMatrix> {
    let single = kind.single();
    let mut total = OperatorMatrix::zeros(n_qubits);
    for j in 1..=n_qubits {
        total.entries += &embed_single(&single, j, n_qubits)?.entries;
    }
    Ok(total)
}

/// Total spin `J² = J_x² + J_y² + J_z²` with `J_a = ½ Σ σ_a`.
pub fn total_spin_squared(n_qubits: usize) -> Result<OperatorMatrix> {
    let mut total = OperatorMatrix::zeros(n_qubits);
    for kind in [Collective::X, Collective::Y, Collective::Z] {
        let j = collective(kind, n_qubits)?.scale(C64::new(0.5, 0.0));
        total.entries += &j.entries.dot(&j.entries);
    }
    Ok(total)
}

/// `c ρ c† − ½(c†c ρ + ρ c†c)`
pub fn dissipator(c: &OperatorMatrix, rho: &DensityMatrix) -> Result<Array2<C64>> {
    check_dim(c.dim(), rho.dim())?;
    let cd = linalg::dagger(&c.entries.view());
    let cdc = cd.dot(&c.entries);
    let jump = c.entries.dot(&rho.entries).dot(&cd);
    let anti = cdc.dot(&rho.entries) + rho.entries.dot(&cdc);
    Ok(jump - anti.mapv(|z| z * 0.5))
}

/// `⟨ψ|A|ψ⟩` for pure states, `tr(Aρ)` for mixed ones.
pub trait Expectation {
    fn expectation(&self, op: &OperatorMatrix) -> Result<C64>;
}

impl Expectation for StateVector {
    fn expectation(&self, op: &OperatorMatrix) -> Result<C64> {
        check_dim(op.dim(), self.dim())?;
        let applied = op.entries.dot(&self.amplitudes);
        Ok(linalg::inner(&self.amplitudes, &applied))
    }
}

impl Expectation for DensityMatrix {
    fn expectation(&self, op: &OperatorMatrix) -> Result<C64> {
        check_dim(op.dim(), self.dim())?;
        // tr(Aρ) = Σ_ij A_ij ρ_ji
        let mut total = ZERO;
        for ((i, j), a) in op.entries.indexed_iter() {
            total += a * self.entries[[j, i]];
        }
        Ok(total)
    }
}

pub fn expectation<S: Expectation>(op: &OperatorMatrix, state: &S) -> Result<C64> {
    state.expectation(op)
}
