//! Coupled angular-momentum basis `|J, J_z, λ⟩` of `N` pseudo-spins.
//!
//! The basis is built by adding one spin-1/2 at a time with Condon-Shortley
//! Clebsch-Gordan coefficients, so `J_±` act on every ladder with positive
//! real coefficients `√((J∓J_z)(J±J_z+1))`. The coupling-history tag `λ` is the
//! list of intermediate total spins after qubits 2, 3, …, N (the last entry is
//! `J` itself).

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{OperatorMatrix, StateVector, MAX_QUBITS};
use crate::linalg::{self, C64, ONE, ZERO};

/// Half-integer stored as twice its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const fn from_doubled(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub const fn doubled(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl Serialize for HalfInt {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

fn fmt_history(history: &[HalfInt]) -> String {
    let parts: Vec<String> = history.iter().map(|h| h.to_string()).collect();
    format!("({})", parts.join(","))
}

/// One invariant ladder `{(J, J_z, λ) : J_z = −J..J}`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubspaceLabel {
    pub j: HalfInt,
    pub history: Vec<HalfInt>,
}

impl SubspaceLabel {
    pub fn is_dark(&self) -> bool {
        self.j.doubled() == 0
    }
}

impl fmt::Display for SubspaceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "J={},lam={}", self.j, fmt_history(&self.history))
    }
}

impl Serialize for SubspaceLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoupledLabel {
    pub j: HalfInt,
    pub jz: HalfInt,
    pub history: Vec<HalfInt>,
}

impl CoupledLabel {
    pub fn sector(&self) -> SubspaceLabel {
        SubspaceLabel { j: self.j, history: self.history.clone() }
    }

    pub fn is_top(&self) -> bool {
        self.jz == self.j
    }
}

impl fmt::Display for CoupledLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "J={},Jz={},lam={}", self.j, self.jz, fmt_history(&self.history))
    }
}

#[derive(Clone, Debug)]
pub struct CoupledBasis {
    n_qubits: usize,
    labels: Vec<CoupledLabel>,
    sectors: Vec<SubspaceLabel>,
    transform: Array2<C64>,
}

struct Ladder {
    history: Vec<HalfInt>,
    j2: i32,
    // index k holds J_z = −J + k
    states: Vec<Array1<C64>>,
}

/// Builds the coupled basis for `1 ≤ n_qubits ≤ 12`.
pub fn build_coupled_basis(n_qubits: usize) -> Result<CoupledBasis> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::UnsupportedQubitCount { n_qubits, reason: "coupled basis needs 1..=12 qubits" });
    }
    let up = Array1::from(vec![ZERO, ONE]);
    let down = Array1::from(vec![ONE, ZERO]);
    let mut ladders = vec![Ladder { history: Vec::new(), j2: 1, states: vec![down.clone(), up.clone()] }];

    for _ in 2..=n_qubits {
        let mut next = Vec::with_capacity(ladders.len() * 2);
        for parent in &ladders {
            let j = parent.j2 as f64 / 2.0;
            let children: &[i32] = if parent.j2 > 0 { &[parent.j2 + 1, parent.j2 - 1] } else { &[1] };
            for &big_j2 in children {
                let mut states = Vec::with_capacity(big_j2 as usize + 1);
                for m2 in (-big_j2..=big_j2).step_by(2) {
                    let m = m2 as f64 / 2.0;
                    // parent components with J_z = M − 1/2 (new spin up) and M + 1/2 (new spin down)
                    let (c_up, c_down) = if big_j2 == parent.j2 + 1 {
                        (((j + m + 0.5) / (2.0 * j + 1.0)).sqrt(), ((j - m + 0.5) / (2.0 * j + 1.0)).sqrt())
                    } else {
                        (-((j - m + 0.5) / (2.0 * j + 1.0)).sqrt(), ((j + m + 0.5) / (2.0 * j + 1.0)).sqrt())
                    };
                    let dim = parent.states[0].len() * 2;
                    let mut v = Array1::<C64>::zeros(dim);
                    if let Some(p) = parent_state(parent, m2 - 1) {
                        add_kron(&mut v, p, &up, c_up);
                    }
                    if let Some(p) = parent_state(parent, m2 + 1) {
                        add_kron(&mut v, p, &down, c_down);
                    }
                    states.push(v);
                }
                let mut history = parent.history.clone();
                history.push(HalfInt(big_j2));
                next.push(Ladder { history, j2: big_j2, states });
            }
        }
        ladders = next;
    }

    let dim = 1usize << n_qubits;
    let mut transform = Array2::zeros((dim, dim));
    let mut labels = Vec::with_capacity(dim);
    let mut sectors = Vec::with_capacity(ladders.len());
    let mut col = 0;
    for ladder in ladders {
        sectors.push(SubspaceLabel { j: HalfInt(ladder.j2), history: ladder.history.clone() });
        for (k, v) in ladder.states.into_iter().enumerate() {
            transform.column_mut(col).assign(&v);
            labels.push(CoupledLabel {
                j: HalfInt(ladder.j2),
                jz: HalfInt(-ladder.j2 + 2 * k as i32),
                history: ladder.history.clone(),
            });
            col += 1;
        }
    }
    debug_assert_eq!(col, dim);
    Ok(CoupledBasis { n_qubits, labels, sectors, transform })
}

fn parent_state(parent: &Ladder, m2: i32) -> Option<&Array1<C64>> {
    if m2 < -parent.j2 || m2 > parent.j2 {
        return None;
    }
    parent.states.get(((m2 + parent.j2) / 2) as usize)
}

fn add_kron(out: &mut Array1<C64>, a: &Array1<C64>, b: &Array1<C64>, coef: f64) {
    for (i, &x) in a.iter().enumerate() {
        if x == ZERO {
            continue;
        }
        for (k, &y) in b.iter().enumerate() {
            out[i * b.len() + k] += x * y * coef;
        }
    }
}

impl CoupledBasis {
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[CoupledLabel] {
        &self.labels
    }

    /// Ladders in basis order.
    pub fn sectors(&self) -> &[SubspaceLabel] {
        &self.sectors
    }

    /// Columns are the coupled-basis vectors in the computational basis.
    pub fn transform(&self) -> &Array2<C64> {
        &self.transform
    }

    pub fn vector(&self, column: usize) -> StateVector {
        StateVector::new(self.transform.column(column).to_owned()).expect("basis column has 2^N entries")
    }

    /// Column indices of one ladder, ordered by ascending `J_z`.
    pub fn columns_of(&self, sector: &SubspaceLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.j == sector.j && l.history == sector.history)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn column_of(&self, sector: &SubspaceLabel, jz: HalfInt) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l.j == sector.j && l.jz == jz && l.history == sector.history)
    }

    pub fn state(&self, sector: &SubspaceLabel, jz: HalfInt) -> Option<StateVector> {
        self.column_of(sector, jz).map(|c| self.vector(c))
    }

    /// Number of ladders with each total spin, keyed by `2J`.
    pub fn multiplicities(&self) -> BTreeMap<i32, usize> {
        let mut out = BTreeMap::new();
        for s in &self.sectors {
            *out.entry(s.j.doubled()).or_insert(0) += 1;
        }
        out
    }

    /// JSON document with string labels and the row-major transform as
    /// `[re, im]` pairs.
    pub fn to_json(&self) -> serde_json::Value {
        let labels: Vec<String> = self.labels.iter().map(|l| l.to_string()).collect();
        let matrix: Vec<Vec<[f64; 2]>> = self
            .transform
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
            .collect();
        serde_json::json!({
            "n_qubits": self.n_qubits,
            "labels": labels,
            "transform": matrix,
        })
    }
}

/// Orthonormal basis of the dark (`J = 0`) subspace: the many-body singlets.
pub fn dark_basis(n_qubits: usize) -> Result<Vec<StateVector>> {
    if n_qubits % 2 == 1 {
        return Err(Error::NoSingletSector(n_qubits));
    }
    let basis = build_coupled_basis(n_qubits)?;
    Ok(dark_vectors(&basis))
}

pub(crate) fn dark_vectors(basis: &CoupledBasis) -> Vec<StateVector> {
    basis
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.j.doubled() == 0)
        .map(|(i, _)| basis.vector(i))
        .collect()
}

fn basis_index(label: &str) -> usize {
    usize::from_str_radix(&label.replace('g', "0").replace('e', "1"), 2).expect("g/e label")
}

/// Four-qubit dark-state family parametrized by `(α, β, θ, φ)`, normalized.
pub fn singlet_state(alpha: f64, beta: f64, theta: f64, phi: f64) -> Result<StateVector> {
    if alpha == 0.0 && beta == 0.0 {
        return Err(Error::ZeroParameters);
    }
    let a = C64::from_polar(alpha, theta);
    let b = C64::from_polar(beta, phi);
    let mut amps = Array1::<C64>::zeros(16);
    amps[basis_index("ggee")] = a;
    amps[basis_index("gege")] = b;
    amps[basis_index("geeg")] = -(a + b);
    amps[basis_index("egge")] = -(a + b);
    amps[basis_index("egeg")] = b;
    amps[basis_index("eegg")] = a;
    StateVector::new(amps)?.normalized()
}

/// Product of two two-qubit singlets on pairs (1,2) and (3,4).
pub fn bell_pair_singlet() -> StateVector {
    singlet_state(0.0, 0.5, 0.0, 0.0).expect("nonzero parameters")
}

/// The four-qubit singlet orthogonal to [`bell_pair_singlet`]:
/// `(2|ggee⟩ + 2|eegg⟩ − |gege⟩ − |geeg⟩ − |egge⟩ − |egeg⟩)/√12`.
pub fn target_singlet() -> StateVector {
    let mut amps = Array1::<C64>::zeros(16);
    let s = 1.0 / 12f64.sqrt();
    amps[basis_index("ggee")] = C64::new(2.0 * s, 0.0);
    amps[basis_index("eegg")] = C64::new(2.0 * s, 0.0);
    for l in ["gege", "geeg", "egge", "egeg"] {
        amps[basis_index(l)] = C64::new(-s, 0.0);
    }
    StateVector::new(amps).expect("16 amplitudes")
}

/// Threshold below which a block is reported as structurally zero.
pub const ZERO_BLOCK_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Block {
    pub matrix: Array2<C64>,
    pub max_abs: f64,
}

impl Block {
    pub fn is_zero(&self) -> bool {
        self.max_abs < ZERO_BLOCK_TOL
    }
}

/// Blocks of `B† A B` keyed by `(row ladder, column ladder)`.
pub type BlockMap = BTreeMap<(SubspaceLabel, SubspaceLabel), Block>;

pub fn block_decompose(op: &OperatorMatrix, basis: &CoupledBasis) -> Result<BlockMap> {
    crate::hilbert::check_dim(basis.dim(), op.dim())?;
    let rotated = rotate_into(&op.entries().view(), &basis.transform.view());
    let groups: Vec<(SubspaceLabel, Vec<usize>)> =
        basis.sectors.iter().map(|s| (s.clone(), basis.columns_of(s))).collect();
    let mut out = BTreeMap::new();
    for (row_label, rows) in &groups {
        for (col_label, cols) in &groups {
            let matrix = Array2::from_shape_fn((rows.len(), cols.len()), |(r, c)| rotated[[rows[r], cols[c]]]);
            let max_abs = linalg::max_abs(&matrix.view());
            out.insert((row_label.clone(), col_label.clone()), Block { matrix, max_abs });
        }
    }
    Ok(out)
}

fn rotate_into(a: &ArrayView2<C64>, basis: &ArrayView2<C64>) -> Array2<C64> {
    linalg::dagger(basis).dot(a).dot(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{collective, embed_single, pauli, total_spin_squared, Collective};

    fn half(twice: i32) -> HalfInt {
        HalfInt::from_doubled(twice)
    }

    #[test]
    fn single_qubit_basis_is_identity() {
        let b = build_coupled_basis(1).unwrap();
        assert_eq!(b.labels()[0].to_string(), "J=1/2,Jz=-1/2,lam=()");
        assert_eq!(b.labels()[1].to_string(), "J=1/2,Jz=1/2,lam=()");
        assert!(linalg::max_abs(&(b.transform() - linalg::identity(2)).view()) < 1e-15);
    }

    #[test]
    fn two_qubits_give_triplet_and_singlet() {
        let b = build_coupled_basis(2).unwrap();
        assert_eq!(b.multiplicities(), BTreeMap::from([(0, 1), (2, 1)]));
        let singlet = &dark_basis(2).unwrap()[0];
        let want = StateVector::new(
            StateVector::basis("ge").unwrap().amplitudes() - StateVector::basis("eg").unwrap().amplitudes(),
        )
        .unwrap()
        .normalized()
        .unwrap();
        assert!((singlet.inner(&want).unwrap().norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn four_qubit_multiplicities() {
        let b = build_coupled_basis(4).unwrap();
        assert_eq!(b.multiplicities(), BTreeMap::from([(0, 2), (2, 3), (4, 1)]));
        let total: i32 = b.multiplicities().iter().map(|(j2, m)| (j2 + 1) * *m as i32).sum();
        assert_eq!(total, 16);
    }

    #[test]
    fn label_strings_and_determinism() {
        let a = build_coupled_basis(4).unwrap();
        let b = build_coupled_basis(4).unwrap();
        assert_eq!(a.labels(), b.labels());
        let strings: Vec<String> = a.labels().iter().map(|l| l.to_string()).collect();
        assert!(strings.contains(&"J=1,Jz=0,lam=(1,1/2,1)".to_string()));
        assert!(strings.contains(&"J=0,Jz=0,lam=(0,1/2,0)".to_string()));
    }

    #[test]
    fn columns_are_j_squared_and_jz_eigenvectors() {
        for n in 1..=5 {
            let b = build_coupled_basis(n).unwrap();
            let j2 = total_spin_squared(n).unwrap();
            let jz = collective(Collective::Z, n).unwrap().scale(C64::new(0.5, 0.0));
            assert!(linalg::unitarity_deviation(&b.transform().view()) < 1e-10);
            for (i, l) in b.labels().iter().enumerate() {
                let v = b.vector(i);
                let j = l.j.value();
                let a = j2.apply(&v).unwrap();
                let r = StateVector::new(a.amplitudes() - &v.amplitudes().mapv(|z| z * j * (j + 1.0))).unwrap();
                assert!(r.norm() < 1e-8);
                let z = jz.apply(&v).unwrap();
                let r = StateVector::new(z.amplitudes() - &v.amplitudes().mapv(|x| x * l.jz.value())).unwrap();
                assert!(r.norm() < 1e-8);
            }
        }
    }

    #[test]
    fn dark_basis_rejects_odd() {
        assert!(matches!(dark_basis(3), Err(Error::NoSingletSector(3))));
    }

    #[test]
    fn build_rejects_out_of_range() {
        assert!(build_coupled_basis(0).is_err());
        assert!(build_coupled_basis(13).is_err());
    }

    #[test]
    fn named_singlets() {
        let bb = bell_pair_singlet();
        let want = [("gege", 0.5), ("geeg", -0.5), ("egge", -0.5), ("egeg", 0.5)];
        for (l, a) in want {
            assert!((bb.amplitudes()[basis_index(l)] - C64::new(a, 0.0)).norm() < 1e-15);
        }
        let t = target_singlet();
        assert!((t.norm() - 1.0).abs() < 1e-15);
        assert!(bb.inner(&t).unwrap().norm() < 1e-15);
        // both lie in the span of the dark basis
        let dark = dark_basis(4).unwrap();
        for s in [&bb, &t] {
            let weight: f64 = dark.iter().map(|d| d.inner(s).unwrap().norm_sqr()).sum();
            assert!((weight - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn target_is_the_dark_state_orthogonal_to_bell_pair() {
        let dark = dark_basis(4).unwrap();
        let bb = bell_pair_singlet();
        // remove the ψ_BB component from each dark vector; the survivor spans ψ_t
        let mut rest: Vec<StateVector> = dark
            .iter()
            .map(|d| {
                let c = bb.inner(d).unwrap();
                StateVector::new(d.amplitudes() - &bb.amplitudes().mapv(|z| z * c)).unwrap()
            })
            .filter(|v| v.norm() > 1e-6)
            .collect();
        let v = rest.pop().unwrap().normalized().unwrap();
        assert!((v.inner(&target_singlet()).unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singlet_state_rejects_zero() {
        assert!(matches!(singlet_state(0.0, 0.0, 1.0, 2.0), Err(Error::ZeroParameters)));
    }

    #[test]
    fn lowering_never_mixes_ladders() {
        let b = build_coupled_basis(4).unwrap();
        let jm = collective(Collective::Minus, 4).unwrap();
        let blocks = block_decompose(&jm, &b).unwrap();
        for ((r, c), block) in &blocks {
            if r != c {
                assert!(block.is_zero(), "{r} <- {c}");
            }
        }
        let id_blocks = block_decompose(&OperatorMatrix::identity(4), &b).unwrap();
        for ((r, c), block) in &id_blocks {
            assert_eq!(block.is_zero(), r != c);
        }
    }

    #[test]
    fn local_rotation_connects_j2_to_j1() {
        let b = build_coupled_basis(4).unwrap();
        let x1 = embed_single(&pauli::x(), 1, 4).unwrap().scale(C64::new(std::f64::consts::FRAC_PI_4, 0.0));
        let u = OperatorMatrix::new(linalg::expi_hermitian(&x1.entries().view())).unwrap();
        let blocks = block_decompose(&u, &b).unwrap();
        let connects = blocks
            .iter()
            .any(|((r, c), blk)| r.j == half(2) && c.j == half(4) && !blk.is_zero());
        assert!(connects);
    }
}
