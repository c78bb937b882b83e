//! Entanglement and fidelity diagnostics: the `C_N` concurrence of pure
//! states, its range over the dark subspace, reference states and overlaps.

use std::fmt;
use std::str::FromStr;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{check_dim, DensityMatrix, StateVector, MAX_QUBITS};
use crate::linalg::{self, C64};
use crate::spin::dark_basis;

/// `tr ρ_α²` for the reduction of `psi` onto the qubits whose basis-index
/// bits are set in `subset`.
pub fn reduced_purity(psi: &StateVector, subset: usize) -> f64 {
    let a = psi.amplitudes();
    let dim = a.len();
    let keep: Vec<usize> = (0..usize::BITS as usize).map(|b| 1 << b).filter(|m| m & subset != 0 && *m < dim).collect();
    let rest: Vec<usize> = (0..usize::BITS as usize).map(|b| 1 << b).filter(|m| m & subset == 0 && *m < dim).collect();
    let spread = |bits: &[usize], k: usize| -> usize {
        bits.iter().enumerate().filter(|(i, _)| k >> i & 1 == 1).map(|(_, m)| m).sum()
    };
    let (dk, dr) = (1usize << keep.len(), 1usize << rest.len());
    let keep_idx: Vec<usize> = (0..dk).map(|k| spread(&keep, k)).collect();
    let rest_idx: Vec<usize> = (0..dr).map(|k| spread(&rest, k)).collect();
    // ρ_α = M M† with M[k, r] = ψ[k ⊕ r]; tr ρ_α² = ‖M M†‖_F²
    let mut purity = 0.0;
    for i in 0..dk {
        for j in i..dk {
            let x: C64 = rest_idx.iter().map(|&r| a[keep_idx[i] | r] * a[keep_idx[j] | r].conj()).sum();
            purity += if i == j { x.norm_sqr() } else { 2.0 * x.norm_sqr() };
        }
    }
    purity
}

/// Largest value `C_N` can take on `n_qubits` qubits, `2^{1−N/2}√(2^N − 2)`.
pub fn cn_cap(n_qubits: usize) -> f64 {
    2f64.powf(1.0 - n_qubits as f64 / 2.0) * ((1u64 << n_qubits) as f64 - 2.0).sqrt()
}

/// Pure-state `C_N` concurrence,
/// `2^{1−N/2} √((2^N − 2)⟨ψ|ψ⟩² − Σ_α tr ρ_α²)` with the sum over all proper
/// nonempty subsets of qubits.
pub fn cn_concurrence(psi: &StateVector) -> Result<f64> {
    let n = psi.n_qubits();
    if n < 2 {
        return Err(Error::UnsupportedQubitCount { n_qubits: n, reason: "C_N needs at least two qubits" });
    }
    let norm2 = psi.norm().powi(2);
    let full = (1usize << n) - 1;
    // complementary reductions share their purity, so take the subsets
    // containing the most significant qubit and double
    let top = 1usize << (n - 1);
    let sum: f64 = (0..top).map(|low| top | low).filter(|&s| s != full).map(|s| 2.0 * reduced_purity(psi, s)).sum();
    let n_subsets = (full - 1) as f64;
    let inside = (n_subsets * norm2 * norm2 - sum).max(0.0);
    Ok(2f64.powf(1.0 - n as f64 / 2.0) * inside.sqrt())
}

#[derive(Clone, Debug)]
pub struct ConcurrenceRange {
    pub n_qubits: usize,
    pub minimum: f64,
    pub maximum: f64,
    pub argmin: StateVector,
    pub argmax: StateVector,
    /// Converged value of every minimization, in restart order.
    pub local_minima: Vec<f64>,
    /// Converged value of every maximization, in restart order.
    pub local_maxima: Vec<f64>,
    pub restarts: usize,
    pub seed: u64,
}

/// `C_N` (or `−C_N`) as a function of real coordinates on the dark subspace.
struct DarkObjective<'a> {
    basis: &'a [StateVector],
    sign: f64,
}

impl DarkObjective<'_> {
    fn state(&self, x: &[f64]) -> StateVector {
        let mut amps: Array1<C64> = Array1::zeros(self.basis[0].dim());
        for (k, v) in self.basis.iter().enumerate() {
            amps.scaled_add(C64::new(x[2 * k], x[2 * k + 1]), v.amplitudes());
        }
        let norm = linalg::norm_sqr(&amps).sqrt();
        StateVector::new(amps.mapv(|z| z / norm)).expect("power-of-two length")
    }
}

impl CostFunction for DarkObjective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        if x.iter().all(|v| *v == 0.0) {
            return Ok(f64::INFINITY);
        }
        Ok(self.sign * cn_concurrence(&self.state(x))?)
    }
}

/// Objective value and the coordinates where it was reached.
type Optimum = (f64, Vec<f64>);

fn nelder_mead(objective: &DarkObjective, start: Vec<f64>) -> Result<Optimum> {
    let mut best = start;
    let mut best_cost = f64::INFINITY;
    // a couple of fresh simplices around the last optimum guard against
    // premature collapse
    for scale in [0.5, 0.05, 0.005] {
        let mut simplex = vec![best.clone()];
        for i in 0..best.len() {
            let mut p = best.clone();
            p[i] += scale;
            simplex.push(p);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-13)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let problem = DarkObjective { basis: objective.basis, sign: objective.sign };
        let res = Executor::new(problem, solver)
            .configure(|s| s.max_iters(20_000))
            .run()
            .map_err(|e| Error::InvalidArgument(format!("optimizer failed: {e}")))?;
        let state = res.state();
        if state.get_best_cost() <= best_cost {
            best_cost = state.get_best_cost();
            best = state.get_best_param().cloned().unwrap_or(best);
        }
    }
    Ok((best_cost, best))
}

/// Range of `C_N` over normalized states of the dark (singlet) subspace,
/// by multi-start Nelder–Mead on the dark-subspace coefficients. Restart
/// `r` starts from a point drawn with seed `seed + r`; restarts run in
/// parallel and the result does not depend on the thread count.
pub fn dark_concurrence_range(n_qubits: usize, restarts: usize, seed: u64) -> Result<ConcurrenceRange> {
    if !matches!(n_qubits, 2 | 4 | 6 | 8) {
        return Err(Error::UnsupportedQubitCount { n_qubits, reason: "dark concurrence range is defined for N = 2, 4, 6, 8" });
    }
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let basis = dark_basis(n_qubits)?;
    let n_params = 2 * basis.len();
    let runs: Vec<Result<(Optimum, Optimum)>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            let start: Vec<f64> = (0..n_params).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lo = nelder_mead(&DarkObjective { basis: &basis, sign: 1.0 }, start.clone())?;
            let (neg_hi, x_hi) = nelder_mead(&DarkObjective { basis: &basis, sign: -1.0 }, start)?;
            Ok((lo, (-neg_hi, x_hi)))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let view = DarkObjective { basis: &basis, sign: 1.0 };
    let (min_run, _) = runs.iter().enumerate().min_by(|a, b| a.1 .0 .0.total_cmp(&b.1 .0 .0)).expect("restarts ≥ 1");
    let (max_run, _) = runs.iter().enumerate().max_by(|a, b| a.1 .1 .0.total_cmp(&b.1 .1 .0)).expect("restarts ≥ 1");
    Ok(ConcurrenceRange {
        n_qubits,
        minimum: runs[min_run].0 .0,
        maximum: runs[max_run].1 .0,
        argmin: view.state(&runs[min_run].0 .1),
        argmax: view.state(&runs[max_run].1 .1),
        local_minima: runs.iter().map(|r| r.0 .0).collect(),
        local_maxima: runs.iter().map(|r| r.1 .0).collect(),
        restarts,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Ghz,
    W,
    LinearCluster,
}

impl fmt::Display for ReferenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceKind::Ghz => "ghz",
            ReferenceKind::W => "w",
            ReferenceKind::LinearCluster => "linear_cluster",
        })
    }
}

impl FromStr for ReferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ghz" => Ok(ReferenceKind::Ghz),
            "w" => Ok(ReferenceKind::W),
            "linear_cluster" => Ok(ReferenceKind::LinearCluster),
            other => Err(Error::InvalidArgument(format!("unknown reference state '{other}'"))),
        }
    }
}

/// GHZ `(|g…g⟩ + |e…e⟩)/√2`, W (one excitation shared evenly), or the linear
/// cluster state: controlled-phase gates between neighbours on `|+⟩^{⊗N}`.
pub fn reference_state(kind: ReferenceKind, n_qubits: usize) -> Result<StateVector> {
    if !(2..=MAX_QUBITS).contains(&n_qubits) {
        return Err(Error::UnsupportedQubitCount { n_qubits, reason: "reference states need 2 to 12 qubits" });
    }
    let dim = 1usize << n_qubits;
    let amps = match kind {
        ReferenceKind::Ghz => {
            let mut a = Array1::zeros(dim);
            a[0] = C64::new(0.5f64.sqrt(), 0.0);
            a[dim - 1] = a[0];
            a
        }
        ReferenceKind::W => {
            let x = C64::new(1.0 / (n_qubits as f64).sqrt(), 0.0);
            Array1::from_shape_fn(dim, |i| if i.count_ones() == 1 { x } else { C64::new(0.0, 0.0) })
        }
        ReferenceKind::LinearCluster => {
            let x = 1.0 / (dim as f64).sqrt();
            Array1::from_shape_fn(dim, |i| {
                // one phase flip per neighbouring pair of excited qubits
                let pairs = (i & (i >> 1)).count_ones();
                C64::new(if pairs % 2 == 0 { x } else { -x }, 0.0)
            })
        }
    };
    StateVector::new(amps)
}

/// Things whose overlap with a pure target can be measured.
pub trait Overlap {
    fn overlap_with(&self, target: &StateVector) -> Result<f64>;
}

impl Overlap for StateVector {
    fn overlap_with(&self, target: &StateVector) -> Result<f64> {
        Ok(self.inner(target)?.norm_sqr())
    }
}

impl Overlap for DensityMatrix {
    fn overlap_with(&self, target: &StateVector) -> Result<f64> {
        check_dim(self.dim(), target.dim())?;
        let t = target.amplitudes();
        // round-off in long-time solutions can nudge this a hair outside [0, 1]
        Ok(linalg::inner(t, &self.entries().dot(t)).re.clamp(0.0, 1.0))
    }
}

/// `⟨t|ρ|t⟩` or `|⟨t|ψ⟩|²` for a normalized target.
pub fn overlap<S: Overlap>(state: &S, target: &StateVector) -> Result<f64> {
    let norm = target.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized(norm));
    }
    state.overlap_with(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{bell_pair_singlet, target_singlet};

    #[test]
    fn product_states_have_zero_concurrence() {
        for label in ["gg", "ge", "eeg", "gege"] {
            assert!(cn_concurrence(&StateVector::basis(label).unwrap()).unwrap() < 1e-12);
        }
        let plus = reference_state(ReferenceKind::LinearCluster, 1);
        assert!(plus.is_err());
    }

    #[test]
    fn bell_and_ghz_values() {
        let bell = reference_state(ReferenceKind::Ghz, 2).unwrap();
        assert!((cn_concurrence(&bell).unwrap() - 1.0).abs() < 1e-12);
        let ghz4 = reference_state(ReferenceKind::Ghz, 4).unwrap();
        assert!((cn_concurrence(&ghz4).unwrap() - 7f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn w4_matches_brute_force_purities() {
        // one-qubit reductions: diag(3/4, 1/4) → purity 5/8; two-qubit: 1/2 of
        // weight on |gg⟩, 1/2 spread over a Bell-like pair → purity 1/4 + 1/4 = 1/2
        let w = reference_state(ReferenceKind::W, 4).unwrap();
        let want = 0.5 * (14.0 - (8.0 * 0.625 + 6.0 * 0.5f64)).sqrt();
        assert!((cn_concurrence(&w).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn cluster_state_is_normalized_and_entangled() {
        let c = reference_state(ReferenceKind::LinearCluster, 4).unwrap();
        assert!((c.norm() - 1.0).abs() < 1e-14);
        // every single qubit of a cluster state is maximally mixed
        for j in 0..4 {
            assert!((reduced_purity(&c, 1 << j) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn complementary_reductions_share_purity() {
        let psi = target_singlet();
        for s in 1..15usize {
            assert!((reduced_purity(&psi, s) - reduced_purity(&psi, 15 ^ s)).abs() < 1e-12);
        }
    }

    #[test]
    fn named_singlets_lie_in_the_dark_range() {
        let (lo, hi) = (7f64.sqrt() / 2.0, 2f64.sqrt());
        for psi in [bell_pair_singlet(), target_singlet()] {
            let c = cn_concurrence(&psi).unwrap();
            assert!(c >= lo - 1e-9 && c <= hi + 1e-9, "{c}");
        }
    }

    #[test]
    fn two_qubit_dark_range_is_a_point() {
        let r = dark_concurrence_range(2, 3, 0).unwrap();
        assert!((r.minimum - 1.0).abs() < 1e-9 && (r.maximum - 1.0).abs() < 1e-9);
        assert!(matches!(dark_concurrence_range(3, 3, 0), Err(Error::UnsupportedQubitCount { .. })));
    }

    #[test]
    fn overlaps() {
        let t = target_singlet();
        assert!((overlap(&t, &t).unwrap() - 1.0).abs() < 1e-14);
        assert!(overlap(&bell_pair_singlet(), &t).unwrap() < 1e-14);
        assert!(overlap(&StateVector::ground(4), &t).unwrap() < 1e-14);
        assert!((overlap(&t.projector(), &t).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(overlap(&t, &t.scaled(C64::new(2.0, 0.0))), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn cap_bounds_ghz() {
        for n in 2..7 {
            let c = cn_concurrence(&reference_state(ReferenceKind::Ghz, n).unwrap()).unwrap();
            assert!(c <= cn_cap(n) + 1e-12);
        }
    }
}
