//! Unconditioned and conditioned dynamics of the driven, collectively
//! decaying atoms with jump feedback:
//!
//! `dρ/dt = −iΩ[J_+ + J_-, ρ] + Γ D[U J_-]ρ + Σ_j γ_j D[σ_{j,-}]ρ`.

mod master;
mod ode;
mod trajectory;

use ndarray::{Array1, Array2};

pub use master::{
    evolve_master, liouvillian_apply, steady_state, steady_state_kernel, MasterRun, SteadyState, STEADY_TOL,
};
pub use trajectory::{
    ensemble_average, no_jump_evolve, run_trajectory, run_trajectory_with, Channel, EnsembleEstimate, JumpEvent,
    TrajectoryRecord, RNG_ALGORITHM,
};

use crate::error::{Error, Result};
use crate::feedback::FeedbackScheme;
use crate::hilbert::{collective, qubit_mask, Collective, DensityMatrix};
use crate::linalg::{self, C64, I};

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n_qubits: usize,
    /// Drive Rabi frequency `Ω`.
    pub omega: f64,
    /// Collective decay rate `Γ`.
    pub gamma_collective: f64,
    /// Spontaneous emission rate `γ_j` of each atom.
    pub gamma_spont: Vec<f64>,
    pub scheme: FeedbackScheme,
    pub duration: f64,
    /// Local tolerance of the adaptive integrator.
    pub tolerance: f64,
    pub seed: u64,
    /// Number of sampling intervals over `[0, duration]`.
    pub samples: usize,
    /// Cap on the integration time of steady-state searches.
    pub t_max: f64,
}

impl SimConfig {
    /// Defaults: `Ω = Γ = 1`, `γ_j = 10⁻³`, no feedback.
    pub fn new(n_qubits: usize) -> Self {
        SimConfig {
            n_qubits,
            omega: 1.0,
            gamma_collective: 1.0,
            gamma_spont: vec![1e-3; n_qubits],
            scheme: FeedbackScheme::identity(n_qubits),
            duration: 100.0,
            tolerance: 1e-8,
            seed: 42,
            samples: 100,
            t_max: 1e6,
        }
    }

    pub fn with_scheme(mut self, scheme: FeedbackScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_collective_rate(mut self, rate: f64) -> Self {
        self.gamma_collective = rate;
        self
    }

    /// Same spontaneous emission rate on every atom.
    pub fn with_spontaneous_rate(mut self, rate: f64) -> Self {
        self.gamma_spont = vec![rate; self.n_qubits];
        self
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scheme.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch { expected: self.n_qubits, found: self.scheme.n_qubits() });
        }
        if self.gamma_spont.len() != self.n_qubits {
            return Err(Error::InvalidArgument(format!(
                "{} spontaneous rates for {} atoms",
                self.gamma_spont.len(),
                self.n_qubits
            )));
        }
        let rates_ok = [self.omega, self.gamma_collective].iter().chain(&self.gamma_spont).all(|r| r.is_finite() && *r >= 0.0);
        if !rates_ok {
            return Err(Error::InvalidArgument("rates must be finite and non-negative".into()));
        }
        if !(self.duration.is_finite() && self.duration > 0.0 && self.t_max > 0.0) {
            return Err(Error::InvalidArgument("durations must be positive".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn sample_times(&self, duration: f64) -> Vec<f64> {
        let n = self.samples.max(1);
        (0..=n).map(|k| duration * k as f64 / n as f64).collect()
    }

    /// Rate scale used by convergence tests.
    pub(crate) fn rate_scale(&self) -> f64 {
        if self.gamma_collective > 0.0 {
            self.gamma_collective
        } else {
            1.0
        }
    }
}

/// Precomputed pieces of the generator, shared by the master equation and
/// the trajectory unraveling.
#[derive(Clone, Debug)]
pub(crate) struct Generator {
    pub(crate) dim: usize,
    pub(crate) n_qubits: usize,
    /// `G = −iH − ½ Σ c†c`, so the no-jump drift is `dψ/dt = Gψ`.
    pub(crate) drift: Array2<C64>,
    pub(crate) drift_dag: Array2<C64>,
    /// `√Γ · U J_-`
    pub(crate) jump: Array2<C64>,
    pub(crate) jump_dag: Array2<C64>,
    pub(crate) spont: Vec<f64>,
}

impl Generator {
    pub(crate) fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_qubits;
        let jm = collective(Collective::Minus, n)?;
        let jp = collective(Collective::Plus, n)?;
        let h = (jp.entries() + jm.entries()).mapv(|z| z * cfg.omega);
        let jump = cfg.scheme.unitary().entries().dot(jm.entries()).mapv(|z| z * cfg.gamma_collective.sqrt());
        let jump_dag = linalg::dagger(&jump.view());
        let mut loss = jump_dag.dot(&jump);
        let dim = 1usize << n;
        for (j, &rate) in cfg.gamma_spont.iter().enumerate() {
            let mask = qubit_mask(j + 1, n);
            for idx in 0..dim {
                if idx & mask != 0 {
                    loss[[idx, idx]] += C64::new(rate, 0.0);
                }
            }
        }
        let drift = h.mapv(|z| -I * z) - loss.mapv(|z| z * 0.5);
        let drift_dag = linalg::dagger(&drift.view());
        Ok(Generator { dim, n_qubits: n, drift, drift_dag, jump, jump_dag, spont: cfg.gamma_spont.clone() })
    }

    /// `L ρ = Gρ + ρG† + c ρ c† + Σ_j γ_j σ_j ρ σ_j†`
    pub(crate) fn apply(&self, rho: &Array2<C64>) -> Array2<C64> {
        let mut out = self.drift.dot(rho) + rho.dot(&self.drift_dag);
        out += &self.jump.dot(rho).dot(&self.jump_dag);
        for (j, &rate) in self.spont.iter().enumerate() {
            if rate == 0.0 {
                continue;
            }
            let mask = qubit_mask(j + 1, self.n_qubits);
            for a in (0..self.dim).filter(|a| a & mask == 0) {
                for b in (0..self.dim).filter(|b| b & mask == 0) {
                    out[[a, b]] += rho[[a | mask, b | mask]] * rate;
                }
            }
        }
        out
    }

    /// `L ρ` for Hermitian `ρ`, assembled as `X + X†` with
    /// `X = Gρ + ½cρc† + ½Σ_j γ_j σ_j ρ σ_j†`. The result is Hermitian to the
    /// last bit, so integrators that only form real combinations of such
    /// outputs keep `ρ` exactly Hermitian.
    pub(crate) fn apply_hermitian(&self, rho: &Array2<C64>) -> Array2<C64> {
        let mut x = self.drift.dot(rho);
        x.scaled_add(C64::new(0.5, 0.0), &self.jump.dot(rho).dot(&self.jump_dag));
        for (j, &rate) in self.spont.iter().enumerate() {
            if rate == 0.0 {
                continue;
            }
            let mask = qubit_mask(j + 1, self.n_qubits);
            for a in (0..self.dim).filter(|a| a & mask == 0) {
                for b in (0..self.dim).filter(|b| b & mask == 0) {
                    x[[a, b]] += rho[[a | mask, b | mask]] * (0.5 * rate);
                }
            }
        }
        Array2::from_shape_fn((self.dim, self.dim), |(i, j)| x[[i, j]] + x[[j, i]].conj())
    }

    pub(crate) fn apply_flat(&self, rho: &Array1<C64>) -> Array1<C64> {
        let m = rho.view().into_shape_with_order((self.dim, self.dim)).expect("square");
        let out = self.apply_hermitian(&m.to_owned());
        out.into_shape_with_order(self.dim * self.dim).expect("flat")
    }

    /// Matrix of `L` on row-major `vec(ρ)`, where `vec(AρB) = (A ⊗ Bᵀ) vec(ρ)`.
    pub(crate) fn superoperator(&self) -> Array2<C64> {
        let d = self.dim;
        let id = linalg::identity(d);
        let mut l = linalg::kron(&self.drift.view(), &id.view())
            + linalg::kron(&id.view(), &self.drift_dag.t())
            + linalg::kron(&self.jump.view(), &self.jump_dag.t());
        for (j, &rate) in self.spont.iter().enumerate() {
            if rate == 0.0 {
                continue;
            }
            let mask = qubit_mask(j + 1, self.n_qubits);
            for a in (0..d).filter(|a| a & mask == 0) {
                for b in (0..d).filter(|b| b & mask == 0) {
                    l[[a * d + b, (a | mask) * d + (b | mask)]] += C64::new(rate, 0.0);
                }
            }
        }
        l
    }

    pub(crate) fn check_state(&self, rho: &DensityMatrix) -> Result<()> {
        crate::hilbert::check_dim(self.dim, rho.dim())
    }
}
