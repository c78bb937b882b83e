//! Master-equation integration and steady states.

use ndarray::{Array1, Array2};

use super::ode::AdaptiveStepper;
use super::{Generator, SimConfig};
use crate::error::{Error, Result};
use crate::hilbert::DensityMatrix;
use crate::linalg::{self, C64};

/// Trace drift tolerated before the integrated state is renormalized.
const TRACE_DRIFT: f64 = 1e-12;
/// Steady state is declared once `max |dρ/dt| < STEADY_TOL · Γ`.
pub const STEADY_TOL: f64 = 1e-10;
/// Largest register for which the superoperator is built explicitly.
const DENSE_SUPEROP_MAX_QUBITS: usize = 5;

/// `dρ/dt` of the feedback master equation.
pub fn liouvillian_apply(rho: &DensityMatrix, cfg: &SimConfig) -> Result<Array2<C64>> {
    let generator = Generator::new(cfg)?;
    generator.check_state(rho)?;
    Ok(generator.apply(rho.entries()))
}

#[derive(Clone, Debug)]
pub struct MasterRun {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Largest `|tr ρ − 1|` seen before renormalization.
    pub max_trace_drift: f64,
    /// Largest `max |ρ − ρ†|` over accepted steps.
    pub max_hermitian_deviation: f64,
    pub steps: usize,
}

impl MasterRun {
    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("at least the initial sample")
    }
}

fn to_flat(rho: &Array2<C64>) -> Array1<C64> {
    let n = rho.len();
    rho.to_owned().into_shape_with_order(n).expect("contiguous")
}

fn to_square(v: &Array1<C64>, dim: usize) -> Array2<C64> {
    v.to_owned().into_shape_with_order((dim, dim)).expect("square")
}

/// Hermitian part, rescaled to unit trace.
fn tidy(rho: Array2<C64>) -> Array2<C64> {
    let herm = (&rho + &linalg::dagger(&rho.view())).mapv(|z| z * 0.5);
    let tr = linalg::trace(&herm.view()).re;
    herm.mapv(|z| z / tr)
}

struct Integrator<'a> {
    generator: &'a Generator,
    stepper: AdaptiveStepper,
    y: Array1<C64>,
    t: f64,
    max_trace_drift: f64,
    max_hermitian_deviation: f64,
    steps: usize,
}

impl<'a> Integrator<'a> {
    fn new(generator: &'a Generator, rho0: &Array2<C64>, cfg: &SimConfig, h0: f64) -> Self {
        Integrator {
            generator,
            stepper: AdaptiveStepper::new(cfg.tolerance, cfg.tolerance * 1e-2, h0),
            y: to_flat(rho0),
            t: 0.0,
            max_trace_drift: 0.0,
            max_hermitian_deviation: 0.0,
            steps: 0,
        }
    }

    fn advance_to(&mut self, t_end: f64) -> Result<()> {
        let f = |v: &Array1<C64>| self.generator.apply_flat(v);
        while self.t < t_end {
            let h = self.stepper.advance(&f, &mut self.y, self.t, t_end - self.t)?;
            self.t = if t_end - self.t - h <= 1e-12 * t_end.abs() { t_end } else { self.t + h };
            self.steps += 1;
            let d = self.generator.dim;
            let tr: C64 = (0..d).map(|i| self.y[i * d + i]).sum();
            let drift = (tr - 1.0).norm();
            self.max_trace_drift = self.max_trace_drift.max(drift);
            if drift > TRACE_DRIFT {
                self.y.mapv_inplace(|z| z / tr);
            }
            let sq = self.y.view().into_shape_with_order((d, d)).expect("square");
            self.max_hermitian_deviation = self.max_hermitian_deviation.max(linalg::hermitian_deviation(&sq));
        }
        Ok(())
    }

    fn state(&self) -> Array2<C64> {
        to_square(&self.y, self.generator.dim)
    }
}

/// Integrates the master equation from `rho0` over `[0, duration]`, keeping
/// `cfg.samples + 1` equally spaced snapshots.
pub fn evolve_master(rho0: &DensityMatrix, duration: f64, cfg: &SimConfig) -> Result<MasterRun> {
    if duration.is_nan() || duration <= 0.0 {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    rho0.check_physical()?;
    let generator = Generator::new(cfg)?;
    generator.check_state(rho0)?;
    let times = cfg.sample_times(duration);
    let h0 = (times[1] - times[0]).min(1e-2 / cfg.rate_scale());
    let mut integ = Integrator::new(&generator, rho0.entries(), cfg, h0);
    let mut states = vec![rho0.clone()];
    for &t in &times[1..] {
        integ.advance_to(t)?;
        states.push(DensityMatrix::new(integ.state())?);
    }
    Ok(MasterRun {
        times,
        states,
        max_trace_drift: integ.max_trace_drift,
        max_hermitian_deviation: integ.max_hermitian_deviation,
        steps: integ.steps,
    })
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub state: DensityMatrix,
    pub converged: bool,
    /// `max |dρ/dt|` at the returned state.
    pub residual: f64,
    /// Evolution time covered.
    pub elapsed: f64,
}

/// Long-time limit of the master equation started from `rho0`.
///
/// Small registers use the exact propagator `exp(Lτ)` with repeated
/// squaring, so the covered time doubles per iteration; larger ones fall
/// back to the adaptive integrator in geometrically growing chunks. Either
/// way the search stops once `max |dρ/dt| < 1e-10·Γ` or `cfg.t_max` is
/// covered, and `converged` says which.
pub fn steady_state(cfg: &SimConfig, rho0: &DensityMatrix) -> Result<SteadyState> {
    rho0.check_physical()?;
    let generator = Generator::new(cfg)?;
    generator.check_state(rho0)?;
    let threshold = STEADY_TOL * cfg.rate_scale();
    let residual_of = |rho: &Array2<C64>| linalg::max_abs(&generator.apply(rho).view());

    let rho = tidy(rho0.entries().clone());
    let r0 = residual_of(&rho);
    if r0 < threshold {
        return Ok(SteadyState { state: DensityMatrix::new(rho)?, converged: true, residual: r0, elapsed: 0.0 });
    }
    if cfg.n_qubits <= DENSE_SUPEROP_MAX_QUBITS {
        doubling(&generator, cfg, rho0.entries(), threshold)
    } else {
        chunked(&generator, cfg, rho0.entries(), threshold)
    }
}

fn doubling(generator: &Generator, cfg: &SimConfig, rho0: &Array2<C64>, threshold: f64) -> Result<SteadyState> {
    let d = generator.dim;
    let superop = generator.superoperator();
    let mut tau = 1.0 / cfg.rate_scale();
    let mut prop = linalg::expm(&superop.mapv(|z| z * tau).view());
    let v0 = to_flat(rho0);
    // row-major vec(I): the trace functional every propagator must preserve
    let unit = Array1::from_shape_fn(d * d, |k| if k / d == k % d { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    loop {
        let rho = tidy(to_square(&prop.dot(&v0), d));
        let residual = linalg::max_abs(&generator.apply(&rho).view());
        if residual < threshold || tau >= cfg.t_max {
            return Ok(SteadyState {
                state: DensityMatrix::new(rho)?,
                converged: residual < threshold,
                residual,
                elapsed: tau,
            });
        }
        prop = prop.dot(&prop);
        tau *= 2.0;
        // pin tr(P ρ) = tr ρ, otherwise round-off in the stationary mode
        // doubles with every squaring
        let defect = &unit - &unit.dot(&prop);
        let fix = linalg::outer(&unit.mapv(|z| z / d as f64), &defect.mapv(|z| z.conj()));
        prop += &fix;
    }
}

fn chunked(generator: &Generator, cfg: &SimConfig, rho0: &Array2<C64>, threshold: f64) -> Result<SteadyState> {
    let mut chunk = 1.0 / cfg.rate_scale();
    let mut integ = Integrator::new(generator, rho0, cfg, 1e-2 * chunk);
    loop {
        let target = (integ.t + chunk).min(cfg.t_max);
        integ.advance_to(target)?;
        let rho = tidy(integ.state());
        let residual = linalg::max_abs(&generator.apply(&rho).view());
        if residual < threshold || integ.t >= cfg.t_max {
            return Ok(SteadyState {
                state: DensityMatrix::new(rho)?,
                converged: residual < threshold,
                residual,
                elapsed: integ.t,
            });
        }
        chunk *= 2.0;
    }
}

/// The steady state read off directly from the null space of the Liouvillian
/// superoperator. Only defined when the kernel is one-dimensional, i.e. the
/// steady state is unique; otherwise the kernel dimension is reported as an
/// error.
pub fn steady_state_kernel(cfg: &SimConfig) -> Result<DensityMatrix> {
    if cfg.n_qubits > DENSE_SUPEROP_MAX_QUBITS {
        return Err(Error::UnsupportedQubitCount {
            n_qubits: cfg.n_qubits,
            reason: "superoperator null space is only built for up to 5 qubits",
        });
    }
    let generator = Generator::new(cfg)?;
    let d = generator.dim;
    let kernel = linalg::null_space(&generator.superoperator().view(), 1e-10);
    if kernel.ncols() != 1 {
        return Err(Error::InvalidArgument(format!(
            "Liouvillian kernel has dimension {}, steady state is not unique",
            kernel.ncols()
        )));
    }
    let v = kernel.column(0).to_owned();
    DensityMatrix::new(tidy(to_square(&v, d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::epsilon_pair_feedback;
    use crate::hilbert::{collective, dissipator, Collective, StateVector};
    use crate::spin::{bell_pair_singlet, target_singlet};
    use std::f64::consts::FRAC_PI_2;

    fn single_atom(omega: f64, gamma: f64) -> SimConfig {
        SimConfig::new(1).with_omega(omega).with_collective_rate(0.0).with_spontaneous_rate(gamma)
    }

    #[test]
    fn single_atom_decay_generator() {
        let cfg = single_atom(0.0, 1.0);
        let rho = StateVector::basis("e").unwrap().projector();
        let out = liouvillian_apply(&rho, &cfg).unwrap();
        assert!((out[[0, 0]].re - 1.0).abs() < 1e-14);
        assert!((out[[1, 1]].re + 1.0).abs() < 1e-14);
        assert!(out[[0, 1]].norm() < 1e-14);
    }

    #[test]
    fn dark_target_does_not_evolve() {
        let cfg = SimConfig::new(4).with_spontaneous_rate(0.0).with_scheme(epsilon_pair_feedback(1.3, 0.2).unwrap());
        let out = liouvillian_apply(&target_singlet().projector(), &cfg).unwrap();
        assert!(linalg::max_abs(&out.view()) < 1e-12);
    }

    #[test]
    fn generator_matches_explicit_dissipators() {
        let cfg = SimConfig::new(3).with_omega(0.7).with_scheme(crate::feedback::local_drive_feedback(&[0.3, -1.1, 0.5]).unwrap());
        let cfg = SimConfig { gamma_spont: vec![0.1, 0.2, 0.05], ..cfg };
        let psi = StateVector::new(Array1::from_shape_fn(8, |k| C64::new(k as f64 - 2.5, (k * k) as f64 * 0.1)))
            .unwrap()
            .normalized()
            .unwrap();
        let rho = psi.projector();
        let jm = collective(Collective::Minus, 3).unwrap();
        let jp = collective(Collective::Plus, 3).unwrap();
        let h = jp.add(&jm).unwrap().entries().mapv(|z| z * 0.7);
        let mut want = (h.dot(rho.entries()) - rho.entries().dot(&h)).mapv(|z| z * C64::new(0.0, -1.0));
        let c = cfg.scheme.unitary().matmul(&jm).unwrap();
        want += &dissipator(&c, &rho).unwrap();
        for (j, &g) in cfg.gamma_spont.iter().enumerate() {
            let s = crate::hilbert::embed_single(&crate::hilbert::pauli::lowering(), j + 1, 3).unwrap();
            want += &dissipator(&s, &rho).unwrap().mapv(|z| z * g);
        }
        let got = liouvillian_apply(&rho, &cfg).unwrap();
        assert!(linalg::max_abs(&(got - &want).view()) < 1e-12);

        let generator = Generator::new(&cfg).unwrap();
        let hermitian = generator.apply_hermitian(rho.entries());
        assert!(linalg::max_abs(&(&hermitian - &want).view()) < 1e-12);
        assert_eq!(linalg::hermitian_deviation(&hermitian.view()), 0.0);
        let via_super = to_square(&generator.superoperator().dot(&to_flat(rho.entries())), 8);
        assert!(linalg::max_abs(&(via_super - want).view()) < 1e-12);
    }

    #[test]
    fn rabi_decay_matches_closed_form_population() {
        // single driven atom, no decay: P_e = sin²(Ωt) with H = Ω σ_x
        let cfg = single_atom(0.8, 0.0).with_samples(20);
        let rho0 = StateVector::basis("g").unwrap().projector();
        let run = evolve_master(&rho0, 3.0, &cfg).unwrap();
        for (t, rho) in run.times.iter().zip(&run.states) {
            assert!((rho.entries()[[1, 1]].re - (0.8 * t).sin().powi(2)).abs() < 1e-7);
        }
        assert!(run.max_hermitian_deviation < 1e-10);
    }

    #[test]
    fn dark_initial_state_is_stationary() {
        let cfg = SimConfig::new(4).with_spontaneous_rate(0.0).with_samples(4);
        let rho0 = bell_pair_singlet().projector();
        let run = evolve_master(&rho0, 20.0, &cfg).unwrap();
        assert!(run.final_state().trace_distance(&rho0).unwrap() < 1e-8);
        let ss = steady_state(&cfg, &rho0).unwrap();
        assert!(ss.converged);
        assert!(ss.state.trace_distance(&rho0).unwrap() < 1e-8);
    }

    #[test]
    fn driven_damped_atom_steady_state() {
        // H = Ωσ_x, decay γ: P_e = 4Ω²/(γ² + 8Ω²)
        let (omega, gamma) = (0.6, 1.0);
        let cfg = single_atom(omega, gamma);
        let ss = steady_state(&cfg, &StateVector::basis("g").unwrap().projector()).unwrap();
        assert!(ss.converged);
        let want = 4.0 * omega * omega / (gamma * gamma + 8.0 * omega * omega);
        assert!((ss.state.entries()[[1, 1]].re - want).abs() < 1e-9);
        let kernel = steady_state_kernel(&cfg).unwrap();
        assert!(kernel.trace_distance(&ss.state).unwrap() < 1e-9);
    }

    #[test]
    fn kernel_reports_degenerate_steady_states() {
        let cfg = SimConfig::new(2).with_spontaneous_rate(0.0);
        assert!(steady_state_kernel(&cfg).is_err());
    }

    #[test]
    fn doubling_agrees_with_kernel_for_feedback_with_loss() {
        let cfg = SimConfig::new(4).with_scheme(epsilon_pair_feedback(FRAC_PI_2, 0.1).unwrap());
        let ss = steady_state(&cfg, &StateVector::ground(4).projector()).unwrap();
        assert!(ss.converged, "residual {}", ss.residual);
        let kernel = steady_state_kernel(&cfg).unwrap();
        assert!(ss.state.trace_distance(&kernel).unwrap() < 1e-6);
        ss.state.check_physical().unwrap();
    }

    #[test]
    fn rejects_mismatched_state() {
        let cfg = SimConfig::new(2);
        let rho = DensityMatrix::maximally_mixed(3);
        assert!(matches!(liouvillian_apply(&rho, &cfg), Err(Error::DimensionMismatch { .. })));
    }
}
