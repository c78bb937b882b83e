//! Quantum-jump unraveling with feedback-dressed collective jumps.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::ode::{dopri_step, AdaptiveStepper};
use super::{Generator, SimConfig};
use crate::error::{Error, Result};
use crate::hilbert::{qubit_mask, DensityMatrix, OperatorMatrix, StateVector};
use crate::linalg::{self, C64};

/// Recorded in output metadata next to the seeds.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9), seed_from_u64(base_seed + k) for trajectory k";

/// Trajectories are summed in fixed-size chunks so the reduction order, and
/// with it every bit of the ensemble mean, does not depend on the thread count.
const ENSEMBLE_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(into = "String")]
pub enum Channel {
    /// Cavity photon followed by the feedback unitary, `U J_-`.
    Collective,
    /// Spontaneous emission of atom `j` (1-based).
    Spontaneous(usize),
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Collective => write!(f, "collective"),
            Channel::Spontaneous(j) => write!(f, "spont_{j}"),
        }
    }
}

impl From<Channel> for String {
    fn from(c: Channel) -> String {
        c.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub channel: Channel,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub sample_times: Vec<f64>,
    /// Normalized states at `sample_times`.
    pub states: Vec<StateVector>,
    pub jumps: Vec<JumpEvent>,
    /// Time at which the observer asked to stop, if it did.
    pub stopped_at: Option<f64>,
}

impl TrajectoryRecord {
    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }
}

/// Uniform draw from the open interval (0, 1).
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let r: f64 = rng.random();
        if r > 0.0 {
            return r;
        }
    }
}

fn spont_weight(y: &Array1<C64>, mask: usize) -> f64 {
    y.iter().enumerate().filter(|(i, _)| i & mask != 0).map(|(_, z)| z.norm_sqr()).sum()
}

fn spont_jump(y: &Array1<C64>, mask: usize) -> Array1<C64> {
    let mut out = Array1::zeros(y.len());
    for (i, z) in y.iter().enumerate() {
        if i & mask != 0 {
            out[i & !mask] = *z;
        }
    }
    out
}

struct Unraveling<'a> {
    generator: &'a Generator,
    rng: ChaCha8Rng,
}

impl Unraveling<'_> {
    /// Picks a channel with probability proportional to its rate and returns
    /// the post-jump (unnormalized) state.
    fn jump(&mut self, y: &Array1<C64>) -> Option<(Channel, Array1<C64>)> {
        let g = self.generator;
        let collective = g.jump.dot(y);
        let mut rates = vec![(Channel::Collective, linalg::norm_sqr(&collective))];
        for (j, &rate) in g.spont.iter().enumerate() {
            if rate > 0.0 {
                rates.push((Channel::Spontaneous(j + 1), rate * spont_weight(y, qubit_mask(j + 1, g.n_qubits))));
            }
        }
        let total: f64 = rates.iter().map(|(_, r)| r).sum();
        if total.is_nan() || total <= 0.0 {
            return None;
        }
        let mut u = self.rng.random::<f64>() * total;
        let mut pick = rates.iter().rev().find(|(_, r)| *r > 0.0).expect("positive total").0;
        for &(c, r) in &rates {
            if u < r {
                pick = c;
                break;
            }
            u -= r;
        }
        let out = match pick {
            Channel::Collective => collective,
            Channel::Spontaneous(j) => spont_jump(y, qubit_mask(j, g.n_qubits)),
        };
        Some((pick, out))
    }
}

fn check_initial(psi0: &StateVector, generator: &Generator) -> Result<()> {
    crate::hilbert::check_dim(generator.dim, psi0.dim())?;
    let norm = psi0.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(norm));
    }
    Ok(())
}

/// One stochastic trajectory over `[0, duration]`.
pub fn run_trajectory(psi0: &StateVector, duration: f64, seed: u64, cfg: &SimConfig) -> Result<TrajectoryRecord> {
    run_trajectory_with(psi0, duration, seed, cfg, |_, _| true)
}

/// Like [`run_trajectory`], but `observe(t, ψ)` sees the normalized state
/// after every accepted integration step and every jump; returning `false`
/// ends the run there.
///
/// Between jumps `ψ` follows `dψ/dt = Gψ` with
/// `G = −iΩ(J_+ + J_-) − (Γ/2)J_+J_- − Σ_j (γ_j/2)σ_{j,+}σ_{j,-}`. The decaying
/// norm is carried as a separate weight (the equation is linear, so this is
/// the unnormalized evolution in disguise) and a jump fires when it falls to
/// a uniform draw `r`; the jump time is bisected to 1e-10 relative accuracy.
pub fn run_trajectory_with<F>(
    psi0: &StateVector,
    duration: f64,
    seed: u64,
    cfg: &SimConfig,
    mut observe: F,
) -> Result<TrajectoryRecord>
where
    F: FnMut(f64, &StateVector) -> bool,
{
    if duration.is_nan() || duration <= 0.0 {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    let generator = Generator::new(cfg)?;
    check_initial(psi0, &generator)?;
    let drift = |v: &Array1<C64>| generator.drift.dot(v);
    let mut unravel = Unraveling { generator: &generator, rng: ChaCha8Rng::seed_from_u64(seed) };

    let sample_times = cfg.sample_times(duration);
    let mut record = TrajectoryRecord {
        seed,
        sample_times: sample_times.clone(),
        states: vec![psi0.clone()],
        jumps: Vec::new(),
        stopped_at: None,
    };
    let as_state = |y: &Array1<C64>| StateVector::new(y.clone()).expect("power-of-two length");
    if !observe(0.0, psi0) {
        record.stopped_at = Some(0.0);
        record.sample_times.truncate(1);
        return Ok(record);
    }

    let mut y = psi0.amplitudes().clone();
    let mut weight = 1.0;
    let mut threshold = open_unit(&mut unravel.rng);
    let h0 = (sample_times[1] - sample_times[0]).min(1e-2 / cfg.rate_scale());
    let mut stepper = AdaptiveStepper::new(cfg.tolerance, cfg.tolerance * 1e-2, h0);
    let mut t = 0.0;

    for &ts in &sample_times[1..] {
        while t < ts {
            let start = y.clone();
            let h = stepper.advance(&drift, &mut y, t, ts - t)?;
            let n1 = linalg::norm_sqr(&y);
            if weight * n1 > threshold {
                weight *= n1;
                let scale = n1.sqrt();
                y.mapv_inplace(|z| z / scale);
                t = if ts - t - h <= 1e-12 * ts { ts } else { t + h };
                if !observe(t, &as_state(&y)) {
                    record.stopped_at = Some(t);
                    break;
                }
                continue;
            }
            // the jump lies inside this step: bisect on the step length
            let (mut lo, mut hi) = (0.0, h);
            let mut at_jump = y.clone();
            while hi - lo > 1e-10 * (t + hi) {
                let mid = 0.5 * (lo + hi);
                let (ym, _) = dopri_step(&drift, &start, mid);
                if weight * linalg::norm_sqr(&ym) <= threshold {
                    hi = mid;
                    at_jump = ym;
                } else {
                    lo = mid;
                }
            }
            t += hi;
            y = match unravel.jump(&at_jump) {
                Some((channel, post)) => {
                    record.jumps.push(JumpEvent { time: t, channel });
                    post
                }
                None => at_jump,
            };
            let n = linalg::norm_sqr(&y).sqrt();
            y.mapv_inplace(|z| z / n);
            weight = 1.0;
            threshold = open_unit(&mut unravel.rng);
            if !observe(t, &as_state(&y)) {
                record.stopped_at = Some(t);
                break;
            }
        }
        if record.stopped_at.is_some() {
            break;
        }
        record.states.push(as_state(&y));
    }
    if record.stopped_at.is_some() {
        record.sample_times.truncate(record.states.len());
    }
    Ok(record)
}

/// Conditional no-jump evolution: integrates `dψ/dt = Gψ` without
/// renormalizing, so `‖ψ(T)‖²` is the probability of seeing no jump.
pub fn no_jump_evolve(psi0: &StateVector, duration: f64, cfg: &SimConfig) -> Result<StateVector> {
    let generator = Generator::new(cfg)?;
    check_initial(psi0, &generator)?;
    let drift = |v: &Array1<C64>| generator.drift.dot(v);
    let mut y = psi0.amplitudes().clone();
    let mut stepper = AdaptiveStepper::new(cfg.tolerance, cfg.tolerance * 1e-6, 1e-2 / cfg.rate_scale());
    let mut t = 0.0;
    while t < duration {
        let h = stepper.advance(&drift, &mut y, t, duration - t)?;
        t = if duration - t - h <= 1e-12 * duration { duration } else { t + h };
    }
    StateVector::new(y)
}

#[derive(Clone, Debug)]
pub struct EnsembleEstimate {
    pub sample_times: Vec<f64>,
    /// Mean of `|ψ(t)⟩⟨ψ(t)|` over the trajectories.
    pub rho_hat: Vec<DensityMatrix>,
    pub n_trajectories: usize,
    /// `observable_means[k][i]`: mean of `⟨ψ|A_k|ψ⟩` at sample `i`.
    pub observable_means: Vec<Vec<f64>>,
    /// Standard error of each entry of `observable_means`.
    pub observable_std_errors: Vec<Vec<f64>>,
    pub total_jumps: usize,
}

struct Partial {
    rho: Vec<Array2<C64>>,
    sum: Vec<Vec<f64>>,
    sum_sq: Vec<Vec<f64>>,
    jumps: usize,
}

impl Partial {
    fn empty(n_samples: usize, dim: usize, n_obs: usize) -> Self {
        Partial {
            rho: vec![Array2::zeros((dim, dim)); n_samples],
            sum: vec![vec![0.0; n_samples]; n_obs],
            sum_sq: vec![vec![0.0; n_samples]; n_obs],
            jumps: 0,
        }
    }

    fn add_record(&mut self, record: &TrajectoryRecord, observables: &[OperatorMatrix]) {
        for (i, psi) in record.states.iter().enumerate() {
            let a = psi.amplitudes();
            self.rho[i] += &linalg::outer(a, a);
            for (k, op) in observables.iter().enumerate() {
                let x = linalg::inner(a, &op.entries().dot(a)).re;
                self.sum[k][i] += x;
                self.sum_sq[k][i] += x * x;
            }
        }
        self.jumps += record.n_jumps();
    }

    fn merge(&mut self, other: Partial) {
        for (a, b) in self.rho.iter_mut().zip(other.rho) {
            *a += &b;
        }
        for (a, b) in self.sum.iter_mut().zip(other.sum).chain(self.sum_sq.iter_mut().zip(other.sum_sq)) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.jumps += other.jumps;
    }
}

/// Averages `n_traj` trajectories seeded `base_seed + k`. Runs in parallel
/// on the current rayon pool; the result is bitwise independent of the
/// number of threads.
pub fn ensemble_average(
    psi0: &StateVector,
    duration: f64,
    n_traj: usize,
    base_seed: u64,
    cfg: &SimConfig,
    observables: &[OperatorMatrix],
) -> Result<EnsembleEstimate> {
    if n_traj == 0 {
        return Err(Error::InvalidArgument("n_traj must be at least 1".into()));
    }
    let dim = psi0.dim();
    for op in observables {
        crate::hilbert::check_dim(dim, op.dim())?;
    }
    let sample_times = cfg.sample_times(duration);
    let n_samples = sample_times.len();
    let n_chunks = n_traj.div_ceil(ENSEMBLE_CHUNK);
    let partials: Vec<Result<Partial>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Partial::empty(n_samples, dim, observables.len());
            for k in c * ENSEMBLE_CHUNK..((c + 1) * ENSEMBLE_CHUNK).min(n_traj) {
                let record = run_trajectory(psi0, duration, base_seed.wrapping_add(k as u64), cfg)?;
                acc.add_record(&record, observables);
            }
            Ok(acc)
        })
        .collect();
    let mut total = Partial::empty(n_samples, dim, observables.len());
    for p in partials {
        total.merge(p?);
    }

    let n = n_traj as f64;
    let rho_hat = total
        .rho
        .into_iter()
        .map(|r| DensityMatrix::new(r.mapv(|z| z / n)))
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<Vec<f64>> = total.sum.iter().map(|s| s.iter().map(|x| x / n).collect()).collect();
    let std_errors = means
        .iter()
        .zip(&total.sum_sq)
        .map(|(m, sq)| {
            m.iter()
                .zip(sq)
                .map(|(mu, s2)| {
                    if n_traj < 2 {
                        return 0.0;
                    }
                    let var = ((s2 - n * mu * mu) / (n - 1.0)).max(0.0);
                    (var / n).sqrt()
                })
                .collect()
        })
        .collect();
    Ok(EnsembleEstimate {
        sample_times,
        rho_hat,
        n_trajectories: n_traj,
        observable_means: means,
        observable_std_errors: std_errors,
        total_jumps: total.jumps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::{schematic_feedback, Schematic};
    use crate::spin::{build_coupled_basis, target_singlet};

    #[test]
    fn dark_target_never_jumps() {
        let cfg = SimConfig::new(4).with_spontaneous_rate(0.0).with_samples(10);
        let psi = target_singlet();
        let rec = run_trajectory(&psi, 50.0, 7, &cfg).unwrap();
        assert_eq!(rec.n_jumps(), 0);
        for s in &rec.states {
            assert!((s.inner(&psi).unwrap().norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn single_excited_atom_jumps_exactly_once() {
        let cfg = SimConfig::new(1).with_omega(0.0).with_collective_rate(0.0).with_spontaneous_rate(1.0).with_samples(5);
        let rec = run_trajectory(&StateVector::basis("e").unwrap(), 60.0, 3, &cfg).unwrap();
        assert_eq!(rec.n_jumps(), 1);
        assert_eq!(rec.jumps[0].channel, Channel::Spontaneous(1));
        assert_eq!(rec.states.last().unwrap(), &StateVector::basis("g").unwrap());
    }

    #[test]
    fn same_seed_same_record() {
        let cfg = SimConfig::new(2).with_spontaneous_rate(0.05).with_samples(20);
        let psi = StateVector::ground(2);
        let a = run_trajectory(&psi, 20.0, 11, &cfg).unwrap();
        let b = run_trajectory(&psi, 20.0, 11, &cfg).unwrap();
        assert_eq!(a.jumps, b.jumps);
        assert_eq!(a.states, b.states);
        let c = run_trajectory(&psi, 20.0, 12, &cfg).unwrap();
        assert_ne!(a.jumps, c.jumps);
    }

    #[test]
    fn jump_times_increase_and_states_normalized() {
        let cfg = SimConfig::new(3).with_spontaneous_rate(0.1).with_samples(50);
        let rec = run_trajectory(&StateVector::ground(3), 40.0, 5, &cfg).unwrap();
        assert!(rec.n_jumps() > 5);
        assert!(rec.jumps.windows(2).all(|w| w[0].time < w[1].time));
        assert!(rec.states.iter().all(|s| (s.norm() - 1.0).abs() < 1e-8));
    }

    #[test]
    fn observer_can_stop_early() {
        let basis = build_coupled_basis(4).unwrap();
        let target = target_singlet();
        let cfg = SimConfig::new(4).with_scheme(schematic_feedback(Schematic::OneWay, &basis, &target).unwrap());
        let rec = run_trajectory_with(&StateVector::ground(4), 1e4, 1, &cfg, |_, psi| {
            psi.inner(&target).unwrap().norm_sqr() < 0.9
        })
        .unwrap();
        let t = rec.stopped_at.expect("one-way feedback reaches the target");
        assert!(t > 0.0 && t < 1e4);
        assert_eq!(rec.sample_times.len(), rec.states.len());
    }

    #[test]
    fn single_trajectory_ensemble_is_its_projector() {
        let cfg = SimConfig::new(2).with_spontaneous_rate(0.02).with_samples(8);
        let psi = StateVector::ground(2);
        let est = ensemble_average(&psi, 10.0, 1, 99, &cfg, &[]).unwrap();
        let rec = run_trajectory(&psi, 10.0, 99, &cfg).unwrap();
        for (rho, s) in est.rho_hat.iter().zip(&rec.states) {
            assert_eq!(rho.entries(), s.projector().entries());
        }
    }

    #[test]
    fn no_jump_norm_decay_of_fully_excited_pair() {
        // |ee⟩ has ⟨J_+J_-⟩ = 2, so with Ω = γ = 0 its norm² decays as e^{-2Γt}
        let cfg = SimConfig::new(2).with_omega(0.0).with_spontaneous_rate(0.0);
        let psi = no_jump_evolve(&StateVector::basis("ee").unwrap(), 1.5, &cfg).unwrap();
        assert!((psi.norm().powi(2) - (-3.0f64).exp()).abs() < 1e-9);
    }
}
