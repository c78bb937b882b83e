//! Cross-module checks of the master equation and trajectory unraveling.

use std::f64::consts::FRAC_PI_2;

use jumpfeedback::dynamics::{
    ensemble_average, evolve_master, no_jump_evolve, run_trajectory, steady_state, SimConfig,
};
use jumpfeedback::feedback::{epsilon_pair_feedback, schematic_feedback, Schematic};
use jumpfeedback::hilbert::{collective, expectation, Collective, OperatorMatrix, StateVector};
use jumpfeedback::measures::{cn_concurrence, overlap};
use jumpfeedback::spin::{bell_pair_singlet, build_coupled_basis, dark_basis, target_singlet};

#[test]
fn no_jump_norm_decays_at_ladder_rate() {
    // Ω = γ = 0: ‖ψ(t)‖² = exp(−Γ (J+J_z)(J−J_z+1) t) for every coupled vector
    let basis = build_coupled_basis(4).unwrap();
    let cfg = SimConfig::new(4).with_omega(0.0).with_spontaneous_rate(0.0).with_tolerance(1e-10);
    for (col, label) in basis.labels().iter().enumerate() {
        let (j, m) = (label.j.value(), label.jz.value());
        let rate = (j + m) * (j - m + 1.0);
        if rate == 0.0 {
            continue;
        }
        // fit the log-norm over one decade of decay
        let t1 = 10f64.ln() / rate;
        let n0 = no_jump_evolve(&basis.vector(col), 0.1 * t1, &cfg).unwrap().norm().powi(2).ln();
        let n1 = no_jump_evolve(&basis.vector(col), 1.1 * t1, &cfg).unwrap().norm().powi(2).ln();
        let fitted = -(n1 - n0) / t1;
        assert!((fitted / rate - 1.0).abs() < 0.01, "{label}: {fitted} vs {rate}");
    }
}

#[test]
fn lowest_weight_states_have_no_collective_rate() {
    let basis = build_coupled_basis(4).unwrap();
    let jpjm = collective(Collective::Plus, 4).unwrap().matmul(&collective(Collective::Minus, 4).unwrap()).unwrap();
    for (col, label) in basis.labels().iter().enumerate() {
        if label.jz.doubled() == -label.j.doubled() {
            assert!(expectation(&jpjm, &basis.vector(col)).unwrap().norm() < 1e-12, "{label}");
        }
    }
}

#[test]
fn strong_loss_without_protection_keeps_overlap_low() {
    let cfg = SimConfig::new(4).with_scheme(epsilon_pair_feedback(FRAC_PI_2, 0.0).unwrap()).with_samples(4);
    let run = evolve_master(&StateVector::ground(4).projector(), 1e4, &cfg).unwrap();
    let ov = overlap(run.final_state(), &target_singlet()).unwrap();
    assert!(ov < 0.80, "{ov}");
    let cfg = SimConfig::new(4).with_scheme(epsilon_pair_feedback(FRAC_PI_2, 0.1).unwrap()).with_samples(4);
    let run = evolve_master(&StateVector::ground(4).projector(), 1e4, &cfg).unwrap();
    let ov = overlap(run.final_state(), &target_singlet()).unwrap();
    assert!(ov >= 0.90, "{ov}");
}

#[test]
fn identity_feedback_steady_states() {
    let cfg = SimConfig::new(4).with_spontaneous_rate(0.0);
    let bb = bell_pair_singlet().projector();
    let ss = steady_state(&cfg, &bb).unwrap();
    assert!(ss.converged);
    assert!(ss.state.trace_distance(&bb).unwrap() < 1e-8);

    let ss = steady_state(&cfg, &StateVector::ground(4).projector()).unwrap();
    assert!(ss.converged);
    assert!(ss.state.purity() < 1.0 - 1e-3, "purity {}", ss.state.purity());
    // mixed-state entanglement is out of scope; the dark-range lower edge is
    // still an upper bound for the dark weight's pure-state concurrence
    let dark = dark_basis(4).unwrap();
    let weight: f64 = dark.iter().map(|d| overlap(&ss.state, d).unwrap()).sum();
    assert!(weight < 1.0 - 1e-3);
    assert!(cn_concurrence(&target_singlet()).unwrap() > 7f64.sqrt() / 2.0 - 1e-9);
}

#[test]
fn one_way_ensemble_tracks_master_equation() {
    let basis = build_coupled_basis(4).unwrap();
    let target = target_singlet();
    let scheme = schematic_feedback(Schematic::OneWay, &basis, &target).unwrap();
    let cfg = SimConfig::new(4).with_scheme(scheme).with_samples(20);
    let psi0 = StateVector::ground(4);
    let proj = OperatorMatrix::new(target.projector().into_entries()).unwrap();
    let est = ensemble_average(&psi0, 20.0, 400, 5, &cfg, &[proj]).unwrap();
    let me = evolve_master(&psi0.projector(), 20.0, &cfg).unwrap();
    for (i, rho) in me.states.iter().enumerate() {
        let want = overlap(rho, &target).unwrap();
        let got = est.observable_means[0][i];
        assert!((got - want).abs() < 0.05, "t = {}: {got} vs {want}", me.times[i]);
    }
    for rho in &est.rho_hat {
        assert!((rho.trace().re - 1.0).abs() < 1e-10);
    }
}

#[test]
fn one_way_trajectory_reaches_target_despite_losses() {
    let basis = build_coupled_basis(4).unwrap();
    let target = target_singlet();
    let cfg = SimConfig::new(4)
        .with_scheme(schematic_feedback(Schematic::OneWay, &basis, &target).unwrap())
        .with_samples(400);
    let rec = run_trajectory(&StateVector::ground(4), 4000.0, 17, &cfg).unwrap();
    let overlaps: Vec<f64> = rec.states.iter().map(|s| overlap(s, &target).unwrap()).collect();
    assert!(overlaps.iter().any(|&o| o > 0.99));
    let tail = &overlaps[overlaps.len() / 2..];
    let mean: f64 = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(mean > 0.9, "late-time mean overlap {mean}");
}

#[test]
fn ensemble_error_shrinks_like_inverse_root_n() {
    let cfg = SimConfig::new(2).with_spontaneous_rate(0.0).with_samples(10);
    let psi0 = StateVector::ground(2);
    let me = evolve_master(&psi0.projector(), 5.0, &cfg).unwrap();
    let err = |n: usize| {
        // average over independent seed blocks to tame the noise of the estimate
        let reps = 4;
        (0..reps)
            .map(|r| {
                let est = ensemble_average(&psi0, 5.0, n, 10_000 * r as u64, &cfg, &[]).unwrap();
                est.rho_hat
                    .iter()
                    .zip(&me.states)
                    .map(|(a, b)| a.trace_distance(b).unwrap())
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / reps as f64
    };
    let (e1, e2, e3) = (err(100), err(400), err(1600));
    // each fourfold increase should roughly halve the error
    for (big, small) in [(e1, e2), (e2, e3)] {
        let ratio = big / small;
        assert!(ratio > 1.3 && ratio < 3.2, "errors {e1} {e2} {e3}");
    }
}

#[test]
fn ensemble_is_thread_count_independent() {
    let cfg = SimConfig::new(3).with_spontaneous_rate(0.05).with_samples(5);
    let psi0 = StateVector::ground(3);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ensemble_average(&psi0, 10.0, 50, 3, &cfg, &[]).unwrap())
    };
    let (a, b) = (run(1), run(3));
    for (x, y) in a.rho_hat.iter().zip(&b.rho_hat) {
        assert_eq!(x.entries(), y.entries());
    }
}
