//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its elapsed time and enforcing the stated runtime budget.
//!
//! Run with `cargo test -p qst-core --test acceptance` (add `-- --nocapture`
//! to see the PASS lines).

use std::time::{Duration, Instant};

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qst_core::counts::{
    estimate_transmittances, expected_counts, expected_counts_joint, sample_counts,
    simulate_calibration,
};
use qst_core::dedup::{aggregate_counts, build_classes, MeasurementClass, CLASS_TOL};
use qst_core::density::DensityOperator;
use qst_core::gellmann::{design_matrix, GellMannBasis};
use qst_core::matrix::ComplexMatrix;
use qst_core::measurement::{joint_elements, Detector, MeasElement, MeasKey, PhaseSetting, PovmElement};
use qst_core::metrics::{cglmp_critical_table, fidelity};
use qst_core::mzi::{povm_elements, simplified_forms, CascadeSpec, TransmittanceSet};
use qst_core::reconstruct::{
    likelihood, likelihood_gradient, linear_inversion, mle_reconstruct, MleConfig, TriangularFactor,
};
use qst_core::states::{depolarized, mes_state, PureState, Side};

fn finish(criterion: usize, name: &str, started: Instant, budget: Duration) {
    let elapsed = started.elapsed();
    println!(
        "acceptance criterion {criterion} ({name}): PASS in {:.3}s (budget {:.0}s)",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    assert!(
        elapsed <= budget,
        "criterion {criterion} exceeded its runtime budget: {elapsed:?} > {budget:?}"
    );
}

fn table2_signal() -> TransmittanceSet<f64> {
    TransmittanceSet {
        eta_2x: 1.009,
        eta_2y: 0.830,
        eta_1x: 1.063,
        eta_1y: 1.0,
        eta_d1: 0.474,
    }
}

fn table2_idler() -> TransmittanceSet<f64> {
    TransmittanceSet {
        eta_2x: 0.8495,
        eta_2y: 0.8302,
        eta_1x: 0.9669,
        eta_1y: 1.0,
        eta_d1: 0.501,
    }
}

fn all_elements(eta: &TransmittanceSet<f64>) -> Vec<PovmElement<f64>> {
    let spec = CascadeSpec::new(4).unwrap();
    let mut out = Vec::new();
    for setting in PhaseSetting::canonical_set(2) {
        out.extend(povm_elements::<f64>(&spec, &setting, eta));
    }
    out
}

fn random_density(dim: usize, rng: &mut ChaCha8Rng) -> DensityOperator<f64> {
    // Ginibre construction: G·G†/Tr, full rank almost surely.
    let g = ComplexMatrix::from_fn(dim, dim, |_, _| {
        Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    let m = g.matmul(&g.adjoint()).unwrap();
    let tr = m.trace().re;
    DensityOperator::new(m.scale(1.0 / tr).hermitized()).unwrap()
}

/// Single-qudit forward model: expected counts for every canonical setting,
/// aggregated to classes.
fn single_qudit_counts(
    rho: &DensityOperator<f64>,
    eta: &TransmittanceSet<f64>,
    photons: f64,
) -> (Vec<f64>, Vec<MeasurementClass<f64>>) {
    let spec = CascadeSpec::new(4).unwrap();
    let mut record: Option<qst_core::counts::CountRecord> = None;
    let mut elements = Vec::new();
    for setting in PhaseSetting::canonical_set(2) {
        let es = povm_elements::<f64>(&spec, &setting, eta);
        let r = expected_counts(rho, &es, photons).unwrap();
        record = Some(match record {
            None => r,
            Some(mut acc) => {
                for (k, v) in r.iter() {
                    acc.insert(k.clone(), v);
                }
                acc
            }
        });
        elements.extend(es.into_iter().map(MeasElement::from));
    }
    let classes = build_classes(&elements, CLASS_TOL).unwrap().classes;
    let n = aggregate_counts(&classes, &record.unwrap()).unwrap();
    (n, classes)
}

#[test]
fn criterion_1_closed_form_equivalence() {
    let started = Instant::now();
    let spec = CascadeSpec::new(4).unwrap();
    let eta = TransmittanceSet::ideal();
    for setting in PhaseSetting::canonical_set(2) {
        let elements = povm_elements::<f64>(&spec, &setting, &eta);
        let forms = simplified_forms::<f64>(&spec, &setting);
        assert_eq!(forms.len(), 13, "7 D1 + 6 D2 detector/slot combinations");
        for form in &forms {
            let element = elements
                .iter()
                .find(|e| e.detector == form.detector && e.slot == form.slot)
                .expect("every tabulated slot exists in the multiplication form");
            let diff = element.op.max_abs_diff(&form.predicted_element());
            assert!(
                diff < 1e-12,
                "{:?} t_{} differs from the closed form by {diff:e}",
                form.detector,
                form.slot
            );
        }
    }
    finish(1, "closed-form equivalence", started, Duration::from_secs(1));
}

#[test]
fn criterion_2_critical_values() {
    let started = Instant::now();
    let report = cglmp_critical_table::<f64>(0.69055, 4).unwrap();
    let checks = [
        ("fidelity", report.fidelity, 0.710),
        ("trace distance", report.trace_distance, 0.290),
        ("linear entropy", report.linear_entropy, 0.490),
        ("von Neumann entropy", report.von_neumann_entropy, 2.002),
        ("conditional entropy (signal)", report.conditional_entropy_signal, 0.002),
        ("conditional entropy (idler)", report.conditional_entropy_idler, 0.002),
    ];
    for (name, got, want) in checks {
        assert!(
            (got - want).abs() <= 5e-4,
            "{name}: {got} differs from {want} by more than 5e-4"
        );
    }
    finish(2, "critical values", started, Duration::from_secs(1));
}

#[test]
fn criterion_3_design_matrix_ranks() {
    let started = Instant::now();

    // Single qudit, ideal analyzer: rank 16 with both detectors and with D1 alone.
    let basis4 = GellMannBasis::<f64>::new(4).unwrap();
    let elements = all_elements(&TransmittanceSet::ideal());
    let both: Vec<ComplexMatrix<f64>> = elements.iter().map(|e| e.op.clone()).collect();
    let d1_only: Vec<ComplexMatrix<f64>> = elements
        .iter()
        .filter(|e| e.detector == Detector::D1)
        .map(|e| e.op.clone())
        .collect();
    assert_eq!(design_matrix(&both, &basis4).unwrap().rank, 16);
    assert_eq!(design_matrix(&d1_only, &basis4).unwrap().rank, 16);

    // Two-qudit joint set with the measured transmittances: rank 256.
    let signal = all_elements(&table2_signal());
    let idler = all_elements(&table2_idler());
    let joint = joint_elements(&signal, &idler);
    assert_eq!(joint.len(), 52 * 52);
    let classes = build_classes(&joint, CLASS_TOL).unwrap().classes;
    let ops: Vec<ComplexMatrix<f64>> = classes.iter().map(|c| c.aggregated_op.clone()).collect();
    let basis16 = GellMannBasis::<f64>::new(16).unwrap();
    let design = design_matrix(&ops, &basis16).unwrap();
    assert_eq!(design.rank, 256, "joint design rank over {} classes", ops.len());

    finish(3, "design-matrix ranks", started, Duration::from_secs(10));
}

#[test]
fn criterion_4_calibration_round_trip() {
    let started = Instant::now();
    let cases = [
        (Side::Signal, table2_signal()),
        (Side::Idler, table2_idler()),
    ];
    for (side, truth) in cases {
        for seed in 0..20u64 {
            let histos = simulate_calibration(&truth, side, 1e6, 1000 + seed).unwrap();
            let est = estimate_transmittances(&histos).unwrap();
            for (name, got, want) in [
                ("eta_2x", est.eta_2x, truth.eta_2x),
                ("eta_1x", est.eta_1x, truth.eta_1x),
                ("eta_2y", est.eta_2y, truth.eta_2y),
            ] {
                assert!(
                    (got / want - 1.0).abs() < 0.01,
                    "{side:?} seed {seed}: {name} estimate {got} off truth {want} by >1%"
                );
            }
        }
    }
    finish(4, "calibration round-trip", started, Duration::from_secs(5));
}

#[test]
fn criterion_5_closed_loop_tomography() {
    let started = Instant::now();

    let signal = all_elements(&table2_signal());
    let idler = all_elements(&table2_idler());
    let joint = joint_elements(&signal, &idler);
    let classes = build_classes(&joint, CLASS_TOL).unwrap().classes;

    let truth = depolarized(&mes_state::<f64>(4, 0.0).unwrap().density(), 0.96).unwrap();

    // Scale the per-setting photon number so the total expected coincidence
    // count is ~4e5.
    let unit = expected_counts_joint(&truth, &joint, 1.0).unwrap();
    let photons = 4e5 / unit.total();
    let expected = expected_counts_joint(&truth, &joint, photons).unwrap();

    let mut fidelities = Vec::new();
    for trial in 0..15u64 {
        let record = sample_counts(&expected, 9000 + trial);
        let n_m = aggregate_counts(&classes, &record).unwrap();
        let result = mle_reconstruct(&n_m, &classes, None, &MleConfig::default()).unwrap();
        assert!(
            result.min_eigenvalue >= -1e-10,
            "trial {trial}: unphysical estimate (min eigenvalue {})",
            result.min_eigenvalue
        );
        let rho_hat = result.density().unwrap();
        fidelities.push(fidelity(&rho_hat, &truth).unwrap());
    }
    let mean = fidelities.iter().sum::<f64>() / fidelities.len() as f64;
    let std = (fidelities.iter().map(|f| (f - mean).powi(2)).sum::<f64>()
        / (fidelities.len() - 1) as f64)
        .sqrt();
    println!("  closed loop: mean fidelity {mean:.5}, std {std:.5}, total counts ~4e5");
    assert!(std <= 0.01, "fidelity std {std} above 0.01");
    // KNOWN RED: at ~4e5 total coincidences the mixed truth's 15 small
    // eigenvalues (0.0025 each) carry order-one relative statistical error, and
    // Uhlmann fidelity to the mixed truth loses their sqrt-mass; the measured
    // ceiling is ~0.971 for any estimator (verified against an exact Poisson
    // likelihood, optimizer restarts from the truth, chi-square statistics, and
    // a count-scaling study: 0.99 first appears near 4e7 counts).
    assert!(mean >= 0.99, "mean fidelity {mean} below 0.99");

    finish(5, "closed-loop tomography", started, Duration::from_secs(600));
}

#[test]
fn criterion_6_noiseless_exactness() {
    let started = Instant::now();
    let eta = table2_signal();
    let mut rng = ChaCha8Rng::seed_from_u64(612);
    for case in 0..4 {
        let truth = random_density(4, &mut rng);
        let (n_m, classes) = single_qudit_counts(&truth, &eta, 1e8);

        let basis = GellMannBasis::<f64>::new(4).unwrap();
        let lin = linear_inversion(&n_m, &classes, &basis).unwrap();
        let lin_err = lin.rho.max_abs_diff(truth.matrix());
        assert!(
            lin_err < 1e-8,
            "case {case}: linear inversion error {lin_err:e} above 1e-8"
        );

        let mle = mle_reconstruct(&n_m, &classes, None, &MleConfig::default()).unwrap();
        let rho_hat = mle.density().unwrap();
        let infidelity = 1.0 - fidelity(&rho_hat, &truth).unwrap();
        assert!(
            infidelity <= 1e-4,
            "case {case}: MLE infidelity {infidelity:e} above 1e-4"
        );
    }
    finish(6, "noiseless exactness", started, Duration::from_secs(120));
}

#[test]
fn criterion_7_likelihood_gradient() {
    let started = Instant::now();
    let eta = table2_signal();
    let mut rng = ChaCha8Rng::seed_from_u64(71);

    // Counts from a plausible experiment so the likelihood has realistic scale.
    let truth = random_density(4, &mut rng);
    let (expected, classes) = single_qudit_counts(&truth, &eta, 2e4);
    let n_m: Vec<f64> = expected.iter().map(|v| v.round()).collect();

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let params: Vec<f64> = (0..16)
            .map(|i| {
                if i < 4 {
                    rng.random::<f64>() * 100.0 + 20.0
                } else {
                    (rng.random::<f64>() - 0.5) * 60.0
                }
            })
            .collect();
        let factor = TriangularFactor::from_params(4, params.clone()).unwrap();
        let (_, grad) = likelihood_gradient(&factor, &n_m, &classes).unwrap();

        let mut fd = vec![0.0f64; 16];
        for i in 0..16 {
            let h = 3e-6 * (1.0 + params[i].abs());
            let mut plus = params.clone();
            plus[i] += h;
            let mut minus = params.clone();
            minus[i] -= h;
            let lp = likelihood(&TriangularFactor::from_params(4, plus).unwrap(), &n_m, &classes)
                .unwrap();
            let lm = likelihood(&TriangularFactor::from_params(4, minus).unwrap(), &n_m, &classes)
                .unwrap();
            fd[i] = (lp - lm) / (2.0 * h);
        }
        let diff_norm = grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let grad_norm = grad.iter().map(|g| g.powi(2)).sum::<f64>().sqrt();
        let rel = diff_norm / grad_norm.max(1.0);
        worst = worst.max(rel);
    }
    println!("  worst relative gradient deviation over 100 points: {worst:.3e}");
    assert!(worst <= 1e-5, "gradient mismatch {worst:e} above 1e-5");

    finish(7, "likelihood gradient", started, Duration::from_secs(60));
}

#[test]
fn criterion_8_dedup_correctness() {
    let started = Instant::now();

    let elements: Vec<MeasElement<f64>> = all_elements(&TransmittanceSet::ideal())
        .into_iter()
        .map(MeasElement::from)
        .collect();
    let classes = build_classes(&elements, CLASS_TOL).unwrap().classes;

    // All four settings' D1 t_0 elements share one class.
    let t0_classes: Vec<usize> = classes
        .iter()
        .filter(|c| {
            c.members.iter().any(
                |k| matches!(k, MeasKey::Single(s) if s.detector == Detector::D1 && s.slot == 0),
            )
        })
        .map(|c| c.id)
        .collect();
    assert_eq!(t0_classes.len(), 1, "D1 t_0 elements must land in exactly one class");
    let t0 = &classes[t0_classes[0]];
    let d1_t0_count = t0
        .members
        .iter()
        .filter(|k| matches!(k, MeasKey::Single(s) if s.detector == Detector::D1 && s.slot == 0))
        .count();
    assert_eq!(d1_t0_count, 4);

    // Classwise aggregation conserves totals exactly on 1000 random records.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let mut record = qst_core::counts::CountRecord::new(
            qst_core::counts::CountMode::Single,
            qst_core::counts::CountMeta::new(1.0),
        );
        let mut total = 0.0f64;
        for e in &elements {
            let c = rng.random_range(0u32..1_000_000) as f64;
            record.insert(e.key.clone(), c);
            total += c;
        }
        let n = aggregate_counts(&classes, &record).unwrap();
        assert_eq!(n.iter().sum::<f64>(), total, "aggregation must conserve totals exactly");
    }

    finish(8, "dedup correctness", started, Duration::from_secs(10));
}

#[test]
fn criterion_9_consistency_scaling() {
    let started = Instant::now();
    let eta = table2_signal();

    // A fixed non-trivial single-qudit state.
    let psi = PureState::normalized(vec![
        Complex::new(0.5, 0.0),
        Complex::new(0.5, 0.1),
        Complex::new(-0.4, 0.3),
        Complex::new(0.2, -0.45),
    ])
    .unwrap();
    let truth = depolarized(&psi.density(), 0.9).unwrap();

    let spec = CascadeSpec::new(4).unwrap();
    let mut elements = Vec::new();
    let mut expected_template: Option<qst_core::counts::CountRecord> = None;
    for setting in PhaseSetting::canonical_set(2) {
        let es = povm_elements::<f64>(&spec, &setting, &eta);
        let r = expected_counts(&truth, &es, 1.0).unwrap();
        expected_template = Some(match expected_template {
            None => r,
            Some(mut acc) => {
                for (k, v) in r.iter() {
                    acc.insert(k.clone(), v);
                }
                acc
            }
        });
        elements.extend(es.into_iter().map(MeasElement::from));
    }
    let unit = expected_template.unwrap();
    let classes = build_classes(&elements, CLASS_TOL).unwrap().classes;

    let mut medians = Vec::new();
    for photons in [1e4, 1e6, 1e8] {
        let mut infidelities = Vec::new();
        for seed in 0..10u64 {
            let mut expected = unit.clone();
            let scaled: Vec<(MeasKey, f64)> =
                expected.iter().map(|(k, v)| (k.clone(), v * photons)).collect();
            for (k, v) in scaled {
                expected.insert(k, v);
            }
            let record = sample_counts(&expected, 90_000 + seed);
            let n_m = aggregate_counts(&classes, &record).unwrap();
            let result = mle_reconstruct(&n_m, &classes, None, &MleConfig::default()).unwrap();
            let rho_hat = result.density().unwrap();
            infidelities.push(1.0 - fidelity(&rho_hat, &truth).unwrap());
        }
        infidelities.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = (infidelities[4] + infidelities[5]) / 2.0;
        medians.push(median);
    }
    println!("  median infidelity by photon number: {medians:?}");
    assert!(
        medians[0] > medians[1] && medians[1] > medians[2],
        "median infidelity must strictly decrease with photon number: {medians:?}"
    );

    finish(9, "consistency scaling", started, Duration::from_secs(900));
}
