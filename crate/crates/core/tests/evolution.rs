use std::f64::consts::PI;

use edlab_core::evolution::*;
use num_complex::Complex;
use proptest::prelude::*;

fn free_setup(n: usize, half: f64) -> (Grid1D<f64>, HamiltonianSpec<f64>) {
    let g = Grid1D::<f64>::new(-half, half, n).unwrap();
    let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
    (g, spec)
}

fn l2(a: &[f64], b: &[f64], dx: f64) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * dx).sqrt()
}

/// Smooth, strictly positive periodic density and phase.
fn smooth_state(g: &Grid1D<f64>, a: f64, b: f64, c: f64) -> (DensityField<f64>, PhaseField<f64>) {
    let k = 2.0 * PI / g.length();
    let xs = g.points();
    let rho = xs
        .iter()
        .map(|&x| 1.0 + a * (k * x).cos() + 0.2 * b * (2.0 * k * x).sin())
        .collect();
    let phi = xs
        .iter()
        .map(|&x| c * (k * x).sin() + 0.3 * b * (3.0 * k * x).cos())
        .collect();
    (
        DensityField::normalize(g.clone(), rho).unwrap(),
        PhaseField::new(g.clone(), phi).unwrap(),
    )
}

#[test]
fn gaussian_quantum_energy_matches_closed_form() {
    // ∫ ξ ρ'² / (m ρ) dx = ξ / (m σ²) for a Gaussian of width σ.
    let g = Grid1D::<f64>::new(-15.0, 15.0, 512).unwrap();
    for (sigma, m, xi) in [(1.0f64, 1.0, 0.125), (0.7, 2.0, 0.3), (1.5, 0.5, 0.05)] {
        let spec = HamiltonianSpec::new(m, vec![0.0; 512], xi).unwrap();
        let rho = DensityField::gaussian(g.clone(), 0.5, sigma).unwrap();
        let phi = PhaseField::constant(g.clone(), 0.0).unwrap();
        let terms = ensemble_hamiltonian_terms(&rho, &phi, &spec).unwrap();
        let expected = xi / (m * sigma * sigma);
        assert!(
            (terms.quantum - expected).abs() < 1e-9 * expected,
            "{terms:?} vs {expected}"
        );
        assert!(terms.kinetic.abs() < 1e-15);
        assert!((ensemble_hamiltonian(&rho, &phi, &spec).unwrap() - expected).abs() < 1e-9);
    }
}

#[test]
fn boosted_gaussian_kinetic_energy() {
    // A Gaussian with phase p·x carries kinetic energy p²/2m.
    let g = Grid1D::<f64>::new(-15.0, 15.0, 512).unwrap();
    let (m, p) = (1.5f64, 0.8);
    let spec = HamiltonianSpec::with_hbar(m, vec![0.0; 512], 1.0).unwrap();
    let rho = DensityField::gaussian(g.clone(), 0.0, 1.0).unwrap();
    let phi = PhaseField::linear(g.clone(), p).unwrap();
    let terms = ensemble_hamiltonian_terms(&rho, &phi, &spec).unwrap();
    assert!((terms.kinetic - p * p / (2.0 * m)).abs() < 1e-9);
}

#[test]
fn energy_rejects_density_below_floor() {
    let g = Grid1D::<f64>::new(0.0, 8.0, 8).unwrap();
    let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
    let rho = DensityField::uniform(g.clone());
    let phi = PhaseField::constant(g.clone(), 0.0).unwrap();
    assert!(ensemble_hamiltonian(&rho, &phi, &spec).is_ok());
    let tiny = vec![0.125, 0.125, 0.125, 0.125, 0.125, 0.125, 0.25, 1e-20];
    assert!(matches!(
        DensityField::new(g.clone(), tiny),
        Err(edlab_core::Error::DensityBelowFloor { index: 7, .. })
            | Err(edlab_core::Error::NotNormalized { .. })
    ));
}

#[test]
fn ed_energy_equals_wave_energy() {
    let g = Grid1D::<f64>::new(-10.0, 10.0, 256).unwrap();
    let spec = HamiltonianSpec::harmonic(&g, 1.0, 1.3, 0.4).unwrap();
    // Centered so the periodic seam is negligible, wide enough that the tails
    // stay above the density floor; the momentum fits the box.
    let p = 2.0 * PI * 2.0 / g.length();
    let psi = WaveField::gaussian(g, 0.0, 1.5, p, 1.0).unwrap();
    let (rho, phi) = from_wavefunction(&psi, &spec).unwrap();
    let h = ensemble_hamiltonian(&rho, &phi, &spec).unwrap();
    let e = wave_energy(&psi, &spec).unwrap();
    assert!((h - e).abs() < 1e-9 * e.abs(), "{h} vs {e}");
}

#[test]
fn harmonic_ground_state_is_stationary() {
    let (m, omega) = (1.0f64, 1.0);
    let g = Grid1D::<f64>::new(-10.0, 10.0, 256).unwrap();
    let spec = HamiltonianSpec::harmonic(&g, m, omega, 0.0).unwrap();
    let sigma = (spec.hbar() / (2.0 * m * omega)).sqrt();
    let rho0 = DensityField::gaussian(g.clone(), 0.0, sigma).unwrap();
    let phi0 = PhaseField::constant(g.clone(), 0.0).unwrap();
    let dt = 0.02 * m * g.dx() * g.dx() / spec.hbar();
    let stepper = HamiltonStepper::new(&g, &spec, dt).unwrap();
    let (mut rho, mut phi) = (rho0.clone(), phi0);
    let steps = 1000;
    for _ in 0..steps {
        let (r, p, _) = stepper.step(&rho, &phi).unwrap();
        rho = r;
        phi = p;
    }
    let t = dt * steps as f64;
    assert!(l2(rho.values(), rho0.values(), g.dx()) < 1e-6);
    // Φ falls at the ground-state energy ħω/2 where the density is appreciable.
    let expected = -0.5 * spec.hbar() * omega * t;
    for (x, v) in g.points().iter().zip(phi.values()) {
        if x.abs() < 2.0 {
            assert!((v - expected).abs() < 1e-6, "x = {x}: {v} vs {expected}");
        }
    }

    let psi0 = WaveField::gaussian(g.clone(), 0.0, sigma, 0.0, spec.hbar()).unwrap();
    let split = SplitStep::new(&g, &spec, 0.01).unwrap();
    let mut psi = psi0.clone();
    for _ in 0..200 {
        psi = split.step(&psi).unwrap();
        assert!((psi.norm_squared() - 1.0).abs() < 1e-12);
    }
    // Strang splitting moves the continuum eigenstate by O(dt²).
    let drift = l2(&psi.density(), &psi0.density(), g.dx());
    assert!(drift < 1e-5, "{drift}");
}

#[test]
fn free_packet_width_follows_spreading_law() {
    let (g, spec) = free_setup(512, 20.0);
    let sigma0 = 1.0;
    let rho = DensityField::gaussian(g.clone(), 0.0, sigma0).unwrap();
    let phi = PhaseField::constant(g.clone(), 0.0).unwrap();
    let t_final = 1.5;
    let dt = RECOMMENDED_STEP_FRACTION * g.dx() * g.dx();
    let report = evolve_compare(&rho, &phi, &spec, t_final, dt, 3).unwrap();
    for s in &report.samples {
        let tau = spec.hbar() * s.t / (2.0 * spec.mass() * sigma0 * sigma0);
        let analytic = sigma0 * (1.0 + tau * tau).sqrt();
        assert!(
            (s.width / analytic - 1.0).abs() < 1e-3,
            "t = {}: {} vs {analytic}",
            s.t,
            s.width
        );
        assert!((s.reference_width / analytic - 1.0).abs() < 1e-6);
    }
    assert!(report.max_relative_l2 < 1e-3);
}

#[test]
fn coherent_state_returns_after_one_period() {
    let (m, omega) = (1.0f64, 1.0);
    let g = Grid1D::<f64>::new(-10.0, 10.0, 256).unwrap();
    let spec = HamiltonianSpec::harmonic(&g, m, omega, 0.0).unwrap();
    let sigma = (spec.hbar() / (2.0 * m * omega)).sqrt();
    let rho0 = DensityField::gaussian(g.clone(), 2.0, sigma).unwrap();
    let phi0 = PhaseField::constant(g.clone(), 0.0).unwrap();
    let period = 2.0 * PI / omega;
    let dt_max = 0.02 * m * g.dx() * g.dx() / spec.hbar();
    let steps = (period / dt_max).ceil() as usize;
    let stepper = HamiltonStepper::new(&g, &spec, period / steps as f64).unwrap();
    let (mut rho, mut phi) = (rho0.clone(), phi0);
    let mut farthest: f64 = 0.0;
    for _ in 0..steps {
        let (r, p, _) = stepper.step(&rho, &phi).unwrap();
        rho = r;
        phi = p;
        farthest = farthest.max(rho.mean());
    }
    assert!(
        farthest > 1.9,
        "packet should oscillate, max mean {farthest}"
    );
    assert!(l2(rho.values(), rho0.values(), g.dx()) < 1e-2);
    assert!((rho.mean() - 2.0).abs() < 1e-2);
}

#[test]
fn zero_time_comparison_has_no_distance() {
    let (g, spec) = free_setup(128, 10.0);
    let rho = DensityField::gaussian(g.clone(), 0.0, 1.0).unwrap();
    let phi = PhaseField::constant(g.clone(), 0.3).unwrap();
    let r = evolve_compare(&rho, &phi, &spec, 0.0, 1e-3, 4).unwrap();
    assert_eq!(r.steps, 0);
    assert_eq!(r.samples.len(), 1);
    assert!(r.max_relative_l2 < 1e-15);
}

#[test]
fn thousand_steps_conserve_mass_and_energy() {
    let (m, omega) = (1.0f64, 1.0);
    let g = Grid1D::<f64>::new(-10.0, 10.0, 256).unwrap();
    let spec = HamiltonianSpec::harmonic(&g, m, omega, 0.0).unwrap();
    let rho = DensityField::gaussian(g.clone(), 1.5, 0.8).unwrap();
    let phi = PhaseField::constant(g.clone(), 0.0).unwrap();
    let dt = 0.02 * g.dx() * g.dx();
    let r = evolve_compare(&rho, &phi, &spec, 1000.0 * dt, dt, 10).unwrap();
    assert_eq!(r.steps, 1000);
    assert!(r.max_norm_drift < 1e-6, "{}", r.max_norm_drift);
    assert!(r.max_renormalization < 1e-6);
    assert!(
        r.max_hamiltonian_drift < 1e-4,
        "{}",
        r.max_hamiltonian_drift
    );
    assert!(r.max_reference_step_drift < 1e-12);
}

#[test]
fn continuity_residual_is_second_order() {
    let g = Grid1D::<f64>::new(0.0, 2.0 * PI, 64).unwrap();
    let potential = g.points().iter().map(|&x| 0.5 * x.cos()).collect();
    let spec = HamiltonianSpec::with_hbar(1.0, potential, 1.0).unwrap();
    let (rho, phi) = smooth_state(&g, 0.5, 1.0, 0.4);
    let dt0 = 0.2 * stability_bound(&g, &spec);
    let residuals: Vec<f64> = (0..4)
        .map(|k| continuity_residual(&rho, &phi, &spec, dt0 / 2f64.powi(k)).unwrap())
        .collect();
    for w in residuals.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.8, "order {order} from {residuals:?}");
    }
}

#[test]
fn comparison_improves_under_refinement() {
    let distances: Vec<f64> = [128, 256, 512]
        .iter()
        .map(|&n| {
            let (g, spec) = free_setup(n, 20.0);
            let rho = DensityField::gaussian(g.clone(), 0.0, 1.0).unwrap();
            let phi = PhaseField::constant(g.clone(), 0.0).unwrap();
            let dt = 0.04 * g.dx() * g.dx();
            evolve_compare(&rho, &phi, &spec, 1.0, dt, 1)
                .unwrap()
                .final_relative_l2
        })
        .collect();
    assert!(distances.windows(2).all(|w| w[1] < w[0]), "{distances:?}");
}

#[test]
fn moving_plane_wave_keeps_its_winding() {
    let l = 2.0 * PI;
    let g = Grid1D::<f64>::new(0.0, l, 64).unwrap();
    let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
    let (rho, _) = smooth_state(&g, 0.3, 0.0, 0.0);
    let p = 2.0;
    let phi = PhaseField::linear(g.clone(), p).unwrap();
    let v = current_velocity(&phi, &spec).unwrap();
    assert!(v.iter().all(|vi| (vi - p).abs() < 1e-12));
    let dt = 0.02 * g.dx() * g.dx();
    let r = evolve_compare(&rho, &phi, &spec, 0.5, dt, 2).unwrap();
    assert!(r.max_relative_l2 < 1e-3, "{}", r.max_relative_l2);
}

#[test]
fn snapshot_writes_one_row_per_node() {
    let (g, spec) = free_setup(16, 4.0);
    let rho = DensityField::gaussian(g.clone(), 0.0, 1.0).unwrap();
    let phi = PhaseField::linear(g.clone(), 0.5).unwrap();
    let mut buf = Vec::new();
    write_snapshot_csv(&mut buf, &rho, &phi, &spec).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 16);
    for (row, (&r, &x)) in rows.iter().zip(rho.values().iter().zip(&g.points())) {
        let cells: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells[0], x);
        assert_eq!(cells[1], r);
        let z = Complex::new(cells[3], cells[4]);
        assert!((z.norm_sqr() - r).abs() < 1e-15);
    }
}

#[test]
fn single_precision_comparison() {
    let g = Grid1D::<f32>::new(-10.0, 10.0, 128).unwrap();
    let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
    let rho = DensityField::gaussian(g.clone(), 0.0, 1.0).unwrap();
    let phi = PhaseField::constant(g.clone(), 0.0).unwrap();
    let dt = 0.02 * g.dx() * g.dx();
    let r = evolve_compare(&rho, &phi, &spec, 0.5, dt, 1).unwrap();
    assert!(r.max_relative_l2 < 1e-2, "{}", r.max_relative_l2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip_recovers_fields(a in -0.8f64..0.8, b in -1.0f64..1.0, c in -2.0f64..2.0, shift in -3.0f64..3.0) {
        let g = Grid1D::<f64>::new(-PI, PI, 64).unwrap();
        let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
        let (rho, phi) = smooth_state(&g, a, b, c);
        let shifted: Vec<f64> = phi.values().iter().map(|v| v + shift).collect();
        let phi = PhaseField::new(g.clone(), shifted).unwrap();
        let psi = to_wavefunction(&rho, &phi, &spec).unwrap();
        for (z, r) in psi.values().iter().zip(rho.values()) {
            prop_assert!((z.norm_sqr() - r).abs() < 1e-12);
        }
        let (rho2, phi2) = from_wavefunction(&psi, &spec).unwrap();
        for (x, y) in rho2.values().iter().zip(rho.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        // Phases agree up to one global multiple of 2πħ.
        let offsets: Vec<f64> = phi2.values().iter().zip(phi.values()).map(|(x, y)| x - y).collect();
        let turns = offsets[0] / (2.0 * PI * spec.hbar());
        prop_assert!((turns - turns.round()).abs() < 1e-9);
        prop_assert!(offsets.iter().all(|o| (o - offsets[0]).abs() < 1e-9));
        prop_assert!(phi2.winding().abs() < 1e-9);
    }

    #[test]
    fn step_conserves_mass_before_renormalization(a in -0.8f64..0.8, b in -1.0f64..1.0, c in -2.0f64..2.0, frac in 0.01f64..1.0) {
        let g = Grid1D::<f64>::new(0.0, 2.0 * PI, 64).unwrap();
        let spec = HamiltonianSpec::free(&g, 1.0).unwrap();
        let (rho, phi) = smooth_state(&g, a, b, c);
        let dt = frac * 0.05 * stability_bound(&g, &spec);
        let (_, _, report) = hamilton_step(&rho, &phi, &spec, dt).unwrap();
        prop_assert!((report.mass_before_renormalization - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_step_preserves_norm(center in -3.0f64..3.0, sigma in 0.5f64..2.0, p in -2.0f64..2.0, dt in 0.0f64..0.1) {
        let g = Grid1D::<f64>::new(-12.0, 12.0, 128).unwrap();
        let spec = HamiltonianSpec::harmonic(&g, 1.0, 0.7, 0.0).unwrap();
        let psi = WaveField::gaussian(g, center, sigma, p, 1.0).unwrap();
        let next = schrodinger_step(&psi, &spec, dt).unwrap();
        prop_assert!((next.norm_squared() - psi.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn velocity_is_linear_in_phase(c1 in -2.0f64..2.0, c2 in -2.0f64..2.0, m in 0.2f64..5.0) {
        let g = Grid1D::<f64>::new(0.0, 2.0 * PI, 32).unwrap();
        let spec = HamiltonianSpec::free(&g, m).unwrap();
        let xs = g.points();
        let phi = PhaseField::new(g.clone(), xs.iter().map(|&x| c1 * x.sin() + c2 * (2.0 * x).cos()).collect()).unwrap();
        let v = current_velocity(&phi, &spec).unwrap();
        for (x, vi) in xs.iter().zip(v) {
            let exact = (c1 * x.cos() - 2.0 * c2 * (2.0 * x).sin()) / m;
            prop_assert!((vi - exact).abs() < 1e-10);
        }
    }
}
