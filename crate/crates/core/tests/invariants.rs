use collapse_lab::diagnostics::free_energy;
use collapse_lab::rescale::{frame_with_tau, scale_back, unscale};
use collapse_lab::{
    make_initial, run_oracle, total_mass, Field64, GridSpec64, InitialProfile, MassProfile64, Model, OracleConfig, PoissonSolver, StepperConfig,
    StopRule, Stepper,
};
use proptest::prelude::*;

fn two_bumps(n: usize, c1: (f64, f64), c2: (f64, f64), width: f64, mass: f64) -> Field64 {
    let g = GridSpec64::square(n, 1.0).unwrap();
    make_initial(g, &InitialProfile::TwoBumps { centers: [c1, c2], width, masses: [mass / 2.0, mass / 2.0] }).unwrap()
}

fn model(neumann: bool) -> Model {
    if neumann {
        Model::Neumann
    } else {
        Model::Dirichlet
    }
}

/// `−Δ_h v` with the same face conventions as the solver: a ghost value of
/// `−v` for Dirichlet faces and a zero gradient for Neumann faces.
fn apply_laplacian(v: &[f64], n: usize, h: f64, m: Model) -> Vec<f64> {
    let at = |i: isize, j: isize, own: f64| -> f64 {
        if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
            match m {
                Model::Dirichlet => -own,
                Model::Neumann => own,
            }
        } else {
            v[j as usize * n + i as usize]
        }
    };
    let mut out = vec![0.0; n * n];
    for j in 0..n as isize {
        for i in 0..n as isize {
            let c = v[j as usize * n + i as usize];
            let sum = at(i - 1, j, c) + at(i + 1, j, c) + at(i, j - 1, c) + at(i, j + 1, c);
            out[j as usize * n + i as usize] = (4.0 * c - sum) / (h * h);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn steps_conserve_mass_and_positivity(
        x1 in 0.2f64..0.45, x2 in 0.55f64..0.8, y in 0.3f64..0.7,
        width in 0.05f64..0.15, mass in 1.0f64..60.0, neumann in any::<bool>(),
    ) {
        let u0 = two_bumps(16, (x1, y), (x2, 1.0 - y), width, mass);
        let m0 = total_mass(&u0);
        let mut st = Stepper::new(*u0.grid(), model(neumann), StepperConfig::default()).unwrap();
        let mut s = st.initial_state(u0).unwrap();
        let mut f_prev = free_energy(&s).unwrap().free_energy;
        for _ in 0..40 {
            s = st.step(&s).unwrap();
            prop_assert!(s.field.values().iter().all(|&u| u >= 0.0));
            prop_assert!((total_mass(&s.field) - m0).abs() <= 1e-12 * m0);
            let f = free_energy(&s).unwrap().free_energy;
            prop_assert!(f <= f_prev + 1e-9 * f_prev.abs().max(1.0), "F rose from {} to {}", f_prev, f);
            f_prev = f;
        }
    }

    #[test]
    fn potential_solves_the_discrete_problem(seed in 0u64..10_000, neumann in any::<bool>(), n in 8usize..24) {
        let g = GridSpec64::square(n, 1.0).unwrap();
        let mut rhs: Vec<f64> = (0..g.len()).map(|k| (((k as u64 + 1) * (seed + 7)) % 97) as f64 / 97.0).collect();
        let m = model(neumann);
        if neumann {
            let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
            rhs.iter_mut().for_each(|r| *r -= mean);
        }
        let mut solver = PoissonSolver::new(g).unwrap();
        let v = solver.solve_rhs(&rhs, m).unwrap();
        let lap = apply_laplacian(&v.values, n, g.h(), m);
        let scale = rhs.iter().map(|r| r.abs()).fold(0.0, f64::max).max(1e-12);
        for (a, b) in lap.iter().zip(&rhs) {
            prop_assert!((a - b).abs() <= 1e-7 * scale, "{} vs {}", a, b);
        }
        if neumann {
            prop_assert!(v.values.iter().sum::<f64>().abs() <= 1e-9 * v.values.iter().map(|x| x.abs()).sum::<f64>().max(1.0));
        }
    }

    #[test]
    fn oracle_keeps_mass_and_monotone_profile(width in 0.03f64..0.2, mass in 1.0f64..40.0) {
        let g = GridSpec64::radial(256, 0.5).unwrap();
        let p0 = MassProfile64::from_field(&make_initial(g, &InitialProfile::Gaussian { center: (0.0, 0.0), width, mass }).unwrap()).unwrap();
        let total = p0.total();
        let stop = StopRule { max_steps: Some(30), ..StopRule::default() };
        let (p, _) = run_oracle(p0, &OracleConfig::default(), &stop, |q| {
            let m = q.cumulative();
            assert!(m.windows(2).all(|w| w[1] >= w[0] - 1e-12 * total));
            Ok(())
        })
        .unwrap();
        prop_assert!((p.total() - total).abs() <= 1e-12 * total);
    }

    #[test]
    fn rescaling_round_trip(tau in 0.001f64..0.004, y_max in 2.0f64..6.0, amp in 1.0f64..50.0) {
        let g = GridSpec64::square(96, 1.0).unwrap();
        let f = Field64::from_fn(g, |p| 1.0 + amp * (-((p.0 - 0.5).powi(2) + (p.1 - 0.5).powi(2)) / 0.01).exp()).unwrap();
        let fr = frame_with_tau(&f, 0.0, tau, (0.5, 0.5), y_max, 40).unwrap();
        let back = scale_back(&fr);
        prop_assert!((back.mass - fr.frame_mass).abs() <= 0.02 * fr.frame_mass);
        let z = unscale(&back, &fr);
        let peak = fr.geometry.values().iter().cloned().fold(0.0, f64::max);
        for (a, b) in z.iter().zip(fr.geometry.values()) {
            prop_assert!((a - b).abs() <= 1e-9 * peak);
        }
    }
}
