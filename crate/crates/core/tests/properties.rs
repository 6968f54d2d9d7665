use fdelay_core::delay::{solve_delay, DelayKernel, InitialSegment, ScalarSin, SolveOptions};
use fdelay_core::fbm::{covariance, sample_fbm, SamplingMethod};
use fdelay_core::holder::{delta1, delta2, holder_seminorm, holder_seminorm_full};
use fdelay_core::io::{read_fde1, read_path_csv, write_fde1, write_path_csv, Fde1};
use fdelay_core::malliavin::{density_estimate, MalliavinMatrix};
use fdelay_core::sensitivity::solve_field;
use fdelay_core::young::young_integrate;
use fdelay_core::{GridPath, UniformGrid};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn path_strategy(max_steps: usize, dim: usize) -> impl Strategy<Value = GridPath> {
    (1..=max_steps).prop_flat_map(move |n| {
        prop::collection::vec(-10.0f64..10.0, (n + 1) * dim).prop_map(move |v| {
            GridPath::new(UniformGrid::new(0.0, 1.0, n).unwrap(), dim, v).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn second_difference_of_first_difference_vanishes(f in path_strategy(24, 2)) {
        let scale = f.sup_norm().max(1.0);
        let d2 = delta2(&delta1(&f));
        prop_assert!(d2.max_abs() <= 1e-10 * scale);
    }

    #[test]
    fn seminorm_is_monotone_in_the_interval(
        f in path_strategy(32, 1),
        mu in 0.1f64..1.0,
        cut in 0.0f64..1.0,
    ) {
        let n = f.grid().n_steps();
        let from = ((n as f64) * cut * 0.5) as usize;
        let to = n - ((n - from) as f64 * cut * 0.5) as usize;
        let inner = holder_seminorm(&f, mu, from, to).unwrap().seminorm;
        let outer = holder_seminorm_full(&f, mu).unwrap().seminorm;
        prop_assert!(inner <= outer);
        prop_assert!(inner >= 0.0);
    }

    #[test]
    fn seminorm_exponents_compare_on_unit_interval(
        f in path_strategy(32, 1),
        lo in 0.05f64..0.5,
        gap in 0.0f64..0.5,
    ) {
        let hi = lo + gap;
        let a = holder_seminorm_full(&f, hi).unwrap().seminorm;
        let b = holder_seminorm_full(&f, lo).unwrap().seminorm;
        prop_assert!(a * 1.0f64.powf(hi - lo) >= b * (1.0 - 1e-12));
    }

    #[test]
    fn constant_paths_have_zero_seminorm(c in -5.0f64..5.0, n in 1usize..40) {
        let f = GridPath::from_scalar_fn(UniformGrid::new(0.0, 1.0, n).unwrap(), |_| c);
        prop_assert_eq!(holder_seminorm_full(&f, 0.5).unwrap().seminorm, 0.0);
    }

    #[test]
    fn young_sums_are_additive_and_linear(
        f in path_strategy(32, 1),
        seed in prop::collection::vec(-1.0f64..1.0, 66),
        a in -3.0f64..3.0,
        split in 0.0f64..1.0,
    ) {
        let grid = *f.grid();
        let n = grid.n_steps();
        let g1 = GridPath::new(grid, 1, seed[..=n].to_vec()).unwrap();
        let g2 = GridPath::new(grid, 1, seed[33..34 + n].to_vec()).unwrap();
        let combo = GridPath::new(
            grid,
            1,
            g1.values().iter().zip(g2.values()).map(|(x, y)| a * x + y).collect(),
        )
        .unwrap();
        let j1 = young_integrate(&f, &g1, 0.6, 0.6).unwrap().integral_path;
        let j2 = young_integrate(&f, &g2, 0.6, 0.6).unwrap().integral_path;
        let jc = young_integrate(&f, &combo, 0.6, 0.6).unwrap().integral_path;
        let scale = 1.0 + j1.sup_norm() + j2.sup_norm();
        for i in 0..=n {
            prop_assert!((jc.at(i)[0] - (a * j1.at(i)[0] + j2.at(i)[0])).abs() <= 1e-12 * scale * (1.0 + a.abs()));
        }
        prop_assert_eq!(j1.at(0)[0], 0.0);

        let u = (split * n as f64) as usize;
        let tail = young_integrate(&f.slice(u, n).unwrap(), &g1.slice(u, n).unwrap(), 0.6, 0.6)
            .unwrap()
            .integral_path;
        let head = j1.at(u)[0];
        prop_assert!((j1.last()[0] - (head + tail.last()[0])).abs() <= 1e-12 * scale);
    }

    #[test]
    fn covariance_gram_is_psd(
        times in prop::collection::vec(0.0f64..3.0, 2..20),
        hurst in 0.5f64..0.99,
    ) {
        let n = times.len();
        let m = DMatrix::from_fn(n, n, |i, j| covariance(times[i], times[j], hurst));
        let scale = m.amax().max(1.0);
        let min = SymmetricEigen::new(m).eigenvalues.min();
        prop_assert!(min >= -1e-10 * scale);
    }

    #[test]
    fn malliavin_matrix_invariants(entries in prop::collection::vec(-2.0f64..2.0, 9)) {
        let a = DMatrix::from_row_slice(3, 3, &entries);
        let q = &a * a.transpose();
        let m = MalliavinMatrix::from_matrix(1.0, 3, q.as_slice().to_vec()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((m.q[i * 3 + j] - m.q[j * 3 + i]).abs() <= 1e-10);
            }
        }
        prop_assert!((m.det - q.determinant()).abs() <= 1e-8 * (1.0 + q.amax().powi(3)));
        prop_assert!(m.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn path_files_round_trip(f in path_strategy(16, 3), h in 0.5f64..1.0) {
        let mut csv = Vec::new();
        write_path_csv(&mut csv, &f).unwrap();
        let back = read_path_csv(&csv[..]).unwrap();
        prop_assert_eq!(back.values(), f.values());
        let mut bin = Vec::new();
        let rec = Fde1::from_path(h, &f);
        write_fde1(&mut bin, &rec).unwrap();
        prop_assert_eq!(read_fde1(&bin[..]).unwrap(), rec);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fbm_sampling_is_deterministic(seed in any::<u64>(), hurst in 0.5f64..0.95) {
        let g = UniformGrid::new(0.0, 1.0, 64).unwrap();
        let a = sample_fbm(g, hurst, 2, seed, SamplingMethod::Cholesky).unwrap();
        let b = sample_fbm(g, hurst, 2, seed, SamplingMethod::Cholesky).unwrap();
        prop_assert_eq!(a.path.values(), b.path.values());
        prop_assert_eq!(a.path.at(0), &[0.0, 0.0][..]);
    }

    #[test]
    fn solution_keeps_history_and_meets_tolerance(
        seed in any::<u64>(),
        xi0 in -2.0f64..2.0,
        b in 0.0f64..0.8,
    ) {
        let g = UniformGrid::new(0.0, 1.0, 64).unwrap();
        let x = sample_fbm(g, 0.75, 1, seed, SamplingMethod::Cholesky).unwrap().path;
        let xi = InitialSegment::constant(0.25, g.dt(), &[xi0]).unwrap();
        let ker = DelayKernel::lebesgue(0.25, 9).unwrap();
        let s = ScalarSin { a: 1.0, b };
        let opts = SolveOptions::default();
        let rep = solve_delay(&x, &xi, &s, &ker, &opts).unwrap();
        let h = xi.path.len();
        prop_assert_eq!(&rep.y.values()[..h], xi.path.values());
        prop_assert!(rep.windows.iter().all(|w| w.residual <= opts.tol));

        let field = solve_field(&rep, &x, &s, &ker, 4).unwrap();
        for (c, &r) in field.r_nodes.iter().enumerate() {
            for t in 0..r {
                prop_assert_eq!(field.value(c, t)[0], 0.0);
            }
        }
    }

    #[test]
    fn density_is_normalized_and_nonnegative(
        samples in prop::collection::vec(-5.0f64..5.0, 100..400),
    ) {
        prop_assume!(samples.iter().any(|v| (v - samples[0]).abs() > 1e-3));
        let est = density_estimate(&samples, 1, None).unwrap();
        prop_assert!(est.values.iter().all(|v| *v >= 0.0));
        prop_assert!((est.integral() - 1.0).abs() < 1e-2);
    }
}
