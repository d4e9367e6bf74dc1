//! Property tests for the structural invariants.

mod common;

use proptest::prelude::*;
use ufts_core::data::{self, Dataset, ObsRecord};
use ufts_core::mcmc::{whiten, FirstObs};
use ufts_core::splines::BSplineBasis;

use common::naive_basis_row;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn basis_partition_support_and_oracle(
        degree in 2usize..=3,
        n_interior in 0usize..=5,
        hi in 6.0f64..200.0,
        frac in 0.0f64..=1.0,
    ) {
        let basis = BSplineBasis::make_basis(degree, (1.0, hi), n_interior).unwrap();
        prop_assert_eq!(basis.n_basis(), n_interior + degree + 1);
        let x = 1.0 + frac * (hi - 1.0);
        let v = basis.eval(x).unwrap();
        let sum: f64 = v.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|&e| e >= 0.0));
        prop_assert!(v.iter().filter(|&&e| e != 0.0).count() <= degree + 1);
        let oracle = naive_basis_row(&basis, x);
        for (a, b) in v.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn outcome_transform_round_trips(raw in 0.0f64..1e7) {
        let y = data::transform_outcome(raw).unwrap();
        let back = data::inverse_transform(y);
        prop_assert!((back - raw).abs() <= 1e-9 * (1.0 + raw));
        prop_assert!(y >= 10f64.ln() - 1e-12);
    }

    #[test]
    fn dataset_assembly_is_order_insensitive(seed in 0u64..1_000_000) {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut records = Vec::new();
        for run in 1..=3u32 {
            let window = i64::from(run % 2);
            for t in [-4, -2, 0, 2] {
                for s in 1..=4i64 {
                    if rng.random::<f64>() < 0.8 {
                        records.push(ObsRecord {
                            run,
                            window,
                            time: t,
                            size_bin: s,
                            count: rng.random::<f64>() * 500.0,
                        });
                    }
                }
            }
            // guarantee the pre/post engine invariants hold per run
            records.push(ObsRecord { run, window, time: -6, size_bin: 1, count: 1.0 });
            records.push(ObsRecord { run, window, time: 1, size_bin: 1, count: 1.0 });
        }
        let a = Dataset::from_records(&records).unwrap();
        let mut shuffled = records.clone();
        for i in (1..shuffled.len()).rev() {
            let j = (rng.random::<u64>() % (i as u64 + 1)) as usize;
            shuffled.swap(i, j);
        }
        let b = Dataset::from_records(&shuffled).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn whiten_counts_and_theta_zero(
        theta in -0.95f64..0.89,
        seed in 0u64..100_000,
    ) {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        let n = 24;
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let present: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.75).collect();
        let n_present = present.iter().filter(|&&p| p).count();
        let n_segments = {
            let mut c = 0;
            let mut prev = false;
            for &p in &present {
                if p && !prev {
                    c += 1;
                }
                prev = p;
            }
            c
        };
        let st = whiten(&values, &present, theta, FirstObs::Stationary).unwrap();
        prop_assert_eq!(st.len(), n_present);
        let cond = whiten(&values, &present, theta, FirstObs::Conditioned).unwrap();
        prop_assert_eq!(cond.len(), n_present - n_segments);

        let id = whiten(&values, &present, 0.0, FirstObs::Stationary).unwrap();
        for inn in &id {
            prop_assert_eq!(inn.value, values[inn.index]);
            prop_assert_eq!(inn.weight, 1.0);
        }
    }
}
