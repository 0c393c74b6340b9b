use nex_core::dataio::{format_long_csv, parse_long_csv, parse_value_csv, format_value_csv};
use nex_core::nexmodel::{NexConfig, NexModel, Variant};
use nex_core::oracle::nex_representation;
use nex_core::sampler::{run_chains, HmcConfig, LogDensity};
use nex_core::simulate::{simulate, Generator, SimSpec};
use nex_core::Tensor3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn small_spec(generator: Generator, symmetric: bool, seed: u64) -> SimSpec {
    SimSpec {
        generator,
        symmetric,
        n: 6,
        m: 5,
        t: 7,
        k_true: 3,
        seed,
        ..SimSpec::default()
    }
}

#[test]
fn simulated_network_round_trips_through_csv() {
    for (g, sym) in [(Generator::Nex, false), (Generator::Nex, true), (Generator::Dlf, true), (Generator::Dsbm, true)] {
        let sim = simulate(&small_spec(g, sym, 3)).unwrap();
        let text = format_long_csv(&sim.data);
        let back = parse_long_csv(&text, Path::new("mem.csv")).unwrap();
        assert_eq!(back, sim.data, "{g:?}");
        assert_eq!(format_long_csv(&back), text);
        let pi = parse_value_csv(&format_value_csv(&sim.truth_pi, "pi"), Path::new("pi.csv")).unwrap();
        assert_eq!(pi, sim.truth_pi);
    }
}

#[test]
fn same_seed_same_dataset() {
    let a = simulate(&small_spec(Generator::Nex, false, 9)).unwrap();
    let b = simulate(&small_spec(Generator::Nex, false, 9)).unwrap();
    let c = simulate(&small_spec(Generator::Nex, false, 10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.truth_pi, c.truth_pi);
}

#[test]
fn short_fit_on_simulated_data_is_finite_and_reproducible() {
    let sim = simulate(&small_spec(Generator::Nex, false, 4)).unwrap();
    let cfg = NexConfig::for_data(&sim.data, Variant::Bipartite, 2, 3, 0.1).unwrap();
    let model = NexModel::new(cfg, sim.data).unwrap();
    let hmc = HmcConfig {
        warmup: 40,
        samples: 10,
        chains: 2,
        seed: 5,
        ..HmcConfig::default()
    };
    let draws = run_chains(&model, &hmc, |_| vec![0.0; model.dim()]).unwrap();
    let again = run_chains(&model, &hmc, |_| vec![0.0; model.dim()]).unwrap();
    assert_eq!(draws, again);
    for c in &draws {
        assert_eq!(c.n_draws(), 10);
        for row in c.rows() {
            let pi = model.propensity(row).unwrap();
            assert!(pi.as_slice().iter().all(|s| s.is_finite()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_small_tensor_has_an_exact_representation(n in 1usize..5, m in 1usize..5, t in 1usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Tensor3::from_fn((n, m, t), |_, _, _| rng.random_range(-2.0..2.0));
        let (_, _, c) = nex_representation(&s, None).unwrap();
        prop_assert!(c.nex_error <= 1e-8, "error {}", c.nex_error);
        prop_assert!(c.h0 <= n.min(m));
    }
}
