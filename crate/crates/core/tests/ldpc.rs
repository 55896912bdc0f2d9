use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionbp::bethe::BpOptions;
use regionbp::ldpc::{
    ber_experiment, build_decoding_graph, decode, generate_ldpc, BerExperiment, ChannelModel, ConstraintMode,
    DecodeMethod, DecodeOptions, ParityCheckCode,
};
use regionbp::Error;

fn tight() -> DecodeOptions {
    DecodeOptions {
        bp: BpOptions {
            max_iterations: 5000,
            tolerance: 1e-13,
            damping: 0.5,
        },
        ..DecodeOptions::default()
    }
}

fn received(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.gen_range(0..2u8)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bsc_priors_are_normalized(p in 1e-6f64..0.499) {
        let ch = ChannelModel::bsc(p).unwrap();
        for r in [0u8, 1] {
            let s: f64 = ch.prior(r).iter().map(|e| (-e).exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn valid_syndromes_have_even_parity(seed in any::<u64>(), p in 0.01f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code = generate_ldpc(8, 2, 4, seed).unwrap();
        let ch = ChannelModel::bsc(p).unwrap();
        let g = build_decoding_graph(&code, &ch, &received(&mut rng, 8), ConstraintMode::Hard).unwrap();
        let r = decode(&code, &g, DecodeMethod::Bp, &DecodeOptions::default()).unwrap();
        if r.syndrome_ok {
            for c in &code.checks {
                prop_assert_eq!(c.iter().map(|&b| r.bits[b] as usize).sum::<usize>() % 2, 0);
            }
        }
    }

    #[test]
    fn bp_is_exact_on_repetition_and_single_check_codes(seed in any::<u64>(), n in 2usize..7, p in 0.01f64..0.4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let repetition = ParityCheckCode::new(n, (0..n - 1).map(|b| vec![b, b + 1]).collect()).unwrap();
        let single = ParityCheckCode::new(n, vec![(0..n).collect()]).unwrap();
        let ch = ChannelModel::bsc(p).unwrap();
        for code in [repetition, single] {
            let g = build_decoding_graph(&code, &ch, &received(&mut rng, n), ConstraintMode::Hard).unwrap();
            let exact = decode(&code, &g, DecodeMethod::Exact, &tight()).unwrap();
            let bp = decode(&code, &g, DecodeMethod::Bp, &tight()).unwrap();
            for (a, b) in exact.marginals.iter().zip(&bp.marginals) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn soft_constraints_approach_hard_ones_on_p3() {
    let code = ParityCheckCode::p3();
    let ch = ChannelModel::bsc(0.1).unwrap();
    let word = [1, 0, 0];
    let hard = build_decoding_graph(&code, &ch, &word, ConstraintMode::Hard).unwrap();
    let reference = decode(&code, &hard, DecodeMethod::Exact, &tight()).unwrap().marginals;
    let mut last = f64::INFINITY;
    for penalty in [8.0, 16.0, 32.0] {
        let g = build_decoding_graph(&code, &ch, &word, ConstraintMode::Soft { penalty }).unwrap();
        let m = decode(&code, &g, DecodeMethod::Exact, &tight()).unwrap().marginals;
        let tv = m.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(tv < last, "penalty {penalty}: {tv} !< {last}");
        last = tv;
    }
    assert!(last < 1e-10);
}

#[test]
fn generator_is_deterministic_and_regular() {
    let a = generate_ldpc(12, 3, 6, 9).unwrap();
    let b = generate_ldpc(12, 3, 6, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.checks.len(), 6);
    assert!(a.checks.iter().all(|c| c.len() == 6));
    let mut degree = vec![0; 12];
    a.checks.iter().flatten().for_each(|&v| degree[v] += 1);
    assert!(degree.iter().all(|&d| d == 3));
    assert!(matches!(generate_ldpc(5, 3, 6, 0), Err(Error::Code(_)) | Err(Error::Input(_))));
}

#[test]
fn experiment_does_not_depend_on_pool_size() {
    let exp = BerExperiment {
        code: generate_ldpc(12, 2, 4, 3).unwrap(),
        flip_probabilities: vec![0.03, 0.1],
        trials: 24,
        methods: vec![DecodeMethod::Bp, DecodeMethod::RegionalBp, DecodeMethod::Dd],
        constraint: ConstraintMode::Hard,
        decode: DecodeOptions::default(),
        seed: 17,
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ber_experiment(&exp).unwrap())
    };
    let reference = run(1);
    for threads in [2, 4, 7] {
        assert_eq!(run(threads), reference);
    }
    assert!(reference.rows.iter().all(|r| r.channel_flips > 0));
}
