use hcmarl_autodiff::Tensor;
use hcmarl_core::consensus::*;
use hcmarl_core::hierarchy::*;
use hcmarl_core::marl::normalize_advantages;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_head(seed: u64, input: usize, k: usize) -> (ConsensusHead, ConsensusConfig) {
    let mut cfg = ConsensusConfig::new(input, k);
    cfg.hidden = vec![6];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = ConsensusHead::new(&cfg, &mut rng).unwrap();
    head.teacher = cfg.encoder_spec().init(&mut rng, 1.0);
    (head, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn consensus_distributions_are_probability_vectors(
        seed in 0u64..100_000,
        k in 1usize..7,
        x in prop::collection::vec(-5.0f64..5.0, 3),
        center in prop::collection::vec(-2.0f64..2.0, 7),
    ) {
        let (mut head, cfg) = small_head(seed, 3, k);
        head.center = center[..k].to_vec();
        let row = Tensor::row(x.clone());
        let s = head.student_probs(&row, &cfg).unwrap();
        let (t, _) = teacher_distribution(&head, &row, &cfg).unwrap();
        for p in [s.data(), t.data()] {
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let c = consensus_category(&head, &x, &cfg).unwrap();
        prop_assert!(c.index() < k);
        prop_assert_eq!(c.index(), argmax(s.data()));
    }

    #[test]
    fn consensus_vector_weights_are_a_distribution(
        seed in 0u64..100_000,
        c0 in 0usize..3,
        c1 in 0usize..4,
        c2 in 0usize..2,
    ) {
        let layers = vec![
            LayerSpec::new(1, 1).unwrap(),
            LayerSpec::new(2, 1).unwrap(),
            LayerSpec::new(3, 2).unwrap(),
        ];
        let mut cfg = HierarchyConfig::uniform(layers, 2, &ConsensusConfig::new(1, 1), 4, 2);
        for (c, k) in cfg.consensus.iter_mut().zip([3, 4, 2]) {
            c.categories = k;
        }
        let agg = init_aggregator(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let cats = [ConsensusCategory(c0), ConsensusCategory(c1), ConsensusCategory(c2)];
        let (v, received) = consensus_vector(&agg, &cats, &cfg).unwrap();
        prop_assert_eq!(v.values().len(), 4);
        prop_assert!(v.values().iter().all(|x| x.is_finite()));
        prop_assert!(received.iter().all(|w| *w >= 0.0));
        prop_assert!((received.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn teacher_update_is_a_convex_blend(
        seed in 0u64..100_000,
        lambda in 0.0f64..=1.0,
    ) {
        let (mut head, mut cfg) = small_head(seed, 2, 3);
        cfg.ema_momentum = lambda;
        let (t0, s0) = (head.teacher.flat_values(), head.student.flat_values());
        let logits = Tensor::matrix(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        update_teacher(&mut head, &cfg, &logits).unwrap();
        for ((t, a), b) in head.teacher.flat_values().iter().zip(&t0).zip(&s0) {
            prop_assert!(*t >= a.min(*b) - 1e-12 && *t <= a.max(*b) + 1e-12);
        }
    }

    #[test]
    fn normalized_advantages_have_unit_moments(
        adv in prop::collection::vec(-100.0f64..100.0, 2..64),
    ) {
        let spread = adv.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - adv.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-6);
        let z = normalize_advantages(&adv);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-10);
        prop_assert!((var - 1.0).abs() < 1e-9);
    }
}
