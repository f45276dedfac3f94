use mosaic_core::dataio::{pool_from_bytes, pool_to_bytes};
use mosaic_core::experiment::pseudo_benchmark;
use mosaic_core::indep::DindepKind;
use mosaic_core::mosaic::{
    decide_all, decide_new_pair, random_training, EnsembleConfig, Scoring, SearchSpace, TesseraPool,
};
use mosaic_core::synth::SynthConfig;
use mosaic_core::Verdict;

fn small() -> (Vec<mosaic_core::CausalPair>, EnsembleConfig) {
    let synth = SynthConfig {
        n_per_pair: 160,
        ..SynthConfig::default()
    };
    let pairs = pseudo_benchmark(&synth, 8, 2, 5).unwrap();
    let cfg = EnsembleConfig {
        n_models: 4,
        retries: 2,
        set_size: [2, 4],
        seed: 9,
        threshold_samples: 5,
        search: SearchSpace {
            depth: [2, 3],
            width: [6, 10],
            max_steps: [80, 120],
            ..SearchSpace::default()
        },
        ..EnsembleConfig::default()
    };
    (pairs, cfg)
}

#[test]
fn training_is_reproducible_and_survives_serialization() {
    let (pairs, cfg) = small();
    let a = TesseraPool::evaluate(&pairs, random_training(&pairs, &cfg).unwrap(), cfg.measure).unwrap();
    let b = TesseraPool::evaluate(&pairs, random_training(&pairs, &cfg).unwrap(), cfg.measure).unwrap();
    assert_eq!(a.evals, b.evals);
    assert_eq!(a.vacc, b.vacc);
    for e in &a.entries {
        assert!(e.set.len() >= 2 && e.set.len() <= 4);
        assert!(e.set.windows(2).all(|w| w[0] < w[1]));
        assert!((0.0..=1.0).contains(&e.cacc));
    }
    let back = pool_from_bytes(&pool_to_bytes(&a)).unwrap();
    let d1 = decide_all(&a, 0.5, 0.5, Scoring::Margin);
    let d2 = decide_all(&back, 0.5, 0.5, Scoring::Margin);
    assert_eq!(d1, d2);
    for d in &d1 {
        assert!(matches!(d.verdict, Verdict::Cause(_) | Verdict::Inconclusive));
        assert_eq!(d.empty_pool, d.tesserae.is_empty());
    }
}

#[test]
fn new_pair_evidence_matches_stored_evaluations() {
    let (pairs, cfg) = small();
    let pool = TesseraPool::evaluate(&pairs, random_training(&pairs, &cfg).unwrap(), cfg.measure).unwrap();
    let s = 3;
    let score = decide_new_pair(&pool, "x", &pairs[s].points, -1.0, -1.0, Scoring::Margin, DindepKind::DcorComplement)
        .unwrap();
    let usable = pool.entries.iter().filter(|e| e.model.is_some()).count();
    assert_eq!(score.tesserae.len(), usable);
    for (k, &n) in score.tesserae.iter().enumerate() {
        let e = pool.evals[n][s];
        assert_eq!(score.w_ns[k], [e.w1, e.w2]);
    }
    let none = decide_new_pair(&pool, "x", &pairs[s].points, 1.0, 1.0, Scoring::Margin, DindepKind::DcorComplement)
        .unwrap();
    assert!(none.empty_pool);
    assert_eq!(none.verdict, Verdict::Inconclusive);
}

#[test]
fn too_few_pairs_for_the_set_size() {
    let (pairs, cfg) = small();
    let cfg = EnsembleConfig {
        set_size: [2, 8],
        ..cfg
    };
    assert!(random_training(&pairs[..3], &cfg).is_err());
}
