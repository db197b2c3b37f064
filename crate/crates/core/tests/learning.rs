use softlogic_core::datagen::{
    gen_qa_split, gen_scene, learnable_registry, oracle_registry, to_dataset, SceneConfig,
    SceneFeatureProvider, SplitConfig,
};
use softlogic_core::grounding::FeatureProvider;
use softlogic_core::train::{check_gradients, evaluate, train, REL_ERROR_FLOOR};
use softlogic_core::{parse, Answer, ConceptRegistry, TrainConfig};

fn split(name: &str, scenes: usize, seed: u64) -> Vec<softlogic_core::datagen::QaRecord> {
    let cfg = SceneConfig::default();
    gen_qa_split(&SplitConfig {
        split: name.into(),
        scenes,
        seed,
        scene: cfg,
        qa: Default::default(),
        max_boolean_share: 0.55,
    })
    .unwrap()
    .1
}

#[test]
fn short_training_run_learns_and_checkpoints_round_trip() {
    let vocab = SceneConfig::default().vocab;
    let provider = SceneFeatureProvider::new(vocab.clone(), 0.05, 7);
    let train_set = to_dataset(&split("train", 120, 1), &provider, true).unwrap();
    let val_set = to_dataset(&split("val", 15, 1), &provider, true).unwrap();
    let mut reg = learnable_registry(&vocab, 3, false).unwrap();
    let before = evaluate(&reg, &val_set).accuracy;
    let cfg = TrainConfig {
        epochs: 6,
        ..TrainConfig::default()
    };
    let history = train(&mut reg, &train_set, Some(&val_set), &cfg, |_| {}).unwrap();
    assert_eq!(history.len(), 6);
    assert!(history[5].train_loss < history[0].train_loss);
    let after = history[5].val.as_ref().unwrap().accuracy;
    assert!(after > before + 0.2, "{before} -> {after}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    reg.save(&path).unwrap();
    let back = ConceptRegistry::load(&path).unwrap();
    assert_eq!(back.to_bytes(), reg.to_bytes());
    assert_eq!(
        evaluate(&back, &val_set).accuracy.to_bits(),
        after.to_bits()
    );
}

#[test]
fn oracle_weights_answer_generated_questions() {
    let vocab = SceneConfig::default().vocab;
    let provider = SceneFeatureProvider::new(vocab, 0.0, 7);
    let reg = oracle_registry(&provider, SceneConfig::default().axis_gap).unwrap();
    let val = to_dataset(&split("val", 20, 9), &provider, true).unwrap();
    assert_eq!(evaluate(&reg, &val).accuracy, 1.0);
}

#[test]
fn gradients_match_finite_differences_on_a_fresh_model() {
    let cfg = SceneConfig::default();
    let provider = SceneFeatureProvider::new(cfg.vocab.clone(), 0.05, 7);
    let reg = learnable_registry(&cfg.vocab, 5, false).unwrap();
    let scene = gen_scene(&cfg, "g", 4).unwrap();
    let ctx = provider.build_context(&scene).unwrap();
    for (p, a) in [
        (
            "exists(Object, lambda x: and(red(x), front(x, iota(Object, lambda y: sphere(y)))))",
            Answer::Boolean(true),
        ),
        (
            "count(Object, lambda x: or(metal(x), small(x)))",
            Answer::Count(2),
        ),
        (
            "less_than(count(Object, lambda x: cube(x)), 3)",
            Answer::Boolean(false),
        ),
    ] {
        let r = check_gradients(&reg, &ctx, &parse(p).unwrap(), &a, 6, 1e-5, 0).unwrap();
        assert!(r.checked > 0);
        assert!(
            r.max_rel_error <= 1e-4,
            "{p}: {r:?} (floor {REL_ERROR_FLOOR})"
        );
    }
}
