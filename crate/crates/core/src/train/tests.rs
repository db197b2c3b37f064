use super::*;
use crate::grounding::{FeatureDims, HIDDEN};
use crate::lang::generate::{ProgramGenerator, ProgramKind, Vocabulary};
use crate::lang::{parse, Categories, ConceptSignature};
use crate::tensor::Tape;

const CONCEPTS: [&str; 3] = ["red", "blue", "cube"];

/// Registry whose unary concept k reads feature k exactly: logit +10 when
/// the feature is 1, -10 when 0.
fn crisp_registry() -> ConceptRegistry {
    let dims = FeatureDims {
        unary: CONCEPTS.len(),
        binary: 1,
        ternary: 1,
    };
    let mut reg = ConceptRegistry::new(dims);
    reg.ensure_category("Color", &["red", "blue"], 0).unwrap();
    for (k, c) in CONCEPTS.iter().enumerate() {
        reg.ensure_concept(&ConceptSignature::unary(c), 0).unwrap();
        let m = reg.get_mut(c).unwrap();
        let mut w1 = Tensor::zeros(&[CONCEPTS.len(), HIDDEN]);
        w1.data_mut()[k * HIDDEN] = 1.0;
        m.set_param("w1", w1);
        m.set_param("b1", Tensor::zeros(&[HIDDEN]));
        let mut w2 = Tensor::zeros(&[HIDDEN, 1]);
        w2.data_mut()[0] = 20.0;
        m.set_param("w2", w2);
        m.set_param("b2", Tensor::vector(vec![-10.0]));
    }
    reg
}

/// Entities as (color is red, is cube).
fn crisp_context(entities: &[(bool, bool)]) -> GroundingContext {
    let n = entities.len();
    let mut u = Vec::new();
    for &(red, cube) in entities {
        u.extend([red as u8 as f64, !red as u8 as f64, cube as u8 as f64]);
    }
    GroundingContext::new(
        Tensor::new(vec![n, 3], u).unwrap(),
        Tensor::zeros(&[n, n, 1]),
        None,
        Categories::new().with("Color", &["red", "blue"]),
    )
    .unwrap()
}

fn example(id: &str, program: &str, answer: Answer) -> TrainExample {
    TrainExample {
        id: id.into(),
        scene_id: "s0".into(),
        program: Some(parse(program).unwrap()),
        answer,
    }
}

fn toy_dataset() -> Dataset {
    let mut contexts = BTreeMap::new();
    contexts.insert(
        "s0".to_string(),
        crisp_context(&[(true, true), (false, true), (false, false)]),
    );
    let examples = vec![
        example(
            "q0",
            "exists(Object, lambda x: and(red(x), cube(x)))",
            Answer::Boolean(true),
        ),
        example(
            "q1",
            "exists(Object, lambda x: and(red(x), not(cube(x))))",
            Answer::Boolean(false),
        ),
        example("q2", "count(Object, lambda x: cube(x))", Answer::Count(2)),
        example(
            "q3",
            "point(Object, lambda x: and(blue(x), cube(x)))",
            Answer::Entity(1),
        ),
        example(
            "q4",
            "describe(Color, lambda c: color(c, iota(Object, lambda x: and(cube(x), red(x)))))",
            Answer::Word("red".into()),
        ),
    ];
    Dataset { contexts, examples }
}

#[test]
fn boolean_loss_at_zero_logit_is_ln_two() {
    let mut tape = Tape::new();
    let node = tape.scalar(0.0);
    let v = Value::Scalar {
        node,
        kind: crate::exec::ScalarKind::Logit,
    };
    let l = loss(&mut tape, &v, &Answer::Boolean(true)).unwrap();
    assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
    let l = loss(&mut tape, &v, &Answer::Boolean(false)).unwrap();
    assert!((tape.value(l).data()[0] - 0.693147).abs() < 1e-6);
    assert!(matches!(
        loss(&mut tape, &v, &Answer::Count(1)),
        Err(TrainError::TypeMismatch(_))
    ));
}

#[test]
fn confident_correct_answers_have_near_zero_loss() {
    let reg = crisp_registry();
    let data = toy_dataset();
    let ctx = &data.contexts["s0"];
    for ex in &data.examples {
        let l = example_loss(&reg, ctx, ex.program.as_ref().unwrap(), &ex.answer).unwrap();
        let bound = if ex.answer_type() == AnswerType::Count {
            1e-6
        } else {
            1e-3
        };
        assert!(l <= bound, "{}: {l}", ex.id);
    }
    // a one-hot correct distribution
    let mut tape = Tape::new();
    let logits = tape.leaf(Tensor::vector(vec![40.0, 0.0, 0.0]));
    let probs = tape.softmax(logits, 0).unwrap();
    let l = loss(
        &mut tape,
        &Value::Entity { probs, logits },
        &Answer::Entity(0),
    )
    .unwrap();
    assert!(tape.value(l).data()[0] <= 1e-6);
}

#[test]
fn crisp_model_scores_perfectly_and_evaluation_is_stable() {
    let reg = crisp_registry();
    let data = toy_dataset();
    let report = evaluate(&reg, &data);
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.executable, 5);
    assert_eq!(evaluate(&reg, &data), report);
    let mut shuffled = data.clone();
    shuffled.examples.reverse();
    assert_eq!(evaluate(&reg, &shuffled).accuracy, 1.0);
}

#[test]
fn non_executable_examples_count_as_wrong() {
    let reg = crisp_registry();
    let mut data = toy_dataset();
    data.examples[0].program = None;
    data.examples[1].program = Some(parse("exists(Object, lambda x: sphere(x))").unwrap());
    let r = evaluate(&reg, &data);
    assert_eq!(r.total, 5);
    assert_eq!(r.executable, 3);
    assert_eq!(r.accuracy, 3.0 / 5.0);
    assert_eq!(r.executable_accuracy, 1.0);
}

#[test]
fn answer_type_must_match_program_root() {
    let ex = example(
        "q",
        "count(Object, lambda x: red(x))",
        Answer::Boolean(true),
    );
    assert!(matches!(ex.check(), Err(TrainError::TypeMismatch(_))));
    let ex = example(
        "q",
        "and(view(Object, lambda v: red(v)), count(Object, lambda x: cube(x)))",
        Answer::Count(1),
    );
    assert_eq!(ex.check(), Ok(()));
}

fn random_registry(seed: u64) -> ConceptRegistry {
    let mut reg = ConceptRegistry::new(FeatureDims {
        unary: 3,
        binary: 1,
        ternary: 1,
    });
    reg.ensure_category("Color", &["red", "blue"], seed)
        .unwrap();
    reg.ensure_concept(&ConceptSignature::unary("cube"), seed)
        .unwrap();
    reg
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut reg = random_registry(1);
    let before = reg.clone();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        batch_size: 2,
        ..TrainConfig::default()
    };
    train(&mut reg, &toy_dataset(), None, &cfg, |_| {}).unwrap();
    assert_eq!(reg, before);
}

#[test]
fn training_is_reproducible_and_fits_toy_data() {
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 60,
        batch_size: 4,
        seed: 3,
        balanced: true,
    };
    let data = toy_dataset();
    let mut a = random_registry(1);
    let ha = train(&mut a, &data, Some(&data), &cfg, |_| {}).unwrap();
    let mut b = random_registry(1);
    let hb = train(&mut b, &data, Some(&data), &cfg, |_| {}).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert!(ha.last().unwrap().train_loss < ha[0].train_loss);
    assert_eq!(ha.last().unwrap().val.as_ref().unwrap().accuracy, 1.0);
}

#[test]
fn gradient_audit_accepts_real_programs() {
    let reg = crisp_registry();
    let data = toy_dataset();
    for ex in &data.examples {
        audit_gradient_flow(&reg, &data.contexts["s0"], ex).unwrap();
    }
}

#[test]
fn small_step_decreases_single_example_loss() {
    let vocab = Vocabulary {
        unary: CONCEPTS.map(String::from).to_vec(),
        categories: Categories::new().with("Color", &["red", "blue"]),
        ..Vocabulary::default()
    };
    let generator = ProgramGenerator::new(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let reg0 = random_registry(5);
    let kinds = [
        ProgramKind::Boolean,
        ProgramKind::Count,
        ProgramKind::Entity,
        ProgramKind::Text,
    ];
    let mut checked = 0;
    while checked < 50 {
        let kind = kinds[checked % kinds.len()];
        let program = generator.generate_kind(kind, &mut rng);
        let n = rng.gen_range(2..=5);
        let ents: Vec<(bool, bool)> = (0..n)
            .map(|_| (rng.gen_bool(0.5), rng.gen_bool(0.5)))
            .collect();
        let mut ctx_u = crisp_context(&ents).unary().clone();
        for x in ctx_u.data_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
        let ctx = GroundingContext::new(
            ctx_u,
            Tensor::zeros(&[n, n, 1]),
            None,
            reg0.categories().clone(),
        )
        .unwrap();
        let answer = match AnswerType::of_program(&program).unwrap() {
            AnswerType::Boolean => Answer::Boolean(rng.gen_bool(0.5)),
            AnswerType::Count => Answer::Count(rng.gen_range(0..=n as u32)),
            AnswerType::Entity => Answer::Entity(rng.gen_range(0..n)),
            AnswerType::Word => Answer::Word(["red", "blue"][rng.gen_range(0..2)].into()),
        };
        let mut reg = reg0.clone();
        let (before, grads) = example_gradients(&reg, &ctx, &program, &answer).unwrap();
        if grads.values().all(|g| g.data().iter().all(|&x| x == 0.0)) {
            continue;
        }
        Adam::new(1e-4).step(&mut reg, &grads).unwrap();
        let after = example_loss(&reg, &ctx, &program, &answer).unwrap();
        assert!(after < before, "{program}: {before} -> {after}");
        checked += 1;
    }
}

#[test]
fn subsample_is_deterministic() {
    let data = toy_dataset();
    let a = data.subsample(0.4, 9).unwrap();
    let b = data.subsample(0.4, 9).unwrap();
    assert_eq!(a.examples, b.examples);
    assert_eq!(a.len(), 2);
    assert!(data.subsample(0.0, 1).is_err());
}
