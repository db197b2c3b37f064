use super::*;
use crate::exec::{execute, Executor, Readout, Value};
use crate::lang::{parse, ArgSort};
use rand::Rng;

const DIMS: FeatureDims = FeatureDims {
    unary: 5,
    binary: 3,
    ternary: 2,
};

fn random_ctx(n: usize, seed: u64, ternary: bool) -> GroundingContext {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = |shape: &[usize]| {
        let len = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    };
    let u = t(&[n, DIMS.unary]);
    let b = t(&[n, n, DIMS.binary]);
    let tr = ternary.then(|| t(&[n, n, n, DIMS.ternary]));
    GroundingContext::new(u, b, tr, Categories::new().with("Color", &["red", "blue"])).unwrap()
}

/// Scalar MLP forward, written out with loops.
fn mlp_oracle(m: &ConceptModule, x: &[f64]) -> f64 {
    let p = m.params();
    let (w1, b1, w2, b2) = (&p["w1"], &p["b1"], &p["w2"], &p["b2"]);
    let mut out = b2.data()[0];
    for h in 0..HIDDEN {
        let mut z = b1.data()[h];
        for (i, xi) in x.iter().enumerate() {
            z += xi * w1.data()[i * HIDDEN + h];
        }
        out += z.max(0.0) * w2.data()[h];
    }
    out
}

/// Open-variable logits of a concept via a throwaway executor.
fn concept_values(
    reg: &ConceptRegistry,
    ctx: &GroundingContext,
    name: &str,
    arity: usize,
) -> Vec<f64> {
    let mut ex = Executor::new(ctx, reg);
    let vars: Vec<&str> = ["x", "y", "z"][..arity].to_vec();
    let v = ex
        .exec_concept(name, &Expression::apply(name, &vars).args_owned())
        .unwrap();
    let Value::Logits { node, .. } = v else {
        panic!()
    };
    ex.tape().value(node).data().to_vec()
}

trait ArgsOwned {
    fn args_owned(&self) -> Vec<Arg>;
}

impl ArgsOwned for Expression {
    fn args_owned(&self) -> Vec<Arg> {
        match self {
            Expression::Concept { args, .. } => args.clone(),
            _ => unreachable!(),
        }
    }
}

#[test]
fn ensure_concept_is_idempotent_and_seeded() {
    let mut a = ConceptRegistry::new(DIMS);
    let first = a
        .ensure_concept(&ConceptSignature::unary("sphere"), 7)
        .unwrap()
        .clone();
    let again = a
        .ensure_concept(&ConceptSignature::unary("sphere"), 99)
        .unwrap()
        .clone();
    assert_eq!(first, again);
    let mut b = ConceptRegistry::new(DIMS);
    b.ensure_concept(&ConceptSignature::unary("cube"), 7)
        .unwrap();
    b.ensure_concept(&ConceptSignature::unary("sphere"), 7)
        .unwrap();
    assert_eq!(b.get("sphere").unwrap(), &first);
    let mut c = ConceptRegistry::new(DIMS);
    c.ensure_concept(&ConceptSignature::unary("sphere"), 8)
        .unwrap();
    assert_ne!(c.get("sphere").unwrap(), &first);
}

#[test]
fn arity_conflict_is_rejected() {
    let mut reg = ConceptRegistry::new(DIMS);
    reg.ensure_concept(&ConceptSignature::binary("left"), 0)
        .unwrap();
    let err = reg
        .ensure_concept(&ConceptSignature::new("left", vec![ArgSort::Object; 3]), 0)
        .unwrap_err();
    assert_eq!(
        err,
        GroundingError::ArityConflict {
            name: "left".into(),
            existing: 2,
            requested: 3
        }
    );
}

#[test]
fn unary_parameter_count() {
    let mut reg = ConceptRegistry::new(DIMS);
    let m = reg
        .ensure_concept(&ConceptSignature::unary("red"), 1)
        .unwrap();
    assert_eq!(m.parameter_count(), (DIMS.unary * 128 + 128) + (128 + 1));
    let m = reg
        .ensure_concept(&ConceptSignature::binary("left"), 1)
        .unwrap();
    assert_eq!(m.input_dim, DIMS.binary);
}

#[test]
fn zero_weights_give_bias() {
    let mut reg = ConceptRegistry::new(DIMS);
    reg.ensure_concept(&ConceptSignature::unary("red"), 1)
        .unwrap();
    let m = reg.get_mut("red").unwrap();
    for name in ["w1", "b1", "w2"] {
        let shape = m.params()[name].shape().to_vec();
        m.set_param(name, Tensor::zeros(&shape));
    }
    m.set_param("b2", Tensor::vector(vec![0.75]));
    let ctx = random_ctx(7, 3, false);
    assert_eq!(concept_values(&reg, &ctx, "red", 1), vec![0.75; 7]);
}

#[test]
fn batched_forward_matches_per_tuple_loop() {
    let mut reg = ConceptRegistry::new(DIMS);
    reg.ensure_concept(&ConceptSignature::unary("red"), 2)
        .unwrap();
    reg.ensure_concept(&ConceptSignature::binary("left"), 2)
        .unwrap();
    let n = 4;
    let ctx = random_ctx(n, 5, false);
    let got = concept_values(&reg, &ctx, "red", 1);
    for i in 0..n {
        let x = &ctx.unary().data()[i * DIMS.unary..(i + 1) * DIMS.unary];
        assert!((got[i] - mlp_oracle(reg.get("red").unwrap(), x)).abs() < 1e-12);
    }
    let got = concept_values(&reg, &ctx, "left", 2);
    for i in 0..n {
        for j in 0..n {
            let base = (i * n + j) * DIMS.binary;
            let x = &ctx.binary().data()[base..base + DIMS.binary];
            let want = mlp_oracle(reg.get("left").unwrap(), x);
            assert!((got[i * n + j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn viewpoint_concepts_need_ternary_features_and_slice_by_anchor() {
    let mut reg = ConceptRegistry::new(DIMS);
    reg.mark_viewpoint("right").unwrap();
    let p = "and(view(Object, lambda v: red(v)), exists(Object, lambda x: exists(Object, lambda y: right(x, y))))";
    let e = parse(p).unwrap();
    reg.ensure_program(&e, 0).unwrap();
    assert_eq!(reg.get("right").unwrap().input_dim, DIMS.ternary);
    let plain = random_ctx(3, 1, false);
    assert_eq!(
        execute(&e, &plain, &reg),
        Err(ExecError::NoTernaryFeatures("right".into()))
    );
    // with a near one-hot anchor the binary logits equal the ternary slice
    let n = 3;
    let ctx = random_ctx(n, 1, true);
    let red = reg.get_mut("red").unwrap();
    red.set_param("w1", Tensor::zeros(&[DIMS.unary, HIDDEN]));
    red.set_param("b1", Tensor::zeros(&[HIDDEN]));
    let mut ex = Executor::new(&ctx, &reg);
    ex.execute(&parse("view(Object, lambda v: red(v))").unwrap())
        .unwrap();
    let anchor = ex.anchor().unwrap();
    let dist = ex.tape().value(anchor).data().to_vec();
    let v = ex
        .exec_concept(
            "right",
            &Expression::apply("right", &["x", "y"]).args_owned(),
        )
        .unwrap();
    let Value::Logits { node, .. } = v else {
        panic!()
    };
    let got = ex.tape().value(node).data().to_vec();
    let m = reg.get("right").unwrap();
    for i in 0..n {
        for j in 0..n {
            let want: f64 = (0..n)
                .map(|k| {
                    let base = ((i * n + j) * n + k) * DIMS.ternary;
                    dist[k]
                        * mlp_oracle(m, &ctx.ternary().unwrap().data()[base..base + DIMS.ternary])
                })
                .sum();
            assert!((got[i * n + j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn text_modifiers_get_their_own_head() {
    let mut reg = ConceptRegistry::new(DIMS);
    let e = parse("do(Action, lambda a: put(a, iota(Object, lambda x: red(x)), iota(Object, lambda y: blue(y)), \"far\"))")
        .unwrap();
    reg.ensure_program(&e, 0).unwrap();
    assert_eq!(reg.get("put").unwrap().heads(), vec!["far".to_string()]);
    let ctx = random_ctx(3, 2, false);
    assert!(matches!(
        execute(&e, &ctx, &reg),
        Ok(Readout::Action { .. })
    ));
}

#[test]
fn describe_registers_members_and_stays_parameter_free() {
    let mut reg = ConceptRegistry::new(DIMS);
    reg.ensure_category("Color", &["red", "blue"], 0).unwrap();
    let e = parse("describe(Color, lambda c: color(c, iota(Object, lambda x: cube(x))))").unwrap();
    reg.ensure_program(&e, 0).unwrap();
    assert_eq!(reg.get("color").unwrap().kind, ModuleKind::Symbolic);
    assert_eq!(reg.get("color").unwrap().parameter_count(), 0);
    let ctx = random_ctx(4, 9, false);
    assert!(matches!(execute(&e, &ctx, &reg), Ok(Readout::Word { .. })));
}

#[test]
fn aliases_resolve_to_the_canonical_module() {
    let mut reg = ConceptRegistry::new(DIMS);
    reg.add_alias("in-front-of", "front");
    reg.ensure_concept(&ConceptSignature::binary("front"), 0)
        .unwrap();
    let ctx = random_ctx(3, 4, false);
    let e1 = parse("exists(Object, lambda x: exists(Object, lambda y: front(x, y)))").unwrap();
    let e2 =
        parse("exists(Object, lambda x: exists(Object, lambda y: in-front-of(x, y)))").unwrap();
    assert_eq!(execute(&e1, &ctx, &reg), execute(&e2, &ctx, &reg));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut reg = ConceptRegistry::new(DIMS);
    reg.mark_viewpoint("right").unwrap();
    reg.add_alias("in-front-of", "front");
    reg.ensure_category("Color", &["red", "blue"], 3).unwrap();
    reg.ensure_concept(&ConceptSignature::binary("right"), 3)
        .unwrap();
    reg.ensure_concept(&ConceptSignature::binary("front"), 3)
        .unwrap();
    let bytes = reg.to_bytes();
    let back = ConceptRegistry::from_bytes(&bytes).unwrap();
    assert_eq!(back, reg);
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    reg.save(&path).unwrap();
    let loaded = ConceptRegistry::load(&path).unwrap();
    let ctx = random_ctx(4, 8, true);
    let e = parse("exists(Object, lambda x: and(red(x), exists(Object, lambda y: front(x, y))))")
        .unwrap();
    assert_eq!(execute(&e, &ctx, &loaded), execute(&e, &ctx, &reg));

    assert!(matches!(
        ConceptRegistry::from_bytes(&bytes[..bytes.len() - 5]),
        Err(GroundingError::CorruptFile(_))
    ));
    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(matches!(
        ConceptRegistry::from_bytes(&flipped),
        Err(GroundingError::CorruptFile(_))
    ));
    let mut future = bytes;
    future[8] = 9;
    assert_eq!(
        ConceptRegistry::from_bytes(&future),
        Err(GroundingError::VersionMismatch {
            found: 9,
            expected: 1
        })
    );
}

#[test]
fn missing_concept_fails_at_execution_not_load() {
    let mut reg = ConceptRegistry::new(DIMS);
    reg.ensure_concept(&ConceptSignature::unary("red"), 0)
        .unwrap();
    let loaded = ConceptRegistry::from_bytes(&reg.to_bytes()).unwrap();
    let ctx = random_ctx(3, 0, false);
    let e = parse("exists(Object, lambda x: cube(x))").unwrap();
    assert_eq!(
        execute(&e, &ctx, &loaded),
        Err(ExecError::UnregisteredConcept {
            name: "cube".into(),
            arity: 1
        })
    );
}

#[test]
fn gradients_reach_exactly_the_used_modules() {
    let mut reg = ConceptRegistry::new(DIMS);
    for c in ["red", "blue", "cube"] {
        reg.ensure_concept(&ConceptSignature::unary(c), 0).unwrap();
    }
    reg.ensure_concept(&ConceptSignature::binary("left"), 0)
        .unwrap();
    let ctx = random_ctx(4, 6, false);
    let e =
        parse("exists(Object, lambda x: and(red(x), left(x, iota(Object, lambda y: cube(y)))))")
            .unwrap();
    let mut ex = Executor::new(&ctx, &reg);
    let Value::Scalar { node, .. } = ex.execute(&e).unwrap() else {
        panic!()
    };
    let grads = ex.tape().backward(node).unwrap();
    let reached = ex.bindings().gradients(&grads);
    let concepts: BTreeSet<String> = reached.keys().map(|p| p.concept.clone()).collect();
    let want: BTreeSet<String> = ["cube", "left", "red"].map(String::from).into();
    assert_eq!(concepts, want);
    assert_eq!(reached.len(), 12);
}
