use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use softlogic_core::datagen::{
    gen_scene, learnable_registry, oracle_registry, SceneConfig, SceneFeatureProvider,
};
use softlogic_core::grounding::FeatureProvider;
use softlogic_core::lang::generate::{ProgramGenerator, Vocabulary};
use softlogic_core::train::example_gradients;
use softlogic_core::{execute, parse, pretty_print, Answer, Categories};

const PROGRAMS: [&str; 4] = [
    "exists(Object, lambda x: and(red(x), left(x, iota(Object, lambda y: cube(y)))))",
    "count(Object, lambda x: and(large(x), front(x, iota(Object, lambda y: blue(y)))))",
    "greater_than(count(Object, lambda x: cube(x)), count(Object, lambda y: sphere(y)))",
    "describe(Color, lambda c: color(c, iota(Object, lambda x: cylinder(x))))",
];

fn corpus(n: usize) -> Vec<String> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let g = ProgramGenerator::new(Vocabulary {
        unary: s(&["red", "blue", "cube", "sphere"]),
        binary: s(&["left", "front"]),
        ternary: s(&["between"]),
        categories: Categories::new().with("Color", &["red", "blue"]),
        ..Default::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..n)
        .map(|_| pretty_print(&g.generate(&mut rng)))
        .collect()
}

fn parsing(c: &mut Criterion) {
    let texts = corpus(200);
    c.bench_function("parse 200 generated programs", |b| {
        b.iter(|| {
            for t in &texts {
                black_box(parse(t).unwrap());
            }
        })
    });
}

fn execution(c: &mut Criterion) {
    let cfg = SceneConfig::default();
    let provider = SceneFeatureProvider::new(cfg.vocab.clone(), 0.05, 7);
    let oracle = oracle_registry(&provider, cfg.axis_gap).unwrap();
    let learned = learnable_registry(&cfg.vocab, 0, false).unwrap();
    let scene = gen_scene(&cfg, "bench", 1).unwrap();
    let ctx = provider.build_context(&scene).unwrap();
    let programs: Vec<_> = PROGRAMS.iter().map(|p| parse(p).unwrap()).collect();

    c.bench_function("build scene features", |b| {
        b.iter(|| black_box(provider.build_context(&scene).unwrap()))
    });
    c.bench_function("execute 4 programs, fixed concepts", |b| {
        b.iter(|| {
            for p in &programs {
                black_box(execute(p, &ctx, &oracle).unwrap());
            }
        })
    });
    c.bench_function("execute 4 programs, MLP concepts", |b| {
        b.iter(|| {
            for p in &programs {
                black_box(execute(p, &ctx, &learned).unwrap());
            }
        })
    });
    let answers = [
        Answer::Boolean(true),
        Answer::Count(1),
        Answer::Boolean(false),
        Answer::Word("red".into()),
    ];
    c.bench_function("loss and gradients, 4 programs", |b| {
        b.iter(|| {
            for (p, a) in programs.iter().zip(&answers) {
                black_box(example_gradients(&learned, &ctx, p, a).unwrap());
            }
        })
    });
}

criterion_group!(benches, parsing, execution);
criterion_main!(benches);
