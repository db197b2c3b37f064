use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lang::{canonicalize, CompareKind, Expression, QuantKind, Sort};
use crate::train::{Answer, AnswerType};

use super::oracle::SymbolicOracle;
use super::scene::{Attribute, AttributeVocab, Entity, Scene, RELATIONS};

/// A conjunction of attribute values, e.g. "large red cube".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Desc {
    pub values: Vec<(Attribute, String)>,
}

impl Desc {
    pub fn of(entity: &Entity, attrs: &[Attribute]) -> Self {
        let mut values: Vec<(Attribute, String)> = attrs
            .iter()
            .map(|&a| (a, entity.get(a).to_string()))
            .collect();
        values.sort();
        Self { values }
    }

    pub fn random<R: Rng>(vocab: &AttributeVocab, max_attrs: usize, rng: &mut R) -> Self {
        let k = rng.gen_range(1..=max_attrs.clamp(1, 4));
        let attrs = Attribute::ALL.into_iter().choose_multiple(rng, k);
        let mut values: Vec<(Attribute, String)> = attrs
            .into_iter()
            .map(|a| (a, vocab.values(a).choose(rng).expect("non-empty").clone()))
            .collect();
        values.sort();
        Self { values }
    }

    pub fn matches(&self, e: &Entity) -> bool {
        self.values.iter().all(|(a, v)| e.get(*a) == v)
    }

    pub fn matching(&self, scene: &Scene) -> Vec<usize> {
        (0..scene.len())
            .filter(|&i| self.matches(&scene.entities[i]))
            .collect()
    }

    pub fn uses(&self, a: Attribute) -> bool {
        self.values.iter().any(|(b, _)| *b == a)
    }

    /// Truth of the description for `var`.
    pub fn body(&self, var: &str) -> Expression {
        let mut atoms: Vec<Expression> = self
            .values
            .iter()
            .map(|(_, v)| Expression::apply(v, &[var]))
            .collect();
        if atoms.len() == 1 {
            atoms.pop().unwrap()
        } else {
            Expression::and(atoms)
        }
    }

    pub fn text(&self) -> String {
        self.phrase(false)
    }

    pub fn plural(&self) -> String {
        self.phrase(true)
    }

    fn phrase(&self, plural: bool) -> String {
        let get = |a: Attribute| {
            self.values
                .iter()
                .find(|(b, _)| *b == a)
                .map(|(_, v)| v.as_str())
        };
        let mut words: Vec<&str> = [Attribute::Size, Attribute::Color, Attribute::Material]
            .into_iter()
            .filter_map(get)
            .collect();
        let noun = get(Attribute::Shape).unwrap_or("object");
        words.push(noun);
        let mut s = words.join(" ");
        if plural {
            s.push('s');
        }
        s
    }
}

pub fn relation_text(rel: &str) -> &'static str {
    match rel {
        "left" => "left of",
        "right" => "right of",
        "front" => "in front of",
        "behind" => "behind",
        "view_left" => "to the left of",
        "view_right" => "to the right of",
        "view_front" => "closer than",
        _ => "farther than",
    }
}

pub fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaTemplate {
    Exists,
    Count,
    Describe,
    RelExists,
    RelCount,
    CompareCounts,
    CountEquals,
    Forall,
    Point,
}

impl QaTemplate {
    pub const ALL: [QaTemplate; 9] = [
        QaTemplate::Exists,
        QaTemplate::Count,
        QaTemplate::Describe,
        QaTemplate::RelExists,
        QaTemplate::RelCount,
        QaTemplate::CompareCounts,
        QaTemplate::CountEquals,
        QaTemplate::Forall,
        QaTemplate::Point,
    ];

    fn is_boolean(self) -> bool {
        matches!(
            self,
            QaTemplate::Exists
                | QaTemplate::RelExists
                | QaTemplate::CompareCounts
                | QaTemplate::CountEquals
                | QaTemplate::Forall
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaConfig {
    pub questions_per_scene: usize,
    pub templates: Vec<QaTemplate>,
    /// Largest number of attributes in one description.
    pub max_desc_attrs: usize,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            questions_per_scene: 10,
            templates: QaTemplate::ALL.to_vec(),
            max_desc_attrs: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaItem {
    pub question: String,
    pub program: Expression,
    pub answer: Answer,
}

impl QaItem {
    pub fn answer_type(&self) -> AnswerType {
        self.answer.answer_type()
    }
}

/// Attempts per question before the slot is skipped.
const TRIES: usize = 40;

/// Questions about one scene; answers come from the symbolic oracle.
/// Boolean questions alternate their target answer so that each scene
/// contributes a balanced mix.
pub fn gen_qa(scene: &Scene, vocab: &AttributeVocab, config: &QaConfig, seed: u64) -> Vec<QaItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut want_true = rng.gen_bool(0.5);
    let mut out = Vec::with_capacity(config.questions_per_scene);
    if config.templates.is_empty() {
        return out;
    }
    for _ in 0..config.questions_per_scene {
        let template = *config.templates.choose(&mut rng).expect("non-empty");
        for _ in 0..TRIES {
            let Some((question, program)) = propose(template, scene, vocab, config, &mut rng)
            else {
                continue;
            };
            let program = canonicalize(&program);
            let Ok(answer) = SymbolicOracle::answer(scene, vocab, &program) else {
                continue;
            };
            if template.is_boolean() && answer != Answer::Boolean(want_true) {
                continue;
            }
            if template.is_boolean() {
                want_true = !want_true;
            }
            out.push(QaItem {
                question,
                program,
                answer,
            });
            break;
        }
    }
    out
}

fn unique_desc<R: Rng>(
    scene: &Scene,
    config: &QaConfig,
    avoid: Option<Attribute>,
    rng: &mut R,
) -> Option<Desc> {
    let target = &scene.entities[rng.gen_range(0..scene.len())];
    let pool: Vec<Attribute> = Attribute::ALL
        .into_iter()
        .filter(|&a| Some(a) != avoid)
        .collect();
    for k in 1..=config.max_desc_attrs.min(pool.len()) {
        let attrs = pool.iter().copied().choose_multiple(rng, k);
        let d = Desc::of(target, &attrs);
        if d.matching(scene).len() == 1 {
            return Some(d);
        }
    }
    None
}

fn propose<R: Rng>(
    template: QaTemplate,
    scene: &Scene,
    vocab: &AttributeVocab,
    config: &QaConfig,
    rng: &mut R,
) -> Option<(String, Expression)> {
    let m = config.max_desc_attrs;
    Some(match template {
        QaTemplate::Exists => {
            let d = Desc::random(vocab, m, rng);
            let t = d.text();
            (
                format!("Is there {} {t}?", article(&t)),
                Expression::exists("x", d.body("x")),
            )
        }
        QaTemplate::Count => {
            let d = Desc::random(vocab, m, rng);
            (
                format!("How many {} are there?", d.plural()),
                Expression::count("x", d.body("x")),
            )
        }
        QaTemplate::Describe => {
            let attr = *Attribute::ALL.choose(rng).unwrap();
            let d = unique_desc(scene, config, Some(attr), rng)?;
            let target = Expression::iota("y", d.body("y"));
            let body = Expression::Concept {
                name: attr.concept().to_string(),
                args: vec![
                    crate::lang::Arg::Expr(Expression::var("c")),
                    crate::lang::Arg::Expr(target),
                ],
            };
            (
                format!("What is the {} of the {}?", attr.concept(), d.text()),
                Expression::quant(
                    QuantKind::Describe,
                    Sort::Category(attr.category().into()),
                    "c",
                    body,
                ),
            )
        }
        QaTemplate::RelExists | QaTemplate::RelCount => {
            let d1 = Desc::random(vocab, m, rng);
            let d2 = unique_desc(scene, config, None, rng)?;
            let rel = *RELATIONS.choose(rng).unwrap();
            let body = Expression::and(vec![
                d1.body("x"),
                Expression::concept(
                    rel,
                    vec![Expression::var("x"), Expression::iota("y", d2.body("y"))],
                ),
            ]);
            if template == QaTemplate::RelExists {
                let t = d1.text();
                (
                    format!(
                        "Is there {} {t} {} the {}?",
                        article(&t),
                        relation_text(rel),
                        d2.text()
                    ),
                    Expression::exists("x", body),
                )
            } else {
                (
                    format!(
                        "How many {} are {} the {}?",
                        d1.plural(),
                        relation_text(rel),
                        d2.text()
                    ),
                    Expression::count("x", body),
                )
            }
        }
        QaTemplate::CompareCounts => {
            let d1 = Desc::random(vocab, m, rng);
            let d2 = Desc::random(vocab, m, rng);
            if d1 == d2 {
                return None;
            }
            let kind = *[CompareKind::Gt, CompareKind::Lt, CompareKind::Eq]
                .choose(rng)
                .unwrap();
            let question = match kind {
                CompareKind::Gt => format!("Are there more {} than {}?", d1.plural(), d2.plural()),
                CompareKind::Lt => format!("Are there fewer {} than {}?", d1.plural(), d2.plural()),
                CompareKind::Eq => format!(
                    "Are there the same number of {} and {}?",
                    d1.plural(),
                    d2.plural()
                ),
            };
            (
                question,
                Expression::compare(
                    kind,
                    Expression::count("x", d1.body("x")),
                    Expression::count("y", d2.body("y")),
                ),
            )
        }
        QaTemplate::CountEquals => {
            let d = Desc::random(vocab, m, rng);
            let k = rng.gen_range(0..=3u32);
            (
                format!("Are there exactly {k} {}?", d.plural()),
                Expression::compare(
                    CompareKind::Eq,
                    Expression::count("x", d.body("x")),
                    Expression::Number(f64::from(k)),
                ),
            )
        }
        QaTemplate::Forall => {
            let d = Desc::random(vocab, 1, rng);
            let attr = Attribute::ALL
                .into_iter()
                .filter(|&a| !d.uses(a))
                .choose(rng)?;
            if d.matching(scene).is_empty() {
                return None;
            }
            let value = vocab.values(attr).choose(rng)?.clone();
            (
                format!("Are all {} {value}?", d.plural()),
                Expression::forall(
                    "x",
                    Expression::or(vec![
                        Expression::not(d.body("x")),
                        Expression::apply(&value, &["x"]),
                    ]),
                ),
            )
        }
        QaTemplate::Point => {
            let d = unique_desc(scene, config, None, rng)?;
            (
                format!("Point to the {}.", d.text()),
                Expression::quant(QuantKind::Point, Sort::Object, "x", d.body("x")),
            )
        }
    })
}
