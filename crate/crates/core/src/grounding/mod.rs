//! Trainable concept modules and the registry that owns them.
//!
//! Each discriminative concept is a two-layer relu MLP applied to the
//! feature vector of every entity tuple: unary concepts read `[N, Du]`
//! features, binary ones `[N, N, Db]`, ternary ones `[N, N, N, Dt]`. Text
//! modifiers (e.g. `"far"` in `put(a, x, y, "far")`) select an extra output
//! head on the shared hidden layer.

mod checkpoint;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use checkpoint::CHECKPOINT_VERSION;

use crate::exec::{
    contract, Bindings, ConceptCall, ConceptSource, ExecError, GroundingContext, ParamId,
};
use crate::lang::{
    infer_signatures, Arg, Categories, ConceptSignature, Expression, LangError, QuantKind, Sort,
};
use crate::tensor::{NodeId, Tape, Tensor};

/// Width of every concept MLP's hidden layer.
pub const HIDDEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundingError {
    #[error("concept `{name}` is registered with arity {existing}, requested {requested}")]
    ArityConflict {
        name: String,
        existing: usize,
        requested: usize,
    },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("concept `{0}` cannot change its viewpoint flag after registration")]
    ViewpointAfterRegistration(String),
    #[error(transparent)]
    Lang(#[from] LangError),
}

impl From<std::io::Error> for GroundingError {
    fn from(e: std::io::Error) -> Self {
        GroundingError::Io(e.to_string())
    }
}

/// Feature dimensions per tuple arity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub unary: usize,
    pub binary: usize,
    pub ternary: usize,
}

impl FeatureDims {
    pub fn for_arity(&self, entity_arity: usize) -> Option<usize> {
        match entity_arity {
            1 => Some(self.unary),
            2 => Some(self.binary),
            3 => Some(self.ternary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    /// Relu MLP producing one logit per entity tuple.
    Mlp,
    /// No parameters of its own: either scored through category members
    /// (`describe`) or an action without object arguments.
    Symbolic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptModule {
    pub signature: ConceptSignature,
    pub kind: ModuleKind,
    /// Feature width the first layer consumes.
    pub input_dim: usize,
    /// Parameter tensors by name, in a fixed order.
    params: BTreeMap<String, Tensor>,
}

impl ConceptModule {
    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn set_param(&mut self, name: &str, value: Tensor) {
        self.params.insert(name.to_string(), value);
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Output heads available besides the default one.
    pub fn heads(&self) -> Vec<String> {
        self.params
            .keys()
            .filter_map(|k| k.strip_prefix("w2:"))
            .map(String::from)
            .collect()
    }

    fn head_names(head: &str) -> (String, String) {
        if head.is_empty() {
            ("w2".into(), "b2".into())
        } else {
            (format!("w2:{head}"), format!("b2:{head}"))
        }
    }

    fn has_head(&self, head: &str) -> bool {
        self.params.contains_key(&Self::head_names(head).0)
    }

    fn add_head(&mut self, head: &str, rng: &mut ChaCha8Rng) {
        let (w, b) = Self::head_names(head);
        self.params.insert(w, uniform(rng, &[HIDDEN, 1], HIDDEN));
        self.params.insert(b, uniform(rng, &[1], HIDDEN));
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}

/// Deterministic per-concept stream so a concept's initial values do not
/// depend on registration order.
fn concept_rng(seed: u64, name: &str, head: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    h.update([0]);
    h.update(head.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Text key selecting an output head.
pub fn head_key(text: &[String]) -> String {
    text.join("|")
}

/// Builds a [`GroundingContext`] from some raw scene representation.
pub trait FeatureProvider {
    type Scene;

    fn build_context(&self, scene: &Self::Scene) -> Result<GroundingContext, ExecError>;
}

/// All concept modules of a domain plus the category vocabulary, viewpoint
/// flags and name canonicalization map.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptRegistry {
    dims: FeatureDims,
    modules: BTreeMap<String, ConceptModule>,
    categories: Categories,
    viewpoint: BTreeSet<String>,
    aliases: BTreeMap<String, String>,
}

impl ConceptRegistry {
    pub fn new(dims: FeatureDims) -> Self {
        Self {
            dims,
            modules: BTreeMap::new(),
            categories: Categories::new(),
            viewpoint: BTreeSet::new(),
            aliases: BTreeMap::new(),
        }
    }

    pub fn dims(&self) -> FeatureDims {
        self.dims
    }

    pub fn categories(&self) -> &Categories {
        &self.categories
    }

    pub fn viewpoint_concepts(&self) -> &BTreeSet<String> {
        &self.viewpoint
    }

    pub fn aliases(&self) -> &BTreeMap<String, String> {
        &self.aliases
    }

    /// Maps surface spellings (e.g. `in-front-of`) to a canonical concept.
    pub fn add_alias(&mut self, from: &str, to: &str) {
        self.aliases.insert(from.to_string(), to.to_string());
    }

    pub fn resolve<'a>(&'a self, name: &'a str) -> &'a str {
        self.aliases.get(name).map_or(name, String::as_str)
    }

    /// Declares a binary concept as viewpoint dependent. Must precede its
    /// registration since it changes the module's input width.
    pub fn mark_viewpoint(&mut self, name: &str) -> Result<(), GroundingError> {
        let name = self.resolve(name).to_string();
        if self.modules.contains_key(&name) && !self.viewpoint.contains(&name) {
            return Err(GroundingError::ViewpointAfterRegistration(name));
        }
        self.viewpoint.insert(name);
        Ok(())
    }

    /// Records a category and registers each member as a unary concept.
    pub fn ensure_category(
        &mut self,
        category: &str,
        members: &[&str],
        seed: u64,
    ) -> Result<(), GroundingError> {
        for m in members {
            self.ensure_concept(&ConceptSignature::unary(m), seed)?;
        }
        self.categories.insert(category, members);
        Ok(())
    }

    pub fn ensure_categories(
        &mut self,
        categories: &Categories,
        seed: u64,
    ) -> Result<(), GroundingError> {
        for (cat, members) in categories.iter() {
            let members: Vec<&str> = members.iter().map(String::as_str).collect();
            self.ensure_category(cat, &members, seed)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ConceptModule> {
        self.modules.get(self.resolve(name))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ConceptModule> {
        let key = self.resolve(name).to_string();
        self.modules.get_mut(&key)
    }

    pub fn modules(&self) -> impl Iterator<Item = &ConceptModule> {
        self.modules.values()
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.modules
            .values()
            .map(ConceptModule::parameter_count)
            .sum()
    }

    /// Every parameter in a fixed order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.modules
            .iter()
            .flat_map(|(c, m)| m.params.iter().map(move |(n, t)| (ParamId::new(c, n), t)))
    }

    pub fn param(&self, id: &ParamId) -> Option<&Tensor> {
        self.modules.get(&id.concept)?.params.get(&id.name)
    }

    pub fn param_mut(&mut self, id: &ParamId) -> Option<&mut Tensor> {
        self.modules.get_mut(&id.concept)?.params.get_mut(&id.name)
    }

    /// Returns the module for `sig`, creating it on first sight.
    pub fn ensure_concept(
        &mut self,
        sig: &ConceptSignature,
        seed: u64,
    ) -> Result<&ConceptModule, GroundingError> {
        self.ensure_head(sig, "", seed)
    }

    fn ensure_head(
        &mut self,
        sig: &ConceptSignature,
        head: &str,
        seed: u64,
    ) -> Result<&ConceptModule, GroundingError> {
        let name = self.resolve(&sig.name).to_string();
        if let Some(existing) = self.modules.get(&name) {
            if existing.signature.arity != sig.arity
                || existing.signature.entity_arity() != sig.entity_arity()
            {
                return Err(GroundingError::ArityConflict {
                    name,
                    existing: existing.signature.arity,
                    requested: sig.arity,
                });
            }
        } else {
            let mut signature = sig.clone();
            signature.name = name.clone();
            let entity_arity = sig.entity_arity();
            let input = if self.viewpoint.contains(&name) && entity_arity == 2 {
                Some(self.dims.ternary)
            } else {
                self.dims.for_arity(entity_arity)
            };
            let module = match input {
                Some(d) if !sig.generative => {
                    let mut rng = concept_rng(seed, &name, "");
                    let mut params = BTreeMap::new();
                    params.insert("w1".to_string(), uniform(&mut rng, &[d, HIDDEN], d));
                    params.insert("b1".to_string(), uniform(&mut rng, &[HIDDEN], d));
                    let mut m = ConceptModule {
                        signature,
                        kind: ModuleKind::Mlp,
                        input_dim: d,
                        params,
                    };
                    m.add_head("", &mut rng);
                    m
                }
                _ => ConceptModule {
                    signature,
                    kind: ModuleKind::Symbolic,
                    input_dim: 0,
                    params: BTreeMap::new(),
                },
            };
            self.modules.insert(name.clone(), module);
        }
        let module = self.modules.get_mut(&name).expect("just ensured");
        if module.kind == ModuleKind::Mlp && !module.has_head(head) {
            let mut rng = concept_rng(seed, &name, head);
            module.add_head(head, &mut rng);
        }
        Ok(module)
    }

    /// Registers every concept (and text head) a program uses.
    pub fn ensure_program(
        &mut self,
        program: &Expression,
        seed: u64,
    ) -> Result<(), GroundingError> {
        let sigs = infer_signatures(program)?;
        for sig in &sigs {
            self.ensure_concept(sig, seed)?;
        }
        let mut heads = Vec::new();
        let mut described = Vec::new();
        program.walk(&mut |e| {
            if let Expression::Quantified {
                kind: QuantKind::Describe,
                sort: Sort::Category(cat),
                ..
            } = e
            {
                described.push(cat.clone());
            }
            if let Expression::Concept { name, args } = e {
                let text: Vec<String> = args
                    .iter()
                    .filter_map(|a| match a {
                        Arg::Text(t) => Some(t.clone()),
                        Arg::Expr(_) => None,
                    })
                    .collect();
                if !text.is_empty() {
                    heads.push((name.clone(), head_key(&text)));
                }
            }
        });
        for cat in described {
            let members = self
                .categories
                .members(&cat)
                .map(<[String]>::to_vec)
                .unwrap_or_default();
            for m in members {
                self.ensure_concept(&ConceptSignature::unary(&m), seed)?;
            }
        }
        for (name, head) in heads {
            let sig = sigs
                .iter()
                .find(|s| s.name == name)
                .expect("signature inferred")
                .clone();
            self.ensure_head(&sig, &head, seed)?;
        }
        Ok(())
    }

    /// Logits of an MLP concept over arbitrary leading axes of `features`.
    fn forward(
        &self,
        module: &ConceptModule,
        head: &str,
        features: NodeId,
        tape: &mut Tape,
        bindings: &mut Bindings,
    ) -> Result<NodeId, ExecError> {
        let shape = tape.shape(features).to_vec();
        let (lead, d) = shape.split_at(shape.len() - 1);
        if d[0] != module.input_dim {
            return Err(ExecError::ShapeMismatch(format!(
                "concept `{}` expects {}-dim features, context has {}",
                module.signature.name, module.input_dim, d[0]
            )));
        }
        let name = &module.signature.name;
        let (wn, bn) = ConceptModule::head_names(head);
        let (w2, b2) = match (module.params.get(&wn), module.params.get(&bn)) {
            (Some(w), Some(b)) => (w, b),
            _ => {
                return Err(ExecError::UnregisteredConcept {
                    name: format!("{name}[{head}]"),
                    arity: module.signature.entity_arity(),
                })
            }
        };
        let rows: usize = lead.iter().product();
        let x = tape.reshape(features, vec![rows, d[0]])?;
        let w1 = bindings.param(tape, ParamId::new(name, "w1"), &module.params["w1"]);
        let b1 = bindings.param(tape, ParamId::new(name, "b1"), &module.params["b1"]);
        let w2 = bindings.param(tape, ParamId::new(name, &wn), w2);
        let b2 = bindings.param(tape, ParamId::new(name, &bn), b2);
        let h = tape.affine(x, w1, b1)?;
        let h = tape.relu(h)?;
        let out = tape.affine(h, w2, b2)?;
        Ok(tape.reshape(out, lead.to_vec())?)
    }
}

impl ConceptSource for ConceptRegistry {
    fn concept_logits(
        &self,
        call: ConceptCall<'_>,
        ctx: &GroundingContext,
        tape: &mut Tape,
        bindings: &mut Bindings,
    ) -> Result<NodeId, ExecError> {
        let name = self.resolve(call.name);
        let unregistered = || ExecError::UnregisteredConcept {
            name: name.to_string(),
            arity: call.entity_arity,
        };
        let module = self.modules.get(name).ok_or_else(unregistered)?;
        if module.kind != ModuleKind::Mlp || module.signature.entity_arity() != call.entity_arity {
            return Err(unregistered());
        }
        let head = head_key(call.text);
        if self.viewpoint.contains(name) && call.entity_arity == 2 {
            let feats = bindings
                .features(tape, ctx, 3)
                .ok_or_else(|| ExecError::NoTernaryFeatures(name.to_string()))?;
            let logits = self.forward(module, &head, feats, tape, bindings)?;
            return contract(tape, logits, 2, call.anchor);
        }
        let feats = bindings
            .features(tape, ctx, call.entity_arity)
            .ok_or_else(unregistered)?;
        self.forward(module, &head, feats, tape, bindings)
    }

    fn viewpoint_dependent(&self, name: &str) -> bool {
        self.viewpoint.contains(self.resolve(name))
    }
}

#[cfg(test)]
mod tests;
