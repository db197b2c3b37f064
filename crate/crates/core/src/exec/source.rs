use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::tensor::{Gradients, NodeId, Tape, Tensor};

use super::{ExecError, GroundingContext};

/// Identifies one trainable tensor: the owning concept and the tensor's
/// name inside it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId {
    pub concept: String,
    pub name: String,
}

impl ParamId {
    pub fn new(concept: &str, name: &str) -> Self {
        Self {
            concept: concept.to_string(),
            name: name.to_string(),
        }
    }
}

/// Per-execution bookkeeping: which parameters and feature tensors have
/// been placed on the tape.
#[derive(Debug, Default)]
pub struct Bindings {
    params: HashMap<ParamId, NodeId>,
    features: [Option<NodeId>; 4],
}

impl Bindings {
    /// Places a parameter on the tape once; later calls reuse the node.
    pub fn param(&mut self, tape: &mut Tape, id: ParamId, value: &Tensor) -> NodeId {
        *self
            .params
            .entry(id)
            .or_insert_with(|| tape.leaf(value.clone()))
    }

    /// Feature tensor of the given arity as a tape constant.
    pub fn features(
        &mut self,
        tape: &mut Tape,
        ctx: &GroundingContext,
        arity: usize,
    ) -> Option<NodeId> {
        if let Some(id) = self.features.get(arity).copied().flatten() {
            return Some(id);
        }
        let t = ctx.features(arity)?;
        let id = tape.leaf(t.clone());
        self.features[arity] = Some(id);
        Some(id)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&ParamId, NodeId)> {
        self.params.iter().map(|(k, v)| (k, *v))
    }

    /// Concepts with at least one parameter on the tape.
    pub fn bound_concepts(&self) -> BTreeSet<String> {
        self.params.keys().map(|p| p.concept.clone()).collect()
    }

    /// Gradients of every bound parameter the loss depends on.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<ParamId, Tensor> {
        self.params
            .iter()
            .filter_map(|(id, node)| grads.get(*node).map(|g| (id.clone(), g.clone())))
            .collect()
    }
}

/// One concept evaluation request.
#[derive(Debug, Clone, Copy)]
pub struct ConceptCall<'a> {
    pub name: &'a str,
    /// Number of object arguments; the result has this rank with extent N.
    pub entity_arity: usize,
    /// Text modifiers, selecting an output head.
    pub text: &'a [String],
    /// Current viewpoint distribution (uniform unless `view` changed it).
    pub anchor: NodeId,
}

/// Anything that maps a concept application to truth logits.
pub trait ConceptSource {
    fn concept_logits(
        &self,
        call: ConceptCall<'_>,
        ctx: &GroundingContext,
        tape: &mut Tape,
        bindings: &mut Bindings,
    ) -> Result<NodeId, ExecError>;

    /// Whether the concept's value depends on the viewpoint anchor.
    fn viewpoint_dependent(&self, _name: &str) -> bool {
        false
    }
}

/// Fixed truth tables: every listed concept is ±`magnitude` at each cell.
/// Used for crisp execution, where soft results coincide with boolean logic.
#[derive(Debug, Clone, Default)]
pub struct TableSource {
    tables: BTreeMap<String, Tensor>,
    viewpoint: BTreeSet<String>,
}

impl TableSource {
    pub const CRISP: f64 = 10.0;

    pub fn new() -> Self {
        Self::default()
    }

    /// `truth` is row-major over `N^arity` cells.
    pub fn insert(&mut self, name: &str, n: usize, arity: usize, truth: &[bool]) {
        let shape = vec![n; arity];
        assert_eq!(truth.len(), n.pow(arity as u32), "truth table size");
        let data = truth
            .iter()
            .map(|&b| if b { Self::CRISP } else { -Self::CRISP })
            .collect();
        self.tables.insert(
            name.to_string(),
            Tensor::new(shape, data).expect("finite table"),
        );
    }

    /// A binary concept whose truth depends on a viewpoint; `truth` is
    /// indexed `[i, j, anchor]`.
    pub fn insert_viewpoint(&mut self, name: &str, n: usize, truth: &[bool]) {
        self.insert(name, n, 3, truth);
        self.viewpoint.insert(name.to_string());
    }

    pub fn insert_logits(&mut self, name: &str, logits: Tensor) {
        self.tables.insert(name.to_string(), logits);
    }

    pub fn table(&self, name: &str) -> Option<&Tensor> {
        self.tables.get(name)
    }
}

impl ConceptSource for TableSource {
    fn concept_logits(
        &self,
        call: ConceptCall<'_>,
        _ctx: &GroundingContext,
        tape: &mut Tape,
        _bindings: &mut Bindings,
    ) -> Result<NodeId, ExecError> {
        let table = self
            .tables
            .get(call.name)
            .ok_or_else(|| ExecError::UnregisteredConcept {
                name: call.name.to_string(),
                arity: call.entity_arity,
            })?;
        let viewpoint = self.viewpoint.contains(call.name);
        let rank = if viewpoint { 3 } else { call.entity_arity };
        if (viewpoint && call.entity_arity != 2) || table.rank() != rank {
            return Err(ExecError::UnregisteredConcept {
                name: call.name.to_string(),
                arity: call.entity_arity,
            });
        }
        let node = tape.leaf(table.clone());
        if viewpoint {
            return super::contract(tape, node, 2, call.anchor);
        }
        Ok(node)
    }

    fn viewpoint_dependent(&self, name: &str) -> bool {
        self.viewpoint.contains(name)
    }
}
