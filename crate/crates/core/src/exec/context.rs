use crate::lang::Categories;
use crate::tensor::Tensor;

use super::ExecError;

/// Per-scene features the concept modules read: one row per entity, one
/// cell per ordered pair and, optionally, per ordered triple.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingContext {
    entities: usize,
    unary: Tensor,
    binary: Tensor,
    ternary: Option<Tensor>,
    categories: Categories,
}

impl GroundingContext {
    /// `unary: [N, Du]`, `binary: [N, N, Db]`, `ternary: [N, N, N, Dt]`.
    pub fn new(
        unary: Tensor,
        binary: Tensor,
        ternary: Option<Tensor>,
        categories: Categories,
    ) -> Result<Self, ExecError> {
        let bad = |what: &str| Err(ExecError::InvalidContext(what.to_string()));
        if unary.rank() != 2 {
            return bad("unary features must be [N, Du]");
        }
        let n = unary.shape()[0];
        if n == 0 {
            return bad("a context needs at least one entity");
        }
        if binary.rank() != 3 || binary.shape()[..2] != [n, n] {
            return bad("binary features must be [N, N, Db]");
        }
        if let Some(t) = &ternary {
            if t.rank() != 4 || t.shape()[..3] != [n, n, n] {
                return bad("ternary features must be [N, N, N, Dt]");
            }
        }
        Ok(Self {
            entities: n,
            unary,
            binary,
            ternary,
            categories,
        })
    }

    /// A context carrying no features, for concept sources that ignore
    /// them (truth tables).
    pub fn featureless(entities: usize, categories: Categories) -> Result<Self, ExecError> {
        Self::new(
            Tensor::zeros(&[entities, 0]),
            Tensor::zeros(&[entities, entities, 0]),
            None,
            categories,
        )
    }

    pub fn entities(&self) -> usize {
        self.entities
    }

    pub fn unary(&self) -> &Tensor {
        &self.unary
    }

    pub fn binary(&self) -> &Tensor {
        &self.binary
    }

    pub fn ternary(&self) -> Option<&Tensor> {
        self.ternary.as_ref()
    }

    pub fn categories(&self) -> &Categories {
        &self.categories
    }

    /// Feature tensor for a given number of object arguments.
    pub fn features(&self, entity_arity: usize) -> Option<&Tensor> {
        match entity_arity {
            1 => Some(&self.unary),
            2 => Some(&self.binary),
            3 => self.ternary.as_ref(),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_misshapen() {
        let empty = GroundingContext::new(
            Tensor::zeros(&[0, 4]),
            Tensor::zeros(&[0, 0, 2]),
            None,
            Categories::new(),
        );
        assert!(matches!(empty, Err(ExecError::InvalidContext(_))));
        let bad = GroundingContext::new(
            Tensor::zeros(&[3, 4]),
            Tensor::zeros(&[3, 2, 2]),
            None,
            Categories::new(),
        );
        assert!(bad.is_err());
        let ok = GroundingContext::featureless(2, Categories::new()).unwrap();
        assert_eq!(ok.entities(), 2);
        assert!(ok.features(3).is_none());
    }
}
