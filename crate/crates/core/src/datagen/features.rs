use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::exec::{ExecError, GroundingContext};
use crate::grounding::{ConceptRegistry, FeatureDims, FeatureProvider, GroundingError, HIDDEN};
use crate::lang::ConceptSignature;
use crate::tensor::Tensor;

use super::scene::{view_frame, Attribute, AttributeVocab, Scene, RELATIONS, VIEW_RELATIONS};

/// Width of the projected unary features.
pub const UNARY_DIM: usize = 16;
/// `[dx, dy, distance, same color, same shape, same size, same material, self]`.
pub const BINARY_DIM: usize = 8;
/// `[rightward, forward, self]` in the anchor's frame.
pub const TERNARY_DIM: usize = 3;

/// Synthetic stand-in for a perception encoder.
///
/// Unary features are the entity's attribute one-hots and position, mapped
/// through a fixed random projection with orthonormal columns, plus
/// Gaussian noise. Binary features are relative displacement, distance and
/// attribute-equality flags; ternary features give a pair's displacement in
/// the frame facing the anchor.
#[derive(Debug, Clone)]
pub struct SceneFeatureProvider {
    pub vocab: AttributeVocab,
    pub noise: f64,
    pub seed: u64,
    pub ternary: bool,
    projection: Tensor,
}

impl SceneFeatureProvider {
    pub fn new(vocab: AttributeVocab, noise: f64, seed: u64) -> Self {
        let raw = raw_dim(&vocab);
        assert!(
            raw <= UNARY_DIM,
            "attribute vocabulary too large for the projection"
        );
        let projection = orthonormal_columns(UNARY_DIM, raw, seed);
        Self {
            vocab,
            noise,
            seed,
            ternary: false,
            projection,
        }
    }

    pub fn with_ternary(mut self) -> Self {
        self.ternary = true;
        self
    }

    pub fn dims() -> FeatureDims {
        FeatureDims {
            unary: UNARY_DIM,
            binary: BINARY_DIM,
            ternary: TERNARY_DIM,
        }
    }

    /// `[UNARY_DIM, raw]` projection applied to raw attribute vectors.
    pub fn projection(&self) -> &Tensor {
        &self.projection
    }

    /// One-hot attributes followed by the two coordinates.
    pub fn raw_features(&self, scene: &Scene, i: usize) -> Vec<f64> {
        let e = &scene.entities[i];
        let mut r = Vec::with_capacity(raw_dim(&self.vocab));
        for a in Attribute::ALL {
            for v in self.vocab.values(a) {
                r.push(if e.get(a) == v { 1.0 } else { 0.0 });
            }
        }
        r.extend(e.position);
        r
    }

    fn noise_rng(&self, scene: &Scene) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(scene.id.as_bytes());
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&h.finalize());
        ChaCha8Rng::from_seed(bytes)
    }
}

fn raw_dim(vocab: &AttributeVocab) -> usize {
    vocab.all_values().len() + 2
}

/// Standard normal sample by Box-Muller.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Random `[rows, cols]` matrix with orthonormal columns (Gram-Schmidt).
fn orthonormal_columns(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| gaussian(&mut rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut data = vec![0.0; rows * cols];
    for (c, b) in basis.iter().enumerate() {
        for r in 0..rows {
            data[r * cols + c] = b[r];
        }
    }
    Tensor::new(vec![rows, cols], data).expect("finite")
}

impl FeatureProvider for SceneFeatureProvider {
    type Scene = Scene;

    fn build_context(&self, scene: &Scene) -> Result<GroundingContext, ExecError> {
        let n = scene.len();
        let mut rng = self.noise_rng(scene);
        let noise = |rng: &mut ChaCha8Rng| {
            if self.noise > 0.0 {
                self.noise * gaussian(rng)
            } else {
                0.0
            }
        };
        let raw_n = raw_dim(&self.vocab);
        let p = self.projection.data();
        let mut unary = Vec::with_capacity(n * UNARY_DIM);
        for i in 0..n {
            let r = self.raw_features(scene, i);
            for row in 0..UNARY_DIM {
                let v: f64 = (0..raw_n).map(|c| p[row * raw_n + c] * r[c]).sum();
                unary.push(v + noise(&mut rng));
            }
        }
        let mut binary = Vec::with_capacity(n * n * BINARY_DIM);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&scene.entities[i], &scene.entities[j]);
                let dx = b.position[0] - a.position[0];
                let dy = b.position[1] - a.position[1];
                let mut f = vec![dx, dy, (dx * dx + dy * dy).sqrt()];
                for attr in Attribute::ALL {
                    f.push(if a.get(attr) == b.get(attr) { 1.0 } else { 0.0 });
                }
                f.push(if i == j { 1.0 } else { 0.0 });
                binary.extend(f.into_iter().map(|x| x + noise(&mut rng)));
            }
        }
        let ternary = if self.ternary {
            let mut t = Vec::with_capacity(n * n * n * TERNARY_DIM);
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let [r, f] = view_frame(scene, i, j, k);
                        let same = if i == j { 1.0 } else { 0.0 };
                        t.extend([r, f, same].map(|x| x + noise(&mut rng)));
                    }
                }
            }
            Some(Tensor::new(vec![n, n, n, TERNARY_DIM], t)?)
        } else {
            None
        };
        GroundingContext::new(
            Tensor::new(vec![n, UNARY_DIM], unary)?,
            Tensor::new(vec![n, n, BINARY_DIM], binary)?,
            ternary,
            self.vocab.categories(),
        )
    }
}

/// Registry with hand-set weights that reproduces the symbolic ground
/// truth on noise-free features: every concept outputs +-10.
///
/// Unary concepts read their attribute one-hot back through the projection
/// (its columns are orthonormal). Relations threshold a displacement with
/// two relus and suppress the diagonal; `axis_gap` is the margin at which
/// the output saturates.
pub fn oracle_registry(
    provider: &SceneFeatureProvider,
    axis_gap: f64,
) -> Result<ConceptRegistry, GroundingError> {
    let mut reg = ConceptRegistry::new(SceneFeatureProvider::dims());
    for r in VIEW_RELATIONS {
        reg.mark_viewpoint(r)?;
    }
    reg.ensure_categories(&provider.vocab.categories(), 0)?;
    let raw_n = raw_dim(&provider.vocab);
    let p = provider.projection.data();
    for (k, value) in provider.vocab.all_values().into_iter().enumerate() {
        let mut w1 = Tensor::zeros(&[UNARY_DIM, HIDDEN]);
        for row in 0..UNARY_DIM {
            w1.data_mut()[row * HIDDEN] = p[row * raw_n + k];
        }
        let mut w2 = Tensor::zeros(&[HIDDEN, 1]);
        w2.data_mut()[0] = 20.0;
        set_mlp(&mut reg, value, w1, Tensor::zeros(&[HIDDEN]), w2, -10.0);
    }
    let slope = 1.0 / axis_gap.max(1e-6);
    let relation = |reg: &mut ConceptRegistry,
                    name: &str,
                    dim: usize,
                    axis: usize,
                    sign: f64,
                    self_index: usize| {
        let mut w1 = Tensor::zeros(&[dim, HIDDEN]);
        w1.data_mut()[axis * HIDDEN] = sign * slope;
        w1.data_mut()[axis * HIDDEN + 1] = sign * slope;
        w1.data_mut()[self_index * HIDDEN + 2] = 1.0;
        let mut b1 = Tensor::zeros(&[HIDDEN]);
        b1.data_mut()[0] = 1.0;
        b1.data_mut()[1] = -1.0;
        let mut w2 = Tensor::zeros(&[HIDDEN, 1]);
        w2.data_mut()[..3].copy_from_slice(&[10.0, -10.0, -10.0]);
        set_mlp(reg, name, w1, b1, w2, -10.0);
    };
    // left(x, y) holds when y is to the right of x: dx = y.x - x.x > 0
    for (name, axis, sign) in [
        ("left", 0, 1.0),
        ("right", 0, -1.0),
        ("front", 1, 1.0),
        ("behind", 1, -1.0),
    ] {
        debug_assert!(RELATIONS.contains(&name));
        reg.ensure_concept(&ConceptSignature::binary(name), 0)?;
        relation(&mut reg, name, BINARY_DIM, axis, sign, BINARY_DIM - 1);
    }
    for (name, axis, sign) in [
        ("view_left", 0, 1.0),
        ("view_right", 0, -1.0),
        ("view_front", 1, 1.0),
        ("view_behind", 1, -1.0),
    ] {
        reg.ensure_concept(&ConceptSignature::binary(name), 0)?;
        relation(&mut reg, name, TERNARY_DIM, axis, sign, TERNARY_DIM - 1);
    }
    Ok(reg)
}

fn set_mlp(reg: &mut ConceptRegistry, name: &str, w1: Tensor, b1: Tensor, w2: Tensor, b2: f64) {
    let m = reg.get_mut(name).expect("registered");
    m.set_param("w1", w1);
    m.set_param("b1", b1);
    m.set_param("w2", w2);
    m.set_param("b2", Tensor::vector(vec![b2]));
}

/// A fresh registry for learning: category members and relations
/// registered with seeded random weights.
pub fn learnable_registry(
    vocab: &AttributeVocab,
    seed: u64,
    viewpoint: bool,
) -> Result<ConceptRegistry, GroundingError> {
    let mut reg = ConceptRegistry::new(SceneFeatureProvider::dims());
    if viewpoint {
        for r in VIEW_RELATIONS {
            reg.mark_viewpoint(r)?;
        }
    }
    reg.ensure_categories(&vocab.categories(), seed)?;
    for r in RELATIONS {
        reg.ensure_concept(&ConceptSignature::binary(r), seed)?;
    }
    if viewpoint {
        for r in VIEW_RELATIONS {
            reg.ensure_concept(&ConceptSignature::binary(r), seed)?;
        }
    }
    Ok(reg)
}
