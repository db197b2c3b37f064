use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lang::Categories;

use super::DatagenError;

/// Attribute values scenes draw from, one list per category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeVocab {
    pub colors: Vec<String>,
    pub shapes: Vec<String>,
    pub sizes: Vec<String>,
    pub materials: Vec<String>,
}

impl Default for AttributeVocab {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            colors: v(&["red", "blue", "green"]),
            shapes: v(&["cube", "sphere", "cylinder"]),
            sizes: v(&["small", "large"]),
            materials: v(&["rubber", "metal"]),
        }
    }
}

/// The four attribute dimensions, in feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Color,
    Shape,
    Size,
    Material,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::Color,
        Attribute::Shape,
        Attribute::Size,
        Attribute::Material,
    ];

    pub fn category(self) -> &'static str {
        match self {
            Attribute::Color => "Color",
            Attribute::Shape => "Shape",
            Attribute::Size => "Size",
            Attribute::Material => "Material",
        }
    }

    /// Generative concept name used under `describe`.
    pub fn concept(self) -> &'static str {
        match self {
            Attribute::Color => "color",
            Attribute::Shape => "shape",
            Attribute::Size => "size",
            Attribute::Material => "material",
        }
    }

    pub fn from_category(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.category() == name)
    }
}

impl AttributeVocab {
    pub fn values(&self, a: Attribute) -> &[String] {
        match a {
            Attribute::Color => &self.colors,
            Attribute::Shape => &self.shapes,
            Attribute::Size => &self.sizes,
            Attribute::Material => &self.materials,
        }
    }

    pub fn categories(&self) -> Categories {
        let mut c = Categories::new();
        for a in Attribute::ALL {
            let members: Vec<&str> = self.values(a).iter().map(String::as_str).collect();
            c.insert(a.category(), &members);
        }
        c
    }

    /// Attribute a value word belongs to.
    pub fn attribute_of(&self, word: &str) -> Option<Attribute> {
        Attribute::ALL
            .into_iter()
            .find(|&a| self.values(a).iter().any(|v| v == word))
    }

    /// All value words in feature order.
    pub fn all_values(&self) -> Vec<&str> {
        Attribute::ALL
            .iter()
            .flat_map(|&a| self.values(a).iter().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: usize,
    pub color: String,
    pub shape: String,
    pub size: String,
    pub material: String,
    /// Horizontal and depth coordinates in the unit square.
    pub position: [f64; 2],
}

impl Entity {
    pub fn get(&self, a: Attribute) -> &str {
        match a {
            Attribute::Color => &self.color,
            Attribute::Shape => &self.shape,
            Attribute::Size => &self.size,
            Attribute::Material => &self.material,
        }
    }

    pub fn has(&self, value: &str) -> bool {
        Attribute::ALL.iter().any(|&a| self.get(a) == value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub entities: Vec<Entity>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// Spatial relations between ordered entity pairs, by displacement sign.
pub const RELATIONS: [&str; 4] = ["left", "right", "front", "behind"];

/// Relations evaluated in the frame of a viewpoint anchor.
pub const VIEW_RELATIONS: [&str; 4] = ["view_left", "view_right", "view_front", "view_behind"];

/// `left(x, y)`: x lies left of y. `front(x, y)`: x lies in front of y
/// (smaller depth coordinate).
pub fn relation_holds(scene: &Scene, name: &str, i: usize, j: usize) -> Option<bool> {
    if i == j {
        return RELATIONS.contains(&name).then_some(false);
    }
    let (a, b) = (scene.entities[i].position, scene.entities[j].position);
    Some(match name {
        "left" => a[0] < b[0],
        "right" => a[0] > b[0],
        "front" => a[1] < b[1],
        "behind" => a[1] > b[1],
        _ => return None,
    })
}

/// Displacement from `i` to `j` expressed as (rightward, forward) in the
/// frame of a viewer at the scene center looking at entity `k`.
pub fn view_frame(scene: &Scene, i: usize, j: usize, k: usize) -> [f64; 2] {
    let p = |e: usize| scene.entities[e].position;
    let (pk, pi, pj) = (p(k), p(i), p(j));
    let (mut fx, mut fy) = (pk[0] - 0.5, pk[1] - 0.5);
    let norm = (fx * fx + fy * fy).sqrt();
    if norm < 1e-9 {
        fx = 0.0;
        fy = 1.0;
    } else {
        fx /= norm;
        fy /= norm;
    }
    let (dx, dy) = (pj[0] - pi[0], pj[1] - pi[1]);
    // rightward axis is the forward axis turned clockwise
    let right = dx * fy - dy * fx;
    let forward = dx * fx + dy * fy;
    [right, forward]
}

/// `view_left(x, y)`: seen from the anchor direction, x lies left of y.
pub fn view_relation_holds(
    scene: &Scene,
    name: &str,
    i: usize,
    j: usize,
    k: usize,
) -> Option<bool> {
    if !VIEW_RELATIONS.contains(&name) {
        return None;
    }
    if i == j {
        return Some(false);
    }
    let [r, f] = view_frame(scene, i, j, k);
    Some(match name {
        "view_left" => r > 0.0,
        "view_right" => r < 0.0,
        "view_front" => f > 0.0,
        _ => f < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Minimum Euclidean distance between any two entities.
    pub min_separation: f64,
    /// Minimum gap between any two entities along each axis, so every
    /// spatial relation is decided by a clear margin.
    pub axis_gap: f64,
    pub vocab: AttributeVocab,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_objects: 3,
            max_objects: 10,
            min_separation: 0.08,
            axis_gap: 0.02,
            vocab: AttributeVocab::default(),
        }
    }
}

/// Total placement attempts that may be rejected before giving up.
pub const MAX_REJECTIONS: usize = 10_000;

impl SceneConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.min_objects < 3 || self.max_objects > 10 || self.min_objects > self.max_objects {
            return Err(DatagenError::InvalidConfig(format!(
                "object count range {}..={} must lie within 3..=10",
                self.min_objects, self.max_objects
            )));
        }
        if self.min_separation < 0.08 || self.axis_gap < 0.0 {
            return Err(DatagenError::InvalidConfig(
                "min_separation must be at least 0.08 and axis_gap non-negative".into(),
            ));
        }
        for a in Attribute::ALL {
            if self.vocab.values(a).is_empty() {
                return Err(DatagenError::InvalidConfig(format!(
                    "no {} values",
                    a.concept()
                )));
            }
        }
        Ok(())
    }
}

pub fn gen_scene(config: &SceneConfig, id: &str, seed: u64) -> Result<Scene, DatagenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(config.min_objects..=config.max_objects);
    let mut positions: Vec<[f64; 2]> = Vec::with_capacity(n);
    let mut rejections = 0;
    while positions.len() < n {
        let p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let ok = positions.iter().all(|q| {
            let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
            (dx * dx + dy * dy).sqrt() >= config.min_separation
                && dx.abs() >= config.axis_gap
                && dy.abs() >= config.axis_gap
        });
        if ok {
            positions.push(p);
        } else {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(DatagenError::ConfigInfeasible(format!(
                    "could not place {n} entities after {MAX_REJECTIONS} rejections"
                )));
            }
        }
    }
    let v = &config.vocab;
    let pick = |rng: &mut ChaCha8Rng, xs: &[String]| xs.choose(rng).expect("non-empty").clone();
    let entities = positions
        .into_iter()
        .enumerate()
        .map(|(id, position)| Entity {
            id,
            color: pick(&mut rng, &v.colors),
            shape: pick(&mut rng, &v.shapes),
            size: pick(&mut rng, &v.sizes),
            material: pick(&mut rng, &v.materials),
            position,
        })
        .collect();
    Ok(Scene {
        id: id.to_string(),
        entities,
    })
}
