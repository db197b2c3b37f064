use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{GroundingContext, ParamId};
use crate::grounding::ConceptRegistry;
use crate::lang::Expression;

use super::{example_gradients, example_loss, Answer, TrainError};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero (e.g. behind an inactive relu) compare absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

/// Central and one-sided estimates further apart than this (relative) mark
/// a coordinate whose step crosses a point of non-differentiability.
pub const KINK_REL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub checked: usize,
    /// Probed coordinates where the step straddled a kink, so only a
    /// one-sided difference applies.
    pub kinks: usize,
    pub max_rel_error: f64,
    /// Coordinate with the largest error, with analytic and numeric values.
    pub worst: Option<(ParamId, usize, f64, f64)>,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backpropagated gradients of one example's loss with finite
/// differences at up to `coords` coordinates per parameter tensor of the
/// modules the program reads. Coordinates with a nonzero analytic gradient
/// are probed first. The loss is only piecewise smooth: where the one-sided
/// differences disagree with the central one the step crosses a kink, and the
/// gradient is compared with the closer of the two second-order one-sided
/// differences instead. Such coordinates are counted in `kinks`.
pub fn check_gradients(
    reg: &ConceptRegistry,
    ctx: &GroundingContext,
    program: &Expression,
    answer: &Answer,
    coords: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheck, TrainError> {
    let (_, grads) = example_gradients(reg, ctx, program, answer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = reg.clone();
    let mut report = GradCheck {
        checked: 0,
        kinks: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for (id, g) in &grads {
        let mut idx: Vec<usize> = (0..g.data().len()).collect();
        idx.shuffle(&mut rng);
        idx.sort_by_key(|&i| g.data()[i] == 0.0);
        for &i in idx.iter().take(coords) {
            let orig = reg.param(id).expect("bound parameter").data()[i];
            let mut at = |x: f64| -> Result<f64, TrainError> {
                probe.param_mut(id).expect("bound parameter").data_mut()[i] = x;
                example_loss(&probe, ctx, program, answer)
            };
            let (p1, m1) = (at(orig + eps)?, at(orig - eps)?);
            let (p2, m2) = (at(orig + 2.0 * eps)?, at(orig - 2.0 * eps)?);
            let f0 = at(orig)?;
            let central = (p1 - m1) / (2.0 * eps);
            let forward = (4.0 * p1 - 3.0 * f0 - p2) / (2.0 * eps);
            let backward = (3.0 * f0 - 4.0 * m1 + m2) / (2.0 * eps);
            let analytic = g.data()[i];
            let candidates: &[f64] =
                if rel_error(forward, central).max(rel_error(backward, central)) > KINK_REL {
                    report.kinks += 1;
                    &[forward, backward]
                } else {
                    &[central]
                };
            let (err, numeric) = candidates
                .iter()
                .map(|&n| (rel_error(analytic, n), n))
                .fold(
                    (f64::INFINITY, central),
                    |a, b| if b.0 < a.0 { b } else { a },
                );
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((id.clone(), i, analytic, numeric));
            }
        }
    }
    Ok(report)
}
