//! Finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::model::Model;
use super::params::ParamId;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares the analytic gradient of `loss` against central differences on
/// up to `per_param` randomly chosen entries of every trainable tensor.
/// `loss` must be a deterministic function of the parameters.
pub fn grad_check<F>(
    model: &Model,
    loss: F,
    eps: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&'p Model, &mut Graph<'p>) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::new(&model.params);
        let l = loss(model, &mut g)?;
        if !g.scalar(l).is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        g.backward(l)
    };
    let eval = |m: &Model| -> Result<f64> {
        let mut g = Graph::new(&m.params);
        let l = loss(m, &mut g)?;
        let v = g.scalar(l);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("perturbed loss".into()))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<(ParamId, String, usize)> = model
        .params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| (id, p.name.clone(), p.value.len()))
        .collect();
    for (id, name, len) in ids {
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(&mut rng);
        idx.truncate(per_param);
        for i in idx {
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[i]);
            if !analytic.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}[{i}]")));
            }
            let orig = work.params.value(id).data()[i];
            work.params.value_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work.params.value_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work.params.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = relative_error(analytic, numeric);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
