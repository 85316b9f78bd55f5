use std::collections::BTreeMap;

use super::batch_loss;
use crate::data::Pair;
use crate::error::{Error, Result};
use crate::model::{Forward, ModelParams};
use crate::tensor::{relative_error, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct NamedCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradReport {
    pub checks: Vec<NamedCheck>,
    pub tol: f64,
}

impl ModelGradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_err <= self.tol)
    }

    pub fn worst(&self) -> Option<&NamedCheck> {
        self.checks.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Backward gradients of the batch loss for every parameter.
pub fn loss_gradients(params: &ModelParams, pairs: &[Pair], epsilon: f64) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let refs: Vec<&Pair> = pairs.iter().collect();
    let mut fw = Forward::training(params, None);
    let (loss, _) = batch_loss(&mut fw, &refs, epsilon)?;
    fw.g.backward(loss)?;
    let value = fw.g.value(loss).item();
    let handles: Vec<(String, crate::tensor::Var)> = fw.bound().map(|(n, v)| (n.to_string(), v)).collect();
    let mut grads = BTreeMap::new();
    for (name, v) in handles {
        let g = fw.g.take_grad(v).unwrap_or_else(|| Tensor::zeros(params.get(&name).expect("bound").shape()));
        grads.insert(name, g);
    }
    for (name, t) in params.iter() {
        grads.entry(name.to_string()).or_insert_with(|| Tensor::zeros(t.shape()));
    }
    Ok((value, grads))
}

/// Checks every entry of every parameter against central differences.
///
/// Each entry is first tried with `steps[0]`; when the error exceeds `tol`
/// the later (smaller) steps are tried and the best agreement kept, since a
/// step that carries a ReLU input across zero measures a one-sided slope.
pub fn model_grad_check(params: &ModelParams, pairs: &[Pair], epsilon: f64, steps: &[f64], tol: f64) -> Result<ModelGradReport> {
    if steps.is_empty() {
        return Err(Error::invalid("at least one finite-difference step is needed"));
    }
    if params.config().dropout != 0.0 {
        return Err(Error::invalid("gradient check needs dropout 0"));
    }
    let (_, grads) = loss_gradients(params, pairs, epsilon)?;
    let refs: Vec<&Pair> = pairs.iter().collect();
    let mut work = params.clone();
    let eval = |p: &ModelParams| -> Result<f64> {
        let mut fw = Forward::inference(p);
        let (loss, _) = batch_loss(&mut fw, &refs, epsilon)?;
        Ok(fw.g.value(loss).item())
    };
    let mut checks = Vec::new();
    for (name, grad) in &grads {
        let mut max_rel: f64 = 0.0;
        for j in 0..grad.numel() {
            let orig = params.get(name).expect("same names").data()[j];
            let mut best = f64::INFINITY;
            for &h in steps {
                work.get_mut(name).expect("same names").data_mut()[j] = orig + h;
                let up = eval(&work)?;
                work.get_mut(name).expect("same names").data_mut()[j] = orig - h;
                let down = eval(&work)?;
                work.get_mut(name).expect("same names").data_mut()[j] = orig;
                best = best.min(relative_error(grad.data()[j], (up - down) / (2.0 * h)));
                if best <= tol {
                    break;
                }
            }
            max_rel = max_rel.max(best);
        }
        checks.push(NamedCheck {
            name: name.clone(),
            entries: grad.numel(),
            max_rel_err: max_rel,
        });
    }
    Ok(ModelGradReport { checks, tol })
}
