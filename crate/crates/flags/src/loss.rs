//! The combined contrastive loss: a global branch and a local branch, each
//! a multi-positive InfoNCE where every positive gets its own denominator
//! (queue terms plus only that positive's exp term).
//!
//! Logits are shifted by their max before exponentiation; the result is
//! identical and exp stays in range even for very small temperatures.

use crate::error::{FlagsError, Result};
use crate::numeric::{Graph, NodeId, Tensor, EXP_OVERFLOW_LIMIT};
use crate::queue::UNIT_NORM_TOLERANCE;

/// Inputs to one branch of the loss. `z_query` and `positives` are graph
/// nodes (the caller decides which carry gradients); `negatives` is a
/// [n x embed_dim] snapshot from the key queue, always treated as constant.
pub struct BranchInputs {
    pub z_query: NodeId,
    pub positives: Vec<NodeId>,
    pub negatives: Tensor,
    pub temperature: f64,
}

fn check_unit(g: &Graph, id: NodeId, what: &str) -> Result<()> {
    let norm = g.value(id).norm();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(FlagsError::Contract(format!(
            "{what} has norm {norm:.9}, expected unit"
        )));
    }
    Ok(())
}

fn validate(g: &Graph, inp: &BranchInputs) -> Result<()> {
    if inp.positives.is_empty() {
        return Err(FlagsError::Contract("branch loss needs at least one positive".into()));
    }
    if inp.temperature <= 0.0 {
        return Err(FlagsError::Contract(format!(
            "temperature {} must be positive",
            inp.temperature
        )));
    }
    check_unit(g, inp.z_query, "query embedding")?;
    for (i, &p) in inp.positives.iter().enumerate() {
        check_unit(g, p, &format!("positive {i}"))?;
    }
    let d = g.value(inp.z_query).numel();
    if inp.negatives.shape.len() != 2 || inp.negatives.shape[1] != d {
        return Err(FlagsError::Dimension {
            expected: format!("[n x {d}] negatives"),
            got: format!("{:?}", inp.negatives.shape),
        });
    }
    let n = inp.negatives.shape[0];
    for row in 0..n {
        let slice = &inp.negatives.values[row * d..(row + 1) * d];
        let norm = slice.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(FlagsError::Contract(format!(
                "negative row {row} has norm {norm:.9}, expected unit"
            )));
        }
    }
    Ok(())
}

/// -(1/|P|) * sum_p log[ exp(q.p / tau) / (sum_a exp(q.a / tau) + exp(q.p / tau)) ]
pub fn branch_loss(g: &mut Graph, inp: &BranchInputs) -> Result<NodeId> {
    validate(g, inp)?;
    let inv_tau = 1.0 / inp.temperature;
    let n_neg = inp.negatives.shape[0];

    // positive logits as graph nodes
    let mut pos_logits = Vec::with_capacity(inp.positives.len());
    for &p in &inp.positives {
        let d = g.dot(inp.z_query, p)?;
        pos_logits.push(g.scale(d, inv_tau));
    }

    // queue logits, one matvec shared by all positives
    let neg_logits = if n_neg > 0 {
        let neg = g.constant(inp.negatives.clone());
        let raw = g.matvec(neg, inp.z_query)?;
        Some(g.scale(raw, inv_tau))
    } else {
        None
    };

    // max logit for the stability shift; the shift cancels in the ratio so
    // it is detached from the gradient
    let mut max_logit = f64::NEG_INFINITY;
    for &pl in &pos_logits {
        max_logit = max_logit.max(g.value(pl).item());
    }
    if let Some(nl) = neg_logits {
        for &v in &g.value(nl).values {
            max_logit = max_logit.max(v);
        }
    }
    // honor the overflow contract on the unshifted logits
    for &pl in &pos_logits {
        let v = g.value(pl).item();
        if v.abs() > EXP_OVERFLOW_LIMIT {
            return Err(FlagsError::Overflow(v));
        }
    }
    if let Some(nl) = neg_logits {
        for &v in &g.value(nl).values {
            if v.abs() > EXP_OVERFLOW_LIMIT {
                return Err(FlagsError::Overflow(v));
            }
        }
    }

    // sum of shifted queue exponentials, shared across positives
    let queue_sum = match neg_logits {
        Some(nl) => {
            let shifted = g.add_scalar(nl, -max_logit);
            let e = g.exp(shifted)?;
            Some(g.sum(e))
        }
        None => None,
    };

    let mut per_positive = Vec::with_capacity(pos_logits.len());
    for pl in pos_logits {
        let shifted = g.add_scalar(pl, -max_logit);
        let ep = g.exp(shifted)?;
        let denom = match queue_sum {
            Some(qs) => g.add(qs, ep)?,
            None => ep,
        };
        let log_denom = g.log(denom)?;
        let neg_shifted = g.scale(shifted, -1.0);
        // -log(ep / denom) = log(denom) - shifted
        per_positive.push(g.add(log_denom, neg_shifted)?);
    }

    let stacked = g.concat(&per_positive)?;
    let total = g.sum(stacked);
    Ok(g.scale(total, 1.0 / per_positive.len() as f64))
}

/// Eq-1-style total: global branch plus (optionally) local branch. Passing
/// `None` for the local branch is the documented "disabled" marker used by
/// the aug-only and aug+global training modes.
pub fn combined_loss(
    g: &mut Graph,
    global: &BranchInputs,
    local: Option<&BranchInputs>,
) -> Result<NodeId> {
    let lg = branch_loss(g, global)?;
    match local {
        Some(l) => {
            let ll = branch_loss(g, l)?;
            g.add(lg, ll)
        }
        None => Ok(lg),
    }
}

/// Same total with a weight on the local branch (default 1.0 reproduces
/// the unweighted sum).
pub fn combined_loss_weighted(
    g: &mut Graph,
    global: &BranchInputs,
    local: Option<&BranchInputs>,
    lambda_local: f64,
) -> Result<NodeId> {
    let lg = branch_loss(g, global)?;
    match local {
        Some(l) => {
            let ll = branch_loss(g, l)?;
            let scaled = g.scale(ll, lambda_local);
            g.add(lg, scaled)
        }
        None => Ok(lg),
    }
}
