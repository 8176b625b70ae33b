//! Cross-entropy and the slow-network consistency loss.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How squared kernel differences are reduced inside one pair term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlowLossReduction {
    /// Mean over elements.
    #[default]
    Mean,
    /// Plain squared Frobenius norm.
    Sum,
}

/// Batch-mean cross-entropy and the softmax probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(Scalar, Tensor)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::InvalidShape {
            shape: logits.shape().to_vec(),
            reason: format!("expected [batch, classes] logits for {} labels", labels.len()),
        });
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    let mut probs = Vec::with_capacity(b * k);
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let m = row.iter().copied().fold(Scalar::NEG_INFINITY, Scalar::max);
        let z: Scalar = row.iter().map(|&v| (v - m).exp()).sum();
        let lz = z.ln();
        loss += lz - (row[label] - m);
        probs.extend(row.iter().map(|&v| (v - m).exp() / z));
    }
    Ok((loss / b as Scalar, Tensor::from_parts(vec![b, k], probs)))
}

pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Scalar> {
    softmax_cross_entropy(logits, labels).map(|(l, _)| l)
}

pub fn total_loss(ce: Scalar, ls: Scalar, alpha: Scalar) -> Scalar {
    ce + alpha * ls
}

fn expansion_factor(c: usize, target: usize) -> Result<usize> {
    if target % c != 0 || target < c {
        return Err(Error::InvalidArgument(format!(
            "cannot expand {c} channels to {target} by repetition"
        )));
    }
    Ok(target / c)
}

/// Repeats `k: [1, C, ...]` along channels until it has `target` channels.
pub fn channel_expand(k: &Tensor, target: usize) -> Result<Tensor> {
    let r = expansion_factor(k.shape()[1], target)?;
    Tensor::concat(&vec![k; r], 1)
}

fn check_trace(shapes: &[&[usize]]) -> Result<()> {
    for s in shapes {
        if s.len() < 2 || s[2..] != shapes[0][2..] {
            return Err(Error::shape("slow_neural_loss", shapes[0], s));
        }
    }
    Ok(())
}

/// `Σ_j Σ_{t<j} ‖K^j − E(K^t)‖²` over a trace of global kernels.
pub fn slow_neural_loss(trace: &[Tensor], reduction: SlowLossReduction) -> Result<Scalar> {
    check_trace(&trace.iter().map(|t| t.shape()).collect::<Vec<_>>())?;
    let mut total = 0.0;
    for j in 1..trace.len() {
        for t in 0..j {
            let e = channel_expand(&trace[t], trace[j].shape()[1])?;
            let ss: Scalar = trace[j].data().iter().zip(e.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            total += match reduction {
                SlowLossReduction::Mean => ss / e.numel() as Scalar,
                SlowLossReduction::Sum => ss,
            };
        }
    }
    Ok(total)
}

/// Graph version of [`channel_expand`].
pub fn channel_expand_var(g: &mut Graph, k: Var, target: usize) -> Result<Var> {
    let r = expansion_factor(g.shape(k)[1], target)?;
    g.concat(&vec![k; r], 1)
}

/// Graph version of [`slow_neural_loss`]; a trace shorter than two gives a
/// constant zero.
pub fn slow_neural_loss_var(g: &mut Graph, trace: &[Var], reduction: SlowLossReduction) -> Result<Var> {
    check_trace(&trace.iter().map(|&v| g.shape(v)).collect::<Vec<_>>())?;
    let mut total: Option<Var> = None;
    for j in 1..trace.len() {
        for t in 0..j {
            let cj = g.shape(trace[j])[1];
            let e = channel_expand_var(g, trace[t], cj)?;
            let d = g.sub(trace[j], e)?;
            let sq = g.square(d);
            let term = match reduction {
                SlowLossReduction::Mean => g.mean_all(sq),
                SlowLossReduction::Sum => g.sum_all(sq),
            };
            total = Some(match total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
    }
    Ok(total.unwrap_or_else(|| g.constant(Tensor::scalar(0.0))))
}
