use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{dataset_loss, sample_loss, TrainingSample};
use crate::error::Result;
use crate::nn::{param_group, ParamGrads, Weights};

/// Analytic-versus-numeric gradient agreement for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: String,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over probed entries.
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub entries: usize,
}

/// Compares back-propagated gradients of the mean Charbonnier loss with
/// central differences of step `h`. At most `max_per_param` entries of
/// each tensor are probed, evenly spaced; 0 probes all of them.
pub fn gradient_check(
    weights: &Weights<f64>,
    samples: &[TrainingSample<f64>],
    eps_loss: f64,
    h: f64,
    max_per_param: usize,
) -> Result<Vec<GroupCheck>> {
    let mut grads = ParamGrads::zeros_like(weights);
    let scale = 1.0 / samples.len().max(1) as f64;
    for s in samples {
        sample_loss(weights, s, eps_loss, Some((&mut grads, scale)))?;
    }
    let mut probe = weights.clone();
    let mut groups: Vec<(String, f64, f64, f64, usize)> = Vec::new();
    for (pi, param) in weights.params().iter().enumerate() {
        let n = param.data.len();
        let count = if max_per_param == 0 { n } else { n.min(max_per_param) };
        let group = param_group(&param.name).to_string();
        if groups.last().map(|g| g.0 != group).unwrap_or(true) {
            groups.push((group, 0.0, 0.0, 0.0, 0));
        }
        let entry = groups.last_mut().unwrap();
        for k in 0..count {
            let idx = k * n / count;
            let orig = param.data[idx];
            probe.params_mut()[pi].data[idx] = orig + h;
            let up = dataset_loss(&probe, samples, eps_loss)?;
            probe.params_mut()[pi].data[idx] = orig - h;
            let dn = dataset_loss(&probe, samples, eps_loss)?;
            probe.params_mut()[pi].data[idx] = orig;
            let numeric = (up - dn) / (2.0 * h);
            let analytic = grads.grads[pi][idx];
            entry.1 += (analytic - numeric) * (analytic - numeric);
            entry.2 += analytic * analytic;
            entry.3 += numeric * numeric;
            entry.4 += 1;
        }
    }
    Ok(groups
        .into_iter()
        .map(|(group, diff, a, b, entries)| {
            let denom = libm::sqrt(a).max(libm::sqrt(b));
            let rel_error = if denom > 0.0 { libm::sqrt(diff) / denom } else { 0.0 };
            GroupCheck { group, rel_error, analytic_norm: libm::sqrt(a), entries }
        })
        .collect())
}
