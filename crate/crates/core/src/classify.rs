//! Classification by conditional reconstruction energy.
//!
//! For each candidate condition the activation is inverted to `tau` and
//! regenerated back to `t = 1` under that same condition. The squared
//! reconstruction error is the candidate's energy; the lowest energy wins.

use rayon::prelude::*;

use crate::flow::{flow_map, invert, SolveSpec};
use crate::model::{Condition, Site, VelocityField};
use crate::numerics::squared_distance;
use crate::{Error, Result};

/// A candidate label: condition id plus its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: u32,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    /// `(condition id, energy)`, sorted by id.
    pub energies: Vec<(u32, f64)>,
    pub predicted: u32,
    /// Second-lowest minus lowest energy; `+inf` with a single candidate.
    pub margin: f64,
}

impl EnergyReport {
    pub fn energy(&self, id: u32) -> Option<f64> {
        self.energies.iter().find(|(i, _)| *i == id).map(|(_, e)| *e)
    }
}

/// `||a - F(tau -> 1)(F(1 -> tau)(a; c); c)||^2`. The backward leg uses
/// `spec.inversion_guidance`, the forward leg `spec.guidance_scale`, both with
/// `spec.steps` steps.
pub fn reconstruction_energy<F: VelocityField + ?Sized>(
    field: &F,
    a: &[f64],
    cond: &[f64],
    site: Site,
    tau: f64,
    spec: &SolveSpec,
) -> Result<f64> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Argument(format!(
            "reconstruction needs 0 <= tau < 1 (tau = 1 gives zero energy for every candidate), got {tau}"
        )));
    }
    let latent = invert(field, a, Condition::Embedding(cond), site, tau, spec)?;
    let back = flow_map(field, &latent, tau, 1.0, Condition::Embedding(cond), site, spec)?;
    Ok(squared_distance(a, &back))
}

/// Energies for every candidate and the argmin, ties going to the lowest id.
pub fn classify<F: VelocityField + ?Sized>(
    field: &F,
    a: &[f64],
    candidates: &[Candidate],
    site: Site,
    tau: f64,
    spec: &SolveSpec,
) -> Result<EnergyReport> {
    if candidates.is_empty() {
        return Err(Error::Argument("classify needs at least one candidate".into()));
    }
    let mut sorted: Vec<&Candidate> = candidates.iter().collect();
    sorted.sort_by_key(|c| c.id);
    if sorted.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::Argument("duplicate candidate id".into()));
    }
    let energies = sorted
        .par_iter()
        .map(|c| Ok((c.id, reconstruction_energy(field, a, &c.embedding, site, tau, spec)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, (_, e)) in energies.iter().enumerate() {
        // Strict comparison keeps the lowest id on ties.
        if *e < energies[best].1 {
            best = i;
        }
    }
    let runner_up = energies
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, (_, e))| *e)
        .fold(f64::INFINITY, f64::min);
    Ok(EnergyReport {
        predicted: energies[best].0,
        margin: runner_up - energies[best].1,
        energies,
    })
}

/// `E(negative) - E(positive)`; larger means more confidently positive.
pub fn binary_score(report: &EnergyReport, negative: u32, positive: u32) -> Result<f64> {
    if report.energies.len() != 2 {
        return Err(Error::Argument(format!(
            "binary score needs exactly two candidates, report has {}",
            report.energies.len()
        )));
    }
    let e_neg = report
        .energy(negative)
        .ok_or_else(|| Error::Argument(format!("negative id {negative} not in report")))?;
    let e_pos = report
        .energy(positive)
        .ok_or_else(|| Error::Argument(format!("positive id {positive} not in report")))?;
    if negative == positive {
        return Err(Error::Argument("positive and negative ids must differ".into()));
    }
    Ok(e_neg - e_pos)
}

/// Rank-based ROC AUC (Mann-Whitney U). Tied scores share the average rank,
/// which counts every tied positive/negative pair as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("auc scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Argument("auc needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Ranks are doubled so tie averages stay integral.
    let mut doubled_rank_sum_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1, doubled average = i + j + 2.
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            if labels[k] {
                doubled_rank_sum_pos += doubled;
            }
        }
        i = j + 1;
    }
    let doubled_u = doubled_rank_sum_pos - (n_pos * (n_pos + 1)) as u64;
    Ok(doubled_u as f64 / (2 * n_pos * n_neg) as f64)
}
