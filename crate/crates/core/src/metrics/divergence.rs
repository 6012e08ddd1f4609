use std::collections::{BTreeMap, BTreeSet};

use super::MetricsError;

/// A directed navigation edge `(from, to)`.
pub type Edge = (String, String);

/// Probability mass over navigation edges.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDistribution {
    pub mass: BTreeMap<Edge, f64>,
}

impl PathDistribution {
    pub fn support(&self) -> BTreeSet<Edge> {
        self.mass.keys().cloned().collect()
    }

    pub fn get(&self, e: &Edge) -> f64 {
        self.mass.get(e).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.mass.values().sum()
    }
}

pub fn edges_of<S: AsRef<str>>(path: &[S]) -> impl Iterator<Item = Edge> + '_ {
    path.windows(2)
        .map(|w| (w[0].as_ref().to_string(), w[1].as_ref().to_string()))
}

/// Edge-frequency distribution of `paths`, additively smoothed by `alpha`
/// over `support` joined with the observed edges.
pub fn path_distribution<S: AsRef<str>>(
    paths: &[Vec<S>],
    support: &BTreeSet<Edge>,
    alpha: f64,
) -> Result<PathDistribution, MetricsError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(MetricsError::InvalidAlpha(alpha));
    }
    let mut counts: BTreeMap<Edge, u64> = support.iter().map(|e| (e.clone(), 0)).collect();
    let mut total = 0u64;
    for p in paths {
        for e in edges_of(p) {
            *counts.entry(e).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyPaths);
    }
    if alpha == 0.0 {
        if let Some((e, _)) = counts.iter().find(|(_, c)| **c == 0) {
            return Err(MetricsError::ZeroMassSupport(e.clone()));
        }
    }
    let denom = total as f64 + alpha * counts.len() as f64;
    Ok(PathDistribution {
        mass: counts
            .into_iter()
            .map(|(e, c)| (e, (c as f64 + alpha) / denom))
            .collect(),
    })
}

fn kl_half(p: f64, m: f64) -> f64 {
    if p > 0.0 {
        0.5 * p * (p / m).log2()
    } else {
        0.0
    }
}

/// Base-2 Jensen-Shannon divergence over the union of both supports; an edge
/// missing from one side counts as zero mass there.
pub fn js_divergence(p: &PathDistribution, q: &PathDistribution) -> f64 {
    let union: BTreeSet<&Edge> = p.mass.keys().chain(q.mass.keys()).collect();
    let mut sum = 0.0;
    for e in union {
        let (pe, qe) = (p.get(e), q.get(e));
        if pe == qe {
            continue;
        }
        let m = 0.5 * (pe + qe);
        sum += kl_half(pe, m) + kl_half(qe, m);
    }
    sum.clamp(0.0, 1.0)
}

/// As [`js_divergence`], but both distributions must share one support.
pub fn js_divergence_strict(p: &PathDistribution, q: &PathDistribution) -> Result<f64, MetricsError> {
    if p.mass.keys().ne(q.mass.keys()) {
        return Err(MetricsError::SupportMismatch);
    }
    Ok(js_divergence(p, q))
}

/// Divergence between observed paths and a reference path set. With
/// `alpha > 0` both sides are smoothed over their joint edge set.
pub fn path_set_divergence<S: AsRef<str>, T: AsRef<str>>(
    observed: &[Vec<S>],
    reference: &[Vec<T>],
    alpha: f64,
) -> Result<f64, MetricsError> {
    let support: BTreeSet<Edge> = if alpha > 0.0 {
        observed
            .iter()
            .flat_map(|p| edges_of(p))
            .chain(reference.iter().flat_map(|p| edges_of(p)))
            .collect()
    } else {
        BTreeSet::new()
    };
    let p = path_distribution(observed, &support, alpha)?;
    let q = path_distribution(reference, &support, alpha)?;
    Ok(js_divergence(&p, &q))
}
