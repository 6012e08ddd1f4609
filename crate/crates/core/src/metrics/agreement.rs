use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Cohen's kappa for two binary raters over the same items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub rater_a: String,
    pub rater_b: String,
    /// `None` when chance agreement is exactly 1.
    pub kappa: Option<f64>,
    pub n_items: usize,
}

fn check_aligned(a: &[bool], b: &[bool]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch { a: a.len(), b: b.len() });
    }
    if a.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

/// Kappa with observed agreement and chance agreement taken from the two
/// raters' marginals.
pub fn cohens_kappa(a: &[bool], b: &[bool]) -> Result<Option<f64>, MetricsError> {
    check_aligned(a, b)?;
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let a1 = a.iter().filter(|&&x| x).count() as f64;
    let b1 = b.iter().filter(|&&x| x).count() as f64;
    let p_o = agree / n;
    let p_e = (a1 / n) * (b1 / n) + ((n - a1) / n) * ((n - b1) / n);
    if p_e == 1.0 {
        return Ok(None);
    }
    Ok(Some((p_o - p_e) / (1.0 - p_e)))
}

pub fn kappa_result(
    rater_a: &str,
    rater_b: &str,
    a: &[bool],
    b: &[bool],
) -> Result<KappaResult, MetricsError> {
    Ok(KappaResult {
        rater_a: rater_a.to_string(),
        rater_b: rater_b.to_string(),
        kappa: cohens_kappa(a, b)?,
        n_items: a.len(),
    })
}

/// LLM-versus-human 2x2 table.
///
/// | | human confusing | human not |
/// |---|---|---|
/// | LLM confusing | a | b |
/// | LLM not | c | d |
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
    pub odds_ratio: f64,
}

impl CrossTab {
    pub fn from_counts(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d, odds_ratio: corrected_odds_ratio(a, b, c, d) }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

/// Odds ratio with 0.5 added to every cell.
pub fn corrected_odds_ratio(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let h = |x: u64| x as f64 + 0.5;
    (h(a) * h(d)) / (h(b) * h(c))
}

pub fn failure_crosstab(llm: &[bool], human: &[bool]) -> Result<CrossTab, MetricsError> {
    check_aligned(llm, human)?;
    let (mut a, mut b, mut c, mut d) = (0, 0, 0, 0);
    for (&l, &h) in llm.iter().zip(human) {
        match (l, h) {
            (true, true) => a += 1,
            (true, false) => b += 1,
            (false, true) => c += 1,
            (false, false) => d += 1,
        }
    }
    Ok(CrossTab::from_counts(a, b, c, d))
}
