use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest effective sample size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub labels: Vec<String>,
    pub control: Vec<f64>,
    pub treatment: Vec<f64>,
}

impl PairedSample {
    pub fn new(labels: Vec<String>, control: Vec<f64>, treatment: Vec<f64>) -> Result<Self> {
        let sample = Self {
            labels,
            control,
            treatment,
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Builds a sample with positional labels `0..n`.
    pub fn unlabeled(control: Vec<f64>, treatment: Vec<f64>) -> Result<Self> {
        let labels = (0..control.len()).map(|i| i.to_string()).collect();
        Self::new(labels, control, treatment)
    }

    fn validate(&self) -> Result<()> {
        let n = self.control.len();
        if n == 0 {
            return Err(Error::validation("paired sample is empty"));
        }
        if self.treatment.len() != n || self.labels.len() != n {
            return Err(Error::validation(format!(
                "paired sample lists differ in length: labels={}, control={}, treatment={}",
                self.labels.len(),
                n,
                self.treatment.len()
            )));
        }
        if self
            .control
            .iter()
            .chain(&self.treatment)
            .any(|v| !v.is_finite())
        {
            return Err(Error::validation("paired sample contains non-finite values"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Alternative {
    TreatmentGreater,
    TreatmentLess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Sum of ranks of the positive differences (treatment − control).
    #[serde(rename = "V")]
    pub v: f64,
    pub p_value: f64,
    /// Rank-biserial correlation, oriented so positive values favour the alternative.
    pub r: f64,
    pub n_effective: usize,
    pub method: Method,
    pub alternative: Alternative,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Paired one-tailed Wilcoxon signed-rank test.
///
/// Zero differences are dropped before ranking. The p-value is exact when at
/// most [`EXACT_MAX_N`] pairs remain and no absolute differences tie;
/// otherwise a normal approximation with tie-corrected variance and a
/// continuity correction is used.
pub fn wilcoxon_one_tailed(sample: &PairedSample, alternative: Alternative) -> Result<TestResult> {
    sample.validate()?;
    let diffs: Vec<f64> = sample
        .treatment
        .iter()
        .zip(&sample.control)
        .map(|(t, c)| t - c)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(Error::DegenerateSample(
            "all paired differences are zero".into(),
        ));
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let v: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    let has_ties = {
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.windows(2).any(|w| w[0] == w[1])
    };

    let (p_value, method) = if n <= EXACT_MAX_N && !has_ties {
        (exact_p(v, n, alternative), Method::Exact)
    } else {
        (normal_p(v, n, &ranks, alternative), Method::NormalApprox)
    };

    let r = rank_biserial(v, n)?;
    let r = match alternative {
        Alternative::TreatmentGreater => r,
        Alternative::TreatmentLess => -r,
    };

    Ok(TestResult {
        v,
        p_value: p_value.clamp(0.0, 1.0),
        r,
        n_effective: n,
        method,
        alternative,
    })
}

/// Exact tail probability from the null distribution of V over all 2ⁿ sign
/// assignments of the ranks 1..n, counted by subset-sum.
fn exact_p(v: f64, n: usize, alternative: Alternative) -> f64 {
    let max_sum = n * (n + 1) / 2;
    let mut counts = vec![0u64; max_sum + 1];
    counts[0] = 1;
    for rank in 1..=n {
        for s in (rank..=max_sum).rev() {
            counts[s] += counts[s - rank];
        }
    }
    let total = (1u64 << n) as f64;
    let v = v.round() as usize;
    let hits: u64 = match alternative {
        Alternative::TreatmentGreater => counts[v..].iter().sum(),
        Alternative::TreatmentLess => counts[..=v].iter().sum(),
    };
    hits as f64 / total
}

fn normal_p(v: f64, n: usize, ranks: &[f64], alternative: Alternative) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let sd = variance.sqrt();
    let normal = Normal::standard();
    match alternative {
        Alternative::TreatmentGreater => {
            let z = (v - mean - 0.5) / sd;
            normal.sf(z)
        }
        Alternative::TreatmentLess => {
            let z = (v - mean + 0.5) / sd;
            normal.cdf(z)
        }
    }
}

/// Rank-biserial correlation `(V − (T − V)) / T` with `T = n(n+1)/2`.
///
/// Evaluated as `(2V − T) / T`, which is exact for integer and half-integer
/// V, so `r(V) = −r(T − V)` holds bit for bit.
pub fn rank_biserial(v: f64, n_effective: usize) -> Result<f64> {
    if n_effective == 0 {
        return Err(Error::validation("rank-biserial needs n_effective >= 1"));
    }
    let total = (n_effective * (n_effective + 1)) as f64 / 2.0;
    if !v.is_finite() || v < 0.0 || v > total {
        return Err(Error::validation(format!(
            "V={v} outside [0, {total}] for n_effective={n_effective}"
        )));
    }
    Ok((2.0 * v - total) / total)
}
