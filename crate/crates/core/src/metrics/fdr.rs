use crate::error::{Error, Result};

/// Benjamini–Hochberg step-up adjustment. Output is in input order.
pub fn bh_fdr_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p_values
        .iter()
        .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
    {
        return Err(Error::validation(format!(
            "p-values must lie in [0, 1], got {bad}"
        )));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));

    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        let scaled = p_values[idx] * m as f64 / (rank + 1) as f64;
        running = running.min(scaled);
        // m/j ≥ 1, so the exact value is never below the raw p; guard against rounding.
        adjusted[idx] = running.min(1.0).max(p_values[idx]);
    }
    Ok(adjusted)
}
