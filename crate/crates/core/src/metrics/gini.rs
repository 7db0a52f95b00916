use crate::error::{Error, Result};

/// Gini coefficient of non-negative quantities, population convention.
///
/// Evaluated in O(n log n) on the sorted values as
/// `Σ (2i − n − 1)·x₍ᵢ₎ / (n · Σx)`, which equals the mean absolute
/// pairwise difference over twice the mean.
pub fn gini(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::validation(format!(
            "gini needs at least 2 values, got {}",
            values.len()
        )));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::validation(format!(
            "gini values must be finite and non-negative, got {bad}"
        )));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::Undefined("gini of an all-zero distribution".into()));
    }

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok((weighted / (n * total)).max(0.0))
}

/// Log of a participant's speaking proportion relative to an equal share:
/// `ln(duration / total · n)`. Zero means exactly the fair share.
pub fn fair_share_deviation(duration: f64, total: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::validation(format!(
            "fair share needs at least 2 participants, got {n}"
        )));
    }
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::validation(format!(
            "total speaking time must be positive, got {total}"
        )));
    }
    if duration == 0.0 {
        return Err(Error::Undefined(
            "fair-share deviation of a participant who never spoke".into(),
        ));
    }
    if !duration.is_finite() || duration < 0.0 || duration > total {
        return Err(Error::validation(format!(
            "duration must lie in (0, total], got {duration} of {total}"
        )));
    }
    Ok((duration / total * n as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_distribution_is_zero() {
        assert_eq!(gini(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_values() {
        assert!((gini(&[3.0, 1.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!((gini(&[1.0, 0.0, 0.0, 0.0]).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(gini(&[0.0, 0.0]), Err(Error::Undefined(_))));
        assert!(matches!(gini(&[1.0]), Err(Error::Validation(_))));
        assert!(matches!(gini(&[1.0, -1.0]), Err(Error::Validation(_))));
    }

    #[test]
    fn fair_share_examples() {
        assert_eq!(fair_share_deviation(25.0, 100.0, 4).unwrap(), 0.0);
        let d = fair_share_deviation(50.0, 100.0, 4).unwrap();
        assert!((d - 0.693_147_180_559_945_3).abs() < 1e-12);
        assert!(matches!(
            fair_share_deviation(0.0, 100.0, 4),
            Err(Error::Undefined(_))
        ));
        assert!(fair_share_deviation(10.0, 100.0, 1).is_err());
        assert!(fair_share_deviation(110.0, 100.0, 4).is_err());
    }
}
