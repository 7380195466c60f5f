use crate::error::{Error, Result};

/// Mean of `|predicted − actual|` over the cells where `at` is true.
pub fn mae(predicted: &[f64], actual: &[f64], at: &[bool]) -> Result<f64> {
    if predicted.len() != actual.len() || actual.len() != at.len() {
        return Err(Error::Shape(format!(
            "mae over {} predictions, {} actuals and {} mask cells",
            predicted.len(),
            actual.len(),
            at.len()
        )));
    }
    let (sum, count) = predicted
        .iter()
        .zip(actual)
        .zip(at)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), ((p, a), _)| (s + (p - a).abs(), c + 1));
    if count == 0 {
        return Err(Error::NoCellsToScore);
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0], &[true, true]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 5.0], &[0.0, 2.0], &[true, true]).unwrap(), 2.0);
        assert_eq!(mae(&[1.0, 9.0], &[1.5, 0.0], &[true, false]).unwrap(), 0.5);
        assert_eq!(mae(&[1.0], &[1.0], &[false]).unwrap_err().code(), "no-cells-to-score");
    }
}
