use crate::error::{Error, Result};

/// Compares an analytic gradient against central differences.
///
/// `f` returns the scalar value and its analytic gradient at a point. The
/// result is the largest `|analytic - numeric| / max(1, |numeric|)` over all
/// coordinates.
pub fn grad_check<F>(f: F, point: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = f(point)?;
    if !value.is_finite() {
        return Err(Error::NonFinite { context: "grad_check base point".into() });
    }
    if analytic.len() != point.len() {
        return Err(Error::shape("grad_check gradient", point.len(), analytic.len()));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let (fp, _) = f(&x)?;
        x[i] = point[i] - h;
        let (fm, _) = f(&x)?;
        x[i] = point[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteEvaluation { coordinate: i });
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_polynomial() {
        let err = grad_check(|x| Ok((x[0] * x[0], vec![2.0 * x[0]])), &[3.0], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let err = grad_check(|x| Ok((x[0] * x[0], vec![2.0 * x[0] * 1.01])), &[3.0], 1e-5).unwrap();
        assert!(err > 5e-3, "{err}");
    }

    #[test]
    fn non_finite_reports_coordinate() {
        let f = |x: &[f64]| Ok(((x[1]).ln() + x[0], vec![1.0, 1.0 / x[1]]));
        match grad_check(f, &[1.0, 0.0 + 1e-6], 1e-5) {
            Err(Error::NonFiniteEvaluation { coordinate }) => assert_eq!(coordinate, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
