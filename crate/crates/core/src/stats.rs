//! Small numerical helpers shared by the normalization and testing stages.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Arithmetic mean. `None` for an empty slice.
pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation (divisor `n - 1`). `None` for fewer than two values.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Median of the values; the mean of the two middle order statistics for even
/// counts. Reorders `values` in place. `None` if empty.
pub fn median_in_place(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let lower_max = lower.iter().copied().max_by(f64::total_cmp)?;
        Some(0.5 * (lower_max + upper))
    }
}

/// Upper quantile of Student's t distribution: the value `t` with
/// `P(T <= t) = prob` for `df` degrees of freedom.
///
/// The initial estimate from the regularized incomplete beta inverse is
/// polished with Newton steps on the CDF, which brings the result to ~1e-12
/// for the degrees of freedom the outlier test uses.
pub fn student_t_quantile(prob: f64, df: f64) -> f64 {
    assert!(prob > 0.0 && prob < 1.0, "probability must lie in (0, 1)");
    assert!(df > 0.0, "degrees of freedom must be positive");
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid Student t parameters");
    let mut t = dist.inverse_cdf(prob);
    for _ in 0..8 {
        let density = student_t_pdf(t, df);
        if !(density > 0.0) {
            break;
        }
        let step = (dist.cdf(t) - prob) / density;
        t -= step;
        if step.abs() <= 1e-14 * t.abs().max(1.0) {
            break;
        }
    }
    t
}

fn student_t_pdf(t: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let ln_norm = ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_norm - 0.5 * (df + 1.0) * (1.0 + t * t / df).ln()).exp()
}

/// Quantile of the chi-square distribution with two degrees of freedom,
/// which is exponential with mean 2.
pub fn chi_square_2dof_quantile(prob: f64) -> f64 {
    -2.0 * (-prob).ln_1p()
}
