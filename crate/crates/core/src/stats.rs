//! Small statistics helpers shared by the ensemble lab and the trainer.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (Bessel-corrected) sample variance; NaN below two samples.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Population (1/n) standard deviation.
pub fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt()
}

pub fn standard_error_of_mean(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Standard error of the Bessel-corrected sample variance, from the moment
/// formula `Var(s^2) = mu4/n - sigma^4 (n-3) / (n (n-1))` with empirical
/// central moments.
pub fn variance_standard_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 4 {
        return f64::NAN;
    }
    let m = mean(xs);
    let mu2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let mu4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let var_of_var = (mu4 / n - mu2 * mu2 * (n - 3.0) / (n * (n - 1.0))).max(0.0);
    var_of_var.sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile on a copy of the data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in quantile input"));
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Five-number summary with 1.5-IQR outliers, matching the usual boxplot
/// convention: the box spans the middle 50%, whiskers cover the non-outlier
/// range, everything beyond is listed individually.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

pub fn box_summary(xs: &[f64]) -> BoxSummary {
    let q1 = quantile(xs, 0.25);
    let q3 = quantile(xs, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let mut outliers: Vec<f64> = xs
        .iter()
        .copied()
        .filter(|x| *x < lo_fence || *x > hi_fence)
        .collect();
    outliers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let inliers: Vec<f64> = xs
        .iter()
        .copied()
        .filter(|x| *x >= lo_fence && *x <= hi_fence)
        .collect();
    let whisker_lo = inliers.iter().copied().fold(f64::INFINITY, f64::min);
    let whisker_hi = inliers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    BoxSummary {
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        q1,
        median: quantile(xs, 0.5),
        q3,
        max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        whisker_lo,
        whisker_hi,
        outliers,
    }
}
