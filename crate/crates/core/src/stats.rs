//! Estimators, goodness-of-fit statistics and the experiment report type.

use serde::Serialize;

use crate::error::{domain, Result};

/// Outcome of one verification check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatReport {
    pub experiment_id: String,
    /// Which sub-check of the experiment this is (e.g. `"t=0.25, w=x"`).
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ks_distance: Option<f64>,
    pub ks_threshold: Option<f64>,
    pub target: f64,
    /// Accepted deviation for moment-type checks (`3·std_error` unless stated otherwise).
    pub tolerance: f64,
    pub pass: bool,
    pub n_samples: usize,
    pub seed: u64,
}

impl StatReport {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// One-line human readable summary.
    pub fn summary(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        match (self.ks_distance, self.ks_threshold) {
            (Some(d), Some(th)) => format!(
                "{verdict} {} [{}]: KS {d:.5} (threshold {th}), n={}",
                self.experiment_id, self.label, self.n_samples
            ),
            _ => format!(
                "{verdict} {} [{}]: estimate {:.6} target {:.6} |diff| {:.2e} (tolerance {:.2e}, SE {:.2e}), n={}",
                self.experiment_id,
                self.label,
                self.estimate,
                self.target,
                (self.estimate - self.target).abs(),
                self.tolerance,
                self.std_error,
                self.n_samples
            ),
        }
    }
}

/// Mergeable running moments (count, sum, sum of squares).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        Moments {
            count: self.count + other.count,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
        }
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Sample mean and standard error (sample standard deviation / √n).
pub fn mean_and_se(sample: &[f64]) -> Result<(f64, f64)> {
    if sample.len() < 2 {
        return domain(
            "mean_and_se",
            format!("need at least 2 samples, got {}", sample.len()),
        );
    }
    // Two-pass for accuracy.
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

fn sorted_copy(sample: &[f64]) -> Vec<f64> {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Merge two sorted slices into one sorted vector.
pub fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Kolmogorov–Smirnov distance `sup_x |F_n(x) − F(x)|`.
///
/// A distance of at least 0.5 usually means a continuous CDF was applied to a
/// degenerate sample; a warning is logged.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<f64> {
    if sample.is_empty() {
        return domain("ks_statistic", "empty sample");
    }
    let s = sorted_copy(sample);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        // Handle ties: the empirical CDF jumps over all equal values at once.
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        // Compare the left limit of F with the empirical CDF just below the
        // sample value and F itself with the value at it.
        let f = cdf(s[i]).clamp(0.0, 1.0);
        let f_left = cdf(s[i].next_down()).clamp(0.0, 1.0);
        d = d
            .max((f_left - i as f64 / n).abs())
            .max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    if d >= 0.5 {
        log::warn!("KS distance {d:.3} ≥ 0.5: degenerate sample or mismatched CDF");
    }
    Ok(d)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return domain("ks_two_sample", "empty sample");
    }
    let sa = sorted_copy(a);
    let sb = sorted_copy(b);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Moment check: pass iff `|mean − target| ≤ 3·SE` (exact equality when SE = 0).
pub fn moment_report(
    sample: &[f64],
    target: f64,
    experiment_id: &str,
    seed: u64,
) -> Result<StatReport> {
    let (mean, se) = mean_and_se(sample)?;
    Ok(moment_from_estimate(
        mean,
        se,
        target,
        sample.len(),
        experiment_id,
        seed,
    ))
}

/// Moment check from a precomputed estimate and standard error.
pub fn moment_from_estimate(
    estimate: f64,
    std_error: f64,
    target: f64,
    n_samples: usize,
    experiment_id: &str,
    seed: u64,
) -> StatReport {
    let tolerance = 3.0 * std_error;
    let pass = if std_error > 0.0 {
        (estimate - target).abs() <= tolerance
    } else {
        estimate == target
    };
    StatReport {
        experiment_id: experiment_id.to_string(),
        label: String::new(),
        estimate,
        std_error,
        ks_distance: None,
        ks_threshold: None,
        target,
        tolerance,
        pass,
        n_samples,
        seed,
    }
}

/// Relative-accuracy check: pass iff `|estimate − target| ≤ rel·|target|`.
pub fn relative_report(
    estimate: f64,
    std_error: f64,
    target: f64,
    rel: f64,
    n_samples: usize,
    experiment_id: &str,
    seed: u64,
) -> StatReport {
    let tolerance = rel * target.abs();
    StatReport {
        experiment_id: experiment_id.to_string(),
        label: String::new(),
        estimate,
        std_error,
        ks_distance: None,
        ks_threshold: None,
        target,
        tolerance,
        pass: (estimate - target).abs() <= tolerance,
        n_samples,
        seed,
    }
}

/// Distribution check: pass iff the KS distance is at most `threshold`.
pub fn ks_report<F: Fn(f64) -> f64>(
    sample: &[f64],
    cdf: F,
    threshold: f64,
    experiment_id: &str,
    seed: u64,
) -> Result<StatReport> {
    let d = ks_statistic(sample, cdf)?;
    let (mean, se) = mean_and_se(sample).unwrap_or((sample[0], 0.0));
    Ok(ks_from_distance(
        d,
        threshold,
        mean,
        se,
        sample.len(),
        experiment_id,
        seed,
    ))
}

/// Distribution check from a precomputed distance.
pub fn ks_from_distance(
    distance: f64,
    threshold: f64,
    mean: f64,
    std_error: f64,
    n_samples: usize,
    experiment_id: &str,
    seed: u64,
) -> StatReport {
    StatReport {
        experiment_id: experiment_id.to_string(),
        label: String::new(),
        estimate: mean,
        std_error,
        ks_distance: Some(distance),
        ks_threshold: Some(threshold),
        target: f64::NAN,
        tolerance: threshold,
        pass: distance <= threshold,
        n_samples,
        seed,
    }
}

/// Ratio-of-means estimate `Σx / Σy` with its delta-method standard error.
pub fn ratio_of_means(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return domain(
            "ratio_of_means",
            "need two equally long samples of size ≥ 2",
        );
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    if my == 0.0 {
        return domain("ratio_of_means", "denominator mean is zero");
    }
    let ratio = mx / my;
    let var = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = a - ratio * b;
            e * e
        })
        .sum::<f64>()
        / (n - 1.0);
    Ok((ratio, (var / n).sqrt() / my.abs()))
}

/// Pearson correlation coefficient.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return domain("correlation", "need two equally long samples of size ≥ 2");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// One histogram bin with empirical and theoretical densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub empirical: f64,
    pub theoretical: f64,
}

/// Equal-width histogram on `[lo, hi]` compared with a reference CDF; both
/// columns are densities (mass / width).
pub fn histogram<F: Fn(f64) -> f64>(
    sample: &[f64],
    lo: f64,
    hi: f64,
    bins: usize,
    cdf: F,
) -> Vec<HistogramBin> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in sample {
        if x >= lo && x <= hi {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    let n = sample.len().max(1) as f64;
    (0..bins)
        .map(|k| {
            let a = lo + k as f64 * width;
            let b = if k + 1 == bins { hi } else { a + width };
            HistogramBin {
                bin_left: a,
                bin_right: b,
                empirical: counts[k] as f64 / n / (b - a),
                theoretical: (cdf(b) - cdf(a)) / (b - a),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::path_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn ks_on_quantile_sample() {
        let n = 999;
        let sample: Vec<f64> = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
        let d = ks_statistic(&sample, |x| x).unwrap();
        assert!(d <= 1.0 / (n + 1) as f64 + 1e-12);
    }

    #[test]
    fn ks_degenerate_and_empty() {
        assert!(ks_statistic(&[], |x| x).is_err());
        let d = ks_statistic(&[0.5; 10], |x| x).unwrap();
        assert!(d >= 0.5);
        let point_mass = ks_statistic(&[0.5; 10], |x| if x >= 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert!(point_mass <= 0.1);
    }

    #[test]
    fn ks_uniform_noise_scale() {
        // 95th percentile of √n·D is ≈ 1.358; the typical value is well below.
        let mut rng = path_rng(42, 0);
        let sample: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let d = ks_statistic(&sample, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(d < 0.0136 * 1.5, "d = {d}");
    }

    #[test]
    fn two_sample_ks_basics() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = (0..100).map(|i| i as f64 + 1000.0).collect();
        assert_eq!(ks_two_sample(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn moment_report_cases() {
        let r = moment_report(&[2.0; 5], 2.0, "c", 0).unwrap();
        assert!(r.pass && r.std_error == 0.0);
        let r = moment_report(&[2.0; 5], 2.1, "c", 0).unwrap();
        assert!(!r.pass);
        let sample: Vec<f64> = (0..100).map(|i| (i % 10) as f64).collect();
        let (_, se) = mean_and_se(&sample).unwrap();
        let sd = se * 10.0;
        let r = moment_report(&sample, 4.5 + 10.0 * sd, "c", 0).unwrap();
        assert!(!r.pass);
        assert!(moment_report(&[1.0], 1.0, "c", 0).is_err());
    }

    #[test]
    fn exponential_mean_passes() {
        let mut rng = path_rng(5, 0);
        let sample: Vec<f64> = (0..100_000)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        assert!(moment_report(&sample, 1.0, "exp", 5).unwrap().pass);
    }

    #[test]
    fn moments_merge_matches_direct() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let a: Moments = xs[..20].iter().copied().collect();
        let b: Moments = xs[20..].iter().copied().collect();
        let all: Moments = xs.iter().copied().collect();
        let m = a.merge(&b);
        assert_eq!(m.count, all.count);
        assert!((m.mean() - all.mean()).abs() < 1e-14);
        let (mean, se) = mean_and_se(&xs).unwrap();
        assert!((m.mean() - mean).abs() < 1e-14 && (m.std_error() - se).abs() < 1e-12);
    }

    #[test]
    fn ratio_and_correlation() {
        let x = [2.0, 4.0, 6.0];
        let y = [1.0, 2.0, 3.0];
        let (r, se) = ratio_of_means(&x, &y).unwrap();
        assert!((r - 2.0).abs() < 1e-15 && se < 1e-15);
        assert!((correlation(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_of_uniform() {
        let sample: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let h = histogram(&sample, 0.0, 1.0, 10, |x| x);
        assert_eq!(h.len(), 10);
        for b in h {
            assert!((b.empirical - 1.0).abs() < 1e-12 && (b.theoretical - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn ks_invariant_under_monotone_maps(seed in 0u64..500, n in 5usize..200) {
            let mut rng = path_rng(seed, 0);
            let sample: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let d1 = ks_statistic(&sample, |x| x.clamp(0.0, 1.0)).unwrap();
            let mapped: Vec<f64> = sample.iter().map(|x| x.exp()).collect();
            let d2 = ks_statistic(&mapped, |y| y.ln().clamp(0.0, 1.0)).unwrap();
            prop_assert!((d1 - d2).abs() < 1e-12);
        }

        #[test]
        fn moment_report_deterministic(xs in proptest::collection::vec(-10.0f64..10.0, 2..50), t in -5.0f64..5.0) {
            prop_assert_eq!(moment_report(&xs, t, "p", 1).unwrap(), moment_report(&xs, t, "p", 1).unwrap());
        }

        #[test]
        fn merge_sorted_is_sorted(mut a in proptest::collection::vec(-1.0f64..1.0, 0..40),
                                  mut b in proptest::collection::vec(-1.0f64..1.0, 0..40)) {
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            let m = merge_sorted(&a, &b);
            prop_assert_eq!(m.len(), a.len() + b.len());
            prop_assert!(m.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
