//! Small numerical helpers shared by the estimators, oracle and harness.

use serde::{Deserialize, Serialize};

/// Two-pass mean: a naive sum followed by a correction pass.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    m + xs.iter().map(|x| x - m).sum::<f64>() / n
}

/// Sum of squared deviations from the mean, two-pass.
pub fn sum_sq_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Sample variance with denominator n − 1.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    sum_sq_dev(xs) / (xs.len() - 1) as f64
}

/// Quantile by linear interpolation between order statistics (Hyndman-Fan type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Running mean and centred second moment, mergeable (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        Moments {
            n,
            mean: self.mean + d * nb / n as f64,
            m2: self.m2 + other.m2 + d * d * na * nb / n as f64,
        }
    }

    /// Variance over the population of pushed values (denominator n).
    pub fn population_variance(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.m2 / self.n as f64
        }
    }

    pub fn sample_variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

/// Running co-moment of two series, mergeable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CoMoments {
    pub n: u64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub c: f64,
}

impl CoMoments {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let dx = x - self.mean_x;
        self.mean_x += dx / self.n as f64;
        self.mean_y += (y - self.mean_y) / self.n as f64;
        self.c += dx * (y - self.mean_y);
    }

    pub fn merge(&self, o: &CoMoments) -> CoMoments {
        if self.n == 0 {
            return *o;
        }
        if o.n == 0 {
            return *self;
        }
        let n = self.n + o.n;
        let (na, nb) = (self.n as f64, o.n as f64);
        let dx = o.mean_x - self.mean_x;
        let dy = o.mean_y - self.mean_y;
        CoMoments {
            n,
            mean_x: self.mean_x + dx * nb / n as f64,
            mean_y: self.mean_y + dy * nb / n as f64,
            c: self.c + o.c + dx * dy * na * nb / n as f64,
        }
    }

    pub fn population_covariance(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.c / self.n as f64
        }
    }
}

/// Jackknife standard errors of the sample mean and the sample variance.
///
/// Leave-one-out values come from centred running sums, O(n). The variance SE
/// needs n ≥ 3.
pub fn jackknife_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n < 2 {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(xs);
    let d: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let s2: f64 = d.iter().map(|x| x * x).sum();
    let nf = n as f64;
    let loo_means: Vec<f64> = d.iter().map(|x| -x / (nf - 1.0)).collect();
    let spread = |vals: &[f64]| {
        let c = mean(vals);
        ((nf - 1.0) / nf * vals.iter().map(|v| (v - c) * (v - c)).sum::<f64>()).sqrt()
    };
    let se_mean = spread(&loo_means);
    if n < 3 {
        return (se_mean, f64::NAN);
    }
    let loo_vars: Vec<f64> = d
        .iter()
        .zip(&loo_means)
        .map(|(x, mk)| (s2 - x * x - (nf - 1.0) * mk * mk) / (nf - 2.0))
        .collect();
    (se_mean, spread(&loo_vars))
}

/// |a − b| relative to max(|b|, floor).
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert!((quantile(&xs, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn two_pass_mean_is_stable() {
        let xs: Vec<f64> = (0..1000).map(|k| 1e9 + (k % 7) as f64).collect();
        let direct = (0..1000).map(|k| (k % 7) as f64).sum::<f64>() / 1000.0;
        assert!((mean(&xs) - 1e9 - direct).abs() < 1e-6);
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.0, 0.5];
        let (se_m, se_v) = jackknife_se(&xs);
        let n = xs.len() as f64;
        let loo = |f: &dyn Fn(&[f64]) -> f64| -> f64 {
            let vals: Vec<f64> = (0..xs.len())
                .map(|k| {
                    let rest: Vec<f64> = xs.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, x)| *x).collect();
                    f(&rest)
                })
                .collect();
            let c = mean(&vals);
            ((n - 1.0) / n * vals.iter().map(|v| (v - c).powi(2)).sum::<f64>()).sqrt()
        };
        assert!((se_m - loo(&|r| mean(r))).abs() < 1e-12);
        assert!((se_v - loo(&|r| sample_variance(r))).abs() < 1e-12);
        assert!((se_m - (sample_variance(&xs) / n).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn merge_matches_sequential(xs in prop::collection::vec(-1e3f64..1e3, 2..60), cut in 0usize..60) {
            let cut = cut.min(xs.len());
            let mut all = Moments::default();
            let mut a = Moments::default();
            let mut b = Moments::default();
            let mut ca = CoMoments::default();
            let mut cb = CoMoments::default();
            let mut call = CoMoments::default();
            for (k, &x) in xs.iter().enumerate() {
                all.push(x);
                call.push(x, 2.0 * x);
                if k < cut { a.push(x); ca.push(x, 2.0 * x) } else { b.push(x); cb.push(x, 2.0 * x) }
            }
            let m = a.merge(&b);
            let scale = 1.0 + all.m2.abs();
            prop_assert!((m.mean - all.mean).abs() < 1e-9);
            prop_assert!((m.m2 - all.m2).abs() < 1e-9 * scale);
            prop_assert!((m.sample_variance() - sample_variance(&xs)).abs() < 1e-9 * scale);
            let cm = ca.merge(&cb);
            prop_assert!((cm.c - 2.0 * all.m2).abs() < 1e-9 * scale);
        }
    }
}
