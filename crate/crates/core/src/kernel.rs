//! Kernel functions, difference operators and admissibility checks.
//!
//! The central object is the filtered power kernel
//! `h_k(x) = sum_j (-1)^j C(k,j) (x-j)_+^alpha`, which governs every limit in
//! the toolkit. For large `x` the defining sum cancels catastrophically, so
//! [`Hk`] switches to the asymptotic expansion
//! `h_k(x) = sum_{m>=k} C(alpha,m) (-1)^{m+k} k! S(m,k) x^{alpha-m}`
//! where `S` are Stirling numbers of the second kind.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Largest supported difference order.
pub const MAX_ORDER: usize = 8;

const BINOM: [[u32; MAX_ORDER + 1]; MAX_ORDER + 1] = {
    let mut t = [[0u32; MAX_ORDER + 1]; MAX_ORDER + 1];
    let mut n = 0;
    while n <= MAX_ORDER {
        t[n][0] = 1;
        let mut j = 1;
        while j <= n {
            t[n][j] = t[n - 1][j - 1] + if j < n { t[n - 1][j] } else { 0 };
            j += 1;
        }
        n += 1;
    }
    t
};

/// Exact binomial coefficient `C(k, j)` for `k <= 8`.
pub fn binom(k: usize, j: usize) -> u32 {
    if j > k {
        0
    } else {
        BINOM[k][j]
    }
}

/// Signed difference weights `(-1)^j C(k,j)`, `j = 0..=k`.
pub fn difference_weights(k: usize) -> Result<Vec<f64>> {
    check_order(k)?;
    Ok((0..=k)
        .map(|j| {
            let c = binom(k, j) as f64;
            if j % 2 == 0 {
                c
            } else {
                -c
            }
        })
        .collect())
}

fn check_order(k: usize) -> Result<()> {
    if k < 1 {
        return domain("difference order k must be at least 1");
    }
    if k > MAX_ORDER {
        return domain(format!("difference order k={k} exceeds the supported maximum {MAX_ORDER}"));
    }
    Ok(())
}

/// `x_+^alpha` with the continuous extension `0` at `x <= 0`.
#[inline]
pub fn pos_pow(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x.powf(alpha)
    } else {
        0.0
    }
}

/// Falling factorial `alpha (alpha-1) ... (alpha-k+1)`.
pub fn falling_factorial(alpha: f64, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (alpha - j as f64))
}

const SERIES_TERMS: usize = 80;

/// Precomputed evaluator for `h_k` at fixed `(alpha, k)`.
#[derive(Debug, Clone)]
pub struct Hk {
    alpha: f64,
    k: usize,
    weights: Vec<f64>,
    series: Vec<f64>,
    switch_at: f64,
}

impl Hk {
    pub fn new(alpha: f64, k: usize) -> Result<Self> {
        check_order(k)?;
        if !(alpha > 0.0) || !alpha.is_finite() {
            return domain(format!("alpha must be positive and finite, got {alpha}"));
        }
        let weights = difference_weights(k)?;
        // Stirling numbers S(m, k) for m <= SERIES_TERMS, row by row.
        let mut stirling = vec![0.0f64; k + 1];
        stirling[0] = 1.0;
        let mut series = vec![0.0; SERIES_TERMS + 1];
        let mut binom_alpha = 1.0;
        let mut k_fact = 1.0;
        for j in 1..=k {
            k_fact *= j as f64;
        }
        for m in 1..=SERIES_TERMS {
            for j in (1..=k).rev() {
                stirling[j] = j as f64 * stirling[j] + stirling[j - 1];
            }
            stirling[0] = 0.0;
            binom_alpha *= (alpha - (m - 1) as f64) / m as f64;
            if m >= k {
                let sign = if (m + k) % 2 == 0 { 1.0 } else { -1.0 };
                series[m] = binom_alpha * sign * k_fact * stirling[k];
            }
        }
        let switch_at = (4 * k + 4) as f64;
        Ok(Self {
            alpha,
            k,
            weights,
            series,
            switch_at,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn order(&self) -> usize {
        self.k
    }

    /// Coefficient of `x^(alpha-m)` in the expansion of `h_k` at infinity (`m <= 80`).
    pub fn series_coefficient(&self, m: usize) -> f64 {
        self.series.get(m).copied().unwrap_or(0.0)
    }

    /// Leading tail coefficient: `h_k(x) ~ tail_coefficient * x^(alpha-k)`.
    pub fn tail_coefficient(&self) -> f64 {
        falling_factorial(self.alpha, self.k)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x < self.switch_at {
            let mut s = 0.0;
            for (j, w) in self.weights.iter().enumerate() {
                s += w * pos_pow(x - j as f64, self.alpha);
            }
            return s;
        }
        self.eval_series(x)
    }

    fn eval_series(&self, x: f64) -> f64 {
        let inv = 1.0 / x;
        let mut pw = inv.powi(self.k as i32);
        let mut sum = 0.0;
        for m in self.k..=SERIES_TERMS {
            let term = self.series[m] * pw;
            sum += term;
            if m > self.k + 1 && term.abs() <= 1e-17 * sum.abs() {
                break;
            }
            pw *= inv;
        }
        sum * x.powf(self.alpha)
    }
}

/// `h_k(x) = sum_{j=0}^k (-1)^j C(k,j) (x-j)_+^alpha`.
pub fn h_k(x: f64, alpha: f64, k: usize) -> Result<f64> {
    Ok(Hk::new(alpha, k)?.eval(x))
}

/// k-th backward difference with unit lag: `sum_j (-1)^j C(k,j) phi(x - j)`.
pub fn dk_apply<F: Fn(f64) -> f64>(phi: F, x: f64, k: usize) -> Result<f64> {
    let w = difference_weights(k)?;
    Ok(w.iter()
        .enumerate()
        .map(|(j, c)| c * phi(x - j as f64))
        .sum())
}

/// Parametric family of the kernel `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `g(t) = c0 t^alpha`.
    PurePower,
    /// `g(t) = c0 t^alpha exp(-lambda t)`.
    PowerTimesExpDecay,
    /// Monotone cubic interpolation of tabulated samples.
    TableDefined,
}

/// Choice of the compensating kernel `g0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum G0Mode {
    /// `g0 = 0`: stationary moving average.
    Zero,
    /// `g0 = g`: stationary increments, `X_0 = 0`.
    EqualG,
}

/// The kernel pair `(g, g0)` together with its Assumption (A) parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub alpha: f64,
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "two")]
    pub theta: f64,
    #[serde(default = "default_g0")]
    pub g0_mode: G0Mode,
    #[serde(default)]
    pub decay_rate: f64,
    /// Samples `(t, g(t))` for [`KernelFamily::TableDefined`], sorted by `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn default_k_max() -> usize {
    MAX_ORDER
}
fn default_g0() -> G0Mode {
    G0Mode::EqualG
}

impl KernelSpec {
    pub fn pure_power(alpha: f64, c0: f64) -> Self {
        Self {
            family: KernelFamily::PurePower,
            alpha,
            c0,
            k_max: MAX_ORDER,
            theta: 2.0,
            g0_mode: G0Mode::EqualG,
            decay_rate: 0.0,
            table: None,
        }
    }

    pub fn power_exp(alpha: f64, c0: f64, decay_rate: f64) -> Self {
        Self {
            family: KernelFamily::PowerTimesExpDecay,
            decay_rate,
            ..Self::pure_power(alpha, c0)
        }
    }

    /// Tabulated kernel; `alpha` and `c0` describe its behaviour at `0+`.
    pub fn table(alpha: f64, c0: f64, samples: Vec<(f64, f64)>) -> Self {
        Self {
            family: KernelFamily::TableDefined,
            k_max: 2,
            table: Some(samples),
            ..Self::pure_power(alpha, c0)
        }
    }

    pub fn with_g0(mut self, mode: G0Mode) -> Self {
        self.g0_mode = mode;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return domain(format!("kernel alpha must be positive, got {}", self.alpha));
        }
        if self.c0 == 0.0 || !self.c0.is_finite() {
            return domain("kernel c0 must be finite and nonzero");
        }
        if !(self.theta > 0.0 && self.theta <= 2.0) {
            return domain(format!("kernel theta must lie in (0,2], got {}", self.theta));
        }
        match self.family {
            KernelFamily::PowerTimesExpDecay if !(self.decay_rate > 0.0) => {
                domain("decay_rate must be positive for power_times_exp_decay")
            }
            KernelFamily::TableDefined => {
                let t = self
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::Domain("table_defined kernel needs a table".into()))?;
                if t.len() < 4 {
                    return domain("kernel table needs at least 4 samples");
                }
                if t[0].0 < 0.0 || t.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return domain("kernel table abscissae must be nonnegative and strictly increasing");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `g(t)`; zero for `t <= 0`.
    pub fn g(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.family {
            KernelFamily::PurePower => self.c0 * t.powf(self.alpha),
            KernelFamily::PowerTimesExpDecay => {
                self.c0 * t.powf(self.alpha) * (-self.decay_rate * t).exp()
            }
            KernelFamily::TableDefined => self.table_interp(t),
        }
    }

    /// `g0(t)`; zero for `t <= 0`.
    pub fn g0(&self, t: f64) -> f64 {
        match self.g0_mode {
            G0Mode::Zero => 0.0,
            G0Mode::EqualG => self.g(t),
        }
    }

    /// `g^{(k)}(t)` for `t > 0`.
    pub fn g_deriv(&self, t: f64, k: usize) -> Result<f64> {
        if k > self.k_max {
            return Err(Error::Capability(format!(
                "kernel provides derivatives up to order {}, requested {k}",
                self.k_max
            )));
        }
        if t <= 0.0 {
            return Ok(0.0);
        }
        Ok(match self.family {
            KernelFamily::PurePower => {
                self.c0 * falling_factorial(self.alpha, k) * t.powf(self.alpha - k as f64)
            }
            KernelFamily::PowerTimesExpDecay => {
                // Leibniz rule for t^alpha * exp(-lambda t).
                let lam = self.decay_rate;
                let mut s = 0.0;
                for j in 0..=k {
                    s += binom(k, j) as f64
                        * falling_factorial(self.alpha, j)
                        * t.powf(self.alpha - j as f64)
                        * (-lam).powi((k - j) as i32);
                }
                self.c0 * s * (-lam * t).exp()
            }
            KernelFamily::TableDefined => self.table_fd(t, k),
        })
    }

    fn table_interp(&self, t: f64) -> f64 {
        let tab = self.table.as_deref().unwrap_or(&[]);
        monotone_cubic(tab, t)
    }

    fn table_fd(&self, t: f64, k: usize) -> f64 {
        // Central differences of the interpolant; adequate for admissibility checks.
        let h = (t * 1e-3).max(1e-7);
        let w = match difference_weights(k) {
            Ok(w) => w,
            Err(_) => return f64::NAN,
        };
        let shift = 0.5 * k as f64 * h;
        let mut s = 0.0;
        for (j, c) in w.iter().enumerate() {
            let x = t + shift - j as f64 * h;
            s += c * if x > 0.0 { self.table_interp(x) } else { 0.0 };
        }
        s / h.powi(k as i32)
    }
}

/// Fritsch–Carlson monotone cubic interpolation; constant extrapolation.
fn monotone_cubic(tab: &[(f64, f64)], t: f64) -> f64 {
    let n = tab.len();
    if n == 0 {
        return 0.0;
    }
    if t <= tab[0].0 {
        // Power-law bridge to zero at the origin.
        return if tab[0].0 > 0.0 { tab[0].1 * t / tab[0].0 } else { tab[0].1 };
    }
    if t >= tab[n - 1].0 {
        return tab[n - 1].1;
    }
    let i = tab.partition_point(|p| p.0 <= t) - 1;
    let slope = |a: usize| (tab[a + 1].1 - tab[a].1) / (tab[a + 1].0 - tab[a].0);
    let tangent = |a: usize| -> f64 {
        if a == 0 {
            return slope(0);
        }
        if a == n - 1 {
            return slope(n - 2);
        }
        let (d0, d1) = (slope(a - 1), slope(a));
        if d0 * d1 <= 0.0 {
            0.0
        } else {
            // Harmonic mean keeps the interpolant monotone.
            2.0 * d0 * d1 / (d0 + d1)
        }
    };
    let (x0, y0) = tab[i];
    let (x1, y1) = tab[i + 1];
    let h = x1 - x0;
    let s = (t - x0) / h;
    let (m0, m1) = (tangent(i) * h, tangent(i + 1) * h);
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0
        + (s3 - 2.0 * s2 + s) * m0
        + (-2.0 * s3 + 3.0 * s2) * y1
        + (s3 - s2) * m1
}

/// `g_{i,n}(x) = sum_j (-1)^j C(k,j) g((i-j)/n - x)`.
pub fn g_in_eval(spec: &KernelSpec, k: usize, i: usize, n: usize, x: f64) -> Result<f64> {
    check_order(k)?;
    if n < k || i < k || i > n {
        return domain(format!("g_in_eval requires n >= k >= 1 and k <= i <= n (k={k}, i={i}, n={n})"));
    }
    let nf = n as f64;
    if x > i as f64 / nf {
        return Ok(0.0);
    }
    dk_apply(|j_shift| spec.g(j_shift / nf - x), i as f64, k)
}

/// `x -> g_{i,n}(x)` bound to a fixed `(spec, k, i, n)`.
#[derive(Debug, Clone)]
pub struct GridKernelEval<'a> {
    pub spec: &'a KernelSpec,
    pub k: usize,
    pub i: usize,
    pub n: usize,
}

impl GridKernelEval<'_> {
    pub fn eval(&self, x: f64) -> Result<f64> {
        g_in_eval(self.spec, self.k, self.i, self.n, x)
    }
}

/// Outcome of [`check_assumption_a`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// `g(t) / (c0 t^alpha)` at `t = 1e-2, 1e-4, 1e-6`.
    pub asymptotic_ratios: Vec<f64>,
    pub asymptotic_ok: bool,
    /// Smallest `K` with `|g^(k)(t)| <= K t^(alpha-k)` on the sample points in `(0, 1]`.
    pub fitted_k: f64,
    pub derivative_bound_ok: bool,
    /// Smallest sample point beyond which `|g^(k)|` is nonincreasing on the sample.
    pub monotone_from: Option<f64>,
    pub monotone_ok: bool,
    /// Log-log slope of `|g^(k)|` over the last decade of the sample.
    pub tail_log_slope: f64,
    /// Trapezoid estimate of `int |g^(k)|^theta` over the sample beyond `monotone_from`.
    pub tail_integral_estimate: f64,
    pub integrable_ok: bool,
    /// Whether `|g^(k)|^theta log(1/|g^(k)|)` is summable on the sample tail.
    pub alog_ok: bool,
    pub passed: bool,
}

/// Log-spaced default sample grid on `[1e-6, 1e4]`.
pub fn default_sample_grid() -> Vec<f64> {
    let n = 1000;
    (0..n)
        .map(|i| 10f64.powf(-6.0 + 10.0 * i as f64 / (n - 1) as f64))
        .collect()
}

/// Numerically checks the conditions of Assumption (A) on a sample grid.
///
/// `delta` is searched for rather than fixed: the report gives the first
/// sample point after which `|g^(k)|` stops increasing.
pub fn check_assumption_a(spec: &KernelSpec, k: usize, sample_grid: &[f64]) -> Result<AdmissibilityReport> {
    spec.validate()?;
    check_order(k)?;
    spec.g_deriv(1.0, k)?;

    let asymptotic_ratios: Vec<f64> = [1e-2, 1e-4, 1e-6]
        .iter()
        .map(|&t| spec.g(t) / (spec.c0 * t.powf(spec.alpha)))
        .collect();
    let dev: Vec<f64> = asymptotic_ratios.iter().map(|r| (r - 1.0).abs()).collect();
    let asymptotic_ok = dev[2] < 1e-3 && dev[2] <= dev[0] + 1e-12;

    let mut grid: Vec<f64> = sample_grid.iter().copied().filter(|t| *t > 0.0 && t.is_finite()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() < 10 {
        return domain("assumption check needs at least 10 positive sample points");
    }

    let mut fitted_k: f64 = 0.0;
    for &t in grid.iter().filter(|t| **t <= 1.0) {
        let d = spec.g_deriv(t, k)?.abs();
        fitted_k = fitted_k.max(d / t.powf(spec.alpha - k as f64));
    }
    let derivative_bound_ok = fitted_k.is_finite();

    let tail: Vec<(f64, f64)> = grid
        .iter()
        .filter(|t| **t >= 1.0)
        .map(|&t| spec.g_deriv(t, k).map(|d| (t, d.abs())))
        .collect::<Result<_>>()?;
    let mut monotone_from = None;
    if tail.len() >= 2 {
        let mut start = 0;
        for i in 1..tail.len() {
            if tail[i].1 > tail[i - 1].1 * (1.0 + 1e-12) {
                start = i;
            }
        }
        if start + 2 < tail.len() {
            monotone_from = Some(tail[start].0);
        }
    }
    let monotone_ok = monotone_from.is_some();

    let theta = spec.theta;
    let t_max = tail.last().map(|p| p.0).unwrap_or(1.0);
    let last_decade: Vec<(f64, f64)> = tail
        .iter()
        .copied()
        .filter(|p| p.0 >= t_max / 10.0 && p.1 > 0.0)
        .collect();
    let tail_log_slope = if last_decade.len() >= 2 {
        let (a, b) = (last_decade[0], last_decade[last_decade.len() - 1]);
        (b.1.ln() - a.1.ln()) / (b.0.ln() - a.0.ln())
    } else {
        f64::NEG_INFINITY
    };
    let from = monotone_from.unwrap_or(1.0);
    let mut tail_integral_estimate = 0.0;
    let mut alog_sum = 0.0;
    for w in tail.windows(2).filter(|w| w[0].0 >= from) {
        let f = |d: f64| d.powf(theta);
        let l = |d: f64| if d > 0.0 { d.powf(theta) * (1.0 / d).ln() } else { 0.0 };
        let h = w[1].0 - w[0].0;
        tail_integral_estimate += 0.5 * h * (f(w[0].1) + f(w[1].1));
        alog_sum += 0.5 * h * (l(w[0].1) + l(w[1].1));
    }
    // A power tail t^s is theta-integrable iff s*theta < -1; the margin absorbs slope noise.
    let integrable_ok = tail_integral_estimate.is_finite() && tail_log_slope * theta < -1.02;
    let alog_ok = integrable_ok && alog_sum.is_finite();
    let passed = asymptotic_ok && derivative_bound_ok && monotone_ok && integrable_ok;
    Ok(AdmissibilityReport {
        asymptotic_ratios,
        asymptotic_ok,
        fitted_k,
        derivative_bound_ok,
        monotone_from,
        monotone_ok,
        tail_log_slope,
        tail_integral_estimate,
        integrable_ok,
        alog_ok,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn direct(x: f64, alpha: f64, k: usize) -> f64 {
        (0..=k)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                s * binom(k, j) as f64 * pos_pow(x - j as f64, alpha)
            })
            .sum()
    }

    #[test]
    fn binomials() {
        assert_eq!(binom(8, 4), 70);
        assert_eq!(binom(5, 2), 10);
        assert_eq!(binom(3, 4), 0);
    }

    #[test]
    fn h_k_examples() {
        assert_relative_eq!(h_k(0.5, 0.5, 1).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        assert_eq!(h_k(-1.0, 0.7, 2).unwrap(), 0.0);
        assert_relative_eq!(h_k(3.2, 1.0, 1).unwrap(), 1.0, epsilon = 1e-14);
        let hand = 2.5f64.sqrt() - 2.0 * 1.5f64.sqrt() + 0.5f64.sqrt();
        assert_relative_eq!(h_k(2.5, 0.5, 2).unwrap(), hand, epsilon = 1e-15);
        assert!((hand + 0.161244).abs() < 1e-6);
        assert_eq!(h_k(0.0, 0.5, 1).unwrap(), 0.0);
    }

    #[test]
    fn h_k_domain_errors() {
        assert!(h_k(1.0, 0.5, 0).is_err());
        assert!(h_k(1.0, 0.0, 1).is_err());
        assert!(h_k(1.0, -0.3, 1).is_err());
        assert!(h_k(1.0, 0.5, 9).is_err());
    }

    #[test]
    fn series_matches_direct_at_switch() {
        for k in 1..=4 {
            for &alpha in &[0.2, 0.5, 1.3, 2.7] {
                let hk = Hk::new(alpha, k).unwrap();
                for &x in &[hk.switch_at, hk.switch_at + 0.37, 30.0, 55.5] {
                    let a = hk.eval_series(x);
                    let b = direct(x, alpha, k);
                    // The direct sum loses about log10(2^k x^alpha) digits.
                    let budget = 64.0 * f64::EPSILON * 2f64.powi(k as i32) * x.powf(alpha);
                    assert!((a - b).abs() <= budget, "k={k} a={alpha} x={x}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn series_integer_alpha_polynomial() {
        // alpha = 2, k = 1: h = x^2 - (x-1)^2 = 2x - 1.
        let hk = Hk::new(2.0, 1).unwrap();
        assert_relative_eq!(hk.eval(1000.0), 1999.0, max_relative = 1e-14);
    }

    #[test]
    fn tail_bound_on_large_range() {
        for k in 1..=3 {
            let alpha = 0.3;
            let hk = Hk::new(alpha, k).unwrap();
            let c = (0..=100)
                .map(|i| {
                    let x = (k + 1) as f64 + i as f64 * (10.0 - (k + 1) as f64) / 100.0;
                    hk.eval(x).abs() * x.powf(k as f64 - alpha)
                })
                .fold(0.0f64, f64::max);
            for i in 0..=400 {
                let x = 10f64.powf(1.0 + 3.0 * i as f64 / 400.0);
                assert!(hk.eval(x).abs() <= c * x.powf(alpha - k as f64) * (1.0 + 1e-9));
            }
            // The scaled tail converges to the falling factorial.
            let x = 1e4;
            assert_relative_eq!(
                hk.eval(x) * x.powf(k as f64 - alpha),
                hk.tail_coefficient(),
                max_relative = 1e-3
            );
        }
    }

    #[test]
    fn bound_near_origin() {
        let alpha = 0.4;
        for k in 1..=3 {
            let hk = Hk::new(alpha, k).unwrap();
            let c = 2f64.powi(k as i32);
            for i in 1..=200 {
                let x = (k + 1) as f64 * i as f64 / 200.0;
                assert!(hk.eval(x).abs() <= c * x.powf(alpha));
            }
        }
    }

    #[test]
    fn dk_examples() {
        assert_eq!(dk_apply(|_| 1.0, 7.3, 1).unwrap(), 0.0);
        assert_eq!(dk_apply(|x| x, 5.0, 2).unwrap(), 0.0);
        assert_eq!(dk_apply(|x| x * x, 2.0, 1).unwrap(), 3.0);
        assert!(dk_apply(|x| x, 1.0, 0).is_err());
    }

    #[test]
    fn g_in_examples() {
        let s = KernelSpec::pure_power(0.5, 1.0);
        assert_eq!(g_in_eval(&s, 1, 1, 4, 0.25).unwrap(), 0.0);
        let s1 = KernelSpec::pure_power(1.0, 1.0);
        assert_relative_eq!(g_in_eval(&s1, 1, 2, 2, 0.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(g_in_eval(&s, 1, 2, 4, 0.9).unwrap(), 0.0);
        assert!(g_in_eval(&s, 2, 1, 4, 0.0).is_err());
        assert!(g_in_eval(&s, 1, 5, 4, 0.0).is_err());
        let ge = GridKernelEval { spec: &s, k: 1, i: 2, n: 4 };
        assert_eq!(ge.eval(0.9).unwrap(), 0.0);
    }

    #[test]
    fn kernel_vanishes_on_negative_axis_and_asymptotic() {
        let specs = [
            KernelSpec::pure_power(0.7, 2.0),
            KernelSpec::power_exp(1.5, -1.0, 1.0),
        ];
        for s in &specs {
            assert_eq!(s.g(-0.5), 0.0);
            assert_eq!(s.g0(-0.5), 0.0);
            for &t in &[1e-2, 1e-4, 1e-6] {
                let r = s.g(t) / (s.c0 * t.powf(s.alpha));
                assert!((r - 1.0).abs() < 0.02);
            }
        }
        assert_eq!(KernelSpec::pure_power(0.7, 1.0).with_g0(G0Mode::Zero).g0(1.0), 0.0);
    }

    #[test]
    fn power_exp_derivative_matches_fd() {
        let s = KernelSpec::power_exp(1.5, 1.0, 1.0);
        for &t in &[0.2, 1.0, 2.5] {
            let h = 1e-5;
            let fd = (s.g(t + h) - s.g(t - h)) / (2.0 * h);
            assert_relative_eq!(s.g_deriv(t, 1).unwrap(), fd, max_relative = 1e-7);
            let fd2 = (s.g(t + h) - 2.0 * s.g(t) + s.g(t - h)) / (h * h);
            assert_relative_eq!(s.g_deriv(t, 2).unwrap(), fd2, max_relative = 1e-4);
        }
    }

    #[test]
    fn assumption_pure_power() {
        let s = KernelSpec::pure_power(0.5, 1.0);
        let r = check_assumption_a(&s, 1, &default_sample_grid()).unwrap();
        assert!(r.asymptotic_ok && r.derivative_bound_ok && r.monotone_ok);
        assert!((0.49..=0.51).contains(&r.fitted_k), "{}", r.fitted_k);
        // |g'| ~ t^{-1/2} is not in L^theta for theta <= 2.
        assert!(!r.integrable_ok);
        let r2 = check_assumption_a(&s, 2, &default_sample_grid()).unwrap();
        assert!(r2.passed);
    }

    #[test]
    fn assumption_power_exp() {
        let s = KernelSpec::power_exp(1.5, 1.0, 1.0);
        let r = check_assumption_a(&s, 1, &default_sample_grid()).unwrap();
        assert!(r.passed, "{r:?}");
        // |g'| = t^{1/2} e^{-t} |1.5 - t| peaks after its zero at 1.5.
        let d = r.monotone_from.unwrap();
        assert!(d > 1.5 && d < 3.5, "{d}");
    }

    #[test]
    fn assumption_errors() {
        let mut s = KernelSpec::pure_power(0.5, 1.0);
        s.alpha = -0.1;
        assert!(matches!(check_assumption_a(&s, 1, &default_sample_grid()), Err(Error::Domain(_))));
        let mut s = KernelSpec::pure_power(0.5, 1.0);
        s.k_max = 1;
        assert!(matches!(check_assumption_a(&s, 2, &default_sample_grid()), Err(Error::Capability(_))));
    }

    #[test]
    fn table_kernel_tracks_source() {
        let src = KernelSpec::power_exp(1.5, 1.0, 1.0);
        let samples: Vec<(f64, f64)> = (1..=4000).map(|i| {
            let t = i as f64 * 0.005;
            (t, src.g(t))
        }).collect();
        let tab = KernelSpec::table(1.5, 1.0, samples);
        tab.validate().unwrap();
        for &t in &[0.3, 1.0, 4.2] {
            assert_relative_eq!(tab.g(t), src.g(t), max_relative = 1e-5);
            assert_relative_eq!(tab.g_deriv(t, 1).unwrap(), src.g_deriv(t, 1).unwrap(), max_relative = 1e-2);
        }
        assert!(tab.g_deriv(1.0, 3).is_err());
    }

    #[test]
    fn spec_roundtrip_toml() {
        let s = KernelSpec::power_exp(1.5, 2.0, 0.5).with_g0(G0Mode::Zero);
        let txt = toml::to_string(&s).unwrap();
        let back: KernelSpec = toml::from_str(&txt).unwrap();
        assert_eq!(s, back);
    }

    proptest! {
        #[test]
        fn dk_annihilates_polynomials(k in 1usize..=6, x in -50.0f64..50.0, coeffs in proptest::collection::vec(-3.0f64..3.0, 6)) {
            // Degree k-1 polynomial evaluated in Horner form.
            let c = &coeffs[..k];
            let poly = |t: f64| c.iter().rev().fold(0.0, |acc, a| acc * t + a);
            let v = dk_apply(poly, x, k).unwrap();
            let scale: f64 = (0..=k).map(|j| poly(x - j as f64).abs() * binom(k, j) as f64).sum::<f64>().max(1.0);
            prop_assert!(v.abs() <= 64.0 * f64::EPSILON * scale);
        }

        #[test]
        fn dk_of_power_is_h_k(k in 1usize..=5, alpha in 0.05f64..3.0, x in -2.0f64..20.0) {
            let a = dk_apply(|t| pos_pow(t, alpha), x, k).unwrap();
            let b = h_k(x, alpha, k).unwrap();
            let scale: f64 = (0..=k).map(|j| binom(k, j) as f64 * pos_pow(x - j as f64, alpha)).sum::<f64>().max(1e-300);
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }

        #[test]
        fn grid_kernel_substitution(k in 1usize..=3, alpha in 0.1f64..2.0, n in 4usize..64, frac in 0.0f64..1.0, xs in -3.0f64..1.0) {
            let i = k + ((n - k) as f64 * frac) as usize;
            let spec = KernelSpec::pure_power(alpha, 1.0);
            let a = g_in_eval(&spec, k, i, n, xs).unwrap();
            let b = (n as f64).powf(-alpha) * h_k(i as f64 - n as f64 * xs, alpha, k).unwrap();
            let scale = (n as f64).powf(-alpha) * (i as f64 - n as f64 * xs).abs().max(1.0).powf(alpha) * 2f64.powi(k as i32);
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }
}
