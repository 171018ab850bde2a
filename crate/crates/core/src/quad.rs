//! Adaptive Gauss–Kronrod quadrature.
//!
//! A 21-point Kronrod rule with QUADPACK-style error estimation drives a
//! global adaptive bisection: the panel with the largest error estimate is
//! split until the summed estimate meets the tolerance. Integrable algebraic
//! endpoint singularities are handled by the bisection alone; callers with
//! unbounded ranges split off an analytic tail themselves.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

/// A quadrature value together with its error estimate and cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub evaluations: usize,
}

impl QuadResult {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            abs_error_estimate: 0.0,
            evaluations: 0,
        }
    }

    pub fn combine(self, other: QuadResult) -> QuadResult {
        QuadResult {
            value: self.value + other.value,
            abs_error_estimate: self.abs_error_estimate + other.abs_error_estimate,
            evaluations: self.evaluations + other.evaluations,
        }
    }

    pub fn scale(self, factor: f64) -> QuadResult {
        QuadResult {
            value: self.value * factor,
            abs_error_estimate: self.abs_error_estimate * factor.abs(),
            evaluations: self.evaluations,
        }
    }
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];

// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_36,
    0.295_524_224_714_752_87,
];

const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Fixed 8-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre8<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for (x, w) in GL8_X.iter().zip(GL8_W.iter()) {
        s += w * (f(c - h * x) + f(c + h * x));
    }
    s * h
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[10];
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    if !value.is_finite() {
        err = f64::INFINITY;
    }
    Panel {
        a,
        b,
        value,
        error: err,
    }
}

/// Adaptive integrator settings.
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_panels: 4000,
        }
    }
}

impl Integrator {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_max_panels(mut self, max_panels: usize) -> Self {
        self.max_panels = max_panels;
        self
    }

    /// Integrates `f` over the finite interval `[a, b]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> QuadResult {
        self.integrate_panels(&f, &[a, b])
    }

    /// Integrates over consecutive panels `breaks[0] < breaks[1] < ...`,
    /// sharing one error budget. Breakpoints should sit at kinks and
    /// singularities of the integrand.
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(&self, f: F, breaks: &[f64]) -> QuadResult {
        self.integrate_panels(&f, breaks)
    }

    fn integrate_panels<F: Fn(f64) -> f64>(&self, f: &F, breaks: &[f64]) -> QuadResult {
        let mut heap = BinaryHeap::new();
        let mut total = 0.0;
        let mut total_err = 0.0;
        let mut evaluations = 0;
        for w in breaks.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            let p = gk21(f, w[0], w[1]);
            evaluations += 21;
            total += p.value;
            total_err += p.error;
            heap.push(p);
        }
        // Panels too narrow to bisect leave the heap but keep their contribution.
        let mut settled_value = 0.0;
        let mut settled_err = 0.0;
        while total_err > self.abs_tol.max(self.rel_tol * total.abs())
            && heap.len() < self.max_panels
        {
            let Some(worst) = heap.pop() else { break };
            let mid = 0.5 * (worst.a + worst.b);
            let width = worst.b - worst.a;
            if !(mid > worst.a && mid < worst.b)
                || width <= 64.0 * f64::EPSILON * worst.a.abs().max(worst.b.abs())
            {
                settled_value += worst.value;
                settled_err += worst.error;
                continue;
            }
            let left = gk21(f, worst.a, mid);
            let right = gk21(f, mid, worst.b);
            evaluations += 42;
            total += left.value + right.value - worst.value;
            total_err += left.error + right.error - worst.error;
            heap.push(left);
            heap.push(right);
        }
        // Resum to remove drift from the incremental updates.
        let value = heap.iter().map(|p| p.value).sum::<f64>() + settled_value;
        let err = heap.iter().map(|p| p.error).sum::<f64>() + settled_err;
        QuadResult {
            value,
            abs_error_estimate: err,
            evaluations,
        }
    }
}

/// Integrates `f` over `[a, inf)` by summing panels of geometrically
/// growing width until a panel contributes less than `abs_tol`, then adds
/// `tail(end)` for the remaining piece `[end, inf)`.
pub fn integrate_to_infinity<F, T>(
    integ: &Integrator,
    f: F,
    a: f64,
    first_width: f64,
    growth: f64,
    max_end: f64,
    tail: T,
) -> QuadResult
where
    F: Fn(f64) -> f64,
    T: Fn(f64) -> f64,
{
    let mut acc = QuadResult::exact(0.0);
    let mut lo = a;
    let mut w = first_width;
    while lo < max_end {
        let hi = (lo + w).min(max_end);
        let r = integ.integrate(&f, lo, hi);
        acc = acc.combine(r);
        lo = hi;
        w *= growth;
        if r.value.abs() < integ.abs_tol.max(integ.rel_tol * acc.value.abs()) * 1e-2 {
            break;
        }
    }
    let t = tail(lo);
    acc.combine(QuadResult {
        value: t,
        abs_error_estimate: 0.0,
        evaluations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = Integrator::default().integrate(|x| 3.0 * x * x, 0.0, 2.0);
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        // int_0^1 x^{-1/2} dx = 2
        let r = Integrator::new(1e-12, 1e-12).integrate(|x| x.powf(-0.5), 0.0, 1.0);
        assert!((r.value - 2.0).abs() < 1e-9, "{r:?}");
        assert!(r.abs_error_estimate < 1e-8);
    }

    #[test]
    fn breaks_at_kink() {
        let r = Integrator::default().integrate_with_breaks(|x: f64| (x - 0.3).abs(), &[0.0, 0.3, 1.0]);
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-14);
    }

    #[test]
    fn gl8_matches_cubic() {
        let v = gauss_legendre8(|x| x.powi(7), -1.0, 2.0);
        assert!((v - (256.0 - 1.0) / 8.0).abs() < 1e-11);
    }
}
