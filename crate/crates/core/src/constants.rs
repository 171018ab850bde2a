//! Limit constants by quadrature and series.
//!
//! All constants are built from a handful of one-dimensional integrals:
//!
//! * `a_p = 2 int_0^inf (1 - cos u) u^{-1-p} du`, the normaliser of the
//!   Fourier representation `|x|^p = a_p^{-1} int (1 - cos ux) |u|^{-1-p} du`,
//!   valid for `p` in `(0, 2)`;
//! * `E|Z|^p` for a standard symmetric stable `Z`, obtained by inserting the
//!   characteristic function into the same representation;
//! * `||h_k||_beta^beta`, integrated panelwise with an asymptotic tail.
//!
//! `theta(i)` is a two-dimensional singular integral. Polar coordinates and
//! the radial identity `int_0^inf r^{-1-2p}(e^{-r^b A} - e^{-r^b B}) dr =
//! Gamma(1-s)/(2p) (B^s - A^s)`, `s = 2p/beta`, reduce it to one angular
//! integral whose integrand is assembled from cancellation-free pieces.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{domain, Error, Result};
use crate::kernel::Hk;
use crate::quad::{Integrator, QuadResult};
use crate::statistics::{check_regime, Regime};

fn integrator(tol: f64) -> Integrator {
    Integrator::new(tol * 1e-2, tol * 1e-2).with_max_panels(20_000)
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol < 1.0) {
        return domain(format!("tolerance must lie in (0,1), got {tol}"));
    }
    Ok(())
}

#[inline]
fn one_minus_cos(u: f64) -> f64 {
    let s = (0.5 * u).sin();
    2.0 * s * s
}

/// `a_p` for `p` in `(0, 2)` (the defining integral converges there).
pub fn a_p_extended(p: f64, tol: f64) -> Result<QuadResult> {
    check_tol(tol)?;
    if !(p > 0.0 && p < 2.0) {
        return domain(format!("a_p is defined for p in (0,2), got {p}"));
    }
    // int_0^T over pi-panels, then the tail int_T^inf (1-cos u) u^{-1-p}
    // = T^{-p}/p - (1+p) T^{-2-p} + O(T^{-4-p}) for T a multiple of 2 pi.
    let panels = 400usize;
    let t_end = panels as f64 * PI;
    let breaks: Vec<f64> = (0..=panels).map(|j| j as f64 * PI).collect();
    let r = integrator(tol).integrate_with_breaks(|u| one_minus_cos(u) * u.powf(-1.0 - p), &breaks);
    let tail = t_end.powf(-p) / p - (1.0 + p) * t_end.powf(-2.0 - p);
    let tail_err = (2.0 + p) * (3.0 + p) * (1.0 + p) * t_end.powf(-4.0 - p);
    Ok(QuadResult {
        value: 2.0 * (r.value + tail),
        abs_error_estimate: 2.0 * (r.abs_error_estimate + tail_err),
        evaluations: r.evaluations,
    })
}

/// `a_p = int_R (1 - exp(iu)) |u|^{-1-p} du` for `p` in `(0, 1)`.
pub fn a_p(p: f64, tol: f64) -> Result<QuadResult> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("a_p requires p in (0,1), got {p}"));
    }
    a_p_extended(p, tol)
}

/// `2 int_0^inf (1 - cos ux) u^{-1-p} du` integrated in `u` directly.
///
/// The Fourier identity states that this equals `a_p |x|^p`.
pub fn xp_integral(x: f64, p: f64, tol: f64) -> Result<QuadResult> {
    check_tol(tol)?;
    if !(p > 0.0 && p < 2.0) {
        return domain(format!("the Fourier power identity needs p in (0,2), got {p}"));
    }
    let ax = x.abs();
    if ax == 0.0 {
        return Ok(QuadResult::exact(0.0));
    }
    // Panels of width pi/|x|; the cutoff T is a multiple of 2 pi/|x|, where
    // int_T^inf cos(ux) u^{-1-p} du = (1+p) x^{-2} T^{-2-p} + O(T^{-4-p}).
    let panels = 400usize;
    let w = PI / ax;
    let t_end = panels as f64 * w;
    let breaks: Vec<f64> = (0..=panels).map(|j| j as f64 * w).collect();
    let r = integrator(tol).integrate_with_breaks(|u| one_minus_cos(u * ax) * u.powf(-1.0 - p), &breaks);
    let tail = t_end.powf(-p) / p - (1.0 + p) * t_end.powf(-2.0 - p) / (ax * ax);
    let tail_err = (1.0 + p) * (2.0 + p) * (3.0 + p) * t_end.powf(-4.0 - p) / ax.powi(4);
    Ok(QuadResult {
        value: 2.0 * (r.value + tail),
        abs_error_estimate: 2.0 * (r.abs_error_estimate + tail_err),
        evaluations: r.evaluations,
    })
}

/// `2 int_0^inf (1 - exp(-u^beta)) u^{-1-p} du`, the numerator of `E|Z|^p`.
fn stable_fourier_numerator(p: f64, beta: f64, tol: f64) -> Result<QuadResult> {
    // [0,1]: exact series sum_j (-1)^{j+1} / (j! (j beta - p)).
    let mut series = 0.0;
    let mut fact = 1.0;
    let mut last = 0.0;
    for j in 1..200 {
        fact *= j as f64;
        let term = 1.0 / (fact * (j as f64 * beta - p));
        last = term;
        series += if j % 2 == 1 { term } else { -term };
        if term < 1e-18 * series.abs() {
            break;
        }
    }
    // Beyond U the exponential is below e^{-50}.
    let u_max = 50f64.powf(1.0 / beta).max(2.0);
    let mut breaks = vec![1.0];
    while *breaks.last().unwrap() < u_max {
        let b = (breaks.last().unwrap() * 1.5).min(u_max);
        breaks.push(b);
    }
    let r = integrator(tol).integrate_with_breaks(
        |u| -(-u.powf(beta)).exp_m1() * u.powf(-1.0 - p),
        &breaks,
    );
    let tail = u_max.powf(-p) / p;
    Ok(QuadResult {
        value: 2.0 * (series + r.value + tail),
        abs_error_estimate: 2.0 * (last + r.abs_error_estimate + (-50f64).exp()),
        evaluations: r.evaluations,
    })
}

/// `E|Z|^p` for a standard symmetric beta-stable `Z`, `0 < p < beta`.
///
/// Computed as `a_p^{-1} 2 int_0^inf (1 - e^{-u^beta}) u^{-1-p} du`; for
/// `p >= 1` the extended `a_p` is used, which keeps the Fourier identity
/// valid up to `p < 2`.
pub fn sas_abs_moment(p: f64, beta: f64, tol: f64) -> Result<QuadResult> {
    check_tol(tol)?;
    if !(beta > 0.0 && beta <= 2.0) {
        return domain(format!("beta must lie in (0,2], got {beta}"));
    }
    if !(p > 0.0) {
        return domain(format!("moment order p must be positive, got {p}"));
    }
    if p >= beta {
        return domain(format!("E|Z|^p diverges for p >= beta (p={p}, beta={beta})"));
    }
    let num = stable_fourier_numerator(p, beta, tol)?;
    let den = a_p_extended(p, tol)?;
    let value = num.value / den.value;
    let rel = num.abs_error_estimate / num.value + den.abs_error_estimate / den.value;
    Ok(QuadResult {
        value,
        abs_error_estimate: value * rel,
        evaluations: num.evaluations + den.evaluations,
    })
}

/// `int_R |h_k(x)|^beta dx`, requiring `(alpha - k) beta < -1`.
pub fn hk_beta_norm(alpha: f64, beta: f64, k: usize, tol: f64) -> Result<QuadResult> {
    check_tol(tol)?;
    if !(beta > 0.0 && beta <= 2.0) {
        return domain(format!("beta must lie in (0,2], got {beta}"));
    }
    let hk = Hk::new(alpha, k)?;
    let e = (alpha - k as f64) * beta;
    if e >= -1.0 {
        return domain(format!(
            "h_k is not in L^beta: need (alpha - k) beta < -1, got {e:.4}"
        ));
    }
    let kf = k as f64;
    let x_max = 1000.0 * (kf + 1.0);
    let mut breaks: Vec<f64> = (0..=k + 1).map(|j| j as f64).collect();
    while *breaks.last().unwrap() < x_max {
        let b = (breaks.last().unwrap() * 1.5).min(x_max);
        breaks.push(b);
    }
    let r = integrator(tol).integrate_with_breaks(|x| hk.eval(x).abs().powf(beta), &breaks);
    let tail = hk_power_tail(&hk, beta, x_max);
    Ok(QuadResult {
        value: r.value + tail.0,
        abs_error_estimate: r.abs_error_estimate + tail.1,
        evaluations: r.evaluations,
    })
}

/// `int_X^inf |h_k|^beta` from the three-term expansion of `h_k` at infinity.
fn hk_power_tail(hk: &Hk, beta: f64, x: f64) -> (f64, f64) {
    let k = hk.order();
    let alpha = hk.alpha();
    let c1 = hk.series_coefficient(k);
    if c1 == 0.0 {
        // Integer alpha < k: h_k vanishes beyond k.
        return (0.0, 0.0);
    }
    // h_k(x) = c1 x^{alpha-k} (1 + r1/x + r2/x^2 + ...).
    let c = |m: usize| hk.series_coefficient(m);
    let r1 = c(k + 1) / c1;
    let r2 = c(k + 2) / c1;
    let e = (alpha - k as f64) * beta;
    let b1 = beta * r1;
    let b2 = beta * r2 + 0.5 * beta * (beta - 1.0) * r1 * r1;
    let a = c1.abs().powf(beta);
    let v = a * (x.powf(e + 1.0) / (-e - 1.0) + b1 * x.powf(e) / (-e) + b2 * x.powf(e - 1.0) / (1.0 - e));
    let err = a * (b1.abs() + b2.abs() + 1.0) * x.powf(e - 2.0);
    (v, err)
}

/// `m_p = |c0|^p sigma^p ||h_k||_beta^p E|Z|^p`, ergodic regime only.
pub fn m_p(alpha: f64, beta: f64, p: f64, k: usize, c0: f64, sigma: f64, tol: f64) -> Result<QuadResult> {
    check_regime(Regime::Ergodic, alpha, beta, p, k)?;
    if c0 == 0.0 || !(sigma > 0.0) {
        return domain("m_p needs c0 != 0 and sigma > 0");
    }
    let norm = hk_beta_norm(alpha, beta, k, tol)?;
    let mom = sas_abs_moment(p, beta, tol)?;
    let scale = (c0.abs() * sigma).powf(p);
    let nf = norm.value.powf(p / beta);
    let value = scale * nf * mom.value;
    let rel = (p / beta) * norm.abs_error_estimate / norm.value + mom.abs_error_estimate / mom.value;
    Ok(QuadResult {
        value,
        abs_error_estimate: value * rel,
        evaluations: norm.evaluations + mom.evaluations,
    })
}

/// `tau_rho = (rho - 1) / (Gamma(2 - rho) |cos(pi rho / 2)|)` for `rho` in `(1, 2)`.
pub fn tau(rho: f64) -> Result<f64> {
    if !(rho > 1.0 && rho < 2.0) {
        return domain(format!("tau_rho requires rho in (1,2), got {rho}"));
    }
    Ok((rho - 1.0) / (gamma(2.0 - rho) * (PI * rho / 2.0).cos().abs()))
}

/// Evaluator for `Phi_rho(x) = E|W + x|^p - E|W|^p`, `W` symmetric stable with scale `rho`.
///
/// Uses the Fourier form `a_p^{-1} int (1 - cos ux) e^{-(rho |u|)^beta} |u|^{-1-p} du`.
/// Small `|x|/rho` (beta > 1) uses its convergent power series, large
/// `|x|/rho` the asymptotic expansion driven by the stable tail, and the
/// middle range adaptive quadrature over pi-panels.
#[derive(Debug, Clone)]
pub struct PhiRho {
    rho: f64,
    beta: f64,
    p: f64,
    a_p: f64,
    abs_moment: f64,
    tol: f64,
    small_coef: Vec<f64>,
    large_coef: Vec<(f64, f64)>,
}

const PHI_SMALL: f64 = 1.0;
const PHI_LARGE: f64 = 20.0;

impl PhiRho {
    pub fn new(rho: f64, beta: f64, p: f64, tol: f64) -> Result<Self> {
        check_tol(tol)?;
        if !(rho > 0.0) {
            return domain(format!("Phi_rho needs rho > 0, got {rho}"));
        }
        if !(p > 0.0 && p < 1.0) {
            return domain(format!("Phi_rho requires p in (0,1), got {p}"));
        }
        if !(beta > 0.0 && beta <= 2.0) {
            return domain(format!("beta must lie in (0,2], got {beta}"));
        }
        if p >= beta {
            return domain("Phi_rho requires p < beta");
        }
        let ap = a_p(p, tol * 1e-2)?.value;
        let mom = sas_abs_moment(p, beta, tol * 1e-2)?.value;
        // Phi_1(z) = (2/(a_p beta)) sum_m (-1)^{m+1} Gamma((2m-p)/beta)/(2m)! z^{2m}.
        let mut small_coef = Vec::new();
        if beta > 1.0 {
            for m in 1..=60usize {
                let lg = ln_gamma(((2 * m) as f64 - p) / beta);
                let v = (lg - ln_gamma((2 * m + 1) as f64)).exp() * 2.0 / (ap * beta);
                small_coef.push(if m % 2 == 1 { v } else { -v });
            }
        }
        // R(z) = (2/a_p) sum_j (-1)^{j+1} Gamma(j beta - p) cos(pi (j beta - p)/2) / j! z^{p - j beta}.
        let mut large_coef = Vec::new();
        for j in 1..=40usize {
            let nu = j as f64 * beta - p;
            let c = (PI * nu / 2.0).cos();
            // Odd-integer orders contribute nothing; drop rounding residue.
            if c.abs() < 1e-12 {
                continue;
            }
            let mag = (ln_gamma(nu) - ln_gamma((j + 1) as f64)).exp() * 2.0 / ap;
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            large_coef.push((nu, sign * mag * c));
        }
        Ok(Self {
            rho,
            beta,
            p,
            a_p: ap,
            abs_moment: mom,
            tol,
            small_coef,
            large_coef,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `E|W|^p = rho^p E|Z|^p`.
    pub fn w_abs_moment(&self) -> f64 {
        self.rho.powf(self.p) * self.abs_moment
    }

    pub fn eval(&self, x: f64) -> f64 {
        let z = x.abs() / self.rho;
        self.rho.powf(self.p) * self.eval_unit(z)
    }

    /// `Phi_1(z)` for `z >= 0`.
    pub fn eval_unit(&self, z: f64) -> f64 {
        if z == 0.0 {
            return 0.0;
        }
        if z <= PHI_SMALL && !self.small_coef.is_empty() {
            return self.small_series(z).0;
        }
        if z >= PHI_LARGE {
            if let Some((v, _)) = self.large_series(z) {
                return v;
            }
        }
        self.quadrature(z).value
    }

    fn small_series(&self, z: f64) -> (f64, f64) {
        let z2 = z * z;
        let mut pw = z2;
        let mut s = 0.0;
        let mut last = 0.0;
        for c in &self.small_coef {
            let t = c * pw;
            s += t;
            last = t.abs();
            if last < 1e-18 * s.abs() {
                break;
            }
            pw *= z2;
        }
        (s, last)
    }

    /// Asymptotic expansion; `None` when the terms do not settle.
    fn large_series(&self, z: f64) -> Option<(f64, f64)> {
        let mut s = z.powf(self.p) - self.abs_moment;
        let mut prev = f64::INFINITY;
        for &(nu, c) in &self.large_coef {
            let t = c * z.powf(-nu);
            let mag = t.abs();
            if mag > prev && mag > 1e-16 {
                return None;
            }
            s += t;
            if mag < 1e-17 * s.abs() {
                return Some((s, mag));
            }
            prev = mag;
        }
        Some((s, prev))
    }

    /// Direct quadrature in `v = u z`: `Phi_1(z) = z^p a_p^{-1} 2 int (1-cos v) e^{-(v/z)^beta} v^{-1-p} dv`.
    fn quadrature(&self, z: f64) -> QuadResult {
        let v_max = z * 50f64.powf(1.0 / self.beta);
        let panels = (v_max / PI).ceil().max(1.0) as usize;
        let breaks: Vec<f64> = (0..=panels).map(|j| (j as f64 * PI).min(v_max)).collect();
        let (beta, p) = (self.beta, self.p);
        let r = integrator(self.tol).integrate_with_breaks(
            |v| one_minus_cos(v) * (-(v / z).powf(beta)).exp() * v.powf(-1.0 - p),
            &breaks,
        );
        r.scale(2.0 * z.powf(p) / self.a_p)
    }
}

/// `Phi_rho(x)`; see [`PhiRho`].
pub fn phi_rho(x: f64, rho: f64, beta: f64, p: f64, tol: f64) -> Result<f64> {
    Ok(PhiRho::new(rho, beta, p, tol)?.eval(x))
}

/// Parameters echoed with every constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantParams {
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub k: usize,
    pub c0: f64,
    pub sigma: f64,
}

/// `kappa = alpha^gamma/(1-alpha) int_0^inf Phi_{rho0}(y) y^{-1-gamma} dy`,
/// `gamma = 1/(1-alpha)`, `rho0 = ||h_1||_beta`.
pub fn kappa(alpha: f64, beta: f64, p: f64, tol: f64) -> Result<QuadResult> {
    check_regime(Regime::SecondOrderStable, alpha, beta, p, 1)?;
    check_tol(tol)?;
    let g = 1.0 / (1.0 - alpha);
    if 1.0 + g >= 3.0 {
        return domain("kappa needs 1 + 1/(1-alpha) < 3 for convergence at the origin");
    }
    let norm = hk_beta_norm(alpha, beta, 1, tol * 1e-2)?;
    let rho0 = norm.value.powf(1.0 / beta);
    let phi = PhiRho::new(1.0, beta, p, tol * 1e-2)?;
    // int Phi_rho(y) y^{-1-g} dy = rho^{p-g} int Phi_1(z) z^{-1-g} dz.
    let mut small = 0.0;
    let mut small_err = 0.0;
    for (m, c) in phi.small_coef.iter().enumerate() {
        let expo = 2.0 * (m + 1) as f64 - g;
        let t = c * PHI_SMALL.powf(expo) / expo;
        small += t;
        small_err = t.abs();
        if small_err < 1e-18 * small.abs() {
            break;
        }
    }
    let mut breaks = vec![PHI_SMALL];
    while *breaks.last().unwrap() < PHI_LARGE {
        let b = (breaks.last().unwrap() * 1.4).min(PHI_LARGE);
        breaks.push(b);
    }
    let mid = integrator(tol).integrate_with_breaks(|z| phi.eval_unit(z) * z.powf(-1.0 - g), &breaks);
    let zl = PHI_LARGE;
    let mut large = zl.powf(p - g) / (g - p) - phi.abs_moment * zl.powf(-g) / g;
    let mut large_err = 0.0;
    for &(nu, c) in &phi.large_coef {
        let t = c * zl.powf(-nu - g) / (nu + g);
        large += t;
        large_err = t.abs();
        if large_err < 1e-18 * large.abs() {
            break;
        }
    }
    let integral = small + mid.value + large;
    let pref = alpha.powf(g) / (1.0 - alpha) * rho0.powf(p - g);
    let value = pref * integral;
    let rel_norm = ((p - g) / beta).abs() * norm.abs_error_estimate / norm.value;
    Ok(QuadResult {
        value,
        abs_error_estimate: pref * (small_err + mid.abs_error_estimate + large_err) + value.abs() * rel_norm,
        evaluations: mid.evaluations,
    })
}

/// `sigma_tilde = |c0|^p sigma^p (tau_beta / tau_{(1-alpha)beta})^{1/((1-alpha)beta)} kappa`.
pub fn sigma_tilde(alpha: f64, beta: f64, p: f64, c0: f64, sigma: f64, tol: f64) -> Result<QuadResult> {
    let rho = (1.0 - alpha) * beta;
    let tb = tau(beta)?;
    let tr = tau(rho)?;
    let kap = kappa(alpha, beta, p, tol)?;
    let f = (c0.abs() * sigma).powf(p) * (tb / tr).powf(1.0 / rho);
    Ok(kap.scale(f))
}

fn mesh_end(k: usize, i: usize) -> f64 {
    (1500.0f64).max(80.0 * (i + k) as f64)
}

/// Fixed composite Gauss–Legendre rule on `(0, x_max]` graded toward the
/// integer singular points `0..=k` of `h_k`.
fn theta_mesh(k: usize, i: usize, level: u32) -> (Vec<f64>, Vec<f64>) {
    let refine = 2f64.powi(level as i32);
    let width = 0.125 / refine;
    let ratio = 1.0 + 0.15 / refine;
    let depth = 44;
    let mut edges: Vec<f64> = Vec::new();
    for j in 0..=k {
        let jf = j as f64;
        // Geometric grading on both sides of the integer j.
        for side in [-1.0, 1.0] {
            if j == 0 && side < 0.0 {
                continue;
            }
            let mut d = 0.5f64;
            for _ in 0..depth {
                edges.push(jf + side * d);
                d *= 0.5;
            }
        }
        edges.push(jf);
        // Uniform panels in the middle of [j, j+1].
        let mut x = jf + 0.5;
        while x < jf + 1.0 - 1e-12 {
            edges.push(x);
            x += width;
        }
    }
    let x_max = mesh_end(k, i);
    let mut x = (k + 1) as f64;
    while x < x_max {
        edges.push(x);
        x *= ratio;
    }
    edges.push(x_max);
    edges.retain(|e| *e >= 0.0);
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-300);
    let mut nodes = Vec::with_capacity(edges.len() * 8);
    let mut weights = Vec::with_capacity(edges.len() * 8);
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        for (xg, wg) in GL8.iter() {
            nodes.push(c - h * xg);
            weights.push(wg * h);
            nodes.push(c + h * xg);
            weights.push(wg * h);
        }
    }
    (nodes, weights)
}

const GL8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// Even and odd parts of `|1+r|^b + |1-r|^b` style combinations for `|r| < 1`:
/// returns `(sum_{j>=1} C(b,2j) r^{2j}, sum_{j>=0} C(b,2j+1) r^{2j+1})`.
fn binom_series(b: f64, r: f64) -> (f64, f64) {
    let mut even = 0.0;
    let mut odd = 0.0;
    let mut c = 1.0; // C(b, m)
    let mut pw = 1.0; // r^m
    for m in 1..=80usize {
        c *= (b - (m - 1) as f64) / m as f64;
        pw *= r;
        let t = c * pw;
        if m % 2 == 0 {
            even += t;
        } else {
            odd += t;
        }
        if t.abs() < 1e-18 * (even.abs() + odd.abs()) && m > 2 {
            break;
        }
    }
    (even, odd)
}

/// Pointwise pieces for `theta`: returns `(E, O)` with
/// `E = |a+b|^b + |a-b|^b - 2|a|^b - 2|b|^b` and `O = (|a+b|^b - |a-b|^b)/2`.
#[inline]
fn pair_terms(a: f64, b: f64, beta: f64, abs_a_b: f64, abs_b_b: f64) -> (f64, f64) {
    let (aa, bb) = (a.abs(), b.abs());
    if aa == 0.0 || bb == 0.0 {
        return (0.0, 0.0);
    }
    let (big, small, big_b, small_b) = if aa >= bb { (a, b, abs_a_b, abs_b_b) } else { (b, a, abs_b_b, abs_a_b) };
    let r = small / big;
    if r.abs() < 0.25 {
        let (even, odd) = binom_series(beta, r);
        let e = 2.0 * big_b * even - 2.0 * small_b;
        // |big + small|^b - |big - small|^b = 2 |big|^b odd(r), antisymmetric in the swap.
        let o = big_b * odd;
        return (e, o);
    }
    let p = (a + b).abs().powf(beta);
    let m = (a - b).abs().powf(beta);
    (p + m - 2.0 * abs_a_b - 2.0 * abs_b_b, 0.5 * (p - m))
}

/// `(1+d)^s - 1 - s d`, accurate for small `d`.
#[inline]
fn second_order_power(d: f64, s: f64) -> f64 {
    if d.abs() < 1e-3 {
        let mut c = s * (s - 1.0) / 2.0;
        let mut pw = d * d;
        let mut sum = 0.0;
        for m in 2..12usize {
            sum += c * pw;
            c *= (s - m as f64) / (m + 1) as f64;
            pw *= d;
        }
        sum
    } else {
        (s * d.ln_1p()).exp_m1() - s * d
    }
}

struct ThetaIntegrand {
    beta: f64,
    s: f64,
    norm: f64,
    weights: Vec<f64>,
    h0: Vec<f64>,
    hi: Vec<f64>,
    h0b: Vec<f64>,
    hib: Vec<f64>,
    tail_c: f64,
    tail_e: f64,
    tail_x: f64,
    shift: f64,
}

impl ThetaIntegrand {
    fn new(alpha: f64, beta: f64, p: f64, k: usize, i: usize, level: u32, norm: f64) -> Result<Self> {
        let hk = Hk::new(alpha, k)?;
        let (nodes, weights) = theta_mesh(k, i, level);
        let h0: Vec<f64> = nodes.iter().map(|&x| hk.eval(x)).collect();
        let hi: Vec<f64> = nodes.iter().map(|&x| hk.eval(x + i as f64)).collect();
        let h0b = h0.iter().map(|v| v.abs().powf(beta)).collect();
        let hib = hi.iter().map(|v| v.abs().powf(beta)).collect();
        let tail_x = mesh_end(k, i);
        Ok(Self {
            beta,
            s: 2.0 * p / beta,
            norm,
            weights,
            h0,
            hi,
            h0b,
            hib,
            tail_c: hk.tail_coefficient(),
            tail_e: alpha - k as f64,
            tail_x,
            shift: i as f64,
        })
    }

    /// `2 M^s - N_+^s - N_-^s` at angle `phi`.
    fn bracket(&self, phi: f64) -> f64 {
        let (t, c) = phi.sin_cos();
        let beta = self.beta;
        let cb = c.powf(beta);
        let tb = t.powf(beta);
        let mut esum = 0.0;
        let mut osum = 0.0;
        for n in 0..self.weights.len() {
            let a = c * self.h0[n];
            let b = t * self.hi[n];
            let (e, o) = pair_terms(a, b, beta, cb * self.h0b[n], tb * self.hib[n]);
            esum += self.weights[n] * e;
            osum += self.weights[n] * o;
        }
        // Tail beyond the mesh: both factors follow C x^e.
        let x = self.tail_x;
        let q = (1.0 + self.shift / (2.0 * x)).powf(self.tail_e);
        let a = c;
        let b = t * q;
        let (e, o) = pair_terms(a, b, beta, cb, b.abs().powf(beta));
        let scale = self.tail_c.abs().powf(beta) * x.powf(self.tail_e * beta + 1.0) / (-(self.tail_e * beta) - 1.0);
        esum += scale * e;
        osum += scale * o;

        let m = (cb + tb) * self.norm;
        // D_+ = N(a+b) - M = E/2 + O, D_- = E/2 - O.
        let dp = (0.5 * esum + osum) / m;
        let dm = (0.5 * esum - osum) / m;
        let s = self.s;
        -m.powf(s) * (s * (esum / m) + second_order_power(dp, s) + second_order_power(dm, s))
    }
}

/// `theta(i)` in the second-order CLT regime (`k >= 2`, `alpha < k - 2/beta`, `p < beta/2`).
///
/// Normalised with `c0 = sigma = 1`. The reported error combines the angular
/// quadrature estimate with the change under one mesh refinement.
pub fn theta_i(i: usize, alpha: f64, beta: f64, p: f64, k: usize, tol: f64) -> Result<QuadResult> {
    check_regime(Regime::SecondOrderClt, alpha, beta, p, k)?;
    check_tol(tol)?;
    let norm = hk_beta_norm(alpha, beta, k, 1e-12)?.value;
    let ap = a_p(p, 1e-13)?.value;
    let s = 2.0 * p / beta;
    let pref = 2.0 * gamma(1.0 - s) / (2.0 * p) / (ap * ap);
    // The integrand has algebraic layers at both ends whose width shrinks with i.
    let mut angle_breaks: Vec<f64> = (1..=40).map(|j| 2f64.powi(-j)).collect();
    angle_breaks.extend((1..=40).map(|j| FRAC_PI_2 - 2f64.powi(-j)));
    angle_breaks.extend([0.0, FRAC_PI_2]);
    angle_breaks.sort_by(f64::total_cmp);
    let mut prev: Option<QuadResult> = None;
    for level in 0..4u32 {
        let f = ThetaIntegrand::new(alpha, beta, p, k, i, level, norm)?;
        let integ = Integrator::new(1e-15, tol * 1e-2).with_max_panels(4000);
        let r = integ.integrate_with_breaks(
            |phi| {
                let (t, c) = phi.sin_cos();
                f.bracket(phi) * (c * t).powf(-1.0 - p)
            },
            &angle_breaks,
        );
        let cur = r.scale(pref);
        if let Some(pr) = prev {
            let diff = (cur.value - pr.value).abs();
            let err = diff + cur.abs_error_estimate;
            if err <= tol * cur.value.abs().max(1e-300) || err <= tol * 1e-3 {
                return Ok(QuadResult {
                    value: cur.value,
                    abs_error_estimate: err,
                    evaluations: cur.evaluations + pr.evaluations,
                });
            }
        }
        prev = Some(cur);
    }
    let last = prev.expect("at least one level");
    Err(Error::ToleranceNotMet(format!(
        "theta({i}) did not reach relative tolerance {tol:.1e} (value {:.6e})",
        last.value
    )))
}

/// `psi_i(s1, s2) = exp(-int |s1 h_k(x) - s2 h_k(x+i)|^beta dx) - exp(-(|s1|^beta + |s2|^beta) ||h_k||_beta^beta)`.
pub fn psi_i(i: usize, s1: f64, s2: f64, alpha: f64, beta: f64, k: usize, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    let norm = hk_beta_norm(alpha, beta, k, tol)?.value;
    let h = Hk::new(alpha, k)?;
    let shift = i as f64;
    let f = |x: f64| (s1 * h.eval(x) - s2 * h.eval(x + shift)).abs().powf(beta);
    let mut breaks: Vec<f64> = (-(i as i64)..=(k as i64 + 2)).map(|j| j as f64).collect();
    let x_end = 1e6 * (1.0 + shift);
    while *breaks.last().unwrap() < x_end {
        let b = (breaks.last().unwrap() * 1.5).min(x_end);
        breaks.push(b);
    }
    let body = integrator(tol).integrate_with_breaks(f, &breaks);
    // Far out both terms share the tail c x^{alpha-k}.
    let e = (alpha - k as f64) * beta + 1.0;
    let tail = ((s1 - s2) * h.tail_coefficient()).abs().powf(beta) * x_end.powf(e) / (-e);
    let cross = body.value + tail;
    Ok((-cross).exp() - (-(s1.abs().powf(beta) + s2.abs().powf(beta)) * norm).exp())
}

/// Outcome of the `eta^2` series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSquared {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub theta: Vec<f64>,
    pub truncation_index: usize,
    pub decay_exponent: f64,
    pub decay_constant: f64,
    pub remainder_estimate: f64,
}

/// `eta^2 = |c0 sigma|^{2p} (theta(0) + 2 sum_{i>=1} theta(i))`.
///
/// The series is extended until the remainder bound `2 K I^{1-r}/(r-1)` of
/// a power law `|theta(i)| <= K i^{-r}` fitted on `[I/2, I]` falls below
/// `tol` relative to the partial sum; the remainder estimate is added to the
/// value and to the error.
pub fn eta_sq(
    alpha: f64,
    beta: f64,
    p: f64,
    k: usize,
    c0: f64,
    sigma: f64,
    tol: f64,
    i_max: usize,
) -> Result<EtaSquared> {
    check_regime(Regime::SecondOrderClt, alpha, beta, p, k)?;
    let theta_tol = (tol * 0.1).max(1e-9);
    let mut theta: Vec<f64> = Vec::new();
    let mut errs: Vec<f64> = Vec::new();
    let mut target = 16usize.min(i_max.max(4));
    loop {
        while theta.len() <= target {
            let r = theta_i(theta.len(), alpha, beta, p, k, theta_tol)?;
            theta.push(r.value);
            errs.push(r.abs_error_estimate);
        }
        let partial = theta[0] + 2.0 * theta[1..].iter().sum::<f64>();
        let (kc, r) = fit_power_law(&theta, target / 2, target);
        if r > 1.0 && kc.is_finite() {
            let remainder = 2.0 * kc * (target as f64).powf(1.0 - r) / (r - 1.0);
            if remainder.abs() <= tol * partial.abs() || target >= i_max {
                if remainder.abs() > tol * partial.abs() {
                    return Err(Error::ToleranceNotMet(format!(
                        "eta^2 remainder {remainder:.3e} above tolerance at the series cap I={i_max}"
                    )));
                }
                let scale = (c0.abs() * sigma).powf(2.0 * p);
                let sign = theta[target].signum();
                let value = scale * (partial + sign * remainder);
                let quad_err = errs[0] + 2.0 * errs[1..].iter().sum::<f64>();
                return Ok(EtaSquared {
                    value,
                    abs_error_estimate: scale * (quad_err + remainder.abs()),
                    theta,
                    truncation_index: target,
                    decay_exponent: r,
                    decay_constant: kc,
                    remainder_estimate: scale * remainder,
                });
            }
        } else if target >= i_max {
            return Err(Error::ToleranceNotMet(format!(
                "theta(i) decay exponent {r:.3} is not above 1 on [{}, {target}]",
                target / 2
            )));
        }
        target = (target * 2).min(i_max);
    }
}

/// Least-squares fit of `log|theta(i)| = log K - r log i` on `[lo, hi]`;
/// `K` is then raised so the power law bounds every point in the window.
pub fn fit_power_law(theta: &[f64], lo: usize, hi: usize) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = (lo.max(1)..=hi.min(theta.len() - 1))
        .filter(|&i| theta[i] != 0.0)
        .map(|i| ((i as f64).ln(), theta[i].abs().ln()))
        .collect();
    if pts.len() < 3 {
        return (f64::NAN, f64::NAN);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let r = -slope;
    let k = pts
        .iter()
        .map(|p| (p.1 + r * p.0).exp())
        .fold(0.0, f64::max);
    (k, r)
}

/// Every constant applicable to a parameter set, with error estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitConstants {
    pub params: ConstantParams,
    pub regimes: Vec<Regime>,
    pub a_p: Option<QuadResult>,
    pub hk_beta_norm: Option<QuadResult>,
    pub sas_abs_moment: Option<QuadResult>,
    pub m_p: Option<QuadResult>,
    pub tau_beta: Option<f64>,
    pub tau_rho: Option<f64>,
    pub kappa: Option<QuadResult>,
    pub sigma_tilde: Option<QuadResult>,
    pub theta_series: Option<Vec<f64>>,
    pub eta_sq: Option<EtaSquared>,
    pub tolerance: f64,
}

/// Computes every constant whose regime conditions hold.
pub fn compute_limit_constants(params: ConstantParams, tol: f64, i_max: usize) -> Result<LimitConstants> {
    let ConstantParams { alpha, beta, p, k, c0, sigma } = params;
    let regimes: Vec<Regime> = Regime::ALL
        .iter()
        .copied()
        .filter(|r| check_regime(*r, alpha, beta, p, k).is_ok())
        .collect();
    let has = |r: Regime| regimes.contains(&r);
    let a = if p > 0.0 && p < 1.0 { Some(a_p(p, tol)?) } else { None };
    let norm = hk_beta_norm(alpha, beta, k, tol).ok();
    let mom = sas_abs_moment(p, beta, tol).ok();
    let mp = if has(Regime::Ergodic) { Some(m_p(alpha, beta, p, k, c0, sigma, tol)?) } else { None };
    let tau_beta = tau(beta).ok();
    let tau_rho = tau((1.0 - alpha) * beta).ok();
    let (kap, st) = if has(Regime::SecondOrderStable) {
        (Some(kappa(alpha, beta, p, tol)?), Some(sigma_tilde(alpha, beta, p, c0, sigma, tol)?))
    } else {
        (None, None)
    };
    let eta = if has(Regime::SecondOrderClt) {
        Some(eta_sq(alpha, beta, p, k, c0, sigma, tol, i_max)?)
    } else {
        None
    };
    Ok(LimitConstants {
        params,
        regimes,
        a_p: a,
        hk_beta_norm: norm,
        sas_abs_moment: mom,
        m_p: mp,
        tau_beta,
        tau_rho,
        kappa: kap,
        sigma_tilde: st,
        theta_series: eta.as_ref().map(|e| e.theta.clone()),
        eta_sq: eta,
        tolerance: tol,
    })
}

/// Content-addressed on-disk cache of [`LimitConstants`].
#[derive(Debug, Clone)]
pub struct ConstantsCache {
    dir: PathBuf,
}

impl ConstantsCache {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        Self {
            dir: dir.as_ref().to_path_buf(),
        }
    }

    /// Hex SHA-256 of the canonical JSON of the inputs.
    pub fn key(params: &ConstantParams, tol: f64, i_max: usize) -> String {
        let mut m = BTreeMap::new();
        m.insert("params", serde_json::to_value(params).unwrap_or_default());
        m.insert("tol", serde_json::json!(tol));
        m.insert("i_max", serde_json::json!(i_max));
        m.insert("version", serde_json::json!(1));
        let txt = serde_json::to_string(&m).unwrap_or_default();
        hex::encode(Sha256::digest(txt.as_bytes()))
    }

    pub fn get_or_compute(&self, params: ConstantParams, tol: f64, i_max: usize) -> Result<LimitConstants> {
        let path = self.dir.join(format!("{}.json", Self::key(&params, tol, i_max)));
        if let Ok(txt) = std::fs::read_to_string(&path) {
            if let Ok(c) = serde_json::from_str::<LimitConstants>(&txt) {
                return Ok(c);
            }
        }
        let c = compute_limit_constants(params, tol, i_max)?;
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(&path, serde_json::to_string_pretty(&c)?)?;
        Ok(c)
    }
}

/// Raw Riemann sum of `|h_k|^beta` on `[0, x_max]` with midpoint mesh `h`.
pub fn hk_norm_riemann(alpha: f64, beta: f64, k: usize, h: f64, x_max: f64) -> Result<f64> {
    let hk = Hk::new(alpha, k)?;
    let n = (x_max / h).ceil() as usize;
    Ok((0..n).map(|j| hk.eval((j as f64 + 0.5) * h).abs().powf(beta)).sum::<f64>() * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn a_p_closed(p: f64) -> f64 {
        2.0 * gamma(1.0 - p) * (PI * p / 2.0).cos() / p
    }

    fn moment_closed(p: f64, beta: f64) -> f64 {
        gamma(1.0 - p / beta) / (gamma(1.0 - p) * (PI * p / 2.0).cos())
    }

    #[test]
    fn a_p_matches_closed_form() {
        for &p in &[0.1, 0.3, 0.5, 0.7, 0.95, 1.3, 1.8] {
            let r = a_p_extended(p, 1e-10).unwrap();
            assert_relative_eq!(r.value, a_p_closed(p), max_relative = 1e-9);
        }
        let r = a_p_extended(1.0, 1e-10).unwrap();
        assert_relative_eq!(r.value, PI, max_relative = 1e-9);
        assert!(a_p(1.2, 1e-8).is_err());
        assert!(a_p_extended(2.0, 1e-8).is_err());
    }

    #[test]
    fn fourier_identity_self_check() {
        let p = 0.5;
        let ap = a_p(p, 1e-10).unwrap().value;
        // 2 int (1 - cos 2u) u^{-1-p} = 2^p a_p by substitution.
        let panels = 800usize;
        let breaks: Vec<f64> = (0..=panels).map(|j| j as f64 * PI / 2.0).collect();
        let t = panels as f64 * PI / 2.0;
        let r = Integrator::new(1e-13, 1e-12).integrate_with_breaks(|u| one_minus_cos(2.0 * u) * u.powf(-1.5), &breaks);
        // Tail for the doubled frequency: T^{-p}/p - (1+p) (2T)^{-2} T^{-p}.
        let tail = t.powf(-p) / p - (1.0 + p) * t.powf(-2.0 - p) / 4.0;
        assert_relative_eq!(2.0 * (r.value + tail) / ap, 2f64.powf(p), max_relative = 1e-6);
    }

    #[test]
    fn stable_moments() {
        for &(p, beta) in &[(0.5, 2.0), (0.7, 1.5), (1.2, 1.5), (0.3, 0.8), (1.5, 1.9)] {
            let r = sas_abs_moment(p, beta, 1e-10).unwrap();
            assert_relative_eq!(r.value, moment_closed(p, beta), max_relative = 1e-8);
        }
        // Gaussian oracle: Z ~ N(0, 2), E|Z|^p = 2^p Gamma((1+p)/2)/sqrt(pi).
        let g = 2f64.powf(0.5) * gamma(0.75) / PI.sqrt();
        assert_relative_eq!(sas_abs_moment(0.5, 2.0, 1e-10).unwrap().value, g, max_relative = 1e-9);
        let near0 = sas_abs_moment(1e-3, 1.5, 1e-10).unwrap().value;
        assert!((near0 - 1.0).abs() < 1e-2);
        assert!(sas_abs_moment(1.5, 1.5, 1e-8).is_err());
    }

    #[test]
    fn hk_norm_examples() {
        let tent = hk_beta_norm(1.0, 1.8, 2, 1e-12).unwrap();
        assert_relative_eq!(tent.value, 2.0 / 2.8, epsilon = 1e-10);
        assert!(hk_beta_norm(0.5, 1.0, 1, 1e-8).is_err());
        let q = hk_beta_norm(0.2, 1.5, 1, 1e-10).unwrap();
        let riemann = hk_norm_riemann(0.2, 1.5, 1, 1e-4, 1000.0).unwrap();
        let hk = Hk::new(0.2, 1).unwrap();
        let tail = hk_power_tail(&hk, 1.5, 1000.0).0;
        assert_relative_eq!(q.value, riemann + tail, max_relative = 1e-4);
    }

    #[test]
    fn hk_norm_tail_expansion_is_consistent() {
        // Moving the split point must not change the total.
        let hk = Hk::new(0.25, 1).unwrap();
        let beta = 1.5;
        let direct = Integrator::new(1e-14, 1e-13).integrate(|x| hk.eval(x).abs().powf(beta), 300.0, 1000.0).value;
        let diff = hk_power_tail(&hk, beta, 300.0).0 - hk_power_tail(&hk, beta, 1000.0).0;
        assert_relative_eq!(direct, diff, max_relative = 1e-8);
    }

    #[test]
    fn m_p_homogeneity_and_positivity() {
        let a = m_p(0.25, 1.5, 1.0, 1, 1.0, 1.0, 1e-9).unwrap().value;
        let b = m_p(0.25, 1.5, 1.0, 1, 2.0, 1.0, 1e-9).unwrap().value;
        assert!(a > 0.0);
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-14);
        assert!(m_p(0.25, 1.5, 1.5, 1, 1.0, 1.0, 1e-9).is_err());
    }

    #[test]
    fn tau_values() {
        assert_relative_eq!(tau(1.5).unwrap(), 0.398942, epsilon = 1e-6);
        let t12 = 0.2 / (gamma(0.8) * (0.6 * PI).cos().abs());
        assert_relative_eq!(tau(1.2).unwrap(), t12, max_relative = 1e-14);
        assert!(tau(2.0).is_err());
        assert!(tau(1.0).is_err());
    }

    #[test]
    fn phi_basic_properties() {
        let phi = PhiRho::new(1.0, 1.5, 0.5, 1e-10).unwrap();
        assert_eq!(phi.eval(0.0), 0.0);
        for &x in &[0.5, 1.0, 5.0] {
            assert_eq!(phi.eval(x), phi.eval(-x));
            assert!(phi.eval(x) > 0.0);
        }
        assert!(phi_rho(1.0, 1.0, 1.5, 1.2, 1e-8).is_err());
    }

    #[test]
    fn phi_branches_agree() {
        for &beta in &[1.2, 1.5, 1.8] {
            let phi = PhiRho::new(1.0, beta, 0.6, 1e-11).unwrap();
            for &z in &[0.3, 0.9, 1.0] {
                let q = phi.quadrature(z).value;
                let s = phi.small_series(z).0;
                assert_relative_eq!(q, s, max_relative = 1e-8);
            }
            for &z in &[20.0, 35.0] {
                let q = phi.quadrature(z).value;
                let (l, _) = phi.large_series(z).expect("settled series");
                assert_relative_eq!(q, l, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn phi_scaling_in_rho() {
        let p1 = PhiRho::new(1.0, 1.7, 0.4, 1e-10).unwrap();
        let p2 = PhiRho::new(2.5, 1.7, 0.4, 1e-10).unwrap();
        assert_relative_eq!(p2.eval(3.0), 2.5f64.powf(0.4) * p1.eval(3.0 / 2.5), max_relative = 1e-12);
    }

    fn kappa_closed(alpha: f64, beta: f64, p: f64) -> f64 {
        let g = 1.0 / (1.0 - alpha);
        let rho = hk_beta_norm(alpha, beta, 1, 1e-12).unwrap().value.powf(1.0 / beta);
        let ag = a_p_closed(g);
        alpha.powf(g) / (1.0 - alpha) * ag / a_p_closed(p) * gamma((g - p) / beta) / (beta * rho.powf(g - p))
    }

    #[test]
    fn kappa_matches_fubini_oracle() {
        for &(alpha, beta, p) in &[(0.25, 1.8, 0.8), (0.1, 1.5, 0.5), (0.3, 1.9, 0.3)] {
            let k = kappa(alpha, beta, p, 1e-8).unwrap();
            assert!(k.value > 0.0);
            assert_relative_eq!(k.value, kappa_closed(alpha, beta, p), max_relative = 1e-6);
        }
        assert!(kappa(0.5, 1.8, 0.8, 1e-6).is_err());
    }

    #[test]
    fn kappa_stable_under_tolerance_halving() {
        let a = kappa(0.25, 1.8, 0.8, 1e-6).unwrap();
        let b = kappa(0.25, 1.8, 0.8, 5e-7).unwrap();
        assert!((a.value - b.value).abs() <= 2.0 * a.abs_error_estimate.max(1e-12));
        assert!((a.value - b.value).abs() / a.value < 5e-3);
    }

    #[test]
    fn sigma_tilde_positive_and_homogeneous() {
        let a = sigma_tilde(0.25, 1.8, 0.8, 1.0, 1.0, 1e-7).unwrap().value;
        let b = sigma_tilde(0.25, 1.8, 0.8, 2.0, 1.0, 1e-7).unwrap().value;
        assert!(a > 0.0);
        assert_relative_eq!(b, 2f64.powf(0.8) * a, max_relative = 1e-12);
    }

    #[test]
    fn pair_terms_branches_agree() {
        let beta = 1.7;
        for &(a, b) in &[(1.0, 0.2), (1.0, -0.24), (0.3, 1.1), (-2.0, 0.49)] {
            let (ab, bb) = (f64::abs(a).powf(beta), f64::abs(b).powf(beta));
            let (e, o) = pair_terms(a, b, beta, ab, bb);
            let p = f64::abs(a + b).powf(beta);
            let m = f64::abs(a - b).powf(beta);
            assert_relative_eq!(e, p + m - 2.0 * ab - 2.0 * bb, max_relative = 1e-12);
            assert_relative_eq!(o, 0.5 * (p - m), max_relative = 1e-12);
        }
    }

    #[test]
    fn second_order_power_branches() {
        for &d in &[1e-4, 9e-4, 2e-3, -5e-4] {
            let exact = (1.0f64 + d).powf(0.9) - 1.0 - 0.9 * d;
            assert_relative_eq!(second_order_power(d, 0.9), exact, max_relative = 1e-7);
        }
    }

    #[test]
    fn theta_zero_matches_closed_form() {
        let (alpha, beta, p, k) = (0.2, 1.8, 0.8, 2);
        let t0 = theta_i(0, alpha, beta, p, k, 1e-6).unwrap();
        let norm = hk_beta_norm(alpha, beta, k, 1e-12).unwrap().value.powf(1.0 / beta);
        let exact = norm.powf(2.0 * p) * (moment_closed(2.0 * p, beta) - moment_closed(p, beta).powi(2));
        assert_relative_eq!(t0.value, exact, max_relative = 1e-5);
    }

    #[test]
    fn theta_regime_errors() {
        assert!(theta_i(0, 0.2, 1.8, 0.8, 1, 1e-6).is_err());
        assert!(theta_i(0, 0.2, 1.8, 0.95, 2, 1e-6).is_err());
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let th: Vec<f64> = (0..=40).map(|i| if i == 0 { 1.0 } else { 3.0 * (i as f64).powf(-2.2) }).collect();
        let (k, r) = fit_power_law(&th, 10, 40);
        assert_relative_eq!(r, 2.2, max_relative = 1e-10);
        assert_relative_eq!(k, 3.0, max_relative = 1e-9);
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ConstantsCache::new(dir.path());
        let params = ConstantParams { alpha: 0.25, beta: 1.5, p: 1.0, k: 1, c0: 1.0, sigma: 1.0 };
        let a = cache.get_or_compute(params, 1e-8, 64).unwrap();
        let b = cache.get_or_compute(params, 1e-8, 64).unwrap();
        assert_eq!(a.m_p.unwrap().value.to_bits(), b.m_p.unwrap().value.to_bits());
        assert_ne!(ConstantsCache::key(&params, 1e-8, 64), ConstantsCache::key(&params, 1e-7, 64));
    }

    #[test]
    fn fourier_power_identity() {
        for p in [0.3, 0.5, 0.7] {
            let ap = 2.0 * gamma(1.0 - p) * (PI * p / 2.0).cos() / p;
            for x in [0.5, 1.0, 2.0, 10.0] {
                let v = xp_integral(x, p, 1e-10).unwrap().value / ap;
                assert!((v / x.powf(p) - 1.0).abs() < 1e-6, "x={x} p={p}: {v}");
            }
        }
        assert_eq!(xp_integral(0.0, 0.5, 1e-8).unwrap().value, 0.0);
    }

    #[test]
    fn psi_vanishes_with_lag() {
        let vals: Vec<f64> = [10, 20, 40]
            .iter()
            .map(|&i| psi_i(i, 1.0, 1.0, 0.2, 1.8, 2, 1e-10).unwrap().abs())
            .collect();
        assert!(vals[0] > vals[1] && vals[1] > vals[2], "{vals:?}");
        assert!(vals[2] < 1e-2);
        // psi_0(s, 0) = 0: one coordinate switched off leaves no dependence.
        assert!(psi_i(0, 1.0, 0.0, 0.2, 1.8, 2, 1e-10).unwrap().abs() < 1e-9);
    }

    #[test]
    fn theta_decay_is_summable() {
        let t: Vec<f64> = [5usize, 10, 20, 50]
            .iter()
            .map(|&i| theta_i(i, 0.2, 1.8, 0.8, 2, 1e-4).unwrap().value * (i as f64).powf(1.05))
            .collect();
        assert!(t.iter().all(|v| *v > 0.0 && *v <= t[0] * 1.0001), "{t:?}");
    }

    #[test]
    fn eta_sq_scale_equivariance() {
        let a = eta_sq(0.2, 1.8, 0.8, 2, 1.0, 1.0, 0.1, 64).unwrap();
        let b = eta_sq(0.2, 1.8, 0.8, 2, 1.0, 2.0, 0.1, 64).unwrap();
        assert!(a.value > 0.0);
        assert!((b.value / a.value - 2f64.powf(1.6)).abs() < 1e-12, "{}", b.value / a.value);
    }

    #[test]
    fn stable_moment_matches_monte_carlo() {
        use crate::stable_rng::{SeedStream, SymmetricStable};
        let law = SymmetricStable::new(1.5, 1.0).unwrap();
        let mut rng = SeedStream::new(21, 0).rng();
        let n = 1_000_000;
        let mc = (0..n).map(|_| law.sample(&mut rng).abs().powf(0.7)).sum::<f64>() / n as f64;
        let q = sas_abs_moment(0.7, 1.5, 1e-10).unwrap().value;
        assert!((mc / q - 1.0).abs() < 0.01, "{mc} vs {q}");
    }

    #[test]
    fn phi_matches_monte_carlo() {
        use crate::stable_rng::{SeedStream, SymmetricStable};
        let law = SymmetricStable::new(1.5, 1.0).unwrap();
        let mut rng = SeedStream::new(22, 0).rng();
        let n = 1_000_000;
        let mc = (0..n)
            .map(|_| {
                let w = law.sample(&mut rng);
                (w + 1.0).abs().powf(0.5) - w.abs().powf(0.5)
            })
            .sum::<f64>()
            / n as f64;
        let phi = phi_rho(1.0, 1.0, 1.5, 0.5, 1e-10).unwrap();
        assert!((mc / phi - 1.0).abs() < 0.01, "{mc} vs {phi}");
    }

    #[test]
    fn m_p_matches_v_process_mean() {
        use crate::simulate::{EngineOptions, VProcessSimulator};
        use crate::stable_rng::SeedStream;
        let sim = VProcessSimulator::new(0.25, 1.5, 1, 16, EngineOptions::default()).unwrap();
        let mut acc = 0.0;
        let mut cnt = 0.0;
        for r in 0..6250u64 {
            for v in sim.sample(SeedStream::new(23, r)) {
                acc += v.abs();
                cnt += 1.0;
            }
        }
        let m = m_p(0.25, 1.5, 1.0, 1, 1.0, 1.0, 1e-10).unwrap().value;
        assert!((acc / cnt / m - 1.0).abs() < 0.02, "{} vs {m}", acc / cnt);
    }
}
