//! Sample paths of Lévy-driven moving averages and of their limit objects.
//!
//! Stable-driven paths come from a moving-average engine in unit-lag time:
//! self-similarity maps the grid spacing `1/n` to 1, the engine integrates a
//! unit-lag kernel `phi` against SαS noise, and the result is rescaled. The
//! past is split three ways, measured as distance `d` before time 0:
//!
//! * near field `u in [-t_near, count]`: sub-grid cells of width `1/m` with
//!   cell-averaged weights, evaluated for every output by one FFT convolution;
//! * far field `d in [t_near, t_trunc]`: geometric cells whose weights are
//!   evaluated at Chebyshev nodes in the output index and interpolated;
//! * `d > t_trunc`: one stable variable shared by all outputs, carrying the
//!   exact tail scale. Its coupling error is the reported tail bound.
//!
//! Compound Poisson paths are exact finite sums over the jump record.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::kernel::{G0Mode, Hk, KernelFamily, KernelSpec};
use crate::quad::{gauss_legendre8, Integrator};
use crate::stable_rng::{sample_jumps, sample_marks, DriverKind, DriverSpec, JumpRecord, SeedStream, SymmetricStable};

/// Version tag written into CSV headers.
pub const CSV_VERSION: u32 = 1;

/// Default look-back window for compound Poisson drivers.
pub const DEFAULT_T_PAST: f64 = 50.0;

type Fun = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `|phi(v)| ~ c v^e` as `v -> inf`, with `e beta < -1`.
#[derive(Debug, Clone, Copy)]
struct PowerTail {
    c: f64,
    e: f64,
}

/// A kernel on unit-lag time, `phi(v) = 0` for `v <= 0`.
#[derive(Clone)]
pub struct UnitKernel {
    f: Fun,
    singular: Vec<f64>,
    tail: Option<PowerTail>,
    support_end: f64,
}

impl std::fmt::Debug for UnitKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitKernel")
            .field("singular", &self.singular)
            .field("support_end", &self.support_end)
            .finish()
    }
}

impl UnitKernel {
    /// `phi = h_k` for the pure power kernel.
    pub fn hk(alpha: f64, k: usize) -> Result<Self> {
        let h = Hk::new(alpha, k)?;
        let c = h.tail_coefficient();
        let tail = (c != 0.0).then_some(PowerTail { c, e: alpha - k as f64 });
        let support_end = if tail.is_some() { f64::INFINITY } else { k as f64 };
        Ok(Self {
            f: Arc::new(move |v| h.eval(v)),
            singular: (0..=k).map(|j| j as f64).collect(),
            tail,
            support_end,
        })
    }

    /// Arbitrary kernel with finite (or negligible beyond) support.
    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static, singular: Vec<f64>, support_end: f64) -> Self {
        Self {
            f: Arc::new(f),
            singular,
            tail: None,
            support_end,
        }
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        if v <= 0.0 || v > self.support_end {
            0.0
        } else {
            (self.f)(v)
        }
    }

    fn near_singular(&self, a: f64, b: f64, slack: f64) -> Option<f64> {
        self.singular.iter().copied().find(|s| *s >= a - slack && *s <= b + slack)
    }

    /// `int_T^inf |phi|^beta`.
    fn tail_power_integral(&self, t: f64, beta: f64) -> f64 {
        if t >= self.support_end {
            return 0.0;
        }
        match self.tail {
            Some(PowerTail { c, e }) => c.abs().powf(beta) * t.powf(e * beta + 1.0) / (-e * beta - 1.0),
            None => {
                Integrator::new(1e-300, 1e-8)
                    .integrate(|v| self.eval(v).abs().powf(beta), t, self.support_end)
                    .value
            }
        }
    }

    /// Bound on `sup_{0<=i<=count} ||phi(i+.) - phi(.)||_{L^beta(T,inf)}`.
    fn rank_one_error(&self, t: f64, beta: f64, count: usize) -> f64 {
        if t >= self.support_end {
            return 0.0;
        }
        let n = count as f64;
        match self.tail {
            Some(PowerTail { c, e }) => {
                let q = (e - 1.0) * beta + 1.0;
                n * (c * e).abs() * (t.powf(q) / (-q)).powf(1.0 / beta)
            }
            None => {
                let h = 1e-3 * t.max(1.0);
                let d = |v: f64| (self.eval(v + h) - self.eval(v)) / h;
                let r = Integrator::new(1e-300, 1e-6).integrate(|v| d(v).abs().powf(beta), t, self.support_end);
                n * r.value.powf(1.0 / beta)
            }
        }
    }

    /// Smallest `T` with `rank_one_error(T) <= target`, for power tails.
    fn required_truncation(&self, beta: f64, count: usize, target: f64) -> f64 {
        match self.tail {
            Some(PowerTail { c, e }) => {
                let q = (e - 1.0) * beta + 1.0;
                let base = (target / (count.max(1) as f64 * (c * e).abs())).powf(beta) * (-q);
                (base.ln() / q).exp()
            }
            None => self.support_end,
        }
    }
}

/// Settings of the moving-average engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineOptions {
    /// Sub-grid cells per unit lag.
    pub m_sub: usize,
    /// Truncation lag in unit-lag time; chosen from `tol` when absent.
    #[serde(default)]
    pub t_trunc: Option<f64>,
    /// Admissible tail and far-field error relative to the marginal scale.
    pub tol: f64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            m_sub: 16,
            t_trunc: None,
            tol: 1e-3,
        }
    }
}

/// Error bounds of an engine, relative to the marginal scale unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineBounds {
    /// `||phi||_beta` in unit-lag time (absolute).
    pub marginal_scale: f64,
    /// Coupling error of the shared remainder beyond `t_trunc`.
    pub tail_bound: f64,
    /// Cell-averaging error of the far field.
    pub far_bound: f64,
    /// Cell-averaging error of the near field (sub-grid resolution).
    pub near_bound: f64,
    pub t_near: f64,
    pub t_trunc: f64,
    pub far_cells: usize,
}

const CHEB_NODES: usize = 33;
const GL2: f64 = 0.577_350_269_189_625_8;

/// Outputs `Y_i = int phi(i - u) dL_u`, `i = 0..=count`, for unit-scale SαS `L`.
pub struct MaEngine {
    kernel: UnitKernel,
    beta: f64,
    count: usize,
    m: usize,
    t_near: usize,
    n_noise: usize,
    fft_size: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    w_hat: Vec<Complex64>,
    far_width: Vec<f64>,
    far_rows: usize,
    far_a: Vec<f64>,
    interp: Option<Vec<f64>>,
    rem_scale: f64,
    bounds: EngineBounds,
}

impl std::fmt::Debug for MaEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MaEngine")
            .field("beta", &self.beta)
            .field("count", &self.count)
            .field("m", &self.m)
            .field("bounds", &self.bounds)
            .finish()
    }
}

fn cell_average(kernel: &UnitKernel, a: f64, b: f64, m: usize) -> f64 {
    let w = b - a;
    if let Some(s) = kernel.near_singular(a, b, 1.0 / m as f64) {
        let breaks: Vec<f64> = if s > a && s < b { vec![a, s, b] } else { vec![a, b] };
        return Integrator::new(1e-300, 1e-12)
            .integrate_with_breaks(|v| kernel.eval(v), &breaks)
            .value
            / w;
    }
    if a < 64.0 {
        gauss_legendre8(|v| kernel.eval(v), a, b) / w
    } else {
        let c = 0.5 * (a + b);
        let h = 0.5 * w * GL2;
        0.5 * (kernel.eval(c - h) + kernel.eval(c + h))
    }
}

fn bary_weights(nodes: usize) -> Vec<f64> {
    (0..nodes)
        .map(|r| {
            let s = if r % 2 == 0 { 1.0 } else { -1.0 };
            if r == 0 || r == nodes - 1 {
                0.5 * s
            } else {
                s
            }
        })
        .collect()
}

impl MaEngine {
    pub fn new(kernel: UnitKernel, beta: f64, count: usize, opts: EngineOptions) -> Result<Self> {
        SymmetricStable::new(beta, 1.0)?;
        if opts.m_sub == 0 {
            return domain("m_sub must be at least 1");
        }
        if !(opts.tol > 0.0) {
            return domain("engine tolerance must be positive");
        }
        if let Some(PowerTail { e, .. }) = kernel.tail {
            if e * beta >= -1.0 {
                return domain(format!(
                    "kernel tail ~ v^{e} is not in L^beta for beta = {beta}; the moving average is undefined"
                ));
            }
        }
        let m = opts.m_sub;
        let mf = m as f64;
        let mut t_near = count + 256;
        if kernel.support_end.is_finite() {
            t_near = t_near.min(kernel.support_end.ceil() as usize + 1);
        }
        if let Some(t) = opts.t_trunc {
            if !(t > 0.0) {
                return domain("t_trunc must be positive");
            }
            t_near = t_near.min(t.ceil().max(1.0) as usize);
        }
        let n_noise = (t_near + count) * m;

        let weights: Vec<f64> = (0..n_noise)
            .into_par_iter()
            .map(|l| mf * cell_average(&kernel, l as f64 / mf, (l + 1) as f64 / mf, m) / mf)
            .collect();
        let cell_err = |a: f64, b: f64| -> f64 {
            let d = (kernel.eval(b) - kernel.eval(a)).abs();
            d.powf(beta) * (b - a) / ((beta + 1.0) * 2f64.powf(beta))
        };
        // Marginal of output 0: near cells up to lag t_near.
        let near_pow: f64 = weights[..t_near * m].iter().map(|w| w.abs().powf(beta)).sum::<f64>() / mf;
        let near_err: f64 = (0..n_noise)
            .map(|l| cell_err(l as f64 / mf, (l + 1) as f64 / mf))
            .sum();

        let far_start = t_near as f64;
        let t_trunc = match opts.t_trunc {
            Some(t) => t.max(far_start).min(kernel.support_end),
            None => {
                let target = 1e-2 * opts.tol * near_pow.powf(1.0 / beta);
                kernel
                    .required_truncation(beta, count, target)
                    .max(4.0 * far_start)
                    .min(kernel.support_end)
            }
        };

        // Far-field cells; refine until the averaging error meets tol/2.
        let mut eps = 0.02;
        let (far_cells, far_pow, far_err) = loop {
            let mut cells = Vec::new();
            let mut d = far_start;
            while d < t_trunc {
                let mut w = (eps * d).max(1.0 / mf).min(t_trunc - d);
                loop {
                    let (a, b) = (kernel.eval(d), kernel.eval(d + w));
                    if (b - a).abs() <= eps * a.abs().max(b.abs()) || w <= 1.0 / mf {
                        break;
                    }
                    w *= 0.5;
                }
                cells.push((d, d + w));
                d += w;
                if cells.len() > 2_000_000 {
                    return Err(Error::ToleranceNotMet("far-field cell count exceeds 2e6".into()));
                }
            }
            let pow: f64 = cells
                .iter()
                .map(|(a, b)| kernel.eval(0.5 * (a + b)).abs().powf(beta) * (b - a))
                .sum();
            let err: f64 = cells.iter().map(|(a, b)| cell_err(*a, *b)).sum();
            let marg = (near_pow + pow).powf(1.0 / beta);
            if err.powf(1.0 / beta) <= 0.5 * opts.tol * marg || eps < 1e-4 {
                break (cells, pow, err);
            }
            eps *= 0.5;
        };

        let rem_pow = if t_trunc.is_finite() { kernel.tail_power_integral(t_trunc, beta) } else { 0.0 };
        let marginal = (near_pow + far_pow + rem_pow).powf(1.0 / beta);
        let tail_abs = kernel.rank_one_error(t_trunc, beta, count);
        let bounds = EngineBounds {
            marginal_scale: marginal,
            tail_bound: tail_abs / marginal,
            far_bound: far_err.powf(1.0 / beta) / marginal,
            near_bound: near_err.powf(1.0 / beta) / marginal,
            t_near: far_start,
            t_trunc,
            far_cells: far_cells.len(),
        };
        if bounds.tail_bound > opts.tol {
            return Err(Error::TruncationTooShort {
                bound: bounds.tail_bound,
                tolerance: opts.tol,
                required: kernel.required_truncation(beta, count, opts.tol * marginal),
            });
        }
        if bounds.far_bound > opts.tol {
            return Err(Error::ToleranceNotMet(format!(
                "far-field averaging error {:.3e} exceeds {:.3e}",
                bounds.far_bound, opts.tol
            )));
        }

        // Far-field weights at evaluation rows.
        let direct = count + 1 <= CHEB_NODES + 8;
        let rows: Vec<f64> = if direct {
            (0..=count).map(|i| i as f64).collect()
        } else {
            (0..CHEB_NODES)
                .map(|r| 0.5 * count as f64 * (1.0 - (PI * r as f64 / (CHEB_NODES - 1) as f64).cos()))
                .collect()
        };
        let far_a: Vec<f64> = rows
            .par_iter()
            .flat_map_iter(|&x| {
                let kernel = &kernel;
                far_cells
                    .iter()
                    .map(move |(a, b)| gauss_legendre8(|d| kernel.eval(x + d), *a, *b) / (b - a))
                    .collect::<Vec<_>>()
            })
            .collect();
        let interp = (!direct).then(|| {
            let bw = bary_weights(CHEB_NODES);
            let mut mat = vec![0.0; (count + 1) * CHEB_NODES];
            for i in 0..=count {
                let x = i as f64;
                let row = &mut mat[i * CHEB_NODES..(i + 1) * CHEB_NODES];
                if let Some(r) = rows.iter().position(|&t| (t - x).abs() < 1e-12) {
                    row[r] = 1.0;
                    continue;
                }
                let mut den = 0.0;
                for r in 0..CHEB_NODES {
                    let q = bw[r] / (x - rows[r]);
                    row[r] = q;
                    den += q;
                }
                row.iter_mut().for_each(|q| *q /= den);
            }
            mat
        });

        let fft_size = (2 * n_noise).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(fft_size);
        let inv = planner.plan_fft_inverse(fft_size);
        let mut w_hat: Vec<Complex64> = weights.iter().map(|&w| Complex64::new(w, 0.0)).collect();
        w_hat.resize(fft_size, Complex64::new(0.0, 0.0));
        fwd.process(&mut w_hat);
        let scale = 1.0 / fft_size as f64;
        w_hat.iter_mut().for_each(|z| *z *= scale);

        Ok(Self {
            kernel,
            beta,
            count,
            m,
            t_near,
            n_noise,
            fft_size,
            fwd,
            inv,
            w_hat,
            far_width: far_cells.iter().map(|(a, b)| b - a).collect(),
            far_rows: rows.len(),
            far_a,
            interp,
            rem_scale: rem_pow.powf(1.0 / beta),
            bounds,
        })
    }

    pub fn bounds(&self) -> EngineBounds {
        self.bounds
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn kernel(&self) -> &UnitKernel {
        &self.kernel
    }

    /// One realisation of `Y_0..=Y_count` with unit-scale noise.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let law = SymmetricStable::new(self.beta, 1.0).expect("validated beta");
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        let cell_scale = (self.m as f64).powf(-1.0 / self.beta);
        for z in buf.iter_mut().take(self.n_noise) {
            z.re = cell_scale * law.sample_standard(rng);
        }
        self.fwd.process(&mut buf);
        for (z, w) in buf.iter_mut().zip(self.w_hat.iter()) {
            *z *= w;
        }
        self.inv.process(&mut buf);
        let mut out: Vec<f64> = (0..=self.count)
            .map(|i| {
                let q = (i + self.t_near) * self.m;
                if q == 0 {
                    0.0
                } else {
                    buf[q - 1].re
                }
            })
            .collect();

        if !self.far_width.is_empty() {
            let xi: Vec<f64> = self
                .far_width
                .iter()
                .map(|w| w.powf(1.0 / self.beta) * law.sample_standard(rng))
                .collect();
            let nc = xi.len();
            let f_rows: Vec<f64> = (0..self.far_rows)
                .map(|r| self.far_a[r * nc..(r + 1) * nc].iter().zip(&xi).map(|(a, x)| a * x).sum())
                .collect();
            match &self.interp {
                None => out.iter_mut().zip(&f_rows).for_each(|(o, f)| *o += f),
                Some(mat) => {
                    for (i, o) in out.iter_mut().enumerate() {
                        let row = &mat[i * CHEB_NODES..(i + 1) * CHEB_NODES];
                        *o += row.iter().zip(&f_rows).map(|(a, f)| a * f).sum::<f64>();
                    }
                }
            }
        }
        if self.rem_scale > 0.0 {
            let r = self.rem_scale * law.sample_standard(rng);
            out.iter_mut().for_each(|o| *o += r);
        }
        out
    }
}

/// Provenance of a simulated stable path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub stream: Option<SeedStream>,
    pub m_sub: usize,
    pub bounds: EngineBounds,
    pub zero_noise: bool,
}

/// What drove a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverRecord {
    Jumps(JumpRecord),
    StableNoise(NoiseRecord),
}

/// `X_{i/n}` for `i = 0..=n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplePath {
    pub n: usize,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver_record: Option<DriverRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<DriverSpec>,
}

impl SamplePath {
    /// Bare path; `n = values.len() - 1`.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            n: values.len().saturating_sub(1),
            values,
            driver_record: None,
            kernel: None,
            driver: None,
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.n.max(1) as f64
    }

    /// CSV with columns `i,t,x` after a versioned comment line.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# levy-pv path v{CSV_VERSION} n={}\ni,t,x\n", self.n);
        for (i, x) in self.values.iter().enumerate() {
            s.push_str(&format!("{i},{:.17e},{x:.17e}\n", self.time(i)));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses [`SamplePath::to_csv`] output (or any `i,t,x` table).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("i,") {
                continue;
            }
            let x = line
                .split(',')
                .nth(2)
                .and_then(|f| f.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    line: line_no + 1,
                    message: format!("expected i,t,x, got {line:?}"),
                })?;
            values.push(x);
        }
        if values.len() < 2 {
            return Err(Error::Degenerate("path CSV holds fewer than two points".into()));
        }
        Ok(Self::from_values(values))
    }
}

fn exp_kernel_end(spec: &KernelSpec) -> f64 {
    // Point beyond which t^alpha e^{-lambda t} < 1e-18 of its peak.
    let (a, lam) = (spec.alpha, spec.decay_rate);
    let log_g = |t: f64| a * t.ln() - lam * t;
    let peak = log_g(a / lam);
    let mut t = (a / lam).max(1.0 / lam);
    while log_g(t) > peak - 41.5 {
        t *= 1.25;
    }
    t
}

/// Simulates stable-driven paths of one kernel at one resolution.
#[derive(Debug)]
pub struct StablePathSimulator {
    kernel_spec: KernelSpec,
    driver: DriverSpec,
    n: usize,
    m_sub: usize,
    engine: MaEngine,
    scale: f64,
    cumulate: bool,
}

impl StablePathSimulator {
    pub fn new(kernel: &KernelSpec, beta: f64, sigma: f64, n: usize, opts: EngineOptions) -> Result<Self> {
        kernel.validate()?;
        let driver = DriverSpec::stable(beta, sigma);
        driver.validate()?;
        if n == 0 {
            return domain("n must be at least 1");
        }
        let nf = n as f64;
        let (unit, scale, cumulate) = match (kernel.family, kernel.g0_mode) {
            (KernelFamily::PurePower, G0Mode::EqualG) => {
                if kernel.alpha >= 1.0 - 1.0 / beta {
                    return domain(format!(
                        "pure power paths need alpha < 1 - 1/beta (alpha = {}, beta = {beta})",
                        kernel.alpha
                    ));
                }
                let s = kernel.c0 * sigma * nf.powf(-kernel.alpha - 1.0 / beta);
                (UnitKernel::hk(kernel.alpha, 1)?, s, true)
            }
            (KernelFamily::PurePower, G0Mode::Zero) => {
                return domain("g = c0 t^alpha is not in L^beta; use g0_mode = equal_g");
            }
            (KernelFamily::PowerTimesExpDecay, mode) => {
                let spec = kernel.clone();
                let end = exp_kernel_end(kernel) * nf + 1.0;
                let s = sigma * nf.powf(-1.0 / beta);
                match mode {
                    G0Mode::EqualG => (
                        UnitKernel::from_fn(move |v| spec.g(v / nf) - spec.g((v - 1.0) / nf), vec![0.0, 1.0], end),
                        s,
                        true,
                    ),
                    G0Mode::Zero => (UnitKernel::from_fn(move |v| spec.g(v / nf), vec![0.0], end), s, false),
                }
            }
            (KernelFamily::TableDefined, _) => {
                return Err(Error::Capability(
                    "table-defined kernels are not supported by the stable path engine".into(),
                ))
            }
        };
        let engine = MaEngine::new(unit, beta, n, opts)?;
        Ok(Self {
            kernel_spec: kernel.clone(),
            driver,
            n,
            m_sub: opts.m_sub,
            engine,
            scale,
            cumulate,
        })
    }

    pub fn bounds(&self) -> EngineBounds {
        self.engine.bounds()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn wrap(&self, values: Vec<f64>, stream: Option<SeedStream>, zero_noise: bool) -> SamplePath {
        SamplePath {
            n: self.n,
            values,
            driver_record: Some(DriverRecord::StableNoise(NoiseRecord {
                stream,
                m_sub: self.m_sub,
                bounds: self.engine.bounds(),
                zero_noise,
            })),
            kernel: Some(self.kernel_spec.clone()),
            driver: Some(self.driver),
        }
    }

    pub fn sample(&self, stream: SeedStream) -> SamplePath {
        let y = self.engine.sample(&mut stream.rng());
        let values = if self.cumulate {
            let mut acc = 0.0;
            let mut v = Vec::with_capacity(self.n + 1);
            v.push(0.0);
            for d in &y[1..] {
                acc += self.scale * d;
                v.push(acc);
            }
            v
        } else {
            y.iter().map(|x| self.scale * x).collect()
        };
        self.wrap(values, Some(stream), false)
    }

    /// Test mode: all noise set to zero.
    pub fn sample_zero_noise(&self) -> SamplePath {
        self.wrap(vec![0.0; self.n + 1], None, true)
    }
}

/// One stable-driven path.
pub fn simulate_stable_driven_path(
    kernel: &KernelSpec,
    beta: f64,
    sigma: f64,
    n: usize,
    opts: EngineOptions,
    stream: SeedStream,
) -> Result<SamplePath> {
    Ok(StablePathSimulator::new(kernel, beta, sigma, n, opts)?.sample(stream))
}

/// Linear fractional stable motion `int ((t-s)_+^alpha - (-s)_+^alpha) dL_s`, `0 < alpha < 1 - 1/beta`.
pub fn simulate_tangent_lfsm(alpha: f64, beta: f64, n: usize, opts: EngineOptions, stream: SeedStream) -> Result<SamplePath> {
    if !(alpha > 0.0 && alpha < 1.0 - 1.0 / beta) {
        return domain(format!("tangent process needs 0 < alpha < 1 - 1/beta (alpha = {alpha}, beta = {beta})"));
    }
    simulate_stable_driven_path(&KernelSpec::pure_power(alpha, 1.0), beta, 1.0, n, opts, stream)
}

/// Jumps of a compound Poisson driver on `[-t_past, 1]`.
pub fn sample_cp_record(driver: &DriverSpec, t_past: f64, stream: SeedStream) -> Result<JumpRecord> {
    driver.validate()?;
    if driver.kind != DriverKind::CompoundPoisson {
        return domain("sample_cp_record needs a compound Poisson driver");
    }
    if !(t_past > 0.0) {
        return domain("t_past must be positive");
    }
    let law = driver.jump_law.expect("validated");
    sample_jumps(driver.lambda, &law, (-t_past, 1.0), stream)
}

/// Exact path `X_{i/n} = sum_m (g(i/n - T_m) - g0(-T_m)) dL_m`.
pub fn simulate_cp_driven_path(kernel: &KernelSpec, jumps: &JumpRecord, n: usize) -> Result<SamplePath> {
    kernel.validate()?;
    if n == 0 {
        return domain("n must be at least 1");
    }
    let nf = n as f64;
    let mut values = vec![0.0; n + 1];
    for (t, s) in jumps.iter() {
        let base = kernel.g0(-t);
        let first = if t < 0.0 { 0 } else { ((t * nf).floor() as usize).min(n + 1) };
        for (i, x) in values.iter_mut().enumerate().skip(first) {
            *x += s * (kernel.g(i as f64 / nf - t) - base);
        }
    }
    Ok(SamplePath {
        n,
        values,
        driver_record: Some(DriverRecord::Jumps(jumps.clone())),
        kernel: Some(kernel.clone()),
        driver: None,
    })
}

/// Tail bound `|c0| K int_{T}^inf t^{(alpha-k)p}` style estimate for the
/// contribution of jumps older than `t_past` to order-`k` increments,
/// per unit jump size and unit intensity.
pub fn cp_past_tail_bound(kernel: &KernelSpec, k: usize, t_past: f64) -> Result<f64> {
    kernel.validate()?;
    Ok(match kernel.family {
        KernelFamily::PurePower => {
            let e = kernel.alpha - k as f64;
            if e >= -1.0 {
                f64::INFINITY
            } else {
                (kernel.c0 * crate::kernel::falling_factorial(kernel.alpha, k)).abs() * t_past.powf(e + 1.0) / (-e - 1.0)
            }
        }
        _ => Integrator::new(1e-300, 1e-6)
            .integrate(|t| kernel.g_deriv(t, k).unwrap_or(0.0).abs(), t_past, t_past + 200.0 + 50.0 / kernel.decay_rate.max(1e-3))
            .value,
    })
}

// Bernoulli coefficients B_{2j} / (2j)!.
const EM_COEF: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30_240.0,
    -1.0 / 1_209_600.0,
    1.0 / 47_900_160.0,
    -691.0 / 1_307_674_368_000.0,
    1.0 / 74_724_249_600.0,
];

/// Hurwitz zeta `sum_{l>=0} (a+l)^{-s}` for `s > 1` and `a >= 10`, with an error bound.
fn hurwitz_zeta_large(s: f64, a: f64) -> (f64, f64) {
    let mut v = a.powf(1.0 - s) / (s - 1.0) + 0.5 * a.powf(-s);
    let mut rising = s;
    let mut pw = a.powf(-s - 1.0);
    let mut last = 0.0;
    for (j, c) in EM_COEF.iter().enumerate() {
        if j > 0 {
            rising *= (s + 2.0 * j as f64 - 1.0) * (s + 2.0 * j as f64);
            pw /= a * a;
        }
        last = c * rising * pw;
        v += last;
    }
    (v, last.abs())
}

const LIMIT_DIRECT_TERMS: usize = 100;

/// `V(u) = sum_{l>=0} |h_k(l+u)|^p` with an absolute error bound.
pub fn limit_v_sum(hk: &Hk, p: f64, u: f64) -> Result<(f64, f64)> {
    let (alpha, k) = (hk.alpha(), hk.order());
    if !(alpha < k as f64 - 1.0 / p) {
        return domain(format!("the series diverges unless alpha < k - 1/p (alpha = {alpha}, k = {k}, p = {p})"));
    }
    if !(0.0..=1.0).contains(&u) {
        return domain("mark u must lie in [0,1]");
    }
    let direct: f64 = (0..LIMIT_DIRECT_TERMS).map(|l| hk.eval(l as f64 + u).abs().powf(p)).sum();
    let sk = hk.series_coefficient(k);
    if sk == 0.0 {
        return Ok((direct, 1e-16 * direct));
    }
    // |h_k(x)|^p = |s_k|^p x^{(alpha-k)p} (1 + sum a_j x^{-j})^p, expanded by Miller's recurrence.
    let terms = 30;
    let a: Vec<f64> = (0..=terms)
        .map(|j| if j == 0 { 1.0 } else { hk.series_coefficient(k + j) / sk })
        .collect();
    let mut b = vec![0.0; terms + 1];
    b[0] = 1.0;
    for j in 1..=terms {
        let mut acc = 0.0;
        for i in 1..=j {
            acc += ((p + 1.0) * i as f64 - j as f64) * a[i] * b[j - i];
        }
        b[j] = acc / j as f64;
    }
    let x0 = LIMIT_DIRECT_TERMS as f64 + u;
    let s0 = (k as f64 - alpha) * p;
    let mut tail = 0.0;
    let mut err = 0.0;
    for (j, bj) in b.iter().enumerate() {
        let (z, e) = hurwitz_zeta_large(s0 + j as f64, x0);
        let term = bj * z;
        tail += term;
        err += (bj * e).abs();
        if j > 3 && term.abs() < 1e-18 * tail.abs() {
            err += term.abs();
            break;
        }
    }
    let c = sk.abs().powf(p);
    Ok((direct + c * tail, c * err + 1e-15 * direct))
}

/// Per-jump ingredients of the limit variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitComponent {
    pub time: f64,
    /// `|dL_m|^p`.
    pub size_pow: f64,
    /// `V_m = sum_l |h_k(l + U_m)|^p`.
    pub v: f64,
    pub u: f64,
}

/// `Z = c0^p sum_m |dL_m|^p V_m` over the jumps in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSample {
    pub value: f64,
    pub components: Vec<LimitComponent>,
    pub truncation_error_bound: f64,
}

/// Marks `U_m = ceil(n T_m) - n T_m` pairing a path at resolution `n` with its limit.
pub fn coupled_marks(jumps: &JumpRecord, n: usize) -> Vec<f64> {
    let nf = n as f64;
    jumps
        .iter()
        .filter(|(t, _)| *t > 0.0 && *t <= 1.0)
        .map(|(t, _)| (t * nf).ceil() - t * nf)
        .collect()
}

/// Limit variable with given marks, one per jump in `(0, 1]`.
pub fn limit_z_with_marks(
    jumps: &JumpRecord,
    marks: &[f64],
    alpha: f64,
    p: f64,
    k: usize,
    c0: f64,
    tol: f64,
) -> Result<LimitSample> {
    if !(p > 0.0) {
        return domain("p must be positive");
    }
    if !(alpha < k as f64 - 1.0 / p) {
        return domain(format!(
            "limit variable requires alpha < k - 1/p (alpha = {alpha}, k = {k}, p = {p})"
        ));
    }
    let hk = Hk::new(alpha, k)?;
    let inside: Vec<(f64, f64)> = jumps.iter().filter(|(t, _)| *t > 0.0 && *t <= 1.0).collect();
    if inside.len() != marks.len() {
        return domain(format!("{} jumps in (0,1] but {} marks", inside.len(), marks.len()));
    }
    let cp = c0.abs().powf(p);
    let mut value = 0.0;
    let mut err = 0.0;
    let mut components = Vec::with_capacity(inside.len());
    for ((t, s), &u) in inside.iter().zip(marks) {
        let (v, e) = limit_v_sum(&hk, p, u)?;
        let sp = s.abs().powf(p);
        value += cp * sp * v;
        err += cp * sp * e;
        components.push(LimitComponent { time: *t, size_pow: sp, v, u });
    }
    if err > tol * value.abs().max(1.0) {
        return Err(Error::ToleranceNotMet(format!("limit variable error {err:.3e} exceeds {tol:.3e}")));
    }
    Ok(LimitSample {
        value,
        components,
        truncation_error_bound: err,
    })
}

/// Limit variable with i.i.d. uniform marks drawn from `stream`.
pub fn simulate_limit_z(
    jumps: &JumpRecord,
    alpha: f64,
    p: f64,
    k: usize,
    c0: f64,
    tol: f64,
    stream: SeedStream,
) -> Result<LimitSample> {
    let count = jumps.iter().filter(|(t, _)| *t > 0.0 && *t <= 1.0).count();
    let marks = sample_marks(count, &mut stream.rng());
    limit_z_with_marks(jumps, &marks, alpha, p, k, c0, tol)
}

/// Stationary `V_t = int h_k(t - s) dL_s` at `t = 1..=count`.
#[derive(Debug)]
pub struct VProcessSimulator {
    engine: MaEngine,
}

impl VProcessSimulator {
    pub fn new(alpha: f64, beta: f64, k: usize, count: usize, opts: EngineOptions) -> Result<Self> {
        if !(alpha < k as f64 - 1.0 / beta) {
            return domain(format!("h_k is in L^beta only when alpha < k - 1/beta (alpha = {alpha}, k = {k})"));
        }
        if count == 0 {
            return domain("count must be at least 1");
        }
        Ok(Self {
            engine: MaEngine::new(UnitKernel::hk(alpha, k)?, beta, count, opts)?,
        })
    }

    pub fn bounds(&self) -> EngineBounds {
        self.engine.bounds()
    }

    pub fn sample(&self, stream: SeedStream) -> Vec<f64> {
        let mut y = self.engine.sample(&mut stream.rng());
        y.remove(0);
        y
    }
}

pub fn simulate_v_process(
    alpha: f64,
    beta: f64,
    k: usize,
    count: usize,
    opts: EngineOptions,
    stream: SeedStream,
) -> Result<Vec<f64>> {
    if count == 0 {
        if !(alpha < k as f64 - 1.0 / beta) {
            return domain(format!("h_k is in L^beta only when alpha < k - 1/beta (alpha = {alpha}, k = {k})"));
        }
        return Ok(Vec::new());
    }
    Ok(VProcessSimulator::new(alpha, beta, k, count, opts)?.sample(stream))
}

/// `int_0^1 |F_u|^p du` with `F_u = int g^{(k)}(u - s) dL_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FIntegral {
    pub value: f64,
    /// Same functional on the grid of half the resolution.
    pub coarse_value: f64,
    /// `|value - coarse_value| / |value|`.
    pub refinement_rel_diff: f64,
}

fn f_integral_from_grid(f: &[f64], p: f64) -> FIntegral {
    // f holds F at u = j/N, j = 1..=N.
    let n = f.len();
    let value = f.iter().map(|x| x.abs().powf(p)).sum::<f64>() / n as f64;
    let coarse: Vec<f64> = f.iter().skip(1).step_by(2).copied().collect();
    let coarse_value = coarse.iter().map(|x| x.abs().powf(p)).sum::<f64>() / coarse.len().max(1) as f64;
    FIntegral {
        value,
        coarse_value,
        refinement_rel_diff: if value == 0.0 { 0.0 } else { (value - coarse_value).abs() / value },
    }
}

fn check_smooth_condition(alpha: f64, beta: f64, p: f64, k: usize) -> Result<()> {
    if !(alpha > k as f64 - 1.0 / beta.max(p)) {
        return domain(format!(
            "the F functional needs alpha > k - 1/max(beta, p) (alpha = {alpha}, beta = {beta}, p = {p}, k = {k})"
        ));
    }
    Ok(())
}

/// F integral for a compound Poisson record, sharing the jumps of a path.
pub fn simulate_f_integral_cp(
    kernel: &KernelSpec,
    k: usize,
    p: f64,
    beta: f64,
    jumps: &JumpRecord,
    fine_n: usize,
) -> Result<FIntegral> {
    kernel.validate()?;
    check_smooth_condition(kernel.alpha, beta, p, k)?;
    if fine_n < 2 {
        return domain("fine_n must be at least 2");
    }
    kernel.g_deriv(1.0, k)?;
    // Midpoint rule: F at u = (j + 1/2)/N.
    let midpoint_values = |grid: usize| -> Result<Vec<f64>> {
        let nf = grid as f64;
        let mut f = vec![0.0; grid];
        for (t, s) in jumps.iter() {
            let first = if t < 0.0 { 0 } else { (t * nf).floor() as usize };
            for (j, x) in f.iter_mut().enumerate().skip(first) {
                let lag = (j as f64 + 0.5) / nf - t;
                if lag > 0.0 {
                    *x += s * kernel.g_deriv(lag, k)?;
                }
            }
        }
        Ok(f)
    };
    let mean_pow = |f: &[f64]| f.iter().map(|x| x.abs().powf(p)).sum::<f64>() / f.len() as f64;
    let value = mean_pow(&midpoint_values(fine_n)?);
    let coarse_value = mean_pow(&midpoint_values(fine_n / 2)?);
    Ok(FIntegral {
        value,
        coarse_value,
        refinement_rel_diff: if value == 0.0 { 0.0 } else { (value - coarse_value).abs() / value },
    })
}

/// F integral for a stable driver, simulated on its own noise.
pub fn simulate_f_integral_stable(
    kernel: &KernelSpec,
    k: usize,
    p: f64,
    beta: f64,
    sigma: f64,
    fine_n: usize,
    opts: EngineOptions,
    stream: SeedStream,
) -> Result<FIntegral> {
    kernel.validate()?;
    check_smooth_condition(kernel.alpha, beta, p, k)?;
    if kernel.family != KernelFamily::PowerTimesExpDecay {
        return Err(Error::Capability(
            "stable F integral needs an integrable kernel derivative (power_times_exp_decay)".into(),
        ));
    }
    if (kernel.alpha - k as f64) * beta <= -1.0 {
        return domain("g^(k) is not locally in L^beta at 0");
    }
    let nf = fine_n as f64;
    let spec = kernel.clone();
    let end = exp_kernel_end(kernel) * nf + 1.0;
    let unit = UnitKernel::from_fn(move |v| spec.g_deriv(v / nf, k).unwrap_or(0.0), vec![0.0], end);
    let engine = MaEngine::new(unit, beta, fine_n, opts)?;
    let y = engine.sample(&mut stream.rng());
    let scale = sigma * nf.powf(-1.0 / beta);
    let f: Vec<f64> = y[1..].iter().map(|x| scale * x).collect();
    Ok(f_integral_from_grid(&f, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::hk_beta_norm;
    use crate::stable_rng::JumpLaw;
    use proptest::prelude::*;

    fn opts() -> EngineOptions {
        EngineOptions::default()
    }

    #[test]
    fn single_jump_path_value() {
        let k = KernelSpec::pure_power(0.5, 1.0);
        let jumps = JumpRecord::new((-1.0, 1.0), vec![(0.3, 1.0)]).unwrap();
        let path = simulate_cp_driven_path(&k, &jumps, 10).unwrap();
        assert!((path.values[5] - 0.2f64.sqrt()).abs() < 1e-12);
        assert!((path.values[5] - 0.4472).abs() < 1e-4);
        assert_eq!(path.values[3], 0.0);
        assert_eq!(path.values[0], 0.0);
    }

    #[test]
    fn two_jump_path_value() {
        let k = KernelSpec::pure_power(0.5, 1.0);
        let jumps = JumpRecord::new((-1.0, 1.0), vec![(0.3, 1.0), (0.7, -2.0)]).unwrap();
        let path = simulate_cp_driven_path(&k, &jumps, 10).unwrap();
        let hand = 0.7f64.sqrt() - 2.0 * 0.3f64.sqrt();
        assert!((path.values[10] - hand).abs() < 1e-12);
        assert!((path.values[10] - (-0.258786)).abs() < 1e-6, "{}", path.values[10]);
        let empty = simulate_cp_driven_path(&k, &JumpRecord::empty((-1.0, 1.0)), 10).unwrap();
        assert!(empty.values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn cp_path_zero_mode_is_moving_average() {
        let k = KernelSpec::power_exp(1.5, 1.0, 1.0).with_g0(G0Mode::Zero);
        let jumps = JumpRecord::new((-5.0, 1.0), vec![(-0.5, 1.0)]).unwrap();
        let path = simulate_cp_driven_path(&k, &jumps, 4).unwrap();
        assert!((path.values[0] - k.g(0.5)).abs() < 1e-15);
        assert!((path.values[4] - k.g(1.5)).abs() < 1e-15);
    }

    #[test]
    fn limit_variable_single_jump_forced_mark() {
        let jumps = JumpRecord::new((-1.0, 1.0), vec![(0.4, 2.0)]).unwrap();
        let z = limit_z_with_marks(&jumps, &[0.0], 0.3, 2.0, 1, 1.0, 1e-10).unwrap();
        // Independent oracle: direct sum plus a midpoint-rule tail.
        let f = |l: f64| (l.powf(0.3) - (l - 1.0).powf(0.3)).powi(2);
        let big = 200_000;
        let mut s: f64 = (1..=big).map(|l| f(l as f64)).sum();
        let a = big as f64 + 0.5;
        // int_a^inf f ~ 0.09 x^{-1.4} (1 + 0.7/x) with curvature correction of the midpoint rule.
        s += 0.09 * a.powf(-0.4) / 0.4 + 0.09 * 0.7 * a.powf(-1.4) / 1.4 - 0.09 * 1.4 / 24.0 * a.powf(-2.4);
        assert!((z.value - 4.0 * s).abs() < 1e-8 * z.value, "{} vs {}", z.value, 4.0 * s);
        assert_eq!(z.components.len(), 1);
        assert!((z.components[0].size_pow - 4.0).abs() < 1e-15);
        assert!(z.truncation_error_bound < 1e-10);
    }

    #[test]
    fn limit_variable_domain() {
        let jumps = JumpRecord::new((0.0, 1.0), vec![(0.5, 1.0)]).unwrap();
        let e = limit_z_with_marks(&jumps, &[0.5], 0.6, 2.0, 1, 1.0, 1e-8).unwrap_err();
        assert!(matches!(e, Error::Domain(_)));
    }

    #[test]
    fn limit_v_sum_matches_long_direct_sum() {
        let hk = Hk::new(0.4, 2).unwrap();
        for u in [0.0, 0.25, 0.9] {
            let (v, _) = limit_v_sum(&hk, 1.2, u).unwrap();
            let direct: f64 = (0..2_000_000).map(|l| hk.eval(l as f64 + u).abs().powf(1.2)).sum();
            // remaining tail ~ 0.24^1.2 int x^{-1.92}
            let x = 2_000_000.0 + u;
            let tail = 0.24f64.powf(1.2) * x.powf(-0.92) / 0.92;
            assert!((v - direct - tail).abs() < 1e-9, "u={u}: {v} vs {}", direct + tail);
        }
    }

    #[test]
    fn coupled_marks_are_fractional_offsets() {
        let jumps = JumpRecord::new((-2.0, 1.0), vec![(-1.0, 1.0), (0.26, 1.0), (0.5, 1.0)]).unwrap();
        let m = coupled_marks(&jumps, 10);
        assert_eq!(m.len(), 2);
        assert!((m[0] - 0.4).abs() < 1e-12);
        assert!(m[1].abs() < 1e-12);
    }

    #[test]
    fn zero_noise_gives_zero_path() {
        let sim = StablePathSimulator::new(&KernelSpec::pure_power(0.25, 1.0), 1.5, 1.0, 64, opts()).unwrap();
        let p = sim.sample_zero_noise();
        assert_eq!(p.values.len(), 65);
        assert!(p.values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn stable_path_is_reproducible_and_starts_at_zero() {
        let k = KernelSpec::pure_power(0.25, 1.0);
        let a = simulate_stable_driven_path(&k, 1.5, 1.0, 128, opts(), SeedStream::new(3, 7)).unwrap();
        let b = simulate_stable_driven_path(&k, 1.5, 1.0, 128, opts(), SeedStream::new(3, 7)).unwrap();
        let c = simulate_stable_driven_path(&k, 1.5, 1.0, 128, opts(), SeedStream::new(3, 8)).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
        assert_eq!(a.values[0], 0.0);
        assert!(a.values.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn engine_marginal_scale_matches_norm() {
        let sim = StablePathSimulator::new(&KernelSpec::pure_power(0.25, 1.0), 1.5, 1.0, 256, opts()).unwrap();
        let b = sim.bounds();
        let norm = hk_beta_norm(0.25, 1.5, 1, 1e-10).unwrap().value.powf(1.0 / 1.5);
        assert!((b.marginal_scale - norm).abs() < 1e-3 * norm, "{} vs {norm}", b.marginal_scale);
        assert!(b.tail_bound <= 1e-3 && b.far_bound <= 1e-3);
    }

    #[test]
    fn tail_bound_decreases_with_truncation() {
        let k = KernelSpec::pure_power(0.25, 1.0);
        let mut last = f64::INFINITY;
        for t in [1e6, 1e7, 1e8, 1e9] {
            let o = EngineOptions { t_trunc: Some(t), tol: 1.0, ..opts() };
            let b = StablePathSimulator::new(&k, 1.5, 1.0, 64, o).unwrap().bounds();
            assert!(b.tail_bound < last, "T={t}: {} !< {last}", b.tail_bound);
            last = b.tail_bound;
        }
    }

    #[test]
    fn short_truncation_is_refused_with_required_horizon() {
        let k = KernelSpec::pure_power(0.25, 1.0);
        let o = EngineOptions { t_trunc: Some(1e3), ..opts() };
        match StablePathSimulator::new(&k, 1.5, 1.0, 64, o).unwrap_err() {
            Error::TruncationTooShort { bound, tolerance, required } => {
                assert!(bound > tolerance);
                assert!(required > 1e3);
                let o2 = EngineOptions { t_trunc: Some(required * 1.01), ..opts() };
                assert!(StablePathSimulator::new(&k, 1.5, 1.0, 64, o2).is_ok());
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn undefined_lfsm_is_rejected() {
        assert!(matches!(
            simulate_tangent_lfsm(0.4, 1.5, 32, opts(), SeedStream::new(1, 1)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            StablePathSimulator::new(&KernelSpec::pure_power(0.2, 1.0).with_g0(G0Mode::Zero), 1.5, 1.0, 32, opts()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn gaussian_increment_variance() {
        // beta = 2: L_1 has variance 2 sigma^2.
        let (alpha, n, reps) = (0.3, 16usize, 10_000u64);
        let sim = StablePathSimulator::new(&KernelSpec::pure_power(alpha, 1.0), 2.0, 1.0, n, opts()).unwrap();
        let scale = (n as f64).powf(alpha + 0.5);
        let sum2: f64 = (0..reps)
            .map(|r| (scale * sim.sample(SeedStream::new(11, r)).values[1]).powi(2))
            .sum();
        let norm_sq = hk_beta_norm(alpha, 2.0, 1, 1e-10).unwrap().value;
        let got = sum2 / reps as f64;
        let expected = 2.0 * norm_sq;
        assert!((got / expected - 1.0).abs() < 0.03, "{got} vs {expected}");
    }

    #[test]
    fn stable_increment_characteristic_function() {
        let (alpha, beta, n) = (0.25, 1.5, 256usize);
        let sim = StablePathSimulator::new(&KernelSpec::pure_power(alpha, 1.0), beta, 1.0, n, opts()).unwrap();
        let scale = (n as f64).powf(alpha + 1.0 / beta);
        let mut acc = 0.0;
        let mut cnt = 0.0;
        for r in 0..10_000u64 {
            let p = sim.sample(SeedStream::new(12, r));
            for i in [1, 65, 129, 193] {
                acc += (scale * (p.values[i] - p.values[i - 1])).cos();
                cnt += 1.0;
            }
        }
        let th = (-hk_beta_norm(alpha, beta, 1, 1e-10).unwrap().value).exp();
        assert!((acc / cnt - th).abs() < 0.02, "{} vs {th}", acc / cnt);
    }

    #[test]
    fn tangent_gaussian_variance_ratio() {
        let (alpha, n) = (0.3, 32usize);
        let sim = StablePathSimulator::new(&KernelSpec::pure_power(alpha, 1.0), 2.0, 1.0, n, opts()).unwrap();
        let (mut v1, mut v2) = (0.0, 0.0);
        for r in 0..10_000u64 {
            let p = sim.sample(SeedStream::new(13, r));
            v1 += p.values[1] * p.values[1];
            v2 += p.values[2] * p.values[2];
        }
        let h = alpha + 0.5;
        assert!((v2 / v1 / 2f64.powf(2.0 * h) - 1.0).abs() < 0.03, "{}", v2 / v1);
        let z = simulate_tangent_lfsm(alpha, 2.0, 8, opts(), SeedStream::new(1, 1)).unwrap();
        assert_eq!(z.values.len(), 9);
    }

    #[test]
    fn v_process_empty_and_domain() {
        assert!(simulate_v_process(0.2, 1.8, 2, 0, opts(), SeedStream::new(1, 1)).unwrap().is_empty());
        assert!(matches!(
            simulate_v_process(0.5, 1.5, 1, 4, opts(), SeedStream::new(1, 1)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn v_process_characteristic_functions() {
        let (alpha, beta, k) = (0.2, 1.8, 2);
        let sim = VProcessSimulator::new(alpha, beta, k, 64, opts()).unwrap();
        let norm_pow = hk_beta_norm(alpha, beta, k, 1e-10).unwrap().value;
        let (mut marg, mut pair, mut cm, mut cp) = (0.0, 0.0, 0.0, 0.0);
        for r in 0..3000u64 {
            let v = sim.sample(SeedStream::new(5, r));
            for x in &v {
                marg += x.cos();
                cm += 1.0;
            }
            for w in v.windows(2) {
                pair += (w[0] + w[1]).cos();
                cp += 1.0;
            }
        }
        let th = (-norm_pow).exp();
        assert!((marg / cm - th).abs() < 0.02, "{} vs {th}", marg / cm);
        let h = Hk::new(alpha, k).unwrap();
        let mut breaks: Vec<f64> = (-1..=40).map(|j| j as f64).collect();
        breaks.extend((1..=80).map(|j| 40.0 * 1.2f64.powi(j)));
        let q = Integrator::new(1e-12, 1e-10)
            .integrate_with_breaks(|x| (h.eval(x) + h.eval(x + 1.0)).abs().powf(beta), &breaks)
            .value;
        let th2 = (-q).exp();
        assert!((pair / cp - th2).abs() < 0.03, "{} vs {th2}", pair / cp);
    }

    #[test]
    fn f_integral_single_jump_and_zero_driver() {
        let kernel = KernelSpec::power_exp(1.5, 1.0, 1.0);
        let one = JumpRecord::new((-1.0, 1.0), vec![(0.0, 1.0)]).unwrap();
        let f = simulate_f_integral_cp(&kernel, 1, 2.0, 1.8, &one, 1 << 16).unwrap();
        let exact = Integrator::new(1e-14, 1e-12)
            .integrate(|u| kernel.g_deriv(u, 1).unwrap().powi(2), 0.0, 1.0)
            .value;
        assert!((f.value - exact).abs() < 1e-3 * exact, "{} vs {exact}", f.value);
        let zero = simulate_f_integral_cp(&kernel, 1, 2.0, 1.8, &JumpRecord::empty((-1.0, 1.0)), 256).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(matches!(
            simulate_f_integral_cp(&KernelSpec::pure_power(0.3, 1.0), 1, 2.0, 1.8, &one, 64),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn f_integral_coupled_gap_shrinks() {
        let kernel = KernelSpec::power_exp(1.5, 1.0, 1.0);
        let driver = DriverSpec::compound_poisson(1.8, 5.0, "pareto:1.8".parse::<JumpLaw>().unwrap());
        let jumps = sample_cp_record(&driver, DEFAULT_T_PAST, SeedStream::new(2, 0)).unwrap();
        let f = simulate_f_integral_cp(&kernel, 1, 2.0, 1.8, &jumps, 1 << 15).unwrap();
        let mut last = f64::INFINITY;
        for n in [1usize << 8, 1 << 10, 1 << 12] {
            let path = simulate_cp_driven_path(&kernel, &jumps, n).unwrap();
            let pv = crate::statistics::power_variation(&path, 2.0, 1).unwrap();
            let gap = (pv.raw * (n as f64).powf(-1.0 + 2.0) - f.value).abs();
            assert!(gap < last, "n={n}: gap {gap} !< {last}");
            last = gap;
        }
        assert!(last < 0.01 * f.value);
    }

    #[test]
    fn f_integral_stable_is_finite() {
        let kernel = KernelSpec::power_exp(1.5, 1.0, 1.0).with_g0(G0Mode::Zero);
        let f = simulate_f_integral_stable(&kernel, 1, 1.5, 1.8, 1.0, 256, opts(), SeedStream::new(4, 4)).unwrap();
        assert!(f.value.is_finite() && f.value > 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let p = SamplePath::from_values(vec![0.0, 1.5, -2.25, 3.125]);
        let text = p.to_csv();
        assert!(text.starts_with("# levy-pv path v1"));
        let q = SamplePath::from_csv(&text).unwrap();
        assert_eq!(q.values, p.values);
        assert_eq!(q.n, 3);
    }

    #[test]
    fn hurwitz_zeta_matches_riemann_zeta() {
        // zeta(2, 10) = pi^2/6 - sum_{l=1}^{9} l^{-2}
        let exact = PI * PI / 6.0 - (1..10).map(|l| 1.0 / (l * l) as f64).sum::<f64>();
        let (z, e) = hurwitz_zeta_large(2.0, 10.0);
        assert!((z - exact).abs() < 1e-14, "{z} vs {exact}");
        assert!(e < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn cp_path_linear_in_jump_sizes(a in -3.0f64..3.0, b in -3.0f64..3.0, t in 0.01f64..0.99) {
            let k = KernelSpec::pure_power(0.7, 1.3);
            let j1 = JumpRecord::new((-1.0, 1.0), vec![(-0.4, a), (t, b)]).unwrap();
            let ja = JumpRecord::new((-1.0, 1.0), vec![(-0.4, a)]).unwrap();
            let jb = JumpRecord::new((-1.0, 1.0), vec![(t, b)]).unwrap();
            let p = simulate_cp_driven_path(&k, &j1, 32).unwrap();
            let pa = simulate_cp_driven_path(&k, &ja, 32).unwrap();
            let pb = simulate_cp_driven_path(&k, &jb, 32).unwrap();
            for i in 0..=32 {
                prop_assert!((p.values[i] - pa.values[i] - pb.values[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn limit_variable_homogeneous_in_size(s in 0.1f64..5.0, u in 0.0f64..1.0) {
            let j1 = JumpRecord::new((0.0, 1.0), vec![(0.5, 1.0)]).unwrap();
            let js = JumpRecord::new((0.0, 1.0), vec![(0.5, s)]).unwrap();
            let z1 = limit_z_with_marks(&j1, &[u], 0.3, 2.0, 1, 1.0, 1e-8).unwrap().value;
            let zs = limit_z_with_marks(&js, &[u], 0.3, 2.0, 1, 1.0, 1e-8).unwrap().value;
            prop_assert!((zs - s * s * z1).abs() < 1e-10 * zs.max(1.0));
        }
    }
}
