//! Replicated Monte Carlo experiments for the five limit regimes.
//!
//! Every replication owns a [`SeedStream`] derived from the master seed and
//! its index, and results are merged in replication order, so a report does
//! not depend on the number of worker threads. Pass flags refer to named
//! tolerances; missing names fall back to [`default_tolerances`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma;

use crate::constants::{compute_limit_constants, theta_i, ConstantParams, ConstantsCache, LimitConstants};
use crate::error::{Error, Result};
use crate::kernel::{G0Mode, Hk, KernelFamily, KernelSpec};
use crate::quad::Integrator;
use crate::simulate::{
    coupled_marks, limit_z_with_marks, sample_cp_record, simulate_cp_driven_path, simulate_f_integral_cp,
    simulate_limit_z, EngineOptions, StablePathSimulator, VProcessSimulator, DEFAULT_T_PAST,
};
use crate::stable_rng::{DriverKind, DriverSpec, SeedStream, SkewedStable};
use crate::statistics::{
    check_regime, exponent_ordering_holds, ols, power_variation, power_variation_of, ratio_estimator,
    scaling_exponent, second_order_statistic, Regime, StatConfig,
};

/// Version of the report layout.
pub const REPORT_VERSION: u32 = 1;

/// Calibration defaults of every named tolerance.
///
/// KS thresholds and gap limits are calibration values from pilot runs, not
/// consequences of the limit theorems.
pub fn default_tolerances() -> BTreeMap<String, f64> {
    [
        ("jump_coupled_gap", 0.10),
        ("jump_ks", 0.08),
        ("ergodic_bias", 0.05),
        ("ergodic_mad_inversions", 1.0),
        ("rate_slope", 0.05),
        ("smooth_rel_error", 0.05),
        ("clt_ks", 0.10),
        ("clt_mean_abs", 0.25),
        ("clt_var_low", 0.8),
        ("clt_var_high", 1.2),
        ("theta0_rel", 0.05),
        ("theta1_rel", 0.10),
        ("tail_index", 0.2),
        ("tail_asymmetry", 0.5),
        ("ratio_band", 0.05),
        ("ratio_coverage", 0.9),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Resolution grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Strictly increasing powers of two.
    pub n: Vec<usize>,
    /// Resolution of distributional checks; the largest `n` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_n: Option<usize>,
    /// Grid of the F-integral oracle; `4 max(n)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_n: Option<usize>,
}

fn default_t_past() -> f64 {
    DEFAULT_T_PAST
}
fn default_m_sub() -> usize {
    EngineOptions::default().m_sub
}
fn default_engine_tol() -> f64 {
    EngineOptions::default().tol
}
fn default_constants_tol() -> f64 {
    1e-2
}
fn default_i_max() -> usize {
    256
}
fn default_limit_tol() -> f64 {
    1e-6
}
fn default_tail_fractions() -> (f64, f64) {
    (0.01, 0.10)
}
fn default_v_count() -> usize {
    1024
}

/// Replication, engine and constant settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub replications: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Past horizon of compound Poisson records.
    #[serde(default = "default_t_past")]
    pub t_past: f64,
    #[serde(default = "default_m_sub")]
    pub m_sub: usize,
    #[serde(default = "default_engine_tol")]
    pub engine_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_trunc: Option<f64>,
    /// Relative tolerance of the limit constants.
    #[serde(default = "default_constants_tol")]
    pub constants_tol: f64,
    /// Largest lag of the eta^2 series.
    #[serde(default = "default_i_max")]
    pub i_max: usize,
    /// Relative truncation tolerance of the limit variable Z.
    #[serde(default = "default_limit_tol")]
    pub limit_tol: f64,
    /// Cache directory for limit constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants_cache: Option<PathBuf>,
    /// Pairs for the Monte Carlo check of theta(0), theta(1); 0 skips it.
    #[serde(default)]
    pub theta_pairs: usize,
    /// Length of each V-process path in the theta check.
    #[serde(default = "default_v_count")]
    pub v_count: usize,
    /// Upper-tail rank fractions used by the tail-index regression.
    #[serde(default = "default_tail_fractions")]
    pub tail_fractions: (f64, f64),
}

impl McConfig {
    pub fn new(replications: usize, seed: u64) -> Self {
        Self {
            replications,
            seed,
            output_dir: None,
            t_past: DEFAULT_T_PAST,
            m_sub: default_m_sub(),
            engine_tol: default_engine_tol(),
            t_trunc: None,
            constants_tol: default_constants_tol(),
            i_max: default_i_max(),
            limit_tol: default_limit_tol(),
            constants_cache: None,
            theta_pairs: 0,
            v_count: default_v_count(),
            tail_fractions: default_tail_fractions(),
        }
    }

    pub fn engine(&self) -> EngineOptions {
        EngineOptions {
            m_sub: self.m_sub,
            t_trunc: self.t_trunc,
            tol: self.engine_tol,
        }
    }
}

/// Full description of one experiment; the regime lives in `stat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSpec,
    pub driver: DriverSpec,
    pub stat: StatConfig,
    pub grid: GridConfig,
    pub mc: McConfig,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Domain(m) | Error::Capability(m) => Error::Config(m),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn regime(&self) -> Regime {
        self.stat.regime
    }

    pub fn n_grid(&self) -> &[usize] {
        &self.grid.n
    }

    pub fn alpha(&self) -> f64 {
        self.kernel.alpha
    }

    pub fn beta(&self) -> f64 {
        self.driver.beta
    }

    pub fn max_n(&self) -> usize {
        *self.grid.n.last().unwrap_or(&0)
    }

    pub fn ks_n(&self) -> usize {
        self.grid.ks_n.unwrap_or_else(|| self.max_n())
    }

    /// Named tolerance, falling back to the calibration default.
    pub fn tolerance(&self, name: &str) -> Result<f64> {
        self.tolerances
            .get(name)
            .copied()
            .or_else(|| default_tolerances().get(name).copied())
            .ok_or_else(|| Error::Config(format!("unknown tolerance '{name}'")))
    }

    /// Checks the regime inequalities, the grid and the driver and kernel choice.
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate().map_err(as_config)?;
        self.driver.validate().map_err(as_config)?;
        check_regime(self.stat.regime, self.alpha(), self.beta(), self.stat.p, self.stat.k).map_err(as_config)?;
        let n = &self.grid.n;
        if n.is_empty() {
            return config_err("grid.n must not be empty");
        }
        for &v in n {
            if v < 4 || !v.is_power_of_two() {
                return config_err(format!("grid.n entries must be powers of two >= 4, got {v}"));
            }
        }
        if n.windows(2).any(|w| w[0] >= w[1]) {
            return config_err("grid.n must be strictly increasing");
        }
        if let Some(ks) = self.grid.ks_n {
            if !n.contains(&ks) {
                return config_err(format!("grid.ks_n = {ks} is not in grid.n"));
            }
        }
        if let Some(f) = self.grid.fine_n {
            if f < 2 * self.max_n() || f % 2 != 0 {
                return config_err("grid.fine_n must be even and at least 2 max(n)");
            }
        }
        if self.mc.replications < 2 {
            return config_err("mc.replications must be at least 2");
        }
        if !(self.mc.t_past > 0.0) {
            return config_err("mc.t_past must be positive");
        }
        if self.mc.m_sub == 0 || !(self.mc.engine_tol > 0.0) {
            return config_err("mc.m_sub and mc.engine_tol must be positive");
        }
        if !(self.mc.constants_tol > 0.0 && self.mc.limit_tol > 0.0) {
            return config_err("mc.constants_tol and mc.limit_tol must be positive");
        }
        let (lo, hi) = self.mc.tail_fractions;
        if !(lo > 0.0 && lo < hi && hi < 0.5) {
            return config_err("mc.tail_fractions must satisfy 0 < lo < hi < 0.5");
        }
        for (name, v) in &self.tolerances {
            if !default_tolerances().contains_key(name) {
                return config_err(format!("unknown tolerance '{name}'"));
            }
            if !v.is_finite() {
                return config_err(format!("tolerance '{name}' must be finite"));
            }
        }
        let need_cp = matches!(self.stat.regime, Regime::JumpLimit | Regime::Smooth);
        match (need_cp, self.driver.kind) {
            (true, DriverKind::Stable) => {
                return config_err(format!(
                    "the {:?} experiment is coupled to a jump record and needs a compound_poisson driver",
                    self.stat.regime
                ))
            }
            (false, DriverKind::CompoundPoisson) => {
                return config_err(format!("the {:?} experiment needs a stable driver", self.stat.regime))
            }
            _ => {}
        }
        if self.kernel.family == KernelFamily::TableDefined {
            return config_err("experiments need a pure_power or power_times_exp_decay kernel");
        }
        if !need_cp && self.kernel.family == KernelFamily::PurePower && self.kernel.g0_mode != G0Mode::EqualG {
            return config_err("pure power kernels need g0_mode = equal_g");
        }
        Ok(())
    }

    fn expect(&self, regime: Regime) -> Result<()> {
        self.validate()?;
        if self.stat.regime != regime {
            return config_err(format!(
                "experiment for {regime:?} called with a {:?} configuration",
                self.stat.regime
            ));
        }
        Ok(())
    }

    fn stream(&self, rep: usize, tag: u64) -> SeedStream {
        SeedStream::new(self.mc.seed, rep as u64).substream(tag)
    }

    fn constant_params(&self) -> ConstantParams {
        ConstantParams {
            alpha: self.alpha(),
            beta: self.beta(),
            p: self.stat.p,
            k: self.stat.k,
            c0: self.kernel.c0,
            sigma: self.driver.sigma,
        }
    }

    fn constants(&self) -> Result<LimitConstants> {
        let params = self.constant_params();
        match &self.mc.constants_cache {
            Some(dir) => ConstantsCache::new(dir).get_or_compute(params, self.mc.constants_tol, self.mc.i_max),
            None => compute_limit_constants(params, self.mc.constants_tol, self.mc.i_max),
        }
    }
}

/// Summary of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    /// Quantiles at [`QUANTILE_LEVELS`].
    pub quantiles: Vec<f64>,
}

pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

pub fn median(x: &[f64]) -> f64 {
    quantile_sorted(&sorted_copy(x), 0.5)
}

impl SampleSummary {
    pub fn of(x: &[f64]) -> Self {
        let count = x.len();
        let mean = x.iter().sum::<f64>() / count.max(1) as f64;
        let var = if count > 1 {
            x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        let s = sorted_copy(x);
        Self {
            count,
            mean,
            sd: var.sqrt(),
            min: s.first().copied().unwrap_or(f64::NAN),
            max: s.last().copied().unwrap_or(f64::NAN),
            quantiles: QUANTILE_LEVELS.iter().map(|&q| quantile_sorted(&s, q)).collect(),
        }
    }
}

/// Per-resolution results of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    /// The statistic compared with its limit (scaled or normalized).
    pub statistic: SampleSummary,
    /// Experiment-specific per-n quantities (gaps, deviations, targets).
    pub extra: BTreeMap<String, f64>,
}

/// Log-log fit of the raw statistic against `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `-e` for the regime exponent `e`.
    pub predicted_slope: f64,
    pub tolerance: f64,
    pub within_tolerance: bool,
    /// Whether `p(alpha+1/beta)-1 < alpha p < pk-1` holds for the configuration.
    pub exponent_ordering: bool,
}

/// One checked criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassFlag {
    pub name: String,
    /// Key into the tolerance map.
    pub tolerance: String,
    pub threshold: f64,
    pub value: f64,
    pub passed: bool,
    /// Informational flags never fail a run.
    pub gated: bool,
}

/// Outcome of the theta Monte Carlo check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaCheck {
    pub pairs: usize,
    pub truncation_level: f64,
    pub theta0_mc: f64,
    pub theta0_quadrature: f64,
    pub theta1_mc: f64,
    pub theta1_quadrature: f64,
    pub theta0_rel_err: f64,
    pub theta1_rel_err: f64,
    /// Share of `E|V_0 V_i|^p` carried by the analytic tail correction, per lag.
    pub tail_share: [f64; 2],
}

/// Result of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCReport {
    pub version: u32,
    pub experiment: String,
    pub config: ExperimentConfig,
    pub summaries: Vec<NSummary>,
    pub distances: BTreeMap<String, f64>,
    pub rate_fit: Option<RateFit>,
    pub pass_flags: Vec<PassFlag>,
    pub diagnostics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub constants_used: Option<LimitConstants>,
    pub theta_check: Option<ThetaCheck>,
    pub runtime_seconds: f64,
}

impl MCReport {
    fn new(experiment: &str, cfg: &ExperimentConfig) -> Self {
        let mut config = cfg.clone();
        config.mc.output_dir = None;
        config.mc.constants_cache = None;
        Self {
            version: REPORT_VERSION,
            experiment: experiment.to_string(),
            config,
            summaries: Vec::new(),
            distances: BTreeMap::new(),
            rate_fit: None,
            pass_flags: Vec::new(),
            diagnostics: BTreeMap::new(),
            notes: Vec::new(),
            constants_used: None,
            theta_check: None,
            runtime_seconds: 0.0,
        }
    }

    /// True iff every gated flag passed.
    pub fn passed(&self) -> bool {
        self.pass_flags.iter().filter(|f| f.gated).all(|f| f.passed)
    }

    /// Flag `value < threshold` (or `<=` when `inclusive`).
    fn flag_below(&mut self, name: &str, tol_key: &str, threshold: f64, value: f64, gated: bool) {
        self.pass_flags.push(PassFlag {
            name: name.into(),
            tolerance: tol_key.into(),
            threshold,
            value,
            passed: value < threshold,
            gated,
        });
    }

    fn flag_above(&mut self, name: &str, tol_key: &str, threshold: f64, value: f64, gated: bool) {
        self.pass_flags.push(PassFlag {
            name: name.into(),
            tolerance: tol_key.into(),
            threshold,
            value,
            passed: value > threshold,
            gated,
        });
    }

    /// JSON without the runtime field; identical across repeated runs.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.runtime_seconds = 0.0;
        Ok(serde_json::to_string_pretty(&r)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-n table; the first line is a versioned column comment.
    pub fn summary_csv(&self) -> String {
        let mut s = format!("# levy-pv summary v{REPORT_VERSION}\n");
        let extra_keys: Vec<String> = {
            let mut keys: Vec<String> = self.summaries.iter().flat_map(|x| x.extra.keys().cloned()).collect();
            keys.sort();
            keys.dedup();
            keys
        };
        s.push_str("n,count,mean,sd,min,max,q05,q25,q50,q75,q95");
        for k in &extra_keys {
            s.push(',');
            s.push_str(k);
        }
        s.push('\n');
        for row in &self.summaries {
            let st = &row.statistic;
            s.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e}",
                row.n, st.count, st.mean, st.sd, st.min, st.max
            ));
            for q in &st.quantiles {
                s.push_str(&format!(",{q:e}"));
            }
            for k in &extra_keys {
                match row.extra.get(k) {
                    Some(v) => s.push_str(&format!(",{v:e}")),
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Plain-text verdict, one line per flag and a final overall line.
    pub fn verdict(&self) -> String {
        let mut s = String::new();
        for f in &self.pass_flags {
            s.push_str(&format!(
                "{} {}: value {:.6} threshold {:.6} [{}]{}\n",
                if f.passed { "PASS" } else { "FAIL" },
                f.name,
                f.value,
                f.threshold,
                f.tolerance,
                if f.gated { "" } else { " (informational)" }
            ));
        }
        s.push_str(&format!(
            "{}: {}\n",
            self.experiment,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        s
    }

    /// Writes `report.json`, `summary.csv` and `verdict.txt` into `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv())?;
        std::fs::write(dir.join("verdict.txt"), self.verdict())?;
        Ok(())
    }
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("KS distance needs nonempty samples".into()));
    }
    let (sa, sb) = (sorted_copy(a), sorted_copy(b));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
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

/// One-sample Kolmogorov–Smirnov distance to a continuous CDF.
pub fn ks_one_sample(a: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Domain("KS distance needs a nonempty sample".into()));
    }
    let s = sorted_copy(a);
    let n = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    }))
}

/// Reference of a KS comparison.
pub enum KsTarget<'a> {
    Sample(&'a [f64]),
    Cdf(&'a dyn Fn(f64) -> f64),
}

pub fn ks_distance(sample: &[f64], target: KsTarget<'_>) -> Result<f64> {
    match target {
        KsTarget::Sample(b) => ks_two_sample(sample, b),
        KsTarget::Cdf(f) => ks_one_sample(sample, f),
    }
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Right-tail index from the log-survival regression over the upper order
/// statistics with ranks in `[lo N, hi N]`.
pub fn tail_index_log_survival(samples: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let n = samples.len();
    let mut desc = sorted_copy(samples);
    desc.reverse();
    let r0 = ((lo * n as f64).ceil() as usize).max(1);
    let r1 = (hi * n as f64).floor() as usize;
    if r1 < r0 + 3 {
        return Err(Error::Domain(format!("too few tail points for the tail index ({n} samples)")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in r0..=r1 {
        let x = desc[r - 1];
        if !(x > 0.0) {
            return Err(Error::Domain("upper tail must be positive for the tail index".into()));
        }
        xs.push(x.ln());
        ys.push((r as f64 / n as f64).ln());
    }
    let (_, slope, _) = ols(&xs, &ys)?;
    Ok(-slope)
}

/// Hill estimator of the right-tail index from the `k` largest values.
pub fn hill_estimator(samples: &[f64], k: usize) -> Result<f64> {
    let mut desc = sorted_copy(samples);
    desc.reverse();
    if k < 2 || k >= desc.len() || !(desc[k] > 0.0) {
        return Err(Error::Domain("Hill estimator needs 2 <= k < N and a positive threshold".into()));
    }
    let t = desc[k].ln();
    let h = desc[..k].iter().map(|x| x.ln() - t).sum::<f64>() / k as f64;
    Ok(1.0 / h)
}

/// Log-log slope of a per-n statistic.
pub fn fit_rate(ns: &[usize], log_values: &[f64], predicted_slope: f64, tolerance: f64) -> Result<(f64, f64, f64, bool)> {
    if ns.len() < 3 || ns.len() != log_values.len() {
        return Err(Error::Domain(format!(
            "rate regression needs at least 3 grid points, got {}",
            ns.len()
        )));
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let (a, b, r2) = ols(&x, log_values)?;
    Ok((b, a, r2, (b - predicted_slope).abs() <= tolerance))
}

/// Rate fit of the mean log raw statistic against the regime exponent.
pub fn rate_regression(cfg: &ExperimentConfig, ns: &[usize], mean_log_raw: &[f64]) -> Result<RateFit> {
    let (alpha, beta, p, k) = (cfg.alpha(), cfg.beta(), cfg.stat.p, cfg.stat.k);
    let predicted = -scaling_exponent(cfg.regime(), alpha, beta, p, k);
    let tol = cfg.tolerance("rate_slope")?;
    let (slope, intercept, r2, within) = fit_rate(ns, mean_log_raw, predicted, tol)?;
    Ok(RateFit {
        slope,
        intercept,
        r2,
        predicted_slope: predicted,
        tolerance: tol,
        within_tolerance: within,
        exponent_ordering: exponent_ordering_holds(alpha, beta, p, k),
    })
}

fn par_reps<T: Send>(reps: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..reps).into_par_iter().map(f).collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

fn attach_rate(report: &mut MCReport, cfg: &ExperimentConfig, log_raw: &[Vec<f64>], gated: bool) -> Result<()> {
    if cfg.grid.n.len() < 3 {
        report.notes.push("rate regression skipped: fewer than 3 grid points".into());
        return Ok(());
    }
    let means: Vec<f64> = (0..cfg.grid.n.len()).map(|j| mean(&column(log_raw, j))).collect();
    let fit = rate_regression(cfg, &cfg.grid.n, &means)?;
    report.flag_below(
        "rate_slope_deviation",
        "rate_slope",
        fit.tolerance,
        (fit.slope - fit.predicted_slope).abs(),
        gated,
    );
    report.rate_fit = Some(fit);
    Ok(())
}

/// Pathwise coupling of `n^{alpha p} V` with the limit `Z` built from the same jumps.
pub fn run_jump_limit_experiment(cfg: &ExperimentConfig) -> Result<MCReport> {
    let start = Instant::now();
    cfg.expect(Regime::JumpLimit)?;
    let mut report = MCReport::new("jump_limit", cfg);
    let (alpha, p, k) = (cfg.alpha(), cfg.stat.p, cfg.stat.k);
    let beta = cfg.beta();
    let grid = cfg.grid.n.clone();
    let ks_j = grid.iter().position(|&n| n == cfg.ks_n()).expect("validated");
    struct Rep {
        scaled: Vec<f64>,
        log_raw: Vec<f64>,
        z: Vec<f64>,
        z_indep: f64,
    }
    let reps = par_reps(cfg.mc.replications, |r| {
        let jumps = sample_cp_record(&cfg.driver, cfg.mc.t_past, cfg.stream(r, 1))?;
        let mut scaled = Vec::with_capacity(grid.len());
        let mut log_raw = Vec::with_capacity(grid.len());
        let mut z = Vec::with_capacity(grid.len());
        for &n in &grid {
            let pv = power_variation(&simulate_cp_driven_path(&cfg.kernel, &jumps, n)?, p, k)?;
            scaled.push((n as f64).powf(scaling_exponent(Regime::JumpLimit, alpha, beta, p, k)) * pv.raw);
            log_raw.push(pv.raw.ln());
            let marks = coupled_marks(&jumps, n);
            z.push(limit_z_with_marks(&jumps, &marks, alpha, p, k, cfg.kernel.c0, cfg.mc.limit_tol)?.value);
        }
        let other = sample_cp_record(&cfg.driver, cfg.mc.t_past, cfg.stream(r, 2))?;
        let z_indep =
            simulate_limit_z(&other, alpha, p, k, cfg.kernel.c0, cfg.mc.limit_tol, cfg.stream(r, 3))?.value;
        Ok(Rep {
            scaled,
            log_raw,
            z,
            z_indep,
        })
    })?;
    let mut gap_medians = Vec::new();
    for (j, &n) in grid.iter().enumerate() {
        let stat: Vec<f64> = reps.iter().map(|x| x.scaled[j]).collect();
        let gaps: Vec<f64> = reps
            .iter()
            .filter(|x| x.z[j] > 0.0)
            .map(|x| (x.scaled[j] - x.z[j]).abs() / x.z[j])
            .collect();
        let gm = median(&gaps);
        gap_medians.push(gm);
        let mut extra = BTreeMap::new();
        extra.insert("median_rel_gap".into(), gm);
        extra.insert("coupled_pairs".into(), gaps.len() as f64);
        extra.insert("mean_z_coupled".into(), mean(&reps.iter().map(|x| x.z[j]).collect::<Vec<_>>()));
        report.summaries.push(NSummary {
            n,
            statistic: SampleSummary::of(&stat),
            extra,
        });
    }
    let stat_ks: Vec<f64> = reps.iter().map(|x| x.scaled[ks_j]).collect();
    let z_ind: Vec<f64> = reps.iter().map(|x| x.z_indep).collect();
    let ks = ks_two_sample(&stat_ks, &z_ind)?;
    report.distances.insert(format!("ks_statistic_n{}_vs_independent_z", cfg.ks_n()), ks);
    let gap_tol = cfg.tolerance("jump_coupled_gap")?;
    report.flag_below("coupled_median_gap_max_n", "jump_coupled_gap", gap_tol, *gap_medians.last().unwrap(), true);
    let ks_tol = cfg.tolerance("jump_ks")?;
    report.flag_below("two_sample_ks", "jump_ks", ks_tol, ks, true);
    let increases = gap_medians.windows(2).filter(|w| w[1] >= w[0]).count();
    report.flag_below("coupled_gap_decreasing", "jump_coupled_gap", 1.0, increases as f64, false);
    report
        .notes
        .push("gap-decrease criterion is an artifact calibration; no quantitative rate is available".into());
    let log_raw: Vec<Vec<f64>> = reps.iter().map(|x| x.log_raw.clone()).collect();
    attach_rate(&mut report, cfg, &log_raw, false)?;
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn stable_simulators(cfg: &ExperimentConfig) -> Result<Vec<StablePathSimulator>> {
    let opts = cfg.mc.engine();
    cfg.grid
        .n
        .iter()
        .map(|&n| StablePathSimulator::new(&cfg.kernel, cfg.beta(), cfg.driver.sigma, n, opts))
        .collect()
}

fn raw_stable_pv(cfg: &ExperimentConfig, sims: &[StablePathSimulator]) -> Result<Vec<Vec<f64>>> {
    let (p, k) = (cfg.stat.p, cfg.stat.k);
    par_reps(cfg.mc.replications, |r| {
        sims.iter()
            .enumerate()
            .map(|(j, sim)| Ok(power_variation(&sim.sample(cfg.stream(r, 10 + j as u64)), p, k)?.raw))
            .collect()
    })
}

fn engine_diagnostics(report: &mut MCReport, sims: &[StablePathSimulator]) {
    if let Some(sim) = sims.last() {
        let b = sim.bounds();
        report.diagnostics.insert("engine_near_bound".into(), b.near_bound);
        report.diagnostics.insert("engine_far_bound".into(), b.far_bound);
        report.diagnostics.insert("engine_tail_bound".into(), b.tail_bound);
        report.diagnostics.insert("engine_t_trunc".into(), b.t_trunc);
    }
}

/// Relative error of the engine's marginal scale for `h_k` against quadrature.
fn scale_bias(cfg: &ExperimentConfig) -> Result<f64> {
    let (alpha, beta, k) = (cfg.alpha(), cfg.beta(), cfg.stat.k);
    let exact = crate::constants::hk_beta_norm(alpha, beta, k, 1e-10)?.value.powf(1.0 / beta);
    let sim = VProcessSimulator::new(alpha, beta, k, 8, cfg.mc.engine())?;
    Ok(sim.bounds().marginal_scale / exact - 1.0)
}

fn required_constant(c: &Option<crate::quad::QuadResult>, name: &str) -> Result<f64> {
    c.map(|q| q.value)
        .ok_or_else(|| Error::Config(format!("constant {name} is not defined for this configuration")))
}

/// Law of large numbers: `n^{-1+p(alpha+1/beta)} V -> m_p`.
pub fn run_ergodic_experiment(cfg: &ExperimentConfig) -> Result<MCReport> {
    let start = Instant::now();
    cfg.expect(Regime::Ergodic)?;
    let mut report = MCReport::new("ergodic", cfg);
    let consts = cfg.constants()?;
    let mp = required_constant(&consts.m_p, "m_p")?;
    let sims = stable_simulators(cfg)?;
    let raw = raw_stable_pv(cfg, &sims)?;
    let (alpha, beta, p, k) = (cfg.alpha(), cfg.beta(), cfg.stat.p, cfg.stat.k);
    let e = scaling_exponent(Regime::Ergodic, alpha, beta, p, k);
    let mut mads = Vec::new();
    let mut biases = Vec::new();
    for (j, &n) in cfg.grid.n.iter().enumerate() {
        let scaled: Vec<f64> = raw.iter().map(|r| (n as f64).powf(e) * r[j]).collect();
        let s = SampleSummary::of(&scaled);
        let mad = mean(&scaled.iter().map(|x| (x - mp).abs()).collect::<Vec<_>>());
        let bias = (s.mean - mp).abs() / mp;
        mads.push(mad);
        biases.push(bias);
        let mut extra = BTreeMap::new();
        extra.insert("mad_vs_m_p".into(), mad);
        extra.insert("rel_bias".into(), bias);
        extra.insert("m_p".into(), mp);
        report.summaries.push(NSummary {
            n,
            statistic: s,
            extra,
        });
    }
    report.flag_below("terminal_rel_bias", "ergodic_bias", cfg.tolerance("ergodic_bias")?, *biases.last().unwrap(), true);
    let inversions = mads.windows(2).filter(|w| w[1] >= w[0]).count() as f64;
    let allowed = cfg.tolerance("ergodic_mad_inversions")?;
    report.pass_flags.push(PassFlag {
        name: "mad_inversions".into(),
        tolerance: "ergodic_mad_inversions".into(),
        threshold: allowed,
        value: inversions,
        passed: inversions <= allowed,
        gated: true,
    });
    if mads.len() >= 2 {
        report.flag_below("mad_terminal_below_initial", "ergodic_mad_inversions", mads[0], *mads.last().unwrap(), true);
    }
    let log_raw: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|x| x.ln()).collect()).collect();
    attach_rate(&mut report, cfg, &log_raw, true)?;
    engine_diagnostics(&mut report, &sims);
    report.constants_used = Some(consts);
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Pathwise comparison of `n^{-1+pk} V` with `int_0^1 |F_u|^p du` on the same jumps.
pub fn run_smooth_experiment(cfg: &ExperimentConfig) -> Result<MCReport> {
    let start = Instant::now();
    cfg.expect(Regime::Smooth)?;
    let mut report = MCReport::new("smooth", cfg);
    let (alpha, beta, p, k) = (cfg.alpha(), cfg.beta(), cfg.stat.p, cfg.stat.k);
    let grid = cfg.grid.n.clone();
    let fine = cfg.grid.fine_n.unwrap_or(4 * cfg.max_n());
    let e = scaling_exponent(Regime::Smooth, alpha, beta, p, k);
    struct Rep {
        scaled: Vec<f64>,
        log_raw: Vec<f64>,
        f: f64,
        refine: f64,
    }
    let reps = par_reps(cfg.mc.replications, |r| {
        let jumps = sample_cp_record(&cfg.driver, cfg.mc.t_past, cfg.stream(r, 1))?;
        let f = simulate_f_integral_cp(&cfg.kernel, k, p, beta, &jumps, fine)?;
        let mut scaled = Vec::new();
        let mut log_raw = Vec::new();
        for &n in &grid {
            let raw = power_variation(&simulate_cp_driven_path(&cfg.kernel, &jumps, n)?, p, k)?.raw;
            scaled.push((n as f64).powf(e) * raw);
            log_raw.push(raw.ln());
        }
        Ok(Rep {
            scaled,
            log_raw,
            f: f.value,
            refine: f.refinement_rel_diff,
        })
    })?;
    let valid: Vec<&Rep> = reps.iter().filter(|x| x.f > 0.0 && x.log_raw.iter().all(|v| v.is_finite())).collect();
    let mut med = Vec::new();
    for (j, &n) in grid.iter().enumerate() {
        let stat: Vec<f64> = valid.iter().map(|x| x.scaled[j]).collect();
        let errs: Vec<f64> = valid.iter().map(|x| (x.scaled[j] - x.f).abs() / x.f).collect();
        let m = median(&errs);
        med.push(m);
        let mut extra = BTreeMap::new();
        extra.insert("median_rel_error".into(), m);
        extra.insert("q90_rel_error".into(), quantile_sorted(&sorted_copy(&errs), 0.9));
        report.summaries.push(NSummary {
            n,
            statistic: SampleSummary::of(&stat),
            extra,
        });
    }
    report.diagnostics.insert("valid_replications".into(), valid.len() as f64);
    report.diagnostics.insert("fine_n".into(), fine as f64);
    report
        .diagnostics
        .insert("max_f_refinement_rel_diff".into(), valid.iter().map(|x| x.refine).fold(0.0, f64::max));
    report.flag_below(
        "median_rel_error_max_n",
        "smooth_rel_error",
        cfg.tolerance("smooth_rel_error")?,
        *med.last().unwrap(),
        true,
    );
    let increases = med.windows(2).filter(|w| w[1] >= w[0]).count();
    report.flag_below("rel_error_decreasing", "smooth_rel_error", 1.0, increases as f64, false);
    let log_raw: Vec<Vec<f64>> = valid.iter().map(|x| x.log_raw.clone()).collect();
    attach_rate(&mut report, cfg, &log_raw, false)?;
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// `lim x^beta P(|X| > x)` for a standard symmetric beta-stable `X`.
fn stable_tail_constant(beta: f64) -> f64 {
    2.0 / std::f64::consts::PI * gamma(beta) * (std::f64::consts::FRAC_PI_2 * beta).sin()
}

/// Monte Carlo `theta(0)`, `theta(1)` of the unit V-process against quadrature.
///
/// `|V|^{2p}` has tail index `beta/(2p)`, so plain sample covariances barely
/// converge. The estimator truncates at `M = 50 ||h_k||_beta` and adds the
/// single-large-jump tail `C beta/(beta-2p) M^{2p-beta} int |h(x)h(x+i)|^p max(|h(x)|,|h(x+i)|)^{beta-2p} dx`.
pub fn theta_monte_carlo(
    alpha: f64,
    beta: f64,
    p: f64,
    k: usize,
    pairs: usize,
    v_count: usize,
    opts: EngineOptions,
    seed: u64,
    tol: f64,
) -> Result<ThetaCheck> {
    if !(p < beta / 2.0) {
        return Err(Error::Domain("theta check needs p < beta/2".into()));
    }
    if v_count < 2 || pairs == 0 {
        return Err(Error::Domain("theta check needs v_count >= 2 and pairs > 0".into()));
    }
    let sim = VProcessSimulator::new(alpha, beta, k, v_count, opts)?;
    let hk = Hk::new(alpha, k)?;
    let norm = sim.bounds().marginal_scale;
    let m = 50.0 * norm;
    let paths = pairs.div_ceil(v_count - 1);
    let stream = SeedStream::new(seed, u64::MAX - 7);
    let sums = par_reps(paths, |r| {
        let v = sim.sample(stream.substream(r as u64));
        let mut acc = [0.0f64; 2];
        for t in 0..v_count - 1 {
            let (a, b) = (v[t].abs(), v[t + 1].abs());
            if a <= m {
                acc[0] += a.powf(2.0 * p);
            }
            if a.max(b) <= m {
                acc[1] += (a * b).powf(p);
            }
        }
        Ok(acc)
    })?;
    let total = (paths * (v_count - 1)) as f64;
    let trunc = [
        sums.iter().map(|s| s[0]).sum::<f64>() / total,
        sums.iter().map(|s| s[1]).sum::<f64>() / total,
    ];
    let c = stable_tail_constant(beta) * beta / (beta - 2.0 * p) * m.powf(2.0 * p - beta);
    let integ = Integrator::new(1e-12, tol * 1e-2);
    let shape = |lag: f64| {
        let f = |x: f64| {
            let (a, b) = (hk.eval(x).abs(), hk.eval(x + lag).abs());
            let mx = a.max(b);
            if mx == 0.0 {
                0.0
            } else {
                (a * b).powf(p) * mx.powf(beta - 2.0 * p)
            }
        };
        let x_end = 1e4;
        let mut breaks: Vec<f64> = vec![0.0];
        for j in 1..=(k + 1) {
            breaks.push(j as f64);
        }
        let mut b = (k + 1) as f64;
        while b < x_end {
            b *= 2.0;
            breaks.push(b.min(x_end));
        }
        let body = integ.integrate_with_breaks(f, &breaks).value;
        let ex = (alpha - k as f64) * beta + 1.0;
        body + hk.tail_coefficient().abs().powf(beta) * x_end.powf(ex) / (-ex)
    };
    let tails = [c * shape(0.0), c * shape(1.0)];
    let mp = (theta_i(0, alpha, beta, p, k, tol)?.value, theta_i(1, alpha, beta, p, k, tol)?.value);
    // Quadrature m_p of the unit process: E|V|^p.
    let mean_p = crate::constants::m_p(alpha, beta, p, k, 1.0, 1.0, tol)?.value;
    let t0 = trunc[0] + tails[0] - mean_p * mean_p;
    let t1 = trunc[1] + tails[1] - mean_p * mean_p;
    Ok(ThetaCheck {
        pairs: total as usize,
        truncation_level: m,
        theta0_mc: t0,
        theta0_quadrature: mp.0,
        theta1_mc: t1,
        theta1_quadrature: mp.1,
        theta0_rel_err: (t0 - mp.0).abs() / mp.0.abs(),
        theta1_rel_err: (t1 - mp.1).abs() / mp.1.abs(),
        tail_share: [tails[0] / (trunc[0] + tails[0]), tails[1] / (trunc[1] + tails[1])],
    })
}

/// Gaussian fluctuations `sqrt(n)(scaled - m_p)/eta` for `k >= 2`.
pub fn run_clt_experiment(cfg: &ExperimentConfig) -> Result<MCReport> {
    let start = Instant::now();
    cfg.expect(Regime::SecondOrderClt)?;
    let mut report = MCReport::new("clt", cfg);
    let consts = cfg.constants()?;
    let mp = required_constant(&consts.m_p, "m_p")?;
    let eta2 = consts
        .eta_sq
        .as_ref()
        .map(|e| e.value)
        .ok_or_else(|| Error::Config("eta^2 is not defined for this configuration".into()))?;
    let eta = eta2.sqrt();
    let sims = stable_simulators(cfg)?;
    let raw = raw_stable_pv(cfg, &sims)?;
    let (alpha, beta, p, k) = (cfg.alpha(), cfg.beta(), cfg.stat.p, cfg.stat.k);
    let mut ks_val = f64::NAN;
    let mut ks_summary = None;
    for (j, &n) in cfg.grid.n.iter().enumerate() {
        let t: Vec<f64> = raw
            .iter()
            .map(|r| {
                let pv = crate::statistics::PowerVariationResult {
                    n,
                    p,
                    k,
                    raw: r[j],
                    scaling_exponent: None,
                    scaled: None,
                };
                Ok(second_order_statistic(pv, alpha, beta, mp)? / eta)
            })
            .collect::<Result<_>>()?;
        let ks = ks_one_sample(&t, standard_normal_cdf)?;
        let s = SampleSummary::of(&t);
        if n == cfg.ks_n() {
            ks_val = ks;
            ks_summary = Some(s.clone());
        }
        let mut extra = BTreeMap::new();
        extra.insert("ks_vs_normal".into(), ks);
        extra.insert("variance".into(), s.sd * s.sd);
        report.summaries.push(NSummary {
            n,
            statistic: s,
            extra,
        });
    }
    let s = ks_summary.expect("ks_n is in the grid");
    report.distances.insert(format!("ks_normalized_n{}_vs_normal", cfg.ks_n()), ks_val);
    report.flag_below("ks_vs_standard_normal", "clt_ks", cfg.tolerance("clt_ks")?, ks_val, true);
    report.flag_below("mean_abs", "clt_mean_abs", cfg.tolerance("clt_mean_abs")?, s.mean.abs(), true);
    let var = s.sd * s.sd;
    report.flag_above("variance_low", "clt_var_low", cfg.tolerance("clt_var_low")?, var, true);
    report.flag_below("variance_high", "clt_var_high", cfg.tolerance("clt_var_high")?, var, true);
    report.diagnostics.insert("eta_sq".into(), eta2);
    report.diagnostics.insert("m_p".into(), mp);
    // Centering shift of the normalized statistic caused by the scale bias.
    let delta = scale_bias(cfg)?;
    report.diagnostics.insert("engine_scale_rel_bias".into(), delta);
    report.diagnostics.insert(
        "normalized_centering_bias".into(),
        (cfg.ks_n() as f64).sqrt() * p * delta * mp / eta,
    );
    if cfg.mc.theta_pairs > 0 {
        let th = theta_monte_carlo(
            alpha,
            beta,
            p,
            k,
            cfg.mc.theta_pairs,
            cfg.mc.v_count,
            cfg.mc.engine(),
            cfg.mc.seed,
            cfg.mc.constants_tol * 1e-2,
        )?;
        report.flag_below("theta0_mc_vs_quadrature", "theta0_rel", cfg.tolerance("theta0_rel")?, th.theta0_rel_err, true);
        report.flag_below("theta1_mc_vs_quadrature", "theta1_rel", cfg.tolerance("theta1_rel")?, th.theta1_rel_err, true);
        report.theta_check = Some(th);
    }
    attach_rate(&mut report, cfg, &raw.iter().map(|r| r.iter().map(|x| x.ln()).collect()).collect::<Vec<_>>(), false)?;
    engine_diagnostics(&mut report, &sims);
    report.constants_used = Some(consts);
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Skewed stable fluctuations for `k = 1`: the right-tail index is gated, KS is informational.
pub fn run_stable_limit_experiment(cfg: &ExperimentConfig) -> Result<MCReport> {
    let start = Instant::now();
    cfg.expect(Regime::SecondOrderStable)?;
    let mut report = MCReport::new("stable_limit", cfg);
    let consts = cfg.constants()?;
    let mp = required_constant(&consts.m_p, "m_p")?;
    let st = required_constant(&consts.sigma_tilde, "sigma_tilde")?;
    let sims = stable_simulators(cfg)?;
    let raw = raw_stable_pv(cfg, &sims)?;
    let (alpha, beta, p, k) = (cfg.alpha(), cfg.beta(), cfg.stat.p, cfg.stat.k);
    let rho = (1.0 - alpha) * beta;
    let (lo, hi) = cfg.mc.tail_fractions;
    let mut ks_t = Vec::new();
    for (j, &n) in cfg.grid.n.iter().enumerate() {
        let t: Vec<f64> = raw
            .iter()
            .map(|r| {
                let pv = crate::statistics::PowerVariationResult {
                    n,
                    p,
                    k,
                    raw: r[j],
                    scaling_exponent: None,
                    scaled: None,
                };
                second_order_statistic(pv, alpha, beta, mp)
            })
            .collect::<Result<_>>()?;
        let mut extra = BTreeMap::new();
        if let Ok(idx) = tail_index_log_survival(&t, lo, hi) {
            extra.insert("tail_index".into(), idx);
        }
        report.summaries.push(NSummary {
            n,
            statistic: SampleSummary::of(&t),
            extra,
        });
        if n == cfg.ks_n() {
            ks_t = t;
        }
    }
    let skewed = SkewedStable::new(rho, st)?;
    let reference: Vec<f64> = (0..cfg.mc.replications)
        .map(|r| skewed.sample(&mut cfg.stream(r, 4).rng()))
        .collect();
    let ks = ks_two_sample(&ks_t, &reference)?;
    report.distances.insert(format!("ks_n{}_vs_skewed_stable", cfg.ks_n()), ks);
    report.flag_below("ks_vs_skewed_stable", "jump_ks", cfg.tolerance("jump_ks")?, ks, false);
    report.notes.push("KS against the skewed stable limit is slow-convergence, informational".into());
    let idx = tail_index_log_survival(&ks_t, lo, hi)?;
    let hill = hill_estimator(&ks_t, ((hi * ks_t.len() as f64) as usize).max(3))?;
    let ref_idx = tail_index_log_survival(&reference, lo, hi)?;
    report.diagnostics.insert("tail_index".into(), idx);
    report.diagnostics.insert("tail_index_hill".into(), hill);
    report.diagnostics.insert("tail_index_reference_sample".into(), ref_idx);
    report.diagnostics.insert("rho".into(), rho);
    report.diagnostics.insert("m_p".into(), mp);
    report.diagnostics.insert("sigma_tilde".into(), st);
    let delta = scale_bias(cfg)?;
    report.diagnostics.insert("engine_scale_rel_bias".into(), delta);
    report.diagnostics.insert(
        "rescaled_centering_bias".into(),
        (cfg.ks_n() as f64).powf(1.0 - 1.0 / rho) * p * delta * mp,
    );
    report.flag_below("tail_index_deviation", "tail_index", cfg.tolerance("tail_index")?, (idx - rho).abs(), true);
    let sorted_abs = sorted_copy(&ks_t.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let x = quantile_sorted(&sorted_abs, 0.9);
    let right = ks_t.iter().filter(|&&v| v > x).count() as f64;
    let left = ks_t.iter().filter(|&&v| v < -x).count() as f64;
    let ratio = if right > 0.0 { left / right } else { f64::INFINITY };
    report.diagnostics.insert("asymmetry_level".into(), x);
    report.flag_below("left_right_tail_ratio", "tail_asymmetry", cfg.tolerance("tail_asymmetry")?, ratio, true);
    report.pass_flags.push(PassFlag {
        name: "sigma_tilde_positive".into(),
        tolerance: "tail_index".into(),
        threshold: 0.0,
        value: st,
        passed: st > 0.0,
        gated: true,
    });
    engine_diagnostics(&mut report, &sims);
    report.constants_used = Some(consts);
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Dispatches on the regime.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MCReport> {
    match cfg.regime() {
        Regime::JumpLimit => run_jump_limit_experiment(cfg),
        Regime::Ergodic => run_ergodic_experiment(cfg),
        Regime::Smooth => run_smooth_experiment(cfg),
        Regime::SecondOrderClt => run_clt_experiment(cfg),
        Regime::SecondOrderStable => run_stable_limit_experiment(cfg),
    }
}

/// Runs `f` on a dedicated pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Ratio-estimator study on linear fractional stable motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub n: usize,
    pub replications: usize,
    pub target_h: f64,
    pub estimates_h: Vec<f64>,
    pub summary: SampleSummary,
    pub band: f64,
    pub coverage: f64,
    pub required_coverage: f64,
    pub passed: bool,
}

/// Estimates `H = alpha + 1/beta` by the ratio estimator on `replications` LFSM paths.
#[allow(clippy::too_many_arguments)]
pub fn run_ratio_estimator_experiment(
    alpha: f64,
    beta: f64,
    p: f64,
    n: usize,
    replications: usize,
    seed: u64,
    band: f64,
    required_coverage: f64,
    opts: EngineOptions,
) -> Result<EstimatorReport> {
    if !(p > 0.0 && p < beta) {
        return Err(Error::Domain(format!("ratio estimator needs 0 < p < beta (p = {p})")));
    }
    if replications == 0 {
        return Err(Error::Domain("replications must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0 - 1.0 / beta) {
        return Err(Error::Domain(format!(
            "linear fractional stable motion needs 0 < alpha < 1 - 1/beta (alpha = {alpha}, beta = {beta})"
        )));
    }
    let sim = StablePathSimulator::new(&KernelSpec::pure_power(alpha, 1.0), beta, 1.0, n, opts)?;
    let est = par_reps(replications, |r| {
        let path = sim.sample(SeedStream::new(seed, r as u64).substream(20));
        let e = ratio_estimator(&path, p)?;
        Ok(crate::statistics::hurst_from_ratio(e, p))
    })?;
    let target = alpha + 1.0 / beta;
    let coverage = est.iter().filter(|h| (*h - target).abs() <= band).count() as f64 / replications as f64;
    Ok(EstimatorReport {
        alpha,
        beta,
        p,
        n,
        replications,
        target_h: target,
        summary: SampleSummary::of(&est),
        estimates_h: est,
        band,
        coverage,
        required_coverage,
        passed: coverage >= required_coverage,
    })
}

/// Power variation of a deterministic path (testing helper for rate fits).
pub fn deterministic_log_pv(f: impl Fn(f64) -> f64, ns: &[usize], p: f64, k: usize) -> Result<Vec<f64>> {
    ns.iter()
        .map(|&n| {
            let v: Vec<f64> = (0..=n).map(|i| f(i as f64 / n as f64)).collect();
            Ok(power_variation_of(&v, p, k)?.ln())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable_rng::JumpLaw;
    use rand::Rng;

    fn ergodic_cfg() -> ExperimentConfig {
        ExperimentConfig {
            kernel: KernelSpec::pure_power(0.25, 1.0),
            driver: DriverSpec::stable(1.5, 1.0),
            stat: StatConfig {
                p: 1.0,
                k: 1,
                regime: Regime::Ergodic,
            },
            grid: GridConfig {
                n: vec![64, 128, 256],
                ks_n: None,
                fine_n: None,
            },
            mc: McConfig::new(8, 7),
            tolerances: BTreeMap::new(),
        }
    }

    fn smooth_cfg() -> ExperimentConfig {
        ExperimentConfig {
            kernel: KernelSpec::power_exp(1.5, 1.0, 1.0),
            driver: DriverSpec::compound_poisson(1.8, 5.0, "pareto:1.8".parse().unwrap()),
            stat: StatConfig {
                p: 2.0,
                k: 1,
                regime: Regime::Smooth,
            },
            grid: GridConfig {
                n: vec![256, 512, 1024],
                ks_n: None,
                fine_n: None,
            },
            mc: McConfig::new(6, 3),
            tolerances: BTreeMap::new(),
        }
    }

    #[test]
    fn ks_identical_samples_is_zero() {
        let a = [0.3, -1.0, 2.0, 5.5, 0.1];
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ks_disjoint_supports_is_one() {
        let a = [0.0, 0.5, 0.9];
        let b = [1.5, 2.0, 3.0, 4.0];
        assert_eq!(ks_two_sample(&a, &b).unwrap(), 1.0);
        assert_eq!(ks_two_sample(&b, &a).unwrap(), 1.0);
    }

    #[test]
    fn ks_uniform_against_cdf_is_small() {
        let mut rng = SeedStream::new(11, 0).rng();
        let x: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let d = ks_one_sample(&x, |u| u.clamp(0.0, 1.0)).unwrap();
        assert!(d < 0.02, "{d}");
        let d2 = ks_distance(&x, KsTarget::Cdf(&|u: f64| u.clamp(0.0, 1.0))).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn ks_two_sample_matches_brute_force() {
        let mut rng = SeedStream::new(12, 0).rng();
        let a: Vec<f64> = (0..50).map(|_| (rng.random::<f64>() * 10.0).floor()).collect();
        let b: Vec<f64> = (0..70).map(|_| (rng.random::<f64>() * 10.0).floor()).collect();
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
        let brute = a.iter().chain(&b).map(|&x| (ecdf(&a, x) - ecdf(&b, x)).abs()).fold(0.0, f64::max);
        assert!((ks_two_sample(&a, &b).unwrap() - brute).abs() < 1e-15);
    }

    #[test]
    fn ks_rejects_empty() {
        assert!(ks_two_sample(&[], &[1.0]).is_err());
        assert!(ks_one_sample(&[], standard_normal_cdf).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.25), 2.0);
        assert!((quantile_sorted(&s, 0.1) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn tail_index_of_pareto_sample() {
        let mut rng = SeedStream::new(5, 0).rng();
        let x: Vec<f64> = (0..20_000).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / 1.35)).collect();
        let a = tail_index_log_survival(&x, 0.001, 0.2).unwrap();
        assert!((a - 1.35).abs() < 0.05, "{a}");
        let h = hill_estimator(&x, 2000).unwrap();
        assert!((h - 1.35).abs() < 0.06, "{h}");
    }

    #[test]
    fn rate_fit_exact_on_linear_path() {
        // X_t = t gives V(2;1)_n = n^{-1} = n^{1-pk}.
        let ns = [64, 128, 256, 512];
        let lv = deterministic_log_pv(|t| t, &ns, 2.0, 1).unwrap();
        let cfg = smooth_cfg();
        let fit = rate_regression(&cfg, &ns, &lv).unwrap();
        assert!((fit.slope - (1.0 - 2.0)).abs() < 1e-10, "{}", fit.slope);
        assert!(fit.within_tolerance);
    }

    #[test]
    fn rate_fit_needs_three_points() {
        let cfg = ergodic_cfg();
        let e = rate_regression(&cfg, &[1024], &[0.0]).unwrap_err();
        assert!(matches!(e, Error::Domain(_)));
        assert!(fit_rate(&[4, 8], &[0.0, 1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn validation_rejects_bad_grids_and_regimes() {
        let mut c = ergodic_cfg();
        c.grid.n = vec![64, 100];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.grid.n = vec![128, 64];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ergodic_cfg();
        c.stat.p = 1.6;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ergodic_cfg();
        c.stat.p = 1.5;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("critical case"), "{msg}");
        let mut c = ergodic_cfg();
        c.tolerances.insert("no_such_tolerance".into(), 1.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn experiments_reject_wrong_regime() {
        let c = ergodic_cfg();
        assert!(matches!(run_clt_experiment(&c), Err(Error::Config(_))));
        let mut j = smooth_cfg();
        j.kernel = KernelSpec::pure_power(0.3, 1.0);
        j.stat = StatConfig {
            p: 2.0,
            k: 1,
            regime: Regime::JumpLimit,
        };
        j.driver = DriverSpec::compound_poisson(1.0, 5.0, JumpLaw::TwoPoint { a: 1.0 });
        assert!(j.validate().is_ok());
        j.stat.p = 0.8;
        assert!(matches!(run_jump_limit_experiment(&j), Err(Error::Config(_))));
        let mut clt = ergodic_cfg();
        clt.stat = StatConfig {
            p: 0.8,
            k: 1,
            regime: Regime::SecondOrderClt,
        };
        clt.driver.beta = 1.8;
        assert!(matches!(run_clt_experiment(&clt), Err(Error::Config(_))));
        let mut st = clt.clone();
        st.stat.regime = Regime::SecondOrderStable;
        st.stat.p = 0.95;
        assert!(matches!(run_stable_limit_experiment(&st), Err(Error::Config(_))));
        let mut sm = smooth_cfg();
        sm.kernel.alpha = 0.3;
        assert!(matches!(run_smooth_experiment(&sm), Err(Error::Config(_))));
    }

    #[test]
    fn ergodic_experiment_is_worker_independent() {
        let c = ergodic_cfg();
        let a = with_workers(1, || run_ergodic_experiment(&c)).unwrap().unwrap();
        let b = with_workers(4, || run_ergodic_experiment(&c)).unwrap().unwrap();
        assert_eq!(a.deterministic_json().unwrap(), b.deterministic_json().unwrap());
        assert_eq!(a.summaries.len(), 3);
        assert!(a.pass_flags.iter().all(|f| default_tolerances().contains_key(&f.tolerance)));
    }

    #[test]
    fn smooth_single_jump_matches_integral() {
        // One jump at 0.2: V scaled -> int_0^1 |g'(u - 0.2)|^2 du.
        let kernel = KernelSpec::power_exp(1.5, 1.0, 1.0);
        let jumps = crate::stable_rng::JumpRecord::new((-1.0, 1.0), vec![(0.2, 1.0)]).unwrap();
        let n = 4096;
        let raw = power_variation(&simulate_cp_driven_path(&kernel, &jumps, n).unwrap(), 2.0, 1).unwrap().raw;
        let scaled = n as f64 * raw;
        let exact = Integrator::new(1e-13, 1e-12)
            .integrate(|u| kernel.g_deriv(u, 1).unwrap().powi(2), 0.0, 0.8)
            .value;
        assert!((scaled - exact).abs() / exact < 2e-3, "{scaled} {exact}");
        let f = simulate_f_integral_cp(&kernel, 1, 2.0, 1.8, &jumps, 1 << 14).unwrap();
        assert!((f.value - exact).abs() / exact < 1e-4, "{} {exact}", f.value);
    }

    #[test]
    fn smooth_experiment_runs_and_reports() {
        let r = run_smooth_experiment(&smooth_cfg()).unwrap();
        assert_eq!(r.summaries.len(), 3);
        assert!(r.rate_fit.is_some());
        assert!(r.summary_csv().starts_with("# levy-pv summary v1\nn,count"));
        assert!(r.verdict().lines().last().unwrap().starts_with("smooth:"));
    }

    #[test]
    fn report_outputs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_smooth_experiment(&smooth_cfg()).unwrap();
        r.write_outputs(dir.path()).unwrap();
        for f in ["report.json", "summary.csv", "verdict.txt"] {
            assert!(dir.path().join(f).exists());
        }
        let back: MCReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back.deterministic_json().unwrap(), r.deterministic_json().unwrap());
    }

    #[test]
    fn stable_tail_constant_matches_closed_forms() {
        // beta = 1: Cauchy, P(|X| > x) ~ 2/(pi x).
        assert!((stable_tail_constant(1.0) - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        // Alternative form (1-b)/(Gamma(2-b) cos(pi b/2)).
        let b: f64 = 1.8;
        let alt = (1.0 - b) / (gamma(2.0 - b) * (std::f64::consts::FRAC_PI_2 * b).cos());
        assert!((stable_tail_constant(b) - alt).abs() < 1e-12);
    }
}
