//! Reproducible random ingredients.
//!
//! Every random draw in the toolkit flows from a [`SeedStream`]: a master
//! seed plus a stream id. The generator is ChaCha8 keyed by the master seed
//! and positioned on the stream id, so each stream is an independent,
//! counter-addressed sequence and results never depend on thread scheduling.
//!
//! Stable draws use the Chambers–Mallows–Stuck construction. Scale follows
//! the characteristic-function convention `exp(-sigma^beta |u|^beta)`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Generator type handed out by [`SeedStream::rng`].
pub type StreamRng = ChaCha8Rng;

/// A `(master_seed, stream_id)` pair naming one reproducible sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// A derived stream for an independent ingredient of the same replication.
    pub fn substream(&self, tag: u64) -> SeedStream {
        SeedStream {
            master_seed: self.master_seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5151))),
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 2.0) {
        return domain(format!("stability index beta must lie in (0,2], got {beta}"));
    }
    Ok(())
}

/// Symmetric beta-stable sampler with scale `sigma`.
#[derive(Debug, Clone, Copy)]
pub struct SymmetricStable {
    beta: f64,
    sigma: f64,
    inv_beta: f64,
    expo: f64,
}

impl SymmetricStable {
    pub fn new(beta: f64, sigma: f64) -> Result<Self> {
        check_beta(beta)?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return domain(format!("scale sigma must be positive, got {sigma}"));
        }
        Ok(Self {
            beta,
            sigma,
            inv_beta: 1.0 / beta,
            expo: (1.0 - beta) / beta,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Standard (unit-scale) draw.
    #[inline]
    pub fn sample_standard<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = PI * (rng.random::<f64>() - 0.5);
        if self.beta == 1.0 {
            return v.tan();
        }
        let w: f64 = Exp1.sample(rng);
        if self.beta == 2.0 {
            return 2.0 * v.sin() * w.sqrt();
        }
        let b = self.beta;
        (b * v).sin() / v.cos().powf(self.inv_beta) * (((1.0 - b) * v).cos() / w).powf(self.expo)
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sigma * self.sample_standard(rng)
    }

    /// Fills `out` with draws of scale `sigma * scale`.
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64, out: &mut [f64]) {
        let s = self.sigma * scale;
        for x in out.iter_mut() {
            *x = s * self.sample_standard(rng);
        }
    }
}

/// One symmetric beta-stable draw with characteristic function `exp(-sigma^beta |u|^beta)`.
pub fn sample_sas(beta: f64, sigma: f64, stream: SeedStream) -> Result<f64> {
    Ok(SymmetricStable::new(beta, sigma)?.sample(&mut stream.rng()))
}

/// Totally right-skewed, mean-zero rho-stable sampler, `rho` in (1,2).
#[derive(Debug, Clone, Copy)]
pub struct SkewedStable {
    rho: f64,
    eta: f64,
    shift: f64,
    factor: f64,
}

impl SkewedStable {
    pub fn new(rho: f64, eta: f64) -> Result<Self> {
        if !(rho > 1.0 && rho < 2.0) {
            return domain(format!("skewed stable index rho must lie in (1,2), got {rho}"));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return domain(format!("skewed stable scale eta must be positive, got {eta}"));
        }
        let t = (PI * rho / 2.0).tan();
        Ok(Self {
            rho,
            eta,
            shift: t.atan() / rho,
            factor: (1.0 + t * t).powf(1.0 / (2.0 * rho)),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = PI * (rng.random::<f64>() - 0.5);
        let w: f64 = Exp1.sample(rng);
        let a = self.rho;
        let vb = v + self.shift;
        let x = self.factor * (a * vb).sin() / v.cos().powf(1.0 / a)
            * ((v - a * vb).cos() / w).powf((1.0 - a) / a);
        self.eta * x
    }
}

/// One mean-zero draw with characteristic function
/// `exp(-eta^rho |t|^rho (1 - i sign(t) tan(pi rho / 2)))`.
pub fn sample_skewed_stable(rho: f64, eta: f64, stream: SeedStream) -> Result<f64> {
    Ok(SkewedStable::new(rho, eta)?.sample(&mut stream.rng()))
}

/// Symmetric jump-size law of a compound Poisson driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JumpLaw {
    /// `+-a` with equal probability.
    TwoPoint { a: f64 },
    /// Random sign times Pareto(index, x_min): `P(|J| > t) = (t/x_min)^(-index)`.
    Pareto { index: f64, x_min: f64 },
    /// Symmetric stable conditioned on `|J| <= cutoff`.
    TruncatedStable { beta: f64, sigma: f64, cutoff: f64 },
}

impl JumpLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            JumpLaw::TwoPoint { a } if !(a > 0.0 && a.is_finite()) => domain("two_point jump size must be positive"),
            JumpLaw::Pareto { index, x_min } if !(index > 0.0 && x_min > 0.0) => {
                domain("pareto jump law needs positive index and x_min")
            }
            JumpLaw::TruncatedStable { beta, sigma, cutoff } => {
                check_beta(beta)?;
                if !(sigma > 0.0 && cutoff > 0.0) {
                    return domain("truncated_stable jump law needs positive sigma and cutoff");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        match *self {
            JumpLaw::TwoPoint { a } => sign * a,
            JumpLaw::Pareto { index, x_min } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                sign * x_min * u.powf(-1.0 / index)
            }
            JumpLaw::TruncatedStable { beta, sigma, cutoff } => {
                let s = SymmetricStable::new(beta, sigma).expect("validated jump law");
                loop {
                    let x = s.sample(rng);
                    if x.abs() <= cutoff {
                        return x;
                    }
                }
            }
        }
    }
}

impl fmt::Display for JumpLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            JumpLaw::TwoPoint { a } => write!(f, "two_point:{a}"),
            JumpLaw::Pareto { index, x_min } => write!(f, "pareto:{index}:{x_min}"),
            JumpLaw::TruncatedStable { beta, sigma, cutoff } => {
                write!(f, "truncated_stable:{beta}:{sigma}:{cutoff}")
            }
        }
    }
}

impl FromStr for JumpLaw {
    type Err = Error;

    /// Parses `two_point:a`, `pareto:index[:x_min]` or `truncated_stable:beta:sigma:cutoff`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("jump law '{s}' is missing parameter {i}")))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("jump law '{s}': {e}")))
        };
        let law = match parts[0] {
            "two_point" if parts.len() == 2 => JumpLaw::TwoPoint { a: num(1)? },
            "pareto" if parts.len() == 2 => JumpLaw::Pareto { index: num(1)?, x_min: 1.0 },
            "pareto" if parts.len() == 3 => JumpLaw::Pareto { index: num(1)?, x_min: num(2)? },
            "truncated_stable" if parts.len() == 4 => JumpLaw::TruncatedStable {
                beta: num(1)?,
                sigma: num(2)?,
                cutoff: num(3)?,
            },
            _ => return Err(Error::Config(format!("unrecognised jump law '{s}'"))),
        };
        law.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(law)
    }
}

impl Serialize for JumpLaw {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for JumpLaw {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Jump times and sizes of a compound Poisson path on a window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub window: (f64, f64),
    pub times: Vec<f64>,
    pub sizes: Vec<f64>,
}

impl JumpRecord {
    pub fn new(window: (f64, f64), mut jumps: Vec<(f64, f64)>) -> Result<Self> {
        if !(window.0 < window.1) {
            return domain("jump window must satisfy t0 < t1");
        }
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
        if jumps.windows(2).any(|w| w[0].0 >= w[1].0) {
            return domain("jump times must be distinct");
        }
        if jumps.iter().any(|j| j.0 < window.0 || j.0 > window.1) {
            return domain("jump times must lie inside the window");
        }
        Ok(Self {
            window,
            times: jumps.iter().map(|j| j.0).collect(),
            sizes: jumps.iter().map(|j| j.1).collect(),
        })
    }

    pub fn empty(window: (f64, f64)) -> Self {
        Self {
            window,
            times: Vec::new(),
            sizes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.sizes.iter().copied())
    }

    /// Jumps with times in `[a, b]`.
    pub fn restrict(&self, a: f64, b: f64) -> JumpRecord {
        let (times, sizes) = self.iter().filter(|(t, _)| *t >= a && *t <= b).unzip();
        JumpRecord {
            window: (a.max(self.window.0), b.min(self.window.1)),
            times,
            sizes,
        }
    }

    /// CSV with header `t,size`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# levy-pv jumps v1\nt,size\n");
        for (t, x) in self.iter() {
            s.push_str(&format!("{t:.17e},{x:.17e}\n"));
        }
        s
    }
}

/// Poisson(lambda (t1 - t0)) jumps with uniform times and i.i.d. sizes.
pub fn sample_jumps_with<R: Rng + ?Sized>(
    intensity: f64,
    law: &JumpLaw,
    window: (f64, f64),
    rng: &mut R,
) -> Result<JumpRecord> {
    if !(window.0 < window.1) {
        return domain("jump window must be nonempty (t0 < t1)");
    }
    if !(intensity > 0.0) || !intensity.is_finite() {
        return domain("jump intensity must be positive");
    }
    law.validate()?;
    let mean = intensity * (window.1 - window.0);
    let count = Poisson::new(mean)
        .map_err(|e| Error::Domain(format!("poisson mean {mean}: {e}")))?
        .sample(rng) as usize;
    let mut times: Vec<f64> = (0..count)
        .map(|_| window.0 + (window.1 - window.0) * rng.random::<f64>())
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let sizes = times.iter().map(|_| law.sample(rng)).collect();
    Ok(JumpRecord {
        window,
        times,
        sizes,
    })
}

pub fn sample_jumps(intensity: f64, law: &JumpLaw, window: (f64, f64), stream: SeedStream) -> Result<JumpRecord> {
    sample_jumps_with(intensity, law, window, &mut stream.rng())
}

/// Uniform `[0,1)` marks.
pub fn sample_marks<R: RngCore + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    (0..count).map(|_| rng.random::<f64>()).collect()
}

/// The driving Lévy process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    Stable,
    CompoundPoisson,
}

/// Driver description: symmetric stable or compound Poisson.
///
/// For compound Poisson drivers `beta` is the nominal Blumenthal–Getoor index
/// used to classify regimes; the simulated process itself is finite-activity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub kind: DriverKind,
    pub beta: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump_law: Option<JumpLaw>,
}

fn one() -> f64 {
    1.0
}

impl DriverSpec {
    pub fn stable(beta: f64, sigma: f64) -> Self {
        Self {
            kind: DriverKind::Stable,
            beta,
            sigma,
            lambda: 0.0,
            jump_law: None,
        }
    }

    pub fn compound_poisson(beta: f64, lambda: f64, law: JumpLaw) -> Self {
        Self {
            kind: DriverKind::CompoundPoisson,
            beta,
            sigma: 1.0,
            lambda,
            jump_law: Some(law),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DriverKind::Stable => {
                check_beta(self.beta)?;
                if !(self.sigma > 0.0) {
                    return domain("stable driver needs sigma > 0");
                }
            }
            DriverKind::CompoundPoisson => {
                if !(self.beta >= 0.0 && self.beta <= 2.0) {
                    return domain("driver beta must lie in [0,2]");
                }
                if !(self.lambda > 0.0) {
                    return domain("compound Poisson driver needs lambda > 0");
                }
                self.jump_law
                    .ok_or_else(|| Error::Domain("compound Poisson driver needs a jump_law".into()))?
                    .validate()?;
            }
        }
        Ok(())
    }
}

/// Skewness term `tan(pi rho / 2)` of the right-skewed stable law.
pub fn skewness_term(rho: f64) -> f64 {
    (FRAC_PI_2 * rho).tan()
}
