//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 configuration error,
//! 3 numerical tolerance not met, 4 verification failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use levy_pv::config::{apply_overrides, default_config, parse_config_unchecked, to_toml};
use levy_pv::constants::{compute_limit_constants, ConstantParams};
use levy_pv::error::{Error, Result};
use levy_pv::kernel::KernelSpec;
use levy_pv::mc_harness::{default_tolerances, run_experiment, run_ratio_estimator_experiment, with_workers, MCReport};
use levy_pv::simulate::{sample_cp_record, simulate_cp_driven_path, EngineOptions, SamplePath, StablePathSimulator};
use levy_pv::stable_rng::{DriverKind, SeedStream};
use levy_pv::statistics::{power_variation, ratio_estimator, scale_statistic, PowerVariationResult, Regime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    JumpLimit,
    Ergodic,
    Smooth,
    SecondOrderClt,
    SecondOrderStable,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::JumpLimit => Regime::JumpLimit,
            RegimeArg::Ergodic => Regime::Ergodic,
            RegimeArg::Smooth => Regime::Smooth,
            RegimeArg::SecondOrderClt => Regime::SecondOrderClt,
            RegimeArg::SecondOrderStable => Regime::SecondOrderStable,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "levy-pv", version, about = "Power variations of Levy-driven moving averages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides mc.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replications.
    #[arg(long, global = true, env = "LEVYPV_WORKERS")]
    workers: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    /// Configuration override `section.key=value`; repeatable.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    reps: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one path and write it as CSV or JSON.
    Simulate,
    /// Power variation of a path file.
    Stats {
        /// Path CSV written by `simulate`.
        #[arg(long)]
        input: PathBuf,
        /// Scale the statistic with the exponent of this regime (needs --alpha, --beta).
        #[arg(long, value_enum)]
        regime: Option<RegimeArg>,
    },
    /// Limit constants for (alpha, beta, p, k).
    Constants {
        #[arg(long, default_value_t = 1.0)]
        c0: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Relative tolerance of the quadratures.
        #[arg(long, default_value_t = 1e-2)]
        tol: f64,
        /// Largest lag of the eta^2 series.
        #[arg(long, default_value_t = 256)]
        i_max: usize,
    },
    /// Ratio estimator of alpha + 1/beta, from a path file or simulated paths.
    Estimate {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Accepted distance from alpha + 1/beta.
        #[arg(long, default_value_t = 0.05)]
        band: f64,
    },
    /// Run the experiment of a configuration and gate on its tolerances.
    Verify,
    /// Print defaults or an existing report's verdict.
    Report {
        /// Print every default configuration and tolerance.
        #[arg(long)]
        defaults: bool,
        /// A report.json written by `verify`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

enum Outcome {
    Ok,
    VerificationFailed,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match run(&cli) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::VerificationFailed) => 4,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn workers(cli: &Cli) -> usize {
    cli.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1)
}

fn parallel<T: Send>(cli: &Cli, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    with_workers(workers(cli), f)?
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, text)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

/// Configuration from `--config` plus overrides, or `None` without a file.
fn load_config(cli: &Cli) -> Result<Option<levy_pv::mc_harness::ExperimentConfig>> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("config file {} not found", path.display()),
        )));
    }
    let base = parse_config_unchecked(&std::fs::read_to_string(path)?)?;
    let mut sets = cli.overrides.clone();
    let flag = |name: &str, v: Option<String>, sets: &mut Vec<String>| {
        if let Some(v) = v {
            sets.push(format!("{name}={v}"));
        }
    };
    flag("kernel.alpha", cli.alpha.map(|v| format!("{v:?}")), &mut sets);
    flag("driver.beta", cli.beta.map(|v| format!("{v:?}")), &mut sets);
    flag("stat.p", cli.p.map(|v| format!("{v:?}")), &mut sets);
    flag("stat.k", cli.k.map(|v| v.to_string()), &mut sets);
    flag("grid.n", cli.n.map(|v| format!("[{v}]")), &mut sets);
    flag("mc.replications", cli.reps.map(|v| v.to_string()), &mut sets);
    flag("mc.seed", cli.seed.map(|v| v.to_string()), &mut sets);
    let cfg = apply_overrides(&base, &sets)?;
    cfg.validate()?;
    Ok(Some(cfg))
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Simulate => simulate(cli),
        Command::Stats { input, regime } => stats(cli, input, *regime),
        Command::Constants { c0, sigma, tol, i_max } => constants(cli, *c0, *sigma, *tol, *i_max),
        Command::Estimate { input, band } => estimate(cli, input.as_deref(), *band),
        Command::Verify => verify(cli),
        Command::Report { defaults, input } => report(cli, *defaults, input.as_deref()),
    }
}

fn simulate(cli: &Cli) -> Result<Outcome> {
    let seed = cli.seed.unwrap_or(1);
    let path = match load_config(cli)? {
        Some(cfg) => {
            let n = cli.n.unwrap_or_else(|| cfg.max_n());
            let stream = SeedStream::new(cfg.mc.seed, 0);
            match cfg.driver.kind {
                DriverKind::CompoundPoisson => {
                    let jumps = sample_cp_record(&cfg.driver, cfg.mc.t_past, stream)?;
                    simulate_cp_driven_path(&cfg.kernel, &jumps, n)?
                }
                DriverKind::Stable => parallel(cli, || {
                    Ok(StablePathSimulator::new(&cfg.kernel, cfg.beta(), cfg.driver.sigma, n, cfg.mc.engine())?
                        .sample(stream))
                })?,
            }
        }
        None => {
            let alpha = cli.alpha.unwrap_or(0.25);
            let beta = cli.beta.unwrap_or(1.5);
            let n = cli.n.unwrap_or(1024);
            let kernel = KernelSpec::pure_power(alpha, 1.0);
            parallel(cli, || {
                Ok(StablePathSimulator::new(&kernel, beta, 1.0, n, EngineOptions::default())?
                    .sample(SeedStream::new(seed, 0)))
            })?
        }
    };
    let text = match cli.format {
        Format::Csv => path.to_csv(),
        Format::Json => serde_json::to_string(&path)?,
    };
    emit(cli, &text)?;
    Ok(Outcome::Ok)
}

fn read_path(input: &Path) -> Result<SamplePath> {
    let text = std::fs::read_to_string(input)?;
    if text.trim_start().starts_with('{') {
        Ok(serde_json::from_str(&text)?)
    } else {
        SamplePath::from_csv(&text)
    }
}

fn stats(cli: &Cli, input: &Path, regime: Option<RegimeArg>) -> Result<Outcome> {
    let path = read_path(input)?;
    let p = cli.p.unwrap_or(1.0);
    let k = cli.k.unwrap_or(1);
    let mut result: PowerVariationResult = power_variation(&path, p, k)?;
    if let Some(r) = regime {
        let (Some(alpha), Some(beta)) = (cli.alpha, cli.beta) else {
            return Err(Error::Config("scaling needs --alpha and --beta".into()));
        };
        result = scale_statistic(result, r.into(), alpha, beta).map_err(|e| Error::Config(e.to_string()))?;
    }
    let text = match cli.format {
        Format::Csv => format!("{}\n{}\n", PowerVariationResult::csv_header(), result.csv_row()),
        Format::Json => serde_json::to_string_pretty(&result)?,
    };
    emit(cli, &text)?;
    Ok(Outcome::Ok)
}

fn constants(cli: &Cli, c0: f64, sigma: f64, tol: f64, i_max: usize) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    let pick = |flag: Option<f64>, from_cfg: Option<f64>, name: &str| {
        flag.or(from_cfg).ok_or_else(|| Error::Config(format!("constants needs --{name} or a config")))
    };
    let params = ConstantParams {
        alpha: pick(cli.alpha, cfg.as_ref().map(|c| c.alpha()), "alpha")?,
        beta: pick(cli.beta, cfg.as_ref().map(|c| c.beta()), "beta")?,
        p: pick(cli.p, cfg.as_ref().map(|c| c.stat.p), "p")?,
        k: cli.k.or(cfg.as_ref().map(|c| c.stat.k)).unwrap_or(1),
        c0: cfg.as_ref().map(|c| c.kernel.c0).unwrap_or(c0),
        sigma: cfg.as_ref().map(|c| c.driver.sigma).unwrap_or(sigma),
    };
    info!("computing limit constants for {params:?}");
    let c = compute_limit_constants(params, tol, i_max)?;
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&c)?,
        Format::Csv => {
            let mut s = String::from("# levy-pv constants v1\nname,value,abs_error_estimate\n");
            let rows = [
                ("a_p", c.a_p),
                ("hk_beta_norm", c.hk_beta_norm),
                ("sas_abs_moment", c.sas_abs_moment),
                ("m_p", c.m_p),
                ("kappa", c.kappa),
                ("sigma_tilde", c.sigma_tilde),
            ];
            for (name, q) in rows {
                if let Some(q) = q {
                    s.push_str(&format!("{name},{:e},{:e}\n", q.value, q.abs_error_estimate));
                }
            }
            if let Some(e) = &c.eta_sq {
                s.push_str(&format!("eta_sq,{:e},{:e}\n", e.value, e.abs_error_estimate));
            }
            s
        }
    };
    emit(cli, &text)?;
    Ok(Outcome::Ok)
}

fn estimate(cli: &Cli, input: Option<&Path>, band: f64) -> Result<Outcome> {
    let p = cli.p.unwrap_or(0.5);
    if let Some(input) = input {
        let path = read_path(input)?;
        let e = ratio_estimator(&path, p)?;
        let h = levy_pv::statistics::hurst_from_ratio(e, p);
        let text = match cli.format {
            Format::Csv => format!("ratio,hurst\n{e:e},{h:e}\n"),
            Format::Json => serde_json::to_string_pretty(&serde_json::json!({"p": p, "ratio": e, "hurst": h}))?,
        };
        emit(cli, &text)?;
        return Ok(Outcome::Ok);
    }
    let alpha = cli.alpha.unwrap_or(0.25);
    let beta = cli.beta.unwrap_or(1.5);
    let n = cli.n.unwrap_or(1 << 14);
    let reps = cli.reps.unwrap_or(200);
    let seed = cli.seed.unwrap_or(1);
    let r = parallel(cli, || {
        run_ratio_estimator_experiment(alpha, beta, p, n, reps, seed, band, 0.9, EngineOptions::default())
    })?;
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(&r)?,
        Format::Csv => {
            let mut s = String::from("replication,hurst\n");
            for (i, h) in r.estimates_h.iter().enumerate() {
                s.push_str(&format!("{i},{h:e}\n"));
            }
            s
        }
    };
    emit(cli, &text)?;
    eprintln!(
        "estimate: coverage {:.3} within +-{band} of {:.4}",
        r.coverage, r.target_h
    );
    Ok(Outcome::Ok)
}

fn verify(cli: &Cli) -> Result<Outcome> {
    let Some(cfg) = load_config(cli)? else {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "verify needs --config",
        )));
    };
    info!("running {:?} experiment with {} workers", cfg.regime(), workers(cli));
    let report = parallel(cli, || run_experiment(&cfg))?;
    let dir = cli.out.clone().or_else(|| cfg.mc.output_dir.clone());
    if let Some(dir) = &dir {
        report.write_outputs(dir)?;
    }
    print_verdict(&report, dir.as_deref());
    Ok(if report.passed() {
        Outcome::Ok
    } else {
        Outcome::VerificationFailed
    })
}

fn print_verdict(report: &MCReport, dir: Option<&Path>) {
    let gated: Vec<_> = report.pass_flags.iter().filter(|f| f.gated).collect();
    let ok = gated.iter().filter(|f| f.passed).count();
    println!(
        "{}: {} ({ok}/{} gated checks passed, {:.1} s){}",
        report.experiment,
        if report.passed() { "PASS" } else { "FAIL" },
        gated.len(),
        report.runtime_seconds,
        dir.map(|d| format!(", outputs in {}", d.display())).unwrap_or_default()
    );
}

fn report(cli: &Cli, defaults: bool, input: Option<&Path>) -> Result<Outcome> {
    if defaults {
        let mut s = String::from("# Default tolerances\n[tolerances]\n");
        for (k, v) in default_tolerances() {
            s.push_str(&format!("{k} = {v:?}\n"));
        }
        for r in Regime::ALL {
            s.push_str(&format!("\n# ---- {r:?} experiment ----\n"));
            s.push_str(&to_toml(&default_config(r))?);
        }
        emit(cli, &s)?;
        return Ok(Outcome::Ok);
    }
    let Some(input) = input else {
        return Err(Error::Config("report needs --defaults or --input".into()));
    };
    let report: MCReport = serde_json::from_str(&std::fs::read_to_string(input)?)?;
    emit(cli, &report.verdict())?;
    Ok(if report.passed() {
        Outcome::Ok
    } else {
        Outcome::VerificationFailed
    })
}
