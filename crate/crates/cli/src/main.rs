//! Command-line front end: verification checks, time-series evolution,
//! stationary-profile averaging and profile fitting, serialized to
//! plot-ready CSV or JSON.

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mqpore::{default_period, EvolveOptions, SpinSystem};

/// Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O error,
/// 4 numerical error.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Numerical(String),
    CheckFailure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::CheckFailure(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Io(m)
            | CliError::Numerical(m)
            | CliError::CheckFailure(m) => m,
        }
    }
}

impl From<mqpore::Error> for CliError {
    fn from(err: mqpore::Error) -> Self {
        match err {
            mqpore::Error::Domain(m) | mqpore::Error::Contract(m) => CliError::Usage(m),
            mqpore::Error::Numerical(m) | mqpore::Error::Fit(m) => CliError::Numerical(m),
            mqpore::Error::Unsupported(m) => CliError::Usage(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Doubling {
    /// Use the parity shortcut whenever the spin count is odd.
    Auto,
    On,
    Off,
}

impl Doubling {
    fn resolve(self) -> Option<bool> {
        match self {
            Doubling::Auto => None,
            Doubling::On => Some(true),
            Doubling::Off => Some(false),
        }
    }
}

/// Coherence dynamics of uniformly coupled spin-1/2 ensembles.
///
/// All results are deterministic for a fixed configuration regardless of the
/// thread count: parallel work is reduced in a fixed sector order.
#[derive(Parser)]
#[command(name = "mqpore", version, about, long_about = None)]
struct Cli {
    /// Worker threads; 0 picks the hardware default. The MQPORE_THREADS
    /// environment variable overrides 0.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run self-checks for one system and print a pass/fail table.
    Verify {
        /// Number of spins.
        #[arg(long)]
        spins: u32,
        /// Averaged dipolar coupling constant.
        #[arg(long, default_value_t = 1.0)]
        coupling: f64,
    },
    /// Evolve the coherence spectrum over a time grid and write it out.
    Evolve {
        #[arg(long)]
        spins: u32,
        #[arg(long, default_value_t = 1.0)]
        coupling: f64,
        /// First grid point (dimensionless time t = D tau).
        #[arg(long, default_value_t = 0.0)]
        t_start: f64,
        /// Last grid point, inclusive.
        #[arg(long)]
        t_end: f64,
        /// Grid spacing.
        #[arg(long)]
        t_step: f64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, value_enum, default_value_t = Doubling::Auto)]
        odd_doubling: Doubling,
    },
    /// Average the spectrum over whole oscillation periods and write the
    /// stationary profile.
    Profile {
        #[arg(long)]
        spins: u32,
        #[arg(long, default_value_t = 1.0)]
        coupling: f64,
        /// Start of the averaging window.
        #[arg(long, default_value_t = 31.0)]
        t0: f64,
        /// Number of whole periods to average over.
        #[arg(long, default_value_t = 2)]
        k0: u32,
        /// Averaging period; defaults to 4 pi / sqrt(3), one cycle of the
        /// slowest eigenvalue gap.
        #[arg(long)]
        period: Option<f64>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, value_enum, default_value_t = Doubling::Auto)]
        odd_doubling: Doubling,
    },
    /// Fit the two-family exponential model to a stored profile.
    Fit {
        /// Profile file produced by the `profile` subcommand (CSV or JSON,
        /// detected from the content).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads(cli.threads) {
        eprintln!("error: {}", e.message());
        return ExitCode::from(e.code());
    }
    let result = match cli.command {
        Command::Verify { spins, coupling } => run_verify(spins, coupling),
        Command::Evolve {
            spins,
            coupling,
            t_start,
            t_end,
            t_step,
            output,
            format,
            odd_doubling,
        } => run_evolve(
            spins,
            coupling,
            t_start,
            t_end,
            t_step,
            &output,
            format,
            odd_doubling,
        ),
        Command::Profile {
            spins,
            coupling,
            t0,
            k0,
            period,
            output,
            format,
            odd_doubling,
        } => run_profile(
            spins,
            coupling,
            t0,
            k0,
            period.unwrap_or_else(default_period),
            &output,
            format,
            odd_doubling,
        ),
        Command::Fit {
            input,
            output,
            format,
        } => run_fit(&input, &output, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn init_threads(flag: usize) -> Result<(), CliError> {
    let count = if flag != 0 {
        flag
    } else {
        match std::env::var("MQPORE_THREADS") {
            Ok(v) => v
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("MQPORE_THREADS is not a number: {v}")))?,
            Err(_) => 0,
        }
    };
    if count > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

struct CheckTable {
    rows: Vec<(String, bool, String)>,
}

impl CheckTable {
    fn new() -> Self {
        Self { rows: Vec::new() }
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.rows.push((name.to_string(), passed, detail));
    }

    fn finish(self) -> Result<(), CliError> {
        let width = self.rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        for (name, passed, detail) in &self.rows {
            println!(
                "{name:width$}  {}  {detail}",
                if *passed { "PASS" } else { "FAIL" }
            );
        }
        match self.rows.iter().find(|r| !r.1) {
            None => Ok(()),
            Some((name, _, detail)) => Err(CliError::CheckFailure(format!(
                "check '{name}' failed: {detail}"
            ))),
        }
    }
}

fn run_verify(spins: u32, coupling: f64) -> Result<(), CliError> {
    let mut table = CheckTable::new();

    let dim_ok = mqpore::verify_dimension_identity(spins);
    table.push(
        "dimension identity",
        dim_ok,
        format!("sum of n_N(S)(2S+1) over sectors equals 2^{spins}"),
    );

    if spins < 2 {
        println!("single spin: only the dimension identity applies");
        return table.finish();
    }

    let system = SpinSystem::new(spins, coupling)?;
    let cache = mqpore::SpectralCache::build(
        &system,
        &EvolveOptions {
            odd_doubling: Some(false),
            weight_truncation: 0.0,
        },
    )?;

    let mut worst_pair = 0.0f64;
    for data in cache.sectors() {
        let vals = &data.decomp.eigenvalues;
        let d = vals.len();
        let scale = vals.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        for i in 0..d {
            worst_pair = worst_pair.max((vals[i] + vals[d - 1 - i]).abs() / scale);
        }
    }
    table.push(
        "spectrum symmetry",
        worst_pair <= 1e-10,
        format!("worst relative pairing defect {worst_pair:.2e}"),
    );

    if spins >= 3 && spins % 2 == 1 {
        let min_pos = cache.min_positive_eigenvalue().unwrap_or(f64::NAN);
        let expected = 3.0f64.sqrt() / 2.0 * coupling.abs();
        let ok = (min_pos - expected).abs() <= 1e-10 * expected.max(1.0);
        table.push(
            "minimal positive eigenvalue",
            ok,
            format!("{min_pos:.12} vs sqrt(3)/2 * |D| = {expected:.12}"),
        );
    }

    let sample_times = [0.7, 1.3, 5.0, 12.9, 31.0];
    let series = mqpore::evolve_system(&system, &sample_times)?;
    let worst_sum = series
        .spectra
        .iter()
        .map(|s| (s.total() - 1.0).abs())
        .fold(0.0f64, f64::max);
    table.push(
        "intensity sum rule",
        worst_sum <= 1e-9,
        format!("worst |sum - 1| = {worst_sum:.2e} over {} times", sample_times.len()),
    );

    if spins <= 7 {
        let mut worst = 0.0f64;
        for (spectrum, &t) in series.spectra.iter().zip(&sample_times) {
            let dense = mqpore::dense_brute_force(&system, t)?;
            for (&k, &v) in &spectrum.intensities {
                worst = worst.max((v - dense.intensity(k)).abs());
            }
        }
        table.push(
            "dense reference equivalence",
            worst <= 1e-10,
            format!("worst intensity deviation {worst:.2e}"),
        );
    }

    if spins == 5 && (coupling - 1.0).abs() < 1e-15 {
        let mut worst = 0.0f64;
        for (spectrum, &t) in series.spectra.iter().zip(&sample_times) {
            let reference = mqpore::five_spin_closed_form(t);
            for k in [0, 2, 4] {
                worst = worst.max((spectrum.intensity(k) - reference.intensity(k)).abs());
            }
        }
        table.push(
            "five-spin closed form",
            worst <= 1e-10,
            format!("worst intensity deviation {worst:.2e}"),
        );
    }

    table.finish()
}

#[allow(clippy::too_many_arguments)]
fn run_evolve(
    spins: u32,
    coupling: f64,
    t_start: f64,
    t_end: f64,
    t_step: f64,
    output: &PathBuf,
    format: Format,
    odd_doubling: Doubling,
) -> Result<(), CliError> {
    if !(t_step > 0.0) {
        return Err(CliError::Usage(format!(
            "t-step must be positive, got {t_step}"
        )));
    }
    if t_end < t_start {
        return Err(CliError::Usage(format!(
            "t-end ({t_end}) must not precede t-start ({t_start})"
        )));
    }
    let system = SpinSystem::new(spins, coupling)?;
    let mut grid = Vec::new();
    let mut i = 0u64;
    loop {
        let t = t_start + t_step * i as f64;
        if t > t_end + 1e-12 * t_step {
            break;
        }
        grid.push(t);
        i += 1;
    }
    let options = EvolveOptions {
        odd_doubling: odd_doubling.resolve(),
        weight_truncation: 0.0,
    };
    let series = mqpore::evolve_system_with(&system, &grid, &options)?;
    output::write_time_series(&series, output, format)?;
    println!(
        "wrote {} spectra ({} orders each) to {}",
        series.grid.len(),
        series.spectra[0].intensities.keys().filter(|&&k| k >= 0).count(),
        output.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_profile(
    spins: u32,
    coupling: f64,
    t0: f64,
    k0: u32,
    period: f64,
    output: &PathBuf,
    format: Format,
    odd_doubling: Doubling,
) -> Result<(), CliError> {
    let system = SpinSystem::new(spins, coupling)?;
    let mut options = mqpore::AverageOptions::default();
    options.evolve.odd_doubling = odd_doubling.resolve();
    let profile = mqpore::time_average_with(&system, t0, k0, period, &options)?;
    output::write_profile(&profile, output, format)?;
    println!(
        "wrote averaged profile (J0 = {:.6}, {} orders, quadrature step {:.3e}) to {}",
        profile.value(0),
        profile.averaged.len(),
        profile.quadrature.final_step,
        output.display()
    );
    Ok(())
}

fn run_fit(input: &PathBuf, output: &PathBuf, format: Format) -> Result<(), CliError> {
    let (split, j_bar_zero) = output::read_profile_for_fit(input)?;
    let fit = mqpore::fit_profile(&split, j_bar_zero)?;
    output::write_fit(&fit, output, format)?;
    println!(
        "wrote fit (staged alpha1 = {:.4}, joint alpha1 = {:.4}, identity residual {:.2e}) to {}",
        fit.staged.alpha1,
        fit.joint.alpha1,
        mqpore::normalization_residual(&fit),
        output.display()
    );
    Ok(())
}
