use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;

use config::parse_extended;

const EXIT_CODES: &str = "\
Exit codes: 0 success, 2 validation FAIL (oracle disagrees beyond tolerance), 1 error.

Rates are per unit time of dX = -grad V(X) dt + sqrt(2/beta) dW (unit friction).";

/// Low-temperature spectral asymptotics for overdamped Langevin dynamics.
#[derive(Parser, Debug)]
#[command(name = "metastab", version, after_help = EXIT_CODES)]
struct Cli {
    /// Output directory for CSV/JSON files and manifest.json
    #[arg(long, global = true, env = "METASTAB_OUT", default_value = "metastab-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Find and classify critical points; writes catalog.json
    Analyze(AnalyzeArgs),
    /// Harmonic spectrum table (k, lambda_k, point, multi-index)
    Harmonic(HarmonicArgs),
    /// Boundary-corrected Eyring-Kramers rates over a list of beta
    Rate(RateArgs),
    /// Offsets maximizing the asymptotic timescale separation
    Optimize(OptimizeArgs),
    /// Laplace asymptotics against adaptive quadrature
    Laplace(LaplaceArgs),
    /// Grid eigensolver against harmonic and Eyring-Kramers predictions
    ValidateGrid(GridArgs),
    /// Fleming-Viot rate and exit law against the grid eigensolver
    ValidateMc(McArgs),
    /// Dirichlet harmonic oscillator eigenvalues mu(k, theta)
    Oscillator(OscillatorArgs),
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Potential config (JSON)
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct HarmonicArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Offsets: a scalar for the lowest saddles, a JSON array, or a JSON file
    #[arg(long, default_value = "inf", allow_hyphen_values = true)]
    pub alpha: String,
    /// Number of levels
    #[arg(long, default_value_t = 4)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct RateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Offsets: a scalar for the lowest saddles, a JSON array, or a JSON file
    #[arg(long, default_value = "inf", allow_hyphen_values = true)]
    pub alpha: String,
    /// Inverse temperatures, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub beta: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Search window for finite offsets
    #[arg(long, default_value_t = 10.0)]
    pub window: f64,
}

#[derive(Args, Debug)]
pub struct LaplaceArgs {
    /// Laplace problem (JSON with f, g, x0, domain)
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,80,160")]
    pub lambdas: Vec<f64>,
    /// Relative tolerance of the quadrature oracle
    #[arg(long, default_value_t = 1e-11)]
    pub rel_tol: f64,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "inf", allow_hyphen_values = true)]
    pub alpha: String,
    /// Inverse temperatures, comma separated and increasing
    #[arg(long, value_delimiter = ',', required = true)]
    pub betas: Vec<f64>,
    /// Expected dimension; rejected if the potential disagrees
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub dim: Option<u8>,
    /// Domain (JSON); overrides the config domain and the automatic one
    #[arg(long)]
    pub domain: Option<PathBuf>,
    /// Coarse intervals per axis, comma separated
    #[arg(long, value_delimiter = ',')]
    pub intervals: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct McArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "inf", allow_hyphen_values = true)]
    pub alpha: String,
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 1000)]
    pub replicas: usize,
    /// Coarse time step; the rate is extrapolated from dt and dt/2
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Burn-in time before rate accounting
    #[arg(long, default_value_t = 1.0)]
    pub t_burn: f64,
    /// End of the Fleming-Viot run
    #[arg(long, default_value_t = 9.0)]
    pub t_max: f64,
    /// Horizon for the exit-law trajectories
    #[arg(long, default_value_t = 100.0)]
    pub exit_horizon: f64,
    #[arg(long)]
    pub domain: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub intervals: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct OscillatorArgs {
    /// Level indices, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub k: Vec<usize>,
    /// Boundary positions (numbers, inf or -inf), comma separated
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true, value_parser = parse_extended)]
    pub theta: Vec<f64>,
    #[arg(long, default_value_t = metastab::oscillator::DEFAULT_TOL)]
    pub tol: f64,
}

fn main() -> ExitCode {
    // usage errors must not collide with the validation FAIL code
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let out = cli.out;
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(&out, a),
        Command::Harmonic(a) => commands::harmonic(&out, a),
        Command::Rate(a) => commands::rate(&out, a),
        Command::Optimize(a) => commands::optimize(&out, a),
        Command::Laplace(a) => commands::laplace(&out, a),
        Command::ValidateGrid(a) => commands::validate_grid(&out, a),
        Command::ValidateMc(a) => commands::validate_mc(&out, a),
        Command::Oscillator(a) => commands::oscillator(&out, a),
    };
    match result {
        Ok(commands::Verdict::Done | commands::Verdict::Pass) => ExitCode::SUCCESS,
        Ok(commands::Verdict::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn negative_theta_parses() {
        let c = Cli::try_parse_from(["metastab", "oscillator", "--theta", "-3,inf", "--k", "0,1"]).unwrap();
        let Command::Oscillator(a) = c.command else { panic!() };
        assert_eq!(a.theta, vec![-3.0, f64::INFINITY]);
        assert!(Cli::try_parse_from(["metastab", "rate", "--config", "x", "--beta", "1", "--bogus"]).is_err());
    }
}
