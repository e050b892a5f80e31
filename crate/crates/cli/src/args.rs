use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "semfx", version, about = "Exponential-tilt regression with marginal and quantile effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model and report coefficients, carrier coefficients and fit diagnostics.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Marginal effects and quantile effects with Wald inference.
    Effects {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        taus: TauArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run a Monte Carlo design (preset name or JSON scenario file).
    Simulate(SimulateArgs),
    /// Fitted carrier curve with a pointwise 95% band on an even grid.
    Curve {
        #[command(flatten)]
        data: DataArgs,
        /// Number of grid points spanning the support.
        #[arg(long, default_value_t = 101)]
        grid_size: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Fit, effects and AIC/BIC compared with parametric baselines.
    Analyze {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        taus: TauArgs,
        /// Baseline families (normal, gamma, bernoulli, poisson); inferred from the response by default.
        #[arg(long, value_delimiter = ',')]
        family: Option<Vec<String>>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Print the JSON schema that every `--format json` output validates against.
    Schema,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Response column.
    #[arg(long)]
    pub response: String,
    /// Covariate columns, comma separated; all other columns by default.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Continuous support `lo,hi`; defaults to the observed range padded 5% on each side.
    #[arg(long, value_parser = parse_support, allow_hyphen_values = true, conflicts_with = "discrete")]
    pub support: Option<(f64, f64)>,
    /// Treat the response as discrete with its observed values as levels.
    #[arg(long)]
    pub discrete: bool,
    /// Interior knot count for the carrier spline.
    #[arg(long)]
    pub knots: Option<usize>,
    /// Gauss–Legendre nodes for the normalizing integral.
    #[arg(long)]
    pub quad_nodes: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TauArgs {
    /// Quantile levels in (0, 1), comma separated [default: 0.05,0.25,0.5,0.75,0.95 for continuous responses].
    #[arg(long, value_delimiter = ',', value_parser = parse_tau)]
    pub tau: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Output file; stdout by default.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Preset name (trunc-normal, normal, trunc-gamma, gamma, bernoulli, poisson, negbinomial) or a JSON scenario file.
    pub scenario: String,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Sample size per replicate.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "SEMFX_THREADS")]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub taus: TauArgs,
    /// Paper-style table, JSON report, or CSV rows.
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn parse_support(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [lo, hi] = parts.as_slice() else {
        return Err("expected `lo,hi`".into());
    };
    let lo: f64 = lo.parse().map_err(|_| format!("`{lo}` is not a number"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("`{hi}` is not a number"))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err("need finite lo < hi".into());
    }
    Ok((lo, hi))
}

fn parse_tau(s: &str) -> Result<f64, String> {
    let t: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(format!("quantile level {t} is outside (0, 1)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_parsing() {
        assert_eq!(parse_support("-5, 5").unwrap(), (-5.0, 5.0));
        assert!(parse_support("5,-5").is_err());
        assert!(parse_support("1").is_err());
        assert!(parse_support("a,2").is_err());
    }

    #[test]
    fn tau_range() {
        assert_eq!(parse_tau("0.5").unwrap(), 0.5);
        assert!(parse_tau("0").is_err());
        assert!(parse_tau("1").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
