//! Command-line front end for spatial autoregressive model averaging.
//!
//! Four subcommands cover the workflow end to end:
//!
//! * `run` fits the model-averaged SAC posterior for a dataset and
//!   adjacency structure, optionally alongside the MCMC oracle, and
//!   writes the artifact set (summary.json, weights.csv, marginal and
//!   impact density files) to an output directory.
//! * `simulate` draws a synthetic dataset from a SAC process with known
//!   parameters, for calibration studies and demos.
//! * `lattice` writes adjacency edge lists for regular geometries (rook
//!   grids and rings) so the other commands have something to chew on
//!   without real shapefiles.
//! * `fetch-italy` documents where the turnover benchmark lives and
//!   validates a local copy before a run.
//!
//! A typical synthetic session:
//!
//! ```text
//! sacbma lattice --rows 20 --cols 20 --out grid.txt
//! sacbma simulate --adjacency grid.txt --n 400 --beta 1,0.5 \
//!     --rho 0.7 --lambda 0.3 --out synth.csv
//! sacbma run --data synth.csv --adjacency grid.txt \
//!     --response outcome --covariates x1 --mcmc --out results
//! ```
//!
//! Every `run` option can also live in a TOML config file (see the
//! `config` module docs); flags override file keys, which override the
//! built-in defaults. Log verbosity follows `RUST_LOG`, with warnings
//! (lattice boundary mass, acceptance rates outside the useful band)
//! shown by default.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sac_bma::{
    load_adjacency, load_dataset, run_pipeline, simulate_sac, Dataset, Error, IntervalPrior,
    McmcConfig, PriorSpec, Result, RunConfig, RunReport, TauPrior,
};

use crate::config::{
    build_grid, parse_dims, parse_pair, pick, pick_flag, split_list, FileConfig,
    DEFAULT_BETA_PRECISION, DEFAULT_DIMS, DEFAULT_SEMI_AMPLITUDE, DEFAULT_TAU_RATE,
    DEFAULT_TAU_SHAPE,
};

/// Where the turnover benchmark is distributed.
const ITALY_URL: &str = "http://ksgleditsch.com/srm_book.html";

/// Number of single-member districts in the benchmark.
const ITALY_REGIONS: usize = 477;

#[derive(Parser)]
#[command(
    name = "sacbma",
    version,
    about = "Bayesian model averaging for spatial autoregressive combined models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the averaged posterior and write the artifact set.
    Run(Box<RunArgs>),
    /// Draw a synthetic dataset from a SAC process with known parameters.
    Simulate(SimulateArgs),
    /// Write an adjacency edge list for a regular lattice.
    Lattice(LatticeArgs),
    /// Show how to obtain the turnover benchmark and validate a local copy.
    FetchItaly(FetchItalyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; any flag below overrides its key of the same name.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Region CSV with a header row; row i is node i of the adjacency.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Adjacency edge list ("i j" or "i j weight" per line).
    #[arg(long)]
    adjacency: Option<PathBuf>,
    /// Response column name.
    #[arg(long)]
    response: Option<String>,
    /// Comma-separated covariate columns; empty fits the intercept-only model.
    #[arg(long)]
    covariates: Option<String>,
    /// Also include spatially lagged copies of the covariates.
    #[arg(long)]
    lagged: bool,
    /// Lattice dimensions over (rho, lambda) [default: 20x20].
    #[arg(long, value_name = "K1xK2")]
    grid_dims: Option<String>,
    /// Pin the lattice center to this natural-scale pair instead of locating the mode.
    #[arg(long, value_name = "r,l")]
    grid_center: Option<String>,
    /// Natural-scale standard errors sizing the pinned lattice (requires --grid-center).
    #[arg(long, value_name = "s1,s2")]
    grid_se: Option<String>,
    /// Lattice half-width in standard deviations per axis [default: 3].
    #[arg(long)]
    semi_amplitude: Option<f64>,
    /// Gaussian prior precision on the coefficients [default: 0.001].
    #[arg(long)]
    beta_precision: Option<f64>,
    /// Shape of the Gamma prior on the noise precision [default: 0.01].
    #[arg(long)]
    tau_shape: Option<f64>,
    /// Rate of the Gamma prior on the noise precision [default: 0.01].
    #[arg(long)]
    tau_rate: Option<f64>,
    /// Also run the MCMC oracle and report both parameter tables.
    #[arg(long)]
    mcmc: bool,
    /// Oracle burn-in sweeps [default: 10000].
    #[arg(long)]
    burn_in: Option<usize>,
    /// Oracle post-burn-in sweeps [default: 90000].
    #[arg(long)]
    iterations: Option<usize>,
    /// Keep one oracle draw per this many sweeps [default: 10].
    #[arg(long)]
    thin: Option<usize>,
    /// Master seed for the whole run [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the lattice stage [default: all cores].
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for the artifact set [default: sacbma-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report impacts for the intercept too (a global shift has no
    /// spatial decomposition of interest, so it is skipped by default).
    #[arg(long)]
    impact_intercept: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Adjacency edge list for the simulated regions.
    #[arg(long)]
    adjacency: PathBuf,
    /// Number of regions in the adjacency file.
    #[arg(long)]
    n: usize,
    /// Comma-separated coefficients, intercept first; one standard-normal
    /// covariate column is drawn per entry after the first.
    #[arg(long)]
    beta: String,
    /// Autocorrelation on the response.
    #[arg(long)]
    rho: f64,
    /// Autocorrelation on the error.
    #[arg(long)]
    lambda: f64,
    /// Noise precision.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Generator seed; the same seed reproduces the dataset exactly.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Response column name in the written CSV.
    #[arg(long, default_value = "outcome")]
    response: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LatticeArgs {
    /// Rook-neighbor grid height (with --cols).
    #[arg(long)]
    rows: Option<usize>,
    /// Rook-neighbor grid width (with --rows).
    #[arg(long)]
    cols: Option<usize>,
    /// Cycle of this many nodes, each adjacent to its two neighbors.
    #[arg(long)]
    ring: Option<usize>,
    /// Output edge-list path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FetchItalyArgs {
    /// District CSV to validate (477 rows expected).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Adjacency edge list to validate against the 477 districts.
    #[arg(long)]
    adjacency: Option<PathBuf>,
    /// Response column expected in the CSV.
    #[arg(long, default_value = "turnover")]
    response: String,
    /// Comma-separated covariate columns expected in the CSV.
    #[arg(long, default_value = "GDPCAP")]
    covariates: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Lattice(args) => cmd_lattice(args),
        Command::FetchItaly(args) => cmd_fetch_italy(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

/// Merges flags, config file, and defaults into a pipeline configuration.
fn resolve_run(args: &RunArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::empty(),
    };

    let data_path = pick(args.data.clone(), &file, "data")?
        .ok_or_else(|| Error::Config("--data (or config key 'data') is required".into()))?;
    let adjacency_path = pick(args.adjacency.clone(), &file, "adjacency")?
        .ok_or_else(|| Error::Config("--adjacency (or config key 'adjacency') is required".into()))?;
    let response = pick(args.response.clone(), &file, "response")?
        .ok_or_else(|| Error::Config("--response (or config key 'response') is required".into()))?;
    let covariates = pick(args.covariates.clone(), &file, "covariates")?
        .map(|list| split_list(&list))
        .unwrap_or_default();

    let dims = match pick(args.grid_dims.clone(), &file, "grid-dims")? {
        Some(text) => parse_dims(&text)?,
        None => DEFAULT_DIMS,
    };
    let center = pick(args.grid_center.clone(), &file, "grid-center")?
        .map(|text| parse_pair("grid-center", &text))
        .transpose()?;
    let se = pick(args.grid_se.clone(), &file, "grid-se")?
        .map(|text| parse_pair("grid-se", &text))
        .transpose()?;
    let semi_amplitude =
        pick(args.semi_amplitude, &file, "semi-amplitude")?.unwrap_or(DEFAULT_SEMI_AMPLITUDE);

    let priors = PriorSpec {
        beta_precision: pick(args.beta_precision, &file, "beta-precision")?
            .unwrap_or(DEFAULT_BETA_PRECISION),
        tau: TauPrior::Gamma {
            shape: pick(args.tau_shape, &file, "tau-shape")?.unwrap_or(DEFAULT_TAU_SHAPE),
            rate: pick(args.tau_rate, &file, "tau-rate")?.unwrap_or(DEFAULT_TAU_RATE),
        },
        rho_prior: IntervalPrior::Uniform,
        lambda_prior: IntervalPrior::Uniform,
    };

    let seed = pick(args.seed, &file, "seed")?.unwrap_or(1);
    let mcmc = if pick_flag(args.mcmc, &file, "mcmc")? {
        let defaults = McmcConfig::default();
        Some(McmcConfig {
            burn_in: pick(args.burn_in, &file, "burn-in")?.unwrap_or(defaults.burn_in),
            iterations: pick(args.iterations, &file, "iterations")?.unwrap_or(defaults.iterations),
            thin: pick(args.thin, &file, "thin")?.unwrap_or(defaults.thin),
            rw_scales: None,
            seed,
            init: None,
        })
    } else {
        None
    };

    Ok(RunConfig {
        data_path,
        adjacency_path,
        response,
        covariates,
        include_lagged: pick_flag(args.lagged, &file, "lagged")?,
        priors,
        grid: build_grid(dims, center, se, semi_amplitude)?,
        mcmc,
        include_intercept_impacts: args.impact_intercept,
        output_dir: pick(args.out.clone(), &file, "out")?
            .unwrap_or_else(|| PathBuf::from("sacbma-out")),
        threads: pick(args.threads, &file, "threads")?,
        seed,
    })
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = resolve_run(args)?;
    let report = run_pipeline(&cfg)?;
    print_report(&report, &cfg.output_dir);
    Ok(())
}

/// Renders the summary tables on stdout. The same numbers land in
/// summary.json at full precision; this is the at-a-glance view.
fn print_report(report: &RunReport, out: &Path) {
    let model = &report.model;
    println!(
        "model: n = {}, response = {}, design columns = {}",
        model.n,
        model.response,
        model.columns.join(", ")
    );
    let lat = &report.lattice;
    println!(
        "lattice: {} x {} nodes centered at rho = {:.4}, lambda = {:.4} \
         (model ess {:.1}, boundary mass {:.2e})",
        lat.dims.0, lat.dims.1, lat.center.0, lat.center.1, lat.ess, lat.boundary_mass
    );
    println!();

    let width = report
        .parameters
        .iter()
        .map(|row| row.name.len())
        .chain(std::iter::once("parameter".len()))
        .max()
        .unwrap_or(9);
    println!(
        "{:<width$}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}",
        "parameter", "mean", "sd", "2.5%", "50%", "97.5%"
    );
    for row in &report.parameters {
        let b = &row.bma;
        println!(
            "{:<width$}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}",
            row.name, b.mean, b.sd, b.q025, b.median, b.q975
        );
    }

    if let Some(info) = &report.mcmc {
        println!();
        println!(
            "mcmc oracle: {} draws, acceptance rho {:.2}, lambda {:.2}",
            info.draws, info.acceptance_rho, info.acceptance_lambda
        );
        println!(
            "{:<width$}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}  {:>8}",
            "parameter", "mean", "sd", "2.5%", "50%", "97.5%", "ess"
        );
        for row in &report.parameters {
            if let Some(c) = &row.mcmc {
                println!(
                    "{:<width$}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>8.0}",
                    row.name, c.mean, c.sd, c.q025, c.median, c.q975, c.ess
                );
            }
        }
    }

    println!();
    println!("artifacts written to {}", out.display());
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let beta = args
        .beta
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("beta: cannot parse '{}'", t.trim())))
        })
        .collect::<Result<Vec<f64>>>()?;
    let w = load_adjacency(&args.adjacency, args.n)?.row_standardize()?;
    let data = simulate_sac(&w, &beta, args.rho, args.lambda, args.tau, None, args.seed)?;
    write_dataset_csv(&data, &args.response, &args.out)?;
    println!(
        "wrote {} regions with {} covariate column(s) to {}",
        data.n(),
        data.p() - 1,
        args.out.display()
    );
    Ok(())
}

/// Writes a dataset as a header CSV: the response column first, then the
/// covariate columns (the implied intercept is not written).
fn write_dataset_csv(data: &Dataset, response: &str, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    let mut header = vec![response.to_string()];
    header.extend(data.names()[1..].iter().cloned());
    writeln!(out, "{}", header.join(","))?;
    let (y, x) = (data.y(), data.x());
    for i in 0..data.n() {
        let mut fields = vec![format!("{}", y[i])];
        for j in 1..data.p() {
            fields.push(format!("{}", x[(i, j)]));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

fn cmd_lattice(args: &LatticeArgs) -> Result<()> {
    let (label, edges) = match (args.rows, args.cols, args.ring) {
        (Some(rows), Some(cols), None) => (
            format!("rook lattice {rows}x{cols}"),
            rook_edges(rows, cols)?,
        ),
        (None, None, Some(n)) => (format!("ring of {n} nodes"), ring_edges(n)?),
        _ => {
            return Err(Error::Config(
                "give either --rows and --cols, or --ring".into(),
            ))
        }
    };
    let file = File::create(&args.out).map_err(|source| Error::File {
        path: args.out.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# {label}, 0-based node indices")?;
    for (i, j) in &edges {
        writeln!(out, "{i} {j}")?;
    }
    println!(
        "wrote {} ({} directed edges) to {}",
        label,
        edges.len(),
        args.out.display()
    );
    Ok(())
}

/// Edge list of a rows x cols rook-neighbor grid, both directions of
/// every adjacency, nodes numbered row-major from zero.
fn rook_edges(rows: usize, cols: usize) -> Result<Vec<(usize, usize)>> {
    if rows * cols < 2 {
        return Err(Error::Config(
            "a rook lattice needs at least two nodes".into(),
        ));
    }
    let mut edges = Vec::with_capacity(4 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let node = r * cols + c;
            if c + 1 < cols {
                edges.push((node, node + 1));
                edges.push((node + 1, node));
            }
            if r + 1 < rows {
                edges.push((node, node + cols));
                edges.push((node + cols, node));
            }
        }
    }
    Ok(edges)
}

/// Edge list of an n-cycle, both directions of every adjacency.
fn ring_edges(n: usize) -> Result<Vec<(usize, usize)>> {
    if n < 3 {
        return Err(Error::Config("a ring needs at least three nodes".into()));
    }
    let mut edges = Vec::with_capacity(2 * n);
    for i in 0..n {
        let j = (i + 1) % n;
        edges.push((i, j));
        edges.push((j, i));
    }
    Ok(edges)
}

fn cmd_fetch_italy(args: &FetchItalyArgs) -> Result<()> {
    if args.data.is_none() && args.adjacency.is_none() {
        print!("{}", provenance_text());
        return Ok(());
    }
    if let Some(path) = &args.data {
        let covariates = split_list(&args.covariates);
        let data = load_dataset(path, &args.response, &covariates)?;
        if data.n() != ITALY_REGIONS {
            return Err(Error::Dimension {
                context: "benchmark district count".into(),
                expected: ITALY_REGIONS,
                got: data.n(),
            });
        }
        println!(
            "validated {}: {} districts, response '{}', covariates [{}]",
            path.display(),
            data.n(),
            args.response,
            covariates.join(", ")
        );
    }
    if let Some(path) = &args.adjacency {
        load_adjacency(path, ITALY_REGIONS)?.row_standardize()?;
        println!(
            "validated {}: adjacency covers {} districts, none isolated",
            path.display(),
            ITALY_REGIONS
        );
    }
    Ok(())
}

fn provenance_text() -> String {
    format!(
        "The turnover benchmark covers the {ITALY_REGIONS} single-member districts\n\
         (collegi) of the Italian electoral system: turnover at the 2001 national\n\
         election together with GDP per capita (GDPCAP, in million Lire). The data\n\
         are distributed with the spatial regression materials at\n\
         \n\
         \x20   {ITALY_URL}\n\
         \n\
         and are neither bundled nor downloaded by this tool. Fetch them from that\n\
         page, export the district table as a header CSV with one row per district,\n\
         and construct the adjacency upstream: districts whose centroids lie within\n\
         50 km are neighbors, so are contiguous districts, and Elba is joined to\n\
         the mainland. Write the adjacency as an edge list (one \"i j\" pair per\n\
         line) in the same row order as the CSV, then check both files with\n\
         \n\
         \x20   sacbma fetch-italy --data collegi.csv --adjacency collegi.adj\n\
         \n\
         A passing check confirms the district count ({ITALY_REGIONS}), the named\n\
         columns, and that every district has at least one neighbor.\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use sac_bma::GridSetting;

    fn bare_run_args() -> RunArgs {
        RunArgs {
            config: None,
            data: Some(PathBuf::from("d.csv")),
            adjacency: Some(PathBuf::from("a.txt")),
            response: Some("y".into()),
            covariates: None,
            lagged: false,
            grid_dims: None,
            grid_center: None,
            grid_se: None,
            semi_amplitude: None,
            beta_precision: None,
            tau_shape: None,
            tau_rate: None,
            mcmc: false,
            burn_in: None,
            iterations: None,
            thin: None,
            seed: None,
            threads: None,
            out: None,
            impact_intercept: false,
        }
    }

    #[test]
    fn defaults_resolve() {
        let cfg = resolve_run(&bare_run_args()).unwrap();
        assert!(cfg.covariates.is_empty());
        assert!(cfg.mcmc.is_none());
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.output_dir, PathBuf::from("sacbma-out"));
        match cfg.grid {
            GridSetting::Auto {
                dims,
                semi_amplitude,
            } => {
                assert_eq!(dims, DEFAULT_DIMS);
                assert_eq!(semi_amplitude, DEFAULT_SEMI_AMPLITUDE);
            }
            other => panic!("expected automatic lattice, got {other:?}"),
        }
        match cfg.priors.tau {
            TauPrior::Gamma { shape, rate } => {
                assert_eq!(shape, DEFAULT_TAU_SHAPE);
                assert_eq!(rate, DEFAULT_TAU_RATE);
            }
            ref other => panic!("expected Gamma noise prior, got {other:?}"),
        }
    }

    #[test]
    fn mcmc_flag_enables_oracle_with_run_seed() {
        let mut args = bare_run_args();
        args.mcmc = true;
        args.seed = Some(9);
        args.iterations = Some(500);
        let cfg = resolve_run(&args).unwrap();
        let oracle = cfg.mcmc.expect("oracle enabled");
        assert_eq!(oracle.seed, 9);
        assert_eq!(oracle.iterations, 500);
        assert_eq!(oracle.burn_in, McmcConfig::default().burn_in);
    }

    #[test]
    fn missing_required_keys_are_reported() {
        let mut args = bare_run_args();
        args.response = None;
        let err = resolve_run(&args).unwrap_err().to_string();
        assert!(err.contains("response"), "{err}");
    }

    #[test]
    fn lattice_shapes() {
        assert_eq!(rook_edges(3, 4).unwrap().len(), 2 * (3 * 3 + 2 * 4));
        assert_eq!(ring_edges(5).unwrap().len(), 10);
        assert!(rook_edges(1, 1).is_err());
        assert!(ring_edges(2).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
