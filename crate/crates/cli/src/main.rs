//! Command-line front end: fuse problems, sweep weight grids, run the
//! distributed-estimation experiment, verify conservatism/optimality
//! properties, and export ellipse boundaries.
//!
//! Exit codes: 0 success, 1 property failure, 2 input error, 3 numeric
//! error. Failures print a machine-readable `{"error": ...}` object on
//! standard error. Every file written via `--out` is accompanied by a
//! `<out>.manifest.json` recording the config hash, seed and tool version.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

use covint::error::Error as CoreError;
use covint::matrix::{ellipse_boundary, SymMatrix};
use covint::sim::{run_monte_carlo, Rule, ScenarioConfig};
use covint::suites::{fuse_rule, input::ProblemInput, run_suite, Suite};
use covint::weights::{evaluate_cost, optimize_pair, optimize_simplex, Cost, DEFAULT_OMEGA_TOL};

const EXIT_PROPERTY_FAILURE: i32 = 1;
const EXIT_INPUT_ERROR: i32 = 2;
const EXIT_NUMERIC_ERROR: i32 = 3;

#[derive(Parser)]
#[command(name = "covint", version, about = "Conservative covariance fusion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InputSource {
    /// Problem or scenario JSON file.
    #[arg(long, value_name = "FILE", conflicts_with = "builtin")]
    config: Option<PathBuf>,
    /// Bundled input: fig1, toy-identity or ring4.
    #[arg(long, value_name = "NAME")]
    builtin: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse the estimates of a problem file under a rule.
    Fuse {
        #[command(flatten)]
        input: InputSource,
        #[arg(long)]
        rule: Rule,
        /// Comma-separated simplex weights.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        omega: Option<Vec<f64>>,
        /// Optimize the weights instead of supplying them.
        #[arg(long)]
        optimize: bool,
        #[arg(long, default_value = "trace")]
        cost: String,
        /// Weight refinement tolerance.
        #[arg(long, default_value_t = DEFAULT_OMEGA_TOL)]
        omega_tol: f64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep a two-estimator weight grid; writes (omega, trace, logdet) rows
    /// and, for planar problems, the bound ellipse boundaries.
    Sweep {
        #[command(flatten)]
        input: InputSource,
        #[arg(long)]
        rule: Rule,
        /// Number of grid weights, endpoints included.
        #[arg(long, default_value_t = 6)]
        grid: usize,
        /// Boundary points per ellipse.
        #[arg(long, default_value_t = 360)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the distributed-estimation Monte-Carlo experiment.
    Simulate {
        #[command(flatten)]
        input: InputSource,
        #[arg(long)]
        rule: Option<Rule>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (defaults to the number of cores).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run verification suites against a problem.
    Verify {
        #[command(flatten)]
        input: InputSource,
        #[arg(long, default_value = "all")]
        suite: String,
        /// Search effort: admissible samples / random gains.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test hook: scale the bounds before the conservatism check.
        #[arg(long)]
        inject_shrink: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the boundary of a 2x2 covariance ellipse as CSV.
    Ellipse {
        /// Matrix JSON file ({"dim": 2, "rows": [...]}).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, default_value_t = 360)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    kind: &'static str,
    message: String,
    code: i32,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            kind: "input",
            message: message.into(),
            code: EXIT_INPUT_ERROR,
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::NonFinite
            | CoreError::NotPsd(_)
            | CoreError::SingularMatrix(_)
            | CoreError::DegenerateWeights
            | CoreError::BoundaryWeight(_)
            | CoreError::InvalidCorrelation(_)
            | CoreError::WitnessFailed(_) => EXIT_NUMERIC_ERROR,
            _ => EXIT_INPUT_ERROR,
        };
        Self {
            kind: if code == EXIT_NUMERIC_ERROR { "numeric" } else { "input" },
            message: e.to_string(),
            code,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::input(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::input(format!("json: {e}"))
    }
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(code) => code,
        Err(f) => {
            let payload = serde_json::json!({
                "error": {"kind": f.kind, "message": f.message}
            });
            eprintln!("{payload}");
            f.code
        }
    });
}

/// Raw text plus its identity for the manifest.
struct LoadedConfig {
    text: String,
    hash: String,
}

fn load_source(input: &InputSource) -> Result<LoadedConfig, Failure> {
    let text = match (&input.config, &input.builtin) {
        (Some(path), None) => std::fs::read_to_string(path)?,
        (None, Some(name)) => covint::builtin::raw(name)
            .map_err(Failure::from)?
            .to_string(),
        _ => return Err(Failure::input("exactly one of --config or --builtin is required")),
    };
    let hash = sha256_hex(text.as_bytes());
    Ok(LoadedConfig { text, hash })
}

#[derive(serde::Serialize)]
#[serde(rename_all = "camelCase")]
struct RunManifest<'a> {
    subcommand: &'a str,
    config_hash: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    tool_version: &'a str,
    wall_time_seconds: f64,
}

fn write_with_manifest(
    out: &Path,
    contents: &str,
    subcommand: &str,
    config_hash: &str,
    seed: Option<u64>,
    started: Instant,
) -> Result<(), Failure> {
    std::fs::write(out, contents)?;
    let manifest = RunManifest {
        subcommand,
        config_hash,
        seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest.json");
    std::fs::write(PathBuf::from(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<i32, Failure> {
    let started = Instant::now();
    match cli.command {
        Command::Fuse {
            input,
            rule,
            omega,
            optimize,
            cost,
            omega_tol,
            out,
        } => {
            let loaded = load_source(&input)?;
            let problem = ProblemInput::from_json(&loaded.text)?;
            let cost = Cost::from_str(&cost)?;
            let n = problem.len();
            let omega = match (omega, optimize) {
                (Some(_), true) => {
                    return Err(Failure::input("--omega and --optimize are mutually exclusive"))
                }
                (None, false) => {
                    return Err(Failure::input("either --omega or --optimize is required"))
                }
                (Some(w), false) => {
                    if w.len() != n {
                        return Err(Failure::input(format!(
                            "expected {n} weights, got {}",
                            w.len()
                        )));
                    }
                    w
                }
                (None, true) => {
                    if n == 2 {
                        optimize_pair(
                            |w| Ok(fuse_rule(&problem, rule, &[w, 1.0 - w])?.bound),
                            cost,
                            omega_tol,
                        )?
                        .omega
                    } else {
                        optimize_simplex(|w| Ok(fuse_rule(&problem, rule, w)?.bound), cost, n)?.omega
                    }
                }
            };
            let result = fuse_rule(&problem, rule, &omega)?;
            let cost_value = evaluate_cost(&result.bound, cost)?;
            let mut value = serde_json::to_value(&result)?;
            value["cost"] = serde_json::json!(cost_value);
            let text = serde_json::to_string_pretty(&value)?;
            match out {
                Some(path) => {
                    write_with_manifest(&path, &text, "fuse", &loaded.hash, None, started)?
                }
                None => println!("{text}"),
            }
            Ok(0)
        }

        Command::Sweep {
            input,
            rule,
            grid,
            points,
            out,
        } => {
            if grid < 2 {
                return Err(Failure::input("--grid must be at least 2"));
            }
            let loaded = load_source(&input)?;
            let problem = ProblemInput::from_json(&loaded.text)?;
            if problem.len() != 2 {
                return Err(Failure::input("sweep handles exactly two estimators"));
            }
            let dim = problem.generic()?.dim();
            let mut rows = String::from("omega,trace,logdet\n");
            let mut ellipses = String::from("omega,x,y\n");
            for k in 0..grid {
                let w = k as f64 / (grid - 1) as f64;
                let result = fuse_rule(&problem, rule, &[w, 1.0 - w])?;
                let trace = result.bound.trace();
                let logdet = result.bound.logdet()?;
                rows.push_str(&format!("{w},{trace},{logdet}\n"));
                if dim == 2 {
                    for pt in ellipse_boundary(&result.bound, points)? {
                        ellipses.push_str(&format!("{w},{},{}\n", pt[0], pt[1]));
                    }
                }
            }
            write_with_manifest(&out, &rows, "sweep", &loaded.hash, None, started)?;
            if dim == 2 {
                let mut epath = out.clone();
                epath.set_extension("");
                let epath = PathBuf::from(format!("{}_ellipses.csv", epath.display()));
                std::fs::write(epath, ellipses)?;
            }
            Ok(0)
        }

        Command::Simulate {
            input,
            rule,
            trials,
            steps,
            seed,
            threads,
            out,
        } => {
            let loaded = load_source(&input)?;
            let mut config: ScenarioConfig = serde_json::from_str(&loaded.text)?;
            if let Some(r) = rule {
                config.rule = r;
            }
            if let Some(t) = trials {
                config.trials = t;
            }
            if let Some(s) = steps {
                config.steps = s;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            let report = match threads {
                Some(t) => rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Failure::input(format!("thread pool: {e}")))?
                    .install(|| run_monte_carlo(&config)),
                None => run_monte_carlo(&config),
            }?;
            write_with_manifest(
                &out,
                &report.to_csv(),
                "simulate",
                &loaded.hash,
                Some(config.seed),
                started,
            )?;
            Ok(0)
        }

        Command::Verify {
            input,
            suite,
            budget,
            seed,
            inject_shrink,
            out,
        } => {
            let loaded = load_source(&input)?;
            let problem = ProblemInput::from_json(&loaded.text)?;
            let suite = Suite::from_str(&suite)?;
            let report = run_suite(&problem, suite, budget, seed, inject_shrink)?;
            let text = serde_json::to_string_pretty(&report)?;
            match &out {
                Some(path) => {
                    write_with_manifest(path, &text, "verify", &loaded.hash, Some(seed), started)?
                }
                None => println!("{text}"),
            }
            Ok(if report.pass { 0 } else { EXIT_PROPERTY_FAILURE })
        }

        Command::Ellipse {
            config,
            points,
            out,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let hash = sha256_hex(text.as_bytes());
            let matrix: SymMatrix = serde_json::from_str(&text)?;
            let mut csv = String::from("x,y\n");
            for pt in ellipse_boundary(&matrix, points)? {
                csv.push_str(&format!("{},{}\n", pt[0], pt[1]));
            }
            write_with_manifest(&out, &csv, "ellipse", &hash, None, started)?;
            Ok(0)
        }
    }
}
