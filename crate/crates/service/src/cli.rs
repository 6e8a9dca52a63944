//! Command-line front end. Exit codes: 0 ok, 1 usage, 2 validation,
//! 3 solver verdict other than optimal.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ordutil::compile::{compile_expression, DEFAULT_MODEL_CAP};
use ordutil::experiment::{run_degree_sweep, SyntheticSpec};
use ordutil::formula::parse_expression;
use ordutil::kernel::{degree_params, KernelParams};
use ordutil::schema::{load_catalog, load_schema};
use ordutil::solver::{check_kkt, reconstruct_weights, solve_dual, NamedWeight, SolverConfig};
use ordutil::utility::{rank_catalog, Ranking};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ordutil",
    version,
    about = "Rank catalogs from qualitative preference statements"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile statements, solve, and print the ranked catalog.
    Solve {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        statements: PathBuf,
        /// Kernel degree (default: min(attributes, 3)).
        #[arg(long, conflicts_with = "unweighted")]
        degree: Option<usize>,
        /// Soft margin with this C; hard margin otherwise.
        #[arg(long)]
        soft: Option<f64>,
        #[arg(long)]
        top: Option<usize>,
        /// Also print the largest monomial weights.
        #[arg(long)]
        explain: bool,
        /// Unit-weight explicit features.
        #[arg(long)]
        unweighted: bool,
        /// Emit one JSON document instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Run a degree sweep and write `degree,k,mean_error,std,trials` rows.
    Sweep {
        /// JSON or TOML sweep specification.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse statements, and compile them when a schema is given.
    Check {
        #[arg(long)]
        statements: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Serve the session HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Directory for session event logs; sessions are in-memory without it.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn validation(e: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SolveOutput {
    verdict: ordutil::solver::Verdict,
    message: String,
    kernel: KernelParams,
    kkt: ordutil::solver::KktReport,
    ranking: Ranking,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<NamedWeight>>,
}

#[allow(clippy::too_many_arguments)]
pub fn solve(
    schema: &Path,
    catalog: &Path,
    statements: &Path,
    degree: Option<usize>,
    soft: Option<f64>,
    top: Option<usize>,
    explain: bool,
    unweighted: bool,
    json: bool,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let schema = Arc::new(load_schema(&read(schema)?).map_err(Failure::validation)?);
    let catalog = load_catalog(&read(catalog)?, schema.clone()).map_err(Failure::validation)?;
    let expr = parse_expression(&read(statements)?).map_err(Failure::validation)?;
    let params = if unweighted {
        KernelParams::unweighted(schema.len())
    } else {
        degree_params(degree.unwrap_or(schema.len().min(3)), schema.len())
            .map_err(Failure::validation)?
    };
    let cfg = match soft {
        Some(c) => SolverConfig::soft(c),
        None => SolverConfig::default(),
    };
    cfg.validate().map_err(Failure::validation)?;
    let cs = compile_expression(&expr, schema.clone(), DEFAULT_MODEL_CAP)
        .map_err(Failure::validation)?;
    let model = solve_dual(&cs, &params, &cfg).map_err(Failure::validation)?;
    let ranking = rank_catalog(&model, &catalog, top).map_err(Failure::validation)?;
    let weights = if explain {
        Some(
            reconstruct_weights(&model)
                .map_err(Failure::validation)?
                .top(&schema, 20),
        )
    } else {
        None
    };
    let verdict = model.diagnostics.verdict;
    let code = if verdict.is_feasible() {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    };
    let io = |e: std::io::Error| Failure::validation(e);

    if json {
        let doc = SolveOutput {
            verdict,
            message: verdict.to_string(),
            kernel: params,
            kkt: check_kkt(&model),
            ranking,
            weights,
        };
        serde_json::to_writer_pretty(&mut *out, &doc).map_err(Failure::validation)?;
        writeln!(out).map_err(io)?;
        return Ok(code);
    }

    let d = &model.diagnostics;
    writeln!(
        out,
        "# {} statements, {} constraints; verdict: {verdict}; objective {:.6}; {} epochs",
        expr.len(),
        cs.len(),
        d.objective,
        d.epochs
    )
    .map_err(io)?;
    writeln!(out, "rank\tid\tutility").map_err(io)?;
    for (i, item) in ranking.items.iter().enumerate() {
        writeln!(out, "{}\t{}\t{:.6}", i + 1, item.id, item.utility).map_err(io)?;
    }
    if let Some(weights) = weights {
        writeln!(out, "\nweight\tmonomial").map_err(io)?;
        for w in weights {
            let mono: Vec<String> = w.monomial.iter().map(|(a, v)| format!("{a}={v}")).collect();
            writeln!(out, "{:.6}\t{}", w.weight, mono.join(" and ")).map_err(io)?;
        }
    }
    Ok(code)
}

pub fn load_sweep_spec(path: &Path) -> Result<SyntheticSpec, Failure> {
    let text = read(path)?;
    let spec: SyntheticSpec = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(Failure::validation)?
    } else {
        serde_json::from_str(&text).map_err(Failure::validation)?
    };
    spec.validate().map_err(Failure::validation)?;
    Ok(spec)
}

pub fn sweep(config: &Path, out_path: &Path, out: &mut dyn Write) -> Result<i32, Failure> {
    let spec = load_sweep_spec(config)?;
    let curve = run_degree_sweep(&spec).map_err(Failure::validation)?;
    let file = fs::File::create(out_path)
        .map_err(|e| Failure::validation(format!("{}: {e}", out_path.display())))?;
    curve.write_csv(file).map_err(Failure::validation)?;
    let io = |e: std::io::Error| Failure::validation(e);
    writeln!(
        out,
        "wrote {} rows to {}",
        curve.rows.len(),
        out_path.display()
    )
    .map_err(io)?;
    for f in &curve.failures {
        writeln!(
            out,
            "cell degree={} k={} trial={} failed: {}",
            f.degree, f.k, f.trial, f.message
        )
        .map_err(io)?;
    }
    Ok(EXIT_OK)
}

pub fn check(
    statements: &Path,
    schema: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let expr = parse_expression(&read(statements)?).map_err(Failure::validation)?;
    let io = |e: std::io::Error| Failure::validation(e);
    let Some(schema) = schema else {
        writeln!(out, "{} statements parsed", expr.len()).map_err(io)?;
        return Ok(EXIT_OK);
    };
    let schema = Arc::new(load_schema(&read(schema)?).map_err(Failure::validation)?);
    let cs = compile_expression(&expr, schema, DEFAULT_MODEL_CAP).map_err(Failure::validation)?;
    for (s, stats) in expr.statements.iter().zip(&cs.stats) {
        writeln!(
            out,
            "line {}: {} constraints: {s}",
            stats.line, stats.constraints
        )
        .map_err(io)?;
    }
    writeln!(out, "{} statements, {} constraints", expr.len(), cs.len()).map_err(io)?;
    Ok(EXIT_OK)
}

async fn serve(addr: &str, data_dir: Option<&Path>) -> Result<i32, Failure> {
    let store = match data_dir {
        Some(dir) => crate::session::SessionStore::open(dir).map_err(Failure::validation)?,
        None => crate::session::SessionStore::in_memory(),
    };
    let app = crate::api::router(Arc::new(store));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Failure::validation(format!("bind {addr}: {e}")))?;
    eprintln!("listening on {addr}");
    axum::serve(listener, app)
        .await
        .map_err(|e| Failure::validation(format!("server: {e}")))?;
    Ok(EXIT_OK)
}

/// Parses `args` and runs the command, writing normal output to `out` and
/// errors to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve {
            schema,
            catalog,
            statements,
            degree,
            soft,
            top,
            explain,
            unweighted,
            json,
        } => solve(
            &schema,
            &catalog,
            &statements,
            degree,
            soft,
            top,
            explain,
            unweighted,
            json,
            out,
        ),
        Command::Sweep { config, out: path } => sweep(&config, &path, out),
        Command::Check { statements, schema } => check(&statements, schema.as_deref(), out),
        Command::Serve { addr, data_dir } => tokio::runtime::Runtime::new()
            .map_err(Failure::validation)
            .and_then(|rt| rt.block_on(serve(&addr, data_dir.as_deref()))),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
