//! Command-line interface: simulation, estimation, reconciliation, the
//! replicated study harness, the rolling-window real-data experiment, and
//! summaries of persisted runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use volrec::dgp::{draw_params, ModelClass};
use volrec::harness::{
    ingest_returns, run_real_data, run_simulation_study, RealDataConfig, ResultStore, StudyConfig,
    StudySummary,
};
use volrec::matrix::SymMatrix;
use volrec::models::{dcc_fit, edcc_fit, garch11_fit, sbekk_fit, ModelParams};
use volrec::reconcile::{algorithm1, BaseForecastSet, ErrorCovariance, ReconcileOption};
use volrec::rng::substream;

#[derive(Parser)]
#[command(
    name = "volrec",
    version,
    about = "Portfolio variance forecasting with GARCH models and forecast reconciliation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate returns (and the true covariance path) from a model class
    Simulate(SimulateArgs),
    /// Fit a model to a returns CSV and print the parameters as JSON
    Fit(FitArgs),
    /// Reconcile one base-forecast set given in a JSON file
    Reconcile(ReconcileArgs),
    /// Run a replicated simulation study from a JSON config
    Study(RunArgs),
    /// Run the rolling-window real-data experiment from a JSON config
    Realdata(RunArgs),
    /// Recompute summary tables from a persisted run directory
    Summarize(SummarizeArgs),
    /// Print the version string
    Version,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model class: sbekk, fbekk, dcc or edcc
    #[arg(long)]
    model: String,
    /// Number of assets (24 selects the fixed parameter designs)
    #[arg(long)]
    n: usize,
    /// Number of emitted observations
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// With `--split paper`, an extra 100 burn-in observations are simulated
    /// and discarded before emitting
    #[arg(long)]
    split: Option<String>,
    /// Output CSV (`date,asset_1,...`); stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the true covariance path in long format (date,i,j,value)
    #[arg(long)]
    cov_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Model: garch, sbekk, dcc or edcc (garch fits the equal-weight
    /// portfolio of the input columns)
    #[arg(long)]
    model: String,
    /// Returns CSV (`date,asset_1,...`)
    #[arg(long)]
    input: PathBuf,
    /// Skip full-sample de-meaning
    #[arg(long)]
    no_demean: bool,
    /// Output JSON path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReconcileArgs {
    /// JSON input: {sigma_p2_hat, sigma_hat: [[..]], weights: [..],
    /// omega: [[..]] (optional), option: "a"|"b"|"auto"}
    #[arg(long)]
    input: PathBuf,
    /// Output JSON path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (fallback: VOLREC_THREADS, then all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Run directory holding losses.csv and manifest.json
    #[arg(long)]
    store: PathBuf,
    /// Write summary.csv here instead of into the store directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            // configuration problems exit 2, runtime failures exit 1
            let msg = format!("{e:#}");
            if msg.contains("configuration error") {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Reconcile(args) => cmd_reconcile(args),
        Command::Study(args) => cmd_study(args),
        Command::Realdata(args) => cmd_realdata(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Version => {
            println!("volrec {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn parse_model_class(s: &str) -> Result<ModelClass> {
    Ok(match s {
        "sbekk" => ModelClass::SBekk,
        "fbekk" => ModelClass::FBekk,
        "dcc" => ModelClass::Dcc,
        "edcc" => ModelClass::Edcc,
        other => bail!("configuration error: unknown model class '{other}'"),
    })
}

/// Synthetic trading calendar: 21 trading days per month from 2000-01.
fn synthetic_date(t: usize) -> String {
    let month = t / 21;
    format!("{:04}-{:02}-{:02}", 2000 + month / 12, month % 12 + 1, t % 21 + 1)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let class = parse_model_class(&args.model)?;
    let burn_in = match args.split.as_deref() {
        Some("paper") => 100,
        Some(other) => bail!("configuration error: unknown split '{other}' (expected 'paper')"),
        None => 0,
    };
    let mut rng = substream(args.seed, 0);
    let params = draw_params(class, args.n, &mut rng)?;
    let report = volrec::models::stationarity_check(&params);
    if !report.ok {
        bail!(
            "drawn parameters are nonstationary ({} = {:.4})",
            report.condition,
            report.binding_value
        );
    }
    let sim = volrec::models::simulate_with_rng(&params, burn_in + args.t, &mut rng)?;

    let mut csv_out = String::new();
    let header: Vec<String> = std::iter::once("date".to_string())
        .chain((0..args.n).map(|i| format!("asset_{}", i + 1)))
        .collect();
    csv_out.push_str(&header.join(","));
    csv_out.push('\n');
    for t in 0..args.t {
        let row: Vec<String> =
            (0..args.n).map(|i| sim.returns[(burn_in + t, i)].to_string()).collect();
        csv_out.push_str(&format!("{},{}\n", synthetic_date(t), row.join(",")));
    }
    match &args.out {
        Some(path) => std::fs::write(path, csv_out).context("writing returns CSV")?,
        None => print!("{csv_out}"),
    }

    if let Some(path) = &args.cov_out {
        let mut cov_csv = String::from("date,i,j,value\n");
        for t in 0..args.t {
            let cov = &sim.cov_path[burn_in + t];
            for j in 0..args.n {
                for i in j..args.n {
                    cov_csv.push_str(&format!(
                        "{},{},{},{}\n",
                        synthetic_date(t),
                        i + 1,
                        j + 1,
                        cov[(i, j)]
                    ));
                }
            }
        }
        std::fs::write(path, cov_csv).context("writing covariance CSV")?;
    }
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let table = ingest_returns(&args.input, !args.no_demean)?;
    let n = table.asset_names.len();
    let params: ModelParams = match args.model.as_str() {
        "garch" => {
            let series: Vec<f64> = (0..table.returns.nrows())
                .map(|t| table.returns.row(t).sum() / n as f64)
                .collect();
            ModelParams::Garch11(garch11_fit(&series)?)
        }
        "sbekk" => ModelParams::SBekk(sbekk_fit(&table.returns)?),
        "dcc" => ModelParams::Dcc(dcc_fit(&table.returns)?),
        "edcc" => ModelParams::Edcc(edcc_fit(&table.returns)?),
        other => bail!("configuration error: unknown model '{other}'"),
    };
    let report = volrec::models::stationarity_check(&params);
    let out = serde_json::json!({
        "params": params,
        "stationary": report.ok,
        "binding_value": report.binding_value,
        "condition": report.condition,
    });
    emit_json(&out, args.out.as_deref())
}

#[derive(serde::Deserialize)]
struct ReconcileInput {
    sigma_p2_hat: f64,
    sigma_hat: Vec<Vec<f64>>,
    weights: Vec<f64>,
    #[serde(default)]
    omega: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    option: Option<ReconcileOption>,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        bail!("configuration error: {what} must be a nonempty rectangular matrix");
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

fn cmd_reconcile(args: ReconcileArgs) -> Result<()> {
    let raw = std::fs::read_to_string(&args.input).context("reading reconcile input")?;
    let input: ReconcileInput = serde_json::from_str(&raw)
        .map_err(|e| anyhow::anyhow!("configuration error: {e}"))?;
    let sigma_hat = SymMatrix::new(matrix_from_rows(&input.sigma_hat, "sigma_hat")?)
        .map_err(|e| anyhow::anyhow!("configuration error: sigma_hat: {e}"))?;
    let n = sigma_hat.dim();
    if input.weights.len() != n {
        bail!("configuration error: weights length {} != {n}", input.weights.len());
    }
    let weights = DVector::from_row_slice(&input.weights);
    let m = n * (n + 1) / 2;
    let omega = match &input.omega {
        Some(rows) => {
            let mat = matrix_from_rows(rows, "omega")?;
            if mat.nrows() != m + 1 {
                bail!("configuration error: omega must be {}x{}", m + 1, m + 1);
            }
            ErrorCovariance { omega: mat, shrinkage_intensity: 0.0, n_obs: 0 }
        }
        None => ErrorCovariance {
            omega: DMatrix::identity(m + 1, m + 1),
            shrinkage_intensity: 0.0,
            n_obs: 0,
        },
    };
    let base = BaseForecastSet { sigma_p2_hat: input.sigma_p2_hat, sigma_hat: sigma_hat.vech() };
    let result =
        algorithm1(&base, &omega, &weights, input.option.unwrap_or(ReconcileOption::Auto))?;
    let sigma_rows: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| result.sigma_tilde[(i, j)]).collect()).collect();
    let out = serde_json::json!({
        "method_used": result.method_used.label(),
        "sigma_p2_tilde": result.y_tilde.portfolio_variance(),
        "sigma_tilde": sigma_rows,
        "correlation_ok": result.correlation_ok,
        "psd": result.diagnostics.psd,
        "iterations": result.diagnostics.iterations,
        "kkt_residual": result.diagnostics.kkt_residual,
    });
    emit_json(&out, args.out.as_deref())
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").context("writing JSON output")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn thread_count(explicit: Option<usize>) -> Option<usize> {
    explicit.or_else(|| std::env::var("VOLREC_THREADS").ok().and_then(|v| v.parse().ok()))
}

fn with_pool<T>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    match thread_count(threads) {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .context("building thread pool")?;
            pool.install(f)
        }
        None => f(),
    }
}

fn cmd_study(args: RunArgs) -> Result<()> {
    let raw = std::fs::read_to_string(&args.config).context("reading config")?;
    let mut config: StudyConfig = serde_json::from_str(&raw)
        .map_err(|e| anyhow::anyhow!("configuration error: {e}"))?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(out) = args.out {
        config.output_dir = Some(out);
    }
    if config.output_dir.is_none() {
        config.output_dir = Some(PathBuf::from("volrec_out"));
    }
    let store = with_pool(args.threads, || Ok(run_simulation_study(&config)?))?;
    report_run(&store)?;
    Ok(())
}

fn cmd_realdata(args: RunArgs) -> Result<()> {
    let raw = std::fs::read_to_string(&args.config).context("reading config")?;
    let mut config: RealDataConfig = serde_json::from_str(&raw)
        .map_err(|e| anyhow::anyhow!("configuration error: {e}"))?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(out) = args.out {
        config.output_dir = Some(out);
    }
    if config.output_dir.is_none() {
        config.output_dir = Some(PathBuf::from("volrec_out"));
    }
    let store = with_pool(args.threads, || Ok(run_real_data(&config)?))?;
    report_run(&store)?;
    Ok(())
}

fn report_run(store: &ResultStore) -> Result<()> {
    println!(
        "{} run: {} loss records, {} failures, {:.1}s wall time",
        store.manifest.kind,
        store.records.len(),
        store.manifest.failures.len(),
        store.manifest.wall_time_secs
    );
    for f in &store.manifest.failures {
        eprintln!("  failure [{}]: {}", f.replication, f.message);
    }
    let summary = volrec::harness::summarize(store)?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(summary: &StudySummary) {
    for block in &summary.blocks {
        println!(
            "\nmodel={} delta={} horizon={} loss={} (Q={})",
            block.model.label(),
            block.delta,
            block.horizon,
            block.loss_kind.label(),
            block.q_replications
        );
        print!("{:>10}", "");
        for a in &block.approaches {
            print!("{:>12}", a.label());
        }
        println!();
        let row = |name: &str, values: &[f64]| {
            print!("{name:>10}");
            for v in values {
                print!("{v:>12.4}");
            }
            println!();
        };
        row("IND", &block.ind);
        if let Some(rel) = &block.avg_rel_base {
            row("rel(base)", rel);
        }
        if let Some(rel) = &block.avg_rel_bu {
            row("rel(bu)", rel);
        }
        row("MCS p", &block.mcs_pvalues);
    }
    for entry in &summary.pooled_mcs {
        println!("\npooled MCS horizon={} loss={}", entry.horizon, entry.loss_kind.label());
        for (label, p) in entry.labels.iter().zip(&entry.pvalues) {
            println!("  {label:>16}: {p:.3}");
        }
    }
}

fn cmd_summarize(args: SummarizeArgs) -> Result<()> {
    let store = ResultStore::load(&args.store)?;
    let summary = volrec::harness::summarize(&store)?;
    let target = args.out.clone().unwrap_or_else(|| args.store.join("summary.csv"));
    summary.write_csv(&target)?;
    if !summary.pooled_mcs.is_empty() {
        let mcs_path = target
            .parent()
            .map(|p| p.join("mcs_models.csv"))
            .unwrap_or_else(|| PathBuf::from("mcs_models.csv"));
        summary.write_pooled_mcs_csv(&mcs_path)?;
    }
    print_summary(&summary);
    Ok(())
}
