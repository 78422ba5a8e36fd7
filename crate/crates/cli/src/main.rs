use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use tabaudit_client::{Client, ClientError};
use tabaudit_core::api::*;
use tabaudit_core::backend::BackendSpec;
use tabaudit_core::ingest::{Delimiter, ParseConfig};
use tabaudit_core::manifest::{expand_paths, DatasetSpec, InputFile, RunManifest};
use tabaudit_core::pipeline::{ExternalCompletion, PipelineError};
use tabaudit_core::report::{to_canonical_line, AuditReport, Granularity};
use tabaudit_core::sampler::TrialPlan;

/// Row-completion memorization audits for tabular sensor datasets.
#[derive(Parser)]
#[command(name = "tabaudit", version)]
struct Cli {
    /// URL of a running tabaudit service; an in-process one is started otherwise.
    #[arg(long, global = true)]
    server: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse files and print column profiles and confound statistics.
    Inspect(InspectArgs),
    /// Sample trial windows and write the plan as JSON.
    Plan(PlanArgs),
    /// Build chat transcripts from a plan, one JSON object per line.
    Prompt(PromptArgs),
    /// Score externally obtained completions against a plan.
    Score(ScoreArgs),
    /// Run a full audit.
    Audit(AuditArgs),
    /// Copy baselines and duplicate statistics only; no model calls.
    Baseline(BaselineArgs),
    /// Re-run an audit from a recorded completion cache.
    Replay(AuditArgs),
    /// Render a saved run.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Data file path or glob pattern; repeatable.
    #[arg(long = "data", value_name = "PATH")]
    data: Vec<String>,
    /// Force the delimiter instead of inferring it.
    #[arg(long, value_parser = parse_delimiter)]
    delimiter: Option<Delimiter>,
    /// With --delimiter: the first line is a header.
    #[arg(long, requires = "delimiter")]
    header: bool,
}

fn parse_delimiter(s: &str) -> Result<Delimiter, String> {
    Delimiter::parse(s).map_err(|e| e.to_string())
}

impl InputArgs {
    fn inputs(&self) -> Result<Vec<InputFile>, PipelineError> {
        if self.data.is_empty() {
            return Err(PipelineError::Config("give at least one --data path".into()));
        }
        let parse = self.delimiter.map(|d| ParseConfig {
            has_header: self.header,
            ..ParseConfig::new(d)
        });
        Ok(expand_paths(&self.data)?
            .into_iter()
            .map(|path| InputFile {
                path,
                parse: parse.clone(),
            })
            .collect())
    }
}

#[derive(Args, Clone)]
struct SamplingArgs {
    /// Trials per file.
    #[arg(long)]
    trials: Option<usize>,
    /// Prefix rows per window.
    #[arg(long)]
    window: Option<usize>,
    /// Few-shot examples per trial.
    #[arg(long)]
    fewshot: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Let few-shot windows overlap the test window.
    #[arg(long)]
    allow_overlap: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Output file; stdout by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PromptArgs {
    /// Plan written by `tabaudit plan`.
    #[arg(long)]
    plan: PathBuf,
    /// Prepend the file's header line to each prefix block.
    #[arg(long)]
    include_header: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    plan: PathBuf,
    /// JSON lines with file_ref, trial_id and text.
    #[arg(long)]
    completions: PathBuf,
    #[arg(long, default_value = "dataset")]
    name: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_granularity)]
    granularity: Option<Granularity>,
}

fn parse_granularity(s: &str) -> Result<Granularity, String> {
    Granularity::parse(s).ok_or_else(|| format!("unknown granularity {s:?}; use cell or char"))
}

#[derive(Args)]
struct AuditArgs {
    /// TOML run manifest; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    /// Dataset name used with --data.
    #[arg(long, default_value = "dataset")]
    name: String,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// http, replay, memorizer, copy, random or noisy.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Per-character corruption probability of the noisy backend.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Completions in flight at once.
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Completion cache file (JSON lines).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, value_parser = parse_granularity)]
    granularity: Option<Granularity>,
    /// Skip the cost confirmation for remote backends.
    #[arg(long)]
    yes: bool,
    /// Print only the summary, not every trial.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "dataset")]
    name: String,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory or summary.json.
    #[arg(long)]
    run: PathBuf,
    /// ansi, html or json.
    #[arg(long, default_value = "ansi")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

impl From<tabaudit_core::manifest::ManifestError> for Failure {
    fn from(e: tabaudit_core::manifest::ManifestError) -> Self {
        PipelineError::from(e).into()
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Parse(format!("{}: {e}", path.display())).into())
}

fn read_json_lines<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| io_failure(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_failure(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| PipelineError::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_failure(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| io_failure(Path::new("<stdout>"), e))
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("values serialize");
    s.push('\n');
    s
}

fn apply_sampling(audit: &mut tabaudit_core::sampler::AuditConfig, s: &SamplingArgs) {
    if let Some(v) = s.trials {
        audit.n_trials = v;
    }
    if let Some(v) = s.window {
        audit.window_len = v;
    }
    if let Some(v) = s.fewshot {
        audit.n_fewshot = v;
    }
    if let Some(v) = s.seed {
        audit.seed = v;
    }
    if s.allow_overlap {
        audit.allow_overlap = true;
    }
}

fn sampling_config(s: &SamplingArgs) -> tabaudit_core::sampler::AuditConfig {
    let mut audit = Default::default();
    apply_sampling(&mut audit, s);
    audit
}

async fn inspect(client: &Client, args: InspectArgs) -> CliResult {
    let mut reports = Vec::new();
    for input in args.input.inputs()? {
        reports.push(
            client
                .inspect(&InspectRequest {
                    input,
                    thresholds: Default::default(),
                })
                .await?,
        );
    }
    if args.json {
        return emit(None, &pretty(&reports));
    }
    let mut text = String::new();
    for r in &reports {
        text.push_str(&format!(
            "{}: {} rows x {} columns, delimiter {}{}\n",
            r.file_ref,
            r.row_count,
            r.column_count,
            r.parse.delimiter,
            if r.parse.has_header { ", header" } else { "" }
        ));
        text.push_str(&format!(
            "  duplicate-row fraction {:.4} ({} of {} rows repeat their predecessor)\n",
            r.duplicate.duplicate_row_fraction, r.duplicate.duplicate_rows, r.duplicate.row_count
        ));
        if r.column_analysis_skipped {
            text.push_str("  column analysis skipped: irregular spacing\n");
        }
        for c in &r.stuck_columns {
            text.push_str(&format!("  stuck column #{} (run of {})\n", c.index, c.max_run_length));
        }
        for c in &r.predictable_columns {
            text.push_str(&format!("  predictable column #{}: {}\n", c.index, c.class));
        }
    }
    emit(None, &text)
}

async fn plan(client: &Client, args: PlanArgs) -> CliResult {
    let audit = sampling_config(&args.sampling);
    let mut plans = Vec::new();
    for input in args.input.inputs()? {
        plans.push(
            client
                .plan(&PlanRequest {
                    input,
                    audit: audit.clone(),
                })
                .await?,
        );
    }
    emit(args.out.as_deref(), &pretty(&plans))
}

fn plan_input(plan: &TrialPlan) -> InputFile {
    InputFile {
        path: PathBuf::from(&plan.file_ref),
        parse: None,
    }
}

async fn prompt(client: &Client, args: PromptArgs) -> CliResult {
    let plans: Vec<TrialPlan> = read_json(&args.plan)?;
    let mut text = String::new();
    for plan in plans {
        let response = client
            .prompt(&PromptRequest {
                input: plan_input(&plan),
                plan,
                prompt: tabaudit_core::manifest::PromptSettings {
                    include_header: args.include_header,
                    ..Default::default()
                },
            })
            .await?;
        for t in &response.transcripts {
            text.push_str(&to_canonical_line(t));
            text.push('\n');
        }
    }
    emit(args.out.as_deref(), &text)
}

async fn print_report(client: &Client, report: &AuditReport, quiet: bool) -> CliResult {
    if quiet {
        let mut summary = report.clone();
        summary.trials.clear();
        let text = tabaudit_core::report::render_report(&summary, tabaudit_core::report::RenderFormat::Ansi);
        return emit(None, &text);
    }
    let rendered = client
        .render(&RenderRequest {
            path: None,
            report: Some(report.clone()),
            format: "ansi".into(),
        })
        .await?;
    emit(None, &rendered.content)
}

async fn score(client: &Client, args: ScoreArgs) -> CliResult {
    let plans: Vec<TrialPlan> = read_json(&args.plan)?;
    let completions: Vec<ExternalCompletion> = read_json_lines(&args.completions)?;
    let mut config = tabaudit_core::report::ReportConfig::default();
    if let Some(first) = plans.first() {
        config.audit = first.config.clone();
    }
    if let Some(g) = args.granularity {
        config.granularity = g;
    }
    let report = client
        .score(&ScoreRequest {
            dataset: args.name,
            inputs: plans.iter().map(plan_input).collect(),
            plans,
            completions,
            config,
            out: args.out,
        })
        .await?;
    print_report(client, &report, true).await
}

fn build_manifest(args: &AuditArgs, replay: bool) -> CliResult<RunManifest> {
    let mut m = match &args.config {
        Some(path) => RunManifest::load(path)?,
        None => RunManifest::default(),
    };
    if !args.input.data.is_empty() {
        let parse = args.input.delimiter.map(|d| ParseConfig {
            has_header: args.input.header,
            ..ParseConfig::new(d)
        });
        m.datasets = vec![DatasetSpec {
            name: args.name.clone(),
            paths: args.input.data.clone(),
            parse: parse
                .map(|p| args.input.data.iter().map(|d| (d.clone(), p.clone())).collect())
                .unwrap_or_default(),
        }];
    }
    apply_sampling(&mut m.audit, &args.sampling);
    if let Some(model) = &args.model {
        m.gen.model_id = model.clone();
    }
    if let Some(c) = args.concurrency {
        m.concurrency = c;
    }
    if let Some(out) = &args.out {
        m.out = Some(out.clone());
    }
    if let Some(cache) = &args.cache {
        m.cache = Some(cache.clone());
    }
    if let Some(g) = args.granularity {
        m.granularity = g;
    }
    let backend_name = if replay { Some("replay") } else { args.backend.as_deref() };
    if let Some(name) = backend_name {
        let concurrency = m.concurrency;
        m.backend = Some(
            BackendSpec::from_name(name, m.audit.seed, args.noise, None, concurrency)
                .map_err(PipelineError::from)?,
        );
    }
    m.validate()?;
    Ok(m)
}

fn confirm_cost(estimate: &tabaudit_core::pipeline::CostEstimate, yes: bool) -> CliResult {
    eprintln!(
        "about to send {} requests for {} files in {} datasets (~{} prompt tokens, up to {} output tokens)",
        estimate.requests, estimate.files, estimate.datasets, estimate.approx_prompt_tokens, estimate.max_output_tokens
    );
    if yes {
        return Ok(());
    }
    if !std::io::stdin().is_terminal() {
        return Err(PipelineError::Config("remote backend needs --yes when not run interactively".into()).into());
    }
    eprint!("proceed? [y/N] ");
    let mut answer = String::new();
    std::io::stdin()
        .read_line(&mut answer)
        .map_err(|e| io_failure(Path::new("<stdin>"), e))?;
    if matches!(answer.trim(), "y" | "Y" | "yes") {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: "aborted".into(),
        })
    }
}

async fn audit(client: &Client, args: AuditArgs, replay: bool) -> CliResult {
    let manifest = build_manifest(&args, replay)?;
    if manifest.backend()?.is_remote() {
        confirm_cost(&client.estimate(&manifest).await?, args.yes)?;
    }
    let interactive = std::io::stderr().is_terminal();
    let runs = client
        .run_audit(&manifest, |p| {
            if interactive {
                eprint!("\r{}: {}/{} completions", p.dataset, p.completed, p.total);
            }
        })
        .await;
    if interactive {
        eprintln!();
    }
    for run in runs? {
        print_report(client, &run.report, args.quiet).await?;
        if let Some(outputs) = &run.outputs {
            eprintln!("wrote {}", outputs.summary.display());
        }
    }
    Ok(())
}

async fn baseline(client: &Client, args: BaselineArgs) -> CliResult {
    let audit = sampling_config(&args.sampling);
    let report = client
        .baseline(&BaselineRequest {
            dataset: args.name,
            inputs: args.input.inputs()?,
            audit,
            thresholds: Default::default(),
            scoring: Default::default(),
        })
        .await?;
    if args.json {
        return emit(None, &pretty(&report));
    }
    let c = &report.confound;
    let mut text = format!(
        "dataset: {}\ncopy-last baseline: {:.4}  (best prefix row {:.4})\nduplicate-row fraction: {:.4}\n",
        report.dataset, c.copy_baseline_mean, c.copy_baseline_best, c.duplicate_row_fraction
    );
    if report.confounded {
        text.push_str("duplicated rows alone confound this dataset; any score would be inconclusive\n");
    } else {
        text.push_str(&format!(
            "a model needs a mean ratio of at least {:.4} for strong evidence\n",
            report.strong_evidence_floor
        ));
    }
    for col in &c.stuck_columns {
        text.push_str(&format!("stuck column: {} #{} (run {})\n", col.file_ref, col.column.index, col.column.max_run_length));
    }
    for col in &c.predictable_columns {
        text.push_str(&format!("predictable column: {} #{} ({})\n", col.file_ref, col.column.index, col.column.class));
    }
    for note in &report.notes {
        text.push_str(&format!("note: {note}\n"));
    }
    emit(None, &text)
}

async fn report(client: &Client, args: ReportArgs) -> CliResult {
    let rendered = client
        .render(&RenderRequest {
            path: Some(args.run),
            report: None,
            format: args.format,
        })
        .await?;
    emit(args.out.as_deref(), &rendered.content)
}

async fn connect(server: Option<String>) -> CliResult<Client> {
    if let Some(url) = server {
        return Ok(Client::new(url));
    }
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| io_failure(Path::new("127.0.0.1:0"), e))?;
    let addr = listener
        .local_addr()
        .map_err(|e| io_failure(Path::new("127.0.0.1:0"), e))?;
    tokio::spawn(async move {
        if let Err(e) = tabaudit_server::serve(listener).await {
            eprintln!("in-process service stopped: {e}");
        }
    });
    Ok(Client::new(format!("http://{addr}")).with_poll_interval(std::time::Duration::from_millis(20)))
}

async fn run(cli: Cli) -> CliResult {
    let client = connect(cli.server).await?;
    match cli.command {
        Command::Inspect(a) => inspect(&client, a).await,
        Command::Plan(a) => plan(&client, a).await,
        Command::Prompt(a) => prompt(&client, a).await,
        Command::Score(a) => score(&client, a).await,
        Command::Audit(a) => audit(&client, a, false).await,
        Command::Baseline(a) => baseline(&client, a).await,
        Command::Replay(a) => audit(&client, a, true).await,
        Command::Report(a) => report(&client, a).await,
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code.clamp(1, 255) as u8)
        }
    }
}
