use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use awareauto_core::bundled;
use awareauto_core::context::ContextSnapshot;
use awareauto_core::engine::{simulate, Engine, SimEvent};
use awareauto_core::eval::{load_corpus, run_corpus, EvalCase};
use awareauto_core::llm::BackendKind;
use awareauto_core::model::{serialize_rule_text, GroundedRule};
use awareauto_core::normalizer::UserExpression;
use awareauto_core::pipeline::{Pipeline, PipelineOutput};
use awareauto_service::ServiceConfig;
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(
    name = "awareauto",
    version,
    about = "Context-aware home automation from natural expressions"
)]
struct Cli {
    /// Service config file (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Device catalog (JSON); the demo home when absent.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Fixture directory for the scripted and recording backends.
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    /// Model endpoint for the remote and recording backends.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Directory with prompt files; the bundled prompts when absent.
    #[arg(long, global = true)]
    prompts: Option<PathBuf>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expression JSON to a rule document and its grounded rule.
    Pipeline {
        /// `{"expression": {...}, "snapshot": {...}}` or a bare expression; `-` reads stdin.
        input: PathBuf,
    },
    /// Replays an event script against grounded rules and prints the trace.
    Simulate {
        /// A grounded rule or an array of them.
        #[arg(long)]
        rules: PathBuf,
        /// An array of `{time, target, interface, value, kind?}`.
        #[arg(long)]
        events: PathBuf,
        /// Run until this second; one hour past the last event by default.
        #[arg(long)]
        until: Option<u64>,
    },
    /// Scores a labeled corpus.
    Eval {
        /// Corpus file, or `bundled`.
        #[arg(long, default_value = "bundled")]
        corpus: String,
    },
    /// Runs a corpus against the model and stores every reply as a fixture.
    Record {
        #[arg(long, default_value = "bundled")]
        corpus: String,
    },
    /// Starts the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

/// Exit 1 for bad input, 2 when the pipeline or simulator fails.
enum Failure {
    Input(anyhow::Error),
    Pipeline(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn pipeline_failure<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Pipeline(e.into())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn config(cli: &Cli) -> Outcome<ServiceConfig> {
    let mut config = match &cli.config {
        Some(path) => ServiceConfig::load(path).map_err(input)?,
        None => ServiceConfig::default(),
    };
    if let Some(b) = cli.backend {
        config.backend = b;
    }
    for (slot, flag) in [
        (&mut config.catalog, &cli.catalog),
        (&mut config.fixtures, &cli.fixtures),
        (&mut config.prompts, &cli.prompts),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if cli.endpoint.is_some() {
        config.endpoint.clone_from(&cli.endpoint);
    }
    if cli.model.is_some() {
        config.model.clone_from(&cli.model);
    }
    Ok(config)
}

fn build_pipeline(config: &ServiceConfig) -> Outcome<Pipeline> {
    let catalog = config
        .catalog()
        .map_err(|e| input(anyhow!(e)).context_file(config.catalog.as_deref()))?;
    config.pipeline(catalog).map_err(input)
}

trait FileContext {
    fn context_file(self, path: Option<&Path>) -> Self;
}

impl FileContext for Failure {
    fn context_file(self, path: Option<&Path>) -> Self {
        let Some(path) = path else { return self };
        match self {
            Failure::Input(e) => Failure::Input(e.context(path.display().to_string())),
            Failure::Pipeline(e) => Failure::Pipeline(e.context(path.display().to_string())),
        }
    }
}

fn read_input(path: &Path) -> Outcome<String> {
    if path == Path::new("-") {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text).map_err(input)?;
        return Ok(text);
    }
    std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(input)
}

/// Deserializes, naming the file and the offending field on failure.
fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Outcome<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        input(if field == "." {
            anyhow!("{}: {}", path.display(), e.inner())
        } else {
            anyhow!("{}: field `{field}`: {}", path.display(), e.inner())
        })
    })
}

fn corpus(spec: &str) -> Outcome<Vec<EvalCase>> {
    if spec == "bundled" {
        return Ok(bundled::corpus());
    }
    let path = Path::new(spec);
    load_corpus(path)
        .with_context(|| format!("corpus {}", path.display()))
        .map_err(input)
}

fn emit(cli: &Cli, text: &str) -> Outcome<()> {
    match &cli.out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(input),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineInput {
    expression: UserExpression,
    #[serde(default)]
    snapshot: ContextSnapshot,
}

fn run(cli: Cli) -> Outcome<()> {
    let config = config(&cli)?;
    match &cli.command {
        Command::Pipeline { input: path } => {
            let text = read_input(path)?;
            let value: serde_json::Value = parse_json(path, &text)?;
            let request = if value.get("expression").is_some() {
                parse_json::<PipelineInput>(path, &text)?
            } else {
                PipelineInput {
                    expression: parse_json(path, &text)?,
                    snapshot: ContextSnapshot::default(),
                }
            };
            request
                .expression
                .validate()
                .map_err(|e| input(anyhow!("{}: field `expression`: {e}", path.display())))?;
            let pipeline = build_pipeline(&config)?;
            let out = pipeline
                .run(&request.expression, &request.snapshot)
                .map_err(pipeline_failure)?;
            emit(&cli, &render_pipeline(&out, cli.format))
        }
        Command::Simulate {
            rules,
            events,
            until,
        } => {
            let text = read_input(rules)?;
            let rules: Vec<GroundedRule> = if text.trim_start().starts_with('[') {
                parse_json(rules, &text)?
            } else {
                vec![parse_json(rules, &text)?]
            };
            let events_path = events;
            let mut events: Vec<SimEvent> = parse_json(events_path, &read_input(events_path)?)?;
            events.sort_by_key(|e| e.time);
            let catalog = config
                .catalog()
                .map_err(|e| input(anyhow!(e)).context_file(config.catalog.as_deref()))?;
            let mut engine = Engine::new(catalog);
            for (i, rule) in rules.iter().enumerate() {
                engine
                    .deploy(rule)
                    .with_context(|| {
                        format!("rule {i} ({})", rule.name.as_deref().unwrap_or("unnamed"))
                    })
                    .map_err(input)?;
            }
            let horizon = until.unwrap_or_else(|| events.last().map_or(0, |e| e.time) + 3600);
            simulate(&mut engine, &events, horizon).map_err(pipeline_failure)?;
            let text = match cli.format {
                Format::Json => engine.export_trace(),
                Format::Table => render_trace(&engine),
            };
            emit(&cli, &text)
        }
        Command::Eval { corpus: spec } => {
            let corpus = corpus(spec)?;
            let pipeline = build_pipeline(&config)?;
            let report = run_corpus(&corpus, &pipeline);
            let text = match cli.format {
                Format::Json => report.to_json() + "\n",
                Format::Table => report.render_table(),
            };
            emit(&cli, &text)
        }
        Command::Record { corpus: spec } => {
            let corpus = corpus(spec)?;
            let mut config = config;
            config.backend = BackendKind::Recording;
            let pipeline = build_pipeline(&config)?;
            let report = run_corpus(&corpus, &pipeline);
            if let Some(failed) = report
                .cases
                .iter()
                .find_map(|c| c.error.as_ref().map(|e| (c, e)))
            {
                return Err(pipeline_failure(anyhow!(
                    "case {}: {}",
                    failed.0.id,
                    failed.1
                )));
            }
            eprintln!(
                "recorded {} cases into {}",
                corpus.len(),
                config.fixture_dir().display()
            );
            let text = match cli.format {
                Format::Json => report.to_json() + "\n",
                Format::Table => report.render_table(),
            };
            emit(&cli, &text)
        }
        Command::Serve { listen } => {
            let mut config = config;
            if let Some(l) = listen {
                config.listen.clone_from(l);
            }
            let runtime = tokio::runtime::Runtime::new().map_err(pipeline_failure)?;
            runtime
                .block_on(awareauto_service::serve(&config))
                .map_err(|e| match e {
                    awareauto_service::ServeError::Config(e) => input(e),
                    other => pipeline_failure(other),
                })
        }
    }
}

fn render_pipeline(out: &PipelineOutput, format: Format) -> String {
    match format {
        Format::Json => {
            let value = serde_json::json!({
                "nl_rule": serialize_rule_text(&out.nl_rule),
                "grounded": out.grounded,
            });
            serde_json::to_string_pretty(&value).expect("output serializes") + "\n"
        }
        Format::Table => {
            let mut text = serialize_rule_text(&out.nl_rule);
            text.push('\n');
            text.push_str(&out.grounded.to_json());
            text.push('\n');
            text
        }
    }
}

fn render_trace(engine: &Engine) -> String {
    let mut text = format!(
        "{:>6}  {:<5} {:<4} {:<4} {}\n",
        "time", "rule", "pair", "step", "action"
    );
    for t in engine.trace() {
        text.push_str(&format!(
            "{:>6}  {:<5} {:<4} {:<4} {}-{}-{}\n",
            t.time,
            t.rule.to_string(),
            t.pair,
            t.step,
            t.target,
            t.interface,
            t.parameter
        ));
    }
    text
}
