//! Command-line front end: `repl`, `run`, `serve`, `worlds` and `check`.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mentalese_core::infer::{PosteriorSummary, SamplingBudget, SummaryKind};
use mentalese_core::worlds::{check_world_statistics, list_worlds, load_world, WorldError};
use mentalese_core::Tag;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, BackendKind};
use crate::dialogue::{CreateError, Dialogue, DialogueSettings, Input};
use crate::persist::write_atomic;
use crate::record::{EntryResult, ServiceConfig, UtteranceEntry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// `created_at` of script transcripts, which must not depend on the clock.
pub const SCRIPT_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Parser, Debug)]
#[command(name = "mentalese", version, about = "Dialogues that translate language into probabilistic programs and answer questions by sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Interactive dialogue over one world
    Repl(ReplArgs),
    /// Run a dialogue script and write its transcript as JSON
    Run(RunArgs),
    /// Serve the HTTP API
    Serve(ServeArgs),
    /// List the bundled worlds
    Worlds,
    /// Compare prior statistics of the worlds with their analytic values
    Check(CheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    /// Translation backend; defaults to MENTALESE_BACKEND, then `mock`
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Extra mock fixture files in `;; Tag: text` format
    #[arg(long = "fixtures")]
    pub fixtures: Vec<PathBuf>,
}

impl BackendArgs {
    fn config(&self) -> Result<BackendConfig, String> {
        let mut config = BackendConfig::from_env().map_err(|e| e.to_string())?;
        if let Some(kind) = self.backend {
            config.kind = kind;
        }
        config.fixture_files = self.fixtures.clone();
        Ok(config)
    }
}

#[derive(Args, Debug, Clone)]
pub struct BudgetArgs {
    /// Accepted samples per query
    #[arg(long, default_value_t = 1000)]
    pub target: usize,
    /// Attempts per query before giving up
    #[arg(long, default_value_t = 1_000_000)]
    pub max_attempts: u64,
    /// Sampling threads (default: one per core)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReplArgs {
    #[arg(long, default_value = "tug-of-war")]
    pub world: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Dialogue script: {world, seed, budget?, utterances: [{tag, text} | {code}]}
    pub script: PathBuf,
    /// Where to write the transcript JSON
    #[arg(long, short)]
    pub out: PathBuf,
    /// Directory for render artifacts and a JSONL transcript
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: std::net::SocketAddr,
    /// Transcript and render directory
    #[arg(long, default_value = "sessions")]
    pub dir: PathBuf,
    /// Built UI assets to serve at `/`
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Conditioned sample worlds rendered per condition
    #[arg(long, default_value_t = 4)]
    pub render_count: usize,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Check one world only
    #[arg(long)]
    pub world: Option<String>,
    /// Sampled worlds per check
    #[arg(long, default_value_t = 10_000)]
    pub n: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub world: String,
    pub seed: u64,
    #[serde(default)]
    pub budget: Option<SamplingBudget>,
    pub utterances: Vec<Input>,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Worlds => {
            for id in list_worlds() {
                let world = load_world(id).expect("bundled worlds load");
                let _ = writeln!(out, "{:<16} {:<16} {}", id, format!("{:?}", world.render_kind), world.title);
            }
            EXIT_OK
        }
        Command::Check(args) => check(&args, out, err),
        Command::Run(args) => match args.backend.config() {
            Ok(backend) => run_script(&args.script, &args.out, args.artifacts.as_deref(), args.threads, &backend, out, err),
            Err(e) => report(err, EXIT_USAGE, &e),
        },
        Command::Repl(args) => {
            let backend = match args.backend.config() {
                Ok(b) => b,
                Err(e) => return report(err, EXIT_USAGE, &e),
            };
            let budget = SamplingBudget { target_accepted: args.budget.target, max_attempts: args.budget.max_attempts, parallel_chains: None };
            let settings = DialogueSettings { threads: args.budget.threads, ..DialogueSettings::default() };
            let mut dialogue = match open(&args.world, format!("repl-{}-{}", args.world, args.seed), SCRIPT_TIMESTAMP.into(), args.seed, budget, &backend, settings) {
                Ok(d) => d,
                Err((code, message)) => return report(err, code, &message),
            };
            let stdin = std::io::stdin();
            repl(&mut dialogue, stdin.lock(), out);
            EXIT_OK
        }
        Command::Serve(args) => {
            let backend = match args.backend.config() {
                Ok(b) => b,
                Err(e) => return report(err, EXIT_USAGE, &e),
            };
            let config = ServiceConfig {
                listen: args.listen,
                persistence_dir: args.dir,
                backend,
                default_budget: SamplingBudget { target_accepted: args.budget.target, max_attempts: args.budget.max_attempts, parallel_chains: args.budget.threads },
                render_count: args.render_count,
                static_dir: args.static_dir,
                ..ServiceConfig::default()
            };
            let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
            let _ = writeln!(out, "listening on http://{}", config.listen);
            match runtime.block_on(crate::service::serve(config)) {
                Ok(()) => EXIT_OK,
                Err(e) => report(err, EXIT_FAILURE, &e.to_string()),
            }
        }
    }
}

fn report(err: &mut dyn Write, code: i32, message: &str) -> i32 {
    let _ = writeln!(err, "error: {}", message);
    code
}

fn open(world: &str, id: String, created_at: String, seed: u64, budget: SamplingBudget, backend: &BackendConfig, settings: DialogueSettings) -> Result<Dialogue, (i32, String)> {
    let model = load_world(world).map_err(|e| (EXIT_USAGE, e.to_string()))?;
    let backend = backend.build(&model).map_err(|e| (EXIT_USAGE, e.to_string()))?;
    Dialogue::create(world, id, created_at, seed, budget, backend, settings).map_err(|e| match e {
        CreateError::World(WorldError::Unknown(_)) | CreateError::Budget(_) => (EXIT_USAGE, e.to_string()),
        other => (EXIT_FAILURE, other.to_string()),
    })
}

fn check(args: &CheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let ids: Vec<String> = match &args.world {
        Some(w) => vec![w.clone()],
        None => list_worlds().into_iter().map(String::from).collect(),
    };
    let mut failed = false;
    for id in ids {
        let world = match load_world(&id) {
            Ok(w) => w,
            Err(e) => return report(err, EXIT_USAGE, &e.to_string()),
        };
        let report_result = crate::parallel::on_eval_thread(|| check_world_statistics(&world, args.n, args.seed));
        match report_result {
            Ok(r) => {
                for c in &r.checks {
                    failed |= !c.passed;
                    let _ = writeln!(
                        out,
                        "{} {:<14} {:<40} observed {:.4} expected {:.4} tol {:.4} (n = {})",
                        if c.passed { "PASS" } else { "FAIL" },
                        r.world,
                        c.name,
                        c.observed,
                        c.expected,
                        c.tolerance,
                        c.n
                    );
                }
            }
            Err(e) => {
                failed = true;
                let _ = writeln!(err, "error: {}", e);
            }
        }
    }
    if failed {
        EXIT_FAILURE
    } else {
        EXIT_OK
    }
}

/// Executes a script with a fixed session id and timestamp, so the
/// transcript depends only on the script, its seed and budget, and the
/// fixtures. Stops at the first failing entry; the transcript is written
/// either way.
pub fn run_script(script: &Path, out_path: &Path, artifacts: Option<&Path>, threads: Option<usize>, backend: &BackendConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let text = match std::fs::read_to_string(script) {
        Ok(t) => t,
        Err(e) => return report(err, EXIT_USAGE, &format!("{}: {}", script.display(), e)),
    };
    let script: Script = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(e) => return report(err, EXIT_USAGE, &format!("bad script: {}", e)),
    };
    let settings = DialogueSettings { threads, persistence_dir: artifacts.map(Path::to_path_buf), render_count: if artifacts.is_some() { 4 } else { 0 }, render_max_attempts: 100_000, ..DialogueSettings::default() };
    let id = format!("script-{}-{}", script.world, script.seed);
    let mut dialogue = match open(&script.world, id, SCRIPT_TIMESTAMP.into(), script.seed, script.budget.unwrap_or_default(), backend, settings) {
        Ok(d) => d,
        Err((code, message)) => return report(err, code, &message),
    };
    let mut code = EXIT_OK;
    for input in script.utterances {
        match dialogue.step(input) {
            Ok(entry) => {
                let _ = write!(out, "{}", describe_entry(entry));
                if !entry.is_committed() {
                    code = EXIT_FAILURE;
                    break;
                }
            }
            Err(e) => {
                code = report(err, EXIT_FAILURE, &e.to_string());
                break;
            }
        }
    }
    let mut json = serde_json::to_string_pretty(dialogue.record()).expect("record serializes");
    json.push('\n');
    if let Err(e) = write_atomic(out_path, json.as_bytes()) {
        return report(err, EXIT_FAILURE, &e.to_string());
    }
    code
}

const USAGE: &str = "prefix utterances with `C:` (condition), `Q:` (query) or `D:` (definition); \
text after the prefix is translated unless it starts with `(`. A bare `(...)` line is committed as code. `:quit` exits.";

/// Reads tagged lines from `input` until end of input or `:quit`.
pub fn repl(dialogue: &mut Dialogue, input: impl BufRead, out: &mut dyn Write) {
    let construct = dialogue.session().world().is_construct();
    let _ = writeln!(out, "world {}; {}", dialogue.record().world_id, USAGE);
    for line in input.lines() {
        let Ok(line) = line else { break };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if matches!(line, ":quit" | ":q" | ":exit") {
            break;
        }
        let Some(item) = parse_repl_line(line, construct) else {
            let _ = writeln!(out, "usage: {}", USAGE);
            continue;
        };
        match dialogue.step(item) {
            Ok(entry) => {
                let _ = write!(out, "{}", describe_entry(entry));
            }
            Err(e) => {
                let _ = writeln!(out, "error: {}", e);
            }
        }
    }
}

/// `C:`/`Q:`/`D:` prefixed text or code, or bare code.
pub fn parse_repl_line(line: &str, construct: bool) -> Option<Input> {
    if line.starts_with('(') {
        return Some(Input::Code { code: line.to_string(), tag: None });
    }
    let (prefix, rest) = line.split_once(':')?;
    let tag = match prefix.trim() {
        "C" | "c" => Tag::Condition,
        "Q" | "q" => Tag::Query,
        "D" | "d" if construct => Tag::ConstructFragment,
        "D" | "d" => Tag::Define,
        _ => return None,
    };
    let rest = rest.trim();
    if rest.is_empty() {
        return None;
    }
    if rest.starts_with('(') {
        return Some(Input::Code { code: rest.to_string(), tag: Some(tag) });
    }
    Some(Input::Utterance { tag, text: rest.to_string(), override_candidate: None })
}

/// Human-readable account of an entry: the committed code, then its result.
pub fn describe_entry(entry: &UtteranceEntry) -> String {
    let mut s = String::new();
    if !entry.text.is_empty() {
        s.push_str(&format!("[{}] {}: {}\n", entry.index, entry.tag.label(), entry.text));
    } else {
        s.push_str(&format!("[{}] {} (code)\n", entry.index, entry.tag.label()));
    }
    if let Some(code) = &entry.code {
        for line in code.lines() {
            s.push_str(&format!("    {}\n", line));
        }
    }
    match &entry.result {
        EntryResult::None => s.push_str("    condition added\n"),
        EntryResult::DefinitionInstalled { names, .. } => s.push_str(&format!("    defined {}\n", names.join(", "))),
        EntryResult::Posterior { summary, .. } => s.push_str(&format_summary(summary)),
        EntryResult::Error { error } => {
            s.push_str(&format!("    error: {}\n", error.message()));
            for (i, c) in entry.candidates.iter().enumerate() {
                if !c.is_valid() {
                    s.push_str(&format!("    candidate {}: {} -- {}\n", i, c.code, c.reasons().join("; ")));
                }
            }
        }
    }
    for r in &entry.renders {
        s.push_str(&format!("    render {}: {}\n", r.k, r.svg));
    }
    s
}

const BAR_WIDTH: f64 = 40.0;

fn bar(fraction: f64) -> String {
    "#".repeat((fraction * BAR_WIDTH).round().max(0.0) as usize)
}

/// Text rendering of a posterior summary, with histograms as bars.
pub fn format_summary(summary: &PosteriorSummary) -> String {
    let mut s = String::new();
    let footer = format!("    n = {}, acceptance rate {:.4}\n", summary.n, summary.acceptance_rate);
    match &summary.kind {
        SummaryKind::BooleanProbability { p, stderr } => {
            s.push_str(&format!("    P(true) = {:.3} ± {:.3}\n", p, stderr));
            s.push_str(&format!("    true  {:<40} {:.3}\n    false {:<40} {:.3}\n", bar(*p), p, bar(1.0 - p), 1.0 - p));
        }
        SummaryKind::Numeric { mean, stdev, histogram } => {
            s.push_str(&format!("    mean {:.3}, sd {:.3}\n", mean, stdev));
            let max = histogram.counts.iter().copied().max().unwrap_or(1).max(1) as f64;
            for (i, c) in histogram.counts.iter().enumerate() {
                s.push_str(&format!("    [{:>9.3}, {:>9.3}{} {:<40} {}\n", histogram.edges[i], histogram.edges[i + 1], if i + 1 == histogram.counts.len() { "]" } else { ")" }, bar(*c as f64 / max), c));
            }
        }
        SummaryKind::Categorical { frequencies } => {
            for (value, f) in frequencies {
                s.push_str(&format!("    {:<16} {:<40} {:.3}\n", value, bar(*f), f));
            }
        }
        SummaryKind::Generic { counts } => {
            for (value, c) in counts.iter().take(20) {
                s.push_str(&format!("    {:>6}  {}\n", c, value));
            }
        }
    }
    s.push_str(&footer);
    s
}
