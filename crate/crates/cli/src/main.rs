use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cogsearch_core::catalog::{
    ingest_catalog, load_index, save_index, Catalog, CatalogSources, IndexManifest,
};
use cogsearch_core::clock::{Clock, SystemClock};
use cogsearch_core::decider::EvalProtocol;
use cogsearch_core::engine::{
    Ablation, Engine, EngineConfig, EventBody, TurnEvent, TurnRequest, TurnState,
};
use cogsearch_core::eval::{
    check_cases, generate_benchmark, generate_catalog, read_cases, run_benchmark, synth,
    write_cases, BenchOptions, BenchReport, CaseCategory, CaseCounts, SynthConfig,
};
use cogsearch_core::executor::ScoreWeights;
use cogsearch_core::memory::MemoryStore;
use cogsearch_core::planner::EchoBackend;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    /// Bad invocation; exit 2.
    #[error("{0}")]
    Usage(String),
    /// Bad or unreadable data; exit 1.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Decision-support product search.
#[derive(Parser)]
#[command(name = "cogsearch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate jsonl inputs and write an index directory.
    Ingest(IngestArgs),
    /// Run one turn against an index.
    Query(QueryArgs),
    /// Run a benchmark file and print a report.
    Bench(BenchArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write a synthetic catalog and benchmark.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, env = "COGSEARCH_PRODUCTS")]
    products: PathBuf,
    #[arg(long, env = "COGSEARCH_REVIEWS")]
    reviews: Option<PathBuf>,
    #[arg(long, env = "COGSEARCH_WEBDOCS")]
    webdocs: Option<PathBuf>,
    #[arg(long, env = "COGSEARCH_INDEX")]
    out: PathBuf,
    /// Keep going when records are rejected.
    #[arg(long, env = "COGSEARCH_LENIENT")]
    lenient: bool,
    /// Print the ingestion report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, env = "COGSEARCH_INDEX")]
    index: PathBuf,
    /// Engine config as JSON; flags below override it.
    #[arg(long, env = "COGSEARCH_CONFIG")]
    config: Option<PathBuf>,
    /// Web evidence weights alpha,beta,gamma (relevance, authority, freshness).
    #[arg(long, env = "COGSEARCH_WEIGHTS")]
    weights: Option<String>,
    /// Decider weights functional,economic,reliability.
    #[arg(long, env = "COGSEARCH_UTILITY_WEIGHTS")]
    utility_weights: Option<String>,
    /// Stages to switch off: websearch,guider,decider,memory.
    #[arg(long, env = "COGSEARCH_ABLATE")]
    ablate: Option<String>,
}

/// Which planner turns a query into a task graph.
#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum PlannerBackend {
    #[default]
    Rule,
    /// Generative path with the built-in echo backend; exercises request,
    /// validation and fallback without a model.
    Echo,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, env = "COGSEARCH_PLANNER", value_enum, default_value_t)]
    planner: PlannerBackend,
    text: String,
    /// Print the event stream as ndjson, one event per line.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, env = "COGSEARCH_CASES")]
    cases: PathBuf,
    #[arg(long, env = "COGSEARCH_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "COGSEARCH_PARALLELISM")]
    parallelism: Option<usize>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Candidates retrieved per case; defaults to k, the display size.
    #[arg(long, env = "COGSEARCH_CANDIDATE_K")]
    candidate_k: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, env = "COGSEARCH_PLANNER", value_enum, default_value_t)]
    planner: PlannerBackend,
    #[arg(long, env = "COGSEARCH_HOST", default_value = "127.0.0.1")]
    host: String,
    #[arg(long, env = "COGSEARCH_PORT", default_value_t = 8080)]
    port: u16,
    /// Memory snapshot: restored at start if present, written at shutdown.
    #[arg(long, env = "COGSEARCH_SNAPSHOT")]
    snapshot: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, env = "COGSEARCH_SYNTH_PRODUCTS", default_value_t = 10_000)]
    products: usize,
    #[arg(long, env = "COGSEARCH_SEED", default_value_t = 7)]
    seed: u64,
    /// Directory for products/reviews/webdocs jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Also write a benchmark file.
    #[arg(long)]
    cases: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    simple: usize,
    #[arg(long, default_value_t = 100)]
    complex: usize,
    #[arg(long, default_value_t = 100)]
    consultative: usize,
}

fn parse_triple(s: &str, what: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let nums: std::result::Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
    match nums {
        Ok(v) if v.len() == 3 => Ok([v[0], v[1], v[2]]),
        _ => Err(CliError::Usage(format!(
            "{what} must be three comma-separated numbers, got '{s}'"
        ))),
    }
}

impl EngineArgs {
    fn config(&self) -> Result<EngineConfig> {
        let mut config = match &self.config {
            Some(p) => {
                let body = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&body)
                    .map_err(|e| CliError::Data(format!("invalid config {}: {e}", p.display())))?
            }
            None => EngineConfig::default(),
        };
        if let Some(w) = &self.weights {
            let [a, b, g] = parse_triple(w, "--weights")?;
            config.executor.web.weights = ScoreWeights::new(a, b, g)
                .map_err(|e| CliError::Usage(format!("--weights: {e}")))?;
        }
        if let Some(w) = &self.utility_weights {
            let [f, e, r] = parse_triple(w, "--utility-weights")?;
            config.protocol = EvalProtocol::new(f, e, r)
                .map_err(|e| CliError::Usage(format!("--utility-weights: {e}")))?;
        }
        if let Some(a) = &self.ablate {
            config.ablation = Ablation::parse(a).map_err(CliError::Usage)?;
        }
        Ok(config)
    }

    fn load(&self) -> Result<(Arc<Catalog>, IndexManifest)> {
        let (c, m) = load_index(&self.index).map_err(CliError::data)?;
        Ok((Arc::new(c), m))
    }
}

fn engine(args: &EngineArgs, planner: PlannerBackend) -> Result<Engine> {
    let config = args.config()?;
    let (catalog, _) = args.load()?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let memory = Arc::new(MemoryStore::new(clock.clone()));
    let engine = Engine::new(catalog, config, clock, memory);
    Ok(match planner {
        PlannerBackend::Rule => engine,
        PlannerBackend::Echo => {
            let backend = EchoBackend::new(engine.planner().clone());
            engine.with_plan_backend(Arc::new(backend))
        }
    })
}

fn ingest(a: IngestArgs) -> Result<()> {
    let now = Utc::now();
    let sources = CatalogSources {
        products: a.products,
        reviews: a.reviews,
        webdocs: a.webdocs,
    };
    let (catalog, report) = ingest_catalog(&sources, now).map_err(CliError::data)?;
    if a.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        for (name, r) in [
            ("products", &report.products),
            ("reviews", &report.reviews),
            ("webdocs", &report.webdocs),
        ] {
            println!(
                "{name:<9} accepted {:>7}  rejected {:>5}",
                r.accepted, r.rejected
            );
            for x in r.rejections.iter().take(20) {
                println!("  line {}: {}", x.line, x.reason);
            }
            if r.rejections.len() > 20 {
                println!("  ... {} more", r.rejections.len() - 20);
            }
        }
    }
    if report.total_rejected() > 0 && !a.lenient {
        return Err(CliError::Data(format!(
            "{} records rejected; rerun with --lenient to index the rest",
            report.total_rejected()
        )));
    }
    save_index(&catalog, &a.out, now).map_err(CliError::data)?;
    eprintln!("index written to {}", a.out.display());
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    if a.text.trim().is_empty() {
        return Err(CliError::Usage("query text is empty".into()));
    }
    let engine = engine(&a.engine, a.planner)?;
    let session = engine.create_session();
    let mut events: Vec<TurnEvent> = Vec::new();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let state = engine
        .run_turn(&session, &TurnRequest::new(&a.text), &mut |ev| {
            if a.json {
                let line = serde_json::to_string(&ev).expect("events serialize");
                let _ = writeln!(out, "{line}");
            }
            events.push(ev);
        })
        .map_err(CliError::data)?;
    if a.json {
        return Ok(());
    }
    for ev in &events {
        if let EventBody::Error { code, message } = &ev.body {
            return Err(CliError::Data(format!("{code:?}: {message}")));
        }
    }
    let Some(state) = state else {
        return Err(CliError::Data("turn produced no result".into()));
    };
    match render(&mut out, &state, engine.catalog()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::data(e)),
        _ => Ok(()),
    }
}

fn render(out: &mut impl Write, state: &TurnState, catalog: &Catalog) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<4} {:<10} {:<44} {:>9} {:>8}",
        "#", "id", "title", "price", "utility"
    )?;
    match &state.recommendation {
        Some(rec) => {
            for (i, item) in rec.ranked.iter().enumerate() {
                let p = catalog.product(&item.item_id).expect("ranked ids resolve");
                let gate = if item.utility.constraint_ok == 0 {
                    " (fails a constraint)"
                } else {
                    ""
                };
                writeln!(
                    out,
                    "{:<4} {:<10} {:<44} {:>9.2} {:>8.3}{gate}",
                    i + 1,
                    p.id,
                    truncate(&p.title, 44),
                    p.price,
                    item.utility.total
                )?;
            }
            writeln!(out)?;
            writeln!(out, "{}", rec.rationale.summary)?;
            for s in &rec.rationale.sentences {
                writeln!(out, "  - {}", s.text)?;
            }
        }
        None => {
            for (i, id) in state.ranked_ids().iter().enumerate() {
                let p = catalog.product(id).expect("candidate ids resolve");
                writeln!(
                    out,
                    "{:<4} {:<10} {:<44} {:>9.2} {:>8}",
                    i + 1,
                    p.id,
                    truncate(&p.title, 44),
                    p.price,
                    "-"
                )?;
            }
        }
    }
    if !state.facets.is_empty() {
        writeln!(out)?;
        for f in &state.facets {
            let buckets: Vec<String> = f
                .buckets
                .iter()
                .map(|b| format!("{} ({})", b.label, b.count))
                .collect();
            writeln!(out, "facet {}: {}", f.attribute, buckets.join(", "))?;
        }
    }
    for s in &state.suggestions {
        writeln!(out, "try: {}", s.text)?;
    }
    Ok(())
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        s.chars().take(n - 1).collect::<String>() + "…"
    }
}

fn summary(r: &BenchReport) -> String {
    let mut s = format!(
        "{:<14} {:>6} {:>8} {:>9}\n",
        "category", "cases", "acc@k", "failures"
    );
    for cat in CaseCategory::ALL {
        if let Some(c) = r.categories.get(&cat) {
            let name = serde_json::to_value(cat).expect("category serializes");
            s += &format!(
                "{:<14} {:>6} {:>8.3} {:>9}\n",
                name.as_str().unwrap_or_default(),
                c.cases,
                c.acc,
                c.failures
            );
        }
    }
    s += &format!(
        "{:<14} {:>6} {:>8.3}\n",
        "overall",
        r.traces.len(),
        r.overall
    );
    s
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let mut config = a.engine.config()?;
    config.executor.candidate_k = a.candidate_k.unwrap_or(a.k).max(1);
    let (catalog, manifest) = a.engine.load()?;
    let file = File::open(&a.cases)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", a.cases.display())))?;
    let cases = read_cases(BufReader::new(file)).map_err(CliError::data)?;
    check_cases(&cases, &catalog).map_err(CliError::data)?;
    let mut options = BenchOptions {
        engine: config,
        k: a.k,
        seed: a.seed,
        now: manifest.ingested_at,
        ..Default::default()
    };
    if let Some(p) = a.parallelism {
        options.parallelism = p.max(1);
    }
    let report = run_benchmark(catalog, &cases, &options);
    let json = report.to_json();
    match &a.out {
        Some(path) => {
            std::fs::write(path, json + "\n")
                .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
            print!("{}", summary(&report));
        }
        None => {
            match writeln!(std::io::stdout().lock(), "{json}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(CliError::data(e))
                }
                _ => {}
            }
            eprint!("{}", summary(&report));
        }
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
            .expect("SIGTERM handler");
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    ctrl_c.await;
}

fn serve(a: ServeArgs) -> Result<()> {
    let engine = engine(&a.engine, a.planner)?;
    if let Some(p) = a.snapshot.as_deref().filter(|p| p.exists()) {
        engine.memory().restore(p).map_err(CliError::data)?;
        eprintln!(
            "restored {} sessions from {}",
            engine.memory().session_ids().len(),
            p.display()
        );
    }
    let engine = Arc::new(engine);
    let rt = tokio::runtime::Runtime::new().map_err(CliError::data)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| CliError::Data(format!("cannot bind {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(CliError::data)?;
        eprintln!("listening on http://{addr}");
        cogsearch_service::serve(listener, engine, a.snapshot, shutdown_signal())
            .await
            .map_err(CliError::data)
    })
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let s = generate_catalog(&SynthConfig {
        products: a.products,
        seed: a.seed,
        ..Default::default()
    });
    s.write_jsonl(&a.out).map_err(CliError::data)?;
    println!(
        "{} products, {} reviews, {} webdocs in {}",
        s.products.len(),
        s.reviews.len(),
        s.webdocs.len(),
        a.out.display()
    );
    if let Some(path) = &a.cases {
        let catalog = s.build();
        let counts = CaseCounts {
            simple: a.simple,
            complex: a.complex,
            consultative: a.consultative,
        };
        let b = generate_benchmark(&catalog, a.seed, counts).map_err(CliError::data)?;
        write_jsonl_file(path, |w| write_cases(&b.cases, w))?;
        println!("{} cases in {}", b.cases.len(), path.display());
        for s in &b.shortfalls {
            eprintln!("note: {s}");
        }
    }
    // keep the source authorities next to the data so an engine config can pick them up
    let cfg = {
        let mut c = EngineConfig::default();
        c.executor.web.authority = synth::source_authority();
        c
    };
    let cfg_path = a.out.join("engine.json");
    std::fs::write(
        &cfg_path,
        serde_json::to_string_pretty(&cfg).expect("config serializes"),
    )
    .map_err(|e| CliError::Data(format!("cannot write {}: {e}", cfg_path.display())))?;
    Ok(())
}

fn write_jsonl_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COGSEARCH_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Query(a) => query(a),
        Command::Bench(a) => bench(a),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
