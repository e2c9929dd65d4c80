//! `provfig`: serve the API, seed demo data, run evaluation suites and work with
//! artifact bundles.
//!
//! Exit codes: 0 ok, 1 user error, 2 verification failure, 3 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use provfig::agent::backend_by_name;
use provfig::bundle::verify_bundle;
use provfig::demo::{demo_catalog, walkthrough, DemoSeeds, TEMPS};
use provfig::eval::{generate_suite, parse_suite, run_case, suite_to_jsonl, SuiteMetrics, SuiteReport, SuiteSpec, BUNDLED_SUITE};
use provfig::session::Workspace;
use provfig::TableCatalog;

#[derive(Parser)]
#[command(name = "provfig", version, about = "Provenance-carrying interactive figures")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory the workspace is loaded from and saved to after every change.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Backend for sessions that do not name one.
        #[arg(long, default_value = "template")]
        backend: String,
    },
    /// Generate the demo tables, optionally saving them into a data directory.
    Demo {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// Run an evaluation suite and report the three fidelity metrics.
    Eval {
        /// Suite JSONL; defaults to the bundled suite.
        #[arg(long, conflicts_with = "generate")]
        suite: Option<PathBuf>,
        /// Generate a suite instead. Takes an optional SuiteSpec JSON file.
        #[arg(long, num_args = 0..=1, default_missing_value = "")]
        generate: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for report.json, report.txt and (when generating) suite.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "template")]
        backend: String,
        /// Catalog from a saved data directory instead of the demo tables.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write an artifact bundle from a data directory.
    Export {
        #[arg(long)]
        artifact: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// Merge a bundle into a data directory.
    Import {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// Replay artifact versions and compare digests.
    Replay {
        /// Bundles to import into an empty workspace; every version is replayed.
        #[arg(long, conflicts_with_all = ["data_dir", "version"])]
        bundle: Vec<PathBuf>,
        #[arg(long, requires = "version")]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        version: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Verify bundles: rebuild their catalogs and replay every figure.
    Verify {
        #[arg(long, required = true)]
        bundle: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct SeedArgs {
    #[arg(long, default_value_t = DemoSeeds::default().temps)]
    temps_seed: u64,
    #[arg(long, default_value_t = DemoSeeds::default().innovation)]
    innovation_seed: u64,
}

enum Failure {
    User(String),
    Verify(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::User(_) => 1,
            Failure::Verify(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::User(m) | Failure::Verify(m) | Failure::Internal(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

fn user(e: impl std::fmt::Display) -> Failure {
    Failure::User(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.cmd {
        Cmd::Serve {
            port,
            host,
            data_dir,
            backend,
        } => serve(&host, port, data_dir, backend),
        Cmd::Demo { data_dir, seeds } => demo(data_dir, seeds),
        Cmd::Eval {
            suite,
            generate,
            seed,
            out,
            backend,
            data_dir,
            jobs,
        } => eval(suite, generate, seed, out, &backend, data_dir, jobs),
        Cmd::Export { artifact, out, data_dir } => export(&artifact, &out, &data_dir),
        Cmd::Import { bundle, data_dir } => import(&bundle, &data_dir),
        Cmd::Replay {
            bundle,
            data_dir,
            version,
            json,
        } => replay(&bundle, data_dir, version, json),
        Cmd::Verify { bundle, json } => verify(&bundle, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn open_workspace(dir: &Path) -> Result<Workspace, Failure> {
    if !dir.is_dir() {
        return Err(user(format!("{} is not a directory", dir.display())));
    }
    Workspace::open(dir, TableCatalog::new()).map_err(user)
}

fn serve(host: &str, port: u16, data_dir: Option<PathBuf>, backend: String) -> Outcome {
    if backend_by_name(&backend).is_none() {
        return Err(user(format!("unknown backend `{backend}`")));
    }
    let demo = demo_catalog(DemoSeeds::default()).map_err(internal)?;
    let ws = match &data_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(user)?;
            Workspace::open(d, demo).map_err(user)?
        }
        None => Workspace::new(demo),
    };
    let mut state = provfig_server::AppState::new(ws).with_default_backend(backend);
    if let Some(d) = data_dir {
        state = state.with_data_dir(d);
    }
    let rt = tokio::runtime::Runtime::new().map_err(internal)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await.map_err(user)?;
        let addr = listener.local_addr().map_err(internal)?;
        println!("listening on http://{addr}/api/v1");
        provfig_server::serve(listener, state).await.map_err(internal)
    })
}

fn demo(data_dir: Option<PathBuf>, seeds: SeedArgs) -> Outcome {
    let seeds = DemoSeeds {
        temps: seeds.temps_seed,
        innovation: seeds.innovation_seed,
    };
    let catalog = demo_catalog(seeds).map_err(internal)?;
    for id in catalog.table_ids() {
        let t = catalog.table(id).expect("listed");
        println!("{id:<12} {:>6} rows  {}", t.rows.len(), t.source_digest().short(16));
    }
    if catalog.table(TEMPS).map(|t| t.rows.len()) != Some(50 * 11 * 12) {
        return Err(internal("climate table has the wrong shape"));
    }
    if let Some(d) = data_dir {
        let ws = if d.join("catalog/manifest.json").exists() {
            let mut ws = Workspace::open(&d, TableCatalog::new()).map_err(user)?;
            for id in catalog.table_ids() {
                if ws.catalog.table(id).is_none() {
                    let t = catalog.table(id).expect("listed");
                    ws.catalog
                        .register_table(id.to_string(), t.schema.clone(), t.rows.clone())
                        .map_err(internal)?;
                }
            }
            ws
        } else {
            Workspace::new(catalog)
        };
        ws.save(&d).map_err(internal)?;
        println!("saved to {}", d.display());
    }
    println!("\nwalkthrough:");
    for (i, step) in walkthrough().iter().enumerate() {
        println!("  {}. {step}", i + 1);
    }
    println!("\nstart the API with: provfig serve --data-dir <dir>");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    suite: Option<PathBuf>,
    generate: Option<String>,
    seed: u64,
    out: Option<PathBuf>,
    backend: &str,
    data_dir: Option<PathBuf>,
    jobs: usize,
) -> Outcome {
    let backend = backend_by_name(backend).ok_or_else(|| user(format!("unknown backend `{backend}`")))?;
    let catalog = match &data_dir {
        Some(d) => {
            if !d.join("catalog/manifest.json").exists() {
                return Err(user(format!("no catalog in {}", d.display())));
            }
            provfig::bundle::load_catalog(&d.join("catalog")).map_err(user)?
        }
        None => demo_catalog(DemoSeeds::default()).map_err(internal)?,
    };
    let (cases, generated) = match (&suite, &generate) {
        (_, Some(spec)) => {
            let spec: SuiteSpec = if spec.is_empty() {
                SuiteSpec::default()
            } else {
                serde_json::from_slice(&read(Path::new(spec))?).map_err(user)?
            };
            let cases = generate_suite(&catalog, &spec, seed).map_err(user)?;
            (cases, true)
        }
        (Some(p), None) => {
            let text = String::from_utf8(read(p)?).map_err(user)?;
            (parse_suite(&text).map_err(user)?, false)
        }
        (None, None) => (parse_suite(BUNDLED_SUITE).map_err(internal)?, false),
    };
    if cases.is_empty() {
        return Err(user("the suite has no cases"));
    }
    let jobs = jobs.max(1).min(cases.len());
    let chunk = cases.len().div_ceil(jobs);
    let records: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = cases
            .chunks(chunk)
            .map(|part| {
                let (backend, catalog) = (backend.as_ref(), &catalog);
                s.spawn(move || part.iter().map(|c| run_case(c, backend, catalog)).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker")).collect()
    });
    let report = SuiteReport {
        metrics: SuiteMetrics::from_records(&records),
        cases: records,
    };
    let table = report.metrics.to_table();
    print!("{table}");
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(user)?;
        let json = serde_json::to_string_pretty(&report).map_err(internal)?;
        std::fs::write(dir.join("report.json"), json + "\n").map_err(user)?;
        std::fs::write(dir.join("report.txt"), &table).map_err(user)?;
        if generated {
            std::fs::write(dir.join("suite.jsonl"), suite_to_jsonl(&cases)).map_err(user)?;
        }
    }
    Ok(())
}

fn export(artifact: &str, out: &Path, data_dir: &Path) -> Outcome {
    let ws = open_workspace(data_dir)?;
    let bytes = ws.export(artifact).map_err(user)?;
    std::fs::write(out, &bytes).map_err(user)?;
    println!("wrote {} ({} bytes)", out.display(), bytes.len());
    Ok(())
}

fn import(bundle: &Path, data_dir: &Path) -> Outcome {
    let bytes = read(bundle)?;
    std::fs::create_dir_all(data_dir).map_err(user)?;
    let mut ws = Workspace::open(data_dir, TableCatalog::new()).map_err(user)?;
    let s = ws.import(&bytes).map_err(user)?;
    ws.save(data_dir).map_err(internal)?;
    println!(
        "imported {} at {} ({} new versions, tables added: {})",
        s.artifact_id,
        s.head_version,
        s.versions_added,
        if s.tables_added.is_empty() { "none".into() } else { s.tables_added.join(", ") }
    );
    Ok(())
}

fn replay(bundles: &[PathBuf], data_dir: Option<PathBuf>, version: Option<String>, json: bool) -> Outcome {
    let mut reports = Vec::new();
    if let Some(d) = data_dir {
        let ws = open_workspace(&d)?;
        let v = version.expect("required by clap");
        reports.push(ws.replay(&v).map_err(user)?);
    } else {
        if bundles.is_empty() {
            return Err(user("pass --bundle, or --data-dir with --version"));
        }
        for path in bundles {
            let bytes = read(path)?;
            let mut ws = Workspace::default();
            let s = ws.import(&bytes).map_err(|e| user(format!("{}: {e}", path.display())))?;
            let mut ids: Vec<String> = ws
                .history
                .ledger
                .versions_of(&s.artifact_id)
                .iter()
                .map(|v| v.version_id.clone())
                .collect();
            ids.sort();
            for v in ids {
                reports.push(ws.replay(&v).map_err(internal)?);
            }
        }
    }
    let ok = reports.iter().all(|r| r.ok());
    if json {
        println!("{}", serde_json::to_string(&reports).map_err(internal)?);
    } else {
        for r in &reports {
            for f in &r.figures {
                let status = if f.matched {
                    "match"
                } else if f.nondeterministic {
                    "nondeterministic"
                } else {
                    "MISMATCH"
                };
                println!(
                    "{:<30} {:<16} {:<14} {status}",
                    r.version_id,
                    f.figure_id,
                    f.expected_digest.short(12)
                );
            }
        }
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Verify("replayed digests differ".into()))
    }
}

fn verify(bundles: &[PathBuf], json: bool) -> Outcome {
    let mut reports = Vec::new();
    for path in bundles {
        let bytes = read(path)?;
        let report = verify_bundle(&bytes).map_err(|e| user(format!("{}: {e}", path.display())))?;
        if !json {
            println!("{}", path.display());
            print!("{}", report.table());
        }
        reports.push(report);
    }
    if json {
        println!("{}", serde_json::to_string(&reports).map_err(internal)?);
    }
    let bad: Vec<String> = reports
        .iter()
        .zip(bundles)
        .filter(|(r, _)| !r.ok())
        .map(|(r, p)| format!("{} ({})", p.display(), r.mismatched().join(", ")))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verify(format!("mismatch in {}", bad.join("; "))))
    }
}
