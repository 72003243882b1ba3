//! `attnamer`: command-line client for the speaker-naming service.
//!
//! Every subcommand except `serve` talks to a service over HTTP. With
//! `--server` (or `ATTNAMER_SERVER`) it uses an existing instance;
//! otherwise it starts one in-process on an ephemeral loopback port for
//! the duration of the command.
//!
//! Exit codes: 0 success, 2 parse error (message carries the line number),
//! 3 empty knowledge store, 4 benchmark cell failure, 1 anything else.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attnamer_client::engine::metrics::EvalReport;
use attnamer_client::types::{BenchRequest, EnrollDocRequest, EvalDocRequest, SynthRequest};
use attnamer_client::{Client, ClientError};

#[derive(Parser)]
#[command(name = "attnamer", version, about = "Attention-based speaker naming over face/voice embeddings")]
struct Cli {
    /// Service URL (e.g. http://127.0.0.1:8787); when absent an in-process
    /// service is started for this invocation.
    #[arg(long, global = true, env = "ATTNAMER_SERVER")]
    server: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: SocketAddr,
    },

    /// Append shots from an additions file to a knowledge file (written
    /// atomically; a missing knowledge file is created).
    Enroll {
        #[arg(long)]
        knowledge: PathBuf,
        #[arg(long)]
        additions: PathBuf,
    },

    /// Evaluate a method on a knowledge file and a window manifest;
    /// prints one JSON report to stdout.
    Eval {
        #[arg(long)]
        knowledge: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Confidence threshold for naming a speaker.
        #[arg(long, default_value_t = 0.25)]
        tau: f32,
        /// Base windows per evaluation window (majority vote).
        #[arg(long, default_value_t = 1)]
        factor: usize,
        /// att, tfs or lwf.
        #[arg(long, default_value = "att")]
        method: String,
        #[arg(long, env = "ATTNAMER_SEED")]
        seed: Option<u64>,
        /// Setup-timer accounting: inclusive or exclusive of data loading.
        #[arg(long, default_value = "inclusive")]
        accounting: String,
        /// Append the report as a CSV row (header written on creation).
        #[arg(long)]
        csv: Option<PathBuf>,
    },

    /// Run the (method x identity count x shots) comparison grid; prints
    /// CSV to stdout.
    Bench {
        /// Comma-separated identity counts (default 5,10,...,50; pass the
        /// wider 5..50 by 5 plus 100..500 by 50 sweep for the full-scale
        /// comparison -- expect hours for the gradient methods there).
        #[arg(long, value_delimiter = ',')]
        grid_ids: Option<Vec<usize>>,
        /// Comma-separated shots-per-identity values (default 5,50).
        #[arg(long, value_delimiter = ',')]
        grid_shots: Option<Vec<usize>>,
        /// Comma-separated methods (default att,tfs,lwf).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, env = "ATTNAMER_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        d_face: Option<usize>,
        #[arg(long)]
        d_voice: Option<usize>,
        /// Angular noise (radians) of the synthetic population.
        #[arg(long)]
        noise: Option<f32>,
        #[arg(long)]
        queries_per_id: Option<usize>,
        #[arg(long)]
        tau: Option<f32>,
        /// Timing repetitions per cell (median reported, minimum 3).
        #[arg(long)]
        repetitions: Option<usize>,
        /// Worker cap; timing keeps cells serial, accepted for scripts.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also write the CSV here (atomically).
        #[arg(long)]
        csv: Option<PathBuf>,
    },

    /// Generate a synthetic population: a knowledge file and optionally a
    /// held-out window manifest.
    Gen {
        /// Number of identities.
        #[arg(long)]
        ids: usize,
        /// Enrollment shots per identity.
        #[arg(long)]
        shots: usize,
        #[arg(long)]
        knowledge: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 512)]
        d_face: usize,
        #[arg(long, default_value_t = 512)]
        d_voice: usize,
        /// Angular noise (radians) for both modalities.
        #[arg(long, default_value_t = 0.0)]
        noise: f32,
        #[arg(long, default_value_t = 2)]
        queries_per_id: usize,
        /// matched:non-matched window ratio in the manifest, e.g. 1:4.
        #[arg(long, default_value = "1:4")]
        ratio: String,
        #[arg(long, env = "ATTNAMER_SEED")]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CmdError {
    code: u8,
    message: String,
}

impl CmdError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ClientError> for CmdError {
    fn from(e: ClientError) -> Self {
        let code = match e.kind() {
            Some("parse") => 2,
            Some("empty_store") => 3,
            _ => 1,
        };
        CmdError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::new(1, e.to_string())
    }
}

/// Connect to `--server`, or start an in-process service for this
/// invocation. The returned handle must stay alive while the client is in
/// use; dropping it shuts the embedded service down.
fn connect(
    server: Option<String>,
) -> Result<(Option<attnamer_service::ServerHandle>, Client), CmdError> {
    match server {
        Some(url) => {
            let client = Client::new(url.clone());
            client
                .health()
                .map_err(|e| CmdError::new(1, format!("cannot reach service at {url}: {e}")))?;
            Ok((None, client))
        }
        None => {
            let handle = attnamer_service::spawn_ephemeral()
                .map_err(|e| CmdError::new(1, format!("cannot start service: {e}")))?;
            let client = Client::new(handle.base_url());
            Ok((Some(handle), client))
        }
    }
}

fn read_file(path: &Path) -> Result<String, CmdError> {
    std::fs::read_to_string(path)
        .map_err(|e| CmdError::new(1, format!("{}: {e}", path.display())))
}

/// Write via a temp file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CmdError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp.{}",
            path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
            std::process::id()
        )),
        None => PathBuf::from(format!(".attnamer.tmp.{}", std::process::id())),
    };
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CmdError::new(1, format!("{}: {e}", path.display()))
    })
}

fn parse_ratio(text: &str) -> Result<(u32, u32), CmdError> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| CmdError::new(1, format!("ratio '{text}' must look like 1:4")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<u32>()
            .map_err(|_| CmdError::new(1, format!("ratio '{text}' must look like 1:4")))
    };
    Ok((parse(a)?, parse(b)?))
}

/// Print to stdout, treating a closed pipe (`attnamer bench | head`) as a
/// normal early exit rather than an error.
fn print_stdout(text: &str) -> Result<(), CmdError> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(e.into()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), CmdError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CmdError::new(1, format!("cannot encode output: {e}")))?;
    print_stdout(&text)?;
    print_stdout("\n")
}

fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Serve { addr } => {
            attnamer_service::serve_blocking(addr)?;
            Ok(())
        }

        Command::Enroll {
            knowledge,
            additions,
        } => {
            let (_server_guard, client) = connect(cli.server.clone())?;
            let existing = if knowledge.exists() {
                read_file(&knowledge)?
            } else {
                String::new()
            };
            let additions_text = read_file(&additions)?;
            let response = client.enroll(&EnrollDocRequest {
                knowledge: existing,
                additions: additions_text,
            })?;
            write_atomic(&knowledge, &response.knowledge)?;
            let summary = serde_json::json!({
                "knowledge": knowledge.display().to_string(),
                "n_identities": response.n_identities,
                "n_shots": response.n_shots,
                "params_bytes": response.params_bytes,
                "params_kb": response.params_kb,
                "shot_counts": response.shot_counts,
            });
            print_json(&summary)
        }

        Command::Eval {
            knowledge,
            manifest,
            tau,
            factor,
            method,
            seed,
            accounting,
            csv,
        } => {
            let (_server_guard, client) = connect(cli.server.clone())?;
            let report = client.eval(&EvalDocRequest {
                knowledge: read_file(&knowledge)?,
                manifest: read_file(&manifest)?,
                method: Some(method),
                tau: Some(tau),
                factor: Some(factor),
                seed,
                accounting: Some(accounting),
            })?;
            if let Some(csv_path) = csv {
                append_csv_row(&csv_path, EvalReport::CSV_HEADER, &report.to_csv_row())?;
            }
            print_json(&report)
        }

        Command::Bench {
            grid_ids,
            grid_shots,
            methods,
            seed,
            d_face,
            d_voice,
            noise,
            queries_per_id,
            tau,
            repetitions,
            jobs,
            csv,
        } => {
            let (_server_guard, client) = connect(cli.server.clone())?;
            let response = client.bench(&BenchRequest {
                grid_ids,
                grid_shots,
                methods,
                seed,
                d_face,
                d_voice,
                noise,
                queries_per_id,
                tau,
                repetitions,
                jobs: Some(jobs),
            })?;
            if let Some(csv_path) = csv {
                write_atomic(&csv_path, &response.csv)?;
            }
            print_stdout(&response.csv)?;
            if let Some(err) = response.error {
                return Err(CmdError::new(
                    4,
                    format!("bench cell failed: {} (kind: {})", err.message, err.kind),
                ));
            }
            Ok(())
        }

        Command::Gen {
            ids,
            shots,
            knowledge,
            manifest,
            d_face,
            d_voice,
            noise,
            queries_per_id,
            ratio,
            seed,
        } => {
            let (_server_guard, client) = connect(cli.server.clone())?;
            let response = client.synth(&SynthRequest {
                n_ids: ids,
                shots_per_id: shots,
                d_face: Some(d_face),
                d_voice: Some(d_voice),
                face_noise: Some(noise),
                voice_noise: Some(noise),
                distractor_ratio: Some(parse_ratio(&ratio)?),
                queries_per_id: Some(queries_per_id),
                max_centroid_cos: None,
                seed,
            })?;
            write_atomic(&knowledge, &response.knowledge)?;
            if let Some(manifest_path) = &manifest {
                write_atomic(manifest_path, &response.manifest)?;
            }
            let summary = serde_json::json!({
                "knowledge": knowledge.display().to_string(),
                "manifest": manifest.as_ref().map(|p| p.display().to_string()),
                "n_identities": response.n_identities,
                "n_shots": response.n_shots,
                "n_windows": response.n_windows,
            });
            print_json(&summary)
        }
    }
}

fn append_csv_row(path: &Path, header: &str, row: &str) -> Result<(), CmdError> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if fresh {
        writeln!(file, "{header}")?;
    }
    writeln!(file, "{row}")?;
    Ok(())
}
