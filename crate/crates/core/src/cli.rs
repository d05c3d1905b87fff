//! Command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Argument literals
//! use the REST type-prefix syntax (`i:5`, `s:text`, `t:true`, `b64:AQI=`, ...). The
//! default server URL comes from `LICAS_URL`.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use parking_lot::RwLock;

use crate::admin::{self, AdminService, ServiceFactory, NETWORK_FILE};
use crate::http::{HttpClient, RemoteError};
use crate::query::{self, Location};
use crate::registry::{PasswordDigest, Registry};
use crate::server::{Daemon, Server};
use crate::solver;
use crate::wire::{self, MethodCall, ServicePath, Value, WireResponse};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

const DEFAULT_URL: &str = "http://127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "licas", version, about = "Service network node and client")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Target {
    /// Base URL of the node.
    #[arg(long, env = "LICAS_URL", default_value = DEFAULT_URL)]
    url: String,
}

#[derive(Debug, Args)]
struct AdminAuth {
    #[arg(long, env = "LICAS_ADMIN_PASSWORD", default_value = "")]
    admin_password: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a node until killed.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Config directory: loaded at start, default target of saveConfig.
        #[arg(long)]
        config: Option<PathBuf>,
        /// File root as `alias=path`; repeatable.
        #[arg(long = "root")]
        roots: Vec<String>,
        /// Directory served under `/ui`.
        #[arg(long)]
        ui: Option<PathBuf>,
        /// Password for `/admin`; the endpoint is open when empty.
        #[arg(long, env = "LICAS_ADMIN_PASSWORD", default_value = "")]
        admin_password: String,
        #[arg(long, default_value_t = 4)]
        threads: usize,
        /// Do not start behaviour loops.
        #[arg(long)]
        no_behaviours: bool,
    },
    /// Call a service method and print the result.
    Invoke {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        service: String,
        #[arg(long)]
        method: String,
        /// Argument literal such as `i:5`; repeatable.
        #[arg(long = "arg", allow_hyphen_values = true)]
        args: Vec<String>,
        #[arg(long, default_value = "")]
        password: String,
        /// Print the raw response document.
        #[arg(long)]
        xml: bool,
    },
    /// Evaluate a query against a file (`-` for stdin).
    Query {
        /// Expected mode, checked against the query.
        #[arg(long, value_parser = ["xml", "text"])]
        mode: Option<String>,
        #[arg(long)]
        q: String,
        #[arg(long)]
        file: PathBuf,
    },
    /// Run a solver script and print the fitness history.
    Solve {
        #[arg(long)]
        script: PathBuf,
    },
    /// Ask a node to save its configuration into a directory.
    Save {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        auth: AdminAuth,
        /// Directory on the node's file system.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ask a node to load a saved configuration.
    Load {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        auth: AdminAuth,
        /// Directory on the node's file system.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// List or manage a node's peers.
    Peers {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        auth: AdminAuth,
        #[arg(long, conflicts_with_all = ["refresh", "remove"])]
        add: Option<String>,
        #[arg(long, conflicts_with = "remove")]
        refresh: Option<String>,
        #[arg(long)]
        remove: Option<String>,
    },
    /// Print a node's network description.
    View {
        #[command(flatten)]
        target: Target,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<RemoteError> for Failure {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::Fault(f) => Failure::Runtime(format!("fault {}: {}", f.code.code(), f.message)),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

/// Runs the CLI with process stdout and stderr.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn write_line(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<(), Failure> {
    writeln!(out, "{line}").map_err(|e| Failure::Runtime(e.to_string()))
}

fn service_path(raw: &str) -> Result<ServicePath, Failure> {
    ServicePath::parse(raw.trim_matches('/')).map_err(|e| Failure::Usage(format!("service {raw:?}: {e}")))
}

fn admin_call(url: &str, password: &str, method: &str, args: Vec<Value>) -> Result<Value, Failure> {
    let call = MethodCall::new(ServicePath::parse("admin").expect("valid path"), method)
        .password(password)
        .args(args);
    Ok(HttpClient::default().call_admin(url, &call)?)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Serve {
            host,
            port,
            config,
            roots,
            ui,
            admin_password,
            threads,
            no_behaviours,
        } => serve(
            ServeOptions {
                addr: format!("{host}:{port}"),
                config,
                roots,
                ui,
                admin_password,
                threads,
                behaviours: !no_behaviours,
            },
            out,
        ),
        Command::Invoke {
            target,
            service,
            method,
            args,
            password,
            xml,
        } => {
            let values = args
                .iter()
                .map(|a| wire::parse_literal(a).ok_or_else(|| Failure::Usage(format!("bad argument literal {a:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let call = MethodCall::new(service_path(&service)?, method)
                .password(password)
                .args(values);
            let result = HttpClient::default().call(&target.url, &call);
            if xml {
                let response = match &result {
                    Ok(v) => WireResponse::Ok(v.clone()),
                    Err(RemoteError::Fault(f)) => WireResponse::Fault(f.clone()),
                    Err(e) => return Err(Failure::Runtime(e.to_string())),
                };
                write_line(out, String::from_utf8_lossy(&wire::encode_response(&response)))?;
                return match result {
                    Ok(_) => Ok(()),
                    Err(e) => Err(e.into()),
                };
            }
            write_line(out, result?.to_display_string())
        }
        Command::Query { mode, q, file } => {
            let query = query::parse_query(&q).map_err(|e| Failure::Usage(e.to_string()))?;
            if let Some(expected) = mode {
                let actual = match query.mode {
                    query::Mode::Xml => "xml",
                    query::Mode::Text => "text",
                };
                if expected != actual {
                    return Err(Failure::Usage(format!(
                        "--mode {expected} but the query is a {actual} query"
                    )));
                }
            }
            let content = if file.as_os_str() == "-" {
                std::io::read_to_string(std::io::stdin())
            } else {
                std::fs::read_to_string(&file)
            }
            .map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
            let result = query::eval_str(&query, &content).map_err(|e| Failure::Runtime(e.to_string()))?;
            for m in result.matches {
                let location = match m.location {
                    Location::Element { path, .. } => path,
                    Location::Line(n) => format!("line {n}"),
                };
                write_line(out, format!("{location}\t{}", m.content))?;
            }
            Ok(())
        }
        Command::Solve { script } => {
            let outcome = solver::solve_from_script(&script, &Registry::new()).map_err(|e| match e {
                solver::SolverError::Script(m) | solver::SolverError::BadConfig(m) => Failure::Usage(m),
                other => Failure::Runtime(other.to_string()),
            })?;
            for (label, reason) in &outcome.gather_report {
                write_line(out, format!("skipped {label}: {reason}"))?;
            }
            for (generation, f) in outcome.solution.history.iter().enumerate() {
                write_line(
                    out,
                    format!("generation {generation} fitness {}", wire::format_real(*f)),
                )?;
            }
            for (label, group) in outcome.labels.iter().zip(&outcome.solution.best) {
                write_line(out, format!("{label}\tgroup {group}"))?;
            }
            write_line(
                out,
                format!(
                    "seed {} fitness {}",
                    outcome.config.seed,
                    wire::format_real(outcome.solution.fitness)
                ),
            )
        }
        Command::Save { target, auth, out: dir } => {
            let v = admin_call(
                &target.url,
                &auth.admin_password,
                "saveConfig",
                vec![Value::text(dir.display().to_string())],
            )?;
            write_line(out, format!("saved {}", v.to_display_string()))
        }
        Command::Load { target, auth, input } => {
            let v = admin_call(
                &target.url,
                &auth.admin_password,
                "loadConfig",
                vec![Value::text(input.display().to_string())],
            )?;
            write_line(out, v.to_display_string())
        }
        Command::Peers {
            target,
            auth,
            add,
            refresh,
            remove,
        } => {
            let (method, arg) = match (add, refresh, remove) {
                (Some(u), _, _) => ("registerPeer", Some(u)),
                (_, Some(u), _) => ("refreshPeer", Some(u)),
                (_, _, Some(u)) => ("removePeer", Some(u)),
                _ => ("listPeers", None),
            };
            let v = admin_call(
                &target.url,
                &auth.admin_password,
                method,
                arg.map(Value::Text).into_iter().collect(),
            )?;
            match v {
                Value::List(items) => {
                    for item in items {
                        write_line(out, item.to_display_string())?;
                    }
                    Ok(())
                }
                other => write_line(out, other.to_display_string()),
            }
        }
        Command::View { target } => {
            let reply = HttpClient::default()
                .get(&format!("{}/meta", target.url.trim_end_matches('/')))
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            if reply.status != 200 {
                return Err(Failure::Runtime(format!("status {}", reply.status)));
            }
            write_line(out, String::from_utf8_lossy(&reply.body))
        }
    }
}

/// Settings for [`start_node`].
#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub addr: String,
    pub config: Option<PathBuf>,
    pub roots: Vec<String>,
    pub ui: Option<PathBuf>,
    pub admin_password: String,
    pub threads: usize,
    pub behaviours: bool,
}

/// A running node as started by `serve`.
pub struct Node {
    pub daemon: Daemon,
    pub registry: Registry,
    pub factory: Arc<RwLock<ServiceFactory>>,
    pub load_report: Option<admin::LoadReport>,
    scheduler: Option<crate::registry::BehaviourScheduler>,
}

impl Node {
    pub fn shutdown(self) {
        if let Some(s) = self.scheduler {
            s.stop();
        }
        self.daemon.shutdown();
    }
}

/// Builds the registry, loads config, and starts the daemon.
pub fn start_node(options: &ServeOptions) -> Result<Node, String> {
    let registry = Registry::new();
    {
        let roots = registry.file_roots();
        let mut roots = roots.write();
        for spec in &options.roots {
            roots.add_spec(spec).map_err(|e| format!("--root {spec}: {e}"))?;
        }
    }
    let mut factory = match &options.config {
        Some(dir) => ServiceFactory::open(dir).map_err(|e| e.to_string())?,
        None => ServiceFactory::new(),
    };
    let load_report = match &options.config {
        Some(dir) if dir.join(NETWORK_FILE).exists() => {
            Some(admin::load_config(&registry, &mut factory, dir).map_err(|e| e.to_string())?)
        }
        _ => None,
    };
    let factory = Arc::new(RwLock::new(factory));
    let digest = if options.admin_password.is_empty() {
        PasswordDigest::open()
    } else {
        PasswordDigest::from_plain(&options.admin_password)
    };
    let admin = AdminService::new(registry.clone(), Arc::clone(&factory), options.config.clone());
    let mut server = Server::new(registry.clone()).with_admin(Arc::new(admin), digest);
    if let Some(ui) = &options.ui {
        server = server.with_ui_dir(ui);
    }
    let daemon =
        Daemon::start(server, &options.addr, options.threads.max(1)).map_err(|e| format!("{}: {e}", options.addr))?;
    let scheduler = options.behaviours.then(|| registry.start_behaviours());
    Ok(Node {
        daemon,
        registry,
        factory,
        load_report,
        scheduler,
    })
}

fn serve(options: ServeOptions, out: &mut dyn Write) -> Result<(), Failure> {
    let node = start_node(&options).map_err(Failure::Runtime)?;
    if let Some(report) = &node.load_report {
        write_line(
            out,
            format!("loaded {} services, {} links", report.services, report.links),
        )?;
        for (path, kind) in &report.placeholders {
            write_line(out, format!("placeholder {path} (unknown kind {kind})"))?;
        }
        for (what, why) in &report.failures {
            write_line(out, format!("not loaded {what}: {why}"))?;
        }
    }
    if options.admin_password.is_empty() {
        write_line(out, "warning: /admin is open; set --admin-password")?;
    }
    write_line(out, format!("listening on {}", node.daemon.url()))?;
    let _ = out.flush();
    let Node { daemon, scheduler, .. } = node;
    daemon.join();
    drop(scheduler);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with(std::iter::once("licas").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_capture(&["invoke", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&[]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["--help"]).0, EXIT_OK);
        let (code, _, err) = run_capture(&["invoke", "--service", "A", "--method", "m", "--arg", "q:1"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("bad argument literal"));
    }

    #[test]
    fn query_command() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("d.xml");
        std::fs::write(&f, "<doc><item>1</item><item>2</item></doc>").unwrap();
        let (code, out, _) = run_capture(&[
            "query",
            "--mode",
            "xml",
            "--q",
            "MATCH /doc/item WHERE . > 1",
            "--file",
            f.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out, "/doc[1]/item[2]\t2\n");
        let (code, _, _) = run_capture(&[
            "query",
            "--mode",
            "text",
            "--q",
            "MATCH /doc",
            "--file",
            f.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
        let (code, _, _) = run_capture(&["query", "--q", "LINES", "--file", "/nonexistent/file"]);
        assert_eq!(code, EXIT_RUNTIME);
    }
}
