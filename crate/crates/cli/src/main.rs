use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rrt_core::json::{coerce_arg, to_json};
use rrt_core::node::LogSink;
use rrt_core::toolkit::{bench_policy_overhead, explain, install_demo_types, p2p_demo};
use rrt_core::{Endpoint, Error, Node, NodeConfig, PeerKind, Value};

#[derive(Parser)]
#[command(name = "rrt", version, about = "Deploy objects as services and call them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve a node until interrupted.
    Node {
        #[arg(long, env = "RRT_PORT", default_value_t = 5001)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Policy rules (XML) applied before serving.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Deployments (JSON) applied before serving.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        fast_fail: bool,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        concrete_type_always: bool,
        /// Fault log destination: a file path or `-` for stderr.
        #[arg(long)]
        log: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Invoke a method on a remote service and print the result as JSON.
    Call {
        /// host:port of the serving node.
        endpoint: String,
        service: String,
        method: String,
        /// JSON arguments. A single array stands for the whole argument list
        /// unless the method takes exactly one argument.
        args: Vec<String>,
    },
    /// Show which rule decides a transmission.
    PolicyExplain {
        policy_file: PathBuf,
        /// JSON call context: {"role","index","class","method","actual","peer"}.
        context: String,
    },
    /// Measure the cost of rule resolution on a local node pair.
    Bench {
        #[arg(long, default_value_t = 1600)]
        calls: usize,
    },
    /// Run the P2P walkthrough and print its transcript.
    Demo,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("rrt: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("rrt: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Node {
            port,
            host,
            policy,
            manifest,
            fast_fail,
            concrete_type_always,
            log,
            workers,
        } => {
            let mut config = NodeConfig {
                host,
                port,
                fast_fail,
                concrete_type_always,
                policy_file: policy,
                deploy_manifest: manifest,
                log_sink: match log.as_deref() {
                    None => LogSink::Memory,
                    Some("-") => LogSink::Stderr,
                    Some(path) => LogSink::File(path.into()),
                },
                ..NodeConfig::default()
            };
            if let Some(w) = workers {
                config.workers = w;
            }
            let node = Node::start(config, |rt| install_demo_types(rt.registry()))?;
            println!("listening on {}", node.endpoint());
            for s in node.runtime().registry().services() {
                println!("service {} {} {}", s.name.as_deref().unwrap_or("-"), s.interface.type_name, s.guid);
            }
            node.join();
            Ok(())
        }
        Command::Call {
            endpoint,
            service,
            method,
            args,
        } => call(&endpoint, &service, &method, &args),
        Command::PolicyExplain { policy_file, context } => {
            let doc = std::fs::read_to_string(&policy_file)
                .map_err(|e| Failure::Usage(format!("{}: {e}", policy_file.display())))?;
            let text = explain(&doc, &context).map_err(|e| Failure::Usage(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
        Command::Bench { calls } => {
            if calls == 0 {
                return Err(Failure::Usage("--calls must be at least 1".into()));
            }
            let report = bench_policy_overhead(calls)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
        Command::Demo => {
            for line in p2p_demo()? {
                println!("{line}");
            }
            Ok(())
        }
    }
}

fn call(endpoint: &str, service: &str, method: &str, raw_args: &[String]) -> Result<(), Failure> {
    let target: Endpoint = endpoint.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let mut json_args = raw_args
        .iter()
        .map(|a| serde_json::from_str::<serde_json::Value>(a).map_err(|e| Failure::Usage(format!("argument `{a}`: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;

    // An ephemeral local node lets by-reference arguments be exported.
    let config = NodeConfig {
        workers: 2,
        ..NodeConfig::default()
    };
    let local = Node::start(config, |rt| install_demo_types(rt.registry()))?;
    let rt = local.runtime();
    let handle = match rt.get_object_by_name(target.host(), target.port(), service)? {
        Value::Remote(h) => h,
        other => return Err(Failure::Runtime(format!("`{service}` resolved to a local value {other:?}"))),
    };
    let overloads: Vec<_> = handle.interface().methods_named(method).cloned().collect();
    if overloads.is_empty() {
        return Err(Failure::Usage(format!("`{}` has no method `{method}`", handle.interface().type_name)));
    }
    if let [serde_json::Value::Array(items)] = json_args.as_slice() {
        if overloads.iter().all(|m| m.arity() != 1) {
            json_args = items.clone();
        }
    }
    let descriptor = overloads
        .iter()
        .find(|m| m.arity() == json_args.len())
        .ok_or_else(|| Failure::Usage(format!("no overload of `{method}` takes {} arguments", json_args.len())))?;
    let args = json_args
        .iter()
        .zip(&descriptor.params)
        .map(|(j, p)| coerce_arg(j, p, rt.registry()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    match handle.invoke_as(method, &args, PeerKind::Plain) {
        Ok(v) => {
            println!("{}", to_json(&v));
            Ok(())
        }
        Err(e) => {
            let fault = rrt_core::codec::Fault::from_error(&e);
            println!(
                "{}",
                serde_json::json!({"fault": {"kind": fault.kind.as_str(), "class": fault.class, "message": fault.message}})
            );
            Err(Failure::Runtime(e.to_string()))
        }
    }
}
