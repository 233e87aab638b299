//! `fmst`: session analysis from the command line.
//!
//! Exit codes: 0 the property holds / all checks passed; 1 the property
//! fails (ill-typed, not a subtype, incoherent, unbounded, simulation did
//! not terminate); 2 usage or parse error; 3 a resource cap was exceeded.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fmst_core::parser::{
    parse_program, parse_session_map, render_map, resolve_and_validate, SourceFile,
};
use fmst_core::redsys::DEFAULT_STATE_CAP;
use fmst_core::runtime::{Runtime, Scheduler, SimulateOptions, TraceOutcome};
use fmst_core::subtyping;
use fmst_core::syntax::{Cost, ProcName, Program, Role, SessionMap, TypeId, TypeName};
use fmst_core::{typecheck, typelts};

#[derive(Parser)]
#[command(name = "fmst", version, about = "Fair multiparty session toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Input file (.fmst)
    file: PathBuf,
    /// Emit JSON instead of text
    #[arg(long)]
    json: bool,
    /// Print extra detail
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Type-check every definition of a program
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// Decide fair subtyping between two declared types
    Subtype {
        #[command(flatten)]
        common: Common,
        /// Left (sub)type name
        #[arg(long)]
        left: String,
        /// Right (super)type name
        #[arg(long)]
        right: String,
        /// Print the per-pair weight table
        #[arg(long)]
        weights: bool,
    },
    /// Decide coherence of a session map file
    Coherence {
        #[command(flatten)]
        common: Common,
    },
    /// Print the rank of a session map file
    Rank {
        #[command(flatten)]
        common: Common,
    },
    /// Decide boundedness of a declared type
    Bounded {
        #[command(flatten)]
        common: Common,
        /// Type name
        #[arg(long = "type")]
        type_name: String,
    },
    /// Build the dual session map of a declared type
    Dual {
        #[command(flatten)]
        common: Common,
        /// Type name
        #[arg(long = "type")]
        type_name: String,
        /// Role played by the given type
        #[arg(long)]
        role: String,
        /// Domain roles (comma separated); defaults to the type's targets
        #[arg(long, value_delimiter = ',')]
        domain: Vec<String>,
    },
    /// Build a discriminator for a divergent pair of types
    Discriminate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        left: String,
        #[arg(long)]
        right: String,
        /// Role played by the discriminated types
        #[arg(long)]
        role: String,
    },
    /// Explore the session-map LTS of a map file
    Lts {
        #[command(flatten)]
        common: Common,
        /// Emit GraphViz DOT
        #[arg(long)]
        dot: bool,
    },
    /// Run a closed program under a scheduler
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Entry definition (no parameters)
        #[arg(long)]
        entry: String,
        /// Scheduler: guided or random
        #[arg(long, default_value = "guided")]
        scheduler: String,
        /// Seed for the random scheduler
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "max-steps", default_value_t = 10_000)]
        max_steps: usize,
        /// Print the trace
        #[arg(long)]
        trace: bool,
        /// Fuse r-pick and r-tag into one step
        #[arg(long)]
        fused: bool,
        /// Re-check every visited state against the type system
        #[arg(long = "check-states")]
        check_states: bool,
    },
}

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CAP: u8 = 3;

fn fail(msg: impl std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("fmst: {msg}");
    ExitCode::from(code)
}

fn load_source(path: &PathBuf) -> Result<SourceFile, ExitCode> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(SourceFile::new(path.display().to_string(), text)),
        Err(e) => Err(fail(format!("{}: {e}", path.display()), EXIT_USAGE)),
    }
}

fn load_program(path: &PathBuf) -> Result<Program, ExitCode> {
    let src = load_source(path)?;
    let raw = match parse_program(&src.text) {
        Ok(raw) => raw,
        Err(diags) => {
            for d in &diags {
                eprintln!("{}", src.render_diagnostic(d));
            }
            return Err(ExitCode::from(EXIT_USAGE));
        }
    };
    match resolve_and_validate(&raw) {
        Ok(p) => Ok(p),
        Err(diags) => {
            for d in &diags {
                eprintln!("{}", src.render_diagnostic(d));
            }
            Err(ExitCode::from(EXIT_USAGE))
        }
    }
}

fn load_map(path: &PathBuf) -> Result<(Program, SessionMap), ExitCode> {
    let src = load_source(path)?;
    match parse_session_map(&src.text) {
        Ok(pm) => Ok(pm),
        Err(diags) => {
            for d in &diags {
                eprintln!("{}", src.render_diagnostic(d));
            }
            Err(ExitCode::from(EXIT_USAGE))
        }
    }
}

fn lookup_type(program: &Program, name: &str) -> Result<TypeId, ExitCode> {
    program
        .types
        .get(&TypeName::new(name))
        .copied()
        .ok_or_else(|| fail(format!("unknown type `{name}`"), EXIT_USAGE))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Check { common } => {
            let program = match load_program(&common.file) {
                Ok(p) => p,
                Err(e) => return e,
            };
            let report = typecheck::check_program(&program);
            if common.json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
            } else {
                for def in &report.definitions {
                    if def.well_typed {
                        let rank = def
                            .rank
                            .map(|c| c.to_string())
                            .unwrap_or_else(|| "?".into());
                        println!("{}: well-typed, rank {}", def.name, rank);
                        for w in &def.warnings {
                            println!("  warning: {w}");
                        }
                    } else {
                        println!("{}: ill-typed ({})", def.name, def.errors.join("; "));
                    }
                }
            }
            if report.well_typed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Command::Subtype {
            common,
            left,
            right,
            weights,
        } => {
            let program = match load_program(&common.file) {
                Ok(p) => p,
                Err(e) => return e,
            };
            let (l, r) = match (lookup_type(&program, &left), lookup_type(&program, &right)) {
                (Ok(l), Ok(r)) => (l, r),
                (Err(e), _) | (_, Err(e)) => return e,
            };
            let mut report = subtyping::subtype_report(&program.store, l, r);
            if !weights {
                report.pairs.clear();
            }
            if common.json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
            } else if report.fair {
                println!("fair subtype, rank {}", report.rank.unwrap());
            } else if report.unfair {
                let note = if report.left_bounded {
                    ""
                } else {
                    "; left type unbounded"
                };
                println!("not a fair subtype (divergent pair){note}");
            } else {
                let note = if report.left_bounded {
                    ""
                } else {
                    "; left type unbounded"
                };
                println!("not a subtype (shape mismatch){note}");
            }
            if weights && !common.json {
                let report = subtyping::subtype_report(&program.store, l, r);
                for p in &report.pairs {
                    println!("  [{}] {}  <=  {}  rk={}", p.shape, p.left, p.right, p.weight);
                }
            }
            if report.fair {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Command::Coherence { common } | Command::Rank { common } => {
            let (mut program, map) = match load_map(&common.file) {
                Ok(x) => x,
                Err(e) => return e,
            };
            match typelts::analyze(&mut program.store, &map, DEFAULT_STATE_CAP) {
                Ok(report) => {
                    if common.json {
                        println!("{}", serde_json::to_string_pretty(&report).unwrap());
                    } else if report.coherent {
                        println!("coherent, rank {}", report.rank);
                    } else {
                        println!("incoherent");
                    }
                    if report.coherent {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_FAIL)
                    }
                }
                Err(e) => fail(e, EXIT_CAP),
            }
        }
        Command::Bounded { common, type_name } => {
            let program = match load_program(&common.file) {
                Ok(p) => p,
                Err(e) => return e,
            };
            let id = match lookup_type(&program, &type_name) {
                Ok(id) => id,
                Err(e) => return e,
            };
            let bounded = typelts::bounded(&program.store, id);
            if common.json {
                println!("{{\"bounded\": {bounded}}}");
            } else if bounded {
                println!("bounded");
            } else {
                println!("unbounded");
            }
            if bounded {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Command::Dual {
            common,
            type_name,
            role,
            domain,
        } => {
            let mut program = match load_program(&common.file) {
                Ok(p) => p,
                Err(e) => return e,
            };
            let id = match lookup_type(&program, &type_name) {
                Ok(id) => id,
                Err(e) => return e,
            };
            let subject = Role::new(&role);
            let domain: BTreeSet<Role> = if domain.is_empty() {
                program.store.targets(id)
            } else {
                domain.iter().map(Role::new).collect()
            };
            match typelts::dual(&mut program.store, &subject, id, &domain) {
                Ok(map) => {
                    print!("{}", render_map(&program.store, &map));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e, EXIT_FAIL),
            }
        }
        Command::Discriminate {
            common,
            left,
            right,
            role,
        } => {
            let mut program = match load_program(&common.file) {
                Ok(p) => p,
                Err(e) => return e,
            };
            let (l, r) = match (lookup_type(&program, &left), lookup_type(&program, &right)) {
                (Ok(l), Ok(r)) => (l, r),
                (Err(e), _) | (_, Err(e)) => return e,
            };
            match subtyping::discriminator(&mut program.store, &Role::new(&role), l, r) {
                Ok(map) => {
                    print!("{}", render_map(&program.store, &map));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e, EXIT_FAIL),
            }
        }
        Command::Lts { common, dot } => {
            let (mut program, map) = match load_map(&common.file) {
                Ok(x) => x,
                Err(e) => return e,
            };
            if dot {
                match typelts::to_dot(&mut program.store, &map, DEFAULT_STATE_CAP) {
                    Ok(text) => {
                        print!("{text}");
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(e, EXIT_CAP),
                }
            } else {
                match typelts::analyze(&mut program.store, &map, DEFAULT_STATE_CAP) {
                    Ok(report) => {
                        if common.json {
                            println!("{}", serde_json::to_string_pretty(&report).unwrap());
                        } else {
                            println!(
                                "states {}, transitions {}, coherent {}, rank {}",
                                report.states, report.transitions, report.coherent, report.rank
                            );
                        }
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(e, EXIT_CAP),
                }
            }
        }
        Command::Simulate {
            common,
            entry,
            scheduler,
            seed,
            max_steps,
            trace,
            fused,
            check_states,
        } => {
            let program = match load_program(&common.file) {
                Ok(p) => p,
                Err(e) => return e,
            };
            let report = typecheck::check_program(&program);
            if !report.well_typed {
                return fail("program is ill-typed; refusing to simulate", EXIT_FAIL);
            }
            let scheduler = match scheduler.as_str() {
                "guided" => Scheduler::Guided,
                "random" => Scheduler::Random { seed },
                other => return fail(format!("unknown scheduler `{other}`"), EXIT_USAGE),
            };
            let opts = SimulateOptions {
                scheduler,
                max_steps,
                fused,
                subject_reduction_check: check_states,
            };
            let mut rt = Runtime::new(&program);
            match rt.simulate(&ProcName::new(&entry), &opts) {
                Ok(t) => {
                    if common.json {
                        println!("{}", serde_json::to_string_pretty(&t).unwrap());
                    } else {
                        if trace {
                            for (i, step) in t.steps.iter().enumerate() {
                                match &step.measure {
                                    Some(m) => {
                                        println!("{:4}  {:<12} {}  measure {}", i, step.rule, step.redex, m)
                                    }
                                    None => println!("{:4}  {:<12} {}", i, step.rule, step.redex),
                                }
                            }
                        }
                        match t.outcome {
                            TraceOutcome::Terminated => {
                                println!("terminated in {} steps", t.steps.len())
                            }
                            TraceOutcome::MaxSteps => {
                                println!("stopped after {} steps (max-steps reached)", t.steps.len())
                            }
                            TraceOutcome::InternalStuck => println!(
                                "stuck after {} steps: {}",
                                t.steps.len(),
                                t.error.clone().unwrap_or_default()
                            ),
                        }
                    }
                    match t.outcome {
                        TraceOutcome::Terminated => ExitCode::SUCCESS,
                        _ => ExitCode::from(EXIT_FAIL),
                    }
                }
                Err(e) => fail(e, EXIT_FAIL),
            }
        }
    }
}

// Silence a false "unused" lint: Cost is used through report serialization.
#[allow(dead_code)]
fn _cost_witness(c: Cost) -> String {
    c.to_string()
}
