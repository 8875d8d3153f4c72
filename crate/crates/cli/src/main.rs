use clap::{Args, Parser, Subcommand};
use kirchhoff_lab::config::{ExperimentConfig, Stage};
use kirchhoff_lab::pipeline::{run_pipeline, write_outputs, Outcome, Status};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kirchlab", version, about = "Derivative-loss and a priori estimate experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the construction parameters
    Params(Common),
    /// Build the piecewise coefficient and export it
    Construct(Common),
    /// Integrate the modes and certify the series
    VerifyLinear(Common),
    /// Lift the coefficient to a Kirchhoff nonlinearity
    LiftKirchhoff(Common),
    /// Check the a priori estimate on Galerkin trajectories
    Apriori(Common),
    /// Place the (omega, phi) pair on either side of the threshold
    Classify(Common),
    /// Run the configured stages (all of them by default)
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// output directory; overrides the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// comma-separated stage names, for `run`
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
    #[arg(long)]
    quiet: bool,
}

const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, fixed) = match &cli.cmd {
        Cmd::Params(a) => (a, Some(Stage::Params)),
        Cmd::Construct(a) => (a, Some(Stage::Construct)),
        Cmd::VerifyLinear(a) => (a, Some(Stage::VerifyLinear)),
        Cmd::LiftKirchhoff(a) => (a, Some(Stage::LiftKirchhoff)),
        Cmd::Apriori(a) => (a, Some(Stage::Apriori)),
        Cmd::Classify(a) => (a, Some(Stage::Classify)),
        Cmd::Run(a) => (a, None),
    };
    let cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("kirchlab: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let stages: Vec<Stage> = match (fixed, &args.stages, &cfg.stages) {
        (Some(s), _, _) => vec![s],
        (None, Some(list), _) => {
            let mut v = Vec::new();
            for name in list {
                match Stage::parse(name) {
                    Some(s) => v.push(s),
                    None => {
                        eprintln!("kirchlab: unknown stage {name:?}");
                        return ExitCode::from(EXIT_CONFIG);
                    }
                }
            }
            v
        }
        (None, None, Some(v)) => v.clone(),
        (None, None, None) => Stage::ALL.to_vec(),
    };
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    let outcome = run_pipeline(&cfg, &stages);
    if let Err(e) = write_outputs(&outcome, &dir) {
        eprintln!("kirchlab: cannot write {}: {e}", dir.display());
        return ExitCode::from(EXIT_CONFIG);
    }
    if !args.quiet {
        summarize(&outcome, &dir);
    }
    ExitCode::from(outcome.report.status.exit_code() as u8)
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn summarize(o: &Outcome, dir: &std::path::Path) {
    let r = &o.report;
    if let Some(c) = &r.classification {
        println!("classify        {:?} ({} vs {})", c.classification, c.omega, c.phi);
    }
    if let Some(p) = &r.params {
        println!("params          depth {} under cap {:?}", p.depth, p.under_cap);
    }
    if let Some(c) = &r.construct {
        println!("construct       {} (omega constant {:.3e})", mark(c.passed), c.continuity.l_empirical);
    }
    if let Some(v) = &r.verify_linear {
        println!("verify-linear   {}", mark(v.passed));
        for s in &v.series {
            let at = match (s.beta, s.r) {
                (Some(b), _) => format!("beta={b}"),
                (_, Some(x)) => format!("r={x}"),
                _ => String::new(),
            };
            println!("  {:<22} {:<10} {:?}", s.identifier, at, s.verdict);
        }
    }
    if let Some(l) = &r.lift_kirchhoff {
        println!(
            "lift-kirchhoff  {} (closure {:.2e}, m in [{:.4}, {:.4}])",
            mark(l.passed),
            l.report.closure_residual,
            l.report.m_range.0,
            l.report.m_range.1
        );
    }
    if let Some(a) = &r.apriori {
        println!("apriori         {} (gamma0 measured {:.4})", mark(a.passed), a.gamma0.gamma0);
        if let Some(rep) = &a.report {
            for c in &rep.checks {
                println!("  {:<22} {} margin {:.3e}", c.identifier, mark(c.holds), c.worst_margin);
            }
        }
    }
    for f in &r.failures {
        println!("failure: {f}");
    }
    let status = match r.status {
        Status::Ok => "ok",
        Status::VerificationFailed => "verification failed",
        Status::ClassificationConflict => "classification conflict",
    };
    println!("status: {status}; report in {}", dir.join("report.json").display());
}
