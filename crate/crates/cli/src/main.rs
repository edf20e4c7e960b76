use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modchooser::chooser::ChooserParams;
use modchooser::gamblers::{gambler_by_name, GAMBLER_NAMES};
use modchooser::game::{run_game, GameOptions};
use modchooser::rational::format_rational;
use modchooser::verify::{run_suite, Suite};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "modchooser",
    version,
    about = "Betting-game simulator and lemma verifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play the modulo chooser against a packaged gambler.
    Simulate(SimulateArgs),
    /// Run a randomized property suite.
    Verify(VerifyArgs),
    /// Print the parameters derived from k.
    Params {
        #[arg(long)]
        k: u32,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Derive parameters from k.
    #[arg(
        long,
        conflicts_with = "desk_params",
        required_unless_present = "desk_params"
    )]
    k: Option<u32>,
    /// JSON file with explicit parameters.
    #[arg(long)]
    desk_params: Option<PathBuf>,
    #[arg(long, default_value = "null")]
    gambler: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    horizon: u64,
    /// Largest ell that may be materialized.
    #[arg(long, default_value_t = 1_000_000)]
    budget: u64,
    /// Transcript path; the CSV goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the parameters and whether they can be run, then stop.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    enforce_conservative: bool,
    #[arg(long)]
    check_kl_eta: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    suite: Suite,
    #[arg(long, default_value_t = 100)]
    cases: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Assertion(Value),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
        Command::Params { k } => {
            println!("{}", pretty(&params_json(&ChooserParams::from_k(k))));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("{}", json!({ "error": "usage", "message": msg }));
            ExitCode::from(2)
        }
        Err(Failure::Assertion(v)) => {
            eprintln!("{v}");
            ExitCode::from(1)
        }
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json")
}

fn params_json(p: &ChooserParams) -> Value {
    let h: Vec<String> = (1..=p.n).map(|i| p.h(i).to_string()).collect();
    json!({
        "k": p.k,
        "m": p.m.to_string(),
        "n": p.n,
        "phi": p.phi.to_string(),
        "ell": p.ell.to_string(),
        "ell_bits": p.ell.bits(),
        "h": h,
        "xi": p.xi().map(|x| format_rational(&x)),
        "residue_threshold": format_rational(&p.residue_threshold()),
        "total_measure_budget": format_rational(&p.total_measure_budget()),
    })
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let params = match (&a.desk_params, a.k) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ChooserParams>(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        (None, Some(k)) => ChooserParams::from_k(k),
        (None, None) => return Err(Failure::Usage("either --k or --desk-params".into())),
    };
    let validation = params
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let runnable = params.desk_scale(a.budget).is_ok();
    if a.dry_run {
        let mut v = params_json(&params);
        v["validation"] = serde_json::to_value(&validation).expect("json");
        v["budget"] = json!(a.budget);
        v["runnable"] = json!(runnable);
        println!("{}", pretty(&v));
        return Ok(());
    }
    let mut gambler = gambler_by_name(&a.gambler, a.seed).ok_or_else(|| {
        Failure::Usage(format!(
            "unknown gambler `{}`; expected one of {}",
            a.gambler,
            GAMBLER_NAMES.join(", ")
        ))
    })?;
    let options = GameOptions {
        horizon: a.horizon,
        enforce_conservative: a.enforce_conservative,
        check_kl_eta: a.check_kl_eta,
        budget: a.budget,
    };
    if !runnable {
        return Err(Failure::Usage(format!(
            "ell has {} bits and exceeds the position budget {}; use --dry-run",
            params.ell.bits(),
            a.budget
        )));
    }
    let t = run_game(&params, gambler.as_mut(), &options)
        .map_err(|e| Failure::Assertion(json!({ "error": "game", "message": e.to_string() })))?;
    match &a.out {
        Some(path) => {
            write(path, &t.to_json())?;
            write(&path.with_extension("csv"), &t.to_csv())?;
        }
        None => println!("{}", t.to_json()),
    }
    let violations = t.violations();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(
            json!({ "error": "violations", "violations": violations }),
        ))
    }
}

fn verify(a: VerifyArgs) -> Result<(), Failure> {
    let report = run_suite(a.suite, a.cases, a.seed);
    let text = serde_json::to_string_pretty(&report).expect("json");
    match &a.out {
        Some(path) => write(path, &text)?,
        None => println!("{text}"),
    }
    if report.ok() {
        Ok(())
    } else {
        Err(Failure::Assertion(json!({
            "error": "suite",
            "suite": a.suite,
            "failed": report.failed,
        })))
    }
}
