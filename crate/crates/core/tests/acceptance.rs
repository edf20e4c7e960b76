//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p modchooser --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use modchooser::chooser::{measure_budget_holds, ChooserParams};
use modchooser::gamblers::{gambler_by_name, GAMBLER_NAMES};
use modchooser::game::{run_game, GameOptions, GameTranscript};
use modchooser::measure::{central_binomial_claim, central_binomial_scan};
use modchooser::rational::format_rational;
use modchooser::verify::{run_suite, Suite, SuiteReport};

const SEED: u64 = 20_240_601;

struct Check {
    ok: bool,
    detail: String,
}

fn suite(s: Suite, cases: u64) -> (bool, String, SuiteReport) {
    let r = run_suite(s, cases, SEED);
    let detail = format!(
        "{s}: {} cases, {} failed, {} skipped",
        r.cases, r.failed, r.skipped
    );
    if !r.ok() {
        for c in &r.counterexamples {
            eprintln!("  {s} case {} (seed {}): {}", c.case, c.seed, c.detail);
        }
    }
    (r.ok(), detail, r)
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let e = start.elapsed();
    (e < limit, format!("limit {}s", limit.as_secs()))
}

fn c1() -> Check {
    let start = Instant::now();
    let (ok, detail, _) = suite(Suite::Proposition, 200);
    let (fast, limit) = within(Duration::from_secs(60), start);
    Check {
        ok: ok && fast,
        detail: format!("{detail}, {limit}"),
    }
}

fn c2() -> Check {
    let start = Instant::now();
    let first_failure = central_binomial_scan(4096);
    // Spot check the scan against direct evaluation.
    let direct = [1, 2, 3, 64, 513, 1000]
        .iter()
        .all(|&u| central_binomial_claim(u));
    let (fast, limit) = within(Duration::from_secs(5), start);
    Check {
        ok: first_failure.is_none() && direct && fast,
        detail: format!("u in [1, 4096], first failure {first_failure:?}, {limit}"),
    }
}

fn plain(s: Suite, cases: u64) -> Check {
    let (ok, detail, _) = suite(s, cases);
    Check { ok, detail }
}

fn c6() -> Check {
    let (a, da, _) = suite(Suite::Slim, 500);
    let (b, db, _) = suite(Suite::Grow, 60);
    Check {
        ok: a && b,
        detail: format!("{da}; {db}"),
    }
}

fn c8() -> Check {
    let bad_k: Vec<u32> = (0..=16).filter(|&k| !measure_budget_holds(k)).collect();
    let (ok, detail, _) = suite(Suite::ChooserClaims, 48);
    Check {
        ok: bad_k.is_empty() && ok,
        detail: format!(
            "measure budget below 2^-k for k in [0, 16] (failures {bad_k:?}); {detail}"
        ),
    }
}

fn desk() -> ChooserParams {
    ChooserParams::desk(4, 2, 256, 260)
}

fn play(name: &str, seed: u64, options: &GameOptions) -> Result<GameTranscript, String> {
    let mut g = gambler_by_name(name, seed).ok_or_else(|| format!("unknown gambler {name}"))?;
    run_game(&desk(), g.as_mut(), options).map_err(|e| e.to_string())
}

fn c9() -> Check {
    let start = Instant::now();
    let params = desk();
    let budget = params.total_measure_budget();
    let options = GameOptions {
        horizon: 10_000,
        check_kl_eta: true,
        ..GameOptions::default()
    };
    let mut failures = Vec::new();
    let mut sets = Vec::new();
    for name in GAMBLER_NAMES {
        let t = match play(name, 1, &options) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("{name}: {e}"));
                continue;
            }
        };
        let v = &t.verdict;
        let total = &t
            .turns
            .last()
            .expect("at least one turn")
            .metrics
            .chosen_measure_total;
        let mut why = Vec::new();
        if !v.terminated {
            why.push("did not terminate".to_string());
        }
        if *total > budget {
            why.push(format!(
                "chosen measure {} over budget",
                format_rational(total)
            ));
        }
        if v.surviving_measure < v.residue_threshold {
            why.push(format!(
                "surviving measure {}",
                format_rational(&v.surviving_measure)
            ));
        }
        if !v.capitals_within_bounds {
            why.push("surviving capital above bound".into());
        }
        if v.chosen_count > params.max_chosen() {
            why.push(format!("{} sets chosen", v.chosen_count));
        }
        why.extend(t.violations());
        if !why.is_empty() {
            failures.push(format!("{name}: {}", why.join(", ")));
        }
        sets.push(format!("{name}={}", v.chosen_count));
    }
    let (fast, limit) = within(Duration::from_secs(300), start);
    for f in &failures {
        eprintln!("  {f}");
    }
    let v = params.validate().expect("desk params are valid");
    Check {
        ok: failures.is_empty() && fast,
        detail: format!(
            "m=4 n=2 phi=256 ell=260, sets chosen [{}], grow precondition at first trigger: {}, {limit}",
            sets.join(" "),
            v.grow_first_trigger
        ),
    }
}

fn c10() -> Check {
    let options = GameOptions::default();
    let mut mismatched = Vec::new();
    for name in GAMBLER_NAMES {
        for seed in [0, 7] {
            let a = play(name, seed, &options).map(|t| (t.to_json(), t.to_csv()));
            let b = play(name, seed, &options).map(|t| (t.to_json(), t.to_csv()));
            if a.is_err() || a != b {
                mismatched.push(format!("{name}/{seed}"));
            }
        }
    }
    Check {
        ok: mismatched.is_empty(),
        detail: format!(
            "{} gambler/seed pairs, mismatched {mismatched:?}",
            2 * GAMBLER_NAMES.len()
        ),
    }
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Check); 10] = [
        (1, c1),
        (2, c2),
        (3, || plain(Suite::Savings, 1000)),
        (4, || plain(Suite::Earning, 500)),
        (5, || plain(Suite::KlEta, 300)),
        (6, c6),
        (7, || plain(Suite::GoodMod, 500)),
        (8, c8),
        (9, c9),
        (10, c10),
    ];
    let mut failed = 0;
    for (id, f) in criteria {
        let start = Instant::now();
        let c = f();
        let secs = start.elapsed().as_secs_f64();
        let status = if c.ok { "PASS" } else { "FAIL" };
        println!("criterion {id:>2}: {status} ({secs:.2}s) {}", c.detail);
        if !c.ok {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
