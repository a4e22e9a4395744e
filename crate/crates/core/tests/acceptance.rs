//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any fails.

mod support;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mlpilot_core::bench::{
    build_tables, collect_runs, compare_methods, evaluate_on_test, format_percent, TableKind,
};
use mlpilot_core::firewall::Firewall;
use mlpilot_core::gateway::{Gateway, BASE_URL_VARS};
use mlpilot_core::ledger::{normalized_snapshot, Ledger};
use mlpilot_core::model::{Outcome, StepKind, StepStatus};
use mlpilot_core::pipeline::{run_pipeline, PipelineEnv};
use mlpilot_core::stats::{accuracy, average_precision, success_rate, welch_t_test};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use support::harness::{
    answer, bundled, fake_run, fixtures_dir, plain_config, scripted, stub_manifest, tool_call,
    Workbench,
};
use support::oracles::{accuracy_by_counting, average_precision_by_sweep, welch_reference};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("deterministic end-to-end run", end_to_end),
        ("retry and failure semantics", retry_failure),
        ("test-set firewall", firewall_fuzz),
        ("metric oracles", metric_oracles),
        ("welch t-test", welch),
        ("reporting fidelity", report_fidelity),
        ("paired comparison", paired_comparison),
        ("replay determinism", replay_determinism),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {message}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mlpilot"));
    cmd.args(args);
    // Any attempt to reach a real endpoint would fail fast.
    for var in BASE_URL_VARS {
        cmd.env(var, "http://127.0.0.1:9");
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if !out.status.success() {
        return Err(format!(
            "`mlpilot {}` exited with {}: {stdout}{}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(stdout)
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|token| token.strip_prefix(key)?.strip_prefix('='))
}

fn end_to_end() -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |p: PathBuf| p.display().to_string();
    let data = path(dir.path().join("data"));
    let ledger_dir = path(dir.path().join("ledger"));
    let fixture = path(fixtures_dir().join("agent_run.json"));

    let manifest = cli(&[
        "--seed", "7", "synth", "--kind", "planted-motif", "--out", &data, "--n-train", "2000",
        "--n-test", "500",
    ])?;
    let manifest = manifest.trim();
    let out = cli(&[
        "--ledger", &ledger_dir, "--manifest", manifest, "--backend", "plain-process",
        "--fixture", &fixture, "--seed", "7", "run", "--max-iterations", "2",
    ])?;
    let line = out.lines().last().unwrap_or_default();
    let run_id = line.split_whitespace().next().unwrap_or_default().to_string();
    ensure!(line.contains(" success "), "run did not succeed: {line}");

    let ledger = Ledger::new(&ledger_dir);
    let record = ledger.load_run(&run_id).map_err(|e| e.to_string())?;
    ensure!(record.iterations.len() == 2, "{} iterations", record.iterations.len());
    let validation: Vec<f64> = record
        .iterations
        .iter()
        .map(|it| {
            it.metrics
                .as_ref()
                .and_then(|m| m.validation_value("accuracy"))
                .unwrap_or(f64::NEG_INFINITY)
        })
        .collect();
    let argmax = (0..validation.len())
        .fold(0, |best, i| if validation[i] > validation[best] { i } else { best });
    ensure!(
        record.best == Some(argmax),
        "best {:?} but validation {validation:?}",
        record.best
    );

    let out = cli(&["--ledger", &ledger_dir, "evaluate", &run_id])?;
    let test: f64 = out
        .lines()
        .find_map(|l| field(l, "test_accuracy"))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no test accuracy in {out:?}"))?;
    ensure!(test >= 0.95, "test accuracy {test}");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "best={argmax} validation={validation:?} test_accuracy={test:.4} in {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn retry_failure() -> Check {
    let bench = Workbench::new(2000, 500, 11);
    let mut outcomes = Vec::new();
    for seed in 0..5 {
        let (gateway, _) = bundled("invalid_inference.json");
        let record = run_pipeline(&bench.manifest, &plain_config(seed, 2), bench.env(&gateway))
            .map_err(|e| e.to_string())?;
        ensure!(
            record.outcome == Some(Outcome::Failure),
            "run {} outcome {:?}",
            record.run_id,
            record.outcome
        );
        let step = record
            .iterations
            .last()
            .and_then(|it| it.steps.last())
            .ok_or("no steps recorded")?;
        ensure!(
            step.kind == StepKind::InferenceScript && step.status == StepStatus::Failed,
            "last step {} {:?}",
            step.kind,
            step.status
        );
        ensure!(step.attempts.len() == 5, "{} attempts", step.attempts.len());
        outcomes.push(record.outcome == Some(Outcome::Success));
    }
    let rate = success_rate(&outcomes).map_err(|e| e.to_string())?;
    ensure!(rate == 0.0, "success rate {rate}");
    Ok(format!("5 runs, 5 attempts each, success rate {}", format_percent(rate)))
}

/// Tool calls that try to reach `test` by various spellings.
fn attacks(test: &Path, rng: &mut ChaCha8Rng) -> Vec<Value> {
    let p = test.display().to_string();
    let dir = test.parent().unwrap().display().to_string();
    let relative = format!("{}{}", "../".repeat(20), p.trim_start_matches('/'));
    let doubled = p.replace('/', "//");
    let bash = |command: String| tool_call("bash", json!({ "command": command }));
    let all = vec![
        bash(format!("cat {p}")),
        bash(format!("head -n 5 {p}")),
        bash(format!("cp {p} work/stolen.csv")),
        bash(format!("base64 {p}")),
        bash(format!("python3 -c \"print(open('{p}').read())\"")),
        bash(format!("dd if={p} of=work/copy.csv")),
        bash(format!("cat '{p}'")),
        bash(format!("cat {dir}/*test*")),
        bash(format!("cat {relative}")),
        bash(format!("wc -l {doubled}")),
        bash(format!("ln -s {p} work/link.csv")),
        bash(format!("cd {dir} && ls")),
        tool_call("write_file", json!({"path": p, "content": "x"})),
        tool_call(
            "write_file",
            json!({"path": "work/steal.py", "content": format!("rows = open('{p}').read()\n")}),
        ),
        tool_call("write_file", json!({"path": relative, "content": "x"})),
        tool_call("run_script", json!({ "path": p })),
    ];
    let n = rng.random_range(1..=4);
    (0..n)
        .map(|_| all[rng.random_range(0..all.len())].clone())
        .collect()
}

fn firewall_fuzz() -> Check {
    let bench = Workbench::new(60, 20, 3);
    let firewall = Firewall::for_manifest(&bench.manifest);
    let mut config = plain_config(0, 1);
    config.max_step_attempts = 1;
    let mut clean_runs = 0;
    let mut calls = 0;
    let mut denied = 0;
    for i in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let mut responses = attacks(&bench.manifest.test_path, &mut rng);
        let planned = responses.len();
        responses.push(answer(json!({"summary": "sequences with binary labels"})));
        responses.push(answer(json!({"split_strategy": "random"})));
        let (gateway, _) = scripted(json!({ "responses": responses }));
        config.seed = i;
        let record = run_pipeline(&bench.manifest, &config, bench.env(&gateway))
            .map_err(|e| e.to_string())?;
        let explore = record.iterations[0]
            .step(StepKind::Explore)
            .ok_or("no EXPLORE step")?;
        let mut seen = 0;
        for attempt in &explore.attempts {
            let lines = bench
                .ledger
                .read_transcript(&record.run_id, 0, attempt.transcript)
                .map_err(|e| e.to_string())?;
            for message in lines.iter().filter(|m| m["role"] == "tool") {
                seen += 1;
                let content: Value =
                    serde_json::from_str(message["content"].as_str().unwrap_or_default())
                        .unwrap_or_default();
                if content["denied"] == true {
                    denied += 1;
                }
            }
        }
        ensure!(seen == planned, "run {i}: {seen} tool results for {planned} calls");
        calls += planned;
        let leaks = firewall
            .scan_run_dir(&bench.ledger.run_dir(&record.run_id))
            .map_err(|e| e.to_string())?;
        if leaks.is_empty() {
            clean_runs += 1;
        } else {
            return Err(format!("run {i} leaked: {leaks:?}"));
        }
    }
    ensure!(denied == calls, "{denied}/{calls} attack calls denied");
    Ok(format!("{clean_runs}/50 ledgers clean, {denied}/{calls} attack calls denied"))
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=200);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let predictions: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let got = accuracy(&labels, &predictions).map_err(|e| e.to_string())?;
        worst = worst.max((got - accuracy_by_counting(&labels, &predictions)).abs());
    }
    ensure!(worst <= 1e-9, "accuracy deviates by {worst}");

    let mut worst_ap = 0.0f64;
    for _ in 0..1000 {
        let (labels, scores) = ap_instance(&mut rng);
        let got = average_precision(&labels, &scores, &1u8).map_err(|e| e.to_string())?;
        worst_ap = worst_ap.max((got - average_precision_by_sweep(&labels, &scores, 1)).abs());
    }
    ensure!(worst_ap <= 1e-9, "average precision deviates by {worst_ap}");

    let scores = [0.9, 0.8, 0.7, 0.6];
    let a = average_precision(&[1u8, 0, 1, 0], &scores, &1).map_err(|e| e.to_string())?;
    let b = average_precision(&[0u8, 0, 0, 1], &scores, &1).map_err(|e| e.to_string())?;
    // Exact up to the rounding of the final floating-point sum.
    ensure!((a - 5.0 / 6.0).abs() <= 4.0 * f64::EPSILON, "expected 5/6, got {a}");
    ensure!(b == 0.25, "expected 0.25, got {b}");

    for t in 0..200 {
        let (labels, scores) = ap_instance(&mut rng);
        let k = rng.random_range(0.1..5.0);
        let c = rng.random_range(-3.0..3.0);
        let transform: Box<dyn Fn(f64) -> f64> = match t % 4 {
            0 => Box::new(move |x| k * x + c),
            1 => Box::new(move |x| (k * x).exp()),
            2 => Box::new(move |x| (x + 1.0).ln() * k - c),
            _ => Box::new(move |x| x * x * x + k * x),
        };
        let moved: Vec<f64> = scores.iter().map(|&s| transform(s)).collect();
        let before = average_precision(&labels, &scores, &1u8).map_err(|e| e.to_string())?;
        let after = average_precision(&labels, &moved, &1u8).map_err(|e| e.to_string())?;
        ensure!(before == after, "transform {t}: {before} vs {after}");
    }
    Ok(format!(
        "max deviation accuracy {worst:.1e}, AP {worst_ap:.1e}; 5/6 and 0.25 reproduced; 200 transforms invariant"
    ))
}

/// Labels with at least one positive; scores on a 0.001 grid so ties occur
/// and distinct scores stay distinct under the transforms above.
fn ap_instance(rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<f64>) {
    let n = rng.random_range(1..=150);
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let at = rng.random_range(0..n);
    labels[at] = 1;
    let grid = if rng.random_bool(0.5) { 1000 } else { 20 };
    let scores = (0..n)
        .map(|_| rng.random_range(0..=grid) as f64 / grid as f64)
        .collect();
    (labels, scores)
}

fn welch() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = rng.random_range(2..=30);
            let shift = rng.random_range(-1.0..1.0);
            let scale = rng.random_range(0.1..3.0);
            (0..n)
                .map(|_| {
                    // Irwin-Hall approximation of a normal draw.
                    let z: f64 = (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0;
                    shift + scale * z
                })
                .collect()
        };
        let a = sample(&mut rng);
        let b = sample(&mut rng);
        let got = welch_t_test(&a, &b).map_err(|e| e.to_string())?;
        let (_, _, p) = welch_reference(&a, &b);
        worst = worst.max((got.p_value - p).abs());
    }
    ensure!(worst <= 1e-6, "p deviates by {worst}");
    for (a, b) in [
        (vec![0.61, 0.70, 0.65, 0.72], vec![0.61, 0.70, 0.65, 0.72]),
        (vec![1.0, 2.0, 3.0], vec![0.0, 2.0, 4.0, 2.0, 2.0]),
    ] {
        let zero = welch_t_test(&a, &b).map_err(|e| e.to_string())?;
        ensure!(zero.t == 0.0 && zero.p_value == 1.0, "t={} p={}", zero.t, zero.p_value);
    }
    Ok(format!("100 pairs, max |Δp| {worst:.1e}; t=0 gives p=1"))
}

const DATASETS: [&str; 6] = ["AGO2", "DE", "HEC", "HEE", "NTP", "OCRE"];
const MAXIMA: [&str; 6] = ["0.778", "0.736", "0.743", "0.885", "0.925", "0.816"];
const MEANS: [&str; 6] = ["0.726", "0.715", "0.729", "0.827", "0.899", "0.787"];

fn report_fidelity() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ledger = Ledger::new(dir.path().join("ledger"));
    for (d, name) in DATASETS.iter().enumerate() {
        let manifest = stub_manifest(dir.path(), name);
        let max: f64 = MAXIMA[d].parse().unwrap();
        let mean: f64 = MEANS[d].parse().unwrap();
        let rest = (5.0 * mean - max) / 4.0;
        for (seed, value) in [max, rest, rest, rest, rest].into_iter().enumerate() {
            fake_run(&ledger, &manifest, "agent", seed as u64, true, Some(value));
        }
        // A second method that only ever ran on the last two datasets.
        if d >= 4 {
            fake_run(&ledger, &manifest, "other", 0, true, Some(0.5));
        }
    }
    let runs = collect_runs(&ledger).map_err(|e| e.to_string())?;
    let tables = build_tables(&runs, None);
    let table = |kind: TableKind| tables.iter().find(|t| t.kind == kind).unwrap();
    let (max_table, mean_table) = (table(TableKind::Max), table(TableKind::Mean));
    ensure!(
        max_table.columns == DATASETS,
        "columns {:?}",
        max_table.columns
    );
    for (d, name) in DATASETS.iter().enumerate() {
        let max = max_table.cell("agent", name).unwrap_or_default();
        let mean = mean_table.cell("agent", name).unwrap_or_default();
        ensure!(max == MAXIMA[d], "{name} max {max} != {}", MAXIMA[d]);
        ensure!(mean == MEANS[d], "{name} mean {mean} != {}", MEANS[d]);
    }
    let absent: BTreeSet<&str> = DATASETS[..4].iter().copied().collect();
    for t in &tables {
        for name in &absent {
            let cell = t.cell("other", name);
            ensure!(
                cell.is_none() || cell == Some("N/A"),
                "{} other/{name} = {cell:?}",
                t.kind.name()
            );
        }
    }
    ensure!(
        max_table.cell("other", "AGO2") == Some("N/A"),
        "missing pair not rendered as N/A"
    );
    Ok(format!(
        "maxima {} and means {} rendered exactly; absent pairs N/A",
        MAXIMA.join("/"),
        MEANS.join("/")
    ))
}

fn paired_comparison() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ledger = Ledger::new(dir.path().join("ledger"));
    let mut pair = 0;
    for name in DATASETS {
        let manifest = stub_manifest(dir.path(), name);
        for seed in 0..5 {
            let baseline = 0.70;
            let with = match pair {
                0..24 => 0.75,
                24..27 => baseline,
                _ => 0.65,
            };
            fake_run(&ledger, &manifest, "feedback", seed, true, Some(with));
            fake_run(&ledger, &manifest, "no-feedback", seed, true, Some(baseline));
            pair += 1;
        }
    }
    let runs = collect_runs(&ledger).map_err(|e| e.to_string())?;
    let c = compare_methods(&runs, "feedback", "no-feedback").map_err(|e| e.to_string())?;
    ensure!(c.pairs == 30, "{} pairs", c.pairs);
    ensure!(c.win_fraction == 0.8, "win_fraction {}", c.win_fraction);
    Ok(format!("24/30 strict wins, win_fraction {}", c.win_fraction))
}

fn replay_determinism() -> Check {
    let bench = Workbench::new(2000, 500, 5);
    let config = plain_config(5, 2);
    let mut snapshots = Vec::new();
    for name in ["ledger_a", "ledger_b"] {
        let ledger = Ledger::new(bench.dir.path().join(name));
        let (gateway, _): (Gateway, _) = bundled("agent_run.json");
        let env = PipelineEnv {
            gateway: &gateway,
            sandboxes: &bench.factory,
            ledger: &ledger,
        };
        let record = run_pipeline(&bench.manifest, &config, env).map_err(|e| e.to_string())?;
        ensure!(
            record.outcome == Some(Outcome::Success),
            "{:?}",
            record.failure_reason
        );
        evaluate_on_test(&ledger, &record.run_id, &bench.factory).map_err(|e| e.to_string())?;
        snapshots.push(
            normalized_snapshot(&ledger.run_dir(&record.run_id)).map_err(|e| e.to_string())?,
        );
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    let differing: Vec<&String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .collect();
    ensure!(differing.is_empty(), "files differ: {differing:?}");
    Ok(format!("{} files identical after timestamp normalization", a.len()))
}
