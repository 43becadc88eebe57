use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use star_campaign::dispatcher::journal::{self, Record};
use star_campaign::scenario::shipped_configs_dir;

fn starcamp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_starcamp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    shipped_configs_dir().join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small campaign written next to the test: the shipped pricing, an inline
/// manifest, and the given extra YAML appended.
fn write_campaign(dir: &Path, entries: &[(&str, f64)], extra: &str) -> PathBuf {
    let mut yaml = format!(
        "schema: star-campaign/campaign\nversion: 1\nname: tiny\nseed: 3\nworkers: 20\n\
         pricing: {}\nbackend: {{kind: serverless, speed_factor: 1.49, provision_delay_s: 60}}\n\
         shape: {{vcpu: 8, ram_gb: 48, volume: {{size_gb: 550, throughput_mibps: 500, iops: 3000}}}}\n\
         throughput: {{align_gb_per_hour: 172.4, other_gb_per_hour: 454.5}}\n\
         workload:\n  files:\n    entries:\n",
        config("pricing.yaml")
    );
    for (acc, gb) in entries {
        yaml.push_str(&format!("      - {{accession_id: {acc}, sra_size_gb: {gb}}}\n"));
    }
    yaml.push_str(extra);
    let path = dir.join("tiny.yaml");
    std::fs::write(&path, yaml).unwrap();
    path
}

#[test]
fn plan_prints_verdicts_and_costs() {
    let o = starcamp(&[
        "plan",
        "--catalog",
        &config("catalog.yaml"),
        "--workload",
        &config("workload-human.yaml"),
        "--pricing",
        &config("pricing.yaml"),
        "--scenarios",
        "serverless=207,vm:r7a.2xlarge=138.6,serverless-spot=207",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for needle in ["AWS Lambda", "Infeasible", "Conditional", "Feasible", "127.93", "95.42", "50.09"] {
        assert!(out.contains(needle), "missing {needle} in\n{out}");
    }
}

#[test]
fn plan_with_small_index_makes_every_service_at_least_conditional() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.yaml");
    std::fs::write(
        &w,
        "index: {genome_label: tiny, size_gb: 0.5, load_time_s: {min_s: 5, max_s: 10}}\n\
         files: {entries: [{accession_id: A, sra_size_gb: 0.1}]}\n",
    )
    .unwrap();
    let o = starcamp(&[
        "plan",
        "--catalog",
        &config("catalog.yaml"),
        "--workload",
        p(&w),
        "--pricing",
        &config("pricing.yaml"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stdout(&o).contains("Infeasible"), "{}", stdout(&o));
}

#[test]
fn plan_reports_malformed_config_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("pricing.yaml");
    std::fs::write(&bad, "schema: star-campaign/pricing\nversion: 1\nregion: x\nspot_discount: lots\n").unwrap();
    let o = starcamp(&[
        "plan",
        "--catalog",
        &config("catalog.yaml"),
        "--workload",
        &config("workload-human.yaml"),
        "--pricing",
        p(&bad),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("pricing.yaml"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(starcamp(&["simulate"]).status.code(), Some(2));
    assert_eq!(starcamp(&["frobnicate"]).status.code(), Some(2));
    let o = starcamp(&["report", "--in", "/definitely/not/here.json", "--format", "json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = starcamp(&["report", "--in", &config("pricing.yaml"), "--format", "xml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let o = starcamp(&["simulate", "--config", &config("ecs-fargate.yaml"), "--out", p(&dir.path().join(sub))]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("seed                1"));
    }
    for f in ["ecs-fargate-seed1.json", "ecs-fargate-seed1.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn simulate_replicas_match_single_seed_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("ecs-fargate-spot.yaml");
    let o = starcamp(&["simulate", "--config", &cfg, "--seed", "5", "--replicas", "3", "--out", p(&dir.path().join("many"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = starcamp(&["simulate", "--config", &cfg, "--seed", "6", "--out", p(&dir.path().join("one"))]);
    assert!(o.status.success());
    let a = std::fs::read(dir.path().join("many/ecs-fargate-spot-seed6.json")).unwrap();
    let b = std::fs::read(dir.path().join("one/ecs-fargate-spot-seed6.json")).unwrap();
    assert_eq!(a, b);
    let seeds: Vec<String> = stdout(&o).lines().filter(|l| l.starts_with("== seed")).map(String::from).collect();
    assert!(seeds.is_empty());
    let many = stdout(&starcamp(&["simulate", "--config", &cfg, "--seed", "5", "--replicas", "3", "--out", p(&dir.path().join("again"))]));
    let order: Vec<&str> = many.lines().filter(|l| l.starts_with("== seed")).collect();
    assert_eq!(order, ["== seed 5 ==", "== seed 6 ==", "== seed 7 =="]);
}

#[test]
fn invalid_config_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_campaign(dir.path(), &[("A", 1.0)], "failure: {max_attempts: 0}\n");
    let out = dir.path().join("out");
    let o = starcamp(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!out.exists());
    assert!(stderr(&o).contains("tiny.yaml"));
}

#[test]
fn run_with_stub_cloud_journals_calls() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_campaign(dir.path(), &[("SRR1", 10.0), ("SRR2", 28.7), ("SRR3", 5.0)], "");
    let state = dir.path().join("state.jsonl");
    let o = starcamp(&["run", "--config", p(&cfg), "--driver", "stub-cloud", "--state", p(&state)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("done                3"));
    let calls = std::fs::read_to_string(dir.path().join("state.jsonl.calls.jsonl")).unwrap();
    let count = |kind: &str| calls.lines().filter(|l| l.contains(&format!("\"call\":\"{kind}\""))).count();
    assert_eq!(count("provision"), 3);
    assert_eq!(count("assign"), 3);
    assert_eq!(count("terminate"), 3);
}

#[test]
fn run_resumes_without_repeating_finished_files() {
    let dir = tempfile::tempdir().unwrap();
    let entries: Vec<(String, f64)> = (0..30).map(|i| (format!("R{i:02}"), 1.0 + (i % 7) as f64)).collect();
    let borrowed: Vec<(&str, f64)> = entries.iter().map(|(a, s)| (a.as_str(), *s)).collect();
    let extra = "backend: {kind: serverless-spot, speed_factor: 1.49, provision_delay_s: 60, interruption_rate_per_hour: 0.5}\n";
    let cfg = write_campaign(dir.path(), &borrowed, "");
    let text = std::fs::read_to_string(&cfg).unwrap();
    let text = text.replace(
        "backend: {kind: serverless, speed_factor: 1.49, provision_delay_s: 60}\n",
        extra,
    );
    std::fs::write(&cfg, text).unwrap();
    let full = dir.path().join("full.jsonl");
    let o = starcamp(&["run", "--config", p(&cfg), "--driver", "sim", "--state", p(&full)]);
    assert!(o.status.success(), "{}", stderr(&o));

    // Simulate a crash: keep a prefix of the journal with a torn last line.
    let journal_text = std::fs::read_to_string(&full).unwrap();
    let lines: Vec<&str> = journal_text.lines().collect();
    let keep = lines.len() / 2;
    let mut cut = lines[..keep].join("\n");
    cut.push('\n');
    cut.push_str(&lines[keep][..lines[keep].len() / 2]);
    let crashed = dir.path().join("crashed.jsonl");
    std::fs::write(&crashed, cut).unwrap();
    let done_before: Vec<String> = journal::replay(&journal::parse(&std::fs::read_to_string(&crashed).unwrap()).unwrap())
        .unwrap()
        .files
        .iter()
        .filter(|f| f.status.is_terminal())
        .map(|f| f.accession.clone())
        .collect();
    assert!(!done_before.is_empty());

    let o = starcamp(&["run", "--config", p(&cfg), "--driver", "sim", "--state", p(&crashed)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("resumed from"));
    let resumed = journal::read(&crashed).unwrap();
    for r in &resumed.records[keep - 1..] {
        if let Record::Leased { accession, .. } = r {
            assert!(!done_before.contains(accession), "{accession} re-ran");
        }
    }
    let a = journal::replay(&resumed).unwrap().terminal_statuses();
    let b = journal::replay(&journal::read(&full).unwrap()).unwrap().terminal_statuses();
    assert_eq!(a, b);
}

#[test]
fn run_refuses_corrupt_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_campaign(dir.path(), &[("A", 1.0), ("B", 2.0)], "");
    let state = dir.path().join("s.jsonl");
    assert!(starcamp(&["run", "--config", p(&cfg), "--driver", "sim", "--state", p(&state)]).status.success());
    let mut text = std::fs::read_to_string(&state).unwrap();
    text.push_str("garbage\n");
    std::fs::write(&state, &text).unwrap();
    let o = starcamp(&["run", "--config", p(&cfg), "--driver", "sim", "--state", p(&state)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn run_with_empty_pool_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_campaign(dir.path(), &[("A", 1.0)], "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("workers: 20", "workers: 0");
    std::fs::write(&cfg, text).unwrap();
    let o = starcamp(&["run", "--config", p(&cfg), "--driver", "sim", "--state", p(&dir.path().join("s"))]);
    // Caught while loading the config, so it names the file and field.
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("workers"));
    assert!(!dir.path().join("s").exists());
}

#[test]
fn report_reads_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(starcamp(&["simulate", "--config", &config("ecs-fargate-spot.yaml"), "--out", p(&out)])
        .status
        .success());
    let json = out.join("ecs-fargate-spot-seed1.json");
    let csv = out.join("ecs-fargate-spot-seed1.csv");

    let table = stdout(&starcamp(&["report", "--in", p(&json), "--format", "table"]));
    assert!(table.contains("interruptions"));
    assert!(table.contains("reload overhead"));

    let rendered = starcamp(&["report", "--in", p(&csv), "--format", "csv"]);
    assert!(rendered.status.success());
    assert_eq!(rendered.stdout, std::fs::read(&csv).unwrap());

    let summary = dir.path().join("summary.json");
    std::fs::write(&summary, starcamp(&["report", "--in", p(&json), "--format", "json"]).stdout).unwrap();
    let again = starcamp(&["report", "--in", p(&summary), "--format", "json"]);
    assert_eq!(again.stdout, std::fs::read(&summary).unwrap());

    let state = dir.path().join("s.jsonl");
    assert!(starcamp(&["run", "--config", &config("ecs-fargate.yaml"), "--driver", "sim", "--state", p(&state)])
        .status
        .success());
    let from_journal = stdout(&starcamp(&["report", "--in", p(&state), "--format", "table"]));
    assert!(from_journal.contains("files               1000"));
}

#[test]
fn report_rejects_unknown_schema_and_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.json");
    std::fs::write(&f, r#"{"schema":"star-campaign/sim-result","schema_version":99}"#).unwrap();
    let o = starcamp(&["report", "--in", p(&f), "--format", "table"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("99"));
    std::fs::write(&f, "").unwrap();
    let o = starcamp(&["report", "--in", p(&f), "--format", "json"]);
    assert_eq!(o.status.code(), Some(4));
}
