//! The twelve acceptance criteria, each checked at its stated tolerance.
//! Prints one PASS/FAIL line per criterion, then fails if any criterion did.
//!
//! Run with `cargo test -p star-campaign-cli --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rayon::prelude::*;

use star_campaign::agent::{self, FileOutcome, OptimizationFlags, Phase, PipelineState, SimulatedExecutor, StageRates};
use star_campaign::dispatcher::{run_campaign, FileStatus, RunOptions, SimDriver};
use star_campaign::report::{self, Format};
use star_campaign::scenario::{load_campaign, shipped_configs_dir};
use star_campaign::sim::SimResult;
use star_campaign::workload::{FileEntry, FileSet, SizeDistribution};
use star_campaign::{campaign_cost, simulate_campaign, BackendKind, CampaignConfig, PricingTable, ResourceShape, WorkloadSpec};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

/// Decimal amounts are read back through their exact string form.
fn usd(d: impl std::fmt::Display) -> f64 {
    d.to_string().parse().expect("decimal renders as a number")
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn shipped(name: &str) -> std::path::PathBuf {
    shipped_configs_dir().join(name)
}

fn starcamp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_starcamp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn c1_feasibility_verdicts() -> Outcome {
    let started = Instant::now();
    let o = starcamp(&[
        "plan",
        "--catalog",
        p(&shipped("catalog.yaml")),
        "--workload",
        p(&shipped("workload-human.yaml")),
        "--pricing",
        p(&shipped("pricing.yaml")),
    ]);
    let elapsed = started.elapsed();
    if !o.status.success() {
        return Err(format!("plan exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    let out = String::from_utf8_lossy(&o.stdout);
    let expected = [
        ("AWS Lambda", "Infeasible"),
        ("Azure Functions", "Infeasible"),
        ("Google Cloud Run", "Conditional"),
        ("AWS ECS + Fargate", "Feasible"),
    ];
    let rows: Vec<(String, String)> = out
        .lines()
        .skip(1)
        .take(4)
        .map(|l| {
            let verdict = l
                .split_whitespace()
                .find(|w| ["Infeasible", "Conditional", "Feasible"].contains(w))
                .unwrap_or("?")
                .to_string();
            let service = l.split("  ").next().unwrap_or("").trim().to_string();
            (service, verdict)
        })
        .collect();
    let matches = rows.len() == 4 && rows.iter().zip(expected).all(|((s, v), (es, ev))| s == es && v == ev);
    check(
        matches && elapsed < Duration::from_secs(1),
        format!("verdicts {:?} in {:.0} ms", rows.iter().map(|r| r.1.as_str()).collect::<Vec<_>>(), elapsed.as_secs_f64() * 1e3),
    )
}

fn c2_ecs_cost() -> Outcome {
    let cost = campaign_cost(BackendKind::Serverless, &ResourceShape::ecs_task(), 207.0, 20, &PricingTable::builtin())
        .map_err(|e| e.to_string())?;
    let total = usd(cost.total_usd);
    let storage = usd(cost.storage_usd);
    check(
        within(total, 114.0, 140.0) && within(storage, 12.0, 18.0),
        format!("total {total:.2} USD, storage {storage:.2} USD"),
    )
}

fn c3_ec2_cost() -> Outcome {
    let cost = campaign_cost(BackendKind::Vm, &ResourceShape::r7a_2xlarge(), 138.6, 20, &PricingTable::builtin())
        .map_err(|e| e.to_string())?;
    let total = usd(cost.total_usd);
    let storage = usd(cost.storage_usd);
    check(
        within(total, 86.0, 106.0) && within(storage, 9.0, 13.0),
        format!("total {total:.2} USD, storage {storage:.2} USD"),
    )
}

fn c4_spot_cost() -> Outcome {
    let pricing = PricingTable::builtin();
    let discount = usd(pricing.spot_discount);
    let fixed = campaign_cost(BackendKind::ServerlessSpot, &ResourceShape::ecs_task(), 207.0, 20, &pricing)
        .map_err(|e| e.to_string())?;
    let fixed = usd(fixed.total_usd);
    let cfg = load_campaign(&shipped("ecs-fargate-spot.yaml")).map_err(|e| e.to_string())?;
    let sim = simulate_campaign(&cfg).map_err(|e| e.to_string())?;
    let simulated = usd(sim.cost.total_usd);
    check(
        discount == 0.70 && within(fixed, 40.0, 60.0) && within(simulated, 40.0, 60.0),
        format!("discount {discount:.2}; 207 h → {fixed:.2} USD; simulated spot scenario {simulated:.2} USD"),
    )
}

fn c5_time_calibration() -> Outcome {
    let cfg = load_campaign(&shipped("ecs-fargate.yaml")).map_err(|e| e.to_string())?;
    if cfg.backend.speed_factor != 1.49 || cfg.workers != 20 {
        return Err(format!("config has speed {} and {} workers", cfg.backend.speed_factor, cfg.workers));
    }
    let started = Instant::now();
    let r = simulate_campaign(&cfg).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let makespan_h = r.makespan_s / 3600.0;
    check(
        within(r.aggregate_task_hours, 197.0, 217.0) && within(makespan_h, 9.4, 11.4) && elapsed < Duration::from_secs(10),
        format!(
            "aggregate {:.1} h, makespan {makespan_h:.2} h, {} files in {:.2} s",
            r.aggregate_task_hours,
            r.per_file.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn c6_oom_statistics() -> Outcome {
    let base = CampaignConfig::ecs_fargate();
    if base.failure.probability_for(base.shape.ram_gb) != 0.011 {
        return Err("default failure model is not p = 0.011 at 48 GB".into());
    }
    let counts: Vec<usize> = (1..=200u64)
        .into_par_iter()
        .map(|seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            simulate_campaign(&cfg).map(|r| r.count(FileOutcome::FailedOom))
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
    check(
        within(mean, 10.0, 12.0) && hi <= 25,
        format!("mean failed_oom {mean:.2} over 200 seeds, range [{lo}, {hi}]"),
    )
}

fn c7_early_termination() -> Outcome {
    let plain = CampaignConfig::ecs_fargate();
    let mut opt = plain.clone();
    opt.optimization.early_termination = true;
    let defaults = OptimizationFlags::default();
    if opt.optimization.low_quality_fraction != defaults.low_quality_fraction
        || opt.optimization.checkpoint_fraction != defaults.checkpoint_fraction
    {
        return Err("optimization parameters differ from defaults".into());
    }
    let a = simulate_campaign(&plain).map_err(|e| e.to_string())?.total_stage_times();
    let b = simulate_campaign(&opt).map_err(|e| e.to_string())?.total_stage_times();
    let align_cut = 1.0 - b.align_s / a.align_s;
    let total_cut = 1.0 - b.total_s() / a.total_s();
    check(
        within(align_cut, 0.21, 0.25) && within(total_cut, 0.16, 0.175),
        format!(
            "seed {}: alignment time -{:.2}% (want 23 ± 2), pipeline time -{:.2}% (want 16 to 17.5)",
            plain.seed,
            align_cut * 100.0,
            total_cut * 100.0
        ),
    )
}

fn c8_stage_shares() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let o = starcamp(&["simulate", "--config", p(&shipped("ecs-fargate.yaml")), "--out", p(dir.path())]);
    if !o.status.success() {
        return Err(String::from_utf8_lossy(&o.stderr).into_owned());
    }
    let text = std::fs::read_to_string(dir.path().join("ecs-fargate-seed1.json")).map_err(|e| e.to_string())?;
    let rep = report::load(&text).map_err(|e| e.to_string())?;
    let json = rep.render(Format::Json).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    let share = v["align_share"].as_f64().ok_or("summary lacks align_share")?;
    // Independently from the per-file rows.
    let rows = &rep.rows;
    let align: f64 = rows.iter().map(|r| r.align_s).sum();
    let all: f64 = rows.iter().map(|r| r.download_s + r.convert_s + r.align_s).sum();
    check(
        within(share, 0.70, 0.75) && (align / all - share).abs() < 1e-9,
        format!("align share {share:.4}"),
    )
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for sub in ["first", "second"] {
        let o = starcamp(&[
            "simulate",
            "--config",
            p(&shipped("ecs-fargate-spot.yaml")),
            "--seed",
            "17",
            "--out",
            p(&dir.path().join(sub)),
        ]);
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
    }
    let mut same = true;
    let mut sizes = Vec::new();
    for f in ["ecs-fargate-spot-seed17.json", "ecs-fargate-spot-seed17.csv"] {
        let a = std::fs::read(dir.path().join("first").join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("second").join(f)).map_err(|e| e.to_string())?;
        same &= a == b;
        sizes.push(format!("{f} {} bytes", a.len()));
    }
    check(same, format!("identical: {}", sizes.join(", ")))
}

fn c10_storage_safety() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        20.0f64..800.0,
        1.0f64..12.0,
        0.0f64..1.5,
        prop::collection::vec(0.01f64..60.0, 1..25),
    );
    let converts = std::cell::Cell::new(0usize);
    let skips = std::cell::Cell::new(0usize);
    let outcome = runner.run(&strategy, |(volume, expansion, temp, sizes)| {
        let mut w = WorkloadSpec::human_default();
        w.expansion_factor = expansion;
        w.temp_factor = temp;
        let mut state = PipelineState::new(Some(volume));
        let mut exec = SimulatedExecutor {
            rates: StageRates {
                download_s_per_gb: 1.0,
                convert_s_per_gb: 1.0,
                align_s_per_gb: 2.0,
                finalize_s_per_gb: 0.0,
            },
            index_load_s: 1.0,
            fate: Default::default(),
        };
        agent::load_index(&mut state, &w.index, &mut exec).unwrap();
        for (i, gb) in sizes.iter().enumerate() {
            let entry = FileEntry::new(format!("F{i}"), *gb);
            let free = state.free_disk_gb();
            // SRA + FASTQ + converter scratch, by hand.
            let demand = gb + gb * expansion + gb * expansion * temp;
            let rec = agent::process_file(&mut state, &entry, &w, &mut exec, &OptimizationFlags::default()).unwrap();
            let converted = rec.phases.contains(&Phase::Convert);
            prop_assert!(!converted || free + 1e-6 >= demand, "converted with {free} GB free for {demand} GB");
            prop_assert!(rec.peak_disk_gb <= volume + 1e-6);
            prop_assert_eq!(rec.outcome == FileOutcome::SkippedStorage, !converted);
            if converted {
                converts.set(converts.get() + 1);
            } else {
                skips.set(skips.get() + 1);
            }
        }
        Ok(())
    });
    if let Err(e) = outcome {
        return Err(format!("property failed: {e}"));
    }
    let sim = simulate_campaign(&CampaignConfig::ecs_fargate()).map_err(|e| e.to_string())?;
    let peak = sim.per_file.iter().map(|f| f.peak_disk_gb).fold(0.0, f64::max);
    let (converts, skips) = (converts.get(), skips.get());
    check(
        peak <= 550.0 && skips > 0 && converts > 0,
        format!("1000 workloads ({converts} converts, {skips} storage skips); campaign peak disk {peak:.1} GB of 550"),
    )
}

fn kill_config(seed: u64) -> CampaignConfig {
    let mut cfg = CampaignConfig::ecs_fargate_spot();
    cfg.workload.files = FileSet::Distribution(SizeDistribution {
        count: 60,
        total_gb: 141.0,
        max_gb: 12.0,
        seed,
    });
    cfg.workers = 6;
    cfg.seed = seed;
    cfg.backend.interruption_rate_per_hour = 0.3;
    cfg.failure.oom_probability_by_ram[0].probability = 0.1;
    cfg.failure.retry_on_oom = true;
    cfg
}

fn c11_crash_resume() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runner = TestRunner::new(Config {
        cases: 50,
        failure_persistence: None,
        ..Config::default()
    });
    let case = std::cell::Cell::new(0usize);
    let outcome = runner.run(&(0u64..10_000, 0.0f64..1.0), |(seed, at)| {
        case.set(case.get() + 1);
        let case = case.get();
        let cfg = kill_config(seed);
        let full_path = dir.path().join(format!("full{case}"));
        let mut d = SimDriver::new(&cfg);
        let full = run_campaign(&cfg, &mut d, &full_path, RunOptions::default()).unwrap();
        let records = std::fs::read_to_string(&full_path).unwrap().lines().count() - 1;
        let kill = 1 + ((records - 1) as f64 * at) as usize;

        let path = dir.path().join(format!("cut{case}"));
        let mut d = SimDriver::new(&cfg);
        let cut = run_campaign(
            &cfg,
            &mut d,
            &path,
            RunOptions {
                stop_after_records: Some(kill),
                ..Default::default()
            },
        )
        .unwrap();
        prop_assert!(!cut.complete || kill >= records);
        let mut d = SimDriver::new(&cfg);
        let resumed = run_campaign(&cfg, &mut d, &path, RunOptions::default()).unwrap();
        let multiset = |s: &star_campaign::dispatcher::RunState| {
            let mut m: BTreeMap<&'static str, usize> = BTreeMap::new();
            for f in &s.files {
                *m.entry(f.status.as_str()).or_default() += 1;
            }
            m
        };
        prop_assert!(resumed.state.is_complete());
        prop_assert_eq!(multiset(&resumed.state), multiset(&full.state));
        prop_assert_eq!(resumed.state.terminal_statuses(), full.state.terminal_statuses());
        Ok(())
    });
    check(outcome.is_ok(), match outcome {
        Ok(()) => "50 random kill points resume to the uninterrupted terminal statuses".into(),
        Err(e) => format!("property failed: {e}"),
    })
}

fn c12_spot_mechanics() -> Outcome {
    let mut checked = 0;
    let mut interrupted_runs = 0;
    for (k, rate) in [0.05, 0.2, 1.0, 3.0].into_iter().enumerate() {
        for seed in 1..=10u64 {
            let mut cfg = CampaignConfig::ecs_fargate_spot();
            cfg.seed = seed + 100 * k as u64;
            cfg.backend.interruption_rate_per_hour = rate;
            let r: SimResult = simulate_campaign(&cfg).map_err(|e| e.to_string())?;
            checked += 1;
            if r.interruptions > 0 {
                interrupted_runs += 1;
                if r.index_loads as usize <= r.worker_count {
                    return Err(format!("rate {rate} seed {}: {} loads for {} workers", cfg.seed, r.index_loads, r.worker_count));
                }
            }
            let requeued = r.per_file.iter().filter(|f| f.interruptions > 0).count();
            if r.per_file.len() != 1000 || (r.interruptions > 0 && requeued == 0 && rate > 1.0) {
                return Err(format!("rate {rate} seed {}: {} records, {requeued} requeued", cfg.seed, r.per_file.len()));
            }
        }
    }
    // The same through the dispatcher, whose statuses are explicit.
    let mut cfg = CampaignConfig::ecs_fargate_spot();
    cfg.backend.interruption_rate_per_hour = 0.5;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut d = SimDriver::new(&cfg);
    let run = run_campaign(&cfg, &mut d, &dir.path().join("s"), RunOptions::default()).map_err(|e| e.to_string())?;
    let interruptions: u32 = run.state.workers.values().map(|w| w.interruptions).sum();
    let loads: u32 = run.state.workers.values().map(|w| w.index_loads).sum();
    let retried = run.state.files.iter().filter(|f| f.attempts > f.oom_failures + 1).count();
    let all_terminal = run.state.files.iter().all(|f| f.status.is_terminal() && f.status != FileStatus::Leased);
    check(
        interrupted_runs > 0 && interruptions > 0 && loads as usize > run.state.workers.len() && retried > 0 && all_terminal,
        format!(
            "{checked} spot simulations ({interrupted_runs} interrupted) keep loads > workers; dispatcher run: {interruptions} interruptions, {loads} loads, {retried} requeued files all terminal"
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 12] = [
        ("feasibility verdicts per service", c1_feasibility_verdicts),
        ("on-demand serverless cost", c2_ecs_cost),
        ("VM cost", c3_ec2_cost),
        ("spot cost", c4_spot_cost),
        ("time calibration", c5_time_calibration),
        ("OOM statistics", c6_oom_statistics),
        ("early termination", c7_early_termination),
        ("stage shares", c8_stage_shares),
        ("determinism", c9_determinism),
        ("storage safety", c10_storage_safety),
        ("crash resume", c11_crash_resume),
        ("spot mechanics", c12_spot_mechanics),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        match f() {
            Ok(detail) => println!("PASS  {n:>2}  {name}: {detail}"),
            Err(detail) => {
                println!("FAIL  {n:>2}  {name}: {detail}");
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
