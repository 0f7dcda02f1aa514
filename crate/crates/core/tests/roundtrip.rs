use std::collections::BTreeMap;

use proptest::prelude::*;

use rtslice_core::admission::{ResourceSlice, RiskPolicy};
use rtslice_core::config::{load_config_with, render_config, ExperimentConfig, ProfileSpec};
use rtslice_core::joblog::{export_trace, ingest_logs};
use rtslice_core::noise::{FiringStats, ProfileName, RuntimeStats, Spike};
use rtslice_core::testcase::{plan, run_testcase, sim_config, TestCase};
use rtslice_core::{simulate, TaskSet, TaskSpec};

fn task_sets() -> impl Strategy<Value = TaskSet> {
    // (period, deadline %, wcet % of deadline, runtime % of wcet)
    let shape = (1u64..=50_000, 1u64..=100, 1u64..=100, 1u64..=100);
    prop::collection::vec(shape, 1..=6).prop_map(|shapes| {
        let tasks = shapes
            .into_iter()
            .enumerate()
            .map(|(i, (p, dp, wp, rp))| {
                let d = (p * dp / 100).max(1);
                let w = (d * wp / 100).max(1);
                let r = (w * rp / 100).max(1);
                TaskSpec::new(format!("t{i}"), p, d, w, r).unwrap()
            })
            .collect();
        TaskSet::new(tasks).unwrap()
    })
}

fn profiles() -> impl Strategy<Value = ProfileSpec> {
    let custom = (
        "p[a-z0-9]{0,6}",
        (0.0f64..50.0, 0.0f64..10.0, 0u64..200),
        (-5.0f64..40.0, 0.0f64..20.0),
        prop::option::of((1e-9f64..0.01, 1u64..100_000)),
    )
        .prop_map(|(name, (fm, fsd, fmax), (ro, rsd), spike)| ProfileSpec::Custom {
            name,
            firing: FiringStats {
                mean: fm,
                sd: fsd,
                max: fmax.max(fm.ceil() as u64),
            },
            runtime: RuntimeStats {
                mean_offset: ro,
                sd: rsd,
                max: (ro + 4.0 * rsd).ceil() as i64,
            },
            spike: spike.map(|(probability, latency)| Spike { probability, latency }),
        });
    prop_oneof![
        prop::sample::select(ProfileName::PRESETS.to_vec()).prop_map(ProfileSpec::Preset),
        custom,
    ]
}

fn configs() -> impl Strategy<Value = ExperimentConfig> {
    (
        task_sets(),
        prop::collection::vec(0.01f64..=1.0, 1..=3),
        profiles(),
        (1u64..u64::MAX / 2, any::<u64>(), 0u64..5000),
        prop::option::of(0.0f64..=1.0),
        prop::collection::vec(prop::option::of(0u64..100_000), 6),
    )
        .prop_map(|(tasks, caps, profile, (duration, seed, quantum), risk, offsets)| {
            let release_offsets: BTreeMap<String, u64> = tasks
                .iter()
                .zip(offsets)
                .filter_map(|(t, o)| o.map(|o| (t.id.clone(), o)))
                .collect();
            ExperimentConfig {
                slices: caps
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| ResourceSlice::new(format!("s{i}"), c).unwrap())
                    .collect(),
                tasks,
                profile,
                duration,
                seed,
                risk: risk.map(|r| RiskPolicy::new(r).unwrap()),
                release_offsets,
                dispatch_granularity: quantum,
            }
        })
}

proptest! {
    #[test]
    fn config_render_then_load_is_identity(config in configs()) {
        let text = render_config(&config);
        let parsed = load_config_with(&text, None).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(parsed, config);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exported_logs_ingest_back(
        case in prop::sample::select(TestCase::ALL.to_vec()),
        system in prop::sample::select(ProfileName::PRESETS.to_vec()),
        seed in any::<u64>(),
    ) {
        let scale = *case.scales().start();
        let run = run_testcase(case, system, scale, 300_000, seed).unwrap();
        let text = export_trace(&run.trace);
        let back = ingest_logs([("run.csv", text.as_str())]).unwrap();

        prop_assert_eq!(back.job_count(), run.trace.job_count());
        for (orig, read) in run.trace.records().zip(back.records()) {
            prop_assert!(read.is_external() && !orig.is_external());
            prop_assert_eq!(
                (&read.task_id, read.job_index, read.release, read.start, read.finish, read.deadline_abs, read.missed),
                (&orig.task_id, orig.job_index, orig.release, orig.start, orig.finish, orig.deadline_abs, orig.missed)
            );
            prop_assert_eq!(read.firing_latency, orig.firing_latency);
            prop_assert_eq!(read.total, orig.total);
            prop_assert_eq!(read.runtime, orig.observed_runtime());
            prop_assert!(read.identity_holds());
        }
        prop_assert_eq!(export_trace(&back), text);
    }
}

#[test]
fn testcase_runs_are_bit_reproducible() {
    let a = run_testcase(TestCase::Diversity, ProfileName::T3, 3, 2_000_000, 42).unwrap();
    let b = run_testcase(TestCase::Diversity, ProfileName::T3, 3, 2_000_000, 42).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(export_trace(&a.trace), export_trace(&b.trace));
    assert_eq!(a.report, b.report);
    let c = run_testcase(TestCase::Diversity, ProfileName::T3, 3, 2_000_000, 43).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn builtin_configuration_round_trips_and_simulates() {
    let config = load_config_with("case3", None).unwrap();
    let mut shapes: Vec<_> = config.tasks.iter().map(|t| (t.wcet, t.period)).collect();
    shapes.sort();
    assert_eq!(shapes, vec![(900, 10_000), (2500, 5000), (3000, 9000)]);
    assert_eq!(config.slices, vec![ResourceSlice::full("s0")]);

    let reparsed = load_config_with(&render_config(&config), None).unwrap();
    assert_eq!(reparsed, config);

    let planned = plan(&config).unwrap();
    assert!(!planned.bypassed);
    let mut short = config.clone();
    short.duration = 90_000;
    let trace = simulate(&sim_config(&short, planned.assignment).unwrap(), &short.tasks).unwrap();
    assert_eq!(trace.job_count(), 18 + 10 + 9);
}
