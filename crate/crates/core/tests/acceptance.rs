//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use hypmix_core::backend::LevelCurve;
use hypmix_core::config::BackendKind;
use hypmix_core::environment::{measurement_actions, productive_measurement_set};
use hypmix_core::hypothesis::{builtin_hypothesis, t_mono_at, t_uniform_at, Direction};
use hypmix_core::stats::{chi2_sf, spearman_exact_count, spearman_p, spearman_rho, student_t_sf, Alternative};
use hypmix_core::{
    builtin_labelings, canonical_actions, Action, ActionCategory, Classification, ClassRegistry, Composer, ExperimentPlan,
    LearnerCharacteristic, LearnerModel, PromptTemplates, RemoteConfig, ResponseCache, Runner, SyntheticBackend,
    SyntheticPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
}

fn ac1_statistics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut compared = 0;
    while compared < 50 {
        let n = rng.random_range(3..=30);
        let tied = compared % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| if tied { rng.random_range(0..4) as f64 } else { rng.random::<f64>() };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let (rx, ry) = (average_ranks(&x), average_ranks(&y));
        if rx.iter().all(|&r| r == rx[0]) || ry.iter().all(|&r| r == ry[0]) {
            continue;
        }
        let got = spearman_rho(&x, &y).map_err(|e| e.to_string())?;
        ensure((got - pearson(&rx, &ry)).abs() <= 1e-12, format!("rho differs on n={n}"))?;
        compared += 1;
    }
    let mut rationals = 0;
    for n in 3..=9 {
        let perms = permutations(n);
        let rhos: Vec<f64> = perms.iter().map(|p| rho_of_perm(p)).collect();
        let mut distinct = rhos.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        for &rho in &distinct {
            let count = rhos.iter().filter(|r| r.abs() >= rho.abs() - 1e-9).count() as u64;
            let got = spearman_exact_count(rho, n, Alternative::TwoSided).map_err(|e| e.to_string())?;
            ensure(got == (count, perms.len() as u64), format!("n={n} rho={rho}: {got:?} vs {count}"))?;
            ensure(spearman_p(rho, n).unwrap() == count as f64 / perms.len() as f64, "p is not count / n!")?;
            rationals += 1;
        }
    }
    for i in 1..=500 {
        let x = f64::from(i) * 0.1;
        ensure((chi2_sf(x, 2) - (-x / 2.0).exp()).abs() <= 1e-10, format!("chi2_sf({x}, 2)"))?;
    }
    ensure((chi2_sf(3.841459, 1) - 0.05).abs() <= 5e-5, "chi2_sf(3.841459, 1)")?;
    ensure((student_t_sf(1.0, 1) - 0.25).abs() <= 1e-10, "student_t_sf(1, 1)")?;
    Ok(format!("50 rho vectors, {rationals} exact p values"))
}

fn ac2_truth_tables() -> Check {
    let alpha = 0.05;
    // (rho, p, satisfied for increasing, satisfied for decreasing)
    let mono = [
        (0.6, 0.01, true, false),
        (0.6, 0.05, true, false),
        (0.6, 0.20, false, false),
        (0.0, 0.01, false, false),
        (0.0, 0.05, false, false),
        (0.0, 1.00, false, false),
        (-0.6, 0.01, false, true),
        (-0.6, 0.05, false, true),
        (-0.6, 0.20, false, false),
    ];
    for (rho, p, inc, dec) in mono {
        ensure(t_mono_at(rho, p, Direction::Increasing, alpha) == inc, format!("t_mono(+, rho={rho}, p={p})"))?;
        ensure(t_mono_at(rho, p, Direction::Decreasing, alpha) == dec, format!("t_mono(-, rho={rho}, p={p})"))?;
    }
    for (p, want) in [(0.01, false), (0.05, false), (0.2, true)] {
        ensure(t_uniform_at(p, alpha) == want, format!("t_uniform(p={p})"))?;
    }
    Ok("9 mono rows x 2 directions, 3 uniform rows".into())
}

fn gp_model(hyp: &str, level: u8) -> LearnerModel {
    LearnerModel::new().with_characteristic(
        LearnerCharacteristic::from_id("geometry_proficiency", "How well the learner reasons about ellipse geometry."),
        level,
        vec![builtin_hypothesis(hyp).unwrap()],
    )
}

fn composer() -> Composer {
    Composer::new(PromptTemplates::default(), ClassRegistry::with_builtins())
}

/// Satisfied count over 100 replications, varying plan and backend seeds.
fn replicate(policy: &SyntheticPolicy, model: &LearnerModel, base: &ExperimentPlan) -> Result<usize, String> {
    let composer = composer();
    let mut satisfied = 0;
    for rep in 0..100u64 {
        let backend = SyntheticBackend::new(policy.clone(), 1_000 + rep);
        let runner =
            Runner::new(&composer, &backend, None, builtin_labelings(), base.parallelism).map_err(|e| e.to_string())?;
        let plan = ExperimentPlan {
            seed: rep,
            ..base.clone()
        };
        let (_, _, results) = runner.run_and_evaluate(&plan, model).map_err(|e| e.to_string())?;
        if results.iter().all(|r| r.satisfied) {
            satisfied += 1;
        }
    }
    Ok(satisfied)
}

fn ac3_monotone_power() -> Check {
    let productive = productive_measurement_set();
    let mut table = [0.0; 10];
    for (i, t) in table.iter_mut().enumerate() {
        let p = 0.30 + 0.05 * (i + 1) as f64;
        *t = (p / (1.0 - p)).ln();
    }
    let rising = SyntheticPolicy::uniform().with_level_effect("geometry_proficiency", &productive, LevelCurve::Table(table));
    let plan = ExperimentPlan {
        levels: (1..=10).collect(),
        states_per_level: 20,
        samples_per_state: 10,
        labelings: vec!["A".into()],
        parallelism: threads(),
        ..ExperimentPlan::default()
    };
    let model = gp_model("H_G1", 5);
    let hit = replicate(&rising, &model, &plan)?;
    let flat = replicate(&SyntheticPolicy::uniform(), &model, &plan)?;
    ensure(hit >= 95 && flat <= 10, format!("rising {hit}/100 (need >= 95), flat {flat}/100 (need <= 10)"))?;
    Ok(format!("rising {hit}/100, flat {flat}/100"))
}

fn ac4_uniform_power() -> Check {
    let measures = measurement_actions();
    let exits = [ActionCategory::Submit, ActionCategory::Exit];
    let flat = SyntheticPolicy::uniform().with_base(&exits, f64::NEG_INFINITY);
    let skewed = flat.clone().with_base(&measures[..1], (0.8f64 * 9.0 / 0.2).ln());
    let plan = ExperimentPlan {
        levels: vec![1],
        states_per_level: 20,
        samples_per_state: 5,
        labelings: vec!["A".into()],
        parallelism: threads(),
        ..ExperimentPlan::default()
    };
    let model = gp_model("H_G2", 1);
    let hit = replicate(&flat, &model, &plan)?;
    let skew = replicate(&skewed, &model, &plan)?;
    ensure(
        (93..=97).contains(&hit) && skew <= 1,
        format!("uniform {hit}/100 (need 93..=97), skewed {skew}/100 (need <= 1)"),
    )?;
    Ok(format!("uniform {hit}/100, skewed {skew}/100"))
}

fn ac5_edit_graph() -> Check {
    let summary = |file: &str| -> Result<(Vec<(String, Classification)>, String), String> {
        let bundle = case_study(file);
        let backend = bundle.backend(None).map_err(|e| e.to_string())?;
        let report = run_report(&bundle, &bundle.plan, backend.as_ref(), None);
        let again = run_report(&bundle, &bundle.plan, backend.as_ref(), None);
        let json = serde_json::to_string(&report).unwrap();
        ensure(json == serde_json::to_string(&again).unwrap(), format!("{file}: two runs differ"))?;
        let rows = report.rows.iter().map(|r| (r.operation.clone(), r.classification)).collect();
        Ok((rows, json))
    };
    let (invariant, _) = summary("hypmix.toml")?;
    let hold = invariant.iter().filter(|(_, c)| *c == Classification::Hold).count();
    ensure(invariant.len() == 15 && hold == 15, format!("invariant policy: {hold}/{} rows Hold", invariant.len()))?;
    let (flatten, _) = summary("hypmix_flatten.toml")?;
    let lost: Vec<&str> = flatten
        .iter()
        .filter(|(_, c)| *c == Classification::Lost)
        .map(|(op, _)| op.as_str())
        .collect();
    let combine = flatten.iter().filter(|(op, _)| op == "Combine").count();
    ensure(
        combine > 0 && lost.len() == combine && lost.iter().all(|op| *op == "Combine"),
        format!("flatten policy: Lost rows {lost:?}, Combine rows {combine}"),
    )?;
    Ok(format!("15/15 Hold; flatten: {combine} Combine rows Lost, nothing else"))
}

fn ac6_golden() -> Check {
    let bundle = case_study("hypmix.toml");
    let mut n = 0;
    for hyp in GOLDEN_HYPOTHESES {
        for l in ["A", "B", "C"] {
            let prompt = golden_prompt(&bundle, hyp, &labeling(l));
            let path = golden_path(hyp, l);
            let frozen = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            ensure(prompt == frozen, format!("{hyp}/{l} differs from {}", path.display()))?;
            let sentence = if l == "A" { table_sentence(hyp) } else { table_stem(hyp) };
            ensure(prompt.contains(sentence), format!("{hyp}/{l}: sentence missing"))?;
            n += 1;
        }
    }
    Ok(format!("{n}/12 golden prompts"))
}

fn ac7_round_trip() -> Check {
    let mut n = 0;
    for l in builtin_labelings() {
        for cat in canonical_actions() {
            let action = Action::from_category(cat);
            let back = l.parse_surface(&l.surface_label(&action)).map_err(|e| e.to_string())?;
            ensure(back == action, format!("{}: {cat} does not round-trip", l.id()))?;
            n += 1;
        }
    }
    ensure(n == 36, format!("{n} pairs"))?;
    Ok("36/36".into())
}

fn ac8_cache_replay() -> Check {
    let stub = StubServer::start();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bundle = case_study("hypmix.toml");
    bundle.config.backend.remote = Some(RemoteConfig {
        endpoint: stub.url.clone(),
        max_retries: 0,
        timeout_secs: 10,
        ..RemoteConfig::default()
    });
    let plan = ExperimentPlan {
        states_per_level: 20,
        samples_per_state: 1,
        labelings: vec!["A".into()],
        ..bundle.plan.clone()
    };
    let backend = bundle.backend(Some(BackendKind::Remote)).map_err(|e| e.to_string())?;
    let recorded = {
        let cache = ResponseCache::open(dir.path()).map_err(|e| e.to_string())?;
        serde_json::to_string(&run_report(&bundle, &plan, backend.as_ref(), Some(&cache))).unwrap()
    };
    let recorded_calls = stub.calls();
    ensure(recorded_calls > 0, "the recording run never reached the stub")?;
    let cache = ResponseCache::open(dir.path()).map_err(|e| e.to_string())?;
    let replayed = serde_json::to_string(&run_report(&bundle, &plan, backend.as_ref(), Some(&cache))).unwrap();
    let replay_calls = stub.calls() - recorded_calls;
    ensure(replay_calls == 0, format!("replay made {replay_calls} network call(s)"))?;
    ensure(replayed == recorded, "replayed report differs")?;
    Ok(format!("{recorded_calls} calls recorded, 0 on replay, identical report"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("AC1 statistics oracles", Duration::from_secs(10), ac1_statistics),
        ("AC2 success-criterion truth tables", Duration::from_secs(1), ac2_truth_tables),
        ("AC3 monotone power", Duration::from_secs(120), ac3_monotone_power),
        ("AC4 uniform power", Duration::from_secs(60), ac4_uniform_power),
        ("AC5 edit graph end to end", Duration::from_secs(120), ac5_edit_graph),
        ("AC6 golden prompts", Duration::from_secs(60), ac6_golden),
        ("AC7 labeling round trip", Duration::from_secs(60), ac7_round_trip),
        ("AC8 cache replay", Duration::from_secs(120), ac8_cache_replay),
    ];
    let only = std::env::args().skip(1).find(|a| a.starts_with("AC"));
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if only.as_deref().is_some_and(|o| !name.starts_with(o)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > limit => Err(format!("{detail}; took {took:.1?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name} ({took:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({took:.2?}): {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
