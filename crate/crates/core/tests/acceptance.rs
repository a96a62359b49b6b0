//! Acceptance suite, run with a custom harness so every criterion prints one
//! `PASS`/`FAIL` line even when the output is not captured per test. Extra
//! arguments filter criteria by substring, e.g.
//! `cargo test --test acceptance -- criterion_5 criterion_6`. Exits non-zero
//! if any selected criterion fails.
//!
//! The learning criteria (4 to 6) run at desk scale: 192-step episodes,
//! batch 128 and a 10-member ensemble instead of the full 1344 / 1024 / 100.

mod common;

use std::sync::OnceLock;

use hyperdyna_core::config::ExperimentConfig;
use hyperdyna_core::diffnet::{self, NetSpec};
use hyperdyna_core::dyna::{run_task, stage_seed, BufferSet, ContinualRun, StepContext, TaskRun};
use hyperdyna_core::envsim::STEP_SECONDS;
use hyperdyna_core::experiment::{self, Manifest};
use hyperdyna_core::hyperworld::{dynamics_error, TargetKind};
use hyperdyna_core::metrics;
use hyperdyna_core::{checkpoint, Agent, Hypernet, RegularizationSnapshot, Scenario, TaskSpec};
use hyperdyna_core::{ParamVector, Transition, Variant, ZoneEnv};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Outcome of one criterion: pass flag and a one-line summary.
type Outcome = (bool, String);

fn task(id: u8) -> TaskSpec {
    TaskSpec::new(id).unwrap()
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const DRAWS: usize = 100;
const COORDS_PER_DRAW: usize = 6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error over `COORDS_PER_DRAW` random coordinates of `params`.
fn check_coords(
    params: &[f64],
    grad: &[f64],
    rng: &mut ChaCha8Rng,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for _ in 0..COORDS_PER_DRAW {
        let i = rng.random_range(0..params.len());
        p[i] = params[i] + FD_STEP;
        let up = loss(&p);
        p[i] = params[i] - FD_STEP;
        let down = loss(&p);
        p[i] = params[i];
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

fn random_params(spec: &NetSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p = diffnet::init_params(spec, rng.random()).into_vec();
    for v in &mut p {
        *v += 0.05 * rng.sample::<f64, _>(StandardNormal);
    }
    p
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn mse_check(spec: &NetSpec, rng: &mut ChaCha8Rng) -> f64 {
    let params = random_params(spec, rng);
    let x = random_matrix(8, spec.input_dim(), rng);
    let y = random_matrix(8, spec.output_dim(), rng);
    let (_, g) = diffnet::mse_gradient(spec, &params, x.view(), y.view()).unwrap();
    check_coords(&params, &g, rng, |p| {
        let out = diffnet::forward_batch(spec, p, x.view()).unwrap();
        diffnet::mse_loss(out.view(), y.view()).0
    })
}

fn random_transition(env: &ZoneEnv, task_id: u8, rng: &mut ChaCha8Rng) -> Transition {
    let (mut state, _) = env.reset(Scenario::JanuaryLike, rng.random());
    state.zone_temp = rng.random_range(12.0..28.0);
    state.sim_time = rng.random_range(0..96) as f64 * STEP_SECONDS;
    let obs = env.observe(&state);
    let actions = [rng.random(), rng.random(), rng.random()];
    let out = env.step(&state, actions).unwrap();
    let policy_action = task(task_id)
        .controlled()
        .iter()
        .map(|&i| actions[i])
        .collect();
    Transition {
        obs,
        policy_action,
        actions,
        next_obs: out.obs,
        reward: out.reward,
        setpoints: out.setpoints,
        task_id,
        terminal: false,
        synthetic: false,
    }
}

fn criterion_1_gradient_correctness() -> Outcome {
    let cfg = ExperimentConfig::default();
    let env = ZoneEnv::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 4];

    for _ in 0..DRAWS {
        // Actor through the full SAC objective, for both action widths.
        let dim = if rng.random::<bool>() { 1 } else { 3 };
        let agent = Agent::for_task(dim, &cfg.sac.hidden, 0.1, rng.random()).unwrap();
        let perturbed = random_params(agent.actor_spec(), &mut rng);
        let agent = agent
            .with_actor_params(ParamVector::from_vec(perturbed))
            .unwrap();
        let obs = random_matrix(6, agent.obs_dim(), &mut rng);
        let eps = Array2::from_shape_simple_fn((6, dim), || rng.sample(StandardNormal));
        let (_, g, _) = agent.actor_loss_grad(obs.view(), eps.clone()).unwrap();
        let base = agent.actor_params().to_vec();
        let e = check_coords(&base, &g, &mut rng, |p| {
            let a = agent
                .with_actor_params(ParamVector::from_vec(p.to_vec()))
                .unwrap();
            a.actor_loss_grad(obs.view(), eps.clone()).unwrap().0
        });
        worst[0] = worst[0].max(e);

        worst[1] = worst[1].max(mse_check(agent.critic_spec(), &mut rng));

        // Hypernet through assembled targets and the snapshot regularizer.
        let settings = cfg.hypernet_settings();
        let h = Hypernet::new(&settings, rng.random()).unwrap();
        let h = h
            .with_params(ParamVector::from_vec(random_params(h.spec(), &mut rng)))
            .unwrap();
        let snap = Hypernet::new(&settings, rng.random())
            .unwrap()
            .capture_snapshot(&[task(1), task(2)])
            .unwrap();
        let data: Vec<Transition> = (0..4)
            .map(|_| random_transition(&env, 3, &mut rng))
            .collect();
        let batch: Vec<&Transition> = data.iter().collect();
        let noise = h.draw_noise(&mut rng);
        let (_, g) = h
            .loss_and_grad(&batch, task(3), &noise, &snap, 0.1)
            .unwrap();
        let base = h.params().to_vec();
        let e = check_coords(&base, &g, &mut rng, |p| {
            let hp = h.with_params(ParamVector::from_vec(p.to_vec())).unwrap();
            hp.loss_and_grad(&batch, task(3), &noise, &snap, 0.1)
                .unwrap()
                .0
                .total
        });
        worst[2] = worst[2].max(e);

        let kind = if rng.random::<bool>() {
            TargetKind::Dynamics
        } else {
            TargetKind::Reward
        };
        worst[3] = worst[3].max(mse_check(h.targets().spec(kind), &mut rng));
    }

    let pass = worst.iter().all(|&w| w < FD_TOL);
    (pass, format!(
            "max rel err actor {:.1e}, critic {:.1e}, hypernet {:.1e}, targets {:.1e} (tol {FD_TOL:.0e}, {DRAWS} draws)",
            worst[0], worst[1], worst[2], worst[3]
        ))
}

// ---------------------------------------------------------------- 2

fn criterion_2_reference_hyperparameters_in_manifest() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = Manifest::new(&ExperimentConfig::default())
        .write(dir.path())
        .unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let doc: toml::Table = text.parse().unwrap();
    let training = doc["config"]["training"].as_table().unwrap();
    let float = |k: &str| training[k].as_float().unwrap();
    let int = |k: &str| training[k].as_integer().unwrap();
    let checks = [
        ("gamma", float("gamma") == 0.99),
        ("lr_actor", float("lr_actor") == 0.00005),
        ("lr_critic", float("lr_critic") == 0.0002),
        ("batch_size", int("batch_size") == 1024),
        ("real_buffer_size", int("real_buffer_size") == 35000),
        (
            "synthetic_buffer_size",
            int("synthetic_buffer_size") == 35000,
        ),
        ("hypernet_buffer_size", int("hypernet_buffer_size") == 4000),
        ("hypernet_lr", float("hypernet_lr") == 0.0001),
        ("policy_update_every", int("policy_update_every") == 2),
        ("beta", float("beta") == 0.1),
        ("steps_per_episode", int("steps_per_episode") == 1344),
        ("synthetic_per_step", int("synthetic_per_step") == 10),
        ("ensemble_models", int("ensemble_models") == 100),
    ];
    let bad: Vec<&str> = checks
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(k, _)| *k)
        .collect();
    let pass =
        bad.is_empty() && doc.contains_key("code_version") && doc.contains_key("master_seed");
    (
        pass,
        format!("{} fields checked, mismatched: {bad:?}", checks.len()),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3_step_accounting() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.episodes.task1 = 4;
    let env = cfg.zone_env().unwrap();
    let t1 = task(1);
    let seed = stage_seed(cfg.master_seed, Variant::Mbrl, Scenario::JanuaryLike, t1);
    let mut hypernet = Hypernet::new(&cfg.hypernet_settings(), 0).unwrap();
    let snapshot = RegularizationSnapshot::default();
    let mut run = TaskRun::new(&cfg, &env, t1, Variant::Mbrl, Scenario::JanuaryLike, seed).unwrap();
    while !run.is_finished() {
        run.step(StepContext {
            config: &cfg,
            env: &env,
            hypernet: Some(&mut hypernet),
            snapshot: &snapshot,
            wall_clock_s: 0.0,
        })
        .unwrap();
    }
    let report = run.report();
    let k = 1344;
    let warm = k - 1024 + 1;
    let real_ok = report.real_transitions == vec![k; 4];
    let syn_ok = report.synthetic_transitions == vec![10 * warm, 10 * k, 10 * k, 10 * k];

    let b = run.buffers();
    let real: Vec<&Transition> = b.m_alpha.iter().collect();
    let gamma: Vec<&Transition> = b.m_gamma.iter().collect();
    let live_ok = b.m_alpha.len() == 4 * k
        && b.m_gamma.len() == 4000
        && gamma[..] == real[real.len() - 4000..]
        && b.m_beta.len() == 35000
        && b.m_beta.iter().all(|t| t.synthetic);

    // Capacity and eviction order at the reference sizes, with sentinel rewards.
    let mut set = BufferSet::from_config(&cfg);
    let sentinel = |i: usize, synthetic: bool| {
        let mut t = (*real[0]).clone();
        t.reward = -(i as f64);
        t.synthetic = synthetic;
        t
    };
    let mut evicted_in_order = true;
    for i in 0..36_000 {
        set.push_real(sentinel(i, false)).unwrap();
        if let Some(old) = set.m_beta.push(sentinel(i, true)).unwrap() {
            evicted_in_order &= old.reward == -((i - 35_000) as f64);
        }
    }
    let front = |f: &hyperdyna_core::dyna::Fifo| f.iter().next().unwrap().reward;
    let caps_ok = set.m_alpha.len() == 35_000
        && set.m_beta.len() == 35_000
        && set.m_gamma.len() == 4000
        && front(&set.m_alpha) == -1000.0
        && front(&set.m_beta) == -1000.0
        && front(&set.m_gamma) == -32_000.0
        && evicted_in_order;

    let pass = real_ok && syn_ok && live_ok && caps_ok;
    (
        pass,
        format!(
            "real {:?}, synthetic {:?}, buffers {}/{}/{} live, capacity+fifo {}",
            report.real_transitions,
            report.synthetic_transitions,
            b.m_alpha.len(),
            b.m_beta.len(),
            b.m_gamma.len(),
            if caps_ok { "ok" } else { "broken" }
        ),
    )
}

// ---------------------------------------------------------------- 4 to 6

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Desk-scale configuration shared by the learning criteria.
fn desk_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.master_seed = seed;
    cfg.scenarios = vec![Scenario::JanuaryLike];
    cfg.episodes.task1 = 30;
    cfg.episodes.task2 = 10;
    cfg.episodes.task3 = 5;
    cfg.training.steps_per_episode = 192;
    cfg.training.batch_size = 128;
    cfg.training.ensemble_models = 10;
    // Fewer updates per run than at full scale, so the temperature must adapt faster.
    cfg.sac.lr_entropy = 0.003;
    cfg.metrics.log_interval = 0;
    cfg
}

fn held_out_task1(env: &ZoneEnv, seed: u64) -> Vec<Transition> {
    let grid = hyperdyna_core::ActionGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for ep in 0..2 {
        let (mut state, mut obs) = env.reset(Scenario::JanuaryLike, seed.wrapping_add(1000 + ep));
        while !env.is_done(&state) {
            let a = grid.snap(rng.random());
            let actions = task(1).apply_defaults(&[a]).unwrap();
            let step = env.step(&state, actions).unwrap();
            out.push(Transition {
                obs,
                policy_action: vec![a],
                actions,
                next_obs: step.obs,
                reward: step.reward,
                setpoints: step.setpoints,
                task_id: 1,
                terminal: false,
                synthetic: false,
            });
            state = step.state;
            obs = step.obs;
        }
    }
    out
}

fn criterion_4_regularization_limits_forgetting() -> Outcome {
    let mut drift_wins = 0;
    let mut error_wins = 0;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let mut cfg = desk_config(seed);
        cfg.episodes.task1 = 10;
        cfg.episodes.task2 = 0;
        cfg.episodes.task3 = 0;
        let mut run = ContinualRun::new(cfg.clone(), Variant::Mbrl, Scenario::JanuaryLike).unwrap();
        run.run_to_end(|_| Ok(())).unwrap();
        let trained = run.hypernet().unwrap().clone();
        let snapshot = run.snapshot().clone();
        let env = run.env().clone();
        let held = held_out_task1(&env, seed);
        let held: Vec<&Transition> = held.iter().collect();

        let mut result = Vec::new();
        for beta in [0.1, 0.0] {
            let mut c = cfg.clone();
            c.training.beta = beta;
            c.episodes.task2 = 10;
            let mut h = trained.clone();
            let t2 = task(2);
            let s = stage_seed(seed, Variant::Mbrl, Scenario::JanuaryLike, t2);
            run_task(
                &c,
                &env,
                t2,
                Variant::Mbrl,
                Scenario::JanuaryLike,
                s,
                Some(&mut h),
                &snapshot,
                |_| Ok(()),
            )
            .unwrap();
            let drift = h.drift_from_snapshot(task(1), &snapshot).unwrap();
            let err = dynamics_error(&h, task(1), &held).unwrap();
            result.push((drift, err));
        }
        let (reg, free) = (result[0], result[1]);
        drift_wins += (reg.0 < free.0) as usize;
        error_wins += (reg.1 < free.1) as usize;
        lines.push(format!(
            "seed {seed}: drift {:.2e} vs {:.2e}, task-1 mse {:.4} vs {:.4}",
            reg.0, free.0, reg.1, free.1
        ));
    }
    for l in &lines {
        println!("  {l}");
    }
    let pass = drift_wins == SEEDS.len() && error_wins >= 4;
    (
        pass,
        format!("drift lower in {drift_wins}/5 seeds, held-out error lower in {error_wins}/5"),
    )
}

/// Episode returns of one seed's desk runs, computed once and shared by
/// criteria 5 and 6.
struct SeedCurves {
    mbrl_task1: Vec<f64>,
    mbrl_task3: Vec<f64>,
    mfrl_task1: Vec<f64>,
    mfrl_task3: Vec<f64>,
}

fn curves() -> &'static [SeedCurves] {
    static CURVES: OnceLock<Vec<SeedCurves>> = OnceLock::new();
    CURVES.get_or_init(|| {
        SEEDS
            .iter()
            .map(|&seed| {
                let returns = |variant| {
                    let mut cfg = desk_config(seed);
                    if variant == Variant::Mfrl {
                        // Nothing carries across MFRL stages, so task 3 is a from-scratch run.
                        cfg.episodes.task2 = 0;
                    }
                    let mut run = ContinualRun::new(cfg, variant, Scenario::JanuaryLike).unwrap();
                    run.run_to_end(|_| Ok(())).unwrap();
                    let by_task = |id| {
                        run.reports()
                            .iter()
                            .find(|r| r.task_id == id)
                            .map(|r| r.episode_returns.clone())
                            .unwrap()
                    };
                    (by_task(1), by_task(3))
                };
                let (mbrl_task1, mbrl_task3) = returns(Variant::Mbrl);
                let (mfrl_task1, mfrl_task3) = returns(Variant::Mfrl);
                SeedCurves {
                    mbrl_task1,
                    mbrl_task3,
                    mfrl_task1,
                    mfrl_task3,
                }
            })
            .collect()
    })
}

/// Threshold at 90% of MFRL's improvement from its first to its 30th
/// episode. Returns are non-positive, so "toward 0" means larger.
fn threshold(mfrl: &[f64]) -> f64 {
    let first = mfrl[0];
    let last = mfrl[29];
    first + 0.9 * (last - first)
}

/// 1-based index of the first episode at or above `r_star`.
fn episodes_to_reach(returns: &[f64], r_star: f64) -> Option<usize> {
    returns.iter().position(|&r| r >= r_star).map(|i| i + 1)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_5_sample_efficiency() -> Outcome {
    let mut ratios = Vec::new();
    for (seed, c) in SEEDS.iter().zip(curves()) {
        let r_star = threshold(&c.mfrl_task1);
        let mfrl = episodes_to_reach(&c.mfrl_task1, r_star).unwrap();
        // An MBRL run that never reaches R* counts as needing one more episode than it had.
        let mbrl = episodes_to_reach(&c.mbrl_task1, r_star).unwrap_or(c.mbrl_task1.len() + 1);
        let ratio = mbrl as f64 / mfrl as f64;
        println!("  seed {seed}: R* {r_star:.2} K·h, MBRL {mbrl} episodes, MFRL {mfrl}, ratio {ratio:.2}");
        ratios.push(ratio);
    }
    let m = median(ratios);
    let pass = m <= 0.6;
    (pass, format!("median episode ratio {m:.2} (need <= 0.60)"))
}

fn criterion_6_rapid_convergence_on_task_3() -> Outcome {
    let mut mbrl_hits = 0;
    let mut mfrl_hits = 0;
    for (seed, c) in SEEDS.iter().zip(curves()) {
        let r_star = threshold(&c.mfrl_task1);
        let mbrl = episodes_to_reach(&c.mbrl_task3, r_star);
        let mfrl = episodes_to_reach(&c.mfrl_task3, r_star);
        println!(
            "  seed {seed}: R* {r_star:.2}; continual MBRL {:?} -> {mbrl:?}; scratch MFRL {:?} -> {mfrl:?}",
            rounded(&c.mbrl_task3),
            rounded(&c.mfrl_task3)
        );
        mbrl_hits += mbrl.is_some() as usize;
        mfrl_hits += mfrl.is_some() as usize;
    }
    let pass = mbrl_hits >= 4 && mfrl_hits <= 1;
    (pass, format!("continual MBRL reached R* in {mbrl_hits}/5 seeds (need >= 4), scratch MFRL in {mfrl_hits}/5 (need <= 1)"))
}

fn rounded(v: &[f64]) -> Vec<i64> {
    v.iter().map(|x| x.round() as i64).collect()
}

// ---------------------------------------------------------------- 7

fn criterion_7_determinism() -> Outcome {
    let mut cfg = common::tiny_config();
    cfg.scenarios = vec![Scenario::JanuaryLike, Scenario::AprilLike];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = std::fs::read(experiment::run_experiment(&cfg, a.path()).unwrap()).unwrap();
    let mb = std::fs::read(experiment::run_experiment(&cfg, b.path()).unwrap()).unwrap();
    let pass = ma == mb && !ma.is_empty();
    (
        pass,
        format!(
            "two runs, {} metrics bytes each, identical: {}",
            ma.len(),
            ma == mb
        ),
    )
}

// ---------------------------------------------------------------- 8

mod oracle {
    //! Brute-force restatement of the documented surrogate, sharing no code
    //! with the library beyond the public generator types.

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub fn mix(x: u64) -> u64 {
        let mut z = x.wrapping_add(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn outdoor(january: bool, t: f64, seed: u64) -> f64 {
        let (mean, amp) = if january { (-2.0, 4.0) } else { (10.0, 6.0) };
        let step = (t / 900.0).floor() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(step)));
        let z: f64 = StandardNormal.sample(&mut rng);
        mean + amp * (2.0 * std::f64::consts::PI * (t - 32400.0) / 86400.0).sin() + 0.5 * z
    }

    pub fn band(t: f64) -> (f64, f64) {
        let hour = (t % 86400.0) / 3600.0;
        if (7.0..22.0).contains(&hour) {
            (21.0, 24.0)
        } else {
            (15.0, 30.0)
        }
    }

    /// (next zone temperature, reward, heating setpoint, cooling setpoint)
    pub fn step(january: bool, t: f64, zone: f64, seed: u64, a: [f64; 3]) -> (f64, f64, f64, f64) {
        let out = outdoor(january, t, seed);
        let q = 9000.0 * a[0] * (0.5 + 0.5 * a[1]) * a[2];
        let next = (zone + (900.0 / 12e6) * (240.0 * (out - zone) + q)).clamp(-20.0, 60.0);
        let (heat, cool) = band(t);
        let violation = if next < heat {
            heat - next
        } else if next > cool {
            next - cool
        } else {
            0.0
        };
        (next, -violation * 0.25, heat, cool)
    }
}

fn criterion_8_environment_matches_oracle() -> Outcome {
    let env = ZoneEnv::default();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let january = rng.random::<bool>();
        let scenario = if january {
            Scenario::JanuaryLike
        } else {
            Scenario::AprilLike
        };
        let seed: u64 = rng.random();
        let (mut state, _) = env.reset(scenario, seed);
        state.step_index = rng.random_range(0..env.episode_steps);
        state.sim_time = state.step_index as f64 * 900.0;
        state.zone_temp = rng.random_range(-20.0..60.0);
        let a = [rng.random(), rng.random(), rng.random()];
        let got = env.step(&state, a).unwrap();
        let (next, reward, heat, cool) =
            oracle::step(january, state.sim_time, state.zone_temp, seed, a);
        let t_next = state.sim_time + 900.0;
        let mut diffs = vec![
            got.state.zone_temp - next,
            got.obs.zone_temp - next,
            got.reward - reward,
            got.setpoints.heating - heat,
            got.setpoints.cooling - cool,
            got.state.sim_time - t_next,
            got.obs.time_sin - (2.0 * std::f64::consts::PI * (t_next % 86400.0) / 86400.0).sin(),
            got.obs.time_cos - (2.0 * std::f64::consts::PI * (t_next % 86400.0) / 86400.0).cos(),
        ];
        for (k, f) in got.obs.forecast.iter().enumerate() {
            diffs.push(f - oracle::outdoor(january, t_next + 900.0 * (k + 1) as f64, seed));
        }
        worst = diffs.iter().fold(worst, |w, d| w.max(d.abs()));
        assert_eq!(got.state.step_index, state.step_index + 1);
    }
    let pass = worst <= 1e-12;
    (
        pass,
        format!("1000 draws, max abs deviation {worst:.2e} (tol 1e-12)"),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9_checkpoint_resume() -> Outcome {
    let cfg = common::tiny_config();
    let mut results = Vec::new();
    for variant in [Variant::Mbrl, Variant::Mfrl] {
        let (_, full) = common::run_rows(&cfg, variant, Scenario::AprilLike);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.ckpt");
        let mut rows = Vec::new();
        let mut run = ContinualRun::new(cfg.clone(), variant, Scenario::AprilLike).unwrap();
        // Break in the middle of task 2, after the task-1 snapshot.
        for _ in 0..(2 * 48 + 29) {
            rows.extend(run.step().unwrap());
        }
        checkpoint::save(&path, &run).unwrap();
        drop(run);
        let mut resumed = checkpoint::load(&path).unwrap();
        resumed
            .run_to_end(|r| {
                rows.push(r.clone());
                Ok(())
            })
            .unwrap();
        results.push(metrics::render(&rows) == metrics::render(&full));
    }
    let pass = results.iter().all(|&ok| ok);
    (
        pass,
        format!(
            "resumed metrics identical: mbrl {}, mfrl {}",
            results[0], results[1]
        ),
    )
}

type Criterion = (u8, &'static str, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    (
        1,
        "criterion_1",
        "gradient correctness",
        criterion_1_gradient_correctness,
    ),
    (
        2,
        "criterion_2",
        "reference hyperparameters",
        criterion_2_reference_hyperparameters_in_manifest,
    ),
    (
        3,
        "criterion_3",
        "step accounting",
        criterion_3_step_accounting,
    ),
    (
        4,
        "criterion_4",
        "forgetting A/B (beta 0.1 vs 0)",
        criterion_4_regularization_limits_forgetting,
    ),
    (
        5,
        "criterion_5",
        "sample efficiency (MBRL vs MFRL, task 1)",
        criterion_5_sample_efficiency,
    ),
    (
        6,
        "criterion_6",
        "task 3 within 5 episodes",
        criterion_6_rapid_convergence_on_task_3,
    ),
    (7, "criterion_7", "determinism", criterion_7_determinism),
    (
        8,
        "criterion_8",
        "environment oracle",
        criterion_8_environment_matches_oracle,
    ),
    (
        9,
        "criterion_9",
        "checkpoint round trip",
        criterion_9_checkpoint_resume,
    ),
];

fn main() -> std::process::ExitCode {
    // cargo passes harness flags such as --nocapture; only bare words filter.
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (n, key, name, run) in CRITERIA {
        if !filters.is_empty()
            && !filters
                .iter()
                .any(|f| key.contains(f.as_str()) || f == &n.to_string())
        {
            continue;
        }
        ran += 1;
        let started = std::time::Instant::now();
        let (pass, detail) = match std::panic::catch_unwind(run) {
            Ok(outcome) => outcome,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let tag = if pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} [{tag}] {name}: {detail} ({:.0}s)",
            started.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(n);
        }
    }
    println!(
        "acceptance: {} of {ran} criteria passed",
        ran - failed.len()
    );
    if failed.is_empty() {
        std::process::ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
