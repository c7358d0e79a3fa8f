//! Acceptance suite. Each test checks one criterion and prints a single
//! `criterion N: PASS|FAIL ...` line before asserting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;

use v2x_sched::channel::{
    bessel_j0, db_to_linear, fading_correlation, fading_step, grid_budget, instantaneous_rate_bps,
    sample_cn, ChannelParams,
};
use v2x_sched::cli::{main_with_args, observation_counter};
use v2x_sched::config::ExperimentConfig;
use v2x_sched::ddqn::train::{moving_average, sign_bandit_accuracy, sign_bandit_config, SignBandit};
use v2x_sched::ddqn::{train, Agent, QNetwork, SchedulingTask, TrainConfig, TrainOutcome};
use v2x_sched::env::{EnvConfig, RewardMode};
use v2x_sched::map::{BinaryMap, ConfidenceMap};
use v2x_sched::observations::OBS_XIS;
use v2x_sched::perception::{focal_cls_loss, selection_mask, utility, LossWeights};
use v2x_sched::rng;
use v2x_sched::scenario::ScenarioConfig;
use v2x_sched::schedulers::{evaluate, spearman, EvalSetup, Learned, MaxRate, Nearest, Policy, RandomPolicy, RoundRobin};

fn report(n: u32, ok: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_01_channel_statistics() {
    let t0 = Instant::now();
    let p = ChannelParams::default();
    let v = 25.0 / 3.6;
    let mu = fading_correlation(v, p.carrier_freq_hz, p.subslot_duration_s);
    let arg = 2.0 * std::f64::consts::PI * v * p.carrier_freq_hz * p.subslot_duration_s / 299_792_458.0;
    let expected = bessel_j0(arg);
    let mut r = rng::stream(2024, "acceptance-fading", 0);
    let n = 1_000_000;
    let mut h = sample_cn(&mut r, 1.0);
    let (mut power, mut cross, mut var) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let next = fading_step(h, mu, &mut r);
        power += next.norm_sqr();
        cross += h.re * next.re + h.im * next.im;
        var += h.re * h.re + h.im * h.im;
        h = next;
    }
    let lag1 = cross / var;
    let mean_power = power / n as f64;
    let secs = t0.elapsed();
    let ok = (lag1 - expected).abs() <= 0.01
        && (mean_power - 1.0).abs() <= 0.02
        && secs < Duration::from_secs(10);
    report(
        1,
        ok,
        format!("lag1={lag1:.4} J0={expected:.4} E|h|^2={mean_power:.4} time={secs:.2?}"),
    );
    assert!(ok);
}

#[test]
fn criterion_02_rate_and_budget_closed_forms() {
    let base = ChannelParams::default();
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1e-300);
    // SNR at unit gain composed by hand from the link budget terms.
    let snr_unit_db = |p: &ChannelParams| {
        p.tx_power_dbm + 2.0 * p.antenna_gain_dbi
            - p.noise_figure_db
            - (p.noise_psd_dbm_hz + 10.0 * p.bandwidth_hz.log10())
    };
    let gain_for = |p: &ChannelParams, snr_db: f64| db_to_linear(snr_db - snr_unit_db(p));
    let mut ok = true;
    ok &= instantaneous_rate_bps(&base, 0.0) == 0.0;
    ok &= rel(instantaneous_rate_bps(&base, gain_for(&base, 0.0)), base.bandwidth_hz);
    ok &= rel(instantaneous_rate_bps(&base, gain_for(&base, 20.0)), 3e5 * 101f64.log2());
    let d = base.grid_payload_bits;
    let dt = base.subslot_duration_s;
    ok &= grid_budget(&[d / dt; 5], dt, d) == 5;
    ok &= grid_budget(&[0.0; 5], dt, d) == 0;
    ok &= grid_budget(&[3.0 * d / dt * 0.4; 2], dt, d) == 2;
    // Budget of a fixed link over the bandwidth sweep.
    let gain = db_to_linear(-85.0);
    let budgets: Vec<usize> = [200e3, 300e3, 400e3, 500e3, 600e3]
        .iter()
        .map(|&w| {
            let p = ChannelParams {
                bandwidth_hz: w,
                ..base.clone()
            };
            let r = instantaneous_rate_bps(&p, gain);
            grid_budget(&vec![r; p.subslots_per_slot], p.subslot_duration_s, p.grid_payload_bits)
        })
        .collect();
    let monotone = budgets.windows(2).all(|w| w[0] <= w[1]);
    ok &= monotone;
    report(2, ok, format!("budgets over 200..600 kHz = {budgets:?}"));
    assert!(ok);
}

fn direct_focal(tau: &[f64], gt: &[bool], eta: f64, beta: f64) -> f64 {
    let mut total = 0.0;
    for (t, g) in tau.iter().zip(gt) {
        let t = t.clamp(1e-6, 1.0 - 1e-6);
        total += if *g {
            -eta * (1.0 - t).powf(beta) * t.ln()
        } else {
            -(1.0 - eta) * t.powf(beta) * (1.0 - t).ln()
        };
    }
    total
}

#[test]
fn criterion_03_topk_focal_utility_oracles() {
    let mut r = rng::stream(3, "acceptance-oracles", 0);
    let w = LossWeights::default();
    let mut topk_ok = 0;
    for _ in 0..1000 {
        // coarse grid of values so ties are common
        let vals: Vec<f64> = (0..256).map(|_| r.gen_range(0..40) as f64 / 40.0).collect();
        let scores = ConfidenceMap::from_values(16, 16, vals.clone()).unwrap();
        let b = r.gen_range(0..300);
        let mask = selection_mask(&scores, b);
        let mut idx: Vec<usize> = (0..256).filter(|&i| vals[i] > 0.0).collect();
        idx.sort_by(|&a, &c| vals[c].total_cmp(&vals[a]).then(a.cmp(&c)));
        idx.truncate(b);
        let mut want = vec![false; 256];
        for i in idx {
            want[i] = true;
        }
        topk_ok += usize::from(mask.bits() == want.as_slice());
    }
    let mut worst_focal = 0.0f64;
    for _ in 0..1000 {
        let tau: Vec<f64> = (0..256).map(|_| r.gen::<f64>()).collect();
        let gt: Vec<bool> = (0..256).map(|_| r.gen_bool(0.2)).collect();
        let m = ConfidenceMap::from_values(16, 16, tau.clone()).unwrap();
        let g = BinaryMap::from_bits(16, 16, gt.clone()).unwrap();
        let got = focal_cls_loss(&m, &g, &w).unwrap();
        let want = direct_focal(&tau, &gt, w.eta, w.beta);
        worst_focal = worst_focal.max((got - want).abs());
    }
    let one = |v: f64| ConfidenceMap::from_values(1, 1, vec![v]).unwrap();
    let full = BinaryMap::full(1, 1);
    let u_same = utility(&one(0.3), &one(0.3), &full, &w).unwrap();
    let u_cross = utility(&one(0.4), &one(0.6), &full, &w).unwrap();
    let u_shift = utility(&one(0.6), &one(0.9), &full, &w).unwrap();
    let util_ok = u_same == 0.0 && u_cross == 1.0 && (u_shift - 0.04).abs() < 1e-12;
    let ok = topk_ok == 1000 && worst_focal <= 1e-9 && util_ok;
    report(
        3,
        ok,
        format!(
            "topk {topk_ok}/1000, focal max|diff|={worst_focal:.2e}, utility=({u_same}, {u_cross}, {u_shift:.15})"
        ),
    );
    assert!(ok);
}

fn loss_flat(dims: &[usize], flat: &[f64], s: &Array2<f64>, a: &[usize], y: &[f64]) -> f64 {
    let mut net = QNetwork::zeros(dims).unwrap();
    net.set_flat_params(flat).unwrap();
    (0..s.nrows())
        .map(|i| {
            let q = net.forward(s.row(i).to_vec().as_slice()).unwrap();
            (y[i] - q[a[i]]).powi(2)
        })
        .sum()
}

#[test]
fn criterion_04_gradient_check() {
    let t0 = Instant::now();
    let mut r = rng::stream(4, "acceptance-gradcheck", 0);
    let mut worst = 0.0f64;
    for k in 0..20 {
        let dims = [5, 8 + k % 5, 6, 3];
        let net = QNetwork::he_uniform(&dims, &mut r).unwrap();
        let s = Array2::from_shape_fn((8, 5), |_| r.gen_range(-1.0..1.0));
        let a: Vec<usize> = (0..8).map(|_| r.gen_range(0..3)).collect();
        let y: Vec<f64> = (0..8).map(|_| r.gen_range(-2.0..2.0)).collect();
        let (_, g) = net.loss_and_grad(s.view(), &a, &y).unwrap();
        let g = g.flat();
        let p = net.flat_params();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] = p[i] + h;
            let up = loss_flat(&dims, &q, &s, &a, &y);
            q[i] = p[i] - h;
            let dn = loss_flat(&dims, &q, &s, &a, &y);
            let fd = (up - dn) / (2.0 * h);
            let scale = fd.abs().max(g[i].abs());
            // entries where both sides vanish carry no relative information
            if scale > 1e-7 {
                worst = worst.max((fd - g[i]).abs() / scale);
            }
        }
    }
    let secs = t0.elapsed();
    let ok = worst < 1e-4 && secs < Duration::from_secs(30);
    report(4, ok, format!("max relative error {worst:.2e} over 20 networks, time={secs:.2?}"));
    assert!(ok);
}

#[test]
fn criterion_05_toy_mdp_learning() {
    let t0 = Instant::now();
    let mut accs = Vec::new();
    for seed in 0..5 {
        let mut src = SignBandit::new(3, seed);
        let out = train(&mut src, &sign_bandit_config(seed)).unwrap();
        accs.push(sign_bandit_accuracy(&out.agent).unwrap());
    }
    let secs = t0.elapsed();
    let ok = accs.iter().all(|&a| a >= 0.95) && secs < Duration::from_secs(60);
    report(5, ok, format!("greedy optimality per seed {accs:?}, time={secs:.2?}"));
    assert!(ok);
}

const TRAIN_SEED: u64 = 7;

struct Trained {
    outcome: TrainOutcome,
    elapsed: Duration,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = TrainConfig {
            episodes: 5000,
            seed: TRAIN_SEED,
            ..TrainConfig::default()
        };
        let env_cfg = EnvConfig {
            reward_mode: RewardMode::LabelFree,
            ..EnvConfig::default()
        };
        let mut task = SchedulingTask::new(
            ChannelParams::default(),
            env_cfg,
            ScenarioConfig::default(),
            TRAIN_SEED,
            cfg.validation_scenarios,
        )
        .unwrap();
        let t0 = Instant::now();
        let outcome = train(&mut task, &cfg).unwrap();
        Trained {
            outcome,
            elapsed: t0.elapsed(),
        }
    })
}

fn decile_means(xs: &[f64]) -> (f64, f64) {
    let k = xs.len().div_ceil(10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&xs[..k]), mean(&xs[xs.len() - k..]))
}

#[test]
fn criterion_06_convergence() {
    let t = trained();
    let ys: Vec<f64> = t.outcome.curve.iter().map(|p| p.mean_validation_return).collect();
    // Trailing average; the first points average over what is available.
    let ma = moving_average(&ys, 10);
    let (first, last) = decile_means(&ma);
    let ratio = last / first;
    // Full-window variant, reported for reference.
    let full = &ma[9.min(ma.len() - 1)..];
    let (ff, fl) = decile_means(full);
    let ok = first > 0.0 && ratio >= 1.2;
    report(
        6,
        ok,
        format!(
            "{} curve points, MA10 first decile {first:.3}, last decile {last:.3}, ratio {ratio:.3} \
             (full-window MA ratio {:.3}); training time {:.1?}",
            ys.len(),
            fl / ff,
            t.elapsed
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_ordinal_comparison() {
    let agent: Agent = trained().outcome.agent.clone();
    let setup = EvalSetup {
        params: ChannelParams::default(),
        env_cfg: EnvConfig::default(),
        scenario_cfg: ScenarioConfig::default(),
        episodes: 500,
        seed: rng::derive_seed(TRAIN_SEED, "acceptance-eval", 0),
        bootstrap_resamples: 1000,
    };
    let learned = Learned::new(agent);
    let policies: Vec<&dyn Policy> = vec![&Nearest { include_rsu: false }, &RoundRobin, &MaxRate, &learned];
    let reports: Vec<_> = policies.iter().map(|p| evaluate(*p, &setup, 1).unwrap()).collect();
    let by = |name: &str| reports.iter().find(|r| r.policy == name).unwrap();
    let (nearest, rr, maxrate, sched) = (by("nearest"), by("rr"), by("max_rate"), by("schedcp"));
    let a = reports.iter().all(|r| r.policy == "max_rate" || r.mean_rate_mbps.mean < maxrate.mean_rate_mbps.mean);
    let b = reports.iter().all(|r| sched.f1.mean >= r.f1.mean - 0.01) && sched.f1.mean >= nearest.f1.mean + 0.02;
    let c = reports.iter().all(|r| r.policy == "rr" || r.mean_rate_mbps.mean > rr.mean_rate_mbps.mean);
    let summary: Vec<String> = reports
        .iter()
        .map(|r| format!("{}: F1 {:.4} rate {:.3} Mbps", r.policy, r.f1.mean, r.mean_rate_mbps.mean))
        .collect();
    let ok = a && b && c;
    report(7, ok, format!("(a) {a} (b) {b} (c) {c}; {}", summary.join("; ")));
    assert!(ok);
}

#[test]
fn case_study_first_decision_targets_remaining_score() {
    let agent: Agent = trained().outcome.agent.clone();
    let learned = Learned::new(agent);
    let scfg = ScenarioConfig::default();
    let mut hits = 0;
    for s in 0..20u64 {
        let world = v2x_sched::scenario::generate_scenario(&scfg, 10_000 + s).unwrap();
        let tr = v2x_sched::schedulers::case_study(
            world,
            s,
            &learned,
            &ChannelParams::default(),
            &EnvConfig::default(),
            &scfg,
        )
        .unwrap();
        let first = &tr.rows[0];
        let any = first.remaining_score.iter().any(|&v| v > 0.0);
        hits += usize::from(!any || first.remaining_score[first.action] > 0.0);
        assert_eq!(tr.rows.len(), 40);
    }
    println!("case study: first decision hits a link with remaining score in {hits}/20 scenarios");
    assert_eq!(hits, 20);
}

#[test]
fn criterion_08_observation_trends() {
    let cfg = ExperimentConfig::default().with_seed(8);
    let c = observation_counter(&cfg, &cfg.scenario, 200, 0).unwrap();
    let s = c.stats();
    let probs: Vec<f64> = s.violation_prob.iter().map(|x| x.1).collect();
    let strictly = probs.windows(2).all(|w| w[1] < w[0]);
    let ok = s.true_to_false_prob_positive == 0.0 && strictly;
    report(
        8,
        ok,
        format!(
            "true-to-false on positives {} over {} updates; violation at xi {:?} = {:?}",
            s.true_to_false_prob_positive, s.updates, OBS_XIS, probs
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_09_utility_loss_consistency() {
    let mut rhos = Vec::new();
    for w in [200e3, 300e3] {
        let setup = EvalSetup {
            params: ChannelParams {
                bandwidth_hz: w,
                ..ChannelParams::default()
            },
            env_cfg: EnvConfig::default(),
            scenario_cfg: ScenarioConfig::default(),
            episodes: 200,
            seed: 9,
            bootstrap_resamples: 0,
        };
        let rep = evaluate(&RandomPolicy, &setup, 1).unwrap();
        let u: Vec<f64> = rep.per_episode.iter().map(|m| m.total_utility).collect();
        let dl: Vec<f64> = rep.per_episode.iter().map(|m| m.total_delta_l_cls).collect();
        rhos.push(spearman(&u, &dl));
    }
    let ok = rhos.iter().all(|&r| r > 0.5);
    report(9, ok, format!("Spearman(utility, dL_cls) at 200 kHz {:.3}, 300 kHz {:.3}", rhos[0], rhos[1]));
    assert!(ok);
}

fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let key = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(key, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_10_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("cfg.toml");
    fs::write(
        &cfg_path,
        "[train]\nepisodes = 30\nbatch_size = 64\nvalidation_every = 10\nvalidation_scenarios = 2\n\
         [eval]\nepisodes = 8\nbandwidths_hz = [200e3, 400e3]\nobs_episodes = 4\nbootstrap_resamples = 50\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let (c, o) = (cfg_path.to_str().unwrap(), out.to_str().unwrap());
    let ck = out.join("checkpoint.bin");
    let ck = ck.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["v2x-sched", "train", "--config", c, "--seed", "5", "--out", o],
        vec!["v2x-sched", "eval", "--config", c, "--seed", "5", "--out", o, "--checkpoint", ck],
        vec!["v2x-sched", "sweep", "--config", c, "--seed", "5", "--out", o, "--checkpoint", ck],
        vec!["v2x-sched", "case-study", "--config", c, "--seed", "5", "--out", o, "--checkpoint", ck],
        vec!["v2x-sched", "validate-obs", "--config", c, "--seed", "5", "--out", o],
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        for cmd in &commands {
            assert_eq!(main_with_args(cmd.clone()), 0, "{cmd:?}");
        }
        runs.push(snapshot_dir(&out));
        fs::remove_dir_all(&out).unwrap();
    }
    let differing: Vec<&String> = runs[0]
        .keys()
        .filter(|k| runs[1].get(*k) != runs[0].get(*k))
        .collect();
    let ok = runs[0].len() == runs[1].len() && differing.is_empty() && runs[0].len() > 40;
    report(
        10,
        ok,
        format!("{} output files compared, {} differ", runs[0].len(), differing.len()),
    );
    assert!(ok);
}
