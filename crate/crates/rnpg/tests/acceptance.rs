//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with the measured quantities. Tolerances are pinned in the asserts.

use ndarray::{Array1, Array2};
use once_cell::sync::Lazy;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rnpg::env::{sample_occupancy_iid, state_from, Action, Lqc, Sample, State};
use rnpg::estimators::{
    fim_estimate_reuse, grad_estimate_reuse, lqc_advantage, AdvantageModel, Batch,
    EstimatorConfig, ReplayWindow, SamplingMode,
};
use rnpg::experiment::config::{Algo, EnvId, ExperimentConfig, FimBatch};
use rnpg::experiment::{lqc_verify, run_experiment, RepResult, RunOutput};
use rnpg::lqc_oracle::{lqc_grad, theorem3_bound, theoretical_sigma};
use rnpg::optim::trpo_step;
use rnpg::policy::PolicyParams;
use rnpg::stats::sample_mean_cov;

const ACCEPT_SEED: u64 = 2024;

fn iid_cfg() -> EstimatorConfig {
    EstimatorConfig {
        gamma: 0.5,
        mode: SamplingMode::Iid,
        advantage: AdvantageModel::LqcClosedForm,
        omega_max: None,
    }
}

/// Occupancy batch for the LQC shift policy, drawn through the environment
/// sampler.
fn lqc_occupancy_batch(
    theta: f64,
    iteration: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Batch {
    let env = Lqc::new(0.5);
    let policy = PolicyParams::gaussian_shift(theta);
    let advantage = move |s: &State, a: Action| lqc_advantage(theta, s[0], a.continuous());
    let samples = sample_occupancy_iid(&env, &policy, count, &advantage, rng).unwrap();
    Batch {
        episodes: samples.len(),
        samples,
        theta_behavior: policy,
        iteration,
    }
}

fn rows_equal_except_wall(a: &RepResult, b: &RepResult) -> bool {
    a.rows.len() == b.rows.len()
        && a.rows.iter().zip(b.rows.iter()).all(|(x, y)| {
            x.rep == y.rep
                && x.iteration == y.iteration
                && x.mean_reward == y.mean_reward
                && x.theta_norm == y.theta_norm
                && x.grad_norm == y.grad_norm
                && x.ratio_max == y.ratio_max
        })
}

#[test]
fn acceptance_01_k1_reduction_is_bit_identical() {
    for env in [EnvId::Lqc, EnvId::Cartpole] {
        let mut vnpg = ExperimentConfig::defaults_for(env);
        vnpg.algo = Algo::Vnpg;
        vnpg.k_grad = 1;
        vnpg.k_fim = 1;
        vnpg.iterations = 100;
        vnpg.macro_reps = 2;
        vnpg.record_every = 1;
        vnpg.base_seed = ACCEPT_SEED;
        let mut rnpg = vnpg.clone();
        rnpg.algo = Algo::Rnpg;

        let dir = tempfile::tempdir().unwrap();
        let a = run_experiment(&vnpg, &dir.path().join("vnpg"), 2).unwrap();
        let b = run_experiment(&rnpg, &dir.path().join("rnpg"), 2).unwrap();
        for (x, y) in a.reps.iter().zip(b.reps.iter()) {
            assert!(
                rows_equal_except_wall(x, y),
                "{env:?}: metrics differ between VNPG and RNPG(K=1)"
            );
            assert_eq!(
                x.final_params.theta(),
                y.final_params.theta(),
                "{env:?}: final parameters differ"
            );
        }
    }
    println!("acceptance 1 (K=1 reduction): PASS — VNPG and RNPG(K=1) bit-identical on both envs over 100 iterations");
}

#[test]
fn acceptance_02_lqc_gradient_unbiasedness() {
    let n = 1_000_000usize;
    let cfg = iid_cfg();
    for (i, &theta) in [-1.0f64, 0.0, 1.0].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(ACCEPT_SEED + 100 + i as u64);
        let batch = lqc_occupancy_batch(theta, 0, n, &mut rng);
        // Per-sample terms of the estimator, for the standard error.
        let policy = PolicyParams::gaussian_shift(theta);
        let terms: Vec<f64> = batch
            .samples
            .iter()
            .map(|s: &Sample| {
                let adv = lqc_advantage(theta, s.state[0], s.action.continuous());
                let score = policy.score(&s.state, s.action)[0];
                adv * score / (1.0 - cfg.gamma)
            })
            .collect();
        let mut window = ReplayWindow::new(1);
        window.push(batch).unwrap();
        let (grad, _) = grad_estimate_reuse(&window, &policy, 1, &cfg).unwrap();
        let mean = terms.iter().sum::<f64>() / n as f64;
        assert!(
            (mean - grad[0]).abs() <= 1e-9 * grad[0].abs().max(1.0),
            "estimator and per-sample mean disagree"
        );
        let var =
            terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        let expected = lqc_grad(theta, cfg.gamma);
        assert!(
            (grad[0] - expected).abs() <= 4.0 * se,
            "theta {theta}: grad {:.5} vs {expected} (4 se = {:.5})",
            grad[0],
            4.0 * se
        );
        println!(
            "acceptance 2 (gradient unbiasedness, theta={theta}): PASS — {:.4} vs {expected} (se {:.4})",
            grad[0], se
        );
    }
}

#[test]
fn acceptance_03_lqc_fim_chi_square_mean() {
    let n = 1_000_000usize;
    let theta = 0.0;
    let epsilon = 0.01;
    let cfg = iid_cfg();
    let policy = PolicyParams::gaussian_shift(theta);
    let mut rng = ChaCha8Rng::seed_from_u64(ACCEPT_SEED + 200);
    let big = lqc_occupancy_batch(theta, 0, n, &mut rng);
    let mut sum = 0.0;
    for (i, s) in big.samples.iter().enumerate() {
        let mut window = ReplayWindow::new(1);
        window
            .push(Batch {
                samples: vec![s.clone()],
                theta_behavior: policy.clone(),
                iteration: i,
                episodes: 1,
            })
            .unwrap();
        let f = fim_estimate_reuse(&window, &policy, 1, epsilon, &cfg).unwrap();
        sum += f[(0, 0)] - epsilon;
    }
    let mean = sum / n as f64;
    let band = 4.0 * (2.0f64 / n as f64).sqrt();
    assert!(
        (mean - 1.0).abs() <= band,
        "mean of (F - eps) = {mean} outside 1 +- {band}"
    );
    println!("acceptance 3 (FIM chi-square mean): PASS — mean {mean:.5} in 1 ± {band:.5}");
}

#[test]
fn acceptance_04_appendix_constants() {
    let reps = 10_000_000usize;
    let a = theoretical_sigma(0.5, 5, 5, 0.01, reps, ACCEPT_SEED + 300).unwrap();
    let b = theoretical_sigma(0.5, 5, 5, 0.01, reps, ACCEPT_SEED + 301).unwrap();
    assert_eq!(a.sigma_eta, 40.0, "Sigma_eta must be exactly 10/(1-gamma)^2");
    assert!(a.g_matrix < 0.0, "G must be Hurwitz (negative)");
    assert!(
        (a.g_matrix - (-2.0 / 0.5 * a.fbar_inv)).abs() < 1e-15,
        "G must equal -(2/(1-gamma)) * Fbar_inv"
    );
    assert!(a.sigma2 >= 0.0 && b.sigma2 >= 0.0, "Sigma_2 must be nonnegative");
    let combined = (a.fbar_inv_se * a.fbar_inv_se + b.fbar_inv_se * b.fbar_inv_se).sqrt();
    assert!(
        (a.fbar_inv - b.fbar_inv).abs() <= 3.0 * combined,
        "independent Fbar_inv runs disagree: {} vs {} (3 combined se = {})",
        a.fbar_inv,
        b.fbar_inv,
        3.0 * combined
    );
    println!(
        "acceptance 4 (closed-form constants): PASS — Sigma_eta 40, G {:.4} < 0, Sigma_2 {:.3} >= 0, Fbar_inv {:.6}±{:.6} vs {:.6}±{:.6}",
        a.g_matrix, a.sigma2, a.fbar_inv, a.fbar_inv_se, b.fbar_inv, b.fbar_inv_se
    );
}

#[test]
fn acceptance_05_asymptotic_normality_cells() {
    let cells = [(5usize, 1usize), (5, 5), (5, 10), (10, 5)];
    let dir = tempfile::tempdir().unwrap();
    let mut passes = 0;
    let mut lines = Vec::new();
    for (b, k) in cells {
        let mut cfg = ExperimentConfig::defaults_for(EnvId::Lqc);
        cfg.algo = Algo::Rnpg;
        cfg.batch_size = b;
        cfg.k_grad = k;
        cfg.k_fim = 1;
        cfg.fim_batch = FimBatch::Independent;
        cfg.iterations = 50_000;
        cfg.macro_reps = 500;
        cfg.record_every = 50_000;
        cfg.base_seed = ACCEPT_SEED;
        let out = lqc_verify(&cfg, &dir.path().join(format!("B{b}_K{k}")), 0).unwrap();
        let v = &out.verdict;
        if v.pass {
            passes += 1;
        }
        lines.push(format!(
            "  cell (B={b}, K={k}): correlation {:.5} (>= 0.99), var_ratio {:.4} (in [0.8, 1.2]) -> {}",
            v.correlation,
            v.var_ratio,
            if v.pass { "pass" } else { "fail" }
        ));
    }
    for l in &lines {
        println!("{l}");
    }
    assert!(passes >= 3, "only {passes} of 4 normality cells passed:\n{}", lines.join("\n"));
    println!("acceptance 5 (asymptotic normality): PASS — {passes}/4 cells within thresholds");
}

#[test]
fn acceptance_06_variance_reduction_ordering() {
    // At a frozen parameter the K-reuse estimator averages K*B i.i.d.
    // terms, so its variance must scale as 1/K (15% slack).
    let theta = 0.2;
    let cfg = iid_cfg();
    let policy = PolicyParams::gaussian_shift(theta);
    let draws = 10_000;
    let b = 5;
    let variance_at = |k: usize, seed: u64| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vals = Vec::with_capacity(draws);
        for _ in 0..draws {
            let mut w = ReplayWindow::new(k);
            for i in 0..k {
                w.push(lqc_occupancy_batch(theta, i, b, &mut rng)).unwrap();
            }
            let (g, _) = grad_estimate_reuse(&w, &policy, k, &cfg).unwrap();
            vals.push(g[0]);
        }
        let mean = vals.iter().sum::<f64>() / draws as f64;
        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (draws as f64 - 1.0)
    };
    let v1 = variance_at(1, ACCEPT_SEED + 400);
    let v10 = variance_at(10, ACCEPT_SEED + 401);
    let bound = v1 / 10.0 * 1.15;
    assert!(
        v10 <= bound,
        "var(K=10) = {v10:.4} exceeds (1/10)(1.15) var(K=1) = {bound:.4}"
    );
    println!(
        "acceptance 6 (variance reduction): PASS — var(K=10) {v10:.4} <= {bound:.4} (var(K=1) {v1:.4})"
    );
}

/// Shared cartpole runs for criterion 7 (one computation, three checks).
struct CartpoleRuns {
    vnpg: RunOutput,
    rnpg10: RunOutput,
    rnpg50: RunOutput,
}

static CARTPOLE_RUNS: Lazy<CartpoleRuns> = Lazy::new(|| {
    let dir = std::env::temp_dir().join("rnpg_acceptance_cartpole");
    let base = |algo: Algo, k: usize| {
        let mut cfg = ExperimentConfig::defaults_for(EnvId::Cartpole);
        cfg.algo = algo;
        cfg.k_grad = k;
        cfg.k_fim = 1;
        cfg.macro_reps = 20;
        cfg.base_seed = ACCEPT_SEED;
        cfg
    };
    CartpoleRuns {
        vnpg: run_experiment(&base(Algo::Vnpg, 1), &dir.join("vnpg"), 0).unwrap(),
        rnpg10: run_experiment(&base(Algo::Rnpg, 10), &dir.join("rnpg10"), 0).unwrap(),
        rnpg50: run_experiment(&base(Algo::Rnpg, 50), &dir.join("rnpg50"), 0).unwrap(),
    }
});

/// Across-rep standard error of the reward at each recorded iteration in
/// [lo, hi], averaged over iterations.
fn mean_stderr_over_window(out: &RunOutput, lo: usize, hi: usize) -> f64 {
    let iters: Vec<usize> = out.reps[0]
        .rows
        .iter()
        .map(|r| r.iteration)
        .filter(|&i| i >= lo && i <= hi)
        .collect();
    let mut total = 0.0;
    for &it in &iters {
        let vals: Vec<f64> = out
            .reps
            .iter()
            .filter_map(|rep| {
                rep.rows
                    .iter()
                    .find(|r| r.iteration == it)
                    .map(|r| r.mean_reward)
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        total += (var / n).sqrt();
    }
    total / iters.len() as f64
}

#[test]
fn acceptance_07a_cartpole_final_reward_ordering() {
    let runs = &*CARTPOLE_RUNS;
    // Row-count contract: 150 iterations at record_every = 1.
    for rep in &runs.vnpg.reps {
        assert_eq!(rep.rows.len(), 150, "expected one row per iteration");
    }
    let v = runs.vnpg.final_mean_reward();
    let r = runs.rnpg10.final_mean_reward();
    assert!(
        r >= v,
        "RNPG(K=10) final reward {r:.2} below VNPG {v:.2}"
    );
    println!("acceptance 7a (final reward RNPG >= VNPG): PASS — {r:.2} vs {v:.2} over 20 reps");
}

#[test]
fn acceptance_07b_cartpole_stderr_reduction() {
    let runs = &*CARTPOLE_RUNS;
    let v = mean_stderr_over_window(&runs.vnpg, 50, 150);
    let r = mean_stderr_over_window(&runs.rnpg10, 50, 150);
    let verdict = if r < v { "PASS" } else { "FAIL" };
    println!(
        "acceptance 7b (reward-curve std-error 50-150 RNPG < VNPG): {verdict} — RNPG {r:.3} vs VNPG {v:.3}"
    );
    assert!(
        r < v,
        "std-error over iterations 50-150: RNPG(K=10) {r:.3} >= VNPG {v:.3}; \
         the variance-reduction ordering holds only from iteration ~100 on in this \
         implementation (RNPG transits the reward range inside the window while \
         VNPG curves are still bunched low)"
    );
}

#[test]
fn acceptance_07c_cartpole_monotone_in_reuse() {
    let runs = &*CARTPOLE_RUNS;
    let finals = [
        runs.vnpg.final_mean_reward(),
        runs.rnpg10.final_mean_reward(),
        runs.rnpg50.final_mean_reward(),
    ];
    let inversions = finals
        .windows(2)
        .filter(|w| w[1] < w[0])
        .count();
    assert!(
        inversions <= 1,
        "final rewards {finals:?} over K = 1, 10, 50 have {inversions} inversions"
    );
    println!(
        "acceptance 7c (reward non-decreasing in K, one inversion tolerated): PASS — K=1/10/50 -> {:.2}/{:.2}/{:.2} ({inversions} inversion)",
        finals[0], finals[1], finals[2]
    );
}

#[test]
fn acceptance_08_theorem3_bound() {
    // Dual evaluation of the bound formula with a different algebraic
    // grouping.
    let (c, k, b, n, delta, d) = (1.0f64, 10usize, 4usize, 100usize, 0.05f64, 1usize);
    let traces = vec![1.0; k];
    let got = theorem3_bound(c, k, b, n, delta, &traces, d).unwrap().value;
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let l = (pi2 * (n * n) as f64 * (d + 1) as f64).ln() - (3.0 * delta).ln();
    let kf = k as f64;
    let bf = b as f64;
    let beta = (l / (kf.powi(3) * bf * (bf - 1.0))).sqrt() * c + traces.iter().sum::<f64>() / (kf * kf * bf);
    let reference = (2.0 * beta * l).sqrt() + 2.0 * c / kf * l;
    assert!(
        (got - reference).abs() <= 1e-12 * reference.max(1.0),
        "dual evaluation mismatch: {got} vs {reference}"
    );

    // Empirical frequency of LHS <= RHS over 200 frozen-theta replications,
    // with C the observed bound of the bounded quantities.
    let theta_star = 0.0;
    let gamma = 0.5;
    let (k, b) = (10usize, 4usize);
    let reps = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(ACCEPT_SEED + 500);
    let policy = PolicyParams::gaussian_shift(theta_star);
    let mut hold = 0usize;
    for i in 0..reps {
        let mut all_g: Vec<f64> = Vec::new();
        let mut traces = Vec::with_capacity(k);
        for j in 0..k {
            let batch = lqc_occupancy_batch(theta_star, i * k + j, b, &mut rng);
            let g: Vec<Array1<f64>> = batch
                .samples
                .iter()
                .map(|s| {
                    let adv = lqc_advantage(theta_star, s.state[0], s.action.continuous());
                    let score = policy.score(&s.state, s.action)[0];
                    ndarray::array![adv * score / (1.0 - gamma)]
                })
                .collect();
            let (_, cov) = sample_mean_cov(&g).unwrap();
            traces.push(cov[(0, 0)]);
            all_g.extend(g.iter().map(|v| v[0]));
        }
        let lhs = (lqc_grad(theta_star, gamma)
            - all_g.iter().sum::<f64>() / all_g.len() as f64)
            .abs();
        // omega = 1 frozen; |eta(0)| = 1/(1-gamma) = 2; realized sup |G|.
        let c_obs = all_g
            .iter()
            .fold(2.0f64, |acc, g| acc.max(g.abs()))
            .max(1.0);
        let rhs = theorem3_bound(c_obs, k, b, 100, 0.05, &traces, 1)
            .unwrap()
            .value;
        if lhs <= rhs {
            hold += 1;
        }
    }
    let needed = ((1.0 - 0.05) * reps as f64).ceil() as usize;
    assert!(
        hold >= needed,
        "bound held in only {hold}/{reps} replications (need {needed})"
    );
    println!(
        "acceptance 8 (deviation bound): PASS — dual evaluation to 1e-12; bound held in {hold}/{reps} replications"
    );
}

#[test]
fn acceptance_09_score_gradient_correctness() {
    let h = 1e-6;
    let fd_check = |params: &PolicyParams, state: &State, action: Action| -> f64 {
        let d = params.dim();
        let score = params.score(state, action);
        let mut worst = 0.0f64;
        for i in 0..d {
            let mut up = params.clone();
            let mut t = up.theta().clone();
            t[i] += h;
            up.set_theta(t).unwrap();
            let mut down = params.clone();
            let mut t = down.theta().clone();
            t[i] -= h;
            down.set_theta(t).unwrap();
            let fd = (up.logp(state, action) - down.logp(state, action)) / (2.0 * h);
            let denom = fd.abs().max(1.0);
            worst = worst.max((score[i] - fd).abs() / denom);
        }
        worst
    };

    let mut rng = ChaCha8Rng::seed_from_u64(ACCEPT_SEED + 600);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let p = PolicyParams::gaussian_shift(rng.gen_range(-2.0..2.0));
        let s = state_from(&[rng.gen_range(-2.0..2.0)]);
        let a = Action::Continuous(rng.gen_range(-2.0..2.0));
        worst = worst.max(fd_check(&p, &s, a));

        let p = PolicyParams::softmax_mlp_he_init(4, 32, 2, &mut rng);
        let s = state_from(&[
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-1.0..1.0),
        ]);
        let a = Action::Discrete(i % 2);
        worst = worst.max(fd_check(&p, &s, a));
    }
    assert!(worst <= 1e-5, "finite-difference mismatch {worst}");

    // Zero-mean score under the policy, Monte Carlo.
    let n = 200_000;
    let p = PolicyParams::gaussian_shift(0.3);
    let s = state_from(&[0.5]);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let a = p.sample_action(&s, &mut rng);
        let v = p.score(&s, a)[0];
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n as f64;
    let sd = (sumsq / n as f64 - mean * mean).sqrt();
    assert!(
        mean.abs() <= 3.0 * sd / (n as f64).sqrt(),
        "gaussian E[score] = {mean} outside 3 sigma"
    );

    let p = PolicyParams::softmax_mlp_he_init(4, 32, 2, &mut rng);
    let s = state_from(&[0.2, -0.3, 0.04, 0.1]);
    let d = p.dim();
    let mut sums = vec![0.0; d];
    let mut sumsqs = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let n_mlp = 100_000;
    for _ in 0..n_mlp {
        let a = p.sample_action(&s, &mut rng);
        p.score_into(&s, a, &mut buf);
        for i in 0..d {
            sums[i] += buf[i];
            sumsqs[i] += buf[i] * buf[i];
        }
    }
    // Per-coordinate simultaneous test over d = 226 components: 4 sigma
    // keeps the family-wise false-positive rate around 1%.
    for i in 0..d {
        let mean = sums[i] / n_mlp as f64;
        let sd = (sumsqs[i] / n_mlp as f64 - mean * mean).max(0.0).sqrt();
        if sd == 0.0 {
            assert_eq!(mean, 0.0, "component {i} has zero spread but nonzero mean");
        } else {
            assert!(
                mean.abs() <= 4.0 * sd / (n_mlp as f64).sqrt(),
                "mlp E[score_{i}] = {mean} outside 4 sigma"
            );
        }
    }
    println!(
        "acceptance 9 (score correctness): PASS — worst finite-difference error {worst:.2e}, zero-mean scores within Monte Carlo bands"
    );
}

#[test]
fn acceptance_10_trpo_kl_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(ACCEPT_SEED + 700);
    let mut checked = 0;
    for trial in 0..100 {
        let n = rng.gen_range(1..=8);
        let mut m = Array2::<f64>::zeros((n, n));
        for v in m.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let fim = m.t().dot(&m) + Array2::<f64>::eye(n) * rng.gen_range(0.01..0.5);
        let mut g = Array1::<f64>::zeros(n);
        for v in g.iter_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
        let theta = Array1::<f64>::zeros(n);
        let delta = rng.gen_range(0.005..0.5);
        // Alternate between an always-improving surrogate and one that
        // forces backtracking.
        let mut calls = 0;
        let mut improvement = |_: &Array1<f64>| -> f64 {
            calls += 1;
            if trial % 3 == 0 && calls < 3 {
                -1.0
            } else {
                1.0
            }
        };
        let out = trpo_step(&theta, &g, &fim, delta, &mut improvement).unwrap();
        if out.accepted {
            let step = &out.theta - &theta;
            let kl = 0.5 * step.dot(&fim.dot(&step));
            assert!(
                kl <= delta + 1e-12,
                "accepted step violates KL: {kl} > {delta} + 1e-12"
            );
            checked += 1;
        }
    }
    assert!(checked >= 90, "too few accepted steps to be meaningful");

    // Zero gradient is a fixed point.
    let theta = ndarray::array![0.4, -0.7];
    let g = Array1::<f64>::zeros(2);
    let fim = Array2::<f64>::eye(2);
    let out = trpo_step(&theta, &g, &fim, 0.1, &mut |_| 1.0).unwrap();
    assert_eq!(out.theta, theta);
    println!(
        "acceptance 10 (trust-region KL): PASS — {checked}/100 accepted steps within delta + 1e-12; zero gradient fixed"
    );
}
