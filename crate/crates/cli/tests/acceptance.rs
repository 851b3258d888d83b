//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL` line followed by its measurements.
//!
//! Run with `cargo test -p anynoise-cli --test acceptance -- --nocapture`.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use anynoise_cli::commands::{restore, task_instance, train_network};
use anynoise_cli::ExperimentConfig;
use anynoise_core::training::{example_loss, loss_and_grad, Example};
use anynoise_core::verify::Check;
use anynoise_core::{
    make_vp_schedule, pixel_basis, run_suite, DiffusionProcess, Field, Objective, Rng, SuiteReport,
    TinyNetwork,
};

const SEED: u64 = 20240601;

fn report(n: u32, title: &str, passed: bool, lines: &[String]) {
    println!(
        "criterion {n} ({title}): {}",
        if passed { "PASS" } else { "FAIL" }
    );
    for l in lines {
        println!("    {l}");
    }
}

fn describe(c: &Check) -> String {
    let measured = c.measured.map_or("-".to_string(), |m| format!("{m:.3e}"));
    let bound = match c.lower {
        Some(lo) => format!("[{lo}, {}]", c.threshold),
        None => format!("{}", c.threshold),
    };
    format!(
        "{} {}: {measured} (bound {bound})",
        if c.passed { "ok  " } else { "FAIL" },
        c.name
    )
}

fn timed_suite(name: &str) -> (SuiteReport, Duration) {
    let start = Instant::now();
    let r = run_suite(name, SEED).expect("suite runs");
    (r, start.elapsed())
}

/// Checks whose name contains any of `keys`; all must pass and there must be some.
fn select<'a>(r: &'a SuiteReport, keys: &[&str]) -> Vec<&'a Check> {
    r.checks
        .iter()
        .filter(|c| keys.iter().any(|k| c.name.contains(k)))
        .collect()
}

fn all_pass(checks: &[&Check]) -> bool {
    !checks.is_empty() && checks.iter().all(|c| c.passed)
}

fn lines(checks: &[&Check]) -> Vec<String> {
    checks.iter().map(|c| describe(c)).collect()
}

#[test]
fn criterion_01_coefficient_identities() {
    let (r, took) = timed_suite("coefficients");
    let checks: Vec<&Check> = r.checks.iter().collect();
    let fast = took < Duration::from_secs(5);
    let mut out = lines(&checks);
    out.push(format!("runtime {took:.2?} (limit 5 s)"));
    let passed = all_pass(&checks) && fast;
    report(1, "coefficient identities", passed, &out);
    assert!(passed);
}

#[test]
fn criterion_02_sde_kernel_moments() {
    let (r, took) = timed_suite("moments");
    let checks = select(&r, &["SDE terminal"]);
    let fast = took < Duration::from_secs(30);
    let mut out = lines(&checks);
    out.push(format!(
        "runtime of the whole moments suite {took:.2?} (limit 30 s)"
    ));
    let passed = checks.len() == 4 && all_pass(&checks) && fast;
    report(2, "SDE vs kernel moments", passed, &out);
    assert!(passed);
}

#[test]
fn criterion_03_score_correctness() {
    let (r, _) = timed_suite("score");
    let checks = select(&r, &["finite differences"]);
    let passed = checks.len() == 2 && all_pass(&checks);
    report(3, "score vs finite differences", passed, &lines(&checks));
    assert!(passed);
}

#[test]
fn criterion_04_cancellation_identity() {
    let (c, _) = timed_suite("cancellation");
    let (m, _) = timed_suite("marginal");
    let mut checks = select(&c, &["conditional flow assembly"]);
    let marginal = select(&m, &["marginal flow assembly"]);
    let counts_ok = checks.len() == 3 && marginal.len() == 3;
    checks.extend(marginal);
    let passed = counts_ok && all_pass(&checks);
    report(4, "cancellation identity", passed, &lines(&checks));
    assert!(passed);
}

#[test]
fn criterion_05_edm_reduction() {
    let (r, _) = timed_suite("edm-reduction");
    let checks: Vec<&Check> = r.checks.iter().collect();
    let has_noise = !select(&r, &["pixel noise"]).is_empty();
    let has_step = !select(&r, &["Euler step"]).is_empty();
    let passed = has_noise && has_step && all_pass(&checks);
    report(
        5,
        "reduction to additive Gaussian noise",
        passed,
        &lines(&checks),
    );
    assert!(passed);
}

#[test]
fn criterion_06_denoiser_optimality() {
    let (r, _) = timed_suite("optimality");
    let checks: Vec<&Check> = r.checks.iter().collect();
    let passed = all_pass(&checks);
    report(6, "analytic denoiser optimality", passed, &lines(&checks));
    assert!(passed);
}

#[test]
fn criterion_07_sampler_convergence() {
    let (r, _) = timed_suite("sampler");
    let checks = select(&r, &["error ratio", "Euler, 10^4 steps"]);
    let passed = checks.len() == 3 && all_pass(&checks);
    report(7, "sampler convergence", passed, &lines(&checks));
    assert!(passed);
}

#[test]
fn criterion_08_round_trip() {
    let (r, _) = timed_suite("sampler");
    let checks = select(&r, &["round trip"]);
    let passed = checks.len() == 1 && all_pass(&checks);
    report(8, "round trip", passed, &lines(&checks));
    assert!(passed);
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

#[test]
fn criterion_09_end_to_end_restoration() {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(&bundled("smooth-field.toml"), &[]).expect("bundled config");
    assert_eq!(cfg.sampler.steps, 5);
    let p = cfg.process().unwrap();
    let outcome = train_network(&cfg, &p).unwrap();
    let trained = start.elapsed();

    let task = task_instance(&cfg, 0).unwrap();
    let untouched = task.degraded.clone();
    let r = restore(&cfg, &p, &outcome.net, &task).unwrap();
    let bits = |f: &Field| f.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let exact_init = bits(&r.initial_state) == bits(&task.transformed_degraded().unwrap())
        && bits(&task.degraded) == bits(&untouched);
    let m = &r.metrics;
    let took = start.elapsed();
    let in_budget = took < Duration::from_secs(600);
    let passed = m.psnr_out > m.psnr_in && m.rmse_out < m.rmse_in && exact_init && in_budget;

    // Context only: the same network on further held-out instances.
    let held_out = 20;
    let mut wins = 0;
    let (mut sum_in, mut sum_out) = (0.0, 0.0);
    for k in 0..held_out {
        let t = task_instance(&cfg, k).unwrap();
        let mk = restore(&cfg, &p, &outcome.net, &t).unwrap().metrics;
        wins += usize::from(mk.psnr_out > mk.psnr_in && mk.rmse_out < mk.rmse_in);
        sum_in += mk.psnr_in;
        sum_out += mk.psnr_out;
    }
    report(
        9,
        "5-step smooth-field restoration",
        passed,
        &[
            format!(
                "psnr {:.3} -> {:.3} dB, rmse {:.5} -> {:.5}",
                m.psnr_in, m.psnr_out, m.rmse_in, m.rmse_out
            ),
            format!("initial state bit-identical to the transformed degraded image: {exact_init}"),
            format!("training {trained:.1?}, training + evaluation {took:.1?} (limit 600 s)"),
            format!(
                "held-out instances 0..{held_out}: {wins} improved, mean psnr {:.2} -> {:.2} dB",
                sum_in / held_out as f64,
                sum_out / held_out as f64
            ),
        ],
    );
    assert!(passed);
}

/// `‖g_fd − g_bp‖ / max(‖g_fd‖, ‖g_bp‖)` over the probed coordinates.
fn gradient_check(objective: Objective, seed: u64) -> f64 {
    let shape = [3, 3];
    let p = DiffusionProcess::new(
        make_vp_schedule(1e-4, 0.02, 100.0).unwrap(),
        pixel_basis(&shape),
        1.0,
    )
    .unwrap();
    let mut rng = Rng::new(seed, 0);
    let net = TinyNetwork::new(vec![10, 8, 8, 9], &mut rng).unwrap();
    let x0 = Field::new(
        shape.to_vec(),
        (0..9).map(|_| rng.uniform_in(0.2, 1.0)).collect(),
    )
    .unwrap();
    let mask = Field::new(
        shape.to_vec(),
        (0..9).map(|i| f64::from(u8::from(i % 3 == 0))).collect(),
    )
    .unwrap();
    let t = 37.5;
    let (x_t, noise) = p.forward_sample_with_noise(&x0, t, None, &mut rng).unwrap();
    let ex = Example {
        x_t: &x_t,
        x0: &x0,
        noise: &noise,
        t,
        mask: Some(&mask),
    };
    let (_, grad) = loss_and_grad(objective, &net, &p, &ex).unwrap();
    let h = 1e-6;
    let (mut diff, mut norm_fd, mut norm_bp) = (0.0, 0.0, 0.0);
    for _ in 0..20 {
        let i = rng.index(net.param_count());
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        let fd = (example_loss(objective, &plus, &p, &ex).unwrap()
            - example_loss(objective, &minus, &p, &ex).unwrap())
            / (2.0 * h);
        diff += (fd - grad[i]).powi(2);
        norm_fd += fd * fd;
        norm_bp += grad[i] * grad[i];
    }
    diff.sqrt() / norm_fd.sqrt().max(norm_bp.sqrt()).max(f64::MIN_POSITIVE)
}

#[test]
fn criterion_10_gradient_check() {
    let mut out = Vec::new();
    let mut passed = true;
    for objective in Objective::ALL {
        let err = gradient_check(objective, SEED);
        let ok = err <= 1e-5;
        passed &= ok;
        out.push(format!(
            "{} {objective:?}: relative error {err:.3e} (bound 1e-5)",
            if ok { "ok  " } else { "FAIL" }
        ));
    }
    report(10, "gradient check", passed, &out);
    assert!(passed);
}

#[test]
fn criterion_11_verify_determinism() {
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_anynoise"))
            .args(["verify", "--suite", "all", "--seed", "7"])
            .env("ANYNOISE_THREADS", "2")
            .output()
            .expect("binary runs")
    };
    let (a, b) = (run(), run());
    let identical = a.stdout == b.stdout && !a.stdout.is_empty();
    let codes = (a.status.code(), b.status.code());
    let passed = identical && codes == (Some(0), Some(0));
    report(
        11,
        "verify determinism",
        passed,
        &[
            format!(
                "reports byte-identical: {identical} ({} bytes)",
                a.stdout.len()
            ),
            format!("exit codes {codes:?}"),
        ],
    );
    assert!(passed);
}
