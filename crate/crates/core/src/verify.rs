//! Named suites of executable identity and statistical checks.
//!
//! Every check is deterministic given the suite seed: each Monte Carlo path or
//! draw owns a stream derived from `(seed, group, index)`, and reductions run in
//! index order. Statistical checks use `|z| ≤ 4`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{pixel_basis, Basis, BasisSet, Conditioning};
use crate::denoiser::{analytic_dirac_denoiser, ConstantOracle, Denoiser};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::process::{DiffusionProcess, DiracDataset};
use crate::rng::{randn, Rng};
use crate::sampler::{
    euler_step, make_time_grid, sample_euler, sample_reference, sample_reference_on, GridScheme,
};
use crate::schedule::{make_ddpm_schedule, make_vp_schedule, sde_coefficients, Schedule};

pub const SUITES: [&str; 8] = [
    "coefficients",
    "moments",
    "score",
    "cancellation",
    "marginal",
    "optimality",
    "sampler",
    "edm-reduction",
];

pub const Z_BOUND: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// `None` when the measurement is not finite or the check errored.
    pub measured: Option<f64>,
    pub threshold: f64,
    /// Lower end for range checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl Check {
    fn at_most(name: impl Into<String>, measured: f64, threshold: f64, seed: u64) -> Self {
        Self {
            name: name.into(),
            passed: measured <= threshold,
            measured: finite(measured),
            threshold,
            lower: None,
            seed,
            detail: None,
        }
    }

    fn at_least(name: impl Into<String>, measured: f64, threshold: f64, seed: u64) -> Self {
        Self {
            name: name.into(),
            passed: measured > threshold,
            measured: finite(measured),
            threshold,
            lower: None,
            seed,
            detail: Some("passes when measured > threshold".into()),
        }
    }

    fn in_range(name: impl Into<String>, measured: f64, lo: f64, hi: f64, seed: u64) -> Self {
        Self {
            name: name.into(),
            passed: (lo..=hi).contains(&measured),
            measured: finite(measured),
            threshold: hi,
            lower: Some(lo),
            seed,
            detail: None,
        }
    }

    fn flag(name: impl Into<String>, ok: bool, seed: u64) -> Self {
        Self::at_most(name, if ok { 0.0 } else { 1.0 }, 0.0, seed)
    }

    fn errored(name: impl Into<String>, err: &Error, seed: u64) -> Self {
        Self {
            name: name.into(),
            passed: false,
            measured: None,
            threshold: f64::NAN,
            lower: None,
            seed,
            detail: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64, checks: Vec<Check>) -> Self {
        Self {
            suite: suite.into(),
            seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type Group = fn(u64) -> Result<Vec<Check>>;

fn groups(suite: &str) -> Option<Vec<(&'static str, Group)>> {
    let g: Vec<(&'static str, Group)> = match suite {
        "coefficients" => vec![("coefficients/identities", coefficient_identities)],
        "moments" => vec![
            ("moments/noise", noise_moments),
            ("moments/residual-noise", residual_noise_moments),
            ("moments/forward", forward_moments),
            ("moments/sde", sde_moments),
            ("moments/sde-permutation", sde_permutation),
            ("moments/sde-deterministic", sde_deterministic_limit),
        ],
        "score" => vec![
            ("score/conditional", conditional_score_fd),
            ("score/mixture", mixture_score_fd),
            ("score/structure", score_structure),
        ],
        "cancellation" => vec![
            ("cancellation/conditional", cancellation_identity),
            ("cancellation/edm", cancellation_edm),
        ],
        "marginal" => vec![
            ("marginal/identity", marginal_identity),
            ("marginal/weights", marginal_weights),
        ],
        "optimality" => vec![("optimality/perturbations", optimality)],
        "sampler" => vec![
            ("sampler/grid", sampler_grid),
            ("sampler/closed-form", sampler_closed_form),
            ("sampler/convergence", sampler_convergence),
        ],
        "edm-reduction" => vec![
            ("edm-reduction/noise", edm_noise),
            ("edm-reduction/kernel", edm_kernel),
            ("edm-reduction/euler-step", edm_euler_step),
        ],
        _ => return None,
    };
    Some(g)
}

fn run_groups(list: &[(&'static str, Group)], seed: u64) -> Vec<Check> {
    let results: Vec<Vec<Check>> = list
        .par_iter()
        .map(|(name, g)| match g(seed) {
            Ok(checks) => checks,
            Err(e) => vec![Check::errored(*name, &e, seed)],
        })
        .collect();
    results.into_iter().flatten().collect()
}

/// Runs one suite, or every suite for `"all"`.
pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    if name == "all" {
        let all: Vec<(&'static str, Group)> = SUITES
            .iter()
            .flat_map(|s| groups(s).expect("listed suite exists"))
            .collect();
        return Ok(SuiteReport::new("all", seed, run_groups(&all, seed)));
    }
    let list = groups(name).ok_or_else(|| Error::UnknownSuite(name.into()))?;
    Ok(SuiteReport::new(name, seed, run_groups(&list, seed)))
}

// ---------------------------------------------------------------------------
// shared fixtures

fn default_vp() -> Schedule {
    make_vp_schedule(0.0001, 0.02, 100.0).expect("valid parameters")
}

fn default_ddpm() -> Schedule {
    make_ddpm_schedule(0.0001, 0.02, 100.0).expect("valid parameters")
}

/// `m` elements `e_{k mod d} + 0.4 ξ`; full rank for `m ≥ d` with overwhelming probability.
fn random_basis(d: usize, m: usize, rng: &mut Rng) -> Result<BasisSet> {
    let elements = (0..m)
        .map(|k| {
            let mut e = randn(&[d], rng).scale(0.4);
            e.data_mut()[k % d] += 1.0;
            e
        })
        .collect();
    BasisSet::fixed(elements)
}

fn fixed(p: &DiffusionProcess) -> &Basis {
    match p.basis() {
        BasisSet::Fixed(b) => b,
        BasisSet::Residual { .. } => panic!("fixture processes use fixed bases"),
    }
}

/// `Σ = Σ_m h_m h_mᵀ` by explicit outer products.
fn outer_sum(basis: &Basis) -> DMatrix<f64> {
    let d = basis.dim();
    let mut s = DMatrix::zeros(d, d);
    for m in 0..basis.len() {
        let h = basis.element(m);
        for i in 0..d {
            for j in 0..d {
                s[(i, j)] += h.data()[i] * h.data()[j];
            }
        }
    }
    s
}

fn sup_rel(a: &Field, b: &Field) -> f64 {
    a.max_abs_diff(b) / b.max_abs()
}

/// Points at least `sep` apart.
fn separated_points(y: usize, d: usize, sep: f64, rng: &mut Rng) -> Vec<Field> {
    let mut pts: Vec<Field> = Vec::with_capacity(y);
    while pts.len() < y {
        let c = randn(&[d], rng);
        if pts.iter().all(|p| (&c - p).norm_sq().sqrt() >= sep) {
            pts.push(c);
        }
    }
    pts
}

fn stream(group: u64, index: u64) -> u64 {
    (group << 40) | index
}

/// Draws `n` samples in parallel, sample `i` on its own stream.
fn draws<F>(seed: u64, group: u64, n: usize, f: F) -> Result<Vec<Field>>
where
    F: Fn(&mut Rng) -> Result<Field> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| f(&mut Rng::new(seed, stream(group, i as u64))))
        .collect()
}

struct SampleMoments {
    n: f64,
    mean: Vec<f64>,
    cov: DMatrix<f64>,
}

fn sample_moments(xs: &[Field]) -> SampleMoments {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x.data()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = DMatrix::zeros(d, d);
    for x in xs {
        let c: Vec<f64> = x.data().iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[(i, j)] /= n - 1.0;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    SampleMoments { n, mean, cov }
}

fn ratio(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Largest `|z|` over mean entries and over covariance entries, against exact
/// Gaussian moments. Covariance entries use the Gaussian sampling variance
/// `(C_ii C_jj + C_ij²)/n`.
fn moment_z(xs: &[Field], mean: &[f64], cov: &DMatrix<f64>) -> (f64, f64) {
    let s = sample_moments(xs);
    let d = mean.len();
    let mut zm = 0.0f64;
    let mut zc = 0.0f64;
    for i in 0..d {
        zm = zm.max(ratio(s.mean[i] - mean[i], (cov[(i, i)] / s.n).sqrt()).abs());
        for j in i..d {
            let var = (cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / s.n;
            zc = zc.max(ratio(s.cov[(i, j)] - cov[(i, j)], var.sqrt()).abs());
        }
    }
    (zm, zc)
}

fn two_sample_z(a: &[Field], b: &[Field], cov: &DMatrix<f64>) -> (f64, f64) {
    let (sa, sb) = (sample_moments(a), sample_moments(b));
    let d = sa.mean.len();
    let mut zm = 0.0f64;
    let mut zc = 0.0f64;
    for i in 0..d {
        let se = (cov[(i, i)] / sa.n + cov[(i, i)] / sb.n).sqrt();
        zm = zm.max(ratio(sa.mean[i] - sb.mean[i], se).abs());
        for j in i..d {
            let v = cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2);
            let se = (v / sa.n + v / sb.n).sqrt();
            zc = zc.max(ratio(sa.cov[(i, j)] - sb.cov[(i, j)], se).abs());
        }
    }
    (zm, zc)
}

// ---------------------------------------------------------------------------
// coefficients

/// RK4 integration of `dμ/dt = f μ + φ` and `dV/dt = 2 f V + g²` from
/// `μ(0) = x_0`, `V(0) = 0`, in the variable `u = √t`. The substitution turns
/// the `1/√t` growth of `σ'` near the origin into a smooth integrand.
fn integrate_moment_odes(
    p: &DiffusionProcess,
    x0: &Field,
    t_end: f64,
    steps: usize,
) -> Result<(Field, f64)> {
    let sched = p.schedule();
    let sum = fixed(p).sum().clone();
    let eta = p.eta();
    let horizon = sched.horizon();
    let rhs = |u: f64, mu: &Field, v: f64| -> Result<(Field, f64)> {
        if u == 0.0 {
            // 2u σ'(u²) → sqrt(dσ²/dt at 0) as u → 0.
            let s0 = sched.evaluate(0.0)?.s;
            let k = eta * s0 / (eta + 1.0) * sched.sigma_sq_rate(0.0)?.sqrt();
            return Ok((sum.scale(k), 0.0));
        }
        let t = (u * u).min(horizon);
        let c = sde_coefficients(sched, eta, &sum, t)?;
        let mut dmu = mu.scale(c.f);
        dmu += &c.phi;
        Ok((dmu.scale(2.0 * u), 2.0 * u * (2.0 * c.f * v + c.g * c.g)))
    };
    let u_end = t_end.sqrt();
    let h = u_end / steps as f64;
    let mut mu = x0.clone();
    let mut v = 0.0;
    for k in 0..steps {
        let u = k as f64 * h;
        let (a1, b1) = rhs(u, &mu, v)?;
        let (a2, b2) = rhs(u + 0.5 * h, &(&mu + &a1.scale(0.5 * h)), v + 0.5 * h * b1)?;
        let (a3, b3) = rhs(u + 0.5 * h, &(&mu + &a2.scale(0.5 * h)), v + 0.5 * h * b2)?;
        let (a4, b4) = rhs(u + h, &(&mu + &a3.scale(h)), v + h * b3)?;
        let mut incr = a1;
        incr.axpy(2.0, &a2);
        incr.axpy(2.0, &a3);
        incr += &a4;
        mu.axpy(h / 6.0, &incr);
        v += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
    }
    Ok((mu, v))
}

fn coefficient_identities(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed, stream(1, 0));
    let x0 = randn(&[3], &mut rng);
    let bases = [
        ("pixel", pixel_basis(&[3])),
        ("random", random_basis(3, 3, &mut rng)?),
    ];
    let mut checks = Vec::new();
    for (sname, sched) in [("vp", default_vp()), ("ddpm", default_ddpm())] {
        for eta in [0.0, 10.0] {
            for (bname, basis) in &bases {
                let p = DiffusionProcess::new(sched.clone(), basis.clone(), eta)?;
                let mut mean_err = 0.0f64;
                let mut var_err = 0.0f64;
                for t in [p.horizon() / 2.0, p.horizon()] {
                    let (mu, v) = integrate_moment_odes(&p, &x0, t, 10_000)?;
                    let exact = p.conditional_moments(&x0, t, None)?;
                    mean_err = mean_err.max(sup_rel(&mu, &exact.mean));
                    var_err = var_err.max((v - exact.cov_scale).abs() / exact.cov_scale);
                }
                let tag = format!("{sname} eta={eta} basis={bname}");
                checks.push(Check::at_most(
                    format!("mean ODE vs closed form, {tag}"),
                    mean_err,
                    1e-6,
                    seed,
                ));
                checks.push(Check::at_most(
                    format!("variance ODE vs closed form, {tag}"),
                    var_err,
                    1e-6,
                    seed,
                ));
            }
        }
    }
    Ok(checks)
}

// ---------------------------------------------------------------------------
// moments

const DRAWS: usize = 100_000;
const PATHS: usize = 10_000;
const SDE_STEPS: usize = 512;

fn noise_moments(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed, stream(2, 0));
    let eta = 2.0;
    let p = DiffusionProcess::new(default_vp(), random_basis(3, 4, &mut rng)?, eta)?;
    let xs = draws(seed, 3, DRAWS, |r| p.sample_noise(None, r))?;
    let b = fixed(&p);
    let mean = b.sum().scale(eta / (eta + 1.0));
    let cov = outer_sum(b) / (eta + 1.0).powi(2);
    let (zm, zc) = moment_z(&xs, mean.data(), &cov);
    Ok(vec![
        Check::at_most("noise mean z, random basis eta=2", zm, Z_BOUND, seed),
        Check::at_most("noise covariance z, random basis eta=2", zc, Z_BOUND, seed),
    ])
}

fn residual_noise_moments(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed, stream(4, 0));
    let clean = randn(&[3], &mut rng);
    let degraded = randn(&[3], &mut rng);
    let p = DiffusionProcess::new(default_vp(), BasisSet::residual(&[3]), 10.0)?;
    let cond = Conditioning::new(&clean, &degraded);
    let xs = draws(seed, 5, DRAWS, |r| p.sample_noise(Some(cond), r))?;
    let h = &degraded - &clean;
    let mean = h.scale(10.0 / 11.0);
    let hv = DVector::from_column_slice(h.data());
    let cov = &hv * hv.transpose() / 121.0;
    let (zm, zc) = moment_z(&xs, mean.data(), &cov);
    Ok(vec![
        Check::at_most("residual noise mean z, eta=10", zm, Z_BOUND, seed),
        Check::at_most("residual noise variance z, eta=10", zc, Z_BOUND, seed),
    ])
}

fn forward_moments(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed, stream(6, 0));
    let p = DiffusionProcess::new(default_vp(), random_basis(3, 3, &mut rng)?, 10.0)?;
    let x0 = randn(&[3], &mut rng);
    let t = p.horizon() / 2.0;
    let xs = draws(seed, 7, DRAWS, |r| p.forward_sample(&x0, t, None, r))?;
    let m = p.conditional_moments(&x0, t, None)?;
    let cov = outer_sum(fixed(&p)) * m.cov_scale;
    let (zm, zc) = moment_z(&xs, m.mean.data(), &cov);
    Ok(vec![
        Check::at_most("forward sample mean z at T/2", zm, Z_BOUND, seed),
        Check::at_most("forward sample covariance z at T/2", zc, Z_BOUND, seed),
    ])
}

fn sde_fixture(seed: u64, eta: f64) -> Result<(DiffusionProcess, Field)> {
    let mut rng = Rng::new(seed, stream(8, 0));
    let basis = random_basis(4, 2, &mut rng)?;
    let x0 = randn(&[4], &mut rng);
    Ok((DiffusionProcess::new(default_vp(), basis, eta)?, x0))
}

fn sde_moments(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (k, eta) in [0.0, 10.0].into_iter().enumerate() {
        let (p, x0) = sde_fixture(seed, eta)?;
        let xs = draws(seed, 9 + k as u64, PATHS, |r| {
            p.simulate_sde(&x0, SDE_STEPS, None, r)
        })?;
        let m = p.conditional_moments(&x0, p.horizon(), None)?;
        let cov = outer_sum(fixed(&p)) * m.cov_scale;
        let (zm, zc) = moment_z(&xs, m.mean.data(), &cov);
        checks.push(Check::at_most(
            format!("SDE terminal mean z, d=4 M=2 eta={eta}"),
            zm,
            Z_BOUND,
            seed,
        ));
        checks.push(Check::at_most(
            format!("SDE terminal covariance z, d=4 M=2 eta={eta}"),
            zc,
            Z_BOUND,
            seed,
        ));
    }
    Ok(checks)
}

fn sde_permutation(seed: u64) -> Result<Vec<Check>> {
    let (p, x0) = sde_fixture(seed, 10.0)?;
    let b = fixed(&p);
    let reversed: Vec<Field> = (0..b.len())
        .rev()
        .map(|m| b.element(m).into_owned())
        .collect();
    let q = DiffusionProcess::new(default_vp(), BasisSet::fixed(reversed)?, 10.0)?;
    let a = draws(seed, 11, PATHS, |r| p.simulate_sde(&x0, SDE_STEPS, None, r))?;
    let c = draws(seed, 12, PATHS, |r| q.simulate_sde(&x0, SDE_STEPS, None, r))?;
    let cov = outer_sum(b) * p.conditional_moments(&x0, p.horizon(), None)?.cov_scale;
    let (zm, zc) = two_sample_z(&a, &c, &cov);
    Ok(vec![
        Check::at_most("basis order: two-sample mean z", zm, Z_BOUND, seed),
        Check::at_most("basis order: two-sample covariance z", zc, Z_BOUND, seed),
    ])
}

fn sde_deterministic_limit(seed: u64) -> Result<Vec<Check>> {
    let (p, x0) = sde_fixture(seed, 1e9)?;
    let end = p.simulate_sde(&x0, 4096, None, &mut Rng::new(seed, stream(13, 0)))?;
    let m = p.conditional_moments(&x0, p.horizon(), None)?;
    Ok(vec![Check::at_most(
        "eta=1e9 SDE endpoint vs kernel mean (relative)",
        sup_rel(&end, &m.mean),
        1e-3,
        seed,
    )])
}

// ---------------------------------------------------------------------------
// scores

/// `log N(x; mean, C)` with `C⁻¹` and `det C` from an LU factorization.
fn gaussian_log_density(x: &Field, mean: &Field, c: &DMatrix<f64>) -> Option<f64> {
    let lu = c.clone().lu();
    let inv = lu.try_inverse()?;
    let det = c.clone().lu().determinant();
    let r = DVector::from_column_slice((x - mean).data());
    let q = (r.transpose() * inv * &r)[(0, 0)];
    let d = x.len() as f64;
    Some(-0.5 * q - 0.5 * (det.ln() + d * (2.0 * std::f64::consts::PI).ln()))
}

fn fd_gradient(x: &Field, f: impl Fn(&Field) -> Option<f64>) -> Option<Field> {
    let mut g = Field::zeros(x.shape());
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x.data()[i].abs());
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        g.data_mut()[i] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Some(g)
}

const PROBES: usize = 50;

fn conditional_score_fd(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed, stream(14, 0));
    let p = DiffusionProcess::new(default_vp(), random_basis(3, 4, &mut rng)?, 1.5)?;
    let sigma = outer_sum(fixed(&p));
    let mut worst = 0.0f64;
    for _ in 0..PROBES {
        let t = rng.uniform_in(0.1, 1.0) * p.horizon();
        let x0 = randn(&[3], &mut rng);
        let x = &x0 + &randn(&[3], &mut rng);
        let m = p.conditional_moments(&x0, t, None)?;
        let c = &sigma * m.cov_scale;
        let analytic = p.conditional_score(&x0, t, &x, None)?;
        let fd = fd_gradient(&x, |y| gaussian_log_density(y, &m.mean, &c)).ok_or(
            Error::SingularCovariance {
                condition: f64::INFINITY,
            },
        )?;
        worst = worst.max(sup_rel(&fd, &analytic));
    }
    Ok(vec![Check::at_most(
        "conditional score vs finite differences of the Gaussian log-density",
        worst,
        1e-5,
        seed,
    )])
}

fn mixture_fixture(
    seed: u64,
    group: u64,
    d: usize,
    eta: f64,
) -> Result<(DiffusionProcess, DiracDataset)> {
    let mut rng = Rng::new(seed, stream(group, 0));
    let basis = random_basis(d, d, &mut rng)?;
    let points = separated_points(3, d, 1.0, &mut rng);
    Ok((
        DiffusionProcess::new(default_vp(), basis, eta)?,
        DiracDataset::new(points)?,
    ))
}

/// `log Σ_i (1/Y) N(x; mean_i, C)` summed directly.
fn mixture_log_density(p: &DiffusionProcess, ds: &DiracDataset, t: f64, x: &Field) -> Option<f64> {
    let sigma = outer_sum(fixed(p));
    let total: f64 = ds
        .points()
        .iter()
        .map(|y| {
            let m = p.conditional_moments(y, t, None).ok()?;
            Some(gaussian_log_density(x, &m.mean, &(&sigma * m.cov_scale))?.exp())
        })
        .sum::<Option<f64>>()?;
    Some((total / ds.len() as f64).ln())
}

fn mixture_score_fd(seed: u64) -> Result<Vec<Check>> {
    let (p, ds) = mixture_fixture(seed, 15, 2, 0.8)?;
    let mut rng = Rng::new(seed, stream(15, 1));
    let mut worst = 0.0f64;
    for _ in 0..PROBES {
        let t = rng.uniform_in(0.1, 1.0) * p.horizon();
        let y = ds.point(rng.index(ds.len()));
        let x = y + &randn(&[2], &mut rng).scale(0.5);
        let analytic = p.marginal_score_dirac(&ds, t, &x)?;
        let fd = fd_gradient(&x, |z| mixture_log_density(&p, &ds, t, z)).ok_or(
            Error::SingularCovariance {
                condition: f64::INFINITY,
            },
        )?;
        worst = worst.max(sup_rel(&fd, &analytic));
    }
    Ok(vec![Check::at_most(
        "mixture score vs finite differences of the 3-point mixture log-density",
        worst,
        1e-5,
        seed,
    )])
}

fn score_structure(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed, stream(16, 0));
    let p = DiffusionProcess::new(default_vp(), random_basis(3, 3, &mut rng)?, 1.0)?;
    let x0 = randn(&[3], &mut rng);
    let t = 0.3 * p.horizon();
    let m = p.conditional_moments(&x0, t, None)?;
    let at_mean = p.conditional_score(&x0, t, &m.mean, None)?.max_abs();
    let a = Field::zeros(&[2]);
    let b = Field::from_vec(vec![1.0, 2.0]);
    let r = DiffusionProcess::new(default_vp(), BasisSet::residual(&[2]), 0.0)?;
    let singular = matches!(
        r.conditional_score(&a, t, &b, Some(Conditioning::new(&a, &b))),
        Err(Error::SingularCovariance { .. })
    );
    Ok(vec![
        Check::at_most("conditional score at the kernel mean", at_mean, 0.0, seed),
        Check::flag(
            "rank-1 covariance in 2-D is reported singular",
            singular,
            seed,
        ),
    ])
}

// ---------------------------------------------------------------------------
// cancellation and marginal identities

const IDENTITY_DRAWS: usize = 100;

fn cancellation_identity(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for d in [2usize, 3, 4] {
        let mut rng = Rng::new(seed, stream(17, d as u64));
        let basis = random_basis(d, d, &mut rng)?;
        let procs =
            [0.0, 1.0, 10.0].map(|eta| DiffusionProcess::new(default_vp(), basis.clone(), eta));
        let mut worst = 0.0f64;
        for k in 0..IDENTITY_DRAWS {
            let p = procs[k % 3]
                .as_ref()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let t = rng.uniform_in(0.01, 1.0) * p.horizon();
            let x0 = randn(&[d], &mut rng);
            let x = x0.zip_map(&randn(&[d], &mut rng), |a, b| a + 0.5 * b);
            let full = p.pfode_rhs_conditional(&x0, t, &x, None)?;
            let short = p.pfode_rhs(&ConstantOracle::new(x0.clone()), t, &x)?;
            worst = worst.max(full.max_abs_diff(&short));
        }
        checks.push(Check::at_most(
            format!("conditional flow assembly vs simplified rule with D = x0, d={d}"),
            worst,
            1e-10,
            seed,
        ));
    }
    Ok(checks)
}

/// Reference probability-flow field in the original additive-Gaussian form
/// `(ṡ/s + σ̇/σ) x − (σ̇ s/σ) D(x/s; t)`, coded entry by entry.
fn edm_rhs(sched: &Schedule, den: &dyn Denoiser, t: f64, x: &Field) -> Result<Field> {
    let v = sched.evaluate(t)?;
    let scaled = x.map(|xi| xi / v.s);
    let d = den.denoise(&scaled, t)?;
    let data = x
        .data()
        .iter()
        .zip(d.data())
        .map(|(xi, di)| {
            (v.s_prime / v.s + v.sigma_prime / v.sigma) * xi - (v.sigma_prime * v.s / v.sigma) * di
        })
        .collect();
    Field::new(x.shape().to_vec(), data)
}

fn cancellation_edm(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed, stream(18, 0));
    let p = DiffusionProcess::new(default_vp(), pixel_basis(&[3]), 0.0)?;
    let mut worst = 0.0f64;
    for _ in 0..IDENTITY_DRAWS {
        let t = rng.uniform_in(0.01, 1.0) * p.horizon();
        let x0 = randn(&[3], &mut rng);
        let x = &x0 + &randn(&[3], &mut rng);
        let full = p.pfode_rhs_conditional(&x0, t, &x, None)?;
        let edm = edm_rhs(p.schedule(), &ConstantOracle::new(x0.clone()), t, &x)?;
        worst = worst.max(full.max_abs_diff(&edm));
    }
    Ok(vec![Check::at_most(
        "eta=0 pixel basis: conditional flow vs additive-Gaussian flow",
        worst,
        1e-10,
        seed,
    )])
}

fn marginal_identity(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (d, eta) in [(2usize, 0.0), (2, 2.0), (3, 1.0)] {
        let (p, ds) = mixture_fixture(seed, 19 + d as u64, d, eta)?;
        let den = analytic_dirac_denoiser(&ds, &p)?;
        let mut rng = Rng::new(seed, stream(19 + d as u64, 1));
        let mut worst = 0.0f64;
        for _ in 0..IDENTITY_DRAWS {
            let t = rng.uniform_in(0.01, 1.0) * p.horizon();
            let x = ds.point(rng.index(ds.len())) + &randn(&[d], &mut rng).scale(0.5);
            let full = p.pfode_rhs_marginal(&ds, t, &x)?;
            let short = p.pfode_rhs(&den, t, &x)?;
            worst = worst.max(full.max_abs_diff(&short));
        }
        checks.push(Check::at_most(
            format!("marginal flow assembly vs simplified rule with the optimal denoiser, d={d} eta={eta}"),
            worst,
            1e-10,
            seed,
        ));
    }
    Ok(checks)
}

/// Mixture weights with raw densities, no log-space shift.
fn naive_weights(p: &DiffusionProcess, ds: &DiracDataset, t: f64, x: &Field) -> Option<Vec<f64>> {
    let sigma = outer_sum(fixed(p));
    let dens: Vec<f64> = ds
        .points()
        .iter()
        .map(|y| {
            let m = p.conditional_moments(y, t, None).ok()?;
            Some(gaussian_log_density(x, &m.mean, &(&sigma * m.cov_scale))?.exp())
        })
        .collect::<Option<_>>()?;
    let z: f64 = dens.iter().sum();
    Some(dens.iter().map(|v| v / z).collect())
}

fn marginal_weights(seed: u64) -> Result<Vec<Check>> {
    let (p, ds) = mixture_fixture(seed, 23, 2, 1.0)?;
    let den = analytic_dirac_denoiser(&ds, &p)?;
    let mut rng = Rng::new(seed, stream(23, 1));
    let mut norm_err = 0.0f64;
    let mut min_w = f64::INFINITY;
    let mut naive_err = 0.0f64;
    for _ in 0..IDENTITY_DRAWS {
        let t = rng.uniform_in(0.5, 1.0) * p.horizon();
        let x = ds.point(rng.index(ds.len())) + &randn(&[2], &mut rng).scale(0.5);
        let w = den.weights(&x, t)?;
        norm_err = norm_err.max((w.iter().sum::<f64>() - 1.0).abs());
        min_w = min_w.min(w.iter().copied().fold(f64::INFINITY, f64::min));
        let naive = naive_weights(&p, &ds, t, &x).ok_or(Error::SingularCovariance {
            condition: f64::INFINITY,
        })?;
        let mut expected = Field::zeros(&[2]);
        for (wi, y) in naive.iter().zip(ds.points()) {
            expected.axpy(*wi, y);
        }
        naive_err = naive_err.max(den.denoise(&x, t)?.max_abs_diff(&expected));
    }
    // Single point: marginal and conditional scores coincide.
    let single = DiracDataset::new(vec![ds.point(0).clone()])?;
    let x = ds.point(1).clone();
    let t = 0.4 * p.horizon();
    let a = p.marginal_score_dirac(&single, t, &x)?;
    let b = p.conditional_score(ds.point(0), t, &x, None)?;
    // Nearest point as σ → 0, pixel basis so that nearness is Euclidean.
    let q = DiffusionProcess::new(default_vp(), pixel_basis(&[2]), 0.0)?;
    let nd = analytic_dirac_denoiser(&ds, &q)?;
    let mut nn_err = 0.0f64;
    for _ in 0..20 {
        let x = ds.point(rng.index(ds.len())) + &randn(&[2], &mut rng).scale(0.2);
        let nearest = ds
            .points()
            .iter()
            .min_by(|u, v| {
                (&x - u)
                    .norm_sq()
                    .partial_cmp(&(&x - v).norm_sq())
                    .expect("finite distances")
            })
            .expect("nonempty");
        nn_err = nn_err.max(nd.denoise(&x, q.start_time())?.max_abs_diff(nearest));
    }
    Ok(vec![
        Check::at_most("weights sum to one", norm_err, 1e-12, seed),
        Check::flag("weights are non-negative", min_w >= 0.0, seed),
        Check::at_most(
            "stabilized vs naive mixture weights",
            naive_err,
            1e-10,
            seed,
        ),
        Check::at_most(
            "single-point marginal score vs conditional score",
            sup_rel(&a, &b),
            1e-12,
            seed,
        ),
        Check::at_most(
            "optimal denoiser at T/1000 vs nearest point",
            nn_err,
            1e-9,
            seed,
        ),
    ])
}

// ---------------------------------------------------------------------------
// optimality

const OPT_SAMPLES: usize = 100_000;
const OPT_PERTURBATIONS: usize = 100;
const OPT_MAGNITUDE: f64 = 1e-2;

fn optimality(seed: u64) -> Result<Vec<Check>> {
    let (p, ds) = mixture_fixture(seed, 24, 2, 1.0)?;
    let den = analytic_dirac_denoiser(&ds, &p)?;
    // (x_t, x_0, D(x_t)) triples, each on its own stream.
    let samples: Vec<(Field, Field, Field)> = (0..OPT_SAMPLES)
        .into_par_iter()
        .map(|i| {
            let mut r = Rng::new(seed, stream(25, i as u64));
            let y = ds.point(r.index(ds.len()));
            let t = r.uniform_in(0.1, 1.0) * p.horizon();
            let x = p.forward_sample(y, t, None, &mut r)?;
            let d = den.denoise(&x, t)?;
            Ok((x, y.clone(), d))
        })
        .collect::<Result<_>>()?;
    // δ(x) = a + B x with ‖a‖ = ‖B‖_F = 1e-2.
    let mut rng = Rng::new(seed, stream(26, 0));
    let perturbations: Vec<(Field, Field)> = (0..OPT_PERTURBATIONS)
        .map(|_| {
            let a = randn(&[2], &mut rng);
            let b = randn(&[4], &mut rng);
            (
                a.scale(OPT_MAGNITUDE / a.norm_sq().sqrt()),
                b.scale(OPT_MAGNITUDE / b.norm_sq().sqrt()),
            )
        })
        .collect();
    let zs: Vec<f64> = perturbations
        .par_iter()
        .map(|(a, b)| {
            let n = samples.len() as f64;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for (x, y, d) in &samples {
                let (x, y, d) = (x.data(), y.data(), d.data());
                let dp = [
                    d[0] + a.data()[0] + b.data()[0] * x[0] + b.data()[1] * x[1],
                    d[1] + a.data()[1] + b.data()[2] * x[0] + b.data()[3] * x[1],
                ];
                let base = (d[0] - y[0]).powi(2) + (d[1] - y[1]).powi(2);
                let pert = (dp[0] - y[0]).powi(2) + (dp[1] - y[1]).powi(2);
                let diff = pert - base;
                sum += diff;
                sum_sq += diff * diff;
            }
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
            mean / (var / n).sqrt()
        })
        .collect();
    let worst = zs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(vec![Check::at_least(
        "smallest loss increase over 100 perturbations, in standard errors",
        worst,
        2.0,
        seed,
    )])
}

// ---------------------------------------------------------------------------
// sampler

fn sampler_grid(seed: u64) -> Result<Vec<Check>> {
    let g = make_time_grid(100.0, 5, GridScheme::Uniform)?;
    let expected = [100.0, 80.02, 60.04, 40.06, 20.08, 0.1];
    let err = g
        .times()
        .iter()
        .zip(expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(vec![Check::at_most(
        "5-step uniform grid knots",
        err,
        1e-12,
        seed,
    )])
}

/// Exact solution for a constant denoiser `c`:
/// `x(t) = s(t) [c + σ(t)/σ(T) (x_T/s(T) − c)]`.
fn constant_closed_form(sched: &Schedule, c: &Field, x_t: &Field, t: f64) -> Result<Field> {
    let end = sched.evaluate(sched.horizon())?;
    let v = sched.evaluate(t)?;
    let k = v.sigma / end.sigma;
    Ok(c.zip_map(x_t, |ci, xi| v.s * (ci + k * (xi / end.s - ci))))
}

fn sampler_closed_form(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng::new(seed, stream(27, 0));
    let mut checks = Vec::new();
    for (name, sched) in [("vp", default_vp()), ("ddpm", default_ddpm())] {
        let p = DiffusionProcess::new(sched.clone(), pixel_basis(&[3]), 0.0)?;
        let c = randn(&[3], &mut rng);
        let x_t = randn(&[3], &mut rng);
        let den = ConstantOracle::new(c.clone());
        let exact = constant_closed_form(&sched, &c, &x_t, p.start_time())?;
        let grid = make_time_grid(p.horizon(), 10_000, GridScheme::Uniform)?;
        let euler = sample_euler(&p, &den, &x_t, &grid)?;
        let rk = sample_reference(&p, &den, &x_t, 1000)?;
        checks.push(Check::at_most(
            format!("Euler, 10^4 steps, constant denoiser vs closed form ({name})"),
            euler.max_abs_diff(&exact),
            1e-4,
            seed,
        ));
        checks.push(Check::at_most(
            format!("RK4, 10^3 steps, constant denoiser vs closed form ({name})"),
            rk.max_abs_diff(&exact),
            1e-8,
            seed,
        ));
    }
    Ok(checks)
}

/// Steps of the reference solution used by convergence and round-trip checks.
pub const REFERENCE_STEPS: usize = 20_000;

fn sampler_convergence(seed: u64) -> Result<Vec<Check>> {
    let (p, ds) = mixture_fixture(seed, 28, 2, 0.0)?;
    let den = analytic_dirac_denoiser(&ds, &p)?;
    let x_t = p.forward_sample(
        ds.point(1),
        p.horizon(),
        None,
        &mut Rng::new(seed, stream(28, 1)),
    )?;
    let reference = sample_reference(&p, &den, &x_t, REFERENCE_STEPS)?;
    let again = sample_reference(&p, &den, &x_t, REFERENCE_STEPS)?;
    let err = |steps: usize| -> Result<f64> {
        let grid = make_time_grid(p.horizon(), steps, GridScheme::Uniform)?;
        Ok((&sample_euler(&p, &den, &x_t, &grid)? - &reference)
            .norm_sq()
            .sqrt())
    };
    let (e100, e1000) = (err(100)?, err(1000)?);
    let rk_grid = make_time_grid(p.horizon(), REFERENCE_STEPS, GridScheme::Quadratic)?;
    let same_grid = sample_reference_on(&p, &den, &x_t, &rk_grid)?;
    Ok(vec![
        Check::in_range(
            "Euler error ratio, 100 vs 1000 steps",
            e100 / e1000,
            5.0,
            20.0,
            seed,
        ),
        Check::at_most(
            "round trip: 1000-step Euler vs reference endpoint (relative)",
            e1000 / reference.norm_sq().sqrt(),
            1e-2,
            seed,
        ),
        Check::flag(
            "reference integrator is deterministic",
            again == reference && same_grid == reference,
            seed,
        ),
    ])
}

// ---------------------------------------------------------------------------
// EDM reduction

fn edm_noise(seed: u64) -> Result<Vec<Check>> {
    let d = 4;
    let p = DiffusionProcess::new(default_vp(), pixel_basis(&[d]), 0.0)?;
    let xs = draws(seed, 29, DRAWS, |r| p.sample_noise(None, r))?;
    let (zm, zc) = moment_z(&xs, &vec![0.0; d], &DMatrix::identity(d, d));
    // Third and fourth moments of each coordinate against N(0, 1):
    // Var(z³) = 15, Var(z⁴) = 105 − 9 = 96.
    let n = xs.len() as f64;
    let mut z_skew = 0.0f64;
    let mut z_kurt = 0.0f64;
    for i in 0..d {
        let m3 = xs.iter().map(|x| x.data()[i].powi(3)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| x.data()[i].powi(4)).sum::<f64>() / n;
        z_skew = z_skew.max((m3 / (15.0 / n).sqrt()).abs());
        z_kurt = z_kurt.max(((m4 - 3.0) / (96.0 / n).sqrt()).abs());
    }
    Ok(vec![
        Check::at_most("eta=0 pixel noise: mean z vs N(0, I)", zm, Z_BOUND, seed),
        Check::at_most(
            "eta=0 pixel noise: covariance z vs N(0, I)",
            zc,
            Z_BOUND,
            seed,
        ),
        Check::at_most("eta=0 pixel noise: third-moment z", z_skew, Z_BOUND, seed),
        Check::at_most("eta=0 pixel noise: fourth-moment z", z_kurt, Z_BOUND, seed),
    ])
}

fn edm_kernel(seed: u64) -> Result<Vec<Check>> {
    let d = 3;
    let p = DiffusionProcess::new(default_vp(), pixel_basis(&[d]), 0.0)?;
    let x0 = randn(&[d], &mut Rng::new(seed, stream(30, 0)));
    let t = p.horizon() / 2.0;
    let v = p.schedule().evaluate(t)?;
    let xs = draws(seed, 31, DRAWS, |r| p.forward_sample(&x0, t, None, r))?;
    let mean = x0.scale(v.s);
    let cov = DMatrix::identity(d, d) * (v.s * v.sigma).powi(2);
    let (zm, zc) = moment_z(&xs, mean.data(), &cov);
    Ok(vec![
        Check::at_most(
            "eta=0 pixel kernel: mean z vs N(s x0, s²σ² I)",
            zm,
            Z_BOUND,
            seed,
        ),
        Check::at_most(
            "eta=0 pixel kernel: covariance z vs N(s x0, s²σ² I)",
            zc,
            Z_BOUND,
            seed,
        ),
    ])
}

fn edm_euler_step(seed: u64) -> Result<Vec<Check>> {
    let (_, ds) = mixture_fixture(seed, 32, 2, 0.0)?;
    let p = DiffusionProcess::new(default_vp(), pixel_basis(&[2]), 0.0)?;
    let den = analytic_dirac_denoiser(&ds, &p)?;
    let mut rng = Rng::new(seed, stream(32, 1));
    let mut worst = 0.0f64;
    for steps in [5, 100] {
        let grid = make_time_grid(p.horizon(), steps, GridScheme::Uniform)?;
        let mut x = p.forward_sample(ds.point(0), p.horizon(), None, &mut rng)?;
        for w in grid.times().windows(2) {
            let ours = euler_step(&p, &den, &x, w[0], w[1])?;
            let rhs = edm_rhs(p.schedule(), &den, w[0], &x)?;
            let reference = x.zip_map(&rhs, |xi, ri| xi + (w[1] - w[0]) * ri);
            worst = worst.max(ours.max_abs_diff(&reference));
            x = ours;
        }
    }
    Ok(vec![Check::at_most(
        "eta=0 pixel basis: Euler step vs additive-Gaussian Euler step",
        worst,
        1e-12,
        seed,
    )])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite() {
        assert!(matches!(run_suite("nope", 1), Err(Error::UnknownSuite(_))));
    }

    #[test]
    fn check_constructors() {
        assert!(Check::at_most("a", 1.0, 1.0, 0).passed);
        assert!(!Check::at_most("a", f64::NAN, 1.0, 0).passed);
        assert!(!Check::at_least("a", 2.0, 2.0, 0).passed);
        assert!(Check::in_range("a", 5.0, 5.0, 20.0, 0).passed);
        assert!(!Check::flag("a", false, 0).passed);
    }

    #[test]
    fn moment_z_of_exact_samples() {
        let xs = vec![Field::from_vec(vec![1.0]), Field::from_vec(vec![-1.0])];
        let (zm, zc) = moment_z(&xs, &[0.0], &DMatrix::from_element(1, 1, 2.0));
        assert_eq!(zm, 0.0);
        assert_eq!(zc, 0.0);
    }

    #[test]
    fn coefficient_suite_passes() {
        let r = run_suite("coefficients", 3).unwrap();
        assert!(r.passed, "{}", r.to_json());
    }

    #[test]
    fn cancellation_suite_passes() {
        let r = run_suite("cancellation", 7).unwrap();
        assert!(r.passed, "{}", r.to_json());
    }
}
