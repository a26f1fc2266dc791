//! Multicast phase rotation, approximation-bound constants and Monte Carlo
//! checks of the tail bounds behind the randomization guarantee.

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::forms::{build_forms, constraint_usage, eval_theta, vector_usage, ProblemForms};
use crate::linalg::{complex_normal_vec, inner, quad, CMat, CVec, C64};
use crate::network::{sample_channels, ChannelSet, NetworkKind, ValidatedConfig};
use crate::par::{chunks, derive_seed, item_rng, Exec};
use crate::randomization::{randomize_r2_with, GaussianSampler};
use crate::sdr::{bisect_sdr, SdrSolution, Variant, DEFAULT_TOL_ABS, DEFAULT_TOL_REL};

/// Random `w2` draws per rotation-identity check.
pub const ROTATION_SAMPLES: usize = 100;

/// `e` with `e_l = exp(2i arg f_l)`; for MIMO relays, `e (x) 1`.
pub fn phase_vector(f: &CVec, kind: NetworkKind) -> Result<CVec> {
    if f.iter().any(|x| x.norm() == 0.0) {
        return Err(Error::Precondition("phase of a zero channel entry is undefined".into()));
    }
    let e = f.map(|x| C64::from_polar(1.0, 2.0 * x.arg()));
    Ok(match kind {
        NetworkKind::Distributed => e,
        NetworkKind::Mimo => {
            let l = f.len();
            CVec::from_fn(l * l, |i, _| e[i / l])
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationCheck {
    pub e: Vec<[f64; 2]>,
    /// Largest relative residual over all barred/unbarred identities.
    pub max_residual: f64,
    pub identities_checked: usize,
    pub r1_value: Option<f64>,
    pub r2_value: Option<f64>,
    /// `|opt(R2) - opt(R1)| / opt(R1)`.
    pub relative_gap: Option<f64>,
    pub omega: Option<f64>,
    pub passed: bool,
}

fn is_multicast(forms: &ProblemForms) -> bool {
    forms.users.iter().all(|u| u.group == 0)
}

fn rel_residual(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Checks `w2^H Xbar w2 = wbar^H X wbar` with `wbar = w2 (.) conj(e)` for
/// every pair `(A, Abar)`, `(C, Cbar)` and `(R_j, Rbar_j)`.
pub fn verify_rotation_identities(forms: &ProblemForms, e: &CVec, w2: &CVec, tol: f64) -> Result<RotationCheck> {
    if !is_multicast(forms) {
        return Err(Error::Precondition("rotation identities need a single multicast group".into()));
    }
    if e.len() != forms.dim || w2.len() != forms.dim {
        return Err(Error::DimensionMismatch(format!("vectors must have length {}", forms.dim)));
    }
    let w_bar = w2.zip_map(e, |w, p| w * p.conj());
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let pairs = forms
        .users
        .iter()
        .flat_map(|u| [(&u.a, &u.a_bar), (&u.c, &u.c_bar)])
        .chain(forms.constraints.iter().map(|c| (&c.r, &c.r_bar)));
    for (x, x_bar) in pairs {
        worst = worst.max(rel_residual(quad(x_bar, w2), quad(x, &w_bar)));
        count += 1;
    }
    Ok(RotationCheck {
        e: e.iter().map(|x| [x.re, x.im]).collect(),
        max_residual: worst,
        identities_checked: count,
        r1_value: None,
        r2_value: None,
        relative_gap: None,
        omega: None,
        passed: worst <= tol,
    })
}

/// Averages `(W1, W2)` with its rotated swap `(T(W2), T^-1(W1))`, where
/// `T(W) = diag(conj e) W diag(e)`. Every user ratio and constraint usage is
/// unchanged and `A . W1 = Abar . W2` afterwards, so `omega = 1/2`.
pub fn symmetrize_multicast(e: &CVec, w1: &CMat, w2: &CMat) -> (CMat, CMat) {
    let n = e.len();
    let rot = |w: &CMat, fwd: bool| {
        CMat::from_fn(n, n, |i, j| {
            let (a, b) = if fwd { (e[i].conj(), e[j]) } else { (e[i], e[j].conj()) };
            a * w[(i, j)] * b
        })
    };
    let s1 = (w1 + rot(w2, true)).scale(0.5);
    let s2 = (w2 + rot(w1, false)).scale(0.5);
    (s1, s2)
}

/// Solves both relaxations of a multicast instance and checks that their
/// optima coincide to `tol` relative, along with the rotation identities on
/// [`ROTATION_SAMPLES`] random vectors.
pub fn multicast_equivalence(cfg: &ValidatedConfig, ch: &ChannelSet, tol: f64) -> Result<RotationCheck> {
    if cfg.groups() != 1 {
        return Err(Error::Precondition(format!("multicast needs G = 1, got {}", cfg.groups())));
    }
    let forms = build_forms(cfg, ch)?;
    let e = phase_vector(&ch.f[0], cfg.kind)?;
    let mut rng = item_rng(0x5eed, 0);
    let mut check = verify_rotation_identities(&forms, &e, &complex_normal_vec(&mut rng, forms.dim), f64::INFINITY)?;
    for _ in 1..ROTATION_SAMPLES {
        let c = verify_rotation_identities(&forms, &e, &complex_normal_vec(&mut rng, forms.dim), f64::INFINITY)?;
        check.max_residual = check.max_residual.max(c.max_residual);
        check.identities_checked += c.identities_checked;
    }
    let r1 = bisect_sdr(&forms, Variant::R1, DEFAULT_TOL_REL, DEFAULT_TOL_ABS)?;
    let r2 = bisect_sdr(&forms, Variant::R2, DEFAULT_TOL_REL, DEFAULT_TOL_ABS)?;
    let gap = (r2.value - r1.value).abs() / r1.value;
    check.r1_value = Some(r1.value);
    check.r2_value = Some(r2.value);
    check.relative_gap = Some(gap);
    let (s1, s2) = symmetrize_multicast(&e, &r2.w1, &r2.w2_or_zero());
    check.omega = omega_of(&forms, &s1, &s2).ok();
    check.passed = gap <= tol && check.max_residual <= 1e-10;
    Ok(check)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    pub m: usize,
    pub j: usize,
    pub omega: f64,
    pub rho_a: f64,
    pub rho_b: f64,
    pub v: f64,
    pub c: f64,
}

/// `c = max{omega / (7 sqrt M), 1 / (8M)} / (2 ln(16 J) + 1)`, natural log.
pub fn bound_constant(m: usize, j: usize, omega: f64) -> Result<BoundConstants> {
    if m == 0 || j == 0 {
        return Err(Error::Precondition("M and J must be at least 1".into()));
    }
    if !(omega > 0.0 && omega <= 0.5) {
        return Err(Error::Precondition(format!("omega must lie in (0, 1/2], got {omega}")));
    }
    let mf = m as f64;
    let v = 2.0 * (16.0 * j as f64).ln();
    let rho_a = omega / (7.0 * mf.sqrt());
    let rho_b = 1.0 / (8.0 * mf);
    Ok(BoundConstants { m, j, omega, rho_a, rho_b, v, c: rho_a.max(rho_b) / (v + 1.0) })
}

/// User count above which the `omega / (7 sqrt M)` branch of the constant
/// exceeds the `1 / (8M)` branch.
pub fn crossover_users(omega: f64) -> f64 {
    (7.0 / (8.0 * omega)).powi(2)
}

/// `min_u min{A.W1, Abar.W2} / (A.W1 + Abar.W2)`.
pub fn omega_of(forms: &ProblemForms, w1: &CMat, w2: &CMat) -> Result<f64> {
    let mut omega = f64::INFINITY;
    for (n, u) in forms.users.iter().enumerate() {
        let (p1, p2) = (inner(&u.a, w1), inner(&u.a_bar, w2));
        if p1 + p2 <= 0.0 {
            return Err(Error::Precondition(format!("user {n} receives no desired power")));
        }
        omega = omega.min(p1.max(0.0).min(p2.max(0.0)) / (p1 + p2));
    }
    Ok(omega)
}

/// Binomial standard error of a probability `p` estimated from `n` trials.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRatioEstimate {
    pub empirical: f64,
    /// `4 rho / (1 - 2 rho)`, present when `rho < 1/2`.
    pub bound_a: Option<f64>,
    /// `(4 rho / (omega - 2 rho))^2`, present when `rho < omega / 2`.
    pub bound_b: Option<f64>,
    pub omega: f64,
    pub rho: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailPowerEstimate {
    pub empirical: f64,
    /// `2 exp(-v / 2)`.
    pub bound: f64,
    pub v: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Counts successes of `event` over `trials` draws, chunk by chunk.
fn count_events<F>(trials: usize, seed: u64, exec: Exec, event: F) -> u64
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> bool + Sync + Send,
{
    let sizes = chunks(trials);
    exec.map(sizes.len(), |k| {
        let mut rng = item_rng(seed, k as u64);
        (0..sizes[k]).filter(|_| event(&mut rng)).count() as u64
    })
    .into_iter()
    .sum()
}

fn draw_pair<R: Rng + ?Sized>(s1: &GaussianSampler, s2: &GaussianSampler, rng: &mut R) -> (CVec, CVec) {
    let xi = s1.sample(rng);
    let eta = s2.sample(rng);
    (xi, eta)
}

/// Estimates `Pr(ratio(xi, eta) <= rho ratio(W1, W2))` for
/// `xi ~ CN(0, W1)`, `eta ~ CN(0, W2)`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_tail_ratio(
    a: &CMat,
    a_bar: &CMat,
    c: &CMat,
    c_bar: &CMat,
    w1: &CMat,
    w2: &CMat,
    rho: f64,
    trials: usize,
    seed: u64,
) -> Result<TailRatioEstimate> {
    empirical_tail_ratio_with(a, a_bar, c, c_bar, w1, w2, rho, trials, seed, Exec::default())
}

#[allow(clippy::too_many_arguments)]
pub fn empirical_tail_ratio_with(
    a: &CMat,
    a_bar: &CMat,
    c: &CMat,
    c_bar: &CMat,
    w1: &CMat,
    w2: &CMat,
    rho: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<TailRatioEstimate> {
    let (p1, p2) = (inner(a, w1), inner(a_bar, w2));
    if !(p1 > 0.0 && p2 > 0.0) {
        return Err(Error::Precondition("both desired-signal terms must be positive".into()));
    }
    let omega = p1.min(p2) / (p1 + p2);
    let bound_a = (rho < 0.5).then(|| 4.0 * rho / (1.0 - 2.0 * rho));
    let bound_b = (rho < omega / 2.0).then(|| (4.0 * rho / (omega - 2.0 * rho)).powi(2));
    if rho < 0.0 || (bound_a.is_none() && bound_b.is_none()) {
        return Err(Error::Precondition(format!("rho = {rho} is outside every bound's range")));
    }
    if trials == 0 {
        return Err(Error::Precondition("trials must be positive".into()));
    }
    let target = rho * (p1 + p2) / (inner(c, w1) + inner(c_bar, w2) + 1.0);
    let (s1, s2) = (GaussianSampler::new(w1), GaussianSampler::new(w2));
    let hits = count_events(trials, seed, exec, |rng| {
        let (xi, eta) = draw_pair(&s1, &s2, rng);
        (quad(a, &xi) + quad(a_bar, &eta)) / (quad(c, &xi) + quad(c_bar, &eta) + 1.0) <= target
    });
    Ok(TailRatioEstimate { empirical: hits as f64 / trials as f64, bound_a, bound_b, omega, rho, trials, seed })
}

/// Estimates `Pr(xi^H D xi + eta^H Dbar eta >= v (D.W1 + Dbar.W2))`.
pub fn empirical_tail_power(d: &CMat, d_bar: &CMat, w1: &CMat, w2: &CMat, v: f64, trials: usize, seed: u64) -> Result<TailPowerEstimate> {
    empirical_tail_power_with(d, d_bar, w1, w2, v, trials, seed, Exec::default())
}

#[allow(clippy::too_many_arguments)]
pub fn empirical_tail_power_with(
    d: &CMat,
    d_bar: &CMat,
    w1: &CMat,
    w2: &CMat,
    v: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<TailPowerEstimate> {
    if !(v >= 2.0) {
        return Err(Error::Precondition(format!("v must be at least 2, got {v}")));
    }
    if trials == 0 {
        return Err(Error::Precondition("trials must be positive".into()));
    }
    let bound = 2.0 * (-v / 2.0).exp();
    let mean = inner(d, w1) + inner(d_bar, w2);
    if mean <= 0.0 {
        // the quadratic form vanishes almost surely
        return Ok(TailPowerEstimate { empirical: 0.0, bound, v, trials, seed });
    }
    let threshold = v * mean;
    let (s1, s2) = (GaussianSampler::new(w1), GaussianSampler::new(w2));
    let hits = count_events(trials, seed, exec, |rng| {
        let (xi, eta) = draw_pair(&s1, &s2, rng);
        quad(d, &xi) + quad(d_bar, &eta) >= threshold
    });
    Ok(TailPowerEstimate { empirical: hits as f64 / trials as f64, bound, v, trials, seed })
}

/// Estimates the probability that one Gaussian draw reaches `rho` times the
/// relaxation value while using at most `v` times every optimal usage.
pub fn joint_success_probability(forms: &ProblemForms, sol: &SdrSolution, rho: f64, v: f64, trials: usize, seed: u64) -> Result<f64> {
    joint_success_probability_with(forms, sol, rho, v, trials, seed, Exec::default())
}

pub fn joint_success_probability_with(
    forms: &ProblemForms,
    sol: &SdrSolution,
    rho: f64,
    v: f64,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Precondition("trials must be positive".into()));
    }
    let w2 = sol.w2_or_zero();
    let theta_star = eval_theta(forms, &sol.w1, &w2);
    let caps: Vec<f64> = constraint_usage(forms, &sol.w1, &w2).into_iter().map(|u| v * u).collect();
    let (s1, s2) = (GaussianSampler::new(&sol.w1), GaussianSampler::new(&w2));
    let hits = count_events(trials, seed, exec, |rng| {
        let (xi, eta) = draw_pair(&s1, &s2, rng);
        let usage_ok = vector_usage(forms, &xi, &eta).iter().zip(&caps).all(|(u, cap)| u <= cap);
        usage_ok && eval_theta(forms, &crate::linalg::outer(&xi), &crate::linalg::outer(&eta)) >= rho * theta_star
    });
    Ok(hits as f64 / trials as f64)
}

/// One pass/fail line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub empirical: f64,
    pub bound: f64,
    /// `"<="` when `empirical` must not exceed `bound + slack`, `">="` when
    /// it must not fall below `bound - slack`.
    pub relation: &'static str,
    pub slack: f64,
    /// Distance to failure; nonnegative iff the check passed.
    pub margin: f64,
    pub trials: usize,
    pub seed: u64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, empirical: f64, bound: f64, slack: f64, trials: usize, seed: u64) -> Self {
        let margin = bound + slack - empirical;
        Check { name: name.into(), empirical, bound, relation: "<=", slack, margin, trials, seed, passed: margin >= 0.0 }
    }

    pub fn at_least(name: impl Into<String>, empirical: f64, bound: f64, slack: f64, trials: usize, seed: u64) -> Self {
        let margin = empirical - (bound - slack);
        Check { name: name.into(), empirical, bound, relation: ">=", slack, margin, trials, seed, passed: margin >= 0.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: usize,
    pub r1_value: f64,
    pub r2_value: f64,
    pub constants: Option<BoundConstants>,
    pub rotation: Option<RotationCheck>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).unwrap_or_else(|e| json!({ "error": e.to_string() }))
    }
}

/// Runs every analysis check on one channel realization of `cfg`.
pub fn verify_scenario(cfg: &ValidatedConfig, seed: u64, trials: usize, tol_rel: f64) -> Result<VerifyReport> {
    let exec = Exec::default();
    let ch = sample_channels(cfg, seed);
    let forms = build_forms(cfg, &ch)?;
    let r1 = bisect_sdr(&forms, Variant::R1, tol_rel, DEFAULT_TOL_ABS)?;
    let r2 = bisect_sdr(&forms, Variant::R2, tol_rel, DEFAULT_TOL_ABS)?;
    let w2 = r2.w2_or_zero();
    let mut checks = vec![Check::at_least(
        "relaxation_ordering",
        r2.value,
        r1.value,
        2.0 * (tol_rel * r1.value + DEFAULT_TOL_ABS),
        1,
        seed,
    )];

    let rotation = if cfg.groups() == 1 {
        let rot = multicast_equivalence(cfg, &ch, 1e-3)?;
        checks.push(Check::at_most("multicast_equivalence_gap", rot.relative_gap.unwrap_or(f64::NAN), 1e-3, 0.0, 1, seed));
        checks.push(Check::at_most("rotation_identity_residual", rot.max_residual, 1e-10, 0.0, ROTATION_SAMPLES, seed));
        Some(rot)
    } else {
        None
    };

    let m = forms.user_count();
    let j = forms.constraint_count();
    let omega = omega_of(&forms, &r2.w1, &w2).ok().filter(|&w| w > 0.0);
    let constants = omega.map(|w| bound_constant(m, j, w)).transpose()?;
    let v = 2.0 * (16.0 * j as f64).ln();
    let mut child = 0u64;
    let mut next_seed = || {
        child += 1;
        derive_seed(seed, &[child])
    };

    if let Some(k) = constants {
        for (n, u) in forms.users.iter().enumerate() {
            for (label, rho) in [("rho_a", k.rho_a), ("rho_b", k.rho_b)] {
                let s = next_seed();
                let est = empirical_tail_ratio_with(&u.a, &u.a_bar, &u.c, &u.c_bar, &r2.w1, &w2, rho, trials, s, exec)?;
                for (which, bound) in [("a", est.bound_a), ("b", est.bound_b)] {
                    if let Some(b) = bound {
                        let slack = 3.0 * binomial_se(b, trials);
                        checks.push(Check::at_most(format!("tail_ratio_{which}_user{n}_{label}"), est.empirical, b, slack, trials, s));
                    }
                }
            }
        }
        for rho in [k.rho_a, k.rho_b] {
            let s = next_seed();
            let p = joint_success_probability_with(&forms, &r2, rho, v, trials, s, exec)?;
            checks.push(Check::at_least(format!("joint_success_rho_{rho:.3e}"), p, 0.125, 3.0 * binomial_se(0.125, trials), trials, s));
        }
        let s = next_seed();
        let rep = randomize_r2_with(&forms, &r2, crate::randomization::DEFAULT_TRIALS, s, exec)?;
        checks.push(Check::at_least("randomized_vs_bound_constant", rep.best.theta, k.c * r2.value, 0.0, rep.trials, s));
    }
    for (jn, c) in forms.constraints.iter().enumerate() {
        let s = next_seed();
        let est = empirical_tail_power_with(&c.r, &c.r_bar, &r2.w1, &w2, v, trials, s, exec)?;
        let slack = 3.0 * binomial_se(est.bound, trials);
        checks.push(Check::at_most(format!("tail_power_constraint{jn}"), est.empirical, est.bound, slack, trials, s));
    }

    let passed = checks.iter().all(|c| c.passed) && rotation.as_ref().is_none_or(|r| r.passed);
    Ok(VerifyReport { seed, trials, r1_value: r1.value, r2_value: r2.value, constants, rotation, checks, passed })
}
