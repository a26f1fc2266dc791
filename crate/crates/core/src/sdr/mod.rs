//! Semidefinite relaxations of the BF (rank-one) and BFA (two-variable)
//! design problems, solved by bisection on the common SINR level.
//!
//! Each bisection step is a feasibility question answered by a conic solve:
//! maximise the worst-user margin `min_u (A_u - level C_u) . W` over the
//! budget set. The level is feasible exactly when that margin reaches
//! `level`. Complex Hermitian variables are handled through the real
//! embedding of [`hermitian_to_real`].

mod ipm;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::forms::{constraint_usage, eval_theta, matrix_from_json, matrix_to_json, ProblemForms};
use crate::linalg::{eigh, hermitian_asymmetry, lambda_min, trace_re, CMat, CVec, C64};
use ipm::{Constraint, Problem, RMat, Settings};

/// Eigenvalue ratio below which an eigenvalue counts as zero.
pub const RANK_TOL: f64 = 1e-6;
/// Slack allowed on every level constraint of an accepted witness.
pub const FEASIBILITY_TOL: f64 = 1e-7;
pub const DEFAULT_TOL_REL: f64 = 1e-4;
pub const DEFAULT_TOL_ABS: f64 = 1e-9;
pub const MAX_BISECTIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Rank-one beamforming relaxation, one matrix variable.
    R1,
    /// Beamformed-Alamouti relaxation, two matrix variables.
    R2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdrStatus {
    Optimal,
    Infeasible,
    SolverFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrSolution {
    pub variant: Variant,
    pub w1: CMat,
    /// Present iff the variant is R2.
    pub w2: Option<CMat>,
    /// Worst-user SINR attained by `(w1, w2)`.
    pub value: f64,
    pub ranks: (usize, Option<usize>),
    /// Width of the final bracket above `value`.
    pub gap: f64,
    pub iterations: usize,
    pub status: SdrStatus,
    pub usage: Vec<f64>,
}

impl SdrSolution {
    pub fn w2_or_zero(&self) -> CMat {
        self.w2.clone().unwrap_or_else(|| CMat::zeros(self.w1.nrows(), self.w1.ncols()))
    }

    pub fn upper_bound(&self) -> f64 {
        self.value + self.gap
    }

    pub fn to_json(&self) -> Value {
        json!({
            "variant": self.variant,
            "status": self.status,
            "value": self.value,
            "value_db": 10.0 * self.value.log10(),
            "gap": self.gap,
            "iterations": self.iterations,
            "ranks": [self.ranks.0, self.ranks.1],
            "usage": self.usage,
            "w1": matrix_to_json(&self.w1),
            "w2": self.w2.as_ref().map(matrix_to_json),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let field = |k: &str| v.get(k).ok_or_else(|| Error::Parse(format!("solution is missing `{k}`")));
        let variant: Variant = serde_json::from_value(field("variant")?.clone())?;
        let status: SdrStatus = serde_json::from_value(field("status")?.clone())?;
        let w1 = matrix_from_json(field("w1")?)?;
        let w2 = match v.get("w2") {
            None | Some(Value::Null) => None,
            Some(m) => Some(matrix_from_json(m)?),
        };
        if (variant == Variant::R2) != w2.is_some() {
            return Err(Error::Parse("w2 must be present exactly for variant R2".into()));
        }
        let ranks: (usize, Option<usize>) = serde_json::from_value(field("ranks")?.clone())?;
        Ok(SdrSolution {
            variant,
            w1,
            w2,
            value: field("value")?.as_f64().unwrap_or(0.0),
            ranks,
            gap: field("gap")?.as_f64().unwrap_or(0.0),
            iterations: field("iterations")?.as_u64().unwrap_or(0) as usize,
            status,
            usage: serde_json::from_value(field("usage")?.clone())?,
        })
    }
}

/// Outcome of one bisection step.
#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub feasible: bool,
    /// `(W1, W2)`; `W2` is zero for R1.
    pub witness: Option<(CMat, CMat)>,
    /// Largest worst-user margin found by the solver.
    pub margin: f64,
    pub solver_iterations: usize,
}

/// Real symmetric embedding `[[Re H, -Im H], [Im H, Re H]]`.
pub fn hermitian_to_real(h: &CMat) -> Result<DMatrix<f64>> {
    let scale = h.iter().map(|x| x.norm()).fold(1.0, f64::max);
    let asym = hermitian_asymmetry(h);
    if asym > 1e-12 * scale {
        return Err(Error::NotHermitian(asym));
    }
    Ok(embed(h))
}

fn embed(h: &CMat) -> RMat {
    let n = h.nrows();
    RMat::from_fn(2 * n, 2 * n, |i, j| {
        let x = h[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => x.re,
            (true, false) => -x.im,
            (false, true) => x.im,
        }
    })
}

/// Inverse of the embedding, averaging the redundant blocks.
pub fn real_to_hermitian(x: &DMatrix<f64>) -> CMat {
    let n = x.nrows() / 2;
    let w = CMat::from_fn(n, n, |i, j| {
        let re = 0.5 * (x[(i, j)] + x[(i + n, j + n)]);
        let im = 0.5 * (x[(i + n, j)] - x[(i, j + n)]);
        C64::new(re, im)
    });
    crate::linalg::hermitian_part(&w)
}

/// Count of eigenvalues above `ratio_tol` times the largest one.
pub fn numeric_rank(w: &CMat, ratio_tol: f64) -> usize {
    let (vals, _) = eigh(w);
    let top = vals.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    vals.iter().filter(|&&v| v > ratio_tol * top).count()
}

/// Ranks of `w1` and `w2` measured against their joint largest eigenvalue,
/// so a numerically negligible block counts as rank 0.
pub fn joint_ranks(w1: &CMat, w2: &CMat, ratio_tol: f64) -> (usize, usize) {
    let (v1, _) = eigh(w1);
    let (v2, _) = eigh(w2);
    let top = v1.first().copied().unwrap_or(0.0).max(v2.first().copied().unwrap_or(0.0));
    if top <= 0.0 {
        return (0, 0);
    }
    let count = |v: &[f64]| v.iter().filter(|&&x| x > ratio_tol * top).count();
    (count(&v1), count(&v2))
}

/// `w` with `w w^H = W` for a numerically rank-one `W`. The entry of
/// largest magnitude is made real and nonnegative.
pub fn extract_rank_one(w: &CMat) -> Result<CVec> {
    let rank = numeric_rank(w, RANK_TOL);
    if rank > 1 {
        return Err(Error::RankTooHigh(rank));
    }
    Ok(principal_vector(w))
}

/// `sqrt(lambda_max) u_max` with the phase normalisation of [`extract_rank_one`].
pub fn principal_vector(w: &CMat) -> CVec {
    let n = w.nrows();
    let (vals, vecs) = eigh(w);
    let top = vals.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return CVec::zeros(n);
    }
    let v = vecs.column(0).into_owned() * C64::from(top.sqrt());
    fix_phase(v)
}

pub(crate) fn fix_phase(v: CVec) -> CVec {
    let Some((_, pivot)) = v.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())) else {
        return v;
    };
    if pivot.norm() == 0.0 {
        return v;
    }
    let rot = pivot.conj() / pivot.norm();
    v * rot
}

/// Budget entry used to bound the level: the first constraint whose
/// matrices are positive definite, else the sum of all constraints.
fn definite_budget(forms: &ProblemForms, variant: Variant) -> Option<(CMat, CMat, f64)> {
    let definite = |m: &CMat| {
        let (vals, _) = eigh(m);
        let top = vals.first().copied().unwrap_or(0.0);
        top > 0.0 && vals.last().copied().unwrap_or(0.0) > 1e-12 * top
    };
    let ok = |r: &CMat, rb: &CMat| definite(r) && (variant == Variant::R1 || definite(rb));
    for c in &forms.constraints {
        if ok(&c.r, &c.r_bar) {
            return Some((c.r.clone(), c.r_bar.clone(), c.budget));
        }
    }
    let mut r = forms.zero();
    let mut rb = forms.zero();
    let mut b = 0.0;
    for c in &forms.constraints {
        r += &c.r;
        rb += &c.r_bar;
        b += c.budget;
    }
    (!forms.constraints.is_empty() && ok(&r, &rb)).then_some((r, rb, b))
}

/// Largest generalised eigenvalue of `(a, r)` for positive definite `r`.
fn generalized_lambda_max(a: &CMat, r: &CMat) -> f64 {
    let chol = r.clone().cholesky().expect("definite budget matrix");
    let l = chol.l();
    let linv = l.try_inverse().expect("invertible Cholesky factor");
    let s = &linv * a * linv.adjoint();
    eigh(&s).0.first().copied().unwrap_or(0.0).max(0.0)
}

/// Finite overestimate of the relaxation optimum.
///
/// Every user's numerator is at most `b lambda_max(R^-1/2 A R^-1/2)` on the
/// budget set of a positive-definite constraint `R . W <= b`, and the
/// denominators are at least 1. For R2 the larger of the unbarred and barred
/// generalised eigenvalues is used. Interference is ignored.
pub fn upper_bound_gamma(forms: &ProblemForms, variant: Variant) -> Result<f64> {
    let (r, r_bar, b) = definite_budget(forms, variant).ok_or(Error::NoDefiniteConstraint)?;
    let bound = forms
        .users
        .iter()
        .map(|u| {
            let l1 = generalized_lambda_max(&u.a, &r);
            match variant {
                Variant::R1 => l1,
                Variant::R2 => l1.max(generalized_lambda_max(&u.a_bar, &r_bar)),
            }
        })
        .fold(0.0, f64::max);
    Ok(b * bound)
}

fn half_embed(m: &CMat) -> RMat {
    embed(m) * 0.5
}

fn blocks(variant: Variant) -> usize {
    match variant {
        Variant::R1 => 1,
        Variant::R2 => 2,
    }
}

/// Level constraints `(A - level C) . W1 + (Abar - level Cbar) . W2`, one per user.
fn level_matrices(forms: &ProblemForms, level: f64, variant: Variant) -> Vec<Vec<Option<RMat>>> {
    forms
        .users
        .iter()
        .map(|u| {
            let mut v = vec![Some(half_embed(&(&u.a - u.c.scale(level))))];
            if variant == Variant::R2 {
                v.push(Some(half_embed(&(&u.a_bar - u.c_bar.scale(level)))));
            }
            v
        })
        .collect()
}

fn budget_matrices(forms: &ProblemForms, variant: Variant) -> Vec<Vec<Option<RMat>>> {
    forms
        .constraints
        .iter()
        .map(|c| {
            let mut v = vec![Some(half_embed(&c.r))];
            if variant == Variant::R2 {
                v.push(Some(half_embed(&c.r_bar)));
            }
            v
        })
        .collect()
}

fn unpack(forms: &ProblemForms, variant: Variant, psd: &[RMat]) -> (CMat, CMat) {
    let w1 = real_to_hermitian(&psd[0]);
    let w2 = match variant {
        Variant::R1 => forms.zero(),
        Variant::R2 => real_to_hermitian(&psd[1]),
    };
    (w1, w2)
}

/// Scales `(w1, w2)` down so that no budget is exceeded.
fn fit_budgets(forms: &ProblemForms, w1: CMat, w2: CMat) -> (CMat, CMat) {
    let usage = constraint_usage(forms, &w1, &w2);
    let worst = forms
        .constraints
        .iter()
        .zip(&usage)
        .map(|(c, u)| u / c.budget)
        .fold(0.0, f64::max);
    if worst > 1.0 {
        (w1.unscale(worst), w2.unscale(worst))
    } else {
        (w1, w2)
    }
}

fn level_slack(forms: &ProblemForms, level: f64, w1: &CMat, w2: &CMat) -> f64 {
    use crate::linalg::inner;
    forms
        .users
        .iter()
        .map(|u| inner(&u.a, w1) + inner(&u.a_bar, w2) - level * (inner(&u.c, w1) + inner(&u.c_bar, w2) + 1.0))
        .fold(f64::INFINITY, f64::min)
}

fn solver_error(f: ipm::Failure) -> Error {
    Error::SolverFailure(format!(
        "{} after {} iterations (gap {:.1e}, primal {:.1e}, dual {:.1e})",
        f.reason, f.iterations, f.residuals[0], f.residuals[1], f.residuals[2]
    ))
}

/// Decides whether every user can reach SINR `level` within the budgets.
pub fn solve_feasibility(forms: &ProblemForms, level: f64, variant: Variant) -> Result<FeasibilityResult> {
    if !(level >= 0.0) {
        return Err(Error::Precondition(format!("level must be nonnegative, got {level}")));
    }
    if level == 0.0 {
        return Ok(FeasibilityResult {
            feasible: true,
            witness: Some((forms.zero(), forms.zero())),
            margin: 0.0,
            solver_iterations: 0,
        });
    }
    let nb = blocks(variant);
    let m_users = forms.users.len();
    let n_cons = forms.constraints.len();
    let mut cons = Vec::with_capacity(m_users + n_cons);
    // user rows: level-matrix . W - s_u - t = 0
    for (u, mats) in level_matrices(forms, level, variant).into_iter().enumerate() {
        cons.push(Constraint { psd: mats, lp: vec![(u, -1.0)], free: vec![(0, -1.0)], rhs: 0.0 });
    }
    // budget rows: R . W + r_j = b_j
    for (j, mats) in budget_matrices(forms, variant).into_iter().enumerate() {
        cons.push(Constraint { psd: mats, lp: vec![(m_users + j, 1.0)], free: vec![], rhs: forms.constraints[j].budget });
    }
    let problem = Problem {
        psd_dims: vec![2 * forms.dim; nb],
        n_lp: m_users + n_cons,
        n_free: 1,
        cons,
        obj_psd: vec![None; nb],
        obj_lp: vec![0.0; m_users + n_cons],
        obj_free: vec![-1.0],
    };
    let sol = ipm::solve(&problem, Settings::default()).map_err(solver_error)?;
    let (w1, w2) = unpack(forms, variant, &sol.psd);
    let (w1, w2) = fit_budgets(forms, w1, w2);
    let feasible = level_slack(forms, level, &w1, &w2) >= -FEASIBILITY_TOL * (1.0 + level);
    Ok(FeasibilityResult {
        feasible,
        witness: feasible.then_some((w1, w2)),
        margin: sol.free[0],
        solver_iterations: sol.iterations,
    })
}

/// Minimum-power point at `level`: the first definite budget becomes the
/// objective, the remaining budgets stay constraints.
fn polish(forms: &ProblemForms, level: f64, variant: Variant) -> Result<(CMat, CMat)> {
    let nb = blocks(variant);
    let definite_index = forms.constraints.iter().position(|c| {
        let pd = |m: &CMat| lambda_min(m) > 1e-12 * trace_re(m).max(f64::MIN_POSITIVE);
        pd(&c.r) && (variant == Variant::R1 || pd(&c.r_bar))
    });
    let budgets = budget_matrices(forms, variant);
    let m_users = forms.users.len();
    let mut cons = Vec::new();
    for (u, mats) in level_matrices(forms, level, variant).into_iter().enumerate() {
        cons.push(Constraint { psd: mats, lp: vec![(u, -1.0)], free: vec![], rhs: level });
    }
    let mut n_lp = m_users;
    let objective: Vec<Option<RMat>> = match definite_index {
        Some(j0) => budgets[j0].clone(),
        None => {
            let mut acc: Vec<RMat> = vec![RMat::zeros(2 * forms.dim, 2 * forms.dim); nb];
            for (mats, c) in budgets.iter().zip(&forms.constraints) {
                for (k, m) in mats.iter().enumerate() {
                    acc[k] += m.as_ref().expect("budget block") / c.budget;
                }
            }
            acc.into_iter().map(Some).collect()
        }
    };
    for (j, mats) in budgets.into_iter().enumerate() {
        if Some(j) == definite_index {
            continue;
        }
        cons.push(Constraint { psd: mats, lp: vec![(n_lp, 1.0)], free: vec![], rhs: forms.constraints[j].budget });
        n_lp += 1;
    }
    let problem = Problem {
        psd_dims: vec![2 * forms.dim; nb],
        n_lp,
        n_free: 0,
        cons,
        obj_psd: objective,
        obj_lp: vec![0.0; n_lp],
        obj_free: vec![],
    };
    let sol = ipm::solve(&problem, Settings::default()).map_err(solver_error)?;
    let (w1, w2) = unpack(forms, variant, &sol.psd);
    Ok(fit_budgets(forms, w1, w2))
}

/// Feasible starting point: scaled identities.
fn initial_point(forms: &ProblemForms, variant: Variant) -> (CMat, CMat) {
    let eye = CMat::identity(forms.dim, forms.dim);
    let scale = forms
        .constraints
        .iter()
        .map(|c| {
            let t = trace_re(&c.r) + if variant == Variant::R2 { trace_re(&c.r_bar) } else { 0.0 };
            if t > 0.0 {
                c.budget / t
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min);
    let w = eye.scale(if scale.is_finite() { scale } else { 1.0 });
    match variant {
        Variant::R1 => (w, forms.zero()),
        Variant::R2 => (w.clone(), w),
    }
}

/// Bisection on the SINR level until the bracket `[lo, hi]` satisfies
/// `hi <= lo (1 + tol_rel) + tol_abs`.
pub fn bisect_sdr(forms: &ProblemForms, variant: Variant, tol_rel: f64, tol_abs: f64) -> Result<SdrSolution> {
    if !(tol_rel > 0.0 && tol_abs > 0.0) {
        return Err(Error::Precondition("bisection tolerances must be positive".into()));
    }
    if forms.users.is_empty() {
        return Err(Error::Precondition("no users".into()));
    }
    let mut hi = upper_bound_gamma(forms, variant)?;
    let (mut best1, mut best2) = initial_point(forms, variant);
    let mut lo = eval_theta(forms, &best1, &best2).max(0.0);
    let mut iterations = 0;

    while iterations < MAX_BISECTIONS && hi > lo * (1.0 + tol_rel) + tol_abs {
        let mid = if lo > 0.0 && hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        iterations += 1;
        let step = solve_feasibility(forms, mid, variant)?;
        match step.witness {
            Some((w1, w2)) => {
                lo = mid.max(eval_theta(forms, &w1, &w2));
                best1 = w1;
                best2 = w2;
            }
            None => hi = mid,
        }
    }
    hi = hi.max(lo);

    // prefer the minimum-power point at the final level when it is as good
    if let Ok((p1, p2)) = polish(forms, lo, variant) {
        let polished = eval_theta(forms, &p1, &p2);
        if polished >= lo * (1.0 - 10.0 * FEASIBILITY_TOL) - FEASIBILITY_TOL {
            best1 = p1;
            best2 = p2;
        }
    }

    let (r1, r2) = joint_ranks(&best1, &best2, RANK_TOL);
    if variant == Variant::R2 {
        if r1 == 0 {
            best1 = forms.zero();
        }
        if r2 == 0 {
            best2 = forms.zero();
        }
    }
    let value = eval_theta(forms, &best1, &best2);
    let usage = constraint_usage(forms, &best1, &best2);
    let (w2, ranks) = match variant {
        Variant::R1 => (None, (numeric_rank(&best1, RANK_TOL), None)),
        Variant::R2 => (Some(best2), (r1, Some(r2))),
    };
    Ok(SdrSolution {
        variant,
        w1: best1,
        w2,
        value,
        ranks,
        gap: (hi - value).max(0.0),
        iterations,
        status: SdrStatus::Optimal,
        usage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{build_forms, ConstraintForms, ConstraintKind, UserForms};
    use crate::linalg::{complex_normal_vec, fro, outer};
    use crate::network::{sample_channels, NetworkConfig, NetworkKind};
    use rand::SeedableRng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn embedding_of_identity() {
        let r = hermitian_to_real(&CMat::identity(3, 3)).unwrap();
        assert_eq!(r, DMatrix::<f64>::identity(6, 6));
    }

    #[test]
    fn embedding_of_pauli_y() {
        let h = CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]);
        let r = hermitian_to_real(&h).unwrap();
        let expect = DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        );
        assert_eq!(r, expect);
        let mut eig: Vec<f64> = r.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        for (got, want) in eig.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_doubles_spectrum_and_halves_inner_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let v = complex_normal_vec(&mut rng, 4);
            let u = complex_normal_vec(&mut rng, 4);
            let h = outer(&v) - outer(&u).scale(0.5) + CMat::identity(4, 4).scale(0.1);
            let g = outer(&u);
            let r = hermitian_to_real(&h).unwrap();
            let mut re: Vec<f64> = r.symmetric_eigenvalues().iter().copied().collect();
            re.sort_by(|a, b| b.total_cmp(a));
            let (hv, _) = eigh(&h);
            for (k, want) in hv.iter().enumerate() {
                assert!((re[2 * k] - want).abs() < 1e-10 && (re[2 * k + 1] - want).abs() < 1e-10);
            }
            let rg = hermitian_to_real(&g).unwrap();
            let ip: f64 = r.iter().zip(rg.iter()).map(|(a, b)| a * b).sum();
            assert!((crate::linalg::inner(&h, &g) - 0.5 * ip).abs() < 1e-10);
            assert!((real_to_hermitian(&r) - &h).norm() < 1e-12);
        }
    }

    #[test]
    fn embedding_rejects_non_hermitian() {
        let h = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(hermitian_to_real(&h), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn rank_counts() {
        assert_eq!(numeric_rank(&CMat::identity(4, 4), 1e-6), 4);
        let w = CVec::from_vec(vec![c(1.0, 2.0), c(0.0, -1.0), c(3.0, 0.5)]);
        assert_eq!(numeric_rank(&outer(&w), 1e-6), 1);
        let d = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(1e-9, 0.0)]));
        assert_eq!(numeric_rank(&d, 1e-6), 1);
        assert_eq!(numeric_rank(&CMat::zeros(3, 3), 1e-6), 0);
    }

    #[test]
    fn rank_one_extraction() {
        let mut e = CVec::zeros(3);
        e[0] = c(1.0, 0.0);
        let w = extract_rank_one(&outer(&e).scale(4.0)).unwrap();
        assert!((w[0] - c(2.0, 0.0)).norm() < 1e-12);
        assert_eq!(extract_rank_one(&CMat::zeros(3, 3)).unwrap(), CVec::zeros(3));
        assert!(matches!(extract_rank_one(&CMat::identity(2, 2)), Err(Error::RankTooHigh(2))));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let v = complex_normal_vec(&mut rng, 5);
            let big = outer(&v);
            let w = extract_rank_one(&big).unwrap();
            assert!(fro(&(outer(&w) - &big)) <= 1e-6 * fro(&big));
            let pivot = w.iter().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
            assert!(pivot.im.abs() < 1e-12 && pivot.re >= 0.0);
        }
    }

    fn single_user(a: CMat, d0: CMat, budget: f64, c_mat: CMat) -> ProblemForms {
        let n = a.nrows();
        ProblemForms {
            kind: NetworkKind::Distributed,
            dim: n,
            users: vec![UserForms { group: 0, index: 0, a: a.clone(), a_bar: CMat::zeros(n, n), c: c_mat.clone(), c_bar: c_mat }],
            constraints: vec![ConstraintForms { kind: ConstraintKind::TotalPower, r: d0.clone(), r_bar: d0, budget }],
        }
    }

    #[test]
    fn bound_on_identity_instance() {
        let eye = CMat::identity(3, 3);
        let forms = single_user(eye.clone(), eye.clone(), 5.0, CMat::zeros(3, 3));
        assert!((upper_bound_gamma(&forms, Variant::R1).unwrap() - 5.0).abs() < 1e-12);
        let sol = bisect_sdr(&forms, Variant::R1, 1e-6, 1e-12).unwrap();
        assert!((sol.value - 5.0).abs() < 1e-4, "{}", sol.value);

        let with_interference = single_user(eye.clone(), eye.clone(), 5.0, eye.scale(0.3));
        assert_eq!(upper_bound_gamma(&with_interference, Variant::R1).unwrap(), 5.0);
        let sol2 = bisect_sdr(&with_interference, Variant::R1, 1e-6, 1e-12).unwrap();
        assert!(sol2.value < 5.0 - 1e-3);

        let doubled = single_user(eye.clone(), eye, 10.0, CMat::zeros(3, 3));
        assert!((upper_bound_gamma(&doubled, Variant::R1).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn bound_requires_definite_constraint() {
        let eye = CMat::identity(2, 2);
        let mut forms = single_user(eye.clone(), eye, 1.0, CMat::zeros(2, 2));
        forms.constraints[0].r = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]));
        forms.constraints[0].r_bar = forms.constraints[0].r.clone();
        assert!(matches!(upper_bound_gamma(&forms, Variant::R1), Err(Error::NoDefiniteConstraint)));
    }

    /// P0 * lambda_max(D0^-1/2 A D0^-1/2), computed as P0 a^H D0^-1 a for A = a a^H.
    fn closed_form(a_vec: &CVec, d0: &CMat, budget: f64) -> f64 {
        let inv = d0.clone().try_inverse().unwrap();
        budget * (a_vec.adjoint() * inv * a_vec)[(0, 0)].re
    }

    #[test]
    fn single_user_matches_generalized_eigenvalue() {
        let cfg = NetworkConfig::uniform(NetworkKind::Distributed, 4, vec![1], 1.0, 0.25, 0.25)
            .with_total_budget(10.0)
            .validate()
            .unwrap();
        for seed in 0..3 {
            let ch = sample_channels(&cfg, seed);
            let mut forms = build_forms(&cfg, &ch).unwrap();
            // drop the relay-noise term so the closed form applies
            forms.users[0].c = forms.zero();
            let a_vec = crate::linalg::hadamard(&crate::linalg::conj(&ch.f[0]), &ch.g[0]).scale(1.0 / 0.25f64.sqrt());
            let want = closed_form(&a_vec, &forms.constraints[0].r, 10.0);
            let sol = bisect_sdr(&forms, Variant::R1, 1e-4, 1e-9).unwrap();
            assert!(((sol.value - want) / want).abs() <= 1e-4, "{} vs {want}", sol.value);
            assert_eq!(sol.ranks.0, 1);

            let below = solve_feasibility(&forms, 0.99 * want, Variant::R1).unwrap();
            assert!(below.feasible);
            let above = solve_feasibility(&forms, 1.01 * want, Variant::R1).unwrap();
            assert!(!above.feasible);
        }
    }

    #[test]
    fn level_zero_and_above_bound() {
        let cfg = NetworkConfig::uniform(NetworkKind::Distributed, 3, vec![2, 1], 1.0, 0.25, 0.25)
            .with_total_budget(10.0)
            .validate()
            .unwrap();
        let forms = build_forms(&cfg, &sample_channels(&cfg, 4)).unwrap();
        let zero = solve_feasibility(&forms, 0.0, Variant::R2).unwrap();
        assert!(zero.feasible);
        assert_eq!(zero.witness.unwrap().0, forms.zero());
        let ub = upper_bound_gamma(&forms, Variant::R2).unwrap();
        assert!(!solve_feasibility(&forms, ub * 1.01, Variant::R2).unwrap().feasible);
    }

    #[test]
    fn solution_invariants_and_ordering() {
        let cfg = NetworkConfig::uniform(NetworkKind::Distributed, 4, vec![2, 2], 1.0, 0.25, 0.25)
            .with_total_budget(10.0)
            .with_per_relay_budgets(2, 3.0)
            .validate()
            .unwrap();
        for seed in 0..3 {
            let forms = build_forms(&cfg, &sample_channels(&cfg, seed)).unwrap();
            let r1 = bisect_sdr(&forms, Variant::R1, 1e-4, 1e-9).unwrap();
            let r2 = bisect_sdr(&forms, Variant::R2, 1e-4, 1e-9).unwrap();
            for sol in [&r1, &r2] {
                assert!(sol.value >= 0.0);
                for (u, cons) in sol.usage.iter().zip(&forms.constraints) {
                    assert!(*u <= cons.budget * (1.0 + 1e-6));
                }
                assert!(eval_theta(&forms, &sol.w1, &sol.w2_or_zero()) >= sol.value - sol.gap);
                assert!(sol.gap <= sol.value * 1e-4 + 1e-9 + 1e-12);
            }
            assert!(r2.value >= r1.value - 2e-4 * r1.value, "R2 {} < R1 {}", r2.value, r1.value);

            // feasibility is monotone in the level
            let below = solve_feasibility(&forms, 0.5 * r1.value, Variant::R1).unwrap();
            assert!(below.feasible);
        }
    }

    #[test]
    fn halving_tolerance_stays_in_bracket() {
        let cfg = NetworkConfig::uniform(NetworkKind::Distributed, 3, vec![2, 2], 1.0, 0.25, 0.25)
            .with_total_budget(10.0)
            .validate()
            .unwrap();
        let forms = build_forms(&cfg, &sample_channels(&cfg, 21)).unwrap();
        let coarse = bisect_sdr(&forms, Variant::R1, 1e-3, 1e-9).unwrap();
        let fine = bisect_sdr(&forms, Variant::R1, 5e-4, 1e-9).unwrap();
        assert!((fine.value - coarse.value).abs() <= coarse.gap + 1e-9);
    }

    #[test]
    fn solution_json_round_trip() {
        let eye = CMat::identity(2, 2);
        let forms = single_user(eye.clone(), eye, 2.0, CMat::zeros(2, 2));
        let sol = bisect_sdr(&forms, Variant::R2, 1e-4, 1e-9).unwrap();
        let back = SdrSolution::from_json(&sol.to_json()).unwrap();
        assert_eq!(back, sol);
    }
}
