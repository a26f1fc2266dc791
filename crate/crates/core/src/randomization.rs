//! Gaussian randomization: rounds relaxation solutions to feasible
//! beamformer vectors.
//!
//! Trial `n` of a run seeded with `seed` draws from its own RNG stream
//! ([`item_rng`]), so reports are identical under every [`Exec`] policy.

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::forms::{sinr_per_user, vector_usage, BeamformerPair, ProblemForms};
use crate::linalg::{complex_normal_vec, eigh, CMat, CVec, C64};
use crate::par::{item_rng, Exec};
use crate::sdr::{principal_vector, SdrSolution, SdrStatus, Variant};

pub const DEFAULT_TRIALS: usize = 1000;
/// Attempts per trial before a draw with zero constraint usage is given up.
const MAX_REDRAWS: usize = 64;

/// Draws from CN(0, W) via the factor `U diag(sqrt(lambda))`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: CMat,
}

impl GaussianSampler {
    pub fn new(w: &CMat) -> Self {
        let (vals, vecs) = eigh(w);
        let n = w.nrows();
        let mut factor = vecs;
        // eigenvalues at roundoff level are treated as exact zeros
        let floor = 1e-13 * vals.first().copied().unwrap_or(0.0).max(0.0);
        for (k, v) in vals.iter().enumerate().take(n) {
            let s = if *v > floor { v.sqrt() } else { 0.0 };
            factor.column_mut(k).scale_mut(s);
        }
        GaussianSampler { factor }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CVec {
        let z = complex_normal_vec(rng, self.factor.ncols());
        &self.factor * z
    }
}

/// One draw of `xi ~ CN(0, W)`.
pub fn sample_gaussian<R: Rng + ?Sized>(w: &CMat, rng: &mut R) -> CVec {
    GaussianSampler::new(w).sample(rng)
}

/// Largest `t` with `(t xi1, t xi2)` inside every budget:
/// `min_j sqrt(b_j / (xi1^H R_j xi1 + xi2^H Rbar_j xi2))`.
///
/// Entries with zero usage do not limit `t`; when no entry does, returns 1.
pub fn feasibility_scale(forms: &ProblemForms, xi1: &CVec, xi2: &CVec) -> Result<f64> {
    if forms.constraints.is_empty() {
        return Err(Error::Precondition("at least one constraint is required".into()));
    }
    if xi1.len() != forms.dim || xi2.len() != forms.dim {
        return Err(Error::DimensionMismatch(format!("vectors must have length {}", forms.dim)));
    }
    Ok(scale_from_usage(forms, &vector_usage(forms, xi1, xi2)))
}

fn scale_from_usage(forms: &ProblemForms, usage: &[f64]) -> f64 {
    let t = forms
        .constraints
        .iter()
        .zip(usage)
        .filter(|(_, &u)| u > 0.0)
        .map(|(c, &u)| (c.budget / u).sqrt())
        .fold(f64::INFINITY, f64::min);
    if t.is_finite() {
        t
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleStats {
    pub min: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationReport {
    pub trials: usize,
    pub best: BeamformerPair,
    /// Index of the best trial; ties go to the lowest index.
    pub best_trial: usize,
    pub per_trial_theta: Vec<f64>,
    pub per_trial_scale: Vec<f64>,
    pub scale_stats: ScaleStats,
    pub seed: u64,
    /// Components held at their rank-one extraction instead of sampled.
    pub fixed: (bool, bool),
}

impl RandomizationReport {
    /// Best worst-user SINR over the first `n` trials.
    pub fn best_of_first(&self, n: usize) -> f64 {
        self.per_trial_theta.iter().take(n).copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "trials": self.trials,
            "seed": self.seed,
            "best_trial": self.best_trial,
            "theta": self.best.theta,
            "theta_db": 10.0 * self.best.theta.log10(),
            "scale_stats": self.scale_stats,
            "fixed": [self.fixed.0, self.fixed.1],
            "best": self.best,
        })
    }

    /// `trial,theta,scale` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial", "theta", "scale"])?;
        for (n, (theta, scale)) in self.per_trial_theta.iter().zip(&self.per_trial_scale).enumerate() {
            w.serialize((n, theta, scale))?;
        }
        w.flush()?;
        Ok(())
    }
}

enum Component {
    Fixed(CVec),
    Random(GaussianSampler),
}

impl Component {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> CVec {
        match self {
            Component::Fixed(w) => w.clone(),
            Component::Random(s) => s.sample(rng),
        }
    }

    fn is_fixed(&self) -> bool {
        matches!(self, Component::Fixed(_))
    }
}

fn component(w: &CMat, rank: usize) -> Component {
    if rank <= 1 {
        Component::Fixed(principal_vector(w))
    } else {
        Component::Random(GaussianSampler::new(w))
    }
}

struct Trial {
    w1: CVec,
    w2: CVec,
    theta: f64,
    scale: f64,
}

fn run_trial(forms: &ProblemForms, c1: &Component, c2: &Component, seed: u64, n: usize) -> Trial {
    let mut rng = item_rng(seed, n as u64);
    let both_fixed = c1.is_fixed() && c2.is_fixed();
    let mut draw = (c1.draw(&mut rng), c2.draw(&mut rng));
    let mut usage = vector_usage(forms, &draw.0, &draw.1);
    let mut attempts = 1;
    while !both_fixed && usage.iter().all(|&u| u == 0.0) && attempts < MAX_REDRAWS {
        draw = (c1.draw(&mut rng), c2.draw(&mut rng));
        usage = vector_usage(forms, &draw.0, &draw.1);
        attempts += 1;
    }
    let mut t = scale_from_usage(forms, &usage);
    if both_fixed {
        t = t.min(1.0);
    }
    let (w1, w2) = (draw.0 * C64::from(t), draw.1 * C64::from(t));
    let theta = sinr_per_user(forms, &w1, &w2).into_iter().fold(f64::INFINITY, f64::min);
    Trial { w1, w2, theta, scale: t }
}

fn check_solution(forms: &ProblemForms, sol: &SdrSolution, variant: Variant, trials: usize) -> Result<()> {
    if sol.status != SdrStatus::Optimal {
        return Err(Error::Precondition(format!("solution status is {:?}", sol.status)));
    }
    if sol.variant != variant {
        return Err(Error::Precondition(format!("expected a {variant:?} solution, got {:?}", sol.variant)));
    }
    if trials == 0 {
        return Err(Error::Precondition("at least one randomization is required".into()));
    }
    if sol.w1.nrows() != forms.dim {
        return Err(Error::DimensionMismatch(format!("solution has dimension {}, forms {}", sol.w1.nrows(), forms.dim)));
    }
    if forms.constraints.is_empty() {
        return Err(Error::Precondition("at least one constraint is required".into()));
    }
    Ok(())
}

fn run(forms: &ProblemForms, c1: Component, c2: Component, trials: usize, seed: u64, exec: Exec) -> RandomizationReport {
    let results = exec.map(trials, |n| run_trial(forms, &c1, &c2, seed, n));
    let mut best = 0;
    for (n, r) in results.iter().enumerate() {
        if r.theta > results[best].theta {
            best = n;
        }
    }
    let per_trial_theta: Vec<f64> = results.iter().map(|r| r.theta).collect();
    let per_trial_scale: Vec<f64> = results.iter().map(|r| r.scale).collect();
    let mut sorted = per_trial_scale.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let fixed = (c1.is_fixed(), c2.is_fixed());
    let winner = &results[best];
    RandomizationReport {
        trials,
        best: BeamformerPair { w1: winner.w1.clone(), w2: winner.w2.clone(), theta: winner.theta },
        best_trial: best,
        per_trial_theta,
        per_trial_scale,
        scale_stats: ScaleStats { min: sorted[0], median },
        seed,
        fixed,
    }
}

/// Rounds an R2 solution with `trials` joint draws.
pub fn randomize_r2(forms: &ProblemForms, sol: &SdrSolution, trials: usize, seed: u64) -> Result<RandomizationReport> {
    randomize_r2_with(forms, sol, trials, seed, Exec::default())
}

pub fn randomize_r2_with(forms: &ProblemForms, sol: &SdrSolution, trials: usize, seed: u64, exec: Exec) -> Result<RandomizationReport> {
    check_solution(forms, sol, Variant::R2, trials)?;
    let w2 = sol.w2_or_zero();
    let (r1, r2) = (sol.ranks.0, sol.ranks.1.unwrap_or(0));
    Ok(run(forms, component(&sol.w1, r1), component(&w2, r2), trials, seed, exec))
}

/// Rounds an R1 solution; `w2` stays zero.
pub fn randomize_r1(forms: &ProblemForms, sol: &SdrSolution, trials: usize, seed: u64) -> Result<RandomizationReport> {
    randomize_r1_with(forms, sol, trials, seed, Exec::default())
}

pub fn randomize_r1_with(forms: &ProblemForms, sol: &SdrSolution, trials: usize, seed: u64, exec: Exec) -> Result<RandomizationReport> {
    check_solution(forms, sol, Variant::R1, trials)?;
    let zero = Component::Fixed(CVec::zeros(forms.dim));
    Ok(run(forms, component(&sol.w1, sol.ranks.0), zero, trials, seed, exec))
}

/// Dispatches on the solution's variant.
pub fn randomize(forms: &ProblemForms, sol: &SdrSolution, trials: usize, seed: u64, exec: Exec) -> Result<RandomizationReport> {
    match sol.variant {
        Variant::R1 => randomize_r1_with(forms, sol, trials, seed, exec),
        Variant::R2 => randomize_r2_with(forms, sol, trials, seed, exec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{build_forms, within_budgets};
    use crate::linalg::{fro, outer};
    use crate::network::{sample_channels, NetworkConfig, NetworkKind};
    use crate::sdr::bisect_sdr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> ProblemForms {
        let cfg = NetworkConfig::uniform(NetworkKind::Distributed, 4, vec![2, 2], 1.0, 0.25, 0.25)
            .with_total_budget(10.0)
            .with_per_relay_budgets(4, 3.0)
            .validate()
            .unwrap();
        build_forms(&cfg, &sample_channels(&cfg, seed)).unwrap()
    }

    #[test]
    fn zero_matrix_gives_zero_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_gaussian(&CMat::zeros(3, 3), &mut rng), CVec::zeros(3));
    }

    #[test]
    fn rank_one_samples_are_multiples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = complex_normal_vec(&mut rng, 4);
        let s = GaussianSampler::new(&outer(&w));
        for _ in 0..20 {
            let xi = s.sample(&mut rng);
            let alpha = w.dotc(&xi) / w.dotc(&w);
            assert!((xi - &w * alpha).norm() <= 1e-9 * w.norm());
        }
    }

    #[test]
    fn sample_covariance_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = complex_normal_vec(&mut rng, 3);
        let b = complex_normal_vec(&mut rng, 3);
        let w = outer(&a) + outer(&b).scale(0.5);
        let s = GaussianSampler::new(&w);
        let n = 100_000;
        let mut acc = CMat::zeros(3, 3);
        for _ in 0..n {
            acc += outer(&s.sample(&mut rng));
        }
        acc.unscale_mut(n as f64);
        assert!(fro(&(acc - &w)) <= 0.03 * fro(&w));
    }

    #[test]
    fn scale_formula() {
        let forms = {
            let cfg = NetworkConfig::uniform(NetworkKind::Distributed, 3, vec![1], 1.0, 0.25, 0.25)
                .with_total_budget(2.0)
                .validate()
                .unwrap();
            build_forms(&cfg, &sample_channels(&cfg, 3)).unwrap()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xi1 = complex_normal_vec(&mut rng, 3);
        let xi2 = complex_normal_vec(&mut rng, 3);
        let usage = vector_usage(&forms, &xi1, &xi2)[0];
        // rescale so usage is 4 budgets: t must be 1/2
        let k = C64::from((4.0 * 2.0 / usage).sqrt());
        let (a, b) = (&xi1 * k, &xi2 * k);
        assert!((feasibility_scale(&forms, &a, &b).unwrap() - 0.5).abs() < 1e-12);
        let t = feasibility_scale(&forms, &xi1, &xi2).unwrap();
        let tight = (&xi1 * C64::from(t), &xi2 * C64::from(t));
        assert!((feasibility_scale(&forms, &tight.0, &tight.1).unwrap() - 1.0).abs() < 1e-12);
        let t3 = feasibility_scale(&forms, &(&xi1 * C64::from(3.0)), &(&xi2 * C64::from(3.0))).unwrap();
        assert!((t3 * 3.0 - t).abs() < 1e-12 * t);
        let z = CVec::zeros(3);
        assert_eq!(feasibility_scale(&forms, &z, &z).unwrap(), 1.0);
    }

    #[test]
    fn rounded_pairs_are_feasible_and_below_relaxation() {
        for seed in 0..3 {
            let forms = instance(seed);
            for variant in [Variant::R1, Variant::R2] {
                let sol = bisect_sdr(&forms, variant, 1e-4, 1e-9).unwrap();
                let rep = match variant {
                    Variant::R1 => randomize_r1(&forms, &sol, 200, 7).unwrap(),
                    Variant::R2 => randomize_r2(&forms, &sol, 200, 7).unwrap(),
                };
                let usage = vector_usage(&forms, &rep.best.w1, &rep.best.w2);
                assert!(within_budgets(&forms, &usage, 1e-7));
                assert!(rep.best.theta <= sol.value + 1e-6);
                assert_eq!(rep.best.theta, rep.per_trial_theta.iter().copied().fold(f64::MIN, f64::max));
                if variant == Variant::R1 {
                    assert!(rep.best.is_bf());
                }
                if rep.fixed == (true, true) {
                    assert!((rep.best.theta - sol.value).abs() <= 1e-6 * sol.value.max(1.0));
                }
            }
        }
    }

    #[test]
    fn reports_are_reproducible_and_monotone_in_trials() {
        let forms = instance(11);
        let sol = bisect_sdr(&forms, Variant::R2, 1e-4, 1e-9).unwrap();
        let a = randomize_r2_with(&forms, &sol, 64, 5, Exec::Sequential).unwrap();
        let b = randomize_r2(&forms, &sol, 64, 5).unwrap();
        assert_eq!(a, b);
        let short = randomize_r2(&forms, &sol, 16, 5).unwrap();
        assert_eq!(short.per_trial_theta[..], a.per_trial_theta[..16]);
        let mut prev = f64::NEG_INFINITY;
        for n in 1..=64 {
            let v = a.best_of_first(n);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn preconditions() {
        let forms = instance(1);
        let sol = bisect_sdr(&forms, Variant::R1, 1e-3, 1e-9).unwrap();
        assert!(randomize_r2(&forms, &sol, 10, 0).is_err());
        assert!(randomize_r1(&forms, &sol, 0, 0).is_err());
    }

    #[test]
    fn csv_dump() {
        let forms = instance(2);
        let sol = bisect_sdr(&forms, Variant::R1, 1e-3, 1e-9).unwrap();
        let rep = randomize_r1(&forms, &sol, 3, 0).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("trial,theta,scale\n0,"));
    }
}
