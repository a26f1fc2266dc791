//! Quadratic-form data of the BF and BFA relay design problems.
//!
//! For both relay kinds the per-user SINR of the beamformed-Alamouti scheme is
//!
//! ```text
//!   (w1^H A w1 + w2^H Abar w2) / (w1^H C w1 + w2^H Cbar w2 + 1)
//! ```
//!
//! with the user noise already divided out of `A` and `C`. Rank-one BF is the
//! special case `w2 = 0`. Power and interference budgets share one list of
//! `(R, Rbar, b)` entries meaning `w1^H R w1 + w2^H Rbar w2 <= b`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{conj, hadamard, inner, kron, outer, quad, CMat, CVec, C64, ZERO};
use crate::network::{ChannelSet, NetworkKind, ValidatedConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct UserForms {
    pub group: usize,
    pub index: usize,
    pub a: CMat,
    pub a_bar: CMat,
    pub c: CMat,
    pub c_bar: CMat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "index", rename_all = "snake_case")]
pub enum ConstraintKind {
    TotalPower,
    PerRelay(usize),
    Interference(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintForms {
    pub kind: ConstraintKind,
    pub r: CMat,
    pub r_bar: CMat,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemForms {
    pub kind: NetworkKind,
    pub dim: usize,
    pub users: Vec<UserForms>,
    pub constraints: Vec<ConstraintForms>,
}

impl ProblemForms {
    /// Number of users (M).
    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    /// Number of budget entries (J).
    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    pub fn zero(&self) -> CMat {
        CMat::zeros(self.dim, self.dim)
    }

    /// Every stored matrix, for invariant checks.
    pub fn matrices(&self) -> impl Iterator<Item = &CMat> {
        self.users
            .iter()
            .flat_map(|u| [&u.a, &u.a_bar, &u.c, &u.c_bar])
            .chain(self.constraints.iter().flat_map(|c| [&c.r, &c.r_bar]))
    }
}

/// Builds every matrix for `cfg` and channel realization `ch`.
pub fn build_forms(cfg: &ValidatedConfig, ch: &ChannelSet) -> Result<ProblemForms> {
    ch.check(cfg)?;
    let l = cfg.relays;
    let kind = cfg.kind;
    let dim = kind.dim(l);

    // (conjugated-source vector, plain-source vector) for a source/destination pair
    let pair = |f: &CVec, g: &CVec| -> (CVec, CVec) {
        match kind {
            NetworkKind::Distributed => (hadamard(&conj(f), g), hadamard(f, g)),
            NetworkKind::Mimo => (kron(&conj(f), g), kron(f, g)),
        }
    };

    let relay_noise_term = |g: &CVec| -> CMat {
        match kind {
            NetworkKind::Distributed => {
                CMat::from_diagonal(&CVec::from_fn(l, |i, _| C64::from(g[i].norm_sqr() * cfg.relay_noise[i])))
            }
            NetworkKind::Mimo => {
                let sigma = CMat::from_diagonal(&CVec::from_fn(l, |i, _| C64::from(cfg.relay_noise[i])));
                sigma.kronecker(&outer(g))
            }
        }
    };

    let mut users = Vec::with_capacity(cfg.users());
    for (u, (k, i)) in cfg.user_labels().into_iter().enumerate() {
        let g = &ch.g[u];
        let noise = cfg.user_noise[u];
        let (d, d_bar) = pair(&ch.f[k], g);
        let a = outer(&d).scale(cfg.tx_power[k] / noise);
        let a_bar = outer(&d_bar).scale(cfg.tx_power[k] / noise);
        let floor = relay_noise_term(g).unscale(noise);
        let mut c = floor.clone();
        let mut c_bar = floor;
        for m in (0..cfg.groups()).filter(|&m| m != k) {
            let (x, x_bar) = pair(&ch.f[m], g);
            c += outer(&x).scale(cfg.tx_power[m] / noise);
            c_bar += outer(&x_bar).scale(cfg.tx_power[m] / noise);
        }
        users.push(UserForms { group: k, index: i, a, a_bar, c, c_bar });
    }

    // received-signal covariance at the relays, and its conjugate
    let mut cov = CMat::from_diagonal(&CVec::from_fn(l, |i, _| C64::from(cfg.relay_noise[i])));
    let mut cov_bar = cov.clone();
    for (j, f) in ch.f.iter().enumerate() {
        cov += outer(&conj(f)).scale(cfg.tx_power[j]);
        cov_bar += outer(f).scale(cfg.tx_power[j]);
    }

    let selector = |ell: Option<usize>| -> CMat {
        match ell {
            None => CMat::identity(l, l),
            Some(e) => CMat::from_fn(l, l, |a, b| if a == e && b == e { C64::from(1.0) } else { ZERO }),
        }
    };
    let power_matrix = |cov: &CMat, ell: Option<usize>| -> CMat {
        match kind {
            NetworkKind::Distributed => {
                let diag = CVec::from_fn(l, |i, _| cov[(i, i)]);
                let sel = selector(ell);
                CMat::from_diagonal(&diag).component_mul(&sel)
            }
            NetworkKind::Mimo => cov.kronecker(&selector(ell)),
        }
    };

    let mut constraints = Vec::with_capacity(cfg.constraint_count());
    if let Some(b) = cfg.total_budget {
        constraints.push(ConstraintForms {
            kind: ConstraintKind::TotalPower,
            r: power_matrix(&cov, None),
            r_bar: power_matrix(&cov_bar, None),
            budget: b,
        });
    }
    for (ell, budget) in cfg.per_relay_budgets.iter().enumerate() {
        if let Some(b) = *budget {
            constraints.push(ConstraintForms {
                kind: ConstraintKind::PerRelay(ell),
                r: power_matrix(&cov, Some(ell)),
                r_bar: power_matrix(&cov_bar, Some(ell)),
                budget: b,
            });
        }
    }
    for (u, h) in ch.h.iter().enumerate() {
        let noise = cfg.pu_noise[u];
        let mut r = CMat::zeros(dim, dim);
        let mut r_bar = CMat::zeros(dim, dim);
        for (j, f) in ch.f.iter().enumerate() {
            let (x, x_bar) = pair(f, h);
            r += outer(&x).scale(cfg.tx_power[j] / noise);
            r_bar += outer(&x_bar).scale(cfg.tx_power[j] / noise);
        }
        constraints.push(ConstraintForms {
            kind: ConstraintKind::Interference(u),
            r,
            r_bar,
            budget: cfg.interference_caps[u],
        });
    }

    Ok(ProblemForms { kind, dim, users, constraints })
}

/// Worst-user SINR of the rank-one relaxation at `w`.
pub fn eval_gamma(forms: &ProblemForms, w: &CMat) -> f64 {
    forms
        .users
        .iter()
        .map(|u| inner(&u.a, w) / (inner(&u.c, w) + 1.0))
        .fold(f64::INFINITY, f64::min)
}

/// Worst-user SINR of the two-variable relaxation at `(w1, w2)`.
pub fn eval_theta(forms: &ProblemForms, w1: &CMat, w2: &CMat) -> f64 {
    forms
        .users
        .iter()
        .map(|u| user_ratio(u, w1, w2))
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn user_ratio(u: &UserForms, w1: &CMat, w2: &CMat) -> f64 {
    (inner(&u.a, w1) + inner(&u.a_bar, w2)) / (inner(&u.c, w1) + inner(&u.c_bar, w2) + 1.0)
}

/// `R_j . W1 + Rbar_j . W2` for every budget entry.
pub fn constraint_usage(forms: &ProblemForms, w1: &CMat, w2: &CMat) -> Vec<f64> {
    forms.constraints.iter().map(|c| inner(&c.r, w1) + inner(&c.r_bar, w2)).collect()
}

/// Usage of the vector pair, `w1^H R w1 + w2^H Rbar w2`.
pub fn vector_usage(forms: &ProblemForms, w1: &CVec, w2: &CVec) -> Vec<f64> {
    forms.constraints.iter().map(|c| quad(&c.r, w1) + quad(&c.r_bar, w2)).collect()
}

/// True when every usage is within `tol` (relative to the budget) of its budget.
pub fn within_budgets(forms: &ProblemForms, usage: &[f64], tol: f64) -> bool {
    forms.constraints.iter().zip(usage).all(|(c, &x)| x <= c.budget * (1.0 + tol))
}

/// Per-user SINR of the beamformer pair.
pub fn sinr_per_user(forms: &ProblemForms, w1: &CVec, w2: &CVec) -> Vec<f64> {
    forms
        .users
        .iter()
        .map(|u| (quad(&u.a, w1) + quad(&u.a_bar, w2)) / (quad(&u.c, w1) + quad(&u.c_bar, w2) + 1.0))
        .collect()
}

/// A feasible beamformer pair and its worst-user SINR; `w2 = 0` for BF.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerPair {
    pub w1: CVec,
    pub w2: CVec,
    pub theta: f64,
}

impl BeamformerPair {
    pub fn new(forms: &ProblemForms, w1: CVec, w2: CVec) -> Self {
        let theta = sinr_per_user(forms, &w1, &w2).into_iter().fold(f64::INFINITY, f64::min);
        BeamformerPair { w1, w2, theta }
    }

    pub fn is_bf(&self) -> bool {
        self.w2.iter().all(|x| *x == ZERO)
    }
}

#[derive(Serialize, Deserialize)]
struct PairFile {
    theta: f64,
    w1: Vec<[f64; 2]>,
    w2: Vec<[f64; 2]>,
}

impl Serialize for BeamformerPair {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PairFile {
            theta: self.theta,
            w1: self.w1.iter().map(|x| [x.re, x.im]).collect(),
            w2: self.w2.iter().map(|x| [x.re, x.im]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BeamformerPair {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = PairFile::deserialize(d)?;
        if f.w1.len() != f.w2.len() {
            return Err(serde::de::Error::custom("w1 and w2 lengths differ"));
        }
        let to_vec = |v: &[[f64; 2]]| CVec::from_iterator(v.len(), v.iter().map(|&[a, b]| C64::new(a, b)));
        Ok(BeamformerPair { w1: to_vec(&f.w1), w2: to_vec(&f.w2), theta: f.theta })
    }
}

/// Row-major `[re, im, re, im, ...]` matrix as JSON.
pub fn matrix_to_json(m: &CMat) -> Value {
    let mut data = Vec::with_capacity(m.len() * 2);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)].re);
            data.push(m[(i, j)].im);
        }
    }
    json!({ "rows": m.nrows(), "cols": m.ncols(), "data": data })
}

pub fn matrix_from_json(v: &Value) -> Result<CMat> {
    let bad = || Error::Parse("matrix must have rows, cols and data".into());
    let rows = v.get("rows").and_then(Value::as_u64).ok_or_else(bad)? as usize;
    let cols = v.get("cols").and_then(Value::as_u64).ok_or_else(bad)? as usize;
    let data: Vec<f64> = v
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(bad)?
        .iter()
        .map(|x| x.as_f64().ok_or_else(bad))
        .collect::<Result<_>>()?;
    if data.len() != rows * cols * 2 {
        return Err(Error::Parse(format!("matrix data has {} values, expected {}", data.len(), rows * cols * 2)));
    }
    Ok(CMat::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        C64::new(data[k], data[k + 1])
    }))
}

const MAGIC: &[u8; 4] = b"AFQF";
const VERSION: u32 = 1;

impl ProblemForms {
    pub fn to_json(&self) -> Value {
        json!({
            "kind": self.kind,
            "dim": self.dim,
            "users": self.users.iter().map(|u| json!({
                "group": u.group,
                "index": u.index,
                "A": matrix_to_json(&u.a),
                "A_bar": matrix_to_json(&u.a_bar),
                "C": matrix_to_json(&u.c),
                "C_bar": matrix_to_json(&u.c_bar),
            })).collect::<Vec<_>>(),
            "constraints": self.constraints.iter().map(|c| json!({
                "kind": c.kind,
                "budget": c.budget,
                "R": matrix_to_json(&c.r),
                "R_bar": matrix_to_json(&c.r_bar),
            })).collect::<Vec<_>>(),
        })
    }

    /// Little-endian binary dump.
    ///
    /// Layout: magic `AFQF`, u32 version, u32 kind (0 distributed, 1 MIMO),
    /// u32 dim, u32 users, u32 constraints; per user u32 group, u32 index and
    /// the matrices A, Abar, C, Cbar; per constraint u32 type (0 total,
    /// 1 per-relay, 2 interference), u32 index, f64 budget, R, Rbar. Each
    /// matrix is dim*dim complex entries, row-major, re before im, as f64.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let u32le = |x: usize| (x as u32).to_le_bytes();
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&u32le(match self.kind {
            NetworkKind::Distributed => 0,
            NetworkKind::Mimo => 1,
        }))?;
        out.write_all(&u32le(self.dim))?;
        out.write_all(&u32le(self.users.len()))?;
        out.write_all(&u32le(self.constraints.len()))?;
        let write_mat = |out: &mut W, m: &CMat| -> Result<()> {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.write_all(&m[(i, j)].re.to_le_bytes())?;
                    out.write_all(&m[(i, j)].im.to_le_bytes())?;
                }
            }
            Ok(())
        };
        for u in &self.users {
            out.write_all(&u32le(u.group))?;
            out.write_all(&u32le(u.index))?;
            for m in [&u.a, &u.a_bar, &u.c, &u.c_bar] {
                write_mat(&mut out, m)?;
            }
        }
        for c in &self.constraints {
            let (code, idx) = match c.kind {
                ConstraintKind::TotalPower => (0, 0),
                ConstraintKind::PerRelay(l) => (1, l),
                ConstraintKind::Interference(u) => (2, u),
            };
            out.write_all(&u32le(code))?;
            out.write_all(&u32le(idx))?;
            out.write_all(&c.budget.to_le_bytes())?;
            write_mat(&mut out, &c.r)?;
            write_mat(&mut out, &c.r_bar)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut buf4 = [0u8; 4];
        let mut buf8 = [0u8; 8];
        input.read_exact(&mut buf4)?;
        if &buf4 != MAGIC {
            return Err(Error::Parse("not a forms dump (bad magic)".into()));
        }
        let mut read_u32 = |input: &mut R| -> Result<usize> {
            input.read_exact(&mut buf4)?;
            Ok(u32::from_le_bytes(buf4) as usize)
        };
        let version = read_u32(&mut input)?;
        if version != VERSION as usize {
            return Err(Error::Parse(format!("unsupported forms dump version {version}")));
        }
        let kind = match read_u32(&mut input)? {
            0 => NetworkKind::Distributed,
            1 => NetworkKind::Mimo,
            k => return Err(Error::Parse(format!("unknown network kind code {k}"))),
        };
        let dim = read_u32(&mut input)?;
        let n_users = read_u32(&mut input)?;
        let n_cons = read_u32(&mut input)?;
        let mut read_f64 = |input: &mut R| -> Result<f64> {
            input.read_exact(&mut buf8)?;
            Ok(f64::from_le_bytes(buf8))
        };
        let mut read_mat = |input: &mut R| -> Result<CMat> {
            let mut m = CMat::zeros(dim, dim);
            for i in 0..dim {
                for j in 0..dim {
                    let re = read_f64(input)?;
                    let im = read_f64(input)?;
                    m[(i, j)] = C64::new(re, im);
                }
            }
            Ok(m)
        };
        let mut users = Vec::with_capacity(n_users);
        for _ in 0..n_users {
            let mut hdr = [0usize; 2];
            for h in hdr.iter_mut() {
                let mut b = [0u8; 4];
                input.read_exact(&mut b)?;
                *h = u32::from_le_bytes(b) as usize;
            }
            let a = read_mat(&mut input)?;
            let a_bar = read_mat(&mut input)?;
            let c = read_mat(&mut input)?;
            let c_bar = read_mat(&mut input)?;
            users.push(UserForms { group: hdr[0], index: hdr[1], a, a_bar, c, c_bar });
        }
        let mut constraints = Vec::with_capacity(n_cons);
        for _ in 0..n_cons {
            let mut hdr = [0usize; 2];
            for h in hdr.iter_mut() {
                let mut b = [0u8; 4];
                input.read_exact(&mut b)?;
                *h = u32::from_le_bytes(b) as usize;
            }
            let kind = match hdr[0] {
                0 => ConstraintKind::TotalPower,
                1 => ConstraintKind::PerRelay(hdr[1]),
                2 => ConstraintKind::Interference(hdr[1]),
                k => return Err(Error::Parse(format!("unknown constraint code {k}"))),
            };
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            let budget = f64::from_le_bytes(b);
            let r = read_mat(&mut input)?;
            let r_bar = read_mat(&mut input)?;
            constraints.push(ConstraintForms { kind, r, r_bar, budget });
        }
        Ok(ProblemForms { kind, dim, users, constraints })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigh, hermitian_asymmetry};
    use crate::network::{sample_channels, NetworkConfig};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn small(kind: NetworkKind, groups: Vec<usize>) -> ValidatedConfig {
        NetworkConfig::uniform(kind, 3, groups, 1.0, 0.25, 0.5)
            .with_total_budget(10.0)
            .with_per_relay_budgets(2, 2.0)
            .with_primal_users(1, 2.0, 0.25)
            .validate()
            .unwrap()
    }

    #[test]
    fn hand_evaluated_distributed_a() {
        let cfg = NetworkConfig::uniform(NetworkKind::Distributed, 2, vec![1], 1.0, 1.0, 1.0)
            .with_total_budget(1.0)
            .validate()
            .unwrap();
        let ones = CVec::from_element(2, c(1.0));
        let ch = ChannelSet { f: vec![ones.clone()], g: vec![ones], h: vec![] };
        let forms = build_forms(&cfg, &ch).unwrap();
        assert_eq!(forms.users[0].a, CMat::from_element(2, 2, c(1.0)));
    }

    #[test]
    fn single_group_c_is_noise_only() {
        let cfg = small(NetworkKind::Distributed, vec![2]);
        let ch = sample_channels(&cfg, 3);
        let forms = build_forms(&cfg, &ch).unwrap();
        for (u, uf) in forms.users.iter().enumerate() {
            let expect = CMat::from_diagonal(&CVec::from_fn(3, |l, _| c(ch.g[u][l].norm_sqr() * 0.25 / 0.5)));
            assert!((&uf.c - &expect).norm() < 1e-14);
            assert_eq!(uf.c, uf.c_bar);
        }
    }

    #[test]
    fn mimo_dimensions_and_rank() {
        let cfg = NetworkConfig::uniform(NetworkKind::Mimo, 2, vec![1, 1], 1.0, 0.25, 0.25)
            .with_total_budget(10.0)
            .validate()
            .unwrap();
        let forms = build_forms(&cfg, &sample_channels(&cfg, 1)).unwrap();
        assert_eq!(forms.dim, 4);
        for m in forms.matrices() {
            assert_eq!(m.shape(), (4, 4));
        }
        for u in &forms.users {
            let (vals, _) = eigh(&u.a);
            assert!(vals[1] <= 1e-9 * vals[0]);
        }
    }

    #[test]
    fn matrices_hermitian_psd_rank_one_numerators() {
        for kind in [NetworkKind::Distributed, NetworkKind::Mimo] {
            let cfg = small(kind, vec![2, 1]);
            for seed in 0..5 {
                let forms = build_forms(&cfg, &sample_channels(&cfg, seed)).unwrap();
                for m in forms.matrices() {
                    assert!(hermitian_asymmetry(m) <= 1e-12);
                    let (vals, _) = eigh(m);
                    assert!(*vals.last().unwrap() >= -1e-9, "{kind:?} min eig {vals:?}");
                }
                for u in &forms.users {
                    for a in [&u.a, &u.a_bar] {
                        let (vals, _) = eigh(a);
                        assert!(vals[1] <= 1e-9 * vals[0]);
                    }
                }
            }
        }
    }

    #[test]
    fn distributed_power_matrices_diagonal_positive() {
        let cfg = small(NetworkKind::Distributed, vec![1, 1]);
        let forms = build_forms(&cfg, &sample_channels(&cfg, 11)).unwrap();
        let d0 = &forms.constraints[0].r;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(d0[(i, j)], ZERO);
                }
            }
            assert!(d0[(i, i)].re > 0.0);
        }
        assert_eq!(forms.constraints[0].r, forms.constraints[0].r_bar);
        let d1 = &forms.constraints[1].r;
        assert_eq!(forms.constraints[1].kind, ConstraintKind::PerRelay(0));
        assert_eq!(d1[(0, 0)], d0[(0, 0)]);
        assert_eq!(d1[(1, 1)], ZERO);
    }

    #[test]
    fn gamma_and_theta_basics() {
        let cfg = small(NetworkKind::Distributed, vec![2, 1]);
        let forms = build_forms(&cfg, &sample_channels(&cfg, 2)).unwrap();
        let zero = forms.zero();
        assert_eq!(eval_gamma(&forms, &zero), 0.0);
        assert_eq!(eval_theta(&forms, &zero, &zero), 0.0);
        let w = CVec::from_vec(vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.4), C64::new(0.5, 0.0)]);
        let ww = outer(&w);
        assert!((eval_theta(&forms, &ww, &zero) - eval_gamma(&forms, &ww)).abs() < 1e-14);
        let direct = forms
            .users
            .iter()
            .map(|u| quad(&u.a, &w) / (quad(&u.c, &w) + 1.0))
            .fold(f64::INFINITY, f64::min);
        assert!((eval_gamma(&forms, &ww) - direct).abs() < 1e-12);
        let zero_vec = CVec::zeros(3);
        let per_user = sinr_per_user(&forms, &w, &zero_vec);
        let min = per_user.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((min - eval_gamma(&forms, &ww)).abs() < 1e-12);
    }

    #[test]
    fn one_user_identity_trace_arithmetic() {
        let eye = CMat::identity(2, 2);
        let forms = ProblemForms {
            kind: NetworkKind::Distributed,
            dim: 2,
            users: vec![UserForms { group: 0, index: 0, a: eye.clone(), a_bar: CMat::zeros(2, 2), c: CMat::zeros(2, 2), c_bar: CMat::zeros(2, 2) }],
            constraints: vec![],
        };
        assert_eq!(eval_gamma(&forms, &eye), 2.0);
    }

    #[test]
    fn total_power_usage_trace_arithmetic() {
        let cfg = NetworkConfig::uniform(NetworkKind::Distributed, 4, vec![2, 2], 1.0, 0.25, 0.25)
            .with_total_budget(10.0)
            .validate()
            .unwrap();
        let forms = build_forms(&cfg, &sample_channels(&cfg, 5)).unwrap();
        let tr = crate::linalg::trace_re(&forms.constraints[0].r);
        let w = CMat::identity(4, 4).scale(10.0 / (2.0 * tr));
        let usage = constraint_usage(&forms, &w, &w);
        assert!((usage[0] - 10.0).abs() < 1e-12);
        assert_eq!(constraint_usage(&forms, &forms.zero(), &forms.zero()), vec![0.0]);
    }

    #[test]
    fn mimo_diagonal_beamformer_matches_distributed() {
        let dist = small(NetworkKind::Distributed, vec![2, 1]);
        let mut mimo_cfg = dist.clone().into_inner();
        mimo_cfg.kind = NetworkKind::Mimo;
        let mimo = mimo_cfg.validate().unwrap();
        let ch = sample_channels(&dist, 8);
        let fd = build_forms(&dist, &ch).unwrap();
        let fm = build_forms(&mimo, &ch).unwrap();
        let w = CVec::from_vec(vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.4), C64::new(0.5, -0.7)]);
        // vec(Diag(w)), column-major
        let v = CVec::from_fn(9, |k, _| if k % 4 == 0 { w[k / 4] } else { ZERO });
        for (ud, um) in fd.users.iter().zip(&fm.users) {
            for (xd, xm) in [(&ud.a, &um.a), (&ud.a_bar, &um.a_bar), (&ud.c, &um.c), (&ud.c_bar, &um.c_bar)] {
                assert!((quad(xd, &w) - quad(xm, &v)).abs() < 1e-10);
            }
        }
        for (cd, cm) in fd.constraints.iter().zip(&fm.constraints) {
            assert!((quad(&cd.r, &w) - quad(&cm.r, &v)).abs() < 1e-10);
            assert!((quad(&cd.r_bar, &w) - quad(&cm.r_bar, &v)).abs() < 1e-10);
        }
    }

    #[test]
    fn unit_phase_on_user_channel_leaves_forms_unchanged() {
        let cfg = small(NetworkKind::Mimo, vec![1, 1]);
        let ch = sample_channels(&cfg, 4);
        let mut rotated = ch.clone();
        let phase = C64::from_polar(1.0, 1.234);
        for g in rotated.g.iter_mut() {
            *g *= phase;
        }
        let f0 = build_forms(&cfg, &ch).unwrap();
        let f1 = build_forms(&cfg, &rotated).unwrap();
        let w = CVec::from_fn(9, |k, _| C64::new(k as f64 * 0.1, 1.0 - k as f64 * 0.05));
        for (a, b) in f0.users.iter().zip(&f1.users) {
            assert!((quad(&a.a, &w) - quad(&b.a, &w)).abs() < 1e-10);
            assert!((quad(&a.c, &w) - quad(&b.c, &w)).abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_reported() {
        let cfg = small(NetworkKind::Distributed, vec![2]);
        let mut ch = sample_channels(&cfg, 0);
        ch.g.pop();
        assert!(matches!(build_forms(&cfg, &ch), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn binary_dump_round_trip() {
        let cfg = small(NetworkKind::Mimo, vec![1, 1]);
        let forms = build_forms(&cfg, &sample_channels(&cfg, 6)).unwrap();
        let mut buf = Vec::new();
        forms.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"AFQF");
        assert_eq!(ProblemForms::read_binary(buf.as_slice()).unwrap(), forms);
        let m = &forms.users[0].a;
        assert_eq!(matrix_from_json(&matrix_to_json(m)).unwrap(), *m);
    }
}
