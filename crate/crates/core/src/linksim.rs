//! Symbol-level simulation of the two-hop AF chain with Gray-coded QPSK.
//!
//! BF: `r = sum_j f_j s_j + n`, `x = V r`, `y = g^H x + mu`.
//! BFA: per symbol pair the relays send `x1 = V1 r1 - V2 conj(r2)` and
//! `x2 = V1 r2 + V2 conj(r1)`, i.e. relay `l` transmits
//! `sum_c [V1_lc, V2_lc] C(r^c)` with the Alamouti block `C`. Receivers know
//! their effective coefficients and treat interference as noise.

use nalgebra::Matrix2;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{complex_normal, CMat, CVec, C64};
use crate::network::{ChannelSet, NetworkKind, ValidatedConfig};
use crate::par::{chunks, item_rng, Exec};

/// The 2x2 Alamouti codeword `[[x1, x2], [-conj(x2), conj(x1)]]`.
pub type AlamoutiBlock = Matrix2<C64>;

pub fn alamouti_encode(x1: C64, x2: C64) -> AlamoutiBlock {
    Matrix2::new(x1, x2, -x2.conj(), x1.conj())
}

/// Relay weighting matrix for a stacked beamformer: `Diag(w)` for
/// distributed relays, the column-major reshape of `w` for MIMO relays.
pub fn weights_from_vector(kind: NetworkKind, relays: usize, w: &CVec) -> Result<CMat> {
    if w.len() != kind.dim(relays) {
        return Err(Error::DimensionMismatch(format!("beamformer has length {}, expected {}", w.len(), kind.dim(relays))));
    }
    Ok(match kind {
        NetworkKind::Distributed => CMat::from_diagonal(w),
        NetworkKind::Mimo => CMat::from_column_slice(relays, relays, w.as_slice()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserLinkStats {
    pub user_index: usize,
    pub sinr_analytic: f64,
    pub sinr_empirical: f64,
    pub ber: f64,
    pub bit_errors: u64,
    pub bits: u64,
    /// BFA only: power of the other symbol of the pair in a combiner output,
    /// relative to the wanted symbol's.
    pub cross_leakage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkRunResult {
    pub users: Vec<UserLinkStats>,
    /// Symbols per user (two per pair for BFA).
    pub n_sym: usize,
    pub seed: u64,
    /// Mean of `||x||^2` per slot.
    pub relay_power_empirical: f64,
    /// `E ||x||^2` from the weights and signal covariance.
    pub relay_power_analytic: f64,
}

impl LinkRunResult {
    /// Rows `user_index,sinr_analytic,sinr_empirical,ber,n_sym,seed`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_index", "sinr_analytic", "sinr_empirical", "ber", "n_sym", "seed"])?;
        for u in &self.users {
            w.serialize((u.user_index, u.sinr_analytic, u.sinr_empirical, u.ber, self.n_sym, self.seed))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_weights(cfg: &ValidatedConfig, v: &CMat) -> Result<()> {
    let l = cfg.relays;
    if v.nrows() != l || v.ncols() != l {
        return Err(Error::DimensionMismatch(format!("weighting matrix is {}x{}, expected {l}x{l}", v.nrows(), v.ncols())));
    }
    if cfg.kind == NetworkKind::Distributed {
        let off = (0..l).flat_map(|i| (0..l).map(move |j| (i, j))).filter(|(i, j)| i != j).any(|(i, j)| v[(i, j)].norm() > 0.0);
        if off {
            return Err(Error::Precondition("distributed relays need a diagonal weighting matrix".into()));
        }
    }
    Ok(())
}

/// `E ||V r||^2` for `r` with covariance `sum_j P_j f_j f_j^H + Sigma`.
fn relay_power(cfg: &ValidatedConfig, ch: &ChannelSet, v: &CMat, conjugate: bool) -> f64 {
    let mut p: f64 = (0..cfg.relays).map(|c| cfg.relay_noise[c] * v.column(c).norm_squared()).sum();
    for (j, f) in ch.f.iter().enumerate() {
        let f = if conjugate { f.conjugate() } else { f.clone() };
        p += cfg.tx_power[j] * (v * f).norm_squared();
    }
    p
}

/// `g^H x`.
fn project(g: &CVec, x: &CVec) -> C64 {
    g.dotc(x)
}

fn qpsk<R: Rng + ?Sized>(rng: &mut R, amplitude: f64) -> (C64, [bool; 2]) {
    let bits = [rng.random::<bool>(), rng.random::<bool>()];
    let level = |b: bool| if b { -1.0 } else { 1.0 };
    let s = C64::new(level(bits[0]), level(bits[1])) * (amplitude / std::f64::consts::SQRT_2);
    (s, bits)
}

fn bit_errors(z: C64, bits: [bool; 2]) -> u64 {
    ((z.re < 0.0) != bits[0]) as u64 + ((z.im < 0.0) != bits[1]) as u64
}

/// Sufficient statistics of one user over a batch of symbols.
#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    ys: C64,
    ss: f64,
    yy: f64,
    /// correlations with the other symbol of the pair
    yo: C64,
    so: C64,
    oo: f64,
    errors: u64,
    n: u64,
}

impl Acc {
    fn push(&mut self, y: C64, s: C64, other: Option<C64>, errors: u64) {
        self.ys += y * s.conj();
        self.ss += s.norm_sqr();
        self.yy += y.norm_sqr();
        if let Some(o) = other {
            self.yo += y * o.conj();
            self.so += s * o.conj();
            self.oo += o.norm_sqr();
        }
        self.errors += errors;
        self.n += 1;
    }

    fn merge(&mut self, o: &Acc) {
        self.ys += o.ys;
        self.ss += o.ss;
        self.yy += o.yy;
        self.yo += o.yo;
        self.so += o.so;
        self.oo += o.oo;
        self.errors += o.errors;
        self.n += o.n;
    }

    /// Projection estimate of the SINR of `y = h s + e`, with the bias of
    /// `|h_hat|^2` removed and clamped at 0.
    /// `|beta|^2 / |h_hat|^2` where `beta` regresses the residual
    /// `y - h_hat s` on the other symbol.
    fn leakage(&self) -> f64 {
        if self.ss == 0.0 || self.oo == 0.0 {
            return 0.0;
        }
        let h = self.ys / self.ss;
        if h.norm_sqr() == 0.0 {
            return 0.0;
        }
        let beta = (self.yo - h * self.so) / self.oo;
        beta.norm_sqr() / h.norm_sqr()
    }

    fn sinr(&self) -> f64 {
        if self.ss == 0.0 || self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let explained = self.ys.norm_sqr() / self.ss;
        let noise = ((self.yy - explained) / (n - 1.0)).max(0.0);
        if noise == 0.0 {
            return if explained > 0.0 { f64::INFINITY } else { 0.0 };
        }
        ((explained - noise) / n).max(0.0) / noise
    }
}

struct Batch {
    users: Vec<Acc>,
    power: f64,
    slots: u64,
}

fn reduce(batches: Vec<Batch>, n_users: usize) -> (Vec<Acc>, f64, u64) {
    let mut users = vec![Acc::default(); n_users];
    let mut power = 0.0;
    let mut slots = 0;
    for b in &batches {
        for (u, a) in users.iter_mut().zip(&b.users) {
            u.merge(a);
        }
        power += b.power;
        slots += b.slots;
    }
    (users, power, slots)
}

fn relay_receive<R: Rng + ?Sized>(cfg: &ValidatedConfig, ch: &ChannelSet, symbols: &[C64], rng: &mut R) -> CVec {
    let mut r = CVec::from_fn(cfg.relays, |l, _| complex_normal(rng) * cfg.relay_noise[l].sqrt());
    for (f, s) in ch.f.iter().zip(symbols) {
        r += f * *s;
    }
    r
}

fn user_noise<R: Rng + ?Sized>(cfg: &ValidatedConfig, u: usize, rng: &mut R) -> C64 {
    complex_normal(rng) * cfg.user_noise[u].sqrt()
}

/// Rank-one BF link over `n_sym` symbols.
pub fn simulate_bf(cfg: &ValidatedConfig, ch: &ChannelSet, v: &CMat, n_sym: usize, seed: u64) -> Result<LinkRunResult> {
    simulate_bf_with(cfg, ch, v, n_sym, seed, Exec::default())
}

pub fn simulate_bf_with(cfg: &ValidatedConfig, ch: &ChannelSet, v: &CMat, n_sym: usize, seed: u64, exec: Exec) -> Result<LinkRunResult> {
    ch.check(cfg)?;
    check_weights(cfg, v)?;
    let labels = cfg.user_labels();
    let amplitudes: Vec<f64> = cfg.tx_power.iter().map(|p| p.sqrt()).collect();
    // effective desired coefficient g^H V f_k per user
    let coef: Vec<C64> = labels.iter().enumerate().map(|(u, &(k, _))| project(&ch.g[u], &(v * &ch.f[k]))).collect();

    let sizes = chunks(n_sym);
    let batches = exec.map(sizes.len(), |b| {
        let mut rng = item_rng(seed, b as u64);
        let mut users = vec![Acc::default(); labels.len()];
        let mut power = 0.0;
        for _ in 0..sizes[b] {
            let drawn: Vec<(C64, [bool; 2])> = amplitudes.iter().map(|&a| qpsk(&mut rng, a)).collect();
            let symbols: Vec<C64> = drawn.iter().map(|d| d.0).collect();
            let x = v * relay_receive(cfg, ch, &symbols, &mut rng);
            power += x.norm_squared();
            for (u, &(k, _)) in labels.iter().enumerate() {
                let y = project(&ch.g[u], &x) + user_noise(cfg, u, &mut rng);
                let z = if coef[u].norm() > 0.0 { y * coef[u].conj() } else { y };
                users[u].push(y, symbols[k], None, bit_errors(z, drawn[k].1));
            }
        }
        Batch { users, power, slots: sizes[b] as u64 }
    });
    let (accs, power, slots) = reduce(batches, labels.len());

    let noise_dir = v.adjoint();
    let users = labels
        .iter()
        .enumerate()
        .map(|(u, &(k, _))| {
            let g = &ch.g[u];
            let gains: Vec<f64> = ch.f.iter().enumerate().map(|(j, f)| cfg.tx_power[j] * project(g, &(v * f)).norm_sqr()).collect();
            let p = &noise_dir * g;
            let relay: f64 = (0..cfg.relays).map(|c| cfg.relay_noise[c] * p[c].norm_sqr()).sum();
            let interference: f64 = gains.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, x)| x).sum();
            stats(u, gains[k] / (interference + relay + cfg.user_noise[u]), &accs[u], false)
        })
        .collect();
    Ok(LinkRunResult {
        users,
        n_sym,
        seed,
        relay_power_empirical: if slots > 0 { power / slots as f64 } else { 0.0 },
        relay_power_analytic: relay_power(cfg, ch, v, false),
    })
}

fn stats(u: usize, sinr_analytic: f64, acc: &Acc, pairs: bool) -> UserLinkStats {
    let bits = 2 * acc.n;
    UserLinkStats {
        user_index: u,
        sinr_analytic,
        sinr_empirical: acc.sinr(),
        ber: if bits > 0 { acc.errors as f64 / bits as f64 } else { 0.0 },
        bit_errors: acc.errors,
        bits,
        cross_leakage: pairs.then(|| acc.leakage()),
    }
}

/// Effective 2x2 channel `[[a, -b], [conj b, conj a]]` seen by user `u`
/// for the symbol pair of group `j`, acting on `[s1, conj s2]` and producing
/// `[y1, conj y2]`.
pub fn alamouti_channel(ch: &ChannelSet, v1: &CMat, v2: &CMat, u: usize, j: usize) -> Matrix2<C64> {
    let g = &ch.g[u];
    let a = project(g, &(v1 * &ch.f[j]));
    let b = project(g, &(v2 * ch.f[j].conjugate()));
    Matrix2::new(a, -b, b.conj(), a.conj())
}

/// Beamformed-Alamouti link over `n_pairs` symbol pairs.
pub fn simulate_bfa(cfg: &ValidatedConfig, ch: &ChannelSet, v1: &CMat, v2: &CMat, n_pairs: usize, seed: u64) -> Result<LinkRunResult> {
    simulate_bfa_with(cfg, ch, v1, v2, n_pairs, seed, Exec::default())
}

pub fn simulate_bfa_with(
    cfg: &ValidatedConfig,
    ch: &ChannelSet,
    v1: &CMat,
    v2: &CMat,
    n_pairs: usize,
    seed: u64,
    exec: Exec,
) -> Result<LinkRunResult> {
    ch.check(cfg)?;
    check_weights(cfg, v1)?;
    check_weights(cfg, v2)?;
    let labels = cfg.user_labels();
    let amplitudes: Vec<f64> = cfg.tx_power.iter().map(|p| p.sqrt()).collect();
    let eff: Vec<(C64, C64)> = labels
        .iter()
        .enumerate()
        .map(|(u, &(k, _))| {
            let h = alamouti_channel(ch, v1, v2, u, k);
            (h[(0, 0)], -h[(0, 1)])
        })
        .collect();

    let sizes = chunks(n_pairs);
    let batches = exec.map(sizes.len(), |b| {
        let mut rng = item_rng(seed, b as u64);
        let mut users = vec![Acc::default(); labels.len()];
        let mut power = 0.0;
        for _ in 0..sizes[b] {
            let first: Vec<(C64, [bool; 2])> = amplitudes.iter().map(|&a| qpsk(&mut rng, a)).collect();
            let second: Vec<(C64, [bool; 2])> = amplitudes.iter().map(|&a| qpsk(&mut rng, a)).collect();
            let s1: Vec<C64> = first.iter().map(|d| d.0).collect();
            let s2: Vec<C64> = second.iter().map(|d| d.0).collect();
            let r1 = relay_receive(cfg, ch, &s1, &mut rng);
            let r2 = relay_receive(cfg, ch, &s2, &mut rng);
            // relay l sends sum_c [V1_lc, V2_lc] C(r^c)
            let mut x1 = CVec::zeros(cfg.relays);
            let mut x2 = CVec::zeros(cfg.relays);
            for c in 0..cfg.relays {
                let block = alamouti_encode(r1[c], r2[c]);
                for l in 0..cfg.relays {
                    let row = nalgebra::RowVector2::new(v1[(l, c)], v2[(l, c)]) * block;
                    x1[l] += row[0];
                    x2[l] += row[1];
                }
            }
            power += x1.norm_squared() + x2.norm_squared();
            for (u, &(k, _)) in labels.iter().enumerate() {
                let y1 = project(&ch.g[u], &x1) + user_noise(cfg, u, &mut rng);
                let y2 = project(&ch.g[u], &x2) + user_noise(cfg, u, &mut rng);
                let (a, bb) = eff[u];
                let c1 = a.conj() * y1 + bb * y2.conj();
                let c2 = -bb * y1.conj() + a.conj() * y2;
                users[u].push(c1, s1[k], Some(s2[k]), bit_errors(c1, first[k].1));
                users[u].push(c2, s2[k], Some(s1[k]), bit_errors(c2, second[k].1));
            }
        }
        Batch { users, power, slots: 2 * sizes[b] as u64 }
    });
    let (accs, power, slots) = reduce(batches, labels.len());

    let users = labels
        .iter()
        .enumerate()
        .map(|(u, &(k, _))| {
            let g = &ch.g[u];
            let gains: Vec<f64> = (0..cfg.groups())
                .map(|j| {
                    let h = alamouti_channel(ch, v1, v2, u, j);
                    cfg.tx_power[j] * (h[(0, 0)].norm_sqr() + h[(0, 1)].norm_sqr())
                })
                .collect();
            let p = v1.adjoint() * g;
            let q = v2.adjoint() * g;
            let relay: f64 = (0..cfg.relays).map(|c| cfg.relay_noise[c] * (p[c].norm_sqr() + q[c].norm_sqr())).sum();
            let interference: f64 = gains.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, x)| x).sum();
            stats(u, gains[k] / (interference + relay + cfg.user_noise[u]), &accs[u], true)
        })
        .collect();
    Ok(LinkRunResult {
        users,
        n_sym: 2 * n_pairs,
        seed,
        relay_power_empirical: if slots > 0 { power / slots as f64 } else { 0.0 },
        relay_power_analytic: relay_power(cfg, ch, v1, false) + relay_power(cfg, ch, v2, true),
    })
}
