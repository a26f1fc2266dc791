//! Small dense primal-dual interior-point solver for block SDPs.
//!
//! Solves
//!
//! ```text
//!   min  sum_k C_k . X_k + c_lp' x + c_free' u
//!   s.t. sum_k A_ik . X_k + a_i' x + b_i' u = rhs_i      i = 1..m
//!        X_k PSD, x >= 0, u free
//! ```
//!
//! with an infeasible-start path-following method: HKM search direction,
//! Mehrotra predictor-corrector, separate primal and dual step lengths.
//! Free variables enter the Newton system through a bordered Schur
//! complement instead of being split into two nonnegative parts.

use nalgebra::{DMatrix, DVector};

pub(crate) type RMat = DMatrix<f64>;

#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    /// One entry per PSD block; `None` is a zero block.
    pub psd: Vec<Option<RMat>>,
    pub lp: Vec<(usize, f64)>,
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub psd_dims: Vec<usize>,
    pub n_lp: usize,
    pub n_free: usize,
    pub cons: Vec<Constraint>,
    pub obj_psd: Vec<Option<RMat>>,
    pub obj_lp: Vec<f64>,
    pub obj_free: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub tol: f64,
    /// Accepted when the run stalls before reaching `tol`.
    pub fallback_tol: f64,
    pub max_iter: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { tol: 1e-9, fallback_tol: 1e-6, max_iter: 120 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub psd: Vec<RMat>,
    pub free: DVector<f64>,
    #[allow(dead_code)]
    pub primal_obj: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Failure {
    pub reason: String,
    pub iterations: usize,
    pub residuals: [f64; 3],
}

struct Iterate {
    x: Vec<RMat>,
    z: Vec<RMat>,
    xl: DVector<f64>,
    zl: DVector<f64>,
    u: DVector<f64>,
    y: DVector<f64>,
}

struct Direction {
    dx: Vec<RMat>,
    dz: Vec<RMat>,
    dxl: DVector<f64>,
    dzl: DVector<f64>,
    du: DVector<f64>,
    dy: DVector<f64>,
}

fn dot(a: &RMat, b: &RMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn sym(m: RMat) -> RMat {
    let t = m.transpose();
    (m + t) * 0.5
}

fn inverse_spd(m: &RMat) -> Option<RMat> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// Largest step `a` in (0, inf] keeping `x + a dx` positive definite.
fn max_step_psd(x: &RMat, dx: &RMat) -> f64 {
    let Some(chol) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = chol.l();
    let Some(linv) = l.clone().try_inverse() else {
        return 0.0;
    };
    let s = sym(&linv * dx * linv.transpose());
    let min = s.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        -1.0 / min
    } else {
        f64::INFINITY
    }
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

struct Scaled<'a> {
    p: &'a Problem,
    row_scale: Vec<f64>,
}

impl Scaled<'_> {
    fn a_psd(&self, i: usize, k: usize) -> Option<RMat> {
        self.p.cons[i].psd[k].as_ref().map(|m| m * self.row_scale[i])
    }
}

pub(crate) fn solve(p: &Problem, settings: Settings) -> Result<Solution, Failure> {
    let m = p.cons.len();
    let nb = p.psd_dims.len();
    let nl = p.n_lp;
    let nf = p.n_free;

    // row scaling: every constraint gets unit norm (or less)
    let row_scale: Vec<f64> = p
        .cons
        .iter()
        .map(|c| {
            let mut s: f64 = c.psd.iter().flatten().map(|a| a.norm_squared()).sum();
            s += c.lp.iter().map(|(_, v)| v * v).sum::<f64>();
            s += c.free.iter().map(|(_, v)| v * v).sum::<f64>();
            1.0 / s.sqrt().max(1.0)
        })
        .collect();
    let sp = Scaled { p, row_scale };

    let a: Vec<Vec<Option<RMat>>> = (0..m).map(|i| (0..nb).map(|k| sp.a_psd(i, k)).collect()).collect();
    let a_lp = DMatrix::<f64>::from_fn(m, nl, |i, j| {
        p.cons[i].lp.iter().filter(|(idx, _)| *idx == j).map(|(_, v)| v).sum::<f64>() * sp.row_scale[i]
    });
    let a_free = DMatrix::<f64>::from_fn(m, nf, |i, j| {
        p.cons[i].free.iter().filter(|(idx, _)| *idx == j).map(|(_, v)| v).sum::<f64>() * sp.row_scale[i]
    });
    let b = DVector::from_fn(m, |i, _| p.cons[i].rhs * sp.row_scale[i]);
    let c: Vec<RMat> = (0..nb)
        .map(|k| p.obj_psd[k].clone().unwrap_or_else(|| RMat::zeros(p.psd_dims[k], p.psd_dims[k])))
        .collect();
    let c_lp = DVector::from_vec(p.obj_lp.clone());
    let c_free = DVector::from_vec(p.obj_free.clone());

    let nu = (p.psd_dims.iter().sum::<usize>() + nl) as f64;
    let n_max = p.psd_dims.iter().copied().max().unwrap_or(1).max(1) as f64;

    let a_norms: Vec<f64> = (0..m)
        .map(|i| {
            let mut s: f64 = a[i].iter().flatten().map(|x| x.norm_squared()).sum();
            s += a_lp.row(i).norm_squared();
            s.sqrt()
        })
        .collect();
    let c_norm = (c.iter().map(|x| x.norm_squared()).sum::<f64>() + c_lp.norm_squared() + c_free.norm_squared()).sqrt();
    let xi = (0..m)
        .map(|i| n_max * (1.0 + b[i].abs()) / (1.0 + a_norms[i]))
        .fold(10f64.max(n_max.sqrt()), f64::max);
    let eta = a_norms.iter().copied().fold(10f64.max(n_max.sqrt()).max(c_norm), f64::max);

    let mut it = Iterate {
        x: p.psd_dims.iter().map(|&n| RMat::identity(n, n) * xi).collect(),
        z: p.psd_dims.iter().map(|&n| RMat::identity(n, n) * eta).collect(),
        xl: DVector::from_element(nl, xi),
        zl: DVector::from_element(nl, eta),
        u: DVector::zeros(nf),
        y: DVector::zeros(m),
    };

    let b_norm = 1.0 + b.norm();
    let c_scale = 1.0 + c_norm;
    let mut last = [f64::INFINITY; 3];

    for iter in 0..settings.max_iter {
        // residuals
        let mut ax = DVector::<f64>::zeros(m);
        for i in 0..m {
            let mut s = 0.0;
            for k in 0..nb {
                if let Some(aik) = &a[i][k] {
                    s += dot(aik, &it.x[k]);
                }
            }
            ax[i] = s;
        }
        ax += &a_lp * &it.xl + &a_free * &it.u;
        let rp = &b - &ax;
        let rd: Vec<RMat> = (0..nb)
            .map(|k| {
                let mut r = &c[k] - &it.z[k];
                for i in 0..m {
                    if let Some(aik) = &a[i][k] {
                        r -= aik * it.y[i];
                    }
                }
                r
            })
            .collect();
        let rd_lp = &c_lp - &it.zl - a_lp.transpose() * &it.y;
        let rf = &c_free - a_free.transpose() * &it.y;

        let pobj: f64 = (0..nb).map(|k| dot(&c[k], &it.x[k])).sum::<f64>() + c_lp.dot(&it.xl) + c_free.dot(&it.u);
        let dobj = b.dot(&it.y);
        let gap: f64 = (0..nb).map(|k| dot(&it.x[k], &it.z[k])).sum::<f64>() + it.xl.dot(&it.zl);
        let mu = gap / nu;

        let pinf = rp.norm() / b_norm;
        let dinf = ((rd.iter().map(|r| r.norm_squared()).sum::<f64>() + rd_lp.norm_squared() + rf.norm_squared()).sqrt()) / c_scale;
        let rel_gap = gap.max((pobj - dobj).abs()) / (1.0 + pobj.abs() + dobj.abs());
        last = [rel_gap, pinf, dinf];

        if rel_gap < settings.tol && pinf < settings.tol && dinf < settings.tol {
            return Ok(finish(it, pobj, iter));
        }

        let zinv: Vec<RMat> = match it.z.iter().map(inverse_spd).collect::<Option<Vec<_>>>() {
            Some(v) => v,
            None => return stall(it, pobj, iter, last, settings, "dual iterate lost definiteness"),
        };

        // Schur complement M_ij = sum_k A_ik . (X_k A_jk Z_k^-1) + lp part
        let mut schur = RMat::zeros(m, m);
        for k in 0..nb {
            for j in 0..m {
                let Some(ajk) = &a[j][k] else { continue };
                let g = &it.x[k] * ajk * &zinv[k];
                for i in 0..=j {
                    if let Some(aik) = &a[i][k] {
                        let v = dot(aik, &g);
                        schur[(i, j)] += v;
                        if i != j {
                            schur[(j, i)] += v;
                        }
                    }
                }
            }
        }
        let ratio = it.xl.component_div(&it.zl);
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for l in 0..nl {
                    s += a_lp[(i, l)] * a_lp[(j, l)] * ratio[l];
                }
                schur[(i, j)] += s;
            }
        }
        let schur = sym(schur);

        // bordered system [M B; B' 0]
        let dim = m + nf;
        let mut kkt = RMat::zeros(dim, dim);
        kkt.view_mut((0, 0), (m, m)).copy_from(&schur);
        kkt.view_mut((0, m), (m, nf)).copy_from(&a_free);
        kkt.view_mut((m, 0), (nf, m)).copy_from(&a_free.transpose());
        let lu = kkt.clone().lu();

        let solve_dir = |k_psd: &[RMat], k_lp: &DVector<f64>| -> Option<Direction> {
            let mut h = rp.clone();
            for k in 0..nb {
                let t = &k_psd[k] - &it.x[k] * &rd[k] * &zinv[k];
                for i in 0..m {
                    if let Some(aik) = &a[i][k] {
                        h[i] -= dot(aik, &t);
                    }
                }
            }
            let t_lp = k_lp - ratio.component_mul(&rd_lp);
            h -= &a_lp * t_lp;
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, m).copy_from(&h);
            rhs.rows_mut(m, nf).copy_from(&rf);
            let sol = lu.solve(&rhs)?;
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let dy = sol.rows(0, m).into_owned();
            let du = sol.rows(m, nf).into_owned();
            let dz: Vec<RMat> = (0..nb)
                .map(|k| {
                    let mut d = rd[k].clone();
                    for i in 0..m {
                        if let Some(aik) = &a[i][k] {
                            d -= aik * dy[i];
                        }
                    }
                    d
                })
                .collect();
            let dzl = &rd_lp - a_lp.transpose() * &dy;
            let dx: Vec<RMat> = (0..nb).map(|k| sym(&k_psd[k] - &it.x[k] * &dz[k] * &zinv[k])).collect();
            let dxl = k_lp - ratio.component_mul(&dzl);
            Some(Direction { dx, dz, dxl, dzl, du, dy })
        };

        let steps = |d: &Direction| -> (f64, f64) {
            let mut ap = max_step_lp(&it.xl, &d.dxl);
            let mut ad = max_step_lp(&it.zl, &d.dzl);
            for k in 0..nb {
                ap = ap.min(max_step_psd(&it.x[k], &d.dx[k]));
                ad = ad.min(max_step_psd(&it.z[k], &d.dz[k]));
            }
            (ap, ad)
        };

        // predictor
        let k_pred: Vec<RMat> = it.x.iter().map(|x| -x).collect();
        let k_pred_lp = -&it.xl;
        let Some(pred) = solve_dir(&k_pred, &k_pred_lp) else {
            return stall(it, pobj, iter, last, settings, "singular Newton system");
        };
        let (ap, ad) = steps(&pred);
        let (ap1, ad1) = (ap.min(1.0), ad.min(1.0));
        let mut gap_aff = 0.0;
        for k in 0..nb {
            gap_aff += dot(&(&it.x[k] + &pred.dx[k] * ap1), &(&it.z[k] + &pred.dz[k] * ad1));
        }
        gap_aff += (&it.xl + &pred.dxl * ap1).dot(&(&it.zl + &pred.dzl * ad1));
        let sigma = if gap > 0.0 { (gap_aff.max(0.0) / gap).powi(3).min(1.0) } else { 0.0 };

        // corrector
        let k_corr: Vec<RMat> = (0..nb)
            .map(|k| &zinv[k] * (sigma * mu) - &it.x[k] - &pred.dx[k] * &pred.dz[k] * &zinv[k])
            .collect();
        let k_corr_lp = DVector::from_fn(nl, |l, _| (sigma * mu - pred.dxl[l] * pred.dzl[l]) / it.zl[l] - it.xl[l]);
        let Some(dir) = solve_dir(&k_corr, &k_corr_lp) else {
            return stall(it, pobj, iter, last, settings, "singular Newton system");
        };
        let (ap, ad) = steps(&dir);
        let tau = 0.9 + 0.09 * ap1.min(ad1);
        let ap = (tau * ap).min(1.0);
        let ad = (tau * ad).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            return stall(it, pobj, iter, last, settings, "step length collapsed");
        }

        for k in 0..nb {
            it.x[k] = sym(&it.x[k] + &dir.dx[k] * ap);
            it.z[k] = sym(&it.z[k] + &dir.dz[k] * ad);
        }
        it.xl += &dir.dxl * ap;
        it.u += &dir.du * ap;
        it.zl += &dir.dzl * ad;
        it.y += &dir.dy * ad;
    }

    let pobj: f64 = (0..nb).map(|k| dot(&c[k], &it.x[k])).sum::<f64>() + c_lp.dot(&it.xl) + c_free.dot(&it.u);
    stall(it, pobj, settings.max_iter, last, settings, "iteration limit")
}

fn finish(it: Iterate, pobj: f64, iterations: usize) -> Solution {
    Solution { psd: it.x, free: it.u, primal_obj: pobj, iterations }
}

fn stall(
    it: Iterate,
    pobj: f64,
    iterations: usize,
    residuals: [f64; 3],
    settings: Settings,
    reason: &str,
) -> Result<Solution, Failure> {
    if residuals.iter().all(|r| *r < settings.fallback_tol) {
        Ok(finish(it, pobj, iterations))
    } else {
        Err(Failure { reason: reason.to_string(), iterations, residuals })
    }
}
