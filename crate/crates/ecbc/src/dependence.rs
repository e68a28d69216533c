//! Closed-form multivariate dependence measures from a fitted model, the
//! empirical-copula comparator, and a Monte Carlo fallback for functionals
//! without a closed form.

use serde::{Deserialize, Serialize};

use crate::ecbc::{for_each_cell, EcbcModel};
use crate::error::{Error, Result};
use crate::numeric::ln_factorial;
use crate::ranks::RankMatrix;
use crate::sampling::sample_ecbc;

/// Dependence summary serialized by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DependenceReport {
    pub rho_ecbc: f64,
    pub rho_empirical: f64,
    pub tau_ecbc: Option<f64>,
    pub rho_lower_bound: f64,
    pub d: usize,
}

/// Attainable range of multivariate Spearman's rho in dimension `d`:
/// lower = (2^d - (d+1)!) / (d! (2^d - d - 1)), upper = 1.
pub fn rho_bounds(d: usize) -> Result<(f64, f64)> {
    if d < 2 {
        return Err(Error::InvalidInput("rho bounds need d >= 2".into()));
    }
    let two_d = (2.0f64).powi(d as i32);
    let fact_d = (ln_factorial(d as u64)).exp().round();
    let fact_d1 = (ln_factorial(d as u64 + 1)).exp().round();
    let lower = (two_d - fact_d1) / (fact_d * (two_d - d as f64 - 1.0));
    Ok((lower, 1.0))
}

fn rho_norm(d: usize) -> f64 {
    let two_d = (2.0f64).powi(d as i32);
    (d as f64 + 1.0) / (two_d - d as f64 - 1.0)
}

/// Multivariate Spearman's rho of the fitted copula, in closed form.
///
/// The integral of the smoothed copula collapses dimension-by-dimension
/// because binom(m,k) B(k+1, m-k+1) = 1/(m+1), leaving
/// (1/n) sum_i prod_j [sum_k g_ij(k)] / (m_j + 1).
pub fn spearman_rho_ecbc(model: &EcbcModel) -> f64 {
    let n = model.n();
    let d = model.d();
    let two_d = (2.0f64).powi(d as i32);
    let mut integral = 0.0;
    for i in 0..n {
        let mut prod = 1.0;
        for j in 0..d {
            let m = model.degrees().get(j);
            let sum_g: f64 = model.g_vec(i, j).iter().sum();
            prod *= sum_g / (m as f64 + 1.0);
        }
        integral += prod;
    }
    integral /= n as f64;
    rho_norm(d) * (two_d * integral - 1.0)
}

/// Spearman's rho evaluated on the literal tensor sum with log-gamma
/// binomial-Beta coefficients; oracle for [`spearman_rho_ecbc`].
pub fn spearman_rho_ecbc_naive(model: &EcbcModel) -> Result<f64> {
    let d = model.d();
    let mut cells: u128 = 1;
    for j in 0..d {
        cells = cells.saturating_mul(model.degrees().get(j) as u128 + 1);
    }
    if cells > 10_000_000 {
        return Err(Error::SizeGuard("spearman tensor too large".into()));
    }
    // coeff_j(k) = binom(m, k) * B(k+1, m-k+1), evaluated the long way
    let coeff: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let m = model.degrees().get(j);
            (0..=m)
                .map(|k| {
                    let ln_binom = ln_factorial(m as u64)
                        - ln_factorial(k as u64)
                        - ln_factorial((m - k) as u64);
                    let ln_beta = ln_factorial(k as u64) + ln_factorial((m - k) as u64)
                        - ln_factorial(m as u64 + 1);
                    (ln_binom + ln_beta).exp()
                })
                .collect()
        })
        .collect();
    let dims: Vec<usize> = (0..d).map(|j| model.degrees().get(j) + 1).collect();
    let mut integral = 0.0;
    for_each_cell(&dims, |cell| {
        let mut w = model.theta(cell);
        if w > 0.0 {
            for j in 0..d {
                w *= coeff[j][cell[j]];
            }
            integral += w;
        }
    });
    let two_d = (2.0f64).powi(d as i32);
    Ok(rho_norm(d) * (two_d * integral - 1.0))
}

/// Empirical-copula Spearman estimate; can leave the attainable range.
pub fn spearman_rho_empirical(ranks: &RankMatrix) -> f64 {
    let n = ranks.n();
    let d = ranks.d();
    let scale = 1.0 / (n as f64 + 1.0);
    let mut acc = 0.0;
    for i in 0..n {
        let mut prod = 1.0;
        for j in 0..d {
            prod *= 1.0 - ranks.rank(i, j) as f64 * scale;
        }
        acc += prod;
    }
    let two_d = (2.0f64).powi(d as i32);
    rho_norm(d) * (two_d * acc / n as f64 - 1.0)
}

const TAU_COST_GUARD: u128 = 10_000_000_000;

/// Multivariate Kendall's tau of the fitted copula.
///
/// Factorized over observation pairs:
/// tau = (2^d (1/n^2) sum_{i,i'} prod_j A_j(i,i') - 1) / (2^(d-1) - 1) with
/// A_j(i,i') = sum_{k,l} h_ij(k) g_i'j(l) m binom(m-1,k) binom(m,l)
/// B(k+l+1, 2m-k-l). Cost is guarded by n^2 sum_j m_j^2.
pub fn kendall_tau_ecbc(model: &EcbcModel) -> Result<f64> {
    let n = model.n();
    let d = model.d();
    let nsq = (n as u128) * (n as u128);
    let cost: u128 = nsq
        * (0..d)
            .map(|j| (model.degrees().get(j) as u128).pow(2))
            .sum::<u128>();
    if cost > TAU_COST_GUARD {
        return Err(Error::SizeGuard(format!(
            "kendall tau cost n^2 sum m_j^2 = {cost} exceeds {TAU_COST_GUARD}; \
             use the Monte Carlo expectation fallback instead"
        )));
    }
    // a_mats[j][i * n + i'] = A_j(i, i')
    let mut a_mats: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let m = model.degrees().get(j);
        let lnf: Vec<f64> = (0..=(2 * m + 1) as u64).map(ln_factorial).collect();
        let ln_m = (m as f64).ln();
        // w_rows[k][i'] = sum_l g_i'j(l) * X_k(l),
        // X_k(l) = m binom(m-1,k) binom(m,l) B(k+l+1, 2m-k-l)
        let mut w_rows = vec![vec![0.0; n]; m];
        let mut x_row = vec![0.0; m + 1];
        let mut x_suffix = vec![0.0; m + 2];
        for (k, w_row) in w_rows.iter_mut().enumerate() {
            let ln_ck = ln_m + lnf[m - 1] - lnf[k] - lnf[m - 1 - k];
            for (l, x) in x_row.iter_mut().enumerate() {
                let ln_cl = lnf[m] - lnf[l] - lnf[m - l];
                let ln_b = lnf[k + l] + lnf[2 * m - k - l - 1] - lnf[2 * m];
                *x = (ln_ck + ln_cl + ln_b).exp();
            }
            x_suffix[m + 1] = 0.0;
            for l in (0..=m).rev() {
                x_suffix[l] = x_suffix[l + 1] + x_row[l];
            }
            for (ip, out) in w_row.iter_mut().enumerate() {
                let g = model.g_vec(ip, j);
                let mut acc = 0.0;
                for l in 0..=m {
                    if g[l] >= 1.0 {
                        acc += x_suffix[l];
                        break;
                    }
                    if g[l] > 0.0 {
                        acc += g[l] * x_row[l];
                    }
                }
                *out = acc;
            }
        }
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            let h = model.h_vec(i, j);
            for (k, &hk) in h.iter().enumerate() {
                if hk == 0.0 {
                    continue;
                }
                let row = &w_rows[k];
                for ip in 0..n {
                    a[i * n + ip] += hk * row[ip];
                }
            }
        }
        a_mats.push(a);
    }
    let mut total = 0.0;
    for i in 0..n {
        for ip in 0..n {
            let mut prod = 1.0;
            for a in &a_mats {
                prod *= a[i * n + ip];
            }
            total += prod;
        }
    }
    total /= (n * n) as f64;
    let two_d = (2.0f64).powi(d as i32);
    let denom = (2.0f64).powi(d as i32 - 1) - 1.0;
    Ok((two_d * total - 1.0) / denom)
}

/// Kendall's tau by the literal double tensor sum; oracle for
/// [`kendall_tau_ecbc`] on small instances.
pub fn kendall_tau_ecbc_naive(model: &EcbcModel) -> Result<f64> {
    let d = model.d();
    let mut cells: u128 = 1;
    for j in 0..d {
        let m = model.degrees().get(j) as u128;
        cells = cells.saturating_mul(m).saturating_mul(m + 1);
    }
    if cells > 10_000_000 {
        return Err(Error::SizeGuard("kendall double tensor too large".into()));
    }
    let weights = model.bernstein_weights()?;
    let w_dims: Vec<usize> = (0..d).map(|j| model.degrees().get(j)).collect();
    let t_dims: Vec<usize> = (0..d).map(|j| model.degrees().get(j) + 1).collect();
    let mut total = 0.0;
    let mut w_idx = 0usize;
    for_each_cell(&w_dims, |k_cell| {
        let w = weights[w_idx];
        w_idx += 1;
        if w == 0.0 {
            return;
        }
        let mut inner = 0.0;
        for_each_cell(&t_dims, |l_cell| {
            let theta = model.theta(l_cell);
            if theta == 0.0 {
                return;
            }
            let mut prod = theta;
            for j in 0..d {
                let m = model.degrees().get(j);
                let (k, l) = (k_cell[j], l_cell[j]);
                let ln_ck = (m as f64).ln() + ln_factorial((m - 1) as u64)
                    - ln_factorial(k as u64)
                    - ln_factorial((m - 1 - k) as u64);
                let ln_cl = ln_factorial(m as u64)
                    - ln_factorial(l as u64)
                    - ln_factorial((m - l) as u64);
                let ln_b = ln_factorial((k + l) as u64)
                    + ln_factorial((2 * m - k - l - 1) as u64)
                    - ln_factorial(2 * m as u64);
                prod *= (ln_ck + ln_cl + ln_b).exp();
            }
            inner += prod;
        });
        total += w * inner;
    });
    let two_d = (2.0f64).powi(d as i32);
    let denom = (2.0f64).powi(d as i32 - 1) - 1.0;
    Ok((two_d * total - 1.0) / denom)
}

/// Monte Carlo estimate of E[f(U)] under the fitted copula, for dependence
/// functionals with no closed form. Returns (mean, standard error).
pub fn expectation_mc<F>(model: &EcbcModel, f: F, samples: usize, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let draws = sample_ecbc(model, samples, seed)?;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (count, row) in draws.rows().into_iter().enumerate() {
        let x = f(row.as_slice().expect("contiguous row"));
        let delta = x - mean;
        mean += delta / (count as f64 + 1.0);
        m2 += delta * (x - mean);
    }
    let nf = samples as f64;
    let se = if samples > 1 {
        (m2 / (nf - 1.0) / nf).sqrt()
    } else {
        f64::INFINITY
    };
    Ok((mean, se))
}

/// Full dependence summary for a fitted model. Kendall's tau is omitted when
/// its cost guard trips.
pub fn dependence_report(model: &EcbcModel) -> DependenceReport {
    let d = model.d();
    let (lower, _) = rho_bounds(d).expect("model dimension is >= 2");
    let tau = kendall_tau_ecbc(model).ok();
    DependenceReport {
        rho_ecbc: spearman_rho_ecbc(model),
        rho_empirical: spearman_rho_empirical(model.ranks()),
        tau_ecbc: tau,
        rho_lower_bound: lower,
        d,
    }
}
