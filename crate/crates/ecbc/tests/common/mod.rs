//! Shared oracles and statistical test helpers for the integration suites.

#![allow(dead_code)]

use ecbc::numeric::binom_pmf_vec;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// One-sample Kolmogorov-Smirnov statistic against Uniform(0,1).
pub fn ks_statistic_uniform(sample: &[f64]) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let lo = i as f64 / n;
        let hi = (i as f64 + 1.0) / n;
        d = d.max((x - lo).abs()).max((hi - x).abs());
    }
    d
}

/// Asymptotic Kolmogorov p-value with the small-sample correction of
/// Stephens: lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) D.
pub fn ks_pvalue(stat: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * stat;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k as i32 + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

pub fn assert_uniform_ks(sample: &[f64], level: f64, label: &str) {
    let d = ks_statistic_uniform(sample);
    let p = ks_pvalue(d, sample.len());
    assert!(
        p > level,
        "{label}: KS test rejected uniformity (D={d:.5}, p={p:.5})"
    );
}

/// Chi-square goodness of fit: observed counts against expected counts
/// (already on the same total). Bins with expectation below 5 are pooled
/// into the last bin. Returns (statistic, dof, p-value).
pub fn chi_square_gof(observed: &[f64], expected: &[f64]) -> (f64, usize, f64) {
    assert_eq!(observed.len(), expected.len());
    let mut obs_bins: Vec<f64> = Vec::new();
    let mut exp_bins: Vec<f64> = Vec::new();
    let mut o_acc = 0.0;
    let mut e_acc = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            obs_bins.push(o_acc);
            exp_bins.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 {
        if let (Some(last_o), Some(last_e)) = (obs_bins.last_mut(), exp_bins.last_mut()) {
            *last_o += o_acc;
            *last_e += e_acc;
        }
    }
    let stat: f64 = obs_bins
        .iter()
        .zip(&exp_bins)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = obs_bins.len().saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    (stat, dof, p)
}

/// Tensor-product Bernstein smoothing of an exact bivariate function: plugs
/// grid values f(k1/m1, k2/m2) into the polynomial basis.
pub fn bernstein_smooth_2d<F: Fn(f64, f64) -> f64>(
    f: &F,
    m: (usize, usize),
    u: (f64, f64),
) -> f64 {
    let grid: Vec<Vec<f64>> = (0..=m.0)
        .map(|k1| {
            (0..=m.1)
                .map(|k2| f(k1 as f64 / m.0 as f64, k2 as f64 / m.1 as f64))
                .collect()
        })
        .collect();
    let p1 = binom_pmf_vec(m.0, u.0);
    let p2 = binom_pmf_vec(m.1, u.1);
    let mut acc = 0.0;
    for k1 in 0..=m.0 {
        if p1[k1] == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for k2 in 0..=m.1 {
            inner += grid[k1][k2] * p2[k2];
        }
        acc += p1[k1] * inner;
    }
    acc
}

/// Solve a dense linear system by Gaussian elimination with partial
/// pivoting; `None` when singular. Used by the vertex-enumeration oracle.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| {
            let mut r = row.clone();
            r.push(rhs);
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()
        })?;
        if m[pivot][col].abs() < 1e-11 {
            return None;
        }
        m.swap(col, pivot);
        let p = m[col][col];
        for k in col..=n {
            m[col][k] /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                if f != 0.0 {
                    for k in col..=n {
                        m[row][k] -= f * m[col][k];
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n]).collect())
}

/// Sample mean and variance (denominator n - 1).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
