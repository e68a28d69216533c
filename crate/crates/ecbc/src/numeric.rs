//! Shared numerical kernels: stable binomial/Beta pmf vectors, Poisson log-pmf,
//! normal CDF helpers, and rectangle probabilities for Gaussian/t vectors.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf;
use statrs::function::gamma::ln_gamma;

/// Natural log of `n!`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0)
}

/// Binomial(m, u) pmf as a dense vector of length `m + 1`.
///
/// Anchored at the mode and extended outward by the multiplicative
/// recurrence in u/(1-u), so entries far from the mode underflow to zero
/// instead of poisoning the whole vector; `u` in {0, 1} yields exact one-hot
/// vectors. Stable for degrees well beyond 10^4.
pub fn binom_pmf_vec(m: usize, u: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; m + 1];
    if u <= 0.0 {
        pmf[0] = 1.0;
        return pmf;
    }
    if u >= 1.0 {
        pmf[m] = 1.0;
        return pmf;
    }
    let mf = m as f64;
    let k0 = (((mf + 1.0) * u).floor() as usize).min(m);
    let ln_p0 = ln_factorial(m as u64)
        - ln_factorial(k0 as u64)
        - ln_factorial((m - k0) as u64)
        + k0 as f64 * u.ln()
        + (mf - k0 as f64) * (-u).ln_1p();
    pmf[k0] = ln_p0.exp();
    let ratio = u / (1.0 - u);
    for k in k0..m {
        pmf[k + 1] = pmf[k] * ratio * (mf - k as f64) / (k as f64 + 1.0);
    }
    for k in (0..k0).rev() {
        pmf[k] = pmf[k + 1] / ratio * (k as f64 + 1.0) / (mf - k as f64);
    }
    // exact mass is 1; renormalize away the accumulated recurrence error
    let total: f64 = pmf.iter().sum();
    for p in pmf.iter_mut() {
        *p /= total;
    }
    pmf
}

/// Beta(k+1, m-k) densities at `u` for k = 0..m-1, via the identity
/// Beta(u; k+1, m-k) = m * Binom(k; m-1, u).
pub fn beta_pdf_vec(m: usize, u: f64) -> Vec<f64> {
    debug_assert!(m >= 1);
    let mut v = binom_pmf_vec(m - 1, u);
    for x in v.iter_mut() {
        *x *= m as f64;
    }
    v
}

/// Single Beta(k+1, m-k) density at `u`, log-gamma route.
pub fn beta_pdf_single(u: f64, k: usize, m: usize) -> f64 {
    debug_assert!(k < m);
    if u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    let ln = ln_factorial(m as u64) - ln_factorial(k as u64) - ln_factorial((m - 1 - k) as u64)
        + k as f64 * u.ln()
        + (m - 1 - k) as f64 * (-u).ln_1p();
    ln.exp()
}

/// Poisson log-pmf at integer `k >= 0`.
pub fn poisson_logpmf(k: u64, lambda: f64) -> f64 {
    k as f64 * lambda.ln() - lambda - ln_factorial(k)
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile, with one Newton polish on top of the erf-based
/// seed so downstream quadratures see full double precision.
pub fn std_normal_inv_cdf(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability out of range: {p}");
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let mut x = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    for _ in 0..2 {
        let err = std_normal_cdf(x) - p;
        let d = std_normal_pdf(x);
        if d <= f64::MIN_POSITIVE {
            break;
        }
        let step = err / d;
        x -= step;
        if step.abs() < 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

// Gauss-Legendre points/weights used by the bivariate normal quadrature
// (Drezner & Wesolowsky 1989, refined by Genz for |r| near 1).
const QUAD_6: [(f64, f64); 3] = [
    (0.1713244923791705, -0.9324695142031522),
    (0.3607615730481384, -0.6612093864662647),
    (0.4679139345726904, -0.2386191860831970),
];
const QUAD_12: [(f64, f64); 6] = [
    (0.04717533638651177, -0.9815606342467191),
    (0.1069393259953183, -0.9041172563704750),
    (0.1600783285433464, -0.7699026741943050),
    (0.2031674267230659, -0.5873179542866171),
    (0.2334925365383547, -0.3678314989981802),
    (0.2491470458134029, -0.1252334085114692),
];
const QUAD_20: [(f64, f64); 10] = [
    (0.01761400713915212, -0.9931285991850949),
    (0.04060142980038694, -0.9639719272779138),
    (0.06267204833410906, -0.9122344282513259),
    (0.08327674157670475, -0.8391169718222188),
    (0.1019301198172404, -0.7463319064601508),
    (0.1181945319615184, -0.6360536807265150),
    (0.1316886384491766, -0.5108670019508271),
    (0.1420961093183821, -0.3737060887154196),
    (0.1491729864726037, -0.2277858511416451),
    (0.1527533871307259, -0.07652652113349733),
];

/// P(X > h, Y > k) for standard bivariate normal with correlation `r`.
fn bvn_upper(dh: f64, dk: f64, r: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let h = dh;
    let mut k = dk;
    let hk = h * k;
    let quad: &[(f64, f64)] = if r.abs() < 0.3 {
        &QUAD_6
    } else if r.abs() < 0.75 {
        &QUAD_12
    } else {
        &QUAD_20
    };
    let mut bvn = 0.0;
    if r.abs() <= 0.925 {
        if r.abs() > 0.0 {
            let hs = (h * h + k * k) / 2.0;
            let asr = 0.5 * r.asin();
            for &(w, x) in quad {
                for is in [-1.0, 1.0] {
                    let sn = (asr * (is * x + 1.0)).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / two_pi;
        }
        bvn + std_normal_cdf(-h) * std_normal_cdf(-k)
    } else {
        if r < 0.0 {
            k = -k;
        }
        let hk = h * k;
        if r.abs() < 1.0 {
            let a_s = (1.0 - r.abs()) * (1.0 + r.abs());
            let mut a = a_s.sqrt();
            let b_s = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            let asr = -0.5 * (b_s / a_s + hk);
            if asr > -100.0 {
                bvn = a
                    * asr.exp()
                    * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
            }
            if -hk < 100.0 {
                let b = b_s.sqrt();
                bvn -= (-0.5 * hk).exp()
                    * (two_pi).sqrt()
                    * std_normal_cdf(-b / a)
                    * b
                    * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
            }
            a /= 2.0;
            for &(w, x) in quad {
                for is in [-1.0, 1.0] {
                    let x = a * (is * x + 1.0);
                    let x_s = x * x;
                    let r_s = (1.0 - x_s).sqrt();
                    let asr = -0.5 * (b_s / x_s + hk);
                    if asr > -100.0 {
                        bvn += a
                            * w
                            * asr.exp()
                            * ((-hk * (1.0 - r_s) / (2.0 * (1.0 + r_s))).exp() / r_s
                                - (1.0 + c * x_s * (1.0 + d * x_s)));
                    }
                }
            }
            bvn *= -1.0 / two_pi;
        }
        if r > 0.0 {
            bvn + std_normal_cdf(-h.max(k))
        } else {
            let mut out = -bvn;
            if k > h {
                out += std_normal_cdf(k) - std_normal_cdf(h);
            }
            out
        }
    }
}

/// P(X <= x, Y <= y) for standard bivariate normal with correlation `rho`.
/// Absolute error below 1e-13 away from |rho| = 1.
pub fn bvn_cdf(x: f64, y: f64, rho: f64) -> f64 {
    assert!(rho.abs() <= 1.0, "correlation out of range");
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return std_normal_cdf(y);
    }
    if y == f64::INFINITY {
        return std_normal_cdf(x);
    }
    if rho == 1.0 {
        return std_normal_cdf(x.min(y));
    }
    if rho == -1.0 {
        return (std_normal_cdf(x) + std_normal_cdf(y) - 1.0).max(0.0);
    }
    bvn_upper(-x, -y, rho).clamp(0.0, 1.0)
}

/// Lower Cholesky factor of a symmetric positive-definite matrix (row-major,
/// square). Fails on non-PD input.
pub fn cholesky_lower(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

// First 32 primes, square roots of which drive the Richtmyer-Kronecker
// lattice used for the quasi-Monte Carlo rectangle probabilities.
const PRIMES: [u32; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

fn kronecker_alpha(dim: usize) -> Vec<f64> {
    (0..dim).map(|j| (PRIMES[j] as f64).sqrt().fract()).collect()
}

/// Quasi-Monte Carlo estimate of P(X <= b) for X ~ N(0, Sigma) using the
/// sequential-conditioning transform of Genz (1992) over a shifted Kronecker
/// lattice. Returns (estimate, standard error over the random shifts).
pub fn mvn_rectangle_qmc(
    chol: &[Vec<f64>],
    upper: &[f64],
    points_per_shift: usize,
    shifts: usize,
    seed: u64,
) -> (f64, f64) {
    t_or_mvn_rectangle_qmc(chol, upper, None, points_per_shift, shifts, seed)
}

/// Same as [`mvn_rectangle_qmc`] but for a scaled-t vector: when `df` is
/// `Some(nu)`, estimates P(T <= b) with T = Z * sqrt(nu / W), W ~ chi^2_nu.
pub fn t_or_mvn_rectangle_qmc(
    chol: &[Vec<f64>],
    upper: &[f64],
    df: Option<f64>,
    points_per_shift: usize,
    shifts: usize,
    seed: u64,
) -> (f64, f64) {
    let d = upper.len();
    let qdim = d + usize::from(df.is_some());
    let alpha = kronecker_alpha(qdim);
    let chi = df.map(|nu| ChiSquared::new(nu).expect("valid dof"));
    let mut shift_means = Vec::with_capacity(shifts);
    let mut rng_state = seed;
    let mut next_unit = || {
        // splitmix64 stream for the lattice shifts
        rng_state = rng_state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = rng_state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z = z ^ (z >> 31);
        (z >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..shifts {
        let shift: Vec<f64> = (0..qdim).map(|_| next_unit()).collect();
        let mut acc = 0.0;
        for i in 0..points_per_shift {
            let point = |j: usize| {
                let v = (i as f64 + 1.0) * alpha[j] + shift[j];
                let f = v.fract();
                // tent map keeps the lattice symmetric around 1/2
                1.0 - (2.0 * f - 1.0).abs()
            };
            let scale = match (&chi, df) {
                (Some(chi), Some(nu)) => {
                    let q = point(d).clamp(1e-15, 1.0 - 1e-15);
                    let w = chi.inverse_cdf(q);
                    (w / nu).sqrt()
                }
                _ => 1.0,
            };
            // sequential conditioning: weight accumulates the per-coordinate
            // conditional probabilities, y holds the conditioning draws
            let mut weight = 1.0;
            let mut y = vec![0.0; d];
            for j in 0..d {
                let mut mean = 0.0;
                for k in 0..j {
                    mean += chol[j][k] * y[k];
                }
                let bj = (upper[j] * scale - mean) / chol[j][j];
                let e = std_normal_cdf(bj);
                if e <= 0.0 {
                    weight = 0.0;
                    break;
                }
                if j + 1 < d {
                    let q = (e * point(j)).clamp(1e-16, 1.0 - 1e-16);
                    y[j] = std_normal_inv_cdf(q);
                }
                weight *= e;
            }
            acc += weight;
        }
        shift_means.push(acc / points_per_shift as f64);
    }
    let mean = shift_means.iter().sum::<f64>() / shifts as f64;
    let var = shift_means
        .iter()
        .map(|m| (m - mean) * (m - mean))
        .sum::<f64>()
        / (shifts as f64 * (shifts as f64 - 1.0));
    (mean, var.sqrt())
}
