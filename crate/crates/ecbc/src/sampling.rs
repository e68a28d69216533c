//! Random generation from fitted models and from the checkerboard copula.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;
use rayon::prelude::*;

use crate::ecbc::EcbcModel;
use crate::error::{Error, Result};
use crate::ranks::RankMatrix;
use crate::seed::split_seed;

const BLOCK: usize = 1024;

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let t: f64 = rng.gen();
        if t > 0.0 {
            return t;
        }
    }
}

fn clamp_open(x: f64) -> f64 {
    x.max(f64::MIN_POSITIVE).min(1.0 - f64::EPSILON / 2.0)
}

/// Draw `count` rows from the fitted copula.
///
/// Each row picks an observation uniformly, then per coordinate a Bernstein
/// cell k with probability h_ij(k) followed by a Beta(k+1, m_j-k) draw.
/// Mixing over observations reproduces the mixture weights exactly, so this
/// is distributed as the fitted copula. Rows are generated in fixed-size
/// blocks with per-block derived seeds: reproducible for a given seed, and
/// blocks can run on any number of threads.
pub fn sample_ecbc(model: &EcbcModel, count: usize, seed: u64) -> Result<Array2<f64>> {
    if count < 1 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let d = model.d();
    let n = model.n();
    let blocks: Vec<Array2<f64>> = (0..count.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let rows = BLOCK.min(count - b * BLOCK);
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, b as u64));
            let mut out = Array2::<f64>::zeros((rows, d));
            for r in 0..rows {
                let i = rng.gen_range(0..n);
                for j in 0..d {
                    let m = model.degrees().get(j);
                    let t: f64 = rng.gen();
                    let mut cum = 0.0;
                    let mut cell = m - 1;
                    // the increments are supported on a short ramp window
                    for k in 0..m {
                        let h = model.g(i, j, k + 1) - model.g(i, j, k);
                        cum += h;
                        if t < cum {
                            cell = k;
                            break;
                        }
                    }
                    let beta = Beta::new(cell as f64 + 1.0, (m - cell) as f64)
                        .expect("valid Beta shape");
                    out[[r, j]] = clamp_open(beta.sample(&mut rng));
                }
            }
            out
        })
        .collect();
    let mut out = Array2::<f64>::zeros((count, d));
    let mut row = 0;
    for block in blocks {
        for r in block.rows() {
            out.row_mut(row).assign(&r);
            row += 1;
        }
    }
    Ok(out)
}

/// Draw `count` rows from the checkerboard copula of the ranks:
/// pick an observation uniformly, then V_j = (R_j - 1 + U_j) / n with fresh
/// uniforms per coordinate.
pub fn sample_checkerboard(ranks: &RankMatrix, count: usize, seed: u64) -> Result<Array2<f64>> {
    if count < 1 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let d = ranks.d();
    let n = ranks.n();
    let blocks: Vec<Array2<f64>> = (0..count.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let rows = BLOCK.min(count - b * BLOCK);
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, b as u64));
            let mut out = Array2::<f64>::zeros((rows, d));
            for r in 0..rows {
                let i = rng.gen_range(0..n);
                for j in 0..d {
                    let lambda = open_unit(&mut rng);
                    out[[r, j]] = (ranks.rank(i, j) as f64 - 1.0 + lambda) / n as f64;
                }
            }
            out
        })
        .collect();
    let mut out = Array2::<f64>::zeros((count, d));
    let mut row = 0;
    for block in blocks {
        for r in block.rows() {
            out.row_mut(row).assign(&r);
            row += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecbc::DegreeVector;
    use crate::ranks::{compute_ranks, Dataset, TiePolicy};
    use ndarray::Array2;

    fn model(n: usize, d: usize, m: u32, seed: u64) -> EcbcModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((n, d), |_| rng.gen::<f64>());
        let data = Dataset::new(values).unwrap();
        let ranks = compute_ranks(&data, TiePolicy::InputOrder, 0);
        EcbcModel::new(ranks, DegreeVector::constant(d, m).unwrap()).unwrap()
    }

    #[test]
    fn rejects_zero_samples() {
        let m = model(5, 2, 3, 1);
        assert!(sample_ecbc(&m, 0, 1).is_err());
    }

    #[test]
    fn fixed_seed_reproducible() {
        let m = model(8, 3, 4, 2);
        let a = sample_ecbc(&m, 2000, 7).unwrap();
        let b = sample_ecbc(&m, 2000, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_checkerboard(m.ranks(), 2000, 7).unwrap();
        let d = sample_checkerboard(m.ranks(), 2000, 7).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn draws_stay_inside_open_cube() {
        let m = model(6, 2, 5, 3);
        for x in sample_ecbc(&m, 5000, 11).unwrap().iter() {
            assert!(*x > 0.0 && *x < 1.0);
        }
        for x in sample_checkerboard(m.ranks(), 5000, 11).unwrap().iter() {
            assert!(*x > 0.0 && *x < 1.0);
        }
    }

    #[test]
    fn single_observation_checkerboard_is_uniform() {
        let ranks = RankMatrix::new(Array2::from_elem((1, 2), 1u32)).unwrap();
        let draws = sample_checkerboard(&ranks, 20_000, 5).unwrap();
        // mean of U(0,1) is 1/2, sd of the mean ~ 0.002
        let mean = draws.column(0).mean().unwrap();
        assert!((mean - 0.5).abs() < 0.01, "mean={mean}");
    }

    #[test]
    fn ecbc_empirical_cdf_matches_model() {
        let m = model(10, 2, 6, 4);
        let count = 40_000;
        let draws = sample_ecbc(&m, count, 13).unwrap();
        for &u in &[[0.3, 0.4], [0.5, 0.8], [0.9, 0.2]] {
            let expect = m.cdf(&u).unwrap();
            let hits = draws
                .rows()
                .into_iter()
                .filter(|r| r[0] <= u[0] && r[1] <= u[1])
                .count();
            let freq = hits as f64 / count as f64;
            let se = (expect * (1.0 - expect) / count as f64).sqrt();
            assert!(
                (freq - expect).abs() < 4.0 * se.max(1e-3),
                "u={u:?} freq={freq} expect={expect}"
            );
        }
    }
}
