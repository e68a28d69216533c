//! Raw data, column ranks, pseudo-observations, and the two rank-based
//! copulas (empirical and checkerboard) that everything else builds on.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::split_seed;

/// Raw observations, one row per sample, one column per variable.
#[derive(Debug, Clone)]
pub struct Dataset {
    values: Array2<f64>,
}

impl Dataset {
    /// Wrap an n x d matrix. Requires n >= 1, d >= 2 and finite entries.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, d) = values.dim();
        if n < 1 || d < 2 {
            return Err(Error::InvalidInput(format!(
                "need n >= 1 and d >= 2, got {n} x {d}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in data".into()));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// How equal values within a column are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Ties receive a uniformly random relative order driven by the seed.
    RandomSeeded,
    /// Ties keep their input order (deterministic, mainly for tests).
    InputOrder,
}

/// Columnwise ranks in 1..=n; each column is a permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMatrix {
    ranks: Array2<u32>,
}

impl RankMatrix {
    /// Wrap a precomputed rank matrix, checking the permutation invariant.
    pub fn new(ranks: Array2<u32>) -> Result<Self> {
        let (n, d) = ranks.dim();
        if n < 1 || d < 1 {
            return Err(Error::InvalidInput("empty rank matrix".into()));
        }
        for j in 0..d {
            let mut seen = vec![false; n];
            for i in 0..n {
                let r = ranks[[i, j]] as usize;
                if r < 1 || r > n || seen[r - 1] {
                    return Err(Error::InvalidInput(format!(
                        "column {j} is not a permutation of 1..={n}"
                    )));
                }
                seen[r - 1] = true;
            }
        }
        Ok(Self { ranks })
    }

    pub fn n(&self) -> usize {
        self.ranks.nrows()
    }

    pub fn d(&self) -> usize {
        self.ranks.ncols()
    }

    pub fn rank(&self, i: usize, j: usize) -> u32 {
        self.ranks[[i, j]]
    }

    pub fn ranks(&self) -> &Array2<u32> {
        &self.ranks
    }
}

/// Ranks rescaled by 1/(n+1); every entry lies strictly inside (0, 1).
#[derive(Debug, Clone)]
pub struct PseudoObs {
    u: Array2<f64>,
}

impl PseudoObs {
    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn d(&self) -> usize {
        self.u.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.u
    }
}

/// Columnwise ranks of the data, breaking ties per `policy`.
///
/// With [`TiePolicy::RandomSeeded`] the relative order of tied values is a
/// uniformly random permutation derived from `seed` and the column index, so
/// repeated calls with the same seed agree exactly.
pub fn compute_ranks(data: &Dataset, policy: TiePolicy, seed: u64) -> RankMatrix {
    let n = data.n();
    let d = data.d();
    let mut ranks = Array2::<u32>::zeros((n, d));
    for j in 0..d {
        let mut order: Vec<usize> = (0..n).collect();
        match policy {
            TiePolicy::InputOrder => {
                order.sort_by(|&a, &b| {
                    data.values[[a, j]]
                        .partial_cmp(&data.values[[b, j]])
                        .unwrap()
                        .then(a.cmp(&b))
                });
            }
            TiePolicy::RandomSeeded => {
                let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, j as u64));
                let mut jitter: Vec<usize> = (0..n).collect();
                jitter.shuffle(&mut rng);
                order.sort_by(|&a, &b| {
                    data.values[[a, j]]
                        .partial_cmp(&data.values[[b, j]])
                        .unwrap()
                        .then(jitter[a].cmp(&jitter[b]))
                });
            }
        }
        for (pos, &i) in order.iter().enumerate() {
            ranks[[i, j]] = pos as u32 + 1;
        }
    }
    RankMatrix { ranks }
}

/// Pseudo-observations u_ij = R_ij / (n + 1).
pub fn pseudo_observations(ranks: &RankMatrix) -> PseudoObs {
    let scale = 1.0 / (ranks.n() as f64 + 1.0);
    let u = ranks.ranks.map(|&r| r as f64 * scale);
    PseudoObs { u }
}

fn check_point(d: usize, u: &[f64]) -> Result<()> {
    if u.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: u.len(),
        });
    }
    Ok(())
}

/// Rank-based empirical copula
/// C_n(u) = (1/n) sum_i prod_j 1{ R_ij/(n+1) <= u_j }.
pub fn empirical_copula(ranks: &RankMatrix, u: &[f64]) -> Result<f64> {
    check_point(ranks.d(), u)?;
    let n = ranks.n();
    let scale = 1.0 / (n as f64 + 1.0);
    let mut count = 0usize;
    for i in 0..n {
        if (0..ranks.d()).all(|j| ranks.rank(i, j) as f64 * scale <= u[j]) {
            count += 1;
        }
    }
    Ok(count as f64 / n as f64)
}

/// Checkerboard (multilinear) extension of the empirical copula
/// C#_n(u) = (1/n) sum_i prod_j clamp(n u_j - R_ij + 1, 0, 1).
///
/// A genuine copula for every finite sample.
pub fn checkerboard_copula(ranks: &RankMatrix, u: &[f64]) -> Result<f64> {
    check_point(ranks.d(), u)?;
    let n = ranks.n() as f64;
    let mut acc = 0.0;
    for i in 0..ranks.n() {
        let mut prod = 1.0;
        for j in 0..ranks.d() {
            let g = (n * u[j] - ranks.rank(i, j) as f64 + 1.0).clamp(0.0, 1.0);
            if g == 0.0 {
                prod = 0.0;
                break;
            }
            prod *= g;
        }
        acc += prod;
    }
    Ok(acc / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dataset(rows: Vec<Vec<f64>>) -> Dataset {
        let n = rows.len();
        let d = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Dataset::new(Array2::from_shape_vec((n, d), flat).unwrap()).unwrap()
    }

    #[test]
    fn ranks_of_distinct_values() {
        let data = dataset(vec![vec![3.1, 1.0], vec![1.2, 2.0], vec![2.5, 3.0]]);
        let r = compute_ranks(&data, TiePolicy::InputOrder, 0);
        assert_eq!(r.ranks().column(0).to_vec(), vec![3, 1, 2]);
    }

    #[test]
    fn ties_broken_by_input_order() {
        let data = dataset(vec![vec![5.0, 0.0], vec![5.0, 1.0]]);
        let r = compute_ranks(&data, TiePolicy::InputOrder, 0);
        assert_eq!(r.ranks().column(0).to_vec(), vec![1, 2]);
    }

    #[test]
    fn seeded_ties_are_deterministic() {
        let data = dataset(vec![vec![5.0, 0.0], vec![5.0, 1.0], vec![5.0, 2.0]]);
        let a = compute_ranks(&data, TiePolicy::RandomSeeded, 99);
        let b = compute_ranks(&data, TiePolicy::RandomSeeded, 99);
        assert_eq!(a, b);
        // a permutation either way
        RankMatrix::new(a.ranks().clone()).unwrap();
    }

    #[test]
    fn non_finite_rejected() {
        let values = array![[1.0, f64::NAN], [0.0, 1.0]];
        assert!(Dataset::new(values).is_err());
    }

    #[test]
    fn pseudo_obs_values() {
        let r = RankMatrix::new(array![[2, 1], [1, 3], [3, 2]].mapv(|x| x as u32)).unwrap();
        let u = pseudo_observations(&r);
        assert_eq!(u.values()[[0, 0]], 0.5);
        let r1 = RankMatrix::new(array![[1u32, 1u32]]).unwrap();
        assert_eq!(pseudo_observations(&r1).values()[[0, 0]], 0.5);
        let mut col = Array2::<u32>::zeros((9, 2));
        for i in 0..9 {
            col[[i, 0]] = i as u32 + 1;
            col[[i, 1]] = 9 - i as u32;
        }
        let u9 = pseudo_observations(&RankMatrix::new(col).unwrap());
        assert_eq!(u9.values()[[8, 0]], 0.9);
    }

    #[test]
    fn empirical_copula_hand_values() {
        let r = RankMatrix::new(array![[1u32, 1u32], [2, 2]]).unwrap();
        assert_eq!(empirical_copula(&r, &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(empirical_copula(&r, &[0.2, 0.9]).unwrap(), 0.0);
        assert_eq!(empirical_copula(&r, &[0.4, 0.9]).unwrap(), 0.5);
    }

    #[test]
    fn checkerboard_hand_values() {
        let r = RankMatrix::new(array![[1u32, 1u32], [2, 2]]).unwrap();
        assert_eq!(checkerboard_copula(&r, &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(checkerboard_copula(&r, &[0.0, 0.7]).unwrap(), 0.0);
        assert_eq!(checkerboard_copula(&r, &[0.5, 0.5]).unwrap(), 0.5);
    }

    #[test]
    fn checkerboard_uniform_margins() {
        let r = RankMatrix::new(array![[1u32, 3u32], [2, 1], [3, 2]]).unwrap();
        for i in 0..=10 {
            let u = i as f64 / 10.0;
            let c = checkerboard_copula(&r, &[u, 1.0]).unwrap();
            assert!((c - u).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        let r = RankMatrix::new(array![[1u32, 1u32], [2, 2]]).unwrap();
        assert!(empirical_copula(&r, &[0.5]).is_err());
        assert!(checkerboard_copula(&r, &[0.5, 0.5, 0.5]).is_err());
    }
}
