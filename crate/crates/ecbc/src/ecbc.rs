//! The smoothed checkerboard copula model: per-coordinate Bernstein degrees
//! on top of a rank matrix, with factorized CDF/PDF evaluation and naive
//! tensor-sum oracles behind size guards.
//!
//! Everything routes through the per-observation ramp
//! g_ij(k) = clamp(n k / m_j - R_ij + 1, 0, 1): the smoothed CDF is
//! (1/n) sum_i prod_j sum_k g_ij(k) Binom(k; m_j, u_j), the density swaps the
//! binomial weights for Beta densities against the increments
//! h_ij(k) = g_ij(k+1) - g_ij(k). Each inner sum touches only the O(m_j/n)
//! ramp window, so a CDF evaluation costs O(sum_j m_j + n d).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{beta_pdf_vec, binom_pmf_vec};
use crate::ranks::RankMatrix;

const TENSOR_GUARD: u128 = 10_000_000;

/// Per-coordinate Bernstein degrees, each at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct DegreeVector(Vec<u32>);

impl DegreeVector {
    pub fn new(m: Vec<u32>) -> Result<Self> {
        if m.is_empty() || m.iter().any(|&v| v < 1) {
            return Err(Error::InvalidInput("degrees must all be >= 1".into()));
        }
        Ok(Self(m))
    }

    /// All coordinates set to the same degree.
    pub fn constant(d: usize, m: u32) -> Result<Self> {
        Self::new(vec![m; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> usize {
        self.0[j] as usize
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

impl TryFrom<Vec<u32>> for DegreeVector {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DegreeVector> for Vec<u32> {
    fn from(v: DegreeVector) -> Self {
        v.0
    }
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    n: usize,
    d: usize,
    ranks: Vec<u32>,
    degrees: Vec<u32>,
}

/// A fitted copula: ranks plus a degree vector fully determine the estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord", into = "ModelRecord")]
pub struct EcbcModel {
    ranks: RankMatrix,
    degrees: DegreeVector,
}

impl TryFrom<ModelRecord> for EcbcModel {
    type Error = Error;
    fn try_from(rec: ModelRecord) -> Result<Self> {
        if rec.ranks.len() != rec.n * rec.d {
            return Err(Error::InvalidInput(format!(
                "rank matrix has {} entries, expected {} x {}",
                rec.ranks.len(),
                rec.n,
                rec.d
            )));
        }
        let ranks = RankMatrix::new(
            ndarray::Array2::from_shape_vec((rec.n, rec.d), rec.ranks)
                .map_err(|e| Error::InvalidInput(e.to_string()))?,
        )?;
        EcbcModel::new(ranks, DegreeVector::new(rec.degrees)?)
    }
}

impl From<EcbcModel> for ModelRecord {
    fn from(model: EcbcModel) -> Self {
        ModelRecord {
            n: model.n(),
            d: model.d(),
            ranks: model.ranks.ranks().iter().copied().collect(),
            degrees: model.degrees.as_slice().to_vec(),
        }
    }
}

impl EcbcModel {
    pub fn new(ranks: RankMatrix, degrees: DegreeVector) -> Result<Self> {
        if degrees.len() != ranks.d() {
            return Err(Error::DimensionMismatch {
                expected: ranks.d(),
                got: degrees.len(),
            });
        }
        Ok(Self { ranks, degrees })
    }

    pub fn n(&self) -> usize {
        self.ranks.n()
    }

    pub fn d(&self) -> usize {
        self.ranks.d()
    }

    pub fn ranks(&self) -> &RankMatrix {
        &self.ranks
    }

    pub fn degrees(&self) -> &DegreeVector {
        &self.degrees
    }

    /// Ramp coefficient g_ij(k) = clamp(n k / m_j - R_ij + 1, 0, 1).
    pub fn g(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.n() as f64;
        let m = self.degrees.get(j) as f64;
        let r = self.ranks.rank(i, j) as f64;
        (n * k as f64 / m - r + 1.0).clamp(0.0, 1.0)
    }

    /// The full vector g_ij(0..=m_j).
    pub fn g_vec(&self, i: usize, j: usize) -> Vec<f64> {
        (0..=self.degrees.get(j)).map(|k| self.g(i, j, k)).collect()
    }

    /// Increments h_ij(k) = g_ij(k+1) - g_ij(k) for k = 0..m_j; they are
    /// nonnegative and sum to one.
    pub fn h_vec(&self, i: usize, j: usize) -> Vec<f64> {
        let g = self.g_vec(i, j);
        g.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of the first k with g_ij(k) > 0 (the ramp window start).
    fn ramp_start(&self, i: usize, j: usize) -> usize {
        let n = self.n() as u64;
        let m = self.degrees.get(j) as u64;
        let r = self.ranks.rank(i, j) as u64;
        (m * (r - 1) / n + 1) as usize
    }

    /// Index of the first k with g_ij(k) = 1.
    fn ramp_end(&self, i: usize, j: usize) -> usize {
        let n = self.n() as u64;
        let m = self.degrees.get(j) as u64;
        let r = self.ranks.rank(i, j) as u64;
        (m * r).div_ceil(n) as usize
    }

    fn check_point(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: u.len(),
            });
        }
        if u.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::Domain("point outside the unit cube".into()));
        }
        Ok(())
    }

    /// Smoothed copula CDF at `u` in the closed unit cube, factorized form.
    pub fn cdf(&self, u: &[f64]) -> Result<f64> {
        self.check_point(u)?;
        let n = self.n();
        let d = self.d();
        // per-dimension binomial pmf and suffix sums
        let mut pmf = Vec::with_capacity(d);
        let mut suffix = Vec::with_capacity(d);
        for j in 0..d {
            let p = binom_pmf_vec(self.degrees.get(j), u[j]);
            let mut s = vec![0.0; p.len() + 1];
            for k in (0..p.len()).rev() {
                s[k] = s[k + 1] + p[k];
            }
            pmf.push(p);
            suffix.push(s);
        }
        let nf = self.n() as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let mut prod = 1.0;
            for j in 0..d {
                let m = self.degrees.get(j) as f64;
                let r = self.ranks.rank(i, j) as f64;
                let lo = self.ramp_start(i, j);
                let hi = self.ramp_end(i, j);
                let mut inner = suffix[j][hi];
                for k in lo..hi {
                    inner += (nf * k as f64 / m - r + 1.0) * pmf[j][k];
                }
                if inner == 0.0 {
                    prod = 0.0;
                    break;
                }
                prod *= inner;
            }
            acc += prod;
        }
        Ok(acc / nf)
    }

    /// Smoothed copula density at `u` strictly inside the unit cube,
    /// factorized form. Nonnegative and integrates to one.
    pub fn pdf(&self, u: &[f64]) -> Result<f64> {
        self.check_point(u)?;
        if u.iter().any(|&x| x == 0.0 || x == 1.0) {
            return Err(Error::Domain(
                "density is defined on the open cube only".into(),
            ));
        }
        let n = self.n();
        let d = self.d();
        let beta: Vec<Vec<f64>> = (0..d)
            .map(|j| beta_pdf_vec(self.degrees.get(j), u[j]))
            .collect();
        let mut acc = 0.0;
        for i in 0..n {
            let mut prod = 1.0;
            for j in 0..d {
                // h_ij is nonzero only where the ramp moves
                let lo = self.ramp_start(i, j) - 1;
                let hi = self.ramp_end(i, j);
                let mut inner = 0.0;
                let mut g_prev = self.g(i, j, lo);
                for k in lo..hi {
                    let g_next = self.g(i, j, k + 1);
                    inner += (g_next - g_prev) * beta[j][k];
                    g_prev = g_next;
                }
                prod *= inner;
                if prod == 0.0 {
                    break;
                }
            }
            acc += prod;
        }
        Ok(acc / n as f64)
    }

    fn checked_cell_count(&self, plus_one: bool) -> Result<usize> {
        let mut cells: u128 = 1;
        for j in 0..self.d() {
            cells = cells.saturating_mul(self.degrees.get(j) as u128 + u128::from(plus_one));
            if cells > TENSOR_GUARD {
                return Err(Error::SizeGuard(format!(
                    "tensor with more than {TENSOR_GUARD} cells"
                )));
            }
        }
        Ok(cells as usize)
    }

    /// Checkerboard coefficient theta(k) = C#_n(k_1/m_1, ..., k_d/m_d),
    /// evaluated through the same ramp used everywhere else.
    pub fn theta(&self, cell: &[usize]) -> f64 {
        let n = self.n();
        let nf = n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let mut prod = 1.0;
            for (j, &k) in cell.iter().enumerate() {
                prod *= self.g(i, j, k);
                if prod == 0.0 {
                    break;
                }
            }
            acc += prod;
        }
        acc / nf
    }

    /// Direct tensor-sum CDF, the oracle for [`EcbcModel::cdf`]. Refuses
    /// tensors beyond the size guard.
    pub fn cdf_naive(&self, u: &[f64]) -> Result<f64> {
        self.check_point(u)?;
        self.checked_cell_count(true)?;
        let d = self.d();
        let pmf: Vec<Vec<f64>> = (0..d)
            .map(|j| binom_pmf_vec(self.degrees.get(j), u[j]))
            .collect();
        let dims: Vec<usize> = (0..d).map(|j| self.degrees.get(j) + 1).collect();
        let mut acc = 0.0;
        for_each_cell(&dims, |cell| {
            let mut w = self.theta(cell);
            if w > 0.0 {
                for j in 0..d {
                    w *= pmf[j][cell[j]];
                }
                acc += w;
            }
        });
        Ok(acc)
    }

    /// Direct tensor-sum density using the finite-difference weights, the
    /// oracle for [`EcbcModel::pdf`].
    pub fn pdf_naive(&self, u: &[f64]) -> Result<f64> {
        self.check_point(u)?;
        if u.iter().any(|&x| x == 0.0 || x == 1.0) {
            return Err(Error::Domain(
                "density is defined on the open cube only".into(),
            ));
        }
        let d = self.d();
        let weights = self.bernstein_weights_fd()?;
        let beta: Vec<Vec<f64>> = (0..d)
            .map(|j| beta_pdf_vec(self.degrees.get(j), u[j]))
            .collect();
        let dims: Vec<usize> = (0..d).map(|j| self.degrees.get(j)).collect();
        let mut acc = 0.0;
        let mut idx = 0usize;
        for_each_cell(&dims, |cell| {
            let mut w = weights[idx];
            idx += 1;
            for j in 0..d {
                w *= beta[j][cell[j]];
            }
            acc += w;
        });
        Ok(acc)
    }

    /// Bernstein mixture weights over the prod_j m_j cells, row-major,
    /// computed by the per-observation product form
    /// w(k) = (1/n) sum_i prod_j h_ij(k_j). Entries are nonnegative and sum
    /// to one.
    pub fn bernstein_weights(&self) -> Result<Vec<f64>> {
        let cells = self.checked_cell_count(false)?;
        let n = self.n();
        let d = self.d();
        let mut weights = vec![0.0; cells];
        for i in 0..n {
            // incremental outer product across dimensions
            let mut partial = vec![1.0];
            for j in 0..d {
                let h = self.h_vec(i, j);
                let mut next = Vec::with_capacity(partial.len() * h.len());
                for &p in &partial {
                    if p == 0.0 {
                        next.extend(std::iter::repeat(0.0).take(h.len()));
                    } else {
                        next.extend(h.iter().map(|&x| p * x));
                    }
                }
                partial = next;
            }
            for (w, p) in weights.iter_mut().zip(partial.iter()) {
                *w += p;
            }
        }
        let nf = n as f64;
        for w in weights.iter_mut() {
            *w /= nf;
        }
        Ok(weights)
    }

    /// Bernstein mixture weights via the alternating finite-difference
    /// formula on checkerboard values; dual-route oracle for
    /// [`EcbcModel::bernstein_weights`].
    pub fn bernstein_weights_fd(&self) -> Result<Vec<f64>> {
        let cells = self.checked_cell_count(false)?;
        let d = self.d();
        let dims: Vec<usize> = (0..d).map(|j| self.degrees.get(j)).collect();
        let mut weights = Vec::with_capacity(cells);
        let mut corner = vec![0usize; d];
        for_each_cell(&dims, |cell| {
            let mut w = 0.0;
            for mask in 0..(1usize << d) {
                let mut sign = if d % 2 == 0 { 1.0 } else { -1.0 };
                for (j, c) in corner.iter_mut().enumerate() {
                    if mask & (1 << j) != 0 {
                        *c = cell[j] + 1;
                        sign = -sign;
                    } else {
                        *c = cell[j];
                    }
                }
                w += sign * self.theta(&corner);
            }
            weights.push(w);
        });
        Ok(weights)
    }
}

/// Visit every cell of a row-major tensor with the given per-dimension sizes.
pub(crate) fn for_each_cell(dims: &[usize], mut f: impl FnMut(&[usize])) {
    if dims.iter().any(|&s| s == 0) {
        return;
    }
    let mut cell = vec![0usize; dims.len()];
    loop {
        f(&cell);
        let mut j = dims.len();
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            cell[j] += 1;
            if cell[j] < dims[j] {
                break;
            }
            cell[j] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranks::{compute_ranks, Dataset, TiePolicy};
    use ndarray::{array, Array2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_model(
        rng: &mut ChaCha8Rng,
        n: usize,
        d: usize,
        m_max: u32,
    ) -> EcbcModel {
        let values =
            Array2::from_shape_fn((n, d), |_| rng.gen::<f64>());
        let data = Dataset::new(values).unwrap();
        let ranks = compute_ranks(&data, TiePolicy::InputOrder, 0);
        let degrees =
            DegreeVector::new((0..d).map(|_| rng.gen_range(1..=m_max)).collect()).unwrap();
        EcbcModel::new(ranks, degrees).unwrap()
    }

    #[test]
    fn g_vector_hand_values() {
        let ranks = crate::ranks::RankMatrix::new(array![[1u32, 1u32], [2, 2]]).unwrap();
        let model = EcbcModel::new(ranks, DegreeVector::constant(2, 2).unwrap()).unwrap();
        assert_eq!(model.g_vec(0, 0), vec![0.0, 1.0, 1.0]);
        assert_eq!(model.g_vec(1, 0), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn g_ends_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let model = random_model(&mut rng, 8, 3, 6);
            for i in 0..model.n() {
                for j in 0..model.d() {
                    let g = model.g_vec(i, j);
                    assert_eq!(g[0], 0.0);
                    assert_eq!(*g.last().unwrap(), 1.0);
                    assert!(g.windows(2).all(|w| w[1] >= w[0]));
                }
            }
        }
    }

    #[test]
    fn ramp_window_brackets_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let model = random_model(&mut rng, 7, 2, 9);
            for i in 0..model.n() {
                for j in 0..model.d() {
                    let m = model.degrees().get(j);
                    let lo = model.ramp_start(i, j);
                    let hi = model.ramp_end(i, j);
                    assert!(lo >= 1 && hi <= m + 1 && lo <= hi);
                    if lo > 1 {
                        assert_eq!(model.g(i, j, lo - 1), 0.0);
                    }
                    assert!(model.g(i, j, lo) > 0.0);
                    assert_eq!(model.g(i, j, hi), 1.0);
                    if hi > lo {
                        assert!(model.g(i, j, hi - 1) < 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn degree_one_collapses_to_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values = Array2::from_shape_fn((9, 3), |_| rng.gen::<f64>());
        let data = Dataset::new(values).unwrap();
        let ranks = compute_ranks(&data, TiePolicy::InputOrder, 0);
        let model = EcbcModel::new(ranks, DegreeVector::constant(3, 1).unwrap()).unwrap();
        for _ in 0..10 {
            let u: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            let expect: f64 = u.iter().product();
            assert!((model.cdf(&u).unwrap() - expect).abs() < 1e-14);
            assert!((model.pdf(&u).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_boundary_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_model(&mut rng, 10, 2, 5);
        assert_eq!(model.cdf(&[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(model.cdf(&[0.0, 0.7]).unwrap(), 0.0);
        assert!(model.pdf(&[0.0, 0.5]).is_err());
    }

    #[test]
    fn factorized_cdf_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values = Array2::from_shape_fn((4, 2), |_| rng.gen::<f64>());
        let data = Dataset::new(values).unwrap();
        let ranks = compute_ranks(&data, TiePolicy::InputOrder, 0);
        let model =
            EcbcModel::new(ranks, DegreeVector::new(vec![3, 2]).unwrap()).unwrap();
        for _ in 0..20 {
            let u = [rng.gen::<f64>(), rng.gen::<f64>()];
            let fast = model.cdf(&u).unwrap();
            let slow = model.cdf_naive(&u).unwrap();
            assert!((fast - slow).abs() < 1e-12, "fast={fast} slow={slow}");
        }
    }

    #[test]
    fn factorized_pdf_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let values = Array2::from_shape_fn((4, 2), |_| rng.gen::<f64>());
        let data = Dataset::new(values).unwrap();
        let ranks = compute_ranks(&data, TiePolicy::InputOrder, 0);
        let model =
            EcbcModel::new(ranks, DegreeVector::new(vec![3, 2]).unwrap()).unwrap();
        for _ in 0..20 {
            let u = [
                rng.gen_range(0.01..0.99),
                rng.gen_range(0.01..0.99),
            ];
            let fast = model.pdf(&u).unwrap();
            let slow = model.pdf_naive(&u).unwrap();
            assert!((fast - slow).abs() < 1e-12, "fast={fast} slow={slow}");
        }
    }

    #[test]
    fn weights_dual_route_agreement() {
        let ranks = crate::ranks::RankMatrix::new(array![[1u32, 1u32], [2, 2]]).unwrap();
        let model = EcbcModel::new(ranks, DegreeVector::constant(2, 2).unwrap()).unwrap();
        let product = model.bernstein_weights().unwrap();
        let fd = model.bernstein_weights_fd().unwrap();
        assert_eq!(product.len(), 4);
        for (a, b) in product.iter().zip(fd.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        let total: f64 = product.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_singleton_for_unit_degrees() {
        let ranks = crate::ranks::RankMatrix::new(array![[1u32, 2u32], [2, 1]]).unwrap();
        let model = EcbcModel::new(ranks, DegreeVector::constant(2, 1).unwrap()).unwrap();
        let w = model.bernstein_weights().unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn naive_guard_refuses_large_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values = Array2::from_shape_fn((3, 4), |_| rng.gen::<f64>());
        let data = Dataset::new(values).unwrap();
        let ranks = compute_ranks(&data, TiePolicy::InputOrder, 0);
        let model =
            EcbcModel::new(ranks, DegreeVector::constant(4, 500).unwrap()).unwrap();
        assert!(matches!(
            model.cdf_naive(&[0.5; 4]),
            Err(Error::SizeGuard(_))
        ));
    }

    #[test]
    fn serde_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = random_model(&mut rng, 6, 3, 7);
        let json = serde_json::to_string(&model).unwrap();
        let back: EcbcModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.ranks().ranks(), model.ranks().ranks());
        assert_eq!(back.degrees(), model.degrees());
    }
}
