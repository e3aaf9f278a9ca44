//! Exact i.i.d. samplers and random ground-truth generators.

mod generators;
mod grid;

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::check_symmetric;

pub use generators::{random_polynomial_1d, random_psd_precision, random_regular_ggm, random_regular_graph};
pub use grid::{build_grid, GridDistribution};

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a list of labels.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    // splitmix64 over the label sequence
    let mut z = base;
    for &l in labels {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(l.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// `n × p` matrix of samples stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    n: usize,
    p: usize,
    data: Vec<f64>,
    seed: u64,
}

impl SampleSet {
    pub fn from_rows(p: usize, data: Vec<f64>, seed: u64) -> Result<Self> {
        if p == 0 || data.is_empty() || data.len() % p != 0 {
            return Err(Error::InvalidParameter(format!(
                "sample data of length {} cannot form rows of width {p}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite sample value at row {}",
                pos / p
            )));
        }
        Ok(Self {
            n: data.len() / p,
            p,
            data,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.p)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.p];
        for r in self.rows() {
            for (a, v) in m.iter_mut().zip(r) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.n as f64);
        m
    }

    /// Sample covariance with denominator `n`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut cov = DMatrix::zeros(self.p, self.p);
        for r in self.rows() {
            for a in 0..self.p {
                let da = r[a] - mean[a];
                for b in a..self.p {
                    cov[(a, b)] += da * (r[b] - mean[b]);
                }
            }
        }
        for a in 0..self.p {
            for b in a..self.p {
                let v = cov[(a, b)] / self.n as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        cov
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> SampleSet {
        let n = n.min(self.n).max(1);
        SampleSet {
            n,
            p: self.p,
            data: self.data[..n * self.p].to_vec(),
            seed: self.seed,
        }
    }

    /// Bootstrap resample of the rows.
    pub fn bootstrap(&self, seed: u64) -> SampleSet {
        let mut rng = rng_from_seed(seed);
        let mut data = Vec::with_capacity(self.data.len());
        for _ in 0..self.n {
            let i = rng.random_range(0..self.n);
            data.extend_from_slice(self.row(i));
        }
        SampleSet {
            n: self.n,
            p: self.p,
            data,
            seed,
        }
    }

    /// Relabels columns: old column `j` becomes column `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> SampleSet {
        assert_eq!(perm.len(), self.p);
        let mut data = vec![0.0; self.data.len()];
        for (dst, src) in data.chunks_exact_mut(self.p).zip(self.rows()) {
            for (j, &v) in src.iter().enumerate() {
                dst[perm[j]] = v;
            }
        }
        SampleSet { data, ..*self }
    }

    /// CSV with one sample per row, no header, 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        let mut fields = Vec::with_capacity(self.p);
        for r in self.rows() {
            fields.clear();
            fields.extend(r.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, seed: u64) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut data = Vec::new();
        let mut p = None;
        for record in r.records() {
            let record = record?;
            match p {
                None => p = Some(record.len()),
                Some(w) if w != record.len() => {
                    return Err(Error::Dimension {
                        expected: w,
                        got: record.len(),
                    })
                }
                _ => {}
            }
            for field in record.iter() {
                data.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::InvalidParameter(format!("bad sample value {field:?}: {e}"))
                })?);
            }
        }
        SampleSet::from_rows(p.unwrap_or(0), data, seed)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, 0)
    }
}

/// `n` draws from `N(mean, precision⁻¹)`.
pub fn sample_gaussian(precision: &DMatrix<f64>, mean: &[f64], n: usize, seed: u64) -> Result<SampleSet> {
    let p = precision.nrows();
    if precision.ncols() != p || mean.len() != p {
        return Err(Error::Dimension {
            expected: p,
            got: mean.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    check_symmetric(precision)?;
    let chol = precision.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    // x = μ + L^{-T} z has covariance (L Lᵀ)⁻¹.
    let lt = chol.l().transpose();
    let transform = lt
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::NotPositiveDefinite)?;

    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(n * p);
    let mut z = DVector::<f64>::zeros(p);
    for _ in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for a in 0..p {
            let mut acc = mean[a];
            for b in a..p {
                acc += transform[(a, b)] * z[b];
            }
            data.push(acc);
        }
    }
    SampleSet::from_rows(p, data, seed)
}

/// Independent draws from each grid, with `assignment[f]` naming the output
/// columns of factor `f`.
pub fn sample_product(
    grids: &[&GridDistribution],
    assignment: &[Vec<usize>],
    n: usize,
    seed: u64,
) -> Result<SampleSet> {
    if grids.len() != assignment.len() {
        return Err(Error::InvalidAssignment(format!(
            "{} grids but {} assignments",
            grids.len(),
            assignment.len()
        )));
    }
    let p: usize = assignment.iter().map(|a| a.len()).sum();
    let mut seen = vec![false; p];
    for (g, cols) in grids.iter().zip(assignment) {
        if g.dims() != cols.len() {
            return Err(Error::InvalidAssignment(format!(
                "grid of dimension {} assigned {} columns",
                g.dims(),
                cols.len()
            )));
        }
        for &c in cols {
            if c >= p || seen[c] {
                return Err(Error::InvalidAssignment(format!(
                    "column {c} is out of range or assigned twice"
                )));
            }
            seen[c] = true;
        }
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }

    let mut rng = rng_from_seed(seed);
    let mut data = vec![0.0; n * p];
    let mut buf = [0.0; 2];
    for row in data.chunks_exact_mut(p) {
        for (g, cols) in grids.iter().zip(assignment) {
            g.draw(&mut rng, &mut buf[..g.dims()]);
            for (&c, &v) in cols.iter().zip(&buf) {
                row[c] = v;
            }
        }
    }
    SampleSet::from_rows(p, data, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_moments() {
        let n = 100_000;
        let s = sample_gaussian(&DMatrix::identity(3, 3), &[0.0; 3], n, 7).unwrap();
        let mean = s.mean();
        let cov = s.covariance();
        for j in 0..3 {
            assert!(mean[j].abs() < 4.0 / (n as f64).sqrt());
            assert!((cov[(j, j)] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn correlated_covariance_matches_inverse() {
        let prec = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]);
        let n = 200_000;
        let s = sample_gaussian(&prec, &[0.0, 0.0], n, 11).unwrap();
        let cov = s.covariance();
        // Σ = (1 / (1 - 1/16)) [[1, -1/4], [-1/4, 1]]
        let scale = 1.0 / (1.0 - 0.0625);
        let sigma = [[scale, -0.25 * scale], [-0.25 * scale, scale]];
        for a in 0..2 {
            for b in 0..2 {
                // std-err of a sample covariance entry: sqrt((Σ_aa Σ_bb + Σ_ab²) / n)
                let se = ((sigma[a][a] * sigma[b][b] + sigma[a][b] * sigma[a][b]) / n as f64).sqrt();
                assert!((cov[(a, b)] - sigma[a][b]).abs() < 4.0 * se, "entry ({a},{b})");
            }
        }
    }

    #[test]
    fn gaussian_is_deterministic_and_checks_input() {
        let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let a = sample_gaussian(&prec, &[1.0, -1.0], 50, 3).unwrap();
        let b = sample_gaussian(&prec, &[1.0, -1.0], 50, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_gaussian(&prec, &[1.0, -1.0], 50, 4).unwrap();
        assert_ne!(a, c);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        assert!(matches!(sample_gaussian(&bad, &[0.0; 2], 5, 0), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let prec = DMatrix::identity(3, 3);
        let s = sample_gaussian(&prec, &[0.0; 3], 20, 9).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 20);
        assert!(!text.starts_with("x"));
        let back = SampleSet::read_csv(buf.as_slice(), 9).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn product_assignment_validation() {
        let g = GridDistribution::from_weights_1d(-1.0, 1.0, vec![1.0; 10]).unwrap();
        assert!(sample_product(&[&g, &g], &[vec![0], vec![0]], 10, 0).is_err());
        assert!(sample_product(&[&g, &g], &[vec![0], vec![2]], 10, 0).is_err());
        assert!(sample_product(&[&g], &[vec![0, 1]], 10, 0).is_err());
        let s = sample_product(&[&g, &g, &g], &[vec![2], vec![0], vec![1]], 1000, 5).unwrap();
        assert_eq!(s.p(), 3);
        for j in 0..3 {
            assert!(s.column(j).iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, &[0, 1]);
        let b = derive_seed(1, &[1, 0]);
        let c = derive_seed(2, &[0, 1]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(1, &[0, 1]));
    }
}
