//! Monomial-basis energy functions `E(x) = -Σ_k θ_k f_k(x_k)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A monomial `Π_j x_j^{m_j}` in canonical form: variable indices strictly
/// increasing, multiplicities at least one.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex {
    factors: Vec<(usize, u32)>,
}

impl MultiIndex {
    /// Builds a canonical multi-index from (variable, multiplicity) pairs in
    /// any order; repeated variables have their multiplicities summed.
    pub fn new(mut factors: Vec<(usize, u32)>) -> Result<Self> {
        if factors.iter().any(|&(_, m)| m == 0) {
            return Err(Error::InvalidMultiIndex("zero multiplicity".into()));
        }
        if factors.is_empty() {
            return Err(Error::InvalidMultiIndex("order must be at least 1".into()));
        }
        factors.sort_unstable();
        let mut merged: Vec<(usize, u32)> = Vec::with_capacity(factors.len());
        for (v, m) in factors {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += m,
                _ => merged.push((v, m)),
            }
        }
        Ok(Self { factors: merged })
    }

    /// Multi-index from a list of variables with repetition, e.g. `[0, 0, 2]`
    /// for `x0² x2`.
    pub fn from_vars(vars: &[usize]) -> Result<Self> {
        Self::new(vars.iter().map(|&v| (v, 1)).collect())
    }

    /// `x_var^power`
    pub fn power(var: usize, power: u32) -> Self {
        assert!(power > 0);
        Self {
            factors: vec![(var, power)],
        }
    }

    pub fn pair(a: usize, b: usize) -> Self {
        Self::from_vars(&[a, b]).expect("non-empty")
    }

    pub fn factors(&self) -> &[(usize, u32)] {
        &self.factors
    }

    pub fn order(&self) -> u32 {
        self.factors.iter().map(|f| f.1).sum()
    }

    /// Number of distinct variables.
    pub fn arity(&self) -> usize {
        self.factors.len()
    }

    pub fn max_var(&self) -> usize {
        self.factors.last().map(|f| f.0).unwrap_or(0)
    }

    pub fn vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.factors.iter().map(|f| f.0)
    }

    pub fn contains(&self, var: usize) -> bool {
        self.multiplicity(var) > 0
    }

    pub fn multiplicity(&self, var: usize) -> u32 {
        self.factors
            .binary_search_by_key(&var, |f| f.0)
            .map(|i| self.factors[i].1)
            .unwrap_or(0)
    }

    /// The monomial with `var` removed entirely; `None` when nothing remains.
    pub fn without(&self, var: usize) -> Option<MultiIndex> {
        let rest: Vec<_> = self.factors.iter().copied().filter(|f| f.0 != var).collect();
        if rest.is_empty() {
            None
        } else {
            Some(MultiIndex { factors: rest })
        }
    }

    /// Relabels variables through `perm` (new index of old variable `j` is `perm[j]`).
    pub fn permuted(&self, perm: &[usize]) -> MultiIndex {
        MultiIndex::new(self.factors.iter().map(|&(v, m)| (perm[v], m)).collect())
            .expect("permutation preserves validity")
    }

    /// Evaluates the monomial; caller guarantees every index is in range.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = 1.0;
        for &(v, m) in &self.factors {
            acc *= x[v].powi(m as i32);
        }
        acc
    }

    /// Product over all factors except `var`.
    #[inline]
    pub fn eval_without(&self, var: usize, x: &[f64]) -> f64 {
        let mut acc = 1.0;
        for &(v, m) in &self.factors {
            if v != var {
                acc *= x[v].powi(m as i32);
            }
        }
        acc
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, &(v, m)) in self.factors.iter().enumerate() {
            if n > 0 {
                write!(f, " ")?;
            }
            if m == 1 {
                write!(f, "x{v}")?;
            } else {
                write!(f, "x{v}^{m}")?;
            }
        }
        Ok(())
    }
}

pub fn eval_monomial(k: &MultiIndex, x: &[f64]) -> Result<f64> {
    if let Some(&(v, _)) = k.factors.iter().find(|f| f.0 >= x.len()) {
        return Err(Error::IndexOutOfRange { index: v, p: x.len() });
    }
    Ok(k.eval_unchecked(x))
}

/// Sparse energy model over `p` variables with monomials of order at most `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    p: usize,
    s: u32,
    terms: BTreeMap<MultiIndex, f64>,
}

impl EnergyModel {
    pub fn new(p: usize, s: u32) -> Result<Self> {
        if p == 0 || s == 0 {
            return Err(Error::InvalidModel("p and s must be positive".into()));
        }
        Ok(Self {
            p,
            s,
            terms: BTreeMap::new(),
        })
    }

    /// Builds a model with `s` set to the largest order present.
    pub fn from_terms(p: usize, terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Result<Self> {
        let terms: Vec<_> = terms.into_iter().collect();
        let s = terms.iter().map(|(k, _)| k.order()).max().unwrap_or(1);
        let mut model = Self::new(p, s)?;
        for (k, theta) in terms {
            model.add(k, theta)?;
        }
        Ok(model)
    }

    /// Adds `theta` to the coefficient of `k`; exact zeros are dropped.
    pub fn add(&mut self, k: MultiIndex, theta: f64) -> Result<()> {
        self.check_index(&k)?;
        if !theta.is_finite() {
            return Err(Error::InvalidModel(format!("non-finite coefficient for {k}")));
        }
        let entry = self.terms.entry(k.clone()).or_insert(0.0);
        *entry += theta;
        if *entry == 0.0 {
            self.terms.remove(&k);
        }
        Ok(())
    }

    pub fn set(&mut self, k: MultiIndex, theta: f64) -> Result<()> {
        self.check_index(&k)?;
        if theta == 0.0 {
            self.terms.remove(&k);
        } else {
            self.terms.insert(k, theta);
        }
        Ok(())
    }

    fn check_index(&self, k: &MultiIndex) -> Result<()> {
        if k.max_var() >= self.p {
            return Err(Error::IndexOutOfRange {
                index: k.max_var(),
                p: self.p,
            });
        }
        if k.order() > self.s {
            return Err(Error::InvalidModel(format!(
                "term {k} has order {} above the cap {}",
                k.order(),
                self.s
            )));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn terms(&self) -> &BTreeMap<MultiIndex, f64> {
        &self.terms
    }

    pub fn coefficient(&self, k: &MultiIndex) -> f64 {
        self.terms.get(k).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `E(x) = -Σ_k θ_k f_k(x_k)`
    pub fn eval_energy(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::Dimension {
                expected: self.p,
                got: x.len(),
            });
        }
        Ok(-self.terms.iter().map(|(k, t)| t * k.eval_unchecked(x)).sum::<f64>())
    }

    pub fn local_view(&self, node: usize) -> LocalView {
        let (basis, coefficients) = self
            .terms
            .iter()
            .filter(|(k, _)| k.contains(node))
            .map(|(k, t)| (k.clone(), *t))
            .unzip();
        LocalView {
            node,
            p: self.p,
            basis,
            coefficients,
        }
    }

    /// Interaction hyperedges: variable sets of terms touching two or more variables.
    pub fn hyperedges(&self) -> std::collections::BTreeSet<Vec<usize>> {
        self.terms
            .keys()
            .filter(|k| k.arity() >= 2)
            .map(|k| k.vars().collect())
            .collect()
    }

    /// Smallest |θ| over interaction terms (two or more variables).
    pub fn min_interaction(&self) -> Option<f64> {
        self.terms
            .iter()
            .filter(|(k, _)| k.arity() >= 2)
            .map(|(_, t)| t.abs())
            .min_by(f64::total_cmp)
    }

    /// Precision matrix of a purely quadratic model; `None` if other terms exist.
    pub fn to_precision(&self) -> Option<DMatrix<f64>> {
        let mut prec = DMatrix::zeros(self.p, self.p);
        for (k, &t) in &self.terms {
            match k.factors() {
                [(i, 2)] => prec[(*i, *i)] = 2.0 * t,
                [(i, 1), (j, 1)] => {
                    prec[(*i, *j)] = t;
                    prec[(*j, *i)] = t;
                }
                _ => return None,
            }
        }
        Some(prec)
    }

    /// Relabels variables: new index of old variable `j` is `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> EnergyModel {
        EnergyModel {
            p: self.p,
            s: self.s,
            terms: self.terms.iter().map(|(k, t)| (k.permuted(perm), *t)).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(text)?.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    p: usize,
    s: u32,
    terms: Vec<TermEntry>,
}

#[derive(Serialize, Deserialize)]
struct TermEntry {
    vars: Vec<[u64; 2]>,
    theta: f64,
}

impl From<&EnergyModel> for ModelFile {
    fn from(m: &EnergyModel) -> Self {
        ModelFile {
            p: m.p,
            s: m.s,
            terms: m
                .terms
                .iter()
                .map(|(k, &theta)| TermEntry {
                    vars: k.factors().iter().map(|&(v, e)| [v as u64, e as u64]).collect(),
                    theta,
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for EnergyModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let mut model = EnergyModel::new(file.p, file.s)?;
        for entry in file.terms {
            let factors = entry
                .vars
                .iter()
                .map(|&[v, m]| (v as usize, m as u32))
                .collect::<Vec<_>>();
            let k = MultiIndex::new(factors)?;
            if model.terms.contains_key(&k) {
                return Err(Error::InvalidModel(format!("duplicate term {k}")));
            }
            model.set(k, entry.theta)?;
        }
        Ok(model)
    }
}

/// Terms of a model that contain `node`, in lexicographic multi-index order.
/// The order fixes the parameter vector layout used by the objectives.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalView {
    node: usize,
    p: usize,
    basis: Vec<MultiIndex>,
    coefficients: Vec<f64>,
}

impl LocalView {
    /// View over an explicit candidate basis with zero coefficients.
    pub fn from_basis(node: usize, p: usize, mut basis: Vec<MultiIndex>) -> Result<Self> {
        basis.sort();
        basis.dedup();
        for k in &basis {
            if !k.contains(node) {
                return Err(Error::InvalidMultiIndex(format!("{k} does not contain x{node}")));
            }
            if k.max_var() >= p {
                return Err(Error::IndexOutOfRange { index: k.max_var(), p });
            }
        }
        let coefficients = vec![0.0; basis.len()];
        Ok(Self {
            node,
            p,
            basis,
            coefficients,
        })
    }

    /// Same basis with the coefficients read off `model` (absent terms are zero).
    pub fn with_model_coefficients(mut self, model: &EnergyModel) -> Self {
        self.coefficients = self.basis.iter().map(|k| model.coefficient(k)).collect();
        self
    }

    pub fn with_coefficients(mut self, theta: &[f64]) -> Self {
        assert_eq!(theta.len(), self.basis.len());
        self.coefficients = theta.to_vec();
        self
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn basis(&self) -> &[MultiIndex] {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Largest power of the node variable across the basis.
    pub fn max_node_power(&self) -> u32 {
        self.basis.iter().map(|k| k.multiplicity(self.node)).max().unwrap_or(0)
    }

    /// `E_i(x) = -Σ_{k ∈ K_i} θ_k f_k(x_k)`
    pub fn eval_local_energy(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::Dimension {
                expected: self.p,
                got: x.len(),
            });
        }
        Ok(-self
            .basis
            .iter()
            .zip(&self.coefficients)
            .map(|(k, t)| t * k.eval_unchecked(x))
            .sum::<f64>())
    }
}

/// Candidate hypothesis class for one node: every monomial containing the
/// node with order in `[min_order, max_order]` and at most `max_arity`
/// distinct variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub min_order: u32,
    pub max_order: u32,
    pub max_arity: usize,
}

impl BasisSpec {
    pub fn new(min_order: u32, max_order: u32, max_arity: usize) -> Self {
        Self {
            min_order,
            max_order,
            max_arity,
        }
    }

    /// Quadratic class used for Gaussian models: x_i² and x_i x_j.
    pub fn pairwise_quadratic() -> Self {
        Self::new(2, 2, 2)
    }

    pub fn node_basis(&self, p: usize, node: usize) -> Vec<MultiIndex> {
        self.global_basis(p)
            .into_iter()
            .filter(|k| k.contains(node))
            .collect()
    }

    /// Every monomial of the class over `p` variables, sorted.
    pub fn global_basis(&self, p: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut current = Vec::new();
        for order in self.min_order.max(1)..=self.max_order {
            enumerate_monomials(p, order, 0, self.max_arity, &mut current, &mut out);
        }
        out.sort();
        out
    }
}

fn enumerate_monomials(
    p: usize,
    remaining: u32,
    start: usize,
    max_arity: usize,
    current: &mut Vec<(usize, u32)>,
    out: &mut Vec<MultiIndex>,
) {
    if remaining == 0 {
        out.push(MultiIndex {
            factors: current.clone(),
        });
        return;
    }
    if current.len() == max_arity {
        return;
    }
    for v in start..p {
        for m in 1..=remaining {
            current.push((v, m));
            enumerate_monomials(p, remaining - m, v + 1, max_arity, current, out);
            current.pop();
        }
    }
}

/// Gaussian energy `-½ Σ_i θ_ii (x_i-μ_i)² - Σ_{i<j} θ_ij (x_i-μ_i)(x_j-μ_j)`
/// expanded into monomials. Constant terms from a nonzero mean are dropped.
pub fn gaussian_model(precision: &DMatrix<f64>, mean: &[f64]) -> Result<EnergyModel> {
    let p = precision.nrows();
    if precision.ncols() != p {
        return Err(Error::Dimension {
            expected: p,
            got: precision.ncols(),
        });
    }
    if mean.len() != p {
        return Err(Error::Dimension {
            expected: p,
            got: mean.len(),
        });
    }
    check_symmetric(precision)?;
    if precision.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }

    let mut model = EnergyModel::new(p, 2)?;
    let shift = precision * nalgebra::DVector::from_column_slice(mean);
    for i in 0..p {
        model.add(MultiIndex::power(i, 2), 0.5 * precision[(i, i)])?;
        for j in (i + 1)..p {
            let t = precision[(i, j)];
            if t != 0.0 {
                model.add(MultiIndex::pair(i, j), t)?;
            }
        }
        if shift[i] != 0.0 {
            model.add(MultiIndex::power(i, 1), -shift[i])?;
        }
    }
    Ok(model)
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let asym = (m - m.transpose()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mi(f: &[(usize, u32)]) -> MultiIndex {
        MultiIndex::new(f.to_vec()).unwrap()
    }

    #[test]
    fn monomial_examples() {
        assert_eq!(eval_monomial(&mi(&[(0, 2)]), &[3.0, 7.0]).unwrap(), 9.0);
        assert_eq!(eval_monomial(&mi(&[(0, 1), (1, 1), (2, 1)]), &[1.0, 2.0, 3.0]).unwrap(), 6.0);
        assert_eq!(eval_monomial(&mi(&[(0, 4)]), &[0.0, 5.0]).unwrap(), 0.0);
        assert!(matches!(
            eval_monomial(&mi(&[(3, 1)]), &[1.0, 2.0]),
            Err(Error::IndexOutOfRange { index: 3, p: 2 })
        ));
    }

    #[test]
    fn canonical_form_merges_and_sorts() {
        let a = MultiIndex::from_vars(&[2, 0, 0]).unwrap();
        let b = mi(&[(0, 2), (2, 1)]);
        assert_eq!(a, b);
        assert_eq!(a.order(), 3);
        assert_eq!(a.arity(), 2);
        assert_eq!(a.multiplicity(0), 2);
        assert_eq!(a.to_string(), "x0^2 x2");
        assert!(MultiIndex::new(vec![]).is_err());
        assert!(MultiIndex::new(vec![(1, 0)]).is_err());
    }

    #[test]
    fn energy_examples() {
        let quartic = EnergyModel::from_terms(
            1,
            [
                (MultiIndex::power(0, 2), 1.0),
                (MultiIndex::power(0, 3), 0.5),
                (MultiIndex::power(0, 4), 2.0),
            ],
        )
        .unwrap();
        assert_eq!(quartic.eval_energy(&[1.0]).unwrap(), -3.5);
        assert!(quartic.eval_energy(&[1.0, 2.0]).is_err());

        let empty = EnergyModel::new(3, 2).unwrap();
        assert_eq!(empty.eval_energy(&[1.0, 2.0, 3.0]).unwrap(), 0.0);

        let prec = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]);
        let ggm = gaussian_model(&prec, &[0.0, 0.0]).unwrap();
        assert_eq!(ggm.eval_energy(&[1.0, 1.0]).unwrap(), -1.25);
        assert_eq!(ggm.coefficient(&MultiIndex::pair(0, 1)), 0.25);
    }

    #[test]
    fn gaussian_identity_terms() {
        let ggm = gaussian_model(&DMatrix::identity(2, 2), &[0.0, 0.0]).unwrap();
        assert_eq!(ggm.len(), 2);
        assert_eq!(ggm.coefficient(&MultiIndex::power(0, 2)), 0.5);
        assert_eq!(ggm.coefficient(&MultiIndex::power(1, 2)), 0.5);
        assert_eq!(ggm.s(), 2);
        assert_eq!(ggm.to_precision().unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn gaussian_with_mean_matches_direct_form() {
        let prec = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mu = [1.0, 0.0];
        let ggm = gaussian_model(&prec, &mu).unwrap();
        assert_eq!(ggm.coefficient(&MultiIndex::power(0, 1)), -1.0);
        let direct = |x: &[f64]| -0.5 * ((x[0] - mu[0]).powi(2) + (x[1] - mu[1]).powi(2));
        let pts = [[0.3, -1.2], [2.5, 0.7], [-1.1, 4.0], [0.0, 0.0], [7.3, -3.3]];
        let offsets: Vec<f64> = pts.iter().map(|x| ggm.eval_energy(x).unwrap() - direct(x)).collect();
        for o in &offsets {
            assert!((o - offsets[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_rejects_bad_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.2, 1.0]);
        assert!(matches!(gaussian_model(&asym, &[0.0, 0.0]), Err(Error::NotSymmetric(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            gaussian_model(&indefinite, &[0.0, 0.0]),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn local_view_examples() {
        let mut m = EnergyModel::new(3, 4).unwrap();
        m.set(MultiIndex::pair(0, 1), 0.3).unwrap();
        m.set(MultiIndex::pair(0, 2), -0.2).unwrap();
        m.set(MultiIndex::pair(1, 2), 0.7).unwrap();
        let x = [0.5, -1.5, 2.0];
        let v0 = m.local_view(0);
        assert_eq!(v0.len(), 2);
        let want = -(0.3 * 0.5 * -1.5 + -0.2 * 0.5 * 2.0);
        assert!((v0.eval_local_energy(&x).unwrap() - want).abs() < 1e-15);

        let lonely = EnergyModel::from_terms(3, [(MultiIndex::pair(0, 1), 1.0)]).unwrap();
        assert_eq!(lonely.local_view(2).eval_local_energy(&x).unwrap(), 0.0);

        let single = EnergyModel::from_terms(2, [(MultiIndex::pair(0, 1), 0.4)]).unwrap();
        let y = [1.5, 2.0];
        let e0 = single.local_view(0).eval_local_energy(&y).unwrap();
        let e1 = single.local_view(1).eval_local_energy(&y).unwrap();
        assert_eq!(e0, e1);
        assert_eq!(e0, -0.4 * 3.0);
    }

    #[test]
    fn basis_enumeration_counts() {
        // degree 2..4 monomials in 4 variables containing x0: 4 + 10 + 20
        let spec = BasisSpec::new(2, 4, 4);
        assert_eq!(spec.node_basis(4, 0).len(), 34);
        assert_eq!(spec.global_basis(4).len(), 10 + 20 + 35);
        let ggm = BasisSpec::pairwise_quadratic();
        assert_eq!(ggm.node_basis(10, 3).len(), 10);
        assert_eq!(ggm.global_basis(10).len(), 55);
        // arity cap
        let capped = BasisSpec::new(1, 3, 1);
        assert_eq!(capped.node_basis(5, 2), vec![
            MultiIndex::power(2, 1),
            MultiIndex::power(2, 2),
            MultiIndex::power(2, 3)
        ]);
    }

    #[test]
    fn json_roundtrip_is_deterministic() {
        let mut m = EnergyModel::new(3, 4).unwrap();
        m.set(MultiIndex::from_vars(&[2, 1, 1, 0]).unwrap(), 0.125).unwrap();
        m.set(MultiIndex::power(0, 2), 0.1 + 0.2).unwrap();
        let text = m.to_json().unwrap();
        let back = EnergyModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
        let bad = r#"{"p": 2, "s": 2, "terms": [{"vars": [[0, 3]], "theta": 1.0}]}"#;
        assert!(EnergyModel::from_json(bad).is_err());
    }

    fn random_model() -> impl Strategy<Value = (EnergyModel, Vec<f64>)> {
        let p = 4usize;
        let basis = BasisSpec::new(1, 4, 4).global_basis(p);
        let nb = basis.len();
        (
            proptest::collection::vec((0..nb, -2.0f64..2.0), 1..12),
            proptest::collection::vec(-2.0f64..2.0, p),
        )
            .prop_map(move |(entries, x)| {
                let mut m = EnergyModel::new(p, 4).unwrap();
                for (idx, t) in entries {
                    m.set(basis[idx].clone(), t).unwrap();
                }
                (m, x)
            })
    }

    proptest! {
        #[test]
        fn local_views_partition_the_energy((model, x) in random_model()) {
            // Count each term once, at its smallest variable.
            let mut rebuilt = 0.0;
            for i in 0..model.p() {
                let view = model.local_view(i);
                for (k, t) in view.basis().iter().zip(view.coefficients()) {
                    if k.factors()[0].0 == i {
                        rebuilt -= t * k.eval_unchecked(&x);
                    }
                }
            }
            let direct = model.eval_energy(&x).unwrap();
            prop_assert!((rebuilt - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }

        #[test]
        fn energy_is_polynomial_of_degree_s((model, x) in random_model(), coord in 0usize..4) {
            // Fifth forward difference of a quartic vanishes.
            let h = 0.5;
            let mut acc = 0.0;
            let binom = [1.0, -5.0, 10.0, -10.0, 5.0, -1.0];
            for (j, b) in binom.iter().enumerate() {
                let mut y = x.clone();
                y[coord] += (5 - j) as f64 * h;
                acc += b * model.eval_energy(&y).unwrap();
            }
            let scale: f64 = model.terms().values().map(|t| t.abs()).sum::<f64>() * 1e4;
            prop_assert!(acc.abs() <= 1e-12 * scale.max(1.0));
        }
    }
}
