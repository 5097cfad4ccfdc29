//! Likelihood engine: the solver's incrementally maintained vectors and the
//! one-dimensional gradient/Hessian reduction.
//!
//! The state holds `Xβ`, `L × exp(Xβ)` (both K-vectors) and the per-subject
//! denominators `M[L × exp(Xβ)]` (an N-vector). A coordinate step on drug `j`
//! touches only the rows in column `j`, so the sparse update costs
//! `O(‖X_j‖₀)`. The gradient and Hessian share the ratio
//! `w_i = M[L × exp(Xβ) × X_j]_i / M[L × exp(Xβ)]_i`; it is formed on the fly
//! from the column's (subject, row) pairs and both inner products are reduced
//! in the same pass, so no `W` vector is ever stored.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{Column, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            _ => Err(Error::Invalid(format!("unknown precision `{s}`"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

/// Floating-point type the engine vectors are stored and reduced in.
pub trait Real:
    Copy
    + Send
    + Sync
    + PartialOrd
    + Debug
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    /// Largest admissible `|Xβ|` entry.
    const EXP_LIMIT: f64;
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const EXP_LIMIT: f64 = 700.0;
    const PRECISION: Precision = Precision::Double;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const EXP_LIMIT: f64 = 80.0;
    const PRECISION: Precision = Precision::Single;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
}

/// One-dimensional log-likelihood gradient and Hessian for a coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradHess {
    pub g: f64,
    pub h: f64,
}

/// Partial sums `Σ n_i w_i` and `Σ n_i w_i (1 − w_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Partial<F> {
    nw: F,
    nww: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineState<F: Real = f64> {
    beta: Vec<f64>,
    xbeta: Vec<F>,
    l_exp_xbeta: Vec<F>,
    denominators: Vec<F>,
}

fn overflow(max_abs: f64, limit: f64) -> Error {
    Error::Overflow {
        max_abs_xbeta: max_abs,
        limit,
    }
}

impl<F: Real> EngineState<F> {
    /// Builds the state for `beta` from scratch.
    pub fn new(ds: &Dataset, beta: &[f64]) -> Result<Self> {
        let mut state = EngineState {
            beta: vec![0.0; ds.num_drugs()],
            xbeta: vec![F::ZERO; ds.num_rows()],
            l_exp_xbeta: vec![F::ZERO; ds.num_rows()],
            denominators: vec![F::ZERO; ds.num_subjects()],
        };
        state.dense_recompute(ds, beta)?;
        Ok(state)
    }

    pub fn precision(&self) -> Precision {
        F::PRECISION
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn xbeta(&self) -> &[F] {
        &self.xbeta
    }

    pub fn l_exp_xbeta(&self) -> &[F] {
        &self.l_exp_xbeta
    }

    pub fn denominators(&self) -> &[F] {
        &self.denominators
    }

    /// Re-evaluates every vector from `beta` in `O(nnz(X) + K)`. On error the
    /// state is left untouched.
    pub fn dense_recompute(&mut self, ds: &Dataset, beta: &[f64]) -> Result<()> {
        if beta.len() != ds.num_drugs() {
            return Err(Error::Invalid(format!(
                "beta has {} entries for {} drugs",
                beta.len(),
                ds.num_drugs()
            )));
        }
        if let Some((j, b)) = beta.iter().enumerate().find(|(_, b)| !b.is_finite()) {
            return Err(Error::Invalid(format!("beta[{j}] = {b} is not finite")));
        }
        let beta_f: Vec<F> = beta.iter().map(|&b| F::from_f64(b)).collect();
        let xbeta: Vec<F> = (0..ds.num_rows())
            .map(|k| {
                ds.row_exposures(k)
                    .iter()
                    .fold(F::ZERO, |acc, &d| acc + beta_f[d as usize])
            })
            .collect();
        let max_abs = xbeta.iter().fold(0.0f64, |m, x| m.max(x.to_f64().abs()));
        if max_abs > F::EXP_LIMIT {
            return Err(overflow(max_abs, F::EXP_LIMIT));
        }
        self.beta.clear();
        self.beta.extend_from_slice(beta);
        self.xbeta = xbeta;
        self.refresh_from_xbeta(ds);
        Ok(())
    }

    /// Steps 2 and 3 evaluated densely from the current `Xβ`.
    fn refresh_from_xbeta(&mut self, ds: &Dataset) {
        for ((le, &x), &l) in self
            .l_exp_xbeta
            .iter_mut()
            .zip(&self.xbeta)
            .zip(ds.lengths())
        {
            *le = F::from_f64(f64::from(l)) * x.exp();
        }
        let offsets = ds.subject_offsets();
        for (i, den) in self.denominators.iter_mut().enumerate() {
            *den = self.l_exp_xbeta[offsets[i]..offsets[i + 1]]
                .iter()
                .fold(F::ZERO, |acc, &v| acc + v);
        }
    }

    fn check_step(&self, col: Column<'_>, delta: F) -> Result<()> {
        let mut max_abs = 0.0f64;
        for &k in col.rows {
            let x = (self.xbeta[k as usize] + delta).to_f64().abs();
            max_abs = max_abs.max(x);
        }
        if max_abs > F::EXP_LIMIT {
            return Err(overflow(max_abs, F::EXP_LIMIT));
        }
        Ok(())
    }

    fn validate_step(ds: &Dataset, j: usize, delta: f64) -> Result<()> {
        if j >= ds.num_drugs() {
            return Err(Error::Invalid(format!("drug index {j} out of range")));
        }
        if !delta.is_finite() {
            return Err(Error::Invalid(format!("step {delta} is not finite")));
        }
        Ok(())
    }

    /// Moves `beta[j]` by `delta`, touching only the rows of column `j` and
    /// the subjects that own them.
    pub fn sparse_delta_update(&mut self, ds: &Dataset, j: usize, delta: f64) -> Result<()> {
        Self::validate_step(ds, j, delta)?;
        if delta == 0.0 {
            return Ok(());
        }
        let col = ds.column(j);
        let d = F::from_f64(delta);
        self.check_step(col, d)?;
        apply_sparse(
            col.rows,
            col.subjects,
            0,
            0,
            ds.lengths(),
            d,
            &mut self.xbeta,
            &mut self.l_exp_xbeta,
            &mut self.denominators,
        );
        self.beta[j] += delta;
        Ok(())
    }

    /// Same contract as [`sparse_delta_update`](Self::sparse_delta_update),
    /// with the nonzeros split into `partitions` contiguous subject ranges
    /// updated concurrently. Each range owns its rows and denominator slots,
    /// so the result is bit-identical to the serial update.
    pub fn parallel_sparse_delta_update(
        &mut self,
        ds: &Dataset,
        j: usize,
        delta: f64,
        partitions: usize,
    ) -> Result<()> {
        Self::validate_step(ds, j, delta)?;
        if delta == 0.0 {
            return Ok(());
        }
        let col = ds.column(j);
        let d = F::from_f64(delta);
        self.check_step(col, d)?;
        let ranges = subject_ranges(ds, col, partitions.max(1));
        let offsets = ds.subject_offsets();
        let lengths = ds.lengths();

        let mut chunks = Vec::with_capacity(ranges.len());
        let (mut xb, mut le, mut den) = (
            self.xbeta.as_mut_slice(),
            self.l_exp_xbeta.as_mut_slice(),
            self.denominators.as_mut_slice(),
        );
        let (mut row_base, mut subject_base) = (0usize, 0usize);
        for r in &ranges {
            let row_end = offsets[r.subjects.end];
            let (xb_head, xb_tail) = std::mem::take(&mut xb).split_at_mut(row_end - row_base);
            let (le_head, le_tail) = std::mem::take(&mut le).split_at_mut(row_end - row_base);
            let (den_head, den_tail) =
                std::mem::take(&mut den).split_at_mut(r.subjects.end - subject_base);
            chunks.push((r.pairs.clone(), row_base, subject_base, xb_head, le_head, den_head));
            xb = xb_tail;
            le = le_tail;
            den = den_tail;
            row_base = row_end;
            subject_base = r.subjects.end;
        }
        chunks
            .into_par_iter()
            .for_each(|(pairs, row_base, subject_base, xb, le, den)| {
                apply_sparse(
                    &col.rows[pairs.clone()],
                    &col.subjects[pairs],
                    row_base,
                    subject_base,
                    lengths,
                    d,
                    xb,
                    le,
                    den,
                );
            });
        self.beta[j] += delta;
        Ok(())
    }

    /// The dense path: `Xβ` moves along column `j`, then every
    /// `L × exp(Xβ)` entry and every denominator is re-evaluated in `O(K)`.
    pub fn dense_delta_update(&mut self, ds: &Dataset, j: usize, delta: f64) -> Result<()> {
        Self::validate_step(ds, j, delta)?;
        if delta == 0.0 {
            return Ok(());
        }
        let col = ds.column(j);
        let d = F::from_f64(delta);
        self.check_step(col, d)?;
        for &k in col.rows {
            self.xbeta[k as usize] += d;
        }
        self.refresh_from_xbeta(ds);
        self.beta[j] += delta;
        Ok(())
    }

    /// Fused gradient/Hessian over the subjects touched by column `j`.
    pub fn fused_grad_hess(&self, ds: &Dataset, j: usize) -> Result<GradHess> {
        let col = ds.column(j);
        let p = reduce_pairs(ds, col.rows, col.subjects, &self.l_exp_xbeta, &self.denominators)?;
        Ok(finish(ds, j, p))
    }

    /// Fused gradient/Hessian iterating over all `N` subjects: numerators are
    /// scattered into an N-vector first, as a dense kernel would. Gives the
    /// same result as [`fused_grad_hess`](Self::fused_grad_hess).
    pub fn dense_fused_grad_hess(&self, ds: &Dataset, j: usize) -> Result<GradHess> {
        let n = ds.num_subjects();
        let mut numerators = vec![F::ZERO; n];
        let mut touched = vec![0u32; n];
        let col = ds.column(j);
        for (&k, &s) in col.rows.iter().zip(col.subjects) {
            numerators[s as usize] += self.l_exp_xbeta[k as usize];
            touched[s as usize] += 1;
        }
        let totals = ds.subject_totals();
        let offsets = ds.subject_offsets();
        let mut p = Partial::<F>::default();
        for i in 0..n {
            let eras = offsets[i + 1] - offsets[i];
            let w = ratio(numerators[i], self.denominators[i], touched[i] as usize, eras, i)?;
            accumulate(&mut p, F::from_f64(totals[i] as f64), w);
        }
        Ok(finish(ds, j, p))
    }

    /// Fused gradient/Hessian with subjects split into `partitions`
    /// contiguous ranges reduced concurrently; the partial sums are then
    /// added in range order, so the result depends only on `partitions`.
    pub fn parallel_fused_grad_hess(
        &self,
        ds: &Dataset,
        j: usize,
        partitions: usize,
    ) -> Result<GradHess> {
        let col = ds.column(j);
        let ranges = subject_ranges(ds, col, partitions.max(1));
        let partials: Vec<Partial<F>> = ranges
            .par_iter()
            .map(|r| {
                reduce_pairs(
                    ds,
                    &col.rows[r.pairs.clone()],
                    &col.subjects[r.pairs.clone()],
                    &self.l_exp_xbeta,
                    &self.denominators,
                )
            })
            .collect::<Result<_>>()?;
        let total = partials.iter().fold(Partial::<F>::default(), |acc, p| Partial {
            nw: acc.nw + p.nw,
            nww: acc.nww + p.nww,
        });
        Ok(finish(ds, j, total))
    }

    /// `Y'Xβ − Σ_i n_i log(denominator_i)`.
    pub fn log_likelihood(&self, ds: &Dataset) -> f64 {
        let linear: f64 = ds
            .y_dot_x()
            .iter()
            .zip(&self.beta)
            .map(|(&y, &b)| y as f64 * b)
            .sum();
        let normalizer: f64 = ds
            .subject_totals()
            .iter()
            .zip(&self.denominators)
            .map(|(&n, &d)| n as f64 * d.ln().to_f64())
            .sum();
        linear - normalizer
    }

    /// Largest relative disagreement between this state and one rebuilt
    /// from scratch at the same `beta`.
    pub fn drift(&self, ds: &Dataset) -> Result<f64> {
        let fresh = EngineState::<F>::new(ds, &self.beta)?;
        let rel = |a: &[F], b: &[F]| {
            a.iter().zip(b).fold(0.0f64, |m, (&x, &y)| {
                let (x, y) = (x.to_f64(), y.to_f64());
                m.max((x - y).abs() / x.abs().max(y.abs()).max(1.0))
            })
        };
        Ok(rel(&self.xbeta, &fresh.xbeta)
            .max(rel(&self.l_exp_xbeta, &fresh.l_exp_xbeta))
            .max(rel(&self.denominators, &fresh.denominators)))
    }
}

/// Contiguous subject range and the slice of a column's pairs inside it.
#[derive(Debug, Clone)]
struct Range {
    subjects: std::ops::Range<usize>,
    pairs: std::ops::Range<usize>,
}

fn subject_ranges(ds: &Dataset, col: Column<'_>, partitions: usize) -> Vec<Range> {
    let n = ds.num_subjects();
    (0..partitions)
        .map(|p| {
            let lo = p * n / partitions;
            let hi = (p + 1) * n / partitions;
            let a = col.subjects.partition_point(|&s| (s as usize) < lo);
            let b = col.subjects.partition_point(|&s| (s as usize) < hi);
            Range {
                subjects: lo..hi,
                pairs: a..b,
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn apply_sparse<F: Real>(
    rows: &[u32],
    subjects: &[u32],
    row_base: usize,
    subject_base: usize,
    lengths: &[u32],
    delta: F,
    xbeta: &mut [F],
    l_exp_xbeta: &mut [F],
    denominators: &mut [F],
) {
    for (&k, &s) in rows.iter().zip(subjects) {
        let k = k as usize;
        let slot = k - row_base;
        let x = xbeta[slot] + delta;
        xbeta[slot] = x;
        let fresh = F::from_f64(f64::from(lengths[k])) * x.exp();
        let stale = l_exp_xbeta[slot];
        l_exp_xbeta[slot] = fresh;
        denominators[s as usize - subject_base] += fresh - stale;
    }
}

/// `w_i`, exact at 1 when the column covers every era of the subject.
#[inline]
fn ratio<F: Real>(numerator: F, denominator: F, touched: usize, eras: usize, i: usize) -> Result<F> {
    if touched == 0 {
        return Ok(F::ZERO);
    }
    if touched == eras {
        return Ok(F::ONE);
    }
    if !(denominator > F::ZERO) {
        return Err(Error::Internal(format!(
            "denominator of subject {i} is {denominator:?}"
        )));
    }
    let w = numerator / denominator;
    Ok(if w > F::ONE { F::ONE } else { w })
}

#[inline]
fn accumulate<F: Real>(p: &mut Partial<F>, n: F, w: F) {
    let nw = n * w;
    p.nw += nw;
    p.nww += nw * (F::ONE - w);
}

/// The fused transform-reduce over (subject, row) pairs sorted by subject.
fn reduce_pairs<F: Real>(
    ds: &Dataset,
    rows: &[u32],
    subjects: &[u32],
    l_exp_xbeta: &[F],
    denominators: &[F],
) -> Result<Partial<F>> {
    let totals = ds.subject_totals();
    let offsets = ds.subject_offsets();
    let mut p = Partial::<F>::default();
    let mut idx = 0;
    while idx < rows.len() {
        let s = subjects[idx] as usize;
        let mut numerator = F::ZERO;
        let start = idx;
        while idx < rows.len() && subjects[idx] as usize == s {
            numerator += l_exp_xbeta[rows[idx] as usize];
            idx += 1;
        }
        let eras = offsets[s + 1] - offsets[s];
        let w = ratio(numerator, denominators[s], idx - start, eras, s)?;
        accumulate(&mut p, F::from_f64(totals[s] as f64), w);
    }
    Ok(p)
}

fn finish<F: Real>(ds: &Dataset, j: usize, p: Partial<F>) -> GradHess {
    let g = F::from_f64(ds.y_dot_x()[j] as f64) - p.nw;
    GradHess {
        g: g.to_f64(),
        h: (-p.nww).to_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy;
    use crate::data::{build_dataset, Era, SubjectRecord};
    use approx::assert_relative_eq;

    #[test]
    fn toy_initial_state() {
        let ds = toy();
        let s = EngineState::<f64>::new(&ds, &[0.0]).unwrap();
        assert_eq!(s.l_exp_xbeta(), &[1.0, 1.0]);
        assert_eq!(s.denominators(), &[2.0]);

        let s = EngineState::<f64>::new(&ds, &[2f64.ln()]).unwrap();
        assert_relative_eq!(s.l_exp_xbeta()[0], 2.0, max_relative = 1e-15);
        assert_relative_eq!(s.denominators()[0], 3.0, max_relative = 1e-15);
    }

    #[test]
    fn toy_sparse_step() {
        let ds = toy();
        let mut s = EngineState::<f64>::new(&ds, &[0.0]).unwrap();
        s.sparse_delta_update(&ds, 0, 1.0).unwrap();
        assert_eq!(s.xbeta(), &[1.0, 0.0]);
        assert_eq!(s.l_exp_xbeta(), &[std::f64::consts::E, 1.0]);
        assert_relative_eq!(s.denominators()[0], 1.0 + std::f64::consts::E, max_relative = 1e-15);
        assert_eq!(s.beta(), &[1.0]);

        let before = s.clone();
        s.sparse_delta_update(&ds, 0, 0.0).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn toy_grad_hess_and_likelihood() {
        let ds = toy();
        let s = EngineState::<f64>::new(&ds, &[0.0]).unwrap();
        let gh = s.fused_grad_hess(&ds, 0).unwrap();
        assert_eq!(gh, GradHess { g: 0.5, h: -0.25 });
        assert_relative_eq!(s.log_likelihood(&ds), -(2f64.ln()), max_relative = 1e-15);

        let s = EngineState::<f64>::new(&ds, &[2f64.ln()]).unwrap();
        assert_relative_eq!(s.log_likelihood(&ds), -0.405_465_108_108_164_4, max_relative = 1e-12);
    }

    #[test]
    fn hand_reduction_two_subjects() {
        // subject a: n=1, w=0.5 ; subject b: n=2, w=0.25
        let a = SubjectRecord::new("a", vec![Era::new(1, 1, vec![0]), Era::new(1, 0, vec![])]);
        let b = SubjectRecord::new("b", vec![Era::new(1, 2, vec![0]), Era::new(3, 0, vec![])]);
        let ds = build_dataset(&[a, b], 1).unwrap();
        let s = EngineState::<f64>::new(&ds, &[0.0]).unwrap();
        let gh = s.fused_grad_hess(&ds, 0).unwrap();
        assert_relative_eq!(gh.g, 3.0 - 1.0, max_relative = 1e-15);
        assert_relative_eq!(gh.h, -0.625, max_relative = 1e-15);
    }

    #[test]
    fn single_era_subject_cancels() {
        let a = SubjectRecord::new("a", vec![Era::new(4, 3, vec![0])]);
        let ds = build_dataset(&[a], 1).unwrap();
        let s = EngineState::<f64>::new(&ds, &[0.7]).unwrap();
        assert_eq!(s.fused_grad_hess(&ds, 0).unwrap(), GradHess { g: 0.0, h: -0.0 });
    }

    #[test]
    fn empty_column_is_inert() {
        let a = SubjectRecord::new("a", vec![Era::new(2, 1, vec![0]), Era::new(1, 1, vec![])]);
        let ds = build_dataset(&[a], 2).unwrap();
        let s0 = EngineState::<f64>::new(&ds, &[0.3, 0.0]).unwrap();
        let s1 = EngineState::<f64>::new(&ds, &[0.3, 5.0]).unwrap();
        assert_eq!(s0.denominators(), s1.denominators());
        let mut s2 = s0.clone();
        s2.sparse_delta_update(&ds, 1, 2.5).unwrap();
        assert_eq!(s2.denominators(), s0.denominators());
        assert_eq!(s2.xbeta(), s0.xbeta());
        let gh = s0.fused_grad_hess(&ds, 1).unwrap();
        assert_eq!((gh.g, gh.h), (0.0, -0.0));
    }

    #[test]
    fn overflow_is_reported() {
        let ds = toy();
        let err = EngineState::<f64>::new(&ds, &[800.0]).unwrap_err();
        assert!(matches!(err, Error::Overflow { max_abs_xbeta, .. } if max_abs_xbeta == 800.0));
        let mut s = EngineState::<f64>::new(&ds, &[0.0]).unwrap();
        let before = s.clone();
        assert!(s.sparse_delta_update(&ds, 0, 750.0).is_err());
        assert_eq!(s, before);
        assert!(EngineState::<f32>::new(&ds, &[90.0]).is_err());
        assert!(EngineState::<f64>::new(&ds, &[f64::NAN]).is_err());
    }

    #[test]
    fn dense_and_parallel_variants_agree_on_toy() {
        let ds = toy();
        let s = EngineState::<f64>::new(&ds, &[0.2]).unwrap();
        let serial = s.fused_grad_hess(&ds, 0).unwrap();
        assert_eq!(s.dense_fused_grad_hess(&ds, 0).unwrap(), serial);
        assert_eq!(s.parallel_fused_grad_hess(&ds, 0, 1).unwrap(), serial);
        assert_eq!(s.parallel_fused_grad_hess(&ds, 0, 7).unwrap(), serial);

        let mut a = s.clone();
        let mut b = s.clone();
        a.sparse_delta_update(&ds, 0, 0.4).unwrap();
        b.parallel_sparse_delta_update(&ds, 0, 0.4, 3).unwrap();
        assert_eq!(a, b);
    }
}
