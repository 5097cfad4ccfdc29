//! Prior-variance selection by k-fold cross-validated predictive
//! log-likelihood. Each fold walks the grid from the smallest variance up,
//! warm-starting every fit from the previous grid point's estimate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::engine::EngineState;
use crate::error::{Error, Result};
use crate::prior::{LaplaceParam, PriorKind, PriorSpec};
use crate::solver::{fit, SolverConfig};

/// `points` values spaced evenly in log scale over `[lo, hi]`.
pub fn log_uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..points)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub k: usize,
    /// Strictly ascending prior variances.
    pub grid: Vec<f64>,
    pub seed: u64,
    pub solver: SolverConfig,
    pub prior_kind: PriorKind,
    pub laplace_param: LaplaceParam,
    pub warm_start: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 10,
            grid: log_uniform_grid(0.001, 10.0, 13),
            seed: 1,
            solver: SolverConfig::default(),
            prior_kind: PriorKind::Laplace,
            laplace_param: LaplaceParam::Variance,
            warm_start: true,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Invalid(format!("need at least 2 folds, got {}", self.k)));
        }
        if self.grid.is_empty() || self.grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid("grid values must be positive and finite".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("grid must be strictly ascending".into()));
        }
        if self.prior_kind == PriorKind::None {
            return Err(Error::Invalid("cross-validation needs a normal or laplace prior".into()));
        }
        self.solver.validate()
    }

    fn prior(&self, variance: f64) -> PriorSpec {
        PriorSpec {
            kind: self.prior_kind,
            variance,
            laplace_param: self.laplace_param,
        }
    }
}

/// Shuffles subject indices with the seeded generator and deals them
/// round-robin into `k` folds.
pub fn kfold_split(num_subjects: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > num_subjects {
        return Err(Error::Invalid(format!(
            "cannot split {num_subjects} subjects into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..num_subjects).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(num_subjects / k + 1); k];
    for (pos, subject) in order.into_iter().enumerate() {
        folds[pos % k].push(subject);
    }
    Ok(folds)
}

/// Held-out conditional log-likelihood at the training estimate.
pub fn predictive_log_likelihood(train_beta: &[f64], heldout: &Dataset) -> Result<f64> {
    Ok(EngineState::<f64>::new(heldout, train_beta)?.log_likelihood(heldout))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub variance: f64,
    /// Mean over folds; `None` when any fold failed at this point.
    pub mean_predictive: Option<f64>,
    pub fold_values: Vec<Option<f64>>,
    pub converged: Vec<bool>,
    pub cycles: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub points: Vec<GridPoint>,
    pub selected_variance: f64,
    pub total_cycles: usize,
}

struct Cell {
    value: Option<f64>,
    converged: bool,
    cycles: usize,
}

fn run_fold(ds: &Dataset, folds: &[Vec<usize>], f: usize, cfg: &CvConfig) -> Result<Vec<Cell>> {
    let mut train_idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(g, _)| g != f)
        .flat_map(|(_, fold)| fold.iter().copied())
        .collect();
    train_idx.sort_unstable();
    let train = ds.subset(&train_idx)?;
    let heldout = ds.subset(&folds[f])?;

    let mut warm: Option<Vec<f64>> = None;
    let mut cells = Vec::with_capacity(cfg.grid.len());
    for &variance in &cfg.grid {
        let init = if cfg.warm_start { warm.as_deref() } else { None };
        let outcome = fit(&train, &cfg.prior(variance), &cfg.solver, init)
            .and_then(|r| Ok((predictive_log_likelihood(&r.beta, &heldout)?, r)));
        match outcome {
            Ok((value, r)) => {
                cells.push(Cell {
                    value: Some(value),
                    converged: r.converged,
                    cycles: r.cycles_run,
                });
                warm = Some(r.beta);
            }
            Err(e) => {
                log::warn!("fold {f}, variance {variance}: {e}");
                cells.push(Cell {
                    value: None,
                    converged: false,
                    cycles: 0,
                });
            }
        }
    }
    Ok(cells)
}

/// Grid search over the prior variance; folds run concurrently.
pub fn grid_search_cv(ds: &Dataset, cfg: &CvConfig) -> Result<CvResult> {
    cfg.validate()?;
    let folds = kfold_split(ds.num_subjects(), cfg.k, cfg.seed)?;
    let per_fold: Vec<Vec<Cell>> = (0..cfg.k)
        .into_par_iter()
        .map(|f| run_fold(ds, &folds, f, cfg))
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(cfg.grid.len());
    let mut total_cycles = 0;
    for (g, &variance) in cfg.grid.iter().enumerate() {
        let fold_values: Vec<Option<f64>> = per_fold.iter().map(|c| c[g].value).collect();
        let mean_predictive = fold_values
            .iter()
            .copied()
            .sum::<Option<f64>>()
            .map(|s| s / cfg.k as f64);
        total_cycles += per_fold.iter().map(|c| c[g].cycles).sum::<usize>();
        points.push(GridPoint {
            variance,
            mean_predictive,
            fold_values,
            converged: per_fold.iter().map(|c| c[g].converged).collect(),
            cycles: per_fold.iter().map(|c| c[g].cycles).collect(),
        });
    }

    let mut best: Option<(f64, f64)> = None;
    for p in &points {
        if let Some(m) = p.mean_predictive {
            if best.is_none_or(|(score, _)| m > score) {
                best = Some((m, p.variance));
            }
        }
    }
    let (_, selected_variance) = best.ok_or(Error::NoValidGridPoint)?;
    Ok(CvResult {
        points,
        selected_variance,
        total_cycles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy;
    use crate::sim::small_instance;

    #[test]
    fn fold_sizes() {
        let folds = kfold_split(20, 10, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let folds = kfold_split(21, 10, 3).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [vec![2; 9], vec![3]].concat());
        assert_eq!(kfold_split(21, 10, 3).unwrap(), folds);
        assert!(kfold_split(3, 4, 0).is_err());
    }

    #[test]
    fn folds_partition_subjects() {
        let folds = kfold_split(37, 5, 9).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn default_grid_shape() {
        let g = CvConfig::default().grid;
        assert_eq!(g.len(), 13);
        assert!((g[0] - 0.001).abs() < 1e-15);
        assert!((g[12] - 10.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn predictive_at_zero_depends_on_lengths_only() {
        let ds = small_instance(4);
        let beta = vec![0.0; ds.num_drugs()];
        let expect: f64 = (0..ds.num_subjects())
            .map(|i| {
                let total: f64 = ds.subject_rows(i).map(|k| f64::from(ds.lengths()[k])).sum();
                -(ds.subject_totals()[i] as f64) * total.ln()
            })
            .sum();
        let got = predictive_log_likelihood(&beta, &ds).unwrap();
        assert!((got - expect).abs() <= 1e-10 * expect.abs());
        let toy_ll = predictive_log_likelihood(&[2f64.ln()], &toy()).unwrap();
        assert!((toy_ll + 0.405_465_108_108_164_4).abs() < 1e-12);
    }

    #[test]
    fn single_point_grid() {
        let ds = small_instance(8);
        let cfg = CvConfig {
            k: 3,
            grid: vec![0.1],
            ..Default::default()
        };
        let r = grid_search_cv(&ds, &cfg).unwrap();
        assert_eq!(r.selected_variance, 0.1);
    }

    #[test]
    fn invalid_config() {
        let ds = small_instance(8);
        for cfg in [
            CvConfig { k: 1, ..Default::default() },
            CvConfig { grid: vec![1.0, 0.5], ..Default::default() },
            CvConfig { grid: vec![], ..Default::default() },
            CvConfig { prior_kind: PriorKind::None, ..Default::default() },
        ] {
            assert!(grid_search_cv(&ds, &cfg).is_err());
        }
    }
}
