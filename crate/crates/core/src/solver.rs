//! Cyclic coordinate descent with a per-coordinate trust region.
//!
//! Each cycle visits every coordinate once: the engine supplies the
//! one-dimensional gradient and Hessian, the prior turns them into an
//! unbounded Newton step, and the step is clamped to `[−δ_j, δ_j]`. After the
//! step the radius becomes `max(2|Δ|, δ_j/2)`. Convergence is judged once per
//! cycle from the total absolute change in `Xβ`.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::engine::{EngineState, GradHess, Precision, Real};
use crate::error::{Error, Result};
use crate::prior::{PriorKind, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvergenceMode {
    /// `Σ_k |Xβ_k − Xβ_k^prev|`.
    #[default]
    RawSum,
    /// The raw sum divided by `1 + Σ_k |Xβ_k|`.
    Normalized,
}

impl FromStr for ConvergenceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "raw_sum" => Ok(ConvergenceMode::RawSum),
            "normalized" => Ok(ConvergenceMode::Normalized),
            _ => Err(Error::Invalid(format!("unknown convergence mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for ConvergenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConvergenceMode::RawSum => "raw",
            ConvergenceMode::Normalized => "normalized",
        })
    }
}

/// How the state follows a coordinate step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdatePath {
    /// Touch only the rows of the updated column.
    #[default]
    Sparse,
    /// Re-evaluate all of `L × exp(Xβ)` and the denominators, and reduce
    /// over every subject.
    Dense,
}

impl std::fmt::Display for UpdatePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpdatePath::Sparse => "sparse",
            UpdatePath::Dense => "dense",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoordinateOrder {
    #[default]
    Ascending,
    /// A fresh seeded permutation every cycle.
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub max_cycles: usize,
    pub trust_init: f64,
    pub convergence: ConvergenceMode,
    pub precision: Precision,
    /// Subject ranges for the parallel reduction and update; 1 is serial.
    pub partitions: usize,
    /// Minimum column nonzeros per range before a column is split.
    pub min_partition_work: usize,
    pub path: UpdatePath,
    pub order: CoordinateOrder,
    /// Full cycles between from-scratch state rebuilds.
    pub drift_interval: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 0.0005,
            max_cycles: 1000,
            trust_init: 1.0,
            convergence: ConvergenceMode::RawSum,
            precision: Precision::Double,
            partitions: 1,
            min_partition_work: 2048,
            path: UpdatePath::Sparse,
            order: CoordinateOrder::Ascending,
            drift_interval: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.trust_init > 0.0) {
            return Err(Error::Invalid(format!(
                "initial trust radius must be positive, got {}",
                self.trust_init
            )));
        }
        if self.max_cycles == 0 || self.partitions == 0 || self.drift_interval == 0 {
            return Err(Error::Invalid(
                "max_cycles, partitions and drift_interval must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub log_posterior: f64,
    pub log_likelihood: f64,
    pub cycles_run: usize,
    pub converged: bool,
    pub final_criterion: f64,
}

/// Fits the MAP estimate starting from `init_beta` (zeros when absent).
pub fn fit(
    ds: &Dataset,
    prior: &PriorSpec,
    cfg: &SolverConfig,
    init_beta: Option<&[f64]>,
) -> Result<FitResult> {
    match cfg.precision {
        Precision::Double => Solver::<f64>::new(ds, prior, cfg, init_beta)?.run(),
        Precision::Single => Solver::<f32>::new(ds, prior, cfg, init_beta)?.run(),
    }
}

/// Log-likelihood plus log-prior at `beta`, evaluated from scratch.
pub fn log_posterior(ds: &Dataset, prior: &PriorSpec, beta: &[f64]) -> Result<f64> {
    let state = EngineState::<f64>::new(ds, beta)?;
    Ok(state.log_likelihood(ds) + prior.log_density(beta))
}

/// A fit in progress. [`fit`] drives it to completion; tests and harnesses
/// can step it cycle by cycle.
pub struct Solver<'a, F: Real = f64> {
    ds: &'a Dataset,
    prior: PriorSpec,
    cfg: SolverConfig,
    state: EngineState<F>,
    radii: Vec<f64>,
    snapshot: Vec<F>,
    order: Vec<usize>,
    rng: Option<ChaCha8Rng>,
    cycles: usize,
    last_criterion: f64,
}

impl<'a, F: Real> Solver<'a, F> {
    pub fn new(
        ds: &'a Dataset,
        prior: &PriorSpec,
        cfg: &SolverConfig,
        init_beta: Option<&[f64]>,
    ) -> Result<Self> {
        cfg.validate()?;
        prior.validate()?;
        let zeros;
        let beta = match init_beta {
            Some(b) => b,
            None => {
                zeros = vec![0.0; ds.num_drugs()];
                &zeros
            }
        };
        let state = EngineState::<F>::new(ds, beta)?;
        let rng = match cfg.order {
            CoordinateOrder::Ascending => None,
            CoordinateOrder::Shuffled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        Ok(Solver {
            ds,
            prior: *prior,
            cfg: cfg.clone(),
            state,
            radii: vec![cfg.trust_init; ds.num_drugs()],
            snapshot: Vec::with_capacity(ds.num_rows()),
            order: (0..ds.num_drugs()).collect(),
            rng,
            cycles: 0,
            last_criterion: f64::INFINITY,
        })
    }

    pub fn state(&self) -> &EngineState<F> {
        &self.state
    }

    pub fn beta(&self) -> &[f64] {
        self.state.beta()
    }

    pub fn trust_radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn cycles(&self) -> usize {
        self.cycles
    }

    pub fn log_posterior(&self) -> f64 {
        self.state.log_likelihood(self.ds) + self.prior.log_density(self.state.beta())
    }

    fn partitions_for(&self, nnz: usize) -> usize {
        let by_work = (nnz / self.cfg.min_partition_work.max(1)).max(1);
        self.cfg.partitions.min(by_work)
    }

    fn grad_hess(&self, j: usize) -> Result<GradHess> {
        let ds = self.ds;
        match self.cfg.path {
            UpdatePath::Dense => self.state.dense_fused_grad_hess(ds, j),
            UpdatePath::Sparse => match self.partitions_for(ds.column(j).nnz()) {
                1 => self.state.fused_grad_hess(ds, j),
                p => self.state.parallel_fused_grad_hess(ds, j, p),
            },
        }
    }

    fn apply(&mut self, j: usize, delta: f64) -> Result<()> {
        let ds = self.ds;
        match self.cfg.path {
            UpdatePath::Dense => self.state.dense_delta_update(ds, j, delta),
            UpdatePath::Sparse => match self.partitions_for(ds.column(j).nnz()) {
                1 => self.state.sparse_delta_update(ds, j, delta),
                p => self.state.parallel_sparse_delta_update(ds, j, delta, p),
            },
        }
    }

    /// Unbounded step for coordinate `j`.
    fn newton_step(&self, j: usize, gh: GradHess) -> Result<f64> {
        let beta_j = self.state.beta()[j];
        if self.prior.kind == PriorKind::None && gh.h == 0.0 {
            // constant-within-subject or empty column: nothing to learn
            if gh.g == 0.0 {
                return Ok(0.0);
            }
            return Err(Error::UndefinedStep(j));
        }
        self.prior
            .penalized_step(beta_j, gh.g, gh.h)
            .map_err(|e| match e {
                Error::UndefinedStep(_) => Error::UndefinedStep(j),
                other => other,
            })
    }

    /// One full pass over the coordinates; returns the convergence criterion.
    pub fn run_cycle(&mut self) -> Result<f64> {
        if self.cycles > 0 && self.cycles % self.cfg.drift_interval == 0 {
            let beta = self.state.beta().to_vec();
            self.state.dense_recompute(self.ds, &beta)?;
        }
        self.snapshot.clear();
        self.snapshot.extend_from_slice(self.state.xbeta());
        if let Some(rng) = self.rng.as_mut() {
            self.order.shuffle(rng);
        }
        for idx in 0..self.order.len() {
            let j = self.order[idx];
            let gh = self.grad_hess(j)?;
            let unbounded = self.newton_step(j, gh)?;
            let radius = self.radii[j];
            let delta = unbounded.clamp(-radius, radius);
            if delta != 0.0 {
                self.apply(j, delta)?;
            }
            self.radii[j] = (2.0 * delta.abs()).max(radius / 2.0).max(f64::MIN_POSITIVE);
        }
        self.cycles += 1;

        let mut change = 0.0f64;
        let mut scale = 0.0f64;
        for (&now, &then) in self.state.xbeta().iter().zip(&self.snapshot) {
            change += (now.to_f64() - then.to_f64()).abs();
            scale += now.to_f64().abs();
        }
        self.last_criterion = match self.cfg.convergence {
            ConvergenceMode::RawSum => change,
            ConvergenceMode::Normalized => change / (1.0 + scale),
        };
        Ok(self.last_criterion)
    }

    /// Runs cycles until convergence or the cycle cap, then rebuilds the
    /// state from scratch and reports.
    pub fn run(mut self) -> Result<FitResult> {
        let mut converged = false;
        while self.cycles < self.cfg.max_cycles {
            if self.run_cycle()? <= self.cfg.epsilon {
                converged = true;
                break;
            }
        }
        let beta = self.state.beta().to_vec();
        self.state.dense_recompute(self.ds, &beta)?;
        if !converged {
            log::debug!(
                "no convergence after {} cycles (criterion {})",
                self.cycles,
                self.last_criterion
            );
        }
        let log_likelihood = self.state.log_likelihood(self.ds);
        Ok(FitResult {
            log_posterior: log_likelihood + self.prior.log_density(&beta),
            log_likelihood,
            beta,
            cycles_run: self.cycles,
            converged,
            final_criterion: self.last_criterion,
        })
    }
}
