//! Synthetic case-series data and brute-force oracles.
//!
//! Subjects are drawn from the generative model: era counts and lengths are
//! uniform, exposures are independent Bernoulli draws per drug and era, each
//! subject gets a baseline log-rate `φ_i`, and era events are
//! `Poisson(l_ik · exp(φ_i + x_ik'β))`. Subjects without events are rejected,
//! which is the cases-only conditioning.
//!
//! The oracles below work straight from the dataset rows with plain loops and
//! share nothing with the likelihood engine.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::data::{build_dataset_with_labels, Dataset, Era, SubjectRecord};
use crate::error::{Error, Result};
use crate::longformat;
use crate::prior::PriorSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Subjects to draw, or to keep when `count_kept` is set.
    pub subjects: usize,
    pub count_kept: bool,
    pub eras_per_subject: (u32, u32),
    pub era_length_days: (u32, u32),
    /// Exposure probability per drug and era.
    pub prevalence: Vec<f64>,
    pub true_beta: Vec<f64>,
    /// Mean and standard deviation of the per-day baseline log-rate.
    pub baseline_log_rate: (f64, f64),
    pub seed: u64,
}

impl SimConfig {
    pub fn num_drugs(&self) -> usize {
        self.true_beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.true_beta.is_empty() || self.prevalence.len() != self.true_beta.len() {
            return bad("prevalence and true_beta need one entry per drug".into());
        }
        if let Some(p) = self.prevalence.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return bad(format!("prevalence {p} is outside (0, 1)"));
        }
        let (k0, k1) = self.eras_per_subject;
        let (l0, l1) = self.era_length_days;
        if k0 == 0 || k0 > k1 || l0 == 0 || l0 > l1 {
            return bad("era count and length ranges must be non-empty and start at 1 or more".into());
        }
        if !(self.baseline_log_rate.1 >= 0.0) || !self.baseline_log_rate.0.is_finite() {
            return bad("baseline log-rate needs a finite mean and a non-negative sd".into());
        }
        if self.subjects == 0 {
            return bad("subject count must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub true_beta: Vec<f64>,
    /// Baselines of the kept subjects, in dataset order.
    pub phi: Vec<f64>,
    pub kept: usize,
    pub rejected: usize,
}

fn draw_subject(cfg: &SimConfig, index: u64) -> (SubjectRecord, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let (k0, k1) = cfg.eras_per_subject;
    let (l0, l1) = cfg.era_length_days;
    let num_eras = rng.random_range(k0..=k1);
    let phi = Normal::new(cfg.baseline_log_rate.0, cfg.baseline_log_rate.1)
        .expect("validated")
        .sample(&mut rng);
    let eras = (0..num_eras)
        .map(|_| {
            let length = rng.random_range(l0..=l1);
            let exposures: Vec<u32> = cfg
                .prevalence
                .iter()
                .enumerate()
                .filter_map(|(j, &p)| rng.random_bool(p).then_some(j as u32))
                .collect();
            let eta: f64 = phi + exposures.iter().map(|&j| cfg.true_beta[j as usize]).sum::<f64>();
            let mean = f64::from(length) * eta.exp();
            let events = if mean > 0.0 && mean.is_finite() {
                Poisson::new(mean).expect("positive mean").sample(&mut rng) as u32
            } else {
                0
            };
            Era::new(i64::from(length), events, exposures)
        })
        .collect();
    (SubjectRecord::new(format!("s{index}"), eras), phi)
}

/// Draws a dataset; identical configurations give bit-identical output.
pub fn simulate(cfg: &SimConfig) -> Result<(Dataset, SimTruth)> {
    cfg.validate()?;
    let mut kept: Vec<(SubjectRecord, f64)> = Vec::new();
    let mut attempted = 0u64;
    let chunk = cfg.subjects.max(64) as u64;
    loop {
        let target = if cfg.count_kept {
            attempted + chunk
        } else {
            cfg.subjects as u64
        };
        let drawn: Vec<(SubjectRecord, f64)> = (attempted..target)
            .into_par_iter()
            .map(|i| draw_subject(cfg, i))
            .collect();
        for (index, (rec, phi)) in (attempted..target).zip(drawn) {
            if cfg.count_kept && kept.len() == cfg.subjects {
                break;
            }
            attempted = index + 1;
            if rec.total_events() > 0 {
                kept.push((rec, phi));
            }
        }
        if !cfg.count_kept || kept.len() == cfg.subjects {
            break;
        }
        if attempted > 1000 * cfg.subjects as u64 + 100_000 && kept.is_empty() {
            break;
        }
    }
    if kept.is_empty() {
        return Err(Error::NothingSimulated);
    }
    let labels = (0..cfg.num_drugs()).map(|j| format!("d{j}")).collect();
    let (records, phi): (Vec<_>, Vec<_>) = kept.into_iter().unzip();
    let ds = build_dataset_with_labels(&records, labels)?;
    let truth = SimTruth {
        true_beta: cfg.true_beta.clone(),
        kept: phi.len(),
        rejected: attempted as usize - phi.len(),
        phi,
    };
    Ok((ds, truth))
}

/// Writes the long-format era file and the `drug_id  true_beta` sidecar.
pub fn write_simulation(ds: &Dataset, truth: &SimTruth, eras: &Path, sidecar: &Path) -> Result<()> {
    longformat::write_dataset(eras, ds)?;
    let mut text = String::from("drug_id\ttrue_beta\n");
    for (label, b) in ds.drug_ids().iter().zip(&truth.true_beta) {
        text.push_str(&format!("{label}\t{b}\n"));
    }
    fs::write(sidecar, text).map_err(|e| Error::io(sidecar, e))
}

/// Conditional log-likelihood by direct summation over subjects and eras.
pub fn oracle_log_likelihood(ds: &Dataset, beta: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..ds.num_subjects() {
        let mut linear = 0.0;
        let mut normalizer = 0.0;
        let mut n_i = 0.0;
        for k in ds.subject_rows(i) {
            let eta: f64 = ds.row_exposures(k).iter().map(|&j| beta[j as usize]).sum();
            let y = f64::from(ds.events()[k]);
            linear += y * eta;
            n_i += y;
            normalizer += f64::from(ds.lengths()[k]) * eta.exp();
        }
        total += linear - n_i * normalizer.ln();
    }
    total
}

fn shifted(beta: &[f64], j: usize, by: f64) -> Vec<f64> {
    let mut b = beta.to_vec();
    b[j] += by;
    b
}

/// Central difference of [`oracle_log_likelihood`] along coordinate `j`.
pub fn oracle_gradient(ds: &Dataset, beta: &[f64], j: usize, step: f64) -> f64 {
    let up = oracle_log_likelihood(ds, &shifted(beta, j, step));
    let down = oracle_log_likelihood(ds, &shifted(beta, j, -step));
    (up - down) / (2.0 * step)
}

/// Second central difference of [`oracle_log_likelihood`] along `j`.
pub fn oracle_hessian(ds: &Dataset, beta: &[f64], j: usize, step: f64) -> f64 {
    let up = oracle_log_likelihood(ds, &shifted(beta, j, step));
    let mid = oracle_log_likelihood(ds, beta);
    let down = oracle_log_likelihood(ds, &shifted(beta, j, -step));
    (up - 2.0 * mid + down) / (step * step)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes a concave function of one variable starting from `x0`.
fn maximize_1d(f: impl Fn(f64) -> f64, x0: f64) -> f64 {
    // expand a bracket [a, c] known to contain the maximum
    let f0 = f(x0);
    let mut step = 0.5;
    let (mut a, mut c);
    if f(x0 + 1e-7) > f0 {
        a = x0;
        c = x0 + step;
        while f(c) > f(c - step / 2.0) && c.abs() < 1e3 {
            a = c - step / 2.0;
            step *= 2.0;
            c = a + step;
        }
    } else if f(x0 - 1e-7) > f0 {
        c = x0;
        a = x0 - step;
        while f(a) > f(a + step / 2.0) && a.abs() < 1e3 {
            c = a + step / 2.0;
            step *= 2.0;
            a = c - step;
        }
    } else {
        a = x0 - 1e-7;
        c = x0 + 1e-7;
    }
    // golden section
    let mut x1 = c - INV_PHI * (c - a);
    let mut x2 = a + INV_PHI * (c - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if c - a < 1e-13 * (1.0 + a.abs().max(c.abs())) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (c - a);
            f2 = f(x2);
        } else {
            c = x2;
            x2 = x1;
            f2 = f1;
            x1 = c - INV_PHI * (c - a);
            f1 = f(x1);
        }
    }
    let best = 0.5 * (a + c);
    // a kink at zero is where L1 maxima sit; golden section only gets close
    if f(0.0) >= f(best) && (best.abs() < 1e-6) {
        0.0
    } else {
        best
    }
}

pub const REFERENCE_MAX_SUBJECTS: usize = 200;
pub const REFERENCE_MAX_DRUGS: usize = 10;

/// Derivative-free MAP estimate: cyclic exact line maximization of the
/// penalized objective, evaluated with [`oracle_log_likelihood`], until no
/// coordinate moves by more than `tol`.
pub fn reference_fit(ds: &Dataset, prior: &PriorSpec, tol: f64) -> Result<Vec<f64>> {
    if ds.num_subjects() > REFERENCE_MAX_SUBJECTS || ds.num_drugs() > REFERENCE_MAX_DRUGS {
        return Err(Error::Invalid(format!(
            "reference optimizer is limited to {REFERENCE_MAX_SUBJECTS} subjects and \
             {REFERENCE_MAX_DRUGS} drugs"
        )));
    }
    let mut beta = vec![0.0; ds.num_drugs()];
    for _ in 0..5000 {
        let mut moved = 0.0f64;
        for j in 0..beta.len() {
            if ds.column(j).is_empty() {
                continue;
            }
            let rest = linear_without(ds, &beta, j);
            // terms constant in the coordinate are dropped
            let objective = |t: f64| profile_log_likelihood(ds, &rest, t) + prior.log_density(&[t]);
            let mut next = maximize_1d(&objective, beta[j]);
            // moves below the argmax resolution of golden section only jitter
            if objective(next) <= objective(beta[j]) {
                next = beta[j];
            }
            moved = moved.max((next - beta[j]).abs());
            beta[j] = next;
        }
        if moved < tol {
            break;
        }
    }
    Ok(beta)
}

/// Per row: the linear predictor without coordinate `j`, and whether `j` is
/// exposed there.
fn linear_without(ds: &Dataset, beta: &[f64], j: usize) -> Vec<(f64, bool)> {
    (0..ds.num_rows())
        .map(|k| {
            let mut eta = 0.0;
            let mut hit = false;
            for &d in ds.row_exposures(k) {
                if d as usize == j {
                    hit = true;
                } else {
                    eta += beta[d as usize];
                }
            }
            (eta, hit)
        })
        .collect()
}

/// [`oracle_log_likelihood`] as a function of one coordinate `t`.
fn profile_log_likelihood(ds: &Dataset, rest: &[(f64, bool)], t: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..ds.num_subjects() {
        let (mut linear, mut normalizer, mut n_i) = (0.0, 0.0, 0.0);
        for k in ds.subject_rows(i) {
            let (eta, hit) = rest[k];
            let eta = if hit { eta + t } else { eta };
            let y = f64::from(ds.events()[k]);
            linear += y * eta;
            n_i += y;
            normalizer += f64::from(ds.lengths()[k]) * eta.exp();
        }
        total += linear - n_i * normalizer.ln();
    }
    total
}

/// Settings for one member of the seeded small-instance test suite.
pub fn small_instance_config(seed: u64) -> SimConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let num_drugs = rng.random_range(1..=10usize);
    SimConfig {
        subjects: rng.random_range(5..=50),
        count_kept: true,
        eras_per_subject: (1, 6),
        era_length_days: (1, 30),
        prevalence: (0..num_drugs).map(|_| rng.random_range(0.1..0.6)).collect(),
        true_beta: (0..num_drugs).map(|_| rng.random_range(-1.0..1.0)).collect(),
        baseline_log_rate: (-3.0, 0.5),
        seed,
    }
}

/// A small random dataset: N ≤ 50, J ≤ 10, at most 6 eras per subject.
pub fn small_instance(seed: u64) -> Dataset {
    simulate(&small_instance_config(seed))
        .expect("small instances always keep subjects")
        .0
}
