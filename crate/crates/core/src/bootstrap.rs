//! Nonparametric bootstrap over subjects: percentile intervals and the
//! proportion of replicates in which each coefficient is nonzero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::prior::PriorSpec;
use crate::solver::{fit, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    pub prior: PriorSpec,
    pub solver: SolverConfig,
}

impl BootstrapConfig {
    pub fn new(prior: PriorSpec) -> Self {
        BootstrapConfig {
            replicates: 200,
            level: 0.95,
            seed: 1,
            prior,
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Invalid("need at least one replicate".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Invalid(format!("level {} is outside (0, 1)", self.level)));
        }
        self.prior.validate()?;
        self.solver.validate()
    }
}

/// Generator for replicate `index`; replicates own disjoint streams.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `num_subjects` uniform draws with replacement.
pub fn resample(num_subjects: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..num_subjects)
        .map(|_| rng.random_range(0..num_subjects))
        .collect()
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `(m − 1) p` in the sorted sample).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub beta: Vec<f64>,
    pub converged: bool,
    pub cycles: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrugInterval {
    pub drug_id: String,
    /// Full-data estimate.
    pub beta_map: f64,
    pub lower: f64,
    pub upper: f64,
    pub p_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub drugs: Vec<DrugInterval>,
    pub replicates: Vec<Replicate>,
    pub non_converged: usize,
}

/// Full-data fit, then `replicates` warm-started fits on resampled subjects,
/// run concurrently.
pub fn run_bootstrap(ds: &Dataset, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    cfg.validate()?;
    let full = fit(ds, &cfg.prior, &cfg.solver, None)?;
    let replicates: Vec<Replicate> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let idx = resample(ds.num_subjects(), &mut replicate_rng(cfg.seed, r as u64));
            let sample = ds.subset(&idx)?;
            let fitted = fit(&sample, &cfg.prior, &cfg.solver, Some(&full.beta))?;
            Ok(Replicate {
                beta: fitted.beta,
                converged: fitted.converged,
                cycles: fitted.cycles_run,
            })
        })
        .collect::<Result<_>>()?;

    let used: Vec<&Replicate> = replicates.iter().filter(|r| r.converged).collect();
    if used.is_empty() {
        return Err(Error::NoConvergedReplicates(replicates.len()));
    }
    let tail = (1.0 - cfg.level) / 2.0;
    let drugs = ds
        .drug_ids()
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let mut values: Vec<f64> = used.iter().map(|r| r.beta[j]).collect();
            values.sort_by(f64::total_cmp);
            let nonzero = values.iter().filter(|&&v| v != 0.0).count();
            DrugInterval {
                drug_id: label.clone(),
                beta_map: full.beta[j],
                lower: quantile(&values, tail),
                upper: quantile(&values, 1.0 - tail),
                p_hat: nonzero as f64 / values.len() as f64,
            }
        })
        .collect();
    Ok(BootstrapResult {
        drugs,
        non_converged: replicates.len() - used.len(),
        replicates,
    })
}

/// Drugs nonzero in at least `threshold` of the replicates (and in at least
/// one), largest full-data estimate first, ties by label.
pub fn report_ranked_intervals(result: &BootstrapResult, threshold: f64) -> Vec<DrugInterval> {
    let mut rows: Vec<DrugInterval> = result
        .drugs
        .iter()
        .filter(|d| d.p_hat > 0.0 && d.p_hat >= threshold)
        .cloned()
        .collect();
    rows.sort_by(|a, b| {
        b.beta_map
            .total_cmp(&a.beta_map)
            .then_with(|| a.drug_id.cmp(&b.drug_id))
    });
    rows
}

pub const REPORT_HEADER: &str = "drug_id\tbeta_map\tci_lower\tci_upper\tp_hat";

pub fn format_report(rows: &[DrugInterval]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.drug_id, r.beta_map, r.lower, r.upper, r.p_hat
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, Era, SubjectRecord};
    use crate::sim::small_instance;

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert!((quantile(&v, 0.025) - 1.075).abs() < 1e-15);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn resample_shape() {
        assert_eq!(resample(1, &mut replicate_rng(3, 0)), vec![0]);
        let a = resample(50, &mut replicate_rng(3, 4));
        assert_eq!(a.len(), 50);
        assert_eq!(a, resample(50, &mut replicate_rng(3, 4)));
        assert!(a.iter().all(|&i| i < 50));
    }

    #[test]
    fn single_replicate_degenerates() {
        let ds = small_instance(12);
        let cfg = BootstrapConfig {
            replicates: 1,
            ..BootstrapConfig::new(PriorSpec::laplace(0.5))
        };
        let r = run_bootstrap(&ds, &cfg).unwrap();
        for (d, &b) in r.drugs.iter().zip(&r.replicates[0].beta) {
            assert_eq!(d.lower, b);
            assert_eq!(d.upper, b);
            assert!(d.p_hat == 0.0 || d.p_hat == 1.0);
        }
    }

    #[test]
    fn unexposed_drug_stays_at_zero() {
        let recs: Vec<SubjectRecord> = (0..30)
            .map(|i| {
                SubjectRecord::new(
                    format!("s{i}"),
                    vec![Era::new(5, (i % 3) as u32, vec![0]), Era::new(4, 1, vec![])],
                )
            })
            .collect();
        let ds = build_dataset(&recs, 2).unwrap();
        let cfg = BootstrapConfig {
            replicates: 20,
            ..BootstrapConfig::new(PriorSpec::laplace(1.0))
        };
        let r = run_bootstrap(&ds, &cfg).unwrap();
        let d = &r.drugs[1];
        assert_eq!((d.lower, d.upper, d.p_hat, d.beta_map), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn report_filtering_and_order() {
        let mk = |id: &str, b: f64, p: f64| DrugInterval {
            drug_id: id.into(),
            beta_map: b,
            lower: b - 1.0,
            upper: b + 1.0,
            p_hat: p,
        };
        let result = BootstrapResult {
            drugs: vec![
                mk("a", 0.5, 1.0),
                mk("b", 1.5, 0.6),
                mk("c", 0.0, 0.0),
                mk("d", 0.5, 0.3),
                mk("e", 0.5, 0.9),
            ],
            replicates: vec![],
            non_converged: 0,
        };
        let ids = |rows: Vec<DrugInterval>| rows.into_iter().map(|r| r.drug_id).collect::<Vec<_>>();
        assert_eq!(ids(report_ranked_intervals(&result, 0.0)), ["b", "a", "d", "e"]);
        assert_eq!(ids(report_ranked_intervals(&result, 1.0)), ["a"]);
        assert_eq!(ids(report_ranked_intervals(&result, 0.5)), ["b", "a", "e"]);
    }

    #[test]
    fn rejects_bad_config() {
        let ds = small_instance(1);
        let mut cfg = BootstrapConfig::new(PriorSpec::laplace(1.0));
        cfg.level = 1.0;
        assert!(run_bootstrap(&ds, &cfg).is_err());
        cfg.level = 0.9;
        cfg.replicates = 0;
        assert!(run_bootstrap(&ds, &cfg).is_err());
    }
}
