//! Seeded synthetic scenarios shipped with the tool.

use crate::sim::SimConfig;

/// Index of the drug planted with a strong effect in [`effects`].
pub const PLANTED_DRUG: usize = 0;
/// Planted log relative incidence of [`PLANTED_DRUG`].
pub const PLANTED_EFFECT: f64 = 2.0;
/// Index of a drug with no effect in [`effects`].
pub const NULL_DRUG: usize = 19;

/// Moderate-size scenario with one strong effect and every other drug null;
/// used for cross-validation and bootstrap runs.
pub fn effects() -> SimConfig {
    let num_drugs = 20;
    let mut true_beta = vec![0.0; num_drugs];
    true_beta[PLANTED_DRUG] = PLANTED_EFFECT;
    SimConfig {
        subjects: 600,
        count_kept: true,
        eras_per_subject: (2, 6),
        era_length_days: (5, 60),
        prevalence: (0..num_drugs).map(|j| 0.04 + 0.01 * (j % 5) as f64).collect(),
        true_beta,
        baseline_log_rate: (-4.5, 0.5),
        seed: 20_110_901,
    }
}

/// Large sparse scenario for timing the update paths: 20,000 kept subjects,
/// 500 drugs, every column below 2% density.
pub fn bench() -> SimConfig {
    let num_drugs = 500;
    let mut true_beta = vec![0.0; num_drugs];
    for (j, b) in true_beta.iter_mut().enumerate().take(25) {
        *b = if j % 2 == 0 { 0.5 } else { -0.3 };
    }
    SimConfig {
        subjects: 20_000,
        count_kept: true,
        eras_per_subject: (2, 8),
        era_length_days: (5, 90),
        prevalence: (0..num_drugs).map(|j| 0.002 + 0.0002 * (j % 60) as f64).collect(),
        true_beta,
        baseline_log_rate: (-5.0, 0.7),
        seed: 181,
    }
}

/// Fold-assignment seed for cross-validation on [`effects`].
pub const CV_SEED: u64 = 1;
/// Resampling seed for the bootstrap on [`effects`].
pub const BOOTSTRAP_SEED: u64 = 1;
/// Laplace prior variance used when timing [`bench`].
pub const BENCH_VARIANCE: f64 = 0.1;
