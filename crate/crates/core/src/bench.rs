//! Timing harness comparing the dense path, the serial sparse path and the
//! sparse path with partitioned parallel kernels on one fit.

use std::time::Instant;

use crate::data::Dataset;
use crate::error::Result;
use crate::prior::PriorSpec;
use crate::solver::{fit, FitResult, SolverConfig, UpdatePath};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub name: String,
    pub partitions: usize,
    /// Fastest round.
    pub seconds: f64,
    /// Slowest round over fastest, minus one; 0 for a single round.
    pub spread: f64,
    pub cycles: usize,
    pub converged: bool,
    /// Dense time divided by this path's time.
    pub speedup_vs_dense: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub fits: Vec<FitResult>,
    /// Largest coefficient difference between any path and the dense one.
    pub max_disagreement: f64,
}

impl BenchReport {
    pub fn agrees(&self, tol: f64) -> bool {
        self.max_disagreement <= tol
    }

    pub fn seconds(&self, name: &str) -> Option<f64> {
        self.row(name).map(|r| r.seconds)
    }

    pub fn row(&self, name: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("path\tpartitions\tseconds\tspread\tcycles\tconverged\tspeedup_vs_dense\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.3}\t{}\t{}\t{:.3}\n",
                r.name, r.partitions, r.seconds, r.spread, r.cycles, r.converged, r.speedup_vs_dense
            ));
        }
        out
    }
}

pub const DENSE: &str = "dense";
pub const SPARSE_SERIAL: &str = "sparse-serial";
pub const SPARSE_PARALLEL: &str = "sparse-parallel";
/// Parallel kernels on every column regardless of its size.
pub const SPARSE_PARALLEL_FORCED: &str = "sparse-parallel-forced";

/// Runs the same fit along each path. `base` supplies everything except the
/// path and partition count; its `min_partition_work` applies to the
/// `sparse-parallel` row. Sparse rows run `repeats` interleaved rounds and
/// report their fastest; the dense row runs once.
pub fn run_bench(
    ds: &Dataset,
    prior: &PriorSpec,
    base: &SolverConfig,
    partitions: usize,
    repeats: usize,
) -> Result<BenchReport> {
    let p = partitions.max(1);
    let variants = [
        (DENSE, UpdatePath::Dense, 1, base.min_partition_work),
        (SPARSE_SERIAL, UpdatePath::Sparse, 1, base.min_partition_work),
        (SPARSE_PARALLEL, UpdatePath::Sparse, p, base.min_partition_work),
        (SPARSE_PARALLEL_FORCED, UpdatePath::Sparse, p, 1),
    ];
    let mut rows: Vec<BenchRow> = Vec::new();
    let mut slowest = Vec::new();
    let mut fits = Vec::new();
    for round in 0..repeats.max(1) {
        for (v, &(name, path, partitions, min_partition_work)) in variants.iter().enumerate() {
            if round > 0 && path == UpdatePath::Dense {
                continue;
            }
            let cfg = SolverConfig {
                path,
                partitions,
                min_partition_work,
                ..base.clone()
            };
            let start = Instant::now();
            let r = fit(ds, prior, &cfg, None)?;
            let seconds = start.elapsed().as_secs_f64();
            log::info!("{name}: {seconds:.3}s, {} cycles", r.cycles_run);
            if round == 0 {
                rows.push(BenchRow {
                    name: name.to_owned(),
                    partitions,
                    seconds,
                    spread: 0.0,
                    cycles: r.cycles_run,
                    converged: r.converged,
                    speedup_vs_dense: 0.0,
                });
                fits.push(r);
                slowest.push(seconds);
            } else {
                rows[v].seconds = rows[v].seconds.min(seconds);
                slowest[v] = slowest[v].max(seconds);
            }
        }
    }
    for (r, max) in rows.iter_mut().zip(&slowest) {
        r.spread = max / r.seconds - 1.0;
    }
    let dense_time = rows[0].seconds;
    for r in &mut rows {
        r.speedup_vs_dense = dense_time / r.seconds;
    }
    let max_disagreement = fits[1..]
        .iter()
        .flat_map(|f| f.beta.iter().zip(&fits[0].beta).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    Ok(BenchReport {
        rows,
        fits,
        max_disagreement,
    })
}
