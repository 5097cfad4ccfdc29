//! Maximum a posteriori estimation for the Bayesian self-controlled case
//! series model.
//!
//! A case series is a set of subjects, each observed over a sequence of eras
//! of constant drug exposure with an event count per era. Conditioning on
//! each subject's event total yields a Poisson likelihood free of the
//! subject-level baseline; normal or Laplace priors on the drug effects give
//! ridge- or lasso-type estimates. Fitting is cyclic coordinate descent with
//! sparse incremental state updates.
//!
//! ```
//! use bsccs::{build_dataset, fit, Era, PriorSpec, SolverConfig, SubjectRecord};
//!
//! let subject = SubjectRecord::new("s1", vec![Era::new(1, 1, vec![0]), Era::new(1, 0, vec![])]);
//! let ds = build_dataset(&[subject], 1).unwrap();
//! let result = fit(&ds, &PriorSpec::normal(1.0), &SolverConfig::default(), None).unwrap();
//! assert!((result.beta[0] - 0.401).abs() < 1e-3);
//! ```

pub mod bench;
pub mod bootstrap;
pub mod cv;
pub mod data;
pub mod engine;
pub mod eras;
pub mod error;
pub mod longformat;
pub mod manifest;
pub mod prior;
pub mod scenarios;
pub mod sim;
pub mod solver;

pub use bootstrap::{run_bootstrap, BootstrapConfig, BootstrapResult};
pub use cv::{grid_search_cv, kfold_split, CvConfig, CvResult};
pub use data::{build_dataset, build_dataset_with_labels, Dataset, Era, SubjectRecord};
pub use engine::{EngineState, GradHess, Precision};
pub use error::{Error, Result};
pub use prior::{LaplaceParam, PriorKind, PriorSpec};
pub use sim::{simulate, SimConfig, SimTruth};
pub use solver::{fit, ConvergenceMode, FitResult, SolverConfig, UpdatePath};
