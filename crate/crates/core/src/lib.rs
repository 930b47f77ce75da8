//! Social-bias measurement for grounded (vision + language) embeddings.
//!
//! Word/sentence association tests, their grounded generalizations over
//! image-conditioned attribute groups, standardized effect sizes, and
//! permutation-test significance, evaluated over embedding stores produced by
//! any model.
//!
//! The usual entry points are [`spec_file::parse_spec`] and
//! [`store::read_store`] to load inputs, [`significance::grounded_permutation`]
//! for one result cell, and [`suite::run_suite`] plus
//! [`report::render_report`] for a whole batch.

pub mod association;
pub mod error;
pub mod grounded;
pub mod model;
pub mod parallel;
pub mod report;
pub mod significance;
pub mod spec_file;
pub mod store;
pub mod suite;
pub mod synthetic;

pub use association::StdDevConvention;
pub use error::{Error, Result};
pub use grounded::{resolve, ResolvedSets};
pub use model::{
    make_key, EffectSize, EmbeddingVector, Experiment, Granularity, GroundedBiasTest, PMethod,
    StimulusKey, TestResult,
};
pub use parallel::Execution;
pub use report::{render_report, ReportFormat};
pub use significance::{grounded_permutation, permutation_pvalue, EvalOptions, PermutationPlan};
pub use spec_file::{parse_spec, validate_balance, SpecFile};
pub use store::{read_store, write_store, EmbeddingStore};
pub use suite::{run_suite, RunConfig, SuiteOutcome};
