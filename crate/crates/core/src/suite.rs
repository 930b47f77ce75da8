//! Batch evaluation of (test, experiment, granularity) cells.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use crate::association::StdDevConvention;
use crate::error::{Error, Result};
use crate::model::{Experiment, Granularity, TestResult, DEFAULT_ALPHA};
use crate::parallel::map_indexed;
use crate::report::ReportFormat;
use crate::significance::{grounded_permutation, EvalOptions, PermutationPlan};
use crate::spec_file::{parse_spec, validate_balance, SpecFile};
use crate::store::{read_store, EmbeddingStore};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub specs: Vec<PathBuf>,
    pub stores: BTreeMap<Granularity, PathBuf>,
    pub experiments: Vec<Experiment>,
    pub plan: PermutationPlan,
    pub format: ReportFormat,
    pub alpha: f64,
    pub allow_unbalanced: bool,
    pub stddev: StdDevConvention,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            specs: Vec::new(),
            stores: BTreeMap::new(),
            experiments: vec![Experiment::E1, Experiment::E2, Experiment::E3],
            plan: PermutationPlan::default(),
            format: ReportFormat::Table,
            alpha: DEFAULT_ALPHA,
            allow_unbalanced: false,
            stddev: StdDevConvention::Sample,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.specs.is_empty() {
            return Err(Error::InvalidConfig("at least one spec is required".into()));
        }
        if self.stores.is_empty() {
            return Err(Error::InvalidConfig("at least one store is required".into()));
        }
        if self.experiments.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one experiment is required".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "significance threshold {} must lie in (0, 1)",
                self.alpha
            )));
        }
        self.plan.validate()
    }
}

/// A cell (or a whole spec or store) that could not be evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellError {
    pub test: String,
    pub experiment: Option<Experiment>,
    pub granularity: Option<Granularity>,
    pub message: String,
    pub exit_code: i32,
}

impl CellError {
    fn new(
        test: impl Into<String>,
        experiment: Option<Experiment>,
        granularity: Option<Granularity>,
        err: &Error,
    ) -> Self {
        CellError {
            test: test.into(),
            experiment,
            granularity,
            message: err.to_string(),
            exit_code: err.exit_code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub results: Vec<TestResult>,
    pub errors: Vec<CellError>,
    pub stddev: StdDevConvention,
    pub alpha: f64,
}

impl SuiteOutcome {
    /// 0 when every cell succeeded, else the most severe error code.
    pub fn exit_code(&self) -> i32 {
        self.errors.iter().map(|e| e.exit_code).max().unwrap_or(0)
    }
}

struct LoadedSpec {
    spec: SpecFile,
    warnings: Vec<String>,
}

/// Runs every (spec, experiment, granularity) cell of `config`.
///
/// Unreadable specs or stores and failing cells become [`CellError`]s; the
/// rest of the suite still runs. Output order follows the spec list, then
/// the experiment list, then W, S, C.
pub fn run_suite(config: &RunConfig) -> Result<SuiteOutcome> {
    config.validate()?;
    let mut errors = Vec::new();

    let mut specs: Vec<LoadedSpec> = Vec::new();
    for path in &config.specs {
        let label = path.display().to_string();
        match parse_spec(path) {
            Ok(spec) => {
                let balance = validate_balance(&spec);
                if balance.is_balanced() {
                    specs.push(LoadedSpec {
                        spec,
                        warnings: Vec::new(),
                    });
                } else if config.allow_unbalanced {
                    specs.push(LoadedSpec {
                        spec,
                        warnings: vec![format!("unbalanced: {}", balance.summary())],
                    });
                } else {
                    let err = Error::Unbalanced {
                        test: spec.test().name().to_string(),
                        summary: balance.summary(),
                    };
                    errors.push(CellError::new(spec.test().name(), None, None, &err));
                }
            }
            Err(e) => errors.push(CellError::new(label, None, None, &e)),
        }
    }

    let mut stores: Vec<(Granularity, EmbeddingStore)> = Vec::new();
    for (&granularity, path) in &config.stores {
        match read_store(path) {
            Ok(store) => stores.push((granularity, store)),
            Err(e) => errors.push(CellError::new("*", None, Some(granularity), &e)),
        }
    }

    let mut experiments = Vec::new();
    for &e in &config.experiments {
        if !experiments.contains(&e) {
            experiments.push(e);
        }
    }

    let mut cells = Vec::new();
    for si in 0..specs.len() {
        for &experiment in &experiments {
            for (gi, _) in stores.iter().enumerate() {
                cells.push((si, experiment, gi));
            }
        }
    }

    let options = EvalOptions {
        stddev: config.stddev,
        alpha: config.alpha,
    };
    let evaluated = map_indexed(cells.len(), config.plan.execution, |c| {
        let (si, experiment, gi) = cells[c];
        let loaded = &specs[si];
        let (granularity, store) = &stores[gi];
        let test = loaded.spec.test();
        grounded_permutation(test, store, experiment, *granularity, &config.plan, &options)
            .map(|mut r| {
                r.warnings.extend(loaded.warnings.iter().cloned());
                r
            })
            .map_err(|e| CellError::new(test.name(), Some(experiment), Some(*granularity), &e))
    });

    let mut results = Vec::new();
    for cell in evaluated {
        match cell {
            Ok(r) => results.push(r),
            Err(e) => errors.push(e),
        }
    }
    Ok(SuiteOutcome {
        results,
        errors,
        stddev: config.stddev,
        alpha: config.alpha,
    })
}
