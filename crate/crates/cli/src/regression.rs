use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::run::run;
use crate::spec::ExperimentSpec;
use crate::CliError;

/// A corpus entry: a spec, expected result values and an absolute
/// tolerance shared by all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionCase {
    pub name: String,
    pub spec: ExperimentSpec,
    pub expected: BTreeMap<String, f64>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSummary {
    pub cases: Vec<CaseResult>,
}

impl RegressionSummary {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag}  {}  {}\n", c.name, c.detail));
        }
        let passed = self.cases.iter().filter(|c| c.passed).count();
        out.push_str(&format!("{passed}/{} cases passed\n", self.cases.len()));
        out
    }
}

fn check(case: &RegressionCase) -> CaseResult {
    let fail = |detail: String| CaseResult {
        name: case.name.clone(),
        passed: false,
        detail,
    };
    if case.spec.seed.is_none() {
        return fail("spec has no seed".into());
    }
    let outcome = match run(&case.spec) {
        Ok(o) => o,
        Err(e) => return fail(e.to_string()),
    };
    let mut details = Vec::new();
    let mut passed = true;
    for (key, want) in &case.expected {
        match outcome.summary.results.get(key).and_then(|v| v.as_f64()) {
            Some(got) => {
                let ok = (got - want).abs() <= case.tolerance;
                passed &= ok;
                details.push(format!("{key}={got:.6} (expected {want} ± {})", case.tolerance));
            }
            None => {
                passed = false;
                details.push(format!("{key} missing"));
            }
        }
    }
    CaseResult {
        name: case.name.clone(),
        passed,
        detail: details.join(", "),
    }
}

/// Runs every `*.json` case of `dir` in file-name order.
pub fn run_corpus(dir: &Path) -> Result<RegressionSummary, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("corpus {} is not a directory", dir.display())));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Io(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut cases = Vec::with_capacity(paths.len());
    for path in paths {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let case: RegressionCase = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cases.push(check(&case));
    }
    Ok(RegressionSummary { cases })
}
