use serde::{Deserialize, Serialize};

use gauss_bubbles::partition::{propeller, simplicial_cone_partition, split_half_spaces, AffinePartition};
use gauss_bubbles::IntegrationConfig;

use crate::CliError;

pub const COMMANDS: &[&str] = &[
    "perimeter",
    "noise-stability",
    "penalty",
    "optimize-propeller",
    "minimize-penalized",
    "discrete",
    "symmetric-scan",
    "stability-check",
    "clt-crosscheck",
];

/// One experiment. Archived spec files must carry a seed; command-line
/// flags override any field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub command: String,
    /// `stability` or `influences` for `discrete`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    /// Built-in name (`propeller3`, `halfspace2`, `split1`, `simplex4`) or
    /// a partition JSON file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    /// Threshold of the built-in split partitions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// `facet`, `minkowski` or `noise` for `perimeter`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orientation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
    /// `plurality`, `dictator` or a CSV table for `discrete`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub antithetic: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allow_any_rho: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// Stem of the report files; defaults to the command name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// Parses a sample count such as `1000000`, `1e6` or `2.5e5`.
pub fn parse_count(text: &str) -> Result<u64, String> {
    if let Ok(v) = text.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = text.parse().map_err(|_| format!("not a number: {text}"))?;
    if !(v >= 0.0) || v.fract() != 0.0 || v > 9.0e15 {
        return Err(format!("not a whole sample count: {text}"));
    }
    Ok(v as u64)
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| usage(format!("invalid spec file: {e}")))
    }

    /// Fields of `flags` that are set replace those of `self`.
    pub fn overridden_by(mut self, flags: ExperimentSpec) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f; } )* };
        }
        take!(
            action, partition, candidate, threshold, method, schedule, rho, epsilon, r, a, k_max, orientation, m, n,
            d, w, function, perturb, restarts, max_iters, samples, seed, antithetic, allow_any_rho, out_dir, name
        );
        if !flags.command.is_empty() {
            self.command = flags.command;
        }
        self
    }

    pub fn samples_or(&self, default: u64) -> u64 {
        self.samples.unwrap_or(default)
    }

    pub fn integration(&self, dimension: usize, default_samples: u64) -> Result<IntegrationConfig, CliError> {
        let cfg = IntegrationConfig::new(self.samples_or(default_samples), self.seed.unwrap_or(0), dimension)
            .with_antithetic(self.antithetic.unwrap_or(false));
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn stem(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.command.clone())
    }

    /// Checks everything that can be checked without computing.
    pub fn validate(&self) -> Result<(), CliError> {
        if !COMMANDS.contains(&self.command.as_str()) {
            return Err(usage(format!("unknown command {:?}", self.command)));
        }
        if let Some(s) = self.samples {
            if s == 0 {
                return Err(usage("samples must be positive"));
            }
        }
        if let Some(name) = &self.name {
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(usage(format!("invalid report name {name:?}")));
            }
        }
        let need = |field: bool, what: &str| if field { Ok(()) } else { Err(usage(format!("{} needs {what}", self.command))) };
        match self.command.as_str() {
            "perimeter" => {
                if let Some(m) = &self.method {
                    if !["facet", "minkowski", "noise"].contains(&m.as_str()) {
                        return Err(usage(format!("unknown perimeter method {m:?}")));
                    }
                }
                self.load_partition(self.partition.as_deref())?;
            }
            "noise-stability" => {
                need(self.rho.is_some(), "--rho")?;
                self.load_partition(self.partition.as_deref())?;
            }
            "penalty" => {
                self.load_partition(self.partition.as_deref())?;
            }
            "optimize-propeller" | "minimize-penalized" => {
                if self.command == "minimize-penalized" {
                    need(self.epsilon.is_some(), "--epsilon")?;
                }
            }
            "discrete" => {
                let action = self.action.as_deref().unwrap_or("stability");
                if !["stability", "influences"].contains(&action) {
                    return Err(usage(format!("unknown discrete action {action:?}")));
                }
                if action == "stability" {
                    need(self.rho.is_some(), "--rho")?;
                }
                let f = self.function.as_deref().unwrap_or("plurality");
                if !["plurality", "dictator"].contains(&f) {
                    if !std::path::Path::new(f).is_file() {
                        return Err(usage(format!("function {f:?} is neither built in nor a file")));
                    }
                } else {
                    need(self.m.is_some() && self.n.is_some(), "--m and --n")?;
                }
            }
            "symmetric-scan" => {
                need(self.a.as_ref().is_some_and(|a| a.len() == 1), "a single --a")?;
                if let Some(o) = &self.orientation {
                    if !["inside", "outside", "both"].contains(&o.as_str()) {
                        return Err(usage(format!("unknown orientation {o:?}")));
                    }
                }
            }
            "stability-check" => {
                need(self.epsilon.is_some(), "--epsilon")?;
                need(
                    self.candidate.is_some() != self.perturb.is_some(),
                    "exactly one of --candidate and --perturb",
                )?;
                self.load_partition(self.partition.as_deref())?;
                if let Some(c) = &self.candidate {
                    self.load_partition(Some(c))?;
                }
            }
            "clt-crosscheck" => {
                need(self.rho.is_some(), "--rho")?;
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    /// A built-in partition or a JSON file; `None` means `propeller3`.
    pub fn load_partition(&self, source: Option<&str>) -> Result<AffinePartition, CliError> {
        let t = self.threshold.unwrap_or(0.0);
        let built = match source.unwrap_or("propeller3") {
            "propeller3" => Ok(propeller()),
            "halfspace2" => split_half_spaces(2, t),
            "split1" => split_half_spaces(1, t),
            "simplex4" => simplicial_cone_partition(4, &[0.0; 3]),
            path => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read partition {path:?}: {e}")))?;
                AffinePartition::from_json(&text)
            }
        };
        built.map_err(|e| usage(e.to_string()))
    }
}
