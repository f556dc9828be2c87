use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use gauss_bubbles::calibrate::{calibrate_offsets_to_volumes, CalibrationOptions};
use gauss_bubbles::cylinder::{symmetric_scan, ScanOrientation};
use gauss_bubbles::discrete::{
    influences, noise_stability_auto, DiscreteFunction, DiscreteMap, NoiseKernel, Plurality,
};
use gauss_bubbles::moments::mc_moments;
use gauss_bubbles::noise::{
    noise_stability_certificate, noise_stability_partition, perimeter_from_noise_limit, CertificateOptions,
    NoiseTarget,
};
use gauss_bubbles::optimize::{
    minimize_penalized_perimeter, optimize_propeller, rearrangement_lower_bound, stability_margin, OptimizationReport,
    OptimizeConfig,
};
use gauss_bubbles::partition::perturb;
use gauss_bubbles::perimeter::{facet_perimeter, minkowski_partition_perimeter};
use gauss_bubbles::discrete::clt_crosscheck;

use crate::spec::ExperimentSpec;
use crate::CliError;

const DEFAULT_SAMPLES: u64 = 1_000_000;
const MINKOWSKI_SCHEDULE: [f64; 3] = [0.1, 0.05, 0.025];
const NOISE_SCHEDULE: [f64; 3] = [0.99, 0.995, 0.999];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub command: String,
    pub spec: ExperimentSpec,
    pub results: Map<String, Value>,
    pub stderr: Map<String, Value>,
    /// Recorded only on request, so that report files stay reproducible.
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Summary,
    /// `(file name, contents)`; the JSON summary is added by [`Outcome::files`].
    pub reports: Vec<(String, String)>,
}

impl Outcome {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n"
    }

    pub fn files(&self) -> Vec<(String, String)> {
        let mut files = vec![(format!("{}.json", self.summary.spec.stem()), self.summary_json())];
        files.extend(self.reports.iter().cloned());
        files
    }

    /// Writes every report into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for (name, body) in self.files() {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

struct Report {
    results: Map<String, Value>,
    stderr: Map<String, Value>,
    files: Vec<(String, String)>,
}

impl Report {
    fn new() -> Self {
        Self {
            results: Map::new(),
            stderr: Map::new(),
            files: Vec::new(),
        }
    }

    fn value(&mut self, key: &str, v: impl Serialize, se: Option<f64>) {
        self.results.insert(key.into(), json!(v));
        if let Some(se) = se {
            self.stderr.insert(key.into(), json!(se));
        }
    }

    fn file(&mut self, stem: &str, suffix: &str, body: String) {
        self.files.push((format!("{stem}{suffix}"), body));
    }
}

fn csv_of<I, R>(header: &[&str], rows: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Validates `spec`, runs it and returns the reports without writing them.
pub fn run(spec: &ExperimentSpec) -> Result<Outcome, CliError> {
    spec.validate()?;
    let stem = spec.stem();
    let mut rep = Report::new();
    match spec.command.as_str() {
        "perimeter" => perimeter(spec, &stem, &mut rep)?,
        "noise-stability" => noise(spec, &stem, &mut rep)?,
        "penalty" => penalty(spec, &stem, &mut rep)?,
        "optimize-propeller" | "minimize-penalized" => optimize(spec, &stem, &mut rep)?,
        "discrete" => discrete(spec, &stem, &mut rep)?,
        "symmetric-scan" => scan(spec, &stem, &mut rep)?,
        "stability-check" => stability(spec, &stem, &mut rep)?,
        "clt-crosscheck" => clt(spec, &mut rep)?,
        other => return Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
    Ok(Outcome {
        summary: Summary {
            command: spec.command.clone(),
            spec: spec.clone(),
            results: rep.results,
            stderr: rep.stderr,
            wall_time_s: None,
        },
        reports: rep.files,
    })
}

fn perimeter(spec: &ExperimentSpec, stem: &str, rep: &mut Report) -> Result<(), CliError> {
    let p = spec.load_partition(spec.partition.as_deref())?;
    let cfg = spec.integration(p.d, DEFAULT_SAMPLES)?;
    let method = spec.method.as_deref().unwrap_or("facet");
    rep.value("method", method, None);
    match method {
        "facet" => {
            let r = facet_perimeter(&p, &cfg)?;
            rep.value("total", r.total, Some(r.total_stderr));
            rep.file(stem, ".csv", r.to_csv()?);
        }
        "minkowski" => {
            let schedule = spec.schedule.clone().unwrap_or(MINKOWSKI_SCHEDULE.to_vec());
            let r = minkowski_partition_perimeter(&p, &schedule, &cfg)?;
            rep.value("total", r.extrapolated, Some(r.stderr));
            let rows = r
                .table
                .iter()
                .map(|c| vec![c.epsilon.to_string(), c.value.to_string(), c.stderr.to_string()]);
            rep.file(stem, ".csv", csv_of(&["epsilon", "collar_ratio", "stderr"], rows)?);
        }
        _ => {
            let schedule = spec.schedule.clone().unwrap_or(NOISE_SCHEDULE.to_vec());
            let r = perimeter_from_noise_limit(NoiseTarget::Partition(&p), &schedule, &cfg)?;
            rep.value("total", r.perimeter, Some(r.stderr));
            let rows = r.table.iter().map(|t| {
                vec![
                    t.rho.to_string(),
                    t.deficit.to_string(),
                    t.deficit_stderr.to_string(),
                    t.normalized.to_string(),
                    t.normalized_stderr.to_string(),
                ]
            });
            rep.file(
                stem,
                ".csv",
                csv_of(&["rho", "deficit", "deficit_stderr", "normalized", "normalized_stderr"], rows)?,
            );
        }
    }
    Ok(())
}

fn noise(spec: &ExperimentSpec, stem: &str, rep: &mut Report) -> Result<(), CliError> {
    let p = spec.load_partition(spec.partition.as_deref())?;
    let cfg = spec.integration(p.d, DEFAULT_SAMPLES)?;
    let r = noise_stability_partition(&p, spec.rho.unwrap(), &cfg)?;
    rep.value("total", r.total, Some(r.total_stderr));
    rep.value("per_cell", &r.per_cell, None);
    rep.file(stem, ".csv", r.to_csv()?);
    Ok(())
}

fn penalty(spec: &ExperimentSpec, stem: &str, rep: &mut Report) -> Result<(), CliError> {
    let p = spec.load_partition(spec.partition.as_deref())?;
    let cfg = spec.integration(p.d, DEFAULT_SAMPLES)?;
    let w = spec.w.clone().unwrap_or(vec![0.0; p.d]);
    let r = mc_moments(&p, &w, &cfg)?;
    rep.value("moment_functional", r.moment_functional, Some(r.moment_functional_stderr));
    rep.value("penalty", r.penalty, Some(r.penalty_stderr));
    rep.value("volumes", &r.volumes, None);
    rep.value("moment_bound_excess", r.moment_bound_excess(), None);
    let rows = (0..p.m).map(|i| {
        vec![
            i.to_string(),
            r.volumes[i].to_string(),
            r.volume_stderr[i].to_string(),
            r.moment_norms[i].to_string(),
            r.moment_norm_stderr[i].to_string(),
            r.cell_terms[i].to_string(),
        ]
    });
    rep.file(
        stem,
        ".csv",
        csv_of(&["cell", "volume", "volume_stderr", "moment_norm", "moment_norm_stderr", "term"], rows)?,
    );
    Ok(())
}

fn optimize(spec: &ExperimentSpec, stem: &str, rep: &mut Report) -> Result<(), CliError> {
    let m = spec.m.unwrap_or(3);
    let d = spec.d.unwrap_or(m.saturating_sub(1).max(1));
    let target = spec.a.clone().unwrap_or(vec![1.0 / m as f64; m]);
    let mut cfg = OptimizeConfig::new(m, d, target);
    cfg.seed = spec.seed.unwrap_or(0);
    if let Some(s) = spec.samples {
        cfg.sample_count = s;
    }
    if let Some(a) = spec.antithetic {
        cfg.antithetic = a;
    }
    if let Some(r) = spec.restarts {
        cfg.restarts = r;
    }
    if let Some(i) = spec.max_iters {
        cfg.max_iters = i;
    }
    if let Some(w) = &spec.w {
        cfg.w = w.clone();
    }
    let r: OptimizationReport = if spec.command == "optimize-propeller" {
        optimize_propeller(&cfg)?
    } else {
        minimize_penalized_perimeter(&cfg, spec.epsilon.unwrap())?
    };
    rep.value("objective", r.objective, Some(r.objective_stderr));
    rep.value("reference_objective", r.reference_objective, None);
    rep.value("moment_functional", r.moments.moment_functional, Some(r.moments.moment_functional_stderr));
    if let Some(p) = r.perimeter {
        rep.value("perimeter", p, None);
    }
    rep.value("volumes", &r.moments.volumes, None);
    rep.value("misalignment", r.alignment.misalignment, Some(r.alignment.misalignment_stderr));
    rep.value("rotation_angle", r.alignment.angle, None);
    rep.value("rearrangement_bound", rearrangement_lower_bound(&r.alignment), None);
    rep.value(
        "restart_objectives",
        r.restarts.iter().map(|x| x.objective).collect::<Vec<_>>(),
        None,
    );
    rep.file(stem, ".csv", r.trace_csv()?);
    rep.file(stem, ".partition.json", r.partition.to_json()? + "\n");
    Ok(())
}

fn load_function(spec: &ExperimentSpec) -> Result<Box<dyn DiscreteMap>, CliError> {
    let (m, n) = (spec.m.unwrap_or(2), spec.n.unwrap_or(1));
    Ok(match spec.function.as_deref().unwrap_or("plurality") {
        "plurality" => Box::new(Plurality { m, n }),
        "dictator" => Box::new(DiscreteFunction::dictator(m, n)?),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
            Box::new(DiscreteFunction::from_csv(&text)?)
        }
    })
}

fn discrete(spec: &ExperimentSpec, stem: &str, rep: &mut Report) -> Result<(), CliError> {
    let f = load_function(spec)?;
    let (m, n) = (f.alphabet(), f.length());
    match spec.action.as_deref().unwrap_or("stability") {
        "stability" => {
            let kernel = NoiseKernel::new(m, spec.rho.unwrap())?;
            let mc = match spec.samples {
                Some(_) => Some(spec.integration(1, DEFAULT_SAMPLES)?),
                None => None,
            };
            let s = noise_stability_auto(f.as_ref(), &kernel, mc.as_ref())?;
            rep.value("total", s.total, Some(s.total_stderr));
            rep.value("per_coordinate", &s.per_coordinate, None);
            rep.value("exact", s.exact, None);
            let rows = (0..m).map(|j| {
                vec![
                    (j + 1).to_string(),
                    s.per_coordinate[j].to_string(),
                    s.per_coordinate_stderr[j].to_string(),
                ]
            });
            rep.file(stem, ".csv", csv_of(&["coordinate", "stability", "stderr"], rows)?);
        }
        _ => {
            let table = DiscreteFunction::tabulate(f.as_ref())?;
            let mut rows = Vec::new();
            let mut totals = vec![0.0; n];
            for j in 0..m {
                let g = table.coordinate(j);
                for (i, total) in totals.iter_mut().enumerate() {
                    let inf = influences(&g, m, n, i)?;
                    *total += inf.influence;
                    rows.push(vec![(i + 1).to_string(), (j + 1).to_string(), inf.influence.to_string()]);
                }
            }
            rep.value("influence", &totals, None);
            rep.file(stem, ".csv", csv_of(&["coordinate", "output", "influence"], rows)?);
        }
    }
    Ok(())
}

fn scan(spec: &ExperimentSpec, stem: &str, rep: &mut Report) -> Result<(), CliError> {
    let orientation = match spec.orientation.as_deref().unwrap_or("both") {
        "inside" => ScanOrientation::Inside,
        "outside" => ScanOrientation::Outside,
        _ => ScanOrientation::Both,
    };
    let r = symmetric_scan(spec.a.as_ref().unwrap()[0], spec.k_max.unwrap_or(3), orientation)?;
    rep.value("best_k", r.best_k, None);
    rep.value("best_orientation", r.best_orientation, None);
    rep.value("best_perimeter", r.best_perimeter, None);
    let rows = r.rows.iter().map(|row| {
        vec![
            row.k.to_string(),
            json!(row.orientation).as_str().unwrap_or_default().to_string(),
            opt_str(row.r),
            opt_str(row.perimeter),
        ]
    });
    rep.file(stem, ".csv", csv_of(&["k", "orientation", "r", "perimeter"], rows)?);
    Ok(())
}

fn stability(spec: &ExperimentSpec, stem: &str, rep: &mut Report) -> Result<(), CliError> {
    let reference = spec.load_partition(spec.partition.as_deref())?;
    let cfg = spec.integration(reference.d, DEFAULT_SAMPLES)?;
    let w = spec.w.clone().unwrap_or(vec![0.0; reference.d]);
    let candidate = match (&spec.candidate, spec.perturb) {
        (Some(c), _) => spec.load_partition(Some(c))?,
        (None, Some(mag)) => {
            let shaken = perturb(&reference, mag, spec.seed.unwrap_or(0))?;
            let target = mc_moments(&reference, &w, &cfg)?.volumes;
            let opts = CalibrationOptions {
                tol: 2e-4,
                ..Default::default()
            };
            calibrate_offsets_to_volumes(&shaken, &target, &cfg, &opts)?.partition
        }
        _ => unreachable!("validated"),
    };
    let epsilon = spec.epsilon.unwrap();
    let cert = stability_margin(&reference, &candidate, epsilon, &w, &cfg, 2e-3)?;
    rep.value("margin", cert.margin, Some(cert.stderr));
    rep.value("verdict", cert.verdict, None);
    rep.value("perimeter_reference", cert.perimeter_reference, None);
    rep.value("perimeter_candidate", cert.perimeter_candidate, None);
    rep.value("moment_reference", cert.moment_reference, None);
    rep.value("moment_candidate", cert.moment_candidate, None);
    if let Some(rho) = spec.rho {
        let opts = CertificateOptions {
            allow_any_rho: spec.allow_any_rho.unwrap_or(false),
            ..Default::default()
        };
        let nc = noise_stability_certificate(&reference, &candidate, rho, epsilon, &w, &cfg, &opts)?;
        rep.value("noise_margin", nc.margin, Some(nc.stderr));
        rep.value("noise_label", &nc.label, None);
    }
    let row = vec![
        cert.perimeter_reference.to_string(),
        cert.perimeter_candidate.to_string(),
        cert.moment_reference.to_string(),
        cert.moment_candidate.to_string(),
        cert.epsilon.to_string(),
        cert.margin.to_string(),
        cert.stderr.to_string(),
        json!(cert.verdict).as_str().unwrap_or_default().to_string(),
    ];
    rep.file(
        stem,
        ".csv",
        csv_of(
            &["perimeter_reference", "perimeter_candidate", "moment_reference", "moment_candidate", "epsilon", "margin", "stderr", "verdict"],
            [row],
        )?,
    );
    rep.file(stem, ".candidate.json", candidate.to_json()? + "\n");
    Ok(())
}

fn clt(spec: &ExperimentSpec, rep: &mut Report) -> Result<(), CliError> {
    let n = spec.n.unwrap_or(1001);
    let cfg = spec.integration(1, DEFAULT_SAMPLES)?;
    let r = clt_crosscheck(n, spec.rho.unwrap(), &cfg)?;
    rep.value("discrete", r.discrete, Some(r.discrete_stderr));
    rep.value("gaussian", r.gaussian, None);
    rep.value("gap", r.gap, Some(r.discrete_stderr));
    Ok(())
}
