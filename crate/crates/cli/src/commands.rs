use std::path::{Path, PathBuf};

use kmspc::dataset::{synthesize_raw, synthesize_test_raw, write_dat, Dataset, FaultKind, Role};
use kmspc::decomposition::{kpca_fit, pca_fit, Model};
use kmspc::kernel::{KernelConfig, KernelFamily};
use kmspc::mspc::{
    build_chart_with_limits, calibrate_limits, chart_csv, chart_svg, cmr_report, ControlChart, LimitMethod, SvgOptions,
};
use kmspc::optim::{
    ga_optimize, kf_optimize, line_search, nelder_mead, trace_csv, OptimMethod, OptimResult, ParamSpace, PartitionLoss,
};
use kmspc::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{Manifest, OutputDir, Timings, MANIFEST};
use crate::config::{load_data, DataRef, ModelKind, OnsetSpec, RunConfig};
use crate::{MonitorArgs, OptimizeArgs, ReportArgs, RunArgs, Stage, StageError, SynthArgs};

type CmdResult = std::result::Result<(), StageError>;

fn parse_enum<T: for<'de> Deserialize<'de>>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Invalid(format!("unknown {what} '{s}'")))
}

/// Reads a kernel document, or the learned kernel of an optimizer result.
fn read_kernel(path: &Path) -> Result<KernelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("theta_opt").is_some() {
        let result: OptimResult = serde_json::from_value(value)?;
        return result
            .kernel
            .ok_or_else(|| Error::Invalid(format!("{}: optimizer result has no kernel", path.display())));
    }
    Ok(serde_json::from_value(value)?)
}

fn base_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply_run_args(cfg: &mut RunConfig, a: &RunArgs) -> Result<()> {
    if let Some(p) = &a.normal {
        cfg.normal = Some(DataRef::Path(p.clone()));
    }
    if !a.faulty.is_empty() {
        cfg.faulty = a.faulty.iter().cloned().map(DataRef::Path).collect();
    }
    if let Some(p) = &a.test {
        cfg.test = Some(DataRef::Path(p.clone()));
    }
    if let Some(p) = &a.out {
        cfg.output_dir = p.clone();
    }
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    if let Some(h) = a.h {
        cfg.h = h;
    }
    if let Some(m) = &a.model_kind {
        cfg.model = parse_enum("model kind", m)?;
    }
    if let Some(p) = &a.kernel {
        cfg.kernel = Some(read_kernel(p)?);
    }
    if let Some(m) = &a.limit_method {
        cfg.limit_method = LimitMethod::parse(m)?;
    }
    cfg.log_scale |= a.log_scale;
    cfg.record_timings |= a.record_timings;
    Ok(())
}

fn fit_model(cfg: &RunConfig, kernel: Option<&KernelConfig>, normal: &Dataset) -> Result<Model> {
    match cfg.model {
        ModelKind::Pca => Ok(Model::Pca(pca_fit(normal, cfg.h)?)),
        ModelKind::Kpca => {
            let kernel = kernel.ok_or_else(|| Error::Invalid("model kpca needs a kernel configuration".into()))?;
            Ok(Model::Kpca(kpca_fit(normal, kernel, cfg.h)?))
        }
    }
}

fn exceedance(values: &[f64], limit: f64) -> f64 {
    values.iter().filter(|&&v| v > limit).count() as f64 / values.len() as f64
}

fn calibration_summary(model: &Model, chart: &ControlChart) -> serde_json::Value {
    let l = &chart.limits;
    let ev = model.explained_variance();
    let cumulative: f64 = ev.iter().take(model.h()).sum();
    json!({
        "model": model.kind(),
        "h": model.h(),
        "n": chart.len(),
        "d": model.d(),
        "explained_variance_ratio": ev.iter().take(model.h()).collect::<Vec<_>>(),
        "cumulative_explained_variance": cumulative,
        "limits": l,
        "calibration_exceedance": {
            "t2_warning": exceedance(&chart.t2, l.t2_warning),
            "t2_alarm": exceedance(&chart.t2, l.t2_alarm),
            "spex_warning": exceedance(&chart.spex, l.spex_warning),
            "spex_alarm": exceedance(&chart.spex, l.spex_limit),
        },
    })
}

/// Writes the model, its limits and the calibration chart; returns the summary.
fn write_calibration(out: &mut OutputDir, model: &Model, cfg: &RunConfig) -> std::result::Result<serde_json::Value, StageError> {
    let limits = calibrate_limits(model, cfg.limit_method).stage("limits")?;
    let chart = build_chart_with_limits(model, model.x_train(), limits).stage("chart")?;
    let svg = SvgOptions {
        log_scale: cfg.log_scale,
        ..SvgOptions::default()
    };
    let mut model_json = model.to_json().stage("write")?;
    model_json.push('\n');
    out.write("model.json", &model_json).stage("write")?;
    out.write_json("limits.json", &chart.limits).stage("write")?;
    out.write("calibration_chart.csv", &chart_csv(&chart)).stage("write")?;
    out.write("calibration_chart.svg", &chart_svg(&chart, svg)).stage("write")?;
    Ok(calibration_summary(model, &chart))
}

pub fn calibrate(a: &RunArgs) -> CmdResult {
    let mut cfg = base_config(a.config.as_ref()).stage("config")?;
    apply_run_args(&mut cfg, a).stage("config")?;
    cfg.absolutize().stage("config")?;
    cfg.validate(false).stage("validate")?;
    let mut timings = Timings::new(cfg.record_timings);

    let data = load_data(&cfg).stage("load")?;
    timings.lap("load");
    let model = fit_model(&cfg, cfg.kernel.as_ref(), &data.normal).stage("fit")?;
    timings.lap("fit");

    let mut out = OutputDir::create(&cfg.output_dir).stage("write")?;
    let summary = write_calibration(&mut out, &model, &cfg)?;
    timings.lap("calibrate");
    log::info!("calibrated {} model with h = {}", model.kind(), model.h());

    let mut manifest = Manifest::new("calibrate", cfg.seed, &cfg).stage("write")?;
    manifest.summary = summary;
    manifest.finish(&mut out, timings).stage("write")
}

fn run_optimizer(cfg: &RunConfig, normal: &Dataset, faulty: &[&Dataset], kernel: &KernelConfig) -> Result<OptimResult> {
    let o = &cfg.optimizer;
    if o.method == OptimMethod::KernelFlows {
        return kf_optimize(normal, faulty, kernel, &o.kf);
    }
    let space = ParamSpace::new(kernel, o.kf.parameterization);
    let names = space.names();
    let loss = PartitionLoss::new(normal, faulty, space, cfg.h, o.baseline_tau)?;
    let mut result = match o.method {
        OptimMethod::LineSearch => {
            if loss.space().len() != 1 {
                return Err(Error::Invalid(
                    "line search needs a single parameter (shared mode, sigma only)".into(),
                ));
            }
            line_search(|s| loss.eval(&[s]), &o.grid)?
        }
        OptimMethod::NelderMead => nelder_mead(|t| loss.eval(t), &loss.space().initial(), &o.nelder_mead)?,
        OptimMethod::GeneticAlgorithm => {
            let bounds = vec![(o.bounds[0], o.bounds[1]); loss.space().len()];
            ga_optimize(|t| loss.eval(t), &bounds, &o.ga)?
        }
        OptimMethod::KernelFlows => unreachable!(),
    };
    result.kernel = Some(loss.config(&result.theta_opt));
    result.param_names = Some(names);
    result.config = serde_json::to_value(o)?;
    Ok(result)
}

pub fn optimize(a: &OptimizeArgs) -> CmdResult {
    let mut cfg = base_config(a.run.config.as_ref()).stage("config")?;
    apply_run_args(&mut cfg, &a.run).stage("config")?;
    cfg.absolutize().stage("config")?;
    let o = &mut cfg.optimizer;
    if let Some(m) = &a.method {
        o.method = parse_enum("optimizer", m).stage("config")?;
    }
    if let Some(v) = a.iterations {
        o.kf.iterations = v;
    }
    if let Some(v) = a.ns {
        o.kf.ns = v;
    }
    if let Some(v) = a.alpha {
        o.kf.alpha = v;
    }
    if a.surrogate_tau.is_some() {
        o.kf.surrogate_tau = a.surrogate_tau;
    }
    let seed = cfg
        .seed
        .ok_or_else(|| Error::Invalid("optimize runs need a seed".into()))
        .stage("validate")?;
    cfg.optimizer.kf.seed = seed;
    cfg.optimizer.ga.seed = seed;
    if cfg.model != ModelKind::Kpca {
        return Err(Error::Invalid("optimize learns kernel parameters; use model kpca".into())).stage("validate");
    }
    cfg.validate(true).stage("validate")?;
    cfg.optimizer.kf.validate().stage("validate")?;
    let mut timings = Timings::new(cfg.record_timings);

    let data = load_data(&cfg).stage("load")?;
    let faulty: Vec<&Dataset> = data.faulty.iter().collect();
    timings.lap("load");
    let kernel0 = cfg.kernel.clone().expect("validated");
    let mut result = run_optimizer(&cfg, &data.normal, &faulty, &kernel0).stage("optimize")?;
    if !cfg.record_timings {
        result.trace.clear_wall_time();
    }
    timings.lap("optimize");
    log::info!("{:?} finished with loss {}", result.method, result.final_loss);

    let kernel = result.kernel.clone().expect("optimizers report their kernel");
    let model = fit_model(&cfg, Some(&kernel), &data.normal).stage("refit")?;
    timings.lap("refit");

    let mut out = OutputDir::create(&cfg.output_dir).stage("write")?;
    out.write_json("optim_result.json", &result).stage("write")?;
    out.write("trace.csv", &trace_csv(&result)).stage("write")?;
    let calibration = write_calibration(&mut out, &model, &cfg)?;
    timings.lap("calibrate");

    let mut manifest = Manifest::new("optimize", Some(seed), &cfg).stage("write")?;
    manifest.summary = json!({
        "method": result.method,
        "final_loss": result.final_loss,
        "theta_opt": result.theta_opt,
        "param_names": result.param_names,
        "evaluations": result.evaluations,
        "converged": result.converged,
        "degenerate_batches": result.degenerate_batches,
        "kernel": kernel,
        "calibration": calibration,
    });
    manifest.finish(&mut out, timings).stage("write")
}

pub fn monitor(a: &MonitorArgs) -> CmdResult {
    let mut cfg = base_config(a.config.as_ref()).stage("config")?;
    if let Some(p) = &a.model {
        cfg.model_file = Some(p.clone());
    }
    if let Some(p) = &a.test {
        cfg.test = Some(DataRef::Path(p.clone()));
    }
    if let Some(i) = a.onset {
        cfg.onset = Some(OnsetSpec::Index(i));
    }
    if let (Some(h), Some(m)) = (a.onset_hours, a.sampling_minutes) {
        cfg.onset = Some(OnsetSpec::Time {
            sampling_minutes: m,
            fault_after_hours: h,
        });
    }
    if let Some(p) = &a.out {
        cfg.output_dir = p.clone();
    }
    if let Some(m) = &a.limit_method {
        cfg.limit_method = LimitMethod::parse(m).stage("config")?;
    }
    cfg.log_scale |= a.log_scale;
    cfg.absolutize().stage("config")?;
    let model_file = cfg
        .model_file
        .clone()
        .ok_or_else(|| Error::Invalid("no model file given".into()))
        .stage("validate")?;
    let test_ref = cfg
        .test
        .clone()
        .ok_or_else(|| Error::Invalid("no test data given".into()))
        .stage("validate")?;
    let mut timings = Timings::new(cfg.record_timings);

    let model = Model::load(&model_file).stage("load_model")?;
    let raw = test_ref.load().stage("load")?;
    let test = Dataset::standardize(&raw, Some(model.scaler()), Role::Test).stage("standardize")?;
    let n = test.n();
    let onset = match cfg.onset {
        Some(spec) => spec.resolve(n).stage("validate")?,
        None => n + 1,
    };
    timings.lap("load");

    let limits = calibrate_limits(&model, cfg.limit_method).stage("limits")?;
    let mut chart = build_chart_with_limits(&model, &test.x, limits).stage("chart")?;
    chart.fault_onset = (onset <= n).then_some(onset);
    let cmr = cmr_report(&chart, onset).stage("score")?;
    timings.lap("monitor");

    let note = if cmr.has_faulty_part {
        "detection_delay counts samples from the onset to the first alarm; it is a supplementary metric, not part of the loss"
    } else {
        "no samples after the onset: the loss covers the normal part only"
    };
    let report = json!({
        "model": model.kind(),
        "h": model.h(),
        "limit_method": cfg.limit_method,
        "limits": chart.limits,
        "cmr": cmr,
        "post_onset_alarm_fraction": {
            "t2": cmr.t2.eta_faulty,
            "spex": cmr.spex.eta_faulty,
            "combined": cmr.combined.eta_faulty,
        },
        "note": note,
    });
    let svg = SvgOptions {
        log_scale: cfg.log_scale,
        ..SvgOptions::default()
    };
    let mut out = OutputDir::create(&cfg.output_dir).stage("write")?;
    out.write_json("report.json", &report).stage("write")?;
    out.write("chart.csv", &chart_csv(&chart)).stage("write")?;
    out.write("chart.svg", &chart_svg(&chart, svg)).stage("write")?;

    let mut manifest = Manifest::new("monitor", cfg.seed, &cfg).stage("write")?;
    manifest.summary = report;
    manifest.finish(&mut out, timings).stage("write")
}

/// One row of the run summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub run: String,
    pub command: String,
    pub model: Option<String>,
    pub method: Option<String>,
    pub final_loss: Option<f64>,
    pub cmr_t2: Option<f64>,
    pub cmr_spex: Option<f64>,
    pub cmr_combined: Option<f64>,
    pub false_alarm_combined: Option<f64>,
    pub delay_combined: Option<f64>,
    pub runtime_ms: Option<f64>,
}

fn report_row(run: String, m: &Manifest) -> ReportRow {
    let s = &m.summary;
    let f = |v: &serde_json::Value| v.as_f64();
    let model = s["model"]
        .as_str()
        .or_else(|| s["calibration"]["model"].as_str())
        .map(String::from);
    let cmr = &s["cmr"];
    ReportRow {
        run,
        command: m.command.clone(),
        model,
        method: s["method"].as_str().map(String::from),
        final_loss: f(&s["final_loss"]),
        cmr_t2: f(&cmr["t2"]["loss"]),
        cmr_spex: f(&cmr["spex"]["loss"]),
        cmr_combined: f(&cmr["combined"]["loss"]),
        false_alarm_combined: f(&cmr["combined"]["false_alarm_rate"]),
        delay_combined: f(&cmr["combined"]["detection_delay"]),
        runtime_ms: m.timings_ms.as_ref().map(|t| t.values().sum()),
    }
}

const REPORT_COLUMNS: [&str; 11] = [
    "run",
    "command",
    "model",
    "method",
    "final_loss",
    "cmr_t2",
    "cmr_spex",
    "cmr_combined",
    "false_alarm_combined",
    "delay_combined",
    "runtime_ms",
];

fn row_cells(r: &ReportRow, blank: &str) -> Vec<String> {
    let s = |v: &Option<String>| v.clone().unwrap_or_else(|| blank.to_string());
    let n = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| blank.to_string());
    vec![
        r.run.clone(),
        r.command.clone(),
        s(&r.model),
        s(&r.method),
        n(r.final_loss),
        n(r.cmr_t2),
        n(r.cmr_spex),
        n(r.cmr_combined),
        n(r.false_alarm_combined),
        r.delay_combined.map(|d| format!("{d}")).unwrap_or_else(|| blank.to_string()),
        n(r.runtime_ms),
    ]
}

pub fn summary_csv(rows: &[ReportRow]) -> String {
    let mut out = REPORT_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&row_cells(r, "").join(","));
        out.push('\n');
    }
    out
}

pub fn summary_text(rows: &[ReportRow], missing: &[String]) -> String {
    let cells: Vec<Vec<String>> = rows.iter().map(|r| row_cells(r, "-")).collect();
    let widths: Vec<usize> = (0..REPORT_COLUMNS.len())
        .map(|j| cells.iter().map(|c| c[j].len()).chain([REPORT_COLUMNS[j].len()]).max().unwrap_or(0))
        .collect();
    let line = |c: Vec<&str>| {
        c.iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
            + "\n"
    };
    let mut out = line(REPORT_COLUMNS.to_vec());
    for c in &cells {
        out.push_str(&line(c.iter().map(String::as_str).collect()));
    }
    out.push_str("\ndelay_combined: samples from the fault onset to the first alarm of the combined rule (supplementary to the loss)\n");
    if !missing.is_empty() {
        out.push_str("\nruns without a manifest:\n");
        for m in missing {
            out.push_str(&format!("  {m}\n"));
        }
    }
    out
}

pub fn report(a: &ReportArgs) -> CmdResult {
    let runs = &a.runs;
    let entries = std::fs::read_dir(runs).map_err(|e| Error::io(runs, e)).stage("scan")?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for dir in &dirs {
        let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let path = dir.join(MANIFEST);
        let manifest = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str::<Manifest>(&t).ok());
        match manifest {
            Some(m) if m.command != "report" => rows.push(report_row(name, &m)),
            Some(_) => {}
            None => missing.push(name),
        }
    }
    for m in &missing {
        log::warn!("{}: no readable manifest", runs.join(m).display());
    }

    let out_dir = a.out.clone().unwrap_or_else(|| runs.clone());
    let mut out = OutputDir::create(&out_dir).stage("write")?;
    out.write("summary.txt", &summary_text(&rows, &missing)).stage("write")?;
    out.write("summary.csv", &summary_csv(&rows)).stage("write")?;
    let mut manifest = Manifest::new("report", None, json!({ "runs": runs, "out": out_dir })).stage("write")?;
    manifest.summary = json!({ "rows": rows.len(), "missing": missing });
    manifest.finish(&mut out, Timings::new(false)).stage("write")?;
    if rows.is_empty() {
        return Err(Error::Invalid(format!("no run manifests under {}", runs.display()))).stage("scan");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: FaultKind,
    pub d: usize,
    pub n_normal: usize,
    pub n_faulty: usize,
    pub n_before: usize,
    pub n_after: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kind: FaultKind::MeanStep,
            d: 10,
            n_normal: 200,
            n_faulty: 200,
            n_before: 200,
            n_after: 200,
            seed: 0,
            output_dir: PathBuf::from("synthetic"),
        }
    }
}

pub fn synth(a: &SynthArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e)).stage("config")?;
            let v: serde_json::Value = serde_json::from_str(&text).map_err(Error::from).stage("config")?;
            let v = if v.get("command").is_some() { v["config"].clone() } else { v };
            serde_json::from_value(v).map_err(Error::from).stage("config")?
        }
        None => SynthConfig::default(),
    };
    if let Some(k) = &a.kind {
        cfg.kind = parse_enum("fault kind", k).stage("config")?;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(d, n_normal, n_faulty, n_before, n_after, seed);
    if let Some(p) = &a.out {
        cfg.output_dir = p.clone();
    }

    let (normal, faulty) =
        synthesize_raw(cfg.n_normal, cfg.n_faulty, cfg.d, cfg.kind, cfg.seed).stage("generate")?;
    let test = synthesize_test_raw(cfg.n_before, cfg.n_after, cfg.d, cfg.kind, cfg.seed.wrapping_add(1))
        .stage("generate")?;

    let mut out = OutputDir::create(&cfg.output_dir).stage("write")?;
    for (name, m) in [("normal.dat", &normal), ("faulty.dat", &faulty), ("test.dat", &test)] {
        out.write_with(name, |p| write_dat(&m.values, p)).stage("write")?;
    }
    let run = RunConfig {
        normal: Some(DataRef::Path("normal.dat".into())),
        faulty: vec![DataRef::Path("faulty.dat".into())],
        test: Some(DataRef::Path("test.dat".into())),
        kernel: Some(KernelConfig::shared(KernelFamily::Gaussian, 1.0, 1.0)),
        onset: Some(OnsetSpec::Index(cfg.n_before + 1)),
        seed: Some(cfg.seed),
        output_dir: PathBuf::from("run"),
        ..RunConfig::default()
    };
    out.write_json("config.json", &run).stage("write")?;
    let mut manifest = Manifest::new("synth", Some(cfg.seed), &cfg).stage("write")?;
    manifest.summary = json!({ "onset": cfg.n_before + 1 });
    manifest.finish(&mut out, Timings::new(false)).stage("write")
}
