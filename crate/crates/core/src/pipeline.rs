//! Stage orchestration and the JSON/CSV outputs of a run.
//!
//! Everything here is pure except [`write_outputs`]; identical configs give
//! identical reports.

use crate::apriori::{
    coefficient_member, default_eps_grid, measure_gamma0, run_apriori, standard_family, AprioriError, AprioriReport,
    Gamma0Report, MollifierKernel, NonlinearitySpec, VerifyOptions, GAMMA0_SAFETY,
};
use crate::classify::{classify, ClassifyReport};
use crate::coefficient::{
    build_coefficient, coefficient_derivative_bounds, verify_omega_continuity, ConstructionParameters, ContinuityReport,
    DerivativeReport, ModeParams, PiecewiseCoefficient, Regime,
};
use crate::config::{ExperimentConfig, Stage};
use crate::kirchhoff::{lift, LiftReport};
use crate::logreal::LogReal;
use crate::modes::{solve_modes, verify_case1, verify_case2, verify_case3, verify_case4, CaseReport, SampleSpec};
use crate::moduli::ProbeTrace;
use crate::params::{admissibility_probe, generate_sh, generate_wh, minimality_report, MinimalityEntry, ParamsError};
use crate::spectral::{
    amplitude_identity_residuals, certify_derivative_loss, certify_initial_regularity, certify_positive_time_regularity,
    certify_unbounded_sequence, SeriesDiagnostics, Verdict,
};
use serde::Serialize;
use std::path::Path;

pub const SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    VerificationFailed,
    ClassificationConflict,
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::VerificationFailed => 3,
            Status::ClassificationConflict => 4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamsSection {
    pub regime: Regime,
    pub depth: usize,
    pub numeric_cap: f64,
    pub admissibility: ProbeTrace,
    pub modes: Vec<ModeParams>,
    pub under_cap: Vec<usize>,
    pub minimality: Vec<MinimalityEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstructSection {
    pub breakpoints: usize,
    pub delta_inf: f64,
    pub continuity: ContinuityReport,
    pub derivative: Vec<DerivativeReport>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeSummary {
    pub k: usize,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub cases: Vec<CaseReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub identifier: String,
    pub max_residual: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeriesEntry {
    pub identifier: String,
    pub beta: Option<f64>,
    pub r: Option<f64>,
    pub verdict: Verdict,
    pub expected: Option<Verdict>,
    pub consistent: bool,
    pub diagnostics: SeriesDiagnostics,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearSection {
    pub modes: Vec<ModeSummary>,
    pub amplitude_identity: IdentityCheck,
    pub series: Vec<SeriesEntry>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LiftSection {
    pub report: LiftReport,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProblemSummary {
    pub omega: String,
    pub phi: String,
    pub m: NonlinearitySpec,
    pub lambdas: Vec<f64>,
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub r0: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AprioriSection {
    pub problem: ProblemSummary,
    pub gamma0: Gamma0Report,
    pub gamma0_used: f64,
    pub report: Option<AprioriReport>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: u32,
    pub stages: Vec<&'static str>,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassifyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub construct: Option<ConstructSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify_linear: Option<LinearSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lift_kirchhoff: Option<LiftSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apriori: Option<AprioriSection>,
    pub status: Status,
    pub failures: Vec<String>,
}

/// A finished run: the report plus every CSV as `(file name, contents)`.
pub struct Outcome {
    pub report: Report,
    pub files: Vec<(String, String)>,
}

impl Outcome {
    pub fn report_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.report).expect("report serializes");
        s.push('\n');
        s
    }
}

struct Run {
    failures: Vec<String>,
    conflict: bool,
    files: Vec<(String, String)>,
}

impl Run {
    fn fail(&mut self, stage: Stage, msg: impl std::fmt::Display) {
        self.failures.push(format!("{}: {msg}", stage.name()));
    }
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' }).collect()
}

/// Expected verdict of each series, where the construction predicts one.
fn expected(regime: Regime, series: &str, beta: Option<f64>) -> Option<Verdict> {
    let b = beta.unwrap_or(0.0);
    match series {
        "est:v0-gevrey-red" => Some(Verdict::Converges),
        "est:vt-sobolev-red" => (b <= 0.5).then_some(Verdict::Converges),
        "est:vt-nosobolev-red" => match regime {
            _ if b <= 0.5 => Some(Verdict::Converges),
            Regime::Sh => Some(Verdict::Diverges),
            Regime::Wh if b >= 1.0 => Some(Verdict::Diverges),
            Regime::Wh => None,
        },
        "est:sup-infty-red" => Some(if b <= 0.5 { Verdict::Converges } else { Verdict::Diverges }),
        _ => None,
    }
}

fn series_entry(regime: Regime, d: SeriesDiagnostics) -> SeriesEntry {
    let exp = expected(regime, &d.series, d.beta);
    SeriesEntry {
        identifier: d.series.clone(),
        beta: d.beta,
        r: d.r,
        verdict: d.verdict,
        expected: exp,
        consistent: exp.map_or(true, |e| e == d.verdict),
        diagnostics: d,
    }
}

fn params_stage(cfg: &ExperimentConfig, run: &mut Run) -> Option<(ParamsSection, ConstructionParameters)> {
    let (omega, phi) = (cfg.omega_fn(), cfg.phi_fn());
    let gen = match cfg.regime {
        Regime::Sh => generate_sh(&omega, &phi, &cfg.grid, cfg.depth, cfg.numeric_cap),
        Regime::Wh => generate_wh(&omega, &phi, &cfg.grid, cfg.depth, cfg.numeric_cap),
    };
    let p = match gen {
        Ok(p) => p,
        Err(e) => {
            if matches!(e, ParamsError::AdmissiblePairRejected { .. }) {
                run.conflict = true;
            }
            run.fail(Stage::Params, e);
            return None;
        }
    };
    let minimality = match minimality_report(&p, &omega, &phi) {
        Ok(m) => m,
        Err(e) => {
            run.fail(Stage::Params, e);
            Vec::new()
        }
    };
    let section = ParamsSection {
        regime: p.regime,
        depth: p.depth(),
        numeric_cap: p.numeric_cap,
        admissibility: admissibility_probe(cfg.regime, &omega, &phi).expect("probe ran during generation"),
        under_cap: (1..=p.depth()).filter(|&k| p.under_cap(k)).collect(),
        modes: p.modes.clone(),
        minimality,
    };
    Some((section, p))
}

fn construct_stage(p: &ConstructionParameters, run: &mut Run) -> Option<PiecewiseCoefficient> {
    match build_coefficient(p.clone()) {
        Ok(c) => Some(c),
        Err(e) => {
            run.fail(Stage::Construct, e);
            None
        }
    }
}

fn construct_section(cfg: &ExperimentConfig, c: &PiecewiseCoefficient, run: &mut Run) -> ConstructSection {
    let omega = cfg.omega_fn();
    let n = cfg.coefficient_points;
    let ts: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    run.files.push(("coefficient.csv".into(), c.to_csv(&ts)));
    let continuity = verify_omega_continuity(c, &omega, cfg.lift.omega_pairs, cfg.lift.seed);
    let mut derivative = Vec::new();
    for k in (1..=c.depth()).filter(|&k| c.params().under_cap(k)) {
        match coefficient_derivative_bounds(c, k) {
            Ok(d) => derivative.push(d),
            Err(e) => run.fail(Stage::Construct, e),
        }
    }
    let passed = continuity.sup_max.is_finite()
        && continuity.l_empirical.is_finite()
        && derivative.iter().all(|d| d.osc_bound_ok);
    if !passed {
        run.fail(Stage::Construct, "continuity or derivative bound failed");
    }
    ConstructSection {
        breakpoints: c.breakpoints().len(),
        delta_inf: c.delta_inf(),
        continuity,
        derivative,
        passed,
    }
}

fn linear_stage(cfg: &ExperimentConfig, c: &PiecewiseCoefficient, run: &mut Run) -> LinearSection {
    let p = c.params();
    let ks: Vec<usize> = (1..=p.depth()).filter(|&k| p.under_cap(k)).collect();
    let spec = SampleSpec {
        per_segment: cfg.sample_density,
        extra: Vec::new(),
    };
    let mut modes = Vec::new();
    for (k, res) in ks.iter().zip(solve_modes(c, &ks, &spec)) {
        match res {
            Ok(tr) => {
                let cases = vec![verify_case1(&tr), verify_case2(&tr, c), verify_case3(&tr), verify_case4(&tr)];
                for r in cases.iter().filter(|r| !r.ok) {
                    run.fail(Stage::VerifyLinear, format!("mode {k} case {} worst {}", r.case, r.worst_name));
                }
                run.files.push((format!("mode_{k}.csv"), tr.to_csv()));
                modes.push(ModeSummary {
                    k: *k,
                    steps_accepted: tr.steps_accepted,
                    steps_rejected: tr.steps_rejected,
                    cases,
                });
            }
            Err(e) => run.fail(Stage::VerifyLinear, e),
        }
    }

    let max_residual = amplitude_identity_residuals(p).into_iter().fold(0.0, f64::max);
    let amplitude_identity = IdentityCheck {
        identifier: "est:vt-sobolev-red".into(),
        max_residual,
        holds: max_residual <= 1e-12,
    };
    if !amplitude_identity.holds {
        run.fail(Stage::VerifyLinear, format!("amplitude identity residual {max_residual:e}"));
    }

    let (omega, phi) = (cfg.omega_fn(), cfg.phi_fn());
    let mut diags: Vec<SeriesDiagnostics> = Vec::new();
    match certify_initial_regularity(p, &omega, &phi, &cfg.rs) {
        Ok(v) => diags.extend(v),
        Err(e) => run.fail(Stage::VerifyLinear, e),
    }
    for &b in &cfg.betas {
        diags.push(certify_derivative_loss(p, b));
    }
    if p.regime == Regime::Wh {
        for &b in &cfg.betas {
            match certify_unbounded_sequence(p, b) {
                Ok(d) => diags.push(d),
                Err(e) => run.fail(Stage::VerifyLinear, e),
            }
        }
    }
    for &b in cfg.betas.iter().filter(|b| **b <= 0.5) {
        diags.push(certify_positive_time_regularity(p, b));
    }

    let mut norms = String::from("series,beta,r,log_partial_sum,pattern,verdict\n");
    let mut series = Vec::new();
    for d in diags {
        let lse = log_partial_sum(&d.log_terms);
        let opt = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
        norms.push_str(&format!(
            "{},{},{},{:.17e},{},{}\n",
            d.series,
            opt(d.beta),
            opt(d.r),
            lse,
            verdict_name(d.pattern),
            verdict_name(d.verdict)
        ));
        let tag = match (d.beta, d.r) {
            (Some(b), _) => format!("beta{b}"),
            (_, Some(r)) => format!("r{r}"),
            _ => String::new(),
        };
        run.files.push((format!("logterms_{}_{}.csv", slug(&d.series), tag), d.to_csv()));
        let e = series_entry(p.regime, d);
        if !e.consistent {
            run.fail(
                Stage::VerifyLinear,
                format!("{} beta={:?} r={:?}: {:?} (expected {:?})", e.identifier, e.beta, e.r, e.verdict, e.expected),
            );
        }
        series.push(e);
    }
    run.files.push(("norms.csv".into(), norms));

    let passed = modes.iter().all(|m| m.cases.iter().all(|c| c.ok))
        && modes.len() == ks.len()
        && amplitude_identity.holds
        && series.iter().all(|s| s.consistent);
    LinearSection {
        modes,
        amplitude_identity,
        series,
        passed,
    }
}

/// `ln sum_k exp(l_k)` for logs that may themselves be huge.
fn log_partial_sum(logs: &[LogReal]) -> f64 {
    let v: Vec<f64> = logs.iter().map(|l| l.to_f64()).collect();
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + v.iter().map(|l| (l - top).exp()).sum::<f64>().ln()
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Converges => "converges",
        Verdict::Diverges => "diverges",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn lift_stage(cfg: &ExperimentConfig, c: &PiecewiseCoefficient, run: &mut Run) -> Option<LiftSection> {
    match lift(c, &cfg.omega_fn(), &cfg.lift.options()) {
        Ok((r, table, _psi)) => {
            run.files.push(("nonlinearity.csv".into(), table.to_csv()));
            let passed = r.psi_fd_ok && r.m_range_ok && r.closure_ok && r.omega.holds && r.round_trip_ok.unwrap_or(true);
            if !passed {
                run.fail(Stage::LiftKirchhoff, "closure checks failed");
            }
            Some(LiftSection { report: r, passed })
        }
        Err(e) => {
            run.fail(Stage::LiftKirchhoff, e);
            None
        }
    }
}

fn apriori_stage(cfg: &ExperimentConfig, coef: Option<&PiecewiseCoefficient>, run: &mut Run) -> Option<AprioriSection> {
    let p = cfg.apriori.problem(cfg.regime);
    let kernel = match cfg.apriori.kernel_sharpness {
        Some(a) => MollifierKernel::bump_with(a),
        None => MollifierKernel::bump(),
    };
    let mut family = standard_family(&p.omega);
    // the generated coefficient joins only when it is measured in the same modulus
    if let Some(c) = coef {
        if cfg.apriori.omega_spec() == cfg.omega {
            family.push(coefficient_member(c, &p.omega, cfg.lift.seed));
        }
    }
    let g = match measure_gamma0(&kernel, &family, &default_eps_grid(), 400) {
        Ok(g) => g,
        Err(e) => {
            run.fail(Stage::Apriori, e);
            return None;
        }
    };
    if !g.within_bound {
        run.fail(Stage::Apriori, format!("measured gamma0 {} above the kernel bound {}", g.gamma0, g.bound));
    }
    let used = GAMMA0_SAFETY * g.gamma0;
    let mut vo = VerifyOptions::default();
    if let Some(n) = cfg.apriori.time_points {
        vo.time_points = n;
    }
    if let Some(n) = cfg.apriori.tau_points {
        vo.tau_points = n;
    }
    if let Some(h) = cfg.apriori.horizon {
        vo.horizon = h;
    }
    let report = match run_apriori(&p, &kernel, used, &vo) {
        Ok(r) => {
            if let Err(e) = r.require() {
                run.fail(Stage::Apriori, e);
            }
            Some(r)
        }
        Err(e) => {
            if matches!(e, AprioriError::InadmissiblePair { .. }) {
                run.conflict = true;
            }
            run.fail(Stage::Apriori, e);
            None
        }
    };
    let passed = g.within_bound && report.as_ref().is_some_and(|r| r.holds);
    Some(AprioriSection {
        problem: ProblemSummary {
            omega: p.omega.name().to_string(),
            phi: p.phi.name().to_string(),
            m: p.m.clone(),
            lambdas: p.lambdas.clone(),
            u0: p.u0.clone(),
            u1: p.u1.clone(),
            r0: p.r0,
        },
        gamma0: g,
        gamma0_used: used,
        report,
        passed,
    })
}

/// Runs the requested stages (plus what they depend on) in order.
pub fn run_pipeline(cfg: &ExperimentConfig, requested: &[Stage]) -> Outcome {
    let stages = Stage::closure(requested);
    let mut run = Run {
        failures: Vec::new(),
        conflict: false,
        files: Vec::new(),
    };
    let has = |s: Stage| stages.contains(&s);
    let classification = has(Stage::Classify).then(|| classify(cfg.regime, &cfg.omega_fn(), &cfg.phi_fn()));

    let generated = if has(Stage::Params) { params_stage(cfg, &mut run) } else { None };
    let coef = match &generated {
        Some((_, p)) if has(Stage::Construct) => construct_stage(p, &mut run),
        _ => None,
    };
    let params = generated.map(|(s, _)| s);
    let construct = coef.as_ref().map(|c| construct_section(cfg, c, &mut run));
    let verify_linear = match &coef {
        Some(c) if has(Stage::VerifyLinear) => Some(linear_stage(cfg, c, &mut run)),
        _ => None,
    };
    let lift_kirchhoff = match &coef {
        Some(c) if has(Stage::LiftKirchhoff) => lift_stage(cfg, c, &mut run),
        _ => None,
    };
    let apriori = if has(Stage::Apriori) {
        apriori_stage(cfg, coef.as_ref(), &mut run)
    } else {
        None
    };

    let status = if run.conflict {
        Status::ClassificationConflict
    } else if run.failures.is_empty() {
        Status::Ok
    } else {
        Status::VerificationFailed
    };
    let mut echo = cfg.clone();
    // the output location is not part of the experiment
    echo.output = None;
    echo.stages = None;
    Outcome {
        report: Report {
            schema: SCHEMA,
            stages: stages.iter().map(|s| s.name()).collect(),
            config: echo,
            classification,
            params,
            construct,
            verify_linear,
            lift_kirchhoff,
            apriori,
            status,
            failures: run.failures,
        },
        files: run.files,
    }
}

/// Writes `report.json` and the CSVs into `dir`, creating it if needed.
pub fn write_outputs(out: &Outcome, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), out.report_json())?;
    for (name, body) in &out.files {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}
