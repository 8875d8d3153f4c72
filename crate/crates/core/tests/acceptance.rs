//! Acceptance suite. Every test prints one line, `criterion NN name PASS|FAIL detail`;
//! run with `--nocapture` (or `--test-threads=1 --nocapture`) to see them.

use kirchhoff_lab::apriori::{
    coefficient_member, default_eps_grid, measure_gamma0, measured_gamma0, run_apriori, standard_family, AprioriProblem,
    MollifierKernel, VerifyOptions, GAMMA0_SAFETY,
};
use kirchhoff_lab::classify::{classify, Classification};
use kirchhoff_lab::coefficient::{
    build_coefficient, osc_profile_b, osc_solution_w, osc_solution_w_prime, ConstructionParameters, PiecewiseCoefficient,
    Regime, DEFAULT_NUMERIC_CAP,
};
use kirchhoff_lab::config::{ExperimentConfig, Stage};
use kirchhoff_lab::grid::EigenvalueGrid;
use kirchhoff_lab::kirchhoff::{lift, LiftOptions};
use kirchhoff_lab::moduli::{ContinuityModulus, WeightFunction};
use kirchhoff_lab::modes::{solve_mode, verify_case1, verify_case3, SampleSpec};
use kirchhoff_lab::params::{generate_sh, generate_wh};
use kirchhoff_lab::pipeline::{run_pipeline, write_outputs};
use kirchhoff_lab::spectral::{
    amplitude_identity_residuals, certify_derivative_loss, certify_initial_regularity, certify_unbounded_sequence, Verdict,
};
use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

fn line(n: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {n:02} {name:<24} {} {detail}", if ok { "PASS" } else { "FAIL" });
}

fn sh_pair() -> (ContinuityModulus, WeightFunction) {
    (ContinuityModulus::power(0.5), WeightFunction::power_over_log(0.5))
}

fn wh_pair() -> (ContinuityModulus, WeightFunction) {
    (ContinuityModulus::power(1.0), WeightFunction::power_over_log(2.0 / 3.0))
}

fn sh_params() -> ConstructionParameters {
    let (o, f) = sh_pair();
    generate_sh(&o, &f, &EigenvalueGrid::Pow2, 3, DEFAULT_NUMERIC_CAP).unwrap()
}

fn wh_params() -> ConstructionParameters {
    let (o, f) = wh_pair();
    generate_wh(&o, &f, &EigenvalueGrid::Pow2, 3, DEFAULT_NUMERIC_CAP).unwrap()
}

fn under_cap(c: &PiecewiseCoefficient) -> Vec<usize> {
    (1..=c.depth()).filter(|&k| c.params().under_cap(k)).collect()
}

#[test]
fn criterion_01_closed_form_profile() {
    let start = Instant::now();
    let eps = 1.0 / 16.0;
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let x = 20.0 * PI * (i as f64 + 0.5) / 1000.0;
        // w'' by differentiating w' = e^E (cos x + 2 eps sin^3 x), E' = 2 eps sin^2 x
        let (s, c) = x.sin_cos();
        let env = (eps * (x - 0.5 * (2.0 * x).sin())).exp();
        let w2 = env * (2.0 * eps * s * s * (c + 2.0 * eps * s * s * s) - s + 6.0 * eps * s * s * c);
        let w = osc_solution_w(eps, x).unwrap();
        worst = worst.max((w2 + osc_profile_b(eps, x) * w).abs() / env);
        // and w' against a central difference of w
        let h = 1e-5;
        let fd = (osc_solution_w(eps, x + h).unwrap() - osc_solution_w(eps, x - h).unwrap()) / (2.0 * h);
        assert!((fd - osc_solution_w_prime(eps, x).unwrap()).abs() <= 1e-8 * env);
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 1e-9 && secs < 1.0;
    line(1, "closed-form profile", ok, format!("residual {worst:.2e}, {secs:.3} s"));
    assert!(ok);
}

#[test]
fn criterion_02_block_energies_exact() {
    let mut worst = 0.0f64;
    let mut integrated = 0;
    for p in [sh_params(), wh_params()] {
        // every generated mode, from its closed form: w(2 pi n) = 0, w'(2 pi n) = exp(2 pi n eps)
        for m in &p.modes {
            let at_t = 2.0 * m.freq_log();
            let want_t = m.delta_log + 2.0 * m.eta_log;
            worst = worst.max((at_t - want_t).abs() / want_t.abs().max(1.0));
            // ln(2 eps eta sqrt(delta) (s - t)) from the block length alone
            let gap_log = m.s_log + (-(m.t_log - m.s_log).exp()).ln_1p();
            let stretch_log = (2.0 * m.eps).ln() + m.freq_log() + gap_log;
            let got = m.stretch().ln_abs();
            worst = worst.max((got - stretch_log).abs() / stretch_log.abs().max(1.0));
        }
        // integrated traces where the mode can be integrated
        let c = build_coefficient(p).unwrap();
        for k in under_cap(&c) {
            let tr = solve_mode(&c, k, &SampleSpec::default()).unwrap();
            let base = tr.delta.ln() + 2.0 * tr.eta.ln();
            let stretch = 2.0 * tr.eps * tr.eta * tr.delta.sqrt() * (tr.s_k - tr.t_k);
            let (e_t, _) = tr.energies_at(&c, tr.t_k);
            let (e_s, _) = tr.energies_at(&c, tr.s_k);
            worst = worst.max((e_t.ln_abs() - base).abs() / base.abs().max(1.0));
            worst = worst.max((e_s.ln_abs() - base - stretch).abs() / (base + stretch).abs().max(1.0));
            assert!(verify_case1(&tr).ok);
            integrated += 1;
        }
    }
    let ok = worst <= 1e-10;
    line(2, "block energies exact", ok, format!("worst log-relative {worst:.2e}, {integrated} integrated"));
    assert!(ok);
}

#[test]
fn criterion_03_pre_block_sandwich() {
    let start = Instant::now();
    let c = build_coefficient(sh_params()).unwrap();
    let mut checked = 0;
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for k in under_cap(&c) {
        let tr = solve_mode(&c, k, &SampleSpec::default()).unwrap();
        assert!(tr.eta <= 1e6);
        let r = verify_case3(&tr);
        ok &= r.ok;
        worst = worst.min(r.worst_margin);
        checked += r.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    // the weak desk's integrable modes obey the same sandwich
    let w = build_coefficient(wh_params()).unwrap();
    for k in under_cap(&w) {
        let r = verify_case3(&solve_mode(&w, k, &SampleSpec::default()).unwrap());
        ok &= r.ok;
        worst = worst.min(r.worst_margin);
        checked += r.checked;
    }
    let ok = ok && checked > 0 && secs < 30.0;
    line(3, "pre-block sandwich", ok, format!("{checked} points, worst margin {worst:.2e}, strict desk {secs:.2} s"));
    assert!(ok);
}

#[test]
fn criterion_04_amplitude_identity() {
    let mut worst = 0.0f64;
    for p in [sh_params(), wh_params()] {
        for r in amplitude_identity_residuals(&p) {
            worst = worst.max(r);
        }
        // first term by plain arithmetic: a_1^2 eta_1^3 e^X = 1
        let m = &p.modes[0];
        let direct = m.a_sq_log.unwrap() + 3.0 * m.eta_log + m.stretch().to_f64();
        worst = worst.max(direct.abs());
    }
    let ok = worst <= 1e-12;
    line(4, "amplitude identity", ok, format!("residual {worst:.2e}"));
    assert!(ok);
}

#[test]
fn criterion_05_sharpness_split() {
    let sh = sh_params();
    let mut ok = true;
    let mut got = Vec::new();
    for b in [0.6, 0.75, 1.0] {
        let v = certify_derivative_loss(&sh, b).verdict;
        ok &= v == Verdict::Diverges;
        got.push(format!("sh {b}: {v:?}"));
    }
    let v = certify_derivative_loss(&sh, 0.5).verdict;
    ok &= v == Verdict::Converges;
    got.push(format!("sh 0.5: {v:?}"));
    let wh = wh_params();
    let v = certify_derivative_loss(&wh, 1.0).verdict;
    ok &= v == Verdict::Diverges;
    got.push(format!("wh 1: {v:?}"));
    for (b, want) in [(0.6, Verdict::Diverges), (0.5, Verdict::Converges)] {
        let v = certify_unbounded_sequence(&wh, b).unwrap().verdict;
        ok &= v == want;
        got.push(format!("wh seq {b}: {v:?}"));
    }
    line(5, "sharpness split", ok, got.join(", "));
    assert!(ok);
}

#[test]
fn criterion_06_initial_regularity() {
    let rs = [0.0, 0.5, 1.0, 2.0];
    let mut ok = true;
    let mut n = 0;
    for (p, (o, f)) in [(sh_params(), sh_pair()), (wh_params(), wh_pair())] {
        for d in certify_initial_regularity(&p, &o, &f, &rs).unwrap() {
            ok &= d.verdict == Verdict::Converges;
            n += 1;
        }
    }
    let ok = ok && n == 8;
    line(6, "initial regularity", ok, format!("{n} series converge"));
    assert!(ok);
}

#[test]
fn criterion_07_kirchhoff_closure() {
    let (o, _) = sh_pair();
    let c = build_coefficient(sh_params()).unwrap();
    let (r, _, _) = lift(&c, &o, &LiftOptions::default()).unwrap();
    let rt = r.round_trip.as_ref().unwrap();
    let ok = r.closure_residual <= 1e-8
        && r.m_range.0 >= 0.5
        && r.m_range.1 <= 1.5
        && r.omega.l_m.is_finite()
        && r.omega.l_m <= 3.0 * r.omega.l_c
        && r.omega.pairs >= 10_000
        && rt.max_error <= 1e-5;
    line(
        7,
        "Kirchhoff closure",
        ok,
        format!(
            "closure {:.2e}, m in [{:.4}, {:.4}], L_m {:.3} vs 3 L_c {:.3}, round trip {:.2e}",
            r.closure_residual,
            r.m_range.0,
            r.m_range.1,
            r.omega.l_m,
            3.0 * r.omega.l_c,
            rt.max_error
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_08_mollification_constant() {
    let k = MollifierKernel::bump();
    let moduli = [
        ContinuityModulus::power(1.0),
        ContinuityModulus::power(0.5),
        ContinuityModulus::power(0.25),
        ContinuityModulus::power_log(1.0),
        ContinuityModulus::inverse_log(1.0),
    ];
    let mut gamma0 = 0.0f64;
    let mut within = true;
    for om in &moduli {
        let r = measured_gamma0(&k, om).unwrap();
        gamma0 = gamma0.max(r.gamma0);
        within &= r.within_bound;
    }
    let (o, _) = sh_pair();
    let c = build_coefficient(sh_params()).unwrap();
    let mut fam = standard_family(&o);
    fam.push(coefficient_member(&c, &o, 11));
    let r = measure_gamma0(&k, &fam, &default_eps_grid(), 300).unwrap();
    gamma0 = gamma0.max(r.gamma0);
    within &= r.within_bound;
    let norm = k.normalization_error();
    let ok = within && gamma0 <= k.gamma0_bound() && norm <= 1e-12;
    line(
        8,
        "mollification constant",
        ok,
        format!("gamma0 {gamma0:.4} <= {:.4}, normalization {norm:.1e}", k.gamma0_bound()),
    );
    assert!(ok);
}

#[test]
fn criterion_09_apriori_estimates() {
    let k = MollifierKernel::bump();
    let opts = VerifyOptions::default();
    let mut ok = true;
    let mut detail = Vec::new();
    for (p, ids) in [
        (AprioriProblem::sh_desk(), vec!["th:apriori-est", "est:ekep"]),
        (AprioriProblem::wh_desk(), vec!["th:apriori-est", "est:uk-t"]),
    ] {
        let start = Instant::now();
        let g = measured_gamma0(&k, &p.omega).unwrap().gamma0 * GAMMA0_SAFETY;
        let rep = run_apriori(&p, &k, g, &opts).unwrap();
        let secs = start.elapsed().as_secs_f64();
        ok &= secs < 60.0 && rep.holds;
        for id in ids {
            let c = rep.check(id).unwrap();
            ok &= c.holds && c.points > 0;
            detail.push(format!("{:?} {id} {:.2e}", p.regime, c.worst_margin));
        }
        detail.push(format!("{secs:.1} s"));
    }
    line(9, "a priori estimates", ok, detail.join(", "));
    assert!(ok);
}

#[test]
fn criterion_10_classification_table() {
    use Classification::{Counterexample, Existence};
    let w = ContinuityModulus::power;
    let table: Vec<(Regime, ContinuityModulus, WeightFunction, Classification)> = vec![
        (Regime::Sh, w(1.0), WeightFunction::constant(), Existence),
        (Regime::Sh, w(0.5), WeightFunction::power(0.5), Existence),
        (Regime::Sh, w(0.25), WeightFunction::power(0.75), Existence),
        (Regime::Sh, w(0.75), WeightFunction::power(0.25), Existence),
        (Regime::Sh, ContinuityModulus::power_log(1.0), WeightFunction::log_power(1.0), Existence),
        (Regime::Wh, w(1.0), WeightFunction::power(2.0 / 3.0), Existence),
        (Regime::Sh, w(0.5), WeightFunction::power_over_log(0.5), Counterexample),
        (Regime::Wh, w(1.0), WeightFunction::power_over_log(2.0 / 3.0), Counterexample),
    ];
    let mut bad = Vec::new();
    for (regime, om, phi, want) in &table {
        let got = classify(*regime, om, phi).classification;
        if got != *want {
            bad.push(format!("{regime:?} ({}, {}) gave {got:?}", om.name(), phi.name()));
        }
    }
    let ok = bad.is_empty();
    line(10, "classification table", ok, format!("{} pairs; {}", table.len(), bad.join("; ")));
    assert!(ok);
}

#[test]
fn criterion_11_determinism() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/sh_desk.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_outputs(&run_pipeline(&cfg, &Stage::ALL), d.path()).unwrap();
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("report.json")).unwrap();
    let (a, b) = (read(&dirs[0]), read(&dirs[1]));
    let ok = !a.is_empty() && a == b;
    line(11, "determinism", ok, format!("report.json {} bytes", a.len()));
    assert!(ok);
}
