use std::path::Path;

use anyhow::{bail, Context, Result};
use metastab::fdsolver::{extrapolate_prefactor, fit_inverse_sqrt_beta, DomainSpec, GridSolver, Region};
use metastab::harmonic::{assemble, extended_reals, AlphaVector};
use metastab::kramers::{ek_rate, ErrorRegime};
use metastab::laplace::{log_log_slope, LaplaceProblem};
use metastab::optimizer::{optimize_reduced, OptimizerOptions};
use metastab::oscillator::mu;
use metastab::potential::{CriticalCatalog, PotentialModel};
use metastab::qsdmc::{exit_law_test, extrapolated_rate, SimConfig};
use serde_json::json;

use crate::config::{auto_domain, box_laplacian, default_intervals, is_flat, read_json, resolve_alpha, Config};
use crate::manifest::{num, Run};
use crate::{AnalyzeArgs, GridArgs, HarmonicArgs, LaplaceArgs, McArgs, OptimizeArgs, OscillatorArgs, RateArgs};

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

/// Tolerances shared with the acceptance suite.
pub const LAMBDA2_REL_TOL: f64 = 0.05;
pub const PREFACTOR_REL_TOL: f64 = 0.10;
pub const FLAT_REL_TOL: f64 = 1e-3;
pub const MC_SIGMAS: f64 = 3.0;
pub const MC_DISCRETIZATION_BAND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Done,
    Pass,
    Fail,
}

fn verdict(pass: bool) -> Verdict {
    if pass {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn flag(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn load(run: &mut Run, path: &Path) -> Result<(Config, CriticalCatalog)> {
    run.config(path);
    let cfg = Config::load(path)?;
    let cat = run.timed("analysis", || cfg.catalog())?;
    Ok((cfg, cat))
}

fn alpha_json(a: &AlphaVector) -> serde_json::Value {
    a.0.iter().map(|v| extended_reals::to_repr(*v)).collect()
}

pub fn analyze(out: &Path, a: AnalyzeArgs) -> Result<Verdict> {
    let mut run = Run::start(out, "analyze", json!({ "config": a.config }))?;
    let (mut cfg, cat) = load(&mut run, &a.config)?;
    say!("index  energy  position");
    for (i, p) in cat.points.iter().enumerate() {
        let tag = if Some(i) == cat.reference {
            " z0"
        } else if cat.i_min.contains(&i) {
            " lowest saddle"
        } else {
            ""
        };
        say!("{i}: {}  {:.6}  {:?}{tag}", p.index, p.energy, p.position);
    }
    cfg.catalog = Some(cat);
    run.write_json("catalog.json", &cfg)?;
    run.finish()?;
    Ok(Verdict::Done)
}

pub fn harmonic(out: &Path, a: HarmonicArgs) -> Result<Verdict> {
    let mut run = Run::start(out, "harmonic", json!({ "config": a.config, "alpha": a.alpha, "k": a.k }))?;
    let (_, cat) = load(&mut run, &a.config)?;
    let alpha = resolve_alpha(&a.alpha, &cat)?;
    let spec = run.timed("assemble", || assemble(&cat, &alpha, a.k))?;
    let header = ["k", "lambda", "point", "multi_index"].map(String::from);
    let rows: Vec<Vec<String>> = spec
        .levels
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let n: Vec<String> = l.multi_index.iter().map(|v| v.to_string()).collect();
            vec![(k + 1).to_string(), num(l.value), l.point.to_string(), n.join(" ")]
        })
        .collect();
    say!("{}", header.join(","));
    for r in &rows {
        say!("{}", r.join(","));
    }
    run.write_csv("harmonic.csv", &header, &rows)?;
    run.write_json("harmonic.json", &json!({ "alpha": alpha_json(&alpha), "levels": spec.levels }))?;
    run.finish()?;
    Ok(Verdict::Done)
}

pub fn rate(out: &Path, a: RateArgs) -> Result<Verdict> {
    let mut run = Run::start(out, "rate", json!({ "config": a.config, "alpha": a.alpha, "beta": a.beta }))?;
    let (_, cat) = load(&mut run, &a.config)?;
    let alpha = resolve_alpha(&a.alpha, &cat)?;
    let reports = a.beta.iter().map(|&b| ek_rate(&cat, &alpha, b)).collect::<metastab::Result<Vec<_>>>()?;
    let mut header: Vec<String> = ["beta", "lambda1", "lambda2_harmonic", "separation", "prefactor", "barrier"].map(String::from).into();
    header.extend(reports[0].saddles.iter().map(|s| format!("term_{}", s.point)));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![num(r.beta), num(r.lambda1), num(r.lambda2_harmonic), num(r.separation), num(r.prefactor), num(r.barrier)];
            row.extend(r.saddles.iter().map(|s| num(s.term)));
            row
        })
        .collect();
    say!("{}", header.join(","));
    for r in &rows {
        say!("{}", r.join(","));
    }
    run.write_csv("rate.csv", &header, &rows)?;
    run.write_json("rate.json", &reports)?;
    run.finish()?;
    Ok(Verdict::Done)
}

pub fn optimize(out: &Path, a: OptimizeArgs) -> Result<Verdict> {
    let mut run = Run::start(out, "optimize", json!({ "config": a.config, "window": a.window }))?;
    let (_, cat) = load(&mut run, &a.config)?;
    let opts = OptimizerOptions { window: a.window, ..Default::default() };
    let r = run.timed("optimize", || optimize_reduced(&cat, &opts))?;
    let full = r.alpha_vector(&cat);
    let summary = json!({
        "alpha_star": alpha_json(&AlphaVector(r.alpha_star.clone())),
        "F_star": r.f_star,
        "lambda_star": r.lambda_star,
        "ell": r.ell,
        "thresholds": r.thresholds,
        "maximizer_set": r.maximizer_set,
        "short_circuit": r.short_circuit,
        "i_min": r.i_min,
        "alpha": alpha_json(&full),
    });
    say!("{}", serde_json::to_string_pretty(&summary)?);
    run.write_json("optimize.json", &summary)?;
    run.write_json("alpha.json", &full)?;
    run.finish()?;
    Ok(Verdict::Done)
}

pub fn laplace(out: &Path, a: LaplaceArgs) -> Result<Verdict> {
    let mut run = Run::start(out, "laplace", json!({ "spec": a.spec, "lambdas": a.lambdas, "rel_tol": a.rel_tol }))?;
    run.config(&a.spec);
    let p: LaplaceProblem = read_json(&a.spec)?;
    let mut rows = Vec::new();
    let mut errs = Vec::new();
    let mut order = 0;
    for &l in &a.lambdas {
        let asym = run.timed("asymptotic", || p.asymptotic(l))?;
        let oracle = run.timed("oracle", || p.oracle(l, a.rel_tol))?;
        let rel = (asym.value / oracle - 1.0).abs();
        order = asym.order_r;
        errs.push(rel);
        rows.push(vec![num(l), num(asym.value), num(oracle), num(rel)]);
    }
    let header = ["lambda", "asymptotic", "oracle", "rel_error"].map(String::from);
    say!("{}", header.join(","));
    for r in &rows {
        say!("{}", r.join(","));
    }
    run.write_csv("laplace.csv", &header, &rows)?;
    let mut summary = json!({ "order_r": order, "predicted_slope": -(order as f64) / 2.0 });
    if a.lambdas.len() >= 2 && errs.iter().all(|e| *e > 0.0) {
        summary["fitted_slope"] = json!(log_log_slope(&a.lambdas, &errs));
    }
    run.write_json("laplace.json", &summary)?;
    run.finish()?;
    Ok(Verdict::Done)
}

fn check_dim(model: &PotentialModel, dim: Option<u8>) -> Result<()> {
    match dim {
        Some(d) if d as usize != model.dim() => bail!("--dim {d} but the potential has dimension {}", model.dim()),
        _ => Ok(()),
    }
}

/// Explicit domain from the flag or the config, if any.
fn fixed_domain(cfg: &Config, path: Option<&Path>, intervals: Option<&[usize]>) -> Result<Option<DomainSpec>> {
    let mut d = match path {
        Some(p) => Some(read_json::<DomainSpec>(p)?),
        None => cfg.domain.clone(),
    };
    if let (Some(d), Some(n)) = (d.as_mut(), intervals) {
        d.grid = metastab::fdsolver::Grid::Intervals(n.to_vec());
    }
    Ok(d)
}

fn flat_domain(model: &PotentialModel, fixed: Option<DomainSpec>, intervals: Vec<usize>) -> Result<DomainSpec> {
    let d = fixed.unwrap_or_else(|| DomainSpec {
        region: Region::Box { bounds: model.search_box.clone() },
        cuts: vec![],
        grid: metastab::fdsolver::Grid::Intervals(intervals),
    });
    if !d.cuts.is_empty() || !matches!(d.region, Region::Box { .. }) {
        bail!("a flat potential is validated on a plain box (no cuts)");
    }
    Ok(d)
}

pub fn validate_grid(out: &Path, a: GridArgs) -> Result<Verdict> {
    let mut run = Run::start(
        out,
        "validate-grid",
        json!({ "config": a.config, "alpha": a.alpha, "betas": a.betas, "dim": a.dim, "domain": a.domain, "intervals": a.intervals }),
    )?;
    run.config(&a.config);
    let cfg = Config::load(&a.config)?;
    check_dim(&cfg.model, a.dim)?;
    let fixed = fixed_domain(&cfg, a.domain.as_deref(), a.intervals.as_deref())?;
    let intervals = a.intervals.clone().unwrap_or_else(|| default_intervals(cfg.model.dim()));

    if is_flat(&cfg.model) {
        let domain = flat_domain(&cfg.model, fixed, intervals)?;
        let k = 3;
        let solver = GridSolver::new(&cfg.model, None);
        let spectra = run.timed("grid", || solver.sweep_beta(|_| domain.clone(), &a.betas, k))?;
        let mut rows = Vec::new();
        let mut worst: f64 = 0.0;
        for s in &spectra {
            let exact = box_laplacian(domain.region.bounds(), s.beta, k);
            for j in 0..k {
                let rel = (s.values[j] / exact[j] - 1.0).abs();
                worst = worst.max(rel);
                rows.push(vec![num(s.beta), (j + 1).to_string(), num(s.values[j]), num(s.error_bars[j]), num(exact[j]), num(rel)]);
            }
        }
        let pass = worst <= FLAT_REL_TOL;
        let header = ["beta", "k", "lambda", "error_bar", "exact", "rel_error"].map(String::from);
        run.write_csv("validate_grid.csv", &header, &rows)?;
        run.write_json("validate_grid.json", &json!({ "oracle": "laplacian", "max_rel_error": worst, "tolerance": FLAT_REL_TOL, "pass": pass }))?;
        say!("{} laplacian spectrum: max relative error {worst:.2e} (tolerance {FLAT_REL_TOL:e})", flag(pass));
        run.finish()?;
        return Ok(verdict(pass));
    }

    let cat = run.timed("analysis", || cfg.catalog())?;
    let alpha = resolve_alpha(&a.alpha, &cat)?;
    let reports = a.betas.iter().map(|&b| ek_rate(&cat, &alpha, b)).collect::<metastab::Result<Vec<_>>>()?;
    let solver = GridSolver::new(&cfg.model, Some(&cat));
    let spectra = run.timed("grid", || {
        solver.sweep_beta(|b| fixed.clone().unwrap_or_else(|| auto_domain(&cfg.model, &cat, &alpha, b, &intervals)), &a.betas, 2)
    })?;
    let barrier = cat.barrier()?;
    let header = ["beta", "lambda1", "lambda1_error", "lambda2", "lambda2_error", "lambda1_ek", "lambda2_harmonic", "scaled_lambda1"].map(String::from);
    let mut rows = Vec::new();
    let mut scaled = Vec::new();
    let mut lambda2 = Vec::new();
    for (s, r) in spectra.iter().zip(&reports) {
        let sc = s.values[0] * (s.beta * barrier).exp();
        scaled.push(sc);
        lambda2.push(s.values[1]);
        rows.push(vec![
            num(s.beta),
            num(s.values[0]),
            num(s.error_bars[0]),
            num(s.values[1]),
            num(s.error_bars[1]),
            num(r.lambda1),
            num(r.lambda2_harmonic),
            num(sc),
        ]);
    }
    run.write_csv("validate_grid.csv", &header, &rows)?;

    let n = a.betas.len();
    let lambda2_fit = fit_inverse_sqrt_beta(&a.betas, &lambda2, &[0, 1, 2][..n.min(3)])[0];
    let lambda2_h = reports[0].lambda2_harmonic;
    let lambda2_rel = (lambda2_fit / lambda2_h - 1.0).abs();
    let regime = if reports[0].saddles.iter().any(|s| s.regime == ErrorRegime::NearBoundary) {
        ErrorRegime::NearBoundary
    } else {
        ErrorRegime::FarBoundary
    };
    let prefactor_fit = if n >= 2 { extrapolate_prefactor(&a.betas, &scaled, regime) } else { scaled[0] };
    let prefactor_rel = (prefactor_fit / reports[0].prefactor - 1.0).abs();
    let l2_ok = lambda2_rel <= LAMBDA2_REL_TOL;
    let pf_ok = prefactor_rel <= PREFACTOR_REL_TOL;
    let summary = json!({
        "oracle": "grid",
        "alpha": alpha_json(&alpha),
        "lambda2": { "fitted": lambda2_fit, "harmonic": lambda2_h, "rel_error": lambda2_rel, "tolerance": LAMBDA2_REL_TOL, "pass": l2_ok },
        "prefactor": { "fitted": prefactor_fit, "eyring_kramers": reports[0].prefactor, "rel_error": prefactor_rel, "tolerance": PREFACTOR_REL_TOL, "regime": regime, "pass": pf_ok },
        "pass": l2_ok && pf_ok,
    });
    run.write_json("validate_grid.json", &summary)?;
    say!("{} lambda2: fitted {lambda2_fit:.5} vs harmonic {lambda2_h:.5} (rel {lambda2_rel:.3})", flag(l2_ok));
    say!("{} prefactor: fitted {prefactor_fit:.5} vs Eyring-Kramers {:.5} (rel {prefactor_rel:.3})", flag(pf_ok), reports[0].prefactor);
    run.finish()?;
    Ok(verdict(l2_ok && pf_ok))
}

pub fn validate_mc(out: &Path, a: McArgs) -> Result<Verdict> {
    let mut run = Run::start(
        out,
        "validate-mc",
        json!({
            "config": a.config, "alpha": a.alpha, "beta": a.beta, "replicas": a.replicas, "dt": a.dt, "seed": a.seed,
            "t_burn": a.t_burn, "t_max": a.t_max, "exit_horizon": a.exit_horizon, "domain": a.domain, "intervals": a.intervals,
        }),
    )?;
    run.config(&a.config);
    run.manifest.seeds = vec![a.seed, a.seed.wrapping_add(1)];
    let cfg = Config::load(&a.config)?;
    let fixed = fixed_domain(&cfg, a.domain.as_deref(), a.intervals.as_deref())?;
    let intervals = a.intervals.clone().unwrap_or_else(|| default_intervals(cfg.model.dim()));

    let (domain, x0, oracle, catalog) = if is_flat(&cfg.model) {
        let d = flat_domain(&cfg.model, fixed, intervals)?;
        let x0: Vec<f64> = d.region.bounds().iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect();
        let exact = box_laplacian(d.region.bounds(), a.beta, 1)[0];
        (d, x0, exact, None)
    } else {
        let cat = run.timed("analysis", || cfg.catalog())?;
        let alpha = resolve_alpha(&a.alpha, &cat)?;
        let d = fixed.unwrap_or_else(|| auto_domain(&cfg.model, &cat, &alpha, a.beta, &intervals));
        let x0 = cat.reference_point()?.position.clone();
        let fd = run.timed("grid", || GridSolver::new(&cfg.model, Some(&cat)).spectrum(&d, a.beta, 1))?.values[0];
        (d, x0, fd, Some(cat))
    };
    let sim = SimConfig { beta: a.beta, dt: a.dt, domain, replicas: a.replicas, t_burn: a.t_burn, t_max: a.t_max, seed: a.seed };
    let fv = run.timed("fleming_viot", || extrapolated_rate(&cfg.model, &sim, &x0)).context("Fleming-Viot run")?;
    let exit_cfg = SimConfig { dt: a.dt / 2.0, t_max: a.exit_horizon, seed: a.seed.wrapping_add(1), ..sim.clone() };
    let (law, samples) = run.timed("exit_law", || exit_law_test(&cfg.model, &exit_cfg, &fv.runs[1].positions))?;

    let dim = cfg.model.dim();
    let mut header = vec!["time".to_string(), "face".to_string()];
    header.extend((0..dim).map(|k| format!("x{k}")));
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            let mut r = vec![num(s.time), s.face.to_string()];
            r.extend(s.location.iter().map(|v| num(*v)));
            r
        })
        .collect();
    run.write_csv("exits.csv", &header, &rows)?;

    let band = MC_SIGMAS * fv.std_error + MC_DISCRETIZATION_BAND * oracle;
    let rate_ok = (fv.rate - oracle).abs() <= band;
    let ks_ok = law.exponential_passes();
    let ind_ok = law.independence_passes();
    let summary = json!({
        "rate": { "extrapolated": fv.rate, "std_error": fv.std_error, "per_dt": fv.runs.iter().map(|r| json!({"dt": r.dt, "rate": r.rate, "std_error": r.std_error})).collect::<Vec<_>>(),
                  "oracle": oracle, "oracle_kind": if catalog.is_some() { "grid" } else { "laplacian" }, "band": band, "pass": rate_ok },
        "exit_law": law,
        "exponential_pass": ks_ok,
        "independence_pass": ind_ok,
        "stability_number": fv.runs[0].stability_number,
        "rng": fv.runs[0].rng,
        "pass": rate_ok && ks_ok && ind_ok,
    });
    run.write_json("validate_mc.json", &summary)?;
    say!("{} rate: {:.5} ± {:.5} vs {oracle:.5} (band {band:.5})", flag(rate_ok), fv.rate, fv.std_error);
    say!("{} exit time exponential: KS {:.4} (critical {:.4}, p = {:.3})", flag(ks_ok), law.ks_statistic, law.ks_critical_5pct, law.ks_p_value);
    say!("{} exit face independent of exit time: p = {:.3}", flag(ind_ok), law.independence_p_value);
    run.finish()?;
    Ok(verdict(rate_ok && ks_ok && ind_ok))
}

pub fn oscillator(out: &Path, a: OscillatorArgs) -> Result<Verdict> {
    let mut run = Run::start(
        out,
        "oscillator",
        json!({ "k": a.k, "theta": a.theta.iter().map(|t| extended_reals::to_repr(*t)).collect::<Vec<_>>(), "tol": a.tol }),
    )?;
    let mut values = Vec::new();
    for &k in &a.k {
        for &t in &a.theta {
            values.push(mu(k, t, a.tol)?);
        }
    }
    let header = ["k", "theta", "mu", "method", "error_estimate"].map(String::from);
    let rows: Vec<Vec<String>> = values
        .iter()
        .map(|v| vec![v.k.to_string(), num(v.theta), num(v.value), format!("{:?}", v.method).to_lowercase(), num(v.error_estimate)])
        .collect();
    say!("{}", header.join(","));
    for r in &rows {
        say!("{}", r.join(","));
    }
    run.write_csv("oscillator.csv", &header, &rows)?;
    run.finish()?;
    Ok(Verdict::Done)
}
