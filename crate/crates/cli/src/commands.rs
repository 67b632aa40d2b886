use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use shadowing::assimilate::{assimilate, generate_twin, StopReason};
use shadowing::dynamics::{evolve, orbit, spin_up, steps_for, DynamicalSystem, Record};
use shadowing::lyapunov::{classify, clv_angle_statistics, clv_ginelli, line_angle, lyapunov_spectrum, ClvSet};
use shadowing::models::{beta_grid, bifurcation_scan, random_state, RijkeConfig};
use shadowing::nilss::shadowing_sensitivity;
use shadowing::optimize::minimize;
use shadowing::perturbation::{log_slope, perturbation_growth, Case};

use crate::config::{RunConfig, StartConfig};
use crate::output::{Cell, Outputs, Table};

/// What every subcommand needs besides the system.
pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub seed: u64,
    pub out: &'a mut Outputs,
}

/// State after the configured run-up.
fn start_state<S: DynamicalSystem>(sys: &S, start: &StartConfig, seed: u64) -> Result<Vec<f64>> {
    let u0 = match &start.initial {
        Some(u) => {
            if u.len() != sys.dim() {
                bail!("start.initial has {} components, the model has {}", u.len(), sys.dim());
            }
            u.clone()
        }
        None => random_state(sys.dim(), start.initial_spread, seed)?,
    };
    Ok(spin_up(sys, &u0, start.runup)?)
}

fn state_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("u{i}")).collect()
}

pub fn simulate<S: DynamicalSystem>(sys: &S, ctx: &mut Ctx) -> Result<serde_json::Value> {
    let c = &ctx.cfg.simulate;
    if c.stride == 0 {
        bail!("simulate.stride must be positive");
    }
    let u = start_state(sys, &c.start, ctx.seed)?;
    let steps = steps_for(sys, c.time).max(1);
    let traj = orbit(sys, &u, steps)?;
    let obs = sys.observable_names();
    let mut header = vec!["step".to_string(), "time".to_string()];
    header.extend(state_names(sys.dim()));
    header.extend(obs.iter().map(|s| s.to_string()));
    let mut t = Table::new(&header);
    for (n, x) in traj.states.iter().enumerate().step_by(c.stride) {
        let mut row: Vec<Cell> = vec![n.into(), (n as f64 * sys.dt()).into()];
        row.extend(x.iter().map(|&v| Cell::from(v)));
        row.extend((0..obs.len()).map(|k| Cell::from(sys.observe(k, x))));
        t.row(row);
    }
    ctx.out.table("trajectory.csv", &t)?;
    Ok(json!({ "steps": steps, "final_state": traj.last() }))
}

pub fn growth<S: DynamicalSystem>(sys: &S, ctx: &mut Ctx) -> Result<serde_json::Value> {
    let c = &ctx.cfg.perturbation_growth;
    let u = start_state(sys, &c.start, ctx.seed)?;
    let steps = steps_for(sys, c.time).max(1);
    let g = perturbation_growth(sys, &u, steps, c.eps, ctx.seed)?;
    let mut t = Table::new(&["step", "time", "tangent", "adjoint", "finite_difference", "ad_forward", "ad_reverse"]);
    for n in 0..=steps {
        t.row(vec![
            n.into(),
            (n as f64 * g.dt).into(),
            g.tangent[n].into(),
            g.adjoint[n].into(),
            g.finite_difference[n].into(),
            g.ad_forward[n].into(),
            g.ad_reverse[n].into(),
        ]);
    }
    ctx.out.table("growth.csv", &t)?;
    let to = steps_for(sys, c.slope_window) + 1;
    let slope = |s: &[f64]| log_slope(s, g.dt, 0, to);
    Ok(json!({
        "slope_window": c.slope_window,
        "log_slopes": {
            "tangent": slope(&g.tangent),
            "adjoint": slope(&g.adjoint),
            "finite_difference": slope(&g.finite_difference),
            "ad_forward": slope(&g.ad_forward),
            "ad_reverse": slope(&g.ad_reverse),
        }
    }))
}

pub fn lyapunov<S: DynamicalSystem>(sys: &S, ctx: &mut Ctx) -> Result<serde_json::Value> {
    let c = &ctx.cfg.lyapunov;
    let u = start_state(sys, &c.start, ctx.seed)?;
    let steps = steps_for(sys, c.time);
    let res = lyapunov_spectrum(sys, &c.provider, &u, c.k, steps, steps_for(sys, c.align), ctx.seed)?;
    let mut t = Table::new(&["index", "exponent"]);
    for (i, &l) in res.exponents.iter().enumerate() {
        t.row(vec![(i + 1).into(), l.into()]);
    }
    ctx.out.table("exponents.csv", &t)?;
    let mut header = vec!["time".to_string()];
    header.extend((1..=c.k).map(|i| format!("lambda_{i}")));
    let mut r = Table::new(&header);
    for (time, ls) in &res.running {
        let mut row: Vec<Cell> = vec![(*time).into()];
        row.extend(ls.iter().map(|&l| Cell::from(l)));
        r.row(row);
    }
    ctx.out.table("running.csv", &r)?;
    Ok(json!({ "exponents": res.exponents, "regime": classify(&res.exponents), "steps": res.steps }))
}

fn within_pairs(set: &ClvSet, n: usize) -> Vec<f64> {
    let v = &set.vectors[n];
    let k = v.ncols();
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let a: Vec<f64> = v.column(i).iter().copied().collect();
            let b: Vec<f64> = v.column(j).iter().copied().collect();
            out.push(line_angle(&a, &b));
        }
    }
    out
}

pub fn clv_angles<S: DynamicalSystem>(sys: &S, ctx: &mut Ctx) -> Result<serde_json::Value> {
    let c = &ctx.cfg.clv_angles;
    if c.stride == 0 {
        bail!("clv-angles.stride must be positive");
    }
    let u = start_state(sys, &c.start, ctx.seed)?;
    let (window, spin) = (steps_for(sys, c.window), steps_for(sys, c.spin));
    let tan = clv_ginelli(sys, &c.provider, &u, c.k, window, spin, Case::Tangent, ctx.seed)?;
    let adj = clv_ginelli(sys, &c.provider, &u, c.k, window, spin, Case::Adjoint, ctx.seed.wrapping_add(1))?;
    let mut header = vec!["step".to_string(), "time".to_string()];
    for set in ["tangent", "adjoint"] {
        for i in 1..=c.k {
            for j in i + 1..=c.k {
                header.push(format!("{set}_{i}_{j}"));
            }
        }
    }
    let mut t = Table::new(&header);
    for n in (0..tan.len()).step_by(c.stride) {
        let step = tan.offset + n;
        let mut row: Vec<Cell> = vec![step.into(), (step as f64 * tan.dt).into()];
        row.extend(within_pairs(&tan, n).into_iter().map(Cell::from));
        row.extend(within_pairs(&adj, n).into_iter().map(Cell::from));
        t.row(row);
    }
    ctx.out.table("angles.csv", &t)?;

    let mut s = Table::new(&["first", "i", "second", "j", "mean_degrees", "min_degrees"]);
    let pairs = [("tangent", &tan, "tangent", &tan), ("adjoint", &adj, "adjoint", &adj), ("tangent", &tan, "adjoint", &adj)];
    let mut min_within = f64::INFINITY;
    for (na, a, nb, b) in pairs {
        let st = clv_angle_statistics(a, b)?;
        if na == nb {
            min_within = min_within.min(st.min_off_diagonal());
        }
        for i in 0..c.k {
            for j in 0..c.k {
                if na == nb && j <= i {
                    continue;
                }
                s.row(vec![na.into(), (i + 1).into(), nb.into(), (j + 1).into(), st.mean[i][j].into(), st.min[i][j].into()]);
            }
        }
    }
    ctx.out.table("angles_summary.csv", &s)?;
    Ok(json!({
        "tangent_exponents": tan.exponents,
        "adjoint_exponents": adj.exponents,
        "min_angle_degrees": min_within,
        "flagged_steps": tan.flagged.len() + adj.flagged.len(),
    }))
}

pub fn bifurcation(base: &RijkeConfig, ctx: &mut Ctx) -> Result<serde_json::Value> {
    let c = &ctx.cfg.bifurcation;
    let betas = beta_grid(c.start, c.end, c.step)?;
    let points = bifurcation_scan(base, &betas, &c.scan, ctx.seed);
    let mut header = vec!["beta".to_string(), "J_ac".to_string(), "J_ray".to_string()];
    header.extend((1..=c.scan.exponents).map(|i| format!("lambda_{i}")));
    header.extend(["regime".to_string(), "error".to_string()]);
    let mut t = Table::new(&header);
    let mut failed = 0;
    for p in &points {
        let mut row: Vec<Cell> = vec![p.beta.into(), p.j_ac.into(), p.j_ray.into()];
        row.extend((0..c.scan.exponents).map(|i| Cell::from(p.exponents.get(i).copied().unwrap_or(f64::NAN))));
        row.push(p.regime.map(|r| r.to_string()).unwrap_or_default().into());
        row.push(p.error.clone().unwrap_or_default().into());
        failed += usize::from(p.error.is_some());
        t.row(row);
    }
    ctx.out.table("bifurcation.csv", &t)?;
    Ok(json!({ "points": points.len(), "failed": failed }))
}

fn indices(names: &[String], all: &[&str], lookup: impl Fn(&str) -> shadowing::Result<usize>) -> Result<Vec<usize>> {
    if names.is_empty() {
        return Ok((0..all.len()).collect());
    }
    names.iter().map(|n| lookup(n).map_err(Into::into)).collect()
}

pub fn sensitivity<S: DynamicalSystem>(sys: &S, ctx: &mut Ctx) -> Result<serde_json::Value> {
    let c = &ctx.cfg.sensitivity;
    let u = start_state(sys, &c.start, ctx.seed)?;
    let params = indices(&c.params, sys.param_names(), |n| sys.param_index(n))?;
    let observables = indices(&c.observables, sys.observable_names(), |n| sys.observable_index(n))?;
    let est = shadowing_sensitivity(sys, &u, c.case, &params, &observables, &c.shadowing, &c.sampler, ctx.seed)?;
    let mut t = Table::new(&["window", "param", "observable", "value", "cumulative"]);
    for (w, (sample, cum)) in est.samples.iter().zip(&est.cumulative).enumerate() {
        for (i, p) in est.params.iter().enumerate() {
            for (j, o) in est.observables.iter().enumerate() {
                t.row(vec![w.into(), p.as_str().into(), o.as_str().into(), sample[i][j].into(), cum[i][j].into()]);
            }
        }
    }
    ctx.out.table("samples.csv", &t)?;
    let mut s = Table::new(&["param", "observable", "mean", "std_error"]);
    for (i, p) in est.params.iter().enumerate() {
        for (j, o) in est.observables.iter().enumerate() {
            s.row(vec![p.as_str().into(), o.as_str().into(), est.mean[i][j].into(), est.std_error[i][j].into()]);
        }
    }
    ctx.out.table("summary.csv", &s)?;
    let k = est.exponents.first().map_or(0, Vec::len);
    let mean_exponents: Vec<f64> =
        (0..k).map(|i| est.exponents.iter().map(|e| e[i]).sum::<f64>() / est.exponents.len() as f64).collect();
    Ok(json!({
        "case": est.case,
        "windows": est.samples.len(),
        "mean_exponents": mean_exponents,
        "warnings": est.warnings,
    }))
}

pub fn optimize<S: DynamicalSystem>(sys: &S, ctx: &mut Ctx) -> Result<serde_json::Value> {
    let c = &ctx.cfg.optimize;
    let u = start_state(sys, &c.start, ctx.seed)?;
    let path = minimize(sys, &u, c.initial_parameter, &c.descent, ctx.seed)?;
    let mut t = Table::new(&["iteration", "parameter", "objective", "gradient", "gradient_std_error", "regime"]);
    for it in &path.iterates {
        t.row(vec![
            it.iteration.into(),
            it.parameter.into(),
            it.objective.into(),
            it.gradient.into(),
            it.gradient_std_error.into(),
            it.regime.to_string().into(),
        ]);
    }
    ctx.out.table("path.csv", &t)?;
    let warnings: Vec<&String> = path.iterates.iter().flat_map(|i| &i.warnings).collect();
    Ok(json!({ "termination": path.termination, "iterations": path.iterates.len(), "warnings": warnings }))
}

#[derive(Serialize)]
struct ExperimentSummary {
    experiments: usize,
    mean_error: f64,
    background_mean_error: f64,
    max_error: f64,
    improved: usize,
}

pub fn assimilate_cmd<S: DynamicalSystem>(sys: &S, ctx: &mut Ctx) -> Result<serde_json::Value> {
    let c = &ctx.cfg.assimilate;
    let k = sys.observable_index(&c.observable)?;
    let d = &c.descent;
    let span = steps_for(sys, d.spinup) + steps_for(sys, d.window);
    let gap = steps_for(sys, c.spacing).max(1);
    let mut refs = Vec::with_capacity(c.experiments);
    let mut u = start_state(sys, &c.start, ctx.seed)?;
    for _ in 0..c.experiments {
        let next = evolve(sys, &u, gap, &Record::default())?.final_state;
        refs.push(std::mem::replace(&mut u, next));
    }
    let mask = (!c.mask.is_empty()).then_some(c.mask.as_slice());
    let seed = ctx.seed;
    let results: Vec<_> = refs
        .par_iter()
        .enumerate()
        .map(|(e, r)| -> Result<_> {
            let s = seed.wrapping_add(e as u64);
            let twin = generate_twin(sys, r, span, k, c.noise_variance, mask, s)?;
            Ok(assimilate(sys, &twin, d, s).with_context(|| format!("experiment {e}"))?)
        })
        .collect::<Result<Vec<_>>>()?;

    let offset = steps_for(sys, d.spinup);
    let mut t = Table::new(&["experiment", "step", "time", "relative_error", "background_error", "clamped"]);
    let mut x = Table::new(&[
        "experiment",
        "parameter",
        "mean_error",
        "max_error",
        "background_mean_error",
        "iterations",
        "best_iteration",
        "stop",
    ]);
    let mut improved = 0;
    let mut all = Vec::new();
    let mut bg_all = Vec::new();
    for (e, r) in results.iter().enumerate() {
        for (n, (re, be)) in r.relative_error.iter().zip(&r.background_error).enumerate() {
            let step = offset + n;
            let clamped = usize::from(r.clamped.binary_search(&n).is_ok());
            t.row(vec![e.into(), step.into(), (step as f64 * sys.dt()).into(), (*re).into(), (*be).into(), clamped.into()]);
        }
        let bg_mean = r.background_error.iter().sum::<f64>() / r.background_error.len() as f64;
        improved += usize::from(r.mean_error < bg_mean);
        all.extend(&r.relative_error);
        bg_all.extend(&r.background_error);
        let stop = match &r.stop {
            StopReason::Failed(why) => format!("failed: {why}"),
            other => serde_json::to_value(other)?["kind"].as_str().unwrap_or_default().to_string(),
        };
        x.row(vec![
            e.into(),
            r.parameter.into(),
            r.mean_error.into(),
            r.max_error.into(),
            bg_mean.into(),
            r.objective.len().into(),
            r.best_iteration.into(),
            stop.into(),
        ]);
    }
    ctx.out.table("errors.csv", &t)?;
    ctx.out.table("experiments.csv", &x)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(serde_json::to_value(ExperimentSummary {
        experiments: results.len(),
        mean_error: mean(&all),
        background_mean_error: mean(&bg_all),
        max_error: all.iter().copied().fold(0.0, f64::max),
        improved,
    })?)
}

/// Wall-clock seconds since `start`.
pub fn elapsed(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}
