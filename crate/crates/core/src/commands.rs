//! Batch commands behind the command-line front end.
//!
//! Every command reads a [`RunConfig`], writes its files under an output
//! directory and finishes with a `manifest-<command>.json` describing the run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{LawKind, Problem, RunConfig};
use crate::diagnostics::{pi_pss, solve_basic_profile, BasicProfile};
use crate::error::{Error, Result};
use crate::experiments::{
    compressible_table, incompressible_bc, max_block_gradient, relax, run_compressible, run_incompressible,
    run_transient, table_for, ErrorTable,
};
use crate::fem::Discretization;
use crate::forchheimer::{GPolynomial, Term};
use crate::grid::{Pattern, ScalarField};
use crate::io;
use crate::layered::{Layer, LayerStack};
use crate::linalg::LINEAR_RTOL;
use crate::solver::{solve_steady, FlowModel, PressureSolution};
use crate::upscaling::{upscale_all_blocks, CoarseModel, FineModel};

pub const COARSE_MODEL_FILE: &str = "coarse_model.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Fine,
    Coarse,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Fine => "fine",
            Scale::Coarse => "coarse",
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(Scale::Fine),
            "coarse" => Ok(Scale::Coarse),
            _ => Err(Error::Invalid(format!("unknown scale `{s}` (expected fine or coarse)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Driven flow, pressure 0 on the left and 1 on the right.
    Steady,
    /// Perturbed basic profile relaxing under the constant-rate well.
    Transient,
    BasicProfile,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Steady => "steady",
            Regime::Transient => "transient",
            Regime::BasicProfile => "basic-profile",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "steady" => Ok(Regime::Steady),
            "transient" => Ok(Regime::Transient),
            "basic-profile" => Ok(Regime::BasicProfile),
            _ => Err(Error::Invalid(format!("unknown regime `{s}` (expected steady, transient or basic-profile)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub linear_rtol: f64,
    pub table_eps_level: f64,
    pub table_eps: f64,
    pub table_eps_slope: f64,
}

/// Record of one command run. Holds no timestamps so reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub preset: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub workers: Option<usize>,
    pub tolerances: Tolerances,
    pub outputs: Vec<String>,
    pub summary: Value,
}

struct Run<'a> {
    config: &'a RunConfig,
    out: &'a Path,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(config: &'a RunConfig, out: &'a Path) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(out)?;
        Ok(Self { config, out, outputs: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        io::write(&self.out.join(name), contents)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, command: &str, summary: Value) -> Result<Manifest> {
        let c = self.config;
        self.outputs.sort();
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            preset: c.preset.clone(),
            config_hash: c.hash(),
            seed: c.seed,
            workers: c.workers,
            tolerances: Tolerances {
                picard_tol: c.solver.tol,
                picard_max_iter: c.solver.max_iter,
                linear_rtol: LINEAR_RTOL,
                table_eps_level: c.table.eps_level,
                table_eps: c.table.eps,
                table_eps_slope: c.table.eps_slope,
            },
            outputs: self.outputs,
            summary,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
        io::write(&self.out.join(format!("manifest-{command}.json")), &(text + "\n"))?;
        Ok(manifest)
    }
}

/// Runs `f` on a pool of `workers` threads, or on the global pool when unset.
fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?
            .install(f),
    }
}

fn stats(f: &ScalarField) -> Value {
    json!({ "min": f.min(), "max": f.max(), "mean": f.mean() })
}

/// Writes `k`, `phi` and (two-term laws) `beta` CSVs, plus a VTK file when enabled.
pub fn generate(config: &RunConfig, out: &Path) -> Result<Manifest> {
    let mut run = Run::new(config, out)?;
    let k = config.permeability()?;
    let phi = config.porosity(&k)?;
    let beta = config.beta(&k, &phi)?;
    run.write("k.csv", &io::field_to_csv(&k))?;
    run.write("phi.csv", &io::field_to_csv(&phi))?;
    let mut fields = vec![("k", &k), ("phi", &phi)];
    if let Some(b) = &beta {
        run.write("beta.csv", &io::field_to_csv(b))?;
        fields.push(("beta", b));
    }
    if config.output.vtk {
        run.write("fields.vtk", &io::fields_to_vtk("fine fields", &fields)?)?;
    }
    let mut summary = json!({ "cells": k.grid.num_cells(), "k": stats(&k), "phi": stats(&phi) });
    if let Some(b) = &beta {
        summary["beta"] = stats(b);
    }
    run.finish("generate", summary)
}

/// Fine model from the CSVs in `dir` when present, else freshly generated.
pub fn load_fine(config: &RunConfig, dir: &Path) -> Result<FineModel> {
    let k_path = dir.join("k.csv");
    if !k_path.exists() {
        return config.fine_model();
    }
    let grid = config.fine_grid()?;
    let k = io::field_from_csv(grid, &io::read(&k_path)?)?;
    let phi = io::field_from_csv(grid, &io::read(&dir.join("phi.csv"))?)?;
    let beta = match config.law.kind {
        LawKind::TwoTerm => Some(io::field_from_csv(grid, &io::read(&dir.join("beta.csv"))?)?),
        _ => None,
    };
    let law = config.cell_law(grid.num_cells(), beta.as_ref())?;
    FineModel::new(k, phi, law)
}

pub fn load_coarse(dir: &Path) -> Result<CoarseModel> {
    CoarseModel::from_json(&io::read(&dir.join(COARSE_MODEL_FILE))?)
}

fn driven_solve(model: &FlowModel, config: &RunConfig) -> Result<PressureSolution> {
    let disc = Discretization::new(model.grid, incompressible_bc())?;
    solve_steady(&disc, model, None, &config.solver, None)
}

fn basic_profile(model: &FlowModel, config: &RunConfig) -> Result<BasicProfile> {
    let f = &config.flow;
    solve_basic_profile(model, f.rate, f.gamma, f.well, 0.0, &config.solver)
}

/// Upscales the fine model, sizing mobility tables to the gradients of its own solution.
pub fn upscale(config: &RunConfig, out: &Path) -> Result<Manifest> {
    let mut run = Run::new(config, out)?;
    let coarse = with_workers(config.workers, || {
        let fine = load_fine(config, out)?;
        let partition = config.partition()?;
        let model = fine.flow_model()?;
        let (solution, anchors) = match config.flow.problem {
            Problem::Driven => (driven_solve(&model, config)?, vec![1.0 / config.grid.lx]),
            Problem::Pss => (basic_profile(&model, config)?.solution, Vec::new()),
        };
        let mut opts = config.upscale_options();
        opts.table = table_for(&config.table, max_block_gradient(&solution, &partition)?, &anchors);
        upscale_all_blocks(&fine, &partition, &opts)
    })?;
    run.write(COARSE_MODEL_FILE, &(coarse.to_json()? + "\n"))?;
    let mut blocks = String::from("block,i,j,k11,k12,k21,k22,phistar,levels,stop,asymmetry\n");
    for b in &coarse.blocks {
        let k = b.kstar.0;
        let stop = b.diagnostics.table_stop.map(|s| format!("{s:?}").to_lowercase()).unwrap_or_default();
        let _ = writeln!(
            blocks,
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{},{stop},{:e}",
            b.index,
            b.index % coarse.mx,
            b.index / coarse.mx,
            k[0][0],
            k[0][1],
            k[1][0],
            k[1][1],
            b.phistar_at(b.center),
            b.diagnostics.table_levels,
            b.diagnostics.asymmetry
        );
    }
    run.write("blocks.csv", &blocks)?;
    for b in &coarse.blocks {
        if let Some(t) = b.mobility.table() {
            run.write(&format!("gstar/block-{:04}.csv", b.index), &t.to_csv_string())?;
        }
    }
    let d = coarse.blocks.iter().map(|b| &b.diagnostics);
    let summary = json!({
        "blocks": coarse.blocks.len(),
        "variant": coarse.variant.name(),
        "method": coarse.method.name(),
        "tables": coarse.blocks.iter().filter(|b| b.mobility.table().is_some()).count(),
        "max_table_levels": d.clone().map(|d| d.table_levels).max().unwrap_or(0),
        "max_asymmetry": d.clone().map(|d| d.asymmetry).fold(0.0, f64::max),
        "phi_fallbacks": d.clone().filter(|d| d.phi_fallback).count(),
        "phi_nonpositive": d.filter(|d| d.phi_nonpositive).count(),
    });
    log::info!("upscaled {} blocks", coarse.blocks.len());
    run.finish("upscale", summary)
}

fn flow_model(config: &RunConfig, dir: &Path, scale: Scale) -> Result<FlowModel> {
    match scale {
        Scale::Fine => load_fine(config, dir)?.flow_model(),
        Scale::Coarse => load_coarse(dir)
            .map_err(|e| e.in_stage(format!("reading {COARSE_MODEL_FILE} (run upscale first)")))?
            .to_flow_model(config.upscale.refine),
    }
}

fn write_solution(run: &mut Run, stem: &str, solution: &PressureSolution) -> Result<()> {
    run.write(&format!("{stem}-pressure.csv"), &io::solution_to_csv(solution))?;
    run.write(&format!("{stem}-cells.csv"), &io::cell_data_to_csv(solution))?;
    if run.config.output.vtk {
        run.write(&format!("{stem}.vtk"), &io::solution_to_vtk(stem, solution))?;
    }
    Ok(())
}

/// One solve of the fine model or of the upscaled model in `out`.
pub fn solve(config: &RunConfig, out: &Path, scale: Scale, regime: Regime) -> Result<Manifest> {
    let mut run = Run::new(config, out)?;
    let stem = format!("{}-{}", scale.name(), regime.name());
    let model = flow_model(config, out, scale)?;
    let summary = with_workers(config.workers, || match regime {
        Regime::Steady => {
            let s = driven_solve(&model, config)?;
            let u = s.average_velocity();
            write_solution(&mut run, &stem, &s)?;
            Ok(json!({ "average_velocity": u, "average_gradient": s.average_gradient(), "iterations": s.iterations }))
        }
        Regime::BasicProfile => {
            let p = basic_profile(&model, config)?;
            let pi = pi_pss(&p)?;
            write_solution(&mut run, &stem, &p.solution)?;
            Ok(json!({
                "pi": pi,
                "average_velocity": p.solution.average_velocity(),
                "outflow": p.realized_outflow,
                "iterations": p.solution.iterations,
            }))
        }
        Regime::Transient => {
            let p = basic_profile(&model, config)?;
            let base = config.compressible_setup(config.field.pattern, config.upscale.variant)?;
            let amplitude = config.transient.perturbation * p.solution.pressure.iter().copied().fold(0.0, f64::max);
            let r = relax(&model, &p, amplitude, &base, config.transient.dt, config.transient.t_end)?;
            let mut csv = format!("# pss index {:e}\ntime,pi,distance\n", r.pss_index);
            for n in 0..r.times.len() {
                let _ = writeln!(csv, "{:e},{:e},{:e}", r.times[n], r.index[n], r.distance[n]);
            }
            run.write(&format!("{stem}.csv"), &csv)?;
            let last = r.index.len() - 1;
            Ok(json!({
                "pss_index": r.pss_index,
                "final_index": r.index[last],
                "initial_distance": r.distance[0],
                "final_distance": r.distance[last],
                "steps": last,
            }))
        }
    })?;
    run.finish("solve", summary)
}

fn table_summary(t: &ErrorTable) -> Value {
    let max = t.rows.iter().flat_map(|(_, v)| v.iter().copied()).fold(0.0, f64::max);
    json!({ "title": t.title, "max_error": max })
}

/// Error tables: methods against `Δβ/β_min` for driven flow, PI and velocity
/// errors against the porosity exponent for the well problem.
pub fn compare(config: &RunConfig, out: &Path) -> Result<Manifest> {
    let mut run = Run::new(config, out)?;
    let mut jobs: Vec<(String, Box<dyn Fn() -> Result<ErrorTable> + Send + Sync>)> = Vec::new();
    for pattern in config.swept_patterns() {
        match config.flow.problem {
            Problem::Driven => {
                let aspects = if pattern == Pattern::Random { config.sweep.aspects.clone() } else { vec![1.0] };
                for aspect in aspects {
                    let setup = config.incompressible_setup(pattern, aspect)?;
                    let name = if pattern == Pattern::Random {
                        format!("compare-{}-aspect{aspect}.csv", pattern.name())
                    } else {
                        format!("compare-{}.csv", pattern.name())
                    };
                    jobs.push((name, Box::new(move || run_incompressible(&setup))));
                }
            }
            Problem::Pss => {
                for variant in config.swept_variants() {
                    let setup = config.compressible_setup(pattern, variant)?;
                    let alphas = config.sweep.alphas.clone();
                    let name = format!("compare-{}-{}.csv", pattern.name(), variant.name());
                    jobs.push((name, Box::new(move || compressible_table(&setup, &alphas))));
                }
            }
        }
    }
    let tables: Vec<ErrorTable> = with_workers(config.workers, || {
        jobs.par_iter().map(|(name, job)| job().map_err(|e| e.in_stage(name.clone()))).collect()
    })?;
    let mut summary = serde_json::Map::new();
    for ((name, _), table) in jobs.iter().zip(&tables) {
        run.write(name, &table.to_csv())?;
        summary.insert(name.clone(), table_summary(table));
    }
    run.finish("compare", Value::Object(summary))
}

/// Basic-profile indices of both scales plus the transient relaxation series.
pub fn pi(config: &RunConfig, out: &Path) -> Result<Manifest> {
    let mut run = Run::new(config, out)?;
    let setup = config.transient_setup()?;
    let (steady, series) = with_workers(config.workers, || Ok((run_compressible(&setup.base)?, run_transient(&setup)?)))?;
    let mut csv = String::from("scale,rate,drawdown,index\n");
    for (name, r) in [("fine", steady.fine_pi), ("coarse", steady.coarse_pi)] {
        let _ = writeln!(csv, "{name},{:e},{:e},{:e}", r.rate, r.drawdown, r.index);
    }
    run.write("pi.csv", &csv)?;
    run.write("transient.csv", &series.to_csv())?;
    let last = series.times.len() - 1;
    let summary = json!({
        "fine_pi": steady.fine_pi.index,
        "coarse_pi": steady.coarse_pi.index,
        "pi_error": steady.pi_error,
        "velocity_error": steady.velocity_error,
        "clamped_cells": steady.coverage.clamped,
        "final_fine_gap": (series.fine_pi[last] - series.fine_pss_pi).abs() / series.fine_pss_pi,
        "final_scale_gap": (series.fine_pi[last] - series.coarse_pi[last]).abs() / series.fine_pi[last],
    });
    run.finish("pi", summary)
}

/// One layer of a stack file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerSpec {
    thickness: f64,
    k: f64,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    terms: Option<Vec<Term>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StackFile {
    layer: Vec<LayerSpec>,
}

/// Parses a TOML stack: `[[layer]]` tables with `thickness`, `k` and either `beta` or `terms`.
pub fn parse_stack(text: &str) -> Result<LayerStack> {
    let file: StackFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let layers = file
        .layer
        .into_iter()
        .map(|l| {
            let law = match (l.beta, l.terms) {
                (Some(_), Some(_)) => return Err(Error::Config("a layer takes beta or terms, not both".into())),
                (Some(b), None) => GPolynomial::two_term(b)?,
                (None, Some(t)) => GPolynomial::new(t)?,
                (None, None) => GPolynomial::darcy(),
            };
            Ok(Layer::new(l.thickness, l.k, law))
        })
        .collect::<Result<_>>()?;
    LayerStack::new(layers)
}

/// What to evaluate besides the permeabilities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayeredQuery {
    None,
    /// Mean pressure-gradient magnitude.
    Gradient(f64),
    /// Flux through a perpendicular stack of the given length.
    Flux { q: f64, length: f64 },
}

/// Closed-form results for a stack, one `name = value` line each.
pub fn layered(stack: &LayerStack, query: LayeredQuery) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "kstar_parallel = {}", stack.kstar_parallel());
    let _ = writeln!(s, "kstar_perpendicular = {}", stack.kstar_perpendicular());
    let two_term = stack.layers().iter().all(|l| l.law.two_term_beta().is_some() || l.law.is_darcy());
    let exponents_shared = stack.exponents().is_ok();
    if exponents_shared {
        let a: Vec<String> = stack.astar_perpendicular()?.iter().map(|t| format!("{}*s^{}", t.a, t.alpha)).collect();
        let _ = writeln!(s, "gpoly_perpendicular = 1 + {}", if a.is_empty() { "0".into() } else { a.join(" + ") });
    }
    if two_term && exponents_shared {
        let (small, large) = stack.betastar_limits()?;
        let _ = writeln!(s, "betastar_small_gradient_limit = {small}");
        let _ = writeln!(s, "betastar_large_gradient_limit = {large}");
    }
    match query {
        LayeredQuery::None => {}
        LayeredQuery::Gradient(xi) => {
            let _ = writeln!(s, "xi = {xi}");
            let _ = writeln!(s, "gstar_parallel = {}", stack.gstar_parallel(xi)?);
            let flow = stack.gpoly_parallel(xi)?;
            let _ = writeln!(s, "velocity_parallel = {}", flow.velocity);
            if two_term && exponents_shared {
                let _ = writeln!(s, "betastar_parallel = {}", stack.betastar_parallel(xi)?);
            }
            let _ = writeln!(s, "gstar_perpendicular = {}", stack.gstar_perpendicular_at_gradient(xi)?);
        }
        LayeredQuery::Flux { q, length } => {
            let flow = stack.gstar_perpendicular(q, length)?;
            let _ = writeln!(s, "q = {q}");
            let _ = writeln!(s, "gstar_perpendicular = {}", flow.gstar);
            let g: Vec<String> = flow.layer_gradient.iter().map(|g| g.to_string()).collect();
            let _ = writeln!(s, "layer_gradients = {}", g.join(","));
        }
    }
    Ok(s)
}

/// Output directory: the flag, else the config, else `out`.
pub fn output_dir(flag: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.or_else(|| config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}
