//! End-to-end acceptance checks at desk scale. Each test writes one
//! `acceptance N ...: PASS|FAIL` line straight to stdout so the verdicts show
//! up without `--nocapture`.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use forchup::config::{LawKind, RunConfig};
use forchup::diagnostics::{pi_pss, pi_transient, solve_basic_profile, solve_pss_transient};
use forchup::experiments::{
    compressible_table, max_block_gradient, run_compressible, run_incompressible, run_transient,
    table_for, ErrorTable,
};
use forchup::fem::{BoundarySpec, BoundaryValue, Discretization, Tensor2};
use forchup::forchheimer::{mobility_two_term, GPolynomial, Term};
use forchup::grid::{BlockPartition, Pattern, StructuredGrid};
use forchup::solver::{solve_steady, CellLaw, FlowModel, MobilityModel, PicardOptions, TransientOptions};
use forchup::upscaling::{build_gstar_table, StopReason, upscale_all_blocks, BlockData, TableControls, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Cross errors of the perpendicular formulas on a two-value horizontal stack
/// at β ratios 1, 10 and 100.
const REFERENCE_CROSS_ERRORS: [f64; 3] = [5.36e-4, 2.36e-3, 1.7e-2];

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!("acceptance {n:>2} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn desk(name: &str) -> RunConfig {
    RunConfig::preset(name).unwrap()
}

fn driven_table(pattern: Pattern) -> ErrorTable {
    let c = desk("driven-desk");
    run_incompressible(&c.incompressible_setup(pattern, 1.0).unwrap()).unwrap()
}

fn horizontal_table() -> &'static ErrorTable {
    static T: OnceLock<ErrorTable> = OnceLock::new();
    T.get_or_init(|| driven_table(Pattern::HorizontalStratified))
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ")
}

#[test]
fn acceptance_01_inversion_round_trip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_inv, mut worst_two) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=3);
        let mut alphas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        let terms = alphas.iter().map(|&alpha| Term { a: rng.gen_range(0.0..5.0), alpha }).collect();
        let g = GPolynomial::new(terms).unwrap();
        let s = 10f64.powf(rng.gen_range(-6.0..6.0));
        let back = g.invert_h(g.h(s).unwrap()).unwrap();
        worst_inv = worst_inv.max((back - s).abs() / s);

        let beta = 10f64.powf(rng.gen_range(-4.0..2.0));
        let xi = 10f64.powf(rng.gen_range(-6.0..6.0));
        let closed = mobility_two_term(xi, beta).unwrap();
        let general = GPolynomial::two_term(beta).unwrap().mobility(xi).unwrap();
        worst_two = worst_two.max((closed - general).abs() / closed);
    }
    let elapsed = start.elapsed();
    let pass = worst_inv <= 1e-10 && worst_two <= 1e-12 && elapsed < Duration::from_secs(10);
    verdict(1, "inversion", pass, &format!("round trip {worst_inv:.1e}, two-term {worst_two:.1e}, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn acceptance_02_parallel_layers_exact() {
    let t = horizontal_table();
    let num = t.row("numerical").unwrap();
    let par = t.row("parallel").unwrap();
    let pass = num.iter().chain(par).all(|e| *e <= 1e-6);
    verdict(2, "parallel layers", pass, &format!("numerical [{}], parallel [{}]", fmt(num), fmt(par)));
    assert!(pass);
}

#[test]
fn acceptance_03_perpendicular_formula_cross_error() {
    let t = horizontal_table();
    let perp = &t.row("perpendicular").unwrap()[1..];
    let increasing = perp.windows(2).all(|w| w[1] > w[0]);
    let near = perp.iter().zip(REFERENCE_CROSS_ERRORS).all(|(e, r)| *e > r / 5.0 && *e < r * 5.0);
    let pass = perp.iter().all(|e| *e > 0.0) && increasing && near;
    verdict(3, "cross error", pass, &format!("perpendicular [{}]", fmt(perp)));
    assert!(pass);
}

#[test]
fn acceptance_04_perpendicular_layers_exact() {
    let t = driven_table(Pattern::VerticalStratified);
    let num = t.row("numerical").unwrap();
    let perp = t.row("perpendicular").unwrap();
    let par = t.row("parallel").unwrap();
    let exact = num.iter().chain(perp).all(|e| *e <= 1e-6);
    let cross = par[1..].iter().all(|e| *e > 0.0 && *e < 1e-2);
    let pass = exact && cross;
    verdict(
        4,
        "perpendicular layers",
        pass,
        &format!("numerical [{}], perpendicular [{}], parallel [{}]", fmt(num), fmt(perp), fmt(par)),
    );
    assert!(pass);
}

#[test]
fn acceptance_05_gstar_tables() {
    let g = StructuredGrid::new(20, 20, 1.0, 1.0).unwrap();
    let picard = PicardOptions::default();
    let mut c = desk("pss-desk");
    c.grid.nx = 40;
    c.grid.ny = 40;
    c.field.layers = 8;
    let mut problems = Vec::new();
    let mut slowest = Duration::ZERO;
    let mut sizes = Vec::new();
    for pattern in Pattern::ALL {
        // tables sized to the fine basic profile, as `upscale` does
        let setup = c.compressible_setup(pattern, Variant::I).unwrap();
        let fine = setup.fine_model().unwrap();
        let profile =
            solve_basic_profile(&fine.flow_model().unwrap(), setup.rate, setup.gamma, setup.well, 0.0, &picard).unwrap();
        let partition = setup.partition().unwrap();
        let top = max_block_gradient(&profile.solution, &partition).unwrap();
        let controls = table_for(&setup.table, top, &[]);
        for blk in 0..partition.num_blocks() {
            let n = format!("{} block {blk}", pattern.name());
            let start = Instant::now();
            let t = build_gstar_table(&fine.block(&partition, blk), &controls, &picard).unwrap();
            slowest = slowest.max(start.elapsed());
            sizes.push(t.levels.len());
            if t.stop == StopReason::LevelCap {
                problems.push(format!("{n}: hit the level cap"));
            }
            if t.value_at(t.n(), 0) != 1.0 || t.eval([0.0, 0.0]).unwrap() != 1.0 {
                problems.push(format!("{n}: value at the origin"));
            }
            if !t.values.iter().all(|&v| v > 0.0 && v <= 1.0) {
                problems.push(format!("{n}: values outside (0, 1]"));
            }
            if !t.diagonal().windows(2).all(|w| w[1] <= w[0]) {
                problems.push(format!("{n}: diagonal increases"));
            }
            let axis = t.axis();
            for &y in &t.levels {
                for &x in &axis {
                    if t.eval([x, y]).unwrap() != t.eval([-x, -y]).unwrap() {
                        problems.push(format!("{n}: asymmetric at ({x}, {y})"));
                    }
                }
            }
        }
    }
    let (k, beta) = (2.0, 0.7);
    let uniform = BlockData::uniform(g, k, 0.1, CellLaw::TwoTerm(vec![beta; 400])).unwrap();
    let controls = TableControls { eta_max: Some(4.0), ..TableControls::default() };
    let t = build_gstar_table(&uniform, &controls, &picard).unwrap();
    let axis = t.axis();
    let mut worst = 0.0f64;
    for (j, &y) in t.levels.iter().enumerate() {
        for (i, &x) in axis.iter().enumerate() {
            let expect = mobility_two_term(k * x.hypot(y), beta).unwrap();
            worst = worst.max((t.value_at(i, j) - expect).abs());
        }
    }
    if worst > 1e-6 {
        problems.push(format!("homogeneous block off the closed form by {worst:.1e}"));
    }
    let pass = problems.is_empty() && slowest < Duration::from_secs(10);
    verdict(
        5,
        "G* tables",
        pass,
        &format!("levels {sizes:?}, homogeneous error {worst:.1e}, slowest block {slowest:.2?} {problems:?}"),
    );
    assert!(pass);
}

#[test]
fn acceptance_06_random_field() {
    let c = desk("driven-desk");
    let tables: Vec<(f64, ErrorTable)> = [0.1, 1.0, 10.0]
        .into_par_iter()
        .map(|a| (a, run_incompressible(&c.incompressible_setup(Pattern::Random, a).unwrap()).unwrap()))
        .collect();
    let mut pass = true;
    let mut detail = Vec::new();
    for (aspect, t) in &tables {
        let num = t.row("numerical").unwrap();
        let darcy: Vec<f64> = t.rows.iter().map(|(_, r)| r[0]).collect();
        let same = darcy.iter().all(|e| (e - darcy[0]).abs() <= 1e-14);
        pass &= num.iter().all(|e| *e < 5e-2) && same;
        detail.push(format!("aspect {aspect}: numerical [{}] darcy shared {same}", fmt(num)));
    }
    verdict(6, "random field", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn acceptance_07_compressible_suite() {
    let c = desk("pss-desk");
    let mut worst = (0.0f64, String::new());
    let mut failures = Vec::new();
    for pattern in Pattern::ALL {
        let base = c.compressible_setup(pattern, c.upscale.variant).unwrap();
        let t = compressible_table(&base, &c.sweep.alphas).unwrap();
        for (law, row) in &t.rows {
            for (col, e) in t.columns.iter().zip(row) {
                let label = format!("{} {law} {col}", pattern.name());
                if *e > worst.0 {
                    worst = (*e, label.clone());
                }
                if !(*e < 5e-2) {
                    failures.push(format!("{label} = {e:.3e}"));
                }
            }
        }
    }
    let pass = failures.is_empty();
    verdict(7, "compressible suite", pass, &format!("worst {:.3e} at {}; over bound: {failures:?}", worst.0, worst.1));
    assert!(pass, "{failures:?}");
}

#[test]
fn acceptance_08_pss_invariance() {
    let c = desk("pss-desk");
    let setup = c.compressible_setup(Pattern::Random, Variant::I).unwrap();
    let picard = PicardOptions { tol: 1e-12, max_iter: 200 };
    let (q, gamma) = (setup.rate, 1.0);
    let model = setup.fine_model().unwrap().flow_model().unwrap();
    let w = solve_basic_profile(&model, q, gamma, setup.well, 0.0, &picard).unwrap();
    let opts = TransientOptions { dt: 0.01, t_end: 0.05, gamma, picard };
    let (disc, sol) = solve_pss_transient(&model, q, setup.well, &w.solution.pressure, &opts).unwrap();
    let rate = -gamma * q / model.grid.area();
    let mut worst_rate = 0.0f64;
    for pair in sol.states.windows(2) {
        for (a, b) in pair[0].pressure.iter().zip(&pair[1].pressure) {
            worst_rate = worst_rate.max(((b - a) / opts.dt - rate).abs() / rate.abs());
        }
    }
    let j = pi_pss(&w).unwrap().index;
    let worst_j = pi_transient(&disc, &sol, &|_| q, setup.well)
        .unwrap()
        .iter()
        .map(|r| (r.index - j).abs() / j)
        .fold(0.0, f64::max);
    let pass = worst_rate <= 1e-6 && worst_j <= 1e-6;
    verdict(8, "PSS invariance", pass, &format!("rate {worst_rate:.1e}, index {worst_j:.1e}"));
    assert!(pass);
}

#[test]
fn acceptance_09_transient_attraction() {
    let c = desk("pss-desk");
    let s = run_transient(&c.transient_setup().unwrap()).unwrap();
    let last = s.times.len() - 1;
    let decay = s.fine_distance[last] / s.fine_distance[0];
    let coarse_decay = s.coarse_distance[last] / s.coarse_distance[0];
    let fine_gap = (s.fine_pi[last] - s.fine_pss_pi).abs() / s.fine_pss_pi;
    let coarse_gap = (s.coarse_pi[last] - s.coarse_pss_pi).abs() / s.coarse_pss_pi;
    let half = s.times[last] / 2.0;
    let scale_gap = (0..=last)
        .filter(|&n| s.times[n] >= half)
        .map(|n| (s.fine_pi[n] - s.coarse_pi[n]).abs() / s.fine_pi[n])
        .fold(0.0, f64::max);
    let pass = decay < 1e-2 && coarse_decay < 1e-2 && fine_gap < 1e-2 && coarse_gap < 1e-2 && scale_gap < 5e-2;
    verdict(
        9,
        "transient attraction",
        pass,
        &format!(
            "distance ratio fine {decay:.1e} coarse {coarse_decay:.1e}, pss gap fine {fine_gap:.1e} coarse {coarse_gap:.1e}, fine vs coarse {scale_gap:.2e}"
        ),
    );
    assert!(pass);
}

/// Face fluxes of `−∇·(K∇p) = f` with `p = 0` on the block boundary.
fn face_fluxes(grid: StructuredGrid, coef: Vec<Tensor2>, source: &[f64]) -> [f64; 4] {
    let disc = Discretization::new(grid, BoundarySpec::dirichlet_all(BoundaryValue::constant(0.0))).unwrap();
    let model = FlowModel {
        grid,
        porosity: vec![1.0; grid.num_cells()],
        mobility: MobilityModel::Fine(CellLaw::Darcy),
        coef,
    };
    let s = solve_steady(&disc, &model, Some(source), &PicardOptions::default(), None).unwrap();
    disc.face_fluxes(&model.coef, Some(source), &s.pressure)
}

#[test]
fn acceptance_10_variants() {
    let c = desk("pss-desk");
    let cases: Vec<(Pattern, Variant, bool)> = Pattern::ALL
        .into_iter()
        .flat_map(|p| Variant::ALL.into_iter().flat_map(move |v| [(p, v, false), (p, v, true)]))
        .collect();
    let results: Vec<_> = cases
        .par_iter()
        .map(|&(p, v, forchheimer)| {
            let setup = forchup::experiments::CompressibleSetup {
                forchheimer,
                ..c.compressible_setup(p, v).unwrap()
            };
            run_compressible(&setup)
        })
        .collect();
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for ((p, v, f), r) in cases.iter().zip(&results) {
        match r {
            Ok(r) => lines.push(format!("{} {} {}: {:.2e}", p.name(), v.name(), if *f { "two-term" } else { "darcy" }, r.pi_error)),
            Err(e) => failures.push(format!("{} {} failed: {e}", p.name(), v.name())),
        }
    }
    let pi = |v: Variant| {
        let n = cases.iter().position(|&(p, vv, f)| p == Pattern::VerticalStratified && vv == v && !f).unwrap();
        results[n].as_ref().map(|r| r.pi_error).unwrap_or(f64::NAN)
    };
    let (first, fourth) = (pi(Variant::I), pi(Variant::Iv));
    if !(fourth <= first) {
        failures.push(format!("vertical darcy: iv {fourth:.3e} > i {first:.3e}"));
    }

    // the matched fluxes do not involve the mobility
    let mut c = c;
    c.law.kind = LawKind::Darcy;
    let model = c.fine_model().unwrap();
    let partition = BlockPartition::new(model.grid(), c.grid.mx, c.grid.my).unwrap();
    let mut worst_flux = 0.0f64;
    for variant in [Variant::Iii, Variant::Iv] {
        let opts = forchup::upscaling::UpscaleOptions { variant, ..c.upscale_options() };
        let coarse = upscale_all_blocks(&model, &partition, &opts).unwrap();
        for (b, params) in coarse.blocks.iter().enumerate() {
            let block = model.block(&partition, b);
            if params.diagnostics.phi_fallback {
                failures.push(format!("block {b} fell back to a constant porosity"));
                continue;
            }
            let fine = face_fluxes(block.grid, block.k.iter().map(|&k| Tensor2::scalar(k)).collect(), &block.phi);
            let centers: Vec<[f64; 2]> = block.grid.cell_centers().collect();
            let coef = centers.iter().map(|&x| params.kstar_at(x)).collect();
            let source: Vec<f64> = centers.iter().map(|&x| params.phistar_at(x)).collect();
            let matched = face_fluxes(block.grid, coef, &source);
            let scale = fine.iter().map(|f| f.abs()).fold(0.0, f64::max);
            for (a, b) in fine.iter().zip(&matched) {
                worst_flux = worst_flux.max((a - b).abs() / scale);
            }
        }
    }
    if worst_flux > 1e-8 {
        failures.push(format!("face fluxes differ by {worst_flux:.1e}"));
    }
    let pass = failures.is_empty();
    verdict(
        10,
        "variants",
        pass,
        &format!("vertical darcy i {first:.2e} iv {fourth:.2e}, face flux {worst_flux:.1e}, {} runs {failures:?}", lines.len()),
    );
    assert!(pass, "{failures:?}\n{}", lines.join("\n"));
}
