//! Drivers for the incompressible error tables, the compressible PI study and transient runs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    drawdown, pi_pss, pss_outflow, relative_error, solve_basic_profile, table_coverage, velocity_distance,
    velocity_error, BasicProfile, PiReport, TableCoverage,
};
use crate::error::{Error, Result};
use crate::fem::{AxisBc, BoundarySpec, Discretization, Face, FaceBc};
use crate::grid::{
    beta_from_phi_k, generate_permeability, porosity_from_k, rescale_to_range, BlockPartition, FieldSpec,
    ScalarField, StructuredGrid,
};
use crate::solver::{
    average_velocity, solve_steady, solve_transient, CellLaw, FlowModel, PicardOptions, PressureSolution,
    TransientOptions,
};
use crate::upscaling::{
    upscale_all_blocks, CoarseMethod, CoarseModel, FineModel, TableControls, UpscaleOptions, Variant,
};

/// Rows of labelled values sharing column labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ErrorTable {
    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(r, _)| r == row).map(|(_, v)| v[c])
    }

    pub fn row(&self, row: &str) -> Option<&[f64]> {
        self.rows.iter().find(|(r, _)| r == row).map(|(_, v)| v.as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# {}\nmethod,{}\n", self.title, self.columns.join(","));
        for (name, values) in &self.rows {
            let v: Vec<String> = values.iter().map(|x| format!("{x:e}")).collect();
            let _ = writeln!(s, "{name},{}", v.join(","));
        }
        s
    }
}

/// Column label of a nonlinearity ratio; zero stands for Darcy flow.
pub fn ratio_label(ratio: f64) -> String {
    if ratio == 0.0 {
        "beta=0".into()
    } else {
        format!("ratio={ratio}")
    }
}

/// Two-term coefficients following the permeability pattern on `[β_min, β_min(1 + ratio)]`.
pub fn beta_following_k(k: &ScalarField, beta_min: f64, ratio: f64) -> ScalarField {
    rescale_to_range(k, beta_min, ratio)
}

/// Pressure 0 on the left and 1 on the right, no flow through top and bottom.
pub fn incompressible_bc() -> BoundarySpec {
    BoundarySpec {
        x: AxisBc::Faces { low: FaceBc::dirichlet(0.0), high: FaceBc::dirichlet(1.0) },
        y: AxisBc::Faces { low: FaceBc::NO_FLUX, high: FaceBc::NO_FLUX },
    }
}

/// Largest component of the block-averaged gradients of a fine solution.
pub fn max_block_gradient(solution: &PressureSolution, partition: &BlockPartition) -> Result<f64> {
    let mut m: f64 = 0.0;
    for b in 0..partition.num_blocks() {
        let g = average_velocity(&solution.gradient, Some(&partition.block_cell_indices(b)))?;
        m = m.max(g[0].abs()).max(g[1].abs());
    }
    Ok(m)
}

/// Adds `anchors` and, when unset, sizes the largest table level to the expected coarse gradients.
pub fn table_for(base: &TableControls, max_gradient: f64, anchors: &[f64]) -> TableControls {
    let mut t = base.clone();
    t.anchors.extend_from_slice(anchors);
    if t.eta_max.is_none() {
        let top = anchors.iter().copied().fold(max_gradient, f64::max);
        t.eta_max = Some(1.5 * top);
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncompressibleSetup {
    pub fine: StructuredGrid,
    pub mx: usize,
    pub my: usize,
    pub field: FieldSpec,
    pub beta_min: f64,
    /// Spread `Δβ/β_min` per column; zero is the Darcy column.
    pub ratios: Vec<f64>,
    pub table: TableControls,
    pub picard: PicardOptions,
    /// Coarse cells per block used for the coarse solve.
    pub refine: usize,
    pub workers: Option<usize>,
}

/// Velocity errors of each coarse method under the driven left-to-right flow.
pub fn run_incompressible(setup: &IncompressibleSetup) -> Result<ErrorTable> {
    let k = generate_permeability(&setup.fine, &setup.field)?;
    let phi = ScalarField::constant(setup.fine, 0.2);
    let partition = BlockPartition::new(setup.fine, setup.mx, setup.my)?;
    let nominal = 1.0 / setup.fine.lx;
    let columns: Vec<Vec<f64>> = setup
        .ratios
        .par_iter()
        .map(|&ratio| -> Result<Vec<f64>> {
            let law = if ratio == 0.0 {
                CellLaw::Darcy
            } else {
                CellLaw::two_term(&beta_following_k(&k, setup.beta_min, ratio))
            };
            let fine = FineModel::new(k.clone(), phi.clone(), law)?;
            let disc = Discretization::new(setup.fine, incompressible_bc())?;
            let fine_sol = solve_steady(&disc, &fine.flow_model()?, None, &setup.picard, None)
                .map_err(|e| e.in_stage(format!("fine solve, {}", ratio_label(ratio))))?;
            let u = fine_sol.average_velocity();
            let table = table_for(&setup.table, max_block_gradient(&fine_sol, &partition)?, &[nominal]);
            CoarseMethod::ALL
                .iter()
                .map(|&method| {
                    let opts = UpscaleOptions {
                        variant: Variant::I,
                        method,
                        table: table.clone(),
                        picard: setup.picard,
                        workers: setup.workers,
                    };
                    let stage = format!("{} upscaling, {}", method.name(), ratio_label(ratio));
                    let coarse = upscale_all_blocks(&fine, &partition, &opts).map_err(|e| e.in_stage(stage.clone()))?;
                    let model = coarse.to_flow_model(setup.refine)?;
                    let cdisc = Discretization::new(model.grid, incompressible_bc())?;
                    let sol = solve_steady(&cdisc, &model, None, &setup.picard, None).map_err(|e| e.in_stage(stage))?;
                    velocity_error(u, sol.average_velocity())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows = CoarseMethod::ALL
        .iter()
        .enumerate()
        .map(|(m, method)| (method.name().to_string(), columns.iter().map(|c| c[m]).collect()))
        .collect();
    Ok(ErrorTable {
        title: format!("velocity errors, {} field", setup.field.pattern.name()),
        columns: setup.ratios.iter().map(|&r| ratio_label(r)).collect(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressibleSetup {
    pub fine: StructuredGrid,
    pub mx: usize,
    pub my: usize,
    pub field: FieldSpec,
    /// Porosity `scale · k^alpha`.
    pub alpha: f64,
    pub phi_scale: f64,
    /// Two-term law with `β = φ/√k` when set, Darcy otherwise.
    pub forchheimer: bool,
    pub rate: f64,
    pub gamma: f64,
    pub well: Face,
    pub variant: Variant,
    pub refine: usize,
    pub table: TableControls,
    pub picard: PicardOptions,
    pub workers: Option<usize>,
}

impl CompressibleSetup {
    pub fn fine_model(&self) -> Result<FineModel> {
        let k = generate_permeability(&self.fine, &self.field)?;
        let phi = porosity_from_k(&k, self.alpha, self.phi_scale)?;
        let law = if self.forchheimer {
            CellLaw::two_term(&beta_from_phi_k(&phi, &k)?)
        } else {
            CellLaw::Darcy
        };
        FineModel::new(k, phi, law)
    }

    pub fn partition(&self) -> Result<BlockPartition> {
        BlockPartition::new(self.fine, self.mx, self.my)
    }

    fn options(&self, table: TableControls) -> UpscaleOptions {
        UpscaleOptions {
            variant: self.variant,
            method: CoarseMethod::Numerical,
            table,
            picard: self.picard,
            workers: self.workers,
        }
    }

    /// Fine profile, then the coarse model upscaled with tables sized to it.
    pub fn build(&self) -> Result<(FineModel, BasicProfile, CoarseModel)> {
        let fine = self.fine_model()?;
        let profile = solve_basic_profile(&fine.flow_model()?, self.rate, self.gamma, self.well, 0.0, &self.picard)
            .map_err(|e| e.in_stage("fine basic profile"))?;
        let partition = self.partition()?;
        let table = table_for(&self.table, max_block_gradient(&profile.solution, &partition)?, &[]);
        let coarse = upscale_all_blocks(&fine, &partition, &self.options(table)).map_err(|e| e.in_stage("upscaling"))?;
        Ok((fine, profile, coarse))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressibleResult {
    pub fine_pi: PiReport,
    pub coarse_pi: PiReport,
    pub pi_error: f64,
    pub fine_velocity: [f64; 2],
    pub coarse_velocity: [f64; 2],
    pub velocity_error: f64,
    /// Nominal `γ⟨φ⟩Q` and the outflow realized by each discrete profile.
    pub nominal_outflow: f64,
    pub fine_outflow: f64,
    pub coarse_outflow: f64,
    pub coverage: TableCoverage,
    pub table_levels: usize,
}

/// PI and steady velocity errors of the coarse basic profile against the fine one.
pub fn run_compressible(setup: &CompressibleSetup) -> Result<CompressibleResult> {
    let (fine, profile, coarse) = setup.build()?;
    compare_profiles(setup, &fine, &profile, &coarse)
}

pub fn compare_profiles(
    setup: &CompressibleSetup,
    fine: &FineModel,
    profile: &BasicProfile,
    coarse: &CoarseModel,
) -> Result<CompressibleResult> {
    let model = coarse.to_flow_model(setup.refine)?;
    let cprofile = solve_basic_profile(&model, setup.rate, setup.gamma, setup.well, 0.0, &setup.picard)
        .map_err(|e| e.in_stage("coarse basic profile"))?;
    let (fine_pi, coarse_pi) = (pi_pss(profile)?, pi_pss(&cprofile)?);
    let (uf, uc) = (profile.solution.average_velocity(), cprofile.solution.average_velocity());
    Ok(CompressibleResult {
        fine_pi,
        coarse_pi,
        pi_error: relative_error(fine_pi.index, coarse_pi.index)?,
        fine_velocity: uf,
        coarse_velocity: uc,
        velocity_error: velocity_error(uf, uc)?,
        nominal_outflow: pss_outflow(&fine.flow_model()?, setup.rate, setup.gamma),
        fine_outflow: profile.realized_outflow,
        coarse_outflow: cprofile.realized_outflow,
        coverage: table_coverage(&model, &cprofile.solution),
        table_levels: coarse.blocks.iter().map(|b| b.diagnostics.table_levels).max().unwrap_or(0),
    })
}

/// PI and velocity errors for Darcy and two-term laws at each porosity exponent.
pub fn compressible_table(base: &CompressibleSetup, alphas: &[f64]) -> Result<ErrorTable> {
    let mut columns = Vec::new();
    for a in alphas {
        columns.push(format!("alpha={a:.4} pi"));
        columns.push(format!("alpha={a:.4} velocity"));
    }
    let cases: Vec<(bool, f64)> = [false, true].iter().flat_map(|&f| alphas.iter().map(move |&a| (f, a))).collect();
    let results: Vec<CompressibleResult> = cases
        .par_iter()
        .map(|&(forchheimer, alpha)| run_compressible(&CompressibleSetup { forchheimer, alpha, ..base.clone() }))
        .collect::<Result<_>>()?;
    let row = |f: bool| -> Vec<f64> {
        cases
            .iter()
            .zip(&results)
            .filter(|((ff, _), _)| *ff == f)
            .flat_map(|(_, r)| [r.pi_error, r.velocity_error])
            .collect()
    };
    Ok(ErrorTable {
        title: format!("PI and velocity errors, {} field, variant {}", base.field.pattern.name(), base.variant.name()),
        columns,
        rows: vec![("darcy".into(), row(false)), ("two-term".into(), row(true))],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransientSetup {
    pub base: CompressibleSetup,
    pub dt: f64,
    pub t_end: f64,
    /// Amplitude of the cosine perturbation relative to the largest profile value.
    pub perturbation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransientSeries {
    pub times: Vec<f64>,
    pub fine_pi: Vec<f64>,
    pub coarse_pi: Vec<f64>,
    pub fine_pss_pi: f64,
    pub coarse_pss_pi: f64,
    /// `∫‖u(t) − u_s‖²` on each grid.
    pub fine_distance: Vec<f64>,
    pub coarse_distance: Vec<f64>,
}

impl TransientSeries {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# pss index fine={:e} coarse={:e}\ntime,fine_pi,coarse_pi,fine_distance,coarse_distance\n",
            self.fine_pss_pi, self.coarse_pss_pi
        );
        for n in 0..self.times.len() {
            let _ = writeln!(
                s,
                "{:e},{:e},{:e},{:e},{:e}",
                self.times[n], self.fine_pi[n], self.coarse_pi[n], self.fine_distance[n], self.coarse_distance[n]
            );
        }
        s
    }
}

/// Perturbed profile `W + A cos(π (x − x₀)/L₁)` at the nodes.
fn perturbed(profile: &BasicProfile, amplitude: f64) -> Vec<f64> {
    let g = profile.solution.grid;
    (0..=g.ny)
        .flat_map(|j| (0..=g.nx).map(move |i| (i, j)))
        .map(|(i, j)| {
            let x = g.node_position(i, j)[0];
            profile.solution.pressure[g.node_index(i, j)]
                + amplitude * (std::f64::consts::PI * (x - g.x0) / g.lx).cos()
        })
        .collect()
}

/// Index and velocity distance of a run started from a perturbed basic profile.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Relaxation {
    pub times: Vec<f64>,
    pub index: Vec<f64>,
    /// `∫‖u(t) − u_s‖²`
    pub distance: Vec<f64>,
    pub pss_index: f64,
}

/// Transient run from `W + A cos(π (x − x₀)/L₁)` with the constant-rate well of `base`.
pub fn relax(
    model: &FlowModel,
    profile: &BasicProfile,
    amplitude: f64,
    base: &CompressibleSetup,
    dt: f64,
    t_end: f64,
) -> Result<Relaxation> {
    let opts = TransientOptions { dt, t_end, gamma: base.gamma, picard: base.picard };
    let bc = crate::diagnostics::pss_well_bc(base.well, pss_outflow(model, base.rate, base.gamma));
    let disc = Discretization::new(model.grid, bc)?;
    let sol = solve_transient(&disc, model, &perturbed(profile, amplitude), &opts, &|_| 1.0)?;
    let mut index = Vec::with_capacity(sol.states.len());
    let mut distance = Vec::with_capacity(sol.states.len());
    for s in &sol.states {
        index.push(PiReport::new(None, base.rate, drawdown(&disc, &s.pressure, base.well))?.index);
        distance.push(velocity_distance(s, &profile.solution)?);
    }
    Ok(Relaxation { times: sol.times, index, distance, pss_index: pi_pss(profile)?.index })
}

/// Fine and coarse transient runs from the perturbed basic profiles.
pub fn run_transient(setup: &TransientSetup) -> Result<TransientSeries> {
    let b = &setup.base;
    let (_, profile, coarse) = b.build()?;
    let amplitude = setup.perturbation * profile.solution.pressure.iter().copied().fold(0.0, f64::max);
    let fine_model = b.fine_model()?.flow_model()?;
    let coarse_model = coarse.to_flow_model(b.refine)?;
    let cprofile = solve_basic_profile(&coarse_model, b.rate, b.gamma, b.well, 0.0, &b.picard)?;
    let (fine_run, coarse_run) = rayon::join(
        || {
            relax(&fine_model, &profile, amplitude, b, setup.dt, setup.t_end).map_err(|e| e.in_stage("fine transient"))
        },
        || {
            relax(&coarse_model, &cprofile, amplitude, b, setup.dt, setup.t_end)
                .map_err(|e| e.in_stage("coarse transient"))
        },
    );
    let (fine, coarse) = (fine_run?, coarse_run?);
    if fine.times.len() != coarse.times.len() {
        return Err(Error::Invalid("fine and coarse time grids differ".into()));
    }
    Ok(TransientSeries {
        times: fine.times,
        fine_pi: fine.index,
        coarse_pi: coarse.index,
        fine_pss_pi: fine.pss_index,
        coarse_pss_pi: coarse.pss_index,
        fine_distance: fine.distance,
        coarse_distance: coarse.distance,
    })
}
