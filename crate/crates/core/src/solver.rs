//! Pressure solves: linear, nonlinear steady (Picard) and implicit Euler transient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{BoundarySpec, Discretization, MassTerm, Tensor2};
use crate::forchheimer::{mobility_two_term, GPolynomial};
use crate::grid::{ScalarField, StructuredGrid};
use crate::linalg::norm2;
use crate::upscaling::BlockMobility;

/// Per-cell Forchheimer law of a fine model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "law", content = "cells")]
pub enum CellLaw {
    Darcy,
    /// Two-term law with one `β` per cell.
    TwoTerm(Vec<f64>),
    General(Vec<GPolynomial>),
}

impl CellLaw {
    pub fn two_term(beta: &ScalarField) -> Self {
        CellLaw::TwoTerm(beta.values.clone())
    }

    pub fn is_darcy(&self) -> bool {
        match self {
            CellLaw::Darcy => true,
            CellLaw::TwoTerm(b) => b.iter().all(|&v| v == 0.0),
            CellLaw::General(p) => p.iter().all(GPolynomial::is_darcy),
        }
    }

    pub fn mobility(&self, cell: usize, xi: f64) -> Result<f64> {
        match self {
            CellLaw::Darcy => Ok(1.0),
            CellLaw::TwoTerm(b) => mobility_two_term(xi, b[cell]),
            CellLaw::General(p) => p[cell].mobility_fast(xi),
        }
    }

    pub fn poly(&self, cell: usize) -> GPolynomial {
        match self {
            CellLaw::Darcy => GPolynomial::darcy(),
            CellLaw::TwoTerm(b) => GPolynomial::two_term(b[cell]).expect("validated beta"),
            CellLaw::General(p) => p[cell].clone(),
        }
    }

    pub fn subset(&self, cells: &[usize]) -> CellLaw {
        match self {
            CellLaw::Darcy => CellLaw::Darcy,
            CellLaw::TwoTerm(b) => CellLaw::TwoTerm(cells.iter().map(|&c| b[c]).collect()),
            CellLaw::General(p) => CellLaw::General(cells.iter().map(|&c| p[c].clone()).collect()),
        }
    }

    /// Largest nonlinear coefficient over all cells and terms.
    pub fn max_coefficient(&self) -> f64 {
        match self {
            CellLaw::Darcy => 0.0,
            CellLaw::TwoTerm(b) => b.iter().copied().fold(0.0, f64::max),
            CellLaw::General(p) => p
                .iter()
                .flat_map(|q| q.terms().iter().map(|t| t.a))
                .fold(0.0, f64::max),
        }
    }

    /// Stable byte representation of the cell laws, for block deduplication.
    pub(crate) fn fingerprint(&self, out: &mut Vec<u8>) {
        match self {
            CellLaw::Darcy => out.push(0),
            CellLaw::TwoTerm(b) => {
                out.push(1);
                b.iter().for_each(|v| out.extend(v.to_bits().to_le_bytes()));
            }
            CellLaw::General(p) => {
                out.push(2);
                for q in p {
                    out.extend((q.terms().len() as u64).to_le_bytes());
                    for t in q.terms() {
                        out.extend(t.a.to_bits().to_le_bytes());
                        out.extend(t.alpha.to_bits().to_le_bytes());
                    }
                }
            }
        }
    }

    pub fn validate(&self, cells: usize) -> Result<()> {
        let n = match self {
            CellLaw::Darcy => return Ok(()),
            CellLaw::TwoTerm(b) => {
                if let Some(v) = b.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                    return Err(Error::Invalid(format!("Forchheimer coefficient {v} must be nonnegative")));
                }
                b.len()
            }
            CellLaw::General(p) => p.len(),
        };
        if n != cells {
            return Err(Error::Invalid(format!("{n} cell laws for {cells} cells")));
        }
        Ok(())
    }
}

/// Nonlinear mobility of a model, evaluated per cell at the cell gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MobilityModel {
    /// `G(‖K∇p‖)` from the cell's own law.
    Fine(CellLaw),
    /// `G*(∇p)` of the coarse block each cell belongs to.
    Blocks { cell_block: Vec<usize>, blocks: Vec<BlockMobility> },
}

impl MobilityModel {
    pub fn is_linear(&self) -> bool {
        match self {
            MobilityModel::Fine(law) => law.is_darcy(),
            MobilityModel::Blocks { blocks, .. } => blocks.iter().all(BlockMobility::is_unit),
        }
    }

    pub fn eval(&self, cell: usize, coef: &Tensor2, grad: [f64; 2]) -> Result<f64> {
        match self {
            MobilityModel::Fine(law) => {
                let kg = coef.apply(grad);
                law.mobility(cell, (kg[0] * kg[0] + kg[1] * kg[1]).sqrt())
            }
            MobilityModel::Blocks { cell_block, blocks } => blocks[cell_block[cell]].eval(grad),
        }
    }
}

/// Coefficients of a flow problem on one grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub grid: StructuredGrid,
    pub coef: Vec<Tensor2>,
    pub porosity: Vec<f64>,
    pub mobility: MobilityModel,
}

impl FlowModel {
    /// Fine model with scalar permeability.
    pub fn fine(k: &ScalarField, phi: &ScalarField, law: CellLaw) -> Result<Self> {
        k.require_positive("permeability")?;
        phi.require_positive("porosity")?;
        if !k.grid.same_shape(&phi.grid) {
            return Err(Error::Invalid("permeability and porosity grids differ".into()));
        }
        law.validate(k.grid.num_cells())?;
        Ok(Self {
            grid: k.grid,
            coef: k.values.iter().map(|&v| Tensor2::scalar(v)).collect(),
            porosity: phi.values.clone(),
            mobility: MobilityModel::Fine(law),
        })
    }

    /// Scalar permeability of each cell, when the model is isotropic.
    pub fn scalar_permeability(&self) -> Option<Vec<f64>> {
        self.coef
            .iter()
            .map(|t| {
                let m = t.0;
                (m[0][1] == 0.0 && m[1][0] == 0.0 && m[0][0] == m[1][1]).then_some(m[0][0])
            })
            .collect()
    }

    pub fn mean_porosity(&self) -> f64 {
        self.porosity.iter().sum::<f64>() / self.porosity.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    /// Relative update `‖p^{m+1} − p^m‖ / ‖p^m‖` that stops the iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

/// Nodal pressure with cell-centre gradients and velocities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PressureSolution {
    pub grid: StructuredGrid,
    pub pressure: Vec<f64>,
    pub gradient: Vec<[f64; 2]>,
    pub velocity: Vec<[f64; 2]>,
    pub mobility: Vec<f64>,
    pub iterations: usize,
    /// Relative update of every Picard iteration.
    pub updates: Vec<f64>,
}

impl PressureSolution {
    pub fn average_velocity(&self) -> [f64; 2] {
        average_velocity(&self.velocity, None).expect("nonempty grid")
    }

    pub fn average_gradient(&self) -> [f64; 2] {
        average_velocity(&self.gradient, None).expect("nonempty grid")
    }

    pub fn final_update(&self) -> f64 {
        self.updates.last().copied().unwrap_or(0.0)
    }
}

/// `u = −G K ∇p` per cell.
pub fn cell_velocity(
    gradient: &[[f64; 2]],
    coef: &[Tensor2],
    mobility: &MobilityModel,
) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let mut u = Vec::with_capacity(gradient.len());
    let mut g = Vec::with_capacity(gradient.len());
    for (c, (grad, k)) in gradient.iter().zip(coef).enumerate() {
        let m = mobility.eval(c, k, *grad)?;
        let kg = k.apply(*grad);
        u.push([-m * kg[0], -m * kg[1]]);
        g.push(m);
    }
    Ok((u, g))
}

/// Mean of per-cell vectors over `region` (all cells when `None`); cells have equal area.
pub fn average_velocity(u: &[[f64; 2]], region: Option<&[usize]>) -> Result<[f64; 2]> {
    let mut s = [0.0, 0.0];
    let n = match region {
        Some(cells) => {
            for &c in cells {
                s[0] += u[c][0];
                s[1] += u[c][1];
            }
            cells.len()
        }
        None => {
            for v in u {
                s[0] += v[0];
                s[1] += v[1];
            }
            u.len()
        }
    };
    if n == 0 {
        return Err(Error::Invalid("average over an empty region".into()));
    }
    Ok([s[0] / n as f64, s[1] / n as f64])
}

/// Linear solve with the coefficient tensors as given.
pub fn solve_linear_elliptic(
    grid: StructuredGrid,
    coef: &[Tensor2],
    bc: BoundarySpec,
    source: Option<&[f64]>,
) -> Result<PressureSolution> {
    let disc = Discretization::new(grid, bc)?;
    let model = FlowModel {
        grid,
        coef: coef.to_vec(),
        porosity: vec![1.0; grid.num_cells()],
        mobility: MobilityModel::Fine(CellLaw::Darcy),
    };
    solve_steady(&disc, &model, source, &PicardOptions::default(), None)
}

fn relative_update(new: &[f64], old: &[f64]) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let base = norm2(old);
    if base > 0.0 {
        diff / base
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

struct Step<'a> {
    disc: &'a Discretization,
    model: &'a FlowModel,
    source: Option<&'a [f64]>,
    mass: Option<MassTerm<'a>>,
    load_factor: f64,
}

impl Step<'_> {
    fn solve_frozen(&self, gradient: &[[f64; 2]]) -> Result<Vec<f64>> {
        let coef: Vec<Tensor2> = if self.model.mobility.is_linear() {
            self.model.coef.clone()
        } else {
            let mut c = Vec::with_capacity(self.model.coef.len());
            for (cell, (k, g)) in self.model.coef.iter().zip(gradient).enumerate() {
                c.push(k.scaled(self.model.mobility.eval(cell, k, *g)?));
            }
            c
        };
        let sys = self.disc.assemble(&coef, self.source, self.mass.as_ref(), self.load_factor);
        self.disc.solve_system(sys, self.disc.needs_pin(self.mass.is_some()))
    }

    fn picard(&self, initial: Vec<f64>, opts: &PicardOptions) -> Result<PressureSolution> {
        let mut p = initial;
        let mut updates = Vec::new();
        let linear = self.model.mobility.is_linear();
        let mut iterations = 0;
        loop {
            let grad = self.disc.gradients(&p);
            let next = self.solve_frozen(&grad)?;
            iterations += 1;
            if linear {
                p = next;
                break;
            }
            let upd = relative_update(&next, &p);
            updates.push(upd);
            p = next;
            if upd <= opts.tol {
                break;
            }
            if iterations >= opts.max_iter {
                return Err(Error::MaxIterationsExceeded { iterations, last_update: upd });
            }
        }
        let gradient = self.disc.gradients(&p);
        let (velocity, mobility) = cell_velocity(&gradient, &self.model.coef, &self.model.mobility)?;
        Ok(PressureSolution {
            grid: self.disc.grid,
            pressure: p,
            gradient,
            velocity,
            mobility,
            iterations,
            updates,
        })
    }
}

/// Steady solve of `−∇·(G K ∇p) = f` with frozen-mobility Picard iteration.
///
/// Starts from `initial` (nodal values) or from zero in the free unknowns.
pub fn solve_steady(
    disc: &Discretization,
    model: &FlowModel,
    source: Option<&[f64]>,
    opts: &PicardOptions,
    initial: Option<&[f64]>,
) -> Result<PressureSolution> {
    if !disc.grid.same_shape(&model.grid) {
        return Err(Error::Invalid("model and discretization grids differ".into()));
    }
    let start = match initial {
        Some(p) => disc.dofs.nodal(&disc.dofs.restrict(p)),
        None => disc.dofs.nodal(&vec![0.0; disc.ndof()]),
    };
    Step { disc, model, source, mass: None, load_factor: 1.0 }.picard(start, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransientOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Fluid compressibility multiplying the accumulation term.
    pub gamma: f64,
    #[serde(default)]
    pub picard: PicardOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransientSolution {
    pub times: Vec<f64>,
    pub states: Vec<PressureSolution>,
    pub dt: f64,
    pub gamma: f64,
}

/// Implicit Euler for `γ φ ∂p/∂t = ∇·(G K ∇p)` with consistent mass.
///
/// Boundary fluxes and well rates in `disc.bc` are scaled by `rate(t)`.
pub fn solve_transient(
    disc: &Discretization,
    model: &FlowModel,
    initial: &[f64],
    opts: &TransientOptions,
    rate: &dyn Fn(f64) -> f64,
) -> Result<TransientSolution> {
    if !(opts.dt > 0.0) || !(opts.t_end > 0.0) || !opts.dt.is_finite() {
        return Err(Error::Invalid(format!("invalid time grid dt = {}, T = {}", opts.dt, opts.t_end)));
    }
    if !(opts.gamma > 0.0) {
        return Err(Error::Invalid(format!("compressibility {} must be positive", opts.gamma)));
    }
    if model.porosity.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("porosity must be positive".into()));
    }
    let steps = (opts.t_end / opts.dt - 1e-9).ceil().max(1.0) as usize;
    let p0 = disc.dofs.nodal(&disc.dofs.restrict(initial));
    let gradient = disc.gradients(&p0);
    let (velocity, mobility) = cell_velocity(&gradient, &model.coef, &model.mobility)?;
    let mut states = vec![PressureSolution {
        grid: disc.grid,
        pressure: p0,
        gradient,
        velocity,
        mobility,
        iterations: 0,
        updates: Vec::new(),
    }];
    let mut times = vec![0.0];
    for n in 1..=steps {
        let t = n as f64 * opts.dt;
        let prev = &states.last().expect("initial state").pressure;
        let step = Step {
            disc,
            model,
            source: None,
            mass: Some(MassTerm { scale: opts.gamma / opts.dt, porosity: &model.porosity, previous: prev }),
            load_factor: rate(t),
        };
        let sol = step
            .picard(prev.clone(), &opts.picard)
            .map_err(|e| e.in_stage(format!("time step {n} (t = {t})")))?;
        states.push(sol);
        times.push(t);
    }
    Ok(TransientSolution { times, states, dt: opts.dt, gamma: opts.gamma })
}
