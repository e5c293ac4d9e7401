//! Pseudo-steady-state profile, productivity index and error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{AxisBc, BoundarySpec, Discretization, Face, FaceBc, Tensor2, WellKind};
use crate::solver::{
    solve_steady, solve_transient, FlowModel, MobilityModel, PicardOptions, PressureSolution, TransientOptions,
    TransientSolution,
};

/// Rate, drawdown and productivity index at one time (or for the steady profile).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiReport {
    pub time: Option<f64>,
    pub rate: f64,
    /// Domain-mean pressure minus well-face mean pressure.
    pub drawdown: f64,
    pub index: f64,
}

impl PiReport {
    pub fn new(time: Option<f64>, rate: f64, drawdown: f64) -> Result<Self> {
        if drawdown == 0.0 && rate != 0.0 {
            return Err(Error::Domain("zero drawdown with nonzero rate".into()));
        }
        let index = if rate == 0.0 { 0.0 } else { rate / drawdown };
        Ok(Self { time, rate, drawdown, index })
    }
}

/// No flow on every face except `well`, which carries `well_bc`.
fn well_boundary(well: Face, well_bc: FaceBc) -> BoundarySpec {
    let mut faces = [FaceBc::NO_FLUX; 4];
    faces[well.index()] = well_bc;
    BoundarySpec {
        x: AxisBc::Faces { low: faces[0], high: faces[1] },
        y: AxisBc::Faces { low: faces[2], high: faces[3] },
    }
}

/// Boundary of the basic profile: fixed value on the well face, no flow elsewhere.
pub fn basic_profile_bc(well: Face, value: f64) -> BoundarySpec {
    well_boundary(well, FaceBc::dirichlet(value))
}

/// Boundary of the pseudo-steady transient: one well pressure carrying `outflow`.
pub fn pss_well_bc(well: Face, outflow: f64) -> BoundarySpec {
    well_boundary(well, FaceBc::Well { outflow, kind: WellKind::Equipotential })
}

/// Total outflow `γ⟨φ⟩Q` that balances the profile source.
pub fn pss_outflow(model: &FlowModel, rate: f64, gamma: f64) -> f64 {
    gamma * model.mean_porosity() * rate
}

/// Per-cell source `γ (Q/|U|) φ`.
pub fn pss_source(model: &FlowModel, rate: f64, gamma: f64) -> Vec<f64> {
    let area = model.grid.area();
    model.porosity.iter().map(|phi| gamma * rate / area * phi).collect()
}

pub struct BasicProfile {
    pub solution: PressureSolution,
    pub disc: Discretization,
    pub rate: f64,
    pub gamma: f64,
    pub well: Face,
    /// Total boundary outflow of the discrete profile; equals `γ⟨φ⟩Q`.
    pub realized_outflow: f64,
}

/// Steady `−∇·(G K ∇W) = γ (Q/|U|) φ` with `W = value` on the well face.
pub fn solve_basic_profile(
    model: &FlowModel,
    rate: f64,
    gamma: f64,
    well: Face,
    value: f64,
    picard: &PicardOptions,
) -> Result<BasicProfile> {
    if !(gamma > 0.0) {
        return Err(Error::Invalid(format!("compressibility {gamma} must be positive")));
    }
    let disc = Discretization::new(model.grid, basic_profile_bc(well, value))?;
    let source = pss_source(model, rate, gamma);
    let solution = solve_steady(&disc, model, Some(&source), picard, None)?;
    let effective: Vec<Tensor2> =
        model.coef.iter().zip(&solution.mobility).map(|(k, g)| k.scaled(*g)).collect();
    let realized_outflow = disc.face_fluxes(&effective, Some(&source), &solution.pressure).iter().sum();
    Ok(BasicProfile { solution, disc, rate, gamma, well, realized_outflow })
}

pub fn drawdown(disc: &Discretization, p: &[f64], well: Face) -> f64 {
    disc.mean(p) - disc.face_mean(p, well)
}

/// Time-independent index `Q / (mean W − mean W on the well)`.
pub fn pi_pss(profile: &BasicProfile) -> Result<PiReport> {
    PiReport::new(None, profile.rate, drawdown(&profile.disc, &profile.solution.pressure, profile.well))
}

/// `J(t)` at every stored state of a transient run.
pub fn pi_transient(
    disc: &Discretization,
    solution: &TransientSolution,
    rate: &dyn Fn(f64) -> f64,
    well: Face,
) -> Result<Vec<PiReport>> {
    solution
        .times
        .iter()
        .zip(&solution.states)
        .map(|(&t, s)| PiReport::new(Some(t), rate(t), drawdown(disc, &s.pressure, well)))
        .collect()
}

/// Transient run with a constant-rate equipotential well, started from `initial`.
pub fn solve_pss_transient(
    model: &FlowModel,
    rate: f64,
    well: Face,
    initial: &[f64],
    opts: &TransientOptions,
) -> Result<(Discretization, TransientSolution)> {
    let disc = Discretization::new(model.grid, pss_well_bc(well, pss_outflow(model, rate, opts.gamma)))?;
    let sol = solve_transient(&disc, model, initial, opts, &|_| 1.0)?;
    Ok((disc, sol))
}

/// `‖a − b‖ / ‖a‖` for averaged vectors.
pub fn velocity_error(fine: [f64; 2], coarse: [f64; 2]) -> Result<f64> {
    let n = fine[0].hypot(fine[1]);
    if n == 0.0 {
        return Err(Error::Domain("fine average velocity is zero".into()));
    }
    Ok((fine[0] - coarse[0]).hypot(fine[1] - coarse[1]) / n)
}

/// `|a − b| / |a|`
pub fn relative_error(reference: f64, value: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(Error::Domain("reference value is zero".into()));
    }
    Ok(((reference - value) / reference).abs())
}

/// `∫ ‖u − u_s‖²` over the grid of `u`.
pub fn velocity_distance(u: &PressureSolution, reference: &PressureSolution) -> Result<f64> {
    if u.velocity.len() != reference.velocity.len() {
        return Err(Error::Invalid("velocity fields have different sizes".into()));
    }
    let area = u.grid.cell_area();
    Ok(u.velocity
        .iter()
        .zip(&reference.velocity)
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum::<f64>()
        * area)
}

/// Cells whose coarse gradient fell outside the sampled mobility range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCoverage {
    pub cells: usize,
    pub clamped: usize,
}

pub fn table_coverage(model: &FlowModel, solution: &PressureSolution) -> TableCoverage {
    let MobilityModel::Blocks { cell_block, blocks } = &model.mobility else {
        return TableCoverage { cells: solution.gradient.len(), clamped: 0 };
    };
    let clamped = solution
        .gradient
        .iter()
        .zip(cell_block)
        .filter(|(g, &b)| blocks[b].table().is_some_and(|t| !t.covers(**g)))
        .count();
    TableCoverage { cells: solution.gradient.len(), clamped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ScalarField, StructuredGrid};
    use crate::solver::CellLaw;

    fn slab(law: CellLaw) -> FlowModel {
        let g = StructuredGrid::new(40, 2, 2.0, 0.5).unwrap();
        FlowModel::fine(&ScalarField::constant(g, 3.0), &ScalarField::constant(g, 0.2), law).unwrap()
    }

    #[test]
    fn zero_rate_gives_zero_profile() {
        let m = slab(CellLaw::Darcy);
        let p = solve_basic_profile(&m, 0.0, 1.0, Face::Right, 0.0, &PicardOptions::default()).unwrap();
        assert!(p.solution.pressure.iter().all(|&v| v == 0.0));
        assert_eq!(pi_pss(&p).unwrap().index, 0.0);
    }

    #[test]
    fn slab_profile_is_the_parabola() {
        let m = slab(CellLaw::Darcy);
        let (q, gamma) = (2.0, 1.5);
        let p = solve_basic_profile(&m, q, gamma, Face::Right, 0.0, &PicardOptions::default()).unwrap();
        // W'' = −c, W'(0) = 0, W(L) = 0
        let c = gamma * q * 0.2 / (1.0 * 3.0);
        let (l, g) = (2.0, m.grid);
        for i in 0..=g.nx {
            let x = g.node_position(i, 0)[0];
            let w = 0.5 * c * (l * l - x * x);
            assert!((p.solution.pressure[g.node_index(i, 0)] - w).abs() < 1e-10 * c);
            assert!(p.solution.pressure[g.node_index(i, 0)] >= 0.0);
        }
        let j = pi_pss(&p).unwrap();
        let mean = c * l * l / 3.0;
        assert!((j.index - q / mean).abs() < 1e-3 * q / mean);
        assert!((p.realized_outflow - gamma * 0.2 * q).abs() < 1e-10);
    }

    #[test]
    fn darcy_index_is_rate_invariant() {
        let m = slab(CellLaw::Darcy);
        let a = pi_pss(&solve_basic_profile(&m, 1.0, 1.0, Face::Right, 0.0, &PicardOptions::default()).unwrap()).unwrap();
        let b = pi_pss(&solve_basic_profile(&m, 7.0, 1.0, Face::Right, 0.0, &PicardOptions::default()).unwrap()).unwrap();
        assert!((b.drawdown - 7.0 * a.drawdown).abs() < 1e-10 * b.drawdown);
        assert!((a.index - b.index).abs() < 1e-10 * a.index);
    }

    #[test]
    fn forchheimer_index_decreases_with_rate() {
        let m = slab(CellLaw::TwoTerm(vec![0.5; 80]));
        let j = |q| pi_pss(&solve_basic_profile(&m, q, 1.0, Face::Right, 0.0, &PicardOptions::default()).unwrap()).unwrap().index;
        assert!(j(10.0) <= j(1.0));
    }

    #[test]
    fn velocity_error_basics() {
        assert_eq!(velocity_error([1.0, 2.0], [1.0, 2.0]).unwrap(), 0.0);
        assert!((velocity_error([3.0, 4.0], [3.0, 4.5]).unwrap() - 0.1).abs() < 1e-15);
        assert!(velocity_error([0.0, 0.0], [1.0, 0.0]).is_err());
        assert!(relative_error(0.0, 1.0).is_err());
    }

    #[test]
    fn pss_transient_keeps_the_profile_shape() {
        let m = slab(CellLaw::TwoTerm(vec![0.3; 80]));
        let (q, gamma) = (2.0, 1.0);
        let w = solve_basic_profile(&m, q, gamma, Face::Right, 0.0, &PicardOptions { tol: 1e-12, max_iter: 200 }).unwrap();
        let opts = TransientOptions { dt: 0.05, t_end: 0.2, gamma, picard: PicardOptions { tol: 1e-12, max_iter: 200 } };
        let (disc, sol) = solve_pss_transient(&m, q, Face::Right, &w.solution.pressure, &opts).unwrap();
        let rate = -q / m.grid.area();
        for pair in sol.states.windows(2) {
            for (a, b) in pair[0].pressure.iter().zip(&pair[1].pressure) {
                assert!(((b - a) / opts.dt - rate).abs() < 1e-6 * rate.abs());
            }
        }
        let j0 = pi_pss(&w).unwrap().index;
        for r in pi_transient(&disc, &sol, &|_| q, Face::Right).unwrap() {
            assert!((r.index - j0).abs() < 1e-6 * j0);
        }
    }
}
