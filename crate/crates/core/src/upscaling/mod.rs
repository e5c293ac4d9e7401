//! Coarse-block upscaling: linear tensor, porosity, tabulated mobility and the polynomial variants.

mod table;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use table::{build_gstar_table, reference_tensor, GStarTable, SamplingBc, StopReason, TableControls};

use crate::error::{Error, Result};
use crate::fem::{AxisBc, BoundarySpec, BoundaryValue, Discretization, FaceBc, Tensor2};
use crate::grid::{BlockPartition, ScalarField, StructuredGrid};
use crate::layered::{Layer, LayerStack};
use crate::linalg::solve_dense;
use crate::solver::{
    solve_linear_elliptic, solve_steady, CellLaw, FlowModel, MobilityModel, PicardOptions,
};

/// Fine permeability, porosity and Forchheimer law on the whole domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineModel {
    pub k: ScalarField,
    pub phi: ScalarField,
    pub law: CellLaw,
}

impl FineModel {
    pub fn new(k: ScalarField, phi: ScalarField, law: CellLaw) -> Result<Self> {
        let model = Self { k, phi, law };
        model.flow_model()?;
        Ok(model)
    }

    pub fn grid(&self) -> StructuredGrid {
        self.k.grid
    }

    pub fn flow_model(&self) -> Result<FlowModel> {
        FlowModel::fine(&self.k, &self.phi, self.law.clone())
    }

    pub fn block(&self, partition: &BlockPartition, b: usize) -> BlockData {
        let cells = partition.block_cell_indices(b);
        BlockData {
            grid: partition.block_grid(b),
            k: cells.iter().map(|&c| self.k.values[c]).collect(),
            phi: cells.iter().map(|&c| self.phi.values[c]).collect(),
            law: self.law.subset(&cells),
        }
    }
}

/// Fine data restricted to one coarse block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockData {
    pub grid: StructuredGrid,
    pub k: Vec<f64>,
    pub phi: Vec<f64>,
    pub law: CellLaw,
}

impl BlockData {
    pub fn new(grid: StructuredGrid, k: Vec<f64>, phi: Vec<f64>, law: CellLaw) -> Result<Self> {
        let b = Self { grid, k, phi, law };
        if b.k.len() != grid.num_cells() || b.phi.len() != grid.num_cells() {
            return Err(Error::Invalid("block fields do not match the block grid".into()));
        }
        if b.k.iter().chain(&b.phi).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain("block permeability and porosity must be positive".into()));
        }
        b.law.validate(grid.num_cells())?;
        Ok(b)
    }

    pub fn uniform(grid: StructuredGrid, k: f64, phi: f64, law: CellLaw) -> Result<Self> {
        let n = grid.num_cells();
        Self::new(grid, vec![k; n], vec![phi; n], law)
    }

    pub fn flow_model(&self) -> FlowModel {
        FlowModel {
            grid: self.grid,
            coef: self.k.iter().map(|&v| Tensor2::scalar(v)).collect(),
            porosity: self.phi.clone(),
            mobility: MobilityModel::Fine(self.law.clone()),
        }
    }

    /// Cell centres relative to the block centre.
    fn offsets(&self) -> Vec<[f64; 2]> {
        let [cx, cy] = self.grid.center();
        self.grid.cell_centers().map(|[x, y]| [x - cx, y - cy]).collect()
    }

    /// Translation-invariant key; blocks with equal keys upscale identically.
    fn fingerprint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let g = &self.grid;
        for v in [g.nx as u64, g.ny as u64, g.lx.to_bits(), g.ly.to_bits()] {
            out.extend(v.to_le_bytes());
        }
        for v in self.k.iter().chain(&self.phi) {
            out.extend(v.to_bits().to_le_bytes());
        }
        self.law.fingerprint(&mut out);
        out
    }
}

/// Averages of the two linear cell problems that define the linear tensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearResponse {
    pub kstar: Tensor2,
    /// `⟨u⟩` of problem 1 (driven along x) and problem 2 (driven along y).
    pub velocity: [[f64; 2]; 2],
    pub gradient: [[f64; 2]; 2],
}

/// Problem `axis`: Dirichlet 0/1 on the faces normal to `axis`, periodic along the other.
fn cell_problem_bc(axis: usize) -> BoundarySpec {
    let driven = AxisBc::Faces { low: FaceBc::dirichlet(0.0), high: FaceBc::dirichlet(1.0) };
    let periodic = AxisBc::Periodic { jump: 0.0 };
    if axis == 0 {
        BoundarySpec { x: driven, y: periodic }
    } else {
        BoundarySpec { x: periodic, y: driven }
    }
}

fn invert2(m: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    if !(det.abs() > 1e-14 * scale * scale) {
        return Err(Error::Singular("mean gradients of the cell problems are linearly dependent".into()));
    }
    Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// Linear upscaled tensor `k*` from `⟨u_i⟩ = −k*⟨∇p_i⟩`.
pub fn upscale_k_linear(block: &BlockData) -> Result<LinearResponse> {
    let coef: Vec<Tensor2> = block.k.iter().map(|&v| Tensor2::scalar(v)).collect();
    let mut velocity = [[0.0; 2]; 2];
    let mut gradient = [[0.0; 2]; 2];
    for axis in 0..2 {
        let s = solve_linear_elliptic(block.grid, &coef, cell_problem_bc(axis), None)?;
        velocity[axis] = s.average_velocity();
        gradient[axis] = s.average_gradient();
    }
    // columns are the two problems
    let gm = [[gradient[0][0], gradient[1][0]], [gradient[0][1], gradient[1][1]]];
    let gi = invert2(gm)?;
    let mut k = [[0.0; 2]; 2];
    for (r, row) in k.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = -(velocity[0][r] * gi[0][c] + velocity[1][r] * gi[1][c]);
        }
    }
    let kstar = Tensor2(k);
    if !kstar.has_positive_symmetric_part() {
        return Err(Error::Domain(format!("upscaled tensor {k:?} is not positive definite")));
    }
    Ok(LinearResponse { kstar, velocity, gradient })
}

pub fn upscale_phi_const(block: &BlockData) -> f64 {
    block.phi.iter().sum::<f64>() / block.phi.len() as f64
}

/// Affine least-squares fit `K₀ + K₁(x₁−c₁) + K₂(x₂−c₂)` of the permeability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
}

impl AffineFit {
    pub fn at(&self, d: [f64; 2]) -> f64 {
        self.k0 + self.k1 * d[0] + self.k2 * d[1]
    }
}

/// Midpoint-rule least squares over the block.
pub fn fit_kbar(block: &BlockData) -> AffineFit {
    let d = block.offsets();
    let n = block.k.len() as f64;
    let k0 = block.k.iter().sum::<f64>() / n;
    let slope = |axis: usize| {
        let num: f64 = block.k.iter().zip(&d).map(|(k, d)| k * d[axis]).sum();
        let den: f64 = d.iter().map(|d| d[axis] * d[axis]).sum();
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    AffineFit { k0, k1: slope(0), k2: slope(1) }
}

/// `k*(x) = [[K₁₁ K̄(x), K₁₂], [K₂₁, K₂₂ K̄(x)]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KstarPoly {
    pub k11: f64,
    pub k12: f64,
    pub k21: f64,
    pub k22: f64,
    pub kbar: AffineFit,
}

impl KstarPoly {
    /// Tensor at offset `d` from the block centre.
    pub fn tensor_at(&self, d: [f64; 2]) -> Tensor2 {
        let kb = self.kbar.at(d);
        Tensor2([[self.k11 * kb, self.k12], [self.k21, self.k22 * kb]])
    }
}

/// Scales the affine fit so the averaged cell problems reproduce the fine `⟨u_i⟩`.
pub fn correct_kstar_poly(block: &BlockData, kbar: &AffineFit, linear: &LinearResponse) -> Result<KstarPoly> {
    let kb: Vec<f64> = block.offsets().iter().map(|&d| kbar.at(d)).collect();
    if let Some(v) = kb.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("affine permeability fit {v} is not positive on the block")));
    }
    let coef: Vec<Tensor2> = kb.iter().map(|&v| Tensor2::scalar(v)).collect();
    let n = kb.len() as f64;
    let mut a = [0.0; 2];
    let mut b = [0.0; 2];
    let mut c = [0.0; 2];
    let mut d = [0.0; 2];
    for axis in 0..2 {
        let s = solve_linear_elliptic(block.grid, &coef, cell_problem_bc(axis), None)?;
        for (g, k) in s.gradient.iter().zip(&kb) {
            a[axis] += k * g[0] / n;
            b[axis] += g[1] / n;
            c[axis] += g[0] / n;
            d[axis] += k * g[1] / n;
        }
    }
    let u = linear.velocity;
    let first = solve_dense(2, &[a[0], b[0], a[1], b[1]], &[-u[0][0], -u[1][0]])?;
    let second = solve_dense(2, &[c[0], d[0], c[1], d[1]], &[-u[0][1], -u[1][1]])?;
    Ok(KstarPoly { k11: first[0], k12: first[1], k21: second[0], k22: second[1], kbar: *kbar })
}

/// Upscaled porosity, constant or `Φ_A + Φ_B d₁ + Φ_C d₂ + Φ_D (d₁² − d₂²)` in offsets `d` from the centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "form")]
pub enum PhiStar {
    Constant { value: f64 },
    Poly { a: f64, b: f64, c: f64, d: f64 },
}

impl PhiStar {
    pub fn at(&self, d: [f64; 2]) -> f64 {
        match *self {
            PhiStar::Constant { value } => value,
            PhiStar::Poly { a, b, c, d: q } => a + b * d[0] + c * d[1] + q * (d[0] * d[0] - d[1] * d[1]),
        }
    }
}

/// Polynomial porosity fit and the checks made while computing it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiPolyFit {
    pub phistar: PhiStar,
    /// The flux system was singular and the constant average was used.
    pub fallback: bool,
    /// Some cell centre has `Φ* ≤ 0`.
    pub nonpositive: bool,
}

fn face_flux_solve(
    grid: StructuredGrid,
    coef: &[Tensor2],
    source: &[f64],
) -> Result<[f64; 4]> {
    let disc = Discretization::new(grid, BoundarySpec::dirichlet_all(BoundaryValue::constant(0.0)))?;
    let model = FlowModel {
        grid,
        coef: coef.to_vec(),
        porosity: vec![1.0; grid.num_cells()],
        mobility: MobilityModel::Fine(CellLaw::Darcy),
    };
    let s = solve_steady(&disc, &model, Some(source), &PicardOptions::default(), None)?;
    Ok(disc.face_fluxes(coef, Some(source), &s.pressure))
}

/// Fits the porosity polynomial by matching the four face fluxes of `−∇·(k∇p) = φ`.
///
/// `coarse` gives the coarse tensor at an offset from the block centre.
pub fn upscale_phi_poly(block: &BlockData, coarse: &dyn Fn([f64; 2]) -> Tensor2) -> Result<PhiPolyFit> {
    let fine_coef: Vec<Tensor2> = block.k.iter().map(|&v| Tensor2::scalar(v)).collect();
    let target = face_flux_solve(block.grid, &fine_coef, &block.phi)?;
    let d = block.offsets();
    let coef: Vec<Tensor2> = d.iter().map(|&x| coarse(x)).collect();
    let basis: [fn([f64; 2]) -> f64; 4] =
        [|_| 1.0, |d| d[0], |d| d[1], |d| d[0] * d[0] - d[1] * d[1]];
    let mut columns = Vec::with_capacity(4);
    for f in basis {
        let src: Vec<f64> = d.iter().map(|&x| f(x)).collect();
        columns.push(face_flux_solve(block.grid, &coef, &src)?);
    }
    let mut m = vec![0.0; 16];
    for (face, row) in m.chunks_mut(4).enumerate() {
        for (l, v) in row.iter_mut().enumerate() {
            *v = columns[l][face];
        }
    }
    let phistar = match solve_dense(4, &m, &target) {
        Ok(x) => PhiStar::Poly { a: x[0], b: x[1], c: x[2], d: x[3] },
        Err(Error::Singular(msg)) => {
            log::warn!("porosity flux system is singular ({msg}); using the block average");
            return Ok(PhiPolyFit {
                phistar: PhiStar::Constant { value: upscale_phi_const(block) },
                fallback: true,
                nonpositive: false,
            });
        }
        Err(e) => return Err(e),
    };
    let nonpositive = d.iter().any(|&x| !(phistar.at(x) > 0.0));
    if nonpositive {
        log::warn!("polynomial porosity {phistar:?} is not positive everywhere on the block");
    }
    Ok(PhiPolyFit { phistar, fallback: false, nonpositive })
}

/// Mobility of one coarse block as a function of the coarse gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BlockMobility {
    Unit,
    Table { table: GStarTable },
    /// Closed form for flow along the layers.
    Parallel { stack: LayerStack },
    /// Closed form for flow across the layers.
    Perpendicular { stack: LayerStack },
}

impl BlockMobility {
    pub fn eval(&self, grad: [f64; 2]) -> Result<f64> {
        let xi = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
        match self {
            BlockMobility::Unit => Ok(1.0),
            BlockMobility::Table { table } => table.eval(grad),
            BlockMobility::Parallel { stack } => stack.gstar_parallel(xi),
            BlockMobility::Perpendicular { stack } => stack.gstar_perpendicular_at_gradient(xi),
        }
    }

    pub fn is_unit(&self) -> bool {
        match self {
            BlockMobility::Unit => true,
            BlockMobility::Table { table } => table.is_unit(),
            BlockMobility::Parallel { stack } | BlockMobility::Perpendicular { stack } => {
                stack.layers().iter().all(|l| l.law.is_darcy())
            }
        }
    }

    pub fn table(&self) -> Option<&GStarTable> {
        match self {
            BlockMobility::Table { table } => Some(table),
            _ => None,
        }
    }
}

/// Groups cells with equal permeability and law into layers weighted by cell count.
pub fn block_layer_stack(block: &BlockData) -> Result<LayerStack> {
    let mut layers: Vec<Layer> = Vec::new();
    for (c, &k) in block.k.iter().enumerate() {
        let law = block.law.poly(c);
        match layers.iter_mut().find(|l| l.k == k && l.law == law) {
            Some(l) => l.thickness += 1.0,
            None => layers.push(Layer::new(1.0, k, law)),
        }
    }
    LayerStack::new(layers)
}

/// How the block mobility is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoarseMethod {
    /// Adaptive table from local nonlinear solves.
    #[default]
    Numerical,
    ParallelFormula,
    PerpendicularFormula,
}

impl CoarseMethod {
    pub const ALL: [CoarseMethod; 3] =
        [CoarseMethod::Numerical, CoarseMethod::ParallelFormula, CoarseMethod::PerpendicularFormula];

    pub fn name(self) -> &'static str {
        match self {
            CoarseMethod::Numerical => "numerical",
            CoarseMethod::ParallelFormula => "parallel",
            CoarseMethod::PerpendicularFormula => "perpendicular",
        }
    }
}

impl std::str::FromStr for CoarseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown coarse method `{s}`")))
    }
}

/// Constant or polynomial form of `k*` and `Φ*`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Constant `k*`, constant `Φ*`.
    #[default]
    I,
    /// Polynomial `k*`, constant `Φ*`.
    Ii,
    /// Constant `k*`, polynomial `Φ*`.
    Iii,
    /// Polynomial `k*`, polynomial `Φ*`.
    Iv,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::I, Variant::Ii, Variant::Iii, Variant::Iv];

    pub fn polynomial_k(self) -> bool {
        matches!(self, Variant::Ii | Variant::Iv)
    }

    pub fn polynomial_phi(self) -> bool {
        matches!(self, Variant::Iii | Variant::Iv)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::I => "i",
            Variant::Ii => "ii",
            Variant::Iii => "iii",
            Variant::Iv => "iv",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown variant `{s}` (expected i, ii, iii or iv)")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    /// `|k₁₂ − k₂₁| / ‖k*‖`
    pub asymmetry: f64,
    pub phi_fallback: bool,
    pub phi_nonpositive: bool,
    pub table_levels: usize,
    pub table_stop: Option<StopReason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseBlockParams {
    pub index: usize,
    pub center: [f64; 2],
    pub grid: StructuredGrid,
    pub kstar: Tensor2,
    pub kstar_poly: Option<KstarPoly>,
    pub phistar: PhiStar,
    pub mobility: BlockMobility,
    pub diagnostics: BlockDiagnostics,
}

impl CoarseBlockParams {
    pub fn kstar_at(&self, x: [f64; 2]) -> Tensor2 {
        match &self.kstar_poly {
            Some(p) => p.tensor_at([x[0] - self.center[0], x[1] - self.center[1]]),
            None => self.kstar,
        }
    }

    pub fn phistar_at(&self, x: [f64; 2]) -> f64 {
        self.phistar.at([x[0] - self.center[0], x[1] - self.center[1]])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpscaleOptions {
    pub variant: Variant,
    pub method: CoarseMethod,
    pub table: TableControls,
    pub picard: PicardOptions,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for UpscaleOptions {
    fn default() -> Self {
        Self {
            variant: Variant::I,
            method: CoarseMethod::Numerical,
            table: TableControls::default(),
            picard: PicardOptions::default(),
            workers: None,
        }
    }
}

/// Upscaled parameters of all blocks of a partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseModel {
    pub fine_grid: StructuredGrid,
    pub mx: usize,
    pub my: usize,
    pub variant: Variant,
    pub method: CoarseMethod,
    pub blocks: Vec<CoarseBlockParams>,
}

impl CoarseModel {
    pub fn partition(&self) -> Result<BlockPartition> {
        BlockPartition::new(self.fine_grid, self.mx, self.my)
    }

    pub fn coarse_grid(&self) -> Result<StructuredGrid> {
        Ok(self.partition()?.coarse_grid())
    }

    /// Coarse flow model on the coarse grid refined `refine` times, parameters taken at sub-cell centres.
    pub fn to_flow_model(&self, refine: usize) -> Result<FlowModel> {
        if refine == 0 {
            return Err(Error::Invalid("refinement factor must be at least 1".into()));
        }
        let coarse = self.coarse_grid()?;
        let grid = coarse.refined(refine)?;
        let n = grid.num_cells();
        let mut coef = Vec::with_capacity(n);
        let mut porosity = Vec::with_capacity(n);
        let mut cell_block = Vec::with_capacity(n);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let b = coarse.cell_index(i / refine, j / refine);
                let x = grid.cell_center(i, j);
                let params = &self.blocks[b];
                coef.push(params.kstar_at(x));
                porosity.push(params.phistar_at(x));
                cell_block.push(b);
            }
        }
        let blocks = self.blocks.iter().map(|b| b.mobility.clone()).collect();
        Ok(FlowModel { grid, coef, porosity, mobility: MobilityModel::Blocks { cell_block, blocks } })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(format!("serializing coarse model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }
}

struct BlockResult {
    kstar: Tensor2,
    kstar_poly: Option<KstarPoly>,
    phistar: PhiStar,
    mobility: BlockMobility,
    diagnostics: BlockDiagnostics,
}

fn upscale_block(block: &BlockData, opts: &UpscaleOptions) -> Result<BlockResult> {
    let linear = upscale_k_linear(block).map_err(|e| e.in_stage("linear tensor"))?;
    let kstar = linear.kstar;
    let kstar_poly = if opts.variant.polynomial_k() {
        let fit = fit_kbar(block);
        Some(correct_kstar_poly(block, &fit, &linear).map_err(|e| e.in_stage("polynomial tensor"))?)
    } else {
        None
    };
    let mut diagnostics = BlockDiagnostics {
        asymmetry: kstar.asymmetry(),
        ..BlockDiagnostics::default()
    };
    let phistar = if opts.variant.polynomial_phi() {
        let coarse = |d: [f64; 2]| kstar_poly.map_or(kstar, |p| p.tensor_at(d));
        let fit = upscale_phi_poly(block, &coarse).map_err(|e| e.in_stage("polynomial porosity"))?;
        diagnostics.phi_fallback = fit.fallback;
        diagnostics.phi_nonpositive = fit.nonpositive;
        fit.phistar
    } else {
        PhiStar::Constant { value: upscale_phi_const(block) }
    };
    let mobility = if block.law.is_darcy() {
        BlockMobility::Unit
    } else {
        match opts.method {
            CoarseMethod::Numerical => {
                let table = build_gstar_table(block, &opts.table, &opts.picard)
                    .map_err(|e| e.in_stage("mobility table"))?;
                diagnostics.table_levels = table.levels.len();
                diagnostics.table_stop = Some(table.stop);
                BlockMobility::Table { table }
            }
            CoarseMethod::ParallelFormula => BlockMobility::Parallel { stack: block_layer_stack(block)? },
            CoarseMethod::PerpendicularFormula => BlockMobility::Perpendicular { stack: block_layer_stack(block)? },
        }
    };
    Ok(BlockResult { kstar, kstar_poly, phistar, mobility, diagnostics })
}

/// Upscales every block; identical blocks are computed once.
pub fn upscale_all_blocks(fine: &FineModel, partition: &BlockPartition, opts: &UpscaleOptions) -> Result<CoarseModel> {
    if partition.fine != fine.grid() {
        return Err(Error::Invalid("partition does not match the fine grid".into()));
    }
    fine.flow_model()?;
    let data: Vec<BlockData> = (0..partition.num_blocks()).map(|b| fine.block(partition, b)).collect();
    let mut unique: Vec<usize> = Vec::new();
    let mut owner: Vec<usize> = Vec::with_capacity(data.len());
    let mut seen: HashMap<Vec<u8>, usize> = HashMap::new();
    for (b, d) in data.iter().enumerate() {
        let slot = *seen.entry(d.fingerprint()).or_insert_with(|| {
            unique.push(b);
            unique.len() - 1
        });
        owner.push(slot);
    }
    log::info!("upscaling {} blocks ({} distinct)", data.len(), unique.len());
    let run = || {
        unique
            .par_iter()
            .map(|&b| upscale_block(&data[b], opts).map_err(|e| e.in_block(b)))
            .collect::<Result<Vec<_>>>()
    };
    let results = match opts.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let blocks = data
        .iter()
        .enumerate()
        .map(|(b, d)| {
            let r = &results[owner[b]];
            CoarseBlockParams {
                index: b,
                center: d.grid.center(),
                grid: d.grid,
                kstar: r.kstar,
                kstar_poly: r.kstar_poly,
                phistar: r.phistar,
                mobility: r.mobility.clone(),
                diagnostics: r.diagnostics.clone(),
            }
        })
        .collect();
    Ok(CoarseModel {
        fine_grid: fine.grid(),
        mx: partition.mx,
        my: partition.my,
        variant: opts.variant,
        method: opts.method,
        blocks,
    })
}
