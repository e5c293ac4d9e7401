//! Bilinear finite elements on structured rectangles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::StructuredGrid;
use crate::linalg::{BandedSolver, CsrPattern};

/// A 2×2 coefficient tensor, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor2(pub [[f64; 2]; 2]);

impl Tensor2 {
    pub const IDENTITY: Tensor2 = Tensor2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn scalar(c: f64) -> Self {
        Tensor2([[c, 0.0], [0.0, c]])
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Tensor2([[a, 0.0], [0.0, b]])
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let m = &self.0;
        Tensor2([[s * m[0][0], s * m[0][1]], [s * m[1][0], s * m[1][1]]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// True when `(K + Kᵀ)/2` is positive definite.
    pub fn has_positive_symmetric_part(&self) -> bool {
        let m = &self.0;
        let off = 0.5 * (m[0][1] + m[1][0]);
        m[0][0] > 0.0 && m[0][0] * m[1][1] - off * off > 0.0
    }

    /// `|K₁₂ − K₂₁| / max|K_ij|`
    pub fn asymmetry(&self) -> f64 {
        let m = &self.0;
        let scale = m.iter().flatten().fold(0.0_f64, |s, v| s.max(v.abs()));
        if scale == 0.0 {
            0.0
        } else {
            (m[0][1] - m[1][0]).abs() / scale
        }
    }
}

/// Prescribed pressure on a face, `c + gx·x + gy·y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryValue {
    pub c: f64,
    #[serde(default)]
    pub gx: f64,
    #[serde(default)]
    pub gy: f64,
}

impl BoundaryValue {
    pub fn constant(c: f64) -> Self {
        Self { c, gx: 0.0, gy: 0.0 }
    }

    pub fn affine(c: f64, gx: f64, gy: f64) -> Self {
        Self { c, gx, gy }
    }

    pub fn at(&self, [x, y]: [f64; 2]) -> f64 {
        self.c + self.gx * x + self.gy * y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WellKind {
    /// One unknown pressure on the whole face carrying the total outflow.
    Equipotential,
    /// The total outflow spread as a uniform normal flux density.
    UniformFlux,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum FaceBc {
    Dirichlet { value: BoundaryValue },
    /// Outward normal flux density `u·ν`; zero means no flow.
    Flux { density: f64 },
    /// Production face with total outward flow `outflow`.
    Well { outflow: f64, kind: WellKind },
}

impl FaceBc {
    pub const NO_FLUX: FaceBc = FaceBc::Flux { density: 0.0 };

    pub fn dirichlet(c: f64) -> Self {
        FaceBc::Dirichlet { value: BoundaryValue::constant(c) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum AxisBc {
    /// `p(high) = p(low) + jump` with identified nodes.
    Periodic { jump: f64 },
    Faces { low: FaceBc, high: FaceBc },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Face {
    Left,
    Right,
    Bottom,
    Top,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::Left, Face::Right, Face::Bottom, Face::Top];

    pub fn index(self) -> usize {
        self as usize
    }

    fn contains(self, grid: &StructuredGrid, i: usize, j: usize) -> bool {
        match self {
            Face::Left => i == 0,
            Face::Right => i == grid.nx,
            Face::Bottom => j == 0,
            Face::Top => j == grid.ny,
        }
    }

    pub fn length(self, grid: &StructuredGrid) -> f64 {
        match self {
            Face::Left | Face::Right => grid.ly,
            Face::Bottom | Face::Top => grid.lx,
        }
    }
}

/// Boundary conditions along x (left/right faces) and y (bottom/top faces).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub x: AxisBc,
    pub y: AxisBc,
}

impl BoundarySpec {
    pub fn faces(left: FaceBc, right: FaceBc, bottom: FaceBc, top: FaceBc) -> Self {
        Self {
            x: AxisBc::Faces { low: left, high: right },
            y: AxisBc::Faces { low: bottom, high: top },
        }
    }

    /// Dirichlet data `value` on the whole boundary.
    pub fn dirichlet_all(value: BoundaryValue) -> Self {
        let d = FaceBc::Dirichlet { value };
        Self::faces(d, d, d, d)
    }

    pub fn no_flux() -> Self {
        Self::faces(FaceBc::NO_FLUX, FaceBc::NO_FLUX, FaceBc::NO_FLUX, FaceBc::NO_FLUX)
    }

    /// Affine pressure with mean gradient `xi` and a periodic fluctuation.
    pub fn periodic_gradient(grid: &StructuredGrid, xi: [f64; 2]) -> Self {
        Self {
            x: AxisBc::Periodic { jump: xi[0] * grid.lx },
            y: AxisBc::Periodic { jump: xi[1] * grid.ly },
        }
    }

    pub fn face(&self, face: Face) -> Option<FaceBc> {
        let (axis, high) = match face {
            Face::Left => (&self.x, false),
            Face::Right => (&self.x, true),
            Face::Bottom => (&self.y, false),
            Face::Top => (&self.y, true),
        };
        match axis {
            AxisBc::Periodic { .. } => None,
            AxisBc::Faces { low, high: h } => Some(if high { *h } else { *low }),
        }
    }

    fn validate(&self) -> Result<()> {
        let wells = Face::ALL
            .iter()
            .filter(|&&f| matches!(self.face(f), Some(FaceBc::Well { kind: WellKind::Equipotential, .. })))
            .count();
        if wells > 1 {
            return Err(Error::Invalid("at most one equipotential well face is supported".into()));
        }
        Ok(())
    }

    pub fn has_dirichlet(&self) -> bool {
        Face::ALL.iter().any(|&f| matches!(self.face(f), Some(FaceBc::Dirichlet { .. })))
    }
}

const NO_DOF: usize = usize::MAX;

/// Nodal pressure `p_n = x[dof_n] + offset_n`; fixed nodes have no dof.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub dof: Vec<usize>,
    pub offset: Vec<f64>,
    pub ndof: usize,
    /// Lumped unknown of an equipotential well face.
    pub well_dof: Option<usize>,
    pub has_fixed: bool,
}

impl DofMap {
    pub fn new(grid: &StructuredGrid, bc: &BoundarySpec) -> Result<Self> {
        bc.validate()?;
        let (nx, ny) = (grid.nx, grid.ny);
        let nn = grid.num_nodes();
        let mut dof = vec![NO_DOF; nn];
        let mut offset = vec![0.0; nn];
        let mut has_fixed = false;
        let mut ndof = 0;
        let mut well_dof = None;
        let (px, py) = (
            matches!(bc.x, AxisBc::Periodic { .. }),
            matches!(bc.y, AxisBc::Periodic { .. }),
        );
        let jump = |a: &AxisBc| match a {
            AxisBc::Periodic { jump } => *jump,
            _ => 0.0,
        };
        let (jx, jy) = (jump(&bc.x), jump(&bc.y));
        let dirichlet_at = |i: usize, j: usize| {
            Face::ALL.iter().find_map(|&f| match bc.face(f) {
                Some(FaceBc::Dirichlet { value }) if f.contains(grid, i, j) => Some(value),
                _ => None,
            })
        };
        let on_well = |i: usize, j: usize| {
            Face::ALL.iter().any(|&f| {
                matches!(bc.face(f), Some(FaceBc::Well { kind: WellKind::Equipotential, .. }))
                    && f.contains(grid, i, j)
            })
        };
        // canonical nodes first, periodic images afterwards
        for pass in 0..2 {
            for j in 0..=ny {
                for i in 0..=nx {
                    let image = (px && i == nx) || (py && j == ny);
                    if image != (pass == 1) {
                        continue;
                    }
                    let n = grid.node_index(i, j);
                    if let Some(v) = dirichlet_at(i, j) {
                        offset[n] = v.at(grid.node_position(i, j));
                        has_fixed = true;
                    } else if image {
                        let ci = if px && i == nx { 0 } else { i };
                        let cj = if py && j == ny { 0 } else { j };
                        let c = grid.node_index(ci, cj);
                        dof[n] = dof[c];
                        offset[n] = offset[c]
                            + if ci != i { jx } else { 0.0 }
                            + if cj != j { jy } else { 0.0 };
                    } else if on_well(i, j) {
                        let d = *well_dof.get_or_insert_with(|| {
                            ndof += 1;
                            ndof - 1
                        });
                        dof[n] = d;
                    } else {
                        dof[n] = ndof;
                        ndof += 1;
                    }
                }
            }
        }
        Ok(Self { dof, offset, ndof, well_dof, has_fixed })
    }

    pub fn nodal(&self, x: &[f64]) -> Vec<f64> {
        self.dof
            .iter()
            .zip(&self.offset)
            .map(|(&d, &o)| if d == NO_DOF { o } else { x[d] + o })
            .collect()
    }

    /// Dof values reproducing `nodal` at every free node (last writer wins).
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.ndof];
        for ((&d, &o), &p) in self.dof.iter().zip(&self.offset).zip(nodal) {
            if d != NO_DOF {
                x[d] = p - o;
            }
        }
        x
    }
}

/// Reference integrals on one cell: `stiff[a][b][r][c] = ∫ ∂_a ψ_r ∂_b ψ_c`.
#[derive(Clone, Debug)]
struct ReferenceCell {
    stiff: [[[[f64; 4]; 4]; 2]; 2],
    mass: [[f64; 4]; 4],
    hx: f64,
    hy: f64,
}

impl ReferenceCell {
    fn new(hx: f64, hy: f64) -> Self {
        let g = 0.5 / 3f64.sqrt();
        let pts = [0.5 - g, 0.5 + g];
        let corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let mut stiff = [[[[0.0; 4]; 4]; 2]; 2];
        let w = 0.25 * hx * hy;
        for &s in &pts {
            for &t in &pts {
                let grads: Vec<[f64; 2]> = corners
                    .iter()
                    .map(|&(cx, cy): &(f64, f64)| {
                        let fx = if cx == 1.0 { s } else { 1.0 - s };
                        let fy = if cy == 1.0 { t } else { 1.0 - t };
                        let dx = if cx == 1.0 { 1.0 } else { -1.0 };
                        let dy = if cy == 1.0 { 1.0 } else { -1.0 };
                        [dx * fy / hx, fx * dy / hy]
                    })
                    .collect();
                for a in 0..2 {
                    for b in 0..2 {
                        for r in 0..4 {
                            for c in 0..4 {
                                stiff[a][b][r][c] += w * grads[r][a] * grads[c][b];
                            }
                        }
                    }
                }
            }
        }
        let base = [[4.0, 2.0, 1.0, 2.0], [2.0, 4.0, 2.0, 1.0], [1.0, 2.0, 4.0, 2.0], [2.0, 1.0, 2.0, 4.0]];
        let mut mass = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                mass[r][c] = base[r][c] * hx * hy / 36.0;
            }
        }
        Self { stiff, mass, hx, hy }
    }

    fn stiffness(&self, k: &Tensor2) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for a in 0..2 {
            for b in 0..2 {
                let kab = k.0[a][b];
                if kab == 0.0 {
                    continue;
                }
                for r in 0..4 {
                    for c in 0..4 {
                        out[r][c] += kab * self.stiff[a][b][r][c];
                    }
                }
            }
        }
        out
    }

    fn gradient(&self, p: [f64; 4]) -> [f64; 2] {
        [
            (-p[0] + p[1] + p[2] - p[3]) / (2.0 * self.hx),
            (-p[0] - p[1] + p[2] + p[3]) / (2.0 * self.hy),
        ]
    }
}

/// Mass contribution `scale · ∫ φ (p − p_prev) v` of an implicit time step.
pub struct MassTerm<'a> {
    pub scale: f64,
    pub porosity: &'a [f64],
    pub previous: &'a [f64],
}

/// Assembled linear system on the free dofs.
pub struct LinearSystem {
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Mesh, boundary treatment and solver structure for one grid and boundary spec.
pub struct Discretization {
    pub grid: StructuredGrid,
    pub bc: BoundarySpec,
    pub dofs: DofMap,
    reference: ReferenceCell,
    solver: BandedSolver,
    /// CSR slot of each local (row, col) pair, or `NO_DOF`.
    slots: Vec<[usize; 16]>,
}

impl Discretization {
    pub fn new(grid: StructuredGrid, bc: BoundarySpec) -> Result<Self> {
        let dofs = DofMap::new(&grid, &bc)?;
        let mut entries = Vec::with_capacity(grid.num_cells() * 16);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let nodes = grid.cell_nodes(i, j);
                for &r in &nodes {
                    for &c in &nodes {
                        let (dr, dc) = (dofs.dof[r], dofs.dof[c]);
                        if dr != NO_DOF && dc != NO_DOF {
                            entries.push((dr, dc));
                        }
                    }
                }
            }
        }
        let pattern = CsrPattern::from_entries(dofs.ndof, entries);
        let mut slots = Vec::with_capacity(grid.num_cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let nodes = grid.cell_nodes(i, j);
                let mut s = [NO_DOF; 16];
                for (a, &r) in nodes.iter().enumerate() {
                    for (b, &c) in nodes.iter().enumerate() {
                        let (dr, dc) = (dofs.dof[r], dofs.dof[c]);
                        if dr != NO_DOF && dc != NO_DOF {
                            s[a * 4 + b] = pattern.position(dr, dc).expect("entry in pattern");
                        }
                    }
                }
                slots.push(s);
            }
        }
        let reference = ReferenceCell::new(grid.hx(), grid.hy());
        Ok(Self { grid, bc, dofs, reference, solver: BandedSolver::new(pattern), slots })
    }

    pub fn ndof(&self) -> usize {
        self.dofs.ndof
    }

    /// Switches to new boundary values with the same boundary structure.
    pub fn rebind(&mut self, bc: BoundarySpec) -> Result<()> {
        let dofs = DofMap::new(&self.grid, &bc)?;
        if dofs.dof != self.dofs.dof {
            return Err(Error::Invalid("rebinding changed the boundary structure".into()));
        }
        self.dofs = dofs;
        self.bc = bc;
        Ok(())
    }

    /// True when the operator has constants in its kernel.
    pub fn needs_pin(&self, with_mass: bool) -> bool {
        !self.dofs.has_fixed && !with_mass
    }

    fn local_nodal(&self, p: &[f64], i: usize, j: usize) -> [f64; 4] {
        let n = self.grid.cell_nodes(i, j);
        [p[n[0]], p[n[1]], p[n[2]], p[n[3]]]
    }

    /// Cell-centre gradients of a nodal field.
    pub fn gradients(&self, p: &[f64]) -> Vec<[f64; 2]> {
        let g = &self.grid;
        let mut out = Vec::with_capacity(g.num_cells());
        for j in 0..g.ny {
            for i in 0..g.nx {
                out.push(self.reference.gradient(self.local_nodal(p, i, j)));
            }
        }
        out
    }

    /// Assembles `∫ K∇p·∇v + mass = ∫ f v − ∫_∂ (u·ν) v` on the free dofs.
    ///
    /// `source` is a per-cell density, `load_factor` scales all prescribed fluxes.
    pub fn assemble(
        &self,
        coef: &[Tensor2],
        source: Option<&[f64]>,
        mass: Option<&MassTerm<'_>>,
        load_factor: f64,
    ) -> LinearSystem {
        let g = &self.grid;
        let pattern = self.solver.pattern();
        let mut values = vec![0.0; pattern.nnz()];
        let mut rhs = vec![0.0; self.dofs.ndof];
        let quarter = 0.25 * g.cell_area();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.cell_index(i, j);
                let nodes = g.cell_nodes(i, j);
                let mut local = self.reference.stiffness(&coef[c]);
                let mut load = [0.0; 4];
                if let Some(f) = source {
                    load = [f[c] * quarter; 4];
                }
                if let Some(m) = mass {
                    let s = m.scale * m.porosity[c];
                    let prev = self.local_nodal(m.previous, i, j);
                    for r in 0..4 {
                        for q in 0..4 {
                            let v = s * self.reference.mass[r][q];
                            local[r][q] += v;
                            load[r] += v * prev[q];
                        }
                    }
                }
                let slots = &self.slots[c];
                for r in 0..4 {
                    let dr = self.dofs.dof[nodes[r]];
                    if dr == NO_DOF {
                        continue;
                    }
                    let mut b = load[r];
                    for q in 0..4 {
                        let v = local[r][q];
                        b -= v * self.dofs.offset[nodes[q]];
                        let slot = slots[r * 4 + q];
                        if slot != NO_DOF {
                            values[slot] += v;
                        }
                    }
                    rhs[dr] += b;
                }
            }
        }
        if load_factor != 0.0 {
            self.add_boundary_loads(&mut rhs, load_factor);
        }
        LinearSystem { values, rhs }
    }

    fn face_nodes(&self, face: Face) -> Vec<usize> {
        let g = &self.grid;
        match face {
            Face::Left => (0..=g.ny).map(|j| g.node_index(0, j)).collect(),
            Face::Right => (0..=g.ny).map(|j| g.node_index(g.nx, j)).collect(),
            Face::Bottom => (0..=g.nx).map(|i| g.node_index(i, 0)).collect(),
            Face::Top => (0..=g.nx).map(|i| g.node_index(i, g.ny)).collect(),
        }
    }

    fn add_boundary_loads(&self, rhs: &mut [f64], factor: f64) {
        for face in Face::ALL {
            let density = match self.bc.face(face) {
                Some(FaceBc::Flux { density }) => density,
                Some(FaceBc::Well { outflow, kind: WellKind::UniformFlux }) => {
                    outflow / face.length(&self.grid)
                }
                Some(FaceBc::Well { outflow, kind: WellKind::Equipotential }) => {
                    if let Some(d) = self.dofs.well_dof {
                        rhs[d] -= factor * outflow;
                    }
                    continue;
                }
                _ => continue,
            };
            if density == 0.0 {
                continue;
            }
            let nodes = self.face_nodes(face);
            let edge = face.length(&self.grid) / (nodes.len() - 1) as f64;
            for pair in nodes.windows(2) {
                for &n in pair {
                    let d = self.dofs.dof[n];
                    if d != NO_DOF {
                        rhs[d] -= factor * density * 0.5 * edge;
                    }
                }
            }
        }
    }

    /// Solves an assembled system and returns nodal values.
    ///
    /// Problems without fixed nodes or mass are solved up to a constant:
    /// one dof is pinned and the result is shifted to zero mean.
    pub fn solve_system(&self, mut sys: LinearSystem, pinned: bool) -> Result<Vec<f64>> {
        if self.dofs.ndof == 0 {
            return Ok(self.dofs.nodal(&[]));
        }
        if pinned {
            let total: f64 = sys.rhs.iter().sum();
            let scale: f64 = sys.rhs.iter().map(|v| v.abs()).sum::<f64>();
            if total.abs() > 1e-9 * scale.max(f64::MIN_POSITIVE) && total.abs() > 1e-300 {
                return Err(Error::Singular(format!(
                    "incompatible data for a problem determined up to a constant (net source {total:e})"
                )));
            }
            let pattern = self.solver.pattern();
            for r in 0..pattern.n {
                for k in pattern.row_ptr[r]..pattern.row_ptr[r + 1] {
                    if r == 0 || pattern.cols[k] == 0 {
                        sys.values[k] = if r == 0 && pattern.cols[k] == 0 { 1.0 } else { 0.0 };
                    }
                }
            }
            sys.rhs[0] = 0.0;
        }
        let x = self.solver.solve(&sys.values, &sys.rhs)?;
        let mut p = self.dofs.nodal(&x);
        if pinned {
            let mean = self.mean(&p);
            p.iter_mut().for_each(|v| *v -= mean);
        }
        Ok(p)
    }

    /// Domain mean of a nodal field, exact for bilinear interpolation.
    pub fn mean(&self, p: &[f64]) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                s += self.local_nodal(p, i, j).iter().sum::<f64>();
            }
        }
        0.25 * s / g.num_cells() as f64
    }

    /// `∫ φ p` of a nodal field with per-cell porosity.
    pub fn weighted_integral(&self, porosity: &[f64], p: &[f64]) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                s += porosity[g.cell_index(i, j)] * self.local_nodal(p, i, j).iter().sum::<f64>();
            }
        }
        0.25 * s * g.cell_area()
    }

    /// Mean of a nodal field along one face.
    pub fn face_mean(&self, p: &[f64], face: Face) -> f64 {
        let nodes = self.face_nodes(face);
        let m = nodes.len() - 1;
        let s: f64 = nodes.windows(2).map(|w| 0.5 * (p[w[0]] + p[w[1]])).sum();
        s / m as f64
    }

    /// Outward flux through each face (left, right, bottom, top).
    ///
    /// Computed from the unassembled nodal residuals of the steady weak form,
    /// so it is conservative; corner residuals are split between both faces.
    pub fn face_fluxes(&self, coef: &[Tensor2], source: Option<&[f64]>, p: &[f64]) -> [f64; 4] {
        let g = &self.grid;
        let mut residual = vec![0.0; g.num_nodes()];
        let quarter = 0.25 * g.cell_area();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.cell_index(i, j);
                let nodes = g.cell_nodes(i, j);
                let local = self.reference.stiffness(&coef[c]);
                let pl = self.local_nodal(p, i, j);
                for r in 0..4 {
                    let mut s = 0.0;
                    for q in 0..4 {
                        s += local[r][q] * pl[q];
                    }
                    if let Some(f) = source {
                        s -= f[c] * quarter;
                    }
                    residual[nodes[r]] += s;
                }
            }
        }
        let mut out = [0.0; 4];
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                let faces: Vec<Face> = Face::ALL.into_iter().filter(|f| f.contains(g, i, j)).collect();
                if faces.is_empty() {
                    continue;
                }
                let share = -residual[g.node_index(i, j)] / faces.len() as f64;
                for f in faces {
                    out[f.index()] += share;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_stiffness_is_laplacian() {
        let r = ReferenceCell::new(1.0, 1.0);
        let k = r.stiffness(&Tensor2::IDENTITY);
        let expect = [
            [4.0, -1.0, -2.0, -1.0],
            [-1.0, 4.0, -1.0, -2.0],
            [-2.0, -1.0, 4.0, -1.0],
            [-1.0, -2.0, -1.0, 4.0],
        ];
        for a in 0..4 {
            for b in 0..4 {
                assert!((k[a][b] - expect[a][b] / 6.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dof_map_periodic_and_dirichlet() {
        let g = StructuredGrid::new(3, 2, 3.0, 2.0).unwrap();
        let bc = BoundarySpec {
            x: AxisBc::Faces { low: FaceBc::dirichlet(0.0), high: FaceBc::dirichlet(1.0) },
            y: AxisBc::Periodic { jump: 0.5 },
        };
        let d = DofMap::new(&g, &bc).unwrap();
        // interior columns i=1,2 at rows j=0,1 are free
        assert_eq!(d.ndof, 4);
        let top = g.node_index(1, 2);
        let bottom = g.node_index(1, 0);
        assert_eq!(d.dof[top], d.dof[bottom]);
        assert_eq!(d.offset[top], 0.5);
        // corners are Dirichlet
        assert_eq!(d.dof[g.node_index(3, 2)], NO_DOF);
        assert_eq!(d.offset[g.node_index(3, 2)], 1.0);
    }

    #[test]
    fn double_periodic_corner_offsets() {
        let g = StructuredGrid::new(2, 2, 1.0, 1.0).unwrap();
        let bc = BoundarySpec::periodic_gradient(&g, [2.0, 3.0]);
        let d = DofMap::new(&g, &bc).unwrap();
        assert_eq!(d.ndof, 4);
        assert!(!d.has_fixed);
        assert_eq!(d.offset[g.node_index(2, 2)], 5.0);
        assert_eq!(d.dof[g.node_index(2, 2)], d.dof[g.node_index(0, 0)]);
    }

    #[test]
    fn equipotential_well_is_one_dof() {
        let g = StructuredGrid::new(3, 3, 1.0, 1.0).unwrap();
        let well = FaceBc::Well { outflow: 1.0, kind: WellKind::Equipotential };
        let bc = BoundarySpec::faces(FaceBc::NO_FLUX, well, FaceBc::NO_FLUX, FaceBc::NO_FLUX);
        let d = DofMap::new(&g, &bc).unwrap();
        assert_eq!(d.ndof, 12 + 1);
        let w = d.well_dof.unwrap();
        assert!((0..=3).all(|j| d.dof[g.node_index(3, j)] == w));
    }
}
