//! Structured rectangular grids, cell fields and permeability generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangle `[x0, x0+lx] × [y0, y0+ly]` split into `nx × ny` equal cells.
///
/// Cells are numbered row-major, `c = j·nx + i`; nodes `n = j·(nx+1) + i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredGrid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub y0: f64,
}

impl StructuredGrid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::with_origin(nx, ny, lx, ly, 0.0, 0.0)
    }

    pub fn with_origin(nx: usize, ny: usize, lx: f64, ly: f64, x0: f64, y0: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Invalid(format!("grid needs at least one cell, got {nx}x{ny}")));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Invalid(format!("grid lengths must be positive, got {lx} x {ly}")));
        }
        Ok(Self { nx, ny, lx, ly, x0, y0 })
    }

    pub fn unit_square(n: usize) -> Self {
        Self::new(n, n, 1.0, 1.0).expect("positive size")
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.x0 + (i as f64 + 0.5) * self.hx(),
            self.y0 + (j as f64 + 0.5) * self.hy(),
        ]
    }

    pub fn node_position(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.x0 + i as f64 * self.hx(),
            self.y0 + j as f64 * self.hy(),
        ]
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x0 + 0.5 * self.lx, self.y0 + 0.5 * self.ly]
    }

    /// Corner nodes of cell `(i, j)` counter-clockwise from the lower left.
    pub fn cell_nodes(&self, i: usize, j: usize) -> [usize; 4] {
        let n0 = self.node_index(i, j);
        let row = self.nx + 1;
        [n0, n0 + 1, n0 + row + 1, n0 + row]
    }

    /// Same grid shape subdivided `r` times in each direction.
    pub fn refined(&self, r: usize) -> Result<Self> {
        Self::with_origin(self.nx * r, self.ny * r, self.lx, self.ly, self.x0, self.y0)
    }

    pub fn cell_centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| self.cell_center(i, j)))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }
}

/// One value per cell of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: StructuredGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: StructuredGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_cells() {
            return Err(Error::Invalid(format!(
                "field has {} values for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: StructuredGrid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.num_cells()] }
    }

    pub fn from_fn(grid: StructuredGrid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = grid.cell_centers().map(f).collect();
        Self { grid, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.cell_index(i, j)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Area-weighted mean; cells are equal so this is the plain mean.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn require_positive(&self, name: &str) -> Result<()> {
        match self.values.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            Some(c) => Err(Error::Domain(format!(
                "{name} must be positive, cell {c} has {}",
                self.values[c]
            ))),
            None => Ok(()),
        }
    }
}

/// Split of a fine grid into `mx × my` coarse blocks of whole cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub fine: StructuredGrid,
    pub mx: usize,
    pub my: usize,
}

impl BlockPartition {
    pub fn new(fine: StructuredGrid, mx: usize, my: usize) -> Result<Self> {
        if mx == 0 || my == 0 || fine.nx % mx != 0 || fine.ny % my != 0 {
            return Err(Error::Invalid(format!(
                "a {}x{} fine grid cannot be split into {mx}x{my} blocks",
                fine.nx, fine.ny
            )));
        }
        Ok(Self { fine, mx, my })
    }

    pub fn num_blocks(&self) -> usize {
        self.mx * self.my
    }

    /// Fine cells per block along x and y.
    pub fn block_cells(&self) -> (usize, usize) {
        (self.fine.nx / self.mx, self.fine.ny / self.my)
    }

    pub fn coarse_grid(&self) -> StructuredGrid {
        StructuredGrid { nx: self.mx, ny: self.my, ..self.fine }
    }

    /// Grid of block `b` (row-major over blocks) with its true origin.
    pub fn block_grid(&self, b: usize) -> StructuredGrid {
        let (bi, bj) = (b % self.mx, b / self.mx);
        let (cx, cy) = self.block_cells();
        let coarse = self.coarse_grid();
        let [x0, y0] = coarse.node_position(bi, bj);
        StructuredGrid { nx: cx, ny: cy, lx: coarse.hx(), ly: coarse.hy(), x0, y0 }
    }

    /// Fine cell indices of block `b`, row-major within the block.
    pub fn block_cell_indices(&self, b: usize) -> Vec<usize> {
        let (bi, bj) = (b % self.mx, b / self.mx);
        let (cx, cy) = self.block_cells();
        (0..cy)
            .flat_map(|j| (0..cx).map(move |i| (i, j)))
            .map(|(i, j)| self.fine.cell_index(bi * cx + i, bj * cy + j))
            .collect()
    }

    /// Block containing fine cell `c`.
    pub fn block_of_cell(&self, c: usize) -> usize {
        let (i, j) = (c % self.fine.nx, c / self.fine.nx);
        let (cx, cy) = self.block_cells();
        (j / cy) * self.mx + i / cx
    }

    pub fn extract(&self, field: &[f64], b: usize) -> Vec<f64> {
        self.block_cell_indices(b).into_iter().map(|c| field[c]).collect()
    }
}

/// Spatial layout of a generated permeability field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    /// Layers stacked along x₁; values depend on x₁ only.
    VerticalStratified,
    /// Layers stacked along x₂; values depend on x₂ only.
    HorizontalStratified,
    Random,
    Linear,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::VerticalStratified,
        Pattern::HorizontalStratified,
        Pattern::Random,
        Pattern::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::VerticalStratified => "vertical-stratified",
            Pattern::HorizontalStratified => "horizontal-stratified",
            Pattern::Random => "random",
            Pattern::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown field pattern `{s}`")))
    }
}

/// How layer values are chosen in a stratified field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerValues {
    /// Lowest and highest value in turn, starting from the lowest.
    #[default]
    Alternating,
    /// Independent uniform draws per layer, rescaled onto the target range.
    Seeded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub pattern: Pattern,
    pub k_min: f64,
    /// `(max - min) / min` of the generated field.
    pub contrast: f64,
    #[serde(default = "default_layers")]
    pub layer_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub layer_values: LayerValues,
    /// Interior layer interfaces as fractions of the stacking length.
    #[serde(default)]
    pub interfaces: Option<Vec<f64>>,
}

fn default_layers() -> usize {
    2
}

impl FieldSpec {
    pub fn new(pattern: Pattern, k_min: f64, contrast: f64) -> Self {
        Self {
            pattern,
            k_min,
            contrast,
            layer_count: 2,
            seed: 0,
            layer_values: LayerValues::Alternating,
            interfaces: None,
        }
    }

    pub fn layers(mut self, n: usize) -> Self {
        self.layer_count = n;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

pub fn generate_permeability(grid: &StructuredGrid, spec: &FieldSpec) -> Result<ScalarField> {
    if !(spec.k_min > 0.0) || !spec.k_min.is_finite() {
        return Err(Error::Invalid(format!("k_min = {} must be positive", spec.k_min)));
    }
    if !(spec.contrast >= 0.0) || !spec.contrast.is_finite() {
        return Err(Error::Invalid(format!("contrast = {} must be nonnegative", spec.contrast)));
    }
    if spec.layer_count == 0 {
        return Err(Error::Invalid("layer_count must be positive".into()));
    }
    let lo = spec.k_min;
    let hi = spec.k_min * (1.0 + spec.contrast);
    if spec.contrast == 0.0 {
        return Ok(ScalarField::constant(*grid, lo));
    }
    let unit: Vec<f64> = match spec.pattern {
        Pattern::VerticalStratified | Pattern::HorizontalStratified => {
            let vertical = spec.pattern == Pattern::VerticalStratified;
            let cells_along = if vertical { grid.nx } else { grid.ny };
            let layer_of = layer_assignment(cells_along, spec)?;
            let layer_unit = layer_unit_values(spec)?;
            (0..grid.ny)
                .flat_map(|j| (0..grid.nx).map(move |i| (i, j)))
                .map(|(i, j)| layer_unit[layer_of[if vertical { i } else { j }]])
                .collect()
        }
        Pattern::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let raw: Vec<f64> = (0..grid.num_cells()).map(|_| rng.gen::<f64>()).collect();
            normalize_unit(&raw)?
        }
        Pattern::Linear => {
            let raw: Vec<f64> = grid
                .cell_centers()
                .map(|[x, y]| (x - grid.x0) / grid.lx + (y - grid.y0) / grid.ly)
                .collect();
            normalize_unit(&raw)?
        }
    };
    let values = unit.into_iter().map(|t| lo + t * (hi - lo)).collect();
    ScalarField::new(*grid, values)
}

/// Layer index for each cell position along the stacking axis.
fn layer_assignment(cells: usize, spec: &FieldSpec) -> Result<Vec<usize>> {
    let n = spec.layer_count;
    match &spec.interfaces {
        None => {
            if n > cells {
                return Err(Error::Invalid(format!(
                    "{n} layers do not fit in {cells} cells"
                )));
            }
            Ok((0..cells).map(|c| c * n / cells).collect())
        }
        Some(cuts) => {
            if cuts.len() + 1 != n
                || cuts.windows(2).any(|w| w[0] >= w[1])
                || cuts.iter().any(|&c| !(c > 0.0 && c < 1.0))
            {
                return Err(Error::Invalid(format!(
                    "{n} layers need {} increasing interfaces inside (0, 1)",
                    n - 1
                )));
            }
            Ok((0..cells)
                .map(|c| {
                    let t = (c as f64 + 0.5) / cells as f64;
                    cuts.iter().filter(|&&cut| cut <= t).count()
                })
                .collect())
        }
    }
}

fn layer_unit_values(spec: &FieldSpec) -> Result<Vec<f64>> {
    let n = spec.layer_count;
    if n < 2 {
        return Err(Error::Invalid(
            "a stratified field with nonzero contrast needs at least two layers".into(),
        ));
    }
    match spec.layer_values {
        LayerValues::Alternating => Ok((0..n).map(|l| (l % 2) as f64).collect()),
        LayerValues::Seeded => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            normalize_unit(&raw)
        }
    }
}

/// Affine map of `raw` onto `[0, 1]`, hitting both ends.
fn normalize_unit(raw: &[f64]) -> Result<Vec<f64>> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Invalid(
            "field has a single value and cannot carry the requested contrast".into(),
        ));
    }
    Ok(raw
        .iter()
        .map(|&v| if v == hi { 1.0 } else { (v - lo) / (hi - lo) })
        .collect())
}

/// `φ = scale · k^α` per cell.
pub fn porosity_from_k(k: &ScalarField, alpha: f64, scale: f64) -> Result<ScalarField> {
    k.require_positive("permeability")?;
    if !(scale > 0.0) {
        return Err(Error::Invalid(format!("porosity scale {scale} must be positive")));
    }
    Ok(k.map(|v| scale * v.powf(alpha)))
}

/// `β = φ / √k` per cell.
pub fn beta_from_phi_k(phi: &ScalarField, k: &ScalarField) -> Result<ScalarField> {
    if !phi.grid.same_shape(&k.grid) {
        return Err(Error::Invalid("porosity and permeability grids differ".into()));
    }
    k.require_positive("permeability")?;
    let values = phi.values.iter().zip(&k.values).map(|(p, k)| p / k.sqrt()).collect();
    ScalarField::new(phi.grid, values)
}

/// Affine image of `field` onto `[min, min·(1 + ratio)]`, following its pattern.
///
/// A uniform field maps to `min` everywhere.
pub fn rescale_to_range(field: &ScalarField, min: f64, ratio: f64) -> ScalarField {
    let (lo, hi) = (field.min(), field.max());
    if !(hi > lo) {
        return ScalarField::constant(field.grid, min);
    }
    field.map(|v| {
        let t = if v == hi { 1.0 } else { (v - lo) / (hi - lo) };
        min * (1.0 + ratio * t)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_contrast_is_uniform() {
        let g = StructuredGrid::unit_square(6);
        for p in Pattern::ALL {
            let f = generate_permeability(&g, &FieldSpec::new(p, 2.5, 0.0)).unwrap();
            assert!(f.values.iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn two_horizontal_bands() {
        let g = StructuredGrid::unit_square(8);
        let f = generate_permeability(
            &g,
            &FieldSpec::new(Pattern::HorizontalStratified, 1.0, 10.0).layers(2),
        )
        .unwrap();
        for j in 0..8 {
            let expect = if j < 4 { 1.0 } else { 11.0 };
            for i in 0..8 {
                assert_eq!(f.get(i, j), expect);
            }
        }
    }

    #[test]
    fn random_is_deterministic() {
        let g = StructuredGrid::unit_square(12);
        let spec = FieldSpec::new(Pattern::Random, 1.0, 10.0).seed(42);
        let a = generate_permeability(&g, &spec).unwrap();
        let b = generate_permeability(&g, &spec).unwrap();
        assert_eq!(a, b);
        let c = generate_permeability(&g, &spec.clone().seed(43)).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.min(), 1.0);
        assert_eq!(a.max(), 11.0);
    }

    #[test]
    fn linear_is_affine() {
        let g = StructuredGrid::new(5, 4, 2.0, 1.0).unwrap();
        let f = generate_permeability(&g, &FieldSpec::new(Pattern::Linear, 1.0, 3.0)).unwrap();
        // second differences vanish along both axes
        for j in 0..4 {
            for i in 1..4 {
                let d = f.get(i + 1, j) - 2.0 * f.get(i, j) + f.get(i - 1, j);
                assert!(d.abs() < 1e-12);
            }
        }
        assert!((f.min() - 1.0).abs() < 1e-14 && (f.max() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn explicit_interfaces() {
        let g = StructuredGrid::new(10, 1, 1.0, 1.0).unwrap();
        let mut spec = FieldSpec::new(Pattern::VerticalStratified, 1.0, 1.0).layers(2);
        spec.interfaces = Some(vec![0.3]);
        let f = generate_permeability(&g, &spec).unwrap();
        assert_eq!(f.values.iter().filter(|&&v| v == 1.0).count(), 3);
        spec.interfaces = Some(vec![0.3, 0.2]);
        assert!(generate_permeability(&g, &spec).is_err());
    }

    #[test]
    fn invalid_specs() {
        let g = StructuredGrid::unit_square(4);
        assert!(generate_permeability(&g, &FieldSpec::new(Pattern::Random, 1.0, 1.0).layers(0)).is_err());
        assert!(generate_permeability(
            &g,
            &FieldSpec::new(Pattern::VerticalStratified, 1.0, 1.0).layers(5)
        )
        .is_err());
        assert!("diagonal".parse::<Pattern>().is_err());
        assert_eq!("random".parse::<Pattern>().unwrap(), Pattern::Random);
    }

    #[test]
    fn porosity_examples() {
        let g = StructuredGrid::unit_square(1);
        let phi = |k: f64, a: f64| porosity_from_k(&ScalarField::constant(g, k), a, 0.1).unwrap().values[0];
        assert!((phi(1.0, 1.0 / 3.0) - 0.1).abs() < 1e-15);
        assert!((phi(8.0, 1.0 / 3.0) - 0.2).abs() < 1e-15);
        assert!((phi(16.0, 0.25) - 0.2).abs() < 1e-15);
        assert!(porosity_from_k(&ScalarField::constant(g, -1.0), 0.25, 0.1).is_err());
    }

    #[test]
    fn beta_examples() {
        let g = StructuredGrid::unit_square(1);
        let b = |phi: f64, k: f64| {
            beta_from_phi_k(&ScalarField::constant(g, phi), &ScalarField::constant(g, k)).unwrap().values[0]
        };
        assert!((b(0.1, 1.0) - 0.1).abs() < 1e-15);
        assert!((b(0.2, 4.0) - 0.1).abs() < 1e-15);
        assert!((b(0.2, 0.04) - 1.0).abs() < 1e-14);
        let other = StructuredGrid::unit_square(2);
        assert!(beta_from_phi_k(&ScalarField::constant(g, 0.1), &ScalarField::constant(other, 1.0)).is_err());
    }

    #[test]
    fn partition_geometry() {
        let g = StructuredGrid::new(6, 4, 3.0, 2.0).unwrap();
        assert!(BlockPartition::new(g, 4, 2).is_err());
        let p = BlockPartition::new(g, 3, 2).unwrap();
        let bg = p.block_grid(4);
        assert_eq!((bg.nx, bg.ny), (2, 2));
        assert_eq!((bg.x0, bg.y0), (1.0, 1.0));
        let cells = p.block_cell_indices(4);
        assert_eq!(cells, vec![14, 15, 20, 21]);
        assert!(cells.iter().all(|&c| p.block_of_cell(c) == 4));
    }

    proptest! {
        #[test]
        fn stratified_constant_along_layers(n in 2usize..12, layers in 2usize..6, seed in 0u64..100, contrast in 0.1..50.0f64) {
            prop_assume!(layers <= n);
            let g = StructuredGrid::new(n, n + 1, 1.0, 2.0).unwrap();
            let mut spec = FieldSpec::new(Pattern::VerticalStratified, 0.5, contrast).layers(layers).seed(seed);
            spec.layer_values = LayerValues::Seeded;
            let v = generate_permeability(&g, &spec).unwrap();
            for j in 0..g.ny { for i in 0..n { prop_assert_eq!(v.get(i, j), v.get(i, 0)); } }
            prop_assert!(((v.max() - v.min()) / v.min() - contrast).abs() <= 1e-12 * contrast);
            spec.pattern = Pattern::HorizontalStratified;
            let h = generate_permeability(&g, &spec).unwrap();
            for j in 0..g.ny { for i in 0..n { prop_assert_eq!(h.get(i, j), h.get(0, j)); } }
        }

        #[test]
        fn beta_decreases_with_k(k1 in 0.1..100.0f64, dk in 0.01..100.0f64) {
            let g = StructuredGrid::new(2, 1, 1.0, 1.0).unwrap();
            let k = ScalarField::new(g, vec![k1, k1 + dk]).unwrap();
            let phi = porosity_from_k(&k, 0.25, 0.1).unwrap();
            prop_assert!(phi.values[1] >= phi.values[0]);
            let beta = beta_from_phi_k(&phi, &k).unwrap();
            prop_assert!(beta.values[1] <= beta.values[0]);
        }
    }
}
