//! Run configuration: TOML files layered over named presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{beta_following_k, CompressibleSetup, IncompressibleSetup, TransientSetup};
use crate::fem::Face;
use crate::forchheimer::{GPolynomial, Term};
use crate::grid::{
    beta_from_phi_k, generate_permeability, porosity_from_k, BlockPartition, FieldSpec, LayerValues, Pattern,
    ScalarField, StructuredGrid,
};
use crate::solver::{CellLaw, PicardOptions};
use crate::upscaling::{CoarseMethod, FineModel, TableControls, UpscaleOptions, Variant};

pub const PRESETS: [&str; 4] = ["driven", "driven-desk", "pss", "pss-desk"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    /// Coarse blocks along x and y.
    pub mx: usize,
    pub my: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 64, ny: 64, lx: 1.0, ly: 1.0, mx: 4, my: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub pattern: Pattern,
    pub k_min: f64,
    /// `(k_max − k_min)/k_min`
    pub contrast: f64,
    pub layers: usize,
    pub layer_values: LayerValues,
    pub interfaces: Option<Vec<f64>>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            pattern: Pattern::Random,
            k_min: 1.0,
            contrast: 10.0,
            layers: 8,
            layer_values: LayerValues::Alternating,
            interfaces: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    Darcy,
    TwoTerm,
    /// The same `terms` in every cell.
    General,
}

/// Where two-term coefficients come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaRule {
    /// `β_min` everywhere.
    Constant,
    /// Follows the permeability pattern on `[β_min, β_min(1 + ratio)]`.
    FollowK,
    /// `φ/√k`
    PhiK,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LawConfig {
    pub kind: LawKind,
    pub beta: BetaRule,
    pub beta_min: f64,
    pub ratio: f64,
    pub terms: Vec<Term>,
}

impl Default for LawConfig {
    fn default() -> Self {
        Self { kind: LawKind::TwoTerm, beta: BetaRule::FollowK, beta_min: 1.0, ratio: 1.0, terms: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PorosityConfig {
    /// Porosity `scale · k^alpha`.
    pub scale: f64,
    pub alpha: f64,
}

impl Default for PorosityConfig {
    fn default() -> Self {
        Self { scale: 0.1, alpha: 1.0 / 3.0 }
    }
}

/// Boundary setting of the fine and coarse problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    /// Pressure 0 on the left face and 1 on the right face, no flow elsewhere.
    Driven,
    /// Constant-rate production through the well face, no flow elsewhere.
    Pss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub problem: Problem,
    pub rate: f64,
    pub gamma: f64,
    pub well: Face,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { problem: Problem::Pss, rate: 5.0, gamma: 1.0, well: Face::Right }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpscaleConfig {
    pub variant: Variant,
    pub method: CoarseMethod,
    /// Solve the coarse model on blocks split `refine × refine`.
    pub refine: usize,
}

impl Default for UpscaleConfig {
    fn default() -> Self {
        Self { variant: Variant::I, method: CoarseMethod::Numerical, refine: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransientConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Initial perturbation relative to the largest basic-profile value.
    pub perturbation: f64,
}

impl Default for TransientConfig {
    fn default() -> Self {
        Self { dt: 0.01, t_end: 1.0, perturbation: 0.5 }
    }
}

/// Parameters swept by `compare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Spread `Δβ/β_min`; zero is the Darcy column.
    pub ratios: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Cell aspect ratios `lx/ly` of random fields.
    pub aspects: Vec<f64>,
    pub patterns: Vec<Pattern>,
    pub variants: Vec<Variant>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.0, 1.0, 10.0, 100.0],
            alphas: vec![1.0 / 3.0, 0.25, 0.2],
            aspects: vec![1.0],
            patterns: Vec::new(),
            variants: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub vtk: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub seed: u64,
    /// Worker threads; all cores when unset.
    pub workers: Option<usize>,
    pub grid: GridConfig,
    pub field: FieldConfig,
    pub law: LawConfig,
    pub porosity: PorosityConfig,
    pub flow: FlowConfig,
    pub solver: PicardOptions,
    pub table: TableControls,
    pub upscale: UpscaleConfig,
    pub transient: TransientConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            seed: 1,
            workers: None,
            grid: GridConfig::default(),
            field: FieldConfig::default(),
            law: LawConfig::default(),
            porosity: PorosityConfig::default(),
            flow: FlowConfig::default(),
            solver: PicardOptions::default(),
            table: TableControls::default(),
            upscale: UpscaleConfig::default(),
            transient: TransientConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig { dir: None, vtk: true },
        }
    }
}

fn driven(c: &mut RunConfig, n: usize, m: usize) {
    c.grid = GridConfig { nx: n, ny: n, lx: 1.0, ly: 1.0, mx: m, my: m };
    c.field.pattern = Pattern::HorizontalStratified;
    // two layers per block keep every block heterogeneous
    c.field.layers = 2 * m;
    c.law = LawConfig { kind: LawKind::TwoTerm, beta: BetaRule::FollowK, beta_min: 8e-6, ratio: 1.0, terms: Vec::new() };
    c.porosity = PorosityConfig { scale: 0.2, alpha: 0.0 };
    c.flow.problem = Problem::Driven;
    c.upscale.refine = 1;
    c.sweep.aspects = vec![0.1, 1.0, 10.0];
    c.sweep.patterns = vec![Pattern::HorizontalStratified, Pattern::VerticalStratified, Pattern::Random];
}

fn compressible(c: &mut RunConfig, n: usize, m: usize) {
    c.grid = GridConfig { nx: n, ny: n, lx: 1.0, ly: 1.0, mx: m, my: m };
    c.field.pattern = Pattern::VerticalStratified;
    c.field.layers = 16 * m;
    c.law = LawConfig { kind: LawKind::TwoTerm, beta: BetaRule::PhiK, beta_min: 0.0, ratio: 0.0, terms: Vec::new() };
    c.porosity = PorosityConfig { scale: 0.1, alpha: 1.0 / 3.0 };
    c.flow = FlowConfig { problem: Problem::Pss, rate: 5.0, gamma: 1.0, well: Face::Right };
    c.upscale.refine = 8;
    c.sweep.patterns = Pattern::ALL.to_vec();
    c.sweep.variants = Variant::ALL.to_vec();
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = RunConfig { preset: Some(name.to_string()), ..RunConfig::default() };
        match name {
            "driven" => driven(&mut c, 400, 20),
            "driven-desk" => driven(&mut c, 100, 10),
            "pss" => compressible(&mut c, 256, 4),
            "pss-desk" => compressible(&mut c, 64, 2),
            _ => {
                return Err(Error::Config(format!("unknown preset `{name}` (known: {})", PRESETS.join(", "))));
            }
        }
        Ok(c)
    }

    /// Parses TOML text; a top-level `preset` key selects the base the text overrides.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let overrides = serde_json::to_value(&table).map_err(|e| Error::Config(e.to_string()))?;
        let base = match table.get("preset") {
            Some(toml::Value::String(name)) => RunConfig::preset(name)?,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => RunConfig::default(),
        };
        let mut merged = serde_json::to_value(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, overrides);
        let config: RunConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&crate::io::read(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let g = &self.grid;
        if g.nx == 0 || g.ny == 0 || g.mx == 0 || g.my == 0 {
            return bad("grid and block counts must be positive".into());
        }
        if g.nx % g.mx != 0 || g.ny % g.my != 0 {
            return bad(format!("a {}x{} grid cannot be split into {}x{} blocks", g.nx, g.ny, g.mx, g.my));
        }
        if !(g.lx > 0.0 && g.ly > 0.0 && g.lx.is_finite() && g.ly.is_finite()) {
            return bad("domain lengths must be positive".into());
        }
        let f = &self.field;
        if !(f.k_min > 0.0) || !(f.contrast >= 0.0) || !f.contrast.is_finite() {
            return bad("field needs k_min > 0 and a finite contrast >= 0".into());
        }
        if f.layers == 0 {
            return bad("layers must be positive".into());
        }
        let l = &self.law;
        if !(l.beta_min >= 0.0) || !(l.ratio >= 0.0) || self.sweep.ratios.iter().any(|r| !(*r >= 0.0)) {
            return bad("beta_min and ratios must be nonnegative".into());
        }
        if l.kind == LawKind::General {
            GPolynomial::new(l.terms.clone()).map_err(|e| Error::Config(format!("law terms: {e}")))?;
        }
        if !(self.porosity.scale > 0.0) || !self.porosity.alpha.is_finite() || self.sweep.alphas.iter().any(|a| !a.is_finite()) {
            return bad("porosity needs scale > 0 and finite exponents".into());
        }
        if !(self.flow.gamma > 0.0) || !self.flow.rate.is_finite() {
            return bad("flow needs gamma > 0 and a finite rate".into());
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return bad("solver tolerance and iteration cap must be positive".into());
        }
        let t = &self.table;
        if !(t.eps_level > 0.0 && t.eps > 0.0 && t.eps_slope > 0.0) || t.max_levels < 2 {
            return bad("table tolerances must be positive and max_levels at least 2".into());
        }
        if let (Some(a), Some(b)) = (t.eta1, t.eta2) {
            if !(0.0 < a && a < b) {
                return bad(format!("table needs 0 < eta1 < eta2, got {a} and {b}"));
            }
        }
        if self.upscale.refine == 0 {
            return bad("refine must be positive".into());
        }
        let tr = &self.transient;
        if !(tr.dt > 0.0) || !(tr.t_end >= tr.dt) || !tr.perturbation.is_finite() {
            return bad("transient needs dt > 0 and t_end >= dt".into());
        }
        if self.sweep.aspects.iter().any(|a| !(*a > 0.0)) {
            return bad("aspect ratios must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        Ok(())
    }

    pub fn fine_grid(&self) -> Result<StructuredGrid> {
        StructuredGrid::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)
    }

    pub fn partition(&self) -> Result<BlockPartition> {
        BlockPartition::new(self.fine_grid()?, self.grid.mx, self.grid.my)
    }

    pub fn field_spec(&self) -> FieldSpec {
        let f = &self.field;
        FieldSpec {
            pattern: f.pattern,
            k_min: f.k_min,
            contrast: f.contrast,
            layer_count: f.layers,
            seed: self.seed,
            layer_values: f.layer_values,
            interfaces: f.interfaces.clone(),
        }
    }

    pub fn permeability(&self) -> Result<ScalarField> {
        generate_permeability(&self.fine_grid()?, &self.field_spec())
    }

    pub fn porosity(&self, k: &ScalarField) -> Result<ScalarField> {
        porosity_from_k(k, self.porosity.alpha, self.porosity.scale)
    }

    /// Per-cell two-term coefficients, when the law has them.
    pub fn beta(&self, k: &ScalarField, phi: &ScalarField) -> Result<Option<ScalarField>> {
        if self.law.kind != LawKind::TwoTerm {
            return Ok(None);
        }
        Ok(Some(match self.law.beta {
            BetaRule::Constant => ScalarField::constant(k.grid, self.law.beta_min),
            BetaRule::FollowK => beta_following_k(k, self.law.beta_min, self.law.ratio),
            BetaRule::PhiK => beta_from_phi_k(phi, k)?,
        }))
    }

    /// Cell law from the configured kind; `beta` is required for two-term laws.
    pub fn cell_law(&self, cells: usize, beta: Option<&ScalarField>) -> Result<CellLaw> {
        match self.law.kind {
            LawKind::Darcy => Ok(CellLaw::Darcy),
            LawKind::TwoTerm => {
                let beta = beta.ok_or_else(|| Error::Config("two-term law needs beta values".into()))?;
                Ok(CellLaw::two_term(beta))
            }
            LawKind::General => Ok(CellLaw::General(vec![GPolynomial::new(self.law.terms.clone())?; cells])),
        }
    }

    pub fn fine_model(&self) -> Result<FineModel> {
        let k = self.permeability()?;
        let phi = self.porosity(&k)?;
        let beta = self.beta(&k, &phi)?;
        let law = self.cell_law(k.grid.num_cells(), beta.as_ref())?;
        FineModel::new(k, phi, law)
    }

    pub fn upscale_options(&self) -> UpscaleOptions {
        UpscaleOptions {
            variant: self.upscale.variant,
            method: self.upscale.method,
            table: self.table.clone(),
            picard: self.solver,
            workers: self.workers,
        }
    }

    /// Setup of the driven-flow error table for one field pattern and cell aspect ratio.
    pub fn incompressible_setup(&self, pattern: Pattern, aspect: f64) -> Result<IncompressibleSetup> {
        let g = &self.grid;
        Ok(IncompressibleSetup {
            fine: StructuredGrid::new(g.nx, g.ny, g.ly * aspect * g.nx as f64 / g.ny as f64, g.ly)?,
            mx: g.mx,
            my: g.my,
            field: FieldSpec { pattern, ..self.field_spec() },
            beta_min: self.law.beta_min,
            ratios: self.sweep.ratios.clone(),
            table: self.table.clone(),
            picard: self.solver,
            refine: self.upscale.refine,
            workers: self.workers,
        })
    }

    /// Setup of the basic-profile comparison; the law follows `law.kind` (two-term uses `φ/√k`).
    pub fn compressible_setup(&self, pattern: Pattern, variant: Variant) -> Result<CompressibleSetup> {
        if self.law.kind == LawKind::General {
            return Err(Error::Config("the PI study supports darcy and two-term laws".into()));
        }
        Ok(CompressibleSetup {
            fine: self.fine_grid()?,
            mx: self.grid.mx,
            my: self.grid.my,
            field: FieldSpec { pattern, ..self.field_spec() },
            alpha: self.porosity.alpha,
            phi_scale: self.porosity.scale,
            forchheimer: self.law.kind == LawKind::TwoTerm,
            rate: self.flow.rate,
            gamma: self.flow.gamma,
            well: self.flow.well,
            variant,
            refine: self.upscale.refine,
            table: self.table.clone(),
            picard: self.solver,
            workers: self.workers,
        })
    }

    pub fn transient_setup(&self) -> Result<TransientSetup> {
        Ok(TransientSetup {
            base: self.compressible_setup(self.field.pattern, self.upscale.variant)?,
            dt: self.transient.dt,
            t_end: self.transient.t_end,
            perturbation: self.transient.perturbation,
        })
    }

    pub fn swept_patterns(&self) -> Vec<Pattern> {
        if self.sweep.patterns.is_empty() {
            vec![self.field.pattern]
        } else {
            self.sweep.patterns.clone()
        }
    }

    pub fn swept_variants(&self) -> Vec<Variant> {
        if self.sweep.variants.is_empty() {
            vec![self.upscale.variant]
        } else {
            self.sweep.variants.clone()
        }
    }
}

/// Recursively overlays `patch` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            let c = RunConfig::preset(p).unwrap();
            c.validate().unwrap();
            assert_eq!(c.preset.as_deref(), Some(p));
        }
        assert!(RunConfig::preset("unknown").is_err());
        let c = RunConfig::preset("driven").unwrap();
        assert_eq!((c.grid.nx, c.grid.mx), (400, 20));
        let c = RunConfig::preset("pss").unwrap();
        assert_eq!((c.grid.nx / c.grid.mx, c.grid.mx), (64, 4));
    }

    #[test]
    fn file_overrides_preset() {
        let c = RunConfig::from_toml_str(
            "preset = \"pss-desk\"\nseed = 9\n[upscale]\nvariant = \"iv\"\n[table]\neps = 1e-4\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.upscale.variant, Variant::Iv);
        assert_eq!(c.upscale.refine, 8);
        assert_eq!(c.table.eps, 1e-4);
        assert_eq!(c.table.eps_level, 0.1);
        assert_eq!(c.grid.nx, 64);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_toml_str("[grid]\nnx = 10\nmx = 3\n").is_err());
        assert!(RunConfig::from_toml_str("[solver]\ntol = 0\n").is_err());
        assert!(RunConfig::from_toml_str("[upscale]\nvariant = \"v\"\n").is_err());
        assert!(RunConfig::from_toml_str("[grid]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("preset = 3\n").is_err());
        assert!(RunConfig::from_toml_str("[table]\neta1 = 2.0\neta2 = 1.0\n").is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = RunConfig::preset("pss-desk").unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
        let other = RunConfig { seed: c.seed + 1, ..c.clone() };
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn seed_drives_random_fields() {
        let mut c = RunConfig { grid: GridConfig { nx: 8, ny: 8, mx: 2, my: 2, ..GridConfig::default() }, ..RunConfig::default() };
        let a = c.permeability().unwrap();
        assert_eq!(a, c.permeability().unwrap());
        c.seed += 1;
        assert_ne!(a, c.permeability().unwrap());
    }

    #[test]
    fn law_kinds() {
        let mut c = RunConfig { grid: GridConfig { nx: 4, ny: 4, mx: 2, my: 2, ..GridConfig::default() }, ..RunConfig::default() };
        c.law.kind = LawKind::Darcy;
        assert!(c.fine_model().unwrap().law.is_darcy());
        c.law.kind = LawKind::General;
        c.law.terms = vec![Term { a: 0.5, alpha: 1.0 }];
        assert!(matches!(c.fine_model().unwrap().law, CellLaw::General(_)));
        c.law.kind = LawKind::TwoTerm;
        c.law.beta = BetaRule::Constant;
        c.law.beta_min = 0.25;
        let CellLaw::TwoTerm(b) = c.fine_model().unwrap().law else { panic!() };
        assert!(b.iter().all(|&x| x == 0.25));
    }
}
