//! Tabulated upscaled mobility `G*(ξ)` on an adaptive tensor grid.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BlockData;
use crate::error::{Error, Result};
use crate::fem::{BoundarySpec, BoundaryValue, Discretization, Tensor2};
use crate::solver::{solve_steady, CellLaw, FlowModel, MobilityModel, PicardOptions};

/// Boundary data of the local problems that sample `G*`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingBc {
    /// `p = ξ·x + p̃` with `p̃` periodic on the block.
    #[default]
    PeriodicFluctuation,
    /// `p = ξ·x` on the whole block boundary.
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableControls {
    /// Largest accepted relative drop of the diagonal value between levels.
    pub eps_level: f64,
    /// Stop once the diagonal value falls below this...
    pub eps: f64,
    /// ...and the diagonal slope is below this.
    pub eps_slope: f64,
    /// First and second level; defaults scale with `1/(a_max k_max)`.
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    /// Levels are not proposed beyond this gradient.
    pub eta_max: Option<f64>,
    /// Gradients that must appear as levels.
    pub anchors: Vec<f64>,
    pub max_levels: usize,
    pub max_bisections: usize,
    pub sampling: SamplingBc,
}

impl Default for TableControls {
    fn default() -> Self {
        Self {
            eps_level: 0.1,
            eps: 1e-3,
            eps_slope: 1e-4,
            eta1: None,
            eta2: None,
            eta_max: None,
            anchors: Vec::new(),
            max_levels: 64,
            max_bisections: 20,
            sampling: SamplingBc::PeriodicFluctuation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Linear block: the table is identically one.
    Degenerate,
    /// Value and slope tolerances met.
    Converged,
    /// Reached the configured largest level.
    EtaMax,
    /// Level cap hit before any stopping rule.
    LevelCap,
}

impl StopReason {
    fn name(self) -> &'static str {
        match self {
            StopReason::Degenerate => "degenerate",
            StopReason::Converged => "converged",
            StopReason::EtaMax => "eta-max",
            StopReason::LevelCap => "level-cap",
        }
    }
}

/// `G*` on `ξ₁ ∈ {−η_N … η_N}`, `ξ₂ ∈ {0 … η_N}`; the rest follows from `G*(ξ) = G*(−ξ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GStarTable {
    /// `0 = η₀ < η₁ < … < η_N`
    pub levels: Vec<f64>,
    /// Row-major: row `j` is `ξ₂ = η_j`, column `i` is `ξ₁ = axis[i]`.
    pub values: Vec<f64>,
    pub stop: StopReason,
    /// Linear response tensor of the sampling problems, `⟨u⟩ = −K ξ` for Darcy flow.
    pub reference: Tensor2,
    pub controls: TableControls,
}

impl GStarTable {
    /// Table of a linear block.
    pub fn unit() -> Self {
        Self {
            levels: vec![0.0],
            values: vec![1.0],
            stop: StopReason::Degenerate,
            reference: Tensor2::IDENTITY,
            controls: TableControls::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.levels.len() - 1
    }

    /// `ξ₁` sample positions `−η_N … 0 … η_N`.
    pub fn axis(&self) -> Vec<f64> {
        let n = self.n();
        (0..=2 * n)
            .map(|i| if i < n { -self.levels[n - i] } else { self.levels[i - n] })
            .collect()
    }

    pub fn value_at(&self, i: usize, j: usize) -> f64 {
        self.values[j * (2 * self.n() + 1) + i]
    }

    /// Stored diagonal values `G*(η_n, η_n)`.
    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.n();
        (0..=n).map(|j| self.value_at(n + j, j)).collect()
    }

    pub fn is_unit(&self) -> bool {
        self.values.iter().all(|&v| v == 1.0)
    }

    /// True when `ξ` lies inside the sampled square.
    pub fn covers(&self, xi: [f64; 2]) -> bool {
        let m = *self.levels.last().expect("nonempty levels");
        xi[0].abs() <= m && xi[1].abs() <= m
    }

    /// Bilinear interpolation, symmetric under `ξ → −ξ` and clamped outside the samples.
    pub fn eval(&self, xi: [f64; 2]) -> Result<f64> {
        if self.values.is_empty() {
            return Err(Error::Invalid("empty G* table".into()));
        }
        if !xi[0].is_finite() || !xi[1].is_finite() {
            return Err(Error::Domain(format!("non-finite gradient ({}, {})", xi[0], xi[1])));
        }
        let n = self.n();
        if n == 0 {
            return Ok(self.values[0]);
        }
        let [x, y] = if xi[1] < 0.0 || (xi[1] == 0.0 && xi[0] < 0.0) { [-xi[0], -xi[1]] } else { xi };
        let y = if y == 0.0 { 0.0 } else { y };
        let axis = self.axis();
        let (i, tx) = locate(&axis, x);
        let (j, ty) = locate(&self.levels, y);
        let w = 2 * n + 1;
        let v = |jj: usize, ii: usize| self.values[jj * w + ii];
        let lower = (1.0 - tx) * v(j, i) + tx * v(j, i + 1);
        let upper = (1.0 - tx) * v(j + 1, i) + tx * v(j + 1, i + 1);
        Ok((1.0 - ty) * lower + ty * upper)
    }

    pub fn to_csv_string(&self) -> String {
        let c = &self.controls;
        let mut s = String::new();
        let _ = writeln!(s, "# gstar-table");
        let _ = writeln!(
            s,
            "# eps_level={:e} eps={:e} eps_slope={:e} max_levels={} sampling={}",
            c.eps_level,
            c.eps,
            c.eps_slope,
            c.max_levels,
            match c.sampling {
                SamplingBc::PeriodicFluctuation => "periodic-fluctuation",
                SamplingBc::Dirichlet => "dirichlet",
            }
        );
        let levels: Vec<String> = self.levels.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "# levels={}", levels.join(";"));
        let r = self.reference.0;
        let _ = writeln!(s, "# reference={:e};{:e};{:e};{:e}", r[0][0], r[0][1], r[1][0], r[1][1]);
        let _ = writeln!(s, "# stop={}", self.stop.name());
        s.push_str("xi1,xi2,gstar\n");
        let axis = self.axis();
        for (j, y) in self.levels.iter().enumerate() {
            for (i, x) in axis.iter().enumerate() {
                let _ = writeln!(s, "{x:e},{y:e},{:e}", self.value_at(i, j));
            }
        }
        s
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut controls = TableControls::default();
        let mut levels = None;
        let mut reference = Tensor2::IDENTITY;
        let mut stop = StopReason::Converged;
        let mut values = Vec::new();
        let parse = |line: usize, v: &str| -> Result<f64> {
            v.trim().parse::<f64>().map_err(|e| Error::Parse { line, message: format!("`{v}`: {e}") })
        };
        for (ln, raw) in text.lines().enumerate() {
            let line = ln + 1;
            if let Some(meta) = raw.strip_prefix('#') {
                for item in meta.split_whitespace() {
                    let Some((key, val)) = item.split_once('=') else { continue };
                    match key {
                        "eps_level" => controls.eps_level = parse(line, val)?,
                        "eps" => controls.eps = parse(line, val)?,
                        "eps_slope" => controls.eps_slope = parse(line, val)?,
                        "max_levels" => controls.max_levels = parse(line, val)? as usize,
                        "sampling" => {
                            controls.sampling = if val == "dirichlet" { SamplingBc::Dirichlet } else { SamplingBc::PeriodicFluctuation }
                        }
                        "levels" => {
                            levels = Some(val.split(';').map(|v| parse(line, v)).collect::<Result<Vec<f64>>>()?)
                        }
                        "reference" => {
                            let r = val.split(';').map(|v| parse(line, v)).collect::<Result<Vec<f64>>>()?;
                            if r.len() != 4 {
                                return Err(Error::Parse { line, message: "reference needs 4 entries".into() });
                            }
                            reference = Tensor2([[r[0], r[1]], [r[2], r[3]]]);
                        }
                        "stop" => {
                            stop = match val {
                                "degenerate" => StopReason::Degenerate,
                                "eta-max" => StopReason::EtaMax,
                                "level-cap" => StopReason::LevelCap,
                                _ => StopReason::Converged,
                            }
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if raw.trim().is_empty() || raw.starts_with("xi1") {
                continue;
            }
            let cols: Vec<&str> = raw.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Parse { line, message: "expected xi1,xi2,gstar".into() });
            }
            values.push(parse(line, cols[2])?);
        }
        let levels = levels.ok_or(Error::Parse { line: 0, message: "missing levels header".into() })?;
        let n = levels.len().saturating_sub(1);
        if levels.is_empty() || values.len() != (n + 1) * (2 * n + 1) {
            return Err(Error::Parse { line: 0, message: "table size does not match its levels".into() });
        }
        Ok(Self { levels, values, stop, reference, controls })
    }
}

/// Interval index and local coordinate of `x` in the sorted `nodes`, clamped.
fn locate(nodes: &[f64], x: f64) -> (usize, f64) {
    let last = nodes.len() - 1;
    if x <= nodes[0] {
        return (0, 0.0);
    }
    if x >= nodes[last] {
        return (last - 1, 1.0);
    }
    let k = nodes.partition_point(|&v| v <= x) - 1;
    (k, (x - nodes[k]) / (nodes[k + 1] - nodes[k]))
}

/// Solves block problems with mean gradient `ξ`, warm-starting from the previous one.
struct Sampler<'a> {
    block: &'a BlockData,
    model: FlowModel,
    disc: Discretization,
    sampling: SamplingBc,
    picard: PicardOptions,
    last: Option<([f64; 2], Vec<f64>)>,
}

impl<'a> Sampler<'a> {
    fn new(block: &'a BlockData, model: FlowModel, sampling: SamplingBc, picard: PicardOptions) -> Result<Self> {
        let disc = Discretization::new(block.grid, Self::bc_for(block, sampling, [0.0, 0.0]))?;
        Ok(Self { block, model, disc, sampling, picard, last: None })
    }

    fn bc_for(block: &BlockData, sampling: SamplingBc, xi: [f64; 2]) -> BoundarySpec {
        match sampling {
            SamplingBc::PeriodicFluctuation => BoundarySpec::periodic_gradient(&block.grid, xi),
            SamplingBc::Dirichlet => {
                let [cx, cy] = block.grid.center();
                BoundarySpec::dirichlet_all(BoundaryValue::affine(-xi[0] * cx - xi[1] * cy, xi[0], xi[1]))
            }
        }
    }

    fn average_velocity(&mut self, xi: [f64; 2]) -> Result<[f64; 2]> {
        self.disc.rebind(Self::bc_for(self.block, self.sampling, xi))?;
        let g = &self.block.grid;
        let [cx, cy] = g.center();
        let guess: Vec<f64> = match &self.last {
            Some((prev, p)) => {
                let d = [xi[0] - prev[0], xi[1] - prev[1]];
                (0..=g.ny)
                    .flat_map(|j| (0..=g.nx).map(move |i| (i, j)))
                    .zip(p)
                    .map(|((i, j), v)| {
                        let [x, y] = g.node_position(i, j);
                        v + d[0] * (x - cx) + d[1] * (y - cy)
                    })
                    .collect()
            }
            None => {
                (0..=g.ny)
                    .flat_map(|j| (0..=g.nx).map(move |i| (i, j)))
                    .map(|(i, j)| {
                        let [x, y] = g.node_position(i, j);
                        xi[0] * (x - cx) + xi[1] * (y - cy)
                    })
                    .collect()
            }
        };
        let sol = solve_steady(&self.disc, &self.model, None, &self.picard, Some(&guess))?;
        let u = sol.average_velocity();
        self.last = Some((xi, sol.pressure));
        Ok(u)
    }
}

fn norm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Darcy response tensor `K` with `⟨u⟩ = −K ξ` for the sampling problems.
pub fn reference_tensor(block: &BlockData, sampling: SamplingBc) -> Result<Tensor2> {
    let linear = FlowModel { mobility: MobilityModel::Fine(CellLaw::Darcy), ..block.flow_model() };
    let mut s = Sampler::new(block, linear, sampling, PicardOptions::default())?;
    let u1 = s.average_velocity([1.0, 0.0])?;
    s.last = None;
    let u2 = s.average_velocity([0.0, 1.0])?;
    Ok(Tensor2([[-u1[0], -u2[0]], [-u1[1], -u2[1]]]))
}

struct TableBuilder<'a> {
    block: &'a BlockData,
    reference: Tensor2,
    controls: &'a TableControls,
    picard: PicardOptions,
}

impl TableBuilder<'_> {
    fn sampler(&self) -> Result<Sampler<'_>> {
        Sampler::new(self.block, self.block.flow_model(), self.controls.sampling, self.picard)
    }

    fn gstar(&self, s: &mut Sampler<'_>, xi: [f64; 2]) -> Result<f64> {
        let u = s.average_velocity(xi)?;
        let g = norm(u) / norm(self.reference.apply(xi));
        // rounding above one at tiny gradients
        Ok(if g > 1.0 && g <= 1.0 + 1e-12 { 1.0 } else { g })
    }

    fn levels(&self) -> Result<(Vec<f64>, Vec<f64>, StopReason)> {
        let c = self.controls;
        let kmax = self.block.k.iter().copied().fold(0.0, f64::max);
        let xi_ref = 1.0 / (self.block.law.max_coefficient() * kmax);
        let eta1 = c.eta1.unwrap_or(1e-3 * xi_ref);
        let eta2 = c.eta2.unwrap_or(2.0 * eta1);
        if !(eta1 > 0.0 && eta2 > eta1) {
            return Err(Error::Invalid(format!("need 0 < eta1 < eta2, got {eta1} and {eta2}")));
        }
        let mut anchors: Vec<f64> = c.anchors.iter().copied().filter(|&a| a > 0.0).collect();
        anchors.sort_by(f64::total_cmp);
        let mut levels = vec![0.0];
        let mut diag = vec![1.0];
        let mut sampler = self.sampler()?;
        let stop = loop {
            let n = levels.len() - 1;
            let eta_n = levels[n];
            if n >= 2 {
                let slope = (diag[n] - diag[n - 1]) / (levels[n] - levels[n - 1]);
                if diag[n] <= c.eps && slope.abs() <= c.eps_slope {
                    break StopReason::Converged;
                }
            }
            if c.eta_max.is_some_and(|m| eta_n >= m) {
                break StopReason::EtaMax;
            }
            if n >= c.max_levels {
                let partial = self.fill(&levels, &diag, StopReason::LevelCap)?;
                return Err(Error::TableIncomplete { levels: n, partial: Box::new(partial) });
            }
            let mut cand = match n {
                0 => eta1,
                1 => eta2.max(eta_n * (1.0 + 1e-9)),
                _ => 2.0 * eta_n,
            };
            if let Some(&a) = anchors.iter().find(|&&a| a > eta_n * (1.0 + 1e-12)) {
                cand = cand.min(a);
            }
            if let Some(m) = c.eta_max {
                cand = cand.min(m);
            }
            let mut bisections = 0;
            let value = loop {
                let outcome = self.gstar(&mut sampler, [cand, cand]);
                match outcome {
                    Ok(g) if (diag[n] - g) / diag[n] <= c.eps_level || bisections >= c.max_bisections => break g,
                    Ok(_) => {}
                    Err(e @ Error::MaxIterationsExceeded { .. }) if bisections < c.max_bisections => {
                        log::debug!("sample at level {cand:e} failed ({e}); bisecting");
                        sampler.last = None;
                    }
                    Err(e) => return Err(e),
                }
                cand = 0.5 * (eta_n + cand);
                bisections += 1;
            };
            levels.push(cand);
            diag.push(value);
        };
        Ok((levels, diag, stop))
    }

    /// Samples the tensor grid on the given levels, reusing the diagonal.
    fn fill(&self, levels: &[f64], diag: &[f64], stop: StopReason) -> Result<GStarTable> {
        let n = levels.len() - 1;
        let w = 2 * n + 1;
        let rows: Vec<Vec<f64>> = (0..=n)
            .into_par_iter()
            .map(|j| -> Result<Vec<f64>> {
                let mut row = vec![0.0; w];
                let y = levels[j];
                let mut s = self.sampler()?;
                if j == 0 {
                    row[n] = 1.0;
                    for i in 1..=n {
                        let g = self.gstar(&mut s, [levels[i], 0.0])?;
                        row[n + i] = g;
                        row[n - i] = g;
                    }
                    return Ok(row);
                }
                row[n] = self.gstar(&mut s, [0.0, y])?;
                let centre = s.last.clone();
                for i in 1..=n {
                    row[n + i] = if i == j { diag[j] } else { self.gstar(&mut s, [levels[i], y])? };
                }
                s.last = centre;
                for i in 1..=n {
                    row[n - i] = self.gstar(&mut s, [-levels[i], y])?;
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(GStarTable {
            levels: levels.to_vec(),
            values: rows.concat(),
            stop,
            reference: self.reference,
            controls: self.controls.clone(),
        })
    }
}

/// Builds the adaptive `G*` table of one block.
pub fn build_gstar_table(block: &BlockData, controls: &TableControls, picard: &PicardOptions) -> Result<GStarTable> {
    if block.law.is_darcy() {
        return Ok(GStarTable { controls: controls.clone(), ..GStarTable::unit() });
    }
    if !(controls.eps_level > 0.0 && controls.eps > 0.0 && controls.eps_slope > 0.0) {
        return Err(Error::Invalid("table tolerances must be positive".into()));
    }
    let reference = reference_tensor(block, controls.sampling)?;
    let builder = TableBuilder { block, reference, controls, picard: *picard };
    let (levels, diag, stop) = builder.levels()?;
    builder.fill(&levels, &diag, stop)
}
