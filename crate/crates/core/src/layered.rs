//! Closed-form upscaling of stratified media for flow parallel and
//! perpendicular to the layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forchheimer::{mobility_two_term, GPolynomial, Term};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub thickness: f64,
    pub k: f64,
    pub law: GPolynomial,
}

impl Layer {
    pub fn new(thickness: f64, k: f64, law: GPolynomial) -> Self {
        Self { thickness, k, law }
    }

    pub fn darcy(thickness: f64, k: f64) -> Self {
        Self::new(thickness, k, GPolynomial::darcy())
    }

    pub fn two_term(thickness: f64, k: f64, beta: f64) -> Result<Self> {
        Ok(Self::new(thickness, k, GPolynomial::two_term(beta)?))
    }
}

/// Layers stacked across the flow (parallel case) or along it (perpendicular case).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    layers: Vec<Layer>,
}

/// Layer velocities of parallel flow under a common gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelFlow {
    /// `u_i = −G_i(k_i ξ) k_i ξ`
    pub layer_velocity: Vec<f64>,
    /// Thickness-weighted mean velocity.
    pub velocity: f64,
    /// Effective `1/g*` at the mean speed.
    pub inverse_g: f64,
}

/// Layer gradients of perpendicular flow at a common flux.
#[derive(Clone, Debug, PartialEq)]
pub struct PerpendicularFlow {
    pub gstar: f64,
    /// Pressure-gradient magnitude in each layer.
    pub layer_gradient: Vec<f64>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("a layer stack needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if !(l.thickness > 0.0) || !(l.k > 0.0) || !l.thickness.is_finite() || !l.k.is_finite() {
                return Err(Error::Invalid(format!(
                    "layer {i}: thickness {} and permeability {} must be positive",
                    l.thickness, l.k
                )));
            }
        }
        let stack = Self { layers };
        stack.exponents()?;
        Ok(stack)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn height(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    fn weights(&self) -> impl Iterator<Item = (f64, &Layer)> {
        let h = self.height();
        self.layers.iter().map(move |l| (l.thickness / h, l))
    }

    /// Shared exponent set; layers without terms count as zero coefficients.
    pub fn exponents(&self) -> Result<Vec<f64>> {
        let mut shared: Option<Vec<f64>> = None;
        for l in &self.layers {
            if l.law.terms().is_empty() {
                continue;
            }
            let e: Vec<f64> = l.law.exponents().collect();
            match &shared {
                None => shared = Some(e),
                Some(s) if *s == e => {}
                Some(_) => {
                    return Err(Error::Invalid(
                        "all layers must share the same set of exponents".into(),
                    ))
                }
            }
        }
        Ok(shared.unwrap_or_default())
    }

    pub fn kstar_parallel(&self) -> f64 {
        self.weights().map(|(w, l)| w * l.k).sum()
    }

    pub fn gstar_parallel(&self, xi: f64) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for (w, l) in self.weights() {
            num += w * l.law.mobility_fast(l.k * xi)? * l.k;
            den += w * l.k;
        }
        Ok(num / den)
    }

    pub fn gpoly_parallel(&self, xi: f64) -> Result<ParallelFlow> {
        let mut layer_velocity = Vec::with_capacity(self.layers.len());
        let mut velocity = 0.0;
        let mut num = 0.0;
        let mut den = 0.0;
        for (w, l) in self.weights() {
            let g = l.law.mobility_fast(l.k * xi)?;
            let u = -g * l.k * xi;
            layer_velocity.push(u);
            velocity += w * u;
            num += w * l.k / l.law.g(u.abs())?;
            den += w * l.k;
        }
        Ok(ParallelFlow { layer_velocity, velocity, inverse_g: num / den })
    }

    fn betas(&self) -> Result<Vec<f64>> {
        self.layers
            .iter()
            .map(|l| {
                if l.law.is_darcy() {
                    Ok(0.0)
                } else {
                    l.law.two_term_beta().ok_or_else(|| {
                        Error::Invalid("the effective Forchheimer coefficient needs two-term laws".into())
                    })
                }
            })
            .collect()
    }

    /// Effective two-term coefficient of parallel flow at gradient `xi`.
    pub fn betastar_parallel(&self, xi: f64) -> Result<f64> {
        if !(xi >= 0.0) {
            return Err(Error::Domain(format!("xi = {xi} must be nonnegative")));
        }
        if xi == 0.0 {
            return Ok(self.betastar_limits()?.0);
        }
        let betas = self.betas()?;
        let mut num = 0.0;
        let mut den = 0.0;
        for ((w, l), b) in self.weights().zip(&betas) {
            let u = mobility_two_term(xi, b * l.k)? * l.k;
            num += b * u * u * w;
            den += u * w;
        }
        Ok(num / (den * den))
    }

    /// Limits of [`Self::betastar_parallel`] for vanishing and unbounded gradient.
    pub fn betastar_limits(&self) -> Result<(f64, f64)> {
        let betas = self.betas()?;
        let k = self.kstar_parallel();
        let small: f64 = self.weights().zip(&betas).map(|((w, l), b)| b * l.k * l.k * w).sum::<f64>() / (k * k);
        let large = if betas.iter().any(|&b| b == 0.0) {
            0.0
        } else {
            let s: f64 = self.weights().zip(&betas).map(|((w, l), b)| (l.k / b).sqrt() * w).sum();
            k / (s * s)
        };
        Ok((small, large))
    }

    pub fn kstar_perpendicular(&self) -> f64 {
        1.0 / self.weights().map(|(w, l)| w / l.k).sum::<f64>()
    }

    /// Effective mobility of flow across the layers carrying total flux `q` over length `l`.
    pub fn gstar_perpendicular(&self, q: f64, length: f64) -> Result<PerpendicularFlow> {
        if !(length > 0.0) {
            return Err(Error::Invalid(format!("length {length} must be positive")));
        }
        let speed = q.abs() / length;
        let k = self.kstar_perpendicular();
        let mut inv = 0.0;
        let mut layer_gradient = Vec::with_capacity(self.layers.len());
        for (w, l) in self.weights() {
            let g = l.law.g(speed)?;
            inv += g * w / l.k;
            layer_gradient.push(g * speed / l.k);
        }
        Ok(PerpendicularFlow { gstar: 1.0 / (k * inv), layer_gradient })
    }

    /// Perpendicular effective mobility expressed at mean gradient `xi`.
    ///
    /// Finds the common speed `s` with `Σ w_i s g_i(s) / k_i = xi`.
    pub fn gstar_perpendicular_at_gradient(&self, xi: f64) -> Result<f64> {
        if !(xi >= 0.0) || !xi.is_finite() {
            return Err(Error::Domain(format!("xi = {xi} must be finite and nonnegative")));
        }
        if xi == 0.0 || self.layers.iter().all(|l| l.law.is_darcy()) {
            return Ok(1.0);
        }
        let k = self.kstar_perpendicular();
        let f = |s: f64| -> Result<(f64, f64)> {
            let mut v = 0.0;
            let mut dv = 0.0;
            for (w, l) in self.weights() {
                let g = l.law.g(s)?;
                v += w * s * g / l.k;
                let dh: f64 = 1.0 + l.law.terms().iter().map(|t| t.a * (1.0 + t.alpha) * s.powf(t.alpha)).sum::<f64>();
                dv += w * dh / l.k;
            }
            Ok((v - xi, dv))
        };
        let (mut lo, mut hi) = (0.0, k * xi);
        let mut s = hi;
        for _ in 0..200 {
            let (r, dr) = f(s)?;
            if r.abs() <= 1e-15 * xi {
                break;
            }
            if r > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let next = s - r / dr;
            s = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
        }
        Ok(s / (k * xi))
    }

    /// Effective coefficients `a*_j = Σ a_{j,i} h_i/k_i / Σ h_i/k_i`.
    pub fn astar_perpendicular(&self) -> Result<Vec<Term>> {
        let exps = self.exponents()?;
        let den: f64 = self.weights().map(|(w, l)| w / l.k).sum();
        Ok(exps
            .into_iter()
            .map(|alpha| {
                let num: f64 = self.weights().map(|(w, l)| l.law.coefficient_for(alpha) * w / l.k).sum();
                Term { a: num / den, alpha }
            })
            .collect())
    }
}

/// Adaptive Simpson quadrature to relative accuracy `rtol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rtol: f64) -> Result<f64> {
    const PANELS: usize = 16;
    const MAX_DEPTH: usize = 60;
    let h = (b - a) / PANELS as f64;
    let panels: Vec<(f64, f64, f64, f64, f64)> = (0..PANELS)
        .map(|i| {
            let x0 = a + i as f64 * h;
            let x1 = if i + 1 == PANELS { b } else { x0 + h };
            let (f0, fm, f1) = (f(x0), f(0.5 * (x0 + x1)), f(x1));
            (x0, x1, f0, fm, f1)
        })
        .collect();
    let rough: f64 = panels.iter().map(|&(x0, x1, f0, fm, f1)| (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1)).sum();
    if !rough.is_finite() {
        return Err(Error::Domain("integrand is not finite".into()));
    }
    let tol = rtol * rough.abs().max(1e-300) / PANELS as f64;

    struct Ctx<'a> {
        f: &'a dyn Fn(f64) -> f64,
        failed: bool,
    }
    fn rec(ctx: &mut Ctx<'_>, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: usize) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = ((ctx.f)(lm), (ctx.f)(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        if depth == 0 {
            ctx.failed = true;
            return left + right;
        }
        rec(ctx, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(ctx, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let mut ctx = Ctx { f, failed: false };
    let mut total = 0.0;
    for &(x0, x1, f0, fm, f1) in &panels {
        let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
        total += rec(&mut ctx, x0, x1, f0, fm, f1, whole, tol, MAX_DEPTH);
    }
    if ctx.failed || !total.is_finite() {
        return Err(Error::Domain("adaptive quadrature did not converge".into()));
    }
    Ok(total)
}

type Profile = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Layer properties varying continuously across `[0, height]`.
pub struct ContinuousStack {
    pub height: f64,
    pub k: Profile,
    /// `(α_j, a_j(x))` pairs with a shared exponent set.
    pub terms: Vec<(f64, Profile)>,
    pub rtol: f64,
}

impl ContinuousStack {
    pub fn new(height: f64, k: Profile, terms: Vec<(f64, Profile)>) -> Self {
        Self { height, k, terms, rtol: 1e-10 }
    }

    fn poly_at(&self, x: f64) -> GPolynomial {
        GPolynomial::new(self.terms.iter().map(|(alpha, a)| Term { a: a(x), alpha: *alpha }).collect())
            .unwrap_or_else(|_| GPolynomial::darcy())
    }

    fn integral(&self, f: &dyn Fn(f64) -> f64) -> Result<f64> {
        integrate(f, 0.0, self.height, self.rtol)
    }

    pub fn kstar_parallel(&self) -> Result<f64> {
        Ok(self.integral(&|x| (self.k)(x))? / self.height)
    }

    pub fn gstar_parallel(&self, xi: f64) -> Result<f64> {
        let num = self.integral(&|x| {
            let k = (self.k)(x);
            self.poly_at(x).mobility(k * xi).unwrap_or(f64::NAN) * k
        })?;
        Ok(num / self.integral(&|x| (self.k)(x))?)
    }

    fn beta_profile(&self) -> Result<&Profile> {
        match self.terms.as_slice() {
            [(alpha, b)] if *alpha == 1.0 => Ok(b),
            [] => Err(Error::Invalid("stack has no Forchheimer term".into())),
            _ => Err(Error::Invalid("the effective Forchheimer coefficient needs a two-term law".into())),
        }
    }

    pub fn betastar_parallel(&self, xi: f64) -> Result<f64> {
        let beta = self.beta_profile()?;
        let u = |x: f64| {
            let k = (self.k)(x);
            2.0 * k / (1.0 + (1.0 + 4.0 * beta(x) * k * xi).sqrt())
        };
        let num = self.integral(&|x| beta(x) * u(x) * u(x))? / self.height;
        let den = self.integral(&u)? / self.height;
        Ok(num / (den * den))
    }

    pub fn kstar_perpendicular(&self) -> Result<f64> {
        Ok(self.height / self.integral(&|x| 1.0 / (self.k)(x))?)
    }

    pub fn gstar_perpendicular(&self, q: f64, length: f64) -> Result<f64> {
        let speed = q.abs() / length;
        let k = self.kstar_perpendicular()?;
        let inv = self.integral(&|x| self.poly_at(x).g(speed).unwrap_or(f64::NAN) / (self.k)(x))?;
        Ok(self.height / (k * inv))
    }

    pub fn astar_perpendicular(&self) -> Result<Vec<Term>> {
        let den = self.integral(&|x| 1.0 / (self.k)(x))?;
        self.terms
            .iter()
            .map(|(alpha, a)| {
                let num = self.integral(&|x| a(x) / (self.k)(x))?;
                Ok(Term { a: num / den, alpha: *alpha })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stack(spec: &[(f64, f64, f64)]) -> LayerStack {
        LayerStack::new(spec.iter().map(|&(h, k, b)| Layer::two_term(h, k, b).unwrap()).collect()).unwrap()
    }

    #[test]
    fn kstar_examples() {
        assert_eq!(stack(&[(1.0, 1.0, 0.0), (1.0, 3.0, 0.0)]).kstar_parallel(), 2.0);
        assert_eq!(stack(&[(2.0, 5.0, 0.0)]).kstar_parallel(), 5.0);
        assert_eq!(stack(&[(1.0, 4.0, 0.0), (3.0, 8.0, 0.0)]).kstar_parallel(), 7.0);
        assert!((stack(&[(1.0, 1.0, 0.0), (1.0, 3.0, 0.0)]).kstar_perpendicular() - 1.5).abs() < 1e-15);
        assert_eq!(stack(&[(2.0, 5.0, 0.0)]).kstar_perpendicular(), 5.0);
        let s = stack(&[(1.0, 2.0, 0.0), (1.0, 6.0, 0.0), (1.0, 6.0, 0.0)]);
        assert!((s.kstar_perpendicular() - 3.6).abs() < 1e-14);
    }

    #[test]
    fn gstar_parallel_examples() {
        assert_eq!(LayerStack::new(vec![Layer::darcy(1.0, 1.0), Layer::darcy(2.0, 5.0)]).unwrap().gstar_parallel(3.0).unwrap(), 1.0);
        let same = stack(&[(1.0, 2.0, 0.5), (3.0, 2.0, 0.5)]);
        let g = mobility_two_term(2.0 * 1.7, 0.5).unwrap();
        assert!((same.gstar_parallel(1.7).unwrap() - g).abs() < 1e-15);
        // direct evaluation
        let two = stack(&[(1.0, 1.0, 0.3), (2.0, 4.0, 0.1)]);
        let xi: f64 = 2.5;
        let g1 = 2.0 / (1.0 + (1.0 + 4.0 * 0.3 * 1.0 * xi).sqrt());
        let g2 = 2.0 / (1.0 + (1.0 + 4.0 * 0.1 * 4.0 * xi).sqrt());
        let expect = (g1 * 1.0 * 1.0 + g2 * 4.0 * 2.0) / (1.0 + 8.0);
        assert!((two.gstar_parallel(xi).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn gpoly_parallel_consistency() {
        let d = LayerStack::new(vec![Layer::darcy(1.0, 1.0), Layer::darcy(1.0, 3.0)]).unwrap();
        let f = d.gpoly_parallel(2.0).unwrap();
        assert_eq!(f.inverse_g, 1.0);
        assert!((f.velocity + 4.0).abs() < 1e-14);

        let single = stack(&[(1.0, 2.0, 0.4)]);
        let f = single.gpoly_parallel(3.0).unwrap();
        assert_eq!(f.velocity, f.layer_velocity[0]);
        let g1 = single.layers()[0].law.g(f.velocity.abs()).unwrap();
        assert!((1.0 / f.inverse_g - g1).abs() < 1e-12);

        let two = stack(&[(1.0, 1.0, 0.3), (1.0, 11.0, 0.9)]);
        let xi = 1.3;
        let f = two.gpoly_parallel(xi).unwrap();
        let lhs = f.velocity.abs() / f.inverse_g;
        let rhs = two.kstar_parallel() * xi;
        assert!((lhs - rhs).abs() <= 1e-10 * rhs);
        assert!((f.inverse_g - two.gstar_parallel(xi).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn betastar_examples() {
        let same = stack(&[(1.0, 2.0, 0.7), (2.0, 2.0, 0.7)]);
        for xi in [0.0, 0.1, 10.0, 1e6] {
            assert!((same.betastar_parallel(xi).unwrap() - 0.7).abs() < 1e-12);
        }
        let two = stack(&[(1.0, 1.0, 0.2), (1.0, 10.0, 2.0)]);
        let (small, large) = two.betastar_limits().unwrap();
        assert!((two.betastar_parallel(1e-9).unwrap() - small).abs() < 1e-6 * small);
        assert!((two.betastar_parallel(1e12).unwrap() - large).abs() < 1e-4 * large);
        assert_eq!(two.betastar_parallel(0.0).unwrap(), small);
    }

    #[test]
    fn perpendicular_examples() {
        let d = LayerStack::new(vec![Layer::darcy(1.0, 1.0), Layer::darcy(1.0, 3.0)]).unwrap();
        assert!((d.gstar_perpendicular(2.0, 1.0).unwrap().gstar - 1.0).abs() < 1e-15);
        let same = stack(&[(1.0, 2.0, 0.5), (1.0, 2.0, 0.5)]);
        let p = same.gstar_perpendicular(3.0, 1.0).unwrap();
        let xi = p.layer_gradient[0];
        let g = mobility_two_term(2.0 * xi, 0.5).unwrap();
        assert!((p.gstar - g).abs() < 1e-12);

        let two = stack(&[(1.0, 1.0, 0.3), (3.0, 5.0, 0.05)]);
        let (q, l) = (2.0, 1.5);
        let p = two.gstar_perpendicular(q, l).unwrap();
        let drop: f64 = p.layer_gradient.iter().zip(two.layers()).map(|(x, layer)| x * layer.thickness).sum();
        let expect = two.height() * q / (p.gstar * two.kstar_perpendicular() * l);
        assert!((drop - expect).abs() <= 1e-10 * expect);
        // inverse form agrees
        let mean = drop / two.height();
        let g = two.gstar_perpendicular_at_gradient(mean).unwrap();
        assert!((g - p.gstar).abs() < 1e-12);
    }

    #[test]
    fn astar_examples() {
        let same = stack(&[(1.0, 2.0, 0.4), (2.0, 5.0, 0.4)]);
        assert!((same.astar_perpendicular().unwrap()[0].a - 0.4).abs() < 1e-15);
        let d = LayerStack::new(vec![Layer::darcy(1.0, 1.0), Layer::darcy(1.0, 3.0)]).unwrap();
        assert!(d.astar_perpendicular().unwrap().is_empty());
        let two = stack(&[(1.0, 1.0, 0.2), (1.0, 1.0, 0.4)]);
        assert!((two.astar_perpendicular().unwrap()[0].a - 0.3).abs() < 1e-15);
        let mixed = LayerStack::new(vec![
            Layer::two_term(1.0, 1.0, 0.2).unwrap(),
            Layer::new(1.0, 1.0, GPolynomial::three_term(0.1, 0.1).unwrap()),
        ]);
        assert!(mixed.is_err());
    }

    #[test]
    fn continuous_linear_profile() {
        let s = ContinuousStack::new(1.0, Box::new(|x| 1.0 + x), vec![]);
        assert!((s.kstar_parallel().unwrap() - 1.5).abs() < 1e-12);
        assert!((s.kstar_perpendicular().unwrap() - 1.0 / 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn continuous_step_profiles_match_discrete() {
        let disc = stack(&[(0.3, 1.0, 0.5), (0.7, 6.0, 0.1)]);
        let cont = ContinuousStack::new(
            1.0,
            Box::new(|x| if x < 0.3 { 1.0 } else { 6.0 }),
            vec![(1.0, Box::new(|x| if x < 0.3 { 0.5 } else { 0.1 }))],
        );
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-8 * b.abs();
        assert!(close(cont.kstar_parallel().unwrap(), disc.kstar_parallel()));
        assert!(close(cont.kstar_perpendicular().unwrap(), disc.kstar_perpendicular()));
        assert!(close(cont.gstar_parallel(2.0).unwrap(), disc.gstar_parallel(2.0).unwrap()));
        assert!(close(cont.betastar_parallel(2.0).unwrap(), disc.betastar_parallel(2.0).unwrap()));
        assert!(close(cont.gstar_perpendicular(1.0, 2.0).unwrap(), disc.gstar_perpendicular(1.0, 2.0).unwrap().gstar));
        assert!(close(cont.astar_perpendicular().unwrap()[0].a, disc.astar_perpendicular().unwrap()[0].a));
    }

    #[test]
    fn constant_profile_is_single_layer() {
        let cont = ContinuousStack::new(2.0, Box::new(|_| 3.0), vec![(1.0, Box::new(|_| 0.2))]);
        let single = stack(&[(2.0, 3.0, 0.2)]);
        assert!((cont.gstar_parallel(1.5).unwrap() - single.gstar_parallel(1.5).unwrap()).abs() < 1e-12);
        assert!((cont.betastar_parallel(1.5).unwrap() - 0.2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn harmonic_below_arithmetic(ks in proptest::collection::vec(0.1..100.0f64, 1..6), hs in proptest::collection::vec(0.1..3.0f64, 6)) {
            let layers: Vec<Layer> = ks.iter().zip(&hs).map(|(&k, &h)| Layer::darcy(h, k)).collect();
            let s = LayerStack::new(layers).unwrap();
            prop_assert!(s.kstar_perpendicular() <= s.kstar_parallel() * (1.0 + 1e-12));
        }

    }

    /// Exploratory: reports how often the parallel β* leaves its two limits.
    #[test]
    fn betastar_limit_bracketing_report() {
        let mut checked = 0;
        let mut outside = 0;
        for k2 in [1.5, 3.0, 7.0, 15.0] {
            for b2 in [0.02, 0.3, 2.0, 9.0] {
                let s = stack(&[(1.0, 1.0, 0.01), (1.0, k2, b2)]);
                let (a, b) = s.betastar_limits().unwrap();
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                for xi in [0.01, 0.1, 1.0, 10.0, 100.0] {
                    let v = s.betastar_parallel(xi).unwrap();
                    assert!(v.is_finite());
                    checked += 1;
                    if v < lo * (1.0 - 1e-9) || v > hi * (1.0 + 1e-9) {
                        outside += 1;
                    }
                }
            }
        }
        println!("betastar outside its limits in {outside} of {checked} samples");
    }
}
