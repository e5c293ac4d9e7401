//! The g-Forchheimer momentum law and its inverse.
//!
//! A g-polynomial `g(s) = 1 + Σ a_j s^α_j` relates the speed `s = ‖u‖` to the
//! driving force through `g(‖u‖) u = -k ∇p`. Writing `h(s) = s g(s)`, the law
//! inverts to the nonlinear Darcy form `u = -G(‖k∇p‖) k ∇p` with the mobility
//! `G(ξ) = 1 / g(h⁻¹(ξ))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on the `h` residual accepted by [`GPolynomial::invert_h`].
pub const INVERSION_RTOL: f64 = 1e-12;

const MAX_ROOT_ITERATIONS: usize = 200;

/// One `a s^α` term of a g-polynomial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub a: f64,
    pub alpha: f64,
}

/// `g(s) = 1 + Σ a_j s^α_j` with `a_j ≥ 0` and `0 < α_1 < α_2 < …`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Term>", into = "Vec<Term>")]
pub struct GPolynomial {
    terms: Vec<Term>,
}

impl TryFrom<Vec<Term>> for GPolynomial {
    type Error = Error;

    fn try_from(terms: Vec<Term>) -> Result<Self> {
        GPolynomial::new(terms)
    }
}

impl From<GPolynomial> for Vec<Term> {
    fn from(g: GPolynomial) -> Self {
        g.terms
    }
}

impl GPolynomial {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        for (j, t) in terms.iter().enumerate() {
            if !(t.a >= 0.0) || !t.a.is_finite() {
                return Err(Error::Invalid(format!(
                    "g-polynomial coefficient a_{} = {} must be finite and nonnegative",
                    j + 1,
                    t.a
                )));
            }
            if !(t.alpha > 0.0) || !t.alpha.is_finite() {
                return Err(Error::Invalid(format!(
                    "g-polynomial exponent alpha_{} = {} must be finite and positive",
                    j + 1,
                    t.alpha
                )));
            }
        }
        if terms.windows(2).any(|w| w[0].alpha >= w[1].alpha) {
            return Err(Error::Invalid(
                "g-polynomial exponents must be strictly increasing".into(),
            ));
        }
        Ok(Self { terms })
    }

    /// Darcy flow, `g ≡ 1`.
    pub fn darcy() -> Self {
        Self { terms: Vec::new() }
    }

    /// Two-term law `u + β‖u‖u = -k∇p`.
    pub fn two_term(beta: f64) -> Result<Self> {
        Self::new(vec![Term { a: beta, alpha: 1.0 }])
    }

    /// Three-term law `u + a₁‖u‖u + a₂‖u‖²u = -k∇p`.
    pub fn three_term(a1: f64, a2: f64) -> Result<Self> {
        Self::new(vec![
            Term { a: a1, alpha: 1.0 },
            Term { a: a2, alpha: 2.0 },
        ])
    }

    /// Power law `u + b‖u‖^{m-1}u = -k∇p`.
    pub fn power_law(b: f64, m: f64) -> Result<Self> {
        if !(m > 1.0) {
            return Err(Error::Invalid(format!(
                "power-law exponent m = {m} must exceed 1"
            )));
        }
        Self::new(vec![Term { a: b, alpha: m - 1.0 }])
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// True when every coefficient vanishes, i.e. the law is linear Darcy.
    pub fn is_darcy(&self) -> bool {
        self.terms.iter().all(|t| t.a == 0.0)
    }

    /// `Some(β)` for a single `β s` term, which has a closed-form mobility.
    pub fn two_term_beta(&self) -> Option<f64> {
        match self.terms.as_slice() {
            [t] if t.alpha == 1.0 => Some(t.a),
            _ => None,
        }
    }

    pub fn exponents(&self) -> impl Iterator<Item = f64> + '_ {
        self.terms.iter().map(|t| t.alpha)
    }

    pub fn coefficient_for(&self, alpha: f64) -> f64 {
        self.terms
            .iter()
            .find(|t| t.alpha == alpha)
            .map_or(0.0, |t| t.a)
    }

    fn g_unchecked(&self, s: f64) -> f64 {
        1.0 + self
            .terms
            .iter()
            .map(|t| t.a * s.powf(t.alpha))
            .sum::<f64>()
    }

    /// `h'(s) = 1 + Σ a_j (1 + α_j) s^α_j`
    fn dh_unchecked(&self, s: f64) -> f64 {
        1.0 + self
            .terms
            .iter()
            .map(|t| t.a * (1.0 + t.alpha) * s.powf(t.alpha))
            .sum::<f64>()
    }

    pub fn g(&self, s: f64) -> Result<f64> {
        check_nonnegative("s", s)?;
        Ok(self.g_unchecked(s))
    }

    pub fn h(&self, s: f64) -> Result<f64> {
        check_nonnegative("s", s)?;
        Ok(s * self.g_unchecked(s))
    }

    /// Solves `h(s) = ξ` for `s ≥ 0`.
    ///
    /// Newton iteration from `ξ / g(ξ^{1/(1+α_max)})`, safeguarded by the
    /// bracket `[0, ξ]` which always contains the root because `h(s) ≥ s`.
    pub fn invert_h(&self, xi: f64) -> Result<f64> {
        check_nonnegative("xi", xi)?;
        if xi == 0.0 || self.is_darcy() {
            return Ok(xi);
        }
        let accept = INVERSION_RTOL * xi.max(1.0);
        let alpha_max = self.terms.last().map_or(1.0, |t| t.alpha);
        let (mut lo, mut hi) = (0.0_f64, xi);
        let mut s = xi / self.g_unchecked(xi.powf(1.0 / (1.0 + alpha_max)));
        if !(s > lo && s < hi) {
            s = 0.5 * (lo + hi);
        }
        let mut residual = f64::INFINITY;
        for _ in 0..MAX_ROOT_ITERATIONS {
            let r = s * self.g_unchecked(s) - xi;
            residual = r.abs();
            if r > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            // iterate past the acceptance tolerance to full precision
            if residual <= 1e-15 * xi || hi - lo <= 4.0 * f64::EPSILON * hi {
                return Ok(s);
            }
            let step = r / self.dh_unchecked(s);
            let next = s - step;
            s = if next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
            if step.abs() <= f64::EPSILON * s {
                let r = (s * self.g_unchecked(s) - xi).abs();
                if r <= accept {
                    return Ok(s);
                }
            }
        }
        if residual <= accept {
            return Ok(s);
        }
        Err(Error::RootNotConverged {
            xi,
            residual,
            iterations: MAX_ROOT_ITERATIONS,
        })
    }

    /// Nonlinear mobility `G(ξ) = 1 / g(h⁻¹(ξ))`, in `(0, 1]`.
    pub fn mobility(&self, xi: f64) -> Result<f64> {
        let s = self.invert_h(xi)?;
        Ok(1.0 / self.g_unchecked(s))
    }

    /// Mobility with the closed form used whenever the law is two-term.
    pub(crate) fn mobility_fast(&self, xi: f64) -> Result<f64> {
        match self.two_term_beta() {
            Some(beta) => mobility_two_term(xi, beta),
            None if self.is_darcy() => {
                check_nonnegative("xi", xi)?;
                Ok(1.0)
            }
            None => self.mobility(xi),
        }
    }
}

/// Closed-form mobility of the two-term law, `2 / (1 + √(1 + 4βξ))`.
pub fn mobility_two_term(xi: f64, beta: f64) -> Result<f64> {
    check_nonnegative("xi", xi)?;
    check_nonnegative("beta", beta)?;
    Ok(2.0 / (1.0 + (1.0 + 4.0 * beta * xi).sqrt()))
}

fn check_nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {v} must be finite and nonnegative")))
    }
}
