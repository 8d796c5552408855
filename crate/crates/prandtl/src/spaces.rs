//! Weighted Sobolev norms on the strip and ratio checks for the Hardy, trace and
//! Sobolev-embedding inequalities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{dx, dy, japanese, Field2D, GridError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevParams {
    pub m: usize,
    pub k: f64,
    pub ell: f64,
    pub ell_prime: f64,
    pub delta: f64,
}

impl Default for SobolevParams {
    fn default() -> Self {
        SobolevParams {
            m: 2,
            k: 3.0,
            ell: 0.25,
            ell_prime: 0.6,
            delta: 0.1,
        }
    }
}

impl SobolevParams {
    /// Validate; `strict` adds `m >= 6` and `k + ell > 3/2`.
    pub fn validate(&self, strict: bool) -> Result<(), NormError> {
        let bad = |m: String| Err(NormError::Parameter(m));
        if self.m < 2 || !self.m.is_multiple_of(2) {
            return bad(format!("m = {} must be an even integer >= 2", self.m));
        }
        if !(self.k > 1.0) {
            return bad(format!("k = {} must exceed 1", self.k));
        }
        if !(self.ell > 0.0 && self.ell < 0.5) {
            return bad(format!("ell = {} must lie in (0, 1/2)", self.ell));
        }
        if !(self.ell_prime > 0.5 && self.ell_prime - self.ell < 0.5) {
            return bad(format!(
                "ell' = {} must lie in (1/2, ell + 1/2) with ell = {}",
                self.ell_prime, self.ell
            ));
        }
        if !(self.delta > 0.0) {
            return bad(format!("delta = {} must be positive", self.delta));
        }
        if strict {
            if self.m < 6 {
                return bad(format!("strict mode needs m >= 6, got {}", self.m));
            }
            if !(self.k + self.ell > 1.5) {
                return bad(format!("strict mode needs k + ell > 3/2, got {}", self.k + self.ell));
            }
        }
        Ok(())
    }

    /// Weight exponent `k + ell` of the vorticity space.
    pub fn lambda(&self) -> f64 {
        self.k + self.ell
    }
}

/// Squared contributions `||<y>^{lambda + a2} dx^{a1} dy^{a2} f||^2` keyed by `(a1, a2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormBreakdown {
    pub terms: Vec<((usize, usize), f64)>,
    pub total: f64,
}

impl NormBreakdown {
    pub fn get(&self, a1: usize, a2: usize) -> Option<f64> {
        self.terms.iter().find(|(k, _)| *k == (a1, a2)).map(|(_, v)| *v)
    }
    pub fn norm(&self) -> f64 {
        self.total.sqrt()
    }
}

/// `int int <y>^{2 lambda} f^2 dx dy` by the grid quadrature.
pub fn l2_weighted_sq(f: &Field2D, lambda: f64) -> f64 {
    let g = f.grid();
    let wy: Vec<f64> = g
        .quad_weights()
        .iter()
        .zip(g.y())
        .map(|(w, &y)| w * japanese(y, 2.0 * lambda))
        .collect();
    let mut s = 0.0;
    for i in 0..g.nx() {
        s += f.line(i).iter().zip(&wy).map(|(v, w)| w * v * v).sum::<f64>();
    }
    s * g.hx()
}

pub fn norm_l2_weighted(f: &Field2D, lambda: f64) -> f64 {
    l2_weighted_sq(f, lambda).sqrt()
}

fn breakdown<P: Fn(usize, usize) -> bool>(
    f: &Field2D,
    m: usize,
    lambda: f64,
    keep: P,
) -> Result<NormBreakdown, NormError> {
    let mut terms = Vec::new();
    for a2 in 0..=m {
        let fy = dy(f, a2)?;
        for a1 in 0..=(m - a2) {
            if !keep(a1, a2) {
                continue;
            }
            let d = dx(&fy, a1)?;
            terms.push(((a1, a2), l2_weighted_sq(&d, lambda + a2 as f64)));
        }
    }
    terms.sort_by_key(|(k, _)| *k);
    let total = terms.iter().map(|(_, v)| v).sum();
    Ok(NormBreakdown { terms, total })
}

/// Full `H^m_lambda` breakdown over `a1 + a2 <= m`.
pub fn norm_hm_weighted(f: &Field2D, m: usize, lambda: f64) -> Result<NormBreakdown, NormError> {
    breakdown(f, m, lambda, |_, _| true)
}

/// `H^{m,m-1}_lambda` breakdown: the pure `dx^m` term is left out.
pub fn anisotropic_breakdown(f: &Field2D, m: usize, lambda: f64) -> Result<NormBreakdown, NormError> {
    if m == 0 {
        return Err(NormError::Parameter("anisotropic norm needs m >= 1".into()));
    }
    breakdown(f, m, lambda, |a1, a2| !(a1 == m && a2 == 0))
}

pub fn norm_anisotropic(f: &Field2D, m: usize, lambda: f64) -> Result<f64, NormError> {
    Ok(anisotropic_breakdown(f, m, lambda)?.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardyVariant {
    /// `lambda > -1/2`, `f -> 0` at infinity.
    Decay,
    /// `-1 <= lambda < -1/2`, `f(x, 0) = 0`.
    Boundary,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `||<y>^lambda f|| / ||<y>^{lambda+1} dy f||`.
pub fn check_hardy(f: &Field2D, lambda: f64, variant: HardyVariant) -> Result<f64, NormError> {
    let ok = match variant {
        HardyVariant::Decay => lambda > -0.5,
        HardyVariant::Boundary => (-1.0..-0.5).contains(&lambda),
    };
    if !ok {
        return Err(NormError::Parameter(format!(
            "lambda = {lambda} outside the range of the {variant:?} variant"
        )));
    }
    let fy = dy(f, 1)?;
    Ok(ratio(norm_l2_weighted(f, lambda), norm_l2_weighted(&fy, lambda + 1.0)))
}

/// `||f(., 0)||_{L^2_x} / ||dy f||_{L^2_lambda}`.
pub fn check_trace(f: &Field2D, lambda: f64) -> Result<f64, NormError> {
    if !(lambda > 0.5) {
        return Err(NormError::Parameter(format!("trace needs lambda > 1/2, got {lambda}")));
    }
    let g = f.grid();
    let trace = (f.row(0).iter().map(|v| v * v).sum::<f64>() * g.hx()).sqrt();
    let fy = dy(f, 1)?;
    Ok(ratio(trace, norm_l2_weighted(&fy, lambda)))
}

/// `||f||_inf / (||f_y||_{L^2_{1/2+delta}} + ||f_xy||_{L^2_{1/2+delta}})`.
pub fn check_sobolev_embedding(f: &Field2D, delta: f64) -> Result<f64, NormError> {
    if !(delta > 0.0) {
        return Err(NormError::Parameter(format!("delta = {delta} must be positive")));
    }
    let sup = f.max_abs();
    if sup == 0.0 {
        return Ok(0.0);
    }
    let ny = f.grid().ny();
    let tol = 1e-6 * sup;
    let bottom = f.row(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let top = f.row(ny - 1).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if bottom > tol && top > tol {
        return Err(NormError::Precondition(
            "f vanishes neither at y = 0 nor at Ymax".into(),
        ));
    }
    let fy = dy(f, 1)?;
    let fxy = dx(&fy, 1)?;
    let w = 0.5 + delta;
    Ok(sup / (norm_l2_weighted(&fy, w) + norm_l2_weighted(&fxy, w)))
}
