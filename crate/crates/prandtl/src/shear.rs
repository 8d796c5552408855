//! Monotone shear profiles and their heat evolution on the half line with `u(t, 0) = 0`.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{japanese, peetre_constant, quad, stencil::fornberg};

/// Derivative orders kept by the built-in profile, beyond `m + 4`, for boundary Taylor data.
const BUILTIN_ORDERS: usize = 40;

#[derive(Debug, Error)]
pub enum ShearError {
    #[error("decay rate k = {0} <= 1: the normalizing integral diverges")]
    DivergentNormalizer(f64),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("derivative order {p} outside 1..={max}")]
    Order { p: usize, max: usize },
    #[error("profile table: {0}")]
    Table(String),
    #[error("profile table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
enum Kind {
    /// `N_k (1+y^2)^{-k/2}` and its derivatives `P_n(y) (1+y^2)^{-k/2-n}`.
    Builtin { nk: f64, polys: Vec<Vec<f64>> },
    Table { y: Vec<f64>, cols: Vec<Vec<f64>> },
}

/// An initial shear profile `u0(y)` extended oddly to `y < 0`.
#[derive(Debug, Clone)]
pub struct ShearProfile {
    pub k: f64,
    pub m: usize,
    /// Envelope `c1 <y>^{-k} <= u0' <= c2 <y>^{-k}`.
    pub c1: f64,
    pub c2: f64,
    /// `sup |u0^(p)| <y>^{k+p-1}` for `p = 0..=m+4` (entry 0 unused).
    pub deriv_consts: Vec<f64>,
    kind: Kind,
}

fn poly_eval(c: &[f64], y: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * y + a)
}

/// Coefficients of `P_n` with `d^n/dy^n (1+y^2)^{-a} = P_n(y) (1+y^2)^{-a-n}`.
fn derivative_polys(a: f64, n_max: usize) -> Vec<Vec<f64>> {
    let mut polys = vec![vec![1.0]];
    for n in 0..n_max {
        let p = &polys[n];
        let mut next = vec![0.0; p.len() + 1];
        // P' (1 + y^2)
        for (i, &c) in p.iter().enumerate().skip(1) {
            let d = i as f64 * c;
            next[i - 1] += d;
            next[i + 1] += d;
        }
        // -2 (a + n) y P
        for (i, &c) in p.iter().enumerate() {
            next[i + 1] -= 2.0 * (a + n as f64) * c;
        }
        polys.push(next);
    }
    polys
}

impl ShearProfile {
    /// `u0(y) = N_k int_0^y (1+s^2)^{-k/2} ds`, normalized so `u0(inf) = 1`.
    pub fn builtin(k: f64, m: usize) -> Result<Self, ShearError> {
        if !(k > 1.0) || !k.is_finite() {
            return Err(ShearError::DivergentNormalizer(k));
        }
        // B(1/2, 1) = 2 exactly; keep N_3 = 1 free of rounding
        let nk = if (k - 3.0).abs() < 1e-15 {
            1.0
        } else {
            2.0 / statrs::function::beta::beta(0.5, 0.5 * (k - 1.0))
        };
        let polys = derivative_polys(0.5 * k, BUILTIN_ORDERS.max(m + 4));
        let mut prof = ShearProfile {
            k,
            m,
            c1: nk,
            c2: nk,
            deriv_consts: Vec::new(),
            kind: Kind::Builtin { nk, polys },
        };
        prof.deriv_consts = prof.measure_deriv_consts(&log_samples(1e6));
        Ok(prof)
    }

    /// Parse a whitespace table: header `# k=<k> m=<m>`, then rows `y u0 u0' ... u0^(m+4)`.
    pub fn from_table(text: &str) -> Result<Self, ShearError> {
        let bad = |m: String| ShearError::Table(m);
        let mut k = None;
        let mut m = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                for tok in h.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("k=") {
                        k = Some(v.parse::<f64>().map_err(|e| bad(format!("k: {e}")))?);
                    } else if let Some(v) = tok.strip_prefix("m=") {
                        m = Some(v.parse::<usize>().map_err(|e| bad(format!("m: {e}")))?);
                    }
                }
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row '{line}': {e}")))?;
            rows.push(row);
        }
        let k = k.ok_or_else(|| bad("header does not name k".into()))?;
        let m = m.ok_or_else(|| bad("header does not name m".into()))?;
        if !(k > 1.0) {
            return Err(ShearError::DivergentNormalizer(k));
        }
        let ncol = m + 6;
        if rows.len() < 8 {
            return Err(bad("need at least 8 rows".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() < ncol) {
            return Err(bad(format!("row has {} columns, need y plus derivatives 0..={}", r.len(), m + 4)));
        }
        let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        if y[0] != 0.0 || y.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("y must start at 0 and increase strictly".into()));
        }
        let cols: Vec<Vec<f64>> = (0..=m + 4).map(|p| rows.iter().map(|r| r[p + 1]).collect()).collect();
        for p in (0..=m + 4).step_by(2) {
            if cols[p][0].abs() > 1e-12 {
                return Err(bad(format!("even derivative {p} is {} at y = 0", cols[p][0])));
            }
        }
        let env: Vec<f64> = y.iter().zip(&cols[1]).map(|(&yy, d)| d * japanese(yy, k)).collect();
        let c1 = env.iter().copied().fold(f64::INFINITY, f64::min);
        let c2 = env.iter().copied().fold(0.0, f64::max);
        if !(c1 > 0.0) {
            return Err(bad("u0' must be positive".into()));
        }
        let ylast = *y.last().unwrap();
        let ulast = *cols[0].last().unwrap();
        if (ulast - 1.0).abs() > 2.0 * japanese(ylast, 1.0 - k) * c2 / (k - 1.0) {
            return Err(bad(format!("u0(Ymax) = {ulast} is not close to 1")));
        }
        let mut prof = ShearProfile {
            k,
            m,
            c1,
            c2,
            deriv_consts: Vec::new(),
            kind: Kind::Table { y: y.clone(), cols },
        };
        prof.deriv_consts = prof.measure_deriv_consts(&y);
        Ok(prof)
    }

    pub fn load(path: &Path) -> Result<Self, ShearError> {
        let text = std::fs::read_to_string(path).map_err(|source| ShearError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_table(&text)
    }

    /// Tabulate `u0` and its derivatives `0..=m+4` at `ys` in the import format.
    pub fn to_table(&self, ys: &[f64]) -> String {
        let mut s = format!("# k={} m={}\n", self.k, self.m);
        for &y in ys {
            let row: Vec<String> = std::iter::once(y)
                .chain((0..=self.m + 4).map(|p| self.deriv(p, y)))
                .map(|v| format!("{v:.17e}"))
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Highest derivative order available.
    pub fn max_order(&self) -> usize {
        match &self.kind {
            Kind::Builtin { polys, .. } => polys.len(),
            Kind::Table { cols, .. } => cols.len() - 1,
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.deriv(0, y)
    }

    /// `d^p u0 / dy^p` of the odd extension at any real `y`.
    pub fn deriv(&self, p: usize, y: f64) -> f64 {
        assert!(p <= self.max_order(), "derivative order {p} not available");
        if y < 0.0 {
            let s = if p.is_multiple_of(2) { -1.0 } else { 1.0 };
            return s * self.deriv(p, -y);
        }
        match &self.kind {
            Kind::Builtin { nk, polys } => {
                if p == 0 {
                    builtin_value(self.k, *nk, y)
                } else {
                    let q = 1.0 + y * y;
                    nk * poly_eval(&polys[p - 1], y) * q.powf(-0.5 * self.k - (p - 1) as f64)
                }
            }
            Kind::Table { y: ys, cols } => table_eval(self.k, ys, cols, p, y),
        }
    }

    /// `out[p] = d^p u0(y)` for `p_min <= p < out.len()`; lower entries are left untouched.
    pub fn derivs_into(&self, y: f64, p_min: usize, out: &mut [f64]) {
        let p_max = out.len() - 1;
        assert!(p_max <= self.max_order(), "derivative order {p_max} not available");
        if y < 0.0 {
            self.derivs_into(-y, p_min, out);
            for (p, v) in out.iter_mut().enumerate().skip(p_min) {
                if p % 2 == 0 {
                    *v = -*v;
                }
            }
            return;
        }
        match &self.kind {
            Kind::Builtin { nk, polys } => {
                let q = 1.0 + y * y;
                let mut scale = nk * q.powf(-0.5 * self.k);
                for p in 1..=p_max {
                    if p >= p_min {
                        out[p] = scale * poly_eval(&polys[p - 1], y);
                    }
                    scale /= q;
                }
                if p_min == 0 {
                    out[0] = builtin_value(self.k, *nk, y);
                }
            }
            Kind::Table { .. } => {
                for (p, v) in out.iter_mut().enumerate().skip(p_min) {
                    *v = self.deriv(p, y);
                }
            }
        }
    }

    fn measure_deriv_consts(&self, ys: &[f64]) -> Vec<f64> {
        (0..=self.m + 4)
            .map(|p| {
                if p == 0 {
                    return 0.0;
                }
                ys.iter()
                    .map(|&y| self.deriv(p, y).abs() * japanese(y, self.k + p as f64 - 1.0))
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

fn log_samples(top: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..=2000).map(|i| 10.0 * i as f64 / 2000.0).collect();
    let n = 400;
    let l0 = 10f64.ln();
    let l1 = top.ln();
    v.extend((1..=n).map(|i| (l0 + (l1 - l0) * i as f64 / n as f64).exp()));
    v
}

fn builtin_value(k: f64, nk: f64, y: f64) -> f64 {
    if (k - 3.0).abs() < 1e-15 {
        return y / (1.0 + y * y).sqrt();
    }
    let f = |s: f64| (1.0 + s * s).powf(-0.5 * k);
    let head = quad::integrate(f, 0.0, y.min(1.0), 32);
    if y <= 1.0 {
        return nk * head;
    }
    // geometric panels [2^i, 2^{i+1}] keep every panel well resolved
    let mut acc = head;
    let mut a = 1.0;
    while a < y {
        let b = (2.0 * a).min(y);
        acc += quad::integrate(f, a, b, 24);
        a = b;
    }
    nk * acc
}

fn table_eval(k: f64, ys: &[f64], cols: &[Vec<f64>], p: usize, y: f64) -> f64 {
    let n = ys.len();
    let ylast = ys[n - 1];
    if y > ylast {
        let r = ylast / y;
        return if p == 0 {
            cols[0][n - 1] + cols[1][n - 1] * ylast / (k - 1.0) * (1.0 - r.powf(k - 1.0))
        } else {
            cols[p][n - 1] * r.powf(k + p as f64 - 1.0)
        };
    }
    let j = ys.partition_point(|&v| v <= y).saturating_sub(1);
    let len = 6.min(n);
    let start = j.saturating_sub(len / 2 - 1).min(n - len);
    let w = fornberg(y, &ys[start..start + len], 0);
    w[0].iter().zip(&cols[p][start..start + len]).map(|(a, b)| a * b).sum()
}

/// Trapezoid rule in `xi = (s - y)/(2 sqrt t)`: half-width, and the spacing `min(XI_STEP, XI_SCALE / sqrt t)`
/// that keeps pace with the strip of analyticity shrinking like `1/(2 sqrt t)`.
const XI_HALF_WIDTH: f64 = 9.0;
const XI_STEP: f64 = 0.05;
const XI_SCALE: f64 = 0.1;

/// `d^p u^s(t, y)` for every `y` in `ys`, from the odd-reflection heat kernel.
///
/// With the odd extension `U0`, `u^s(t, y) = pi^{-1/2} int e^{-xi^2} U0(y + 2 sqrt(t) xi) dxi`;
/// the symmetric pairs `xi, -xi` are summed first so `u^s(t, 0)` vanishes exactly.
pub fn evolve_heat_derivative(profile: &ShearProfile, t: f64, p: usize, ys: &[f64]) -> Result<Vec<f64>, ShearError> {
    Ok(evolve_heat_orders(profile, t, p, p, ys)?.pop().unwrap())
}

/// Orders `p_min..=p_max` of `u^s(t, .)` on `ys` in one sweep over the kernel nodes.
pub fn evolve_heat_orders(profile: &ShearProfile, t: f64, p_min: usize, p_max: usize, ys: &[f64]) -> Result<Vec<Vec<f64>>, ShearError> {
    if !(t >= 0.0) {
        return Err(ShearError::NegativeTime(t));
    }
    if p_max > profile.max_order() {
        return Err(ShearError::Order {
            p: p_max,
            max: profile.max_order(),
        });
    }
    let orders = p_max + 1 - p_min;
    let mut out = vec![vec![0.0; ys.len()]; orders];
    let mut buf = vec![0.0; p_max + 1];
    let mut buf2 = vec![0.0; p_max + 1];
    if t == 0.0 {
        for (j, &y) in ys.iter().enumerate() {
            profile.derivs_into(y, p_min, &mut buf);
            for (o, col) in out.iter_mut().enumerate() {
                col[j] = buf[p_min + o];
            }
        }
        return Ok(out);
    }
    let h = XI_STEP.min(XI_SCALE / t.sqrt());
    let n = (XI_HALF_WIDTH / h).ceil() as usize;
    let s = 2.0 * t.sqrt();
    let norm = h / PI.sqrt();
    let kernel: Vec<(f64, f64)> = (1..=n).map(|i| (h * i as f64, (-(h * i as f64).powi(2)).exp())).collect();
    for (j, &y) in ys.iter().enumerate() {
        let mut acc = vec![0.0; orders];
        profile.derivs_into(y, p_min, &mut buf);
        for o in 0..orders {
            acc[o] = buf[p_min + o];
        }
        for &(xi, w) in &kernel {
            profile.derivs_into(y + s * xi, p_min, &mut buf);
            profile.derivs_into(y - s * xi, p_min, &mut buf2);
            for o in 0..orders {
                acc[o] += w * (buf[p_min + o] + buf2[p_min + o]);
            }
        }
        for o in 0..orders {
            out[o][j] = norm * acc[o];
        }
    }
    Ok(out)
}

/// `u^s(t, .)` and its y-derivatives on a set of nodes, with the evolved envelope constants
/// for a horizon `T`.
#[derive(Debug, Clone, Serialize)]
pub struct ShearEvolution {
    pub t: f64,
    pub k: f64,
    pub horizon: f64,
    pub y: Vec<f64>,
    /// `values[p][j] = d^p u^s(t, y_j)`.
    pub values: Vec<Vec<f64>>,
    pub c_tilde0: f64,
    pub c_tilde1: f64,
    pub c_tilde2: f64,
    deriv_consts: Vec<f64>,
}

impl ShearEvolution {
    /// Evaluate derivative orders `0..=p_max` at time `t`.
    pub fn new(profile: &ShearProfile, t: f64, ys: &[f64], p_max: usize, horizon: f64) -> Result<Self, ShearError> {
        let values = evolve_heat_orders(profile, t, 0, p_max, ys)?;
        let c0 = peetre_constant(-profile.k);
        let grow = (1.0 + horizon).powf(0.5 * profile.k);
        Ok(ShearEvolution {
            t,
            k: profile.k,
            horizon,
            y: ys.to_vec(),
            values,
            c_tilde0: c0,
            c_tilde1: profile.c1 * c0 / grow,
            c_tilde2: profile.c2 * grow / c0,
            deriv_consts: profile.deriv_consts.clone(),
        })
    }

    pub fn p_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn deriv(&self, p: usize) -> &[f64] {
        &self.values[p]
    }

    /// `c3(p) = C_p c0^{-1} (1+T)^{(k+p-1)/2}` with `C_p = sup |u0^(p)| <y>^{k+p-1}`.
    pub fn c_tilde3(&self, p: usize) -> f64 {
        let cp = self.deriv_consts.get(p).copied().unwrap_or(f64::NAN);
        cp / self.c_tilde0 * (1.0 + self.horizon).powf(0.5 * (self.k + p as f64 - 1.0))
    }
}

/// Full evolution on the grid nodes, all orders `0..=m+4`, horizon `T = t`.
pub fn evolve_heat(profile: &ShearProfile, t: f64, ys: &[f64]) -> Result<ShearEvolution, ShearError> {
    ShearEvolution::new(profile, t, ys, profile.m + 4, t)
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivBound {
    pub p: usize,
    pub c_tilde3: f64,
    /// `max |d^p u^s| <y>^{k+p-1} / c3`; the bound holds when this is at most 1.
    pub worst_ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub t: f64,
    pub horizon: f64,
    pub measured_min: f64,
    pub measured_max: f64,
    pub c_tilde1: f64,
    pub c_tilde2: f64,
    pub envelope_pass: bool,
    pub positive: bool,
    pub derivs: Vec<DerivBound>,
    pub pass: bool,
}

/// Compare the measured envelope of `u^s_y <y>^k` with `[c~1, c~2]` for horizon `T`
/// (points with `y > y_limit` are skipped), and the higher-derivative decay bounds.
pub fn verify_decay_bounds(evo: &ShearEvolution, profile: &ShearProfile, horizon: f64, y_limit: f64) -> DecayReport {
    let c0 = peetre_constant(-profile.k);
    let grow = (1.0 + horizon).powf(0.5 * profile.k);
    let ct1 = profile.c1 * c0 / grow;
    let ct2 = profile.c2 * grow / c0;
    let idx: Vec<usize> = (0..evo.y.len()).filter(|&j| evo.y[j] <= y_limit).collect();
    let env: Vec<f64> = idx.iter().map(|&j| evo.values[1][j] * japanese(evo.y[j], profile.k)).collect();
    let measured_min = env.iter().copied().fold(f64::INFINITY, f64::min);
    let measured_max = env.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let envelope_pass = ct1 <= measured_min && measured_max <= ct2;
    let positive = idx.iter().all(|&j| evo.values[1][j] > 0.0);
    let derivs: Vec<DerivBound> = (1..=evo.p_max())
        .map(|p| {
            let c3 = profile.deriv_consts.get(p).copied().unwrap_or(f64::NAN) / c0
                * (1.0 + horizon).powf(0.5 * (profile.k + p as f64 - 1.0));
            let worst = idx
                .iter()
                .map(|&j| evo.values[p][j].abs() * japanese(evo.y[j], profile.k + p as f64 - 1.0) / c3)
                .fold(0.0, f64::max);
            DerivBound {
                p,
                c_tilde3: c3,
                worst_ratio: worst,
                pass: worst <= 1.0,
            }
        })
        .collect();
    let pass = envelope_pass && positive && evo.t <= horizon && derivs.iter().all(|d| d.pass);
    DecayReport {
        t: evo.t,
        horizon,
        measured_min,
        measured_max,
        c_tilde1: ct1,
        c_tilde2: ct2,
        envelope_pass,
        positive,
        derivs,
        pass,
    }
}
