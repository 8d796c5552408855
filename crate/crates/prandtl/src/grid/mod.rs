//! Periodic-in-x, graded-in-y tensor grid with spectral x-derivatives, mapped
//! finite-difference y-derivatives and cumulative y-quadrature.

mod field;
pub mod quad;
pub mod stencil;

pub use field::Field2D;

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use stencil::{derivative_rows, fornberg, StencilRow};

/// Highest y-derivative order with a precomputed stencil.
pub const MAX_DY_ORDER: usize = 8;

/// Nodes per interpolation window of the y-quadrature (degree 7, eighth order).
const QUAD_WINDOW: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidSpec(String),
    #[error("x-derivative of order {n} needs at least {need} samples (have {nx})")]
    Resolution { n: usize, nx: usize, need: usize },
    #[error("y-derivative of order {0} is not supported (max {MAX_DY_ORDER})")]
    UnsupportedOrder(usize),
    #[error("tail rate {0} <= 1: the tail integral may diverge")]
    InvalidTail(f64),
    #[error("fields live on different grids")]
    Mismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub lx: f64,
    pub ny: usize,
    pub ymax: f64,
    /// Grading strength of `stretch`; 0 gives a uniform y-grid.
    pub alpha: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, ymax: f64) -> Self {
        GridSpec {
            nx,
            lx: 2.0 * std::f64::consts::PI,
            ny,
            ymax,
            alpha: 3.0,
        }
    }

    /// Smallest integer height with `Y * <Y>^{-2 rate} <= tol`.
    pub fn default_ymax(rate: f64, tol: f64) -> f64 {
        let mut y: f64 = 1.0;
        while y * (1.0 + y * y).powf(-rate) > tol && y < 1e4 {
            y += 1.0;
        }
        y
    }

    /// `stretch(s) = Ymax (e^{a s} - 1)/(e^a - 1)`.
    pub fn stretch(&self, s: f64) -> f64 {
        if self.alpha.abs() < 1e-12 {
            self.ymax * s
        } else {
            self.ymax * (self.alpha * s).exp_m1() / self.alpha.exp_m1()
        }
    }

    fn validate(&self) -> Result<(), GridError> {
        let bad = |m: &str| Err(GridError::InvalidSpec(m.to_string()));
        if self.nx < 4 {
            return bad("nx must be at least 4");
        }
        if self.ny < 16 {
            return bad("ny must be at least 16");
        }
        if !(self.lx > 0.0 && self.ymax > 0.0) || !self.lx.is_finite() || !self.ymax.is_finite() {
            return bad("lx and ymax must be positive and finite");
        }
        if !(self.alpha >= 0.0) || self.alpha > 50.0 {
            return bad("alpha must lie in [0, 50]");
        }
        Ok(())
    }
}

/// A built grid: nodes, quadrature and derivative tables, FFT plans.
pub struct Grid {
    spec: GridSpec,
    x: Vec<f64>,
    y: Vec<f64>,
    quad_w: Vec<f64>,
    /// Per cell `[y_j, y_{j+1}]`: first node of the interpolation window and its weights.
    cells: Vec<(usize, [f64; QUAD_WINDOW])>,
    dy_rows: Vec<Vec<StencilRow>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid").field("spec", &self.spec).finish()
    }
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Arc<Grid>, GridError> {
        spec.validate()?;
        let ny = spec.ny;
        let y: Vec<f64> = (0..ny)
            .map(|j| {
                if j == ny - 1 {
                    spec.ymax
                } else {
                    spec.stretch(j as f64 / (ny - 1) as f64)
                }
            })
            .collect();
        for j in 1..ny {
            if !(y[j] > y[j - 1]) {
                return Err(GridError::InvalidSpec("stretch is not strictly increasing".into()));
            }
        }
        let x = (0..spec.nx).map(|i| spec.lx * i as f64 / spec.nx as f64).collect();

        // Each cell integrates the degree-7 interpolant through the nearest eight nodes;
        // four-point Gauss-Legendre is exact for it.
        let (gx, gw) = quad::gauss_legendre(QUAD_WINDOW / 2);
        let mut cells = Vec::with_capacity(ny - 1);
        let mut quad_w = vec![0.0; ny];
        for j in 0..ny - 1 {
            let start = j.saturating_sub(QUAD_WINDOW / 2 - 1).min(ny - QUAD_WINDOW);
            let nodes = &y[start..start + QUAD_WINDOW];
            let (a, b) = (y[j], y[j + 1]);
            let h = b - a;
            let mut w = [0.0; QUAD_WINDOW];
            for (z, wz) in gx.iter().zip(&gw) {
                let c = fornberg(a + 0.5 * (z + 1.0) * h, nodes, 0);
                for i in 0..QUAD_WINDOW {
                    w[i] += 0.5 * h * wz * c[0][i];
                }
            }
            for i in 0..QUAD_WINDOW {
                quad_w[start + i] += w[i];
            }
            cells.push((start, w));
        }

        let dy_rows = (0..=MAX_DY_ORDER).map(|p| derivative_rows(&y, p)).collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(spec.nx);
        let inv = planner.plan_fft_inverse(spec.nx);
        Ok(Arc::new(Grid {
            spec,
            x,
            y,
            quad_w,
            cells,
            dy_rows,
            fwd,
            inv,
        }))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn nx(&self) -> usize {
        self.spec.nx
    }
    pub fn ny(&self) -> usize {
        self.spec.ny
    }
    pub fn x(&self) -> &[f64] {
        &self.x
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_w
    }
    pub fn hx(&self) -> f64 {
        self.spec.lx / self.spec.nx as f64
    }
    pub fn hy_min(&self) -> f64 {
        self.y[1] - self.y[0]
    }
    pub fn hy_max(&self) -> f64 {
        self.y[self.ny() - 1] - self.y[self.ny() - 2]
    }
    pub fn dy_rows(&self, p: usize) -> Result<&[StencilRow], GridError> {
        self.dy_rows
            .get(p)
            .map(|r| r.as_slice())
            .ok_or(GridError::UnsupportedOrder(p))
    }

    /// Signed wavenumber of FFT bin `m`.
    pub fn kx(&self, m: usize) -> f64 {
        let nx = self.spec.nx;
        let k = if m <= nx / 2 { m as f64 } else { m as f64 - nx as f64 };
        2.0 * std::f64::consts::PI * k / self.spec.lx
    }

    fn is_nyquist(&self, m: usize) -> bool {
        self.spec.nx.is_multiple_of(2) && m == self.spec.nx / 2
    }

    /// Forward x-transform of every y-line; output layout `[m * ny + j]`.
    pub fn forward_x(&self, data: &[f64]) -> Vec<Complex<f64>> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut out = vec![Complex::new(0.0, 0.0); nx * ny];
        let mut buf = vec![Complex::new(0.0, 0.0); nx];
        for j in 0..ny {
            for i in 0..nx {
                buf[i] = Complex::new(data[i * ny + j], 0.0);
            }
            self.fwd.process(&mut buf);
            for m in 0..nx {
                out[m * ny + j] = buf[m];
            }
        }
        out
    }

    /// Inverse of [`Grid::forward_x`], keeping the real part.
    pub fn inverse_x(&self, modes: &[Complex<f64>]) -> Vec<f64> {
        let (nx, ny) = (self.nx(), self.ny());
        let mut out = vec![0.0; nx * ny];
        let mut buf = vec![Complex::new(0.0, 0.0); nx];
        let scale = 1.0 / nx as f64;
        for j in 0..ny {
            for m in 0..nx {
                buf[m] = modes[m * ny + j];
            }
            self.inv.process(&mut buf);
            for i in 0..nx {
                out[i * ny + j] = buf[i].re * scale;
            }
        }
        out
    }

    /// Multiplier of `d^n/dx^n` on bin `m`; odd orders drop the Nyquist bin.
    pub fn dx_symbol(&self, m: usize, n: usize) -> Complex<f64> {
        if n == 0 {
            return Complex::new(1.0, 0.0);
        }
        if n % 2 == 1 && self.is_nyquist(m) {
            return Complex::new(0.0, 0.0);
        }
        Complex::new(0.0, self.kx(m)).powu(n as u32)
    }

    fn check_dx(&self, n: usize) -> Result<(), GridError> {
        if n > 0 && 4 * n > self.nx() {
            return Err(GridError::Resolution {
                n,
                nx: self.nx(),
                need: 4 * n,
            });
        }
        Ok(())
    }

    /// Spectral derivative of a single periodic x-line of length `nx`.
    pub fn dx_line(&self, line: &[f64], n: usize) -> Result<Vec<f64>, GridError> {
        self.check_dx(n)?;
        if n == 0 {
            return Ok(line.to_vec());
        }
        let nx = self.nx();
        let mut buf: Vec<Complex<f64>> = line.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        for (m, b) in buf.iter_mut().enumerate() {
            *b *= self.dx_symbol(m, n);
        }
        self.inv.process(&mut buf);
        Ok(buf.iter().map(|c| c.re / nx as f64).collect())
    }

    /// Cumulative quadrature along one y-line, `F(0) = 0`.
    pub fn cumulative_line(&self, f: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        let mut acc = 0.0;
        for (j, (start, w)) in self.cells.iter().enumerate() {
            acc += w.iter().zip(&f[*start..start + QUAD_WINDOW]).map(|(a, b)| a * b).sum::<f64>();
            out[j + 1] = acc;
        }
    }

    /// Quadrature over `[0, Ymax]` of one y-line.
    pub fn integrate_line(&self, f: &[f64]) -> f64 {
        self.quad_w.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// `p`-th y-derivative of one y-line.
    pub fn dy_line(&self, f: &[f64], p: usize, out: &mut [f64]) -> Result<(), GridError> {
        if p == 0 {
            out.copy_from_slice(f);
            return Ok(());
        }
        let rows = self.dy_rows(p)?;
        for (j, row) in rows.iter().enumerate() {
            out[j] = row
                .weights
                .iter()
                .zip(&f[row.start..row.start + row.weights.len()])
                .map(|(w, v)| w * v)
                .sum();
        }
        Ok(())
    }
}

/// `f^(n)` in x by Fourier differentiation.
pub fn dx(f: &Field2D, n: usize) -> Result<Field2D, GridError> {
    let g = f.grid();
    g.check_dx(n)?;
    if n == 0 {
        return Ok(f.clone());
    }
    let ny = g.ny();
    let mut modes = g.forward_x(f.values());
    for m in 0..g.nx() {
        let s = g.dx_symbol(m, n);
        for j in 0..ny {
            modes[m * ny + j] *= s;
        }
    }
    Ok(Field2D::from_vec(g.clone(), g.inverse_x(&modes)))
}

/// `f^(p)` in y by Fornberg stencils on the graded nodes.
pub fn dy(f: &Field2D, p: usize) -> Result<Field2D, GridError> {
    let g = f.grid();
    if p > MAX_DY_ORDER {
        return Err(GridError::UnsupportedOrder(p));
    }
    let ny = g.ny();
    let mut out = vec![0.0; f.values().len()];
    for (src, dst) in f.values().chunks(ny).zip(out.chunks_mut(ny)) {
        g.dy_line(src, p, dst)?;
    }
    Ok(Field2D::from_vec(g.clone(), out))
}

/// `F(x, y) = int_0^y f(x, s) ds`.
pub fn integrate_y_from_0(f: &Field2D) -> Field2D {
    let g = f.grid();
    let ny = g.ny();
    let mut out = vec![0.0; f.values().len()];
    for (src, dst) in f.values().chunks(ny).zip(out.chunks_mut(ny)) {
        g.cumulative_line(src, dst);
    }
    Field2D::from_vec(g.clone(), out)
}

/// `int_y^inf f`, with the part beyond `Ymax` modelled as `f(Ymax) (y/Ymax)^{-tail_rate}`,
/// which contributes `f(x, Ymax) Ymax / (tail_rate - 1)`.
pub fn integrate_y_to_inf(f: &Field2D, tail_rate: f64) -> Result<Field2D, GridError> {
    if !(tail_rate > 1.0) {
        return Err(GridError::InvalidTail(tail_rate));
    }
    let g = f.grid();
    let ny = g.ny();
    let ymax = g.spec().ymax;
    let mut out = vec![0.0; f.values().len()];
    let mut cum = vec![0.0; ny];
    for (src, dst) in f.values().chunks(ny).zip(out.chunks_mut(ny)) {
        g.cumulative_line(src, &mut cum);
        let tail = src[ny - 1] * ymax / (tail_rate - 1.0);
        let total = cum[ny - 1];
        for j in 0..ny {
            dst[j] = total - cum[j] + tail;
        }
    }
    Ok(Field2D::from_vec(g.clone(), out))
}

/// `<y>^lambda = (1 + y^2)^{lambda/2}`.
pub fn japanese(y: f64, lambda: f64) -> f64 {
    (1.0 + y * y).powf(0.5 * lambda)
}

/// x-independent field `<y_j>^lambda`.
pub fn weight_profile(lambda: f64, grid: &Arc<Grid>) -> Field2D {
    Field2D::from_fn(grid.clone(), |_, y| japanese(y, lambda))
}

/// Peetre constant `2^{-|lambda|/2}` in `c0 <y>^lambda <y + s>^{-|lambda|} <= <s>^lambda`.
pub fn peetre_constant(lambda: f64) -> f64 {
    2f64.powf(-0.5 * lambda.abs())
}
