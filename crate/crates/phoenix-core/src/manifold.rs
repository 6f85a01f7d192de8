//! Poincaré-ball primitives: Möbius addition, the exponential map at the
//! origin, geodesic distance, and boundary-safe projection, together with
//! the analytic gradients the training loop needs.
//!
//! The ball of curvature magnitude `c` is `{ v : c‖v‖² < 1 }`. Every
//! constructor and operation keeps points at norm ≤ (1 − EPS_BALL)/√c so
//! that distances and their gradients stay finite. All math is f64.

use crate::error::{Error, Result};

/// Norm margin kept between any stored point and the ball boundary.
pub const EPS_BALL: f64 = 1e-5;

/// The artanh argument is clamped to 1 − ATANH_MARGIN before evaluation.
pub const ATANH_MARGIN: f64 = 1e-7;

/// Below this input norm the exponential map uses its limit branch.
pub const EXP_SERIES_CUTOFF: f64 = 1e-12;

/// Curvature magnitude of the ball; the manifold curvature is −c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::config(format!(
                "curvature magnitude must be finite and positive, got {c}"
            )));
        }
        Ok(Curvature(c))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }

    /// Largest representable point norm: (1 − EPS_BALL)/√c.
    pub fn max_norm(self) -> f64 {
        (1.0 - EPS_BALL) / self.0.sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature(1.0)
    }
}

/// A point strictly inside the Poincaré ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    c: Curvature,
}

impl BallPoint {
    /// Builds a point from raw coordinates, projecting onto the safe ball
    /// if the input lies on or outside the boundary margin.
    pub fn new(mut coords: Vec<f64>, c: Curvature) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("ball point coordinates must be finite"));
        }
        project_in_place(&mut coords, c);
        Ok(BallPoint { coords, c })
    }

    pub fn origin(dim: usize, c: Curvature) -> Self {
        BallPoint { coords: vec![0.0; dim], c }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    fn check_compatible(&self, other: &BallPoint) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::structure(format!(
                "ball dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        if self.c != other.c {
            return Err(Error::structure(format!(
                "curvature mismatch: {} vs {}",
                self.c.get(),
                other.c.get()
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Rescales `v` in place so that √c‖v‖ ≤ 1 − EPS_BALL. Interior points are
/// left untouched bit-for-bit.
pub fn project_in_place(v: &mut [f64], c: Curvature) {
    let max = c.max_norm();
    let n = norm_sq(v).sqrt();
    if n > max {
        let k = max / n;
        for x in v.iter_mut() {
            *x *= k;
        }
    }
}

/// Projection returning a checked [`BallPoint`].
pub fn project_to_ball(v: &[f64], c: Curvature) -> Result<BallPoint> {
    BallPoint::new(v.to_vec(), c)
}

/// Möbius addition on raw coordinate slices, without the final ball
/// projection. `x ⊕ 0 = x` and `(−x) ⊕ x = 0` hold exactly.
pub(crate) fn mobius_add_raw(x: &[f64], y: &[f64], c: f64, out: &mut [f64]) {
    let xy = dot(x, y);
    let x2 = norm_sq(x);
    let y2 = norm_sq(y);
    let a = 1.0 + 2.0 * c * xy + c * y2;
    let b = 1.0 - c * x2;
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    for i in 0..x.len() {
        out[i] = (a * x[i] + b * y[i]) / den;
    }
}

/// Möbius addition x ⊕_c y, projected back into the safe ball.
pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint> {
    x.check_compatible(y)?;
    let mut out = vec![0.0; x.dim()];
    mobius_add_raw(x.coords(), y.coords(), x.c.get(), &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("mobius_add produced a non-finite coordinate"));
    }
    BallPoint::new(out, x.c)
}

/// Vector–Jacobian product of `w = mobius_add_raw(u, v)`: given the
/// upstream gradient wrt `w`, accumulates gradients wrt `u` and `v`.
pub(crate) fn mobius_add_vjp(
    u: &[f64],
    v: &[f64],
    c: f64,
    upstream: &[f64],
    grad_u: &mut [f64],
    grad_v: &mut [f64],
) {
    let uv = dot(u, v);
    let u2 = norm_sq(u);
    let v2 = norm_sq(v);
    let a = 1.0 + 2.0 * c * uv + c * v2;
    let b = 1.0 - c * u2;
    let den = 1.0 + 2.0 * c * uv + c * c * u2 * v2;

    // w = n / den with n = a·u + b·v.
    let gu = dot(upstream, u);
    let gv = dot(upstream, v);
    let mut gw = 0.0; // upstream · w
    for i in 0..u.len() {
        gw += upstream[i] * (a * u[i] + b * v[i]) / den;
    }

    // dL/du = [a·ḡ + 2c(ḡ·u)v − 2c(ḡ·v)u]/den − (ḡ·w)/den · (2c·v + 2c²v²·u)
    // dL/dv = [b·ḡ + 2c(ḡ·u)(u+v)]/den − (ḡ·w)/den · (2c·u + 2c²u²·v)
    for i in 0..u.len() {
        grad_u[i] += (a * upstream[i] + 2.0 * c * gu * v[i] - 2.0 * c * gv * u[i]) / den
            - gw / den * (2.0 * c * v[i] + 2.0 * c * c * v2 * u[i]);
        grad_v[i] += (b * upstream[i] + 2.0 * c * gu * (u[i] + v[i])) / den
            - gw / den * (2.0 * c * u[i] + 2.0 * c * c * u2 * v[i]);
    }
}

/// Exponential map at the origin on a raw slice: tanh(√c‖y‖)·y/(√c‖y‖),
/// followed by the safe-ball clamp. Continuous at y = 0.
pub(crate) fn exp_map_origin_raw(y: &[f64], c: f64, out: &mut [f64]) {
    let r = norm_sq(y).sqrt();
    if r < EXP_SERIES_CUTOFF {
        // tanh(u)/u → 1 as u → 0; below the cutoff the correction is
        // beneath f64 resolution.
        out.copy_from_slice(y);
        return;
    }
    let u = c.sqrt() * r;
    let g = u.tanh() / u;
    for i in 0..y.len() {
        out[i] = g * y[i];
    }
    let max = (1.0 - EPS_BALL) / c.sqrt();
    let n = g * r; // ‖out‖
    if n > max {
        let k = max / n;
        for v in out.iter_mut() {
            *v *= k;
        }
    }
}

/// Exponential map at the origin: maps a tangent vector onto the ball.
pub fn exp_map_origin(y: &[f64], c: Curvature) -> Result<BallPoint> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("exp_map_origin input must be finite"));
    }
    let mut out = vec![0.0; y.len()];
    exp_map_origin_raw(y, c.get(), &mut out);
    Ok(BallPoint { coords: out, c })
}

/// Vector–Jacobian product of [`exp_map_origin_raw`], clamp branch included.
pub(crate) fn exp_map_origin_vjp(y: &[f64], c: f64, upstream: &[f64], grad_y: &mut [f64]) {
    let r = norm_sq(y).sqrt();
    if r < EXP_SERIES_CUTOFF {
        for i in 0..y.len() {
            grad_y[i] += upstream[i];
        }
        return;
    }
    let sc = c.sqrt();
    let u = sc * r;
    let th = u.tanh();
    let g = th / u;

    // When the forward pass clamped to the boundary margin, the clamp
    // out = rmax·f/‖f‖ contributes its own Jacobian (pure rotation of f).
    let max = (1.0 - EPS_BALL) / sc;
    let n = g * r;
    let mut up = upstream.to_vec();
    if n > max {
        // f = g·y, f̂ = y/r; upstream_f = (rmax/‖f‖)(ḡ − f̂(f̂·ḡ))
        let k = max / n;
        let fy = dot(&up, y) / (r * r);
        for i in 0..y.len() {
            up[i] = k * (up[i] - fy * y[i]);
        }
    }

    // d(g)/du = ((1 − tanh²u)·u − tanh u)/u²
    let dg_du = ((1.0 - th * th) * u - th) / (u * u);
    let dg_dr = dg_du * sc;
    let yd = dot(&up, y);
    for i in 0..y.len() {
        grad_y[i] += g * up[i] + dg_dr * yd / r * y[i];
    }
}

/// Geodesic distance on raw slices: (2/√c)·artanh(√c‖(−x) ⊕ y‖) with the
/// artanh argument clamped to 1 − ATANH_MARGIN.
///
/// The Möbius norm is evaluated through the identity
/// ‖(−x) ⊕ y‖² = ‖x−y‖² / (1 − 2c⟨x,y⟩ + c²‖x‖²‖y‖²), whose terms are all
/// bitwise symmetric in x and y, so d(x,y) == d(y,x) exactly.
pub(crate) fn geodesic_distance_raw(x: &[f64], y: &[f64], c: f64) -> f64 {
    let diff_sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let den = 1.0 - 2.0 * c * dot(x, y) + c * c * norm_sq(x) * norm_sq(y);
    let sc = c.sqrt();
    let n = (sc * (diff_sq / den).sqrt()).min(1.0 - ATANH_MARGIN);
    2.0 / sc * n.atanh()
}

/// Geodesic distance between two ball points.
pub fn geodesic_distance(x: &BallPoint, y: &BallPoint) -> Result<f64> {
    x.check_compatible(y)?;
    Ok(geodesic_distance_raw(x.coords(), y.coords(), x.c.get()))
}

/// Analytic gradient of the geodesic distance wrt both arguments.
#[derive(Debug, Clone)]
pub struct DistanceGrad {
    pub wrt_x: Vec<f64>,
    pub wrt_y: Vec<f64>,
    /// True when x and y coincide; the gradients are then zero by convention.
    pub degenerate: bool,
}

pub fn grad_geodesic_distance(x: &BallPoint, y: &BallPoint) -> Result<DistanceGrad> {
    x.check_compatible(y)?;
    let mut grad = DistanceGrad {
        wrt_x: vec![0.0; x.dim()],
        wrt_y: vec![0.0; x.dim()],
        degenerate: false,
    };
    grad.degenerate = !grad_geodesic_distance_raw(
        x.coords(),
        y.coords(),
        x.c.get(),
        1.0,
        &mut grad.wrt_x,
        &mut grad.wrt_y,
    );
    Ok(grad)
}

/// Accumulates `seed · ∂d(x,y)/∂x` and `seed · ∂d(x,y)/∂y`.
/// Returns false (and accumulates nothing) for coincident points.
pub(crate) fn grad_geodesic_distance_raw(
    x: &[f64],
    y: &[f64],
    c: f64,
    seed: f64,
    grad_x: &mut [f64],
    grad_y: &mut [f64],
) -> bool {
    let neg_x: Vec<f64> = x.iter().map(|v| -v).collect();
    let mut w = vec![0.0; x.len()];
    mobius_add_raw(&neg_x, y, c, &mut w);
    let wn = norm_sq(&w).sqrt();
    if wn == 0.0 {
        return false;
    }
    let sc = c.sqrt();
    let n = sc * wn;
    if n >= 1.0 - ATANH_MARGIN {
        // Inside the clamp plateau the distance is locally constant.
        return true;
    }
    // d = (2/√c)·artanh(√c‖w‖)  ⇒  ∂d/∂w = 2/(1 − c‖w‖²) · w/‖w‖
    let coeff = seed * 2.0 / ((1.0 - n * n) * wn);
    let upstream: Vec<f64> = w.iter().map(|v| coeff * v).collect();
    let mut g_negx = vec![0.0; x.len()];
    mobius_add_vjp(&neg_x, y, c, &upstream, &mut g_negx, grad_y);
    for i in 0..x.len() {
        grad_x[i] -= g_negx[i];
    }
    true
}

/// Euclidean distance and its gradient, used by the flat-metric variant.
pub(crate) fn euclidean_distance_raw(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Accumulates `seed · ∂‖x−y‖/∂x` and the mirror term for y.
/// Returns false for coincident points.
pub(crate) fn grad_euclidean_distance_raw(
    x: &[f64],
    y: &[f64],
    seed: f64,
    grad_x: &mut [f64],
    grad_y: &mut [f64],
) -> bool {
    let d = euclidean_distance_raw(x, y);
    if d == 0.0 {
        return false;
    }
    for i in 0..x.len() {
        let g = seed * (x[i] - y[i]) / d;
        grad_x[i] += g;
        grad_y[i] -= g;
    }
    true
}
