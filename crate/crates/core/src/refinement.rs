//! Iterative refinement for separable convex flow objectives.
//!
//! Objectives are sums of per-edge scalar pieces: `q`-type pieces carry the
//! smooth bulk (curvature pinned to a scale `a_i`) and `h`-type pieces
//! (`h(0) = h'(0) = 0`, curvature pinned to `b_i`) enter through a `p`-th
//! power or an `l_p` norm. The derivative sandwiches turn one approximate
//! minimization of a smoothed quadratic-plus-power model over circulations
//! into geometric progress on the true objective; stacking the pieces gives
//! the full reduction chain:
//!
//!   `sum q + ||h||_p`  ->  `sum q + W sum h^p`  ->  smoothed l2-l2p models.

use crate::barrier::{lp_norm, phi_tilde, phi_tilde_d1, phi_tilde_d2};
use crate::error::{Error, Result};
use crate::graph::{FlowVector, Graph};
use crate::laplacian::{min_norm_feasible_flow, LaplacianSolver};

/// A scalar convex piece with pinned curvature.
///
/// `Quadratic` and `BarrierDivergence` are `q`-type (value and slope at 0
/// bounded); `HalfQuadratic` and `ExtendedCongestion` are `h`-type
/// (`h(0) = h'(0) = 0`, nonnegative).
#[derive(Clone, Debug)]
pub enum ScalarPiece {
    /// `a/2 x^2 + g x`; curvature exactly `a`.
    Quadratic { a: f64, g: f64 },
    /// `b/2 x^2`; curvature exactly `b`.
    HalfQuadratic { b: f64 },
    /// `w_up phi~(x/c_up) + w_down phi~(-x/c_down)`; curvature within
    /// `[a/2, 2a]` for `a = w_up/c_up^2 + w_down/c_down^2`.
    BarrierDivergence {
        w_up: f64,
        w_down: f64,
        c_up: f64,
        c_down: f64,
        epsilon: f64,
    },
    /// `scale * (c_up)^2 (phi~(x/c_up) + (c_down/c_up) phi~(-x/c_down))`;
    /// curvature within `[scale/2, 4 scale]`.
    ExtendedCongestion {
        c_up: f64,
        c_down: f64,
        epsilon: f64,
        scale: f64,
    },
}

impl ScalarPiece {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ScalarPiece::Quadratic { a, g } => 0.5 * a * x * x + g * x,
            ScalarPiece::HalfQuadratic { b } => 0.5 * b * x * x,
            ScalarPiece::BarrierDivergence {
                w_up,
                w_down,
                c_up,
                c_down,
                epsilon,
            } => w_up * phi_tilde(x / c_up, epsilon) + w_down * phi_tilde(-x / c_down, epsilon),
            ScalarPiece::ExtendedCongestion {
                c_up,
                c_down,
                epsilon,
                scale,
            } => {
                scale
                    * c_up
                    * c_up
                    * (phi_tilde(x / c_up, epsilon)
                        + (c_down / c_up) * phi_tilde(-x / c_down, epsilon))
            }
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            ScalarPiece::Quadratic { a, g } => a * x + g,
            ScalarPiece::HalfQuadratic { b } => b * x,
            ScalarPiece::BarrierDivergence {
                w_up,
                w_down,
                c_up,
                c_down,
                epsilon,
            } => {
                w_up / c_up * phi_tilde_d1(x / c_up, epsilon)
                    - w_down / c_down * phi_tilde_d1(-x / c_down, epsilon)
            }
            ScalarPiece::ExtendedCongestion {
                c_up,
                c_down,
                epsilon,
                scale,
            } => {
                scale
                    * c_up
                    * (phi_tilde_d1(x / c_up, epsilon) - phi_tilde_d1(-x / c_down, epsilon))
            }
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            ScalarPiece::Quadratic { a, .. } => a,
            ScalarPiece::HalfQuadratic { b } => b,
            ScalarPiece::BarrierDivergence {
                w_up,
                w_down,
                c_up,
                c_down,
                epsilon,
            } => {
                w_up / (c_up * c_up) * phi_tilde_d2(x / c_up, epsilon)
                    + w_down / (c_down * c_down) * phi_tilde_d2(-x / c_down, epsilon)
            }
            ScalarPiece::ExtendedCongestion {
                c_up,
                c_down,
                epsilon,
                scale,
            } => {
                scale
                    * (phi_tilde_d2(x / c_up, epsilon)
                        + (c_up / c_down) * phi_tilde_d2(-x / c_down, epsilon))
            }
        }
    }

    /// The curvature scale (`a_i` for q-type, `b_i` for h-type).
    pub fn curvature_scale(&self) -> f64 {
        match *self {
            ScalarPiece::Quadratic { a, .. } => a,
            ScalarPiece::HalfQuadratic { b } => b,
            ScalarPiece::BarrierDivergence {
                w_up,
                w_down,
                c_up,
                c_down,
                ..
            } => w_up / (c_up * c_up) + w_down / (c_down * c_down),
            ScalarPiece::ExtendedCongestion { scale, .. } => scale,
        }
    }

    /// Interval certified to contain the second derivative everywhere.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        let s = self.curvature_scale();
        match self {
            ScalarPiece::Quadratic { .. } | ScalarPiece::HalfQuadratic { .. } => (s, s),
            ScalarPiece::BarrierDivergence { .. } => (s / 2.0, 2.0 * s),
            ScalarPiece::ExtendedCongestion { .. } => (s / 2.0, 4.0 * s),
        }
    }

    pub fn is_h_type(&self) -> bool {
        matches!(
            self,
            ScalarPiece::HalfQuadratic { .. } | ScalarPiece::ExtendedCongestion { .. }
        )
    }

    /// Multiplies an h-type piece by `k > 0` (used to fold a weight budget
    /// `W` into the pieces as `W^{1/p} h`).
    pub fn scaled_h(&self, k: f64) -> Result<ScalarPiece> {
        match *self {
            ScalarPiece::HalfQuadratic { b } => Ok(ScalarPiece::HalfQuadratic { b: b * k }),
            ScalarPiece::ExtendedCongestion {
                c_up,
                c_down,
                epsilon,
                scale,
            } => Ok(ScalarPiece::ExtendedCongestion {
                c_up,
                c_down,
                epsilon,
                scale: scale * k,
            }),
            _ => Err(Error::Contract("only h-type pieces can be rescaled".into())),
        }
    }
}

/// `(c1 D^2/2, q(x+D) - q(x) - q'(x) D, c2 D^2/2)` with the ordering
/// asserted; a violation means the piece breaks its curvature contract.
pub fn sandwich_quadratic(piece: &ScalarPiece, x: f64, delta: f64) -> Result<(f64, f64, f64)> {
    let (c1, c2) = piece.curvature_bounds();
    let lower = 0.5 * c1 * delta * delta;
    let upper = 0.5 * c2 * delta * delta;
    let middle = piece.value(x + delta) - piece.value(x) - piece.d1(x) * delta;
    let slack = 1e-12 * (1.0 + upper.abs());
    if middle + slack < lower || middle > upper + slack {
        return Err(Error::Contract(format!(
            "quadratic sandwich violated: {lower} <= {middle} <= {upper}"
        )));
    }
    Ok((lower, middle, upper))
}

/// The `p`-power expansion sandwich for an h-type piece:
/// `(8 c2)^{-2p} c1^{3p} (x^{2p-2} D^2 + D^{2p})` below,
/// `(16 c2)^p (x^{2p-2} D^2 + D^{2p})` above.
pub fn sandwich_power(
    piece: &ScalarPiece,
    p: usize,
    x: f64,
    delta: f64,
) -> Result<(f64, f64, f64)> {
    if !piece.is_h_type() {
        return Err(Error::Contract("power sandwich needs an h-type piece".into()));
    }
    if p == 0 || p % 2 != 0 {
        return Err(Error::Contract("p must be a positive even integer".into()));
    }
    let (c1, c2) = piece.curvature_bounds();
    let pi = p as i32;
    let base = x.powi(2 * pi - 2) * delta * delta + delta.powi(2 * pi);
    let lower = (8.0 * c2).powi(-2 * pi) * c1.powi(3 * pi) * base;
    let upper = (16.0 * c2).powi(pi) * base;
    let hx = piece.value(x);
    let hxd = piece.value(x + delta);
    let middle = hxd.powi(pi) - hx.powi(pi) - (p as f64) * hx.powi(pi - 1) * piece.d1(x) * delta;
    let slack = 1e-12 * (1.0 + upper.abs()) + 1e-9 * middle.abs().max(hx.powi(pi)) * f64::EPSILON;
    if middle + slack < lower || middle > upper + slack {
        return Err(Error::Contract(format!(
            "power sandwich violated: {lower} <= {middle} <= {upper}"
        )));
    }
    Ok((lower, middle, upper))
}

/// The base power inequality: for even `p > 0`,
/// `2^{-p} (x^{p-2} D^2 + D^p) <= (x+D)^p - x^p - p x^{p-1} D
///  <= p 2^{p-1} (x^{p-2} D^2 + D^p)`.
pub fn kpsw_power_bounds(p: usize, x: f64, delta: f64) -> (f64, f64, f64) {
    let pi = p as i32;
    let base = x.powi(pi - 2) * delta * delta + delta.powi(pi);
    let lower = 2f64.powi(-pi) * base;
    let upper = (p as f64) * 2f64.powi(pi - 1) * base;
    let middle = (x + delta).powi(pi) - x.powi(pi) - (p as f64) * x.powi(pi - 1) * delta;
    (lower, middle, upper)
}

/// A smoothed quadratic-plus-power instance over the circulation space:
/// minimize `g^T x + sum r_e x^2 + sum b_e^p x^{2p}` subject to `B^T x = 0`.
#[derive(Clone, Debug)]
pub struct SmoothedInstance {
    pub linear: Vec<f64>,
    pub quadratic: Vec<f64>,
    pub power: Vec<f64>,
    /// The power exponent `2p` (even, >= 4).
    pub exponent: usize,
}

impl SmoothedInstance {
    fn validate(&self, m: usize) -> Result<()> {
        if self.linear.len() != m || self.quadratic.len() != m || self.power.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: self.linear.len(),
            });
        }
        if self.exponent < 4 || self.exponent % 2 != 0 {
            return Err(Error::Contract("exponent must be an even integer >= 4".into()));
        }
        if self
            .quadratic
            .iter()
            .chain(self.power.iter())
            .any(|&v| v < 0.0 || !v.is_finite())
        {
            return Err(Error::Contract(
                "quadratic and power weights must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// `g^T x + sum r x^2 + sum b^p x^{2p}`, evaluated as `(b x^2)^p` so
    /// large exponents stay in range.
    pub fn value(&self, x: &[f64]) -> f64 {
        let p = (self.exponent / 2) as i32;
        let mut total = 0.0;
        for i in 0..x.len() {
            let xi = x[i];
            total += self.linear[i] * xi + self.quadratic[i] * xi * xi;
            let core = self.power[i] * xi * xi;
            total += core.powi(p);
        }
        total
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let p = (self.exponent / 2) as i32;
        (0..x.len())
            .map(|i| {
                let xi = x[i];
                let core = self.power[i] * xi * xi;
                self.linear[i]
                    + 2.0 * self.quadratic[i] * xi
                    + (self.exponent as f64) * self.power[i] * xi * core.powi(p - 1)
            })
            .collect()
    }

    pub fn hessian_diag(&self, x: &[f64]) -> Vec<f64> {
        let p = (self.exponent / 2) as i32;
        let two_p = self.exponent as f64;
        (0..x.len())
            .map(|i| {
                let xi = x[i];
                let core = self.power[i] * xi * xi;
                2.0 * self.quadratic[i] + two_p * (two_p - 1.0) * self.power[i] * core.powi(p - 1)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct OracleStats {
    pub iterations: usize,
    pub gap_bound: f64,
    pub demand_residual: f64,
}

const ORACLE_CAP: usize = 400;

/// Minimizes a smoothed instance over circulations with damped projected
/// Newton steps (each step is one Laplacian solve with the local Hessian
/// as resistances, plus Armijo backtracking).
pub fn oracle_2p(
    g: &Graph,
    inst: &SmoothedInstance,
    tol: f64,
    warm: Option<&[f64]>,
) -> Result<(FlowVector, OracleStats)> {
    let m = g.edge_count();
    inst.validate(m)?;
    if !(tol > 0.0) {
        return Err(Error::Contract("tolerance must be positive".into()));
    }
    let mut x = match warm {
        Some(w) if w.len() == m => w.to_vec(),
        _ => vec![0.0; m],
    };
    let unit = LaplacianSolver::new(g, &vec![1.0; m])?;
    let min_r = inst.quadratic.iter().copied().fold(f64::INFINITY, f64::min);
    let ridge = 1e-14
        * (1.0
            + inst
                .linear
                .iter()
                .fold(0.0_f64, |mx, &v| mx.max(v.abs())));

    let mut val = inst.value(&x);
    let mut iterations = 0;
    let mut gap = f64::INFINITY;
    let mut small_steps = 0;

    while iterations < ORACLE_CAP {
        iterations += 1;
        let grad = inst.gradient(&x);
        let hess = inst.hessian_diag(&x);
        let resist: Vec<f64> = hess.iter().map(|&h| (h + ridge).max(1e-300)).collect();

        // Projected gradient (orthogonal) gives a certified gap when the
        // quadratic term is uniformly positive.
        let d = g.apply_incidence_transpose(&grad)?;
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (yp, _) = unit.solve_with_floor(&d, 1e-12, 1e-13 * (1.0 + gnorm))?;
        let gflow = unit.flow_for(&yp);
        let pg_norm2: f64 = grad
            .iter()
            .zip(&gflow)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        gap = if min_r > 0.0 {
            pg_norm2 / (4.0 * min_r)
        } else {
            f64::INFINITY
        };
        if min_r > 0.0 && gap <= tol {
            break;
        }

        // Newton direction restricted to circulations: the KKT system is
        // B^T H^{-1} B y = B^T H^{-1} grad, a Laplacian with resistances H.
        let weighted = LaplacianSolver::new(g, &resist)?;
        let hg: Vec<f64> = grad.iter().zip(&resist).map(|(gv, h)| gv / h).collect();
        let dh = g.apply_incidence_transpose(&hg)?;
        let (y, _) = weighted.solve(&dh, 1e-12)?;
        let by = g.apply_incidence(&y)?;
        let mut dir: Vec<f64> = (0..m).map(|e| (by[e] - grad[e]) / resist[e]).collect();

        let slope: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if std::env::var("DIVFLOW_DEBUG_ORACLE").is_ok() {
            let dmax0 = dir.iter().fold(0.0_f64, |mx, &v| mx.max(v.abs()));
            eprintln!("oracle iter {iterations}: gap={gap:.3e} slope={slope:.3e} dmax={dmax0:.3e} val={val:.6e}");
        }
        if slope >= 0.0 {
            break;
        }
        let decrement = -slope;
        if min_r <= 0.0 && decrement <= tol * 1e-3 {
            gap = decrement;
            break;
        }

        // Keep the first hop finite when the quadratic weights are tiny.
        let clip = 1e6 * (1.0 + x.iter().fold(0.0_f64, |mx, &v| mx.max(v.abs())));
        let dmax = dir.iter().fold(0.0_f64, |mx, &v| mx.max(v.abs()));
        if dmax > clip {
            let s = clip / dmax;
            for v in dir.iter_mut() {
                *v *= s;
            }
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..220 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            let cval = inst.value(&cand);
            if cval.is_finite() && cval <= val + 1e-4 * alpha * slope {
                x = cand;
                val = cval;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if alpha * dmax <= 1e-16 * (1.0 + x.iter().fold(0.0_f64, |mx, &v| mx.max(v.abs()))) {
            small_steps += 1;
            if small_steps >= 2 {
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    let d = g.apply_incidence_transpose(&x)?;
    let demand_residual = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let stats = OracleStats {
        iterations,
        gap_bound: gap,
        demand_residual,
    };
    if min_r > 0.0 && gap > tol && iterations >= ORACLE_CAP {
        return Err(Error::Convergence {
            msg: "oracle_2p hit its iteration cap".into(),
            residual: gap,
        });
    }
    Ok((x, stats))
}

/// A separable convex flow problem: per-edge `q` pieces with scales `a`,
/// per-edge `h` pieces with scales `b`, an even exponent `p`, and either a
/// budget `W` (the `sum q + W sum h^p` form) or none (`sum q + ||h||_p`).
#[derive(Clone, Debug)]
pub struct RefinementProblem {
    pub demand: Vec<f64>,
    pub q: Vec<ScalarPiece>,
    pub h: Vec<ScalarPiece>,
    pub p: usize,
    pub w_budget: Option<f64>,
}

/// Bound on curvature scales and piece data (stands in for the paper's
/// `2^{poly(log m)}` ceilings).
pub const SCALE_CEILING: f64 = 1e30;

impl RefinementProblem {
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let m = g.edge_count();
        if self.demand.len() != g.vertex_count() {
            return Err(Error::Dimension {
                expected: g.vertex_count(),
                got: self.demand.len(),
            });
        }
        if self.q.len() != m || self.h.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: self.q.len().max(self.h.len()),
            });
        }
        if self.p < 2 || self.p % 2 != 0 {
            return Err(Error::Contract("p must be an even integer >= 2".into()));
        }
        if let Some(w) = self.w_budget {
            if !(w > 0.0) || w > SCALE_CEILING {
                return Err(Error::Contract("weight budget outside (0, ceiling]".into()));
            }
        }
        for piece in &self.h {
            if !piece.is_h_type() {
                return Err(Error::Contract("h pieces must be h-type".into()));
            }
            if piece.value(0.0).abs() > 1e-12 || piece.d1(0.0).abs() > 1e-12 {
                return Err(Error::Contract("h pieces must vanish to first order at 0".into()));
            }
        }
        for piece in self.q.iter().chain(self.h.iter()) {
            let s = piece.curvature_scale();
            if !(s >= 0.0) || s > SCALE_CEILING {
                return Err(Error::Contract("curvature scale outside [0, ceiling]".into()));
            }
        }
        Ok(())
    }

    /// `sum q_i(x_i) + W sum h_i(x_i)^p` (the power form; `W` defaults to 1).
    pub fn value_power_form(&self, x: &[f64]) -> f64 {
        let w = self.w_budget.unwrap_or(1.0);
        let pi = self.p as i32;
        let mut total = 0.0;
        for i in 0..x.len() {
            total += self.q[i].value(x[i]) + w * self.h[i].value(x[i]).powi(pi);
        }
        total
    }

    /// `sum q_i(x_i) + ||h(x)||_p` (the norm form).
    pub fn value_norm_form(&self, x: &[f64]) -> f64 {
        let hvals: Vec<f64> = (0..x.len()).map(|i| self.h[i].value(x[i])).collect();
        let qsum: f64 = (0..x.len()).map(|i| self.q[i].value(x[i])).sum();
        qsum + lp_norm(&hvals, self.p)
    }

    /// Gradient of the norm form (used for stationarity checks).
    pub fn gradient_norm_form(&self, x: &[f64]) -> Vec<f64> {
        let hvals: Vec<f64> = (0..x.len()).map(|i| self.h[i].value(x[i])).collect();
        let hp = lp_norm(&hvals, self.p);
        (0..x.len())
            .map(|i| {
                let mut gi = self.q[i].d1(x[i]);
                if hp > 0.0 {
                    gi += (hvals[i] / hp).powi(self.p as i32 - 1) * self.h[i].d1(x[i]);
                }
                gi
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RefineStats {
    pub sweeps: usize,
    pub oracle_calls: usize,
    pub oracle_iterations: usize,
    pub objective: f64,
    pub floor_steps: usize,
}

/// How `reduce_to_2p` advances along oracle directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMode {
    /// Backtracking from step 1 with the worst-case floor.
    LineSearch,
    /// Always take the worst-case floor step `2^{-22p}` (the analysis step;
    /// used to exhibit the geometric progress guarantee).
    FloorOnly,
}

/// Minimizes `sum q + W sum h^p` over `B^T x = d`.
///
/// Each sweep rebuilds the smoothed model `r_i = a_i + b_i^p x_i^{2p-2}`,
/// asks [`oracle_2p`] for an approximate minimizer of
/// `g^T D + 2^{-16p} (sum r D^2 + sum b^p D^{2p})` over circulations, and
/// steps with a backtracking line search floored at `2^{-22p}`.
pub fn reduce_to_2p(
    g: &Graph,
    prob: &RefinementProblem,
    tol: f64,
    mode: StepMode,
    warm: Option<&[f64]>,
    max_sweeps: usize,
) -> Result<(FlowVector, RefineStats)> {
    prob.validate(g)?;
    let m = g.edge_count();
    let p = prob.p;
    let pi = p as i32;
    let w = prob.w_budget.unwrap_or(1.0);
    // Fold the budget into the h pieces: W h^p = (W^{1/p} h)^p.
    let fold = w.powf(1.0 / p as f64);
    let h: Vec<ScalarPiece> = prob
        .h
        .iter()
        .map(|piece| piece.scaled_h(fold))
        .collect::<Result<_>>()?;
    let a: Vec<f64> = prob.q.iter().map(|piece| piece.curvature_scale()).collect();
    let b: Vec<f64> = h.iter().map(|piece| piece.curvature_scale()).collect();

    let attenuation = 2f64.powi(-16 * pi);
    let floor_step = 2f64.powi(-22 * pi).max(1e-18);

    let objective = |x: &[f64]| -> f64 {
        let mut total = 0.0;
        for i in 0..m {
            total += prob.q[i].value(x[i]) + h[i].value(x[i]).powi(pi);
        }
        total
    };

    let mut x = match warm {
        Some(v) if v.len() == m => v.to_vec(),
        _ => min_norm_feasible_flow(g, &prob.demand, 1e-12)?,
    };
    let mut val = objective(&x);
    let mut stats = RefineStats {
        sweeps: 0,
        oracle_calls: 0,
        oracle_iterations: 0,
        objective: val,
        floor_steps: 0,
    };
    let mut floor_stalls = 0;

    for _ in 0..max_sweeps {
        stats.sweeps += 1;
        // Model weights from the expansion around x.
        let mut grad = Vec::with_capacity(m);
        let mut r = Vec::with_capacity(m);
        for i in 0..m {
            let hv = h[i].value(x[i]);
            grad.push(prob.q[i].d1(x[i]) + (p as f64) * hv.powi(pi - 1) * h[i].d1(x[i]));
            let bp_x = b[i] * (b[i] * x[i] * x[i]).powi(pi - 1);
            r.push(a[i] + bp_x);
        }
        let inst = SmoothedInstance {
            linear: grad,
            quadratic: r.iter().map(|&v| attenuation * v).collect(),
            power: b.iter().map(|&v| 2f64.powi(-32) * v).collect(),
            exponent: 2 * p,
        };
        let inner_tol = (tol * 1e-2).max(1e-14);
        let (dir, ostats) = oracle_2p(g, &inst, inner_tol, None)?;
        stats.oracle_calls += 1;
        stats.oracle_iterations += ostats.iterations;

        let slope: f64 = inst
            .linear
            .iter()
            .zip(&dir)
            .map(|(a, b)| a * b)
            .sum();

        let step = match mode {
            StepMode::FloorOnly => floor_step,
            StepMode::LineSearch => {
                let mut alpha = 1.0;
                let mut chosen = 0.0;
                while alpha >= floor_step {
                    let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
                    let cval = objective(&cand);
                    if cval.is_finite() && cval <= val + 1e-4 * alpha * slope.min(0.0) {
                        chosen = alpha;
                        break;
                    }
                    alpha *= 0.5;
                }
                if chosen == 0.0 {
                    floor_step
                } else {
                    chosen
                }
            }
        };
        if step <= floor_step {
            stats.floor_steps += 1;
        }

        let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
        let cval = objective(&cand);
        let decrease = val - cval;
        if cval.is_finite() && decrease >= 0.0 {
            x = cand;
            val = cval;
            floor_stalls = 0;
        } else {
            floor_stalls += 1;
            if floor_stalls >= 2 {
                if stats.sweeps > 2 {
                    break;
                }
                return Err(Error::Stall(
                    "objective non-decreasing across a floor-step sweep".into(),
                ));
            }
            continue;
        }

        if decrease < tol / 10.0 {
            break;
        }
    }

    stats.objective = val;
    Ok((x, stats))
}

#[derive(Clone, Debug)]
pub struct LpNormStats {
    pub outer_iterations: usize,
    pub multiplier: f64,
    pub oracle_calls: usize,
    pub objective: f64,
}

/// Minimizes `sum q + ||h||_p` over `B^T x = d` by a damped fixed point on
/// the scalar multiplier of the power form: at a joint optimum the
/// multiplier matches `||h(x)||_p^{1-p} / p`, so each round solves the
/// power form at the current multiplier and averages toward the matching
/// value, with a ternary-search fallback if the iteration oscillates.
pub fn solve_lp_norm(
    g: &Graph,
    prob: &RefinementProblem,
    tol: f64,
    warm: Option<&[f64]>,
) -> Result<(FlowVector, LpNormStats)> {
    prob.validate(g)?;
    if prob.w_budget.is_some() {
        return Err(Error::Contract(
            "solve_lp_norm expects the norm form (no budget)".into(),
        ));
    }
    let m = g.edge_count();
    let p = prob.p;
    let clamp = |lam: f64| lam.clamp(1e-14, 1e14);

    let h_norm = |x: &[f64]| -> f64 {
        let hv: Vec<f64> = (0..m).map(|i| prob.h[i].value(x[i])).collect();
        lp_norm(&hv, p)
    };
    let target_for = |x: &[f64]| -> Option<f64> {
        let hp = h_norm(x);
        let scale = 1.0 + x.iter().fold(0.0_f64, |mx, &v| mx.max(v.abs()));
        if hp > 1e-10 * scale {
            Some(clamp(hp.powf(1.0 - p as f64) / p as f64))
        } else {
            None
        }
    };

    let mut x = match warm {
        Some(v) if v.len() == m => v.to_vec(),
        _ => min_norm_feasible_flow(g, &prob.demand, 1e-12)?,
    };
    let mut lambda = target_for(&x).unwrap_or(1.0);
    let mut best_x = x.clone();
    let mut best_val = prob.value_norm_form(&x);
    let mut prev_val = f64::INFINITY;
    let mut stats = LpNormStats {
        outer_iterations: 0,
        multiplier: lambda,
        oracle_calls: 0,
        objective: best_val,
    };
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut increases = 0usize;

    for _ in 0..40 {
        stats.outer_iterations += 1;
        let power = RefinementProblem {
            demand: prob.demand.clone(),
            q: prob.q.clone(),
            h: prob.h.clone(),
            p,
            w_budget: Some(lambda),
        };
        let (xk, rstats) = reduce_to_2p(g, &power, tol / 10.0, StepMode::LineSearch, Some(&x), 200)?;
        stats.oracle_calls += rstats.oracle_calls;
        x = xk;
        let val = prob.value_norm_form(&x);
        samples.push((lambda, val));
        if val < best_val {
            best_val = val;
            best_x = x.clone();
        }

        let matched = match target_for(&x) {
            Some(t) => {
                let ratio = (t / lambda).max(lambda / t);
                lambda = clamp(if ratio > 4.0 {
                    0.5 * lambda + 0.5 * t
                } else {
                    // Near the fixed point the undamped update converges
                    // fast and leaves no multiplier mismatch behind.
                    t
                });
                ratio < 1.0 + 1e-7
            }
            None => true, // the norm term is negligible at this point
        };
        let settled = (prev_val - val).abs() <= tol * 0.5 * (1.0 + val.abs());
        if matched && settled {
            break;
        }
        if val > prev_val + tol {
            increases += 1;
            if increases >= 4 {
                // Oscillating multiplier: ternary search on log(lambda) over
                // the sampled bracket.
                let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
                let hi = samples.iter().map(|s| s.0).fold(0.0_f64, f64::max);
                if !(lo > 0.0 && hi > lo) {
                    return Err(Error::Search("multiplier bracket collapsed".into()));
                }
                let (mut llo, mut lhi) = (lo.ln(), hi.ln());
                for _ in 0..12 {
                    let l1 = llo + (lhi - llo) / 3.0;
                    let l2 = lhi - (lhi - llo) / 3.0;
                    let eval = |lam: f64, x0: &Vec<f64>| -> Result<(f64, Vec<f64>)> {
                        let pw = RefinementProblem {
                            demand: prob.demand.clone(),
                            q: prob.q.clone(),
                            h: prob.h.clone(),
                            p,
                            w_budget: Some(lam.exp()),
                        };
                        let (xx, _) =
                            reduce_to_2p(g, &pw, tol / 10.0, StepMode::LineSearch, Some(x0), 120)?;
                        Ok((prob.value_norm_form(&xx), xx))
                    };
                    let (v1, x1) = eval(l1, &x)?;
                    let (v2, x2) = eval(l2, &x)?;
                    if v1 < best_val {
                        best_val = v1;
                        best_x = x1.clone();
                    }
                    if v2 < best_val {
                        best_val = v2;
                        best_x = x2.clone();
                    }
                    if v1 <= v2 {
                        lhi = l2;
                        x = x1;
                    } else {
                        llo = l1;
                        x = x2;
                    }
                }
                break;
            }
        }
        prev_val = val;
    }

    // Final polish at the settled multiplier.
    let polish = RefinementProblem {
        demand: prob.demand.clone(),
        q: prob.q.clone(),
        h: prob.h.clone(),
        p,
        w_budget: Some(clamp(lambda)),
    };
    let (xp, rstats) = reduce_to_2p(
        g,
        &polish,
        tol / 20.0,
        StepMode::LineSearch,
        Some(&best_x),
        200,
    )?;
    stats.oracle_calls += rstats.oracle_calls;
    let vp = prob.value_norm_form(&xp);
    if vp < best_val {
        best_val = vp;
        best_x = xp;
    }

    stats.multiplier = lambda;
    stats.objective = best_val;
    Ok((best_x, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_instance, unit_demand, Graph};
    use crate::laplacian::electric_flow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_sandwich_exact_for_pure_quadratic() {
        let q = ScalarPiece::Quadratic { a: 2.0, g: 0.0 };
        let (lo, mid, up) = sandwich_quadratic(&q, 1.0, 0.0).unwrap();
        assert_eq!((lo, mid, up), (0.0, 0.0, 0.0));
        let (lo, mid, up) = sandwich_quadratic(&q, 3.7, 1.3).unwrap();
        assert!((mid - 1.3f64 * 1.3).abs() < 1e-12);
        assert!((lo - mid).abs() < 1e-12 && (up - mid).abs() < 1e-12);
    }

    #[test]
    fn quadratic_sandwich_for_phitilde_pieces() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let piece = ScalarPiece::BarrierDivergence {
            w_up: 1.0,
            w_down: 1.0,
            c_up: 1.0,
            c_down: 1.0,
            epsilon: 0.1,
        };
        for _ in 0..200 {
            let x = rng.gen_range(-5.0..5.0);
            let d = rng.gen_range(-5.0..5.0);
            sandwich_quadratic(&piece, x, d).unwrap();
        }
    }

    #[test]
    fn power_sandwich_hand_example() {
        // h(x) = x^2/2 (c1 = c2 = 1), p = 2, x = 1, delta = 1:
        // middle = h(2)^2 - h(1)^2 - 2 h(1) h'(1) = 4 - 1/4 - 1 = 11/4.
        let h = ScalarPiece::HalfQuadratic { b: 1.0 };
        let (lo, mid, up) = sandwich_power(&h, 2, 1.0, 1.0).unwrap();
        assert!((mid - 2.75).abs() < 1e-12);
        assert!((lo - 2.0 / 4096.0).abs() < 1e-15);
        assert!((up - 512.0).abs() < 1e-9);
        let (_, mid0, _) = sandwich_power(&h, 2, 1.0, 0.0).unwrap();
        assert_eq!(mid0, 0.0);
    }

    #[test]
    fn power_sandwich_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pieces = [
            ScalarPiece::HalfQuadratic { b: 0.7 },
            ScalarPiece::ExtendedCongestion {
                c_up: 1.0,
                c_down: 2.5,
                epsilon: 0.1,
                scale: 1.0,
            },
        ];
        for p in [2usize, 4] {
            for _ in 0..500 {
                let piece = &pieces[rng.gen_range(0..2)];
                let x = rng.gen_range(-3.0..3.0);
                let d = rng.gen_range(-3.0..3.0);
                sandwich_power(piece, p, x, d).unwrap();
            }
        }
    }

    #[test]
    fn kpsw_inequality_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in [2usize, 4, 8] {
            for _ in 0..500 {
                let x = rng.gen_range(-4.0..4.0);
                let d = rng.gen_range(-4.0..4.0);
                let (lo, mid, up) = kpsw_power_bounds(p, x, d);
                let slack = 1e-12 * (1.0 + up.abs());
                assert!(lo <= mid + slack && mid <= up + slack, "p={p} x={x} d={d}");
            }
        }
    }

    #[test]
    fn oracle_zero_linear_term_returns_zero() {
        let (g, _, _) = random_instance(1, 5, 8, 3, true).unwrap();
        let inst = SmoothedInstance {
            linear: vec![0.0; 8],
            quadratic: vec![1.0; 8],
            power: vec![1.0; 8],
            exponent: 4,
        };
        let (x, stats) = oracle_2p(&g, &inst, 1e-10, None).unwrap();
        assert!(x.iter().all(|&v| v.abs() < 1e-12));
        assert!(stats.gap_bound <= 1e-10);
    }

    #[test]
    fn oracle_matches_scalar_minimization_on_triangle() {
        // Triangle: one-dimensional circulation space spanned by (1, 1, 1)
        // (edges oriented around the cycle), so the instance collapses to a
        // scalar polynomial minimized by bisection on its derivative.
        let g = Graph::undirected(3, vec![(0, 1), (1, 2), (2, 0)], vec![1.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..25 {
            let gl: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let r: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..2.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.5)).collect();
            let inst = SmoothedInstance {
                linear: gl.clone(),
                quadratic: r.clone(),
                power: b.clone(),
                exponent: 4,
            };
            let (x, _) = oracle_2p(&g, &inst, 1e-12, None).unwrap();
            // Brute force over t * (1,1,1).
            let val_t = |t: f64| {
                (0..3)
                    .map(|i| gl[i] * t + r[i] * t * t + (b[i] * t * t).powi(2))
                    .sum::<f64>()
            };
            let (mut lo, mut hi) = (-100.0, 100.0);
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if val_t(m1) <= val_t(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let brute = val_t((lo + hi) / 2.0);
            let got = inst.value(&x);
            assert!(got <= brute + 1e-8, "trial {trial}: {got} vs {brute}");
        }
    }

    #[test]
    fn oracle_with_zero_power_matches_electric_flow() {
        let (g, a, b) = random_instance(31, 6, 10, 4, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = g.edge_count();
        let r: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..3.0)).collect();
        // Minimize g^T x + sum r x^2 over circulations where g comes from a
        // potential-induced flow; compare against the electric-flow answer
        // computed by shifting a feasible flow.
        let d = unit_demand(g.vertex_count(), a, b);
        let f0 = electric_flow(&g, &vec![1.0; m], &d, 1e-12).unwrap();
        // E(f0 + x) = sum r (f0+x)^2 -> linear term 2 r f0.
        let lin: Vec<f64> = (0..m).map(|i| 2.0 * r[i] * f0[i]).collect();
        let inst = SmoothedInstance {
            linear: lin,
            quadratic: r.clone(),
            power: vec![0.0; m],
            exponent: 4,
        };
        let (x, _) = oracle_2p(&g, &inst, 1e-12, None).unwrap();
        let best: Vec<f64> = (0..m).map(|i| f0[i] + x[i]).collect();
        let opt = electric_flow(&g, &r, &d, 1e-12).unwrap();
        let e_best: f64 = (0..m).map(|i| r[i] * best[i] * best[i]).sum();
        let e_opt: f64 = (0..m).map(|i| r[i] * opt[i] * opt[i]).sum();
        assert!((e_best - e_opt).abs() <= 1e-8 * (1.0 + e_opt));
    }

    fn quadratic_problem(g: &Graph, rng: &mut ChaCha8Rng, d: Vec<f64>, p: usize) -> RefinementProblem {
        let m = g.edge_count();
        RefinementProblem {
            demand: d,
            q: (0..m)
                .map(|_| ScalarPiece::Quadratic {
                    a: rng.gen_range(0.2..3.0),
                    g: 0.0,
                })
                .collect(),
            h: (0..m)
                .map(|_| ScalarPiece::HalfQuadratic {
                    b: rng.gen_range(0.2..2.0),
                })
                .collect(),
            p,
            w_budget: Some(1.0),
        }
    }

    #[test]
    fn reduce_pure_quadratic_matches_weighted_electric_flow() {
        let (g, a, b) = random_instance(8, 6, 9, 4, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = g.edge_count();
        let d = unit_demand(g.vertex_count(), a, b);
        let aa: Vec<f64> = (0..m).map(|_| rng.gen_range(0.3..4.0)).collect();
        let prob = RefinementProblem {
            demand: d.clone(),
            q: aa
                .iter()
                .map(|&av| ScalarPiece::Quadratic { a: av, g: 0.0 })
                .collect(),
            h: vec![ScalarPiece::HalfQuadratic { b: 0.0 }; m],
            p: 2,
            w_budget: Some(1.0),
        };
        let (x, _) = reduce_to_2p(&g, &prob, 1e-12, StepMode::LineSearch, None, 300).unwrap();
        // sum a/2 x^2 over B^T x = d is the electric flow with r = a/2.
        let r: Vec<f64> = aa.iter().map(|&v| v / 2.0).collect();
        let opt = electric_flow(&g, &r, &d, 1e-12).unwrap();
        let vo = prob.value_power_form(&opt);
        let vx = prob.value_power_form(&x);
        assert!((vx - vo).abs() <= 1e-8 * (1.0 + vo.abs()), "{vx} vs {vo}");
    }

    #[test]
    fn reduce_splits_parallel_edges_evenly() {
        let g = Graph::undirected(2, vec![(0, 1), (0, 1)], vec![5.0, 5.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let prob = quadratic_problem(&g, &mut rng, unit_demand(2, 0, 1), 2);
        // Make the two edges identical.
        let mut prob = prob;
        prob.q[1] = prob.q[0].clone();
        prob.h[1] = prob.h[0].clone();
        let (x, _) = reduce_to_2p(&g, &prob, 1e-12, StepMode::LineSearch, None, 200).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-7 && (x[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn lp_norm_degenerate_h_returns_quadratic_minimizer() {
        let g = Graph::undirected(2, vec![(0, 1), (0, 1)], vec![5.0, 5.0]).unwrap();
        let prob = RefinementProblem {
            demand: unit_demand(2, 0, 1),
            q: vec![ScalarPiece::Quadratic { a: 1.0, g: 0.0 }; 2],
            h: vec![ScalarPiece::HalfQuadratic { b: 1.0 }; 2],
            p: 4,
            w_budget: None,
        };
        // The q-minimizer splits evenly; h does not vanish there, but the
        // norm form must still come out at the brute-force optimum.
        let (x, stats) = solve_lp_norm(&g, &prob, 1e-9, None).unwrap();
        // One circulation dof t: x = (0.5 + t, 0.5 - t); brute force over t.
        let val_t = |t: f64| {
            let x = [0.5 + t, 0.5 - t];
            prob.value_norm_form(&x)
        };
        let (mut lo, mut hi) = (-2.0, 2.0);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if val_t(m1) <= val_t(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let brute = val_t((lo + hi) / 2.0);
        assert!(stats.objective <= brute + 1e-7, "{} vs {brute}", stats.objective);
        assert!((x[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn lp_norm_stationarity_residual_is_small() {
        let (g, a, b) = random_instance(41, 5, 7, 3, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut prob = quadratic_problem(&g, &mut rng, unit_demand(5, a, b), 4);
        prob.w_budget = None;
        let (x, _) = solve_lp_norm(&g, &prob, 1e-9, None).unwrap();
        let grad = prob.gradient_norm_form(&x);
        let proj = crate::laplacian::project_to_circulation(&g, &grad, 1e-12).unwrap();
        let pn: f64 = proj.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gn: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(pn <= 1e-4 * gn.max(1.0), "projected grad {pn} vs {gn}");
    }
}
