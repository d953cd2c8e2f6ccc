//! The scalar barrier functions and the composite step objectives.
//!
//! `phi(x) = -log(1-x) - x` is the Bregman divergence of `-log(1-x)` from
//! zero; `phi_tilde` extends it quadratically outside `[-eps, eps]` so the
//! second derivative is pinned in `[1/2, 2]` (for `eps = 1/10`) and Newton
//! steps stay stable everywhere. On top of these live the weighted barrier
//! `V`, the extended divergence `D~`, and the saddle-point objectives
//! `val` / `tval` whose `l_p` term prices congestion for the weight change.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::laplacian::project_to_circulation;

/// Default extension threshold; the quadratic extension starts at `|x| = 1/10`.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// `phi(x) = -log(1-x) - x` for `x < 1`.
pub fn phi(x: f64) -> Result<f64> {
    if x >= 1.0 {
        return Err(Error::Domain(format!("phi undefined at x = {x}")));
    }
    Ok(-(1.0 - x).ln() - x)
}

/// `phi'(x) = x / (1-x)`.
pub fn phi_d1(x: f64) -> Result<f64> {
    if x >= 1.0 {
        return Err(Error::Domain(format!("phi' undefined at x = {x}")));
    }
    Ok(x / (1.0 - x))
}

/// `phi''(x) = 1 / (1-x)^2`.
pub fn phi_d2(x: f64) -> Result<f64> {
    if x >= 1.0 {
        return Err(Error::Domain(format!("phi'' undefined at x = {x}")));
    }
    Ok(1.0 / ((1.0 - x) * (1.0 - x)))
}

fn phi_raw(x: f64) -> f64 {
    -(1.0 - x).ln() - x
}

fn phi_d1_raw(x: f64) -> f64 {
    x / (1.0 - x)
}

fn phi_d2_raw(x: f64) -> f64 {
    1.0 / ((1.0 - x) * (1.0 - x))
}

/// Quadratic extension of `phi` outside `[-eps, eps]`; defined on all of R,
/// twice continuously differentiable.
pub fn phi_tilde(x: f64, eps: f64) -> f64 {
    if x.abs() <= eps {
        phi_raw(x)
    } else {
        let s = eps.copysign(x);
        let d = x - s;
        phi_raw(s) + phi_d1_raw(s) * d + 0.5 * phi_d2_raw(s) * d * d
    }
}

pub fn phi_tilde_d1(x: f64, eps: f64) -> f64 {
    if x.abs() <= eps {
        phi_d1_raw(x)
    } else {
        let s = eps.copysign(x);
        phi_d1_raw(s) + phi_d2_raw(s) * (x - s)
    }
}

pub fn phi_tilde_d2(x: f64, eps: f64) -> f64 {
    if x.abs() <= eps {
        phi_d2_raw(x)
    } else {
        phi_d2_raw(eps.copysign(x))
    }
}

/// Quadratic extension of `log(1 + x)` outside `[-eps, eps]`.
pub fn log_tilde(x: f64, eps: f64) -> f64 {
    if x.abs() <= eps {
        (1.0 + x).ln()
    } else {
        let s = eps.copysign(x);
        let base = 1.0 + s;
        let d = x - s;
        base.ln() + d / base - d * d / (2.0 * base * base)
    }
}

/// Barrier weights `(w+, w-) >= 1` entrywise.
#[derive(Clone, Debug)]
pub struct Weights {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
}

impl Weights {
    pub fn ones(m: usize) -> Self {
        Self {
            up: vec![1.0; m],
            down: vec![1.0; m],
        }
    }

    pub fn len(&self) -> usize {
        self.up.len()
    }

    pub fn is_empty(&self) -> bool {
        self.up.is_empty()
    }

    /// `||w||_1 = sum(w+ + w-)`.
    pub fn l1(&self) -> f64 {
        self.up.iter().sum::<f64>() + self.down.iter().sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.down.len() != self.up.len() {
            return Err(Error::Dimension {
                expected: self.up.len(),
                got: self.down.len(),
            });
        }
        if self.up.iter().chain(self.down.iter()).any(|&w| w < 1.0) {
            return Err(Error::Contract("weights must be >= 1 entrywise".into()));
        }
        Ok(())
    }

    /// Swaps `(up, down)` on flipped edges, mapping weights into the
    /// orientation where `c+ <= c-`.
    pub fn oriented(&self, flipped: &[bool]) -> Weights {
        let mut out = self.clone();
        for (e, &fl) in flipped.iter().enumerate() {
            if fl {
                out.up[e] = self.down[e];
                out.down[e] = self.up[e];
            }
        }
        out
    }
}

/// Residual capacities at a strictly interior flow, relabeled per edge so
/// that `c+ <= c-` (`flipped` records which edges were relabeled; in the
/// relabeled frame the step variable on a flipped edge is `-f_e`).
#[derive(Clone, Debug)]
pub struct ResidualCaps {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub flipped: Vec<bool>,
}

impl ResidualCaps {
    pub fn from_flow(g: &Graph, f: &[f64]) -> Result<Self> {
        if f.len() != g.edge_count() {
            return Err(Error::Dimension {
                expected: g.edge_count(),
                got: f.len(),
            });
        }
        let m = g.edge_count();
        let mut up = Vec::with_capacity(m);
        let mut down = Vec::with_capacity(m);
        let mut flipped = Vec::with_capacity(m);
        for e in 0..m {
            let cu = g.cap_up()[e] - f[e];
            let cd = g.cap_down()[e] + f[e];
            if !(cu > 0.0 && cd > 0.0) {
                return Err(Error::Domain(format!(
                    "flow is not strictly interior on edge {e} (c+ = {cu:e}, c- = {cd:e})"
                )));
            }
            if cu <= cd {
                up.push(cu);
                down.push(cd);
                flipped.push(false);
            } else {
                up.push(cd);
                down.push(cu);
                flipped.push(true);
            }
        }
        Ok(Self { up, down, flipped })
    }

    pub fn len(&self) -> usize {
        self.up.len()
    }

    pub fn is_empty(&self) -> bool {
        self.up.is_empty()
    }

    /// `c_e = min(c+, c-)`, which is `up` after relabeling.
    pub fn min_cap(&self, e: usize) -> f64 {
        self.up[e]
    }

    /// Maps a step flow from the relabeled frame back to the graph frame.
    pub fn to_graph_frame(&self, step: &[f64]) -> Vec<f64> {
        step.iter()
            .zip(&self.flipped)
            .map(|(&x, &fl)| if fl { -x } else { x })
            .collect()
    }

    /// Maps a per-edge flow from the graph frame into the relabeled frame.
    pub fn to_normalized_frame(&self, f: &[f64]) -> Vec<f64> {
        self.to_graph_frame(f)
    }
}

/// Parameters of the step objective: extension threshold, norm exponent,
/// weight budget, and progress exponent.
#[derive(Clone, Debug)]
pub struct ObjectiveParams {
    pub epsilon: f64,
    pub p: usize,
    pub w_budget: f64,
    pub eta: f64,
}

impl ObjectiveParams {
    /// Derives `eta`, `W = m^{6 eta}`, and `p = 2 ceil(sqrt(log m))` for an
    /// `m`-edge instance with capacity bound `u`. `c0` stands in for the
    /// paper's `o(1)` slack in the exponent (default 1). `eta` may be
    /// negative for small or high-capacity instances; the `m^{6 eta}`
    /// budget must shrink accordingly for the weight-change bounds to hold.
    pub fn for_instance(m: usize, u: f64, c0: f64) -> Self {
        let ln_m = (m.max(2) as f64).ln();
        let eta = 1.0 / 6.0 - u.max(1.0).ln() / (3.0 * ln_m) - c0 / ln_m;
        let w_budget = (m.max(2) as f64).powf(6.0 * eta);
        let p_raw = 2.0 * ln_m.sqrt().ceil();
        let p = (p_raw as usize).clamp(4, 32);
        let p = if p % 2 == 1 { p + 1 } else { p };
        Self {
            epsilon: DEFAULT_EPSILON,
            p,
            w_budget,
            eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Contract("epsilon must lie in (0, 1)".into()));
        }
        if self.p < 2 || self.p % 2 != 0 {
            return Err(Error::Contract("p must be an even integer >= 2".into()));
        }
        if !(self.w_budget > 0.0) {
            return Err(Error::Contract("weight budget must be positive".into()));
        }
        Ok(())
    }
}

/// `V(f) = -sum_e (w+ log(u+ - f) + w- log(u- + f))`.
pub fn barrier_value(g: &Graph, w: &Weights, f: &[f64]) -> Result<f64> {
    check_lengths(g, w, f)?;
    let mut total = 0.0;
    for e in 0..g.edge_count() {
        let cu = g.cap_up()[e] - f[e];
        let cd = g.cap_down()[e] + f[e];
        if !(cu > 0.0 && cd > 0.0) {
            return Err(Error::Domain(format!("f not strictly interior on edge {e}")));
        }
        total -= w.up[e] * cu.ln() + w.down[e] * cd.ln();
    }
    Ok(total)
}

/// Gradient of `V`: entry `w+/(u+ - f) - w-/(u- + f)`.
pub fn barrier_grad(g: &Graph, w: &Weights, f: &[f64]) -> Result<Vec<f64>> {
    check_lengths(g, w, f)?;
    let mut out = Vec::with_capacity(g.edge_count());
    for e in 0..g.edge_count() {
        let cu = g.cap_up()[e] - f[e];
        let cd = g.cap_down()[e] + f[e];
        if !(cu > 0.0 && cd > 0.0) {
            return Err(Error::Domain(format!("f not strictly interior on edge {e}")));
        }
        out.push(w.up[e] / cu - w.down[e] / cd);
    }
    Ok(out)
}

/// Diagonal of the Hessian of `V`: `w+/(u+ - f)^2 + w-/(u- + f)^2`.
pub fn barrier_hessian_diag(g: &Graph, w: &Weights, f: &[f64]) -> Result<Vec<f64>> {
    check_lengths(g, w, f)?;
    let mut out = Vec::with_capacity(g.edge_count());
    for e in 0..g.edge_count() {
        let cu = g.cap_up()[e] - f[e];
        let cd = g.cap_down()[e] + f[e];
        if !(cu > 0.0 && cd > 0.0) {
            return Err(Error::Domain(format!("f not strictly interior on edge {e}")));
        }
        out.push(w.up[e] / (cu * cu) + w.down[e] / (cd * cd));
    }
    Ok(out)
}

fn check_lengths(g: &Graph, w: &Weights, f: &[f64]) -> Result<()> {
    if f.len() != g.edge_count() {
        return Err(Error::Dimension {
            expected: g.edge_count(),
            got: f.len(),
        });
    }
    if w.len() != g.edge_count() {
        return Err(Error::Dimension {
            expected: g.edge_count(),
            got: w.len(),
        });
    }
    Ok(())
}

/// Value, gradient, and Hessian diagonal of the extended divergence
/// `D~(f) = sum_e w+ phi~(f/c+) + w- phi~(-f/c-)`.
///
/// `w` and `caps` must share a frame (both relabeled or both raw).
pub fn divergence_tilde(
    w: &Weights,
    caps: &ResidualCaps,
    f: &[f64],
    eps: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let m = caps.len();
    if f.len() != m || w.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: f.len().max(w.len()),
        });
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(m);
    let mut hess = Vec::with_capacity(m);
    for e in 0..m {
        let (cu, cd) = (caps.up[e], caps.down[e]);
        if !(cu > 0.0 && cd > 0.0) {
            return Err(Error::Domain(format!("nonpositive residual cap on edge {e}")));
        }
        let su = f[e] / cu;
        let sd = -f[e] / cd;
        value += w.up[e] * phi_tilde(su, eps) + w.down[e] * phi_tilde(sd, eps);
        grad.push(w.up[e] / cu * phi_tilde_d1(su, eps) - w.down[e] / cd * phi_tilde_d1(sd, eps));
        hess.push(
            w.up[e] / (cu * cu) * phi_tilde_d2(su, eps)
                + w.down[e] / (cd * cd) * phi_tilde_d2(sd, eps),
        );
    }
    Ok((value, grad, hess))
}

/// `||v||_p` with max-factoring so large `p` cannot overflow.
pub fn lp_norm(v: &[f64], p: usize) -> f64 {
    let vmax = v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
    if vmax == 0.0 {
        return 0.0;
    }
    let sum: f64 = v
        .iter()
        .map(|&x| (x.abs() / vmax).powi(p as i32))
        .sum();
    vmax * sum.powf(1.0 / p as f64)
}

/// Joint evaluation of the saddle-point objectives at a step flow `f`
/// (relabeled frame, `c+ <= c-`).
#[derive(Clone, Debug)]
pub struct ValEval {
    /// Unextended objective `E_w(f) + W ||v_phi||_p`.
    pub val: f64,
    /// Extended objective `D~(f) + W ||v||_p`.
    pub tval: f64,
    pub grad_val: Vec<f64>,
    pub grad_tval: Vec<f64>,
    /// The extended congestion-price vector fed to the weight change.
    pub v: Vec<f64>,
}

/// Evaluates `val`, `tval`, their gradients, and the vector
/// `v_e = (c+)^2 (phi~(f/c+) + (c-/c+) phi~(-f/c-))`.
pub fn val_objectives(
    w: &Weights,
    caps: &ResidualCaps,
    params: &ObjectiveParams,
    f: &[f64],
) -> Result<ValEval> {
    params.validate()?;
    let m = caps.len();
    if f.len() != m || w.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: f.len().max(w.len()),
        });
    }
    let eps = params.epsilon;
    let p = params.p;
    let big_w = params.w_budget;

    let mut e_w = 0.0;
    let mut d_t = 0.0;
    let mut grad_e = Vec::with_capacity(m);
    let mut grad_d = Vec::with_capacity(m);
    let mut v = Vec::with_capacity(m);
    let mut v_phi = Vec::with_capacity(m);
    let mut dv = Vec::with_capacity(m);
    let mut dv_phi = Vec::with_capacity(m);

    for e in 0..m {
        let (cu, cd) = (caps.up[e], caps.down[e]);
        if !(cu > 0.0 && cd > 0.0) {
            return Err(Error::Domain(format!("nonpositive residual cap on edge {e}")));
        }
        if cu > cd {
            return Err(Error::Contract(format!(
                "caps not normalized (c+ > c- on edge {e})"
            )));
        }
        let su = f[e] / cu;
        let sd = -f[e] / cd;
        // Unextended pieces need |f| strictly inside the residual box.
        let guard = 1.0 - 1e-12;
        if su >= guard || sd >= guard {
            return Err(Error::Domain(format!(
                "step leaves the residual box on edge {e} (congestion {:.3})",
                su.max(sd)
            )));
        }
        e_w += w.up[e] * phi_raw(su) + w.down[e] * phi_raw(sd);
        d_t += w.up[e] * phi_tilde(su, eps) + w.down[e] * phi_tilde(sd, eps);
        grad_e.push(w.up[e] / cu * phi_d1_raw(su) - w.down[e] / cd * phi_d1_raw(sd));
        grad_d.push(w.up[e] / cu * phi_tilde_d1(su, eps) - w.down[e] / cd * phi_tilde_d1(sd, eps));
        v.push(cu * cu * (phi_tilde(su, eps) + (cd / cu) * phi_tilde(sd, eps)));
        v_phi.push(cu * cu * (phi_raw(su) + (cd / cu) * phi_raw(sd)));
        dv.push(cu * (phi_tilde_d1(su, eps) - phi_tilde_d1(sd, eps)));
        dv_phi.push(cu * (phi_d1_raw(su) - phi_d1_raw(sd)));
    }

    let norm_t = lp_norm(&v, p);
    let norm_u = lp_norm(&v_phi, p);
    let tval = d_t + big_w * norm_t;
    let val = e_w + big_w * norm_u;

    let mut grad_tval = grad_d;
    let mut grad_val = grad_e;
    for e in 0..m {
        if norm_t > 0.0 {
            grad_tval[e] += big_w * (v[e] / norm_t).powi(p as i32 - 1) * dv[e];
        }
        if norm_u > 0.0 {
            grad_val[e] += big_w * (v_phi[e] / norm_u).powi(p as i32 - 1) * dv_phi[e];
        }
    }

    Ok(ValEval {
        val,
        tval,
        grad_val,
        grad_tval,
        v,
    })
}

/// Relative norm of the circulation component of `grad V(f)`:
/// zero exactly when `grad V(f)` lies in the image of `B`, i.e. when `f`
/// is on the weighted central path for its own flow value.
pub fn centrality_residual(g: &Graph, w: &Weights, f: &[f64]) -> Result<f64> {
    let grad = barrier_grad(g, w, f)?;
    let proj = project_to_circulation(g, &grad, 1e-12)?;
    let gn = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    let pn = proj.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(pn / gn.max(1.0))
}
