//! One central-path advance: the divergence-maximizing step flow, the
//! preliminary weight change `mu`, the reduced weight change `nu`, the
//! per-step inequality checks, and Newton recentering.

use serde::Serialize;

use crate::barrier::{
    barrier_grad, barrier_hessian_diag, barrier_value, centrality_residual, divergence_tilde,
    lp_norm, val_objectives, ObjectiveParams, ResidualCaps, Weights,
};
use crate::error::{Error, Result};
use crate::graph::{unit_demand, Graph};
use crate::laplacian::LaplacianSolver;
use crate::refinement::{solve_lp_norm, RefinementProblem, ScalarPiece};

/// Default denominator constant in the paper step size `F_t / (1e5 m^{1/2-eta})`.
pub const DELTA_CONSTANT: f64 = 1e5;

/// A point on (or near) the weighted central path of a preconditioned graph.
#[derive(Clone, Debug)]
pub struct CentralPathState {
    pub graph: Graph,
    pub source: usize,
    pub sink: usize,
    pub weights: Weights,
    pub flow: Vec<f64>,
    pub t: f64,
    /// Current binary-search guess for the optimal flow value; the residual
    /// flow is measured against it.
    pub t_star_guess: f64,
    pub params: ObjectiveParams,
    pub delta_constant: f64,
    /// Warm starts carried between steps.
    pub last_step: Option<Vec<f64>>,
}

impl CentralPathState {
    pub fn new(
        graph: Graph,
        source: usize,
        sink: usize,
        t_star_guess: f64,
        params: ObjectiveParams,
    ) -> Result<Self> {
        if !graph.is_preconditioned() {
            return Err(Error::Contract("state requires a preconditioned graph".into()));
        }
        params.validate()?;
        let m = graph.edge_count();
        Ok(Self {
            graph,
            source,
            sink,
            weights: Weights::ones(m),
            flow: vec![0.0; m],
            t: 0.0,
            t_star_guess,
            params,
            delta_constant: DELTA_CONSTANT,
            last_step: None,
        })
    }

    /// Remaining flow against the current guess.
    pub fn residual_flow(&self) -> f64 {
        self.t_star_guess - self.t
    }

    /// The paper step size `F_t / (C m^{1/2 - eta})`.
    pub fn paper_delta(&self) -> f64 {
        let m = self.graph.edge_count() as f64;
        self.residual_flow() / (self.delta_constant * m.powf(0.5 - self.params.eta))
    }

    /// Loop threshold `m^{1/2 - eta}`.
    pub fn flow_threshold(&self) -> f64 {
        let m = self.graph.edge_count() as f64;
        m.powf(0.5 - self.params.eta)
    }

    pub fn centrality(&self) -> Result<f64> {
        centrality_residual(&self.graph, &self.weights, &self.flow)
    }

    /// Applies an accepted augmentation in place.
    pub fn apply(&mut self, result: &AugmentResult) {
        for e in 0..self.flow.len() {
            self.flow[e] += result.step_flow[e];
            self.weights.up[e] += result.nu_up[e];
            self.weights.down[e] += result.nu_down[e];
        }
        self.t += result.delta;
        self.last_step = Some(result.step_flow.clone());
    }
}

/// Per-step record; serialized as one JSON line when tracing is enabled.
#[derive(Clone, Debug, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub residual_flow: f64,
    pub delta: f64,
    pub delta_ratio: f64,
    pub divergence: f64,
    pub tval: f64,
    pub max_congestion: f64,
    pub max_step_flow: f64,
    pub mu_l1: f64,
    pub nu_l1: f64,
    pub w_l1_before: f64,
    pub w_l1_after: f64,
    pub centrality_after: f64,
    pub oracle_calls: usize,
    pub outer_iterations: usize,
    pub flipped_edges: usize,
}

/// Result of one Augment call: step size, step flow, and the reduced
/// weight change, all in the graph's own edge orientation.
#[derive(Clone, Debug)]
pub struct AugmentResult {
    pub delta: f64,
    pub step_flow: Vec<f64>,
    pub nu_up: Vec<f64>,
    pub nu_down: Vec<f64>,
    pub mu_l1: f64,
    pub diagnostics: StepDiagnostics,
    /// Data kept for the invariant checks (relabeled frame).
    pub mu_up: Vec<f64>,
    pub mu_down: Vec<f64>,
    pub caps: ResidualCaps,
    pub step_normalized: Vec<f64>,
}

/// One central-path advance of size `delta`.
///
/// Computes `f^ = argmin_{B^T f = delta chi} tval(f)` through the
/// refinement solver, derives the preliminary weight change
/// `mu+ = W (c+)^2 v^{p-1} / ||v||_p^{p-1}`, `mu- = (c-/c+) mu+`, reduces it
/// to the one-sided `nu`, and rejects the step if any edge congestion
/// exceeds `1/20` (the caller halves `delta` and retries in adaptive mode).
pub fn augment(state: &CentralPathState, delta: f64, tol: f64) -> Result<AugmentResult> {
    if !(delta > 0.0) {
        return Err(Error::Contract("delta must be positive".into()));
    }
    let g = &state.graph;
    let m = g.edge_count();
    state.weights.validate()?;

    let caps = ResidualCaps::from_flow(g, &state.flow)?;
    let w_n = state.weights.oriented(&caps.flipped);
    let params = &state.params;
    let w_budget = params.w_budget;

    // tval as a norm-form refinement problem: q carries the divergence,
    // h carries W times the congestion price (folded into the piece scale).
    let q: Vec<ScalarPiece> = (0..m)
        .map(|e| ScalarPiece::BarrierDivergence {
            w_up: w_n.up[e],
            w_down: w_n.down[e],
            c_up: caps.up[e],
            c_down: caps.down[e],
            epsilon: params.epsilon,
        })
        .collect();
    let h: Vec<ScalarPiece> = (0..m)
        .map(|e| ScalarPiece::ExtendedCongestion {
            c_up: caps.up[e],
            c_down: caps.down[e],
            epsilon: params.epsilon,
            scale: w_budget,
        })
        .collect();
    let mut demand = unit_demand(g.vertex_count(), state.source, state.sink);
    for d in demand.iter_mut() {
        *d *= delta;
    }
    // The demand lives on the graph orientation; flips negate edge columns,
    // which is equivalent to solving in the flipped frame directly, so we
    // solve on the graph frame and map into the relabeled frame per edge.
    // (BarrierDivergence/ExtendedCongestion pieces are written in the
    // relabeled frame; remap them onto graph-frame variables.)
    let q: Vec<ScalarPiece> = q
        .into_iter()
        .enumerate()
        .map(|(e, piece)| flip_piece(piece, caps.flipped[e]))
        .collect();
    let h: Vec<ScalarPiece> = h
        .into_iter()
        .enumerate()
        .map(|(e, piece)| flip_piece(piece, caps.flipped[e]))
        .collect();

    let prob = RefinementProblem {
        demand,
        q,
        h,
        p: params.p,
        w_budget: None,
    };
    let warm = state.last_step.as_deref();
    let (x_graph, stats) = solve_lp_norm(g, &prob, tol, warm)?;

    // Work in the relabeled frame for v, mu, nu.
    let x = caps.to_normalized_frame(&x_graph);
    let ev = val_objectives(&w_n, &caps, params, &x)?;
    let (div_val, _, _) = divergence_tilde(&w_n, &caps, &x, params.epsilon)?;

    let mut max_cong = 0.0_f64;
    let mut max_step = 0.0_f64;
    for e in 0..m {
        max_cong = max_cong.max(x[e].abs() / caps.min_cap(e));
        max_step = max_step.max(x[e].abs());
    }

    let vnorm = lp_norm(&ev.v, params.p);
    let mut mu_up = vec![0.0; m];
    let mut mu_down = vec![0.0; m];
    if vnorm > 0.0 {
        for e in 0..m {
            let ratio = (ev.v[e] / vnorm).powi(params.p as i32 - 1);
            mu_up[e] = w_budget * caps.up[e] * caps.up[e] * ratio;
            mu_down[e] = (caps.down[e] / caps.up[e]) * mu_up[e];
        }
    }
    let mu_l1: f64 = mu_up.iter().sum::<f64>() + mu_down.iter().sum::<f64>();

    let mut nu_up = vec![0.0; m];
    let mut nu_down = vec![0.0; m];
    for e in 0..m {
        let cu_after = caps.up[e] - x[e];
        let cd_after = caps.down[e] + x[e];
        if cu_after <= 0.0 || cd_after <= 0.0 {
            return Err(Error::StepRejected(format!(
                "step leaves the residual box on edge {e}"
            )));
        }
        let imbalance = mu_up[e] / cu_after - mu_down[e] / cd_after;
        if imbalance >= 0.0 {
            nu_up[e] = cu_after * imbalance;
        } else {
            nu_down[e] = -cd_after * imbalance;
        }
    }
    let nu_l1: f64 = nu_up.iter().sum::<f64>() + nu_down.iter().sum::<f64>();

    let w_l1 = state.weights.l1();
    let diagnostics = StepDiagnostics {
        step: 0,
        t: state.t,
        residual_flow: state.residual_flow(),
        delta,
        delta_ratio: delta / state.paper_delta().max(f64::MIN_POSITIVE),
        divergence: div_val,
        tval: ev.tval,
        max_congestion: max_cong,
        max_step_flow: max_step,
        mu_l1,
        nu_l1,
        w_l1_before: w_l1,
        w_l1_after: w_l1 + nu_l1,
        centrality_after: f64::NAN,
        oracle_calls: stats.oracle_calls,
        outer_iterations: stats.outer_iterations,
        flipped_edges: caps.flipped.iter().filter(|&&b| b).count(),
    };

    // The hard acceptance gate: congestion at most 1/20 on every edge, so
    // the extended and unextended objectives share the minimizer.
    if max_cong > 0.05 {
        return Err(Error::StepRejected(format!(
            "max congestion {max_cong:.4} exceeds 1/20 at delta {delta:.4e}"
        )));
    }

    // Back to the graph frame.
    let step_flow = caps.to_graph_frame(&x);
    let mut nu_up_g = nu_up.clone();
    let mut nu_down_g = nu_down.clone();
    for e in 0..m {
        if caps.flipped[e] {
            nu_up_g[e] = nu_down[e];
            nu_down_g[e] = nu_up[e];
        }
    }

    Ok(AugmentResult {
        delta,
        step_flow,
        nu_up: nu_up_g,
        nu_down: nu_down_g,
        mu_l1,
        diagnostics,
        mu_up,
        mu_down,
        caps,
        step_normalized: x,
    })
}

fn flip_piece(piece: ScalarPiece, flipped: bool) -> ScalarPiece {
    if !flipped {
        return piece;
    }
    // Substituting x -> -x swaps the roles of the up/down halves.
    match piece {
        ScalarPiece::BarrierDivergence {
            w_up,
            w_down,
            c_up,
            c_down,
            epsilon,
        } => ScalarPiece::BarrierDivergence {
            w_up: w_down,
            w_down: w_up,
            c_up: c_down,
            c_down: c_up,
            epsilon,
        },
        other => other,
    }
}

/// One named inequality with its measured value and bound.
#[derive(Clone, Debug, Serialize)]
pub struct LemmaCheck {
    pub name: &'static str,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl LemmaCheck {
    fn upper(name: &'static str, measured: f64, bound: f64) -> Self {
        Self {
            name,
            measured,
            bound,
            pass: measured <= bound,
        }
    }

    /// Margin to the bound (positive means satisfied with room).
    pub fn margin(&self) -> f64 {
        self.bound - self.measured
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InvariantReport {
    pub checks: Vec<LemmaCheck>,
}

impl InvariantReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<&LemmaCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

/// Evaluates the per-step inequalities from the analysis.
///
/// The paper states each bound for the fixed step `delta_paper`; for larger
/// steps the same proofs give bounds scaled by powers of
/// `rho = delta / delta_paper`, so the thresholds below carry `max(1, rho)`
/// factors that reduce to the paper constants on the paper profile. A 1%
/// slack absorbs solver tolerances.
pub fn check_step_invariants(state: &CentralPathState, result: &AugmentResult) -> InvariantReport {
    let g = &state.graph;
    let m = g.edge_count() as f64;
    let eta = state.params.eta;
    let p = state.params.p;
    let slack = 1.01;
    let rho = (result.delta / state.paper_delta().max(f64::MIN_POSITIVE)).max(1.0);
    let m2eta = m.powf(2.0 * eta);
    let u = g.base_cap_bound();

    let mut checks = Vec::new();

    // Divergence of the step flow (energy bound lemma).
    checks.push(LemmaCheck::upper(
        "divergence_bound",
        result.diagnostics.divergence,
        5e-7 * m2eta * rho * rho * slack,
    ));

    // Dual bound |f_e| c_e^{-2}.
    let mut dual = 0.0_f64;
    for e in 0..g.edge_count() {
        let c = result.caps.min_cap(e);
        dual = dual.max(result.step_normalized[e].abs() / (c * c));
    }
    let rho4 = (8e-6 * rho * rho / result.delta).max(1.0);
    checks.push(LemmaCheck::upper(
        "dual_bound",
        dual,
        m2eta * rho4 * slack,
    ));

    // Congestion at most 1/20 (absolute; this is the acceptance gate).
    checks.push(LemmaCheck::upper(
        "congestion_20th",
        result.diagnostics.max_congestion,
        0.05 + 1e-12,
    ));

    // Step magnitude |f_e| <= m^{-2eta}/500 (scaled by rho).
    checks.push(LemmaCheck::upper(
        "step_magnitude",
        result.diagnostics.max_step_flow,
        m.powf(-2.0 * eta) / 500.0 * rho * slack,
    ));

    // Preliminary weight change budget.
    checks.push(LemmaCheck::upper(
        "mu_l1_half_m",
        result.mu_l1,
        0.5 * m * slack,
    ));

    // mu leaves the current point central: mu+/c+ = mu-/c- exactly.
    let mut neutrality = 0.0_f64;
    for e in 0..g.edge_count() {
        let a = result.mu_up[e] / result.caps.up[e];
        let b = result.mu_down[e] / result.caps.down[e];
        let scale = a.abs().max(b.abs()).max(1e-300);
        neutrality = neutrality.max((a - b).abs() / scale);
    }
    checks.push(LemmaCheck::upper("mu_centrality_neutral", neutrality, 1e-12));

    // nu is one-sided and nonnegative.
    let mut comp = 0.0_f64;
    let mut nu_min = 0.0_f64;
    for e in 0..g.edge_count() {
        comp = comp.max(result.nu_up[e] * result.nu_down[e]);
        nu_min = nu_min.min(result.nu_up[e]).min(result.nu_down[e]);
    }
    checks.push(LemmaCheck::upper("nu_complementary", comp, 0.0));
    checks.push(LemmaCheck::upper("nu_nonnegative", -nu_min, 0.0));

    // Reduced weight change: proof-form bound plus the headline rate.
    let nu_proof_bound = 3.0 * result.diagnostics.max_congestion * result.mu_l1 * slack;
    checks.push(LemmaCheck::upper(
        "nu_l1_reduction",
        result.diagnostics.nu_l1,
        nu_proof_bound,
    ));
    let polylog = (m.max(2.0)).ln().powi(2).max(1.0) * (std::f64::consts::E
        .powf(4.0)
        .max(m.powf(1.0 / p as f64)));
    checks.push(LemmaCheck::upper(
        "nu_l1_headline",
        result.diagnostics.nu_l1,
        (12.0 / 500.0) * m.powf(4.0 * eta) * u.max(1.0) * rho * polylog * slack,
    ));

    // Weight norm invariants.
    checks.push(LemmaCheck::upper(
        "w_l1_pre_step",
        result.diagnostics.w_l1_before,
        2.5 * m * slack,
    ));
    checks.push(LemmaCheck::upper(
        "w_l1_always",
        result.diagnostics.w_l1_after,
        3.0 * m * slack,
    ));

    // Preconditioning-edge residual capacity (needs ||w||_1 <= 3m).
    let mut min_precond_cap = f64::INFINITY;
    for &e in g.precond_edge_ids() {
        let cu = g.cap_up()[e] - state.flow[e];
        let cd = g.cap_down()[e] + state.flow[e];
        min_precond_cap = min_precond_cap.min(cu.min(cd));
    }
    if min_precond_cap.is_finite() {
        let bound = state.residual_flow() / (21.0 * m);
        checks.push(LemmaCheck::upper(
            "precond_residual_cap",
            bound / slack,
            min_precond_cap,
        ));
    }

    InvariantReport { checks }
}

/// Damped Newton recentering: minimizes `V` over `{f : B^T f = t chi}`
/// until the centrality residual drops below `tol`. Each direction is one
/// Laplacian solve with the barrier Hessian as resistances.
pub fn recenter(state: &mut CentralPathState, tol: f64) -> Result<usize> {
    let g = state.graph.clone();
    let w = state.weights.clone();
    let mut consecutive_up = 0usize;
    let mut prev_residual = f64::INFINITY;

    for iter in 0..60 {
        let residual = centrality_residual(&g, &w, &state.flow)?;
        if residual <= tol {
            return Ok(iter);
        }
        if residual > prev_residual {
            consecutive_up += 1;
            if consecutive_up >= 5 {
                return Err(Error::Recenter(format!(
                    "residual increased five times in a row (now {residual:.3e})"
                )));
            }
        } else {
            consecutive_up = 0;
        }
        prev_residual = residual;

        let grad = barrier_grad(&g, &w, &state.flow)?;
        let hess = barrier_hessian_diag(&g, &w, &state.flow)?;
        let resist: Vec<f64> = hess.iter().map(|&h| 1.0 / h).collect();
        let solver = LaplacianSolver::new(&g, &hess.iter().map(|&h| h).collect::<Vec<_>>())?;
        // Solve B^T H^{-1} B y = B^T H^{-1} grad; dir = H^{-1}(B y - grad).
        let hg: Vec<f64> = grad.iter().zip(&resist).map(|(gv, r)| gv * r).collect();
        let dh = g.apply_incidence_transpose(&hg)?;
        let (y, _) = solver.solve(&dh, 1e-13)?;
        let by = g.apply_incidence(&y)?;
        let dir: Vec<f64> = (0..g.edge_count())
            .map(|e| (by[e] - grad[e]) * resist[e])
            .collect();
        let slope: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            return Err(Error::Recenter("no descent direction".into()));
        }

        // Largest feasible step, then Armijo backtracking on V.
        let mut alpha_max = f64::INFINITY;
        for e in 0..g.edge_count() {
            let cu = g.cap_up()[e] - state.flow[e];
            let cd = g.cap_down()[e] + state.flow[e];
            if dir[e] > 0.0 {
                alpha_max = alpha_max.min(cu / dir[e]);
            } else if dir[e] < 0.0 {
                alpha_max = alpha_max.min(-cd / dir[e]);
            }
        }
        let mut alpha = (0.99 * alpha_max).min(1.0);
        let v0 = barrier_value(&g, &w, &state.flow)?;
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = state
                .flow
                .iter()
                .zip(&dir)
                .map(|(f, d)| f + alpha * d)
                .collect();
            if g.is_feasible(&cand, 0.0) {
                if let Ok(v) = barrier_value(&g, &w, &cand) {
                    if v <= v0 + 1e-4 * alpha * slope {
                        state.flow = cand;
                        moved = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            return Err(Error::Recenter("line search failed".into()));
        }
    }
    let residual = centrality_residual(&g, &w, &state.flow)?;
    if residual <= tol {
        Ok(60)
    } else {
        Err(Error::Recenter(format!(
            "did not reach tolerance (residual {residual:.3e})"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_vertex_state(m_parallel: usize, guess: f64) -> CentralPathState {
        // A single undirected edge, preconditioned, gives parallel a-b edges.
        let g = Graph::undirected(2, vec![(0, 1); m_parallel], vec![2.0; m_parallel]).unwrap();
        let pre = g.precondition(0, 1).unwrap();
        let params = ObjectiveParams::for_instance(pre.edge_count(), 2.0, 1.0);
        CentralPathState::new(pre, 0, 1, guess, params).unwrap()
    }

    #[test]
    fn augment_on_symmetric_parallel_edges_is_uniform() {
        let state = two_vertex_state(2, 4.0);
        let m = state.graph.edge_count();
        let delta = state.residual_flow() / 300.0;
        let result = augment(&state, delta, 1e-12).unwrap();
        // Caps: two original edges cap 2, two preconditioning edges cap 4.
        // Same-cap edges must carry the same flow and weight change.
        assert!((result.step_flow[0] - result.step_flow[1]).abs() < 1e-7);
        assert!((result.step_flow[2] - result.step_flow[3]).abs() < 1e-7);
        let total: f64 = result.step_flow.iter().sum();
        assert!((total - delta).abs() < 1e-8);
        assert_eq!(result.nu_up.len(), m);
        let report = check_step_invariants(&state, &result);
        assert!(report.all_pass(), "failed: {:?}", report.failed());
    }

    #[test]
    fn augment_rejects_oversized_steps() {
        let state = two_vertex_state(2, 4.0);
        // Routing half of all residual capacity in one step must violate
        // the 1/20 congestion gate.
        let err = augment(&state, 3.0, 1e-10).unwrap_err();
        assert!(matches!(err, Error::StepRejected(_)));
    }

    #[test]
    fn corrupted_mu_fails_neutrality_check() {
        let state = two_vertex_state(2, 4.0);
        let delta = state.residual_flow() / 300.0;
        let mut result = augment(&state, delta, 1e-12).unwrap();
        for v in result.mu_down.iter_mut() {
            *v *= 1.1;
        }
        let report = check_step_invariants(&state, &result);
        assert!(report
            .checks
            .iter()
            .any(|c| c.name == "mu_centrality_neutral" && !c.pass));
    }

    #[test]
    fn recenter_is_noop_at_central_point() {
        let mut state = two_vertex_state(3, 5.0);
        let iters = recenter(&mut state, 1e-10).unwrap();
        assert_eq!(iters, 0);
    }

    #[test]
    fn recenter_pulls_back_a_perturbed_point() {
        let mut state = two_vertex_state(3, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Perturb by a small circulation: push around edge pair (0, 1).
        let m = state.graph.edge_count();
        let mut noise: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.05..0.05)).collect();
        let circ = crate::laplacian::project_to_circulation(&state.graph, &noise, 1e-12).unwrap();
        noise = circ;
        for e in 0..m {
            state.flow[e] += noise[e];
        }
        let before = state.centrality().unwrap();
        assert!(before > 1e-8);
        assert!(before < 0.1, "perturbation too large for the test setup");
        let iters = recenter(&mut state, 1e-10).unwrap();
        assert!(iters <= 20);
        assert!(state.centrality().unwrap() <= 1e-10);
        // Flow conservation is preserved by circulation-only moves.
        let d = state.graph.apply_incidence_transpose(&state.flow).unwrap();
        for (v, &dv) in d.iter().enumerate() {
            if v != state.source && v != state.sink {
                assert!(dv.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn paper_delta_formula() {
        let state = two_vertex_state(1, 3.0);
        let m = state.graph.edge_count() as f64;
        let expect = 3.0 / (1e5 * m.powf(0.5 - state.params.eta));
        assert!((state.paper_delta() - expect).abs() < 1e-18);
    }
}
