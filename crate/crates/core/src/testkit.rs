//! Brute-force oracles and probe utilities used by the test suites.
//!
//! Everything here is deliberately independent of the solver modules: the
//! cycle basis comes from a fresh DFS, and optimization is grid search plus
//! coordinate polish over the basis coefficients. Only use on instances
//! with a low-dimensional circulation space.

use crate::graph::Graph;

/// Fundamental cycle basis of the circulation space from a DFS spanning
/// forest: one basis vector per non-tree edge.
pub fn cycle_basis(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.vertex_count();
    let m = g.edge_count();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for e in 0..m {
        let (u, v) = g.edge(e);
        adj[u].push((e, v));
        adj[v].push((e, u));
    }
    let mut parent_edge: Vec<Option<(usize, f64)>> = vec![None; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut visited = vec![false; n];
    let mut in_tree = vec![false; m];
    for root in 0..n {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &(e, w) in &adj[u] {
                if !visited[w] {
                    visited[w] = true;
                    let (tail, _) = g.edge(e);
                    // Sign of traversing e from u to w.
                    let sign = if tail == u { 1.0 } else { -1.0 };
                    parent_edge[w] = Some((e, sign));
                    parent[w] = u;
                    in_tree[e] = true;
                    stack.push(w);
                }
            }
        }
    }

    let path_to_root = |mut v: usize| -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        while let Some((e, sign)) = parent_edge[v] {
            out.push((e, sign));
            v = parent[v];
        }
        out
    };

    let mut basis = Vec::new();
    for e in 0..m {
        if in_tree[e] {
            continue;
        }
        let (u, v) = g.edge(e);
        let mut coeff = vec![0.0; m];
        coeff[e] = 1.0;
        // Close the cycle with the tree path from v back to u.
        let pu = path_to_root(u);
        let pv = path_to_root(v);
        // Remove the shared suffix (above the least common ancestor).
        let mut iu = pu.len();
        let mut iv = pv.len();
        while iu > 0 && iv > 0 && pu[iu - 1].0 == pv[iv - 1].0 {
            iu -= 1;
            iv -= 1;
        }
        // v -> lca walks child-to-parent (against the recorded sign); the
        // lca -> u half walks parent-to-child (with it).
        for &(ei, sign) in &pv[..iv] {
            coeff[ei] -= sign;
        }
        for &(ei, sign) in &pu[..iu] {
            coeff[ei] += sign;
        }
        basis.push(coeff);
    }
    basis
}

/// Minimizes `objective` over `x0 + span(basis)` by grid search in the
/// basis coefficients followed by rounds of per-coordinate ternary polish.
/// Returns the best point and its objective value.
pub fn brute_force_over_circulations<F>(
    x0: &[f64],
    basis: &[Vec<f64>],
    radius: f64,
    grid: usize,
    objective: F,
) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let dims = basis.len();
    let point = |theta: &[f64]| -> Vec<f64> {
        let mut x = x0.to_vec();
        for (k, c) in basis.iter().enumerate() {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += theta[k] * ci;
            }
        }
        x
    };
    if dims == 0 {
        let v = objective(x0);
        return (x0.to_vec(), v);
    }

    let mut best_theta = vec![0.0; dims];
    let mut best_val = objective(&point(&best_theta));
    let steps = grid.max(3);
    let mut idx = vec![0usize; dims];
    loop {
        let theta: Vec<f64> = idx
            .iter()
            .map(|&i| -radius + 2.0 * radius * i as f64 / (steps - 1) as f64)
            .collect();
        let v = objective(&point(&theta));
        if v < best_val {
            best_val = v;
            best_theta = theta;
        }
        // Odometer increment.
        let mut k = 0;
        loop {
            if k == dims {
                break;
            }
            idx[k] += 1;
            if idx[k] < steps {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == dims {
            break;
        }
    }

    // Coordinate-wise ternary polish, shrinking the bracket each sweep.
    let mut width = 2.0 * radius / (steps - 1) as f64;
    for _ in 0..60 {
        for k in 0..dims {
            let mut lo = best_theta[k] - width;
            let mut hi = best_theta[k] + width;
            for _ in 0..40 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                let mut t1 = best_theta.clone();
                t1[k] = m1;
                let mut t2 = best_theta.clone();
                t2[k] = m2;
                if objective(&point(&t1)) <= objective(&point(&t2)) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let cand = (lo + hi) / 2.0;
            let mut t = best_theta.clone();
            t[k] = cand;
            let v = objective(&point(&t));
            if v < best_val {
                best_val = v;
                best_theta = t;
            }
        }
        width *= 0.7;
    }
    (point(&best_theta), best_val)
}

/// Central finite difference of a scalar function.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
