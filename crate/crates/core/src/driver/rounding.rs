//! Rounding a fractional flow to the capacity grid by cycle/path
//! cancellation: repeatedly walk the support of the fractional part and
//! push until a coordinate hits the grid, never decreasing the flow value.

use crate::error::{Error, Result};
use crate::graph::{FlowVector, Graph};

const SNAP: f64 = 1e-6;

fn frac_part(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// Rounds a feasible flow to an integral flow on the graph's capacity grid
/// (`integral_unit`), preserving feasibility. Along source-sink paths the
/// push direction is chosen toward increasing value, so the result routes
/// at least `floor(t)` grid units.
pub fn round_to_integral(g: &Graph, f: &[f64], a: usize, b: usize) -> Result<FlowVector> {
    if f.len() != g.edge_count() {
        return Err(Error::Dimension {
            expected: g.edge_count(),
            got: f.len(),
        });
    }
    let unit = g.integral_unit();
    if unit <= 0.0 {
        return Err(Error::Contract(
            "graph capacities are not on an integral grid".into(),
        ));
    }
    // Work in grid units so every capacity is an integer.
    let mut x: Vec<f64> = f.iter().map(|&v| v / unit).collect();
    for v in x.iter_mut() {
        if frac_part(*v) < SNAP {
            *v = v.round();
        }
    }

    loop {
        let fractional: Vec<usize> = (0..x.len()).filter(|&e| frac_part(x[e]) >= SNAP).collect();
        if fractional.is_empty() {
            break;
        }
        let n = g.vertex_count();
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &e in &fractional {
            let (u, v) = g.edge(e);
            incident[u].push(e);
            incident[v].push(e);
        }
        // A vertex of odd fractional degree violates conservation unless it
        // is a terminal, so walks can only dead-end at `a` or `b`.
        let start = if !incident[a].is_empty() {
            a
        } else if !incident[b].is_empty() {
            b
        } else {
            let e0 = fractional[0];
            g.edge(e0).0
        };

        let mut used = vec![false; g.edge_count()];
        let mut visited_at: Vec<Option<usize>> = vec![None; n];
        let mut path_vertices = vec![start];
        let mut path_edges: Vec<(usize, f64)> = Vec::new();
        visited_at[start] = Some(0);
        let (cycle_from, endpoint) = loop {
            let cur = *path_vertices.last().unwrap();
            let next = incident[cur].iter().find(|&&e| !used[e] && frac_part(x[e]) >= SNAP);
            let Some(&e) = next else {
                break (None, Some(cur));
            };
            used[e] = true;
            let (tail, head) = g.edge(e);
            let (dir, nxt) = if tail == cur { (1.0, head) } else { (-1.0, tail) };
            path_edges.push((e, dir));
            if let Some(pos) = visited_at[nxt] {
                break (Some(pos), None);
            }
            visited_at[nxt] = Some(path_vertices.len());
            path_vertices.push(nxt);
        };

        let segment: Vec<(usize, f64)> = match cycle_from {
            Some(pos) => path_edges[pos..].to_vec(),
            None => {
                let end = endpoint.unwrap();
                let terminals_ok = (start == a || start == b) && (end == a || end == b);
                if !terminals_ok || path_edges.is_empty() {
                    return Err(Error::Contract(
                        "fractional support dead-ends at an interior vertex".into(),
                    ));
                }
                path_edges.clone()
            }
        };

        // Choose the push direction: along a terminal path, push from a to b
        // (never decreases the value); around a cycle the value is unchanged.
        let sigma = match cycle_from {
            Some(_) => 1.0,
            None => {
                if start == a {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        let mut slack = f64::INFINITY;
        for &(e, dir) in &segment {
            let d = sigma * dir;
            let room = if d > 0.0 {
                x[e].ceil() - x[e]
            } else {
                x[e] - x[e].floor()
            };
            slack = slack.min(room);
        }
        if !(slack > 0.0 && slack.is_finite()) {
            return Err(Error::Contract("rounding made no progress".into()));
        }
        for &(e, dir) in &segment {
            x[e] += sigma * dir * slack;
            if frac_part(x[e]) < SNAP {
                x[e] = x[e].round();
            }
        }
    }

    let out: Vec<f64> = x.iter().map(|&v| v.round() * unit).collect();
    if !g.is_feasible(&out, 1e-9) {
        return Err(Error::Contract("rounded flow left the capacity box".into()));
    }
    Ok(out)
}
