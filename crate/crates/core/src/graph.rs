//! Graph representation with two-sided capacities, incidence-operator
//! application, preconditioning, the directed-to-undirected reduction,
//! and instance I/O (DIMACS parsing, seeded random generation).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A capacitated graph with a fixed edge orientation.
///
/// Every edge `e = (tail, head)` carries an upper capacity `cap_up[e]`
/// (flow in the orientation direction) and a lower capacity `cap_down[e]`
/// (flow against it), so a flow value `f_e` is feasible when
/// `-cap_down[e] <= f_e <= cap_up[e]`. Undirected graphs are represented
/// with `cap_up == cap_down` entrywise. The incidence matrix `B` is never
/// materialized; both `B` and `B^T` are applied edge-by-edge.
#[derive(Clone, Debug)]
pub struct Graph {
    n: usize,
    edges: Vec<(u32, u32)>,
    cap_up: Vec<f64>,
    cap_down: Vec<f64>,
    cap_bound: f64,
    /// Grid on which capacities (and hence maxflow values) live:
    /// 1.0 for integer instances, 0.5 after the directed reduction of an
    /// integer instance, 0.0 when capacities are not commensurable.
    integral_unit: f64,
    preconditioned: bool,
    precond_edge_ids: Vec<usize>,
}

/// Per-vertex demand; entries must sum to zero to be routable.
pub type DemandVector = Vec<f64>;

/// Per-edge flow values, signed with respect to the edge orientation.
pub type FlowVector = Vec<f64>;

/// Unit source-sink demand `chi_ab = 1_b - 1_a`.
pub fn unit_demand(n: usize, a: usize, b: usize) -> DemandVector {
    let mut d = vec![0.0; n];
    d[a] -= 1.0;
    d[b] += 1.0;
    d
}

fn grid_unit(values: &[f64]) -> f64 {
    let on_grid = |unit: f64| {
        values
            .iter()
            .all(|&v| (v / unit - (v / unit).round()).abs() < 1e-9)
    };
    if values.is_empty() || on_grid(1.0) {
        1.0
    } else if on_grid(0.5) {
        0.5
    } else {
        0.0
    }
}

impl Graph {
    /// Builds a graph from an edge list with two-sided capacities.
    /// Self-loops are rejected; parallel edges are allowed.
    pub fn new(
        n: usize,
        edges: Vec<(u32, u32)>,
        cap_up: Vec<f64>,
        cap_down: Vec<f64>,
    ) -> Result<Self> {
        if cap_up.len() != edges.len() {
            return Err(Error::Dimension {
                expected: edges.len(),
                got: cap_up.len(),
            });
        }
        if cap_down.len() != edges.len() {
            return Err(Error::Dimension {
                expected: edges.len(),
                got: cap_down.len(),
            });
        }
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u as usize >= n || v as usize >= n {
                return Err(Error::Contract(format!(
                    "edge {i} endpoint outside vertex range"
                )));
            }
            if u == v {
                return Err(Error::Contract(format!("edge {i} is a self-loop")));
            }
        }
        if cap_up
            .iter()
            .chain(cap_down.iter())
            .any(|&c| !(c >= 0.0) || !c.is_finite())
        {
            return Err(Error::Contract("capacities must be finite and >= 0".into()));
        }
        let cap_bound = cap_up
            .iter()
            .chain(cap_down.iter())
            .fold(0.0_f64, |m, &c| m.max(c));
        let all_caps: Vec<f64> = cap_up.iter().chain(cap_down.iter()).copied().collect();
        let unit = grid_unit(&all_caps);
        Ok(Self {
            n,
            edges,
            cap_up,
            cap_down,
            cap_bound,
            integral_unit: unit,
            preconditioned: false,
            precond_edge_ids: Vec::new(),
        })
    }

    /// Convenience constructor for undirected graphs (`u+ == u-`).
    pub fn undirected(n: usize, edges: Vec<(u32, u32)>, caps: Vec<f64>) -> Result<Self> {
        let down = caps.clone();
        Self::new(n, edges, caps, down)
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        let (u, v) = self.edges[e];
        (u as usize, v as usize)
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn cap_up(&self) -> &[f64] {
        &self.cap_up
    }

    pub fn cap_down(&self) -> &[f64] {
        &self.cap_down
    }

    /// Maximum capacity bound `U`.
    pub fn cap_bound(&self) -> f64 {
        self.cap_bound
    }

    pub fn integral_unit(&self) -> f64 {
        self.integral_unit
    }

    pub fn is_preconditioned(&self) -> bool {
        self.preconditioned
    }

    pub fn precond_edge_ids(&self) -> &[usize] {
        &self.precond_edge_ids
    }

    /// Capacity bound of the graph before preconditioning edges were added.
    pub fn base_cap_bound(&self) -> f64 {
        if let Some(&e) = self.precond_edge_ids.first() {
            self.cap_up[e] / 2.0
        } else {
            self.cap_bound
        }
    }

    pub fn is_undirected(&self) -> bool {
        self.cap_up
            .iter()
            .zip(self.cap_down.iter())
            .all(|(a, b)| a == b)
    }

    /// Applies `B^T` to a flow: edge `e = (u, v)` carrying `f_e`
    /// contributes `-f_e` at `u` and `+f_e` at `v`.
    pub fn apply_incidence_transpose(&self, f: &[f64]) -> Result<DemandVector> {
        if f.len() != self.edges.len() {
            return Err(Error::Dimension {
                expected: self.edges.len(),
                got: f.len(),
            });
        }
        let mut d = vec![0.0; self.n];
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            d[u as usize] -= f[e];
            d[v as usize] += f[e];
        }
        Ok(d)
    }

    /// Applies `B` to vertex potentials: entry for `e = (u, v)` is `y_v - y_u`.
    pub fn apply_incidence(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: y.len(),
            });
        }
        Ok(self
            .edges
            .iter()
            .map(|&(u, v)| y[v as usize] - y[u as usize])
            .collect())
    }

    /// Checks `-u- <= f <= u+` entrywise.
    pub fn is_feasible(&self, f: &[f64], slack: f64) -> bool {
        f.len() == self.edges.len()
            && f.iter().enumerate().all(|(e, &fe)| {
                fe <= self.cap_up[e] + slack && -fe <= self.cap_down[e] + slack
            })
    }

    /// Connected components as a vertex -> component-id labeling.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u as usize].push(v as usize);
            adj[v as usize].push(u as usize);
        }
        let mut comp = vec![usize::MAX; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = count;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        (count, comp)
    }

    /// Adds `m` undirected preconditioning edges of capacity `2U` between
    /// source and sink, which shifts the maxflow value by exactly `2 m U`.
    pub fn precondition(&self, a: usize, b: usize) -> Result<Graph> {
        if self.preconditioned {
            return Err(Error::State("graph is already preconditioned".into()));
        }
        if !self.is_undirected() {
            return Err(Error::Contract(
                "preconditioning requires an undirected graph".into(),
            ));
        }
        if a == b || a >= self.n || b >= self.n {
            return Err(Error::Contract("invalid source/sink".into()));
        }
        let m = self.edges.len();
        let big = 2.0 * self.cap_bound;
        let mut g = self.clone();
        g.precond_edge_ids = (m..2 * m).collect();
        for _ in 0..m {
            g.edges.push((a as u32, b as u32));
            g.cap_up.push(big);
            g.cap_down.push(big);
        }
        g.cap_bound = g.cap_bound.max(big);
        g.preconditioned = true;
        Ok(g)
    }
}

/// Outcome of [`reduce_directed_to_undirected`]: the undirected instance,
/// its terminals, the value offset, and enough bookkeeping to map a flow
/// on the reduced graph back to the original one.
#[derive(Clone, Debug)]
pub struct Reduction {
    pub graph: Graph,
    pub source: usize,
    pub sink: usize,
    /// `maxflow(original) = maxflow(reduced) - value_offset`.
    pub value_offset: f64,
    /// Shift applied per original edge: `f_original = g_core + center`.
    pub core_centers: Vec<f64>,
    /// Index of the core edge in the reduced graph per original edge
    /// (`None` for zero-capacity edges, which are dropped).
    pub core_edge: Vec<Option<usize>>,
}

/// Reduces maxflow on a (possibly) directed graph to maxflow on an
/// undirected one.
///
/// Each edge with capacities `(u+, u-)` is recentered: the core edge gets
/// symmetric capacity `(u+ + u-)/2` and the constant shift `(u+ - u-)/2`
/// becomes a fixed per-vertex surplus, absorbed by edges to two new
/// terminals `A`, `B`. Rider edges `A-a` and `b-B` carry the original
/// source-sink flow on top, so
/// `maxflow(G, a, b) = maxflow(G', A, B) - sum_v max(s_v, 0)`.
pub fn reduce_directed_to_undirected(g: &Graph, a: usize, b: usize) -> Result<Reduction> {
    if a == b || a >= g.n || b >= g.n {
        return Err(Error::Contract("invalid source/sink".into()));
    }
    if g.is_undirected() {
        let mut core_edge = Vec::with_capacity(g.edge_count());
        let mut edges = Vec::new();
        let mut caps = Vec::new();
        for e in 0..g.edge_count() {
            if g.cap_up[e] > 0.0 {
                core_edge.push(Some(edges.len()));
                edges.push(g.edges[e]);
                caps.push(g.cap_up[e]);
            } else {
                core_edge.push(None);
            }
        }
        let centers = vec![0.0; g.edge_count()];
        return Ok(Reduction {
            graph: Graph::undirected(g.n, edges, caps)?,
            source: a,
            sink: b,
            value_offset: 0.0,
            core_centers: centers,
            core_edge,
        });
    }

    let n = g.n;
    let term_a = n;
    let term_b = n + 1;
    let mut edges = Vec::new();
    let mut caps = Vec::new();
    let mut centers = vec![0.0; g.edge_count()];
    let mut core_edge = vec![None; g.edge_count()];
    let mut surplus = vec![0.0; n];

    for e in 0..g.edge_count() {
        let (u, v) = g.edges[e];
        let center = (g.cap_up[e] - g.cap_down[e]) / 2.0;
        let half = (g.cap_up[e] + g.cap_down[e]) / 2.0;
        centers[e] = center;
        surplus[v as usize] += center;
        surplus[u as usize] -= center;
        if half > 0.0 {
            core_edge[e] = Some(edges.len());
            edges.push((u, v));
            caps.push(half);
        }
    }

    // Routing the constant shift along each edge leaves surplus s_v at each
    // vertex; terminal edges absorb it (forced by saturation at optimality).
    let mut offset = 0.0;
    for (v, &s) in surplus.iter().enumerate() {
        if s > 0.0 {
            edges.push((term_a as u32, v as u32));
            caps.push(s);
            offset += s;
        } else if s < 0.0 {
            edges.push((v as u32, term_b as u32));
            caps.push(-s);
        }
    }

    // Rider edges let the original a-b flow pass through the new terminals.
    let out_a: f64 = (0..g.edge_count())
        .map(|e| {
            let (u, v) = g.edges[e];
            let fwd = if u as usize == a { g.cap_up[e] } else { 0.0 };
            let bwd = if v as usize == a { g.cap_down[e] } else { 0.0 };
            fwd + bwd
        })
        .sum();
    let in_b: f64 = (0..g.edge_count())
        .map(|e| {
            let (u, v) = g.edges[e];
            let fwd = if v as usize == b { g.cap_up[e] } else { 0.0 };
            let bwd = if u as usize == b { g.cap_down[e] } else { 0.0 };
            fwd + bwd
        })
        .sum();
    let rider = out_a.min(in_b) + 1.0;
    edges.push((term_a as u32, a as u32));
    caps.push(rider);
    edges.push((b as u32, term_b as u32));
    caps.push(rider);

    Ok(Reduction {
        graph: Graph::undirected(n + 2, edges, caps)?,
        source: term_a,
        sink: term_b,
        value_offset: offset,
        core_centers: centers,
        core_edge,
    })
}

/// Parses the DIMACS max-flow format: `p max N M`, `n ID s|t`, `a U V CAP`.
pub fn parse_dimacs(text: &str) -> Result<(Graph, usize, usize)> {
    let mut n: Option<usize> = None;
    let mut m_declared = 0usize;
    let mut source = None;
    let mut sink = None;
    let mut edges = Vec::new();
    let mut caps = Vec::new();
    let mut last_line = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() || fields[0] == "c" {
            continue;
        }
        match fields[0] {
            "p" => {
                if n.is_some() {
                    return Err(Error::Parse {
                        line,
                        msg: "duplicate problem line".into(),
                    });
                }
                if fields.len() != 4 || fields[1] != "max" {
                    return Err(Error::Parse {
                        line,
                        msg: "expected `p max N M`".into(),
                    });
                }
                let nv: usize = fields[2].parse().map_err(|_| Error::Parse {
                    line,
                    msg: "bad vertex count".into(),
                })?;
                m_declared = fields[3].parse().map_err(|_| Error::Parse {
                    line,
                    msg: "bad edge count".into(),
                })?;
                n = Some(nv);
            }
            "n" => {
                if fields.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        msg: "expected `n ID s|t`".into(),
                    });
                }
                let id: usize = fields[1].parse().map_err(|_| Error::Parse {
                    line,
                    msg: "bad node id".into(),
                })?;
                let nv = n.ok_or(Error::Parse {
                    line,
                    msg: "node line before problem line".into(),
                })?;
                if id == 0 || id > nv {
                    return Err(Error::Parse {
                        line,
                        msg: "node id out of range".into(),
                    });
                }
                match fields[2] {
                    "s" => source = Some(id - 1),
                    "t" => sink = Some(id - 1),
                    _ => {
                        return Err(Error::Parse {
                            line,
                            msg: "node designator must be s or t".into(),
                        })
                    }
                }
            }
            "a" => {
                if fields.len() != 4 {
                    return Err(Error::Parse {
                        line,
                        msg: "expected `a U V CAP`".into(),
                    });
                }
                let nv = n.ok_or(Error::Parse {
                    line,
                    msg: "arc line before problem line".into(),
                })?;
                let u: usize = fields[1].parse().map_err(|_| Error::Parse {
                    line,
                    msg: "bad arc tail".into(),
                })?;
                let v: usize = fields[2].parse().map_err(|_| Error::Parse {
                    line,
                    msg: "bad arc head".into(),
                })?;
                let cap: f64 = fields[3].parse().map_err(|_| Error::Parse {
                    line,
                    msg: "bad arc capacity".into(),
                })?;
                if u == 0 || u > nv || v == 0 || v > nv {
                    return Err(Error::Parse {
                        line,
                        msg: "arc endpoint out of range".into(),
                    });
                }
                if u == v {
                    return Err(Error::Parse {
                        line,
                        msg: "self-loops are not allowed".into(),
                    });
                }
                if !(cap >= 0.0) || !cap.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: "arc capacity must be finite and >= 0".into(),
                    });
                }
                edges.push(((u - 1) as u32, (v - 1) as u32));
                caps.push(cap);
            }
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown line type `{other}`"),
                })
            }
        }
    }

    let n = n.ok_or(Error::Parse {
        line: last_line,
        msg: "missing problem line".into(),
    })?;
    if edges.len() != m_declared {
        return Err(Error::Parse {
            line: last_line,
            msg: format!("declared {m_declared} arcs, found {}", edges.len()),
        });
    }
    let source = source.ok_or(Error::Parse {
        line: last_line,
        msg: "missing source designation".into(),
    })?;
    let sink = sink.ok_or(Error::Parse {
        line: last_line,
        msg: "missing sink designation".into(),
    })?;
    if source == sink {
        return Err(Error::Parse {
            line: last_line,
            msg: "source equals sink".into(),
        });
    }
    let down = vec![0.0; edges.len()];
    let g = Graph::new(n, edges, caps, down)?;
    Ok((g, source, sink))
}

/// Serializes a graph in DIMACS max-flow format. Undirected edges are
/// written as single arcs of the forward capacity; lower capacities are
/// recorded in a comment so the instance stays self-describing.
pub fn write_dimacs(g: &Graph, a: usize, b: usize) -> String {
    let mut out = String::new();
    if g.is_undirected() {
        out.push_str("c undirected (each arc has equal reverse capacity)\n");
    }
    out.push_str(&format!("p max {} {}\n", g.n, g.edge_count()));
    out.push_str(&format!("n {} s\n", a + 1));
    out.push_str(&format!("n {} t\n", b + 1));
    for e in 0..g.edge_count() {
        let (u, v) = g.edge(e);
        let cap = g.cap_up[e];
        if cap == cap.trunc() && cap.abs() < 1e15 {
            out.push_str(&format!("a {} {} {}\n", u + 1, v + 1, cap as i64));
        } else {
            out.push_str(&format!("a {} {} {}\n", u + 1, v + 1, cap));
        }
    }
    out
}

/// Deterministic random instance: connects `a = 0` to `b = n-1` with a
/// random path, then fills in random edges with integer capacities in
/// `[1, U]`.
pub fn random_instance(
    seed: u64,
    n: usize,
    m: usize,
    max_cap: u64,
    undirected: bool,
) -> Result<(Graph, usize, usize)> {
    if n < 2 || m < 1 || max_cap < 1 {
        return Err(Error::Contract("need n >= 2, m >= 1, U >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = 0usize;
    let b = n - 1;
    let mut edges: Vec<(u32, u32)> = Vec::with_capacity(m);

    // Random a-b path over a shuffled subset of the interior vertices.
    let mut interior: Vec<usize> = (1..n - 1).collect();
    for i in (1..interior.len()).rev() {
        let j = rng.gen_range(0..=i);
        interior.swap(i, j);
    }
    let max_hops = interior.len().min(m.saturating_sub(1));
    let hops = if max_hops == 0 {
        0
    } else {
        rng.gen_range(0..=max_hops)
    };
    let mut prev = a;
    for &w in interior.iter().take(hops) {
        edges.push((prev as u32, w as u32));
        prev = w;
    }
    edges.push((prev as u32, b as u32));

    while edges.len() < m {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v {
            edges.push((u as u32, v as u32));
        }
    }

    let caps: Vec<f64> = (0..m).map(|_| rng.gen_range(1..=max_cap) as f64).collect();
    let g = if undirected {
        Graph::undirected(n, edges, caps)?
    } else {
        Graph::new(n, edges, caps, vec![0.0; m])?
    };
    Ok((g, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::reference_maxflow;

    #[test]
    fn incidence_transpose_single_edge() {
        let g = Graph::undirected(2, vec![(0, 1)], vec![1.0]).unwrap();
        let d = g.apply_incidence_transpose(&[1.0]).unwrap();
        assert_eq!(d, vec![-1.0, 1.0]);
    }

    #[test]
    fn incidence_transpose_zero_flow() {
        let g = Graph::undirected(3, vec![(0, 1), (1, 2)], vec![1.0, 1.0]).unwrap();
        let d = g.apply_incidence_transpose(&[0.0, 0.0]).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn incidence_transpose_cycle_flow_has_zero_demand() {
        let g = Graph::undirected(3, vec![(0, 1), (1, 2), (2, 0)], vec![1.0; 3]).unwrap();
        let d = g.apply_incidence_transpose(&[1.0, 1.0, 1.0]).unwrap();
        assert!(d.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn incidence_constant_potential_maps_to_zero() {
        let g = Graph::undirected(4, vec![(0, 1), (1, 2), (2, 3)], vec![1.0; 3]).unwrap();
        let by = g.apply_incidence(&[5.0; 4]).unwrap();
        assert!(by.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn incidence_single_edge_difference() {
        let g = Graph::undirected(2, vec![(0, 1)], vec![1.0]).unwrap();
        assert_eq!(g.apply_incidence(&[0.0, 1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn incidence_adjointness_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(2..9);
            let m = rng.gen_range(1..14);
            let edges: Vec<(u32, u32)> = (0..m)
                .map(|_| loop {
                    let u = rng.gen_range(0..n as u32);
                    let v = rng.gen_range(0..n as u32);
                    if u != v {
                        return (u, v);
                    }
                })
                .collect();
            let g = Graph::undirected(n, edges, vec![1.0; m]).unwrap();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let by = g.apply_incidence(&y).unwrap();
            let btf = g.apply_incidence_transpose(&f).unwrap();
            let lhs: f64 = by.iter().zip(&f).map(|(a, b)| a * b).sum();
            let rhs: f64 = y.iter().zip(&btf).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            let total: f64 = btf.iter().sum();
            let l1: f64 = f.iter().map(|x| x.abs()).sum();
            assert!(total.abs() <= 1e-12 * l1.max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = Graph::undirected(2, vec![(0, 1)], vec![1.0]).unwrap();
        assert!(matches!(
            g.apply_incidence_transpose(&[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            g.apply_incidence(&[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn precondition_single_edge_shifts_value_by_2mu() {
        let g = Graph::undirected(2, vec![(0, 1)], vec![3.0]).unwrap();
        let p = g.precondition(0, 1).unwrap();
        assert_eq!(p.edge_count(), 2);
        assert_eq!(p.precond_edge_ids(), &[1]);
        assert_eq!(p.cap_up()[1], 6.0);
        let (val, _) = reference_maxflow(&p, 0, 1).unwrap();
        assert_eq!(val, 9.0); // 3 + 2*1*3
    }

    #[test]
    fn precondition_rejects_directed_and_double_application() {
        let dir = Graph::new(2, vec![(0, 1)], vec![1.0], vec![0.0]).unwrap();
        assert!(matches!(dir.precondition(0, 1), Err(Error::Contract(_))));
        let und = Graph::undirected(2, vec![(0, 1)], vec![1.0]).unwrap();
        let p = und.precondition(0, 1).unwrap();
        assert!(matches!(p.precondition(0, 1), Err(Error::State(_))));
    }

    #[test]
    fn precondition_value_shift_on_random_instances() {
        for seed in 0..6 {
            let (g, a, b) = random_instance(seed, 8, 12, 5, true).unwrap();
            let (before, _) = reference_maxflow(&g, a, b).unwrap();
            let p = g.precondition(a, b).unwrap();
            let (after, _) = reference_maxflow(&p, a, b).unwrap();
            let shift = 2.0 * 12.0 * g.cap_bound();
            assert_eq!(after - before, shift, "seed {seed}");
        }
    }

    #[test]
    fn reduction_identity_for_undirected() {
        let g = Graph::undirected(3, vec![(0, 1), (1, 2)], vec![2.0, 3.0]).unwrap();
        let r = reduce_directed_to_undirected(&g, 0, 2).unwrap();
        assert_eq!(r.value_offset, 0.0);
        assert_eq!(r.graph.edge_count(), 2);
        assert_eq!((r.source, r.sink), (0, 2));
    }

    #[test]
    fn reduction_single_directed_edge() {
        let g = Graph::new(2, vec![(0, 1)], vec![5.0], vec![0.0]).unwrap();
        let r = reduce_directed_to_undirected(&g, 0, 1).unwrap();
        let (val, _) = reference_maxflow(&r.graph, r.source, r.sink).unwrap();
        assert_eq!(val - r.value_offset, 5.0);
    }

    #[test]
    fn reduction_equivalence_sweep() {
        for seed in 0..20 {
            let (g, a, b) = random_instance(1000 + seed, 7, 11, 5, false).unwrap();
            let (direct, _) = reference_maxflow(&g, a, b).unwrap();
            let r = reduce_directed_to_undirected(&g, a, b).unwrap();
            let (und, _) = reference_maxflow(&r.graph, r.source, r.sink).unwrap();
            assert_eq!(und - r.value_offset, direct, "seed {seed}");
        }
    }

    #[test]
    fn parse_dimacs_single_edge() {
        let (g, a, b) = parse_dimacs("p max 2 1\nn 1 s\nn 2 t\na 1 2 5\n").unwrap();
        assert_eq!((g.vertex_count(), g.edge_count()), (2, 1));
        assert_eq!((a, b), (0, 1));
        assert_eq!(g.cap_up()[0], 5.0);
        assert_eq!(g.cap_down()[0], 0.0);
    }

    #[test]
    fn parse_dimacs_empty_arc_section() {
        let (g, _, _) = parse_dimacs("p max 2 0\nn 1 s\nn 2 t\n").unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn parse_dimacs_errors_carry_line_numbers() {
        let err = parse_dimacs("p max 2 1\nn 1 s\nn 2 t\na 1 1 5\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(parse_dimacs("p max x 1\n").is_err());
    }

    #[test]
    fn dimacs_round_trip() {
        let (g, a, b) = random_instance(3, 6, 9, 7, false).unwrap();
        let text = write_dimacs(&g, a, b);
        let (g2, a2, b2) = parse_dimacs(&text).unwrap();
        assert_eq!((a, b), (a2, b2));
        assert_eq!(g.edges(), g2.edges());
        assert_eq!(g.cap_up(), g2.cap_up());
    }

    #[test]
    fn random_instance_is_deterministic() {
        let (g1, ..) = random_instance(7, 10, 20, 6, false).unwrap();
        let (g2, ..) = random_instance(7, 10, 20, 6, false).unwrap();
        assert_eq!(g1.edges(), g2.edges());
        assert_eq!(g1.cap_up(), g2.cap_up());
        let (g3, ..) = random_instance(8, 10, 20, 6, false).unwrap();
        assert!(g1.edges() != g3.edges() || g1.cap_up() != g3.cap_up());
    }
}
