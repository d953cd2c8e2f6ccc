//! Reference combinatorial solvers: Dinic's algorithm (the oracle used to
//! validate everything else) and plain BFS augmenting paths, implemented
//! independently of each other.

use crate::error::{Error, Result};
use crate::graph::{FlowVector, Graph};

const EPS: f64 = 1e-9;

struct Arc {
    to: usize,
    cap: f64,
    rev: usize,
}

struct Dinic {
    adj: Vec<Vec<Arc>>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl Dinic {
    fn new(n: usize) -> Self {
        Self {
            adj: (0..n).map(|_| Vec::new()).collect(),
            level: vec![-1; n],
            iter: vec![0; n],
        }
    }

    /// Adds an edge with forward capacity `cap` and reverse capacity `back`.
    fn add_edge(&mut self, u: usize, v: usize, cap: f64, back: f64) -> (usize, usize) {
        let iu = self.adj[u].len();
        let iv = self.adj[v].len();
        self.adj[u].push(Arc { to: v, cap, rev: iv });
        self.adj[v].push(Arc { to: u, cap: back, rev: iu });
        (iu, iv)
    }

    fn bfs(&mut self, s: usize) {
        self.level.iter_mut().for_each(|l| *l = -1);
        let mut queue = std::collections::VecDeque::new();
        self.level[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for arc in &self.adj[u] {
                if arc.cap > EPS && self.level[arc.to] < 0 {
                    self.level[arc.to] = self.level[u] + 1;
                    queue.push_back(arc.to);
                }
            }
        }
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: f64) -> f64 {
        if u == t {
            return pushed;
        }
        while self.iter[u] < self.adj[u].len() {
            let i = self.iter[u];
            let (to, cap, rev) = {
                let arc = &self.adj[u][i];
                (arc.to, arc.cap, arc.rev)
            };
            if cap > EPS && self.level[u] < self.level[to] {
                let d = self.dfs(to, t, pushed.min(cap));
                if d > EPS {
                    self.adj[u][i].cap -= d;
                    self.adj[to][rev].cap += d;
                    return d;
                }
            }
            self.iter[u] += 1;
        }
        0.0
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        loop {
            self.bfs(s);
            if self.level[t] < 0 {
                return total;
            }
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= EPS {
                    break;
                }
                total += f;
            }
        }
    }
}

/// Exact maxflow via Dinic. Returns the value and a per-edge flow vector
/// (signed with respect to each edge's orientation).
pub fn reference_maxflow(g: &Graph, a: usize, b: usize) -> Result<(f64, FlowVector)> {
    if a == b || a >= g.vertex_count() || b >= g.vertex_count() {
        return Err(Error::Contract("invalid source/sink".into()));
    }
    let mut net = Dinic::new(g.vertex_count());
    let mut slots = Vec::with_capacity(g.edge_count());
    for e in 0..g.edge_count() {
        let (u, v) = g.edge(e);
        slots.push((u, net.add_edge(u, v, g.cap_up()[e], g.cap_down()[e]).0));
    }
    let value = net.max_flow(a, b);
    let flow = (0..g.edge_count())
        .map(|e| {
            let (u, slot) = slots[e];
            g.cap_up()[e] - net.adj[u][slot].cap
        })
        .collect();
    Ok((value, flow))
}

/// BFS augmenting paths (Edmonds-Karp) starting from a feasible flow.
/// Returns the optimal flow; the number of augmentations is also reported.
pub fn augmenting_paths(g: &Graph, start: &[f64], a: usize, b: usize) -> Result<(FlowVector, usize)> {
    if start.len() != g.edge_count() {
        return Err(Error::Dimension {
            expected: g.edge_count(),
            got: start.len(),
        });
    }
    if !g.is_feasible(start, 1e-9) {
        return Err(Error::Contract("starting flow is infeasible".into()));
    }
    let n = g.vertex_count();
    let mut flow = start.to_vec();
    // incident[v] lists (edge, +1 when v is the tail).
    let mut incident: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in 0..g.edge_count() {
        let (u, v) = g.edge(e);
        incident[u].push((e, 1.0));
        incident[v].push((e, -1.0));
    }
    let residual = |flow: &[f64], e: usize, dir: f64| -> f64 {
        if dir > 0.0 {
            g.cap_up()[e] - flow[e]
        } else {
            g.cap_down()[e] + flow[e]
        }
    };

    let mut augmentations = 0;
    loop {
        let mut parent: Vec<Option<(usize, f64)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[a] = true;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(a);
        while let Some(u) = queue.pop_front() {
            if u == b {
                break;
            }
            for &(e, dir) in &incident[u] {
                let (tail, head) = g.edge(e);
                let w = if dir > 0.0 { head } else { tail };
                if !seen[w] && residual(&flow, e, dir) > EPS {
                    seen[w] = true;
                    parent[w] = Some((e, dir));
                    queue.push_back(w);
                }
            }
        }
        if !seen[b] {
            return Ok((flow, augmentations));
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = b;
        while v != a {
            let (e, dir) = parent[v].unwrap();
            bottleneck = bottleneck.min(residual(&flow, e, dir));
            let (tail, head) = g.edge(e);
            v = if dir > 0.0 { tail } else { head };
        }
        let mut v = b;
        while v != a {
            let (e, dir) = parent[v].unwrap();
            flow[e] += dir * bottleneck;
            let (tail, head) = g.edge(e);
            v = if dir > 0.0 { tail } else { head };
        }
        augmentations += 1;
    }
}

/// Set of vertices reachable from `a` in the residual graph of `f`, and the
/// total capacity of the induced cut. For a maximum flow the cut capacity
/// equals the flow value (max-flow/min-cut certificate).
pub fn residual_cut(g: &Graph, f: &[f64], a: usize) -> (Vec<bool>, f64) {
    let n = g.vertex_count();
    let mut incident: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in 0..g.edge_count() {
        let (u, v) = g.edge(e);
        incident[u].push((e, 1.0));
        incident[v].push((e, -1.0));
    }
    let mut reach = vec![false; n];
    reach[a] = true;
    let mut stack = vec![a];
    while let Some(u) = stack.pop() {
        for &(e, dir) in &incident[u] {
            let (tail, head) = g.edge(e);
            let w = if dir > 0.0 { head } else { tail };
            let res = if dir > 0.0 {
                g.cap_up()[e] - f[e]
            } else {
                g.cap_down()[e] + f[e]
            };
            if !reach[w] && res > EPS {
                reach[w] = true;
                stack.push(w);
            }
        }
    }
    let mut cut = 0.0;
    for e in 0..g.edge_count() {
        let (u, v) = g.edge(e);
        if reach[u] && !reach[v] {
            cut += g.cap_up()[e];
        } else if reach[v] && !reach[u] {
            cut += g.cap_down()[e];
        }
    }
    (reach, cut)
}

/// Net flow delivered to `b` (equivalently sent from `a`).
pub fn flow_value(g: &Graph, f: &[f64], b: usize) -> f64 {
    let mut val = 0.0;
    for e in 0..g.edge_count() {
        let (u, v) = g.edge(e);
        if v == b {
            val += f[e];
        }
        if u == b {
            val -= f[e];
        }
    }
    val
}
