//! Augmenting-path max-flow (Dinic) and a binary submodular energy minimizer
//! built on top of it. Shared by box foreground extraction and the
//! alpha-expansion solver.

const EPS: f64 = 1e-12;

/// s-t flow network with f64 capacities. Node 0 is the source, node 1 the sink.
pub struct FlowNetwork {
    first: Vec<u32>,
    next: Vec<u32>,
    head: Vec<u32>,
    cap: Vec<f64>,
    level: Vec<i32>,
    iter: Vec<u32>,
}

const NONE: u32 = u32::MAX;

impl FlowNetwork {
    pub const SOURCE: usize = 0;
    pub const SINK: usize = 1;

    /// Network with `extra` non-terminal nodes (ids 2..2+extra).
    pub fn new(extra: usize) -> Self {
        Self {
            first: vec![NONE; extra + 2],
            next: Vec::new(),
            head: Vec::new(),
            cap: Vec::new(),
            level: Vec::new(),
            iter: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.first.len()
    }

    /// Adds a directed edge `u -> v` with the given capacity (plus the
    /// zero-capacity reverse edge).
    pub fn add_edge(&mut self, u: usize, v: usize, capacity: f64) {
        debug_assert!(capacity >= 0.0);
        self.push(u, v, capacity);
        self.push(v, u, 0.0);
    }

    fn push(&mut self, u: usize, v: usize, capacity: f64) {
        self.next.push(self.first[u]);
        self.first[u] = (self.head.len()) as u32;
        self.head.push(v as u32);
        self.cap.push(capacity);
    }

    fn bfs(&mut self) -> bool {
        self.level.clear();
        self.level.resize(self.first.len(), -1);
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(Self::SOURCE as u32);
        self.level[Self::SOURCE] = 0;
        while let Some(u) = queue.pop_front() {
            let mut e = self.first[u as usize];
            while e != NONE {
                let v = self.head[e as usize];
                if self.cap[e as usize] > EPS && self.level[v as usize] < 0 {
                    self.level[v as usize] = self.level[u as usize] + 1;
                    queue.push_back(v);
                }
                e = self.next[e as usize];
            }
        }
        self.level[Self::SINK] >= 0
    }

    /// Iterative blocking flow over the current level graph.
    fn blocking_flow(&mut self) -> f64 {
        let mut total = 0.0;
        let mut node_stack: Vec<usize> = vec![Self::SOURCE];
        let mut edge_stack: Vec<u32> = Vec::new();
        loop {
            let u = *node_stack.last().unwrap();
            if u == Self::SINK {
                let mut bottleneck = f64::INFINITY;
                for &e in &edge_stack {
                    bottleneck = bottleneck.min(self.cap[e as usize]);
                }
                for &e in &edge_stack {
                    self.cap[e as usize] -= bottleneck;
                    self.cap[(e ^ 1) as usize] += bottleneck;
                }
                total += bottleneck;
                // Retreat to the first saturated edge on the path.
                let mut cut = 0;
                for (i, &e) in edge_stack.iter().enumerate() {
                    if self.cap[e as usize] <= EPS {
                        cut = i;
                        break;
                    }
                }
                edge_stack.truncate(cut);
                node_stack.truncate(cut + 1);
                continue;
            }
            let e = self.iter[u];
            if e == NONE {
                if node_stack.len() == 1 {
                    break;
                }
                node_stack.pop();
                let dead_edge = edge_stack.pop().unwrap();
                let parent = *node_stack.last().unwrap();
                self.iter[parent] = self.next[dead_edge as usize];
                continue;
            }
            let v = self.head[e as usize] as usize;
            if self.cap[e as usize] > EPS && self.level[v] == self.level[u] + 1 {
                node_stack.push(v);
                edge_stack.push(e);
            } else {
                self.iter[u] = self.next[e as usize];
            }
        }
        total
    }

    /// Runs Dinic to completion and returns the max-flow value.
    pub fn max_flow(&mut self) -> f64 {
        let mut flow = 0.0;
        while self.bfs() {
            self.iter.clear();
            self.iter.extend_from_slice(&self.first);
            flow += self.blocking_flow();
        }
        flow
    }

    /// After `max_flow`, returns for each node whether it lies on the source
    /// side of the minimum cut (reachable in the residual graph).
    pub fn source_side(&self) -> Vec<bool> {
        let mut seen = vec![false; self.first.len()];
        let mut stack = vec![Self::SOURCE];
        seen[Self::SOURCE] = true;
        while let Some(u) = stack.pop() {
            let mut e = self.first[u];
            while e != NONE {
                let v = self.head[e as usize] as usize;
                if self.cap[e as usize] > EPS && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
                e = self.next[e as usize];
            }
        }
        seen
    }
}

/// Pairwise cost table of a binary edge term: `costs[a][b]` is the cost of
/// endpoint labels `(a, b)`. Must be submodular: `c01 + c10 >= c00 + c11`.
pub type EdgeCosts = [[f64; 2]; 2];

/// Minimizes `sum_p unary[p][x_p] + sum_(p,q) costs(x_p, x_q)` over binary
/// labelings by a single min-cut. Edge costs must be submodular.
/// Returns the optimal labels (0 or 1 per node).
pub fn solve_binary_submodular(unary: &[[f64; 2]], edges: &[(usize, usize, EdgeCosts)]) -> Vec<u8> {
    let n = unary.len();
    // Accumulate reparameterized unaries, then build terminal edges.
    let mut theta: Vec<[f64; 2]> = unary.to_vec();
    let mut pair_caps: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.len());
    for &(p, q, c) in edges {
        let (a, b, cc, d) = (c[0][0], c[0][1], c[1][0], c[1][1]);
        debug_assert!(b + cc >= a + d - 1e-9, "edge term must be submodular");
        // E(x_p, x_q) = a + (cc-a) x_p + (d-cc) x_q + (b+cc-a-d)(1-x_p) x_q
        theta[p][1] += cc - a;
        theta[q][1] += d - cc;
        let w = (b + cc - a - d).max(0.0);
        if w > 0.0 {
            pair_caps.push((p, q, w));
        }
    }
    let mut net = FlowNetwork::new(n);
    let node = |p: usize| p + 2;
    for (p, th) in theta.iter().enumerate() {
        // Cost th[1] when x_p = 1 (source side), th[0] when x_p = 0.
        let diff = th[1] - th[0];
        if diff > 0.0 {
            net.add_edge(node(p), FlowNetwork::SINK, diff);
        } else if diff < 0.0 {
            net.add_edge(FlowNetwork::SOURCE, node(p), -diff);
        }
    }
    for (p, q, w) in pair_caps {
        // Pays when x_q = 1 and x_p = 0: edge q -> p crosses that cut.
        net.add_edge(node(q), node(p), w);
    }
    net.max_flow();
    let side = net.source_side();
    (0..n).map(|p| u8::from(side[node(p)])).collect()
}
