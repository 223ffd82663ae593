//! Dinic max-flow on real capacities, used for exact minimization of
//! submodular pairwise binary energies.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct FlowGraph {
    head: Vec<usize>,
    next: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<f64>,
    eps: f64,
}

const NONE: usize = usize::MAX;

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            head: vec![NONE; nodes],
            next: Vec::new(),
            to: Vec::new(),
            cap: Vec::new(),
            eps: 0.0,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.head.len()
    }

    fn push_arc(&mut self, from: usize, to: usize, cap: f64) {
        self.next.push(self.head[from]);
        self.to.push(to);
        self.cap.push(cap);
        self.head[from] = self.to.len() - 1;
    }

    /// Arc `from -> to` with capacity `cap` and a reverse arc of capacity `rev`.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64, rev: f64) {
        debug_assert!(cap >= 0.0 && rev >= 0.0);
        self.push_arc(from, to, cap);
        self.push_arc(to, from, rev);
        self.eps = self.eps.max(1e-14 * cap.max(rev));
    }

    fn bfs(&self, s: usize, t: usize, level: &mut [usize]) -> bool {
        level.fill(NONE);
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            let mut e = self.head[v];
            while e != NONE {
                let w = self.to[e];
                if level[w] == NONE && self.cap[e] > self.eps {
                    level[w] = level[v] + 1;
                    queue.push_back(w);
                }
                e = self.next[e];
            }
        }
        level[t] != NONE
    }

    fn dfs(&mut self, v: usize, t: usize, limit: f64, level: &[usize], iter: &mut [usize]) -> f64 {
        if v == t {
            return limit;
        }
        while iter[v] != NONE {
            let e = iter[v];
            let w = self.to[e];
            if self.cap[e] > self.eps && level[w] == level[v] + 1 {
                let pushed = self.dfs(w, t, limit.min(self.cap[e]), level, iter);
                if pushed > 0.0 {
                    self.cap[e] -= pushed;
                    self.cap[e ^ 1] += pushed;
                    return pushed;
                }
            }
            iter[v] = self.next[e];
        }
        0.0
    }

    /// Maximum `s`-`t` flow; leaves the residual graph in place.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let n = self.num_nodes();
        let mut level = vec![NONE; n];
        let mut iter = vec![NONE; n];
        let mut total = 0.0;
        while self.bfs(s, t, &mut level) {
            iter.copy_from_slice(&self.head);
            loop {
                let f = self.dfs(s, t, f64::INFINITY, &level, &mut iter);
                if f <= 0.0 {
                    break;
                }
                total += f;
            }
        }
        total
    }

    /// Nodes reachable from `s` in the residual graph (smallest min-cut
    /// source side).
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.num_nodes()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            let mut e = self.head[v];
            while e != NONE {
                let w = self.to[e];
                if !seen[w] && self.cap[e] > self.eps {
                    seen[w] = true;
                    stack.push(w);
                }
                e = self.next[e];
            }
        }
        seen
    }

    /// Nodes that can reach `t` in the residual graph (smallest min-cut
    /// sink side).
    pub fn sink_side(&self, t: usize) -> Vec<bool> {
        let mut seen = vec![false; self.num_nodes()];
        seen[t] = true;
        let mut stack = vec![t];
        while let Some(v) = stack.pop() {
            // Arcs u -> v with residual capacity are the reverses of v's arcs.
            let mut e = self.head[v];
            while e != NONE {
                let u = self.to[e];
                if !seen[u] && self.cap[e ^ 1] > self.eps {
                    seen[u] = true;
                    stack.push(u);
                }
                e = self.next[e];
            }
        }
        seen
    }
}
