//! Dinic max-flow / min-cut on real capacities.

use std::collections::VecDeque;

const EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
struct Arc {
    to: usize,
    cap: f64,
    /// Index of the reverse arc in `adj[to]`.
    rev: usize,
}

#[derive(Clone, Debug)]
pub struct FlowGraph {
    adj: Vec<Vec<Arc>>,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        FlowGraph {
            adj: vec![Vec::new(); nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Adds `u → v` with capacity `cap` and `v → u` with `rev_cap`.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64, rev_cap: f64) {
        debug_assert!(cap >= 0.0 && rev_cap >= 0.0);
        let ru = self.adj[v].len() + usize::from(u == v);
        let rv = self.adj[u].len();
        self.adj[u].push(Arc { to: v, cap, rev: ru });
        self.adj[v].push(Arc { to: u, cap: rev_cap, rev: rv });
    }

    fn levels(&self, s: usize) -> Vec<i64> {
        let mut level = vec![-1; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for a in &self.adj[u] {
                if a.cap > EPS && level[a.to] < 0 {
                    level[a.to] = level[u] + 1;
                    queue.push_back(a.to);
                }
            }
        }
        level
    }

    fn augment(&mut self, u: usize, t: usize, pushed: f64, level: &[i64], iter: &mut [usize]) -> f64 {
        if u == t {
            return pushed;
        }
        while iter[u] < self.adj[u].len() {
            let i = iter[u];
            let Arc { to, cap, rev } = self.adj[u][i];
            if cap > EPS && level[to] == level[u] + 1 {
                let d = self.augment(to, t, pushed.min(cap), level, iter);
                if d > 0.0 {
                    self.adj[u][i].cap -= d;
                    self.adj[to][rev].cap += d;
                    return d;
                }
            }
            iter[u] += 1;
        }
        0.0
    }

    /// Maximum flow from `s` to `t`; the graph keeps the residual.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut flow = 0.0;
        loop {
            let level = self.levels(s);
            if level[t] < 0 {
                return flow;
            }
            let mut iter = vec![0; self.adj.len()];
            loop {
                let f = self.augment(s, t, f64::INFINITY, &level, &mut iter);
                if f <= 0.0 {
                    break;
                }
                flow += f;
            }
        }
    }

    /// After [`FlowGraph::max_flow`]: nodes on the source side of a
    /// minimum cut.
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let level = self.levels(s);
        level.iter().map(|&l| l >= 0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_network() {
        // CLRS figure 26.1: max flow 23.
        let mut g = FlowGraph::new(6);
        for (u, v, c) in [
            (0, 1, 16.0),
            (0, 2, 13.0),
            (1, 3, 12.0),
            (2, 1, 4.0),
            (2, 4, 14.0),
            (3, 2, 9.0),
            (3, 5, 20.0),
            (4, 3, 7.0),
            (4, 5, 4.0),
        ] {
            g.add_edge(u, v, c, 0.0);
        }
        assert!((g.max_flow(0, 5) - 23.0).abs() < 1e-9);
        let side = g.source_side(0);
        assert!(side[0] && !side[5]);
    }

    #[test]
    fn cut_value_equals_flow() {
        let mut g = FlowGraph::new(4);
        let edges = [(0, 1, 1.5, 0.0), (0, 2, 2.25, 0.0), (1, 2, 0.5, 0.5), (1, 3, 1.0, 0.0), (2, 3, 3.0, 0.0)];
        for (u, v, c, r) in edges {
            g.add_edge(u, v, c, r);
        }
        let flow = g.max_flow(0, 3);
        let side = g.source_side(0);
        let mut cut = 0.0;
        for (u, v, c, r) in edges {
            if side[u] && !side[v] {
                cut += c;
            }
            if side[v] && !side[u] {
                cut += r;
            }
        }
        assert!((flow - cut).abs() < 1e-9, "{flow} vs {cut}");
        assert!((flow - 3.75).abs() < 1e-9);
    }
}
