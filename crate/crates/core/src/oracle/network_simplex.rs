//! Primal network simplex for the uncapacitated transportation problem.
//!
//! Sources `0..m` ship to sinks `0..n` along dense arcs `i → j`. The initial
//! spanning tree hangs every node from an artificial root through a high-cost
//! artificial arc. Entering arcs are chosen by block search; the leaving arc
//! follows the strongly-feasible-tree rule, which prevents cycling on
//! degenerate pivots.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Optimal flow and node potentials.
#[derive(Debug, Clone)]
pub struct TransportFlow {
    /// Row-major `m × n` flows.
    pub flow: Vec<f64>,
    /// Source potentials `f_i` and sink potentials `g_j` with `f_i + g_j ≤ c_ij`.
    pub source_potential: Vec<f64>,
    pub sink_potential: Vec<f64>,
    pub pivots: usize,
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    art_cost: f64,
    flow: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    first_child: Vec<usize>,
    next_sib: Vec<usize>,
    prev_sib: Vec<usize>,
}

impl Simplex<'_> {
    fn real_arcs(&self) -> usize {
        self.m * self.n
    }

    fn root(&self) -> usize {
        self.m + self.n
    }

    fn ends(&self, e: usize) -> (usize, usize) {
        let real = self.real_arcs();
        if e < real {
            (e / self.n, self.m + e % self.n)
        } else {
            let v = e - real;
            if v < self.m {
                (v, self.root())
            } else {
                (self.root(), v)
            }
        }
    }

    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.real_arcs() {
            self.cost[e]
        } else {
            self.art_cost
        }
    }

    fn reduced_cost(&self, e: usize) -> f64 {
        let (s, t) = self.ends(e);
        self.arc_cost(e) + self.pi[s] - self.pi[t]
    }

    fn add_child(&mut self, p: usize, c: usize) {
        let head = self.first_child[p];
        self.next_sib[c] = head;
        self.prev_sib[c] = NONE;
        if head != NONE {
            self.prev_sib[head] = c;
        }
        self.first_child[p] = c;
    }

    fn remove_child(&mut self, p: usize, c: usize) {
        let (prev, next) = (self.prev_sib[c], self.next_sib[c]);
        if prev == NONE {
            self.first_child[p] = next;
        } else {
            self.next_sib[prev] = next;
        }
        if next != NONE {
            self.prev_sib[next] = prev;
        }
        self.prev_sib[c] = NONE;
        self.next_sib[c] = NONE;
    }

    /// Recomputes depth and potentials below (and including) `top`.
    fn refresh_subtree(&mut self, top: usize) {
        let mut stack = vec![top];
        while let Some(x) = stack.pop() {
            let p = self.parent[x];
            let c = self.arc_cost(self.pred[x]);
            self.depth[x] = self.depth[p] + 1;
            self.pi[x] = if self.pred_up[x] {
                self.pi[p] - c
            } else {
                self.pi[p] + c
            };
            let mut ch = self.first_child[x];
            while ch != NONE {
                stack.push(ch);
                ch = self.next_sib[ch];
            }
        }
    }

    fn join(&self, mut a: usize, mut b: usize) -> usize {
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.parent[a];
            } else {
                b = self.parent[b];
            }
        }
        a
    }

    fn pivot(&mut self, e_in: usize) -> Result<()> {
        let (first, second) = self.ends(e_in);
        let join = self.join(first, second);
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut side = 0;
        let mut x = first;
        while x != join {
            if self.pred_up[x] {
                let d = self.flow[self.pred[x]];
                if d < delta {
                    delta = d;
                    u_out = x;
                    side = 1;
                }
            }
            x = self.parent[x];
        }
        x = second;
        while x != join {
            if !self.pred_up[x] {
                let d = self.flow[self.pred[x]];
                if d <= delta {
                    delta = d;
                    u_out = x;
                    side = 2;
                }
            }
            x = self.parent[x];
        }
        if u_out == NONE {
            return Err(Error::Malformed("transport problem is unbounded".into()));
        }

        // push delta around the cycle
        self.flow[e_in] += delta;
        x = first;
        while x != join {
            let e = self.pred[x];
            if self.pred_up[x] {
                self.flow[e] -= delta
            } else {
                self.flow[e] += delta
            }
            x = self.parent[x];
        }
        x = second;
        while x != join {
            let e = self.pred[x];
            if self.pred_up[x] {
                self.flow[e] += delta
            } else {
                self.flow[e] -= delta
            }
            x = self.parent[x];
        }
        self.flow[self.pred[u_out]] = 0.0;

        // re-hang the detached subtree from the entering arc
        let (u_in, v_in) = if side == 1 {
            (first, second)
        } else {
            (second, first)
        };
        let mut path = vec![u_in];
        while *path.last().unwrap() != u_out {
            let last = *path.last().unwrap();
            path.push(self.parent[last]);
        }
        let old: Vec<(usize, bool)> = path
            .iter()
            .map(|&v| (self.pred[v], self.pred_up[v]))
            .collect();
        let old_parent_of_out = self.parent[u_out];
        self.remove_child(old_parent_of_out, u_out);
        for i in 0..path.len() - 1 {
            self.remove_child(path[i + 1], path[i]);
        }
        for i in 0..path.len() - 1 {
            let (child, new_parent) = (path[i + 1], path[i]);
            self.parent[child] = new_parent;
            self.pred[child] = old[i].0;
            self.pred_up[child] = !old[i].1;
            self.add_child(new_parent, child);
        }
        self.parent[u_in] = v_in;
        self.pred[u_in] = e_in;
        self.pred_up[u_in] = side == 1;
        self.add_child(v_in, u_in);
        self.refresh_subtree(u_in);
        Ok(())
    }
}

/// Solves `min Σ c_ij π_ij` subject to row sums `supply` and column sums
/// `demand`, `π ≥ 0`. `cost` is row-major `m × n` and non-negative.
pub fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportFlow> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("empty transport problem".into()));
    }
    if cost.len() != m * n {
        return Err(Error::DimensionMismatch {
            expected: m * n,
            actual: cost.len(),
        });
    }
    let max_cost = cost.iter().fold(0.0f64, |a, &b| a.max(b));
    let nodes = m + n + 1;
    let art_cost = (max_cost + 1.0) * nodes as f64;
    let arcs = m * n + m + n;
    let root = m + n;

    let mut s = Simplex {
        m,
        n,
        cost,
        art_cost,
        flow: vec![0.0; arcs],
        parent: vec![NONE; nodes],
        pred: vec![NONE; nodes],
        pred_up: vec![false; nodes],
        depth: vec![0; nodes],
        pi: vec![0.0; nodes],
        first_child: vec![NONE; nodes],
        next_sib: vec![NONE; nodes],
        prev_sib: vec![NONE; nodes],
    };
    for v in 0..m + n {
        let e = m * n + v;
        s.parent[v] = root;
        s.pred[v] = e;
        s.depth[v] = 1;
        if v < m {
            s.pred_up[v] = true;
            s.flow[e] = supply[v];
            s.pi[v] = -art_cost;
        } else {
            s.pred_up[v] = false;
            s.flow[e] = demand[v - m];
            s.pi[v] = art_cost;
        }
        s.add_child(root, v);
    }

    let tol = 1e-12 * art_cost;
    let block = ((arcs as f64).sqrt().ceil() as usize).max(10);
    let mut next_arc = 0;
    let mut pivots = 0;
    loop {
        // block search for the most negative reduced cost
        let mut best = NONE;
        let mut best_rc = -tol;
        let mut scanned = 0;
        let mut e = next_arc;
        while scanned < arcs {
            let rc = s.reduced_cost(e);
            if rc < best_rc {
                best_rc = rc;
                best = e;
            }
            scanned += 1;
            e += 1;
            if e == arcs {
                e = 0;
            }
            if scanned % block == 0 && best != NONE {
                break;
            }
        }
        if best == NONE {
            break;
        }
        next_arc = e;
        s.pivot(best)?;
        pivots += 1;
    }

    let mut flow = s.flow;
    flow.truncate(m * n);
    let source_potential = s.pi[..m].iter().map(|p| -p).collect();
    let sink_potential = s.pi[m..m + n].to_vec();
    Ok(TransportFlow {
        flow,
        source_potential,
        sink_potential,
        pivots,
    })
}
