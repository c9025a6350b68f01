//! Static k-d tree over site locations for additively weighted nearest-site
//! queries, i.e. `argmin_j ‖x − y_j‖ − w_j`.
//!
//! The tree is built once per site set; weights change on every objective
//! evaluation and only require refreshing the per-node weight maxima. A node
//! is pruned when `dist(x, box) − max_w(node)` exceeds the best value found so
//! far. Because IEEE rounding is monotone, that bound never exceeds the value
//! computed for any site inside the box, so pruning is exact and the result
//! matches a brute-force scan bit for bit, including the smallest-index tie rule.

use crate::point::Point;

const LEAF_SIZE: usize = 8;
const NO_CHILD: u32 = u32::MAX;
const STACK_DEPTH: usize = 128;

#[derive(Debug, Clone)]
struct Node {
    min: Point,
    max: Point,
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    nodes: Vec<Node>,
    /// Site indices in leaf order.
    order: Vec<u32>,
    /// Site coordinates in leaf order.
    coords: Vec<Point>,
    /// Site coordinates by site index.
    points: Vec<Point>,
}

impl KdTree {
    pub fn build(points: &[Point]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            build_node(points, &mut order, 0, points.len(), &mut nodes);
        }
        let coords = order.iter().map(|&i| points[i as usize]).collect();
        Self {
            nodes,
            order,
            coords,
            points: points.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Binds a weight vector (indexed by site) to the tree.
    pub fn with_weights(&self, weights: &[f64]) -> WeightedTree<'_> {
        debug_assert_eq!(weights.len(), self.order.len());
        let leaf_weights: Vec<f64> = self.order.iter().map(|&i| weights[i as usize]).collect();
        let mut node_max = vec![f64::NEG_INFINITY; self.nodes.len()];
        // children are always stored after their parent
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            node_max[idx] = if node.left == NO_CHILD {
                leaf_weights[node.start as usize..node.end as usize]
                    .iter()
                    .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            } else {
                node_max[node.left as usize].max(node_max[node.right as usize])
            };
        }
        WeightedTree {
            tree: self,
            leaf_weights,
            node_max,
            weights: weights.to_vec(),
        }
    }
}

fn build_node(
    points: &[Point],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let slice = &mut order[start..end];
    let mut min = Point::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &i in slice.iter() {
        let p = points[i as usize];
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    let idx = nodes.len() as u32;
    nodes.push(Node {
        min,
        max,
        start: start as u32,
        end: end as u32,
        left: NO_CHILD,
        right: NO_CHILD,
    });
    if end - start > LEAF_SIZE {
        let split_x = max.x - min.x >= max.y - min.y;
        let mid = (end - start) / 2;
        let key = |i: &u32| {
            let p = points[*i as usize];
            if split_x {
                p.x
            } else {
                p.y
            }
        };
        slice.select_nth_unstable_by(mid, |a, b| key(a).total_cmp(&key(b)).then(a.cmp(b)));
        let left = build_node(points, order, start, start + mid, nodes);
        let right = build_node(points, order, start + mid, end, nodes);
        nodes[idx as usize].left = left;
        nodes[idx as usize].right = right;
    }
    idx
}

/// A [`KdTree`] together with one weight vector.
#[derive(Debug, Clone)]
pub struct WeightedTree<'a> {
    tree: &'a KdTree,
    leaf_weights: Vec<f64>,
    node_max: Vec<f64>,
    weights: Vec<f64>,
}

#[inline]
fn box_dist(x: Point, min: Point, max: Point) -> f64 {
    let dx = if x.x < min.x {
        min.x - x.x
    } else if x.x > max.x {
        x.x - max.x
    } else {
        0.0
    };
    let dy = if x.y < min.y {
        min.y - x.y
    } else if x.y > max.y {
        x.y - max.y
    } else {
        0.0
    };
    (dx * dx + dy * dy).sqrt()
}

impl WeightedTree<'_> {
    /// Index minimising `‖x − y_j‖ − w_j`, smallest index on ties.
    ///
    /// `hint` seeds the search with a site that is likely to be (close to)
    /// the answer, typically the cell of the previous neighbouring query.
    pub fn nearest(&self, x: Point, hint: Option<usize>) -> usize {
        self.nearest_with_value(x, hint).0
    }

    /// [`WeightedTree::nearest`] together with the minimal value.
    pub fn nearest_with_value(&self, x: Point, hint: Option<usize>) -> (usize, f64) {
        let tree = self.tree;
        let (mut best_v, mut best_i) = match hint {
            Some(h) => (x.dist(tree.points[h]) - self.weights[h], h as u32),
            None => (f64::INFINITY, u32::MAX),
        };
        let mut stack = [(0u32, 0.0f64); STACK_DEPTH];
        let mut top = 1usize;
        stack[0] = (0, f64::NEG_INFINITY);
        while top > 0 {
            top -= 1;
            let (ni, lb) = stack[top];
            if lb > best_v {
                continue;
            }
            let node = &tree.nodes[ni as usize];
            if node.left == NO_CHILD {
                for s in node.start as usize..node.end as usize {
                    let v = x.dist(tree.coords[s]) - self.leaf_weights[s];
                    let i = tree.order[s];
                    if v < best_v || (v == best_v && i < best_i) {
                        best_v = v;
                        best_i = i;
                    }
                }
                continue;
            }
            let (l, r) = (node.left as usize, node.right as usize);
            let ln = &tree.nodes[l];
            let rn = &tree.nodes[r];
            let lb_l = box_dist(x, ln.min, ln.max) - self.node_max[l];
            let lb_r = box_dist(x, rn.min, rn.max) - self.node_max[r];
            // push the farther child first so the nearer one is explored first
            let (first, lb_first, second, lb_second) = if lb_l <= lb_r {
                (r, lb_r, l, lb_l)
            } else {
                (l, lb_l, r, lb_r)
            };
            if lb_first <= best_v {
                stack[top] = (first as u32, lb_first);
                top += 1;
            }
            if lb_second <= best_v {
                stack[top] = (second as u32, lb_second);
                top += 1;
            }
        }
        (best_i as usize, best_v)
    }

    /// Appends to `out`, in increasing order, every site with `‖x − y_j‖ − w_j ≤ bound`.
    pub fn within(&self, x: Point, bound: f64, out: &mut Vec<u32>) {
        let tree = self.tree;
        let start = out.len();
        let mut stack = [0u32; STACK_DEPTH];
        let mut top = 1usize;
        while top > 0 {
            top -= 1;
            let node = &tree.nodes[stack[top] as usize];
            if node.left == NO_CHILD {
                for s in node.start as usize..node.end as usize {
                    if x.dist(tree.coords[s]) - self.leaf_weights[s] <= bound {
                        out.push(tree.order[s]);
                    }
                }
                continue;
            }
            for c in [node.left, node.right] {
                let cn = &tree.nodes[c as usize];
                if box_dist(x, cn.min, cn.max) - self.node_max[c as usize] <= bound {
                    stack[top] = c;
                    top += 1;
                }
            }
        }
        out[start..].sort_unstable();
    }
}
