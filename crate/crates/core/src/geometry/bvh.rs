//! Axis-aligned bounding volume hierarchy for closest-point queries on
//! triangle meshes. Median split on the longest centroid axis, at most
//! [`LEAF_SIZE`] triangles per leaf.

use crate::Vec3;

pub const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub distance: f64,
    pub triangle: usize,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, count: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

#[derive(Debug, Clone, Default)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    pub fn build(vertices: &[Vec3], triangles: &[[usize; 3]]) -> Self {
        if triangles.is_empty() {
            return Self::default();
        }
        let centroids: Vec<Vec3> = triangles
            .iter()
            .map(|t| (vertices[t[0]] + vertices[t[1]] + vertices[t[2]]) / 3.0)
            .collect();
        let mut bvh = Self {
            nodes: Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1),
            order: (0..triangles.len()).collect(),
        };
        bvh.build_node(vertices, triangles, &centroids, 0, triangles.len());
        bvh
    }

    fn build_node(
        &mut self,
        vertices: &[Vec3],
        triangles: &[[usize; 3]],
        centroids: &[Vec3],
        start: usize,
        end: usize,
    ) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &t in &self.order[start..end] {
            for &v in &triangles[t] {
                bounds.grow(&vertices[v]);
            }
            cbounds.grow(&centroids[t]);
        }
        let index = self.nodes.len();
        self.nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf {
                start,
                count: end - start,
            },
        });
        if end - start <= LEAF_SIZE {
            return index;
        }
        let extent = cbounds.max - cbounds.min;
        let axis = extent.imax();
        let mid = start + (end - start) / 2;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]));
        let left = self.build_node(vertices, triangles, centroids, start, mid);
        let right = self.build_node(vertices, triangles, centroids, mid, end);
        self.nodes[index].kind = NodeKind::Inner { left, right };
        index
    }

    /// Panics if the hierarchy is empty; callers check for an empty mesh first.
    pub fn closest_point(&self, vertices: &[Vec3], triangles: &[[usize; 3]], query: &Vec3) -> ClosestPoint {
        let mut best_d2 = f64::INFINITY;
        let mut best = (Vec3::zeros(), usize::MAX);
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds.distance_squared(query) > best_d2 {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &t in &self.order[start..start + count] {
                        let [a, b, c] = triangles[t].map(|i| vertices[i]);
                        let p = closest_point_on_triangle(query, &a, &b, &c);
                        let d2 = (p - query).norm_squared();
                        // ties resolve to the lowest triangle index
                        if d2 < best_d2 || (d2 == best_d2 && t < best.1) {
                            best_d2 = d2;
                            best = (p, t);
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left].bounds.distance_squared(query);
                    let dr = self.nodes[right].bounds.distance_squared(query);
                    // visit the nearer child first
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        ClosestPoint {
            point: best.0,
            distance: best_d2.sqrt(),
            triangle: best.1,
        }
    }
}

/// Closest point on triangle `abc` to `p` by Voronoi-region classification.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
