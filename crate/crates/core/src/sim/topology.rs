//! Node placement and connectivity graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::channel::distance;

pub type Point = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn square(side: f64) -> Self {
        Self { width: side, height: side }
    }

    /// Bottom edge midpoint.
    pub fn bottom_center(&self) -> Point {
        (self.width / 2.0, 0.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width).contains(&p.0) && (0.0..=self.height).contains(&p.1)
    }
}

impl Default for Area {
    fn default() -> Self {
        Area::square(300.0)
    }
}

/// Sink at index 0, then `n_nodes` products uniform over the area.
pub fn generate_topology(n_nodes: usize, area: Area, sink: Point, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n_nodes + 1);
    pts.push(sink);
    for _ in 0..n_nodes {
        pts.push((rng.random_range(0.0..=area.width), rng.random_range(0.0..=area.height)));
    }
    pts
}

/// Adjacency lists of the graph linking every pair closer than `range`.
pub fn unit_disk_graph(points: &[Point], range: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if distance(points[i], points[j]) <= range {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    adj
}

pub fn is_connected(adj: &[Vec<usize>]) -> bool {
    if adj.is_empty() {
        return true;
    }
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_inside_area_with_sink_first() {
        let a = Area::default();
        let pts = generate_topology(200, a, a.bottom_center(), 11);
        assert_eq!(pts.len(), 201);
        assert_eq!(pts[0], (150.0, 0.0));
        assert!(pts.iter().all(|p| a.contains(*p)));
        assert_eq!(pts, generate_topology(200, a, a.bottom_center(), 11));
        assert_ne!(pts, generate_topology(200, a, a.bottom_center(), 12));
        assert_eq!(generate_topology(1, a, a.bottom_center(), 0).len(), 2);
    }

    #[test]
    fn unit_disk_edges() {
        let pts = [(0.0, 0.0), (10.0, 0.0), (25.0, 0.0)];
        let adj = unit_disk_graph(&pts, 15.0);
        assert_eq!(adj, vec![vec![1], vec![0, 2], vec![1]]);
        assert!(is_connected(&adj));
        assert!(!is_connected(&unit_disk_graph(&pts, 12.0)));
    }
}
