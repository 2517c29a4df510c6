//! Structured cube grids centred at the origin.
//!
//! The box is `[-L/2, L/2]^d` split into `n^d` cube cells of side `h = L/n`.
//! Linear indices are row-major with the first coordinate varying fastest:
//! `idx = i_0 + n·i_1 + n²·i_2`. A box grid has `(n+1)^d` nodes; a torus
//! identifies opposite faces and has `n^d` nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Topology {
    Box,
    Torus,
}

impl Topology {
    pub fn code(self) -> u8 {
        match self {
            Topology::Box => 0,
            Topology::Torus => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Topology::Box),
            1 => Ok(Topology::Torus),
            other => Err(Error::Format(format!("unknown topology code {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d: usize,
    pub n: usize,
    pub length: f64,
    pub topology: Topology,
}

impl Grid {
    pub fn new(d: usize, n: usize, length: f64, topology: Topology) -> Result<Self> {
        if !(2..=3).contains(&d) {
            return Err(Error::InvalidParameter(format!("grid dimension {d} not in {{2, 3}}")));
        }
        if n < 2 {
            return Err(Error::InvalidParameter(format!("grid needs n >= 2 cells per side, got {n}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidParameter(format!("box side length {length} must be positive")));
        }
        Ok(Self { d, n, length, topology })
    }

    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn origin(&self) -> f64 {
        -0.5 * self.length
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    pub fn num_cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn nodes_per_side(&self) -> usize {
        match self.topology {
            Topology::Box => self.n + 1,
            Topology::Torus => self.n,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_side().pow(self.d as u32)
    }

    pub fn with_topology(&self, topology: Topology) -> Grid {
        Grid { topology, ..*self }
    }

    pub fn cell_multi(&self, idx: usize) -> [usize; 3] {
        unflatten(idx, self.n, self.d)
    }

    pub fn cell_index(&self, m: [usize; 3]) -> usize {
        flatten(m, self.n, self.d)
    }

    pub fn node_multi(&self, idx: usize) -> [usize; 3] {
        unflatten(idx, self.nodes_per_side(), self.d)
    }

    /// Node index of an integer lattice position; wraps on the torus and
    /// returns `None` outside the box.
    pub fn node_at(&self, m: [i64; 3]) -> Option<usize> {
        let side = self.nodes_per_side() as i64;
        let mut w = [0usize; 3];
        for k in 0..self.d {
            w[k] = match self.topology {
                Topology::Torus => m[k].rem_euclid(side) as usize,
                Topology::Box => {
                    if m[k] < 0 || m[k] >= side {
                        return None;
                    }
                    m[k] as usize
                }
            };
        }
        Some(flatten(w, self.nodes_per_side(), self.d))
    }

    pub fn cell_at(&self, m: [i64; 3]) -> Option<usize> {
        let n = self.n as i64;
        let mut w = [0usize; 3];
        for k in 0..self.d {
            w[k] = match self.topology {
                Topology::Torus => m[k].rem_euclid(n) as usize,
                Topology::Box => {
                    if m[k] < 0 || m[k] >= n {
                        return None;
                    }
                    m[k] as usize
                }
            };
        }
        Some(flatten(w, self.n, self.d))
    }

    pub fn cell_center(&self, idx: usize) -> Point {
        let m = self.cell_multi(idx);
        let mut x = [0.0; 3];
        for k in 0..self.d {
            x[k] = self.origin() + (m[k] as f64 + 0.5) * self.h();
        }
        x
    }

    pub fn node_coord(&self, idx: usize) -> Point {
        let m = self.node_multi(idx);
        let mut x = [0.0; 3];
        for k in 0..self.d {
            x[k] = self.origin() + m[k] as f64 * self.h();
        }
        x
    }

    /// True for box nodes on the outer boundary. Torus grids have none.
    pub fn is_boundary_node(&self, idx: usize) -> bool {
        match self.topology {
            Topology::Torus => false,
            Topology::Box => {
                let m = self.node_multi(idx);
                (0..self.d).any(|k| m[k] == 0 || m[k] == self.n)
            }
        }
    }

    fn lattice_range(&self, c: f64, r: f64, offset: f64) -> (i64, i64) {
        let h = self.h();
        let lo = ((c - r - self.origin()) / h - offset).ceil() as i64;
        let hi = ((c + r - self.origin()) / h - offset).floor() as i64;
        (lo, hi)
    }

    /// Visits lattice positions `m` (cell centres when `offset = 0.5`, nodes
    /// when `offset = 0`) within distance `radius` of `center` in the
    /// unwrapped lattice, passing the position and its unwrapped coordinate.
    fn visit_ball(&self, center: &Point, radius: f64, offset: f64, mut f: impl FnMut([i64; 3], Point)) {
        let h = self.h();
        let mut ranges = [(0i64, 0i64); 3];
        for k in 0..self.d {
            ranges[k] = self.lattice_range(center[k], radius, offset);
        }
        let r2 = radius * radius * (1.0 + 1e-12);
        let (z0, z1) = if self.d == 3 { ranges[2] } else { (0, 0) };
        for i2 in z0..=z1 {
            for i1 in ranges[1].0..=ranges[1].1 {
                for i0 in ranges[0].0..=ranges[0].1 {
                    let m = [i0, i1, i2];
                    let mut x = [0.0; 3];
                    let mut dist2 = 0.0;
                    for k in 0..self.d {
                        x[k] = self.origin() + (m[k] as f64 + offset) * h;
                        dist2 += (x[k] - center[k]).powi(2);
                    }
                    if dist2 <= r2 {
                        f(m, x);
                    }
                }
            }
        }
    }

    /// Cells whose centre lies in the closed ball. On the torus the ball is
    /// tiled periodically, so a cell appears once per covering copy.
    pub fn cells_in_ball(&self, center: &Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit_ball(center, radius, 0.5, |m, _| {
            if let Some(c) = self.cell_at(m) {
                out.push(c);
            }
        });
        out
    }

    /// Nodes in the closed ball, with the same multiplicity convention as
    /// [`Grid::cells_in_ball`].
    pub fn nodes_in_ball(&self, center: &Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit_ball(center, radius, 0.0, |m, _| {
            if let Some(c) = self.node_at(m) {
                out.push(c);
            }
        });
        out
    }

    /// Nodes in the closed ball together with their distance to the centre
    /// (measured in the unwrapped lattice).
    pub fn nodes_in_ball_with_distance(&self, center: &Point, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.visit_ball(center, radius, 0.0, |m, x| {
            if let Some(c) = self.node_at(m) {
                let r = (0..self.d).map(|k| (x[k] - center[k]).powi(2)).sum::<f64>().sqrt();
                out.push((c, r));
            }
        });
        out
    }
}

/// Ball or annulus `{inner <= |x - center| <= outer}` (closed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: Point,
    pub inner: f64,
    pub outer: f64,
}

impl Region {
    pub fn ball(center: Point, radius: f64) -> Self {
        Self { center, inner: 0.0, outer: radius }
    }

    pub fn annulus(center: Point, inner: f64, outer: f64) -> Self {
        Self { center, inner, outer }
    }

    pub fn radius(&self) -> f64 {
        self.outer
    }

    /// Cells whose centre lies in the region (with torus multiplicity).
    pub fn cells(&self, grid: &Grid) -> Vec<usize> {
        let mut out = Vec::new();
        let inner2 = self.inner * self.inner * (1.0 - 1e-12);
        grid.visit_ball(&self.center, self.outer, 0.5, |m, x| {
            let r2: f64 = (0..grid.d).map(|k| (x[k] - self.center[k]).powi(2)).sum();
            if r2 >= inner2 {
                if let Some(c) = grid.cell_at(m) {
                    out.push(c);
                }
            }
        });
        out
    }

    pub fn nodes(&self, grid: &Grid) -> Vec<usize> {
        let inner = self.inner * (1.0 - 1e-12);
        grid.nodes_in_ball_with_distance(&self.center, self.outer)
            .into_iter()
            .filter(|&(_, r)| r >= inner)
            .map(|(i, _)| i)
            .collect()
    }

    /// Lebesgue measure of the region in dimension `d`.
    pub fn measure(&self, d: usize) -> f64 {
        ball_volume(d, self.outer) - ball_volume(d, self.inner)
    }

    /// True when a box grid contains the region.
    pub fn inside(&self, grid: &Grid) -> bool {
        grid.topology == Topology::Torus
            || (0..grid.d).all(|k| self.center[k].abs() + self.outer <= 0.5 * grid.length * (1.0 + 1e-12))
    }
}

pub fn ball_volume(d: usize, r: f64) -> f64 {
    let unit = match d {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 / 3.0 * std::f64::consts::PI,
        _ => {
            // Γ-free recursion V_d = 2π/d · V_{d-2}.
            let mut v = if d % 2 == 0 { 1.0 } else { 2.0 };
            let mut k = if d % 2 == 0 { 2 } else { 3 };
            while k <= d {
                v *= 2.0 * std::f64::consts::PI / k as f64;
                k += 2;
            }
            v
        }
    };
    unit * r.powi(d as i32)
}

pub(crate) fn flatten(m: [usize; 3], side: usize, d: usize) -> usize {
    let mut idx = 0;
    for k in (0..d).rev() {
        idx = idx * side + m[k];
    }
    idx
}

pub(crate) fn unflatten(mut idx: usize, side: usize, d: usize) -> [usize; 3] {
    let mut m = [0usize; 3];
    for slot in m.iter_mut().take(d) {
        *slot = idx % side;
        idx /= side;
    }
    m
}

pub fn norm(x: &Point, d: usize) -> f64 {
    x.iter().take(d).map(|v| v * v).sum::<f64>().sqrt()
}

pub fn distance(x: &Point, y: &Point, d: usize) -> f64 {
    (0..d).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let g = Grid::new(3, 5, 1.0, Topology::Box).unwrap();
        for idx in 0..g.num_cells() {
            assert_eq!(g.cell_index(g.cell_multi(idx)), idx);
        }
        assert_eq!(g.num_nodes(), 216);
        assert_eq!(g.with_topology(Topology::Torus).num_nodes(), 125);
    }

    #[test]
    fn box_is_centred() {
        let g = Grid::new(2, 4, 2.0, Topology::Box).unwrap();
        assert_eq!(g.node_coord(0)[..2], [-1.0, -1.0]);
        assert_eq!(g.node_coord(g.num_nodes() - 1)[..2], [1.0, 1.0]);
        assert_eq!(g.cell_center(0)[..2], [-0.75, -0.75]);
    }

    #[test]
    fn ball_counts_cells_with_multiplicity_on_torus() {
        let g = Grid::new(2, 4, 4.0, Topology::Torus).unwrap();
        // Ball much larger than the torus: every cell appears many times,
        // roughly area/h² in total.
        let cells = g.cells_in_ball(&[0.0; 3], 10.0);
        let expected = std::f64::consts::PI * 100.0;
        assert!((cells.len() as f64 - expected).abs() / expected < 0.05);
        let b = g.with_topology(Topology::Box);
        assert_eq!(b.cells_in_ball(&[0.0; 3], 10.0).len(), 16);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(1, 4, 1.0, Topology::Box).is_err());
        assert!(Grid::new(2, 1, 1.0, Topology::Box).is_err());
        assert!(Grid::new(2, 4, 0.0, Topology::Box).is_err());
    }

    #[test]
    fn annulus_cells_exclude_the_hole() {
        let g = Grid::new(2, 64, 4.0, Topology::Box).unwrap();
        let ann = Region::annulus([0.0; 3], 1.0, 2.0);
        let cells = ann.cells(&g);
        let area = cells.len() as f64 * g.cell_volume();
        assert!((area - ann.measure(2)).abs() / ann.measure(2) < 0.02);
        assert!(cells.iter().all(|&c| norm(&g.cell_center(c), 2) >= 1.0));
        assert!(ann.inside(&g));
        assert!(!Region::ball([0.5, 0.0, 0.0], 2.0).inside(&g));
    }

    #[test]
    fn ball_volumes() {
        assert!((ball_volume(3, 2.0) - 32.0 / 3.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((ball_volume(4, 1.0) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-12);
    }
}
