//! Structured simplicial meshes and nodal fields on them.
//!
//! Every cube cell is split into `d!` simplices along its main diagonal
//! (Kuhn split): 2 triangles in 2D, 6 tetrahedra in 3D. Each simplex lies in
//! exactly one coefficient cell.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::grid::{Grid, Point, Topology};

pub const SOLUTION_MAGIC: &[u8; 4] = b"DHS1";

/// Reference simplex of the Kuhn split, described by the axis order of the
/// path from the cell's lower corner to its upper corner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Simplex {
    /// Vertex offsets from the cell's lower corner, in units of `h`.
    pub offsets: [[i64; 3]; 4],
    /// Gradients of the barycentric basis functions.
    pub grads: [[f64; 3]; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub grid: Grid,
    simplices: Vec<Simplex>,
    volume: f64,
}

fn permutations(d: usize) -> Vec<[usize; 3]> {
    match d {
        2 => vec![[0, 1, 2], [1, 0, 2]],
        _ => vec![[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]],
    }
}

impl Mesh {
    pub fn new(grid: Grid) -> Self {
        let d = grid.d;
        let h = grid.h();
        let simplices = permutations(d)
            .into_iter()
            .map(|perm| {
                let mut offsets = [[0i64; 3]; 4];
                for k in 1..=d {
                    offsets[k] = offsets[k - 1];
                    offsets[k][perm[k - 1]] += 1;
                }
                let mut grads = [[0.0; 3]; 4];
                grads[0][perm[0]] = -1.0 / h;
                for k in 1..d {
                    grads[k][perm[k - 1]] = 1.0 / h;
                    grads[k][perm[k]] = -1.0 / h;
                }
                grads[d][perm[d - 1]] = 1.0 / h;
                Simplex { offsets, grads }
            })
            .collect();
        let factorial = (1..=d).product::<usize>() as f64;
        Self { grid, simplices, volume: grid.cell_volume() / factorial }
    }

    pub fn build(d: usize, n: usize, length: f64, topology: Topology) -> Result<Self> {
        Ok(Self::new(Grid::new(d, n, length, topology)?))
    }

    pub fn d(&self) -> usize {
        self.grid.d
    }

    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    pub fn simplices_per_cell(&self) -> usize {
        self.simplices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.grid.num_cells() * self.simplices.len()
    }

    /// Volume of every simplex.
    pub fn element_volume(&self) -> f64 {
        self.volume
    }

    /// Global node indices of simplex `s` of `cell`.
    pub fn element_nodes(&self, cell: usize, s: usize) -> [usize; 4] {
        let m = self.grid.cell_multi(cell);
        let mut nodes = [0usize; 4];
        for (k, off) in self.simplices[s].offsets.iter().take(self.grid.d + 1).enumerate() {
            let pos = [m[0] as i64 + off[0], m[1] as i64 + off[1], m[2] as i64 + off[2]];
            nodes[k] = self.grid.node_at(pos).expect("cell corners are grid nodes");
        }
        nodes
    }

    /// Constant gradient of the P1 function `u` on simplex `s` of `cell`.
    pub fn gradient(&self, u: &[f64], cell: usize, s: usize) -> [f64; 3] {
        let nodes = self.element_nodes(cell, s);
        let grads = &self.simplices[s].grads;
        let mut g = [0.0; 3];
        for k in 0..=self.grid.d {
            for c in 0..self.grid.d {
                g[c] += u[nodes[k]] * grads[k][c];
            }
        }
        g
    }

    /// `∫_e u²` for the P1 function `u`, exact.
    pub fn element_integral_sq(&self, u: &[f64], cell: usize, s: usize) -> f64 {
        let nodes = self.element_nodes(cell, s);
        let d = self.grid.d;
        let (mut sum, mut sq) = (0.0, 0.0);
        for &n in nodes.iter().take(d + 1) {
            sum += u[n];
            sq += u[n] * u[n];
        }
        self.volume * (sq + sum * sum) / ((d + 1) * (d + 2)) as f64
    }

    /// Vertex-average quadrature of `f(u)` over a simplex.
    pub fn element_vertex_mean(&self, u: &[f64], cell: usize, s: usize, f: impl Fn(f64) -> f64) -> f64 {
        let nodes = self.element_nodes(cell, s);
        let d = self.grid.d;
        nodes.iter().take(d + 1).map(|&n| f(u[n])).sum::<f64>() / (d + 1) as f64
    }

    /// Centroid of simplex `s` of `cell`.
    pub fn element_centroid(&self, cell: usize, s: usize) -> Point {
        let d = self.grid.d;
        let h = self.grid.h();
        let m = self.grid.cell_multi(cell);
        let mut x = [0.0; 3];
        for off in self.simplices[s].offsets.iter().take(d + 1) {
            for k in 0..d {
                x[k] += self.grid.origin() + (m[k] as f64 + off[k] as f64) * h;
            }
        }
        x.iter_mut().for_each(|v| *v /= (d + 1) as f64);
        x
    }

    /// Value of the P1 function `u` at local coordinates `t ∈ [0,1]^d` of a
    /// cell.
    pub fn interpolate_in_cell(&self, u: &[f64], cell: usize, t: &[f64; 3]) -> f64 {
        let d = self.grid.d;
        let mut order = [0usize, 1, 2];
        order[..d].sort_by(|&a, &b| t[b].partial_cmp(&t[a]).expect("finite coordinates"));
        let m = self.grid.cell_multi(cell);
        let mut pos = [m[0] as i64, m[1] as i64, m[2] as i64];
        let node = |pos: [i64; 3]| u[self.grid.node_at(pos).expect("corner")];
        let mut value = (1.0 - t[order[0]]) * node(pos);
        for k in 1..=d {
            pos[order[k - 1]] += 1;
            let w = if k < d { t[order[k - 1]] - t[order[k]] } else { t[order[d - 1]] };
            value += w * node(pos);
        }
        value
    }
}

/// Provenance attached to a nodal field.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldMeta {
    pub source: String,
    pub seed: Option<u64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Nodal values of a P1 function (a discrete solution or corrector).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub meta: FieldMeta,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::Incompatible(format!(
                "{} nodal values for {} nodes",
                values.len(),
                grid.num_nodes()
            )));
        }
        Ok(Self { grid, values, meta: FieldMeta::default() })
    }

    /// Nodal interpolant of `f`.
    pub fn from_fn(grid: Grid, f: impl Fn(&Point) -> f64) -> Self {
        let values = (0..grid.num_nodes()).map(|i| f(&grid.node_coord(i))).collect();
        Self { grid, values, meta: FieldMeta::default() }
    }

    pub fn with_source(mut self, source: &str) -> Self {
        self.meta.source = source.to_string();
        self
    }

    pub fn scaled(&self, t: f64) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|v| v * t).collect(), meta: self.meta.clone() }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(SOLUTION_MAGIC)?;
        w.write_u32::<LittleEndian>(self.grid.d as u32)?;
        w.write_u32::<LittleEndian>(self.grid.n as u32)?;
        w.write_u8(self.grid.topology.code())?;
        w.write_f64::<LittleEndian>(self.meta.residual)?;
        for v in &self.values {
            w.write_f64::<LittleEndian>(*v)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(21 + 8 * self.values.len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads a solution file. The format does not store the box side, so
    /// the caller supplies it.
    pub fn read_from(r: &mut impl Read, length: f64) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SOLUTION_MAGIC {
            return Err(Error::Format(format!("bad solution magic {magic:?}")));
        }
        let d = r.read_u32::<LittleEndian>()? as usize;
        let n = r.read_u32::<LittleEndian>()? as usize;
        let topology = Topology::from_code(r.read_u8()?)?;
        let residual = r.read_f64::<LittleEndian>()?;
        let grid = Grid::new(d, n, length, topology)?;
        let mut values = vec![0.0; grid.num_nodes()];
        r.read_f64_into::<LittleEndian>(&mut values)?;
        let mut field = ScalarField::new(grid, values)?;
        field.meta.residual = residual;
        Ok(field)
    }
}
