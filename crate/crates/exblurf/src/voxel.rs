//! Dense voxel grid of raw densities and degree-2 SH color coefficients.
//!
//! Grid nodes are vertex-centered: node (i, j, k) sits at
//! `min + (i/(nx-1), j/(ny-1), k/(nz-1)) * (max - min)`, so the nodes span
//! the bounds inclusively and trilinear interpolation is defined everywhere
//! inside. Values are stored as f32 (the checkpoint wire format) while all
//! interpolation happens in f64.
//!
//! SH layout per node: 27 scalars ordered channel-major, `ch * 9 + basis`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sh::{sh_basis, SH_COUNT};

pub const SH_PER_NODE: usize = 3 * SH_COUNT;

/// Scalars carried per node: one raw density plus 27 SH coefficients.
pub const PARAMS_PER_NODE: usize = 1 + SH_PER_NODE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite() && min[a] < max[a]) {
                return Err(Error::invalid("bounds must satisfy min < max per axis"));
            }
        }
        Ok(Bounds { min, max })
    }

    pub fn span(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn diagonal(&self) -> f64 {
        let s = self.span();
        (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()
    }
}

/// Interpolation stencil: the 8 cell-corner nodes around a point with their
/// trilinear weights and the weight gradients with respect to the world
/// position.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
    pub d_weights: [[f64; 3]; 8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    bounds: Bounds,
    density: Vec<f32>,
    sh: Vec<f32>,
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    /// Fresh grid: uniform raw density, zero SH, everything occupied.
    pub fn new(dims: [usize; 3], bounds: Bounds, init_density: f32) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid("grid dims must all be >= 2"));
        }
        if !init_density.is_finite() {
            return Err(Error::invalid("initial density must be finite"));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(VoxelGrid {
            dims,
            bounds,
            density: vec![init_density; n],
            sh: vec![0.0; n * SH_PER_NODE],
            occupancy: vec![true; n],
        })
    }

    /// Rebuild from raw arrays (checkpoint load); validates shapes and
    /// finiteness.
    pub fn from_parts(
        dims: [usize; 3],
        bounds: Bounds,
        density: Vec<f32>,
        sh: Vec<f32>,
        occupancy: Vec<bool>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid("grid dims must all be >= 2"));
        }
        let n = dims[0] * dims[1] * dims[2];
        if density.len() != n || sh.len() != n * SH_PER_NODE || occupancy.len() != n {
            return Err(Error::invalid("grid array lengths do not match dims"));
        }
        if !density.iter().all(|v| v.is_finite()) || !sh.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("grid arrays contain non-finite values"));
        }
        Ok(VoxelGrid { dims, bounds, density, sh, occupancy })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn node_count(&self) -> usize {
        self.density.len()
    }

    /// Total learnable scalars: nodes * (1 density + 27 SH).
    pub fn param_count(&self) -> usize {
        self.node_count() * PARAMS_PER_NODE
    }

    /// Model bytes at 4 bytes per parameter scalar.
    pub fn param_bytes(&self) -> usize {
        self.param_count() * 4
    }

    pub fn density(&self) -> &[f32] {
        &self.density
    }

    pub fn density_mut(&mut self) -> &mut [f32] {
        &mut self.density
    }

    pub fn sh(&self) -> &[f32] {
        &self.sh
    }

    pub fn sh_mut(&mut self) -> &mut [f32] {
        &mut self.sh
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let s = self.bounds.span();
        Vector3::new(
            self.bounds.min[0] + s[0] * i as f64 / (self.dims[0] - 1) as f64,
            self.bounds.min[1] + s[1] * j as f64 / (self.dims[1] - 1) as f64,
            self.bounds.min[2] + s[2] * k as f64 / (self.dims[2] - 1) as f64,
        )
    }

    /// Cell edge lengths per axis.
    pub fn cell_size(&self) -> [f64; 3] {
        let s = self.bounds.span();
        [
            s[0] / (self.dims[0] - 1) as f64,
            s[1] / (self.dims[1] - 1) as f64,
            s[2] / (self.dims[2] - 1) as f64,
        ]
    }

    /// Shortest cell edge; the metric reference for ray-march steps.
    pub fn min_cell_size(&self) -> f64 {
        let c = self.cell_size();
        c[0].min(c[1]).min(c[2])
    }

    /// Trilinear stencil for a point, or None outside the bounds.
    pub fn stencil(&self, p: &Vector3<f64>) -> Option<Stencil> {
        if !self.bounds.contains(p) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        let mut inv_cell = [0f64; 3];
        let span = self.bounds.span();
        for a in 0..3 {
            let cells = (self.dims[a] - 1) as f64;
            let u = (p[a] - self.bounds.min[a]) / span[a] * cells;
            let i = (u.floor() as usize).min(self.dims[a] - 2);
            base[a] = i;
            frac[a] = u - i as f64;
            inv_cell[a] = cells / span[a];
        }
        let mut nodes = [0usize; 8];
        let mut weights = [0f64; 8];
        let mut d_weights = [[0f64; 3]; 8];
        for c in 0..8 {
            let dx = c >> 2 & 1;
            let dy = c >> 1 & 1;
            let dz = c & 1;
            nodes[c] = self.node_index(base[0] + dx, base[1] + dy, base[2] + dz);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            weights[c] = wx * wy * wz;
            let sx = if dx == 1 { 1.0 } else { -1.0 };
            let sy = if dy == 1 { 1.0 } else { -1.0 };
            let sz = if dz == 1 { 1.0 } else { -1.0 };
            d_weights[c] = [
                sx * wy * wz * inv_cell[0],
                wx * sy * wz * inv_cell[1],
                wx * wy * sz * inv_cell[2],
            ];
        }
        Some(Stencil { nodes, weights, d_weights })
    }

    /// Raw density at a point: trilinear over the 8 surrounding nodes with
    /// pruned nodes contributing zero. Zero outside the bounds.
    pub fn sample_density(&self, p: &Vector3<f64>) -> f64 {
        match self.stencil(p) {
            Some(st) => self.density_from_stencil(&st),
            None => 0.0,
        }
    }

    pub(crate) fn density_from_stencil(&self, st: &Stencil) -> f64 {
        let mut acc = 0.0;
        for c in 0..8 {
            if self.occupancy[st.nodes[c]] {
                acc += st.weights[c] * self.density[st.nodes[c]] as f64;
            }
        }
        acc
    }

    /// True when every node of the stencil is pruned; such samples carry no
    /// density and are skipped by the ray marcher.
    pub(crate) fn stencil_fully_pruned(&self, st: &Stencil) -> bool {
        st.nodes.iter().all(|&n| !self.occupancy[n])
    }

    pub(crate) fn sh_from_stencil(&self, st: &Stencil) -> [f64; SH_PER_NODE] {
        let mut acc = [0.0; SH_PER_NODE];
        for c in 0..8 {
            let w = st.weights[c];
            let off = st.nodes[c] * SH_PER_NODE;
            let sl = &self.sh[off..off + SH_PER_NODE];
            for (a, v) in acc.iter_mut().zip(sl.iter()) {
                *a += w * *v as f64;
            }
        }
        acc
    }

    /// Raw density and the 27 interpolated SH coefficients at a point.
    /// Pruned nodes still contribute their stored SH but zero density;
    /// points outside the bounds return all zeros.
    pub fn sample(&self, p: &Vector3<f64>) -> (f64, [f64; SH_PER_NODE]) {
        match self.stencil(p) {
            Some(st) => (self.density_from_stencil(&st), self.sh_from_stencil(&st)),
            None => (0.0, [0.0; SH_PER_NODE]),
        }
    }

    /// View-dependent RGB at a point: per channel
    /// clamp(basis . sh_channel + 0.5, 0, 1).
    pub fn color_at(&self, p: &Vector3<f64>, d: &Vector3<f64>) -> Result<[f64; 3]> {
        let basis = sh_basis(d)?;
        let (_, sh) = self.sample(p);
        let mut rgb = [0.0; 3];
        for ch in 0..3 {
            let mut v = 0.5;
            for i in 0..SH_COUNT {
                v += basis[i] * sh[ch * SH_COUNT + i];
            }
            rgb[ch] = v.clamp(0.0, 1.0);
        }
        Ok(rgb)
    }

    /// New grid with dims scaled per axis; values are trilinear samples of
    /// this grid at the new node centers (stored values, ignoring occupancy,
    /// so pruned regions re-enter losslessly), and occupancy is dilated:
    /// a new node is occupied when any old node with nonzero interpolation
    /// weight is occupied.
    pub fn upsample(&self, factors: [usize; 3], max_params: Option<usize>) -> Result<VoxelGrid> {
        if factors.iter().any(|&f| f < 1) {
            return Err(Error::invalid("upsample factors must be >= 1"));
        }
        let new_dims = [
            self.dims[0] * factors[0],
            self.dims[1] * factors[1],
            self.dims[2] * factors[2],
        ];
        let new_nodes = new_dims[0] * new_dims[1] * new_dims[2];
        if let Some(budget) = max_params {
            let requested = new_nodes * PARAMS_PER_NODE;
            if requested > budget {
                return Err(Error::Capacity { requested, budget });
            }
        }

        let mut out = VoxelGrid {
            dims: new_dims,
            bounds: self.bounds,
            density: vec![0.0; new_nodes],
            sh: vec![0.0; new_nodes * SH_PER_NODE],
            occupancy: vec![false; new_nodes],
        };

        for i in 0..new_dims[0] {
            for j in 0..new_dims[1] {
                for k in 0..new_dims[2] {
                    let p = out.node_position(i, j, k);
                    // Nodes span the same bounds, so the stencil exists.
                    let st = self.stencil(&p).expect("new node inside bounds");
                    let idx = out.node_index(i, j, k);
                    let mut dens = 0.0;
                    let mut occ = false;
                    let mut sh_acc = [0.0f64; SH_PER_NODE];
                    for c in 0..8 {
                        let w = st.weights[c];
                        if w == 0.0 {
                            continue;
                        }
                        dens += w * self.density[st.nodes[c]] as f64;
                        occ |= self.occupancy[st.nodes[c]];
                        let off = st.nodes[c] * SH_PER_NODE;
                        for (a, v) in sh_acc.iter_mut().zip(&self.sh[off..off + SH_PER_NODE]) {
                            *a += w * *v as f64;
                        }
                    }
                    out.density[idx] = dens as f32;
                    out.occupancy[idx] = occ;
                    let off = idx * SH_PER_NODE;
                    for (dst, v) in out.sh[off..off + SH_PER_NODE].iter_mut().zip(sh_acc) {
                        *dst = v as f32;
                    }
                }
            }
        }
        Ok(out)
    }

    /// New occupancy mask: a node stays occupied when any node within one
    /// step (26-neighborhood, itself included) carries activated density at
    /// or above the threshold. Stored parameters are untouched.
    pub fn prune(&self, sigma_thresh: f64) -> Result<VoxelGrid> {
        if !(sigma_thresh >= 0.0) {
            return Err(Error::invalid("prune threshold must be >= 0"));
        }
        let above: Vec<bool> = self
            .density
            .iter()
            .zip(&self.occupancy)
            .map(|(&d, &occ)| occ && (d as f64).max(0.0) >= sigma_thresh)
            .collect();

        let mut out = self.clone();
        for i in 0..self.dims[0] {
            for j in 0..self.dims[1] {
                for k in 0..self.dims[2] {
                    let mut keep = false;
                    'search: for di in i.saturating_sub(1)..(i + 2).min(self.dims[0]) {
                        for dj in j.saturating_sub(1)..(j + 2).min(self.dims[1]) {
                            for dk in k.saturating_sub(1)..(k + 2).min(self.dims[2]) {
                                if above[self.node_index(di, dj, dk)] {
                                    keep = true;
                                    break 'search;
                                }
                            }
                        }
                    }
                    out.occupancy[self.node_index(i, j, k)] = keep;
                }
            }
        }
        Ok(out)
    }
}
