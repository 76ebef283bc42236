//! Sparse voxel hierarchy and the per-voxel descriptors fed to the voxel stream.

use std::collections::BTreeMap;

use qtensor::Tensor;

use crate::fourier::FourierPE;
use crate::scene::Vec3;

pub type VoxelCoord = [i64; 3];

pub const LEVELS: usize = 4;

/// Extra descriptor channels ahead of the positional encoding:
/// log occupancy and mean color.
pub const BASE_CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelLevel {
    pub stride: i64,
    /// Occupied voxels in ascending coordinate order.
    pub coords: Vec<VoxelCoord>,
    /// Voxel index of every point.
    pub point_voxel: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub size: f64,
    pub levels: Vec<VoxelLevel>,
}

pub fn voxel_of(p: &Vec3, size: f64) -> VoxelCoord {
    p.map(|x| (x / size).floor() as i64)
}

/// Ancestor of a base voxel at the level with the given stride.
pub fn parent(v: VoxelCoord, stride: i64) -> VoxelCoord {
    v.map(|c| c.div_euclid(stride))
}

fn build_level(base: &[VoxelCoord], stride: i64) -> VoxelLevel {
    let mut map: BTreeMap<VoxelCoord, Vec<usize>> = BTreeMap::new();
    for (i, &v) in base.iter().enumerate() {
        map.entry(parent(v, stride)).or_default().push(i);
    }
    let mut point_voxel = vec![0; base.len()];
    let mut coords = Vec::with_capacity(map.len());
    let mut members = Vec::with_capacity(map.len());
    for (k, (c, m)) in map.into_iter().enumerate() {
        for &i in &m {
            point_voxel[i] = k;
        }
        coords.push(c);
        members.push(m);
    }
    VoxelLevel {
        stride,
        coords,
        point_voxel,
        members,
    }
}

pub fn voxelize(points: &[Vec3], size: f64) -> VoxelGrid {
    assert!(size > 0.0, "voxel size must be positive");
    let base: Vec<VoxelCoord> = points.iter().map(|p| voxel_of(p, size)).collect();
    let levels = (0..LEVELS).map(|l| build_level(&base, 1 << l)).collect();
    VoxelGrid { size, levels }
}

impl VoxelGrid {
    /// Per-voxel descriptor rows `[ln(1+count), mean rgb, PE(center)]` of one level.
    pub fn descriptors(&self, level: usize, colors: &[Vec3], pe: &FourierPE) -> Tensor {
        let lv = &self.levels[level];
        let width = BASE_CHANNELS + pe.dim();
        let cell = self.size * lv.stride as f64;
        let mut data = vec![0.0; lv.coords.len() * width];
        for ((c, m), row) in lv.coords.iter().zip(&lv.members).zip(data.chunks_exact_mut(width)) {
            row[0] = (1.0 + m.len() as f64).ln();
            for &i in m {
                for a in 0..3 {
                    row[1 + a] += colors[i][a];
                }
            }
            for a in 0..3 {
                row[1 + a] /= m.len() as f64;
            }
            let center = std::array::from_fn(|a| (c[a] as f64 + 0.5) * cell);
            pe.encode_into(&center, &mut row[BASE_CHANNELS..]);
        }
        Tensor::new(vec![lv.coords.len(), width], data).expect("sized")
    }
}
