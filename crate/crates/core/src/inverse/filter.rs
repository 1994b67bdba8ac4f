//! Cone-weighted averaging of per-element fields over element centroids.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{FemError, Result};
use crate::mesh::{dist, Mesh};

/// Weights w_ij = max(0, r − |c_i − c_j|) stored per receiving element.
#[derive(Clone, Debug)]
pub struct SensitivityFilter {
    radius: f64,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl SensitivityFilter {
    pub fn new(mesh: &Mesh, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(FemError::InvalidArgument(
                "filter radius must be positive".into(),
            ));
        }
        let centroids: Vec<[f64; 3]> = (0..mesh.num_cells()).map(|c| mesh.centroid(c)).collect();
        let key = |x: &[f64; 3]| x.map(|v| (v / radius).floor() as i64);
        let mut bins: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, c) in centroids.iter().enumerate() {
            bins.entry(key(c)).or_default().push(i);
        }
        let neighbors = centroids
            .par_iter()
            .map(|ci| {
                let k = key(ci);
                let mut out = Vec::new();
                for dx in -1..=1 {
                    for dy in -1..=1 {
                        for dz in -1..=1 {
                            if let Some(list) = bins.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                                for &j in list {
                                    let w = radius - dist(ci, &centroids[j]);
                                    if w > 0.0 {
                                        out.push((j, w));
                                    }
                                }
                            }
                        }
                    }
                }
                out.sort_unstable_by_key(|e| e.0);
                out
            })
            .collect();
        Ok(Self { radius, neighbors })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Normalized weighted average Σ_j w_ij x_j / Σ_j w_ij.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.neighbors
            .par_iter()
            .map(|nb| {
                let (mut s, mut ws) = (0.0, 0.0);
                for &(j, w) in nb {
                    s += w * x[j];
                    ws += w;
                }
                s / ws
            })
            .collect()
    }

    /// Sensitivity filtering with density weighting:
    /// Σ_j w_ij θ_j dc_j / (max(θ_i, 1e-3) Σ_j w_ij).
    pub fn apply_sensitivity(&self, theta: &[f64], dc: &[f64]) -> Vec<f64> {
        self.neighbors
            .par_iter()
            .enumerate()
            .map(|(i, nb)| {
                let (mut s, mut ws) = (0.0, 0.0);
                for &(j, w) in nb {
                    s += w * theta[j] * dc[j];
                    ws += w;
                }
                s / (theta[i].max(1e-3) * ws)
            })
            .collect()
    }
}
