//! Disjoint tiling of the floor into areas, each owning a subset of the
//! reference points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Location};
use crate::types::ReferencePoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaPartition {
    floor: Aabb,
    areas: Vec<Aabb>,
    rp_membership: Vec<usize>,
}

impl AreaPartition {
    /// Builds a partition from explicit area boxes. Each RP is assigned to the
    /// lowest-index area whose closed box contains it.
    pub fn new(floor: Aabb, areas: Vec<Aabb>, rps: &[ReferencePoint]) -> Result<Self> {
        if areas.is_empty() {
            return Err(Error::invalid("partition needs at least one area"));
        }
        for (j, a) in areas.iter().enumerate() {
            if !a.has_positive_volume() {
                return Err(Error::invalid(format!("area {j} has no volume")));
            }
        }
        for (j, a) in areas.iter().enumerate() {
            if let Some(k) = areas[j + 1..].iter().position(|b| a.interiors_overlap(b)) {
                return Err(Error::invalid(format!(
                    "areas {j} and {} overlap",
                    j + 1 + k
                )));
            }
        }
        check_rp_indices(rps)?;
        let mut partition = Self {
            floor,
            areas,
            rp_membership: Vec::with_capacity(rps.len()),
        };
        for rp in rps {
            let area = partition.locate(&rp.location).ok_or(Error::OutsideBounds {
                index: rp.index,
                location: rp.location.to_string(),
            })?;
            partition.rp_membership.push(area);
        }
        Ok(partition)
    }

    pub fn floor(&self) -> &Aabb {
        &self.floor
    }

    pub fn areas(&self) -> &[Aabb] {
        &self.areas
    }

    pub fn area(&self, j: usize) -> Option<&Aabb> {
        self.areas.get(j)
    }

    pub fn n_areas(&self) -> usize {
        self.areas.len()
    }

    pub fn n_rps(&self) -> usize {
        self.rp_membership.len()
    }

    /// Area owning RP `i`.
    pub fn membership(&self, rp: usize) -> usize {
        self.rp_membership[rp]
    }

    pub fn rp_membership(&self) -> &[usize] {
        &self.rp_membership
    }

    /// Lowest-index area containing `p`, if any.
    pub fn locate(&self, p: &Location) -> Option<usize> {
        self.areas.iter().position(|a| a.contains(p))
    }

    /// RP indices belonging to area `j`.
    pub fn rps_in(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.rp_membership
            .iter()
            .enumerate()
            .filter(move |(_, a)| **a == j)
            .map(|(i, _)| i)
    }

    /// Areas that own no reference point. Permitted, but worth reporting.
    pub fn empty_areas(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.areas.len()];
        for &a in &self.rp_membership {
            counts[a] += 1;
        }
        counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == 0)
            .map(|(j, _)| j)
            .collect()
    }
}

fn check_rp_indices(rps: &[ReferencePoint]) -> Result<()> {
    for (i, rp) in rps.iter().enumerate() {
        if rp.index != i {
            return Err(Error::invalid(format!(
                "reference points must be indexed 0..{} in order; position {i} has index {}",
                rps.len(),
                rp.index
            )));
        }
    }
    Ok(())
}

/// Splits the floor into an `n_cells_x` by `n_cells_y` grid of full-height
/// boxes. Cell `j = iy * n_cells_x + ix`, so a point on a shared face falls
/// to the lower-index cell.
pub fn make_grid_partition(
    floor: &Aabb,
    n_cells_x: usize,
    n_cells_y: usize,
    rps: &[ReferencePoint],
) -> Result<AreaPartition> {
    if n_cells_x == 0 || n_cells_y == 0 {
        return Err(Error::invalid(
            "grid partition needs at least one cell per axis",
        ));
    }
    if !floor.has_positive_volume() {
        return Err(Error::invalid("floor box has no volume"));
    }
    for rp in rps {
        if !floor.contains(&rp.location) {
            return Err(Error::OutsideBounds {
                index: rp.index,
                location: rp.location.to_string(),
            });
        }
    }
    let xs = edges(floor.min.x, floor.max.x, n_cells_x);
    let ys = edges(floor.min.y, floor.max.y, n_cells_y);
    let mut areas = Vec::with_capacity(n_cells_x * n_cells_y);
    for iy in 0..n_cells_y {
        for ix in 0..n_cells_x {
            areas.push(Aabb::new(
                Location::new(xs[ix], ys[iy], floor.min.z),
                Location::new(xs[ix + 1], ys[iy + 1], floor.max.z),
            ));
        }
    }
    AreaPartition::new(*floor, areas, rps)
}

// The last edge is pinned to `hi` so the cells tile the floor exactly.
fn edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let width = (hi - lo) / n as f64;
    let mut e: Vec<f64> = (0..n).map(|i| lo + i as f64 * width).collect();
    e.push(hi);
    e
}
