//! Planar workspace with rectangular obstacles.
//!
//! Collision and visibility queries work on the exact rectangle geometry. Geodesic
//! distances come from an 8-connected Dijkstra sweep over a uniform occupancy grid
//! whose cells are occupied when their center is not free.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Position = Vector2<f64>;

/// Closed axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Position) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }

    /// Liang-Barsky clip of the segment `a`-`b` against the closed rectangle.
    pub fn intersects_segment(&self, a: &Position, b: &Position) -> bool {
        let d = b - a;
        let mut t_enter = 0.0_f64;
        let mut t_exit = 1.0_f64;
        for axis in 0..2 {
            let (lo, hi) = (self.min[axis], self.max[axis]);
            let (start, delta) = (a[axis], d[axis]);
            if delta == 0.0 {
                if start < lo || start > hi {
                    return false;
                }
                continue;
            }
            let mut t0 = (lo - start) / delta;
            let mut t1 = (hi - start) / delta;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
            if t_enter > t_exit {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    width: f64,
    height: f64,
    resolution: f64,
    obstacles: Vec<Rect>,
    nx: usize,
    ny: usize,
    occupied: Vec<bool>,
}

impl Workspace {
    pub fn new(width: f64, height: f64, resolution: f64, obstacles: Vec<Rect>) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && resolution > 0.0)
            || !width.is_finite()
            || !height.is_finite()
        {
            return Err(Error::InvalidArgument(format!(
                "workspace dimensions must be positive (width {width}, height {height}, resolution {resolution})"
            )));
        }
        for (k, r) in obstacles.iter().enumerate() {
            let inside = r.min[0] >= 0.0
                && r.min[1] >= 0.0
                && r.max[0] <= width
                && r.max[1] <= height
                && r.min[0] <= r.max[0]
                && r.min[1] <= r.max[1];
            if !inside {
                return Err(Error::InvalidArgument(format!(
                    "obstacle {k} is not a valid rectangle inside the workspace"
                )));
            }
        }
        let nx = ((width / resolution).ceil() as usize).max(1);
        let ny = ((height / resolution).ceil() as usize).max(1);
        let mut ws = Self {
            width,
            height,
            resolution,
            obstacles,
            nx,
            ny,
            occupied: Vec::new(),
        };
        ws.occupied = (0..nx * ny)
            .map(|idx| !ws.is_free(&ws.cell_center(idx % nx, idx / nx)))
            .collect();
        if ws.occupied.iter().all(|&o| o) {
            return Err(Error::InvalidArgument("workspace grid has no free cell".into()));
        }
        Ok(ws)
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn obstacles(&self) -> &[Rect] {
        &self.obstacles
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn in_bounds(&self, p: &Position) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    /// Inside the bounds and outside every obstacle. Obstacle boundaries are occupied.
    pub fn is_free(&self, p: &Position) -> bool {
        self.in_bounds(p) && !self.obstacles.iter().any(|r| r.contains(p))
    }

    /// Segment visibility without endpoint checks.
    pub fn segment_clear(&self, a: &Position, b: &Position) -> bool {
        !self.obstacles.iter().any(|r| r.intersects_segment(a, b))
    }

    pub fn line_of_sight(&self, a: &Position, b: &Position) -> Result<bool> {
        if !self.is_free(a) || !self.is_free(b) {
            return Err(Error::InvalidQuery(format!(
                "line of sight endpoints must be free: ({}, {}) -> ({}, {})",
                a.x, a.y, b.x, b.y
            )));
        }
        Ok(self.segment_clear(a, b))
    }

    /// Grid cell containing `p`; points on the far boundary fall in the last cell.
    pub fn cell_of(&self, p: &Position) -> Option<(usize, usize)> {
        if !self.in_bounds(p) {
            return None;
        }
        let cx = ((p.x / self.resolution).floor() as usize).min(self.nx - 1);
        let cy = ((p.y / self.resolution).floor() as usize).min(self.ny - 1);
        Some((cx, cy))
    }

    pub fn cell_center(&self, cx: usize, cy: usize) -> Position {
        let x = ((cx as f64 + 0.5) * self.resolution).min(self.width);
        let y = ((cy as f64 + 0.5) * self.resolution).min(self.height);
        Position::new(x, y)
    }

    pub fn cell_occupied(&self, cx: usize, cy: usize) -> bool {
        self.occupied[cy * self.nx + cx]
    }

    pub fn geodesic_field(&self, source: &Position) -> Result<DistanceField> {
        if !self.is_free(source) {
            return Err(Error::InvalidQuery(format!(
                "geodesic source ({}, {}) is not free",
                source.x, source.y
            )));
        }
        let (sx, sy) = self.cell_of(source).expect("free point is in bounds");
        Ok(self.field_from_cell(sx, sy, *source))
    }

    /// Dijkstra from a grid cell. The source cell is seeded even if its center is occupied.
    pub fn field_from_cell(&self, sx: usize, sy: usize, source: Position) -> DistanceField {
        let (nx, ny) = (self.nx, self.ny);
        let mut dist = vec![f64::INFINITY; nx * ny];
        let start = sy * nx + sx;
        dist[start] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Frontier { cost: 0.0, idx: start });
        let axis = self.resolution;
        let diag = self.resolution * std::f64::consts::SQRT_2;
        while let Some(Frontier { cost, idx }) = heap.pop() {
            if cost > dist[idx] {
                continue;
            }
            let (cx, cy) = ((idx % nx) as isize, (idx / nx) as isize);
            for (dx, dy) in NEIGHBORS_8 {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= nx as isize || y >= ny as isize {
                    continue;
                }
                let (x, y) = (x as usize, y as usize);
                if self.cell_occupied(x, y) {
                    continue;
                }
                let step = if dx != 0 && dy != 0 {
                    // no corner cutting
                    if self.cell_occupied(cx as usize, y) || self.cell_occupied(x, cy as usize) {
                        continue;
                    }
                    diag
                } else {
                    axis
                };
                let next = y * nx + x;
                let candidate = cost + step;
                if candidate < dist[next] {
                    dist[next] = candidate;
                    heap.push(Frontier { cost: candidate, idx: next });
                }
            }
        }
        DistanceField {
            source,
            nx,
            ny,
            resolution: self.resolution,
            width: self.width,
            height: self.height,
            cell_distances: dist,
        }
    }
}

const NEIGHBORS_8: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

#[derive(Debug, Clone, Copy)]
struct Frontier {
    cost: f64,
    idx: usize,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // min-heap on cost, ties by index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

/// Geodesic distances from one source over the workspace grid.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub source: Position,
    nx: usize,
    ny: usize,
    resolution: f64,
    width: f64,
    height: f64,
    cell_distances: Vec<f64>,
}

impl DistanceField {
    pub fn cell_distances(&self) -> &[f64] {
        &self.cell_distances
    }

    pub fn geodesic_distance(&self, p: &Position) -> Result<f64> {
        if !(p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height) {
            return Err(Error::InvalidQuery(format!(
                "distance query ({}, {}) outside the workspace",
                p.x, p.y
            )));
        }
        let cx = ((p.x / self.resolution).floor() as usize).min(self.nx - 1);
        let cy = ((p.y / self.resolution).floor() as usize).min(self.ny - 1);
        Ok(self.cell_distances[cy * self.nx + cx])
    }

    /// Like [`geodesic_distance`](Self::geodesic_distance) but +inf outside the bounds.
    pub fn distance_or_inf(&self, p: &Position) -> f64 {
        self.geodesic_distance(p).unwrap_or(f64::INFINITY)
    }
}
