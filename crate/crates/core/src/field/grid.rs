use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Boundary condition on one side of the bounding rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SideBc {
    Dirichlet(f64),
    NoFlow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub left: SideBc,
    pub right: SideBc,
    pub top: SideBc,
    pub bottom: SideBc,
}

impl Default for BoundarySpec {
    /// Unit head drop from left to right, no-flow top and bottom.
    fn default() -> Self {
        Self {
            left: SideBc::Dirichlet(1.0),
            right: SideBc::Dirichlet(0.0),
            top: SideBc::NoFlow,
            bottom: SideBc::NoFlow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

/// Cartesian grid with an activity mask. Row 0 is the top row, column 0 the
/// left column. Boundary conditions act on the faces of the bounding
/// rectangle; faces against inactive cells are no-flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGrid {
    height: usize,
    width: usize,
    cell_size: f64,
    active_mask: Vec<bool>,
    active_index: Vec<usize>,
    cell_of: Vec<Option<usize>>,
    bc: BoundarySpec,
}

impl FlowGrid {
    pub fn rectangle(height: usize, width: usize, cell_size: f64, bc: BoundarySpec) -> Result<Self> {
        Self::with_mask(height, width, cell_size, vec![true; height * width], bc)
    }

    /// Builds a grid from a row-major `height x width` mask. The active cells
    /// must form a single 4-connected component.
    pub fn with_mask(
        height: usize,
        width: usize,
        cell_size: f64,
        active_mask: Vec<bool>,
        bc: BoundarySpec,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config("grid must have at least one row and column".into()));
        }
        if active_mask.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask has {} entries, grid is {height}x{width}",
                active_mask.len()
            )));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::Config(format!("cell_size must be positive, got {cell_size}")));
        }
        let active_index: Vec<usize> = (0..height * width).filter(|&p| active_mask[p]).collect();
        if active_index.is_empty() {
            return Err(Error::Config("mask has no active cells".into()));
        }
        let mut cell_of = vec![None; height * width];
        for (i, &p) in active_index.iter().enumerate() {
            cell_of[p] = Some(i);
        }
        let grid = Self {
            height,
            width,
            cell_size,
            active_mask,
            active_index,
            cell_of,
            bc,
        };
        if grid.component_size(0) != grid.n_active() {
            return Err(Error::Config("active cells are not a single connected component".into()));
        }
        Ok(grid)
    }

    /// Rectangle with a random rectangular bite removed from each corner.
    /// Bite extents are drawn uniformly in `0..=floor(fraction * side)`.
    pub fn with_corner_bites(
        height: usize,
        width: usize,
        cell_size: f64,
        bite_fraction: f64,
        seed: u64,
        bc: BoundarySpec,
    ) -> Result<Self> {
        if !(0.0..0.5).contains(&bite_fraction) {
            return Err(Error::Config(format!("bite_fraction must lie in [0, 0.5), got {bite_fraction}")));
        }
        let mut rng = rng::substream(seed, "mask", 0);
        let max_h = (bite_fraction * height as f64).floor() as usize;
        let max_w = (bite_fraction * width as f64).floor() as usize;
        let mut mask = vec![true; height * width];
        for corner in 0..4 {
            let bh = rng.random_range(0..=max_h);
            let bw = rng.random_range(0..=max_w);
            for di in 0..bh {
                for dj in 0..bw {
                    let i = if corner < 2 { di } else { height - 1 - di };
                    let j = if corner % 2 == 0 { dj } else { width - 1 - dj };
                    mask[i * width + j] = false;
                }
            }
        }
        Self::with_mask(height, width, cell_size, mask, bc)
    }

    /// Lens-shaped region with exactly `n_active` cells: keeps the cells
    /// with the smallest `|v| + |u| / 2` in normalized coordinates
    /// (`v` vertical, `u` horizontal), ties broken by position. The lens
    /// reaches the left and right edges once it is wide enough.
    pub fn with_active_count(
        height: usize,
        width: usize,
        cell_size: f64,
        n_active: usize,
        bc: BoundarySpec,
    ) -> Result<Self> {
        let total = height * width;
        if n_active == 0 || n_active > total {
            return Err(Error::Config(format!("cannot keep {n_active} of {total} cells")));
        }
        let score = |p: usize| {
            let v = 2.0 * ((p / width) as f64 + 0.5) / height as f64 - 1.0;
            let u = 2.0 * ((p % width) as f64 + 0.5) / width as f64 - 1.0;
            v.abs() + 0.5 * u.abs()
        };
        let mut order: Vec<usize> = (0..total).collect();
        order.sort_by(|&a, &b| score(a).total_cmp(&score(b)).then(a.cmp(&b)));
        let mut mask = vec![false; total];
        order[..n_active].iter().for_each(|&p| mask[p] = true);
        Self::with_mask(height, width, cell_size, mask, bc)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn bc(&self) -> &BoundarySpec {
        &self.bc
    }

    pub fn n_active(&self) -> usize {
        self.active_index.len()
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active_mask
    }

    /// Row-major flat positions of the active cells, in cell order.
    pub fn active_index(&self) -> &[usize] {
        &self.active_index
    }

    /// Active cell index at `(row, col)`, if active.
    pub fn cell_at(&self, row: usize, col: usize) -> Option<usize> {
        if row < self.height && col < self.width {
            self.cell_of[row * self.width + col]
        } else {
            None
        }
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        let p = self.active_index[cell];
        (p / self.width, p % self.width)
    }

    /// Physical coordinates `(x, y)` of a cell center.
    pub fn center(&self, cell: usize) -> (f64, f64) {
        let (i, j) = self.row_col(cell);
        ((j as f64 + 0.5) * self.cell_size, (i as f64 + 0.5) * self.cell_size)
    }

    /// Active neighbours of `cell` across interior faces.
    pub fn neighbors(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.row_col(cell);
        let cand = [
            (i.wrapping_sub(1), j),
            (i + 1, j),
            (i, j.wrapping_sub(1)),
            (i, j + 1),
        ];
        cand.into_iter().filter_map(move |(r, c)| self.cell_at(r, c))
    }

    /// Rectangle sides the cell touches, with their boundary conditions.
    pub fn boundary_faces(&self, cell: usize) -> impl Iterator<Item = (Side, SideBc)> + '_ {
        let (i, j) = self.row_col(cell);
        let faces = [
            (j == 0, Side::Left, self.bc.left),
            (j + 1 == self.width, Side::Right, self.bc.right),
            (i == 0, Side::Top, self.bc.top),
            (i + 1 == self.height, Side::Bottom, self.bc.bottom),
        ];
        faces.into_iter().filter(|f| f.0).map(|f| (f.1, f.2))
    }

    /// True when the cell has at least one Dirichlet face.
    pub fn is_dirichlet_cell(&self, cell: usize) -> bool {
        self.boundary_faces(cell).any(|(_, bc)| matches!(bc, SideBc::Dirichlet(_)))
    }

    pub fn dirichlet_cells(&self) -> Vec<usize> {
        (0..self.n_active()).filter(|&c| self.is_dirichlet_cell(c)).collect()
    }

    /// Range of the Dirichlet values in use, if any.
    pub fn dirichlet_range(&self) -> Option<(f64, f64)> {
        let vals: Vec<f64> = (0..self.n_active())
            .flat_map(|c| self.boundary_faces(c))
            .filter_map(|(_, bc)| match bc {
                SideBc::Dirichlet(v) => Some(v),
                SideBc::NoFlow => None,
            })
            .collect();
        if vals.is_empty() {
            return None;
        }
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }

    /// Fails unless at least two cells carry a Dirichlet face.
    pub fn check_well_posed(&self) -> Result<()> {
        let n = self.dirichlet_cells().len();
        if n < 2 {
            return Err(Error::WellPosedness(format!(
                "need at least two Dirichlet cells, found {n}; all-no-flow boundaries leave heads undetermined"
            )));
        }
        Ok(())
    }

    fn component_size(&self, start: usize) -> usize {
        let mut seen = vec![false; self.n_active()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 0;
        while let Some(c) = queue.pop_front() {
            count += 1;
            for nb in self.neighbors(c) {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        count
    }
}
