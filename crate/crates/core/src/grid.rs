use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform 1D grid straddling the step, with a node exactly at `x = 0`.
///
/// Node `i` sits at `(i - origin) * spacing`, so `x = 0` is exact rather than
/// the result of accumulated floating-point steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    spacing: f64,
    origin: usize,
    n_points: usize,
}

impl Grid {
    /// Grid on `[x_min, x_max]` with `n_points` nodes. `-x_min` must be an
    /// integer multiple of the spacing (to relative precision `1e-9`).
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_min < 0.0 && x_max > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "domain [{x_min}, {x_max}] must straddle x = 0"
            )));
        }
        if n_points < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 points, got {n_points}")));
        }
        let spacing = (x_max - x_min) / (n_points - 1) as f64;
        let left = -x_min / spacing;
        let origin = left.round();
        if (left - origin).abs() > 1e-9 * left.max(1.0) || origin < 1.0 || origin as usize >= n_points - 1 {
            return Err(Error::InvalidGrid(format!(
                "no node at x = 0 (x_min / h = {left})"
            )));
        }
        Ok(Self { spacing, origin: origin as usize, n_points })
    }

    /// Grid with `n_left` cells on the negative side and `n_right` on the positive side.
    pub fn from_cells(spacing: f64, n_left: usize, n_right: usize) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        if n_left == 0 || n_right == 0 {
            return Err(Error::InvalidGrid("both sides of the step need at least one cell".into()));
        }
        Ok(Self { spacing, origin: n_left, n_points: n_left + n_right + 1 })
    }

    /// Grid covering at least `[x_min, x_max]` with spacing at most `max_spacing`.
    pub fn covering(x_min: f64, x_max: f64, max_spacing: f64) -> Result<Self> {
        if !(x_min < 0.0 && x_max > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "domain [{x_min}, {x_max}] must straddle x = 0"
            )));
        }
        let n_left = (-x_min / max_spacing).ceil().max(1.0) as usize;
        let n_right = (x_max / max_spacing).ceil().max(1.0) as usize;
        let spacing = (-x_min).max(x_max) / n_left.max(n_right) as f64;
        // keep both ends covered with the common spacing
        let n_left = (-x_min / spacing).ceil() as usize;
        let n_right = (x_max / spacing).ceil() as usize;
        Self::from_cells(spacing, n_left, n_right)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }
    pub fn len(&self) -> usize {
        self.n_points
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    /// Index of the node at `x = 0`.
    pub fn origin(&self) -> usize {
        self.origin
    }
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - self.origin as f64) * self.spacing
    }
    pub fn x_min(&self) -> f64 {
        self.x(0)
    }
    pub fn x_max(&self) -> f64 {
        self.x(self.n_points - 1)
    }
    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Same domain at half the spacing (`2n - 1` points); coarse node `i`
    /// maps to fine node `2i`.
    pub fn refined(&self) -> Self {
        Self {
            spacing: self.spacing / 2.0,
            origin: 2 * self.origin,
            n_points: 2 * self.n_points - 1,
        }
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let i = (x / self.spacing + self.origin as f64).round();
        i.clamp(0.0, (self.n_points - 1) as f64) as usize
    }

    /// Fractional index of `x` (unclamped).
    pub fn locate(&self, x: f64) -> f64 {
        x / self.spacing + self.origin as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_at_origin_is_exact() {
        let g = Grid::new(-3.0, 7.0, 1001).unwrap();
        assert_eq!(g.x(g.origin()), 0.0);
        assert!((g.spacing() - 0.01).abs() < 1e-15);
        assert!((g.x_max() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_grids_without_origin_node() {
        assert!(Grid::new(-1.0, 1.0, 4).is_err());
        assert!(Grid::new(0.0, 1.0, 11).is_err());
        assert!(Grid::new(-1.0, 1.0, 2).is_err());
    }

    #[test]
    fn refinement_keeps_coarse_nodes() {
        let g = Grid::from_cells(0.1, 20, 30).unwrap();
        let f = g.refined();
        for i in 0..g.len() {
            assert!((g.x(i) - f.x(2 * i)).abs() < 1e-12);
        }
        assert_eq!(f.x(f.origin()), 0.0);
    }

    #[test]
    fn covering_reaches_both_ends() {
        let g = Grid::covering(-5.3, 12.1, 0.07).unwrap();
        assert!(g.x_min() <= -5.3 + 1e-12 && g.x_max() >= 12.1 - 1e-12);
        assert!(g.spacing() <= 0.07);
    }
}
