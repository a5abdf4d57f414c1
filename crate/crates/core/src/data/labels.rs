use std::ops::Deref;

use super::grid::Grid;
use super::pores::PoreSet;
use crate::error::Result;
use crate::tensor::Real;

/// Radius of the linear label decay around each pore, in pixels.
pub const LABEL_RADIUS: f64 = 5.0;

/// Ground-truth pore intensity map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap(Grid);

impl LabelMap {
    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

impl Deref for LabelMap {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}

/// `L(i,j) = max_p (1 − d_p(i,j)/radius)` over pores with `d_p < radius`, else
/// 0, where `d_p` is the Euclidean distance from pixel `(i,j)` to pore `p`.
/// The pixel nearest each pore is set to exactly 1.
pub fn make_label_map(h: usize, w: usize, pores: &PoreSet, radius: f64) -> Result<LabelMap> {
    pores.validate(h, w)?;
    let mut grid = Grid::new(h, w, 0.0);
    let reach = radius.ceil() as isize;
    for p in pores.iter() {
        let (pr, pc) = (p.row.round() as isize, p.col.round() as isize);
        for r in (pr - reach).max(0)..=(pr + reach).min(h as isize - 1) {
            for c in (pc - reach).max(0)..=(pc + reach).min(w as isize - 1) {
                let d = (r as f64 - p.row).hypot(c as f64 - p.col);
                if d < radius {
                    let v = (1.0 - d / radius) as Real;
                    let (r, c) = (r as usize, c as usize);
                    if v > grid.get(r, c) {
                        grid.set(r, c, v);
                    }
                }
            }
        }
    }
    for p in pores.iter() {
        let (r, c) = p.pixel();
        grid.set(r.min(h - 1), c.min(w - 1), 1.0);
    }
    Ok(LabelMap(grid))
}
