use crate::particles::{Bounds, StepState};
use crate::{Error, Result};

/// Occupancy grid read from rows of `.` (empty) and `#` (occupied).
/// Row 0 is the top of the picture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(Error::Config("mask has no rows".into()));
        }
        let cols = lines[0].chars().count();
        let mut cells = Vec::with_capacity(lines.len() * cols);
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::Config(format!(
                    "mask row {r} has {} cells, expected {cols}",
                    line.chars().count()
                )));
            }
            for c in line.chars() {
                match c {
                    '#' => cells.push(true),
                    '.' => cells.push(false),
                    other => return Err(Error::Config(format!("unexpected mask character '{other}' in row {r}"))),
                }
            }
        }
        Ok(Self {
            rows: lines.len(),
            cols,
            cells,
        })
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Centres of occupied cells in row-major order, mapped onto `bounds`.
    pub fn cell_centers(&self, bounds: &Bounds) -> Vec<f64> {
        let w = (bounds.hi[0] - bounds.lo[0]) / self.cols as f64;
        let h = (bounds.hi[1] - bounds.lo[1]) / self.rows as f64;
        let mut out = Vec::with_capacity(2 * self.occupied());
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.cells[r * self.cols + c] {
                    out.push(bounds.lo[0] + (c as f64 + 0.5) * w);
                    out.push(bounds.hi[1] - (r as f64 + 0.5) * h);
                }
            }
        }
        out
    }
}

/// Resting target state with one particle per occupied cell centre, thinned
/// to `n_max` evenly spaced particles when needed.
pub fn rasterize_target(mask: &Mask, bounds: &Bounds, n_max: usize, history: usize, material: u8) -> Result<StepState> {
    if bounds.dims() != 2 {
        return Err(Error::Config("mask targets are two-dimensional".into()));
    }
    let count = mask.occupied();
    if count == 0 {
        return Err(Error::Config("mask has no occupied cells".into()));
    }
    if n_max == 0 {
        return Err(Error::Config("n_max must be positive".into()));
    }
    let centers = mask.cell_centers(bounds);
    let keep: Vec<usize> = if count > n_max {
        (0..n_max).map(|i| i * count / n_max).collect()
    } else {
        (0..count).collect()
    };
    let mut positions = Vec::with_capacity(2 * keep.len());
    for i in keep {
        positions.extend_from_slice(&centers[2 * i..2 * i + 2]);
    }
    let n = positions.len() / 2;
    Ok(StepState::at_rest(2, positions, vec![material; n], history, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_is_one_centered_particle() {
        let mask = Mask::parse("...\n.#.\n...\n").unwrap();
        let s = rasterize_target(&mask, &Bounds::unit(2), 10, 3, 0).unwrap();
        assert_eq!(s.n_particles(), 1);
        assert!((s.positions[0] - 0.5).abs() < 1e-15);
        assert!((s.positions[1] - 0.5).abs() < 1e-15);
        assert!(s.window.iter().all(|f| f.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn full_mask_is_lattice() {
        let mask = Mask::parse("##\n##").unwrap();
        let s = rasterize_target(&mask, &Bounds::unit(2), 10, 1, 0).unwrap();
        assert_eq!(s.positions, vec![0.25, 0.75, 0.75, 0.75, 0.25, 0.25, 0.75, 0.25]);
    }

    #[test]
    fn empty_and_ragged_masks_rejected() {
        assert!(rasterize_target(&Mask::parse("..\n..").unwrap(), &Bounds::unit(2), 4, 1, 0).is_err());
        assert!(Mask::parse("..\n.").is_err());
        assert!(Mask::parse("x").is_err());
    }

    #[test]
    fn thinning_keeps_n_max() {
        let mask = Mask::parse("####\n####").unwrap();
        let s = rasterize_target(&mask, &Bounds::unit(2), 3, 1, 0).unwrap();
        assert_eq!(s.n_particles(), 3);
    }
}
