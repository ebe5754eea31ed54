//! 8-connected regions of super-threshold heatmap cells.

use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// `(row, col)` cells in row-major order.
    pub cells: Vec<(usize, usize)>,
    pub max_prob: f64,
    pub mean_prob: f64,
    pub area: usize,
    pub major_axis_len: f64,
}

impl Region {
    pub fn first_cell(&self) -> (usize, usize) {
        self.cells[0]
    }

    /// Cell holding the highest probability; the first in row-major order on ties.
    pub fn peak_cell(&self, grid: &Array2<f32>) -> (usize, usize) {
        let mut best = self.cells[0];
        for &c in &self.cells[1..] {
            if grid[c] > grid[best] {
                best = c;
            }
        }
        best
    }
}

/// Length of the major axis of the ellipse with the same second moments as
/// the cells: `4 * sqrt(lambda_max)` of the population covariance of cell
/// coordinates. A single cell has length 0.
pub fn major_axis(cells: &[(usize, usize)]) -> f64 {
    if cells.len() < 2 {
        return 0.0;
    }
    let n = cells.len() as f64;
    let mr = cells.iter().map(|c| c.0 as f64).sum::<f64>() / n;
    let mc = cells.iter().map(|c| c.1 as f64).sum::<f64>() / n;
    let (mut srr, mut scc, mut src) = (0.0, 0.0, 0.0);
    for &(r, c) in cells {
        let dr = r as f64 - mr;
        let dc = c as f64 - mc;
        srr += dr * dr;
        scc += dc * dc;
        src += dr * dc;
    }
    let (a, c, b) = (srr / n, scc / n, src / n);
    let half_diff = (a - c) / 2.0;
    let lambda = (a + c) / 2.0 + (half_diff * half_diff + b * b).sqrt();
    4.0 * lambda.max(0.0).sqrt()
}

/// Labels every 8-connected component of `{cell : value >= t}`. Regions are
/// returned in row-major order of their first cell.
pub fn label_regions(grid: &Array2<f32>, t: f64) -> Vec<Region> {
    let (rows, cols) = grid.dim();
    let above = |r: usize, c: usize| grid[[r, c]] as f64 >= t;
    let mut seen = Array2::from_elem((rows, cols), false);
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for r0 in 0..rows {
        for c0 in 0..cols {
            if seen[[r0, c0]] || !above(r0, c0) {
                continue;
            }
            seen[[r0, c0]] = true;
            queue.push_back((r0, c0));
            let mut cells = Vec::new();
            while let Some((r, c)) = queue.pop_front() {
                cells.push((r, c));
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                        if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                            continue;
                        }
                        let (nr, nc) = (nr as usize, nc as usize);
                        if !seen[[nr, nc]] && above(nr, nc) {
                            seen[[nr, nc]] = true;
                            queue.push_back((nr, nc));
                        }
                    }
                }
            }
            cells.sort_unstable();
            let values: Vec<f64> = cells.iter().map(|&c| grid[c] as f64).collect();
            let max_prob = values.iter().copied().fold(f64::MIN, f64::max);
            let mean_prob = values.iter().sum::<f64>() / values.len() as f64;
            regions.push(Region {
                area: cells.len(),
                major_axis_len: major_axis(&cells),
                max_prob,
                mean_prob,
                cells,
            });
        }
    }
    regions
}
