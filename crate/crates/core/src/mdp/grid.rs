use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::BoxRegion;

/// Uniform rectangular grid over a box, nodes numbered row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub bounds: BoxRegion,
    pub counts: Vec<usize>,
    pub spacing: Vec<f64>,
}

pub fn build_grid(bounds: &BoxRegion, counts: &[usize]) -> Result<Grid> {
    if bounds.dim() != counts.len() {
        return Err(Error::Config(format!(
            "grid box has {} axes but {} counts were given",
            bounds.dim(),
            counts.len()
        )));
    }
    for (i, (l, u)) in bounds.lower.iter().zip(&bounds.upper).enumerate() {
        if !l.is_finite() || !u.is_finite() {
            return Err(Error::Config(format!("grid axis {i} has non-finite bounds")));
        }
        if !(u > l) {
            return Err(Error::Config(format!("grid axis {i} is empty: [{l}, {u}]")));
        }
        if counts[i] < 2 {
            return Err(Error::Config(format!("grid axis {i} needs at least 2 points")));
        }
    }
    let spacing = (0..counts.len())
        .map(|i| (bounds.upper[i] - bounds.lower[i]) / (counts[i] - 1) as f64)
        .collect();
    Ok(Grid {
        bounds: bounds.clone(),
        counts: counts.to_vec(),
        spacing,
    })
}

/// Default point count per axis: spacing close to `σ_min √h / 2`, rounded to the
/// nearest odd count so the box center is a node.
pub fn default_counts(bounds: &BoxRegion, sigma_min: f64, h: f64) -> Vec<usize> {
    let target = sigma_min * h.sqrt() / 2.0;
    bounds
        .widths()
        .iter()
        .map(|w| {
            let cells = (w / target).round().max(2.0) as usize;
            let cells = if cells % 2 == 1 { cells + 1 } else { cells };
            cells + 1
        })
        .collect()
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            out[axis] = index % self.counts[axis];
            index /= self.counts[axis];
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.counts)
            .fold(0, |acc, (k, n)| acc * n + k)
    }

    #[inline]
    fn axis_coord(&self, axis: usize, k: usize) -> f64 {
        if k + 1 == self.counts[axis] {
            self.bounds.upper[axis]
        } else {
            self.bounds.lower[axis] + k as f64 * self.spacing[axis]
        }
    }

    pub fn coords_into(&self, index: usize, out: &mut [f64]) {
        let mut rem = index;
        for axis in (0..self.dim()).rev() {
            let k = rem % self.counts[axis];
            rem /= self.counts[axis];
            out[axis] = self.axis_coord(axis, k);
        }
    }

    pub fn coords(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.coords_into(index, &mut out);
        out
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.coords(i)).collect()
    }

    /// Node nearest to `x` after clipping to the box.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for axis in 0..self.dim() {
            let n = self.counts[axis];
            let v = x[axis].clamp(self.bounds.lower[axis], self.bounds.upper[axis]);
            let k = ((v - self.bounds.lower[axis]) / self.spacing[axis]).round();
            let k = (k.max(0.0) as usize).min(n - 1);
            idx = idx * n + k;
        }
        idx
    }

    /// Node on the box boundary in at least one axis.
    pub fn is_boundary(&self, index: usize) -> bool {
        self.multi_index(index)
            .iter()
            .zip(&self.counts)
            .any(|(k, n)| *k == 0 || *k + 1 == *n)
    }

    /// Cloud-in-cell weights of `x` (clipped to the box) on the `2^d` surrounding
    /// nodes. Calls `visit(node, weight)` for each nonzero weight; the weights sum
    /// to one and reproduce the clipped point as their barycenter.
    #[inline]
    pub fn deposit(&self, x: &[f64], mut visit: impl FnMut(usize, f64)) {
        let d = self.dim();
        assert!(d <= 8, "cloud-in-cell deposition supports at most 8 dimensions");
        let mut base = [0usize; 8];
        let mut frac = [0f64; 8];
        for axis in 0..d {
            let l = self.bounds.lower[axis];
            let u = self.bounds.upper[axis];
            let v = x[axis].clamp(l, u);
            let n = self.counts[axis];
            let k = (((v - l) / self.spacing[axis]).floor().max(0.0) as usize).min(n - 2);
            let left = self.axis_coord(axis, k);
            let right = self.axis_coord(axis, k + 1);
            base[axis] = k;
            frac[axis] = ((v - left) / (right - left)).clamp(0.0, 1.0);
        }
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for axis in 0..d {
                let hi = (corner >> (d - 1 - axis)) & 1 == 1;
                w *= if hi { frac[axis] } else { 1.0 - frac[axis] };
                idx = idx * self.counts[axis] + base[axis] + hi as usize;
            }
            if w > 0.0 {
                visit(idx, w);
            }
        }
    }

    /// Multilinear interpolation of nodal values at `x` (clipped to the box).
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.deposit(x, |j, w| acc += w * values[j]);
        acc
    }

    /// Nodes whose coordinates lie inside `region`.
    pub fn nodes_in(&self, region: &BoxRegion) -> Vec<usize> {
        (0..self.len()).filter(|&i| region.contains(&self.coords(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let g = build_grid(&BoxRegion::cube(1, -1.0, 1.0), &[3]).unwrap();
        assert_eq!(g.nodes(), vec![vec![-1.0], vec![0.0], vec![1.0]]);

        let g = build_grid(&BoxRegion::cube(2, 0.0, 1.0), &[2, 2]).unwrap();
        assert_eq!(
            g.nodes(),
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]
        );

        let g = build_grid(&BoxRegion::cube(1, -2.0, 2.0), &[81]).unwrap();
        assert!((g.spacing[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = BoxRegion {
            lower: vec![f64::NEG_INFINITY],
            upper: vec![1.0],
        };
        assert!(matches!(build_grid(&bad, &[3]), Err(Error::Config(_))));
        assert!(build_grid(&BoxRegion::cube(1, 0.0, 1.0), &[1]).is_err());
        assert!(build_grid(&BoxRegion::cube(1, 1.0, 1.0), &[3]).is_err());
    }

    #[test]
    fn default_counts_follow_spacing_rule() {
        // σ = 0.5, h = 0.05: target spacing 0.0559 → 143 cells, bumped to 144 → 145 nodes
        let counts = default_counts(&BoxRegion::cube(1, -4.0, 4.0), 0.5, 0.05);
        assert_eq!(counts, vec![145]);
        let g = build_grid(&BoxRegion::cube(1, -4.0, 4.0), &counts).unwrap();
        assert!(g.coords(72)[0].abs() < 1e-12);
    }

    #[test]
    fn deposit_at_edges() {
        let g = build_grid(&BoxRegion::cube(1, 0.0, 1.0), &[5]).unwrap();
        let mut got = vec![];
        g.deposit(&[1.0], |j, w| got.push((j, w)));
        assert_eq!(got, vec![(4, 1.0)]);
        got.clear();
        g.deposit(&[-3.0], |j, w| got.push((j, w)));
        assert_eq!(got, vec![(0, 1.0)]);
        got.clear();
        g.deposit(&[0.3], |j, w| got.push((j, w)));
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].0, 1);
        assert!((got[0].1 - 0.8).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn index_round_trip(n0 in 2usize..6, n1 in 2usize..6, n2 in 2usize..5, seed in 0usize..1000) {
            let g = build_grid(&BoxRegion::cube(3, -1.0, 2.0), &[n0, n1, n2]).unwrap();
            let i = seed % g.len();
            prop_assert_eq!(g.flat_index(&g.multi_index(i)), i);
            prop_assert_eq!(g.nearest_node(&g.coords(i)), i);
        }

        #[test]
        fn deposit_preserves_mean(x in -0.999f64..0.999, y in -1.999f64..1.999) {
            let g = build_grid(&BoxRegion::new(vec![-1.0, -2.0], vec![1.0, 2.0]).unwrap(), &[7, 12]).unwrap();
            let mut total = 0.0;
            let mut mean = [0.0; 2];
            g.deposit(&[x, y], |j, w| {
                let c = g.coords(j);
                total += w;
                mean[0] += w * c[0];
                mean[1] += w * c[1];
            });
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!((mean[0] - x).abs() < 1e-12);
            prop_assert!((mean[1] - y).abs() < 1e-12);
        }
    }
}
