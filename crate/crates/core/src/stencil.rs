//! First-derivative finite-difference stencils on a uniform axis.

use serde::{Deserialize, Serialize};

/// Stencil family used by the k-space gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stencil {
    /// Five-point 4th-order central differences in the interior; 2nd-order
    /// one-sided three-point formulas on the two outermost layers.
    Fourth,
    /// Central differences of the given even order in the interior; near the
    /// edges the same number of points is used, shifted inwards, so the order
    /// is kept everywhere.
    Central(usize),
}

impl Default for Stencil {
    fn default() -> Self {
        Stencil::Fourth
    }
}

impl Stencil {
    /// Width of the edge layer on which the stencil is not centered.
    pub fn half_width(self) -> usize {
        match self {
            Stencil::Fourth => 2,
            Stencil::Central(order) => order / 2,
        }
    }

    pub fn min_points(self) -> usize {
        match self {
            Stencil::Fourth => 5,
            Stencil::Central(order) => order + 1,
        }
    }

    pub fn is_valid(self) -> bool {
        match self {
            Stencil::Fourth => true,
            Stencil::Central(order) => order >= 2 && order % 2 == 0,
        }
    }
}

/// Weights for one axis: for every index the first sample and the
/// coefficients (already divided by the spacing).
#[derive(Debug, Clone)]
pub struct AxisStencil {
    rows: Vec<(usize, Vec<f64>)>,
}

impl AxisStencil {
    pub fn new(stencil: Stencil, n: usize, spacing: f64) -> Self {
        assert!(n >= stencil.min_points(), "axis too short for stencil");
        let rows = (0..n)
            .map(|i| {
                let (start, coeffs) = match stencil {
                    Stencil::Fourth => fourth_row(i, n),
                    Stencil::Central(order) => central_row(i, n, order),
                };
                (start, coeffs.into_iter().map(|c| c / spacing).collect())
            })
            .collect();
        Self { rows }
    }

    /// First sample index and scaled coefficients used at index `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        let (start, ref c) = self.rows[i];
        (start, c.as_slice())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn fourth_row(i: usize, n: usize) -> (usize, Vec<f64>) {
    if i < 2 {
        (i, vec![-1.5, 2.0, -0.5])
    } else if i + 2 >= n {
        (i - 2, vec![0.5, -2.0, 1.5])
    } else {
        let c = 1.0 / 12.0;
        (i - 2, vec![c, -8.0 * c, 0.0, 8.0 * c, -c])
    }
}

fn central_row(i: usize, n: usize, order: usize) -> (usize, Vec<f64>) {
    let half = order / 2;
    let start = i.saturating_sub(half).min(n - 1 - order);
    let nodes: Vec<f64> = (start..=start + order).map(|j| j as f64 - i as f64).collect();
    (start, fornberg_weights(0.0, &nodes, 1))
}

/// Fornberg's recursion for finite-difference weights of the `m`-th
/// derivative at `x0` on arbitrary nodes.
pub fn fornberg_weights(x0: f64, nodes: &[f64], m: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}
