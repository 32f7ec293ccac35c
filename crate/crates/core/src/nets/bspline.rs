use serde::{Deserialize, Serialize};

use super::NetError;

/// Cox–de Boor basis of the given order (order 1 = piecewise constant) over
/// an arbitrary strictly increasing knot vector. Returns
/// `knots.len() - order` values. Cells are half-open except the last valid
/// one, which includes its right end so the basis sums to 1 on the whole
/// domain `[knots[order-1], knots[len-order]]`.
pub fn bspline_basis(x: f64, knots: &[f64], order: usize) -> Result<Vec<f64>, NetError> {
    if order == 0 {
        return Err(NetError::Config("spline order must be at least 1".into()));
    }
    if knots.len() <= order {
        return Err(NetError::Config(format!(
            "{} knots cannot carry an order-{order} basis",
            knots.len()
        )));
    }
    if knots
        .windows(2)
        .any(|w| w[1] <= w[0] || !w[0].is_finite() || !w[1].is_finite())
    {
        return Err(NetError::Config("knot vector must be strictly increasing".into()));
    }
    let n_basis = knots.len() - order;
    let domain_end = knots[n_basis];
    let mut b: Vec<f64> = (0..knots.len() - 1)
        .map(|i| {
            let hit = if x == domain_end {
                i + 1 == n_basis
            } else {
                knots[i] <= x && x < knots[i + 1]
            };
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for m in 2..=order {
        for i in 0..knots.len() - m {
            let left = (x - knots[i]) / (knots[i + m - 1] - knots[i]) * b[i];
            let right = (knots[i + m] - x) / (knots[i + m] - knots[i + 1]) * b[i + 1];
            b[i] = left + right;
        }
        b.pop();
    }
    Ok(b)
}

/// Uniform knot grid of `intervals` cells on `[lo, hi]`, extended by
/// `order - 1` knots on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    pub lo: f64,
    pub hi: f64,
    pub intervals: usize,
    pub order: usize,
}

impl SplineGrid {
    pub fn new(lo: f64, hi: f64, intervals: usize, order: usize) -> Result<Self, NetError> {
        if !(lo < hi) || intervals == 0 || order == 0 || order > 8 {
            return Err(NetError::Config(format!(
                "invalid spline grid [{lo}, {hi}], {intervals} cells, order {order}"
            )));
        }
        Ok(Self {
            lo,
            hi,
            intervals,
            order,
        })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    pub fn n_basis(&self) -> usize {
        self.intervals + self.order - 1
    }

    pub fn knots(&self) -> Vec<f64> {
        let h = self.step();
        let pad = self.order as isize - 1;
        (-pad..=self.intervals as isize + pad)
            .map(|i| self.lo + i as f64 * h)
            .collect()
    }

    /// Basis values and first derivatives at `x`, which is clamped into the
    /// grid. Only the `order` entries starting at the returned offset are
    /// nonzero.
    pub fn eval(&self, x: f64) -> LocalBasis {
        let k = self.order;
        let h = self.step();
        let t = ((x.clamp(self.lo, self.hi) - self.lo) / h).min(self.intervals as f64);
        let cell = (t.floor() as usize).min(self.intervals - 1);
        let u = t - cell as f64;
        // uniform-knot triangular scheme in local coordinate u ∈ [0, 1]
        let mut values = [0.0; 8];
        let mut lower = [0.0; 8];
        values[0] = 1.0;
        for m in 1..k {
            if m == k - 1 {
                lower[..m].copy_from_slice(&values[..m]);
            }
            let mut next = [0.0; 8];
            for (j, v) in values.iter().take(m).enumerate() {
                // basis j of degree m-1 contributes to j and j+1 of degree m
                let left_pos = u + (m - 1 - j) as f64;
                let w = left_pos / m as f64;
                next[j] += (1.0 - w) * v;
                next[j + 1] += w * v;
            }
            values = next;
        }
        let mut derivs = [0.0; 8];
        if k >= 2 {
            for j in 0..k {
                let a = if j >= 1 { lower[j - 1] } else { 0.0 };
                let b = if j < k - 1 { lower[j] } else { 0.0 };
                derivs[j] = (a - b) / h;
            }
        }
        LocalBasis {
            offset: cell,
            values,
            derivs,
            order: k,
        }
    }

    /// Dense basis vector at `x` (zero outside the grid).
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis()];
        if x < self.lo || x > self.hi {
            return out;
        }
        let lb = self.eval(x);
        for j in 0..self.order {
            out[lb.offset + j] = lb.values[j];
        }
        out
    }
}

/// The `order` possibly nonzero basis functions at a point.
#[derive(Debug, Clone, Copy)]
pub struct LocalBasis {
    pub offset: usize,
    pub values: [f64; 8],
    pub derivs: [f64; 8],
    pub order: usize,
}
