//! Kolmogorov–Arnold layer: every (input, output) edge carries a learnable
//! univariate function
//! `φ(x) = w_b·silu(x) + w_s·Σ_g c_g·B_g(x)` over a fixed uniform B-spline
//! grid, extended linearly beyond the grid ends.

use serde::{Deserialize, Serialize};

use super::bspline::SplineGrid;
use crate::numcore::{CustomOp, Matrix, NodeId, NumError, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KanMode {
    /// Output row `b·n_in + i` holds the `n_out` edge functions of input `i`
    /// (one token per input); bias is `n_in × n_out`.
    PerInput,
    /// Standard layer: output `j` sums the edges into it; bias is `1 × n_out`.
    Summed,
}

/// Parameter shapes for a KAN layer.
pub fn kan_shapes(n_in: usize, n_out: usize, grid: &SplineGrid, mode: KanMode) -> [(usize, usize); 4] {
    let bias_rows = match mode {
        KanMode::PerInput => n_in,
        KanMode::Summed => 1,
    };
    [
        (n_in, n_out),
        (n_in, n_out),
        (n_in, n_out * grid.n_basis()),
        (bias_rows, n_out),
    ]
}

struct KanOp {
    grid: SplineGrid,
    mode: KanMode,
}

/// Spline evaluation with linear extension: effective basis weights and
/// their x-derivatives.
struct Eval {
    offset: usize,
    weights: [f64; 8],
    derivs: [f64; 8],
}

fn eval_point(grid: &SplineGrid, x: f64) -> Eval {
    let lb = grid.eval(x);
    let delta = x - x.clamp(grid.lo, grid.hi);
    let mut weights = [0.0; 8];
    for g in 0..grid.order {
        weights[g] = lb.values[g] + lb.derivs[g] * delta;
    }
    Eval {
        offset: lb.offset,
        weights,
        derivs: lb.derivs,
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Applies the layer to `x` (`batch × n_in`).
pub fn kan_layer(
    tape: &mut Tape,
    grid: SplineGrid,
    mode: KanMode,
    x: NodeId,
    params: [NodeId; 4],
) -> Result<NodeId, NumError> {
    let [wb, ws, coef, bias] = params;
    let xv = tape.value(x);
    let (batch, n_in) = xv.shape();
    let n_out = tape.value(wb).cols();
    let expect = kan_shapes(n_in, n_out, &grid, mode);
    for (id, shape) in params.iter().zip(expect) {
        if tape.value(*id).shape() != shape {
            return Err(NumError::Shape {
                op: "kan",
                lhs: shape,
                rhs: tape.value(*id).shape(),
            });
        }
    }
    let nb = grid.n_basis();
    let (wbv, wsv, cv, bv) = (tape.value(wb), tape.value(ws), tape.value(coef), tape.value(bias));
    let out_rows = match mode {
        KanMode::PerInput => batch * n_in,
        KanMode::Summed => batch,
    };
    let mut out = Matrix::zeros(out_rows, n_out);
    for b in 0..batch {
        for i in 0..n_in {
            let xi = xv.get(b, i);
            let e = eval_point(&grid, xi);
            let sx = silu(xi);
            let row = match mode {
                KanMode::PerInput => b * n_in + i,
                KanMode::Summed => b,
            };
            let bias_row = match mode {
                KanMode::PerInput => bv.row(i),
                KanMode::Summed => bv.row(0),
            };
            let crow = cv.row(i);
            let (wbr, wsr) = (wbv.row(i), wsv.row(i));
            let o = out.row_mut(row);
            for j in 0..n_out {
                let c = &crow[j * nb + e.offset..j * nb + e.offset + grid.order];
                let s: f64 = c.iter().zip(&e.weights).map(|(c, w)| c * w).sum();
                o[j] += wbr[j] * sx + wsr[j] * s;
                if mode == KanMode::PerInput || i == 0 {
                    o[j] += bias_row[j];
                }
            }
        }
    }
    if !out.is_finite() {
        return Err(NumError::NonFinite { op: "kan" });
    }
    Ok(tape.custom(&[x, wb, ws, coef, bias], out, Box::new(KanOp { grid, mode })))
}

impl CustomOp for KanOp {
    fn name(&self) -> &'static str {
        "kan"
    }

    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, g: &Matrix, needs: &[bool]) -> Vec<Option<Matrix>> {
        let (xv, wbv, wsv, cv, bv) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
        let (batch, n_in) = xv.shape();
        let n_out = wbv.cols();
        let nb = self.grid.n_basis();
        let k = self.grid.order;
        let mut dx = Matrix::zeros(batch, n_in);
        let mut dwb = Matrix::zeros(n_in, n_out);
        let mut dws = Matrix::zeros(n_in, n_out);
        let mut dc = Matrix::zeros(n_in, n_out * nb);
        let mut db = Matrix::zeros(bv.rows(), n_out);
        for b in 0..batch {
            if self.mode == KanMode::Summed {
                for (d, gj) in db.row_mut(0).iter_mut().zip(g.row(b)) {
                    *d += gj;
                }
            }
            for i in 0..n_in {
                let xi = xv.get(b, i);
                let e = eval_point(&self.grid, xi);
                let sx = silu(xi);
                let sg = silu_grad(xi);
                let grow = match self.mode {
                    KanMode::PerInput => g.row(b * n_in + i),
                    KanMode::Summed => g.row(b),
                };
                if self.mode == KanMode::PerInput {
                    for (d, gj) in db.row_mut(i).iter_mut().zip(grow) {
                        *d += gj;
                    }
                }
                let crow = cv.row(i);
                let (wbr, wsr) = (wbv.row(i), wsv.row(i));
                let mut gx = 0.0;
                for j in 0..n_out {
                    let go = grow[j];
                    if go == 0.0 {
                        continue;
                    }
                    let base = j * nb + e.offset;
                    let c = &crow[base..base + k];
                    let s: f64 = c.iter().zip(&e.weights).map(|(c, w)| c * w).sum();
                    let ds: f64 = c.iter().zip(&e.derivs).map(|(c, d)| c * d).sum();
                    dwb.row_mut(i)[j] += go * sx;
                    dws.row_mut(i)[j] += go * s;
                    let dcr = &mut dc.row_mut(i)[base..base + k];
                    for (d, w) in dcr.iter_mut().zip(&e.weights) {
                        *d += go * wsr[j] * w;
                    }
                    gx += go * (wbr[j] * sg + wsr[j] * ds);
                }
                dx.set(b, i, gx);
            }
        }
        [dx, dwb, dws, dc, db]
            .into_iter()
            .zip(needs)
            .map(|(m, n)| n.then_some(m))
            .collect()
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}
