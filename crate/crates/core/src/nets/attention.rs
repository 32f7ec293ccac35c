//! Fused multi-head scaled dot-product self-attention over token blocks.

use crate::numcore::{CustomOp, Matrix, NodeId, NumError, Tape};
use crate::par;

/// Per-sample attention. `qkv` is `(batch·tokens) × 3·dim` with the query,
/// key and value projections side by side; heads split `dim` evenly.
/// Output is `(batch·tokens) × dim`.
pub struct Attention {
    tokens: usize,
    heads: usize,
    /// Softmax weights, laid out `[sample][head][query][key]`.
    probs: Vec<f64>,
}

impl Attention {
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Weight row of one query: its distribution over keys.
    pub fn weights(&self, sample: usize, head: usize, query: usize) -> &[f64] {
        let t = self.tokens;
        let start = ((sample * self.heads + head) * t + query) * t;
        &self.probs[start..start + t]
    }
}

pub fn attention(tape: &mut Tape, qkv: NodeId, tokens: usize, heads: usize) -> Result<NodeId, NumError> {
    let v = tape.value(qkv);
    let (rows, width) = v.shape();
    if tokens == 0 || rows % tokens != 0 || width % 3 != 0 || heads == 0 || (width / 3) % heads != 0 {
        return Err(NumError::Invalid(format!(
            "attention over {rows}x{width} with {tokens} tokens and {heads} heads"
        )));
    }
    let dim = width / 3;
    let dh = dim / heads;
    let batch = rows / tokens;
    let scale = 1.0 / (dh as f64).sqrt();
    let block = heads * tokens * tokens;
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = par::map_range(batch, |b| {
        let mut out = vec![0.0; tokens * dim];
        let mut probs = vec![0.0; block];
        let mut scores = vec![0.0; tokens];
        for h in 0..heads {
            for i in 0..tokens {
                let q = &v.row(b * tokens + i)[h * dh..(h + 1) * dh];
                let mut m = f64::NEG_INFINITY;
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &v.row(b * tokens + j)[dim + h * dh..dim + (h + 1) * dh];
                    *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                    m = m.max(*s);
                }
                let mut z = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - m).exp();
                    z += *s;
                }
                let p = &mut probs[(h * tokens + i) * tokens..(h * tokens + i + 1) * tokens];
                let o = &mut out[i * dim + h * dh..i * dim + (h + 1) * dh];
                for (j, (pj, s)) in p.iter_mut().zip(&scores).enumerate() {
                    *pj = s / z;
                    let val = &v.row(b * tokens + j)[2 * dim + h * dh..2 * dim + (h + 1) * dh];
                    for (oo, vv) in o.iter_mut().zip(val) {
                        *oo += *pj * vv;
                    }
                }
            }
        }
        (out, probs)
    });
    let mut data = Vec::with_capacity(rows * dim);
    let mut probs = Vec::with_capacity(batch * block);
    for (o, p) in per_sample {
        data.extend(o);
        probs.extend(p);
    }
    let value = Matrix::from_vec(rows, dim, data)?;
    if !value.is_finite() {
        return Err(NumError::NonFinite { op: "attention" });
    }
    Ok(tape.custom(&[qkv], value, Box::new(Attention { tokens, heads, probs })))
}

impl CustomOp for Attention {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, inputs: &[&Matrix], output: &Matrix, g: &Matrix, needs: &[bool]) -> Vec<Option<Matrix>> {
        if !needs[0] {
            return vec![None];
        }
        let v = inputs[0];
        let (rows, width) = v.shape();
        let dim = output.cols();
        let (tokens, heads) = (self.tokens, self.heads);
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut d = Matrix::zeros(rows, width);
        par::for_each_row(d.data_mut(), tokens * width, |b, dblock| {
            let mut dp = vec![0.0; tokens];
            for h in 0..heads {
                for i in 0..tokens {
                    let p = self.weights(b, h, i);
                    let go = &g.row(b * tokens + i)[h * dh..(h + 1) * dh];
                    // dP = dO·Vᵀ, then softmax Jacobian
                    let mut dot_pd = 0.0;
                    for j in 0..tokens {
                        let val = &v.row(b * tokens + j)[2 * dim + h * dh..2 * dim + (h + 1) * dh];
                        dp[j] = go.iter().zip(val).map(|(a, b)| a * b).sum();
                        dot_pd += dp[j] * p[j];
                    }
                    let q = &v.row(b * tokens + i)[h * dh..(h + 1) * dh];
                    for j in 0..tokens {
                        let ds = p[j] * (dp[j] - dot_pd) * scale;
                        let k = &v.row(b * tokens + j)[dim + h * dh..dim + (h + 1) * dh];
                        let (qi, kj) = (i * width + h * dh, j * width + dim + h * dh);
                        for c in 0..dh {
                            dblock[qi + c] += ds * k[c];
                            dblock[kj + c] += ds * q[c];
                        }
                        let vj = j * width + 2 * dim + h * dh;
                        for c in 0..dh {
                            dblock[vj + c] += p[j] * go[c];
                        }
                    }
                }
            }
        });
        vec![Some(d)]
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{fd_check, Rng};

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn rows_are_distributions() {
        let mut rng = Rng::new(1);
        let mut t = Tape::new();
        let x = t.constant(random(3 * 5, 3 * 16, &mut rng));
        let y = attention(&mut t, x, 5, 4).unwrap();
        let op = t.custom_op(y).unwrap().as_any().downcast_ref::<Attention>().unwrap();
        for b in 0..3 {
            for h in 0..4 {
                for q in 0..5 {
                    let w = op.weights(b, h, q);
                    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(w.iter().all(|p| *p > 0.0));
                }
            }
        }
    }

    #[test]
    fn gradient_check() {
        let mut rng = Rng::new(2);
        let pt = vec![random(2 * 3, 3 * 8, &mut rng)];
        let w: Vec<f64> = (0..2 * 3 * 8).map(|_| rng.normal()).collect();
        let rep = fd_check(
            |t, ids| {
                let y = attention(t, ids[0], 3, 2)?;
                let wc = t.constant(Matrix::from_vec(6, 8, w.clone())?);
                let p = t.mul(y, wc)?;
                Ok(t.sum(p))
            },
            &pt,
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    #[test]
    fn samples_do_not_mix() {
        let mut rng = Rng::new(3);
        let both = random(8, 12, &mut rng);
        let mut t = Tape::new();
        let x = t.constant(both.clone());
        let y = attention(&mut t, x, 4, 2).unwrap();
        let y = t.value(y).clone();
        let second = Matrix::from_vec(4, 12, both.data()[48..].to_vec()).unwrap();
        let x2 = t.constant(second);
        let y2 = attention(&mut t, x2, 4, 2).unwrap();
        let y2 = t.value(y2).clone();
        assert_eq!(&y.data()[16..], y2.data());
    }

    #[test]
    fn rejects_bad_heads() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::zeros(4, 3 * 6));
        assert!(attention(&mut t, x, 4, 4).is_err());
        assert!(attention(&mut t, x, 3, 2).is_err());
    }
}
