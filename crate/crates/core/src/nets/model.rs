use serde::{Deserialize, Serialize};

use super::attention::attention;
use super::bspline::SplineGrid;
use super::kan::{kan_layer, kan_shapes, KanMode};
use super::params::ParamStore;
use super::NetError;
use crate::dataset::{Feature, FeatureEncoder, FeatureMask, FeatureVector, Scaler};
use crate::numcore::{Matrix, NodeId, Rng, Tape};

/// Rows per forward pass at inference time.
const PREDICT_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    /// Linear/logistic regression with one-hot categoricals.
    Linear,
    Mlp,
    TabTransformer,
    TabKanet,
}

impl NetKind {
    pub fn name(self) -> &'static str {
        match self {
            NetKind::Linear => "linear",
            NetKind::Mlp => "mlp",
            NetKind::TabTransformer => "tab_transformer",
            NetKind::TabKanet => "tab_kanet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Two logits.
    Classification,
    /// One standardized value.
    Regression,
}

impl HeadKind {
    pub fn width(self) -> usize {
        match self {
            HeadKind::Classification => 2,
            HeadKind::Regression => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_mult: usize,
    pub head_hidden: usize,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub cat_dim: usize,
    pub kan_intervals: usize,
    pub kan_order: usize,
    /// KAN grid covers `[-kan_range, kan_range]` in standardized units.
    pub kan_range: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 8,
            layers: 3,
            ffn_mult: 4,
            head_hidden: 64,
            mlp_hidden: 64,
            mlp_layers: 2,
            cat_dim: 8,
            kan_intervals: 8,
            kan_order: 3,
            kan_range: 3.0,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(NetError::Config(format!(
                "{} heads do not divide embedding width {}",
                self.heads, self.dim
            )));
        }
        if self.ffn_mult == 0 || self.head_hidden == 0 || self.mlp_hidden == 0 || self.cat_dim == 0 {
            return Err(NetError::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.grid().map(|_| ())
    }

    pub fn grid(&self) -> Result<SplineGrid, NetError> {
        SplineGrid::new(-self.kan_range, self.kan_range, self.kan_intervals, self.kan_order)
    }
}

/// Input arrangement: standardized numerics, then categorical codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_numeric: usize,
    pub cat_vocab: Vec<usize>,
}

impl Layout {
    pub fn from_encoder(enc: &FeatureEncoder, mask: FeatureMask) -> Self {
        Self {
            n_numeric: mask.numeric().len(),
            cat_vocab: mask.categorical().iter().map(|f| enc.vocab_size(*f)).collect(),
        }
    }

    pub fn n_tokens(&self, kind: NetKind) -> usize {
        match kind {
            NetKind::TabKanet => self.n_numeric + self.cat_vocab.len(),
            NetKind::TabTransformer => self.cat_vocab.len(),
            _ => 0,
        }
    }
}

/// Encoded minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `rows × n_numeric`, standardized.
    pub numeric: Matrix,
    /// One code list per categorical input.
    pub categorical: Vec<Vec<usize>>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.numeric.rows()
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        let mut numeric = Matrix::zeros(rows.len(), self.numeric.cols());
        for (i, &r) in rows.iter().enumerate() {
            numeric.row_mut(i).copy_from_slice(self.numeric.row(r));
        }
        Batch {
            numeric,
            categorical: self
                .categorical
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }
}

pub enum Mode<'a> {
    Eval,
    /// Training pass; the stream drives dropout.
    Train(&'a mut Rng),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetModel {
    pub kind: NetKind,
    pub config: NetConfig,
    pub layout: Layout,
    pub head: HeadKind,
    pub mask: FeatureMask,
    pub scaler: Scaler,
    /// Regression outputs are `z·target_std + target_mean`.
    pub target_mean: f64,
    pub target_std: f64,
    pub params: ParamStore,
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.uniform_in(-bound, bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    uniform(rows, cols, (6.0 / (rows + cols) as f64).sqrt(), rng)
}

fn he(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    uniform(rows, cols, (6.0 / rows.max(1) as f64).sqrt(), rng)
}

fn normal(rows: usize, cols: usize, sd: f64, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| sd * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

struct Init<'a> {
    store: ParamStore,
    rng: &'a mut Rng,
}

impl Init<'_> {
    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize, relu: bool) {
        let w = if relu {
            he(fan_in, fan_out, self.rng)
        } else {
            glorot(fan_in, fan_out, self.rng)
        };
        self.store.add(format!("{name}.w"), w);
        self.store.add(format!("{name}.b"), Matrix::zeros(1, fan_out));
    }

    fn norm(&mut self, name: &str, width: usize) {
        self.store.add(format!("{name}.g"), Matrix::filled(1, width, 1.0));
        self.store.add(format!("{name}.b"), Matrix::zeros(1, width));
    }
}

impl NetModel {
    pub fn new(kind: NetKind, layout: Layout, head: HeadKind, config: NetConfig) -> Result<Self, NetError> {
        config.validate()?;
        if layout.n_numeric + layout.cat_vocab.len() == 0 {
            return Err(NetError::Config("model has no inputs".into()));
        }
        if layout.cat_vocab.contains(&0) {
            return Err(NetError::Config("categorical vocabulary is empty".into()));
        }
        if layout.n_numeric > Feature::NUMERIC.len() || layout.cat_vocab.len() > Feature::CATEGORICAL.len() {
            return Err(NetError::Config("layout exceeds the nine feature slots".into()));
        }
        let mut rng = Rng::new(config.seed);
        let mut init = Init {
            store: ParamStore::default(),
            rng: &mut rng,
        };
        let out = head.width();
        let d = config.dim;
        match kind {
            NetKind::Linear => {
                if layout.n_numeric > 0 {
                    init.dense("lin", layout.n_numeric, out, false);
                } else {
                    init.store.add("lin.b", Matrix::zeros(1, out));
                }
                for (c, v) in layout.cat_vocab.iter().enumerate() {
                    init.store.add(format!("lin.emb{c}"), Matrix::zeros(*v, out));
                }
            }
            NetKind::Mlp => {
                for (c, v) in layout.cat_vocab.iter().enumerate() {
                    let e = normal(*v, config.cat_dim, 1.0, init.rng);
                    init.store.add(format!("mlp.emb{c}"), e);
                }
                let mut width = layout.n_numeric + layout.cat_vocab.len() * config.cat_dim;
                for l in 0..config.mlp_layers {
                    init.dense(&format!("mlp.l{l}"), width, config.mlp_hidden, true);
                    width = config.mlp_hidden;
                }
                init.dense("mlp.out", width, out, false);
            }
            NetKind::TabTransformer | NetKind::TabKanet => {
                let tokens = layout.n_tokens(kind);
                if kind == NetKind::TabKanet && layout.n_numeric > 0 {
                    let grid = config.grid()?;
                    let [wb, ws, coef, bias] = kan_shapes(layout.n_numeric, d, &grid, KanMode::PerInput);
                    let wbm = uniform(wb.0, wb.1, 1.0, init.rng);
                    init.store.add("kan.wb", wbm);
                    init.store.add("kan.ws", Matrix::filled(ws.0, ws.1, 1.0));
                    let cm = normal(coef.0, coef.1, 0.1, init.rng);
                    init.store.add("kan.coef", cm);
                    let bm = normal(bias.0, bias.1, 1.0, init.rng);
                    init.store.add("kan.bias", bm);
                }
                for (c, v) in layout.cat_vocab.iter().enumerate() {
                    let e = normal(*v, d, 1.0, init.rng);
                    init.store.add(format!("emb{c}"), e);
                }
                if kind == NetKind::TabTransformer && layout.n_numeric > 0 {
                    init.norm("num_ln", layout.n_numeric);
                }
                if tokens > 0 {
                    for l in 0..config.layers {
                        let p = format!("blk{l}");
                        init.norm(&format!("{p}.ln1"), d);
                        init.dense(&format!("{p}.qkv"), d, 3 * d, false);
                        init.dense(&format!("{p}.proj"), d, d, false);
                        init.norm(&format!("{p}.ln2"), d);
                        init.dense(&format!("{p}.ff1"), d, config.ffn_mult * d, false);
                        init.dense(&format!("{p}.ff2"), config.ffn_mult * d, d, false);
                    }
                    init.norm("final_ln", d);
                }
                let mut width = tokens * d;
                if kind == NetKind::TabTransformer {
                    width += layout.n_numeric;
                }
                init.dense("head.h", width, config.head_hidden, true);
                init.dense("head.out", config.head_hidden, out, false);
            }
        }
        let params = init.store;
        log::info!(
            "{} model: {} parameter tensors, {} scalars",
            kind.name(),
            params.len(),
            params.n_scalars()
        );
        let n_num = layout.n_numeric;
        Ok(Self {
            kind,
            config,
            layout,
            head,
            mask: FeatureMask::full(),
            scaler: Scaler::identity(),
            target_mean: 0.0,
            target_std: 1.0,
            params,
        }
        .with_default_mask(n_num))
    }

    /// Model for vectors produced by `enc` under `mask`.
    pub fn for_encoder(
        kind: NetKind,
        enc: &FeatureEncoder,
        mask: FeatureMask,
        head: HeadKind,
        config: NetConfig,
    ) -> Result<Self, NetError> {
        let mut m = Self::new(kind, Layout::from_encoder(enc, mask), head, config)?;
        m.mask = mask;
        m.scaler = enc.scaler.clone();
        Ok(m)
    }

    fn with_default_mask(mut self, n_numeric: usize) -> Self {
        // first n numeric features plus the categoricals present
        let mut mask = FeatureMask::empty();
        for f in Feature::NUMERIC.iter().take(n_numeric) {
            mask = mask.with(*f);
        }
        for f in Feature::CATEGORICAL.iter().take(self.layout.cat_vocab.len()) {
            mask = mask.with(*f);
        }
        self.mask = mask;
        self
    }

    pub fn n_parameters(&self) -> usize {
        self.params.n_scalars()
    }

    /// Standardized numerics and codes for the masked-in features.
    pub fn batch(&self, vectors: &[FeatureVector]) -> Result<Batch, NetError> {
        let numeric_features = self.mask.numeric();
        let cat_features = self.mask.categorical();
        let mut numeric = Matrix::zeros(vectors.len(), numeric_features.len());
        let mut categorical = vec![Vec::with_capacity(vectors.len()); cat_features.len()];
        for (r, v) in vectors.iter().enumerate() {
            if !self.mask.is_subset_of(v.mask) {
                return Err(NetError::Shape(format!(
                    "vector carries features `{}` but the model needs `{}`",
                    v.mask, self.mask
                )));
            }
            for (j, f) in numeric_features.iter().enumerate() {
                numeric.set(r, j, self.scaler.apply(f.group_index(), v.get(*f)));
            }
            for (j, f) in cat_features.iter().enumerate() {
                let code = v.get(*f);
                let vocab = self.layout.cat_vocab[j];
                if code < 0.0 || code.fract() != 0.0 || code as usize >= vocab {
                    return Err(NetError::Shape(format!(
                        "{} code {code} outside vocabulary of {vocab}",
                        f.name()
                    )));
                }
                categorical[j].push(code as usize);
            }
        }
        Ok(Batch { numeric, categorical })
    }

    fn check_batch(&self, b: &Batch) -> Result<(), NetError> {
        if b.numeric.cols() != self.layout.n_numeric || b.categorical.len() != self.layout.cat_vocab.len() {
            return Err(NetError::Shape(format!(
                "batch has {} numeric and {} categorical inputs; model expects {} and {}",
                b.numeric.cols(),
                b.categorical.len(),
                self.layout.n_numeric,
                self.layout.cat_vocab.len()
            )));
        }
        for (codes, vocab) in b.categorical.iter().zip(&self.layout.cat_vocab) {
            if codes.len() != b.rows() {
                return Err(NetError::Shape("categorical column length differs from batch".into()));
            }
            if let Some(bad) = codes.iter().find(|c| **c >= *vocab) {
                return Err(NetError::Shape(format!("code {bad} outside vocabulary of {vocab}")));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape` with parameters bound at `ids`
    /// (from [`ParamStore::bind`]); returns `rows × head width`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ids: &[NodeId],
        batch: &Batch,
        mut mode: Mode<'_>,
    ) -> Result<NodeId, NetError> {
        self.check_batch(batch)?;
        let p = |name: &str| -> NodeId { ids[self.params.index(name).unwrap_or_else(|| panic!("parameter {name}"))] };
        let rows = batch.rows();
        if !batch.numeric.is_finite() {
            return Err(NetError::NumericFault { layer: "input".into() });
        }
        let x = tape.constant(batch.numeric.clone());
        let out = match self.kind {
            NetKind::Linear => {
                let mut acc = if self.layout.n_numeric > 0 {
                    tape.linear(x, p("lin.w"), p("lin.b"))?
                } else {
                    let zeros = tape.constant(Matrix::zeros(rows, self.head.width()));
                    tape.add_row(zeros, p("lin.b"))?
                };
                for (c, codes) in batch.categorical.iter().enumerate() {
                    let e = tape.embedding(p(&format!("lin.emb{c}")), codes)?;
                    acc = tape.add(acc, e)?;
                }
                acc
            }
            NetKind::Mlp => {
                let mut parts = Vec::new();
                if self.layout.n_numeric > 0 {
                    parts.push(x);
                }
                for (c, codes) in batch.categorical.iter().enumerate() {
                    parts.push(tape.embedding(p(&format!("mlp.emb{c}")), codes)?);
                }
                let mut h = tape.concat_cols(&parts)?;
                for l in 0..self.config.mlp_layers {
                    let z = tape.linear(h, p(&format!("mlp.l{l}.w")), p(&format!("mlp.l{l}.b")))?;
                    h = tape.relu(z);
                    h = self.dropout(tape, h, &mut mode)?;
                    self.check(tape, h, &format!("mlp.l{l}"))?;
                }
                tape.linear(h, p("mlp.out.w"), p("mlp.out.b"))?
            }
            NetKind::TabTransformer | NetKind::TabKanet => {
                let tokens = self.layout.n_tokens(self.kind);
                let d = self.config.dim;
                let mut flat_parts = Vec::new();
                if self.kind == NetKind::TabKanet && self.layout.n_numeric > 0 {
                    let grid = self.config.grid()?;
                    let k = kan_layer(
                        tape,
                        grid,
                        KanMode::PerInput,
                        x,
                        [p("kan.wb"), p("kan.ws"), p("kan.coef"), p("kan.bias")],
                    )?;
                    self.check(tape, k, "kan")?;
                    flat_parts.push(tape.reshape(k, rows, self.layout.n_numeric * d)?);
                }
                for (c, codes) in batch.categorical.iter().enumerate() {
                    flat_parts.push(tape.embedding(p(&format!("emb{c}")), codes)?);
                }
                let mut head_parts = Vec::new();
                if tokens > 0 {
                    let flat = tape.concat_cols(&flat_parts)?;
                    let mut h = tape.reshape(flat, rows * tokens, d)?;
                    for l in 0..self.config.layers {
                        h = self.block(tape, &p, h, tokens, l, &mut mode)?;
                    }
                    let h = tape.layer_norm(h, p("final_ln.g"), p("final_ln.b"))?;
                    head_parts.push(tape.reshape(h, rows, tokens * d)?);
                }
                if self.kind == NetKind::TabTransformer && self.layout.n_numeric > 0 {
                    head_parts.push(tape.layer_norm(x, p("num_ln.g"), p("num_ln.b"))?);
                }
                let z = tape.concat_cols(&head_parts)?;
                let z = tape.linear(z, p("head.h.w"), p("head.h.b"))?;
                let z = tape.relu(z);
                self.check(tape, z, "head.h")?;
                tape.linear(z, p("head.out.w"), p("head.out.b"))?
            }
        };
        self.check(tape, out, "output")?;
        Ok(out)
    }

    fn block(
        &self,
        tape: &mut Tape,
        p: &dyn Fn(&str) -> NodeId,
        x: NodeId,
        tokens: usize,
        l: usize,
        mode: &mut Mode<'_>,
    ) -> Result<NodeId, NetError> {
        let n = |s: &str| p(&format!("blk{l}.{s}"));
        let h = tape.layer_norm(x, n("ln1.g"), n("ln1.b"))?;
        let qkv = tape.linear(h, n("qkv.w"), n("qkv.b"))?;
        let a = attention(tape, qkv, tokens, self.config.heads)?;
        let a = tape.linear(a, n("proj.w"), n("proj.b"))?;
        let a = self.dropout(tape, a, mode)?;
        let x = tape.add(x, a)?;
        self.check(tape, x, &format!("blk{l}.attention"))?;
        let h = tape.layer_norm(x, n("ln2.g"), n("ln2.b"))?;
        let f = tape.linear(h, n("ff1.w"), n("ff1.b"))?;
        let f = tape.gelu(f);
        let f = tape.linear(f, n("ff2.w"), n("ff2.b"))?;
        let f = self.dropout(tape, f, mode)?;
        let x = tape.add(x, f)?;
        self.check(tape, x, &format!("blk{l}.ffn"))?;
        Ok(x)
    }

    fn dropout(&self, tape: &mut Tape, x: NodeId, mode: &mut Mode<'_>) -> Result<NodeId, NetError> {
        let rate = self.config.dropout;
        match mode {
            Mode::Train(rng) if rate > 0.0 => {
                let (r, c) = tape.value(x).shape();
                let keep = 1.0 / (1.0 - rate);
                let data = (0..r * c)
                    .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
                    .collect();
                let m = tape.constant(Matrix::from_vec(r, c, data)?);
                Ok(tape.mul(x, m)?)
            }
            _ => Ok(x),
        }
    }

    fn check(&self, tape: &Tape, id: NodeId, layer: &str) -> Result<(), NetError> {
        if tape.value(id).is_finite() {
            Ok(())
        } else {
            Err(NetError::NumericFault { layer: layer.into() })
        }
    }

    /// Eval-mode raw outputs (logits or standardized values).
    pub fn forward_values(&self, batch: &Batch) -> Result<Matrix, NetError> {
        let mut tape = Tape::new();
        let ids = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &ids, batch, Mode::Eval)?;
        Ok(tape.value(out).clone())
    }

    /// Positive-class probability or target-scale value per row.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<f64>, NetError> {
        let n = batch.rows();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let v = self.forward_values(&batch.select(&idx))?;
            for r in 0..v.rows() {
                out.push(self.output(v.row(r)));
            }
            start = end;
        }
        Ok(out)
    }

    pub fn predict(&self, vectors: &[FeatureVector]) -> Result<Vec<f64>, NetError> {
        self.predict_batch(&self.batch(vectors)?)
    }

    fn output(&self, row: &[f64]) -> f64 {
        match self.head {
            HeadKind::Classification => 1.0 / (1.0 + (row[0] - row[1]).exp()),
            HeadKind::Regression => row[0] * self.target_std + self.target_mean,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::fd_check_with;

    fn layout() -> Layout {
        Layout {
            n_numeric: 7,
            cat_vocab: vec![2, 5],
        }
    }

    fn small() -> NetConfig {
        NetConfig {
            dim: 8,
            heads: 2,
            layers: 1,
            head_hidden: 6,
            mlp_hidden: 6,
            cat_dim: 3,
            ..NetConfig::default()
        }
    }

    fn batch(rows: usize, seed: u64) -> Batch {
        let mut rng = Rng::new(seed);
        let numeric = Matrix::from_vec(rows, 7, (0..rows * 7).map(|_| 1.5 * rng.normal()).collect()).unwrap();
        Batch {
            numeric,
            categorical: vec![
                (0..rows).map(|i| i % 2).collect(),
                (0..rows).map(|i| (i * 3) % 5).collect(),
            ],
        }
    }

    const KINDS: [NetKind; 4] = [
        NetKind::Linear,
        NetKind::Mlp,
        NetKind::TabTransformer,
        NetKind::TabKanet,
    ];

    #[test]
    fn tabkanet_token_arithmetic() {
        let m = NetModel::new(
            NetKind::TabKanet,
            layout(),
            HeadKind::Classification,
            NetConfig::default(),
        )
        .unwrap();
        assert_eq!(m.layout.n_tokens(NetKind::TabKanet), 9);
        assert_eq!(m.params.get("blk0.qkv.w").unwrap().shape(), (64, 192));
        assert_eq!(m.params.get("head.h.w").unwrap().shape(), (9 * 64, 64));
        let mut t = Tape::new();
        let ids = m.params.bind(&mut t);
        let out = m.forward(&mut t, &ids, &batch(3, 1), Mode::Eval).unwrap();
        assert_eq!(t.value(out).shape(), (3, 2));
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = NetConfig {
            heads: 7,
            ..NetConfig::default()
        };
        assert!(matches!(
            NetModel::new(NetKind::TabKanet, layout(), HeadKind::Regression, cfg),
            Err(NetError::Config(_))
        ));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        for kind in KINDS {
            let a = NetModel::new(kind, layout(), HeadKind::Regression, small()).unwrap();
            let b = NetModel::new(kind, layout(), HeadKind::Regression, small()).unwrap();
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        for kind in KINDS {
            let mut m = NetModel::new(kind, layout(), HeadKind::Classification, small()).unwrap();
            m.params.zero_all();
            let v = m.forward_values(&batch(4, 2)).unwrap();
            assert!(v.data().iter().all(|x| *x == 0.0), "{kind:?}");
        }
    }

    #[test]
    fn row_permutation_and_batch_independence() {
        for kind in KINDS {
            let m = NetModel::new(kind, layout(), HeadKind::Classification, small()).unwrap();
            let b = batch(6, 3);
            let full = m.forward_values(&b).unwrap();
            let perm = [5, 2, 0, 4, 1, 3];
            let permuted = m.forward_values(&b.select(&perm)).unwrap();
            for (i, &r) in perm.iter().enumerate() {
                assert_eq!(permuted.row(i), full.row(r), "{kind:?}");
            }
            let alone = m.forward_values(&b.select(&[4])).unwrap();
            for (a, f) in alone.row(0).iter().zip(full.row(4)) {
                assert!((a - f).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn nan_input_names_layer() {
        let m = NetModel::new(NetKind::Mlp, layout(), HeadKind::Classification, small()).unwrap();
        let mut b = batch(2, 4);
        b.numeric.set(0, 0, f64::NAN);
        assert!(matches!(m.forward_values(&b), Err(NetError::NumericFault { .. })));
    }

    #[test]
    fn shape_checks() {
        let m = NetModel::new(NetKind::Mlp, layout(), HeadKind::Classification, small()).unwrap();
        let mut b = batch(2, 4);
        b.categorical[1][0] = 9;
        assert!(matches!(m.forward_values(&b), Err(NetError::Shape(_))));
        b.categorical.pop();
        assert!(matches!(m.forward_values(&b), Err(NetError::Shape(_))));
    }

    fn loss_fd(kind: NetKind, head: HeadKind, sample: usize) -> crate::numcore::FdReport {
        let m = NetModel::new(kind, layout(), head, small()).unwrap();
        let b = batch(3, 5);
        let point: Vec<Matrix> = m.params.params.iter().map(|p| p.value.clone()).collect();
        fd_check_with(
            |t, ids| {
                let out = m.forward(t, ids, &b, Mode::Eval).map_err(|e| match e {
                    NetError::Num(n) => n,
                    other => crate::numcore::NumError::Invalid(other.to_string()),
                })?;
                match head {
                    HeadKind::Classification => t.softmax_cross_entropy(out, &[0, 1, 1]),
                    HeadKind::Regression => t.mse(out, &[0.5, -1.0, 2.0]),
                }
            },
            &point,
            1e-6,
            Some((sample, 11)),
        )
        .unwrap()
    }

    #[test]
    fn whole_model_gradients() {
        for kind in KINDS {
            for head in [HeadKind::Classification, HeadKind::Regression] {
                // deep compositions make tiny coordinates noisy, so compare
                // errors against the largest gradient in the model
                let rep = loss_fd(kind, head, 12);
                assert!(
                    rep.max_abs_error < 1e-6 * rep.max_abs_gradient.max(1e-3),
                    "{kind:?} {head:?}: {rep:?}"
                );
            }
        }
    }

    #[test]
    fn frozen_parameters_are_constants() {
        let mut m = NetModel::new(NetKind::Mlp, layout(), HeadKind::Classification, small()).unwrap();
        assert_eq!(m.params.freeze("mlp.l0"), 2);
        let mut t = Tape::new();
        let ids = m.params.bind(&mut t);
        let out = m.forward(&mut t, &ids, &batch(3, 1), Mode::Eval).unwrap();
        let loss = t.softmax_cross_entropy(out, &[0, 1, 0]).unwrap();
        let g = t.backward(loss).unwrap();
        let i = m.params.index("mlp.l0.w").unwrap();
        assert!(g.get(ids[i]).is_none());
        let j = m.params.index("mlp.l1.w").unwrap();
        assert!(g.get(ids[j]).is_some());
    }
}
