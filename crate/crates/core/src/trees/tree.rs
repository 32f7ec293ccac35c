use serde::{Deserialize, Serialize};

use super::{Table, TreeError};
use crate::numcore::Rng;
use crate::par;

/// Rows below this count search split candidates sequentially.
const PARALLEL_MIN_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Every distinct training value is a candidate threshold.
    Exact,
    /// At most this many quantile bins per numeric column.
    Histogram(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Fraction of columns drawn as split candidates at each node.
    pub feature_rate: f64,
    pub binning: Binning,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 1,
            lambda: 0.0,
            feature_rate: 1.0,
            binning: Binning::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRule {
    /// `x <= threshold` goes left.
    LessEq { threshold: f64 },
    /// Category codes in the set go left.
    InSet { categories: Vec<u32> },
}

impl SplitRule {
    pub fn goes_left(&self, x: f64) -> bool {
        match self {
            SplitRule::LessEq { threshold } => x <= *threshold,
            SplitRule::InSet { categories } => x >= 0.0 && categories.contains(&(x as u32)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
        gain: f64,
    },
}

/// Node arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub n_features: usize,
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(n_features: usize, value: f64) -> Self {
        Self {
            n_features,
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<f64, TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::Shape {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(self.eval(x))
    }

    /// Unchecked walk; `x` must have `n_features` entries.
    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    rule,
                    left,
                    right,
                    ..
                } => i = if rule.goes_left(x[*feature]) { *left } else { *right },
            }
        }
    }

    pub(crate) fn eval_table(&self, t: &Table, row: usize) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    rule,
                    left,
                    right,
                    ..
                } => {
                    i = if rule.goes_left(t.columns[*feature][row]) {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Adds each split's gain to its feature's total.
    pub fn accumulate_gain(&self, totals: &mut [f64]) {
        for n in &self.nodes {
            if let Node::Split { feature, gain, .. } = n {
                totals[*feature] += gain.max(0.0);
            }
        }
    }

    pub(crate) fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }
}

/// What the leaves estimate.
#[derive(Debug, Clone, Copy)]
pub enum TreeFit<'a> {
    /// Leaf = mean target; split gain is the reduction in squared error.
    Raw(&'a [f64]),
    /// Leaf = −Σg / (Σh + λ).
    Newton { grad: &'a [f64], hess: &'a [f64] },
}

/// Greedy tree on raw targets or on gradient statistics.
pub fn fit_tree(table: &Table, fit: TreeFit<'_>, params: &TreeParams) -> Result<Tree, TreeError> {
    fit_tree_with(table, fit, params, None)
}

/// As [`fit_tree`]; `rng` is required when `feature_rate < 1`.
pub fn fit_tree_with(
    table: &Table,
    fit: TreeFit<'_>,
    params: &TreeParams,
    rng: Option<&mut Rng>,
) -> Result<Tree, TreeError> {
    let prep = Prepared::new(table, params.binning)?;
    prep.fit(fit, params, rng)
}

/// A table indexed for split search; reusable across boosting rounds.
pub(crate) struct Prepared {
    n: usize,
    cols: Vec<PrepCol>,
}

enum PrepCol {
    Numeric {
        codes: Vec<u32>,
        thresholds: Vec<f64>,
        order: Vec<u32>,
    },
    Categorical {
        codes: Vec<u32>,
        n_cats: usize,
    },
}

impl PrepCol {
    fn codes(&self) -> &[u32] {
        match self {
            PrepCol::Numeric { codes, .. } | PrepCol::Categorical { codes, .. } => codes,
        }
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    feature: usize,
    rule: SplitRule,
    gain: f64,
}

impl Prepared {
    pub(crate) fn new(table: &Table, binning: Binning) -> Result<Self, TreeError> {
        let n = table.n_rows();
        if n == 0 {
            return Err(TreeError::Empty);
        }
        if let Binning::Histogram(b) = binning {
            if b < 2 {
                return Err(TreeError::Config("histogram needs at least 2 bins".into()));
            }
        }
        let mut cols = Vec::with_capacity(table.n_cols());
        for (j, (col, &cat)) in table.columns.iter().zip(&table.categorical).enumerate() {
            for (row, &v) in col.iter().enumerate() {
                if !v.is_finite() || (cat && (v < 0.0 || v.fract() != 0.0)) {
                    return Err(TreeError::BadValue {
                        column: j,
                        row,
                        value: v,
                    });
                }
            }
            cols.push(if cat {
                let codes: Vec<u32> = col.iter().map(|v| *v as u32).collect();
                let n_cats = codes.iter().max().map_or(0, |m| *m as usize + 1);
                PrepCol::Categorical { codes, n_cats }
            } else {
                numeric_column(col, binning)
            });
        }
        Ok(Self { n, cols })
    }

    pub(crate) fn fit(&self, fit: TreeFit<'_>, params: &TreeParams, rng: Option<&mut Rng>) -> Result<Tree, TreeError> {
        if params.max_depth == 0 {
            return Err(TreeError::Config("max_depth must be at least 1".into()));
        }
        if !(params.feature_rate > 0.0 && params.feature_rate <= 1.0) {
            return Err(TreeError::Config(format!(
                "feature_rate must be in (0, 1], got {}",
                params.feature_rate
            )));
        }
        if params.feature_rate < 1.0 && rng.is_none() {
            return Err(TreeError::Config("feature subsampling needs a random stream".into()));
        }
        let (grad, hess, lambda) = match fit {
            TreeFit::Raw(y) => {
                check_len(y.len(), self.n)?;
                (y.iter().map(|v| -v).collect::<Vec<_>>(), vec![1.0; self.n], 0.0)
            }
            TreeFit::Newton { grad, hess } => {
                check_len(grad.len(), self.n)?;
                check_len(hess.len(), self.n)?;
                (grad.to_vec(), hess.to_vec(), params.lambda)
            }
        };
        let mut b = Builder {
            prep: self,
            grad: &grad,
            hess: &hess,
            lambda,
            params,
            rng,
            nodes: Vec::new(),
            left_mark: vec![false; self.n],
        };
        let rows: Vec<u32> = (0..self.n as u32).collect();
        let lists = self
            .cols
            .iter()
            .map(|c| match c {
                PrepCol::Numeric { order, .. } => order.clone(),
                PrepCol::Categorical { .. } => rows.clone(),
            })
            .collect();
        b.build(rows, lists, 0);
        Ok(Tree {
            n_features: self.cols.len(),
            nodes: b.nodes,
        })
    }
}

fn check_len(found: usize, expected: usize) -> Result<(), TreeError> {
    if found == expected {
        Ok(())
    } else {
        Err(TreeError::Shape { expected, found })
    }
}

fn numeric_column(col: &[f64], binning: Binning) -> PrepCol {
    let n = col.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
    // distinct values in ascending order with their first rank
    let mut uniques: Vec<(f64, usize)> = Vec::new();
    for (rank, &r) in order.iter().enumerate() {
        let v = col[r as usize];
        if uniques.last().is_none_or(|(u, _)| *u != v) {
            uniques.push((v, rank));
        }
    }
    let group: Vec<u32> = match binning {
        Binning::Histogram(bins) if uniques.len() > bins => {
            uniques.iter().map(|(_, rank)| (rank * bins / n) as u32).collect()
        }
        _ => (0..uniques.len() as u32).collect(),
    };
    let n_codes = group.last().map_or(0, |g| *g as usize + 1);
    // a bin's threshold is its largest member
    let mut thresholds = vec![f64::NEG_INFINITY; n_codes];
    for ((v, _), g) in uniques.iter().zip(&group) {
        thresholds[*g as usize] = *v;
    }
    let mut codes = vec![0u32; n];
    let mut u = 0;
    for &r in &order {
        let v = col[r as usize];
        while uniques[u].0 != v {
            u += 1;
        }
        codes[r as usize] = group[u];
    }
    PrepCol::Numeric {
        codes,
        thresholds,
        order,
    }
}

struct Builder<'a, 'r> {
    prep: &'a Prepared,
    grad: &'a [f64],
    hess: &'a [f64],
    lambda: f64,
    params: &'a TreeParams,
    rng: Option<&'r mut Rng>,
    nodes: Vec<Node>,
    left_mark: Vec<bool>,
}

impl Builder<'_, '_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.lambda)
    }

    fn build(&mut self, rows: Vec<u32>, lists: Vec<Vec<u32>>, depth: usize) -> usize {
        let (mut g, mut h) = (0.0, 0.0);
        let mut gmin = f64::INFINITY;
        let mut gmax = f64::NEG_INFINITY;
        for &r in &rows {
            let gr = self.grad[r as usize];
            g += gr;
            h += self.hess[r as usize];
            gmin = gmin.min(gr);
            gmax = gmax.max(gr);
        }
        let value = if h + self.lambda > 0.0 {
            -g / (h + self.lambda)
        } else {
            0.0
        };
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value });
        let pure = gmax <= gmin;
        if pure || depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf.max(1) {
            return id;
        }
        let features = self.candidate_features();
        let Some(best) = self.best_split(&lists, &rows, &features, g, h) else {
            return id;
        };
        if best.gain < 0.0 {
            return id;
        }
        let col_codes = self.prep.cols[best.feature].codes();
        let feature_rule = |r: u32| -> bool {
            match (&self.prep.cols[best.feature], &best.rule) {
                (PrepCol::Numeric { thresholds, .. }, SplitRule::LessEq { threshold }) => {
                    thresholds[col_codes[r as usize] as usize] <= *threshold
                }
                (_, SplitRule::InSet { categories }) => categories.contains(&col_codes[r as usize]),
                _ => unreachable!("rule kind follows column kind"),
            }
        };
        let marks: Vec<bool> = rows.iter().map(|&r| feature_rule(r)).collect();
        for (&r, &m) in rows.iter().zip(&marks) {
            self.left_mark[r as usize] = m;
        }
        let (lrows, rrows): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| self.left_mark[r as usize]);
        let mut llists = Vec::with_capacity(lists.len());
        let mut rlists = Vec::with_capacity(lists.len());
        for list in lists {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&r| self.left_mark[r as usize]);
            llists.push(l);
            rlists.push(r);
        }
        let left = self.build(lrows, llists, depth + 1);
        let right = self.build(rrows, rlists, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            rule: best.rule,
            left,
            right,
            gain: best.gain,
        };
        id
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let n = self.prep.cols.len();
        match self.rng.as_deref_mut() {
            Some(rng) if self.params.feature_rate < 1.0 => {
                let k = ((self.params.feature_rate * n as f64).round() as usize).clamp(1, n);
                let mut pick = rng.permutation(n)[..k].to_vec();
                pick.sort_unstable();
                pick
            }
            _ => (0..n).collect(),
        }
    }

    fn best_split(&self, lists: &[Vec<u32>], rows: &[u32], features: &[usize], g: f64, h: f64) -> Option<Candidate> {
        let parent = self.score(g, h);
        let search = |k: usize| {
            let f = features[k];
            match &self.prep.cols[f] {
                PrepCol::Numeric { codes, thresholds, .. } => {
                    self.scan_numeric(f, &lists[f], codes, thresholds, g, h, parent)
                }
                PrepCol::Categorical { codes, n_cats } => self.scan_categorical(f, rows, codes, *n_cats, g, h, parent),
            }
        };
        let found: Vec<Option<Candidate>> = if rows.len() >= PARALLEL_MIN_ROWS {
            par::map_range(features.len(), search)
        } else {
            (0..features.len()).map(search).collect()
        };
        // features arrive in ascending order, so strict > keeps the lowest index
        let mut best: Option<Candidate> = None;
        for c in found.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn scan_numeric(
        &self,
        feature: usize,
        sorted: &[u32],
        codes: &[u32],
        thresholds: &[f64],
        g: f64,
        h: f64,
        parent: f64,
    ) -> Option<Candidate> {
        let n = sorted.len();
        let min_leaf = self.params.min_leaf.max(1);
        let (mut gl, mut hl) = (0.0, 0.0);
        let mut best: Option<(f64, u32)> = None;
        for i in 0..n.saturating_sub(1) {
            let r = sorted[i] as usize;
            gl += self.grad[r];
            hl += self.hess[r];
            let code = codes[r];
            if code == codes[sorted[i + 1] as usize] {
                continue;
            }
            let nl = i + 1;
            if nl < min_leaf {
                continue;
            }
            if n - nl < min_leaf {
                break;
            }
            let gain = self.score(gl, hl) + self.score(g - gl, h - hl) - parent;
            if best.is_none_or(|(b, _)| gain > b) {
                best = Some((gain, code));
            }
        }
        best.map(|(gain, code)| Candidate {
            feature,
            rule: SplitRule::LessEq {
                threshold: thresholds[code as usize],
            },
            gain,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn scan_categorical(
        &self,
        feature: usize,
        rows: &[u32],
        codes: &[u32],
        n_cats: usize,
        g: f64,
        h: f64,
        parent: f64,
    ) -> Option<Candidate> {
        let mut gs = vec![0.0; n_cats];
        let mut hs = vec![0.0; n_cats];
        let mut ns = vec![0usize; n_cats];
        for &r in rows {
            let c = codes[r as usize] as usize;
            gs[c] += self.grad[r as usize];
            hs[c] += self.hess[r as usize];
            ns[c] += 1;
        }
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<(f64, u32)> = None;
        for c in 0..n_cats {
            if ns[c] < min_leaf || rows.len() - ns[c] < min_leaf {
                continue;
            }
            let gain = self.score(gs[c], hs[c]) + self.score(g - gs[c], h - hs[c]) - parent;
            if best.is_none_or(|(b, _)| gain > b) {
                best = Some((gain, c as u32));
            }
        }
        best.map(|(gain, c)| Candidate {
            feature,
            rule: SplitRule::InSet { categories: vec![c] },
            gain,
        })
    }
}
