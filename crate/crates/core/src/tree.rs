//! Growing a single censored quantile tree on a subsample.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::{sorted_iqloss, split_gain, LossContext, LossScratch, QuantileProcess, TauGrid};
use crate::survival::{nelson_aalen, StepSurvival, TailRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// Candidate features drawn per split.
    pub mtry: usize,
    /// A node with fewer uncensored observations than this is a leaf.
    pub nodesize: usize,
    /// Each child of a split needs at least this many distinct uncensored times.
    pub nodesize_min: usize,
    pub maxnodes: Option<usize>,
    pub tail_rule: TailRule,
    /// Truncation time of the loss.
    #[serde(with = "crate::io::ext_f64")]
    pub u: f64,
    /// Quantile levels the splitting loss integrates over.
    pub grid: TauGrid,
    /// Lower bound applied to the censoring survival in IPCW weights.
    pub g_floor: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            mtry: 1,
            nodesize: 5,
            nodesize_min: 2,
            maxnodes: None,
            tail_rule: TailRule::LargestObservation,
            u: f64::INFINITY,
            grid: TauGrid::default_eval(),
            g_floor: 0.05,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        if p > 0 && (self.mtry < 1 || self.mtry > p) {
            return Err(Error::BadInput(format!("mtry {} outside 1..={p}", self.mtry)));
        }
        if self.nodesize_min < 1 || self.nodesize < self.nodesize_min {
            return Err(Error::BadInput(format!(
                "need nodesize ({}) >= nodesize_min ({}) >= 1",
                self.nodesize, self.nodesize_min
            )));
        }
        if self.maxnodes == Some(0) {
            return Err(Error::BadInput("maxnodes must be at least 1".into()));
        }
        if !(self.g_floor > 0.0 && self.g_floor < 1.0) {
            return Err(Error::BadInput(format!("g_floor {} outside (0, 1)", self.g_floor)));
        }
        if self.u.is_nan() {
            return Err(Error::BadInput("u is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub fit: StepSurvival,
    pub member_times: Vec<f64>,
    pub member_events: Vec<bool>,
}

impl Leaf {
    fn from_members(ys: Vec<f64>, ds: Vec<bool>) -> Result<Self> {
        let fit = nelson_aalen(&ys, &ds)?;
        assert!(ds.iter().any(|&d| d), "leaf without an uncensored member");
        Ok(Self {
            fit,
            member_times: ys,
            member_events: ds,
        })
    }

    pub fn quantiles(&self, grid: &TauGrid, rule: TailRule) -> Vec<f64> {
        self.fit
            .quantiles(grid.levels(), rule, &self.member_times, &self.member_events)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// `x[feature] <= threshold` goes to `left`.
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(Leaf),
}

/// Nodes stored breadth-first; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl Tree {
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::BadInput("tree has no nodes".into()));
        }
        for (id, node) in nodes.iter().enumerate() {
            if let Node::Internal {
                feature, left, right, ..
            } = node
            {
                if *feature >= n_features || *left <= id || *right <= id || *left >= nodes.len() || *right >= nodes.len()
                {
                    return Err(Error::BadInput(format!("node {id} has an invalid split record")));
                }
            }
        }
        Ok(Self { nodes, n_features })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Leaf> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Internal { .. } => None,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    pub fn leaf_for(&self, x: &[f64]) -> Result<&Leaf> {
        if x.len() != self.n_features {
            return Err(Error::BadInput(format!(
                "feature vector has {} components, tree expects {}",
                x.len(),
                self.n_features
            )));
        }
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf(l) => return Ok(l),
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

/// Predicted quantile process of the leaf `x` falls in.
pub fn tree_predict(tree: &Tree, x: &[f64], grid: &TauGrid, rule: TailRule) -> Result<QuantileProcess> {
    let leaf = tree.leaf_for(x)?;
    QuantileProcess::new(grid.clone(), leaf.quantiles(grid, rule))
}

/// Midpoints between consecutive distinct values.
pub fn candidate_cuts(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.windows(2).map(|w| midpoint(w[0], w[1])).collect()
}

#[inline]
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) * 0.5;
    // adjacent floats can round up to b, which would route b left
    if m < b {
        m
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Best admissible split of the node holding `rows`, among `features`.
///
/// A split is admissible when both children hold at least `nodesize_min`
/// distinct uncensored times. Ties go to the lowest feature index, then the
/// lowest threshold.
pub fn best_split(data: &Dataset, rows: &[usize], features: &[usize], cfg: &TreeConfig) -> Option<Split> {
    if rows.is_empty() {
        return None;
    }
    let ctx = LossContext::new(&cfg.grid, cfg.tail_rule, cfg.u, cfg.g_floor);
    let mut searcher = SplitSearcher::default();
    let mut sorted = rows.to_vec();
    sort_canonical(data, &mut sorted);
    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();
    searcher.search(data, &sorted, &features, cfg.nodesize_min, &ctx)
}

fn sort_canonical(data: &Dataset, rows: &mut [usize]) {
    let (y, d) = (data.y(), data.delta());
    rows.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(d[b].cmp(&d[a])).then(a.cmp(&b)));
}

#[derive(Default)]
struct SplitSearcher {
    loss: LossScratch,
    ys: Vec<f64>,
    ds: Vec<bool>,
    order: Vec<usize>,
    xs: Vec<f64>,
    in_left: Vec<bool>,
    left_y: Vec<f64>,
    left_d: Vec<bool>,
    right_y: Vec<f64>,
    right_d: Vec<bool>,
}

impl SplitSearcher {
    fn load(&mut self, data: &Dataset, rows: &[usize]) {
        self.ys.clear();
        self.ds.clear();
        self.ys.extend(rows.iter().map(|&i| data.y()[i]));
        self.ds.extend(rows.iter().map(|&i| data.delta()[i]));
    }

    fn node_loss(&mut self, ctx: &LossContext) -> f64 {
        sorted_iqloss(ctx, &self.ys, &self.ds, &mut self.loss)
    }

    /// `rows` must be in canonical order.
    fn search(
        &mut self,
        data: &Dataset,
        rows: &[usize],
        features: &[usize],
        nodesize_min: usize,
        ctx: &LossContext,
    ) -> Option<Split> {
        self.load(data, rows);
        let parent = self.node_loss(ctx);
        self.search_loaded(data, rows, features, nodesize_min, ctx, parent)
    }

    fn search_loaded(
        &mut self,
        data: &Dataset,
        rows: &[usize],
        features: &[usize],
        nodesize_min: usize,
        ctx: &LossContext,
        parent: f64,
    ) -> Option<Split> {
        let m = rows.len();
        let mut best: Option<Split> = None;
        for &f in features {
            let col = data.column(f);
            self.xs.clear();
            self.xs.extend(rows.iter().map(|&i| col[i]));
            self.order.clear();
            self.order.extend(0..m);
            let xs = &self.xs;
            self.order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
            self.in_left.clear();
            self.in_left.resize(m, false);
            for k in 1..m {
                let prev = self.order[k - 1];
                self.in_left[prev] = true;
                let a = self.xs[prev];
                let b = self.xs[self.order[k]];
                if a == b {
                    continue;
                }
                if !self.gather_children(nodesize_min) {
                    continue;
                }
                let left = sorted_iqloss(ctx, &self.left_y, &self.left_d, &mut self.loss);
                let right = sorted_iqloss(ctx, &self.right_y, &self.right_d, &mut self.loss);
                let gain = split_gain(parent, m, left, self.left_y.len(), right, self.right_y.len());
                if best.is_none_or(|s| gain > s.gain) {
                    best = Some(Split {
                        feature: f,
                        threshold: midpoint(a, b),
                        gain,
                    });
                }
            }
        }
        best
    }

    /// Splits the loaded node by `in_left`, keeping canonical order on both
    /// sides. Returns whether both children are admissible.
    fn gather_children(&mut self, nodesize_min: usize) -> bool {
        self.left_y.clear();
        self.left_d.clear();
        self.right_y.clear();
        self.right_d.clear();
        let (mut nl, mut nr) = (0usize, 0usize);
        let (mut last_l, mut last_r) = (None::<f64>, None::<f64>);
        for pos in 0..self.ys.len() {
            let (y, d) = (self.ys[pos], self.ds[pos]);
            if self.in_left[pos] {
                self.left_y.push(y);
                self.left_d.push(d);
                if d && last_l != Some(y) {
                    nl += 1;
                    last_l = Some(y);
                }
            } else {
                self.right_y.push(y);
                self.right_d.push(d);
                if d && last_r != Some(y) {
                    nr += 1;
                    last_r = Some(y);
                }
            }
        }
        nl >= nodesize_min && nr >= nodesize_min
    }
}

fn all_rows_equal(data: &Dataset, rows: &[usize]) -> bool {
    let first = rows[0];
    data.columns()
        .iter()
        .all(|c| rows.iter().all(|&i| c[i] == c[first]))
}

/// Grows one tree on `subsample` (row indices into `data`), processing nodes
/// breadth-first. `rng` drives the per-split feature draws.
pub fn grow_tree<R: Rng + ?Sized>(data: &Dataset, subsample: &[usize], cfg: &TreeConfig, rng: &mut R) -> Result<Tree> {
    let p = data.p();
    cfg.validate(p)?;
    if !subsample.iter().any(|&i| data.delta()[i]) {
        return Err(Error::NoUncensored);
    }
    let ctx = LossContext::new(&cfg.grid, cfg.tail_rule, cfg.u, cfg.g_floor);
    let mut searcher = SplitSearcher::default();
    let mut nodes: Vec<Option<Node>> = vec![None];
    let mut queue: VecDeque<(usize, Vec<usize>)> = VecDeque::new();
    queue.push_back((0, subsample.to_vec()));
    let mut n_leaves = 0usize;

    while let Some((id, mut rows)) = queue.pop_front() {
        sort_canonical(data, &mut rows);
        let room = cfg.maxnodes.is_none_or(|mx| n_leaves + queue.len() + 1 < mx);
        let uncensored = rows.iter().filter(|&&i| data.delta()[i]).count();
        let mut split = None;
        if room && p > 0 && uncensored >= cfg.nodesize && !all_rows_equal(data, &rows) {
            let mut features = rand::seq::index::sample(rng, p, cfg.mtry.min(p)).into_vec();
            features.sort_unstable();
            split = searcher.search(data, &rows, &features, cfg.nodesize_min, &ctx);
        }
        match split {
            Some(s) => {
                let col = data.column(s.feature);
                let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= s.threshold);
                let l = nodes.len();
                nodes.push(None);
                nodes.push(None);
                nodes[id] = Some(Node::Internal {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: l,
                    right: l + 1,
                });
                queue.push_back((l, left));
                queue.push_back((l + 1, right));
            }
            None => {
                let ys = rows.iter().map(|&i| data.y()[i]).collect();
                let ds = rows.iter().map(|&i| data.delta()[i]).collect();
                nodes[id] = Some(Node::Leaf(Leaf::from_members(ys, ds)?));
                n_leaves += 1;
            }
        }
    }
    let nodes = nodes.into_iter().map(|n| n.expect("every queued node resolved")).collect();
    Ok(Tree { nodes, n_features: p })
}
