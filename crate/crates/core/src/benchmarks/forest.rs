//! Random forest regression: bootstrap trees with random feature subsets per split.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::rng::keyed_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means `max(1, p / 3)`.
    pub features_per_split: Option<usize>,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            n_trees: 256,
            max_depth: 8,
            features_per_split: None,
            min_samples_leaf: 1,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.predict_per_tree(row).iter().sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_per_tree(&self, row: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(row)).collect()
    }
}

/// Column-wise sort orders of the training rows, shared by all trees.
struct Presorted {
    /// `order[f]` lists row indices by increasing value of feature `f`.
    order: Vec<Vec<u32>>,
    /// `values[f][k]` is the value of row `order[f][k]`.
    values: Vec<Vec<f64>>,
    /// `rank[f][i]` is the position of row `i` in `order[f]`.
    rank: Vec<Vec<u32>>,
    /// `inverse[k] = 1 / k`, so split scores need no division.
    inverse: Vec<f64>,
}

impl Presorted {
    fn new(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut order = Vec::with_capacity(p);
        let mut values = Vec::with_capacity(p);
        let mut rank = Vec::with_capacity(p);
        for f in 0..p {
            let mut o: Vec<u32> = (0..n as u32).collect();
            o.sort_by(|&a, &b| rows[a as usize][f].total_cmp(&rows[b as usize][f]));
            let mut r = vec![0u32; n];
            for (k, &i) in o.iter().enumerate() {
                r[i as usize] = k as u32;
            }
            values.push(o.iter().map(|&i| rows[i as usize][f]).collect());
            order.push(o);
            rank.push(r);
        }
        let inverse = (0..=n).map(|k| if k == 0 { 0.0 } else { 1.0 / k as f64 }).collect();
        Self {
            order,
            values,
            rank,
            inverse,
        }
    }
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    y: &'a [f64],
    sorted: &'a Presorted,
    cfg: &'a RfConfig,
    mtry: usize,
    nodes: Vec<Node>,
    /// Bootstrap multiplicity of each row in the node being split.
    counts: Vec<u32>,
    /// Rank-space membership bitset of the node.
    bits: Vec<u64>,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

/// Running state of a left-to-right scan over one feature.
struct Scan<'a> {
    inverse: &'a [f64],
    n: usize,
    total: f64,
    min_leaf: usize,
    nl: usize,
    left: f64,
    prev: Option<f64>,
    best: Option<(f64, f64)>,
}

impl Scan<'_> {
    /// Adds `count` copies of a sample with value `x` and target `y`; candidate
    /// thresholds sit between consecutive distinct values.
    fn push(&mut self, x: f64, y: f64, count: usize) {
        if let Some(prev) = self.prev {
            let nl = self.nl;
            if prev != x && nl >= self.min_leaf && self.n - nl >= self.min_leaf {
                let right = self.total - self.left;
                let score = self.left * self.left * self.inverse[nl] + right * right * self.inverse[self.n - nl];
                if self.best.is_none_or(|(s, _)| score > s) {
                    // Adjacent floats can have a midpoint that rounds up to `x`.
                    let mid = 0.5 * (prev + x);
                    self.best = Some((score, if mid < x { mid } else { prev }));
                }
            }
        }
        self.nl += count;
        self.left += y * count as f64;
        self.prev = Some(x);
    }
}

impl Builder<'_> {
    fn mean(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64
    }

    /// Best split of the node on `feature` by sum-of-squares reduction; the score is
    /// `sl^2/nl + sr^2/nr`, maximal where the within-child error is minimal.
    fn best_on_feature(&mut self, idx: &[usize], total: f64, feature: usize) -> Option<(f64, f64)> {
        let order = &self.sorted.order[feature];
        let values = &self.sorted.values[feature];
        let mut scan = Scan {
            inverse: &self.sorted.inverse,
            n: idx.len(),
            total,
            min_leaf: self.cfg.min_samples_leaf.max(1),
            nl: 0,
            left: 0.0,
            prev: None,
            best: None,
        };
        // Members are marked in rank space, then visited in increasing rank order.
        let rank = &self.sorted.rank[feature];
        self.bits.fill(0);
        for &i in idx {
            let r = rank[i] as usize;
            self.bits[r >> 6] |= 1u64 << (r & 63);
        }
        for (w, &word) in self.bits.iter().enumerate() {
            let mut word = word;
            while word != 0 {
                let r = (w << 6) | word.trailing_zeros() as usize;
                word &= word - 1;
                let i = order[r] as usize;
                scan.push(values[r], self.y[i], self.counts[i] as usize);
            }
        }
        scan.best
    }

    fn grow<R: Rng>(&mut self, idx: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let at = self.nodes.len();
        let mean = self.mean(&idx);
        self.nodes.push(Node::Leaf(mean));
        let constant = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_samples_leaf.max(1) || constant {
            return at;
        }
        let p = self.rows[0].len();
        let mut features = sample(rng, p, self.mtry).into_vec();
        features.sort_unstable();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let parent = total * total / idx.len() as f64;
        for &i in &idx {
            self.counts[i] += 1;
        }
        let mut best: Option<BestSplit> = None;
        for f in features {
            if let Some((score, threshold)) = self.best_on_feature(&idx, total, f) {
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(BestSplit {
                        score,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        for &i in &idx {
            self.counts[i] = 0;
        }
        let Some(best) = best.filter(|b| b.score > parent * (1.0 + 1e-12)) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.rows[i][best.feature] <= best.threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        at
    }
}

fn train_tree(rows: &[Vec<f64>], y: &[f64], sorted: &Presorted, cfg: &RfConfig, tree: usize) -> RegressionTree {
    let mut rng = keyed_rng(cfg.seed, &[tree as u64]);
    let n = y.len();
    let idx: Vec<usize> = if cfg.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let p = rows[0].len();
    let mtry = cfg.features_per_split.unwrap_or(p / 3).clamp(1, p.max(1));
    let mut b = Builder {
        rows,
        y,
        sorted,
        cfg,
        mtry,
        nodes: Vec::new(),
        counts: vec![0; n],
        bits: vec![0; n.div_ceil(64)],
    };
    b.grow(idx, 0, &mut rng);
    RegressionTree { nodes: b.nodes }
}

/// Trains the forest; trees are independent and keyed by `(seed, tree index)`.
pub fn rf_train(rows: &[Vec<f64>], y: &[f64], cfg: &RfConfig) -> RandomForest {
    assert!(
        y.len() >= 2 && rows.len() == y.len(),
        "need matching rows and at least two samples"
    );
    let sorted = Presorted::new(rows);
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| train_tree(rows, y, &sorted, cfg, t))
        .collect();
    RandomForest { trees }
}

pub fn rf_predict(forest: &RandomForest, row: &[f64]) -> f64 {
    forest.predict(row)
}
