//! Classification and regression trees used as conditional synthesizers.
//!
//! Greedy binary splits: numeric features split as `x <= threshold`,
//! categorical features as one-vs-rest level tests. Impurity is Gini for
//! categorical targets and variance (SSE) for numeric targets. Growth stops
//! when a node cannot produce two children of at least `min_leaf` records or
//! no candidate split strictly reduces impurity; on equal gain the earliest
//! candidate in scan order wins, so fits are deterministic. Synthetic values
//! are drawn from the empirical distribution of the routed leaf.

use rand::Rng;

use super::SynthError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureValue {
    Num(f64),
    Cat(u32),
}

impl FeatureValue {
    pub fn as_num(&self) -> f64 {
        match self {
            FeatureValue::Num(x) => *x,
            FeatureValue::Cat(c) => *c as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Num,
    /// Categorical with this many levels.
    Cat(u32),
}

#[derive(Debug, Clone)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone)]
pub enum TargetVec {
    Num(Vec<f64>),
    Cat { values: Vec<u32>, n_levels: u32 },
}

impl TargetVec {
    pub fn len(&self) -> usize {
        match self {
            TargetVec::Num(v) => v.len(),
            TargetVec::Cat { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Training records, row-major, aligned with `features`.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub features: Vec<FeatureDef>,
    pub rows: Vec<Vec<FeatureValue>>,
    pub target: TargetVec,
}

#[derive(Debug, Clone)]
enum SplitTest {
    NumericLe { feature: usize, threshold: f64 },
    CategoryEq { feature: usize, level: u32 },
}

impl SplitTest {
    fn goes_left(&self, record: &[FeatureValue]) -> bool {
        match self {
            SplitTest::NumericLe { feature, threshold } => record[*feature].as_num() <= *threshold,
            SplitTest::CategoryEq { feature, level } => match record[*feature] {
                FeatureValue::Cat(c) => c == *level,
                FeatureValue::Num(x) => x as u32 == *level,
            },
        }
    }
}

/// Empirical distribution held by a leaf.
#[derive(Debug, Clone)]
pub enum LeafDist {
    Cat { counts: Vec<u32>, total: u32 },
    Num { values: Vec<f64> },
}

impl LeafDist {
    pub fn n(&self) -> usize {
        match self {
            LeafDist::Cat { total, .. } => *total as usize,
            LeafDist::Num { values } => values.len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FeatureValue {
        match self {
            LeafDist::Cat { counts, total } => {
                let mut u = rng.gen_range(0..*total);
                for (level, &c) in counts.iter().enumerate() {
                    if u < c {
                        return FeatureValue::Cat(level as u32);
                    }
                    u -= c;
                }
                unreachable!("counts sum to total")
            }
            LeafDist::Num { values } => FeatureValue::Num(values[rng.gen_range(0..values.len())]),
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(LeafDist),
    Split {
        test: SplitTest,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct CartModel {
    nodes: Vec<Node>,
    pub min_leaf: usize,
    pub n_train: usize,
}

impl CartModel {
    pub fn route(&self, record: &[FeatureValue]) -> &LeafDist {
        let mut ix = 0;
        loop {
            match &self.nodes[ix] {
                Node::Leaf(dist) => return dist,
                Node::Split { test, left, right } => {
                    ix = if test.goes_left(record) {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, record: &[FeatureValue], rng: &mut R) -> FeatureValue {
        self.route(record).sample(rng)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf(_)))
            .count()
    }

    /// Sum of leaf record counts; equals the training size by construction.
    pub fn leaf_total(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Leaf(d) => d.n(),
                _ => 0,
            })
            .sum()
    }
}

struct TargetStats<'a> {
    target: &'a TargetVec,
}

impl<'a> TargetStats<'a> {
    /// Impurity cost of a set of rows: n·Gini for categorical, SSE for numeric.
    fn cost(&self, rows: &[u32]) -> f64 {
        match self.target {
            TargetVec::Cat { values, n_levels } => {
                let mut counts = vec![0f64; *n_levels as usize];
                for &r in rows {
                    counts[values[r as usize] as usize] += 1.0;
                }
                let n = rows.len() as f64;
                n - counts.iter().map(|c| c * c).sum::<f64>() / n
            }
            TargetVec::Num(values) => {
                let n = rows.len() as f64;
                let sum: f64 = rows.iter().map(|&r| values[r as usize]).sum();
                let sumsq: f64 = rows
                    .iter()
                    .map(|&r| values[r as usize] * values[r as usize])
                    .sum();
                sumsq - sum * sum / n
            }
        }
    }

    fn leaf(&self, rows: &[u32]) -> LeafDist {
        match self.target {
            TargetVec::Cat { values, n_levels } => {
                let mut counts = vec![0u32; *n_levels as usize];
                for &r in rows {
                    counts[values[r as usize] as usize] += 1;
                }
                LeafDist::Cat {
                    counts,
                    total: rows.len() as u32,
                }
            }
            TargetVec::Num(values) => LeafDist::Num {
                values: rows.iter().map(|&r| values[r as usize]).collect(),
            },
        }
    }
}

/// Grow a tree greedily on `train` with the given minimum leaf size.
pub fn fit_cart(train: &TrainingSet, min_leaf: usize) -> Result<CartModel, SynthError> {
    let n = train.target.len();
    if n == 0 || train.rows.len() != n {
        return Err(SynthError::NoData("cart training set".into()));
    }
    let min_leaf = min_leaf.max(1);
    let stats = TargetStats {
        target: &train.target,
    };
    let mut nodes: Vec<Node> = Vec::new();
    let root_rows: Vec<u32> = (0..n as u32).collect();
    grow(&mut nodes, train, &stats, root_rows, min_leaf);
    Ok(CartModel {
        nodes,
        min_leaf,
        n_train: n,
    })
}

fn grow(
    nodes: &mut Vec<Node>,
    train: &TrainingSet,
    stats: &TargetStats,
    rows: Vec<u32>,
    min_leaf: usize,
) -> usize {
    let my_ix = nodes.len();
    nodes.push(Node::Leaf(stats.leaf(&rows))); // placeholder, replaced on split
    if rows.len() < 2 * min_leaf {
        return my_ix;
    }
    let parent_cost = stats.cost(&rows);
    if parent_cost <= 0.0 {
        return my_ix;
    }
    let tol = parent_cost * 1e-12 + 1e-12;
    let mut best: Option<(f64, SplitTest)> = None;
    for (fi, def) in train.features.iter().enumerate() {
        match def.kind {
            FeatureKind::Num => {
                // Sort rows by the feature, scan thresholds between distinct values.
                let mut order = rows.clone();
                order.sort_by(|&a, &b| {
                    train.rows[a as usize][fi]
                        .as_num()
                        .total_cmp(&train.rows[b as usize][fi].as_num())
                });
                for pos in min_leaf..=(order.len() - min_leaf) {
                    if pos == order.len() {
                        break;
                    }
                    let lo = train.rows[order[pos - 1] as usize][fi].as_num();
                    let hi = train.rows[order[pos] as usize][fi].as_num();
                    if lo == hi {
                        continue;
                    }
                    let threshold = lo + (hi - lo) / 2.0;
                    let gain = parent_cost - stats.cost(&order[..pos]) - stats.cost(&order[pos..]);
                    if gain > tol && best.as_ref().map_or(true, |(g, _)| gain > *g) {
                        best = Some((
                            gain,
                            SplitTest::NumericLe {
                                feature: fi,
                                threshold,
                            },
                        ));
                    }
                }
            }
            FeatureKind::Cat(n_levels) => {
                for level in 0..n_levels {
                    let (mut left, mut right) = (Vec::new(), Vec::new());
                    for &r in &rows {
                        let is = match train.rows[r as usize][fi] {
                            FeatureValue::Cat(c) => c == level,
                            FeatureValue::Num(x) => x as u32 == level,
                        };
                        if is {
                            left.push(r);
                        } else {
                            right.push(r);
                        }
                    }
                    if left.len() < min_leaf || right.len() < min_leaf {
                        continue;
                    }
                    let gain = parent_cost - stats.cost(&left) - stats.cost(&right);
                    if gain > tol && best.as_ref().map_or(true, |(g, _)| gain > *g) {
                        best = Some((gain, SplitTest::CategoryEq { feature: fi, level }));
                    }
                }
            }
        }
    }
    if let Some((_, test)) = best {
        let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
        for &r in &rows {
            if test.goes_left(&train.rows[r as usize]) {
                left_rows.push(r);
            } else {
                right_rows.push(r);
            }
        }
        let left = grow(nodes, train, stats, left_rows, min_leaf);
        let right = grow(nodes, train, stats, right_rows, min_leaf);
        nodes[my_ix] = Node::Split { test, left, right };
    }
    my_ix
}
