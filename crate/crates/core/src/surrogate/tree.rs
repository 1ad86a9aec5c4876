//! CART regression trees with exact variance-reduction splits.
//!
//! Rows are presorted once per feature ([`Presorted`]); every tree fitted on
//! the same rows reuses those orders, and a node's rows occupy the same index
//! range in every per-feature order, so one level costs `O(rows · features)`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Node {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
    value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Self { feature: LEAF, threshold: 0.0, left: 0, right: 0, value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_by(|f| x[f])
    }

    /// Prediction with feature values looked up through `get`.
    #[inline]
    pub fn predict_by(&self, get: impl Fn(usize) -> f64) -> f64 {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.feature == LEAF {
                return n.value;
            }
            i = if get(n.feature as usize) <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == LEAF).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            let n = &nodes[i];
            if n.feature == LEAF {
                0
            } else {
                1 + walk(nodes, n.left as usize).max(walk(nodes, n.right as usize))
            }
        }
        walk(&self.nodes, 0)
    }

    pub(crate) fn scale_leaves(&mut self, factor: f64) {
        for n in self.nodes.iter_mut().filter(|n| n.feature == LEAF) {
            n.value *= factor;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined per node; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: None, min_samples_leaf: 1, max_features: None }
    }
}

/// Column-major copy of a feature matrix with each column's row order.
#[derive(Debug, Clone)]
pub struct Presorted {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl Presorted {
    /// `data` is row-major with `n_features` columns.
    pub fn new(data: &[f64], n_features: usize) -> Self {
        let n_rows = data.len() / n_features;
        let columns: Vec<Vec<f64>> =
            (0..n_features).map(|f| (0..n_rows).map(|r| data[r * n_features + f]).collect()).collect();
        let order = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n_rows as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { n_rows, columns, order }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }
}

struct Split {
    feature: usize,
    /// Number of positions (in the feature's order) that go left.
    n_left: usize,
    threshold: f64,
    gain: f64,
}

/// Fits one tree to `targets`. `weights` holds per-row multiplicities
/// (bootstrap counts); rows with weight 0 are excluded. `rng` is only used
/// when `params.max_features` subsamples features.
pub fn fit_tree<R: Rng>(
    data: &Presorted,
    targets: &[f64],
    weights: Option<&[u32]>,
    params: &TreeParams,
    mut rng: Option<&mut R>,
) -> RegressionTree {
    let n_features = data.n_features();
    let weight = |r: u32| weights.map_or(1.0, |w| w[r as usize] as f64);
    let mut order: Vec<Vec<u32>> = match weights {
        None => data.order.clone(),
        Some(w) => data.order.iter().map(|o| o.iter().copied().filter(|&r| w[r as usize] > 0).collect()).collect(),
    };
    let n_active = order.first().map_or(0, Vec::len);
    let min_leaf = params.min_samples_leaf.max(1) as f64;
    let mut goes_left = vec![false; data.n_rows()];
    let mut scratch: Vec<u32> = vec![0; n_active];
    let mut features: Vec<usize> = (0..n_features).collect();

    let mut nodes = vec![Node::leaf(0.0)];
    // (node, lo, hi, depth)
    let mut stack = vec![(0usize, 0usize, n_active, 0usize)];
    while let Some((node, lo, hi, depth)) = stack.pop() {
        let rows = &order[0][lo..hi];
        let (mut w_sum, mut y_sum) = (0.0, 0.0);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &r in rows {
            let w = weight(r);
            let y = targets[r as usize];
            w_sum += w;
            y_sum += w * y;
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        let mean = if w_sum > 0.0 { y_sum / w_sum } else { 0.0 };
        nodes[node] = Node::leaf(mean);
        if params.max_depth.is_some_and(|d| depth >= d) || w_sum < 2.0 * min_leaf || y_min == y_max {
            continue;
        }

        let candidates: &[usize] = match (params.max_features, rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < n_features => {
                let mut picked = index::sample(rng, n_features, k.max(1)).into_vec();
                picked.sort_unstable();
                features.clear();
                features.extend(picked);
                &features
            }
            _ => {
                features.clear();
                features.extend(0..n_features);
                &features
            }
        };

        let mut best: Option<Split> = None;
        for &f in candidates {
            let col = &data.columns[f];
            let ord = &order[f][lo..hi];
            let (mut wl, mut sl) = (0.0, 0.0);
            for j in 0..ord.len() - 1 {
                let r = ord[j];
                let w = weight(r);
                wl += w;
                sl += w * targets[r as usize];
                let (v, v_next) = (col[r as usize], col[ord[j + 1] as usize]);
                if v >= v_next {
                    continue;
                }
                let wr = w_sum - wl;
                if wl < min_leaf || wr < min_leaf {
                    continue;
                }
                let sr = y_sum - sl;
                let diff = sl / wl - sr / wr;
                // variance reduction of the split, written without cancellation
                let gain = wl * wr / w_sum * diff * diff;
                if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                    let mut threshold = v + 0.5 * (v_next - v);
                    if threshold >= v_next {
                        threshold = v;
                    }
                    best = Some(Split { feature: f, n_left: j + 1, threshold, gain });
                }
            }
        }
        let Some(split) = best else { continue };

        for &r in &order[split.feature][lo..hi] {
            goes_left[r as usize] = false;
        }
        for &r in &order[split.feature][lo..lo + split.n_left] {
            goes_left[r as usize] = true;
        }
        for (f, ord) in order.iter_mut().enumerate() {
            if f == split.feature {
                continue;
            }
            let seg = &mut ord[lo..hi];
            let mut n_l = 0;
            let mut n_r = 0;
            let buf = &mut scratch[..hi - lo];
            let n_left = split.n_left;
            for &r in seg.iter() {
                if goes_left[r as usize] {
                    buf[n_l] = r;
                    n_l += 1;
                } else {
                    buf[n_left + n_r] = r;
                    n_r += 1;
                }
            }
            debug_assert_eq!(n_l, n_left);
            seg.copy_from_slice(buf);
        }

        let left = nodes.len();
        nodes.push(Node::leaf(0.0));
        nodes.push(Node::leaf(0.0));
        nodes[node] = Node {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: left as u32,
            right: left as u32 + 1,
            value: mean,
        };
        let mid = lo + split.n_left;
        stack.push((left + 1, mid, hi, depth + 1));
        stack.push((left, lo, mid, depth + 1));
    }
    RegressionTree { nodes }
}
