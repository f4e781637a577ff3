use super::mst::MstEdge;
use super::ClusterLabel;

/// Stand-in for an infinite lambda (zero merge distance).
pub const LAMBDA_INF: f64 = 1e300;

fn lambda_of(distance: f64) -> f64 {
    if distance > 0.0 {
        (1.0 / distance).min(LAMBDA_INF)
    } else {
        LAMBDA_INF
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedNode {
    pub parent: usize,
    /// A point index (< n_points) or a cluster id (>= n_points).
    pub child: usize,
    /// Lambda at which the child leaves the parent.
    pub lambda: f64,
    pub child_size: usize,
}

/// Single-linkage hierarchy pruned by minimum cluster size. Cluster ids start
/// at `n_points` (the root); children always have larger ids than parents.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedTree {
    pub n_points: usize,
    pub nodes: Vec<CondensedNode>,
}

impl CondensedTree {
    pub fn root(&self) -> usize {
        self.n_points
    }

    pub fn n_clusters(&self) -> usize {
        1 + self.nodes.iter().filter(|n| n.child >= self.n_points).count()
    }

    /// Lambda at which each cluster was born (0 for the root).
    pub fn birth_lambdas(&self) -> Vec<f64> {
        let mut birth = vec![0.0; self.n_clusters()];
        for n in self.nodes.iter().filter(|n| n.child >= self.n_points) {
            birth[n.child - self.n_points] = n.lambda;
        }
        birth
    }

    /// Excess of mass per cluster: sum over departing children of
    /// `(lambda - lambda_birth) * size`.
    pub fn stabilities(&self) -> Vec<f64> {
        let birth = self.birth_lambdas();
        let mut s = vec![0.0; birth.len()];
        for n in &self.nodes {
            let c = n.parent - self.n_points;
            s[c] += (n.lambda - birth[c]) * n.child_size as f64;
        }
        s
    }
}

/// Single-linkage hierarchy where merges at the same height are collapsed
/// into one multi-way node, so the result does not depend on which of several
/// equal-weight MSTs was built or in which order ties were processed.
struct Dendrogram {
    n: usize,
    /// Internal node `n + i` joins `children[i]` at `distance[i]`.
    children: Vec<Vec<usize>>,
    distance: Vec<f64>,
    size: Vec<usize>,
}

impl Dendrogram {
    fn from_mst(n: usize, mst: &[MstEdge]) -> Self {
        let mut edges = mst.to_vec();
        edges.sort_by(|x, y| {
            x.weight
                .total_cmp(&y.weight)
                .then(x.a.cmp(&y.a))
                .then(x.b.cmp(&y.b))
        });
        // union-find over points, tracking the dendrogram node for each root
        let mut parent: Vec<usize> = (0..n).collect();
        let mut node_of: Vec<usize> = (0..n).collect();
        let mut size = vec![1; n];
        let find = |parent: &mut Vec<usize>, mut x: usize| {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        };
        let mut children: Vec<Vec<usize>> = Vec::with_capacity(n.saturating_sub(1));
        let mut distance: Vec<f64> = Vec::with_capacity(n.saturating_sub(1));
        for e in edges {
            let (ra, rb) = (find(&mut parent, e.a), find(&mut parent, e.b));
            debug_assert_ne!(ra, rb, "MST edges never close a cycle");
            let mut merged = Vec::new();
            let mut absorbed = None;
            for node in [node_of[ra], node_of[rb]] {
                if node >= n && distance[node - n] == e.weight {
                    // the most recent node at this height is reused in place
                    merged.append(&mut children[node - n]);
                    absorbed = Some(absorbed.map_or(node, |a: usize| a.max(node)));
                } else {
                    merged.push(node);
                }
            }
            let total = size[node_of[ra]] + size[node_of[rb]];
            let id = match absorbed {
                Some(id) => {
                    children[id - n] = merged;
                    size[id] = total;
                    id
                }
                None => {
                    children.push(merged);
                    distance.push(e.weight);
                    size.push(total);
                    n + children.len() - 1
                }
            };
            parent[rb] = ra;
            node_of[ra] = id;
        }
        let mut d = Self {
            n,
            children,
            distance,
            size,
        };
        d.drop_emptied();
        d
    }

    /// Absorbing two same-height nodes leaves one of them empty; remove those
    /// and renumber so every internal node is live.
    fn drop_emptied(&mut self) {
        let n = self.n;
        let live: Vec<bool> = self.children.iter().map(|c| !c.is_empty()).collect();
        if live.iter().all(|&l| l) {
            return;
        }
        let mut remap = vec![usize::MAX; n + live.len()];
        for (i, r) in remap.iter_mut().enumerate().take(n) {
            *r = i;
        }
        let mut next = n;
        for (i, &l) in live.iter().enumerate() {
            if l {
                remap[n + i] = next;
                next += 1;
            }
        }
        let old_children = std::mem::take(&mut self.children);
        let old_size = std::mem::take(&mut self.size);
        let old_distance = std::mem::take(&mut self.distance);
        self.size = old_size[..n].to_vec();
        for (i, ch) in old_children.into_iter().enumerate() {
            if live[i] {
                self.children.push(ch.into_iter().map(|c| remap[c]).collect());
                self.distance.push(old_distance[i]);
                self.size.push(old_size[n + i]);
            }
        }
    }

    fn root(&self) -> usize {
        self.n + self.children.len() - 1
    }

    fn leaves(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n {
                out.push(x);
            } else {
                stack.extend(self.children[x - self.n].iter().rev());
            }
        }
        out
    }
}

/// Walks the single-linkage hierarchy top-down. A merge counts as a true split
/// only when at least two sides have `min_cluster_size` points or more; the
/// points of every smaller side fall out of the current cluster at that lambda.
pub fn condense_tree(n_points: usize, mst: &[MstEdge], min_cluster_size: usize) -> CondensedTree {
    let mut nodes = Vec::new();
    if n_points < 2 || mst.len() + 1 != n_points {
        return CondensedTree { n_points, nodes };
    }
    let dendro = Dendrogram::from_mst(n_points, mst);
    let mut label = vec![usize::MAX; n_points + dendro.children.len()];
    let mut next_cluster = n_points + 1;
    label[dendro.root()] = n_points;

    let mut queue = std::collections::VecDeque::from([dendro.root()]);
    while let Some(node) = queue.pop_front() {
        if node < n_points {
            continue;
        }
        let i = node - n_points;
        let lambda = lambda_of(dendro.distance[i]);
        let here = label[node];
        let (big, small): (Vec<usize>, Vec<usize>) = dendro.children[i]
            .iter()
            .partition(|&&c| dendro.size[c] >= min_cluster_size);
        for side in small {
            for p in dendro.leaves(side) {
                nodes.push(CondensedNode {
                    parent: here,
                    child: p,
                    lambda,
                    child_size: 1,
                });
            }
        }
        if big.len() == 1 {
            label[big[0]] = here;
            queue.push_back(big[0]);
            continue;
        }
        for side in big {
            label[side] = next_cluster;
            nodes.push(CondensedNode {
                parent: here,
                child: next_cluster,
                lambda,
                child_size: dendro.size[side],
            });
            next_cluster += 1;
            queue.push_back(side);
        }
    }
    CondensedTree { n_points, nodes }
}

/// Excess-of-Mass selection. Bottom-up, a cluster is kept when its stability
/// is at least the summed stability of its selected descendants. The root is
/// selected only when no split ever happened, i.e. it has no child clusters.
pub fn extract_clusters(tree: &CondensedTree) -> Vec<ClusterLabel> {
    let n = tree.n_points;
    let k = tree.n_clusters();
    if n == 0 {
        return Vec::new();
    }
    let mut stability = tree.stabilities();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut parent_of_cluster = vec![usize::MAX; k];
    for nd in tree.nodes.iter().filter(|nd| nd.child >= n) {
        children[nd.parent - n].push(nd.child - n);
        parent_of_cluster[nd.child - n] = nd.parent - n;
    }

    let mut selected = vec![false; k];
    if k == 1 {
        selected[0] = true;
    } else {
        for c in (1..k).rev() {
            let subtree: f64 = children[c].iter().map(|&ch| stability[ch]).sum();
            if children[c].is_empty() || stability[c] >= subtree {
                selected[c] = true;
                let mut stack = children[c].clone();
                while let Some(d) = stack.pop() {
                    selected[d] = false;
                    stack.extend_from_slice(&children[d]);
                }
            } else {
                stability[c] = subtree;
            }
        }
    }

    let mut point_parent = vec![usize::MAX; n];
    for nd in tree.nodes.iter().filter(|nd| nd.child < n) {
        point_parent[nd.child] = nd.parent - n;
    }
    point_parent
        .iter()
        .map(|&start| {
            let mut c = start;
            while c != usize::MAX {
                if selected[c] {
                    return ClusterLabel::Cluster(c);
                }
                c = parent_of_cluster[c];
            }
            ClusterLabel::Noise
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::mst::prim;
    use crate::reduce::euclidean;

    fn mst_of(x: &[Vec<f64>]) -> Vec<MstEdge> {
        prim(x.len(), |i, j| euclidean(&x[i], &x[j]))
    }

    fn line(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    fn check_invariants(t: &CondensedTree) {
        let mut seen = vec![0; t.n_points];
        for n in &t.nodes {
            assert!(n.lambda >= 0.0);
            if n.child < t.n_points {
                seen[n.child] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "every point leaves exactly once");
        let birth = t.birth_lambdas();
        for n in &t.nodes {
            assert!(n.lambda >= birth[n.parent - t.n_points], "lambda non-decreasing downward");
        }
    }

    #[test]
    fn two_groups_split_into_two_children() {
        // groups at 0..5 and 100..105 with unit spacing; single linkage joins
        // each group at distance 1 and the two groups at distance 96
        let pts: Vec<f64> = (0..5).map(f64::from).chain((0..5).map(|i| 100.0 + f64::from(i))).collect();
        let x = line(&pts);
        let t = condense_tree(10, &mst_of(&x), 5);
        check_invariants(&t);
        let clusters: Vec<_> = t.nodes.iter().filter(|n| n.child >= 10).collect();
        assert_eq!(clusters.len(), 2);
        assert!(clusters.iter().all(|c| c.parent == 10 && c.child_size == 5));
        assert!((clusters[0].lambda - 1.0 / 96.0).abs() < 1e-12);
    }

    #[test]
    fn equal_height_merges_split_three_ways() {
        // gaps of exactly 10 between three groups join them at one height
        let pts: Vec<f64> = (0..3).flat_map(|g| (0..5).map(move |i| f64::from(g * 14 + i))).collect();
        let x = line(&pts);
        let t = condense_tree(15, &mst_of(&x), 5);
        check_invariants(&t);
        let clusters: Vec<_> = t.nodes.iter().filter(|n| n.child >= 15).collect();
        assert_eq!(clusters.len(), 3);
        assert!(clusters.iter().all(|c| c.parent == 15 && c.child_size == 5));
        assert_eq!(extract_clusters(&t).iter().filter(|l| !l.is_noise()).count(), 15);
    }

    #[test]
    fn single_group_has_no_splits() {
        let x = line(&[0.0, 0.1, 0.25, 0.3, 0.42, 0.5]);
        let t = condense_tree(6, &mst_of(&x), 5);
        check_invariants(&t);
        assert_eq!(t.n_clusters(), 1);
        assert!(extract_clusters(&t).iter().all(|l| *l == ClusterLabel::Cluster(0)));
    }

    #[test]
    fn undersized_group_falls_out_of_root() {
        let pts: Vec<f64> = (0..4).map(f64::from).chain((0..5).map(|i| 200.0 + f64::from(i))).collect();
        let x = line(&pts);
        let t = condense_tree(9, &mst_of(&x), 5);
        check_invariants(&t);
        assert_eq!(t.n_clusters(), 1);
        let fallen: Vec<_> = t
            .nodes
            .iter()
            .filter(|n| n.parent == 9 && (n.lambda - 1.0 / 197.0).abs() < 1e-12)
            .map(|n| n.child)
            .collect();
        assert_eq!(fallen, [0, 1, 2, 3]);
    }

    #[test]
    fn stability_and_selection_on_hand_traced_tree() {
        // root splits into 11 and 12 at lambda 0.01; every point leaves at lambda 1
        let t = CondensedTree {
            n_points: 10,
            nodes: {
                let mut v = vec![
                    CondensedNode { parent: 10, child: 11, lambda: 0.01, child_size: 5 },
                    CondensedNode { parent: 10, child: 12, lambda: 0.01, child_size: 5 },
                ];
                for p in 0..5 {
                    v.push(CondensedNode { parent: 11, child: p, lambda: 1.0, child_size: 1 });
                    v.push(CondensedNode { parent: 12, child: p + 5, lambda: 1.0, child_size: 1 });
                }
                v
            },
        };
        let s = t.stabilities();
        assert!((s[0] - 0.1).abs() < 1e-12);
        assert!((s[1] - 4.95).abs() < 1e-12);
        let labels = extract_clusters(&t);
        assert!(labels[..5].iter().all(|l| *l == ClusterLabel::Cluster(1)));
        assert!(labels[5..].iter().all(|l| *l == ClusterLabel::Cluster(2)));
    }

    #[test]
    fn zero_distances_use_sentinel() {
        let x = line(&[1.0; 6]);
        let t = condense_tree(6, &mst_of(&x), 5);
        assert!(t.nodes.iter().all(|n| n.lambda == LAMBDA_INF));
    }
}
