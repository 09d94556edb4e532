use serde::{Deserialize, Serialize};

use super::ReconstructedActivation;

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        match self.rank[a].cmp(&self.rank[b]) {
            std::cmp::Ordering::Less => self.parent[a] = b,
            std::cmp::Ordering::Greater => self.parent[b] = a,
            std::cmp::Ordering::Equal => {
                self.parent[b] = a;
                self.rank[a] += 1;
            }
        }
        true
    }
}

/// Same-client evidence over recovered samples.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingGraph {
    pub nodes: usize,
    /// Edges `(first member, other member)` of every applied reconstruction.
    pub edges: Vec<(usize, usize)>,
    /// Connected components, each sorted, ordered by smallest member.
    pub components: Vec<Vec<usize>>,
    /// Sweeps of the fixed-point loop after the seed pass.
    pub sweeps: usize,
}

impl GroupingGraph {
    /// Component index of every node.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.nodes];
        for (c, comp) in self.components.iter().enumerate() {
            for &i in comp {
                out[i] = c;
            }
        }
        out
    }
}

/// Links all members of a reconstruction once its first-activation subset
/// is known to come from a single client: immediately when that subset is a
/// singleton, otherwise once the subset lies inside one component. Repeats
/// until a sweep links nothing.
pub fn build_grouping_graph(reconstructions: &[ReconstructedActivation], nodes: usize) -> GroupingGraph {
    let mut uf = UnionFind::new(nodes);
    let mut edges = Vec::new();
    let mut applied = vec![false; reconstructions.len()];

    let apply = |uf: &mut UnionFind, edges: &mut Vec<(usize, usize)>, rec: &ReconstructedActivation| {
        if let Some((&a, rest)) = rec.members.split_first() {
            for &b in rest {
                edges.push((a, b));
                uf.union(a, b);
            }
        }
    };

    for (i, rec) in reconstructions.iter().enumerate() {
        if rec.first_activation.len() == 1 {
            apply(&mut uf, &mut edges, rec);
            applied[i] = true;
        }
    }

    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut changed = false;
        for (i, rec) in reconstructions.iter().enumerate() {
            if applied[i] || rec.first_activation.is_empty() {
                continue;
            }
            let root = uf.find(rec.first_activation[0]);
            if rec.first_activation[1..].iter().all(|&x| uf.find(x) == root) {
                apply(&mut uf, &mut edges, rec);
                applied[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..nodes {
        by_root.entry(uf.find(i)).or_default().push(i);
    }
    let mut components: Vec<Vec<usize>> = by_root.into_values().collect();
    components.sort_by_key(|c| c[0]);
    GroupingGraph {
        nodes,
        edges,
        components,
        sweeps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(members: &[usize], first: &[usize]) -> ReconstructedActivation {
        ReconstructedActivation {
            training: 0,
            round: 1,
            neuron: 0,
            members: members.to_vec(),
            coefficients: vec![1.0; members.len()],
            residual: 0.0,
            first_activation: first.to_vec(),
        }
    }

    #[test]
    fn no_singleton_seed_no_edges() {
        let g = build_grouping_graph(&[rec(&[0, 1], &[0, 1]), rec(&[2, 3], &[])], 4);
        assert!(g.edges.is_empty());
        assert_eq!(g.components.len(), 4);
    }

    #[test]
    fn transitive_chaining() {
        // a=0, b=1, c=2
        let g = build_grouping_graph(&[rec(&[0, 1], &[0]), rec(&[1, 2], &[1])], 3);
        assert_eq!(g.components, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn fixed_point_needs_later_sweep() {
        // The first reconstruction only becomes usable after the second
        // merges 3 and 4.
        let recs = [rec(&[3, 4, 5], &[3, 4]), rec(&[3, 4], &[4]), rec(&[0, 1], &[0, 1])];
        let g = build_grouping_graph(&recs, 6);
        assert_eq!(g.components, vec![vec![0], vec![1], vec![2], vec![3, 4, 5]]);
        assert!(g.sweeps >= 2);
    }
}
