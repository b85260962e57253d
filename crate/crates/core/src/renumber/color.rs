use serde::Serialize;

use super::IntervalConflictGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Coloring {
    pub colors: usize,
    /// Colour (bank) per node; `None` when no legal colour was left.
    pub color: Vec<Option<usize>>,
}

impl Coloring {
    pub fn uncolored(&self) -> Vec<usize> {
        self.color.iter().enumerate().filter(|(_, c)| c.is_none()).map(|(i, _)| i).collect()
    }

    /// True when no edge joins two nodes of the same colour.
    pub fn is_proper(&self, g: &IntervalConflictGraph) -> bool {
        g.edges().all(|(u, v)| match (self.color[u], self.color[v]) {
            (Some(a), Some(b)) => a != b,
            _ => true,
        })
    }
}

/// Nodes per colour.
pub fn color_usage(c: &Coloring) -> Vec<usize> {
    let mut usage = vec![0; c.colors];
    for k in c.color.iter().flatten() {
        usage[*k] += 1;
    }
    usage
}

/// Chaitin-style simplify/select with optimistic pushes.
///
/// Simplify repeatedly removes the highest-numbered node whose remaining
/// degree is below `k`; when none exists the highest-degree node is pushed
/// optimistically. Select pops the stack and gives each node the legal
/// colour used least so far (lowest colour on ties). Nodes left without a
/// legal colour stay uncoloured.
pub fn color_icg(g: &IntervalConflictGraph, k: usize) -> Coloring {
    assert!(k >= 1, "need at least one colour");
    let n = g.nodes;
    let mut removed = vec![false; n];
    let mut degree: Vec<usize> = (0..n).map(|u| g.degree(u)).collect();
    let mut stack = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = (0..n)
            .rev()
            .find(|&u| !removed[u] && degree[u] < k)
            .or_else(|| (0..n).filter(|&u| !removed[u]).max_by_key(|&u| (degree[u], u)))
            .expect("a node remains");
        removed[pick] = true;
        for &v in &g.adjacency[pick] {
            if !removed[v] {
                degree[v] -= 1;
            }
        }
        stack.push(pick);
    }

    let mut color = vec![None; n];
    let mut usage = vec![0usize; k];
    while let Some(u) = stack.pop() {
        let mut legal = vec![true; k];
        for &v in &g.adjacency[u] {
            if let Some(c) = color[v] {
                legal[c] = false;
            }
        }
        if let Some(c) = (0..k).filter(|&c| legal[c]).min_by_key(|&c| (usage[c], c)) {
            color[u] = Some(c);
            usage[c] += 1;
        }
    }
    Coloring { colors: k, color }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> IntervalConflictGraph {
        IntervalConflictGraph::from_edges(n, (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))))
    }

    #[test]
    fn empty_graph() {
        let c = color_icg(&IntervalConflictGraph::from_edges(0, []), 4);
        assert!(c.color.is_empty());
    }

    #[test]
    fn clique_of_k_plus_one_leaves_one_uncolored() {
        for k in 1..=6 {
            let g = complete(k + 1);
            let c = color_icg(&g, k);
            assert_eq!(c.uncolored().len(), 1, "k={k}");
            assert!(c.is_proper(&g));
        }
    }

    #[test]
    fn balanced_on_independent_nodes() {
        let g = IntervalConflictGraph::from_edges(8, []);
        let c = color_icg(&g, 4);
        assert_eq!(color_usage(&c), vec![2, 2, 2, 2]);
    }
}
