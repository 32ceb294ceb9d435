//! Directed acyclic graphs over the endogenous variables of a model.
//!
//! A [`CausalGraph`] always carries a designated diagnosis vertex `D`, which
//! must be a sink. Every other vertex owns one exogenous error term; those
//! error terms are addressed by *coordinate* (`0..p`), which enumerates the
//! non-diagnosis vertices in ascending vertex order.

use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::cmp::Reverse;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must contain at least one variable besides the diagnosis")]
    Empty,
    #[error("edge ({0}, {1}) references a vertex outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop on vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("diagnosis vertex {0} must be a sink but has child {1}")]
    DiagnosisNotSink(usize, usize),
    #[error("diagnosis index {0} out of range")]
    DiagnosisOutOfRange(usize),
    #[error("cycle detected: {}", format_cycle(.0))]
    Cycle(Vec<usize>),
    #[error("vertex index {0} out of range (n = {1})")]
    IndexOutOfRange(usize, usize),
    #[error("d-separation query requires distinct endpoints outside the conditioning set")]
    InvalidQuery,
    #[error("{0} labels supplied for {1} vertices")]
    LabelCount(usize, usize),
}

fn format_cycle(cycle: &[usize]) -> String {
    cycle
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" -> ")
}

/// DAG with cached parent/child lists, topological order and the
/// vertex/coordinate bijection.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    labels: Vec<String>,
    diagnosis: usize,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    coord_vertex: Vec<usize>,
    vertex_coord: Vec<Option<usize>>,
}

impl CausalGraph {
    /// Builds and validates a graph. Labels default to `X1..` with the
    /// diagnosis named `D`.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        diagnosis: usize,
        labels: Option<Vec<String>>,
    ) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::Empty);
        }
        if diagnosis >= n {
            return Err(GraphError::DiagnosisOutOfRange(diagnosis));
        }
        let mut seen = BTreeSet::new();
        let mut edge_list = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::EdgeOutOfRange(u, v, n));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if !seen.insert((u, v)) {
                return Err(GraphError::DuplicateEdge(u, v));
            }
            if u == diagnosis {
                return Err(GraphError::DiagnosisNotSink(u, v));
            }
            edge_list.push((u, v));
        }
        edge_list.sort_unstable();
        let order = topo_order(n, &edge_list)?;

        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(u, v) in &edge_list {
            parents[v].push(u);
            children[u].push(v);
        }

        let labels = match labels {
            Some(l) if l.len() != n => return Err(GraphError::LabelCount(l.len(), n)),
            Some(l) => l,
            None => default_labels(n, diagnosis),
        };

        let coord_vertex: Vec<usize> = (0..n).filter(|&v| v != diagnosis).collect();
        let mut vertex_coord = vec![None; n];
        for (c, &v) in coord_vertex.iter().enumerate() {
            vertex_coord[v] = Some(c);
        }

        Ok(Self {
            n,
            edges: edge_list,
            labels,
            diagnosis,
            parents,
            children,
            order,
            coord_vertex,
            vertex_coord,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of error coordinates (every vertex except the diagnosis).
    pub fn p(&self) -> usize {
        self.n - 1
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> &str {
        &self.labels[v]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn diagnosis(&self) -> usize {
        self.diagnosis
    }

    /// Parents in ascending vertex order.
    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn is_root(&self, v: usize) -> bool {
        self.parents[v].is_empty()
    }

    /// Topological order with ties broken by ascending index.
    pub fn topo_order(&self) -> &[usize] {
        &self.order
    }

    pub fn coord_vertex(&self, coord: usize) -> usize {
        self.coord_vertex[coord]
    }

    pub fn vertex_coord(&self, v: usize) -> Option<usize> {
        self.vertex_coord[v]
    }

    /// Labels of the non-diagnosis vertices in coordinate order.
    pub fn coord_labels(&self) -> Vec<String> {
        self.coord_vertex.iter().map(|&v| self.labels[v].clone()).collect()
    }

    /// Coordinates of the parents of the vertex behind `coord`.
    pub fn coord_parents(&self, coord: usize) -> Vec<usize> {
        self.parents[self.coord_vertex[coord]]
            .iter()
            .map(|&u| self.vertex_coord[u].expect("the diagnosis is never a parent"))
            .collect()
    }

    /// Coordinates in topological order.
    pub fn coord_order(&self) -> Vec<usize> {
        self.order.iter().filter_map(|&v| self.vertex_coord[v]).collect()
    }

    /// All `u` with a directed path `u -> ... -> v`, including `v`.
    pub fn ancestors(&self, v: usize) -> Result<BTreeSet<usize>, GraphError> {
        self.check(v)?;
        let mut out = BTreeSet::from([v]);
        let mut queue = VecDeque::from([v]);
        while let Some(w) = queue.pop_front() {
            for &u in &self.parents[w] {
                if out.insert(u) {
                    queue.push_back(u);
                }
            }
        }
        Ok(out)
    }

    /// Ancestors of a vertex set (union of the per-vertex ancestor sets).
    pub fn ancestors_of_set(&self, set: &BTreeSet<usize>) -> Result<BTreeSet<usize>, GraphError> {
        let mut out = BTreeSet::new();
        for &v in set {
            out.extend(self.ancestors(v)?);
        }
        Ok(out)
    }

    pub fn descendants(&self, v: usize) -> Result<BTreeSet<usize>, GraphError> {
        self.check(v)?;
        let mut out = BTreeSet::from([v]);
        let mut queue = VecDeque::from([v]);
        while let Some(w) = queue.pop_front() {
            for &c in &self.children[w] {
                if out.insert(c) {
                    queue.push_back(c);
                }
            }
        }
        Ok(out)
    }

    /// Whether the error term of coordinate `coord` is an ancestor of the
    /// diagnosis.
    pub fn coord_is_ancestor_of_diagnosis(&self, coord: usize) -> bool {
        let v = self.coord_vertex[coord];
        self.descendants(v)
            .map(|d| d.contains(&self.diagnosis))
            .unwrap_or(false)
    }

    /// d-separation of `i` and `j` given `given`, by reachability over
    /// (vertex, direction) states.
    pub fn d_separated(
        &self,
        i: usize,
        j: usize,
        given: &BTreeSet<usize>,
    ) -> Result<bool, GraphError> {
        self.check(i)?;
        self.check(j)?;
        for &w in given {
            self.check(w)?;
        }
        if i == j || given.contains(&i) || given.contains(&j) {
            return Err(GraphError::InvalidQuery);
        }
        let anc_given = self.ancestors_of_set(given)?;

        // `true` = arrived travelling along an edge into the vertex from a
        // child (moving up), `false` = arrived from a parent (moving down).
        let mut visited = BTreeSet::new();
        let mut queue = VecDeque::from([(i, true)]);
        while let Some((v, up)) = queue.pop_front() {
            if !visited.insert((v, up)) {
                continue;
            }
            if v == j {
                return Ok(false);
            }
            let observed = given.contains(&v);
            if up {
                if !observed {
                    for &u in &self.parents[v] {
                        queue.push_back((u, true));
                    }
                    for &c in &self.children[v] {
                        queue.push_back((c, false));
                    }
                }
            } else {
                if !observed {
                    for &c in &self.children[v] {
                        queue.push_back((c, false));
                    }
                }
                // v is a collider on this trail: open iff it is an ancestor of the
                // conditioning set.
                if anc_given.contains(&v) {
                    for &u in &self.parents[v] {
                        queue.push_back((u, true));
                    }
                }
            }
        }
        Ok(true)
    }

    fn check(&self, v: usize) -> Result<(), GraphError> {
        if v >= self.n {
            Err(GraphError::IndexOutOfRange(v, self.n))
        } else {
            Ok(())
        }
    }
}

fn default_labels(n: usize, diagnosis: usize) -> Vec<String> {
    let mut k = 0;
    (0..n)
        .map(|v| {
            if v == diagnosis {
                "D".to_string()
            } else {
                k += 1;
                format!("X{k}")
            }
        })
        .collect()
}

/// Kahn's algorithm with a min-heap so ties resolve to the smallest index.
pub fn topo_order(n: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, GraphError> {
    let mut indegree = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(GraphError::EdgeOutOfRange(u, v, n));
        }
        indegree[v] += 1;
        children[u].push(v);
    }
    let mut heap: BinaryHeap<Reverse<usize>> = (0..n)
        .filter(|&v| indegree[v] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = heap.pop() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                heap.push(Reverse(c));
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err(GraphError::Cycle(find_cycle(n, edges, &indegree)))
    }
}

/// Walks backwards along unresolved in-edges until a vertex repeats.
fn find_cycle(n: usize, edges: &[(usize, usize)], indegree: &[usize]) -> Vec<usize> {
    let mut parent_of = vec![None; n];
    for &(u, v) in edges {
        if indegree[u] > 0 && indegree[v] > 0 && parent_of[v].is_none() {
            parent_of[v] = Some(u);
        }
    }
    let start = (0..n).find(|&v| indegree[v] > 0).unwrap_or(0);
    let mut path = Vec::new();
    let mut pos = vec![None; n];
    let mut v = start;
    while pos[v].is_none() {
        pos[v] = Some(path.len());
        path.push(v);
        match parent_of[v] {
            Some(u) => v = u,
            None => break,
        }
    }
    let from = pos[v].unwrap_or(0);
    let mut cycle: Vec<usize> = path[from..].to_vec();
    cycle.reverse();
    if let Some(&first) = cycle.first() {
        cycle.push(first);
    }
    cycle
}

/// Random DAG over `p` vertices: draw a uniform permutation, then include
/// each forward edge independently with probability `edge_prob`.
pub fn random_dag_edges<R: Rng + ?Sized>(p: usize, edge_prob: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(rng);
    let mut edges = Vec::new();
    for a in 0..p {
        for b in (a + 1)..p {
            if rng.random::<f64>() < edge_prob {
                edges.push((perm[a], perm[b]));
            }
        }
    }
    edges.sort_unstable();
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// X1 -> X3, X2 -> X3, X3 -> X4, X4 -> D with D at index 4.
    pub(crate) fn funnel() -> CausalGraph {
        CausalGraph::new(5, [(0, 2), (1, 2), (2, 3), (3, 4)], 4, None).unwrap()
    }

    #[test]
    fn funnel_topological_order() {
        let g = funnel();
        assert_eq!(g.topo_order(), &[0, 1, 2, 3, 4]);
        assert_eq!(g.labels(), &["X1", "X2", "X3", "X4", "D"]);
    }

    #[test]
    fn empty_edges_use_index_order() {
        assert_eq!(topo_order(3, &[]).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn two_cycle_is_reported() {
        let err = topo_order(2, &[(1, 0), (0, 1)]).unwrap_err();
        match err {
            GraphError::Cycle(c) => {
                assert_eq!(c.first(), c.last());
                assert_eq!(c.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            CausalGraph::new(3, [(1, 0), (0, 1)], 2, None),
            Err(GraphError::Cycle(_))
        ));
    }

    #[test]
    fn diagnosis_must_be_sink() {
        assert_eq!(
            CausalGraph::new(3, [(2, 0)], 2, None).unwrap_err(),
            GraphError::DiagnosisNotSink(2, 0)
        );
    }

    #[test]
    fn structural_validation() {
        assert!(matches!(
            CausalGraph::new(3, [(0, 0)], 2, None),
            Err(GraphError::SelfLoop(0))
        ));
        assert!(matches!(
            CausalGraph::new(3, [(0, 1), (0, 1)], 2, None),
            Err(GraphError::DuplicateEdge(0, 1))
        ));
        assert!(matches!(
            CausalGraph::new(3, [(0, 7)], 2, None),
            Err(GraphError::EdgeOutOfRange(0, 7, 3))
        ));
    }

    #[test]
    fn ancestors_of_funnel() {
        let g = funnel();
        assert_eq!(g.ancestors(4).unwrap(), BTreeSet::from([0, 1, 2, 3, 4]));
        assert_eq!(g.ancestors(0).unwrap(), BTreeSet::from([0]));
        assert_eq!(g.ancestors(2).unwrap(), BTreeSet::from([0, 1, 2]));
        assert!(matches!(g.ancestors(9), Err(GraphError::IndexOutOfRange(9, 5))));
    }

    #[test]
    fn d_separation_rules() {
        // chain 0 -> 1 -> 2, diagnosis 3 isolated
        let chain = CausalGraph::new(4, [(0, 1), (1, 2)], 3, None).unwrap();
        assert!(chain.d_separated(0, 2, &BTreeSet::from([1])).unwrap());
        assert!(!chain.d_separated(0, 2, &BTreeSet::new()).unwrap());

        // collider 0 -> 2 <- 1
        let collider = CausalGraph::new(4, [(0, 2), (1, 2)], 3, None).unwrap();
        assert!(collider.d_separated(0, 1, &BTreeSet::new()).unwrap());
        assert!(!collider.d_separated(0, 1, &BTreeSet::from([2])).unwrap());

        let g = funnel();
        assert!(g.d_separated(1, 4, &BTreeSet::from([2])).unwrap());
        assert!(!g.d_separated(1, 4, &BTreeSet::new()).unwrap());
        assert!(g.d_separated(0, 1, &BTreeSet::new()).unwrap());
        assert!(!g.d_separated(0, 1, &BTreeSet::from([4])).unwrap());
        assert!(matches!(
            g.d_separated(0, 0, &BTreeSet::new()),
            Err(GraphError::InvalidQuery)
        ));
    }

    #[test]
    fn coordinates_skip_the_diagnosis() {
        let g = CausalGraph::new(4, [(0, 2), (2, 1), (3, 2)], 1, None).unwrap();
        assert_eq!(g.p(), 3);
        assert_eq!(g.coord_vertex(1), 2);
        assert_eq!(g.vertex_coord(1), None);
        assert_eq!(g.coord_parents(1), vec![0, 2]);
        assert_eq!(g.labels(), &["X1", "D", "X2", "X3"]);
    }

    /// All simple undirected paths between `i` and `j`, each checked against
    /// the textbook activity rule.
    fn d_separated_by_paths(g: &CausalGraph, i: usize, j: usize, w: &BTreeSet<usize>) -> bool {
        let anc_w = g.ancestors_of_set(w).unwrap();
        let mut stack = vec![vec![i]];
        while let Some(path) = stack.pop() {
            let last = *path.last().unwrap();
            if last == j {
                let active = (1..path.len() - 1).all(|k| {
                    let (a, b, c) = (path[k - 1], path[k], path[k + 1]);
                    let collider = g.parents(b).contains(&a) && g.parents(b).contains(&c);
                    if collider {
                        anc_w.contains(&b)
                    } else {
                        !w.contains(&b)
                    }
                });
                if active {
                    return false;
                }
                continue;
            }
            let neighbours = g.parents(last).iter().chain(g.children(last).iter());
            for &nb in neighbours {
                if !path.contains(&nb) {
                    let mut next = path.clone();
                    next.push(nb);
                    stack.push(next);
                }
            }
        }
        true
    }

    proptest! {
        #[test]
        fn random_dags_have_valid_topological_orders(seed in any::<u64>(), p in 2usize..9, q in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let edges = random_dag_edges(p, q, &mut rng);
            let g = CausalGraph::new(p + 1, edges.clone(), p, None).unwrap();
            let pos: Vec<usize> = {
                let mut pos = vec![0; p + 1];
                for (k, &v) in g.topo_order().iter().enumerate() { pos[v] = k; }
                pos
            };
            for (u, v) in edges {
                prop_assert!(pos[u] < pos[v]);
            }
        }

        #[test]
        fn d_separation_matches_path_enumeration(seed in any::<u64>(), p in 3usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut edges = random_dag_edges(p, 0.5, &mut rng);
            for v in 0..p {
                if rng.random::<f64>() < 0.5 { edges.push((v, p)); }
            }
            let g = CausalGraph::new(p + 1, edges, p, None).unwrap();
            let n = p + 1;
            for i in 0..n {
                for j in (i + 1)..n {
                    let others: Vec<usize> = (0..n).filter(|&v| v != i && v != j).collect();
                    for mask in 0..(1u32 << others.len()) {
                        let w: BTreeSet<usize> = others.iter().enumerate()
                            .filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &v)| v).collect();
                        prop_assert_eq!(g.d_separated(i, j, &w).unwrap(), d_separated_by_paths(&g, i, j, &w));
                    }
                }
            }
        }
    }
}
