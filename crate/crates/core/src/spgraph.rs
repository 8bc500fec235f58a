//! Series-parallel recognition, decomposition and linearization.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ComputationGraph, OpId, Operator};

/// A graph with a unique source and sink whose branch and merge points
/// are zero-cost virtual junctions.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGraph {
    pub graph: ComputationGraph,
    pub virtual_ops: BTreeSet<OpId>,
    pub source: OpId,
    pub sink: OpId,
}

impl NormalizedGraph {
    pub fn is_virtual(&self, id: OpId) -> bool {
        self.virtual_ops.contains(&id)
    }
}

fn virtual_op(id: OpId) -> Operator {
    Operator::unit(id, format!("~v{id}"), 0.0, 0.0)
}

/// Adds virtual terminals and junctions; see [`NormalizedGraph`].
pub fn normalize(g: &ComputationGraph) -> Result<NormalizedGraph> {
    normalize_with(g, &BTreeSet::new())
}

/// [`normalize`] treating `virtual_ops` as already virtual.
pub fn normalize_with(g: &ComputationGraph, virtual_ops: &BTreeSet<OpId>) -> Result<NormalizedGraph> {
    g.validate()?;
    if g.ops.is_empty() {
        return Err(Error::InvalidGraph("empty graph".into()));
    }
    let mut ops = g.ops.clone();
    let mut edges: BTreeSet<(OpId, OpId)> = g.edges.iter().copied().collect();
    let mut virt = virtual_ops.clone();
    let mut next = ops.iter().map(|o| o.id).max().unwrap_or(0) + 1;
    let mut fresh = |ops: &mut Vec<Operator>, virt: &mut BTreeSet<OpId>| {
        let id = next;
        next += 1;
        ops.push(virtual_op(id));
        virt.insert(id);
        id
    };

    let ids: Vec<OpId> = g.op_ids();
    for &id in &ids {
        if virt.contains(&id) {
            continue;
        }
        let outs: Vec<OpId> = edges.iter().filter(|e| e.0 == id).map(|e| e.1).collect();
        if outs.len() > 1 {
            let j = fresh(&mut ops, &mut virt);
            for v in outs {
                edges.remove(&(id, v));
                edges.insert((j, v));
            }
            edges.insert((id, j));
        }
        let ins: Vec<OpId> = edges.iter().filter(|e| e.1 == id).map(|e| e.0).collect();
        if ins.len() > 1 {
            let j = fresh(&mut ops, &mut virt);
            for u in ins {
                edges.remove(&(u, id));
                edges.insert((u, j));
            }
            edges.insert((j, id));
        }
    }

    let all: Vec<OpId> = ops.iter().map(|o| o.id).collect();
    let sources: Vec<OpId> = all.iter().copied().filter(|&v| !edges.iter().any(|e| e.1 == v)).collect();
    let sinks: Vec<OpId> = all.iter().copied().filter(|&v| !edges.iter().any(|e| e.0 == v)).collect();
    let source = if sources.len() == 1 {
        sources[0]
    } else {
        let s = fresh(&mut ops, &mut virt);
        for v in sources {
            edges.insert((s, v));
        }
        s
    };
    let sink = if sinks.len() == 1 {
        sinks[0]
    } else {
        let t = fresh(&mut ops, &mut virt);
        for v in sinks {
            edges.insert((v, t));
        }
        t
    };
    ops.sort_by_key(|o| o.id);
    Ok(NormalizedGraph {
        graph: ComputationGraph {
            ops,
            edges: edges.into_iter().collect(),
        },
        virtual_ops: virt,
        source,
        sink,
    })
}

/// Two-terminal series-parallel decomposition tree over edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpTree {
    /// Graph made of one op and no edges.
    Vertex { op: OpId },
    Edge { from: OpId, to: OpId },
    Series { left: Box<SpTree>, right: Box<SpTree>, junction: OpId },
    Parallel { left: Box<SpTree>, right: Box<SpTree> },
}

impl SpTree {
    pub fn source(&self) -> OpId {
        match self {
            SpTree::Vertex { op } => *op,
            SpTree::Edge { from, .. } => *from,
            SpTree::Series { left, .. } | SpTree::Parallel { left, .. } => left.source(),
        }
    }

    pub fn sink(&self) -> OpId {
        match self {
            SpTree::Vertex { op } => *op,
            SpTree::Edge { to, .. } => *to,
            SpTree::Series { right, .. } => right.sink(),
            SpTree::Parallel { left, .. } => left.sink(),
        }
    }

    /// Edge set the tree describes.
    pub fn rebuild(&self) -> BTreeSet<(OpId, OpId)> {
        let mut out = BTreeSet::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut BTreeSet<(OpId, OpId)>) {
        match self {
            SpTree::Vertex { .. } => {}
            SpTree::Edge { from, to } => {
                out.insert((*from, *to));
            }
            SpTree::Series { left, right, .. } | SpTree::Parallel { left, right } => {
                left.collect(out);
                right.collect(out);
            }
        }
    }
}

/// Recognizes a normalized graph by series and parallel edge reductions.
pub fn decompose(ng: &NormalizedGraph) -> Result<SpTree> {
    let g = &ng.graph;
    if g.edges.is_empty() {
        return match g.ops.as_slice() {
            [op] => Ok(SpTree::Vertex { op: op.id }),
            _ => Err(Error::NotSeriesParallel { witness: Vec::new() }),
        };
    }
    let mut live: BTreeMap<usize, (OpId, OpId, SpTree)> = g
        .edges
        .iter()
        .enumerate()
        .map(|(i, &(u, v))| (i, (u, v, SpTree::Edge { from: u, to: v })))
        .collect();
    let mut next_id = live.len();
    loop {
        let mut changed = false;

        // parallel reductions
        let mut by_pair: BTreeMap<(OpId, OpId), Vec<usize>> = BTreeMap::new();
        for (&e, &(u, v, _)) in &live {
            by_pair.entry((u, v)).or_default().push(e);
        }
        for ((u, v), es) in by_pair {
            if es.len() < 2 {
                continue;
            }
            let mut trees = es.into_iter().map(|e| live.remove(&e).expect("live edge").2);
            let first = trees.next().expect("two edges");
            let acc = trees.fold(first, |acc, t| SpTree::Parallel { left: Box::new(acc), right: Box::new(t) });
            live.insert(next_id, (u, v, acc));
            next_id += 1;
            changed = true;
        }

        // series reductions
        let mut indeg: BTreeMap<OpId, Vec<usize>> = BTreeMap::new();
        let mut outdeg: BTreeMap<OpId, Vec<usize>> = BTreeMap::new();
        for (&e, &(u, v, _)) in &live {
            outdeg.entry(u).or_default().push(e);
            indeg.entry(v).or_default().push(e);
        }
        let mut used = BTreeSet::new();
        for (&v, ins) in &indeg {
            if v == ng.source || v == ng.sink || ins.len() != 1 {
                continue;
            }
            let Some(outs) = outdeg.get(&v) else { continue };
            if outs.len() != 1 {
                continue;
            }
            let (e1, e2) = (ins[0], outs[0]);
            if used.contains(&e1) || used.contains(&e2) {
                continue;
            }
            used.insert(e1);
            used.insert(e2);
            let (u, _, t1) = live.remove(&e1).expect("live edge");
            let (_, w, t2) = live.remove(&e2).expect("live edge");
            live.insert(
                next_id,
                (u, w, SpTree::Series { left: Box::new(t1), right: Box::new(t2), junction: v }),
            );
            next_id += 1;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    if live.len() == 1 {
        let (_, (u, v, t)) = live.pop_first().expect("one edge");
        if u == ng.source && v == ng.sink {
            return Ok(t);
        }
    }
    let witness = live.values().map(|&(u, v, _)| (u, v)).collect();
    Err(Error::NotSeriesParallel { witness })
}

/// Node of the op-level tree the partitioner works on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpKind {
    Leaf(OpId),
    /// Components in data-flow order; no child is itself a series.
    Series(Vec<usize>),
    /// Independent branches ordered by smallest op id; no child is a parallel.
    Parallel(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpNode {
    pub kind: OpKind,
    /// Real ops below this node, sorted.
    pub ops: Vec<OpId>,
}

/// Flattened series-parallel tree over real operators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpTree {
    pub nodes: Vec<OpNode>,
    pub root: usize,
}

enum Frag {
    Leaf(OpId),
    Series(Vec<Frag>),
    Parallel(Vec<Frag>),
}

fn frag_min(f: &Frag) -> OpId {
    match f {
        Frag::Leaf(o) => *o,
        Frag::Series(v) | Frag::Parallel(v) => v.iter().map(frag_min).min().unwrap_or(OpId::MAX),
    }
}

fn series_of(parts: Vec<Frag>) -> Option<Frag> {
    let mut flat = Vec::new();
    for p in parts {
        match p {
            Frag::Series(v) => flat.extend(v),
            other => flat.push(other),
        }
    }
    match flat.len() {
        0 => None,
        1 => flat.pop(),
        _ => Some(Frag::Series(flat)),
    }
}

fn interior(t: &SpTree, ng: &NormalizedGraph) -> Option<Frag> {
    match t {
        SpTree::Vertex { .. } | SpTree::Edge { .. } => None,
        SpTree::Series { left, right, junction } => {
            let mut parts = Vec::new();
            parts.extend(interior(left, ng));
            if !ng.is_virtual(*junction) {
                parts.push(Frag::Leaf(*junction));
            }
            parts.extend(interior(right, ng));
            series_of(parts)
        }
        SpTree::Parallel { left, right } => {
            let mut branches = Vec::new();
            for side in [left, right] {
                match interior(side, ng) {
                    Some(Frag::Parallel(v)) => branches.extend(v),
                    Some(f) => branches.push(f),
                    None => {}
                }
            }
            branches.sort_by_key(frag_min);
            match branches.len() {
                0 => None,
                1 => branches.pop(),
                _ => Some(Frag::Parallel(branches)),
            }
        }
    }
}

impl OpTree {
    pub fn from_sp(t: &SpTree, ng: &NormalizedGraph) -> Result<OpTree> {
        let mut parts = Vec::new();
        let (s, k) = (t.source(), t.sink());
        if !ng.is_virtual(s) {
            parts.push(Frag::Leaf(s));
        }
        parts.extend(interior(t, ng));
        if k != s && !ng.is_virtual(k) {
            parts.push(Frag::Leaf(k));
        }
        let root = series_of(parts).ok_or_else(|| Error::InvalidGraph("graph has no real ops".into()))?;
        let mut tree = OpTree { nodes: Vec::new(), root: 0 };
        tree.root = tree.push(root);
        Ok(tree)
    }

    /// Pure series chain over `order`.
    pub fn chain(order: &[OpId]) -> Result<OpTree> {
        let parts = order.iter().map(|&o| Frag::Leaf(o)).collect();
        let root = series_of(parts).ok_or_else(|| Error::InvalidGraph("empty order".into()))?;
        let mut tree = OpTree { nodes: Vec::new(), root: 0 };
        tree.root = tree.push(root);
        Ok(tree)
    }

    fn push(&mut self, f: Frag) -> usize {
        let (kind, mut ops) = match f {
            Frag::Leaf(o) => (OpKind::Leaf(o), vec![o]),
            Frag::Series(v) => {
                let ids: Vec<usize> = v.into_iter().map(|c| self.push(c)).collect();
                let ops = ids.iter().flat_map(|&i| self.nodes[i].ops.clone()).collect();
                (OpKind::Series(ids), ops)
            }
            Frag::Parallel(v) => {
                let ids: Vec<usize> = v.into_iter().map(|c| self.push(c)).collect();
                let ops = ids.iter().flat_map(|&i| self.nodes[i].ops.clone()).collect();
                (OpKind::Parallel(ids), ops)
            }
        };
        ops.sort_unstable();
        self.nodes.push(OpNode { kind, ops });
        self.nodes.len() - 1
    }

    pub fn node(&self, id: usize) -> &OpNode {
        &self.nodes[id]
    }

    /// Every associativity cut of a series node as (left parts, right parts).
    pub fn series_splits(&self, id: usize) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        match &self.nodes[id].kind {
            OpKind::Series(parts) => Ok((1..parts.len())
                .map(|m| (parts[..m].to_vec(), parts[m..].to_vec()))
                .collect()),
            _ => Err(Error::WrongNodeKind { expected: "series" }),
        }
    }

    /// One-branch-versus-rest splits of a parallel node.
    pub fn parallel_splits(&self, id: usize) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
        match &self.nodes[id].kind {
            OpKind::Parallel(br) => Ok((0..br.len())
                .map(|i| {
                    let rest = br.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &b)| b).collect();
                    (vec![br[i]], rest)
                })
                .collect()),
            _ => Err(Error::WrongNodeKind { expected: "parallel" }),
        }
    }
}

/// Normalizes, decomposes and flattens `g` in one step.
pub fn op_tree(g: &ComputationGraph) -> Result<OpTree> {
    let ng = normalize(g)?;
    let t = decompose(&ng)?;
    OpTree::from_sp(&t, &ng)
}

/// Topological order taking the smallest ready id first.
pub fn linearize(g: &ComputationGraph) -> Result<Vec<OpId>> {
    let idx = g.index()?;
    let mut indeg: BTreeMap<OpId, usize> = g.ops.iter().map(|o| (o.id, 0)).collect();
    for &(_, v) in &g.edges {
        *indeg.get_mut(&v).expect("indexed") += 1;
    }
    let mut ready: BTreeSet<OpId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&o, _)| o).collect();
    let mut out = Vec::with_capacity(g.ops.len());
    while let Some(u) = ready.pop_first() {
        out.push(u);
        for &pv in &idx.succ[idx.of(u)] {
            let v = g.ops[pv].id;
            let d = indeg.get_mut(&v).expect("indexed");
            *d -= 1;
            if *d == 0 {
                ready.insert(v);
            }
        }
    }
    if out.len() != g.ops.len() {
        return Err(Error::Cycle);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: u32, edges: &[(OpId, OpId)]) -> ComputationGraph {
        ComputationGraph {
            ops: (0..n).map(|i| Operator::unit(i, format!("o{i}"), 1.0, 1.0)).collect(),
            edges: edges.to_vec(),
        }
    }

    #[test]
    fn two_sources_get_one_virtual_source() {
        let g = graph(3, &[(0, 2), (1, 2)]);
        let ng = normalize(&g).unwrap();
        assert!(ng.is_virtual(ng.source));
        assert!(!ng.is_virtual(ng.sink));
        for o in &g.ops {
            assert_eq!(ng.graph.op(o.id), Some(o));
        }
    }

    #[test]
    fn real_branch_point_gets_junction() {
        let g = graph(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        let ng = normalize(&g).unwrap();
        let outs: Vec<_> = ng.graph.edges.iter().filter(|e| e.0 == 0).collect();
        assert_eq!(outs.len(), 1);
        assert!(ng.is_virtual(outs[0].1));
        let total: f64 = ng.graph.ops.iter().map(|o| o.fwd_cost.eval(1.0)).sum();
        assert_eq!(total, 4.0);
    }

    #[test]
    fn single_op_unchanged() {
        let g = graph(1, &[]);
        let ng = normalize(&g).unwrap();
        assert_eq!(ng.graph, g);
        assert_eq!(decompose(&ng).unwrap(), SpTree::Vertex { op: 0 });
    }

    #[test]
    fn normalize_is_idempotent() {
        let g = graph(5, &[(0, 1), (0, 2), (1, 3), (2, 3), (4, 3)]);
        let ng = normalize(&g).unwrap();
        assert_eq!(normalize_with(&ng.graph, &ng.virtual_ops).unwrap(), ng);
    }

    #[test]
    fn chain_tree_and_splits() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        let t = op_tree(&g).unwrap();
        let OpKind::Series(parts) = &t.node(t.root).kind else { panic!() };
        assert_eq!(parts.len(), 4);
        assert_eq!(t.series_splits(t.root).unwrap().len(), 3);
        assert!(t.parallel_splits(t.root).is_err());
    }

    #[test]
    fn diamond_is_parallel_between_virtual_terminals() {
        let g = graph(2, &[]);
        let ng = normalize(&g).unwrap();
        let sp = decompose(&ng).unwrap();
        assert!(matches!(sp, SpTree::Parallel { .. }));
        assert_eq!(sp.source(), ng.source);
        let t = OpTree::from_sp(&sp, &ng).unwrap();
        assert_eq!(t.node(t.root).kind, OpKind::Parallel(vec![0, 1]));
    }

    #[test]
    fn one_vs_rest_splits() {
        let g = graph(3, &[]);
        let t = op_tree(&g).unwrap();
        let s = t.parallel_splits(t.root).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1], (vec![1], vec![0, 2]));
    }

    #[test]
    fn k4_rejected() {
        let g = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        let ng = normalize(&g).unwrap();
        match decompose(&ng) {
            Err(Error::NotSeriesParallel { witness }) => assert!(!witness.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn linearize_examples() {
        assert_eq!(linearize(&graph(3, &[(0, 1), (1, 2)])).unwrap(), vec![0, 1, 2]);
        let d = graph(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(linearize(&d).unwrap(), vec![0, 1, 2, 3]);
    }
}
