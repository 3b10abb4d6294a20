use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::spec::{NodeKind, NodeSpec, TreeSpec};
use super::InputKey;
use crate::error::{Error, Result, TreeError};
use crate::mechanism::PriceVector;
use crate::scalar::Real;

/// Arena index of a node; equals the node's position in the spec list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeIdx(pub u32);

impl NodeIdx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
pub enum NodeBody<T> {
    Selector {
        children: Vec<NodeIdx>,
        /// One price vector per operating context.
        contexts: Vec<PriceVector<T>>,
    },
    Leaf {
        quality: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Node<T> {
    pub id: String,
    pub parent: Option<NodeIdx>,
    /// Edges from the root.
    pub depth: usize,
    /// Highest leaf quality in this node's subtree.
    pub best_below: f64,
    pub body: NodeBody<T>,
}

impl<T> Node<T> {
    pub fn is_leaf(&self) -> bool {
        matches!(self.body, NodeBody::Leaf { .. })
    }
}

/// Rooted hierarchy of selectors and leaves with per-context price vectors.
#[derive(Debug, Clone)]
pub struct Tree<T = f64> {
    nodes: Vec<Node<T>>,
    root: NodeIdx,
    depth: usize,
    ids: HashMap<String, NodeIdx>,
}

/// Validates `specs` and builds a tree with uniform price vectors.
pub fn build_tree<T: Real>(specs: &[NodeSpec]) -> Result<Tree<T>, TreeError> {
    Tree::build(specs)
}

impl<T: Real> Tree<T> {
    pub fn build(specs: &[NodeSpec]) -> Result<Self, TreeError> {
        if specs.is_empty() {
            return Err(TreeError::Empty);
        }
        if specs.len() > u32::MAX as usize {
            return Err(TreeError::Cycle("node count exceeds u32 index space".into()));
        }
        let mut ids = HashMap::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if ids.insert(s.id.clone(), NodeIdx(i as u32)).is_some() {
                return Err(TreeError::DuplicateId(s.id.clone()));
            }
        }

        let mut parents = Vec::with_capacity(specs.len());
        let mut root: Option<usize> = None;
        let mut children: Vec<Vec<NodeIdx>> = vec![Vec::new(); specs.len()];
        for (i, s) in specs.iter().enumerate() {
            match &s.parent {
                None => {
                    if let Some(r) = root {
                        return Err(TreeError::MultipleRoots {
                            first: specs[r].id.clone(),
                            second: s.id.clone(),
                        });
                    }
                    root = Some(i);
                    parents.push(None);
                }
                Some(p) if *p == s.id => return Err(TreeError::SelfParent(s.id.clone())),
                Some(p) => {
                    let Some(&pi) = ids.get(p) else {
                        return Err(TreeError::Orphan { node: s.id.clone(), parent: p.clone() });
                    };
                    children[pi.index()].push(NodeIdx(i as u32));
                    parents.push(Some(pi));
                }
            }
        }
        let root = root.ok_or(TreeError::NoRoot)?;

        let mut depths = vec![usize::MAX; specs.len()];
        let mut order = Vec::with_capacity(specs.len());
        let mut queue = VecDeque::from([root]);
        depths[root] = 0;
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for c in &children[i] {
                depths[c.index()] = depths[i] + 1;
                queue.push_back(c.index());
            }
        }
        if let Some(i) = depths.iter().position(|&d| d == usize::MAX) {
            return Err(TreeError::Cycle(specs[i].id.clone()));
        }

        for (i, s) in specs.iter().enumerate() {
            match s.kind {
                NodeKind::Selector => {
                    if s.quality.is_some() {
                        return Err(TreeError::SelectorWithQuality(s.id.clone()));
                    }
                    if children[i].len() < 2 {
                        return Err(TreeError::SelectorArity {
                            node: s.id.clone(),
                            arity: children[i].len(),
                        });
                    }
                    if s.context_count == Some(0) {
                        return Err(TreeError::ZeroContexts(s.id.clone()));
                    }
                }
                NodeKind::Leaf => {
                    if !children[i].is_empty() {
                        return Err(TreeError::LeafWithChildren(s.id.clone()));
                    }
                    if s.context_count.is_some() {
                        return Err(TreeError::LeafWithContexts(s.id.clone()));
                    }
                    match s.quality {
                        None => return Err(TreeError::LeafWithoutQuality(s.id.clone())),
                        Some(q) if !(0.0..=1.0).contains(&q) => {
                            return Err(TreeError::QualityRange { node: s.id.clone(), quality: q })
                        }
                        Some(_) => {}
                    }
                }
            }
        }

        let mut best_below = vec![f64::NEG_INFINITY; specs.len()];
        for &i in order.iter().rev() {
            best_below[i] = match specs[i].kind {
                NodeKind::Leaf => specs[i].quality.unwrap_or_default(),
                NodeKind::Selector => children[i]
                    .iter()
                    .map(|c| best_below[c.index()])
                    .fold(f64::NEG_INFINITY, f64::max),
            };
        }

        let mut nodes = Vec::with_capacity(specs.len());
        for (i, (s, kids)) in specs.iter().zip(children).enumerate() {
            let body = match s.kind {
                NodeKind::Leaf => NodeBody::Leaf { quality: s.quality.unwrap_or_default() },
                NodeKind::Selector => {
                    let uniform = PriceVector::uniform(kids.len()).expect("arity checked above");
                    NodeBody::Selector {
                        contexts: vec![uniform; s.context_count.unwrap_or(1)],
                        children: kids,
                    }
                }
            };
            nodes.push(Node {
                id: s.id.clone(),
                parent: parents[i],
                depth: depths[i],
                best_below: best_below[i],
                body,
            });
        }
        let depth = depths.iter().copied().max().unwrap_or(0);
        Ok(Self { nodes, root: NodeIdx(root as u32), depth, ids })
    }

    pub fn from_spec(spec: &TreeSpec) -> Result<Self, TreeError> {
        Self::build(&spec.nodes)
    }

    pub fn root(&self) -> NodeIdx {
        self.root
    }

    /// Longest root-to-leaf path length in edges.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, idx: NodeIdx) -> &Node<T> {
        &self.nodes[idx.index()]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeIdx, &Node<T>)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeIdx(i as u32), n))
    }

    pub fn lookup(&self, id: &str) -> Option<NodeIdx> {
        self.ids.get(id).copied()
    }

    pub fn resolve(&self, id: &str) -> Result<NodeIdx> {
        self.lookup(id).ok_or_else(|| Error::UnknownNode(id.to_owned()))
    }

    pub fn id(&self, idx: NodeIdx) -> &str {
        &self.nodes[idx.index()].id
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        self.nodes().filter(|(_, n)| n.is_leaf()).map(|(i, _)| i)
    }

    pub fn selectors(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        self.nodes().filter(|(_, n)| !n.is_leaf()).map(|(i, _)| i)
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    pub fn children(&self, idx: NodeIdx) -> &[NodeIdx] {
        match &self.nodes[idx.index()].body {
            NodeBody::Selector { children, .. } => children,
            NodeBody::Leaf { .. } => &[],
        }
    }

    pub fn quality(&self, idx: NodeIdx) -> Option<f64> {
        match self.nodes[idx.index()].body {
            NodeBody::Leaf { quality } => Some(quality),
            NodeBody::Selector { .. } => None,
        }
    }

    pub fn context_count(&self, idx: NodeIdx) -> usize {
        match &self.nodes[idx.index()].body {
            NodeBody::Selector { contexts, .. } => contexts.len(),
            NodeBody::Leaf { .. } => 0,
        }
    }

    /// Context this selector assigns to `input`.
    #[inline]
    pub fn context_of(&self, idx: NodeIdx, input: InputKey) -> usize {
        context_index(idx, input, self.context_count(idx))
    }

    pub fn weights(&self, idx: NodeIdx, context: usize) -> Result<&PriceVector<T>> {
        match &self.nodes[idx.index()].body {
            NodeBody::Selector { contexts, .. } => {
                contexts.get(context).ok_or_else(|| Error::InvalidContext {
                    node: self.id(idx).to_owned(),
                    context,
                    count: contexts.len(),
                })
            }
            NodeBody::Leaf { .. } => Err(Error::NotASelector(self.id(idx).to_owned())),
        }
    }

    pub fn set_weights(&mut self, idx: NodeIdx, context: usize, weights: PriceVector<T>) -> Result<()> {
        let arity = self.children(idx).len();
        if weights.len() != arity {
            return Err(Error::InvalidArity(weights.len()));
        }
        let id = self.id(idx).to_owned();
        match &mut self.nodes[idx.index()].body {
            NodeBody::Selector { contexts, .. } => {
                let count = contexts.len();
                let slot = contexts
                    .get_mut(context)
                    .ok_or(Error::InvalidContext { node: id, context, count })?;
                *slot = weights;
                Ok(())
            }
            NodeBody::Leaf { .. } => Err(Error::NotASelector(id)),
        }
    }

    pub(crate) fn body_mut(&mut self, idx: NodeIdx) -> &mut NodeBody<T> {
        &mut self.nodes[idx.index()].body
    }

    /// Highest-quality leaf; the first in spec order on ties.
    pub fn best_leaf(&self) -> NodeIdx {
        let mut best: Option<(NodeIdx, f64)> = None;
        for leaf in self.leaves() {
            let q = self.quality(leaf).unwrap_or_default();
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((leaf, q));
            }
        }
        best.map(|(i, _)| i).unwrap_or(self.root)
    }

    /// Index of the child whose subtree holds the strictly highest leaf
    /// quality, or `None` on a tie.
    pub fn best_child(&self, idx: NodeIdx) -> Option<usize> {
        let kids = self.children(idx);
        let mut best = 0;
        let mut tied = false;
        for i in 1..kids.len() {
            let q = self.node(kids[i]).best_below;
            let b = self.node(kids[best]).best_below;
            if q > b {
                best = i;
                tied = false;
            } else if q == b {
                tied = true;
            }
        }
        (!kids.is_empty() && !tied).then_some(best)
    }

    /// Nodes from the root down to `idx`, inclusive.
    pub fn path_to(&self, idx: NodeIdx) -> Vec<NodeIdx> {
        let mut path = vec![idx];
        let mut cur = idx;
        while let Some(p) = self.nodes[cur.index()].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Position of `child` among its parent's children.
    pub fn child_position(&self, parent: NodeIdx, child: NodeIdx) -> Option<usize> {
        self.children(parent).iter().position(|&c| c == child)
    }

    /// Product of the edge weights from the root to `node` under the given
    /// per-selector contexts. The root's rate is 1.
    pub fn activity_rate(&self, node: NodeIdx, contexts: impl Fn(NodeIdx) -> usize) -> Result<T> {
        if node.index() >= self.nodes.len() {
            return Err(Error::UnknownNode(format!("#{}", node.0)));
        }
        let path = self.path_to(node);
        let mut p = T::one();
        for pair in path.windows(2) {
            let (parent, child) = (pair[0], pair[1]);
            let pos = self.child_position(parent, child).expect("path edges are tree edges");
            p = p * self.weights(parent, contexts(parent))?.weights()[pos];
        }
        Ok(p)
    }

    /// Probability that routing (without exploration) reaches `leaf`: the
    /// product of the allocations along its root path.
    pub fn leaf_selection_probability(
        &self,
        leaf: NodeIdx,
        contexts: impl Fn(NodeIdx) -> usize,
    ) -> Result<T> {
        if leaf.index() >= self.nodes.len() {
            return Err(Error::UnknownNode(format!("#{}", leaf.0)));
        }
        if !self.node(leaf).is_leaf() {
            return Err(Error::UnknownNode(format!("`{}` is not a leaf", self.id(leaf))));
        }
        self.activity_rate(leaf, contexts)
    }

    /// Structural spec of this tree (weights are not part of it).
    pub fn to_spec(&self) -> TreeSpec {
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.id.clone(),
                parent: n.parent.map(|p| self.id(p).to_owned()),
                kind: if n.is_leaf() { NodeKind::Leaf } else { NodeKind::Selector },
                quality: match n.body {
                    NodeBody::Leaf { quality } => Some(quality),
                    NodeBody::Selector { .. } => None,
                },
                context_count: match &n.body {
                    NodeBody::Selector { contexts, .. } if contexts.len() > 1 => Some(contexts.len()),
                    _ => None,
                },
            })
            .collect();
        TreeSpec { nodes }
    }
}

/// SplitMix64 finaliser.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `hash(node, input) mod count`; each node partitions inputs independently.
#[inline]
pub fn context_index(node: NodeIdx, input: InputKey, count: usize) -> usize {
    if count <= 1 {
        return 0;
    }
    (mix64(mix64(u64::from(node.0)) ^ input.0) % count as u64) as usize
}
