use thiserror::Error;

/// Tree-structure validation failures. Each variant names the offending node.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("node `{0}` lists itself as its parent")]
    SelfParent(String),
    #[error("node `{node}` refers to unknown parent `{parent}`")]
    Orphan { node: String, parent: String },
    #[error("tree has no root (every node has a parent)")]
    NoRoot,
    #[error("multiple roots: `{first}` and `{second}`")]
    MultipleRoots { first: String, second: String },
    #[error("node `{0}` is not reachable from the root (cycle)")]
    Cycle(String),
    #[error("selector `{node}` has {arity} children; at least 2 required")]
    SelectorArity { node: String, arity: usize },
    #[error("selector `{0}` carries a quality value")]
    SelectorWithQuality(String),
    #[error("leaf `{0}` has children")]
    LeafWithChildren(String),
    #[error("leaf `{0}` has no quality")]
    LeafWithoutQuality(String),
    #[error("leaf `{node}` quality {quality} outside [0, 1]")]
    QualityRange { node: String, quality: f64 },
    #[error("node `{0}` has context_count 0")]
    ZeroContexts(String),
    #[error("leaf `{0}` declares a context_count")]
    LeafWithContexts(String),
    #[error("tree spec is empty")]
    Empty,
}

/// CSV hierarchy loading failures, anchored to 1-based file lines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("expected header `node_id,parent_id,quality`, found `{0}`")]
    Header(String),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: duplicate node_id `{id}`")]
    DuplicateId { line: u64, id: String },
    #[error("line {line}: quality `{value}` is not a real number")]
    BadQuality { line: u64, value: String },
    #[error("line {line}: second root `{id}` (empty parent_id)")]
    MultipleRoots { line: u64, id: String },
    #[error("no root row (empty parent_id)")]
    NoRoot,
    #[error("line {line}: node `{id}` has children and a quality")]
    SelectorWithQuality { line: u64, id: String },
    #[error("line {line}: leaf `{id}` has no quality")]
    LeafWithoutQuality { line: u64, id: String },
    #[error("normalised quality {value} of `{id}` outside [0, 1]")]
    Range { id: String, value: f64 },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("a selector needs at least 2 children, got {0}")]
    InvalidArity(usize),
    #[error("child index {index} out of range for {len} children")]
    InvalidChild { index: usize, len: usize },
    #[error("update rate must lie strictly inside (0, 1), got {0}")]
    InvalidRate(f64),
    #[error("weights are not a point on the simplex: {0}")]
    NotOnSimplex(String),
    #[error("invalid quality vector: {0}")]
    InvalidQualities(String),
    #[error("no quality gap: p1 = p2 = {0}")]
    NoGap(f64),
    #[error("degenerate qualities: {0}")]
    Degenerate(String),
    #[error("weight of child {0} is 1; the drift is undefined on that boundary")]
    Boundary(usize),
    #[error("qualities violate the interiority condition; no interior equilibrium")]
    NotInterior,
    #[error("integration left the simplex (|sum - 1| = {0:e}); reduce the step")]
    Integration(f64),
    #[error("sample count must be positive")]
    NoSamples,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is a leaf; a selector is required")]
    NotASelector(String),
    #[error("context {context} out of range for node `{node}` ({count} contexts)")]
    InvalidContext { node: String, context: usize, count: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("round {0} was recorded in explicit mode; the fidelity audit needs delta-mode records")]
    Mode(u64),
    #[error("malformed trace at line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
