//! Binary model file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "MTCF"
//! version      u8       = 1
//! n_features   u8       = 7
//! n_classes    u8       = 9
//! tree_count   u32
//! max_features u32
//! min_split    u32
//! max_depth    u32      0 = unlimited
//! rng_seed     u64
//! then tree_count times:
//!   node_count u32
//!   node_count nodes in pre-order, each:
//!     tag u8 = 0 (leaf):  n_classes x u32 class counts
//!     tag u8 = 1 (split): feature u8, threshold f64, left u32, right u32
//! ```
//!
//! Child indices are local to the tree and must point forward.

use crate::features::FEATURE_COUNT;
use crate::forest::tree::{ClassCounts, DecisionTree, Node};
use crate::forest::{ForestModel, ForestParams};
use crate::gesture::GESTURE_COUNT;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"MTCF";
pub const MODEL_VERSION: u8 = 1;

const TAG_LEAF: u8 = 0;
const TAG_SPLIT: u8 = 1;

pub fn save_model(model: &ForestModel) -> Vec<u8> {
    let p = model.params();
    let mut out = Vec::with_capacity(1024);
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.push(FEATURE_COUNT as u8);
    out.push(GESTURE_COUNT as u8);
    out.extend_from_slice(&(p.tree_count as u32).to_le_bytes());
    out.extend_from_slice(&(p.max_features as u32).to_le_bytes());
    out.extend_from_slice(&(p.min_samples_split as u32).to_le_bytes());
    out.extend_from_slice(&(p.max_depth.unwrap_or(0) as u32).to_le_bytes());
    out.extend_from_slice(&p.rng_seed.to_le_bytes());
    for tree in model.trees() {
        out.extend_from_slice(&(tree.nodes().len() as u32).to_le_bytes());
        for node in tree.nodes() {
            match node {
                Node::Leaf { counts } => {
                    out.push(TAG_LEAF);
                    for c in counts {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(TAG_SPLIT);
                    out.push(*feature);
                    out.extend_from_slice(&threshold.to_le_bytes());
                    out.extend_from_slice(&left.to_le_bytes());
                    out.extend_from_slice(&right.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::MalformedModel(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_model(bytes: &[u8]) -> Result<ForestModel> {
    let bad = |msg: String| Err(Error::MalformedModel(msg));
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return bad("bad magic bytes".into());
    }
    let version = r.u8("version")?;
    if version != MODEL_VERSION {
        return bad(format!(
            "unsupported format version {version}, expected {MODEL_VERSION}"
        ));
    }
    let n_features = r.u8("feature count")? as usize;
    let n_classes = r.u8("class count")? as usize;
    if n_features != FEATURE_COUNT || n_classes != GESTURE_COUNT {
        return bad(format!(
            "model has {n_features} features / {n_classes} classes, expected {FEATURE_COUNT} / {GESTURE_COUNT}"
        ));
    }
    let tree_count = r.u32("tree count")? as usize;
    let max_features = r.u32("max_features")? as usize;
    let min_samples_split = r.u32("min_samples_split")? as usize;
    let max_depth = match r.u32("max_depth")? {
        0 => None,
        d => Some(d as usize),
    };
    let rng_seed = r.u64("seed")?;
    let params = ForestParams {
        tree_count,
        max_features,
        min_samples_split,
        max_depth,
        rng_seed,
    };
    params
        .validate()
        .map_err(|e| Error::MalformedModel(e.to_string()))?;

    let mut trees = Vec::with_capacity(tree_count.min(4096));
    for t in 0..tree_count {
        let node_count = r.u32("node count")? as usize;
        if node_count == 0 {
            return bad(format!("tree {t} has no nodes"));
        }
        // each node needs at least 18 bytes; reject absurd counts before allocating
        if node_count > (bytes.len() - r.pos) / 18 + 1 {
            return bad(format!(
                "tree {t} claims {node_count} nodes, more than the input holds"
            ));
        }
        let mut nodes = Vec::with_capacity(node_count);
        for i in 0..node_count {
            match r.u8("node tag")? {
                TAG_LEAF => {
                    let mut counts: ClassCounts = [0; GESTURE_COUNT];
                    for c in &mut counts {
                        *c = r.u32("class count")?;
                    }
                    if counts.iter().map(|&c| c as u64).sum::<u64>() == 0 {
                        return bad(format!("tree {t} node {i}: empty leaf"));
                    }
                    nodes.push(Node::Leaf { counts });
                }
                TAG_SPLIT => {
                    let feature = r.u8("split feature")?;
                    let threshold = r.f64("threshold")?;
                    let left = r.u32("left child")?;
                    let right = r.u32("right child")?;
                    if feature as usize >= FEATURE_COUNT {
                        return bad(format!("tree {t} node {i}: feature index {feature}"));
                    }
                    if !threshold.is_finite() {
                        return bad(format!("tree {t} node {i}: non-finite threshold"));
                    }
                    for child in [left, right] {
                        if child as usize <= i || child as usize >= node_count {
                            return bad(format!(
                                "tree {t} node {i}: child index {child} out of range"
                            ));
                        }
                    }
                    nodes.push(Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    });
                }
                tag => return bad(format!("tree {t} node {i}: unknown tag {tag}")),
            }
        }
        trees.push(DecisionTree::from_nodes(nodes));
    }
    if r.pos != bytes.len() {
        return bad(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(ForestModel::from_parts(trees, params))
}
