//! Flat named parameter storage shared by every network in a model.
//!
//! All trainable scalars live in one `Vec<f64>`. Networks allocate named
//! blocks (`"sd3.mlp.w1"`, `"sd3.alpha"`, ...) and refer to individual
//! entries through [`ParamId`]s, which is also how expression graphs
//! reference parameters. Gradient vectors returned by the differentiation
//! engine use the same flat layout.

use std::collections::HashMap;

/// Index of a single scalar parameter inside a [`ParamStore`].
///
/// `ParamId`s are dense indices into the flat value vector, so a gradient
/// vector aligned with the store can be indexed directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) u32);

impl ParamId {
    /// Position of this parameter in the flat value vector.
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Id for a flat index (the inverse of [`ParamId::index`]).
    #[inline]
    pub fn from_index(i: usize) -> Self {
        ParamId(u32::try_from(i).expect("parameter index fits in u32"))
    }
}

/// Handle to a named contiguous block of parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockId(usize);

#[derive(Debug, Clone)]
struct Block {
    name: String,
    offset: usize,
    len: usize,
}

/// Flat parameter vector with a name index over contiguous blocks.
///
/// Blocks are disjoint and cover the vector exactly; values start at zero.
/// The store is append-only: blocks cannot be removed or resized.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    values: Vec<f64>,
    blocks: Vec<Block>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocate a named zero-initialized block of `len` parameters.
    ///
    /// Panics if the name is already taken; block names identify parameter
    /// groups in error reports and must be unique.
    pub fn alloc(&mut self, name: &str, len: usize) -> BlockId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter block name: {name}"
        );
        let id = self.blocks.len();
        let offset = self.values.len();
        self.values.resize(offset + len, 0.0);
        self.blocks.push(Block {
            name: name.to_string(),
            offset,
            len,
        });
        self.by_name.insert(name.to_string(), id);
        BlockId(id)
    }

    /// Total number of parameters.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The whole flat value vector.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Flat index range occupied by a block.
    pub fn block_range(&self, id: BlockId) -> std::ops::Range<usize> {
        let b = &self.blocks[id.0];
        b.offset..b.offset + b.len
    }

    pub fn block_name(&self, id: BlockId) -> &str {
        &self.blocks[id.0].name
    }

    pub fn block(&self, id: BlockId) -> &[f64] {
        &self.values[self.block_range(id)]
    }

    pub fn block_mut(&mut self, id: BlockId) -> &mut [f64] {
        let r = self.block_range(id);
        &mut self.values[r]
    }

    /// Look up a block by name.
    pub fn find_block(&self, name: &str) -> Option<BlockId> {
        self.by_name.get(name).copied().map(BlockId)
    }

    /// `ParamId` of entry `i` within a block.
    pub fn id_at(&self, id: BlockId, i: usize) -> ParamId {
        let b = &self.blocks[id.0];
        assert!(
            i < b.len,
            "index {i} out of block {} (len {})",
            b.name,
            b.len
        );
        ParamId((b.offset + i) as u32)
    }

    /// All `ParamId`s of a block, in storage order.
    pub fn ids(&self, id: BlockId) -> impl Iterator<Item = ParamId> {
        self.block_range(id).map(|i| ParamId(i as u32))
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> f64 {
        self.values[id.index()]
    }

    #[inline]
    pub fn set(&mut self, id: ParamId, v: f64) {
        self.values[id.index()] = v;
    }

    /// Name of the block containing flat index `i`.
    ///
    /// Used to attribute faults (non-finite values, gradient blow-ups) to a
    /// parameter group.
    pub fn block_name_of_index(&self, i: usize) -> &str {
        // Blocks are stored in offset order, so binary search works.
        let k = self
            .blocks
            .partition_point(|b| b.offset + b.len <= i)
            .min(self.blocks.len().saturating_sub(1));
        &self.blocks[k].name
    }

    /// Iterate `(name, range)` over all blocks in allocation order.
    pub fn blocks(&self) -> impl Iterator<Item = (&str, std::ops::Range<usize>)> {
        self.blocks
            .iter()
            .map(|b| (b.name.as_str(), b.offset..b.offset + b.len))
    }

    /// Check the structural invariants: finite values, disjoint blocks
    /// covering the vector.
    pub fn validate(&self) -> Result<(), String> {
        let mut next = 0usize;
        for b in &self.blocks {
            if b.offset != next {
                return Err(format!("block {} does not start at {next}", b.name));
            }
            next = b.offset + b.len;
        }
        if next != self.values.len() {
            return Err(format!(
                "blocks cover {next} entries but store holds {}",
                self.values.len()
            ));
        }
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(format!(
                    "non-finite value at index {i} (block {})",
                    self.block_name_of_index(i)
                ));
            }
        }
        Ok(())
    }
}
