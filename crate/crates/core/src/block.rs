use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Set of coordinate indices allowed to move on a slice.
///
/// Stored zero-based and sorted; serialised one-based to match `y_1..y_M`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Block(Vec<usize>);

impl Block {
    pub fn new(mut zero_based: Vec<usize>) -> Result<Self> {
        zero_based.sort_unstable();
        zero_based.dedup();
        if zero_based.is_empty() {
            return Err(Error::InvalidArgument("block must be non-empty".into()));
        }
        Ok(Block(zero_based))
    }

    pub fn from_one_based(indices: &[usize]) -> Result<Self> {
        if indices.contains(&0) {
            return Err(Error::InvalidArgument("block indices are one-based".into()));
        }
        Block::new(indices.iter().map(|i| i - 1).collect())
    }

    pub fn single(j: usize) -> Self {
        Block(vec![j])
    }

    pub fn all(dim: usize) -> Self {
        Block((0..dim).collect())
    }

    /// Consecutive block `{d·m-d+1, …, d·m}` for one-based `m`.
    pub fn tuple(d: usize, m: usize) -> Self {
        Block((d * (m - 1)..d * m).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_index(&self) -> usize {
        *self.0.last().expect("non-empty")
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.max_index() >= dim {
            return Err(Error::VariableOutOfRange { index: self.max_index() + 1, arity: dim });
        }
        Ok(())
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl Serialize for Block {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Block {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        Block::from_one_based(&v).map_err(serde::de::Error::custom)
    }
}
