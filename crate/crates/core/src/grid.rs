// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-(layer, head) indexing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Error, Result};

/// One attention head, addressed by layer then head.
///
/// Ordering is lexicographic on `(layer, head)`, which is the tie-break
/// order used by head rankings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub const fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.head)
    }
}

impl FromStr for HeadId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (l, h) = s
            .split_once(':')
            .ok_or_else(|| config(format!("head key `{s}` is not `layer:head`")))?;
        let parse = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| config(format!("head key `{s}` has a non-integer part")))
        };
        Ok(Self::new(parse(l)?, parse(h)?))
    }
}

/// Dense `L × H` grid of per-head values.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrid<T> {
    num_layers: usize,
    num_heads: usize,
    cells: Vec<T>,
}

impl<T: Clone> HeadGrid<T> {
    pub fn filled(num_layers: usize, num_heads: usize, value: T) -> Self {
        Self {
            num_layers,
            num_heads,
            cells: vec![value; num_layers * num_heads],
        }
    }
}

impl<T> HeadGrid<T> {
    /// Builds a grid by calling `f` on every head in `(layer, head)` order.
    pub fn from_fn(num_layers: usize, num_heads: usize, mut f: impl FnMut(HeadId) -> T) -> Self {
        let mut cells = Vec::with_capacity(num_layers * num_heads);
        for l in 0..num_layers {
            for h in 0..num_heads {
                cells.push(f(HeadId::new(l, h)));
            }
        }
        Self {
            num_layers,
            num_heads,
            cells,
        }
    }

    /// Builds a grid from nested rows, one per layer.
    ///
    /// # Errors
    ///
    /// [`Error::Shape`] on an empty or ragged input.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let num_layers = rows.len();
        let num_heads = rows.first().map_or(0, Vec::len);
        if num_layers == 0 || num_heads == 0 {
            return Err(shape("head grid must be non-empty"));
        }
        let mut cells = Vec::with_capacity(num_layers * num_heads);
        for (l, row) in rows.into_iter().enumerate() {
            if row.len() != num_heads {
                return Err(shape(format!(
                    "layer {l} has {} heads, expected {num_heads}",
                    row.len()
                )));
            }
            cells.extend(row);
        }
        Ok(Self {
            num_layers,
            num_heads,
            cells,
        })
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    #[inline]
    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    /// Total head count `L × H`.
    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, id: HeadId) -> bool {
        id.layer < self.num_layers && id.head < self.num_heads
    }

    /// Panics when `id` is out of range.
    #[inline]
    pub fn get(&self, id: HeadId) -> &T {
        assert!(
            self.contains(id),
            "head {id} outside {}x{} grid",
            self.num_layers,
            self.num_heads
        );
        &self.cells[id.layer * self.num_heads + id.head]
    }

    #[inline]
    pub fn get_mut(&mut self, id: HeadId) -> &mut T {
        assert!(
            self.contains(id),
            "head {id} outside {}x{} grid",
            self.num_layers,
            self.num_heads
        );
        &mut self.cells[id.layer * self.num_heads + id.head]
    }

    /// Values of one layer.
    pub fn layer(&self, l: usize) -> &[T] {
        &self.cells[l * self.num_heads..(l + 1) * self.num_heads]
    }

    /// `(id, value)` pairs in `(layer, head)` order.
    pub fn iter(&self) -> impl Iterator<Item = (HeadId, &T)> + '_ {
        let h = self.num_heads;
        self.cells
            .iter()
            .enumerate()
            .map(move |(i, v)| (HeadId::new(i / h, i % h), v))
    }

    pub fn values(&self) -> &[T] {
        &self.cells
    }

    pub fn map<U>(&self, mut f: impl FnMut(HeadId, &T) -> U) -> HeadGrid<U> {
        HeadGrid::from_fn(self.num_layers, self.num_heads, |id| f(id, self.get(id)))
    }

    /// Nested rows, one per layer.
    pub fn to_rows(&self) -> Vec<Vec<T>>
    where
        T: Clone,
    {
        (0..self.num_layers).map(|l| self.layer(l).to_vec()).collect()
    }

    pub fn same_shape<U>(&self, other: &HeadGrid<U>) -> bool {
        self.num_layers == other.num_layers && self.num_heads == other.num_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_key_round_trip() {
        let id = HeadId::new(3, 11);
        assert_eq!(id.to_string(), "3:11");
        assert_eq!("3:11".parse::<HeadId>().unwrap(), id);
        assert!("3-11".parse::<HeadId>().is_err());
        assert!("a:1".parse::<HeadId>().is_err());
    }

    #[test]
    fn iteration_order_is_layer_major() {
        let g = HeadGrid::from_fn(2, 3, |id| id.layer * 10 + id.head);
        let ids: Vec<_> = g.iter().map(|(id, _)| id).collect();
        assert_eq!(ids[3], HeadId::new(1, 0));
        assert_eq!(*g.get(HeadId::new(1, 2)), 12);
        assert_eq!(g.to_rows(), vec![vec![0, 1, 2], vec![10, 11, 12]]);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(HeadGrid::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(HeadGrid::<f64>::from_rows(vec![]).is_err());
    }
}
