use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};

/// Dense `designs × contexts` matrix, indexed `(design, context)`.
///
/// Serializes as a list of rows, one row per design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<T>>", into = "Vec<Vec<T>>")]
#[serde(bound(
    serialize = "T: Clone + Serialize",
    deserialize = "T: Deserialize<'de>"
))]
pub struct Grid<T> {
    designs: usize,
    contexts: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(designs: usize, contexts: usize, value: T) -> Self {
        Grid {
            designs,
            contexts,
            data: vec![value; designs * contexts],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_fn(designs: usize, contexts: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(designs * contexts);
        for i in 0..designs {
            for j in 0..contexts {
                data.push(f(i, j));
            }
        }
        Grid {
            designs,
            contexts,
            data,
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let designs = rows.len();
        let contexts = rows.first().map_or(0, Vec::len);
        if designs == 0 || contexts == 0 {
            return Err(CrsError::Argument("grid must be non-empty".into()));
        }
        if rows.iter().any(|r| r.len() != contexts) {
            return Err(CrsError::Argument(
                "grid rows must all have the same number of contexts".into(),
            ));
        }
        Ok(Grid {
            designs,
            contexts,
            data: rows.into_iter().flatten().collect(),
        })
    }

    #[inline]
    pub fn designs(&self) -> usize {
        self.designs
    }

    #[inline]
    pub fn contexts(&self) -> usize {
        self.contexts
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat cell index; also used to key per-cell random streams.
    #[inline]
    pub fn cell_index(&self, design: usize, context: usize) -> usize {
        design * self.contexts + context
    }

    #[inline]
    pub fn get(&self, design: usize, context: usize) -> &T {
        &self.data[design * self.contexts + context]
    }

    #[inline]
    pub fn get_mut(&mut self, design: usize, context: usize) -> &mut T {
        &mut self.data[design * self.contexts + context]
    }

    pub fn check_index(&self, design: usize, context: usize) -> Result<()> {
        if design >= self.designs || context >= self.contexts {
            return Err(CrsError::Argument(format!(
                "cell (design {design}, context {context}) outside {}x{} grid",
                self.designs, self.contexts
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            designs: self.designs,
            contexts: self.contexts,
            data: self.data.iter().map(&mut f).collect(),
        }
    }

    /// Column `context` as a vector over designs.
    pub fn column(&self, context: usize) -> impl Iterator<Item = &T> + '_ {
        (0..self.designs).map(move |i| self.get(i, context))
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.designs == other.designs && self.contexts == other.contexts
    }
}

impl<T: Clone> Grid<T> {
    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.contexts).map(<[T]>::to_vec).collect()
    }
}

impl<T> TryFrom<Vec<Vec<T>>> for Grid<T> {
    type Error = CrsError;

    fn try_from(rows: Vec<Vec<T>>) -> Result<Self> {
        Grid::from_rows(rows)
    }
}

impl<T: Clone> From<Grid<T>> for Vec<Vec<T>> {
    fn from(grid: Grid<T>) -> Self {
        grid.to_rows()
    }
}
