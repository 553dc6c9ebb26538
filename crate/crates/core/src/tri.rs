//! Indexing helpers for upper-triangular grids over word pairs.
//!
//! Cells are `(i, j)` with `0 <= i <= j < n`, stored row-major in the
//! canonical order produced by [`cells`].

/// Number of cells in an upper-triangular grid over `n` tokens.
pub fn cell_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Flat index of cell `(i, j)`. Requires `i <= j < n`.
pub fn index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < n, "bad cell ({i}, {j}) for n = {n}");
    // Row i starts after rows 0..i, which hold (n - k) cells each.
    i * n - i * (i - 1) / 2 + (j - i)
}

/// Iterate cells in canonical order: row by row, `j` ascending.
pub fn cells(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i..n).map(move |j| (i, j)))
}
