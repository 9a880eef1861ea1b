//! Row-major matrix kernels backing the convolution layers.
//!
//! All three variants accumulate into `out` (callers zero it first) and are
//! deterministic regardless of thread count: each output row is produced by
//! exactly one worker and its k-summation order is fixed. Full tiles keep a
//! fixed-size block of partial sums that the compiler can hold in vector
//! registers across the whole k loop; ragged edges fall back to a plain
//! streaming loop with the same per-element summation order.

use rayon::prelude::*;

use super::Element;

const TILE_ROWS: usize = 4;
const TILE_COLS: usize = 64;
const DOT_COLS: usize = 8;
const DOT_LANES: usize = 8;

/// One full TILE_ROWS×TILE_COLS block of a·b, accumulated k-ascending and
/// added onto the destination rows once at the end.
#[inline(always)]
fn tile_ab_full<E: Element>(
    k: usize,
    n: usize,
    a_rows: [&[E]; TILE_ROWS],
    b: &[E],
    j0: usize,
    chunk: &mut [E],
) {
    let mut acc = [[E::zero(); TILE_COLS]; TILE_ROWS];
    for kk in 0..k {
        let b_row: &[E; TILE_COLS] = b[kk * n + j0..kk * n + j0 + TILE_COLS]
            .try_into()
            .unwrap();
        for r in 0..TILE_ROWS {
            let av = a_rows[r][kk];
            let row = &mut acc[r];
            for l in 0..TILE_COLS {
                row[l] += av * b_row[l];
            }
        }
    }
    for r in 0..TILE_ROWS {
        let dst = &mut chunk[r * n + j0..r * n + j0 + TILE_COLS];
        for (d, v) in dst.iter_mut().zip(&acc[r]) {
            *d += *v;
        }
    }
}

/// Ragged-edge fallback: any rows×cols block, same k-ascending order per
/// element, accumulating straight into the destination.
#[inline]
fn tile_edge<E: Element>(
    k: usize,
    n: usize,
    rows: usize,
    cols: usize,
    a_at: impl Fn(usize, usize) -> E,
    b: &[E],
    j0: usize,
    chunk: &mut [E],
) {
    for kk in 0..k {
        let b_row = &b[kk * n + j0..kk * n + j0 + cols];
        for r in 0..rows {
            let av = a_at(r, kk);
            let dst = &mut chunk[r * n + j0..r * n + j0 + cols];
            for (d, bv) in dst.iter_mut().zip(b_row) {
                *d += av * *bv;
            }
        }
    }
}

/// Column-panel width such that a k×panel slab of b stays cache-resident
/// while every row group streams over it. Always a multiple of TILE_COLS.
fn panel_cols(k: usize, n: usize) -> usize {
    const BUDGET_ELEMS: usize = 192 * 1024;
    let cols = (BUDGET_ELEMS / k.max(1)).max(TILE_COLS);
    (cols - cols % TILE_COLS).min(n.next_multiple_of(TILE_COLS))
}

/// out[m×n] += a[m×k] · b[k×n]
pub fn gemm_ab<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let panel = panel_cols(k, n);
    for p0 in (0..n).step_by(panel) {
        let p1 = (p0 + panel).min(n);
        let full_cols = p0 + (p1 - p0) - (p1 - p0) % TILE_COLS;
        out.par_chunks_mut(n * TILE_ROWS)
            .enumerate()
            .for_each(|(group, chunk)| {
                let i0 = group * TILE_ROWS;
                let rows = chunk.len() / n;
                if rows == TILE_ROWS {
                    let a_rows = [
                        &a[i0 * k..(i0 + 1) * k],
                        &a[(i0 + 1) * k..(i0 + 2) * k],
                        &a[(i0 + 2) * k..(i0 + 3) * k],
                        &a[(i0 + 3) * k..(i0 + 4) * k],
                    ];
                    for j0 in (p0..full_cols).step_by(TILE_COLS) {
                        tile_ab_full(k, n, a_rows, b, j0, chunk);
                    }
                } else {
                    for j0 in (p0..full_cols).step_by(TILE_COLS) {
                        tile_edge(k, n, rows, TILE_COLS, |r, kk| a[(i0 + r) * k + kk], b, j0, chunk);
                    }
                }
                if full_cols < p1 {
                    tile_edge(
                        k,
                        n,
                        rows,
                        p1 - full_cols,
                        |r, kk| a[(i0 + r) * k + kk],
                        b,
                        full_cols,
                        chunk,
                    );
                }
            });
    }
}

/// out[m×n] += a[k×m]ᵀ · b[k×n]
pub fn gemm_atb<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let panel = panel_cols(k, n);
    for p0 in (0..n).step_by(panel) {
        let p1 = (p0 + panel).min(n);
        let full_cols = p0 + (p1 - p0) - (p1 - p0) % TILE_COLS;
        out.par_chunks_mut(n * TILE_ROWS)
            .enumerate()
            .for_each(|(group, chunk)| {
                let i0 = group * TILE_ROWS;
                let rows = chunk.len() / n;
                if rows == TILE_ROWS {
                    for j0 in (p0..full_cols).step_by(TILE_COLS) {
                        tile_atb_full(k, m, n, a, i0, b, j0, chunk);
                    }
                } else {
                    for j0 in (p0..full_cols).step_by(TILE_COLS) {
                        tile_edge(k, n, rows, TILE_COLS, |r, kk| a[kk * m + i0 + r], b, j0, chunk);
                    }
                }
                if full_cols < p1 {
                    tile_edge(
                        k,
                        n,
                        rows,
                        p1 - full_cols,
                        |r, kk| a[kk * m + i0 + r],
                        b,
                        full_cols,
                        chunk,
                    );
                }
            });
    }
}

#[inline(always)]
fn tile_atb_full<E: Element>(
    k: usize,
    m: usize,
    n: usize,
    a: &[E],
    i0: usize,
    b: &[E],
    j0: usize,
    chunk: &mut [E],
) {
    let mut acc = [[E::zero(); TILE_COLS]; TILE_ROWS];
    for kk in 0..k {
        let b_row: &[E; TILE_COLS] = b[kk * n + j0..kk * n + j0 + TILE_COLS]
            .try_into()
            .unwrap();
        let a_col: &[E; TILE_ROWS] = a[kk * m + i0..kk * m + i0 + TILE_ROWS].try_into().unwrap();
        for r in 0..TILE_ROWS {
            let av = a_col[r];
            let row = &mut acc[r];
            for l in 0..TILE_COLS {
                row[l] += av * b_row[l];
            }
        }
    }
    for r in 0..TILE_ROWS {
        let dst = &mut chunk[r * n + j0..r * n + j0 + TILE_COLS];
        for (d, v) in dst.iter_mut().zip(&acc[r]) {
            *d += *v;
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ  (pairwise row dot products)
///
/// Each dot runs eight independent accumulator lanes over k, reduced
/// pairwise, with the sub-lane remainder summed separately and added last.
pub fn gemm_abt<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let k_whole = k - k % DOT_LANES;
    out.par_chunks_mut(n * TILE_ROWS)
        .enumerate()
        .for_each(|(group, chunk)| {
            let i0 = group * TILE_ROWS;
            let rows = chunk.len() / n;
            for j0 in (0..n).step_by(DOT_COLS) {
                let cols = DOT_COLS.min(n - j0);
                if rows == TILE_ROWS && cols == DOT_COLS {
                    tile_abt_full(k, k_whole, n, a, i0, b, j0, chunk);
                } else {
                    for r in 0..rows {
                        let a_row = &a[(i0 + r) * k..(i0 + r) * k + k];
                        for c in 0..cols {
                            let b_row = &b[(j0 + c) * k..(j0 + c) * k + k];
                            chunk[r * n + j0 + c] += dot_lanes(a_row, b_row);
                        }
                    }
                }
            }
        });
}

#[inline(always)]
fn tile_abt_full<E: Element>(
    k: usize,
    k_whole: usize,
    n: usize,
    a: &[E],
    i0: usize,
    b: &[E],
    j0: usize,
    chunk: &mut [E],
) {
    let mut acc = [[[E::zero(); DOT_LANES]; DOT_COLS]; TILE_ROWS];
    for kk in (0..k_whole).step_by(DOT_LANES) {
        for r in 0..TILE_ROWS {
            let a_lane: &[E; DOT_LANES] = a[(i0 + r) * k + kk..(i0 + r) * k + kk + DOT_LANES]
                .try_into()
                .unwrap();
            for c in 0..DOT_COLS {
                let b_lane: &[E; DOT_LANES] = b[(j0 + c) * k + kk..(j0 + c) * k + kk + DOT_LANES]
                    .try_into()
                    .unwrap();
                let lanes = &mut acc[r][c];
                for l in 0..DOT_LANES {
                    lanes[l] += a_lane[l] * b_lane[l];
                }
            }
        }
    }
    for r in 0..TILE_ROWS {
        for c in 0..DOT_COLS {
            let mut tail = E::zero();
            for kk in k_whole..k {
                tail += a[(i0 + r) * k + kk] * b[(j0 + c) * k + kk];
            }
            let l = &acc[r][c];
            let s01 = l[0] + l[1];
            let s23 = l[2] + l[3];
            let s45 = l[4] + l[5];
            let s67 = l[6] + l[7];
            chunk[r * n + j0 + c] += ((s01 + s23) + (s45 + s67)) + tail;
        }
    }
}

/// Dot product with eight independent accumulator lanes so the loop
/// vectorises while keeping a fixed, thread-independent summation order.
fn dot_lanes<E: Element>(a: &[E], b: &[E]) -> E {
    let mut acc = [E::zero(); DOT_LANES];
    let mut ca = a.chunks_exact(DOT_LANES);
    let mut cb = b.chunks_exact(DOT_LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..DOT_LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = E::zero();
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *xa * *xb;
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    ((s01 + s23) + (s45 + s67)) + tail
}
