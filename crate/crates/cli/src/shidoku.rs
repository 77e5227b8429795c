//! 4×4 Latin-square-with-blocks grids: validity checking, exhaustive
//! enumeration of all complete grids, a counting solver, and puzzle
//! construction by plucking cells while the solution stays unique.

use rand::seq::SliceRandom;
use rand::Rng;
use simplex_diffusion::error::{Error, Result};
use simplex_diffusion::rng::substream;

/// Row-major 4×4 grid; values 1..=4, 0 marks a blank cell.
pub type Grid = [u8; 16];

/// Number of distinct complete valid grids.
pub const TOTAL_GRIDS: usize = 288;

#[inline]
fn block_of(cell: usize) -> usize {
    let (r, c) = (cell / 4, cell % 4);
    (r / 2) * 2 + c / 2
}

/// Complete-grid validity: every row, column, and 2×2 block is a
/// permutation of {1,2,3,4}.
pub fn is_valid_complete(g: &Grid) -> bool {
    if g.iter().any(|&v| v == 0 || v > 4) {
        return false;
    }
    let mut rows = [0u8; 4];
    let mut cols = [0u8; 4];
    let mut blocks = [0u8; 4];
    for (cell, &v) in g.iter().enumerate() {
        let bit = 1u8 << (v - 1);
        let (r, c) = (cell / 4, cell % 4);
        rows[r] |= bit;
        cols[c] |= bit;
        blocks[block_of(cell)] |= bit;
    }
    rows.iter().chain(&cols).chain(&blocks).all(|&m| m == 0b1111)
}

/// Whether writing `v` at `cell` conflicts with any filled peer.
fn conflicts(g: &Grid, cell: usize, v: u8) -> bool {
    let (r, c) = (cell / 4, cell % 4);
    let b = block_of(cell);
    for (other, &w) in g.iter().enumerate() {
        if other != cell
            && w == v
            && (other / 4 == r || other % 4 == c || block_of(other) == b)
        {
            return true;
        }
    }
    false
}

fn first_blank(g: &Grid) -> Option<usize> {
    g.iter().position(|&v| v == 0)
}

/// All complete valid grids in lexicographic cell order; deterministic.
pub fn enumerate_grids() -> Vec<Grid> {
    let mut out = Vec::new();
    let mut g: Grid = [0; 16];
    fn rec(g: &mut Grid, out: &mut Vec<Grid>) {
        match first_blank(g) {
            None => out.push(*g),
            Some(cell) => {
                for v in 1..=4u8 {
                    if !conflicts(g, cell, v) {
                        g[cell] = v;
                        rec(g, out);
                        g[cell] = 0;
                    }
                }
            }
        }
    }
    rec(&mut g, &mut out);
    out
}

/// Count completions of a partial grid, stopping once `cap` is reached.
/// Clue cells that already conflict give zero.
pub fn count_solutions(g: &Grid, cap: usize) -> usize {
    for (cell, &v) in g.iter().enumerate() {
        if v != 0 && (v > 4 || conflicts(g, cell, v)) {
            return 0;
        }
    }
    fn rec(g: &mut Grid, cap: usize, found: &mut usize) {
        if *found >= cap {
            return;
        }
        match first_blank(g) {
            None => *found += 1,
            Some(cell) => {
                for v in 1..=4u8 {
                    if !conflicts(g, cell, v) {
                        g[cell] = v;
                        rec(g, cap, found);
                        g[cell] = 0;
                        if *found >= cap {
                            return;
                        }
                    }
                }
            }
        }
    }
    let mut work = *g;
    let mut found = 0;
    rec(&mut work, cap, &mut found);
    found
}

/// One completion of a partial grid, if any exists.
pub fn solve_one(g: &Grid) -> Option<Grid> {
    for (cell, &v) in g.iter().enumerate() {
        if v != 0 && (v > 4 || conflicts(g, cell, v)) {
            return None;
        }
    }
    fn rec(g: &mut Grid) -> bool {
        match first_blank(g) {
            None => true,
            Some(cell) => {
                for v in 1..=4u8 {
                    if !conflicts(g, cell, v) {
                        g[cell] = v;
                        if rec(g) {
                            return true;
                        }
                        g[cell] = 0;
                    }
                }
                false
            }
        }
    }
    let mut work = *g;
    if rec(&mut work) {
        Some(work)
    } else {
        None
    }
}

/// Remove cells from a complete grid in random order, keeping only
/// removals that preserve solution uniqueness, until `clues` cells
/// remain. Returns None when this order gets stuck above the target.
pub fn pluck(full: &Grid, clues: usize, rng: &mut impl Rng) -> Option<Grid> {
    assert!(is_valid_complete(full), "pluck needs a valid complete grid");
    assert!(clues <= 16);
    let mut g = *full;
    let mut order: Vec<usize> = (0..16).collect();
    order.shuffle(rng);
    let mut remaining = 16usize;
    for &cell in &order {
        if remaining == clues {
            break;
        }
        let saved = g[cell];
        g[cell] = 0;
        if count_solutions(&g, 2) == 1 {
            remaining -= 1;
        } else {
            g[cell] = saved;
        }
    }
    (remaining == clues).then_some(g)
}

/// Build `n` puzzles with exactly `clues` clues and unique solutions,
/// retrying fresh grids and removal orders as needed. Deterministic in
/// the seed.
pub fn make_puzzles(n: usize, clues: usize, seed: u64) -> Result<Vec<Grid>> {
    if !(4..=16).contains(&clues) {
        return Err(Error::InvalidParameter(format!(
            "clue count must lie in [4, 16], got {clues}"
        )));
    }
    let grids = enumerate_grids();
    let mut rng = substream(seed, &[0x51d0]);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0u64;
    while out.len() < n {
        tries += 1;
        if tries > 200_000 {
            return Err(Error::RetryCapExhausted { attempts: tries });
        }
        let full = grids[rng.gen_range(0..grids.len())];
        if let Some(p) = pluck(&full, clues, &mut rng) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Four lines of four digits (0 = blank).
pub fn format_grid(g: &Grid) -> String {
    let mut s = String::with_capacity(20);
    for r in 0..4 {
        for c in 0..4 {
            s.push(char::from(b'0' + g[4 * r + c]));
        }
        s.push('\n');
    }
    s
}

/// Parse blank-line-separated grids in the `format_grid` layout.
pub fn parse_grids(text: &str) -> Result<Vec<Grid>> {
    let mut out = Vec::new();
    let mut rows: Vec<[u8; 4]> = Vec::new();
    let flush = |rows: &mut Vec<[u8; 4]>, out: &mut Vec<Grid>| -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        if rows.len() != 4 {
            return Err(Error::InvalidParameter(format!(
                "grid must have 4 rows, got {}",
                rows.len()
            )));
        }
        let mut g: Grid = [0; 16];
        for (r, row) in rows.iter().enumerate() {
            g[4 * r..4 * r + 4].copy_from_slice(row);
        }
        rows.clear();
        out.push(g);
        Ok(())
    };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            flush(&mut rows, &mut out)?;
            continue;
        }
        if line.len() != 4 {
            return Err(Error::InvalidParameter(format!(
                "grid rows must have 4 digits, got {line:?}"
            )));
        }
        let mut row = [0u8; 4];
        for (i, ch) in line.chars().enumerate() {
            let d = ch
                .to_digit(10)
                .ok_or_else(|| Error::InvalidParameter(format!("invalid grid digit {ch:?}")))?;
            if d > 4 {
                return Err(Error::InvalidParameter(format!("grid digit {d} out of range 0..=4")));
            }
            row[i] = d as u8;
        }
        rows.push(row);
    }
    flush(&mut rows, &mut out)?;
    Ok(out)
}

/// Complete grid → zero-based category sequence (length 16).
pub fn grid_to_row(g: &Grid) -> Result<Vec<usize>> {
    if g.iter().any(|&v| v == 0) {
        return Err(Error::InvalidParameter("grid has blanks; cannot form a category row".into()));
    }
    Ok(g.iter().map(|&v| v as usize - 1).collect())
}

/// Zero-based category sequence (length 16) → complete grid.
pub fn row_to_grid(row: &[usize]) -> Result<Grid> {
    if row.len() != 16 || row.iter().any(|&c| c > 3) {
        return Err(Error::ShapeMismatch(format!(
            "need 16 categories below 4, got {} entries",
            row.len()
        )));
    }
    let mut g: Grid = [0; 16];
    for (i, &c) in row.iter().enumerate() {
        g[i] = c as u8 + 1;
    }
    Ok(g)
}
