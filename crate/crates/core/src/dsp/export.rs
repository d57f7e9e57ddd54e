//! Grid exporters: CSV (frames as rows) and binary P5 PGM with min/max
//! recorded in a header comment so the 0–255 scaling can be inverted.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::grid::Grid;
use crate::num::Real;

/// Write a grid as CSV, one row per frame, values as shortest round-trip
/// decimals. No header row.
pub fn write_grid_csv<T: Real>(grid: &Grid<T>, path: &Path) -> std::io::Result<()> {
    let mut out = String::new();
    for r in 0..grid.rows() {
        let row = grid.row(r);
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", v.as_f64()));
        }
        out.push('\n');
    }
    fs::write(path, out)
}

/// Write a grid as a binary P5 PGM, min-max scaled to 0–255.
///
/// The header carries `# min=<a> max=<b>` so the scaling is invertible.
/// Width is the column (bin) count, height the row (frame) count; a
/// constant grid maps to all zeros.
pub fn write_grid_pgm<T: Real>(grid: &Grid<T>, path: &Path) -> std::io::Result<()> {
    let (lo, hi) = grid
        .min_max()
        .map(|(a, b)| (a.as_f64(), b.as_f64()))
        .unwrap_or((0.0, 0.0));
    let span = hi - lo;
    let mut bytes = Vec::with_capacity(64 + grid.len());
    bytes.extend_from_slice(
        format!("P5\n# min={lo} max={hi}\n{} {}\n255\n", grid.cols(), grid.rows()).as_bytes(),
    );
    for v in grid.data() {
        let b = if span > 0.0 {
            ((v.as_f64() - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        };
        bytes.push(b);
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Export a signed grid as two PGMs: the positive part and the magnitude of
/// the negative part, each min-max scaled with its own header comment.
pub fn write_signed_pgm_pair<T: Real>(grid: &Grid<T>, pos_path: &Path, neg_path: &Path) -> std::io::Result<()> {
    let pos = grid.map(|v| if v > T::zero() { v } else { T::zero() });
    let neg = grid.map(|v| if v < T::zero() { -v } else { T::zero() });
    write_grid_pgm(&pos, pos_path)?;
    write_grid_pgm(&neg, neg_path)
}
