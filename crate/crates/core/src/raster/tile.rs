use alloc::vec::Vec;

use super::Grid;
use crate::error::{precondition, Result};

/// A window cut from a larger grid.
#[derive(Debug, Clone)]
pub struct Tile {
    pub row_offset: usize,
    pub col_offset: usize,
    pub grid: Grid,
}

/// Window start positions along one axis.
///
/// Offsets advance by `stride`; when the last regular window stops short of
/// the edge, one more window is placed flush with it.
pub fn tile_offsets(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    debug_assert!(tile >= 1 && tile <= len && stride >= 1);
    let mut offsets: Vec<usize> = (0..=(len - tile)).step_by(stride).collect();
    let last = len - tile;
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    offsets
}

/// Top-left corners of every tile of a `rows` x `cols` grid.
pub fn tile_windows(rows: usize, cols: usize, tile_px: usize, stride_px: usize) -> Result<Vec<(usize, usize)>> {
    if tile_px == 0 || stride_px == 0 {
        return Err(precondition!("tile and stride must be positive"));
    }
    if stride_px > tile_px {
        return Err(precondition!("stride {stride_px} larger than tile {tile_px} leaves gaps"));
    }
    if tile_px > rows.min(cols) {
        return Err(precondition!("tile {tile_px} larger than grid {rows}x{cols}"));
    }
    let row_offsets = tile_offsets(rows, tile_px, stride_px);
    let col_offsets = tile_offsets(cols, tile_px, stride_px);
    Ok(row_offsets
        .iter()
        .flat_map(|&r| col_offsets.iter().map(move |&c| (r, c)))
        .collect())
}

/// Cuts `g` into square tiles. The usual stride is `tile_px / 2`.
pub fn tile(g: &Grid, tile_px: usize, stride_px: usize) -> Result<Vec<Tile>> {
    tile_windows(g.rows(), g.cols(), tile_px, stride_px)?
        .into_iter()
        .map(|(r, c)| {
            Ok(Tile {
                row_offset: r,
                col_offset: c,
                grid: g.window(r, c, tile_px, tile_px)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GridGeometry;
    use alloc::vec;
    use proptest::prelude::*;

    /// Counts how many windows contain each pixel, one window at a time.
    fn coverage(rows: usize, cols: usize, tile: usize, stride: usize) -> Vec<u32> {
        let mut counts = vec![0u32; rows * cols];
        for (r0, c0) in tile_windows(rows, cols, tile, stride).unwrap() {
            for r in r0..r0 + tile {
                for c in c0..c0 + tile {
                    counts[r * cols + c] += 1;
                }
            }
        }
        counts
    }

    #[test]
    fn nine_tiles_on_512() {
        let w = tile_windows(512, 512, 256, 128).unwrap();
        assert_eq!(w.len(), 9);
        assert_eq!(tile_offsets(512, 256, 128), vec![0, 128, 256]);
    }

    #[test]
    fn single_tile() {
        let g = Grid::filled(GridGeometry::new(256, 256, 100.0).unwrap(), 1.0).unwrap();
        let t = tile(&g, 256, 128).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].row_offset, t[0].col_offset), (0, 0));
    }

    #[test]
    fn clamps_last_tile() {
        assert_eq!(tile_offsets(300, 256, 128), vec![0, 44]);
        assert_eq!(tile_offsets(400, 256, 128), vec![0, 128, 144]);
    }

    #[test]
    fn too_large_tile() {
        assert!(tile_windows(100, 300, 128, 64).is_err());
        assert!(tile_windows(300, 300, 128, 0).is_err());
    }

    #[test]
    fn interior_pixels_in_four_tiles() {
        let counts = coverage(512, 640, 256, 128);
        for r in 128..512 - 128 {
            for c in 128..640 - 128 {
                assert_eq!(counts[r * 640 + c], 4);
            }
        }
    }

    #[test]
    fn tile_contents_match_source() {
        let geo = GridGeometry::with_origin(40, 40, 100.0, 10.0, 20.0).unwrap();
        let g = Grid::from_fn(geo, |r, c| (r * 40 + c) as f32).unwrap();
        for t in tile(&g, 16, 8).unwrap() {
            assert_eq!(t.grid.get(3, 5), g.get(t.row_offset + 3, t.col_offset + 5));
            let (lat, lon) = geo.pixel_to_latlon(t.row_offset as f64, t.col_offset as f64);
            assert!((t.grid.geometry().origin_lat - lat).abs() < 1e-12);
            assert!((t.grid.geometry().origin_lon - lon).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn coverage_matches_offset_arithmetic(rows in 8usize..80, cols in 8usize..80, tile in 2usize..8, div in 1usize..4) {
            let stride = (tile / div).max(1);
            let counts = coverage(rows, cols, tile, stride);
            let ro = tile_offsets(rows, tile, stride);
            let co = tile_offsets(cols, tile, stride);
            prop_assert!(ro.windows(2).all(|w| w[0] < w[1]));
            for r in 0..rows {
                let nr = ro.iter().filter(|&&o| o <= r && r < o + tile).count() as u32;
                for c in 0..cols {
                    let nc = co.iter().filter(|&&o| o <= c && c < o + tile).count() as u32;
                    prop_assert!(counts[r * cols + c] >= 1);
                    prop_assert_eq!(counts[r * cols + c], nr * nc);
                }
            }
        }
    }
}
