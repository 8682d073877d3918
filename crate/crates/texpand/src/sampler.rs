//! Self-supervised training-pair extraction and diversification inputs.
//!
//! Each training sample is a (source, target) pair: a k x k source block
//! uniformly placed inside a 2k x 2k target block, itself uniformly placed
//! inside the exemplar. The generator learns to map the source onto the
//! target.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::ImagePlane;

#[derive(Debug, Clone)]
pub struct BlockPair {
    pub source: ImagePlane,
    pub target: ImagePlane,
    /// Position of the source window inside the target, (row, col).
    pub source_offset: (usize, usize),
    /// Position of the target window inside the exemplar, (row, col).
    pub target_offset: (usize, usize),
    pub k: usize,
}

/// A tile decomposition of an exemplar together with the permutation applied
/// to its tiles. `permutation[i] = j` places source tile `j` at slot `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub permutation: Vec<usize>,
}

impl TileGrid {
    pub fn inverse(&self) -> TileGrid {
        let mut inv = vec![0; self.permutation.len()];
        for (slot, &src) in self.permutation.iter().enumerate() {
            inv[src] = slot;
        }
        TileGrid {
            permutation: inv,
            ..self.clone()
        }
    }
}

/// Uniformly sample a (source, target) training pair from the exemplar.
pub fn sample_block_pair(
    exemplar: &ImagePlane,
    k: usize,
    rng: &mut impl Rng,
) -> Result<BlockPair> {
    let (h, w) = (exemplar.height(), exemplar.width());
    if h < 2 * k || w < 2 * k {
        return Err(Error::ExemplarTooSmall {
            height: h,
            width: w,
            k,
            min: 2 * k,
        });
    }
    let target_offset = (
        rng.random_range(0..=h - 2 * k),
        rng.random_range(0..=w - 2 * k),
    );
    let source_offset = (rng.random_range(0..=k), rng.random_range(0..=k));
    let target = crop(
        exemplar,
        (target_offset.0 as i64, target_offset.1 as i64),
        (2 * k, 2 * k),
    )?;
    let source = crop(
        &target,
        (source_offset.0 as i64, source_offset.1 as i64),
        (k, k),
    )?;
    Ok(BlockPair {
        source,
        target,
        source_offset,
        target_offset,
        k,
    })
}

/// Exact subwindow copy.
pub fn crop(img: &ImagePlane, offset: (i64, i64), size: (usize, usize)) -> Result<ImagePlane> {
    let (row, col) = offset;
    let (h, w) = size;
    let in_bounds = row >= 0
        && col >= 0
        && row as usize + h <= img.height()
        && col as usize + w <= img.width();
    if !in_bounds {
        return Err(Error::CropOutOfBounds {
            row,
            col,
            h,
            w,
            img_h: img.height(),
            img_w: img.width(),
        });
    }
    let (row, col) = (row as usize, col as usize);
    let mut out = ImagePlane::new(img.channels(), h, w);
    for c in 0..img.channels() {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, img.get(c, row + y, col + x));
            }
        }
    }
    Ok(out)
}

/// Split the exemplar into a rows x cols tile grid and shuffle the tiles.
pub fn shuffle_tiles(
    exemplar: &ImagePlane,
    rows: usize,
    cols: usize,
    rng: &mut impl Rng,
) -> Result<(ImagePlane, TileGrid)> {
    if rows == 0 || cols == 0 || exemplar.height() % rows != 0 || exemplar.width() % cols != 0 {
        return Err(Error::IndivisibleTiles {
            height: exemplar.height(),
            width: exemplar.width(),
            rows,
            cols,
        });
    }
    let mut permutation: Vec<usize> = (0..rows * cols).collect();
    // Fisher-Yates over tile slots.
    for i in (1..permutation.len()).rev() {
        let j = rng.random_range(0..=i);
        permutation.swap(i, j);
    }
    let grid = TileGrid {
        rows,
        cols,
        tile_h: exemplar.height() / rows,
        tile_w: exemplar.width() / cols,
        permutation,
    };
    let shuffled = apply_tile_permutation(exemplar, &grid)?;
    Ok((shuffled, grid))
}

/// Rearrange tiles according to an existing grid's permutation.
pub fn apply_tile_permutation(img: &ImagePlane, grid: &TileGrid) -> Result<ImagePlane> {
    if grid.rows * grid.tile_h != img.height() || grid.cols * grid.tile_w != img.width() {
        return Err(Error::DimensionMismatch(format!(
            "tile grid {}x{} tiles of {}x{} does not cover image {}x{}",
            grid.rows,
            grid.cols,
            grid.tile_h,
            grid.tile_w,
            img.height(),
            img.width()
        )));
    }
    let mut seen = vec![false; grid.permutation.len()];
    for &p in &grid.permutation {
        if p >= seen.len() || seen[p] {
            return Err(Error::msg("tile permutation is not a bijection"));
        }
        seen[p] = true;
    }
    let mut out = ImagePlane::new(img.channels(), img.height(), img.width());
    for (slot, &src) in grid.permutation.iter().enumerate() {
        let (dst_r, dst_c) = (slot / grid.cols, slot % grid.cols);
        let (src_r, src_c) = (src / grid.cols, src % grid.cols);
        for c in 0..img.channels() {
            for y in 0..grid.tile_h {
                for x in 0..grid.tile_w {
                    out.set(
                        c,
                        dst_r * grid.tile_h + y,
                        dst_c * grid.tile_w + x,
                        img.get(c, src_r * grid.tile_h + y, src_c * grid.tile_w + x),
                    );
                }
            }
        }
    }
    Ok(out)
}
