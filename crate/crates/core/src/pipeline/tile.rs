//! Tile-wise enhancement of whole micrographs with central-crop stitching.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::imagecore::GrayImage;
use crate::ttsr::{Model, PreparedReference};

/// Upscaling factor of the model.
pub const FACTOR: usize = 4;

/// Tiling of an LR micrograph: `tile`-sized inputs overlapping by `overlap`
/// pixels per side, of which only the central `core = tile − 2·overlap`
/// (times 4 in the output) is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub tile: usize,
    pub overlap: usize,
}

impl Default for TilePlan {
    fn default() -> Self {
        Self {
            tile: 32,
            overlap: 4,
        }
    }
}

/// Position of one tile; `x`, `y` index the padded LR image and equal the
/// core's top-left in the unpadded image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSpec {
    pub row: usize,
    pub col: usize,
    pub x: usize,
    pub y: usize,
}

impl TilePlan {
    pub fn core(&self) -> usize {
        self.tile - 2 * self.overlap
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile <= 2 * self.overlap {
            return Err(param(format!(
                "tile {} leaves no core with overlap {}",
                self.tile, self.overlap
            )));
        }
        Ok(())
    }

    /// Tile rows and columns covering a `w × h` LR image.
    pub fn grid(&self, w: usize, h: usize) -> (usize, usize) {
        let c = self.core();
        (h.div_ceil(c), w.div_ceil(c))
    }

    /// Tiles in row-major order.
    pub fn tiles(&self, w: usize, h: usize) -> Vec<TileSpec> {
        let c = self.core();
        let (rows, cols) = self.grid(w, h);
        (0..rows)
            .flat_map(|row| {
                (0..cols).map(move |col| TileSpec {
                    row,
                    col,
                    x: col * c,
                    y: row * c,
                })
            })
            .collect()
    }

    /// `lr` padded by edge replication so every tile lies inside it.
    pub fn pad(&self, lr: &GrayImage) -> Result<GrayImage> {
        let c = self.core();
        let (rows, cols) = self.grid(lr.width(), lr.height());
        lr.pad_replicate(
            self.overlap,
            self.overlap,
            cols * c + 2 * self.overlap,
            rows * c + 2 * self.overlap,
        )
    }
}

/// The kept HR core of one tile.
pub fn tile_core(
    model: &Model,
    refs: &[PreparedReference],
    padded: &GrayImage,
    t: TileSpec,
    plan: &TilePlan,
) -> Result<GrayImage> {
    let input = padded.crop(t.x, t.y, plan.tile, plan.tile)?;
    let sr = model.enhance_patch(&input, refs)?;
    let o = plan.overlap * FACTOR;
    sr.crop(o, o, plan.core() * FACTOR, plan.core() * FACTOR)
}

/// Enhances `lr` tile by tile, selecting a reference per tile, and places
/// each tile's core at its grid position. The output is exactly 4× `lr`.
pub fn enhance_micrograph(
    lr: &GrayImage,
    model: &Model,
    refs: &[PreparedReference],
    plan: &TilePlan,
) -> Result<GrayImage> {
    plan.validate()?;
    if refs.is_empty() {
        return Err(Error::Config(
            "enhancement needs at least one reference".into(),
        ));
    }
    let padded = plan.pad(lr)?;
    let tiles = plan.tiles(lr.width(), lr.height());
    let cores = tiles
        .par_iter()
        .map(|&t| tile_core(model, refs, &padded, t, plan))
        .collect::<Result<Vec<_>>>()?;
    let cs = plan.core() * FACTOR;
    let (ow, oh) = (lr.width() * FACTOR, lr.height() * FACTOR);
    let mut out = vec![0.0; ow * oh];
    for (t, core) in tiles.iter().zip(&cores) {
        let (x0, y0) = (t.x * FACTOR, t.y * FACTOR);
        for y in 0..cs.min(oh - y0) {
            let w = cs.min(ow - x0);
            out[(y0 + y) * ow + x0..(y0 + y) * ow + x0 + w]
                .copy_from_slice(&core.pixels()[y * cs..y * cs + w]);
        }
    }
    Ok(GrayImage::new(ow, oh, out)?
        .with_bit_depth(lr.bit_depth())
        .with_pixel_size(lr.pixel_size_nm().map(|p| p / FACTOR as f64)))
}

/// Mean absolute jump between neighbouring pixels straddling a core
/// boundary, against the same statistic for all other neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeamStats {
    pub seam: f64,
    pub interior: f64,
    pub ratio: f64,
}

/// Seam statistic of a stitched output for cores of `core_hr` pixels.
pub fn seam_statistic(img: &GrayImage, core_hr: usize) -> Result<SeamStats> {
    let (w, h) = img.dims();
    if core_hr == 0 || (w <= core_hr && h <= core_hr) {
        return Err(param("image has no core boundary"));
    }
    let (mut seam, mut ns, mut inner, mut ni) = (0.0, 0usize, 0.0, 0usize);
    let mut add = |boundary: bool, d: f64| {
        if boundary {
            seam += d;
            ns += 1;
        } else {
            inner += d;
            ni += 1;
        }
    };
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                add(
                    (x + 1) % core_hr == 0,
                    (img.get(x + 1, y) - img.get(x, y)).abs(),
                );
            }
            if y + 1 < h {
                add(
                    (y + 1) % core_hr == 0,
                    (img.get(x, y + 1) - img.get(x, y)).abs(),
                );
            }
        }
    }
    let (seam, interior) = (seam / ns as f64, inner / ni as f64);
    Ok(SeamStats {
        seam,
        interior,
        ratio: seam / interior,
    })
}
