//! PNG export of local masks and global maps, one pixel per cell.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CellIndex;
use crate::mapstore::GlobalMap;
use crate::raster::{Category, CategorySet, LocalMask, NUM_CATEGORIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Palette {
    pub divider: [u8; 3],
    pub crossing: [u8; 3],
    pub boundary: [u8; 3],
    pub background: [u8; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Self { divider: [255, 0, 0], crossing: [0, 255, 0], boundary: [0, 0, 255], background: [255, 255, 255] }
    }
}

impl Palette {
    pub fn validate(&self) -> Result<()> {
        let c = self.colors();
        if c[0] == c[1] || c[1] == c[2] || c[0] == c[2] {
            return Err(Error::invalid("palette colors must be distinct"));
        }
        Ok(())
    }

    pub fn color(&self, c: Category) -> [u8; 3] {
        self.colors()[c.index()]
    }

    fn colors(&self) -> [[u8; 3]; NUM_CATEGORIES] {
        [self.divider, self.crossing, self.boundary]
    }

    /// Background for an empty cell, otherwise the saturating sum of the
    /// colors of every present category.
    pub fn blend(&self, set: CategorySet) -> [u8; 3] {
        if set.is_empty() {
            return self.background;
        }
        self.scaled(set.to_array().map(|b| if b != 0 { 255 } else { 0 }))
    }

    /// Saturating sum of category colors, each scaled by `weights[c] / 255`.
    fn scaled(&self, weights: [u8; NUM_CATEGORIES]) -> [u8; 3] {
        let mut out = [0u16; 3];
        for (color, &w) in self.colors().iter().zip(&weights) {
            for ch in 0..3 {
                out[ch] += (u16::from(color[ch]) * u16::from(w) + 127) / 255;
            }
        }
        out.map(|v| v.min(255) as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    /// Categories whose evidence exceeds the retrieval threshold, blended
    /// over the background.
    Thresholded,
    /// Evidence values as channel intensities on black.
    Evidence,
}

impl RenderMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "thresholded" => Some(Self::Thresholded),
            "evidence" => Some(Self::Evidence),
            _ => None,
        }
    }
}

/// `W x H` image with ego-forward pointing up and ego-left to the left.
pub fn render_mask(mask: &LocalMask, palette: &Palette) -> RgbImage {
    let (h, w) = (mask.height(), mask.width());
    RgbImage::from_fn(w as u32, h as u32, |col, row| {
        let i = h - 1 - row as usize;
        let j = w - 1 - col as usize;
        Rgb(palette.blend(mask.bits(i, j)))
    })
}

/// Image over every allocated tile, north up; 1x1 background if nothing is allocated.
pub fn render_global(map: &GlobalMap, palette: &Palette, mode: RenderMode) -> RgbImage {
    let Some((lo, hi)) = map.allocated_cell_bounds() else {
        return RgbImage::from_pixel(1, 1, Rgb(palette.background));
    };
    let width = (hi.ix - lo.ix + 1) as u32;
    let height = (hi.iy - lo.iy + 1) as u32;
    let s_th = map.params().s_th;
    RgbImage::from_fn(width, height, |col, row| {
        let cell = CellIndex::new(lo.ix + i64::from(col), hi.iy - i64::from(row));
        let values = map.values(cell);
        Rgb(match mode {
            RenderMode::Thresholded => {
                let mut set = CategorySet::EMPTY;
                for c in Category::ALL {
                    if values[c.index()] > s_th {
                        set.insert(c);
                    }
                }
                palette.blend(set)
            }
            RenderMode::Evidence => palette.scaled(values),
        })
    })
}

pub fn save_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    image.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// PNG bytes of an image, for callers that want to hash or compare output.
pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    image.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}
