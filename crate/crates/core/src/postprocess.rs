//! Whole-image pore intensity maps and local-maximum pore detection.

use std::io::Write;
use std::ops::Deref;
use std::path::Path;

use crate::data::{tile_for_inference, GrayImage, Grid, Pore, PoreSet, TileLayout, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::par;
use crate::tensor::{Real, Shape, Tensor};

/// Default maximum-filter window.
pub const DETECT_WINDOW: usize = 5;
/// Tiles pushed through the network per inference batch.
const TILE_BATCH: usize = 8;

/// Real-valued pore intensity map (unbounded network output).
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap(Grid);

impl IntensityMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if grid.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::input("intensity map contains non-finite values"));
        }
        Ok(IntensityMap(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

impl Deref for IntensityMap {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    /// A pixel must strictly exceed this value to count as a pore.
    pub threshold: Real,
    /// Odd maximum-filter window side.
    pub window: usize,
    /// Merge detections within Chebyshev distance `(window − 1) / 2` into
    /// their centroid.
    pub dedupe: bool,
}

impl DetectConfig {
    pub fn new(threshold: Real) -> Self {
        DetectConfig {
            threshold,
            window: DETECT_WINDOW,
            dedupe: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_window(self.window)
    }
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Config(format!(
            "window {window} must be odd and >= 3"
        )));
    }
    Ok(())
}

/// Places per-tile maps at their grid offsets and crops the padding.
pub fn stitch(patch_maps: &[Grid], layout: &TileLayout) -> Result<IntensityMap> {
    let grid = &layout.grid;
    if patch_maps.len() != grid.len() {
        return Err(Error::input(format!(
            "stitch needs {} patch maps, got {}",
            grid.len(),
            patch_maps.len()
        )));
    }
    let (ph, pw) = layout.padded_dims();
    let mut full = Grid::new(ph, pw, 0.0);
    for (i, m) in patch_maps.iter().enumerate() {
        if m.dims() != (grid.size, grid.size) {
            return Err(Error::input(format!(
                "patch map {i} is {:?}, expected {}x{}",
                m.dims(),
                grid.size,
                grid.size
            )));
        }
        let (r, c) = grid.offset(i);
        full.paste(m, r, c)?;
    }
    let (h, w) = layout.original;
    let out = if (h, w) == (ph, pw) {
        full
    } else {
        full.crop(0, 0, h, w)?
    };
    IntensityMap::new(out)
}

/// Tile → network (inference mode) → stitch, for a whole image.
pub fn predict_intensity_map(net: &Network, img: &GrayImage) -> Result<IntensityMap> {
    predict_with_tile_size(net, img, PATCH_SIZE)
}

pub fn predict_with_tile_size(
    net: &Network,
    img: &GrayImage,
    tile: usize,
) -> Result<IntensityMap> {
    let tiles = tile_for_inference(img.grid(), tile)?;
    let mut maps = Vec::with_capacity(tiles.tiles.len());
    for chunk in tiles.tiles.chunks(TILE_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * tile * tile);
        for t in chunk {
            data.extend_from_slice(t.data());
        }
        let x = Tensor::from_vec(Shape::new(chunk.len(), 1, tile, tile)?, data)?;
        let y = net.infer(&x)?;
        for n in 0..chunk.len() {
            maps.push(Grid::from_vec(tile, tile, y.sample(n).to_vec())?);
        }
    }
    stitch(&maps, &tiles.layout)
}

/// `out[i,j] = max` of `map` over the `window×window` neighbourhood centered
/// at `(i,j)`, clipped at the borders.
pub fn max_filter(map: &Grid, window: usize) -> Result<Grid> {
    check_window(window)?;
    let (h, w) = map.dims();
    let r = window / 2;
    // separable: rows then columns
    let mut rows = Grid::new(h, w, 0.0);
    par::for_each_chunk_mut(rows.data_mut(), w.max(1), |i, out| {
        let src = map.row(i);
        for (j, o) in out.iter_mut().enumerate() {
            let lo = j.saturating_sub(r);
            let hi = (j + r).min(w - 1);
            *o = src[lo..=hi].iter().cloned().fold(Real::NEG_INFINITY, Real::max);
        }
    });
    let mut out = Grid::new(h, w, 0.0);
    par::for_each_chunk_mut(out.data_mut(), w.max(1), |i, dst| {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(h - 1);
        dst.copy_from_slice(rows.row(lo));
        for k in lo + 1..=hi {
            for (d, &v) in dst.iter_mut().zip(rows.row(k)) {
                *d = d.max(v);
            }
        }
    });
    Ok(out)
}

/// Pixels equal to their max-filtered value and strictly above the
/// threshold. Plateau pixels are all reported unless `dedupe` is set.
pub fn detect_pores(map: &Grid, cfg: &DetectConfig) -> Result<PoreSet> {
    cfg.validate()?;
    let maxed = max_filter(map, cfg.window)?;
    let (h, w) = map.dims();
    let mut hits = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let v = map.get(i, j);
            if v == maxed.get(i, j) && v > cfg.threshold {
                hits.push((i, j));
            }
        }
    }
    let pores = if cfg.dedupe {
        merge_clusters(&hits, cfg.window / 2)
    } else {
        hits.into_iter()
            .map(|(i, j)| Pore::new(i as f64, j as f64))
            .collect()
    };
    Ok(pores)
}

/// Groups detections linked by Chebyshev distance `<= reach` and returns
/// each group's centroid, ordered by first member.
fn merge_clusters(hits: &[(usize, usize)], reach: usize) -> PoreSet {
    let mut parent: Vec<usize> = (0..hits.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for a in 0..hits.len() {
        // hits are in raster order, so only later rows within reach matter
        for b in a + 1..hits.len() {
            if hits[b].0 > hits[a].0 + reach {
                break;
            }
            if hits[a].1.abs_diff(hits[b].1) <= reach {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut sums: Vec<(f64, f64, usize)> = vec![(0.0, 0.0, 0); hits.len()];
    for (i, &(r, c)) in hits.iter().enumerate() {
        let root = find(&mut parent, i);
        sums[root].0 += r as f64;
        sums[root].1 += c as f64;
        sums[root].2 += 1;
    }
    sums.into_iter()
        .filter(|s| s.2 > 0)
        .map(|(r, c, n)| Pore::new(r / n as f64, c / n as f64))
        .collect()
}

/// Raw little-endian dump: `u64` height, `u64` width, then `f64` values in
/// row-major order.
pub fn write_raw_map(map: &Grid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(16 + 8 * map.data().len());
    bytes.extend_from_slice(&(map.height() as u64).to_le_bytes());
    bytes.extend_from_slice(&(map.width() as u64).to_le_bytes());
    for &v in map.data() {
        bytes.extend_from_slice(&(v as f64).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raw_map(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::format(path, "raw map shorter than its header"));
    }
    let h = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let w = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if h.checked_mul(w).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
        return Err(Error::format(
            path,
            format!("raw map header {h}x{w} does not match {} data bytes", body.len()),
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as Real)
        .collect();
    Grid::from_vec(h, w, data)
}

/// Affine rescaling used for 8-bit map exports: `value ≈ offset + scale·pixel`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapScale {
    pub offset: f64,
    pub scale: f64,
}

/// Writes the map as an 8-bit PGM stretched to `[0, 255]` and a sidecar text
/// file holding the inverse mapping.
pub fn write_scaled_map(
    map: &Grid,
    pgm_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<MapScale> {
    let (lo, hi) = (map.min_value() as f64, map.max_value() as f64);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| (((v as f64 - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let img = GrayImage::from_u8(map.height(), map.width(), &pixels)?;
    crate::data::write_pgm(&img, pgm_path)?;
    let scale = MapScale {
        offset: lo,
        scale: span / 255.0,
    };
    let sidecar_path = sidecar_path.as_ref();
    std::fs::write(
        sidecar_path,
        format!(
            "# value = offset + scale * pixel\noffset {}\nscale {}\n",
            scale.offset, scale.scale
        ),
    )
    .map_err(|e| Error::io(sidecar_path, e))?;
    Ok(scale)
}

/// Radius of the circles drawn around detections in overlays.
const OVERLAY_RADIUS: f64 = 3.0;

/// Renders the grayscale image as RGB with each pore circled in green.
pub fn render_overlay(img: &GrayImage, pores: &PoreSet) -> Vec<u8> {
    let (h, w) = img.dims();
    let mut rgb: Vec<u8> = img.to_u8().into_iter().flat_map(|v| [v, v, v]).collect();
    let steps = 32;
    for p in pores.iter() {
        for k in 0..steps {
            let a = k as f64 * std::f64::consts::TAU / steps as f64;
            let r = (p.row + OVERLAY_RADIUS * a.sin()).round();
            let c = (p.col + OVERLAY_RADIUS * a.cos()).round();
            if r >= 0.0 && c >= 0.0 && (r as usize) < h && (c as usize) < w {
                let i = 3 * (r as usize * w + c as usize);
                rgb[i..i + 3].copy_from_slice(&[0, 255, 0]);
            }
        }
    }
    rgb
}

/// Writes [`render_overlay`] output as a binary PPM (P6).
pub fn write_overlay(img: &GrayImage, pores: &PoreSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend_from_slice(&render_overlay(img, pores));
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}
