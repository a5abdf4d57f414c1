//! Overlapping training patches and non-overlapping inference tiles.

use super::grid::{GrayImage, Grid};
use super::labels::LabelMap;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Side length of square network patches.
pub const PATCH_SIZE: usize = 80;
/// Step between overlapping training patches.
pub const TRAIN_STRIDE: usize = 10;

/// Regular grid of square patches; patch `i` has its top-left corner at
/// `((i / cols)·stride, (i % cols)·stride)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub size: usize,
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn offset(&self, i: usize) -> (usize, usize) {
        ((i / self.cols) * self.stride, (i % self.cols) * self.stride)
    }

    pub fn offsets(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len()).map(|i| self.offset(i))
    }
}

/// `(⌊(h−size)/stride⌋+1) × (⌊(w−size)/stride⌋+1)` patches.
pub fn training_grid(h: usize, w: usize, size: usize, stride: usize) -> Result<PatchGrid> {
    if size == 0 || stride == 0 {
        return Err(Error::input("patch size and stride must be positive"));
    }
    if h < size || w < size {
        return Err(Error::input(format!(
            "image {h}x{w} is smaller than the {size}x{size} patch"
        )));
    }
    Ok(PatchGrid {
        size,
        stride,
        rows: (h - size) / stride + 1,
        cols: (w - size) / stride + 1,
    })
}

/// Aligned image/label patches of one image, materialized on demand.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPatches<'a> {
    pub image: &'a GrayImage,
    pub label: &'a LabelMap,
    pub grid: PatchGrid,
}

impl TrainingPatches<'_> {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn pair(&self, i: usize) -> Result<(Grid, Grid)> {
        if i >= self.len() {
            return Err(Error::input(format!("patch {i} of {}", self.len())));
        }
        let (r, c) = self.grid.offset(i);
        let s = self.grid.size;
        Ok((self.image.crop(r, c, s, s)?, self.label.crop(r, c, s, s)?))
    }
}

pub fn extract_training_patches<'a>(
    image: &'a GrayImage,
    label: &'a LabelMap,
    size: usize,
    stride: usize,
) -> Result<TrainingPatches<'a>> {
    if image.dims() != label.dims() {
        return Err(Error::input(format!(
            "image {:?} and label {:?} differ in size",
            image.dims(),
            label.dims()
        )));
    }
    let grid = training_grid(image.height(), image.width(), size, stride)?;
    Ok(TrainingPatches { image, label, grid })
}

/// One training patch: source image index and top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRef {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

/// Training patches pooled over many images.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    size: usize,
    stride: usize,
    images: Vec<GrayImage>,
    labels: Vec<LabelMap>,
    refs: Vec<PatchRef>,
}

impl TrainingSet {
    pub fn new(size: usize, stride: usize) -> Self {
        TrainingSet {
            size,
            stride,
            images: Vec::new(),
            labels: Vec::new(),
            refs: Vec::new(),
        }
    }

    /// Adds every patch of one image; returns how many were added.
    pub fn add(&mut self, image: GrayImage, label: LabelMap) -> Result<usize> {
        let grid = extract_training_patches(&image, &label, self.size, self.stride)?.grid;
        let id = self.images.len();
        self.refs.extend(grid.offsets().map(|(row, col)| PatchRef {
            image: id,
            row,
            col,
        }));
        self.images.push(image);
        self.labels.push(label);
        Ok(grid.len())
    }

    pub fn patch_size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn patch_ref(&self, i: usize) -> PatchRef {
        self.refs[i]
    }

    /// Stacks patches `ids` into `(n,1,size,size)` input and label tensors.
    pub fn batch(&self, ids: &[usize]) -> Result<(Tensor, Tensor)> {
        let s = self.size;
        let shape = Shape::new(ids.len(), 1, s, s)?;
        let mut x = Vec::with_capacity(shape.len());
        let mut y = Vec::with_capacity(shape.len());
        for &i in ids {
            let p = *self
                .refs
                .get(i)
                .ok_or_else(|| Error::input(format!("patch {i} of {}", self.refs.len())))?;
            let (img, lab) = (&self.images[p.image], &self.labels[p.image]);
            for r in p.row..p.row + s {
                x.extend_from_slice(&img.row(r)[p.col..p.col + s]);
                y.extend_from_slice(&lab.row(r)[p.col..p.col + s]);
            }
        }
        Ok((Tensor::from_vec(shape, x)?, Tensor::from_vec(shape, y)?))
    }
}

/// Placement of non-overlapping tiles over an edge-replicated image: what
/// is needed to stitch per-tile outputs and crop back to the original size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileLayout {
    pub grid: PatchGrid,
    /// Original `(h, w)`.
    pub original: (usize, usize),
    /// Rows and columns appended at the bottom and right.
    pub padding: (usize, usize),
}

impl TileLayout {
    pub fn padded_dims(&self) -> (usize, usize) {
        (
            self.original.0 + self.padding.0,
            self.original.1 + self.padding.1,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileSet {
    pub layout: TileLayout,
    pub tiles: Vec<Grid>,
}

/// Pads `img` up to the next multiple of `size` by edge replication and cuts
/// it into a non-overlapping grid.
pub fn tile_for_inference(img: &Grid, size: usize) -> Result<TileSet> {
    if size == 0 {
        return Err(Error::input("tile size must be positive"));
    }
    let (h, w) = img.dims();
    if h == 0 || w == 0 {
        return Err(Error::input("cannot tile an empty image"));
    }
    let pad_r = (size - h % size) % size;
    let pad_c = (size - w % size) % size;
    let padded = if pad_r == 0 && pad_c == 0 {
        img.clone()
    } else {
        img.pad_replicate(pad_r, pad_c)
    };
    let grid = PatchGrid {
        size,
        stride: size,
        rows: (h + pad_r) / size,
        cols: (w + pad_c) / size,
    };
    let tiles = grid
        .offsets()
        .map(|(r, c)| padded.crop(r, c, size, size))
        .collect::<Result<Vec<_>>>()?;
    Ok(TileSet {
        layout: TileLayout {
            grid,
            original: (h, w),
            padding: (pad_r, pad_c),
        },
        tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::labels::make_label_map;
    use crate::data::pores::{Pore, PoreSet};
    use crate::tensor::Real;

    #[test]
    fn patch_counts() {
        let g = training_grid(480, 640, 80, 10).unwrap();
        assert_eq!((g.rows, g.cols), (41, 57));
        assert_eq!(g.len() * 90, 210_330);
        assert_eq!(training_grid(80, 80, 80, 10).unwrap().len(), 1);
        assert_eq!(training_grid(100, 80, 80, 10).unwrap().len(), 3);
        assert!(training_grid(79, 80, 80, 10).is_err());
    }

    #[test]
    fn image_and_label_patches_align() {
        let mut img = Grid::new(100, 90, 0.0);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i % 251) as Real / 251.0;
        }
        let img = GrayImage::new(img).unwrap();
        let pores = PoreSet::new(vec![Pore::new(50.0, 40.0)]);
        let label = make_label_map(100, 90, &pores, 5.0).unwrap();
        let patches = extract_training_patches(&img, &label, 80, 10).unwrap();
        assert_eq!(patches.len(), 3 * 2);
        for i in 0..patches.len() {
            let (r, c) = patches.grid.offset(i);
            let (xi, yi) = patches.pair(i).unwrap();
            assert_eq!(xi, img.crop(r, c, 80, 80).unwrap());
            assert_eq!(yi, label.crop(r, c, 80, 80).unwrap());
        }
        let mut set = TrainingSet::new(80, 10);
        assert_eq!(set.add(img.clone(), label.clone()).unwrap(), 6);
        let (x, y) = set.batch(&[5, 0]).unwrap();
        let (x5, y5) = patches.pair(5).unwrap();
        assert_eq!(&x.data()[..6400], x5.data());
        assert_eq!(&y.data()[..6400], y5.data());
    }

    #[test]
    fn small_image_rejected() {
        let img = GrayImage::filled(60, 90, 0.5).unwrap();
        let label = make_label_map(60, 90, &PoreSet::default(), 5.0).unwrap();
        assert!(extract_training_patches(&img, &label, 80, 10).is_err());
    }

    #[test]
    fn tiling_dimensions() {
        let t = tile_for_inference(&Grid::new(480, 640, 0.1), 80).unwrap();
        assert_eq!((t.layout.grid.rows, t.layout.grid.cols, t.tiles.len()), (6, 8, 48));
        assert_eq!(t.layout.padding, (0, 0));
        let t = tile_for_inference(&Grid::new(240, 320, 0.1), 80).unwrap();
        assert_eq!(t.tiles.len(), 12);
        let t = tile_for_inference(&Grid::new(90, 70, 0.1), 80).unwrap();
        assert_eq!(t.layout.padded_dims(), (160, 80));
        assert_eq!((t.layout.grid.rows, t.layout.grid.cols), (2, 1));
        assert_eq!(t.layout.padding, (70, 10));
    }

    #[test]
    fn tiles_partition_padded_image() {
        let mut g = Grid::new(90, 70, 0.0);
        for (i, v) in g.data_mut().iter_mut().enumerate() {
            *v = i as Real;
        }
        let t = tile_for_inference(&g, 40).unwrap();
        let padded = g.pad_replicate(t.layout.padding.0, t.layout.padding.1);
        let mut covered = vec![0u8; padded.data().len()];
        for (i, tile) in t.tiles.iter().enumerate() {
            let (r, c) = t.layout.grid.offset(i);
            assert_eq!(*tile, padded.crop(r, c, 40, 40).unwrap());
            for rr in r..r + 40 {
                for cc in c..c + 40 {
                    covered[rr * padded.width() + cc] += 1;
                }
            }
        }
        assert!(covered.iter().all(|&n| n == 1));
    }
}
