//! Square windows around pixels, cut from a mirror-padded copy of the cube.

use std::sync::Arc;

use crate::data::cube::{LabelRaster, SpectralCube};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Reflection without repeating the edge sample: index -1 maps to 1.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

#[derive(Debug)]
struct Padded {
    bands: usize,
    rows: usize,
    cols: usize,
    size: usize,
    /// `[bands, rows + size - 1, cols + size - 1]`
    data: Vec<f64>,
}

impl Padded {
    fn new(cube: &SpectralCube, size: usize) -> Self {
        let r = (size / 2) as isize;
        let (pr, pc) = (cube.rows() + size - 1, cube.cols() + size - 1);
        let mut data = Vec::with_capacity(cube.bands() * pr * pc);
        for b in 0..cube.bands() {
            for y in 0..pr {
                let sy = mirror(y as isize - r, cube.rows());
                for x in 0..pc {
                    data.push(cube.get(b, sy, mirror(x as isize - r, cube.cols())));
                }
            }
        }
        Self {
            bands: cube.bands(),
            rows: cube.rows(),
            cols: cube.cols(),
            size,
            data,
        }
    }

    /// Writes the `[bands, size, size]` window centered on `(row, col)`.
    fn window_into<T: Scalar>(&self, row: usize, col: usize, out: &mut [T]) {
        let pc = self.cols + self.size - 1;
        let plane = (self.rows + self.size - 1) * pc;
        let h = self.size;
        for b in 0..self.bands {
            for dy in 0..h {
                let src = &self.data[b * plane + (row + dy) * pc + col..][..h];
                let dst = &mut out[(b * h + dy) * h..][..h];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = T::of(s);
                }
            }
        }
    }
}

/// A materialized `[bands, size, size]` window.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub values: Vec<f64>,
    pub center_row: usize,
    pub center_col: usize,
    pub label: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub row: usize,
    pub col: usize,
    /// Class id, or 0 for samples drawn from unlabeled pixels.
    pub label: u16,
}

/// Patch centers over one cube. Windows are cut on demand, so a set costs
/// one padded copy of the cube however many samples it holds.
#[derive(Debug, Clone)]
pub struct PatchSet {
    source: Arc<Padded>,
    samples: Vec<Sample>,
}

fn check_size(cube: &SpectralCube, size: usize) -> Result<()> {
    if size.is_multiple_of(2) {
        return Err(Error::shape("patches", format!("patch size must be odd, got {size}")));
    }
    let limit = cube.rows().min(cube.cols());
    if size > limit {
        return Err(Error::shape(
            "patches",
            format!("patch size {size} exceeds the smaller scene extent {limit}"),
        ));
    }
    Ok(())
}

impl PatchSet {
    /// One sample per labeled pixel, in row-major order.
    pub fn labeled(cube: &SpectralCube, labels: &LabelRaster, size: usize) -> Result<Self> {
        labels.matches(cube)?;
        check_size(cube, size)?;
        let samples = (0..cube.rows())
            .flat_map(|row| (0..cube.cols()).map(move |col| (row, col)))
            .filter_map(|(row, col)| match labels.get(row, col) {
                0 => None,
                label => Some(Sample { row, col, label }),
            })
            .collect();
        Ok(Self {
            source: Arc::new(Padded::new(cube, size)),
            samples,
        })
    }

    /// One sample per pixel, labeled or not.
    pub fn all_pixels(cube: &SpectralCube, labels: Option<&LabelRaster>, size: usize) -> Result<Self> {
        if let Some(l) = labels {
            l.matches(cube)?;
        }
        check_size(cube, size)?;
        let samples = (0..cube.rows())
            .flat_map(|row| (0..cube.cols()).map(move |col| (row, col)))
            .map(|(row, col)| Sample {
                row,
                col,
                label: labels.map_or(0, |l| l.get(row, col)),
            })
            .collect();
        Ok(Self {
            source: Arc::new(Padded::new(cube, size)),
            samples,
        })
    }

    /// Samples at the given positions, sharing the padded cube.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            source: Arc::clone(&self.source),
            samples: indices.iter().map(|&i| self.samples[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn bands(&self) -> usize {
        self.source.bands
    }

    pub fn size(&self) -> usize {
        self.source.size
    }

    pub fn scene_dims(&self) -> (usize, usize) {
        (self.source.rows, self.source.cols)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> Sample {
        self.samples[i]
    }

    /// Row-major pixel index of a sample's center.
    pub fn pixel_index(&self, i: usize) -> usize {
        let s = self.samples[i];
        s.row * self.source.cols + s.col
    }

    pub fn patch(&self, i: usize) -> Patch {
        let s = self.samples[i];
        let h = self.source.size;
        let mut values = vec![0.0; self.source.bands * h * h];
        self.source.window_into(s.row, s.col, &mut values);
        Patch {
            values,
            center_row: s.row,
            center_col: s.col,
            label: s.label,
        }
    }

    /// Stacks the selected windows into a `[B, bands, size, size]` tensor.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let h = self.source.size;
        let per = self.source.bands * h * h;
        let mut data = vec![T::zero(); indices.len() * per];
        for (chunk, &i) in data.chunks_mut(per).zip(indices) {
            let s = self.samples[i];
            self.source.window_into(s.row, s.col, chunk);
        }
        Tensor::new(&[indices.len(), self.source.bands, h, h], data).expect("extent arithmetic")
    }

    /// 0-based class indices of the selected samples.
    pub fn class_indices(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| match self.samples[i].label {
                0 => Err(Error::Empty(format!("sample {i} is unlabeled"))),
                l => Ok(l as usize - 1),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_cube(bands: usize, rows: usize, cols: usize) -> SpectralCube {
        let data = (0..bands * rows * cols).map(|i| i as f64).collect();
        SpectralCube::new(bands, rows, cols, data).unwrap()
    }

    #[test]
    fn mirror_reflects_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| mirror(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(mirror(-2, 1), 0);
    }

    #[test]
    fn one_patch_per_labeled_pixel() {
        let cube = ramp_cube(3, 9, 9);
        let labels = LabelRaster::new(9, 9, vec![1; 81]).unwrap();
        let set = PatchSet::labeled(&cube, &labels, 7).unwrap();
        assert_eq!(set.len(), 81);
        assert_eq!(set.patch(40).values.len(), 3 * 49);
        assert_eq!(set.batch::<f64>(&[0, 1]).shape(), &[2, 3, 7, 7]);
    }

    #[test]
    fn corner_patch_is_mirrored_around_its_center() {
        let cube = ramp_cube(2, 9, 9);
        let labels = LabelRaster::new(9, 9, vec![1; 81]).unwrap();
        let p = PatchSet::labeled(&cube, &labels, 7).unwrap().patch(0);
        let at = |b: usize, y: usize, x: usize| p.values[(b * 7 + y) * 7 + x];
        assert_eq!((p.center_row, p.center_col), (0, 0));
        for b in 0..2 {
            assert_eq!(at(b, 3, 3), cube.get(b, 0, 0));
            // window row 0 is cube row 3 reflected
            assert_eq!(at(b, 0, 3), cube.get(b, 3, 0));
            assert_eq!(at(b, 3, 0), cube.get(b, 0, 3));
            assert_eq!(at(b, 6, 6), cube.get(b, 3, 3));
        }
    }

    #[test]
    fn unlabeled_raster_gives_empty_set() {
        let cube = ramp_cube(2, 5, 5);
        let labels = LabelRaster::new(5, 5, vec![0; 25]).unwrap();
        assert!(PatchSet::labeled(&cube, &labels, 3).unwrap().is_empty());
    }

    #[test]
    fn bad_sizes() {
        let cube = ramp_cube(2, 5, 6);
        let labels = LabelRaster::new(5, 6, vec![1; 30]).unwrap();
        assert!(PatchSet::labeled(&cube, &labels, 4).is_err());
        assert!(PatchSet::labeled(&cube, &labels, 7).is_err());
        assert!(PatchSet::labeled(&cube, &labels, 5).is_ok());
    }

    proptest! {
        #[test]
        fn translation_consistent(dr in 0usize..4, dc in 0usize..4, r in 3usize..8, c in 3usize..8) {
            // a 10x10 scene and its copy shifted by (dr, dc) inside a 14x14 frame
            let base = ramp_cube(2, 10, 10);
            let mut data = vec![0.0; 2 * 14 * 14];
            for b in 0..2 {
                for y in 0..10 {
                    for x in 0..10 {
                        data[(b * 14 + y + dr) * 14 + x + dc] = base.get(b, y, x);
                    }
                }
            }
            let shifted = SpectralCube::new(2, 14, 14, data).unwrap();
            let mut l1 = vec![0u16; 100];
            l1[r * 10 + c] = 1;
            let mut l2 = vec![0u16; 196];
            l2[(r + dr) * 14 + c + dc] = 1;
            let p1 = PatchSet::labeled(&base, &LabelRaster::new(10, 10, l1).unwrap(), 5).unwrap().patch(0);
            let p2 = PatchSet::labeled(&shifted, &LabelRaster::new(14, 14, l2).unwrap(), 5).unwrap().patch(0);
            prop_assert_eq!((p2.center_row, p2.center_col), (p1.center_row + dr, p1.center_col + dc));
            prop_assert_eq!(p1.values, p2.values);
        }
    }
}
