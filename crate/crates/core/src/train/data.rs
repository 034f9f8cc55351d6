//! Normalized image/response arrays ready for batching.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::field::Dataset;
use crate::gridmap::GridMap;
use crate::nn::{image_batch, Real, Tensor};

/// Inputs mapped onto the masked grid (inactive pixels zero) and
/// standardized outputs, both `f32` row-major.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub height: usize,
    pub width: usize,
    pub m: usize,
    /// `N x (H*W)`.
    pub images: Vec<f32>,
    /// `N x m`.
    pub y: Vec<f32>,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl PreparedData {
    /// Standardizes with the dataset's training statistics. `train_size`
    /// and `test_size` take a prefix of each split.
    pub fn from_dataset(ds: &Dataset, train_size: Option<usize>, test_size: Option<usize>) -> Result<Self> {
        let n_train = train_size.unwrap_or(ds.n_train);
        let n_test = test_size.unwrap_or(ds.n_test);
        if n_train > ds.n_train || n_test > ds.n_test {
            return Err(Error::Config(format!(
                "requested {n_train}/{n_test} train/test rows, dataset has {}/{}",
                ds.n_train, ds.n_test
            )));
        }
        let map = GridMap::from_mask(ds.height, ds.width, &ds.mask)?.with_fill(0.0);
        let rows: Vec<usize> = ds.train_rows().take(n_train).chain(ds.test_rows().take(n_test)).collect();
        let plane = ds.height * ds.width;
        let mut images = vec![0f32; rows.len() * plane];
        let mut y = Vec::with_capacity(rows.len() * ds.n_outputs);
        for (k, &i) in rows.iter().enumerate() {
            map.map_into(&ds.x_normalized(i), &mut images[k * plane..(k + 1) * plane])?;
            y.extend(ds.y_normalized(i).iter().map(|&v| v as f32));
        }
        Ok(Self {
            height: ds.height,
            width: ds.width,
            m: ds.n_outputs,
            images,
            y,
            train: 0..n_train,
            test: n_train..n_train + n_test,
        })
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Image batch and targets for the given row indices.
    pub fn batch<T: Real>(&self, rows: &[usize]) -> (Tensor<T>, Vec<T>) {
        let plane = self.plane();
        let mut px = Vec::with_capacity(rows.len() * plane);
        let mut y = Vec::with_capacity(rows.len() * self.m);
        for &i in rows {
            px.extend(self.images[i * plane..(i + 1) * plane].iter().map(|&v| T::of(f64::from(v))));
            y.extend(self.y[i * self.m..(i + 1) * self.m].iter().map(|&v| T::of(f64::from(v))));
        }
        (image_batch(px, rows.len(), self.height, self.width), y)
    }

    pub fn y_row(&self, i: usize) -> &[f32] {
        &self.y[i * self.m..(i + 1) * self.m]
    }
}
