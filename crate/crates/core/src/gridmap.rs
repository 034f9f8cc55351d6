//! Active-cell vectors to masked Cartesian images and back.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    height: usize,
    width: usize,
    active_index: Vec<usize>,
    mask: Vec<bool>,
    fill_value: f64,
}

impl GridMap {
    /// Builds a map from a row-major mask; active cells are enumerated in
    /// row-major order.
    pub fn from_mask(height: usize, width: usize, mask: &[bool]) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask has {} entries, image is {height}x{width}",
                mask.len()
            )));
        }
        let active_index = (0..mask.len()).filter(|&p| mask[p]).collect();
        Ok(Self {
            height,
            width,
            active_index,
            mask: mask.to_vec(),
            fill_value: 0.0,
        })
    }

    /// Builds a map from explicit pixel positions; entry `i` of a vector
    /// lands at `positions[i]`.
    pub fn from_positions(height: usize, width: usize, positions: Vec<usize>) -> Result<Self> {
        let mut mask = vec![false; height * width];
        for &p in &positions {
            if p >= mask.len() {
                return Err(Error::Dimension(format!("position {p} outside {height}x{width} image")));
            }
            if mask[p] {
                return Err(Error::Config(format!("position {p} listed twice")));
            }
            mask[p] = true;
        }
        Ok(Self {
            height,
            width,
            active_index: positions,
            mask,
            fill_value: 0.0,
        })
    }

    pub fn with_fill(mut self, fill_value: f64) -> Self {
        self.fill_value = fill_value;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n(&self) -> usize {
        self.active_index.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn active_index(&self) -> &[usize] {
        &self.active_index
    }

    pub fn fill_value(&self) -> f64 {
        self.fill_value
    }

    pub fn map_to_grid(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut img = vec![0.0; self.height * self.width];
        self.map_into(x, &mut img)?;
        Ok(img)
    }

    /// Writes the image for `x` into `out` (length `H * W`), converting to
    /// the output element type.
    pub fn map_into<T: Copy>(&self, x: &[f64], out: &mut [T]) -> Result<()>
    where
        f64: IntoLossy<T>,
    {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!(
                "vector has length {}, map expects {}",
                x.len(),
                self.n()
            )));
        }
        if out.len() != self.height * self.width {
            return Err(Error::Dimension(format!(
                "output buffer has {} pixels, image is {}x{}",
                out.len(),
                self.height,
                self.width
            )));
        }
        out.fill(self.fill_value.into_lossy());
        for (&p, &v) in self.active_index.iter().zip(x) {
            out[p] = v.into_lossy();
        }
        Ok(())
    }

    pub fn grid_to_vector(&self, img: &[f64]) -> Result<Vec<f64>> {
        if img.len() != self.height * self.width {
            return Err(Error::Dimension(format!(
                "image has {} pixels, map expects {}x{}",
                img.len(),
                self.height,
                self.width
            )));
        }
        Ok(self.active_index.iter().map(|&p| img[p]).collect())
    }
}

/// Narrowing conversion used when filling `f32` or `f64` images.
pub trait IntoLossy<T> {
    fn into_lossy(self) -> T;
}

impl IntoLossy<f32> for f64 {
    fn into_lossy(self) -> f32 {
        self as f32
    }
}

impl IntoLossy<f64> for f64 {
    fn into_lossy(self) -> f64 {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn irregular() -> GridMap {
        let mask = [
            false, true, true, true, //
            true, true, true, false, //
            true, true, false, false,
        ];
        GridMap::from_mask(3, 4, &mask).unwrap()
    }

    #[test]
    fn full_mask_of_ones() {
        let gm = GridMap::from_mask(3, 3, &[true; 9]).unwrap();
        assert_eq!(gm.map_to_grid(&[1.0; 9]).unwrap(), vec![1.0; 9]);
    }

    #[test]
    fn one_hot_lands_on_its_position() {
        let gm = irregular();
        for i in 0..gm.n() {
            let mut x = vec![0.0; gm.n()];
            x[i] = 1.0;
            let img = gm.map_to_grid(&x).unwrap();
            let nz: Vec<usize> = (0..img.len()).filter(|&p| img[p] != 0.0).collect();
            assert_eq!(nz, vec![gm.active_index()[i]]);
        }
    }

    #[test]
    fn zero_image_gives_zero_vector_and_errors_on_shape() {
        let gm = irregular();
        assert_eq!(gm.grid_to_vector(&[0.0; 12]).unwrap(), vec![0.0; 8]);
        assert!(matches!(gm.grid_to_vector(&[0.0; 11]), Err(Error::Dimension(_))));
        assert!(matches!(gm.map_to_grid(&[0.0; 7]), Err(Error::Dimension(_))));
    }

    #[test]
    fn explicit_positions_validate() {
        assert!(GridMap::from_positions(2, 2, vec![0, 0]).is_err());
        assert!(GridMap::from_positions(2, 2, vec![4]).is_err());
        let gm = GridMap::from_positions(2, 2, vec![3, 0]).unwrap();
        assert_eq!(gm.map_to_grid(&[5.0, 7.0]).unwrap(), vec![7.0, 0.0, 0.0, 5.0]);
    }

    #[test]
    fn fill_value_applies_off_mask() {
        let gm = irregular().with_fill(-2.0);
        let img = gm.map_to_grid(&[1.0; 8]).unwrap();
        assert_eq!(img[0], -2.0);
        assert_eq!(img[1], 1.0);
    }

    proptest! {
        #[test]
        fn vector_round_trip(x in proptest::collection::vec(-1e6f64..1e6, 8)) {
            let gm = irregular();
            prop_assert_eq!(gm.grid_to_vector(&gm.map_to_grid(&x).unwrap()).unwrap(), x);
        }

        #[test]
        fn image_round_trip_off_mask_fill(img in proptest::collection::vec(-1e3f64..1e3, 12), fill in -5.0f64..5.0) {
            let gm = irregular().with_fill(fill);
            let img: Vec<f64> = img.iter().enumerate()
                .map(|(p, &v)| if gm.mask()[p] { v } else { fill })
                .collect();
            let back = gm.map_to_grid(&gm.grid_to_vector(&img).unwrap()).unwrap();
            prop_assert_eq!(back, img);
        }

        #[test]
        fn linear_on_mask(
            x in proptest::collection::vec(-10f64..10.0, 8),
            y in proptest::collection::vec(-10f64..10.0, 8),
            a in -3f64..3.0, b in -3f64..3.0,
        ) {
            let gm = irregular();
            let comb: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = gm.map_to_grid(&comb).unwrap();
            let (ix, iy) = (gm.map_to_grid(&x).unwrap(), gm.map_to_grid(&y).unwrap());
            for &p in gm.active_index() {
                prop_assert!((lhs[p] - (a * ix[p] + b * iy[p])).abs() < 1e-9);
            }
        }
    }
}
