//! Image carriers shared by every module.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// A preprocessed RGB image laid out as `(channel, row, column)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
    source: Option<String>,
}

impl ImageTensor {
    /// Wraps an array, checking the channel count and finiteness.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.dim().0 != 3 {
            return Err(Error::InputShape(format!(
                "expected 3 channels, got {}",
                data.dim().0
            )));
        }
        ensure_finite(data.iter(), "image")?;
        Ok(Self { data, source: None })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((3, height, width)),
            source: None,
        }
    }

    pub fn filled(height: usize, width: usize, value: [f32; 3]) -> Self {
        let mut data = Array3::zeros((3, height, width));
        for (c, mut plane) in data.axis_iter_mut(Axis(0)).enumerate() {
            plane.fill(value[c]);
        }
        Self { data, source: None }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn source(&self) -> Option<&str> {
        self.source.as_deref()
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Checks the preprocessing contract: values in `[0, 1]`.
    pub fn check_unit_range(&self) -> Result<()> {
        if self.data.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::Argument("image values must lie in [0, 1]".into()))
        }
    }

    /// Per-channel mean colour.
    pub fn channel_mean(&self) -> [f32; 3] {
        let mut out = [0.0f32; 3];
        let n = (self.height() * self.width()).max(1) as f64;
        for (c, plane) in self.data.axis_iter(Axis(0)).enumerate() {
            out[c] = (plane.iter().map(|&v| v as f64).sum::<f64>() / n) as f32;
        }
        out
    }

    /// Element-wise product with a spatial map broadcast over channels.
    pub fn masked(&self, map: &Array2<f32>) -> Result<Self> {
        if map.dim() != (self.height(), self.width()) {
            return Err(Error::Argument(format!(
                "mask shape {:?} does not match image {}x{}",
                map.dim(),
                self.height(),
                self.width()
            )));
        }
        let mut data = self.data.clone();
        for mut plane in data.axis_iter_mut(Axis(0)) {
            plane *= map;
        }
        Ok(Self {
            data,
            source: self.source.clone(),
        })
    }
}

/// Description of the augmentation that produced a pair, kept for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AugmentationRecord {
    pub seed: Option<u64>,
    pub first: Vec<String>,
    pub second: Vec<String>,
}

/// Two same-shaped images explained together.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub first: ImageTensor,
    pub second: ImageTensor,
    pub augmentation: Option<AugmentationRecord>,
}

impl ImagePair {
    pub fn new(first: ImageTensor, second: ImageTensor) -> Result<Self> {
        if first.shape() != second.shape() {
            return Err(Error::InputShape(format!(
                "pair images differ in shape: {:?} vs {:?}",
                first.shape(),
                second.shape()
            )));
        }
        Ok(Self {
            first,
            second,
            augmentation: None,
        })
    }

    pub fn with_augmentation(mut self, record: AugmentationRecord) -> Self {
        self.augmentation = Some(record);
        self
    }

    pub fn swapped(&self) -> Self {
        Self {
            first: self.second.clone(),
            second: self.first.clone(),
            augmentation: self.augmentation.clone(),
        }
    }

    pub fn height(&self) -> usize {
        self.first.height()
    }

    pub fn width(&self) -> usize {
        self.first.width()
    }
}
