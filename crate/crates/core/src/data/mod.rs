//! Synthetic training data and the on-disk volume format: ellipsoid
//! phantoms stand in for clinical scans, MVOL1 files carry volumes between
//! pipeline stages, and the splitter carves train/test sets.

mod mvol;
mod phantom;
mod split;

pub use mvol::{read_volume, write_volume};
pub use phantom::{generate_phantom, generate_phantom_set, PhantomSpec};
pub use split::split_dataset;

use crate::error::{Error, Result};
use crate::tensor::{LabelVolume, Tensor};

/// One volume with its ground truth: an intensity image shaped
/// `[1, w, h, z]` (absent in prediction files, which carry labels only),
/// the label field, physical voxel spacing in mm, and a stable id.
#[derive(Clone, Debug)]
pub struct VolumeSample {
    pub id: String,
    pub image: Option<Tensor<f32>>,
    pub labels: LabelVolume,
    pub spacing: [f64; 3],
    pub num_classes: usize,
}

impl VolumeSample {
    /// Structural checks shared by the generator and the file reader:
    /// image/label extent agreement, label range, finite spacing.
    pub fn check(&self) -> Result<()> {
        let [w, h, z] = self.labels.extents();
        if let Some(image) = &self.image {
            if image.shape() != [1, w, h, z] {
                return Err(Error::shape(format!(
                    "{}: image shape {:?} does not match labels [1, {w}, {h}, {z}]",
                    self.id,
                    image.shape()
                )));
            }
            image.ensure_finite(&self.id)?;
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::config(format!(
                "{}: class count {} out of range 2..=256",
                self.id, self.num_classes
            )));
        }
        self.labels.ensure_classes(self.num_classes, &self.id)?;
        if self.spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::data(format!(
                "{}: spacing {:?} must be positive",
                self.id, self.spacing
            )));
        }
        Ok(())
    }

    /// The full invariant for samples that feed the model: structural
    /// checks plus the 16-divisibility every encoder scale needs.
    pub fn check_for_model(&self) -> Result<()> {
        self.check()?;
        let bad: Vec<usize> =
            self.labels.extents().iter().copied().filter(|e| e % 16 != 0).collect();
        if !bad.is_empty() {
            return Err(Error::config(format!(
                "{}: extents {:?} must be divisible by 16",
                self.id,
                self.labels.extents()
            )));
        }
        Ok(())
    }

    pub fn extents(&self) -> [usize; 3] {
        self.labels.extents()
    }
}
