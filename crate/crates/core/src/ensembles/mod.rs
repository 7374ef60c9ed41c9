//! Combining specialized per-class models into a single abnormality map.
//!
//! Two schemes: a parameter-free pixelwise maximum and a small learned
//! fusion network (see [`fusion`]).

pub mod fusion;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use fusion::{apply_model_ensemble, train_model_ensemble};

/// Pixelwise maximum over a stack of probability maps.
///
/// The natural reduction when each map answers "is *my* class here?":
/// a pixel is abnormal as soon as any specialist says so.
pub fn max_ensemble(maps: &[Array2<f32>]) -> Result<Array2<f32>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::data("max ensemble needs at least one map"))?;
    let shape = first.dim();
    let mut out = first.clone();
    for map in &maps[1..] {
        if map.dim() != shape {
            return Err(Error::ShapeMismatch {
                expected: format!("{shape:?}"),
                got: format!("{:?}", map.dim()),
            });
        }
        for (o, &v) in out.iter_mut().zip(map.iter()) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(out)
}
