use crate::error::{Error, Result};

/// Variance-reducing numeric transform: `(ln z)²` for `z > 2`, identity
/// otherwise; a missing value encodes as 0.
pub fn transform_numeric(z: Option<f64>) -> f64 {
    match z {
        Some(z) if z > 2.0 => {
            let l = z.ln();
            l * l
        }
        Some(z) => z,
        None => 0.0,
    }
}

/// Rating → binary label. Ratings above 3 are positive, below 3 negative,
/// and exactly 3 is dropped (`None`).
pub fn binarize_movielens(rating: i64) -> Result<Option<u8>> {
    match rating {
        0..=2 => Ok(Some(0)),
        3 => Ok(None),
        4..=5 => Ok(Some(1)),
        other => Err(Error::Parse(format!("rating {other} outside 0..=5"))),
    }
}
