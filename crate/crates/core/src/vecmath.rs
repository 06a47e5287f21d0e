//! Dense vector primitives. Inputs are float32 slices; accumulation happens
//! in float64 so that scores stay stable under reordering-sensitive sums.

/// Inner product `<a, b>`.
///
/// Panics if the slices have different lengths; mixing dimensions is a
/// programming error, not a recoverable condition.
pub fn inner_product(a: &[f32], b: &[f32]) -> f32 {
    inner_product_f64(a, b) as f32
}

/// Inner product accumulated and returned in f64.
pub fn inner_product_f64(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(
        a.len(),
        b.len(),
        "dimension mismatch: {} vs {}",
        a.len(),
        b.len()
    );
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += *x as f64 * *y as f64;
    }
    acc
}

/// Squared Euclidean distance `||a - b||^2`.
pub fn l2_distance_sq(a: &[f32], b: &[f32]) -> f32 {
    l2_distance_sq_f64(a, b) as f32
}

pub fn l2_distance_sq_f64(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(
        a.len(),
        b.len(),
        "dimension mismatch: {} vs {}",
        a.len(),
        b.len()
    );
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}
