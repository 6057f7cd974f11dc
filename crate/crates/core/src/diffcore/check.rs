use super::array::Array;

/// Central-difference gradient estimate of a scalar function.
///
/// Coordinate `i` of the result is `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`. NaN from
/// `f` propagates into the estimate.
pub fn finite_diff(mut f: impl FnMut(&Array) -> f64, x: &Array, h: f64) -> Array {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Array::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// `|a − b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Largest [`rel_err`] over paired entries.
pub fn max_rel_err(a: &Array, b: &Array) -> f64 {
    assert_eq!(
        a.shape(),
        b.shape(),
        "shape mismatch in gradient comparison"
    );
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}
