//! Accuracy and cost summaries.

/// Mean absolute error over paired entries.
pub fn mae(reference: &[f64], approx: &[f64]) -> f64 {
    assert_eq!(reference.len(), approx.len(), "mae length mismatch");
    if reference.is_empty() {
        return 0.0;
    }
    let s: f64 = reference
        .iter()
        .zip(approx)
        .map(|(a, b)| (a - b).abs())
        .sum();
    s / reference.len() as f64
}

/// Symmetric mean absolute percentage error in `[0, 200]`, with `0/0 := 0`.
pub fn smape(reference: &[f64], approx: &[f64]) -> f64 {
    assert_eq!(reference.len(), approx.len(), "smape length mismatch");
    if reference.is_empty() {
        return 0.0;
    }
    let s: f64 = reference
        .iter()
        .zip(approx)
        .map(|(a, b)| {
            let den = a.abs() + b.abs();
            if den == 0.0 {
                0.0
            } else {
                2.0 * (a - b).abs() / den
            }
        })
        .sum();
    100.0 * s / reference.len() as f64
}

/// Estimated FLOPs of one forward pass through an affine stack: `2·Σ in·out`.
pub fn mlp_flops(layer_dims: &[usize]) -> u64 {
    layer_dims
        .windows(2)
        .map(|w| 2 * (w[0] * w[1]) as u64)
        .sum()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
