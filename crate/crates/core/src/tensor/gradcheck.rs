use super::matrix::Matrix;

/// Worst disagreement between `analytic` and central differences of `f`.
///
/// Entries where both gradients are below `1e-8` in magnitude contribute
/// their absolute difference; all others contribute the relative error.
pub fn gradient_discrepancy(params: &[Matrix], analytic: &[Matrix], h: f64, f: impl Fn(&[Matrix]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut moved = params.to_vec();
    for (b, block) in params.iter().enumerate() {
        for e in 0..block.len() {
            let orig = block.data()[e];
            moved[b].data_mut()[e] = orig + h;
            let up = f(&moved);
            moved[b].data_mut()[e] = orig - h;
            let down = f(&moved);
            moved[b].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[b].data()[e];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-8 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            worst = worst.max(err);
        }
    }
    worst
}
