//! Small dense helpers for symmetric positive-definite matrices.

/// Log-determinant of a symmetric positive-definite `d x d` matrix stored
/// row-major, via Cholesky. Returns `None` if a pivot is not positive.
pub(crate) fn log_det_spd(a: &[f64], d: usize) -> Option<f64> {
    debug_assert_eq!(a.len(), d * d);
    let mut l = vec![0.0; d * d];
    let mut log_det = 0.0;
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[j * d + j] = ljj;
        log_det += 2.0 * ljj.ln();
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Some(log_det)
}

/// Numerically stable `ln(sum(exp(xs)))`; `-inf` for an empty or all `-inf` input.
///
/// Terms are summed in sorted order so the result does not depend on the
/// order of `xs`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    const STACK: usize = 16;
    if xs.len() <= STACK {
        let mut buf = [0.0; STACK];
        let terms = &mut buf[..xs.len()];
        terms.iter_mut().zip(xs).for_each(|(t, x)| *t = (x - max).exp());
        terms.sort_by(f64::total_cmp);
        return max + terms.iter().sum::<f64>().ln();
    }
    let mut terms: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    terms.sort_by(f64::total_cmp);
    max + terms.iter().sum::<f64>().ln()
}
