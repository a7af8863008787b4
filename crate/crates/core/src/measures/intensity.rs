//! Cross-sample normalisations behind the rank and quantile intensity
//! measures.

/// Mean of the order statistics across rows. All rows must have equal
/// length.
pub fn quantile_reference<R: AsRef<[f64]>>(rows: &[R]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut reference = vec![0.0; first.as_ref().len()];
    for row in rows {
        let mut sorted = row.as_ref().to_vec();
        sorted.sort_by(f64::total_cmp);
        for (acc, v) in reference.iter_mut().zip(sorted) {
            *acc += v;
        }
    }
    let n = rows.len() as f64;
    reference.iter_mut().for_each(|v| *v /= n);
    reference
}

/// Replaces the k-th smallest value of `row` by the reference quantile at the
/// same relative position, interpolating linearly when the lengths differ.
/// Ties within the row are ordered by position.
pub fn map_to_reference(row: &[f64], reference: &[f64]) -> Vec<f64> {
    let m = row.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let last = reference.len().saturating_sub(1);
    for (k, &idx) in order.iter().enumerate() {
        out[idx] = if m == reference.len() {
            reference[k]
        } else {
            let pos = if m > 1 { k as f64 * last as f64 / (m - 1) as f64 } else { 0.0 };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(last);
            let t = pos - lo as f64;
            reference[lo] + t * (reference[hi] - reference[lo])
        };
    }
    out
}

/// Standard quantile normalisation of a set of equal-length rows.
pub fn quantile_normalize<R: AsRef<[f64]>>(rows: &[R]) -> Vec<Vec<f64>> {
    let reference = quantile_reference(rows);
    rows.iter().map(|r| map_to_reference(r.as_ref(), &reference)).collect()
}
