use crate::error::{AdrlError, Result};

/// Euclidean projection of `v` onto `{x : Σ x = total, x >= 0}`, in place.
///
/// Sort-and-threshold: with `u` sorted descending, the active count is the
/// largest `j` with `u_j - (Σ_{i<=j} u_i - total)/j > 0`.
pub fn project_scaled_simplex(v: &mut [f64], total: f64) -> Result<()> {
    if total < 0.0 {
        return Err(AdrlError::model(format!("simplex total {total} is negative")));
    }
    if v.is_empty() {
        return Ok(());
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    // the largest entry is always active
    let mut theta = u[0] - total;
    for (j, uj) in u.iter().enumerate() {
        cumsum += uj;
        let candidate = (cumsum - total) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            theta = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
    Ok(())
}

/// Euclidean projection onto the hyperplane `{x : Σ x = total}` (uniform shift).
pub fn project_hyperplane(v: &mut [f64], total: f64) {
    if v.is_empty() {
        return;
    }
    let shift = (v.iter().sum::<f64>() - total) / v.len() as f64;
    for x in v.iter_mut() {
        *x -= shift;
    }
}
