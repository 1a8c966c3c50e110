//! Reference aggregators. Each takes the round's client updates and returns
//! the step to add to the global model.

use crate::error::{Error, Result};
use crate::vector;

fn check(updates: &[&[f64]]) -> Result<usize> {
    let d = vector::common_len(updates)?;
    if let Some(i) = updates.iter().position(|u| !vector::is_finite(u)) {
        return Err(Error::Data(format!("update {i} has non-finite entries")));
    }
    Ok(d)
}

/// Arithmetic mean of the updates.
pub fn fedavg(updates: &[&[f64]]) -> Result<Vec<f64>> {
    let d = check(updates)?;
    let mut out = vec![0.0; d];
    for u in updates {
        vector::axpy(&mut out, 1.0, u);
    }
    let n = updates.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}

/// Krum scores: for each update, the sum of squared distances to its
/// `n - f - 2` nearest other updates.
pub fn krum_scores(updates: &[&[f64]], f: usize) -> Result<Vec<f64>> {
    check(updates)?;
    let n = updates.len();
    if n < 2 * f + 3 {
        return Err(Error::config(format!("krum with f = {f} needs at least {} updates, got {n}", 2 * f + 3)));
    }
    let k = n - f - 2;
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let d = vector::squared_distance(updates[i], updates[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            row.sort_by(f64::total_cmp);
            row[..k].iter().sum()
        })
        .collect())
}

/// Index of the update Krum selects; ties go to the lowest index.
pub fn krum_index(updates: &[&[f64]], f: usize) -> Result<usize> {
    let scores = krum_scores(updates, f)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn krum(updates: &[&[f64]], f: usize) -> Result<Vec<f64>> {
    Ok(updates[krum_index(updates, f)?].to_vec())
}

fn per_coordinate(updates: &[&[f64]], reduce: impl Fn(&mut [f64]) -> f64) -> Result<Vec<f64>> {
    let d = check(updates)?;
    let mut column = vec![0.0; updates.len()];
    Ok((0..d)
        .map(|k| {
            for (c, u) in column.iter_mut().zip(updates) {
                *c = u[k];
            }
            column.sort_by(f64::total_cmp);
            reduce(&mut column)
        })
        .collect())
}

/// Coordinate-wise median; even counts average the two middle values.
pub fn coordinate_median(updates: &[&[f64]]) -> Result<Vec<f64>> {
    per_coordinate(updates, |v| {
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    })
}

/// Coordinate-wise mean after dropping the `f` largest and `f` smallest
/// values.
pub fn trimmed_mean(updates: &[&[f64]], f: usize) -> Result<Vec<f64>> {
    let n = updates.len();
    if n <= 2 * f {
        return Err(Error::config(format!("trimmed mean with f = {f} needs more than {} updates, got {n}", 2 * f)));
    }
    per_coordinate(updates, |v| {
        let kept = &v[f..n - f];
        kept.iter().sum::<f64>() / kept.len() as f64
    })
}

/// Per-client trust used by [`fltrust`]: ReLU of the cosine with the server
/// update.
pub fn fltrust_scores(updates: &[&[f64]], server: &[f64]) -> Result<Vec<f64>> {
    updates
        .iter()
        .map(|u| Ok(crate::trust::cosine_similarity(u, server)?.max(0.0)))
        .collect()
}

/// Trust-weighted mean of client updates rescaled to the server update's
/// norm. Falls back to the server update when every trust score is zero.
pub fn fltrust(updates: &[&[f64]], server: &[f64]) -> Result<Vec<f64>> {
    let d = check(updates)?;
    if server.len() != d {
        return Err(Error::shape("server update does not match client updates"));
    }
    let scores = fltrust_scores(updates, server)?;
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Ok(server.to_vec());
    }
    let server_norm = vector::norm(server);
    let mut out = vec![0.0; d];
    for (u, &s) in updates.iter().zip(&scores) {
        if s > 0.0 {
            vector::axpy(&mut out, s * server_norm / vector::norm(u), u);
        }
    }
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}
