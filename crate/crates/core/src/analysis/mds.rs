use super::{jacobi_eigen, AnalysisError};

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    /// One row of `dim` coordinates per input point.
    pub coords: Vec<Vec<f64>>,
    /// Leading eigenvalues of the double-centered Gram matrix.
    pub eigenvalues: Vec<f64>,
    /// Kruskal stress-1 of the embedding against the input distances.
    pub stress: f64,
    /// Set when fewer than `dim` positive modes were available.
    pub warning: Option<String>,
}

pub fn pairwise_distances(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

pub fn stress(dist: &[Vec<f64>], coords: &[Vec<f64>]) -> f64 {
    let emb = pairwise_distances(coords);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..dist.len() {
        for j in i + 1..dist.len() {
            num += (dist[i][j] - emb[i][j]).powi(2);
            den += dist[i][j].powi(2);
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Classical (Torgerson) MDS of a distance matrix into `dim` coordinates.
pub fn classical_mds(dist: &[Vec<f64>], dim: usize) -> Result<Embedding, AnalysisError> {
    let n = dist.len();
    for (i, row) in dist.iter().enumerate() {
        if row.len() != n {
            return Err(AnalysisError::NotSquare { rows: n, row: i, len: row.len() });
        }
        if row[i] != 0.0 {
            return Err(AnalysisError::Diagonal(i));
        }
        for (j, &d) in row.iter().enumerate() {
            if !(d >= 0.0) {
                return Err(AnalysisError::Negative(i, j));
            }
            if (d - dist[j][i]).abs() > 1e-9 * d.abs().max(1.0) {
                return Err(AnalysisError::NotSymmetric(i, j));
            }
        }
    }
    if n == 0 {
        return Ok(Embedding {
            coords: vec![],
            eigenvalues: vec![],
            stress: 0.0,
            warning: None,
        });
    }
    // B = −½ J D² J
    let sq: Vec<f64> = dist.iter().flat_map(|r| r.iter().map(|d| d * d)).collect();
    let row_mean: Vec<f64> = (0..n).map(|i| sq[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let all_mean = row_mean.iter().sum::<f64>() / n as f64;
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = -0.5 * (sq[i * n + j] - row_mean[i] - row_mean[j] + all_mean);
        }
    }
    let (vals, vecs) = jacobi_eigen(&b, n, 1e-10, 100);
    let scale = vals.first().map_or(0.0, |v| v.abs()).max(1.0);
    let positive = vals.iter().take(dim).filter(|&&v| v > 1e-12 * scale).count();
    let warning = (positive < dim && vals.iter().any(|&v| v.abs() > 1e-12 * scale)).then(|| {
        format!("only {positive} positive eigenvalues for a {dim}-D embedding; remaining axes are zero")
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let coords: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..dim)
                .map(|k| if k < positive { vecs[i * n + k] * vals[k].sqrt() } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(Embedding {
        stress: stress(dist, &coords),
        eigenvalues: vals.into_iter().take(dim).collect(),
        coords,
        warning,
    })
}
