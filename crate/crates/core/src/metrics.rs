//! Wasserstein-2 metrics: the exact 1-D distance between empirical
//! measures via quantile functions, and the sliced / max-sliced estimators
//! over random unit directions.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{vecops, Matrix, RngStream};

/// Exact W₂ between the empirical distributions of two samples.
///
/// Equal-length inputs reduce to the root mean square of sorted-value
/// differences. Unequal lengths are handled exactly as well: both empirical
/// quantile functions are piecewise constant, so the squared difference is
/// integrated in closed form over the union of their jump points.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("w2_1d needs nonempty inputs".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite values"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("finite values"));

    if xs.len() == ys.len() {
        let n = xs.len() as f64;
        let sum: f64 = xs.iter().zip(&ys).map(|(p, q)| (p - q) * (p - q)).sum();
        return Ok((sum / n).sqrt());
    }

    // Merge walk over the jump points i/n and j/m of the two quantile
    // functions; both are constant on each merged interval.
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut p = 0.0f64;
    let mut acc = 0.0f64;
    while i < xs.len() && j < ys.len() {
        let pa = (i + 1) as f64 / n;
        let pb = (j + 1) as f64 / m;
        let next = pa.min(pb);
        let d = xs[i] - ys[j];
        acc += (next - p) * d * d;
        p = next;
        if pa <= pb {
            i += 1;
        }
        if pb <= pa {
            j += 1;
        }
    }
    Ok(acc.sqrt())
}

/// A fixed set of random unit projection directions.
#[derive(Clone, Debug)]
pub struct ProjectionSet {
    /// One direction per row (L×D).
    pub directions: Matrix,
    pub seed: (u64, u64),
}

impl ProjectionSet {
    pub fn sample(d: usize, l: usize, stream: &RngStream) -> Self {
        let seed = (stream.master_seed(), stream.stream_id());
        let mut s = stream.derive(&[0x70726f6a]);
        let mut directions = Matrix::zeros(l, d);
        for k in 0..l {
            let u = s.unit_vector(d);
            directions.row_mut(k).copy_from_slice(&u);
        }
        Self { directions, seed }
    }

    pub fn len(&self) -> usize {
        self.directions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.rows() == 0
    }

    /// First `l` directions as a nested set.
    pub fn prefix(&self, l: usize) -> ProjectionSet {
        let l = l.min(self.len());
        let mut directions = Matrix::zeros(l, self.directions.cols());
        for k in 0..l {
            directions.row_mut(k).copy_from_slice(self.directions.row(k));
        }
        ProjectionSet { directions, seed: self.seed }
    }
}

fn check_dims(x: &Dataset, y: &Dataset) -> Result<usize> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!(
            "datasets have dimensions {} and {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(x.dim())
}

fn project(ds: &Dataset, dir: &[f64]) -> Vec<f64> {
    ds.rows_iter().map(|r| vecops::dot(r, dir)).collect()
}

/// Squared projected W₂ for every direction of the set, in direction order.
fn projected_w2_sq(x: &Dataset, y: &Dataset, dirs: &ProjectionSet) -> Result<Vec<f64>> {
    (0..dirs.len())
        .into_par_iter()
        .map(|k| {
            let dir = dirs.directions.row(k);
            let w = w2_1d(&project(x, dir), &project(y, dir))?;
            Ok(w * w)
        })
        .collect()
}

/// Sliced Wasserstein-2: root mean of squared projected distances over `l`
/// uniform random directions.
pub fn sw2(x: &Dataset, y: &Dataset, l: usize, stream: &RngStream) -> Result<f64> {
    let d = check_dims(x, y)?;
    if l == 0 {
        return Err(Error::InvalidArgument("need at least one projection".into()));
    }
    let dirs = ProjectionSet::sample(d, l, stream);
    sw2_with(x, y, &dirs)
}

pub fn sw2_with(x: &Dataset, y: &Dataset, dirs: &ProjectionSet) -> Result<f64> {
    check_dims(x, y)?;
    let sq = projected_w2_sq(x, y, dirs)?;
    Ok((sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
}

/// Max-sliced Wasserstein-2: maximum projected distance over a fixed random
/// direction set (an estimator of the supremum; `l = 64·D` directions by
/// convention).
pub fn msw2(x: &Dataset, y: &Dataset, l: usize, stream: &RngStream) -> Result<f64> {
    let d = check_dims(x, y)?;
    if l == 0 {
        return Err(Error::InvalidArgument("need at least one projection".into()));
    }
    let dirs = ProjectionSet::sample(d, l, stream);
    msw2_with(x, y, &dirs)
}

pub fn msw2_with(x: &Dataset, y: &Dataset, dirs: &ProjectionSet) -> Result<f64> {
    check_dims(x, y)?;
    let sq = projected_w2_sq(x, y, dirs)?;
    Ok(sq.iter().fold(0.0f64, |m, v| m.max(*v)).sqrt())
}

/// Conventional direction count for the max-sliced estimator.
pub fn default_projection_count(d: usize) -> usize {
    64 * d
}
