//! The alignment functional α(W) = tr(Wᵀ·G·W·C) between a network geometry
//! G and a data second moment C, and the orthogonal transforms extremizing
//! it over all orthogonal W.

use serde::Serialize;

use crate::bases::{OrthoTransform, TransformKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{sym_eig, Matrix};

/// Empirical second moment (1/n)·Σ x·xᵀ.
pub fn second_moment(dataset: &Dataset) -> Matrix {
    let d = dataset.dim();
    let inv = 1.0 / dataset.n() as f64;
    let mut c = Matrix::zeros(d, d);
    for row in dataset.rows_iter() {
        for i in 0..d {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            for j in i..d {
                c.set(i, j, c.get(i, j) + xi * row[j] * inv);
            }
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            c.set(j, i, c.get(i, j));
        }
    }
    c
}

/// α = tr(Wᵀ·G·W·C). Errors when shapes disagree or W is not orthogonal
/// within 1e-6.
pub fn alpha(w: &OrthoTransform, g: &Matrix, c: &Matrix) -> Result<f64> {
    if g.rows() != w.dim || c.rows() != w.dim || !g.is_square() || !c.is_square() {
        return Err(Error::Dimension(format!(
            "alpha: W is {}-dimensional, G is {}x{}, C is {}x{}",
            w.dim,
            g.rows(),
            g.cols(),
            c.rows(),
            c.cols()
        )));
    }
    if w.orthogonality_error() > 1e-6 {
        return Err(Error::InvalidArgument("alpha: W is not orthogonal".into()));
    }
    let gw = g.matmul(&w.matrix)?;
    let wgw = w.matrix.transpose().matmul(&gw)?;
    Ok(wgw.matmul(c)?.trace())
}

/// The extremal transforms of the alignment functional, built from the
/// descending eigenbases of G and C: W_min = U·J·Vᵀ (J the row-reversed
/// identity) and W_max = U·Vᵀ.
#[derive(Clone, Debug)]
pub struct ExtremalTransforms {
    pub w_min: OrthoTransform,
    pub w_max: OrthoTransform,
    /// Set when G (respectively C) has a degenerate spectrum, in which case
    /// the extremizers are non-unique and the deterministic eigenvector
    /// order picks one.
    pub tied_g: bool,
    pub tied_c: bool,
}

pub fn extremal_transforms(g: &Matrix, c: &Matrix) -> Result<ExtremalTransforms> {
    if g.rows() != c.rows() {
        return Err(Error::Dimension("extremal_transforms: G and C sizes differ".into()));
    }
    let eg = sym_eig(g)?;
    let ec = sym_eig(c)?;
    let d = g.rows();

    let has_ties = |vals: &[f64]| -> bool {
        let scale = vals.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(f64::MIN_POSITIVE);
        vals.windows(2).any(|w| (w[0] - w[1]).abs() <= 1e-8 * scale)
    };

    let u = &eg.eigenvectors;
    let v = &ec.eigenvectors;
    // U·J reverses the column order of U.
    let mut uj = Matrix::zeros(d, d);
    for k in 0..d {
        uj.set_column(k, &u.column(d - 1 - k));
    }
    let w_min = uj.matmul(&v.transpose())?;
    let w_max = u.matmul(&v.transpose())?;

    Ok(ExtremalTransforms {
        w_min: OrthoTransform {
            dim: d,
            matrix: w_min,
            provenance: TransformKind::WMin,
            index_layout: (0..d).map(|index| crate::bases::IndexCoord::Flat { index }).collect(),
        },
        w_max: OrthoTransform {
            dim: d,
            matrix: w_max,
            provenance: TransformKind::WMax,
            index_layout: (0..d).map(|index| crate::bases::IndexCoord::Flat { index }).collect(),
        },
        tied_g: has_ties(&eg.eigenvalues),
        tied_c: has_ties(&ec.eigenvalues),
    })
}

/// α restated through Q = Uᵀ·W·V: Σᵢⱼ λᵢ·σⱼ·Q²ᵢⱼ. Used as an independent
/// route for testing the trace formula.
pub fn alpha_eigenbasis_form(w: &OrthoTransform, g: &Matrix, c: &Matrix) -> Result<f64> {
    let eg = sym_eig(g)?;
    let ec = sym_eig(c)?;
    let q = eg.eigenvectors.transpose().matmul(&w.matrix)?.matmul(&ec.eigenvectors)?;
    let d = g.rows();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let qij = q.get(i, j);
            acc += eg.eigenvalues[i] * ec.eigenvalues[j] * qij * qij;
        }
    }
    Ok(acc)
}

/// 64-bit FNV-1a over the matrix bytes; identifies a geometry in reports.
pub fn matrix_hash(m: &Matrix) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in m.data() {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// One alignment measurement, serializable into experiment reports.
#[derive(Clone, Debug, Serialize)]
pub struct AlignmentReport {
    pub alpha: f64,
    pub transform: TransformKind,
    pub geometry_hash: String,
    pub dataset: String,
    pub tied_spectrum: bool,
}

pub fn alignment_report(
    w: &OrthoTransform,
    g: &Matrix,
    dataset: &Dataset,
    tied_spectrum: bool,
) -> Result<AlignmentReport> {
    let c = second_moment(dataset);
    Ok(AlignmentReport {
        alpha: alpha(w, g, &c)?,
        transform: w.provenance,
        geometry_hash: format!("{:016x}", matrix_hash(g)),
        dataset: dataset.provenance.clone(),
        tied_spectrum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataLayout;
    use crate::numerics::RngStream;

    fn flat(rows: Vec<Vec<f64>>) -> Dataset {
        let d = rows[0].len();
        Dataset::new(Matrix::from_rows(&rows).unwrap(), DataLayout::Flat { dim: d }, "test")
            .unwrap()
    }

    #[test]
    fn second_moment_examples() {
        let ds = flat(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let c = second_moment(&ds);
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.get(1, 1), 0.0);
        assert_eq!(c.get(0, 1), 0.0);

        let zero = flat(vec![vec![0.0, 0.0, 0.0]]);
        assert_eq!(second_moment(&zero).max_abs(), 0.0);
    }

    #[test]
    fn second_moment_rank_one_alignment() {
        let mut stream = RngStream::new(20, 0);
        let v = stream.unit_vector(6);
        let ds = crate::data::sample_rank_one(&v, 6, 10_000, &mut stream).unwrap();
        let c = second_moment(&ds);
        let top = sym_eig(&c).unwrap().eigenvectors.column(0);
        let overlap: f64 = top.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().abs();
        assert!(overlap > 0.999, "overlap {}", overlap);
    }

    #[test]
    fn alpha_trace_arithmetic() {
        let g = Matrix::diag(&[3.0, 1.0]);
        let c = Matrix::diag(&[2.0, 5.0]);
        let id = OrthoTransform::identity(2);
        assert!((alpha(&id, &g, &c).unwrap() - 11.0).abs() < 1e-12);

        // Column swap.
        let j = OrthoTransform::from_matrix(
            Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            TransformKind::Identity,
        )
        .unwrap();
        assert!((alpha(&j, &g, &c).unwrap() - 17.0).abs() < 1e-12);

        // Isotropic geometry: α = tr(C) for every orthogonal W.
        let mut stream = RngStream::new(21, 0);
        let w = crate::bases::random_orthogonal(2, &mut stream);
        let a = alpha(&w, &Matrix::identity(2), &c).unwrap();
        assert!((a - 7.0).abs() < 1e-10);
    }

    #[test]
    fn alpha_rejects_non_orthogonal() {
        let g = Matrix::identity(2);
        let w = OrthoTransform {
            dim: 2,
            matrix: Matrix::diag(&[1.0, 2.0]),
            provenance: TransformKind::Identity,
            index_layout: vec![],
        };
        assert!(alpha(&w, &g, &g).is_err());
    }

    #[test]
    fn alpha_equals_expected_quadratic_form() {
        // α equals the empirical mean of zᵀ·G·z with z = W·x.
        let mut stream = RngStream::new(22, 0);
        let ds = flat((0..50).map(|_| stream.gaussian(3)).collect());
        let mut g = Matrix::from_vec(3, 3, stream.gaussian(9)).unwrap();
        g.symmetrize();
        let g = g.matmul(&g.transpose()).unwrap(); // PSD
        let w = crate::bases::random_orthogonal(3, &mut stream);
        let c = second_moment(&ds);
        let a = alpha(&w, &g, &c).unwrap();
        let mut mean = 0.0;
        for row in ds.rows_iter() {
            let z = w.apply(row).unwrap();
            let gz = g.matvec(&z).unwrap();
            mean += crate::numerics::vecops::dot(&z, &gz) / ds.n() as f64;
        }
        assert!((a - mean).abs() <= 1e-8 * mean.abs().max(1.0), "{} vs {}", a, mean);
    }

    #[test]
    fn extremal_transforms_two_dim_example() {
        let g = Matrix::diag(&[3.0, 1.0]);
        let c = Matrix::diag(&[2.0, 5.0]);
        let ext = extremal_transforms(&g, &c).unwrap();
        let a_min = alpha(&ext.w_min, &g, &c).unwrap();
        let a_max = alpha(&ext.w_max, &g, &c).unwrap();
        assert!((a_min - 11.0).abs() < 1e-10, "a_min {}", a_min);
        assert!((a_max - 17.0).abs() < 1e-10, "a_max {}", a_max);
        assert!(!ext.tied_g && !ext.tied_c);
    }

    #[test]
    fn degenerate_geometry_still_deterministic() {
        let g = Matrix::identity(3);
        let c = Matrix::diag(&[3.0, 2.0, 1.0]);
        let e1 = extremal_transforms(&g, &c).unwrap();
        let e2 = extremal_transforms(&g, &c).unwrap();
        assert_eq!(e1.w_min.matrix, e2.w_min.matrix);
        assert_eq!(e1.w_max.matrix, e2.w_max.matrix);
        assert!(e1.tied_g);
        let a_min = alpha(&e1.w_min, &g, &c).unwrap();
        let a_max = alpha(&e1.w_max, &g, &c).unwrap();
        assert!((a_min - a_max).abs() < 1e-10, "isotropic G makes α constant");
    }

    #[test]
    fn sandwich_property_random() {
        let mut stream = RngStream::new(23, 0);
        for trial in 0..20 {
            let d = 2 + stream.below(5);
            let mk_psd = |stream: &mut RngStream| {
                let m = Matrix::from_vec(d, d, stream.gaussian(d * d)).unwrap();
                m.matmul(&m.transpose()).unwrap()
            };
            let g = mk_psd(&mut stream);
            let c = mk_psd(&mut stream);
            let ext = extremal_transforms(&g, &c).unwrap();
            let lo = alpha(&ext.w_min, &g, &c).unwrap();
            let hi = alpha(&ext.w_max, &g, &c).unwrap();
            for _ in 0..50 {
                let w = crate::bases::random_orthogonal(d, &mut stream);
                let a = alpha(&w, &g, &c).unwrap();
                assert!(a >= lo - 1e-8 && a <= hi + 1e-8, "trial {}: {} ∉ [{}, {}]", trial, a, lo, hi);
            }
        }
    }

    #[test]
    fn eigenbasis_form_matches_trace_form() {
        let mut stream = RngStream::new(24, 0);
        let d = 4;
        let mk_psd = |stream: &mut RngStream| {
            let m = Matrix::from_vec(d, d, stream.gaussian(d * d)).unwrap();
            m.matmul(&m.transpose()).unwrap()
        };
        let g = mk_psd(&mut stream);
        let c = mk_psd(&mut stream);
        for _ in 0..20 {
            let w = crate::bases::random_orthogonal(d, &mut stream);
            let a1 = alpha(&w, &g, &c).unwrap();
            let a2 = alpha_eigenbasis_form(&w, &g, &c).unwrap();
            assert!((a1 - a2).abs() <= 1e-10 * a1.abs().max(1.0), "{} vs {}", a1, a2);
        }
    }
}
