//! 8-bit binary PGM emission for eigenvector strips and metric heat maps.

use std::io::Write;
use std::path::Path;

use sadkit::bases::OrthoTransform;
use sadkit::numerics::Matrix;

use crate::CliError;

/// Write a grayscale image; values are min-max normalized to 0..255.
/// A constant image maps to mid-gray.
pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<(), CliError> {
    if data.len() != width * height {
        return Err(CliError::Config(format!(
            "pgm: {} values for a {}x{} image",
            data.len(),
            width,
            height
        )));
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let bytes: Vec<u8> = data
        .iter()
        .map(|v| {
            if span > 0.0 {
                (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                128
            }
        })
        .collect();
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", width, height)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Render one basis vector (or SAD) as an image using the family layout.
pub fn vector_pgm(path: &Path, v: &[f64], height: usize, width: usize) -> Result<(), CliError> {
    write_pgm(path, width, height, v)
}

/// Assemble per-column metric values into a heat map laid out by the basis
/// index layout. Frequency/sequency layouts are centered: the zero
/// frequency lands in the middle of a (2h−1)×(2w−1) image whose quadrants
/// mirror the measured grid. Pixel and wavelet layouts map directly onto
/// the h×w grid.
pub fn render_heatmap_grid(
    values: &[f64],
    basis: &OrthoTransform,
    grid_h: usize,
    grid_w: usize,
) -> Result<Matrix, CliError> {
    if values.len() != basis.index_layout.len() {
        return Err(CliError::Config(format!(
            "heatmap: {} values for {} basis columns",
            values.len(),
            basis.index_layout.len()
        )));
    }
    let frequency_like = basis.index_layout.iter().all(|c| c.is_frequency_like());
    if frequency_like {
        let (ih, iw) = (2 * grid_h - 1, 2 * grid_w - 1);
        let mut img = Matrix::zeros(ih, iw);
        let (cy, cx) = (grid_h - 1, grid_w - 1);
        for (v, coord) in values.iter().zip(&basis.index_layout) {
            let (fy, fx) = coord.grid_pos();
            if fy >= grid_h || fx >= grid_w {
                return Err(CliError::Config("layout coordinate outside grid".into()));
            }
            // Mirror into all four quadrants around the centered zero
            // frequency, respecting the transform symmetry.
            img.set(cy + fy, cx + fx, *v);
            img.set(cy + fy, cx - fx, *v);
            img.set(cy - fy, cx + fx, *v);
            img.set(cy - fy, cx - fx, *v);
        }
        Ok(img)
    } else {
        let mut img = Matrix::zeros(grid_h, grid_w);
        for (v, coord) in values.iter().zip(&basis.index_layout) {
            let (r, c) = coord.grid_pos();
            if r >= grid_h || c >= grid_w {
                return Err(CliError::Config("layout coordinate outside grid".into()));
            }
            img.set(r, c, *v);
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sadkit::bases::{build_basis, BasisKind};

    #[test]
    fn pgm_bytes_and_constant_image() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        write_pgm(&p, 2, 2, &[0.0, 1.0, 0.5, 1.0]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0u8, 255, 128, 255]);

        let c = dir.path().join("c.pgm");
        write_pgm(&c, 2, 1, &[3.3, 3.3]).unwrap();
        let bytes = std::fs::read(&c).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[128u8, 128]);
    }

    #[test]
    fn canonical_layout_is_identity_grid() {
        let b = build_basis(BasisKind::Canonical, 2, 3).unwrap();
        let vals: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let img = render_heatmap_grid(&vals, &b, 2, 3).unwrap();
        for k in 0..6 {
            assert_eq!(img.get(k / 3, k % 3), k as f64);
        }
    }

    #[test]
    fn hadamard_layout_centers_and_mirrors() {
        let b = build_basis(BasisKind::Hadamard, 4, 4).unwrap();
        let vals: Vec<f64> = (0..16).map(|v| v as f64 + 1.0).collect();
        let img = render_heatmap_grid(&vals, &b, 4, 4).unwrap();
        assert_eq!(img.rows(), 7);
        // Zero sequency sits at the center.
        assert_eq!(img.get(3, 3), vals[0]);
        // Quadrants mirror.
        for fy in 0..4 {
            for fx in 0..4 {
                let v = img.get(3 + fy, 3 + fx);
                assert_eq!(img.get(3 - fy, 3 - fx), v);
                assert_eq!(img.get(3 + fy, 3 - fx), v);
            }
        }

        // Constant values produce a constant image.
        let flat = render_heatmap_grid(&vec![2.0; 16], &b, 4, 4).unwrap();
        assert!(flat.data().iter().all(|v| *v == 2.0));
    }

    #[test]
    fn missing_rows_rejected() {
        let b = build_basis(BasisKind::Dct, 2, 2).unwrap();
        assert!(render_heatmap_grid(&[1.0, 2.0], &b, 2, 2).is_err());
    }
}
