//! Orthonormal bases and orthogonal transforms.
//!
//! 2-D versions of the separable transforms (canonical, DCT, DST, Hadamard)
//! are Kronecker products of their 1-D factors over image height and width.
//! The Haar basis is the full multilevel 2-D wavelet decomposition down to a
//! single scaling coefficient. Every transform carries an index layout that
//! maps basis columns back to pixel / frequency / sequency / wavelet
//! coordinates for visualization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{vecops, Matrix, RngStream};

/// Orthogonality tolerance every constructed transform must satisfy.
pub const ORTHO_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Canonical,
    Dct,
    Dst,
    Hadamard,
    Haar2d,
}

/// Where an orthogonal transform came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Canonical,
    Dct,
    Dst,
    Hadamard,
    Haar2d,
    RandomOrthogonal,
    WMin,
    WMax,
    Identity,
}

impl From<BasisKind> for TransformKind {
    fn from(k: BasisKind) -> Self {
        match k {
            BasisKind::Canonical => TransformKind::Canonical,
            BasisKind::Dct => TransformKind::Dct,
            BasisKind::Dst => TransformKind::Dst,
            BasisKind::Hadamard => TransformKind::Hadamard,
            BasisKind::Haar2d => TransformKind::Haar2d,
        }
    }
}

/// Haar subband labels. `Detail` covers levels where only one image
/// dimension could still be halved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletBand {
    Scaling,
    Horizontal,
    Vertical,
    Diagonal,
    Detail,
}

/// Visualization coordinates for one basis column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IndexCoord {
    Pixel { row: usize, col: usize },
    Frequency { fy: usize, fx: usize },
    Sequency { sy: usize, sx: usize },
    Wavelet { level: usize, band: WaveletBand, row: usize, col: usize },
    Flat { index: usize },
}

impl IndexCoord {
    /// Grid cell used when assembling heat maps.
    pub fn grid_pos(&self) -> (usize, usize) {
        match *self {
            IndexCoord::Pixel { row, col } => (row, col),
            IndexCoord::Frequency { fy, fx } => (fy, fx),
            IndexCoord::Sequency { sy, sx } => (sy, sx),
            IndexCoord::Wavelet { row, col, .. } => (row, col),
            IndexCoord::Flat { index } => (0, index),
        }
    }

    pub fn is_frequency_like(&self) -> bool {
        matches!(self, IndexCoord::Frequency { .. } | IndexCoord::Sequency { .. })
    }
}

/// A D×D orthogonal matrix whose columns are basis vectors, together with
/// provenance and per-column layout metadata.
#[derive(Clone, Debug)]
pub struct OrthoTransform {
    pub dim: usize,
    pub matrix: Matrix,
    pub provenance: TransformKind,
    pub index_layout: Vec<IndexCoord>,
}

impl OrthoTransform {
    pub fn identity(d: usize) -> Self {
        Self {
            dim: d,
            matrix: Matrix::identity(d),
            provenance: TransformKind::Identity,
            index_layout: (0..d).map(|index| IndexCoord::Flat { index }).collect(),
        }
    }

    pub fn from_matrix(matrix: Matrix, provenance: TransformKind) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension("orthogonal transform must be square".into()));
        }
        let d = matrix.rows();
        let t = Self {
            dim: d,
            matrix,
            provenance,
            index_layout: (0..d).map(|index| IndexCoord::Flat { index }).collect(),
        };
        let err = t.orthogonality_error();
        if err > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "matrix is not orthogonal: max |WᵀW - I| = {:e}",
                err
            )));
        }
        Ok(t)
    }

    /// Max-abs entry of WᵀW − I.
    pub fn orthogonality_error(&self) -> f64 {
        let g = self.matrix.transpose().matmul(&self.matrix).expect("square");
        let mut worst = 0.0f64;
        for r in 0..self.dim {
            for c in 0..self.dim {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((g.get(r, c) - target).abs());
            }
        }
        worst
    }

    /// W·x.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matrix.matvec(x)
    }

    /// Wᵀ·x (the inverse map).
    pub fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matrix.vecmat(x)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.matrix.column(k)
    }
}

/// Orthonormal DCT-II basis; column k holds cos(π(2n+1)k / 2N) over n.
fn dct2_1d(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            let angle = std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n as f64);
            m.set(i, k, scale * angle.cos());
        }
    }
    m
}

/// Orthonormal DST-II basis; column k holds sin(π(2n+1)(k+1) / 2N) over n.
fn dst2_1d(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for k in 0..n {
        let scale = if k == n - 1 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            let angle =
                std::f64::consts::PI * (2.0 * i as f64 + 1.0) * (k as f64 + 1.0) / (2.0 * n as f64);
            m.set(i, k, scale * angle.sin());
        }
    }
    m
}

fn sign_changes(col: &[f64]) -> usize {
    let mut changes = 0;
    for w in col.windows(2) {
        if w[0] * w[1] < 0.0 {
            changes += 1;
        }
    }
    changes
}

/// Sequency-ordered (Walsh) Hadamard basis for n a power of two.
fn hadamard_1d(n: usize) -> Result<Matrix> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("hadamard size {} is not a power of two", n)));
    }
    // Sylvester construction in natural order.
    let mut h = vec![vec![1.0f64]];
    let mut size = 1;
    while size < n {
        let mut next = vec![vec![0.0; 2 * size]; 2 * size];
        for i in 0..size {
            for j in 0..size {
                let v = h[i][j];
                next[i][j] = v;
                next[i][j + size] = v;
                next[i + size][j] = v;
                next[i + size][j + size] = -v;
            }
        }
        h = next;
        size *= 2;
    }
    let norm = 1.0 / (n as f64).sqrt();
    let natural = Matrix::from_fn(n, n, |i, j| h[i][j] * norm);
    // Reorder columns by sign-change count (sequency order). The counts are a
    // permutation of 0..n, so the sort is unambiguous.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&k| sign_changes(&natural.column(k)));
    let mut out = Matrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        out.set_column(k, &natural.column(src));
    }
    Ok(out)
}

/// One analysis level of the 1-D Haar transform on the first `len` entries:
/// pairwise averages to the front half, details to the back half.
fn haar_level_1d(x: &mut [f64], len: usize) {
    let half = len / 2;
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut tmp = vec![0.0; len];
    for i in 0..half {
        tmp[i] = (x[2 * i] + x[2 * i + 1]) * inv_sqrt2;
        tmp[half + i] = (x[2 * i] - x[2 * i + 1]) * inv_sqrt2;
    }
    x[..len].copy_from_slice(&tmp);
}

/// Full multilevel 2-D Haar analysis of one h×w image (row-major, in place).
/// At each level every dimension still larger than one is halved; the final
/// (0,0) cell carries the single scaling coefficient.
fn haar_analysis_2d(img: &mut [f64], h: usize, w: usize) {
    let (mut ch, mut cw) = (h, w);
    let mut col = vec![0.0; h];
    while ch > 1 || cw > 1 {
        if cw > 1 {
            for r in 0..ch {
                haar_level_1d(&mut img[r * w..r * w + cw], cw);
            }
        }
        if ch > 1 {
            for c in 0..cw {
                for r in 0..ch {
                    col[r] = img[r * w + c];
                }
                haar_level_1d(&mut col, ch);
                for r in 0..ch {
                    img[r * w + c] = col[r];
                }
            }
        }
        if cw > 1 {
            cw /= 2;
        }
        if ch > 1 {
            ch /= 2;
        }
    }
}

/// Label every cell of the final Haar coefficient grid with (level, band).
fn haar_layout(h: usize, w: usize) -> Vec<IndexCoord> {
    let mut layout = vec![IndexCoord::Wavelet { level: 0, band: WaveletBand::Scaling, row: 0, col: 0 }; h * w];
    let (mut ch, mut cw) = (h, w);
    let mut level = 1usize;
    while ch > 1 || cw > 1 {
        let nh = if ch > 1 { ch / 2 } else { ch };
        let nw = if cw > 1 { cw / 2 } else { cw };
        for r in 0..ch {
            for c in 0..cw {
                if r < nh && c < nw {
                    continue; // stays on the scaling path
                }
                let band = match (ch > 1, cw > 1) {
                    (true, true) => match (r >= nh, c >= nw) {
                        (false, true) => WaveletBand::Horizontal,
                        (true, false) => WaveletBand::Vertical,
                        (true, true) => WaveletBand::Diagonal,
                        (false, false) => unreachable!(),
                    },
                    _ => WaveletBand::Detail,
                };
                layout[r * w + c] = IndexCoord::Wavelet { level, band, row: r, col: c };
            }
        }
        ch = nh;
        cw = nw;
        level += 1;
    }
    layout
}

fn is_dyadic(n: usize) -> bool {
    n >= 1 && n.is_power_of_two()
}

/// Construct a named orthonormal basis over h×w images (row-major
/// vectorization, D = h·w).
pub fn build_basis(kind: BasisKind, height: usize, width: usize) -> Result<OrthoTransform> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("basis dimensions must be positive".into()));
    }
    let d = height * width;
    let (matrix, layout) = match kind {
        BasisKind::Canonical => {
            let layout =
                (0..d).map(|k| IndexCoord::Pixel { row: k / width, col: k % width }).collect();
            (Matrix::identity(d), layout)
        }
        BasisKind::Dct | BasisKind::Dst => {
            let (bh, bw) = match kind {
                BasisKind::Dct => (dct2_1d(height), dct2_1d(width)),
                _ => (dst2_1d(height), dst2_1d(width)),
            };
            let m = bh.kron(&bw);
            let layout =
                (0..d).map(|k| IndexCoord::Frequency { fy: k / width, fx: k % width }).collect();
            (m, layout)
        }
        BasisKind::Hadamard => {
            if !(height * width).is_power_of_two() {
                return Err(Error::InvalidArgument(format!(
                    "hadamard basis needs height*width a power of two, got {}x{}",
                    height, width
                )));
            }
            let m = hadamard_1d(height)?.kron(&hadamard_1d(width)?);
            let layout =
                (0..d).map(|k| IndexCoord::Sequency { sy: k / width, sx: k % width }).collect();
            (m, layout)
        }
        BasisKind::Haar2d => {
            if !is_dyadic(height) || !is_dyadic(width) {
                return Err(Error::InvalidArgument(format!(
                    "haar2d basis needs dyadic height and width, got {}x{}",
                    height, width
                )));
            }
            // Columns of the analysis operator T are T·e_k; the synthesis
            // basis stored here is W = Tᵀ.
            let mut t = Matrix::zeros(d, d);
            let mut unit = vec![0.0; d];
            for k in 0..d {
                unit.fill(0.0);
                unit[k] = 1.0;
                haar_analysis_2d(&mut unit, height, width);
                t.set_column(k, &unit);
            }
            (t.transpose(), haar_layout(height, width))
        }
    };
    let transform = OrthoTransform {
        dim: d,
        matrix,
        provenance: kind.into(),
        index_layout: layout,
    };
    debug_assert!(transform.orthogonality_error() <= ORTHO_TOL);
    Ok(transform)
}

/// Haar-distributed random orthogonal matrix: QR of a Gaussian matrix via
/// modified Gram-Schmidt, which leaves the R diagonal positive.
pub fn random_orthogonal(d: usize, stream: &mut RngStream) -> OrthoTransform {
    assert!(d >= 1, "dimension must be positive");
    loop {
        let g = Matrix::from_vec(d, d, stream.gaussian(d * d)).expect("shape");
        if let Some(q) = gram_schmidt(&g) {
            return OrthoTransform {
                dim: d,
                matrix: q,
                provenance: TransformKind::RandomOrthogonal,
                index_layout: (0..d).map(|index| IndexCoord::Flat { index }).collect(),
            };
        }
        // Rank-deficient draw (probability zero in theory); redraw.
    }
}

fn gram_schmidt(g: &Matrix) -> Option<Matrix> {
    let d = g.rows();
    let mut cols: Vec<Vec<f64>> = (0..d).map(|k| g.column(k)).collect();
    for k in 0..d {
        for j in 0..k {
            let proj = vecops::dot(&cols[k], &cols[j]);
            let prev = cols[j].clone();
            vecops::axpy(&mut cols[k], -proj, &prev);
        }
        // Second orthogonalization pass for numerical robustness.
        for j in 0..k {
            let proj = vecops::dot(&cols[k], &cols[j]);
            let prev = cols[j].clone();
            vecops::axpy(&mut cols[k], -proj, &prev);
        }
        let n = vecops::norm2(&cols[k]);
        if n < 1e-12 {
            return None;
        }
        let inv = 1.0 / n;
        for x in cols[k].iter_mut() {
            *x *= inv;
        }
    }
    let mut q = Matrix::zeros(d, d);
    for (k, c) in cols.iter().enumerate() {
        q.set_column(k, c);
    }
    Some(q)
}
