//! Dataset construction and ingestion: rank-one Gaussians, spheres embedded
//! in 3-dimensional subspaces, big-endian IDX image files, area downscaling
//! and orthogonal transformation.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bases::OrthoTransform;
use crate::error::{Error, Result};
use crate::numerics::{vecops, Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataLayout {
    Flat { dim: usize },
    Image { channels: usize, height: usize, width: usize },
}

impl DataLayout {
    pub fn dim(&self) -> usize {
        match *self {
            DataLayout::Flat { dim } => dim,
            DataLayout::Image { channels, height, width } => channels * height * width,
        }
    }
}

/// An in-memory dataset of n samples in R^D, one per row.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Matrix,
    pub layout: DataLayout,
    pub provenance: String,
}

impl Dataset {
    pub fn new(samples: Matrix, layout: DataLayout, provenance: impl Into<String>) -> Result<Self> {
        if samples.cols() != layout.dim() {
            return Err(Error::Dimension(format!(
                "samples have {} columns but layout dimension is {}",
                samples.cols(),
                layout.dim()
            )));
        }
        if samples.rows() == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
        }
        if !samples.all_finite() {
            return Err(Error::NonFinite("dataset samples".into()));
        }
        Ok(Self { samples, layout, provenance: provenance.into() })
    }

    pub fn n(&self) -> usize {
        self.samples.rows()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n()).map(move |i| self.row(i))
    }
}

/// Samples from N(0, d·vvᵀ): each sample is √d·g·v with g standard normal.
pub fn sample_rank_one(v: &[f64], d: usize, n: usize, stream: &mut RngStream) -> Result<Dataset> {
    if v.len() != d {
        return Err(Error::Dimension(format!("direction has length {}, expected {}", v.len(), d)));
    }
    check_unit(v)?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let scale = (d as f64).sqrt();
    let mut samples = Matrix::zeros(n, d);
    for i in 0..n {
        let g = scale * stream.normal();
        let row = samples.row_mut(i);
        for (r, &vj) in row.iter_mut().zip(v) {
            *r = g * vj;
        }
    }
    Dataset::new(samples, DataLayout::Flat { dim: d }, format!("rank_one(d={})", d))
}

/// Uniform samples on the radius-r 2-sphere embedded in the span of three
/// orthonormal vectors of R^D.
pub fn sphere_dataset(
    basis3: &[Vec<f64>; 3],
    radius: f64,
    n: usize,
    stream: &mut RngStream,
) -> Result<Dataset> {
    if radius <= 0.0 {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let d = basis3[0].len();
    for (i, b) in basis3.iter().enumerate() {
        if b.len() != d {
            return Err(Error::Dimension("basis vectors have mixed lengths".into()));
        }
        check_unit(b)?;
        for other in basis3.iter().skip(i + 1) {
            if vecops::dot(b, other).abs() > 1e-8 {
                return Err(Error::InvalidArgument("basis vectors are not orthonormal".into()));
            }
        }
    }
    let mut samples = Matrix::zeros(n, d);
    for i in 0..n {
        // Normalized 3-D Gaussian gives the uniform sphere direction.
        let g = stream.unit_vector(3);
        let row = samples.row_mut(i);
        for (j, r) in row.iter_mut().enumerate() {
            *r = radius * (g[0] * basis3[0][j] + g[1] * basis3[1][j] + g[2] * basis3[2][j]);
        }
    }
    Dataset::new(samples, DataLayout::Flat { dim: d }, format!("sphere(r={})", radius))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or(Error::Parse { offset, message: "unexpected end of file".into() })
}

/// Load a big-endian IDX image file, pixel values scaled to [-1, 1].
/// Returns the dataset and, when a labels path is given, the label bytes.
pub fn load_idx(
    images_path: &Path,
    labels_path: Option<&Path>,
) -> Result<(Dataset, Option<Vec<u8>>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(images_path)?.read_to_end(&mut bytes)?;
    let magic = read_be_u32(&bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad image magic {:#010x}, expected {:#010x}", magic, IDX_IMAGES_MAGIC),
        });
    }
    let n = read_be_u32(&bytes, 4)? as usize;
    let h = read_be_u32(&bytes, 8)? as usize;
    let w = read_be_u32(&bytes, 12)? as usize;
    let need = 16 + n * h * w;
    if bytes.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("truncated image file: need {} bytes, have {}", need, bytes.len()),
        });
    }
    let mut samples = Matrix::zeros(n, h * w);
    for i in 0..n {
        let row = samples.row_mut(i);
        let src = &bytes[16 + i * h * w..16 + (i + 1) * h * w];
        for (r, &px) in row.iter_mut().zip(src) {
            *r = px as f64 / 127.5 - 1.0;
        }
    }

    let labels = match labels_path {
        None => None,
        Some(path) => {
            let mut lb = Vec::new();
            std::fs::File::open(path)?.read_to_end(&mut lb)?;
            let magic = read_be_u32(&lb, 0)?;
            if magic != IDX_LABELS_MAGIC {
                return Err(Error::Parse {
                    offset: 0,
                    message: format!(
                        "bad label magic {:#010x}, expected {:#010x}",
                        magic, IDX_LABELS_MAGIC
                    ),
                });
            }
            let n_labels = read_be_u32(&lb, 4)? as usize;
            if n_labels != n {
                return Err(Error::Parse {
                    offset: 4,
                    message: format!("{} labels for {} images", n_labels, n),
                });
            }
            if lb.len() < 8 + n {
                return Err(Error::Parse { offset: lb.len(), message: "truncated label file".into() });
            }
            Some(lb[8..8 + n].to_vec())
        }
    };

    let ds = Dataset::new(
        samples,
        DataLayout::Image { channels: 1, height: h, width: w },
        format!("idx({})", images_path.display()),
    )?;
    Ok((ds, labels))
}

/// Area-average pooling by an integer factor along both image axes.
pub fn downscale(dataset: &Dataset, factor: usize) -> Result<Dataset> {
    let (c, h, w) = match dataset.layout {
        DataLayout::Image { channels, height, width } => (channels, height, width),
        DataLayout::Flat { .. } => {
            return Err(Error::InvalidArgument("downscale needs an image layout".into()))
        }
    };
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "factor {} does not divide image {}x{}",
            factor, h, w
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = Matrix::zeros(dataset.n(), c * oh * ow);
    for i in 0..dataset.n() {
        let src = dataset.row(i);
        let dst = out.row_mut(i);
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += src[ch * h * w + (y * factor + dy) * w + (x * factor + dx)];
                        }
                    }
                    dst[ch * oh * ow + y * ow + x] = acc * inv;
                }
            }
        }
    }
    Dataset::new(
        out,
        DataLayout::Image { channels: c, height: oh, width: ow },
        format!("{} downscaled x{}", dataset.provenance, factor),
    )
}

/// Map every sample x to W·x.
pub fn apply_transform(dataset: &Dataset, w: &OrthoTransform) -> Result<Dataset> {
    if w.dim != dataset.dim() {
        return Err(Error::Dimension(format!(
            "transform dimension {} does not match dataset dimension {}",
            w.dim,
            dataset.dim()
        )));
    }
    let mut out = Matrix::zeros(dataset.n(), dataset.dim());
    for i in 0..dataset.n() {
        let z = w.apply(dataset.row(i))?;
        out.row_mut(i).copy_from_slice(&z);
    }
    Dataset::new(out, dataset.layout, format!("{} · {:?}", dataset.provenance, w.provenance))
}

fn check_unit(v: &[f64]) -> Result<()> {
    let n = vecops::norm2(v);
    if (n - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!("vector must be unit norm, got {}", n)));
    }
    Ok(())
}
