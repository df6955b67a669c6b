//! Minimal NIfTI-1 single-file (`n+1`) and pair (`ni1`) support.
//!
//! Reading accepts `int16` and `float32` voxels in either byte order and
//! applies `scl_slope`/`scl_inter`. Geometry comes from the sform when
//! `sform_code > 0`, otherwise from the qform quaternion, otherwise from
//! `pixdim` alone. Writing always produces little-endian `float32` `n+1` files
//! with both sform and qform filled in.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use thiserror::Error;

use super::npy::TensorError;
use super::volume::{orthonormal_deviation, IntensityUnit, Volume, VolumeError};

pub const HEADER_SIZE: usize = 348;
const SINGLE_FILE_OFFSET: usize = 352;

const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const UNITS_MM: u8 = 2;
const INTENSITY_TAG: &str = "intensity=";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NiftiError {
    #[error("bad NIfTI magic {0:?}")]
    BadMagic(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("orientation matrix is not invertible")]
    NonInvertibleOrientation,
    #[error("truncated NIfTI file: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed NIfTI header: {0}")]
    Malformed(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

impl From<TensorError> for NiftiError {
    fn from(e: TensorError) -> Self {
        NiftiError::Volume(e.into())
    }
}

struct Fields<'a> {
    b: &'a [u8],
    big_endian: bool,
}

impl Fields<'_> {
    fn i16(&self, off: usize) -> i16 {
        let raw = [self.b[off], self.b[off + 1]];
        if self.big_endian {
            i16::from_be_bytes(raw)
        } else {
            i16::from_le_bytes(raw)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        let raw = [self.b[off], self.b[off + 1], self.b[off + 2], self.b[off + 3]];
        if self.big_endian {
            f32::from_be_bytes(raw)
        } else {
            f32::from_le_bytes(raw)
        }
    }

    fn f32s<const N: usize>(&self, off: usize) -> [f32; N] {
        std::array::from_fn(|i| self.f32(off + 4 * i))
    }

    fn text(&self, off: usize, len: usize) -> String {
        let raw = &self.b[off..off + len];
        let end = raw.iter().position(|&c| c == 0).unwrap_or(len);
        String::from_utf8_lossy(&raw[..end]).into_owned()
    }
}

/// Decoded header fields this module uses.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub big_endian: bool,
    pub single_file: bool,
    pub dims: [usize; 3],
    pub datatype: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub descrip: String,
}

pub fn read_header(bytes: &[u8]) -> Result<NiftiHeader, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::Truncated {
            expected: HEADER_SIZE,
            found: bytes.len(),
        });
    }
    let magic = &bytes[344..348];
    let single_file = match magic {
        b"n+1\0" => true,
        b"ni1\0" => false,
        _ => return Err(NiftiError::BadMagic(String::from_utf8_lossy(&magic[..3]).into_owned())),
    };
    let le = i32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let be = i32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    let big_endian = match (le, be) {
        (348, _) => false,
        (_, 348) => true,
        _ => return Err(NiftiError::Malformed(format!("sizeof_hdr is {le}, expected 348"))),
    };
    let f = Fields { b: bytes, big_endian };
    let dim: [i16; 8] = std::array::from_fn(|i| f.i16(40 + 2 * i));
    let rank = dim[0];
    if !(3..=7).contains(&rank) {
        return Err(NiftiError::Malformed(format!("dim[0] = {rank}, need a 3D volume")));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(NiftiError::Malformed(format!("non-positive dimension in {dim:?}")));
    }
    if dim[4..=rank as usize].iter().any(|&d| d > 1) {
        return Err(NiftiError::Malformed(format!("only 3D volumes are supported, dim = {dim:?}")));
    }
    let datatype = f.i16(70);
    if datatype != DT_INT16 && datatype != DT_FLOAT32 {
        return Err(NiftiError::UnsupportedDatatype(datatype));
    }
    Ok(NiftiHeader {
        big_endian,
        single_file,
        dims: [dim[1] as usize, dim[2] as usize, dim[3] as usize],
        datatype,
        pixdim: f.f32s::<8>(76),
        vox_offset: f.f32(108),
        scl_slope: f.f32(112),
        scl_inter: f.f32(116),
        qform_code: f.i16(252),
        sform_code: f.i16(254),
        quatern: f.f32s::<3>(256),
        qoffset: f.f32s::<3>(268),
        srow: [f.f32s::<4>(280), f.f32s::<4>(296), f.f32s::<4>(312)],
        descrip: f.text(148, 80),
    })
}

/// Reads an `n+1` file, or an `ni1` header immediately followed by its image
/// bytes.
pub fn read_nifti(bytes: &[u8]) -> Result<Volume, NiftiError> {
    let header = read_header(bytes)?;
    let offset = if header.single_file {
        let off = header.vox_offset;
        if !(off.is_finite() && off >= HEADER_SIZE as f32) {
            return Err(NiftiError::Malformed(format!("vox_offset {off} inside header")));
        }
        off as usize
    } else {
        HEADER_SIZE.max(header.vox_offset.max(0.0) as usize)
    };
    decode(&header, bytes.get(offset..).unwrap_or_default(), offset)
}

/// Reads a detached `.hdr`/`.img` pair.
pub fn read_nifti_pair(header_bytes: &[u8], image_bytes: &[u8]) -> Result<Volume, NiftiError> {
    let header = read_header(header_bytes)?;
    let offset = header.vox_offset.max(0.0) as usize;
    decode(&header, image_bytes.get(offset..).unwrap_or_default(), offset)
}

fn decode(h: &NiftiHeader, payload: &[u8], offset: usize) -> Result<Volume, NiftiError> {
    let count = h.dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let elem = if h.datatype == DT_INT16 { 2 } else { 4 };
    let needed = count
        .and_then(|c| c.checked_mul(elem))
        .ok_or_else(|| NiftiError::Malformed("volume size overflows".into()))?;
    if payload.len() < needed {
        return Err(NiftiError::Truncated {
            expected: offset.saturating_add(needed),
            found: offset.saturating_add(payload.len()),
        });
    }
    let payload = &payload[..needed];
    let mut values: Vec<f32> = if h.datatype == DT_INT16 {
        payload
            .chunks_exact(2)
            .map(|c| {
                let raw = [c[0], c[1]];
                (if h.big_endian { i16::from_be_bytes(raw) } else { i16::from_le_bytes(raw) }) as f32
            })
            .collect()
    } else {
        payload
            .chunks_exact(4)
            .map(|c| {
                let raw = [c[0], c[1], c[2], c[3]];
                if h.big_endian {
                    f32::from_be_bytes(raw)
                } else {
                    f32::from_le_bytes(raw)
                }
            })
            .collect()
    };
    let slope = h.scl_slope;
    if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && h.scl_inter == 0.0) {
        let inter = if h.scl_inter.is_finite() { h.scl_inter } else { 0.0 };
        for v in &mut values {
            *v = (*v as f64 * slope as f64 + inter as f64) as f32;
        }
    }

    let (spacing, origin, directions) = geometry(h)?;
    let unit = h
        .descrip
        .strip_prefix(INTENSITY_TAG)
        .and_then(IntensityUnit::parse)
        .unwrap_or(IntensityUnit::Hu);
    Ok(Volume::new(h.dims, values, spacing, origin, directions, unit)?)
}

fn geometry(h: &NiftiHeader) -> Result<([f64; 3], [f64; 3], Matrix3<f64>), NiftiError> {
    let pix = |i: usize| {
        let p = (h.pixdim[i] as f64).abs();
        if p.is_finite() && p > 0.0 {
            p
        } else {
            1.0
        }
    };
    let spacing = [pix(1), pix(2), pix(3)];

    if h.sform_code > 0 {
        let m = Matrix3::from_fn(|r, c| h.srow[r][c] as f64);
        let origin = [h.srow[0][3] as f64, h.srow[1][3] as f64, h.srow[2][3] as f64];
        if !m.iter().all(|v| v.is_finite()) || !origin.iter().all(|v| v.is_finite()) {
            return Err(NiftiError::Malformed("non-finite sform".into()));
        }
        let mut dirs = m;
        for c in 0..3 {
            let norm = dirs.column(c).norm();
            if norm < 1e-12 {
                return Err(NiftiError::NonInvertibleOrientation);
            }
            dirs.set_column(c, &(dirs.column(c) / norm));
        }
        if dirs.determinant().abs() < 1e-6 {
            return Err(NiftiError::NonInvertibleOrientation);
        }
        if orthonormal_deviation(&dirs) > 1e-6 {
            dirs = nearest_orthonormal(&dirs).ok_or(NiftiError::NonInvertibleOrientation)?;
        }
        return Ok((spacing, origin, dirs));
    }

    if h.qform_code > 0 {
        let [b, c, d] = h.quatern.map(|v| v as f64);
        if ![b, c, d].iter().all(|v| v.is_finite()) {
            return Err(NiftiError::Malformed("non-finite quaternion".into()));
        }
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let r = Matrix3::new(
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        );
        let mut dirs = nearest_orthonormal(&r).ok_or(NiftiError::NonInvertibleOrientation)?;
        if h.pixdim[0] < 0.0 {
            let flipped = -dirs.column(2);
            dirs.set_column(2, &flipped);
        }
        let origin = h.qoffset.map(|v| v as f64);
        return Ok((spacing, origin, dirs));
    }

    Ok((spacing, [0.0; 3], Matrix3::identity()))
}

/// Polar factor of `m`, i.e. the closest orthonormal matrix in Frobenius norm.
fn nearest_orthonormal(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    if svd.singular_values.min() < 1e-6 {
        return None;
    }
    Some(u * v_t)
}

pub fn write_nifti(v: &Volume) -> Vec<u8> {
    let mut h = vec![0u8; SINGLE_FILE_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, off: usize, x: i16| h[off..off + 2].copy_from_slice(&x.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, off: usize, x: f32| h[off..off + 4].copy_from_slice(&x.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dims = v.dims();
    let dim = [3i16, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * i, *d);
    }
    put_i16(&mut h, 70, DT_FLOAT32);
    put_i16(&mut h, 72, 32);

    let dirs = v.axis_directions;
    let det = dirs.determinant();
    let qfac: f32 = if det < 0.0 { -1.0 } else { 1.0 };
    let pixdim = [qfac, v.spacing_mm[0] as f32, v.spacing_mm[1] as f32, v.spacing_mm[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        put_f32(&mut h, 76 + 4 * i, *p);
    }
    put_f32(&mut h, 108, SINGLE_FILE_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    h[123] = UNITS_MM;

    let descrip = format!("{INTENSITY_TAG}{}", v.intensity_unit.as_str());
    h[148..148 + descrip.len()].copy_from_slice(descrip.as_bytes());

    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    let mut proper = dirs;
    if det < 0.0 {
        let flipped = -proper.column(2);
        proper.set_column(2, &flipped);
    }
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(proper));
    // NIfTI requires a >= 0.
    let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
    put_f32(&mut h, 256, q.i as f32);
    put_f32(&mut h, 260, q.j as f32);
    put_f32(&mut h, 264, q.k as f32);
    for (i, o) in v.origin_mm.iter().enumerate() {
        put_f32(&mut h, 268 + 4 * i, *o as f32);
    }

    let affine = v.linear_map();
    for r in 0..3 {
        let row = 280 + 16 * r;
        for c in 0..3 {
            put_f32(&mut h, row + 4 * c, affine[(r, c)] as f32);
        }
        put_f32(&mut h, row + 12, v.origin_mm[r] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");

    let mut out = h;
    out.reserve(v.values().len() * 4);
    for x in v.values() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembled 2×2×2 int16 file with an identity sform.
    pub(crate) fn fixture_int16(slope: f32, inter: f32) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        b[0..4].copy_from_slice(&348i32.to_le_bytes());
        for (i, d) in [3i16, 2, 2, 2, 1, 1, 1, 1].iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        b[70..72].copy_from_slice(&4i16.to_le_bytes());
        b[72..74].copy_from_slice(&16i16.to_le_bytes());
        for (i, p) in [1.0f32, 1.0, 1.0, 1.0].iter().enumerate() {
            b[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        b[108..112].copy_from_slice(&352f32.to_le_bytes());
        b[112..116].copy_from_slice(&slope.to_le_bytes());
        b[116..120].copy_from_slice(&inter.to_le_bytes());
        b[254..256].copy_from_slice(&1i16.to_le_bytes());
        let srow = [[1.0f32, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        for (r, row) in srow.iter().enumerate() {
            for (c, x) in row.iter().enumerate() {
                let off = 280 + 16 * r + 4 * c;
                b[off..off + 4].copy_from_slice(&x.to_le_bytes());
            }
        }
        b[344..348].copy_from_slice(b"n+1\0");
        for v in 0i16..8 {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn reads_hand_built_fixture() {
        let vol = read_nifti(&fixture_int16(0.0, 0.0)).unwrap();
        assert_eq!(vol.dims(), [2, 2, 2]);
        assert_eq!(vol.spacing_mm, [1.0; 3]);
        assert_eq!(vol.axis_directions, Matrix3::identity());
        assert_eq!(vol.values(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(vol.voxel(1, 1, 0), 3.0);
        assert_eq!(vol.intensity_unit, IntensityUnit::Hu);
    }

    #[test]
    fn applies_scaling() {
        let vol = read_nifti(&fixture_int16(2.0, 1.0)).unwrap();
        assert_eq!(vol.values()[3], 7.0);
    }

    #[test]
    fn bad_magic() {
        let mut b = fixture_int16(0.0, 0.0);
        b[344..348].copy_from_slice(b"xxx\0");
        assert_eq!(read_nifti(&b), Err(NiftiError::BadMagic("xxx".into())));
    }

    #[test]
    fn unsupported_datatype() {
        let mut b = fixture_int16(0.0, 0.0);
        b[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert_eq!(read_nifti(&b), Err(NiftiError::UnsupportedDatatype(64)));
    }

    #[test]
    fn degenerate_sform() {
        let mut b = fixture_int16(0.0, 0.0);
        // Collapse the second column onto the first.
        b[284..288].copy_from_slice(&1.0f32.to_le_bytes());
        b[300..304].copy_from_slice(&0.0f32.to_le_bytes());
        assert_eq!(read_nifti(&b), Err(NiftiError::NonInvertibleOrientation));
    }

    #[test]
    fn fixture_round_trip() {
        let vol = read_nifti(&fixture_int16(0.0, 0.0)).unwrap();
        let bytes = write_nifti(&vol);
        assert_eq!(&bytes[76 + 4..76 + 16], &[1.0f32, 1.0, 1.0].iter().flat_map(|p| p.to_le_bytes()).collect::<Vec<_>>()[..]);
        let back = read_nifti(&bytes).unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn anisotropic_spacing_survives() {
        let rot = Rotation3::from_euler_angles(0.2, 0.0, -0.4).into_inner();
        let vol = Volume::new(
            [3, 2, 2],
            (0..12).map(|v| v as f32 * 0.5 - 2.0).collect(),
            [1.0, 1.0, 3.0],
            [-120.5, 33.25, 10.0],
            rot,
            IntensityUnit::Normalized,
        )
        .unwrap();
        let back = read_nifti(&write_nifti(&vol)).unwrap();
        assert_eq!(back.values(), vol.values());
        assert_eq!(back.spacing_mm, [1.0, 1.0, 3.0]);
        assert_eq!(back.intensity_unit, IntensityUnit::Normalized);
        for i in 0..3 {
            assert!((back.origin_mm[i] - vol.origin_mm[i]).abs() <= 1e-5 * vol.origin_mm[i].abs().max(1.0));
        }
        assert!((back.axis_directions - vol.axis_directions).abs().max() < 1e-5);
    }

    #[test]
    fn qform_only_geometry() {
        let rot = Rotation3::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_2).into_inner();
        let vol = Volume::new([1, 1, 1], vec![5.0], [2.0, 2.0, 2.0], [1.0, 2.0, 3.0], rot, IntensityUnit::Hu).unwrap();
        let mut bytes = write_nifti(&vol);
        bytes[254..256].copy_from_slice(&0i16.to_le_bytes());
        let back = read_nifti(&bytes).unwrap();
        assert!((back.axis_directions - rot).abs().max() < 1e-6);
        assert_eq!(back.origin_mm, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn left_handed_directions_round_trip() {
        let mut dirs = Matrix3::identity();
        dirs[(0, 0)] = -1.0;
        let vol = Volume::new([1, 1, 2], vec![1.0, 2.0], [1.0; 3], [0.0; 3], dirs, IntensityUnit::Hu).unwrap();
        let mut bytes = write_nifti(&vol);
        assert_eq!(read_nifti(&bytes).unwrap().axis_directions, dirs);
        bytes[254..256].copy_from_slice(&0i16.to_le_bytes());
        let q = read_nifti(&bytes).unwrap().axis_directions;
        assert!((q - dirs).abs().max() < 1e-6);
    }
}
