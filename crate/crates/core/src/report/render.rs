use serde::{Deserialize, Serialize};

use super::{Axis, ReportError};
use crate::dissect::ActivationVolume;
use crate::prep::PatchVolume;

/// Eight evenly spaced stops of the viridis ramp.
const VIRIDIS: [[u8; 3]; 8] = [
    [0x44, 0x01, 0x54],
    [0x46, 0x32, 0x7e],
    [0x36, 0x5c, 0x8d],
    [0x27, 0x7f, 0x8e],
    [0x1f, 0xa1, 0x87],
    [0x4a, 0xc1, 0x6d],
    [0xa0, 0xda, 0x39],
    [0xfd, 0xe7, 0x25],
];

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const COLLAGE_SEPARATOR: usize = 2;

/// Perceptually uniform colour for `h` in `[0, 1]`.
pub fn colormap(h: f64) -> [f64; 3] {
    let x = h.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let lo = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - lo as f64;
    let (a, b) = (VIRIDIS[lo], VIRIDIS[lo + 1]);
    [0, 1, 2].map(|c| a[c] as f64 + (b[c] as f64 - a[c] as f64) * f)
}

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Raster {
    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.rgb[o], self.rgb[o + 1], self.rgb[o + 2]]
    }

    /// Deterministic PNG encoding: no timestamps or optional chunks.
    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().expect("writing to memory");
            w.write_image_data(&self.rgb).expect("buffer matches dimensions");
        }
        out
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, png::DecodingError> {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        buf.truncate(info.buffer_size());
        let rgb = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            _ => return Err(png::DecodingError::LimitsExceeded),
        };
        Ok(Self {
            width: info.width as usize,
            height: info.height as usize,
            rgb,
        })
    }
}

/// Geometry of a 2D slice through a `[ni, nj, nk]` grid: image size and the
/// grid index behind each pixel. Superior and anterior point up; sagittal
/// views put anterior on the left.
#[derive(Debug, Clone, Copy)]
pub struct SlicePlane {
    pub axis: Axis,
    pub index: usize,
    pub dims: [usize; 3],
}

impl SlicePlane {
    pub fn size(&self) -> (usize, usize) {
        let [ni, nj, nk] = self.dims;
        match self.axis {
            Axis::Axial => (ni, nj),
            Axis::Coronal => (ni, nk),
            Axis::Sagittal => (nj, nk),
        }
    }

    /// Grid `(i, j, k)` of image pixel `(x, y)`.
    pub fn voxel(&self, x: usize, y: usize) -> [usize; 3] {
        let [_, nj, nk] = self.dims;
        match self.axis {
            Axis::Axial => [x, nj - 1 - y, self.index],
            Axis::Coronal => [x, self.index, nk - 1 - y],
            Axis::Sagittal => [self.index, nj - 1 - x, nk - 1 - y],
        }
    }
}

/// Trilinear resampling of one unit's native map onto a finer grid using
/// cell-centre alignment.
pub struct Upsampler<'a> {
    values: &'a [f32],
    /// Native `[D, H, W]`.
    native: [usize; 3],
    /// Per target axis (`i`, `j`, `k`): lower native index, upper index, weight.
    tables: [Vec<(usize, usize, f64)>; 3],
}

impl<'a> Upsampler<'a> {
    /// `target` is `[ni, nj, nk]`, matching native `W`, `H` and `D`.
    pub fn new(a: &'a ActivationVolume, k: usize, target: [usize; 3]) -> Self {
        let native = a.spatial();
        let table = |n_target: usize, n_native: usize| -> Vec<(usize, usize, f64)> {
            (0..n_target)
                .map(|p| {
                    let c = ((p as f64 + 0.5) * n_native as f64 / n_target as f64 - 0.5).clamp(0.0, (n_native - 1) as f64);
                    let lo = c.floor() as usize;
                    let hi = (lo + 1).min(n_native - 1);
                    (lo, hi, c - lo as f64)
                })
                .collect()
        };
        Self {
            values: a.unit(k),
            native,
            tables: [
                table(target[0], native[2]),
                table(target[1], native[1]),
                table(target[2], native[0]),
            ],
        }
    }

    fn at(&self, d: usize, h: usize, w: usize) -> f64 {
        self.values[(d * self.native[1] + h) * self.native[2] + w] as f64
    }

    pub fn sample(&self, i: usize, j: usize, k: usize) -> f64 {
        let (w0, w1, fw) = self.tables[0][i];
        let (h0, h1, fh) = self.tables[1][j];
        let (d0, d1, fd) = self.tables[2][k];
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let plane = |d| lerp(lerp(self.at(d, h0, w0), self.at(d, h0, w1), fw), lerp(self.at(d, h1, w0), self.at(d, h1, w1), fw), fh);
        lerp(plane(d0), plane(d1), fd)
    }

    /// Full upsampled grid in `k`-slowest order.
    pub fn volume(&self) -> Vec<f32> {
        let [ni, nj, nk] = [self.tables[0].len(), self.tables[1].len(), self.tables[2].len()];
        let mut out = Vec::with_capacity(ni * nj * nk);
        for k in 0..nk {
            for j in 0..nj {
                for i in 0..ni {
                    out.push(self.sample(i, j, k) as f32);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayImage {
    pub axis: Axis,
    /// Slice index on the patch grid.
    pub index: usize,
    pub alpha: f64,
    /// Grey base in `[0, 1]`, row-major image order.
    pub base: Vec<f32>,
    /// Normalised heat in `[0, 1]`.
    pub heat: Vec<f32>,
    #[serde(skip)]
    pub rendered: Option<Raster>,
}

impl OverlayImage {
    pub fn raster(&self) -> &Raster {
        self.rendered.as_ref().expect("rendered overlay")
    }
}

fn gray(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn render_patch_slice(patch: &PatchVolume, axis: Axis, index: usize) -> Raster {
    let plane = SlicePlane {
        axis,
        index,
        dims: patch.volume.dims(),
    };
    let (w, h) = plane.size();
    let mut r = Raster::black(w, h);
    for y in 0..h {
        for x in 0..w {
            let [i, j, k] = plane.voxel(x, y);
            let g = gray(patch.volume.voxel(i, j, k));
            let o = (y * w + x) * 3;
            r.rgb[o..o + 3].copy_from_slice(&[g, g, g]);
        }
    }
    r
}

/// Heatmap of unit `k`, upsampled to the patch grid and blended over one patch
/// slice. Pixels whose upsampled activation exceeds `T_k` are tinted with
/// weight `alpha * heat`, where heat is the activation divided by the unit's
/// maximum over the sample.
pub fn render_overlay(
    patch: &PatchVolume,
    a: &ActivationVolume,
    k: usize,
    threshold: f32,
    axis: Axis,
    index: usize,
    alpha: f64,
) -> Result<OverlayImage, ReportError> {
    if patch.sample_id != a.sample_id {
        return Err(ReportError::SampleMismatch {
            patch: patch.sample_id.clone(),
            activation: a.sample_id.clone(),
        });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(ReportError::InvalidAlpha(alpha));
    }
    if k >= a.units() {
        return Err(ReportError::UnknownUnit { unit: k, units: a.units() });
    }
    let dims = patch.volume.dims();
    let bound = match axis {
        Axis::Sagittal => dims[0],
        Axis::Coronal => dims[1],
        Axis::Axial => dims[2],
    };
    if index >= bound {
        return Err(ReportError::SliceOutOfRange { axis, index, bound });
    }
    let plane = SlicePlane { axis, index, dims };
    let up = Upsampler::new(a, k, dims);
    let peak = a.unit(k).iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let (w, h) = plane.size();
    let mut base = Vec::with_capacity(w * h);
    let mut heat = Vec::with_capacity(w * h);
    let mut raster = Raster::black(w, h);
    for y in 0..h {
        for x in 0..w {
            let [i, j, kk] = plane.voxel(x, y);
            let v = patch.volume.voxel(i, j, kk);
            let act = up.sample(i, j, kk);
            let hv = if peak > 0.0 { (act / peak).clamp(0.0, 1.0) } else { 0.0 };
            let weight = if act > threshold as f64 { alpha * hv } else { 0.0 };
            let g = gray(v) as f64;
            let c = colormap(hv);
            let o = (y * w + x) * 3;
            for ch in 0..3 {
                raster.rgb[o + ch] = ((1.0 - weight) * g + weight * c[ch]).round().clamp(0.0, 255.0) as u8;
            }
            base.push(v.clamp(0.0, 1.0));
            heat.push(hv as f32);
        }
    }
    Ok(OverlayImage {
        axis,
        index,
        alpha,
        base,
        heat,
        rendered: Some(raster),
    })
}

/// Places images row-major on a `rows × cols` grid of `cell` sized tiles with
/// black separators and black empty cells.
pub fn build_collage(images: &[Raster], rows: usize, cols: usize, cell: (usize, usize)) -> Result<Raster, ReportError> {
    if images.len() > rows * cols {
        return Err(ReportError::TooManyImages {
            images: images.len(),
            cells: rows * cols,
        });
    }
    if let Some(bad) = images.iter().find(|r| (r.width, r.height) != cell) {
        return Err(ReportError::MixedDimensions {
            expected: cell,
            found: (bad.width, bad.height),
        });
    }
    let (cw, ch) = cell;
    let width = cols * cw + cols.saturating_sub(1) * COLLAGE_SEPARATOR;
    let height = rows * ch + rows.saturating_sub(1) * COLLAGE_SEPARATOR;
    let mut out = Raster::black(width, height);
    for (n, img) in images.iter().enumerate() {
        let x0 = (n % cols) * (cw + COLLAGE_SEPARATOR);
        let y0 = (n / cols) * (ch + COLLAGE_SEPARATOR);
        for y in 0..ch {
            let src = &img.rgb[y * cw * 3..(y + 1) * cw * 3];
            let o = ((y0 + y) * width + x0) * 3;
            out.rgb[o..o + cw * 3].copy_from_slice(src);
        }
    }
    Ok(out)
}
