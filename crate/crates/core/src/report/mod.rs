//! Heatmaps, CAM overlays and tab-separated tables.
//!
//! Images are written as binary PPM (P6). Colors come from a piecewise
//! linear [`ColorMap`]; channel values are quantized as `floor(v + 0.5)`.

pub mod driver;

use std::fs;
use std::path::Path;

use crate::cam::upsample_bilinear;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tensorio::Tensor;

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct ColorMap {
    points: Vec<(f64, Rgb)>,
}

impl Default for ColorMap {
    /// Blue, cyan, green, yellow, red at 0, 0.25, 0.5, 0.75, 1.
    fn default() -> Self {
        ColorMap {
            points: vec![
                (0.0, [0, 0, 255]),
                (0.25, [0, 255, 255]),
                (0.5, [0, 255, 0]),
                (0.75, [255, 255, 0]),
                (1.0, [255, 0, 0]),
            ],
        }
    }
}

impl ColorMap {
    /// Positions must rise strictly from 0.0 to 1.0.
    pub fn new(points: Vec<(f64, Rgb)>) -> Result<Self> {
        let ok = points.len() >= 2
            && points[0].0 == 0.0
            && points[points.len() - 1].0 == 1.0
            && points.windows(2).all(|w| w[0].0 < w[1].0);
        if !ok {
            return Err(Error::InvalidArgument(
                "color map positions must rise strictly from 0 to 1".into(),
            ));
        }
        Ok(ColorMap { points })
    }

    pub fn points(&self) -> &[(f64, Rgb)] {
        &self.points
    }

    /// Color of `v`, clamped to `[0, 1]` first.
    pub fn color(&self, v: f64) -> Rgb {
        let v = v.clamp(0.0, 1.0);
        let seg = self
            .points
            .windows(2)
            .find(|w| v <= w[1].0)
            .unwrap_or(&self.points[self.points.len() - 2..]);
        let ((p0, c0), (p1, c1)) = (seg[0], seg[1]);
        let t = (v - p0) / (p1 - p0);
        let mut out = [0u8; 3];
        for k in 0..3 {
            out[k] = quantize(c0[k] as f64 + t * (c1[k] as f64 - c0[k] as f64));
        }
        out
    }
}

/// Rounds half-up onto `0..=255`.
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// An RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::parse("ppm", m);
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
        }
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad("expected P6 with maxval 255"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
        let body = &bytes[pos + 1..];
        if body.len() != width * height * 3 {
            return Err(bad("pixel data length"));
        }
        Ok(RgbImage {
            width,
            height,
            pixels: body.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

/// One `zoom x zoom` block per cell.
pub fn heatmap_image(m: &Matrix, cmap: &ColorMap, zoom: usize) -> Result<RgbImage> {
    if zoom == 0 {
        return Err(Error::InvalidArgument("zoom must be at least 1".into()));
    }
    if let Some(i) = m.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(format!("heatmap cell {i}")));
    }
    let (width, height) = (m.cols() * zoom, m.rows() * zoom);
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            pixels.push(cmap.color(m[(y / zoom, x / zoom)]));
        }
    }
    Ok(RgbImage { width, height, pixels })
}

pub fn render_heatmap(m: &Matrix, cmap: &ColorMap, zoom: usize, path: &Path) -> Result<()> {
    heatmap_image(m, cmap, zoom)?.save(path)
}

/// Maps values onto `[0, 1]` by their own min and max; a constant input
/// maps to 0.5 everywhere.
pub fn normalize_min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// `grid` as a matrix scaled to `[0, 1]` by [`normalize_min_max`].
pub fn normalized_grid(grid: &Tensor) -> Result<Matrix> {
    let &[h, w] = grid.dims() else {
        return Err(Error::shape(
            "render",
            format!("grid dims {:?} are not [H,W]", grid.dims()),
        ));
    };
    if !grid.is_finite() {
        return Err(Error::NonFiniteInput("grid".into()));
    }
    let values: Vec<f64> = grid.data().iter().map(|&v| v as f64).collect();
    Matrix::from_vec(h, w, normalize_min_max(&values))
}

/// Blends the colorized, upsampled and min-max normalized CAM over the
/// image: `(1 - alpha) * image + alpha * color`.
pub fn overlay_image(image: &Tensor, cam_grid: &Tensor, alpha: f64, cmap: &ColorMap) -> Result<RgbImage> {
    let (c, h, w) = image
        .chw()
        .filter(|&(c, _, _)| c == 3)
        .ok_or_else(|| Error::shape("overlay", format!("image dims {:?} are not [3,H,W]", image.dims())))?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if !image.is_finite() {
        return Err(Error::NonFiniteInput("overlay image".into()));
    }
    let cam = normalized_grid(&upsample_bilinear(cam_grid, h, w)?)?;
    let plane = h * w;
    let data = image.data();
    let mut pixels = Vec::with_capacity(plane);
    for y in 0..h {
        for x in 0..w {
            let color = cmap.color(cam[(y, x)]);
            let mut px = [0u8; 3];
            for k in 0..c {
                let base = (data[k * plane + y * w + x] as f64).clamp(0.0, 1.0) * 255.0;
                px[k] = quantize((1.0 - alpha) * base + alpha * color[k] as f64);
            }
            pixels.push(px);
        }
    }
    Ok(RgbImage {
        width: w,
        height: h,
        pixels,
    })
}

pub fn overlay_cam(image: &Tensor, cam_grid: &Tensor, alpha: f64, cmap: &ColorMap, path: &Path) -> Result<()> {
    overlay_image(image, cam_grid, alpha, cmap)?.save(path)
}

/// A header plus string rows, stored as tab-separated text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_tsv(&self) -> Result<String> {
        let mut out = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            if line.len() != self.header.len() {
                return Err(Error::InvalidArgument(format!(
                    "row of {} fields under a {}-column header",
                    line.len(),
                    self.header.len()
                )));
            }
            if let Some(f) = line.iter().find(|f| f.contains(['\t', '\n', '\r'])) {
                return Err(Error::InvalidArgument(format!("field {f:?} contains a tab or newline")));
            }
            out.push_str(&line.join("\t"));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::parse(origin, "missing header"))?
            .split('\t')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<String> = line.split('\t').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(Error::parse(
                    format!("{origin}:{}", i + 2),
                    format!("{} fields, header has {}", row.len(), header.len()),
                ));
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }
}

pub fn write_table(table: &Table, path: &Path) -> Result<()> {
    let text = table.to_tsv()?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Table::parse(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Rgb {
        heatmap_image(&Matrix::from_vec(1, 1, vec![v]).unwrap(), &ColorMap::default(), 1)
            .unwrap()
            .pixels[0]
    }

    #[test]
    fn control_points() {
        assert_eq!(one(0.0), [0, 0, 255]);
        assert_eq!(one(1.0), [255, 0, 0]);
        assert_eq!(one(0.5), [0, 255, 0]);
        assert_eq!(one(0.25), [0, 255, 255]);
        assert_eq!(one(0.75), [255, 255, 0]);
    }

    #[test]
    fn interpolates_and_rounds_half_up() {
        // 127.5 rounds up
        assert_eq!(one(0.125), [0, 128, 255]);
        assert_eq!(one(-3.0), one(0.0));
        assert_eq!(one(7.0), one(1.0));
    }

    #[test]
    fn non_finite_rejected() {
        let m = Matrix::from_vec(1, 2, vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(
            heatmap_image(&m, &ColorMap::default(), 1),
            Err(Error::NonFiniteInput(_))
        ));
    }

    #[test]
    fn zoom_and_ppm_bytes() {
        let m = Matrix::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        let img = heatmap_image(&m, &ColorMap::default(), 2).unwrap();
        assert_eq!((img.width, img.height), (4, 2));
        assert_eq!(img.pixel(1, 1), [0, 0, 255]);
        assert_eq!(img.pixel(2, 0), [255, 0, 0]);
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n4 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 24);
        assert_eq!(RgbImage::from_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn bad_color_maps() {
        assert!(ColorMap::new(vec![(0.0, [0; 3])]).is_err());
        assert!(ColorMap::new(vec![(0.0, [0; 3]), (0.5, [0; 3])]).is_err());
        assert!(ColorMap::new(vec![(0.0, [0; 3]), (0.6, [1; 3]), (0.6, [2; 3]), (1.0, [3; 3])]).is_err());
    }

    fn image(v: f32) -> Tensor {
        Tensor::new(vec![3, 2, 2], vec![v; 12]).unwrap()
    }

    #[test]
    fn overlay_alpha_extremes() {
        let cam = Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let base = overlay_image(&image(0.3), &cam, 0.0, &ColorMap::default()).unwrap();
        assert!(base.pixels.iter().all(|&p| p == [77, 77, 77]));
        let full = overlay_image(&image(0.3), &cam, 1.0, &ColorMap::default()).unwrap();
        assert_eq!(full.pixel(0, 0), [0, 0, 255]);
        assert_eq!(full.pixel(1, 1), [255, 0, 0]);
    }

    #[test]
    fn constant_cam_blends_midpoint() {
        let cam = Tensor::new(vec![1, 1], vec![4.0]).unwrap();
        let img = overlay_image(&image(1.0), &cam, 0.5, &ColorMap::default()).unwrap();
        // (255 + 0) / 2, (255 + 255) / 2, (255 + 0) / 2
        assert!(img.pixels.iter().all(|&p| p == [128, 255, 128]));
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        let mut t = Table::new(&["class_name", "count"]);
        write_table(&t, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "class_name\tcount\n");
        t.push(vec!["飛行機 ✈".into(), "3".into()]);
        t.push(vec!["bareland".into(), "0".into()]);
        write_table(&t, &p).unwrap();
        assert_eq!(read_table(&p).unwrap(), t);
        t.push(vec!["a\tb".into(), "1".into()]);
        assert!(write_table(&t, &p).is_err());
    }
}
