use std::io::Cursor;
use std::path::Path;

use super::{BBox, ImageDims, Result, ToolError};

/// Upper bound on the pixel count of any image produced by a tool.
pub const MAX_OUTPUT_PIXELS: u64 = 1 << 26;

/// An 8-bit RGB raster stored row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    dims: ImageDims,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(dims: ImageDims, pixels: Vec<u8>) -> Result<Self> {
        let expected = 3 * dims.pixel_count();
        if pixels.len() != expected {
            return Err(ToolError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self { dims, pixels })
    }

    pub fn filled(dims: ImageDims, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(3 * dims.pixel_count()).collect();
        Self { dims, pixels }
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn width(&self) -> u32 {
        self.dims.width
    }

    pub fn height(&self) -> u32 {
        self.dims.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        3 * (y as usize * self.dims.width as usize + x as usize)
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Paints the pixels whose centers fall inside `region`.
    pub fn fill_rect(&mut self, region: &BBox, rgb: [u8; 3]) {
        let x0 = round_half_up(region.x1()).max(0.0) as u32;
        let y0 = round_half_up(region.y1()).max(0.0) as u32;
        let x1 = (round_half_up(region.x2()).max(0.0) as u32).min(self.width());
        let y1 = (round_half_up(region.y2()).max(0.0) as u32).min(self.height());
        for y in y0..y1 {
            for x in x0..x1 {
                self.set_pixel(x, y, rgb);
            }
        }
    }
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Snaps a region to the pixel grid the way [`crop_image`] does: origin and
/// size are rounded half-up, then the origin is pulled back so the snapped
/// box stays inside the image.
pub fn snap_region(region: &BBox, dims: ImageDims) -> Result<BBox> {
    if !region.is_within(dims) {
        return Err(ToolError::ContractViolation(
            "region must be clamped to the image before cropping",
        ));
    }
    let (iw, ih) = (dims.width as f64, dims.height as f64);
    let w = round_half_up(region.width()).min(iw);
    let h = round_half_up(region.height()).min(ih);
    if w < 1.0 || h < 1.0 {
        return Err(ToolError::EmptyCrop);
    }
    let x = round_half_up(region.x1()).min(iw - w);
    let y = round_half_up(region.y1()).min(ih - h);
    BBox::new(x, y, x + w, y + h)
}

/// Copies the pixels of `region` (snapped with [`snap_region`]) into a new image.
pub fn crop_image(img: &Image, region: &BBox) -> Result<Image> {
    let snapped = snap_region(region, img.dims())?;
    let (x0, y0) = (snapped.x1() as usize, snapped.y1() as usize);
    let (w, h) = (snapped.width() as usize, snapped.height() as usize);
    let stride = 3 * img.width() as usize;
    let mut pixels = Vec::with_capacity(3 * w * h);
    for row in y0..y0 + h {
        let start = row * stride + 3 * x0;
        pixels.extend_from_slice(&img.pixels[start..start + 3 * w]);
    }
    Image::new(ImageDims::new(w as u32, h as u32)?, pixels)
}

/// Bilinear resize by factor `z` using pixel-center alignment. Output size is
/// `round(z * w) x round(z * h)`; the sampling grid maps output pixel centers
/// onto input pixel centers with edge clamping.
pub fn zoom_image(img: &Image, z: f64) -> Result<Image> {
    if !(z.is_finite() && z > 0.0) {
        return Err(ToolError::InvalidScale(z));
    }
    let out_w = round_half_up(z * img.width() as f64);
    let out_h = round_half_up(z * img.height() as f64);
    if out_w < 1.0 || out_h < 1.0 {
        return Err(ToolError::InvalidScale(z));
    }
    if out_w * out_h > MAX_OUTPUT_PIXELS as f64 {
        return Err(ToolError::ImageTooLarge {
            width: out_w as u64,
            height: out_h as u64,
        });
    }
    let (out_w, out_h) = (out_w as u32, out_h as u32);
    let (in_w, in_h) = (img.width(), img.height());
    let sx = in_w as f64 / out_w as f64;
    let sy = in_h as f64 / out_h as f64;

    let axis = |o: u32, ratio: f64, n: u32| -> (u32, u32, f64) {
        let s = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = s.floor();
        let hi = (lo as u32 + 1).min(n - 1);
        (lo as u32, hi, s - lo)
    };

    let mut pixels = Vec::with_capacity(3 * out_w as usize * out_h as usize);
    for oy in 0..out_h {
        let (y0, y1, fy) = axis(oy, sy, in_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = axis(ox, sx, in_w);
            let (p00, p10) = (img.pixel(x0, y0), img.pixel(x1, y0));
            let (p01, p11) = (img.pixel(x0, y1), img.pixel(x1, y1));
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(ImageDims::new(out_w, out_h)?, pixels)
}

fn png_err(e: impl std::fmt::Display) -> ToolError {
    ToolError::Png(e.to_string())
}

/// Decodes a PNG into RGB8. Grayscale is expanded, 16-bit samples are
/// stripped, and alpha is composited over white.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    let dims = ImageDims::new(info.width, info.height)?;
    let n = dims.pixel_count();

    let over_white = |v: u8, a: u8| -> u8 {
        let a = a as u32;
        ((v as u32 * a + 255 * (255 - a) + 127) / 255) as u8
    };
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|p| {
                let a = p[3];
                [over_white(p[0], a), over_white(p[1], a), over_white(p[2], a)]
            })
            .collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .flat_map(|p| {
                let g = over_white(p[0], p[1]);
                [g, g, g]
            })
            .collect(),
        png::ColorType::Indexed => return Err(png_err("palette was not expanded")),
    };
    if rgb.len() != 3 * n {
        return Err(ToolError::BufferSize {
            expected: 3 * n,
            actual: rgb.len(),
        });
    }
    Image::new(dims, rgb)
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width(), img.height());
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(png_err)?;
        writer.write_image_data(img.pixels()).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    decode_png(&std::fs::read(path)?)
}

pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}

/// Reads only the PNG header.
pub fn read_png_dims(path: impl AsRef<Path>) -> Result<ImageDims> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let reader = png::Decoder::new(file).read_info().map_err(png_err)?;
    let info = reader.info();
    ImageDims::new(info.width, info.height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    fn checkerboard(n: u32) -> Image {
        let mut img = Image::filled(dims(n, n), [0, 0, 0]);
        for y in 0..n {
            for x in 0..n {
                let v = ((x + y) % 2) as u8 * 255;
                img.set_pixel(x, y, [v, x as u8, y as u8]);
            }
        }
        img
    }

    fn gradient(w: u32, h: u32) -> Image {
        let mut img = Image::filled(dims(w, h), [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                img.set_pixel(x, y, [(x * 7 % 256) as u8, (y * 13 % 256) as u8, 99]);
            }
        }
        img
    }

    #[test]
    fn image_buffer_size_checked() {
        assert!(matches!(
            Image::new(dims(2, 2), vec![0; 11]),
            Err(ToolError::BufferSize { expected: 12, .. })
        ));
    }

    #[test]
    fn full_region_crop_is_identity() {
        let img = gradient(17, 9);
        let out = crop_image(&img, &BBox::full(img.dims())).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn checkerboard_sub_crop() {
        let img = checkerboard(4);
        let out = crop_image(&img, &BBox::new(1.0, 2.0, 3.0, 4.0).unwrap()).unwrap();
        assert_eq!(out.dims(), dims(2, 2));
        // index-arithmetic oracle: output (i, j) is input (1 + i, 2 + j)
        for j in 0..2 {
            for i in 0..2 {
                assert_eq!(out.pixel(i, j), img.pixel(1 + i, 2 + j));
            }
        }
        let expected: Vec<u8> = vec![255, 1, 2, 0, 2, 2, 0, 1, 3, 255, 2, 3];
        assert_eq!(out.pixels(), &expected[..]);
    }

    #[test]
    fn unit_crop_is_first_pixel() {
        let img = gradient(5, 5);
        let out = crop_image(&img, &BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(out.dims(), dims(1, 1));
        assert_eq!(out.pixel(0, 0), img.pixel(0, 0));
    }

    #[test]
    fn crop_errors() {
        let img = gradient(5, 5);
        assert!(matches!(
            crop_image(&img, &BBox::new(1.0, 1.0, 1.4, 3.0).unwrap()),
            Err(ToolError::EmptyCrop)
        ));
        assert!(matches!(
            crop_image(&img, &BBox::new(1.0, 1.0, 9.0, 3.0).unwrap()),
            Err(ToolError::ContractViolation(_))
        ));
    }

    #[test]
    fn snapping_rounds_half_up_and_stays_inside() {
        let d = dims(10, 10);
        let s = snap_region(&BBox::new(2.5, 0.4, 4.0, 9.6).unwrap(), d).unwrap();
        assert_eq!(<[f64; 4]>::from(s), [3.0, 0.0, 5.0, 9.0]);
        let s = snap_region(&BBox::new(8.5, 0.0, 10.0, 10.0).unwrap(), d).unwrap();
        assert_eq!(<[f64; 4]>::from(s), [8.0, 0.0, 10.0, 10.0]);
    }

    #[test]
    fn zoom_identity_and_constants() {
        let img = gradient(6, 4);
        assert_eq!(zoom_image(&img, 1.0).unwrap(), img);

        let gray = Image::filled(dims(4, 4), [128, 128, 128]);
        let z = zoom_image(&gray, 2.0).unwrap();
        assert_eq!(z.dims(), dims(8, 8));
        assert!(z.pixels().iter().all(|&v| v == 128));
    }

    #[test]
    fn zoom_ramp_interior_matches_bilinear_formula() {
        let mut img = Image::filled(dims(2, 1), [0, 0, 0]);
        img.set_pixel(1, 0, [255, 255, 255]);
        let z = zoom_image(&img, 2.0).unwrap();
        assert_eq!(z.dims(), dims(4, 2));
        // output centers map to source x = (o + 0.5)/2 - 0.5, clamped to [0, 1]
        let expected = [0.0, 0.25, 0.75, 1.0].map(|t: f64| (255.0 * t).round() as u8);
        for (o, e) in expected.iter().enumerate() {
            assert_eq!(z.pixel(o as u32, 0)[0], *e);
            assert_eq!(z.pixel(o as u32, 1)[0], *e);
        }
        assert!(z.pixel(1, 0)[0] > 0 && z.pixel(1, 0)[0] < 255);
        assert!(z.pixel(2, 0)[0] > 0 && z.pixel(2, 0)[0] < 255);
    }

    #[test]
    fn zoom_errors() {
        let img = gradient(2, 2);
        assert!(matches!(zoom_image(&img, 0.0), Err(ToolError::InvalidScale(_))));
        assert!(matches!(zoom_image(&img, 0.1), Err(ToolError::InvalidScale(_))));
        assert!(matches!(
            zoom_image(&img, 1e9),
            Err(ToolError::ImageTooLarge { .. })
        ));
    }

    #[test]
    fn png_roundtrip_and_alpha_flattening() {
        let img = gradient(7, 3);
        assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap(), img);

        let mut rgba = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut rgba, 2, 1);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0, 0, 0, 0, 10, 20, 30, 255]).unwrap();
        }
        let out = decode_png(&rgba).unwrap();
        assert_eq!(out.pixel(0, 0), [255, 255, 255]);
        assert_eq!(out.pixel(1, 0), [10, 20, 30]);
    }

    #[test]
    fn png_dims_from_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        write_png(&path, &gradient(13, 5)).unwrap();
        assert_eq!(read_png_dims(&path).unwrap(), dims(13, 5));
        assert_eq!(read_png(&path).unwrap(), gradient(13, 5));
    }

    proptest! {
        #[test]
        fn zoom_integer_scale_preserves_constant(
            w in 1u32..12, h in 1u32..12, z in 1u32..5, v in any::<[u8; 3]>()
        ) {
            let img = Image::filled(dims(w, h), v);
            let out = zoom_image(&img, z as f64).unwrap();
            prop_assert_eq!(out.dims(), dims(w * z, h * z));
            prop_assert!(out.pixels().chunks_exact(3).all(|p| p == v));
        }
    }
}
