//! RGB rasters, Gaussian kernels, reflect-101 filtering and high-frequency
//! component (HFC) extraction.
//!
//! An [`Image`] stores three channels in *planar* order: all red samples
//! row-major, then green, then blue. Intensities of photographs live in
//! `[0, 1]`; HFC images share the type but are signed.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};

/// Number of colour channels carried by every [`Image`].
pub const CHANNELS: usize = 3;

/// Low-pass radius used for HFC extraction.
pub const HFC_RADIUS: usize = 26;

/// Low-pass spatial constant used for HFC extraction.
pub const HFC_SIGMA: f64 = 9.0;

/// Magic bytes of the raw signed HFC sidecar format.
pub const HFC_MAGIC: &[u8; 4] = b"HFC0";

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
    mask: Option<Vec<bool>>,
}

impl Image {
    /// Builds an image from planar data (`3 * height * width` values).
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != CHANNELS * height * width {
            return Err(Error::InvalidImage(format!(
                "expected {} samples for {height}x{width}x3, got {}",
                CHANNELS * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            height,
            width,
            data,
            mask: None,
        })
    }

    /// Builds an image by evaluating `f(channel, row, col)` for every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; CHANNELS * height * width])
    }

    /// Attaches a field-of-view mask (`true` = inside).
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.height * self.width {
            return Err(Error::InvalidImage(format!(
                "mask has {} entries, image has {} pixels",
                mask.len(),
                self.height * self.width
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Planar sample buffer.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Elementwise combination of two equally sized images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f32, f32) -> f32) -> Result<Image> {
        if !self.same_dims(other) {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let mut out = Image::new(self.height, self.width, data)?;
        out.mask = self.mask.clone();
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Image> {
        let mut out = Image::new(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())?;
        out.mask = self.mask.clone();
        Ok(out)
    }

    /// Bilinear resize; the mask is not carried over.
    pub fn resize(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage("resize target must be positive".into()));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone().without_mask());
        }
        let buf = self.to_rgb32f();
        let resized = image::imageops::resize(
            &buf,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        Self::from_rgb32f(&resized)
    }

    fn to_rgb32f(&self) -> ImageBuffer<Rgb<f32>, Vec<f32>> {
        let n = self.pixels();
        let mut interleaved = Vec::with_capacity(CHANNELS * n);
        for i in 0..n {
            for c in 0..CHANNELS {
                interleaved.push(self.data[c * n + i]);
            }
        }
        ImageBuffer::from_raw(self.width as u32, self.height as u32, interleaved)
            .expect("buffer length matches dimensions")
    }

    fn from_rgb32f(buf: &ImageBuffer<Rgb<f32>, Vec<f32>>) -> Result<Image> {
        let (w, h) = (buf.width() as usize, buf.height() as usize);
        let raw = buf.as_raw();
        Image::from_fn(h, w, |c, y, x| raw[(y * w + x) * CHANNELS + c])
    }
}

/// Circular field-of-view mask inscribed in a `height x width` frame.
pub fn circular_mask(height: usize, width: usize) -> Vec<bool> {
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let r = height.min(width) as f64 / 2.0;
    let mut mask = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            mask.push(d <= r);
        }
    }
    mask
}

/// Reads an 8/16-bit PNG or binary PPM into `[0, 1]`; grey inputs are
/// replicated to three channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        cause: e.to_string(),
    })?;
    if decoded.width() == 0 || decoded.height() == 0 {
        return Err(Error::EmptyImage {
            path: path.to_path_buf(),
        });
    }
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let wide = matches!(
        decoded,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    if wide {
        let buf = decoded.to_rgb16();
        let raw = buf.as_raw();
        Image::from_fn(h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 65535.0)
    } else {
        let buf = decoded.to_rgb8();
        let raw = buf.as_raw();
        Image::from_fn(h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)
    }
}

/// Quantizes `v` to a byte as `round(clamp(v, 0, 1) * 255)`.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = img.pixels();
    let mut raw = Vec::with_capacity(CHANNELS * n);
    for i in 0..n {
        for c in 0..CHANNELS {
            raw.push(quantize(img.data[c * n + i]));
        }
    }
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, raw)
            .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Encode {
                path: path.to_path_buf(),
                cause: other.to_string(),
            },
        })
}

/// Square filter kernel. Gaussian kernels also keep their normalized 1-D
/// profile so filtering can run as two separable passes.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2D {
    radius: usize,
    weights: Vec<f64>,
    profile: Option<Vec<f64>>,
}

impl Kernel2D {
    /// Arbitrary normalized kernel of `(2r+1)^2` row-major weights.
    pub fn from_weights(radius: usize, weights: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if weights.len() != side * side {
            return Err(Error::InvalidParameter(format!(
                "kernel of radius {radius} needs {} weights, got {}",
                side * side,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter("kernel weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!("kernel weights sum to {sum}, not 1")));
        }
        Ok(Self {
            radius,
            weights,
            profile: None,
        })
    }

    pub fn identity() -> Self {
        Self {
            radius: 0,
            weights: vec![1.0],
            profile: Some(vec![1.0]),
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Row-major weights, `side * side` entries.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dy, dx)` from the centre.
    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }

    /// The 1-D factor when the kernel is separable.
    pub fn profile(&self) -> Option<&[f64]> {
        self.profile.as_deref()
    }

    pub fn center(&self) -> f64 {
        self.at(0, 0)
    }
}

/// Isotropic Gaussian with weights proportional to `exp(-(dx²+dy²)/(2σ²))`,
/// normalized to sum to one.
pub fn gaussian_kernel(radius: usize, sigma: f64) -> Result<Kernel2D> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let profile: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let weights = profile
        .iter()
        .flat_map(|a| profile.iter().map(move |b| a * b))
        .collect();
    Ok(Kernel2D {
        radius,
        weights,
        profile: Some(profile),
    })
}

/// Reflect-101 index mapping (`dcb|abcd|cba`), valid for any offset.
#[inline]
pub fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// 1-D correlation of every row of a `height x width` plane, reflect-101.
fn pass_rows(src: &[f64], height: usize, width: usize, taps: &[f64], dst: &mut [f64]) {
    let r = (taps.len() / 2) as isize;
    let mut padded = vec![0.0; width + 2 * r as usize];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[reflect101(i as isize - r, width)];
        }
        for x in 0..width {
            let window = &padded[x..x + taps.len()];
            dst[y * width + x] = window.iter().zip(taps).map(|(a, b)| a * b).sum();
        }
    }
}

fn pass_cols(src: &[f64], height: usize, width: usize, taps: &[f64], dst: &mut [f64]) {
    let r = (taps.len() / 2) as isize;
    dst.iter_mut().for_each(|v| *v = 0.0);
    for (t, &w) in taps.iter().enumerate() {
        for y in 0..height {
            let sy = reflect101(y as isize + t as isize - r, height);
            let s = &src[sy * width..(sy + 1) * width];
            let d = &mut dst[y * width..(y + 1) * width];
            for (dv, sv) in d.iter_mut().zip(s) {
                *dv += w * sv;
            }
        }
    }
}

/// Filters one plane with a separable profile (f64 accumulation).
pub(crate) fn separable_plane(plane: &[f32], height: usize, width: usize, taps: &[f64]) -> Vec<f64> {
    let src: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0.0; src.len()];
    let mut out = vec![0.0; src.len()];
    pass_rows(&src, height, width, taps, &mut tmp);
    pass_cols(&tmp, height, width, taps, &mut out);
    out
}

fn direct_plane(plane: &[f32], height: usize, width: usize, kernel: &Kernel2D) -> Vec<f64> {
    let r = kernel.radius as isize;
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for dy in -r..=r {
                let sy = reflect101(y as isize + dy, height);
                for dx in -r..=r {
                    let sx = reflect101(x as isize + dx, width);
                    acc += kernel.at(dy, dx) * plane[sy * width + sx] as f64;
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Per-channel 2-D correlation with reflect-101 borders. Output has the
/// input's dimensions and mask.
pub fn filter2d(img: &Image, kernel: &Kernel2D) -> Image {
    let (h, w) = (img.height, img.width);
    let mut data = Vec::with_capacity(img.data.len());
    for c in 0..CHANNELS {
        let plane = img.channel(c);
        let filtered = match kernel.profile() {
            Some(taps) => separable_plane(plane, h, w, taps),
            None => direct_plane(plane, h, w, kernel),
        };
        data.extend(filtered.into_iter().map(|v| v as f32));
    }
    Image {
        height: h,
        width: w,
        data,
        mask: img.mask.clone(),
    }
}

/// High- and low-frequency split: returns `(img - img*g, img*g)`.
pub fn split_frequencies(img: &Image, radius: usize, sigma: f64) -> Result<(Image, Image)> {
    let kernel = gaussian_kernel(radius, sigma)?;
    let low = filter2d(img, &kernel);
    let high = img.zip_map(&low, |a, b| a - b)?;
    Ok((high, low))
}

/// High-frequency components `img - img*g(radius, sigma)`; signed.
pub fn extract_hfc(img: &Image, radius: usize, sigma: f64) -> Result<Image> {
    split_frequencies(img, radius, sigma).map(|(high, _)| high)
}

/// [`extract_hfc`] with the default low-pass (`r = 26`, `σ = 9`).
pub fn extract_hfc_default(img: &Image) -> Result<Image> {
    extract_hfc(img, HFC_RADIUS, HFC_SIGMA)
}

/// Maps a signed HFC image into `[0, 1]` for display: zero becomes mid grey
/// and the largest magnitude reaches 0 or 1.
pub fn visualize_hfc(hfc: &Image) -> Image {
    let peak = hfc.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    Image {
        height: hfc.height,
        width: hfc.width,
        data: hfc.data.iter().map(|v| 0.5 + v * scale).collect(),
        mask: hfc.mask.clone(),
    }
}

/// Serializes signed planar samples: `HFC0`, u32 height, u32 width,
/// u32 channels (all little-endian), then f32 LE values in planar order.
pub fn encode_hfc_raw(hfc: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * hfc.data.len());
    out.extend_from_slice(HFC_MAGIC);
    out.extend_from_slice(&(hfc.height as u32).to_le_bytes());
    out.extend_from_slice(&(hfc.width as u32).to_le_bytes());
    out.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
    for v in &hfc.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_hfc_raw(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 16 || &bytes[..4] != HFC_MAGIC {
        return Err(Error::InvalidImage("not an HFC0 file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (word(4), word(8), word(12));
    if c != CHANNELS {
        return Err(Error::InvalidImage(format!("HFC0 with {c} channels")));
    }
    let body = &bytes[16..];
    if body.len() != 4 * c * h * w {
        return Err(Error::InvalidImage(format!(
            "HFC0 body has {} bytes, header implies {}",
            body.len(),
            4 * c * h * w
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Image::new(h, w, data)
}

pub fn write_hfc_raw(hfc: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_hfc_raw(hfc)).map_err(|e| Error::io(path, e))
}

pub fn read_hfc_raw(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_hfc_raw(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _, _| rng.random::<f32>()).unwrap()
    }

    // Naive O(H·W·k²) reference with explicit mirror indexing.
    fn naive_filter(img: &Image, k: &Kernel2D) -> Vec<f64> {
        let (h, w) = (img.height() as isize, img.width() as isize);
        let r = k.radius() as isize;
        let mirror = |i: isize, n: isize| -> usize {
            let mut i = i;
            while i < 0 || i >= n {
                if i < 0 {
                    i = -i;
                }
                if i >= n {
                    i = 2 * (n - 1) - i;
                }
            }
            i as usize
        };
        let mut out = Vec::new();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            acc += k.at(dy, dx)
                                * img.get(c, mirror(y + dy, h), mirror(x + dx, w)) as f64;
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn radius_zero_kernel_is_single_tap() {
        let k = gaussian_kernel(0, 3.0).unwrap();
        assert_eq!(k.weights(), &[1.0]);
    }

    #[test]
    fn wide_sigma_is_nearly_box() {
        let k = gaussian_kernel(1, 10.0).unwrap();
        for w in k.weights() {
            assert!((w - 1.0 / 9.0).abs() < 0.01 / 9.0, "{w}");
        }
    }

    #[test]
    fn narrow_sigma_center_weight() {
        // exp(-d²/0.5) on a 3x3 grid: 1 / (1 + 4e^-2 + 4e^-4) = 0.619347...
        let k = gaussian_kernel(1, 0.5).unwrap();
        assert!((k.center() - 0.619_347).abs() < 1e-5, "{}", k.center());
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        assert!(gaussian_kernel(2, 0.0).is_err());
        assert!(gaussian_kernel(2, -1.0).is_err());
    }

    #[test]
    fn kernel_symmetries() {
        let k = gaussian_kernel(4, 1.7).unwrap();
        let r = 4isize;
        let sum: f64 = k.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        for dy in -r..=r {
            for dx in -r..=r {
                let w = k.at(dy, dx);
                assert!(w >= 0.0);
                assert!((w - k.at(dx, -dy)).abs() < 1e-15);
                assert!((w - k.at(-dy, dx)).abs() < 1e-15);
                assert!((w - k.at(dy, -dx)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reflect101_matches_mirror() {
        assert_eq!(reflect101(-1, 4), 1);
        assert_eq!(reflect101(-3, 4), 3);
        assert_eq!(reflect101(4, 4), 2);
        assert_eq!(reflect101(-4, 4), 2);
        assert_eq!(reflect101(9, 4), 3);
        assert_eq!(reflect101(-7, 1), 0);
    }

    #[test]
    fn ramp_matches_naive_loop() {
        let img = Image::from_fn(4, 4, |c, y, x| (c * 16 + y * 4 + x) as f32 / 48.0).unwrap();
        let k = gaussian_kernel(1, 1.0).unwrap();
        let fast = filter2d(&img, &k);
        for (a, b) in fast.data().iter().zip(naive_filter(&img, &k)) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn direct_path_matches_naive_loop() {
        let img = random_image(6, 7, 3);
        let g = gaussian_kernel(2, 1.3).unwrap();
        let general = Kernel2D::from_weights(2, g.weights().to_vec()).unwrap();
        let out = filter2d(&img, &general);
        for (a, b) in out.data().iter().zip(naive_filter(&img, &general)) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let img = random_image(5, 3, 1);
        assert_eq!(filter2d(&img, &gaussian_kernel(0, 1.0).unwrap()), img);
        assert_eq!(filter2d(&img, &Kernel2D::identity()), img);
    }

    #[test]
    fn impulse_hfc_center() {
        let img = Image::from_fn(61, 61, |_, y, x| if y == 30 && x == 30 { 1.0 } else { 0.0 }).unwrap();
        let hfc = extract_hfc_default(&img).unwrap();
        let k0 = gaussian_kernel(HFC_RADIUS, HFC_SIGMA).unwrap().center();
        assert!((hfc.get(1, 30, 30) as f64 - (1.0 - k0)).abs() < 1e-6);
    }

    #[test]
    fn large_radius_on_tiny_image() {
        // radius 26 on an 8x8 plane needs repeated reflection
        let img = random_image(8, 8, 11);
        let k = gaussian_kernel(HFC_RADIUS, HFC_SIGMA).unwrap();
        let out = filter2d(&img, &k);
        for (a, b) in out.data().iter().zip(naive_filter(&img, &k)) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn load_scales_and_replicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        image::GrayImage::from_raw(2, 1, vec![128, 255]).unwrap().save(&p).unwrap();
        let img = load_image(&p).unwrap();
        for c in 0..3 {
            assert!((img.get(c, 0, 0) - 128.0 / 255.0).abs() < 1e-7);
            assert_eq!(img.get(c, 0, 1), 1.0);
        }

        let p16 = dir.path().join("w.png");
        image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(1, 1, vec![65535u16, 0, 32768])
            .unwrap()
            .save(&p16)
            .unwrap();
        let img = load_image(&p16).unwrap();
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(1, 0, 0), 0.0);
        assert!((img.get(2, 0, 0) - 32768.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn load_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 51]);
        fs::write(&p, bytes).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.get(0, 0, 0), 0.0);
        assert_eq!(img.get(1, 0, 0), 1.0);
        assert!((img.get(2, 0, 0) - 0.2).abs() < 1e-7);
    }

    #[test]
    fn load_errors_carry_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        let err = load_image(&missing).unwrap_err().to_string();
        assert!(err.contains("nope.png"), "{err}");

        let junk = dir.path().join("junk.png");
        fs::write(&junk, b"definitely not a png").unwrap();
        let err = load_image(&junk).unwrap_err();
        assert!(matches!(err, Error::Decode { .. }), "{err}");
    }

    #[test]
    fn save_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.png");
        let img = Image::from_fn(1, 2, |_, _, x| if x == 0 { 0.5 } else { 1.0 }).unwrap();
        save_image(&img, &p).unwrap();
        let raw = image::open(&p).unwrap().to_rgb8();
        assert_eq!(raw.get_pixel(0, 0).0, [128, 128, 128]);
        assert_eq!(raw.get_pixel(1, 0).0, [255, 255, 255]);
    }

    #[test]
    fn save_to_missing_dir_fails() {
        let img = Image::constant(2, 2, 0.3).unwrap();
        assert!(save_image(&img, "/nonexistent/dir/x.png").is_err());
    }

    #[test]
    fn hfc_raw_round_trip() {
        let hfc = extract_hfc(&random_image(5, 4, 2), 3, 1.0).unwrap();
        let bytes = encode_hfc_raw(&hfc);
        assert_eq!(bytes.len(), 16 + 4 * 60);
        assert_eq!(decode_hfc_raw(&bytes).unwrap(), hfc);
        assert!(decode_hfc_raw(&bytes[..20]).is_err());
    }

    #[test]
    fn invalid_images_rejected() {
        assert!(Image::new(0, 3, vec![]).is_err());
        assert!(Image::new(1, 1, vec![0.0; 2]).is_err());
        assert!(Image::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
        assert!(Image::constant(2, 2, 0.0).unwrap().with_mask(vec![true; 3]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn filter_preserves_constants(c in 0.0f32..1.0, r in 0usize..6, sigma in 0.3f64..30.0,
                                      h in 1usize..12, w in 1usize..12) {
            let img = Image::constant(h, w, c).unwrap();
            let out = filter2d(&img, &gaussian_kernel(r, sigma).unwrap());
            for v in out.data() {
                prop_assert!((v - c).abs() < 1e-6);
            }
            let hfc = extract_hfc_default(&img).unwrap();
            for v in hfc.data() {
                prop_assert!(v.abs() < 1e-6);
            }
        }

        #[test]
        fn filter_matches_naive(seed in any::<u64>(), r in 0usize..4, sigma in 0.5f64..5.0) {
            let img = random_image(8, 8, seed);
            let k = gaussian_kernel(r, sigma).unwrap();
            let out = filter2d(&img, &k);
            for (a, b) in out.data().iter().zip(naive_filter(&img, &k)) {
                prop_assert!((*a as f64 - b).abs() < 1e-6);
            }
        }

        #[test]
        fn hfc_is_linear(seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0) {
            let x = random_image(9, 7, seed);
            let y = random_image(9, 7, seed.wrapping_add(1));
            let mix = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
            let lhs = extract_hfc_default(&mix).unwrap();
            let hx = extract_hfc_default(&x).unwrap();
            let hy = extract_hfc_default(&y).unwrap();
            for i in 0..lhs.data().len() {
                let rhs = a as f64 * hx.data()[i] as f64 + b as f64 * hy.data()[i] as f64;
                prop_assert!((lhs.data()[i] as f64 - rhs).abs() < 1e-6);
            }
        }

        #[test]
        fn hfc_plus_lfc_reconstructs(seed in any::<u64>()) {
            let img = random_image(10, 10, seed);
            let (high, low) = split_frequencies(&img, HFC_RADIUS, HFC_SIGMA).unwrap();
            for i in 0..img.data().len() {
                let sum = high.data()[i] as f64 + low.data()[i] as f64;
                prop_assert!((sum - img.data()[i] as f64).abs() < 1e-6);
            }
        }

        #[test]
        fn save_load_within_quantum(seed in any::<u64>()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt.png");
            let img = random_image(3, 5, seed);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }
    }
}
