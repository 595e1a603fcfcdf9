use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::Tensor;

/// RandAugment image operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransformKind {
    Autocontrast,
    Brightness,
    Color,
    Contrast,
    Sharpness,
    GaussianBlur,
    Solarize,
    Posterize,
    Equalize,
    Identity,
    Invert,
    Rotate,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Cutout,
}

impl TransformKind {
    pub const ALL: [TransformKind; 17] = [
        Self::Autocontrast,
        Self::Brightness,
        Self::Color,
        Self::Contrast,
        Self::Sharpness,
        Self::GaussianBlur,
        Self::Solarize,
        Self::Posterize,
        Self::Equalize,
        Self::Identity,
        Self::Invert,
        Self::Rotate,
        Self::ShearX,
        Self::ShearY,
        Self::TranslateX,
        Self::TranslateY,
        Self::Cutout,
    ];

    /// The default strong transform set.
    pub const DEFAULT_SET: [TransformKind; 15] = [
        Self::Contrast,
        Self::Equalize,
        Self::Invert,
        Self::Rotate,
        Self::Posterize,
        Self::Solarize,
        Self::Color,
        Self::Brightness,
        Self::Sharpness,
        Self::ShearX,
        Self::ShearY,
        Self::Cutout,
        Self::TranslateX,
        Self::TranslateY,
        Self::GaussianBlur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Autocontrast => "Autocontrast",
            Self::Brightness => "Brightness",
            Self::Color => "Color",
            Self::Contrast => "Contrast",
            Self::Sharpness => "Sharpness",
            Self::GaussianBlur => "GaussianBlur",
            Self::Solarize => "Solarize",
            Self::Posterize => "Posterize",
            Self::Equalize => "Equalize",
            Self::Identity => "Identity",
            Self::Invert => "Invert",
            Self::Rotate => "Rotate",
            Self::ShearX => "ShearX",
            Self::ShearY => "ShearY",
            Self::TranslateX => "TranslateX",
            Self::TranslateY => "TranslateY",
            Self::Cutout => "Cutout",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }

    pub fn spec(self) -> TransformSpec {
        TransformSpec::of(self)
    }
}

impl std::fmt::Display for TransformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Magnitude ranges of one transform.
///
/// `parameter_range` is the sampling range used by RandAugment.
/// `domain` is the set of magnitudes [`transform_apply`] accepts; it contains
/// `parameter_range` and, for the enhancement ops, the identity factor 1.
/// Both are `None` for parameterless transforms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub parameter_range: Option<[f64; 2]>,
    pub domain: Option<[f64; 2]>,
}

impl TransformSpec {
    pub fn of(kind: TransformKind) -> Self {
        use TransformKind::*;
        let (range, domain) = match kind {
            Brightness | Color | Contrast | Sharpness => ([0.05, 0.95], [0.0, 1.0]),
            Solarize => ([0.0, 1.0], [0.0, 1.0]),
            Posterize => ([4.0, 8.0], [4.0, 8.0]),
            Rotate => ([-30.0, 30.0], [-30.0, 30.0]),
            ShearX | ShearY | TranslateX | TranslateY => ([-0.3, 0.3], [-0.3, 0.3]),
            GaussianBlur => ([0.1, 1.0], [0.1, 1.0]),
            Autocontrast | Equalize | Identity | Invert | Cutout => {
                return Self {
                    kind,
                    parameter_range: None,
                    domain: None,
                }
            }
        };
        Self {
            kind,
            parameter_range: Some(range),
            domain: Some(domain),
        }
    }

    pub fn validate_magnitude(&self, magnitude: f64) -> Result<()> {
        if !magnitude.is_finite() {
            return Err(Error::Validation(format!("{}: magnitude {magnitude} is not finite", self.kind)));
        }
        if let Some([lo, hi]) = self.domain {
            if magnitude < lo || magnitude > hi {
                return Err(Error::Validation(format!(
                    "{}: magnitude {magnitude} outside [{lo}, {hi}]",
                    self.kind
                )));
            }
        }
        Ok(())
    }
}

/// Side of the Cutout square relative to image height.
pub const CUTOUT_FRACTION: f64 = 0.3;
pub const CUTOUT_FILL: f32 = 0.5;

/// Applies one transform to a `[C, H, W]` image with values in `[0, 1]`.
///
/// Cutout is centred on the image; use [`cutout`] to place the square.
pub fn transform_apply(kind: TransformKind, magnitude: f64, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    kind.spec().validate_magnitude(magnitude)?;
    let img = Img::from_tensor(image)?;
    use TransformKind::*;
    let out = match kind {
        Identity => img.values.clone(),
        Invert => img.values.iter().map(|v| 1.0 - v).collect(),
        Autocontrast => img.per_channel(autocontrast_channel),
        Equalize => img.per_channel(equalize_channel),
        Brightness => blend(&vec![0.0; img.values.len()], &img.values, magnitude),
        Color => blend(&img.grayscale_broadcast(), &img.values, magnitude),
        Contrast => {
            let gray = img.grayscale();
            let mean = gray.iter().sum::<f64>() / gray.len() as f64;
            blend(&vec![mean; img.values.len()], &img.values, magnitude)
        }
        Sharpness => blend(&img.per_channel(smooth_channel_fn(img.h, img.w)), &img.values, magnitude),
        GaussianBlur => img.per_channel(gaussian_channel_fn(img.h, img.w, magnitude)),
        Solarize => img
            .values
            .iter()
            .map(|&v| if v * 255.0 >= magnitude * 256.0 { 1.0 - v } else { v })
            .collect(),
        Posterize => {
            let bits = magnitude.round() as u32;
            let low_mask = (1u32 << (8 - bits)) - 1;
            img.values
                .iter()
                .map(|&v| {
                    let q = (v * 255.0).round() as u32;
                    v - (q & low_mask) as f64 / 255.0
                })
                .collect()
        }
        Rotate => {
            let (s, c) = magnitude.to_radians().sin_cos();
            let (cx, cy) = img.center();
            img.resample(|x, y| {
                let (dx, dy) = (x - cx, y - cy);
                (cx + c * dx + s * dy, cy - s * dx + c * dy)
            })
        }
        ShearX => {
            let (_, cy) = img.center();
            img.resample(|x, y| (x + magnitude * (y - cy), y))
        }
        ShearY => {
            let (cx, _) = img.center();
            img.resample(|x, y| (x, y + magnitude * (x - cx)))
        }
        TranslateX => {
            let shift = magnitude * img.w as f64;
            img.resample(|x, y| (x - shift, y))
        }
        TranslateY => {
            let shift = magnitude * img.h as f64;
            img.resample(|x, y| (x, y - shift))
        }
        Cutout => {
            let (cx, cy) = img.center();
            return cutout(image, cy, cx);
        }
    };
    img.finish(out)
}

/// Fills a square of side `CUTOUT_FRACTION · H` centred at pixel
/// coordinates `(cy, cx)` with gray; the square is clipped at the border.
pub fn cutout(image: &Tensor<f32>, cy: f64, cx: f64) -> Result<Tensor<f32>> {
    let img = Img::from_tensor(image)?;
    let side = (CUTOUT_FRACTION * img.h as f64).round().max(1.0);
    let y0 = (cy - side / 2.0).round();
    let x0 = (cx - side / 2.0).round();
    let mut out = image.clone();
    let data = out.data_mut();
    for ch in 0..img.c {
        for y in 0..img.h {
            for x in 0..img.w {
                let (fy, fx) = (y as f64, x as f64);
                if fy >= y0 && fy < y0 + side && fx >= x0 && fx < x0 + side {
                    data[(ch * img.h + y) * img.w + x] = CUTOUT_FILL;
                }
            }
        }
    }
    Ok(out)
}

/// `degenerate · (1 − f) + original · f`, so `f = 1` returns `original` exactly.
fn blend(degenerate: &[f64], original: &[f64], factor: f64) -> Vec<f64> {
    degenerate
        .iter()
        .zip(original)
        .map(|(&d, &v)| d * (1.0 - factor) + v * factor)
        .collect()
}

struct Img {
    c: usize,
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl Img {
    fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::dim("augment", format!("expected [C,H,W] image, got {:?}", t.shape())));
        };
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::dim("augment", "image has an empty axis"));
        }
        Ok(Self {
            c,
            h,
            w,
            values: t.data().iter().map(|&v| v as f64).collect(),
        })
    }

    fn finish(&self, values: Vec<f64>) -> Result<Tensor<f32>> {
        let data = values.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
        Tensor::new([self.c, self.h, self.w], data)
    }

    fn center(&self) -> (f64, f64) {
        ((self.w as f64 - 1.0) / 2.0, (self.h as f64 - 1.0) / 2.0)
    }

    fn plane(&self, ch: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.values[ch * n..(ch + 1) * n]
    }

    fn per_channel(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        (0..self.c).flat_map(|ch| f(self.plane(ch))).collect()
    }

    /// Luma plane; the plane itself for non-RGB images.
    fn grayscale(&self) -> Vec<f64> {
        let n = self.h * self.w;
        if self.c == 3 {
            let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
            (0..n).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect()
        } else {
            (0..n)
                .map(|i| (0..self.c).map(|ch| self.plane(ch)[i]).sum::<f64>() / self.c as f64)
                .collect()
        }
    }

    fn grayscale_broadcast(&self) -> Vec<f64> {
        if self.c == 1 {
            return self.values.clone();
        }
        let gray = self.grayscale();
        (0..self.c).flat_map(|_| gray.iter().copied()).collect()
    }

    /// Inverse-mapped bilinear resampling; `map` takes output pixel
    /// coordinates to source coordinates. Samples outside the image read 0.
    fn resample(&self, map: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let (sx, sy) = map(x as f64, y as f64);
                for ch in 0..self.c {
                    out[(ch * self.h + y) * self.w + x] = bilinear(self.plane(ch), self.h, self.w, sx, sy);
                }
            }
        }
        out
    }
}

fn bilinear(plane: &[f64], h: usize, w: usize, sx: f64, sy: f64) -> f64 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let at = |x: f64, y: f64| -> f64 {
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            0.0
        } else {
            plane[y as usize * w + x as usize]
        }
    };
    at(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + at(x0 + 1.0, y0) * fx * (1.0 - fy)
        + at(x0, y0 + 1.0) * (1.0 - fx) * fy
        + at(x0 + 1.0, y0 + 1.0) * fx * fy
}

fn quantize(v: f64) -> usize {
    (v * 255.0).round().clamp(0.0, 255.0) as usize
}

fn autocontrast_channel(plane: &[f64]) -> Vec<f64> {
    let lo = plane.iter().map(|&v| quantize(v)).min().unwrap_or(0) as f64;
    let hi = plane.iter().map(|&v| quantize(v)).max().unwrap_or(0) as f64;
    if hi <= lo {
        return plane.to_vec();
    }
    plane.iter().map(|&v| (v * 255.0 - lo) / (hi - lo)).collect()
}

/// Histogram equalization over 256 bins.
fn equalize_channel(plane: &[f64]) -> Vec<f64> {
    let mut hist = [0usize; 256];
    for &v in plane {
        hist[quantize(v)] += 1;
    }
    let last = hist.iter().rev().find(|&&n| n > 0).copied().unwrap_or(0);
    let step = (plane.len() - last) / 255;
    if step == 0 {
        return plane.to_vec();
    }
    let mut lut = [0usize; 256];
    let mut n = step / 2;
    for (i, &count) in hist.iter().enumerate() {
        lut[i] = (n / step).min(255);
        n += count;
    }
    plane.iter().map(|&v| lut[quantize(v)] as f64 / 255.0).collect()
}

/// 3×3 smoothing with weights 1 around a centre weight 5; border pixels
/// are left unchanged.
fn smooth_channel_fn(h: usize, w: usize) -> impl Fn(&[f64]) -> Vec<f64> {
    move |plane| {
        let mut out = plane.to_vec();
        if h < 3 || w < 3 {
            return out;
        }
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut acc = 4.0 * plane[y * w + x];
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += plane[(y + dy - 1) * w + x + dx - 1];
                    }
                }
                out[y * w + x] = acc / 13.0;
            }
        }
        out
    }
}

fn gaussian_channel_fn(h: usize, w: usize, sigma: f64) -> impl Fn(&[f64]) -> Vec<f64> {
    let g1 = (-1.0 / (2.0 * sigma * sigma)).exp();
    let k = [g1 / (1.0 + 2.0 * g1), 1.0 / (1.0 + 2.0 * g1), g1 / (1.0 + 2.0 * g1)];
    move |plane| {
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut tmp = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = (0..3)
                    .map(|i| k[i] * plane[y * w + clamp(x as isize + i as isize - 1, w)])
                    .sum();
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = (0..3)
                    .map(|i| k[i] * tmp[clamp(y as isize + i as isize - 1, h) * w + x])
                    .sum();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor<f32> {
        let n = c * h * w;
        Tensor::new([c, h, w], (0..n).map(|i| (i as f32 * 0.37).fract()).collect()).unwrap()
    }

    #[test]
    fn identity_parameters_are_bitwise_identity() {
        let img = ramp(3, 6, 5);
        let cases = [
            (TransformKind::Identity, 0.0),
            (TransformKind::Brightness, 1.0),
            (TransformKind::Color, 1.0),
            (TransformKind::Contrast, 1.0),
            (TransformKind::Sharpness, 1.0),
            (TransformKind::Solarize, 1.0),
            (TransformKind::Posterize, 8.0),
            (TransformKind::Rotate, 0.0),
            (TransformKind::ShearX, 0.0),
            (TransformKind::ShearY, 0.0),
            (TransformKind::TranslateX, 0.0),
            (TransformKind::TranslateY, 0.0),
        ];
        for (kind, m) in cases {
            let out = transform_apply(kind, m, &img).unwrap();
            assert_eq!(out, img, "{kind} at {m}");
        }
    }

    #[test]
    fn solarize_zero_inverts_everything() {
        let img = ramp(1, 4, 4);
        let out = transform_apply(TransformKind::Solarize, 0.0, &img).unwrap();
        for (o, v) in out.data().iter().zip(img.data()) {
            assert_eq!(*o, (1.0 - *v as f64) as f32);
        }
    }

    #[test]
    fn brightness_zero_is_black_and_contrast_zero_is_flat() {
        let img = ramp(3, 4, 4);
        let black = transform_apply(TransformKind::Brightness, 0.0, &img).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
        let flat = transform_apply(TransformKind::Contrast, 0.0, &img).unwrap();
        assert!(flat.data().windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn color_zero_makes_channels_equal() {
        let img = ramp(3, 4, 4);
        let gray = transform_apply(TransformKind::Color, 0.0, &img).unwrap();
        let d = gray.data();
        for i in 0..16 {
            assert!((d[i] - d[16 + i]).abs() < 1e-6 && (d[i] - d[32 + i]).abs() < 1e-6);
        }
    }

    #[test]
    fn posterize_four_bits_hits_sixteen_levels() {
        let img = ramp(1, 8, 8);
        let out = transform_apply(TransformKind::Posterize, 4.0, &img).unwrap();
        for &v in out.data() {
            let q = (v as f64 * 255.0).round() as u32;
            assert_eq!(q & 0xF, 0, "{v}");
        }
    }

    #[test]
    fn out_of_domain_magnitudes_are_rejected() {
        let img = ramp(1, 4, 4);
        for (kind, m) in [
            (TransformKind::Rotate, 31.0),
            (TransformKind::ShearX, -0.31),
            (TransformKind::Brightness, 1.5),
            (TransformKind::Posterize, 3.0),
            (TransformKind::Solarize, f64::NAN),
        ] {
            let err = transform_apply(kind, m, &img).unwrap_err();
            assert_eq!(err.category(), "validation", "{kind}");
        }
    }

    #[test]
    fn translate_by_whole_pixels_shifts_with_zero_fill() {
        let img = Tensor::from_f64_slice([1, 1, 10], &(0..10).map(|i| i as f64 / 10.0).collect::<Vec<_>>()).unwrap();
        let out = transform_apply(TransformKind::TranslateX, 0.2, &img).unwrap();
        let expected: Vec<f32> = [0.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7].iter().map(|&v| v as f32).collect();
        for (o, e) in out.data().iter().zip(&expected) {
            assert!((o - e).abs() < 1e-6);
        }
    }

    #[test]
    fn rotation_fixes_the_centre_pixel() {
        let img = ramp(1, 5, 5);
        for theta in [-30.0, 17.0, 30.0] {
            let out = transform_apply(TransformKind::Rotate, theta, &img).unwrap();
            assert_eq!(out.data()[12], img.data()[12]);
        }
    }

    #[test]
    fn equalize_spreads_a_two_level_image() {
        let mut vals = vec![0.4; 8];
        vals.extend(vec![0.6; 8]);
        let img = Tensor::from_f64_slice([1, 4, 4], &vals).unwrap();
        let out = transform_apply(TransformKind::Equalize, 0.0, &img).unwrap();
        // PIL: step = (16 - 8) / 255 = 0 → unchanged
        assert_eq!(out, img);
        let vals: Vec<f64> = (0..256 * 2).map(|i| (i % 256) as f64 / 255.0 * 0.5).collect();
        let img = Tensor::from_f64_slice([1, 16, 32], &vals).unwrap();
        let out = transform_apply(TransformKind::Equalize, 0.0, &img).unwrap();
        let max = out.data().iter().cloned().fold(0.0f32, f32::max);
        assert!(max > 0.9, "{max}");
    }

    #[test]
    fn autocontrast_stretches_to_full_range() {
        let img = Tensor::from_f64_slice([1, 2, 2], &[0.2, 0.4, 0.6, 0.6]).unwrap();
        let out = transform_apply(TransformKind::Autocontrast, 0.0, &img).unwrap();
        let lo = out.data().iter().cloned().fold(1.0f32, f32::min);
        let hi = out.data().iter().cloned().fold(0.0f32, f32::max);
        assert!(lo.abs() < 1e-2 && (hi - 1.0).abs() < 1e-2);
    }

    #[test]
    fn cutout_fills_a_gray_square() {
        let img = Tensor::<f32>::zeros([2, 10, 10]);
        let out = cutout(&img, 5.0, 5.0).unwrap();
        let gray = out.data().iter().filter(|&&v| v == CUTOUT_FILL).count();
        assert_eq!(gray, 2 * 9);
        let corner = cutout(&img, 0.0, 0.0).unwrap();
        assert!(corner.data().iter().filter(|&&v| v == CUTOUT_FILL).count() < 2 * 9);
    }

    #[test]
    fn gaussian_blur_preserves_constant_images() {
        let img = Tensor::full([1, 5, 5], 0.3f32);
        let out = transform_apply(TransformKind::GaussianBlur, 0.7, &img).unwrap();
        for &v in out.data() {
            assert!((v - 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn names_round_trip() {
        for k in TransformKind::ALL {
            assert_eq!(TransformKind::from_name(k.name()), Some(k));
        }
        assert_eq!(TransformKind::from_name("shearx"), Some(TransformKind::ShearX));
        assert_eq!(TransformKind::from_name("Warp"), None);
    }
}
