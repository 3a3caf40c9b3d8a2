use rayon::prelude::*;

use super::{Field, GrayImage};
use crate::error::{Error, Result};

/// Square, odd-sized weight matrix applied as a correlation (no flip).
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::param(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::param(format!(
                "kernel of size {size} needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::param("kernel weights must be finite"));
        }
        Ok(Self { size, weights })
    }

    /// Row-major 3x3 convenience constructor.
    pub fn from_3x3(rows: [[f64; 3]; 3]) -> Self {
        Self { size: 3, weights: rows.iter().flatten().copied().collect() }
    }

    pub fn identity() -> Self {
        Self { size: 1, weights: vec![1.0] }
    }

    pub fn mean(size: usize) -> Result<Self> {
        let n = (size * size) as f64;
        Self::new(size, vec![1.0 / n; size * size])
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset (dx, dy) from the centre.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius() as isize;
        self.weights[((dy + r) * self.size as isize + dx + r) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn transposed(&self) -> Kernel {
        let n = self.size;
        let mut weights = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                weights[x * n + y] = self.weights[y * n + x];
            }
        }
        Kernel { size: n, weights }
    }
}

/// Correlate `src` with `kernel`, replicating the border. Output is not clipped.
pub fn convolve(src: &Field, kernel: &Kernel) -> Field {
    let (w, h) = (src.width(), src.height());
    let r = kernel.radius() as isize;
    let n = kernel.size();
    let taps: Vec<(isize, isize, f64)> = (0..n * n)
        .filter(|&i| kernel.weights[i] != 0.0)
        .map(|i| ((i % n) as isize - r, (i / n) as isize - r, kernel.weights[i]))
        .collect();
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y = y as isize;
        for (x, dst) in row.iter_mut().enumerate() {
            let x = x as isize;
            let mut acc = 0.0;
            for &(dx, dy, wt) in &taps {
                acc += wt * src.get_clamped(x + dx, y + dy);
            }
            *dst = acc;
        }
    });
    Field { width: w, height: h, data: out }
}

/// Normalized 2-D Gaussian of size `2*ceil(3 sigma)+1`.
pub fn gaussian_kernel(sigma: f64) -> Result<Kernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let size = (2 * r + 1) as usize;
    let mut weights = Vec::with_capacity(size * size);
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Kernel::new(size, weights)
}

/// Separable Gaussian smoothing; numerically equivalent to
/// `convolve(src, &gaussian_kernel(sigma)?)` up to rounding.
pub fn gaussian_blur(src: &Field, sigma: f64) -> Result<Field> {
    gaussian_kernel(sigma)?;
    let r = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);

    let (w, h) = (src.width(), src.height());
    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, dst) in row.iter_mut().enumerate() {
            *dst = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * src.get_clamped(x as isize + i as isize - r, y as isize))
                .sum();
        }
    });
    let tmp = Field { width: w, height: h, data: tmp };
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, dst) in row.iter_mut().enumerate() {
            *dst = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp.get_clamped(x as isize, y as isize + i as isize - r))
                .sum();
        }
    });
    Ok(Field { width: w, height: h, data: out })
}

/// Edge-preserving smoothing: each pixel becomes the mean of its
/// `(2r+1)^2` window weighted by spatial and intensity closeness.
pub fn bilateral_filter(
    img: &GrayImage,
    sigma_spatial: f64,
    sigma_range: f64,
    radius: usize,
) -> Result<GrayImage> {
    if !(sigma_spatial > 0.0) || !(sigma_range > 0.0) {
        return Err(Error::param(format!(
            "bilateral sigmas must be > 0, got spatial={sigma_spatial} range={sigma_range}"
        )));
    }
    if radius < 1 {
        return Err(Error::param("bilateral radius must be >= 1"));
    }
    let src = img.field();
    let (w, h) = (src.width(), src.height());
    let r = radius as isize;
    let spatial: Vec<(isize, isize, f64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .map(|(dx, dy)| (dx, dy, (-((dx * dx + dy * dy) as f64) / (2.0 * sigma_spatial * sigma_spatial)).exp()))
        .collect();
    let inv_2sr2 = 1.0 / (2.0 * sigma_range * sigma_range);

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y = y as isize;
        for (x, dst) in row.iter_mut().enumerate() {
            let x = x as isize;
            let centre = src.get_clamped(x, y);
            let (mut num, mut den) = (0.0, 0.0);
            for &(dx, dy, ws) in &spatial {
                let v = src.get_clamped(x + dx, y + dy);
                let d = v - centre;
                let wt = ws * (-d * d * inv_2sr2).exp();
                num += wt * v;
                den += wt;
            }
            *dst = num / den;
        }
    });
    Ok(Field { width: w, height: h, data: out }.to_gray_clipped())
}

/// ITU-R 601 luma.
pub fn to_grayscale(rgb: &image::RgbImage) -> Result<GrayImage> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::dims(format!("cannot convert empty {w}x{h} image")));
    }
    let data = rgb
        .pixels()
        .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        .map(|v| v.clamp(0.0, 255.0))
        .collect();
    GrayImage::from_vec(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grayscale_weights() {
        let white = image::RgbImage::from_pixel(3, 2, image::Rgb([255, 255, 255]));
        let g = to_grayscale(&white).unwrap();
        assert!(g.data().iter().all(|&v| (v - 255.0).abs() < 1e-9));

        let red = image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0]));
        let g = to_grayscale(&red).unwrap();
        assert!(g.data().iter().all(|&v| (v - 76.245).abs() < 1e-9));

        let empty = image::RgbImage::new(0, 0);
        assert!(matches!(to_grayscale(&empty), Err(Error::Dimension(_))));
    }

    #[test]
    fn even_kernel_is_rejected() {
        assert!(matches!(Kernel::new(2, vec![0.25; 4]), Err(Error::Parameter(_))));
        assert!(Kernel::mean(4).is_err());
    }

    #[test]
    fn convolve_examples() {
        let img = Field::from_fn(5, 4, |x, y| (x * 7 + y * 3) as f64).unwrap();
        assert_eq!(convolve(&img, &Kernel::identity()), img);

        let flat = Field::filled(6, 6, 100.0).unwrap();
        let out = convolve(&flat, &Kernel::mean(3).unwrap());
        assert!(out.data().iter().all(|v| (v - 100.0).abs() < 1e-9));

        let mut impulse = Field::new(3, 3).unwrap();
        impulse.set(1, 1, 9.0);
        let out = convolve(&impulse, &Kernel::mean(3).unwrap());
        assert!((out.get(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kernel_shape() {
        let k = gaussian_kernel(1.0).unwrap();
        assert_eq!(k.size(), 7);
        assert!((k.sum() - 1.0).abs() < 1e-9);

        // Independent route: product of normalized 1-D taps over [-3, 3].
        let taps: Vec<f64> = (-3..=3).map(|d: i32| (-(d * d) as f64 / 2.0).exp()).collect();
        let s: f64 = taps.iter().sum();
        let expected_centre = 1.0 / (s * s);
        assert!((k.at(0, 0) - expected_centre).abs() < 1e-12);
        assert!((k.at(0, 0) - 0.159_24).abs() < 1e-4);

        let k = gaussian_kernel(0.5).unwrap();
        assert_eq!(k.size(), 5);
        let max = k.weights().iter().copied().fold(f64::MIN, f64::max);
        assert_eq!(k.at(0, 0), max);

        assert!(gaussian_kernel(0.0).is_err());
        assert!(gaussian_kernel(-1.0).is_err());
    }

    #[test]
    fn separable_blur_matches_full_kernel() {
        let img = Field::from_fn(13, 9, |x, y| ((x * 31 + y * 17) % 23) as f64).unwrap();
        let a = gaussian_blur(&img, 1.3).unwrap();
        let b = convolve(&img, &gaussian_kernel(1.3).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn bilateral_constant_and_step() {
        let flat = GrayImage::filled(8, 8, 42.0).unwrap();
        let out = bilateral_filter(&flat, 2.0, 20.0, 2).unwrap();
        assert!(out.data().iter().all(|v| (v - 42.0).abs() < 1e-9));

        let step = GrayImage::from_fn(20, 5, |x, _| if x < 10 { 0.0 } else { 255.0 }).unwrap();
        let out = bilateral_filter(&step, 2.0, 10.0, 3).unwrap();
        for y in 0..5 {
            for x in 0..20 {
                let expect = if x < 10 { 0.0 } else { 255.0 };
                assert!((out.get(x, y) - expect).abs() < 1.0, "({x},{y}) = {}", out.get(x, y));
            }
        }
    }

    #[test]
    fn bilateral_reduces_impulse() {
        let img = GrayImage::from_fn(9, 9, |x, y| if x == 4 && y == 4 { 255.0 } else { 0.0 }).unwrap();
        let out = bilateral_filter(&img, 2.0, 50.0, 2).unwrap();
        assert!(out.get(4, 4) < 255.0);
        assert!(bilateral_filter(&img, 0.0, 50.0, 2).is_err());
        assert!(bilateral_filter(&img, 1.0, -1.0, 2).is_err());
    }

    proptest! {
        #[test]
        fn convolve_is_linear(
            a in prop::collection::vec(0.0f64..255.0, 30),
            b in prop::collection::vec(0.0f64..255.0, 30),
            s in -3.0f64..3.0,
            t in -3.0f64..3.0,
        ) {
            let i1 = Field::from_vec(6, 5, a).unwrap();
            let i2 = Field::from_vec(6, 5, b).unwrap();
            let k = Kernel::from_3x3([[1.0, -2.0, 0.5], [0.0, 3.0, 1.0], [-1.0, 0.25, 2.0]]);
            let combo = Field::from_fn(6, 5, |x, y| s * i1.get(x, y) + t * i2.get(x, y)).unwrap();
            let lhs = convolve(&combo, &k);
            let (c1, c2) = (convolve(&i1, &k), convolve(&i2, &k));
            for i in 0..30 {
                prop_assert!((lhs.data()[i] - (s * c1.data()[i] + t * c2.data()[i])).abs() < 1e-6);
            }
        }

        #[test]
        fn bilateral_stays_within_input_range(data in prop::collection::vec(0.0f64..255.0, 49)) {
            let img = GrayImage::from_vec(7, 7, data.clone()).unwrap();
            let out = bilateral_filter(&img, 1.5, 30.0, 2).unwrap();
            let lo = data.iter().copied().fold(f64::MAX, f64::min);
            let hi = data.iter().copied().fold(f64::MIN, f64::max);
            for &v in out.data() {
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }
}
