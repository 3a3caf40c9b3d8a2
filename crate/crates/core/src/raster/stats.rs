use super::{GrayImage, Mask};

/// 256-bin intensity counts; bin `b` holds pixels with `floor(clip(v)) == b`.
pub type Histogram = [u64; 256];

#[inline]
pub(crate) fn bin_of(v: f64) -> usize {
    v.clamp(0.0, 255.0).floor() as usize
}

pub fn histogram(img: &GrayImage) -> Histogram {
    let mut h = [0u64; 256];
    for &v in img.data() {
        h[bin_of(v)] += 1;
    }
    h
}

/// Population mean and variance.
pub fn mean_variance(img: &GrayImage) -> (f64, f64) {
    let n = img.data().len() as f64;
    let mean = img.data().iter().sum::<f64>() / n;
    let var = img.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Otsu's threshold: maximizes between-class variance with classes
/// `bin <= t` and `bin > t`; ties resolve to the smallest `t`.
pub fn otsu_threshold(img: &GrayImage) -> u8 {
    otsu_from_histogram(&histogram(img))
}

pub(crate) fn otsu_from_histogram(hist: &Histogram) -> u8 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0;
    }
    let total_f = total as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best_t, mut best_var) = (0u8, f64::NEG_INFINITY);
    for t in 0..256 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total_f - w0;
        let between = if w0 == 0.0 || w1 == 0.0 {
            0.0
        } else {
            let m0 = sum0 / w0;
            let m1 = (sum_all - sum0) / w1;
            (w0 / total_f) * (w1 / total_f) * (m0 - m1) * (m0 - m1)
        };
        if between > best_var {
            best_var = between;
            best_t = t as u8;
        }
    }
    best_t
}

/// Pixels whose bin exceeds the Otsu threshold become 255.
pub fn otsu_binarize(img: &GrayImage) -> Mask {
    let t = otsu_threshold(img) as usize;
    let bits: Vec<bool> = img.data().iter().map(|&v| bin_of(v) > t).collect();
    Mask::from_bools(img.width(), img.height(), &bits).expect("dimensions come from a valid image")
}
