//! Gabor filtering and a two-component Gaussian mixture fitted to the
//! intensity histogram for foreground/background separation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{convolve, Field, GrayImage, Histogram, Kernel, Mask};

/// Lower bound on component standard deviations (intensity units).
pub const SIGMA_FLOOR: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    /// Carrier frequency `f` of `cos(pi * f * x')`.
    pub f: f64,
    /// Orientation in radians.
    pub theta: f64,
    pub delta_x: f64,
    pub delta_y: f64,
    /// Odd kernel side length.
    pub size: usize,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self { f: 0.1, theta: 0.0, delta_x: 4.0, delta_y: 4.0, size: 21 }
    }
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0) || !self.f.is_finite() {
            return Err(Error::param(format!("gabor frequency must be > 0, got {}", self.f)));
        }
        if !(self.delta_x > 0.0 && self.delta_y > 0.0) {
            return Err(Error::param("gabor envelope deviations must be > 0"));
        }
        if self.size == 0 || self.size % 2 == 0 {
            return Err(Error::param(format!("gabor kernel size must be odd, got {}", self.size)));
        }
        if !self.theta.is_finite() {
            return Err(Error::param("gabor theta must be finite"));
        }
        Ok(())
    }
}

/// Raw Gabor weights before mean subtraction:
/// `exp(-1/2 [x'^2/dx^2 + y'^2/dy^2]) * cos(pi f x')` with (x', y') the
/// offsets rotated by theta. `x` runs along columns, `y` down rows.
pub fn gabor_weights(p: &GaborParams) -> Result<Vec<f64>> {
    p.validate()?;
    let r = (p.size / 2) as isize;
    let (s, c) = p.theta.sin_cos();
    let mut w = Vec::with_capacity(p.size * p.size);
    for y in -r..=r {
        for x in -r..=r {
            let (x, y) = (x as f64, y as f64);
            let xr = x * c + y * s;
            let yr = -x * s + y * c;
            let env = (-0.5 * (xr * xr / (p.delta_x * p.delta_x) + yr * yr / (p.delta_y * p.delta_y))).exp();
            w.push(env * (std::f64::consts::PI * p.f * xr).cos());
        }
    }
    Ok(w)
}

/// Zero-mean Gabor kernel.
pub fn gabor_kernel(p: &GaborParams) -> Result<Kernel> {
    let mut w = gabor_weights(p)?;
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter_mut().for_each(|v| *v -= mean);
    Kernel::new(p.size, w)
}

/// Absolute filter response.
pub fn gabor_response(img: &GrayImage, p: &GaborParams) -> Result<Field> {
    let k = gabor_kernel(p)?;
    Ok(convolve(img.field(), &k).map(f64::abs))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub sigma: f64,
}

impl Component {
    fn log_weighted_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sigma;
        self.weight.ln() - self.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
    }
}

/// Two-component 1-D Gaussian mixture, components ordered by mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm2 {
    pub components: [Component; 2],
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl Gmm2 {
    pub fn low(&self) -> &Component {
        &self.components[0]
    }

    pub fn high(&self) -> &Component {
        &self.components[1]
    }

    /// Posterior probability of the high-mean component at intensity `v`.
    pub fn posterior_high(&self, v: f64) -> f64 {
        let a = self.components[0].log_weighted_density(v);
        let b = self.components[1].log_weighted_density(v);
        1.0 / (1.0 + (a - b).exp())
    }

    /// Intensity in `[mu1, mu2]` where the two posteriors are equal (clamped
    /// to an endpoint when they do not cross there).
    pub fn decision_threshold(&self) -> f64 {
        let (lo, hi) = (self.components[0].mean, self.components[1].mean);
        let diff = |v: f64| self.components[1].log_weighted_density(v) - self.components[0].log_weighted_density(v);
        if diff(lo) > 0.0 {
            return lo;
        }
        if diff(hi) <= 0.0 {
            return hi;
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if diff(m) > 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        a
    }

    /// The JSON shape emitted by the `texture` command.
    pub fn to_flat_json(&self) -> serde_json::Value {
        let [c1, c2] = self.components;
        serde_json::json!({
            "w1": c1.weight, "mu1": c1.mean, "sigma1": c1.sigma,
            "w2": c2.weight, "mu2": c2.mean, "sigma2": c2.sigma,
            "loglik": self.log_likelihood,
        })
    }
}

fn percentile(hist: &Histogram, q: f64) -> f64 {
    let total: u64 = hist.iter().sum();
    let target = q * total as f64;
    let mut acc = 0u64;
    for (b, &c) in hist.iter().enumerate() {
        acc += c;
        if acc as f64 >= target && c > 0 {
            return b as f64;
        }
    }
    255.0
}

fn log_likelihood(hist: &Histogram, comps: &[Component; 2]) -> f64 {
    hist.iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(b, &c)| {
            let (a, d) = (comps[0].log_weighted_density(b as f64), comps[1].log_weighted_density(b as f64));
            let m = a.max(d);
            c as f64 * (m + ((a - m).exp() + (d - m).exp()).ln())
        })
        .sum()
}

/// EM on binned intensities. Returns the model and the log-likelihood after
/// initialization and after every iteration.
pub fn fit_gmm2_traced(hist: &Histogram, max_iter: usize, tol: f64) -> Result<(Gmm2, Vec<f64>)> {
    let nonempty = hist.iter().filter(|&&c| c > 0).count();
    if nonempty < 2 {
        return Err(Error::Degenerate(format!("histogram has {nonempty} non-empty bin(s); need at least 2")));
    }
    let total = hist.iter().sum::<u64>() as f64;
    let mean = hist.iter().enumerate().map(|(b, &c)| b as f64 * c as f64).sum::<f64>() / total;
    let var = hist.iter().enumerate().map(|(b, &c)| c as f64 * (b as f64 - mean).powi(2)).sum::<f64>() / total;
    let sigma0 = var.sqrt().max(SIGMA_FLOOR);
    let mut comps = [
        Component { weight: 0.5, mean: percentile(hist, 0.25), sigma: sigma0 },
        Component { weight: 0.5, mean: percentile(hist, 0.75), sigma: sigma0 },
    ];
    let mut ll = log_likelihood(hist, &comps);
    let mut trace = vec![ll];
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let mut n = [0.0f64; 2];
        let mut sx = [0.0f64; 2];
        let mut resp = [[0.0f64; 2]; 256];
        for (b, &c) in hist.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let (a, d) = (comps[0].log_weighted_density(b as f64), comps[1].log_weighted_density(b as f64));
            let m = a.max(d);
            let (ea, ed) = ((a - m).exp(), (d - m).exp());
            let r = [ea / (ea + ed), ed / (ea + ed)];
            resp[b] = r;
            for i in 0..2 {
                n[i] += c as f64 * r[i];
                sx[i] += c as f64 * r[i] * b as f64;
            }
        }
        let mut next = comps;
        for i in 0..2 {
            if n[i] <= 0.0 {
                continue;
            }
            let mu = sx[i] / n[i];
            let v = hist
                .iter()
                .enumerate()
                .map(|(b, &c)| c as f64 * resp[b][i] * (b as f64 - mu).powi(2))
                .sum::<f64>()
                / n[i];
            next[i] = Component { weight: n[i] / total, mean: mu, sigma: v.sqrt().max(SIGMA_FLOOR) };
        }
        comps = next;
        let new_ll = log_likelihood(hist, &comps);
        trace.push(new_ll);
        let rel = ((new_ll - ll) / ll.abs().max(f64::MIN_POSITIVE)).abs();
        ll = new_ll;
        if rel < tol {
            break;
        }
    }
    if comps[0].mean > comps[1].mean {
        comps.swap(0, 1);
    }
    Ok((Gmm2 { components: comps, log_likelihood: ll, iterations }, trace))
}

pub fn fit_gmm2(hist: &Histogram, max_iter: usize, tol: f64) -> Result<Gmm2> {
    fit_gmm2_traced(hist, max_iter, tol).map(|(m, _)| m)
}

/// Threshold segmentation at the posterior-equality intensity. The
/// high-mean component is foreground unless `invert` is set; a tie goes to
/// background.
pub fn gmm_segment(img: &GrayImage, model: &Gmm2, invert: bool) -> Mask {
    let t = model.decision_threshold();
    let bits: Vec<bool> = img.data().iter().map(|&v| (v > t) != invert).collect();
    Mask::from_bools(img.width(), img.height(), &bits).expect("valid dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::histogram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn kernel_symmetries() {
        let p = GaborParams { theta: 0.0, ..GaborParams::default() };
        let k = gabor_kernel(&p).unwrap();
        let r = k.radius() as isize;
        for y in -r..=r {
            for x in -r..=r {
                assert!((k.at(x, y) - k.at(x, -y)).abs() < 1e-12);
            }
        }
        let k90 = gabor_kernel(&GaborParams { theta: std::f64::consts::FRAC_PI_2, ..p }).unwrap();
        let t = k.transposed();
        for (a, b) in k90.weights().iter().zip(t.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
        let raw = gabor_weights(&p).unwrap();
        assert_eq!(raw[raw.len() / 2], 1.0);
        assert!(k.sum().abs() < 1e-9);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = GaborParams::default();
        assert!(gabor_kernel(&GaborParams { f: 0.0, ..p }).is_err());
        assert!(gabor_kernel(&GaborParams { delta_y: -1.0, ..p }).is_err());
        assert!(gabor_kernel(&GaborParams { size: 20, ..p }).is_err());
    }

    #[test]
    fn constant_image_has_zero_response() {
        let r = gabor_response(&GrayImage::filled(30, 30, 140.0).unwrap(), &GaborParams::default()).unwrap();
        assert!(r.data().iter().all(|v| v.abs() < 1e-9));
    }

    fn interior_mean(f: &Field, margin: usize) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for y in margin..f.height() - margin {
            for x in margin..f.width() - margin {
                s += f.get(x, y);
                n += 1.0;
            }
        }
        s / n
    }

    #[test]
    fn grating_prefers_matched_orientation() {
        let p = GaborParams { f: 0.25, theta: 0.6, delta_x: 4.0, delta_y: 4.0, size: 25 };
        let (s, c) = p.theta.sin_cos();
        // carrier of the kernel itself: cos(pi f x') along the rotated axis
        let img = GrayImage::from_fn(96, 96, |x, y| {
            let xr = x as f64 * c + y as f64 * s;
            128.0 + 100.0 * (std::f64::consts::PI * p.f * xr).cos()
        })
        .unwrap();
        let matched = interior_mean(&gabor_response(&img, &p).unwrap(), 13);
        let ortho = GaborParams { theta: p.theta + std::f64::consts::FRAC_PI_2, ..p };
        let mismatched = interior_mean(&gabor_response(&img, &ortho).unwrap(), 13);
        assert!(matched >= 5.0 * mismatched, "matched {matched} mismatched {mismatched}");
    }

    #[test]
    fn white_noise_has_no_preferred_orientation() {
        let p = GaborParams { f: 0.25, theta: 0.6, delta_x: 4.0, delta_y: 4.0, size: 25 };
        let ortho = GaborParams { theta: p.theta + std::f64::consts::FRAC_PI_2, ..p };
        let mut ratios = Vec::new();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..128 * 128).map(|_| rng.random_range(0.0..255.0)).collect();
            let img = GrayImage::from_vec(128, 128, data).unwrap();
            let a = interior_mean(&gabor_response(&img, &p).unwrap(), 13);
            let b = interior_mean(&gabor_response(&img, &ortho).unwrap(), 13);
            ratios.push(a / b);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((0.9..1.1).contains(&mean), "ratio {mean}");
    }

    fn two_gaussian_histogram(seed: u64, n: usize) -> Histogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (Normal::new(60.0, 15.0).unwrap(), Normal::new(190.0, 20.0).unwrap());
        let mut h = [0u64; 256];
        for i in 0..n {
            let v: f64 = if i % 2 == 0 { a.sample(&mut rng) } else { b.sample(&mut rng) };
            h[v.clamp(0.0, 255.0).floor() as usize] += 1;
        }
        h
    }

    #[test]
    fn recovers_generating_mixture() {
        let h = two_gaussian_histogram(11, 1_000_000);
        let m = fit_gmm2(&h, 200, 1e-6).unwrap();
        assert!((m.low().mean - 60.0).abs() <= 3.0, "{m:?}");
        assert!((m.high().mean - 190.0).abs() <= 3.0, "{m:?}");
        assert!((m.low().weight - 0.5).abs() <= 0.05);
        assert!((m.low().weight + m.high().weight - 1.0).abs() < 1e-9);
    }

    #[test]
    fn point_masses_collapse_to_floor() {
        let mut h = [0u64; 256];
        h[10] = 500;
        h[240] = 700;
        let m = fit_gmm2(&h, 200, 1e-9).unwrap();
        assert!((m.low().mean - 10.0).abs() < 1e-6);
        assert!((m.high().mean - 240.0).abs() < 1e-6);
        assert_eq!(m.low().sigma, SIGMA_FLOOR);
        assert_eq!(m.high().sigma, SIGMA_FLOOR);

        let mut single = [0u64; 256];
        single[77] = 10;
        assert!(matches!(fit_gmm2(&single, 200, 1e-6), Err(Error::Degenerate(_))));
    }

    #[test]
    fn em_is_monotone_and_deterministic() {
        let h = two_gaussian_histogram(3, 50_000);
        let (m, trace) = fit_gmm2_traced(&h, 200, 1e-10).unwrap();
        for pair in trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9 * pair[0].abs(), "{pair:?}");
        }
        assert_eq!(fit_gmm2(&h, 200, 1e-10).unwrap(), m);
    }

    #[test]
    fn segment_is_a_threshold_rule() {
        let h = two_gaussian_histogram(5, 20_000);
        let m = fit_gmm2(&h, 200, 1e-6).unwrap();
        let ramp = GrayImage::from_fn(256, 1, |x, _| x as f64).unwrap();
        let mask = gmm_segment(&ramp, &m, false);
        let t = m.decision_threshold();
        assert!(t >= m.low().mean && t <= m.high().mean);
        for v in 0..256 {
            assert_eq!(mask.get(v, 0), v as f64 > t);
        }
        // restricted form: inside [mu1, mu2] the rule agrees with the posterior
        for v in (m.low().mean.ceil() as usize)..=(m.high().mean.floor() as usize) {
            let post = m.posterior_high(v as f64);
            if (post - 0.5).abs() > 1e-9 {
                assert_eq!(mask.get(v, 0), post > 0.5);
            }
        }
        let mu_pixels = GrayImage::from_vec(2, 1, vec![m.low().mean, m.high().mean]).unwrap();
        let s = gmm_segment(&mu_pixels, &m, false);
        assert!(!s.get(0, 0) && s.get(1, 0));
        let inv = gmm_segment(&mu_pixels, &m, true);
        assert!(inv.get(0, 0) && !inv.get(1, 0));
    }

    #[test]
    fn bimodal_image_segmentation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (a, b) = (Normal::new(70.0, 12.0).unwrap(), Normal::new(180.0, 12.0).unwrap());
        let truth = Mask::from_fn(80, 80, |x, y| (20..60).contains(&x) && (15..55).contains(&y)).unwrap();
        let data: Vec<f64> = (0..80 * 80)
            .map(|i| {
                let v: f64 = if truth.get_index(i) { b.sample(&mut rng) } else { a.sample(&mut rng) };
                v.clamp(0.0, 255.0)
            })
            .collect();
        let img = GrayImage::from_vec(80, 80, data).unwrap();
        let m = fit_gmm2(&histogram(&img), 200, 1e-6).unwrap();
        let seg = gmm_segment(&img, &m, false);
        assert!(seg.iou(&truth).unwrap() >= 0.95);
    }
}
