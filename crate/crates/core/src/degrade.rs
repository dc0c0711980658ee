//! Cataract simulation and synthesized cataract sets (SCS).
//!
//! Each channel of a clear image `s` is degraded as
//!
//! ```text
//! s'_c = α · (s_c * g_B) + β · (J * g_L) · (L_c − s_c)
//! ```
//!
//! where `g_B`, `g_L` are Gaussian kernels, `J` is a radial transmission
//! panel centred at `(a, b)` and `L_c` is the channel maximum. The result is
//! clamped to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{self, extract_hfc_default, filter2d, gaussian_kernel, Image, CHANNELS};

pub const BLUR_RADII: (usize, usize) = (1, 3);
pub const BLUR_SIGMAS: (f64, f64) = (10.0, 30.0);
pub const DEFAULT_SCS_SIZE: usize = 16;

/// One draw of the degradation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimParams {
    pub alpha: f64,
    pub beta: f64,
    pub r_b: usize,
    pub sigma_b: f64,
    pub r_l: usize,
    pub sigma_l: f64,
    /// Panel centre row as a fraction of `height - 1`.
    pub center_a: f64,
    /// Panel centre column as a fraction of `width - 1`.
    pub center_b: f64,
    /// Use raw pixel distances for `J` instead of max-normalized ones.
    pub raw_panel: bool,
    pub seed: u64,
}

/// Whether radius-0 (identity) blurs are accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlurPolicy {
    Strict,
    AllowIdentity,
}

impl SimParams {
    pub const CSV_HEADER: &'static str =
        "index,seed,alpha,beta,r_b,sigma_b,r_l,sigma_l,center_a,center_b,raw_panel";

    pub fn validate(&self, policy: BlurPolicy) -> Result<()> {
        let radius_ok = |r: usize| {
            (BLUR_RADII.0..=BLUR_RADII.1).contains(&r)
                || (policy == BlurPolicy::AllowIdentity && r == 0)
        };
        let sigma_ok = |s: f64| (BLUR_SIGMAS.0..=BLUR_SIGMAS.1).contains(&s);
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta {} must be >= 0", self.beta)));
        }
        if !radius_ok(self.r_b) || !radius_ok(self.r_l) {
            return Err(Error::InvalidParameter(format!(
                "blur radii ({}, {}) outside {{1,2,3}}",
                self.r_b, self.r_l
            )));
        }
        if !sigma_ok(self.sigma_b) || !sigma_ok(self.sigma_l) {
            return Err(Error::InvalidParameter(format!(
                "blur sigmas ({}, {}) outside [10, 30]",
                self.sigma_b, self.sigma_l
            )));
        }
        if !unit(self.center_a) || !unit(self.center_b) {
            return Err(Error::InvalidParameter(format!(
                "panel centre ({}, {}) outside the unit square",
                self.center_a, self.center_b
            )));
        }
        Ok(())
    }

    pub fn csv_row(&self, index: usize) -> String {
        format!(
            "{index},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.alpha,
            self.beta,
            self.r_b,
            self.sigma_b,
            self.r_l,
            self.sigma_l,
            self.center_a,
            self.center_b,
            self.raw_panel
        )
    }
}

/// Sampling ranges for [`sample_params`]. Every range is inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationRanges {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub r_b: (usize, usize),
    pub sigma_b: (f64, f64),
    pub r_l: (usize, usize),
    pub sigma_l: (f64, f64),
    pub center_a: (f64, f64),
    pub center_b: (f64, f64),
    pub raw_panel: bool,
}

impl Default for DegradationRanges {
    fn default() -> Self {
        Self {
            alpha: (0.5, 0.95),
            beta: (0.2, 0.8),
            r_b: BLUR_RADII,
            sigma_b: BLUR_SIGMAS,
            r_l: BLUR_RADII,
            sigma_l: BLUR_SIGMAS,
            center_a: (0.2, 0.8),
            center_b: (0.2, 0.8),
            raw_panel: false,
        }
    }
}

impl DegradationRanges {
    /// Ranges that always yield exactly `p` (apart from its seed).
    pub fn point(p: &SimParams) -> Self {
        Self {
            alpha: (p.alpha, p.alpha),
            beta: (p.beta, p.beta),
            r_b: (p.r_b, p.r_b),
            sigma_b: (p.sigma_b, p.sigma_b),
            r_l: (p.r_l, p.r_l),
            sigma_l: (p.sigma_l, p.sigma_l),
            center_a: (p.center_a, p.center_a),
            center_b: (p.center_b, p.center_b),
            raw_panel: p.raw_panel,
        }
    }

    /// Restricts panel centres to `[margin, 1 - margin]` on both axes.
    pub fn set_panel_margin(&mut self, margin: f64) -> Result<()> {
        if !(0.0..=0.5).contains(&margin) {
            return Err(Error::InvalidParameter(format!(
                "panel_margin {margin} must lie in [0, 0.5]"
            )));
        }
        self.center_a = (margin, 1.0 - margin);
        self.center_b = (margin, 1.0 - margin);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bounded = |name: &str, (lo, hi): (f64, f64), (min, max): (f64, f64)| {
            if lo <= hi && lo >= min && hi <= max {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} range [{lo}, {hi}] must be ordered and lie in [{min}, {max}]"
                )))
            }
        };
        bounded("alpha", self.alpha, (0.0, 1.0))?;
        if self.alpha.0 <= 0.0 {
            return Err(Error::InvalidParameter("alpha must be strictly positive".into()));
        }
        bounded("beta", self.beta, (0.0, f64::MAX))?;
        bounded("sigma_b", self.sigma_b, BLUR_SIGMAS)?;
        bounded("sigma_l", self.sigma_l, BLUR_SIGMAS)?;
        bounded("center_a", self.center_a, (0.0, 1.0))?;
        bounded("center_b", self.center_b, (0.0, 1.0))?;
        for (name, (lo, hi)) in [("r_b", self.r_b), ("r_l", self.r_l)] {
            if lo > hi || lo < BLUR_RADII.0 || hi > BLUR_RADII.1 {
                return Err(Error::InvalidParameter(format!(
                    "{name} range [{lo}, {hi}] must lie in {{1,2,3}}"
                )));
            }
        }
        Ok(())
    }
}

/// Mixes a master seed and a stream index into an independent seed
/// (splitmix64 finalizer).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one [`SimParams`] from `ranges`, deterministically in `seed`.
/// Every field is independent and uniform over its range.
pub fn sample_params(seed: u64, ranges: &DegradationRanges) -> Result<SimParams> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |(lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let alpha = uniform(ranges.alpha);
    let beta = uniform(ranges.beta);
    let sigma_b = uniform(ranges.sigma_b);
    let sigma_l = uniform(ranges.sigma_l);
    let center_a = uniform(ranges.center_a);
    let center_b = uniform(ranges.center_b);
    let r_b = rng.random_range(ranges.r_b.0..=ranges.r_b.1);
    let r_l = rng.random_range(ranges.r_l.0..=ranges.r_l.1);
    Ok(SimParams {
        alpha,
        beta,
        r_b,
        sigma_b,
        r_l,
        sigma_l,
        center_a,
        center_b,
        raw_panel: ranges.raw_panel,
        seed,
    })
}

/// Euclidean distances from `(center_a·(h−1), center_b·(w−1))`, row-major.
pub fn panel_distances(height: usize, width: usize, center_a: f64, center_b: f64) -> Vec<f64> {
    let a = center_a * (height as f64 - 1.0);
    let b = center_b * (width as f64 - 1.0);
    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            out.push(((i as f64 - a).powi(2) + (j as f64 - b).powi(2)).sqrt());
        }
    }
    out
}

/// Transmission panel `J` divided by its maximum, so values lie in `[0, 1]`.
/// An all-zero field (1×1 frame) stays zero.
pub fn transmission_panel(height: usize, width: usize, center_a: f64, center_b: f64) -> Vec<f64> {
    let mut j = panel_distances(height, width, center_a, center_b);
    let peak = j.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        j.iter_mut().for_each(|v| *v /= peak);
    }
    j
}

/// Applies the cataract model to every channel of `clear`.
pub fn simulate_cataract(clear: &Image, p: &SimParams) -> Result<Image> {
    simulate_cataract_with(clear, p, BlurPolicy::Strict)
}

pub fn simulate_cataract_with(clear: &Image, p: &SimParams, policy: BlurPolicy) -> Result<Image> {
    p.validate(policy)?;
    let (h, w) = (clear.height(), clear.width());
    let n = h * w;

    let blurred = filter2d(clear, &gaussian_kernel(p.r_b, p.sigma_b)?);
    let panel = if p.raw_panel {
        panel_distances(h, w, p.center_a, p.center_b)
    } else {
        transmission_panel(h, w, p.center_a, p.center_b)
    };
    let panel: Vec<f32> = panel.into_iter().map(|v| v as f32).collect();
    let g_l = gaussian_kernel(p.r_l, p.sigma_l)?;
    let haze = imaging::separable_plane(&panel, h, w, g_l.profile().expect("gaussian is separable"));

    let mut data = Vec::with_capacity(CHANNELS * n);
    for c in 0..CHANNELS {
        let s = clear.channel(c);
        let peak = s.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let sb = blurred.channel(c);
        for i in 0..n {
            let v = p.alpha * sb[i] as f64 + p.beta * haze[i] * (peak - s[i] as f64);
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    let out = Image::new(h, w, data)?;
    match clear.mask() {
        Some(m) => out.with_mask(m.to_vec()),
        None => Ok(out),
    }
}

/// A clear image, its K simulated cataract versions and all their HFCs.
/// Every cataract shares the clear image as its restoration target.
#[derive(Clone, Debug, PartialEq)]
pub struct ScsSample {
    pub clear: Image,
    pub cataracts: Vec<Image>,
    pub params: Vec<SimParams>,
    pub clear_hfc: Image,
    pub cataract_hfcs: Vec<Image>,
}

impl ScsSample {
    pub fn len(&self) -> usize {
        self.cataracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cataracts.is_empty()
    }
}

/// Draws the K parameter records of an SCS. Member `k` uses the seed
/// `derive_seed(master_seed, k)`, so members are independent of one another
/// and of generation order.
pub fn scs_params(k: usize, master_seed: u64, ranges: &DegradationRanges) -> Result<Vec<SimParams>> {
    (0..k as u64)
        .map(|i| sample_params(derive_seed(master_seed, i), ranges))
        .collect()
}

/// Builds an SCS of `k` cataract images from one clear image.
pub fn make_scs(
    clear: &Image,
    k: usize,
    master_seed: u64,
    ranges: &DegradationRanges,
) -> Result<ScsSample> {
    if k == 0 {
        return Err(Error::InvalidParameter("SCS size must be at least 1".into()));
    }
    let params = scs_params(k, master_seed, ranges)?;
    let cataracts = params
        .iter()
        .map(|p| simulate_cataract(clear, p))
        .collect::<Result<Vec<_>>>()?;
    let cataract_hfcs = cataracts
        .iter()
        .map(extract_hfc_default)
        .collect::<Result<Vec<_>>>()?;
    Ok(ScsSample {
        clear: clear.clone(),
        clear_hfc: extract_hfc_default(clear)?,
        cataracts,
        params,
        cataract_hfcs,
    })
}
