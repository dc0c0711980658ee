//! Full-reference quality metrics and directory evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{load_image, Image, CHANNELS};
use crate::parallel;
use crate::training::list_images;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "cannot compare {}x{} with {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Pixels selected by the masks of both images (all when neither has one).
fn shared_mask(a: &Image, b: &Image) -> Option<Vec<bool>> {
    match (a.mask(), b.mask()) {
        (None, None) => None,
        (Some(m), None) | (None, Some(m)) => Some(m.to_vec()),
        (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(p, q)| *p && *q).collect()),
    }
}

/// Peak signal-to-noise ratio in dB for peak 1.0; `f64::INFINITY` when the
/// images agree exactly.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let mask = shared_mask(a, b);
    let n = a.pixels();
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..CHANNELS {
        let (pa, pb) = (a.channel(c), b.channel(c));
        for i in 0..n {
            if mask.as_ref().is_none_or(|m| m[i]) {
                let d = pa[i] as f64 - pb[i] as f64;
                sum += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidImage("mask selects no pixels".into()));
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn ssim_taps() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable weighted sum over every fully contained window.
fn valid_filter(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(t, wt)| wt * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(t, wt)| wt * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), computed per
/// channel over valid window positions and averaged. With a mask, only
/// windows centred on selected pixels count.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidImage(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let mask = shared_mask(a, b);
    let taps = ssim_taps();
    let r = SSIM_WINDOW / 2;
    let ow = w - SSIM_WINDOW + 1;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..CHANNELS {
        let x: Vec<f64> = a.channel(c).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.channel(c).iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| valid_filter(p, h, w, &taps));
        for i in 0..mx.len() {
            let centre = (i / ow + r) * w + i % ow + r;
            if mask.as_ref().is_some_and(|m| !m[centre]) {
                continue;
            }
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidImage("mask selects no SSIM window".into()));
    }
    Ok(total / count as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// `(name, reason)` of pairs that could not be compared.
    pub skipped: Vec<(String, String)>,
    /// Mean over rows with finite PSNR; infinite when every row is infinite.
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub infinite_psnr: usize,
}

impl EvalReport {
    pub fn from_rows(mut rows: Vec<EvalRow>, skipped: Vec<(String, String)>) -> Self {
        rows.sort_by(|a, b| a.name.cmp(&b.name));
        let finite: Vec<f64> = rows.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
        let infinite_psnr = rows.len() - finite.len();
        let mean_psnr = if finite.is_empty() {
            if rows.is_empty() {
                f64::NAN
            } else {
                f64::INFINITY
            }
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let mean_ssim = if rows.is_empty() {
            f64::NAN
        } else {
            rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64
        };
        Self {
            rows,
            skipped,
            mean_psnr,
            mean_ssim,
            infinite_psnr,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,psnr_db,ssim\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.name, fmt_value(r.psnr), fmt_value(r.ssim)));
        }
        s.push_str(&format!("MEAN,{},{}\n", fmt_value(self.mean_psnr), fmt_value(self.mean_ssim)));
        s.push_str(&format!("# infinite psnr rows excluded from mean: {}\n", self.infinite_psnr));
        for (name, reason) in &self.skipped {
            s.push_str(&format!("# skipped {name}: {reason}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

/// Reference name for an output file: the stem without a trailing
/// `_restored` and `_cataract_NN`, keeping the extension.
fn reference_candidates(path: &Path) -> Vec<String> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let mut stems = vec![stem.to_string()];
    let mut base = stem.strip_suffix("_restored").unwrap_or(stem);
    stems.push(base.to_string());
    if let Some((head, tail)) = base.rsplit_once("_cataract_") {
        if !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) {
            base = head;
            stems.push(base.to_string());
        }
    }
    stems.dedup();
    stems
}

fn find_reference(restored: &Path, references: &[PathBuf]) -> Option<PathBuf> {
    for stem in reference_candidates(restored) {
        if let Some(p) = references
            .iter()
            .find(|r| r.file_stem().and_then(|s| s.to_str()) == Some(stem.as_str()))
        {
            return Some(p.clone());
        }
    }
    None
}

/// Compares every image of `restored_dir` with its counterpart in
/// `reference_dir` and writes the CSV report. Counterparts match by name,
/// ignoring `_restored` and `_cataract_NN` suffixes. A missing counterpart
/// is an error raised before anything is written; pairs that cannot be
/// compared are skipped and listed in the report.
pub fn evaluate(
    restored_dir: impl AsRef<Path>,
    reference_dir: impl AsRef<Path>,
    report_path: impl AsRef<Path>,
) -> Result<EvalReport> {
    let restored = list_images(restored_dir.as_ref())?;
    let references = list_images(reference_dir.as_ref())?;
    if restored.is_empty() {
        return Err(Error::Dataset(format!(
            "{} contains no images",
            restored_dir.as_ref().display()
        )));
    }
    let pairs = restored
        .iter()
        .map(|p| {
            find_reference(p, &references).map(|r| (p.clone(), r)).ok_or_else(|| {
                Error::Dataset(format!(
                    "no counterpart for {} in {}",
                    p.display(),
                    reference_dir.as_ref().display()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let results = parallel::map(&pairs, |_, (out, reference)| {
        let name = out.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let a = load_image(out)?;
        let b = load_image(reference)?;
        Ok(match psnr(&a, &b).and_then(|p| Ok((p, ssim(&a, &b)?))) {
            Ok((psnr, ssim)) => Ok(EvalRow { name, psnr, ssim }),
            Err(e) => Err((name, e.to_string())),
        })
    })?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(skip) => skipped.push(skip),
        }
    }
    let report = EvalReport::from_rows(rows, skipped);
    report.write_csv(report_path)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::save_image;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _, _| rng.random::<f32>()).unwrap()
    }

    fn naive_psnr(a: &Image, b: &Image) -> f64 {
        let mut s = 0.0;
        for c in 0..3 {
            for y in 0..a.height() {
                for x in 0..a.width() {
                    let d = a.get(c, y, x) as f64 - b.get(c, y, x) as f64;
                    s += d * d;
                }
            }
        }
        let mse = s / (3 * a.height() * a.width()) as f64;
        -10.0 * mse.log10()
    }

    /// Direct 2-D sliding window, no separability.
    fn naive_ssim(a: &Image, b: &Image) -> f64 {
        let n = 11;
        let mut g = [[0.0f64; 11]; 11];
        let mut norm = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
                norm += *v;
            }
        }
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        let mut count = 0.0;
        for c in 0..3 {
            for y0 in 0..=a.height() - n {
                for x0 in 0..=a.width() - n {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..n {
                        for j in 0..n {
                            let wt = g[i][j] / norm;
                            let p = a.get(c, y0 + i, x0 + j) as f64;
                            let q = b.get(c, y0 + i, x0 + j) as f64;
                            mx += wt * p;
                            my += wt * q;
                            xx += wt * p * p;
                            yy += wt * q * q;
                            xy += wt * p * q;
                        }
                    }
                    let (vx, vy, cv) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    total += ((2.0 * mx * my + c1) * (2.0 * cv + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1.0;
                }
            }
        }
        total / count
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Image::constant(8, 8, 0.5).unwrap();
        let b = Image::constant(8, 8, 0.6).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        // f32 storage: 0.6 − 0.5 is not exactly 0.1
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        let a = Image::constant(8, 8, 0.25).unwrap();
        let b = Image::constant(8, 8, 0.375).unwrap();
        assert_eq!(psnr(&a, &b).unwrap(), 10.0 * (1.0 / (0.125f64 * 0.125)).log10());
    }

    #[test]
    fn psnr_rejects_mismatch() {
        let a = Image::constant(8, 8, 0.5).unwrap();
        let b = Image::constant(8, 9, 0.5).unwrap();
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn psnr_matches_oracle() {
        for seed in 0..10 {
            let a = random_image(9, 7, seed);
            let b = random_image(9, 7, seed + 100);
            assert!((psnr(&a, &b).unwrap() - naive_psnr(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_matches_oracle() {
        for seed in 0..5 {
            let a = random_image(16, 14, seed);
            let b = a.zip_map(&random_image(16, 14, seed + 50), |p, q| 0.7 * p + 0.3 * q).unwrap();
            assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-4);
        }
    }

    #[test]
    fn ssim_constants() {
        let (c1, c2) = (0.3f32, 0.7f32);
        let a = Image::constant(12, 12, c1).unwrap();
        let b = Image::constant(12, 12, c2).unwrap();
        let (p, q) = (c1 as f64, c2 as f64);
        let want = (2.0 * p * q + SSIM_C1) / (p * p + q * q + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
        assert!(ssim(&Image::constant(10, 12, 0.5).unwrap(), &Image::constant(10, 12, 0.5).unwrap()).is_err());
    }

    #[test]
    fn noise_ladder_decreases_psnr() {
        let clear = random_image(16, 16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise: Vec<f32> = (0..clear.data().len()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let mut prev = f64::INFINITY;
        for amp in [0.01f32, 0.02, 0.05] {
            let noisy = Image::new(16, 16, clear.data().iter().zip(&noise).map(|(v, n)| v + amp * n).collect()).unwrap();
            let p = psnr(&clear, &noisy).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn full_mask_is_unmasked() {
        let a = random_image(16, 16, 3);
        let b = random_image(16, 16, 4);
        let am = a.clone().with_mask(vec![true; 256]).unwrap();
        assert_eq!(psnr(&am, &b).unwrap(), psnr(&a, &b).unwrap());
        assert_eq!(ssim(&am, &b).unwrap(), ssim(&a, &b).unwrap());
        let partial = crate::imaging::circular_mask(16, 16);
        let ap = a.clone().with_mask(partial).unwrap();
        assert_ne!(psnr(&ap, &b).unwrap(), psnr(&a, &b).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = random_image(12, 13, s1);
            let b = random_image(12, 13, s2 + 1000);
            prop_assert!((psnr(&a, &b).unwrap() - psnr(&b, &a).unwrap()).abs() < 1e-9);
            let (x, y) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&x) && x < 1.0);
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn suffixes_map_to_reference() {
        let c = reference_candidates(Path::new("eye_cataract_03_restored.png"));
        assert_eq!(c, vec!["eye_cataract_03_restored", "eye_cataract_03", "eye"]);
        assert_eq!(reference_candidates(Path::new("eye.png")), vec!["eye"]);
    }

    #[test]
    fn evaluate_directories() {
        let restored = tempfile::tempdir().unwrap();
        let reference = tempfile::tempdir().unwrap();
        let report = restored.path().join("report.csv");
        let ref_img = random_image(16, 16, 7);
        save_image(&ref_img, reference.path().join("a.png")).unwrap();
        save_image(&ref_img, reference.path().join("b.png")).unwrap();
        save_image(&ref_img, restored.path().join("a_restored.png")).unwrap();
        save_image(&Image::constant(16, 16, 0.5).unwrap(), restored.path().join("b_cataract_01_restored.png")).unwrap();
        save_image(&Image::constant(8, 8, 0.5).unwrap(), reference.path().join("c.png")).unwrap();
        save_image(&Image::constant(16, 16, 0.5).unwrap(), restored.path().join("c_restored.png")).unwrap();

        let out = evaluate(restored.path(), reference.path(), &report).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].psnr, f64::INFINITY);
        assert!((out.rows[0].ssim - 1.0).abs() < 1e-9);
        assert_eq!(out.infinite_psnr, 1);
        assert_eq!(out.mean_psnr, out.rows[1].psnr);
        assert_eq!(out.skipped.len(), 1);
        let text = fs::read_to_string(&report).unwrap();
        assert!(text.starts_with("name,psnr_db,ssim\na_restored.png,inf,"));
        assert!(text.contains("\nMEAN,"));
        assert!(text.contains("# skipped c_restored.png"));

        fs::remove_file(reference.path().join("b.png")).unwrap();
        fs::remove_file(&report).unwrap();
        assert!(evaluate(restored.path(), reference.path(), &report).is_err());
        assert!(!report.exists());
    }
}
