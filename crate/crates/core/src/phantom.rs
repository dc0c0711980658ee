//! Seeded synthetic fundus photographs: a circular field of view with
//! vignetting, an optic disc, a darker macula and a tree of vessels growing
//! out of the disc.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::Image;

struct Segment {
    a: (f64, f64),
    b: (f64, f64),
    width: f64,
}

impl Segment {
    fn distance(&self, p: (f64, f64)) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / len2).clamp(0.0, 1.0)
        };
        let (qx, qy) = (self.a.0 + t * dx - p.0, self.a.1 + t * dy - p.1);
        (qx * qx + qy * qy).sqrt()
    }
}

/// Grows one vessel as a bending polyline, branching as it thins.
fn grow(
    rng: &mut ChaCha8Rng,
    segments: &mut Vec<Segment>,
    start: (f64, f64),
    mut angle: f64,
    mut width: f64,
    depth: usize,
) {
    let mut p = start;
    let mut bend = rng.random_range(-0.08..0.08);
    let steps = rng.random_range(14..24);
    for _ in 0..steps {
        let q = (p.0 + 0.03 * angle.cos(), p.1 + 0.03 * angle.sin());
        segments.push(Segment { a: p, b: q, width });
        p = q;
        angle += bend + rng.random_range(-0.15..0.15);
        bend *= 0.95;
        width *= 0.97;
        if (p.0 - 0.5).hypot(p.1 - 0.5) > 0.5 {
            return;
        }
        if depth < 3 && rng.random_bool(0.12) {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let branch = angle + side * rng.random_range(0.4..0.9);
            grow(rng, segments, p, branch, width * 0.7, depth + 1);
        }
    }
}

/// A `size × size` fundus-like image in [0,1], fully determined by `seed`.
/// Pixels outside the circular field of view are black.
pub fn fundus_phantom(size: usize, seed: u64) -> Result<Image> {
    if size < 8 {
        return Err(Error::InvalidParameter(format!("phantom size {size} is below 8")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left = rng.random_bool(0.5);
    let disc = (
        if left { 0.3 } else { 0.7 } + rng.random_range(-0.04..0.04),
        0.5 + rng.random_range(-0.08..0.08),
    );
    let disc_r = rng.random_range(0.07..0.1);
    let macula = (
        if left { 0.68 } else { 0.32 } + rng.random_range(-0.03..0.03),
        0.5 + rng.random_range(-0.05..0.05),
    );
    let base = [
        rng.random_range(0.68..0.85),
        rng.random_range(0.3..0.42),
        rng.random_range(0.1..0.2),
    ];
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(2.0..7.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.01..0.03),
            )
        })
        .collect();

    let mut segments = Vec::new();
    let trunks = rng.random_range(4..7);
    // the main arcades leave the disc towards the macula side, above and below
    let towards = if left { 0.0 } else { std::f64::consts::PI };
    for i in 0..trunks {
        let up = if i % 2 == 0 { -1.0 } else { 1.0 };
        let spread = rng.random_range(0.5..1.6);
        let angle = towards + up * spread + if i >= 4 { std::f64::consts::PI } else { 0.0 };
        let width = rng.random_range(0.011..0.016);
        grow(&mut rng, &mut segments, disc, angle, width, 0);
    }

    let scale = size as f64;
    let px = 1.0 / scale;
    let mut data = vec![0.0f32; 3 * size * size];
    let plane = size * size;
    for y in 0..size {
        for x in 0..size {
            let p = ((x as f64 + 0.5) * px, (y as f64 + 0.5) * px);
            let r = (p.0 - 0.5).hypot(p.1 - 0.5);
            let fov = ((0.48 - r) / px).clamp(0.0, 1.0);
            if fov == 0.0 {
                continue;
            }
            let vignette = 1.0 - 0.45 * (r / 0.48).powi(2);
            let texture: f64 = waves
                .iter()
                .map(|(f, phx, phy, amp)| amp * ((f * p.0 * 6.3 + phx).sin() * (f * p.1 * 6.3 + phy).cos()))
                .sum();
            let dm = (p.0 - macula.0).hypot(p.1 - macula.1);
            let macula_shade = 1.0 - 0.35 * (-(dm / 0.09).powi(2)).exp();
            let dd = (p.0 - disc.0).hypot(p.1 - disc.1);
            let disc_glow = (-(dd / disc_r).powi(4)).exp();

            let mut vessel = 0.0f64;
            for s in &segments {
                let d = s.distance(p);
                if d < s.width + 2.0 * px {
                    let edge = ((s.width * 0.5 + 0.7 * px - d) / (1.4 * px)).clamp(0.0, 1.0);
                    vessel = vessel.max(edge);
                }
            }

            for c in 0..3 {
                let mut v = base[c] * vignette * macula_shade + texture;
                let disc_colour = [0.98, 0.85, 0.55][c];
                v = v * (1.0 - disc_glow) + disc_colour * disc_glow;
                let vessel_colour = [0.45, 0.1, 0.05][c] * vignette;
                v = v * (1.0 - 0.85 * vessel) + vessel_colour * 0.85 * vessel;
                data[c * plane + y * size + x] = (v * fov).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Image::new(size, size, data)
}
