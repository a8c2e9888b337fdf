//! Procedural face-like images with an exact 81-point landmark layout.
//!
//! Faces are drawn in a normalized face frame `(u, v) ∈ [-1, 1]²` (the head
//! ellipse), rotated by a small roll and mapped into the image. The landmark
//! layout follows the 68-point convention (jaw, brows, nose, eyes, mouth) plus
//! 13 forehead points along the top of the head.

use std::f32::consts::PI;

use ndarray::Array3;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::face::{BBox, FaceRecord, Image, Label, Point, Provenance, NUM_LANDMARKS};
use crate::rng::{Rng, SeedStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyFace {
    /// Head center, fractions of the image size.
    pub cx: f32,
    pub cy: f32,
    /// Head radii, fractions of the image size.
    pub rx: f32,
    pub ry: f32,
    /// In-plane rotation in radians.
    pub roll: f32,
    pub skin: [f32; 3],
    pub hair: [f32; 3],
    pub lips: [f32; 3],
    pub iris: [f32; 3],
    pub background: [[f32; 3]; 2],
    pub background_phase: f32,
    /// Standard deviation of per-pixel sensor noise.
    pub noise: f32,
    pub noise_seed: u64,
}

fn landmarks_local() -> Vec<(f32, f32)> {
    let mut pts = Vec::with_capacity(NUM_LANDMARKS);
    // Jaw: lower half of the head ellipse, left ear to right ear.
    for k in 0..17 {
        let t = PI - k as f32 * PI / 16.0;
        pts.push((t.cos(), t.sin()));
    }
    // Brows.
    for side in [-1.0f32, 1.0] {
        for j in 0..5 {
            let s = j as f32 / 4.0;
            let u = if side < 0.0 { -0.62 + 0.44 * s } else { 0.18 + 0.44 * s };
            pts.push((u, -0.40 - 0.07 * (PI * s).sin()));
        }
    }
    // Nose bridge and lower nose.
    for j in 0..4 {
        pts.push((0.0, -0.22 + 0.13 * j as f32));
    }
    for (u, v) in [(-0.16, 0.22), (-0.08, 0.26), (0.0, 0.28), (0.08, 0.26), (0.16, 0.22)] {
        pts.push((u, v));
    }
    // Eyes: corner, two upper, corner, two lower.
    for cu in [-0.4f32, 0.4] {
        for a in [PI, 4.0 * PI / 3.0, 5.0 * PI / 3.0, 0.0, PI / 3.0, 2.0 * PI / 3.0] {
            pts.push((cu + 0.17 * a.cos(), -0.2 + 0.07 * a.sin()));
        }
    }
    // Outer and inner lips.
    for k in 0..12 {
        let a = PI + k as f32 * 2.0 * PI / 12.0;
        pts.push((0.36 * a.cos(), 0.55 + 0.13 * a.sin()));
    }
    for k in 0..8 {
        let a = PI + k as f32 * 2.0 * PI / 8.0;
        pts.push((0.24 * a.cos(), 0.55 + 0.05 * a.sin()));
    }
    // Forehead: interior of the upper head arc.
    for k in 0..13 {
        let t = PI + (k + 1) as f32 * PI / 14.0;
        pts.push((t.cos(), t.sin()));
    }
    debug_assert_eq!(pts.len(), NUM_LANDMARKS);
    pts
}

fn smoothstep(edge0: f32, edge1: f32, x: f32) -> f32 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

impl ToyFace {
    /// A centered, upright, noise-free face.
    pub fn canonical() -> Self {
        Self {
            cx: 0.5,
            cy: 0.5,
            rx: 0.3,
            ry: 0.38,
            roll: 0.0,
            skin: [0.85, 0.68, 0.56],
            hair: [0.25, 0.17, 0.1],
            lips: [0.72, 0.32, 0.33],
            iris: [0.3, 0.45, 0.6],
            background: [[0.35, 0.45, 0.55], [0.2, 0.25, 0.3]],
            background_phase: 0.0,
            noise: 0.0,
            noise_seed: 0,
        }
    }

    /// A random identity.
    pub fn sample(rng: &mut Rng) -> Self {
        let rx = rng.random_range(0.25..0.31);
        let ry = rx * rng.random_range(1.18..1.32);
        let tone = rng.random_range(0.35..0.95f32);
        let skin = [
            (tone + 0.08).min(1.0),
            tone * rng.random_range(0.74..0.86),
            tone * rng.random_range(0.58..0.72),
        ];
        let mut color = |lo: f32, hi: f32| [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)];
        let hair = color(0.02, 0.5);
        let iris = color(0.1, 0.6);
        let bg0 = color(0.05, 0.95);
        let bg1 = color(0.05, 0.95);
        Self {
            cx: 0.5 + rng.random_range(-0.04..0.04),
            cy: 0.5 + rng.random_range(-0.03..0.03),
            rx,
            ry,
            roll: rng.random_range(-0.15..0.15),
            skin,
            hair,
            lips: [
                rng.random_range(0.55..0.85),
                rng.random_range(0.2..0.4),
                rng.random_range(0.25..0.45),
            ],
            iris,
            background: [bg0, bg1],
            background_phase: rng.random_range(0.0..2.0 * PI),
            noise: rng.random_range(0.005..0.02),
            noise_seed: rng.random(),
        }
    }

    /// The same identity at frame `t` of a clip: slight head motion, fresh sensor noise.
    pub fn frame(&self, t: usize) -> Self {
        let s = t as f32;
        let mut f = self.clone();
        f.cx += 0.012 * (0.37 * s + self.background_phase).sin();
        f.cy += 0.008 * (0.23 * s).cos();
        f.roll += 0.03 * (0.19 * s).sin();
        f.noise_seed = SeedStream::root(self.noise_seed).index(t as u64).id();
        f
    }

    fn to_image(&self, u: f32, v: f32, size: f32) -> Point {
        let (x, y) = (u * self.rx, v * self.ry);
        let (s, c) = self.roll.sin_cos();
        Point::new(
            ((self.cx + c * x - s * y) * size).clamp(0.0, size),
            ((self.cy + s * x + c * y) * size).clamp(0.0, size),
        )
    }

    fn to_local(&self, x: f32, y: f32) -> (f32, f32) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.roll.sin_cos();
        ((c * dx + s * dy) / self.rx, (-s * dx + c * dy) / self.ry)
    }

    /// The 81 landmarks for a `size x size` rendering.
    pub fn landmarks(&self, size: usize) -> Vec<Point> {
        landmarks_local()
            .into_iter()
            .map(|(u, v)| self.to_image(u, v, size as f32))
            .collect()
    }

    fn shade(&self, x: f32, y: f32, px: f32) -> [f32; 3] {
        let bg_t = (y + 0.15 * (6.0 * x + self.background_phase).sin()).clamp(0.0, 1.0);
        let bg = mix(self.background[0], self.background[1], bg_t);
        let (u, v) = self.to_local(x, y);
        let r2 = u * u + v * v;
        // Antialiasing width in local units.
        let aa = px / self.rx.min(self.ry);
        let head = 1.0 - smoothstep(1.0 - aa, 1.0 + aa, r2.sqrt());
        if head <= 0.0 {
            return bg;
        }
        let shading = 1.0 - 0.18 * r2;
        let mut c = [self.skin[0] * shading, self.skin[1] * shading, self.skin[2] * shading];

        // Hair cap on the top of the head.
        let hair = smoothstep(-0.62 + aa, -0.62 - aa, v + 0.08 * (8.0 * u).sin());
        c = mix(c, self.hair, hair);

        // Brows.
        for side in [-1.0f32, 1.0] {
            let s = ((u * side - 0.18) / 0.44).clamp(0.0, 1.0);
            let bv = -0.40 - 0.07 * (PI * s).sin();
            let inside = (u * side) > 0.16 && (u * side) < 0.64;
            if inside {
                let d = (v - bv).abs();
                c = mix(c, mix(self.hair, [0.0; 3], 0.3), 1.0 - smoothstep(0.035, 0.035 + aa, d));
            }
        }
        // Eyes.
        for cu in [-0.4f32, 0.4] {
            let (eu, ev) = ((u - cu) / 0.17, (v + 0.2) / 0.07);
            let e = (eu * eu + ev * ev).sqrt();
            let sclera = 1.0 - smoothstep(1.0 - 2.0 * aa, 1.0, e);
            c = mix(c, [0.95, 0.95, 0.93], sclera);
            let iris_d = ((u - cu).powi(2) + (v + 0.2).powi(2)).sqrt();
            let iris = (1.0 - smoothstep(0.055, 0.055 + aa, iris_d)) * sclera;
            c = mix(c, self.iris, iris);
            let pupil = (1.0 - smoothstep(0.025, 0.025 + aa, iris_d)) * sclera;
            c = mix(c, [0.02, 0.02, 0.02], pupil);
        }
        // Nose shadow.
        let (nu, nv) = (u / 0.16, (v - 0.2) / 0.08);
        let nose = 1.0 - smoothstep(0.6, 1.0, (nu * nu + nv * nv).sqrt());
        c = mix(c, [c[0] * 0.8, c[1] * 0.78, c[2] * 0.78], nose);
        // Lips and mouth opening.
        let (mu, mv) = (u / 0.36, (v - 0.55) / 0.13);
        let lips = 1.0 - smoothstep(1.0 - 2.0 * aa, 1.0, (mu * mu + mv * mv).sqrt());
        c = mix(c, self.lips, lips);
        let (iu, iv) = (u / 0.24, (v - 0.55) / 0.05);
        let mouth = 1.0 - smoothstep(1.0 - 4.0 * aa, 1.0, (iu * iu + iv * iv).sqrt());
        c = mix(c, [0.15, 0.05, 0.05], mouth);

        mix(bg, c, head)
    }

    /// A genuine face record of this face rendered at `size`.
    pub fn record(&self, size: usize, provenance: Provenance) -> Result<FaceRecord> {
        let landmarks = self.landmarks(size);
        let bbox = BBox::enclosing(&landmarks, size, size)?;
        FaceRecord::new(self.render(size), landmarks, bbox, Label::Genuine, provenance)
    }

    /// Renders a `size x size` image in `[0, 1]`.
    pub fn render(&self, size: usize) -> Image {
        let mut img = Array3::<f32>::zeros((size, size, 3));
        let mut rng = SeedStream::root(self.noise_seed).child("sensor").rng();
        let normal = Normal::new(0.0f32, self.noise.max(0.0)).expect("finite noise level");
        let px = 1.0 / size as f32;
        for y in 0..size {
            for x in 0..size {
                let c = self.shade((x as f32 + 0.5) * px, (y as f32 + 0.5) * px, px);
                for ch in 0..3 {
                    let n = if self.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    img[[y, x, ch]] = (c[ch] + n).clamp(0.0, 1.0);
                }
            }
        }
        img
    }
}
