//! Occlusion synthesis and completion.
//!
//! Masks are procedural shapes pasted over a raster. Completion fills each
//! masked pixel with a softmax-weighted mix of fully observed patch centres,
//! weighted by the cosine similarity between the masked pixel's
//! neighbourhood and each candidate patch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::math::{softmax64, MathError, Matrix, Vector};

/// Largest supported coverage fraction; beyond it small rasters lose every
/// fully observed patch.
pub const MAX_COVERAGE: f64 = 0.5;
pub const MIN_SIDE: usize = 8;
pub const BASELINE_PATCH: usize = 3;
pub const BASELINE_SCALE: f64 = 10.0;

const PLACEMENT_ATTEMPTS: usize = 64;
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcclusionError {
    #[error("raster dims {height}x{width}x{channels} do not match {len} pixels")]
    RasterDims {
        height: usize,
        width: usize,
        channels: usize,
        len: usize,
    },
    #[error("pixel {0} outside [0,1]")]
    PixelRange(usize),
    #[error("mask {0}x{1} does not match raster {2}x{3}")]
    MaskDims(usize, usize, usize, usize),
    #[error("mask covers every pixel")]
    FullyMasked,
    #[error("infeasible mask spec: {0}")]
    InfeasibleSpec(String),
    #[error("patch size must be odd and >= 1, got {0}")]
    InvalidPatch(usize),
    #[error("no fully observed {0}x{0} patch to attend to")]
    NoObservedPatch(usize),
    #[error("discriminator score {0} outside (0,1)")]
    ScoreRange(f64),
    #[error(transparent)]
    Math(#[from] MathError),
}

/// Height × width × channels image, pixels interleaved per position.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl Raster {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f32>,
    ) -> Result<Self, OcclusionError> {
        if height == 0 || width == 0 || channels == 0 || height * width * channels != pixels.len() {
            return Err(OcclusionError::RasterDims {
                height,
                width,
                channels,
                len: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(OcclusionError::PixelRange(i));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(
        height: usize,
        width: usize,
        channels: usize,
        value: f32,
    ) -> Result<Self, OcclusionError> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }
}

/// `true` marks a masked (missing) pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, OcclusionError> {
        if height == 0 || width == 0 || bits.len() != height * width {
            return Err(OcclusionError::MaskDims(height, width, bits.len(), 1));
        }
        if bits.iter().all(|&b| b) {
            return Err(OcclusionError::FullyMasked);
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn is_masked(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn masked_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn coverage(&self) -> f64 {
        self.masked_count() as f64 / self.bits.len() as f64
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut bits = Vec::with_capacity(self.bits.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                bits.push(self.is_masked(y, x));
            }
        }
        Self { bits, ..*self }
    }

    fn check_against(&self, raster: &Raster) -> Result<(), OcclusionError> {
        if self.height != raster.height || self.width != raster.width {
            return Err(OcclusionError::MaskDims(
                self.height,
                self.width,
                raster.height,
                raster.width,
            ));
        }
        Ok(())
    }

    /// Centres of every fully observed, in-bounds `patch × patch` window.
    pub fn observed_patch_centers(&self, patch: usize) -> Vec<(usize, usize)> {
        let r = patch / 2;
        if self.height < patch || self.width < patch {
            return Vec::new();
        }
        let mut out = Vec::new();
        for cy in r..self.height - r {
            for cx in r..self.width - r {
                let clear =
                    (cy - r..=cy + r).all(|y| (cx - r..=cx + r).all(|x| !self.is_masked(y, x)));
                if clear {
                    out.push((cy, cx));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskCategory {
    /// Solid rectangle or ellipse in one pure colour.
    Simple,
    /// Rectangle or ellipse with a two-colour stripe or checker texture.
    Complex,
    /// Irregular connected blob with mottled skin-like tone.
    Body,
    /// Union of two overlapping shapes from the other categories.
    Hybrid,
}

impl MaskCategory {
    pub const ALL: [MaskCategory; 4] = [
        MaskCategory::Simple,
        MaskCategory::Complex,
        MaskCategory::Body,
        MaskCategory::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskCategory::Simple => "simple",
            MaskCategory::Complex => "complex",
            MaskCategory::Body => "body",
            MaskCategory::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub category: MaskCategory,
    pub target_coverage: f64,
    pub flip: bool,
    /// Maximum translation in pixels along each axis.
    pub shift: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            category: MaskCategory::Simple,
            target_coverage: 0.2,
            flip: false,
            shift: 0,
            seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self, height: usize, width: usize) -> Result<usize, OcclusionError> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(OcclusionError::InfeasibleSpec(format!(
                "raster {height}x{width} smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        let c = self.target_coverage;
        if !(c > 0.0 && c <= MAX_COVERAGE) {
            return Err(OcclusionError::InfeasibleSpec(format!(
                "coverage {c} outside (0, {MAX_COVERAGE}]"
            )));
        }
        let target = (c * (height * width) as f64).round() as usize;
        if target == 0 {
            return Err(OcclusionError::InfeasibleSpec(format!(
                "coverage {c} rounds to zero pixels on {height}x{width}"
            )));
        }
        Ok(target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSample {
    pub original: Raster,
    pub masked: Raster,
    pub mask: BinaryMask,
}

/// Shape bits plus per-pixel pattern colour (channels interleaved).
struct Stamp {
    bits: Vec<bool>,
    colour: Vec<f32>,
}

impl Stamp {
    fn new(h: usize, w: usize, ch: usize) -> Self {
        Self {
            bits: vec![false; h * w],
            colour: vec![0.0; h * w * ch],
        }
    }
}

fn random_colour(rng: &mut ChaCha8Rng, ch: usize) -> Vec<f32> {
    (0..ch).map(|_| rng.random_range(0.0f32..=1.0)).collect()
}

/// Rectangle or ellipse bits of roughly `area` pixels at a random location.
fn solid_shape(rng: &mut ChaCha8Rng, h: usize, w: usize, area: usize) -> Vec<bool> {
    let aspect: f64 = rng.random_range(0.6..1.6);
    let mut bits = vec![false; h * w];
    if rng.random_bool(0.5) {
        let bw = ((area as f64 * aspect).sqrt().round() as usize).clamp(1, w);
        let bh = ((area as f64 / bw as f64).round() as usize).clamp(1, h);
        let y0 = rng.random_range(0..=h - bh);
        let x0 = rng.random_range(0..=w - bw);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                bits[y * w + x] = true;
            }
        }
    } else {
        let a = (area as f64 * aspect / std::f64::consts::PI)
            .sqrt()
            .min(w as f64 / 2.0);
        let b = (area as f64 / (std::f64::consts::PI * a)).min(h as f64 / 2.0);
        let cy = rng.random_range(b..=(h as f64 - b).max(b));
        let cx = rng.random_range(a..=(w as f64 - a).max(a));
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 + 0.5 - cy) / b;
                let dx = (x as f64 + 0.5 - cx) / a;
                if dx * dx + dy * dy <= 1.0 {
                    bits[y * w + x] = true;
                }
            }
        }
        if !bits.iter().any(|&b| b) {
            bits[(cy as usize).min(h - 1) * w + (cx as usize).min(w - 1)] = true;
        }
    }
    bits
}

/// Connected blob grown from `start` by random frontier expansion.
fn blob_shape(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    area: usize,
    start: (usize, usize),
) -> Vec<bool> {
    let mut bits = vec![false; h * w];
    let mut queued = vec![false; h * w];
    let mut frontier = vec![start];
    queued[start.0 * w + start.1] = true;
    let mut filled = 0;
    while filled < area && !frontier.is_empty() {
        let pick = rng.random_range(0..frontier.len());
        let (y, x) = frontier.swap_remove(pick);
        bits[y * w + x] = true;
        filled += 1;
        let neighbours = [
            (y.wrapping_sub(1), x),
            (y + 1, x),
            (y, x.wrapping_sub(1)),
            (y, x + 1),
        ];
        for (ny, nx) in neighbours {
            if ny < h && nx < w && !queued[ny * w + nx] {
                queued[ny * w + nx] = true;
                frontier.push((ny, nx));
            }
        }
    }
    bits
}

fn paint(
    stamp: &mut Stamp,
    bits: &[bool],
    w: usize,
    ch: usize,
    mut colour_at: impl FnMut(usize, usize, usize) -> f32,
) {
    for (idx, &on) in bits.iter().enumerate() {
        if on {
            stamp.bits[idx] = true;
            let (y, x) = (idx / w, idx % w);
            for c in 0..ch {
                stamp.colour[idx * ch + c] = colour_at(y, x, c);
            }
        }
    }
}

fn draw_category(
    rng: &mut ChaCha8Rng,
    category: MaskCategory,
    stamp: &mut Stamp,
    h: usize,
    w: usize,
    ch: usize,
    area: usize,
    anchor: Option<(usize, usize)>,
) {
    match category {
        MaskCategory::Simple => {
            let bits = solid_shape(rng, h, w, area);
            let colour = random_colour(rng, ch);
            paint(stamp, &bits, w, ch, |_, _, c| colour[c]);
        }
        MaskCategory::Complex => {
            let bits = solid_shape(rng, h, w, area);
            let (a, b) = (random_colour(rng, ch), random_colour(rng, ch));
            let period = rng.random_range(1..=3usize);
            let checker = rng.random_bool(0.5);
            paint(stamp, &bits, w, ch, |y, x, c| {
                let on = if checker {
                    (y / period + x / period) % 2 == 0
                } else {
                    (y / period) % 2 == 0
                };
                if on {
                    a[c]
                } else {
                    b[c]
                }
            });
        }
        MaskCategory::Body => {
            let start = anchor.unwrap_or_else(|| (rng.random_range(0..h), rng.random_range(0..w)));
            let bits = blob_shape(rng, h, w, area, start);
            let base: f32 = rng.random_range(0.45..0.85);
            let mut tone = Vec::with_capacity(h * w * ch);
            for _ in 0..h * w * ch {
                tone.push((base + rng.random_range(-0.1f32..0.1)).clamp(0.0, 1.0));
            }
            paint(stamp, &bits, w, ch, |y, x, c| tone[(y * w + x) * ch + c]);
        }
        MaskCategory::Hybrid => unreachable!("hybrid is composed by the caller"),
    }
}

fn build_stamp(
    rng: &mut ChaCha8Rng,
    spec: &MaskSpec,
    h: usize,
    w: usize,
    ch: usize,
    target: usize,
) -> Stamp {
    let mut stamp = Stamp::new(h, w, ch);
    match spec.category {
        MaskCategory::Hybrid => {
            const PARTS: [MaskCategory; 3] = [
                MaskCategory::Simple,
                MaskCategory::Complex,
                MaskCategory::Body,
            ];
            let first = PARTS[rng.random_range(0..3)];
            let second = PARTS[rng.random_range(0..3)];
            // parts overlap, so each takes a bit more than half the target
            let part = ((target as f64 * 0.6).round() as usize).max(1);
            draw_category(rng, first, &mut stamp, h, w, ch, part, None);
            let inside: Vec<usize> = (0..h * w).filter(|&i| stamp.bits[i]).collect();
            let seed_px = inside[rng.random_range(0..inside.len())];
            let anchor = (seed_px / w, seed_px % w);
            let before = stamp.bits.clone();
            let mut second_stamp = Stamp::new(h, w, ch);
            if second == MaskCategory::Body {
                draw_category(rng, second, &mut second_stamp, h, w, ch, part, Some(anchor));
            } else {
                // recentre the solid shape on the anchor so the union stays connected
                draw_category(rng, second, &mut second_stamp, h, w, ch, part, None);
                let idx: Vec<usize> = (0..h * w).filter(|&i| second_stamp.bits[i]).collect();
                let (sy, sx) = idx
                    .iter()
                    .fold((0usize, 0usize), |acc, &i| (acc.0 + i / w, acc.1 + i % w));
                let cy = (sy as f64 / idx.len() as f64).round() as isize;
                let cx = (sx as f64 / idx.len() as f64).round() as isize;
                second_stamp = translate(
                    &second_stamp,
                    h,
                    w,
                    ch,
                    anchor.0 as isize - cy,
                    anchor.1 as isize - cx,
                );
            }
            for i in 0..h * w {
                if second_stamp.bits[i] {
                    stamp.bits[i] = true;
                    stamp.colour[i * ch..(i + 1) * ch]
                        .copy_from_slice(&second_stamp.colour[i * ch..(i + 1) * ch]);
                }
            }
            debug_assert!(before.iter().zip(&stamp.bits).all(|(a, b)| !a || *b));
            grow_to(rng, &mut stamp, h, w, ch, target);
        }
        other => draw_category(rng, other, &mut stamp, h, w, ch, target, None),
    }
    stamp
}

/// Extends the stamp through its 4-neighbourhood until it holds `target`
/// pixels; new pixels copy the colour of the pixel they grew from.
fn grow_to(rng: &mut ChaCha8Rng, stamp: &mut Stamp, h: usize, w: usize, ch: usize, target: usize) {
    let neighbours = |i: usize| {
        let (y, x) = (i / w, i % w);
        let mut out = Vec::with_capacity(4);
        if y > 0 {
            out.push(i - w);
        }
        if y + 1 < h {
            out.push(i + w);
        }
        if x > 0 {
            out.push(i - 1);
        }
        if x + 1 < w {
            out.push(i + 1);
        }
        out
    };
    let mut count = stamp.bits.iter().filter(|&&b| b).count();
    let mut frontier: Vec<(usize, usize)> = Vec::new();
    let mut queued = vec![false; h * w];
    for i in 0..h * w {
        if stamp.bits[i] {
            for n in neighbours(i) {
                if !stamp.bits[n] && !queued[n] {
                    queued[n] = true;
                    frontier.push((n, i));
                }
            }
        }
    }
    while count < target && !frontier.is_empty() {
        let (px, from) = frontier.swap_remove(rng.random_range(0..frontier.len()));
        stamp.bits[px] = true;
        let src: Vec<f32> = stamp.colour[from * ch..(from + 1) * ch].to_vec();
        stamp.colour[px * ch..(px + 1) * ch].copy_from_slice(&src);
        count += 1;
        for n in neighbours(px) {
            if !stamp.bits[n] && !queued[n] {
                queued[n] = true;
                frontier.push((n, px));
            }
        }
    }
}

fn translate(stamp: &Stamp, h: usize, w: usize, ch: usize, dy: isize, dx: isize) -> Stamp {
    let mut out = Stamp::new(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = (y as isize - dy, x as isize - dx);
            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                continue;
            }
            let src = sy as usize * w + sx as usize;
            if stamp.bits[src] {
                let dst = y * w + x;
                out.bits[dst] = true;
                out.colour[dst * ch..(dst + 1) * ch]
                    .copy_from_slice(&stamp.colour[src * ch..(src + 1) * ch]);
            }
        }
    }
    out
}

fn flip_stamp(stamp: &Stamp, h: usize, w: usize, ch: usize) -> Stamp {
    let mut out = Stamp::new(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            let (src, dst) = (y * w + x, y * w + (w - 1 - x));
            out.bits[dst] = stamp.bits[src];
            out.colour[dst * ch..(dst + 1) * ch]
                .copy_from_slice(&stamp.colour[src * ch..(src + 1) * ch]);
        }
    }
    out
}

/// Pastes a procedural mask pattern over `sample`. Deterministic in
/// `(spec, sample)`.
pub fn synthesize_mask(spec: &MaskSpec, sample: &Raster) -> Result<MaskedSample, OcclusionError> {
    let (h, w, ch) = (sample.height, sample.width, sample.channels);
    let target = spec.validate(h, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let mut stamp = build_stamp(&mut rng, spec, h, w, ch, target);
        let (dy, dx) = if spec.shift > 0 {
            let s = spec.shift as i64;
            (
                rng.random_range(-s..=s) as isize,
                rng.random_range(-s..=s) as isize,
            )
        } else {
            (0, 0)
        };
        if dy != 0 || dx != 0 {
            stamp = translate(&stamp, h, w, ch, dy, dx);
        }
        if spec.flip {
            stamp = flip_stamp(&stamp, h, w, ch);
        }
        if !stamp.bits.iter().any(|&b| b) {
            continue;
        }
        let mask = BinaryMask {
            height: h,
            width: w,
            bits: stamp.bits,
        };
        if mask.observed_patch_centers(BASELINE_PATCH).is_empty() {
            continue;
        }
        let mut masked = sample.clone();
        for y in 0..h {
            for x in 0..w {
                if mask.is_masked(y, x) {
                    for c in 0..ch {
                        masked.set(y, x, c, stamp.colour[(y * w + x) * ch + c]);
                    }
                }
            }
        }
        return Ok(MaskedSample {
            original: sample.clone(),
            masked,
            mask,
        });
    }
    Err(OcclusionError::InfeasibleSpec(format!(
        "no placement leaves a fully observed {BASELINE_PATCH}x{BASELINE_PATCH} patch"
    )))
}

/// Attention weights of each masked pixel over the candidate patches.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// Masked pixel positions, in raster order.
    pub queries: Vec<(usize, usize)>,
    /// Centres of the fully observed candidate patches.
    pub candidates: Vec<(usize, usize)>,
    /// Row-major `queries × candidates`.
    pub weights: Vec<f64>,
}

impl AttentionMap {
    pub fn row(&self, q: usize) -> &[f64] {
        let n = self.candidates.len();
        &self.weights[q * n..(q + 1) * n]
    }

    /// `None` when there are no masked pixels.
    pub fn to_matrix(&self) -> Option<Matrix> {
        if self.queries.is_empty() {
            return None;
        }
        Matrix::new(
            self.queries.len(),
            self.candidates.len(),
            self.weights.iter().map(|&w| w as f32).collect(),
        )
        .ok()
    }
}

/// Fills masked pixels from fully observed patches.
///
/// The query for a masked pixel is its `patch × patch` neighbourhood in the
/// zero-filled image. Similarity to a candidate is the cosine over the
/// query's observed footprint, so a candidate whose content matches the
/// visible context exactly scores 1. Scores go through a softmax with
/// `scale`, and the pixel becomes the weighted mean of candidate centres.
pub fn contextual_attention(
    masked: &Raster,
    mask: &BinaryMask,
    patch: usize,
    scale: f64,
) -> Result<(Raster, AttentionMap), OcclusionError> {
    mask.check_against(masked)?;
    if patch % 2 == 0 {
        return Err(OcclusionError::InvalidPatch(patch));
    }
    let queries: Vec<(usize, usize)> = (0..mask.height)
        .flat_map(|y| (0..mask.width).map(move |x| (y, x)))
        .filter(|&(y, x)| mask.is_masked(y, x))
        .collect();
    let candidates = mask.observed_patch_centers(patch);
    if queries.is_empty() {
        return Ok((
            masked.clone(),
            AttentionMap {
                queries,
                candidates,
                weights: Vec::new(),
            },
        ));
    }
    if candidates.is_empty() {
        return Err(OcclusionError::NoObservedPatch(patch));
    }
    let (h, w, ch) = (
        masked.height as isize,
        masked.width as isize,
        masked.channels,
    );
    let r = (patch / 2) as isize;

    let rows: Vec<Vec<f64>> = queries
        .par_iter()
        .map(|&(qy, qx)| {
            // observed offsets of the query neighbourhood
            let mut offsets = Vec::new();
            let mut qvals = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    let (y, x) = (qy as isize + dy, qx as isize + dx);
                    if y < 0 || x < 0 || y >= h || x >= w || mask.is_masked(y as usize, x as usize)
                    {
                        continue;
                    }
                    offsets.push((dy, dx));
                    for c in 0..ch {
                        qvals.push(masked.get(y as usize, x as usize, c) as f64);
                    }
                }
            }
            let qnorm = qvals.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scores: Vec<f64> = candidates
                .iter()
                .map(|&(cy, cx)| {
                    let mut dot = 0.0;
                    let mut cnorm = 0.0;
                    let mut q = qvals.iter();
                    for &(dy, dx) in &offsets {
                        let (y, x) = ((cy as isize + dy) as usize, (cx as isize + dx) as usize);
                        for c in 0..ch {
                            let v = masked.get(y, x, c) as f64;
                            dot += v * q.next().expect("aligned");
                            cnorm += v * v;
                        }
                    }
                    let denom = qnorm * cnorm.sqrt();
                    if denom < NORM_EPS {
                        0.0
                    } else {
                        dot / denom
                    }
                })
                .collect();
            softmax64(&scores, scale)
        })
        .collect();

    let mut completed = masked.clone();
    for (&(qy, qx), weights) in queries.iter().zip(&rows) {
        for c in 0..ch {
            let v: f64 = weights
                .iter()
                .zip(&candidates)
                .map(|(wgt, &(cy, cx))| wgt * masked.get(cy, cx, c) as f64)
                .sum();
            completed.set(qy, qx, c, (v as f32).clamp(0.0, 1.0));
        }
    }
    Ok((
        completed,
        AttentionMap {
            queries,
            candidates,
            weights: rows.into_iter().flatten().collect(),
        },
    ))
}

/// Deterministic stand-in for a trained completion network.
pub fn baseline_inpaint(masked: &Raster, mask: &BinaryMask) -> Result<Raster, OcclusionError> {
    contextual_attention(masked, mask, BASELINE_PATCH, BASELINE_SCALE).map(|(r, _)| r)
}

/// Mean absolute pixel difference.
pub fn reconstruction_loss(completed: &Raster, original: &Raster) -> Result<f64, OcclusionError> {
    if completed.height != original.height
        || completed.width != original.width
        || completed.channels != original.channels
    {
        return Err(OcclusionError::MaskDims(
            completed.height,
            completed.width,
            original.height,
            original.width,
        ));
    }
    let sum: f64 = completed
        .pixels
        .iter()
        .zip(&original.pixels)
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum();
    Ok(sum / completed.pixels.len() as f64)
}

/// Mean of `log D(real) + log(1 − D(fake))` over paired scores.
pub fn adversarial_value(disc_real: &Vector, disc_fake: &Vector) -> Result<f64, OcclusionError> {
    if disc_real.dim() != disc_fake.dim() {
        return Err(MathError::DimMismatch(disc_real.dim(), disc_fake.dim()).into());
    }
    let mut sum = 0.0;
    for (&r, &f) in disc_real.as_slice().iter().zip(disc_fake.as_slice()) {
        let (r, f) = (r as f64, f as f64);
        for s in [r, f] {
            if !(s > 0.0 && s < 1.0) {
                return Err(OcclusionError::ScoreRange(s));
            }
        }
        sum += r.ln() + (1.0 - f).ln();
    }
    Ok(sum / disc_real.dim() as f64)
}
