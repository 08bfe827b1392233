//! Joint semantic segmentation and depth regression from RGB with a small
//! fully-convolutional encoder-decoder, trained on rendered frames.
//!
//! Tensors are channel-major `[c][y][x]` flat vectors.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::gridhouse::{reachable_poses, render, HouseLayout, LabelId, RenderConfig, RenderOutput, BACKGROUND};

pub const CHECKPOINT_TAG: &str = "gaple-percep v1";
pub const FRAME_TAG: &str = "gaple-frame v1";

/// Frames with more background than this are dropped from datasets.
pub const DEFAULT_BACKGROUND_CAP: f64 = 0.8;
pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("image of {width}x{height} must have sides divisible by 4")]
    BadDims { width: usize, height: usize },
    #[error("no frame survived the background filter")]
    EmptyDataset,
    #[error("sample does not match network: {0}")]
    Mismatch(String),
    #[error("malformed frame record: {0}")]
    BadRecord(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Convolution with `k`×`k` kernel, zero padding `k / 2`. Weights are laid out
/// `[out][in][ky][kx]`, followed by one bias per output channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub offset: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv {
    fn weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn bias(&self) -> usize {
        self.offset + self.weights()
    }

    fn end(&self) -> usize {
        self.bias() + self.cout
    }

    fn out_dim(&self, n: usize) -> usize {
        (n + 2 * (self.k / 2) - self.k) / self.stride + 1
    }

    /// Output columns `ox` whose source column `ox*stride + kx - pad` is inside
    /// `0..w`.
    fn valid_range(&self, kx: usize, w: usize, wo: usize) -> (usize, usize) {
        let pad = self.k / 2;
        let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(self.stride) };
        let hi = if w + pad < kx + 1 { 0 } else { ((w - 1 + pad - kx) / self.stride + 1).min(wo) };
        (lo, hi.max(lo))
    }

    fn forward(&self, p: &[f64], x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let pad = self.k / 2;
        let s = self.stride;
        let mut out = vec![0.0; self.cout * ho * wo];
        let weights = &p[self.offset..self.bias()];
        for co in 0..self.cout {
            let o = &mut out[co * ho * wo..(co + 1) * ho * wo];
            o.iter_mut().for_each(|v| *v = p[self.bias() + co]);
            for ci in 0..self.cin {
                let plane = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = weights[((co * self.cin + ci) * self.k + ky) * self.k + kx];
                        let (lo, hi) = self.valid_range(kx, w, wo);
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &plane[iy as usize * w..];
                            let orow = &mut o[oy * wo..(oy + 1) * wo];
                            if s == 1 {
                                let src = &row[lo + kx - pad..hi + kx - pad];
                                orow[lo..hi].iter_mut().zip(src).for_each(|(v, &xi)| *v += wv * xi);
                            } else {
                                for ox in lo..hi {
                                    orow[ox] += wv * row[ox * s + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        (out, ho, wo)
    }

    /// Accumulates parameter gradients into `g` and returns the input gradient.
    fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], h: usize, w: usize, dout: &[f64], need_dx: bool) -> Vec<f64> {
        let (ho, wo) = (self.out_dim(h), self.out_dim(w));
        let pad = self.k / 2;
        let s = self.stride;
        let mut dx = if need_dx { vec![0.0; self.cin * h * w] } else { Vec::new() };
        for co in 0..self.cout {
            let d = &dout[co * ho * wo..(co + 1) * ho * wo];
            g[self.bias() + co] += d.iter().sum::<f64>();
            for ci in 0..self.cin {
                let plane = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wi = self.offset + ((co * self.cin + ci) * self.k + ky) * self.k + kx;
                        let wv = p[wi];
                        let (lo, hi) = self.valid_range(kx, w, wo);
                        let mut acc = 0.0;
                        for oy in 0..ho {
                            let iy = (oy * s + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            let drow = &d[oy * wo..(oy + 1) * wo];
                            if s == 1 {
                                let src = &plane[iy * w + lo + kx - pad..iy * w + hi + kx - pad];
                                acc += drow[lo..hi].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                                if need_dx {
                                    let dst = &mut dx[ci * h * w + iy * w + lo + kx - pad..ci * h * w + iy * w + hi + kx - pad];
                                    dst.iter_mut().zip(&drow[lo..hi]).for_each(|(v, &dv)| *v += wv * dv);
                                }
                            } else {
                                for ox in lo..hi {
                                    let ix = ox * s + kx - pad;
                                    acc += drow[ox] * plane[iy * w + ix];
                                    if need_dx {
                                        dx[ci * h * w + iy * w + ix] += wv * drow[ox];
                                    }
                                }
                            }
                        }
                        g[wi] += acc;
                    }
                }
            }
        }
        dx
    }
}

/// Layer stack for `classes` semantic classes:
/// enc1 3→16 (s1), enc2 16→32 (s2), enc3 32→32 (s2), dec1 up+32→16,
/// dec2 up+16→16, seg head 16→C (1×1), depth head 16→1 (1×1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub classes: usize,
    pub enc1: Conv,
    pub enc2: Conv,
    pub enc3: Conv,
    pub dec1: Conv,
    pub dec2: Conv,
    pub seg: Conv,
    pub depth: Conv,
}

impl Architecture {
    pub fn new(classes: usize) -> Self {
        let mut offset = 0;
        let mut conv = |cin, cout, k, stride| {
            let c = Conv {
                offset,
                cin,
                cout,
                k,
                stride,
            };
            offset = c.end();
            c
        };
        Architecture {
            classes,
            enc1: conv(3, 16, 3, 1),
            enc2: conv(16, 32, 3, 2),
            enc3: conv(32, 32, 3, 2),
            dec1: conv(32, 16, 3, 1),
            dec2: conv(16, 16, 3, 1),
            seg: conv(16, classes, 1, 1),
            depth: conv(16, 1, 1, 1),
        }
    }

    pub fn layers(&self) -> [Conv; 7] {
        [self.enc1, self.enc2, self.enc3, self.dec1, self.dec2, self.seg, self.depth]
    }

    pub fn param_count(&self) -> usize {
        self.depth.end()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionParams {
    pub arch: Architecture,
    pub data: Vec<f64>,
}

impl PerceptionParams {
    pub fn zeros(classes: usize) -> Self {
        let arch = Architecture::new(classes);
        PerceptionParams {
            data: vec![0.0; arch.param_count()],
            arch,
        }
    }

    /// He-uniform weights, zero biases.
    pub fn init(classes: usize, seed: u64) -> Self {
        let mut p = Self::zeros(classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in p.arch.layers() {
            let bound = (6.0 / (l.cin * l.k * l.k) as f64).sqrt();
            for w in &mut p.data[l.offset..l.bias()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> io::Result<()> {
        // class count first so the reader can rebuild the layout
        let tag = format!("{CHECKPOINT_TAG} classes={}", self.arch.classes);
        checkpoint::write_params(&mut w, &tag, &self.data)
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self, PerceptionError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let line_end = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| CheckpointError::BadHeader {
            expected: CHECKPOINT_TAG.to_string(),
        })?;
        let header = String::from_utf8_lossy(&bytes[..line_end]).to_string();
        let classes = header
            .strip_prefix(CHECKPOINT_TAG)
            .and_then(|rest| rest.trim().strip_prefix("classes="))
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| CheckpointError::BadHeader {
                expected: format!("{CHECKPOINT_TAG} classes=N"),
            })?;
        let arch = Architecture::new(classes);
        let data = checkpoint::read_params(&bytes[..], &header, Some(arch.param_count()))?;
        Ok(PerceptionParams { arch, data })
    }
}

/// Per-pixel class distributions and normalized depth.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelPrediction {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    /// `[c][y][x]`.
    pub probs: Vec<f64>,
    /// Normalized by the sensing range.
    pub depth: Vec<f64>,
}

impl PixelPrediction {
    pub fn labels(&self) -> Vec<LabelId> {
        let n = self.width * self.height;
        (0..n)
            .map(|i| {
                (0..self.classes)
                    .max_by(|&a, &b| self.probs[a * n + i].total_cmp(&self.probs[b * n + i]))
                    .unwrap_or(0) as LabelId
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionSample {
    pub width: usize,
    pub height: usize,
    /// `[3][y][x]` in `[0, 1]`.
    pub rgb: Vec<f64>,
    pub gt_semantic: Vec<LabelId>,
    /// Depth over the sensing range, in `[0, 1]`.
    pub gt_depth: Vec<f64>,
}

impl PerceptionSample {
    pub fn from_render(frame: &RenderOutput) -> Self {
        let n = frame.len();
        let mut rgb = vec![0.0; 3 * n];
        for (i, px) in frame.rgb.iter().enumerate() {
            for c in 0..3 {
                rgb[c * n + i] = px[c];
            }
        }
        PerceptionSample {
            width: frame.width,
            height: frame.height,
            rgb,
            gt_semantic: frame.semantic.clone(),
            gt_depth: frame.depth.iter().map(|d| d / frame.max_range).collect(),
        }
    }

    pub fn write_record<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{FRAME_TAG} {} {}", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.rgb.len() * 8 + self.gt_depth.len() * 10);
        self.rgb.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        self.gt_semantic.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        self.gt_depth.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        w.write_all(&buf)
    }

    pub fn read_record<R: Read>(mut r: R) -> Result<Self, PerceptionError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let bad = |m: &str| PerceptionError::BadRecord(m.to_string());
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not text"))?;
        let dims: Vec<usize> = header
            .strip_prefix(FRAME_TAG)
            .ok_or_else(|| bad("wrong tag"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad dimension")))
            .collect::<Result<_, _>>()?;
        let [width, height] = dims[..] else {
            return Err(bad("expected width and height"));
        };
        let n = width * height;
        let body = &bytes[nl + 1..];
        if body.len() != n * (3 * 8 + 2 + 8) {
            return Err(bad("plane sizes do not match dimensions"));
        }
        let f64s = |b: &[u8]| -> Vec<f64> {
            b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
        };
        let (rgb, rest) = body.split_at(3 * n * 8);
        let (sem, depth) = rest.split_at(n * 2);
        Ok(PerceptionSample {
            width,
            height,
            rgb: f64s(rgb),
            gt_semantic: sem.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect(),
            gt_depth: f64s(depth),
        })
    }
}

pub fn save_dataset(dir: &Path, samples: &[PerceptionSample]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        let f = fs::File::create(dir.join(format!("frame_{i:05}.bin")))?;
        s.write_record(io::BufWriter::new(f))?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<PerceptionSample>, PerceptionError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| PerceptionSample::read_record(io::BufReader::new(fs::File::open(p)?)))
        .collect()
}

/// Renders every reachable pose of every layout, drops frames whose
/// background share exceeds `background_cap`, then keeps a seeded uniform
/// sample of at most `sample_cap` frames.
pub fn build_dataset(
    layouts: &[HouseLayout],
    cfg: &RenderConfig,
    background_cap: f64,
    sample_cap: usize,
    seed: u64,
) -> Result<Vec<PerceptionSample>, PerceptionError> {
    let mut frames: Vec<PerceptionSample> = layouts
        .iter()
        .flat_map(|l| reachable_poses(l).into_iter().map(move |p| render(l, p, cfg)))
        .filter(|f| f.background_fraction() <= background_cap)
        .map(|f| PerceptionSample::from_render(&f))
        .collect();
    if frames.is_empty() {
        return Err(PerceptionError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    frames.shuffle(&mut rng);
    frames.truncate(sample_cap);
    Ok(frames)
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn upsample2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                out[(ch * h2 + y) * w2 + xx] = x[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// Sums each 2×2 block: adjoint of nearest upsampling.
fn upsample2_backward(d: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                out[(ch * h + y / 2) * w + xx / 2] += d[(ch * h2 + y) * w2 + xx];
            }
        }
    }
    out
}

struct Activations {
    e1: Vec<f64>,
    e2: Vec<f64>,
    e3: Vec<f64>,
    u1: Vec<f64>,
    d1: Vec<f64>,
    u2: Vec<f64>,
    d2: Vec<f64>,
    pred: PixelPrediction,
}

fn run(params: &PerceptionParams, rgb: &[f64], width: usize, height: usize) -> Result<Activations, PerceptionError> {
    if width % 4 != 0 || height % 4 != 0 || width == 0 || height == 0 {
        return Err(PerceptionError::BadDims { width, height });
    }
    if rgb.len() != 3 * width * height {
        return Err(PerceptionError::Mismatch(format!("rgb has {} values", rgb.len())));
    }
    let a = &params.arch;
    let p = &params.data;
    let (mut e1, h1, w1) = a.enc1.forward(p, rgb, height, width);
    relu(&mut e1);
    let (mut e2, h2, w2) = a.enc2.forward(p, &e1, h1, w1);
    relu(&mut e2);
    let (mut e3, h3, w3) = a.enc3.forward(p, &e2, h2, w2);
    relu(&mut e3);
    let u1 = upsample2(&e3, a.enc3.cout, h3, w3);
    let (mut d1, hd1, wd1) = a.dec1.forward(p, &u1, 2 * h3, 2 * w3);
    relu(&mut d1);
    let u2 = upsample2(&d1, a.dec1.cout, hd1, wd1);
    let (mut d2, hd2, wd2) = a.dec2.forward(p, &u2, 2 * hd1, 2 * wd1);
    relu(&mut d2);
    let (logits, _, _) = a.seg.forward(p, &d2, hd2, wd2);
    let (depth, _, _) = a.depth.forward(p, &d2, hd2, wd2);

    let n = width * height;
    let c = a.classes;
    let mut probs = logits;
    for i in 0..n {
        let max = (0..c).map(|k| probs[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for k in 0..c {
            let e = (probs[k * n + i] - max).exp();
            probs[k * n + i] = e;
            sum += e;
        }
        for k in 0..c {
            probs[k * n + i] /= sum;
        }
    }
    Ok(Activations {
        e1,
        e2,
        e3,
        u1,
        d1,
        u2,
        d2,
        pred: PixelPrediction {
            width,
            height,
            classes: c,
            probs,
            depth,
        },
    })
}

pub fn perception_forward(params: &PerceptionParams, rgb: &[f64], width: usize, height: usize) -> Result<PixelPrediction, PerceptionError> {
    Ok(run(params, rgb, width, height)?.pred)
}

/// `mean_i(-log p_i[gt_i]) + lambda * mean_i (d_i - d*_i)^2`.
pub fn joint_loss(pred: &PixelPrediction, sample: &PerceptionSample, lambda: f64) -> f64 {
    let n = pred.width * pred.height;
    let ce: f64 = sample
        .gt_semantic
        .iter()
        .enumerate()
        .map(|(i, &l)| -pred.probs[l as usize * n + i].ln())
        .sum();
    let mse: f64 = pred.depth.iter().zip(&sample.gt_depth).map(|(d, t)| (d - t).powi(2)).sum();
    (ce + lambda * mse) / n as f64
}

fn check_sample(params: &PerceptionParams, sample: &PerceptionSample) -> Result<(), PerceptionError> {
    if let Some(&bad) = sample.gt_semantic.iter().find(|&&l| l as usize >= params.arch.classes) {
        return Err(PerceptionError::Mismatch(format!(
            "label {bad} with {} classes",
            params.arch.classes
        )));
    }
    Ok(())
}

/// Loss and its exact gradient with respect to every parameter.
pub fn perception_backward(params: &PerceptionParams, sample: &PerceptionSample, lambda: f64) -> Result<(f64, Vec<f64>), PerceptionError> {
    check_sample(params, sample)?;
    let (w, h) = (sample.width, sample.height);
    let act = run(params, &sample.rgb, w, h)?;
    let loss = joint_loss(&act.pred, sample, lambda);
    let a = &params.arch;
    let p = &params.data;
    let n = w * h;
    let c = a.classes;
    let inv = 1.0 / n as f64;

    let mut d_logits = act.pred.probs.clone();
    for (i, &l) in sample.gt_semantic.iter().enumerate() {
        d_logits[l as usize * n + i] -= 1.0;
    }
    d_logits.iter_mut().for_each(|v| *v *= inv);
    let d_depth: Vec<f64> = act
        .pred
        .depth
        .iter()
        .zip(&sample.gt_depth)
        .map(|(d, t)| 2.0 * lambda * (d - t) * inv)
        .collect();
    debug_assert_eq!(d_logits.len(), c * n);

    let mut g = vec![0.0; p.len()];
    let mut d_d2 = a.seg.backward(p, &mut g, &act.d2, h, w, &d_logits, true);
    let dd = a.depth.backward(p, &mut g, &act.d2, h, w, &d_depth, true);
    d_d2.iter_mut().zip(&dd).for_each(|(x, y)| *x += y);
    mask_relu(&mut d_d2, &act.d2);

    let d_u2 = a.dec2.backward(p, &mut g, &act.u2, h, w, &d_d2, true);
    let (h1, w1) = (h / 2, w / 2);
    let mut d_d1 = upsample2_backward(&d_u2, a.dec1.cout, h1, w1);
    mask_relu(&mut d_d1, &act.d1);
    let d_u1 = a.dec1.backward(p, &mut g, &act.u1, h1, w1, &d_d1, true);
    let (h3, w3) = (h / 4, w / 4);
    let mut d_e3 = upsample2_backward(&d_u1, a.enc3.cout, h3, w3);
    mask_relu(&mut d_e3, &act.e3);
    let mut d_e2 = a.enc3.backward(p, &mut g, &act.e2, h / 2, w / 2, &d_e3, true);
    mask_relu(&mut d_e2, &act.e2);
    let mut d_e1 = a.enc2.backward(p, &mut g, &act.e1, h, w, &d_e2, true);
    mask_relu(&mut d_e1, &act.e1);
    a.enc1.backward(p, &mut g, &sample.rgb, h, w, &d_e1, false);
    Ok((loss, g))
}

fn mask_relu(d: &mut [f64], act: &[f64]) {
    d.iter_mut().zip(act).for_each(|(d, &a)| {
        if a <= 0.0 {
            *d = 0.0
        }
    });
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for PerceptionTrainConfig {
    fn default() -> Self {
        PerceptionTrainConfig {
            epochs: 20,
            lr: 0.01,
            batch_size: 8,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
        }
    }
}

/// Mini-batch SGD over a seeded shuffle each epoch. Returns the parameters
/// and the mean training loss of every epoch.
pub fn train_perception(
    dataset: &[PerceptionSample],
    classes: usize,
    cfg: &PerceptionTrainConfig,
) -> Result<(PerceptionParams, Vec<f64>), PerceptionError> {
    let mut params = PerceptionParams::init(classes, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_da7a);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; params.data.len()];
            for &i in chunk {
                let (l, g) = perception_backward(&params, &dataset[i], cfg.lambda)?;
                total += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let step = cfg.lr / chunk.len() as f64;
            params.data.iter_mut().zip(&grad).for_each(|(p, g)| *p -= step * g);
        }
        curve.push(total / dataset.len().max(1) as f64);
    }
    Ok((params, curve))
}

/// Mean over classes present in `gt` of `|pred ∩ gt| / |pred ∪ gt|`.
pub fn mean_iou(pred: &[LabelId], gt: &[LabelId], classes: usize) -> f64 {
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    let mut present = vec![false; classes];
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p as usize, g as usize);
        if g < classes {
            present[g] = true;
        }
        if p == g {
            if g < classes {
                inter[g] += 1;
                union[g] += 1;
            }
        } else {
            if p < classes {
                union[p] += 1;
            }
            if g < classes {
                union[g] += 1;
            }
        }
    }
    let ious: Vec<f64> = (0..classes)
        .filter(|&c| present[c])
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().sum::<f64>() / ious.len() as f64
}

pub fn depth_rmse(pred: &[f64], gt: &[f64]) -> f64 {
    let mse = pred.iter().zip(gt).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / pred.len().max(1) as f64;
    mse.sqrt()
}

pub fn pixel_accuracy(pred: &[LabelId], gt: &[LabelId]) -> f64 {
    pred.iter().zip(gt).filter(|(p, g)| p == g).count() as f64 / gt.len().max(1) as f64
}

/// Share of the most frequent label across all samples.
pub fn majority_frequency(samples: &[PerceptionSample], classes: usize) -> f64 {
    let mut counts = vec![0usize; classes.max(1)];
    let mut total = 0;
    for s in samples {
        for &l in &s.gt_semantic {
            if (l as usize) < counts.len() {
                counts[l as usize] += 1;
            }
            total += 1;
        }
    }
    counts.into_iter().max().unwrap_or(0) as f64 / total.max(1) as f64
}

/// Replaces a frame's semantics and depth with the network's prediction.
pub fn predict_frame(params: &PerceptionParams, frame: &RenderOutput) -> Result<RenderOutput, PerceptionError> {
    let sample = PerceptionSample::from_render(frame);
    let pred = perception_forward(params, &sample.rgb, frame.width, frame.height)?;
    let max = frame.max_range;
    Ok(RenderOutput {
        semantic: pred.labels(),
        depth: pred.depth.iter().map(|d| (d * max).clamp(1e-6, max)).collect(),
        ..frame.clone()
    })
}

/// Recognition-noise model: each label flips to a uniformly chosen other
/// label with probability `flip_p`; depth gets multiplicative log-normal noise.
pub fn corrupt_observation(frame: &RenderOutput, classes: usize, flip_p: f64, depth_sigma: f64, rng: &mut ChaCha8Rng) -> RenderOutput {
    let mut out = frame.clone();
    if flip_p > 0.0 && classes > 1 {
        for s in &mut out.semantic {
            if rng.random_bool(flip_p) {
                let mut other = rng.random_range(0..classes - 1) as LabelId;
                if other >= *s {
                    other += 1;
                }
                *s = other;
            }
        }
    }
    if depth_sigma > 0.0 {
        for d in &mut out.depth {
            let z: f64 = StandardNormal.sample(rng);
            *d = (*d * (depth_sigma * z).exp()).clamp(f64::MIN_POSITIVE, frame.max_range);
        }
    }
    out
}

/// Count of background pixels in a label map.
pub fn background_pixels(labels: &[LabelId]) -> usize {
    labels.iter().filter(|&&l| l == BACKGROUND).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_pred(classes: usize, n: usize, depth: f64) -> PixelPrediction {
        PixelPrediction {
            width: n,
            height: 1,
            classes,
            probs: vec![1.0 / classes as f64; classes * n],
            depth: vec![depth; n],
        }
    }

    fn sample_1d(labels: Vec<LabelId>, depth: f64) -> PerceptionSample {
        let n = labels.len();
        PerceptionSample {
            width: n,
            height: 1,
            rgb: vec![0.0; 3 * n],
            gt_semantic: labels,
            gt_depth: vec![depth; n],
        }
    }

    #[test]
    fn analytic_losses() {
        let s = sample_1d(vec![0, 3, 9, 2], 0.4);
        let mut perfect = uniform_pred(10, 4, 0.4);
        perfect.probs.iter_mut().for_each(|p| *p = 0.0);
        for (i, &l) in s.gt_semantic.iter().enumerate() {
            perfect.probs[l as usize * 4 + i] = 1.0;
        }
        assert_eq!(joint_loss(&perfect, &s, 0.01), 0.0);
        let u = uniform_pred(10, 4, 0.4);
        assert!((joint_loss(&u, &s, 0.7) - 10f64.ln()).abs() < 1e-9);
        let u = uniform_pred(10, 4, 0.9);
        assert!((joint_loss(&u, &s, 0.01) - 2.305_085).abs() < 1e-6);
        assert!((joint_loss(&u, &s, 0.01) - (10f64.ln() + 0.0025)).abs() < 1e-12);
    }

    #[test]
    fn zero_params_predict_uniform() {
        let p = PerceptionParams::zeros(5);
        let pred = perception_forward(&p, &vec![0.5; 3 * 8 * 8], 8, 8).unwrap();
        assert!(pred.probs.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(pred.depth.iter().all(|&d| d == 0.0));
        assert!(matches!(
            perception_forward(&p, &vec![0.5; 3 * 6 * 8], 8, 6),
            Err(PerceptionError::BadDims { .. })
        ));
    }

    #[test]
    fn probabilities_normalize() {
        let p = PerceptionParams::init(7, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rgb: Vec<f64> = (0..3 * 16 * 12).map(|_| rng.random()).collect();
        let pred = perception_forward(&p, &rgb, 12, 16).unwrap();
        let n = 16 * 12;
        for i in 0..n {
            let s: f64 = (0..7).map(|c| pred.probs[c * n + i]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn iou_cases() {
        let a: Vec<LabelId> = vec![0, 1, 1, 2];
        assert_eq!(mean_iou(&a, &a, 3), 1.0);
        assert_eq!(mean_iou(&[1, 0], &[0, 1], 2), 0.0);
        // 2x2, gt {0,0,1,1}, one pixel of class 0 predicted as 1:
        // class 0 is 1/2 (1 of 2), class 1 is 2/3 (2 of 3)
        let iou = mean_iou(&[0, 1, 1, 1], &[0, 0, 1, 1], 2);
        assert!((iou - 7.0 / 12.0).abs() < 1e-12);
        // a class predicted but absent from gt only enlarges unions
        assert_eq!(mean_iou(&[1, 0], &[0, 0], 2), 0.5);
    }

    #[test]
    fn rmse() {
        assert_eq!(depth_rmse(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert!((depth_rmse(&[0.0, 1.0], &[1.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn corruption_identity_and_full_flip() {
        let frame = RenderOutput {
            width: 4,
            height: 4,
            max_range: 6.4,
            semantic: (0..16).map(|i| (i % 4) as LabelId).collect(),
            depth: (0..16).map(|i| 0.1 + i as f64 * 0.2).collect(),
            rgb: vec![[0.2, 0.3, 0.4]; 16],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(corrupt_observation(&frame, 4, 0.0, 0.0, &mut rng), frame);
        let flipped = corrupt_observation(&frame, 4, 1.0, 0.0, &mut rng);
        assert!(flipped.semantic.iter().zip(&frame.semantic).all(|(a, b)| a != b));
        assert!(flipped.semantic.iter().all(|&l| l < 4));
        let noisy = corrupt_observation(&frame, 4, 0.0, 0.5, &mut rng);
        assert!(noisy.depth.iter().all(|&d| d > 0.0 && d <= 6.4));
        assert_ne!(noisy.depth, frame.depth);
    }

    #[test]
    fn record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = PerceptionSample {
            width: 4,
            height: 2,
            rgb: (0..24).map(|_| rng.random()).collect(),
            gt_semantic: (0..8).map(|i| i as LabelId).collect(),
            gt_depth: (0..8).map(|_| rng.random()).collect(),
        };
        let mut buf = Vec::new();
        s.write_record(&mut buf).unwrap();
        assert_eq!(PerceptionSample::read_record(&buf[..]).unwrap(), s);
        assert!(PerceptionSample::read_record(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = PerceptionParams::init(6, 1);
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        assert!(buf.starts_with(b"gaple-percep v1"));
        assert_eq!(PerceptionParams::read_checkpoint(&buf[..]).unwrap(), p);
    }

    #[test]
    fn lambda_zero_leaves_depth_head_untouched() {
        let p = PerceptionParams::init(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = PerceptionSample {
            width: 8,
            height: 8,
            rgb: (0..192).map(|_| rng.random()).collect(),
            gt_semantic: (0..64).map(|i| (i % 3) as LabelId).collect(),
            gt_depth: (0..64).map(|_| rng.random()).collect(),
        };
        let (_, g) = perception_backward(&p, &s, 0.0).unwrap();
        let d = p.arch.depth;
        assert!(g[d.offset..d.bias() + d.cout].iter().all(|&v| v == 0.0));
    }
}
