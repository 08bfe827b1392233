//! Physical distance versus feature-space distance between views.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gridhouse::{reachable_poses, render, HouseLayout, Pose, RenderConfig};
use crate::state::{downsample, StateError, GRID_CELLS};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("poses {0} and {1} face different headings")]
    HeadingMismatch(Pose, Pose),
    #[error("feature maps differ in size: {0} vs {1}")]
    DimsMismatch(usize, usize),
    #[error("layout needs at least two floor cells")]
    TooFewCells,
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeatureKind {
    /// Depth normalized by range, block-averaged to 10x10.
    #[default]
    Depth10,
    /// Grayscale RGB block-averaged to 10x10.
    Gray10,
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "depth10" => Ok(FeatureKind::Depth10),
            "gray10" => Ok(FeatureKind::Gray10),
            _ => Err(format!("unknown feature extractor `{s}` (expected depth10 or gray10)")),
        }
    }
}

/// Manhattan distance in cells between two same-heading poses.
pub fn physical_distance(p1: Pose, p2: Pose) -> Result<usize, AnalysisError> {
    if p1.heading != p2.heading {
        return Err(AnalysisError::HeadingMismatch(p1, p2));
    }
    Ok(p1.x.abs_diff(p2.x) + p1.y.abs_diff(p2.y))
}

fn unit_mass(f: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let mass: f64 = f.iter().map(|v| v.abs()).sum();
    let scale = if mass > 0.0 { 1.0 / mass } else { 0.0 };
    f.iter().map(move |v| v * scale)
}

/// L1 distance after scaling each map to unit L1 mass; all-zero maps stay zero.
pub fn feature_distance(f1: &[f64], f2: &[f64]) -> Result<f64, AnalysisError> {
    if f1.len() != f2.len() {
        return Err(AnalysisError::DimsMismatch(f1.len(), f2.len()));
    }
    Ok(unit_mass(f1).zip(unit_mass(f2)).map(|(a, b)| (a - b).abs()).sum())
}

pub fn extract(layout: &HouseLayout, pose: Pose, kind: FeatureKind, cfg: &RenderConfig) -> Result<[f64; GRID_CELLS], AnalysisError> {
    let frame = render(layout, pose, cfg);
    let plane: Vec<f64> = match kind {
        FeatureKind::Depth10 => frame.depth.iter().map(|d| d / frame.max_range).collect(),
        FeatureKind::Gray10 => frame.grayscale(),
    };
    Ok(downsample(&plane, frame.width, frame.height)?)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistanceCurve {
    pub bins: Vec<usize>,
    pub mean_feat_dist: Vec<f64>,
    pub count: Vec<usize>,
}

impl DistanceCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,mean_dist,count\n");
        for ((b, m), c) in self.bins.iter().zip(&self.mean_feat_dist).zip(&self.count) {
            let _ = writeln!(s, "{b},{m:.6},{c}");
        }
        s
    }

    /// Spearman correlation of bin means with bin distance.
    pub fn trend(&self) -> f64 {
        let x: Vec<f64> = self.bins.iter().map(|&b| b as f64).collect();
        spearman(&x, &self.mean_feat_dist)
    }
}

/// Mean feature distance per physical distance `1..=max_steps` over
/// same-heading pose pairs, uniformly subsampled to at most `sample_cap`
/// pairs. Empty bins are omitted.
pub fn build_curve(
    layout: &HouseLayout,
    kind: FeatureKind,
    cfg: &RenderConfig,
    max_steps: usize,
    sample_cap: usize,
    seed: u64,
) -> Result<DistanceCurve, AnalysisError> {
    if layout.floor_cells().len() < 2 {
        return Err(AnalysisError::TooFewCells);
    }
    let poses = reachable_poses(layout);
    let features = poses
        .iter()
        .map(|&p| extract(layout, p, kind, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut pairs = Vec::new();
    for i in 0..poses.len() {
        for j in i + 1..poses.len() {
            if let Ok(d) = physical_distance(poses[i], poses[j]) {
                if (1..=max_steps).contains(&d) {
                    pairs.push((i, j, d));
                }
            }
        }
    }
    if pairs.len() > sample_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = sample(&mut rng, pairs.len(), sample_cap).into_vec();
        keep.sort_unstable();
        pairs = keep.into_iter().map(|k| pairs[k]).collect();
    }
    let mut sums = vec![0.0; max_steps + 1];
    let mut counts = vec![0usize; max_steps + 1];
    for (i, j, d) in pairs {
        sums[d] += feature_distance(&features[i], &features[j])?;
        counts[d] += 1;
    }
    let mut curve = DistanceCurve::default();
    for d in 1..=max_steps {
        if counts[d] > 0 {
            curve.bins.push(d);
            curve.mean_feat_dist.push(sums[d] / counts[d] as f64);
            curve.count.push(counts[d]);
        }
    }
    Ok(curve)
}

/// 1-based ranks, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; 0 when either side is constant or shorter than 2.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let (rx, ry) = (ranks(&x[..n]), ranks(&y[..n]));
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
