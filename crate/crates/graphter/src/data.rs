//! Synthetic labeled shapes, normalization and point-cloud file formats.
//!
//! Four part-labeled primitives stand in for large mesh datasets so both
//! downstream tasks (classification and per-node segmentation) stay testable
//! at desk scale.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Torus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Cylinder, ShapeKind::Torus];

    pub fn num_parts(self) -> usize {
        match self {
            ShapeKind::Sphere => 2,
            ShapeKind::Cube => 6,
            ShapeKind::Cylinder => 3,
            ShapeKind::Torus => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeKind::Sphere),
            "cube" => Ok(ShapeKind::Cube),
            "cylinder" => Ok(ShapeKind::Cylinder),
            "torus" => Ok(ShapeKind::Torus),
            other => Err(Error::InvalidArgument(format!("unknown shape kind '{other}'"))),
        }
    }
}

/// N×3 node signals with optional per-node part labels and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<F> {
    pub coords: Vec<F>, // row-major N×3
    pub part_labels: Option<Vec<usize>>,
    pub class_label: Option<usize>,
    pub id: String,
}

impl<F: Scalar> PointCloud<F> {
    pub fn num_points(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn point(&self, i: usize) -> [F; 3] {
        [self.coords[i * 3], self.coords[i * 3 + 1], self.coords[i * 3 + 2]]
    }

    pub fn cast<G: Scalar>(&self) -> PointCloud<G> {
        PointCloud {
            coords: self.coords.iter().map(|v| G::of(v.as_f64())).collect(),
            part_labels: self.part_labels.clone(),
            class_label: self.class_label,
            id: self.id.clone(),
        }
    }
}

/// Uniform surface samples with geometry-derived part labels, radius-1 scale,
/// no noise, no normalization.
pub fn sample_surface<F: Scalar>(
    kind: ShapeKind,
    n_points: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<F>, Vec<usize>) {
    let mut coords = Vec::with_capacity(n_points * 3);
    let mut labels = Vec::with_capacity(n_points);
    match kind {
        ShapeKind::Sphere => {
            let normal = Normal::new(0.0f64, 1.0).unwrap();
            for _ in 0..n_points {
                let mut v = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm < 1e-12 {
                    v = [1.0, 0.0, 0.0];
                }
                let p = [v[0] / norm, v[1] / norm, v[2] / norm];
                labels.push(if p[2] >= 0.0 { 0 } else { 1 });
                coords.extend(p.iter().map(|&x| F::of(x)));
            }
        }
        ShapeKind::Cube => {
            // faces: 0 ±x, 2 ±y, 4 ±z; unit half-width
            for _ in 0..n_points {
                let face = rng.gen_range(0..6usize);
                let u = rng.gen_range(-1.0..1.0);
                let v = rng.gen_range(-1.0..1.0);
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                let p = match face / 2 {
                    0 => [s, u, v],
                    1 => [u, s, v],
                    _ => [u, v, s],
                };
                labels.push(face);
                coords.extend(p.iter().map(|&x: &f64| F::of(x)));
            }
        }
        ShapeKind::Cylinder => {
            // radius 1, z in [-1, 1]; label 0 side, 1 top cap, 2 bottom cap
            let side_area = 2.0 * std::f64::consts::TAU; // 2πr·h with r=1, h=2
            let cap_area = std::f64::consts::PI;
            let total = side_area + 2.0 * cap_area;
            for _ in 0..n_points {
                let pick = rng.gen_range(0.0..total);
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                if pick < side_area {
                    let z = rng.gen_range(-1.0..1.0);
                    labels.push(0);
                    coords.extend([theta.cos(), theta.sin(), z].iter().map(|&x| F::of(x)));
                } else {
                    let r = rng.gen_range(0.0f64..1.0).sqrt();
                    let top = pick < side_area + cap_area;
                    labels.push(if top { 1 } else { 2 });
                    let z = if top { 1.0 } else { -1.0 };
                    coords.extend([r * theta.cos(), r * theta.sin(), z].iter().map(|&x| F::of(x)));
                }
            }
        }
        ShapeKind::Torus => {
            // major radius 1, minor 0.4; rejection keeps the sampling uniform
            let major = 1.0;
            let minor = 0.4;
            for _ in 0..n_points {
                loop {
                    let u = rng.gen_range(0.0..std::f64::consts::TAU);
                    let v = rng.gen_range(0.0..std::f64::consts::TAU);
                    let accept = (major + minor * v.cos()) / (major + minor);
                    if rng.gen::<f64>() < accept {
                        let p = [
                            (major + minor * v.cos()) * u.cos(),
                            (major + minor * v.cos()) * u.sin(),
                            minor * v.sin(),
                        ];
                        labels.push(if p[0] >= 0.0 { 0 } else { 1 });
                        coords.extend(p.iter().map(|&x| F::of(x)));
                        break;
                    }
                }
            }
        }
    }
    (coords, labels)
}

/// Surface samples + Gaussian noise, centered and scaled to unit max norm.
pub fn generate_shape<F: Scalar>(
    kind: ShapeKind,
    n_points: usize,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PointCloud<F>> {
    if n_points < 16 {
        return Err(Error::InvalidArgument(format!("n_points {n_points} < 16")));
    }
    let (mut coords, labels) = sample_surface::<F>(kind, n_points, rng);
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).unwrap();
        for c in coords.iter_mut() {
            *c = *c + F::of(normal.sample(rng));
        }
    }
    let mut cloud = PointCloud { coords, part_labels: Some(labels), class_label: None, id: String::new() };
    normalize(&mut cloud)?;
    Ok(cloud)
}

/// Center at the origin and scale so the farthest point has norm 1.
pub fn normalize<F: Scalar>(cloud: &mut PointCloud<F>) -> Result<()> {
    let n = cloud.num_points();
    if n == 0 {
        return Err(Error::InvalidArgument("normalize: empty cloud".into()));
    }
    let mut centroid = [F::zero(); 3];
    for i in 0..n {
        for d in 0..3 {
            centroid[d] = centroid[d] + cloud.coords[i * 3 + d];
        }
    }
    let inv_n = F::of(1.0 / n as f64);
    for c in centroid.iter_mut() {
        *c = *c * inv_n;
    }
    let mut max_norm2 = F::zero();
    for i in 0..n {
        let mut d2 = F::zero();
        for d in 0..3 {
            let x = cloud.coords[i * 3 + d] - centroid[d];
            d2 = d2 + x * x;
        }
        if d2 > max_norm2 {
            max_norm2 = d2;
        }
    }
    let max_norm = max_norm2.sqrt();
    if max_norm <= F::zero() {
        return Err(Error::InvalidArgument("normalize: degenerate cloud (all points identical)".into()));
    }
    let inv = F::one() / max_norm;
    for i in 0..n {
        for d in 0..3 {
            cloud.coords[i * 3 + d] = (cloud.coords[i * 3 + d] - centroid[d]) * inv;
        }
    }
    Ok(())
}

// ── Dataset ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset<F> {
    pub clouds: Vec<PointCloud<F>>,
    pub splits: Vec<Split>,
    pub class_names: Vec<String>,
}

impl<F: Scalar> Dataset<F> {
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub classes: Vec<ShapeKind>,
    pub per_class: usize,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: ShapeKind::ALL.to_vec(),
            per_class: 16,
            n_points: 256,
            noise_sigma: 0.01,
            split_fraction: 0.75,
            seed: 0,
        }
    }
}

/// Deterministic stratified dataset: per-cloud rng streams derived from the
/// seed, train split first `floor(frac·count)` clouds of each class.
pub fn make_dataset<F: Scalar>(config: &DatasetConfig) -> Result<Dataset<F>> {
    if !(0.0..1.0).contains(&config.split_fraction) || config.split_fraction <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "split fraction {} outside (0,1)",
            config.split_fraction
        )));
    }
    if config.per_class < 2 {
        return Err(Error::InvalidArgument("per-class count must be >= 2".into()));
    }
    let train_per_class = ((config.split_fraction * config.per_class as f64).floor() as usize).max(1);
    let mut clouds = Vec::new();
    let mut splits = Vec::new();
    for (ci, &kind) in config.classes.iter().enumerate() {
        for s in 0..config.per_class {
            let stream = config.seed
                ^ (0x9e37_79b9_7f4a_7c15u64
                    .wrapping_mul(ci as u64 + 1)
                    .wrapping_add(0x85eb_ca6bu64.wrapping_mul(s as u64 + 1)));
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let mut cloud = generate_shape::<F>(kind, config.n_points, config.noise_sigma, &mut rng)?;
            cloud.class_label = Some(ci);
            cloud.id = format!("{}_{:04}", kind, s);
            clouds.push(cloud);
            splits.push(if s < train_per_class { Split::Train } else { Split::Test });
        }
    }
    Ok(Dataset {
        clouds,
        splits,
        class_names: config.classes.iter().map(|k| k.to_string()).collect(),
    })
}

// ── File formats ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    XyzText,
    Off,
}

impl FromStr for CloudFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" | "xyz-text" => Ok(CloudFormat::XyzText),
            "off" => Ok(CloudFormat::Off),
            other => Err(Error::InvalidArgument(format!("unknown format '{other}'"))),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, message: message.into() }
}

pub fn save_cloud<F: Scalar>(cloud: &PointCloud<F>, path: &Path, format: CloudFormat) -> Result<()> {
    let mut out = String::new();
    let n = cloud.num_points();
    match format {
        CloudFormat::XyzText => {
            out.push_str(&format!("{n}\n"));
            for i in 0..n {
                let p = cloud.point(i);
                out.push_str(&format!("{:.12e} {:.12e} {:.12e}", p[0].as_f64(), p[1].as_f64(), p[2].as_f64()));
                if let Some(labels) = &cloud.part_labels {
                    out.push_str(&format!(" {}", labels[i]));
                }
                out.push('\n');
            }
        }
        CloudFormat::Off => {
            out.push_str("OFF\n");
            out.push_str(&format!("{n} 0 0\n"));
            for i in 0..n {
                let p = cloud.point(i);
                out.push_str(&format!(
                    "{:.12e} {:.12e} {:.12e}\n",
                    p[0].as_f64(),
                    p[1].as_f64(),
                    p[2].as_f64()
                ));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_cloud<F: Scalar>(path: &Path, format: CloudFormat) -> Result<PointCloud<F>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match format {
        CloudFormat::XyzText => {
            let (ln, header) =
                lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
            let n: usize = header
                .trim()
                .parse()
                .map_err(|_| parse_err(path, ln + 1, format!("bad point count '{header}'")))?;
            let mut coords = Vec::with_capacity(n * 3);
            let mut labels = Vec::new();
            for _ in 0..n {
                let (ln, row) = lines
                    .next()
                    .ok_or_else(|| parse_err(path, n + 1, "unexpected end of file"))?;
                let fields: Vec<&str> = row.split_whitespace().collect();
                if fields.len() != 3 && fields.len() != 4 {
                    return Err(parse_err(path, ln + 1, format!("expected 3 or 4 fields, got {}", fields.len())));
                }
                for f in &fields[..3] {
                    let v: f64 = f
                        .parse()
                        .map_err(|_| parse_err(path, ln + 1, format!("bad coordinate '{f}'")))?;
                    coords.push(F::of(v));
                }
                if fields.len() == 4 {
                    let l: usize = fields[3]
                        .parse()
                        .map_err(|_| parse_err(path, ln + 1, format!("bad part label '{}'", fields[3])))?;
                    labels.push(l);
                }
            }
            if !labels.is_empty() && labels.len() != n {
                return Err(parse_err(path, n + 1, "part labels present on only some rows"));
            }
            Ok(PointCloud {
                coords,
                part_labels: if labels.is_empty() { None } else { Some(labels) },
                class_label: None,
                id,
            })
        }
        CloudFormat::Off => {
            let (ln, magic) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
            if magic.trim() != "OFF" {
                return Err(parse_err(path, ln + 1, format!("expected OFF magic, got '{magic}'")));
            }
            let (ln, counts) =
                lines.next().ok_or_else(|| parse_err(path, 2, "missing count line"))?;
            let fields: Vec<&str> = counts.split_whitespace().collect();
            if fields.is_empty() {
                return Err(parse_err(path, ln + 1, "bad count line"));
            }
            let n: usize = fields[0]
                .parse()
                .map_err(|_| parse_err(path, ln + 1, format!("bad vertex count '{}'", fields[0])))?;
            let mut coords = Vec::with_capacity(n * 3);
            for _ in 0..n {
                let (ln, row) =
                    lines.next().ok_or_else(|| parse_err(path, n + 2, "unexpected end of file"))?;
                let fields: Vec<&str> = row.split_whitespace().collect();
                if fields.len() < 3 {
                    return Err(parse_err(path, ln + 1, "vertex row needs 3 coordinates"));
                }
                for f in &fields[..3] {
                    let v: f64 = f
                        .parse()
                        .map_err(|_| parse_err(path, ln + 1, format!("bad coordinate '{f}'")))?;
                    coords.push(F::of(v));
                }
            }
            // faces ignored
            Ok(PointCloud { coords, part_labels: None, class_label: None, id })
        }
    }
}
