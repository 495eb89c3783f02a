//! Node subset sampling and node-wise signal transformations.
//!
//! A transformation run works on centered unit-norm clouds, so the parameter
//! ranges (±0.2 for translation and shear components, ±5° for rotation
//! angles) are meaningful relative to the coordinate scale.

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

pub const TRANSLATION_RANGE: f64 = 0.2;
pub const SHEAR_RANGE: f64 = 0.2;
/// ±5 degrees, stored in radians.
pub const ROTATION_RANGE_RAD: f64 = 5.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Translation,
    Rotation,
    Shearing,
}

impl TransformKind {
    pub const ALL: [TransformKind; 3] =
        [TransformKind::Translation, TransformKind::Rotation, TransformKind::Shearing];

    /// Parameter row width P.
    pub fn param_count(self) -> usize {
        match self {
            TransformKind::Translation | TransformKind::Rotation => 3,
            TransformKind::Shearing => 6,
        }
    }

    pub fn param_range(self) -> f64 {
        match self {
            TransformKind::Translation => TRANSLATION_RANGE,
            TransformKind::Rotation => ROTATION_RANGE_RAD,
            TransformKind::Shearing => SHEAR_RANGE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Translation => "translation",
            TransformKind::Rotation => "rotation",
            TransformKind::Shearing => "shearing",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(TransformKind::Translation),
            "rotation" => Ok(TransformKind::Rotation),
            "shearing" => Ok(TransformKind::Shearing),
            other => Err(Error::InvalidArgument(format!("unknown transform kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleMode {
    Global,
    Local,
}

impl fmt::Display for SampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleMode::Global => "global",
            SampleMode::Local => "local",
        })
    }
}

impl FromStr for SampleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SampleMode::Global),
            "local" => Ok(SampleMode::Local),
            other => Err(Error::InvalidArgument(format!("unknown sampling mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Isotropic,
    Anisotropic,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Isotropic => "iso",
            Strategy::Anisotropic => "aniso",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iso" | "isotropic" => Ok(Strategy::Isotropic),
            "aniso" | "anisotropic" => Ok(Strategy::Anisotropic),
            other => Err(Error::InvalidArgument(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Node subset selected for transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMask {
    pub selected: Vec<usize>,
    pub mode: SampleMode,
    pub rate: f64,
}

impl SampleMask {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn row_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.selected {
            mask[i] = true;
        }
        mask
    }
}

/// Node-wise transformation: one parameter row per selected node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTransform<F> {
    pub kind: TransformKind,
    pub strategy: Strategy,
    /// |selected| × P, row-major, aligned with `mask.selected`.
    pub params: Vec<F>,
    pub mask: SampleMask,
}

/// Sample `floor(rate·N)` (min 1) nodes, globally at random or as a seed
/// node's Euclidean nearest-neighbor ball (seed included in the budget).
pub fn sample_subset<F: Scalar>(
    cloud: &PointCloud<F>,
    mode: SampleMode,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SampleMask> {
    let n = cloud.num_points();
    if n == 0 {
        return Err(Error::InvalidArgument("sample_subset: empty cloud".into()));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("sample rate {rate} outside (0,1]")));
    }
    let count = ((rate * n as f64).floor() as usize).clamp(1, n);
    let selected = match mode {
        SampleMode::Global => {
            // partial Fisher-Yates
            let mut pool: Vec<usize> = (0..n).collect();
            for i in 0..count {
                let j = rng.gen_range(i..n);
                pool.swap(i, j);
            }
            let mut sel = pool[..count].to_vec();
            sel.sort_unstable();
            sel
        }
        SampleMode::Local => {
            let seed = rng.gen_range(0..n);
            let sp = cloud.point(seed);
            let mut by_dist: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != seed)
                .map(|j| {
                    let p = cloud.point(j);
                    let d2: f64 = (0..3).map(|d| (p[d] - sp[d]).as_f64().powi(2)).sum();
                    (d2, j)
                })
                .collect();
            by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut sel: Vec<usize> = std::iter::once(seed)
                .chain(by_dist[..count - 1].iter().map(|&(_, j)| j))
                .collect();
            sel.sort_unstable();
            sel
        }
    };
    Ok(SampleMask { selected, mode, rate })
}

/// Draw transformation parameters for the masked nodes, uniform over the
/// kind's range; isotropic repeats a single draw for every node.
pub fn sample_transform<F: Scalar>(
    kind: TransformKind,
    strategy: Strategy,
    mask: SampleMask,
    rng: &mut ChaCha8Rng,
) -> NodeTransform<F> {
    let p = kind.param_count();
    let range = kind.param_range();
    let rows = mask.len();
    let mut params = Vec::with_capacity(rows * p);
    match strategy {
        Strategy::Isotropic => {
            let row: Vec<F> = (0..p).map(|_| F::of(rng.gen_range(-range..range))).collect();
            for _ in 0..rows {
                params.extend_from_slice(&row);
            }
        }
        Strategy::Anisotropic => {
            for _ in 0..rows * p {
                params.push(F::of(rng.gen_range(-range..range)));
            }
        }
    }
    NodeTransform { kind, strategy, params, mask }
}

/// Intrinsic rotation R = R_z(γ)·R_y(β)·R_x(α), row-major 3×3.
pub fn rotation_matrix(alpha: f64, beta: f64, gamma: f64) -> [f64; 9] {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    [
        cg * cb,
        cg * sb * sa - sg * ca,
        cg * sb * ca + sg * sa,
        sg * cb,
        sg * sb * sa + cg * ca,
        sg * sb * ca - cg * sa,
        -sb,
        cb * sa,
        cb * ca,
    ]
}

/// Unit-diagonal shear with off-diagonals (s_xy, s_xz, s_yx, s_yz, s_zx,
/// s_zy) in row-major order.
pub fn shear_matrix(s: &[f64]) -> [f64; 9] {
    [1.0, s[0], s[1], s[2], 1.0, s[3], s[4], s[5], 1.0]
}

fn apply_matrix<F: Scalar>(coords: &mut [F], i: usize, m: &[f64; 9]) {
    let x = coords[i * 3].as_f64();
    let y = coords[i * 3 + 1].as_f64();
    let z = coords[i * 3 + 2].as_f64();
    coords[i * 3] = F::of(m[0] * x + m[1] * y + m[2] * z);
    coords[i * 3 + 1] = F::of(m[3] * x + m[4] * y + m[5] * z);
    coords[i * 3 + 2] = F::of(m[6] * x + m[7] * y + m[8] * z);
}

/// Map each selected node by its own parameter row; unselected nodes are
/// untouched.
pub fn apply_transform<F: Scalar>(cloud: &PointCloud<F>, t: &NodeTransform<F>) -> Result<PointCloud<F>> {
    let n = cloud.num_points();
    let p = t.kind.param_count();
    if t.params.len() != t.mask.len() * p {
        return Err(Error::InvalidArgument(format!(
            "transform has {} param rows for {} selected nodes",
            t.params.len() / p,
            t.mask.len()
        )));
    }
    if t.mask.selected.iter().any(|&i| i >= n) {
        return Err(Error::InvalidArgument("mask index out of range for cloud".into()));
    }
    let mut out = cloud.clone();
    for (row, &i) in t.mask.selected.iter().enumerate() {
        let params = &t.params[row * p..(row + 1) * p];
        match t.kind {
            TransformKind::Translation => {
                for d in 0..3 {
                    out.coords[i * 3 + d] = out.coords[i * 3 + d] + params[d];
                }
            }
            TransformKind::Rotation => {
                let m = rotation_matrix(params[0].as_f64(), params[1].as_f64(), params[2].as_f64());
                apply_matrix(&mut out.coords, i, &m);
            }
            TransformKind::Shearing => {
                let s: Vec<f64> = params.iter().map(|v| v.as_f64()).collect();
                let m = shear_matrix(&s);
                apply_matrix(&mut out.coords, i, &m);
            }
        }
    }
    Ok(out)
}

/// N×P regression targets (selected rows carry their parameters, others
/// zero) plus the per-row loss mask.
pub fn target_params<F: Scalar>(t: &NodeTransform<F>, n: usize) -> (Tensor<F>, Vec<bool>) {
    let p = t.kind.param_count();
    let mut values = vec![F::zero(); n * p];
    for (row, &i) in t.mask.selected.iter().enumerate() {
        values[i * p..(i + 1) * p].copy_from_slice(&t.params[row * p..(row + 1) * p]);
    }
    (Tensor::new(vec![n, p], values).unwrap(), t.mask.row_mask(n))
}
