//! Seeded samplers for the synthetic 2D pairs and Gaussian measures.

mod gaussian;

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use gaussian::{monge_map, sqrtm_psd, w2 as gaussian_w2_closed, w2_trace_formula, AffineMap, Gaussian};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureKind {
    FourGaussiansSrc,
    FourGaussiansTgt,
    CheckerboardSrc,
    CheckerboardTgt,
    TwoSpiralsSrc,
    TwoSpiralsTgt,
    Gaussian(Gaussian),
}

/// The three source/target pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    FourGaussians,
    Checkerboard,
    TwoSpirals,
}

impl Dataset {
    pub const ALL: [Dataset; 3] = [Dataset::FourGaussians, Dataset::Checkerboard, Dataset::TwoSpirals];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::FourGaussians => "four_gaussians",
            Dataset::Checkerboard => "checkerboard",
            Dataset::TwoSpirals => "two_spirals",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "four_gaussians" | "4_gaussians" | "4gaussians" => Ok(Dataset::FourGaussians),
            "checkerboard" => Ok(Dataset::Checkerboard),
            "two_spirals" | "2_spirals" | "spirals" => Ok(Dataset::TwoSpirals),
            _ => Err(Error::Validation(format!("unknown dataset {s:?}"))),
        }
    }

    pub fn kinds(self) -> (MeasureKind, MeasureKind) {
        match self {
            Dataset::FourGaussians => (MeasureKind::FourGaussiansSrc, MeasureKind::FourGaussiansTgt),
            Dataset::Checkerboard => (MeasureKind::CheckerboardSrc, MeasureKind::CheckerboardTgt),
            Dataset::TwoSpirals => (MeasureKind::TwoSpiralsSrc, MeasureKind::TwoSpiralsTgt),
        }
    }

    /// Cluster centers of the target, used by collapse diagnostics.
    pub fn target_centers(self, geo: &Geometry) -> Option<Vec<[f64; 2]>> {
        match self {
            Dataset::FourGaussians => Some(corners(geo.four_gaussians.tgt_offset)),
            Dataset::Checkerboard => Some(geo.checkerboard.tgt_centers()),
            Dataset::TwoSpirals => None,
        }
    }
}

/// Shape parameters of the synthetic datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub four_gaussians: FourGaussiansGeometry,
    pub checkerboard: CheckerboardGeometry,
    pub two_spirals: SpiralGeometry,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            four_gaussians: FourGaussiansGeometry::default(),
            checkerboard: CheckerboardGeometry::default(),
            two_spirals: SpiralGeometry::default(),
        }
    }
}

/// Components centered at `(±offset, ±offset)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourGaussiansGeometry {
    pub src_offset: f64,
    pub tgt_offset: f64,
    pub sigma: f64,
}

impl Default for FourGaussiansGeometry {
    fn default() -> Self {
        Self {
            src_offset: 4.0,
            tgt_offset: 1.5,
            sigma: 0.4,
        }
    }
}

/// A 3×3 board of square cells: the source fills the four corner cells and
/// the target fills the five remaining ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckerboardGeometry {
    pub cell: f64,
}

impl Default for CheckerboardGeometry {
    fn default() -> Self {
        Self { cell: 1.0 }
    }
}

impl CheckerboardGeometry {
    pub fn src_centers(&self) -> Vec<[f64; 2]> {
        corners(self.cell)
    }

    pub fn tgt_centers(&self) -> Vec<[f64; 2]> {
        let c = self.cell;
        vec![[0.0, 0.0], [c, 0.0], [-c, 0.0], [0.0, c], [0.0, -c]]
    }
}

/// `r = scale · t`, angle `t`, with `t` uniform on `[t_min, t_max]`; the
/// target is the source rotated by π.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralGeometry {
    pub t_min: f64,
    pub t_max: f64,
    pub scale: f64,
}

impl Default for SpiralGeometry {
    fn default() -> Self {
        Self {
            t_min: 0.5,
            t_max: 3.0 * std::f64::consts::PI,
            scale: 1.0 / 3.0,
        }
    }
}

fn corners(o: f64) -> Vec<[f64; 2]> {
    vec![[o, o], [o, -o], [-o, o], [-o, -o]]
}

/// A measure to sample from, with its seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    pub seed: u64,
    #[serde(default)]
    pub geometry: Geometry,
}

impl MeasureSpec {
    pub fn new(kind: MeasureKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            geometry: Geometry::default(),
        }
    }

    pub fn gaussian(g: Gaussian, seed: u64) -> Self {
        Self::new(MeasureKind::Gaussian(g), seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            MeasureKind::Gaussian(g) => g.dim(),
            _ => 2,
        }
    }

    pub fn as_gaussian(&self) -> Result<&Gaussian> {
        match &self.kind {
            MeasureKind::Gaussian(g) => Ok(g),
            other => Err(Error::Contract(format!("{other:?} is not a Gaussian measure"))),
        }
    }

    /// RNG for this spec; the stream depends on the measure itself so that
    /// a source and a target sharing a seed are still independent.
    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let key = serde_json::to_string(&self.kind).expect("measure kinds serialize");
        rng.set_stream(fnv1a(key.as_bytes()));
        rng
    }
}

/// Mixes a base seed with a tag into an independent seed (splitmix64).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Neumaier-compensated sum, accurate to a few ulps for any length.
pub fn compensated_sum(v: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &x in v {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Weighted point cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    points: Tensor,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(points: Tensor, weights: Vec<f64>) -> Result<Self> {
        if points.shape().len() != 2 {
            return Err(Error::Validation(format!("points must be [n, d], got {:?}", points.shape())));
        }
        let n = points.rows();
        if n == 0 || weights.len() != n {
            return Err(Error::Validation(format!("{n} points but {} weights", weights.len())));
        }
        if !points.is_finite() {
            return Err(Error::Validation("non-finite point coordinates".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Validation("weights must be finite and nonnegative".into()));
        }
        let total = compensated_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Tensor) -> Result<Self> {
        let n = points.rows();
        Self::new(points, vec![1.0 / n as f64; n])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) || d == 0 {
            return Err(Error::Validation("ragged or empty point rows".into()));
        }
        Self::uniform(Tensor::matrix(rows.len(), d, rows.concat())?)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&v| (v - w).abs() <= 1e-12)
    }

    /// Same weights, points moved by `f`.
    pub fn map_points(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(self.points.len());
        for i in 0..self.len() {
            let p = f(i, self.point(i));
            if p.len() != d {
                return Err(Error::Shape(format!("map returned {} coordinates, expected {d}", p.len())));
            }
            data.extend(p);
        }
        Self::new(Tensor::matrix(self.len(), d, data)?, self.weights.clone())
    }

    pub fn with_points(&self, points: Tensor) -> Result<Self> {
        Self::new(points, self.weights.clone())
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for (i, &w) in self.weights.iter().enumerate() {
            for (a, x) in m.iter_mut().zip(self.point(i)) {
                *a += w * x;
            }
        }
        m
    }

    /// Weighted covariance (normalized by total mass).
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let m = self.mean();
        let mut c = vec![vec![0.0; d]; d];
        for (i, &w) in self.weights.iter().enumerate() {
            let p = self.point(i);
            for a in 0..d {
                for b in 0..d {
                    c[a][b] += w * (p[a] - m[a]) * (p[b] - m[b]);
                }
            }
        }
        c
    }

    /// CSV with header `x0,x1,...,weight`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("weight".into());
        wr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.point(i).iter().map(|v| format!("{v:e}")).collect();
            rec.push(format!("{:e}", self.weights[i]));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(csv_err)?.clone();
        let d = header.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
            Error::Parse("measure CSV needs at least one coordinate and a weight column".into())
        })?;
        let ok = header.iter().take(d).enumerate().all(|(j, h)| h == format!("x{j}")) && &header[d] == "weight";
        if !ok {
            return Err(Error::Parse(format!("unexpected header {header:?}")));
        }
        let (mut data, mut weights) = (Vec::new(), Vec::new());
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))?;
            if vals.len() != d + 1 {
                return Err(Error::Parse(format!("row {} has {} fields", line + 1, vals.len())));
            }
            data.extend_from_slice(&vals[..d]);
            weights.push(vals[d]);
        }
        if weights.is_empty() {
            return Err(Error::Parse("measure CSV has no rows".into()));
        }
        let total: f64 = weights.iter().sum();
        // text round-trips may lose the last ulp of each weight
        if (total - 1.0).abs() < 1e-9 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Self::new(Tensor::matrix(weights.len(), d, data)?, weights)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

/// Draws `n` uniformly weighted points.
pub fn sample(spec: &MeasureSpec, n: usize) -> Result<EmpiricalMeasure> {
    if n == 0 {
        return Err(Error::Validation("sample size must be at least 1".into()));
    }
    let mut rng = spec.rng();
    let geo = &spec.geometry;
    let data: Vec<f64> = match &spec.kind {
        MeasureKind::Gaussian(g) => {
            g.validate()?;
            let l = g.cholesky()?;
            let d = g.dim();
            let mut out = Vec::with_capacity(n * d);
            for _ in 0..n {
                let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                for a in 0..d {
                    let s: f64 = (0..=a).map(|b| l[(a, b)] * xi[b]).sum();
                    out.push(g.mean[a] + s);
                }
            }
            out
        }
        MeasureKind::FourGaussiansSrc | MeasureKind::FourGaussiansTgt => {
            let fg = &geo.four_gaussians;
            check_positive("sigma", fg.sigma)?;
            let o = if spec.kind == MeasureKind::FourGaussiansSrc {
                fg.src_offset
            } else {
                fg.tgt_offset
            };
            let centers = corners(o);
            let labels = stratified_labels(&mut rng, n, centers.len());
            labels
                .iter()
                .flat_map(|&k| {
                    let c = centers[k];
                    let e0: f64 = rng.sample(StandardNormal);
                    let e1: f64 = rng.sample(StandardNormal);
                    [c[0] + fg.sigma * e0, c[1] + fg.sigma * e1]
                })
                .collect()
        }
        MeasureKind::CheckerboardSrc | MeasureKind::CheckerboardTgt => {
            let cb = &geo.checkerboard;
            check_positive("cell", cb.cell)?;
            let centers = if spec.kind == MeasureKind::CheckerboardSrc {
                cb.src_centers()
            } else {
                cb.tgt_centers()
            };
            let h = cb.cell / 2.0;
            let labels = stratified_labels(&mut rng, n, centers.len());
            labels
                .iter()
                .flat_map(|&k| {
                    let c = centers[k];
                    [c[0] + rng.random_range(-h..h), c[1] + rng.random_range(-h..h)]
                })
                .collect()
        }
        MeasureKind::TwoSpiralsSrc | MeasureKind::TwoSpiralsTgt => {
            let sp = &geo.two_spirals;
            if !(sp.t_max > sp.t_min) {
                return Err(Error::Validation("spiral t_max must exceed t_min".into()));
            }
            check_positive("scale", sp.scale)?;
            let rot = if spec.kind == MeasureKind::TwoSpiralsSrc {
                0.0
            } else {
                std::f64::consts::PI
            };
            (0..n)
                .flat_map(|_| {
                    let t = rng.random_range(sp.t_min..sp.t_max);
                    let r = sp.scale * t;
                    [r * (t + rot).cos(), r * (t + rot).sin()]
                })
                .collect()
        }
    };
    let d = data.len() / n;
    EmpiricalMeasure::uniform(Tensor::matrix(n, d, data)?)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("geometry parameter {name} must be positive, got {v}")))
    }
}

/// Balanced component labels in random order: counts differ by at most one.
fn stratified_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(rng);
    labels
}

/// Exact W2 between two Gaussian specs.
pub fn gaussian_w2(a: &MeasureSpec, b: &MeasureSpec) -> Result<f64> {
    gaussian_w2_closed(a.as_gaussian()?, b.as_gaussian()?)
}

/// Affine Monge map between two Gaussian specs.
pub fn gaussian_monge_map(a: &MeasureSpec, b: &MeasureSpec) -> Result<AffineMap> {
    monge_map(a.as_gaussian()?, b.as_gaussian()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal(seed: u64) -> MeasureSpec {
        MeasureSpec::gaussian(Gaussian::isotropic(&[0.0, 0.0], 1.0), seed)
    }

    #[test]
    fn gaussian_sampling_law_of_large_numbers() {
        let one = sample(&std_normal(0), 1).unwrap();
        assert_eq!(one.len(), 1);
        let big = sample(&std_normal(0), 100_000).unwrap();
        assert!(big.mean().iter().all(|m| m.abs() < 0.02));
    }

    #[test]
    fn sample_moments_within_three_sigma() {
        let g = Gaussian::new(vec![1.0, -2.0], vec![vec![2.0, 0.8], vec![0.8, 1.0]]).unwrap();
        let n = 100_000;
        let m = sample(&MeasureSpec::gaussian(g.clone(), 5), n).unwrap();
        let (mean, cov) = (m.mean(), m.covariance());
        for a in 0..2 {
            assert!((mean[a] - g.mean[a]).abs() < 3.0 * (g.cov[a][a] / n as f64).sqrt());
            for b in 0..2 {
                // Var of a sample covariance entry is (s_aa s_bb + s_ab^2) / n
                let sd = ((g.cov[a][a] * g.cov[b][b] + g.cov[a][b].powi(2)) / n as f64).sqrt();
                assert!((cov[a][b] - g.cov[a][b]).abs() < 3.0 * sd);
            }
        }
    }

    #[test]
    fn checkerboard_source_stays_in_its_squares() {
        let spec = MeasureSpec::new(MeasureKind::CheckerboardSrc, 3);
        let m = sample(&spec, 1024).unwrap();
        for i in 0..m.len() {
            let p = m.point(i);
            let inside = spec
                .geometry
                .checkerboard
                .src_centers()
                .iter()
                .any(|c| (p[0] - c[0]).abs() <= 0.5 && (p[1] - c[1]).abs() <= 0.5);
            assert!(inside, "{p:?}");
        }
    }

    #[test]
    fn same_seed_same_points() {
        for kind in [MeasureKind::FourGaussiansTgt, MeasureKind::TwoSpiralsSrc, MeasureKind::CheckerboardTgt] {
            let spec = MeasureSpec::new(kind, 42);
            assert_eq!(sample(&spec, 300).unwrap(), sample(&spec, 300).unwrap());
            assert_ne!(sample(&spec, 300).unwrap(), sample(&spec.with_seed(43), 300).unwrap());
        }
    }

    #[test]
    fn source_and_target_streams_differ() {
        let a = sample(&MeasureSpec::new(MeasureKind::CheckerboardSrc, 1), 8).unwrap();
        let b = sample(&MeasureSpec::new(MeasureKind::CheckerboardTgt, 1), 8).unwrap();
        let x = |m: &EmpiricalMeasure| m.points().data().iter().map(|v| v - v.round()).collect::<Vec<_>>();
        assert_ne!(x(&a), x(&b));
    }

    #[test]
    fn mixture_components_are_balanced() {
        let m = sample(&MeasureSpec::new(MeasureKind::FourGaussiansSrc, 9), 1026).unwrap();
        let mut counts = [0usize; 4];
        for i in 0..m.len() {
            let p = m.point(i);
            counts[(p[0] > 0.0) as usize * 2 + (p[1] > 0.0) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 256 || c == 257), "{counts:?}");
    }

    #[test]
    fn spiral_target_is_rotated_source_curve() {
        let m = sample(&MeasureSpec::new(MeasureKind::TwoSpiralsTgt, 0), 200).unwrap();
        for i in 0..m.len() {
            let p = m.point(i);
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let t = 3.0 * r;
            // rotated by π: p = −(r cos t, r sin t)
            assert!((p[0] + r * t.cos()).abs() < 1e-12 && (p[1] + r * t.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn non_spd_covariance_is_a_validation_error() {
        let bad = Gaussian {
            mean: vec![0.0, 0.0],
            cov: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
        };
        let err = sample(&MeasureSpec::gaussian(bad, 0), 4).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(sample(&std_normal(0), 0).is_err());
    }

    #[test]
    fn gaussian_w2_rejects_mixtures() {
        let mix = MeasureSpec::new(MeasureKind::FourGaussiansSrc, 0);
        assert!(matches!(gaussian_w2(&mix, &std_normal(0)), Err(Error::Contract(_))));
        let shifted = MeasureSpec::gaussian(Gaussian::isotropic(&[3.0, 4.0], 1.0), 0);
        assert!((gaussian_w2(&std_normal(0), &shifted).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let m = sample(&MeasureSpec::new(MeasureKind::TwoSpiralsSrc, 7), 17).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,weight\n"));
        let back = EmpiricalMeasure::read_csv(&buf[..]).unwrap();
        assert_eq!(back.points(), m.points());
        assert!(back.weights().iter().zip(m.weights()).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(EmpiricalMeasure::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn derive_seed_spreads() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(0, 1));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
