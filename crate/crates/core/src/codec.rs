//! Strand codec: point space, one-sided frequency space, and PCA coefficients.
//!
//! Strands are real 3D polylines of `L` points, root-first and expressed in
//! their root-local frame. The forward transform is a unitary real-input DFT
//! per coordinate channel (scale `1/sqrt(L)` both ways), keeping the
//! `k = L/2 + 1` non-redundant bands. The PCA basis lives on the flattened
//! band vector of length `6k`, ordered `band -> axis(x,y,z) -> (re, im)`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{shape_err, Error, Result};

pub type Point = Vector3<f64>;

/// Default number of points per strand.
pub const DEFAULT_POINT_COUNT: usize = 200;
/// Default number of retained principal components.
pub const DEFAULT_COMPONENTS: usize = 64;
/// Components `[0, COARSE_COMPONENTS)` form the coarse part of a coefficient vector.
pub const COARSE_COMPONENTS: usize = 10;
/// Strands per incremental PCA batch.
pub const DEFAULT_BATCH_SIZE: usize = 1024;

/// Segments shorter than this are treated as degenerate.
pub const DEGENERATE_SEGMENT: f64 = 1e-12;

/// A hair strand as an ordered polyline, root first.
#[derive(Clone, Debug, PartialEq)]
pub struct Strand {
    points: Vec<Point>,
}

impl Strand {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "strand needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput("strand has non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    /// Builds a strand from a flat `[x0, y0, z0, x1, ...]` slice.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(3) {
            return Err(shape_err(format!("flat strand length {} is not a multiple of 3", coords.len())));
        }
        Self::new(coords.chunks_exact(3).map(|c| Point::new(c[0], c[1], c[2])).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn root(&self) -> Point {
        self.points[0]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    /// Segment vectors `p[j+1] - p[j]`.
    pub fn segments(&self) -> Vec<Point> {
        self.points.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// One-sided spectrum of a strand: `bands[b][axis]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyStrand {
    bands: Vec<[Complex<f64>; 3]>,
}

pub fn band_count(point_count: usize) -> usize {
    point_count / 2 + 1
}

impl FrequencyStrand {
    pub fn new(bands: Vec<[Complex<f64>; 3]>) -> Self {
        Self { bands }
    }

    pub fn bands(&self) -> &[[Complex<f64>; 3]] {
        &self.bands
    }

    pub fn num_bands(&self) -> usize {
        self.bands.len()
    }

    /// Flattened `6k` layout: band-major, then axis, then (re, im).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.bands.len() * 6);
        for band in &self.bands {
            for c in band {
                out.push(c.re);
                out.push(c.im);
            }
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(6) {
            return Err(shape_err(format!("frequency vector length {} is not a multiple of 6", flat.len())));
        }
        let bands = flat
            .chunks_exact(6)
            .map(|c| {
                [
                    Complex::new(c[0], c[1]),
                    Complex::new(c[2], c[3]),
                    Complex::new(c[4], c[5]),
                ]
            })
            .collect();
        Ok(Self { bands })
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                PLANNER.with(|p| {
                    let mut p = p.borrow_mut();
                    if inverse {
                        p.plan_fft_inverse(len)
                    } else {
                        p.plan_fft_forward(len)
                    }
                })
            })
            .clone()
    })
}

/// Unitary one-sided DFT of each coordinate channel.
pub fn dft_strand(strand: &Strand) -> Result<FrequencyStrand> {
    let n = strand.len();
    if strand.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::InvalidInput("non-finite strand coordinates".into()));
    }
    let k = band_count(n);
    let fft = plan(n, false);
    let scale = 1.0 / (n as f64).sqrt();
    let mut bands = vec![[Complex::new(0.0, 0.0); 3]; k];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for axis in 0..3 {
        for (b, p) in buf.iter_mut().zip(&strand.points) {
            *b = Complex::new(p[axis], 0.0);
        }
        fft.process(&mut buf);
        for (band, v) in bands.iter_mut().zip(&buf) {
            band[axis] = v * scale;
        }
        // Real input: DC (and Nyquist for even n) are real up to rounding.
        bands[0][axis].im = 0.0;
        if n.is_multiple_of(2) {
            bands[k - 1][axis].im = 0.0;
        }
    }
    Ok(FrequencyStrand { bands })
}

/// Inverse of [`dft_strand`]. Imaginary parts of DC/Nyquist bands are ignored.
pub fn idft_strand(freq: &FrequencyStrand, point_count: usize) -> Result<Strand> {
    let n = point_count;
    if n < 2 {
        return Err(shape_err(format!("point count {n} < 2")));
    }
    let k = band_count(n);
    if freq.bands.len() != k {
        return Err(shape_err(format!(
            "expected {k} bands for {n} points, got {}",
            freq.bands.len()
        )));
    }
    let ifft = plan(n, true);
    let scale = 1.0 / (n as f64).sqrt();
    let mut points = vec![Point::zeros(); n];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for axis in 0..3 {
        for (b, slot) in buf.iter_mut().enumerate() {
            *slot = if b < k {
                freq.bands[b][axis]
            } else {
                freq.bands[n - b][axis].conj()
            };
        }
        ifft.process(&mut buf);
        for (p, v) in points.iter_mut().zip(&buf) {
            p[axis] = v.re * scale;
        }
    }
    Strand::new(points)
}

/// PCA basis in the flattened frequency domain.
#[derive(Clone, Debug)]
pub struct StrandBasis {
    point_count: usize,
    /// `num_components x 6k`, rows orthonormal.
    components: DMatrix<f64>,
    /// Flattened mean spectrum, length `6k`.
    mean: DVector<f64>,
    /// Per-component variance of the fitting corpus, when known.
    explained_variance: Option<Vec<f64>>,
    /// Point-space images of the mean and of each component (`idft` applied).
    mean_points: DVector<f64>,
    point_components: DMatrix<f64>,
}

impl StrandBasis {
    pub fn new(point_count: usize, components: DMatrix<f64>, mean: DVector<f64>) -> Result<Self> {
        let dim = 6 * band_count(point_count);
        if mean.len() != dim || components.ncols() != dim {
            return Err(shape_err(format!(
                "basis for L={point_count} needs width {dim}, got mean {} / components {}",
                mean.len(),
                components.ncols()
            )));
        }
        if components.nrows() > dim {
            return Err(shape_err("more components than frequency dimensions"));
        }
        let mean_points = DVector::from_vec(idft_flat(mean.as_slice(), point_count)?);
        let mut point_components = DMatrix::zeros(components.nrows(), 3 * point_count);
        for (r, row) in components.row_iter().enumerate() {
            let row: Vec<f64> = row.iter().copied().collect();
            let pts = idft_flat(&row, point_count)?;
            point_components.row_mut(r).copy_from_slice(&pts);
        }
        Ok(Self {
            point_count,
            components,
            mean,
            explained_variance: None,
            mean_points,
            point_components,
        })
    }

    pub fn with_explained_variance(mut self, variance: Vec<f64>) -> Self {
        self.explained_variance = Some(variance);
        self
    }

    pub fn point_count(&self) -> usize {
        self.point_count
    }

    pub fn num_bands(&self) -> usize {
        band_count(self.point_count)
    }

    pub fn num_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn explained_variance(&self) -> Option<&[f64]> {
        self.explained_variance.as_deref()
    }

    /// Flat point-space mean strand, `3L`.
    pub fn mean_points(&self) -> &DVector<f64> {
        &self.mean_points
    }

    /// Point-space image of each component, `num_components x 3L`. Decoding is
    /// `mean_points + point_componentsᵀ γ`.
    pub fn point_components(&self) -> &DMatrix<f64> {
        &self.point_components
    }

    /// Mean strand `idft(S̄)`.
    pub fn mean_strand(&self) -> Strand {
        Strand::from_flat(self.mean_points.as_slice()).expect("mean strand is finite")
    }

    /// Keeps only the first `m` components.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m > self.num_components() {
            return Err(shape_err(format!("cannot truncate {} components to {m}", self.num_components())));
        }
        let comps = self.components.rows(0, m).into_owned();
        let mut b = Self::new(self.point_count, comps, self.mean.clone())?;
        b.explained_variance = self.explained_variance.as_ref().map(|v| v[..m].to_vec());
        Ok(b)
    }
}

fn idft_flat(flat: &[f64], point_count: usize) -> Result<Vec<f64>> {
    Ok(idft_strand(&FrequencyStrand::from_flat(flat)?, point_count)?.to_flat())
}

/// PCA coefficient vector `γ` of one strand.
#[derive(Clone, Debug, PartialEq)]
pub struct StrandCoefficients {
    pub gamma: Vec<f64>,
}

impl StrandCoefficients {
    pub fn new(gamma: Vec<f64>) -> Result<Self> {
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        Ok(Self { gamma })
    }

    pub fn zeros(n: usize) -> Self {
        Self { gamma: vec![0.0; n] }
    }
}

/// `γ = X (dft(s) - S̄)`.
pub fn encode_strand(strand: &Strand, basis: &StrandBasis) -> Result<StrandCoefficients> {
    if strand.len() != basis.point_count {
        return Err(shape_err(format!(
            "strand has {} points, basis expects {}",
            strand.len(),
            basis.point_count
        )));
    }
    let f = DVector::from_vec(dft_strand(strand)?.to_flat());
    let gamma = &basis.components * (f - &basis.mean);
    Ok(StrandCoefficients { gamma: gamma.as_slice().to_vec() })
}

/// `S = iDFT(S̄ + Xᵀγ)`.
pub fn decode_strand(coeffs: &StrandCoefficients, basis: &StrandBasis) -> Result<Strand> {
    if coeffs.gamma.len() != basis.num_components() {
        return Err(shape_err(format!(
            "{} coefficients for a {}-component basis",
            coeffs.gamma.len(),
            basis.num_components()
        )));
    }
    let g = DVector::from_column_slice(&coeffs.gamma);
    let f = &basis.mean + basis.components.tr_mul(&g);
    idft_strand(&FrequencyStrand::from_flat(f.as_slice())?, basis.point_count)
}

/// Point-space decode via the cached component images; equal to
/// [`decode_strand`] up to rounding, and the path used inside the fit loop.
pub fn decode_points(gamma: &[f64], basis: &StrandBasis, out: &mut [f64]) {
    debug_assert_eq!(gamma.len(), basis.num_components());
    debug_assert_eq!(out.len(), 3 * basis.point_count);
    out.copy_from_slice(basis.mean_points.as_slice());
    let pc = &basis.point_components;
    for (c, &g) in gamma.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(pc.row(c).iter()) {
            *o += g * v;
        }
    }
}

/// Unit segment directions with the degenerate-segment rule applied:
/// a zero-length segment inherits the previous direction, and the root
/// segment falls back to `+z` of the root frame.
pub fn segment_directions(points: &[Point]) -> (Vec<Point>, bool) {
    let mut dirs = Vec::with_capacity(points.len().saturating_sub(1));
    let mut degenerate = false;
    let mut prev = Point::z();
    for w in points.windows(2) {
        let v = w[1] - w[0];
        let n = v.norm();
        let b = if n < DEGENERATE_SEGMENT {
            degenerate = true;
            prev
        } else {
            v / n
        };
        dirs.push(b);
        prev = b;
    }
    (dirs, degenerate)
}

/// Per interior point curvature `g_j = |b_j x b_{j+1}|`.
#[derive(Clone, Debug, PartialEq)]
pub struct Curvature {
    pub values: Vec<f64>,
    /// Set when at least one segment hit the degenerate-segment rule.
    pub degenerate: bool,
}

pub fn curvature(strand: &Strand) -> Result<Curvature> {
    if strand.len() < 3 {
        return Err(Error::InvalidInput("curvature needs at least 3 points".into()));
    }
    let (dirs, degenerate) = segment_directions(&strand.points);
    let values = dirs.windows(2).map(|w| w[0].cross(&w[1]).norm().min(1.0)).collect();
    Ok(Curvature { values, degenerate })
}

/// Fits a PCA basis with the default batch size.
pub fn fit_basis(strands: &[Strand], num_components: usize) -> Result<StrandBasis> {
    fit_basis_batched(strands, num_components, DEFAULT_BATCH_SIZE)
}

/// Incremental PCA over the flattened spectra.
///
/// A first pass computes the mean spectrum. The second pass folds each
/// centered batch into a running thin SVD (`[diag(S) Vᵀ; B]`), so memory is
/// `O(d² + batch·d)` regardless of corpus size. The retained rank is capped
/// at the frequency dimension `d`, so no information is dropped between
/// batches; the final basis keeps the top `num_components` right singular
/// vectors with a sign convention that makes the largest-magnitude entry of
/// each row positive.
pub fn fit_basis_batched(strands: &[Strand], num_components: usize, batch_size: usize) -> Result<StrandBasis> {
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    if num_components == 0 || strands.len() < num_components {
        return Err(Error::Underdetermined(format!(
            "{} strands cannot determine {num_components} components",
            strands.len()
        )));
    }
    let point_count = strands[0].len();
    if let Some(bad) = strands.iter().find(|s| s.len() != point_count) {
        return Err(shape_err(format!(
            "mixed strand lengths: {} and {}",
            point_count,
            bad.len()
        )));
    }
    let dim = 6 * band_count(point_count);
    if num_components > dim {
        return Err(shape_err(format!("{num_components} components exceed dimension {dim}")));
    }

    let spectra = |batch: &[Strand]| -> Result<Vec<Vec<f64>>> {
        batch
            .par_iter()
            .map(|s| dft_strand(s).map(|f| f.to_flat()))
            .collect()
    };

    let mut mean = DVector::zeros(dim);
    for batch in strands.chunks(batch_size) {
        for row in spectra(batch)? {
            for (m, v) in mean.iter_mut().zip(&row) {
                *m += v;
            }
        }
    }
    mean /= strands.len() as f64;

    let mut sing: Vec<f64> = Vec::new();
    let mut vt = DMatrix::<f64>::zeros(0, dim);
    for batch in strands.chunks(batch_size) {
        let rows = spectra(batch)?;
        let r = sing.len();
        let mut stacked = DMatrix::<f64>::zeros(r + rows.len(), dim);
        for i in 0..r {
            let scaled = vt.row(i) * sing[i];
            stacked.row_mut(i).copy_from(&scaled);
        }
        for (i, row) in rows.iter().enumerate() {
            for (c, (v, m)) in row.iter().zip(mean.iter()).enumerate() {
                stacked[(r + i, c)] = v - m;
            }
        }
        let svd = stacked.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::State("SVD did not produce V".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let keep = order.len().min(dim);
        sing = order[..keep].iter().map(|&i| svd.singular_values[i]).collect();
        let mut next = DMatrix::zeros(keep, dim);
        for (dst, &src) in order[..keep].iter().enumerate() {
            next.row_mut(dst).copy_from(&v_t.row(src));
        }
        vt = next;
    }

    let mut components = vt.rows(0, num_components).into_owned();
    for mut row in components.row_iter_mut() {
        let (imax, _) = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if row[imax] < 0.0 {
            row.neg_mut();
        }
    }
    let denom = (strands.len().max(2) - 1) as f64;
    let variance = sing[..num_components].iter().map(|s| s * s / denom).collect();
    Ok(StrandBasis::new(point_count, components, mean)?.with_explained_variance(variance))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_strand(rng: &mut ChaCha8Rng, n: usize) -> Strand {
        Strand::new(
            (0..n)
                .map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    /// Direct O(L²) unitary DFT, independent of the FFT path.
    fn naive_dft(s: &Strand) -> Vec<[Complex<f64>; 3]> {
        let n = s.len();
        let k = band_count(n);
        (0..k)
            .map(|b| {
                let mut acc = [Complex::new(0.0, 0.0); 3];
                for (j, p) in s.points().iter().enumerate() {
                    let ang = -2.0 * PI * (b * j) as f64 / n as f64;
                    let w = Complex::new(ang.cos(), ang.sin());
                    for a in 0..3 {
                        acc[a] += w * p[a];
                    }
                }
                acc.map(|c| c / (n as f64).sqrt())
            })
            .collect()
    }

    #[test]
    fn constant_strand_is_dc_only() {
        let s = Strand::new(vec![Point::new(1.0, 2.0, 3.0); 8]).unwrap();
        let f = dft_strand(&s).unwrap();
        assert_eq!(f.num_bands(), 5);
        let scale = 8.0 / 8f64.sqrt();
        for a in 0..3 {
            assert!((f.bands()[0][a].re - (a as f64 + 1.0) * scale).abs() < 1e-12);
        }
        for band in &f.bands()[1..] {
            for c in band {
                assert!(c.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_tone_lands_in_band_one() {
        let n = 8;
        let s = Strand::new(
            (0..n)
                .map(|j| Point::new((2.0 * PI * j as f64 / n as f64).cos(), 0.0, 0.0))
                .collect(),
        )
        .unwrap();
        let f = dft_strand(&s).unwrap();
        for (b, band) in f.bands().iter().enumerate() {
            let e = band[0].norm();
            if b == 1 {
                assert!((e - n as f64 / 2.0 / (n as f64).sqrt()).abs() < 1e-12);
            } else {
                assert!(e < 1e-12, "band {b} has energy {e}");
            }
            assert!(band[1].norm() < 1e-12 && band[2].norm() < 1e-12);
        }
    }

    #[test]
    fn fft_matches_naive_dft_and_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2usize, 3, 7, 8, 200] {
            let s = random_strand(&mut rng, n);
            let f = dft_strand(&s).unwrap();
            let oracle = naive_dft(&s);
            for (b, (x, y)) in f.bands().iter().zip(&oracle).enumerate() {
                for a in 0..3 {
                    let mut y = y[a];
                    if b == 0 || (n % 2 == 0 && b == n / 2) {
                        y.im = 0.0;
                    }
                    assert!((x[a] - y).norm() < 1e-12);
                }
            }
            let back = idft_strand(&f, n).unwrap();
            for (p, q) in back.points().iter().zip(s.points()) {
                assert!((p - q).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn idft_edge_cases() {
        let k = band_count(6);
        let mut bands = vec![[Complex::new(0.0, 0.0); 3]; k];
        bands[0] = [Complex::new(6f64.sqrt(), 0.0), Complex::new(0.0, 0.0), Complex::new(-2.0 * 6f64.sqrt(), 0.0)];
        let s = idft_strand(&FrequencyStrand::new(bands.clone()), 6).unwrap();
        for p in s.points() {
            assert!((p - Point::new(1.0, 0.0, -2.0)).amax() < 1e-12);
        }
        let zero = idft_strand(&FrequencyStrand::new(vec![[Complex::new(0.0, 0.0); 3]; k]), 6).unwrap();
        assert!(zero.points().iter().all(|p| p.amax() == 0.0));
        assert!(matches!(idft_strand(&FrequencyStrand::new(bands), 9), Err(Error::Shape(_))));
    }

    #[test]
    fn strand_rejects_bad_input() {
        assert!(Strand::new(vec![Point::zeros()]).is_err());
        assert!(Strand::new(vec![Point::zeros(), Point::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn curvature_cases() {
        let straight = Strand::new((0..10).map(|j| Point::new(j as f64, 2.0 * j as f64, 0.0)).collect()).unwrap();
        assert!(curvature(&straight).unwrap().values.iter().all(|g| g.abs() < 1e-12));

        let corner = Strand::new(vec![Point::zeros(), Point::x(), Point::new(1.0, 1.0, 0.0)]).unwrap();
        assert!((curvature(&corner).unwrap().values[0] - 1.0).abs() < 1e-12);

        // Regular polygon: every exterior angle equals theta.
        let sides = 9;
        let theta = 2.0 * PI / sides as f64;
        let mut pts = vec![Point::zeros()];
        for j in 0..sides {
            let a = j as f64 * theta;
            pts.push(pts[j] + Point::new(a.cos(), a.sin(), 0.0));
        }
        let g = curvature(&Strand::new(pts).unwrap()).unwrap();
        assert_eq!(g.values.len(), sides - 1);
        for v in g.values {
            assert!((v - theta.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_segments_inherit_direction() {
        let s = Strand::new(vec![Point::zeros(), Point::zeros(), Point::x(), Point::x(), Point::new(2.0, 0.0, 0.0)]).unwrap();
        let (dirs, flagged) = segment_directions(s.points());
        assert!(flagged);
        assert_eq!(dirs[0], Point::z());
        assert_eq!(dirs[2], Point::x());
        let g = curvature(&s).unwrap();
        assert!(g.degenerate);
        assert!(g.values.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    fn subspace_corpus(rng: &mut ChaCha8Rng, n: usize, count: usize, rank: usize) -> Vec<Strand> {
        let base = random_strand(rng, n);
        let dirs: Vec<Strand> = (0..rank).map(|_| random_strand(rng, n)).collect();
        (0..count)
            .map(|_| {
                let mut pts = base.points().to_vec();
                for d in &dirs {
                    let w: f64 = rng.random_range(-1.0..1.0);
                    for (p, q) in pts.iter_mut().zip(d.points()) {
                        *p += q * w;
                    }
                }
                Strand::new(pts).unwrap()
            })
            .collect()
    }

    #[test]
    fn exact_subspace_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let corpus = subspace_corpus(&mut rng, 40, 300, 5);
        let basis = fit_basis_batched(&corpus, 5, 64).unwrap();
        for s in &corpus {
            let r = decode_strand(&encode_strand(s, &basis).unwrap(), &basis).unwrap();
            for (p, q) in r.points().iter().zip(s.points()) {
                assert!((p - q).amax() < 1e-6);
            }
        }
        let gram = basis.components() * basis.components().transpose();
        assert!((gram - DMatrix::identity(5, 5)).amax() < 1e-6);
    }

    #[test]
    fn identical_corpus_encodes_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_strand(&mut rng, 16);
        let corpus = vec![s.clone(); 12];
        let basis = fit_basis(&corpus, 4).unwrap();
        let expected = DVector::from_vec(dft_strand(&s).unwrap().to_flat());
        assert!((basis.mean() - expected).amax() < 1e-12);
        let gram = basis.components() * basis.components().transpose();
        assert!((gram - DMatrix::identity(4, 4)).amax() < 1e-6);
        assert!(encode_strand(&s, &basis).unwrap().gamma.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn fit_basis_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let few: Vec<_> = (0..3).map(|_| random_strand(&mut rng, 10)).collect();
        assert!(matches!(fit_basis(&few, 4), Err(Error::Underdetermined(_))));
        let mut mixed: Vec<_> = (0..6).map(|_| random_strand(&mut rng, 10)).collect();
        mixed.push(random_strand(&mut rng, 11));
        assert!(matches!(fit_basis(&mixed, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn batch_size_does_not_change_the_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let corpus = subspace_corpus(&mut rng, 24, 200, 8);
        let a = fit_basis_batched(&corpus, 8, 200).unwrap();
        let b = fit_basis_batched(&corpus, 8, 17).unwrap();
        // Projectors onto the fitted subspaces agree.
        let pa = a.components().transpose() * a.components();
        let pb = b.components().transpose() * b.components();
        assert!((pa - pb).amax() < 1e-8);
    }

    #[test]
    fn encode_decode_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let corpus = subspace_corpus(&mut rng, 32, 200, 12);
        let basis = fit_basis(&corpus, 6).unwrap();

        let mean = basis.mean_strand();
        assert!(encode_strand(&mean, &basis).unwrap().gamma.iter().all(|g| g.abs() < 1e-10));

        let g0: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = decode_strand(&StrandCoefficients::new(g0.clone()).unwrap(), &basis).unwrap();
        let g1 = encode_strand(&s, &basis).unwrap().gamma;
        for (a, b) in g0.iter().zip(&g1) {
            assert!((a - b).abs() < 1e-8);
        }

        // Outside the span: the frequency residual is orthogonal to every row.
        let outside = random_strand(&mut rng, 32);
        let f = DVector::from_vec(dft_strand(&outside).unwrap().to_flat());
        let g = encode_strand(&outside, &basis).unwrap();
        let proj = decode_strand(&g, &basis).unwrap();
        let fp = DVector::from_vec(dft_strand(&proj).unwrap().to_flat());
        let resid = f - fp;
        for row in basis.components().row_iter() {
            assert!(row.dot(&resid.transpose()).abs() < 1e-8);
        }
        // Idempotence.
        let twice = decode_strand(&encode_strand(&proj, &basis).unwrap(), &basis).unwrap();
        for (p, q) in twice.points().iter().zip(proj.points()) {
            assert!((p - q).amax() < 1e-8);
        }
    }

    #[test]
    fn decode_matches_dense_oracle_and_point_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let corpus = subspace_corpus(&mut rng, 20, 100, 10);
        let basis = fit_basis(&corpus, 7).unwrap();
        let gamma: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let decoded = decode_strand(&StrandCoefficients::new(gamma.clone()).unwrap(), &basis).unwrap();

        // Naive matrix-vector product, then naive inverse DFT.
        let x = basis.components();
        let dim = x.ncols();
        let mut f = vec![0.0; dim];
        for c in 0..dim {
            let mut acc = basis.mean()[c];
            for r in 0..7 {
                acc += x[(r, c)] * gamma[r];
            }
            f[c] = acc;
        }
        let n = 20;
        let k = band_count(n);
        for j in 0..n {
            for a in 0..3 {
                let mut v = 0.0;
                for b in 0..k {
                    let re = f[(b * 3 + a) * 2];
                    let im = f[(b * 3 + a) * 2 + 1];
                    let ang = 2.0 * PI * (b * j) as f64 / n as f64;
                    let w = if b == 0 || (n % 2 == 0 && b == n / 2) { 1.0 } else { 2.0 };
                    let im = if w == 1.0 { 0.0 } else { im };
                    v += w * (re * ang.cos() - im * ang.sin());
                }
                v /= (n as f64).sqrt();
                assert!((decoded.points()[j][a] - v).abs() < 1e-8);
            }
        }

        let mut flat = vec![0.0; 3 * n];
        decode_points(&gamma, &basis, &mut flat);
        for (a, b) in flat.iter().zip(decoded.to_flat()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn decode_is_linear_and_jacobian_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let corpus = subspace_corpus(&mut rng, 16, 80, 6);
        let basis = fit_basis(&corpus, 4).unwrap();
        let dec = |g: &[f64]| decode_strand(&StrandCoefficients::new(g.to_vec()).unwrap(), &basis).unwrap().to_flat();
        let d0 = dec(&[0.0; 4]);
        let d1 = dec(&[0.3, 0.0, 0.0, 0.0]);
        let d2 = dec(&[0.6, 0.0, 0.0, 0.0]);
        for i in 0..d0.len() {
            assert!(((d2[i] - d0[i]) - 2.0 * (d1[i] - d0[i])).abs() < 1e-10);
        }
        let g: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 1e-5;
        for c in 0..4 {
            let mut gp = g.clone();
            gp[c] += h;
            let mut gm = g.clone();
            gm[c] -= h;
            let (p, m) = (dec(&gp), dec(&gm));
            let col = basis.point_components().row(c);
            for i in 0..p.len() {
                let fd = (p[i] - m[i]) / (2.0 * h);
                let an = col[i];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn shape_errors_on_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let corpus: Vec<_> = (0..10).map(|_| random_strand(&mut rng, 12)).collect();
        let basis = fit_basis(&corpus, 3).unwrap();
        assert!(matches!(encode_strand(&random_strand(&mut rng, 13), &basis), Err(Error::Shape(_))));
        assert!(matches!(decode_strand(&StrandCoefficients::zeros(4), &basis), Err(Error::Shape(_))));
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn dft_roundtrip(coords in proptest::collection::vec(-100.0f64..100.0, 6..600)) {
                let n = coords.len() / 3 * 3;
                let s = Strand::from_flat(&coords[..n]).unwrap();
                let back = idft_strand(&dft_strand(&s).unwrap(), s.len()).unwrap();
                for (p, q) in back.points().iter().zip(s.points()) {
                    prop_assert!((p - q).amax() < 1e-9);
                }
            }

            #[test]
            fn curvature_in_unit_range(coords in proptest::collection::vec(-1.0f64..1.0, 9..90)) {
                let n = coords.len() / 3 * 3;
                let s = Strand::from_flat(&coords[..n]).unwrap();
                for g in curvature(&s).unwrap().values {
                    prop_assert!((0.0..=1.0).contains(&g));
                }
            }
        }
    }
}
