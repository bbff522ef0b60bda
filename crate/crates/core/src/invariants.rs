//! Magnitude and spread of finite Euclidean point clouds.
//!
//! A finite point cloud `X` with the Euclidean metric has a similarity matrix
//! `ζ[i][j] = exp(-t·d(x_i, x_j))`. A *weighting* is any `w` with `ζ·w = 1`,
//! and the *magnitude* `|tX|` is the sum of its entries. The *spread*
//! `E₀(tX)` is the sum of the reciprocal row sums of `ζ`, which needs no
//! linear solve. Both behave like an "effective number of points": they are
//! 1 for a single point and approach `#X` as the points separate.
//!
//! Analytic gradients with respect to the point coordinates are provided for
//! both invariants, since the losses built on top of them are trained by
//! gradient descent.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute Euclidean tolerance under which two points are treated as one.
pub const DEFAULT_DEDUP_TOL: f64 = 1e-9;

/// Largest accepted max-norm residual of `ζ·w − 1`.
pub const WEIGHTING_TOL: f64 = 1e-8;

const JITTER: f64 = 1e-12;

/// A finite set of points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<f64>,
    dim: usize,
}

impl PointCloud {
    /// Builds a cloud from a list of points of equal dimension.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidCloud("cloud must contain at least one point".into()))?;
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidCloud(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords)
    }

    /// Builds a cloud from row-major coordinates.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidCloud("dimension must be positive".into()));
        }
        if coords.is_empty() {
            return Err(Error::InvalidCloud(
                "cloud must contain at least one point".into(),
            ));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidCloud(format!(
                "{} coordinates do not divide into points of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidCloud(format!(
                "point {} has a non-finite component",
                i / dim
            )));
        }
        Ok(Self { coords, dim })
    }

    /// Builds a cloud from the rows of a matrix.
    pub fn from_rows(m: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = m.shape();
        let mut coords = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            coords.extend(m.row(r).iter());
        }
        Self::from_flat(cols, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of points, `#X`.
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Always false; a cloud holds at least one point.
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    /// The same points rescaled by `t`. Note `|t·X|` equals the magnitude of
    /// `X` evaluated at scale `t`.
    pub fn dilate(&self, t: f64) -> Self {
        Self {
            coords: self.coords.iter().map(|c| c * t).collect(),
            dim: self.dim,
        }
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        euclidean(self.point(i), self.point(j))
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    // Four independent partial sums.
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    for (x, y) in ra.iter().zip(rb) {
        acc[0] += (x - y) * (x - y);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])).sqrt()
}

/// Pairwise Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(pub DMatrix<f64>);

/// `exp(-scale · D)` elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub entries: DMatrix<f64>,
    pub scale: f64,
}

/// A solution of `ζ·w = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weighting {
    pub weights: DVector<f64>,
    /// Max-norm of `ζ·w − 1` against the unregularized matrix.
    pub residual: f64,
    /// Set when the solve only succeeded after adding diagonal jitter.
    pub regularized: bool,
}

/// Which cardinality-like invariant to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Invariant {
    Magnitude,
    Spread,
}

pub fn distance_matrix(cloud: &PointCloud) -> DistanceMatrix {
    let n = cloud.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = cloud.distance(i, j);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    DistanceMatrix(d)
}

fn check_scale(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidScale(t))
    }
}

pub fn similarity_matrix(d: &DistanceMatrix, t: f64) -> Result<SimilarityMatrix> {
    check_scale(t)?;
    let n = d.0.nrows();
    let mut entries = DMatrix::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (-t * d.0[(i, j)]).exp();
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(SimilarityMatrix { entries, scale: t })
}

fn residual(zeta: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    (zeta * w)
        .iter()
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max)
}

fn try_solve(m: &DMatrix<f64>, ones: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        let w = chol.solve(ones);
        if w.iter().all(|v| v.is_finite()) {
            return Some(w);
        }
    }
    m.clone().lu().solve(ones)
}

/// Solves `ζ·w = 1`: Cholesky first, then partially pivoted LU, then a
/// single retry with `1e-12` added to the diagonal.
pub fn solve_weighting(zeta: &SimilarityMatrix) -> Result<Weighting> {
    let m = &zeta.entries;
    let n = m.nrows();
    let ones = DVector::from_element(n, 1.0);

    if let Some(w) = try_solve(m, &ones) {
        let r = residual(m, &w);
        if r <= WEIGHTING_TOL {
            return Ok(Weighting {
                weights: w,
                residual: r,
                regularized: false,
            });
        }
    }

    let mut jittered = m.clone();
    for i in 0..n {
        jittered[(i, i)] += JITTER;
    }
    if let Some(w) = try_solve(&jittered, &ones) {
        let r = residual(m, &w);
        if r <= WEIGHTING_TOL {
            return Ok(Weighting {
                weights: w,
                residual: r,
                regularized: true,
            });
        }
    }
    Err(Error::SingularSimilarity { size: n })
}

fn weighting_of(cloud: &PointCloud, t: f64) -> Result<(SimilarityMatrix, Weighting)> {
    let zeta = similarity_matrix(&distance_matrix(cloud), t)?;
    let w = solve_weighting(&zeta)?;
    Ok((zeta, w))
}

/// Magnitude `|tX|`, the sum of the weighting.
pub fn magnitude(cloud: &PointCloud, t: f64) -> Result<f64> {
    let (_, w) = weighting_of(cloud, t)?;
    Ok(w.weights.sum())
}

/// Spread `E₀(tX)`. Defined for every cloud, including ones with repeated
/// points.
pub fn spread(cloud: &PointCloud, t: f64) -> Result<f64> {
    check_scale(t)?;
    let n = cloud.len();
    let mut total = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| (-t * cloud.distance(i, j)).exp()).sum();
        total += 1.0 / row;
    }
    Ok(total)
}

pub fn evaluate(which: Invariant, cloud: &PointCloud, t: f64) -> Result<f64> {
    match which {
        Invariant::Magnitude => magnitude(cloud, t),
        Invariant::Spread => spread(cloud, t),
    }
}

/// Evaluates an invariant along a strictly increasing grid of scales.
///
/// Magnitude failures become `None` rather than aborting the scan, since the
/// magnitude function may be undefined at finitely many scales.
pub fn scale_scan(
    cloud: &PointCloud,
    t_grid: &[f64],
    which: Invariant,
) -> Result<Vec<(f64, Option<f64>)>> {
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("scale grid is empty".into()));
    }
    if let Some(&t) = t_grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidScale(t));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "scale grid must be strictly increasing".into(),
        ));
    }
    Ok(t_grid
        .iter()
        .map(|&t| (t, evaluate(which, cloud, t).ok()))
        .collect())
}

/// Adds `coef · (x_k − x_j) / d_kj` to both endpoints of every pair, where
/// `coef` is the derivative of the invariant with respect to `d_kj`.
fn chain_pairwise(
    cloud: &PointCloud,
    dist: &DistanceMatrix,
    mut coef: impl FnMut(usize, usize) -> f64,
) -> Vec<f64> {
    let n = cloud.len();
    let dim = cloud.dim();
    let mut grad = vec![0.0; n * dim];
    for k in 0..n {
        let xk = cloud.point(k);
        let (head, tail) = grad.split_at_mut((k + 1) * dim);
        let gk = &mut head[k * dim..];
        for (j, gj) in ((k + 1)..n).zip(tail.chunks_exact_mut(dim)) {
            let d = dist.0[(k, j)];
            if d == 0.0 {
                continue;
            }
            let c = coef(k, j) / d;
            for (((a, b), gka), gja) in xk.iter().zip(cloud.point(j)).zip(gk.iter_mut()).zip(gj) {
                let g = c * (a - b);
                *gka += g;
                *gja -= g;
            }
        }
    }
    grad
}

/// Value and gradient (row-major, one row per point) of an invariant, given
/// the cloud's distance matrix.
pub(crate) fn value_and_grad_with_distances(
    which: Invariant,
    cloud: &PointCloud,
    dist: &DistanceMatrix,
    t: f64,
) -> Result<(f64, Vec<f64>)> {
    let zeta = similarity_matrix(dist, t)?;
    match which {
        Invariant::Magnitude => {
            let w = solve_weighting(&zeta)?.weights;
            let zeta = &zeta.entries;
            // d|X| = -wᵀ dζ w, and dζ_kj/dd_kj = -t ζ_kj; each pair appears twice.
            let grad = chain_pairwise(cloud, dist, |k, j| 2.0 * t * w[k] * w[j] * zeta[(k, j)]);
            Ok((w.sum(), grad))
        }
        Invariant::Spread => {
            let zeta = &zeta.entries;
            let inv_sq: Vec<f64> = zeta
                .row_iter()
                .map(|row| {
                    let r = row.sum();
                    1.0 / (r * r)
                })
                .collect();
            let value = inv_sq.iter().map(|v| v.sqrt()).sum();
            // dE₀/dd_kl = (1/r_k² + 1/r_l²) · t · ζ_kl
            let grad = chain_pairwise(cloud, dist, |k, j| {
                (inv_sq[k] + inv_sq[j]) * t * zeta[(k, j)]
            });
            Ok((value, grad))
        }
    }
}

pub(crate) fn value_and_grad(
    which: Invariant,
    cloud: &PointCloud,
    t: f64,
) -> Result<(f64, Vec<f64>)> {
    value_and_grad_with_distances(which, cloud, &distance_matrix(cloud), t)
}

fn unflatten(dim: usize, flat: Vec<f64>) -> Vec<Vec<f64>> {
    flat.chunks_exact(dim).map(<[f64]>::to_vec).collect()
}

/// Gradient of `|tX|` with respect to each point's coordinates.
///
/// Points must be pairwise distinct; deduplicate first.
pub fn magnitude_gradient(cloud: &PointCloud, t: f64) -> Result<Vec<Vec<f64>>> {
    let (_, g) = value_and_grad(Invariant::Magnitude, cloud, t)?;
    Ok(unflatten(cloud.dim(), g))
}

/// Gradient of `E₀(tX)` with respect to each point's coordinates.
pub fn spread_gradient(cloud: &PointCloud, t: f64) -> Result<Vec<Vec<f64>>> {
    let (_, g) = value_and_grad(Invariant::Spread, cloud, t)?;
    Ok(unflatten(cloud.dim(), g))
}

/// Result of collapsing near-coincident points.
#[derive(Debug, Clone, PartialEq)]
pub struct Dedup {
    pub cloud: PointCloud,
    /// Group sizes, one per representative; they sum to the input size.
    pub multiplicities: Vec<usize>,
    /// For each input point, the index of its representative in `cloud`.
    pub representative: Vec<usize>,
}

impl Dedup {
    /// Spreads a gradient on the representatives back onto the input points.
    /// Every member of a group receives the representative's gradient divided
    /// by the group size.
    pub fn distribute(&self, rep_grad: &[f64]) -> Vec<f64> {
        let dim = self.cloud.dim();
        let mut out = Vec::with_capacity(self.representative.len() * dim);
        for &r in &self.representative {
            let m = self.multiplicities[r] as f64;
            out.extend(rep_grad[r * dim..(r + 1) * dim].iter().map(|g| g / m));
        }
        out
    }
}

/// Greedy collapse: each point joins the first representative within `tol`,
/// otherwise it becomes a new representative.
pub fn dedup(cloud: &PointCloud, tol: f64) -> Result<Dedup> {
    dedup_with_distances(cloud, tol).map(|(d, _)| d)
}

/// [`dedup`], also returning the distance matrix of the representatives.
/// Every representative is compared against all earlier ones, so the
/// distances come for free.
pub(crate) fn dedup_with_distances(
    cloud: &PointCloud,
    tol: f64,
) -> Result<(Dedup, DistanceMatrix)> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dedup tolerance must be nonnegative, got {tol}"
        )));
    }
    let dim = cloud.dim();
    let mut reps: Vec<usize> = Vec::new();
    let mut multiplicities = Vec::new();
    let mut representative = Vec::with_capacity(cloud.len());
    let mut coords = Vec::new();
    let mut lower: Vec<f64> = Vec::new();
    let mut row = Vec::new();
    for (i, p) in cloud.points().enumerate() {
        row.clear();
        let mut found = None;
        for (g, &r) in reps.iter().enumerate() {
            let d = euclidean(cloud.point(r), p);
            if d <= tol {
                found = Some(g);
                break;
            }
            row.push(d);
        }
        match found {
            Some(g) => {
                multiplicities[g] += 1;
                representative.push(g);
            }
            None => {
                representative.push(reps.len());
                reps.push(i);
                multiplicities.push(1);
                coords.extend_from_slice(p);
                lower.extend_from_slice(&row);
            }
        }
    }
    let n = reps.len();
    let mut dist = DMatrix::zeros(n, n);
    let mut it = lower.into_iter();
    for i in 0..n {
        for j in 0..i {
            let d = it.next().unwrap_or_default();
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    Ok((
        Dedup {
            cloud: PointCloud::from_flat(dim, coords)?,
            multiplicities,
            representative,
        },
        DistanceMatrix(dist),
    ))
}

/// Largest pairwise distance; 0 for a single point.
pub fn diameter(cloud: &PointCloud) -> f64 {
    let n = cloud.len();
    let mut best = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            best = best.max(cloud.distance(i, j));
        }
    }
    best
}
