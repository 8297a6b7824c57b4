//! Undirected graphs, their normalized Laplacians and GCN propagation
//! operators, small-graph spectral utilities, and the conversion between
//! grayscale images and lattice patch graphs.
//!
//! Isolated nodes use the pseudo-inverse degree convention: `D^{-1/2}` is
//! zero on them, so their Laplacian row is the unit vector `e_i`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{invalid, shape_err, Error, Result};

/// Largest graph for which a dense eigendecomposition is attempted.
pub const EXACT_PATH_CAP: usize = 2000;

/// Compressed sparse row matrix with `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));

        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &triplets)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates over the stored `(col, value)` pairs of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                out[[i, j]] += v;
            }
        }
        out
    }

    pub fn matvec(&self, x: ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(x.len(), self.n_cols);
        Array1::from_shape_fn(self.n_rows, |i| self.row(i).map(|(j, v)| v * x[j]).sum())
    }

    /// Sparse-times-dense product `self · rhs`.
    pub fn matmul(&self, rhs: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(rhs.nrows(), self.n_cols, "sparse matmul inner dimension");
        let mut out = Array2::zeros((self.n_rows, rhs.ncols()));
        for (i, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for (j, v) in self.row(i) {
                out_row.scaled_add(v, &rhs.row(j));
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|i| self.row(i).all(|(j, v)| (self.get(j, i) - v).abs() <= tol))
    }

    /// Row sums of the stored values.
    pub fn row_sums(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.n_rows, |i| self.row(i).map(|(_, v)| v).sum())
    }
}

/// How [`Graph::from_edges`] treats `(u, u)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelfLoops {
    #[default]
    Reject,
    Drop,
}

/// Simple undirected, unweighted graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: SparseMatrix,
    degree: Vec<usize>,
}

impl Graph {
    /// Builds a graph on `n` nodes. Edges are stored once as `(min, max)`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], self_loops: SelfLoops) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            for idx in [u, v] {
                if idx >= n {
                    return Err(Error::NodeOutOfRange { index: idx, n });
                }
            }
            if u == v {
                match self_loops {
                    SelfLoops::Reject => return Err(Error::SelfLoop(u)),
                    SelfLoops::Drop => continue,
                }
            }
            set.insert((u.min(v), u.max(v)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut degree = vec![0usize; n];
        let mut triplets = Vec::with_capacity(2 * edges.len());
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
        Ok(Self {
            n,
            adjacency: SparseMatrix::from_triplets(n, n, &triplets),
            edges,
            degree,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn degree(&self) -> &[usize] {
        &self.degree
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.row(i).map(|(j, _)| j)
    }
}

/// `L = I - D^{-1/2} A D^{-1/2}`, with `D^{-1/2} = 0` on isolated nodes.
pub fn normalized_laplacian(g: &Graph) -> SparseMatrix {
    let inv_sqrt: Vec<f64> = g
        .degree()
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect();
    let mut triplets: Vec<(usize, usize, f64)> = (0..g.n()).map(|i| (i, i, 1.0)).collect();
    for i in 0..g.n() {
        for (j, a) in g.adjacency().row(i) {
            triplets.push((i, j, -a * inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    SparseMatrix::from_triplets(g.n(), g.n(), &triplets)
}

/// Renormalized propagation `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃ = D + I`.
pub fn gcn_propagation_matrix(g: &Graph) -> SparseMatrix {
    let inv_sqrt: Vec<f64> = g
        .degree()
        .iter()
        .map(|&d| 1.0 / ((d + 1) as f64).sqrt())
        .collect();
    let mut triplets: Vec<(usize, usize, f64)> =
        (0..g.n()).map(|i| (i, i, inv_sqrt[i] * inv_sqrt[i])).collect();
    for i in 0..g.n() {
        for (j, a) in g.adjacency().row(i) {
            triplets.push((i, j, a * inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    SparseMatrix::from_triplets(g.n(), g.n(), &triplets)
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

impl SpectralDecomposition {
    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `U diag(h(λ)) Uᵀ X` for a spectral response `h`.
    pub fn filter(&self, x: ArrayView2<f64>, h: impl Fn(f64) -> f64) -> Array2<f64> {
        let coeffs = self.eigenvectors.t().dot(&x);
        let scaled = &coeffs * &self.eigenvalues.mapv(h).insert_axis(Axis(1));
        self.eigenvectors.dot(&scaled)
    }
}

/// Dense symmetric eigendecomposition for graphs up to [`EXACT_PATH_CAP`] nodes.
pub fn eigendecompose_small(l: &SparseMatrix) -> Result<SpectralDecomposition> {
    let (n, m) = l.shape();
    if n != m {
        return Err(shape_err("square matrix", format!("{n}x{m}")));
    }
    if n > EXACT_PATH_CAP {
        return Err(Error::ExactPathTooLarge {
            n,
            cap: EXACT_PATH_CAP,
        });
    }
    if !l.is_symmetric(1e-12) {
        return Err(invalid("laplacian", "matrix is not symmetric"));
    }
    let dense = l.to_dense();
    let mat = DMatrix::from_fn(n, n, |i, j| dense[[i, j]]);
    let eig = SymmetricEigen::try_new(mat, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric QR iteration did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = Array1::from_iter(order.iter().map(|&k| eig.eigenvalues[k]));
    let eigenvectors = Array2::from_shape_fn((n, n), |(i, c)| eig.eigenvectors[(i, order[c])]);
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Result of the power-iteration estimate of the largest eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaMaxEstimate {
    pub value: f64,
    /// `false` when the iteration budget ran out; `value` is then the bound 2.
    pub converged: bool,
}

/// Power iteration on a symmetric PSD matrix. The Rayleigh quotient is
/// clamped to 2, the spectral bound of normalized Laplacians.
pub fn estimate_lambda_max(l: &SparseMatrix, iters: usize, tol: f64) -> LambdaMaxEstimate {
    let n = l.shape().0;
    // Deterministic, non-constant start so it is not orthogonal to the top
    // eigenvector of regular graphs.
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract());
    v /= v.dot(&v).sqrt();
    let mut prev = f64::NAN;
    for _ in 0..iters {
        let w = l.matvec(v.view());
        let rayleigh = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return LambdaMaxEstimate {
                value: 0.0,
                converged: true,
            };
        }
        v = w / norm;
        if (rayleigh - prev).abs() <= tol * rayleigh.abs().max(f64::MIN_POSITIVE) {
            return LambdaMaxEstimate {
                value: rayleigh.min(2.0),
                converged: true,
            };
        }
        prev = rayleigh;
    }
    log::warn!("lambda_max power iteration did not converge in {iters} steps; using bound 2");
    LambdaMaxEstimate {
        value: 2.0,
        converged: false,
    }
}

/// What a feature matrix stands for in the recovery workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRole {
    Observed,
    GroundTruth,
    Recovered,
    Reconstruction,
}

/// Dense `n × d` node attributes with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    role: FeatureRole,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, role: FeatureRole) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features", "entries must be finite"));
        }
        Ok(Self { values, role })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn role(&self) -> FeatureRole {
        self.role
    }

    pub fn with_role(self, role: FeatureRole) -> Self {
        Self { role, ..self }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Grid of patches an image was cut into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchLayout {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
}

impl PatchLayout {
    pub fn nodes(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.rows * self.patch, self.cols * self.patch)
    }
}

/// Cuts a `height × width` grayscale grid into `patch × patch` tiles.
///
/// Node `r * cols + c` holds tile `(r, c)` flattened row-major; tiles that
/// share a side are connected.
pub fn image_to_patch_graph(
    image: ArrayView2<f64>,
    patch: usize,
) -> Result<(Graph, FeatureMatrix, PatchLayout)> {
    let (h, w) = image.dim();
    if patch == 0 || h == 0 || w == 0 || h % patch != 0 || w % patch != 0 {
        return Err(shape_err(
            format!("dimensions divisible by patch side {patch}"),
            format!("{h}x{w}"),
        ));
    }
    let layout = PatchLayout {
        rows: h / patch,
        cols: w / patch,
        patch,
    };
    let features = Array2::from_shape_fn((layout.nodes(), patch * patch), |(node, k)| {
        let (r, c) = (node / layout.cols, node % layout.cols);
        image[[r * patch + k / patch, c * patch + k % patch]]
    });
    let mut edges = Vec::new();
    for r in 0..layout.rows {
        for c in 0..layout.cols {
            let node = r * layout.cols + c;
            if c + 1 < layout.cols {
                edges.push((node, node + 1));
            }
            if r + 1 < layout.rows {
                edges.push((node, node + layout.cols));
            }
        }
    }
    let graph = Graph::from_edges(layout.nodes(), &edges, SelfLoops::Reject)?;
    Ok((
        graph,
        FeatureMatrix::new(features, FeatureRole::Observed)?,
        layout,
    ))
}

/// Inverse of [`image_to_patch_graph`].
pub fn patch_graph_to_image(features: ArrayView2<f64>, layout: PatchLayout) -> Result<Array2<f64>> {
    let p = layout.patch;
    if features.dim() != (layout.nodes(), p * p) {
        return Err(shape_err(
            format!("{}x{}", layout.nodes(), p * p),
            format!("{}x{}", features.nrows(), features.ncols()),
        ));
    }
    let (h, w) = layout.image_dims();
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let node = (y / p) * layout.cols + x / p;
        features[[node, (y % p) * p + x % p]]
    }))
}
