//! Fisher linear discriminant projection for high-dimensional features.
//!
//! With n samples the scatter matrices span at most n−1 directions, so
//! instead of solving the generalized eigenproblem in the ambient dimension
//! (thousands) it is solved exactly in the subspace spanned by the centered
//! samples: a pivoted modified Gram–Schmidt basis reduces the problem to
//! r×r, a small ridge keeps the within-class scatter positive definite for
//! the Cholesky factorization, and the between-class scatter — whose rank is
//! below the class count — is diagonalized through its classes×classes Gram
//! matrix by power iteration with deflation. No randomness anywhere: pivots,
//! iteration starts, and signs are all fixed, so results are reproducible to
//! the bit.

use rayon::prelude::*;

use super::EvalError;

/// A fitted discriminant projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaProjection {
    /// Unit-length projection axes in the ambient space, one per output
    /// dimension, strongest first. Generalized eigenvectors are not mutually
    /// orthogonal in general.
    pub axes: Vec<Vec<f64>>,
    /// Generalized eigenvalues (between/within along each axis), descending.
    pub eigenvalues: Vec<f64>,
    /// Projected samples, one `out_dims` point per input sample, centered on
    /// the global mean.
    pub points: Vec<Vec<f64>>,
}

/// Projects labeled feature vectors onto the `out_dims` most discriminative
/// directions. The ridge is 1e-6 × trace(within-class scatter) / dimension.
pub fn lda_project(
    features: &[&[f32]],
    labels: &[u32],
    out_dims: usize,
) -> Result<LdaProjection, EvalError> {
    let n = features.len();
    if n == 0 || labels.len() != n {
        return Err(EvalError::InvalidConfig(format!(
            "need one label per feature, got {} features and {} labels",
            n,
            labels.len()
        )));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(EvalError::InvalidConfig(
            "features must share one non-zero length".into(),
        ));
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let k = classes.len();
    if k < 2 {
        return Err(EvalError::InvalidConfig(
            "discriminant projection needs at least 2 classes".into(),
        ));
    }
    if out_dims == 0 || out_dims > k - 1 {
        return Err(EvalError::InvalidConfig(format!(
            "out_dims must be in 1..={} for {k} classes, got {out_dims}",
            k - 1
        )));
    }
    let class_idx: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).unwrap())
        .collect();

    // Center the data on the global mean.
    let mut mean = vec![0.0f64; d];
    for f in features {
        for (m, &v) in mean.iter_mut().zip(*f) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut rows: Vec<Vec<f64>> = features
        .par_iter()
        .map(|f| f.iter().zip(&mean).map(|(&v, &m)| v as f64 - m).collect())
        .collect();

    // Pivoted modified Gram–Schmidt over the centered rows. Coordinates are
    // collected during elimination, so z reconstructs each sample in the
    // basis exactly (up to the dropped residual).
    let mut norms2: Vec<f64> = rows.par_iter().map(|r| dot(r, r)).collect();
    let mut used = vec![false; n];
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); n];
    let tol2 = norms2.iter().cloned().fold(0.0, f64::max) * 1e-20;
    while basis.len() < d.min(n) {
        let mut pivot: Option<(usize, f64)> = None;
        for i in 0..n {
            if !used[i] && pivot.is_none_or(|(_, best)| norms2[i] > best) {
                pivot = Some((i, norms2[i]));
            }
        }
        let Some((p, p_norm2)) = pivot else { break };
        if p_norm2 <= tol2 {
            break;
        }
        let norm = p_norm2.sqrt();
        let q: Vec<f64> = rows[p].iter().map(|&v| v / norm).collect();
        used[p] = true;
        z[p].push(norm);
        let q_ref = &q;
        rows.par_iter_mut()
            .zip(norms2.par_iter_mut())
            .zip(z.par_iter_mut())
            .zip(used.par_iter())
            .for_each(|(((row, n2), zi), &is_used)| {
                if is_used {
                    return;
                }
                let c = dot(q_ref, row);
                let mut fresh = 0.0;
                for (r, &qv) in row.iter_mut().zip(q_ref) {
                    *r -= c * qv;
                    fresh += *r * *r;
                }
                *n2 = fresh;
                zi.push(c);
            });
        basis.push(q);
    }
    let r = basis.len();
    if r < out_dims {
        return Err(EvalError::InvalidConfig(format!(
            "data spans only {r} directions, cannot produce {out_dims} axes"
        )));
    }
    // Pivot rows stopped collecting coordinates when they were consumed;
    // their remaining coordinates are exactly zero.
    for zi in &mut z {
        zi.resize(r, 0.0);
    }
    drop(rows);

    // Class statistics in the reduced space.
    let mut counts = vec![0u64; k];
    let mut class_means = vec![vec![0.0f64; r]; k];
    for (zi, &c) in z.iter().zip(&class_idx) {
        counts[c] += 1;
        for (m, &v) in class_means[c].iter_mut().zip(zi) {
            *m += v;
        }
    }
    for (m, &cnt) in class_means.iter_mut().zip(&counts) {
        for v in m.iter_mut() {
            *v /= cnt as f64;
        }
    }
    let mut grand = vec![0.0f64; r];
    for zi in &z {
        for (g, &v) in grand.iter_mut().zip(zi) {
            *g += v;
        }
    }
    for g in &mut grand {
        *g /= n as f64;
    }

    // Within-class scatter S_w = V Vᵀ where V's rows are the per-sample
    // deviations; stored transposed so each entry is one contiguous dot.
    let vt: Vec<Vec<f64>> = (0..r)
        .into_par_iter()
        .map(|a| {
            z.iter()
                .zip(&class_idx)
                .map(|(zi, &c)| zi[a] - class_means[c][a])
                .collect()
        })
        .collect();
    let mut sw: Vec<Vec<f64>> = (0..r)
        .into_par_iter()
        .map(|a| (0..r).map(|b| if b >= a { dot(&vt[a], &vt[b]) } else { 0.0 }).collect())
        .collect();
    #[allow(clippy::needless_range_loop)]
    for a in 0..r {
        for b in 0..a {
            sw[a][b] = sw[b][a];
        }
    }
    drop(vt);

    let trace: f64 = (0..r).map(|a| sw[a][a]).sum();
    // A zero within-class scatter (single-sample classes) would zero the
    // trace-scaled ridge; whitening by the identity instead reduces the
    // problem to the principal axes of the class-mean scatter.
    let ridge = if trace > 0.0 {
        1e-6 * trace / d as f64
    } else {
        1.0
    };
    for (a, row) in sw.iter_mut().enumerate() {
        row[a] += ridge;
    }

    let l = cholesky(&sw).ok_or_else(|| {
        EvalError::InvalidConfig("within-class scatter is not positive definite".into())
    })?;
    drop(sw);

    // Between-class scatter S_b = M Mᵀ with columns √n_c (m_c − grand mean).
    // Whitened: N = L⁻¹ M, and the eigenpairs of N Nᵀ come from the small
    // Gram matrix G = Nᵀ N.
    let m_cols: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let scale = (counts[c] as f64).sqrt();
            class_means[c]
                .iter()
                .zip(&grand)
                .map(|(&m, &g)| scale * (m - g))
                .collect()
        })
        .collect();
    let n_cols: Vec<Vec<f64>> = m_cols
        .iter()
        .map(|col| {
            let mut b = col.clone();
            forward_solve(&l, &mut b);
            b
        })
        .collect();
    let gram: Vec<Vec<f64>> = (0..k)
        .map(|a| (0..k).map(|b| dot(&n_cols[a], &n_cols[b])).collect())
        .collect();

    let eigen = top_eigenpairs(gram, out_dims);

    let mut axes = Vec::with_capacity(out_dims);
    let mut eigenvalues = Vec::with_capacity(out_dims);
    let mut reduced_axes: Vec<Vec<f64>> = Vec::with_capacity(out_dims);
    for (t, (lambda, u)) in eigen.into_iter().enumerate() {
        // Eigenvector of the whitened problem: N u, mapped back through Lᵀ.
        let mut w: Vec<f64> = vec![0.0; r];
        for (col, &uc) in n_cols.iter().zip(&u) {
            for (wv, &cv) in w.iter_mut().zip(col) {
                *wv += uc * cv;
            }
        }
        if dot(&w, &w).sqrt() < 1e-300 {
            // Degenerate direction (eigenvalue ~0): fall back to a fixed
            // basis vector so output stays deterministic.
            w = vec![0.0; r];
            w[t.min(r - 1)] = 1.0;
        }
        backward_solve_transpose(&l, &mut w);
        let norm = dot(&w, &w).sqrt();
        let mut y: Vec<f64> = w.iter().map(|&v| v / norm).collect();

        // Ambient axis; unit length because the basis is orthonormal.
        let mut axis = vec![0.0f64; d];
        for (q, &ya) in basis.iter().zip(&y) {
            for (av, &qv) in axis.iter_mut().zip(q) {
                *av += ya * qv;
            }
        }
        if let Some(first) = axis.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                for v in axis.iter_mut() {
                    *v = -*v;
                }
                for v in y.iter_mut() {
                    *v = -*v;
                }
            }
        }
        axes.push(axis);
        reduced_axes.push(y);
        eigenvalues.push(lambda);
    }

    let points: Vec<Vec<f64>> = z
        .par_iter()
        .map(|zi| reduced_axes.iter().map(|y| dot(y, zi)).collect())
        .collect();

    Ok(LdaProjection {
        axes,
        eigenvalues,
        points,
    })
}

/// Between-class over within-class scatter (trace ratio) of projected
/// points. Zero within-class spread yields +∞ when the classes separate at
/// all, and 0 when every point coincides.
pub fn fisher_ratio(points: &[Vec<f64>], labels: &[u32]) -> f64 {
    assert_eq!(points.len(), labels.len(), "one label per point");
    assert!(!points.is_empty(), "need at least one point");
    let dims = points[0].len();
    let n = points.len();

    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut counts = vec![0u64; classes.len()];
    let mut means = vec![vec![0.0f64; dims]; classes.len()];
    let mut grand = vec![0.0f64; dims];
    for (p, l) in points.iter().zip(labels) {
        let c = classes.binary_search(l).unwrap();
        counts[c] += 1;
        for (m, &v) in means[c].iter_mut().zip(p) {
            *m += v;
        }
        for (g, &v) in grand.iter_mut().zip(p) {
            *g += v;
        }
    }
    for (m, &cnt) in means.iter_mut().zip(&counts) {
        for v in m.iter_mut() {
            *v /= cnt as f64;
        }
    }
    for g in &mut grand {
        *g /= n as f64;
    }

    let between: f64 = means
        .iter()
        .zip(&counts)
        .map(|(m, &cnt)| {
            cnt as f64
                * m.iter()
                    .zip(&grand)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>()
        })
        .sum();
    let within: f64 = points
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            let c = classes.binary_search(l).unwrap();
            p.iter()
                .zip(&means[c])
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    if within == 0.0 {
        if between == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        between / within
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix;
/// `None` if a pivot collapses.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let r = a.len();
    let mut l = vec![vec![0.0f64; r]; r];
    for j in 0..r {
        let diag = a[j][j] - dot(&l[j][..j], &l[j][..j]);
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[j][j] = ljj;
        let (head, tail) = l.split_at_mut(j + 1);
        let row_j = &head[j];
        tail.par_iter_mut().enumerate().for_each(|(off, row_i)| {
            let i = j + 1 + off;
            row_i[j] = (a[i][j] - dot(&row_i[..j], &row_j[..j])) / ljj;
        });
    }
    Some(l)
}

/// Solves L y = b in place.
fn forward_solve(l: &[Vec<f64>], b: &mut [f64]) {
    for i in 0..l.len() {
        let s = dot(&l[i][..i], &b[..i]);
        b[i] = (b[i] - s) / l[i][i];
    }
}

/// Solves Lᵀ y = b in place.
fn backward_solve_transpose(l: &[Vec<f64>], b: &mut [f64]) {
    for i in (0..l.len()).rev() {
        let mut s = b[i];
        for j in i + 1..l.len() {
            s -= l[j][i] * b[j];
        }
        b[i] = s / l[i][i];
    }
}

/// Top eigenpairs of a small symmetric PSD matrix by power iteration with
/// deflation. Start vectors are fixed (largest diagonal entry), so the
/// result is deterministic.
fn top_eigenpairs(mut g: Vec<Vec<f64>>, count: usize) -> Vec<(f64, Vec<f64>)> {
    let k = g.len();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut start = 0;
        for i in 1..k {
            if g[i][i] > g[start][start] {
                start = i;
            }
        }
        let mut v = vec![0.0f64; k];
        v[start] = 1.0;
        let mut lambda = 0.0f64;
        for _ in 0..10_000 {
            let mut w = vec![0.0f64; k];
            for (wi, row) in w.iter_mut().zip(&g) {
                *wi = dot(row, &v);
            }
            let norm = dot(&w, &w).sqrt();
            if norm < 1e-300 {
                lambda = 0.0;
                break;
            }
            for (vi, &wi) in v.iter_mut().zip(&w) {
                *vi = wi / norm;
            }
            let new_lambda: f64 = {
                let mut gv = vec![0.0f64; k];
                for (gvi, row) in gv.iter_mut().zip(&g) {
                    *gvi = dot(row, &v);
                }
                dot(&v, &gv)
            };
            if (new_lambda - lambda).abs() <= 1e-15 * new_lambda.abs().max(1.0) {
                lambda = new_lambda;
                break;
            }
            lambda = new_lambda;
        }
        for (i, row) in g.iter_mut().enumerate() {
            for (j, gij) in row.iter_mut().enumerate() {
                *gij -= lambda * v[i] * v[j];
            }
        }
        out.push((lambda, v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Three well-separated Gaussian classes in 6 dimensions.
    fn blobs() -> (Vec<Vec<f32>>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for class in 0..3u32 {
            for _ in 0..30 {
                let mut v = vec![0.0f32; 6];
                v[class as usize] = 10.0;
                for x in v.iter_mut() {
                    *x += noise.sample(&mut rng) as f32;
                }
                features.push(v);
                labels.push(class);
            }
        }
        (features, labels)
    }

    fn refs(features: &[Vec<f32>]) -> Vec<&[f32]> {
        features.iter().map(|f| f.as_slice()).collect()
    }

    #[test]
    fn separable_classes_project_far_apart() {
        let (features, labels) = blobs();
        let proj = lda_project(&refs(&features), &labels, 2).unwrap();
        assert_eq!(proj.axes.len(), 2);
        assert_eq!(proj.points.len(), features.len());
        assert_eq!(proj.points[0].len(), 2);
        for axis in &proj.axes {
            let norm = dot(axis, axis).sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "axis norm {norm}");
        }
        assert!(proj.eigenvalues[0] >= proj.eigenvalues[1]);
        assert!(proj.eigenvalues[1] > 0.0);

        let ratio = fisher_ratio(&proj.points, &labels);
        assert!(ratio > 10.0, "expected clear separation, got {ratio}");
    }

    #[test]
    fn projection_is_deterministic_to_the_bit() {
        let (features, labels) = blobs();
        let a = lda_project(&refs(&features), &labels, 2).unwrap();
        let b = lda_project(&refs(&features), &labels, 2).unwrap();
        let bits = |p: &LdaProjection| -> Vec<u64> {
            p.axes
                .iter()
                .chain(&p.points)
                .flatten()
                .map(|v| v.to_bits())
                .chain(p.eigenvalues.iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn duplicating_every_sample_leaves_axes_unchanged() {
        // Doubling the data doubles both scatters and the trace-scaled
        // ridge, so the generalized problem is identical.
        let (features, labels) = blobs();
        let base = lda_project(&refs(&features), &labels, 2).unwrap();

        let mut doubled = features.clone();
        doubled.extend(features.iter().cloned());
        let mut doubled_labels = labels.clone();
        doubled_labels.extend(labels.iter().copied());
        let twice = lda_project(&refs(&doubled), &doubled_labels, 2).unwrap();

        for (a, b) in base.axes.iter().zip(&twice.axes) {
            let align = dot(a, b).abs();
            assert!(align > 1.0 - 1e-8, "axes diverged: |cos| = {align}");
        }
        for (&ea, &eb) in base.eigenvalues.iter().zip(&twice.eigenvalues) {
            assert!((ea - eb).abs() <= 1e-6 * ea.abs().max(1.0), "{ea} vs {eb}");
        }
    }

    #[test]
    fn sign_convention_is_first_significant_coordinate_positive() {
        let (features, labels) = blobs();
        let proj = lda_project(&refs(&features), &labels, 2).unwrap();
        for axis in &proj.axes {
            let first = axis.iter().find(|v| v.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn minimal_two_class_case_works() {
        // One sample per class: within-class scatter is exactly zero, so the
        // axis is the principal direction of the class means.
        let features = vec![vec![0.0f32, 0.0], vec![2.0f32, 2.0]];
        let labels = vec![0u32, 1];
        let proj = lda_project(&refs(&features), &labels, 1).unwrap();
        assert_eq!(proj.points.len(), 2);
        // The two points land symmetrically around the center.
        let spread = (proj.points[0][0] - proj.points[1][0]).abs();
        assert!((spread - 8.0f64.sqrt()).abs() < 1e-6, "spread {spread}");
        // Sign rule: the axis points along +(1,1)/√2, so the first point
        // projects negative.
        assert!(proj.points[0][0] < 0.0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let features = vec![vec![1.0f32, 0.0], vec![0.0f32, 1.0]];
        let one_class = vec![0u32, 0];
        assert!(lda_project(&refs(&features), &one_class, 1).is_err());

        let labels = vec![0u32, 1];
        assert!(lda_project(&refs(&features), &labels, 0).is_err());
        assert!(lda_project(&refs(&features), &labels, 2).is_err()); // > classes-1
        assert!(lda_project(&refs(&features), &labels[..1], 1).is_err());
        assert!(lda_project(&[], &[], 1).is_err());

        let ragged: Vec<Vec<f32>> = vec![vec![1.0, 0.0], vec![0.0]];
        assert!(lda_project(&refs(&ragged), &labels, 1).is_err());

        // Identical points per class still project; the classes separate
        // fully along the lone axis.
        let degenerate = vec![
            vec![1.0f32, 0.0],
            vec![1.0f32, 0.0],
            vec![0.0f32, 1.0],
            vec![0.0f32, 1.0],
        ];
        let deg_labels = vec![0u32, 0, 1, 1];
        let proj = lda_project(&refs(&degenerate), &deg_labels, 1).unwrap();
        assert!(proj.points[0][0] * proj.points[2][0] < 0.0);
    }

    #[test]
    fn fisher_ratio_edge_cases() {
        let labels = vec![0u32, 0, 1, 1];
        let tight = vec![
            vec![0.0f64],
            vec![0.0f64],
            vec![5.0f64],
            vec![5.0f64],
        ];
        assert_eq!(fisher_ratio(&tight, &labels), f64::INFINITY);

        let collapsed = vec![vec![1.0f64]; 4];
        assert_eq!(fisher_ratio(&collapsed, &labels), 0.0);

        let spread = vec![
            vec![0.0f64],
            vec![1.0f64],
            vec![4.0f64],
            vec![5.0f64],
        ];
        // Means 0.5 and 4.5, grand 2.5: between = 2·4 + 2·4 = 16,
        // within = 4 × 0.25 = 1.
        assert_eq!(fisher_ratio(&spread, &labels), 16.0);
    }
}
