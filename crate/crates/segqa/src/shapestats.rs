//! Statistical baseline: six geometric features per organ, a Gaussian fit
//! over reference cases, and the Mahalanobis distance as inaccuracy score.
//!
//! Features are computed from binary masks only (no image intensities), so
//! the baseline is independent of imaging modality. Surface area counts
//! exposed 6-neighbor faces with spacing-aware face areas, which is exact
//! on the voxel grid and directly oracle-testable.

use crate::error::{Error, Result};
use crate::voxelgrid::{center_of_mass, MultiChannelVolume};
use nalgebra::{Cholesky, Matrix3, SMatrix, SVector, SymmetricEigen};

/// Relative ridge applied to near-singular covariance estimates.
const COV_RIDGE_EPS: f64 = 1e-6;

/// Six geometric features of one organ mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    /// Foreground volume in mm^3.
    pub volume: f64,
    /// Exposed-face surface area in mm^2.
    pub surface_area: f64,
    /// surface_area / volume, 1/mm.
    pub sav_ratio: f64,
    /// sqrt of largest over second-largest principal moment, >= 1.
    pub elongation: f64,
    /// Surface area of the equal-volume sphere over the actual surface
    /// area, in (0, 1] up to digitization error.
    pub roundness: f64,
    /// Distance in mm from the organ centroid to the mean centroid of the
    /// other organs (0 for single-organ volumes).
    pub centroid_offset: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.volume,
            self.surface_area,
            self.sav_ratio,
            self.elongation,
            self.roundness,
            self.centroid_offset,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            volume: v[0],
            surface_area: v[1],
            sav_ratio: v[2],
            elongation: v[3],
            roundness: v[4],
            centroid_offset: v[5],
        }
    }
}

/// Fitted mean and covariance of the six features for one organ.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub organ: String,
    pub mean: SVector<f64, 6>,
    pub covariance: SMatrix<f64, 6, 6>,
}

/// Extracts the six features of channel `organ_index`.
///
/// The organ channel must have nonempty foreground. `centroid_offset` uses
/// the other channels that are nonempty and is 0 when there are none.
pub fn extract_features(case: &MultiChannelVolume, organ_index: usize) -> Result<FeatureVector> {
    let mask = case.channel_as_mask(organ_index);
    let count = mask.foreground_count();
    if count == 0 {
        return Err(Error::EmptyForeground(format!(
            "organ channel {} is empty",
            case.channel_names()
                .get(organ_index)
                .map(String::as_str)
                .unwrap_or("?")
        )));
    }
    let s = case.spacing();
    let (nx, ny, nz) = case.dims();
    let volume = count as f64 * s.voxel_volume();

    // exposed 6-neighbor faces, per-axis face areas
    let face_areas = [s.sy * s.sz, s.sx * s.sz, s.sx * s.sy];
    let mut surface_area = 0.0f64;
    let mut sums = [0.0f64; 3];
    let mut cov_accum = Matrix3::<f64>::zeros();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) == 0 {
                    continue;
                }
                let exposed_x = (x == 0 || mask.get(x - 1, y, z) == 0) as u32
                    + (x + 1 == nx || mask.get(x + 1, y, z) == 0) as u32;
                let exposed_y = (y == 0 || mask.get(x, y - 1, z) == 0) as u32
                    + (y + 1 == ny || mask.get(x, y + 1, z) == 0) as u32;
                let exposed_z = (z == 0 || mask.get(x, y, z - 1) == 0) as u32
                    + (z + 1 == nz || mask.get(x, y, z + 1) == 0) as u32;
                surface_area += exposed_x as f64 * face_areas[0]
                    + exposed_y as f64 * face_areas[1]
                    + exposed_z as f64 * face_areas[2];
                let p = [
                    (x as f64 + 0.5) * s.sx,
                    (y as f64 + 0.5) * s.sy,
                    (z as f64 + 0.5) * s.sz,
                ];
                for a in 0..3 {
                    sums[a] += p[a];
                    for b in 0..3 {
                        cov_accum[(a, b)] += p[a] * p[b];
                    }
                }
            }
        }
    }
    let n = count as f64;
    let mut cov = Matrix3::<f64>::zeros();
    for a in 0..3 {
        for b in 0..3 {
            cov[(a, b)] = cov_accum[(a, b)] / n - (sums[a] / n) * (sums[b] / n);
        }
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let elongation = principal_elongation(eig[0], eig[1]);

    // surface of the sphere with equal volume: (36*pi*V^2)^(1/3)
    let sphere_surface = (36.0 * std::f64::consts::PI * volume * volume).cbrt();
    let roundness = sphere_surface / surface_area;

    let centroid_offset = {
        let own = center_of_mass(&mask)?;
        let mut others = Vec::new();
        for c in 0..case.channel_count() {
            if c == organ_index {
                continue;
            }
            let other = case.channel_as_mask(c);
            if let Ok(com) = center_of_mass(&other) {
                others.push(com);
            }
        }
        if others.is_empty() {
            0.0
        } else {
            let k = others.len() as f64;
            let mean = others.iter().fold([0.0f64; 3], |acc, c| {
                [acc[0] + c[0] / k, acc[1] + c[1] / k, acc[2] + c[2] / k]
            });
            ((own[0] - mean[0]).powi(2)
                + (own[1] - mean[1]).powi(2)
                + (own[2] - mean[2]).powi(2))
            .sqrt()
        }
    };

    Ok(FeatureVector {
        volume,
        surface_area,
        sav_ratio: surface_area / volume,
        elongation,
        roundness,
        centroid_offset,
    })
}

/// `sqrt(l_max / l_2)` with degenerate guards: a point mask (all moments
/// zero) has elongation 1; a vanishing second moment is floored at
/// `l_max * 1e-12`.
fn principal_elongation(l_max: f64, l_2: f64) -> f64 {
    if l_max <= 0.0 {
        return 1.0;
    }
    let floor = l_max * 1e-12;
    (l_max / l_2.max(floor)).sqrt()
}

/// Fits sample mean and unbiased covariance of the six features.
///
/// Needs more samples than the feature dimension (>= 7). When the smallest
/// covariance eigenvalue falls below `eps * trace/6` the diagonal is ridged
/// by that amount (an absolute `eps` is used when the trace is zero).
pub fn fit_gaussian(features: &[FeatureVector], organ: &str) -> Result<GaussianModel> {
    let n = features.len();
    if n < 7 {
        return Err(Error::TooFewSamples { needed: 7, got: n });
    }
    let nf = n as f64;
    let mut mean = SVector::<f64, 6>::zeros();
    for f in features {
        mean += SVector::from(f.as_array());
    }
    mean /= nf;

    let mut cov = SMatrix::<f64, 6, 6>::zeros();
    for f in features {
        let d = SVector::from(f.as_array()) - mean;
        cov += d * d.transpose();
    }
    cov /= nf - 1.0;

    // absolute floor keeps the ridge meaningful when all samples coincide
    let trace = cov.trace();
    let ridge = (COV_RIDGE_EPS * trace / 6.0).max(1e-12);
    let min_eig = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < ridge {
        for i in 0..6 {
            cov[(i, i)] += ridge;
        }
    }

    Ok(GaussianModel {
        organ: organ.to_string(),
        mean,
        covariance: cov,
    })
}

/// Mahalanobis distance `sqrt((x-mean)^T Cov^-1 (x-mean))` via a Cholesky
/// solve; the covariance inverse is never formed explicitly.
pub fn mahalanobis_score(model: &GaussianModel, x: &FeatureVector) -> Result<f64> {
    let chol = Cholesky::new(model.covariance)
        .ok_or_else(|| Error::NotPositiveDefinite(model.organ.clone()))?;
    let delta = SVector::from(x.as_array()) - model.mean;
    let solved = chol.solve(&delta);
    Ok(delta.dot(&solved).max(0.0).sqrt())
}

/// Renders fitted models as the report text block: per organ one `organ`
/// line, one `mean` line with 6 values, one `cov` line with the 21
/// lower-triangle entries (row-major), full decimal precision.
pub fn models_to_text(models: &[GaussianModel]) -> String {
    let mut out = String::new();
    for m in models {
        out.push_str(&format!("organ {}\n", m.organ));
        let means: Vec<String> = m.mean.iter().map(f64::to_string).collect();
        out.push_str(&format!("mean {}\n", means.join(" ")));
        let mut tri = Vec::with_capacity(21);
        for i in 0..6 {
            for j in 0..=i {
                tri.push(m.covariance[(i, j)].to_string());
            }
        }
        out.push_str(&format!("cov {}\n", tri.join(" ")));
    }
    out
}

/// Parses the text block produced by [`models_to_text`].
pub fn models_from_text(text: &str) -> Result<Vec<GaussianModel>> {
    let mut models = Vec::new();
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let organ = line
            .strip_prefix("organ ")
            .ok_or_else(|| Error::SchemaMismatch(format!("expected organ line, got {line:?}")))?;
        let mean_line = lines
            .next()
            .and_then(|l| l.strip_prefix("mean "))
            .ok_or_else(|| Error::SchemaMismatch("expected mean line".into()))?;
        let cov_line = lines
            .next()
            .and_then(|l| l.strip_prefix("cov "))
            .ok_or_else(|| Error::SchemaMismatch("expected cov line".into()))?;
        let parse = |tokens: &str| -> Result<Vec<f64>> {
            tokens
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::SchemaMismatch(format!("bad number {t:?} in model block")))
                })
                .collect()
        };
        let means = parse(mean_line)?;
        let tri = parse(cov_line)?;
        if means.len() != 6 || tri.len() != 21 {
            return Err(Error::SchemaMismatch(format!(
                "model block for {organ}: expected 6 means and 21 covariance entries"
            )));
        }
        let mean = SVector::<f64, 6>::from_iterator(means);
        let mut covariance = SMatrix::<f64, 6, 6>::zeros();
        let mut k = 0;
        for i in 0..6 {
            for j in 0..=i {
                covariance[(i, j)] = tri[k];
                covariance[(j, i)] = tri[k];
                k += 1;
            }
        }
        models.push(GaussianModel {
            organ: organ.to_string(),
            mean,
            covariance,
        });
    }
    Ok(models)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxelgrid::{Spacing, VoxelMask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Spacing {
        Spacing::isotropic(1.0).unwrap()
    }

    fn single_channel(mask: &VoxelMask) -> MultiChannelVolume {
        MultiChannelVolume::from_masks(&[("organ".into(), mask)]).unwrap()
    }

    fn ball_mask(n: usize, c: [f64; 3], r: f64, s: Spacing) -> VoxelMask {
        let mut m = VoxelMask::zeros((n, n, n), s).unwrap();
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let d = ((x as f64 + 0.5) * s.sx - c[0]).powi(2)
                        + ((y as f64 + 0.5) * s.sy - c[1]).powi(2)
                        + ((z as f64 + 0.5) * s.sz - c[2]).powi(2);
                    if d <= r * r {
                        m.set(x, y, z, 1);
                    }
                }
            }
        }
        m
    }

    #[test]
    fn single_voxel_features() {
        let mut m = VoxelMask::zeros((5, 5, 5), unit()).unwrap();
        m.set(2, 2, 2, 1);
        let f = extract_features(&single_channel(&m), 0).unwrap();
        assert_eq!(f.volume, 1.0);
        assert_eq!(f.surface_area, 6.0);
        assert_eq!(f.sav_ratio, 6.0);
        assert_eq!(f.elongation, 1.0);
        assert_eq!(f.centroid_offset, 0.0);
    }

    #[test]
    fn bar_features() {
        let mut m = VoxelMask::zeros((5, 5, 5), unit()).unwrap();
        m.set(1, 2, 2, 1);
        m.set(2, 2, 2, 1);
        let f = extract_features(&single_channel(&m), 0).unwrap();
        assert_eq!(f.volume, 2.0);
        assert_eq!(f.surface_area, 10.0);
    }

    #[test]
    fn ball_features_match_bruteforce_oracle() {
        let m = ball_mask(32, [16.0, 16.0, 16.0], 10.0, unit());
        let f = extract_features(&single_channel(&m), 0).unwrap();

        // Independent voxel/face enumeration oracle.
        let mut volume = 0.0;
        let mut surface = 0.0;
        let centers: Vec<[f64; 3]> = m
            .foreground_voxels()
            .iter()
            .map(|&(x, y, z)| [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5])
            .collect();
        let inside = |x: isize, y: isize, z: isize| -> bool {
            x >= 0
                && y >= 0
                && z >= 0
                && (x as usize) < 32
                && (y as usize) < 32
                && (z as usize) < 32
                && m.get(x as usize, y as usize, z as usize) == 1
        };
        for &(x, y, z) in &m.foreground_voxels() {
            volume += 1.0;
            let (xi, yi, zi) = (x as isize, y as isize, z as isize);
            for (dx, dy, dz) in [
                (1, 0, 0),
                (-1, 0, 0),
                (0, 1, 0),
                (0, -1, 0),
                (0, 0, 1),
                (0, 0, -1),
            ] {
                if !inside(xi + dx, yi + dy, zi + dz) {
                    surface += 1.0;
                }
            }
        }
        assert_eq!(f.volume, volume);
        assert_eq!(f.surface_area, surface);
        assert_eq!(f.sav_ratio, surface / volume);

        let n = centers.len() as f64;
        let mean: [f64; 3] = (0..3)
            .map(|a| centers.iter().map(|c| c[a]).sum::<f64>() / n)
            .collect::<Vec<_>>()
            .try_into()
            .unwrap();
        let mut cov = Matrix3::<f64>::zeros();
        for c in &centers {
            for a in 0..3 {
                for b in 0..3 {
                    cov[(a, b)] += (c[a] - mean[a]) * (c[b] - mean[b]) / n;
                }
            }
        }
        let mut eig: Vec<f64> =
            SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let expect_elong = (eig[0] / eig[1]).sqrt();
        assert!((f.elongation - expect_elong).abs() < 1e-9);
        assert!(f.elongation >= 1.0);

        let expect_round = (36.0 * std::f64::consts::PI * volume * volume).cbrt() / surface;
        assert!((f.roundness - expect_round).abs() < 1e-12);
        assert!(f.roundness > 0.6 && f.roundness <= 1.05);
    }

    #[test]
    fn features_are_translation_invariant_and_scale_with_spacing() {
        let a = ball_mask(24, [8.0, 8.0, 8.0], 4.5, unit());
        let b = ball_mask(24, [14.0, 13.0, 12.0], 4.5, unit());
        let fa = extract_features(&single_channel(&a), 0).unwrap();
        let fb = extract_features(&single_channel(&b), 0).unwrap();
        assert_eq!(fa.volume, fb.volume);
        assert_eq!(fa.surface_area, fb.surface_area);
        assert!((fa.elongation - fb.elongation).abs() < 1e-9);

        // doubling isotropic spacing scales volume by 8 and area by 4
        let s2 = Spacing::isotropic(2.0).unwrap();
        let mut scaled = VoxelMask::zeros((24, 24, 24), s2).unwrap();
        scaled.data_mut().copy_from_slice(a.data());
        let fs = extract_features(&single_channel(&scaled), 0).unwrap();
        assert_eq!(fs.volume, 8.0 * fa.volume);
        assert_eq!(fs.surface_area, 4.0 * fa.surface_area);
    }

    #[test]
    fn centroid_offset_uses_other_organs() {
        let mut a = VoxelMask::zeros((10, 10, 10), unit()).unwrap();
        a.set(2, 5, 5, 1);
        let mut b = VoxelMask::zeros((10, 10, 10), unit()).unwrap();
        b.set(8, 5, 5, 1);
        let mut c = VoxelMask::zeros((10, 10, 10), unit()).unwrap();
        c.set(6, 5, 5, 1);
        let vol = MultiChannelVolume::from_masks(&[
            ("a".into(), &a),
            ("b".into(), &b),
            ("c".into(), &c),
        ])
        .unwrap();
        // others' centroids: (8.5, 5.5, 5.5) and (6.5, 5.5, 5.5) -> mean x 7.5
        let f = extract_features(&vol, 0).unwrap();
        assert!((f.centroid_offset - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_channel_errors() {
        let e = VoxelMask::zeros((4, 4, 4), unit()).unwrap();
        assert!(extract_features(&single_channel(&e), 0).is_err());
    }

    fn random_features(rng: &mut ChaCha8Rng, n: usize) -> Vec<FeatureVector> {
        (0..n)
            .map(|_| {
                FeatureVector::from_array([
                    rng.gen_range(500.0..2000.0),
                    rng.gen_range(200.0..900.0),
                    rng.gen_range(0.2..1.0),
                    rng.gen_range(1.0..3.0),
                    rng.gen_range(0.4..1.0),
                    rng.gen_range(5.0..40.0),
                ])
            })
            .collect()
    }

    #[test]
    fn fit_requires_minimum_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_features(&mut rng, 6);
        assert!(matches!(
            fit_gaussian(&f, "x"),
            Err(Error::TooFewSamples { needed: 7, got: 6 })
        ));
    }

    #[test]
    fn fit_identical_samples_is_ridge_only() {
        let f = FeatureVector::from_array([10.0, 20.0, 2.0, 1.5, 0.8, 3.0]);
        let model = fit_gaussian(&vec![f; 8], "x").unwrap();
        for i in 0..6 {
            assert!((model.mean[i] - f.as_array()[i]).abs() < 1e-12);
            for j in 0..6 {
                if i == j {
                    assert!(model.covariance[(i, j)] >= 1e-12);
                } else {
                    assert!(model.covariance[(i, j)].abs() < 1e-25);
                }
            }
        }
        assert!(mahalanobis_score(&model, &f).unwrap() < 1e-6);
    }

    #[test]
    fn fit_matches_direct_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // two interleaved clusters
        let mut samples = Vec::new();
        for i in 0..40 {
            let base = if i % 2 == 0 { 100.0 } else { 140.0 };
            samples.push(FeatureVector::from_array([
                base + rng.gen_range(-5.0..5.0),
                base * 0.5 + rng.gen_range(-2.0..2.0),
                rng.gen_range(0.2..0.6),
                rng.gen_range(1.0..2.0),
                rng.gen_range(0.5..1.0),
                rng.gen_range(1.0..9.0),
            ]));
        }
        let model = fit_gaussian(&samples, "x").unwrap();

        let n = samples.len() as f64;
        for a in 0..6 {
            let mean_a = samples.iter().map(|f| f.as_array()[a]).sum::<f64>() / n;
            assert!((model.mean[a] - mean_a).abs() < 1e-10);
            for b in 0..6 {
                let mean_b = samples.iter().map(|f| f.as_array()[b]).sum::<f64>() / n;
                let cov_ab = samples
                    .iter()
                    .map(|f| (f.as_array()[a] - mean_a) * (f.as_array()[b] - mean_b))
                    .sum::<f64>()
                    / (n - 1.0);
                let got = model.covariance[(a, b)];
                // allow for the ridge on the diagonal
                if a == b {
                    assert!(got >= cov_ab - 1e-10 && got - cov_ab < 1.0);
                } else {
                    assert!((got - cov_ab).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn mahalanobis_diagonal_two_sigma() {
        let mean = SVector::from([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut covariance = SMatrix::<f64, 6, 6>::zeros();
        let sigmas = [0.5, 1.0, 2.0, 0.25, 3.0, 1.5];
        for (i, &sg) in sigmas.iter().enumerate() {
            covariance[(i, i)] = sg * sg;
        }
        let model = GaussianModel {
            organ: "x".into(),
            mean,
            covariance,
        };
        let mut x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        x[2] += 2.0 * sigmas[2];
        let d = mahalanobis_score(&model, &FeatureVector::from_array(x)).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    /// Gauss-Jordan inverse, independent of nalgebra's factorizations.
    fn invert6(m: &SMatrix<f64, 6, 6>) -> SMatrix<f64, 6, 6> {
        let n = 6;
        let mut a = *m;
        let mut inv = SMatrix::<f64, 6, 6>::identity();
        for col in 0..n {
            let mut pivot = col;
            for r in col + 1..n {
                if a[(r, col)].abs() > a[(pivot, col)].abs() {
                    pivot = r;
                }
            }
            if pivot != col {
                a.swap_rows(col, pivot);
                inv.swap_rows(col, pivot);
            }
            let d = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= d;
                inv[(col, j)] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = a[(r, col)];
                    for j in 0..n {
                        a[(r, j)] -= f * a[(col, j)];
                        inv[(r, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn mahalanobis_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let samples = random_features(&mut rng, 30);
            let model = fit_gaussian(&samples, "x").unwrap();
            let inv = invert6(&model.covariance);
            for _ in 0..10 {
                let x = random_features(&mut rng, 1)[0];
                let got = mahalanobis_score(&model, &x).unwrap();
                let d = SVector::from(x.as_array()) - model.mean;
                let expect = (d.transpose() * inv * d)[(0, 0)].max(0.0).sqrt();
                assert!(
                    (got - expect).abs() <= 1e-9 * expect.max(1.0),
                    "got {got}, expect {expect}"
                );
            }
        }
    }

    #[test]
    fn mahalanobis_is_affine_invariant() {
        // comparable feature scales keep the conditional ridge inactive on
        // both fits, where the invariance holds exactly
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draw = |rng: &mut ChaCha8Rng| {
            FeatureVector::from_array([
                rng.gen_range(1.0..4.0),
                rng.gen_range(2.0..5.0),
                rng.gen_range(0.5..2.5),
                rng.gen_range(1.0..3.0),
                rng.gen_range(0.4..1.0),
                rng.gen_range(1.0..6.0),
            ])
        };
        let samples: Vec<FeatureVector> = (0..25).map(|_| draw(&mut rng)).collect();
        let x = draw(&mut rng);
        let model = fit_gaussian(&samples, "x").unwrap();
        let base = mahalanobis_score(&model, &x).unwrap();

        // rescale every feature consistently (diagonal affine map)
        let scale = [2.0, 0.5, 3.0, 1.5, 0.8, 1.2];
        let rescale = |f: &FeatureVector| {
            let mut v = f.as_array();
            for i in 0..6 {
                v[i] = v[i] * scale[i] + 7.0;
            }
            FeatureVector::from_array(v)
        };
        let scaled_samples: Vec<FeatureVector> = samples.iter().map(rescale).collect();
        let scaled_model = fit_gaussian(&scaled_samples, "x").unwrap();
        let scaled = mahalanobis_score(&scaled_model, &rescale(&x)).unwrap();
        assert!(
            (base - scaled).abs() < 1e-6 * base.max(1.0),
            "base {base} vs scaled {scaled}"
        );
    }

    #[test]
    fn model_text_block_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let models = vec![
            fit_gaussian(&random_features(&mut rng, 12), "bladder").unwrap(),
            fit_gaussian(&random_features(&mut rng, 12), "rectum").unwrap(),
        ];
        let text = models_to_text(&models);
        let back = models_from_text(&text).unwrap();
        assert_eq!(back, models);
    }
}
