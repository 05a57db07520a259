//! Random-patch corruption of binary masks, plus the signed Dice
//! coefficient used to calibrate corruption severity.
//!
//! Corruption draws a patch count, then per patch a coin flip between
//! adding and removing an axis-aligned cuboid whose per-axis side lengths
//! are sampled independently. Patch centers come either from the target's
//! foreground voxels or from its tight bounding box. All draws happen on a
//! seeded ChaCha8 stream in the exact order documented on
//! [`corrupt_mask`], so an independent implementation following the same
//! protocol reproduces outputs byte for byte.

use crate::error::{Error, Result};
use crate::voxelgrid::{tight_bounding_box, BoundingBox, VoxelMask};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Where patch centers are sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterSampling {
    /// Uniform over the target's foreground voxels. Suits small organs that
    /// sparsely occupy their bounding boxes.
    Foreground,
    /// Uniform over the target's tight bounding box.
    BoundingBox,
}

/// Per-organ corruption hyperparameters: the four knobs of the noise model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub max_patches: usize,
    /// Minimum per-axis patch side length in voxels.
    pub min_patch: usize,
    /// Maximum per-axis patch side length in voxels.
    pub max_patch: usize,
    pub center_sampling: CenterSampling,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_patches == 0 {
            return Err(Error::InvalidArgument("max_patches must be >= 1".into()));
        }
        if self.min_patch == 0 || self.min_patch > self.max_patch {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= min_patch <= max_patch, got [{}, {}]",
                self.min_patch, self.max_patch
            )));
        }
        Ok(())
    }
}

/// Seed for reproducible corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RngSeed(pub u64);

/// Corrupts a binary mask by adding or removing random cuboid patches.
///
/// Draw protocol, on `ChaCha8Rng::seed_from_u64(seed)`:
/// 1. `n = gen_range(1..=max_patches)`
/// 2. per patch, in order:
///    a. `add = gen_range(0..2u32) == 1` (otherwise remove)
///    b. side lengths `lx, ly, lz`, each `gen_range(min_patch..=max_patch)`
///    c. center: Foreground mode draws `gen_range(0..fg_len)` into the
///       x-fastest foreground scan of the *original* target; BoundingBox
///       mode draws `cx, cy, cz` with `gen_range(lo..=hi)` per axis over the
///       target's tight bounding box. If the target is empty, both modes
///       fall back to the full grid.
///
/// A patch with side `l` spans `[c - (l-1)/2, c + l - 1 - (l-1)/2]` per axis
/// (integer division; even sides extend one voxel further on the high side),
/// clipped to the grid. Adding sets the in-bounds patch voxels to 1,
/// removing sets them to 0.
pub fn corrupt_mask(target: &VoxelMask, spec: &NoiseSpec, seed: RngSeed) -> Result<VoxelMask> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    let (nx, ny, nz) = target.dims();

    let fg = match spec.center_sampling {
        CenterSampling::Foreground => target.foreground_voxels(),
        CenterSampling::BoundingBox => Vec::new(),
    };
    let bbox = tight_bounding_box(target).unwrap_or(BoundingBox {
        lo: (0, 0, 0),
        hi: (nx - 1, ny - 1, nz - 1),
    });

    let mut out = target.clone();
    let n = rng.gen_range(1..=spec.max_patches);
    for _ in 0..n {
        let add = rng.gen_range(0..2u32) == 1;
        let lx = rng.gen_range(spec.min_patch..=spec.max_patch);
        let ly = rng.gen_range(spec.min_patch..=spec.max_patch);
        let lz = rng.gen_range(spec.min_patch..=spec.max_patch);
        let center = match spec.center_sampling {
            CenterSampling::Foreground if !fg.is_empty() => fg[rng.gen_range(0..fg.len())],
            _ => (
                rng.gen_range(bbox.lo.0..=bbox.hi.0),
                rng.gen_range(bbox.lo.1..=bbox.hi.1),
                rng.gen_range(bbox.lo.2..=bbox.hi.2),
            ),
        };
        let value = u8::from(add);
        let span = |c: usize, l: usize, n: usize| -> (usize, usize) {
            let lo = c as isize - ((l - 1) / 2) as isize;
            let hi = lo + l as isize - 1;
            (lo.max(0) as usize, (hi.min(n as isize - 1)) as usize)
        };
        let (x0, x1) = span(center.0, lx, nx);
        let (y0, y1) = span(center.1, ly, ny);
        let (z0, z1) = span(center.2, lz, nz);
        for z in z0..=z1 {
            for y in y0..=y1 {
                let base = nx * (y + ny * z);
                out.data_mut()[base + x0..=base + x1].fill(value);
            }
        }
    }
    Ok(out)
}

/// Dice overlap signed by whether the input is larger (+) or smaller (-)
/// than the target: `sgn(|I|-|T|) * 2|I∩T| / (|I|+|T|)`.
///
/// `sgn(0)` is taken as +1 so a perfect input scores +1; two empty masks
/// also score +1.
pub fn signed_dice(input: &VoxelMask, target: &VoxelMask) -> Result<f64> {
    if input.dims() != target.dims() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?}", target.dims()),
            got: format!("{:?}", input.dims()),
        });
    }
    let mut ni = 0u64;
    let mut nt = 0u64;
    let mut overlap = 0u64;
    for (&a, &b) in input.data().iter().zip(target.data()) {
        ni += a as u64;
        nt += b as u64;
        overlap += (a & b) as u64;
    }
    if ni + nt == 0 {
        return Ok(1.0);
    }
    let sign = if ni >= nt { 1.0 } else { -1.0 };
    Ok(sign * 2.0 * overlap as f64 / (ni + nt) as f64)
}

/// Equal-width histogram of signed Dice values over [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationHistogram {
    pub counts: Vec<usize>,
    pub min_observed: f64,
    pub max_observed: f64,
    pub total: usize,
}

impl CalibrationHistogram {
    /// Fraction of samples in each bin; all zeros when empty.
    pub fn fractions(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts
            .iter()
            .map(|&c| c as f64 / self.total as f64)
            .collect()
    }
}

/// Corrupts each target `samples_per_target` times and bins the signed Dice
/// of (corrupted, target) pairs. Corruption seeds are drawn one `u64` per
/// sample from a ChaCha8 stream over `seed`, in (target, sample) loop order.
///
/// An exact zero keeps its sign: -0.0 (input strictly smaller, zero
/// overlap) falls in the bin left of zero, +0.0 in the bin right of it.
pub fn calibration_histogram(
    targets: &[VoxelMask],
    spec: &NoiseSpec,
    samples_per_target: usize,
    bins: usize,
    seed: RngSeed,
) -> Result<CalibrationHistogram> {
    if bins < 2 {
        return Err(Error::InvalidArgument("need at least 2 bins".into()));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("need at least one target".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed.0);
    let mut hist = CalibrationHistogram {
        counts: vec![0; bins],
        min_observed: f64::INFINITY,
        max_observed: f64::NEG_INFINITY,
        total: 0,
    };
    for target in targets {
        for _ in 0..samples_per_target {
            let s = RngSeed(master.next_u64());
            let corrupted = corrupt_mask(target, spec, s)?;
            let v = signed_dice(&corrupted, target)?;
            let idx = if v == 0.0 && v.is_sign_negative() {
                bins / 2 - 1
            } else {
                (((v + 1.0) / 2.0 * bins as f64).floor() as usize).min(bins - 1)
            };
            hist.counts[idx] += 1;
            hist.min_observed = hist.min_observed.min(v);
            hist.max_observed = hist.max_observed.max(v);
            hist.total += 1;
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxelgrid::Spacing;

    fn unit() -> Spacing {
        Spacing::isotropic(1.0).unwrap()
    }

    fn ball(n: usize, r: f64) -> VoxelMask {
        let mut m = VoxelMask::zeros((n, n, n), unit()).unwrap();
        let c = n as f64 / 2.0;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let d = [x, y, z]
                        .iter()
                        .map(|&i| (i as f64 + 0.5 - c).powi(2))
                        .sum::<f64>();
                    if d <= r * r {
                        m.set(x, y, z, 1);
                    }
                }
            }
        }
        m
    }

    fn full_cube(n: usize) -> VoxelMask {
        let mut m = VoxelMask::zeros((n, n, n), unit()).unwrap();
        m.data_mut().fill(1);
        m
    }

    fn default_spec() -> NoiseSpec {
        NoiseSpec {
            max_patches: 4,
            min_patch: 3,
            max_patch: 7,
            center_sampling: CenterSampling::Foreground,
        }
    }

    /// Independent re-implementation of the documented draw protocol,
    /// written patch-by-patch with per-voxel writes instead of row fills.
    fn oracle_corrupt(target: &VoxelMask, spec: &NoiseSpec, seed: RngSeed) -> VoxelMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
        let (nx, ny, nz) = target.dims();
        let fg = target.foreground_voxels();
        let bbox = tight_bounding_box(target).unwrap_or(BoundingBox {
            lo: (0, 0, 0),
            hi: (nx - 1, ny - 1, nz - 1),
        });
        let mut out = target.clone();
        let n = rng.gen_range(1..=spec.max_patches);
        for _ in 0..n {
            let add = rng.gen_range(0..2u32) == 1;
            let sides = [
                rng.gen_range(spec.min_patch..=spec.max_patch),
                rng.gen_range(spec.min_patch..=spec.max_patch),
                rng.gen_range(spec.min_patch..=spec.max_patch),
            ];
            let center = match spec.center_sampling {
                CenterSampling::Foreground if !fg.is_empty() => {
                    let (a, b, c) = fg[rng.gen_range(0..fg.len())];
                    [a, b, c]
                }
                _ => [
                    rng.gen_range(bbox.lo.0..=bbox.hi.0),
                    rng.gen_range(bbox.lo.1..=bbox.hi.1),
                    rng.gen_range(bbox.lo.2..=bbox.hi.2),
                ],
            };
            let dims = [nx, ny, nz];
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let inside = [x, y, z].iter().enumerate().all(|(a, &i)| {
                            let lo = center[a] as isize - ((sides[a] - 1) / 2) as isize;
                            let hi = lo + sides[a] as isize - 1;
                            let _ = dims[a];
                            (i as isize) >= lo && (i as isize) <= hi
                        });
                        if inside {
                            out.set(x, y, z, u8::from(add));
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn corruption_is_deterministic_per_seed() {
        let t = ball(16, 5.0);
        let a = corrupt_mask(&t, &default_spec(), RngSeed(42)).unwrap();
        let b = corrupt_mask(&t, &default_spec(), RngSeed(42)).unwrap();
        assert_eq!(a, b);
        let c = corrupt_mask(&t, &default_spec(), RngSeed(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn corruption_preserves_dims_spacing_and_binarity() {
        let t = ball(16, 5.0);
        for seed in 0..32 {
            let out = corrupt_mask(&t, &default_spec(), RngSeed(seed)).unwrap();
            assert_eq!(out.dims(), t.dims());
            assert_eq!(out.spacing(), t.spacing());
            assert!(out.data().iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn full_cube_never_grows_and_removals_score_nonpositive() {
        // On a full cube every add is a no-op, so outputs that differ from
        // the target must have lost voxels (the rejection step skips the
        // unchanged ones).
        let t = full_cube(16);
        let spec = NoiseSpec {
            max_patches: 3,
            min_patch: 2,
            max_patch: 6,
            center_sampling: CenterSampling::Foreground,
        };
        let mut accepted = 0;
        for seed in 0..64 {
            let out = corrupt_mask(&t, &spec, RngSeed(seed)).unwrap();
            assert!(out.foreground_count() <= t.foreground_count());
            if out != t {
                accepted += 1;
                assert!(signed_dice(&out, &t).unwrap() <= 0.0);
            }
        }
        assert!(accepted > 10, "rejection wrapper accepted only {accepted}");
    }

    #[test]
    fn matches_independent_sampler_reimplementation() {
        let t = ball(32, 6.0);
        let spec = default_spec();
        for seed in 0..100 {
            let got = corrupt_mask(&t, &spec, RngSeed(seed)).unwrap();
            let expect = oracle_corrupt(&t, &spec, RngSeed(seed));
            assert_eq!(got, expect, "seed {seed}");
        }
        // bounding-box mode as well
        let spec = NoiseSpec {
            center_sampling: CenterSampling::BoundingBox,
            ..spec
        };
        for seed in 100..160 {
            assert_eq!(
                corrupt_mask(&t, &spec, RngSeed(seed)).unwrap(),
                oracle_corrupt(&t, &spec, RngSeed(seed)),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn empty_target_falls_back_to_full_grid() {
        let t = VoxelMask::zeros((8, 8, 8), unit()).unwrap();
        let spec = NoiseSpec {
            max_patches: 2,
            min_patch: 2,
            max_patch: 3,
            center_sampling: CenterSampling::Foreground,
        };
        // must not error; add patches may appear anywhere in the grid
        let mut any_fg = false;
        for seed in 0..16 {
            let out = corrupt_mask(&t, &spec, RngSeed(seed)).unwrap();
            any_fg |= out.foreground_count() > 0;
        }
        assert!(any_fg);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let t = ball(8, 3.0);
        let bad = NoiseSpec {
            max_patches: 0,
            min_patch: 1,
            max_patch: 1,
            center_sampling: CenterSampling::Foreground,
        };
        assert!(corrupt_mask(&t, &bad, RngSeed(0)).is_err());
        let bad = NoiseSpec {
            max_patches: 1,
            min_patch: 5,
            max_patch: 2,
            center_sampling: CenterSampling::Foreground,
        };
        assert!(corrupt_mask(&t, &bad, RngSeed(0)).is_err());
    }

    #[test]
    fn signed_dice_identity_and_containment() {
        let t = ball(16, 5.0);
        assert_eq!(signed_dice(&t, &t).unwrap(), 1.0);

        // attach a block so |I| = 2|T|, T ⊂ I -> +2/3
        let nt = t.foreground_count();
        let mut grown = t.clone();
        let mut added = 0;
        'outer: for z in 0..16 {
            for y in 0..16 {
                for x in 0..16 {
                    if added == nt {
                        break 'outer;
                    }
                    if grown.get(x, y, z) == 0 {
                        grown.set(x, y, z, 1);
                        added += 1;
                    }
                }
            }
        }
        assert_eq!(added, nt);
        let v = signed_dice(&grown, &t).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);

        // shrink to half: |I| = |T|/2, I ⊂ T -> -2/3
        let mut half = t.clone();
        let mut removed = 0;
        for v in half.data_mut().iter_mut() {
            if *v == 1 && removed < nt / 2 {
                *v = 0;
                removed += 1;
            }
        }
        assert_eq!(nt % 2, 0, "test ball should have even volume");
        let v = signed_dice(&half, &t).unwrap();
        assert!((v + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn signed_dice_conventions_and_errors() {
        let e = VoxelMask::zeros((4, 4, 4), unit()).unwrap();
        assert_eq!(signed_dice(&e, &e).unwrap(), 1.0);
        let other = VoxelMask::zeros((4, 4, 5), unit()).unwrap();
        assert!(signed_dice(&e, &other).is_err());
    }

    #[test]
    fn signed_dice_magnitude_is_plain_dice_with_correct_sign() {
        let t = ball(16, 5.0);
        for seed in 0..24 {
            let i = corrupt_mask(&t, &default_spec(), RngSeed(seed)).unwrap();
            let v = signed_dice(&i, &t).unwrap();
            assert!((-1.0..=1.0).contains(&v));
            let (ni, nt) = (i.foreground_count(), t.foreground_count());
            if ni > nt {
                assert!(v >= 0.0);
            }
            if ni < nt {
                assert!(v <= 0.0);
            }
        }
    }

    #[test]
    fn histogram_zero_samples_is_all_zero() {
        let t = ball(8, 3.0);
        let h = calibration_histogram(&[t], &default_spec(), 0, 10, RngSeed(1)).unwrap();
        assert!(h.counts.iter().all(|&c| c == 0));
        assert_eq!(h.total, 0);
    }

    #[test]
    fn single_voxel_patches_land_in_extreme_bins() {
        // One-voxel adds on foreground centers change nothing (score +1);
        // one-voxel removals nick a large ball (score just above -1). All
        // mass therefore sits in the two outermost bins.
        let t = ball(32, 8.0);
        let spec = NoiseSpec {
            max_patches: 2,
            min_patch: 1,
            max_patch: 1,
            center_sampling: CenterSampling::Foreground,
        };
        let h = calibration_histogram(&[t], &spec, 200, 10, RngSeed(5)).unwrap();
        let interior: usize = h.counts[1..9].iter().sum();
        assert_eq!(interior, 0, "counts: {:?}", h.counts);
        assert!(h.counts[0] > 0 && h.counts[9] > 0);
    }

    #[test]
    fn histogram_is_deterministic() {
        let t = ball(16, 5.0);
        let a = calibration_histogram(&[t.clone()], &default_spec(), 50, 10, RngSeed(3)).unwrap();
        let b = calibration_histogram(&[t], &default_spec(), 50, 10, RngSeed(3)).unwrap();
        assert_eq!(a, b);
    }
}
