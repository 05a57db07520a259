//! Geometry on masks and volumes: resampling, padding/cropping, flips,
//! rotations, centroids and bounding boxes.

use super::{Axis, BoundingBox, MultiChannelVolume, Spacing, VoxelMask};
use crate::error::{Error, Result};

/// Nearest voxel index along one axis for a physical coordinate `p`,
/// given spacing `s` and axis length `n`. Exact ties pick the lower index.
#[inline]
fn nearest_index(p: f64, s: f64, n: usize) -> usize {
    let q = p / s - 0.5;
    let hi = (n - 1) as f64;
    let a = q.floor().clamp(0.0, hi) as usize;
    let b = (q.floor() + 1.0).clamp(0.0, hi) as usize;
    let da = (p - (a as f64 + 0.5) * s).abs();
    let db = (p - (b as f64 + 0.5) * s).abs();
    if db < da {
        b
    } else {
        a
    }
}

/// Resamples a binary mask onto a new spacing with nearest-neighbor lookup.
///
/// Output dims are `round(dims * spacing / target)` (at least 1 per axis);
/// each output voxel takes the value of the input voxel whose center is
/// nearest in physical coordinates.
pub fn resample_nearest(mask: &VoxelMask, target: Spacing) -> VoxelMask {
    let (nx, ny, nz) = mask.dims();
    let s = mask.spacing();
    let out_dim = |n: usize, s_in: f64, s_out: f64| -> usize {
        ((n as f64 * s_in / s_out).round() as usize).max(1)
    };
    let (mx, my, mz) = (
        out_dim(nx, s.sx, target.sx),
        out_dim(ny, s.sy, target.sy),
        out_dim(nz, s.sz, target.sz),
    );

    // Per-axis source index tables; the 3D lookup factorizes.
    let table = |m: usize, s_out: f64, s_in: f64, n: usize| -> Vec<usize> {
        (0..m)
            .map(|i| nearest_index((i as f64 + 0.5) * s_out, s_in, n))
            .collect()
    };
    let tx = table(mx, target.sx, s.sx, nx);
    let ty = table(my, target.sy, s.sy, ny);
    let tz = table(mz, target.sz, s.sz, nz);

    let mut out = VoxelMask::zeros((mx, my, mz), target).expect("dims positive");
    for z in 0..mz {
        for y in 0..my {
            let src_base = nx * (ty[y] + ny * tz[z]);
            let dst_base = mx * (y + my * z);
            for x in 0..mx {
                out.data_mut()[dst_base + x] = mask.data()[src_base + tx[x]];
            }
        }
    }
    out
}

/// Per-axis copy window for centering `n` source voxels in `m` output voxels:
/// returns (src_start, dst_start, len). Excess is split evenly with the extra
/// voxel on the high-index side, for both padding and cropping.
#[inline]
fn center_window(n: usize, m: usize) -> (usize, usize, usize) {
    if m >= n {
        (0, (m - n) / 2, n)
    } else {
        ((n - m) / 2, 0, m)
    }
}

/// Pads or crops a mask to the requested dims, keeping the content centered.
/// Padding value is 0; axes larger than the target are center-cropped.
pub fn pad_or_crop_center(mask: &VoxelMask, size: (usize, usize, usize)) -> Result<VoxelMask> {
    let (nx, ny, _nz) = mask.dims();
    let (mx, my, _mz) = size;
    let (sx0, dx0, lx) = center_window(mask.dims().0, size.0);
    let (sy0, dy0, ly) = center_window(mask.dims().1, size.1);
    let (sz0, dz0, lz) = center_window(mask.dims().2, size.2);

    let mut out = VoxelMask::zeros(size, mask.spacing())?;
    for z in 0..lz {
        for y in 0..ly {
            let src = nx * ((sy0 + y) + mask.dims().1 * (sz0 + z)) + sx0;
            let dst = mx * ((dy0 + y) + my * (dz0 + z)) + dx0;
            let _ = (ny, my);
            out.data_mut()[dst..dst + lx].copy_from_slice(&mask.data()[src..src + lx]);
        }
    }
    Ok(out)
}

/// Center of mass of the union foreground across channels, in continuous
/// index coordinates (voxel `i` contributes `i`, i.e. centers minus 0.5).
fn union_com_index(vol: &MultiChannelVolume) -> Result<[f64; 3]> {
    let (nx, ny, nz) = vol.dims();
    let n = vol.voxels_per_channel();
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = x + nx * (y + ny * z);
                let fg = (0..vol.channel_count()).any(|c| vol.values()[c * n + idx] >= 0.5);
                if fg {
                    sum[0] += x as f64;
                    sum[1] += y as f64;
                    sum[2] += z as f64;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyForeground(
            "cannot locate center of mass of an empty volume".into(),
        ));
    }
    Ok([
        sum[0] / count as f64,
        sum[1] / count as f64,
        sum[2] / count as f64,
    ])
}

/// Crops a volume to `size`, centered (rounded down) on the center of mass of
/// the union foreground. The window is clamped to stay inside the volume and
/// zero-padded only where `size` exceeds the volume dims.
pub fn crop_about_foreground_com(
    vol: &MultiChannelVolume,
    size: (usize, usize, usize),
) -> Result<MultiChannelVolume> {
    let com = union_com_index(vol)?;
    let dims = [vol.dims().0, vol.dims().1, vol.dims().2];
    let want = [size.0, size.1, size.2];

    // (src_start, dst_start, len) per axis
    let mut win = [(0usize, 0usize, 0usize); 3];
    for a in 0..3 {
        let n = dims[a];
        let m = want[a];
        if m >= n {
            win[a] = (0, (m - n) / 2, n);
        } else {
            let c = com[a].floor() as isize;
            let lo = (c - (m / 2) as isize).clamp(0, (n - m) as isize) as usize;
            win[a] = (lo, 0, m);
        }
    }

    let mut out = MultiChannelVolume::zeros(vol.channel_names().to_vec(), size, vol.spacing())?;
    let (nx, ny) = (dims[0], dims[1]);
    let (mx, my) = (want[0], want[1]);
    let n_in = vol.voxels_per_channel();
    let n_out = out.voxels_per_channel();
    for c in 0..vol.channel_count() {
        for z in 0..win[2].2 {
            for y in 0..win[1].2 {
                let src =
                    c * n_in + nx * ((win[1].0 + y) + ny * (win[2].0 + z)) + win[0].0;
                let dst =
                    c * n_out + mx * ((win[1].1 + y) + my * (win[2].1 + z)) + win[0].1;
                let len = win[0].2;
                out.values_mut()[dst..dst + len]
                    .copy_from_slice(&vol.values()[src..src + len]);
            }
        }
    }
    Ok(out)
}

/// Mirrors a volume along an axis and exchanges the listed channel pairs
/// (e.g. left/right organs). Applying the same flip twice is the identity.
pub fn flip_axis(
    vol: &MultiChannelVolume,
    axis: Axis,
    channel_swap_pairs: &[(usize, usize)],
) -> Result<MultiChannelVolume> {
    let c_total = vol.channel_count();
    let mut swap: Vec<usize> = (0..c_total).collect();
    let mut seen = vec![false; c_total];
    for &(a, b) in channel_swap_pairs {
        if a >= c_total || b >= c_total {
            return Err(Error::InvalidArgument(format!(
                "channel swap pair ({a},{b}) out of range for {c_total} channels"
            )));
        }
        if a == b || seen[a] || seen[b] {
            return Err(Error::InvalidArgument(format!(
                "channel swap pairs must be disjoint, offending pair ({a},{b})"
            )));
        }
        seen[a] = true;
        seen[b] = true;
        swap[a] = b;
        swap[b] = a;
    }

    let (nx, ny, nz) = vol.dims();
    let n = vol.voxels_per_channel();
    let mut out = vol.clone();
    for c_out in 0..c_total {
        let c_in = swap[c_out];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let (sx, sy, sz) = match axis {
                        Axis::X => (nx - 1 - x, y, z),
                        Axis::Y => (x, ny - 1 - y, z),
                        Axis::Z => (x, y, nz - 1 - z),
                    };
                    out.values_mut()[c_out * n + x + nx * (y + ny * z)] =
                        vol.values()[c_in * n + sx + nx * (sy + ny * sz)];
                }
            }
        }
    }
    Ok(out)
}

/// Rotates a mask about the volume's physical center, resampling with
/// nearest-neighbor lookup. Voxels mapped from outside the field become 0.
pub fn rotate_mask(mask: &VoxelMask, axis: Axis, degrees: f64) -> VoxelMask {
    let (nx, ny, nz) = mask.dims();
    let s = mask.spacing();
    let center = [
        nx as f64 * s.sx / 2.0,
        ny as f64 * s.sy / 2.0,
        nz as f64 * s.sz / 2.0,
    ];
    let theta = -degrees.to_radians(); // inverse map: rotate output coords back
    let (cos_t, sin_t) = (theta.cos(), theta.sin());

    let mut out = VoxelMask::zeros(mask.dims(), s).expect("dims positive");
    let spacings = [s.sx, s.sy, s.sz];
    let dims = [nx, ny, nz];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [
                    (x as f64 + 0.5) * s.sx - center[0],
                    (y as f64 + 0.5) * s.sy - center[1],
                    (z as f64 + 0.5) * s.sz - center[2],
                ];
                let q = match axis {
                    Axis::X => [
                        p[0],
                        p[1] * cos_t - p[2] * sin_t,
                        p[1] * sin_t + p[2] * cos_t,
                    ],
                    Axis::Y => [
                        p[2] * sin_t + p[0] * cos_t,
                        p[1],
                        p[2] * cos_t - p[0] * sin_t,
                    ],
                    Axis::Z => [
                        p[0] * cos_t - p[1] * sin_t,
                        p[0] * sin_t + p[1] * cos_t,
                        p[2],
                    ],
                };
                let mut src = [0usize; 3];
                let mut inside = true;
                for a in 0..3 {
                    let coord = (q[a] + center[a]) / spacings[a] - 0.5;
                    let j = coord.round();
                    if j < 0.0 || j > (dims[a] - 1) as f64 {
                        inside = false;
                        break;
                    }
                    src[a] = j as usize;
                }
                if inside && mask.get(src[0], src[1], src[2]) != 0 {
                    out.set(x, y, z, 1);
                }
            }
        }
    }
    out
}

/// Mean of foreground voxel centers in millimeters.
pub fn center_of_mass(mask: &VoxelMask) -> Result<[f64; 3]> {
    let (nx, ny, nz) = mask.dims();
    let s = mask.spacing();
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) != 0 {
                    sum[0] += (x as f64 + 0.5) * s.sx;
                    sum[1] += (y as f64 + 0.5) * s.sy;
                    sum[2] += (z as f64 + 0.5) * s.sz;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyForeground(
            "cannot locate center of mass of an empty mask".into(),
        ));
    }
    Ok([
        sum[0] / count as f64,
        sum[1] / count as f64,
        sum[2] / count as f64,
    ])
}

/// Minimal enclosing index box of the foreground.
pub fn tight_bounding_box(mask: &VoxelMask) -> Result<BoundingBox> {
    let (nx, ny, nz) = mask.dims();
    let mut lo = (usize::MAX, usize::MAX, usize::MAX);
    let mut hi = (0usize, 0usize, 0usize);
    let mut any = false;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) != 0 {
                    any = true;
                    lo = (lo.0.min(x), lo.1.min(y), lo.2.min(z));
                    hi = (hi.0.max(x), hi.1.max(y), hi.2.max(z));
                }
            }
        }
    }
    if !any {
        return Err(Error::EmptyForeground(
            "cannot bound an empty foreground".into(),
        ));
    }
    Ok(BoundingBox { lo, hi })
}
