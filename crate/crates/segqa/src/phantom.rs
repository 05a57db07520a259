//! Synthetic multi-organ anatomies and controlled degradations, standing
//! in for clinical data: parametric shapes with per-case jitter produce
//! ground-truth masks, and degradations with known true Dice produce
//! labeled "auto-segmentation" test sets.
//!
//! Organ realism is not a goal; shapes only need plausible sizes,
//! adjacency and left/right symmetry so a multi-organ denoiser can exploit
//! neighboring-organ context. Mirrored organs are rasterized by evaluating
//! the base shape at the mirrored voxel index, which makes left/right
//! pairs exact mirror images when jitter is zero.

use crate::corrupt::{corrupt_mask, CenterSampling, NoiseSpec, RngSeed};
use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::voxelgrid::{
    center_of_mass, tight_bounding_box, write_omv, Axis, MultiChannelVolume, Spacing, VoxelMask,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnatomyLayout {
    /// Seven pelvis-like organs: one large ellipsoid, a mirrored sphere
    /// pair, three midline ellipsoids/tubes and a thin tube.
    PelvisLike7,
    /// Two mirrored bean shapes.
    KidneyLike2,
}

/// Parametric anatomy description. Shape parameters live in relative
/// coordinates of the grid; `jitter` scales the per-case randomization of
/// centers, radii and tube phases.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnatomySpec {
    pub layout: AnatomyLayout,
    pub dims: (usize, usize, usize),
    pub spacing: Spacing,
    pub jitter: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
enum ShapeKind {
    Ellipsoid {
        center: [f64; 3],
        radii: [f64; 3],
    },
    /// z-aligned tube with a sinusoidal x-offset.
    Tube {
        center_xy: [f64; 2],
        radius: f64,
        z_range: [f64; 2],
        wobble: f64,
    },
    /// Ellipsoid with a spherical dent (bean profile).
    Bean {
        center: [f64; 3],
        radii: [f64; 3],
        dent_center: [f64; 3],
        dent_radius: f64,
    },
}

#[derive(Debug, Clone)]
struct OrganTemplate {
    name: &'static str,
    shape: ShapeKind,
    /// Evaluate at the x-mirrored voxel index (left/right pair partner).
    mirrored: bool,
}

fn pelvis_like_7() -> Vec<OrganTemplate> {
    vec![
        OrganTemplate {
            name: "bladder",
            shape: ShapeKind::Ellipsoid {
                center: [0.50, 0.40, 0.66],
                radii: [0.16, 0.12, 0.11],
            },
            mirrored: false,
        },
        OrganTemplate {
            name: "femoral_head_l",
            shape: ShapeKind::Ellipsoid {
                center: [0.19, 0.48, 0.42],
                radii: [0.095, 0.095, 0.095],
            },
            mirrored: false,
        },
        OrganTemplate {
            name: "femoral_head_r",
            shape: ShapeKind::Ellipsoid {
                center: [0.19, 0.48, 0.42],
                radii: [0.095, 0.095, 0.095],
            },
            mirrored: true,
        },
        OrganTemplate {
            name: "penile_bulb",
            shape: ShapeKind::Ellipsoid {
                center: [0.50, 0.36, 0.14],
                radii: [0.075, 0.055, 0.050],
            },
            mirrored: false,
        },
        OrganTemplate {
            name: "prostate",
            shape: ShapeKind::Ellipsoid {
                center: [0.50, 0.44, 0.40],
                radii: [0.095, 0.085, 0.075],
            },
            mirrored: false,
        },
        OrganTemplate {
            name: "rectum",
            shape: ShapeKind::Tube {
                center_xy: [0.50, 0.66],
                radius: 0.048,
                z_range: [0.12, 0.68],
                wobble: 0.025,
            },
            mirrored: false,
        },
        OrganTemplate {
            name: "urethra",
            shape: ShapeKind::Tube {
                center_xy: [0.50, 0.27],
                radius: 0.040,
                z_range: [0.16, 0.34],
                wobble: 0.012,
            },
            mirrored: false,
        },
    ]
}

fn kidney_like_2() -> Vec<OrganTemplate> {
    vec![
        OrganTemplate {
            name: "kidney_l",
            shape: ShapeKind::Bean {
                center: [0.30, 0.50, 0.50],
                radii: [0.13, 0.11, 0.17],
                dent_center: [0.41, 0.50, 0.50],
                dent_radius: 0.07,
            },
            mirrored: false,
        },
        OrganTemplate {
            name: "kidney_r",
            shape: ShapeKind::Bean {
                center: [0.30, 0.50, 0.50],
                radii: [0.13, 0.11, 0.17],
                dent_center: [0.41, 0.50, 0.50],
                dent_radius: 0.07,
            },
            mirrored: true,
        },
    ]
}

impl AnatomyLayout {
    pub fn organ_names(&self) -> Vec<String> {
        let templates = match self {
            AnatomyLayout::PelvisLike7 => pelvis_like_7(),
            AnatomyLayout::KidneyLike2 => kidney_like_2(),
        };
        templates.iter().map(|t| t.name.to_string()).collect()
    }

    /// Channel index pairs exchanged by a left/right flip.
    pub fn mirror_pairs(&self) -> Vec<(usize, usize)> {
        match self {
            AnatomyLayout::PelvisLike7 => vec![(1, 2)],
            AnatomyLayout::KidneyLike2 => vec![(0, 1)],
        }
    }
}

/// One jittered shape instance in physical coordinates.
struct PlacedShape {
    kind: ShapeKind,
    mirrored: bool,
}

impl PlacedShape {
    fn contains(&self, p: [f64; 3]) -> bool {
        match &self.kind {
            ShapeKind::Ellipsoid { center, radii } => {
                let mut acc = 0.0;
                for a in 0..3 {
                    let d = (p[a] - center[a]) / radii[a];
                    acc += d * d;
                }
                acc <= 1.0
            }
            ShapeKind::Tube {
                center_xy,
                radius,
                z_range,
                wobble,
            } => {
                if p[2] < z_range[0] || p[2] > z_range[1] {
                    return false;
                }
                let span = (z_range[1] - z_range[0]).max(1e-9);
                let phase = (p[2] - z_range[0]) / span * std::f64::consts::TAU;
                let cx = center_xy[0] + wobble * phase.sin();
                let dx = p[0] - cx;
                let dy = p[1] - center_xy[1];
                dx * dx + dy * dy <= radius * radius
            }
            ShapeKind::Bean {
                center,
                radii,
                dent_center,
                dent_radius,
            } => {
                let mut acc = 0.0;
                for a in 0..3 {
                    let d = (p[a] - center[a]) / radii[a];
                    acc += d * d;
                }
                if acc > 1.0 {
                    return false;
                }
                let mut dd = 0.0;
                for a in 0..3 {
                    let d = p[a] - dent_center[a];
                    dd += d * d;
                }
                dd > dent_radius * dent_radius
            }
        }
    }
}

/// Jitters and scales a template into physical coordinates. Draw order per
/// organ: 3 center offsets, 3 radius scales, then (tubes only) 1 wobble
/// scale.
fn place_template(
    t: &OrganTemplate,
    extent: [f64; 3],
    jitter: f64,
    rng: &mut ChaCha8Rng,
    min_tube_radius: f64,
) -> PlacedShape {
    let mut center_off = [0.0f64; 3];
    for c in &mut center_off {
        *c = rng.gen_range(-1.0..1.0) * jitter;
    }
    let mut radius_scale = [0.0f64; 3];
    for r in &mut radius_scale {
        *r = 1.0 + rng.gen_range(-1.0..1.0) * jitter * 2.0;
    }
    let kind = match &t.shape {
        ShapeKind::Ellipsoid { center, radii } => ShapeKind::Ellipsoid {
            center: std::array::from_fn(|a| (center[a] + center_off[a]) * extent[a]),
            radii: std::array::from_fn(|a| radii[a] * radius_scale[a] * extent[a]),
        },
        ShapeKind::Tube {
            center_xy,
            radius,
            z_range,
            wobble,
        } => {
            let wobble_scale = 1.0 + rng.gen_range(-1.0..1.0) * jitter * 2.0;
            ShapeKind::Tube {
                center_xy: [
                    (center_xy[0] + center_off[0]) * extent[0],
                    (center_xy[1] + center_off[1]) * extent[1],
                ],
                radius: (radius * radius_scale[0] * extent[0].min(extent[1]))
                    .max(min_tube_radius),
                z_range: [
                    (z_range[0] + center_off[2]).max(0.0) * extent[2],
                    (z_range[1] + center_off[2]).min(1.0) * extent[2],
                ],
                wobble: wobble * wobble_scale * extent[0],
            }
        }
        ShapeKind::Bean {
            center,
            radii,
            dent_center,
            dent_radius,
        } => ShapeKind::Bean {
            center: std::array::from_fn(|a| (center[a] + center_off[a]) * extent[a]),
            radii: std::array::from_fn(|a| radii[a] * radius_scale[a] * extent[a]),
            dent_center: std::array::from_fn(|a| (dent_center[a] + center_off[a]) * extent[a]),
            dent_radius: dent_radius * extent[0],
        },
    };
    PlacedShape {
        kind,
        mirrored: t.mirrored,
    }
}

/// Generates one ground-truth anatomy. Channels are pairwise disjoint by
/// construction (earlier channels claim voxels first) and each nonempty;
/// identical specs produce identical volumes.
pub fn generate_anatomy(spec: &AnatomySpec) -> Result<MultiChannelVolume> {
    let templates = match spec.layout {
        AnatomyLayout::PelvisLike7 => pelvis_like_7(),
        AnatomyLayout::KidneyLike2 => kidney_like_2(),
    };
    let (nx, ny, nz) = spec.dims;
    let s = spec.spacing;
    let extent = [nx as f64 * s.sx, ny as f64 * s.sy, nz as f64 * s.sz];
    // guarantees every tube slice hits at least one voxel center
    let min_tube_radius = 0.51 * (s.sx * s.sx + s.sy * s.sy).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let placed: Vec<PlacedShape> = templates
        .iter()
        .map(|t| place_template(t, extent, spec.jitter, &mut rng, min_tube_radius))
        .collect();

    let names: Vec<String> = templates.iter().map(|t| t.name.to_string()).collect();
    let mut vol = MultiChannelVolume::zeros(names, spec.dims, s)?;
    let n_vox = vol.voxels_per_channel();
    let mut claimed = vec![false; n_vox];
    for (c, shape) in placed.iter().enumerate() {
        let mut any = false;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let idx = x + nx * (y + ny * z);
                    if claimed[idx] {
                        continue;
                    }
                    let ex = if shape.mirrored { nx - 1 - x } else { x };
                    let p = [
                        (ex as f64 + 0.5) * s.sx,
                        (y as f64 + 0.5) * s.sy,
                        (z as f64 + 0.5) * s.sz,
                    ];
                    if shape.contains(p) {
                        vol.values_mut()[c * n_vox + idx] = 1.0;
                        claimed[idx] = true;
                        any = true;
                    }
                }
            }
        }
        if !any {
            return Err(Error::InvalidArgument(format!(
                "organ {} does not fit the grid {:?}",
                vol.channel_names()[c],
                spec.dims
            )));
        }
    }
    Ok(vol)
}

/// Morphological erosion by the 6-connectivity ball of radius `k`
/// (k iterations of the unit cross). Voxels outside the grid count as
/// background.
pub fn erode(mask: &VoxelMask, k: usize) -> VoxelMask {
    let mut cur = mask.clone();
    for _ in 0..k {
        cur = erode_once(&cur);
    }
    cur
}

/// Morphological dilation by the 6-connectivity ball of radius `k`.
pub fn dilate(mask: &VoxelMask, k: usize) -> VoxelMask {
    let mut cur = mask.clone();
    for _ in 0..k {
        cur = dilate_once(&cur);
    }
    cur
}

fn erode_once(mask: &VoxelMask) -> VoxelMask {
    let (nx, ny, nz) = mask.dims();
    let mut out = VoxelMask::zeros(mask.dims(), mask.spacing()).expect("dims valid");
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) == 0 {
                    continue;
                }
                let interior = x > 0
                    && x + 1 < nx
                    && y > 0
                    && y + 1 < ny
                    && z > 0
                    && z + 1 < nz
                    && mask.get(x - 1, y, z) == 1
                    && mask.get(x + 1, y, z) == 1
                    && mask.get(x, y - 1, z) == 1
                    && mask.get(x, y + 1, z) == 1
                    && mask.get(x, y, z - 1) == 1
                    && mask.get(x, y, z + 1) == 1;
                if interior {
                    out.set(x, y, z, 1);
                }
            }
        }
    }
    out
}

fn dilate_once(mask: &VoxelMask) -> VoxelMask {
    let (nx, ny, nz) = mask.dims();
    let mut out = mask.clone();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) == 0 {
                    continue;
                }
                if x > 0 {
                    out.set(x - 1, y, z, 1);
                }
                if x + 1 < nx {
                    out.set(x + 1, y, z, 1);
                }
                if y > 0 {
                    out.set(x, y - 1, z, 1);
                }
                if y + 1 < ny {
                    out.set(x, y + 1, z, 1);
                }
                if z > 0 {
                    out.set(x, y, z - 1, 1);
                }
                if z + 1 < nz {
                    out.set(x, y, z + 1, 1);
                }
            }
        }
    }
    out
}

/// Controlled mask degradation with a known severity.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DegradationMode {
    /// Unchanged copy (the "accurate" fraction of a dataset).
    Identity,
    Erode { k: usize },
    Dilate { k: usize },
    /// Zeroes `fraction` of the foreground extent along `axis`, from the
    /// low-index end.
    TruncatePlane { axis: Axis, fraction: f64 },
    /// Zeroes a slab of `thickness` z-slices through the centroid.
    CutGap { thickness: usize },
    PatchNoise { spec: NoiseSpec },
}

impl DegradationMode {
    pub fn label(&self) -> String {
        match self {
            DegradationMode::Identity => "identity".into(),
            DegradationMode::Erode { k } => format!("erode({k})"),
            DegradationMode::Dilate { k } => format!("dilate({k})"),
            DegradationMode::TruncatePlane { axis, fraction } => {
                format!("truncate({axis};{fraction})")
            }
            DegradationMode::CutGap { thickness } => format!("cutgap({thickness})"),
            DegradationMode::PatchNoise { .. } => "patchnoise".into(),
        }
    }

    /// Gross shape errors, the subset the statistical baseline is expected
    /// to catch.
    pub fn is_shape_error(&self) -> bool {
        matches!(
            self,
            DegradationMode::Erode { .. } | DegradationMode::TruncatePlane { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DegradationSpec {
    pub mode: DegradationMode,
    pub seed: u64,
}

/// Applies a degradation and reports the resulting true Dice against the
/// input.
pub fn degrade(gt: &VoxelMask, spec: &DegradationSpec) -> Result<(VoxelMask, f64)> {
    if gt.is_empty() {
        return Err(Error::EmptyForeground("cannot degrade an empty mask".into()));
    }
    let degraded = match &spec.mode {
        DegradationMode::Identity => gt.clone(),
        DegradationMode::Erode { k } => erode(gt, *k),
        DegradationMode::Dilate { k } => dilate(gt, *k),
        DegradationMode::TruncatePlane { axis, fraction } => {
            if !(0.0..=1.0).contains(fraction) {
                return Err(Error::InvalidArgument(format!(
                    "truncate fraction {fraction} outside [0,1]"
                )));
            }
            let bbox = tight_bounding_box(gt)?;
            let (lo, hi) = match axis {
                Axis::X => (bbox.lo.0, bbox.hi.0),
                Axis::Y => (bbox.lo.1, bbox.hi.1),
                Axis::Z => (bbox.lo.2, bbox.hi.2),
            };
            let extent = hi - lo + 1;
            let cut = ((extent as f64) * fraction).round() as usize;
            let mut out = gt.clone();
            let (nx, ny, nz) = gt.dims();
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let coord = match axis {
                            Axis::X => x,
                            Axis::Y => y,
                            Axis::Z => z,
                        };
                        if coord >= lo && coord < lo + cut {
                            out.set(x, y, z, 0);
                        }
                    }
                }
            }
            out
        }
        DegradationMode::CutGap { thickness } => {
            if *thickness == 0 {
                return Err(Error::InvalidArgument(
                    "cutgap thickness must be >= 1".into(),
                ));
            }
            let com = center_of_mass(gt)?;
            let cz = (com[2] / gt.spacing().sz - 0.5).floor() as isize;
            let z0 = cz - ((*thickness as isize - 1) / 2);
            let mut out = gt.clone();
            let (nx, ny, nz) = gt.dims();
            for dz in 0..*thickness as isize {
                let z = z0 + dz;
                if z < 0 || z >= nz as isize {
                    continue;
                }
                for y in 0..ny {
                    for x in 0..nx {
                        out.set(x, y, z as usize, 0);
                    }
                }
            }
            out
        }
        DegradationMode::PatchNoise { spec: noise } => corrupt_mask(gt, noise, RngSeed(spec.seed))?,
    };
    let true_dice = dice(&degraded, gt)?;
    Ok((degraded, true_dice))
}

/// One manifest row of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub case_id: String,
    pub organ: String,
    pub true_dice: f64,
    pub degradation: String,
}

pub fn manifest_to_csv(rows: &[ManifestRow]) -> String {
    let mut out = String::from("case_id,organ,true_dice,degradation\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.case_id, r.organ, r.true_dice, r.degradation
        ));
    }
    out
}

pub fn manifest_from_csv(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("case_id,organ,true_dice,degradation") {
        return Err(Error::SchemaMismatch("unexpected manifest header".into()));
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [case_id, organ, true_dice, degradation] = fields[..] else {
            return Err(Error::SchemaMismatch(format!(
                "manifest line {}: expected 4 fields",
                ln + 2
            )));
        };
        rows.push(ManifestRow {
            case_id: case_id.to_string(),
            organ: organ.to_string(),
            true_dice: true_dice.parse().map_err(|_| {
                Error::SchemaMismatch(format!("manifest line {}: bad dice", ln + 2))
            })?,
            degradation: degradation.to_string(),
        });
    }
    Ok(rows)
}

/// Degradation menu for test-set generation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DegradationMix {
    /// Probability that a (case, organ) pair is degraded at all.
    pub degraded_fraction: f64,
}

impl DegradationMix {
    /// Draws a degradation for one organ. Draw order: 1 uniform for the
    /// identity gate, then 1 menu index, then the mode's own parameters.
    fn draw(&self, rng: &mut ChaCha8Rng, noise: &NoiseSpec) -> DegradationMode {
        if rng.gen_range(0.0..1.0) >= self.degraded_fraction {
            return DegradationMode::Identity;
        }
        match rng.gen_range(0..5u32) {
            0 => DegradationMode::Erode {
                k: rng.gen_range(1..=2),
            },
            1 => DegradationMode::Dilate {
                k: rng.gen_range(2..=3),
            },
            2 => DegradationMode::TruncatePlane {
                axis: Axis::Z,
                fraction: rng.gen_range(0.35..0.65),
            },
            3 => DegradationMode::CutGap {
                thickness: rng.gen_range(2..=4),
            },
            _ => DegradationMode::PatchNoise { spec: *noise },
        }
    }
}

/// A generated labeled dataset (rows mirror the on-disk manifest).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub rows: Vec<ManifestRow>,
}

/// Writes `count` clean ground-truth anatomies (`<prefix><idx>_gt.omv`).
/// Per-case anatomy seeds derive from `spec.seed + case index`.
pub fn write_clean_set(
    out_dir: &Path,
    prefix: &str,
    spec: &AnatomySpec,
    count: usize,
) -> Result<Vec<MultiChannelVolume>> {
    std::fs::create_dir_all(out_dir)?;
    let mut volumes = Vec::with_capacity(count);
    for i in 0..count {
        let case_spec = AnatomySpec {
            seed: spec.seed.wrapping_add(i as u64),
            ..spec.clone()
        };
        let vol = generate_anatomy(&case_spec)?;
        write_omv(&vol, &out_dir.join(format!("{prefix}{i:03}_gt.omv")))?;
        volumes.push(vol);
    }
    Ok(volumes)
}

/// Generates a labeled test set: per case a ground-truth anatomy and a
/// degraded auto-segmentation, written as OMV pairs plus a manifest CSV.
///
/// Degradations are drawn per organ from the mix. When an organ ends up
/// with a single label class across the whole set (per the thresholds),
/// its degradations are redrawn with a shifted seed, at most 20 times.
/// Everything derives from `master_seed`, so reruns are byte-identical.
pub fn build_dataset(
    out_dir: &Path,
    anatomy: &AnatomySpec,
    count: usize,
    mix: &DegradationMix,
    noise: &BTreeMap<String, NoiseSpec>,
    thresholds: &BTreeMap<String, f64>,
    master_seed: u64,
) -> Result<Dataset> {
    std::fs::create_dir_all(out_dir)?;
    let organ_names = anatomy.layout.organ_names();

    // per-case anatomies
    let mut gts = Vec::with_capacity(count);
    for i in 0..count {
        let case_spec = AnatomySpec {
            seed: master_seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64),
            ..anatomy.clone()
        };
        gts.push(generate_anatomy(&case_spec)?);
    }

    // per-organ degradation assignment with bounded label-balance retries
    let mut modes: Vec<Vec<DegradationMode>> = vec![Vec::new(); count];
    for (c, organ) in organ_names.iter().enumerate() {
        let organ_noise = noise.get(organ).copied().unwrap_or(NoiseSpec {
            max_patches: 4,
            min_patch: 2,
            max_patch: 8,
            center_sampling: CenterSampling::Foreground,
        });
        let threshold = thresholds.get(organ).copied().unwrap_or(0.8);
        let mut attempt = 0u64;
        loop {
            let mut rng = ChaCha8Rng::seed_from_u64(
                master_seed
                    .wrapping_add(1 + c as u64)
                    .wrapping_add(attempt.wrapping_mul(0x517C_C1B7)),
            );
            let drawn: Vec<DegradationMode> =
                (0..count).map(|_| mix.draw(&mut rng, &organ_noise)).collect();
            // dry-run the labels
            let mut seen = [false, false];
            for (i, mode) in drawn.iter().enumerate() {
                let gt_mask = gts[i].channel_as_mask(c);
                let spec = DegradationSpec {
                    mode: mode.clone(),
                    seed: master_seed.wrapping_add((i * organ_names.len() + c) as u64),
                };
                let (_, true_dice) = degrade(&gt_mask, &spec)?;
                seen[usize::from(true_dice < threshold)] = true;
            }
            if seen[0] && seen[1] {
                for (i, mode) in drawn.into_iter().enumerate() {
                    modes[i].push(mode);
                }
                break;
            }
            attempt += 1;
            if attempt > 20 {
                return Err(Error::InvalidArgument(format!(
                    "organ {organ}: could not draw both label classes in 20 attempts"
                )));
            }
        }
    }

    // materialize files and manifest
    let mut rows = Vec::new();
    for (i, gt) in gts.iter().enumerate() {
        let case_id = format!("case{i:03}");
        let mut auto = gt.clone();
        for (c, organ) in organ_names.iter().enumerate() {
            let gt_mask = gt.channel_as_mask(c);
            let spec = DegradationSpec {
                mode: modes[i][c].clone(),
                seed: master_seed.wrapping_add((i * organ_names.len() + c) as u64),
            };
            let (degraded, true_dice) = degrade(&gt_mask, &spec)?;
            auto.set_channel_from_mask(c, &degraded)?;
            rows.push(ManifestRow {
                case_id: case_id.clone(),
                organ: organ.clone(),
                true_dice,
                degradation: modes[i][c].label(),
            });
        }
        write_omv(gt, &out_dir.join(format!("{case_id}_gt.omv")))?;
        write_omv(&auto, &out_dir.join(format!("{case_id}_auto.omv")))?;
    }
    std::fs::write(out_dir.join("manifest.csv"), manifest_to_csv(&rows))?;
    Ok(Dataset { rows })
}
