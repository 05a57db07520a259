//! Binary 3D mask representation, grid geometry and bit-exact file I/O.
//!
//! Everything downstream (corruption, networks, phantoms, scoring) moves
//! data around as [`VoxelMask`] / [`MultiChannelVolume`] values. Voxels are
//! addressed x-fastest: `idx = x + nx*(y + ny*z)`. The center of voxel
//! `(i,j,k)` sits at `((i+0.5)*sx, (j+0.5)*sy, (k+0.5)*sz)` in millimeters;
//! all physical-space geometry (resampling, rotation, centroids) uses that
//! convention.

mod omv;
mod ops;

pub use omv::{read_omv, write_omv, Encoding};
pub use ops::{
    center_of_mass, crop_about_foreground_com, flip_axis, pad_or_crop_center, resample_nearest,
    rotate_mask, tight_bounding_box,
};

use crate::error::{Error, Result};

/// Millimeters per voxel along x, y, z. All components strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Spacing {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Spacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        if !(sx > 0.0 && sy > 0.0 && sz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spacing components must be positive, got ({sx}, {sy}, {sz})"
            )));
        }
        Ok(Self { sx, sy, sz })
    }

    pub fn isotropic(s: f64) -> Result<Self> {
        Self::new(s, s, s)
    }

    /// Volume of one voxel in mm^3.
    pub fn voxel_volume(&self) -> f64 {
        self.sx * self.sy * self.sz
    }

    pub fn axis(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.sx,
            Axis::Y => self.sy,
            Axis::Z => self.sz,
        }
    }
}

/// Grid axis selector used by flips, rotations and degradations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::X => write!(f, "x"),
            Axis::Y => write!(f, "y"),
            Axis::Z => write!(f, "z"),
        }
    }
}

/// A binary 3D grid with physical spacing. One byte per voxel, values 0/1.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMask {
    dims: (usize, usize, usize),
    spacing: Spacing,
    data: Vec<u8>,
}

impl VoxelMask {
    /// All-background mask of the given dimensions.
    pub fn zeros(dims: (usize, usize, usize), spacing: Spacing) -> Result<Self> {
        let (nx, ny, nz) = dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dims must be positive, got {dims:?}"
            )));
        }
        let n = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))?;
        Ok(Self {
            dims,
            spacing,
            data: vec![0u8; n],
        })
    }

    /// Builds a mask from raw voxel data (x-fastest). Every byte must be 0 or 1.
    pub fn from_data(dims: (usize, usize, usize), spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        let mut mask = Self::zeros(dims, spacing)?;
        if data.len() != mask.data.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} voxels", mask.data.len()),
                got: format!("{}", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "mask voxel value {v} outside {{0,1}}"
            )));
        }
        mask.data = data;
        Ok(mask)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims.0 && y < self.dims.1 && z < self.dims.2);
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: u8) {
        debug_assert!(value <= 1);
        let idx = self.index(x, y, z);
        self.data[idx] = value;
    }

    /// Count of foreground voxels.
    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Indices of all foreground voxels in x-fastest scan order.
    pub fn foreground_voxels(&self) -> Vec<(usize, usize, usize)> {
        let (nx, ny, nz) = self.dims;
        let mut out = Vec::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if self.get(x, y, z) != 0 {
                        out.push((x, y, z));
                    }
                }
            }
        }
        out
    }
}

/// Inclusive voxel-index box; `lo <= hi` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub lo: (usize, usize, usize),
    pub hi: (usize, usize, usize),
}

impl BoundingBox {
    pub fn extent(&self) -> (usize, usize, usize) {
        (
            self.hi.0 - self.lo.0 + 1,
            self.hi.1 - self.lo.1 + 1,
            self.hi.2 - self.lo.2 + 1,
        )
    }

    pub fn contains(&self, p: (usize, usize, usize)) -> bool {
        p.0 >= self.lo.0
            && p.0 <= self.hi.0
            && p.1 >= self.lo.1
            && p.1 <= self.hi.1
            && p.2 >= self.lo.2
            && p.2 <= self.hi.2
    }
}

/// C channel-stacked masks or soft probabilities sharing dims and spacing.
/// Values are stored channel-major, x-fastest within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelVolume {
    channels: Vec<String>,
    dims: (usize, usize, usize),
    spacing: Spacing,
    values: Vec<f32>,
}

impl MultiChannelVolume {
    pub fn zeros(
        channels: Vec<String>,
        dims: (usize, usize, usize),
        spacing: Spacing,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument("volume needs >= 1 channel".into()));
        }
        let (nx, ny, nz) = dims;
        let per_channel = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))?;
        let total = per_channel
            .checked_mul(channels.len())
            .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?} x{}", channels.len())))?;
        if per_channel == 0 {
            return Err(Error::InvalidArgument(format!(
                "volume dims must be positive, got {dims:?}"
            )));
        }
        Ok(Self {
            channels,
            dims,
            spacing,
            values: vec![0.0; total],
        })
    }

    /// Stacks equally shaped masks channel-wise, pairing each with its name.
    pub fn from_masks(named: &[(String, &VoxelMask)]) -> Result<Self> {
        let (first_name, first) = named
            .first()
            .ok_or_else(|| Error::InvalidArgument("volume needs >= 1 channel".into()))?;
        let _ = first_name;
        let mut vol = Self::zeros(
            named.iter().map(|(n, _)| n.clone()).collect(),
            first.dims(),
            first.spacing(),
        )?;
        let n = first.len();
        for (c, (_, mask)) in named.iter().enumerate() {
            if mask.dims() != first.dims() {
                return Err(Error::DimensionMismatch {
                    expected: format!("{:?}", first.dims()),
                    got: format!("{:?}", mask.dims()),
                });
            }
            let dst = &mut vol.values[c * n..(c + 1) * n];
            for (d, &s) in dst.iter_mut().zip(mask.data()) {
                *d = s as f32;
            }
        }
        Ok(vol)
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn voxels_per_channel(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxels_per_channel();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.voxels_per_channel();
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    /// True when every value is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Extracts one channel as a binary mask; values are thresholded at 0.5.
    pub fn channel_as_mask(&self, c: usize) -> VoxelMask {
        let data = self
            .channel(c)
            .iter()
            .map(|&v| u8::from(v >= 0.5))
            .collect();
        VoxelMask::from_data(self.dims, self.spacing, data).expect("channel has matching dims")
    }

    /// Replaces channel `c` with the contents of a mask of identical shape.
    pub fn set_channel_from_mask(&mut self, c: usize, mask: &VoxelMask) -> Result<()> {
        if mask.dims() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.dims),
                got: format!("{:?}", mask.dims()),
            });
        }
        for (d, &s) in self.channel_mut(c).iter_mut().zip(mask.data()) {
            *d = s as f32;
        }
        Ok(())
    }
}
