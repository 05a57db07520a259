//! Searches per-organ noise hyperparameters for uniform signed-Dice
//! coverage (development tool).

use segqa::corrupt::{calibration_histogram, CenterSampling, NoiseSpec, RngSeed};
use segqa::phantom::{generate_anatomy, AnatomyLayout, AnatomySpec};
use segqa::voxelgrid::Spacing;

fn main() {
    let layout = AnatomyLayout::PelvisLike7;
    let organs = layout.organ_names();
    let only: Vec<String> = std::env::args().skip(1).collect();
    let specs: Vec<AnatomySpec> = (0..8)
        .map(|seed| AnatomySpec {
            layout,
            dims: (32, 32, 32),
            spacing: Spacing::isotropic(1.0).unwrap(),
            jitter: 0.02,
            seed,
        })
        .collect();
    let anatomies: Vec<_> = specs.iter().map(|s| generate_anatomy(s).unwrap()).collect();

    for (c, organ) in organs.iter().enumerate() {
        if !only.is_empty() && !only.contains(organ) {
            continue;
        }
        let targets: Vec<_> = anatomies.iter().map(|a| a.channel_as_mask(c)).collect();
        let volume: usize =
            targets.iter().map(|t| t.foreground_count()).sum::<usize>() / targets.len();
        println!("== {organ} (mean volume {volume} voxels)");
        let mut results: Vec<(f64, NoiseSpec, Vec<i32>)> = Vec::new();
        for sampling in [CenterSampling::Foreground, CenterSampling::BoundingBox] {
            for max_patches in [2usize, 3, 4, 6, 8] {
                for min_patch in [1usize, 2] {
                    for max_patch in [6usize, 8, 10, 12, 14, 16, 20, 24, 28] {
                        if min_patch > max_patch {
                            continue;
                        }
                        let spec = NoiseSpec {
                            max_patches,
                            min_patch,
                            max_patch,
                            center_sampling: sampling,
                        };
                        let h =
                            calibration_histogram(&targets, &spec, 250, 10, RngSeed(33)).unwrap();
                        let fracs = h.fractions();
                        let worst = fracs.iter().cloned().fold(f64::INFINITY, f64::min);
                        results.push((
                            worst,
                            spec,
                            fracs.iter().map(|f| (f * 100.0).round() as i32).collect(),
                        ));
                    }
                }
            }
        }
        results.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for (worst, spec, fracs) in results.iter().take(4) {
            println!(
                "  worst {:.3}: np={} min={} max={} {:?} {:?}",
                worst, spec.max_patches, spec.min_patch, spec.max_patch, spec.center_sampling, fracs
            );
        }
    }
}
