use nalgebra::Matrix3;
use rand::Rng;

use crate::io::{IntensityUnit, Volume};

const SOFT_TISSUE: f32 = 0.52;
const CANCELLOUS: f32 = 0.64;
const CORTICAL: f32 = 0.9;

/// Normalised `size³` vertebral-body phantom: an ellipsoid with a cortical
/// shell. Positives lose an anterior-superior wedge, mimicking a wedge
/// compression. Axes follow the patch frame: `i` lateral, `j` anterior,
/// `k` superior.
pub fn phantom_patch(size: usize, fractured: bool, rng: &mut impl Rng) -> Volume {
    let c = (size / 2) as f64;
    let jitter = |rng: &mut dyn rand::RngCore| 1.0 + 0.1 * (rng.random::<f64>() - 0.5);
    let radii = [
        0.36 * size as f64 * jitter(rng),
        0.30 * size as f64 * jitter(rng),
        0.22 * size as f64 * jitter(rng),
    ];
    let depth = 0.5 + 0.4 * rng.random::<f64>();
    let mut values = Vec::with_capacity(size * size * size);
    for k in 0..size {
        for j in 0..size {
            for i in 0..size {
                let x = (i as f64 - c) / radii[0];
                let y = (j as f64 - c) / radii[1];
                let z = (k as f64 - c) / radii[2];
                let r2 = x * x + y * y + z * z;
                let mut v = if r2 > 1.0 {
                    SOFT_TISSUE
                } else if r2 > 0.75 {
                    CORTICAL
                } else {
                    CANCELLOUS
                };
                if fractured && r2 <= 1.0 && z > 1.0 - depth * y.max(0.0) {
                    v = SOFT_TISSUE;
                }
                values.push(v);
            }
        }
    }
    Volume::new([size; 3], values, [1.0; 3], [0.0; 3], Matrix3::identity(), IntensityUnit::Normalized).expect("cube geometry")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn defect_only_on_positives() {
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut b = a.clone();
        let healthy = phantom_patch(24, false, &mut a);
        let broken = phantom_patch(24, true, &mut b);
        let diff = healthy.values().iter().zip(broken.values()).filter(|(x, y)| x != y).count();
        assert!(diff > 0);
        assert!(healthy.values().iter().all(|v| (0.0..=1.0).contains(v)));
        // The centre of the body is intact in both.
        assert_eq!(healthy.voxel(12, 12, 12), broken.voxel(12, 12, 12));
    }
}
