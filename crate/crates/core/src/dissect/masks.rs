use super::{ActivationVolume, DissectError, UnitThresholds};

/// Binary concept mask `M_k = A_k > T_k` for one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    pub unit: usize,
    pub spatial: [usize; 3],
    pub mask: Vec<bool>,
}

impl MaskVolume {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn any(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }
}

/// Units whose mask has at least one set voxel for a given sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnabledUnitSet {
    pub sample_id: String,
    /// Ascending unit indices.
    pub units: Vec<usize>,
}

impl EnabledUnitSet {
    pub fn contains(&self, k: usize) -> bool {
        self.units.binary_search(&k).is_ok()
    }
}

pub fn binarize(a: &ActivationVolume, t: &UnitThresholds) -> Result<Vec<MaskVolume>, DissectError> {
    t.check_units(a)?;
    Ok((0..a.units())
        .map(|k| {
            let tk = t.thresholds[k];
            MaskVolume {
                unit: k,
                spatial: a.spatial(),
                mask: a.unit(k).iter().map(|&v| v > tk).collect(),
            }
        })
        .collect())
}

pub fn enabled_units(sample_id: &str, masks: &[MaskVolume]) -> EnabledUnitSet {
    EnabledUnitSet {
        sample_id: sample_id.to_string(),
        units: {
            let mut units: Vec<usize> = masks.iter().filter(|m| m.any()).map(|m| m.unit).collect();
            units.sort_unstable();
            units.dedup();
            units
        },
    }
}

/// Same result as `enabled_units(binarize(a, t))` without materialising masks.
pub fn enabled_set(a: &ActivationVolume, t: &UnitThresholds) -> Result<EnabledUnitSet, DissectError> {
    t.check_units(a)?;
    Ok(EnabledUnitSet {
        sample_id: a.sample_id.clone(),
        units: (0..a.units())
            .filter(|&k| {
                let tk = t.thresholds[k];
                a.unit(k).iter().any(|&v| v > tk)
            })
            .collect(),
    })
}
