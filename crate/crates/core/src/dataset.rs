//! Synthetic (input sequence, ground truth) datasets.
//!
//! Directory layout:
//!
//! ```text
//! manifest.json
//! fov_0000/input_00.fld ... input_{m-1}.fld   back-propagated holograms
//! fov_0000/target.fld                        phase-retrieved ground truth
//! fov_0000/object.fld                        simulator truth
//! fov_0000/stack/holo_00.fld ... holo_07.fld  the eight recorded holograms
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, HologramStack};
use crate::io::{load_field, load_stack, save_field, save_stack};
use crate::phase_retrieval::{mhpr, MhprConfig, GROUND_TRUTH_HOLOGRAMS};
use crate::propagation::back_propagate_stack;
use crate::simulator::{acquire, child_seed, make_object, AcquisitionSpec, Pair, SceneSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Seed family; splits never share object seeds.
    fn family(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e00,
            Split::Val => 0x7661_6c00,
            Split::Test => 0x7465_7374_00,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    /// Scene template; its seed is replaced per field of view.
    pub scene: SceneSpec,
    pub dims: (usize, usize),
    /// Geometry, noise and the eight ground-truth heights.
    pub acquisition: AcquisitionSpec,
    /// Heights of the network input holograms; defaults to the first
    /// `m_inputs` ground-truth heights.
    pub input_z2: Option<Vec<f64>>,
    pub mhpr_iterations: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            dims: (64, 64),
            acquisition: AcquisitionSpec::default(),
            input_z2: None,
            mhpr_iterations: MhprConfig::default().iterations,
        }
    }
}

impl DatasetSpec {
    pub fn input_heights(&self, m_inputs: usize) -> Result<Vec<f64>> {
        match &self.input_z2 {
            Some(z) if z.len() == m_inputs => Ok(z.clone()),
            Some(z) => Err(Error::invalid(format!("input_z2 lists {} heights but m_inputs = {m_inputs}", z.len()))),
            None if m_inputs <= self.acquisition.z2_list.len() => Ok(self.acquisition.z2_list[..m_inputs].to_vec()),
            None => Err(Error::invalid(format!(
                "m_inputs = {m_inputs} exceeds the {} available heights",
                self.acquisition.z2_list.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub seed: u64,
    pub inputs: Vec<ComplexField>,
    pub target: ComplexField,
    pub object: ComplexField,
    /// The eight-height stack the target was retrieved from.
    pub stack: HologramStack,
}

impl Sample {
    pub fn pair(&self) -> Pair {
        Pair {
            inputs: self.inputs.clone(),
            target: self.target.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub n_fovs: usize,
    pub m_inputs: usize,
    pub split: Split,
    pub base_seed: u64,
    pub fov_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pairs(&self) -> Vec<Pair> {
        self.samples.iter().map(Sample::pair).collect()
    }
}

/// Object seed of field of view `index` in `split`.
pub fn fov_seed(base_seed: u64, split: Split, index: usize) -> u64 {
    child_seed(child_seed(base_seed, split.family()), index as u64)
}

/// Generate one field of view: object, 8-height ground truth, and `m_inputs`
/// zero-phase back-propagated inputs.
pub fn make_sample(spec: &DatasetSpec, m_inputs: usize, index: usize, seed: u64) -> Result<Sample> {
    let optical = &spec.acquisition.optical;
    let object = make_object(&spec.scene.with_seed(seed), spec.dims, optical.pixel_pitch_um, optical.wavelength_um)?;

    let gt_acq = AcquisitionSpec {
        seed: child_seed(seed, 1),
        psr_pattern: None,
        ..spec.acquisition.clone()
    };
    let gt_stack = acquire(&object, &gt_acq)?;
    let cfg = MhprConfig {
        iterations: spec.mhpr_iterations,
        ..MhprConfig::default()
    };
    let target = mhpr(&gt_stack, &cfg)?.sample_field;

    let in_acq = AcquisitionSpec {
        z2_list: spec.input_heights(m_inputs)?,
        seed: child_seed(seed, 2),
        psr_pattern: None,
        ..spec.acquisition.clone()
    };
    let inputs = back_propagate_stack(&acquire(&object, &in_acq)?, optical.zbar2_um)?;
    Ok(Sample {
        index,
        seed,
        inputs,
        target,
        object,
        stack: gt_stack,
    })
}

pub fn make_dataset(spec: &DatasetSpec, n_fovs: usize, m_inputs: usize, split: Split, base_seed: u64) -> Result<Dataset> {
    if n_fovs == 0 {
        return Err(Error::invalid("dataset needs at least one field of view"));
    }
    if m_inputs == 0 {
        return Err(Error::invalid("each sample needs at least one input hologram"));
    }
    if spec.acquisition.z2_list.len() != GROUND_TRUTH_HOLOGRAMS {
        return Err(Error::invalid(format!(
            "ground truth needs {GROUND_TRUTH_HOLOGRAMS} heights, spec lists {}",
            spec.acquisition.z2_list.len()
        )));
    }
    let fov_seeds: Vec<u64> = (0..n_fovs).map(|i| fov_seed(base_seed, split, i)).collect();
    let samples = fov_seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| make_sample(spec, m_inputs, i, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: DatasetManifest {
            spec: spec.clone(),
            n_fovs,
            m_inputs,
            split,
            base_seed,
            fov_seeds,
        },
        samples,
    })
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in &ds.samples {
        let fov = dir.join(format!("fov_{:04}", s.index));
        for (k, f) in s.inputs.iter().enumerate() {
            save_field(&fov.join(format!("input_{k:02}.fld")), f, None)?;
        }
        save_field(&fov.join("target.fld"), &s.target, None)?;
        save_field(&fov.join("object.fld"), &s.object, None)?;
        save_stack(&fov.join("stack"), &s.stack)?;
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&ds.manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn parse_dataset_manifest(bytes: &[u8]) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_slice(bytes)?;
    if m.fov_seeds.len() != m.n_fovs {
        return Err(Error::format(
            "dataset manifest",
            format!("{} seeds for {} fields of view", m.fov_seeds.len(), m.n_fovs),
        ));
    }
    Ok(m)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.json");
    let manifest = parse_dataset_manifest(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
    let mut samples = Vec::with_capacity(manifest.n_fovs);
    for (index, &seed) in manifest.fov_seeds.iter().enumerate() {
        let fov = dir.join(format!("fov_{index:04}"));
        let inputs = (0..manifest.m_inputs)
            .map(|k| load_field(&fov.join(format!("input_{k:02}.fld"))))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            index,
            seed,
            inputs,
            target: load_field(&fov.join("target.fld"))?,
            object: load_field(&fov.join("object.fld"))?,
            stack: load_stack(&fov.join("stack"))?,
        });
    }
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            dims: (16, 16),
            mhpr_iterations: 3,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn shapes() {
        let ds = make_dataset(&small_spec(), 4, 2, Split::Train, 1).unwrap();
        assert_eq!(ds.len(), 4);
        assert!(ds.samples.iter().all(|s| s.inputs.len() == 2 && s.target.dim() == (16, 16)));
    }

    #[test]
    fn deterministic_for_seed() {
        let a = make_dataset(&small_spec(), 2, 1, Split::Val, 9).unwrap();
        let b = make_dataset(&small_spec(), 2, 1, Split::Val, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_families_disjoint() {
        let spec = small_spec();
        let hash = |s: &Sample| {
            s.object
                .data()
                .iter()
                .flat_map(|c| [c.re.to_bits(), c.im.to_bits()])
                .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b).wrapping_mul(0x100_0000_01b3))
        };
        let train: HashSet<u64> = make_dataset(&spec, 6, 1, Split::Train, 3).unwrap().samples.iter().map(hash).collect();
        let test: HashSet<u64> = make_dataset(&spec, 6, 1, Split::Test, 3).unwrap().samples.iter().map(hash).collect();
        assert_eq!(train.len(), 6);
        assert!(train.is_disjoint(&test));
    }

    #[test]
    fn invalid_counts() {
        assert!(make_dataset(&small_spec(), 0, 2, Split::Train, 0).is_err());
        assert!(make_dataset(&small_spec(), 2, 0, Split::Train, 0).is_err());
        assert!(make_dataset(&small_spec(), 2, 9, Split::Train, 0).is_err());
    }

    #[test]
    fn persist_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_dataset(&small_spec(), 2, 2, Split::Train, 4).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        assert!(dir.path().join("fov_0001/input_01.fld").exists());
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }
}
