use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::make_phantom;
use crate::error::{Error, Result};
use crate::physics::{achieved_acceleration, make_coil_maps, make_mask, MaskKind, MaskSpec, Measurement, SensingModel};
use crate::tensor::{ComplexTensor, RealTensor};
use crate::train::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn code(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

fn default_coils() -> usize {
    4
}
fn default_calibration() -> usize {
    8
}
fn default_step() -> f64 {
    crate::physics::DEFAULT_STEP_SIZE
}

/// Acquisition settings shared by every item of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingSpec {
    pub mask: MaskKind,
    pub acceleration: f64,
    #[serde(default = "default_calibration")]
    pub calibration: usize,
    pub mu: f64,
    #[serde(default = "default_step")]
    pub step_size: f64,
    /// Standard deviation of the complex Gaussian noise added to each
    /// sampled k-space entry (per real component).
    #[serde(default)]
    pub noise: f64,
}

impl SensingSpec {
    /// Poisson-disc mask at `acceleration` with the matching `mu` preset.
    pub fn preset(acceleration: f64) -> Self {
        Self {
            mask: MaskKind::PoissonDisc2d,
            acceleration,
            calibration: default_calibration(),
            mu: if acceleration > 8.0 {
                crate::physics::MU_PRESET_R16
            } else {
                crate::physics::MU_PRESET_R4
            },
            step_size: default_step(),
            noise: DESK_NOISE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0) || !(self.mu > 0.0) || !(self.step_size > 0.0) {
            return Err(Error::config("noise must be >= 0, mu and step size > 0"));
        }
        if !(self.acceleration >= 1.0) {
            return Err(Error::config(format!("acceleration must be >= 1, got {}", self.acceleration)));
        }
        Ok(())
    }
}

/// k-space noise level of the desk dataset.
pub const DESK_NOISE: f64 = 0.02;

/// Image geometry, split sizes and the generation seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_coils")]
    pub coils: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

const MAX_ITEMS: usize = 1 << 20;

impl DatasetSpec {
    /// 200/20/20 phantoms at 64x64 with 4 coils.
    pub fn desk(seed: u64) -> Self {
        Self {
            height: 64,
            width: 64,
            coils: 4,
            train: 200,
            val: 20,
            test: 20,
            seed,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.height.is_power_of_two() || !self.width.is_power_of_two() {
            return Err(Error::config("image extents must be powers of two"));
        }
        if self.coils == 0 {
            return Err(Error::config("need at least one coil"));
        }
        if Split::ALL.iter().any(|&s| self.count(s) >= MAX_ITEMS) {
            return Err(Error::config(format!("fewer than {MAX_ITEMS} items per split required")));
        }
        if self.seed >= 1 << 40 {
            return Err(Error::config("dataset seed must be below 2^40"));
        }
        Ok(())
    }

    /// Seed of item `i` in `split`. The three fields occupy disjoint bit
    /// ranges, so no two (split, item) pairs share a seed.
    pub fn item_seed(&self, split: Split, i: usize) -> u64 {
        (self.seed << 23) | (split.code() << 21) | i as u64
    }

    /// Mask shared by every item of `split`.
    pub fn mask_for(&self, sensing: &SensingSpec, split: Split) -> Result<RealTensor> {
        make_mask(
            &MaskSpec {
                kind: sensing.mask,
                acceleration: sensing.acceleration,
                calibration: sensing.calibration,
                seed: self.item_seed(split, MAX_ITEMS - 1),
            },
            [self.height, self.width],
        )
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub sensing: SensingSpec,
    pub split: Split,
    pub mask: RealTensor,
    pub seeds: Vec<u64>,
    pub items: Vec<Sample>,
}

fn noisy(kspace: &ComplexTensor, mask: &RealTensor, sigma: f64, seed: u64) -> Result<ComplexTensor> {
    let mut out = kspace.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_0015e);
    let plane = mask.len();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        if mask.data()[k % plane] != 0.0 {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(out)
}

impl Dataset {
    /// Pure function of `(spec, split)`.
    pub fn generate(spec: &DatasetSpec, sensing: &SensingSpec, split: Split) -> Result<Self> {
        spec.validate()?;
        sensing.validate()?;
        let mask = spec.mask_for(sensing, split)?;
        let n = spec.count(split);
        let mut seeds = Vec::with_capacity(n);
        let mut items = Vec::with_capacity(n);
        for i in 0..n {
            let seed = spec.item_seed(split, i);
            let target = make_phantom(spec.height, spec.width, seed)?;
            let maps = make_coil_maps(spec.coils, spec.height, spec.width, seed)?;
            let model = Arc::new(SensingModel::new(mask.clone(), maps, sensing.step_size, sensing.mu)?);
            let clean = model.forward(&target)?;
            let kspace = noisy(&clean, &mask, sensing.noise, seed)?;
            items.push(Sample {
                meas: Measurement::new(model, kspace)?,
                target,
            });
            seeds.push(seed);
        }
        Ok(Self {
            spec: spec.clone(),
            sensing: sensing.clone(),
            split,
            mask,
            seeds,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn achieved_acceleration(&self) -> f64 {
        achieved_acceleration(&self.mask)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = vec![TensorEntry::real("mask", &self.mask)];
        let mut blobs: Vec<&[Complex64]> = Vec::new();
        for (i, item) in self.items.iter().enumerate() {
            for (name, t) in [
                ("target", &item.target),
                ("coil_maps", item.meas.model.coil_maps().as_ref()),
                ("kspace", &item.meas.kspace),
            ] {
                tensors.push(TensorEntry::complex(format!("{i}/{name}"), t));
                blobs.push(t.data());
            }
        }
        let header = Manifest {
            spec: self.spec.clone(),
            sensing: self.sensing.clone(),
            split: self.split,
            count: self.items.len(),
            seeds: self.seeds.clone(),
            achieved_acceleration: self.achieved_acceleration(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.mask.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for blob in blobs {
            for c in blob {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(DATASET_MAGIC.len())? != DATASET_MAGIC {
            return Err(Error::Format("not a dataset container".into()));
        }
        let len = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Manifest = serde_json::from_slice(cur.take(len)?)?;
        let mut entries = header.tensors.iter();
        let mask_entry = entries.next().filter(|e| e.name == "mask" && !e.complex);
        let mask_entry = mask_entry.ok_or_else(|| Error::Format("container does not start with the mask".into()))?;
        let mask = RealTensor::from_vec(&mask_entry.shape, cur.reals(crate::tensor::numel(&mask_entry.shape))?)?;
        if header.seeds.len() != header.count || header.tensors.len() != 1 + 3 * header.count {
            return Err(Error::Format("manifest counts disagree".into()));
        }
        let mut items = Vec::with_capacity(header.count);
        for i in 0..header.count {
            let mut next = |name: &str| -> Result<ComplexTensor> {
                let e = entries.next().ok_or_else(|| Error::Format("missing tensor".into()))?;
                if e.name != format!("{i}/{name}") || !e.complex {
                    return Err(Error::Format(format!("expected {i}/{name}, found {}", e.name)));
                }
                ComplexTensor::from_vec(&e.shape, cur.complexes(crate::tensor::numel(&e.shape))?)
            };
            let target = next("target")?;
            let maps = next("coil_maps")?;
            let kspace = next("kspace")?;
            let model = Arc::new(SensingModel::new(mask.clone(), maps, header.sensing.step_size, header.sensing.mu)?);
            items.push(Sample {
                meas: Measurement::new(model, kspace)?,
                target,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after dataset".into()));
        }
        Ok(Self {
            spec: header.spec,
            sensing: header.sensing,
            split: header.split,
            mask,
            seeds: header.seeds,
            items,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Manifest header alone, without decoding tensors.
    pub fn manifest_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "spec": self.spec,
            "sensing": self.sensing,
            "split": self.split,
            "count": self.items.len(),
            "seeds": self.seeds,
            "achieved_acceleration": self.achieved_acceleration(),
        }))
    }
}

const DATASET_MAGIC: &[u8; 8] = b"UNRLDAT1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    complex: bool,
}

impl TensorEntry {
    fn real(name: impl Into<String>, t: &RealTensor) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            complex: false,
        }
    }

    fn complex(name: impl Into<String>, t: &ComplexTensor) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            complex: true,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: DatasetSpec,
    sensing: SensingSpec,
    split: Split,
    count: usize,
    seeds: Vec<u64>,
    achieved_acceleration: f64,
    tensors: Vec<TensorEntry>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("dataset container is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn complexes(&mut self, n: usize) -> Result<Vec<Complex64>> {
        let v = self.reals(n.checked_mul(2).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        Ok(v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> DatasetSpec {
        DatasetSpec {
            height: 16,
            width: 16,
            train: 3,
            val: 2,
            test: 2,
            ..DatasetSpec::desk(seed)
        }
    }

    fn sensing() -> SensingSpec {
        SensingSpec {
            calibration: 4,
            noise: 0.01,
            ..SensingSpec::preset(4.0)
        }
    }

    #[test]
    fn generation_is_pure() {
        let a = Dataset::generate(&small(1), &sensing(), Split::Train).unwrap();
        let b = Dataset::generate(&small(1), &sensing(), Split::Train).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn seeds_disjoint_across_splits() {
        let spec = small(2);
        let mut all: Vec<u64> = Split::ALL
            .iter()
            .flat_map(|&s| Dataset::generate(&spec, &sensing(), s).unwrap().seeds)
            .collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn kspace_matches_model_up_to_noise() {
        let quiet = SensingSpec { noise: 0.0, ..sensing() };
        let d = Dataset::generate(&small(3), &quiet, Split::Val).unwrap();
        for s in &d.items {
            let y = s.meas.model.forward(&s.target).unwrap();
            assert_eq!(y.data(), s.meas.kspace.data());
        }
    }

    #[test]
    fn noise_only_on_sampled_entries() {
        let spec = small(4);
        let d = Dataset::generate(&spec, &sensing(), Split::Train).unwrap();
        let plane = d.mask.len();
        for s in &d.items {
            let clean = s.meas.model.forward(&s.target).unwrap();
            let diff = s.meas.kspace.sub(&clean).unwrap();
            let mut sampled = 0.0;
            for (k, v) in diff.data().iter().enumerate() {
                if d.mask.data()[k % plane] == 0.0 {
                    assert_eq!(v.norm(), 0.0);
                } else {
                    sampled += v.norm_sqr();
                }
            }
            let count = diff.len() as f64 / d.achieved_acceleration();
            let sigma = (sampled / (2.0 * count)).sqrt();
            assert!((sigma - 0.01).abs() < 0.002, "estimated sigma {sigma}");
        }
    }

    #[test]
    fn container_round_trip_is_bit_exact() {
        let d = Dataset::generate(&small(5), &sensing(), Split::Test).unwrap();
        let bytes = d.to_bytes().unwrap();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.items[1].meas.aty.data(), d.items[1].meas.aty.data());
    }

    #[test]
    fn container_rejects_damage() {
        let bytes = Dataset::generate(&small(6), &sensing(), Split::Val).unwrap().to_bytes().unwrap();
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Dataset::from_bytes(&extra).is_err());
        assert!(Dataset::from_bytes(b"garbage!").is_err());
    }

    #[test]
    fn shared_mask_within_split() {
        let d = Dataset::generate(&small(7), &sensing(), Split::Train).unwrap();
        for s in &d.items {
            assert_eq!(s.meas.model.mask().data(), d.mask.data());
        }
        let r = d.achieved_acceleration();
        assert!((r - 4.0).abs() <= 0.4, "achieved R {r}");
    }
}
