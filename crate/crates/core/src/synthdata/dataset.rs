//! On-disk synthetic datasets: PPM pairs plus a plain-text manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use super::noise::{rng_for, splitmix64};
use super::ppm::{read_ppm, write_ppm};
use super::{gen_pair, ImagePair, StainKind};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

const STREAM_LABELS: u64 = 3;
const SPLIT_SALT: u64 = 0x7E57_5EED;

/// Proportions of each stain kind, in [`StainKind::ALL`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StainMix(pub [f64; 6]);

impl Default for StainMix {
    fn default() -> Self {
        StainMix([1.0 / 6.0; 6])
    }
}

impl StainMix {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config("stain proportions must be non-negative".into()));
        }
        let total: f64 = self.0.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("stain proportions sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Kind whose cumulative interval contains `u ∈ [0,1)`.
    pub fn pick(&self, u: f64) -> StainKind {
        let mut acc = 0.0;
        let mut last = StainKind::ALL[0];
        for (kind, &p) in StainKind::ALL.iter().zip(&self.0) {
            if p > 0.0 {
                acc += p;
                last = *kind;
                if u < acc {
                    return *kind;
                }
            }
        }
        last
    }
}

impl fmt::Display for StainMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (kind, p)) in StainKind::ALL.iter().zip(&self.0).enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{kind}:{p:?}")?;
        }
        Ok(())
    }
}

/// Parses `kind:weight` items separated by commas; weights are normalized
/// and unnamed kinds get zero.
impl FromStr for StainMix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut w = [0.0; 6];
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (name, value) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("stain mix item `{item}` is not kind:weight")))?;
            let kind: StainKind = name.trim().parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad weight in `{item}`")))?;
            w[StainKind::ALL.iter().position(|k| *k == kind).unwrap()] = v;
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config(format!("stain mix `{s}` has no positive weight")));
        }
        Ok(StainMix(w.map(|v| v / total)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split `{s}`"))),
        }
    }
}

/// Arguments of [`gen_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub mix: StainMix,
    pub seed: u64,
    /// One id of every consecutive block of this many ids is held out.
    pub test_every: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            count: 200,
            height: 64,
            width: 64,
            mix: StainMix::default(),
            seed: 0,
            test_every: 10,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        if self.test_every < 2 {
            return Err(Error::Config("test_every must be at least 2".into()));
        }
        Ok(())
    }

    pub fn pair_seed(&self, id: usize) -> u64 {
        splitmix64(self.seed ^ splitmix64(id as u64))
    }

    /// Manifest record for `id`; a pure function of the spec and `id`.
    pub fn entry(&self, id: usize) -> ManifestEntry {
        let seed = self.pair_seed(id);
        let rng = &mut rng_for(seed, STREAM_LABELS);
        let kind = self.mix.pick(rng.random());
        let severity = rng.random_range(1..=3u8);
        ManifestEntry {
            id,
            kind,
            severity,
            seed,
            split: split_of(self.seed, id, self.test_every),
        }
    }
}

/// Hash split: within each block `[b·k, (b+1)·k)` of ids, the id with the
/// smallest salted hash is the test id. Membership of an id never depends
/// on the total count, except inside a trailing partial block.
pub fn split_of(dataset_seed: u64, id: usize, k: usize) -> Split {
    let hash = |i: usize| splitmix64(dataset_seed ^ SPLIT_SALT ^ splitmix64(i as u64));
    let start = id - id % k;
    let winner = (start..start + k).min_by_key(|&i| hash(i)).unwrap();
    if winner == id {
        Split::Test
    } else {
        Split::Train
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: usize,
    pub kind: StainKind,
    pub severity: u8,
    pub seed: u64,
    pub split: Split,
}

impl ManifestEntry {
    pub fn clean_file(&self) -> String {
        format!("{:06}_clean.ppm", self.id)
    }

    pub fn stained_file(&self) -> String {
        format!("{:06}_stained.ppm", self.id)
    }

    pub fn to_line(&self) -> String {
        format!("{},{},{},{},{}", self.id, self.kind, self.severity, self.seed, self.split.name())
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Data(format!("malformed manifest line `{line}`"));
        let f: Vec<&str> = line.trim().split(',').collect();
        let [id, kind, severity, seed, split] = f[..] else {
            return Err(bad());
        };
        let severity: u8 = severity.parse().map_err(|_| bad())?;
        if !(1..=3).contains(&severity) {
            return Err(bad());
        }
        Ok(ManifestEntry {
            id: id.parse().map_err(|_| bad())?,
            kind: kind.parse().map_err(|_| bad())?,
            severity,
            seed: seed.parse().map_err(|_| bad())?,
            split: split.parse()?,
        })
    }
}

/// Writes `count` pairs and the manifest into `out_dir`.
pub fn gen_dataset(out_dir: &Path, spec: &DatasetSpec) -> Result<Vec<ManifestEntry>> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries: Vec<ManifestEntry> = (0..spec.count).map(|id| spec.entry(id)).collect();
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let pair = gen_pair(e.seed, e.kind, e.severity, spec.height, spec.width)?;
        write_ppm(out_dir.join(e.clean_file()), &pair.clean)?;
        write_ppm(out_dir.join(e.stained_file()), &pair.stained)
    })?;
    let mut manifest = String::new();
    for e in &entries {
        manifest.push_str(&e.to_line());
        manifest.push('\n');
    }
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))?;
    Ok(entries)
}

/// A generated dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(ManifestEntry::parse)
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            entries,
        })
    }

    pub fn split(&self, split: Split) -> Vec<ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).copied().collect()
    }

    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<ImagePair> {
        let clean = read_ppm(self.dir.join(entry.clean_file()))?;
        let stained = read_ppm(self.dir.join(entry.stained_file()))?;
        if clean.shape() != stained.shape() {
            return Err(Error::Data(format!("pair {} has mismatched image sizes", entry.id)));
        }
        Ok(ImagePair {
            stained,
            clean,
            kind: entry.kind,
            severity: entry.severity,
            seed: entry.seed,
        })
    }

    /// Loads every pair of `split`, in manifest order.
    pub fn load(&self, split: Split) -> Result<Vec<ImagePair>> {
        self.split(split).par_iter().map(|e| self.load_pair(e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_are_exact_per_block() {
        let spec = DatasetSpec::default();
        let test = (0..200).filter(|&i| spec.entry(i).split == Split::Test).count();
        assert_eq!((200 - test, test), (180, 20));
        let test = (0..440).filter(|&i| split_of(9, i, 11) == Split::Test).count();
        assert_eq!(test, 40);
    }

    #[test]
    fn split_membership_is_count_independent() {
        let spec = DatasetSpec::default();
        let small: Vec<Split> = (0..100).map(|i| spec.entry(i).split).collect();
        let large: Vec<Split> = (0..100).map(|i| DatasetSpec { count: 1000, ..spec.clone() }.entry(i).split).collect();
        assert_eq!(small, large);
    }

    #[test]
    fn manifest_line_round_trip() {
        let e = DatasetSpec::default().entry(17);
        assert_eq!(ManifestEntry::parse(&e.to_line()).unwrap(), e);
        assert!(ManifestEntry::parse("1,tea,2,3,train").is_err());
        assert!(ManifestEntry::parse("1,seal,4,3,train").is_err());
    }

    #[test]
    fn mix_parsing_and_validation() {
        let m: StainMix = "seal:1,mark:3".parse().unwrap();
        assert_eq!(m.0, [0.0, 0.0, 0.0, 0.0, 0.25, 0.75]);
        assert_eq!(m.pick(0.1), StainKind::Seal);
        assert_eq!(m.pick(0.9), StainKind::Mark);
        assert!(StainMix([0.5; 6]).validate().is_err());
        assert!("ink:1".parse::<StainMix>().is_err());
    }
}
