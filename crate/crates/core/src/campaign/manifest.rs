use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::job::{plan_jobs, Job};
use super::record::{AttackMethod, DeviceCombo};
use crate::error::{Error, Result};
use crate::trials::TrialPair;

pub const MANIFEST_SCHEMA: &str = "otaspoof-manifest/1";

/// The combinatorial grid of a dataset: every base trial is attacked once
/// per (model row, attack method) and replayed through every speaker × mic
/// pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestPlan {
    pub base: Vec<TrialPair>,
    pub models: Vec<String>,
    pub methods: Vec<AttackMethod>,
    pub speakers: Vec<String>,
    pub mics: Vec<String>,
    pub master_seed: u64,
}

/// One replayed file with its full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    /// The digital sample that was replayed.
    pub source: String,
    pub trial: TrialPair,
    pub attack_method: AttackMethod,
    pub target: String,
    pub surrogates: Vec<String>,
    pub speaker: String,
    pub mic: String,
    pub attack_seed: u64,
    pub replay_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: String,
    pub base_count: usize,
    /// Model axis: the surrogate of a PGD row, the held-out model of a
    /// leave-one-out ensemble row.
    pub victims: Vec<String>,
    pub attacks: Vec<AttackMethod>,
    pub speakers: Vec<String>,
    pub mics: Vec<String>,
    pub expected_total: usize,
    pub entries: Vec<ManifestEntry>,
}

impl ManifestPlan {
    pub fn expected_total(&self) -> usize {
        self.base.len()
            * self.models.len()
            * self.methods.len()
            * self.speakers.len()
            * self.mics.len()
    }

    pub fn devices(&self) -> Vec<DeviceCombo> {
        self.speakers
            .iter()
            .flat_map(|s| {
                self.mics
                    .iter()
                    .map(move |m| DeviceCombo::new(s.clone(), m.clone()))
            })
            .collect()
    }

    pub fn jobs(&self) -> Vec<Job> {
        plan_jobs(&self.base, &self.models, &self.methods)
    }

    /// Entries in canonical order (trial, method, model, speaker, mic),
    /// without file hashes.
    pub fn entries(&self) -> impl Iterator<Item = ManifestEntry> + '_ {
        let devices = self.devices();
        self.jobs().into_iter().flat_map(move |job| {
            let attack_seed = job.seed(self.master_seed);
            let source = job.digital_path();
            devices.clone().into_iter().map(move |d| ManifestEntry {
                path: job.ota_path(&d),
                source: source.clone(),
                trial: job.trial.clone(),
                attack_method: job.method,
                target: job.target.clone(),
                surrogates: job.surrogates.clone(),
                replay_seed: job.ota_seed(self.master_seed, &d),
                speaker: d.speaker,
                mic: d.mic,
                attack_seed,
                sha256: None,
            })
        })
    }
}

/// Expands the plan into a manifest; fails on colliding paths.
pub fn build_manifest(plan: &ManifestPlan) -> Result<Manifest> {
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(plan.expected_total());
    for e in plan.entries() {
        if !seen.insert(e.path.clone()) {
            return Err(Error::DuplicatePath(e.path));
        }
        entries.push(e);
    }
    debug_assert_eq!(entries.len(), plan.expected_total());
    Ok(Manifest {
        schema: MANIFEST_SCHEMA.into(),
        base_count: plan.base.len(),
        victims: plan.models.clone(),
        attacks: plan.methods.clone(),
        speakers: plan.speakers.clone(),
        mics: plan.mics.clone(),
        expected_total: plan.expected_total(),
        entries,
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingResource(path.to_path_buf()),
        _ => e.into(),
    })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl Manifest {
    /// Fills in file hashes relative to `root`; returns the paths that do
    /// not exist.
    pub fn attach_hashes(&mut self, root: &Path) -> Result<Vec<String>> {
        let mut missing = Vec::new();
        for e in &mut self.entries {
            match sha256_file(&root.join(&e.path)) {
                Ok(h) => e.sha256 = Some(h),
                Err(Error::MissingResource(_)) => {
                    e.sha256 = None;
                    missing.push(e.path.clone());
                }
                Err(err) => return Err(err),
            }
        }
        Ok(missing)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingResource(path.to_path_buf()),
            _ => e.into(),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Number of `.wav` files below `dir` (0 when it does not exist).
pub fn census(dir: &Path) -> Result<usize> {
    if !dir.exists() {
        return Ok(0);
    }
    let mut count = 0;
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let entry = entry?;
            let ft = entry.file_type()?;
            if ft.is_dir() {
                stack.push(entry.path());
            } else if ft.is_file() && entry.path().extension().is_some_and(|x| x == "wav") {
                count += 1;
            }
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trials::TrialLabel;

    fn base(n: usize) -> Vec<TrialPair> {
        (0..n)
            .map(|i| {
                TrialPair::new(
                    TrialLabel::Impostor,
                    format!("id{:05}/e/{i:05}.wav", i % 40),
                    format!("id{:05}/t/{i:05}.wav", (i + 1) % 40),
                )
                .unwrap()
            })
            .collect()
    }

    fn plan(
        n: usize,
        models: &[&str],
        methods: &[AttackMethod],
        speakers: usize,
        mics: usize,
    ) -> ManifestPlan {
        ManifestPlan {
            base: base(n),
            models: models.iter().map(|s| s.to_string()).collect(),
            methods: methods.to_vec(),
            speakers: (0..speakers).map(|i| format!("spk{i}")).collect(),
            mics: (0..mics).map(|i| format!("mic{i}")).collect(),
            master_seed: 5,
        }
    }

    #[test]
    fn small_product() {
        let p = plan(10, &["m1", "m2"], &[AttackMethod::Pgd], 1, 1);
        let m = build_manifest(&p).unwrap();
        assert_eq!(m.expected_total, 20);
        assert_eq!(m.entries.len(), 20);
        let e = &m.entries[0];
        assert_eq!(e.surrogates, ["m1"]);
        assert!(e.path.starts_with("ota/pgd/m1/spk0__mic0/t00000-"));
        assert!(e.source.starts_with("digital/pgd/m1/t00000-"));
    }

    #[test]
    fn full_grid_accounting() {
        let p = plan(4368, &["m1", "m2", "m3", "m4"], &AttackMethod::ALL, 3, 3);
        assert_eq!(p.expected_total(), 314_496);
        let mut paths = HashSet::new();
        let mut n = 0;
        for e in p.entries() {
            n += 1;
            assert!(paths.insert(Sha256::digest(e.path.as_bytes())));
        }
        assert_eq!(n, 314_496);
    }

    #[test]
    fn ensemble_entries_hold_out_the_target() {
        let p = plan(2, &["a", "b", "c"], &[AttackMethod::EnsemblePgd], 2, 1);
        let m = build_manifest(&p).unwrap();
        assert_eq!(m.entries.len(), 12);
        for e in &m.entries {
            assert!(!e.surrogates.contains(&e.target));
            assert_eq!(e.surrogates.len(), 2);
        }
    }

    #[test]
    fn duplicate_paths_rejected() {
        let mut p = plan(2, &["a"], &[AttackMethod::Pgd], 1, 1);
        p.base[1] = p.base[0].clone();
        // same trial at different base positions still gets distinct stems
        build_manifest(&p).unwrap();
        p.speakers = vec!["x".into(), "x".into()];
        assert!(matches!(build_manifest(&p), Err(Error::DuplicatePath(_))));
    }

    #[test]
    fn census_counts_wavs_and_hashes_attach() {
        let dir = tempfile::tempdir().unwrap();
        let p = plan(2, &["a"], &[AttackMethod::Pgd], 1, 2);
        let mut m = build_manifest(&p).unwrap();
        for e in &m.entries[..3] {
            let f = dir.path().join(&e.path);
            std::fs::create_dir_all(f.parent().unwrap()).unwrap();
            std::fs::write(f, e.path.as_bytes()).unwrap();
        }
        std::fs::write(dir.path().join("ota/notes.txt"), "x").unwrap();
        assert_eq!(census(&dir.path().join("ota")).unwrap(), 3);
        let missing = m.attach_hashes(dir.path()).unwrap();
        assert_eq!(missing, vec![m.entries[3].path.clone()]);
        let expected = hex::encode(Sha256::digest(m.entries[0].path.as_bytes()));
        assert_eq!(m.entries[0].sha256.as_deref(), Some(expected.as_str()));
        let path = dir.path().join("manifest.json");
        m.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }
}
