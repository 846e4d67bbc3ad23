use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ecg_io::{read_record, write_record, ColumnSelector, EcgRecord, GroundTruth, IngestError, Population, ReadOptions, Segment};

/// One signal/metadata pair. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub signal: PathBuf,
    pub metadata: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<ColumnSelector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<Segment>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputManifest {
    pub records: Vec<ManifestEntry>,
}

impl InputManifest {
    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| IngestError::Metadata {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }

    /// Reads every listed record; `column` overrides entries that name none.
    pub fn load(&self, base: &Path, column: Option<&ColumnSelector>) -> Result<Vec<EcgRecord>, IngestError> {
        self.records
            .iter()
            .map(|e| {
                let opts = ReadOptions {
                    column: e.column.clone().or_else(|| column.cloned()),
                    segment: e.segment,
                };
                read_record(&base.join(&e.signal), &base.join(&e.metadata), &opts)
            })
            .collect()
    }
}

/// Reads the manifest at `path` and all records it lists.
pub fn load_manifest(path: &Path, column: Option<&ColumnSelector>) -> Result<Vec<EcgRecord>, IngestError> {
    let base = path.parent().unwrap_or(Path::new("."));
    InputManifest::read(path)?.load(base, column)
}

/// Writes each record as `<dir>/<participant>/signal.csv` plus
/// `metadata.json` (and `truth.json` when given), and a `manifest.json`
/// listing them.
pub fn export_records(records: &[EcgRecord], truth: Option<&[GroundTruth]>, dir: &Path) -> Result<PathBuf, IngestError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    let mut manifest = InputManifest::default();
    for (i, rec) in records.iter().enumerate() {
        let sub = PathBuf::from(super::file_stem(&rec.participant_id));
        std::fs::create_dir_all(dir.join(&sub)).map_err(io(&dir.join(&sub)))?;
        let entry = ManifestEntry {
            signal: sub.join("signal.csv"),
            metadata: sub.join("metadata.json"),
            column: None,
            segment: None,
        };
        write_record(rec, &dir.join(&entry.signal), &dir.join(&entry.metadata))?;
        if let Some(t) = truth.and_then(|t| t.get(i)) {
            let path = dir.join(&sub).join("truth.json");
            let text = serde_json::to_string_pretty(t).expect("truth serialises") + "\n";
            std::fs::write(&path, text).map_err(io(&path))?;
        }
        manifest.records.push(entry);
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json()).map_err(io(&path))?;
    Ok(path)
}

pub fn export_population(pop: &Population, dir: &Path) -> Result<PathBuf, IngestError> {
    export_records(&pop.records, Some(&pop.truth), dir)
}
