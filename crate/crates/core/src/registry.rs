//! Dataset registry: a TOML file mapping dataset names to CSV paths and
//! descriptive metadata.
//!
//! ```toml
//! [datasets.NP]
//! path = "NP.csv"                      # relative to the registry file
//! domain = "Electricity"
//! frequency = "1 Hour"
//! exogenous_descriptions = "Grid Load, Wind Power"
//! endogenous_description = "Nord Pool Electricity Price"
//! source_note = "Hourly day-ahead prices of the Nord Pool market."
//! endogenous = "OT"                    # optional, default: last column
//! split = [7, 1, 2]                    # optional, default by name
//! fixed_rows = 14400                   # optional, ETT-style row budget
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, BorderMode, DatasetDescriptor, RawTable, SplitSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryEntry {
    pub path: PathBuf,
    pub domain: String,
    pub frequency: String,
    pub exogenous_descriptions: String,
    #[serde(default)]
    pub endogenous_description: Option<String>,
    pub source_note: String,
    #[serde(default)]
    pub endogenous: Option<String>,
    #[serde(default)]
    pub split: Option<[u32; 3]>,
    #[serde(default)]
    pub fixed_rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Registry {
    pub datasets: BTreeMap<String, RegistryEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A dataset read from disk, endogenous column last.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub descriptor: DatasetDescriptor,
    pub table: RawTable,
    pub split: SplitSpec,
}

impl Registry {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut reg: Registry = toml::from_str(text).map_err(|e| Error::Config(format!("registry: {e}")))?;
        reg.base_dir = base_dir.into();
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn entry(&self, name: &str) -> Result<&RegistryEntry> {
        self.datasets.get(name).ok_or_else(|| {
            Error::Config(format!(
                "dataset `{name}` not in registry (known: {:?})",
                self.datasets.keys().collect::<Vec<_>>()
            ))
        })
    }

    pub fn split_for(&self, name: &str) -> Result<SplitSpec> {
        let e = self.entry(name)?;
        let mut spec = SplitSpec::for_dataset(name);
        if let Some(parts) = e.split {
            spec.parts = parts;
        }
        if let Some(total_rows) = e.fixed_rows {
            spec.border_mode = BorderMode::FixedRows { total_rows };
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load_dataset(&self, name: &str) -> Result<LoadedDataset> {
        let e = self.entry(name)?;
        let path = if e.path.is_absolute() {
            e.path.clone()
        } else {
            self.base_dir.join(&e.path)
        };
        let mut descriptor = DatasetDescriptor {
            name: name.to_string(),
            domain: e.domain.clone(),
            frequency: e.frequency.clone(),
            variate_names: Vec::new(),
            endogenous_name: String::new(),
            endogenous_description: e.endogenous_description.clone(),
            exogenous_descriptions: e.exogenous_descriptions.clone(),
            source_note: e.source_note.clone(),
        };
        let mut table = load_csv(&path, &descriptor)?;
        if let Some(endo) = &e.endogenous {
            table = table.with_endogenous_last(endo)?;
        }
        descriptor.variate_names = table.columns.clone();
        descriptor.endogenous_name = table.columns.last().cloned().unwrap_or_default();
        descriptor.validate()?;
        Ok(LoadedDataset {
            descriptor,
            table,
            split: self.split_for(name)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REG: &str = r#"
[datasets.ETTh1]
path = "etth1.csv"
domain = "Electricity"
frequency = "1 Hour"
exogenous_descriptions = "Power Load Feature"
endogenous_description = "Oil Temperature"
source_note = "Transformer station records."

[datasets.NP]
path = "np.csv"
domain = "Electricity"
frequency = "1 Hour"
exogenous_descriptions = "Grid Load, Wind Power"
source_note = "Nord Pool market."
endogenous = "price"
split = [6, 2, 2]
"#;

    #[test]
    fn parses_entries_and_splits() {
        let r = Registry::from_toml(REG, "/data").unwrap();
        assert_eq!(r.split_for("ETTh1").unwrap(), SplitSpec::ett_hourly());
        assert_eq!(r.split_for("NP").unwrap(), SplitSpec::ratio(6, 2, 2));
        assert!(r.entry("PJM").is_err());
        assert!(Registry::from_toml("[datasets.X]\npath='x'", ".").is_err());
    }

    #[test]
    fn loads_and_reorders() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("reg.toml"), REG).unwrap();
        std::fs::write(
            dir.path().join("np.csv"),
            "date,price,load,wind\n2020-01-01 00:00:00,1,2,3\n2020-01-01 01:00:00,4,5,6\n",
        )
        .unwrap();
        let r = Registry::load(&dir.path().join("reg.toml")).unwrap();
        let d = r.load_dataset("NP").unwrap();
        assert_eq!(d.table.columns, vec!["load", "wind", "price"]);
        assert_eq!(d.descriptor.endogenous_name, "price");
        assert_eq!(d.descriptor.target_label(), "price");
        assert_eq!(d.table.values[[1, 2]], 4.0);
    }
}
