//! Calibrated item banks and their JSON file format.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::irt::{IrtError, ItemParameters};

pub const BANK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("duplicate item identifier `{0}`")]
    DuplicateItem(String),
    #[error("item `{item}`: {source}")]
    InvalidItem { item: String, source: IrtError },
    #[error("unsupported bank schema_version {found} (expected {expected})")]
    SchemaVersion { found: u64, expected: u32 },
    #[error("bank file: item `{item}`: {message}")]
    ItemField { item: String, message: String },
    #[error("bank file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// One calibrated item and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankItem {
    pub item_id: String,
    #[serde(flatten)]
    pub params: ItemParameters,
    /// Index of the calibration partition that produced the item.
    #[serde(default)]
    pub partition: usize,
    /// Excluded from selection by the post-calibration screen.
    #[serde(default)]
    pub filtered: bool,
    #[serde(default)]
    pub notes: String,
}

impl BankItem {
    pub fn new(item_id: impl Into<String>, params: ItemParameters) -> Self {
        Self {
            item_id: item_id.into(),
            params,
            partition: 0,
            filtered: !params.is_operational(),
            notes: String::new(),
        }
    }

    /// Selectable by the adaptive engine.
    pub fn is_operational(&self) -> bool {
        !self.filtered && self.params.is_operational()
    }
}

/// Mean and SD of the ability metric the bank is expressed on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub mean: f64,
    pub sd: f64,
}

impl Default for Scale {
    fn default() -> Self {
        Self { mean: 0.0, sd: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub partition: usize,
    #[serde(rename = "A")]
    pub scale: f64,
    #[serde(rename = "B")]
    pub shift: f64,
}

/// Calibration provenance carried alongside the items.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BankMetadata {
    #[serde(default)]
    pub partitions: usize,
    #[serde(default)]
    pub partition_sizes: Vec<usize>,
    /// Partitions whose EM run stopped on the iteration cap.
    #[serde(default)]
    pub non_converged_partitions: Vec<usize>,
    #[serde(default)]
    pub links: Vec<LinkRecord>,
    /// Whether the linked metric was re-standardized after linking (never, currently).
    #[serde(default)]
    pub restandardized: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Immutable, identifier-indexed collection of items. Safe to share across sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemBank {
    items: Vec<BankItem>,
    index: HashMap<String, usize>,
    pub scale: Scale,
    pub metadata: BankMetadata,
}

#[derive(Serialize)]
struct BankFileOut<'a> {
    schema_version: u32,
    scale: Scale,
    metadata: &'a BankMetadata,
    items: &'a [BankItem],
}

#[derive(Deserialize)]
struct BankFileIn {
    schema_version: u64,
    #[serde(default)]
    scale: Option<Scale>,
    #[serde(default)]
    metadata: Option<BankMetadata>,
    items: Vec<Value>,
}

impl ItemBank {
    pub fn new(items: Vec<BankItem>) -> Result<Self, BankError> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            item.params
                .validate()
                .map_err(|source| BankError::InvalidItem { item: item.item_id.clone(), source })?;
            if index.insert(item.item_id.clone(), i).is_some() {
                return Err(BankError::DuplicateItem(item.item_id.clone()));
            }
        }
        Ok(Self { items, index, scale: Scale::default(), metadata: BankMetadata::default() })
    }

    /// Bank from bare parameters; the operational screen sets `filtered`.
    pub fn from_parameters<I, S>(params: I) -> Result<Self, BankError>
    where
        I: IntoIterator<Item = (S, ItemParameters)>,
        S: Into<String>,
    {
        Self::new(params.into_iter().map(|(id, p)| BankItem::new(id, p)).collect())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[BankItem] {
        &self.items
    }

    pub fn get(&self, item_id: &str) -> Option<&BankItem> {
        self.index.get(item_id).map(|&i| &self.items[i])
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn params(&self, item_id: &str) -> Option<&ItemParameters> {
        self.get(item_id).map(|item| &item.params)
    }

    pub fn operational(&self) -> impl Iterator<Item = &BankItem> {
        self.items.iter().filter(|item| item.is_operational())
    }

    pub fn operational_count(&self) -> usize {
        self.operational().count()
    }

    pub fn to_json(&self) -> String {
        let file = BankFileOut {
            schema_version: BANK_SCHEMA_VERSION,
            scale: self.scale,
            metadata: &self.metadata,
            items: &self.items,
        };
        let mut out = serde_json::to_string_pretty(&file).expect("bank serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, BankError> {
        let file: BankFileIn = serde_json::from_str(text).map_err(|e| BankError::Format(e.to_string()))?;
        if file.schema_version != u64::from(BANK_SCHEMA_VERSION) {
            return Err(BankError::SchemaVersion { found: file.schema_version, expected: BANK_SCHEMA_VERSION });
        }
        let mut items = Vec::with_capacity(file.items.len());
        for (i, raw) in file.items.into_iter().enumerate() {
            let name = raw
                .get("item_id")
                .and_then(Value::as_str)
                .map(str::to_owned)
                .unwrap_or_else(|| format!("#{i}"));
            let item: BankItem = serde_json::from_value(raw)
                .map_err(|e| BankError::ItemField { item: name.clone(), message: e.to_string() })?;
            items.push(item);
        }
        let mut bank = Self::new(items)?;
        bank.scale = file.scale.unwrap_or_default();
        bank.metadata = file.metadata.unwrap_or_default();
        Ok(bank)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BankError> {
        let path = path.as_ref();
        let text = self.to_json();
        // fail fast if what we are about to write would not read back
        Self::from_json(&text)?;
        fs::write(path, text).map_err(|source| BankError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BankError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| BankError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

/// Writes `bank` to `path` in the bank JSON format.
pub fn export_calibration(bank: &ItemBank, path: impl AsRef<Path>) -> Result<(), BankError> {
    bank.save(path)
}

pub fn import_calibration(path: impl AsRef<Path>) -> Result<ItemBank, BankError> {
    ItemBank::load(path)
}
