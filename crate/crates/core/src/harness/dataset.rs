use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    /// A file path, or `scene:<spec>` for a synthetic scene.
    pub image: String,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl DatasetItem {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.answer.trim().is_empty() {
            return Err("answer is empty".into());
        }
        if let Some(choices) = &self.choices {
            if !choices.iter().any(|c| c == &self.answer) {
                return Err(format!("answer {:?} is not one of the choices", self.answer));
            }
        }
        Ok(())
    }

    /// The scene spec when `image` is `scene:<spec>`.
    pub fn scene_spec(&self) -> Option<&str> {
        self.image.strip_prefix("scene:")
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetItem>> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

/// One JSON object per line; blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetItem>> {
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Dataset { line: i + 1, message };
        let item: DatasetItem = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        item.validate().map_err(err)?;
        items.push(item);
    }
    Ok(items)
}
