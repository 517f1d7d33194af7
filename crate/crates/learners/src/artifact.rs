//! Versioned JSON model artifacts.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::FittedModel;
use crate::{LearnerError, Result};

pub const ARTIFACT_SCHEMA_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Artifact {
    schema_version: u64,
    model: FittedModel,
}

/// Pretty-printed JSON with struct fields in declaration order, so two
/// artifacts can be diffed line by line.
pub fn serialize_model(model: &FittedModel) -> Vec<u8> {
    #[derive(Serialize)]
    struct ArtifactRef<'a> {
        schema_version: u64,
        model: &'a FittedModel,
    }
    let mut bytes = serde_json::to_vec_pretty(&ArtifactRef {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        model,
    })
    .expect("model state is always serializable");
    bytes.push(b'\n');
    bytes
}

pub fn deserialize_model(bytes: &[u8]) -> Result<FittedModel> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| LearnerError::CorruptArtifact(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| LearnerError::CorruptArtifact("missing schema_version".into()))?;
    if version != ARTIFACT_SCHEMA_VERSION {
        return Err(LearnerError::VersionMismatch {
            found: version,
            supported: ARTIFACT_SCHEMA_VERSION,
        });
    }
    let artifact: Artifact =
        serde_json::from_value(value).map_err(|e| LearnerError::CorruptArtifact(e.to_string()))?;
    Ok(artifact.model)
}
