//! `config.json`, shared between the host and the firmware.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CodecError;

/// Every key the firmware reads, in file order.
pub const REQUIRED_FIELDS: [&str; 12] = [
    "version",
    "inputSize",
    "numClasses",
    "classLabels",
    "learningRate",
    "batchSize",
    "targetEpochs",
    "useAugmentation",
    "useGrayscale",
    "imagesToPsram",
    "validationImages",
    "weightsFile",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainConfig {
    pub version: i64,
    pub input_size: usize,
    pub num_classes: usize,
    pub class_labels: Vec<String>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub target_epochs: u64,
    pub use_augmentation: bool,
    pub use_grayscale: bool,
    pub images_to_psram: bool,
    pub validation_images: usize,
    pub weights_file: String,
    /// Keys this version does not know about, kept verbatim.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            version: 68,
            input_size: 64,
            num_classes: 3,
            class_labels: vec!["0Blank".into(), "1Cup".into(), "2Pen".into()],
            learning_rate: 0.0003,
            batch_size: 6,
            target_epochs: 20,
            use_augmentation: true,
            use_grayscale: false,
            images_to_psram: true,
            validation_images: 3,
            weights_file: "myWeights.bin".into(),
            extra: Map::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        let invalid = |field: &str, why: String| Err(CodecError::ConfigInvalid {
            field: field.to_string(),
            reason: why,
        });
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return invalid("learningRate", format!("must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size < 1 {
            return invalid("batchSize", "must be at least 1".into());
        }
        if self.input_size < 8 {
            return invalid("inputSize", format!("must be at least 8, got {}", self.input_size));
        }
        if self.num_classes != self.class_labels.len() {
            return invalid(
                "classLabels",
                format!(
                    "{} labels listed but numClasses is {}",
                    self.class_labels.len(),
                    self.num_classes
                ),
            );
        }
        if let Some(bad) = self
            .class_labels
            .iter()
            .find(|l| l.is_empty() || l.contains(['/', '\\', '\n', '\r', '\0']) || *l == "." || *l == "..")
        {
            return invalid("classLabels", format!("label {bad:?} is not a valid folder name"));
        }
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<TrainConfig, CodecError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CodecError::ConfigInvalid {
        field: String::new(),
        reason: format!("not valid JSON: {e}"),
    })?;
    let Value::Object(map) = &value else {
        return Err(CodecError::ConfigInvalid {
            field: String::new(),
            reason: "top level must be an object".into(),
        });
    };
    if let Some(missing) = REQUIRED_FIELDS.iter().find(|f| !map.contains_key(**f)) {
        return Err(CodecError::ConfigInvalid {
            field: missing.to_string(),
            reason: "missing required field".into(),
        });
    }
    for field in REQUIRED_FIELDS {
        // type-check field by field so the error names the culprit
        if let Err(e) = check_field_type(field, &map[field]) {
            return Err(CodecError::ConfigInvalid {
                field: field.to_string(),
                reason: e,
            });
        }
    }
    let config: TrainConfig = serde_json::from_value(value).map_err(|e| CodecError::ConfigInvalid {
        field: String::new(),
        reason: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

fn check_field_type(field: &str, inner: &Value) -> Result<(), String> {
    let ok = match field {
        "version" => inner.as_i64().is_some(),
        "inputSize" | "numClasses" | "batchSize" | "targetEpochs" | "validationImages" => {
            inner.as_u64().is_some()
        }
        "learningRate" => inner.as_f64().is_some(),
        "classLabels" => inner
            .as_array()
            .is_some_and(|a| a.iter().all(Value::is_string)),
        "useAugmentation" | "useGrayscale" | "imagesToPsram" => inner.is_boolean(),
        "weightsFile" => inner.is_string(),
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("unexpected value {inner}"))
    }
}

/// Pretty-printed JSON, known fields in canonical order followed by any
/// preserved unknown fields.
pub fn emit_config(config: &TrainConfig) -> String {
    let mut text = serde_json::to_string_pretty(config).expect("config serializes");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTING: &str = r#"{
  "version": 68,
  "inputSize": 64,
  "numClasses": 3,
  "classLabels": ["0Blank", "1Cup", "2Pen"],
  "learningRate": 0.0003,
  "batchSize": 6,
  "targetEpochs": 20,
  "useAugmentation": true,
  "useGrayscale": false,
  "imagesToPsram": true,
  "validationImages": 3,
  "weightsFile": "myWeights.bin"
}"#;

    #[test]
    fn parses_reference_config() {
        let c = parse_config(LISTING).unwrap();
        assert_eq!(c, TrainConfig::default());
        assert_eq!(c.learning_rate, 0.0003);
        assert_eq!(c.batch_size, 6);
        assert_eq!(c.validation_images, 3);
    }

    #[test]
    fn emit_parse_identity() {
        let c = parse_config(LISTING).unwrap();
        let again = parse_config(&emit_config(&c)).unwrap();
        assert_eq!(again, c);
        let a: Value = serde_json::from_str(LISTING).unwrap();
        let b: Value = serde_json::from_str(&emit_config(&c)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_field_is_named() {
        let text = LISTING.replace("  \"classLabels\": [\"0Blank\", \"1Cup\", \"2Pen\"],\n", "");
        match parse_config(&text) {
            Err(CodecError::ConfigInvalid { field, .. }) => assert_eq!(field, "classLabels"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_type_is_named() {
        let text = LISTING.replace("\"batchSize\": 6", "\"batchSize\": \"six\"");
        match parse_config(&text) {
            Err(CodecError::ConfigInvalid { field, .. }) => assert_eq!(field, "batchSize"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values() {
        let text = LISTING.replace("0.0003", "0");
        assert!(matches!(parse_config(&text), Err(CodecError::ConfigInvalid { field, .. }) if field == "learningRate"));
        let text = LISTING.replace("\"batchSize\": 6", "\"batchSize\": 0");
        assert!(matches!(parse_config(&text), Err(CodecError::ConfigInvalid { field, .. }) if field == "batchSize"));
    }

    #[test]
    fn unknown_fields_survive() {
        let text = LISTING.replace(
            "\"weightsFile\": \"myWeights.bin\"",
            "\"weightsFile\": \"myWeights.bin\",\n  \"oledContrast\": 200,\n  \"nested\": {\"a\": [1, 2]}",
        );
        let c = parse_config(&text).unwrap();
        assert_eq!(c.extra.len(), 2);
        let emitted = emit_config(&c);
        let v: Value = serde_json::from_str(&emitted).unwrap();
        assert_eq!(v["oledContrast"], 200);
        assert_eq!(v["nested"]["a"][1], 2);
        assert_eq!(parse_config(&emitted).unwrap(), c);
    }
}
