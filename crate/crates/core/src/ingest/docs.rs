use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::costmodel::ModelSpec;
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::pipesim::SimConfig;
use crate::recompute::RecomputePlan;

pub const SCHEMA_VERSION: u32 = 1;
const VERSION_KEY: &str = "schema_version";

/// Pretty JSON object with a `schema_version` field and a trailing newline.
pub fn to_versioned_string<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    let Value::Object(map) = &mut v else {
        return Err(Error::invalid("only JSON objects carry a schema version"));
    };
    map.insert(VERSION_KEY.into(), Value::from(SCHEMA_VERSION));
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn from_versioned_str<T: DeserializeOwned>(s: &str) -> Result<T> {
    let mut v: Value = serde_json::from_str(s)?;
    let Value::Object(map) = &mut v else {
        return Err(Error::invalid("expected a JSON object"));
    };
    match map.remove(VERSION_KEY) {
        None => return Err(Error::invalid(format!("missing field `{VERSION_KEY}`"))),
        Some(found) => {
            let found = found
                .as_u64()
                .ok_or_else(|| Error::invalid(format!("`{VERSION_KEY}` must be an integer")))?;
            if found != u64::from(SCHEMA_VERSION) {
                return Err(Error::SchemaVersion {
                    found,
                    expected: SCHEMA_VERSION,
                });
            }
        }
    }
    Ok(serde_json::from_value(v)?)
}

pub fn save_doc<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_versioned_string(value)?)?;
    Ok(())
}

pub fn load_doc<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    from_versioned_str(&fs::read_to_string(path)?)
}

/// Reads and validates a model spec document.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let spec: ModelSpec = load_doc(path)?;
    spec.validate()?;
    Ok(spec)
}

/// A partitioned model with its re-computation choice and simulator setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDoc {
    pub model: ModelSpec,
    pub partition: Partition,
    pub stages_layer_num: Vec<u32>,
    pub recompute_cancelled_per_stage: Vec<u32>,
    pub stored_layers: Vec<u32>,
    pub sim: SimConfig,
}

impl PlanDoc {
    pub fn new(
        model: ModelSpec,
        partition: Partition,
        plan: &RecomputePlan,
        sim: SimConfig,
    ) -> Result<Self> {
        partition.check_against(&model)?;
        plan.check_against(&model, &partition)?;
        Ok(Self {
            stages_layer_num: partition.stages_layer_num(),
            recompute_cancelled_per_stage: plan.per_stage_cancelled.clone(),
            stored_layers: plan.stored_layers(),
            model,
            partition,
            sim,
        })
    }

    pub fn recompute_plan(&self) -> Result<RecomputePlan> {
        RecomputePlan::from_stored(&self.partition, &self.stored_layers)
    }

    /// Checks the redundant summary fields against the partition and plan.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.partition.check_against(&self.model)?;
        if self.stages_layer_num != self.partition.stages_layer_num() {
            return Err(Error::invalid("stages_layer_num disagrees with partition"));
        }
        if self.recompute_cancelled_per_stage != self.recompute_plan()?.per_stage_cancelled {
            return Err(Error::invalid(
                "recompute_cancelled_per_stage disagrees with stored_layers",
            ));
        }
        self.sim.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: Self = load_doc(path)?;
        doc.validate()?;
        Ok(doc)
    }
}

/// Non-finite floats as JSON `null` (infinite bandwidth).
pub(crate) mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versioned_round_trip() {
        let spec = ModelSpec::uniform(4, 2.5, 64).unwrap();
        let s = to_versioned_string(&spec).unwrap();
        assert!(s.contains("\"schema_version\": 1"));
        assert_eq!(from_versioned_str::<ModelSpec>(&s).unwrap(), spec);
    }

    #[test]
    fn wrong_or_missing_version() {
        let spec = ModelSpec::uniform(2, 1.0, 1).unwrap();
        let s = to_versioned_string(&spec)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(
            from_versioned_str::<ModelSpec>(&s),
            Err(Error::SchemaVersion {
                found: 7,
                expected: 1
            })
        ));
        let e = from_versioned_str::<ModelSpec>("{\"layers\": []}").unwrap_err();
        assert!(e.to_string().contains("schema_version"));
    }

    #[test]
    fn missing_field_is_named() {
        let e =
            from_versioned_str::<ModelSpec>("{\"schema_version\": 1, \"layers\": []}").unwrap_err();
        assert!(e.to_string().contains("vision_seq_tokens"), "{e}");
    }

    #[test]
    fn plan_doc_mirrors_stage_sizes() {
        let spec = ModelSpec::uniform(93, 1.0, 8).unwrap();
        let p = Partition::from_stage_sizes(&[22, 23, 24, 24]).unwrap();
        let plan = RecomputePlan::from_stored(&p, &[1, 2, 30]).unwrap();
        let doc = PlanDoc::new(spec, p, &plan, SimConfig::ideal(4)).unwrap();
        let s = to_versioned_string(&doc).unwrap();
        let compact: String = s.split_whitespace().collect();
        assert!(compact.contains("\"stages_layer_num\":[22,23,24,24]"));
        assert!(compact.contains("\"recompute_cancelled_per_stage\":[2,1,0,0]"));
        let back: PlanDoc = from_versioned_str(&s).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.sim.p2p_bandwidth, f64::INFINITY);
        back.validate().unwrap();
    }
}
