use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON parameter checkpoint: named sections, each a list of named tensors.
///
/// Floats are written with shortest round-trip formatting and parsed with
/// correct rounding, so save/load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub sections: BTreeMap<String, Vec<NamedTensor>>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            sections: BTreeMap::new(),
        }
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<P: ParamSet>(&mut self, section: &str, params: &P) {
        let tensors = params
            .named_tensors()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        self.sections.insert(section.to_string(), tensors);
    }

    /// Copy a stored section into `params`, which must have the same layout.
    pub fn restore<P: ParamSet>(&self, section: &str, params: &mut P) -> Result<()> {
        let stored = self
            .sections
            .get(section)
            .ok_or_else(|| Error::State(format!("checkpoint has no section {section:?}")))?;
        let expected: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != stored.len() {
            return Err(Error::Shape(format!(
                "section {section:?} holds {} tensors, expected {}",
                stored.len(),
                expected.len()
            )));
        }
        for ((name, shape), s) in expected.iter().zip(stored) {
            if *name != s.name || *shape != s.shape {
                return Err(Error::Shape(format!(
                    "section {section:?}: expected {name} {shape:?}, found {} {:?}",
                    s.name, s.shape
                )));
            }
            // Validates length and finiteness.
            Tensor::new(s.shape.clone(), s.data.clone())?;
        }
        for (t, s) in params.tensors_mut().into_iter().zip(stored) {
            t.data_mut().copy_from_slice(&s.data);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(format!(
                "unsupported checkpoint format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                ck.format_version
            ));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|m| Error::format(path, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::MlpParams;
    use crate::rng::stream;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut r = stream(4, &[1]);
        let net = MlpParams::init(&[3, 64, 64, 2], &mut r);
        let mut ck = Checkpoint::new();
        ck.insert("actor.mean_net", &net);
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        let mut restored = net.zeros_like();
        back.restore("actor.mean_net", &mut restored).unwrap();
        let a: Vec<u64> = net.flatten().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = restored.flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_layout_mismatch_and_bad_version() {
        let mut ck = Checkpoint::new();
        ck.insert("net", &MlpParams::zeros(&[2, 3, 1]));
        let mut other = MlpParams::zeros(&[2, 4, 1]);
        assert!(matches!(ck.restore("net", &mut other), Err(Error::Shape(_))));
        assert!(matches!(ck.restore("missing", &mut other), Err(Error::State(_))));
        let text = ck.to_json().replace("\"format_version\":1", "\"format_version\":9");
        assert!(Checkpoint::from_json(&text).unwrap_err().contains("version"));
    }
}
