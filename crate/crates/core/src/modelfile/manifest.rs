use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Download descriptor for a model file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub url: String,
    pub bytes: u64,
    pub md5: String,
    pub name: String,
    pub version: u32,
}

impl ModelManifest {
    pub fn validate(&self) -> Result<()> {
        if self.md5.len() != 32 || !self.md5.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(Error::InvalidValue(format!(
                "manifest md5 must be 32 lowercase hex chars, got {:?}",
                self.md5
            )));
        }
        if self.name.is_empty()
            || self.name.contains(['/', '\\'])
            || self.name == "."
            || self.name == ".."
        {
            return Err(Error::InvalidValue(format!(
                "manifest name {:?} is not a plain file name",
                self.name
            )));
        }
        if self.url.is_empty() {
            return Err(Error::InvalidValue("manifest url is empty".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelManifest {
        ModelManifest {
            url: "http://127.0.0.1:1/model.stlm".into(),
            bytes: 10,
            md5: "d41d8cd98f00b204e9800998ecf8427e".into(),
            name: "model.stlm".into(),
            version: 1,
        }
    }

    #[test]
    fn json_roundtrip() {
        let m = sample();
        assert_eq!(ModelManifest::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_md5_and_names() {
        for md5 in ["D41D8CD98F00B204E9800998ECF8427E", "abc", "g41d8cd98f00b204e9800998ecf8427e"] {
            let m = ModelManifest { md5: md5.into(), ..sample() };
            assert!(m.validate().is_err(), "{md5}");
        }
        for name in ["", "..", "a/b"] {
            let m = ModelManifest { name: name.into(), ..sample() };
            assert!(m.validate().is_err(), "{name}");
        }
        assert!(ModelManifest::from_json(r#"{"url":"x"}"#).is_err());
    }
}
