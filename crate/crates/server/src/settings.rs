//! User-facing display settings, persisted as JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Colors {
    pub human: String,
    pub bot: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub username: String,
    pub colors: Colors,
    /// URL or data URI of the profile picture.
    pub avatar: Option<String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            username: "You".into(),
            colors: Colors {
                human: "#2b6cb0".into(),
                bot: "#4a5568".into(),
            },
            avatar: None,
        }
    }
}

/// Partial update; absent fields keep their value.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsPatch {
    pub username: Option<String>,
    pub colors: Option<ColorsPatch>,
    pub avatar: Option<Option<String>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorsPatch {
    pub human: Option<String>,
    pub bot: Option<String>,
}

const MAX_USERNAME: usize = 64;
const MAX_COLOR: usize = 32;

impl Settings {
    pub fn apply(&self, patch: SettingsPatch) -> Result<Settings, String> {
        let mut next = self.clone();
        if let Some(u) = patch.username {
            let u = u.trim().to_string();
            if u.is_empty() || u.chars().count() > MAX_USERNAME {
                return Err(format!("username must be 1..={MAX_USERNAME} characters"));
            }
            next.username = u;
        }
        if let Some(c) = patch.colors {
            for (slot, value) in [(&mut next.colors.human, c.human), (&mut next.colors.bot, c.bot)] {
                if let Some(v) = value {
                    if v.trim().is_empty() || v.len() > MAX_COLOR {
                        return Err(format!("colors must be 1..={MAX_COLOR} characters"));
                    }
                    *slot = v;
                }
            }
        }
        if let Some(a) = patch.avatar {
            next.avatar = a;
        }
        Ok(next)
    }
}

pub struct SettingsStore {
    path: PathBuf,
    current: Settings,
}

impl SettingsStore {
    /// Loads `path`, or defaults when the file does not exist yet.
    pub fn open(path: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let path = path.into();
        let current = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Settings::default(),
            Err(e) => return Err(e.into()),
        };
        Ok(SettingsStore { path, current })
    }

    pub fn get(&self) -> &Settings {
        &self.current
    }

    pub fn set(&mut self, next: Settings) -> std::io::Result<()> {
        write_atomic(&self.path, serde_json::to_string_pretty(&next)?.as_bytes())?;
        self.current = next;
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_rules() {
        let s = Settings::default();
        let p: SettingsPatch = serde_json::from_str(r#"{"username":"Ana"}"#).unwrap();
        assert_eq!(s.apply(p).unwrap().username, "Ana");
        let p: SettingsPatch = serde_json::from_str(r#"{"username":"  "}"#).unwrap();
        assert!(s.apply(p).is_err());
        assert!(serde_json::from_str::<SettingsPatch>(r#"{"theme":"dark"}"#).is_err());
        let p: SettingsPatch = serde_json::from_str(r#"{"colors":{"bot":"red"},"avatar":"a.png"}"#).unwrap();
        let n = s.apply(p).unwrap();
        assert_eq!(n.colors.bot, "red");
        assert_eq!(n.colors.human, s.colors.human);
        assert_eq!(n.avatar.as_deref(), Some("a.png"));
    }
}
