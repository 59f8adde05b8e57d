use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::SessionRecord;
use crate::error::{Error, Result};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "UPDATELAB_DATA_DIR";

/// One JSON file per session, replaced atomically on every save.
#[derive(Clone, Debug)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<SessionStore> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(SessionStore { dir })
    }

    /// `$UPDATELAB_DATA_DIR`, falling back to `./data`.
    pub fn from_env() -> Result<SessionStore> {
        SessionStore::open(std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| "data".into()))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> Result<PathBuf> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::usage(format!("invalid session id {id:?}")));
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    pub fn save(&self, record: &SessionRecord) -> Result<()> {
        let path = self.path(&record.session_id)?;
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec_pretty(record)?;
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&body).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn load(&self, id: &str) -> Result<SessionRecord> {
        let path = self.path(id)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("session {id}")));
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(serde_json::from_str(&text)?)
    }

    /// All stored records, sorted by id.
    pub fn list(&self) -> Result<Vec<SessionRecord>> {
        let mut ids: Vec<String> = fs::read_dir(&self.dir)
            .map_err(|e| Error::io(&self.dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".json").map(str::to_string))
            .collect();
        ids.sort();
        ids.iter().map(|id| self.load(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::lab;
    use super::super::{Session, SessionConfig};
    use super::*;
    use crate::demo::Strategy;

    #[test]
    fn save_load_list() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path().join("nested")).unwrap();
        let rec = Session::new(lab(), "abc-1", SessionConfig::live(Strategy::Same, 1)).unwrap().record();
        store.save(&rec).unwrap();
        store.save(&rec).unwrap();
        assert_eq!(store.load("abc-1").unwrap(), rec);
        assert_eq!(store.list().unwrap(), vec![rec]);
        assert!(matches!(store.load("nope"), Err(Error::NotFound(_))));
        assert!(matches!(store.load("../x"), Err(Error::Usage(_))));
        assert!(!dir.path().join("nested/abc-1.json.tmp").exists());
    }
}
