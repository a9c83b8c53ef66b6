//! Output files written atomically and removed again unless the command
//! finishes.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::Context;

#[derive(Default)]
pub struct Outputs {
    created: Mutex<Vec<PathBuf>>,
    committed: bool,
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.partial-{}", std::process::id()))
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writes `bytes` to `path` through a temporary sibling and a rename.
    pub fn write(&self, path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let tmp = temp_path(path);
        fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
        if let Err(e) = fs::rename(&tmp, path) {
            let _ = fs::remove_file(&tmp);
            return Err(e).with_context(|| format!("renaming into {}", path.display()));
        }
        self.track(path);
        Ok(())
    }

    /// Records a file produced by other means so it is cleaned up on failure.
    pub fn track(&self, path: &Path) {
        self.created.lock().expect("output list poisoned").push(path.to_path_buf());
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        let created = self.created.get_mut().map(std::mem::take).unwrap_or_default();
        for path in created {
            if fs::remove_file(&path).is_ok() {
                log::info!("removed partial output {}", path.display());
            }
        }
    }
}
