//! On-disk layout of one run.
//!
//! ```text
//! <run dir>/
//!   events.log     append-only JSONL (see events module)
//!   tree.json      the memory tree document, raw blobs excluded
//!   entries/       raw captured output, one blob per entry id
//!   summary.json   machine summary (deterministic fields only)
//!   report.txt     human report (timestamps, durations)
//! ```

use std::path::{Path, PathBuf};

use crate::memory::{EntryId, MemoryTree};

pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    /// Creates the directory skeleton. The run directory itself may exist but
    /// must not already contain a run (fresh-attempt isolation).
    pub fn create(root: &Path) -> std::io::Result<RunStore> {
        std::fs::create_dir_all(root)?;
        let events = root.join("events.log");
        if events.exists() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{} already holds a run", root.display()),
            ));
        }
        std::fs::create_dir_all(root.join("entries"))?;
        Ok(RunStore {
            root: root.to_path_buf(),
        })
    }

    /// Opens an existing run directory for reading.
    pub fn open(root: &Path) -> std::io::Result<RunStore> {
        if !root.join("events.log").is_file() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} is not a run directory (no events.log)", root.display()),
            ));
        }
        Ok(RunStore {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn events_path(&self) -> PathBuf {
        self.root.join("events.log")
    }

    pub fn tree_path(&self) -> PathBuf {
        self.root.join("tree.json")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    fn blob_path(&self, id: EntryId) -> PathBuf {
        self.root.join("entries").join(format!("{id}.bin"))
    }

    /// Writes the tree document and one blob file per entry's raw output.
    pub fn save_tree(&self, tree: &MemoryTree) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(tree).expect("tree serialization");
        std::fs::write(self.tree_path(), json)?;
        for (id, entry) in &tree.entries {
            let path = self.blob_path(*id);
            // blobs are append-only: written once when the entry appears
            if !path.exists() {
                std::fs::write(path, &entry.raw_output)?;
            }
        }
        Ok(())
    }

    /// Loads the tree document and rehydrates raw blobs from disk.
    pub fn load_tree(&self) -> std::io::Result<MemoryTree> {
        let json = std::fs::read_to_string(self.tree_path())?;
        let mut tree: MemoryTree = serde_json::from_str(&json)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let ids: Vec<EntryId> = tree.entries.keys().copied().collect();
        for id in ids {
            let path = self.blob_path(id);
            if path.is_file() {
                tree.entries.get_mut(&id).unwrap().raw_output = std::fs::read(path)?;
            }
        }
        Ok(tree)
    }
}
