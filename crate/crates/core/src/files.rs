//! Aliased file roots and the confinement rule shared by `/files/...`
//! requests and the file service.
//!
//! A request names an alias and a relative path. Every segment must be a
//! plain name: empty segments (absolute paths), `..`, and segments holding a
//! separator, backslash or NUL are refused before touching the disk. The
//! joined path is then canonicalized and must still lie under the canonical
//! root, which also catches symlinks pointing outside.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FileError {
    #[error("forbidden path: {0}")]
    Forbidden(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad file root: {0}")]
    BadRoot(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRoot {
    pub alias: String,
    pub directory: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileRoots {
    roots: BTreeMap<String, PathBuf>,
}

impl FileRoots {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, alias: &str, directory: impl AsRef<Path>) -> Result<(), FileError> {
        if !crate::wire::is_valid_segment(alias) || alias.contains('\\') {
            return Err(FileError::BadRoot(format!("invalid alias {alias:?}")));
        }
        if self.roots.contains_key(alias) {
            return Err(FileError::BadRoot(format!("duplicate alias {alias:?}")));
        }
        let dir = directory.as_ref();
        let canonical = dir
            .canonicalize()
            .map_err(|e| FileError::BadRoot(format!("{}: {e}", dir.display())))?;
        if !canonical.is_dir() {
            return Err(FileError::BadRoot(format!("{} is not a directory", dir.display())));
        }
        self.roots.insert(alias.to_string(), canonical);
        Ok(())
    }

    /// Parses `alias=path`, the command-line form.
    pub fn add_spec(&mut self, spec: &str) -> Result<(), FileError> {
        let (alias, dir) = spec
            .split_once('=')
            .ok_or_else(|| FileError::BadRoot(format!("expected alias=path, got {spec:?}")))?;
        self.add(alias, dir)
    }

    pub fn roots(&self) -> Vec<FileRoot> {
        self.roots
            .iter()
            .map(|(alias, directory)| FileRoot {
                alias: alias.clone(),
                directory: directory.clone(),
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Resolves already-decoded segments, the first being the alias.
    pub fn resolve_segments<S: AsRef<str>>(&self, segments: &[S]) -> Result<PathBuf, FileError> {
        let display = || segments.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join("/");
        let Some((alias, rest)) = segments.split_first() else {
            return Err(FileError::Forbidden("empty path".into()));
        };
        let root = self
            .roots
            .get(alias.as_ref())
            .ok_or_else(|| FileError::Forbidden(format!("unknown root {:?}", alias.as_ref())))?;
        let mut target = root.clone();
        for (i, seg) in rest.iter().enumerate() {
            let seg = seg.as_ref();
            // a single trailing slash names the directory itself
            if seg.is_empty() && i + 1 == rest.len() {
                continue;
            }
            if seg.is_empty() || seg == ".." || seg.contains(['/', '\\', '\0']) || Path::new(seg).is_absolute() {
                return Err(FileError::Forbidden(display()));
            }
            if seg == "." {
                continue;
            }
            target.push(seg);
        }
        let canonical = match target.canonicalize() {
            Ok(c) => c,
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::NotFound | std::io::ErrorKind::NotADirectory
                ) =>
            {
                return Err(FileError::NotFound(display()))
            }
            Err(e) => return Err(FileError::Io(e.to_string())),
        };
        if !canonical.starts_with(root) {
            return Err(FileError::Forbidden(display()));
        }
        Ok(canonical)
    }

    /// Resolves `alias/rel/...` as passed to the file service (no decoding).
    pub fn resolve(&self, relative: &str) -> Result<PathBuf, FileError> {
        let segments: Vec<&str> = relative.split('/').collect();
        self.resolve_segments(&segments)
    }

    /// Resolves the raw, percent-encoded remainder of a `/files/` request.
    pub fn resolve_encoded(&self, raw: &str) -> Result<PathBuf, FileError> {
        let mut segments = Vec::new();
        for part in raw.split('/') {
            let decoded = percent_encoding::percent_decode_str(part)
                .decode_utf8()
                .map_err(|_| FileError::Forbidden(raw.to_string()))?;
            segments.push(decoded.into_owned());
        }
        self.resolve_segments(&segments)
    }

    pub fn read(&self, relative: &str) -> Result<(Vec<u8>, &'static str), FileError> {
        read_file(&self.resolve(relative)?)
    }

    /// Directory entries, sorted; sub-directories carry a trailing `/`.
    pub fn list(&self, relative: &str) -> Result<Vec<String>, FileError> {
        let dir = self.resolve(relative)?;
        if !dir.is_dir() {
            return Err(FileError::NotFound(format!("{relative} is not a directory")));
        }
        let mut names = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| FileError::Io(e.to_string()))? {
            let entry = entry.map_err(|e| FileError::Io(e.to_string()))?;
            let mut name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().is_dir() {
                name.push('/');
            }
            names.push(name);
        }
        names.sort();
        Ok(names)
    }
}

pub fn read_file(path: &Path) -> Result<(Vec<u8>, &'static str), FileError> {
    if !path.is_file() {
        return Err(FileError::NotFound(path.display().to_string()));
    }
    let bytes = std::fs::read(path).map_err(|e| FileError::Io(e.to_string()))?;
    Ok((bytes, content_type(path)))
}

pub fn content_type(path: &Path) -> &'static str {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("html" | "htm") => "text/html",
        Some("xml") => "application/xml",
        Some("txt") => "text/plain",
        Some("png") => "image/png",
        Some("css") => "text/css",
        Some("js") => "application/javascript",
        _ => "application/octet-stream",
    }
}
