use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Writes every file or none: each goes to a temporary name first, and the
/// renames only start once all temporaries are complete. A failed rename
/// removes the files already moved into place.
pub fn write_all(dir: &Path, files: &[(String, String)]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let mut renamed = 0;
    let result = (|| {
        for (name, body) in files {
            let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
            staged.push((tmp.clone(), dir.join(name)));
            fs::write(&tmp, body)?;
        }
        for (tmp, dest) in &staged {
            fs::rename(tmp, dest)?;
            renamed += 1;
        }
        Ok(())
    })();
    if result.is_err() {
        for (i, (tmp, dest)) in staged.iter().enumerate() {
            let _ = fs::remove_file(if i < renamed { dest } else { tmp });
        }
    }
    result
}
