//! CLI plumbing: argument parsing helpers, filename-glob expansion, and a
//! deterministic bounded thread pool.

use std::path::{Path, PathBuf};

use tilt_rectify::UnitVec3;

use crate::CliError;

/// Parses `"x,y,z"` into a unit direction.
pub fn parse_vec3(text: &str) -> Result<UnitVec3, CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "expected a direction formatted as x,y,z, got {text:?}"
        )));
    }
    let mut v = [0.0_f64; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bad component {part:?} in direction {text:?}")))?;
    }
    UnitVec3::new(v[0], v[1], v[2])
        .map_err(|e| CliError::Usage(format!("direction {text:?}: {e}")))
}

/// Parses `"TxP"` bin counts, e.g. `18x36`.
pub fn parse_bins(text: &str) -> Result<(u32, u32), CliError> {
    let (t, p) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| CliError::Usage(format!("expected bins formatted as TxP, got {text:?}")))?;
    let n_theta: u32 = t
        .parse()
        .map_err(|_| CliError::Usage(format!("bad slant bin count in {text:?}")))?;
    let n_phi: u32 = p
        .parse()
        .map_err(|_| CliError::Usage(format!("bad tilt bin count in {text:?}")))?;
    if n_theta == 0 || n_phi == 0 {
        return Err(CliError::Usage("bin counts must be at least 1".into()));
    }
    Ok((n_theta, n_phi))
}

/// Matches `*` wildcards within the final path component against the files of
/// the parent directory; a pattern without wildcards names a single file.
/// Results come back sorted for deterministic pairing.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>, CliError> {
    let path = Path::new(pattern);
    let file_pattern = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("glob {pattern:?} has no file component")))?
        .to_string_lossy()
        .to_string();
    if !file_pattern.contains('*') {
        if path.is_file() {
            return Ok(vec![path.to_path_buf()]);
        }
        return Err(CliError::Usage(format!("input file {pattern:?} not found")));
    }
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| CliError::Usage(format!("cannot list {}: {e}", dir.display())))?;
    let mut matches = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Usage(e.to_string()))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if entry.path().is_file() && wildcard_match(&file_pattern, &name) {
            matches.push(entry.path());
        }
    }
    matches.sort();
    if matches.is_empty() {
        return Err(CliError::Usage(format!("glob {pattern:?} matched no files")));
    }
    Ok(matches)
}

fn wildcard_match(pattern: &str, name: &str) -> bool {
    // Classic two-pointer '*' matcher over bytes.
    let (p, n) = (pattern.as_bytes(), name.as_bytes());
    let (mut pi, mut ni) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None;
    while ni < n.len() {
        if pi < p.len() && (p[pi] == n[ni]) {
            pi += 1;
            ni += 1;
        } else if pi < p.len() && p[pi] == b'*' {
            star = Some((pi, ni));
            pi += 1;
        } else if let Some((sp, sn)) = star {
            pi = sp + 1;
            ni = sn + 1;
            star = Some((sp, sn + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == b'*' {
        pi += 1;
    }
    pi == p.len()
}

/// Thread cap from `TILT_RECTIFY_THREADS` (0 or unset = all available).
pub fn thread_cap() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("TILT_RECTIFY_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => available,
            Ok(n) => n.min(available),
        },
        Err(_) => available,
    }
}

/// Applies `f` to every item on up to [`thread_cap`] worker threads,
/// returning results in input order.
pub fn par_map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let workers = thread_cap().max(1).min(items.len().max(1));
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut results: Vec<Option<U>> = Vec::with_capacity(items.len());
    results.resize_with(items.len(), || None);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results_mutex = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                results_mutex.lock().unwrap()[i] = Some(out);
            });
        }
    });
    results.into_iter().map(|r| r.expect("worker filled every slot")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wildcard_basics() {
        assert!(wildcard_match("*.png", "a.png"));
        assert!(wildcard_match("sample_*_normals.png", "sample_0001_normals.png"));
        assert!(!wildcard_match("*.png", "a.jpg"));
        assert!(wildcard_match("*", "anything"));
        assert!(!wildcard_match("a*b", "acbd"));
    }

    #[test]
    fn parse_helpers() {
        assert!(parse_vec3("0,1,0").is_ok());
        assert!(parse_vec3("0,1").is_err());
        assert!(parse_vec3("a,b,c").is_err());
        assert!(parse_vec3("0,0,0").is_err());
        assert_eq!(parse_bins("18x36").unwrap(), (18, 36));
        assert!(parse_bins("18").is_err());
        assert!(parse_bins("0x4").is_err());
    }

    #[test]
    fn par_map_preserves_order() {
        let items: Vec<usize> = (0..100).collect();
        let out = par_map_ordered(items, |i| i * 2);
        assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }
}
