//! Flat `key = value` config files.
//!
//! Keys are long flag names of the chosen subcommand. Config entries are
//! spliced in ahead of the real flags, and every flag overrides earlier copies
//! of itself, so flags on the command line win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::io::{CliError, CliResult};

/// Parse a config file into ordered `(key, value)` pairs. Blank lines and
/// lines starting with `#` are skipped.
pub fn parse_config(text: &str, source_name: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| CliError::Parse {
            source_name: source_name.to_string(),
            line: i as u64 + 1,
            msg,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(err(format!("bad key {key:?}")));
        }
        if key == "config" {
            return Err(err("config files cannot include other config files".into()));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Config entries as flags: `true` becomes a bare switch and `false` is
/// dropped.
pub fn entries_to_args(entries: &[(String, String)]) -> Vec<OsString> {
    let mut args = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => args.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                args.push(format!("--{k}").into());
                args.push(v.into());
            }
        }
    }
    args
}

fn find_config(args: &[OsString]) -> CliResult<Option<OsString>> {
    let mut it = args.iter();
    let mut found = None;
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            let v = it
                .next()
                .ok_or_else(|| CliError::Args("--config needs a path".into()))?;
            found = Some(v.clone());
        } else if let Some(v) = s.strip_prefix("--config=") {
            found = Some(v.into());
        }
    }
    Ok(found)
}

/// Insert the entries of any `--config` file directly after the subcommand.
pub fn expand_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    if argv.len() < 2 {
        return Ok(argv);
    }
    let Some(path) = find_config(&argv[2..])? else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let entries = parse_config(&text, &path.display().to_string())?;
    let mut out = argv[..2].to_vec();
    out.extend(entries_to_args(&entries));
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

/// Flatten serialized arguments into the `key = value` form read back by
/// [`parse_config`]. Lists are comma-joined and `null` entries dropped.
pub fn to_flat(args: &impl Serialize) -> BTreeMap<String, String> {
    let value = serde_json::to_value(args).expect("arguments serialize to JSON");
    let mut out = BTreeMap::new();
    if let Value::Object(map) = value {
        for (k, v) in map {
            if let Some(s) = scalar(&v) {
                out.insert(k, s);
            } else if let Value::Array(items) = &v {
                let parts: Vec<String> = items.iter().filter_map(scalar).collect();
                out.insert(k, parts.join(","));
            }
        }
    }
    out
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Render a flat map as a config file.
pub fn render_config(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_skips_comments() {
        let entries = parse_config("# c\n\nepsilon = 2\n  seed=7  \nexact = true\n", "f").unwrap();
        assert_eq!(
            entries,
            vec![
                ("epsilon".into(), "2".into()),
                ("seed".into(), "7".into()),
                ("exact".into(), "true".into())
            ]
        );
        let args = entries_to_args(&entries);
        assert_eq!(args, ["--epsilon", "2", "--seed", "7", "--exact"].map(OsString::from));
    }

    #[test]
    fn bad_lines_are_reported() {
        let e = parse_config("epsilon = 1\nnonsense\n", "f.cfg").unwrap_err();
        assert!(e.to_string().contains("f.cfg:2"), "{e}");
        assert!(parse_config("bad key = 1\n", "f").is_err());
        assert!(parse_config("config = other\n", "f").is_err());
    }

    #[test]
    fn flat_round_trip() {
        #[derive(Serialize)]
        struct A {
            epsilons: Vec<f64>,
            seed: u64,
            name: Option<String>,
            flag: bool,
        }
        let flat = to_flat(&A {
            epsilons: vec![0.5, 1.0],
            seed: 3,
            name: None,
            flag: false,
        });
        assert_eq!(render_config(&flat), "epsilons = 0.5,1.0\nflag = false\nseed = 3\n");
    }
}
