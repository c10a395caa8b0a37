//! `key = value` config files folded into the argument list.
//!
//! Each entry becomes `--key=value` inserted right after the subcommand name, ahead of
//! the user's own flags, so anything given on the command line overrides it.

use std::ffi::OsString;
use std::path::Path;

use crate::error::CliError;

pub fn parse_config(text: &str) -> Result<Vec<String>, CliError> {
    let mut args = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("config line {}: invalid key", n + 1)));
        }
        match value {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            _ => {
                // multi-valued flags are written space separated
                if key == "series" {
                    args.push(format!("--{key}"));
                    args.extend(value.split_whitespace().map(str::to_string));
                } else {
                    args.push(format!("--{key}={value}"));
                }
            }
        }
    }
    Ok(args)
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Returns `argv` with the config file's flags spliced in after the subcommand.
pub fn expand(argv: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| CliError::Usage(format!("--config {}: {e}", Path::new(&path).display())))?;
    let extra = parse_config(&text)?;
    let Some(pos) = argv
        .iter()
        .position(|a| subcommands.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(argv);
    };
    let mut out = argv[..=pos].to_vec();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_become_flags() {
        let args = parse_config("# comment\nseed = 7\nmajority_vote = true\nvessels=false\nseries = a.csv b.csv\n").unwrap();
        assert_eq!(args, vec!["--seed=7", "--majority-vote", "--series", "a.csv", "b.csv"]);
    }

    #[test]
    fn malformed_line_is_usage_error() {
        assert!(matches!(parse_config("seed 7"), Err(CliError::Usage(_))));
    }

    #[test]
    fn spliced_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "seed = 3\n").unwrap();
        let argv: Vec<OsString> = ["choroid", "--config", path.to_str().unwrap(), "trace", "--seed", "9"]
            .iter()
            .map(OsString::from)
            .collect();
        let out = expand(argv, &["trace"]).unwrap();
        let out: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(&out[3..], ["trace", "--seed=3", "--seed", "9"]);
    }
}
