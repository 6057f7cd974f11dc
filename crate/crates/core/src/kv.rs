//! Flat `key=value` text files: one pair per line, `#` starts a comment line,
//! blank lines ignored. Keys may repeat; order is preserved.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse(text: &str) -> std::result::Result<Vec<Entry>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value, got {line:?}", i + 1))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push(Entry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

pub fn read(path: &Path, kind: &'static str) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|d| Error::format(kind, path, d))
}

pub fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| Error::config(format!("{key}: {value:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::config(format!("{key}: {value} is not finite")));
    }
    Ok(v)
}

pub fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: {value:?} is not a non-negative integer")))
}

pub fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: {value:?} is not a non-negative integer")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("{key}: {value:?} is not a boolean"))),
    }
}

/// Splits `a,b=c,d=e` style step descriptions into a head and its parameters.
pub fn split_params(value: &str) -> (String, Vec<(String, String)>) {
    let mut parts = value.split(',').map(str::trim);
    let head = parts.next().unwrap_or("").to_string();
    let params = parts
        .filter(|p| !p.is_empty())
        .map(|p| match p.split_once('=') {
            Some((k, v)) => (k.trim().to_string(), v.trim().to_string()),
            None => (p.to_string(), String::new()),
        })
        .collect();
    (head, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_blank_lines_and_repeats() {
        let e = parse("# c\n\na = 1\nstep=hflip,p=0.5\nstep=x\n").unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(
            (e[0].key.as_str(), e[0].value.as_str(), e[0].line),
            ("a", "1", 3)
        );
        assert_eq!(e[1].value, "hflip,p=0.5");
        assert_eq!(e[2].key, "step");
    }

    #[test]
    fn missing_equals_is_an_error() {
        assert!(parse("novalue\n").is_err());
        assert!(parse("=3\n").is_err());
    }

    #[test]
    fn step_params() {
        let (h, p) = split_params("salt_pepper, amount=0.02 ,salt_ratio=0.5");
        assert_eq!(h, "salt_pepper");
        assert_eq!(
            p,
            vec![
                ("amount".into(), "0.02".into()),
                ("salt_ratio".into(), "0.5".into())
            ]
        );
    }
}
