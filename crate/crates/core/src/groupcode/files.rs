//! Text formats for lab use.
//!
//! Design file:
//!
//! ```text
//! n: 10
//! n_groups: 5
//! k: 2
//! seed: 4
//! 0: 1, 4, 7, 9
//! 1: 0, 2, 7, 8
//! ...
//! ```
//!
//! Results file, one line per group: `group_id,0|1`.
//! Decode output, one line per subject: `subject_id,firstpass|confirmed`.

use std::fmt;
use std::io::{BufRead, Write};

use super::PoolingDesign;
use crate::error::{Error, Result};

pub fn write_design<W: Write>(design: &PoolingDesign, mut w: W) -> Result<()> {
    writeln!(w, "n: {}", design.n)?;
    writeln!(w, "n_groups: {}", design.n_groups)?;
    writeln!(w, "k: {}", design.k)?;
    writeln!(w, "seed: {}", design.seed)?;
    let mut line = String::new();
    for (g, members) in design.groups.iter().enumerate() {
        line.clear();
        for (i, s) in members.iter().enumerate() {
            if i > 0 {
                line.push_str(", ");
            }
            line.push_str(&s.to_string());
        }
        if line.is_empty() {
            writeln!(w, "{g}:")?;
        } else {
            writeln!(w, "{g}: {line}")?;
        }
    }
    Ok(())
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{}`", tok.trim())))
}

pub fn read_design<R: BufRead>(r: R) -> Result<PoolingDesign> {
    let (mut n, mut n_groups, mut k, mut seed) = (None, None, None, None);
    let mut groups: Vec<Option<Vec<usize>>> = Vec::new();

    for (i, line) in r.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::parse(lineno, "expected `key: value`"))?;
        let key = key.trim();
        match key {
            "n" => n = Some(parse_num::<usize>(value, lineno, "n")?),
            "n_groups" => {
                let g = parse_num::<usize>(value, lineno, "n_groups")?;
                groups.resize(g, None);
                n_groups = Some(g);
            }
            "k" => k = Some(parse_num::<usize>(value, lineno, "k")?),
            "seed" => seed = Some(parse_num::<u64>(value, lineno, "seed")?),
            _ => {
                let g: usize = parse_num(key, lineno, "group id")?;
                let total = n_groups
                    .ok_or_else(|| Error::parse(lineno, "group record before n_groups header"))?;
                if g >= total {
                    return Err(Error::parse(
                        lineno,
                        format!("group id {g} outside 0..{total}"),
                    ));
                }
                if groups[g].is_some() {
                    return Err(Error::parse(lineno, format!("group {g} listed twice")));
                }
                let members = value
                    .split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(|t| parse_num::<usize>(t, lineno, "subject id"))
                    .collect::<Result<Vec<_>>>()?;
                groups[g] = Some(members);
            }
        }
    }

    let missing = |what: &str| Error::parse(0, format!("missing `{what}` header"));
    let n = n.ok_or_else(|| missing("n"))?;
    let k = k.ok_or_else(|| missing("k"))?;
    let seed = seed.ok_or_else(|| missing("seed"))?;
    n_groups.ok_or_else(|| missing("n_groups"))?;
    let groups = groups
        .into_iter()
        .enumerate()
        .map(|(g, m)| m.ok_or_else(|| Error::parse(0, format!("group {g} has no record"))))
        .collect::<Result<Vec<_>>>()?;
    PoolingDesign::from_groups(n, k, seed, groups).map_err(|e| match e {
        Error::Parse { .. } => e,
        other => Error::parse(0, other.to_string()),
    })
}

pub fn write_results<W: Write>(results: &[bool], mut w: W) -> Result<()> {
    for (g, &r) in results.iter().enumerate() {
        writeln!(w, "{g},{}", r as u8)?;
    }
    Ok(())
}

/// Parses `id,0|1` lines into `(id, outcome)` pairs in file order.
fn read_flag_lines<R: BufRead>(r: R) -> Result<Vec<(usize, bool)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, flag) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(lineno, "expected `id,0|1`"))?;
        let id: usize = parse_num(id, lineno, "id")?;
        let flag = match flag.trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    lineno,
                    format!("outcome must be 0 or 1, got `{other}`"),
                ))
            }
        };
        out.push((id, flag));
    }
    Ok(out)
}

/// Group outcomes indexed by group id. Every id in `0..n_groups` must appear
/// exactly once.
pub fn read_results<R: BufRead>(r: R, n_groups: usize) -> Result<Vec<bool>> {
    let mut results: Vec<Option<bool>> = vec![None; n_groups];
    for (g, flag) in read_flag_lines(r)? {
        let slot = results.get_mut(g).ok_or_else(|| {
            Error::GroupMismatch(format!(
                "results list group {g}, design has groups 0..{n_groups}"
            ))
        })?;
        if slot.replace(flag).is_some() {
            return Err(Error::GroupMismatch(format!(
                "group {g} appears more than once in results"
            )));
        }
    }
    let missing: Vec<String> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(g, _)| g.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::GroupMismatch(format!(
            "results missing group{} {}",
            if missing.len() > 1 { "s" } else { "" },
            missing.join(", ")
        )));
    }
    Ok(results.into_iter().map(Option::unwrap).collect())
}

/// Individual retest outcomes, `subject_id,0|1` per line.
pub fn read_subject_results<R: BufRead>(r: R) -> Result<Vec<(usize, bool)>> {
    read_flag_lines(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeFlag {
    FirstPass,
    Confirmed,
}

impl fmt::Display for DecodeFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeFlag::FirstPass => "firstpass",
            DecodeFlag::Confirmed => "confirmed",
        })
    }
}

pub fn write_decode_output<W: Write>(rows: &[(usize, DecodeFlag)], mut w: W) -> Result<()> {
    for (s, flag) in rows {
        writeln!(w, "{s},{flag}")?;
    }
    Ok(())
}
