//! Native case-file format.
//!
//! A line-oriented text file with `[section]` headers and whitespace-separated
//! rows; `#` starts a comment. All values are per-unit except `base_kv`.
//!
//! ```text
//! name case3
//! base_mva 100
//! [bus]
//! # id kind gs bs vmin vmax base_kv vset
//! 1 slack 0 0 0.9 1.1 138 1.0
//! [branch]
//! # id from to r x theta_max ampacity
//! 1 1 2 0.01 0.1 1.0 inf
//! [gen]
//! # id bus pmin pmax qmin qmax condenser
//! 1 1 0 10 -5 5 0
//! [site]
//! # id bus wmin wmax cmin cmax c_rate cost_p cost_e soe_min soe_max
//! [snapshot]
//! # bus p q
//! ```
//!
//! `vmin`/`vmax` are magnitudes; they are squared on load. Branch and site
//! endpoints refer to external bus ids. The `[snapshot]` section is optional.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use super::{Branch, Bus, BusDemand, BusKind, CandidateSite, Generator, NetworkError, NetworkModel};

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn perr(line: usize, msg: impl Into<String>) -> CaseError {
    CaseError::Parse {
        line,
        msg: msg.into(),
    }
}

struct Row<'a> {
    line: usize,
    fields: Vec<&'a str>,
}

impl Row<'_> {
    fn expect_len(&self, n: usize, section: &str) -> Result<(), CaseError> {
        if self.fields.len() != n {
            return Err(perr(
                self.line,
                format!("[{section}] rows need {n} fields, found {}", self.fields.len()),
            ));
        }
        Ok(())
    }

    fn get<T: FromStr>(&self, i: usize) -> Result<T, CaseError> {
        self.fields[i]
            .parse()
            .map_err(|_| perr(self.line, format!("field {} ('{}') is not a valid number", i + 1, self.fields[i])))
    }
}

pub fn read_case(path: impl AsRef<Path>) -> Result<NetworkModel, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case(&text)
}

pub fn parse_case(text: &str) -> Result<NetworkModel, CaseError> {
    let mut name = String::from("case");
    let mut base_mva = None;
    let mut section = String::new();
    let mut bus_rows = Vec::new();
    let mut branch_rows = Vec::new();
    let mut gen_rows = Vec::new();
    let mut site_rows = Vec::new();
    let mut snap_rows = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            section = rest
                .strip_suffix(']')
                .ok_or_else(|| perr(line, "unterminated section header"))?
                .trim()
                .to_string();
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let row = Row { line, fields };
        match section.as_str() {
            "" => match row.fields[0] {
                "name" => name = row.fields.get(1).unwrap_or(&"case").to_string(),
                "base_mva" => {
                    row.expect_len(2, "header")?;
                    base_mva = Some(row.get::<f64>(1)?);
                }
                other => return Err(perr(line, format!("unknown header key '{other}'"))),
            },
            "bus" => bus_rows.push(row),
            "branch" => branch_rows.push(row),
            "gen" => gen_rows.push(row),
            "site" => site_rows.push(row),
            "snapshot" => snap_rows.push(row),
            other => return Err(perr(line, format!("unknown section [{other}]"))),
        }
    }
    let base_mva = base_mva.ok_or_else(|| perr(1, "missing base_mva"))?;

    let mut buses = Vec::new();
    for row in &bus_rows {
        row.expect_len(8, "bus")?;
        let kind = match row.fields[1] {
            "slack" => BusKind::Slack,
            "pv" => BusKind::Pv,
            "pq" => BusKind::Pq,
            other => return Err(perr(row.line, format!("unknown bus kind '{other}'"))),
        };
        let vmin: f64 = row.get(4)?;
        let vmax: f64 = row.get(5)?;
        buses.push(Bus {
            id: row.get(0)?,
            kind,
            shunt_g: row.get(2)?,
            shunt_b: row.get(3)?,
            vsq_min: vmin * vmin,
            vsq_max: vmax * vmax,
            base_kv: row.get(6)?,
            v_set: row.get(7)?,
        });
    }
    let index_of = |id: usize, line: usize| -> Result<usize, CaseError> {
        buses
            .iter()
            .position(|b| b.id == id)
            .ok_or_else(|| perr(line, format!("unknown bus id {id}")))
    };

    let mut branches = Vec::new();
    for row in &branch_rows {
        row.expect_len(7, "branch")?;
        branches.push(Branch {
            id: row.get(0)?,
            from: index_of(row.get(1)?, row.line)?,
            to: index_of(row.get(2)?, row.line)?,
            r: row.get(3)?,
            x: row.get(4)?,
            theta_max: row.get(5)?,
            ampacity: row.get(6)?,
        });
    }
    let mut generators = Vec::new();
    for row in &gen_rows {
        row.expect_len(7, "gen")?;
        let flag: u8 = row.get(6)?;
        generators.push(Generator {
            id: row.get(0)?,
            bus: index_of(row.get(1)?, row.line)?,
            p_min: row.get(2)?,
            p_max: row.get(3)?,
            q_min: row.get(4)?,
            q_max: row.get(5)?,
            is_condenser: flag != 0,
        });
    }
    let mut sites = Vec::new();
    for row in &site_rows {
        row.expect_len(11, "site")?;
        sites.push(CandidateSite {
            id: row.get(0)?,
            bus: index_of(row.get(1)?, row.line)?,
            w_min: row.get(2)?,
            w_max: row.get(3)?,
            c_min: row.get(4)?,
            c_max: row.get(5)?,
            c_rate: row.get(6)?,
            cost_power: row.get(7)?,
            cost_energy: row.get(8)?,
            soe_min: row.get(9)?,
            soe_max: row.get(10)?,
        });
    }
    let snapshot = if snap_rows.is_empty() {
        None
    } else {
        let mut snap = vec![BusDemand { p: 0.0, q: 0.0 }; buses.len()];
        for row in &snap_rows {
            row.expect_len(3, "snapshot")?;
            let n = index_of(row.get(0)?, row.line)?;
            snap[n] = BusDemand {
                p: row.get(1)?,
                q: row.get(2)?,
            };
        }
        Some(snap)
    };

    let net = NetworkModel::new(name, base_mva, buses, branches, generators, sites)?;
    Ok(match snapshot {
        Some(s) => net.with_snapshot(s)?,
        None => net,
    })
}

/// Serializes a network in the native case format. Floats use Rust's
/// shortest round-trip representation so `parse_case(write_case(n)) == n`.
pub fn write_case(net: &NetworkModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name {}", net.name);
    let _ = writeln!(out, "base_mva {:?}", net.base_mva);
    out.push_str("[bus]\n# id kind gs bs vmin vmax base_kv vset\n");
    for b in &net.buses {
        let _ = writeln!(
            out,
            "{} {} {:?} {:?} {:?} {:?} {:?} {:?}",
            b.id,
            b.kind.as_str(),
            b.shunt_g,
            b.shunt_b,
            b.vsq_min.sqrt(),
            b.vsq_max.sqrt(),
            b.base_kv,
            b.v_set
        );
    }
    out.push_str("[branch]\n# id from to r x theta_max ampacity\n");
    for br in &net.branches {
        let _ = writeln!(
            out,
            "{} {} {} {:?} {:?} {:?} {}",
            br.id,
            net.buses[br.from].id,
            net.buses[br.to].id,
            br.r,
            br.x,
            br.theta_max,
            fmt_limit(br.ampacity)
        );
    }
    out.push_str("[gen]\n# id bus pmin pmax qmin qmax condenser\n");
    for g in &net.generators {
        let _ = writeln!(
            out,
            "{} {} {:?} {:?} {:?} {:?} {}",
            g.id,
            net.buses[g.bus].id,
            g.p_min,
            g.p_max,
            g.q_min,
            g.q_max,
            u8::from(g.is_condenser)
        );
    }
    out.push_str("[site]\n# id bus wmin wmax cmin cmax c_rate cost_p cost_e soe_min soe_max\n");
    for s in &net.sites {
        let _ = writeln!(
            out,
            "{} {} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            s.id,
            net.buses[s.bus].id,
            s.w_min,
            s.w_max,
            s.c_min,
            s.c_max,
            s.c_rate,
            s.cost_power,
            s.cost_energy,
            s.soe_min,
            s.soe_max
        );
    }
    if let Some(snap) = &net.snapshot {
        out.push_str("[snapshot]\n# bus p q\n");
        for (b, d) in net.buses.iter().zip(snap) {
            let _ = writeln!(out, "{} {:?} {:?}", b.id, d.p, d.q);
        }
    }
    out
}

fn fmt_limit(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn parses_minimal_case() {
        let text = "\
name tiny
base_mva 100
[bus]
1 slack 0 0 0.9 1.1 138 1.0
2 pq 0 0.05 0.9 1.1 138 1.0
[branch]
7 1 2 0.01 0.1 1.0 inf
[gen]
1 1 0 10 -5 5 0
";
        let net = parse_case(text).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.branches[0].id, 7);
        assert!(net.branches[0].ampacity.is_infinite());
        assert!((net.buses[0].vsq_min - 0.81).abs() < 1e-15);
        assert!(net.snapshot.is_none());
    }

    #[test]
    fn write_then_parse_is_identity() {
        for net in [fixtures::six_bus_meshed(), fixtures::three_bus_congested(), fixtures::triangle()] {
            let back = parse_case(&write_case(&net)).unwrap();
            assert_eq!(back.branches, net.branches);
            assert_eq!(back.generators, net.generators);
            assert_eq!(back.sites, net.sites);
            assert_eq!(back.snapshot, net.snapshot);
            for (a, b) in back.buses.iter().zip(&net.buses) {
                assert!((a.vsq_min - b.vsq_min).abs() < 1e-15);
                assert!((a.vsq_max - b.vsq_max).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reports_line_of_bad_number() {
        let text = "base_mva 100\n[bus]\n1 slack 0 0 0.9 1.1 abc 1.0\n";
        match parse_case(text).unwrap_err() {
            CaseError::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("abc"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_bus_reference_is_reported() {
        let text = "base_mva 100\n[bus]\n1 slack 0 0 0.9 1.1 1 1.0\n[branch]\n1 1 5 0 0.1 1 inf\n";
        let err = parse_case(text).unwrap_err();
        assert!(err.to_string().contains("unknown bus id 5"));
    }
}
