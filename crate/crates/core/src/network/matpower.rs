//! Converter for MATPOWER-style `.m` case files.
//!
//! Reads `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and `mpc.branch` with their
//! standard column meanings. Out-of-service branches and generators are
//! dropped. Line charging `b` is lumped as `b/2` shunt susceptance at each
//! end, and off-nominal tap ratios and phase shifts are ignored. The bus
//! demand columns become the network's snapshot.

use std::path::Path;

use super::case_file::CaseError;
use super::{Branch, Bus, BusDemand, BusKind, Generator, NetworkModel, DEFAULT_THETA_MAX};

fn perr(line: usize, msg: impl Into<String>) -> CaseError {
    CaseError::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn read_matpower(path: impl AsRef<Path>) -> Result<NetworkModel, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".into());
    parse_matpower(&text, &name)
}

/// Matrix rows with the line number where each row starts.
fn matrix(text: &str, key: &str) -> Result<Option<Vec<(usize, Vec<f64>)>>, CaseError> {
    let marker = format!("mpc.{key}");
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split('%').next().unwrap_or("")));
    let start = lines.by_ref().find(|(_, l)| {
        l.trim_start()
            .strip_prefix(&marker)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    });
    let Some((start_line, first)) = start else {
        return Ok(None);
    };
    let Some(open) = first.find('[') else {
        return Err(perr(start_line, format!("expected '[' after {marker}")));
    };
    let mut rows = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut row_line = start_line;
    let mut consume = |line: usize, chunk: &str, rows: &mut Vec<(usize, Vec<f64>)>| -> Result<bool, CaseError> {
        let (body, done) = match chunk.find(']') {
            Some(end) => (&chunk[..end], true),
            None => (chunk, false),
        };
        for piece in body.split_inclusive(';') {
            let ends_row = piece.ends_with(';');
            for tok in piece.trim_end_matches(';').split(|c: char| c.is_whitespace() || c == ',') {
                if tok.is_empty() {
                    continue;
                }
                if current.is_empty() {
                    row_line = line;
                }
                let v: f64 = tok
                    .parse()
                    .map_err(|_| perr(line, format!("bad number '{tok}' in {marker}")))?;
                current.push(v);
            }
            if ends_row && !current.is_empty() {
                rows.push((row_line, std::mem::take(&mut current)));
            }
        }
        // newline also terminates a row
        if !current.is_empty() {
            rows.push((row_line, std::mem::take(&mut current)));
        }
        Ok(done)
    };
    if consume(start_line, &first[open + 1..], &mut rows)? {
        return Ok(Some(rows));
    }
    for (line, l) in lines {
        if consume(line, l, &mut rows)? {
            return Ok(Some(rows));
        }
    }
    Err(perr(start_line, format!("unterminated matrix {marker}")))
}

fn scalar(text: &str, key: &str) -> Option<f64> {
    let marker = format!("mpc.{key}");
    text.lines().find_map(|l| {
        let l = l.split('%').next()?.trim();
        let rest = l.strip_prefix(&marker)?.trim_start().strip_prefix('=')?;
        rest.trim().trim_end_matches(';').trim().parse().ok()
    })
}

fn need(row: &(usize, Vec<f64>), n: usize, what: &str) -> Result<(), CaseError> {
    if row.1.len() < n {
        return Err(perr(row.0, format!("{what} row needs at least {n} columns, found {}", row.1.len())));
    }
    Ok(())
}

pub fn parse_matpower(text: &str, name: &str) -> Result<NetworkModel, CaseError> {
    let base_mva = scalar(text, "baseMVA").ok_or_else(|| perr(1, "missing mpc.baseMVA"))?;
    let bus_rows = matrix(text, "bus")?.ok_or_else(|| perr(1, "missing mpc.bus"))?;
    let gen_rows = matrix(text, "gen")?.ok_or_else(|| perr(1, "missing mpc.gen"))?;
    let branch_rows = matrix(text, "branch")?.ok_or_else(|| perr(1, "missing mpc.branch"))?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut snapshot = Vec::with_capacity(bus_rows.len());
    for row in &bus_rows {
        need(row, 13, "bus")?;
        let c = &row.1;
        let kind = match c[1] as i64 {
            1 => BusKind::Pq,
            2 => BusKind::Pv,
            3 => BusKind::Slack,
            t => return Err(perr(row.0, format!("unsupported bus type {t}"))),
        };
        buses.push(Bus {
            id: c[0] as usize,
            kind,
            shunt_g: c[4] / base_mva,
            shunt_b: c[5] / base_mva,
            vsq_min: c[12] * c[12],
            vsq_max: c[11] * c[11],
            base_kv: c[9],
            v_set: c[7],
        });
        snapshot.push(BusDemand {
            p: c[2] / base_mva,
            q: c[3] / base_mva,
        });
    }
    let ids: Vec<usize> = buses.iter().map(|b| b.id).collect();
    let index_of = |id: f64, line: usize| -> Result<usize, CaseError> {
        ids.iter()
            .position(|&b| b == id as usize)
            .ok_or_else(|| perr(line, format!("unknown bus id {id}")))
    };

    let mut generators = Vec::new();
    let mut vg_seen = vec![false; buses.len()];
    for (k, row) in gen_rows.iter().enumerate() {
        need(row, 10, "gen")?;
        let c = &row.1;
        if c[7] <= 0.0 {
            continue;
        }
        let bus = index_of(c[0], row.0)?;
        if !vg_seen[bus] {
            buses[bus].v_set = c[5];
            vg_seen[bus] = true;
        }
        let (p_max, p_min) = (c[8] / base_mva, c[9] / base_mva);
        let is_condenser = p_max == 0.0 && p_min == 0.0;
        generators.push(Generator {
            id: k + 1,
            bus,
            p_min,
            p_max,
            q_min: c[4] / base_mva,
            q_max: c[3] / base_mva,
            is_condenser,
        });
    }

    let mut branches = Vec::new();
    for (k, row) in branch_rows.iter().enumerate() {
        need(row, 11, "branch")?;
        let c = &row.1;
        if c[10] <= 0.0 {
            continue;
        }
        let from = index_of(c[0], row.0)?;
        let to = index_of(c[1], row.0)?;
        let charging = c[4];
        buses[from].shunt_b += charging / 2.0;
        buses[to].shunt_b += charging / 2.0;
        let rate_a = c[5];
        let ang_max = c.get(12).copied().unwrap_or(0.0);
        let theta_max = if ang_max > 0.0 && ang_max < 90.0 {
            ang_max.to_radians()
        } else {
            DEFAULT_THETA_MAX
        };
        branches.push(Branch {
            id: k + 1,
            from,
            to,
            r: c[2],
            x: c[3],
            theta_max,
            ampacity: if rate_a > 0.0 { rate_a / base_mva } else { f64::INFINITY },
        });
    }

    let net = NetworkModel::new(name, base_mva, buses, branches, generators, Vec::new())?;
    Ok(net.with_snapshot(snapshot)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE: &str = r"
function mpc = case3
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
%	bus_i	type	Pd	Qd	Gs	Bs	area	Vm	Va	baseKV	zone	Vmax	Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1	0	345	1	1.1	0.9;
	2	2	50	10	0	0	1	1	0	345	1	1.1	0.9;
	3	1	80	30	0	19	1	1	0	345	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	300	-300	1.04	100	1	250	10	0	0	0	0	0	0	0	0	0	0	0;
	2	60	0	300	-300	1.02	100	1	300	10	0	0	0	0	0	0	0	0	0	0	0;
	3	0	0	50	-50	1.0	100	0	0	0	0	0	0	0	0	0	0	0	0	0	0;
];
mpc.branch = [
	1	2	0.01	0.085	0.176	250	250	250	0	0	1	-360	360;
	2	3	0.032	0.161	0.306	0	250	250	0	0	1	-360	360;
	1	3	0.017	0.092	0.158	250	250	250	0	0	0	-360	360;
	3	1	0.017	0.092	0.158	250	250	250	0	0	1	-30	30;
];
";

    #[test]
    fn parses_standard_tables() {
        let net = parse_matpower(CASE, "case3").unwrap();
        assert_eq!(net.n_buses(), 3);
        // third branch is out of service, third generator too
        assert_eq!(net.n_branches(), 3);
        assert_eq!(net.generators.len(), 2);
        assert_eq!(net.buses[0].v_set, 1.04);
        assert!(net.branches[1].ampacity.is_infinite());
        assert!((net.branches[0].ampacity - 2.5).abs() < 1e-15);
        assert!((net.branches[2].theta_max - 30f64.to_radians()).abs() < 1e-15);
        assert_eq!(net.branches[0].theta_max, DEFAULT_THETA_MAX);
        // bus 3: own shunt 0.19 + half of two in-service charging values
        let expected_b3 = 0.19 + 0.306 / 2.0 + 0.158 / 2.0;
        assert!((net.buses[2].shunt_b - expected_b3).abs() < 1e-12);
        let snap = net.snapshot.as_ref().unwrap();
        assert_eq!(snap[2], BusDemand { p: 0.8, q: 0.3 });
        assert_eq!(net.buses[2].vsq_min, 0.81);
    }

    #[test]
    fn missing_table_is_an_error() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 1 1 1.1 0.9;\n];\n";
        assert!(parse_matpower(text, "x").unwrap_err().to_string().contains("mpc.gen"));
    }

    #[test]
    fn bad_number_reports_line() {
        let text = CASE.replace("0.032", "0.0x2");
        match parse_matpower(&text, "x").unwrap_err() {
            CaseError::Parse { line, .. } => assert_eq!(line, 19),
            other => panic!("unexpected {other}"),
        }
    }
}
