//! Reader and writer for MATPOWER `.m` case files (version 2 layout).
//!
//! Only the `baseMVA`, `bus`, `gen` and `branch` fields are interpreted; any
//! other `mpc.*` assignment (e.g. `gencost`) is skipped.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{Branch, Bus, BusType, Generator, NetworkCase};

struct Matrix {
    rows: Vec<(usize, Vec<f64>)>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_row(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| parse_err(line, format!("invalid number `{t}`")))
        })
        .collect()
}

/// Parses MATPOWER case source into a validated [`NetworkCase`].
pub fn parse_case(text: &str) -> Result<NetworkCase> {
    let mut name = String::from("case");
    let mut base_mva = None;
    let mut bus = None;
    let mut gen = None;
    let mut branch = None;

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    while let Some((ln, raw)) = lines.next() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            if let Some((_, n)) = rest.split_once('=') {
                name = n.trim().trim_end_matches(';').to_string();
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some((field, value)) = rest.split_once('=') else {
            return Err(parse_err(ln, "expected `mpc.<field> = ...`"));
        };
        let field = field.trim();
        let value = value.trim();
        if !value.starts_with('[') {
            if field == "baseMVA" {
                let v = value.trim_end_matches(';').trim();
                base_mva = Some(
                    v.parse::<f64>()
                        .map_err(|_| parse_err(ln, format!("invalid baseMVA `{v}`")))?,
                );
            }
            continue;
        }
        // Matrix literal: rows until the closing bracket.
        let mut rows = Vec::new();
        let mut pending = value[1..].to_string();
        let mut pending_line = ln;
        loop {
            let closed = pending.find(']');
            let body = match closed {
                Some(i) => &pending[..i],
                None => pending.as_str(),
            };
            for chunk in body.split(';') {
                let vals = parse_row(chunk, pending_line)?;
                if !vals.is_empty() {
                    rows.push((pending_line, vals));
                }
            }
            if closed.is_some() {
                break;
            }
            let Some((next_ln, next)) = lines.next() else {
                return Err(parse_err(ln, format!("unterminated matrix `mpc.{field}`")));
            };
            pending = strip_comment(next).to_string();
            pending_line = next_ln;
        }
        let m = Matrix { rows };
        match field {
            "bus" => bus = Some((ln, m)),
            "gen" => gen = Some((ln, m)),
            "branch" => branch = Some((ln, m)),
            _ => {}
        }
    }

    let base_mva = base_mva.ok_or_else(|| parse_err(0, "missing mpc.baseMVA"))?;
    let (_, bus) = bus.ok_or_else(|| parse_err(0, "missing mpc.bus table"))?;
    let (_, gen) = gen.ok_or_else(|| parse_err(0, "missing mpc.gen table"))?;
    let (_, branch) = branch.ok_or_else(|| parse_err(0, "missing mpc.branch table"))?;

    let need = |row: &(usize, Vec<f64>), n: usize, what: &str| -> Result<()> {
        if row.1.len() < n {
            Err(parse_err(
                row.0,
                format!("{what} row has {} columns, need {n}", row.1.len()),
            ))
        } else {
            Ok(())
        }
    };

    let mut buses = Vec::with_capacity(bus.rows.len());
    for row in &bus.rows {
        need(row, 13, "bus")?;
        let v = &row.1;
        let bus_type = match v[1] as i64 {
            1 => BusType::Pq,
            2 => BusType::Pv,
            3 => BusType::Slack,
            t => return Err(parse_err(row.0, format!("unsupported bus type {t}"))),
        };
        buses.push(Bus {
            id: v[0] as usize,
            bus_type,
            p_load: v[2],
            q_load: v[3],
            gs: v[4],
            bs: v[5],
            vm_init: v[7],
            va_init_deg: v[8],
            base_kv: v[9],
            v_max: v[11],
            v_min: v[12],
        });
    }
    let mut generators = Vec::with_capacity(gen.rows.len());
    for row in &gen.rows {
        need(row, 10, "gen")?;
        let v = &row.1;
        generators.push(Generator {
            bus: v[0] as usize,
            p_set: v[1],
            q_set: v[2],
            q_max: v[3],
            q_min: v[4],
            v_set: v[5],
            in_service: v[7] > 0.0,
            p_max: v[8],
            p_min: v[9],
        });
    }
    let mut branches = Vec::with_capacity(branch.rows.len());
    for row in &branch.rows {
        need(row, 11, "branch")?;
        let v = &row.1;
        branches.push(Branch {
            from_bus: v[0] as usize,
            to_bus: v[1] as usize,
            r: v[2],
            x: v[3],
            b: v[4],
            rating: v[5],
            tap: if v[8] == 0.0 { 1.0 } else { v[8] },
            shift_deg: v[9],
            in_service: v[10] > 0.0,
            contingencable: true,
        });
    }
    NetworkCase::new(name, base_mva, buses, branches, generators)
}

fn num(v: f64) -> String {
    // `{:?}` prints the shortest representation that round-trips exactly.
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

/// Serialises a case back into MATPOWER source. `parse_case(write_case(c)) == c`.
pub fn write_case(case: &NetworkCase) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "function mpc = {}", case.name);
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {};", num(case.base_mva));
    let _ = writeln!(
        s,
        "\n%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin"
    );
    let _ = writeln!(s, "mpc.bus = [");
    for b in &case.buses {
        let t = match b.bus_type {
            BusType::Pq => 1,
            BusType::Pv => 2,
            BusType::Slack => 3,
        };
        let row = [
            b.id as f64,
            t as f64,
            b.p_load,
            b.q_load,
            b.gs,
            b.bs,
            1.0,
            b.vm_init,
            b.va_init_deg,
            b.base_kv,
            1.0,
            b.v_max,
            b.v_min,
        ];
        let _ = writeln!(s, "\t{};", row.map(num).join("\t"));
    }
    let _ = writeln!(s, "];\n\n%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin");
    let _ = writeln!(s, "mpc.gen = [");
    for g in &case.generators {
        let row = [
            g.bus as f64,
            g.p_set,
            g.q_set,
            g.q_max,
            g.q_min,
            g.v_set,
            case.base_mva,
            if g.in_service { 1.0 } else { 0.0 },
            g.p_max,
            g.p_min,
        ];
        let _ = writeln!(s, "\t{};", row.map(num).join("\t"));
    }
    let _ = writeln!(
        s,
        "];\n\n%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax"
    );
    let _ = writeln!(s, "mpc.branch = [");
    for b in &case.branches {
        let row = [
            b.from_bus as f64,
            b.to_bus as f64,
            b.r,
            b.x,
            b.b,
            b.rating,
            b.rating,
            b.rating,
            if b.tap == 1.0 && b.shift_deg == 0.0 {
                0.0
            } else {
                b.tap
            },
            b.shift_deg,
            if b.in_service { 1.0 } else { 0.0 },
            -360.0,
            360.0,
        ];
        let _ = writeln!(s, "\t{};", row.map(num).join("\t"));
    }
    let _ = writeln!(s, "];");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    const THREE_BUS: &str = r"
function mpc = three
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0   0  0 0 1 1.0 0 230 1 1.1 0.9;
    2 2 50  10 0 0 1 1.0 0 230 1 1.1 0.9;
    3 1 80  20 0 0 1 1.0 0 230 1 1.1 0.9;
];
mpc.gen = [
    1 0  0 100 -100 1.02 100 1 200 0;
    2 40 0 60  -60  1.01 100 1 100 0;
];
mpc.branch = [
    1 2 0.01 0.10 0.02 100 100 100 0 0 1 -360 360;
    2 3 0.02 0.15 0.02 100 100 100 0 0 1 -360 360;
    1 3 0.01, 0.12, 0.02, 100, 100, 100, 0, 0, 1, -360, 360;
];
mpc.gencost = [ 2 0 0 3 0.01 10 0; 2 0 0 3 0.01 10 0 ];
";

    #[test]
    fn parses_hand_written_case() {
        let c = parse_case(THREE_BUS).unwrap();
        assert_eq!(c.name, "three");
        assert_eq!((c.n_buses(), c.n_branches(), c.generators.len()), (3, 3, 2));
        assert_eq!(c.buses[2].p_load, 80.0);
        assert_eq!(c.branches[2].x, 0.12);
        assert_eq!(c.branches[0].tap, 1.0);
        assert_eq!(c.n_contingencable(), 3);
    }

    #[test]
    fn ieee14_counts() {
        let c = cases::ieee14();
        assert_eq!(
            (c.n_buses(), c.n_branches(), c.generators.len()),
            (14, 20, 5)
        );
    }

    #[test]
    fn standard_case_counts() {
        let counts: Vec<_> = [cases::ieee39(), cases::ieee57(), cases::ieee118()]
            .iter()
            .map(|c| (c.n_buses(), c.n_branches(), c.generators.len()))
            .collect();
        assert_eq!(counts, vec![(39, 46, 10), (57, 80, 7), (118, 186, 54)]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let bad = THREE_BUS.replace("2 3 0.02 0.15", "2 3 0.02 x0.15");
        match parse_case(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 16),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn short_row_and_missing_table() {
        let short = THREE_BUS.replace("2 2 50  10 0 0 1 1.0 0 230 1 1.1 0.9;", "2 2 50;");
        assert!(matches!(
            parse_case(&short),
            Err(Error::Parse { line: 7, .. })
        ));
        let no_gen: String = THREE_BUS
            .lines()
            .filter(|l| {
                !l.contains("mpc.gen =") && !l.contains(" 1 0  0 100") && !l.contains("2 40 0")
            })
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(parse_case(&no_gen), Err(Error::Parse { .. })));
    }

    #[test]
    fn no_slack_is_validation_error() {
        let bad = THREE_BUS.replace("1 3 0   0", "1 2 0   0");
        assert!(matches!(parse_case(&bad), Err(Error::Validation(_))));
    }

    #[test]
    fn write_parse_round_trip() {
        for case in [
            cases::ieee14(),
            cases::ieee118(),
            parse_case(THREE_BUS).unwrap(),
        ] {
            let again = parse_case(&write_case(&case)).unwrap();
            assert_eq!(again, case);
        }
    }
}
