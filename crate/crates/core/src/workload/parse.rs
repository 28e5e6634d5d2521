use std::collections::{BTreeMap, BTreeSet};

use crate::domain::{GroupMembership, Rank};
use crate::error::ParseError;

use super::{CollectiveKind, Instruction, Workload, WORLD_COMM};

/// Per-rank definitions seen so far, for the defined-before-use checks.
#[derive(Default)]
struct Scope {
    comms: BTreeMap<String, Vec<Rank>>,
    requests: BTreeSet<String>,
}

pub fn parse_workload(text: &str) -> Result<Workload, ParseError> {
    let mut workload: Option<Workload> = None;
    let mut scopes: Vec<Scope> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| ParseError::new(line_no, m);

        if let Some(rest) = line.strip_prefix("world ") {
            if workload.is_some() {
                return Err(err("duplicate `world` line".into()));
            }
            let n: u32 = rest
                .trim()
                .parse()
                .map_err(|_| err(format!("invalid world size `{}`", rest.trim())))?;
            if n == 0 {
                return Err(err("world size must be at least 1".into()));
            }
            let mut w = Workload::new(n);
            let world_members: Vec<Rank> = (0..n).map(Rank).collect();
            scopes = (0..n)
                .map(|_| {
                    let mut s = Scope::default();
                    s.comms.insert(WORLD_COMM.to_string(), world_members.clone());
                    s
                })
                .collect();
            w.request_after = None;
            workload = Some(w);
            continue;
        }

        let w = workload
            .as_mut()
            .ok_or_else(|| err("`world <n>` must precede other lines".into()))?;

        if let Some(rest) = line.strip_prefix("request_after") {
            if w.request_after.is_some() {
                return Err(err("duplicate `request_after` line".into()));
            }
            let mut budgets = BTreeMap::new();
            for item in rest.split_whitespace() {
                let (r, n) = item
                    .split_once(':')
                    .ok_or_else(|| err(format!("expected <rank>:<count>, got `{item}`")))?;
                let rank = parse_rank(r, w.world_size).map_err(err)?;
                let n: usize = n
                    .parse()
                    .map_err(|_| err(format!("invalid instruction count `{n}`")))?;
                if budgets.insert(rank, n).is_some() {
                    return Err(err(format!("rank {rank} listed twice")));
                }
            }
            w.request_after = Some(budgets);
            continue;
        }

        let rest = line
            .strip_prefix("rank ")
            .ok_or_else(|| err(format!("unrecognized line `{line}`")))?;
        let (ranks_txt, body) = rest
            .split_once(':')
            .ok_or_else(|| err("expected `rank <r>: <opcode> ...`".into()))?;
        let mut ranks = Vec::new();
        for r in ranks_txt.split(',') {
            ranks.push(parse_rank(r.trim(), w.world_size).map_err(err)?);
        }

        let mut tokens: Vec<&str> = body.split_whitespace().collect();
        let mut repeat = 1usize;
        if let Some(last) = tokens.last() {
            if let Some(n) = last.strip_prefix('*') {
                repeat = n
                    .parse()
                    .ok()
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| err(format!("invalid repeat count `{last}`")))?;
                tokens.pop();
            }
        }
        let (&opcode, operands) = tokens
            .split_first()
            .ok_or_else(|| err("missing opcode".into()))?;

        for &rank in &ranks {
            let instr = parse_instruction(opcode, operands, rank, w.world_size, &mut scopes[rank.index()])
                .map_err(err)?;
            if repeat > 1 && matches!(instr, Instruction::CreateComm { .. }) {
                return Err(err("create_comm cannot be repeated".into()));
            }
            for _ in 0..repeat {
                w.push(rank, instr.clone());
            }
        }
    }

    workload.ok_or_else(|| ParseError::new(1, "empty workload: missing `world <n>`"))
}

fn parse_rank(s: &str, world_size: u32) -> Result<Rank, String> {
    let r: u32 = s.parse().map_err(|_| format!("invalid rank `{s}`"))?;
    if r >= world_size {
        return Err(format!("rank {r} out of range for world size {world_size}"));
    }
    Ok(Rank(r))
}

fn expect_operands(opcode: &str, operands: &[&str], n: usize) -> Result<(), String> {
    if operands.len() != n {
        return Err(format!(
            "`{opcode}` takes {n} operand(s), got {}",
            operands.len()
        ));
    }
    Ok(())
}

fn lookup_comm<'a>(scope: &'a Scope, name: &str) -> Result<&'a [Rank], String> {
    scope
        .comms
        .get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| format!("undefined communicator `{name}`"))
}

fn lookup_request(scope: &Scope, name: &str) -> Result<(), String> {
    if scope.requests.contains(name) {
        Ok(())
    } else {
        Err(format!("undefined request `{name}`"))
    }
}

fn parse_instruction(
    opcode: &str,
    operands: &[&str],
    rank: Rank,
    world_size: u32,
    scope: &mut Scope,
) -> Result<Instruction, String> {
    if let Some(kind) = CollectiveKind::from_name(opcode) {
        expect_operands(opcode, operands, 1)?;
        lookup_comm(scope, operands[0])?;
        return Ok(Instruction::Collective {
            kind,
            comm: operands[0].to_string(),
        });
    }
    match opcode {
        "create_comm" => {
            expect_operands(opcode, operands, 2)?;
            let name = operands[0];
            if scope.comms.contains_key(name) {
                return Err(format!("communicator `{name}` already defined"));
            }
            let mut members = Vec::new();
            for m in operands[1].split(',') {
                members.push(parse_rank(m.trim(), world_size)?);
            }
            GroupMembership::new(members.clone(), world_size).map_err(|e| e.to_string())?;
            if !members.contains(&rank) {
                return Err(format!(
                    "rank {rank} creates communicator `{name}` without being a member"
                ));
            }
            scope.comms.insert(name.to_string(), members.clone());
            Ok(Instruction::CreateComm {
                name: name.to_string(),
                members,
            })
        }
        "icollective" => {
            expect_operands(opcode, operands, 3)?;
            let kind = CollectiveKind::from_name(operands[0])
                .ok_or_else(|| format!("unknown collective kind `{}`", operands[0]))?;
            lookup_comm(scope, operands[1])?;
            scope.requests.insert(operands[2].to_string());
            Ok(Instruction::ICollective {
                kind,
                comm: operands[1].to_string(),
                request: operands[2].to_string(),
            })
        }
        "test" | "wait" => {
            expect_operands(opcode, operands, 1)?;
            lookup_request(scope, operands[0])?;
            let request = operands[0].to_string();
            Ok(if opcode == "test" {
                Instruction::Test { request }
            } else {
                Instruction::Wait { request }
            })
        }
        "waitall" => {
            if operands.is_empty() {
                return Err("`waitall` needs at least one request".into());
            }
            for r in operands {
                lookup_request(scope, r)?;
            }
            Ok(Instruction::WaitAll {
                requests: operands.iter().map(|s| s.to_string()).collect(),
            })
        }
        "send" | "recv" => {
            expect_operands(opcode, operands, 3)?;
            let peer = parse_rank(operands[0], world_size)?;
            let tag: i32 = operands[1]
                .parse()
                .map_err(|_| format!("invalid tag `{}`", operands[1]))?;
            let members = lookup_comm(scope, operands[2])?;
            if !members.contains(&peer) {
                return Err(format!(
                    "peer {peer} is not a member of communicator `{}`",
                    operands[2]
                ));
            }
            if peer == rank {
                return Err(format!("rank {rank} cannot {opcode} to itself"));
            }
            let comm = operands[2].to_string();
            Ok(if opcode == "send" {
                Instruction::Send { peer, tag, comm }
            } else {
                Instruction::Recv { peer, tag, comm }
            })
        }
        "compute" => {
            expect_operands(opcode, operands, 0)?;
            Ok(Instruction::Compute)
        }
        other => Err(format!("unknown opcode `{other}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rank_barrier() {
        let w = parse_workload("world 2\nrank 0,1: barrier world\n").unwrap();
        assert_eq!(w.world_size, 2);
        assert_eq!(w.programs.len(), 2);
        for p in &w.programs {
            assert_eq!(p.instructions.len(), 1);
            assert!(p.instructions[0].is_collective());
        }
    }

    #[test]
    fn repeat_expands() {
        let w = parse_workload("world 1\nrank 0: compute *3\nrank 0: barrier world\n").unwrap();
        assert_eq!(w.program(Rank(0)).len(), 4);
    }

    #[test]
    fn malformed_operand_reports_line() {
        let e = parse_workload("world 2\n\nrank 0: send x 1 world\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("invalid rank"), "{e}");
    }

    #[test]
    fn errors() {
        let cases = [
            ("world 2\nrank 0: frobnicate world\n", "unknown opcode"),
            ("world 2\nrank 5: compute\n", "out of range"),
            ("world 2\nrank 0: barrier c1\n", "undefined communicator"),
            ("world 2\nrank 0: wait r1\n", "undefined request"),
            ("world 3\nrank 0: create_comm c 1,2\n", "without being a member"),
            ("world 2\nrank 0: send 0 1 world\n", "itself"),
            ("rank 0: compute\n", "must precede"),
            ("world 2\nrank 0: compute *0\n", "repeat"),
            ("world 3\nrank 0: create_comm c 0,1\nrank 0: send 2 0 c\n", "not a member"),
        ];
        for (text, needle) in cases {
            let e = parse_workload(text).unwrap_err();
            assert!(e.message.contains(needle), "{text:?} -> {e}");
        }
    }

    #[test]
    fn request_after_and_comments() {
        let w = parse_workload(
            "# demo\nworld 2\nrank 0,1: barrier world  # sync\nrequest_after 0:1 1:0\n",
        )
        .unwrap();
        let b = w.request_after.unwrap();
        assert_eq!(b[&Rank(0)], 1);
        assert_eq!(b[&Rank(1)], 0);
    }
}
