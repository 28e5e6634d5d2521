use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Rank;
use crate::error::GenerateError;

use super::{CollectiveKind, Instruction, Workload, WORLD_COMM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub seed: u64,
    pub world_size: u32,
    pub n_collectives: usize,
    pub n_p2p: usize,
    /// Probability that a collective is issued as non-blocking.
    pub nonblocking_fraction: f64,
    /// Upper bound on extra communicators besides `world`.
    pub max_subgroups: usize,
}

impl GenParams {
    pub fn new(seed: u64, world_size: u32, n_collectives: usize) -> Self {
        GenParams {
            seed,
            world_size,
            n_collectives,
            n_p2p: 0,
            nonblocking_fraction: 0.0,
            max_subgroups: 3,
        }
    }

    pub fn p2p(mut self, n: usize) -> Self {
        self.n_p2p = n;
        self
    }

    pub fn nonblocking(mut self, fraction: f64) -> Self {
        self.nonblocking_fraction = fraction;
        self
    }
}

enum Event {
    Collective,
    P2p,
}

/// Builds a random correct workload.
///
/// Operations are laid out on one global timeline and every rank executes
/// its share in timeline order, so the timeline itself is a valid schedule:
/// collectives cannot form cycles, point-to-point pairs sit at the same
/// instant on both ends and so never cross a collective, and each wait comes
/// after every member's initiation.
pub fn generate_random_workload(params: &GenParams) -> Result<Workload, GenerateError> {
    let n = params.world_size;
    if n == 0 {
        return Err(GenerateError("world_size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&params.nonblocking_fraction) {
        return Err(GenerateError(format!(
            "nonblocking_fraction {} is outside [0, 1]",
            params.nonblocking_fraction
        )));
    }
    if params.n_p2p > 0 && n < 2 {
        return Err(GenerateError("point-to-point traffic needs at least two ranks".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut w = Workload::new(n);
    let all: Vec<Rank> = (0..n).map(Rank).collect();

    let mut comms: Vec<(String, Vec<Rank>)> = vec![(WORLD_COMM.to_string(), all.clone())];
    let n_sub = if params.max_subgroups == 0 {
        0
    } else {
        rng.gen_range(0..=params.max_subgroups)
    };
    for i in 0..n_sub {
        let size = if n >= 2 { rng.gen_range(2..=n) } else { 1 };
        let mut members: Vec<Rank> = all.choose_multiple(&mut rng, size as usize).copied().collect();
        members.sort();
        let name = format!("g{i}");
        for &m in &members {
            w.push(
                m,
                Instruction::CreateComm {
                    name: name.clone(),
                    members: members.clone(),
                },
            );
        }
        comms.push((name, members));
    }

    let mut timeline: Vec<Event> = (0..params.n_collectives)
        .map(|_| Event::Collective)
        .chain((0..params.n_p2p).map(|_| Event::P2p))
        .collect();
    timeline.shuffle(&mut rng);

    let mut outstanding: Vec<Vec<String>> = vec![Vec::new(); n as usize];
    let mut next_req = 0usize;
    for ev in timeline {
        match ev {
            Event::Collective => {
                let (name, members) = &comms[rng.gen_range(0..comms.len())];
                let kind = *CollectiveKind::ALL.choose(&mut rng).expect("non-empty");
                if rng.gen_bool(params.nonblocking_fraction) {
                    let request = format!("r{next_req}");
                    next_req += 1;
                    for &m in members {
                        w.push(
                            m,
                            Instruction::ICollective {
                                kind,
                                comm: name.clone(),
                                request: request.clone(),
                            },
                        );
                        outstanding[m.index()].push(request.clone());
                    }
                } else {
                    for &m in members {
                        w.push(
                            m,
                            Instruction::Collective {
                                kind,
                                comm: name.clone(),
                            },
                        );
                    }
                }
            }
            Event::P2p => {
                let pair: Vec<Rank> = all.choose_multiple(&mut rng, 2).copied().collect();
                let (a, b) = (pair[0], pair[1]);
                let tag = rng.gen_range(0..4);
                w.push(
                    a,
                    Instruction::Send {
                        peer: b,
                        tag,
                        comm: WORLD_COMM.to_string(),
                    },
                );
                w.push(
                    b,
                    Instruction::Recv {
                        peer: a,
                        tag,
                        comm: WORLD_COMM.to_string(),
                    },
                );
            }
        }
        for (r, open) in outstanding.iter_mut().enumerate() {
            let me = Rank(r as u32);
            if !open.is_empty() && rng.gen_bool(0.3) {
                let i = rng.gen_range(0..open.len());
                let request = open.swap_remove(i);
                w.push(me, Instruction::Wait { request });
            }
            if rng.gen_bool(0.15) {
                w.push(me, Instruction::Compute);
            }
        }
    }
    for (r, reqs) in outstanding.into_iter().enumerate() {
        if !reqs.is_empty() {
            w.push(Rank(r as u32), Instruction::WaitAll { requests: reqs });
        }
    }
    Ok(w)
}
