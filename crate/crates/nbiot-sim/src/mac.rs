//! MAC layer: RR / PF grant selection, single-process HARQ with delayed
//! feedback, and the PF throughput averages.

use crate::config::Scheduler;
use crate::phy::{tbs_lookup, PhyAssets};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Dl,
    Ul,
}

/// One scheduling decision. `resource` is the RU (subcarrier) index for
/// uplink grants; downlink always occupies the whole carrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grant {
    pub terminal: usize,
    pub direction: Direction,
    pub mcs: usize,
    pub n_sf: usize,
    pub n_rep: u32,
    pub tbs_bits: u32,
    pub resource: usize,
    pub is_retx: bool,
}

/// HARQ bookkeeping for one terminal/direction (NB-IoT has a single
/// process per direction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HarqSlot {
    Idle,
    /// Block on the air (or feedback in transit); the terminal must not
    /// be granted this direction again until the slot resolves.
    InFlight { grant: Grant, retx_count: u32 },
    /// NACK (or missing NDI) received: retransmit the same block.
    AwaitRetx { grant: Grant, retx_count: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarqOutcome {
    Delivered(u32),
    Retransmit,
    Dropped(u32),
}

/// Resolve delivered feedback for an in-flight block. Success clears the
/// process; failure retransmits until `max_retx` extra attempts are
/// spent, then drops the block.
pub fn harq_on_decode(slot: &mut HarqSlot, success: bool, max_retx: u32) -> HarqOutcome {
    let (grant, retx_count) = match *slot {
        HarqSlot::InFlight { grant, retx_count } => (grant, retx_count),
        _ => panic!("feedback for an inactive HARQ process"),
    };
    if success {
        *slot = HarqSlot::Idle;
        HarqOutcome::Delivered(grant.tbs_bits)
    } else if retx_count < max_retx {
        *slot = HarqSlot::AwaitRetx {
            grant,
            retx_count: retx_count + 1,
        };
        HarqOutcome::Retransmit
    } else {
        *slot = HarqSlot::Idle;
        HarqOutcome::Dropped(grant.tbs_bits)
    }
}

/// A terminal competing for a grant this TTI: eligible (awake), with
/// either a pending retransmission or new data to send.
#[derive(Debug, Clone, Copy)]
pub struct SchedCandidate {
    pub terminal: usize,
    /// Delayed CQI report available to the scheduler (MCS = CQI).
    pub cqi: usize,
    /// Previous grant to repeat, if the HARQ slot demands one.
    pub retx: Option<(Grant, u32)>,
}

/// Per-terminal exponentially averaged throughput for PF.
#[derive(Debug, Clone)]
pub struct PfState {
    pub avg: Vec<f64>,
    pub beta: f64,
    pub eps: f64,
}

impl PfState {
    pub fn new(num_terminals: usize, beta: f64) -> PfState {
        PfState {
            avg: vec![1e-6; num_terminals],
            beta,
            eps: 1e-6,
        }
    }

    /// EWMA step: granted terminals contribute their delivered bits this
    /// TTI, everyone else contributes zero.
    pub fn update(&mut self, delivered_bits: &[(usize, f64)]) {
        for a in &mut self.avg {
            *a *= 1.0 - self.beta;
        }
        for &(t, bits) in delivered_bits {
            self.avg[t] += self.beta * bits;
        }
        for a in &mut self.avg {
            if *a < self.eps {
                *a = self.eps;
            }
        }
    }
}

/// Grant selector for one sector and one direction.
#[derive(Debug, Clone)]
pub struct MacScheduler {
    pub policy: Scheduler,
    pub num_terminals: usize,
    rr_cursor: usize,
}

impl MacScheduler {
    pub fn new(policy: Scheduler, num_terminals: usize) -> MacScheduler {
        MacScheduler {
            policy,
            num_terminals,
            rr_cursor: 0,
        }
    }

    fn rr_rank(&self, terminal: usize) -> usize {
        (terminal + self.num_terminals - self.rr_cursor) % self.num_terminals
    }

    /// Pick at most `max_grants` candidates. Retransmissions preempt new
    /// data; among new data RR rotates from a persistent cursor and PF
    /// maximizes rate over average throughput (lowest id on ties).
    #[allow(clippy::too_many_arguments)]
    pub fn select(
        &mut self,
        candidates: &[SchedCandidate],
        pf: &PfState,
        assets: &PhyAssets,
        direction: Direction,
        n_sf: usize,
        n_rep: u32,
        max_grants: usize,
    ) -> Vec<Grant> {
        let mut order: Vec<&SchedCandidate> = candidates.iter().collect();
        match self.policy {
            Scheduler::RoundRobin => {
                order.sort_by_key(|c| (c.retx.is_none(), self.rr_rank(c.terminal)));
            }
            Scheduler::ProportionalFair => {
                let metric = |c: &SchedCandidate| {
                    let rate =
                        f64::from(tbs_lookup(assets, c.cqi, n_sf).unwrap_or(0)) / n_sf as f64;
                    rate / pf.avg[c.terminal].max(pf.eps)
                };
                order.sort_by(|a, b| {
                    (a.retx.is_none())
                        .cmp(&b.retx.is_none())
                        .then(metric(b).partial_cmp(&metric(a)).unwrap())
                        .then(a.terminal.cmp(&b.terminal))
                });
            }
        }
        let mut grants = Vec::new();
        for c in order.into_iter().take(max_grants) {
            let grant = match c.retx {
                Some((prev, _)) => Grant {
                    is_retx: true,
                    resource: grants.len(),
                    ..prev
                },
                None => Grant {
                    terminal: c.terminal,
                    direction,
                    mcs: c.cqi,
                    n_sf,
                    n_rep,
                    tbs_bits: tbs_lookup(assets, c.cqi, n_sf).unwrap_or(0),
                    resource: grants.len(),
                    is_retx: false,
                },
            };
            grants.push(grant);
        }
        if self.policy == Scheduler::RoundRobin {
            if let Some(last) = grants.last() {
                self.rr_cursor = (last.terminal + 1) % self.num_terminals;
            }
        }
        grants
    }
}
