use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::grid::Network;

/// Branch outages, each a list of branches named by their `(from, to)` bus
/// ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContingencySet {
    pub outages: Vec<Vec<(usize, usize)>>,
}

impl ContingencySet {
    pub fn count(&self) -> usize {
        self.outages.len()
    }
}

/// Copy of `net` with the listed branches out of service.
pub fn apply_contingency(net: &Network, outage: &[(usize, usize)]) -> Result<Network, EnvError> {
    let mut status: Vec<bool> = net.branches.iter().map(|b| b.status).collect();
    for &(f, t) in outage {
        let pos = net
            .branches
            .iter()
            .enumerate()
            .position(|(l, b)| status[l] && ((b.from, b.to) == (f, t) || (b.from, b.to) == (t, f)))
            .ok_or(EnvError::UnknownBranch { from: f, to: t })?;
        status[pos] = false;
    }
    let out = net.with_branch_status(&status);
    if !is_connected(&out) {
        return Err(EnvError::ContingencySplitsNetwork {
            outage: outage.to_vec(),
        });
    }
    Ok(out)
}

fn is_connected(net: &Network) -> bool {
    let n = net.n_buses();
    let mut adj = vec![Vec::new(); n];
    for b in net.branches.iter().filter(|b| b.status) {
        let (f, t) = (net.bus_idx(b.from).unwrap(), net.bus_idx(b.to).unwrap());
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([net.slack_bus()]);
    seen[net.slack_bus()] = true;
    while let Some(i) = queue.pop_front() {
        for &k in &adj[i] {
            if !seen[k] {
                seen[k] = true;
                queue.push_back(k);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
