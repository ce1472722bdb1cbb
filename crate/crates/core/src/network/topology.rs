use std::collections::VecDeque;

use nalgebra::DMatrix;

use super::{Branch, NetworkError, NetworkModel};

/// Branch/node incidence matrices.
///
/// `a_s` and `a_r` are branch-by-node with a single unit entry per row at the
/// sending and receiving end. `a_plus` and `a_minus` are their transposes.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    pub a_plus: DMatrix<f64>,
    pub a_minus: DMatrix<f64>,
    pub a_s: DMatrix<f64>,
    pub a_r: DMatrix<f64>,
}

impl Incidence {
    /// Signed branch-by-node matrix `a_s - a_r`.
    pub fn signed(&self) -> DMatrix<f64> {
        &self.a_s - &self.a_r
    }
}

pub fn build_incidence(n_buses: usize, branches: &[Branch]) -> Result<Incidence, NetworkError> {
    let n_branches = branches.len();
    let mut a_s = DMatrix::zeros(n_branches, n_buses);
    let mut a_r = DMatrix::zeros(n_branches, n_buses);
    for (l, br) in branches.iter().enumerate() {
        for bus in [br.from, br.to] {
            if bus >= n_buses {
                return Err(NetworkError::DanglingBranch { branch: br.id, bus });
            }
        }
        a_s[(l, br.from)] = 1.0;
        a_r[(l, br.to)] = 1.0;
    }
    Ok(Incidence {
        a_plus: a_s.transpose(),
        a_minus: a_r.transpose(),
        a_s,
        a_r,
    })
}

/// Connected components as sorted lists of bus indices, ordered by their
/// smallest member.
pub fn connected_components(n_buses: usize, branches: &[Branch]) -> Vec<Vec<usize>> {
    let adj = adjacency(n_buses, branches);
    let mut seen = vec![false; n_buses];
    let mut comps = Vec::new();
    for start in 0..n_buses {
        if seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

fn adjacency(n_buses: usize, branches: &[Branch]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); n_buses];
    for (l, br) in branches.iter().enumerate() {
        if br.from < n_buses && br.to < n_buses {
            adj[br.from].push((br.to, l));
            adj[br.to].push((br.from, l));
        }
    }
    adj
}

/// One fundamental cycle: branch indices with the traversal direction, `+1`
/// when the cycle runs from the sending to the receiving end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cycle {
    pub branches: Vec<(usize, i8)>,
}

impl Cycle {
    /// Signed sum of per-branch quantities around the loop.
    pub fn signed_sum(&self, per_branch: &[f64]) -> f64 {
        self.branches
            .iter()
            .map(|&(l, sign)| f64::from(sign) * per_branch[l])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CycleBasis {
    pub cycles: Vec<Cycle>,
}

impl CycleBasis {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }
}

/// Fundamental cycle basis from a breadth-first spanning tree rooted at bus 0.
/// Each non-tree branch closes exactly one cycle.
pub fn find_cycle_basis(network: &NetworkModel) -> Result<CycleBasis, NetworkError> {
    let n = network.n_buses();
    let branches = &network.branches;
    let comps = connected_components(n, branches);
    if comps.len() > 1 {
        return Err(NetworkError::Disconnected {
            components: comps
                .into_iter()
                .map(|c| c.into_iter().map(|i| network.buses[i].id).collect())
                .collect(),
        });
    }
    if n == 0 {
        return Ok(CycleBasis::default());
    }

    let adj = adjacency(n, branches);
    // parent[v] = (parent bus, branch index)
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    let mut in_tree = vec![false; branches.len()];
    depth[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &(v, l) in &adj[u] {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                parent[v] = Some((u, l));
                in_tree[l] = true;
                queue.push_back(v);
            }
        }
    }

    let step_sign = |l: usize, from_bus: usize| -> i8 {
        if branches[l].from == from_bus {
            1
        } else {
            -1
        }
    };

    let mut cycles = Vec::new();
    for (l, br) in branches.iter().enumerate() {
        if in_tree[l] {
            continue;
        }
        let (u, v) = (br.from, br.to);
        let mut seq = vec![(l, 1i8)];
        // climb from both ends to the lowest common ancestor
        let (mut a, mut b) = (v, u);
        let mut down_path = Vec::new();
        while a != b {
            if depth[a] >= depth[b] {
                let (p, pl) = parent[a].expect("non-root has parent");
                seq.push((pl, step_sign(pl, a)));
                a = p;
            } else {
                let (p, pl) = parent[b].expect("non-root has parent");
                down_path.push((pl, p));
                b = p;
            }
        }
        for &(pl, p) in down_path.iter().rev() {
            seq.push((pl, step_sign(pl, p)));
        }
        cycles.push(Cycle { branches: seq });
    }
    Ok(CycleBasis { cycles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn two_bus_incidence() {
        let net = fixtures::two_bus(0.0, 0.1);
        let inc = net.incidence();
        assert_eq!(inc.a_s.as_slice(), &[1.0, 0.0]);
        assert_eq!(inc.a_r.as_slice(), &[0.0, 1.0]);
        assert_eq!(inc.a_plus, DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        assert_eq!(inc.a_minus, DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn triangle_degree_identity() {
        let net = fixtures::triangle();
        let inc = net.incidence();
        let deg = &inc.a_plus + &inc.a_minus;
        for n in 0..3 {
            assert_eq!(deg.row(n).sum(), 2.0);
        }
    }

    #[test]
    fn incidence_rows_have_one_send_one_receive() {
        for net in [fixtures::six_bus_meshed(), fixtures::triangle(), fixtures::three_bus_congested()] {
            let inc = net.incidence();
            let signed = inc.signed();
            for l in 0..net.n_branches() {
                assert_eq!(inc.a_s.row(l).sum(), 1.0);
                assert_eq!(inc.a_r.row(l).sum(), 1.0);
                let row: Vec<f64> = signed.row(l).iter().copied().collect();
                assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&v| v == -1.0).count(), 1);
            }
            assert_eq!(inc.a_plus, inc.a_s.transpose());
            assert_eq!(inc.a_minus, inc.a_r.transpose());
        }
    }

    #[test]
    fn dangling_endpoint_names_branch() {
        let net = fixtures::two_bus(0.0, 0.1);
        let mut branches = net.branches.clone();
        branches[0].to = 7;
        let err = build_incidence(2, &branches).unwrap_err();
        assert!(matches!(err, NetworkError::DanglingBranch { branch: 1, bus: 7 }));
    }

    #[test]
    fn radial_chain_has_no_cycles() {
        assert!(fixtures::radial_chain(3).cycle_basis().is_empty());
    }

    #[test]
    fn triangle_has_one_cycle_through_all_branches() {
        let basis = fixtures::triangle().cycle_basis();
        assert_eq!(basis.len(), 1);
        let mut ls: Vec<usize> = basis.cycles[0].branches.iter().map(|&(l, _)| l).collect();
        ls.sort_unstable();
        assert_eq!(ls, vec![0, 1, 2]);
    }

    #[test]
    fn basis_size_matches_cyclomatic_number() {
        for net in [fixtures::six_bus_meshed(), fixtures::triangle(), fixtures::radial_chain(5)] {
            let basis = net.cycle_basis();
            assert_eq!(basis.len(), net.n_branches() + 1 - net.n_buses());
        }
    }

    #[test]
    fn cycles_are_closed_walks() {
        // any potential difference sums to zero around a fundamental cycle
        let net = fixtures::six_bus_meshed();
        let potential: Vec<f64> = (0..net.n_buses()).map(|i| (i as f64 * 1.37).sin()).collect();
        let diffs: Vec<f64> = net
            .branches
            .iter()
            .map(|b| potential[b.from] - potential[b.to])
            .collect();
        for c in &net.cycle_basis().cycles {
            assert!(c.signed_sum(&diffs).abs() < 1e-12);
        }
    }
}
