//! Maximum-cardinality bipartite matching (Hopcroft–Karp).

use std::collections::VecDeque;

const NIL: usize = usize::MAX;

/// Maximum matching in a bipartite graph given as adjacency lists from the
/// left side. Returns `(left, right)` pairs sorted by `left`.
pub fn hopcroft_karp(adj: &[Vec<usize>], n_right: usize) -> Vec<(usize, usize)> {
    let n_left = adj.len();
    let mut pair_l = vec![NIL; n_left];
    let mut pair_r = vec![NIL; n_right];
    let mut dist = vec![0usize; n_left];
    loop {
        // layer the free left vertices and everything reachable by alternating paths
        let mut queue = VecDeque::new();
        for u in 0..n_left {
            if pair_l[u] == NIL {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                let w = pair_r[v];
                if w == NIL {
                    found = true;
                } else if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if !found {
            break;
        }
        for u in 0..n_left {
            if pair_l[u] == NIL {
                augment(u, adj, &mut pair_l, &mut pair_r, &mut dist);
            }
        }
    }
    pair_l.iter().enumerate().filter(|(_, &v)| v != NIL).map(|(u, &v)| (u, v)).collect()
}

fn augment(u: usize, adj: &[Vec<usize>], pair_l: &mut [usize], pair_r: &mut [usize], dist: &mut [usize]) -> bool {
    for &v in &adj[u] {
        let w = pair_r[v];
        let ok = if w == NIL { true } else { dist[w] == dist[u].wrapping_add(1) && augment(w, adj, pair_l, pair_r, dist) };
        if ok {
            pair_l[u] = v;
            pair_r[v] = u;
            return true;
        }
    }
    dist[u] = usize::MAX;
    false
}

/// Maximum one-to-one matching of two sorted-or-not time lists where a pair
/// is allowed when `|r - e| <= tol`. Returns `(ref index, est index)`.
pub fn match_times(reference: &[f64], estimate: &[f64], tol: f64) -> Vec<(usize, usize)> {
    let adj: Vec<Vec<usize>> =
        reference.iter().map(|&r| (0..estimate.len()).filter(|&j| (r - estimate[j]).abs() <= tol).collect()).collect();
    hopcroft_karp(&adj, estimate.len())
}
