//! Minimum-cost perfect matching on a square cost matrix.

/// Solves the linear assignment problem by the shortest augmenting path
/// method with row and column potentials, `O(n³)`.
///
/// `cost[i][p]` is the price of assigning row `i` to column `p`. Returns
/// `(total, assignment)` where `assignment[i]` is the column given to row
/// `i`.
pub fn solve(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    assert!(cost.iter().all(|row| row.len() == n), "cost matrix must be square");
    // 1-based arrays; index 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0usize;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[i0 - 1][col - 1] - u[i0] - v[col];
                if reduced < min_to[col] {
                    min_to[col] = reduced;
                    way[col] = col0;
                }
                if min_to[col] < delta {
                    delta = min_to[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for col in 1..=n {
        assignment[owner[col] - 1] = col - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &p)| cost[i][p]).sum();
    (total, assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_instance() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let (total, assignment) = solve(&cost);
        assert_eq!(total, 5.0);
        assert_eq!(assignment, vec![1, 0, 2]);
    }

    #[test]
    fn trivial_sizes() {
        assert_eq!(solve(&[]), (0.0, vec![]));
        assert_eq!(solve(&[vec![7.5]]), (7.5, vec![0]));
    }
}
