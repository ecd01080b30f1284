//! Non-dominated sorting. All objectives are maximized.

/// Does `a` weakly dominate `b` with strict improvement somewhere?
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strictly_better = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strictly_better = true;
        }
    }
    strictly_better
}

/// Indices of the non-dominated rows.
pub fn pareto_front_indices<T: AsRef<[f64]>>(rows: &[T]) -> Vec<usize> {
    let mut front = Vec::new();
    'outer: for (i, row) in rows.iter().enumerate() {
        for (j, other) in rows.iter().enumerate() {
            if i != j && dominates(other.as_ref(), row.as_ref()) {
                continue 'outer;
            }
        }
        front.push(i);
    }
    front
}

/// Front rank per row: 0 for the Pareto front, 1 for the front after
/// removing rank 0, and so on.
pub fn non_dominated_ranks<T: AsRef<[f64]>>(rows: &[T]) -> Vec<usize> {
    let n = rows.len();
    let mut rank = vec![usize::MAX; n];
    let mut assigned = 0;
    let mut current = 0;
    while assigned < n {
        let mut this_front = Vec::new();
        'outer: for i in 0..n {
            if rank[i] != usize::MAX {
                continue;
            }
            for j in 0..n {
                if j != i && rank[j] == usize::MAX && dominates(rows[j].as_ref(), rows[i].as_ref()) {
                    continue 'outer;
                }
            }
            this_front.push(i);
        }
        for &i in &this_front {
            rank[i] = current;
        }
        assigned += this_front.len();
        current += 1;
    }
    rank
}
