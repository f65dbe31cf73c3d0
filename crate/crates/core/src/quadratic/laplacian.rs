//! Exact dense linear solve by Gaussian elimination over the rationals.

use crate::rational::Rat;
use num::Zero;

/// Solves `a·x = b` exactly. Returns `None` when the matrix is singular.
pub fn solve_dense(mut a: Vec<Vec<Rat>>, mut b: Vec<Rat>) -> Option<Vec<Rat>> {
    let n = b.len();
    debug_assert!(a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let pivot_row = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let pivot = a[col][col].clone();
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let factor = &a[r][col] / &pivot;
            for c in col..n {
                let sub = &factor * &a[col][c];
                a[r][c] -= sub;
            }
            let sub = &factor * &b[col];
            b[r] -= sub;
        }
    }
    Some((0..n).map(|i| &b[i] / &a[i][i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, rat_int};

    #[test]
    fn solves_small_system() {
        let a = vec![
            vec![rat_int(2), rat_int(1)],
            vec![rat_int(1), rat_int(3)],
        ];
        let b = vec![rat_int(5), rat_int(10)];
        let x = solve_dense(a, b).unwrap();
        assert_eq!(x, vec![rat_int(1), rat_int(3)]);
    }

    #[test]
    fn exact_fractions() {
        let a = vec![
            vec![rat(1, 3), rat_int(1)],
            vec![rat_int(1), rat(1, 2)],
        ];
        let b = vec![rat_int(1), rat_int(1)];
        let x = solve_dense(a, b).unwrap();
        // 13/3·x0 ... verify by substitution instead of hand values
        assert_eq!(&rat(1, 3) * &x[0] + &x[1], rat_int(1));
        assert_eq!(&x[0] + &rat(1, 2) * &x[1], rat_int(1));
    }

    #[test]
    fn detects_singular() {
        let a = vec![
            vec![rat_int(1), rat_int(2)],
            vec![rat_int(2), rat_int(4)],
        ];
        let b = vec![rat_int(1), rat_int(2)];
        assert!(solve_dense(a, b).is_none());
    }
}
