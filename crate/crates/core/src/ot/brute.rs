use super::Matrix;
use crate::error::{Error, Result};

/// `min_sigma (1/n) sum_i C[i][sigma(i)]` by enumerating all permutations
/// (Heap's algorithm). For uniform square problems this is the exact OT cost.
pub fn assignment_bruteforce(cost: &Matrix) -> Result<f64> {
    let n = cost.rows();
    if n != cost.cols() {
        return Err(Error::Config(format!("assignment needs a square matrix, got {n}x{}", cost.cols())));
    }
    if n == 0 {
        return Err(Error::Config("empty cost matrix".into()));
    }
    if n > 8 {
        return Err(Error::TooLarge(format!("brute-force assignment refuses n = {n} > 8")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>();
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures() {
        let zero_diag = Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 + (i * j) as f64 });
        assert_eq!(assignment_bruteforce(&zero_diag).unwrap(), 0.0);
        let c = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(assignment_bruteforce(&c).unwrap(), 0.5);
        let one = Matrix::from_rows(vec![vec![7.25]]).unwrap();
        assert_eq!(assignment_bruteforce(&one).unwrap(), 7.25);
    }

    #[test]
    fn visits_every_permutation() {
        // only the reversal permutation is cheap
        let n = 5;
        let c = Matrix::from_fn(n, n, |i, j| if i + j == n - 1 { 0.0 } else { 1.0 });
        assert_eq!(assignment_bruteforce(&c).unwrap(), 0.0);
    }

    #[test]
    fn refuses_large() {
        assert!(matches!(assignment_bruteforce(&Matrix::zeros(9, 9)), Err(Error::TooLarge(_))));
        assert!(assignment_bruteforce(&Matrix::zeros(2, 3)).is_err());
    }
}
