//! Tiny dense solver for the local moment systems.

/// Largest system handled: degree-8 univariate fits or 8-variate local linear.
pub(crate) const MAX_DIM: usize = 9;

pub(crate) type SmallMatrix = [[f64; MAX_DIM]; MAX_DIM];

/// Outcome of a successful solve.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SolveInfo {
    /// Smallest pivot magnitude relative to the largest entry of the input.
    pub min_relative_pivot: f64,
}

/// Solves `m x = rhs` in place by Gaussian elimination with partial
/// pivoting; `rhs` is overwritten with the solution.
///
/// Returns `Err(relative_pivot)` when a pivot falls below `threshold`
/// relative to the largest absolute matrix entry.
pub(crate) fn solve_in_place(
    m: &mut SmallMatrix,
    rhs: &mut [f64; MAX_DIM],
    n: usize,
    threshold: f64,
) -> Result<SolveInfo, f64> {
    debug_assert!(n <= MAX_DIM);
    let mut scale = 0.0_f64;
    for row in m.iter().take(n) {
        for v in row.iter().take(n) {
            scale = scale.max(v.abs());
        }
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(0.0);
    }
    let mut min_rel = f64::INFINITY;
    for col in 0..n {
        let mut piv = col;
        let mut best = m[col][col].abs();
        for r in col + 1..n {
            let a = m[r][col].abs();
            if a > best {
                best = a;
                piv = r;
            }
        }
        let rel = best / scale;
        min_rel = min_rel.min(rel);
        if !(rel >= threshold) {
            return Err(rel);
        }
        if piv != col {
            m.swap(piv, col);
            rhs.swap(piv, col);
        }
        let d = m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / d;
            if f != 0.0 {
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut acc = rhs[col];
        for c in col + 1..n {
            acc -= m[col][c] * rhs[c];
        }
        rhs[col] = acc / m[col][col];
    }
    Ok(SolveInfo {
        min_relative_pivot: min_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        m[0][0] = 2.0;
        m[0][1] = 1.0;
        m[1][0] = 1.0;
        m[1][1] = 3.0;
        let mut rhs = [0.0; MAX_DIM];
        rhs[0] = 3.0;
        rhs[1] = 5.0;
        solve_in_place(&mut m, &mut rhs, 2, 1e-12).unwrap();
        assert!((rhs[0] - 0.8).abs() < 1e-14);
        assert!((rhs[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn rejects_singular() {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        m[0][0] = 1.0;
        m[0][1] = 2.0;
        m[1][0] = 2.0;
        m[1][1] = 4.0;
        let mut rhs = [0.0; MAX_DIM];
        assert!(solve_in_place(&mut m, &mut rhs, 2, 1e-12).is_err());
    }
}
