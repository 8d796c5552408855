//! Finite-difference weights on arbitrary nodes (Fornberg's recursion).

/// Weights `c[d][i]` approximating the `d`-th derivative at `z` from values at `nodes`,
/// for every `d <= max_d`.
pub fn fornberg(z: f64, nodes: &[f64], max_d: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; max_d + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    for i in 1..n {
        let mn = i.min(max_d);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// One row of a derivative operator: `f^(p)(y_j) ~ sum_i weights[i] * f[start + i]`.
#[derive(Debug, Clone)]
pub struct StencilRow {
    pub start: usize,
    pub weights: Vec<f64>,
}

/// Number of nodes used for a `p`-th derivative: at least `p + 6`, odd so interior rows are centered.
pub fn stencil_len(p: usize) -> usize {
    let n = p + 6;
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

/// Derivative rows of order `p` for every node of `y`. Windows are shifted inward near the
/// ends and widened by two nodes there to offset the loss of symmetry.
pub fn derivative_rows(y: &[f64], p: usize) -> Vec<StencilRow> {
    let ny = y.len();
    let len = stencil_len(p).min(ny);
    let half = len / 2;
    (0..ny)
        .map(|j| {
            let centered = j >= half && j + half < ny;
            let n = if centered { len } else { (len + 2).min(ny) };
            let start = j.saturating_sub(n / 2).min(ny - n);
            let w = fornberg(y[j], &y[start..start + n], p);
            StencilRow {
                start,
                weights: w[p].clone(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_uniform_weights() {
        let nodes = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let c = fornberg(0.0, &nodes, 2);
        let d1 = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        let d2 = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
        for i in 0..5 {
            assert!((c[1][i] - d1[i]).abs() < 1e-14);
            assert!((c[2][i] - d2[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_on_polynomials_nonuniform() {
        let nodes = [0.0, 0.1, 0.25, 0.5, 0.8, 1.2, 1.7];
        let c = fornberg(0.3, &nodes, 3);
        // cubic 1 + 2y - y^2 + 0.5 y^3: third derivative 3
        let f: Vec<f64> = nodes.iter().map(|&y| 1.0 + 2.0 * y - y * y + 0.5 * y * y * y).collect();
        let d3: f64 = c[3].iter().zip(&f).map(|(a, b)| a * b).sum();
        assert!((d3 - 3.0).abs() < 1e-9);
    }
}
