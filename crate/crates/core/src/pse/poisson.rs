use ndarray::Array2;

/// Solves `laplacian(h) = f` with homogeneous Neumann boundaries by a direct
/// cosine-transform diagonalization. Forward-difference gradients paired with
/// backward-difference divergence produce exactly the 5-point stencil this
/// solve inverts, so curl-free inputs round-trip to machine precision.
pub fn solve_poisson_neumann(f: &Array2<f64>) -> Array2<f64> {
    let (h, w) = f.dim();
    let ch = dct_matrix(h);
    let cw = dct_matrix(w);
    // F = C_h f C_w^T
    let mut tmp = Array2::zeros((h, w));
    for i in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for y in 0..h {
                acc += ch[(i, y)] * f[(y, x)];
            }
            tmp[(i, x)] = acc;
        }
    }
    let mut spec = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for x in 0..w {
                acc += tmp[(i, x)] * cw[(j, x)];
            }
            spec[(i, j)] = acc;
        }
    }
    // Divide by the stencil eigenvalues; the DC mode is the free constant.
    for i in 0..h {
        for j in 0..w {
            if i == 0 && j == 0 {
                spec[(0, 0)] = 0.0;
                continue;
            }
            let li = 2.0 * ((std::f64::consts::PI * i as f64 / h as f64).cos() - 1.0);
            let lj = 2.0 * ((std::f64::consts::PI * j as f64 / w as f64).cos() - 1.0);
            spec[(i, j)] /= li + lj;
        }
    }
    // h = C_h^T spec C_w
    for x in 0..w {
        for i in 0..h {
            let mut acc = 0.0;
            for j in 0..w {
                acc += spec[(i, j)] * cw[(j, x)];
            }
            tmp[(i, x)] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..h {
                acc += ch[(i, y)] * tmp[(i, x)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// Orthonormal DCT-II basis, rows indexed by frequency.
fn dct_matrix(n: usize) -> Array2<f64> {
    let mut c = Array2::zeros((n, n));
    for i in 0..n {
        let scale = if i == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for x in 0..n {
            c[(i, x)] =
                scale * (std::f64::consts::PI * i as f64 * (2.0 * x as f64 + 1.0) / (2.0 * n as f64)).cos();
        }
    }
    c
}
