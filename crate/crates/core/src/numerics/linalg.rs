use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

/// `c = beta * c + op(a) * op(b)` for row-major `a` (m×k after op) and
/// `b` (k×n after op).
#[allow(clippy::too_many_arguments)]
pub fn matmul_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: Transpose,
    b: &[f64],
    tb: Transpose,
    beta: f64,
    c: &mut [f64],
) -> Result<()> {
    if a.len() != m * k || b.len() != k * n || c.len() != m * n {
        return Err(Error::shape(alloc::format!(
            "gemm buffers do not match {m}x{k} * {k}x{n}"
        )));
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return Ok(());
    }
    let (rsa, csa) = match ta {
        Transpose::No => (k as isize, 1),
        Transpose::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Transpose::No => (n as isize, 1),
        Transpose::Yes => (1, k as isize),
    };
    // SAFETY: the length checks above guarantee every strided access made
    // by the kernel stays inside the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(())
}
