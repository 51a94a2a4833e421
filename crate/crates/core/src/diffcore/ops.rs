//! Linear algebra and shape operations.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::tensor::{numel, Tensor};
use crate::{Error, Result};

static THREADS: AtomicUsize = AtomicUsize::new(1);

/// Caps the number of worker threads used by matrix products. Each output
/// row is always reduced in the same order, so results do not depend on it.
pub fn set_num_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn num_threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Splits `out` into row blocks of `row_len` and runs `f(first_row, block)`
/// on up to [`num_threads`] scoped threads.
fn for_row_blocks<F>(out: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let rows = if row_len == 0 { 0 } else { out.len() / row_len };
    let threads = num_threads().min(rows.max(1));
    if threads <= 1 || out.len() < 1 << 14 {
        f(0, out);
        return;
    }
    let per = rows.div_ceil(threads);
    std::thread::scope(|scope| {
        for (i, block) in out.chunks_mut(per * row_len).enumerate() {
            let f = &f;
            scope.spawn(move || f(i * per, block));
        }
    });
}

/// `out[r×t] = a[r×s] · b[s×t]`
fn gemm(a: &[f64], b: &[f64], r: usize, s: usize, t: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * t];
    for_row_blocks(&mut out, t, |row0, block| {
        for (di, orow) in block.chunks_mut(t).enumerate() {
            let arow = &a[(row0 + di) * s..(row0 + di + 1) * s];
            for (k, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &b[k * t..(k + 1) * t];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    });
    out
}

/// `out[r×s] = g[r×t] · b[s×t]ᵀ`
fn gemm_nt(g: &[f64], b: &[f64], r: usize, t: usize, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * s];
    for_row_blocks(&mut out, s, |row0, block| {
        for (di, orow) in block.chunks_mut(s).enumerate() {
            let grow = &g[(row0 + di) * t..(row0 + di + 1) * t];
            for (k, o) in orow.iter_mut().enumerate() {
                let brow = &b[k * t..(k + 1) * t];
                *o = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
    });
    out
}

/// `out[s×t] = a[r×s]ᵀ · g[r×t]`
fn gemm_tn(a: &[f64], g: &[f64], r: usize, s: usize, t: usize) -> Vec<f64> {
    let mut out = vec![0.0; s * t];
    for_row_blocks(&mut out, t, |row0, block| {
        let rows = block.len() / t.max(1);
        for i in 0..r {
            let grow = &g[i * t..(i + 1) * t];
            for dk in 0..rows {
                let av = a[i * s + row0 + dk];
                if av == 0.0 {
                    continue;
                }
                for (o, &gv) in block[dk * t..(dk + 1) * t].iter_mut().zip(grow) {
                    *o += av * gv;
                }
            }
        }
    });
    out
}

/// Matrix product of `[r×s]·[s×t]`, or the batched product
/// `[B×r×s]·[B×s×t] → [B×r×t]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, r, s, t, out_shape) = match (a.shape(), b.shape()) {
        (&[r, s], &[s2, t]) if s == s2 => (1, r, s, t, vec![r, t]),
        (&[ba, r, s], &[bb, s2, t]) if ba == bb && s == s2 => (ba, r, s, t, vec![ba, r, t]),
        _ => return Err(Error::shape("matmul", a.shape(), b.shape())),
    };
    let (av, bv) = (a.data_arc(), b.data_arc());
    let mut out = Vec::with_capacity(batch * r * t);
    for i in 0..batch {
        out.extend(gemm(&av[i * r * s..(i + 1) * r * s], &bv[i * s * t..(i + 1) * s * t], r, s, t));
    }
    Ok(Tensor::from_op(
        out_shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, needs| {
            let mut ga = needs[0].then(|| Vec::with_capacity(batch * r * s));
            let mut gb = needs[1].then(|| Vec::with_capacity(batch * s * t));
            for i in 0..batch {
                let gi = &g[i * r * t..(i + 1) * r * t];
                if let Some(ga) = ga.as_mut() {
                    ga.extend(gemm_nt(gi, &bv[i * s * t..(i + 1) * s * t], r, t, s));
                }
                if let Some(gb) = gb.as_mut() {
                    gb.extend(gemm_tn(&av[i * r * s..(i + 1) * r * s], gi, r, s, t));
                }
            }
            vec![ga, gb]
        }),
    ))
}

/// Elementwise sum. `b` may also have a shape equal to a suffix of `a`'s
/// shape, in which case it is broadcast over `a`'s leading axes (the batch
/// axis for a bias vector).
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return Err(Error::shape("add", sa, sb));
    }
    let inner = b.numel();
    let mut out = a.values().to_vec();
    if inner > 0 {
        for row in out.chunks_exact_mut(inner) {
            for (x, y) in row.iter_mut().zip(b.values()) {
                *x += y;
            }
        }
    }
    Ok(Tensor::from_op(
        sa.to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, needs| {
            let gb = needs[1].then(|| {
                let mut acc = vec![0.0; inner];
                for row in g.chunks(inner.max(1)) {
                    for (s, v) in acc.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                acc
            });
            vec![needs[0].then(|| g.to_vec()), gb]
        }),
    ))
}

/// Elementwise product of equal-shape tensors.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mul", a.shape(), b.shape()));
    }
    let (av, bv) = (a.data_arc(), b.data_arc());
    let out = av.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.iter().zip(bv.iter()).map(|(g, y)| g * y).collect()),
                needs[1].then(|| g.iter().zip(av.iter()).map(|(g, x)| g * x).collect()),
            ]
        }),
    ))
}

pub fn scale(x: &Tensor, c: f64) -> Tensor {
    let out = x.values().iter().map(|v| v * c).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(g.iter().map(|v| v * c).collect())]),
    )
}

/// Sum of all elements, as a scalar (shape `[]`).
pub fn sum(x: &Tensor) -> Tensor {
    let n = x.numel();
    Tensor::from_op(
        Vec::new(),
        vec![x.values().iter().sum()],
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
    )
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if numel(shape) != x.numel() {
        return Err(Error::shape("reshape", x.shape(), shape));
    }
    Ok(Tensor::from_op_shared(shape.to_vec(), x.data_arc(), vec![x.clone()], Box::new(|g, _| vec![Some(g.to_vec())])))
}

/// Collapses everything after the first axis: `[B, ...] → [B, rest]`.
pub fn flatten(x: &Tensor) -> Result<Tensor> {
    match x.shape().split_first() {
        Some((&b, rest)) => reshape(x, &[b, numel(rest)]),
        None => Err(Error::shape("flatten", x.shape(), &[])),
    }
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat(xs: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = xs.first().ok_or(Error::EmptyInput("concat"))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::Parameter(format!("concat axis {axis} out of range for rank {rank}")));
    }
    for x in xs {
        let s = x.shape();
        if s.len() != rank || s[..axis] != first.shape()[..axis] || s[axis + 1..] != first.shape()[axis + 1..] {
            return Err(Error::shape("concat", first.shape(), s));
        }
    }
    let outer = numel(&first.shape()[..axis]);
    let chunks: Vec<usize> = xs.iter().map(|x| numel(&x.shape()[axis..])).collect();
    let mut shape = first.shape().to_vec();
    shape[axis] = xs.iter().map(|x| x.shape()[axis]).sum();
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for (x, &c) in xs.iter().zip(&chunks) {
            out.extend_from_slice(&x.values()[o * c..(o + 1) * c]);
        }
    }
    Ok(Tensor::from_op(
        shape,
        out,
        xs.to_vec(),
        Box::new(move |g, needs| {
            let total: usize = chunks.iter().sum();
            let mut grads: Vec<Option<Vec<f64>>> =
                needs.iter().zip(&chunks).map(|(&n, &c)| n.then(|| Vec::with_capacity(outer * c))).collect();
            for o in 0..outer {
                let mut offset = o * total;
                for (gx, &c) in grads.iter_mut().zip(&chunks) {
                    if let Some(gx) = gx {
                        gx.extend_from_slice(&g[offset..offset + c]);
                    }
                    offset += c;
                }
            }
            grads
        }),
    ))
}
