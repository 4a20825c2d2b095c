//! Op kernels, grouped by family. Forward passes are `impl Tape` methods;
//! each family also exposes the matching `bwd_*` helpers the tape's reverse
//! sweep dispatches to.

pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linear;
pub(crate) mod movement;
pub(crate) mod pool;
pub(crate) mod reduce;
pub(crate) mod sample;

use crate::tensor::strides;

/// NumPy-style broadcast of two shapes. Panics on incompatible extents.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "shape mismatch: cannot broadcast {:?} with {:?}",
            a,
            b
        );
        out[i] = da.max(db);
    }
    out
}

/// Strides for indexing `shape` from coordinates of the broadcast result
/// `out`: broadcast axes get stride 0.
pub(crate) fn bcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    let mut s = vec![0usize; out.len()];
    for i in 0..shape.len() {
        s[offset + i] = if shape[i] == 1 { 0 } else { own[i] };
    }
    s
}

/// Walk every coordinate of `out_shape` once, handing the callback the flat
/// output index plus the flat indices into two broadcast operands. The
/// odometer keeps the operand indices incrementally, so no div/mod per
/// element.
pub(crate) fn zip_bcast2<F: FnMut(usize, usize, usize)>(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: F,
) {
    let n: usize = out_shape.iter().product();
    if n == 0 {
        return;
    }
    let nd = out_shape.len();
    let mut coord = vec![0usize; nd];
    let (mut ai, mut bi) = (0usize, 0usize);
    for oi in 0..n {
        f(oi, ai, bi);
        for d in (0..nd).rev() {
            coord[d] += 1;
            ai += sa[d];
            bi += sb[d];
            if coord[d] < out_shape[d] {
                break;
            }
            coord[d] = 0;
            ai -= sa[d] * out_shape[d];
            bi -= sb[d] * out_shape[d];
        }
    }
}

/// Split a shape at `axis` into (outer, extent, inner) block sizes.
pub(crate) fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "shape mismatch: axis {} out of range for {:?}", axis, shape);
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[2, 3]), vec![2, 3]);
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), vec![2, 3, 4]);
        assert_eq!(broadcast_shape(&[1], &[5, 5]), vec![5, 5]);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn broadcast_rejects_mismatch() {
        broadcast_shape(&[2, 3], &[4, 3]);
    }

    #[test]
    fn zip_visits_broadcast_operands() {
        // a: [2,1], b: [1,3] -> out [2,3]
        let out = vec![2usize, 3];
        let sa = bcast_strides(&[2, 1], &out);
        let sb = bcast_strides(&[1, 3], &out);
        let mut seen = Vec::new();
        zip_bcast2(&out, &sa, &sb, |oi, ai, bi| seen.push((oi, ai, bi)));
        assert_eq!(
            seen,
            vec![(0, 0, 0), (1, 0, 1), (2, 0, 2), (3, 1, 0), (4, 1, 1), (5, 1, 2)]
        );
    }
}
