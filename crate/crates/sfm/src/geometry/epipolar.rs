use nalgebra::{DMatrix, Matrix3, Point2, Vector3};

use super::{normalizing_transform, null_vector, skew, apply};

fn eight_point_raw(x1: &[Point2<f64>], x2: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    let n = x1.len();
    if n < 8 || x2.len() != n {
        return None;
    }
    let t1 = normalizing_transform(x1)?;
    let t2 = normalizing_transform(x2)?;
    let mut a = DMatrix::zeros(n, 9);
    for i in 0..n {
        let p = apply(&t1, &x1[i]);
        let q = apply(&t2, &x2[i]);
        a.row_mut(i)
            .copy_from_slice(&[q.x * p.x, q.x * p.y, q.x, q.y * p.x, q.y * p.y, q.y, p.x, p.y, 1.0]);
    }
    let f = Matrix3::from_row_slice(null_vector(&a).as_slice());
    Some(t2.transpose() * f * t1)
}

/// Rank-2 projection with unit Frobenius norm.
pub fn project_to_fundamental(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut s = svd.singular_values;
    let imin = s.imin();
    s[imin] = 0.0;
    unit_norm(u * Matrix3::from_diagonal(&s) * v_t)
}

fn unit_norm(m: Matrix3<f64>) -> Option<Matrix3<f64>> {
    let n = m.norm();
    (n.is_finite() && n > 0.0).then(|| m / n)
}

/// Normalised 8-point estimate of `F` with `x2ᵀ F x1 = 0`, rank 2, unit Frobenius norm.
pub fn estimate_fundamental(x1: &[Point2<f64>], x2: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    project_to_fundamental(&eight_point_raw(x1, x2)?)
}

/// 8-point estimate on normalised image coordinates, projected onto the
/// essential manifold.
pub fn estimate_essential(n1: &[Point2<f64>], n2: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    project_to_essential(&eight_point_raw(n1, n2)?)
}

/// Closest essential matrix: singular values replaced by `(1, 1, 0)`.
pub fn project_to_essential(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut s = Vector3::zeros();
    s[order[0]] = 1.0;
    s[order[1]] = 1.0;
    unit_norm(u * Matrix3::from_diagonal(&s) * v_t)
}

pub fn essential_from_pose(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix3<f64> {
    skew(t) * r
}

/// `F = K2⁻ᵀ E K1⁻¹`.
pub fn fundamental_from_essential(e: &Matrix3<f64>, k1_inv: &Matrix3<f64>, k2_inv: &Matrix3<f64>) -> Matrix3<f64> {
    k2_inv.transpose() * e * k1_inv
}

/// First-order geometric distance to the epipolar constraint, in the units
/// of the point coordinates.
pub fn sampson_distance(f: &Matrix3<f64>, x1: &Point2<f64>, x2: &Point2<f64>) -> f64 {
    let p = Vector3::new(x1.x, x1.y, 1.0);
    let q = Vector3::new(x2.x, x2.y, 1.0);
    let fp = f * p;
    let ftq = f.transpose() * q;
    let num = q.dot(&fp);
    let den = fp.x * fp.x + fp.y * fp.y + ftq.x * ftq.x + ftq.y * ftq.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    num.abs() / den.sqrt()
}

/// The four `(R, t)` factorisations of `E`, `‖t‖ = 1`.
pub fn decompose_essential(e: &Matrix3<f64>) -> Option<[(Matrix3<f64>, Vector3<f64>); 4]> {
    let svd = e.svd(true, true);
    let (mut u, mut v_t) = (svd.u?, svd.v_t?);
    // Sort so the null direction is the third column.
    let s = svd.singular_values;
    let imin = s.imin();
    if imin != 2 {
        u.swap_columns(imin, 2);
        v_t.swap_rows(imin, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    Some([(r1, t), (r1, -t), (r2, t), (r2, -t)])
}
