//! Fixed-size vector and matrix helpers on plain arrays.

use crate::scalar::Real;

pub type M3<T> = [[T; 3]; 3];

#[inline]
pub fn add<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn normalize<T: Real>(a: [T; 3]) -> Option<[T; 3]> {
    let n = dot(a, a).sqrt();
    (n > T::epsilon()).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

#[inline]
pub fn mat_vec<T: Real>(m: &M3<T>, v: [T; 3]) -> [T; 3] {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

#[inline]
pub fn mat_t_vec<T: Real>(m: &M3<T>, v: [T; 3]) -> [T; 3] {
    std::array::from_fn(|j| m[0][j] * v[0] + m[1][j] * v[1] + m[2][j] * v[2])
}

#[inline]
pub fn mat_mul<T: Real>(a: &M3<T>, b: &M3<T>) -> M3<T> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j]))
}

#[inline]
pub fn transpose<T: Real>(a: &M3<T>) -> M3<T> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_mat<T: Real>(q: [T; 4]) -> M3<T> {
    let [w, x, y, z] = q;
    let one = T::one();
    let two = T::lit(2.0);
    [
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ]
}

/// Pulls a gradient on the rotation matrix back onto the (unit) quaternion
/// components it was built from.
pub fn quat_to_mat_backward<T: Real>(q: [T; 4], g: &M3<T>) -> [T; 4] {
    let [w, x, y, z] = q;
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let z0 = T::zero();
    let dw = [[z0, -two * z, two * y], [two * z, z0, -two * x], [-two * y, two * x, z0]];
    let dx = [[z0, two * y, two * z], [two * y, -four * x, -two * w], [two * z, two * w, -four * x]];
    let dy = [[-four * y, two * x, two * w], [two * x, z0, two * z], [-two * w, two * z, -four * y]];
    let dz = [[-four * z, -two * w, two * x], [two * w, -four * z, two * y], [two * x, two * y, z0]];
    let contract = |d: &M3<T>| {
        let mut acc = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                acc += d[i][j] * g[i][j];
            }
        }
        acc
    };
    [contract(&dw), contract(&dx), contract(&dy), contract(&dz)]
}
