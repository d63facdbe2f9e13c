//! Frequency encoding `[x, sin(2^k x), cos(2^k x)]` for `k = 0..freqs`.

use crate::scene_io::Vec3;

pub fn encoded_len(freqs: usize) -> usize {
    3 + 6 * freqs
}

/// Encodes a point: the raw coordinates followed, per frequency, by three
/// sines and three cosines.
pub fn encode(x: &Vec3, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(freqs));
    out.extend_from_slice(x.as_slice());
    for k in 0..freqs {
        let f = (1u64 << k) as f64;
        out.extend(x.iter().map(|c| (f * c).sin()));
        out.extend(x.iter().map(|c| (f * c).cos()));
    }
    out
}

/// Writes the encoding into `value` and its partial derivatives with respect
/// to each coordinate into `d_axis[0..3]`.
pub(crate) fn encode_with_jacobian(x: &Vec3, freqs: usize, value: &mut [f64], d_axis: &mut [&mut [f64]; 3]) {
    value[..3].copy_from_slice(x.as_slice());
    for (axis, d) in d_axis.iter_mut().enumerate() {
        d.iter_mut().for_each(|v| *v = 0.0);
        d[axis] = 1.0;
    }
    for k in 0..freqs {
        let f = (1u64 << k) as f64;
        let base = 3 + 6 * k;
        for c in 0..3 {
            let (s, co) = (f * x[c]).sin_cos();
            value[base + c] = s;
            value[base + 3 + c] = co;
            d_axis[c][base + c] = f * co;
            d_axis[c][base + 3 + c] = -f * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_pattern() {
        let e = encode(&Vec3::zeros(), 3);
        assert_eq!(e.len(), 21);
        for k in 0..3 {
            assert_eq!(&e[3 + 6 * k..6 + 6 * k], &[0.0; 3]);
            assert_eq!(&e[6 + 6 * k..9 + 6 * k], &[1.0; 3]);
        }
    }

    #[test]
    fn zero_frequencies_is_identity() {
        let x = Vec3::new(0.3, -2.0, 5.0);
        assert_eq!(encode(&x, 0), vec![0.3, -2.0, 5.0]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let x = Vec3::new(0.3, -0.7, 0.2);
        let n = encoded_len(4);
        let mut v = vec![0.0; n];
        let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        encode_with_jacobian(&x, 4, &mut v, &mut [&mut a, &mut b, &mut c]);
        assert_eq!(v, encode(&x, 4));
        let h = 1e-6;
        for (axis, d) in [a, b, c].iter().enumerate() {
            let mut p = x;
            p[axis] += h;
            let mut m = x;
            m[axis] -= h;
            let (ep, em) = (encode(&p, 4), encode(&m, 4));
            for i in 0..n {
                assert!(((ep[i] - em[i]) / (2.0 * h) - d[i]).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn components_bounded(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0, freqs in 0usize..8) {
            let p = Vec3::new(x, y, z);
            let bound = p.amax().max(1.0);
            prop_assert!(encode(&p, freqs).iter().all(|v| v.abs() <= bound));
        }
    }
}
