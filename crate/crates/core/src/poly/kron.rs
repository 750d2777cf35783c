use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `x ⊗ x ⊗ … ⊗ x` (`j` factors), entry `(i1, …, ij)` at `i1·n^(j-1) + … + ij`.
pub fn kron_power<S: Scalar>(x: &[S], j: usize) -> Result<Vec<S>> {
    if j == 0 {
        return Err(Error::ZeroPower);
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("kron_power of an empty vector".into()));
    }
    let mut out = x.to_vec();
    for _ in 1..j {
        let mut next = Vec::with_capacity(out.len() * x.len());
        for &a in &out {
            next.extend(x.iter().map(|&b| a * b));
        }
        out = next;
    }
    Ok(out)
}

/// Decodes a Kronecker column index into its `j` factor indices.
pub fn kron_index(mut col: usize, n: usize, j: usize) -> Vec<usize> {
    let mut idx = vec![0; j];
    for slot in idx.iter_mut().rev() {
        *slot = col % n;
        col /= n;
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_cases() {
        assert_eq!(kron_power(&[1.0, 2.0], 2).unwrap(), vec![1.0, 2.0, 2.0, 4.0]);
        assert_eq!(kron_power(&[3.0], 3).unwrap(), vec![27.0]);
        assert_eq!(kron_power(&[1.0, 0.0], 2).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(kron_power(&[0.5, -1.0], 1).unwrap(), vec![0.5, -1.0]);
    }

    #[test]
    fn zero_power_rejected() {
        assert!(matches!(kron_power(&[1.0f64], 0), Err(Error::ZeroPower)));
    }

    #[test]
    fn index_decoding_matches_layout() {
        let x = [2.0, 3.0, 5.0];
        let k = kron_power(&x, 3).unwrap();
        for (col, v) in k.iter().enumerate() {
            let idx = kron_index(col, 3, 3);
            assert_eq!(*v, idx.iter().map(|&i| x[i]).product::<f64>());
        }
    }

    proptest! {
        #[test]
        fn two_norm_is_multiplicative(x in prop::collection::vec(-3.0f64..3.0, 1..5), j in 1usize..=4) {
            let nx = crate::scalar::norm_2(&x);
            let nk = crate::scalar::norm_2(&kron_power(&x, j).unwrap());
            let expect = nx.powi(j as i32);
            prop_assert!((nk - expect).abs() <= 1e-10 * expect.max(1e-300));
        }
    }
}
