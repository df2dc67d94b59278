use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed sinusoidal table: `PE(pos, 2i) = sin(pos / 10000^(2i/d))`,
/// `PE(pos, 2i+1) = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding needs an even, nonzero d_model, got {d_model}"
        )));
    }
    if len == 0 {
        return Err(Error::EmptySequence("positional encoding of length 0".into()));
    }
    let mut data = vec![0.0; len * d_model];
    for pos in 0..len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin();
            data[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::matrix(len, d_model, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_alternates_zero_one() {
        let pe = positional_encoding(3, 6).unwrap();
        for (j, v) in pe.row(0).iter().enumerate() {
            assert_eq!(*v, if j % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn entries_bounded() {
        let pe = positional_encoding(60, 32).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn first_slot_of_position_one() {
        let pe = positional_encoding(2, 4).unwrap();
        assert!((pe.get2(1, 0) - 0.84147).abs() < 1e-5);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(matches!(positional_encoding(4, 5), Err(Error::Config(_))));
    }
}
