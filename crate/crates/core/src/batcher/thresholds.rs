use crate::error::{Error, Result};
use crate::types::{BalanceParams, Dataset};

/// Picks the vision cap from the dataset's text-per-vision-unit ratio:
/// `q_vision = round(q_text / (sum text / sum vision))`, never below 1.
/// `q_vision_min = q_vision`, `q_text_min = q_text - 128`.
pub fn derive_thresholds(dataset: &Dataset, q_text: u32) -> Result<BalanceParams> {
    if q_text == 0 {
        return Err(Error::invalid("q_text must be positive"));
    }
    let vision = u128::from(dataset.total_vision());
    if vision == 0 {
        return Err(Error::TextOnly);
    }
    let text = u128::from(dataset.total_text());
    // round(q * v / t) with half-up rounding, in integers.
    let q = (2 * u128::from(q_text) * vision + text) / (2 * text);
    let q_vision = u32::try_from(q.max(1))
        .map_err(|_| Error::invalid("derived q_vision does not fit in 32 bits"))?;
    Ok(BalanceParams::new(q_vision, q_text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Sample;

    #[test]
    fn uniform_dataset() {
        let d = Dataset::new(
            (0..10)
                .map(|i| Sample::new(format!("u{i}"), 1, 512).unwrap())
                .collect(),
        )
        .unwrap();
        let p = derive_thresholds(&d, 4096).unwrap();
        assert_eq!(p.q_vision, 8);
        assert_eq!(p.q_vision_min, 8);
        assert_eq!(p.q_text_min, 3968);
    }

    #[test]
    fn ratio_of_455_tokens_per_unit() {
        // 1000 samples carrying 455K text tokens and 1000 vision units in total.
        let d = Dataset::new(
            (0..1000)
                .map(|i| Sample::new(format!("r{i}"), 1, 455).unwrap())
                .collect(),
        )
        .unwrap();
        assert_eq!(derive_thresholds(&d, 4096).unwrap().q_vision, 9);
    }

    #[test]
    fn text_only_dataset_is_rejected() {
        let d = Dataset::new(vec![Sample::new("t", 0, 10).unwrap()]).unwrap();
        assert!(matches!(derive_thresholds(&d, 4096), Err(Error::TextOnly)));
    }
}
